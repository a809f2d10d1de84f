//! Scenario ground-motion field: a pluggable attenuation relation plus
//! inter-event (shared per earthquake) and intra-event (per site) residuals.
//!
//! The attenuation form is `ln(IM) = c0 + c1*M + c2*ln(R + c3)` with
//! configurable coefficients; the intensity measure is an opaque positive
//! scalar (spectral acceleration in g) whose interpretation belongs to the
//! fragility catalog. Intra-event residuals use substreams keyed by
//! building id, so a field can be evaluated in any order, or in parallel,
//! without changing the result.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::community::CommunityModel;
use crate::math;
use crate::rng::Stream;

/// Attenuation coefficients and residual standard deviations (ln units).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmpeParams {
    pub c0: f64,
    pub c1: f64,
    /// Distance-attenuation slope; negative for physical decay.
    pub c2: f64,
    /// Distance offset, km; keeps the log finite at the epicenter.
    pub c3: f64,
    /// Inter-event (event-to-event) standard deviation of ln(IM).
    pub tau: f64,
    /// Intra-event (site-to-site) standard deviation of ln(IM).
    pub phi: f64,
}

impl Default for GmpeParams {
    /// Illustrative coefficients tuned to give strong shaking (median
    /// Sa around 0.4 g) for a magnitude-6.9 event at 12 km.
    fn default() -> Self {
        GmpeParams {
            c0: -3.4,
            c1: 0.8,
            c2: -1.0,
            c3: 10.0,
            tau: 0.3,
            phi: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum HazardError {
    BadMagnitude(f64),
    BadEpicenter(f64, f64),
    BadGmpe(&'static str, f64),
    EmptyModel,
}

impl fmt::Display for HazardError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HazardError::BadMagnitude(m) => {
                write!(f, "magnitude {m} outside supported range [4.0, 9.0]")
            }
            HazardError::BadEpicenter(x, y) => write!(f, "epicenter ({x}, {y}) must be finite"),
            HazardError::BadGmpe(field, v) => write!(f, "gmpe parameter {field} invalid: {v}"),
            HazardError::EmptyModel => write!(f, "community model has no buildings"),
        }
    }
}

impl core::error::Error for HazardError {}

impl GmpeParams {
    pub fn validate(&self) -> Result<(), HazardError> {
        if !(self.c3 > 0.0) {
            return Err(HazardError::BadGmpe("c3", self.c3));
        }
        if !(self.tau >= 0.0) {
            return Err(HazardError::BadGmpe("tau", self.tau));
        }
        if !(self.phi >= 0.0) {
            return Err(HazardError::BadGmpe("phi", self.phi));
        }
        for (name, v) in [("c0", self.c0), ("c1", self.c1), ("c2", self.c2)] {
            if !v.is_finite() {
                return Err(HazardError::BadGmpe(name, v));
            }
        }
        Ok(())
    }
}

/// One scenario earthquake.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Moment magnitude, in [4.0, 9.0].
    pub magnitude: f64,
    /// (x, y) in community coordinates, km.
    pub epicenter: (f64, f64),
    pub gmpe: GmpeParams,
}

impl Default for ScenarioConfig {
    /// Magnitude 6.9 with the epicenter 12 km from the community origin.
    fn default() -> Self {
        ScenarioConfig {
            magnitude: 6.9,
            epicenter: (-12.0, 0.0),
            gmpe: GmpeParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), HazardError> {
        if !(4.0..=9.0).contains(&self.magnitude) {
            return Err(HazardError::BadMagnitude(self.magnitude));
        }
        if !self.epicenter.0.is_finite() || !self.epicenter.1.is_finite() {
            return Err(HazardError::BadEpicenter(self.epicenter.0, self.epicenter.1));
        }
        self.gmpe.validate()
    }
}

/// Sampled intensity field: one IM per building plus the residuals that
/// produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityField {
    /// Intensity measure per building, g; strictly positive.
    pub im: Vec<f64>,
    /// Inter-event residual shared by the whole event (ln units).
    pub eta: f64,
    /// Intra-event residual per building (ln units).
    pub epsilons: Vec<f64>,
}

/// Median attenuation: `c0 + c1*magnitude + c2*ln(distance + c3)`.
/// Strictly decreasing in distance when `c2 < 0`.
pub fn median_ln_im(params: &GmpeParams, magnitude: f64, distance_km: f64) -> f64 {
    debug_assert!(distance_km >= 0.0);
    params.c0 + params.c1 * magnitude + params.c2 * math::ln(distance_km + params.c3)
}

/// Sample the intensity field for a scenario: one inter-event draw for the
/// whole event, one intra-event draw per building (substream keyed by
/// building id). Deterministic given `(model, scenario, stream)`.
pub fn sample_intensity_field(
    model: &CommunityModel,
    scenario: &ScenarioConfig,
    stream: &Stream,
) -> Result<IntensityField, HazardError> {
    scenario.validate()?;
    if model.buildings.is_empty() {
        return Err(HazardError::EmptyModel);
    }
    let params = &scenario.gmpe;
    let eta = params.tau * stream.derive(0).next_normal();
    let mut im = Vec::with_capacity(model.buildings.len());
    let mut epsilons = Vec::with_capacity(model.buildings.len());
    let eps_root = stream.derive(1);
    for b in &model.buildings {
        let (x, y) = model.location(b.id);
        let dist = math::hypot(x - scenario.epicenter.0, y - scenario.epicenter.1);
        let eps = params.phi * eps_root.derive(b.id.0 as u64).next_normal();
        let ln_im = median_ln_im(params, scenario.magnitude, dist) + eta + eps;
        im.push(math::exp(ln_im));
        epsilons.push(eps);
    }
    Ok(IntensityField { im, eta, epsilons })
}
