//! Free-space link and threshold-detector model.

use crate::error::{QkdError, Result};

/// Channel and detector parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSpec {
    /// Attenuation coefficient in dB/km.
    pub alpha_db_per_km: f64,
    pub distance_km: f64,
    /// Fixed transmission of the optics, detector efficiency included.
    pub eta_setup: f64,
    /// Dark-count probability per detector per gate.
    pub p_dc: f64,
}

impl Default for LinkSpec {
    /// Sea-level air (0.4 dB/km), 31 % setup transmission, p_dc = 2.4e-5.
    fn default() -> Self {
        LinkSpec {
            alpha_db_per_km: 0.4,
            distance_km: 0.0,
            eta_setup: 0.31,
            p_dc: 2.4e-5,
        }
    }
}

impl LinkSpec {
    pub fn at_distance(self, distance_km: f64) -> Self {
        LinkSpec {
            distance_km,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(QkdError::InvalidLink(msg));
        if !(self.alpha_db_per_km >= 0.0) || !self.alpha_db_per_km.is_finite() {
            return bad(format!(
                "alpha_db_per_km must be >= 0, got {}",
                self.alpha_db_per_km
            ));
        }
        if !(self.distance_km >= 0.0) || !self.distance_km.is_finite() {
            return bad(format!(
                "distance_km must be >= 0, got {}",
                self.distance_km
            ));
        }
        if !(self.eta_setup > 0.0 && self.eta_setup <= 1.0) {
            return bad(format!(
                "eta_setup must lie in (0, 1], got {}",
                self.eta_setup
            ));
        }
        if !(self.p_dc >= 0.0 && self.p_dc < 1.0) {
            return bad(format!("p_dc must lie in [0, 1), got {}", self.p_dc));
        }
        Ok(())
    }
}

/// Fraction of light surviving the channel: `10^(-alpha L / 10)`.
pub fn channel_transmittance(link: &LinkSpec) -> f64 {
    10f64.powf(-link.alpha_db_per_km * link.distance_km / 10.0)
}

/// Setup transmission times channel transmittance.
pub fn total_efficiency(link: &LinkSpec) -> f64 {
    link.eta_setup * channel_transmittance(link)
}

/// Detection probability of a signal with mean photon number `mu`:
/// `mu * eta_total + p_dc`, capped at 1.
pub fn click_probability(mu: f64, link: &LinkSpec) -> f64 {
    (mu * total_efficiency(link) + link.p_dc).min(1.0)
}
