//! Closed-form secure-key-rate analysis.
//!
//! The secure rate per pulse follows the GLLP bound
//!
//! ```text
//! R >= q { -Q f H2(E) + Q (1 - Δ) (1 - H2(E / (1 - Δ))) }
//! ```
//!
//! where `Q = mu eta_total + p_dc` is the click probability, `E` the error
//! rate of detected signals, and `Δ = p_multi / Q` the fraction of detections
//! that may originate from multiphoton ("tagged") pulses. Rates are reported
//! in bits per second by multiplying with the repetition rate; negative
//! bounds clamp to zero.

use std::io::{self, Write};

use crate::channel::{click_probability, total_efficiency, LinkSpec};
use crate::error::{QkdError, Result};
use crate::numfmt::format_sig;
use crate::source::{poisson_multiphoton, Preset, SourceKind, SourceSpec};

/// Error-correction efficiency that reproduces the measured secure rates.
pub const DEFAULT_F_EC: f64 = 1.22;
/// Sifting efficiency of BB84 with uniformly random bases.
pub const DEFAULT_Q: f64 = 0.5;
/// QBER observed on the testbed for both defect-centre sources.
pub const TESTBED_QBER: f64 = 0.03;

/// Binary Shannon entropy in bits.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(QkdError::param(
            "x",
            format!("binary entropy needs 0 <= x <= 1, got {x}"),
        ));
    }
    Ok(h2(x))
}

#[inline]
fn h2(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
    }
}

/// Error rate of detected signals: misaligned signal clicks plus dark
/// counts, which are wrong half the time.
pub fn error_rate_model(mu: f64, link: &LinkSpec, e_misalign: f64) -> Result<f64> {
    let p_click = click_probability(mu, link);
    if !(p_click > 0.0) {
        return Err(QkdError::param(
            "mu",
            "click probability is zero; error rate undefined",
        ));
    }
    let signal = mu * total_efficiency(link);
    Ok(((e_misalign * signal + 0.5 * link.p_dc) / p_click).clamp(0.0, 0.5))
}

/// Inverts [`error_rate_model`]: the misalignment that yields `target_qber`
/// for a source of mean photon number `mu` on `link`.
pub fn misalignment_for_qber(target_qber: f64, mu: f64, link: &LinkSpec) -> Result<f64> {
    let signal = mu * total_efficiency(link);
    if !(signal > 0.0) {
        return Err(QkdError::param("mu", "no signal to calibrate against"));
    }
    let e = (target_qber * (signal + link.p_dc) - 0.5 * link.p_dc) / signal;
    if !(0.0..0.5).contains(&e) {
        return Err(QkdError::param(
            "target_qber",
            format!("QBER {target_qber} is not reachable with dark-count floor (misalignment {e})"),
        ));
    }
    Ok(e)
}

/// How a source's multiphoton probability is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhotonStatistics {
    /// Bounded by `mu² g²(0) / 2`.
    SubPoissonian {
        g2_zero: f64,
    },
    Poissonian,
}

impl PhotonStatistics {
    pub fn multiphoton(self, mu: f64) -> f64 {
        match self {
            PhotonStatistics::SubPoissonian { g2_zero } => mu * mu * g2_zero / 2.0,
            PhotonStatistics::Poissonian => poisson_multiphoton(mu),
        }
    }

    pub fn of(source: &SourceSpec) -> Self {
        match source.kind {
            SourceKind::SubPoissonian => PhotonStatistics::SubPoissonian {
                g2_zero: source.g2_zero,
            },
            _ => PhotonStatistics::Poissonian,
        }
    }
}

/// Fraction of detections that may be tagged, clamped to `[0, 1]`.
pub fn tagged_ratio(mu: f64, stats: PhotonStatistics, link: &LinkSpec) -> Result<f64> {
    let p_click = click_probability(mu, link);
    if !(p_click > 0.0) {
        return Err(QkdError::param(
            "mu",
            "click probability is zero; tagged ratio undefined",
        ));
    }
    Ok((stats.multiphoton(mu) / p_click).clamp(0.0, 1.0))
}

/// Inputs to [`gllp_rate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateInputs {
    pub mu: f64,
    pub stats: PhotonStatistics,
    pub link: LinkSpec,
    pub e_misalign: f64,
    pub f_ec: f64,
    pub q: f64,
    pub rep_rate_hz: f64,
}

impl RateInputs {
    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(QkdError::param(
                "mu",
                format!("must be >= 0, got {}", self.mu),
            ));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(QkdError::param(
                "q",
                format!("must lie in (0, 1], got {}", self.q),
            ));
        }
        if !(self.f_ec >= 1.0) {
            return Err(QkdError::param(
                "f_ec",
                format!("must be >= 1, got {}", self.f_ec),
            ));
        }
        if !(0.0..0.5).contains(&self.e_misalign) {
            return Err(QkdError::param(
                "e_misalign",
                format!("must lie in [0, 0.5), got {}", self.e_misalign),
            ));
        }
        if !(self.rep_rate_hz > 0.0) {
            return Err(QkdError::param("rep_rate_hz", "must be > 0"));
        }
        Ok(())
    }
}

/// Intermediate quantities of one rate evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBreakdown {
    pub q_mu: f64,
    pub e_mu: f64,
    pub delta: f64,
    pub bits_per_pulse: f64,
    pub bits_per_s: f64,
}

/// Per-pulse secure fraction from the bound, clamped at zero.
pub fn secure_fraction(q_mu: f64, e_mu: f64, delta: f64, f_ec: f64, q: f64) -> f64 {
    if delta >= 1.0 {
        return 0.0;
    }
    let untagged_error = e_mu / (1.0 - delta);
    if untagged_error >= 0.5 {
        return 0.0;
    }
    let bound = q * (-q_mu * f_ec * h2(e_mu) + q_mu * (1.0 - delta) * (1.0 - h2(untagged_error)));
    bound.max(0.0)
}

pub fn gllp_breakdown(inputs: &RateInputs) -> Result<RateBreakdown> {
    inputs.validate()?;
    let q_mu = click_probability(inputs.mu, &inputs.link);
    if q_mu == 0.0 {
        return Ok(RateBreakdown {
            q_mu,
            e_mu: 0.5,
            delta: 0.0,
            bits_per_pulse: 0.0,
            bits_per_s: 0.0,
        });
    }
    let e_mu = error_rate_model(inputs.mu, &inputs.link, inputs.e_misalign)?;
    let delta = tagged_ratio(inputs.mu, inputs.stats, &inputs.link)?;
    let bits_per_pulse = secure_fraction(q_mu, e_mu, delta, inputs.f_ec, inputs.q);
    Ok(RateBreakdown {
        q_mu,
        e_mu,
        delta,
        bits_per_pulse,
        bits_per_s: bits_per_pulse * inputs.rep_rate_hz,
    })
}

/// Secure key rate in bits per second.
pub fn gllp_rate(inputs: &RateInputs) -> Result<f64> {
    Ok(gllp_breakdown(inputs)?.bits_per_s)
}

/// Attenuated laser at `mu = eta_total`, without decoy states.
pub fn wcp_rate(
    link: &LinkSpec,
    e_misalign: f64,
    f_ec: f64,
    q: f64,
    rep_rate_hz: f64,
) -> Result<f64> {
    Ok(wcp_breakdown(link, e_misalign, f_ec, q, rep_rate_hz)?.bits_per_s)
}

pub fn wcp_breakdown(
    link: &LinkSpec,
    e_misalign: f64,
    f_ec: f64,
    q: f64,
    rep_rate_hz: f64,
) -> Result<RateBreakdown> {
    gllp_breakdown(&RateInputs {
        mu: total_efficiency(link),
        stats: PhotonStatistics::Poissonian,
        link: *link,
        e_misalign,
        f_ec,
        q,
        rep_rate_hz,
    })
}

/// Decoy-state rate at a fixed signal intensity, assuming the decoy
/// statistics pin the single-photon yield `Y1 = eta + p_dc` and error
/// `e1 = (e eta + p_dc / 2) / Y1` exactly (infinite-decoy limit):
///
/// `R = q { -Q f H2(E) + Q1 (1 - H2(e1)) }`, `Q1 = mu e^{-mu} Y1`.
pub fn decoy_breakdown_at(
    mu: f64,
    link: &LinkSpec,
    e_misalign: f64,
    f_ec: f64,
    q: f64,
    rep_rate_hz: f64,
) -> Result<RateBreakdown> {
    RateInputs {
        mu,
        stats: PhotonStatistics::Poissonian,
        link: *link,
        e_misalign,
        f_ec,
        q,
        rep_rate_hz,
    }
    .validate()?;
    let eta = total_efficiency(link);
    let q_mu = click_probability(mu, link);
    let e_mu = error_rate_model(mu, link, e_misalign)?;
    let y1 = (eta + link.p_dc).min(1.0);
    let e1 = ((e_misalign * eta + 0.5 * link.p_dc) / y1).min(0.5);
    let q1 = mu * (-mu).exp() * y1;
    let bits_per_pulse = (q * (-q_mu * f_ec * h2(e_mu) + q1 * (1.0 - h2(e1)))).max(0.0);
    Ok(RateBreakdown {
        q_mu,
        e_mu,
        delta: 1.0 - q1 / q_mu,
        bits_per_pulse,
        bits_per_s: bits_per_pulse * rep_rate_hz,
    })
}

/// Signal intensities scanned by [`decoy_rate`].
pub const DECOY_MU_GRID: usize = 1000;

/// Optimal decoy-state operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoyOptimum {
    pub mu: f64,
    pub breakdown: RateBreakdown,
}

/// Decoy-state rate with the signal intensity optimized over a grid on (0, 1].
pub fn decoy_optimum(
    link: &LinkSpec,
    e_misalign: f64,
    f_ec: f64,
    q: f64,
    rep_rate_hz: f64,
) -> Result<DecoyOptimum> {
    let mut best: Option<DecoyOptimum> = None;
    for i in 1..=DECOY_MU_GRID {
        let mu = i as f64 / DECOY_MU_GRID as f64;
        let breakdown = decoy_breakdown_at(mu, link, e_misalign, f_ec, q, rep_rate_hz)?;
        if best.is_none_or(|b| breakdown.bits_per_s > b.breakdown.bits_per_s) {
            best = Some(DecoyOptimum { mu, breakdown });
        }
    }
    Ok(best.expect("grid is non-empty"))
}

pub fn decoy_rate(
    link: &LinkSpec,
    e_misalign: f64,
    f_ec: f64,
    q: f64,
    rep_rate_hz: f64,
) -> Result<f64> {
    Ok(decoy_optimum(link, e_misalign, f_ec, q, rep_rate_hz)?
        .breakdown
        .bits_per_s)
}

/// Source efficiency beyond which attenuating the source extends the
/// reachable distance: `sqrt(2 p_dc / g2)`. `None` when `g2_zero == 0`
/// (no attenuation is ever needed).
pub fn critical_efficiency(g2_zero: f64, p_dc: f64) -> Result<Option<f64>> {
    if !(g2_zero >= 0.0) || !(p_dc >= 0.0) {
        return Err(QkdError::param("g2_zero", "g2_zero and p_dc must be >= 0"));
    }
    if g2_zero == 0.0 {
        return Ok(None);
    }
    Ok(Some((2.0 * p_dc / g2_zero).sqrt()))
}

/// Which rate formula a sweep variant uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VariantKind {
    SinglePhoton { mu: f64, g2_zero: f64 },
    AttenuatedLaser,
    Decoy,
}

/// One curve of a distance sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RateVariant {
    pub label: String,
    pub kind: VariantKind,
    /// Distance is overwritten at every sweep point.
    pub link: LinkSpec,
    pub e_misalign: f64,
    pub f_ec: f64,
    pub q: f64,
    pub rep_rate_hz: f64,
}

impl RateVariant {
    /// Variant for a named preset. Single-photon presets get a misalignment
    /// calibrated to the testbed QBER at zero distance.
    pub fn from_preset(preset: Preset, link: LinkSpec) -> Result<Self> {
        Self::from_source(preset.name(), &preset.source(), link)
    }

    /// Variant for an explicit source, calibrated like [`Self::from_preset`].
    pub fn from_source(label: &str, source: &SourceSpec, link: LinkSpec) -> Result<Self> {
        source.validate()?;
        let kind = match source.kind {
            SourceKind::SubPoissonian => VariantKind::SinglePhoton {
                mu: source.mu,
                g2_zero: source.g2_zero,
            },
            SourceKind::Poissonian => VariantKind::AttenuatedLaser,
            SourceKind::DecoyPoissonian => VariantKind::Decoy,
        };
        let mu_ref = match kind {
            VariantKind::SinglePhoton { mu, .. } => mu,
            _ => total_efficiency(&link.at_distance(0.0)),
        };
        Ok(RateVariant {
            label: label.to_string(),
            kind,
            link,
            e_misalign: misalignment_for_qber(TESTBED_QBER, mu_ref, &link.at_distance(0.0))?,
            f_ec: DEFAULT_F_EC,
            q: DEFAULT_Q,
            rep_rate_hz: source.rep_rate_hz,
        })
    }

    /// A comparison curve of a different kind sharing this variant's link,
    /// optics and repetition rate.
    pub fn companion(&self, label: &str, kind: VariantKind) -> Self {
        RateVariant {
            label: label.to_string(),
            kind,
            ..self.clone()
        }
    }

    pub fn breakdown_at(&self, distance_km: f64) -> Result<RateBreakdown> {
        let link = self.link.at_distance(distance_km);
        match self.kind {
            VariantKind::SinglePhoton { mu, g2_zero } => gllp_breakdown(&RateInputs {
                mu,
                stats: PhotonStatistics::SubPoissonian { g2_zero },
                link,
                e_misalign: self.e_misalign,
                f_ec: self.f_ec,
                q: self.q,
                rep_rate_hz: self.rep_rate_hz,
            }),
            VariantKind::AttenuatedLaser => {
                wcp_breakdown(&link, self.e_misalign, self.f_ec, self.q, self.rep_rate_hz)
            }
            VariantKind::Decoy => {
                Ok(
                    decoy_optimum(&link, self.e_misalign, self.f_ec, self.q, self.rep_rate_hz)?
                        .breakdown,
                )
            }
        }
    }

    pub fn rate_at(&self, distance_km: f64) -> Result<f64> {
        Ok(self.breakdown_at(distance_km)?.bits_per_s)
    }
}

/// Rates of every variant at one distance.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePoint {
    pub distance_km: f64,
    pub variants: Vec<RateBreakdown>,
}

impl RatePoint {
    pub fn rate(&self, variant: usize) -> f64 {
        self.variants[variant].bits_per_s
    }
}

/// First distance at which a single-photon curve meets or beats a laser curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossover {
    pub sps: String,
    pub laser: String,
    pub distance_km: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateCurve {
    pub labels: Vec<String>,
    pub points: Vec<RatePoint>,
    pub crossovers: Vec<Crossover>,
    /// Extra `key=value` metadata written to the CSV preamble.
    pub metadata: Vec<(String, String)>,
}

impl RateCurve {
    pub fn column(&self, label: &str) -> Option<Vec<f64>> {
        let idx = self.labels.iter().position(|l| l == label)?;
        Some(self.points.iter().map(|p| p.rate(idx)).collect())
    }

    pub fn distances(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.distance_km).collect()
    }

    pub fn crossover(&self, sps: &str, laser: &str) -> Option<f64> {
        self.crossovers
            .iter()
            .find(|c| c.sps == sps && c.laser == laser)
            .and_then(|c| c.distance_km)
    }

    /// Last distance with a positive rate for `label`.
    pub fn cutoff(&self, label: &str) -> Option<f64> {
        let col = self.column(label)?;
        self.points
            .iter()
            .zip(col)
            .filter(|(_, r)| *r > 0.0)
            .map(|(p, _)| p.distance_km)
            .last()
    }

    /// Writes the curve as CSV: `# key=value` preamble, header
    /// `distance_km,<label>_bits_per_s,...`, values to 6 significant digits.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        for (k, v) in &self.metadata {
            writeln!(out, "# {k}={v}")?;
        }
        for c in &self.crossovers {
            let d = c
                .distance_km
                .map_or_else(|| "none".to_string(), |d| format_sig(d, 6));
            writeln!(out, "# crossover_{}_vs_{}_km={}", c.sps, c.laser, d)?;
        }
        write!(out, "distance_km")?;
        for label in &self.labels {
            write!(out, ",{label}_bits_per_s")?;
        }
        writeln!(out)?;
        for p in &self.points {
            write!(out, "{}", format_sig(p.distance_km, 6))?;
            for v in &p.variants {
                write!(out, ",{}", format_sig(v.bits_per_s, 6))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Evaluates every variant on the grid `0, step, 2 step, ... <= d_max`.
///
/// Crossovers are recorded for every (single-photon, attenuated-laser) pair.
pub fn sweep_distance(variants: &[RateVariant], d_max: f64, step: f64) -> Result<RateCurve> {
    if !(d_max > 0.0) || !d_max.is_finite() {
        return Err(QkdError::param(
            "d_max",
            format!("must be > 0, got {d_max}"),
        ));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(QkdError::param("step", format!("must be > 0, got {step}")));
    }
    let n = (d_max / step + 1e-9).floor() as usize;
    let mut points = Vec::with_capacity(n + 1);
    for i in 0..=n {
        // Grid points are computed, not accumulated, and rounded to kill
        // binary noise like 0.30000000000000004.
        let distance_km = ((i as f64 * step) * 1e9).round() / 1e9;
        let variants = variants
            .iter()
            .map(|v| v.breakdown_at(distance_km))
            .collect::<Result<Vec<_>>>()?;
        points.push(RatePoint {
            distance_km,
            variants,
        });
    }

    let mut crossovers = Vec::new();
    for (si, sps) in variants.iter().enumerate() {
        if !matches!(sps.kind, VariantKind::SinglePhoton { .. }) {
            continue;
        }
        for (li, laser) in variants.iter().enumerate() {
            if matches!(laser.kind, VariantKind::SinglePhoton { .. }) {
                continue;
            }
            let distance_km = points
                .iter()
                .find(|p| p.rate(si) > 0.0 && p.rate(si) >= p.rate(li))
                .map(|p| p.distance_km);
            crossovers.push(Crossover {
                sps: sps.label.clone(),
                laser: laser.label.clone(),
                distance_km,
            });
        }
    }

    Ok(RateCurve {
        labels: variants.iter().map(|v| v.label.clone()).collect(),
        points,
        crossovers,
        metadata: vec![
            ("d_max_km".into(), format_sig(d_max, 6)),
            ("step_km".into(), format_sig(step, 6)),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn link(d: f64) -> LinkSpec {
        LinkSpec::default().at_distance(d)
    }

    fn nv_inputs() -> RateInputs {
        let e = misalignment_for_qber(TESTBED_QBER, 0.029, &link(0.0)).unwrap();
        RateInputs {
            mu: 0.029,
            stats: PhotonStatistics::SubPoissonian { g2_zero: 0.09 },
            link: link(0.0),
            e_misalign: e,
            f_ec: DEFAULT_F_EC,
            q: DEFAULT_Q,
            rep_rate_hz: 1e6,
        }
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(binary_entropy(0.03).unwrap(), 0.194392, epsilon = 1e-6);
        assert!(binary_entropy(1.1).is_err());
        assert!(binary_entropy(-0.01).is_err());
    }

    #[test]
    fn error_rate_examples() {
        // misalignment 0.03 plus dark counts: (0.03*0.00899 + 1.2e-5) / 0.009014
        let e = error_rate_model(0.029, &link(0.0), 0.03).unwrap();
        assert_abs_diff_eq!(e, 0.0312514, epsilon = 1e-6);
        assert_eq!(error_rate_model(0.0, &link(40.0), 0.03).unwrap(), 0.5);
        let clean = LinkSpec {
            p_dc: 0.0,
            ..link(0.0)
        };
        assert_eq!(error_rate_model(0.1, &clean, 0.0).unwrap(), 0.0);
        let dark = LinkSpec {
            p_dc: 0.0,
            ..link(0.0)
        };
        assert!(error_rate_model(0.0, &dark, 0.0).is_err());
    }

    #[test]
    fn calibration_inverts_error_model() {
        for mu in [0.029, 0.012, 0.1, 0.95] {
            let e = misalignment_for_qber(0.03, mu, &link(0.0)).unwrap();
            assert_abs_diff_eq!(
                error_rate_model(mu, &link(0.0), e).unwrap(),
                0.03,
                epsilon = 1e-15
            );
        }
        assert_abs_diff_eq!(
            misalignment_for_qber(0.03, 0.029, &link(0.0)).unwrap(),
            0.0287453,
            epsilon = 1e-7
        );
        assert!(misalignment_for_qber(0.001, 1e-4, &link(0.0)).is_err());
    }

    #[test]
    fn tagged_ratio_examples() {
        let nv = PhotonStatistics::SubPoissonian { g2_zero: 0.09 };
        assert_abs_diff_eq!(
            tagged_ratio(0.029, nv, &link(0.0)).unwrap(),
            4.1985e-3,
            epsilon = 1e-7
        );
        let clean = PhotonStatistics::SubPoissonian { g2_zero: 0.0 };
        assert_eq!(tagged_ratio(0.029, clean, &link(0.0)).unwrap(), 0.0);
        let d = tagged_ratio(0.31, PhotonStatistics::Poissonian, &link(0.0)).unwrap();
        assert_abs_diff_eq!(
            PhotonStatistics::Poissonian.multiphoton(0.31),
            0.039184,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            click_probability(0.31, &link(0.0)),
            0.096124,
            epsilon = 1e-9
        );
        // 0.039184 / 0.096124
        assert_abs_diff_eq!(d, 0.407645, epsilon = 1e-6);
    }

    #[test]
    fn gllp_testbed_anchors() {
        let nv = gllp_rate(&nv_inputs()).unwrap();
        assert_abs_diff_eq!(nv, 2543.9, epsilon = 0.1);
        let e = misalignment_for_qber(TESTBED_QBER, 0.012, &link(0.0)).unwrap();
        let siv = gllp_rate(&RateInputs {
            mu: 0.012,
            stats: PhotonStatistics::SubPoissonian { g2_zero: 0.04 },
            e_misalign: e,
            ..nv_inputs()
        })
        .unwrap();
        assert_abs_diff_eq!(siv, 1062.8, epsilon = 0.1);
    }

    #[test]
    fn fully_random_errors_give_zero() {
        assert_eq!(secure_fraction(0.01, 0.5, 0.0, 1.22, 0.5), 0.0);
        assert_eq!(secure_fraction(0.01, 0.03, 1.0, 1.22, 0.5), 0.0);
    }

    #[test]
    fn wcp_examples() {
        let r = wcp_rate(&link(0.0), 0.03, 1.22, 0.5, 1e6).unwrap();
        assert_abs_diff_eq!(r, 8781.6, epsilon = 0.1);
        assert_eq!(wcp_rate(&link(60.0), 0.03, 1.22, 0.5, 1e6).unwrap(), 0.0);
    }

    #[test]
    fn decoy_dominates_wcp_and_outlasts_it() {
        let mut last_wcp_positive = 0.0;
        for i in 0..=60 {
            let d = i as f64 * 0.5;
            let w = wcp_rate(&link(d), 0.03, 1.22, 0.5, 1e6).unwrap();
            let dr = decoy_rate(&link(d), 0.03, 1.22, 0.5, 1e6).unwrap();
            assert!(dr >= w, "d={d}: decoy {dr} < wcp {w}");
            if w > 0.0 {
                last_wcp_positive = d;
            }
        }
        let beyond = last_wcp_positive + 5.0;
        assert!(decoy_rate(&link(beyond), 0.03, 1.22, 0.5, 1e6).unwrap() > 0.0);
    }

    #[test]
    fn decoy_noiseless_optimum_at_unit_intensity() {
        let clean = LinkSpec {
            p_dc: 0.0,
            ..link(5.0)
        };
        let opt = decoy_optimum(&clean, 0.0, 1.22, 0.5, 1.0).unwrap();
        assert_eq!(opt.mu, 1.0);
        let eta = total_efficiency(&clean);
        assert_abs_diff_eq!(
            opt.breakdown.bits_per_pulse,
            0.5 * (-1f64).exp() * eta,
            epsilon = 1e-15
        );
    }

    #[test]
    fn critical_efficiency_examples() {
        let siv = critical_efficiency(0.04, 2.4e-5).unwrap().unwrap();
        assert_abs_diff_eq!(siv, 0.034641, epsilon = 1e-6);
        let nv = critical_efficiency(0.09, 2.4e-5).unwrap().unwrap();
        assert_abs_diff_eq!(nv, 0.023094, epsilon = 1e-6);
        assert_eq!(critical_efficiency(0.09, 0.0).unwrap(), Some(0.0));
        assert_eq!(critical_efficiency(0.0, 2.4e-5).unwrap(), None);
    }

    fn cutoff_at(variant: &RateVariant, mu: f64, g2_zero: f64) -> f64 {
        let v = RateVariant {
            label: "att".into(),
            kind: VariantKind::SinglePhoton { mu, g2_zero },
            ..variant.clone()
        };
        sweep_distance(&[v], 80.0, 0.05)
            .unwrap()
            .cutoff("att")
            .unwrap_or(0.0)
    }

    #[test]
    fn attenuating_bright_source_extends_reach() {
        let variant = RateVariant::from_preset(Preset::Nv, LinkSpec::default()).unwrap();
        let native = cutoff_at(&variant, 0.1, 0.09);
        let best = (1..10)
            .map(|k| cutoff_at(&variant, 0.1 * k as f64 / 10.0, 0.09))
            .fold(0.0, f64::max);
        assert!(best > native + 1.0, "{best} vs {native}");
    }

    #[test]
    fn nv_brightness_is_below_the_reach_optimum() {
        let variant = RateVariant::from_preset(Preset::Nv, LinkSpec::default()).unwrap();
        let native = cutoff_at(&variant, 0.029, 0.09);
        for k in 1..20 {
            let a = k as f64 / 20.0;
            assert!(cutoff_at(&variant, 0.029 * a, 0.09) <= native, "a={a}");
        }
        assert!(cutoff_at(&variant, 0.045, 0.09) > native);
    }

    #[test]
    fn sweep_validation_and_grid() {
        let v = RateVariant::from_preset(Preset::Nv, LinkSpec::default()).unwrap();
        assert!(sweep_distance(std::slice::from_ref(&v), 10.0, 0.0).is_err());
        assert!(sweep_distance(std::slice::from_ref(&v), 0.0, 0.1).is_err());
        let c = sweep_distance(&[v], 1.0, 0.1).unwrap();
        let d = c.distances();
        assert_eq!(d.len(), 11);
        assert_eq!(d[3], 0.3);
        assert!(d.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn csv_layout() {
        let nv = RateVariant::from_preset(Preset::Nv, LinkSpec::default()).unwrap();
        let wcp = nv.companion("wcp", VariantKind::AttenuatedLaser);
        let curve = sweep_distance(&[nv, wcp], 0.2, 0.1).unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# d_max_km=0.2");
        assert_eq!(lines[2], "# crossover_nv_vs_wcp_km=none");
        assert_eq!(lines[3], "distance_km,nv_bits_per_s,wcp_bits_per_s");
        assert!(lines[4].starts_with("0,2543.92,"), "{}", lines[4]);
        assert_eq!(lines.len(), 7);
    }

    proptest! {
        #[test]
        fn rate_nonincreasing_in_error(q_mu in 1e-5f64..0.5, e in 0.0f64..0.25, de in 0.0f64..0.05,
                                      delta in 0.0f64..0.3, f in 1.0f64..1.5) {
            let e2 = (e + de).min(0.25);
            prop_assert!(secure_fraction(q_mu, e2, delta, f, 0.5) <= secure_fraction(q_mu, e, delta, f, 0.5) + 1e-18);
        }

        #[test]
        fn untagged_unit_efficiency_identity(q_mu in 1e-5f64..0.5, e in 0.0f64..0.11) {
            let expected = (0.5 * q_mu * (1.0 - 2.0 * h2(e))).max(0.0);
            prop_assert!((secure_fraction(q_mu, e, 0.0, 1.0, 0.5) - expected).abs() < 1e-15);
        }

        #[test]
        fn critical_efficiency_identity(g2 in 1e-4f64..1.0, p_dc in 0.0f64..1e-3) {
            let mu_c = critical_efficiency(g2, p_dc).unwrap().unwrap();
            let pm = PhotonStatistics::SubPoissonian { g2_zero: g2 }.multiphoton(mu_c);
            prop_assert!((pm - p_dc).abs() <= 1e-15 + 1e-12 * p_dc);
        }

        #[test]
        fn entropy_symmetric(x in 0.0f64..=1.0) {
            prop_assert!((binary_entropy(x).unwrap() - binary_entropy(1.0 - x).unwrap()).abs() < 1e-12);
        }
    }
}
