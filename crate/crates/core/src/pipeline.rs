//! Session, reconciliation and privacy amplification chained into one run.

use crate::bb84::{
    run_session, run_session_with_choices, OpticsImperfection, SessionConfig, SessionResult,
};
use crate::cascade::{
    cascade, privacy_amplify, ReconciliationConfig, ReconciliationOutcome, SecretKey,
    DEFAULT_SAFETY_MARGIN, DEFAULT_VERIFY_BITS, MIN_KEY_BITS,
};
use crate::channel::LinkSpec;
use crate::error::Result;
use crate::numfmt::format_sig;
use crate::random::{derive_seed, task_rng, BitSource};
use crate::rates::{binary_entropy, tagged_ratio, PhotonStatistics, DEFAULT_F_EC};
use crate::source::SourceSpec;

/// QBER prior used when nothing was disclosed.
pub const FALLBACK_QBER: f64 = 0.03;
const EST_QBER_RANGE: (f64, f64) = (0.005, 0.25);

/// How privacy amplification is charged for error correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LeakageMode {
    /// Bits actually disclosed in the CASCADE transcript.
    Measured,
    /// `ceil(f n H2(E))`, as the closed-form bound assumes.
    Formula { f_ec: f64 },
}

impl Default for LeakageMode {
    fn default() -> Self {
        LeakageMode::Measured
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub session: SessionConfig,
    pub leakage: LeakageMode,
    pub safety_margin: u64,
    pub n_passes: usize,
    pub verify_bits: u8,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            session: SessionConfig::default(),
            leakage: LeakageMode::Measured,
            safety_margin: DEFAULT_SAFETY_MARGIN,
            n_passes: crate::cascade::DEFAULT_PASSES,
            verify_bits: DEFAULT_VERIFY_BITS,
        }
    }
}

impl PipelineConfig {
    pub fn formula_f(&self) -> f64 {
        match self.leakage {
            LeakageMode::Formula { f_ec } => f_ec,
            LeakageMode::Measured => DEFAULT_F_EC,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Abort {
    KeyTooShort { bits: usize },
    ResidualErrors,
    ZeroLengthKey,
}

impl std::fmt::Display for Abort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Abort::KeyTooShort { bits } => {
                write!(f, "sifted key too short for reconciliation ({bits} bits)")
            }
            Abort::ResidualErrors => write!(f, "verification hash mismatch after reconciliation"),
            Abort::ZeroLengthKey => write!(f, "privacy amplification left a zero-length key"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub session: SessionResult,
    pub reconciliation: Option<ReconciliationOutcome>,
    pub secret: Option<SecretKey>,
    /// Error rate corrected by reconciliation.
    pub reconciled_qber: Option<f64>,
    pub delta: f64,
    pub leaked_bits: u64,
    pub abort: Option<Abort>,
}

impl PipelineReport {
    pub fn detected_rate(&self) -> f64 {
        self.session.detected_rate()
    }

    pub fn sifted_rate(&self) -> f64 {
        self.session.sifted_rate()
    }

    /// Errors in the disclosed sample plus errors corrected by
    /// reconciliation, over all sifted bits. Falls back to the sample
    /// estimate when reconciliation did not run.
    pub fn qber(&self) -> Option<f64> {
        let s = &self.session;
        match &self.reconciliation {
            Some(r) if s.sifted_count > 0 => {
                Some((s.disclosed_errors() + r.corrections_made) as f64 / s.sifted_count as f64)
            }
            _ => s.qber_measured,
        }
    }

    pub fn secured_rate(&self) -> f64 {
        self.secret.as_ref().map_or(0.0, |k| k.len() as f64) / self.session.duration_s()
    }

    pub fn summary_lines(&self) -> Vec<String> {
        let s = &self.session;
        let fmt_opt =
            |q: Option<f64>| q.map_or_else(|| "undefined".to_string(), |v| format_sig(v, 6));
        let mut lines = vec![
            format!("pulses = {}", s.n_pulses),
            format!("duration_s = {}", format_sig(s.duration_s(), 6)),
            format!(
                "detected_rate_cps = {}",
                format_sig(self.detected_rate(), 6)
            ),
            format!("sifted_rate_bps = {}", format_sig(self.sifted_rate(), 6)),
            format!("qber_sample = {}", fmt_opt(s.qber_measured)),
            format!("qber_reconciled = {}", fmt_opt(self.reconciled_qber)),
            format!("qber = {}", fmt_opt(self.qber())),
            format!("disclosed_bits = {}", s.disclosed_count),
            format!("key_bits = {}", s.sifted_alice.len()),
            format!("delta = {}", format_sig(self.delta, 6)),
            format!("leaked_bits = {}", self.leaked_bits),
            format!(
                "secret_bits = {}",
                self.secret.as_ref().map_or(0, SecretKey::len)
            ),
            format!("secured_rate_bps = {}", format_sig(self.secured_rate(), 6)),
        ];
        if let Some(a) = &self.abort {
            lines.push(format!("abort = {a}"));
        }
        lines
    }
}

/// Runs one session and distills a key from it. Task seeds: session 0,
/// shuffle 1, hash 2, all derived from `seed`.
pub fn run_pipeline(
    source: &SourceSpec,
    link: &LinkSpec,
    imperfection: &OpticsImperfection,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<PipelineReport> {
    let session = run_session(
        source,
        link,
        imperfection,
        &cfg.session,
        &mut task_rng(seed, 0),
    )?;
    distill(session, source, link, cfg, seed)
}

/// As [`run_pipeline`], with Alice's and Bob's choices read from `choices`.
pub fn run_pipeline_with_choices(
    source: &SourceSpec,
    link: &LinkSpec,
    imperfection: &OpticsImperfection,
    cfg: &PipelineConfig,
    seed: u64,
    choices: &mut dyn BitSource,
) -> Result<PipelineReport> {
    let session = run_session_with_choices(
        source,
        link,
        imperfection,
        &cfg.session,
        choices,
        &mut task_rng(seed, 0),
    )?;
    distill(session, source, link, cfg, seed)
}

fn distill(
    session: SessionResult,
    source: &SourceSpec,
    link: &LinkSpec,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<PipelineReport> {
    let delta = tagged_ratio(source.mu, PhotonStatistics::of(source), link)?;
    let n = session.sifted_alice.len();
    let mut report = PipelineReport {
        session,
        reconciliation: None,
        secret: None,
        reconciled_qber: None,
        delta,
        leaked_bits: 0,
        abort: None,
    };
    if n < MIN_KEY_BITS {
        report.abort = Some(Abort::KeyTooShort { bits: n });
        return Ok(report);
    }

    let est = report
        .session
        .qber_measured
        .unwrap_or(FALLBACK_QBER)
        .clamp(EST_QBER_RANGE.0, EST_QBER_RANGE.1);
    let rc = ReconciliationConfig {
        n_passes: cfg.n_passes,
        verify_bits: cfg.verify_bits,
        ..ReconciliationConfig::new(est, derive_seed(seed, 1))
    };
    let outcome = cascade(
        &report.session.sifted_alice,
        &report.session.sifted_bob,
        &rc,
    )?;
    let qber = outcome.corrections_made as f64 / n as f64;
    report.reconciled_qber = Some(qber);
    report.leaked_bits = match cfg.leakage {
        LeakageMode::Measured => outcome.leaked_bits,
        LeakageMode::Formula { f_ec } => {
            (f_ec * n as f64 * binary_entropy(qber.min(0.5))?).ceil() as u64
        }
    };
    let verified = outcome.verified_equal || cfg.verify_bits == 0;
    let key = outcome.corrected_bob_key.clone();
    report.reconciliation = Some(outcome);
    if !verified {
        report.abort = Some(Abort::ResidualErrors);
        return Ok(report);
    }
    if qber >= 0.5 || qber / (1.0 - delta) >= 1.0 {
        report.abort = Some(Abort::ZeroLengthKey);
        return Ok(report);
    }
    let secret = privacy_amplify(
        &key,
        report.leaked_bits,
        delta,
        qber,
        cfg.safety_margin,
        derive_seed(seed, 2),
    )?;
    if secret.is_zero_length() {
        report.abort = Some(Abort::ZeroLengthKey);
    }
    report.secret = Some(secret);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::misalignment_for_qber;
    use crate::source::Preset;

    fn calibrated(preset: Preset) -> (SourceSpec, LinkSpec, OpticsImperfection) {
        let source = preset.source();
        let link = LinkSpec::default();
        let e = misalignment_for_qber(0.03, source.mu, &link).unwrap();
        (source, link, OpticsImperfection { e_misalign: e })
    }

    #[test]
    fn nv_run_produces_a_key() {
        let (s, l, o) = calibrated(Preset::Nv);
        let r = run_pipeline(&s, &l, &o, &PipelineConfig::default(), 7).unwrap();
        assert!(r.abort.is_none(), "{:?}", r.abort);
        let secured = r.secured_rate();
        assert!(secured > 1500.0 && secured < 3500.0, "{secured}");
        assert!(r.reconciliation.as_ref().unwrap().verified_equal);
        assert_eq!(r.summary_lines().len(), 13);
        assert_eq!(r.qber(), r.session.true_qber());
    }

    #[test]
    fn formula_mode_charges_f_h2() {
        let (s, l, o) = calibrated(Preset::Nv);
        let cfg = PipelineConfig {
            leakage: LeakageMode::Formula { f_ec: 1.22 },
            ..PipelineConfig::default()
        };
        let r = run_pipeline(&s, &l, &o, &cfg, 3).unwrap();
        let n = r.session.sifted_alice.len() as f64;
        let q = r.reconciled_qber.unwrap();
        assert_eq!(
            r.leaked_bits,
            (1.22 * n * binary_entropy(q).unwrap()).ceil() as u64
        );
    }

    #[test]
    fn tiny_run_aborts() {
        let (s, l, o) = calibrated(Preset::Siv);
        let cfg = PipelineConfig {
            session: SessionConfig {
                n_pulses: 500,
                ..SessionConfig::default()
            },
            ..PipelineConfig::default()
        };
        let r = run_pipeline(&s, &l, &o, &cfg, 1).unwrap();
        assert!(matches!(
            r.abort,
            Some(Abort::KeyTooShort { .. }) | Some(Abort::ZeroLengthKey)
        ));
        assert_eq!(r.secured_rate(), 0.0);
    }

    #[test]
    fn entropy_file_drives_choices() {
        let (s, l, o) = calibrated(Preset::Nv);
        let cfg = PipelineConfig {
            session: SessionConfig {
                n_pulses: 2000,
                ..SessionConfig::default()
            },
            ..PipelineConfig::default()
        };
        let bytes: Vec<u8> = (0..750u32)
            .map(|i| (i.wrapping_mul(2654435761) >> 13) as u8)
            .collect();
        let mut bits = crate::random::EntropyFile::from_bytes(bytes.clone());
        let a = run_pipeline_with_choices(&s, &l, &o, &cfg, 4, &mut bits).unwrap();
        let mut bits = crate::random::EntropyFile::from_bytes(bytes[..100].to_vec());
        assert!(matches!(
            run_pipeline_with_choices(&s, &l, &o, &cfg, 4, &mut bits),
            Err(crate::error::QkdError::EntropyExhausted { .. })
        ));
        assert_eq!(a.session.n_pulses, 2000);
    }

    #[test]
    fn deterministic() {
        let (s, l, o) = calibrated(Preset::Nv);
        let cfg = PipelineConfig::default();
        assert_eq!(
            run_pipeline(&s, &l, &o, &cfg, 5).unwrap(),
            run_pipeline(&s, &l, &o, &cfg, 5).unwrap()
        );
    }
}
