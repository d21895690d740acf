//! Per-pulse Monte-Carlo of polarization BB84.
//!
//! Alice's modulator prepares one of four polarizations: H/V in the linear
//! basis or left/right circular in the circular basis. Bob's modulator either
//! leaves the photon alone or applies a quarter-wave retardation, which maps
//! circular onto linear polarization, so a single polarizing beam splitter
//! and two threshold detectors analyze both bases. Detector 0 reads bit 0
//! (H or L), detector 1 reads bit 1 (V or R).

use std::io::{self, Write};

use rand::seq::index;
use rand::{Rng, SeedableRng};

use crate::bits::BitString;
use crate::channel::{total_efficiency, LinkSpec};
use crate::error::{QkdError, Result};
use crate::numfmt::format_sig;
use crate::random::{BitSource, RngBits, SimRng};
use crate::rates::misalignment_for_qber;
use crate::source::{PhotonNumberSampler, SourceSpec};

/// Runs larger than this drop per-pulse records unless asked otherwise.
pub const RECORD_ELISION_THRESHOLD: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Basis {
    Linear,
    Circular,
}

impl Basis {
    fn from_bit(b: bool) -> Self {
        if b {
            Basis::Circular
        } else {
            Basis::Linear
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Basis::Linear => "linear",
            Basis::Circular => "circular",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarization {
    H,
    V,
    /// Left circular.
    L,
    /// Right circular.
    R,
}

impl Polarization {
    pub fn basis(self) -> Basis {
        match self {
            Polarization::H | Polarization::V => Basis::Linear,
            Polarization::L | Polarization::R => Basis::Circular,
        }
    }

    /// The bit value this state encodes in its own basis.
    pub fn bit(self) -> bool {
        matches!(self, Polarization::V | Polarization::R)
    }
}

/// Maps a bit and basis onto the prepared polarization.
pub fn alice_encode(bit: bool, basis: Basis) -> Polarization {
    match (basis, bit) {
        (Basis::Linear, false) => Polarization::H,
        (Basis::Linear, true) => Polarization::V,
        (Basis::Circular, false) => Polarization::L,
        (Basis::Circular, true) => Polarization::R,
    }
}

/// Finite extinction of the polarization optics, lumped into the
/// probability that a matched-basis photon reaches the wrong detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticsImperfection {
    pub e_misalign: f64,
}

impl Default for OpticsImperfection {
    fn default() -> Self {
        OpticsImperfection { e_misalign: 0.03 }
    }
}

impl OpticsImperfection {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.e_misalign) {
            return Err(QkdError::param(
                "e_misalign",
                format!("must lie in [0, 0.5), got {}", self.e_misalign),
            ));
        }
        Ok(())
    }

    /// Misalignment that makes the expected QBER of a `mu` source on `link`
    /// equal `target_qber` once dark counts are included.
    pub fn calibrated(target_qber: f64, mu: f64, link: &LinkSpec) -> Result<Self> {
        Ok(OpticsImperfection {
            e_misalign: misalignment_for_qber(target_qber, mu, link)?,
        })
    }
}

/// Measures `n_photons` of polarization `pol` in `bob_basis`; returns the
/// (detector 0, detector 1) click pattern including dark counts.
pub fn bob_measure<R: Rng + ?Sized>(
    pol: Polarization,
    bob_basis: Basis,
    n_photons: u32,
    imperfection: &OpticsImperfection,
    link: &LinkSpec,
    rng: &mut R,
) -> (bool, bool) {
    let mut clicks = [false, false];
    let matched = pol.basis() == bob_basis;
    for _ in 0..n_photons {
        let det = if matched {
            let wrong = imperfection.e_misalign > 0.0 && rng.random_bool(imperfection.e_misalign);
            pol.bit() ^ wrong
        } else {
            rng.random_bool(0.5)
        };
        clicks[usize::from(det)] = true;
    }
    if link.p_dc > 0.0 {
        clicks[0] |= rng.random_bool(link.p_dc);
        clicks[1] |= rng.random_bool(link.p_dc);
    }
    (clicks[0], clicks[1])
}

/// What to do when both detectors fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DoubleClickPolicy {
    /// Assign a uniformly random bit.
    #[default]
    RandomBit,
    Discard,
}

/// How the QBER is estimated after sifting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QberEstimation {
    /// Publicly compare a random fraction of the sifted bits and drop them.
    Sample { fraction: f64 },
    /// Compare everything without consuming key bits. Test-only oracle.
    Full,
}

impl Default for QberEstimation {
    fn default() -> Self {
        QberEstimation::Sample { fraction: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecordMode {
    /// Keep per-pulse records up to [`RECORD_ELISION_THRESHOLD`] pulses.
    #[default]
    Auto,
    Keep,
    Elide,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionConfig {
    pub n_pulses: u64,
    pub estimation: QberEstimation,
    pub double_click: DoubleClickPolicy,
    pub records: RecordMode,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            n_pulses: 1_000_000,
            estimation: QberEstimation::default(),
            double_click: DoubleClickPolicy::default(),
            records: RecordMode::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pulses == 0 {
            return Err(QkdError::param("n_pulses", "must be >= 1"));
        }
        if let QberEstimation::Sample { fraction } = self.estimation {
            if !(0.0..1.0).contains(&fraction) {
                return Err(QkdError::param(
                    "disclose_fraction",
                    format!("must lie in [0, 1), got {fraction}"),
                ));
            }
        }
        Ok(())
    }
}

/// Trace of one pulse through the link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PulseRecord {
    pub index: u64,
    pub alice_bit: bool,
    pub alice_basis: Basis,
    pub n_photons_emitted: u32,
    pub n_photons_arrived: u32,
    pub bob_basis: Basis,
    pub click0: bool,
    pub click1: bool,
    /// Bob's bit after the click policy; `None` when discarded.
    pub resolved_bit: Option<bool>,
}

/// One sifted position, disclosed or kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SiftedBit {
    pub pulse_index: u64,
    pub basis: Basis,
    pub alice_bit: bool,
    pub bob_bit: bool,
    pub disclosed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionResult {
    pub records: Option<Vec<PulseRecord>>,
    pub sifted: Vec<SiftedBit>,
    /// Alice's key with disclosed bits removed.
    pub sifted_alice: BitString,
    pub sifted_bob: BitString,
    /// `None` when no bits were disclosed.
    pub qber_measured: Option<f64>,
    pub disclosed_count: usize,
    pub detected_count: u64,
    pub double_click_count: u64,
    pub sifted_count: usize,
    pub n_pulses: u64,
    pub rep_rate_hz: f64,
}

impl SessionResult {
    pub fn duration_s(&self) -> f64 {
        self.n_pulses as f64 / self.rep_rate_hz
    }

    pub fn detected_rate(&self) -> f64 {
        self.detected_count as f64 / self.duration_s()
    }

    pub fn sifted_rate(&self) -> f64 {
        self.sifted_count as f64 / self.duration_s()
    }

    pub fn disclosed_errors(&self) -> usize {
        self.sifted
            .iter()
            .filter(|s| s.disclosed && s.alice_bit != s.bob_bit)
            .count()
    }

    /// Error fraction over every sifted bit, disclosed or not.
    pub fn true_qber(&self) -> Option<f64> {
        if self.sifted.is_empty() {
            return None;
        }
        let errors = self
            .sifted
            .iter()
            .filter(|s| s.alice_bit != s.bob_bit)
            .count();
        Some(errors as f64 / self.sifted.len() as f64)
    }

    pub fn summary_line(&self) -> String {
        format!(
            "n_pulses={} detected={} sifted={} disclosed={} qber={} duration_s={}",
            self.n_pulses,
            self.detected_count,
            self.sifted_count,
            self.disclosed_count,
            self.qber_measured
                .map_or_else(|| "undefined".to_string(), |q| format_sig(q, 6)),
            format_sig(self.duration_s(), 6),
        )
    }

    /// One row per sifted bit: `pulse_index,alice_basis,bob_basis,alice_bit,bob_bit,disclosed`,
    /// preceded by a `# summary:` comment.
    pub fn write_sifted_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "# summary: {}", self.summary_line())?;
        writeln!(
            out,
            "pulse_index,alice_basis,bob_basis,alice_bit,bob_bit,disclosed"
        )?;
        for s in &self.sifted {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                s.pulse_index,
                s.basis.name(),
                s.basis.name(),
                u8::from(s.alice_bit),
                u8::from(s.bob_bit),
                u8::from(s.disclosed)
            )?;
        }
        Ok(())
    }
}

/// Simulates `cfg.n_pulses` pulses. Protocol choices come from a stream
/// seeded off `rng`; physics draws from `rng` itself.
pub fn run_session<R: Rng + ?Sized>(
    source: &SourceSpec,
    link: &LinkSpec,
    imperfection: &OpticsImperfection,
    cfg: &SessionConfig,
    rng: &mut R,
) -> Result<SessionResult> {
    let mut choices = RngBits::new(SimRng::seed_from_u64(rng.next_u64()));
    run_session_with_choices(source, link, imperfection, cfg, &mut choices, rng)
}

/// As [`run_session`], with Alice's and Bob's random choices supplied by an
/// external bit source (three bits per pulse).
pub fn run_session_with_choices<R: Rng + ?Sized>(
    source: &SourceSpec,
    link: &LinkSpec,
    imperfection: &OpticsImperfection,
    cfg: &SessionConfig,
    choices: &mut dyn BitSource,
    rng: &mut R,
) -> Result<SessionResult> {
    source.validate()?;
    link.validate()?;
    imperfection.validate()?;
    cfg.validate()?;

    let sampler = PhotonNumberSampler::new(source)?;
    let eta = total_efficiency(link);
    let keep = match cfg.records {
        RecordMode::Keep => true,
        RecordMode::Elide => false,
        RecordMode::Auto => cfg.n_pulses <= RECORD_ELISION_THRESHOLD,
    };
    let mut records = keep.then(|| Vec::with_capacity(cfg.n_pulses as usize));
    let mut sifted = Vec::new();
    let mut detected_count = 0u64;
    let mut double_click_count = 0u64;

    for index in 0..cfg.n_pulses {
        let alice_bit = choices.next_bit()?;
        let alice_basis = Basis::from_bit(choices.next_bit()?);
        let bob_basis = Basis::from_bit(choices.next_bit()?);

        let n_emitted = sampler.sample(rng);
        let n_arrived = (0..n_emitted).filter(|_| rng.random_bool(eta)).count() as u32;
        let pol = alice_encode(alice_bit, alice_basis);
        let (click0, click1) = bob_measure(pol, bob_basis, n_arrived, imperfection, link, rng);

        let resolved_bit = match (click0, click1) {
            (false, false) => None,
            (true, false) => Some(false),
            (false, true) => Some(true),
            (true, true) => {
                double_click_count += 1;
                match cfg.double_click {
                    DoubleClickPolicy::RandomBit => Some(rng.random_bool(0.5)),
                    DoubleClickPolicy::Discard => None,
                }
            }
        };
        if click0 || click1 {
            detected_count += 1;
        }
        if let (Some(bob_bit), true) = (resolved_bit, alice_basis == bob_basis) {
            sifted.push(SiftedBit {
                pulse_index: index,
                basis: alice_basis,
                alice_bit,
                bob_bit,
                disclosed: false,
            });
        }
        if let Some(r) = records.as_mut() {
            r.push(PulseRecord {
                index,
                alice_bit,
                alice_basis,
                n_photons_emitted: n_emitted,
                n_photons_arrived: n_arrived,
                bob_basis,
                click0,
                click1,
                resolved_bit,
            });
        }
    }

    let sifted_count = sifted.len();
    let (qber_measured, disclosed_count) = match cfg.estimation {
        QberEstimation::Full => {
            let errors = sifted.iter().filter(|s| s.alice_bit != s.bob_bit).count();
            let q = (sifted_count > 0).then(|| errors as f64 / sifted_count as f64);
            (q, 0)
        }
        QberEstimation::Sample { fraction } => {
            let k = (fraction * sifted_count as f64).round() as usize;
            let mut errors = 0;
            for i in index::sample(rng, sifted_count, k) {
                let s = &mut sifted[i];
                s.disclosed = true;
                errors += usize::from(s.alice_bit != s.bob_bit);
            }
            let q = (k > 0).then(|| errors as f64 / k as f64);
            (q, k)
        }
    };

    let kept = sifted.iter().filter(|s| !s.disclosed);
    let sifted_alice: BitString = kept.clone().map(|s| s.alice_bit).collect();
    let sifted_bob: BitString = kept.map(|s| s.bob_bit).collect();

    Ok(SessionResult {
        records,
        sifted,
        sifted_alice,
        sifted_bob,
        qber_measured,
        disclosed_count,
        detected_count,
        double_click_count,
        sifted_count,
        n_pulses: cfg.n_pulses,
        rep_rate_hz: source.rep_rate_hz,
    })
}
