use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::Rng;

use qkdsim_core::cascade::transcript::Message;
use qkdsim_core::cascade::{cascade, ReconciliationConfig, ReconciliationOutcome};
use qkdsim_core::g2::{
    correlation_histogram, fit_lifetime, g2_at_zero, g2_overlap_corrected, simulate_hbt,
    TimeTagStream, DEFAULT_BIN_WIDTH_NS, DEFAULT_WINDOW_PERIODS,
};
use qkdsim_core::numfmt::format_sig;
use qkdsim_core::pipeline::{run_pipeline, run_pipeline_with_choices};
use qkdsim_core::random::{derive_seed, task_rng, EntropyFile};
use qkdsim_core::rates::{binary_entropy, sweep_distance, RateVariant, VariantKind};
use qkdsim_core::{BitString, Preset, QkdError};

use crate::config::{ConfigError, Settings};
use crate::output::Output;
use crate::setup;

/// A protocol-level failure; maps to exit code 3.
#[derive(Debug)]
pub struct Aborted(pub String);

impl fmt::Display for Aborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "protocol abort: {}", self.0)
    }
}

impl std::error::Error for Aborted {}

/// An unreadable or malformed input file; maps to exit code 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| InputError(format!("cannot read {}: {e}", path.display())).into())
}

fn sig(x: f64) -> String {
    format_sig(x, 6)
}

fn opt_sig(x: Option<f64>) -> String {
    x.map_or_else(|| "undefined".to_string(), sig)
}

pub fn session(s: &Settings, seed: u64, out: &Output) -> Result<()> {
    let preset = setup::preset(s)?;
    let source = setup::source(s)?;
    let link = setup::link(s)?;
    let imp = setup::optics(s, &source, &link)?;
    let cfg = setup::pipeline(s)?;

    let report = match s.raw("session.entropy_file") {
        Some(path) => {
            let mut bits = EntropyFile::from_bytes(read_input(Path::new(path))?);
            run_pipeline_with_choices(&source, &link, &imp, &cfg, seed, &mut bits)?
        }
        None => run_pipeline(&source, &link, &imp, &cfg, seed)?,
    };

    let mut lines = vec![
        "command = session".to_string(),
        format!("seed = {seed}"),
        format!("preset = {}", preset.name()),
        format!("distance_km = {}", sig(link.distance_km)),
        format!("e_misalign = {}", sig(imp.e_misalign)),
    ];
    lines.extend(report.summary_lines());
    out.summary("session_summary.txt", &lines)?;
    out.csv("sifted.csv", |w| {
        report.session.write_sifted_csv(&mut &mut *w)
    })?;
    if let Some(key) = &report.secret {
        out.file("secret_key.txt", |w| {
            let text: String = key.bits.iter().map(|b| if b { '1' } else { '0' }).collect();
            writeln!(w, "{text}")
        })?;
    }
    match report.abort {
        Some(a) => Err(Aborted(a.to_string()).into()),
        None => Ok(()),
    }
}

const RATE_VARIANTS: &[&str] = &["sps", "wcp", "decoy", "ideal10", "ideal95"];

pub fn rates(s: &Settings, _seed: u64, out: &Output) -> Result<()> {
    let preset = setup::preset(s)?;
    let source = setup::source(s)?;
    let link = setup::link(s)?;
    let mut primary = RateVariant::from_source(preset.name(), &source, link)?;
    if let Some(e) = s.get::<f64>("optics.e_misalign")? {
        primary.e_misalign = e;
    }
    primary.f_ec = s.get_or("rates.f_ec", primary.f_ec)?;
    primary.q = s.get_or("rates.q", primary.q)?;
    let d_max = s.get_or("rates.dmax_km", 50.0)?;
    let step = s.get_or("rates.step_km", 0.1)?;

    let list = s.raw("rates.variants").unwrap_or("sps");
    let mut variants: Vec<RateVariant> = Vec::new();
    for name in list.split(',').map(str::trim).filter(|n| !n.is_empty()) {
        let v = match name.to_ascii_lowercase().as_str() {
            "sps" => primary.clone(),
            "wcp" => primary.companion("wcp", VariantKind::AttenuatedLaser),
            "decoy" => primary.companion("decoy", VariantKind::Decoy),
            p @ ("ideal10" | "ideal95") => {
                let spec = p.parse::<Preset>()?.source();
                primary.companion(
                    p,
                    VariantKind::SinglePhoton {
                        mu: spec.mu,
                        g2_zero: spec.g2_zero,
                    },
                )
            }
            _ => {
                return Err(ConfigError::BadValue {
                    key: "rates.variants".into(),
                    value: name.into(),
                    reason: format!("expected one of {}", RATE_VARIANTS.join(", ")),
                }
                .into())
            }
        };
        if !variants.iter().any(|x| x.label == v.label) {
            variants.push(v);
        }
    }
    if variants.is_empty() {
        return Err(ConfigError::Invalid("rates.variants is empty".into()).into());
    }

    let mut curve = sweep_distance(&variants, d_max, step)?;
    curve
        .metadata
        .insert(0, ("preset".into(), preset.name().into()));
    curve
        .metadata
        .push(("e_misalign".into(), sig(primary.e_misalign)));
    curve
        .metadata
        .push(("rep_rate_hz".into(), sig(primary.rep_rate_hz)));
    for v in &variants {
        let cutoff = curve
            .cutoff(&v.label)
            .map_or_else(|| "none".to_string(), sig);
        curve
            .metadata
            .push((format!("cutoff_{}_km", v.label), cutoff));
    }

    let mut lines = vec![
        "command = rates".to_string(),
        format!("preset = {}", preset.name()),
        format!("d_max_km = {}", sig(d_max)),
        format!("step_km = {}", sig(step)),
        format!("points = {}", curve.points.len()),
    ];
    for v in &variants {
        lines.push(format!(
            "rate_0km_{}_bps = {}",
            v.label,
            sig(curve.points[0].rate(curve.labels.iter().position(|l| *l == v.label).unwrap()))
        ));
        lines.push(format!(
            "cutoff_{}_km = {}",
            v.label,
            opt_sig(curve.cutoff(&v.label))
        ));
    }
    for c in &curve.crossovers {
        lines.push(format!(
            "crossover_{}_vs_{}_km = {}",
            c.sps,
            c.laser,
            opt_sig(c.distance_km)
        ));
    }
    out.summary("rates_summary.txt", &lines)?;
    out.csv("rates.csv", |w| curve.write_csv(&mut &mut *w))?;
    Ok(())
}

fn read_key(path: &Path) -> Result<BitString> {
    let bytes = read_input(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| InputError(format!("{} is not text", path.display())))?;
    BitString::parse(&text).ok_or_else(|| {
        InputError(format!(
            "{}: keys must contain only 0, 1 and whitespace",
            path.display()
        ))
        .into()
    })
}

/// Per-pass parity replies and the verification bits, in transcript order.
fn leakage_by_pass(outcome: &ReconciliationOutcome) -> (Vec<u64>, u64) {
    let mut per_pass = vec![0u64; outcome.block_sizes.len()];
    let mut pass = 0usize;
    let mut verify = 0;
    for m in &outcome.transcript.messages {
        match *m {
            Message::ParityRequest { pass: p, .. } => pass = p as usize,
            Message::ParityReply { .. } => {
                if pass >= per_pass.len() {
                    per_pass.resize(pass + 1, 0);
                }
                per_pass[pass] += 1;
            }
            Message::VerifyHash { n_bits, .. } => verify += u64::from(n_bits),
            Message::ShuffleSeed { .. } => {}
        }
    }
    (per_pass, verify)
}

pub fn cascade_cmd(s: &Settings, seed: u64, out: &Output) -> Result<()> {
    let (alice, bob, est_default) = match (s.raw("cascade.alice"), s.raw("cascade.bob")) {
        (Some(a), Some(b)) => (read_key(Path::new(a))?, read_key(Path::new(b))?, 0.03),
        (None, None) => {
            let n = s.count_or("cascade.n", 10_000)? as usize;
            let qber: f64 = s.get_or("cascade.qber", 0.03)?;
            if !(0.0..=0.5).contains(&qber) {
                return Err(ConfigError::Invalid(format!(
                    "cascade.qber must lie in [0, 0.5], got {qber}"
                ))
                .into());
            }
            let mut rng = task_rng(seed, 3);
            let alice = BitString::from_bools((0..n).map(|_| rng.random::<bool>()));
            let bob = BitString::from_bools(alice.iter().map(|b| b ^ rng.random_bool(qber)));
            (alice, bob, qber.clamp(0.005, 0.25))
        }
        _ => {
            return Err(ConfigError::Invalid(
                "cascade.alice and cascade.bob must be given together".into(),
            )
            .into())
        }
    };
    if alice.len() != bob.len() {
        return Err(QkdError::LengthMismatch {
            alice: alice.len(),
            bob: bob.len(),
        }
        .into());
    }
    let d = ReconciliationConfig::new(
        s.get_or("reconcile.est_qber", est_default)?,
        derive_seed(seed, 1),
    );
    let cfg = ReconciliationConfig {
        n_passes: s.get_or("reconcile.passes", d.n_passes)?,
        k1: s.get("reconcile.k1")?,
        verify_bits: s.get_or("reconcile.verify_bits", d.verify_bits)?,
        ..d
    };
    let errors = alice.hamming_distance(&bob);
    let outcome = cascade(&alice, &bob, &cfg)?;
    let residual = alice.hamming_distance(&outcome.corrected_bob_key);
    let n = alice.len();
    let qber = if n == 0 {
        0.0
    } else {
        errors as f64 / n as f64
    };
    let shannon = n as f64 * binary_entropy(qber.min(0.5))?;
    let encoded = outcome.transcript.encode();
    let (per_pass, verify) = leakage_by_pass(&outcome);

    let sizes: Vec<String> = outcome.block_sizes.iter().map(|k| k.to_string()).collect();
    let lines = vec![
        "command = cascade".to_string(),
        format!("seed = {seed}"),
        format!("key_bits = {n}"),
        format!("errors_before = {errors}"),
        format!("qber = {}", sig(qber)),
        format!("est_qber = {}", sig(cfg.est_qber)),
        format!("block_sizes = {}", sizes.join(" ")),
        format!("corrections = {}", outcome.corrections_made),
        format!("residual_errors = {residual}"),
        format!("leaked_bits = {}", outcome.leaked_bits),
        format!(
            "leakage_over_shannon = {}",
            if shannon > 0.0 {
                sig(outcome.leaked_bits as f64 / shannon)
            } else {
                "undefined".into()
            }
        ),
        format!("verified = {}", outcome.verified_equal),
        format!("transcript_messages = {}", outcome.transcript.len()),
        format!("transcript_bytes = {}", encoded.len()),
    ];
    out.summary("cascade_summary.txt", &lines)?;
    out.file("transcript.bin", |w| w.write_all(&encoded))?;
    out.csv("leakage.csv", |w| {
        writeln!(w, "pass,block_size,parity_bits")?;
        for (p, bits) in per_pass.iter().enumerate() {
            let k = outcome.block_sizes.get(p).copied().unwrap_or(0);
            writeln!(w, "{p},{k},{bits}")?;
        }
        writeln!(w, "verify,,{verify}")?;
        writeln!(w, "total,,{}", outcome.leaked_bits)
    })?;
    out.file("bob_corrected.txt", |w| {
        let text: String = outcome
            .corrected_bob_key
            .iter()
            .map(|b| if b { '1' } else { '0' })
            .collect();
        writeln!(w, "{text}")
    })?;
    if cfg.verify_bits > 0 && !outcome.verified_equal {
        return Err(Aborted("verification hash mismatch after reconciliation".into()).into());
    }
    Ok(())
}

/// Acquisition time used when `g2.pulses` is unset.
pub const DEFAULT_G2_SECONDS: f64 = 10.0;

pub fn g2(s: &Settings, seed: u64, out: &Output) -> Result<()> {
    let preset = setup::preset(s)?;
    let source = setup::source(s)?;
    let bin_ns = s.get_or("g2.bin_width_ns", DEFAULT_BIN_WIDTH_NS)?;
    let window = s.get_or("g2.window_periods", DEFAULT_WINDOW_PERIODS)?;
    let splitter = s.get_or("g2.splitter_ratio", 0.5)?;
    let tags_out = setup::tags_format(s)?;

    let (stream, pulses, eff) = match s.raw("g2.tags_in") {
        Some(path) => {
            let path = PathBuf::from(path);
            let bytes = read_input(&path)?;
            let period = source.period_ns();
            let stream = if path.extension().is_some_and(|e| e == "bin") {
                TimeTagStream::read_binary(&bytes, period)
            } else {
                TimeTagStream::read_csv(BufReader::new(bytes.as_slice()), period)
            }
            .with_context(|| format!("cannot parse {}", path.display()))
            .map_err(|e| InputError(format!("{e:#}")))?;
            let pulses = stream.duration_ps / stream.period_ps.max(1);
            (stream, pulses, None)
        }
        None => {
            let default_pulses = (DEFAULT_G2_SECONDS * source.rep_rate_hz).round() as u64;
            let pulses = s.count_or("g2.pulses", default_pulses)?;
            let eff = match s.get::<f64>("g2.count_rate_cps")? {
                Some(rate) => {
                    let full = source.mean_photon_number() * source.rep_rate_hz;
                    if !(rate >= 0.0 && rate <= full) {
                        return Err(ConfigError::Invalid(format!(
                            "g2.count_rate_cps {rate} is above the emitted photon rate {}",
                            sig(full)
                        ))
                        .into());
                    }
                    rate / full
                }
                None => s.get_or("g2.detection_eff", 1.0)?,
            };
            let stream = simulate_hbt(&source, pulses, splitter, eff, &mut task_rng(seed, 4))?;
            (stream, pulses, Some(eff))
        }
    };
    match tags_out {
        Some("csv") => out.csv("tags.csv", |w| stream.write_csv(&mut &mut *w))?,
        Some(_) => out.file("tags.bin", |w| stream.write_binary(&mut &mut *w))?,
        None => {}
    }

    let hist = correlation_histogram(&stream, bin_ns, window).map_err(insufficient)?;
    let g2_raw = g2_at_zero(&hist).map_err(insufficient)?;
    let fit = fit_lifetime(&stream, bin_ns).ok();
    let corrected = fit
        .as_ref()
        .and_then(|f| g2_overlap_corrected(&hist, f.tau_ns).ok());
    let duration_s = stream.duration_ns() * 1e-9;
    let sides: Vec<u64> = hist.side_peaks().map(|(_, a)| a).collect();

    let lines = vec![
        "command = g2".to_string(),
        format!("seed = {seed}"),
        format!("preset = {}", preset.name()),
        format!("rep_rate_hz = {}", sig(source.rep_rate_hz)),
        format!("pulses = {pulses}"),
        format!("duration_s = {}", sig(duration_s)),
        format!("detection_eff = {}", opt_sig(eff)),
        format!("tags = {}", stream.len()),
        format!("count_rate_cps = {}", sig(stream.len() as f64 / duration_s)),
        format!("center_area = {}", hist.center_area()),
        format!(
            "side_area_mean = {}",
            sig(sides.iter().sum::<u64>() as f64 / sides.len() as f64)
        ),
        format!("g2_zero = {}", sig(g2_raw)),
        format!("g2_zero_corrected = {}", opt_sig(corrected)),
        format!("lifetime_ns = {}", opt_sig(fit.as_ref().map(|f| f.tau_ns))),
        format!(
            "lifetime_sigma_ns = {}",
            opt_sig(fit.as_ref().map(|f| f.sigma_tau_ns))
        ),
        format!(
            "lifetime_reliable = {}",
            fit.as_ref().is_some_and(|f| f.reliable)
        ),
    ];
    out.summary("g2_summary.txt", &lines)?;
    out.csv("g2_histogram.csv", |w| hist.write_csv(&mut &mut *w))?;
    Ok(())
}

fn insufficient(e: QkdError) -> anyhow::Error {
    match e {
        QkdError::InsufficientCounts(msg) => Aborted(format!("insufficient counts: {msg}")).into(),
        other => other.into(),
    }
}
