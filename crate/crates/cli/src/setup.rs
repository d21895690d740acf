//! Builds core types from merged settings.

use qkdsim_core::bb84::{
    DoubleClickPolicy, OpticsImperfection, QberEstimation, RecordMode, SessionConfig,
};
use qkdsim_core::pipeline::{LeakageMode, PipelineConfig};
use qkdsim_core::rates::DEFAULT_F_EC;
use qkdsim_core::{LinkSpec, Preset, SourceKind, SourceSpec};

use crate::config::{ConfigError, Settings};

pub const DEFAULT_PRESET: Preset = Preset::Nv;
pub const DEFAULT_TARGET_QBER: f64 = 0.03;

fn bad(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

/// Parses one of a fixed set of lowercase words.
fn choice<'a>(
    s: &Settings,
    key: &str,
    options: &[&'a str],
    default: &'a str,
) -> Result<&'a str, ConfigError> {
    match s.raw(key) {
        None => Ok(default),
        Some(v) => options
            .iter()
            .copied()
            .find(|o| o.eq_ignore_ascii_case(v))
            .ok_or_else(|| bad(key, v, format!("expected one of {}", options.join(", ")))),
    }
}

pub fn preset(s: &Settings) -> Result<Preset, ConfigError> {
    match s.raw("source.preset") {
        None => Ok(DEFAULT_PRESET),
        Some(v) => v.parse().map_err(|_| {
            let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
            bad(
                "source.preset",
                v,
                format!("expected one of {}", names.join(", ")),
            )
        }),
    }
}

/// The preset's source with any explicit `source.*` overrides applied.
pub fn source(s: &Settings) -> Result<SourceSpec, ConfigError> {
    let mut src = preset(s)?.source();
    if let Some(mu) = s.get::<f64>("source.mu")? {
        if src.kind == SourceKind::DecoyPoissonian {
            for level in src.decoy_levels.iter_mut().filter(|l| l.mu == src.mu) {
                level.mu = mu;
            }
        }
        src.mu = mu;
    }
    if let Some(g2) = s.get("source.g2_zero")? {
        src.g2_zero = g2;
    }
    if let Some(t) = s.get("source.lifetime_ns")? {
        src.lifetime_ns = t;
    }
    if let Some(r) = s.get("source.rep_rate_hz")? {
        src.rep_rate_hz = r;
    }
    src.validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(src)
}

pub fn link(s: &Settings) -> Result<LinkSpec, ConfigError> {
    let d = LinkSpec::default();
    let link = LinkSpec {
        alpha_db_per_km: s.get_or("link.alpha_db_per_km", d.alpha_db_per_km)?,
        distance_km: s.get_or("link.distance_km", d.distance_km)?,
        eta_setup: s.get_or("link.eta_setup", d.eta_setup)?,
        p_dc: s.get_or("link.p_dc", d.p_dc)?,
    };
    link.validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(link)
}

/// Explicit `optics.e_misalign`, or the value that makes the closed-form
/// error rate at zero distance equal `optics.target_qber`.
pub fn optics(
    s: &Settings,
    source: &SourceSpec,
    link: &LinkSpec,
) -> Result<OpticsImperfection, ConfigError> {
    let imp = match s.get::<f64>("optics.e_misalign")? {
        Some(e) => OpticsImperfection { e_misalign: e },
        None => {
            let target = s.get_or("optics.target_qber", DEFAULT_TARGET_QBER)?;
            OpticsImperfection::calibrated(target, source.mu, &link.at_distance(0.0)).map_err(
                |e| {
                    ConfigError::Invalid(format!(
                        "cannot calibrate misalignment to QBER {target}: {e}"
                    ))
                },
            )?
        }
    };
    imp.validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(imp)
}

pub fn pipeline(s: &Settings) -> Result<PipelineConfig, ConfigError> {
    let d = PipelineConfig::default();
    let estimation = QberEstimation::Sample {
        fraction: s.get_or("session.disclose_fraction", 0.1)?,
    };
    let double_click = match choice(s, "session.double_click", &["random", "discard"], "random")? {
        "discard" => DoubleClickPolicy::Discard,
        _ => DoubleClickPolicy::RandomBit,
    };
    let records = match choice(s, "session.records", &["auto", "keep", "elide"], "auto")? {
        "keep" => RecordMode::Keep,
        "elide" => RecordMode::Elide,
        _ => RecordMode::Auto,
    };
    let session = SessionConfig {
        n_pulses: s.count_or("session.pulses", d.session.n_pulses)?,
        estimation,
        double_click,
        records,
    };
    session
        .validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let leakage = match choice(s, "privacy.leakage", &["measured", "formula"], "measured")? {
        "formula" => LeakageMode::Formula {
            f_ec: s.get_or("privacy.f_ec", DEFAULT_F_EC)?,
        },
        _ => LeakageMode::Measured,
    };
    Ok(PipelineConfig {
        session,
        leakage,
        safety_margin: s.get_or("privacy.safety_margin", d.safety_margin)?,
        n_passes: s.get_or("reconcile.passes", d.n_passes)?,
        verify_bits: s.get_or("reconcile.verify_bits", d.verify_bits)?,
    })
}

pub fn tags_format(s: &Settings) -> Result<Option<&'static str>, ConfigError> {
    Ok(
        match choice(s, "g2.tags_out", &["none", "csv", "bin"], "none")? {
            "none" => None,
            other => Some(other),
        },
    )
}
