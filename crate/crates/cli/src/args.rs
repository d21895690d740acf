use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::Settings;

#[derive(Debug, Parser)]
#[command(
    name = "qkdsim",
    version,
    about = "BB84 with single-photon sources: simulation and analysis"
)]
pub struct Cli {
    /// Flat `section.key = value` config file; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Master seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for output files.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Suppress the summary on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one BB84 session with reconciliation and privacy amplification.
    Session(SessionArgs),
    /// Sweep secure key rates over distance.
    Rates(RatesArgs),
    /// Reconcile two keys with CASCADE.
    Cascade(CascadeArgs),
    /// Simulate an HBT measurement and estimate g2(0) and the lifetime.
    G2(G2Args),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Session(_) => "session",
            Command::Rates(_) => "rates",
            Command::Cascade(_) => "cascade",
            Command::G2(_) => "g2",
        }
    }

    /// Writes every flag that was given into `s`.
    pub fn apply(&self, s: &mut Settings) {
        match self {
            Command::Session(a) => a.apply(s),
            Command::Rates(a) => a.apply(s),
            Command::Cascade(a) => a.apply(s),
            Command::G2(a) => a.apply(s),
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct SourceArgs {
    /// nv, siv, ideal10, ideal95, wcp or decoy.
    #[arg(long)]
    pub preset: Option<String>,
    /// Mean photon number per pulse.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long = "g2-zero")]
    pub g2_zero: Option<f64>,
    #[arg(long = "lifetime-ns")]
    pub lifetime_ns: Option<f64>,
    #[arg(long = "rep-rate")]
    pub rep_rate_hz: Option<f64>,
}

impl SourceArgs {
    fn apply(&self, s: &mut Settings) {
        s.set("source.preset", self.preset.as_ref());
        s.set("source.mu", self.mu);
        s.set("source.g2_zero", self.g2_zero);
        s.set("source.lifetime_ns", self.lifetime_ns);
        s.set("source.rep_rate_hz", self.rep_rate_hz);
    }
}

#[derive(Debug, Args, Default)]
pub struct LinkArgs {
    #[arg(long = "alpha")]
    pub alpha_db_per_km: Option<f64>,
    #[arg(long = "distance")]
    pub distance_km: Option<f64>,
    #[arg(long = "eta-setup")]
    pub eta_setup: Option<f64>,
    /// Dark-count probability per detector per gate.
    #[arg(long = "p-dc")]
    pub p_dc: Option<f64>,
}

impl LinkArgs {
    fn apply(&self, s: &mut Settings) {
        s.set("link.alpha_db_per_km", self.alpha_db_per_km);
        s.set("link.distance_km", self.distance_km);
        s.set("link.eta_setup", self.eta_setup);
        s.set("link.p_dc", self.p_dc);
    }
}

#[derive(Debug, Args)]
pub struct SessionArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub link: LinkArgs,
    /// Number of pulses (accepts `1e6`).
    #[arg(long)]
    pub pulses: Option<String>,
    #[arg(long = "disclose-fraction")]
    pub disclose_fraction: Option<f64>,
    /// random or discard.
    #[arg(long = "double-click")]
    pub double_click: Option<String>,
    /// auto, keep or elide.
    #[arg(long)]
    pub records: Option<String>,
    /// Optical misalignment error; calibrated to the target QBER if unset.
    #[arg(long = "e-misalign")]
    pub e_misalign: Option<f64>,
    #[arg(long = "target-qber")]
    pub target_qber: Option<f64>,
    /// measured or formula.
    #[arg(long)]
    pub leakage: Option<String>,
    #[arg(long = "f-ec")]
    pub f_ec: Option<f64>,
    #[arg(long = "safety-margin")]
    pub safety_margin: Option<u64>,
    #[arg(long)]
    pub passes: Option<usize>,
    #[arg(long = "verify-bits")]
    pub verify_bits: Option<u8>,
    /// Raw random bytes for Alice's and Bob's choices.
    #[arg(long = "entropy-file", value_name = "FILE")]
    pub entropy_file: Option<PathBuf>,
}

impl SessionArgs {
    fn apply(&self, s: &mut Settings) {
        self.source.apply(s);
        self.link.apply(s);
        s.set("session.pulses", self.pulses.as_ref());
        s.set("session.disclose_fraction", self.disclose_fraction);
        s.set("session.double_click", self.double_click.as_ref());
        s.set("session.records", self.records.as_ref());
        s.set(
            "session.entropy_file",
            self.entropy_file.as_ref().map(|p| p.display()),
        );
        s.set("optics.e_misalign", self.e_misalign);
        s.set("optics.target_qber", self.target_qber);
        s.set("privacy.leakage", self.leakage.as_ref());
        s.set("privacy.f_ec", self.f_ec);
        s.set("privacy.safety_margin", self.safety_margin);
        s.set("reconcile.passes", self.passes);
        s.set("reconcile.verify_bits", self.verify_bits);
    }
}

#[derive(Debug, Args)]
pub struct RatesArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub link: LinkArgs,
    #[arg(long)]
    pub wcp: bool,
    #[arg(long)]
    pub decoy: bool,
    #[arg(long)]
    pub ideal10: bool,
    #[arg(long)]
    pub ideal95: bool,
    /// Comma-separated variant list, e.g. `sps,wcp,decoy`.
    #[arg(long)]
    pub variants: Option<String>,
    #[arg(long)]
    pub dmax: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long = "f-ec")]
    pub f_ec: Option<f64>,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long = "e-misalign")]
    pub e_misalign: Option<f64>,
}

impl RatesArgs {
    fn apply(&self, s: &mut Settings) {
        self.source.apply(s);
        self.link.apply(s);
        let flagged: Vec<&str> = [
            (self.wcp, "wcp"),
            (self.decoy, "decoy"),
            (self.ideal10, "ideal10"),
            (self.ideal95, "ideal95"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect();
        if self.variants.is_some() {
            s.set("rates.variants", self.variants.as_ref());
        } else if !flagged.is_empty() {
            s.set("rates.variants", Some(format!("sps,{}", flagged.join(","))));
        }
        s.set("rates.dmax_km", self.dmax);
        s.set("rates.step_km", self.step);
        s.set("rates.f_ec", self.f_ec);
        s.set("rates.q", self.q);
        s.set("optics.e_misalign", self.e_misalign);
    }
}

#[derive(Debug, Args)]
pub struct CascadeArgs {
    /// Alice's key as a text file of 0/1 characters.
    #[arg(long, value_name = "FILE", requires = "bob")]
    pub alice: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "alice")]
    pub bob: Option<PathBuf>,
    /// Length of a synthetic key pair.
    #[arg(long, conflicts_with = "alice")]
    pub n: Option<String>,
    /// Error rate of a synthetic key pair.
    #[arg(long, conflicts_with = "alice")]
    pub qber: Option<f64>,
    /// QBER estimate that sets the first block size.
    #[arg(long = "est-qber")]
    pub est_qber: Option<f64>,
    #[arg(long)]
    pub passes: Option<usize>,
    #[arg(long)]
    pub k1: Option<usize>,
    #[arg(long = "verify-bits")]
    pub verify_bits: Option<u8>,
}

impl CascadeArgs {
    fn apply(&self, s: &mut Settings) {
        s.set("cascade.alice", self.alice.as_ref().map(|p| p.display()));
        s.set("cascade.bob", self.bob.as_ref().map(|p| p.display()));
        s.set("cascade.n", self.n.as_ref());
        s.set("cascade.qber", self.qber);
        s.set("reconcile.est_qber", self.est_qber);
        s.set("reconcile.passes", self.passes);
        s.set("reconcile.k1", self.k1);
        s.set("reconcile.verify_bits", self.verify_bits);
    }
}

#[derive(Debug, Args)]
pub struct G2Args {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Number of pulses; defaults to 10 s of acquisition.
    #[arg(long)]
    pub pulses: Option<String>,
    #[arg(long = "detection-eff")]
    pub detection_eff: Option<f64>,
    /// Target detected count rate; sets the detection efficiency.
    #[arg(long = "count-rate", conflicts_with = "detection_eff")]
    pub count_rate: Option<f64>,
    #[arg(long)]
    pub splitter: Option<f64>,
    #[arg(long = "bin-width")]
    pub bin_width_ns: Option<f64>,
    #[arg(long)]
    pub window: Option<u32>,
    /// Also write the raw tags: csv, bin or none.
    #[arg(long = "tags-out")]
    pub tags_out: Option<String>,
    /// Analyse a recorded tag file (`.bin` or CSV) instead of simulating.
    #[arg(long = "tags-in", value_name = "FILE")]
    pub tags_in: Option<PathBuf>,
}

impl G2Args {
    fn apply(&self, s: &mut Settings) {
        self.source.apply(s);
        s.set("g2.pulses", self.pulses.as_ref());
        s.set("g2.detection_eff", self.detection_eff);
        s.set("g2.count_rate_cps", self.count_rate);
        s.set("g2.splitter_ratio", self.splitter);
        s.set("g2.bin_width_ns", self.bin_width_ns);
        s.set("g2.window_periods", self.window);
        s.set("g2.tags_out", self.tags_out.as_ref());
        s.set("g2.tags_in", self.tags_in.as_ref().map(|p| p.display()));
    }
}
