//! Hanbury-Brown-Twiss simulation and second-order correlation analysis
//! under pulsed excitation.
//!
//! Time tags are kept in integer picoseconds. The binary tag format is a
//! bare sequence of 9-byte records:
//!
//! ```text
//! time_ps: u64 LE | detector: u8 (0 or 1)
//! ```
//!
//! The CSV format has a `time_ns,detector` header and times printed with
//! picosecond resolution.

use std::io::{self, BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp, Geometric};

use crate::error::{QkdError, Result};
use crate::source::{PhotonNumberSampler, SourceSpec};

pub const DEFAULT_BIN_WIDTH_NS: f64 = 1.0;
pub const DEFAULT_WINDOW_PERIODS: u32 = 5;
/// Side peaks required for a normalization.
pub const MIN_SIDE_PEAKS: usize = 4;
/// Counts required in the decay region for a lifetime fit.
pub const MIN_DECAY_COUNTS: u64 = 100;

fn ns_to_ps(ns: f64) -> u64 {
    (ns * 1000.0).round() as u64
}

/// Detector clicks sorted by time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeTagStream {
    pub times_ps: Vec<u64>,
    pub detectors: Vec<u8>,
    pub duration_ps: u64,
    pub period_ps: u64,
}

impl TimeTagStream {
    pub fn len(&self) -> usize {
        self.times_ps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_ps.is_empty()
    }

    pub fn period_ns(&self) -> f64 {
        self.period_ps as f64 / 1000.0
    }

    pub fn duration_ns(&self) -> f64 {
        self.duration_ps as f64 / 1000.0
    }

    pub fn count(&self, detector: u8) -> usize {
        self.detectors.iter().filter(|&&d| d == detector).count()
    }

    /// Tag times of one detector, in order.
    pub fn detector_times(&self, detector: u8) -> Vec<u64> {
        self.times_ps
            .iter()
            .zip(&self.detectors)
            .filter(|(_, &d)| d == detector)
            .map(|(&t, _)| t)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "time_ns,detector")?;
        for (&t, &d) in self.times_ps.iter().zip(&self.detectors) {
            writeln!(out, "{}.{:03},{}", t / 1000, t % 1000, d)?;
        }
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let mut rec = [0u8; 9];
        for (&t, &d) in self.times_ps.iter().zip(&self.detectors) {
            rec[..8].copy_from_slice(&t.to_le_bytes());
            rec[8] = d;
            out.write_all(&rec)?;
        }
        Ok(())
    }

    /// Builds a stream from unsorted tags; the duration is rounded up to a
    /// whole number of periods past the last tag.
    pub fn from_tags(mut tags: Vec<(u64, u8)>, period_ps: u64) -> Result<Self> {
        if period_ps == 0 {
            return Err(QkdError::param("period", "must be > 0"));
        }
        if let Some(&(_, d)) = tags.iter().find(|(_, d)| *d > 1) {
            return Err(QkdError::param(
                "detector",
                format!("must be 0 or 1, got {d}"),
            ));
        }
        tags.sort_unstable();
        let duration_ps = tags
            .last()
            .map_or(0, |&(t, _)| (t / period_ps + 1) * period_ps);
        Ok(TimeTagStream {
            times_ps: tags.iter().map(|&(t, _)| t).collect(),
            detectors: tags.iter().map(|&(_, d)| d).collect(),
            duration_ps,
            period_ps,
        })
    }

    pub fn read_csv<R: BufRead>(input: R, period_ns: f64) -> Result<Self> {
        let mut tags = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("time_ns") {
                continue;
            }
            let bad = || {
                QkdError::param(
                    "tags",
                    format!("line {}: expected `time_ns,detector`", lineno + 1),
                )
            };
            let (t, d) = line.split_once(',').ok_or_else(bad)?;
            let t: f64 = t.trim().parse().map_err(|_| bad())?;
            let d: u8 = d.trim().parse().map_err(|_| bad())?;
            if !(t >= 0.0) {
                return Err(bad());
            }
            tags.push((ns_to_ps(t), d));
        }
        Self::from_tags(tags, ns_to_ps(period_ns))
    }

    pub fn read_binary(bytes: &[u8], period_ns: f64) -> Result<Self> {
        if bytes.len() % 9 != 0 {
            return Err(QkdError::param(
                "tags",
                format!(
                    "binary tag file length {} is not a multiple of 9",
                    bytes.len()
                ),
            ));
        }
        let tags = bytes
            .chunks_exact(9)
            .map(|c| (u64::from_le_bytes(c[..8].try_into().unwrap()), c[8]))
            .collect();
        Self::from_tags(tags, ns_to_ps(period_ns))
    }
}

/// Simulates an HBT measurement: each pulse emits a photon number drawn
/// from `source`, each photon is delayed by an exponential emission time,
/// sent to detector 0 with probability `splitter_ratio` and detected with
/// probability `detection_eff`. Empty pulses are skipped geometrically.
pub fn simulate_hbt<R: Rng + ?Sized>(
    source: &SourceSpec,
    n_pulses: u64,
    splitter_ratio: f64,
    detection_eff: f64,
    rng: &mut R,
) -> Result<TimeTagStream> {
    source.validate()?;
    if n_pulses == 0 {
        return Err(QkdError::param("n_pulses", "must be >= 1"));
    }
    if !(0.0..=1.0).contains(&splitter_ratio) {
        return Err(QkdError::param(
            "splitter_ratio",
            format!("must lie in [0, 1], got {splitter_ratio}"),
        ));
    }
    if !(0.0..=1.0).contains(&detection_eff) {
        return Err(QkdError::param(
            "detection_eff",
            format!("must lie in [0, 1], got {detection_eff}"),
        ));
    }
    if !(source.lifetime_ns > 0.0) {
        return Err(QkdError::InvalidSource(format!(
            "lifetime_ns must be > 0, got {}",
            source.lifetime_ns
        )));
    }
    let period_ps = ns_to_ps(source.period_ns());
    if period_ps == 0 {
        return Err(QkdError::InvalidSource(
            "repetition period below 1 ps".into(),
        ));
    }
    let duration_ps = n_pulses
        .checked_mul(period_ps)
        .ok_or_else(|| QkdError::param("n_pulses", "run length overflows the picosecond clock"))?;

    let sampler = PhotonNumberSampler::new(source)?;
    let p_emit = 1.0 - sampler.p_zero();
    let mut tags: Vec<(u64, u8)> = Vec::new();
    if p_emit > 0.0 && detection_eff > 0.0 {
        let skip = Geometric::new(p_emit).map_err(|e| QkdError::param("source", e.to_string()))?;
        let delay = Exp::new(1.0 / source.lifetime_ns)
            .map_err(|e| QkdError::param("lifetime_ns", e.to_string()))?;
        tags.reserve(
            (n_pulses as f64 * source.mean_photon_number() * detection_eff * 1.1) as usize,
        );
        let mut pulse = 0u64;
        loop {
            pulse = pulse.saturating_add(skip.sample(rng));
            if pulse >= n_pulses {
                break;
            }
            let n = sampler.sample_nonzero(rng);
            for _ in 0..n {
                let t = pulse * period_ps + ns_to_ps(delay.sample(rng));
                let det = u8::from(!rng.random_bool(splitter_ratio));
                if rng.random_bool(detection_eff) && t < duration_ps {
                    tags.push((t, det));
                }
            }
            pulse += 1;
        }
    }
    let mut stream = TimeTagStream::from_tags(tags, period_ps)?;
    stream.duration_ps = duration_ps;
    Ok(stream)
}

/// Start-stop cross-correlation of detector 1 against detector 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationHistogram {
    pub bin_width_ns: f64,
    /// Left edge of bin 0.
    pub tau_min_ns: f64,
    pub counts: Vec<u64>,
    pub period_ns: f64,
    pub window_periods: u32,
    /// Pair counts within `[kT - T/2, kT + T/2)` for `k = -W..=W`,
    /// taken from exact time differences.
    pub peak_areas: Vec<u64>,
}

impl CorrelationHistogram {
    pub fn bin_center(&self, i: usize) -> f64 {
        self.tau_min_ns + (i as f64 + 0.5) * self.bin_width_ns
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn peak_area(&self, k: i32) -> Option<u64> {
        let idx = k + self.window_periods as i32;
        usize::try_from(idx)
            .ok()
            .and_then(|i| self.peak_areas.get(i))
            .copied()
    }

    pub fn center_area(&self) -> u64 {
        self.peak_areas[self.window_periods as usize]
    }

    /// `(k, area)` for every side peak in the window.
    pub fn side_peaks(&self) -> impl Iterator<Item = (i32, u64)> + '_ {
        let w = self.window_periods as i32;
        (-w..=w)
            .filter(|&k| k != 0)
            .map(move |k| (k, self.peak_area(k).unwrap()))
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "tau_ns,counts")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(
                out,
                "{},{}",
                crate::numfmt::format_sig(self.bin_center(i), 9),
                c
            )?;
        }
        Ok(())
    }
}

/// Histograms all detector-0/detector-1 pairs with `|tau| < (W + 1/2) T`.
pub fn correlation_histogram(
    stream: &TimeTagStream,
    bin_width_ns: f64,
    window_periods: u32,
) -> Result<CorrelationHistogram> {
    if !(bin_width_ns > 0.0) {
        return Err(QkdError::param(
            "bin_width_ns",
            format!("must be > 0, got {bin_width_ns}"),
        ));
    }
    if (window_periods as usize) * 2 < MIN_SIDE_PEAKS {
        return Err(QkdError::param(
            "window_periods",
            format!(
                "needs at least {} side peaks, got {}",
                MIN_SIDE_PEAKS,
                2 * window_periods
            ),
        ));
    }
    let a = stream.detector_times(0);
    let b = stream.detector_times(1);
    if a.is_empty() || b.is_empty() {
        return Err(QkdError::InsufficientCounts(
            "both detectors need at least one tag".into(),
        ));
    }
    let period = stream.period_ps as i64;
    let bin = ns_to_ps(bin_width_ns).max(1) as i64;
    let half = window_periods as i64 * period + period / 2;
    let span = 2 * half;
    let n_bins = (span + bin - 1) / bin;
    let mut counts = vec![0u64; n_bins as usize];
    let mut peaks = vec![0u64; 2 * window_periods as usize + 1];

    let last_peak = peaks.len() - 1;
    let mut lo = 0usize;
    for &t in &a {
        let t = t as i64;
        while lo < b.len() && (b[lo] as i64) < t - half {
            lo += 1;
        }
        for &u in &b[lo..] {
            let tau = u as i64 - t;
            if tau >= half {
                break;
            }
            let shifted = tau + half;
            counts[(shifted / bin) as usize] += 1;
            peaks[((shifted / period) as usize).min(last_peak)] += 1;
        }
    }
    Ok(CorrelationHistogram {
        bin_width_ns: bin as f64 / 1000.0,
        tau_min_ns: -half as f64 / 1000.0,
        counts,
        period_ns: stream.period_ns(),
        window_periods,
        peak_areas: peaks,
    })
}

/// Center-peak area over the mean side-peak area.
pub fn g2_at_zero(hist: &CorrelationHistogram) -> Result<f64> {
    let sides: Vec<u64> = hist.side_peaks().map(|(_, a)| a).collect();
    let nonzero = sides.iter().filter(|&&a| a > 0).count();
    if nonzero < MIN_SIDE_PEAKS {
        return Err(QkdError::InsufficientCounts(format!(
            "{nonzero} side peaks with counts, need {MIN_SIDE_PEAKS}"
        )));
    }
    let mean = sides.iter().sum::<u64>() as f64 / sides.len() as f64;
    Ok(hist.center_area() as f64 / mean)
}

/// Fraction of a Laplace peak of scale `tau` centered at 0 that falls in
/// the window `[dT - T/2, dT + T/2)`.
fn laplace_window_fraction(d: i64, period: f64, tau: f64) -> f64 {
    let h = period / (2.0 * tau);
    if d == 0 {
        1.0 - (-h).exp()
    } else {
        let near = (d.unsigned_abs() as f64 * period - period / 2.0) / tau;
        0.5 * (-near).exp() * (1.0 - (-period / tau).exp())
    }
}

/// g²(0) corrected for overlap between neighbouring peaks.
///
/// With an emission lifetime `tau`, coincidence peaks are Laplace shaped
/// with scale `tau`. Window `j` then holds `A (1 - c_j) + B c_j`, where
/// `c_j` is the share of a peak spilling `j` periods away, `A` is the side
/// peak area and `B` the center peak area. `A` and `B` are fitted by least
/// squares over all windows and `B / A` is returned.
pub fn g2_overlap_corrected(hist: &CorrelationHistogram, tau_ns: f64) -> Result<f64> {
    if !(tau_ns > 0.0) {
        return Err(QkdError::param(
            "tau_ns",
            format!("must be > 0, got {tau_ns}"),
        ));
    }
    let w = hist.window_periods as i64;
    let (mut suu, mut suc, mut scc, mut suo, mut sco) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for j in -w..=w {
        let c = laplace_window_fraction(j, hist.period_ns, tau_ns);
        let u = 1.0 - c;
        let o = hist.peak_area(j as i32).unwrap() as f64;
        suu += u * u;
        suc += u * c;
        scc += c * c;
        suo += u * o;
        sco += c * o;
    }
    let det = suu * scc - suc * suc;
    if det.abs() < 1e-300 {
        return Err(QkdError::InsufficientCounts(
            "degenerate overlap fit".into(),
        ));
    }
    let a = (suo * scc - sco * suc) / det;
    let b = (suu * sco - suc * suo) / det;
    if !(a > 0.0) {
        return Err(QkdError::InsufficientCounts(
            "side-peak amplitude not positive".into(),
        ));
    }
    Ok((b / a).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifetimeFit {
    pub tau_ns: f64,
    pub sigma_tau_ns: f64,
    /// Bins used in the fit.
    pub n_bins: usize,
    /// False when the decay does not fit comfortably inside one period,
    /// so that tails from earlier pulses wrap into the fitted region.
    pub reliable: bool,
}

/// Exponential fit to the pulse-phase histogram of all tags.
///
/// The decay region starts one bin after the maximum and runs while bins
/// hold at least 1 % of the peak (and at least 20 counts). Log-counts are
/// fitted to a straight line with uniform weights.
pub fn fit_lifetime(stream: &TimeTagStream, bin_width_ns: f64) -> Result<LifetimeFit> {
    if !(bin_width_ns > 0.0) {
        return Err(QkdError::param(
            "bin_width_ns",
            format!("must be > 0, got {bin_width_ns}"),
        ));
    }
    let bin = ns_to_ps(bin_width_ns).max(1);
    let n_bins = stream.period_ps.div_ceil(bin) as usize;
    let mut hist = vec![0u64; n_bins];
    for &t in &stream.times_ps {
        hist[((t % stream.period_ps) / bin) as usize] += 1;
    }
    let (peak, &peak_count) = hist
        .iter()
        .enumerate()
        .max_by_key(|&(i, &c)| (c, std::cmp::Reverse(i)))
        .ok_or_else(|| QkdError::InsufficientCounts("empty stream".into()))?;
    let floor = (peak_count / 100).max(20);
    let region: Vec<(f64, u64)> = hist[peak + 1..]
        .iter()
        .enumerate()
        .take_while(|&(_, &c)| c >= floor)
        .map(|(i, &c)| ((peak + 1 + i) as f64 * bin_width_ns, c))
        .collect();
    let total: u64 = region.iter().map(|&(_, c)| c).sum();
    if region.len() < 3 || total < MIN_DECAY_COUNTS {
        return Err(QkdError::InsufficientCounts(format!(
            "{} counts in {} decay bins, need {MIN_DECAY_COUNTS} in at least 3",
            total,
            region.len()
        )));
    }
    let n = region.len() as f64;
    let mx = region.iter().map(|&(x, _)| x).sum::<f64>() / n;
    let my = region.iter().map(|&(_, c)| (c as f64).ln()).sum::<f64>() / n;
    let sxx: f64 = region.iter().map(|&(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = region
        .iter()
        .map(|&(x, c)| (x - mx) * ((c as f64).ln() - my))
        .sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(QkdError::InsufficientCounts(
            "phase histogram does not decay".into(),
        ));
    }
    let intercept = my - slope * mx;
    let rss: f64 = region
        .iter()
        .map(|&(x, c)| ((c as f64).ln() - intercept - slope * x).powi(2))
        .sum();
    let sigma_slope = if region.len() > 2 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    let tau_ns = -1.0 / slope;
    Ok(LifetimeFit {
        tau_ns,
        sigma_tau_ns: sigma_slope / (slope * slope),
        n_bins: region.len(),
        reliable: 2.0 * tau_ns <= stream.period_ns(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::rng_from_seed;
    use crate::source::Preset;
    use proptest::prelude::*;

    fn nv_stream(n: u64, eff: f64, seed: u64) -> TimeTagStream {
        simulate_hbt(&Preset::Nv.source(), n, 0.5, eff, &mut rng_from_seed(seed)).unwrap()
    }

    #[test]
    fn nv_tag_rate() {
        let s = nv_stream(1_000_000, 0.31, 1);
        assert!((s.len() as f64 - 8990.0).abs() < 300.0, "{}", s.len());
        assert!(s.times_ps.windows(2).all(|w| w[0] <= w[1]));
        assert!(s.times_ps.iter().all(|&t| t < s.duration_ps));
    }

    #[test]
    fn empty_source_and_determinism() {
        let dark = SourceSpec::sub_poissonian(0.0, 0.0, 3.0, 1e6);
        let s = simulate_hbt(&dark, 10_000, 0.5, 1.0, &mut rng_from_seed(2)).unwrap();
        assert!(s.is_empty());
        assert!(matches!(
            correlation_histogram(&s, 1.0, 5),
            Err(QkdError::InsufficientCounts(_))
        ));
        let s = simulate_hbt(
            &Preset::Nv.source(),
            10_000,
            0.5,
            0.0,
            &mut rng_from_seed(2),
        )
        .unwrap();
        assert!(s.is_empty());
        assert_eq!(nv_stream(100_000, 0.31, 3), nv_stream(100_000, 0.31, 3));
        assert!(simulate_hbt(&Preset::Nv.source(), 0, 0.5, 1.0, &mut rng_from_seed(2)).is_err());
    }

    #[test]
    fn ideal_single_photons_leave_center_empty() {
        let src = SourceSpec::sub_poissonian(0.5, 0.0, 5.0, 1e6);
        let s = simulate_hbt(&src, 200_000, 0.5, 1.0, &mut rng_from_seed(4)).unwrap();
        let h = correlation_histogram(&s, 1.0, 5).unwrap();
        assert_eq!(h.center_area(), 0);
        assert!(g2_at_zero(&h).unwrap() <= 0.01);
    }

    #[test]
    fn poissonian_peaks_are_flat() {
        let src = SourceSpec::poissonian(0.2, 5.0, 1e6);
        let s = simulate_hbt(&src, 2_000_000, 0.5, 1.0, &mut rng_from_seed(5)).unwrap();
        let h = correlation_histogram(&s, 1.0, 5).unwrap();
        let g = g2_at_zero(&h).unwrap();
        assert!((g - 1.0).abs() < 0.05, "{g}");
    }

    #[test]
    fn side_peaks_sit_one_period_apart() {
        let s = nv_stream(20_000_000, 1.0, 6);
        let h = correlation_histogram(&s, 1.0, 5).unwrap();
        let centroid = |k: i32| {
            let (lo, hi) = (
                (k as f64 - 0.5) * h.period_ns,
                (k as f64 + 0.5) * h.period_ns,
            );
            let (mut w, mut m) = (0.0, 0.0);
            for (i, &c) in h.counts.iter().enumerate() {
                let x = h.bin_center(i);
                if lo <= x && x < hi {
                    w += c as f64;
                    m += c as f64 * x;
                }
            }
            m / w
        };
        // slope of centroid against peak index
        let ks: Vec<f64> = (-5..=5).filter(|&k| k != 0).map(f64::from).collect();
        let num: f64 = ks.iter().map(|&k| k * centroid(k as i32)).sum();
        let den: f64 = ks.iter().map(|k| k * k).sum();
        let spacing = num / den;
        assert!((spacing - h.period_ns).abs() <= h.bin_width_ns, "{spacing}");
    }

    #[test]
    fn histogram_conserves_pairs() {
        let s = nv_stream(300_000, 1.0, 7);
        let h = correlation_histogram(&s, 1.0, 5).unwrap();
        let a = s.detector_times(0);
        let b = s.detector_times(1);
        let half = (5.5 * h.period_ns * 1000.0) as i64;
        let brute = a
            .iter()
            .flat_map(|&t| b.iter().map(move |&u| u as i64 - t as i64))
            .filter(|&d| -half <= d && d < half)
            .count() as u64;
        assert_eq!(h.total(), brute);
        assert_eq!(h.peak_areas.iter().sum::<u64>(), brute);
    }

    #[test]
    fn nv_and_siv_recovery() {
        let h = correlation_histogram(&nv_stream(10_000_000, 1.0, 8), 1.0, 5).unwrap();
        let g = g2_at_zero(&h).unwrap();
        assert!((g - 0.09).abs() < 0.02, "nv {g}");

        // SiV coincidences are sparse; 5e7 pulses keep the tolerance near 3 sigma
        let s = simulate_hbt(
            &Preset::Siv.source(),
            50_000_000,
            0.5,
            1.0,
            &mut rng_from_seed(9),
        )
        .unwrap();
        let g = g2_at_zero(&correlation_histogram(&s, 1.0, 5).unwrap()).unwrap();
        assert!((g - 0.04).abs() < 0.015, "siv {g}");
    }

    #[test]
    fn error_shrinks_with_more_pulses() {
        let rms = |n: u64| {
            let errs: Vec<f64> = (0..6)
                .map(|s| {
                    let h = correlation_histogram(&nv_stream(n, 1.0, 100 + s), 1.0, 5).unwrap();
                    g2_at_zero(&h).unwrap() - 0.09
                })
                .collect();
            (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt()
        };
        let coarse = rms(1_000_000);
        let fine = rms(10_000_000);
        assert!(fine < coarse, "{fine} !< {coarse}");
    }

    #[test]
    fn lifetime_recovery() {
        let fit = fit_lifetime(&nv_stream(10_000_000, 1.0, 10), 1.0).unwrap();
        assert!((fit.tau_ns - 28.5).abs() < 1.0, "{fit:?}");
        assert!(fit.reliable && fit.sigma_tau_ns > 0.0);

        let s = simulate_hbt(
            &Preset::Siv.source(),
            10_000_000,
            0.5,
            1.0,
            &mut rng_from_seed(11),
        )
        .unwrap();
        let fit = fit_lifetime(&s, 0.1).unwrap();
        assert!((fit.tau_ns - 3.0).abs() < 0.3, "{fit:?}");
    }

    #[test]
    fn long_lifetime_is_flagged() {
        let src = SourceSpec::sub_poissonian(0.5, 0.05, 40.0, 80e6);
        let s = simulate_hbt(&src, 2_000_000, 0.5, 1.0, &mut rng_from_seed(12)).unwrap();
        match fit_lifetime(&s, 0.5) {
            Ok(fit) => assert!(!fit.reliable, "{fit:?}"),
            Err(e) => assert!(matches!(e, QkdError::InsufficientCounts(_))),
        }
    }

    #[test]
    fn overlap_correction_removes_spill() {
        // 3 ns lifetime at 80 MHz: neighbouring peaks leak into the center window.
        let src = SourceSpec::sub_poissonian(0.05, 0.09, 3.0, 80e6);
        let s = simulate_hbt(&src, 40_000_000, 0.5, 1.0, &mut rng_from_seed(13)).unwrap();
        let h = correlation_histogram(&s, 0.1, 5).unwrap();
        let raw = g2_at_zero(&h).unwrap();
        let fit = fit_lifetime(&s, 0.1).unwrap();
        let corrected = g2_overlap_corrected(&h, fit.tau_ns).unwrap();
        assert!(raw > 0.15, "{raw}");
        assert!(
            (corrected - 0.09).abs() < 0.02,
            "{corrected} (tau {})",
            fit.tau_ns
        );
    }

    #[test]
    fn laplace_fractions_sum_to_one() {
        for tau in [0.5, 3.0, 10.0] {
            let total: f64 = (-200..=200)
                .map(|d| laplace_window_fraction(d, 12.5, tau))
                .sum();
            assert!((total - 1.0).abs() < 1e-12, "{total}");
        }
    }

    #[test]
    fn histogram_needs_both_detectors() {
        let s = TimeTagStream::from_tags(vec![(5, 0), (10, 0)], 1000).unwrap();
        assert!(correlation_histogram(&s, 1.0, 5).is_err());
        let s = nv_stream(100_000, 1.0, 14);
        assert!(correlation_histogram(&s, 1.0, 1).is_err());
        assert!(correlation_histogram(&s, 0.0, 5).is_err());
    }

    #[test]
    fn io_roundtrips() {
        let s = nv_stream(50_000, 1.0, 15);
        let mut csv = Vec::new();
        s.write_csv(&mut csv).unwrap();
        let back = TimeTagStream::read_csv(csv.as_slice(), s.period_ns()).unwrap();
        assert_eq!(back.times_ps, s.times_ps);
        assert_eq!(back.detectors, s.detectors);

        let mut bin = Vec::new();
        s.write_binary(&mut bin).unwrap();
        assert_eq!(bin.len(), 9 * s.len());
        let back = TimeTagStream::read_binary(&bin, s.period_ns()).unwrap();
        assert_eq!(back.times_ps, s.times_ps);
        assert!(TimeTagStream::read_binary(&bin[1..], 1000.0).is_err());
    }

    #[test]
    fn binary_record_layout() {
        let s = TimeTagStream::from_tags(vec![(0x0102_0304_0506_0708, 1)], 1000).unwrap();
        let mut out = Vec::new();
        s.write_binary(&mut out).unwrap();
        assert_eq!(out, [8, 7, 6, 5, 4, 3, 2, 1, 1]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn histogram_total_equals_pair_count(
            tags in proptest::collection::vec((0u64..200_000, 0u8..2), 2..120),
        ) {
            let s = TimeTagStream::from_tags(tags, 10_000).unwrap();
            prop_assume!(s.count(0) > 0 && s.count(1) > 0);
            let h = correlation_histogram(&s, 0.5, 3).unwrap();
            let a = s.detector_times(0);
            let b = s.detector_times(1);
            let half = 35_000i64;
            let brute = a.iter()
                .flat_map(|&t| b.iter().map(move |&u| u as i64 - t as i64))
                .filter(|&d| -half <= d && d < half)
                .count() as u64;
            prop_assert_eq!(h.total(), brute);
        }
    }
}
