//! Shot-by-shot simulation of shelving readout.
//!
//! Each shot draws its randomness from a ChaCha stream keyed by
//! `(seed, shot_index)`, so a histogram is a pure function of the
//! configuration regardless of how shots are scheduled across threads.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discrimination::{check_header, parse_field};
use crate::error::{ReadoutError, Result};
use crate::photon_statistics::{DetectionModel, ErrorRates};

/// Qubit state prepared before shelving.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreparedState {
    /// `|↑⟩`, shelved to the metastable level (dark).
    Up,
    /// `|↓⟩`, left fluorescing (bright).
    Down,
}

impl PreparedState {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Up => "up",
            Self::Down => "down",
        }
    }
}

/// How the decay time of the shelved level is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayLaw {
    /// `T ~ Exp(1/τ)`.
    #[default]
    Exponential,
    /// Decay inside the window with probability `t_det/τ`, at a uniform time.
    /// Matches the first-order analytic dark distribution exactly.
    UniformFirstOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: DetectionModel,
    pub errors: ErrorRates,
    pub shots: u64,
    pub seed: u64,
    #[serde(default)]
    pub decay_law: DecayLaw,
}

impl SimConfig {
    pub fn new(
        model: DetectionModel,
        errors: ErrorRates,
        shots: u64,
        seed: u64,
        decay_law: DecayLaw,
    ) -> Result<Self> {
        let cfg = Self { model, errors, shots, seed, decay_law };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(ReadoutError::usage("shots must be at least 1"));
        }
        Ok(())
    }
}

/// Photon arrival times of one shot, in seconds from the start of detection.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PhotonTrace {
    timestamps: Vec<f64>,
}

impl PhotonTrace {
    /// Wraps the given timestamps without checking them; see [`Self::validate`].
    pub fn new(timestamps: Vec<f64>) -> Self {
        Self { timestamps }
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn count(&self) -> usize {
        self.timestamps.len()
    }

    /// Sorted ascending and inside `[0, t_det]`.
    pub fn validate(&self, t_det: f64) -> Result<()> {
        if let Some(t) = self.timestamps.iter().find(|t| !(**t >= 0.0 && **t <= t_det)) {
            return Err(ReadoutError::usage(format!(
                "timestamp {t} outside detection window [0, {t_det}]"
            )));
        }
        if !self.timestamps.windows(2).all(|w| w[0] <= w[1]) {
            return Err(ReadoutError::usage("trace timestamps are not sorted"));
        }
        Ok(())
    }
}

/// Full record of a simulated shot.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotRecord {
    pub trace: PhotonTrace,
    /// Whether the ion fluoresced from the start of detection.
    pub initially_bright: bool,
    /// Decay time of the shelved level if it fell inside the window.
    pub decay_time: Option<f64>,
}

fn shot_rng(seed: u64, shot_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shot_index);
    rng
}

/// Appends arrival times of a homogeneous process of `rate` on `[start, stop)`.
fn emit<R: Rng>(rng: &mut R, rate: f64, start: f64, stop: f64, out: &mut Vec<f64>) {
    if !(rate > 0.0) || stop <= start {
        return;
    }
    let gap = Exp::new(rate).expect("positive rate");
    let mut t = start;
    loop {
        t += gap.sample(rng);
        if t >= stop {
            break;
        }
        out.push(t);
    }
}

/// Simulates one shot; deterministic in `(config.seed, shot_index)`.
pub fn simulate_shot_record(
    prepared: PreparedState,
    config: &SimConfig,
    shot_index: u64,
) -> ShotRecord {
    let m = &config.model;
    let mut rng = shot_rng(config.seed, shot_index);
    let flipped = |p: f64, rng: &mut ChaCha8Rng| rng.random::<f64>() < p;
    let initially_bright = match prepared {
        PreparedState::Down => !flipped(config.errors.eps_down_tot, &mut rng),
        PreparedState::Up => flipped(config.errors.eps_up_tot, &mut rng),
    };
    let mut timestamps = Vec::new();
    let mut decay_time = None;
    if initially_bright {
        emit(&mut rng, m.rate_bright, 0.0, m.t_det, &mut timestamps);
    } else {
        let t_decay = match config.decay_law {
            DecayLaw::Exponential => Exp::new(1.0 / m.lifetime).expect("positive").sample(&mut rng),
            DecayLaw::UniformFirstOrder => {
                if rng.random::<f64>() < m.decay_fraction() {
                    rng.random::<f64>() * m.t_det
                } else {
                    f64::INFINITY
                }
            }
        };
        let switch = t_decay.min(m.t_det);
        emit(&mut rng, m.rate_dark, 0.0, switch, &mut timestamps);
        if t_decay < m.t_det {
            decay_time = Some(t_decay);
            emit(&mut rng, m.rate_bright, t_decay, m.t_det, &mut timestamps);
        }
    }
    ShotRecord { trace: PhotonTrace::new(timestamps), initially_bright, decay_time }
}

/// Arrival-time trace of one shot.
pub fn simulate_shot(prepared: PreparedState, config: &SimConfig, shot_index: u64) -> PhotonTrace {
    simulate_shot_record(prepared, config, shot_index).trace
}

/// Photon-number histogram over `shots` repetitions (bins indexed by count).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountHistogram {
    counts: Vec<u64>,
    total_shots: u64,
}

impl CountHistogram {
    pub fn from_bins(counts: Vec<u64>) -> Self {
        let total_shots = counts.iter().sum();
        Self { counts, total_shots }
    }

    pub fn from_counts(samples: impl IntoIterator<Item = u64>) -> Self {
        let mut bins = Vec::new();
        for n in samples {
            let n = n as usize;
            if bins.len() <= n {
                bins.resize(n + 1, 0);
            }
            bins[n] += 1;
        }
        Self::from_bins(bins)
    }

    pub fn bins(&self) -> &[u64] {
        &self.counts
    }

    pub fn total_shots(&self) -> u64 {
        self.total_shots
    }

    /// Largest count with a non-zero bin.
    pub fn max_count(&self) -> Option<usize> {
        self.counts.iter().rposition(|c| *c > 0)
    }

    pub fn count(&self, n: usize) -> u64 {
        self.counts.get(n).copied().unwrap_or(0)
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let total = self.total_shots.max(1) as f64;
        self.counts.iter().map(|c| *c as f64 / total).collect()
    }

    pub fn mean(&self) -> f64 {
        let s: f64 = self.counts.iter().enumerate().map(|(n, c)| n as f64 * *c as f64).sum();
        s / self.total_shots.max(1) as f64
    }

    /// Shots with count `> n_th`.
    pub fn above(&self, n_th: usize) -> u64 {
        self.counts.iter().skip(n_th + 1).sum()
    }

    fn merge(mut self, other: Self) -> Self {
        if self.counts.len() < other.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total_shots += other.total_shots;
        self
    }
}

pub const HISTOGRAM_CSV_HEADER: &str = "n,count,frequency";
pub const TRACE_CSV_HEADER: &str = "shot,timestamp_us";

pub fn write_histogram_csv<W: Write>(out: W, hist: &CountHistogram) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HISTOGRAM_CSV_HEADER.split(','))?;
    for (n, f) in hist.frequencies().iter().enumerate() {
        w.write_record([n.to_string(), hist.counts[n].to_string(), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses the histogram CSV; the `frequency` column is recomputed, not trusted.
pub fn read_histogram_csv<R: Read>(input: R) -> Result<CountHistogram> {
    let mut r = csv::Reader::from_reader(input);
    check_header(r.headers()?, HISTOGRAM_CSV_HEADER)?;
    let mut bins: Vec<u64> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let n: usize = parse_field(&rec, 0)?;
        let c: u64 = parse_field(&rec, 1)?;
        if bins.len() <= n {
            bins.resize(n + 1, 0);
        }
        bins[n] += c;
    }
    Ok(CountHistogram::from_bins(bins))
}

pub fn write_traces_csv<W: Write>(out: W, traces: &[PhotonTrace]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_CSV_HEADER.split(','))?;
    for (shot, trace) in traces.iter().enumerate() {
        for t in trace.timestamps() {
            w.write_record([shot.to_string(), (t * 1e6).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `shots` traces; shots without photons simply have no rows.
pub fn read_traces_csv<R: Read>(input: R, shots: usize) -> Result<Vec<PhotonTrace>> {
    let mut r = csv::Reader::from_reader(input);
    check_header(r.headers()?, TRACE_CSV_HEADER)?;
    let mut traces = vec![Vec::new(); shots];
    for rec in r.records() {
        let rec = rec?;
        let shot: usize = parse_field(&rec, 0)?;
        let t_us: f64 = parse_field(&rec, 1)?;
        let slot = traces
            .get_mut(shot)
            .ok_or_else(|| ReadoutError::usage(format!("shot index {shot} >= {shots}")))?;
        slot.push(t_us * 1e-6);
    }
    Ok(traces.into_iter().map(PhotonTrace::new).collect())
}

fn run_in_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| ReadoutError::usage(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Count histogram over all shots, using the global rayon pool.
pub fn simulate_histogram(prepared: PreparedState, config: &SimConfig) -> Result<CountHistogram> {
    simulate_histogram_with_threads(prepared, config, None)
}

/// Count histogram using `threads` workers (`None`: global pool). The result
/// does not depend on the thread count.
pub fn simulate_histogram_with_threads(
    prepared: PreparedState,
    config: &SimConfig,
    threads: Option<usize>,
) -> Result<CountHistogram> {
    config.validate()?;
    run_in_pool(threads, || {
        (0..config.shots)
            .into_par_iter()
            .fold(
                || CountHistogram::from_bins(Vec::new()),
                |mut h, i| {
                    let n = simulate_shot(prepared, config, i).count();
                    if h.counts.len() <= n {
                        h.counts.resize(n + 1, 0);
                    }
                    h.counts[n] += 1;
                    h.total_shots += 1;
                    h
                },
            )
            .reduce(|| CountHistogram::from_bins(Vec::new()), CountHistogram::merge)
    })
}

/// All shot traces in shot order.
pub fn simulate_traces(
    prepared: PreparedState,
    config: &SimConfig,
    threads: Option<usize>,
) -> Result<Vec<PhotonTrace>> {
    config.validate()?;
    run_in_pool(threads, || {
        (0..config.shots)
            .into_par_iter()
            .map(|i| simulate_shot(prepared, config, i))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photon_statistics::{bright_pdf, dark_pdf, poisson_pmf};

    fn reference_model() -> DetectionModel {
        DetectionModel::new(73.5e3, 1.75e3, 0.390, 285e-6).unwrap()
    }

    fn config(errors: ErrorRates, shots: u64, law: DecayLaw) -> SimConfig {
        SimConfig::new(reference_model(), errors, shots, 0x5eed, law).unwrap()
    }

    #[test]
    fn rejects_zero_shots() {
        assert!(SimConfig::new(reference_model(), ErrorRates::ZERO, 0, 1, DecayLaw::Exponential).is_err());
    }

    #[test]
    fn shots_are_deterministic_and_valid() {
        let cfg = config(ErrorRates::new(1e-3, 1e-3).unwrap(), 100, DecayLaw::Exponential);
        for i in 0..100 {
            let a = simulate_shot(PreparedState::Down, &cfg, i);
            let b = simulate_shot(PreparedState::Down, &cfg, i);
            assert_eq!(a, b);
            a.validate(cfg.model.t_det).unwrap();
        }
        assert_ne!(
            simulate_shot(PreparedState::Down, &cfg, 0),
            simulate_shot(PreparedState::Down, &cfg, 1)
        );
    }

    #[test]
    fn single_shot_histogram() {
        let cfg = config(ErrorRates::ZERO, 1, DecayLaw::Exponential);
        let h = simulate_histogram(PreparedState::Down, &cfg).unwrap();
        assert_eq!(h.total_shots(), 1);
        assert_eq!(h.bins().iter().filter(|c| **c > 0).count(), 1);
        let n = simulate_shot(PreparedState::Down, &cfg, 0).count();
        assert_eq!(h.count(n), 1);
    }

    #[test]
    fn thread_count_does_not_change_histogram() {
        let cfg = config(ErrorRates::new(6e-4, 1e-3).unwrap(), 20_000, DecayLaw::Exponential);
        for state in [PreparedState::Up, PreparedState::Down] {
            let one = simulate_histogram_with_threads(state, &cfg, Some(1)).unwrap();
            let eight = simulate_histogram_with_threads(state, &cfg, Some(8)).unwrap();
            assert_eq!(one, eight);
        }
    }

    #[test]
    fn bright_mean_count_within_five_sigma() {
        let shots = 200_000u64;
        let cfg = config(ErrorRates::ZERO, shots, DecayLaw::Exponential);
        let h = simulate_histogram(PreparedState::Down, &cfg).unwrap();
        let mean = cfg.model.mean_bright();
        let se = (mean / shots as f64).sqrt();
        assert!((h.mean() - mean).abs() < 5.0 * se, "{} vs {mean}", h.mean());
        let tv = bright_pdf(&cfg.model).total_variation(&h.frequencies());
        assert!(tv < 5e-3, "tv {tv}");
    }

    #[test]
    fn dark_without_decay_is_background_poisson() {
        let m = DetectionModel::new(73.5e3, 1.75e3, 1e12, 285e-6).unwrap();
        let cfg = SimConfig::new(m, ErrorRates::ZERO, 200_000, 3, DecayLaw::Exponential).unwrap();
        let h = simulate_histogram(PreparedState::Up, &cfg).unwrap();
        let pois: Vec<f64> = (0..12).map(|n| poisson_pmf(n, m.mean_dark()).unwrap()).collect();
        let tv = 0.5
            * (0..h.bins().len().max(12))
                .map(|n| (h.frequencies().get(n).copied().unwrap_or(0.0) - pois.get(n).copied().unwrap_or(0.0)).abs())
                .sum::<f64>();
        assert!(tv < 4e-3, "tv {tv}");
    }

    #[test]
    fn decay_fraction_matches_law() {
        let shots = 400_000u64;
        let m = DetectionModel::new(73.5e3, 1.75e3, 0.002, 150e-6).unwrap();
        for (law, p) in [
            (DecayLaw::UniformFirstOrder, m.decay_fraction()),
            (DecayLaw::Exponential, 1.0 - (-m.decay_fraction()).exp()),
        ] {
            let cfg = SimConfig::new(m, ErrorRates::ZERO, shots, 11, law).unwrap();
            let decayed = (0..shots)
                .filter(|i| simulate_shot_record(PreparedState::Up, &cfg, *i).decay_time.is_some())
                .count() as f64
                / shots as f64;
            let se = (p * (1.0 - p) / shots as f64).sqrt();
            assert!((decayed - p).abs() < 5.0 * se, "{law:?}: {decayed} vs {p}");
        }
    }

    #[test]
    fn uniform_law_matches_dark_pdf() {
        let m = DetectionModel::new(73.5e3, 1.75e3, 0.039, 285e-6).unwrap();
        let cfg = SimConfig::new(m, ErrorRates::ZERO, 1_000_000, 7, DecayLaw::UniformFirstOrder).unwrap();
        let h = simulate_histogram(PreparedState::Up, &cfg).unwrap();
        let tv = dark_pdf(&m).total_variation(&h.frequencies());
        assert!(tv < 3e-3, "tv {tv}");
    }

    #[test]
    fn histogram_csv_round_trip() {
        let h = CountHistogram::from_counts([0, 3, 3, 5, 0, 21]);
        let mut buf = Vec::new();
        write_histogram_csv(&mut buf, &h).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), HISTOGRAM_CSV_HEADER);
        assert_eq!(text.lines().nth(1).unwrap(), "0,2,0.3333333333333333");
        assert_eq!(read_histogram_csv(buf.as_slice()).unwrap(), h);
        assert!(read_histogram_csv("n,c\n0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn trace_csv_round_trip() {
        let cfg = config(ErrorRates::ZERO, 5, DecayLaw::Exponential);
        let traces = simulate_traces(PreparedState::Down, &cfg, Some(2)).unwrap();
        let mut buf = Vec::new();
        write_traces_csv(&mut buf, &traces).unwrap();
        let back = read_traces_csv(buf.as_slice(), traces.len()).unwrap();
        for (a, b) in traces.iter().zip(&back) {
            assert_eq!(a.count(), b.count());
            for (x, y) in a.timestamps().iter().zip(b.timestamps()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }
}
