//! Wall-clock timing of the per-set weighting methods on random sets.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::baselines::{self, GramSource};
use crate::error::{Error, Result};
use crate::vbs::{self, AssignMode, VbsConfig, Vocabulary};

pub const BENCH_CSV_HEADER: &str = "method,n,d,k,seconds";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMethod {
    /// Burst scores from soft vocabulary assignment, `O(n k d)`.
    Vbs,
    /// Gram matrix alone, `O(n^2 d)`.
    Gram,
    Gmp,
    Da,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 4] = [BenchMethod::Vbs, BenchMethod::Gram, BenchMethod::Gmp, BenchMethod::Da];

    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::Vbs => "vbs",
            BenchMethod::Gram => "gram",
            BenchMethod::Gmp => "gmp",
            BenchMethod::Da => "da",
        }
    }
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown bench method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: BenchMethod,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    /// Median over repeats.
    pub seconds: f64,
}

/// Random inputs for one timing point.
pub struct BenchInput {
    pub features: Array2<f64>,
    pub vocab: Vocabulary,
}

impl BenchInput {
    pub fn random(n: usize, d: usize, k: usize, seed: u64) -> Result<Self> {
        if n == 0 || d == 0 || k == 0 {
            return Err(Error::Parameter("bench sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (d as f64).sqrt();
        let features = Array2::from_shape_fn((n, d), |_| scale * rng.sample::<f64, _>(StandardNormal));
        let vocab = Vocabulary::random(k, d, &mut rng)?;
        Ok(Self { features, vocab })
    }
}

/// Runs `method` once; the returned checksum keeps the work observable.
pub fn run_once(method: BenchMethod, input: &BenchInput) -> Result<f64> {
    let f = input.features.view();
    Ok(match method {
        BenchMethod::Vbs => {
            let config = VbsConfig {
                mode: AssignMode::default(),
                l2_normalize: false,
            };
            vbs::vbs_assignments(f, &input.vocab, &config)?
                .burst_scores()
                .as_array()
                .sum()
        }
        BenchMethod::Gram => baselines::gram_of(f, GramSource::Entangled).matrix().sum(),
        BenchMethod::Gmp => {
            let g = baselines::gram_of(f, GramSource::Entangled);
            baselines::gmp_weights(&g, baselines::DEFAULT_RIDGE)?.as_array().sum()
        }
        BenchMethod::Da => {
            let g = baselines::gram_of(f, GramSource::Entangled);
            let r = baselines::da_weights(&g, baselines::DEFAULT_DA_ITERATIONS, baselines::DEFAULT_DA_TOL)?;
            r.weights.as_array().sum()
        }
    })
}

/// Per-run wall time: median of `repeats` samples, each averaging enough
/// back-to-back runs to last at least `MIN_SAMPLE`. One warm-up run first.
pub fn time_method(method: BenchMethod, input: &BenchInput, repeats: usize) -> Result<Duration> {
    let inner = calibrate(method, input)?;
    let mut times = Vec::with_capacity(repeats.max(1));
    for _ in 0..repeats.max(1) {
        times.push(sample(method, input, inner)?);
    }
    Ok(median(times))
}

/// Shortest span a single timing sample should cover.
pub const MIN_SAMPLE: Duration = Duration::from_millis(20);

fn calibrate(method: BenchMethod, input: &BenchInput) -> Result<u32> {
    let start = Instant::now();
    std::hint::black_box(run_once(method, input)?);
    let once = start.elapsed().max(Duration::from_nanos(1));
    Ok((MIN_SAMPLE.as_secs_f64() / once.as_secs_f64()).ceil().clamp(1.0, 1e6) as u32)
}

fn sample(method: BenchMethod, input: &BenchInput, inner: u32) -> Result<Duration> {
    let start = Instant::now();
    for _ in 0..inner {
        std::hint::black_box(run_once(method, input)?);
    }
    Ok(start.elapsed() / inner)
}

fn median<T: PartialOrd + Copy>(mut v: Vec<T>) -> T {
    v.sort_by(|a, b| a.partial_cmp(b).expect("comparable"));
    v[v.len() / 2]
}

/// Runtime ratio `t(n_large) / t(n_small)`: samples of the two sizes are
/// interleaved and the median of the per-round ratios is returned.
pub fn runtime_ratio(
    method: BenchMethod,
    n_small: usize,
    n_large: usize,
    d: usize,
    k: usize,
    repeats: usize,
    seed: u64,
) -> Result<f64> {
    let small = BenchInput::random(n_small, d, k, seed)?;
    let large = BenchInput::random(n_large, d, k, seed)?;
    let (inner_s, inner_l) = (calibrate(method, &small)?, calibrate(method, &large)?);
    let mut ratios = Vec::with_capacity(repeats.max(1));
    for _ in 0..repeats.max(1) {
        let ts = sample(method, &small, inner_s)?;
        let tl = sample(method, &large, inner_l)?;
        ratios.push(tl.as_secs_f64() / ts.as_secs_f64().max(1e-12));
    }
    Ok(median(ratios))
}

/// Times every method at every `n`.
pub fn bench_table(
    methods: &[BenchMethod],
    n_grid: &[usize],
    d: usize,
    k: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &n in n_grid {
        let input = BenchInput::random(n, d, k, seed)?;
        for &method in methods {
            let t = time_method(method, &input, repeats)?;
            rows.push(BenchRow {
                method,
                n,
                d,
                k,
                seconds: t.as_secs_f64(),
            });
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = format!("{BENCH_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.method, r.n, r.d, r.k, r.seconds);
    }
    out
}
