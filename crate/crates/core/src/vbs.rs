//! Vocabulary-based burst suppression.
//!
//! Variance features are scored against a vocabulary of visual words
//! (`A = f_va V^T`), each element's scores are turned into a distribution over
//! words (inter-word softmax), each word's column is L1-normalised so crowded
//! words share a unit budget (intra-word), and the burst score of an element is
//! the sum of its normalised row. Elements in crowded words therefore get small
//! scores and elements in rare words get large ones.
//!
//! The whole chain costs `O(nkd)`: one `n x d` by `d x k` product plus `O(nk)`
//! normalisation work.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::set::{ensure_finite, l2_normalize_rows, WeightVector};

/// Softmax temperature used when nothing else is configured.
pub const DEFAULT_TAU: f64 = 10.0;
/// Vocabulary size used when nothing else is configured.
pub const DEFAULT_WORDS: usize = 32;

/// A `k x d` codebook of visual words over variance features.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Array2<f64>,
}

impl Vocabulary {
    pub fn new(words: Array2<f64>) -> Result<Self> {
        if words.nrows() == 0 || words.ncols() == 0 {
            return Err(Error::Validation("vocabulary needs at least one non-empty word".into()));
        }
        ensure_finite(words.view(), "vocabulary")?;
        Ok(Self { words })
    }

    /// Draws every entry i.i.d. from `N(0, 1/d)`.
    pub fn random<R: Rng + ?Sized>(k: usize, d: usize, rng: &mut R) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(Error::Parameter(format!("vocabulary shape {k}x{d}")));
        }
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("positive std");
        Self::new(Array2::from_shape_fn((k, d), |_| normal.sample(rng)))
    }

    pub fn words(&self) -> ArrayView2<'_, f64> {
        self.words.view()
    }

    pub fn k(&self) -> usize {
        self.words.nrows()
    }

    pub fn dim(&self) -> usize {
        self.words.ncols()
    }

    /// Fails if any word has zero norm; such a word can never win an assignment.
    pub fn check_nondegenerate(&self) -> Result<()> {
        for (j, w) in self.words.rows().into_iter().enumerate() {
            if w.dot(&w) == 0.0 {
                return Err(Error::DegenerateVector(format!("visual word {j} has zero norm")));
            }
        }
        Ok(())
    }
}

/// How assignment scores become per-element word distributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AssignMode {
    /// `softmax(tau * scores)`; `tau = 0` gives uniform rows.
    Soft { tau: f64 },
    /// One-hot at the row argmax, the `tau -> infinity` limit.
    Hard,
}

impl AssignMode {
    pub fn soft(tau: f64) -> Result<Self> {
        if !tau.is_finite() || tau < 0.0 {
            return Err(Error::Parameter(format!(
                "temperature must be finite and >= 0, got {tau}"
            )));
        }
        Ok(AssignMode::Soft { tau })
    }

    pub fn tau(self) -> f64 {
        match self {
            AssignMode::Soft { tau } => tau,
            AssignMode::Hard => f64::INFINITY,
        }
    }
}

impl Default for AssignMode {
    fn default() -> Self {
        AssignMode::Soft { tau: DEFAULT_TAU }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VbsConfig {
    pub mode: AssignMode,
    /// L2-normalise variance features before scoring them against the vocabulary.
    pub l2_normalize: bool,
}

/// All three stages of the assignment matrix for one set.
#[derive(Debug, Clone)]
pub struct AssignmentMatrix {
    pub raw: Array2<f64>,
    pub inter: Array2<f64>,
    pub intra: Array2<f64>,
    pub mode: AssignMode,
}

impl AssignmentMatrix {
    pub fn burst_scores(&self) -> WeightVector {
        burst_scores(self.intra.view())
    }
}

/// Raw scores `f_va V^T`, shape `n x k`.
pub fn assign(f_va: ArrayView2<'_, f64>, vocab: &Vocabulary) -> Result<Array2<f64>> {
    if f_va.ncols() != vocab.dim() {
        return Err(Error::Dimension(format!(
            "variance features have {} columns, vocabulary words have {}",
            f_va.ncols(),
            vocab.dim()
        )));
    }
    Ok(f_va.dot(&vocab.words.t()))
}

/// Turns each row of raw scores into a distribution over words.
pub fn inter_word_normalize(raw: ArrayView2<'_, f64>, mode: AssignMode) -> Result<Array2<f64>> {
    let mut out = raw.to_owned();
    match mode {
        AssignMode::Soft { tau } => {
            if !tau.is_finite() || tau < 0.0 {
                return Err(Error::Parameter(format!(
                    "temperature must be finite and >= 0, got {tau}"
                )));
            }
            for mut row in out.rows_mut() {
                row.mapv_inplace(|a| tau * a);
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let total = row.sum();
                row /= total;
            }
        }
        AssignMode::Hard => {
            for mut row in out.rows_mut() {
                let winner = argmax_lowest(row.iter().copied());
                row.fill(0.0);
                row[winner] = 1.0;
            }
        }
    }
    Ok(out)
}

/// Divides every word column by its L1 mass. Empty columns stay zero.
///
/// Only exactly-zero columns count as empty. Soft assignment at high
/// temperature produces tiny but valid column masses; hard-assignment columns
/// hold integer counts.
pub fn intra_word_normalize(inter: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = inter.to_owned();
    for mut col in out.columns_mut() {
        let mass = col.fold(0.0, |acc, v| acc + v.abs());
        if mass == 0.0 {
            col.fill(0.0);
        } else {
            col /= mass;
        }
    }
    out
}

/// `beta_i = sum_j intra[i, j]`.
pub fn burst_scores(intra: ArrayView2<'_, f64>) -> WeightVector {
    let beta: Array1<f64> = intra.sum_axis(Axis(1));
    WeightVector::new(beta).expect("normalised assignments are finite")
}

/// Runs every stage and keeps the intermediates.
pub fn vbs_assignments(f_va: ArrayView2<'_, f64>, vocab: &Vocabulary, config: &VbsConfig) -> Result<AssignmentMatrix> {
    ensure_finite(f_va, "variance features")?;
    let raw = if config.l2_normalize {
        assign(l2_normalize_rows(f_va).view(), vocab)?
    } else {
        assign(f_va, vocab)?
    };
    let inter = inter_word_normalize(raw.view(), config.mode)?;
    let intra = intra_word_normalize(inter.view());
    Ok(AssignmentMatrix {
        raw,
        inter,
        intra,
        mode: config.mode,
    })
}

/// Burst scores for one set of variance features.
pub fn vbs_pipeline(f_va: ArrayView2<'_, f64>, vocab: &Vocabulary, config: &VbsConfig) -> Result<WeightVector> {
    Ok(vbs_assignments(f_va, vocab, config)?.burst_scores())
}

/// Hard-assignment word index of every row.
pub fn hard_words(f_va: ArrayView2<'_, f64>, vocab: &Vocabulary) -> Result<Vec<usize>> {
    let raw = assign(f_va, vocab)?;
    Ok(raw
        .rows()
        .into_iter()
        .map(|r| argmax_lowest(r.iter().copied()))
        .collect())
}

fn argmax_lowest(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (j, v) in values.enumerate() {
        if v > best_val {
            best = j;
            best_val = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, s};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eye(n: usize) -> Array2<f64> {
        Array2::eye(n)
    }

    #[test]
    fn assign_examples() {
        let vocab = Vocabulary::new(eye(2)).unwrap();
        assert_eq!(assign(eye(2).view(), &vocab).unwrap(), eye(2));

        let words = eye(4) * 2.0;
        let vocab = Vocabulary::new(words.clone()).unwrap();
        let f = words.slice(s![3..4, ..]).to_owned();
        let raw = assign(f.view(), &vocab).unwrap();
        assert_eq!(raw, array![[0.0, 0.0, 0.0, 4.0]]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = Array2::from_shape_fn((5, 8), |_| rng.gen_range(-1.0..1.0));
        let vocab = Vocabulary::random(4, 8, &mut rng).unwrap();
        let raw = assign(f.view(), &vocab).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let mut dot = 0.0;
                for c in 0..8 {
                    dot += f[[i, c]] * vocab.words()[[j, c]];
                }
                assert!((raw[[i, j]] - dot).abs() <= 1e-12);
            }
        }

        let bad = Array2::zeros((2, 3));
        assert!(matches!(assign(bad.view(), &vocab), Err(Error::Dimension(_))));
    }

    #[test]
    fn inter_word_examples() {
        let raw = array![[0.3, -1.0, 2.0, 0.0], [5.0, 1.0, 1.0, 1.0], [0.0, 0.0, 0.0, 9.0]];
        let uniform = inter_word_normalize(raw.view(), AssignMode::soft(0.0).unwrap()).unwrap();
        assert!(uniform.iter().all(|&v| v == 0.25));

        let hard = inter_word_normalize(array![[0.1, 0.9, 0.9]].view(), AssignMode::Hard).unwrap();
        assert_eq!(hard, array![[0.0, 1.0, 0.0]]);

        let soft = inter_word_normalize(array![[1.0, 0.0]].view(), AssignMode::soft(10.0).unwrap()).unwrap();
        let e = 10f64.exp();
        assert!((soft[[0, 0]] - e / (e + 1.0)).abs() <= 1e-15);
        assert!((soft[[0, 1]] - 1.0 / (e + 1.0)).abs() <= 1e-15);

        assert!(matches!(AssignMode::soft(-1.0), Err(Error::Parameter(_))));
        assert!(matches!(
            inter_word_normalize(raw.view(), AssignMode::Soft { tau: -2.0 }),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn softmax_survives_large_scores() {
        let raw = array![[1000.0, 999.0, -1000.0]];
        let p = inter_word_normalize(raw.view(), AssignMode::soft(10.0).unwrap()).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn intra_word_examples() {
        let out = intra_word_normalize(array![[0.5], [0.5]].view());
        assert_eq!(out, array![[0.5], [0.5]]);
        let out = intra_word_normalize(array![[2.0], [2.0], [4.0]].view());
        assert_eq!(out, array![[0.25], [0.25], [0.5]]);

        // hard assignment: 3 of 6 elements on word 1, word 3 empty
        let inter = array![
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ];
        let out = intra_word_normalize(inter.view());
        for i in 0..3 {
            assert_eq!(out[[i, 1]], 1.0 / 3.0);
        }
        assert!(out.column(3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn burst_score_examples() {
        let words = eye(4);
        let vocab = Vocabulary::new(words).unwrap();
        let hard = VbsConfig {
            mode: AssignMode::Hard,
            l2_normalize: false,
        };

        let f = array![
            [1.0, 0.0, 0.0, 0.0],
            [0.9, 0.1, 0.0, 0.0],
            [1.0, 0.2, 0.0, 0.0],
            [0.8, 0.0, 0.3, 0.0]
        ];
        let beta = vbs_pipeline(f.view(), &vocab, &hard).unwrap();
        assert_eq!(beta.as_array(), &array![0.25, 0.25, 0.25, 0.25]);

        // occupancy (3, 3, 3, 1)
        let mut rows = Vec::new();
        for w in 0..4 {
            let count = if w == 3 { 1 } else { 3 };
            for c in 0..count {
                let mut r = vec![0.0; 4];
                r[w] = 1.0 + 0.1 * c as f64;
                rows.push(r);
            }
        }
        let flat: Vec<f64> = rows.concat();
        let f = Array2::from_shape_vec((10, 4), flat).unwrap();
        let beta = vbs_pipeline(f.view(), &vocab, &hard).unwrap();
        for i in 0..9 {
            assert_eq!(beta.as_array()[i], 1.0 / 3.0);
        }
        assert_eq!(beta.as_array()[9], 1.0);

        // a single element owns all of its word mass: one word under hard
        // assignment, every one of the k words under soft assignment
        let single = array![[0.3, -0.2, 0.5, 0.1]];
        let beta = vbs_pipeline(single.view(), &vocab, &hard).unwrap();
        assert_eq!(beta.as_array()[0], 1.0);
        let beta = vbs_pipeline(single.view(), &vocab, &VbsConfig::default()).unwrap();
        assert!((beta.as_array()[0] - 4.0).abs() <= 1e-12);
    }

    #[test]
    fn no_burstiness_gives_uniform_scores() {
        let vocab = Vocabulary::new(eye(5)).unwrap();
        let beta = vbs_pipeline(eye(5).view(), &vocab, &VbsConfig::default()).unwrap();
        for &b in beta.as_array() {
            assert!((b - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn pipeline_matches_stepwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let k = 6;
        let d = 5;
        let vocab = Vocabulary::random(k, d, &mut rng).unwrap();
        // bursty: many copies jittered around one point, a few elsewhere
        let center: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = Array2::from_shape_fn((12, d), |(i, c)| {
            if i < 9 {
                center[c] + rng.gen_range(-0.05..0.05)
            } else {
                rng.gen_range(-1.0..1.0)
            }
        });
        let tau = 10.0;
        let beta = vbs_pipeline(f.view(), &vocab, &VbsConfig::default()).unwrap();

        let n = f.nrows();
        let mut p = vec![vec![0.0; k]; n];
        for i in 0..n {
            let scores: Vec<f64> = (0..k)
                .map(|j| tau * (0..d).map(|c| f[[i, c]] * vocab.words()[[j, c]]).sum::<f64>())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            for j in 0..k {
                p[i][j] = (scores[j] - m).exp() / z;
            }
        }
        for i in 0..n {
            let mut b = 0.0;
            for j in 0..k {
                let col: f64 = (0..n).map(|l| p[l][j]).sum();
                b += p[i][j] / col;
            }
            assert!(
                (beta.as_array()[i] - b).abs() <= 1e-10,
                "{i}: {} vs {b}",
                beta.as_array()[i]
            );
        }
        // the bursty cluster is suppressed relative to the scattered elements
        let bursty_mean: f64 = beta.as_array().slice(s![..9]).mean().unwrap();
        let rare_mean: f64 = beta.as_array().slice(s![9..]).mean().unwrap();
        assert!(bursty_mean < rare_mean);
    }

    #[test]
    fn l2_flag_changes_input_scale_only() {
        let vocab = Vocabulary::new(eye(3)).unwrap();
        let f = array![[10.0, 0.0, 0.0], [0.0, 0.1, 0.0]];
        let cfg = VbsConfig {
            mode: AssignMode::soft(1.0).unwrap(),
            l2_normalize: true,
        };
        let a = vbs_assignments(f.view(), &vocab, &cfg).unwrap();
        assert_eq!(a.raw, array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
    }

    #[test]
    fn degenerate_word_detected() {
        let mut w = eye(3);
        w.row_mut(1).fill(0.0);
        let vocab = Vocabulary::new(w).unwrap();
        assert!(vocab.check_nondegenerate().is_err());
        assert!(Vocabulary::new(eye(3)).unwrap().check_nondegenerate().is_ok());
    }

    fn random_case(seed: u64, n: usize, k: usize, d: usize) -> (Array2<f64>, Vocabulary) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = Array2::from_shape_fn((n, d), |_| rng.gen_range(-2.0..2.0));
        (f, Vocabulary::random(k, d, &mut rng).unwrap())
    }

    proptest! {
        #[test]
        fn soft_stages_are_stochastic(seed in any::<u64>(), n in 1usize..=64, k in 1usize..=32, tau in 0.0f64..50.0) {
            let (f, vocab) = random_case(seed, n, k, 8);
            let cfg = VbsConfig { mode: AssignMode::soft(tau).unwrap(), l2_normalize: false };
            let a = vbs_assignments(f.view(), &vocab, &cfg).unwrap();
            for row in a.inter.rows() {
                prop_assert!((row.sum() - 1.0).abs() <= 1e-9);
            }
            for col in a.intra.columns() {
                prop_assert!((col.sum() - 1.0).abs() <= 1e-9);
            }
            prop_assert!(a.burst_scores().as_array().iter().all(|&b| b > 0.0));
        }

        #[test]
        fn hard_mode_democratizes_words(seed in any::<u64>(), n in 1usize..=64, k in 1usize..=16) {
            let (f, vocab) = random_case(seed, n, k, 4);
            let cfg = VbsConfig { mode: AssignMode::Hard, l2_normalize: false };
            let beta = vbs_pipeline(f.view(), &vocab, &cfg).unwrap();
            let words = hard_words(f.view(), &vocab).unwrap();
            let mut count = vec![0usize; k];
            let mut mass = vec![0.0f64; k];
            for (i, &w) in words.iter().enumerate() {
                count[w] += 1;
                mass[w] += beta.as_array()[i];
            }
            for w in 0..k {
                if count[w] > 0 {
                    prop_assert!((mass[w] - 1.0).abs() <= 1e-12);
                }
            }
            for i in 0..n {
                for j in 0..n {
                    if count[words[i]] > count[words[j]] {
                        prop_assert!(beta.as_array()[i] < beta.as_array()[j]);
                    }
                }
            }
        }

        #[test]
        fn burst_scores_are_permutation_equivariant(seed in any::<u64>(), n in 1usize..=24) {
            let (f, vocab) = random_case(seed, n, 5, 6);
            let mut perm: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let fp = f.select(Axis(0), &perm);
            for cfg in [VbsConfig::default(), VbsConfig { mode: AssignMode::Hard, l2_normalize: false }] {
                let b = vbs_pipeline(f.view(), &vocab, &cfg).unwrap();
                let bp = vbs_pipeline(fp.view(), &vocab, &cfg).unwrap();
                for (i, &p) in perm.iter().enumerate() {
                    prop_assert!((bp.as_array()[i] - b.as_array()[p]).abs() <= 1e-12);
                }
            }
        }
    }
}
