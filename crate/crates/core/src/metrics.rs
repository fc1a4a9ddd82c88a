//! Verification (1:1) and open-set identification (1:N) metrics.
//!
//! Thresholds are chosen among the observed scores and `+inf`; a score is
//! accepted when it is `>=` the threshold, so tied scores are all accepted
//! together. TPIR@FPIR calibrates the threshold on the top-1 scores of
//! impostor probes (probes whose identity is not enrolled) and counts a mated
//! probe as found when its top-1 match is correct and clears that threshold.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;

pub const DEFAULT_FAR_TARGETS: [f64; 3] = [1e-6, 1e-5, 1e-4];
pub const DEFAULT_RANKS: [usize; 2] = [1, 5];
pub const DEFAULT_FPIR_TARGETS: [f64; 2] = [0.01, 0.1];

/// A target is stable only with at least this many negatives per unit rate.
pub const MIN_NEGATIVES_PER_RATE: f64 = 10.0;

/// Operating point at one false-accept target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub target: f64,
    pub threshold: f64,
    /// False-accept (or false-positive identification) rate actually achieved.
    pub achieved: f64,
    /// True-accept (or true-positive identification) rate.
    pub rate: f64,
    /// Too few negatives to resolve the target.
    pub unstable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// `(far, tar)` points, one per distinct threshold, FAR ascending.
    pub roc: Vec<(f64, f64)>,
    pub tar_at_far: BTreeMap<String, OperatingPoint>,
    /// Best-threshold accuracy and its threshold.
    pub accuracy: Option<(f64, f64)>,
    pub num_pos: usize,
    pub num_neg: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub rank_k: BTreeMap<usize, f64>,
    /// Empty when there are no impostor probes.
    pub tpir_at_fpir: BTreeMap<String, OperatingPoint>,
    pub num_mated: usize,
    pub num_impostors: usize,
}

/// Key used for rate targets in reports, e.g. `1e-4`.
pub fn target_key(t: f64) -> String {
    format!("{t:e}")
}

fn check_scores(name: &str, scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Validation(format!("{name} score list is empty")));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Validation(format!("{name} score {i} is NaN")));
    }
    Ok(())
}

fn check_target(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Parameter(format!("rate target must lie in (0, 1], got {t}")));
    }
    Ok(())
}

fn sorted(scores: &[f64]) -> Vec<f64> {
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Number of entries of ascending `sorted` that are `>= threshold`.
fn count_at_least(sorted: &[f64], threshold: f64) -> usize {
    sorted.len() - sorted.partition_point(|&s| s < threshold)
}

/// Distinct candidate thresholds in ascending order, ending with `+inf`.
fn candidates(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c: Vec<f64> = a.iter().chain(b).copied().collect();
    c.push(f64::INFINITY);
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

fn operating_point(pos: &[f64], neg: &[f64], cands: &[f64], target: f64) -> OperatingPoint {
    let n_neg = neg.len() as f64;
    // false-accept rate is non-increasing along the ascending candidates
    let first = cands.partition_point(|&th| count_at_least(neg, th) as f64 / n_neg > target);
    let threshold = cands[first];
    OperatingPoint {
        target,
        threshold,
        achieved: count_at_least(neg, threshold) as f64 / n_neg,
        rate: count_at_least(pos, threshold) as f64 / pos.len() as f64,
        unstable: n_neg < MIN_NEGATIVES_PER_RATE / target,
    }
}

/// TAR at each FAR target.
pub fn tar_at_far(pos: &[f64], neg: &[f64], far_targets: &[f64]) -> Result<BTreeMap<String, OperatingPoint>> {
    check_scores("positive", pos)?;
    check_scores("negative", neg)?;
    far_targets.iter().try_for_each(|&t| check_target(t))?;
    let (pos, neg) = (sorted(pos), sorted(neg));
    let cands = candidates(&pos, &neg);
    Ok(far_targets
        .iter()
        .map(|&t| (target_key(t), operating_point(&pos, &neg, &cands, t)))
        .collect())
}

/// ROC as `(far, tar)` for every distinct threshold, from `+inf` downwards.
pub fn roc(pos: &[f64], neg: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_scores("positive", pos)?;
    check_scores("negative", neg)?;
    let (pos, neg) = (sorted(pos), sorted(neg));
    let cands = candidates(&pos, &neg);
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    Ok(cands
        .iter()
        .rev()
        .map(|&th| {
            (
                count_at_least(&neg, th) as f64 / nn,
                count_at_least(&pos, th) as f64 / np,
            )
        })
        .collect())
}

/// Best accuracy over thresholds at the midpoints of consecutive distinct
/// scores, plus one below the minimum and one above the maximum. A score is
/// accepted when it exceeds the threshold. Ties go to the higher threshold.
pub fn best_threshold_accuracy(pos: &[f64], neg: &[f64]) -> Result<(f64, f64)> {
    check_scores("positive", pos)?;
    check_scores("negative", neg)?;
    let (pos, neg) = (sorted(pos), sorted(neg));
    let total = (pos.len() + neg.len()) as f64;
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for th in accuracy_thresholds(&pos, &neg) {
        let tp = pos.len() - pos.partition_point(|&s| s <= th);
        let tn = neg.partition_point(|&s| s <= th);
        let acc = (tp + tn) as f64 / total;
        if acc >= best.0 {
            best = (acc, th);
        }
    }
    Ok(best)
}

fn accuracy_thresholds(pos: &[f64], neg: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = pos.iter().chain(neg).copied().collect();
    u.sort_by(f64::total_cmp);
    u.dedup();
    let mut out = Vec::with_capacity(u.len() + 1);
    out.push(u[0] - 1.0);
    out.extend(u.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    out.push(u[u.len() - 1] + 1.0);
    out
}

pub fn verification_report(
    pos: &[f64],
    neg: &[f64],
    far_targets: &[f64],
    with_accuracy: bool,
) -> Result<VerificationReport> {
    Ok(VerificationReport {
        roc: roc(pos, neg)?,
        tar_at_far: tar_at_far(pos, neg, far_targets)?,
        accuracy: if with_accuracy {
            Some(best_threshold_accuracy(pos, neg)?)
        } else {
            None
        },
        num_pos: pos.len(),
        num_neg: neg.len(),
    })
}

/// Cosine similarity of every probe row against every gallery row.
pub fn cosine_matrix(
    probes: ArrayView2<'_, f64>,
    gallery: ArrayView2<'_, f64>,
    exec: Execution,
) -> Result<Array2<f64>> {
    if probes.ncols() != gallery.ncols() {
        return Err(Error::Dimension(format!(
            "probe dimension {} differs from gallery dimension {}",
            probes.ncols(),
            gallery.ncols()
        )));
    }
    check_rows("probe", probes)?;
    check_rows("gallery", gallery)?;
    let p = crate::set::l2_normalize_rows(probes);
    let g = crate::set::l2_normalize_rows(gallery);
    let rows: Vec<usize> = (0..p.nrows()).collect();
    let sims = exec.map(&rows, |&i| {
        g.rows()
            .into_iter()
            .map(|row| p.row(i).dot(&row).clamp(-1.0, 1.0))
            .collect::<Vec<f64>>()
    });
    let flat: Vec<f64> = sims.into_iter().flatten().collect();
    Array2::from_shape_vec((p.nrows(), g.nrows()), flat).map_err(|e| Error::Dimension(e.to_string()))
}

fn check_rows(name: &str, m: ArrayView2<'_, f64>) -> Result<()> {
    match m
        .rows()
        .into_iter()
        .position(|r| !(r.dot(&r) > 0.0) || r.iter().any(|v| !v.is_finite()))
    {
        Some(i) => Err(Error::DegenerateVector(format!(
            "{name} representation {i} is zero or non-finite"
        ))),
        None => Ok(()),
    }
}

/// Gallery indices ordered by descending score, lower index first on ties.
pub fn ranked_gallery(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Open-set 1:N evaluation with cosine scores.
#[allow(clippy::too_many_arguments)]
pub fn identification(
    probes: ArrayView2<'_, f64>,
    probe_labels: &[i64],
    gallery: ArrayView2<'_, f64>,
    gallery_labels: &[i64],
    ranks: &[usize],
    fpir_targets: &[f64],
    exec: Execution,
) -> Result<IdentificationReport> {
    if gallery.nrows() == 0 {
        return Err(Error::Validation("gallery is empty".into()));
    }
    if probes.nrows() != probe_labels.len() || gallery.nrows() != gallery_labels.len() {
        return Err(Error::Validation(format!(
            "label counts ({} probes, {} gallery) do not match representations ({}, {})",
            probe_labels.len(),
            gallery_labels.len(),
            probes.nrows(),
            gallery.nrows()
        )));
    }
    if let Some(&k) = ranks.iter().find(|&&k| k == 0) {
        return Err(Error::Parameter(format!("rank must be positive, got {k}")));
    }
    fpir_targets.iter().try_for_each(|&t| check_target(t))?;
    let sims = cosine_matrix(probes, gallery, exec)?;
    identification_from_scores(sims.view(), probe_labels, gallery_labels, ranks, fpir_targets)
}

/// Same as [`identification`] on a precomputed `probes x gallery` score matrix.
pub fn identification_from_scores(
    sims: ArrayView2<'_, f64>,
    probe_labels: &[i64],
    gallery_labels: &[i64],
    ranks: &[usize],
    fpir_targets: &[f64],
) -> Result<IdentificationReport> {
    if sims.nrows() != probe_labels.len() || sims.ncols() != gallery_labels.len() || sims.ncols() == 0 {
        return Err(Error::Validation("score matrix does not match the label lists".into()));
    }
    let enrolled: std::collections::BTreeSet<i64> = gallery_labels.iter().copied().collect();
    let mut mated_rank = Vec::new();
    let mut mated_top1 = Vec::new();
    let mut impostor_top1 = Vec::new();
    for (row, &label) in sims.rows().into_iter().zip(probe_labels) {
        let scores = row.to_vec();
        let order = ranked_gallery(&scores);
        let top = scores[order[0]];
        if enrolled.contains(&label) {
            let pos = order
                .iter()
                .position(|&g| gallery_labels[g] == label)
                .expect("enrolled label");
            mated_rank.push(pos + 1);
            mated_top1.push((gallery_labels[order[0]] == label, top));
        } else {
            impostor_top1.push(top);
        }
    }
    if mated_rank.is_empty() {
        return Err(Error::Validation("no probe identity is enrolled in the gallery".into()));
    }
    let nm = mated_rank.len() as f64;
    let rank_k = ranks
        .iter()
        .map(|&k| (k, mated_rank.iter().filter(|&&r| r <= k).count() as f64 / nm))
        .collect();

    let mut tpir_at_fpir = BTreeMap::new();
    if !impostor_top1.is_empty() {
        let imp = sorted(&impostor_top1);
        let correct: Vec<f64> = mated_top1.iter().filter(|(hit, _)| *hit).map(|&(_, s)| s).collect();
        let mut all_top: Vec<f64> = mated_top1.iter().map(|&(_, s)| s).collect();
        all_top.extend(&imp);
        let cands = candidates(&all_top, &[]);
        let correct = sorted(&correct);
        for &t in fpir_targets {
            let mut op = operating_point(&correct, &imp, &cands, t);
            op.rate = count_at_least(&correct, op.threshold) as f64 / nm;
            tpir_at_fpir.insert(target_key(t), op);
        }
    }
    Ok(IdentificationReport {
        rank_k,
        tpir_at_fpir,
        num_mated: mated_rank.len(),
        num_impostors: impostor_top1.len(),
    })
}

/// Plot-ready `far,tar` CSV.
pub fn roc_csv(roc: &[(f64, f64)]) -> String {
    let mut out = String::from("far,tar\n");
    for (far, tar) in roc {
        let _ = writeln!(out, "{far},{tar}");
    }
    out
}
