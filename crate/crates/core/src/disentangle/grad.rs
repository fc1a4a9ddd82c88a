//! Hand-derived gradients of the training objective.

use ndarray::{s, Array1, Array2, Axis};

use super::{class_index, DisentangleModel, LossBreakdown, Params, TrainingBatch};
use crate::error::Result;
use crate::exec::Execution;
use crate::set::{check_permutation, FeatureSet};

/// Loss terms and parameter gradients of `L_CE + L_img + L_set` for one instance.
pub fn instance_loss_and_grad(
    model: &DisentangleModel,
    set: &FeatureSet,
    pairing: &[usize],
) -> Result<(LossBreakdown, Params)> {
    check_permutation(pairing, set.len())?;
    let label = class_index(set)?;
    let fwd = model.forward_set(set)?;
    let dims = *model.dims();
    let p = model.params();
    let f = set.features();
    let n = set.len();
    let d_id = dims.d_id;
    let inv_n = 1.0 / n as f64;
    let mut g = Params::zeros(&dims);

    // classification
    let rep = &fwd.representation;
    let ce = model.loss_classification(rep.view(), label)?;
    let logits = model.logits(rep.view());
    let lse = super::log_sum_exp(logits.view());
    let mut dlogits = logits.mapv(|z| (z - lse).exp());
    dlogits[label] -= 1.0;
    g.cls_w = outer(rep, &dlogits);
    g.cls_b.row_mut(0).assign(&dlogits);
    let mut d_rep = p.cls_w.dot(&dlogits);

    let mut d_fid = Array2::<f64>::zeros((n, d_id));
    let mut d_fva = Array2::<f64>::zeros((n, dims.d_va));
    let dec_t = p.dec_w.t();

    // swapped-identity reconstruction
    let swapped = fwd.f_id.select(Axis(0), pairing);
    let recon = model.decode_rows(swapped.view(), fwd.f_va.view());
    let (img, g_img) = distance_grad(f, &recon, inv_n);
    let z_img = ndarray::concatenate![Axis(1), swapped, fwd.f_va];
    g.dec_w += &z_img.t().dot(&g_img);
    g.dec_b += &g_img.sum_axis(Axis(0));
    let dz = g_img.dot(&dec_t);
    for (i, &j) in pairing.iter().enumerate() {
        let mut row = d_fid.row_mut(j);
        row += &dz.slice(s![i, ..d_id]);
    }
    d_fva += &dz.slice(s![.., d_id..]);

    // set-representation reconstruction
    let ids = rep.broadcast((n, d_id)).expect("broadcast row").to_owned();
    let recon = model.decode_rows(ids.view(), fwd.f_va.view());
    let (set_loss, g_set) = distance_grad(f, &recon, inv_n);
    let z_set = ndarray::concatenate![Axis(1), ids, fwd.f_va];
    g.dec_w += &z_set.t().dot(&g_set);
    g.dec_b += &g_set.sum_axis(Axis(0));
    let dz = g_set.dot(&dec_t);
    d_rep += &dz.slice(s![.., ..d_id]).sum_axis(Axis(0));
    d_fva += &dz.slice(s![.., d_id..]);

    // F = sum_i alpha_i beta_i f_id_i
    d_fid += &outer(&fwd.weights, &d_rep);
    let d_w = fwd.f_id.dot(&d_rep);
    let d_alpha = &d_w * &fwd.beta;
    let d_beta = &d_w * &fwd.alpha;

    // alpha = sigmoid(f_va q)
    let d_s = &d_alpha * &fwd.alpha.mapv(|a| a * (1.0 - a));
    g.quality.row_mut(0).assign(&fwd.f_va.t().dot(&d_s));
    d_fva += &outer(&d_s, &p.quality.row(0).to_owned());

    // beta_i = sum_j P_ij / c_j with c_j = sum_l P_lj, P = softmax(tau A)
    let probs = &fwd.assignments.inter;
    let norm = &fwd.assignments.intra;
    let col_mass = probs.sum_axis(Axis(0));
    let k = dims.k;
    let mut d_probs = Array2::<f64>::zeros((n, k));
    for j in 0..k {
        let c = col_mass[j];
        let shared: f64 = (0..n).map(|l| d_beta[l] * norm[[l, j]]).sum::<f64>() / c;
        for i in 0..n {
            d_probs[[i, j]] = d_beta[i] / c - shared;
        }
    }
    let mut d_raw = Array2::<f64>::zeros((n, k));
    for i in 0..n {
        let inner: f64 = (0..k).map(|j| d_probs[[i, j]] * probs[[i, j]]).sum();
        for j in 0..k {
            d_raw[[i, j]] = model.tau * probs[[i, j]] * (d_probs[[i, j]] - inner);
        }
    }
    d_fva += &d_raw.dot(&p.vocab);
    g.vocab = d_raw.t().dot(&fwd.f_va);

    // encoders
    g.enc_va_w = f.t().dot(&d_fva);
    g.enc_va_b.row_mut(0).assign(&d_fva.sum_axis(Axis(0)));
    g.enc_id_w = f.t().dot(&d_fid);
    g.enc_id_b.row_mut(0).assign(&d_fid.sum_axis(Axis(0)));

    Ok((LossBreakdown { ce, img, set: set_loss }, g))
}

/// Batch-mean loss and gradient. Per-instance work runs under `exec`; the
/// reduction is sequential in instance order, so the result does not depend
/// on the execution strategy.
pub fn total_loss_and_grad(
    model: &DisentangleModel,
    batch: &TrainingBatch,
    pairings: &[Vec<usize>],
    exec: Execution,
) -> Result<(LossBreakdown, Params)> {
    let pairs: Vec<(&FeatureSet, &Vec<usize>)> = batch.instances.iter().zip(pairings).collect();
    let per_instance = exec.try_map(&pairs, |(set, pairing)| instance_loss_and_grad(model, set, pairing))?;
    let mut loss = LossBreakdown::default();
    let mut grad = Params::zeros(model.dims());
    for (l, g) in &per_instance {
        loss.ce += l.ce;
        loss.img += l.img;
        loss.set += l.set;
        grad.add_assign(g);
    }
    let m = per_instance.len() as f64;
    loss.ce /= m;
    loss.img /= m;
    loss.set /= m;
    grad.scale(1.0 / m);
    Ok((loss, grad))
}

/// Mean row distance `|a_i - b_i|` scaled by `scale * n`, and its gradient
/// with respect to `b`. Zero residual rows get a zero subgradient.
fn distance_grad(a: ndarray::ArrayView2<'_, f64>, b: &Array2<f64>, scale: f64) -> (f64, Array2<f64>) {
    let mut resid = &a - b;
    let mut total = 0.0;
    for mut row in resid.rows_mut() {
        let norm = row.dot(&row).sqrt();
        total += norm;
        if norm > 0.0 {
            row.mapv_inplace(|v| -scale * v / norm);
        } else {
            row.fill(0.0);
        }
    }
    (total * scale, resid)
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let col = a.view().insert_axis(Axis(1));
    let row = b.view().insert_axis(Axis(0));
    col.dot(&row)
}
