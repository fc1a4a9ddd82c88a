//! Set-based disentanglement model.
//!
//! Two affine encoders split each entangled feature into an identity part and
//! a variance part. The variance part drives both the quality attention
//! (`alpha = sigmoid(q . f_va)`) and burst suppression against a learned
//! vocabulary (`beta`), and the set representation is
//! `F = sum_i alpha_i beta_i f_id_i`. An affine decoder reconstructs the
//! entangled features from `[identity, variance]` pairs, either with identity
//! parts swapped inside the set or with `F` standing in for them, and a linear
//! classifier on `F` supplies the identity loss.

mod grad;
mod train;

pub use grad::{instance_loss_and_grad, total_loss_and_grad};
pub use train::{derangement, sample_instances, train, RmsProp, StepRecord, TrainConfig, TrainReport};

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::set::{check_permutation, FeatureSet, WeightVector};
use crate::vbs::{self, AssignMode, AssignmentMatrix, VbsConfig, Vocabulary};

/// Default number of faces per training instance.
pub const DEFAULT_INSTANCE_SIZE: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Entangled input feature dimension.
    pub d: usize,
    pub d_id: usize,
    pub d_va: usize,
    /// Vocabulary size.
    pub k: usize,
    /// Number of identity classes seen by the classifier.
    pub classes: usize,
}

impl ModelDims {
    /// Identity/variance widths used for common encoder outputs: 2048-d
    /// features project to 256, 512-d features keep 512. Anything else is
    /// halved.
    pub fn for_feature_dim(d: usize, k: usize, classes: usize) -> Self {
        let width = match d {
            2048 => 256,
            512 => 512,
            _ => (d / 2).max(1),
        };
        Self {
            d,
            d_id: width,
            d_va: width,
            k,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ModelDims {
            d,
            d_id,
            d_va,
            k,
            classes,
        } = *self;
        if d == 0 || d_id == 0 || d_va == 0 || k == 0 || classes == 0 {
            return Err(Error::Parameter(format!(
                "all model dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Every trainable tensor. Biases and the quality query are stored as
/// single-row matrices so all tensors share one shape type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub enc_id_w: Array2<f64>,
    pub enc_id_b: Array2<f64>,
    pub enc_va_w: Array2<f64>,
    pub enc_va_b: Array2<f64>,
    pub dec_w: Array2<f64>,
    pub dec_b: Array2<f64>,
    pub quality: Array2<f64>,
    pub vocab: Array2<f64>,
    pub cls_w: Array2<f64>,
    pub cls_b: Array2<f64>,
}

impl Params {
    pub const NAMES: [&'static str; 10] = [
        "enc_id.weight",
        "enc_id.bias",
        "enc_va.weight",
        "enc_va.bias",
        "dec.weight",
        "dec.bias",
        "quality.query",
        "vocab.words",
        "cls.weight",
        "cls.bias",
    ];

    pub fn zeros(dims: &ModelDims) -> Self {
        let ModelDims {
            d,
            d_id,
            d_va,
            k,
            classes,
        } = *dims;
        Self {
            enc_id_w: Array2::zeros((d, d_id)),
            enc_id_b: Array2::zeros((1, d_id)),
            enc_va_w: Array2::zeros((d, d_va)),
            enc_va_b: Array2::zeros((1, d_va)),
            dec_w: Array2::zeros((d_id + d_va, d)),
            dec_b: Array2::zeros((1, d)),
            quality: Array2::zeros((1, d_va)),
            vocab: Array2::zeros((k, d_va)),
            cls_w: Array2::zeros((d_id, classes)),
            cls_b: Array2::zeros((1, classes)),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Array2<f64>); 10] {
        [
            (Self::NAMES[0], &self.enc_id_w),
            (Self::NAMES[1], &self.enc_id_b),
            (Self::NAMES[2], &self.enc_va_w),
            (Self::NAMES[3], &self.enc_va_b),
            (Self::NAMES[4], &self.dec_w),
            (Self::NAMES[5], &self.dec_b),
            (Self::NAMES[6], &self.quality),
            (Self::NAMES[7], &self.vocab),
            (Self::NAMES[8], &self.cls_w),
            (Self::NAMES[9], &self.cls_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Array2<f64>); 10] {
        [
            (Self::NAMES[0], &mut self.enc_id_w),
            (Self::NAMES[1], &mut self.enc_id_b),
            (Self::NAMES[2], &mut self.enc_va_w),
            (Self::NAMES[3], &mut self.enc_va_b),
            (Self::NAMES[4], &mut self.dec_w),
            (Self::NAMES[5], &mut self.dec_b),
            (Self::NAMES[6], &mut self.quality),
            (Self::NAMES[7], &mut self.vocab),
            (Self::NAMES[8], &mut self.cls_w),
            (Self::NAMES[9], &mut self.cls_b),
        ]
    }

    pub fn add_assign(&mut self, other: &Params) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    fn shapes_match(&self, dims: &ModelDims) -> Result<()> {
        let expected = Params::zeros(dims);
        for ((name, a), (_, b)) in self.tensors().into_iter().zip(expected.tensors()) {
            if a.dim() != b.dim() {
                return Err(Error::Dimension(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    a.dim(),
                    b.dim()
                )));
            }
            crate::set::ensure_finite(a.view(), name)?;
        }
        Ok(())
    }
}

/// Where per-element quality scores come from at aggregation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QualitySource {
    /// Learned attention over variance features.
    #[default]
    Attention,
    /// L2 norm of the entangled input feature.
    FeatureNorm,
    /// Every element gets quality 1.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub quality: QualitySource,
    /// Burst scoring mode; `None` uses soft assignment at the model's temperature.
    pub mode: Option<AssignMode>,
    pub l2_normalize_va: bool,
    /// Multiply burst scores into the weights. When off every `beta_i` is 1.
    pub burst_suppression: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            quality: QualitySource::Attention,
            mode: None,
            l2_normalize_va: false,
            burst_suppression: true,
        }
    }
}

/// Forward-pass results for one set, kept for backprop and reporting.
#[derive(Debug, Clone)]
pub struct SetForward {
    pub f_id: Array2<f64>,
    pub f_va: Array2<f64>,
    pub alpha: Array1<f64>,
    pub assignments: AssignmentMatrix,
    pub beta: Array1<f64>,
    /// `alpha_i * beta_i`.
    pub weights: Array1<f64>,
    /// The set representation `F`.
    pub representation: Array1<f64>,
}

/// The three terms of the training objective for one instance or a batch mean.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub ce: f64,
    pub img: f64,
    pub set: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.ce + self.img + self.set
    }

    pub(crate) fn first_non_finite(&self) -> Option<&'static str> {
        if !self.ce.is_finite() {
            Some("L_CE")
        } else if !self.img.is_finite() {
            Some("L_recons_img")
        } else if !self.set.is_finite() {
            Some("L_recons_set")
        } else {
            None
        }
    }
}

/// A batch of training instances; each set's identity is its class index.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub instances: Vec<FeatureSet>,
}

impl TrainingBatch {
    pub fn new(instances: Vec<FeatureSet>) -> Result<Self> {
        let n_t = instances
            .first()
            .map(FeatureSet::len)
            .ok_or_else(|| Error::Validation("empty training batch".into()))?;
        if instances.iter().any(|s| s.len() != n_t) {
            return Err(Error::Validation("all instances in a batch need the same size".into()));
        }
        let mut labels: Vec<i64> = instances.iter().map(FeatureSet::identity).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != instances.len() {
            return Err(Error::Validation(
                "instance identities must be distinct within a batch".into(),
            ));
        }
        Ok(Self { instances })
    }

    pub fn instance_size(&self) -> usize {
        self.instances[0].len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisentangleModel {
    dims: ModelDims,
    /// Burst-scoring softmax temperature.
    pub tau: f64,
    params: Params,
}

impl DisentangleModel {
    /// Seeded initialisation: weights `N(0, 1/fan_in)`, zero biases, vocabulary
    /// and quality query `N(0, 1/d_va)`.
    pub fn new(dims: ModelDims, tau: f64, seed: u64) -> Result<Self> {
        dims.validate()?;
        AssignMode::soft(tau)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::zeros(&dims);
        let fill = |m: &mut Array2<f64>, fan_in: usize, rng: &mut ChaCha8Rng| {
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            m.mapv_inplace(|_| normal.sample(rng));
        };
        fill(&mut params.enc_id_w, dims.d, &mut rng);
        fill(&mut params.enc_va_w, dims.d, &mut rng);
        fill(&mut params.dec_w, dims.d_id + dims.d_va, &mut rng);
        fill(&mut params.quality, dims.d_va, &mut rng);
        params.vocab = Vocabulary::random(dims.k, dims.d_va, &mut rng)?.words().to_owned();
        fill(&mut params.cls_w, dims.d_id, &mut rng);
        Ok(Self { dims, tau, params })
    }

    pub fn from_params(dims: ModelDims, tau: f64, params: Params) -> Result<Self> {
        dims.validate()?;
        AssignMode::soft(tau)?;
        params.shapes_match(&dims)?;
        Ok(Self { dims, tau, params })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.params.vocab.clone())
    }

    fn check_input(&self, f: ArrayView2<'_, f64>) -> Result<()> {
        if f.ncols() != self.dims.d {
            return Err(Error::Dimension(format!(
                "set has {} columns, model expects {}",
                f.ncols(),
                self.dims.d
            )));
        }
        Ok(())
    }

    /// Identity and variance features of every element.
    pub fn encode(&self, set: &FeatureSet) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_input(set.features())?;
        Ok(self.encode_rows(set.features()))
    }

    pub(crate) fn encode_rows(&self, f: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        let p = &self.params;
        let f_id = f.dot(&p.enc_id_w) + &p.enc_id_b;
        let f_va = f.dot(&p.enc_va_w) + &p.enc_va_b;
        (f_id, f_va)
    }

    /// `alpha_i = sigmoid(q . f_va_i)`.
    pub fn quality_scores(&self, f_va: ArrayView2<'_, f64>) -> Result<WeightVector> {
        if f_va.ncols() != self.dims.d_va {
            return Err(Error::Dimension(format!(
                "variance features have {} columns, model expects {}",
                f_va.ncols(),
                self.dims.d_va
            )));
        }
        WeightVector::new(self.quality_rows(f_va))
    }

    pub(crate) fn quality_rows(&self, f_va: ArrayView2<'_, f64>) -> Array1<f64> {
        f_va.dot(&self.params.quality.row(0)).mapv(sigmoid)
    }

    /// Decoder applied to `[id_part, va_part]`.
    pub fn reconstruct(&self, id_part: ArrayView1<'_, f64>, va_part: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if id_part.len() != self.dims.d_id || va_part.len() != self.dims.d_va {
            return Err(Error::Dimension(format!(
                "decoder input parts of length {} and {}, expected {} and {}",
                id_part.len(),
                va_part.len(),
                self.dims.d_id,
                self.dims.d_va
            )));
        }
        let z = concatenate![Axis(0), id_part, va_part];
        Ok(z.dot(&self.params.dec_w) + &self.params.dec_b.row(0))
    }

    pub(crate) fn decode_rows(&self, id_rows: ArrayView2<'_, f64>, va_rows: ArrayView2<'_, f64>) -> Array2<f64> {
        let d_id = self.dims.d_id;
        let p = &self.params;
        id_rows.dot(&p.dec_w.slice(s![..d_id, ..])) + va_rows.dot(&p.dec_w.slice(s![d_id.., ..])) + &p.dec_b
    }

    /// Full aggregation pipeline with the training-time configuration:
    /// learned quality, soft burst scores at the model temperature.
    pub fn forward_set(&self, set: &FeatureSet) -> Result<SetForward> {
        self.forward_set_with(set, &ForwardOptions::default())
    }

    pub fn forward_set_with(&self, set: &FeatureSet, opts: &ForwardOptions) -> Result<SetForward> {
        self.check_input(set.features())?;
        let (f_id, f_va) = self.encode_rows(set.features());
        let n = set.len();
        let alpha = match opts.quality {
            QualitySource::Attention => self.quality_rows(f_va.view()),
            QualitySource::FeatureNorm => set.features().map_axis(Axis(1), |r| r.dot(&r).sqrt()),
            QualitySource::Uniform => Array1::ones(n),
        };
        let vocab = Vocabulary::new(self.params.vocab.clone())?;
        let config = VbsConfig {
            mode: opts.mode.unwrap_or(AssignMode::Soft { tau: self.tau }),
            l2_normalize: opts.l2_normalize_va,
        };
        let assignments = vbs::vbs_assignments(f_va.view(), &vocab, &config)?;
        let beta = if opts.burst_suppression {
            assignments.burst_scores().into_array()
        } else {
            Array1::ones(n)
        };
        let weights = &alpha * &beta;
        let representation = f_id.t().dot(&weights);
        if representation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("set representation is not finite".into()));
        }
        Ok(SetForward {
            f_id,
            f_va,
            alpha,
            assignments,
            beta,
            weights,
            representation,
        })
    }

    /// Mean over elements of `|f_i - Dec([f_id_pairing(i), f_va_i])|`.
    pub fn loss_recons_img(&self, set: &FeatureSet, pairing: &[usize]) -> Result<f64> {
        self.check_input(set.features())?;
        check_permutation(pairing, set.len())?;
        let (f_id, f_va) = self.encode_rows(set.features());
        let swapped = f_id.select(Axis(0), pairing);
        let recon = self.decode_rows(swapped.view(), f_va.view());
        Ok(mean_row_distance(set.features(), recon.view()))
    }

    /// Mean over elements of `|f_i - Dec([F, f_va_i])|`.
    pub fn loss_recons_set(&self, set: &FeatureSet, representation: ArrayView1<'_, f64>) -> Result<f64> {
        self.check_input(set.features())?;
        if representation.len() != self.dims.d_id {
            return Err(Error::Dimension(format!(
                "representation has length {}, model identity width is {}",
                representation.len(),
                self.dims.d_id
            )));
        }
        let (_, f_va) = self.encode_rows(set.features());
        let ids = representation
            .broadcast((set.len(), self.dims.d_id))
            .expect("broadcast row");
        let recon = self.decode_rows(ids, f_va.view());
        Ok(mean_row_distance(set.features(), recon.view()))
    }

    /// Softmax cross-entropy of the classifier applied to `F`.
    pub fn loss_classification(&self, representation: ArrayView1<'_, f64>, label: usize) -> Result<f64> {
        if representation.len() != self.dims.d_id {
            return Err(Error::Dimension(format!(
                "representation has length {}, classifier expects {}",
                representation.len(),
                self.dims.d_id
            )));
        }
        if label >= self.dims.classes {
            return Err(Error::Validation(format!(
                "label {label} out of range for {} classes",
                self.dims.classes
            )));
        }
        let logits = self.logits(representation);
        Ok(log_sum_exp(logits.view()) - logits[label])
    }

    pub(crate) fn logits(&self, representation: ArrayView1<'_, f64>) -> Array1<f64> {
        representation.dot(&self.params.cls_w) + &self.params.cls_b.row(0)
    }

    /// The three loss terms for one instance under a given swap pairing.
    pub fn instance_loss(&self, set: &FeatureSet, pairing: &[usize]) -> Result<LossBreakdown> {
        let label = class_index(set)?;
        let fwd = self.forward_set(set)?;
        Ok(LossBreakdown {
            ce: self.loss_classification(fwd.representation.view(), label)?,
            img: self.loss_recons_img(set, pairing)?,
            set: self.loss_recons_set(set, fwd.representation.view())?,
        })
    }

    /// Batch-mean objective. Swap pairings are seeded derangements (identity
    /// for single-element instances), drawn in instance order from `seed`.
    pub fn total_loss(&self, batch: &TrainingBatch, seed: u64) -> Result<LossBreakdown> {
        let pairings = batch_pairings(batch, seed);
        let mut acc = LossBreakdown::default();
        for (set, pairing) in batch.instances.iter().zip(&pairings) {
            let l = self.instance_loss(set, pairing)?;
            acc.ce += l.ce;
            acc.img += l.img;
            acc.set += l.set;
        }
        let m = batch.instances.len() as f64;
        Ok(LossBreakdown {
            ce: acc.ce / m,
            img: acc.img / m,
            set: acc.set / m,
        })
    }
}

/// One swap pairing per instance, drawn in order from a single seeded stream.
pub fn batch_pairings(batch: &TrainingBatch, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    batch.instances.iter().map(|s| derangement(s.len(), &mut rng)).collect()
}

pub(crate) fn class_index(set: &FeatureSet) -> Result<usize> {
    usize::try_from(set.identity()).map_err(|_| Error::Validation("negative class label".into()))
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(v: ArrayView1<'_, f64>) -> f64 {
    let m = v.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn mean_row_distance(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let diff = &a - &b;
    diff.rows().into_iter().map(|r| r.dot(&r).sqrt()).sum::<f64>() / a.nrows() as f64
}
