//! Aggregation methods over whole datasets, and protocol scoring.
//!
//! With a model, every method pools the identity features `f_id`; quality
//! scores `alpha` and burst scores `beta` come from the model. Without a
//! model the raw features are pooled and only `sum`, `gmp` and `da` are
//! available.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};

use crate::baselines::{self, GramSource};
use crate::disentangle::{DisentangleModel, ForwardOptions};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{self, IdentificationReport, VerificationReport};
use crate::set::{FeatureSet, MethodTag, SetRepresentation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AggregateMethod {
    Sum,
    Attention,
    Vbs,
    Vba,
    Gmp,
    Da,
    VbaGmp,
    VbaDa,
}

impl AggregateMethod {
    pub const ALL: [AggregateMethod; 8] = [
        AggregateMethod::Sum,
        AggregateMethod::Attention,
        AggregateMethod::Vbs,
        AggregateMethod::Vba,
        AggregateMethod::Gmp,
        AggregateMethod::Da,
        AggregateMethod::VbaGmp,
        AggregateMethod::VbaDa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregateMethod::Sum => "sum",
            AggregateMethod::Attention => "attention",
            AggregateMethod::Vbs => "vbs",
            AggregateMethod::Vba => "vba",
            AggregateMethod::Gmp => "gmp",
            AggregateMethod::Da => "da",
            AggregateMethod::VbaGmp => "vba+gmp",
            AggregateMethod::VbaDa => "vba+da",
        }
    }

    pub fn tag(self) -> MethodTag {
        match self {
            AggregateMethod::Sum => MethodTag::Sum,
            AggregateMethod::Attention => MethodTag::Attention,
            AggregateMethod::Vbs => MethodTag::Vbs,
            AggregateMethod::Vba => MethodTag::Vba,
            AggregateMethod::Gmp => MethodTag::Gmp,
            AggregateMethod::Da => MethodTag::Da,
            AggregateMethod::VbaGmp | AggregateMethod::VbaDa => MethodTag::Composite,
        }
    }

    fn uses_alpha(self) -> bool {
        matches!(
            self,
            AggregateMethod::Attention | AggregateMethod::Vba | AggregateMethod::VbaGmp | AggregateMethod::VbaDa
        )
    }

    fn uses_beta(self) -> bool {
        matches!(
            self,
            AggregateMethod::Vbs | AggregateMethod::Vba | AggregateMethod::VbaGmp | AggregateMethod::VbaDa
        )
    }

    pub fn needs_model(self) -> bool {
        self.uses_alpha() || self.uses_beta()
    }
}

impl fmt::Display for AggregateMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregateMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown aggregation method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateOptions {
    pub forward: ForwardOptions,
    pub ridge: f64,
    pub da_iterations: usize,
    pub da_tol: f64,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self {
            forward: ForwardOptions::default(),
            ridge: baselines::DEFAULT_RIDGE,
            da_iterations: baselines::DEFAULT_DA_ITERATIONS,
            da_tol: baselines::DEFAULT_DA_TOL,
        }
    }
}

/// A set representation with the per-element factors that produced it.
#[derive(Debug, Clone)]
pub struct Aggregated {
    pub representation: SetRepresentation,
    pub alpha: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
    pub weights: Array1<f64>,
}

pub fn aggregate_set(
    set: &FeatureSet,
    method: AggregateMethod,
    model: Option<&DisentangleModel>,
    opts: &AggregateOptions,
) -> Result<Aggregated> {
    let (pooled, source, alpha, beta) = match model {
        Some(model) => {
            let fwd = model.forward_set_with(set, &opts.forward)?;
            let alpha = method.uses_alpha().then_some(fwd.alpha);
            let beta = method.uses_beta().then_some(fwd.beta);
            (fwd.f_id, GramSource::Identity, alpha, beta)
        }
        None if method.needs_model() => {
            return Err(Error::Parameter(format!("method {method} needs a trained model")));
        }
        None => (set.features().to_owned(), GramSource::Entangled, None, None),
    };
    let n = pooled.nrows();
    let mut weights = Array1::ones(n);
    if let Some(a) = &alpha {
        weights *= a;
    }
    if let Some(b) = &beta {
        weights *= b;
    }
    match method {
        AggregateMethod::Gmp | AggregateMethod::VbaGmp => {
            let g = baselines::gram_of(pooled.view(), source);
            weights *= baselines::gmp_weights(&g, opts.ridge)?.as_array();
        }
        AggregateMethod::Da | AggregateMethod::VbaDa => {
            let g = baselines::gram_of(pooled.view(), source);
            weights *= baselines::da_weights(&g, opts.da_iterations, opts.da_tol)?
                .weights
                .as_array();
        }
        _ => {}
    }
    let vector = pooled.t().dot(&weights);
    Ok(Aggregated {
        representation: SetRepresentation::new(vector, method.tag())?,
        alpha,
        beta,
        weights,
    })
}

/// Aggregates every set; output order follows `sets`.
pub fn aggregate_all(
    sets: &[FeatureSet],
    method: AggregateMethod,
    model: Option<&DisentangleModel>,
    opts: &AggregateOptions,
    exec: Execution,
) -> Result<Vec<Aggregated>> {
    exec.try_map(sets, |set| aggregate_set(set, method, model, opts))
}

/// Stacks representation vectors as rows.
pub fn stack(reps: &[&Array1<f64>]) -> Result<Array2<f64>> {
    let d = reps.first().map(|r| r.len()).unwrap_or(0);
    if reps.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension("representations have different lengths".into()));
    }
    let flat: Vec<f64> = reps.iter().flat_map(|r| r.iter().copied()).collect();
    Array2::from_shape_vec((reps.len(), d), flat).map_err(|e| Error::Dimension(e.to_string()))
}

/// Cosine scores of verification pairs, split into genuine and impostor lists.
pub fn pair_scores(
    reps: &BTreeMap<&str, &Array1<f64>>,
    pairs: &[(String, String, bool)],
    exec: Execution,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let lookup = |id: &str| {
        reps.get(id)
            .copied()
            .ok_or_else(|| Error::Validation(format!("protocol references unknown set {id:?}")))
    };
    let scored = exec.try_map(pairs, |(a, b, same)| {
        Ok::<_, Error>((
            crate::set::cosine_similarity(lookup(a)?.view(), lookup(b)?.view())?,
            *same,
        ))
    })?;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (s, same) in scored {
        if same {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    Ok((pos, neg))
}

/// Full verification report for a pair protocol.
pub fn evaluate_verification(
    reps: &BTreeMap<&str, &Array1<f64>>,
    pairs: &[(String, String, bool)],
    far_targets: &[f64],
    exec: Execution,
) -> Result<VerificationReport> {
    let (pos, neg) = pair_scores(reps, pairs, exec)?;
    metrics::verification_report(&pos, &neg, far_targets, true)
}

/// Open-set identification report for a gallery/probe split.
pub fn evaluate_identification(
    reps: &BTreeMap<&str, (&Array1<f64>, i64)>,
    gallery: &[String],
    probes: &[String],
    ranks: &[usize],
    fpir_targets: &[f64],
    exec: Execution,
) -> Result<IdentificationReport> {
    let collect = |ids: &[String]| -> Result<(Array2<f64>, Vec<i64>)> {
        let mut vecs = Vec::with_capacity(ids.len());
        let mut labels = Vec::with_capacity(ids.len());
        for id in ids {
            let (v, label) = reps
                .get(id.as_str())
                .ok_or_else(|| Error::Validation(format!("protocol references unknown set {id:?}")))?;
            vecs.push(*v);
            labels.push(*label);
        }
        Ok((stack(&vecs)?, labels))
    };
    let (g, gl) = collect(gallery)?;
    let (p, pl) = collect(probes)?;
    metrics::identification(p.view(), &pl, g.view(), &gl, ranks, fpir_targets, exec)
}
