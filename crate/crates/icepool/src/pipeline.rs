//! The end-to-end pipeline: partition, coarsen, featurize, attend, and
//! classify, plus full-batch training, cross-validation, and the
//! stage-ablation harness.
//!
//! Per-graph preprocessing (everything up to the attention input) is
//! deterministic given the config and is computed once per graph, in
//! parallel across graphs. The `ICEPOOL_THREADS` environment variable
//! caps the worker count; otherwise the default pool is used.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::cegat::{
    backward, forward, standardize_edge_features, CegatParams, CegatVariant, CoarseGraphInput,
};
use crate::coarsen::{coarsen, CoarseningResult};
use crate::entropy::{connection_entropy, EntropyFeatures};
use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph};
use crate::partition::{heavy_edge_partition, Partition};
use crate::svdpool::{build_components, verify_reconstruction, SvdPoolComponents};
use crate::tensor_archive::{read_tensors, write_tensors, Tensor};

const LEAKY_SLOPE: f64 = 0.2;
const SPLIT_STREAM: u64 = 11;
const CV_STREAM: u64 = 13;
const CLASSIFIER_STREAM: u64 = 7;

/// How pooled feature matrices join the coarse node features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    /// Concatenate along the feature axis.
    Concat,
    /// Element-wise sum (dimensions always agree since every pooled
    /// matrix shares the coarse feature shape).
    Sum,
}

impl fmt::Display for Combine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Concat => write!(f, "concat"),
            Self::Sum => write!(f, "sum"),
        }
    }
}

impl FromStr for Combine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Self::Concat),
            "sum" => Ok(Self::Sum),
            other => Err(Error::InvalidArgument(format!(
                "unknown combine mode {other:?}; expected concat or sum"
            ))),
        }
    }
}

/// Pipeline configuration. The same config drives preprocessing,
/// training, and inference, so saved parameters only fit runs that use
/// the dimensions it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct IceConfig {
    /// Clusters per graph (clamped to the node count on small graphs).
    pub target_k: usize,
    /// Components kept per connection block.
    pub rank: usize,
    /// Walk radius for connection blocks (1 = direct edges).
    pub radius: usize,
    /// Attention scoring rule.
    pub variant: CegatVariant,
    pub use_svdpool: bool,
    pub use_cegat: bool,
    pub combine: Combine,
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Attention embedding width.
    pub d_hidden: usize,
    /// Scale lifted singular vectors by sqrt(sigma).
    pub weight_by_sqrt_sigma: bool,
    /// Standardize edge attributes per channel before attention.
    pub standardize_edges: bool,
}

impl Default for IceConfig {
    fn default() -> Self {
        Self {
            target_k: 4,
            rank: 2,
            radius: 1,
            variant: CegatVariant::Gat,
            use_svdpool: true,
            use_cegat: true,
            combine: Combine::Concat,
            seed: 0,
            epochs: 200,
            learning_rate: 0.1,
            d_hidden: 16,
            weight_by_sqrt_sigma: true,
            standardize_edges: true,
        }
    }
}

impl IceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_k < 1 {
            return Err(Error::InvalidArgument("target_k must be at least 1".into()));
        }
        if self.rank < 1 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        if self.radius < 1 {
            return Err(Error::InvalidArgument("radius must be at least 1".into()));
        }
        if self.d_hidden < 1 {
            return Err(Error::InvalidArgument("d_hidden must be at least 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Wall-clock seconds per pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub partition: f64,
    pub coarsen: f64,
    pub entropy: f64,
    pub svdpool: f64,
    pub attention: f64,
}

/// Everything derived from one graph before attention runs.
#[derive(Debug, Clone)]
pub struct PreprocessedGraph {
    pub partition: Partition,
    pub coarsening: CoarseningResult,
    pub entropy: EntropyFeatures,
    pub svd: Option<SvdPoolComponents>,
    pub input: CoarseGraphInput,
    pub label: usize,
    pub reconstruction_residual: Option<f64>,
    pub timings: StageTimings,
}

/// Runs every deterministic stage for one graph using the built-in
/// partitioner.
pub fn preprocess(g: &Graph, cfg: &IceConfig) -> Result<PreprocessedGraph> {
    cfg.validate()?;
    if g.n() == 0 {
        return Err(Error::InvalidArgument("graph has no nodes".into()));
    }
    let start = Instant::now();
    let k_eff = cfg.target_k.min(g.n());
    let partition = heavy_edge_partition(g, k_eff, cfg.seed)?;
    let partition_time = start.elapsed().as_secs_f64();
    preprocess_with_partition_timed(g, cfg, partition, partition_time)
}

/// Like [`preprocess`] but with a caller-supplied partition (for
/// external assignments loaded from a file).
pub fn preprocess_with_partition(
    g: &Graph,
    cfg: &IceConfig,
    partition: Partition,
) -> Result<PreprocessedGraph> {
    cfg.validate()?;
    if partition.n() != g.n() {
        return Err(Error::InvalidArgument(format!(
            "partition covers {} nodes but the graph has {}",
            partition.n(),
            g.n()
        )));
    }
    preprocess_with_partition_timed(g, cfg, partition, 0.0)
}

fn preprocess_with_partition_timed(
    g: &Graph,
    cfg: &IceConfig,
    partition: Partition,
    partition_time: f64,
) -> Result<PreprocessedGraph> {
    let mut timings = StageTimings {
        partition: partition_time,
        ..StageTimings::default()
    };

    let t = Instant::now();
    let coarsening = coarsen(g, &partition);
    timings.coarsen = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let entropy = connection_entropy(&coarsening);
    timings.entropy = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (svd, reconstruction_residual) = if cfg.use_svdpool {
        let comps = build_components(
            g,
            &partition,
            &coarsening,
            cfg.rank,
            cfg.radius,
            cfg.weight_by_sqrt_sigma,
        )?;
        let report = verify_reconstruction(g, &partition, &comps);
        (Some(comps), Some(report.residual))
    } else {
        (None, None)
    };
    timings.svdpool = t.elapsed().as_secs_f64();

    let k = partition.k();
    let combined = match (&svd, cfg.combine) {
        (Some(comps), Combine::Concat) => {
            let d = coarsening.x_coar.ncols();
            let mut combined = Array2::<f64>::zeros((k, d * (1 + cfg.rank)));
            combined.slice_mut(ndarray::s![.., 0..d]).assign(&coarsening.x_coar);
            for (l, pool) in comps.pooled.iter().enumerate() {
                combined
                    .slice_mut(ndarray::s![.., (l + 1) * d..(l + 2) * d])
                    .assign(pool);
            }
            combined
        }
        (Some(comps), Combine::Sum) => {
            let mut combined = coarsening.x_coar.clone();
            for pool in &comps.pooled {
                combined += pool;
            }
            combined
        }
        (None, _) => coarsening.x_coar.clone(),
    };

    let mut mask = Array2::from_elem((k, k), false);
    for i in 0..k {
        for j in 0..k {
            mask[[i, j]] = i == j || coarsening.a_coar[[i, j]] > 0;
        }
    }
    let e = if cfg.standardize_edges {
        standardize_edge_features(&entropy.edge_features, &mask)
    } else {
        entropy.edge_features.clone()
    };
    let input = CoarseGraphInput::new(combined, e, mask)?;

    Ok(PreprocessedGraph {
        partition,
        coarsening,
        entropy,
        svd,
        input,
        label: g.label(),
        reconstruction_residual,
        timings,
    })
}

fn thread_budget() -> Option<usize> {
    std::env::var("ICEPOOL_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
}

/// Preprocesses every graph in parallel, preserving dataset order.
pub fn preprocess_dataset(ds: &Dataset, cfg: &IceConfig) -> Result<Vec<PreprocessedGraph>> {
    cfg.validate()?;
    let work = || {
        ds.graphs()
            .par_iter()
            .map(|g| preprocess(g, cfg))
            .collect::<Result<Vec<_>>>()
    };
    match thread_budget() {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool construction failed: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Learnable parameters: optional attention tensors plus the linear
/// classifier applied to the mean-pooled representation.
#[derive(Debug, Clone, PartialEq)]
pub struct IceParams {
    pub cegat: Option<CegatParams>,
    pub classifier_w: Array2<f64>,
    pub classifier_b: Array1<f64>,
}

impl IceParams {
    /// Seeded initialization sized for `d_comb` combined features,
    /// `d_edge_in` edge channels, and `num_classes` outputs.
    pub fn init(cfg: &IceConfig, d_comb: usize, d_edge_in: usize, num_classes: usize) -> Self {
        let cegat = cfg.use_cegat.then(|| {
            CegatParams::init(
                cfg.variant,
                d_comb,
                cfg.d_hidden,
                d_edge_in,
                cfg.d_hidden,
                LEAKY_SLOPE,
                cfg.seed,
            )
        });
        let d_repr = if cfg.use_cegat { cfg.d_hidden } else { d_comb };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(CLASSIFIER_STREAM);
        let scale = 1.0 / (d_repr as f64).sqrt();
        let classifier_w =
            Array2::from_shape_fn((d_repr, num_classes), |_| rng.random_range(-scale..scale));
        let classifier_b = Array1::zeros(num_classes);
        Self {
            cegat,
            classifier_w,
            classifier_b,
        }
    }

    /// Writes all tensors to a binary archive.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = vec![
            Tensor::new(
                "classifier_w",
                vec![self.classifier_w.nrows(), self.classifier_w.ncols()],
                self.classifier_w.iter().copied().collect(),
            ),
            Tensor::new(
                "classifier_b",
                vec![self.classifier_b.len()],
                self.classifier_b.to_vec(),
            ),
        ];
        if let Some(p) = &self.cegat {
            tensors.push(Tensor::new(
                "cegat_w",
                vec![p.w.nrows(), p.w.ncols()],
                p.w.iter().copied().collect(),
            ));
            tensors.push(Tensor::new("cegat_a", vec![p.a.len()], p.a.to_vec()));
            if let Some(w_e) = &p.w_e {
                tensors.push(Tensor::new(
                    "cegat_w_e",
                    vec![w_e.nrows(), w_e.ncols()],
                    w_e.iter().copied().collect(),
                ));
            }
            tensors.push(Tensor::new(
                "cegat_leaky_slope",
                vec![1],
                vec![p.leaky_slope],
            ));
        }
        write_tensors(path, &tensors)
    }

    /// Reads parameters back from [`IceParams::save`] output.
    pub fn load(path: &Path) -> Result<Self> {
        let tensors = read_tensors(path)?;
        let mut by_name: BTreeMap<String, Tensor> = tensors
            .into_iter()
            .map(|t| (t.name.clone(), t))
            .collect();

        let classifier_w = take_matrix(&mut by_name, path, "classifier_w")?;
        let has_cegat = by_name.contains_key("cegat_w");
        let cegat_w = if has_cegat {
            Some(take_matrix(&mut by_name, path, "cegat_w")?)
        } else {
            None
        };
        let cegat_w_e = if by_name.contains_key("cegat_w_e") {
            Some(take_matrix(&mut by_name, path, "cegat_w_e")?)
        } else {
            None
        };

        let classifier_b = take_vector(&mut by_name, path, "classifier_b")?;
        let cegat = if has_cegat {
            let a = take_vector(&mut by_name, path, "cegat_a")?;
            let slope = take_vector(&mut by_name, path, "cegat_leaky_slope")?;
            Some(CegatParams {
                w: cegat_w.unwrap(),
                a,
                w_e: cegat_w_e,
                leaky_slope: slope.first().copied().unwrap_or(LEAKY_SLOPE),
            })
        } else {
            None
        };
        Ok(Self {
            cegat,
            classifier_w,
            classifier_b,
        })
    }
}

fn archive_entry(
    by_name: &mut BTreeMap<String, Tensor>,
    path: &Path,
    name: &str,
) -> Result<Tensor> {
    by_name.remove(name).ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        line: 0,
        message: format!("archive is missing tensor {name:?}"),
    })
}

fn take_matrix(
    by_name: &mut BTreeMap<String, Tensor>,
    path: &Path,
    name: &str,
) -> Result<Array2<f64>> {
    let t = archive_entry(by_name, path, name)?;
    if t.shape.len() != 2 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            line: 0,
            message: format!("tensor {name:?} should be 2-d, got shape {:?}", t.shape),
        });
    }
    Ok(Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data)
        .expect("shape validated by the archive reader"))
}

fn take_vector(
    by_name: &mut BTreeMap<String, Tensor>,
    path: &Path,
    name: &str,
) -> Result<Array1<f64>> {
    let t = archive_entry(by_name, path, name)?;
    Ok(Array1::from_vec(t.data))
}

/// Classification output and per-stage diagnostics for one graph.
#[derive(Debug, Clone)]
pub struct IceOutput {
    pub logits: Array1<f64>,
    /// The mean-pooled representation fed to the classifier.
    pub embedding: Array1<f64>,
    pub prediction: usize,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub k: usize,
    pub entropy: Array2<f64>,
    pub reconstruction_residual: Option<f64>,
    pub timings: StageTimings,
}

fn check_param_dims(pre: &PreprocessedGraph, cfg: &IceConfig, params: &IceParams) -> Result<()> {
    let d_comb = pre.input.h.ncols();
    if cfg.use_cegat {
        let Some(cegat) = &params.cegat else {
            return Err(Error::Config(
                "config enables attention but the parameters carry no attention tensors".into(),
            ));
        };
        if cegat.w.nrows() != d_comb {
            return Err(Error::Config(format!(
                "attention expects {} combined features but preprocessing produced {d_comb}; \
                 check combine/rank settings",
                cegat.w.nrows()
            )));
        }
        if params.classifier_w.nrows() != cegat.w.ncols() {
            return Err(Error::Config(format!(
                "classifier expects {} features but attention outputs {}",
                params.classifier_w.nrows(),
                cegat.w.ncols()
            )));
        }
    } else {
        if params.cegat.is_some() {
            return Err(Error::Config(
                "config disables attention but the parameters carry attention tensors".into(),
            ));
        }
        if params.classifier_w.nrows() != d_comb {
            return Err(Error::Config(format!(
                "classifier expects {} features but preprocessing produced {d_comb}; \
                 check combine/rank settings",
                params.classifier_w.nrows()
            )));
        }
    }
    Ok(())
}

fn representation(
    pre: &PreprocessedGraph,
    cfg: &IceConfig,
    params: &IceParams,
) -> Result<Array2<f64>> {
    if cfg.use_cegat {
        forward(cfg.variant, &pre.input, params.cegat.as_ref().unwrap())
    } else {
        Ok(pre.input.h.clone())
    }
}

fn logits_from_readout(readout: &Array1<f64>, params: &IceParams) -> Array1<f64> {
    readout.dot(&params.classifier_w) + &params.classifier_b
}

fn argmax(values: &Array1<f64>) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

/// Runs the full pipeline on one graph.
pub fn run_ice(g: &Graph, cfg: &IceConfig, params: &IceParams) -> Result<IceOutput> {
    let pre = preprocess(g, cfg)?;
    check_param_dims(&pre, cfg, params)?;
    let t = Instant::now();
    let repr = representation(&pre, cfg, params)?;
    let attention = t.elapsed().as_secs_f64();
    let embedding = repr.mean_axis(Axis(0)).expect("at least one cluster");
    let logits = logits_from_readout(&embedding, params);
    let prediction = argmax(&logits);
    let mut timings = pre.timings;
    timings.attention = attention;
    Ok(IceOutput {
        prediction,
        diagnostics: Diagnostics {
            k: pre.partition.k(),
            entropy: pre.entropy.h.clone(),
            reconstruction_residual: pre.reconstruction_residual,
            timings,
        },
        logits,
        embedding,
    })
}

/// Loss, metrics, and parameter state per epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: IceParams,
    pub history: Vec<EpochMetrics>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    /// Final-parameter accuracy over the training split.
    pub final_train_accuracy: f64,
    /// Final-parameter accuracy over the validation split (equals the
    /// training accuracy when the dataset is too small to split).
    pub final_val_accuracy: f64,
    /// Mean reconstruction residual across graphs, when pooling ran.
    pub mean_residual: Option<f64>,
}

struct GradAccum {
    classifier_w: Array2<f64>,
    classifier_b: Array1<f64>,
    cegat_w: Option<Array2<f64>>,
    cegat_a: Option<Array1<f64>>,
    cegat_w_e: Option<Array2<f64>>,
}

impl GradAccum {
    fn zeros_like(params: &IceParams) -> Self {
        Self {
            classifier_w: Array2::zeros(params.classifier_w.dim()),
            classifier_b: Array1::zeros(params.classifier_b.len()),
            cegat_w: params.cegat.as_ref().map(|p| Array2::zeros(p.w.dim())),
            cegat_a: params.cegat.as_ref().map(|p| Array1::zeros(p.a.len())),
            cegat_w_e: params
                .cegat
                .as_ref()
                .and_then(|p| p.w_e.as_ref())
                .map(|w_e| Array2::zeros(w_e.dim())),
        }
    }
}

fn graph_loss_and_grads(
    pre: &PreprocessedGraph,
    cfg: &IceConfig,
    params: &IceParams,
    num_classes: usize,
    accum: &mut GradAccum,
) -> Result<(f64, bool)> {
    let repr = representation(pre, cfg, params)?;
    let k = repr.nrows() as f64;
    let readout = repr.mean_axis(Axis(0)).expect("at least one cluster");
    let logits = logits_from_readout(&readout, params);

    let max_logit = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max_logit + logits.iter().map(|l| (l - max_logit).exp()).sum::<f64>().ln();
    let loss = lse - logits[pre.label];
    let correct = argmax(&logits) == pre.label;

    let mut dlogits = Array1::<f64>::zeros(num_classes);
    for c in 0..num_classes {
        dlogits[c] = (logits[c] - lse).exp();
    }
    dlogits[pre.label] -= 1.0;

    for r in 0..readout.len() {
        for c in 0..num_classes {
            accum.classifier_w[[r, c]] += readout[r] * dlogits[c];
        }
    }
    accum.classifier_b += &dlogits;

    if cfg.use_cegat {
        let dreadout = params.classifier_w.dot(&dlogits);
        let upstream = Array2::from_shape_fn(repr.dim(), |(_, c)| dreadout[c] / k);
        let grads = backward(
            cfg.variant,
            &pre.input,
            params.cegat.as_ref().unwrap(),
            &upstream,
        )?;
        *accum.cegat_w.as_mut().unwrap() += &grads.w;
        *accum.cegat_a.as_mut().unwrap() += &grads.a;
        if let (Some(acc), Some(g)) = (accum.cegat_w_e.as_mut(), grads.w_e) {
            *acc += &g;
        }
    }
    Ok((loss, correct))
}

fn evaluate(
    pres: &[PreprocessedGraph],
    indices: &[usize],
    cfg: &IceConfig,
    params: &IceParams,
) -> Result<f64> {
    if indices.is_empty() {
        return Ok(f64::NAN);
    }
    let mut correct = 0usize;
    for &i in indices {
        let repr = representation(&pres[i], cfg, params)?;
        let readout = repr.mean_axis(Axis(0)).expect("at least one cluster");
        let logits = logits_from_readout(&readout, params);
        if argmax(&logits) == pres[i].label {
            correct += 1;
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

fn train_on(
    pres: &[PreprocessedGraph],
    train_indices: Vec<usize>,
    val_indices: Vec<usize>,
    cfg: &IceConfig,
    num_classes: usize,
) -> Result<TrainReport> {
    let d_comb = pres
        .first()
        .map(|p| p.input.h.ncols())
        .ok_or_else(|| Error::InvalidArgument("cannot train on an empty dataset".into()))?;
    let d_edge_in = pres[0].input.e.dim().2;
    let mut params = IceParams::init(cfg, d_comb, d_edge_in, num_classes);
    for &i in train_indices.iter().chain(&val_indices) {
        check_param_dims(&pres[i], cfg, &params)?;
    }

    let batch = train_indices.len().max(1) as f64;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut accum = GradAccum::zeros_like(&params);
        let mut total_loss = 0.0;
        let mut correct = 0usize;
        for &i in &train_indices {
            let (loss, ok) =
                graph_loss_and_grads(&pres[i], cfg, &params, num_classes, &mut accum)?;
            total_loss += loss;
            correct += ok as usize;
        }
        let mean_loss = total_loss / batch;
        if !mean_loss.is_finite() {
            return Err(Error::TrainingAborted(format!(
                "loss became {mean_loss} at epoch {epoch}"
            )));
        }
        let lr = cfg.learning_rate / batch;
        params.classifier_w.scaled_add(-lr, &accum.classifier_w);
        params.classifier_b.scaled_add(-lr, &accum.classifier_b);
        if let Some(cegat) = params.cegat.as_mut() {
            cegat.w.scaled_add(-lr, accum.cegat_w.as_ref().unwrap());
            cegat.a.scaled_add(-lr, accum.cegat_a.as_ref().unwrap());
            if let (Some(w_e), Some(g)) = (cegat.w_e.as_mut(), accum.cegat_w_e.as_ref()) {
                w_e.scaled_add(-lr, g);
            }
        }

        let train_accuracy = correct as f64 / train_indices.len().max(1) as f64;
        let val_accuracy = if val_indices.is_empty() {
            train_accuracy
        } else {
            evaluate(pres, &val_indices, cfg, &params)?
        };
        history.push(EpochMetrics {
            epoch,
            loss: mean_loss,
            train_accuracy,
            val_accuracy,
        });
    }

    let final_train_accuracy = evaluate(pres, &train_indices, cfg, &params)?;
    let final_val_accuracy = if val_indices.is_empty() {
        final_train_accuracy
    } else {
        evaluate(pres, &val_indices, cfg, &params)?
    };
    let residuals: Vec<f64> = pres
        .iter()
        .filter_map(|p| p.reconstruction_residual)
        .collect();
    let mean_residual = if residuals.is_empty() {
        None
    } else {
        Some(residuals.iter().sum::<f64>() / residuals.len() as f64)
    };

    Ok(TrainReport {
        params,
        history,
        train_indices,
        val_indices,
        final_train_accuracy,
        final_val_accuracy,
        mean_residual,
    })
}

/// Trains on a deterministic 80/20 split with full-batch gradient
/// descent. Seeds fix the split, the initialization, and therefore the
/// entire trajectory.
pub fn train(ds: &Dataset, cfg: &IceConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let pres = preprocess_dataset(ds, cfg)?;
    let mut indices: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SPLIT_STREAM);
    indices.shuffle(&mut rng);
    let val_count = ds.len() / 5;
    let val_indices: Vec<usize> = indices[0..val_count].to_vec();
    let mut train_indices: Vec<usize> = indices[val_count..].to_vec();
    train_indices.sort_unstable();
    train_on(&pres, train_indices, val_indices, cfg, ds.num_classes())
}

/// K-fold cross-validation; returns each fold's final validation
/// accuracy.
pub fn cross_validate(ds: &Dataset, cfg: &IceConfig, folds: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    if folds < 2 || folds > ds.len() {
        return Err(Error::InvalidArgument(format!(
            "fold count {folds} outside 2..={}",
            ds.len()
        )));
    }
    let pres = preprocess_dataset(ds, cfg)?;
    let mut indices: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(CV_STREAM);
    indices.shuffle(&mut rng);

    let mut accuracies = Vec::with_capacity(folds);
    for fold in 0..folds {
        let val_indices: Vec<usize> = indices
            .iter()
            .enumerate()
            .filter(|(pos, _)| pos % folds == fold)
            .map(|(_, &i)| i)
            .collect();
        let train_indices: Vec<usize> = indices
            .iter()
            .enumerate()
            .filter(|(pos, _)| pos % folds != fold)
            .map(|(_, &i)| i)
            .collect();
        let report = train_on(&pres, train_indices, val_indices, cfg, ds.num_classes())?;
        accuracies.push(report.final_val_accuracy);
    }
    Ok(accuracies)
}

/// One stage combination in the ablation sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub use_svdpool: bool,
    pub use_cegat: bool,
    pub variant: String,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub mean_residual: Option<f64>,
}

/// Results of the six-combination stage ablation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "configuration,use_svdpool,use_cegat,variant,train_accuracy,val_accuracy,mean_reconstruction_residual\n",
        );
        for row in &self.rows {
            let residual = row
                .mean_residual
                .map(|r| format!("{r:.3e}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{:.4},{:.4},{}\n",
                row.name,
                row.use_svdpool,
                row.use_cegat,
                row.variant,
                row.train_accuracy,
                row.val_accuracy,
                residual
            ));
        }
        out
    }
}

/// Trains every stage combination (pooling off/on, attention off/egat/
/// gat) from the same base config and collects final accuracies.
pub fn ablate(ds: &Dataset, cfg: &IceConfig) -> Result<AblationTable> {
    cfg.validate()?;
    let combos: [(&str, bool, bool, Option<CegatVariant>); 6] = [
        ("base", false, false, None),
        ("cegat_egat", false, true, Some(CegatVariant::Egat)),
        ("cegat_gat", false, true, Some(CegatVariant::Gat)),
        ("svdpool", true, false, None),
        ("both_egat", true, true, Some(CegatVariant::Egat)),
        ("both_gat", true, true, Some(CegatVariant::Gat)),
    ];
    let mut rows = Vec::with_capacity(combos.len());
    for (name, use_svdpool, use_cegat, variant) in combos {
        let mut row_cfg = cfg.clone();
        row_cfg.use_svdpool = use_svdpool;
        row_cfg.use_cegat = use_cegat;
        if let Some(v) = variant {
            row_cfg.variant = v;
        }
        let report = train(ds, &row_cfg)?;
        rows.push(AblationRow {
            name: name.to_string(),
            use_svdpool,
            use_cegat,
            variant: variant.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
            train_accuracy: report.final_train_accuracy,
            val_accuracy: report.final_val_accuracy,
            mean_residual: report.mean_residual,
        });
    }
    Ok(AblationTable { rows })
}

fn mat_u8(m: &Array2<u8>) -> Value {
    Value::Array(
        m.rows()
            .into_iter()
            .map(|r| Value::Array(r.iter().map(|&x| json!(x)).collect()))
            .collect(),
    )
}

fn mat_u64(m: &Array2<u64>) -> Value {
    Value::Array(
        m.rows()
            .into_iter()
            .map(|r| Value::Array(r.iter().map(|&x| json!(x)).collect()))
            .collect(),
    )
}

fn mat_f64(m: &Array2<f64>) -> Value {
    Value::Array(
        m.rows()
            .into_iter()
            .map(|r| Value::Array(r.iter().map(|&x| json!(x)).collect()))
            .collect(),
    )
}

fn cube_f64(t: &Array3<f64>) -> Value {
    let (a, b, c) = t.dim();
    Value::Array(
        (0..a)
            .map(|i| {
                Value::Array(
                    (0..b)
                        .map(|j| Value::Array((0..c).map(|p| json!(t[[i, j, p]])).collect()))
                        .collect(),
                )
            })
            .collect(),
    )
}

/// Runs preprocessing on one graph and emits every intermediate as a
/// JSON document: coarse operators, connection blocks, entropies, and
/// (when pooling is on) per-pair spectra and pooled features.
pub fn inspect_graph(g: &Graph, cfg: &IceConfig, partition: Option<Partition>) -> Result<Value> {
    let pre = match partition {
        Some(p) => preprocess_with_partition(g, cfg, p)?,
        None => preprocess(g, cfg)?,
    };
    let blocks: Vec<Value> = pre
        .coarsening
        .pair_blocks
        .iter()
        .map(|(&(i, j), block)| json!({ "i": i, "j": j, "block": mat_u8(block) }))
        .collect();
    let svd_doc = pre.svd.as_ref().map(|comps| {
        let pairs: Vec<Value> = comps
            .per_pair
            .iter()
            .map(|(&(i, j), t)| {
                json!({ "i": i, "j": j, "sigma": t.sigma.to_vec() })
            })
            .collect();
        json!({
            "rank": comps.rank,
            "radius": comps.radius,
            "weighted": comps.weighted,
            "pairs": pairs,
            "pooled": comps.pooled.iter().map(mat_f64).collect::<Vec<_>>(),
            "reconstruction_residual": pre.reconstruction_residual,
        })
    });
    Ok(json!({
        "name": g.name(),
        "n": g.n(),
        "label": g.label(),
        "k": pre.partition.k(),
        "membership": pre.partition.membership(),
        "cluster_sizes": pre.partition.sizes(),
        "a_coar": mat_u64(&pre.coarsening.a_coar),
        "x_coar": mat_f64(&pre.coarsening.x_coar),
        "a_int": mat_u8(&pre.coarsening.a_int),
        "a_ext": mat_u8(&pre.coarsening.a_ext),
        "pair_blocks": blocks,
        "entropy": mat_f64(&pre.entropy.h),
        "edge_features": cube_f64(&pre.entropy.edge_features),
        "svdpool": svd_doc,
        "timings": serde_json::to_value(pre.timings).expect("timings serialize"),
    }))
}
