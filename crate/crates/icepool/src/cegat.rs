//! Single-head attention over the coarse graph, with two treatments of
//! edge attributes, plus analytic gradients for training.
//!
//! The `gat` variant projects each edge attribute vector and feeds it
//! into the attention score alongside the two endpoint embeddings; rows
//! are then softmax-normalized over the masked neighborhood. The `egat`
//! variant multiplies the raw score into each edge attribute channel,
//! clamps at zero, and normalizes each channel with doubly-stochastic
//! normalization ([`dsn`]); the channels' attention maps are averaged.
//!
//! [`backward`] recomputes the forward pass and returns exact gradients
//! for every parameter tensor plus the node and edge inputs, suitable
//! for checking against finite differences.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Which attention scoring rule to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CegatVariant {
    /// Projected edge attributes inside the score, softmax rows.
    Gat,
    /// Scores modulated per edge attribute channel, DSN-normalized.
    Egat,
}

impl fmt::Display for CegatVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gat => write!(f, "gat"),
            Self::Egat => write!(f, "egat"),
        }
    }
}

impl FromStr for CegatVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gat" => Ok(Self::Gat),
            "egat" => Ok(Self::Egat),
            other => Err(Error::InvalidArgument(format!(
                "unknown attention variant {other:?}; expected gat or egat"
            ))),
        }
    }
}

/// Learnable attention parameters.
///
/// `w` maps node features to embeddings. `a` scores concatenated
/// embeddings: for `gat` it has length `2 * d_out + d_edge` (the tail
/// scoring the projected edge attributes); for `egat` just `2 * d_out`.
/// `w_e` is the edge attribute projection, present only for `gat`.
#[derive(Debug, Clone, PartialEq)]
pub struct CegatParams {
    pub w: Array2<f64>,
    pub a: Array1<f64>,
    pub w_e: Option<Array2<f64>>,
    pub leaky_slope: f64,
}

impl CegatParams {
    /// Seeded uniform initialization with scale `1/sqrt(fan_in)` per
    /// tensor. `d_edge` is only used by the `gat` variant.
    pub fn init(
        variant: CegatVariant,
        d_in: usize,
        d_out: usize,
        d_edge_in: usize,
        d_edge: usize,
        leaky_slope: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize, fan_in: usize| {
            let scale = 1.0 / (fan_in.max(1) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
        };
        let w = draw(d_in, d_out, d_in);
        let (w_e, a_len) = match variant {
            CegatVariant::Gat => (
                Some(draw(d_edge_in, d_edge, d_edge_in)),
                2 * d_out + d_edge,
            ),
            CegatVariant::Egat => (None, 2 * d_out),
        };
        let a = draw(a_len, 1, a_len).column(0).to_owned();
        Self {
            w,
            a,
            w_e,
            leaky_slope,
        }
    }

    /// Checks the tensors fit `variant` and the input dimensions,
    /// returning the embedding width.
    fn dims_for(&self, variant: CegatVariant, d_in: usize, d_edge_in: usize) -> Result<usize> {
        if self.w.nrows() != d_in {
            return Err(Error::InvalidArgument(format!(
                "w maps {} input features but nodes carry {d_in}",
                self.w.nrows()
            )));
        }
        let d_out = self.w.ncols();
        match variant {
            CegatVariant::Gat => {
                let w_e = self.w_e.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("gat variant requires the edge projection w_e".into())
                })?;
                if w_e.nrows() != d_edge_in {
                    return Err(Error::InvalidArgument(format!(
                        "w_e projects {} edge channels but edges carry {d_edge_in}",
                        w_e.nrows()
                    )));
                }
                let expected = 2 * d_out + w_e.ncols();
                if self.a.len() != expected {
                    return Err(Error::InvalidArgument(format!(
                        "a has length {} but gat scoring needs {expected}",
                        self.a.len()
                    )));
                }
            }
            CegatVariant::Egat => {
                if self.w_e.is_some() {
                    return Err(Error::InvalidArgument(
                        "egat variant takes no edge projection w_e".into(),
                    ));
                }
                if self.a.len() != 2 * d_out {
                    return Err(Error::InvalidArgument(format!(
                        "a has length {} but egat scoring needs {}",
                        self.a.len(),
                        2 * d_out
                    )));
                }
            }
        }
        Ok(d_out)
    }
}

/// A coarse graph ready for attention: node features, stacked edge
/// attributes, and the neighborhood mask. The mask must be symmetric
/// with a true diagonal so every row attends at least to itself.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseGraphInput {
    pub h: Array2<f64>,
    pub e: Array3<f64>,
    pub mask: Array2<bool>,
}

impl CoarseGraphInput {
    pub fn new(h: Array2<f64>, e: Array3<f64>, mask: Array2<bool>) -> Result<Self> {
        let k = h.nrows();
        if e.dim().0 != k || e.dim().1 != k {
            return Err(Error::InvalidArgument(format!(
                "edge tensor is {:?} but the graph has {k} nodes",
                e.dim()
            )));
        }
        if mask.dim() != (k, k) {
            return Err(Error::InvalidArgument(format!(
                "mask is {:?} but the graph has {k} nodes",
                mask.dim()
            )));
        }
        for i in 0..k {
            if !mask[[i, i]] {
                return Err(Error::InvalidArgument(format!(
                    "mask diagonal must be true, node {i} cannot attend to itself"
                )));
            }
            for j in 0..k {
                if mask[[i, j]] != mask[[j, i]] {
                    return Err(Error::InvalidArgument(format!(
                        "mask is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self { h, e, mask })
    }

    fn k(&self) -> usize {
        self.h.nrows()
    }
}

/// Gradients of a scalar loss with respect to parameters and inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CegatGradients {
    pub w: Array2<f64>,
    pub a: Array1<f64>,
    pub w_e: Option<Array2<f64>>,
    pub h: Array2<f64>,
    pub e: Array3<f64>,
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

/// Doubly-stochastic normalization of a non-negative score matrix:
/// rows are first normalized to sums of one, then entry (i, j) becomes
/// `sum_k T_ik T_jk / colsum_k(T)`. For strictly positive input both
/// the row and column sums of the result are exactly one; zero rows
/// and columns pass through as zeros.
pub fn dsn(s: &Array2<f64>) -> Array2<f64> {
    dsn_cached(s).alpha
}

struct DsnCache {
    t: Array2<f64>,
    row_sums: Array1<f64>,
    col_sums: Array1<f64>,
    alpha: Array2<f64>,
}

fn dsn_cached(s: &Array2<f64>) -> DsnCache {
    let k = s.nrows();
    let mut t = Array2::<f64>::zeros((k, k));
    let mut row_sums = Array1::<f64>::zeros(k);
    for i in 0..k {
        let r: f64 = s.row(i).sum();
        row_sums[i] = r;
        if r > 0.0 {
            for j in 0..k {
                t[[i, j]] = s[[i, j]] / r;
            }
        }
    }
    let mut col_sums = Array1::<f64>::zeros(k);
    for j in 0..k {
        col_sums[j] = t.column(j).sum();
    }
    let mut alpha = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            let mut acc = 0.0;
            for c in 0..k {
                if col_sums[c] > 0.0 {
                    acc += t[[i, c]] * t[[j, c]] / col_sums[c];
                }
            }
            alpha[[i, j]] = acc;
        }
    }
    DsnCache {
        t,
        row_sums,
        col_sums,
        alpha,
    }
}

struct GatCache {
    z: Array2<f64>,
    proj: Array3<f64>,
    f: Array2<f64>,
    alpha: Array2<f64>,
}

fn gat_internals(inp: &CoarseGraphInput, params: &CegatParams) -> Result<GatCache> {
    let d_edge_in = inp.e.dim().2;
    let d_out = params.dims_for(CegatVariant::Gat, inp.h.ncols(), d_edge_in)?;
    let k = inp.k();
    let w_e = params.w_e.as_ref().unwrap();
    let d_edge = w_e.ncols();
    let (a_src, a_dst, a_e) = (
        params.a.slice(ndarray::s![0..d_out]),
        params.a.slice(ndarray::s![d_out..2 * d_out]),
        params.a.slice(ndarray::s![2 * d_out..]),
    );
    let z = inp.h.dot(&params.w);

    let mut proj = Array3::<f64>::zeros((k, k, d_edge));
    let mut f = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        let zi_src: f64 = z.row(i).dot(&a_src);
        for j in 0..k {
            if !inp.mask[[i, j]] {
                continue;
            }
            for c in 0..d_edge {
                let mut acc = 0.0;
                for p in 0..d_edge_in {
                    acc += inp.e[[i, j, p]] * w_e[[p, c]];
                }
                proj[[i, j, c]] = acc;
            }
            let mut score = zi_src + z.row(j).dot(&a_dst);
            for c in 0..d_edge {
                score += proj[[i, j, c]] * a_e[c];
            }
            f[[i, j]] = score;
        }
    }

    let mut alpha = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        let mut max_s = f64::NEG_INFINITY;
        for j in 0..k {
            if inp.mask[[i, j]] {
                max_s = max_s.max(leaky(f[[i, j]], params.leaky_slope));
            }
        }
        let mut total = 0.0;
        for j in 0..k {
            if inp.mask[[i, j]] {
                let v = (leaky(f[[i, j]], params.leaky_slope) - max_s).exp();
                alpha[[i, j]] = v;
                total += v;
            }
        }
        for j in 0..k {
            alpha[[i, j]] /= total;
        }
    }
    Ok(GatCache { z, proj, f, alpha })
}

/// Attention output with softmax rows and projected edge attributes in
/// the score. Returns a K x d_out matrix.
pub fn gat_forward(inp: &CoarseGraphInput, params: &CegatParams) -> Result<Array2<f64>> {
    let cache = gat_internals(inp, params)?;
    Ok(cache.alpha.dot(&cache.z))
}

struct EgatCache {
    z: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    channels: Vec<Option<DsnCache>>,
    alpha_mean: Array2<f64>,
}

fn egat_internals(inp: &CoarseGraphInput, params: &CegatParams) -> Result<EgatCache> {
    let d_edge_in = inp.e.dim().2;
    let d_out = params.dims_for(CegatVariant::Egat, inp.h.ncols(), d_edge_in)?;
    let k = inp.k();
    let (a_src, a_dst) = (
        params.a.slice(ndarray::s![0..d_out]),
        params.a.slice(ndarray::s![d_out..]),
    );
    let z = inp.h.dot(&params.w);

    let mut f = Array2::<f64>::zeros((k, k));
    let mut g = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        let zi_src: f64 = z.row(i).dot(&a_src);
        for j in 0..k {
            if inp.mask[[i, j]] {
                f[[i, j]] = zi_src + z.row(j).dot(&a_dst);
                g[[i, j]] = leaky(f[[i, j]], params.leaky_slope);
            }
        }
    }

    let mut channels = Vec::with_capacity(d_edge_in);
    let mut alpha_mean = Array2::<f64>::zeros((k, k));
    for p in 0..d_edge_in {
        let mut s = Array2::<f64>::zeros((k, k));
        let mut any = false;
        for i in 0..k {
            for j in 0..k {
                if inp.mask[[i, j]] {
                    let r = g[[i, j]] * inp.e[[i, j, p]];
                    if r > 0.0 {
                        s[[i, j]] = r;
                        any = true;
                    }
                }
            }
        }
        if any {
            let cache = dsn_cached(&s);
            alpha_mean += &cache.alpha;
            channels.push(Some(cache));
        } else {
            channels.push(None);
        }
    }
    alpha_mean /= d_edge_in as f64;
    Ok(EgatCache {
        z,
        f,
        g,
        channels,
        alpha_mean,
    })
}

/// Attention output with per-channel DSN-normalized attention averaged
/// over edge attribute channels. Returns a K x d_out matrix.
pub fn egat_forward(inp: &CoarseGraphInput, params: &CegatParams) -> Result<Array2<f64>> {
    let cache = egat_internals(inp, params)?;
    Ok(cache.alpha_mean.dot(&cache.z))
}

/// Runs the chosen variant.
pub fn forward(
    variant: CegatVariant,
    inp: &CoarseGraphInput,
    params: &CegatParams,
) -> Result<Array2<f64>> {
    match variant {
        CegatVariant::Gat => gat_forward(inp, params),
        CegatVariant::Egat => egat_forward(inp, params),
    }
}

/// Exact gradients of `sum(upstream * forward(...))` with respect to
/// every parameter tensor and both inputs. Masked-off edge positions
/// receive exactly zero gradient.
pub fn backward(
    variant: CegatVariant,
    inp: &CoarseGraphInput,
    params: &CegatParams,
    upstream: &Array2<f64>,
) -> Result<CegatGradients> {
    match variant {
        CegatVariant::Gat => gat_backward(inp, params, upstream),
        CegatVariant::Egat => egat_backward(inp, params, upstream),
    }
}

fn gat_backward(
    inp: &CoarseGraphInput,
    params: &CegatParams,
    upstream: &Array2<f64>,
) -> Result<CegatGradients> {
    let cache = gat_internals(inp, params)?;
    let k = inp.k();
    let d_out = params.w.ncols();
    let w_e = params.w_e.as_ref().unwrap();
    let d_edge_in = inp.e.dim().2;
    let d_edge = w_e.ncols();
    if upstream.dim() != (k, d_out) {
        return Err(Error::InvalidArgument(format!(
            "upstream gradient is {:?} but the output is ({k}, {d_out})",
            upstream.dim()
        )));
    }
    let (a_src, a_dst, a_e) = (
        params.a.slice(ndarray::s![0..d_out]).to_owned(),
        params.a.slice(ndarray::s![d_out..2 * d_out]).to_owned(),
        params.a.slice(ndarray::s![2 * d_out..]).to_owned(),
    );

    let mut dz = cache.alpha.t().dot(upstream);
    let mut df = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        let mut dot = 0.0;
        let mut dalpha_row = vec![0.0; k];
        for (j, slot) in dalpha_row.iter_mut().enumerate() {
            if inp.mask[[i, j]] {
                let da: f64 = upstream.row(i).dot(&cache.z.row(j));
                *slot = da;
                dot += cache.alpha[[i, j]] * da;
            }
        }
        for j in 0..k {
            if inp.mask[[i, j]] {
                let ds = cache.alpha[[i, j]] * (dalpha_row[j] - dot);
                df[[i, j]] = ds * leaky_grad(cache.f[[i, j]], params.leaky_slope);
            }
        }
    }

    let row_df: Array1<f64> = df.rows().into_iter().map(|r| r.sum()).collect();
    let col_df: Array1<f64> = (0..k).map(|j| df.column(j).sum()).collect();
    let da_src = cache.z.t().dot(&row_df);
    let da_dst = cache.z.t().dot(&col_df);
    let mut da_e = Array1::<f64>::zeros(d_edge);
    let mut sum_e = Array1::<f64>::zeros(d_edge_in);
    let mut de = Array3::<f64>::zeros(inp.e.dim());
    let we_ae = w_e.dot(&a_e);
    for i in 0..k {
        for j in 0..k {
            if !inp.mask[[i, j]] || df[[i, j]] == 0.0 {
                continue;
            }
            let dfij = df[[i, j]];
            for c in 0..d_edge {
                da_e[c] += dfij * cache.proj[[i, j, c]];
            }
            for p in 0..d_edge_in {
                sum_e[p] += dfij * inp.e[[i, j, p]];
                de[[i, j, p]] = dfij * we_ae[p];
            }
        }
    }
    let mut dw_e = Array2::<f64>::zeros((d_edge_in, d_edge));
    for p in 0..d_edge_in {
        for c in 0..d_edge {
            dw_e[[p, c]] = sum_e[p] * a_e[c];
        }
    }

    for i in 0..k {
        for c in 0..d_out {
            dz[[i, c]] += row_df[i] * a_src[c] + col_df[i] * a_dst[c];
        }
    }

    let dw = inp.h.t().dot(&dz);
    let dh = dz.dot(&params.w.t());
    let mut da = Array1::<f64>::zeros(params.a.len());
    for c in 0..d_out {
        da[c] = da_src[c];
        da[d_out + c] = da_dst[c];
    }
    for c in 0..d_edge {
        da[2 * d_out + c] = da_e[c];
    }

    Ok(CegatGradients {
        w: dw,
        a: da,
        w_e: Some(dw_e),
        h: dh,
        e: de,
    })
}

fn egat_backward(
    inp: &CoarseGraphInput,
    params: &CegatParams,
    upstream: &Array2<f64>,
) -> Result<CegatGradients> {
    let cache = egat_internals(inp, params)?;
    let k = inp.k();
    let d_out = params.w.ncols();
    let d_edge_in = inp.e.dim().2;
    if upstream.dim() != (k, d_out) {
        return Err(Error::InvalidArgument(format!(
            "upstream gradient is {:?} but the output is ({k}, {d_out})",
            upstream.dim()
        )));
    }
    let (a_src, a_dst) = (
        params.a.slice(ndarray::s![0..d_out]).to_owned(),
        params.a.slice(ndarray::s![d_out..]).to_owned(),
    );
    let channels_f = d_edge_in as f64;

    let mut dz = cache.alpha_mean.t().dot(upstream);
    let b = upstream.dot(&cache.z.t()) / channels_f;

    let mut dg = Array2::<f64>::zeros((k, k));
    let mut de = Array3::<f64>::zeros(inp.e.dim());
    for (p, channel) in cache.channels.iter().enumerate() {
        let Some(dc) = channel else { continue };
        let q: Vec<f64> = (0..k)
            .map(|c| {
                let col = dc.t.column(c);
                let mut acc = 0.0;
                for i in 0..k {
                    if col[i] == 0.0 {
                        continue;
                    }
                    for j in 0..k {
                        acc += b[[i, j]] * col[i] * col[j];
                    }
                }
                acc
            })
            .collect();
        let bt = &b + &b.t();
        let m1 = bt.dot(&dc.t);
        let mut dt = Array2::<f64>::zeros((k, k));
        for c in 0..k {
            if dc.col_sums[c] > 0.0 {
                let cs = dc.col_sums[c];
                for m in 0..k {
                    dt[[m, c]] = m1[[m, c]] / cs - q[c] / (cs * cs);
                }
            }
        }
        for i in 0..k {
            if dc.row_sums[i] <= 0.0 {
                continue;
            }
            let inner: f64 = (0..k).map(|c| dt[[i, c]] * dc.t[[i, c]]).sum();
            for j in 0..k {
                if !inp.mask[[i, j]] {
                    continue;
                }
                let r = cache.g[[i, j]] * inp.e[[i, j, p]];
                if r > 0.0 {
                    let ds = (dt[[i, j]] - inner) / dc.row_sums[i];
                    dg[[i, j]] += ds * inp.e[[i, j, p]];
                    de[[i, j, p]] = ds * cache.g[[i, j]];
                }
            }
        }
    }

    let mut df = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            if inp.mask[[i, j]] {
                df[[i, j]] = dg[[i, j]] * leaky_grad(cache.f[[i, j]], params.leaky_slope);
            }
        }
    }
    let row_df: Array1<f64> = df.rows().into_iter().map(|r| r.sum()).collect();
    let col_df: Array1<f64> = (0..k).map(|j| df.column(j).sum()).collect();
    let da_src = cache.z.t().dot(&row_df);
    let da_dst = cache.z.t().dot(&col_df);
    for i in 0..k {
        for c in 0..d_out {
            dz[[i, c]] += row_df[i] * a_src[c] + col_df[i] * a_dst[c];
        }
    }

    let dw = inp.h.t().dot(&dz);
    let dh = dz.dot(&params.w.t());
    let mut da = Array1::<f64>::zeros(params.a.len());
    for c in 0..d_out {
        da[c] = da_src[c];
        da[d_out + c] = da_dst[c];
    }

    Ok(CegatGradients {
        w: dw,
        a: da,
        w_e: None,
        h: dh,
        e: de,
    })
}

/// Per-channel standardization of edge attributes over masked positions:
/// subtract the masked mean and divide by the masked standard deviation
/// (skipped for near-constant channels). Unmasked positions become zero.
pub fn standardize_edge_features(e: &Array3<f64>, mask: &Array2<bool>) -> Array3<f64> {
    let (k, _, channels) = e.dim();
    let mut out = Array3::<f64>::zeros(e.dim());
    for p in 0..channels {
        let mut values = Vec::new();
        for i in 0..k {
            for j in 0..k {
                if mask[[i, j]] {
                    values.push(e[[i, j, p]]);
                }
            }
        }
        if values.is_empty() {
            continue;
        }
        let mean: f64 = values.iter().sum::<f64>() / values.len() as f64;
        let var: f64 =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
        let std = var.sqrt();
        for i in 0..k {
            for j in 0..k {
                if mask[[i, j]] {
                    let centered = e[[i, j, p]] - mean;
                    out[[i, j, p]] = if std > 1e-12 { centered / std } else { centered };
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_instance(
        variant: CegatVariant,
        k: usize,
        seed: u64,
    ) -> (CoarseGraphInput, CegatParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_in = 3;
        let d_out = 3;
        let d_edge_in = 3;
        let d_edge = 2;
        let h = Array2::from_shape_fn((k, d_in), |_| rng.random_range(-1.0..1.0));
        let mut mask = Array2::from_elem((k, k), false);
        for i in 0..k {
            mask[[i, i]] = true;
        }
        for i in 0..k {
            for j in (i + 1)..k {
                if rng.random_bool(0.7) {
                    mask[[i, j]] = true;
                    mask[[j, i]] = true;
                }
            }
        }
        let e = Array3::from_shape_fn((k, k, d_edge_in), |(i, j, _)| {
            if mask[[i, j]] {
                rng.random_range(0.2..2.0)
            } else {
                0.0
            }
        });
        let inp = CoarseGraphInput::new(h, e, mask).unwrap();
        let params = CegatParams::init(variant, d_in, d_out, d_edge_in, d_edge, 0.2, seed ^ 0xabc);
        (inp, params)
    }

    #[test]
    fn dsn_of_identity_is_identity() {
        let out = dsn(&Array2::<f64>::eye(3));
        assert_eq!(out, Array2::<f64>::eye(3));
    }

    #[test]
    fn dsn_of_uniform_matrix_is_uniform() {
        let out = dsn(&Array2::from_elem((2, 2), 1.0));
        assert_eq!(out, array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn dsn_of_zero_matrix_is_zero() {
        let out = dsn(&Array2::<f64>::zeros((3, 3)));
        assert_eq!(out, Array2::<f64>::zeros((3, 3)));
    }

    #[test]
    fn dsn_makes_positive_matrices_doubly_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let k = rng.random_range(2..=7);
            let s = Array2::from_shape_fn((k, k), |_| rng.random_range(0.05..3.0));
            let d = dsn(&s);
            for i in 0..k {
                assert!((d.row(i).sum() - 1.0).abs() < 1e-10);
                assert!((d.column(i).sum() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn single_node_output_equals_embedding() {
        let (inp, params) = random_instance(CegatVariant::Gat, 1, 3);
        let z = inp.h.dot(&params.w);
        let out = gat_forward(&inp, &params).unwrap();
        for (a, b) in out.iter().zip(z.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_scoring_vector_gives_uniform_attention() {
        let (inp, mut params) = random_instance(CegatVariant::Gat, 4, 11);
        params.a.fill(0.0);
        let z = inp.h.dot(&params.w);
        let out = gat_forward(&inp, &params).unwrap();
        for i in 0..4 {
            let neighbors: Vec<usize> = (0..4).filter(|&j| inp.mask[[i, j]]).collect();
            for c in 0..z.ncols() {
                let mean: f64 =
                    neighbors.iter().map(|&j| z[[j, c]]).sum::<f64>() / neighbors.len() as f64;
                assert!((out[[i, c]] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unmasked_edge_attributes_do_not_affect_output() {
        for variant in [CegatVariant::Gat, CegatVariant::Egat] {
            let (inp, params) = random_instance(variant, 5, 21);
            let baseline = forward(variant, &inp, &params).unwrap();
            let mut noisy = inp.clone();
            for i in 0..5 {
                for j in 0..5 {
                    if !noisy.mask[[i, j]] {
                        for p in 0..3 {
                            noisy.e[[i, j, p]] = 1e6;
                        }
                    }
                }
            }
            let out = forward(variant, &noisy, &params).unwrap();
            assert_eq!(baseline, out);
        }
    }

    #[test]
    fn egat_with_fully_positive_scores_reduces_to_embeddings_on_one_node() {
        let h = array![[1.0, 2.0]];
        let e = Array3::from_elem((1, 1, 2), 1.5);
        let mask = Array2::from_elem((1, 1), true);
        let inp = CoarseGraphInput::new(h, e, mask).unwrap();
        let params = CegatParams {
            w: Array2::eye(2),
            a: array![1.0, 1.0, 1.0, 1.0],
            w_e: None,
            leaky_slope: 0.2,
        };
        let out = egat_forward(&inp, &params).unwrap();
        assert!((out[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((out[[0, 1]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn outputs_are_permutation_equivariant() {
        for variant in [CegatVariant::Gat, CegatVariant::Egat] {
            let (inp, params) = random_instance(variant, 5, 33);
            let out = forward(variant, &inp, &params).unwrap();
            let perm = [2usize, 0, 4, 1, 3];
            let k = 5;
            let mut h = Array2::zeros(inp.h.dim());
            let mut e = Array3::zeros(inp.e.dim());
            let mut mask = Array2::from_elem((k, k), false);
            for i in 0..k {
                for c in 0..inp.h.ncols() {
                    h[[perm[i], c]] = inp.h[[i, c]];
                }
                for j in 0..k {
                    mask[[perm[i], perm[j]]] = inp.mask[[i, j]];
                    for p in 0..inp.e.dim().2 {
                        e[[perm[i], perm[j], p]] = inp.e[[i, j, p]];
                    }
                }
            }
            let permuted = CoarseGraphInput::new(h, e, mask).unwrap();
            let out_p = forward(variant, &permuted, &params).unwrap();
            for i in 0..k {
                for c in 0..out.ncols() {
                    assert!(
                        (out_p[[perm[i], c]] - out[[i, c]]).abs() < 1e-10,
                        "{variant} not equivariant at ({i},{c})"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gradient_zeroes_everything() {
        for variant in [CegatVariant::Gat, CegatVariant::Egat] {
            let (inp, params) = random_instance(variant, 4, 7);
            let upstream = Array2::<f64>::zeros((4, 3));
            let grads = backward(variant, &inp, &params, &upstream).unwrap();
            assert!(grads.w.iter().all(|&x| x == 0.0));
            assert!(grads.a.iter().all(|&x| x == 0.0));
            assert!(grads.h.iter().all(|&x| x == 0.0));
            assert!(grads.e.iter().all(|&x| x == 0.0));
            if let Some(dw_e) = grads.w_e {
                assert!(dw_e.iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn masked_positions_get_exactly_zero_edge_gradient() {
        for variant in [CegatVariant::Gat, CegatVariant::Egat] {
            let (inp, params) = random_instance(variant, 5, 13);
            let upstream = Array2::from_elem((5, 3), 0.7);
            let grads = backward(variant, &inp, &params, &upstream).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    if !inp.mask[[i, j]] {
                        for p in 0..3 {
                            assert_eq!(grads.e[[i, j, p]], 0.0);
                        }
                    }
                }
            }
        }
    }

    fn scalar_loss(
        variant: CegatVariant,
        inp: &CoarseGraphInput,
        params: &CegatParams,
        weights: &Array2<f64>,
    ) -> f64 {
        let out = forward(variant, inp, params).unwrap();
        (out * weights).sum()
    }

    fn check_entries(name: &str, numeric: &[f64], analytic: &[f64]) {
        for (idx, (&n, &a)) in numeric.iter().zip(analytic).enumerate() {
            if n.abs() < 1e-7 && a.abs() < 1e-7 {
                continue;
            }
            let rel = (n - a).abs() / n.abs().max(a.abs());
            assert!(
                rel < 1e-4,
                "{name}[{idx}]: numeric {n} vs analytic {a} (rel {rel})"
            );
        }
    }

    fn finite_difference_check(variant: CegatVariant, seed: u64) {
        let (inp, params) = random_instance(variant, 4, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51);
        let weights = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let grads = backward(variant, &inp, &params, &weights).unwrap();
        let h = 1e-5;

        let mut numeric_w = Vec::new();
        for idx in 0..params.w.len() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.w.as_slice_mut().unwrap()[idx] += h;
            minus.w.as_slice_mut().unwrap()[idx] -= h;
            numeric_w.push(
                (scalar_loss(variant, &inp, &plus, &weights)
                    - scalar_loss(variant, &inp, &minus, &weights))
                    / (2.0 * h),
            );
        }
        check_entries("w", &numeric_w, grads.w.as_slice().unwrap());

        let mut numeric_a = Vec::new();
        for idx in 0..params.a.len() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.a[idx] += h;
            minus.a[idx] -= h;
            numeric_a.push(
                (scalar_loss(variant, &inp, &plus, &weights)
                    - scalar_loss(variant, &inp, &minus, &weights))
                    / (2.0 * h),
            );
        }
        check_entries("a", &numeric_a, grads.a.as_slice().unwrap());

        if let Some(w_e) = &params.w_e {
            let mut numeric = Vec::new();
            for idx in 0..w_e.len() {
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus.w_e.as_mut().unwrap().as_slice_mut().unwrap()[idx] += h;
                minus.w_e.as_mut().unwrap().as_slice_mut().unwrap()[idx] -= h;
                numeric.push(
                    (scalar_loss(variant, &inp, &plus, &weights)
                        - scalar_loss(variant, &inp, &minus, &weights))
                        / (2.0 * h),
                );
            }
            check_entries(
                "w_e",
                &numeric,
                grads.w_e.as_ref().unwrap().as_slice().unwrap(),
            );
        }

        let mut numeric_h = Vec::new();
        for idx in 0..inp.h.len() {
            let mut plus = inp.clone();
            let mut minus = inp.clone();
            plus.h.as_slice_mut().unwrap()[idx] += h;
            minus.h.as_slice_mut().unwrap()[idx] -= h;
            numeric_h.push(
                (scalar_loss(variant, &plus, &params, &weights)
                    - scalar_loss(variant, &minus, &params, &weights))
                    / (2.0 * h),
            );
        }
        check_entries("h", &numeric_h, grads.h.as_slice().unwrap());

        let mut numeric_e = Vec::new();
        for idx in 0..inp.e.len() {
            let mut plus = inp.clone();
            let mut minus = inp.clone();
            plus.e.as_slice_mut().unwrap()[idx] += h;
            minus.e.as_slice_mut().unwrap()[idx] -= h;
            numeric_e.push(
                (scalar_loss(variant, &plus, &params, &weights)
                    - scalar_loss(variant, &minus, &params, &weights))
                    / (2.0 * h),
            );
        }
        check_entries("e", &numeric_e, grads.e.as_slice().unwrap());
    }

    #[test]
    fn gat_gradients_match_finite_differences() {
        for seed in [1u64, 2, 3] {
            finite_difference_check(CegatVariant::Gat, seed);
        }
    }

    #[test]
    fn egat_gradients_match_finite_differences() {
        for seed in [4u64, 5, 6] {
            finite_difference_check(CegatVariant::Egat, seed);
        }
    }

    #[test]
    fn standardization_centers_and_scales_masked_entries() {
        let (inp, _) = random_instance(CegatVariant::Gat, 5, 99);
        let out = standardize_edge_features(&inp.e, &inp.mask);
        for p in 0..3 {
            let mut values = Vec::new();
            for i in 0..5 {
                for j in 0..5 {
                    if inp.mask[[i, j]] {
                        values.push(out[[i, j, p]]);
                    } else {
                        assert_eq!(out[[i, j, p]], 0.0);
                    }
                }
            }
            let mean: f64 = values.iter().sum::<f64>() / values.len() as f64;
            let var: f64 =
                values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn standardization_zeroes_constant_channels() {
        let mask = Array2::from_elem((3, 3), true);
        let e = Array3::from_elem((3, 3, 1), 4.2);
        let out = standardize_edge_features(&e, &mask);
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn init_is_deterministic_and_shaped_per_variant() {
        let a = CegatParams::init(CegatVariant::Gat, 5, 4, 3, 2, 0.2, 7);
        let b = CegatParams::init(CegatVariant::Gat, 5, 4, 3, 2, 0.2, 7);
        assert_eq!(a, b);
        assert_eq!(a.w.dim(), (5, 4));
        assert_eq!(a.a.len(), 2 * 4 + 2);
        assert_eq!(a.w_e.as_ref().unwrap().dim(), (3, 2));

        let c = CegatParams::init(CegatVariant::Egat, 5, 4, 3, 2, 0.2, 7);
        assert_eq!(c.a.len(), 8);
        assert!(c.w_e.is_none());
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let (inp, params) = random_instance(CegatVariant::Gat, 3, 1);
        let mut bad = params.clone();
        bad.a = Array1::zeros(4);
        assert!(gat_forward(&inp, &bad).is_err());
        let mut no_we = params.clone();
        no_we.w_e = None;
        assert!(gat_forward(&inp, &no_we).is_err());
        assert!(egat_forward(&inp, &params).is_err());
    }

    #[test]
    fn mask_validation_catches_bad_diagonals_and_asymmetry() {
        let h = Array2::<f64>::zeros((2, 2));
        let e = Array3::<f64>::zeros((2, 2, 1));
        let mut mask = Array2::from_elem((2, 2), true);
        mask[[0, 0]] = false;
        assert!(CoarseGraphInput::new(h.clone(), e.clone(), mask).is_err());
        let mut mask = Array2::from_elem((2, 2), true);
        mask[[0, 1]] = false;
        assert!(CoarseGraphInput::new(h, e, mask).is_err());
    }
}
