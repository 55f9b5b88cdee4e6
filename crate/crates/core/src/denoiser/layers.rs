//! Building blocks of the denoising network, each expressed on a [`Graph`].

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Scalar, Var};
use crate::pointcloud::{knn_rows, NeighborTable};

use super::DenoiserConfig;

pub(crate) const LEAKY_SLOPE: f64 = 0.2;

/// Flat `[i, i, .., i]` (k copies per point) and neighbor index lists.
pub(crate) fn edge_indices(table: &NeighborTable) -> (Vec<usize>, Vec<usize>) {
    let center = (0..table.rows()).flat_map(|i| std::iter::repeat(i).take(table.k)).collect();
    (center, table.indices.clone())
}

fn neighbors<S: Scalar>(g: &Graph<S>, x: Var, k: usize, what: &str) -> Result<NeighborTable> {
    let m = g.value(x);
    if m.rows < k {
        return Err(Error::InvalidArgument(format!("{what}: {} points but k = {k}", m.rows)));
    }
    knn_rows(&m.data, &m.data, m.cols, k)
}

fn lin<S: Scalar>(g: &mut Graph<S>, p: &ParamStore, x: Var, name: &str) -> Result<Var> {
    let w = g.param(p, &format!("{name}.w"))?;
    let b = g.param(p, &format!("{name}.b"))?;
    Ok(g.linear(x, w, Some(b)))
}

/// Layer normalization with learned gain and bias.
fn layer_norm<S: Scalar>(g: &mut Graph<S>, p: &ParamStore, x: Var, name: &str) -> Result<Var> {
    let gain = g.param(p, &format!("{name}.g"))?;
    let bias = g.param(p, &format!("{name}.b"))?;
    let n = g.layer_norm_rows(x);
    let s = g.mul_row(n, gain);
    Ok(g.add_row(s, bias))
}

/// Dynamic-graph edge convolution stack.
///
/// Layer `l` finds `k` neighbors in its own input space (coordinates for the
/// first layer, features after), applies `h(x_i, x_j - x_i)` to every edge and
/// keeps the channelwise max over neighbors. `h` is a linear map followed by
/// normalization over the cloud's edges, a learned per-channel affine, and a
/// leaky ReLU. The linear map is split as `x_i W_self + (x_j - x_i) W_edge`.
pub fn edgeconv_features<S: Scalar>(
    g: &mut Graph<S>,
    p: &ParamStore,
    cfg: &DenoiserConfig,
    prefix: &str,
    coords: Var,
) -> Result<Var> {
    let k = cfg.knn_k;
    let mut x = coords;
    for l in 0..cfg.n_edgeconv_layers {
        let table = neighbors(g, x, k, "edgeconv")?;
        let (ci, nj) = edge_indices(&table);
        let name = format!("{prefix}.ec{l}");
        let w_self = g.param(p, &format!("{name}.w_self"))?;
        let w_edge = g.param(p, &format!("{name}.w_edge"))?;
        let a = g.matmul(x, w_self);
        let b = g.matmul(x, w_edge);
        let diff = g.sub(a, b);
        let hi = g.gather_rows(diff, &ci);
        let hj = g.gather_rows(b, &nj);
        let h = g.add(hi, hj);
        let h = g.normalize_cols(h);
        let gain = g.param(p, &format!("{name}.g"))?;
        let bias = g.param(p, &format!("{name}.b"))?;
        let h = g.mul_row(h, gain);
        let h = g.add_row(h, bias);
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        x = g.max_groups(h, k);
    }
    Ok(x)
}

/// Vector attention over the `k` spatial neighbors, followed by a linear
/// layer and a residual connection.
pub fn local_transformer<S: Scalar>(
    g: &mut Graph<S>,
    p: &ParamStore,
    cfg: &DenoiserConfig,
    prefix: &str,
    feat: Var,
    coords: Var,
) -> Result<Var> {
    let k = cfg.knn_k;
    let table = neighbors(g, coords, k, "local transformer")?;
    let (ci, nj) = edge_indices(&table);
    let name = format!("{prefix}.local");

    let pi = g.gather_rows(coords, &ci);
    let pj = g.gather_rows(coords, &nj);
    let rel = g.sub(pi, pj);
    let d1 = lin(g, p, rel, &format!("{name}.delta1"))?;
    let d1 = g.relu(d1);
    let delta = lin(g, p, d1, &format!("{name}.delta2"))?;

    let q = lin(g, p, feat, &format!("{name}.phi"))?;
    let kk = lin(g, p, feat, &format!("{name}.psi"))?;
    let v = lin(g, p, feat, &format!("{name}.alpha"))?;
    let qi = g.gather_rows(q, &ci);
    let kj = g.gather_rows(kk, &nj);
    let rel_feat = g.sub(qi, kj);
    let pre = g.add(rel_feat, delta);
    let h = lin(g, p, pre, &format!("{name}.gamma1"))?;
    let h = g.relu(h);
    let h = lin(g, p, h, &format!("{name}.gamma2"))?;
    let w = g.softmax_groups(h, k);

    let vj = g.gather_rows(v, &nj);
    let vals = g.add(vj, delta);
    let weighted = g.mul(w, vals);
    let agg = g.sum_groups(weighted, k);
    let out = lin(g, p, agg, &format!("{name}.out"))?;
    Ok(g.add(feat, out))
}

/// Scaled dot-product attention of `x` queries over `y` keys/values.
fn attention<S: Scalar>(g: &mut Graph<S>, p: &ParamStore, x: Var, y: Var, name: &str, d: usize) -> Result<Var> {
    let q = lin(g, p, x, &format!("{name}.q"))?;
    let k = lin(g, p, y, &format!("{name}.k"))?;
    let v = lin(g, p, y, &format!("{name}.v"))?;
    let logits = g.matmul_t(q, k, false, true);
    let logits = g.scale(logits, 1.0 / (d as f64).sqrt());
    let a = g.softmax_rows(logits);
    Ok(g.matmul(a, v))
}

/// `x + LN(W attn(x, y))`.
fn attention_sublayer<S: Scalar>(g: &mut Graph<S>, p: &ParamStore, x: Var, y: Var, name: &str, d: usize) -> Result<Var> {
    let a = attention(g, p, x, y, name, d)?;
    let o = lin(g, p, a, &format!("{name}.out"))?;
    let o = layer_norm(g, p, o, &format!("{name}.ln"))?;
    Ok(g.add(x, o))
}

/// One global (self) + cross attention block with a feed-forward sublayer,
/// applied to both clouds with shared weights.
pub fn global_cross_block<S: Scalar>(
    g: &mut Graph<S>,
    p: &ParamStore,
    cfg: &DenoiserConfig,
    prefix: &str,
    f1: Var,
    f2: Var,
) -> Result<(Var, Var)> {
    let d = cfg.feature_dim;
    let (c1, c2) = (g.shape(f1).1, g.shape(f2).1);
    if c1 != c2 || c1 != d {
        return Err(Error::shape("global_cross_block", d, format!("{c1} and {c2}")));
    }
    let g1 = attention_sublayer(g, p, f1, f1, &format!("{prefix}.self"), d)?;
    let g2 = attention_sublayer(g, p, f2, f2, &format!("{prefix}.self"), d)?;
    let x1 = attention_sublayer(g, p, g1, g2, &format!("{prefix}.cross"), d)?;
    let x2 = attention_sublayer(g, p, g2, g1, &format!("{prefix}.cross"), d)?;
    let mut out = [x1, x2];
    for o in out.iter_mut() {
        let h = lin(g, p, *o, &format!("{prefix}.ffn1"))?;
        let h = g.relu(h);
        let h = lin(g, p, h, &format!("{prefix}.ffn2"))?;
        let h = layer_norm(g, p, h, &format!("{prefix}.ffn_ln"))?;
        *o = g.add(*o, h);
    }
    Ok((out[0], out[1]))
}

/// Row-stochastic cross and self similarity matrices.
pub fn similarity_matrices<S: Scalar>(
    g: &mut Graph<S>,
    p: &ParamStore,
    prefix: &str,
    f1: Var,
    f2: Var,
) -> Result<(Var, Var)> {
    let d = g.shape(f1).1;
    if g.shape(f2).1 != d {
        return Err(Error::shape("similarity_matrices", d, g.shape(f2).1));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let cross = g.matmul_t(f1, f2, false, true);
    let cross = g.scale(cross, scale);
    let m_cross = g.softmax_rows(cross);
    let q = lin(g, p, f1, &format!("{prefix}.corr.wq"))?;
    let k = lin(g, p, f1, &format!("{prefix}.corr.wk"))?;
    let selfs = g.matmul_t(q, k, false, true);
    let selfs = g.scale(selfs, scale);
    let m_self = g.softmax_rows(selfs);
    Ok((m_cross, m_self))
}

/// `M_self (M_cross P_target - P_source)`.
pub fn global_correlation_flow<S: Scalar>(g: &mut Graph<S>, m_cross: Var, m_self: Var, p_source: Var, p_target: Var) -> Result<Var> {
    let (n1, n2) = g.shape(m_cross);
    let checks = [
        ("m_self", g.shape(m_self), (n1, n1)),
        ("p_source", g.shape(p_source), (n1, 3)),
        ("p_target", g.shape(p_target), (n2, 3)),
    ];
    for (what, got, want) in checks {
        if got != want {
            return Err(Error::shape(&format!("global_correlation_flow {what}"), format!("{want:?}"), format!("{got:?}")));
        }
    }
    let matched = g.matmul(m_cross, p_target);
    let raw = g.sub(matched, p_source);
    Ok(g.matmul(m_self, raw))
}
