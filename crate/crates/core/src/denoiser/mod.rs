//! The denoising network `f(V_t, P_source, P_target) -> V_0`.
//!
//! Two stages share one layout: the source is warped by a flow, both clouds
//! are embedded by an edge-convolution stack, and a global correlation turns
//! feature similarities into flow. Stage 1 warps by the noisy input and
//! produces an initial estimate; stage 2 warps by that estimate, refines the
//! features with local, global and cross attention, and produces the final
//! prediction. Each stage owns its weights; within a stage, source and
//! target share them.

mod layers;

pub use layers::{
    edgeconv_features, global_correlation_flow, global_cross_block, local_transformer, similarity_matrices,
};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Mat, Objective, ParamStore, RealArray, RngStream, Scalar, Var};
use crate::objective::{total_loss_graph, LossConfig};
use crate::pointcloud::{FlowField, PointCloud, ScenePair};

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserConfig {
    pub feature_dim: usize,
    pub knn_k: usize,
    pub n_global_cross_layers: usize,
    pub n_edgeconv_layers: usize,
    /// Attention heads; only single-head attention is implemented.
    pub heads: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            feature_dim: 128,
            knn_k: 16,
            n_global_cross_layers: 14,
            n_edgeconv_layers: 3,
            heads: 1,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 8 || self.feature_dim % 2 != 0 {
            return Err(Error::Config("denoiser.feature_dim must be even and at least 8".into()));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("denoiser.knn_k must be at least 1".into()));
        }
        if self.n_global_cross_layers == 0 || self.n_edgeconv_layers == 0 {
            return Err(Error::Config("denoiser layer counts must be at least 1".into()));
        }
        if self.heads != 1 {
            return Err(Error::Config("denoiser.heads must be 1".into()));
        }
        Ok(())
    }

    /// Output widths of the edge-convolution layers: `d/2, .., d/2, d`.
    pub fn edgeconv_widths(&self) -> Vec<usize> {
        (0..self.n_edgeconv_layers)
            .map(|l| {
                if l + 1 == self.n_edgeconv_layers {
                    self.feature_dim
                } else {
                    self.feature_dim / 2
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy)]
enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Zero,
    One,
}

fn param_layout(cfg: &DenoiserConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.feature_dim;
    let mut out = Vec::new();
    let linear = |out: &mut Vec<_>, name: String, i: usize, o: usize| {
        out.push((format!("{name}.w"), vec![i, o], Init::FanIn(i)));
        out.push((format!("{name}.b"), vec![1, o], Init::Zero));
    };
    let norm = |out: &mut Vec<(String, Vec<usize>, Init)>, name: String, c: usize| {
        out.push((format!("{name}.g"), vec![1, c], Init::One));
        out.push((format!("{name}.b"), vec![1, c], Init::Zero));
    };
    for stage in ["s1", "s2"] {
        let mut c_in = 3;
        for (l, w) in cfg.edgeconv_widths().into_iter().enumerate() {
            let name = format!("{stage}.ec{l}");
            out.push((format!("{name}.w_self"), vec![c_in, w], Init::FanIn(2 * c_in)));
            out.push((format!("{name}.w_edge"), vec![c_in, w], Init::FanIn(2 * c_in)));
            norm(&mut out, name, w);
            c_in = w;
        }
        linear(&mut out, format!("{stage}.corr.wq"), d, d);
        linear(&mut out, format!("{stage}.corr.wk"), d, d);
    }
    let local = "s2.local";
    linear(&mut out, format!("{local}.delta1"), 3, d);
    linear(&mut out, format!("{local}.delta2"), d, d);
    for n in ["phi", "psi", "alpha", "gamma1", "gamma2", "out"] {
        linear(&mut out, format!("{local}.{n}"), d, d);
    }
    for l in 0..cfg.n_global_cross_layers {
        let pre = format!("s2.gc{l}");
        for kind in ["self", "cross"] {
            for n in ["q", "k", "v", "out"] {
                linear(&mut out, format!("{pre}.{kind}.{n}"), d, d);
            }
            norm(&mut out, format!("{pre}.{kind}.ln"), d);
        }
        linear(&mut out, format!("{pre}.ffn1"), d, 2 * d);
        linear(&mut out, format!("{pre}.ffn2"), 2 * d, d);
        norm(&mut out, format!("{pre}.ffn_ln"), d);
    }
    out
}

/// Freshly initialized weights for `cfg`, deterministic in `seed`.
pub fn init_params(cfg: &DenoiserConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = RngStream::new(seed);
    let mut store = ParamStore::new();
    for (name, shape, init) in param_layout(cfg) {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| rng.uniform_range(-bound, bound) as f32).collect()
            }
            Init::Zero => vec![0.0; n],
            Init::One => vec![1.0; n],
        };
        store.insert(&name, RealArray::new(shape, data)?)?;
    }
    Ok(store)
}

/// Checks that `params` has exactly the layout `cfg` requires.
pub fn check_params(cfg: &DenoiserConfig, params: &ParamStore) -> Result<()> {
    let layout = param_layout(cfg);
    if layout.len() != params.len() {
        return Err(Error::Config(format!(
            "parameter count {} does not match configuration ({})",
            params.len(),
            layout.len()
        )));
    }
    for (name, shape, _) in layout {
        match params.get(&name) {
            Some(w) if w.shape() == shape.as_slice() => {}
            Some(w) => return Err(Error::shape(&name, format!("{shape:?}"), format!("{:?}", w.shape()))),
            None => return Err(Error::Config(format!("missing parameter `{name}`"))),
        }
    }
    Ok(())
}

/// Graph nodes of one denoiser evaluation.
#[derive(Clone, Copy, Debug)]
pub struct ForwardNodes {
    pub v_init: Var,
    pub v_pred: Var,
}

fn centered<S: Scalar>(pc: &PointCloud, c: [f64; 3]) -> Mat<S> {
    let data: Vec<f64> = (0..pc.len())
        .flat_map(|i| {
            let p = pc.point(i);
            [0, 1, 2].map(|k| p[k] as f64 - c[k])
        })
        .collect();
    Mat::from_f64(pc.len(), 3, &data)
}

/// Records the full two-stage forward pass on `g`.
///
/// Coordinates are expressed relative to the source centroid, so translating
/// both clouds together leaves the outputs unchanged.
pub fn denoise_graph<S: Scalar>(
    g: &mut Graph<S>,
    params: &ParamStore,
    cfg: &DenoiserConfig,
    v_t: &FlowField,
    pair: &ScenePair,
) -> Result<ForwardNodes> {
    if v_t.len() != pair.n1() {
        return Err(Error::shape("denoise_forward v_t", pair.n1(), v_t.len()));
    }
    let k = cfg.knn_k;
    if pair.n1() < k || pair.n2() < k {
        return Err(Error::InvalidArgument(format!(
            "denoiser needs at least k = {k} points per cloud (got {} and {})",
            pair.n1(),
            pair.n2()
        )));
    }
    let c = pair.source.centroid();
    let ps = g.input(centered(&pair.source, c));
    let pt = g.input(centered(&pair.target, c));
    let vt = g.input(v_t.vectors().to_mat());

    let warped = g.add(ps, vt);
    let f1 = edgeconv_features(g, params, cfg, "s1", warped)?;
    let f2 = edgeconv_features(g, params, cfg, "s1", pt)?;
    let (mc, ms) = similarity_matrices(g, params, "s1", f1, f2)?;
    let v_init = global_correlation_flow(g, mc, ms, ps, pt)?;

    let warped = g.add(ps, v_init);
    let f1 = edgeconv_features(g, params, cfg, "s2", warped)?;
    let f2 = edgeconv_features(g, params, cfg, "s2", pt)?;
    let mut f1 = local_transformer(g, params, cfg, "s2", f1, warped)?;
    let mut f2 = local_transformer(g, params, cfg, "s2", f2, pt)?;
    for l in 0..cfg.n_global_cross_layers {
        (f1, f2) = global_cross_block(g, params, cfg, &format!("s2.gc{l}"), f1, f2)?;
    }
    let (mc, ms) = similarity_matrices(g, params, "s2", f1, f2)?;
    let v_pred = global_correlation_flow(g, mc, ms, ps, pt)?;
    Ok(ForwardNodes { v_init, v_pred })
}

/// A configured network with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    pub cfg: DenoiserConfig,
    pub params: ParamStore,
}

impl Denoiser {
    pub fn new(cfg: DenoiserConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        check_params(&cfg, &params)?;
        Ok(Self { cfg, params })
    }

    pub fn init(cfg: DenoiserConfig, seed: u64) -> Result<Self> {
        let params = init_params(&cfg, seed)?;
        Ok(Self { cfg, params })
    }

    /// `(v_init, v_pred)` for a noisy flow `v_t` in meters.
    pub fn forward(&self, v_t: &FlowField, pair: &ScenePair) -> Result<(FlowField, FlowField)> {
        let mut g: Graph<f32> = Graph::new();
        let out = denoise_graph(&mut g, &self.params, &self.cfg, v_t, pair)?;
        Ok((FlowField::from_mat(g.value(out.v_init))?, FlowField::from_mat(g.value(out.v_pred))?))
    }
}

/// Training loss of one noisy scene as a function of the weights, on the
/// `f64` tape. Used for gradient checks.
pub struct SceneLoss {
    pub cfg: DenoiserConfig,
    pub pair: ScenePair,
    pub v_t: FlowField,
    pub loss: LossConfig,
}

impl SceneLoss {
    fn build(&self, p: &ParamStore, g: &mut Graph<f64>) -> Result<Var> {
        let nodes = denoise_graph(g, p, &self.cfg, &self.v_t, &self.pair)?;
        total_loss_graph(g, nodes.v_init, nodes.v_pred, &self.pair.gt_flow, &self.loss)
    }
}

impl Objective for SceneLoss {
    fn value(&self, p: &ParamStore) -> Result<f64> {
        let mut g = Graph::new();
        let l = self.build(p, &mut g)?;
        Ok(g.scalar(l))
    }

    fn value_and_grad(&self, p: &mut ParamStore) -> Result<f64> {
        let mut g = Graph::new();
        let l = self.build(p, &mut g)?;
        g.backward(l);
        g.accumulate_param_grads(p, 1.0)?;
        Ok(g.scalar(l))
    }
}
