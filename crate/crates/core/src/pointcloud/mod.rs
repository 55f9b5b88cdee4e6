//! Point clouds, flow fields, scene pairs and the sampling utilities that
//! operate on them.

mod io;
mod synth;

pub use io::{decode_scene, encode_scene, flow_csv, load_dataset, load_scene, save_dataset, save_scene, MANIFEST_NAME};
pub use synth::{generate_scene, generate_scene_with_motions, RigidMotion, SceneGenConfig, ShapeFamily};

use crate::error::{Error, Result};
use crate::numerics::{RealArray, RngStream, Scalar};

/// `N x 3` point coordinates in meters, `N >= 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: RealArray,
}

impl PointCloud {
    pub fn new(points: RealArray) -> Result<Self> {
        if points.shape().len() != 2 || points.shape()[1] != 3 {
            return Err(Error::shape("PointCloud", "[N, 3]", format!("{:?}", points.shape())));
        }
        if points.rows() == 0 {
            return Err(Error::InvalidArgument("point cloud needs at least one point".into()));
        }
        if !points.is_finite() {
            return Err(Error::NonFinite("point cloud".into()));
        }
        Ok(Self { points })
    }

    pub fn from_points(points: &[[f32; 3]]) -> Result<Self> {
        let data = points.iter().flatten().copied().collect();
        Self::new(RealArray::new(vec![points.len(), 3], data)?)
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, i: usize) -> [f32; 3] {
        let r = self.points.row(i);
        [r[0], r[1], r[2]]
    }

    pub fn points(&self) -> &RealArray {
        &self.points
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let data = idx.iter().flat_map(|&i| self.point(i)).collect();
        Self {
            points: RealArray::from_parts(vec![idx.len(), 3], data),
        }
    }

    /// Adds a flow vector to every point.
    pub fn warped(&self, flow: &FlowField) -> Result<Self> {
        if flow.len() != self.len() {
            return Err(Error::shape("warp", self.len(), flow.len()));
        }
        let data = self
            .points
            .data()
            .iter()
            .zip(flow.vectors().data())
            .map(|(p, v)| p + v)
            .collect();
        Self::new(RealArray::from_parts(vec![self.len(), 3], data))
    }

    pub fn translated(&self, offset: [f32; 3]) -> Self {
        let mut points = self.points.clone();
        for r in 0..self.len() {
            for (v, o) in points.row_mut(r).iter_mut().zip(offset) {
                *v += o;
            }
        }
        Self { points }
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for i in 0..self.len() {
            for (s, v) in c.iter_mut().zip(self.point(i)) {
                *s += v as f64;
            }
        }
        c.map(|s| s / self.len() as f64)
    }
}

/// Per-point 3-vector field in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    vectors: RealArray,
}

impl FlowField {
    pub fn new(vectors: RealArray) -> Result<Self> {
        if vectors.shape().len() != 2 || vectors.shape()[1] != 3 {
            return Err(Error::shape("FlowField", "[N, 3]", format!("{:?}", vectors.shape())));
        }
        if !vectors.is_finite() {
            return Err(Error::NonFinite("flow field".into()));
        }
        Ok(Self { vectors })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            vectors: RealArray::zeros(&[n, 3]),
        }
    }

    pub fn from_vectors(v: &[[f32; 3]]) -> Result<Self> {
        Self::new(RealArray::new(vec![v.len(), 3], v.iter().flatten().copied().collect())?)
    }

    pub(crate) fn from_f64(n: usize, data: &[f64]) -> Result<Self> {
        Self::new(RealArray::new(vec![n, 3], data.iter().map(|&v| v as f32).collect())?)
    }

    pub(crate) fn from_mat<S: Scalar>(m: &crate::numerics::Mat<S>) -> Result<Self> {
        Self::new(RealArray::from_mat(m))
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vector(&self, i: usize) -> [f32; 3] {
        let r = self.vectors.row(i);
        [r[0], r[1], r[2]]
    }

    pub fn vectors(&self) -> &RealArray {
        &self.vectors
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.vectors.data().iter().map(|&v| v as f64).collect()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let data = idx.iter().flat_map(|&i| self.vector(i)).collect();
        Self {
            vectors: RealArray::from_parts(vec![idx.len(), 3], data),
        }
    }

    /// Euclidean norm of row `i`.
    pub fn norm(&self, i: usize) -> f64 {
        self.vector(i).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
    }
}

/// How a cloud is reduced to a fixed point count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subsampling {
    Farthest,
    Random,
}

/// Source and target clouds with ground-truth flow and occlusion mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePair {
    pub source: PointCloud,
    pub target: PointCloud,
    pub gt_flow: FlowField,
    /// `true` where the source point's correspondence survives in the target.
    pub valid_mask: Vec<bool>,
}

impl ScenePair {
    pub fn new(source: PointCloud, target: PointCloud, gt_flow: FlowField, valid_mask: Vec<bool>) -> Result<Self> {
        let pair = Self {
            source,
            target,
            gt_flow,
            valid_mask,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        let n1 = self.source.len();
        if self.gt_flow.len() != n1 {
            return Err(Error::Validation {
                field: "gt_flow".into(),
                reason: format!("{} rows, source has {n1}", self.gt_flow.len()),
            });
        }
        if self.valid_mask.len() != n1 {
            return Err(Error::Validation {
                field: "valid_mask".into(),
                reason: format!("{} entries, source has {n1}", self.valid_mask.len()),
            });
        }
        Ok(())
    }

    pub fn n1(&self) -> usize {
        self.source.len()
    }

    pub fn n2(&self) -> usize {
        self.target.len()
    }

    /// Reduces source and target to `n1` and `n2` points (no-op for counts
    /// already at or below the request).
    pub fn subsample(&self, n1: usize, n2: usize, method: Subsampling, rng: &mut RngStream) -> Result<Self> {
        let pick = |pc: &PointCloud, m: usize, rng: &mut RngStream| -> Result<Option<Vec<usize>>> {
            if m >= pc.len() {
                return Ok(None);
            }
            Ok(Some(match method {
                Subsampling::Farthest => farthest_point_sampling(pc, m, rng)?,
                Subsampling::Random => random_subset(pc.len(), m, rng),
            }))
        };
        let mut out = self.clone();
        if let Some(idx) = pick(&self.source, n1, rng)? {
            out.source = self.source.select(&idx);
            out.gt_flow = self.gt_flow.select(&idx);
            out.valid_mask = idx.iter().map(|&i| self.valid_mask[i]).collect();
        }
        if let Some(idx) = pick(&self.target, n2, rng)? {
            out.target = self.target.select(&idx);
        }
        Ok(out)
    }
}

fn random_subset(n: usize, m: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = i + rng.below(n - i);
        idx.swap(i, j);
    }
    idx.truncate(m);
    idx
}

#[inline]
fn sq_dist(a: [f32; 3], b: [f32; 3]) -> f64 {
    a.iter().zip(&b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

/// Greedy maximin subset of `m` points. The first index is drawn from `rng`;
/// each subsequent pick maximizes the distance to the selected set, ties to
/// the lowest index.
pub fn farthest_point_sampling(pc: &PointCloud, m: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    let n = pc.len();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!("farthest point sampling of {m} from {n} points")));
    }
    let start = rng.below(n);
    Ok(farthest_point_sampling_from(pc, m, start))
}

pub(crate) fn farthest_point_sampling_from(pc: &PointCloud, m: usize, start: usize) -> Vec<usize> {
    let n = pc.len();
    let pts: Vec<[f32; 3]> = (0..n).map(|i| pc.point(i)).collect();
    let mut min_d = vec![f64::INFINITY; n];
    let mut chosen = Vec::with_capacity(m);
    let mut cur = start;
    for _ in 0..m {
        chosen.push(cur);
        min_d[cur] = f64::NEG_INFINITY;
        let mut best = None;
        let mut best_d = f64::NEG_INFINITY;
        for (i, d) in min_d.iter_mut().enumerate() {
            if *d == f64::NEG_INFINITY {
                continue;
            }
            *d = d.min(sq_dist(pts[i], pts[cur]));
            if *d > best_d {
                best_d = *d;
                best = Some(i);
            }
        }
        match best {
            Some(b) => cur = b,
            None => break,
        }
    }
    chosen
}

/// Neighbor indices, `k` per query row, nearest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborTable {
    pub k: usize,
    pub indices: Vec<usize>,
}

impl NeighborTable {
    pub fn rows(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.indices.len() / self.k
        }
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }
}

/// `k` nearest base points for every query point by Euclidean distance,
/// ascending, ties to the lowest index.
pub fn knn(query: &PointCloud, base: &PointCloud, k: usize) -> Result<NeighborTable> {
    knn_rows(query.points().data(), base.points().data(), 3, k)
}

/// KNN over arbitrary row-major feature rows of width `dim`.
pub fn knn_rows<S: Scalar>(query: &[S], base: &[S], dim: usize, k: usize) -> Result<NeighborTable> {
    let nb = if dim == 0 { 0 } else { base.len() / dim };
    if k == 0 || k > nb {
        return Err(Error::InvalidArgument(format!("knn with k = {k} over {nb} base points")));
    }
    let nq = query.len() / dim;
    let mut indices = Vec::with_capacity(nq * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(nb);
    for q in query.chunks_exact(dim) {
        cand.clear();
        for (j, b) in base.chunks_exact(dim).enumerate() {
            let d: f64 = q.iter().zip(b).map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2)).sum();
            cand.push((d, j));
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < nb {
            cand.select_nth_unstable_by(k - 1, cmp);
        }
        let head = &mut cand[..k];
        head.sort_unstable_by(cmp);
        indices.extend(head.iter().map(|c| c.1));
    }
    Ok(NeighborTable { k, indices })
}
