//! Interaction-aware Gaussian primitives, tagged sets, density evaluation,
//! initializers, and the canonical-space KNN cache.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{covariance_from_rs, quat_to_mat, Rot3, Vec3};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_inv(y: f64) -> f64 {
    (y / (1.0 - y)).ln()
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        (y.exp() - 1.0).ln()
    }
}

/// One interaction-aware Gaussian primitive.
///
/// `opacity` and `radius` are stored pre-activation (logit / inverse
/// softplus) so unconstrained optimizer steps cannot violate positivity;
/// `weight_raw` is the pre-sigmoid importance weight. Translation to a
/// timestamp is not stored: it is realized by field outputs at render time.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub pos: Vec3,
    /// Unit quaternion (w, x, y, z); normalized on use and after updates.
    pub rot: [f64; 4],
    /// Positive per-axis extents, world units.
    pub scale: Vec3,
    pub opacity_logit: f64,
    pub color: [f64; 3],
    pub weight_raw: f64,
    pub radius_raw: f64,
}

impl Gaussian {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn weight(&self) -> f64 {
        sigmoid(self.weight_raw)
    }

    pub fn radius(&self) -> f64 {
        softplus(self.radius_raw)
    }

    pub fn rot_mat(&self) -> Rot3 {
        quat_to_mat(&self.rot)
    }

    pub fn max_scale(&self) -> f64 {
        self.scale.x.max(self.scale.y).max(self.scale.z)
    }

    pub fn normalize_rot(&mut self) {
        let n = self.rot.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in self.rot.iter_mut() {
            *v /= n;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SetTag {
    Hand,
    Object,
    Background,
}

impl SetTag {
    pub fn name(&self) -> &'static str {
        match self {
            SetTag::Hand => "hand",
            SetTag::Object => "object",
            SetTag::Background => "background",
        }
    }
}

/// Exact K-nearest-neighbor lists in canonical space, self excluded,
/// sorted by ascending (distance, index).
#[derive(Debug, Clone, PartialEq)]
pub struct KnnCache {
    pub k: usize,
    pub indices: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
}

/// A tagged collection of Gaussians with an optional KNN cache.
///
/// The tag is fixed at creation. The cache is built on canonical positions
/// and must be rebuilt after any mutation that moves or re-indexes members
/// (densification does this).
#[derive(Debug, Clone)]
pub struct GaussianSet {
    tag: SetTag,
    pub gaussians: Vec<Gaussian>,
    pub knn: Option<KnnCache>,
}

impl GaussianSet {
    pub fn new(tag: SetTag, gaussians: Vec<Gaussian>) -> Self {
        GaussianSet {
            tag,
            gaussians,
            knn: None,
        }
    }

    pub fn tag(&self) -> SetTag {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.gaussians.iter().map(|g| g.pos).collect()
    }

    /// Build the exact KNN cache with `k` neighbors per Gaussian.
    pub fn build_knn(&mut self, k: usize) -> Result<()> {
        let cache = knn_build(&self.positions(), k)?;
        self.knn = Some(cache);
        Ok(())
    }
}

/// One timestamped articulated-skeleton frame: the synthetic stand-in for
/// tracked hand vertices. Vertices carry a cluster id (palm or finger
/// segment) and each cluster carries a rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonFrame {
    /// Normalized timestamp in [0, 1].
    pub t: f64,
    pub verts: Vec<Vec3>,
    pub cluster_ids: Vec<usize>,
    pub cluster_rots: Vec<Rot3>,
}

impl SkeletonFrame {
    pub fn validate(&self) -> Result<()> {
        if self.verts.is_empty() {
            return Err(Error::EmptySkeleton);
        }
        if self.verts.len() != self.cluster_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: self.verts.len(),
                got: self.cluster_ids.len(),
            });
        }
        let n_clusters = self.cluster_rots.len();
        for &c in &self.cluster_ids {
            if c >= n_clusters {
                return Err(Error::InvalidSpec(format!(
                    "cluster id {c} out of range (have {n_clusters} clusters)"
                )));
            }
        }
        Ok(())
    }
}

/// Normalized density of the Gaussian at `x`:
/// `(2 pi)^{-3/2} |Sigma|^{-1/2} exp(-(x-p)^T Sigma^{-1} (x-p) / 2)`.
pub fn eval_density(g: &Gaussian, x: &Vec3) -> Result<f64> {
    for &s in g.scale.iter() {
        if s < 1e-9 {
            return Err(Error::SingularCovariance(s));
        }
    }
    let sigma = covariance_from_rs(&g.rot_mat(), &g.scale)?;
    let inv = sigma
        .try_inverse()
        .ok_or(Error::SingularCovariance(g.scale.min()))?;
    let det = sigma.determinant();
    let d = x - g.pos;
    let quad = (d.transpose() * inv * d)[(0, 0)];
    let norm = (2.0 * std::f64::consts::PI).powf(-1.5) * det.powf(-0.5);
    Ok(norm * (-0.5 * quad).exp())
}

/// Exact K nearest neighbors by Euclidean distance, self excluded.
///
/// Uses a uniform grid with an expanding Chebyshev-ring search; results are
/// certified exact once the k-th best distance is covered by the scanned
/// rings. Neighbor lists are sorted ascending by (distance, index).
pub fn knn_build(positions: &[Vec3], k: usize) -> Result<KnnCache> {
    let n = positions.len();
    if n <= k {
        return Err(Error::TooFewGaussians { n, k });
    }
    let mut min = positions[0];
    let mut max = positions[0];
    for p in positions.iter() {
        min = min.inf(p);
        max = max.sup(p);
    }
    let extent = max - min;
    let volume = (extent.x.max(1e-12)) * (extent.y.max(1e-12)) * (extent.z.max(1e-12));
    let mut cell = (volume / n as f64).cbrt();
    let max_extent = extent.x.max(extent.y).max(extent.z);
    if !(cell.is_finite() && cell > max_extent * 1e-9) {
        cell = max_extent.max(1e-9);
    }

    let key = |p: &Vec3| -> (i64, i64, i64) {
        (
            ((p.x - min.x) / cell).floor() as i64,
            ((p.y - min.y) / cell).floor() as i64,
            ((p.z - min.z) / cell).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in positions.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let max_ring = ((max_extent / cell).ceil() as i64 + 2).max(2);

    let mut indices = Vec::with_capacity(n);
    let mut distances = Vec::with_capacity(n);
    for (i, p) in positions.iter().enumerate() {
        let (cx, cy, cz) = key(p);
        // (d2, idx) candidates, kept as an unordered vec and finalized by sort
        let mut cand: Vec<(f64, usize)> = Vec::with_capacity(4 * k);
        let mut kth_d2 = f64::INFINITY;
        for ring in 0..=max_ring {
            // cells at Chebyshev distance exactly `ring`
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(bucket) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                            for &j in bucket {
                                if j == i {
                                    continue;
                                }
                                let d2 = (positions[j] - p).norm_squared();
                                cand.push((d2, j));
                            }
                        }
                    }
                }
            }
            if cand.len() >= k {
                cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
                cand.truncate(4 * k.max(8));
                kth_d2 = cand[k - 1].0;
                // points beyond the scanned rings are at least ring*cell away
                let certified = (ring as f64) * cell;
                if kth_d2.sqrt() <= certified {
                    break;
                }
            }
        }
        cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
        debug_assert!(cand.len() >= k && cand[k - 1].0 <= kth_d2);
        indices.push(cand[..k].iter().map(|c| c.1).collect());
        distances.push(cand[..k].iter().map(|c| c.0.sqrt()).collect());
    }
    Ok(KnnCache {
        k,
        indices,
        distances,
    })
}

/// Initialization constants shared by the set initializers.
#[derive(Debug, Clone)]
pub struct InitParams {
    pub scale: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    pub weight_raw: f64,
    pub radius: f64,
}

impl Default for InitParams {
    fn default() -> Self {
        InitParams {
            scale: 0.02,
            opacity: 0.1,
            color: [0.5, 0.5, 0.5],
            // sigma(4) ~ 0.982: keeps the blended-position scaling benign at start
            weight_raw: 4.0,
            radius: 0.05,
        }
    }
}

impl InitParams {
    /// A fresh Gaussian at `pos` with these defaults (identity rotation).
    pub fn gaussian_at(&self, pos: Vec3) -> Gaussian {
        Gaussian {
            pos,
            rot: [1.0, 0.0, 0.0, 0.0],
            scale: Vec3::new(self.scale, self.scale, self.scale),
            opacity_logit: sigmoid_inv(self.opacity),
            color: self.color,
            weight_raw: self.weight_raw,
            radius_raw: softplus_inv(self.radius),
        }
    }
}

/// Seed hand Gaussians around the first-timestamp skeleton vertices:
/// `per_vertex` samples per vertex with isotropic positional jitter.
pub fn init_hand(
    frame: &SkeletonFrame,
    per_vertex: usize,
    jitter: f64,
    seed: u64,
) -> GaussianSet {
    init_hand_with(frame, per_vertex, jitter, seed, &InitParams::default())
}

pub fn init_hand_with(
    frame: &SkeletonFrame,
    per_vertex: usize,
    jitter: f64,
    seed: u64,
    params: &InitParams,
) -> GaussianSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaussians = Vec::with_capacity(frame.verts.len() * per_vertex);
    for v in &frame.verts {
        for _ in 0..per_vertex {
            let offset = Vec3::new(
                gauss_sample(&mut rng),
                gauss_sample(&mut rng),
                gauss_sample(&mut rng),
            ) * jitter;
            gaussians.push(params.gaussian_at(v + offset));
        }
    }
    GaussianSet::new(SetTag::Hand, gaussians)
}

/// Seed object Gaussians uniformly inside the axis-aligned bounding box of
/// the skeleton vertices, scaled about its center by `expansion`. No object
/// shape, category, or bounding-box prior is consumed.
pub fn init_object_aabb(
    frame: &SkeletonFrame,
    expansion: f64,
    n: usize,
    seed: u64,
) -> GaussianSet {
    init_object_aabb_with(frame, expansion, n, seed, &InitParams::default())
}

pub fn init_object_aabb_with(
    frame: &SkeletonFrame,
    expansion: f64,
    n: usize,
    seed: u64,
    params: &InitParams,
) -> GaussianSet {
    assert!(expansion >= 1.0, "expansion factor must be >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = skeleton_aabb(frame, expansion);
    let mut gaussians = Vec::with_capacity(n);
    for _ in 0..n {
        let p = Vec3::new(
            rng.gen_range(0.0..=1.0) * (hi.x - lo.x) + lo.x,
            rng.gen_range(0.0..=1.0) * (hi.y - lo.y) + lo.y,
            rng.gen_range(0.0..=1.0) * (hi.z - lo.z) + lo.z,
        );
        gaussians.push(params.gaussian_at(p));
    }
    GaussianSet::new(SetTag::Object, gaussians)
}

/// AABB of skeleton vertices expanded about its center.
pub fn skeleton_aabb(frame: &SkeletonFrame, expansion: f64) -> (Vec3, Vec3) {
    let mut lo = frame.verts[0];
    let mut hi = frame.verts[0];
    for v in &frame.verts {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo) * expansion;
    (center - half, center + half)
}

/// One background Gaussian per provided point, color copied verbatim.
pub fn init_background(points: &[(Vec3, [f64; 3])]) -> Result<GaussianSet> {
    init_background_with(points, &InitParams::default())
}

pub fn init_background_with(
    points: &[(Vec3, [f64; 3])],
    params: &InitParams,
) -> Result<GaussianSet> {
    if points.is_empty() {
        return Err(Error::EmptyPointCloud);
    }
    let gaussians = points
        .iter()
        .map(|(p, c)| {
            let mut g = params.gaussian_at(*p);
            g.color = *c;
            g
        })
        .collect();
    Ok(GaussianSet::new(SetTag::Background, gaussians))
}

/// Standard normal sample by Box-Muller (keeps the dependency surface small
/// and the stream reproducible).
pub fn gauss_sample<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
