//! Refinement of hand and object Gaussians: per-Gaussian RBF spatial
//! weights over the KNN neighborhood, sigmoid importance modulation, and
//! the blended local-rigid deformation that replaces plain additive offsets
//! once warm-up is over.
//!
//! Every Gaussian doubles as a deformation node: its own field output
//! supplies the node rotation and translation offset that its neighbors
//! blend. The reverse pass covers the importance weight, the radius, the
//! node transforms, and the canonical positions (including the paths
//! through the RBF distances).

use crate::error::{Error, Result};
use crate::fields::FieldOutput;
use crate::gaussmodel::{sigmoid, softplus, GaussianSet};
use crate::geom::{rot_from_6d, rot_from_6d_backward, Mat3, Rot3, Vec3};

/// Per-Gaussian neighbor weights: normalized RBF spatial weights and the
/// final sigmoid-modulated blend weights.
#[derive(Debug, Clone)]
pub struct NeighborWeights {
    pub indices: Vec<Vec<usize>>,
    /// Normalized spatial weights, each row sums to one.
    pub spatial: Vec<Vec<f64>>,
    /// Final weights `sigma(w_i) * spatial`, or the spatial weights
    /// unchanged when renormalization is requested.
    pub finals: Vec<Vec<f64>>,
    renormalized: bool,
}

/// One deformation node at a timestamp: decoded rotation offset, canonical
/// position, translation offset; the blend target is `canonical + offset`.
#[derive(Debug, Clone)]
pub struct NodeTransform {
    pub rot: Rot3,
    pub canonical: Vec3,
    pub offset: Vec3,
}

impl NodeTransform {
    pub fn target(&self) -> Vec3 {
        self.canonical + self.offset
    }

    /// Build node transforms for a whole set from its field outputs.
    pub fn from_field_outputs(
        set: &GaussianSet,
        outputs: &[FieldOutput],
    ) -> Result<Vec<NodeTransform>> {
        assert_eq!(set.len(), outputs.len());
        set.gaussians
            .iter()
            .zip(outputs.iter())
            .map(|(g, out)| {
                Ok(NodeTransform {
                    rot: rot_from_6d(&out.rot6())?,
                    canonical: g.pos,
                    offset: out.dx,
                })
            })
            .collect()
    }
}

/// RBF spatial weights over each Gaussian's KNN neighborhood, normalized to
/// sum to one, then modulated by the sigmoid importance weight.
///
/// Distances are recomputed from the current canonical positions (the KNN
/// cache only fixes the neighbor indices), so gradients flow back into the
/// positions through the kernel as well.
pub fn spatial_weights(set: &GaussianSet, renormalize_final: bool) -> Result<NeighborWeights> {
    let knn = set
        .knn
        .as_ref()
        .expect("spatial_weights needs a built KNN cache");
    let mut spatial = Vec::with_capacity(set.len());
    let mut finals = Vec::with_capacity(set.len());
    for (i, g) in set.gaussians.iter().enumerate() {
        let o = softplus(g.radius_raw);
        if o <= 0.0 {
            return Err(Error::NonPositiveRadius(o));
        }
        let idx = &knn.indices[i];
        let mut row = Vec::with_capacity(idx.len());
        let mut sum = 0.0;
        for &k in idx {
            let d2 = (set.gaussians[k].pos - g.pos).norm_squared();
            let w = (-d2 / (2.0 * o * o)).exp();
            row.push(w);
            sum += w;
        }
        // all-underflow neighborhoods fall back to uniform weights
        if sum <= 0.0 {
            let u = 1.0 / idx.len() as f64;
            row.iter_mut().for_each(|w| *w = u);
            sum = 1.0;
        }
        for w in row.iter_mut() {
            *w /= sum;
        }
        let s = if renormalize_final {
            1.0
        } else {
            sigmoid(g.weight_raw)
        };
        finals.push(row.iter().map(|w| s * w).collect());
        spatial.push(row);
    }
    Ok(NeighborWeights {
        indices: knn.indices.clone(),
        spatial,
        finals,
        renormalized: renormalize_final,
    })
}

/// Blended local-rigid deformation:
/// `rho_i = sum_k w_ik (R_k (x_i - x_k) + x_k + dx_k)` over the KNN
/// neighborhood, with `w_ik` the final refinement weights.
pub fn lbs_deform(
    set: &GaussianSet,
    weights: &NeighborWeights,
    nodes: &[NodeTransform],
) -> Result<Vec<Vec3>> {
    if nodes.len() != set.len() || weights.indices.len() != set.len() {
        return Err(Error::DimensionMismatch {
            expected: set.len(),
            got: nodes.len(),
        });
    }
    let mut out = Vec::with_capacity(set.len());
    for (i, g) in set.gaussians.iter().enumerate() {
        let mut p = Vec3::zeros();
        for (&k, &w) in weights.indices[i].iter().zip(weights.finals[i].iter()) {
            let node = &nodes[k];
            p += w * (node.rot * (g.pos - node.canonical) + node.target());
        }
        out.push(p);
    }
    Ok(out)
}

/// Gradients produced by [`lbs_deform_backward`].
#[derive(Debug, Clone)]
pub struct LbsGrads {
    /// d/d(canonical position) per Gaussian (blend and kernel paths).
    pub pos: Vec<Vec3>,
    pub weight_raw: Vec<f64>,
    pub radius_raw: Vec<f64>,
    /// d/d(node rotation entries) per node.
    pub node_rot: Vec<Mat3>,
    /// d/d(node translation offset) per node.
    pub node_offset: Vec<Vec3>,
}

/// Reverse pass of the full refinement composition (spatial weights plus
/// blend), given `dL/d(rho_i)`.
pub fn lbs_deform_backward(
    set: &GaussianSet,
    weights: &NeighborWeights,
    nodes: &[NodeTransform],
    grad_out: &[Vec3],
) -> Result<LbsGrads> {
    if grad_out.len() != set.len() {
        return Err(Error::DimensionMismatch {
            expected: set.len(),
            got: grad_out.len(),
        });
    }
    let n = set.len();
    let mut grads = LbsGrads {
        pos: vec![Vec3::zeros(); n],
        weight_raw: vec![0.0; n],
        radius_raw: vec![0.0; n],
        node_rot: vec![Mat3::zeros(); n],
        node_offset: vec![Vec3::zeros(); n],
    };
    for i in 0..n {
        let g = &set.gaussians[i];
        let go = grad_out[i];
        if go == Vec3::zeros() {
            continue;
        }
        let idx = &weights.indices[i];
        let m = idx.len();
        let mut g_final = vec![0.0; m];
        for (slot, (&k, &w)) in idx.iter().zip(weights.finals[i].iter()).enumerate() {
            let node = &nodes[k];
            let rel = g.pos - node.canonical;
            let y = node.rot * rel + node.target();
            g_final[slot] = go.dot(&y);
            grads.node_rot[k] += w * go * rel.transpose();
            grads.node_offset[k] += w * go;
            grads.pos[i] += w * (node.rot.transpose() * go);
            // x_k enters as -R_k x_k and as the blend target x_k + dx_k
            grads.pos[k] += w * (go - node.rot.transpose() * go);
        }
        let sigma = if weights.renormalized {
            1.0
        } else {
            sigmoid(g.weight_raw)
        };
        let mut g_spatial = vec![0.0; m];
        let mut g_sigma = 0.0;
        for slot in 0..m {
            g_spatial[slot] = sigma * g_final[slot];
            g_sigma += weights.spatial[i][slot] * g_final[slot];
        }
        if !weights.renormalized {
            grads.weight_raw[i] += g_sigma * sigma * (1.0 - sigma);
        }
        // normalization backward: spatial = raw / sum(raw)
        let o = softplus(g.radius_raw);
        let raws: Vec<f64> = idx
            .iter()
            .map(|&k| {
                let d2 = (set.gaussians[k].pos - g.pos).norm_squared();
                (-d2 / (2.0 * o * o)).exp()
            })
            .collect();
        let sum: f64 = raws.iter().sum();
        if sum <= 0.0 {
            continue; // uniform fallback region has no kernel gradient
        }
        let dot: f64 = g_spatial
            .iter()
            .zip(weights.spatial[i].iter())
            .map(|(a, b)| a * b)
            .sum();
        let mut g_o_acc = 0.0;
        for (slot, &k) in idx.iter().enumerate() {
            let g_raw = (g_spatial[slot] - dot) / sum;
            let d2 = (set.gaussians[k].pos - g.pos).norm_squared();
            let g_d2 = g_raw * raws[slot] * (-1.0 / (2.0 * o * o));
            let diff = g.pos - set.gaussians[k].pos;
            grads.pos[i] += 2.0 * g_d2 * diff;
            grads.pos[k] -= 2.0 * g_d2 * diff;
            g_o_acc += g_raw * raws[slot] * d2 / (o * o * o);
        }
        grads.radius_raw[i] += g_o_acc * sigmoid(g.radius_raw);
    }
    Ok(grads)
}

/// Deformed rotation and scale for one Gaussian from its field output:
/// `rot_t = decode(identity6 + dr6) * rot_canonical`,
/// `scale_t = scale * exp(ds)` per axis.
pub fn deform_rotation_scale(
    canonical_rot: &Rot3,
    scale: &Vec3,
    out: &FieldOutput,
) -> Result<(Rot3, Vec3)> {
    let delta = rot_from_6d(&out.rot6())?;
    let rot_t = delta * *canonical_rot;
    let scale_t = Vec3::new(
        scale.x * out.ds.x.exp(),
        scale.y * out.ds.y.exp(),
        scale.z * out.ds.z.exp(),
    );
    Ok((rot_t, scale_t))
}

/// Gradients for [`deform_rotation_scale_backward`].
pub struct RotScaleGrads {
    pub dr6: [f64; 6],
    pub canonical_rot: Mat3,
    pub scale: Vec3,
    pub ds: Vec3,
}

/// Reverse pass of [`deform_rotation_scale`]: routes entry gradients of the
/// deformed rotation into the 6d offset and the canonical rotation entries,
/// and deformed-scale gradients into the canonical scale and `ds`.
pub fn deform_rotation_scale_backward(
    canonical_rot: &Rot3,
    scale: &Vec3,
    out: &FieldOutput,
    grad_rot_t: &Mat3,
    grad_scale_t: &Vec3,
) -> Result<RotScaleGrads> {
    let g_delta = grad_rot_t * canonical_rot.matrix().transpose();
    let delta = rot_from_6d(&out.rot6())?;
    let g_canonical = delta.matrix().transpose() * grad_rot_t;
    let dr6 = rot_from_6d_backward(&out.rot6(), &g_delta)?;
    let e = Vec3::new(out.ds.x.exp(), out.ds.y.exp(), out.ds.z.exp());
    Ok(RotScaleGrads {
        dr6,
        canonical_rot: g_canonical,
        scale: Vec3::new(
            grad_scale_t.x * e.x,
            grad_scale_t.y * e.y,
            grad_scale_t.z * e.z,
        ),
        ds: Vec3::new(
            grad_scale_t.x * scale.x * e.x,
            grad_scale_t.y * scale.y * e.y,
            grad_scale_t.z * scale.z * e.z,
        ),
    })
}
