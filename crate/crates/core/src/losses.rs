//! Training objectives: the photometric 2D loss (L1 + DSSIM with optional
//! per-pixel weighting), the three explicit interaction-aware 3D
//! regularizers, the penetration penalty, and the PSNR/SSIM metrics.
//!
//! Every loss returns its analytic gradient alongside the value; the
//! nearest-neighbor losses differentiate through the argmin (subgradient at
//! ties), and the rotation loss routes its gradient through the tangent
//! space of SO(3).

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::gaussmodel::{sigmoid, Gaussian, SkeletonFrame};
use crate::geom::{rotation_average, so3_log, Mat3, Rot3, Vec3};
use crate::img::ImageBuf;

/// Relative weight of the DSSIM term inside the photometric loss.
pub const LAMBDA_SSIM: f64 = 0.2;
/// SSIM stabilizers for unit-range images.
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
/// SSIM window: 11x11 Gaussian, sigma 1.5, evaluated on fully valid windows.
const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
/// Division guard for the contact-set Chamfer terms.
const CHAMFER_EPS: f64 = 1e-6;

/// Per-term loss values for one iteration, plus the weighted total.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossBreakdown {
    pub photometric: f64,
    pub hand_trans: f64,
    pub obj_rot: f64,
    pub interaction: f64,
    pub penetration: f64,
    pub total: f64,
}

/// Loss weights. Photometric dominates after warm-up; the rest regularize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub photo: f64,
    pub hand: f64,
    pub rot: f64,
    pub inter: f64,
    pub pen: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            photo: 1.0,
            hand: 0.1,
            rot: 0.05,
            inter: 0.01,
            pen: 0.1,
        }
    }
}

impl LossBreakdown {
    pub fn weighted_total(&mut self, w: &LossWeights) -> f64 {
        self.total = w.photo * self.photometric
            + w.hand * self.hand_trans
            + w.rot * self.obj_rot
            + w.inter * self.interaction
            + w.pen * self.penetration;
        self.total
    }
}

fn gaussian_kernel() -> [f64; SSIM_WIN] {
    let mut k = [0.0; SSIM_WIN];
    let c = (SSIM_WIN / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable valid convolution of a single-channel plane with the SSIM
/// kernel; output is (w-10) x (h-10).
fn conv_valid(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let ow = w - SSIM_WIN + 1;
    let oh = h - SSIM_WIN + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * plane[y * w + x + i];
            }
            tmp[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Adjoint of [`conv_valid`]: scatter window-level gradients back to pixels.
fn conv_valid_adjoint(grad: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let ow = w - SSIM_WIN + 1;
    let oh = h - SSIM_WIN + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let g = grad[y * ow + x];
            if g == 0.0 {
                continue;
            }
            for (i, kv) in k.iter().enumerate() {
                tmp[(y + i) * ow + x] += kv * g;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let g = tmp[y * ow + x];
            if g == 0.0 {
                continue;
            }
            for (i, kv) in k.iter().enumerate() {
                out[y * w + x + i] += kv * g;
            }
        }
    }
    out
}

struct SsimPlanes {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    sxy: Vec<f64>,
    b2: Vec<f64>,
}

/// Per-channel SSIM map over valid windows plus intermediates for the
/// reverse pass. `x` is the differentiated (rendered) image plane.
fn ssim_channel(x: &[f64], y: &[f64], w: usize, h: usize) -> (Vec<f64>, SsimPlanes) {
    let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
    let y2: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y.iter()).map(|(a, b)| a * b).collect();
    let mu_x = conv_valid(x, w, h);
    let mu_y = conv_valid(y, w, h);
    let sx = conv_valid(&x2, w, h);
    let sy = conv_valid(&y2, w, h);
    let sxy = conv_valid(&xy, w, h);
    let mut map = vec![0.0; mu_x.len()];
    let mut b2v = vec![0.0; mu_x.len()];
    for i in 0..map.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = sx[i] - mx * mx;
        let vy = sy[i] - my * my;
        let cxy = sxy[i] - mx * my;
        let a1 = 2.0 * mx * my + SSIM_C1;
        let a2 = 2.0 * cxy + SSIM_C2;
        let b1 = mx * mx + my * my + SSIM_C1;
        let b2 = vx + vy + SSIM_C2;
        map[i] = (a1 * a2) / (b1 * b2);
        b2v[i] = b2;
    }
    (
        map,
        SsimPlanes {
            mu_x,
            mu_y,
            sxy,
            b2: b2v,
        },
    )
}

/// Gradient of `sum_i win_weight[i] * SSIM_map[i]` with respect to the
/// pixels of `x`, for arbitrary per-window weights.
fn ssim_channel_backward(
    x: &[f64],
    y: &[f64],
    w: usize,
    h: usize,
    planes: &SsimPlanes,
    win_weight: &[f64],
) -> Vec<f64> {
    let n = planes.mu_x.len();
    let mut g1 = vec![0.0; n]; // d/d mu_x
    let mut g2 = vec![0.0; n]; // d/d conv(x^2)
    let mut g3 = vec![0.0; n]; // d/d conv(x y)
    for i in 0..n {
        let wq = win_weight[i];
        if wq == 0.0 {
            continue;
        }
        let (mx, my) = (planes.mu_x[i], planes.mu_y[i]);
        let cxy = planes.sxy[i] - mx * my;
        let a1 = 2.0 * mx * my + SSIM_C1;
        let a2 = 2.0 * cxy + SSIM_C2;
        let b1 = mx * mx + my * my + SSIM_C1;
        let b2 = planes.b2[i];
        let denom = b1 * b2;
        // S = A1 A2 / (B1 B2) as a function of u1 = mu_x, u2 = conv(x^2),
        // u3 = conv(x y): dA1/du1 = 2my, dA2/du1 = -2my, dB1/du1 = 2mx,
        // dB2/du1 = -2mx, dB2/du2 = 1, dA2/du3 = 2.
        let ds_du1 = ((2.0 * my * a2 - 2.0 * my * a1) * denom
            - a1 * a2 * (2.0 * mx * b2 - 2.0 * mx * b1))
            / (denom * denom);
        let ds_du2 = -a1 * a2 / (b1 * b2 * b2);
        let ds_du3 = 2.0 * a1 / denom;
        g1[i] = wq * ds_du1;
        g2[i] = wq * ds_du2;
        g3[i] = wq * ds_du3;
    }
    let a1 = conv_valid_adjoint(&g1, w, h);
    let a2 = conv_valid_adjoint(&g2, w, h);
    let a3 = conv_valid_adjoint(&g3, w, h);
    let mut out = vec![0.0; w * h];
    for i in 0..out.len() {
        out[i] = a1[i] + 2.0 * x[i] * a2[i] + y[i] * a3[i];
    }
    out
}

/// Photometric loss `(1 - lambda) L1 + lambda (1 - SSIM)` with the gradient
/// with respect to the rendered image.
pub fn photometric_loss(rendered: &ImageBuf, target: &ImageBuf) -> Result<(f64, ImageBuf)> {
    photometric_loss_weighted(rendered, target, None)
}

/// Weighted photometric loss. `pixel_weight`, when given, is a per-pixel
/// weight plane: L1 averages over weighted pixels and the SSIM term
/// averages over valid windows weighted by their center pixel's weight.
pub fn photometric_loss_weighted(
    rendered: &ImageBuf,
    target: &ImageBuf,
    pixel_weight: Option<&[f64]>,
) -> Result<(f64, ImageBuf)> {
    if !rendered.same_shape(target) {
        return Err(Error::DimensionMismatch {
            expected: target.data.len(),
            got: rendered.data.len(),
        });
    }
    let (w, h) = (rendered.width, rendered.height);
    let npx = w * h;
    if let Some(wts) = pixel_weight {
        if wts.len() != npx {
            return Err(Error::DimensionMismatch {
                expected: npx,
                got: wts.len(),
            });
        }
    }
    let uniform;
    let wts = match pixel_weight {
        Some(w) => w,
        None => {
            uniform = vec![1.0; npx];
            &uniform
        }
    };
    let wsum: f64 = wts.iter().sum();
    let mut grad = ImageBuf::new(w, h, rendered.channels);
    if wsum <= 0.0 {
        return Ok((0.0, grad));
    }

    // L1 over weighted pixels
    let mut l1 = 0.0;
    let ch = rendered.channels as f64;
    for px in 0..npx {
        let wq = wts[px];
        if wq == 0.0 {
            continue;
        }
        for c in 0..rendered.channels {
            let i = px * rendered.channels + c;
            let d = rendered.data[i] - target.data[i];
            l1 += wq * d.abs();
            grad.data[i] = (1.0 - LAMBDA_SSIM) * wq * d.signum() / (wsum * ch);
        }
    }
    l1 /= wsum * ch;

    // SSIM over valid windows, weighted by the center pixel's weight
    let mut ssim_term = 0.0;
    if w >= SSIM_WIN && h >= SSIM_WIN {
        let ow = w - SSIM_WIN + 1;
        let oh = h - SSIM_WIN + 1;
        let half = SSIM_WIN / 2;
        let mut win_w = vec![0.0; ow * oh];
        let mut win_sum = 0.0;
        for wy in 0..oh {
            for wx in 0..ow {
                let cw = wts[(wy + half) * w + wx + half];
                win_w[wy * ow + wx] = cw;
                win_sum += cw;
            }
        }
        if win_sum > 0.0 {
            let mut mean_ssim = 0.0;
            for c in 0..rendered.channels {
                let xp: Vec<f64> = (0..npx)
                    .map(|px| rendered.data[px * rendered.channels + c])
                    .collect();
                let yp: Vec<f64> = (0..npx)
                    .map(|px| target.data[px * rendered.channels + c])
                    .collect();
                let (map, planes) = ssim_channel(&xp, &yp, w, h);
                for (m, wq) in map.iter().zip(win_w.iter()) {
                    mean_ssim += m * wq;
                }
                // loss carries -lambda/(win_sum * channels) per unit of SSIM
                let scale = -LAMBDA_SSIM / (win_sum * ch);
                let scaled: Vec<f64> = win_w.iter().map(|wq| wq * scale).collect();
                let gx = ssim_channel_backward(&xp, &yp, w, h, &planes, &scaled);
                for px in 0..npx {
                    grad.data[px * rendered.channels + c] += gx[px];
                }
            }
            mean_ssim /= win_sum * ch;
            ssim_term = 1.0 - mean_ssim;
        }
    }

    let loss = (1.0 - LAMBDA_SSIM) * l1 + LAMBDA_SSIM * ssim_term;
    Ok((loss, grad))
}

/// Mean SSIM over valid 11x11 windows, standard constants, range-1 images.
pub fn ssim(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch {
            expected: b.data.len(),
            got: a.data.len(),
        });
    }
    assert!(
        a.width >= SSIM_WIN && a.height >= SSIM_WIN,
        "image smaller than the SSIM window"
    );
    let npx = a.width * a.height;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..a.channels {
        let xp: Vec<f64> = (0..npx).map(|px| a.data[px * a.channels + c]).collect();
        let yp: Vec<f64> = (0..npx).map(|px| b.data[px * b.channels + c]).collect();
        let (map, _) = ssim_channel(&xp, &yp, a.width, a.height);
        total += map.iter().sum::<f64>();
        count += map.len();
    }
    Ok(total / count as f64)
}

/// PSNR in dB for unit-range images; identical images give `+inf`.
pub fn psnr(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch {
            expected: b.data.len(),
            got: a.data.len(),
        });
    }
    let mse = a
        .data
        .iter()
        .zip(b.data.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Bidirectional mean of squared nearest-neighbor distances with an epsilon
/// guard on the set sizes. A direction whose inner min would be over an
/// empty set contributes zero, so the loss is zero when either set is empty.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
    chamfer_with_grads(a, b).0
}

/// Chamfer plus gradients for both point sets (both directions contribute
/// to both sets through the matched pairs).
pub fn chamfer_with_grads(a: &[Vec3], b: &[Vec3]) -> (f64, Vec<Vec3>, Vec<Vec3>) {
    let mut ga = vec![Vec3::zeros(); a.len()];
    let mut gb = vec![Vec3::zeros(); b.len()];
    if a.is_empty() || b.is_empty() {
        return (0.0, ga, gb);
    }
    let na = (a.len() as f64).max(CHAMFER_EPS);
    let nb = (b.len() as f64).max(CHAMFER_EPS);
    let mut total = 0.0;
    for (i, p) in a.iter().enumerate() {
        let (j, d2) = nearest(p, b);
        total += d2 / na;
        let g = 2.0 * (p - b[j]) / na;
        ga[i] += g;
        gb[j] -= g;
    }
    for (j, q) in b.iter().enumerate() {
        let (i, d2) = nearest(q, a);
        total += d2 / nb;
        let g = 2.0 * (q - a[i]) / nb;
        gb[j] += g;
        ga[i] -= g;
    }
    (total, ga, gb)
}

fn nearest(p: &Vec3, pts: &[Vec3]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (i, q) in pts.iter().enumerate() {
        let d2 = (p - q).norm_squared();
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    best
}

/// One-directional hand loss: mean squared distance from each hand Gaussian
/// to its nearest skeleton vertex, with gradients for the Gaussian
/// positions. Pulls Gaussians onto the tracked hand surface.
pub fn hand_trans_loss(
    hand_positions: &[Vec3],
    skeleton: &SkeletonFrame,
) -> Result<(f64, Vec<Vec3>)> {
    if skeleton.verts.is_empty() {
        return Err(Error::EmptySkeleton);
    }
    let n = hand_positions.len().max(1) as f64;
    let mut grads = vec![Vec3::zeros(); hand_positions.len()];
    let mut total = 0.0;
    for (i, p) in hand_positions.iter().enumerate() {
        let (j, d2) = nearest(p, &skeleton.verts);
        total += d2 / n;
        grads[i] = 2.0 * (p - skeleton.verts[j]) / n;
    }
    Ok((total, grads))
}

/// Contact-awareness weight of an object Gaussian: sigmoid of its raw weight.
pub fn contact_weight(g: &Gaussian) -> f64 {
    sigmoid(g.weight_raw)
}

/// Rotation target for the object set: the chordal mean of all skeleton
/// cluster rotations at the frame.
pub fn hand_target_rotation(skeleton: &SkeletonFrame) -> Result<Rot3> {
    assert!(
        !skeleton.cluster_rots.is_empty(),
        "skeleton carries no cluster rotations"
    );
    rotation_average(&skeleton.cluster_rots)
}

/// Gradients of the rotation-consistency loss: entry-wise gradient for each
/// predicted absolute rotation (tangent projected) and the scalar gradient
/// for each raw contact weight.
#[derive(Debug, Clone)]
pub struct RotLossGrads {
    pub rot: Vec<Mat3>,
    pub weight_raw: Vec<f64>,
}

/// Contact-weighted geodesic rotation loss:
/// `(1/N) sum_j sigma(w_j) || log(target^{-1} R_j) ||^2`.
///
/// Per Gaussian, the entry gradient is `(omega/N) * target * Q * [theta]_x`
/// with `Q = target^T R_j` and `theta = log(Q)`; chaining it through
/// on-manifold producers of `R_j` (6d decode times canonical quaternion)
/// yields exact parameter gradients.
pub fn object_rot_loss(
    gaussians: &[Gaussian],
    per_gaussian_rot: &[Rot3],
    target: &Rot3,
) -> Result<(f64, RotLossGrads)> {
    assert_eq!(gaussians.len(), per_gaussian_rot.len());
    let n = gaussians.len().max(1) as f64;
    let tinv = target.transpose();
    let mut total = 0.0;
    let mut grads = RotLossGrads {
        rot: Vec::with_capacity(gaussians.len()),
        weight_raw: Vec::with_capacity(gaussians.len()),
    };
    for (g, r) in gaussians.iter().zip(per_gaussian_rot.iter()) {
        let q = tinv * *r;
        let theta = so3_log(&q)?.w;
        let omega = sigmoid(g.weight_raw);
        total += omega * theta.norm_squared() / n;
        let skew_t = Mat3::new(
            0.0, -theta.z, theta.y, theta.z, 0.0, -theta.x, -theta.y, theta.x, 0.0,
        );
        grads
            .rot
            .push(target.matrix() * (q.matrix() * skew_t) * (omega / n));
        let s = omega * (1.0 - omega);
        grads.weight_raw.push(s * theta.norm_squared() / n);
    }
    Ok((total, grads))
}

/// Interaction loss: bidirectional Chamfer between the selected hand and
/// object contact subsets (zero when either is empty).
pub fn interaction_loss(
    hand_contact: &[Vec3],
    object_contact: &[Vec3],
) -> (f64, Vec<Vec3>, Vec<Vec3>) {
    chamfer_with_grads(hand_contact, object_contact)
}

/// Hinge penetration penalty over close hand-object pairs:
/// `sum max(0, m - d)^2` with margin `m` the mean of the two Gaussians'
/// largest scale axes. Pairs come from a spatial hash with cell size twice
/// the largest scale. Gradients are with respect to positions only; the
/// margin is treated as constant so the penalty cannot be satisfied by
/// shrinking Gaussians.
pub fn penetration_loss(
    hand: &[(Vec3, f64)],
    object: &[(Vec3, f64)],
) -> (f64, Vec<Vec3>, Vec<Vec3>) {
    let mut gh = vec![Vec3::zeros(); hand.len()];
    let mut go = vec![Vec3::zeros(); object.len()];
    if hand.is_empty() || object.is_empty() {
        return (0.0, gh, go);
    }
    let max_scale = hand
        .iter()
        .chain(object.iter())
        .map(|(_, s)| *s)
        .fold(0.0f64, f64::max);
    let cell = (2.0 * max_scale).max(1e-9);
    let key = |p: &Vec3| -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (j, (p, _)) in object.iter().enumerate() {
        grid.entry(key(p)).or_default().push(j);
    }
    let mut total = 0.0;
    for (i, (p, sh)) in hand.iter().enumerate() {
        let (cx, cy, cz) = key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = grid.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    for &j in bucket {
                        let (q, so) = &object[j];
                        let margin = 0.5 * (sh + so);
                        let diff = p - q;
                        let d = diff.norm();
                        if d >= margin {
                            continue;
                        }
                        let gap = margin - d;
                        total += gap * gap;
                        if d > 1e-12 {
                            let g = -2.0 * gap * diff / d;
                            gh[i] += g;
                            go[j] -= g;
                        }
                    }
                }
            }
        }
    }
    (total, gh, go)
}

/// Fraction of hand-object pairs closer than their penetration margin,
/// the statistic behind the physical-plausibility check.
pub fn penetration_violation_fraction(hand: &[(Vec3, f64)], object: &[(Vec3, f64)]) -> f64 {
    if hand.is_empty() || object.is_empty() {
        return 0.0;
    }
    let mut violating = 0usize;
    for (p, sh) in hand {
        for (q, so) in object {
            let margin = 0.5 * (sh + so);
            if (p - q).norm() < margin {
                violating += 1;
            }
        }
    }
    violating as f64 / (hand.len() * object.len()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussmodel::InitParams;
    use crate::geom::{
        quat_to_mat, quat_to_mat_backward, rot_from_6d, rot_from_6d_backward, so3_exp, AxisAngle,
        Rot6d,
    };
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ImageBuf {
        let mut img = ImageBuf::rgb(w, h);
        for v in img.data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        img
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-extent..extent),
                    rng.gen_range(-extent..extent),
                    rng.gen_range(-extent..extent),
                )
            })
            .collect()
    }

    #[test]
    fn photometric_zero_for_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 16, 16);
        let (loss, grad) = photometric_loss(&img, &img).unwrap();
        assert!(loss.abs() < 1e-12);
        // ssim of identical images is exactly 1; only l1 sign terms are 0
        assert!(grad.data.iter().all(|&g| g.abs() < 1e-12));
    }

    #[test]
    fn photometric_constant_offset_l1() {
        let w = 16;
        let mut a = ImageBuf::rgb(w, w);
        let mut b = ImageBuf::rgb(w, w);
        for v in a.data.iter_mut() {
            *v = 0.6;
        }
        for v in b.data.iter_mut() {
            *v = 0.5;
        }
        let (loss, _) = photometric_loss(&a, &b).unwrap();
        // constant planes: variance terms vanish, luminance term remains
        let lum = (2.0 * 0.6 * 0.5 + SSIM_C1) / (0.36 + 0.25 + SSIM_C1);
        let expected = (1.0 - LAMBDA_SSIM) * 0.1 + LAMBDA_SSIM * (1.0 - lum);
        assert_relative_eq!(loss, expected, epsilon = 1e-9);
    }

    /// Independent reference: direct per-window nested-loop SSIM.
    fn reference_ssim(a: &ImageBuf, b: &ImageBuf) -> f64 {
        let k = gaussian_kernel();
        let mut total = 0.0;
        let mut count = 0;
        for c in 0..a.channels {
            for wy in 0..=(a.height - SSIM_WIN) {
                for wx in 0..=(a.width - SSIM_WIN) {
                    let mut mx = 0.0;
                    let mut my = 0.0;
                    let mut sxx = 0.0;
                    let mut syy = 0.0;
                    let mut sxy = 0.0;
                    for j in 0..SSIM_WIN {
                        for i in 0..SSIM_WIN {
                            let wt = k[j] * k[i];
                            let xv = a.get(wx + i, wy + j, c);
                            let yv = b.get(wx + i, wy + j, c);
                            mx += wt * xv;
                            my += wt * yv;
                            sxx += wt * xv * xv;
                            syy += wt * yv * yv;
                            sxy += wt * xv * yv;
                        }
                    }
                    let vx = sxx - mx * mx;
                    let vy = syy - my * my;
                    let cxy = sxy - mx * my;
                    let s = ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                    total += s;
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_matches_reference_implementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..3 {
            let a = random_image(&mut rng, 20, 14);
            let b = random_image(&mut rng, 20, 14);
            let fast = ssim(&a, &b).unwrap();
            let slow = reference_ssim(&a, &b);
            assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
        }
    }

    #[test]
    fn ssim_identical_is_one_and_psnr_infinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 16, 16);
        assert_relative_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        assert!(psnr(&a, &a).unwrap().is_infinite());
    }

    #[test]
    fn psnr_uniform_offset() {
        let mut a = ImageBuf::rgb(8, 8);
        let mut b = ImageBuf::rgb(8, 8);
        for v in a.data.iter_mut() {
            *v = 0.3;
        }
        for v in b.data.iter_mut() {
            *v = 0.4;
        }
        assert_relative_eq!(psnr(&a, &b).unwrap(), 20.0, epsilon = 1e-9);
    }

    #[test]
    fn photometric_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = 14;
        let a = random_image(&mut rng, w, w);
        let b = random_image(&mut rng, w, w);
        let (_, grad) = photometric_loss(&a, &b).unwrap();
        let h = 1e-6;
        for probe in 0..40 {
            let i = (probe * 17) % a.data.len();
            let mut ap = a.clone();
            ap.data[i] += h;
            let (fp, _) = photometric_loss(&ap, &b).unwrap();
            ap.data[i] -= 2.0 * h;
            let (fm, _) = photometric_loss(&ap, &b).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let denom = grad.data[i].abs().max(fd.abs()).max(1e-6);
            assert!(
                (grad.data[i] - fd).abs() / denom < 1e-4,
                "pixel {i}: analytic {} vs fd {fd}",
                grad.data[i]
            );
        }
    }

    #[test]
    fn weighted_photometric_ignores_masked_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = 14;
        let a = random_image(&mut rng, w, w);
        let mut b = a.clone();
        b.data[3] = 1.0 - b.data[3]; // corrupt pixel 1, channel 0
        let mut wts = vec![1.0; w * w];
        wts[1] = 0.0;
        let (loss, _) = photometric_loss_weighted(&a, &b, Some(&wts)).unwrap();
        assert!(loss < 1e-9, "masked pixel leaked: {loss}");
    }

    fn brute_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
        if a.is_empty() || b.is_empty() {
            return 0.0;
        }
        let one = |xs: &[Vec3], ys: &[Vec3]| -> f64 {
            xs.iter()
                .map(|x| {
                    ys.iter()
                        .map(|y| (x - y).norm_squared())
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
                / xs.len() as f64
        };
        one(a, b) + one(b, a)
    }

    #[test]
    fn chamfer_trivial_and_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_points(&mut rng, 20, 1.0);
        assert_eq!(chamfer(&a, &a), 0.0);
        assert_eq!(chamfer(&[Vec3::zeros()], &[Vec3::new(1.0, 0.0, 0.0)]), 2.0);
        assert_eq!(chamfer(&[], &a), 0.0);
        assert_eq!(chamfer(&[], &[]), 0.0);
        for _ in 0..20 {
            let a = random_points(&mut rng, 50, 1.0);
            let b = random_points(&mut rng, 37, 1.0);
            assert_relative_eq!(chamfer(&a, &b), brute_chamfer(&a, &b), epsilon = 1e-12);
        }
    }

    #[test]
    fn chamfer_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_points(&mut rng, 12, 1.0);
        let b = random_points(&mut rng, 9, 1.0);
        let (_, ga, gb) = chamfer_with_grads(&a, &b);
        let h = 1e-5;
        for i in 0..a.len() {
            for c in 0..3 {
                let mut ap = a.clone();
                ap[i][c] += h;
                let fp = chamfer(&ap, &b);
                ap[i][c] -= 2.0 * h;
                let fm = chamfer(&ap, &b);
                let fd = (fp - fm) / (2.0 * h);
                let denom = ga[i][c].abs().max(fd.abs()).max(1e-6);
                assert!((ga[i][c] - fd).abs() / denom < 1e-4);
            }
        }
        for j in 0..b.len() {
            for c in 0..3 {
                let mut bp = b.clone();
                bp[j][c] += h;
                let fp = chamfer(&a, &bp);
                bp[j][c] -= 2.0 * h;
                let fm = chamfer(&a, &bp);
                let fd = (fp - fm) / (2.0 * h);
                let denom = gb[j][c].abs().max(fd.abs()).max(1e-6);
                assert!((gb[j][c] - fd).abs() / denom < 1e-4);
            }
        }
    }

    fn toy_skeleton(verts: Vec<Vec3>) -> SkeletonFrame {
        let n = verts.len();
        SkeletonFrame {
            t: 0.0,
            verts,
            cluster_ids: vec![0; n],
            cluster_rots: vec![Rot3::identity()],
        }
    }

    #[test]
    fn hand_loss_cases() {
        let sk = toy_skeleton(random_points(&mut ChaCha8Rng::seed_from_u64(8), 20, 1.0));
        let on_verts: Vec<Vec3> = sk.verts.iter().take(5).cloned().collect();
        let (l, _) = hand_trans_loss(&on_verts, &sk).unwrap();
        assert_eq!(l, 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = random_points(&mut rng, 100, 1.0);
        let (l2, _) = hand_trans_loss(&pts, &sk).unwrap();
        let brute: f64 = pts
            .iter()
            .map(|p| {
                sk.verts
                    .iter()
                    .map(|v| (p - v).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / pts.len() as f64;
        assert_relative_eq!(l2, brute, epsilon = 1e-12);

        assert!(matches!(
            hand_trans_loss(&pts, &toy_skeleton(vec![])),
            Err(Error::EmptySkeleton)
        ));
    }

    #[test]
    fn hand_loss_single_gaussian_distance_squared() {
        // one vertex, one gaussian at distance d
        let sk = toy_skeleton(vec![Vec3::zeros()]);
        let d = 0.37;
        let (l, g) = hand_trans_loss(&[Vec3::new(d, 0.0, 0.0)], &sk).unwrap();
        assert_relative_eq!(l, d * d, epsilon = 1e-12);
        assert_relative_eq!(g[0].x, 2.0 * d, epsilon = 1e-12);
    }

    fn gaussian_with_weight(w: f64) -> Gaussian {
        let mut g = InitParams::default().gaussian_at(Vec3::zeros());
        g.weight_raw = w;
        g
    }

    #[test]
    fn contact_weight_values() {
        assert_eq!(contact_weight(&gaussian_with_weight(0.0)), 0.5);
        assert!(contact_weight(&gaussian_with_weight(20.0)) > 0.999999);
        assert_relative_eq!(
            contact_weight(&gaussian_with_weight(1.0)),
            1.0 / (1.0 + (-1.0f64).exp()),
            epsilon = 1e-12
        );
    }

    #[test]
    fn hand_target_rotation_cases() {
        let mut sk = toy_skeleton(vec![Vec3::zeros()]);
        let r = Rot3::rot_z(0.3);
        sk.cluster_rots = vec![r, r, r];
        let avg = hand_target_rotation(&sk).unwrap();
        assert_relative_eq!(avg.matrix(), r.matrix(), epsilon = 1e-12);

        sk.cluster_rots = vec![Rot3::rot_z(0.2), Rot3::rot_z(0.6)];
        let avg2 = hand_target_rotation(&sk).unwrap();
        let ang = so3_log(&avg2).unwrap().w.z;
        assert_relative_eq!(ang, 0.4, epsilon = 1e-9);

        sk.cluster_rots = vec![Rot3::rot_z(-0.8)];
        let single = hand_target_rotation(&sk).unwrap();
        assert_relative_eq!(single.matrix(), Rot3::rot_z(-0.8).matrix(), epsilon = 1e-12);
    }

    #[test]
    fn rot_loss_trivial_cases() {
        let target = Rot3::rot_z(0.7);
        let gs: Vec<Gaussian> = (0..4).map(|_| gaussian_with_weight(3.0)).collect();
        let rots = vec![target; 4];
        let (l, _) = object_rot_loss(&gs, &rots, &target).unwrap();
        assert!(l < 1e-18);

        let theta: f64 = 0.4;
        let g1 = vec![gaussian_with_weight(40.0)];
        let r1 = vec![target * Rot3::rot_z(theta)];
        let (l1, _) = object_rot_loss(&g1, &r1, &target).unwrap();
        assert_relative_eq!(l1, theta * theta, epsilon = 1e-9);
    }

    #[test]
    fn rot_loss_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let target = crate::geom::tests::random_rot(&mut rng);
        let n = 16;
        let gs: Vec<Gaussian> = (0..n)
            .map(|_| gaussian_with_weight(rng.gen_range(-2.0..2.0)))
            .collect();
        let rots: Vec<Rot3> = (0..n)
            .map(|_| {
                target
                    * so3_exp(&AxisAngle::new(
                        rng.gen_range(-0.8..0.8),
                        rng.gen_range(-0.8..0.8),
                        rng.gen_range(-0.8..0.8),
                    ))
            })
            .collect();
        let (l, _) = object_rot_loss(&gs, &rots, &target).unwrap();
        let mut oracle = 0.0;
        for (g, r) in gs.iter().zip(rots.iter()) {
            let q = target.transpose() * *r;
            let th = so3_log(&q).unwrap().w;
            oracle += sigmoid(g.weight_raw) * th.norm_squared() / n as f64;
        }
        assert_relative_eq!(l, oracle, epsilon = 1e-12);
    }

    #[test]
    fn rot_loss_right_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let target = crate::geom::tests::random_rot(&mut rng);
            let fixed = crate::geom::tests::random_rot(&mut rng);
            let gs: Vec<Gaussian> = (0..6)
                .map(|_| gaussian_with_weight(rng.gen_range(-2.0..2.0)))
                .collect();
            let rots: Vec<Rot3> = (0..6)
                .map(|_| {
                    target
                        * so3_exp(&AxisAngle::new(
                            rng.gen_range(-0.5..0.5),
                            rng.gen_range(-0.5..0.5),
                            rng.gen_range(-0.5..0.5),
                        ))
                })
                .collect();
            let (l, _) = object_rot_loss(&gs, &rots, &target).unwrap();
            let rots_q: Vec<Rot3> = rots.iter().map(|r| *r * fixed).collect();
            let target_q = target * fixed;
            let (lq, _) = object_rot_loss(&gs, &rots_q, &target_q).unwrap();
            assert_relative_eq!(l, lq, epsilon = 1e-9);
        }
    }

    /// Gradient check of the whole rotation-loss chain: the predicted
    /// rotation is the 6d-decoded offset times the canonical quaternion,
    /// exactly like the training path.
    #[test]
    fn rot_loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let target = crate::geom::tests::random_rot(&mut rng);
            let n = 3;
            let gs: Vec<Gaussian> = (0..n)
                .map(|_| gaussian_with_weight(rng.gen_range(-1.5..1.5)))
                .collect();
            let dr6s: Vec<[f64; 6]> = (0..n)
                .map(|_| std::array::from_fn(|_| rng.gen_range(-0.3..0.3)))
                .collect();
            let quats: Vec<[f64; 4]> = (0..n)
                .map(|_| {
                    [
                        rng.gen_range(0.7..1.3),
                        rng.gen_range(-0.4..0.4),
                        rng.gen_range(-0.4..0.4),
                        rng.gen_range(-0.4..0.4),
                    ]
                })
                .collect();
            let compose = |dr6s: &[[f64; 6]], quats: &[[f64; 4]]| -> Vec<Rot3> {
                dr6s.iter()
                    .zip(quats.iter())
                    .map(|(d, q)| {
                        let id = Rot6d::identity();
                        let v = Rot6d::new(std::array::from_fn(|i| id.v[i] + d[i]));
                        rot_from_6d(&v).unwrap() * quat_to_mat(q)
                    })
                    .collect()
            };
            let rots = compose(&dr6s, &quats);
            let (_, grads) = object_rot_loss(&gs, &rots, &target).unwrap();
            let loss_of = |dr6s: &[[f64; 6]], quats: &[[f64; 4]], ws: &[f64]| -> f64 {
                let mut gs2 = gs.clone();
                for (g, w) in gs2.iter_mut().zip(ws.iter()) {
                    g.weight_raw = *w;
                }
                let (l, _) = object_rot_loss(&gs2, &compose(dr6s, quats), &target).unwrap();
                l
            };
            let ws: Vec<f64> = gs.iter().map(|g| g.weight_raw).collect();
            let h = 1e-5;
            for i in 0..n {
                let delta_r = quat_to_mat(&quats[i]);
                let g_delta = grads.rot[i] * delta_r.matrix().transpose();
                let id = Rot6d::identity();
                let v = Rot6d::new(std::array::from_fn(|k| id.v[k] + dr6s[i][k]));
                let g_dr6 = rot_from_6d_backward(&v, &g_delta).unwrap();
                let delta = rot_from_6d(&v).unwrap();
                let g_can = delta.matrix().transpose() * grads.rot[i];
                let g_quat = quat_to_mat_backward(&quats[i], &g_can);

                for k in 0..6 {
                    let mut dp = dr6s.clone();
                    dp[i][k] += h;
                    let fp = loss_of(&dp, &quats, &ws);
                    dp[i][k] -= 2.0 * h;
                    let fm = loss_of(&dp, &quats, &ws);
                    let fd = (fp - fm) / (2.0 * h);
                    let denom = g_dr6[k].abs().max(fd.abs()).max(1e-6);
                    assert!(
                        (g_dr6[k] - fd).abs() / denom < 1e-4,
                        "dr6[{i}][{k}]: {} vs {fd}",
                        g_dr6[k]
                    );
                }
                for k in 0..4 {
                    let mut qp = quats.clone();
                    qp[i][k] += h;
                    let fp = loss_of(&dr6s, &qp, &ws);
                    qp[i][k] -= 2.0 * h;
                    let fm = loss_of(&dr6s, &qp, &ws);
                    let fd = (fp - fm) / (2.0 * h);
                    let denom = g_quat[k].abs().max(fd.abs()).max(1e-6);
                    assert!(
                        (g_quat[k] - fd).abs() / denom < 1e-4,
                        "quat[{i}][{k}]: {} vs {fd}",
                        g_quat[k]
                    );
                }
                let mut wp = ws.clone();
                wp[i] += h;
                let fp = loss_of(&dr6s, &quats, &wp);
                wp[i] -= 2.0 * h;
                let fm = loss_of(&dr6s, &quats, &wp);
                let fd = (fp - fm) / (2.0 * h);
                let denom = grads.weight_raw[i].abs().max(fd.abs()).max(1e-6);
                assert!((grads.weight_raw[i] - fd).abs() / denom < 1e-4);
            }
        }
    }

    #[test]
    fn interaction_loss_cases() {
        let (l, _, _) = interaction_loss(&[], &[]);
        assert_eq!(l, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_points(&mut rng, 30, 0.5);
        let (l2, _, _) = interaction_loss(&a, &a);
        assert_eq!(l2, 0.0);
        let b = random_points(&mut rng, 25, 0.5);
        let (l3, _, _) = interaction_loss(&a, &b);
        assert_relative_eq!(l3, brute_chamfer(&a, &b), epsilon = 1e-12);
    }

    fn brute_penetration(hand: &[(Vec3, f64)], object: &[(Vec3, f64)]) -> f64 {
        let mut total = 0.0;
        for (p, sh) in hand {
            for (q, so) in object {
                let margin = 0.5 * (sh + so);
                let d = (p - q).norm();
                if d < margin {
                    total += (margin - d) * (margin - d);
                }
            }
        }
        total
    }

    #[test]
    fn penetration_cases_and_brute_force() {
        let hand = vec![(Vec3::zeros(), 0.1)];
        let object = vec![(Vec3::new(1.0, 0.0, 0.0), 0.1)];
        assert_eq!(penetration_loss(&hand, &object).0, 0.0);

        // coincident pair: hinge value m^2
        let hand = vec![(Vec3::zeros(), 0.2)];
        let object = vec![(Vec3::zeros(), 0.4)];
        let m: f64 = 0.3;
        assert_relative_eq!(penetration_loss(&hand, &object).0, m * m, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let hand: Vec<(Vec3, f64)> = random_points(&mut rng, 40, 0.3)
                .into_iter()
                .map(|p| (p, rng.gen_range(0.02..0.2)))
                .collect();
            let object: Vec<(Vec3, f64)> = random_points(&mut rng, 50, 0.3)
                .into_iter()
                .map(|p| (p, rng.gen_range(0.02..0.2)))
                .collect();
            let (l, _, _) = penetration_loss(&hand, &object);
            assert_relative_eq!(l, brute_penetration(&hand, &object), epsilon = 1e-12);
        }
    }

    #[test]
    fn penetration_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let hand: Vec<(Vec3, f64)> = random_points(&mut rng, 15, 0.2)
            .into_iter()
            .map(|p| (p, rng.gen_range(0.05..0.25)))
            .collect();
        let object: Vec<(Vec3, f64)> = random_points(&mut rng, 12, 0.2)
            .into_iter()
            .map(|p| (p, rng.gen_range(0.05..0.25)))
            .collect();
        let (_, gh, go) = penetration_loss(&hand, &object);
        let h = 1e-5;
        for i in 0..hand.len() {
            for c in 0..3 {
                let mut hp = hand.clone();
                hp[i].0[c] += h;
                let fp = penetration_loss(&hp, &object).0;
                hp[i].0[c] -= 2.0 * h;
                let fm = penetration_loss(&hp, &object).0;
                let fd = (fp - fm) / (2.0 * h);
                let denom = gh[i][c].abs().max(fd.abs()).max(1e-6);
                assert!((gh[i][c] - fd).abs() / denom < 1e-4);
            }
        }
        for j in 0..object.len() {
            for c in 0..3 {
                let mut op = object.clone();
                op[j].0[c] += h;
                let fp = penetration_loss(&hand, &op).0;
                op[j].0[c] -= 2.0 * h;
                let fm = penetration_loss(&hand, &op).0;
                let fd = (fp - fm) / (2.0 * h);
                let denom = go[j][c].abs().max(fd.abs()).max(1e-6);
                assert!((go[j][c] - fd).abs() / denom < 1e-4);
            }
        }
    }

    /// On a 1D two-point configuration the interaction gradient closes an
    /// open gap while the penetration gradient opens an overlap.
    #[test]
    fn interaction_and_penetration_push_opposite_ways() {
        let hand_p = Vec3::zeros();
        let margin_scale = 0.2;
        let obj_far = Vec3::new(1.0, 0.0, 0.0);
        let (_, _, g_obj) = interaction_loss(&[hand_p], &[obj_far]);
        assert!(g_obj[0].x > 0.0, "descent moves the object toward the hand");
        let (lp, _, _) = penetration_loss(&[(hand_p, margin_scale)], &[(obj_far, margin_scale)]);
        assert_eq!(lp, 0.0);

        let obj_near = Vec3::new(0.05, 0.0, 0.0);
        let (_, _, gp_obj) =
            penetration_loss(&[(hand_p, margin_scale)], &[(obj_near, margin_scale)]);
        assert!(gp_obj[0].x < 0.0, "descent moves the object away");
    }

    proptest! {
        #[test]
        fn prop_chamfer_symmetry_and_nonnegativity(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_points(&mut rng, 12, 1.0);
            let b = random_points(&mut rng, 7, 1.0);
            let ab = chamfer(&a, &b);
            let ba = chamfer(&b, &a);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab >= 0.0);
        }
    }
}
