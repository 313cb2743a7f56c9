//! Differentiable software rasterizer: pinhole projection with the
//! local-affine (EWA) covariance approximation, front-to-back alpha
//! compositing, and an exact reverse pass back to 3D Gaussian parameters.
//!
//! Rendering is row-parallel and bit-deterministic: splats are sorted by
//! (depth, index) and every per-pixel loop runs in that order, so repeated
//! renders are byte-identical regardless of worker count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{Mat3, Rot3, Vec3};
use crate::img::ImageBuf;

/// Pixels with `0.5 d^T cov2d^{-1} d` above this are outside a splat's
/// support (~6 sigma). Keeps truncation error below ~1.5e-8 so
/// finite-difference gradient checks stay clean.
const POWER_CUT: f64 = 18.0;
/// Blur floor added to the projected covariance diagonal (px^2),
/// the standard splatting anti-aliasing choice.
const COV_BLUR: f64 = 0.3;
/// Per-splat alpha is clamped here to keep transmittance gradients finite.
const ALPHA_CLAMP: f64 = 0.99;
/// Per-pixel compositing stops once transmittance falls below this.
const T_TERMINATE: f64 = 1e-4;
/// Cull margin in projected sigmas used for the image-bounds test.
const CULL_SIGMA: f64 = 3.0;

/// Pinhole camera with a world-to-camera rigid transform
/// (`x_cam = rot * x + trans`).
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rot: Mat3,
    pub trans: Vec3,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    /// Camera at `eye` looking at `target` with `up` as the vertical hint.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fx: f64,
        width: usize,
        height: usize,
    ) -> Camera {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        // camera frame: x right, y down, z forward
        let rot = Mat3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        Camera {
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rot,
            trans: -(rot * eye),
            width,
            height,
            near: 0.05,
            far: 100.0,
        }
    }

    pub fn world_to_cam(&self, p: &Vec3) -> Vec3 {
        self.rot * p + self.trans
    }
}

/// A Gaussian as seen by the renderer at one timestamp: deformed pose plus
/// activated opacity. This is the differentiable rendering interface; the
/// raw optimizable parameters stay in `gaussmodel`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderGaussian {
    pub pos: Vec3,
    pub rot: Rot3,
    pub scale: Vec3,
    pub opacity: f64,
    pub color: [f64; 3],
}

/// A projected splat: 2D mean in pixels, upper-triangle 2D covariance
/// `(xx, xy, yy)` in px^2, camera depth, opacity and color carried through.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub mean: [f64; 2],
    pub cov: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
}

impl Splat2D {
    fn inv_cov(&self) -> [f64; 3] {
        let [a, b, c] = self.cov;
        let det = a * c - b * b;
        [c / det, -b / det, a / det]
    }

    fn max_sigma(&self) -> f64 {
        let [a, b, c] = self.cov;
        let mid = 0.5 * (a + c);
        let d = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        (mid + d).max(0.0).sqrt()
    }
}

/// Projection result: either a splat or a culled Gaussian (behind the
/// camera, outside the depth range, or beyond the image bounds plus a
/// 3-sigma margin).
#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Splat(Splat2D),
    Culled,
}

/// Project one deformed Gaussian through the camera.
///
/// Mean by pinhole projection; 2D covariance by the local-affine
/// approximation `J W Sigma W^T J^T` with the Jacobian evaluated at the
/// mean, plus a blur floor on the diagonal.
pub fn project(g: &RenderGaussian, cam: &Camera) -> Projection {
    let xc = cam.world_to_cam(&g.pos);
    if !(xc.z > cam.near && xc.z < cam.far) {
        return Projection::Culled;
    }
    let inv_z = 1.0 / xc.z;
    let u = cam.fx * xc.x * inv_z + cam.cx;
    let v = cam.fy * xc.y * inv_z + cam.cy;

    let sigma = {
        let d = Mat3::from_diagonal(&Vec3::new(
            g.scale.x * g.scale.x,
            g.scale.y * g.scale.y,
            g.scale.z * g.scale.z,
        ));
        g.rot.matrix() * d * g.rot.matrix().transpose()
    };
    let v3 = cam.rot * sigma * cam.rot.transpose();
    // J = d(mean2d)/d(x_cam), 2x3
    let j00 = cam.fx * inv_z;
    let j02 = -cam.fx * xc.x * inv_z * inv_z;
    let j11 = cam.fy * inv_z;
    let j12 = -cam.fy * xc.y * inv_z * inv_z;
    // M = J V J^T expanded with the sparse J
    let a = j00 * (j00 * v3[(0, 0)] + j02 * v3[(2, 0)])
        + j02 * (j00 * v3[(0, 2)] + j02 * v3[(2, 2)])
        + COV_BLUR;
    let b = j11 * (j00 * v3[(0, 1)] + j02 * v3[(2, 1)])
        + j12 * (j00 * v3[(0, 2)] + j02 * v3[(2, 2)]);
    let c = j11 * (j11 * v3[(1, 1)] + j12 * v3[(2, 1)])
        + j12 * (j11 * v3[(1, 2)] + j12 * v3[(2, 2)])
        + COV_BLUR;

    let splat = Splat2D {
        mean: [u, v],
        cov: [a, b, c],
        depth: xc.z,
        opacity: g.opacity,
        color: g.color,
    };
    let margin = CULL_SIGMA * splat.max_sigma();
    if u < -margin
        || u > cam.width as f64 + margin
        || v < -margin
        || v > cam.height as f64 + margin
    {
        return Projection::Culled;
    }
    Projection::Splat(splat)
}

/// One recorded pixel contribution: enough to replay compositing in reverse.
#[derive(Debug, Clone, Copy)]
struct TapeEntry {
    x: u32,
    /// Index into the sorted splat order.
    ord: u32,
    /// Gaussian falloff exp(-power) before the opacity multiply.
    g: f64,
}

/// Forward-pass record for the reverse pass.
#[derive(Debug, Clone)]
struct RenderTape {
    /// Sorted indices into the caller's splat list (depth then index).
    order: Vec<usize>,
    /// Per-row contribution logs, in compositing order.
    rows: Vec<Vec<TapeEntry>>,
    /// Final per-pixel transmittance.
    final_t: Vec<f64>,
    bg: [f64; 3],
    splats: Vec<Splat2D>,
}

/// Rendered image, accumulated alpha, and the tape for the reverse pass.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: ImageBuf,
    /// Per-pixel accumulated opacity, row-major.
    pub alpha: Vec<f64>,
    tape: RenderTape,
}

/// Gradients with respect to every field of one [`Splat2D`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SplatGrad {
    pub mean: [f64; 2],
    pub cov: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
}

/// Horizontal pixel range of the iso-power ellipse at image row `y`,
/// `None` when the row misses the splat's support.
fn row_range(s: &Splat2D, inv: &[f64; 3], y: usize, width: usize) -> Option<(usize, usize)> {
    let dy = (y as f64 + 0.5) - s.mean[1];
    let [la, lb, lc] = *inv;
    // la dx^2 + 2 lb dy dx + lc dy^2 - 2 cut <= 0
    let disc = lb * lb * dy * dy - la * (lc * dy * dy - 2.0 * POWER_CUT);
    if disc <= 0.0 || la <= 0.0 {
        return None;
    }
    let half = disc.sqrt() / la;
    let mid = s.mean[0] - lb * dy / la;
    let x0 = (mid - half - 0.5).ceil().max(0.0) as usize;
    let x1 = (mid + half - 0.5).floor().min(width as f64 - 1.0);
    if x1 < 0.0 || x0 > x1 as usize {
        return None;
    }
    Some((x0, x1 as usize))
}

/// Composite projected splats front to back over a constant background.
///
/// Per pixel, `alpha_i = clamp(opacity_i * exp(-power), 0, 0.99)` and colors
/// accumulate as `sum alpha_i c_i prod_{j<i} (1 - alpha_j)`; compositing
/// stops once transmittance drops below 1e-4. Splats are sorted internally
/// by (depth, index), so the input order does not matter.
pub fn rasterize(splats: &[Splat2D], cam: &Camera, bg: [f64; 3]) -> RenderOutput {
    let (w, h) = (cam.width, cam.height);
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&i, &j| {
        splats[i]
            .depth
            .partial_cmp(&splats[j].depth)
            .unwrap()
            .then(i.cmp(&j))
    });
    let inv_covs: Vec<[f64; 3]> = splats.iter().map(|s| s.inv_cov()).collect();

    // rows are independent; each produces its pixels and its tape
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<TapeEntry>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut color = vec![0.0f64; w * 3];
            let mut trans = vec![1.0f64; w];
            let mut tape: Vec<TapeEntry> = Vec::new();
            for (ord, &si) in order.iter().enumerate() {
                let s = &splats[si];
                let inv = &inv_covs[si];
                let Some((x0, x1)) = row_range(s, inv, y, w) else {
                    continue;
                };
                let dy = (y as f64 + 0.5) - s.mean[1];
                for x in x0..=x1 {
                    let t = trans[x];
                    if t < T_TERMINATE {
                        continue;
                    }
                    let dx = (x as f64 + 0.5) - s.mean[0];
                    let power =
                        0.5 * (inv[0] * dx * dx + 2.0 * inv[1] * dx * dy + inv[2] * dy * dy);
                    if power > POWER_CUT || power < 0.0 {
                        continue;
                    }
                    let g = (-power).exp();
                    let alpha = (s.opacity * g).min(ALPHA_CLAMP);
                    if alpha < 1e-12 {
                        continue;
                    }
                    tape.push(TapeEntry {
                        x: x as u32,
                        ord: ord as u32,
                        g,
                    });
                    let at = alpha * t;
                    color[x * 3] += at * s.color[0];
                    color[x * 3 + 1] += at * s.color[1];
                    color[x * 3 + 2] += at * s.color[2];
                    trans[x] = t * (1.0 - alpha);
                }
            }
            for x in 0..w {
                let t = trans[x];
                color[x * 3] += t * bg[0];
                color[x * 3 + 1] += t * bg[1];
                color[x * 3 + 2] += t * bg[2];
            }
            (color, trans, tape)
        })
        .collect();

    let mut image = ImageBuf::rgb(w, h);
    let mut alpha = vec![0.0; w * h];
    let mut final_t = vec![1.0; w * h];
    let mut row_tapes = Vec::with_capacity(h);
    for (y, (color, trans, tape)) in rows.into_iter().enumerate() {
        image.data[y * w * 3..(y + 1) * w * 3].copy_from_slice(&color);
        for (x, t) in trans.into_iter().enumerate() {
            final_t[y * w + x] = t;
            alpha[y * w + x] = 1.0 - t;
        }
        row_tapes.push(tape);
    }
    RenderOutput {
        image,
        alpha,
        tape: RenderTape {
            order,
            rows: row_tapes,
            final_t,
            bg,
            splats: splats.to_vec(),
        },
    }
}

/// Exact reverse of [`rasterize`]: per-splat gradients for the mean,
/// covariance, opacity, and color given `dL/d(image)`.
///
/// Output is indexed like the splat list passed to the forward pass.
pub fn rasterize_backward(out: &RenderOutput, grad_image: &ImageBuf) -> Result<Vec<SplatGrad>> {
    let tape = &out.tape;
    let (w, h) = (out.image.width, out.image.height);
    if grad_image.width != w || grad_image.height != h || grad_image.channels != 3 {
        return Err(Error::TapeMismatch);
    }
    let n = tape.splats.len();
    let inv_covs: Vec<[f64; 3]> = tape.splats.iter().map(|s| s.inv_cov()).collect();

    // per-row partial gradients, reduced in row order for determinism
    let partials: Vec<Vec<SplatGrad>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut grads = vec![SplatGrad::default(); n];
            let entries = &tape.rows[y];
            // reconstruct running transmittance and the behind-sum per pixel
            let mut t_cur: Vec<f64> = (0..w).map(|x| tape.final_t[y * w + x]).collect();
            let mut behind: Vec<[f64; 3]> = (0..w)
                .map(|x| {
                    let t = tape.final_t[y * w + x];
                    [t * tape.bg[0], t * tape.bg[1], t * tape.bg[2]]
                })
                .collect();
            for e in entries.iter().rev() {
                let si = tape.order[e.ord as usize];
                let s = &tape.splats[si];
                let inv = &inv_covs[si];
                let x = e.x as usize;
                let gpx = [
                    grad_image.data[(y * w + x) * 3],
                    grad_image.data[(y * w + x) * 3 + 1],
                    grad_image.data[(y * w + x) * 3 + 2],
                ];
                let raw_alpha = s.opacity * e.g;
                let clamped = raw_alpha > ALPHA_CLAMP;
                let alpha = raw_alpha.min(ALPHA_CLAMP);
                let one_m = 1.0 - alpha;
                let t_before = t_cur[x] / one_m;
                let at = alpha * t_before;

                let gs = &mut grads[si];
                for c in 0..3 {
                    gs.color[c] += gpx[c] * at;
                }
                // dC/dalpha = c_i T_i - S_i / (1 - alpha_i)
                let mut g_alpha = 0.0;
                for c in 0..3 {
                    g_alpha += gpx[c] * (s.color[c] * t_before - behind[x][c] / one_m);
                }
                if !clamped {
                    gs.opacity += g_alpha * e.g;
                    // alpha = opacity * exp(-power)
                    let g_power = -g_alpha * raw_alpha;
                    let dx = (x as f64 + 0.5) - s.mean[0];
                    let dy = (y as f64 + 0.5) - s.mean[1];
                    let px = inv[0] * dx + inv[1] * dy;
                    let py = inv[1] * dx + inv[2] * dy;
                    gs.mean[0] -= g_power * px;
                    gs.mean[1] -= g_power * py;
                    // power = (la dx^2 + 2 lb dx dy + lc dy^2) / 2
                    gs.cov[0] += g_power * 0.5 * dx * dx; // accumulates dL/d(la) for now
                    gs.cov[1] += g_power * dx * dy;
                    gs.cov[2] += g_power * 0.5 * dy * dy;
                }
                // roll state back to "before this splat"
                for c in 0..3 {
                    behind[x][c] += s.color[c] * at;
                }
                t_cur[x] = t_before;
            }
            grads
        })
        .collect();

    let mut grads = vec![SplatGrad::default(); n];
    for row in partials {
        for (acc, g) in grads.iter_mut().zip(row.iter()) {
            for c in 0..2 {
                acc.mean[c] += g.mean[c];
            }
            for c in 0..3 {
                acc.cov[c] += g.cov[c];
                acc.color[c] += g.color[c];
            }
            acc.opacity += g.opacity;
        }
    }
    // convert inverse-covariance gradients to covariance gradients:
    // dL/dM = -Inv * G * Inv with G the symmetric gradient matrix
    for (gs, s) in grads.iter_mut().zip(tape.splats.iter()) {
        let [la, lb, lc] = s.inv_cov();
        let [ga, gb, gc] = gs.cov;
        let (g00, g01, g11) = (ga, 0.5 * gb, gc);
        let p00 = la * (g00 * la + g01 * lb) + lb * (g01 * la + g11 * lb);
        let p01 = la * (g00 * lb + g01 * lc) + lb * (g01 * lb + g11 * lc);
        let p11 = lb * (g00 * lb + g01 * lc) + lc * (g01 * lb + g11 * lc);
        gs.cov = [-p00, -2.0 * p01, -p11];
    }
    Ok(grads)
}

/// Gradients with respect to one [`RenderGaussian`]'s fields. Rotation
/// gradients are per matrix entry; callers chain them into their rotation
/// parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderGaussianGrad {
    pub pos: Vec3,
    pub rot: Mat3,
    pub scale: Vec3,
    pub opacity: f64,
    pub color: [f64; 3],
}

impl RenderGaussianGrad {
    pub fn zero() -> Self {
        RenderGaussianGrad {
            pos: Vec3::zeros(),
            rot: Mat3::zeros(),
            scale: Vec3::zeros(),
            opacity: 0.0,
            color: [0.0; 3],
        }
    }
}

/// Chain splat-level gradients through the projection back to the 3D
/// Gaussian: position, rotation entries, scale, opacity, color.
pub fn project_backward(
    g: &RenderGaussian,
    cam: &Camera,
    grad: &SplatGrad,
) -> RenderGaussianGrad {
    let xc = cam.world_to_cam(&g.pos);
    let inv_z = 1.0 / xc.z;
    let j00 = cam.fx * inv_z;
    let j02 = -cam.fx * xc.x * inv_z * inv_z;
    let j11 = cam.fy * inv_z;
    let j12 = -cam.fy * xc.y * inv_z * inv_z;

    let d = Mat3::from_diagonal(&Vec3::new(
        g.scale.x * g.scale.x,
        g.scale.y * g.scale.y,
        g.scale.z * g.scale.z,
    ));
    let sigma = g.rot.matrix() * d * g.rot.matrix().transpose();
    let v3 = cam.rot * sigma * cam.rot.transpose();

    // dL/dM with M read as (xx, xy, yy); the yx entry is never consumed
    let gm = nalgebra::Matrix2::new(grad.cov[0], grad.cov[1], 0.0, grad.cov[2]);
    // J as a 2x3 (sparse) matrix
    let j = nalgebra::Matrix2x3::new(j00, 0.0, j02, 0.0, j11, j12);
    // dL/dV = J^T Gm J
    let gv = j.transpose() * gm * j;
    // dL/dSigma = W^T Gv W
    let gsigma = cam.rot.transpose() * gv * cam.rot;
    // dL/dR = (Gs + Gs^T) R D
    let grot = (gsigma + gsigma.transpose()) * g.rot.matrix() * d;
    // dL/ds_k = 2 s_k (R^T Gs R)_kk
    let rtgr = g.rot.matrix().transpose() * gsigma * g.rot.matrix();
    let gscale = Vec3::new(
        2.0 * g.scale.x * rtgr[(0, 0)],
        2.0 * g.scale.y * rtgr[(1, 1)],
        2.0 * g.scale.z * rtgr[(2, 2)],
    );

    // dL/dJ = Gm J V^T + Gm^T J V
    let gj = gm * j * v3.transpose() + gm.transpose() * j * v3;

    // mean2d path
    let mut gx = grad.mean[0] * j00;
    let mut gy = grad.mean[1] * j11;
    let mut gz = grad.mean[0] * j02 + grad.mean[1] * j12;
    // J entries depend on x_cam as well
    let iz2 = inv_z * inv_z;
    gx += gj[(0, 2)] * (-cam.fx * iz2);
    gy += gj[(1, 2)] * (-cam.fy * iz2);
    gz += gj[(0, 0)] * (-cam.fx * iz2)
        + gj[(1, 1)] * (-cam.fy * iz2)
        + gj[(0, 2)] * (2.0 * cam.fx * xc.x * iz2 * inv_z)
        + gj[(1, 2)] * (2.0 * cam.fy * xc.y * iz2 * inv_z);

    let gpos = cam.rot.transpose() * Vec3::new(gx, gy, gz);

    RenderGaussianGrad {
        pos: gpos,
        rot: grot,
        scale: gscale,
        opacity: grad.opacity,
        color: grad.color,
    }
}

/// Forward render of a set of deformed Gaussians: project, cull, composite.
/// Returns the output and the per-Gaussian projection results so the
/// backward pass can route splat gradients to the right Gaussians.
pub fn render(
    gaussians: &[RenderGaussian],
    cam: &Camera,
    bg: [f64; 3],
) -> (RenderOutput, Vec<Option<usize>>) {
    let mut splats = Vec::with_capacity(gaussians.len());
    let mut slots = Vec::with_capacity(gaussians.len());
    for g in gaussians {
        match project(g, cam) {
            Projection::Splat(s) => {
                slots.push(Some(splats.len()));
                splats.push(s);
            }
            Projection::Culled => slots.push(None),
        }
    }
    (rasterize(&splats, cam, bg), slots)
}

/// Reverse pass of [`render`]: gradients for every Gaussian (zeros for
/// culled ones).
pub fn render_backward(
    gaussians: &[RenderGaussian],
    slots: &[Option<usize>],
    out: &RenderOutput,
    cam: &Camera,
    grad_image: &ImageBuf,
) -> Result<Vec<RenderGaussianGrad>> {
    let splat_grads = rasterize_backward(out, grad_image)?;
    let grads = gaussians
        .par_iter()
        .zip(slots.par_iter())
        .map(|(g, slot)| match slot {
            Some(si) => project_backward(g, cam, &splat_grads[*si]),
            None => RenderGaussianGrad::zero(),
        })
        .collect();
    Ok(grads)
}
