//! The three deformation fields: tiny ReLU MLPs mapping encoded canonical
//! position (plus a hand key position for the object field) and encoded time
//! to position / rotation / scale offsets. Forward and reverse passes are
//! hand-rolled; the batched paths back onto dgemm so a whole Gaussian set is
//! one matrix product per layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaussmodel::gauss_sample;
use crate::geom::{encoding_len, positional_encoding, Rot6d, Vec3};

/// Positional-encoding frequency counts for spatial and time inputs.
pub const L_X: usize = 6;
pub const L_T: usize = 4;
/// Output layout: dx (3) | dr6 (6) | ds (3).
pub const FIELD_OUT: usize = 12;

/// Field output for one Gaussian: position offset, 6d rotation offset
/// (added to the identity encoding before decoding), and log-scale offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOutput {
    pub dx: Vec3,
    pub dr6: [f64; 6],
    pub ds: Vec3,
}

impl FieldOutput {
    pub fn zero() -> Self {
        FieldOutput {
            dx: Vec3::zeros(),
            dr6: [0.0; 6],
            ds: Vec3::zeros(),
        }
    }

    pub fn from_row(row: &[f64]) -> Self {
        debug_assert_eq!(row.len(), FIELD_OUT);
        FieldOutput {
            dx: Vec3::new(row[0], row[1], row[2]),
            dr6: [row[3], row[4], row[5], row[6], row[7], row[8]],
            ds: Vec3::new(row[9], row[10], row[11]),
        }
    }

    pub fn to_row(&self) -> [f64; FIELD_OUT] {
        [
            self.dx.x, self.dx.y, self.dx.z, self.dr6[0], self.dr6[1], self.dr6[2], self.dr6[3],
            self.dr6[4], self.dr6[5], self.ds.x, self.ds.y, self.ds.z,
        ]
    }

    /// The decoded rotation offset: identity 6d encoding plus `dr6`.
    pub fn rot6(&self) -> Rot6d {
        let id = Rot6d::identity();
        let mut v = [0.0; 6];
        for i in 0..6 {
            v[i] = id.v[i] + self.dr6[i];
        }
        Rot6d::new(v)
    }

    pub fn norm_squared(&self) -> f64 {
        self.to_row().iter().map(|v| v * v).sum()
    }
}

/// Linear annealing schedule for the time-input smoothing noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub sigma0: f64,
    pub anneal_end: usize,
}

impl NoiseSchedule {
    pub fn new(sigma0: f64, anneal_end: usize) -> Self {
        assert!(sigma0 >= 0.0 && anneal_end >= 1);
        NoiseSchedule { sigma0, anneal_end }
    }
}

/// Noise std at an iteration: `sigma0 * max(0, 1 - iter/anneal_end)`.
pub fn noise_std_at(sched: &NoiseSchedule, iter: usize) -> f64 {
    sched.sigma0 * (1.0 - iter as f64 / sched.anneal_end as f64).max(0.0)
}

/// One dense layer, weights row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_width: usize,
    pub out_width: usize,
}

/// A fully-connected ReLU network: hidden layers ReLU, output linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Kaiming-uniform hidden weights, zero final layer so a fresh field is
    /// the identity deformation. Deterministic under `seed`.
    pub fn new(widths: &[usize], seed: u64) -> Self {
        assert!(widths.len() >= 2, "need input and output widths");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for l in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let last = l == widths.len() - 2;
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = if last {
                vec![0.0; fan_in * fan_out]
            } else {
                (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect()
            };
            layers.push(Dense {
                w,
                b: vec![0.0; fan_out],
                in_width: fan_in,
                out_width: fan_out,
            });
        }
        Mlp {
            widths: widths.to_vec(),
            layers,
        }
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.len() + l.b.len())
            .sum()
    }

    /// All parameters as one flat vector: per layer, weights row-major then
    /// biases. The layout is shared by gradients, Adam state, and the
    /// checkpoint container.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                params: self.param_count(),
                grads: params.len(),
            });
        }
        let mut off = 0;
        for l in self.layers.iter_mut() {
            let wlen = l.w.len();
            l.w.copy_from_slice(&params[off..off + wlen]);
            off += wlen;
            let blen = l.b.len();
            l.b.copy_from_slice(&params[off..off + blen]);
            off += blen;
        }
        Ok(())
    }

    /// Batched forward: `inputs` is `batch` rows of `input_width`. Returns
    /// the output rows and the activation tape for the reverse pass.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<(Vec<f64>, MlpTape)> {
        if inputs.len() != batch * self.input_width() {
            return Err(Error::DimensionMismatch {
                expected: batch * self.input_width(),
                got: inputs.len(),
            });
        }
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut x = inputs.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; batch * layer.out_width];
            // z = x * W^T, W row-major [out][in]
            gemm_a_bt(batch, layer.in_width, layer.out_width, &x, &layer.w, &mut z);
            for row in z.chunks_exact_mut(layer.out_width) {
                for (v, b) in row.iter_mut().zip(layer.b.iter()) {
                    *v += b;
                }
            }
            let hidden = l + 1 < self.layers.len();
            if hidden {
                for v in z.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            activations.push(z.clone());
            x = z;
        }
        let out = activations.last().unwrap().clone();
        Ok((
            out,
            MlpTape {
                batch,
                widths: self.widths.clone(),
                inputs: inputs.to_vec(),
                activations,
            },
        ))
    }

    /// Batched reverse pass. `grad_out` is `batch x output_width`.
    /// Returns flat parameter gradients (layout of [`Mlp::params_flat`]) and
    /// gradients with respect to the inputs.
    pub fn backward_batch(&self, tape: &MlpTape, grad_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if tape.widths != self.widths {
            return Err(Error::TapeMismatch);
        }
        let batch = tape.batch;
        if grad_out.len() != batch * self.output_width() {
            return Err(Error::DimensionMismatch {
                expected: batch * self.output_width(),
                got: grad_out.len(),
            });
        }
        let mut param_grads = vec![0.0; self.param_count()];
        // per-layer parameter offsets into the flat layout
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.w.len() + l.b.len();
        }

        let mut g = grad_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let below: &[f64] = if l == 0 {
                &tape.inputs
            } else {
                &tape.activations[l - 1]
            };
            // dW += g^T * below
            let woff = offsets[l];
            gemm_at_b(
                layer.out_width,
                batch,
                layer.in_width,
                &g,
                below,
                &mut param_grads[woff..woff + layer.w.len()],
            );
            // db += column sums of g
            let boff = woff + layer.w.len();
            for row in g.chunks_exact(layer.out_width) {
                for (acc, v) in param_grads[boff..boff + layer.out_width]
                    .iter_mut()
                    .zip(row.iter())
                {
                    *acc += v;
                }
            }
            // g_below = g * W, then mask by the ReLU that produced `below`
            let mut g_below = vec![0.0; batch * layer.in_width];
            gemm_a_b(batch, layer.out_width, layer.in_width, &g, &layer.w, &mut g_below);
            if l > 0 {
                for (gv, av) in g_below.iter_mut().zip(tape.activations[l - 1].iter()) {
                    if *av <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            g = g_below;
        }
        Ok((param_grads, g))
    }
}

/// Activation tape for one batched forward pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    pub batch: usize,
    widths: Vec<usize>,
    inputs: Vec<f64>,
    /// Post-activation outputs per layer (ReLU already applied on hidden).
    activations: Vec<Vec<f64>>,
}

/// C(m x n) = A(m x k) * B^T where B is row-major n x k.
fn gemm_a_bt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C(m x n) = A(m x k) * B(k x n), both row-major.
fn gemm_a_b(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C(m x n) += A^T * B where A is row-major k x m and B is row-major k x n.
fn gemm_at_b(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Single-sample forward pass (batch of one) with tape.
pub fn mlp_forward(mlp: &Mlp, x: &[f64]) -> Result<(Vec<f64>, MlpTape)> {
    mlp.forward_batch(x, 1)
}

/// Single-sample reverse pass: exact gradients for all parameters and the
/// input, given the tape from the matching forward.
pub fn mlp_backward(mlp: &Mlp, tape: &MlpTape, grad_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    mlp.backward_batch(tape, grad_out)
}

/// Input layout of the hand field: encoded canonical position, then encoded
/// (optionally noise-perturbed) time.
pub fn hand_input(pos: &Vec3, t: f64) -> Vec<f64> {
    let mut v = positional_encoding(&[pos.x, pos.y, pos.z], L_X);
    v.extend(positional_encoding(&[t], L_T));
    v
}

pub fn hand_input_width() -> usize {
    encoding_len(3, L_X) + encoding_len(1, L_T)
}

/// Input layout of the object field: encoded concatenation of the object and
/// paired hand key-frame positions, then encoded time.
pub fn object_input(obj_key: &Vec3, hand_key: &Vec3, t: f64) -> Vec<f64> {
    let mut v = positional_encoding(
        &[
            obj_key.x, obj_key.y, obj_key.z, hand_key.x, hand_key.y, hand_key.z,
        ],
        L_X,
    );
    v.extend(positional_encoding(&[t], L_T));
    v
}

pub fn object_input_width() -> usize {
    encoding_len(6, L_X) + encoding_len(1, L_T)
}

/// Background field shares the hand field's input layout (no noise).
pub fn background_input(pos: &Vec3, t: f64) -> Vec<f64> {
    hand_input(pos, t)
}

/// Hand-field evaluation for a single Gaussian. During training the time
/// input is perturbed by `eps ~ N(0, noise_std^2)`; `noise_std = 0` skips
/// the draw entirely, so evaluation mode is deterministic.
pub fn hand_field_eval<R: Rng>(
    mlp: &Mlp,
    pos: &Vec3,
    t: f64,
    noise_std: f64,
    rng: &mut R,
) -> Result<FieldOutput> {
    let eps = if noise_std > 0.0 {
        gauss_sample(rng) * noise_std
    } else {
        0.0
    };
    let (out, _) = mlp.forward_batch(&hand_input(pos, t + eps), 1)?;
    Ok(FieldOutput::from_row(&out))
}

/// Object-field evaluation for a single Gaussian, conditioned on the paired
/// hand key-frame position.
pub fn object_field_eval(
    mlp: &Mlp,
    obj_key: &Vec3,
    hand_key: &Vec3,
    t: f64,
) -> Result<FieldOutput> {
    let (out, _) = mlp.forward_batch(&object_input(obj_key, hand_key, t), 1)?;
    Ok(FieldOutput::from_row(&out))
}

/// Background-field evaluation: position and time, never noisy.
pub fn background_field_eval(mlp: &Mlp, pos: &Vec3, t: f64) -> Result<FieldOutput> {
    let (out, _) = mlp.forward_batch(&background_input(pos, t), 1)?;
    Ok(FieldOutput::from_row(&out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fill_random(mlp: &mut Mlp, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = mlp.params_flat();
        for v in p.iter_mut() {
            *v = rng.gen_range(-0.7..0.7);
        }
        mlp.set_params_flat(&p).unwrap();
    }

    #[test]
    fn zero_net_outputs_zero() {
        let mlp = Mlp::new(&[4, 8, 3], 1);
        let mut zeroed = mlp.clone();
        let zeros = vec![0.0; zeroed.param_count()];
        zeroed.set_params_flat(&zeros).unwrap();
        let (out, _) = mlp_forward(&zeroed, &[0.3, -0.5, 0.2, 0.9]).unwrap();
        assert_eq!(out, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn fresh_net_is_identity_deformation() {
        // zero-initialized final layer means output is zero for any input
        let mlp = Mlp::new(&[6, 16, 16, FIELD_OUT], 3);
        let (out, _) = mlp_forward(&mlp, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let mut mlp = Mlp::new(&[3, 3], 5);
        let mut p = vec![0.0; mlp.param_count()];
        // weights row-major 3x3 identity, zero bias; single layer is linear
        p[0] = 1.0;
        p[4] = 1.0;
        p[8] = 1.0;
        mlp.set_params_flat(&p).unwrap();
        let x = [0.7, -0.3, 1.5];
        let (out, _) = mlp_forward(&mlp, &x).unwrap();
        assert_eq!(out, x.to_vec());
    }

    #[test]
    fn forward_matches_scalar_loop_oracle() {
        let mut mlp = Mlp::new(&[5, 7, 4], 11);
        fill_random(&mut mlp, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (out, _) = mlp_forward(&mlp, &x).unwrap();

            // independent scalar re-evaluation
            let mut a = x.clone();
            for (l, layer) in mlp.layers.iter().enumerate() {
                let mut z = vec![0.0; layer.out_width];
                for o in 0..layer.out_width {
                    let mut acc = layer.b[o];
                    for i in 0..layer.in_width {
                        acc += layer.w[o * layer.in_width + i] * a[i];
                    }
                    z[o] = acc;
                }
                if l + 1 < mlp.layers.len() {
                    for v in z.iter_mut() {
                        *v = v.max(0.0);
                    }
                }
                a = z;
            }
            for (u, v) in out.iter().zip(a.iter()) {
                assert_relative_eq!(u, v, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn backward_zero_grad_gives_zero() {
        let mut mlp = Mlp::new(&[4, 6, 2], 21);
        fill_random(&mut mlp, 22);
        let (_, tape) = mlp_forward(&mlp, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let (pg, ig) = mlp_backward(&mlp, &tape, &[0.0, 0.0]).unwrap();
        assert!(pg.iter().all(|&v| v == 0.0));
        assert!(ig.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_linear_net_is_w_transpose() {
        let mut mlp = Mlp::new(&[3, 2], 31);
        fill_random(&mut mlp, 32);
        let (_, tape) = mlp_forward(&mlp, &[0.5, -0.5, 0.25]).unwrap();
        let g = [1.5, -2.0];
        let (_, ig) = mlp_backward(&mlp, &tape, &g).unwrap();
        let w = &mlp.layers[0].w;
        for i in 0..3 {
            let expected = w[i] * g[0] + w[3 + i] * g[1];
            assert_relative_eq!(ig[i], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn backward_rejects_mismatched_tape() {
        let mlp_a = Mlp::new(&[4, 6, 2], 1);
        let mlp_b = Mlp::new(&[4, 5, 2], 1);
        let (_, tape) = mlp_forward(&mlp_a, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!(matches!(
            mlp_b.backward_batch(&tape, &[1.0, 1.0]),
            Err(Error::TapeMismatch)
        ));
    }

    #[test]
    fn batch_forward_equals_per_sample() {
        let mut mlp = Mlp::new(&[6, 10, 12], 41);
        fill_random(&mut mlp, 42);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let batch = 17;
        let inputs: Vec<f64> = (0..batch * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (out, _) = mlp.forward_batch(&inputs, batch).unwrap();
        for s in 0..batch {
            let (single, _) = mlp_forward(&mlp, &inputs[s * 6..(s + 1) * 6]).unwrap();
            for c in 0..12 {
                assert_relative_eq!(out[s * 12 + c], single[c], epsilon = 1e-12);
            }
        }
    }

    /// Central finite-difference check of all parameter gradients at
    /// relative 1e-4 (double precision, step 1e-5), the module invariant.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for trial in 0..5 {
            let mut mlp = Mlp::new(&[5, 12, 9, 8], 60 + trial);
            fill_random(&mut mlp, 70 + trial);
            let batch = 3;
            let inputs: Vec<f64> = (0..batch * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let grad_out: Vec<f64> = (0..batch * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();

            let (_, tape) = mlp.forward_batch(&inputs, batch).unwrap();
            let (pg, ig) = mlp.backward_batch(&tape, &grad_out).unwrap();

            let loss = |m: &Mlp, x: &[f64]| -> f64 {
                let (out, _) = m.forward_batch(x, batch).unwrap();
                out.iter().zip(grad_out.iter()).map(|(o, g)| o * g).sum()
            };

            let params = mlp.params_flat();
            let h = 1e-5;
            // spot-check a deterministic subset of parameters plus all inputs
            let stride = (params.len() / 60).max(1);
            for k in (0..params.len()).step_by(stride) {
                let mut pp = params.clone();
                pp[k] += h;
                let mut mp = mlp.clone();
                mp.set_params_flat(&pp).unwrap();
                let fp = loss(&mp, &inputs);
                pp[k] -= 2.0 * h;
                mp.set_params_flat(&pp).unwrap();
                let fm = loss(&mp, &inputs);
                let fd = (fp - fm) / (2.0 * h);
                let denom = pg[k].abs().max(fd.abs()).max(1e-6);
                assert!(
                    (pg[k] - fd).abs() / denom < 1e-4,
                    "param {k}: analytic {} vs fd {fd}",
                    pg[k]
                );
            }
            for k in 0..inputs.len() {
                let mut xp = inputs.clone();
                xp[k] += h;
                let fp = loss(&mlp, &xp);
                xp[k] -= 2.0 * h;
                let fm = loss(&mlp, &xp);
                let fd = (fp - fm) / (2.0 * h);
                let denom = ig[k].abs().max(fd.abs()).max(1e-6);
                assert!(
                    (ig[k] - fd).abs() / denom < 1e-4,
                    "input {k}: analytic {} vs fd {fd}",
                    ig[k]
                );
            }
        }
    }

    #[test]
    fn hand_field_zero_net_and_determinism() {
        let mlp = Mlp::new(&[hand_input_width(), 16, FIELD_OUT], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pos = Vec3::new(0.2, -0.4, 0.8);
        let out = hand_field_eval(&mlp, &pos, 0.5, 0.0, &mut rng).unwrap();
        assert_eq!(out, FieldOutput::zero());

        // no noise draw at std 0: identical outputs, rng untouched
        let mut rng_a = ChaCha8Rng::seed_from_u64(1);
        let mut rng_b = ChaCha8Rng::seed_from_u64(2);
        let a = hand_field_eval(&mlp, &pos, 0.3, 0.0, &mut rng_a).unwrap();
        let b = hand_field_eval(&mlp, &pos, 0.3, 0.0, &mut rng_b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn object_field_sensitive_to_hand_key() {
        let mut mlp = Mlp::new(&[object_input_width(), 24, FIELD_OUT], 7);
        fill_random(&mut mlp, 8);
        let obj = Vec3::new(0.1, 0.1, 0.1);
        let a = object_field_eval(&mlp, &obj, &Vec3::new(0.3, 0.0, 0.0), 0.4).unwrap();
        let b = object_field_eval(&mlp, &obj, &Vec3::new(-0.2, 0.5, 0.1), 0.4).unwrap();
        let delta = (a.dx - b.dx).norm()
            + (a.ds - b.ds).norm()
            + a.dr6
                .iter()
                .zip(b.dr6.iter())
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>();
        assert!(delta > 1e-6, "hand conditioning had no effect");
    }

    #[test]
    fn background_field_is_pure() {
        let mut mlp = Mlp::new(&[hand_input_width(), 16, FIELD_OUT], 9);
        fill_random(&mut mlp, 10);
        let pos = Vec3::new(0.3, 0.3, -0.5);
        let a = background_field_eval(&mlp, &pos, 0.25).unwrap();
        let b = background_field_eval(&mlp, &pos, 0.25).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_schedule_values() {
        let s = NoiseSchedule::new(0.4, 100);
        assert_eq!(noise_std_at(&s, 0), 0.4);
        assert_eq!(noise_std_at(&s, 50), 0.2);
        assert_eq!(noise_std_at(&s, 100), 0.0);
        assert_eq!(noise_std_at(&s, 5000), 0.0);
    }
}
