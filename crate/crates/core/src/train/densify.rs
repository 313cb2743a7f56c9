//! Gradient-based density adjustment: clone small high-gradient Gaussians,
//! split large ones, prune transparent ones. Runs on view-space positional
//! gradient statistics accumulated since the previous adjustment.

use rand_chacha::ChaCha8Rng;

use crate::gaussmodel::{gauss_sample, GaussianSet};
use crate::geom::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyConfig {
    /// Mean view-space positional gradient magnitude that marks a Gaussian
    /// as under-reconstructed.
    pub grad_threshold: f64,
    /// Gaussians whose activated opacity falls below this are removed.
    pub opacity_floor: f64,
    /// World-unit scale above which a candidate is split instead of cloned.
    pub split_scale: f64,
    /// Iterations between adjustments.
    pub interval: usize,
    /// Hard cap on the set size.
    pub max_gaussians: usize,
}

/// Accumulated per-Gaussian gradient statistics between adjustments.
#[derive(Debug, Clone, Default)]
pub struct DensifyStats {
    pub grad2d_norm: Vec<f64>,
    pub grad3d: Vec<Vec3>,
    pub count: Vec<u32>,
}

impl DensifyStats {
    pub fn resize(&mut self, n: usize) {
        self.grad2d_norm = vec![0.0; n];
        self.grad3d = vec![Vec3::zeros(); n];
        self.count = vec![0; n];
    }

    pub fn accumulate(&mut self, i: usize, grad2d_norm: f64, grad3d: &Vec3) {
        if i < self.grad2d_norm.len() && grad2d_norm > 0.0 {
            self.grad2d_norm[i] += grad2d_norm;
            self.grad3d[i] += grad3d;
            self.count[i] += 1;
        }
    }
}

/// Outcome of one adjustment: for every Gaussian now in the set, the index
/// of the Gaussian it derives from (itself, or the parent it was cloned or
/// split from). Used to rebuild optimizer moments.
#[derive(Debug, Clone)]
pub struct DensifyOutcome {
    pub parent_of: Vec<usize>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Apply clone / split / prune to the set in place. Deterministic given the
/// RNG state. The KNN cache is invalidated; callers rebuild it.
pub fn densify_and_prune(
    set: &mut GaussianSet,
    stats: &DensifyStats,
    cfg: &DensifyConfig,
    rng: &mut ChaCha8Rng,
) -> DensifyOutcome {
    let n = set.len();
    let avg: Vec<f64> = (0..n)
        .map(|i| {
            if stats.count.get(i).copied().unwrap_or(0) == 0 {
                0.0
            } else {
                stats.grad2d_norm[i] / stats.count[i] as f64
            }
        })
        .collect();

    // candidates in descending gradient order so the cap keeps the neediest
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&i| avg[i] > cfg.grad_threshold && set.gaussians[i].opacity() >= cfg.opacity_floor)
        .collect();
    candidates.sort_by(|&a, &b| avg[b].partial_cmp(&avg[a]).unwrap().then(a.cmp(&b)));

    let mut keep: Vec<bool> = (0..n)
        .map(|i| set.gaussians[i].opacity() >= cfg.opacity_floor)
        .collect();
    let kept: usize = keep.iter().filter(|&&k| k).count();
    let mut budget = cfg.max_gaussians.saturating_sub(kept);

    let mut new_gaussians = Vec::new();
    let mut new_parents = Vec::new();
    let mut cloned = 0usize;
    let mut split = 0usize;
    for &i in &candidates {
        if budget == 0 {
            break;
        }
        if !keep[i] {
            continue;
        }
        let g = set.gaussians[i].clone();
        if g.max_scale() > cfg.split_scale {
            // split: two children sampled inside the parent, scales / 1.6
            keep[i] = false;
            let rot = g.rot_mat();
            for _ in 0..2 {
                let local = Vec3::new(
                    gauss_sample(rng) * g.scale.x,
                    gauss_sample(rng) * g.scale.y,
                    gauss_sample(rng) * g.scale.z,
                );
                let mut child = g.clone();
                child.pos = g.pos + rot * local;
                child.scale = g.scale / 1.6;
                new_gaussians.push(child);
                new_parents.push(i);
            }
            split += 1;
            // net +1 against a freed slot
            budget = budget.saturating_sub(1);
        } else {
            // clone: copy nudged along the accumulated descent direction
            let dir = stats.grad3d[i];
            let mut child = g.clone();
            if dir.norm() > 1e-12 {
                child.pos -= dir.normalize() * 0.1 * g.scale.mean();
            }
            new_gaussians.push(child);
            new_parents.push(i);
            cloned += 1;
            budget -= 1;
        }
    }

    let pruned = keep.iter().filter(|&&k| !k).count();
    let mut parent_of = Vec::with_capacity(n + new_gaussians.len());
    let mut gaussians = Vec::with_capacity(n + new_gaussians.len());
    for (i, g) in set.gaussians.drain(..).enumerate() {
        if keep[i] {
            parent_of.push(i);
            gaussians.push(g);
        }
    }
    for (g, p) in new_gaussians.into_iter().zip(new_parents.into_iter()) {
        parent_of.push(p);
        gaussians.push(g);
    }
    set.gaussians = gaussians;
    set.knn = None;
    DensifyOutcome {
        parent_of,
        cloned,
        split,
        pruned,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussmodel::{InitParams, SetTag};
    use rand::SeedableRng;

    fn set_of(n: usize) -> GaussianSet {
        let params = InitParams::default();
        GaussianSet::new(
            SetTag::Object,
            (0..n)
                .map(|i| params.gaussian_at(Vec3::new(i as f64 * 0.1, 0.0, 0.0)))
                .collect(),
        )
    }

    fn cfg() -> DensifyConfig {
        DensifyConfig {
            grad_threshold: 2e-4,
            opacity_floor: 0.005,
            split_scale: 0.05,
            interval: 100,
            max_gaussians: 100,
        }
    }

    #[test]
    fn quiet_set_is_unchanged() {
        let mut set = set_of(5);
        let mut stats = DensifyStats::default();
        stats.resize(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let before = set.gaussians.clone();
        let out = densify_and_prune(&mut set, &stats, &cfg(), &mut rng);
        assert_eq!(set.gaussians, before);
        assert_eq!(out.parent_of, vec![0, 1, 2, 3, 4]);
        assert_eq!((out.cloned, out.split, out.pruned), (0, 0, 0));
    }

    #[test]
    fn transparent_gaussian_is_pruned() {
        let mut set = set_of(4);
        set.gaussians[2].opacity_logit = crate::gaussmodel::sigmoid_inv(0.001);
        let mut stats = DensifyStats::default();
        stats.resize(4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = densify_and_prune(&mut set, &stats, &cfg(), &mut rng);
        assert_eq!(set.len(), 3);
        assert_eq!(out.pruned, 1);
        assert_eq!(out.parent_of, vec![0, 1, 3]);
    }

    #[test]
    fn large_high_gradient_gaussian_splits() {
        let mut set = set_of(3);
        set.gaussians[1].scale = Vec3::new(0.2, 0.05, 0.05); // above split scale
        let mut stats = DensifyStats::default();
        stats.resize(3);
        stats.accumulate(1, 0.01, &Vec3::new(1.0, 0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = densify_and_prune(&mut set, &stats, &cfg(), &mut rng);
        assert_eq!(out.split, 1);
        assert_eq!(set.len(), 4, "split is net +1");
        // children carry parent scale / 1.6
        let children: Vec<_> = out
            .parent_of
            .iter()
            .enumerate()
            .filter(|(slot, &p)| p == 1 && *slot >= 2)
            .collect();
        assert_eq!(children.len(), 2);
        for (slot, _) in children {
            assert!((set.gaussians[slot].scale.x - 0.2 / 1.6).abs() < 1e-12);
        }
    }

    #[test]
    fn small_high_gradient_gaussian_clones_with_nudge() {
        let mut set = set_of(3);
        let mut stats = DensifyStats::default();
        stats.resize(3);
        stats.accumulate(0, 0.01, &Vec3::new(0.0, 1.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = densify_and_prune(&mut set, &stats, &cfg(), &mut rng);
        assert_eq!(out.cloned, 1);
        assert_eq!(set.len(), 4);
        assert_eq!(out.parent_of[3], 0);
        let parent = &set.gaussians[0];
        let child = &set.gaussians[3];
        assert!(child.pos.y < parent.pos.y, "nudged along descent");
    }

    #[test]
    fn cap_limits_growth() {
        let mut set = set_of(10);
        let mut stats = DensifyStats::default();
        stats.resize(10);
        for i in 0..10 {
            stats.accumulate(i, 0.01, &Vec3::new(1.0, 0.0, 0.0));
        }
        let mut c = cfg();
        c.max_gaussians = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        densify_and_prune(&mut set, &stats, &c, &mut rng);
        assert!(set.len() <= 12);
    }
}
