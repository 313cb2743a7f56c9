//! Training configuration: a flat `key = value` text format with every
//! default documented in the README. Unknown keys are rejected so typos
//! fail loudly. The resolved config is snapshotted into checkpoint META.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::img::fmt_g9;
use crate::losses::LossWeights;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,

    // initialization
    pub knn_k: usize,
    pub per_vertex: usize,
    pub hand_jitter: f64,
    pub expansion: f64,
    pub object_n: usize,
    pub init_scale: f64,
    pub init_opacity: f64,
    pub init_weight_raw: f64,
    pub init_radius: f64,
    pub object_init_noise: f64,

    // phase budgets
    pub warmup_iters: usize,
    pub hoi_refine_iters: usize,
    pub bg_opt_iters: usize,
    pub collab_iters: usize,

    // learning rates
    pub lr_pos: f64,
    pub lr_pos_final_factor: f64,
    pub lr_rot: f64,
    pub lr_scale: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub lr_wo: f64,
    pub lr_mlp: f64,

    // loss weights
    pub lambda_photo: f64,
    pub lambda_hand: f64,
    pub lambda_rot: f64,
    pub lambda_inter: f64,
    pub lambda_pen: f64,

    // time-input noise annealing
    pub noise_sigma0: f64,
    pub noise_anneal_end: usize,

    // densification
    pub densify_interval: usize,
    pub densify_grad_threshold: f64,
    pub densify_opacity_floor: f64,
    pub densify_scale_split_fraction: f64,
    pub densify_in_refine: bool,
    pub max_gaussians_per_set: usize,

    // interaction machinery
    pub contact_tau_factor: f64,
    pub mask_alpha_threshold: f64,
    pub renormalize_final_weights: bool,
    /// Keyframe override; negative means detect automatically.
    pub keyframe: i64,

    // field architecture
    pub mlp_hidden: usize,
    pub mlp_layers: usize,
    pub mlp_bg_hidden: usize,

    // ablation switches
    pub disable_interaction_aware: bool,
    pub disable_refinement: bool,

    pub bg_color: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            knn_k: 8,
            per_vertex: 4,
            hand_jitter: 0.01,
            expansion: 1.4,
            object_n: 2000,
            init_scale: 0.02,
            init_opacity: 0.1,
            init_weight_raw: 4.0,
            init_radius: 0.05,
            object_init_noise: 0.0,
            warmup_iters: 1500,
            hoi_refine_iters: 1500,
            bg_opt_iters: 1000,
            collab_iters: 2000,
            lr_pos: 1.6e-4,
            lr_pos_final_factor: 0.01,
            lr_rot: 1e-3,
            lr_scale: 5e-3,
            lr_opacity: 5e-2,
            lr_color: 2.5e-3,
            lr_wo: 5e-3,
            lr_mlp: 1e-3,
            lambda_photo: 1.0,
            lambda_hand: 0.1,
            lambda_rot: 0.05,
            lambda_inter: 0.01,
            lambda_pen: 0.1,
            noise_sigma0: 0.02,
            noise_anneal_end: 3000,
            densify_interval: 200,
            densify_grad_threshold: 2e-4,
            densify_opacity_floor: 0.005,
            densify_scale_split_fraction: 0.01,
            densify_in_refine: true,
            max_gaussians_per_set: 4000,
            contact_tau_factor: 1.5,
            mask_alpha_threshold: 0.1,
            renormalize_final_weights: false,
            keyframe: -1,
            mlp_hidden: 128,
            mlp_layers: 4,
            mlp_bg_hidden: 64,
            disable_interaction_aware: false,
            disable_refinement: false,
            bg_color: [0.0, 0.0, 0.0],
        }
    }
}

impl TrainConfig {
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            photo: self.lambda_photo,
            hand: self.lambda_hand,
            rot: self.lambda_rot,
            inter: self.lambda_inter,
            pen: self.lambda_pen,
        }
    }

    pub fn total_opt_iters(&self) -> usize {
        self.warmup_iters + self.hoi_refine_iters + self.bg_opt_iters + self.collab_iters
    }

    /// Parse a flat `key = value` file over the defaults.
    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |key: &str, value: &str| {
            Error::InvalidConfig(format!("bad value for {key}: {value}"))
        };
        macro_rules! parse {
            ($field:expr) => {
                $field = value.parse().map_err(|_| bad(key, value))?
            };
        }
        match key {
            "seed" => parse!(self.seed),
            "knn_k" => parse!(self.knn_k),
            "per_vertex" => parse!(self.per_vertex),
            "hand_jitter" => parse!(self.hand_jitter),
            "expansion" => parse!(self.expansion),
            "object_n" => parse!(self.object_n),
            "init_scale" => parse!(self.init_scale),
            "init_opacity" => parse!(self.init_opacity),
            "init_weight_raw" => parse!(self.init_weight_raw),
            "init_radius" => parse!(self.init_radius),
            "object_init_noise" => parse!(self.object_init_noise),
            "warmup_iters" => parse!(self.warmup_iters),
            "hoi_refine_iters" => parse!(self.hoi_refine_iters),
            "bg_opt_iters" => parse!(self.bg_opt_iters),
            "collab_iters" => parse!(self.collab_iters),
            "lr_pos" => parse!(self.lr_pos),
            "lr_pos_final_factor" => parse!(self.lr_pos_final_factor),
            "lr_rot" => parse!(self.lr_rot),
            "lr_scale" => parse!(self.lr_scale),
            "lr_opacity" => parse!(self.lr_opacity),
            "lr_color" => parse!(self.lr_color),
            "lr_wo" => parse!(self.lr_wo),
            "lr_mlp" => parse!(self.lr_mlp),
            "lambda_photo" => parse!(self.lambda_photo),
            "lambda_hand" => parse!(self.lambda_hand),
            "lambda_rot" => parse!(self.lambda_rot),
            "lambda_inter" => parse!(self.lambda_inter),
            "lambda_pen" => parse!(self.lambda_pen),
            "noise_sigma0" => parse!(self.noise_sigma0),
            "noise_anneal_end" => parse!(self.noise_anneal_end),
            "densify_interval" => parse!(self.densify_interval),
            "densify_grad_threshold" => parse!(self.densify_grad_threshold),
            "densify_opacity_floor" => parse!(self.densify_opacity_floor),
            "densify_scale_split_fraction" => parse!(self.densify_scale_split_fraction),
            "densify_in_refine" => parse!(self.densify_in_refine),
            "max_gaussians_per_set" => parse!(self.max_gaussians_per_set),
            "contact_tau_factor" => parse!(self.contact_tau_factor),
            "mask_alpha_threshold" => parse!(self.mask_alpha_threshold),
            "renormalize_final_weights" => parse!(self.renormalize_final_weights),
            "keyframe" => parse!(self.keyframe),
            "mlp_hidden" => parse!(self.mlp_hidden),
            "mlp_layers" => parse!(self.mlp_layers),
            "mlp_bg_hidden" => parse!(self.mlp_bg_hidden),
            "disable_interaction_aware" => parse!(self.disable_interaction_aware),
            "disable_refinement" => parse!(self.disable_refinement),
            "bg_color" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|s| s.trim().parse().map_err(|_| bad(key, value)))
                    .collect::<Result<_>>()?;
                if parts.len() != 3 {
                    return Err(bad(key, value));
                }
                self.bg_color = [parts[0], parts[1], parts[2]];
            }
            other => {
                return Err(Error::InvalidConfig(format!("unknown key: {other}")));
            }
        }
        Ok(())
    }

    /// Serialize every key; the exact inverse of [`TrainConfig::from_text`].
    pub fn to_entries(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("seed", self.seed.to_string());
        put("knn_k", self.knn_k.to_string());
        put("per_vertex", self.per_vertex.to_string());
        put("hand_jitter", fmt_g9(self.hand_jitter));
        put("expansion", fmt_g9(self.expansion));
        put("object_n", self.object_n.to_string());
        put("init_scale", fmt_g9(self.init_scale));
        put("init_opacity", fmt_g9(self.init_opacity));
        put("init_weight_raw", fmt_g9(self.init_weight_raw));
        put("init_radius", fmt_g9(self.init_radius));
        put("object_init_noise", fmt_g9(self.object_init_noise));
        put("warmup_iters", self.warmup_iters.to_string());
        put("hoi_refine_iters", self.hoi_refine_iters.to_string());
        put("bg_opt_iters", self.bg_opt_iters.to_string());
        put("collab_iters", self.collab_iters.to_string());
        put("lr_pos", fmt_g9(self.lr_pos));
        put("lr_pos_final_factor", fmt_g9(self.lr_pos_final_factor));
        put("lr_rot", fmt_g9(self.lr_rot));
        put("lr_scale", fmt_g9(self.lr_scale));
        put("lr_opacity", fmt_g9(self.lr_opacity));
        put("lr_color", fmt_g9(self.lr_color));
        put("lr_wo", fmt_g9(self.lr_wo));
        put("lr_mlp", fmt_g9(self.lr_mlp));
        put("lambda_photo", fmt_g9(self.lambda_photo));
        put("lambda_hand", fmt_g9(self.lambda_hand));
        put("lambda_rot", fmt_g9(self.lambda_rot));
        put("lambda_inter", fmt_g9(self.lambda_inter));
        put("lambda_pen", fmt_g9(self.lambda_pen));
        put("noise_sigma0", fmt_g9(self.noise_sigma0));
        put("noise_anneal_end", self.noise_anneal_end.to_string());
        put("densify_interval", self.densify_interval.to_string());
        put("densify_grad_threshold", fmt_g9(self.densify_grad_threshold));
        put("densify_opacity_floor", fmt_g9(self.densify_opacity_floor));
        put(
            "densify_scale_split_fraction",
            fmt_g9(self.densify_scale_split_fraction),
        );
        put("densify_in_refine", self.densify_in_refine.to_string());
        put(
            "max_gaussians_per_set",
            self.max_gaussians_per_set.to_string(),
        );
        put("contact_tau_factor", fmt_g9(self.contact_tau_factor));
        put("mask_alpha_threshold", fmt_g9(self.mask_alpha_threshold));
        put(
            "renormalize_final_weights",
            self.renormalize_final_weights.to_string(),
        );
        put("keyframe", self.keyframe.to_string());
        put("mlp_hidden", self.mlp_hidden.to_string());
        put("mlp_layers", self.mlp_layers.to_string());
        put("mlp_bg_hidden", self.mlp_bg_hidden.to_string());
        put(
            "disable_interaction_aware",
            self.disable_interaction_aware.to_string(),
        );
        put("disable_refinement", self.disable_refinement.to_string());
        put(
            "bg_color",
            format!(
                "{},{},{}",
                fmt_g9(self.bg_color[0]),
                fmt_g9(self.bg_color[1]),
                fmt_g9(self.bg_color[2])
            ),
        );
        m
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}
