//! Synthetic hand-object sequence generator and ground-truth oracle.
//!
//! Builds an articulated "hand" (clustered vertex skeleton plus visual
//! Gaussians), a rigid multi-blob object that stays still until the contact
//! keyframe and then rides the hand, and a static textured background
//! plane. Target frames are rendered with the same rasterizer the trainer
//! differentiates, so a trained scene can in principle reach the target
//! exactly. Also owns the on-disk sequence format.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaussmodel::{gauss_sample, SkeletonFrame};
use crate::geom::{rotation_average, so3_exp, AxisAngle, Mat3, Rot3, Vec3};
use crate::img::{fmt_g9, ImageBuf};
use crate::splat::{render, Camera, RenderGaussian};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionMode {
    Translation,
    TranslationRotation,
}

impl MotionMode {
    pub fn name(&self) -> &'static str {
        match self {
            MotionMode::Translation => "translation",
            MotionMode::TranslationRotation => "translation_rotation",
        }
    }

    pub fn parse(s: &str) -> Result<MotionMode> {
        match s {
            "translation" => Ok(MotionMode::Translation),
            "translation_rotation" => Ok(MotionMode::TranslationRotation),
            other => Err(Error::InvalidSpec(format!("unknown motion mode {other}"))),
        }
    }
}

/// Full description of a synthetic sequence. The reference scene presets
/// fill every field; `spec.txt` serializes the resolved values.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub name: String,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub cam_distance: f64,
    pub cam_elevation: f64,
    /// Total azimuth sweep over the sequence (radians, centered on zero).
    pub cam_azimuth_range: f64,
    pub clusters: usize,
    pub verts_per_cluster: usize,
    /// Rough radius of the hand vertex cloud.
    pub hand_radius: f64,
    pub hand_gaussians_per_vert: usize,
    pub object_blobs: usize,
    pub object_radius: f64,
    pub keyframe: usize,
    pub motion: MotionMode,
    pub rot_axis: Vec3,
    /// Total object/hand rotation angle reached at the last frame (radians).
    pub rot_angle: f64,
    pub bg_grid: usize,
    pub bg_span: f64,
    pub bg_depth: f64,
    pub seed: u64,
    /// Hand-center trajectory keypoints: (frame index, world position).
    /// Piecewise linear in between; must start at frame 0 and end at the
    /// last frame.
    pub traj: Vec<(usize, Vec3)>,
    /// World position of the (static, pre-contact) object center.
    pub object_center: Vec3,
}

impl SceneSpec {
    /// The reference grasp scene: 40 frames at 96x96, a 5-cluster hand with
    /// 6 vertices per cluster, a 60-blob object, contact at frame 10.
    pub fn ref_grasp(motion: MotionMode, seed: u64) -> SceneSpec {
        let object_center = Vec3::new(0.02, -0.04, 0.03);
        let grasp = object_center + Vec3::new(0.0, 0.10, -0.03);
        let start = object_center + Vec3::new(-0.20, 0.16, -0.10);
        let carry1 = grasp + Vec3::new(0.16, 0.05, 0.05);
        let carry2 = carry1 + Vec3::new(0.10, -0.09, 0.07);
        SceneSpec {
            name: "ref-grasp".into(),
            frames: 40,
            width: 96,
            height: 96,
            fx: 120.0,
            cam_distance: 2.2,
            cam_elevation: -0.25,
            cam_azimuth_range: 0.28,
            clusters: 5,
            verts_per_cluster: 6,
            hand_radius: 0.22,
            hand_gaussians_per_vert: 2,
            object_blobs: 60,
            object_radius: 0.16,
            keyframe: 10,
            motion,
            rot_axis: Vec3::new(0.25, 0.2, 1.0).normalize(),
            rot_angle: match motion {
                MotionMode::Translation => 0.0,
                MotionMode::TranslationRotation => 1.1,
            },
            bg_grid: 20,
            bg_span: 1.35,
            bg_depth: 0.55,
            seed,
            traj: vec![(0, start), (10, grasp), (24, carry1), (39, carry2)],
            object_center,
        }
    }

    /// A tiny fast scene for integration tests.
    pub fn mini(motion: MotionMode, seed: u64) -> SceneSpec {
        let mut spec = SceneSpec::ref_grasp(motion, seed);
        spec.name = "mini".into();
        spec.frames = 8;
        spec.width = 48;
        spec.height = 48;
        spec.fx = 60.0;
        spec.keyframe = 2;
        spec.object_blobs = 20;
        spec.verts_per_cluster = 3;
        spec.hand_gaussians_per_vert = 1;
        spec.bg_grid = 10;
        let start = spec.object_center + Vec3::new(-0.20, 0.16, -0.10);
        let grasp = spec.object_center + Vec3::new(0.0, 0.10, -0.03);
        let end = grasp + Vec3::new(0.18, 0.0, 0.08);
        spec.traj = vec![(0, start), (2, grasp), (7, end)];
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 4 {
            return Err(Error::InvalidSpec("need at least 4 frames".into()));
        }
        if self.keyframe + 1 >= self.frames {
            return Err(Error::InvalidSpec("keyframe outside frame range".into()));
        }
        if self.traj.is_empty() || self.traj[0].0 != 0 {
            return Err(Error::InvalidSpec(
                "trajectory must start at frame 0".into(),
            ));
        }
        if self.traj.last().unwrap().0 != self.frames - 1 {
            return Err(Error::InvalidSpec(
                "trajectory must end at the last frame".into(),
            ));
        }
        for w in self.traj.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidSpec(
                    "trajectory keypoints must be strictly increasing".into(),
                ));
            }
        }
        if self.clusters == 0 || self.verts_per_cluster == 0 {
            return Err(Error::InvalidSpec("skeleton must have vertices".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        put("name", self.name.clone());
        put("frames", self.frames.to_string());
        put("width", self.width.to_string());
        put("height", self.height.to_string());
        put("fx", fmt_g9(self.fx));
        put("cam_distance", fmt_g9(self.cam_distance));
        put("cam_elevation", fmt_g9(self.cam_elevation));
        put("cam_azimuth_range", fmt_g9(self.cam_azimuth_range));
        put("clusters", self.clusters.to_string());
        put("verts_per_cluster", self.verts_per_cluster.to_string());
        put("hand_radius", fmt_g9(self.hand_radius));
        put(
            "hand_gaussians_per_vert",
            self.hand_gaussians_per_vert.to_string(),
        );
        put("object_blobs", self.object_blobs.to_string());
        put("object_radius", fmt_g9(self.object_radius));
        put("keyframe", self.keyframe.to_string());
        put("motion", self.motion.name().to_string());
        put(
            "rot_axis",
            format!(
                "{},{},{}",
                fmt_g9(self.rot_axis.x),
                fmt_g9(self.rot_axis.y),
                fmt_g9(self.rot_axis.z)
            ),
        );
        put("rot_angle", fmt_g9(self.rot_angle));
        put("bg_grid", self.bg_grid.to_string());
        put("bg_span", fmt_g9(self.bg_span));
        put("bg_depth", fmt_g9(self.bg_depth));
        put("seed", self.seed.to_string());
        put(
            "object_center",
            format!(
                "{},{},{}",
                fmt_g9(self.object_center.x),
                fmt_g9(self.object_center.y),
                fmt_g9(self.object_center.z)
            ),
        );
        for (i, (f, p)) in self.traj.iter().enumerate() {
            put(
                &format!("traj_{i}"),
                format!("{f}:{},{},{}", fmt_g9(p.x), fmt_g9(p.y), fmt_g9(p.z)),
            );
        }
        s
    }

    /// Parse a spec file: either `preset = ref-grasp|mini` plus overrides,
    /// or a fully written-out spec as emitted by [`SceneSpec::to_text`].
    pub fn from_text(text: &str) -> Result<SceneSpec> {
        let mut spec = SceneSpec::ref_grasp(MotionMode::Translation, 0);
        let mut traj: Vec<(usize, (usize, Vec3))> = Vec::new();
        let mut traj_reset = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidSpec(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || Error::InvalidSpec(format!("bad value for {key}: {value}"));
            match key {
                "preset" => {
                    spec = match value {
                        "ref-grasp" => SceneSpec::ref_grasp(spec.motion, spec.seed),
                        "mini" => SceneSpec::mini(spec.motion, spec.seed),
                        other => {
                            return Err(Error::InvalidSpec(format!("unknown preset {other}")))
                        }
                    };
                }
                "name" => spec.name = value.to_string(),
                "frames" => spec.frames = value.parse().map_err(|_| bad())?,
                "width" => spec.width = value.parse().map_err(|_| bad())?,
                "height" => spec.height = value.parse().map_err(|_| bad())?,
                "fx" => spec.fx = value.parse().map_err(|_| bad())?,
                "cam_distance" => spec.cam_distance = value.parse().map_err(|_| bad())?,
                "cam_elevation" => spec.cam_elevation = value.parse().map_err(|_| bad())?,
                "cam_azimuth_range" => {
                    spec.cam_azimuth_range = value.parse().map_err(|_| bad())?
                }
                "clusters" => spec.clusters = value.parse().map_err(|_| bad())?,
                "verts_per_cluster" => {
                    spec.verts_per_cluster = value.parse().map_err(|_| bad())?
                }
                "hand_radius" => spec.hand_radius = value.parse().map_err(|_| bad())?,
                "hand_gaussians_per_vert" => {
                    spec.hand_gaussians_per_vert = value.parse().map_err(|_| bad())?
                }
                "object_blobs" => spec.object_blobs = value.parse().map_err(|_| bad())?,
                "object_radius" => spec.object_radius = value.parse().map_err(|_| bad())?,
                "keyframe" => spec.keyframe = value.parse().map_err(|_| bad())?,
                "motion" => spec.motion = MotionMode::parse(value)?,
                "rot_axis" => spec.rot_axis = parse_vec3(value).ok_or_else(bad)?,
                "rot_angle" => spec.rot_angle = value.parse().map_err(|_| bad())?,
                "bg_grid" => spec.bg_grid = value.parse().map_err(|_| bad())?,
                "bg_span" => spec.bg_span = value.parse().map_err(|_| bad())?,
                "bg_depth" => spec.bg_depth = value.parse().map_err(|_| bad())?,
                "seed" => spec.seed = value.parse().map_err(|_| bad())?,
                "object_center" => spec.object_center = parse_vec3(value).ok_or_else(bad)?,
                other if other.starts_with("traj_") => {
                    if !traj_reset {
                        traj.clear();
                        traj_reset = true;
                    }
                    let idx: usize = other[5..].parse().map_err(|_| bad())?;
                    let (f, p) = value.split_once(':').ok_or_else(bad)?;
                    let frame: usize = f.parse().map_err(|_| bad())?;
                    let pos = parse_vec3(p).ok_or_else(bad)?;
                    traj.push((idx, (frame, pos)));
                }
                other => return Err(Error::InvalidSpec(format!("unknown key: {other}"))),
            }
        }
        if traj_reset {
            traj.sort_by_key(|(i, _)| *i);
            spec.traj = traj.into_iter().map(|(_, kp)| kp).collect();
        }
        // rotation is meaningful only in translation_rotation mode
        if spec.motion == MotionMode::Translation {
            spec.rot_angle = 0.0;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_vec3(s: &str) -> Option<Vec3> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse().ok())
        .collect::<Option<_>>()?;
    if parts.len() != 3 {
        return None;
    }
    Some(Vec3::new(parts[0], parts[1], parts[2]))
}

/// One generated frame: everything the trainer may read plus the ground
/// truth the tests may read.
#[derive(Debug, Clone)]
pub struct GtFrame {
    pub t: f64,
    pub camera: Camera,
    pub image: ImageBuf,
    pub skeleton: SkeletonFrame,
    pub object_rot: Rot3,
    pub object_trans: Vec3,
    pub contact: bool,
    pub train_split: bool,
    /// Ground-truth render Gaussians, kept for oracle checks.
    pub gt_hand: Vec<RenderGaussian>,
    pub gt_object: Vec<RenderGaussian>,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub spec: SceneSpec,
    pub frames: Vec<GtFrame>,
    /// Static background Gaussians (ground truth).
    pub gt_background: Vec<RenderGaussian>,
    /// Point cloud handed to the trainer for background initialization.
    pub background_points: Vec<(Vec3, [f64; 3])>,
}

fn piecewise_linear(traj: &[(usize, Vec3)], frame: usize) -> Vec3 {
    for w in traj.windows(2) {
        let (f0, p0) = w[0];
        let (f1, p1) = w[1];
        if frame <= f1 {
            if frame <= f0 {
                return p0;
            }
            let a = (frame - f0) as f64 / (f1 - f0) as f64;
            return p0 + a * (p1 - p0);
        }
    }
    traj.last().unwrap().1
}

struct HandTemplate {
    /// Per-vertex offset from the hand center, canonical pose.
    vert_offsets: Vec<Vec3>,
    cluster_ids: Vec<usize>,
    /// Per-cluster rotation-rate factor (slight articulation differences).
    cluster_factors: Vec<f64>,
    /// Visual blob offsets relative to each vertex.
    blob_offsets: Vec<Vec<Vec3>>,
    blob_colors: Vec<Vec<[f64; 3]>>,
}

fn build_hand_template(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> HandTemplate {
    let mut vert_offsets = Vec::new();
    let mut cluster_ids = Vec::new();
    let r = spec.hand_radius;
    for c in 0..spec.clusters {
        // cluster 0 is the palm at the center; the rest fan out like digits
        let dir = if c == 0 {
            Vec3::zeros()
        } else {
            let ang = (c as f64 - 1.0) / (spec.clusters as f64 - 1.0).max(1.0)
                * std::f64::consts::PI
                * 0.9
                + 0.15;
            Vec3::new(ang.cos(), ang.sin() * 0.8, 0.15 * (c as f64 - 2.0))
        };
        let base = dir * r * 0.85;
        for v in 0..spec.verts_per_cluster {
            let along = v as f64 / spec.verts_per_cluster.max(1) as f64;
            let jitter = Vec3::new(
                gauss_sample(rng) * 0.25,
                gauss_sample(rng) * 0.25,
                gauss_sample(rng) * 0.25,
            ) * r
                * 0.16;
            let p = if c == 0 {
                jitter * 1.6
            } else {
                base * (0.5 + 0.6 * along) + jitter
            };
            vert_offsets.push(p);
            cluster_ids.push(c);
        }
    }
    let cluster_factors = (0..spec.clusters)
        .map(|c| 1.0 + 0.08 * (c as f64 - (spec.clusters as f64 - 1.0) / 2.0) / spec.clusters as f64)
        .collect();
    let mut blob_offsets = Vec::new();
    let mut blob_colors = Vec::new();
    for (i, _) in vert_offsets.iter().enumerate() {
        let mut offs = Vec::new();
        let mut cols = Vec::new();
        for _ in 0..spec.hand_gaussians_per_vert {
            offs.push(
                Vec3::new(gauss_sample(rng), gauss_sample(rng), gauss_sample(rng)) * r * 0.06,
            );
            let shade = 0.82 + 0.1 * gauss_sample(rng).clamp(-1.0, 1.0)
                - 0.05 * (cluster_ids[i] as f64 / spec.clusters as f64);
            cols.push([shade, shade * 0.72, shade * 0.60]);
        }
        blob_offsets.push(offs);
        blob_colors.push(cols);
    }
    HandTemplate {
        vert_offsets,
        cluster_ids,
        cluster_factors,
        blob_offsets,
        blob_colors,
    }
}

struct ObjectTemplate {
    blob_offsets: Vec<Vec3>,
    blob_colors: Vec<[f64; 3]>,
    blob_scales: Vec<f64>,
}

fn build_object_template(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> ObjectTemplate {
    let mut blob_offsets = Vec::new();
    let mut blob_colors = Vec::new();
    let mut blob_scales = Vec::new();
    let r = spec.object_radius;
    for _ in 0..spec.object_blobs {
        // rejection sample inside the unit ball, then scale
        let p = loop {
            let c = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if c.norm_squared() <= 1.0 {
                break c;
            }
        } * r;
        // color varies smoothly with template position so rotation is visible
        let u = 0.5 + 0.5 * (p.x / r);
        let v = 0.5 + 0.5 * (p.y / r);
        let w = 0.5 + 0.5 * (p.z / r);
        blob_colors.push([
            0.20 + 0.65 * u,
            0.25 + 0.55 * v,
            0.85 - 0.55 * w,
        ]);
        blob_offsets.push(p);
        blob_scales.push(r * (0.22 + 0.10 * rng.gen_range(0.0..1.0)));
    }
    ObjectTemplate {
        blob_offsets,
        blob_colors,
        blob_scales,
    }
}

fn build_background(spec: &SceneSpec) -> Vec<RenderGaussian> {
    let n = spec.bg_grid;
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let u = i as f64 / (n - 1) as f64;
            let v = j as f64 / (n - 1) as f64;
            let x = (u - 0.5) * 2.0 * spec.bg_span;
            let y = (v - 0.5) * 2.0 * spec.bg_span;
            let checker = (i + j) % 2 == 0;
            let base = if checker { 0.42 } else { 0.24 };
            let color = [
                base + 0.18 * u,
                base + 0.10 * v,
                base + 0.12 * (1.0 - u),
            ];
            out.push(RenderGaussian {
                pos: Vec3::new(x, y, spec.bg_depth),
                rot: Rot3::identity(),
                // flattened along z so the plane reads as a surface
                scale: Vec3::new(
                    spec.bg_span * 1.5 / n as f64,
                    spec.bg_span * 1.5 / n as f64,
                    0.01,
                ),
                opacity: 0.95,
                color,
            });
        }
    }
    out
}

fn orbit_camera(spec: &SceneSpec, t: f64) -> Camera {
    let azimuth = (t - 0.5) * spec.cam_azimuth_range;
    let elev = spec.cam_elevation;
    // orbit about the world origin, looking at it
    let dir = Vec3::new(
        azimuth.sin() * elev.cos(),
        -elev.sin(),
        -azimuth.cos() * elev.cos(),
    );
    let eye = -dir * spec.cam_distance;
    Camera::look_at(
        eye,
        Vec3::zeros(),
        Vec3::new(0.0, -1.0, 0.0),
        spec.fx,
        spec.width,
        spec.height,
    )
}

/// Generate the full ground truth for a spec: per-frame cameras, skeletons,
/// object poses, and target images rendered from the ground-truth Gaussians.
/// Deterministic under the spec seed; alternate frames are tagged train and
/// held-out (even frames train).
pub fn generate(spec: &SceneSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let hand = build_hand_template(spec, &mut rng);
    let object = build_object_template(spec, &mut rng);
    let gt_background = build_background(spec);

    // the background init point cloud the trainer consumes: the bg layout
    // with positions only (colors copied), standing in for a sparse SfM cloud
    let background_points: Vec<(Vec3, [f64; 3])> = gt_background
        .iter()
        .map(|g| (g.pos, g.color))
        .collect();

    let k = spec.keyframe;
    let grasp_center = piecewise_linear(&spec.traj, k);
    let mut frames = Vec::with_capacity(spec.frames);
    for f in 0..spec.frames {
        let t = f as f64 / (spec.frames - 1) as f64;
        let camera = orbit_camera(spec, t);
        let center = piecewise_linear(&spec.traj, f);

        // hand rotation ramps from zero at the keyframe to the full angle
        let ramp = if f <= k || spec.rot_angle == 0.0 {
            0.0
        } else {
            (f - k) as f64 / (spec.frames - 1 - k) as f64
        };
        let cluster_rots: Vec<Rot3> = hand
            .cluster_factors
            .iter()
            .map(|fac| so3_exp(&AxisAngle::from_vec(spec.rot_axis * (spec.rot_angle * ramp * fac))))
            .collect();
        let verts: Vec<Vec3> = hand
            .vert_offsets
            .iter()
            .zip(hand.cluster_ids.iter())
            .map(|(off, &c)| center + cluster_rots[c] * *off)
            .collect();
        let skeleton = SkeletonFrame {
            t,
            verts: verts.clone(),
            cluster_ids: hand.cluster_ids.clone(),
            cluster_rots: cluster_rots.clone(),
        };

        // object: static before contact, rigidly attached afterwards
        let contact = f > k;
        let avg_rot = rotation_average(&cluster_rots)?;
        let (object_rot, object_trans) = if contact {
            let rot = avg_rot;
            let trans = center + rot * (spec.object_center - grasp_center);
            (rot, trans)
        } else {
            (Rot3::identity(), spec.object_center)
        };

        // ground-truth render gaussians
        let mut gt_hand = Vec::new();
        for (i, v) in verts.iter().enumerate() {
            for (off, col) in hand.blob_offsets[i].iter().zip(hand.blob_colors[i].iter()) {
                gt_hand.push(RenderGaussian {
                    pos: v + cluster_rots[hand.cluster_ids[i]] * *off,
                    rot: cluster_rots[hand.cluster_ids[i]],
                    scale: Vec3::new(
                        spec.hand_radius * 0.16,
                        spec.hand_radius * 0.13,
                        spec.hand_radius * 0.13,
                    ),
                    opacity: 0.92,
                    color: *col,
                });
            }
        }
        let mut gt_object = Vec::new();
        for ((off, col), s) in object
            .blob_offsets
            .iter()
            .zip(object.blob_colors.iter())
            .zip(object.blob_scales.iter())
        {
            gt_object.push(RenderGaussian {
                pos: object_trans + object_rot * *off,
                rot: object_rot,
                scale: Vec3::new(*s, *s * 0.85, *s * 0.9),
                opacity: 0.93,
                color: *col,
            });
        }

        let mut all = Vec::with_capacity(gt_hand.len() + gt_object.len() + gt_background.len());
        all.extend(gt_hand.iter().cloned());
        all.extend(gt_object.iter().cloned());
        all.extend(gt_background.iter().cloned());
        let (out, _) = render(&all, &camera, [0.0, 0.0, 0.0]);

        frames.push(GtFrame {
            t,
            camera,
            image: out.image,
            skeleton,
            object_rot,
            object_trans,
            contact,
            train_split: f % 2 == 0,
            gt_hand,
            gt_object,
        });
    }
    Ok(GroundTruth {
        spec: spec.clone(),
        frames,
        gt_background,
        background_points,
    })
}

/// Additive i.i.d. Gaussian position noise, deterministic under the seed.
pub fn perturb_init(positions: &mut [Vec3], sigma: f64, seed: u64) {
    if sigma <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in positions.iter_mut() {
        p.x += gauss_sample(&mut rng) * sigma;
        p.y += gauss_sample(&mut rng) * sigma;
        p.z += gauss_sample(&mut rng) * sigma;
    }
}

// --- on-disk sequence format ---------------------------------------------

fn cam_row(cam: &Camera) -> String {
    let mut cols = vec![
        fmt_g9(cam.fx),
        fmt_g9(cam.fy),
        fmt_g9(cam.cx),
        fmt_g9(cam.cy),
    ];
    for r in 0..3 {
        for c in 0..3 {
            cols.push(fmt_g9(cam.rot[(r, c)]));
        }
    }
    for c in 0..3 {
        cols.push(fmt_g9(cam.trans[c]));
    }
    cols.join(",")
}

pub fn parse_cam_row(line: &str, width: usize, height: usize) -> Result<Camera> {
    let vals: Vec<f64> = line
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| {
            Error::MalformedContainer(format!("bad camera value: {s}"))
        }))
        .collect::<Result<_>>()?;
    if vals.len() != 16 {
        return Err(Error::MalformedContainer(format!(
            "camera row has {} columns, expected 16",
            vals.len()
        )));
    }
    let rot = Mat3::new(
        vals[4], vals[5], vals[6], vals[7], vals[8], vals[9], vals[10], vals[11], vals[12],
    );
    Ok(Camera {
        fx: vals[0],
        fy: vals[1],
        cx: vals[2],
        cy: vals[3],
        rot,
        trans: Vec3::new(vals[13], vals[14], vals[15]),
        width,
        height,
        near: 0.05,
        far: 100.0,
    })
}

pub fn cam_row_string(cam: &Camera) -> String {
    cam_row(cam)
}

impl GroundTruth {
    /// Write the sequence directory: `spec.txt`, per-frame PPM + float
    /// dumps, `camera.csv`, `skeleton.csv`, `gt_object_pose.csv`,
    /// `split.csv`.
    pub fn save_sequence(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let write = |name: &str, text: String| -> Result<()> {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(p.display().to_string(), e))
        };
        write("spec.txt", self.spec.to_text())?;

        let mut cam_csv = String::from("# fx,fy,cx,cy,r00,r01,r02,r10,r11,r12,r20,r21,r22,tx,ty,tz\n");
        let mut skel_csv = String::from("# t,cluster,vx,vy,vz,r00,r01,r02,r10,r11,r12,r20,r21,r22\n");
        let mut pose_csv = String::from("# t,r00,r01,r02,r10,r11,r12,r20,r21,r22,tx,ty,tz,contact\n");
        let mut split_csv = String::from("# frame,split\n");
        for (f, frame) in self.frames.iter().enumerate() {
            frame
                .image
                .save_ppm(&dir.join(format!("frame_{f:04}.ppm")))?;
            frame
                .image
                .save_float_dump(&dir.join(format!("frame_{f:04}.img")))?;
            cam_csv.push_str(&cam_row(&frame.camera));
            cam_csv.push('\n');
            for (v, &c) in frame
                .skeleton
                .verts
                .iter()
                .zip(frame.skeleton.cluster_ids.iter())
            {
                let rot = frame.skeleton.cluster_rots[c].matrix();
                let mut cols = vec![
                    fmt_g9(frame.t),
                    c.to_string(),
                    fmt_g9(v.x),
                    fmt_g9(v.y),
                    fmt_g9(v.z),
                ];
                for r in 0..3 {
                    for cc in 0..3 {
                        cols.push(fmt_g9(rot[(r, cc)]));
                    }
                }
                skel_csv.push_str(&cols.join(","));
                skel_csv.push('\n');
            }
            let rot = frame.object_rot.matrix();
            let mut cols = vec![fmt_g9(frame.t)];
            for r in 0..3 {
                for cc in 0..3 {
                    cols.push(fmt_g9(rot[(r, cc)]));
                }
            }
            for cc in 0..3 {
                cols.push(fmt_g9(frame.object_trans[cc]));
            }
            cols.push(if frame.contact { "1" } else { "0" }.into());
            pose_csv.push_str(&cols.join(","));
            pose_csv.push('\n');
            split_csv.push_str(&format!(
                "{f},{}\n",
                if frame.train_split { "train" } else { "holdout" }
            ));
        }
        write("camera.csv", cam_csv)?;
        write("skeleton.csv", skel_csv)?;
        write("gt_object_pose.csv", pose_csv)?;
        write("split.csv", split_csv)?;
        Ok(())
    }
}

/// One loaded sequence frame: what the trainer is allowed to see.
#[derive(Debug, Clone)]
pub struct SeqFrame {
    pub t: f64,
    pub camera: Camera,
    pub target: ImageBuf,
    pub skeleton: SkeletonFrame,
    pub train_split: bool,
}

/// A sequence as loaded from disk. Carries no object ground truth.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub frames: Vec<SeqFrame>,
    pub width: usize,
    pub height: usize,
}

impl FrameSequence {
    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.frames.len())
            .filter(|&i| self.frames[i].train_split)
            .collect()
    }

    pub fn holdout_indices(&self) -> Vec<usize> {
        (0..self.frames.len())
            .filter(|&i| !self.frames[i].train_split)
            .collect()
    }

    /// Load a sequence directory written by [`GroundTruth::save_sequence`].
    /// Reads only the trainer-visible files (images, cameras, skeletons,
    /// split), never the ground-truth object poses.
    pub fn load(dir: &Path) -> Result<FrameSequence> {
        let read = |name: &str| -> Result<String> {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| Error::io(p.display().to_string(), e))
        };
        let cam_text = read("camera.csv")?;
        let split_text = read("split.csv")?;
        let skel_text = read("skeleton.csv")?;

        let mut splits = Vec::new();
        for line in split_text.lines().filter(|l| !l.starts_with('#')) {
            if line.trim().is_empty() {
                continue;
            }
            let (_, s) = line
                .split_once(',')
                .ok_or_else(|| Error::MalformedContainer(format!("bad split line {line}")))?;
            splits.push(s.trim() == "train");
        }
        if splits.is_empty() {
            return Err(Error::MalformedContainer("empty split.csv".into()));
        }
        let n = splits.len();

        // first image determines dimensions
        let first = ImageBuf::load_float_dump(&dir.join("frame_0000.img"))?;
        let (width, height) = (first.width, first.height);

        let mut cams = Vec::new();
        for line in cam_text.lines().filter(|l| !l.starts_with('#')) {
            if line.trim().is_empty() {
                continue;
            }
            cams.push(parse_cam_row(line, width, height)?);
        }
        if cams.len() != n {
            return Err(Error::MalformedContainer(format!(
                "{} cameras for {} frames",
                cams.len(),
                n
            )));
        }

        // group skeleton rows into frames by timestamp order
        let mut skel_rows: Vec<(f64, usize, Vec3, Mat3)> = Vec::new();
        for line in skel_text.lines().filter(|l| !l.starts_with('#')) {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::MalformedContainer(format!("bad skeleton value {s}")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != 14 {
                return Err(Error::MalformedContainer(format!(
                    "skeleton row has {} columns, expected 14",
                    vals.len()
                )));
            }
            let rot = Mat3::new(
                vals[5], vals[6], vals[7], vals[8], vals[9], vals[10], vals[11], vals[12],
                vals[13],
            );
            skel_rows.push((
                vals[0],
                vals[1] as usize,
                Vec3::new(vals[2], vals[3], vals[4]),
                rot,
            ));
        }
        let per_frame = skel_rows.len() / n;
        if per_frame * n != skel_rows.len() {
            return Err(Error::MalformedContainer(
                "skeleton rows not divisible by frame count".into(),
            ));
        }

        let mut frames = Vec::with_capacity(n);
        for f in 0..n {
            let target = ImageBuf::load_float_dump(&dir.join(format!("frame_{f:04}.img")))?;
            let rows = &skel_rows[f * per_frame..(f + 1) * per_frame];
            let t = rows[0].0;
            let n_clusters = rows.iter().map(|r| r.1).max().unwrap_or(0) + 1;
            let mut cluster_rots = vec![Rot3::identity(); n_clusters];
            let mut verts = Vec::with_capacity(per_frame);
            let mut cluster_ids = Vec::with_capacity(per_frame);
            for (_, c, v, rot) in rows {
                verts.push(*v);
                cluster_ids.push(*c);
                cluster_rots[*c] = Rot3::from_matrix_unchecked(*rot);
            }
            let skeleton = SkeletonFrame {
                t,
                verts,
                cluster_ids,
                cluster_rots,
            };
            skeleton.validate()?;
            frames.push(SeqFrame {
                t,
                camera: cams[f].clone(),
                target,
                skeleton,
                train_split: splits[f],
            });
        }
        Ok(FrameSequence {
            frames,
            width,
            height,
        })
    }
}

/// Ground-truth object poses, for tests and evaluation tooling only.
pub fn load_gt_object_poses(dir: &Path) -> Result<Vec<(f64, Rot3, Vec3, bool)>> {
    let p = dir.join("gt_object_pose.csv");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(p.display().to_string(), e))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::MalformedContainer(format!("bad pose value {s}")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != 14 {
            return Err(Error::MalformedContainer("bad pose row".into()));
        }
        let rot = Mat3::new(
            vals[1], vals[2], vals[3], vals[4], vals[5], vals[6], vals[7], vals[8], vals[9],
        );
        out.push((
            vals[0],
            Rot3::from_matrix_unchecked(rot),
            Vec3::new(vals[10], vals[11], vals[12]),
            vals[13] != 0.0,
        ));
    }
    Ok(out)
}
