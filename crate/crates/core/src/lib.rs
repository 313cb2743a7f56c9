//! Interaction-aware dynamic Gaussian splatting for hand-object scenes.
//!
//! The crate models a dynamic hand-object-background scene as three tagged
//! sets of anisotropic 3D Gaussians, each warped from a shared canonical
//! space by a small per-set deformation MLP, rendered by a differentiable
//! software rasterizer, and optimized by a five-phase progressive schedule
//! with explicit 3D regularizers. A built-in synthetic scene generator
//! produces ground-truth sequences with the same renderer, so the whole
//! pipeline is verifiable end to end without external data.
//!
//! Module map:
//! - [`geom`]: rotation algebra, encodings, kernels.
//! - [`gaussmodel`]: Gaussian primitives, tagged sets, initializers, KNN.
//! - [`fields`]: the three deformation MLPs with manual forward/backward.
//! - [`splat`]: differentiable projection and alpha-compositing rasterizer.
//! - [`losses`]: photometric and interaction-aware 3D objectives, PSNR/SSIM.
//! - [`refine`]: neighborhood weights and blended local-rigid deformation.
//! - [`train`]: Adam, densification, the five-phase schedule.
//! - [`scenegen`]: synthetic sequence generator and on-disk sequence format.
//! - [`container`]: scene checkpoint container.
//! - [`cli`]: command implementations behind the `hoigs` binary.

pub mod cli;
pub mod config;
pub mod container;
pub mod error;
pub mod fields;
pub mod gaussmodel;
pub mod geom;
pub mod img;
pub mod losses;
pub mod refine;
pub mod scenegen;
pub mod splat;
pub mod train;

pub use error::{Error, Result};
pub use geom::{Mat3, Vec3};
