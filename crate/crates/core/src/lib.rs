//! Closed-loop photo editing engine: candidate edits are proposed, searched
//! with Monte Carlo tree search on reduced-resolution copies, executed with
//! routed tools and accepted only when a weighted quality ensemble improves.

pub mod action;
pub mod analysis;
pub mod controller;
pub mod evaluator;
pub mod executor;
pub mod http;
pub mod imaging;
pub mod memory;
pub mod perceiver;
pub mod planner;
pub mod stats;

pub use action::{ActionPayload, Category, EditAction, Origin, ProceduralParams};
pub use imaging::{content_hash, downscale, ImageState, PixelImage, Scale};
