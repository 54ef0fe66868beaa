//! Glyphs as a median of three neurally-encoded signed distance fields.
//!
//! The crate covers the whole desk-scale pipeline: vector outline ingestion
//! ([`glyph`]), exact analytic distance fields and corner detection
//! ([`geometry`]), the opacity kernel and channel composition ([`field`]),
//! corner templates ([`templates`]), importance sampling ([`sampling`]), the
//! auto-decoder network with hand-written reverse mode ([`autodecoder`]),
//! training and latent fitting ([`trainer`]) and rendering / metrics
//! ([`render`]).

pub mod autodecoder;
pub mod config;
pub mod error;
pub mod field;
pub mod geometry;
pub mod glyph;
pub mod point;
pub mod render;
pub mod sampling;
pub mod templates;
pub mod trainer;

pub use error::{Error, Result};
pub use point::Point;
