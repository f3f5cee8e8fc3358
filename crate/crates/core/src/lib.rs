//! Core library of the mapkurator pipeline: batch extraction, georeferencing
//! and entity linking of text labels on scanned historical maps.
//!
//! A run flows through six stages:
//!
//! 1. [`raster`] slices the input map into bounded-memory patches,
//! 2. [`spotter`] detects and recognizes text on each patch,
//! 3. [`merge`] shifts patch detections into map coordinates and drops
//!    duplicates from overlapping tiles,
//! 4. [`postocr`] corrects recognized strings against a gazetteer vocabulary,
//! 5. [`georef`] converts pixel polygons to lon/lat through a fitted affine
//!    transform,
//! 6. [`linker`] attaches gazetteer entity ids to each label.
//!
//! The final output is a GeoJSON `FeatureCollection` written by [`geojson`].
//! [`pipeline`] wires the stages together behind a single configuration
//! struct. [`synth`] generates deterministic map fixtures with exact ground
//! truth, and [`recommend`] serves semantic-type suggestions over HTTP for
//! annotation front ends.

pub mod error;
pub mod geojson;
pub mod geometry;
pub mod georef;
pub mod linker;
pub mod merge;
pub mod pipeline;
pub mod postocr;
pub mod raster;
pub mod recommend;
pub mod rng;
pub mod spotter;
pub mod synth;

pub use error::{Error, Result, Stage};
