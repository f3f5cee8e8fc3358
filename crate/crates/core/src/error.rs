//! Error types shared by all pipeline stages.

use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage names used to tag fatal errors for the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Tiling,
    Spotting,
    Merging,
    PostOcr,
    Georeferencing,
    Linking,
    Output,
    Synth,
    Recommender,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Tiling => "raster-tiler",
            Stage::Spotting => "spotter",
            Stage::Merging => "patch-merger",
            Stage::PostOcr => "postocr-corrector",
            Stage::Georeferencing => "georeferencer",
            Stage::Linking => "entity-linker",
            Stage::Output => "geojson-emitter",
            Stage::Synth => "synthmap-generator",
            Stage::Recommender => "semantic-type-recommender",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported raster format: {0}")]
    Format(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("insufficient ground control: {0}")]
    InsufficientControl(String),

    #[error("unsupported transform method {0:?} (only \"affine\" is implemented)")]
    UnsupportedMethod(String),

    #[error("corrupt gazetteer: {0}")]
    CorruptGazetteer(String),

    #[error("spotter backend failed on patch {patch_id}: {message}")]
    SpotterBackend { patch_id: String, message: String },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("serialization: {0}")]
    Serialization(String),

    /// A fatal error tagged with the stage it came from.
    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with a stage tag (idempotent: already-tagged errors
    /// keep their original stage).
    pub fn at_stage(self, stage: Stage) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}
