//! Trajectory ingestion and prediction-instance construction.

mod cache;
mod instance;
mod labels;
mod ngsim;
mod split;
mod track;

pub use cache::{read_instances, write_instances, INSTANCE_FORMAT, INSTANCE_FORMAT_VERSION};
pub use instance::{
    extract_instances, instance_at, to_prediction_frame, ExtractConfig, ExtractReport, FrameOrigin, Neighbor,
    PredictionInstance, Scene, FUTURE_FRAMES, FUTURE_LEN, HISTORY_FRAMES, HISTORY_LEN, STEP_FRAMES,
};
pub use labels::{label_lateral, label_longitudinal, LabelConfig, Lateral, Longitudinal};
pub use ngsim::{parse_ngsim, parse_ngsim_str, write_ngsim, ColumnMap, ColumnRef, ParsedFile};
pub use split::{is_test_vehicle, split, validation_split, DatasetSplit, TEST_MODULUS};
pub use track::{Sample, Track, FRAME_DT, FRAME_RATE_HZ};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("vehicle {vehicle_id}: {reason}")]
    InvalidTrack { vehicle_id: u32, reason: String },
    #[error("vehicle {vehicle_id} lacks samples for [{from}, {to}]")]
    InsufficientTrack { vehicle_id: u32, from: u32, to: u32 },
    #[error("no vehicle {0} in scene")]
    UnknownVehicle(u32),
    #[error("instance cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
