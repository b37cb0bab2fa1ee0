//! Fibrous-cap analysis for intravascular OCT pullbacks.
//!
//! Frames are polar grids with one row per A-line. The pipeline finds the
//! lumen, shifts every A-line so the lumen sits at column 0, crops and
//! smooths the tissue, labels lipid A-lines, then traces the abluminal cap
//! boundary over each lipid arc by dynamic programming on an edge map and
//! reports cap thickness, lipid angle and the TCFA flag.

pub mod capseg;
pub mod config;
pub mod docs;
pub mod error;
pub mod grid;
pub mod lipid;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod render;
pub mod store;

pub use capseg::{Anchor, CapBoundary, FrameMeasurements, ThicknessMap};
pub use config::AnalysisConfig;
pub use docs::{AgreementDoc, AnnotationDoc, MetricsDoc, ResultsDoc};
pub use error::{Error, Result};
pub use grid::Grid;
pub use lipid::{ALineLabels, LipidArc, PixelMask};
pub use metrics::{AgreementStats, ClassificationScores, ConfusionCounts};
pub use model::{CalibrationMeta, PolarFrame, Pullback, ScanGeometry};
pub use phantom::{GroundTruth, PhantomSpec};
pub use pipeline::{FrameAnalysis, FrameStatus, LipidSource};
pub use preprocess::{LumenBoundary, PreprocessedFrame};
pub use store::{FrameFormat, PullbackManifest};
