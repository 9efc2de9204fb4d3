//! Hierarchical emotion distribution (ED) toolkit.
//!
//! The pipeline runs in three directions:
//!
//! * audio + alignment → per-segment prosodic features → per-emotion ranking
//!   functions → three-level ED ([`signal`], [`alignment`], [`ranker`], [`hed`]);
//! * text → ED, predicted utterance first, then words, then phonemes
//!   ([`predictor`], built on the small MLP kit in [`neural`]);
//! * ED + text → per-phoneme pitch, energy and duration ([`renderer`]), with
//!   runtime edits and intensity sweeps on top ([`editing`]).
//!
//! [`metrics`] holds the objective evaluation battery and [`corpus`] generates
//! synthetic corpora whose acoustics follow known emotion rules.

pub mod alignment;
pub mod corpus;
pub mod editing;
mod error;
pub mod hed;
pub mod metrics;
pub mod neural;
pub mod predictor;
pub mod ranker;
pub mod renderer;
pub mod signal;

pub use alignment::{Phone, Segmentation, Word};
pub use corpus::{CorpusItem, EmotionRule, SynthSpec};
pub use editing::{EditCommand, EditSession, Level, Policy};
pub use error::{Error, Result};
pub use hed::{HierarchicalEd, PhonemeAlignedEd};
pub use neural::{Activation, Mlp, TrainConfig};
pub use predictor::{EdPredictor, PredictMode, TextEncoder, TextEncoding};
pub use ranker::{EmotionSet, RankTrainConfig, RankerBundle, RankingModel};
pub use renderer::{ProsodyContour, ProsodyRenderer, RendererModel, RenderMode};
pub use signal::{AudioClip, FrameTrack, SegmentFeatures};
