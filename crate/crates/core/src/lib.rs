//! Topic-aware multi-turn dialogue generation.
//!
//! Pipeline: a biterm topic model is pre-trained on context pairs with
//! collapsed Gibbs sampling, turn-level and session-level GRUs encode the
//! dialogue history, topic-level attention weighs history turns by the
//! cosine similarity of their topic-context vectors against the current
//! turn, and a GRU decoder generates the response conditioned on the
//! attention history vector and the current turn's topic distribution.
//! Training is joint: the topic-word matrix becomes a differentiable
//! logit table fine-tuned by the generation loss.

pub mod attention;
pub mod autodiff;
pub mod btm;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod synthgen;
pub mod training;

pub use attention::{AttentionResult, NormMode};
pub use autodiff::{Graph, NodeId, Tensor};
pub use btm::{Biterm, BitermSet, BtmCorpus, BtmModel, GibbsConfig, TopicPosterior};
pub use corpus::{ContextPairDoc, DialogueSession, LoadOptions, LoadStats, Vocabulary};
pub use decoder::GenerationMode;
pub use error::{Error, Result};
pub use metrics::EvalReport;
pub use training::{AttentionMode, ParameterStore, TrainConfig, Trainer};
