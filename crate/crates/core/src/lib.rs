//! Embedding inversion toolkit: corpora, frozen victim encoders, three
//! attackers (generative decoder, multi-label classifier, multi-set
//! recurrent predictor) and the metrics used to score them.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod geia;
pub mod inversion;
pub mod metrics;
pub mod mlc;
pub mod msp;
pub mod training;
pub mod victim;

pub use checkpoint::{Architecture, Attacker, AttackerKind, CheckpointManifest};
pub use corpus::{AnnotatedSentence, StopWords, TokenId, Vocabulary};
pub use error::{Error, Result};
pub use inversion::{InversionKind, InversionResult};
pub use metrics::MetricsReport;
pub use training::{Sample, TrainConfig};
pub use victim::{SentenceEmbedding, Victim};
