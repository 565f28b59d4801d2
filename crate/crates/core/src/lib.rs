//! Tensor product representations and a TPR-structured caption generator:
//! the algebra, the two-cell recurrent model, exact reverse-mode training,
//! a synthetic scene-caption corpus, and analysis of the learned unbinding
//! vectors.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod interpret;
pub mod model;
pub mod tensor;
pub mod tpr;
pub mod train;
pub mod witness;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use data::{EmbeddingTable, PosTag, Sample, SceneGrammar, Vocabulary};
pub use error::{Error, Result};
pub use interpret::{ClusterModel, ConformityRow, ConformityTable, UnbindingRecord};
pub use model::{Decoding, Generation, HyperParams, ModelParams, TpgnState, WxMode};
pub use tensor::{Mat, Tensor3, Tensor4, Vector};
pub use tpr::{Binding, RoleBasis, Tpr};
pub use train::{EpochStats, GradientSet, Loss, OptimizerKind, TrainConfig, TrainOutcome};
