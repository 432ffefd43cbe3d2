//! Corpus handling, batching, the optimization loop, checkpoints and the
//! synthetic toy corpus with its DFT-peak oracle.

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod export;
pub mod manifest;
pub mod oracle;
pub mod toy;
pub mod trainer;

pub use batch::{corpus_mels, extract_features, make_batch, Batch, FeatureSetInfo, FeatureStore};
pub use checkpoint::{load_autoencoder, save_autoencoder, Checkpoint, Container};
pub use config::{parse_kv, read_kv, Settings, TrainConfig};
pub use export::{export_embeddings, read_embeddings};
pub use manifest::{read_manifest, write_manifest, UtteranceRecord};
pub use trainer::{batch_objective, read_loss_csv, write_loss_csv, LossRow, Trainer};
