//! Cycle-consistent translation between flat images (domain X) and
//! embroidery (domain Y).
//!
//! `G1: X → Y` and `G2: Y → X` take the image plus `k` embedding planes,
//! which are zero on input; the planes they emit are pushed toward zero by
//! an L1 penalty. `D1` judges Y images and `D2` judges X images; every
//! discriminator convolution is spectrally normalized. The generator
//! objective is
//!
//! ```text
//! g1 + g2 + λ_cyc·(cyc1 + cyc2) + λ_idt·idt + λ_emb·emb
//! ```

mod checkpoint;
mod losses;
mod nets;
mod train;

pub use checkpoint::{sidecar_path, translate, AdamSteps, CheckpointMeta, RngState};
pub use losses::{
    adversarial_loss, cycle_loss, d_objective, embedding_channels, embedding_loss, g_objective, identity_loss,
    identity_terms, image_channels, total_objective, with_embedding, GanLoss, LossComponents, LossWeights,
};
pub use nets::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, Params};
pub use train::{
    checkpoint_path, epoch_order, train, Direction, EmbBatch, EpochSummary, GanConfig, GanState, MetricsRecord,
    TrainOutcome, METRICS_FILE,
};
