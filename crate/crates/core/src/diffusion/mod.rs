//! Location-conditioned denoising diffusion over normalized fingerprints.
//!
//! The denoiser predicts the clean fingerprint from a noisy one, a timestep
//! and an unseen-location condition. Training couples every surveyed sample
//! with unseen conditions drawn in proportion to a distance kernel, so the
//! generator for an unseen location learns from the surveyed locations
//! around it.

mod checkpoint;
mod denoiser;
mod embedding;
mod kernel;
mod loss;
mod sampler;
mod schedule;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use denoiser::{Denoise, DenoiserArch, DenoiserNetwork};
pub use embedding::{embed_condition, embed_time, ConditionEmbedding};
pub use kernel::{median_nearest_neighbor_distance, vicinity_weight, KernelForm, VicinityKernel};
pub use loss::{full_sum_loss, spatial_loss, spatial_loss_and_grad, LossPair};
pub use sampler::{generate_unseen_map, postprocess, sample};
pub use schedule::NoiseSchedule;
pub use train::{default_bandwidth, train, within_location_spread, write_loss_trace, DiffusionTrainConfig, TrainedModel};
