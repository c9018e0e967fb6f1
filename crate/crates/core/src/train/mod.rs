//! Episode datasets and surrogate training.

mod dataset;
mod fit;
mod window;

pub use dataset::{
    derive_seed, generate_dataset, generate_in_memory, random_episode, record_episode, Dataset, DatasetHeader,
    DatasetWriter, EpisodeRecord, DATASET_MAGIC, DATASET_VERSION,
};
pub use fit::{
    draw_windows, evaluate_prediction, fit, fit_dataset, latent_residual, mean_loss, new_surrogate, normalization_from, relabel_windows,
    relative_step_errors, split_episodes, teacher_pools, window_loss, window_loss_and_grad, window_loss_tape, EpochRecord, History,
    PredictionCurve, TrainConfig,
};
pub use window::{sample_window, sample_window_index, DatasetWindows, Window, WindowPool, WindowSource};

#[cfg(test)]
mod tests;
