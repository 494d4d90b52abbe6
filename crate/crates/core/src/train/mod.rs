//! Patch datasets, augmentation and the training loop.

mod patches;
mod trainer;

pub use patches::{augment, dihedral, extract_patches, window_starts, PatchPair};
pub use trainer::{
    compare_designs, denoise_case, loss_curve_csv, lr_schedule, patch_pool, train, train_with_progress,
    validation_mse, DesignResult, EpochRecord, TrainConfig, TrainLog,
};
