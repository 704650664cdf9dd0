//! Dataset synthesis, training loops, restoration and evaluation.

mod cases;
mod config;
mod dataset;
mod eval;
mod restore;
mod sources;
mod train;

pub use cases::{case_recipe, CaseId, HAZE_HEAVY, HAZE_LIGHT, HAZE_MODERATE};
pub use config::{
    load_denoiser, load_refiner, save_denoiser, save_refiner, ExperimentConfig, ExperimentManifest, FileDigest,
    ScheduleConfig, DEFAULT_SAMPLING_STEPS,
};
pub use dataset::{
    sha256_file, sha256_hex, synth_dataset, DatasetManifest, LoadedSample, SampleRecord, Split, SynthConfig,
    MANIFEST_FILE,
};
pub use eval::{
    aggregate, eval_seed, evaluate, CaseAggregate, DiffusionPipeline, IdentityPipeline, MetricReport, MetricRow,
    Pipeline, PipelineOutput,
};
pub use restore::{refine_coarse, resolve_mask, restore_image, restore_seeds, save_restore_output, MaskSource, RestoreOutput};
pub use sources::{list_pngs, load_cropped, procedural_image, CleanSource};
pub use train::{
    coarse_restorations, refiner_objective, train_denoiser, train_refiner, write_log_csv, DiffusionLogRow,
    DiffusionTrainConfig, RefinerLogRow, RefinerObjective, RefinerTrainConfig,
};
