//! Global ranking of batch-norm scales, prune planning (normal and
//! multiple-of-8 regular), channel surgery with bias compensation, and
//! compression reporting.

mod plan;
mod report;
mod surgery;
mod text;

pub use plan::{collect_scales, plan_prune, target_removals, LayerPlan, PruneMethod, PrunePlan, ScaleEntry};
pub use report::{compression_ratio, compression_report, CompressionReport, LayerChannels, ModelStats};
pub use surgery::apply_prune;
pub use text::{parse_plan, plan_to_text};

use crate::error::TrainError;
use crate::eval::Dataset;
use crate::model::ModelGraph;
use crate::train::{train, TrainConfig, TrainOutcome};

/// Post-surgery recovery: training with the L1 term switched off. Zero
/// epochs returns the model unchanged.
pub fn finetune(model: &ModelGraph, data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            model: model.clone(),
            epochs: Vec::new(),
            steps: Vec::new(),
        });
    }
    let cfg = TrainConfig {
        l1_coeff: 0.0,
        ..config.clone()
    };
    train(model, data, &cfg)
}
