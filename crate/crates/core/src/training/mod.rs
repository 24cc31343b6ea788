//! Mini-batch training, model selection and ablation suites.

mod ablation;
mod config;
mod gradcheck;
mod trainer;

pub use ablation::{arrow_delta, run_ablation_suite, AblationRow, AblationTable, SuiteConfig, SuiteMetric};
pub use config::{Ablation, TrainConfig};
pub use gradcheck::{check_model_gradients, GRAD_CHECK_EVENTS, GRAD_CHECK_PERTURBATION};
pub use trainer::{batch_gradients, train, EpochRecord, TrainData, TrainOutcome, TrainReport, TRAIN_CHUNK, TRAIN_LOG_HEADER};
