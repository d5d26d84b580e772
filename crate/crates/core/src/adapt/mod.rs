//! Source training, gradual BN-first self-labeling adaptation, the
//! teacher-guided variant and the ablation rows built from them.

mod ablation;
mod config;
mod engine;
mod gradual;
mod record;

pub use ablation::{run_ablation, AblationMode, AblationOutcome};
pub use config::{AdaptConfig, TrainConfig};
pub use engine::{train_source, TrainOutcome};
pub use gradual::{adapt_self, adapt_teacher_guided, AdaptOutcome};
pub use record::{AdaptRunRecord, EpochMetrics, Event, Phase};
