//! AP50 and the robustness metrics built on it.

mod ap;
mod metrics;
mod report;

pub use ap::{all_point_ap, ap50, ap50_per_class, IOU_THRESHOLD};
pub use metrics::{gain, mpc, rpc, GainReport};
pub use report::{
    check_suite, corrupted_copy, evaluate, format_predictions, predict, read_predictions, robustness,
    write_predictions, CorruptionScore, RobustnessReport,
};
