//! Knowledge-distillation training: loss terms, objective configuration,
//! and the teacher/student training loops.

mod config;
mod feature;
mod losses;
mod trainer;

pub use config::{
    student_total, teacher_total, StudentObjectiveConfig, SyncSchedule, TeacherObjectiveConfig,
};
pub use feature::{build_feature_extractor, FeatureExtractor, FEATURE_NET_SEED, FEATURE_STAGES};
pub use losses::{
    bce_with_logits_traced, channel_attention, channel_kd_loss_traced, feature_loss,
    feature_loss_traced, gan_d_loss_traced, gram, recon_loss, recon_loss_traced, ssim_index,
    ssim_index_traced, ssim_loss_traced, ssim_window, style_loss, style_loss_traced, sync_loss,
    sync_loss_traced, tv_loss, tv_loss_traced, SYNC_EPS,
};
pub use trainer::{
    divergence_error, train_student, train_teacher, Snapshot, StudentTrainCfg, TeacherTrainCfg,
    TrainOutcome,
};
