//! Objective weight bundles and the weighted-sum combiners.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::elem::Elem;
use crate::error::{Error, Result};

/// Teacher objective weights (adversarial pretraining).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TeacherObjectiveConfig {
    pub lambda_gan: f64,
    pub lambda_recon: f64,
    pub lambda_sync: f64,
}

impl Default for TeacherObjectiveConfig {
    fn default() -> Self {
        TeacherObjectiveConfig {
            lambda_gan: 0.07,
            lambda_recon: 0.9,
            lambda_sync: 0.03,
        }
    }
}

/// When the lip-sync term participates in training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SyncSchedule {
    /// Active for every step.
    All,
    /// Active once `step >= fraction * total_steps`.
    Mid(f64),
}

impl SyncSchedule {
    pub fn active(&self, step: usize, total_steps: usize) -> bool {
        match self {
            SyncSchedule::All => true,
            SyncSchedule::Mid(f) => (step as f64) >= f * total_steps as f64,
        }
    }
}

/// Student objective weights (non-adversarial distillation).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StudentObjectiveConfig {
    pub lambda_cd: f64,
    pub lambda_ssim: f64,
    pub lambda_feature: f64,
    pub lambda_style: f64,
    pub lambda_tv: f64,
    pub lambda_sync: f64,
    pub sync_schedule: SyncSchedule,
    /// With distillation the output losses target the frozen teacher's
    /// outputs and the channel-KD term is active; without it they target
    /// the ground-truth frames (the ablation configuration).
    pub use_kd: bool,
}

impl Default for StudentObjectiveConfig {
    fn default() -> Self {
        StudentObjectiveConfig {
            lambda_cd: 10.0,
            lambda_ssim: 10.0,
            lambda_feature: 10.0,
            lambda_style: 10000.0,
            lambda_tv: 0.00001,
            lambda_sync: 3.0,
            sync_schedule: SyncSchedule::Mid(0.5),
            use_kd: true,
        }
    }
}

impl TeacherObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_gan", self.lambda_gan),
            ("lambda_recon", self.lambda_recon),
            ("lambda_sync", self.lambda_sync),
        ] {
            if v < 0.0 {
                return Err(Error::Train {
                    detail: format!("{name} must be non-negative, got {v}"),
                });
            }
        }
        Ok(())
    }
}

impl StudentObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_cd", self.lambda_cd),
            ("lambda_ssim", self.lambda_ssim),
            ("lambda_feature", self.lambda_feature),
            ("lambda_style", self.lambda_style),
            ("lambda_tv", self.lambda_tv),
            ("lambda_sync", self.lambda_sync),
        ] {
            if v < 0.0 {
                return Err(Error::Train {
                    detail: format!("{name} must be non-negative, got {v}"),
                });
            }
        }
        if let SyncSchedule::Mid(f) = self.sync_schedule {
            if !(0.0..1.0).contains(&f) || f == 0.0 {
                return Err(Error::Train {
                    detail: format!("Mid switch fraction must be in (0,1), got {f}"),
                });
            }
        }
        Ok(())
    }
}

/// Weighted teacher total for given component values.
pub fn teacher_total<E: Elem>(cfg: &TeacherObjectiveConfig, gan: E, recon: E, sync: E) -> E {
    E::of(cfg.lambda_gan) * gan + E::of(cfg.lambda_recon) * recon + E::of(cfg.lambda_sync) * sync
}

/// Weighted student total; the sync component is gated by the schedule
/// (an inactive sync term contributes exactly zero).
#[allow(clippy::too_many_arguments)]
pub fn student_total<E: Elem>(
    cfg: &StudentObjectiveConfig,
    cd: E,
    ssim: E,
    feature: E,
    style: E,
    tv: E,
    sync: E,
    sync_active: bool,
) -> E {
    let mut total = E::of(cfg.lambda_cd) * cd
        + E::of(cfg.lambda_ssim) * ssim
        + E::of(cfg.lambda_feature) * feature
        + E::of(cfg.lambda_style) * style
        + E::of(cfg.lambda_tv) * tv;
    if sync_active {
        total = total + E::of(cfg.lambda_sync) * sync;
    }
    total
}
