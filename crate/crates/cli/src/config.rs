//! Training config files: `key: value` text with `#` comments, mirroring
//! the teacher/student objective weights plus steps/seed/batch-size.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail};

use lwtf_core::distill::{StudentObjectiveConfig, SyncSchedule, TeacherObjectiveConfig};

#[derive(Debug, Clone, Default)]
pub struct TrainConfigFile {
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub snapshot_every: Option<usize>,
    pub seed: Option<u64>,
    pub teacher: TeacherOverrides,
    pub student: StudentOverrides,
}

#[derive(Debug, Clone, Default)]
pub struct TeacherOverrides {
    pub lambda_gan: Option<f64>,
    pub lambda_recon: Option<f64>,
    pub lambda_sync: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct StudentOverrides {
    pub lambda_cd: Option<f64>,
    pub lambda_ssim: Option<f64>,
    pub lambda_feature: Option<f64>,
    pub lambda_style: Option<f64>,
    pub lambda_tv: Option<f64>,
    pub lambda_sync: Option<f64>,
    pub sync_schedule: Option<String>,
    pub switch_fraction: Option<f64>,
    pub use_kd: Option<bool>,
}

pub fn parse_train_config(text: &str) -> anyhow::Result<TrainConfigFile> {
    let mut kv = BTreeMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once(':')
            .ok_or_else(|| anyhow!("config line {}: expected 'key: value'", ln + 1))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let mut cfg = TrainConfigFile::default();
    for (k, v) in &kv {
        let fnum = || -> anyhow::Result<f64> {
            v.parse().map_err(|_| anyhow!("config key '{k}': bad number '{v}'"))
        };
        let unum = || -> anyhow::Result<usize> {
            v.parse().map_err(|_| anyhow!("config key '{k}': bad integer '{v}'"))
        };
        match k.as_str() {
            "steps" => cfg.steps = Some(unum()?),
            "batch_size" => cfg.batch_size = Some(unum()?),
            "lr" => cfg.lr = Some(fnum()?),
            "snapshot_every" => cfg.snapshot_every = Some(unum()?),
            "seed" => cfg.seed = Some(v.parse().map_err(|_| anyhow!("bad seed '{v}'"))?),
            "teacher.lambda_gan" => cfg.teacher.lambda_gan = Some(fnum()?),
            "teacher.lambda_recon" => cfg.teacher.lambda_recon = Some(fnum()?),
            "teacher.lambda_sync" => cfg.teacher.lambda_sync = Some(fnum()?),
            "student.lambda_cd" => cfg.student.lambda_cd = Some(fnum()?),
            "student.lambda_ssim" => cfg.student.lambda_ssim = Some(fnum()?),
            "student.lambda_feature" => cfg.student.lambda_feature = Some(fnum()?),
            "student.lambda_style" => cfg.student.lambda_style = Some(fnum()?),
            "student.lambda_tv" => cfg.student.lambda_tv = Some(fnum()?),
            "student.lambda_sync" => cfg.student.lambda_sync = Some(fnum()?),
            "student.sync_schedule" => cfg.student.sync_schedule = Some(v.clone()),
            "student.switch_fraction" => cfg.student.switch_fraction = Some(fnum()?),
            "student.use_kd" => {
                cfg.student.use_kd = Some(match v.as_str() {
                    "true" | "on" | "yes" => true,
                    "false" | "off" | "no" => false,
                    other => bail!("config key '{k}': bad boolean '{other}'"),
                })
            }
            other => bail!("unknown config key '{other}'"),
        }
    }
    Ok(cfg)
}

impl TeacherOverrides {
    pub fn apply(&self, base: &mut TeacherObjectiveConfig) {
        if let Some(v) = self.lambda_gan {
            base.lambda_gan = v;
        }
        if let Some(v) = self.lambda_recon {
            base.lambda_recon = v;
        }
        if let Some(v) = self.lambda_sync {
            base.lambda_sync = v;
        }
    }
}

impl StudentOverrides {
    pub fn apply(&self, base: &mut StudentObjectiveConfig) -> anyhow::Result<()> {
        if let Some(v) = self.lambda_cd {
            base.lambda_cd = v;
        }
        if let Some(v) = self.lambda_ssim {
            base.lambda_ssim = v;
        }
        if let Some(v) = self.lambda_feature {
            base.lambda_feature = v;
        }
        if let Some(v) = self.lambda_style {
            base.lambda_style = v;
        }
        if let Some(v) = self.lambda_tv {
            base.lambda_tv = v;
        }
        if let Some(v) = self.lambda_sync {
            base.lambda_sync = v;
        }
        if let Some(v) = self.use_kd {
            base.use_kd = v;
        }
        let fraction = self.switch_fraction.unwrap_or(match base.sync_schedule {
            SyncSchedule::Mid(f) => f,
            SyncSchedule::All => 0.5,
        });
        if let Some(s) = &self.sync_schedule {
            base.sync_schedule = match s.as_str() {
                "all" => SyncSchedule::All,
                "mid" => SyncSchedule::Mid(fraction),
                other => bail!("sync schedule must be 'all' or 'mid', got '{other}'"),
            };
        } else if self.switch_fraction.is_some() {
            if let SyncSchedule::Mid(_) = base.sync_schedule {
                base.sync_schedule = SyncSchedule::Mid(fraction);
            }
        }
        Ok(())
    }
}
