//! Activation-range calibration.
//!
//! Two deterministic passes over the calibration set: the first records
//! per-site min/max, the second fills a 2048-bin histogram of absolute
//! values. Scales come either from the full range (minmax) or from the
//! p-th percentile of absolute values (percentile), which clips the
//! observed range symmetrically around zero.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::BuiltModel;
use crate::tensor::Tensor;

use super::params::{QuantParams, SCALE_FLOOR};

pub const HIST_BINS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CalibMethod {
    MinMax,
    /// Percentile of absolute values, in percent (e.g. 99.99).
    Percentile(f64),
}

/// Observed statistics for one activation site.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteStats {
    pub min: f32,
    pub max: f32,
    pub count: u64,
    pub hist: Vec<u64>,
}

impl SiteStats {
    fn new() -> Self {
        SiteStats {
            min: f32::INFINITY,
            max: f32::NEG_INFINITY,
            count: 0,
            hist: alloc::vec![0; HIST_BINS],
        }
    }

    fn abs_max(&self) -> f32 {
        self.min.abs().max(self.max.abs())
    }

    /// Smallest |x| bound holding at least `p` percent of the mass.
    fn abs_percentile(&self, p: f64) -> f32 {
        let want = (self.count as f64 * p / 100.0).ceil() as u64;
        let mut acc = 0u64;
        for (i, &h) in self.hist.iter().enumerate() {
            acc += h;
            if acc >= want {
                return (i + 1) as f32 / HIST_BINS as f32 * self.abs_max();
            }
        }
        self.abs_max()
    }
}

/// Calibration result: per-site statistics and derived activation params.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    pub method: CalibMethod,
    pub frames: usize,
    pub sites: BTreeMap<String, SiteStats>,
    pub act_qparams: BTreeMap<String, QuantParams>,
    pub warnings: Vec<String>,
}

impl Calibration {
    pub fn qparams(&self, site: &str) -> Result<QuantParams> {
        self.act_qparams.get(site).copied().ok_or_else(|| Error::Quant {
            detail: format!("no calibration for activation site '{site}'"),
        })
    }
}

/// Run calibration over batches produced by `next_batch` (which must yield
/// the same sequence on both passes and `None` at the end).
pub fn calibrate<F>(
    model: &BuiltModel<f32>,
    method: CalibMethod,
    mut batches: F,
) -> Result<Calibration>
where
    F: FnMut(usize) -> Result<Option<(Tensor<f32>, Tensor<f32>)>>,
{
    if let CalibMethod::Percentile(p) = method {
        if !(0.0 < p && p <= 100.0) {
            return Err(Error::Quant {
                detail: format!("percentile must be in (0, 100], got {p}"),
            });
        }
    }
    let mut sites: BTreeMap<String, SiteStats> = BTreeMap::new();
    let mut frames = 0usize;

    // Pass 1: ranges.
    let mut batch_idx = 0;
    while let Some((speech, faces)) = batches(batch_idx)? {
        frames += speech.shape()[0];
        model.forward_observed(&speech, &faces, &mut |site, t| {
            let s = sites.entry(site.into()).or_insert_with(SiteStats::new);
            for &v in t.data() {
                s.min = s.min.min(v);
                s.max = s.max.max(v);
            }
            s.count += t.len() as u64;
        })?;
        batch_idx += 1;
    }
    if frames == 0 {
        return Err(Error::Quant {
            detail: "empty calibration set".into(),
        });
    }

    // Pass 2: |x| histograms against the fixed ranges.
    if matches!(method, CalibMethod::Percentile(_)) {
        let mut batch_idx = 0;
        while let Some((speech, faces)) = batches(batch_idx)? {
            model.forward_observed(&speech, &faces, &mut |site, t| {
                let s = sites.get_mut(site).expect("site seen in pass 1");
                let am = s.abs_max();
                if am <= 0.0 {
                    return;
                }
                for &v in t.data() {
                    let b = ((v.abs() / am) * HIST_BINS as f32) as usize;
                    s.hist[b.min(HIST_BINS - 1)] += 1;
                }
            })?;
            batch_idx += 1;
        }
    }

    let mut act_qparams = BTreeMap::new();
    let mut warnings = Vec::new();
    for (site, s) in &sites {
        let qp = match method {
            CalibMethod::MinMax => QuantParams::from_range(s.min, s.max),
            CalibMethod::Percentile(p) => {
                let r = s.abs_percentile(p);
                QuantParams::from_range(s.min.max(-r), s.max.min(r))
            }
        };
        if qp.scale <= SCALE_FLOOR {
            warnings.push(format!(
                "activation site '{site}' is constant-zero; scale floored to {SCALE_FLOOR}"
            ));
        }
        act_qparams.insert(site.clone(), qp);
    }
    Ok(Calibration {
        method,
        frames,
        sites,
        act_qparams,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_scale_never_exceeds_minmax_on_heavy_tails() {
        // Synthetic heavy-tailed site: mostly small values, few huge ones.
        let mut s = SiteStats::new();
        s.min = -100.0;
        s.max = 100.0;
        s.count = 10_000;
        // 99.5% of mass in the first bin region (|x| <= ~0.1*absmax).
        s.hist[10] = 9950;
        s.hist[HIST_BINS - 1] = 50;
        let r = s.abs_percentile(99.0);
        assert!(r < 2.0, "clipped bound {r}");
        let minmax = QuantParams::from_range(s.min, s.max);
        let pct = QuantParams::from_range(s.min.max(-r), s.max.min(r));
        assert!(pct.scale <= minmax.scale);
    }
}
