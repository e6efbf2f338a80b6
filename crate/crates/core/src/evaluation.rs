//! Median-scaled depth metrics and report comparison.
//!
//! All statistics are accumulated in f64 so results agree with a
//! brute-force reference to tight tolerance regardless of image size.

use crate::geometry::{DepthMap, Grid};
use crate::{Error, Result};

/// Error and accuracy statistics of one evaluation run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub n_pixels: usize,
    /// Global factor applied to predictions before comparison (1.0 when
    /// median scaling is off).
    pub scaling: f64,
    pub clamp_min: f64,
    pub clamp_max: f64,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        if !(self.a1 <= self.a2 + 1e-12 && self.a2 <= self.a3 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "accuracy fractions not monotone: {} {} {}",
                self.a1, self.a2, self.a3
            )));
        }
        for (name, v) in [
            ("abs_rel", self.abs_rel),
            ("sq_rel", self.sq_rel),
            ("rmse", self.rmse),
            ("rmse_log", self.rmse_log),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} = {v} invalid")));
            }
        }
        Ok(())
    }

    /// Stable field order for the report file.
    pub fn fields(&self) -> [(&'static str, f64); 9] {
        [
            ("abs_rel", self.abs_rel),
            ("sq_rel", self.sq_rel),
            ("rmse", self.rmse),
            ("rmse_log", self.rmse_log),
            ("a1", self.a1),
            ("a2", self.a2),
            ("a3", self.a3),
            ("n_pixels", self.n_pixels as f64),
            ("scaling", self.scaling),
        ]
    }

    pub fn to_record(&self) -> String {
        let mut s = String::new();
        for (name, v) in self.fields() {
            s.push_str(&format!("{name} {v}\n"));
        }
        s.push_str(&format!("clamp_min {}\n", self.clamp_min));
        s.push_str(&format!("clamp_max {}\n", self.clamp_max));
        s
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let key = it
                .next()
                .ok_or_else(|| Error::InvalidInput("empty report line".into()))?;
            let val: f64 = it
                .next()
                .ok_or_else(|| Error::InvalidInput(format!("report line '{line}' lacks value")))?
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad report value in '{line}'")))?;
            map.insert(key.to_string(), val);
        }
        let get = |k: &str| -> Result<f64> {
            map.get(k)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("report missing field {k}")))
        };
        Ok(MetricsReport {
            abs_rel: get("abs_rel")?,
            sq_rel: get("sq_rel")?,
            rmse: get("rmse")?,
            rmse_log: get("rmse_log")?,
            a1: get("a1")?,
            a2: get("a2")?,
            a3: get("a3")?,
            n_pixels: get("n_pixels")? as usize,
            scaling: get("scaling")?,
            clamp_min: get("clamp_min")?,
            clamp_max: get("clamp_max")?,
        })
    }
}

/// Median over valid entries.
fn masked_median(g: &Grid, valid: &Grid) -> Result<f64> {
    let mut vals: Vec<f64> = g
        .data
        .iter()
        .zip(valid.data.iter())
        .filter(|(_, &m)| m != 0.0)
        .map(|(&v, _)| v as f64)
        .collect();
    if vals.is_empty() {
        return Err(Error::InvalidInput("no valid pixels".into()));
    }
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = vals.len();
    Ok(if n % 2 == 1 {
        vals[n / 2]
    } else {
        0.5 * (vals[n / 2 - 1] + vals[n / 2])
    })
}

/// Rescale predictions by median(gt)/median(pred) over valid pixels.
/// Returns the scaled map and the factor applied.
pub fn median_scale(pred: &DepthMap, gt: &DepthMap, valid: &Grid) -> Result<(DepthMap, f64)> {
    let mp = masked_median(pred.grid(), valid)?;
    let mg = masked_median(gt.grid(), valid)?;
    if mp <= 0.0 {
        return Err(Error::DegenerateInput(format!(
            "median of predictions is {mp}"
        )));
    }
    let factor = mg / mp;
    let g = pred.grid();
    let scaled = Grid::new(
        g.height,
        g.width,
        g.data.iter().map(|&v| (v as f64 * factor) as f32).collect(),
    )?;
    Ok((DepthMap(scaled), factor))
}

/// Depth error metrics over valid pixels, with both maps clamped into
/// `[clamp.0, clamp.1]` first. Thresholds use strict `<`.
pub fn depth_metrics(
    pred: &DepthMap,
    gt: &DepthMap,
    valid: &Grid,
    clamp: (f64, f64),
) -> Result<MetricsReport> {
    depth_metrics_scaled(pred, gt, valid, clamp, 1.0)
}

/// Like [`depth_metrics`] but records the externally applied scaling factor.
pub fn depth_metrics_scaled(
    pred: &DepthMap,
    gt: &DepthMap,
    valid: &Grid,
    clamp: (f64, f64),
    scaling: f64,
) -> Result<MetricsReport> {
    if pred.grid().data.len() != gt.grid().data.len()
        || pred.grid().data.len() != valid.data.len()
    {
        return Err(Error::ShapeMismatch("metrics inputs differ in size".into()));
    }
    let (lo, hi) = clamp;
    if !(0.0 < lo && lo < hi) {
        return Err(Error::InvalidInput(format!("bad clamp range ({lo}, {hi})")));
    }
    let mut n = 0usize;
    let mut abs_rel = 0.0f64;
    let mut sq_rel = 0.0f64;
    let mut sq = 0.0f64;
    let mut sq_log = 0.0f64;
    let mut a1 = 0usize;
    let mut a2 = 0usize;
    let mut a3 = 0usize;
    for i in 0..valid.data.len() {
        if valid.data[i] == 0.0 {
            continue;
        }
        let p = (pred.grid().data[i] as f64).clamp(lo, hi);
        let g = (gt.grid().data[i] as f64).clamp(lo, hi);
        if p <= 0.0 || g <= 0.0 {
            return Err(Error::InvalidInput(
                "nonpositive depth after clamping".into(),
            ));
        }
        n += 1;
        let d = p - g;
        abs_rel += d.abs() / g;
        sq_rel += d * d / g;
        sq += d * d;
        let dl = p.ln() - g.ln();
        sq_log += dl * dl;
        let ratio = (p / g).max(g / p);
        if ratio < 1.25 {
            a1 += 1;
        }
        if ratio < 1.25f64.powi(2) {
            a2 += 1;
        }
        if ratio < 1.25f64.powi(3) {
            a3 += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("no valid pixels".into()));
    }
    let nf = n as f64;
    let report = MetricsReport {
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rmse: (sq / nf).sqrt(),
        rmse_log: (sq_log / nf).sqrt(),
        a1: a1 as f64 / nf,
        a2: a2 as f64 / nf,
        a3: a3 as f64 / nf,
        n_pixels: n,
        scaling,
        clamp_min: lo,
        clamp_max: hi,
    };
    report.validate()?;
    Ok(report)
}

/// Convenience: median-scale then compute metrics.
pub fn evaluate_with_median_scaling(
    pred: &DepthMap,
    gt: &DepthMap,
    valid: &Grid,
    clamp: (f64, f64),
) -> Result<MetricsReport> {
    let (scaled, factor) = median_scale(pred, gt, valid)?;
    depth_metrics_scaled(&scaled, gt, valid, clamp, factor)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Regressed,
    Mixed,
    Unchanged,
}

/// Signed metric deltas (b - a) plus the verdict rule: improved iff both
/// abs_rel and rmse strictly decrease.
#[derive(Clone, Copy, Debug)]
pub struct ReportComparison {
    pub d_abs_rel: f64,
    pub d_sq_rel: f64,
    pub d_rmse: f64,
    pub d_rmse_log: f64,
    pub d_a1: f64,
    pub d_a2: f64,
    pub d_a3: f64,
    pub verdict: Verdict,
}

pub fn compare_reports(a: &MetricsReport, b: &MetricsReport) -> Result<ReportComparison> {
    if a.clamp_min != b.clamp_min || a.clamp_max != b.clamp_max {
        return Err(Error::InvalidInput(format!(
            "evaluation protocols differ: clamp ({}, {}) vs ({}, {})",
            a.clamp_min, a.clamp_max, b.clamp_min, b.clamp_max
        )));
    }
    let d_abs_rel = b.abs_rel - a.abs_rel;
    let d_rmse = b.rmse - a.rmse;
    let verdict = if d_abs_rel == 0.0 && d_rmse == 0.0 {
        Verdict::Unchanged
    } else if d_abs_rel < 0.0 && d_rmse < 0.0 {
        Verdict::Improved
    } else if d_abs_rel > 0.0 && d_rmse > 0.0 {
        Verdict::Regressed
    } else {
        Verdict::Mixed
    };
    Ok(ReportComparison {
        d_abs_rel,
        d_sq_rel: b.sq_rel - a.sq_rel,
        d_rmse,
        d_rmse_log: b.rmse_log - a.rmse_log,
        d_a1: b.a1 - a.a1,
        d_a2: b.a2 - a.a2,
        d_a3: b.a3 - a.a3,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn depth_of(data: Vec<f32>, h: usize, w: usize) -> DepthMap {
        DepthMap::new(Grid::new(h, w, data).unwrap()).unwrap()
    }

    #[test]
    fn identical_maps_are_perfect() {
        let d = depth_of(vec![1.0, 2.0, 3.0, 4.0], 2, 2);
        let valid = Grid::filled(2, 2, 1.0);
        let r = depth_metrics(&d, &d, &valid, (0.1, 80.0)).unwrap();
        assert_eq!(r.abs_rel, 0.0);
        assert_eq!(r.rmse, 0.0);
        assert_eq!(r.a1, 1.0);
        assert_eq!(r.a3, 1.0);
    }

    #[test]
    fn hand_computed_single_pixel_metrics() {
        // gt = 10, pred = 12.5: abs_rel 0.25, sq_rel 0.625, rmse 2.5,
        // a1 = 0 (ratio exactly 1.25, strict <), a2 = 1.
        let p = depth_of(vec![12.5], 1, 1);
        let g = depth_of(vec![10.0], 1, 1);
        let valid = Grid::filled(1, 1, 1.0);
        let r = depth_metrics(&p, &g, &valid, (0.1, 80.0)).unwrap();
        assert!((r.abs_rel - 0.25).abs() < 1e-12);
        assert!((r.sq_rel - 0.625).abs() < 1e-12);
        assert!((r.rmse - 2.5).abs() < 1e-12);
        assert!((r.rmse_log - (1.25f64).ln()).abs() < 1e-12);
        assert_eq!(r.a1, 0.0);
        assert_eq!(r.a2, 1.0);
        assert_eq!(r.a3, 1.0);
    }

    #[test]
    fn median_scaling_cancels_global_scale() {
        let mut rng = Stream::seed_from(70);
        let gt_data: Vec<f32> = (0..64).map(|_| rng.uniform_in(1.0, 40.0)).collect();
        let gt = depth_of(gt_data.clone(), 8, 8);
        let valid = Grid::filled(8, 8, 1.0);
        for k in [0.3f32, 1.0, 3.0, 7.5] {
            let pred = depth_of(gt_data.iter().map(|v| v * k).collect(), 8, 8);
            let (scaled, factor) = median_scale(&pred, &gt, &valid).unwrap();
            assert!((factor - 1.0 / k as f64).abs() < 1e-5);
            let r = depth_metrics(&scaled, &gt, &valid, (0.1, 80.0)).unwrap();
            assert!(r.abs_rel < 1e-6, "k={k}: abs_rel={}", r.abs_rel);
        }
    }

    #[test]
    fn metrics_match_brute_force_oracle() {
        // Independent re-derivation with plain loops, 100 random instances.
        let mut rng = Stream::seed_from(71);
        for case in 0..100 {
            let h = 2 + rng.below(8);
            let w = 2 + rng.below(8);
            let n = h * w;
            let gt: Vec<f32> = (0..n).map(|_| rng.uniform_in(0.5, 60.0)).collect();
            let pred: Vec<f32> = gt
                .iter()
                .map(|&v| (v * rng.uniform_in(0.6, 1.6)).max(0.05))
                .collect();
            let valid_data: Vec<f32> = (0..n)
                .map(|_| if rng.uniform() < 0.85 { 1.0 } else { 0.0 })
                .collect();
            if valid_data.iter().all(|&v| v == 0.0) {
                continue;
            }
            let valid = Grid::new(h, w, valid_data.clone()).unwrap();
            let r = depth_metrics(
                &depth_of(pred.clone(), h, w),
                &depth_of(gt.clone(), h, w),
                &valid,
                (0.1, 80.0),
            )
            .unwrap();

            let mut cnt = 0.0f64;
            let (mut s_abs, mut s_sq, mut s_rmse, mut s_log) = (0.0f64, 0.0, 0.0, 0.0);
            let (mut c1, mut c2, mut c3) = (0.0f64, 0.0, 0.0);
            for i in 0..n {
                if valid_data[i] == 0.0 {
                    continue;
                }
                let p = (pred[i] as f64).clamp(0.1, 80.0);
                let g = (gt[i] as f64).clamp(0.1, 80.0);
                cnt += 1.0;
                s_abs += (p - g).abs() / g;
                s_sq += (p - g) * (p - g) / g;
                s_rmse += (p - g) * (p - g);
                s_log += (p.ln() - g.ln()).powi(2);
                let t = (p / g).max(g / p);
                if t < 1.25 {
                    c1 += 1.0;
                }
                if t < 1.5625 {
                    c2 += 1.0;
                }
                if t < 1.953125 {
                    c3 += 1.0;
                }
            }
            assert!((r.abs_rel - s_abs / cnt).abs() < 1e-9, "case {case}");
            assert!((r.sq_rel - s_sq / cnt).abs() < 1e-9);
            assert!((r.rmse - (s_rmse / cnt).sqrt()).abs() < 1e-9);
            assert!((r.rmse_log - (s_log / cnt).sqrt()).abs() < 1e-9);
            assert!((r.a1 - c1 / cnt).abs() < 1e-12);
            assert!((r.a2 - c2 / cnt).abs() < 1e-12);
            assert!((r.a3 - c3 / cnt).abs() < 1e-12);
            assert!(r.a1 <= r.a2 && r.a2 <= r.a3);
        }
    }

    #[test]
    fn median_scale_records_factor_and_rejects_zero() {
        let gt = depth_of(vec![2.0, 4.0, 6.0, 8.0], 2, 2);
        let pred = depth_of(vec![1.0, 2.0, 3.0, 4.0], 2, 2);
        let valid = Grid::filled(2, 2, 1.0);
        let (_, factor) = median_scale(&pred, &gt, &valid).unwrap();
        assert!((factor - 2.0).abs() < 1e-12);
    }

    #[test]
    fn comparison_verdicts() {
        let base = MetricsReport {
            abs_rel: 0.10,
            sq_rel: 0.5,
            rmse: 4.3,
            rmse_log: 0.2,
            a1: 0.9,
            a2: 0.95,
            a3: 0.99,
            n_pixels: 100,
            scaling: 1.0,
            clamp_min: 0.1,
            clamp_max: 80.0,
        };
        let same = compare_reports(&base, &base.clone()).unwrap();
        assert_eq!(same.verdict, Verdict::Unchanged);
        assert_eq!(same.d_abs_rel, 0.0);

        let better = MetricsReport {
            abs_rel: 0.09,
            rmse: 4.2,
            ..base
        };
        assert_eq!(
            compare_reports(&base, &better).unwrap().verdict,
            Verdict::Improved
        );

        let mixed = MetricsReport {
            abs_rel: 0.09,
            rmse: 4.4,
            ..base
        };
        assert_eq!(
            compare_reports(&base, &mixed).unwrap().verdict,
            Verdict::Mixed
        );

        let worse = MetricsReport {
            abs_rel: 0.2,
            rmse: 5.0,
            ..base
        };
        assert_eq!(
            compare_reports(&base, &worse).unwrap().verdict,
            Verdict::Regressed
        );

        let other_protocol = MetricsReport {
            clamp_max: 100.0,
            ..base
        };
        assert!(compare_reports(&base, &other_protocol).is_err());
    }

    #[test]
    fn report_record_roundtrip() {
        let base = MetricsReport {
            abs_rel: 0.1234,
            sq_rel: 0.5,
            rmse: 4.25,
            rmse_log: 0.19,
            a1: 0.91,
            a2: 0.96,
            a3: 0.99,
            n_pixels: 4096,
            scaling: 1.5,
            clamp_min: 0.1,
            clamp_max: 80.0,
        };
        let rt = MetricsReport::from_record(&base.to_record()).unwrap();
        assert_eq!(base, rt);
    }
}
