//! Scoring of coefficient estimates against a known truth.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

fn same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} does not match truth {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `Σ(est − truth)² / Σ(glm − truth)²`.
pub fn remse(est: &DMatrix<f64>, glm: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    same_shape(est, truth, "estimate")?;
    same_shape(glm, truth, "GLM estimate")?;
    let num = (est - truth).norm_squared();
    let den = (glm - truth).norm_squared();
    if !(den > 0.0) {
        return Err(Error::UndefinedMetric("ReMSE denominator is zero".into()));
    }
    Ok(num / den)
}

/// Share of nonzero estimates that are zero in truth; 0 without discoveries.
pub fn fdr_metric(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    same_shape(est, truth, "estimate")?;
    let (mut found, mut false_found) = (0usize, 0usize);
    for (e, t) in est.iter().zip(truth.iter()) {
        if *e != 0.0 {
            found += 1;
            if *t == 0.0 {
                false_found += 1;
            }
        }
    }
    Ok(if found == 0 { 0.0 } else { false_found as f64 / found as f64 })
}

/// Share of truly nonzero entries estimated as zero; 0 when the truth is empty.
pub fn fnr_metric(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    same_shape(est, truth, "estimate")?;
    let (mut positives, mut missed) = (0usize, 0usize);
    for (e, t) in est.iter().zip(truth.iter()) {
        if *t != 0.0 {
            positives += 1;
            if *e == 0.0 {
                missed += 1;
            }
        }
    }
    Ok(if positives == 0 { 0.0 } else { missed as f64 / positives as f64 })
}

/// `(FPR, TPR)` of a selection mask against the truth support.
pub fn confusion_rates(selected: &DMatrix<bool>, truth: &DMatrix<f64>) -> Result<(f64, f64)> {
    if selected.shape() != truth.shape() {
        return Err(Error::Shape("selection mask does not match truth".into()));
    }
    let (mut tp, mut fp, mut pos, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (s, t) in selected.iter().zip(truth.iter()) {
        if *t != 0.0 {
            pos += 1;
            tp += usize::from(*s);
        } else {
            neg += 1;
            fp += usize::from(*s);
        }
    }
    let rate = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok((rate(fp, neg), rate(tp, pos)))
}

/// One ROC operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Sweep parameter that produced the point (NaN for the anchors).
    pub param: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve sorted by FPR, anchored at (0,0) and (1,1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    pub fn from_points(mut pts: Vec<RocPoint>) -> Self {
        pts.push(RocPoint {
            param: f64::NAN,
            fpr: 0.0,
            tpr: 0.0,
        });
        pts.push(RocPoint {
            param: f64::NAN,
            fpr: 1.0,
            tpr: 1.0,
        });
        pts.sort_by(|a, b| a.fpr.total_cmp(&b.fpr).then(a.tpr.total_cmp(&b.tpr)));
        Self { points: pts }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["param", "fpr", "tpr"])?;
        for p in &self.points {
            w.write_record([
                crate::csvio::fmt_f64(p.param),
                crate::csvio::fmt_f64(p.fpr),
                crate::csvio::fmt_f64(p.tpr),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Run `fit` for every sweep value and score its selection mask.
pub fn roc_sweep<F>(truth: &DMatrix<f64>, values: &[f64], mut fit: F) -> Result<RocCurve>
where
    F: FnMut(f64) -> Result<DMatrix<bool>>,
{
    if values.is_empty() {
        return Err(invalid("ROC sweep needs at least one value"));
    }
    let mut pts = Vec::with_capacity(values.len());
    for &v in values {
        let sel = fit(v)?;
        let (fpr, tpr) = confusion_rates(&sel, truth)?;
        pts.push(RocPoint { param: v, fpr, tpr });
    }
    Ok(RocCurve::from_points(pts))
}

/// Trapezoidal area under the curve for `FPR ∈ [0, fpr_max]`.
///
/// Returns `(raw, raw / fpr_max)`. TPR is replaced by its running maximum
/// along increasing FPR, and the curve is linearly interpolated at `fpr_max`.
pub fn partial_auc(curve: &RocCurve, fpr_max: f64) -> Result<(f64, f64)> {
    if !(fpr_max > 0.0 && fpr_max <= 1.0) {
        return Err(invalid("fpr_max must lie in (0, 1]"));
    }
    let mut pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.fpr, p.tpr)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    if pts.first().map(|p| p.0 > 0.0).unwrap_or(true) {
        pts.insert(0, (0.0, 0.0));
    }
    let mut best = 0.0f64;
    for p in pts.iter_mut() {
        best = best.max(p.1);
        p.1 = best;
    }
    let mut area = 0.0;
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= fpr_max {
            break;
        }
        if x1 <= fpr_max {
            area += 0.5 * (y0 + y1) * (x1 - x0);
        } else {
            let yb = y0 + (y1 - y0) * (fpr_max - x0) / (x1 - x0);
            area += 0.5 * (y0 + yb) * (fpr_max - x0);
        }
    }
    Ok((area, area / fpr_max))
}

/// Scores of one method on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub method: String,
    pub replicate: u64,
    pub remse: f64,
    pub fdr: f64,
    pub fnr: f64,
}

impl ScoreReport {
    pub fn score(
        method: &str,
        replicate: u64,
        est: &DMatrix<f64>,
        glm: &DMatrix<f64>,
        truth: &DMatrix<f64>,
    ) -> Result<Self> {
        Ok(Self {
            method: method.to_string(),
            replicate,
            remse: remse(est, glm, truth)?,
            fdr: fdr_metric(est, truth)?,
            fnr: fnr_metric(est, truth)?,
        })
    }
}

/// Mean and sample standard deviation of each score per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub replicates: usize,
    pub remse_mean: f64,
    pub remse_sd: f64,
    pub fdr_mean: f64,
    pub fdr_sd: f64,
    pub fnr_mean: f64,
    pub fnr_sd: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Table-style summary, methods in order of first appearance.
pub fn aggregate(reports: &[ScoreReport]) -> Vec<AggregateRow> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&ScoreReport>> = BTreeMap::new();
    for r in reports {
        if !groups.contains_key(&r.method) {
            order.push(r.method.clone());
        }
        groups.entry(r.method.clone()).or_default().push(r);
    }
    order
        .into_iter()
        .map(|m| {
            let g = &groups[&m];
            let pick = |f: fn(&ScoreReport) -> f64| mean_sd(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (remse_mean, remse_sd) = pick(|r| r.remse);
            let (fdr_mean, fdr_sd) = pick(|r| r.fdr);
            let (fnr_mean, fnr_sd) = pick(|r| r.fnr);
            AggregateRow {
                method: m,
                replicates: g.len(),
                remse_mean,
                remse_sd,
                fdr_mean,
                fdr_sd,
                fnr_mean,
                fnr_sd,
            }
        })
        .collect()
}

/// Write serializable rows as a headed CSV.
pub fn write_rows<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
