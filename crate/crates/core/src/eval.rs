//! Agreement between objective scores and subjective MOS.
//!
//! Predictions are mapped into MOS units by the five-parameter logistic
//!
//! ```text
//! f(x) = β1 (1/2 − 1/(1 + exp(β2 (x − β3)))) + β4 x + β5
//! ```
//!
//! fitted by Levenberg–Marquardt, after which PLCC, SROCC and RMSE are
//! reported overall and per content / per distortion group.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix5, Vector5};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::report::serde_f64_inf;

pub fn logistic(params: &[f64; 5], x: f64) -> f64 {
    let [b1, b2, b3, b4, b5] = *params;
    b1 * (0.5 - sigmoid_neg(b2 * (x - b3))) + b4 * x + b5
}

/// `1 / (1 + exp(t))` without overflow.
fn sigmoid_neg(t: f64) -> f64 {
    if t > 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitKind {
    Logistic,
    /// The logistic fit failed; an affine least-squares map was used.
    LinearFallback,
    /// Too few samples for the logistic; correlations are on raw scores.
    Raw,
    /// Predictions are constant.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogisticFit {
    pub params: [f64; 5],
    pub mapped: Vec<f64>,
    pub kind: FitKind,
    pub sse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    #[serde(with = "serde_f64_inf")]
    pub value: f64,
    /// One side had zero variance; `value` is reported as 0.
    pub degenerate: bool,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Affine least squares `y ≈ a x + b`, or `(0, mean y)` for constant `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if x.iter().all(|&v| v == x[0]) {
        return (0.0, my);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let a = sxy / sxx;
    (a, my - a * mx)
}

fn sse_of(params: &[f64; 5], x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(xi, yi)| (logistic(params, *xi) - yi).powi(2)).sum()
}

/// Levenberg–Marquardt on standardized inputs. Returns `None` if the
/// iterate stops being finite.
fn levenberg_marquardt(start: [f64; 5], z: &[f64], y: &[f64]) -> Option<[f64; 5]> {
    let mut p = start;
    let mut sse = sse_of(&p, z, y);
    if !sse.is_finite() {
        return None;
    }
    let mut lambda = 1e-3;
    for _ in 0..2000 {
        let mut jtj = Matrix5::<f64>::zeros();
        let mut jtr = Vector5::<f64>::zeros();
        for (&zi, &yi) in z.iter().zip(y) {
            let l = sigmoid_neg(p[1] * (zi - p[2]));
            let slope = l * (1.0 - l);
            let j = Vector5::new(0.5 - l, p[0] * slope * (zi - p[2]), -p[0] * slope * p[1], zi, 1.0);
            let r = logistic(&p, zi) - yi;
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for k in 0..5 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let cand: [f64; 5] = std::array::from_fn(|k| p[k] + step[k]);
            let cand_sse = sse_of(&cand, z, y);
            if cand_sse.is_finite() && cand_sse < sse {
                let gain = sse - cand_sse;
                p = cand;
                sse = cand_sse;
                lambda = (lambda / 3.0).max(1e-15);
                improved = true;
                if gain <= 1e-14 * sse.max(1e-300) {
                    return Some(p);
                }
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    p.iter().all(|v| v.is_finite()).then_some(p)
}

/// With β2 and β3 fixed the model is linear in (β1, β4, β5); solve that
/// part exactly. The affine map is a special case, so the result never
/// fits worse than the best straight line.
fn refine_linear_part(p: [f64; 5], z: &[f64], y: &[f64]) -> Option<[f64; 5]> {
    let n = z.len();
    let design = DMatrix::from_fn(n, 3, |i, c| match c {
        0 => 0.5 - sigmoid_neg(p[1] * (z[i] - p[2])),
        1 => z[i],
        _ => 1.0,
    });
    let rhs = DVector::from_column_slice(y);
    let sol = design.svd(true, true).solve(&rhs, 1e-12).ok()?;
    let out = [sol[0], p[1], p[2], sol[1], sol[2]];
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Fits the logistic mapping from `x` (predictions) to `y` (MOS).
pub fn logistic_fit(x: &[f64], y: &[f64]) -> Result<LogisticFit> {
    if x.len() != y.len() {
        return Err(Error::domain("predictions and MOS differ in length"));
    }
    if x.len() < 5 {
        return Err(Error::domain(format!(
            "the five-parameter logistic needs at least 5 samples, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::domain("predictions and MOS must be finite"));
    }
    let mx = mean(x);
    let sx = (x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    if x.iter().all(|&v| v == x[0]) {
        let my = mean(y);
        return Ok(LogisticFit {
            params: [0.0, 0.0, 0.0, 0.0, my],
            mapped: vec![my; x.len()],
            kind: FitKind::Degenerate,
            sse: y.iter().map(|v| (v - my).powi(2)).sum(),
        });
    }
    let z: Vec<f64> = x.iter().map(|v| (v - mx) / sx).collect();

    let (slope, intercept) = linear_fit(&z, y);
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sorted = z.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let sign = if slope < 0.0 { -1.0 } else { 1.0 };
    let mut starts = vec![[0.0, 1.0, median, slope, intercept]];
    for scale in [0.5, 1.0, 2.0, 4.0] {
        starts.push([ymax - ymin, sign * scale, median, 0.0, mean(y)]);
    }

    let mut best: Option<([f64; 5], f64)> = None;
    for start in starts {
        let Some(p) = levenberg_marquardt(start, &z, y).and_then(|p| refine_linear_part(p, &z, y)) else {
            continue;
        };
        let sse = sse_of(&p, &z, y);
        if sse.is_finite() && best.is_none_or(|(_, b)| sse < b) {
            best = Some((p, sse));
        }
    }
    let (pz, kind) = match best {
        Some((p, _)) => (p, FitKind::Logistic),
        None => ([0.0, 1.0, 0.0, slope, intercept], FitKind::LinearFallback),
    };
    // Undo the standardization z = (x − mx) / sx.
    let params = [pz[0], pz[1] / sx, pz[2] * sx + mx, pz[3] / sx, pz[4] - pz[3] * mx / sx];
    let mapped: Vec<f64> = z.iter().map(|&zi| logistic(&pz, zi)).collect();
    let sse = mapped.iter().zip(y).map(|(m, v)| (m - v).powi(2)).sum();
    Ok(LogisticFit {
        params,
        mapped,
        kind,
        sse,
    })
}

/// Two-pass Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Correlation {
    assert_eq!(a.len(), b.len(), "pearson on sequences of different length");
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if a.iter().all(|&v| v == a[0]) || b.iter().all(|&v| v == b[0]) || saa == 0.0 || sbb == 0.0 {
        return Correlation {
            value: 0.0,
            degenerate: true,
        };
    }
    Correlation {
        value: (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> Correlation {
    pearson(&average_ranks(a), &average_ranks(b))
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "rmse on sequences of different length");
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    #[serde(with = "serde_f64_inf")]
    pub plcc: f64,
    #[serde(with = "serde_f64_inf")]
    pub srocc: f64,
    #[serde(with = "serde_f64_inf")]
    pub rmse: f64,
    pub fit: FitKind,
    /// Logistic parameters in prediction units, when a fit was made.
    pub logistic_params: Option<[f64; 5]>,
    pub flags: Vec<String>,
}

/// Correlations of already-mapped predictions against MOS.
fn report_on(mapped: &[f64], raw: &[f64], mos: &[f64], fit: FitKind, params: Option<[f64; 5]>) -> EvalReport {
    let n = mos.len();
    let mut flags = Vec::new();
    if n < 3 {
        flags.push(format!("only {n} samples; correlations undefined"));
        return EvalReport {
            n,
            plcc: f64::NAN,
            srocc: f64::NAN,
            rmse: f64::NAN,
            fit,
            logistic_params: params,
            flags,
        };
    }
    let p = pearson(mapped, mos);
    let s = spearman(raw, mos);
    if p.degenerate || s.degenerate {
        flags.push("zero variance; correlation reported as 0".into());
    }
    match fit {
        FitKind::Raw => flags.push(format!("{n} samples is too few for the logistic fit; raw correlations")),
        FitKind::LinearFallback => flags.push("logistic fit failed; used linear mapping".into()),
        FitKind::Degenerate => flags.push("constant predictions".into()),
        FitKind::Logistic => {}
    }
    EvalReport {
        n,
        plcc: p.value,
        srocc: s.value,
        rmse: rmse(mapped, mos),
        fit,
        logistic_params: params,
        flags,
    }
}

/// Fits when possible and reports. Groups below 5 samples get raw
/// correlations and an affine map for RMSE.
pub fn evaluate(predictions: &[f64], mos: &[f64]) -> Result<EvalReport> {
    if predictions.len() != mos.len() {
        return Err(Error::domain("predictions and MOS differ in length"));
    }
    if predictions.len() >= 5 {
        let fit = logistic_fit(predictions, mos)?;
        let params = (fit.kind != FitKind::Degenerate).then_some(fit.params);
        return Ok(report_on(&fit.mapped, predictions, mos, fit.kind, params));
    }
    let mapped: Vec<f64> = if predictions.is_empty() {
        Vec::new()
    } else {
        let (a, b) = linear_fit(predictions, mos);
        predictions.iter().map(|x| a * x + b).collect()
    };
    let mut r = report_on(&mapped, predictions, mos, FitKind::Raw, None);
    if r.n >= 3 {
        r.plcc = pearson(predictions, mos).value;
    }
    Ok(r)
}

/// One objective score joined with its MOS row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub content: String,
    pub distortion: String,
    #[serde(with = "serde_f64_inf")]
    pub prediction: f64,
    pub mos: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitScope {
    /// One logistic over all samples; groups reuse its mapping.
    Global,
    /// Each group fits its own logistic.
    PerGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricEvaluation {
    pub scope: FitScope,
    pub overall: EvalReport,
    pub by_content: BTreeMap<String, EvalReport>,
    pub by_distortion: BTreeMap<String, EvalReport>,
}

/// Distortion family of a label: trailing level digits and separators dropped,
/// so `ot3`, `ot_3` and `OT-3` all group as `ot`.
pub fn distortion_family(label: &str) -> String {
    let trimmed = label.trim_end_matches(|c: char| c.is_ascii_digit() || c == '_' || c == '-' || c == '.');
    let base = if trimmed.is_empty() { label } else { trimmed };
    base.to_ascii_lowercase()
}

pub fn evaluate_samples(samples: &[Sample], scope: FitScope) -> Result<MetricEvaluation> {
    if samples.iter().any(|s| !s.prediction.is_finite()) {
        return Err(Error::domain(
            "non-finite predictions (e.g. infinite PSNR) cannot be correlated",
        ));
    }
    let pred: Vec<f64> = samples.iter().map(|s| s.prediction).collect();
    let mos: Vec<f64> = samples.iter().map(|s| s.mos).collect();
    let overall = evaluate(&pred, &mos)?;
    let global_map: Option<Vec<f64>> = match scope {
        FitScope::Global if pred.len() >= 5 => Some(logistic_fit(&pred, &mos)?.mapped),
        _ => None,
    };

    let group = |key: &dyn Fn(&Sample) -> String| -> Result<BTreeMap<String, EvalReport>> {
        let mut members: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            members.entry(key(s)).or_default().push(i);
        }
        members
            .into_iter()
            .map(|(k, idx)| {
                let p: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
                let m: Vec<f64> = idx.iter().map(|&i| mos[i]).collect();
                let report = match &global_map {
                    Some(mapped) => {
                        let g: Vec<f64> = idx.iter().map(|&i| mapped[i]).collect();
                        report_on(&g, &p, &m, overall.fit, overall.logistic_params)
                    }
                    None => evaluate(&p, &m)?,
                };
                Ok((k, report))
            })
            .collect()
    };
    Ok(MetricEvaluation {
        scope,
        by_content: group(&|s| s.content.clone())?,
        by_distortion: group(&|s| distortion_family(&s.distortion))?,
        overall,
    })
}

/// Plain-text table: one row per metric, PLCC/SROCC/RMSE per content
/// group and for all samples.
pub fn format_table(results: &[(String, MetricEvaluation)]) -> String {
    let mut groups: Vec<String> = Vec::new();
    for (_, r) in results {
        for k in r.by_content.keys() {
            if !groups.contains(k) {
                groups.push(k.clone());
            }
        }
    }
    let name_w = results.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(6);
    let cell = |v: f64| if v.is_nan() { format!("{:>7}", "-") } else { format!("{v:>7.4}") };
    let mut out = String::new();
    let mut header = format!("{:<name_w$}", "metric");
    let mut sub = format!("{:<name_w$}", "");
    for g in groups.iter().map(String::as_str).chain(["ALL"]) {
        let _ = write!(header, " | {g:<23}");
        let _ = write!(sub, " | {:>7} {:>7} {:>7}", "PLCC", "SROCC", "RMSE");
    }
    let _ = writeln!(out, "{header}");
    let _ = writeln!(out, "{sub}");
    for (name, r) in results {
        let mut line = format!("{name:<name_w$}");
        for g in &groups {
            match r.by_content.get(g) {
                Some(e) => {
                    let _ = write!(line, " | {} {} {}", cell(e.plcc), cell(e.srocc), cell(e.rmse));
                }
                None => {
                    let _ = write!(line, " | {:>7} {:>7} {:>7}", "-", "-", "-");
                }
            }
        }
        let o = &r.overall;
        let _ = write!(line, " | {} {} {}", cell(o.plcc), cell(o.srocc), cell(o.rmse));
        let _ = writeln!(out, "{}", line.trim_end());
    }
    out
}
