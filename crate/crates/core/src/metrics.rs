//! Confusion matrix, per-stage F1, macro F1 and accuracy, plus a paired
//! with/without-encoder table renderer.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::stage::SleepStage;

const K: usize = SleepStage::COUNT;

/// Rows are true stages, columns predicted stages.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..K).map(|i| self.counts[i][i]).sum()
    }

    pub fn add(&mut self, truth: SleepStage, pred: SleepStage) {
        self.counts[truth.index()][pred.index()] += 1;
    }
}

pub fn confusion(truth: &[SleepStage], pred: &[SleepStage]) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty);
    }
    let mut m = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(pred) {
        m.add(t, p);
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// Unweighted mean of the five per-stage F1 scores.
    pub overall_f1: f64,
    pub accuracy: f64,
    pub per_stage_f1: [f64; K],
    /// Stages absent from both truth and predictions; their F1 is reported as 0.
    pub degenerate: [bool; K],
    pub n_epochs: u64,
}

impl MetricsReport {
    pub fn f1(&self, stage: SleepStage) -> f64 {
        self.per_stage_f1[stage.index()]
    }

    /// Overall F1, accuracy, then W/N1/N2/N3/REM F1.
    pub fn columns(&self) -> [f64; K + 2] {
        let mut out = [0.0; K + 2];
        out[0] = self.overall_f1;
        out[1] = self.accuracy;
        out[2..].copy_from_slice(&self.per_stage_f1);
        out
    }

    /// One `prefix.metric = value` line per metric, values at full precision.
    pub fn to_key_values(&self, prefix: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{prefix}.n_epochs = {}", self.n_epochs);
        let _ = writeln!(s, "{prefix}.overall_f1 = {}", self.overall_f1);
        let _ = writeln!(s, "{prefix}.accuracy = {}", self.accuracy);
        for st in SleepStage::ALL {
            let _ = writeln!(s, "{prefix}.f1.{} = {}", st.name(), self.f1(st));
        }
        for st in SleepStage::ALL.into_iter().filter(|st| self.degenerate[st.index()]) {
            let _ = writeln!(s, "{prefix}.degenerate.{} = true", st.name());
        }
        s
    }

    /// Inverse of [`Self::to_key_values`] for lines under `prefix`.
    pub fn from_key_values(text: &str, prefix: &str) -> Option<Self> {
        let mut report = MetricsReport {
            overall_f1: f64::NAN,
            accuracy: f64::NAN,
            per_stage_f1: [f64::NAN; K],
            degenerate: [false; K],
            n_epochs: 0,
        };
        let mut seen_n = false;
        for line in text.lines() {
            let Some((key, value)) = line.split_once('=') else {
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            let Some(rest) = key.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')) else {
                continue;
            };
            match rest {
                "n_epochs" => {
                    report.n_epochs = value.parse().ok()?;
                    seen_n = true;
                }
                "overall_f1" => report.overall_f1 = value.parse().ok()?,
                "accuracy" => report.accuracy = value.parse().ok()?,
                other => {
                    if let Some(st) = other.strip_prefix("f1.") {
                        let st: SleepStage = st.parse().ok()?;
                        report.per_stage_f1[st.index()] = value.parse().ok()?;
                    } else if let Some(st) = other.strip_prefix("degenerate.") {
                        let st: SleepStage = st.parse().ok()?;
                        report.degenerate[st.index()] = value == "true";
                    }
                }
            }
        }
        let complete = seen_n && report.columns().iter().all(|v| !v.is_nan());
        complete.then_some(report)
    }
}

fn f1_score(tp: u64, fp: u64, fn_: u64) -> f64 {
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn metrics_from_confusion(m: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = m.total();
    if total == 0 {
        return Err(Error::Empty);
    }
    let mut per_stage_f1 = [0.0; K];
    let mut degenerate = [false; K];
    for k in 0..K {
        let tp = m.counts[k][k];
        let support: u64 = m.counts[k].iter().sum();
        let predicted: u64 = (0..K).map(|i| m.counts[i][k]).sum();
        per_stage_f1[k] = f1_score(tp, predicted - tp, support - tp);
        degenerate[k] = support == 0 && predicted == 0;
    }
    Ok(MetricsReport {
        overall_f1: per_stage_f1.iter().sum::<f64>() / K as f64,
        accuracy: m.trace() as f64 / total as f64,
        per_stage_f1,
        degenerate,
        n_epochs: total,
    })
}

pub fn evaluate(truth: &[SleepStage], pred: &[SleepStage]) -> Result<MetricsReport> {
    metrics_from_confusion(&confusion(truth, pred)?)
}

/// Element-wise mean of several reports (e.g. across seeds).
pub fn mean_report(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let n = reports.len();
    if n == 0 {
        return Err(Error::Empty);
    }
    let mut cols = [0.0; K + 2];
    let mut degenerate = [false; K];
    for r in reports {
        for (c, v) in cols.iter_mut().zip(r.columns()) {
            *c += v / n as f64;
        }
        for (d, &rd) in degenerate.iter_mut().zip(&r.degenerate) {
            *d |= rd;
        }
    }
    let mut per_stage_f1 = [0.0; K];
    per_stage_f1.copy_from_slice(&cols[2..]);
    Ok(MetricsReport {
        overall_f1: cols[0],
        accuracy: cols[1],
        per_stage_f1,
        degenerate,
        n_epochs: reports.iter().map(|r| r.n_epochs).sum(),
    })
}

/// One row of a comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub hass: bool,
    pub report: MetricsReport,
}

const HEADER_COLS: [&str; K + 2] = ["F1", "Acc", "W", "N1", "N2", "N3", "REM"];

fn yes_no(flag: bool) -> &'static str {
    if flag {
        "Yes"
    } else {
        "No"
    }
}

/// Fixed-width table grouped by model, `Yes` row before `No` row, three decimals.
pub fn render_report(rows: &[ReportRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.model.len())
        .max()
        .unwrap_or(0)
        .max("Network".len())
        + 2;
    let mut out = String::new();
    let _ = write!(out, "{:<width$}{:<6}", "Network", "HASS");
    let header: Vec<String> = HEADER_COLS.iter().map(|h| format!("{h:<5}")).collect();
    let _ = writeln!(out, "{}", header.join("  ").trim_end());

    let mut models: Vec<&str> = Vec::new();
    for r in rows {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let mut notes = Vec::new();
    for model in models {
        let mut group: Vec<&ReportRow> = rows.iter().filter(|r| r.model == model).collect();
        group.sort_by_key(|r| !r.hass);
        for (i, r) in group.iter().enumerate() {
            let name = if i == 0 { model } else { "" };
            let cells: Vec<String> = r.report.columns().iter().map(|v| format!("{v:.3}")).collect();
            let _ = writeln!(out, "{name:<width$}{:<6}{}", yes_no(r.hass), cells.join("  "));
            for st in SleepStage::ALL.into_iter().filter(|st| r.report.degenerate[st.index()]) {
                notes.push(format!(
                    "* {model} ({}): {} absent from truth and predictions; F1 reported as 0",
                    yes_no(r.hass),
                    st.name()
                ));
            }
        }
    }
    for n in notes {
        let _ = writeln!(out, "{n}");
    }
    out
}

/// Parses the rows of [`render_report`] output back into `(model, hass, columns)`.
pub fn parse_report_table(text: &str) -> Option<Vec<(String, bool, [f64; K + 2])>> {
    let mut rows = Vec::new();
    let mut current: Option<String> = None;
    for line in text.lines().skip(1) {
        if line.starts_with('*') || line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let (model, rest) = match tokens.first() {
            Some(&"Yes") | Some(&"No") if line.starts_with(' ') => (current.clone()?, &tokens[..]),
            Some(name) => (String::from(*name), &tokens[1..]),
            None => continue,
        };
        if rest.len() != K + 3 {
            return None;
        }
        let hass = match rest[0] {
            "Yes" => true,
            "No" => false,
            _ => return None,
        };
        let mut cols = [0.0; K + 2];
        for (c, tok) in cols.iter_mut().zip(&rest[1..]) {
            *c = tok.parse().ok()?;
        }
        current = Some(model.clone());
        rows.push((model, hass, cols));
    }
    Some(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use SleepStage::*;

    #[test]
    fn confusion_counts() {
        let m = confusion(&[W, N1, N1], &[W, N1, W]).unwrap();
        assert_eq!(m.counts[0][0], 1);
        assert_eq!(m.counts[1][1], 1);
        assert_eq!(m.counts[1][0], 1);
        assert_eq!(m.total(), 3);

        let perfect = confusion(&[W, N2, Rem], &[W, N2, Rem]).unwrap();
        for i in 0..K {
            for j in 0..K {
                if i != j {
                    assert_eq!(perfect.counts[i][j], 0);
                }
            }
        }
        let all_w = confusion(&[N1, N2, N3], &[W, W, W]).unwrap();
        assert_eq!((0..K).map(|i| all_w.counts[i][0]).sum::<u64>(), 3);

        assert!(confusion(&[W], &[]).is_err());
        assert_eq!(confusion(&[], &[]), Err(Error::Empty));
    }

    #[test]
    fn hand_metrics() {
        let r = evaluate(&[W, N1, N1], &[W, N1, W]).unwrap();
        let two_thirds = 2.0 / 3.0;
        assert!((r.accuracy - two_thirds).abs() < 1e-15);
        assert!((r.f1(W) - two_thirds).abs() < 1e-15);
        assert!((r.f1(N1) - two_thirds).abs() < 1e-15);
        assert_eq!(r.f1(N2), 0.0);
        assert!(r.degenerate[N2.index()] && r.degenerate[N3.index()] && r.degenerate[Rem.index()]);
        assert!((r.overall_f1 - 2.0 * two_thirds / 5.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_scores_one() {
        let truth = [W, N1, N2, N3, Rem, Rem];
        let r = evaluate(&truth, &truth).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.per_stage_f1.iter().all(|&f| f == 1.0));
        assert_eq!(r.overall_f1, 1.0);
    }

    fn sample_report() -> MetricsReport {
        MetricsReport {
            overall_f1: 0.811,
            accuracy: 0.881,
            per_stage_f1: [0.885, 0.565, 0.892, 0.847, 0.921],
            degenerate: [false; K],
            n_epochs: 100,
        }
    }

    #[test]
    fn render_layout() {
        let rows = vec![
            ReportRow {
                model: String::from("TSN"),
                hass: false,
                report: MetricsReport {
                    overall_f1: 0.798,
                    accuracy: 0.858,
                    per_stage_f1: [0.873, 0.547, 0.888, 0.848, 0.889],
                    degenerate: [false; K],
                    n_epochs: 100,
                },
            },
            ReportRow {
                model: String::from("TSN"),
                hass: true,
                report: sample_report(),
            },
        ];
        let text = render_report(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("Network"));
        assert!(lines[1].starts_with("TSN"));
        assert!(lines[1].contains("Yes   0.811  0.881  0.885  0.565  0.892  0.847  0.921"));
        assert!(lines[2].trim_start().starts_with("No    0.798  0.858"));
        let parsed = parse_report_table(&text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].0, "TSN");
        assert!(parsed[0].1);
        assert_eq!(parsed[1].0, "TSN");
        assert_eq!(parsed[0].2, sample_report().columns());
    }

    #[test]
    fn render_empty_is_header_only() {
        let text = render_report(&[]);
        assert_eq!(text.lines().count(), 1);
        assert!(text.contains("F1") && text.contains("REM"));
    }

    #[test]
    fn three_decimals() {
        let mut r = sample_report();
        r.overall_f1 = 0.5;
        let text = render_report(&[ReportRow {
            model: String::from("m"),
            hass: true,
            report: r,
        }]);
        assert!(text.contains("0.500"));
    }

    #[test]
    fn degenerate_stage_gets_footnote() {
        let r = evaluate(&[W, N1], &[W, N1]).unwrap();
        let text = render_report(&[ReportRow {
            model: String::from("m"),
            hass: false,
            report: r,
        }]);
        assert!(text.contains("* m (No): N2 absent"));
        assert_eq!(parse_report_table(&text).unwrap().len(), 1);
    }

    #[test]
    fn key_values_round_trip() {
        let r = evaluate(&[W, N1, N1, Rem], &[W, N1, W, Rem]).unwrap();
        let text = r.to_key_values("eval");
        assert_eq!(MetricsReport::from_key_values(&text, "eval").unwrap(), r);
        assert!(MetricsReport::from_key_values(&text, "other").is_none());
    }
}
