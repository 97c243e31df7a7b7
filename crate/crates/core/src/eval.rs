//! Support-weighted classification metrics, confusion matrices and the
//! JSON / CSV report formats.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::TaskType;
use crate::error::{Error, Result};
use crate::numeric::{Real, Tensor};

pub const SINGLE_LABEL_WACC: &str =
    "support-weighted recall: sum_c (support_c / N) * recall_c, equal to overall accuracy";
pub const MULTI_LABEL_WACC: &str = "per class (TP * N/P + TN) / (2N) over positives P and negatives N, \
     averaged over classes weighted by P; a class without positives uses TN/N";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub weighted_accuracy: f64,
    pub weighted_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighted_accuracy: Option<f64>,
}

/// Single-label `n × n` counts (row = true class, column = prediction) or,
/// for multi-label tasks, one `[[TN, FP], [FN, TP]]` matrix per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Confusion {
    Matrix(Vec<Vec<u64>>),
    PerClass(Vec<[[u64; 2]; 2]>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task_type: TaskType,
    pub n_samples: u64,
    pub metrics: Metrics,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Confusion,
    pub definitions: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn scale(m: &mut Metrics, total: f64) {
    if total > 0.0 {
        m.weighted_accuracy /= total;
        m.weighted_f1 /= total;
        m.weighted_precision /= total;
        m.weighted_recall /= total;
    }
}

fn default_names(n: usize) -> Vec<String> {
    (0..n).map(|c| format!("class_{c}")).collect()
}

/// Counts of true class `i` predicted as `j`.
pub fn confusion_matrix(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<Vec<Vec<u64>>> {
    if preds.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &t) in preds.iter().zip(labels) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::contract(format!(
                "class index ({t}, {p}) out of range for {n_classes} classes"
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

pub fn weighted_metrics_single(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<MetricsReport> {
    weighted_metrics_single_named(preds, labels, &default_names(n_classes))
}

pub fn weighted_metrics_single_named(
    preds: &[usize],
    labels: &[usize],
    class_names: &[String],
) -> Result<MetricsReport> {
    let n_classes = class_names.len();
    let cm = confusion_matrix(preds, labels, n_classes)?;
    let total = labels.len() as u64;
    let mut per_class = Vec::with_capacity(n_classes);
    let mut agg = Metrics::default();
    for c in 0..n_classes {
        let tp = cm[c][c];
        let support: u64 = cm[c].iter().sum();
        let predicted: u64 = cm.iter().map(|row| row[c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f = f1(precision, recall);
        let w = support as f64;
        agg.weighted_precision += w * precision;
        agg.weighted_recall += w * recall;
        agg.weighted_f1 += w * f;
        per_class.push(ClassMetrics {
            class: class_names[c].clone(),
            support,
            precision,
            recall,
            f1: f,
            weighted_accuracy: None,
        });
    }
    scale(&mut agg, total as f64);
    agg.weighted_accuracy = agg.weighted_recall;
    Ok(MetricsReport {
        task_type: TaskType::SingleLabel,
        n_samples: total,
        metrics: agg,
        per_class,
        confusion: Confusion::Matrix(cm),
        definitions: BTreeMap::from([("wacc".to_string(), SINGLE_LABEL_WACC.to_string())]),
        flags: Vec::new(),
    })
}

/// Multi-label metrics with the strict rule `score > threshold`.
pub fn weighted_metrics_multilabel<T: Real>(
    scores: &Tensor<T>,
    labels: &Tensor<T>,
    threshold: f64,
) -> Result<MetricsReport> {
    weighted_metrics_multilabel_named(scores, labels, threshold, &default_names(scores.cols()))
}

pub fn weighted_metrics_multilabel_named<T: Real>(
    scores: &Tensor<T>,
    labels: &Tensor<T>,
    threshold: f64,
    class_names: &[String],
) -> Result<MetricsReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::config("threshold", format!("{threshold} is outside (0, 1)")));
    }
    let (n, c) = scores.require_matrix("scores")?;
    if labels.shape() != scores.shape() {
        return Err(Error::dim(format!(
            "scores {:?} vs labels {:?}",
            scores.shape(),
            labels.shape()
        )));
    }
    if class_names.len() != c {
        return Err(Error::dim(format!("{} class names for {c} classes", class_names.len())));
    }
    let mut per_class = Vec::with_capacity(c);
    let mut confusion = Vec::with_capacity(c);
    let mut flags = Vec::new();
    let mut agg = Metrics::default();
    let total_pos: u64 = labels.data().iter().filter(|&&y| y.as_f64() > 0.5).count() as u64;
    for (j, name) in class_names.iter().enumerate() {
        let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..n {
            let pred = scores.at(i, j).as_f64() > threshold;
            let truth = labels.at(i, j).as_f64() > 0.5;
            match (truth, pred) {
                (true, true) => tp += 1,
                (true, false) => fn_ += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
            }
        }
        let pos = tp + fn_;
        let neg = tn + fp;
        let wa = if pos == 0 {
            flags.push(format!("class `{}` has no positives; WA uses TN/N only", name));
            ratio(tn, neg)
        } else if neg == 0 {
            flags.push(format!("class `{}` has no negatives; WA uses TP/P only", name));
            ratio(tp, pos)
        } else {
            (tp as f64 * (neg as f64 / pos as f64) + tn as f64) / (2.0 * neg as f64)
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, pos);
        let f = f1(precision, recall);
        let w = pos as f64;
        agg.weighted_accuracy += w * wa;
        agg.weighted_precision += w * precision;
        agg.weighted_recall += w * recall;
        agg.weighted_f1 += w * f;
        per_class.push(ClassMetrics {
            class: name.clone(),
            support: pos,
            precision,
            recall,
            f1: f,
            weighted_accuracy: Some(wa),
        });
        confusion.push([[tn, fp], [fn_, tp]]);
    }
    scale(&mut agg, total_pos as f64);
    Ok(MetricsReport {
        task_type: TaskType::MultiLabel,
        n_samples: n as u64,
        metrics: agg,
        per_class,
        confusion: Confusion::PerClass(confusion),
        definitions: BTreeMap::from([("wacc".to_string(), MULTI_LABEL_WACC.to_string())]),
        flags,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl MetricsReport {
    /// Replaces the per-class labels, e.g. with a manifest's class names.
    pub fn with_class_names(mut self, names: &[String]) -> Result<Self> {
        if names.len() != self.per_class.len() {
            return Err(Error::dim(format!(
                "{} class names for {} classes",
                names.len(),
                self.per_class.len()
            )));
        }
        for (c, n) in self.per_class.iter_mut().zip(names) {
            c.class = n.clone();
        }
        Ok(self)
    }

    pub fn class_names(&self) -> Vec<String> {
        self.per_class.iter().map(|c| c.class.clone()).collect()
    }

    /// Single-label: header row of class names then one row per true class.
    /// Multi-label: one `class,tn,fp,fn,tp` row per class.
    pub fn confusion_csv(&self) -> String {
        let names = self.class_names();
        let mut out = String::new();
        match &self.confusion {
            Confusion::Matrix(m) => {
                out.push_str("true\\pred");
                for n in &names {
                    let _ = write!(out, ",{}", csv_field(n));
                }
                out.push('\n');
                for (name, row) in names.iter().zip(m) {
                    out.push_str(&csv_field(name));
                    for v in row {
                        let _ = write!(out, ",{v}");
                    }
                    out.push('\n');
                }
            }
            Confusion::PerClass(ms) => {
                out.push_str("class,tn,fp,fn,tp\n");
                for (name, [[tn, fp], [fn_, tp]]) in names.iter().zip(ms) {
                    let _ = writeln!(out, "{},{tn},{fp},{fn_},{tp}", csv_field(name));
                }
            }
        }
        out
    }

    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("class,support,precision,recall,f1,weighted_accuracy\n");
        for c in &self.per_class {
            let wa = c.weighted_accuracy.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{wa}",
                csv_field(&c.class),
                c.support,
                c.precision,
                c.recall,
                c.f1
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expand(cm: &[[usize; 3]; 3]) -> (Vec<usize>, Vec<usize>) {
        let (mut p, mut l) = (Vec::new(), Vec::new());
        for (t, row) in cm.iter().enumerate() {
            for (j, &count) in row.iter().enumerate() {
                for _ in 0..count {
                    l.push(t);
                    p.push(j);
                }
            }
        }
        (p, l)
    }

    #[test]
    fn perfect_predictions() {
        let l = vec![0, 1, 2, 2, 1, 0, 0];
        let r = weighted_metrics_single(&l, &l, 3).unwrap();
        assert_eq!(r.metrics.weighted_accuracy, 1.0);
        assert_eq!(r.metrics.weighted_f1, 1.0);
        assert_eq!(r.metrics.weighted_precision, 1.0);
        assert_eq!(r.metrics.weighted_recall, 1.0);
        assert_eq!(
            r.confusion,
            Confusion::Matrix(vec![vec![3, 0, 0], vec![0, 2, 0], vec![0, 0, 2]])
        );
    }

    #[test]
    fn all_wrong_predictions() {
        let l = vec![0, 1, 2, 0];
        let p = vec![1, 2, 0, 2];
        assert_eq!(weighted_metrics_single(&p, &l, 3).unwrap().metrics.weighted_accuracy, 0.0);
    }

    #[test]
    fn hand_confusion_matrix_oracle() {
        let (p, l) = expand(&[[2, 1, 0], [0, 3, 0], [1, 0, 3]]);
        let r = weighted_metrics_single(&p, &l, 3).unwrap();
        // supports 3, 3, 4 of N = 10
        // precision: 2/3, 3/4, 3/3; recall: 2/3, 3/3, 3/4
        let prec = [2.0 / 3.0, 0.75, 1.0];
        let rec = [2.0 / 3.0, 1.0, 0.75];
        let w = [0.3, 0.3, 0.4];
        let f: Vec<f64> = (0..3).map(|c| 2.0 * prec[c] * rec[c] / (prec[c] + rec[c])).collect();
        let wp: f64 = (0..3).map(|c| w[c] * prec[c]).sum();
        let wr: f64 = (0..3).map(|c| w[c] * rec[c]).sum();
        let wf: f64 = (0..3).map(|c| w[c] * f[c]).sum();
        assert!((r.metrics.weighted_precision - wp).abs() < 1e-12);
        assert!((r.metrics.weighted_recall - wr).abs() < 1e-12);
        assert!((r.metrics.weighted_f1 - wf).abs() < 1e-12);
        assert!((r.metrics.weighted_accuracy - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_support_class_contributes_nothing() {
        let r = weighted_metrics_single(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(r.per_class[2].support, 0);
        assert_eq!(r.metrics.weighted_f1, 1.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(weighted_metrics_single(&[0, 1], &[0], 2).is_err());
    }

    #[test]
    fn confusion_single_off_diagonal() {
        let m = confusion_matrix(&[2], &[1], 3).unwrap();
        assert_eq!(m[1][2], 1);
        assert_eq!(m.iter().flatten().sum::<u64>(), 1);
    }

    fn t(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn multilabel_perfect_and_all_negative() {
        let y = t(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![0.0, 0.0]]);
        let r = weighted_metrics_multilabel(&y.map(|v| if v > 0.5 { 0.9 } else { 0.1 }), &y, 0.5).unwrap();
        for c in &r.per_class {
            assert_eq!(c.weighted_accuracy, Some(1.0));
        }
        let r = weighted_metrics_multilabel(&y.map(|_| 0.0), &y, 0.5).unwrap();
        for c in &r.per_class {
            assert_eq!(c.weighted_accuracy, Some(0.5));
        }
    }

    #[test]
    fn multilabel_threshold_is_strict() {
        let y = t(&[vec![1.0], vec![0.0]]);
        let s = t(&[vec![0.5], vec![0.5]]);
        let r = weighted_metrics_multilabel(&s, &y, 0.5).unwrap();
        assert_eq!(r.confusion, Confusion::PerClass(vec![[[1, 0], [1, 0]]]));
    }

    #[test]
    fn multilabel_class_without_positives_is_flagged() {
        let y = t(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        let s = t(&[vec![0.9, 0.9], vec![0.1, 0.1]]);
        let r = weighted_metrics_multilabel(&s, &y, 0.5).unwrap();
        assert_eq!(r.per_class[1].weighted_accuracy, Some(0.5));
        assert_eq!(r.flags.len(), 1);
        assert!(weighted_metrics_multilabel(&s, &y, 1.0).is_err());
    }

    #[test]
    fn csv_shapes() {
        let r = weighted_metrics_single(&[0, 1, 2], &[0, 2, 2], 3).unwrap();
        let csv = r.confusion_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "true\\pred,class_0,class_1,class_2");
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 4));
        assert_eq!(r.per_class_csv().lines().count(), 4);
    }

    #[test]
    fn report_json_round_trip() {
        let r = weighted_metrics_single(&[0, 1, 1], &[0, 1, 0], 2).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        for key in ["task_type", "metrics", "per_class", "confusion", "definitions"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(v["definitions"]["wacc"].is_string());
        assert_eq!(serde_json::from_str::<MetricsReport>(&s).unwrap(), r);

        let y = t(&[vec![1.0, 0.0]]);
        let m = weighted_metrics_multilabel(&y, &y, 0.5).unwrap();
        let back: MetricsReport = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
