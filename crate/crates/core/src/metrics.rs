//! Point-level IoU/mIoU, per-object segmentation accuracy and the adjusted
//! Rand index.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::cluster::Instance;
use crate::error::{arg_err, Error, Result};

/// Row = ground truth class, column = predicted class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_labels(num_classes: usize, gt: &[usize], pred: &[usize]) -> Result<Self> {
        let mut m = ConfusionMatrix::new(num_classes);
        m.add(gt, pred)?;
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn add(&mut self, gt: &[usize], pred: &[usize]) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(arg_err!("{} ground truth labels, {} predictions", gt.len(), pred.len()));
        }
        let c = self.num_classes;
        if let Some(&bad) = gt.iter().chain(pred).find(|&&l| l >= c) {
            return Err(arg_err!("label {bad} outside {c} classes"));
        }
        for (&g, &p) in gt.iter().zip(pred) {
            self.counts[g * c + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(arg_err!(
                "cannot merge {}-class and {}-class matrices",
                self.num_classes,
                other.num_classes
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.get(class, class)
    }

    pub fn false_positives(&self, class: usize) -> u64 {
        (0..self.num_classes).map(|g| self.get(g, class)).sum::<u64>() - self.get(class, class)
    }

    pub fn false_negatives(&self, class: usize) -> u64 {
        (0..self.num_classes).map(|p| self.get(class, p)).sum::<u64>() - self.get(class, class)
    }

    /// TP/(TP+FP+FN), or `None` when the class appears in neither ground
    /// truth nor predictions.
    pub fn iou(&self, class: usize) -> Result<Option<f64>> {
        if class >= self.num_classes {
            return Err(arg_err!("class {class} outside {} classes", self.num_classes));
        }
        let tp = self.true_positives(class);
        let denom = tp + self.false_positives(class) + self.false_negatives(class);
        Ok((denom > 0).then(|| tp as f64 / denom as f64))
    }

    /// Unweighted mean IoU over present classes.
    pub fn miou(&self) -> Result<f64> {
        let ious: Vec<f64> = (0..self.num_classes)
            .filter_map(|c| self.iou(c).expect("in range"))
            .collect();
        if ious.is_empty() {
            return Err(Error::UndefinedMetric("mIoU with every class absent".into()));
        }
        Ok(ious.iter().sum::<f64>() / ious.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassAccuracy {
    pub class_id: usize,
    pub correct: usize,
    pub total: usize,
}

impl ClassAccuracy {
    /// `None` for classes without objects.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccSegReport {
    pub threshold: f64,
    pub classes: Vec<ClassAccuracy>,
}

impl AccSegReport {
    /// Mean over classes that have at least one object.
    pub fn mean(&self) -> Option<f64> {
        let accs: Vec<f64> = self.classes.iter().filter_map(|c| c.accuracy()).collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }
}

/// An object of class c with m points counts as correct when at least
/// `t·m` of its points are predicted as c.
pub fn acc_seg(pred: &[usize], instances: &[Instance], num_classes: usize, t: f64) -> Result<AccSegReport> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(arg_err!("threshold must lie in (0, 1], got {t}"));
    }
    let mut classes: Vec<ClassAccuracy> = (0..num_classes)
        .map(|c| ClassAccuracy {
            class_id: c,
            correct: 0,
            total: 0,
        })
        .collect();
    for inst in instances {
        let c = inst.class_id as usize;
        if c >= num_classes {
            return Err(arg_err!("instance class {c} outside {num_classes} classes"));
        }
        if inst.points.is_empty() {
            continue;
        }
        let mut hits = 0usize;
        for &p in &inst.points {
            match pred.get(p) {
                Some(&l) => hits += usize::from(l == c),
                None => return Err(arg_err!("instance point {p} outside {} predictions", pred.len())),
            }
        }
        classes[c].total += 1;
        if hits as f64 >= t * inst.points.len() as f64 {
            classes[c].correct += 1;
        }
    }
    Ok(AccSegReport { threshold: t, classes })
}

/// Adjusted Rand index between two labelings. Points with a negative label
/// in either labeling are ignored. Returns 1.0 when both partitions are
/// trivially identical (fewer than two points, or both all-together or both
/// all-singleton).
pub fn adjusted_rand_index(a: &[i64], b: &[i64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(arg_err!("labelings have lengths {} and {}", a.len(), b.len()));
    }
    let mut joint: HashMap<(i64, i64), u64> = HashMap::new();
    let mut rows: HashMap<i64, u64> = HashMap::new();
    let mut cols: HashMap<i64, u64> = HashMap::new();
    let mut n = 0u64;
    for (&x, &y) in a.iter().zip(b) {
        if x < 0 || y < 0 {
            continue;
        }
        *joint.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
        n += 1;
    }
    let pairs = |k: u64| (k * k.saturating_sub(1) / 2) as f64;
    let index: f64 = joint.values().map(|&k| pairs(k)).sum();
    let sum_a: f64 = rows.values().map(|&k| pairs(k)).sum();
    let sum_b: f64 = cols.values().map(|&k| pairs(k)).sum();
    let total = pairs(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Per-class evaluation results for one split.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub confusion: ConfusionMatrix,
    /// Label of the instance source ("gt" or "clustered") and the reports at
    /// each threshold.
    pub acc_seg: Vec<(String, AccSegReport)>,
    pub ari: Option<f64>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"))
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut header = "class_id,class_name,iou".to_string();
        for (src, r) in &self.acc_seg {
            write!(header, ",acc_seg_{src}_t{}", r.threshold).unwrap();
        }
        let mut out = header + "\n";
        for c in 0..self.confusion.num_classes() {
            let name = self.class_names.get(c).map_or("", String::as_str);
            write!(out, "{c},{name},{}", fmt_opt(self.confusion.iou(c).expect("in range"))).unwrap();
            for (_, r) in &self.acc_seg {
                write!(out, ",{}", fmt_opt(r.classes[c].accuracy())).unwrap();
            }
            out.push('\n');
        }
        write!(out, "mean,,{}", fmt_opt(self.confusion.miou().ok())).unwrap();
        for (_, r) in &self.acc_seg {
            write!(out, ",{}", fmt_opt(r.mean())).unwrap();
        }
        out.push('\n');
        if let Some(ari) = self.ari {
            writeln!(out, "ari,,{ari:.6}").unwrap();
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        write!(out, "{:<12} {:>8}", "class", "IoU").unwrap();
        for (src, r) in &self.acc_seg {
            write!(out, " {:>14}", format!("Acc{}@{}", src_tag(src), r.threshold)).unwrap();
        }
        out.push('\n');
        for c in 0..self.confusion.num_classes() {
            let name = self.class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
            write!(out, "{:<12} {:>8}", name, fmt_opt(self.confusion.iou(c).expect("in range"))).unwrap();
            for (_, r) in &self.acc_seg {
                write!(out, " {:>14}", fmt_opt(r.classes[c].accuracy())).unwrap();
            }
            out.push('\n');
        }
        write!(out, "{:<12} {:>8}", "mean", fmt_opt(self.confusion.miou().ok())).unwrap();
        for (_, r) in &self.acc_seg {
            write!(out, " {:>14}", fmt_opt(r.mean())).unwrap();
        }
        out.push('\n');
        if let Some(ari) = self.ari {
            writeln!(out, "clustering ARI vs ground truth: {ari:.6}").unwrap();
        }
        out
    }
}

fn src_tag(src: &str) -> &str {
    match src {
        "gt" => "(gt)",
        "clustered" => "(cl)",
        other => other,
    }
}
