use std::cmp::Ordering;
use std::io::Write;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Area under the ROC curve in percent, as the Mann-Whitney statistic
/// `(concordant + ties / 2) / (P * N) * 100`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels(format!(
            "{pos} positives and {neg} negatives"
        )));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    // Walk tie groups in ascending score order. Every positive beats all
    // negatives in earlier groups and ties with negatives in its own group.
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let p = idx[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        let n = (j - i) as u128 - p;
        twice_u += p * (2 * neg_below + n);
        neg_below += n;
        i = j;
    }
    Ok(twice_u as f64 / 2.0 / (pos as f64 * neg as f64) * 100.0)
}

/// Per-class AUC of `N x K` probabilities; `None` where a class has only
/// one label value.
pub fn per_class_auc(probs: &Tensor, labels: &Tensor) -> Result<Vec<Option<f64>>> {
    let (n, k) = probs.dims2()?;
    if labels.shape() != probs.shape() {
        return shape_err(
            "auc",
            format!("probs {:?}, labels {:?}", probs.shape(), labels.shape()),
        );
    }
    (0..k)
        .map(|c| {
            let s: Vec<f64> = (0..n).map(|i| probs.data()[i * k + c]).collect();
            let l: Vec<bool> = (0..n).map(|i| labels.data()[i * k + c] == 1.0).collect();
            match auc(&s, &l) {
                Ok(a) => Ok(Some(a)),
                Err(Error::DegenerateLabels(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Mean over the classes whose AUC is defined, `None` if there are none.
pub fn mean_auc(probs: &Tensor, labels: &Tensor) -> Result<Option<f64>> {
    let per = per_class_auc(probs, labels)?;
    let defined: Vec<f64> = per.into_iter().flatten().collect();
    Ok((!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64))
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub condition: String,
    pub class: String,
    pub auc_percent: f64,
}

/// AUC rows keyed by condition and class. Each condition ends with a
/// `mean` row over its classes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricRow>,
}

pub const MEAN_ROW: &str = "mean";

impl MetricsTable {
    /// Append one condition: a row per class plus the mean row.
    pub fn push_condition(&mut self, condition: &str, classes: &[String], aucs: &[f64], mean: f64) {
        for (c, a) in classes.iter().zip(aucs) {
            self.rows.push(MetricRow {
                condition: condition.to_string(),
                class: c.clone(),
                auc_percent: *a,
            });
        }
        self.rows.push(MetricRow {
            condition: condition.to_string(),
            class: MEAN_ROW.to_string(),
            auc_percent: mean,
        });
    }

    pub fn conditions(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.condition.as_str()) {
                out.push(&r.condition);
            }
        }
        out
    }

    pub fn get(&self, condition: &str, class: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.condition == condition && r.class == class)
            .map(|r| r.auc_percent)
    }

    pub fn mean_of(&self, condition: &str) -> Option<f64> {
        self.get(condition, MEAN_ROW)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "condition,class,auc_percent")?;
        for r in &self.rows {
            writeln!(w, "{},{},{:.6}", r.condition, r.class, r.auc_percent)?;
        }
        Ok(())
    }
}
