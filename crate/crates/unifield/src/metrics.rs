//! Evaluation metrics: MSE, MAE, and relative L2/L1 errors in percent.
//! Dataset-level numbers are unweighted means of per-sample metrics; relative
//! metrics are flagged undefined when the target norm is zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub mae: f64,
    /// 100 * ||pred - target||_2 / ||target||_2; None when the target norm
    /// is zero.
    pub rel_l2_percent: Option<f64>,
    /// 100 * ||pred - target||_1 / ||target||_1; None when the target norm
    /// is zero.
    pub rel_l1_percent: Option<f64>,
    pub sample_count: usize,
    /// Samples whose relative metrics were undefined and excluded from the
    /// aggregate means.
    pub rel_undefined: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_domain: BTreeMap<String, MetricsReport>,
}

/// Metrics over one prediction/target pair.
pub fn metrics(pred: &[f64], target: &[f64]) -> Result<MetricsReport> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape {
            op: "metrics",
            lhs: vec![pred.len()],
            rhs: vec![target.len()],
        });
    }
    let n = pred.len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut t2 = 0.0;
    let mut t1 = 0.0;
    for (&p, &t) in pred.iter().zip(target) {
        let e = p - t;
        se += e * e;
        ae += e.abs();
        t2 += t * t;
        t1 += t.abs();
    }
    let (rel_l2, rel_l1, undefined) = if t2 > 0.0 {
        (
            Some(100.0 * se.sqrt() / t2.sqrt()),
            Some(100.0 * ae / t1),
            0,
        )
    } else {
        (None, None, 1)
    };
    Ok(MetricsReport {
        mse: se / n,
        mae: ae / n,
        rel_l2_percent: rel_l2,
        rel_l1_percent: rel_l1,
        sample_count: 1,
        rel_undefined: undefined,
        per_domain: BTreeMap::new(),
    })
}

fn mean_of(reports: &[&MetricsReport], f: impl Fn(&MetricsReport) -> f64) -> f64 {
    reports.iter().map(|r| f(r)).sum::<f64>() / reports.len() as f64
}

fn mean_defined(reports: &[&MetricsReport], f: impl Fn(&MetricsReport) -> Option<f64>) -> Option<f64> {
    let defined: Vec<f64> = reports.iter().filter_map(|r| f(r)).collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Unweighted mean over per-sample reports, with a per-domain breakdown.
pub fn aggregate(samples: &[(String, MetricsReport)]) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::contract("cannot aggregate zero metric reports"));
    }
    let all: Vec<&MetricsReport> = samples.iter().map(|(_, r)| r).collect();
    let mut report = aggregate_flat(&all);

    let mut domains: BTreeMap<String, Vec<&MetricsReport>> = BTreeMap::new();
    for (name, r) in samples {
        domains.entry(name.clone()).or_default().push(r);
    }
    for (name, reports) in domains {
        report.per_domain.insert(name, aggregate_flat(&reports));
    }
    Ok(report)
}

fn aggregate_flat(reports: &[&MetricsReport]) -> MetricsReport {
    MetricsReport {
        mse: mean_of(reports, |r| r.mse),
        mae: mean_of(reports, |r| r.mae),
        rel_l2_percent: mean_defined(reports, |r| r.rel_l2_percent),
        rel_l1_percent: mean_defined(reports, |r| r.rel_l1_percent),
        sample_count: reports.iter().map(|r| r.sample_count).sum(),
        rel_undefined: reports.iter().map(|r| r.rel_undefined).sum(),
        per_domain: BTreeMap::new(),
    }
}
