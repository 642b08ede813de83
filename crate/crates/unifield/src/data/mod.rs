//! Domain registry, samples, dataset manifests, pressure standardization,
//! synthetic analytic-flow generators, and the mixed-domain batcher.

pub mod batcher;
pub mod io;
pub mod synthetic;

pub use batcher::MixedBatcher;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointSet;

/// One flow-condition component: a name and its native unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub unit: String,
}

/// How raw pressure maps to the training target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum PressureMode {
    /// Values are already pressure coefficients.
    Passthrough,
    /// Standardize raw pressure as (p - mean) / std.
    Affine { mean: f64, std: f64 },
}

/// Registry entry for one flow domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    /// 1-based id, dense within a registry.
    pub id: usize,
    pub name: String,
    pub conditions: Vec<Condition>,
    /// Per-component standardization constants for the flow vector, fitted
    /// on the training split. Identity until fitted.
    pub flow_mean: Vec<f64>,
    pub flow_std: Vec<f64>,
    pub pressure: PressureMode,
}

impl DomainSpec {
    pub fn new(id: usize, name: impl Into<String>, conditions: Vec<Condition>) -> Self {
        let dim = conditions.len();
        DomainSpec {
            id,
            name: name.into(),
            conditions,
            flow_mean: vec![0.0; dim],
            flow_std: vec![1.0; dim],
            pressure: PressureMode::Passthrough,
        }
    }

    pub fn flow_dim(&self) -> usize {
        self.conditions.len()
    }

    /// Same identity and schema, ignoring fitted standardization constants.
    pub fn schema_matches(&self, other: &DomainSpec) -> bool {
        self.name == other.name
            && self.conditions == other.conditions
            && self.pressure == other.pressure
    }
}

/// Dense, name-unique collection of domains. Internal routing uses 0-based
/// registry indices; serialized ids are 1-based positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRegistry {
    domains: Vec<DomainSpec>,
}

impl DomainRegistry {
    pub fn new(mut domains: Vec<DomainSpec>) -> Result<Self> {
        if domains.is_empty() {
            return Err(Error::Registry("registry needs at least one domain".into()));
        }
        let mut names = BTreeMap::new();
        for (i, d) in domains.iter_mut().enumerate() {
            d.id = i + 1;
            if d.conditions.is_empty() {
                return Err(Error::Registry(format!(
                    "domain '{}' declares no flow conditions",
                    d.name
                )));
            }
            if d.flow_mean.len() != d.flow_dim() || d.flow_std.len() != d.flow_dim() {
                return Err(Error::Registry(format!(
                    "domain '{}' standardization constants disagree with flow_dim {}",
                    d.name,
                    d.flow_dim()
                )));
            }
            if names.insert(d.name.clone(), i).is_some() {
                return Err(Error::Registry(format!("duplicate domain name '{}'", d.name)));
            }
        }
        Ok(DomainRegistry { domains })
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn domains(&self) -> &[DomainSpec] {
        &self.domains
    }

    pub fn get(&self, index: usize) -> Result<&DomainSpec> {
        self.domains.get(index).ok_or(Error::Routing(index))
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.domains
            .iter()
            .position(|d| d.name == name)
            .ok_or_else(|| Error::Registry(format!("domain '{name}' not in registry")))
    }

    pub fn flow_dims(&self) -> Vec<usize> {
        self.domains.iter().map(|d| d.flow_dim()).collect()
    }

    /// Validate a flow vector against its domain schema.
    pub fn check_flow(&self, index: usize, flow: &[f64]) -> Result<()> {
        let d = self.get(index)?;
        if flow.len() != d.flow_dim() {
            return Err(Error::DomainSchema {
                domain: d.name.clone(),
                expected: d.flow_dim(),
                got: flow.len(),
            });
        }
        if flow.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "flow vector for domain '{}' has non-finite values",
                d.name
            )));
        }
        Ok(())
    }

    /// Standardize a flow vector with the domain's fitted constants.
    pub fn standardize_flow(&self, index: usize, flow: &[f64]) -> Result<Vec<f64>> {
        self.check_flow(index, flow)?;
        let d = &self.domains[index];
        Ok(flow
            .iter()
            .zip(d.flow_mean.iter().zip(&d.flow_std))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect())
    }

    /// Fit per-component flow mean/std over the given training samples.
    /// Components with no variation keep std 1 to stay invertible.
    pub fn fit_flow_stats(&mut self, samples: &[Sample]) {
        for (idx, d) in self.domains.iter_mut().enumerate() {
            let flows: Vec<&Vec<f64>> = samples
                .iter()
                .filter(|s| s.domain == idx)
                .map(|s| &s.flow)
                .collect();
            if flows.is_empty() {
                continue;
            }
            let dim = d.flow_dim();
            let n = flows.len() as f64;
            for c in 0..dim {
                let mean = flows.iter().map(|f| f[c]).sum::<f64>() / n;
                let var = flows.iter().map(|f| (f[c] - mean).powi(2)).sum::<f64>() / n;
                let std = var.sqrt();
                d.flow_mean[c] = mean;
                d.flow_std[c] = if std > 1e-12 { std } else { 1.0 };
            }
        }
    }
}

/// Standardize a raw pressure value: (p - mean) / std.
pub fn standardize_pressure(p_raw: f64, mean: f64, std: f64) -> Result<f64> {
    if std <= 0.0 {
        return Err(Error::contract(format!(
            "pressure standardization needs std > 0, got {std}"
        )));
    }
    Ok((p_raw - mean) / std)
}

/// Exact inverse of [`standardize_pressure`].
pub fn destandardize_pressure(p_std: f64, mean: f64, std: f64) -> Result<f64> {
    if std <= 0.0 {
        return Err(Error::contract(format!(
            "pressure standardization needs std > 0, got {std}"
        )));
    }
    Ok(p_std * std + mean)
}

/// One geometry instance: surface points, owning domain (registry index),
/// flow-condition vector, and per-point target pressure coefficients.
#[derive(Debug, Clone)]
pub struct Sample {
    pub points: PointSet,
    /// 0-based registry index.
    pub domain: usize,
    pub flow: Vec<f64>,
    pub target: Vec<f64>,
    /// Provenance tag for logs and diagnostics (file stem or generator id).
    pub tag: String,
}

impl Sample {
    pub fn new(
        points: PointSet,
        domain: usize,
        flow: Vec<f64>,
        target: Vec<f64>,
        tag: impl Into<String>,
    ) -> Result<Self> {
        if target.len() != points.len() {
            return Err(Error::contract(format!(
                "target length {} does not match point count {}",
                target.len(),
                points.len()
            )));
        }
        if target.iter().any(|v| !v.is_finite()) || flow.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("sample has non-finite target or flow values"));
        }
        Ok(Sample {
            points,
            domain,
            flow,
            target,
            tag: tag.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.len() == 0
    }

    pub fn with_domain(mut self, domain: usize) -> Self {
        self.domain = domain;
        self
    }

    /// Restrict to the given point indices (batcher subsampling).
    pub fn subsample(&self, indices: &[usize]) -> Sample {
        Sample {
            points: self.points.select(indices),
            domain: self.domain,
            flow: self.flow.clone(),
            target: indices.iter().map(|&i| self.target[i]).collect(),
            tag: self.tag.clone(),
        }
    }
}

/// Train/test membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}
