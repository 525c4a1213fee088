//! Identification results as a JSON document.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::enki::{BoxplotStats, Identification, IterationRecord};
use crate::error::{Error, Result};
use crate::model::{ModelKind, ParameterVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeError {
    pub name: String,
    pub reference: f64,
    pub estimate: f64,
    /// `100 |θ̂ − θ_ref| / |θ_ref|`.
    pub percent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitRmse {
    pub voltage_v: f64,
    pub surf_temp_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    /// Seconds since the Unix epoch; only recorded on request so that
    /// repeated runs stay byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix_s: Option<u64>,
}

impl Provenance {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Self {
            config_hash,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub model: ModelKind,
    pub estimate: Vec<NamedValue>,
    /// Present iff a reference `θ` was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_errors: Option<Vec<RelativeError>>,
    pub fit_rmse: FitRmse,
    pub complete: bool,
    pub alphas: Vec<f64>,
    pub records: Vec<IterationRecord>,
    /// Boxplot statistics of the final ensemble, one per parameter.
    pub final_parameters: Vec<BoxplotStats>,
    pub provenance: Provenance,
}

pub fn relative_errors(names: &[String], estimate: &[f64], reference: &[f64]) -> Result<Vec<RelativeError>> {
    if estimate.len() != reference.len() || names.len() != estimate.len() {
        return Err(Error::LengthMismatch(format!(
            "{} estimates against {} reference values",
            estimate.len(),
            reference.len()
        )));
    }
    Ok(names
        .iter()
        .zip(estimate.iter().zip(reference))
        .map(|(name, (&e, &r))| RelativeError {
            name: name.clone(),
            reference: r,
            estimate: e,
            percent: 100.0 * (e - r).abs() / r.abs(),
        })
        .collect())
}

impl ResultBundle {
    pub fn new(
        model: ModelKind,
        names: &[String],
        run: &Identification,
        reference: Option<&[f64]>,
        fit_rmse: FitRmse,
        provenance: Provenance,
    ) -> Result<Self> {
        if names.len() != run.estimate.len() {
            return Err(Error::LengthMismatch(format!(
                "{} names for {} parameters",
                names.len(),
                run.estimate.len()
            )));
        }
        let estimate = names
            .iter()
            .zip(run.estimate.iter())
            .map(|(name, &value)| NamedValue {
                name: name.clone(),
                value,
            })
            .collect();
        let relative_errors = reference
            .map(|r| relative_errors(names, &run.estimate, r))
            .transpose()?;
        Ok(Self {
            model,
            estimate,
            relative_errors,
            fit_rmse,
            complete: run.complete,
            alphas: run.alphas.clone(),
            records: run.records.clone(),
            final_parameters: run.final_parameters.clone(),
            provenance,
        })
    }

    pub fn estimate_vector(&self) -> ParameterVector {
        ParameterVector(self.estimate.iter().map(|v| v.value).collect())
    }

    pub fn names(&self) -> Vec<String> {
        self.estimate.iter().map(|v| v.name.clone()).collect()
    }
}

pub fn write_results<W: Write>(bundle: &ResultBundle, mut sink: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut sink, bundle)?;
    writeln!(sink)?;
    sink.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(source: R) -> Result<ResultBundle> {
    serde_json::from_reader(source).map_err(|e| Error::parse(format!("line {}", e.line()), e.to_string()))
}
