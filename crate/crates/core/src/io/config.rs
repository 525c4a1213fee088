//! Run configuration in TOML.
//!
//! Only `model` is mandatory. Unknown keys are collected as warnings, and
//! relative paths resolve against the directory of the config file.
//!
//! ```toml
//! model = "thevenin"
//!
//! [fixed]
//! capacity_ah = 3.3
//! ocv = { kind = "polynomial", coefficients = [3.0, 1.2] }
//!
//! [prior]            # omit `mean` for the perturbed-reference construction
//! offset = 0.3
//! rel_std = 0.2
//!
//! [enki]
//! ensemble_size = 200
//! seed = 7
//!
//! [data]
//! cycle = "cycle.csv"
//! measurements = "measurements.csv"
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::enki::{EnkiSettings, PriorSpec};
use crate::error::{Error, Result};
use crate::model::{
    parameter_count, parameter_names, reference_parameters, FixedConstants, ModelKind, OcvCurve,
    OcvSpec, ParameterVector, VoltageWindow,
};
use crate::sim::{
    four_condition_segments, synth_composite, DriveCycle, IntegratorSettings, NoiseSpec,
    ProfileSpec, DEFAULT_MAX_CURRENT,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedSection {
    pub capacity_ah: f64,
    pub t_ref: f64,
    pub r_s: f64,
    pub rc_pairs: usize,
    pub ocv: OcvSpec,
    pub window: VoltageWindow,
    pub max_current_a: f64,
}

impl Default for FixedSection {
    fn default() -> Self {
        Self {
            capacity_ah: 3.3,
            t_ref: 298.15,
            r_s: 0.0,
            rc_pairs: 1,
            ocv: OcvSpec::Polynomial {
                coefficients: vec![3.0, 1.2],
            },
            window: VoltageWindow::default(),
            max_current_a: DEFAULT_MAX_CURRENT,
        }
    }
}

/// Either an explicit Gaussian (`mean` with `variance` or `covariance`) or,
/// when `mean` is absent, `N(θ_ref + offset·diag(θ_ref)ε, diag((rel_std·θ_ref)²))`
/// around the reference parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSection {
    pub mean: Option<Vec<f64>>,
    pub variance: Option<Vec<f64>>,
    pub covariance: Option<Vec<Vec<f64>>>,
    pub offset: f64,
    pub rel_std: f64,
    /// Seed of the offset draw `ε`; defaults to the run seed.
    pub offset_seed: Option<u64>,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self {
            mean: None,
            variance: None,
            covariance: None,
            offset: 0.3,
            rel_std: 0.2,
            offset_seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorSection {
    /// Sampling interval [s]; loaded cycles must use this spacing.
    pub dt_s: f64,
    /// RK4 steps per sampling interval.
    pub substeps: usize,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self {
            dt_s: 1.0,
            substeps: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    pub cycle: Option<PathBuf>,
    pub measurements: Option<PathBuf>,
    /// Parameter file with the nominal/reference `θ`.
    pub reference: Option<PathBuf>,
    /// Ambient temperature for cycles without an `amb_temp_K` column.
    pub ambient_k: Option<f64>,
}

/// Synthetic drive-cycle segments used when no cycle file is given. An
/// empty list means the default four-ambient composite.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileSection {
    pub segment_s: Option<f64>,
    pub segments: Vec<ProfileSpec>,
}

/// The config document as written, after defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigFile {
    pub model: ModelKind,
    #[serde(default)]
    pub fixed: FixedSection,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub enki: EnkiSettings,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub profile: ProfileSection,
}

/// A loaded configuration with paths resolved.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub file: ConfigFile,
    /// Unknown keys, as dotted paths.
    pub warnings: Vec<String>,
    pub base_dir: PathBuf,
}

/// Keys that [`load_config`] does not require to exist on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKey {
    Cycle,
    Measurements,
    Reference,
}

impl DataKey {
    fn key(self) -> &'static str {
        match self {
            DataKey::Cycle => "data.cycle",
            DataKey::Measurements => "data.measurements",
            DataKey::Reference => "data.reference",
        }
    }
}

/// Parses a config document. Relative paths are resolved against
/// `base_dir`; nothing is read from disk.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let value: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::parse("config", e.to_string()))?;
    let mut missing = Vec::new();
    if !value.contains_key("model") {
        missing.push("model".to_string());
    }
    if let Some(prior) = value.get("prior").and_then(|p| p.as_table()) {
        if prior.contains_key("mean")
            && !prior.contains_key("variance")
            && !prior.contains_key("covariance")
        {
            missing.push("prior.variance".to_string());
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingKeys(missing));
    }
    let mut warnings = BTreeSet::new();
    let file: ConfigFile = serde_ignored::deserialize(toml::Value::Table(value), |path| {
        warnings.insert(path.to_string());
    })
    .map_err(|e: toml::de::Error| Error::parse("config", e.to_string()))?;
    let mut cfg = RunConfig {
        file,
        warnings: warnings.into_iter().collect(),
        base_dir: base_dir.to_path_buf(),
    };
    cfg.resolve_paths();
    cfg.validate()?;
    for w in &cfg.warnings {
        log::warn!("unknown config key `{w}` ignored");
    }
    Ok(cfg)
}

/// Reads, parses and validates a config file, then checks that every
/// referenced input exists except those listed in `not_yet`.
pub fn load_config(path: &Path, not_yet: &[DataKey]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let cfg = parse_config(&text, base)?;
    cfg.check_inputs(not_yet)?;
    Ok(cfg)
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    fn resolve_paths(&mut self) {
        let base = self.base_dir.clone();
        let d = &mut self.file.data;
        resolve(&base, &mut d.cycle);
        resolve(&base, &mut d.measurements);
        resolve(&base, &mut d.reference);
    }

    fn validate(&self) -> Result<()> {
        let f = &self.file;
        let positive = [
            ("fixed.capacity_ah", f.fixed.capacity_ah),
            ("fixed.t_ref", f.fixed.t_ref),
            ("fixed.max_current_a", f.fixed.max_current_a),
            ("integrator.dt_s", f.integrator.dt_s),
            ("enki.floor_fraction", f.enki.floor_fraction),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be positive, got {v}")));
            }
        }
        if !(f.fixed.r_s >= 0.0 && f.fixed.r_s.is_finite()) {
            return Err(Error::config("fixed.r_s", "must be non-negative"));
        }
        if f.fixed.rc_pairs == 0 {
            return Err(Error::config("fixed.rc_pairs", "must be at least 1"));
        }
        if f.integrator.substeps == 0 {
            return Err(Error::config("integrator.substeps", "must be at least 1"));
        }
        if f.enki.ensemble_size < 2 {
            return Err(Error::config("enki.ensemble_size", "must be at least 2"));
        }
        if f.enki.max_iterations == 0 {
            return Err(Error::config("enki.max_iterations", "must be at least 1"));
        }
        if !(f.prior.offset >= 0.0 && f.prior.rel_std >= 0.0) {
            return Err(Error::config("prior", "offset and rel_std must be non-negative"));
        }
        if let Some(t) = f.data.ambient_k {
            if !(t > 0.0) {
                return Err(Error::config("data.ambient_k", "must be positive"));
            }
        }
        f.noise
            .validate()
            .map_err(|e| Error::config("noise", e.to_string()))?;
        self.fixed_constants()?;
        if let Some(mean) = &f.prior.mean {
            // Builds the explicit prior to surface bad entries at load time.
            self.explicit_prior(mean)?;
        }
        Ok(())
    }

    /// Fails if an input path is missing on disk, unless listed in `not_yet`.
    pub fn check_inputs(&self, not_yet: &[DataKey]) -> Result<()> {
        let d = &self.file.data;
        for (key, path) in [
            (DataKey::Cycle, &d.cycle),
            (DataKey::Measurements, &d.measurements),
            (DataKey::Reference, &d.reference),
        ] {
            if let Some(p) = path {
                if !not_yet.contains(&key) && !p.is_file() {
                    return Err(Error::config(key.key(), format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// Errors naming every key in `keys` that the config leaves unset.
    pub fn require(&self, keys: &[DataKey]) -> Result<()> {
        let d = &self.file.data;
        let missing: Vec<String> = keys
            .iter()
            .filter(|k| match k {
                DataKey::Cycle => d.cycle.is_none(),
                DataKey::Measurements => d.measurements.is_none(),
                DataKey::Reference => d.reference.is_none(),
            })
            .map(|k| k.key().to_string())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingKeys(missing))
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.file.model
    }

    pub fn seed(&self) -> u64 {
        self.file.enki.seed
    }

    pub fn fixed_constants(&self) -> Result<FixedConstants> {
        let f = &self.file.fixed;
        let ocv = OcvCurve::new(f.ocv.clone(), f.window).map_err(|e| Error::config("fixed.ocv", e.to_string()))?;
        Ok(FixedConstants {
            capacity_ah: f.capacity_ah,
            t_ref: f.t_ref,
            r_s: f.r_s,
            rc_pairs: f.rc_pairs,
            ocv: Arc::new(ocv),
        })
    }

    pub fn integrator(&self) -> IntegratorSettings {
        IntegratorSettings {
            substeps: self.file.integrator.substeps,
        }
    }

    pub fn parameter_names(&self) -> Vec<String> {
        parameter_names(self.kind(), self.file.fixed.rc_pairs)
    }

    /// Reference parameters: the `data.reference` file if set, otherwise
    /// the built-in nominal values for the model.
    pub fn reference(&self) -> Result<ParameterVector> {
        match &self.file.data.reference {
            Some(p) => load_parameters(p, self.kind(), self.file.fixed.rc_pairs),
            None => {
                if self.kind() == ModelKind::Thevenin && self.file.fixed.rc_pairs != 1 {
                    return Err(Error::config(
                        "data.reference",
                        "built-in nominal values cover one RC pair only",
                    ));
                }
                Ok(reference_parameters(self.kind()))
            }
        }
    }

    fn explicit_prior(&self, mean: &[f64]) -> Result<PriorSpec> {
        let p = &self.file.prior;
        let expected = parameter_count(self.kind(), self.file.fixed.rc_pairs);
        if mean.len() != expected {
            return Err(Error::config(
                "prior.mean",
                format!("has {} entries, the {} schema needs {expected}", mean.len(), self.kind()),
            ));
        }
        match (&p.variance, &p.covariance) {
            (Some(v), _) => PriorSpec::diagonal(mean.to_vec(), v),
            (None, Some(rows)) => {
                if rows.len() != expected || rows.iter().any(|r| r.len() != expected) {
                    return Err(Error::config(
                        "prior.covariance",
                        format!("must be {expected}x{expected}"),
                    ));
                }
                let m = DMatrix::from_fn(expected, expected, |i, j| rows[i][j]);
                PriorSpec::full(mean.to_vec(), m)
            }
            (None, None) => Err(Error::MissingKeys(vec!["prior.variance".into()])),
        }
    }

    pub fn prior(&self) -> Result<PriorSpec> {
        let p = &self.file.prior;
        match &p.mean {
            Some(mean) => self.explicit_prior(mean),
            None => {
                let seed = p.offset_seed.unwrap_or(self.seed());
                PriorSpec::perturbed_reference(&self.reference()?, p.offset, p.rel_std, seed)
            }
        }
    }

    /// The drive cycle: the `data.cycle` file if set, otherwise the
    /// configured synthetic profile generated from the run seed.
    pub fn drive_cycle(&self) -> Result<DriveCycle> {
        let f = &self.file;
        let cycle = match &f.data.cycle {
            Some(path) => {
                let file = std::fs::File::open(path).map_err(|source| Error::File {
                    path: path.clone(),
                    source,
                })?;
                crate::io::parse_drive_cycle(
                    std::io::BufReader::new(file),
                    f.data.ambient_k,
                    f.fixed.max_current_a,
                )
                .map_err(|e| with_path(e, path))?
            }
            None => synth_composite(&self.profile_segments(), self.seed())?,
        };
        if cycle.len() > 1 && (cycle.dt() - f.integrator.dt_s).abs() > 1e-9 * f.integrator.dt_s {
            return Err(Error::config(
                "integrator.dt_s",
                format!("{} s but the drive cycle is sampled every {} s", f.integrator.dt_s, cycle.dt()),
            ));
        }
        Ok(cycle)
    }

    pub fn profile_segments(&self) -> Vec<ProfileSpec> {
        let p = &self.file.profile;
        let mut segments = if p.segments.is_empty() {
            four_condition_segments(p.segment_s.unwrap_or(1800.0))
        } else {
            p.segments.clone()
        };
        for s in &mut segments {
            s.dt_s = self.file.integrator.dt_s;
            s.amplitude_cap_a = s.amplitude_cap_a.min(self.file.fixed.max_current_a);
        }
        segments
    }

    /// SHA-256 over the canonical JSON of the effective configuration.
    /// Input files enter through their content digests rather than their
    /// paths; the worker-thread count is excluded since it cannot change
    /// results.
    pub fn config_hash(&self) -> Result<String> {
        let mut file = self.file.clone();
        file.enki.threads = 0;
        let mut value = serde_json::to_value(&file)?;
        let data = value
            .get_mut("data")
            .and_then(|d| d.as_object_mut())
            .expect("data section serializes as a map");
        for key in ["cycle", "measurements", "reference"] {
            let digest = match data.get(key).and_then(|v| v.as_str()) {
                Some(p) => match std::fs::read(p) {
                    Ok(bytes) => serde_json::Value::String(hex::encode(Sha256::digest(&bytes))),
                    Err(_) => serde_json::Value::Null,
                },
                None => serde_json::Value::Null,
            };
            data.insert(key.to_string(), digest);
        }
        let canonical = serde_json::to_vec(&value)?;
        Ok(hex::encode(Sha256::digest(&canonical)))
    }
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    }
}

#[derive(Debug, Deserialize)]
struct ParameterFile {
    model: Option<ModelKind>,
    values: Option<Vec<f64>>,
    parameters: Option<toml::Table>,
}

/// Reads a parameter file: either `values = [..]` in schema order or a
/// `[parameters]` table keyed by schema names. An optional `model` key
/// must match `kind`.
pub fn parse_parameters(text: &str, kind: ModelKind, rc_pairs: usize) -> Result<ParameterVector> {
    let file: ParameterFile =
        toml::from_str(text).map_err(|e| Error::parse("parameter file", e.to_string()))?;
    if let Some(m) = file.model {
        if m != kind {
            return Err(Error::config("model", format!("parameter file is for {m}, not {kind}")));
        }
    }
    let names = parameter_names(kind, rc_pairs);
    let values = match (file.values, file.parameters) {
        (Some(v), None) => v,
        (None, Some(table)) => {
            let missing: Vec<String> = names
                .iter()
                .filter(|n| !table.contains_key(n.as_str()))
                .map(|n| format!("parameters.{n}"))
                .collect();
            if !missing.is_empty() {
                return Err(Error::MissingKeys(missing));
            }
            if let Some(extra) = table.keys().find(|k| !names.contains(k)) {
                return Err(Error::config(format!("parameters.{extra}"), "not a parameter of this model"));
            }
            names
                .iter()
                .map(|n| {
                    let v = &table[n.as_str()];
                    v.as_float()
                        .or_else(|| v.as_integer().map(|i| i as f64))
                        .ok_or_else(|| Error::config(format!("parameters.{n}"), "must be a number"))
                })
                .collect::<Result<Vec<f64>>>()?
        }
        _ => {
            return Err(Error::config(
                "parameter file",
                "give exactly one of `values` or `[parameters]`",
            ))
        }
    };
    if values.len() != names.len() {
        return Err(Error::Schema {
            model: kind.label(),
            expected: names.len(),
            got: values.len(),
        });
    }
    Ok(ParameterVector(values))
}

pub fn load_parameters(path: &Path, kind: ModelKind, rc_pairs: usize) -> Result<ParameterVector> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    parse_parameters(&text, kind, rc_pairs)
}

/// Renders `θ` as a parameter file readable by [`parse_parameters`].
pub fn format_parameters(theta: &[f64], kind: ModelKind, rc_pairs: usize) -> String {
    let mut out = format!("model = \"{}\"\n\n[parameters]\n", kind.label());
    for (name, v) in parameter_names(kind, rc_pairs).iter().zip(theta) {
        out.push_str(&format!("{name} = {v:?}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        parse_config(text, Path::new("/configs"))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse("model = \"thevenin\"\n[data]\ncycle = \"c.csv\"\nmeasurements = \"m.csv\"\n").unwrap();
        assert_eq!(cfg.file.enki.ensemble_size, 200);
        assert_eq!(cfg.file.integrator.dt_s, 1.0);
        assert_eq!(cfg.file.fixed.t_ref, 298.15);
        assert_eq!(cfg.file.data.cycle.as_deref(), Some(Path::new("/configs/c.csv")));
        assert!(cfg.warnings.is_empty());
    }

    #[test]
    fn missing_keys_are_named() {
        let err = parse("[prior]\nmean = [1.0]\n").unwrap_err();
        match err {
            Error::MissingKeys(keys) => assert_eq!(keys, vec!["model", "prior.variance"]),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_keys_become_warnings() {
        let cfg = parse("model = \"ndct\"\ncolour = 3\n[enki]\nensemble_sise = 10\n").unwrap();
        assert_eq!(cfg.warnings, vec!["colour", "enki.ensemble_sise"]);
    }

    #[test]
    fn negative_prior_variance_is_named() {
        let text = "model = \"thevenin\"\n[prior]\nmean = [1,1,1,1,1,1,1,1,1]\nvariance = [1,1,1,-1,1,1,1,1,1]\n";
        let err = parse(text).unwrap_err();
        assert!(err.to_string().contains("prior.variance[3]"), "{err}");
    }

    #[test]
    fn reference_prior_is_offset_and_scaled() {
        let cfg = parse("model = \"thevenin\"\n[enki]\nseed = 5\n").unwrap();
        let prior = cfg.prior().unwrap();
        let direct = PriorSpec::perturbed_reference(&reference_parameters(ModelKind::Thevenin), 0.3, 0.2, 5).unwrap();
        assert_eq!(prior, direct);
    }

    #[test]
    fn hash_tracks_meaningful_fields_only() {
        let a = parse("model = \"thevenin\"\n").unwrap();
        let b = parse("model = \"thevenin\"\n[enki]\nthreads = 4\n").unwrap();
        let c = parse("model = \"thevenin\"\n[enki]\nensemble_size = 100\n").unwrap();
        let d = parse("# comment\nmodel   =   \"thevenin\"\n[fixed]\nt_ref = 298.15\n").unwrap();
        assert_eq!(a.config_hash().unwrap(), b.config_hash().unwrap());
        assert_eq!(a.config_hash().unwrap(), d.config_hash().unwrap());
        assert_ne!(a.config_hash().unwrap(), c.config_hash().unwrap());
    }

    #[test]
    fn parameter_file_forms() {
        let theta = reference_parameters(ModelKind::Ndct);
        let text = format_parameters(&theta, ModelKind::Ndct, 1);
        assert_eq!(parse_parameters(&text, ModelKind::Ndct, 1).unwrap(), theta);
        let err = parse_parameters("[parameters]\nR_o = 0.02\n", ModelKind::Thevenin, 1).unwrap_err();
        assert!(err.to_string().contains("parameters.kappa2"), "{err}");
        assert!(parse_parameters(&text, ModelKind::Thevenin, 1).is_err());
        let v = parse_parameters("values = [1,2,3,4,5,6,7,8,9]", ModelKind::Thevenin, 1).unwrap();
        assert_eq!(v.len(), 9);
    }

    #[test]
    fn missing_inputs_detected() {
        let cfg = parse("model = \"thevenin\"\n[data]\nmeasurements = \"nowhere.csv\"\n").unwrap();
        assert!(cfg.check_inputs(&[]).is_err());
        cfg.check_inputs(&[DataKey::Measurements]).unwrap();
        assert!(matches!(cfg.require(&[DataKey::Cycle]), Err(Error::MissingKeys(_))));
    }
}
