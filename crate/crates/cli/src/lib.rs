//! The `ecm-enki` command line: `simulate`, `identify`, `validate` and
//! `report`.
//!
//! [`run_cli`] never exits the process; `main` maps its outcome to an exit
//! status. Every output is staged in a temporary file next to its target
//! and only renamed into place once all outputs of the command are ready,
//! so a failing command leaves no partial artifacts behind.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use ecm_enki::enki::{run_identification, IdentificationProblem};
use ecm_enki::io::{
    load_config, load_parameters, pair_with_cycle, read_measurements, read_results,
    relative_errors, write_drive_cycle, write_measurements, write_results, DataKey, FitRmse,
    Provenance, RelativeError, ResultBundle, RunConfig,
};
use ecm_enki::model::{parameter_count, ModelKind, ParameterVector};
use ecm_enki::sim::{add_noise, rmse, simulate_parameters, MeasurementSeries};
use ecm_enki::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutcome {
    pub code: i32,
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
    /// Named scalar results, e.g. `voltage_rmse_v` from `validate`.
    pub metrics: Vec<(String, f64)>,
}

impl CommandOutcome {
    fn failure(code: i32, summary: String) -> Self {
        Self {
            code,
            summary,
            artifacts: Vec::new(),
            metrics: Vec::new(),
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

#[derive(Debug, Parser)]
#[command(name = "ecm-enki", version, about = "Battery ECM identification by ensemble Kalman inversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelKind>,
    /// Drive-cycle CSV; replaces `data.cycle`.
    #[arg(long)]
    cycle: Option<PathBuf>,
    /// Parameter file with the nominal/reference θ; replaces `data.reference`.
    #[arg(long)]
    ref_params: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate noisy measurements from the reference parameters.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Measurement CSV to write; defaults to `data.measurements`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write noise-free outputs.
        #[arg(long)]
        noiseless: bool,
    },
    /// Identify parameters from measurements and write a result bundle.
    Identify {
        #[command(flatten)]
        run: RunArgs,
        /// Measurement CSV; replaces `data.measurements`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "results.json")]
        out: PathBuf,
        /// Worker threads for the forward passes (0: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Record the creation time in the bundle.
        #[arg(long)]
        timestamp: bool,
    },
    /// Forward-simulate identified parameters against measurements.
    Validate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Result bundle whose estimate is validated.
        #[arg(long, conflicts_with = "params")]
        results: Option<PathBuf>,
        /// Parameter file to validate instead of a result bundle.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Residual trace CSV to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate a result bundle: boxplot statistics and parameter comparison.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Reference θ for the relative-error table.
        #[arg(long)]
        ref_params: Option<PathBuf>,
        /// Directory for `boxplots.csv` and `comparison.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run_cli<I, T>(args: I) -> CommandOutcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.exit_code() == 0 { EXIT_OK } else { EXIT_USAGE };
            return CommandOutcome::failure(code, e.render().to_string());
        }
    };
    let result = match cli.command {
        Command::Simulate { run, out, noiseless } => simulate(run, out, noiseless),
        Command::Identify {
            run,
            data,
            out,
            threads,
            timestamp,
        } => identify(run, data, out, threads, timestamp),
        Command::Validate {
            run,
            data,
            results,
            params,
            out,
        } => validate(run, data, results, params, out),
        Command::Report {
            results,
            ref_params,
            out,
        } => report(&results, ref_params.as_deref(), out.as_deref()),
    };
    match result {
        Ok(outcome) => outcome,
        Err(e) => {
            let code = if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_DATA };
            CommandOutcome::failure(code, format!("error: {e}"))
        }
    }
}

/// Loads the config and applies the command-line overrides. Input files
/// are checked after the overrides, skipping `not_yet`.
fn load(run: &RunArgs, data: Option<PathBuf>, not_yet: &[DataKey]) -> Result<RunConfig> {
    let all = [DataKey::Cycle, DataKey::Measurements, DataKey::Reference];
    let mut cfg = load_config(&run.config, &all)?;
    let f = &mut cfg.file;
    if let Some(seed) = run.seed {
        f.enki.seed = seed;
    }
    if let Some(model) = run.model {
        f.model = model;
    }
    if let Some(p) = &run.cycle {
        f.data.cycle = Some(p.clone());
    }
    if let Some(p) = &run.ref_params {
        f.data.reference = Some(p.clone());
    }
    if let Some(p) = data {
        f.data.measurements = Some(p);
    }
    cfg.check_inputs(not_yet)?;
    Ok(cfg)
}

fn hash_comments(hash: &str, cfg: &RunConfig) -> Vec<String> {
    vec![
        format!("config_hash={hash}"),
        format!("model={}", cfg.kind()),
        format!("seed={}", cfg.seed()),
    ]
}

fn simulate(run: RunArgs, out: Option<PathBuf>, noiseless: bool) -> Result<CommandOutcome> {
    let mut cfg = load(&run, None, &[DataKey::Measurements])?;
    let out = match out.or_else(|| cfg.file.data.measurements.clone()) {
        Some(p) => p,
        None => return Err(Error::MissingKeys(vec!["data.measurements".into()])),
    };
    // The measurement file is this command's output, not an input.
    cfg.file.data.measurements = None;
    let fixed = cfg.fixed_constants()?;
    let theta = cfg.reference()?;
    let cycle = cfg.drive_cycle()?;
    let traj = simulate_parameters(cfg.kind(), &theta, &fixed, &cycle, cfg.integrator())?;
    let series = if noiseless {
        MeasurementSeries::noiseless(&traj)
    } else {
        add_noise(&traj, &cfg.file.noise, cfg.seed())
    };
    let hash = cfg.config_hash()?;
    let mut comments = hash_comments(&hash, &cfg);
    if noiseless {
        comments.push("noiseless".into());
    }
    let mut files = Vec::new();
    let mut buf = Vec::new();
    write_measurements(&series, &mut buf, &comments)?;
    files.push((out.clone(), buf));
    if cfg.file.data.cycle.is_none() {
        let mut buf = Vec::new();
        write_drive_cycle(&cycle, &mut buf, &comments)?;
        files.push((out.with_extension("cycle.csv"), buf));
    }
    let artifacts = commit(files)?;
    let summary = format!(
        "simulated {} samples of the {} model ({} s); wrote {}",
        cycle.len(),
        cfg.kind(),
        cycle.len() as f64 * cycle.dt(),
        list(&artifacts)
    );
    Ok(CommandOutcome {
        code: EXIT_OK,
        summary,
        artifacts,
        metrics: Vec::new(),
    })
}

fn fit_rmse(cfg: &RunConfig, theta: &[f64], data: &MeasurementSeries) -> Result<(FitRmse, MeasurementSeries)> {
    let fixed = cfg.fixed_constants()?;
    let cycle = cfg.drive_cycle()?;
    pair_with_cycle(data, &cycle)?;
    let traj = simulate_parameters(cfg.kind(), theta, &fixed, &cycle, cfg.integrator())?;
    let predicted = MeasurementSeries::noiseless(&traj);
    let (v, t) = rmse(data, &predicted)?;
    Ok((
        FitRmse {
            voltage_v: v,
            surf_temp_k: t,
        },
        predicted,
    ))
}

fn read_series(path: &Path) -> Result<MeasurementSeries> {
    let file = std::fs::File::open(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    read_measurements(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}

fn identify(
    run: RunArgs,
    data: Option<PathBuf>,
    out: PathBuf,
    threads: Option<usize>,
    timestamp: bool,
) -> Result<CommandOutcome> {
    let mut cfg = load(&run, data, &[])?;
    cfg.require(&[DataKey::Measurements])?;
    if let Some(n) = threads {
        cfg.file.enki.threads = n;
    }
    let fixed = cfg.fixed_constants()?;
    let cycle = cfg.drive_cycle()?;
    let data_path = cfg.file.data.measurements.clone().expect("required above");
    let observations = read_series(&data_path)?;
    pair_with_cycle(&observations, &cycle)?;
    let prior = cfg.prior()?;
    let problem = IdentificationProblem {
        kind: cfg.kind(),
        fixed: &fixed,
        cycle: &cycle,
        observations: &observations,
        noise: cfg.file.noise,
        integrator: cfg.integrator(),
        initial_state: None,
    };
    let result = run_identification(&problem, &prior, &cfg.file.enki)?;
    let (fit, _) = fit_rmse(&cfg, &result.estimate, &observations)?;
    let reference = match cfg.file.data.reference {
        Some(_) => Some(cfg.reference()?),
        None => None,
    };
    let mut provenance = Provenance::new(cfg.config_hash()?, cfg.seed());
    if timestamp {
        provenance.created_unix_s = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs());
    }
    let names = cfg.parameter_names();
    let bundle = ResultBundle::new(
        cfg.kind(),
        &names,
        &result,
        reference.as_ref().map(|r| r.0.as_slice()),
        fit,
        provenance,
    )?;
    let mut buf = Vec::new();
    write_results(&bundle, &mut buf)?;
    let artifacts = commit(vec![(out, buf)])?;

    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "{} identification: {} iterations, alphas {:?}{}",
        cfg.kind(),
        result.alphas.len(),
        result.alphas,
        if result.complete { "" } else { " (INCOMPLETE: iteration cap reached before t = 1)" }
    );
    let _ = write!(summary, "{}", comparison_table(&names, &result.estimate, bundle.relative_errors.as_deref()));
    let _ = writeln!(
        summary,
        "fit RMSE: voltage {:.6} V, surface temperature {:.6} K",
        fit.voltage_v, fit.surf_temp_k
    );
    let _ = write!(summary, "wrote {}", list(&artifacts));
    if !result.complete {
        log::warn!("tempering stopped at the iteration cap; the result is flagged incomplete");
    }
    Ok(CommandOutcome {
        code: EXIT_OK,
        summary,
        artifacts,
        metrics: vec![
            ("voltage_rmse_v".into(), fit.voltage_v),
            ("surf_temp_rmse_k".into(), fit.surf_temp_k),
            ("iterations".into(), result.alphas.len() as f64),
        ],
    })
}

fn validate(
    run: RunArgs,
    data: Option<PathBuf>,
    results: Option<PathBuf>,
    params: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<CommandOutcome> {
    let cfg = load(&run, data, &[])?;
    cfg.require(&[DataKey::Measurements])?;
    let (theta, source) = match (results, params) {
        (Some(p), _) => {
            let bundle = read_bundle(&p)?;
            if bundle.model != cfg.kind() {
                return Err(Error::Config {
                    key: "model".into(),
                    message: format!("result bundle is for {}, the config for {}", bundle.model, cfg.kind()),
                });
            }
            (bundle.estimate_vector(), p.display().to_string())
        }
        (None, Some(p)) => (
            load_parameters(&p, cfg.kind(), cfg.file.fixed.rc_pairs)?,
            p.display().to_string(),
        ),
        (None, None) => (cfg.reference()?, "reference parameters".into()),
    };
    let data_path = cfg.file.data.measurements.clone().expect("required above");
    let observations = read_series(&data_path)?;
    let (fit, predicted) = fit_rmse(&cfg, &theta, &observations)?;
    let mut artifacts = Vec::new();
    if let Some(out) = out {
        let hash = cfg.config_hash()?;
        let buf = residual_trace(&observations, &predicted, &hash_comments(&hash, &cfg))?;
        artifacts = commit(vec![(out, buf)])?;
    }
    let mut summary = format!(
        "{} model from {source} against {}: voltage RMSE {:.6} V, surface temperature RMSE {:.6} K",
        cfg.kind(),
        data_path.display(),
        fit.voltage_v,
        fit.surf_temp_k
    );
    if !artifacts.is_empty() {
        let _ = write!(summary, "\nwrote {}", list(&artifacts));
    }
    Ok(CommandOutcome {
        code: EXIT_OK,
        summary,
        artifacts,
        metrics: vec![
            ("voltage_rmse_v".into(), fit.voltage_v),
            ("surf_temp_rmse_k".into(), fit.surf_temp_k),
        ],
    })
}

fn residual_trace(
    measured: &MeasurementSeries,
    predicted: &MeasurementSeries,
    comments: &[String],
) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for c in comments {
        writeln!(buf, "# {c}")?;
    }
    writeln!(
        buf,
        "time_s,voltage_meas_V,voltage_pred_V,voltage_resid_V,surf_temp_meas_K,surf_temp_pred_K,surf_temp_resid_K"
    )?;
    for ((t, m), p) in measured.times.iter().zip(&measured.samples).zip(&predicted.samples) {
        writeln!(
            buf,
            "{t:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            m.voltage,
            p.voltage,
            m.voltage - p.voltage,
            m.surf_temp,
            p.surf_temp,
            m.surf_temp - p.surf_temp
        )?;
    }
    Ok(buf)
}

fn read_bundle(path: &Path) -> Result<ResultBundle> {
    let file = std::fs::File::open(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    read_results(std::io::BufReader::new(file))
}

/// Recovers the RC-pair count from the length of a Thevenin estimate.
fn rc_pairs_for(kind: ModelKind, len: usize) -> Result<usize> {
    (1..=8)
        .find(|&n| parameter_count(kind, n) == len)
        .ok_or(Error::Schema {
            model: kind.label(),
            expected: parameter_count(kind, 1),
            got: len,
        })
}

fn report(results: &Path, ref_params: Option<&Path>, out: Option<&Path>) -> Result<CommandOutcome> {
    let bundle = read_bundle(results)?;
    let names = bundle.names();
    let estimate = bundle.estimate_vector();
    let errors = match ref_params {
        Some(p) => {
            let rc_pairs = rc_pairs_for(bundle.model, names.len())?;
            let reference: ParameterVector = load_parameters(p, bundle.model, rc_pairs)?;
            Some(relative_errors(&names, &estimate, &reference)?)
        }
        None => bundle.relative_errors.clone(),
    };
    let table = comparison_table(&names, &estimate, errors.as_deref());
    let mut artifacts = Vec::new();
    if let Some(dir) = out {
        let comments = vec![format!("config_hash={}", bundle.provenance.config_hash)];
        artifacts = commit(vec![
            (dir.join("boxplots.csv"), boxplot_csv(&bundle, &comments)?),
            (dir.join("comparison.csv"), comparison_csv(&names, &estimate, errors.as_deref(), &comments)?),
        ])?;
    }
    let mut summary = format!(
        "{} result ({} iterations, alphas {:?}, fit RMSE {:.6} V / {:.6} K)\n{table}",
        bundle.model,
        bundle.alphas.len(),
        bundle.alphas,
        bundle.fit_rmse.voltage_v,
        bundle.fit_rmse.surf_temp_k
    );
    if !artifacts.is_empty() {
        let _ = write!(summary, "wrote {}", list(&artifacts));
    }
    let metrics = errors
        .iter()
        .flatten()
        .map(|e| (format!("relative_error_pct.{}", e.name), e.percent))
        .collect();
    Ok(CommandOutcome {
        code: EXIT_OK,
        summary,
        artifacts,
        metrics,
    })
}

/// Fixed-width text table; the reference columns appear only with a
/// reference.
fn comparison_table(names: &[String], estimate: &[f64], errors: Option<&[RelativeError]>) -> String {
    let mut s = String::new();
    match errors {
        Some(errs) => {
            let _ = writeln!(
                s,
                "{:<10} | {:>14} | {:>14} | {:>18}",
                "Parameter", "True", "Estimated", "Relative Error (%)"
            );
            let _ = writeln!(s, "{}", "-".repeat(65));
            for e in errs {
                let _ = writeln!(
                    s,
                    "{:<10} | {:>14.6e} | {:>14.6e} | {:>18.4}",
                    e.name, e.reference, e.estimate, e.percent
                );
            }
        }
        None => {
            let _ = writeln!(s, "{:<10} | {:>14}", "Parameter", "Estimated");
            let _ = writeln!(s, "{}", "-".repeat(27));
            for (n, v) in names.iter().zip(estimate) {
                let _ = writeln!(s, "{n:<10} | {v:>14.6e}");
            }
        }
    }
    s
}

fn comparison_csv(
    names: &[String],
    estimate: &[f64],
    errors: Option<&[RelativeError]>,
    comments: &[String],
) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for c in comments {
        writeln!(buf, "# {c}")?;
    }
    match errors {
        Some(errs) => {
            writeln!(buf, "parameter,true,estimated,relative_error_pct")?;
            for e in errs {
                writeln!(buf, "{},{:?},{:?},{:?}", e.name, e.reference, e.estimate, e.percent)?;
            }
        }
        None => {
            writeln!(buf, "parameter,estimated")?;
            for (n, v) in names.iter().zip(estimate) {
                writeln!(buf, "{n},{v:?}")?;
            }
        }
    }
    Ok(buf)
}

/// One row per (iteration, parameter). Iterations index the ensemble that
/// entered each update; the last index is the final ensemble.
fn boxplot_csv(bundle: &ResultBundle, comments: &[String]) -> Result<Vec<u8>> {
    let names = bundle.names();
    let mut buf = Vec::new();
    for c in comments {
        writeln!(buf, "# {c}")?;
    }
    writeln!(
        buf,
        "iteration,parameter,min,q1,median,q3,max,lower_whisker,upper_whisker,n_outliers"
    )?;
    let stages = bundle
        .records
        .iter()
        .map(|r| (r.iteration, &r.parameters))
        .chain(std::iter::once((bundle.records.len(), &bundle.final_parameters)));
    for (iteration, params) in stages {
        for (name, b) in names.iter().zip(params.iter()) {
            writeln!(
                buf,
                "{iteration},{name},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}",
                b.min,
                b.q1,
                b.median,
                b.q3,
                b.max,
                b.lower_whisker,
                b.upper_whisker,
                b.outliers.len()
            )?;
        }
    }
    Ok(buf)
}

/// Stages every file in a temporary sibling, then renames them all into
/// place. Nothing is renamed unless every file was written.
fn commit(files: Vec<(PathBuf, Vec<u8>)>) -> Result<Vec<PathBuf>> {
    let mut staged = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&dir).map_err(|source| Error::File {
            path: dir.clone(),
            source,
        })?;
        let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|source| Error::File {
            path: dir.clone(),
            source,
        })?;
        tmp.write_all(&bytes)?;
        tmp.as_file().sync_all()?;
        staged.push((tmp, path));
    }
    let mut written = Vec::with_capacity(staged.len());
    for (tmp, path) in staged {
        tmp.persist(&path).map_err(|e| Error::File {
            path: path.clone(),
            source: e.error,
        })?;
        written.push(path);
    }
    Ok(written)
}

fn list(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}
