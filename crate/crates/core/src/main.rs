//! Batch-experiment command line: runs one optimizer/problem configuration
//! (or an alpha0 grid) and writes per-run metric CSVs.

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use rasa::data::RatingsFormat;
use rasa::error::Error;
use rasa::harness::{
    convergence_diagnostics, emit_csv, final_metric, grid_search_alpha0, primary_metric,
    DatasetSource, OptimizerKind, ProblemKind, RunConfig,
};
use rasa::manifold::ManifoldKind;

#[derive(Parser, Debug)]
#[command(name = "rasa", about = "Riemannian adaptive stochastic gradient experiments")]
struct Cli {
    /// pca | ica | mc
    #[arg(long)]
    problem: Option<String>,
    /// rsgd | rasa-l | rasa-r | rasa-lr | rasa-vec | rasa-varbeta
    #[arg(long)]
    optimizer: Option<String>,
    /// stiefel | grassmann (default: grassmann for mc, stiefel otherwise)
    #[arg(long)]
    manifold: Option<String>,
    /// Initial step size, or a comma-separated grid (e.g. 0.5,0.1,0.05)
    #[arg(long)]
    alpha0: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    /// Total iteration count T (required)
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Ridge weight of the per-column least squares (mc)
    #[arg(long)]
    lambda: Option<f64>,
    /// `synth:key=value,...` (keys: N,n,r,condition,noise_sd,density,seed)
    /// or a ratings file path (mc; .csv => comma format, otherwise `::`)
    #[arg(long)]
    dataset: Option<String>,
    /// Output prefix; each run writes `<out>-alpha<value>.csv`
    #[arg(long)]
    out: Option<String>,
    /// Checkpoint spacing (default: iters/200)
    #[arg(long = "record-every")]
    record_every: Option<u64>,
    /// Optional file of `key=value` lines; command-line flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
}

fn load_config_file(path: &PathBuf) -> Result<HashMap<String, String>, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::ConfigError(format!(
            "config line {} is not key=value: `{trimmed}`",
            idx + 1
        )))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, Error>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::ConfigError(format!("bad value for {key}: `{value}` ({e})")))
}

fn parse_dataset(spec: &str, run_seed: u64) -> Result<DatasetSource, Error> {
    if let Some(body) = spec.strip_prefix("synth:") {
        let mut num_points = None;
        let mut n = None;
        let mut r = None;
        let mut condition = 1.0;
        let mut noise_sd = 0.0;
        let mut density = 1.0;
        let mut seed = None;
        for pair in body.split(',').filter(|p| !p.trim().is_empty()) {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                Error::ConfigError(format!("bad dataset pair `{pair}`"))
            })?;
            match key.trim() {
                "N" => num_points = Some(parse_num("N", value)?),
                "n" => n = Some(parse_num("n", value)?),
                "r" => r = Some(parse_num("r", value)?),
                "condition" => condition = parse_num("condition", value)?,
                "noise_sd" => noise_sd = parse_num("noise_sd", value)?,
                "density" => density = parse_num("density", value)?,
                "seed" => seed = Some(parse_num("seed", value)?),
                other => {
                    return Err(Error::ConfigError(format!("unknown dataset key `{other}`")))
                }
            }
        }
        let missing = |k: &str| Error::ConfigError(format!("synthetic dataset needs {k}"));
        Ok(DatasetSource::Synthetic {
            num_points: num_points.ok_or_else(|| missing("N"))?,
            n: n.ok_or_else(|| missing("n"))?,
            r: r.ok_or_else(|| missing("r"))?,
            condition,
            noise_sd,
            density,
            seed: Some(seed.unwrap_or(run_seed)),
        })
    } else {
        let path = PathBuf::from(spec);
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => RatingsFormat::Csv,
            _ => RatingsFormat::DoubleColon,
        };
        Ok(DatasetSource::RatingsFile { path, format })
    }
}

fn build_run_config(cli: &Cli) -> Result<(RunConfig, String), Error> {
    let file = match &cli.config {
        Some(path) => load_config_file(path)?,
        None => HashMap::new(),
    };
    let str_of = |flag: &Option<String>, key: &str| -> Option<String> {
        flag.clone().or_else(|| file.get(key).cloned())
    };
    let problem: ProblemKind = str_of(&cli.problem, "problem")
        .ok_or_else(|| Error::ConfigError("--problem is required".into()))?
        .parse()?;
    let optimizer: OptimizerKind = str_of(&cli.optimizer, "optimizer")
        .ok_or_else(|| Error::ConfigError("--optimizer is required".into()))?
        .parse()?;
    let manifold = match str_of(&cli.manifold, "manifold").as_deref() {
        Some("stiefel") => ManifoldKind::Stiefel,
        Some("grassmann") => ManifoldKind::Grassmann,
        Some(other) => return Err(Error::ConfigError(format!("unknown manifold `{other}`"))),
        None => match problem {
            ProblemKind::Mc => ManifoldKind::Grassmann,
            _ => ManifoldKind::Stiefel,
        },
    };
    let alpha0_text = str_of(&cli.alpha0, "alpha0")
        .ok_or_else(|| Error::ConfigError("--alpha0 is required".into()))?;
    let alpha0 = alpha0_text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num::<f64>("alpha0", s.trim()))
        .collect::<Result<Vec<f64>, Error>>()?;
    let num_or = |flag: Option<String>, key: &str| -> Result<Option<String>, Error> {
        Ok(flag.or_else(|| file.get(key).cloned()))
    };
    let beta = match cli.beta {
        Some(v) => v,
        None => match num_or(None, "beta")? {
            Some(s) => parse_num("beta", &s)?,
            None => 0.99,
        },
    };
    let epsilon = match cli.epsilon {
        Some(v) => v,
        None => match file.get("epsilon") {
            Some(s) => parse_num("epsilon", s)?,
            None => 1e-8,
        },
    };
    let batch_size = match cli.batch_size {
        Some(v) => v,
        None => match file.get("batch_size") {
            Some(s) => parse_num("batch_size", s)?,
            None => 10,
        },
    };
    let iters = match cli.iters {
        Some(v) => v,
        None => match file.get("iters") {
            Some(s) => parse_num("iters", s)?,
            None => return Err(Error::ConfigError("--iters is required".into())),
        },
    };
    let seed = match cli.seed {
        Some(v) => v,
        None => match file.get("seed") {
            Some(s) => parse_num("seed", s)?,
            None => 0,
        },
    };
    let lambda = match cli.lambda {
        Some(v) => v,
        None => match file.get("lambda") {
            Some(s) => parse_num("lambda", s)?,
            None => 0.01,
        },
    };
    let record_every = match cli.record_every {
        Some(v) => Some(v),
        None => match file.get("record_every") {
            Some(s) => Some(parse_num("record_every", s)?),
            None => None,
        },
    };
    let dataset_text = str_of(&cli.dataset, "dataset")
        .ok_or_else(|| Error::ConfigError("--dataset is required".into()))?;
    let dataset = parse_dataset(&dataset_text, seed)?;
    let out = str_of(&cli.out, "out").unwrap_or_else(|| "run".to_string());
    Ok((
        RunConfig {
            problem,
            optimizer,
            manifold,
            alpha0,
            beta,
            epsilon,
            batch_size,
            iters,
            seed,
            lambda,
            dataset,
            record_every,
        },
        out,
    ))
}

fn alpha_suffix(alpha: f64) -> String {
    format!("{alpha}")
}

fn run(cli: &Cli) -> Result<(), Error> {
    let (cfg, out) = build_run_config(cli)?;
    let outcome = grid_search_alpha0(&cfg)?;
    let metric = primary_metric(cfg.problem);
    for (alpha, records) in &outcome.runs {
        let path = PathBuf::from(format!("{out}-alpha{}.csv", alpha_suffix(*alpha)));
        emit_csv(records, &path)?;
        let value = final_metric(records, metric)?;
        println!("alpha0={alpha}: final {metric} = {value:e} -> {}", path.display());
    }
    println!("best alpha0: {}", outcome.best_alpha0);
    if let Some((_, records)) = outcome
        .runs
        .iter()
        .find(|(a, _)| *a == outcome.best_alpha0)
    {
        let diag = convergence_diagnostics(records)?;
        if let Some(&(t, min_g2, ratio)) = diag.checkpoints.last() {
            println!(
                "diagnostics @ t={t}: min ||grad||^2 = {min_g2:e}, rate ratio = {ratio:e}, empirical H = {:e}",
                diag.empirical_h
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::ConfigError(_) | Error::BadBatchSize { .. } => 2,
                Error::ParseError { .. }
                | Error::EmptyFile
                | Error::TooFewRatings { .. }
                | Error::DensityTooLow { .. }
                | Error::Io(_) => 3,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
