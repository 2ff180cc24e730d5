//! The `diffload` command line: argument parsing, command dispatch and the
//! mapping from errors to exit codes.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;

use crate::checkpoint::TrainedModel;
use crate::config::RunConfig;
use crate::data::{format_timestamp, parse_timestamp, Dataset};
use crate::distributions::Family;
use crate::experiment::{self, choose_coverage, dataset_name, forecast_test, load_frame, score};
use crate::inference::{actuals, ForecastResult};
use crate::io::write_atomic;
use crate::metrics::write_report;
use crate::model::Network;
use crate::training::train;
use crate::{Error, Result};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_LOG_FILE: &str = "metrics.log";
pub const TRAIN_REPORT_FILE: &str = "train_report.txt";
pub const CONFIG_DUMP_FILE: &str = "config.txt";
pub const FORECAST_FILE: &str = "forecast.csv";
pub const ACTUALS_FILE: &str = "actuals.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const PERTURB_FILE: &str = "perturb.csv";
pub const CURVE_FILE: &str = "epistemic_curve.csv";
pub const PLOT_FILE: &str = "forecast.svg";

/// 2 for configuration errors, 4 for non-finite numerics, 3 for everything
/// else (data, I/O, checkpoints).
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::NonFinite(_) => 4,
        _ => 3,
    }
}

#[derive(Debug, Default)]
struct Args {
    command: String,
    config: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    forecast: Option<PathBuf>,
    actuals: Option<PathBuf>,
    family: Option<Family>,
    out: Option<PathBuf>,
    overrides: Vec<(String, String)>,
}

const COMMANDS: [(&str, &str); 7] = [
    ("train", "Train a model and write its checkpoint, metrics log and effective config"),
    ("predict", "Forecast the test split with a trained checkpoint"),
    ("evaluate", "Score a forecast CSV against actual values"),
    ("ablate", "Compare the o/o, d/o and d/c variants under shared seeds"),
    ("perturb", "Robustness of one variant to training-label noise"),
    ("epistemic-curve", "Mean epistemic scale against the fraction of training data"),
    ("plot", "Render a forecast and its 75% interval as SVG"),
];

const PATH_FLAGS: [(&str, &str); 5] = [
    ("config", "Flat key = value configuration file"),
    ("checkpoint", "Trained model checkpoint"),
    ("forecast", "Forecast CSV"),
    ("actuals", "CSV with timestamp and load columns"),
    ("out", "Output file, overriding the default under out_dir"),
];

fn command() -> clap::Command {
    use clap::{Arg, ArgAction};
    let mut args: Vec<Arg> = PATH_FLAGS
        .iter()
        .map(|(name, help)| Arg::new(*name).long(*name).value_name("FILE").help(*help).action(ArgAction::Set))
        .collect();
    args.push(Arg::new("family").long("family").value_parser(["cauchy", "gaussian"]).help("Predictive family (evaluate)"));
    for key in RunConfig::KEYS {
        let long = key.replace('_', "-");
        let mut arg = Arg::new(key).long(long.clone()).value_name("VALUE").help("Configuration override").action(ArgAction::Set);
        if long != key {
            arg = arg.alias(key);
        }
        args.push(arg);
    }
    let mut cmd = clap::Command::new("diffload")
        .about("Probabilistic load forecasting with hidden-state diffusion")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in COMMANDS {
        cmd = cmd.subcommand(clap::Command::new(name).about(about).args_override_self(true).args(args.clone()));
    }
    cmd
}

fn parse_args(args: &[String]) -> Result<Args> {
    let matches = command()
        .try_get_matches_from(std::iter::once("diffload".to_string()).chain(args.iter().cloned()))
        .map_err(|e| Error::config(e.render().to_string().trim_end().to_string()))?;
    let (name, m) = matches.subcommand().expect("subcommand required");
    let path = |k: &str| m.get_one::<String>(k).map(PathBuf::from);
    let family = match m.get_one::<String>("family") {
        Some(f) => Some(f.parse()?),
        None => None,
    };
    let overrides = RunConfig::KEYS
        .iter()
        .filter_map(|k| m.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
        .collect();
    Ok(Args {
        command: name.to_string(),
        config: path("config"),
        checkpoint: path("checkpoint"),
        forecast: path("forecast"),
        actuals: path("actuals"),
        out: path("out"),
        family,
        overrides,
    })
}

/// `Some(text)` when the arguments ask for help or version output.
pub fn help_text(args: &[String]) -> Option<String> {
    match command().try_get_matches_from(std::iter::once("diffload".to_string()).chain(args.iter().cloned())) {
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            Some(e.render().to_string())
        }
        _ => None,
    }
}

fn effective_config(a: &Args) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::config(format!("cannot read config {}: {e}", p.display())))?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig::default(),
    };
    for (k, v) in &a.overrides {
        cfg.set(k, v)?;
    }
    cfg.seed = Some(cfg.resolved_seed()?);
    cfg.validate()?;
    Ok(cfg)
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::config(format!("--{flag} is required")))
}

fn out_path(a: &Args, cfg: &RunConfig, default: &str) -> PathBuf {
    a.out.clone().unwrap_or_else(|| cfg.out_dir.join(default))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => Ok(std::fs::create_dir_all(d)?),
        _ => Ok(()),
    }
}

fn save(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    write_atomic(path, bytes)
}

/// Runs one command (`args` excludes the program name) and returns its
/// summary line.
pub fn run(args: &[String]) -> Result<String> {
    let a = parse_args(args)?;
    match a.command.as_str() {
        "train" => cmd_train(&a),
        "predict" => cmd_predict(&a),
        "evaluate" => cmd_evaluate(&a),
        "ablate" => cmd_ablate(&a),
        "perturb" => cmd_perturb(&a),
        "epistemic-curve" => cmd_epistemic_curve(&a),
        "plot" => cmd_plot(&a),
        other => unreachable!("clap admitted unknown command {other}"),
    }
}

fn cmd_train(a: &Args) -> Result<String> {
    let cfg = effective_config(a)?;
    let seed = cfg.resolved_seed()?;
    let frame = load_frame(&cfg, seed)?;
    let ds = Dataset::prepare(&frame, &cfg.data_config(seed))?;
    let net = Network::new(cfg.model_config(ds.input_dim()))?;
    let (params, report) = train(&net, &ds.train, &ds.val, &cfg.train_config(seed), |epoch, loss, rmse| {
        eprintln!("epoch {epoch} loss {loss:.6} val_rmse {rmse:.6}");
    })?;
    let model = TrainedModel::new(net, params, ds.standardizer.clone(), cfg.input_len)?;

    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir)?;
    let ckpt = a.out.clone().unwrap_or_else(|| dir.join(CHECKPOINT_FILE));
    ensure_parent(&ckpt)?;
    model.save(&ckpt)?;
    save(&dir.join(METRICS_LOG_FILE), report.metrics_log().as_bytes())?;
    let summary = format!(
        "epochs = {}\nbest_epoch = {}\nbest_val_rmse = {}\nstop_reason = {}\nwall_time_secs = {:.3}\n",
        report.train_loss.len(),
        report.best_epoch,
        report.best_val_rmse(),
        report.stop_reason.name(),
        report.wall_time_secs
    );
    save(&dir.join(TRAIN_REPORT_FILE), summary.as_bytes())?;
    save(&dir.join(CONFIG_DUMP_FILE), cfg.dump().as_bytes())?;
    Ok(format!(
        "trained {} epochs={} best_epoch={} val_rmse={:.6} stop={} checkpoint={}",
        cfg.variant,
        report.train_loss.len(),
        report.best_epoch,
        report.best_val_rmse(),
        report.stop_reason.name(),
        ckpt.display()
    ))
}

fn cmd_predict(a: &Args) -> Result<String> {
    let ckpt = required(&a.checkpoint, "checkpoint")?;
    let model = TrainedModel::load(ckpt).map_err(|e| match e {
        Error::Io(io) => Error::data(format!("cannot load checkpoint {}: {io}", ckpt.display())),
        other => other,
    })?;
    let mut cfg = effective_config(a)?;
    cfg.input_len = model.input_len;
    cfg.horizon = model.config().horizon;
    cfg.noise_kind = None;
    let seed = cfg.resolved_seed()?;
    let frame = load_frame(&cfg, seed)?;
    let ds = Dataset::prepare_with(&frame, &cfg.data_config(seed), Some(&model.standardizer))?;
    let (cov, _) = choose_coverage(&model, &ds, &cfg, seed)?;
    let forecast = forecast_test(&model, &ds, &cfg, cov, seed)?;

    let path = out_path(a, &cfg, FORECAST_FILE);
    let mut buf = Vec::new();
    forecast.write_csv(&mut buf)?;
    save(&path, &buf)?;

    let mut seen = std::collections::BTreeMap::new();
    let y = actuals(&model, &ds.test);
    for (w, vals) in y.iter().enumerate() {
        for (t, v) in ds.test.target_timestamps(w).iter().zip(vals) {
            seen.insert(*t, *v);
        }
    }
    let mut text = String::from("timestamp,load\n");
    for (t, v) in &seen {
        text.push_str(&format!("{},{v:?}\n", format_timestamp(t)));
    }
    let actuals_path = path.with_file_name(ACTUALS_FILE);
    save(&actuals_path, text.as_bytes())?;
    Ok(format!(
        "predicted {} steps over {} windows with {} passes coverage={cov} forecast={} actuals={}",
        forecast.len(),
        ds.test.len(),
        cfg.samples,
        path.display(),
        actuals_path.display()
    ))
}

/// Reads `timestamp` and `load` columns of a CSV; other columns are ignored.
pub fn read_actuals(path: &Path) -> Result<Vec<(NaiveDateTime, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::data(format!("cannot read actuals {}: {e}", path.display())))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::data(format!("actuals lack a `{name}` column")))
    };
    let (tc, lc) = (col("timestamp")?, col("load")?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let ts = rec.get(tc).unwrap_or("");
        let t = parse_timestamp(ts).ok_or_else(|| Error::data(format!("actuals row {}: bad timestamp {ts:?}", i + 1)))?;
        let v: f64 = rec
            .get(lc)
            .and_then(|v| v.parse().ok())
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::data(format!("actuals row {}: bad load value", i + 1)))?;
        out.push((t, v));
    }
    Ok(out)
}

fn read_forecast(path: &Path) -> Result<ForecastResult> {
    let f = std::fs::File::open(path).map_err(|e| Error::data(format!("cannot open forecast {}: {e}", path.display())))?;
    ForecastResult::read_csv(std::io::BufReader::new(f))
}

/// Actual value for every forecast step, matched by timestamp.
pub fn join_actuals(forecast: &ForecastResult, actuals: &[(NaiveDateTime, f64)]) -> Result<Vec<f64>> {
    let map: HashMap<NaiveDateTime, f64> = actuals.iter().copied().collect();
    forecast
        .timestamps
        .iter()
        .map(|t| {
            map.get(t)
                .copied()
                .ok_or_else(|| Error::data(format!("no actual value for forecast timestamp {}", format_timestamp(t))))
        })
        .collect()
}

/// Family whose 75% interval half-width ratio to the combined scale best
/// matches the forecast.
pub fn infer_family(forecast: &ForecastResult) -> Result<Family> {
    let (_, hi) = forecast
        .interval(0.75)
        .ok_or_else(|| Error::data("forecast lacks the 75% interval columns"))?;
    let t = (0..forecast.len())
        .find(|&t| forecast.sigma_bar[t] > 0.0)
        .ok_or_else(|| Error::data("cannot infer the family: every combined scale is zero"))?;
    let ratio = (hi[t] - forecast.loc[t]) / forecast.sigma_bar[t];
    let gap = |f: Family| -> Result<f64> {
        let p = crate::distributions::StableParams::new(f, 0.0, 1.0)?;
        Ok((crate::distributions::stable_quantile(0.875, &p)? - ratio).abs())
    };
    Ok(if gap(Family::Cauchy)? <= gap(Family::Gaussian)? {
        Family::Cauchy
    } else {
        Family::Gaussian
    })
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn cmd_evaluate(a: &Args) -> Result<String> {
    let cfg = effective_config(a)?;
    let fpath = required(&a.forecast, "forecast")?;
    let apath = required(&a.actuals, "actuals")?;
    let forecast = read_forecast(fpath)?;
    let y = join_actuals(&forecast, &read_actuals(apath)?)?;
    let family = match a.family {
        Some(f) => f,
        None => infer_family(&forecast)?,
    };
    let scores = score(&forecast, &y, family)?;
    let rows = scores.rows(&stem(apath), &stem(fpath));
    let path = out_path(a, &cfg, REPORT_FILE);
    let mut buf = Vec::new();
    write_report(&mut buf, &rows)?;
    save(&path, &buf)?;
    Ok(format!(
        "evaluated {} steps family={} mape={:.4} crps={:.4} report={}",
        y.len(),
        family.name(),
        scores.mape,
        scores.crps,
        path.display()
    ))
}

fn cmd_ablate(a: &Args) -> Result<String> {
    let cfg = effective_config(a)?;
    let rows = experiment::ablate(&cfg)?;
    let path = out_path(a, &cfg, ABLATION_FILE);
    let mut buf = Vec::new();
    experiment::write_ablation(&mut buf, &rows)?;
    save(&path, &buf)?;
    let parts: Vec<String> = rows
        .iter()
        .map(|r| format!("{}={:.4}", r.variant, r.median_of(|s| s.mape)))
        .collect();
    Ok(format!(
        "ablation on {} over {} seeds median mape {} report={}",
        dataset_name(&cfg),
        cfg.seeds,
        parts.join(" "),
        path.display()
    ))
}

fn cmd_perturb(a: &Args) -> Result<String> {
    let cfg = effective_config(a)?;
    let rows = experiment::perturb(&cfg)?;
    let path = out_path(a, &cfg, PERTURB_FILE);
    let mut buf = Vec::new();
    experiment::write_perturb(&mut buf, &rows)?;
    save(&path, &buf)?;
    let worst = rows[1..]
        .iter()
        .map(|r| r.degradation(&rows[0]).0)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(format!(
        "perturbation study of {} with {} cells worst mape degradation={:.4} report={}",
        cfg.variant,
        rows.len(),
        worst,
        path.display()
    ))
}

fn cmd_epistemic_curve(a: &Args) -> Result<String> {
    let cfg = effective_config(a)?;
    let curve = experiment::epistemic_curve(&cfg)?;
    let path = out_path(a, &cfg, CURVE_FILE);
    let mut buf = Vec::new();
    curve.write_csv(&mut buf)?;
    save(&path, &buf)?;
    let med: Vec<String> = curve.median_curve().iter().map(|v| format!("{v:.4}")).collect();
    Ok(format!(
        "epistemic curve over fractions {:?} median sigma_epistemic [{}] report={}",
        curve.fractions,
        med.join(", "),
        path.display()
    ))
}

fn cmd_plot(a: &Args) -> Result<String> {
    let cfg = effective_config(a)?;
    let forecast = read_forecast(required(&a.forecast, "forecast")?)?;
    let actual = match &a.actuals {
        Some(p) => read_actuals(p)?,
        None => Vec::new(),
    };
    let svg = crate::plot::render_svg(&forecast, &actual)?;
    let path = out_path(a, &cfg, PLOT_FILE);
    save(&path, svg.as_bytes())?;
    Ok(format!("plotted {} steps to {}", forecast.len(), path.display()))
}
