use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diffload::checkpoint::TrainedModel;
use diffload::config::RunConfig;
use diffload::data::Dataset;
use diffload::experiment::load_frame;
use diffload::inference::ForecastResult;
use diffload::training::validation_rmse;

const SMALL: &str = "--days 30 --input-len 48 --hidden 8 --max-epochs 3 --seed 11";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_diffload"));
    c.env_remove("DIFFLOAD_SEED");
    c
}

fn run(args: &str, extra: &[&str]) -> Output {
    bin().args(args.split_whitespace()).args(extra).output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(out.status.success(), "status {:?}\nstdout {stdout}\nstderr {}", out.status, String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout.lines().count(), 1, "one summary line expected: {stdout:?}");
    stdout
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn train_small(dir: &Path) -> PathBuf {
    ok(&run(&format!("train {SMALL}"), &["--out-dir", p(dir)]));
    dir.join("model.ckpt")
}

#[test]
fn train_writes_artifacts_that_reload_to_the_same_validation_rmse() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_small(dir.path());
    for f in ["model.ckpt", "metrics.log", "train_report.txt", "config.txt"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let report = std::fs::read_to_string(dir.path().join("train_report.txt")).unwrap();
    let best: f64 = report
        .lines()
        .find_map(|l| l.strip_prefix("best_val_rmse = "))
        .unwrap()
        .parse()
        .unwrap();

    let model = TrainedModel::load(&ckpt).unwrap();
    let cfg = RunConfig::from_text(&std::fs::read_to_string(dir.path().join("config.txt")).unwrap()).unwrap();
    let seed = cfg.resolved_seed().unwrap();
    let frame = load_frame(&cfg, seed).unwrap();
    let ds = Dataset::prepare(&frame, &cfg.data_config(seed)).unwrap();
    assert_eq!(ds.standardizer, model.standardizer);
    let again = validation_rmse(&model.network, &model.params, &ds.val, seed).unwrap();
    assert_eq!(again, best);
}

#[test]
fn same_seed_gives_identical_metrics_logs_and_config_dump_round_trips() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train_small(a.path());
    train_small(b.path());
    let log = |d: &Path| std::fs::read(d.join("metrics.log")).unwrap();
    assert_eq!(log(a.path()), log(b.path()));
    assert_eq!(String::from_utf8(log(a.path())).unwrap().lines().count(), 3);

    // Re-running from the dumped config reproduces the run.
    let dump = a.path().join("config.txt");
    ok(&run("train", &["--config", p(&dump), "--out-dir", p(c.path())]));
    assert_eq!(log(a.path()), log(c.path()));
    let redump = std::fs::read_to_string(c.path().join("config.txt")).unwrap();
    let original = std::fs::read_to_string(&dump).unwrap();
    assert_eq!(redump.replace(p(c.path()), "DIR"), original.replace(p(a.path()), "DIR"));
}

#[test]
fn seed_falls_back_to_environment() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = "train --days 30 --input-len 48 --hidden 8 --max-epochs 2";
    ok(&bin().args(args.split_whitespace()).args(["--out-dir", p(a.path())]).env("DIFFLOAD_SEED", "5").output().unwrap());
    ok(&run(args, &["--out-dir", p(b.path()), "--seed", "5"]));
    let dump = std::fs::read_to_string(a.path().join("config.txt")).unwrap();
    assert!(dump.contains("seed = 5\n"));
    assert_eq!(std::fs::read(a.path().join("metrics.log")).unwrap(), std::fs::read(b.path().join("metrics.log")).unwrap());
    let bad = bin().args(args.split_whitespace()).env("DIFFLOAD_SEED", "x").output().unwrap();
    assert_eq!(code(&bad), 2);
}

#[test]
fn config_errors_exit_2_naming_the_key() {
    let out = run("train --bogus_key 3", &[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    std::fs::write(&cfg, "hidden = 8\nlearning_rat = 0.1\n").unwrap();
    let out = run("train", &["--config", p(&cfg)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));

    assert_eq!(code(&run("train --hidden abc", &[])), 2);
    assert_eq!(code(&run("", &[])), 2);
    assert_eq!(code(&run("explode", &[])), 2);
}

#[test]
fn repeated_flag_takes_the_last_value() {
    let out = run(&format!("train {SMALL} --max-epochs 1"), &["--out-dir", p(tempfile::tempdir().unwrap().path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("epochs=1 "));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ckpt");
    assert_eq!(code(&run("predict", &["--checkpoint", p(&missing)])), 3);
    assert_eq!(code(&run("train", &["--data", p(&dir.path().join("none.csv"))])), 3);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "timestamp,load\n2021-01-01T00:00:00,abc\n").unwrap();
    assert_eq!(code(&run("train", &["--data", p(&bad)])), 3);
}

#[test]
fn non_finite_training_exits_4() {
    let out = run(&format!("train {SMALL}"), &["--learning-rate", "1e30", "--out-dir", p(tempfile::tempdir().unwrap().path())]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn predict_evaluate_plot_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ckpt = train_small(d);
    let forecast = d.join("forecast.csv");
    let actuals = d.join("actuals.csv");

    ok(&run("predict --days 30 --seed 3 --samples 100", &["--checkpoint", p(&ckpt), "--out-dir", p(d)]));
    let text = std::fs::read_to_string(&forecast).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "timestamp,loc,sigma_aleatoric,sigma_epistemic,sigma_bar,lo25,hi25,lo50,hi50,lo75,hi75"
    );
    let first = text.clone();
    ok(&run("predict --days 30 --seed 3 --samples 100", &["--checkpoint", p(&ckpt), "--out-dir", p(d)]));
    assert_eq!(std::fs::read_to_string(&forecast).unwrap(), first);

    let single = d.join("single.csv");
    ok(&run("predict --days 30 --seed 3 --samples 1", &["--checkpoint", p(&ckpt), "--out", p(&single)]));
    let fr = ForecastResult::read_csv(std::fs::File::open(&single).unwrap()).unwrap();
    assert!(fr.sigma_epistemic.iter().all(|v| *v == 0.0));

    let report = d.join("report.csv");
    ok(&run("evaluate", &["--forecast", p(&forecast), "--actuals", p(&actuals), "--out", p(&report)]));
    let rows = std::fs::read_to_string(&report).unwrap();
    assert_eq!(rows.lines().next().unwrap(), "metric,dataset,variant,value");
    for m in ["mape", "mae", "crps", "winkler25", "winkler50", "winkler75", "coverage25", "coverage50", "coverage75"] {
        assert!(rows.lines().any(|l| l.starts_with(&format!("{m},"))), "{m}");
    }

    let svg = d.join("plot.svg");
    ok(&run("plot", &["--forecast", p(&forecast), "--actuals", p(&actuals), "--out", p(&svg)]));
    let bytes = std::fs::read(&svg).unwrap();
    roxmltree::Document::parse(std::str::from_utf8(&bytes).unwrap()).unwrap();
    ok(&run("plot", &["--forecast", p(&forecast), "--actuals", p(&actuals), "--out", p(&svg)]));
    assert_eq!(std::fs::read(&svg).unwrap(), bytes);
}

fn write_forecast(path: &Path, rows: &[(&str, f64)]) {
    let mut s = String::from("timestamp,loc,sigma_aleatoric,sigma_epistemic,sigma_bar,lo25,hi25,lo50,hi50,lo75,hi75\n");
    for (t, v) in rows {
        // Cauchy quantiles at unit combined scale.
        s.push_str(&format!("{t},{v},1,0,1,{},{},{},{},{},{}\n", v - 0.414, v + 0.414, v - 1.0, v + 1.0, v - 2.414, v + 2.414));
    }
    std::fs::write(path, s).unwrap();
}

#[test]
fn evaluate_perfect_forecast_and_rejects_unmatched_timestamps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (f, a, r) = (d.join("f.csv"), d.join("a.csv"), d.join("r.csv"));
    write_forecast(&f, &[("2021-01-01T00:00:00", 10.0), ("2021-01-01T01:00:00", 12.0)]);
    std::fs::write(&a, "timestamp,load,temp\n2021-01-01T01:00:00,12,3\n2021-01-01T00:00:00,10,4\n").unwrap();
    let line = ok(&run("evaluate", &["--forecast", p(&f), "--actuals", p(&a), "--out", p(&r)]));
    assert!(line.contains("family=cauchy"), "{line}");
    let rows = std::fs::read_to_string(&r).unwrap();
    assert!(rows.contains("mape,a,f,0\n"), "{rows}");
    assert!(rows.contains("mae,a,f,0\n"), "{rows}");

    std::fs::write(&a, "timestamp,load\n2021-01-01T00:00:00,10\n2021-01-01T02:00:00,12\n").unwrap();
    let out = run("evaluate", &["--forecast", p(&f), "--actuals", p(&a), "--out", p(&r)]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("2021-01-01T01:00:00"));
}

fn path_points(d: &str) -> Vec<(f64, f64)> {
    d.split(['M', 'L', 'Z'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (x, y) = s.split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect()
}

#[test]
fn plot_band_lies_between_interval_paths() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (f, a, s) = (d.join("f.csv"), d.join("a.csv"), d.join("p.svg"));
    let rows: Vec<(String, f64)> = (0..24).map(|h| (format!("2021-01-01T{h:02}:00:00"), 10.0 + (h as f64 * 0.5).sin())).collect();
    let refs: Vec<(&str, f64)> = rows.iter().map(|(t, v)| (t.as_str(), *v)).collect();
    write_forecast(&f, &refs);
    let mut act = String::from("timestamp,load\n");
    for (t, v) in &rows {
        act.push_str(&format!("{t},{}\n", v + 0.3));
    }
    std::fs::write(&a, act).unwrap();
    ok(&run("plot", &["--forecast", p(&f), "--actuals", p(&a), "--out", p(&s)]));
    let text = std::fs::read_to_string(&s).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap();
    let root = doc.root_element();
    assert_eq!(root.attribute("width"), Some("1200"));
    assert_eq!(root.attribute("height"), Some("400"));
    let path = |id: &str| {
        let node = doc.descendants().find(|n| n.attribute("id") == Some(id)).unwrap_or_else(|| panic!("{id}"));
        path_points(node.attribute("d").unwrap())
    };
    let (band, lo, hi) = (path("band75"), path("lo75"), path("hi75"));
    assert_eq!(band.len(), 2 * rows.len());
    assert_eq!(path("actual").len(), rows.len());
    assert_eq!(path("forecast").len(), rows.len());
    // SVG y grows downward: the upper bound has the smaller coordinate.
    for (i, (x, y)) in band.iter().enumerate() {
        let k = if i < rows.len() { i } else { 2 * rows.len() - 1 - i };
        assert_eq!(*x, lo[k].0);
        assert!(hi[k].1 - 1e-9 <= *y && *y <= lo[k].1 + 1e-9);
    }
    for k in 0..rows.len() {
        assert!(hi[k].1 < lo[k].1);
    }

    let empty = d.join("e.csv");
    std::fs::write(&empty, "timestamp,loc,sigma_aleatoric,sigma_epistemic,sigma_bar,lo25,hi25,lo50,hi50,lo75,hi75\n").unwrap();
    assert_eq!(code(&run("plot", &["--forecast", p(&empty), "--out", p(&s)])), 3);
}

#[test]
fn ablate_and_perturb_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let abl = d.join("abl.csv");
    ok(&run(&format!("ablate {SMALL} --max-epochs 1 --samples 5"), &["--out", p(&abl)]));
    let text = std::fs::read_to_string(&abl).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("variant,family,seeds,mape"));
    assert!(lines[1].starts_with("o/o,gaussian,"));
    assert!(lines[2].starts_with("d/o,gaussian,"));
    assert!(lines[3].starts_with("d/c,cauchy,"));
    let abl2 = d.join("abl2.csv");
    ok(&run(&format!("ablate {SMALL} --max-epochs 1 --samples 5"), &["--out", p(&abl2)]));
    assert_eq!(std::fs::read(&abl2).unwrap(), text.as_bytes());

    let per = d.join("per.csv");
    ok(&run(&format!("perturb {SMALL} --max-epochs 1 --samples 5"), &["--out", p(&per)]));
    let text = std::fs::read_to_string(&per).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 8);
    assert_eq!(lines[0], "noise,rate,mape,winkler75,mape_degradation,winkler75_degradation");
    assert!(lines[1].starts_with("clean,0,"));
    for kind in ["constant", "missing", "gaussian"] {
        for rate in ["0.1", "0.2"] {
            assert!(lines.iter().any(|l| l.starts_with(&format!("{kind},{rate},"))), "{kind} {rate}");
        }
    }
}

#[test]
fn epistemic_curve_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("curve.csv");
    ok(&run(
        "epistemic-curve --days 40 --input-len 48 --hidden 8 --max-epochs 1 --samples 5 --seeds 2 --fractions 0.5,1",
        &["--out", p(&out)],
    ));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("fraction,seed,mean_sigma_epistemic\n"), "{text}");
    assert_eq!(text.lines().count(), 1 + 2 * 2 + 2);
}
