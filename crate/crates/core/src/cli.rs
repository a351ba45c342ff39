//! Command-line front end: `synth | train | evaluate | predict |
//! graph-export | moran | sweep`.
//!
//! Every output file starts with a `# config_hash=<hash>` comment; errors
//! surface as a single `error: ...` line on stderr with a nonzero exit
//! (handled by the binary wrapper).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::config::{fnv1a, RunConfig};
use crate::data::{
    self, load_csv, prepare_with_stats, synth, write_graph_csv, write_readings_csv,
    write_stations_csv, Dataset,
};
use crate::model::{Checkpoint, CheckpointMeta, Model};
use crate::moran::{knn_weights, local_moran};
use crate::tensor::Tape;
use crate::timefmt::{format_iso, parse_iso};
use crate::train::{evaluate, train, EvalReport};
use crate::{Error, Result};

const USAGE: &str = "usage: aircast <command> [flags]

commands:
  synth         --nodes N --steps S --graph ring|clusters|random --seed K --out-dir DIR
  train         --config FILE --data-dir DIR --out-dir DIR
  evaluate      --checkpoint FILE --data-dir DIR [--out FILE]
  predict       --checkpoint FILE --data-dir DIR --at TIMESTAMP [--out FILE]
  graph-export  --checkpoint FILE --data-dir DIR --out FILE
  moran         --data-dir DIR --k K [--feature NAME] --out FILE
  sweep         --config FILE --data-dir DIR --out-dir DIR --param h|b|lambda --values V1,V2,...
";

/// Entry point used by the binary; `args` excludes the program name.
pub fn run(args: &[String]) -> Result<()> {
    let Some((cmd, rest)) = args.split_first() else {
        return Err(Error::invalid("cli", "missing subcommand (try --help)"));
    };
    match cmd.as_str() {
        "--help" | "-h" | "help" => {
            println!("{USAGE}");
            Ok(())
        }
        "synth" => cmd_synth(rest),
        "train" => cmd_train(rest),
        "evaluate" => cmd_evaluate(rest),
        "predict" => cmd_predict(rest),
        "graph-export" => cmd_graph_export(rest),
        "moran" => cmd_moran(rest),
        "sweep" => cmd_sweep(rest),
        other => Err(Error::invalid(
            "cli",
            format!("unknown subcommand '{other}' (try --help)"),
        )),
    }
}

// ── flag parsing ─────────────────────────────────────────────────────

struct Flags(HashMap<String, String>);

impl Flags {
    fn parse(args: &[String], allowed: &[&str]) -> Result<Flags> {
        let mut map = HashMap::new();
        let mut it = args.iter();
        while let Some(token) = it.next() {
            let Some(name) = token.strip_prefix("--") else {
                return Err(Error::invalid(
                    "cli",
                    format!("unexpected argument '{token}'"),
                ));
            };
            if !allowed.contains(&name) {
                return Err(Error::invalid("cli", format!("unknown flag '--{name}'")));
            }
            let value = it
                .next()
                .ok_or_else(|| Error::invalid("cli", format!("flag '--{name}' needs a value")))?;
            if map.insert(name.to_string(), value.clone()).is_some() {
                return Err(Error::invalid("cli", format!("flag '--{name}' repeated")));
            }
        }
        Ok(Flags(map))
    }

    fn required(&self, name: &str) -> Result<&str> {
        self.0
            .get(name)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::invalid("cli", format!("missing required flag '--{name}'")))
    }

    fn optional(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(|s| s.as_str())
    }

    fn parse_value<T: std::str::FromStr>(&self, name: &str) -> Result<T> {
        let raw = self.required(name)?;
        raw.parse()
            .map_err(|_| Error::invalid("cli", format!("invalid value '{raw}' for '--{name}'")))
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path.display().to_string(), e))
}

// ── synth ────────────────────────────────────────────────────────────

fn cmd_synth(args: &[String]) -> Result<()> {
    let flags = Flags::parse(args, &["nodes", "steps", "graph", "seed", "out-dir"])?;
    let nodes: usize = flags.parse_value("nodes")?;
    let steps: usize = flags.parse_value("steps")?;
    let kind: synth::GraphKind = flags.parse_value("graph")?;
    let seed: u64 = flags.parse_value("seed")?;
    let out_dir = PathBuf::from(flags.required("out-dir")?);
    ensure_dir(&out_dir)?;
    let hash = fnv1a(
        format!(
            "graph={}\nnodes={nodes}\nseed={seed}\nsteps={steps}\n",
            flags.required("graph")?
        )
        .as_bytes(),
    );
    let d = synth::generate(nodes, steps, seed, kind)?;
    write_stations_csv(&out_dir.join("stations.csv"), &d.stations, &hash)?;
    write_readings_csv(&out_dir.join("readings.csv"), &d.stations, &d.frame, &hash)?;
    write_graph_csv(
        &out_dir.join("true_graph.csv"),
        &d.stations,
        d.truth.weights(),
        false,
        &hash,
    )?;
    println!(
        "wrote stations.csv, readings.csv, true_graph.csv to {}",
        out_dir.display()
    );
    Ok(())
}

// ── train ────────────────────────────────────────────────────────────

pub fn load_dataset(cfg: &RunConfig, data_dir: &Path) -> Result<Dataset> {
    let (table, frame) = load_csv(&data_dir.join("stations.csv"), &data_dir.join("readings.csv"))?;
    prepare_with_stats(table, frame, &cfg.pipeline_config(), None)
}

fn cmd_train(args: &[String]) -> Result<()> {
    let flags = Flags::parse(args, &["config", "data-dir", "out-dir"])?;
    let cfg = RunConfig::load(Path::new(flags.required("config")?))?;
    let data_dir = resolve_dir(&flags, "data-dir", cfg.data_dir.as_deref())?;
    let out_dir = resolve_dir(&flags, "out-dir", cfg.out_dir.as_deref())?;
    ensure_dir(&out_dir)?;
    run_training(&cfg, &data_dir, &out_dir).map(|(report, _)| {
        println!(
            "trained {} epochs ({} steps); best epoch {}; checkpoint and log in {}",
            report.log.len(),
            report.steps,
            report.best_epoch,
            out_dir.display()
        );
    })
}

fn resolve_dir(flags: &Flags, name: &str, from_cfg: Option<&str>) -> Result<PathBuf> {
    match flags.optional(name).or(from_cfg) {
        Some(p) => Ok(PathBuf::from(p)),
        None => Err(Error::invalid(
            "cli",
            format!("missing required flag '--{name}'"),
        )),
    }
}

/// Shared by `train` and `sweep` (and the C bindings): fit on the data
/// dir, write checkpoint, log, and test-split evaluation; returns the
/// report and the test metrics.
pub fn run_training(cfg: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<(crate::train::TrainReport, EvalReport)> {
    let hash = cfg.hash();
    let ds = load_dataset(cfg, data_dir)?;
    let n = ds.stations.len();
    let c = ds.frame.n_features();
    let model_cfg = cfg.model_config(n, c);
    let uncertainty = cfg.loss_mode == "uncertainty";
    let mut model = Model::new(model_cfg, uncertainty, cfg.seed)?;
    let report = train(&mut model, &ds, &cfg.train_config(), 0)?;

    let meta = CheckpointMeta {
        config_hash: hash.clone(),
        uncertainty,
        lambda: cfg.lambda,
        moran_k: cfg.moran_k,
        a0_sigma_km: cfg.a0_sigma_km,
        a0_threshold: cfg.a0_threshold,
        drop_missing_frac: cfg.drop_missing_frac,
        trained_epochs: report.log.len(),
        features: ds.frame.features.clone(),
        stats: ds.stats.clone(),
    };
    Checkpoint::from_model(&model, meta).save(&out_dir.join("model.ckpt"))?;

    let mut log = format!("# config_hash={hash}\nepoch,train_loss,val_mae,val_rmse,lambda_or_sigmas\n");
    for row in &report.log {
        log.push_str(&format!(
            "{},{},{},{},{}\n",
            row.epoch, row.train_loss, row.val_mae, row.val_rmse, row.gate_desc
        ));
    }
    write_text(&out_dir.join("train_log.csv"), &log)?;

    let mut test_report = evaluate(&model, &ds, &ds.test)?;
    test_report.config_hash = hash;
    write_eval_csv(&out_dir.join("evaluation.csv"), &test_report)?;
    Ok((report, test_report))
}

pub fn write_eval_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut out = format!("# config_hash={}\nhorizon,mae,rmse\n", report.config_hash);
    for (i, (mae, rmse)) in report
        .per_horizon_mae
        .iter()
        .zip(&report.per_horizon_rmse)
        .enumerate()
    {
        out.push_str(&format!("{},{},{}\n", i + 1, mae, rmse));
    }
    out.push_str(&format!("all,{},{}\n", report.mae, report.rmse));
    write_text(path, &out)
}

// ── evaluate / predict ───────────────────────────────────────────────

/// Loads a checkpoint plus the data dir it should run against, normalizing
/// with the stored statistics.
pub fn load_model_and_data(checkpoint: &Path, data_dir: &Path) -> Result<(Model, Checkpoint, Dataset)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (table, frame) = load_csv(&data_dir.join("stations.csv"), &data_dir.join("readings.csv"))?;
    if table.len() != ckpt.cfg.n_nodes {
        return Err(Error::invalid(
            "evaluate",
            format!(
                "station count mismatch: checkpoint expects {}, data has {}",
                ckpt.cfg.n_nodes,
                table.len()
            ),
        ));
    }
    if frame.features != ckpt.meta.features {
        return Err(Error::invalid(
            "evaluate",
            format!(
                "feature mismatch: checkpoint expects {:?}, data has {:?}",
                ckpt.meta.features, frame.features
            ),
        ));
    }
    let pc = data::PipelineConfig {
        t_in: ckpt.cfg.in_steps,
        horizon: ckpt.cfg.out_steps,
        target: ckpt.cfg.target_feature,
        moran_k: ckpt.meta.moran_k,
        a0_sigma_km: ckpt.meta.a0_sigma_km,
        a0_threshold: ckpt.meta.a0_threshold,
        drop_missing_frac: ckpt.meta.drop_missing_frac,
    };
    let ds = prepare_with_stats(table, frame, &pc, Some(&ckpt.meta.stats))?;
    let model = ckpt.into_model()?;
    Ok((model, ckpt, ds))
}

fn cmd_evaluate(args: &[String]) -> Result<()> {
    let flags = Flags::parse(args, &["checkpoint", "data-dir", "out"])?;
    let ckpt_path = PathBuf::from(flags.required("checkpoint")?);
    let data_dir = PathBuf::from(flags.required("data-dir")?);
    let (model, ckpt, ds) = load_model_and_data(&ckpt_path, &data_dir)?;
    let mut report = evaluate(&model, &ds, &ds.test)?;
    report.config_hash = ckpt.meta.config_hash.clone();
    let out = flags
        .optional("out")
        .map(PathBuf::from)
        .unwrap_or_else(|| ckpt_path.with_file_name("evaluation.csv"));
    write_eval_csv(&out, &report)?;
    println!("horizon,mae,rmse");
    for (i, (mae, rmse)) in report
        .per_horizon_mae
        .iter()
        .zip(&report.per_horizon_rmse)
        .enumerate()
    {
        println!("{},{},{}", i + 1, mae, rmse);
    }
    println!("all,{},{}", report.mae, report.rmse);
    eprintln!("evaluated {} test windows in {:.2}s", ds.test.starts.len(), report.runtime_s);
    Ok(())
}

fn cmd_predict(args: &[String]) -> Result<()> {
    let flags = Flags::parse(args, &["checkpoint", "data-dir", "at", "out"])?;
    let ckpt_path = PathBuf::from(flags.required("checkpoint")?);
    let data_dir = PathBuf::from(flags.required("data-dir")?);
    let at = parse_iso(flags.required("at")?)?;
    let (model, ckpt, ds) = load_model_and_data(&ckpt_path, &data_dir)?;
    let t_in = model.cfg.in_steps;
    let step = ds.frame.step_of(at).ok_or_else(|| {
        Error::invalid(
            "predict",
            format!("timestamp {} is not on the data grid", format_iso(at)),
        )
    })?;
    if step + 1 < t_in {
        return Err(Error::invalid(
            "predict",
            format!(
                "window ending at {} needs {} past steps, only {} available",
                format_iso(at),
                t_in,
                step + 1
            ),
        ));
    }
    let start = step + 1 - t_in;
    let pred = crate::train::predict_window(&model, &ds, start)?;
    let tau = model.cfg.out_steps;
    let mut out = format!(
        "# config_hash={}\nstation_id,timestamp,value\n",
        ckpt.meta.config_hash
    );
    for (node, station) in ds.stations.stations.iter().enumerate() {
        for s in 0..tau {
            let ts = at + ds.frame.interval * (s as i64 + 1);
            out.push_str(&format!(
                "{},{},{}\n",
                station.id,
                format_iso(ts),
                pred[node * tau + s]
            ));
        }
    }
    print!("{out}");
    if let Some(path) = flags.optional("out") {
        write_text(Path::new(path), &out)?;
    }
    Ok(())
}

// ── graph export ─────────────────────────────────────────────────────

/// Fused adjacency averaged over up to 64 evenly spaced training windows.
pub fn fused_adjacency_mean(model: &Model, ds: &Dataset) -> Result<Vec<f64>> {
    let n = model.cfg.n_nodes;
    let (t, c) = (model.cfg.in_steps, model.cfg.in_features);
    let starts = &ds.train.starts;
    if starts.is_empty() {
        return Err(Error::invalid("graph-export", "no training windows"));
    }
    let stride = (starts.len() / 64).max(1);
    let chosen: Vec<usize> = starts.iter().copied().step_by(stride).take(64).collect();
    let mut acc = vec![0.0; n * n];
    for &start in &chosen {
        let tape = Tape::new();
        let bind = model.bind(&tape, false);
        let a0 = ds.a0.to_tensor(&tape);
        let mut x = vec![0.0; n * t * c];
        for node in 0..n {
            for step in 0..t {
                for f in 0..c {
                    x[(node * t + step) * c + f] = ds.frame.value(start + step, node, f);
                }
            }
        }
        let xt = tape.constant(x, &[n, t, c])?;
        let out = model.forward(&bind, &xt, &a0)?;
        for (a, v) in acc.iter_mut().zip(out.a_fused.data()) {
            *a += v;
        }
    }
    for a in acc.iter_mut() {
        *a /= chosen.len() as f64;
    }
    Ok(acc)
}

fn cmd_graph_export(args: &[String]) -> Result<()> {
    let flags = Flags::parse(args, &["checkpoint", "data-dir", "out"])?;
    let ckpt_path = PathBuf::from(flags.required("checkpoint")?);
    let data_dir = PathBuf::from(flags.required("data-dir")?);
    let out = PathBuf::from(flags.required("out")?);
    let (model, ckpt, ds) = load_model_and_data(&ckpt_path, &data_dir)?;
    let fused = fused_adjacency_mean(&model, &ds)?;
    write_graph_csv(&out, &ds.stations, &fused, true, &ckpt.meta.config_hash)?;
    println!("wrote fused adjacency edges to {}", out.display());
    Ok(())
}

// ── moran ────────────────────────────────────────────────────────────

fn cmd_moran(args: &[String]) -> Result<()> {
    let flags = Flags::parse(args, &["data-dir", "k", "feature", "out"])?;
    let data_dir = PathBuf::from(flags.required("data-dir")?);
    let k: usize = flags.parse_value("k")?;
    let out = PathBuf::from(flags.required("out")?);
    let (table, frame) = load_csv(&data_dir.join("stations.csv"), &data_dir.join("readings.csv"))?;
    let feature = match flags.optional("feature") {
        Some(name) => frame
            .features
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| {
                Error::invalid(
                    "moran",
                    format!("unknown feature '{name}' (have {:?})", frame.features),
                )
            })?,
        None => 0,
    };
    let weights = knn_weights(&table.coords(), k)?;
    let hash = fnv1a(format!("feature={feature}\nk={k}\n").as_bytes());

    // Fill gaps so every snapshot is complete: forward-fill per station,
    // remaining leading gaps with the feature's observed mean.
    let n = table.len();
    let t_len = frame.len();
    let mut series = vec![f64::NAN; t_len * n];
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..t_len {
        for s in 0..n {
            if !frame.mask[frame.idx(t, s, feature)] {
                sum += frame.value(t, s, feature);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::invalid("moran", "feature has no observed values"));
    }
    let mean = sum / count as f64;
    for s in 0..n {
        let mut last = mean;
        for t in 0..t_len {
            if !frame.mask[frame.idx(t, s, feature)] {
                last = frame.value(t, s, feature);
            }
            series[t * n + s] = last;
        }
    }

    let mut text = format!("# config_hash={hash}\ntimestamp,station_id,moran\n");
    let mut snapshot = vec![0.0; n];
    for t in 0..t_len {
        snapshot.copy_from_slice(&series[t * n..(t + 1) * n]);
        let field = local_moran(&snapshot, &weights)?;
        let ts = format_iso(frame.timestamps[t]);
        for (s, station) in table.stations.iter().enumerate() {
            text.push_str(&format!("{},{},{}\n", ts, station.id, field.values[s]));
        }
    }
    write_text(&out, &text)?;
    println!("wrote local Moran values to {}", out.display());
    Ok(())
}

// ── sweep ────────────────────────────────────────────────────────────

fn cmd_sweep(args: &[String]) -> Result<()> {
    let flags = Flags::parse(args, &["config", "data-dir", "out-dir", "param", "values"])?;
    let base = RunConfig::load(Path::new(flags.required("config")?))?;
    let data_dir = resolve_dir(&flags, "data-dir", base.data_dir.as_deref())?;
    let out_dir = resolve_dir(&flags, "out-dir", base.out_dir.as_deref())?;
    ensure_dir(&out_dir)?;
    let param = flags.required("param")?;
    let values: Vec<&str> = flags.required("values")?.split(',').collect();
    if values.is_empty() {
        return Err(Error::invalid("sweep", "empty --values list"));
    }

    let mut rows: Vec<(String, f64, f64)> = Vec::new();
    for (i, raw) in values.iter().enumerate() {
        let mut cfg = base.clone();
        match param {
            "h" => {
                cfg.heads = raw.parse().map_err(|_| {
                    Error::invalid("sweep", format!("invalid heads value '{raw}'"))
                })?
            }
            "b" => {
                cfg.blocks = raw.parse().map_err(|_| {
                    Error::invalid("sweep", format!("invalid blocks value '{raw}'"))
                })?
            }
            "lambda" => {
                cfg.lambda = raw.parse().map_err(|_| {
                    Error::invalid("sweep", format!("invalid lambda value '{raw}'"))
                })?;
                cfg.loss_mode = "fixed".into();
                cfg.validate()?;
            }
            other => {
                return Err(Error::invalid(
                    "sweep",
                    format!("unknown parameter '{other}' (expected h, b or lambda)"),
                ))
            }
        }
        let run_dir = out_dir.join(format!("run{:02}_{param}_{raw}", i));
        ensure_dir(&run_dir)?;
        let (_, test_report) = run_training(&cfg, &data_dir, &run_dir)?;
        rows.push((raw.to_string(), test_report.mae, test_report.rmse));
        println!("{param}={raw}: mae {}, rmse {}", test_report.mae, test_report.rmse);
    }

    let best = rows
        .iter()
        .map(|r| r.1)
        .fold(f64::INFINITY, f64::min)
        .max(1e-300);
    let mut text = format!(
        "# config_hash={}\n# param={param}\nvalue,mae,rmse,degradation_pct\n",
        base.hash()
    );
    for (value, mae, rmse) in &rows {
        let degradation = 100.0 * (mae - best) / best;
        text.push_str(&format!("{value},{mae},{rmse},{degradation}\n"));
    }
    let out = out_dir.join("sweep.csv");
    write_text(&out, &text)?;
    println!("wrote sweep table to {}", out.display());
    Ok(())
}
