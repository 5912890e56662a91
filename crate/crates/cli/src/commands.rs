use std::path::Path;

use prunekit::analysis::{gpu_hours, layer_sensitivity, sparsity_pattern, speedup};
use prunekit::model::{conv1x1_to_linear, model_flops, save_model_with, FlopsReport};
use prunekit::prune::{apply_mask, block_mask, load_mask, prune_block, prune_global, prune_uniform, save_mask};
use prunekit::solver::{solve_global, NamedSparsity, solve_uniform, solve_uniform_for_model, verify_mask_flops, FlopsCheck};
use prunekit::sparse::{
    benchmark, dense_gemm, quantize_activations, quantize_layer, spmm, to_block_sparse, BenchKernel, LatencyStats,
    CSV_HEADER, SPARSITY_PRESETS,
};
use prunekit::train::{evaluate, finetune, Dataset, EvalResult, History, TrainConfig};
use prunekit::{FlopsTarget, ModelGraph, PruneReport, SolveResult, SparsityMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{load_data_config, load_model_files, load_train_config, Method, PipelineConfig, PruneConfig};
use crate::failure::{CliResult, Context, Failure, EXIT_RUNTIME};
use crate::output::{ensure_dir, json_text, sha256_hex, write_file, RunInfo, Sink};
use crate::{Cli, Command, ModelArgs};

pub fn run(cli: &Cli) -> CliResult<()> {
    let sink = Sink { output: cli.output.clone(), csv: cli.csv };
    match &cli.command {
        Command::Flops { model, mask } => flops(cli, &sink, model, mask.as_deref()),
        Command::Prune { model, method, sparsity, target_mflops, out_dir } => {
            let cfg = PruneConfig { method: *method, sparsity: *sparsity, target_mflops: *target_mflops };
            prune(cli, &sink, model, &cfg, out_dir)
        }
        Command::Solve { method, target_mflops, seed_mflops, prunable_mflops, model, weights } => {
            solve(cli, &sink, *method, *target_mflops, *seed_mflops, *prunable_mflops, model.as_deref(), weights.as_deref())
        }
        Command::Finetune { model, mask, data, train_config, out_dir } => {
            finetune_cmd(cli, &sink, model, mask.as_deref(), data, train_config.as_deref(), out_dir)
        }
        Command::Bench { rows, cols, batch, sparsity, warmup, iters, layer, model, weights } => {
            let source = match (layer, model, weights) {
                (Some(l), Some(m), Some(w)) => Some((l.as_str(), m.as_path(), w.as_path())),
                _ => None,
            };
            bench(cli, &sink, (*rows, *cols, *batch), sparsity, (*warmup, *iters), source)
        }
        Command::Sensitivity { model, data, sparsity, plot_data } => {
            sensitivity(cli, &sink, model, data, *sparsity, *plot_data)
        }
        Command::Pipeline { config, out_dir } => pipeline(cli, &sink, config, out_dir),
        Command::GpuHours { nodes, gpus_per_node, hours, reference } => {
            gpu_hours_cmd(cli, &sink, *nodes, *gpus_per_node, *hours, *reference)
        }
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn load(cli: &Cli, args: &ModelArgs) -> CliResult<ModelGraph> {
    load_model_files(&args.model, &args.weights, cli.lenient)
}

fn load_checked_mask(path: &Path, model: &ModelGraph) -> CliResult<SparsityMask> {
    let mask = load_mask(path).context(path.display())?;
    mask.check_against(model)?;
    Ok(mask)
}

fn flops_csv(report: &FlopsReport) -> String {
    let mut out = String::from("layer,macs,effective_macs,prunable\n");
    for l in &report.per_layer {
        out.push_str(&format!("{},{},{},{}\n", l.name, l.macs, l.effective_macs, l.prunable));
    }
    out
}

fn flops(cli: &Cli, sink: &Sink, args: &ModelArgs, mask: Option<&Path>) -> CliResult<()> {
    let run = RunInfo::new(
        "flops",
        cli.seed,
        json!({ "model": path_str(&args.model), "weights": path_str(&args.weights), "mask": mask.map(path_str) }),
    );
    let model = load(cli, args)?;
    let mask = mask.map(|p| load_checked_mask(p, &model)).transpose()?;
    let report = model_flops(&model, mask.as_ref())?;
    sink.emit(&run, &report, || flops_csv(&report))
}

/// Result of a pruning step, whichever way it was specified.
#[derive(Debug, Clone, Serialize)]
pub struct PruneOutcome {
    pub method: Method,
    pub report: PruneReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flops_check: Option<FlopsCheck>,
    pub dense_mflops: f64,
    pub effective_mflops: f64,
}

fn prune_csv(report: &PruneReport) -> String {
    let mut out = String::from("layer,pruned,total,sparsity\n");
    for l in &report.per_layer {
        out.push_str(&format!("{},{},{},{}\n", l.name, l.pruned, l.total, l.sparsity));
    }
    out
}

fn make_mask(model: &ModelGraph, cfg: &PruneConfig) -> CliResult<(SparsityMask, PruneOutcome)> {
    let by_sparsity = |s: f64| -> CliResult<(SparsityMask, PruneReport)> {
        Ok(match cfg.method {
            Method::Uniform => prune_uniform(model, s)?,
            Method::Global => prune_global(model, s)?,
            Method::Block => prune_block(model, s)?,
        })
    };
    let (mask, report, solve) = match (cfg.sparsity, cfg.target_mflops) {
        (Some(s), None) => {
            let (mask, report) = by_sparsity(s)?;
            (mask, report, None)
        }
        (None, Some(target)) => match cfg.method {
            Method::Global => {
                let (res, mask) = solve_global(model, target)?;
                let report = PruneReport::from_mask(&mask, res.threshold);
                (mask, report, Some(res))
            }
            Method::Uniform | Method::Block => {
                let s = solve_uniform_for_model(model, target)?;
                let (mask, report) = by_sparsity(s)?;
                (mask, report, None)
            }
        },
        _ => return Err(Failure::usage("give exactly one of --sparsity and --target-mflops")),
    };
    let flops = model_flops(model, Some(&mask))?;
    let flops_check = cfg.target_mflops.map(|t| verify_mask_flops(model, &mask, t)).transpose()?;
    let outcome = PruneOutcome {
        method: cfg.method,
        report,
        solve,
        flops_check,
        dense_mflops: flops.total_mflops(),
        effective_mflops: flops.effective_mflops(),
    };
    Ok((mask, outcome))
}

fn save_pruned(run: &RunInfo, dir: &Path, stem: &str, model: &ModelGraph) -> CliResult<()> {
    let (m, w) = (dir.join(format!("{stem}.json")), dir.join(format!("{stem}.bin")));
    save_model_with(model, &m, &w, Some(&run.provenance())).context(m.display())
}

fn prune(cli: &Cli, sink: &Sink, args: &ModelArgs, cfg: &PruneConfig, out_dir: &Path) -> CliResult<()> {
    let run = RunInfo::new(
        "prune",
        cli.seed,
        json!({ "model": path_str(&args.model), "weights": path_str(&args.weights), "prune": cfg }),
    );
    if cfg.sparsity.is_some() == cfg.target_mflops.is_some() {
        return Err(Failure::usage("give exactly one of --sparsity and --target-mflops"));
    }
    let model = load(cli, args)?;
    let (mask, outcome) = make_mask(&model, cfg)?;
    let pruned = apply_mask(&model, &mask)?;
    ensure_dir(out_dir)?;
    save_mask(&mask, out_dir.join("mask.json"), Some(&run.provenance())).context(out_dir.display())?;
    save_pruned(&run, out_dir, "pruned", &pruned)?;
    write_file(&out_dir.join("prune_report.json"), &json_text(&run.stamp(&outcome)))?;
    sink.emit(&run, &outcome, || prune_csv(&outcome.report))
}

#[allow(clippy::too_many_arguments)]
fn solve(
    cli: &Cli,
    sink: &Sink,
    method: Method,
    target: f64,
    seed_mflops: Option<f64>,
    prunable_mflops: Option<f64>,
    model: Option<&Path>,
    weights: Option<&Path>,
) -> CliResult<()> {
    let run = RunInfo::new(
        "solve",
        cli.seed,
        json!({
            "method": method,
            "target_mflops": target,
            "seed_mflops": seed_mflops,
            "prunable_mflops": prunable_mflops,
            "model": model.map(path_str),
            "weights": weights.map(path_str),
        }),
    );
    match (seed_mflops, prunable_mflops, model, weights) {
        (Some(seed), Some(prunable), None, None) => {
            if method == Method::Global {
                return Err(Failure::usage("global solving needs --model and --weights"));
            }
            let s = solve_uniform(&FlopsTarget::new(seed, target, prunable))?;
            let out = json!({ "method": method, "sparsity": s, "target_mflops": target });
            sink.emit(&run, &out, || format!("method,sparsity,target_mflops\n{},{s},{target}\n", method.as_str()))
        }
        (None, None, Some(m), Some(w)) => {
            let model = load_model_files(m, w, cli.lenient)?;
            let res = match method {
                Method::Global => solve_global(&model, target)?.0,
                Method::Uniform | Method::Block => {
                    let s = solve_uniform_for_model(&model, target)?;
                    let (mask, _) = if method == Method::Uniform { prune_uniform(&model, s)? } else { prune_block(&model, s)? };
                    let achieved_macs = model_flops(&model, Some(&mask))?.effective_or_total();
                    SolveResult {
                        method: method.as_str().to_string(),
                        sparsity: s,
                        threshold: None,
                        achieved_mflops: achieved_macs as f64 / 1e6,
                        per_layer: PruneReport::from_mask(&mask, None)
                            .per_layer
                            .into_iter()
                            .map(|l| NamedSparsity { name: l.name, sparsity: l.sparsity })
                            .collect(),
                        target_mflops: target,
                        achieved_macs,
                        pruned_weights: mask.pruned(),
                    }
                }
            };
            sink.emit(&run, &res, || {
                let mut out = String::from("layer,sparsity\n");
                for l in &res.per_layer {
                    out.push_str(&format!("{},{}\n", l.name, l.sparsity));
                }
                out
            })
        }
        _ => Err(Failure::usage(
            "give either --seed-mflops and --prunable-mflops, or --model and --weights",
        )),
    }
}

fn train_config(path: Option<&Path>, seed: u64) -> CliResult<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
            let raw: toml::Value = toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
            if raw.get("seed").is_some() {
                return Err(Failure::usage(format!("{}: `seed` comes from --seed", p.display())));
            }
            load_train_config(p)?
        }
        None => TrainConfig::default(),
    };
    cfg.seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct FinetuneSummary<'a> {
    history: &'a History,
    validation: EvalResult,
}

fn finetune_cmd(
    cli: &Cli,
    sink: &Sink,
    args: &ModelArgs,
    mask: Option<&Path>,
    data: &Path,
    train_cfg: Option<&Path>,
    out_dir: &Path,
) -> CliResult<()> {
    let data_cfg = load_data_config(data)?;
    let cfg = train_config(train_cfg, cli.seed)?;
    let run = RunInfo::new(
        "finetune",
        cli.seed,
        json!({
            "model": path_str(&args.model),
            "weights": path_str(&args.weights),
            "mask": mask.map(path_str),
            "data": data_cfg,
            "train": cfg,
        }),
    );
    let (train, val) = data_cfg.load(cli.seed)?;
    let model = load(cli, args)?;
    let mask = mask.map(|p| load_checked_mask(p, &model)).transpose()?;
    let (tuned, history) = finetune(&model, mask.as_ref(), &train, &val, &cfg)?;
    let validation = evaluate(&tuned, &val)?;
    ensure_dir(out_dir)?;
    save_pruned(&run, out_dir, "finetuned", &tuned)?;
    write_file(&out_dir.join("history.csv"), &run.stamp_csv(&history.to_csv()))?;
    sink.emit(&run, &FinetuneSummary { history: &history, validation }, || history.to_csv())
}

fn bench(
    cli: &Cli,
    sink: &Sink,
    (rows, cols, batch): (usize, usize, usize),
    sparsities: &[f64],
    (warmup, iters): (usize, usize),
    source: Option<(&str, &Path, &Path)>,
) -> CliResult<()> {
    let sparsities = if sparsities.is_empty() { SPARSITY_PRESETS.to_vec() } else { sparsities.to_vec() };
    let run = RunInfo::new(
        "bench",
        cli.seed,
        json!({
            "rows": rows, "cols": cols, "batch": batch, "sparsity": sparsities,
            "warmup": warmup, "iters": iters,
            "layer": source.map(|(l, m, w)| json!({ "name": l, "model": path_str(m), "weights": path_str(w) })),
        }),
    );
    if iters == 0 || batch == 0 {
        return Err(Failure::usage("--iters and --batch must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let (weights, rows, cols) = match source {
        Some((layer, m, w)) => {
            let model = load_model_files(m, w, cli.lenient)?;
            let linear = conv1x1_to_linear(&model, layer)?;
            let spec = linear.layer(layer).expect("transform keeps the layer");
            (linear.layer_weights(spec).to_vec(), spec.out_channels, spec.weight_cols())
        }
        None => {
            let normal = Normal::new(0.0f32, 1.0).expect("valid std");
            ((0..rows * cols).map(|_| normal.sample(&mut rng)).collect(), rows, cols)
        }
    };
    let acts: Vec<f32> = (0..batch * cols).map(|_| rng.random_range(-1.0..2.0)).collect();
    let (q, params) = quantize_layer(&weights, rows, cols, &acts)?;
    let x = quantize_activations(&acts, params.act())?;

    let mut stats: Vec<LatencyStats> = vec![benchmark(BenchKernel::Dense(&q), &x, batch, &params, warmup, iters)?];
    for &s in &sparsities {
        let mask = block_mask(&weights, rows, cols, s)?;
        let bsm = to_block_sparse(&q, &mask)?;
        let sparse_out = spmm(&bsm, &x, batch, &params)?;
        if sparse_out.acc != dense_gemm(&q.masked(&mask)?, &x, batch, &params)?.acc {
            return Err(Failure { code: EXIT_RUNTIME, message: format!("sparse kernel disagrees with dense reference at sparsity {s}") });
        }
        stats.push(benchmark(BenchKernel::Sparse(&bsm), &x, batch, &params, warmup, iters)?);
    }
    sink.emit(&run, &json!({ "results": stats }), || {
        let mut out = format!("{CSV_HEADER}\n");
        for s in &stats {
            out.push_str(&s.csv_row());
            out.push('\n');
        }
        out
    })
}

fn plot_text(points: &[(f64, f64)]) -> String {
    let mut out = String::from("x,y\n");
    for (x, y) in points {
        out.push_str(&format!("{x},{y}\n"));
    }
    out
}

fn sensitivity(cli: &Cli, sink: &Sink, args: &ModelArgs, data: &Path, s: f64, plot: bool) -> CliResult<()> {
    let data_cfg = load_data_config(data)?;
    let run = RunInfo::new(
        "sensitivity",
        cli.seed,
        json!({ "model": path_str(&args.model), "weights": path_str(&args.weights), "data": data_cfg, "sparsity": s }),
    );
    let (_, val) = data_cfg.load(cli.seed)?;
    let model = load(cli, args)?;
    let report = layer_sensitivity(&model, &val, s)?;
    if plot {
        let text = run.stamp_csv(&plot_text(&report.plot_data()));
        return match &sink.output {
            Some(p) => write_file(p, &text),
            None => {
                print!("{text}");
                Ok(())
            }
        };
    }
    sink.emit(&run, &report, || report.to_csv())
}

#[derive(Debug, Serialize)]
struct Evaluation {
    dense: EvalResult,
    pruned: EvalResult,
    finetuned: EvalResult,
    dense_mflops: f64,
    effective_mflops: f64,
    finetune_best_epoch: usize,
    finetune_epochs: usize,
}

#[derive(Debug, Serialize)]
struct Artifact {
    path: String,
    bytes: u64,
    sha256: String,
}

fn pipeline(cli: &Cli, sink: &Sink, config: &Path, out_dir: &Path) -> CliResult<()> {
    let text = std::fs::read_to_string(config).map_err(|e| Failure::usage(format!("{}: {e}", config.display())))?;
    let mut raw = PipelineConfig::parse(&text)?;
    if let Some(p) = &mut raw.pretrain {
        p.seed = cli.seed;
    }
    raw.finetune.seed = cli.seed;
    let run = RunInfo::new("pipeline", cli.seed, serde_json::to_value(&raw).expect("config serializes"));
    let cfg = raw.resolved(config.parent().unwrap_or(Path::new(".")));

    // Everything that can fail on bad input is checked before training.
    if cfg.prune.sparsity.is_some() == cfg.prune.target_mflops.is_some() {
        return Err(Failure::usage("[prune] needs exactly one of `sparsity` and `target_mflops`"));
    }
    let pretrain = cfg.pretrain.clone();
    if let Some(p) = &pretrain {
        p.validate().context("[pretrain]")?;
    }
    let tune = cfg.finetune.clone();
    tune.validate().context("[finetune]")?;
    let (train, val) = cfg.data.load(cli.seed)?;
    let initial = cfg.model.load(&train, cli.seed.wrapping_add(1), cli.lenient)?;
    check_fits(&initial, &val)?;
    // FLOPs depend only on shapes, so an infeasible target shows up here.
    make_mask(&initial, &cfg.prune)?;
    ensure_dir(out_dir)?;

    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> CliResult<()> {
        write_file(&out_dir.join(name), &text)?;
        written.push(name.to_string());
        Ok(())
    };
    let put_model = |stem: &str, model: &ModelGraph| -> CliResult<Vec<String>> {
        save_pruned(&run, out_dir, stem, model)?;
        Ok(vec![format!("{stem}.json"), format!("{stem}.bin")])
    };
    put("config.json", json_text(&run.stamp(&json!({}))))?;

    let mut models = Vec::new();
    let dense = match &pretrain {
        Some(p) => {
            let (dense, history) = finetune(&initial, None, &train, &val, p)?;
            put("pretrain_history.csv", run.stamp_csv(&history.to_csv()))?;
            models.extend(put_model("dense", &dense)?);
            dense
        }
        None => initial,
    };

    let (mask, outcome) = make_mask(&dense, &cfg.prune)?;
    let pruned = apply_mask(&dense, &mask)?;
    save_mask(&mask, out_dir.join("mask.json"), Some(&run.provenance())).context(out_dir.display())?;
    models.push("mask.json".to_string());
    put("prune_report.json", json_text(&run.stamp(&outcome)))?;

    let (tuned, history) = finetune(&pruned, Some(&mask), &train, &val, &tune)?;
    put("history.csv", run.stamp_csv(&history.to_csv()))?;
    models.extend(put_model("model", &tuned)?);

    let flops = model_flops(&tuned, Some(&mask))?;
    let evaluation = Evaluation {
        dense: evaluate(&dense, &val)?,
        pruned: evaluate(&pruned, &val)?,
        finetuned: evaluate(&tuned, &val)?,
        dense_mflops: flops.total_mflops(),
        effective_mflops: flops.effective_mflops(),
        finetune_best_epoch: history.best_epoch,
        finetune_epochs: history.epochs.len(),
    };
    put("eval.json", json_text(&run.stamp(&evaluation)))?;
    if cfg.report.pattern {
        put("pattern.csv", run.stamp_csv(&sparsity_pattern(&mask, &tuned)?.to_csv()))?;
    }
    if cfg.report.sensitivity {
        let report = layer_sensitivity(&tuned, &val, cfg.report.sensitivity_sparsity)?;
        put("sensitivity.json", json_text(&run.stamp(&report)))?;
    }

    written.extend(models);
    written.sort();
    let artifacts = written
        .iter()
        .map(|name| {
            let bytes = std::fs::read(out_dir.join(name)).map_err(|e| Failure::usage(format!("{name}: {e}")))?;
            Ok(Artifact { path: name.clone(), bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let manifest = json!({ "artifacts": artifacts });
    write_file(&out_dir.join("manifest.json"), &json_text(&run.stamp(&manifest)))?;
    sink.emit(&run, &manifest, || {
        let mut out = String::from("path,bytes,sha256\n");
        for a in &artifacts {
            out.push_str(&format!("{},{},{}\n", a.path, a.bytes, a.sha256));
        }
        out
    })
}

/// The model must accept the dataset's samples and classes.
fn check_fits(model: &ModelGraph, data: &Dataset) -> CliResult<()> {
    let net = prunekit::train::Network::new(model)?;
    if net.sample_len() != data.sample_len() {
        return Err(Failure::usage(format!(
            "model expects {} values per sample, data has {}",
            net.sample_len(),
            data.sample_len()
        )));
    }
    if net.classes()? < data.classes {
        return Err(Failure::usage(format!("model has {} outputs, data has {} classes", net.classes()?, data.classes)));
    }
    Ok(())
}

fn gpu_hours_cmd(cli: &Cli, sink: &Sink, nodes: u32, gpus: u32, hours: f64, reference: Option<f64>) -> CliResult<()> {
    let run = RunInfo::new(
        "gpu-hours",
        cli.seed,
        json!({ "nodes": nodes, "gpus_per_node": gpus, "hours": hours, "reference": reference }),
    );
    let total = gpu_hours(nodes, gpus, hours)?;
    let ratio = reference.map(|r| speedup(r, total)).transpose()?;
    let out: Value = json!({ "gpu_hours": total, "speedup": ratio });
    sink.emit(&run, &out, || {
        format!(
            "nodes,gpus_per_node,hours,gpu_hours,speedup\n{nodes},{gpus},{hours},{total},{}\n",
            ratio.map(|r| r.to_string()).unwrap_or_default()
        )
    })
}
