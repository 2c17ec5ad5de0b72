//! Command implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ecg_ssl::augment::apply;
use ecg_ssl::distshift::{
    analyze_pair, analyze_reduced, read_reduced_csv, DensityGrid, OverlapReport,
};
use ecg_ssl::nn::{
    init_ssl_params, load_checkpoint, save_checkpoint, Checkpoint, EncoderConfig, ModelParams,
};
use ecg_ssl::rng::RngStream;
use ecg_ssl::signal::io::{load_windows, read_dataset_dir, save_windows, write_dataset_dir};
use ecg_ssl::signal::{generate_dataset, resample, split_by_subject, DatasetSplit, Window};
use ecg_ssl::train::{finetune_and_test, pretrain, FinetuneConfig};
use log::info;
use serde::Serialize;

use crate::config::{
    AugmentPreviewConfig, CommandConfig, DataConfig, DistshiftConfig, FinetuneCommandConfig,
    PretrainCommandConfig, ReportConfig, SynthGenConfig,
};
use crate::error::{CliError, CliResult};
use crate::manifest::{fmt_f64, read_manifest, sha256_hex, Manifest, RunContext, MANIFEST_FILE};
use crate::{Command, RunArgs};

pub const RANDOM_INIT: &str = "random";
pub const NO_PRETRAINING: &str = "none";

pub fn dispatch(command: &Command) -> CliResult<Manifest> {
    let name = command.name();
    match command {
        Command::SynthGen(a) => with_config(name, a, synth_gen),
        Command::AugmentPreview(a) => with_config(name, a, augment_preview),
        Command::Pretrain(a) => with_config(name, a, pretrain_cmd),
        Command::Finetune(a) => with_config(name, a, |ctx, cfg| finetune_cmd(ctx, cfg, false)),
        Command::Lineval(a) => with_config(name, a, |ctx, cfg| finetune_cmd(ctx, cfg, true)),
        Command::Distshift(a) => with_config(name, a, distshift_cmd),
        Command::Report(a) => {
            let (cfg, hash) = match &a.config {
                Some(path) => {
                    let (cfg, hash) = load_config::<ReportConfig>(path)?;
                    (cfg, hash)
                }
                None => (ReportConfig::default(), sha256_hex(b"")),
            };
            let mut ctx = RunContext::new(&a.out, a.seed, hash)?;
            let results = report_cmd(&mut ctx, &cfg)?;
            let value = serde_json::to_value(&cfg).map_err(CliError::runtime)?;
            ctx.finish(name, a.config.as_deref(), value, results)
        }
    }
}

fn load_config<C: CommandConfig>(path: &Path) -> CliResult<(C, String)> {
    let bytes = fs::read(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| CliError::config(format!("{} is not UTF-8", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let cfg = C::parse(text, base).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    Ok((cfg, sha256_hex(&bytes)))
}

fn with_config<C: CommandConfig>(
    name: &str,
    args: &RunArgs,
    body: impl FnOnce(&mut RunContext, &C) -> CliResult<serde_json::Value>,
) -> CliResult<Manifest> {
    let (cfg, hash) = load_config::<C>(&args.config)?;
    let mut ctx = RunContext::new(&args.out, args.seed, hash)?;
    info!("{name}: seed {} -> {}", args.seed, args.out.display());
    let results = body(&mut ctx, &cfg)?;
    let value = serde_json::to_value(&cfg).map_err(CliError::runtime)?;
    ctx.finish(name, Some(&args.config), value, results)
}

fn synth_gen(ctx: &mut RunContext, cfg: &SynthGenConfig) -> CliResult<serde_json::Value> {
    let records = generate_dataset(&cfg.dataset, ctx.seed).map_err(CliError::config)?;
    let dataset_dir = ctx.out.join("dataset");
    write_dataset_dir(&dataset_dir, &records).map_err(CliError::runtime)?;
    for f in [
        "dataset/index.csv",
        "dataset/labels.csv",
        "dataset/classes.txt",
    ] {
        ctx.output(f)?;
    }
    let [a, b, c] = cfg.split.fractions;
    let split = split_by_subject(&records, (a, b, c), ctx.seed, &cfg.split.window)
        .map_err(CliError::config)?;
    let mut rows = Vec::new();
    for (name, windows) in split.partitions() {
        let file = format!("{name}.ewin");
        save_windows(&ctx.output(&file)?, windows).map_err(CliError::runtime)?;
        rows.push(vec![
            name.to_string(),
            count_subjects(windows).to_string(),
            windows.len().to_string(),
        ]);
    }
    ctx.write_csv(
        "split.csv",
        &["partition", "n_subjects", "n_windows"],
        &rows,
    )?;
    Ok(serde_json::json!({
        "n_records": records.len(),
        "n_windows": [split.train.len(), split.validation.len(), split.test.len()],
    }))
}

fn count_subjects(windows: &[Window]) -> usize {
    windows
        .iter()
        .map(|w| w.source_subject.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .len()
}

fn augment_preview(
    ctx: &mut RunContext,
    cfg: &AugmentPreviewConfig,
) -> CliResult<serde_json::Value> {
    let windows = load_windows(&cfg.input)
        .map_err(|e| CliError::data(format!("{}: {e}", cfg.input.display())))?;
    let n = cfg.n_windows.min(windows.len());
    if n == 0 {
        return Err(CliError::data("input window file is empty"));
    }
    if let Some(&bad) = cfg.leads.iter().find(|&&l| l >= windows[0].n_leads()) {
        return Err(CliError::config(format!("lead {bad} out of range")));
    }
    let mut master = RngStream::new(ctx.seed);
    let mut rows = Vec::new();
    for (ai, spec) in cfg.augmentations.iter().enumerate() {
        let params = serde_json::to_string(spec).map_err(CliError::runtime)?;
        for (wi, w) in windows[..n].iter().enumerate() {
            let mut rng = master.fork();
            let aug = apply(w, spec, &mut rng).map_err(CliError::runtime)?;
            for &lead in &cfg.leads {
                for (t, (o, v)) in w.data[lead].iter().zip(&aug.data[lead]).enumerate() {
                    rows.push(vec![
                        ai.to_string(),
                        spec.name().to_string(),
                        params.clone(),
                        wi.to_string(),
                        lead.to_string(),
                        t.to_string(),
                        fmt_f64(*o),
                        fmt_f64(*v),
                    ]);
                }
            }
        }
    }
    ctx.write_csv(
        "augment_preview.csv",
        &[
            "augmentation",
            "name",
            "params",
            "window",
            "lead",
            "sample",
            "original",
            "augmented",
        ],
        &rows,
    )?;
    Ok(serde_json::json!({ "n_augmentations": cfg.augmentations.len(), "n_windows": n }))
}

fn load_partition(path: &Path) -> CliResult<Vec<Window>> {
    load_windows(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Loads or builds the split. Record sources are split with the run seed.
fn load_data(data: &DataConfig, seed: u64) -> CliResult<DatasetSplit> {
    if let Some(w) = &data.windows {
        let opt = |p: &Option<PathBuf>| p.as_deref().map(load_partition).transpose();
        return Ok(DatasetSplit {
            train: load_partition(&w.train)?,
            validation: opt(&w.validation)?.unwrap_or_default(),
            test: opt(&w.test)?.unwrap_or_default(),
        });
    }
    let src = data
        .records
        .as_ref()
        .ok_or_else(|| CliError::config("no data source"))?;
    let mut records = read_dataset_dir(&src.dir, src.csv_rate_hz)
        .map_err(|e| CliError::data(format!("{}: {e}", src.dir.display())))?;
    if let Some(hz) = src.target_hz {
        records = records
            .iter()
            .map(|r| resample(r, hz))
            .collect::<ecg_ssl::Result<_>>()
            .map_err(CliError::config)?;
    }
    let [a, b, c] = src.split.fractions;
    split_by_subject(&records, (a, b, c), seed, &src.split.window).map_err(CliError::data)
}

fn check_leads(split: &DatasetSplit, encoder: &EncoderConfig) -> CliResult<()> {
    for (name, windows) in split.partitions() {
        if let Some(w) = windows.iter().find(|w| w.n_leads() != encoder.n_leads) {
            return Err(CliError::data(format!(
                "{name} window has {} leads, encoder expects {}",
                w.n_leads(),
                encoder.n_leads
            )));
        }
    }
    Ok(())
}

fn log_rows(log: &ecg_ssl::train::TrainingLog) -> Vec<Vec<String>> {
    log.rows()
        .into_iter()
        .map(|(e, split, metric, v)| {
            vec![
                e.to_string(),
                split.to_string(),
                metric.to_string(),
                fmt_f64(v),
            ]
        })
        .collect()
}

fn timing_rows(log: &ecg_ssl::train::TrainingLog) -> Vec<Vec<String>> {
    log.timing_rows()
        .into_iter()
        .map(|(e, s)| vec![e.to_string(), format!("{s:.3}")])
        .collect()
}

fn pretrain_cmd(ctx: &mut RunContext, cfg: &PretrainCommandConfig) -> CliResult<serde_json::Value> {
    let mut pcfg = cfg.pretrain.clone();
    pcfg.seed = ctx.seed;
    let split = load_data(&cfg.data, ctx.seed)?;
    check_leads(&split, &pcfg.encoder)?;
    if split.train.len() < pcfg.batch_size {
        return Err(CliError::data(format!(
            "{} training windows, fewer than one batch of {}",
            split.train.len(),
            pcfg.batch_size
        )));
    }
    let out = pretrain(&pcfg, &split).map_err(CliError::runtime)?;
    let meta = serde_json::json!({
        "kind": "pretrain",
        "method": pcfg.method.name(),
        "encoder": pcfg.encoder,
        "data_name": cfg.data.name,
        "best_epoch": out.best_epoch,
        "provenance": ctx.provenance("pretrain"),
    });
    let ckpt = Checkpoint {
        meta,
        params: out.params,
        optimizer: None,
    };
    save_checkpoint(&ctx.output("checkpoint.ckpt")?, &ckpt).map_err(CliError::runtime)?;
    ctx.write_csv(
        "pretrain_log.csv",
        &["epoch", "split", "metric", "value"],
        &log_rows(&out.log),
    )?;
    ctx.write_csv(
        "timing.csv",
        &["epoch", "wall_seconds"],
        &timing_rows(&out.log),
    )?;
    let last = out.log.epochs.last().map(|e| e.train_loss);
    Ok(serde_json::json!({
        "method": pcfg.method.name(),
        "data_name": cfg.data.name,
        "best_epoch": out.best_epoch,
        "final_train_loss": last,
    }))
}

/// Encoder parameters, encoder config, method name and pre-training set of
/// a checkpoint or of a fresh random initialization.
fn encoder_source(
    checkpoint: Option<&Path>,
    encoder: Option<&EncoderConfig>,
    n_leads: usize,
    seed: u64,
) -> CliResult<(ModelParams, EncoderConfig, String, String)> {
    match checkpoint {
        Some(path) => {
            let ckpt = load_checkpoint(path)
                .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            let meta = &ckpt.meta;
            let enc: EncoderConfig = serde_json::from_value(meta["encoder"].clone())
                .map_err(|e| CliError::data(format!("{}: encoder config: {e}", path.display())))?;
            let method = meta["method"].as_str().unwrap_or(RANDOM_INIT).to_string();
            let data = meta["data_name"]
                .as_str()
                .unwrap_or(NO_PRETRAINING)
                .to_string();
            Ok((ckpt.params, enc, method, data))
        }
        None => {
            let enc = encoder.cloned().unwrap_or(EncoderConfig {
                n_leads,
                ..Default::default()
            });
            let params = init_ssl_params(&enc, seed).map_err(CliError::config)?;
            Ok((
                params,
                enc,
                RANDOM_INIT.to_string(),
                NO_PRETRAINING.to_string(),
            ))
        }
    }
}

fn finetune_cmd(
    ctx: &mut RunContext,
    cfg: &FinetuneCommandConfig,
    linear: bool,
) -> CliResult<serde_json::Value> {
    let protocol = if linear { "lineval" } else { "finetune" };
    let split = load_data(&cfg.data, ctx.seed)?;
    if split.validation.is_empty() || split.test.is_empty() {
        return Err(CliError::data(
            "fine-tuning needs validation and test partitions",
        ));
    }
    let n_leads = split.train.first().map_or(0, Window::n_leads);
    let (params, encoder, method, pretrain_set) = encoder_source(
        cfg.checkpoint.as_deref(),
        cfg.encoder.as_ref(),
        n_leads,
        ctx.seed,
    )?;
    check_leads(&split, &encoder)?;
    let fcfg = FinetuneConfig {
        seed: ctx.seed,
        freeze_encoder: linear || cfg.finetune.freeze_encoder,
        ..cfg.finetune.clone()
    };
    let out = finetune_and_test(&params, &encoder, &fcfg, &split).map_err(CliError::runtime)?;
    let meta = serde_json::json!({
        "kind": protocol,
        "method": method,
        "encoder": encoder,
        "class_names": out.finetune.class_names,
        "threshold": fcfg.threshold,
        "pretrain_set": pretrain_set,
        "data_name": cfg.data.name,
        "provenance": ctx.provenance(protocol),
    });
    let ckpt = Checkpoint {
        meta,
        params: out.finetune.params.clone(),
        optimizer: None,
    };
    save_checkpoint(&ctx.output("model.ckpt")?, &ckpt).map_err(CliError::runtime)?;
    ctx.write_csv(
        "finetune_log.csv",
        &["epoch", "split", "metric", "value"],
        &log_rows(&out.finetune.log),
    )?;
    ctx.write_csv(
        "timing.csv",
        &["epoch", "wall_seconds"],
        &timing_rows(&out.finetune.log),
    )?;
    let rows: Vec<Vec<String>> = out
        .test
        .rows()
        .into_iter()
        .map(|(c, m, v)| vec![c, m, fmt_f64(v)])
        .collect();
    ctx.write_csv("metrics.csv", &["class", "metric", "value"], &rows)?;
    Ok(serde_json::json!({
        "protocol": protocol,
        "method": method,
        "pretrain_set": pretrain_set,
        "test_set": cfg.data.name,
        "test_macro_f1": out.test_macro_f1,
        "best_epoch": out.finetune.best_epoch,
        "best_val_macro_f1": out.finetune.best_val_macro_f1,
    }))
}

fn grid_rows(g: &DensityGrid) -> Vec<Vec<String>> {
    g.rows()
        .into_iter()
        .map(|(x, y, d)| vec![fmt_f64(x), fmt_f64(y), fmt_f64(d)])
        .collect()
}

#[derive(Serialize)]
struct OverlapJson<'a> {
    #[serde(flatten)]
    summary: ecg_ssl::distshift::OverlapSummary,
    provenance: &'a serde_json::Value,
}

fn distshift_cmd(ctx: &mut RunContext, cfg: &DistshiftConfig) -> CliResult<serde_json::Value> {
    let report: OverlapReport = match &cfg.reduced_csv {
        Some(path) => {
            let file = fs::File::open(path)
                .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            let sets = read_reduced_csv(std::io::BufReader::new(file))
                .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            if sets.len() != 2 {
                return Err(CliError::data(format!(
                    "{} holds {} tagged sets, expected 2",
                    path.display(),
                    sets.len()
                )));
            }
            analyze_reduced(&sets[0], &sets[1], cfg.resolution).map_err(CliError::data)?
        }
        None => {
            let (reference, other, ckpt) = match (&cfg.reference, &cfg.other, &cfg.checkpoint) {
                (Some(r), Some(o), Some(c)) => (r, o, c),
                _ => {
                    return Err(CliError::config(
                        "checkpoint, reference and other are required",
                    ))
                }
            };
            let reference = load_partition(reference)?;
            let other = load_partition(other)?;
            let n_leads = reference.first().map_or(0, Window::n_leads);
            let (params, encoder, _, _) = encoder_source(Some(ckpt), None, n_leads, ctx.seed)?;
            let split = DatasetSplit {
                train: reference.clone(),
                validation: Vec::new(),
                test: other.clone(),
            };
            check_leads(&split, &encoder)?;
            analyze_pair(&params, &encoder, &reference, &other, cfg.resolution)
                .map_err(CliError::runtime)?
        }
    };
    let summary = report.summary();
    let provenance = ctx.provenance("distshift");
    ctx.write_json(
        "overlap.json",
        &OverlapJson {
            summary: summary.clone(),
            provenance: &provenance,
        },
    )?;
    ctx.write_csv(
        "overlap.csv",
        &["metric", "value"],
        &[
            vec!["eta".into(), fmt_f64(report.eta)],
            vec!["eta_x".into(), fmt_f64(report.axis_eta[0])],
            vec!["eta_y".into(), fmt_f64(report.axis_eta[1])],
        ],
    )?;
    ctx.write_csv(
        "grid_reference.csv",
        &["x", "y", "density"],
        &grid_rows(&report.grids[0]),
    )?;
    ctx.write_csv(
        "grid_other.csv",
        &["x", "y", "density"],
        &grid_rows(&report.grids[1]),
    )?;
    Ok(serde_json::json!({ "eta": report.eta, "axis_eta": report.axis_eta }))
}

/// One evaluated run found by the report.
struct RunRecord {
    method: String,
    pretrain_set: String,
    test_set: String,
    protocol: String,
    /// `(class, metric, value)` rows of `metrics.csv`.
    metrics: Vec<(String, String, f64)>,
}

impl RunRecord {
    fn macro_f1(&self) -> Option<f64> {
        self.metrics
            .iter()
            .find(|(c, m, _)| c == "all" && m == "macro_f1")
            .map(|r| r.2)
    }
}

fn read_run(dir: &Path) -> CliResult<Option<RunRecord>> {
    let manifest = read_manifest(dir)?;
    if manifest.command != "finetune" && manifest.command != "lineval" {
        return Ok(None);
    }
    let field = |k: &str| -> CliResult<String> {
        manifest.results[k]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| CliError::data(format!("{}: manifest lacks results.{k}", dir.display())))
    };
    let path = dir.join("metrics.csv");
    let mut rdr = csv::Reader::from_path(&path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut metrics = Vec::new();
    for row in rdr.deserialize() {
        let row: (String, String, f64) =
            row.map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        metrics.push(row);
    }
    Ok(Some(RunRecord {
        method: field("method")?,
        pretrain_set: field("pretrain_set")?,
        test_set: field("test_set")?,
        protocol: field("protocol")?,
        metrics,
    }))
}

fn run_dirs(ctx: &RunContext, cfg: &ReportConfig) -> CliResult<Vec<PathBuf>> {
    if !cfg.runs.is_empty() {
        return Ok(cfg.runs.clone());
    }
    let entries = fs::read_dir(&ctx.out)
        .map_err(|e| CliError::data(format!("{}: {e}", ctx.out.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

type Key = (String, String, String);

/// Writes `report.csv` with the best value of every
/// `(method, pretrain_set, test_set, protocol_metric)`, `best_f1.csv` with
/// the best macro-F1 per `(method, pretrain_set, test_set)`, and
/// `per_class.csv` with per-class rows of the best run per protocol.
fn report_cmd(ctx: &mut RunContext, cfg: &ReportConfig) -> CliResult<serde_json::Value> {
    let mut runs = Vec::new();
    for dir in run_dirs(ctx, cfg)? {
        if let Some(r) = read_run(&dir)? {
            runs.push(r);
        }
    }
    if runs.is_empty() {
        return Err(CliError::data(format!(
            "no completed finetune or lineval runs under {}",
            ctx.out.display()
        )));
    }
    let key =
        |r: &RunRecord| -> Key { (r.method.clone(), r.pretrain_set.clone(), r.test_set.clone()) };

    let mut table: BTreeMap<(Key, String), f64> = BTreeMap::new();
    for r in &runs {
        for (class, metric, v) in &r.metrics {
            if class != "all" {
                continue;
            }
            let slot = table
                .entry((key(r), format!("{}_{metric}", r.protocol)))
                .or_insert(*v);
            if *v > *slot {
                *slot = *v;
            }
        }
    }
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|(((m, p, t), metric), v)| {
            vec![m.clone(), p.clone(), t.clone(), metric.clone(), fmt_f64(*v)]
        })
        .collect();
    ctx.write_csv(
        "report.csv",
        &["method", "pretrain_set", "test_set", "metric", "value"],
        &rows,
    )?;

    let mut best: BTreeMap<Key, (f64, String)> = BTreeMap::new();
    let mut best_run: BTreeMap<(Key, String), usize> = BTreeMap::new();
    for (i, r) in runs.iter().enumerate() {
        let Some(f1) = r.macro_f1() else { continue };
        let e = best.entry(key(r)).or_insert((f1, r.protocol.clone()));
        if f1 > e.0 {
            *e = (f1, r.protocol.clone());
        }
        let slot = best_run.entry((key(r), r.protocol.clone())).or_insert(i);
        if runs[*slot].macro_f1().is_some_and(|b| f1 > b) {
            *slot = i;
        }
    }
    let rows: Vec<Vec<String>> = best
        .iter()
        .map(|((m, p, t), (f1, proto))| {
            vec![m.clone(), p.clone(), t.clone(), proto.clone(), fmt_f64(*f1)]
        })
        .collect();
    let n_best = rows.len();
    ctx.write_csv(
        "best_f1.csv",
        &["method", "pretrain_set", "test_set", "protocol", "macro_f1"],
        &rows,
    )?;

    let mut rows = Vec::new();
    for (((m, p, t), proto), &i) in &best_run {
        for (class, metric, v) in &runs[i].metrics {
            if class == "all" {
                continue;
            }
            rows.push(vec![
                m.clone(),
                p.clone(),
                t.clone(),
                proto.clone(),
                class.clone(),
                metric.clone(),
                fmt_f64(*v),
            ]);
        }
    }
    ctx.write_csv(
        "per_class.csv",
        &[
            "method",
            "pretrain_set",
            "test_set",
            "protocol",
            "class",
            "metric",
            "value",
        ],
        &rows,
    )?;
    Ok(serde_json::json!({ "n_runs": runs.len(), "n_best_rows": n_best }))
}
