//! Drives the `ecg-ssl` binary through a small end-to-end pipeline.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ecg-ssl")
}

pub fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn ecg-ssl")
}

pub fn write_json(path: &Path, value: &Value) {
    fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

/// One command invocation of the pipeline.
#[derive(Debug, Clone)]
pub struct Step {
    pub command: &'static str,
    pub config: Option<&'static str>,
    pub out: &'static str,
}

fn windows() -> Value {
    json!({
        "train": "runs/synth/train.ewin",
        "validation": "runs/synth/validation.ewin",
        "test": "runs/synth/test.ewin"
    })
}

fn tiny_encoder() -> Value {
    json!({
        "n_leads": 3,
        "conv_blocks": [
            {"out_channels": 4, "kernel_size": 7, "stride": 2},
            {"out_channels": 8, "kernel_size": 7, "stride": 2}
        ],
        "embedding_dim": 16,
        "projection_dim": 8,
        "prediction_hidden": 8
    })
}

/// Writes the configs of a small pipeline into `root`. Paths inside the
/// configs are relative to `root`, so two roots hold identical config bytes.
pub fn write_configs(root: &Path) -> Vec<Step> {
    write_json(
        &root.join("synth.json"),
        &json!({"dataset": {"n_subjects_per_class": 5, "n_leads": 3, "beats_per_record": 8}}),
    );
    write_json(
        &root.join("augment.json"),
        &json!({"input": "runs/synth/test.ewin", "n_windows": 2, "leads": [0, 2]}),
    );
    for method in ["simclr", "byol", "swav"] {
        write_json(
            &root.join(format!("pretrain_{method}.json")),
            &json!({
                "data": {"name": "A", "windows": windows()},
                "pretrain": {
                    "method": method,
                    "epochs": 2,
                    "batch_size": 8,
                    "n_prototypes": 4,
                    "augmentation": {"kind": "TimeWarping", "params": {"w": 3, "r_pct": 10.0}},
                    "encoder": tiny_encoder()
                }
            }),
        );
    }
    write_json(
        &root.join("finetune.json"),
        &json!({
            "data": {"name": "A", "windows": windows()},
            "checkpoint": "runs/pretrain_simclr/checkpoint.ckpt",
            "finetune": {"epochs": 2, "batch_size": 8}
        }),
    );
    write_json(
        &root.join("lineval_random.json"),
        &json!({
            "data": {"name": "A", "windows": windows()},
            "encoder": tiny_encoder(),
            "finetune": {"epochs": 2, "batch_size": 8}
        }),
    );
    write_json(
        &root.join("lineval_byol.json"),
        &json!({
            "data": {"name": "A", "windows": windows()},
            "checkpoint": "runs/pretrain_byol/checkpoint.ckpt",
            "finetune": {"epochs": 2, "batch_size": 8}
        }),
    );
    write_json(
        &root.join("distshift.json"),
        &json!({
            "checkpoint": "runs/pretrain_swav/checkpoint.ckpt",
            "reference": "runs/synth/train.ewin",
            "other": "runs/synth/test.ewin",
            "resolution": 32
        }),
    );
    vec![
        Step {
            command: "synth-gen",
            config: Some("synth.json"),
            out: "runs/synth",
        },
        Step {
            command: "augment-preview",
            config: Some("augment.json"),
            out: "runs/augment",
        },
        Step {
            command: "pretrain",
            config: Some("pretrain_simclr.json"),
            out: "runs/pretrain_simclr",
        },
        Step {
            command: "pretrain",
            config: Some("pretrain_byol.json"),
            out: "runs/pretrain_byol",
        },
        Step {
            command: "pretrain",
            config: Some("pretrain_swav.json"),
            out: "runs/pretrain_swav",
        },
        Step {
            command: "finetune",
            config: Some("finetune.json"),
            out: "runs/finetune_simclr",
        },
        Step {
            command: "lineval",
            config: Some("lineval_random.json"),
            out: "runs/lineval_random",
        },
        Step {
            command: "lineval",
            config: Some("lineval_byol.json"),
            out: "runs/lineval_byol",
        },
        Step {
            command: "distshift",
            config: Some("distshift.json"),
            out: "runs/distshift",
        },
        Step {
            command: "report",
            config: None,
            out: "runs",
        },
    ]
}

/// Runs every step in order, failing on the first nonzero exit.
pub fn run_pipeline(root: &Path, seed: u64) -> Result<Vec<Step>, String> {
    let steps = write_configs(root);
    let seed = seed.to_string();
    for step in &steps {
        let mut args = vec![step.command, "--out", step.out, "--seed", &seed];
        if let Some(c) = step.config {
            args.extend(["--config", c]);
        }
        let out = run(&args, root);
        if !out.status.success() {
            return Err(format!(
                "{} failed ({:?}): {}",
                step.command,
                out.status.code(),
                String::from_utf8_lossy(&out.stderr)
            ));
        }
    }
    Ok(steps)
}

/// Every CSV the step wrote except wall-clock timings, relative to `root`.
pub fn metric_csvs(root: &Path, step: &Step) -> Vec<PathBuf> {
    let manifest: Value =
        serde_json::from_slice(&fs::read(root.join(step.out).join("manifest.json")).unwrap())
            .unwrap();
    let mut files: Vec<PathBuf> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| PathBuf::from(step.out).join(v.as_str().unwrap()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "csv") && p.file_name().unwrap() != "timing.csv"
        })
        .collect();
    files.sort();
    files
}

/// Files of the two roots whose bytes differ, over all metric CSVs.
pub fn differing_csvs(a: &Path, b: &Path, steps: &[Step]) -> (usize, Vec<PathBuf>) {
    let mut n = 0;
    let mut differing = Vec::new();
    for step in steps {
        for rel in metric_csvs(a, step) {
            n += 1;
            if fs::read(a.join(&rel)).ok() != fs::read(b.join(&rel)).ok() {
                differing.push(rel);
            }
        }
    }
    (n, differing)
}
