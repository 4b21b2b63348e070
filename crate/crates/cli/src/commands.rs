use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use vidpose_core::config::RunConfig;
use vidpose_core::data::export::{read_sidecar, write_dataset, Sidecar};
use vidpose_core::data::skeleton::JOINT_NAMES;
use vidpose_core::data::synth::generate;
use vidpose_core::data::Dataset;
use vidpose_core::gradcheck::{self, GradcheckOptions};
use vidpose_core::metrics::StructuredReport;
use vidpose_core::plot;
use vidpose_core::train::{evaluate_checkpoint, Checkpoint, StepRecord, Trainer};
use vidpose_core::Error as CoreError;
use vidpose_tensor::{Container, MAGIC};

use crate::{Cli, Command, EvalArgs, GradcheckArgs, InspectArgs, Outcome, SynthArgs, TrainArgs};

pub const OUT_ENV: &str = "VIDPOSE_OUT";
pub const DEFAULT_OUT: &str = "vidpose-out";

const FINETUNE_SCHEDULE: [&str; 6] = [
    "train.batch_size=16",
    "train.epochs=20",
    "train.lr=5e-6",
    "train.weight_decay=0.1",
    "train.lr_step=5",
    "train.lr_gamma=0.5",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Heldout,
    Train,
    All,
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Gradcheck(a) => gradcheck(cli, a),
        Command::Inspect(a) => inspect(a),
    }
}

fn usage(msg: String) -> anyhow::Error {
    CoreError::Usage(msg).into()
}

/// Loads the configuration: `base` (or the `--config` file when given),
/// then `presets`, then the `--set` overrides.
fn load_config(cli: &Cli, base: Option<String>, presets: &[&str]) -> Result<RunConfig> {
    let text = match (&cli.config, base) {
        (Some(p), _) => fs::read_to_string(p).map_err(|e| CoreError::Io {
            path: p.display().to_string(),
            source: e,
        })?,
        (None, Some(b)) => b,
        (None, None) => String::new(),
    };
    let overrides: Vec<String> = presets.iter().map(|s| s.to_string()).chain(cli.sets.iter().cloned()).collect();
    let cfg = RunConfig::from_toml(&text, &overrides).map_err(|e| match (&cli.config, e) {
        (Some(p), CoreError::Config(m)) => CoreError::Config(format!("{}: {m}", p.display())),
        (_, e) => e,
    })?;
    Ok(cfg)
}

fn print_config(cfg: &RunConfig, out: &Path) {
    eprintln!("effective configuration (output root {}):", out.display());
    for line in cfg.to_toml().lines() {
        eprintln!("  {line}");
    }
}

fn out_root(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Refuses to write into a non-empty directory unless forced.
fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    let non_empty = fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false);
    if non_empty && !force {
        return Err(usage(format!("{} is not empty; pass --force to write into it", dir.display())));
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<Outcome> {
    let cfg = load_config(cli, None, &[])?;
    let out = out_root(cli, &cfg);
    print_config(&cfg, &out);
    let dir = out.join("dataset");
    prepare_dir(&dir, args.force)?;
    let videos = generate(&cfg.data)?;
    write_dataset(&videos, &dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let frames: usize = videos.iter().map(|v| v.frames.len()).sum();
    println!(
        "synthesized {} videos, {} frames, {} joints into {}",
        videos.len(),
        frames,
        JOINT_NAMES.len(),
        dir.display()
    );
    Ok(Outcome::Ok)
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<Outcome> {
    let presets: &[&str] = if args.finetune_schedule { &FINETUNE_SCHEDULE } else { &[] };
    let mut cfg = load_config(cli, None, presets)?;
    if let Some(list) = &args.ablate {
        cfg.model.ablation.disable(list)?;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    let out = out_root(cli, &cfg);
    print_config(&cfg, &out);
    let dir = out.join("train");
    let ckpt_dir = dir.join("checkpoints");
    let resume = args.resume.as_ref().map(|p| Checkpoint::load(p)).transpose()?;
    if resume.is_none() {
        prepare_dir(&dir, args.force)?;
    }
    fs::create_dir_all(&ckpt_dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;

    let data = Dataset::generate(&cfg.data, &cfg.model)?;
    let (train_set, held) = data.split(cfg.data.holdout_fraction);
    let mut trainer = match &resume {
        Some(ck) => Trainer::resume(&cfg, ck)?,
        None => Trainer::new(&cfg)?,
    };
    println!(
        "training on {} windows ({} held out), {} parameters, epochs {}..{}",
        train_set.len(),
        held.len(),
        trainer.store.num_trainable(),
        trainer.epoch,
        cfg.train.epochs
    );
    if resume.is_none() {
        let path = ckpt_dir.join("epoch_000.vptc");
        trainer.checkpoint().save(&path)?;
        println!("wrote initial checkpoint {}", path.display());
    }
    let loss_path = dir.join("loss.jsonl");
    let mut loss_log = BufWriter::new(
        OpenOptions::new()
            .create(true)
            .append(resume.is_some())
            .write(true)
            .truncate(resume.is_none())
            .open(&loss_path)?,
    );
    trainer.fit(&train_set, |t, summary, records| {
        for r in records {
            serde_json::to_writer(&mut loss_log, r)?;
            loss_log.write_all(b"\n").map_err(|e| CoreError::Io {
                path: loss_path.display().to_string(),
                source: e,
            })?;
        }
        let path = ckpt_dir.join(format!("epoch_{:03}.vptc", t.epoch));
        t.checkpoint().save(&path)?;
        println!(
            "epoch {} lr {:e} loss {:.6e} ({} steps) -> {}",
            summary.epoch,
            summary.lr,
            summary.mean_loss,
            summary.steps,
            path.display()
        );
        Ok(())
    })?;
    loss_log.flush()?;
    drop(loss_log);
    let records: Vec<StepRecord> = fs::read_to_string(&loss_path)?
        .lines()
        .map(serde_json::from_str)
        .collect::<std::result::Result<_, _>>()?;
    if !records.is_empty() {
        plot::save(&dir.join("loss.png"), &[plot::loss_series(&records)], None, None)?;
    }
    println!("training finished after {} epochs; outputs in {}", trainer.epoch, dir.display());
    Ok(Outcome::Ok)
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<Outcome> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let cfg = load_config(cli, Some(ck.config.to_toml()), &[])?;
    let out = out_root(cli, &cfg);
    print_config(&cfg, &out);
    let data = Dataset::generate(&cfg.data, &cfg.model)?;
    let (train_set, held) = data.split(cfg.data.holdout_fraction);
    let set = match args.split {
        Split::Heldout => held,
        Split::Train => train_set,
        Split::All => data,
    };
    let ev = evaluate_checkpoint(&ck, &cfg, &set)?;
    let dir = out.join("eval");
    fs::create_dir_all(&dir)?;
    let table = ev.report.table();
    fs::write(dir.join("report.txt"), &table)?;
    write_json(&dir.join("report.json"), &ev.report.structured())?;
    print!("{table}");
    println!(
        "{} windows (epoch {} checkpoint): mean PCK@{} {:.4}, mAP {:.4}",
        ev.report.samples, ck.epoch, ev.report.threshold, ev.report.mean_pck, ev.report.map
    );
    if args.dump_weights {
        let path = dir.join("frame_weights.jsonl");
        let mut w = BufWriter::new(File::create(&path)?);
        for p in &ev.predictions {
            serde_json::to_writer(&mut w, &serde_json::json!({"video": p.key.0, "frame": p.key.1, "weights": p.frame_weights}))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        println!("wrote {}", path.display());
    }
    if args.dump_attn {
        if ev.predictions.iter().all(|p| p.context_attention.is_none()) {
            log::warn!("cross-attention is disabled in this model; no attention maps to dump");
        } else {
            let (hp, wp) = cfg.model.backbone.grid();
            let path = dir.join("cross_attention.jsonl");
            let mut w = BufWriter::new(File::create(&path)?);
            for p in &ev.predictions {
                serde_json::to_writer(
                    &mut w,
                    &serde_json::json!({"video": p.key.0, "frame": p.key.1, "grid": [hp, wp], "context": p.context_attention}),
                )?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            println!("wrote {}", path.display());
        }
    }
    if args.plots {
        let pr = plot::pr_series(&ev.accumulator, &JOINT_NAMES);
        plot::save(&dir.join("pr_curves.png"), &pr, Some((0.0, 1.0)), Some((0.0, 1.0)))?;
        let pr_json: Vec<_> = pr.iter().map(|s| serde_json::json!({"joint": s.label, "recall_precision": s.points})).collect();
        write_json(&dir.join("pr_curves.json"), &pr_json)?;
        let m = &cfg.metrics;
        let sweep = plot::pck_sweep(&ev.accumulator, m.sweep_max, m.sweep_steps);
        plot::save(&dir.join("pck_sweep.png"), std::slice::from_ref(&sweep), Some((0.0, m.sweep_max)), Some((0.0, 1.0)))?;
        write_json(&dir.join("pck_sweep.json"), &sweep.points)?;
        println!("wrote plots to {}", dir.display());
    }
    Ok(Outcome::Ok)
}

fn gradcheck(cli: &Cli, args: &GradcheckArgs) -> Result<Outcome> {
    let cfg = load_config(cli, None, &[])?;
    print_config(&cfg, &out_root(cli, &cfg));
    let opts = GradcheckOptions {
        seed: args.seed,
        only: args.groups.clone(),
        corrupt: args.corrupt.clone(),
        ..Default::default()
    };
    let report = gradcheck::run(&cfg.model, &opts)?;
    println!("central differences, h = {:e}, tolerance {:e}", report.step, report.tolerance);
    for g in &report.groups {
        println!(
            "{:<16} max rel. err {:.3e}  ({} tensors)  {}",
            g.group,
            g.max_rel_err,
            g.tensors.len(),
            if g.passed { "PASS" } else { "FAIL" }
        );
        if args.verbose {
            for t in &g.tensors {
                println!("    {:<48} {:.3e} ({} entries)", t.name, t.max_rel_err, t.checked);
            }
        }
    }
    if report.passed() {
        println!("all groups pass");
        Ok(Outcome::Ok)
    } else {
        println!("gradient check failed in: {}", report.failures().join(", "));
        Ok(Outcome::Failed)
    }
}

fn inspect(args: &InspectArgs) -> Result<Outcome> {
    let path = &args.path;
    let mut head = [0u8; 4];
    let n = File::open(path)
        .map_err(|e| CoreError::Io {
            path: path.display().to_string(),
            source: e,
        })?
        .read(&mut head)?;
    if n == 4 && &head == MAGIC {
        return inspect_container(path);
    }
    let text = fs::read_to_string(path)?;
    if let Ok(s) = serde_json::from_str::<StructuredReport>(&text) {
        println!("evaluation report v{} ({} windows, threshold {})", s.version, s.samples, s.threshold);
        for g in &s.groups {
            println!("  {:<9} PCK {:>6.1}  AP {:>6.1}", g.group, g.pck, g.ap);
        }
        return Ok(Outcome::Ok);
    }
    if serde_json::from_str::<Sidecar>(&text).is_ok() {
        let s = read_sidecar(path)?;
        let visible: usize = s.frames.iter().flat_map(|f| &f.keypoints).filter(|k| k.2).count();
        let total: usize = s.frames.iter().map(|f| f.keypoints.len()).sum();
        let occluded = s.frames.iter().filter(|f| f.events.occluded).count();
        let blurred = s.frames.iter().filter(|f| f.events.blurred).count();
        let noisy = s.frames.iter().filter(|f| f.events.noisy).count();
        println!("ground-truth sidecar v{}: {}×{} frames, {} joints", s.version, s.width, s.height, s.joints.len());
        println!(
            "  {} frames, {visible}/{total} joints visible, events: {occluded} occluded, {blurred} blurred, {noisy} noisy",
            s.frames.len()
        );
        return Ok(Outcome::Ok);
    }
    Err(usage(format!(
        "{}: not a checkpoint, evaluation report or ground-truth sidecar",
        path.display()
    )))
}

fn inspect_container(path: &Path) -> Result<Outcome> {
    match Checkpoint::load(path) {
        Ok(ck) => {
            let params = ck.tensors.tensors.iter().filter(|(n, _)| n.starts_with("param.")).count();
            let scalars: usize = ck
                .tensors
                .tensors
                .iter()
                .filter(|(n, _)| n.starts_with("param."))
                .map(|(_, t)| t.numel())
                .sum();
            let a = &ck.config.model.ablation;
            println!("training checkpoint {}", path.display());
            println!("  epoch {} (step {}), model hash {}", ck.epoch, ck.step, ck.model_hash);
            println!("  {params} parameter/buffer tensors, {scalars} values");
            println!("  components: msff={} afw={} cross_attention={}", a.msff, a.afw, a.cross_attention);
            Ok(Outcome::Ok)
        }
        Err(_) => {
            let c = Container::load(path).with_context(|| format!("reading {}", path.display()))?;
            println!("tensor container {} ({} tensors)", path.display(), c.tensors.len());
            for (k, v) in &c.meta {
                println!("  meta {k} = {v}");
            }
            for (name, t) in &c.tensors {
                println!("  {name} {:?}", t.shape());
            }
            Ok(Outcome::Ok)
        }
    }
}
