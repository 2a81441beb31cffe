//! Command implementations. Every command resolves its configuration, runs,
//! writes deterministic artifacts plus `resolved_config.toml`, and appends
//! wall-clock information only to the `run.log` sidecar.

use crate::config::{Precision, RunConfig};
use crate::dataset::{infer_context, load_dataset, split_by_name, write_dataset};
use anyhow::{bail, Context};
use m3_core::data::{
    filter_items, generate_synthetic, generate_windows, load_movielens, split_users,
    DatasetSplits, LongCopyParams, MarkovParams, MixedContextParams, SyntheticKind,
};
use m3_core::eval::{ablate, evaluate, MetricsReport};
use m3_core::lrd::{dep_profile, read_embeddings, write_profile_csv};
use m3_core::model::{load_checkpoint, save_checkpoint, EncoderSet, GateGroupKey, LoadedModel};
use m3_core::scalar::Scalar;
use m3_core::tensor::Tensor;
use m3_core::train::{train, write_loss_csv};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

fn log_run(out_dir: &Path, command: &str, elapsed_ms: u128) -> anyhow::Result<()> {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out_dir.join("run.log"))?;
    writeln!(log, "command={command} elapsed_ms={elapsed_ms} finished_unix={stamp}")?;
    Ok(())
}

pub fn cmd_prepare(config: &RunConfig, input: &Path, out_dir: &Path) -> anyhow::Result<()> {
    let started = Instant::now();
    let raw = load_movielens(input)?;
    let (dense, vocabulary) = filter_items(&raw, config.min_item_count)?;
    let windows = generate_windows(&dense, &config.dataset_config())?;
    let (train, validation, test) = split_users(&windows, config.split, config.seed)?;
    let splits = DatasetSplits {
        train,
        validation,
        test,
        vocabulary,
    };
    write_dataset(out_dir, &splits)?;
    config.write_resolved(out_dir)?;
    println!(
        "prepared {} train / {} validation / {} test windows over {} items -> {}",
        splits.train.len(),
        splits.validation.len(),
        splits.test.len(),
        splits.vocabulary.len(),
        out_dir.display()
    );
    log_run(out_dir, "prepare", started.elapsed().as_millis())
}

/// Seeded structured transition matrix: every item gets one dominant and two
/// secondary successors over a uniform floor.
pub fn structured_transition(vocab: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..vocab)
        .map(|_| {
            let mut row = vec![0.1 / vocab as f64; vocab];
            let mut picks = Vec::with_capacity(3);
            while picks.len() < 3 {
                let c = rng.gen_range(0..vocab);
                if !picks.contains(&c) {
                    picks.push(c);
                }
            }
            row[picks[0]] += 0.6;
            row[picks[1]] += 0.15;
            row[picks[2]] += 0.15;
            row
        })
        .collect()
}

pub fn cmd_synth(config: &RunConfig, out_dir: &Path) -> anyhow::Result<()> {
    let started = Instant::now();
    let kind = match config.synth_kind.as_str() {
        "markov" => SyntheticKind::Markov(MarkovParams {
            transition: structured_transition(config.synth_vocab, config.seed),
            n_users: config.synth_users,
            seq_len: config.synth_len,
        }),
        "long-copy" => SyntheticKind::LongCopy(LongCopyParams {
            vocab: config.synth_vocab,
            lag: config.synth_lag,
            copy_prob: config.synth_copy_prob,
            n_users: config.synth_users,
            seq_len: config.synth_len,
        }),
        "mixed-context" => SyntheticKind::MixedContext(MixedContextParams {
            vocab: config.synth_vocab,
            n_anchors: config.synth_anchors,
            home_prob: config.synth_home_prob,
            detail_prob: config.synth_detail_prob,
            scenario_persistence: config.synth_scenario_persistence,
            n_users: config.synth_users,
            seq_len: config.synth_len,
        }),
        other => bail!("unknown synthetic kind `{other}`"),
    };
    let ds = generate_synthetic(&kind, config.seed)?;
    // synthetic sequences are emitted as windows directly
    let (train, validation, test) = split_users(&ds.sequences, config.split, config.seed)?;
    let splits = DatasetSplits {
        train,
        validation,
        test,
        vocabulary: ds.vocabulary,
    };
    write_dataset(out_dir, &splits)?;
    config.write_resolved(out_dir)?;
    println!(
        "generated {} {} windows over {} items -> {}",
        splits.train.len() + splits.validation.len() + splits.test.len(),
        config.synth_kind,
        splits.vocabulary.len(),
        out_dir.display()
    );
    log_run(out_dir, "synth", started.elapsed().as_millis())
}

fn train_generic<S: Scalar>(
    config: &RunConfig,
    splits: &DatasetSplits,
    out_dir: &Path,
) -> anyhow::Result<(Option<f64>, f64)> {
    let (ctx_in, ctx_out) =
        infer_context(&[&splits.train, &splits.validation, &splits.test])?;
    let model_config = config.model_config(ctx_in, ctx_out)?;
    let outcome = train::<S>(
        splits,
        model_config,
        &config.train_config(),
        &config.loss_config(),
    )?;
    save_checkpoint(&out_dir.join("checkpoint.m3ck"), &outcome.model, &outcome.store)?;
    write_loss_csv(&out_dir.join("loss_curve.csv"), &outcome.records)?;
    let final_loss = outcome.records.last().map(|r| r.loss).unwrap_or(f64::NAN);
    Ok((outcome.best_val_map20, final_loss))
}

pub fn cmd_train(config: &RunConfig, data_dir: &Path, out_dir: &Path) -> anyhow::Result<()> {
    let started = Instant::now();
    let splits = load_dataset(data_dir)?;
    std::fs::create_dir_all(out_dir)?;
    config.write_resolved(out_dir)?;
    let (best_val, final_loss) = match config.precision {
        Precision::F64 => train_generic::<f64>(config, &splits, out_dir)?,
        Precision::F32 => train_generic::<f32>(config, &splits, out_dir)?,
    };
    match best_val {
        Some(v) => println!(
            "trained {}-{} ({} gate): final loss {final_loss:.4}, best validation mAP@20 {v:.4}",
            config.variant, config.enabled, config.gate
        ),
        None => println!(
            "trained {}-{} ({} gate): final loss {final_loss:.4}",
            config.variant, config.enabled, config.gate
        ),
    }
    log_run(out_dir, "train", started.elapsed().as_millis())
}

fn parse_ns(s: &str) -> anyhow::Result<Vec<usize>> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().context("bad n value"))
        .collect()
}

fn write_metrics_csv(
    path: &Path,
    model: &str,
    subset: &str,
    gate: &str,
    ns: &[usize],
    report: &MetricsReport,
) -> anyhow::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = ns.iter().map(|n| format!("map{n}")).collect();
    writeln!(out, "model,subset,gate_type,{},n_examples", header.join(","))?;
    let values: Vec<String> = ns
        .iter()
        .map(|&n| report.map_at(n).expect("requested n").to_string())
        .collect();
    writeln!(
        out,
        "{model},{subset},{gate},{},{}",
        values.join(","),
        report.n_examples
    )?;
    Ok(())
}

pub fn cmd_eval(
    checkpoint: &Path,
    data_dir: &Path,
    split: &str,
    ns_arg: &str,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let ns = parse_ns(ns_arg)?;
    let splits = load_dataset(data_dir)?;
    let LoadedModel { model, store } = load_checkpoint::<f64>(checkpoint)?;
    let windows = split_by_name(&splits, split)?;
    let report = evaluate(&model, &store, windows, &ns, splits.vocabulary.len())?;
    for &n in &ns {
        println!(
            "mAP@{n} = {:.6}  ({} instances, {split} split)",
            report.map_at(n).expect("requested n"),
            report.n_examples
        );
    }
    let out = out.unwrap_or_else(|| PathBuf::from("metrics.csv"));
    write_metrics_csv(
        &out,
        &model.config.variant.to_string(),
        &model.config.enabled.to_string(),
        &model.config.gate.to_string(),
        &ns,
        &report,
    )?;
    println!("metrics -> {}", out.display());
    Ok(())
}

pub fn cmd_ablate(
    config: &RunConfig,
    data_dir: &Path,
    subsets_arg: &str,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let subsets: Vec<EncoderSet> = subsets_arg
        .split(',')
        .map(|s| s.trim().parse::<EncoderSet>().map_err(Into::into))
        .collect::<anyhow::Result<_>>()?;
    let splits = load_dataset(data_dir)?;
    let (ctx_in, ctx_out) = infer_context(&[&splits.train, &splits.validation, &splits.test])?;
    let base = config.model_config(ctx_in, ctx_out)?;
    let rows = match config.precision {
        Precision::F64 => ablate::<f64>(
            &splits,
            &base,
            &config.train_config(),
            &config.loss_config(),
            &subsets,
        )?,
        Precision::F32 => ablate::<f32>(
            &splits,
            &base,
            &config.train_config(),
            &config.loss_config(),
            &subsets,
        )?,
    };
    let out = out.unwrap_or_else(|| PathBuf::from("ablation.csv"));
    let mut file = std::io::BufWriter::new(std::fs::File::create(&out)?);
    writeln!(file, "subset,map20")?;
    for row in &rows {
        writeln!(file, "{},{}", row.subset, row.map20)?;
        println!("{}-{:<4} mAP@20 = {:.6}", config.variant, row.subset.to_string(), row.map20);
    }
    println!("ablation table -> {}", out.display());
    Ok(())
}

pub fn cmd_lrd(
    data_dir: &Path,
    split: &str,
    checkpoint: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    lags_arg: &str,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let lags = parse_ns(lags_arg)?;
    let splits = load_dataset(data_dir)?;
    let windows = split_by_name(&splits, split)?;
    let table: Tensor<f64> = match (checkpoint, embeddings) {
        (Some(ckpt), None) => {
            let LoadedModel { model, store } = load_checkpoint::<f64>(&ckpt)?;
            store.value(model.tables.input).clone()
        }
        (None, Some(path)) => read_embeddings(&path)?,
        _ => bail!("pass exactly one of --checkpoint or --embeddings"),
    };
    let profile = dep_profile(windows, &table, &lags)?;
    for ((lag, dep), n) in profile.lags.iter().zip(&profile.dep).zip(&profile.n_samples) {
        println!("lag {lag:>4}: dep = {dep:+.6}  ({n} samples)");
    }
    if let Some(slope) = profile.slope {
        println!("log-log decay slope: {slope:.4}");
    }
    let out = out.unwrap_or_else(|| PathBuf::from("profile.csv"));
    write_profile_csv(&out, &profile)?;
    println!("profile -> {}", out.display());
    Ok(())
}

fn parse_group_key(s: &str) -> anyhow::Result<GateGroupKey> {
    match s {
        "context" => Ok(GateGroupKey::CtxOut(0)),
        other => {
            if let Some(idx) = other.strip_prefix("ctx-out:") {
                Ok(GateGroupKey::CtxOut(idx.parse().context("bad feature index")?))
            } else if let Some(idx) = other.strip_prefix("ctx-in:") {
                Ok(GateGroupKey::CtxIn(idx.parse().context("bad feature index")?))
            } else {
                bail!("unknown group key `{other}` (expected context, ctx-in:K or ctx-out:K)")
            }
        }
    }
}

pub fn cmd_gates(
    checkpoint: &Path,
    data_dir: &Path,
    split: &str,
    group_by: &str,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let key = parse_group_key(group_by)?;
    let splits = load_dataset(data_dir)?;
    let windows = split_by_name(&splits, split)?;
    let LoadedModel { model, store } = load_checkpoint::<f64>(checkpoint)?;
    let rows = model.gate_report(&store, windows, key)?;
    let out = out.unwrap_or_else(|| PathBuf::from("gates.csv"));
    let mut file = std::io::BufWriter::new(std::fs::File::create(&out)?);
    writeln!(file, "group,gate_t,gate_s,gate_l,n_examples")?;
    for row in &rows {
        writeln!(
            file,
            "{},{},{},{},{}",
            row.group, row.gate.values[0], row.gate.values[1], row.gate.values[2], row.n_examples
        )?;
        println!(
            "group {}: gates T={:.4} S={:.4} L={:.4}  ({} examples)",
            row.group, row.gate.values[0], row.gate.values[1], row.gate.values[2], row.n_examples
        );
    }
    println!("gate report -> {}", out.display());
    Ok(())
}
