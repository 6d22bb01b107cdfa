// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use saesel_core::checkpoint::{read_checkpoint, write_checkpoint};
use saesel_core::extract::{extract_features, format_feature_sets, read_feature_sets, Scope};
use saesel_core::metrics::{correlation_summary, coverage_csv, coverage_curve, length_table_csv};
use saesel_core::selection::{
    feature_map, read_records, report_from_csv, report_to_csv, selection_report, sort_records_by,
    write_records, LengthMetric, Mode, SelectConfig,
};
use saesel_core::store::{read_shard, write_shard, ActivationShard};
use saesel_core::synth::{gen_corpus, ledger_csv, SampleSpec};
use saesel_core::train::{total_steps, train_with_progress, StepStats, TrainConfig};
use saesel_core::{length_activation_report, select};

use crate::config::Settings;
use crate::error::CliError;

fn write_out(key: &str, path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Runtime(format!("cannot write `{key}` {}: {e}", path.display())))
}

fn read_shards(s: &Settings) -> Result<Vec<ActivationShard>, CliError> {
    s.inputs("shards")?
        .iter()
        .map(|p| {
            read_shard(p).map_err(|e| CliError::Runtime(format!("shard {}: {e}", p.display())))
        })
        .collect()
}

fn train_config(s: &Settings) -> Result<TrainConfig, CliError> {
    let n: usize = s.parse("latents")?;
    let k: usize = s.parse("k")?;
    let cfg = TrainConfig {
        n,
        d: s.parse("dim")?,
        k,
        batch_size: s.parse("batch-size")?,
        lr: s.parse("lr")?,
        warmup_ratio: s.parse("warmup-ratio")?,
        epochs: s.parse("epochs")?,
        aux_coef: s.parse("aux-coef")?,
        dead_token_threshold: s.parse("dead-tokens")?,
        k_aux: s.parse_auto("k-aux")?.unwrap_or((2 * k).min(n)),
        seed: s.parse("seed")?,
        grad_acc_steps: s.parse("grad-acc")?,
        micro_acc_steps: s.parse("micro-acc")?,
        max_steps: s.parse_auto("steps")?,
        learn_pre_bias: s.parse("pre-bias")?,
        normalize_inputs: s.parse("normalize")?,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(s: &Settings) -> Result<(), CliError> {
    let cfg = train_config(s)?;
    let checkpoint = s.output("checkpoint")?;
    let loss_csv = s.output("loss-csv")?;
    let shards = read_shards(s)?;

    let rows: usize = shards.iter().map(ActivationShard::num_rows).sum();
    let total = total_steps(rows, &cfg);
    let every = (total / 20).max(1);
    let report = |st: &StepStats| {
        if st.step.is_multiple_of(every) || st.step == total {
            eprintln!(
                "step {}/{total}  loss {:.6}  aux {:.6}  lr {:.3e}",
                st.step, st.recon, st.aux, st.lr
            );
        }
    };
    let outcome = train_with_progress(&shards, &cfg, report)?;

    let mut csv = String::from("step,loss,aux_loss,lr\n");
    for st in &outcome.history {
        let _ = writeln!(csv, "{},{},{},{}", st.step, st.recon, st.aux, st.lr);
    }
    write_checkpoint(&checkpoint, &outcome.params)
        .map_err(|e| CliError::Runtime(format!("cannot write `checkpoint`: {e}")))?;
    write_out("loss-csv", &loss_csv, csv)?;
    eprintln!(
        "trained {total} steps; {} dead latents; checkpoint {}",
        outcome.tracker.num_dead(cfg.dead_token_threshold),
        checkpoint.display()
    );
    Ok(())
}

pub fn extract(s: &Settings) -> Result<(), CliError> {
    let theta: f64 = s.parse("threshold")?;
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(CliError::Config(format!(
            "`threshold` must be a nonnegative number, got {theta}"
        )));
    }
    let scope: Scope = s.parse("scope")?;
    let out = s.output("features")?;
    let ckpt = s.input("checkpoint")?;
    let params = read_checkpoint(&ckpt)
        .map_err(|e| CliError::Runtime(format!("checkpoint {}: {e}", ckpt.display())))?;
    let mut sets = Vec::new();
    for shard in read_shards(s)? {
        sets.extend(extract_features(&params, &shard, theta, scope)?);
    }
    let header = [
        ("threshold", theta.to_string()),
        ("scope", scope.name().to_string()),
        ("latents", params.n.to_string()),
        ("k", params.k.to_string()),
    ];
    write_out("features", &out, format_feature_sets(&sets, &header))?;
    eprintln!("wrote {} feature sets (threshold={theta})", sets.len());
    Ok(())
}

pub fn select_cmd(s: &Settings) -> Result<(), CliError> {
    let cfg = SelectConfig {
        mode: s.parse::<Mode>("mode")?,
        target_n: s.parse("n")?,
        sim_threshold: s.parse("sim-ratio")?,
        ..SelectConfig::default()
    };
    if cfg.target_n == 0 {
        return Err(CliError::Config("`n` must be at least 1".into()));
    }
    if !(cfg.sim_threshold >= 0.0 && cfg.sim_threshold.is_finite()) {
        return Err(CliError::Config(format!(
            "`sim-ratio` must be a nonnegative number, got {}",
            cfg.sim_threshold
        )));
    }
    let metric: LengthMetric = s.parse("length-metric")?;
    let selected_path = s.output("selected")?;
    let report_path = s.output("report")?;
    let records = read_records(s.input("records")?)?;
    let features = feature_map(read_feature_sets(s.input("features")?)?);

    let sorted = sort_records_by(records, metric);
    let state = select(&sorted, &features, &cfg)?;
    let report = selection_report(&state, &features)?;

    let echo = [
        ("mode", cfg.mode.name().to_string()),
        ("n", cfg.target_n.to_string()),
        ("sim_ratio", cfg.sim_threshold.to_string()),
        ("length_metric", metric.name().to_string()),
    ];
    let mut out = String::new();
    for (k, v) in &echo {
        let _ = writeln!(out, "# {k}={v}");
    }
    for id in &state.selected_ids {
        let _ = writeln!(out, "{id}");
    }
    write_out("selected", &selected_path, out)?;
    write_out("report", &report_path, report_to_csv(&report))?;

    let line: Vec<String> = echo.iter().map(|(k, v)| format!("{k}={v}")).collect();
    eprintln!(
        "{}: selected {} records in {} passes, union {}",
        line.join(" "),
        state.selected_ids.len(),
        state.pass_count,
        report.total_union
    );
    if state.shortfall > 0 {
        eprintln!(
            "warning: only {} of {} requested records could be selected (shortfall {})",
            state.selected_ids.len(),
            cfg.target_n,
            state.shortfall
        );
    }
    Ok(())
}

pub fn stats(s: &Settings) -> Result<(), CliError> {
    let metric: LengthMetric = s.parse("length-metric")?;
    let scope: Scope = s.parse("scope")?;
    let correlation = s.output("correlation")?;
    let table = s.optional_output("table");
    let coverage = s.optional_output("coverage");
    let report = match (&coverage, s.get("report")) {
        (Some(_), None) => return Err(CliError::Config("`coverage` needs `report`".into())),
        (Some(_), Some(_)) => Some(s.input("report")?),
        (None, _) => None,
    };
    let records = read_records(s.input("records")?)?;
    let features = feature_map(read_feature_sets(s.input("features")?)?);

    let (summary, rows) = length_activation_report(&records, &features, metric, scope)?;
    write_out(
        "correlation",
        &correlation,
        correlation_summary(&summary, metric, scope),
    )?;
    if let Some(path) = table {
        write_out("table", &path, length_table_csv(&rows))?;
    }
    if let (Some(path), Some(rp)) = (coverage, report) {
        let rep = report_from_csv(&fs::read_to_string(rp)?)?;
        write_out("coverage", &path, coverage_csv(&coverage_curve(&rep)))?;
    }
    eprintln!("r = {:.6} over {} records", summary.r, summary.n_points);
    Ok(())
}

pub fn synth(s: &Settings) -> Result<(), CliError> {
    let spec = SampleSpec {
        k_active: s.parse("active")?,
        num_samples: s.parse("samples")?,
        tokens_per_sample: (s.parse("min-tokens")?, s.parse("max-tokens")?),
        noise_sigma: s.parse("noise")?,
        ..SampleSpec::default()
    };
    let atoms: usize = s.parse("atoms")?;
    let dim: usize = s.parse("dim")?;
    let seed: u64 = s.parse("seed")?;
    let shard_path = s.output("shard")?;
    let records_path = s.output("records")?;
    let ledger_path = s.output("ledger")?;

    let corpus = gen_corpus(atoms, dim, &spec, seed)?;
    write_shard(&shard_path, &corpus.samples.shard)
        .map_err(|e| CliError::Runtime(format!("cannot write `shard`: {e}")))?;
    write_records(&records_path, &corpus.records)?;
    write_out("ledger", &ledger_path, ledger_csv(&corpus))?;
    eprintln!(
        "wrote {} samples, {} token rows (d={dim}, atoms={atoms})",
        corpus.records.len(),
        corpus.samples.shard.num_rows()
    );
    Ok(())
}
