// SPDX-License-Identifier: MIT OR Apache-2.0

//! Key table, flat `key = value` config files, and flag-over-file merging.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::builder::PossibleValuesParser;
use clap::parser::ValueSource;
use clap::{Arg, ArgMatches, Command};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sub {
    Train,
    Extract,
    Select,
    Stats,
    Synth,
}

impl Sub {
    pub const ALL: [Sub; 5] = [
        Sub::Train,
        Sub::Extract,
        Sub::Select,
        Sub::Stats,
        Sub::Synth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Sub::Train => "train",
            Sub::Extract => "extract",
            Sub::Select => "select",
            Sub::Stats => "stats",
            Sub::Synth => "synth",
        }
    }

    fn about(self) -> &'static str {
        match self {
            Sub::Train => "Train a TopK SAE on activation shards",
            Sub::Extract => "Write per-sample activated-feature sets",
            Sub::Select => "Select a diverse subset of records by feature coverage",
            Sub::Stats => "Length/feature correlation and coverage curve",
            Sub::Synth => "Generate a synthetic shard, records and ground-truth ledger",
        }
    }
}

pub struct Key {
    pub name: &'static str,
    help: &'static str,
    default: Option<&'static str>,
    choices: &'static [&'static str],
    /// Accepts a bare `--flag` meaning `true`.
    switch: bool,
    subs: &'static [Sub],
}

const fn key(
    name: &'static str,
    help: &'static str,
    default: Option<&'static str>,
    subs: &'static [Sub],
) -> Key {
    Key {
        name,
        help,
        default,
        choices: &[],
        switch: false,
        subs,
    }
}

const fn choice(
    name: &'static str,
    help: &'static str,
    default: &'static str,
    choices: &'static [&'static str],
    subs: &'static [Sub],
) -> Key {
    Key {
        name,
        help,
        default: Some(default),
        choices,
        switch: false,
        subs,
    }
}

const fn switch(
    name: &'static str,
    help: &'static str,
    default: &'static str,
    subs: &'static [Sub],
) -> Key {
    Key {
        name,
        help,
        default: Some(default),
        choices: &["true", "false"],
        switch: true,
        subs,
    }
}

use Sub::*;

/// Every key accepted by a config file or on the command line.
pub const KEYS: &[Key] = &[
    key(
        "seed",
        "Seed for all randomized behavior",
        Some("0"),
        &[Train, Synth],
    ),
    key(
        "shards",
        "Comma-separated activation shard paths",
        None,
        &[Train, Extract],
    ),
    key(
        "checkpoint",
        "SAE checkpoint path (output of train, input of extract)",
        None,
        &[Train, Extract],
    ),
    key("loss-csv", "Per-step loss CSV output", None, &[Train]),
    key("latents", "Number of SAE latents", Some("1024"), &[Train]),
    key("dim", "Activation dimension", Some("64"), &[Train, Synth]),
    key("k", "Active latents per token", Some("128"), &[Train]),
    key("lr", "Peak Adam learning rate", Some("7e-5"), &[Train]),
    key(
        "warmup-ratio",
        "Fraction of steps spent in linear warmup",
        Some("0.5"),
        &[Train],
    ),
    key(
        "epochs",
        "Passes over the data (ignored when --steps is set)",
        Some("4"),
        &[Train],
    ),
    key(
        "steps",
        "Exact optimizer step count, or auto",
        Some("auto"),
        &[Train],
    ),
    key(
        "batch-size",
        "Rows per accumulation slice",
        Some("4096"),
        &[Train],
    ),
    key(
        "grad-acc",
        "Accumulation slices per optimizer step",
        Some("1"),
        &[Train],
    ),
    key(
        "micro-acc",
        "Sequential sub-slices per accumulation slice",
        Some("1"),
        &[Train],
    ),
    key(
        "aux-coef",
        "Dead-latent auxiliary loss coefficient",
        Some("0.03125"),
        &[Train],
    ),
    key(
        "dead-tokens",
        "Tokens without firing before a latent counts as dead",
        Some("10000000"),
        &[Train],
    ),
    key(
        "k-aux",
        "Dead latents used by the auxiliary loss, or auto (2k)",
        Some("auto"),
        &[Train],
    ),
    switch(
        "normalize",
        "Scale input rows to unit norm",
        "false",
        &[Train],
    ),
    switch("pre-bias", "Learn the pre-encoder bias", "true", &[Train]),
    key(
        "threshold",
        "JumpReLU activation threshold",
        Some("10"),
        &[Extract],
    ),
    choice(
        "scope",
        "Tokens that contribute features",
        "both",
        &["instruction", "both"],
        &[Extract, Stats],
    ),
    key(
        "features",
        "Feature-set file (output of extract)",
        None,
        &[Extract, Select, Stats],
    ),
    key(
        "records",
        "Records JSONL (output of synth)",
        None,
        &[Select, Stats, Synth],
    ),
    choice(
        "mode",
        "Selection rule",
        "greedy",
        &["greedy", "simscale"],
        &[Select],
    ),
    key("n", "Number of records to select", Some("1000"), &[Select]),
    key(
        "sim-ratio",
        "Similarity ratio threshold for simscale",
        Some("0.8"),
        &[Select],
    ),
    choice(
        "length-metric",
        "Instruction length unit",
        "chars",
        &["chars", "tokens"],
        &[Select, Stats],
    ),
    key("selected", "Selected ids output", None, &[Select]),
    key(
        "report",
        "Selection report CSV (output of select, input of stats)",
        None,
        &[Select, Stats],
    ),
    key(
        "correlation",
        "Correlation summary JSON output",
        None,
        &[Stats],
    ),
    key(
        "table",
        "Per-record length/count CSV output",
        None,
        &[Stats],
    ),
    key(
        "coverage",
        "Coverage curve CSV output (needs --report)",
        None,
        &[Stats],
    ),
    key("shard", "Synthetic shard output", None, &[Synth]),
    key("ledger", "Ground-truth ledger CSV output", None, &[Synth]),
    key(
        "atoms",
        "Ground-truth dictionary size",
        Some("256"),
        &[Synth],
    ),
    key("active", "Atoms per token", Some("3"), &[Synth]),
    key("samples", "Number of samples", Some("1000"), &[Synth]),
    key(
        "min-tokens",
        "Minimum tokens per sample",
        Some("1"),
        &[Synth],
    ),
    key(
        "max-tokens",
        "Maximum tokens per sample",
        Some("20"),
        &[Synth],
    ),
    key("noise", "Gaussian noise sigma", Some("0.01"), &[Synth]),
];

pub fn command() -> Command {
    let mut cmd = Command::new("saesel")
        .about("TopK SAE feature extraction and diversity-driven data selection")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for sub in Sub::ALL {
        let mut sc = Command::new(sub.name()).about(sub.about()).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("Flat key = value file; flags override it"),
        );
        for k in KEYS.iter().filter(|k| k.subs.contains(&sub)) {
            let mut arg = Arg::new(k.name)
                .long(k.name)
                .help(k.help)
                .allow_negative_numbers(true);
            if let Some(d) = k.default {
                arg = arg.default_value(d);
            }
            if !k.choices.is_empty() {
                arg = arg.value_parser(PossibleValuesParser::new(k.choices));
            }
            if k.switch {
                arg = arg.num_args(0..=1).default_missing_value("true");
            }
            sc = sc.arg(arg);
        }
        cmd = cmd.subcommand(sc);
    }
    cmd
}

/// Parses a config file. Keys may use `-` or `_`.
pub fn parse_config(text: &str) -> Result<BTreeMap<&'static str, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("config line {}: expected key = value", i + 1))
        })?;
        let name = k.trim().replace('_', "-");
        let key = KEYS.iter().find(|key| key.name == name).ok_or_else(|| {
            CliError::Config(format!("config line {}: unknown key `{name}`", i + 1))
        })?;
        if out.insert(key.name, v.trim().to_string()).is_some() {
            return Err(CliError::Config(format!(
                "config line {}: duplicate key `{name}`",
                i + 1
            )));
        }
    }
    Ok(out)
}

/// Resolved values for one subcommand.
#[derive(Debug)]
pub struct Settings {
    values: BTreeMap<&'static str, String>,
}

impl Settings {
    /// Flag beats file beats default. File keys that belong to other
    /// subcommands are accepted and ignored, so one file can drive a pipeline.
    pub fn resolve(sub: Sub, matches: &ArgMatches) -> Result<Self, CliError> {
        let file = match matches.get_one::<String>("config") {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("config: cannot read {path}: {e}")))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        let mut values = BTreeMap::new();
        for k in KEYS.iter().filter(|k| k.subs.contains(&sub)) {
            let flag = matches.get_one::<String>(k.name);
            let from_cli = matches.value_source(k.name) == Some(ValueSource::CommandLine);
            let v = match (from_cli, file.get(k.name)) {
                (true, _) | (false, None) => flag.cloned(),
                (false, Some(v)) => {
                    if !k.choices.is_empty() && !k.choices.contains(&v.as_str()) {
                        return Err(CliError::Config(format!(
                            "invalid value `{v}` for `{}` (expected one of {})",
                            k.name,
                            k.choices.join(", ")
                        )));
                    }
                    Some(v.clone())
                }
            };
            if let Some(v) = v {
                values.insert(k.name, v);
            }
        }
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
    }

    pub fn parse<T>(&self, key: &str) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|e| CliError::Config(format!("invalid value `{raw}` for `{key}`: {e}")))
    }

    /// `None` when the value is `auto`.
    pub fn parse_auto<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if self.require(key)? == "auto" {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    pub fn output(&self, key: &str) -> Result<PathBuf, CliError> {
        self.require(key).map(PathBuf::from)
    }

    pub fn optional_output(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    /// Input paths must exist; a missing file is a configuration error.
    pub fn inputs(&self, key: &str) -> Result<Vec<PathBuf>, CliError> {
        let raw = self.require(key)?;
        let paths: Vec<PathBuf> = raw
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(PathBuf::from)
            .collect();
        if paths.is_empty() {
            return Err(CliError::Config(format!("missing required key `{key}`")));
        }
        for p in &paths {
            check_exists(key, p)?;
        }
        Ok(paths)
    }

    pub fn input(&self, key: &str) -> Result<PathBuf, CliError> {
        let p = PathBuf::from(self.require(key)?);
        check_exists(key, &p)?;
        Ok(p)
    }
}

fn check_exists(key: &str, p: &Path) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "`{key}`: no such file {}",
            p.display()
        )))
    }
}
