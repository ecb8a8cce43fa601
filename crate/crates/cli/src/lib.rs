//! Command-line front end: synthetic data generation, training of symbol
//! and baseline classifiers, per-symbol attribution and a one-shot
//! reproduction pipeline.

pub mod commands;
pub mod error;
pub mod params;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::commands::DataPaths;
use crate::error::{CliError, Result};
use crate::params::{
    keys, merge, read_config, AttrParams, AttrSettings, BlockParams, CommonParams, DataParams,
    GenParams, TrainParams, TrainSettings,
};

#[derive(Debug, Parser)]
#[command(name = "elsym", version, about = "Emergent-symbol classifiers with attribution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic block-marker dataset
    Gen {
        #[command(flatten)]
        common: CommonParams,
        #[command(flatten)]
        blocks: BlockParams,
        #[command(flatten)]
        gen: GenParams,
    },
    /// Train a symbol (el) or baseline classifier and evaluate it
    Train {
        #[command(flatten)]
        common: CommonParams,
        #[command(flatten)]
        data: DataParams,
        #[command(flatten)]
        train: TrainParams,
    },
    /// Per-symbol conductance of input features
    Attribute {
        #[command(flatten)]
        common: CommonParams,
        #[command(flatten)]
        data: DataParams,
        #[command(flatten)]
        blocks: BlockParams,
        #[command(flatten)]
        attr: AttrParams,
    },
    /// gen, train el, train baseline and attribute in one go
    Repro {
        #[command(flatten)]
        common: CommonParams,
        #[command(flatten)]
        blocks: BlockParams,
        #[command(flatten)]
        gen: GenParams,
        #[command(flatten)]
        train: TrainParams,
        #[command(flatten)]
        attr: AttrParams,
    },
}

fn out_dir(common: &CommonParams, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn data_paths(data: &DataParams) -> DataPaths {
    let dir = data.data.clone().unwrap_or_else(|| PathBuf::from("data"));
    DataPaths {
        train: data.train.clone().unwrap_or_else(|| dir.join("train.csv")),
        val: data.val.clone().unwrap_or_else(|| dir.join("val.csv")),
        test: data.test.clone().unwrap_or_else(|| dir.join("test.csv")),
        label_column: data
            .label_column
            .clone()
            .unwrap_or_else(|| commands::LABEL_COLUMN.into()),
    }
}

fn echo<T: Serialize>(out: &Path, value: &T) -> Result<()> {
    commands::ensure_dir(out)?;
    commands::write_json(&out.join("config.json"), value)
}

#[derive(Serialize)]
struct TrainEcho<'a> {
    data: &'a DataPaths,
    settings: &'a TrainSettings,
}

#[derive(Serialize)]
struct AttrEcho<'a> {
    checkpoint: &'a Path,
    test: &'a Path,
    label_column: &'a str,
    settings: &'a AttrSettings,
}

#[derive(Serialize)]
struct ReproEcho<'a> {
    spec: &'a elsym_core::SynthSpec,
    train: &'a TrainSettings,
    attribution: &'a AttrSettings,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common, blocks, gen } => {
            let known = [keys::<CommonParams>(), keys::<BlockParams>(), keys::<GenParams>()].concat();
            let cfg = read_config(common.config.as_deref(), &known)?;
            let (common, blocks, gen) = (merge(&common, &cfg)?, merge(&blocks, &cfg)?, merge(&gen, &cfg)?);
            let spec = gen.resolve(&common, &blocks)?;
            commands::gen(&spec, &out_dir(&common, "data"))
        }
        Command::Train { common, data, train } => {
            let known = [keys::<CommonParams>(), keys::<DataParams>(), keys::<TrainParams>()].concat();
            let cfg = read_config(common.config.as_deref(), &known)?;
            let (common, data, train) = (merge(&common, &cfg)?, merge(&data, &cfg)?, merge(&train, &cfg)?);
            let settings = train.resolve(&common)?;
            let paths = data_paths(&data);
            let default_out = match settings.model {
                params::ModelKind::El => "runs/el",
                params::ModelKind::Baseline => "runs/baseline",
            };
            let out = out_dir(&common, default_out);
            echo(&out, &TrainEcho { data: &paths, settings: &settings })?;
            let report = commands::train_model(&paths, &settings, &out)?;
            println!(
                "accuracy {:.4}  macro-F1 {:.4}  symbols {}",
                report.accuracy, report.f1, report.symbols
            );
            Ok(())
        }
        Command::Attribute { common, data, blocks, attr } => {
            let known = [
                keys::<CommonParams>(),
                keys::<DataParams>(),
                keys::<BlockParams>(),
                keys::<AttrParams>(),
            ]
            .concat();
            let cfg = read_config(common.config.as_deref(), &known)?;
            let (common, data, blocks, attr) = (
                merge(&common, &cfg)?,
                merge(&data, &cfg)?,
                merge(&blocks, &cfg)?,
                merge(&attr, &cfg)?,
            );
            let settings = attr.resolve(&blocks)?;
            let checkpoint = attr
                .checkpoint
                .clone()
                .ok_or_else(|| CliError::Usage("--checkpoint is required".into()))?;
            let paths = data_paths(&data);
            let out = out_dir(&common, "attribution");
            echo(
                &out,
                &AttrEcho {
                    checkpoint: &checkpoint,
                    test: &paths.test,
                    label_column: &paths.label_column,
                    settings: &settings,
                },
            )?;
            let summary = commands::attribute(&checkpoint, &paths.test, &paths.label_column, &settings, &out)?;
            for s in &summary.symbols {
                println!(
                    "symbol {:>4}  count {:>4}  block {}  share {:.3}",
                    s.symbol, s.count, s.dominant_block, s.share
                );
            }
            Ok(())
        }
        Command::Repro { common, blocks, gen, train, attr } => {
            let known = [
                keys::<CommonParams>(),
                keys::<BlockParams>(),
                keys::<GenParams>(),
                keys::<TrainParams>(),
                keys::<AttrParams>(),
            ]
            .concat();
            let cfg = read_config(common.config.as_deref(), &known)?;
            let (common, blocks, gen, train, attr) = (
                merge(&common, &cfg)?,
                merge(&blocks, &cfg)?,
                merge(&gen, &cfg)?,
                merge(&train, &cfg)?,
                merge(&attr, &cfg)?,
            );
            let spec = gen.resolve(&common, &blocks)?;
            let settings = train.resolve(&common)?;
            let attr_settings = attr.resolve(&blocks)?;
            let out = out_dir(&common, "repro");
            echo(
                &out,
                &ReproEcho {
                    spec: &spec,
                    train: &settings,
                    attribution: &attr_settings,
                },
            )?;
            let rows = commands::repro(&spec, &settings, &attr_settings, &out)?;
            for r in rows {
                println!(
                    "{:<20} accuracy {:>6.2}%  F1 {:.4}  symbols {}",
                    r.experiment, r.accuracy_pct, r.f1, r.symbols
                );
            }
            Ok(())
        }
    }
}
