use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use elsym_core::checkpoint::{load_checkpoint, save_checkpoint};
use elsym_core::data::{generate_synthetic, load_csv, save_csv, Standardizer};
use elsym_core::metrics::SymbolInventory;
use elsym_core::{attribution, train, Architecture, Dataset, EvalReport, ModelGraph, SynthSpec};

use crate::error::{CliError, Result};
use crate::params::{AttrSettings, ModelKind, TrainSettings};

pub const LABEL_COLUMN: &str = "label";
const STANDARDIZER_FILE: &str = "standardizer.json";

pub(crate) fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    write(path, &s)
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes train.csv, val.csv, test.csv and spec.json into `out`.
pub fn gen(spec: &SynthSpec, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let (tr, va, te) = generate_synthetic(spec)?;
    for (name, ds) in [("train.csv", &tr), ("val.csv", &va), ("test.csv", &te)] {
        save_csv(ds, &out.join(name), LABEL_COLUMN)?;
    }
    write_json(&out.join("spec.json"), spec)
}

/// Where to read the three splits from.
#[derive(Debug, Clone, Serialize)]
pub struct DataPaths {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    pub label_column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub model: ModelKind,
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub f1_average: &'static str,
    pub per_class_f1: BTreeMap<String, f64>,
    /// Sorted unique symbols, or "None".
    pub symbols: String,
    pub symbol_count: usize,
    pub symbol_inventory: SymbolInventory,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    fn new(kind: ModelKind, eval: EvalReport, log: &train::TrainLog, classes: &[String]) -> Self {
        Self {
            model: kind,
            samples: eval.samples,
            correct: eval.correct,
            accuracy: eval.accuracy,
            f1: eval.f1,
            f1_average: "macro",
            per_class_f1: classes.iter().cloned().zip(eval.per_class_f1).collect(),
            symbols: eval.symbol_inventory.to_string(),
            symbol_count: eval.symbol_inventory.len(),
            symbol_inventory: eval.symbol_inventory,
            best_epoch: log.best_epoch,
            epochs_run: log.epochs.len(),
            stopped_early: log.stopped_early,
        }
    }
}

fn load_splits(paths: &DataPaths) -> Result<(Dataset, Dataset, Dataset)> {
    let tr = load_csv(&paths.train, &paths.label_column, None)?;
    let va = load_csv(&paths.val, &paths.label_column, Some(&tr.class_names))?;
    let te = load_csv(&paths.test, &paths.label_column, Some(&tr.class_names))?;
    if va.num_features() != tr.num_features() || te.num_features() != tr.num_features() {
        return Err(CliError::Usage(format!(
            "feature counts differ between splits: train {}, val {}, test {}",
            tr.num_features(),
            va.num_features(),
            te.num_features()
        )));
    }
    Ok((tr, va, te))
}

/// Trains one model and writes checkpoint.json, train_log.csv and
/// report.json into `out`.
pub fn train_model(paths: &DataPaths, settings: &TrainSettings, out: &Path) -> Result<TrainReport> {
    let (mut tr, mut va, mut te) = load_splits(paths)?;
    ensure_dir(out)?;
    let standardizer_path = out.join(STANDARDIZER_FILE);
    if settings.standardize {
        let st = Standardizer::fit(&tr);
        for ds in [&mut tr, &mut va, &mut te] {
            st.apply(ds)?;
        }
        write_json(&standardizer_path, &st)?;
    } else if standardizer_path.exists() {
        fs::remove_file(&standardizer_path).map_err(|e| CliError::io(&standardizer_path, e))?;
    }

    let cfg = &settings.train;
    let arch = Architecture {
        input_dim: tr.num_features(),
        sender_hidden: settings.sender_hidden.clone(),
        vocab_size: cfg.vocab_size,
        receiver_hidden: settings.receiver_hidden.clone(),
        num_classes: tr.num_classes(),
        temperature: cfg.temperature,
        bottleneck: settings.model == ModelKind::El,
    };
    let mut model = arch.build(cfg.seed)?;
    let log = train::train(&mut model, &tr, &va, cfg)?;
    let eval = train::evaluate(&model, &te)?;

    write(&out.join("checkpoint.json"), &save_checkpoint(&model))?;
    write(&out.join("train_log.csv"), &log.to_csv())?;
    let report = TrainReport::new(settings.model, eval, &log, &tr.class_names);
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct AttributionSummary {
    pub samples: usize,
    pub block_size: usize,
    pub symbols: Vec<attribution::SymbolBlockSummary>,
}

pub fn load_model(path: &Path) -> Result<ModelGraph> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(load_checkpoint(&text)?)
}

/// Writes conductance.csv and conductance_summary.json into `out`.
pub fn attribute(
    checkpoint: &Path,
    test: &Path,
    label_column: &str,
    settings: &AttrSettings,
    out: &Path,
) -> Result<AttributionSummary> {
    let model = load_model(checkpoint)?;
    if !model.has_bottleneck() {
        return Err(CliError::Usage(format!(
            "{}: baseline checkpoint has no symbol channel; per-symbol attribution needs an el model",
            checkpoint.display()
        )));
    }
    let mut data = load_csv(test, label_column, None)?;
    let standardizer_path = checkpoint.with_file_name(STANDARDIZER_FILE);
    if standardizer_path.exists() {
        let text = fs::read_to_string(&standardizer_path).map_err(|e| CliError::io(&standardizer_path, e))?;
        let st: Standardizer = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", standardizer_path.display())))?;
        st.apply(&mut data)?;
    }
    let report = attribution::per_symbol_report(&model, &data, &settings.to_config())?;
    let summary = AttributionSummary {
        samples: data.len(),
        block_size: settings.block_size,
        symbols: report.block_summary(settings.block_size)?,
    };
    ensure_dir(out)?;
    write(&out.join("conductance.csv"), &report.to_csv())?;
    write_json(&out.join("conductance_summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub experiment: String,
    pub accuracy_pct: f64,
    pub f1: f64,
    pub symbols: String,
}

/// gen → train el → train baseline → attribute, plus a comparison table.
pub fn repro(
    spec: &SynthSpec,
    settings: &TrainSettings,
    attr: &AttrSettings,
    out: &Path,
) -> Result<Vec<TableRow>> {
    let data_dir = out.join("data");
    gen(spec, &data_dir)?;
    let paths = DataPaths {
        train: data_dir.join("train.csv"),
        val: data_dir.join("val.csv"),
        test: data_dir.join("test.csv"),
        label_column: LABEL_COLUMN.into(),
    };
    let mut rows = Vec::new();
    for (kind, name) in [(ModelKind::Baseline, "baseline"), (ModelKind::El, "el")] {
        let s = TrainSettings {
            model: kind,
            ..settings.clone()
        };
        let r = train_model(&paths, &s, &out.join(name))?;
        rows.push(TableRow {
            experiment: format!("Synthetic {}", if kind == ModelKind::El { "symbol" } else { "baseline" }),
            accuracy_pct: r.accuracy * 100.0,
            f1: r.f1,
            symbols: r.symbols,
        });
    }
    attribute(
        &out.join("el").join("checkpoint.json"),
        &paths.test,
        LABEL_COLUMN,
        attr,
        &out.join("attribution"),
    )?;

    let mut csv = String::from("experiment,accuracy_pct,f1,symbols\n");
    for r in &rows {
        csv.push_str(&format!("{},{:?},{:?},\"{}\"\n", r.experiment, r.accuracy_pct, r.f1, r.symbols));
    }
    write(&out.join("table.csv"), &csv)?;
    write_json(&out.join("table.json"), &rows)?;
    Ok(rows)
}
