//! Datasets: the block-Gaussian synthetic marker task, CSV ingestion and
//! stratified splitting.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub split: Option<SplitTag>,
}

impl Dataset {
    pub fn new(
        features: Tensor,
        labels: Vec<usize>,
        class_names: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "features must be [N, D], got {:?}",
                features.shape()
            )));
        }
        if labels.len() != features.rows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        if feature_names.len() != features.cols() {
            return Err(Error::Dimension(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.cols()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Input(format!(
                "label {l} out of range for {} classes",
                class_names.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            class_names,
            feature_names,
            split: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn with_split(mut self, tag: SplitTag) -> Self {
        self.split = Some(tag);
        self
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            features: self.features.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            feature_names: self.feature_names.clone(),
            split: None,
        })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Parameters of the synthetic marker task: class `k` is informative only
/// in its own block of `block_size` features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub block_size: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub mean_shift: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            block_size: 7,
            train_size: 534,
            val_size: 133,
            test_size: 171,
            mean_shift: 2.0,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn num_features(&self) -> usize {
        self.num_classes * self.block_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Input("need at least 2 classes".into()));
        }
        if self.block_size == 0 || self.train_size == 0 || self.val_size == 0 || self.test_size == 0 {
            return Err(Error::Input("block size and split sizes must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite() && self.mean_shift.is_finite()) {
            return Err(Error::Input("mean shift must be finite and noise std non-negative".into()));
        }
        Ok(())
    }
}

pub fn feature_names(count: usize) -> Vec<String> {
    (0..count).map(|i| format!("f{i}")).collect()
}

fn index_class_names(count: usize) -> Vec<String> {
    (0..count).map(|i| i.to_string()).collect()
}

/// Draws the train, validation and test splits in that order from one
/// seeded stream.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = |n: usize, tag: SplitTag| -> Result<Dataset> {
        let mut labels: Vec<usize> = (0..n).map(|i| i % spec.num_classes).collect();
        labels.shuffle(&mut rng);
        let d = spec.num_features();
        let mut data = Vec::with_capacity(n * d);
        for &label in &labels {
            for f in 0..d {
                let mean = if f / spec.block_size == label {
                    spec.mean_shift
                } else {
                    0.0
                };
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(mean + spec.noise_std * z);
            }
        }
        Ok(Dataset::new(
            Tensor::new(vec![n, d], data)?,
            labels,
            index_class_names(spec.num_classes),
            feature_names(d),
        )?
        .with_split(tag))
    };
    let train = draw(spec.train_size, SplitTag::Train)?;
    let val = draw(spec.val_size, SplitTag::Val)?;
    let test = draw(spec.test_size, SplitTag::Test)?;
    Ok((train, val, test))
}

/// Writes features then the label column; floats use Rust's shortest
/// round-trip decimal rendering so a reload is bit-exact.
pub fn save_csv(dataset: &Dataset, path: &Path, label_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    let mut header: Vec<&str> = dataset.feature_names.iter().map(String::as_str).collect();
    header.push(label_column);
    w.write_record(&header).map_err(csv_io)?;
    for (row, &label) in dataset.features.iter_rows().zip(&dataset.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        rec.push(dataset.class_names[label].clone());
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        }
    } else {
        Error::Format(e.to_string())
    }
}

/// Loads a CSV with a header row. Labels are mapped to dense indices: if
/// `classes` is given that mapping is used, otherwise the sorted distinct
/// labels (numeric order when every label is an integer).
pub fn load_csv(path: &Path, label_column: &str, classes: Option<&[String]>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(csv_io)?;
    let header = rdr.headers().map_err(csv_io)?.clone();
    let label_idx = header.iter().position(|h| h == label_column).ok_or_else(|| {
        Error::Format(format!(
            "{}: no label column named {label_column:?}",
            path.display()
        ))
    })?;
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    if names.is_empty() {
        return Err(Error::Format(format!("{}: no feature columns", path.display())));
    }

    let mut data = Vec::new();
    let mut raw_labels = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_io)?;
        // 1-based with the header as row 1
        let line = r + 2;
        if rec.len() != header.len() {
            return Err(Error::Format(format!(
                "{} row {line}: expected {} fields, found {}",
                path.display(),
                header.len(),
                rec.len()
            )));
        }
        for (c, field) in rec.iter().enumerate() {
            if c == label_idx {
                raw_labels.push(field.trim().to_string());
                continue;
            }
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Format(format!(
                    "{} row {line} column {} ({:?}): cannot parse {field:?} as a number",
                    path.display(),
                    c + 1,
                    &header[c]
                ))
            })?;
            data.push(v);
        }
    }
    if raw_labels.is_empty() {
        return Err(Error::Format(format!("{}: no data rows", path.display())));
    }

    let class_names: Vec<String> = match classes {
        Some(c) => c.to_vec(),
        None => sorted_labels(raw_labels.iter().map(String::as_str)),
    };
    let labels = raw_labels
        .iter()
        .enumerate()
        .map(|(r, l)| {
            class_names.iter().position(|c| c == l).ok_or_else(|| {
                Error::Format(format!(
                    "{} row {}: unknown label {l:?}",
                    path.display(),
                    r + 2
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = labels.len();
    Dataset::new(
        Tensor::new(vec![n, names.len()], data)?,
        labels,
        class_names,
        names,
    )
}

fn sorted_labels<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<String> {
    let unique: BTreeSet<&str> = labels.collect();
    let mut out: Vec<String> = unique.into_iter().map(str::to_string).collect();
    if out.iter().all(|l| l.parse::<i64>().is_ok()) {
        out.sort_by_key(|l| l.parse::<i64>().unwrap());
    }
    out
}

/// Index sets of a three-way split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Largest-remainder apportionment of `n` items by `fractions`.
fn apportion(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let short = n - sizes.iter().sum::<usize>();
    for &j in order.iter().take(short) {
        sizes[j] += 1;
    }
    sizes
}

/// Stratified seeded split. Overall sizes follow largest-remainder rounding
/// of `fractions · N`; each class contributes `⌊n_c f⌋` or `⌈n_c f⌉` samples
/// to every split.
pub fn split_indices(labels: &[usize], fractions: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if fractions.iter().any(|f| f.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let n = labels.len();
    let targets = apportion(n, &fractions);
    if targets.contains(&0) {
        return Err(Error::Input(format!(
            "fractions {fractions:?} on {n} samples leave a split empty"
        )));
    }

    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for &i in &perm {
        by_class[labels[i]].push(i);
    }

    // Per-class floors, then one extra per split for the leftovers, only
    // where the class's exact share is fractional. Extras are then shifted
    // between splits along augmenting paths until column totals hit the
    // targets.
    let floors: Vec<[usize; 3]> = by_class
        .iter()
        .map(|idx| fractions.map(|f| (idx.len() as f64 * f).floor() as usize))
        .collect();
    let open = |c: usize, j: usize| {
        let e = by_class[c].len() as f64 * fractions[j];
        e - e.floor() > 1e-9
    };
    let mut extra: Vec<[bool; 3]> = vec![[false; 3]; num_classes];
    let mut col = [0i64; 3];
    for c in 0..num_classes {
        let left = by_class[c].len() - floors[c].iter().sum::<usize>();
        let mut splits: Vec<usize> = (0..3).filter(|&j| open(c, j)).collect();
        splits.sort_by_key(|&j| std::cmp::Reverse(targets[j] as i64 - col[j]));
        for &j in splits.iter().take(left) {
            extra[c][j] = true;
        }
        for j in 0..3 {
            col[j] += floors[c][j] as i64 + extra[c][j] as i64;
        }
    }
    while let Some(from) = (0..3).find(|&j| col[j] > targets[j] as i64) {
        // breadth-first search over splits; an edge a → b moves one class's
        // extra from a to b
        let mut prev: [Option<(usize, usize)>; 3] = [None; 3];
        let mut seen = [false; 3];
        seen[from] = true;
        let mut queue = std::collections::VecDeque::from([from]);
        let mut reached = None;
        while let Some(a) = queue.pop_front() {
            if col[a] < targets[a] as i64 {
                reached = Some(a);
                break;
            }
            for b in 0..3 {
                if seen[b] {
                    continue;
                }
                if let Some(c) = (0..num_classes).find(|&c| extra[c][a] && !extra[c][b] && open(c, b)) {
                    seen[b] = true;
                    prev[b] = Some((a, c));
                    queue.push_back(b);
                }
            }
        }
        let Some(mut b) = reached else { break };
        while let Some((a, c)) = prev[b] {
            extra[c][a] = false;
            extra[c][b] = true;
            col[a] -= 1;
            col[b] += 1;
            b = a;
        }
    }
    let quota: Vec<[usize; 3]> = floors
        .iter()
        .zip(&extra)
        .map(|(f, e)| [0, 1, 2].map(|j| f[j] + e[j] as usize))
        .collect();

    let mut out: [Vec<usize>; 3] = Default::default();
    for (idx, q) in by_class.iter().zip(&quota) {
        let mut start = 0;
        for j in 0..3 {
            out[j].extend_from_slice(&idx[start..start + q[j]]);
            start += q[j];
        }
    }
    for part in &mut out {
        part.sort_unstable();
    }
    if out.iter().any(Vec::is_empty) {
        return Err(Error::Input("split produced an empty partition".into()));
    }
    let [train, val, test] = out;
    Ok(SplitIndices { train, val, test })
}

pub fn split(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let idx = split_indices(&dataset.labels, fractions, seed)?;
    Ok((
        dataset.subset(&idx.train)?.with_split(SplitTag::Train),
        dataset.subset(&idx.val)?.with_split(SplitTag::Val),
        dataset.subset(&idx.test)?.with_split(SplitTag::Test),
    ))
}

/// Per-feature standardization fitted on one split and applied to others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(dataset: &Dataset) -> Self {
        let (n, d) = (dataset.len() as f64, dataset.num_features());
        let mut mean = vec![0.0; d];
        for row in dataset.features.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for row in dataset.features.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        // constant columns are only centered
        let std = var.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, std }
    }

    pub fn apply(&self, dataset: &mut Dataset) -> Result<()> {
        if dataset.num_features() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "standardizer fitted on {} features, dataset has {}",
                self.mean.len(),
                dataset.num_features()
            )));
        }
        let d = self.mean.len();
        for row in dataset.features.data_mut().chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }
}
