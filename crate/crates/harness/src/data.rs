//! Labelled datasets: synthetic source/target blob tasks, CSV ingestion and
//! the stratified split and fraction protocol.

use crate::config::{DataSource, DatasetSpec, SyntheticSpec};
use crate::error::{HarnessError, Result};
use adarand_core::{Matrix, RngStream, StreamId};
use std::io::Write;
use std::path::Path;

/// Samples (rows) with labels in `0..classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(HarnessError::Config(format!(
                "dataset has {} rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(HarnessError::Config(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by[l].push(i);
        }
        by
    }
}

/// Train / validation / test partition of a target task.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Output of the blob generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTasks {
    /// Source-task training data for pretraining.
    pub source: Dataset,
    /// Target pool, to be split 9:1 into train and validation.
    pub target: Dataset,
    pub target_test: Dataset,
}

struct Geometry {
    /// `classes × modes` centers, row `k·modes + j`.
    centers: Matrix,
    modes: usize,
}

impl Geometry {
    fn new(spec: &SyntheticSpec) -> Self {
        let mut rng = RngStream::new(spec.geometry_seed, StreamId::Init);
        let m = spec.input_dim;
        let n = spec.classes * spec.modes_per_class;
        let mut centers = Matrix::zeros(n, m);
        for r in 0..n {
            let v: Vec<f64> = (0..m).map(|_| rng.standard_normal()).collect();
            let len = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            for (c, x) in centers.row_mut(r).iter_mut().zip(v) {
                *c = spec.separation * x / len;
            }
        }
        Self {
            centers,
            modes: spec.modes_per_class,
        }
    }

    /// `per_class` samples of every class; modes are visited round-robin.
    fn sample(&self, spec: &SyntheticSpec, per_class: usize, rng: &mut RngStream, target: bool) -> Result<Dataset> {
        let m = spec.input_dim;
        let n = spec.classes * per_class;
        let mut x = Matrix::zeros(n, m);
        let mut labels = Vec::with_capacity(n);
        for k in 0..spec.classes {
            for i in 0..per_class {
                let row = labels.len();
                let center = self.centers.row(k * self.modes + i % self.modes);
                let out = x.row_mut(row);
                for (o, &c) in out.iter_mut().zip(center) {
                    *o = c + spec.spread * rng.standard_normal();
                }
                if target {
                    transform(out, spec.rotation, spec.shift);
                    labels.push(k);
                } else if spec.source_by_mode {
                    labels.push(k * self.modes + i % self.modes);
                } else {
                    labels.push(k);
                }
            }
        }
        let classes = if !target && spec.source_by_mode {
            spec.classes * self.modes
        } else {
            spec.classes
        };
        Dataset::new(x, labels, classes)
    }
}

/// Rotation by `angle` in each plane `(2i, 2i+1)`, then `+shift` per coordinate.
fn transform(x: &mut [f64], angle: f64, shift: f64) {
    let (s, c) = angle.sin_cos();
    for pair in x.chunks_exact_mut(2) {
        let (a, b) = (pair[0], pair[1]);
        pair[0] = c * a - s * b;
        pair[1] = s * a + c * b;
    }
    x.iter_mut().for_each(|v| *v += shift);
}

fn check_spec(spec: &SyntheticSpec) -> Result<()> {
    if spec.classes < 2 {
        return Err(HarnessError::Config("synthetic task needs at least 2 classes".into()));
    }
    if spec.samples_per_class < 2 {
        return Err(HarnessError::Config(
            "synthetic task needs at least 2 samples per class".into(),
        ));
    }
    if !(spec.spread > 0.0) {
        return Err(HarnessError::Config(format!(
            "cluster spread must be positive, got {}",
            spec.spread
        )));
    }
    Ok(())
}

/// Source and target blob tasks. The geometry and the source samples are
/// fixed by `spec.geometry_seed`; the target samples come from `rng`.
pub fn generate_tasks(spec: &SyntheticSpec, rng: &mut RngStream) -> Result<SyntheticTasks> {
    check_spec(spec)?;
    let geo = Geometry::new(spec);
    let target = geo.sample(spec, spec.samples_per_class, rng, true)?;
    let target_test = geo.sample(spec, spec.test_per_class, rng, true)?;
    let source = source_from(&geo, spec)?;
    Ok(SyntheticTasks {
        source,
        target,
        target_test,
    })
}

/// Source-task training data, fixed by `spec.geometry_seed`.
pub fn source_task(spec: &SyntheticSpec) -> Result<Dataset> {
    check_spec(spec)?;
    source_from(&Geometry::new(spec), spec)
}

fn source_from(geo: &Geometry, spec: &SyntheticSpec) -> Result<Dataset> {
    let mut rng = RngStream::new(!spec.geometry_seed, StreamId::Data);
    geo.sample(spec, spec.source_per_class, &mut rng, false)
}

/// Target train/validation/test splits for a synthetic spec, with the 9:1
/// split and the fraction reduction applied.
pub fn generate_synthetic(spec: &DatasetSpec, rng: &mut RngStream) -> Result<Splits> {
    let DataSource::SyntheticBlobs(s) = &spec.source else {
        return Err(HarnessError::Config(
            "generate_synthetic needs a synthetic-blobs source".into(),
        ));
    };
    let tasks = generate_tasks(s, rng)?;
    finish_splits(tasks.target, tasks.target_test, spec)
}

/// Resolves a dataset spec into target splits. `data_seed` drives synthetic
/// sampling; splits use `spec.split_seed`.
pub fn prepare_target(spec: &DatasetSpec, data_seed: u64) -> Result<Splits> {
    match &spec.source {
        DataSource::SyntheticBlobs(_) => generate_synthetic(spec, &mut RngStream::new(data_seed, StreamId::Data)),
        DataSource::CsvFile(c) => {
            let pool = load_csv_dataset(&c.path)?;
            let (pool, test) = match &c.test_path {
                Some(p) => {
                    let test = load_csv_dataset(p)?;
                    if test.dim() != pool.dim() {
                        return Err(HarnessError::Config(format!(
                            "test file has {} features, training file {}",
                            test.dim(),
                            pool.dim()
                        )));
                    }
                    let classes = pool.classes.max(test.classes);
                    (relabel(pool, classes), relabel(test, classes))
                }
                None => {
                    let mut rng = split_rng(spec.split_seed ^ 0x7E57);
                    let (rest, test) = stratified_holdout(&pool, pool.len() / 10, &mut rng);
                    (pool.subset(&rest), pool.subset(&test))
                }
            };
            finish_splits(pool, test, spec)
        }
    }
}

fn relabel(mut d: Dataset, classes: usize) -> Dataset {
    d.classes = classes;
    d
}

fn split_rng(seed: u64) -> RngStream {
    // Salted so the split never replays the sampling stream of an equal data seed.
    RngStream::new(seed ^ 0x5851_F42D_4C95_7F2D, StreamId::Data)
}

fn finish_splits(pool: Dataset, test: Dataset, spec: &DatasetSpec) -> Result<Splits> {
    let mut rng = split_rng(spec.split_seed);
    let (train_idx, val_idx) = stratified_holdout(&pool, pool.len() / 10, &mut rng);
    let train = pool.subset(&train_idx);
    let val = pool.subset(&val_idx);
    let train = reduce_fraction(&train, spec.fraction, &mut rng)?;
    Ok(Splits { train, val, test })
}

/// Splits off `holdout` samples, stratified by class, keeping every class
/// with at least one sample represented in the remainder when possible.
/// Returns `(kept, held_out)` index lists in ascending order.
pub fn stratified_holdout(data: &Dataset, holdout: usize, rng: &mut RngStream) -> (Vec<usize>, Vec<usize>) {
    let mut by = data.class_indices();
    by.iter_mut().for_each(|v| rng.shuffle(v));
    let counts: Vec<usize> = by.iter().map(Vec::len).collect();
    let keep = allocate(&counts, data.len() - holdout.min(data.len()));
    let mut kept = Vec::new();
    let mut held = Vec::new();
    for (idx, k) in by.iter().zip(keep) {
        kept.extend_from_slice(&idx[..k]);
        held.extend_from_slice(&idx[k..]);
    }
    kept.sort_unstable();
    held.sort_unstable();
    (kept, held)
}

/// Keeps exactly `⌊N·fraction⌋` training samples, stratified by class.
pub fn reduce_fraction(train: &Dataset, fraction: f64, rng: &mut RngStream) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(HarnessError::Config(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let n = train.len();
    let keep = (((n as f64) * fraction + 1e-9).floor() as usize).min(n);
    if keep == 0 {
        return Err(HarnessError::Config(format!(
            "fraction {fraction} of {n} samples leaves nothing"
        )));
    }
    let (kept, _) = stratified_holdout(train, n - keep, rng);
    Ok(train.subset(&kept))
}

/// Largest-remainder apportionment of `total` over classes of size `counts`,
/// then topped up so that every non-empty class gets at least one when the
/// budget allows.
fn allocate(counts: &[usize], total: usize) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return vec![0; counts.len()];
    }
    let mut alloc: Vec<usize> = counts.iter().map(|&c| c * total / n).collect();
    let mut left = total - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&k| std::cmp::Reverse(counts[k] * total % n));
    for &k in order.iter().cycle().take(order.len() * 2) {
        if left == 0 {
            break;
        }
        if alloc[k] < counts[k] {
            alloc[k] += 1;
            left -= 1;
        }
    }
    let nonempty = counts.iter().filter(|&&c| c > 0).count();
    if total >= nonempty {
        for k in 0..counts.len() {
            if counts[k] > 0 && alloc[k] == 0 {
                let donor = (0..counts.len())
                    .max_by_key(|&j| (alloc[j], std::cmp::Reverse(j)))
                    .unwrap();
                alloc[donor] -= 1;
                alloc[k] = 1;
            }
        }
    }
    alloc
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> HarnessError {
    HarnessError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a CSV with header `f0,…,f{m−1},label`. Labels must be the integers
/// `0..K` with none missing.
pub fn load_csv_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(std::io::BufReader::new(file));
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_err(path, 1, e.to_string()))?,
        None => return Err(parse_err(path, 1, "empty file")),
    };
    let m = header.len().saturating_sub(1);
    if m == 0 {
        return Err(parse_err(
            path,
            1,
            "header needs at least one feature column and `label`",
        ));
    }
    for (j, name) in header.iter().enumerate() {
        let want = if j == m { "label".to_string() } else { format!("f{j}") };
        if name.trim() != want {
            return Err(parse_err(
                path,
                1,
                format!("header column {j} is {name:?}, expected {want:?}"),
            ));
        }
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut lines = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != m + 1 {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", m + 1, rec.len()),
            ));
        }
        for (j, field) in rec.iter().take(m).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("field f{j} is not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("field f{j} is not finite")));
            }
            data.push(v);
        }
        let raw = rec.get(m).unwrap_or("").trim();
        let label: usize = raw
            .parse()
            .map_err(|_| parse_err(path, line, format!("label is not a non-negative integer: {raw:?}")))?;
        labels.push(label);
        lines.push(line);
    }
    if labels.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    let classes = labels.iter().max().unwrap() + 1;
    let mut seen = vec![false; classes];
    labels.iter().for_each(|&l| seen[l] = true);
    if let Some(missing) = seen.iter().position(|&s| !s) {
        let at = labels.iter().position(|&l| l > missing).unwrap();
        return Err(parse_err(
            path,
            lines[at],
            format!(
                "labels are not contiguous: {} appears but {missing} never does",
                labels[at]
            ),
        ));
    }
    let features = Matrix::new(labels.len(), m, data)?;
    Dataset::new(features, labels, classes)
}

/// Writes `data` in the format read by [`load_csv_dataset`].
pub fn write_csv_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let io = |e| HarnessError::io(path, e);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let m = data.dim();
    let header: Vec<String> = (0..m).map(|j| format!("f{j}")).chain(["label".to_string()]).collect();
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for (row, &l) in data.features.row_iter().zip(&data.labels) {
        for v in row {
            write!(out, "{v},").map_err(io)?;
        }
        writeln!(out, "{l}").map_err(io)?;
    }
    out.flush().map_err(io)
}
