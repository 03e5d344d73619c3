//! Trajectory datasets on disk and ingestion of raw series.
//!
//! A dataset directory holds `train.csv`, `test.csv` and a `dataset.json`
//! sidecar. Path files are wide: `series_id,t0,dt,v0,…,v{P-1}`, one row per
//! path, values written with Rust's shortest round-trip float formatting.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sde::{simulate, PathBatch, ProcessKind, ProcessSpec, Scheme, SolverOptions, TimeGrid};

pub const FORMAT_VERSION: u32 = 1;
pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const META_FILE: &str = "dataset.json";
pub const DEFAULT_TRAIN: usize = 20_000;
pub const DEFAULT_TEST: usize = 6_000;

/// First target index for a grid of `points` points: the last third is the
/// target window (100 + 50 on the benchmark grid).
pub fn default_target_from(points: usize) -> usize {
    points - points / 3
}

/// Solver steps per grid interval used when simulating benchmark data.
pub fn default_substeps(kind: ProcessKind) -> usize {
    match kind {
        ProcessKind::PolyDrift => 200,
        _ => 10,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DataSource {
    Simulated {
        process: ProcessSpec,
        seed: u64,
        solver: SolverOptions,
        /// How initial states are drawn.
        x0_distribution: String,
    },
    Ingested {
        file: String,
        report: IngestReport,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub grid: TimeGrid,
    pub n_train: usize,
    pub n_test: usize,
    /// Conditioning points before the target window.
    pub cond_len: usize,
    pub target_len: usize,
    pub source: DataSource,
}

impl DatasetMeta {
    pub fn target_from(&self) -> usize {
        self.cond_len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: PathBatch,
    pub test: PathBatch,
    pub meta: DatasetMeta,
}

fn split_meta(grid: TimeGrid, n_train: usize, n_test: usize, source: DataSource) -> DatasetMeta {
    let cond_len = default_target_from(grid.points());
    DatasetMeta {
        format_version: FORMAT_VERSION,
        grid,
        n_train,
        n_test,
        cond_len,
        target_len: grid.points() - cond_len,
        source,
    }
}

/// Simulate a benchmark dataset. Paths `0..n_train` form the training split
/// and the following `n_test` the test split; each path has its own noise
/// stream, so the split sizes do not affect individual paths.
pub fn generate(spec: &ProcessSpec, grid: TimeGrid, n_train: usize, n_test: usize, seed: u64, solver: SolverOptions) -> Result<Dataset> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::invalid("train and test counts must be positive"));
    }
    spec.validate()?;
    let all = simulate(spec, grid, n_train + n_test, seed, solver)?;
    let train = all.slice_rows(0, n_train);
    let test = all.slice_rows(n_train, n_train + n_test);
    let source = DataSource::Simulated {
        process: spec.clone(),
        seed,
        solver,
        x0_distribution: format!("uniform({}, {})", spec.x0_mean - spec.x0_halfwidth, spec.x0_mean + spec.x0_halfwidth),
    };
    Ok(Dataset {
        train,
        test,
        meta: split_meta(grid, n_train, n_test, source),
    })
}

/// Benchmark dataset with default parameters, grid and solver settings.
pub fn generate_benchmark(kind: ProcessKind, n_train: usize, n_test: usize, seed: u64) -> Result<Dataset> {
    let spec = ProcessSpec::benchmark(kind)?;
    let solver = SolverOptions {
        scheme: Scheme::EulerMaruyama,
        substeps: default_substeps(kind),
    };
    generate(&spec, TimeGrid::benchmark(), n_train, n_test, seed, solver)
}

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_paths_csv(&dir.join(TRAIN_FILE), &self.train)?;
        write_paths_csv(&dir.join(TEST_FILE), &self.test)?;
        let meta_path = dir.join(META_FILE);
        let json = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text)?;
        let train = read_paths_csv(&dir.join(TRAIN_FILE))?;
        let test = read_paths_csv(&dir.join(TEST_FILE))?;
        for (name, batch, n) in [("train", &train, meta.n_train), ("test", &test, meta.n_test)] {
            if batch.grid != meta.grid {
                return Err(Error::invalid(format!("{name} grid disagrees with {META_FILE}")));
            }
            if batch.len() != n {
                return Err(Error::invalid(format!("{name} has {} rows, sidecar says {n}", batch.len())));
            }
        }
        Ok(Self { train, test, meta })
    }
}

pub fn write_paths_csv(path: &Path, batch: &PathBatch) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(out, "series_id,t0,dt").map_err(io)?;
    for k in 0..batch.grid.points() {
        write!(out, ",v{k}").map_err(io)?;
    }
    writeln!(out).map_err(io)?;
    for (i, row) in batch.values.rows().into_iter().enumerate() {
        write!(out, "{i},{},{}", batch.grid.t0, batch.grid.dt).map_err(io)?;
        for v in row {
            write!(out, ",{v}").map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    out.flush().map_err(io)
}

fn parse_f64(field: &str, source: &str, line: usize, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        source_name: source.to_string(),
        line,
        message: format!("cannot parse {what} {field:?} as a number"),
    })
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file))
}

fn csv_error(source: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        source_name: source.to_string(),
        line,
        message: e.to_string(),
    }
}

/// Read a wide path file written by [`write_paths_csv`].
pub fn read_paths_csv(path: &Path) -> Result<PathBatch> {
    let source = path.display().to_string();
    let mut reader = open_csv(path)?;
    let header = reader.headers().map_err(|e| csv_error(&source, e))?.clone();
    if header.len() < 5 || &header[0] != "series_id" || &header[1] != "t0" || &header[2] != "dt" {
        return Err(Error::Parse {
            source_name: source,
            line: 1,
            message: "expected header series_id,t0,dt,v0,...".into(),
        });
    }
    let points = header.len() - 3;
    let mut grid: Option<(f64, f64)> = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&source, e))?;
        let line = record.position().map_or(rows + 2, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(Error::Parse {
                source_name: source,
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let t0 = parse_f64(&record[1], &source, line, "t0")?;
        let dt = parse_f64(&record[2], &source, line, "dt")?;
        match grid {
            None => grid = Some((t0, dt)),
            Some(g) if g != (t0, dt) => {
                return Err(Error::Parse {
                    source_name: source,
                    line,
                    message: "rows disagree on t0/dt".into(),
                })
            }
            _ => {}
        }
        for field in record.iter().skip(3) {
            data.push(parse_f64(field, &source, line, "value")?);
        }
        rows += 1;
    }
    let (t0, dt) = grid.ok_or_else(|| Error::Parse {
        source_name: source.clone(),
        line: 2,
        message: "file has no data rows".into(),
    })?;
    let grid = TimeGrid::new(t0, dt, points - 1)?;
    let values = Array2::from_shape_vec((rows, points), data).map_err(|e| Error::invalid(e.to_string()))?;
    PathBatch::new(grid, values, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    /// `series_id,time,value` rows.
    Long,
    /// One series per row: `series_id` followed by values (`t0`/`dt` columns ignored).
    Wide,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    ForwardFill,
    DropSeries,
}

impl std::str::FromStr for Schema {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "long" => Ok(Schema::Long),
            "wide" => Ok(Schema::Wide),
            _ => Err(Error::invalid(format!("unknown schema {s:?} (expected long or wide)"))),
        }
    }
}

impl std::str::FromStr for MissingPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward_fill" => Ok(MissingPolicy::ForwardFill),
            "drop_series" => Ok(MissingPolicy::DropSeries),
            _ => Err(Error::invalid(format!("unknown missing policy {s:?} (expected forward_fill or drop_series)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub schema: Schema,
    pub missing: MissingPolicy,
    pub window: usize,
    pub stride: usize,
    /// Fraction of windows (taken from the end) held out for testing.
    pub test_fraction: f64,
    pub standardize: bool,
    pub dt: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            schema: Schema::Wide,
            missing: MissingPolicy::ForwardFill,
            window: 150,
            stride: 50,
            test_fraction: DEFAULT_TEST as f64 / (DEFAULT_TRAIN + DEFAULT_TEST) as f64,
            standardize: false,
            dt: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub schema: Schema,
    pub missing_policy: MissingPolicy,
    pub rows_read: usize,
    pub series_read: usize,
    pub gaps_filled: usize,
    pub series_dropped: usize,
    pub windows_train: usize,
    pub windows_test: usize,
    pub window: usize,
    pub stride: usize,
    /// `(mean, std)` subtracted and divided out when standardization was requested.
    pub standardization: Option<(f64, f64)>,
    pub warnings: Vec<String>,
}

fn is_missing(field: &str) -> bool {
    matches!(field.trim().to_ascii_lowercase().as_str(), "" | "na" | "nan" | "null")
}

type RawSeries = BTreeMap<String, Vec<Option<f64>>>;

fn read_long(path: &Path, source: &str) -> Result<(RawSeries, usize)> {
    let mut reader = open_csv(path)?;
    let header = reader.headers().map_err(|e| csv_error(source, e))?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let (Some(id), Some(time), Some(value)) = (col("series_id"), col("time"), col("value")) else {
        return Err(Error::Parse {
            source_name: source.to_string(),
            line: 1,
            message: "long schema needs series_id, time and value columns".into(),
        });
    };
    let mut points: BTreeMap<String, Vec<(f64, Option<f64>)>> = BTreeMap::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(source, e))?;
        let line = record.position().map_or(rows + 2, |p| p.line() as usize);
        let (Some(sid), Some(t), Some(v)) = (record.get(id), record.get(time), record.get(value)) else {
            return Err(Error::Parse {
                source_name: source.to_string(),
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        };
        let t = parse_f64(t, source, line, "time")?;
        let v = if is_missing(v) { None } else { Some(parse_f64(v, source, line, "value")?) };
        points.entry(sid.trim().to_string()).or_default().push((t, v));
        rows += 1;
    }
    let series = points
        .into_iter()
        .map(|(k, mut obs)| {
            obs.sort_by(|a, b| a.0.total_cmp(&b.0));
            (k, obs.into_iter().map(|(_, v)| v).collect())
        })
        .collect();
    Ok((series, rows))
}

fn read_wide(path: &Path, source: &str) -> Result<(RawSeries, usize)> {
    let mut reader = open_csv(path)?;
    let header = reader.headers().map_err(|e| csv_error(source, e))?.clone();
    if header.is_empty() || header[0].trim() != "series_id" {
        return Err(Error::Parse {
            source_name: source.to_string(),
            line: 1,
            message: "wide schema needs series_id as the first column".into(),
        });
    }
    let value_cols: Vec<usize> = (1..header.len())
        .filter(|&c| !matches!(header[c].trim(), "t0" | "dt"))
        .collect();
    let mut series = RawSeries::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(source, e))?;
        let line = record.position().map_or(rows + 2, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(Error::Parse {
                source_name: source.to_string(),
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let values = value_cols
            .iter()
            .map(|&c| if is_missing(&record[c]) { Ok(None) } else { parse_f64(&record[c], source, line, "value").map(Some) })
            .collect::<Result<Vec<_>>>()?;
        // ids are zero-padded so the BTreeMap keeps file order for numeric ids
        series.insert(format!("{:>12}:{}", rows, record[0].trim()), values);
        rows += 1;
    }
    Ok((series, rows))
}

/// Parse raw series into fixed-length sliding windows.
pub fn ingest_csv(path: &Path, opts: &IngestOptions) -> Result<Dataset> {
    if opts.window < 2 || opts.stride == 0 {
        return Err(Error::invalid("window must be >= 2 and stride >= 1"));
    }
    if !(0.0..1.0).contains(&opts.test_fraction) {
        return Err(Error::invalid("test fraction must lie in [0, 1)"));
    }
    let source = path.display().to_string();
    let (raw, rows_read) = match opts.schema {
        Schema::Long => read_long(path, &source)?,
        Schema::Wide => read_wide(path, &source)?,
    };
    let mut report = IngestReport {
        schema: opts.schema,
        missing_policy: opts.missing,
        rows_read,
        series_read: raw.len(),
        gaps_filled: 0,
        series_dropped: 0,
        windows_train: 0,
        windows_test: 0,
        window: opts.window,
        stride: opts.stride,
        standardization: None,
        warnings: Vec::new(),
    };
    let mut windows: Vec<Vec<f64>> = Vec::new();
    for (id, values) in raw {
        let id = id.rsplit_once(':').map_or(id.as_str(), |(_, s)| s).to_string();
        let Some(first) = values.iter().flatten().next().copied() else {
            log::warn!("series {id} has no observations; dropped");
            report.warnings.push(format!("series {id} is entirely missing and was dropped"));
            report.series_dropped += 1;
            continue;
        };
        let gaps = values.iter().filter(|v| v.is_none()).count();
        if gaps > 0 && opts.missing == MissingPolicy::DropSeries {
            report.series_dropped += 1;
            continue;
        }
        // leading gaps take the first observation
        let mut last = first;
        let filled: Vec<f64> = values
            .iter()
            .map(|v| {
                if let Some(x) = v {
                    last = *x;
                }
                last
            })
            .collect();
        report.gaps_filled += gaps;
        let mut start = 0;
        while start + opts.window <= filled.len() {
            windows.push(filled[start..start + opts.window].to_vec());
            start += opts.stride;
        }
        if filled.len() < opts.window {
            report.warnings.push(format!("series {id} is shorter than one window"));
        }
    }
    if windows.is_empty() {
        return Err(Error::invalid("no complete windows could be formed from the input"));
    }
    let mut data: Vec<f64> = windows.concat();
    if opts.standardize {
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let std = (data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let std = if std > 0.0 { std } else { 1.0 };
        data.iter_mut().for_each(|v| *v = (*v - mean) / std);
        report.standardization = Some((mean, std));
    }
    let total = windows.len();
    let n_test = ((total as f64) * opts.test_fraction).round() as usize;
    let n_train = total - n_test;
    if n_train == 0 {
        return Err(Error::invalid("test fraction leaves no training windows"));
    }
    report.windows_train = n_train;
    report.windows_test = n_test;
    let grid = TimeGrid::new(0.0, opts.dt, opts.window - 1)?;
    let values = Array2::from_shape_vec((total, opts.window), data).map_err(|e| Error::invalid(e.to_string()))?;
    let all = PathBatch::new(grid, values, 0)?;
    let meta = split_meta(
        grid,
        n_train,
        n_test,
        DataSource::Ingested {
            file: source,
            report,
        },
    );
    Ok(Dataset {
        train: all.slice_rows(0, n_train),
        test: all.slice_rows(n_train, total),
        meta,
    })
}

/// Seeded permutation of `0..n`.
pub fn shuffled_indices(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(rng::derive_seed(seed, rng::stream::SPLIT, epoch));
    idx.shuffle(&mut r);
    idx
}

impl IngestReport {
    pub fn from_dataset(ds: &Dataset) -> Option<&IngestReport> {
        match &ds.meta.source {
            DataSource::Ingested { report, .. } => Some(report),
            DataSource::Simulated { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let ds = generate_benchmark(ProcessKind::Ou, 7, 3, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.train.values, ds.train.values);
        assert_eq!(back.test.values, ds.test.values);
        assert_eq!(back.meta, ds.meta);
        assert_eq!(back.meta.target_from(), 100);
        assert_eq!(back.meta.target_len, 50);
    }

    #[test]
    fn same_seed_gives_identical_files() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_benchmark(ProcessKind::Cir, 5, 2, 9).unwrap().save(a.path()).unwrap();
        generate_benchmark(ProcessKind::Cir, 5, 2, 9).unwrap().save(b.path()).unwrap();
        for f in [TRAIN_FILE, TEST_FILE, META_FILE] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }
    }

    #[test]
    fn split_sizes_do_not_change_training_paths() {
        let a = generate_benchmark(ProcessKind::AbmGbm, 10, 2, 1).unwrap();
        let b = generate_benchmark(ProcessKind::AbmGbm, 10, 5, 1).unwrap();
        assert_eq!(a.train.values, b.train.values);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.csv", "series_id,t0,dt,v0,v1\n0,0,1,1.0,2.0\n1,0,1,oops,2.0\n");
        match read_paths_csv(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let p = write(dir.path(), "short.csv", "series_id,t0,dt,v0,v1\n0,0,1,1.0\n");
        assert!(matches!(read_paths_csv(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn forward_fill_counts_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "long.csv", "series_id,time,value\na,0,1.0\na,1,\na,2,3.0\na,3,4.0\n");
        let opts = IngestOptions {
            schema: Schema::Long,
            window: 4,
            stride: 1,
            test_fraction: 0.0,
            ..Default::default()
        };
        let ds = ingest_csv(&p, &opts).unwrap();
        assert_eq!(ds.train.path(0), &[1.0, 1.0, 3.0, 4.0]);
        let report = IngestReport::from_dataset(&ds).unwrap();
        assert_eq!(report.gaps_filled, 1);
        assert_eq!(report.rows_read, 4);
    }

    #[test]
    fn drop_series_removes_gapped_series() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "wide.csv", "series_id,x0,x1,x2\ns1,1,NA,3\ns2,4,5,6\ns3,NA,NA,NA\n");
        let opts = IngestOptions {
            missing: MissingPolicy::DropSeries,
            window: 3,
            stride: 1,
            test_fraction: 0.0,
            ..Default::default()
        };
        let ds = ingest_csv(&p, &opts).unwrap();
        assert_eq!(ds.train.len(), 1);
        assert_eq!(ds.train.path(0), &[4.0, 5.0, 6.0]);
        let report = IngestReport::from_dataset(&ds).unwrap();
        assert_eq!(report.series_dropped, 2);
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn generated_file_round_trips_through_ingest() {
        let ds = generate_benchmark(ProcessKind::Ou, 6, 2, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let opts = IngestOptions {
            test_fraction: 0.0,
            ..Default::default()
        };
        let back = ingest_csv(&dir.path().join(TRAIN_FILE), &opts).unwrap();
        assert_eq!(back.train.values, ds.train.values);
        assert_eq!(IngestReport::from_dataset(&back).unwrap().gaps_filled, 0);
    }

    #[test]
    fn sliding_windows_and_standardization() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("series_id,time,value\n");
        for t in 0..350 {
            text.push_str(&format!("s,{t},{}\n", t as f64));
        }
        let p = write(dir.path(), "s.csv", &text);
        let opts = IngestOptions {
            schema: Schema::Long,
            standardize: true,
            ..Default::default()
        };
        let ds = ingest_csv(&p, &opts).unwrap();
        // starts 0, 50, 100, 150, 200
        assert_eq!(ds.train.len() + ds.test.len(), 5);
        assert_eq!(ds.test.len(), 1);
        let report = IngestReport::from_dataset(&ds).unwrap();
        let (m, s) = report.standardization.unwrap();
        assert!((ds.train.values[[1, 0]] * s + m - 50.0).abs() < 1e-9);
    }

    #[test]
    fn shuffles_are_seeded_permutations() {
        let a = shuffled_indices(50, 3, 0);
        assert_eq!(a, shuffled_indices(50, 3, 0));
        assert_ne!(a, shuffled_indices(50, 3, 1));
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
    }
}
