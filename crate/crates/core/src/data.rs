//! Data ingestion, cleaning, windowing and synthetic generation.
//!
//! File formats (UTF-8 CSV, `#` lines are comments):
//! - `stations.csv`: header `station_id,lat,lon`.
//! - `readings.csv`: header `timestamp,station_id,<feature...>` with
//!   ISO-8601 UTC timestamps; an empty cell is a missing value.
//! - `true_graph.csv` (synthetic only): header `src,dst,weight`.

use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::Adjacency;
use crate::moran::{moran_targets, SpatialWeights};
use crate::timefmt::{format_iso, parse_iso};
use crate::{geo, Error, Result};

// ── station and readings tables ──────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Station {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone)]
pub struct StationTable {
    pub stations: Vec<Station>,
}

impl StationTable {
    pub fn new(stations: Vec<Station>) -> Result<Self> {
        if stations.is_empty() {
            return Err(Error::invalid("stations", "at least one station required"));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &stations {
            geo::check_coords("stations", s.lat, s.lon)?;
            if !seen.insert(s.id.clone()) {
                return Err(Error::invalid(
                    "stations",
                    format!("duplicate station id '{}'", s.id),
                ));
            }
        }
        Ok(Self { stations })
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn coords(&self) -> Vec<(f64, f64)> {
        self.stations.iter().map(|s| (s.lat, s.lon)).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.id == id)
    }
}

/// Uniformly spaced multivariate readings, laid out `[time, station, feature]`.
/// `mask[t,n,c]` is true when the cell was absent in the source data.
#[derive(Debug, Clone)]
pub struct ReadingsFrame {
    pub timestamps: Vec<i64>,
    pub interval: i64,
    pub features: Vec<String>,
    pub n_stations: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl ReadingsFrame {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    #[inline]
    pub fn idx(&self, t: usize, n: usize, c: usize) -> usize {
        (t * self.n_stations + n) * self.features.len() + c
    }

    pub fn value(&self, t: usize, n: usize, c: usize) -> f64 {
        self.values[self.idx(t, n, c)]
    }

    /// Index of the grid step whose timestamp equals `at`, if any.
    pub fn step_of(&self, at: i64) -> Option<usize> {
        if self.timestamps.is_empty() {
            return None;
        }
        let t0 = self.timestamps[0];
        if at < t0 || (at - t0) % self.interval != 0 {
            return None;
        }
        let step = ((at - t0) / self.interval) as usize;
        (step < self.timestamps.len()).then_some(step)
    }
}

// ── CSV reading ──────────────────────────────────────────────────────

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.to_string()))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .collect())
}

fn parse_err(path: &Path, row: usize, col: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        row,
        col,
        msg: msg.into(),
    }
}

fn load_stations(path: &Path) -> Result<StationTable> {
    let lines = read_lines(path)?;
    let Some(((hrow, header), rows)) = lines.split_first().map(|(h, r)| (h.clone(), r)) else {
        return Err(parse_err(path, 1, 1, "empty stations file"));
    };
    if header.trim() != "station_id,lat,lon" {
        return Err(parse_err(
            path,
            hrow,
            1,
            format!("expected header 'station_id,lat,lon', got '{}'", header.trim()),
        ));
    }
    let mut stations = Vec::new();
    for (row, line) in rows {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(path, *row, 1, "expected 3 fields"));
        }
        let lat: f64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, *row, 2, "invalid latitude"))?;
        let lon: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, *row, 3, "invalid longitude"))?;
        stations.push(Station {
            id: fields[0].trim().to_string(),
            lat,
            lon,
        });
    }
    StationTable::new(stations)
}

/// Loads station metadata and readings; rows may appear in any order but
/// their distinct timestamps must sort onto a uniform grid.
pub fn load_csv(stations_path: &Path, readings_path: &Path) -> Result<(StationTable, ReadingsFrame)> {
    let table = load_stations(stations_path)?;
    let lines = read_lines(readings_path)?;
    let Some(((hrow, header), rows)) = lines.split_first().map(|(h, r)| (h.clone(), r)) else {
        return Err(parse_err(readings_path, 1, 1, "empty readings file"));
    };
    let head: Vec<&str> = header.trim().split(',').collect();
    if head.len() < 3 || head[0] != "timestamp" || head[1] != "station_id" {
        return Err(parse_err(
            readings_path,
            hrow,
            1,
            "expected header 'timestamp,station_id,<feature...>'",
        ));
    }
    let features: Vec<String> = head[2..].iter().map(|s| s.to_string()).collect();
    let n_features = features.len();
    let n_stations = table.len();

    struct Cell {
        t: i64,
        station: usize,
        row: usize,
        vals: Vec<Option<f64>>,
    }
    let mut cells = Vec::with_capacity(rows.len());
    let mut times: Vec<i64> = Vec::new();
    for (row, line) in rows {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + n_features {
            return Err(parse_err(
                readings_path,
                *row,
                1,
                format!("expected {} fields, got {}", 2 + n_features, fields.len()),
            ));
        }
        let t = parse_iso(fields[0].trim())
            .map_err(|e| parse_err(readings_path, *row, 1, e.to_string()))?;
        let station = table.index_of(fields[1].trim()).ok_or_else(|| {
            parse_err(
                readings_path,
                *row,
                2,
                format!("unknown station '{}'", fields[1].trim()),
            )
        })?;
        let mut vals = Vec::with_capacity(n_features);
        for (c, raw) in fields[2..].iter().enumerate() {
            let raw = raw.trim();
            if raw.is_empty() {
                vals.push(None);
            } else {
                let v: f64 = raw
                    .parse()
                    .map_err(|_| parse_err(readings_path, *row, 3 + c, "invalid number"))?;
                vals.push(Some(v));
            }
        }
        times.push(t);
        cells.push(Cell {
            t,
            station,
            row: *row,
            vals,
        });
    }
    if cells.is_empty() {
        return Err(parse_err(readings_path, hrow, 1, "no data rows"));
    }

    times.sort_unstable();
    times.dedup();
    let interval = if times.len() >= 2 {
        times[1] - times[0]
    } else {
        3600
    };
    if interval <= 0 {
        return Err(parse_err(readings_path, hrow, 1, "zero time interval"));
    }
    for w in times.windows(2) {
        if w[1] - w[0] != interval {
            return Err(Error::invalid(
                "load_csv",
                format!(
                    "nonuniform timestamp interval: {} then {} (expected every {} s)",
                    format_iso(w[0]),
                    format_iso(w[1]),
                    interval
                ),
            ));
        }
    }

    let t_len = times.len();
    let t0 = times[0];
    let mut values = vec![f64::NAN; t_len * n_stations * n_features];
    let mut mask = vec![true; t_len * n_stations * n_features];
    let mut filled = vec![false; t_len * n_stations];
    for cell in &cells {
        let t = ((cell.t - t0) / interval) as usize;
        if std::mem::replace(&mut filled[t * n_stations + cell.station], true) {
            return Err(parse_err(
                readings_path,
                cell.row,
                1,
                format!(
                    "duplicate row for station {} at {}",
                    table.stations[cell.station].id,
                    format_iso(cell.t)
                ),
            ));
        }
        for (c, v) in cell.vals.iter().enumerate() {
            let i = (t * n_stations + cell.station) * n_features + c;
            if let Some(v) = v {
                values[i] = *v;
                mask[i] = false;
            }
        }
    }

    Ok((
        table,
        ReadingsFrame {
            timestamps: times,
            interval,
            features,
            n_stations,
            values,
            mask,
        },
    ))
}

// ── CSV writing ──────────────────────────────────────────────────────

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path.display().to_string(), e))
}

fn hash_line(config_hash: &str) -> String {
    format!("# config_hash={config_hash}\n")
}

pub fn write_stations_csv(path: &Path, table: &StationTable, config_hash: &str) -> Result<()> {
    let mut out = hash_line(config_hash);
    out.push_str("station_id,lat,lon\n");
    for s in &table.stations {
        out.push_str(&format!("{},{},{}\n", s.id, s.lat, s.lon));
    }
    write_file(path, &out)
}

pub fn write_readings_csv(path: &Path, table: &StationTable, frame: &ReadingsFrame, config_hash: &str) -> Result<()> {
    let mut out = hash_line(config_hash);
    out.push_str("timestamp,station_id");
    for f in &frame.features {
        out.push(',');
        out.push_str(f);
    }
    out.push('\n');
    for (t, &ts) in frame.timestamps.iter().enumerate() {
        for (n, s) in table.stations.iter().enumerate() {
            out.push_str(&format_iso(ts));
            out.push(',');
            out.push_str(&s.id);
            for c in 0..frame.n_features() {
                out.push(',');
                if !frame.mask[frame.idx(t, n, c)] {
                    out.push_str(&frame.value(t, n, c).to_string());
                }
            }
            out.push('\n');
        }
    }
    write_file(path, &out)
}

/// Writes nonzero off-diagonal entries as `src,dst,weight` edges.
pub fn write_graph_csv(
    path: &Path,
    table: &StationTable,
    weights: &[f64],
    include_self_loops: bool,
    config_hash: &str,
) -> Result<()> {
    let n = table.len();
    let mut out = hash_line(config_hash);
    out.push_str("src,dst,weight\n");
    for i in 0..n {
        for j in 0..n {
            if (i != j || include_self_loops) && weights[i * n + j] != 0.0 {
                out.push_str(&format!(
                    "{},{},{}\n",
                    table.stations[i].id, table.stations[j].id, weights[i * n + j]
                ));
            }
        }
    }
    write_file(path, &out)
}

// ── cleaning and normalization ───────────────────────────────────────

/// Per-feature statistics of the training split; `std` is floored at 1e-6.
#[derive(Debug, Clone)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn normalize(&self, feature: usize, v: f64) -> f64 {
        (v - self.mean[feature]) / self.std[feature]
    }

    pub fn denormalize(&self, feature: usize, v: f64) -> f64 {
        v * self.std[feature] + self.mean[feature]
    }
}

/// Drops stations whose overall missing fraction exceeds `max_missing`.
pub fn drop_sparse_stations(
    table: &StationTable,
    frame: &ReadingsFrame,
    max_missing: f64,
) -> Result<(StationTable, ReadingsFrame)> {
    let (t_len, n, c) = (frame.len(), frame.n_stations, frame.n_features());
    let keep: Vec<usize> = (0..n)
        .filter(|&station| {
            let missing = (0..t_len)
                .flat_map(|t| (0..c).map(move |f| (t, f)))
                .filter(|&(t, f)| frame.mask[frame.idx(t, station, f)])
                .count();
            (missing as f64) <= max_missing * (t_len * c) as f64
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::invalid(
            "drop_sparse_stations",
            "every station exceeds the missing-data threshold",
        ));
    }
    if keep.len() == n {
        return Ok((table.clone(), frame.clone()));
    }
    let stations: Vec<Station> = keep.iter().map(|&i| table.stations[i].clone()).collect();
    let mut values = Vec::with_capacity(t_len * keep.len() * c);
    let mut mask = Vec::with_capacity(t_len * keep.len() * c);
    for t in 0..t_len {
        for &station in &keep {
            for f in 0..c {
                values.push(frame.value(t, station, f));
                mask.push(frame.mask[frame.idx(t, station, f)]);
            }
        }
    }
    Ok((
        StationTable::new(stations)?,
        ReadingsFrame {
            timestamps: frame.timestamps.clone(),
            interval: frame.interval,
            features: frame.features.clone(),
            n_stations: keep.len(),
            values,
            mask,
        },
    ))
}

/// Forward-fills gaps per station/feature, fills leading gaps with the
/// train-split mean, then z-scores every feature with train-split
/// statistics only. The mask keeps recording which cells were originally
/// absent.
pub fn impute_and_normalize(frame: &mut ReadingsFrame, train: Range<usize>) -> Result<NormStats> {
    impute_and_normalize_with(frame, train, None)
}

/// Like [`impute_and_normalize`], but reusing previously computed
/// statistics (e.g. from a checkpoint) instead of deriving them from the
/// train split.
pub fn impute_and_normalize_with(
    frame: &mut ReadingsFrame,
    train: Range<usize>,
    reuse: Option<&NormStats>,
) -> Result<NormStats> {
    let (t_len, n, c) = (frame.len(), frame.n_stations, frame.n_features());
    if train.end > t_len {
        return Err(Error::invalid(
            "impute_and_normalize",
            format!("train range {:?} exceeds frame length {}", train, t_len),
        ));
    }
    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    match reuse {
        Some(stats) => {
            if stats.mean.len() != c {
                return Err(Error::invalid(
                    "impute_and_normalize",
                    format!(
                        "reused statistics cover {} features, frame has {c}",
                        stats.mean.len()
                    ),
                ));
            }
            mean.copy_from_slice(&stats.mean);
            std.copy_from_slice(&stats.std);
        }
        None => {
            for f in 0..c {
                let mut sum = 0.0;
                let mut count = 0usize;
                for t in train.clone() {
                    for s in 0..n {
                        let i = frame.idx(t, s, f);
                        if !frame.mask[i] {
                            sum += frame.values[i];
                            count += 1;
                        }
                    }
                }
                if count == 0 {
                    return Err(Error::invalid(
                        "impute_and_normalize",
                        format!(
                            "feature '{}' entirely missing in the train split",
                            frame.features[f]
                        ),
                    ));
                }
                let m = sum / count as f64;
                let mut var = 0.0;
                for t in train.clone() {
                    for s in 0..n {
                        let i = frame.idx(t, s, f);
                        if !frame.mask[i] {
                            var += (frame.values[i] - m) * (frame.values[i] - m);
                        }
                    }
                }
                mean[f] = m;
                std[f] = (var / count as f64).sqrt().max(1e-6);
            }
        }
    }

    for s in 0..n {
        for f in 0..c {
            let mut last: Option<f64> = None;
            for t in 0..t_len {
                let i = frame.idx(t, s, f);
                if frame.mask[i] {
                    frame.values[i] = last.unwrap_or(mean[f]);
                } else {
                    last = Some(frame.values[i]);
                }
            }
        }
    }
    for t in 0..t_len {
        for s in 0..n {
            for f in 0..c {
                let i = frame.idx(t, s, f);
                frame.values[i] = (frame.values[i] - mean[f]) / std[f];
            }
        }
    }
    Ok(NormStats { mean, std })
}

// ── splitting and windowing ──────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Chronological 7:1:2 split by row count: floor for train and val, the
/// remainder goes to test.
pub fn split_ranges(len: usize) -> SplitRanges {
    let n_train = (len as f64 * 0.7).floor() as usize;
    let n_val = (len as f64 * 0.1).floor() as usize;
    SplitRanges {
        train: 0..n_train,
        val: n_train..n_train + n_val,
        test: n_train + n_val..len,
    }
}

/// Start rows of all stride-1 windows fully contained in `range`.
pub fn window_starts(range: Range<usize>, t_in: usize, horizon: usize) -> Vec<usize> {
    let need = t_in + horizon;
    if range.len() < need {
        return Vec::new();
    }
    (range.start..=range.end - need).collect()
}

/// Window plan for one split.
#[derive(Debug, Clone)]
pub struct WindowPlan {
    pub starts: Vec<usize>,
    pub t_in: usize,
    pub horizon: usize,
}

/// Builds the three chronological window plans. Errors when any split is
/// shorter than one full window.
pub fn make_windows(
    len: usize,
    t_in: usize,
    horizon: usize,
) -> Result<(WindowPlan, WindowPlan, WindowPlan)> {
    let splits = split_ranges(len);
    let need = t_in + horizon;
    for (name, r) in [
        ("train", &splits.train),
        ("val", &splits.val),
        ("test", &splits.test),
    ] {
        if r.len() < need {
            return Err(Error::invalid(
                "make_windows",
                format!(
                    "{name} split has {} rows, too short for T+tau = {need}",
                    r.len()
                ),
            ));
        }
    }
    let plan = |r: Range<usize>| WindowPlan {
        starts: window_starts(r, t_in, horizon),
        t_in,
        horizon,
    };
    Ok((plan(splits.train), plan(splits.val), plan(splits.test)))
}

/// Materialized batch: inputs `[B,N,T,C]`, targets and their Moran fields
/// `[B,N,τ]`, plus the source start rows.
pub struct WindowBatch {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub y_moran: Vec<f64>,
    pub starts: Vec<usize>,
    pub n: usize,
    pub t_in: usize,
    pub c: usize,
    pub horizon: usize,
}

/// Copies the chosen windows out of the frame and computes the Moran field
/// of each future snapshot (targets are constants; no gradients flow).
pub fn materialize(
    frame: &ReadingsFrame,
    starts: &[usize],
    t_in: usize,
    horizon: usize,
    target: usize,
    weights: &SpatialWeights,
) -> Result<WindowBatch> {
    let (n, c) = (frame.n_stations, frame.n_features());
    if target >= c {
        return Err(Error::invalid(
            "materialize",
            format!("target feature index {target} out of range ({c} features)"),
        ));
    }
    let b = starts.len();
    let mut x = vec![0.0; b * n * t_in * c];
    let mut y = vec![0.0; b * n * horizon];
    let mut y_moran = vec![0.0; b * n * horizon];
    for (bi, &start) in starts.iter().enumerate() {
        if start + t_in + horizon > frame.len() {
            return Err(Error::invalid(
                "materialize",
                format!("window at row {start} runs past the end of the frame"),
            ));
        }
        for node in 0..n {
            for t in 0..t_in {
                for f in 0..c {
                    x[((bi * n + node) * t_in + t) * c + f] = frame.value(start + t, node, f);
                }
            }
            for s in 0..horizon {
                y[(bi * n + node) * horizon + s] = frame.value(start + t_in + s, node, target);
            }
        }
        let block = &y[bi * n * horizon..(bi + 1) * n * horizon];
        let m = moran_targets(block, n, horizon, weights)?;
        y_moran[bi * n * horizon..(bi + 1) * n * horizon].copy_from_slice(&m);
    }
    Ok(WindowBatch {
        x,
        y,
        y_moran,
        starts: starts.to_vec(),
        n,
        t_in,
        c,
        horizon,
    })
}

// ── synthetic data ───────────────────────────────────────────────────

pub mod synth {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum GraphKind {
        Ring,
        Clusters,
        Random,
    }

    impl std::str::FromStr for GraphKind {
        type Err = Error;
        fn from_str(s: &str) -> Result<Self> {
            match s {
                "ring" => Ok(GraphKind::Ring),
                "clusters" => Ok(GraphKind::Clusters),
                "random" => Ok(GraphKind::Random),
                other => Err(Error::invalid(
                    "graph_kind",
                    format!("unknown graph kind '{other}' (expected ring|clusters|random)"),
                )),
            }
        }
    }

    /// Generator knobs; the defaults are the published behavior.
    #[derive(Debug, Clone)]
    pub struct SynthOptions {
        /// Neighbor-diffusion strength.
        pub alpha: f64,
        /// Standard deviation of the Gaussian innovation noise.
        pub noise_sigma: f64,
        /// Amplitude of the daily sinusoid.
        pub seasonal_amp: f64,
        /// Steps per seasonal period (hourly grid → 24).
        pub period: usize,
        pub n_features: usize,
        /// Steps simulated and discarded before recording.
        pub burn_in: usize,
    }

    impl Default for SynthOptions {
        fn default() -> Self {
            Self {
                alpha: 0.8,
                noise_sigma: 0.1,
                seasonal_amp: 1.0,
                period: 24,
                n_features: 3,
                burn_in: 48,
            }
        }
    }

    pub struct SynthData {
        pub stations: StationTable,
        pub frame: ReadingsFrame,
        pub truth: Adjacency,
    }

    const FEATURE_NAMES: [&str; 6] = ["pm25", "pm10", "no2", "co", "o3", "so2"];

    fn feature_name(i: usize) -> String {
        FEATURE_NAMES
            .get(i)
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("feat{i}"))
    }

    fn station_coords(n: usize, kind: GraphKind, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
        match kind {
            GraphKind::Ring => (0..n)
                .map(|i| {
                    let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                    (33.0 + 2.0 * theta.sin(), 110.0 + 2.4 * theta.cos())
                })
                .collect(),
            GraphKind::Clusters => (0..n)
                .map(|i| {
                    let (clat, clon) = if i < n / 2 { (31.0, 108.0) } else { (36.0, 115.0) };
                    (
                        clat + rng.gen_range(-0.5..0.5),
                        clon + rng.gen_range(-0.5..0.5),
                    )
                })
                .collect(),
            GraphKind::Random => (0..n)
                .map(|_| (rng.gen_range(28.0..38.0), rng.gen_range(105.0..118.0)))
                .collect(),
        }
    }

    fn true_graph(n: usize, kind: GraphKind, rng: &mut ChaCha8Rng) -> Adjacency {
        let mut w = vec![0.0; n * n];
        match kind {
            GraphKind::Ring => {
                for i in 0..n {
                    let j = (i + 1) % n;
                    w[i * n + j] = 1.0;
                    w[j * n + i] = 1.0;
                }
            }
            GraphKind::Clusters => {
                let half = n / 2;
                for i in 0..n {
                    for j in 0..n {
                        let same = (i < half) == (j < half);
                        if i != j && same {
                            w[i * n + j] = 1.0;
                        }
                    }
                }
            }
            GraphKind::Random => {
                for i in 0..n {
                    for j in (i + 1)..n {
                        if rng.gen_range(0.0..1.0) < 0.3 {
                            w[i * n + j] = 1.0;
                            w[j * n + i] = 1.0;
                        }
                    }
                }
            }
        }
        Adjacency::new(n, w).expect("synthetic weights are nonnegative")
    }

    fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller on two uniforms.
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn generate(n_nodes: usize, steps: usize, seed: u64, kind: GraphKind) -> Result<SynthData> {
        generate_with(n_nodes, steps, seed, kind, &SynthOptions::default())
    }

    /// Simulates x_{t+1} = α·Â·x_t + seasonal(t+1) + noise per feature,
    /// with Â the row-normalized true graph. Fully determined by `seed`.
    pub fn generate_with(
        n_nodes: usize,
        steps: usize,
        seed: u64,
        kind: GraphKind,
        opts: &SynthOptions,
    ) -> Result<SynthData> {
        if n_nodes < 2 {
            return Err(Error::invalid("synth_generate", "need at least 2 nodes"));
        }
        if steps < 200 {
            return Err(Error::invalid(
                "synth_generate",
                format!("steps must be >= 200, got {steps}"),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = station_coords(n_nodes, kind, &mut rng);
        let truth = true_graph(n_nodes, kind, &mut rng);

        // Row-normalized propagation operator.
        let n = n_nodes;
        let mut ahat = truth.weights().to_vec();
        for i in 0..n {
            let s: f64 = ahat[i * n..(i + 1) * n].iter().sum();
            if s > 0.0 {
                for v in &mut ahat[i * n..(i + 1) * n] {
                    *v /= s;
                }
            }
        }

        let c = opts.n_features;
        let phases: Vec<f64> = (0..c).map(|f| 0.9 * f as f64).collect();
        let seasonal = |step: usize, f: usize| -> f64 {
            opts.seasonal_amp
                * ((2.0 * std::f64::consts::PI * step as f64 / opts.period as f64) + phases[f])
                    .sin()
        };

        let mut state = vec![0.0; n * c];
        for f in 0..c {
            for node in 0..n {
                state[node * c + f] = seasonal(0, f) + opts.noise_sigma * gaussian(&mut rng);
            }
        }
        let mut values = Vec::with_capacity(steps * n * c);
        let total = opts.burn_in + steps;
        for step in 1..=total {
            let mut next = vec![0.0; n * c];
            for f in 0..c {
                for node in 0..n {
                    let mut lag = 0.0;
                    for j in 0..n {
                        lag += ahat[node * n + j] * state[j * c + f];
                    }
                    next[node * c + f] = opts.alpha * lag
                        + seasonal(step, f)
                        + opts.noise_sigma * gaussian(&mut rng);
                }
            }
            state = next;
            if step > opts.burn_in {
                values.extend_from_slice(&state);
            }
        }

        let stations = StationTable::new(
            coords
                .iter()
                .enumerate()
                .map(|(i, &(lat, lon))| Station {
                    id: format!("s{:03}", i),
                    lat,
                    lon,
                })
                .collect(),
        )?;
        let t0 = parse_iso("2024-01-01T00:00:00Z").expect("valid constant");
        let frame = ReadingsFrame {
            timestamps: (0..steps).map(|i| t0 + 3600 * i as i64).collect(),
            interval: 3600,
            features: (0..c).map(feature_name).collect(),
            n_stations: n,
            values,
            mask: vec![false; steps * n * c],
        };
        Ok(SynthData {
            stations,
            frame,
            truth,
        })
    }
}

// ── dataset assembly ─────────────────────────────────────────────────

/// Everything the trainer needs: the normalized frame, window plans,
/// spatial weights for the auxiliary task, and the initial adjacency.
pub struct Dataset {
    pub stations: StationTable,
    pub frame: ReadingsFrame,
    pub stats: NormStats,
    pub splits: SplitRanges,
    pub train: WindowPlan,
    pub val: WindowPlan,
    pub test: WindowPlan,
    pub weights: SpatialWeights,
    pub a0: Adjacency,
    /// Forecast target feature index.
    pub target: usize,
}

pub struct PipelineConfig {
    pub t_in: usize,
    pub horizon: usize,
    pub target: usize,
    pub moran_k: usize,
    pub a0_sigma_km: f64,
    pub a0_threshold: f64,
    pub drop_missing_frac: f64,
}

/// Cleans, normalizes and windows a loaded table/frame pair.
/// `moran_k` is clamped to n−1 so small synthetic networks keep working.
pub fn prepare(table: StationTable, frame: ReadingsFrame, pc: &PipelineConfig) -> Result<Dataset> {
    prepare_with_stats(table, frame, pc, None)
}

/// [`prepare`] with normalization statistics taken from a checkpoint
/// rather than recomputed, keeping units consistent at inference time.
pub fn prepare_with_stats(
    table: StationTable,
    frame: ReadingsFrame,
    pc: &PipelineConfig,
    reuse: Option<&NormStats>,
) -> Result<Dataset> {
    let (table, mut frame) = drop_sparse_stations(&table, &frame, pc.drop_missing_frac)?;
    if pc.target >= frame.n_features() {
        return Err(Error::invalid(
            "prepare",
            format!(
                "target feature index {} out of range ({} features)",
                pc.target,
                frame.n_features()
            ),
        ));
    }
    let splits = split_ranges(frame.len());
    let stats = impute_and_normalize_with(&mut frame, splits.train.clone(), reuse)?;
    let (train, val, test) = make_windows(frame.len(), pc.t_in, pc.horizon)?;
    let k = pc.moran_k.min(table.len().saturating_sub(1));
    let weights = crate::moran::knn_weights(&table.coords(), k)?;
    let a0 = crate::adaptive::build_initial_adjacency(
        &table.coords(),
        pc.a0_sigma_km,
        pc.a0_threshold,
    )?;
    Ok(Dataset {
        stations: table,
        frame,
        stats,
        splits,
        train,
        val,
        test,
        weights,
        a0,
        target: pc.target,
    })
}
