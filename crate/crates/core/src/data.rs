//! Synthetic 2-D data: interleaved spirals, OOD regions, CSV I/O.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Labelled 2-D points.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset2D {
    pub points: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset2D {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpiralParams {
    pub n_per_class: usize,
    pub num_classes: usize,
    /// Angular noise std (radians) at the centre.
    pub noise_base: f64,
    /// Additional angular noise std per unit radius.
    pub noise_growth: f64,
}

impl Default for SpiralParams {
    fn default() -> Self {
        Self { n_per_class: 1000, num_classes: 3, noise_base: 0.05, noise_growth: 1.5 }
    }
}

/// K interleaved spiral arms in the unit disc.
///
/// Arm `k` at radius `r ∈ (0, 1]` sits at angle `2πk/K + 4πr`, perturbed by
/// Gaussian angular noise of std `noise_base + noise_growth·r`, so classes
/// overlap more towards the rim. Points are grouped by class.
pub fn make_spiral(params: &SpiralParams, seed: u64, split: Split) -> Result<Dataset2D> {
    let k = params.num_classes;
    if k < 2 {
        return Err(Error::Config(format!("spiral needs at least 2 classes, got {k}")));
    }
    if params.n_per_class == 0 {
        return Err(Error::Config("spiral needs at least one point per class".into()));
    }
    if !(params.noise_base >= 0.0 && params.noise_growth >= 0.0) {
        return Err(Error::Config("spiral noise must be non-negative".into()));
    }
    let mut rng = rng::stream(seed, "spiral");
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = params.n_per_class * k;
    let mut points = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for class in 0..k {
        let offset = std::f64::consts::TAU * class as f64 / k as f64;
        for _ in 0..params.n_per_class {
            let r = 1.0 - rng.random::<f64>();
            let noise = (params.noise_base + params.noise_growth * r) * std_normal.sample(&mut rng);
            let theta = offset + 4.0 * std::f64::consts::PI * r + noise;
            let i = labels.len();
            points[[i, 0]] = r * theta.cos();
            points[[i, 1]] = r * theta.sin();
            labels.push(class);
        }
    }
    Ok(Dataset2D { points, labels, num_classes: k, split })
}

/// Region for out-of-distribution or auxiliary samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OodGeometry {
    /// Annulus `inner ≤ |x|₂ ≤ outer`, uniform in area.
    Ring { inner: f64, outer: f64 },
    /// Square `|x|∞ ≤ half_width` minus `|x|∞ < exclusion`.
    Box { half_width: f64, exclusion: f64 },
}

impl OodGeometry {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OodGeometry::Ring { inner, outer } => {
                if !(inner >= 0.0 && inner < outer && outer.is_finite()) {
                    return Err(Error::Config(format!("degenerate ring: inner {inner}, outer {outer}")));
                }
            }
            OodGeometry::Box { half_width, exclusion } => {
                if !(exclusion >= 0.0 && exclusion < half_width && half_width.is_finite()) {
                    return Err(Error::Config(format!(
                        "degenerate box: half-width {half_width}, exclusion {exclusion}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            OodGeometry::Ring { inner, outer } => {
                let r = x.hypot(y);
                r >= inner && r <= outer
            }
            OodGeometry::Box { half_width, exclusion } => {
                let m = x.abs().max(y.abs());
                m <= half_width && m >= exclusion
            }
        }
    }
}

/// `n` uniform samples from `geometry`.
pub fn make_ood(geometry: &OodGeometry, n: usize, seed: u64) -> Result<Array2<f64>> {
    geometry.validate()?;
    let mut rng = rng::stream(seed, "ood");
    let mut out = Array2::zeros((n, 2));
    for i in 0..n {
        let (x, y) = match *geometry {
            OodGeometry::Ring { inner, outer } => {
                let r = rng.random_range(inner * inner..=outer * outer).sqrt();
                let t = rng.random_range(0.0..std::f64::consts::TAU);
                (r * t.cos(), r * t.sin())
            }
            OodGeometry::Box { half_width, exclusion } => loop {
                let x = rng.random_range(-half_width..=half_width);
                let y = rng.random_range(-half_width..=half_width);
                if x.abs().max(y.abs()) >= exclusion {
                    break (x, y);
                }
            },
        };
        out[[i, 0]] = x;
        out[[i, 1]] = y;
    }
    Ok(out)
}

/// Writes `x1,x2,label` rows; reals in shortest round-trip form.
pub fn save_csv(ds: &Dataset2D, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "x1,x2,label")?;
    for (row, label) in ds.points.rows().into_iter().zip(&ds.labels) {
        writeln!(w, "{},{},{}", row[0], row[1], label)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>, num_classes: usize, split: Split) -> Result<Dataset2D> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path)?;
    expect_header(&mut reader, &["x1", "x2", "label"])?;
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(Error::Parse { line, msg: format!("expected 3 fields, got {}", record.len()) });
        }
        coords.push(parse_real(&record[0], line)?);
        coords.push(parse_real(&record[1], line)?);
        let label: usize = record[2]
            .trim()
            .parse()
            .map_err(|e| Error::Parse { line, msg: format!("bad label {:?}: {e}", &record[2]) })?;
        if label >= num_classes {
            return Err(Error::Parse { line, msg: format!("label {label} out of range for {num_classes} classes") });
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let points = Array2::from_shape_vec((labels.len(), 2), coords).expect("two coordinates per row");
    Ok(Dataset2D { points, labels, num_classes, split })
}

/// Writes unlabelled `x1,x2` rows.
pub fn save_points_csv(points: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    if points.ncols() != 2 {
        return Err(Error::Shape(format!("expected 2 columns, got {}", points.ncols())));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "x1,x2")?;
    for row in points.rows() {
        writeln!(w, "{},{}", row[0], row[1])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_points_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path)?;
    expect_header(&mut reader, &["x1", "x2"])?;
    let mut coords = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(Error::Parse { line, msg: format!("expected 2 fields, got {}", record.len()) });
        }
        coords.push(parse_real(&record[0], line)?);
        coords.push(parse_real(&record[1], line)?);
    }
    if coords.is_empty() {
        return Err(Error::Empty("point set"));
    }
    Ok(Array2::from_shape_vec((coords.len() / 2, 2), coords).expect("two coordinates per row"))
}

fn expect_header<R: std::io::Read>(reader: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    if header.is_empty() {
        return Err(Error::Empty("csv file"));
    }
    if header.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(Error::Parse { line: 1, msg: format!("expected header {}, got {:?}", expected.join(","), header) });
    }
    Ok(())
}

fn parse_real(field: &str, line: u64) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|e| Error::Parse { line, msg: format!("bad number {field:?}: {e}") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, msg: format!("non-finite coordinate {field:?}") });
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn spiral_counts_and_determinism() {
        let p = SpiralParams { n_per_class: 100, num_classes: 3, ..Default::default() };
        let a = make_spiral(&p, 4, Split::Train).unwrap();
        assert_eq!(a.len(), 300);
        assert_eq!(a.class_counts(), vec![100, 100, 100]);
        assert_eq!(a, make_spiral(&p, 4, Split::Train).unwrap());
        assert_ne!(a.points, make_spiral(&p, 5, Split::Train).unwrap().points);
        assert!(a.points.rows().into_iter().all(|r| r[0].hypot(r[1]) <= 1.0 + 1e-12));
        assert!(make_spiral(&SpiralParams { num_classes: 1, ..p }, 0, Split::Train).is_err());
    }

    #[test]
    fn noiseless_spiral_is_one_nn_separable() {
        // arms meet only at the origin, so points right at the centre are skipped
        let p = SpiralParams { noise_base: 0.0, noise_growth: 0.0, ..Default::default() };
        let ds = make_spiral(&p, 1, Split::Train).unwrap();
        let n = ds.len();
        let mut checked = 0;
        let mut correct = 0;
        for i in 0..n {
            let (xi, yi) = (ds.points[[i, 0]], ds.points[[i, 1]]);
            if xi.hypot(yi) < 0.01 {
                continue;
            }
            let nearest = (0..n)
                .filter(|&j| j != i)
                .min_by(|&a, &b| {
                    let da = (ds.points[[a, 0]] - xi).hypot(ds.points[[a, 1]] - yi);
                    let db = (ds.points[[b, 0]] - xi).hypot(ds.points[[b, 1]] - yi);
                    da.total_cmp(&db)
                })
                .unwrap();
            checked += 1;
            correct += usize::from(ds.labels[nearest] == ds.labels[i]);
        }
        assert!(checked >= n - 60);
        assert_eq!(correct, checked);
    }

    #[test]
    fn ood_geometry() {
        let ring = make_ood(&OodGeometry::Ring { inner: 2.0, outer: 3.0 }, 500, 1).unwrap();
        assert!(ring.rows().into_iter().all(|r| (2.0..=3.0).contains(&r[0].hypot(r[1]))));
        let bx = OodGeometry::Box { half_width: 5.0, exclusion: 2.0 };
        let b = make_ood(&bx, 500, 1).unwrap();
        assert!(b.rows().into_iter().all(|r| r[0].abs().max(r[1].abs()) >= 2.0));
        assert!(b.iter().all(|v| v.abs() <= 5.0));
        assert_ne!(b, make_ood(&bx, 500, 2).unwrap());
        assert!(make_ood(&OodGeometry::Ring { inner: 3.0, outer: 3.0 }, 5, 1).is_err());
        assert!(make_ood(&OodGeometry::Box { half_width: 1.0, exclusion: 2.0 }, 5, 1).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = SpiralParams { n_per_class: 20, ..Default::default() };
        let ds = make_spiral(&p, 9, Split::Test).unwrap();
        let path = dir.path().join("d.csv");
        save_csv(&ds, &path).unwrap();
        let back = load_csv(&path, 3, Split::Test).unwrap();
        assert_eq!(back, ds);

        let empty = dir.path().join("empty.csv");
        fs::write(&empty, "").unwrap();
        assert!(matches!(load_csv(&empty, 3, Split::Test), Err(Error::Empty(_))));
        fs::write(&empty, "x1,x2,label\n").unwrap();
        assert!(matches!(load_csv(&empty, 3, Split::Test), Err(Error::Empty(_))));

        let labels = dir.path().join("labels.csv");
        fs::write(&labels, "x1,x2,label\n0.5,0.25,2\n").unwrap();
        assert_eq!(load_csv(&labels, 3, Split::Test).unwrap().labels, vec![2]);
        fs::write(&labels, "x1,x2,label\n0.5,0.25,2\n0.1,0.1,3\n").unwrap();
        match load_csv(&labels, 3, Split::Test) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        fs::write(&labels, "x1,x2,label\n0.5,abc,2\n").unwrap();
        assert!(matches!(load_csv(&labels, 3, Split::Test), Err(Error::Parse { line: 2, .. })));

        let pts = make_ood(&OodGeometry::Ring { inner: 2.0, outer: 3.0 }, 17, 3).unwrap();
        let pp = dir.path().join("p.csv");
        save_points_csv(&pts, &pp).unwrap();
        assert_eq!(load_points_csv(&pp).unwrap(), pts);
    }
}
