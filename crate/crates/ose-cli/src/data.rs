//! CSV dataset files and deterministic synthetic generators.
//!
//! The on-disk format is plain comma-separated values: one row per example,
//! feature columns first, the {0, 1} label last. A header line is optional
//! and detected by failing to parse as numbers. Floats are written with
//! Rust's shortest round-trip formatting, so generate → load is lossless
//! and same-seed generation is byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ose_core::{DataPoint, Dataset, Error};

pub fn load_dataset(path: &Path) -> anyhow::Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read dataset {}", path.display()))?;
    let data = parse_csv(&text)
        .with_context(|| format!("dataset {} is malformed", path.display()))?;
    Ok(data)
}

/// Parse CSV text into a dataset. The label column is last and must be 0 or
/// 1; every row must have the same width; a non-numeric first line is
/// treated as a header and skipped.
pub fn parse_csv(text: &str) -> ose_core::Result<Dataset> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .collect();
    let mut start = 0;
    if let Some((_, first)) = lines.first() {
        let all_numeric = first.split(',').all(|cell| cell.trim().parse::<f64>().is_ok());
        if !all_numeric {
            start = 1;
        }
    }
    let mut points = Vec::with_capacity(lines.len().saturating_sub(start));
    for &(line_no, line) in &lines[start..] {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() < 2 {
            return Err(Error::Format(format!(
                "line {}: a row needs at least one feature and a label",
                line_no + 1
            )));
        }
        let (label_cell, feature_cells) = cells.split_last().expect("length checked");
        let mut x = Vec::with_capacity(feature_cells.len());
        for cell in feature_cells {
            let v: f64 = cell.parse().map_err(|_| {
                Error::Format(format!("line {}: `{cell}` is not a number", line_no + 1))
            })?;
            x.push(v);
        }
        let label: f64 = label_cell.parse().map_err(|_| {
            Error::Format(format!("line {}: label `{label_cell}` is not a number", line_no + 1))
        })?;
        let y = if label == 0.0 {
            0
        } else if label == 1.0 {
            1
        } else {
            return Err(Error::Format(format!(
                "line {}: label {label} is outside {{0, 1}}",
                line_no + 1
            )));
        };
        points.push(DataPoint { x, y });
    }
    Dataset::new(points)
}

/// Render a dataset as CSV with an `x0,…,x{k},y` header.
pub fn render_csv(dataset: &Dataset) -> String {
    let width = dataset.points()[0].x.len();
    let mut text = String::new();
    for i in 0..width {
        let _ = write!(text, "x{i},");
    }
    text.push_str("y\n");
    for point in dataset.points() {
        for v in &point.x {
            let _ = write!(text, "{v},");
        }
        let _ = writeln!(text, "{}", point.y);
    }
    text
}

pub fn write_csv(dataset: &Dataset, path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("cannot create {}", dir.display()))?;
        }
    }
    std::fs::write(path, render_csv(dataset))
        .with_context(|| format!("cannot write dataset {}", path.display()))?;
    Ok(())
}

/// Synthetic dataset families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DataKind {
    /// Two Gaussian clusters centered at (+1, …) and (−1, …).
    Blobs,
    /// The 2-D sign-parity pattern on the first two features, the rest noise.
    Xor,
    /// Uniform points labeled by a random hyperplane, labels flipped with
    /// probability `noise`.
    Linear,
}

/// Generate `n` rows of `p` features. `noise` is the cluster/corner jitter
/// scale for `blobs` and `xor`, and the label-flip probability for
/// `linear`. Same arguments, same dataset, always.
pub fn gen_data(kind: DataKind, n: u64, p: u64, noise: f64, seed: u64) -> ose_core::Result<Dataset> {
    if n == 0 || p == 0 {
        return Err(Error::Precondition("n and p must both be at least 1".into()));
    }
    if !noise.is_finite() || noise < 0.0 {
        return Err(Error::Precondition(format!(
            "noise must be a finite non-negative number, got {noise}"
        )));
    }
    if kind == DataKind::Xor && p < 2 {
        return Err(Error::Precondition(
            "the xor pattern needs at least two feature dimensions".into(),
        ));
    }
    if kind == DataKind::Linear && noise > 1.0 {
        return Err(Error::Precondition(format!(
            "for linear data, noise is a flip probability and must be at most 1, got {noise}"
        )));
    }
    let p = usize::try_from(p)
        .map_err(|_| Error::SizeLimit(format!("{p} features do not fit in memory")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = move |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let mut points = Vec::with_capacity(n.min(1 << 20) as usize);
    match kind {
        DataKind::Blobs => {
            for _ in 0..n {
                let y = rng.random_range(0..2u8);
                let center = if y == 1 { 1.0 } else { -1.0 };
                let x = (0..p).map(|_| center + noise * normal(&mut rng)).collect();
                points.push(DataPoint { x, y });
            }
        }
        DataKind::Xor => {
            for _ in 0..n {
                let s0 = if rng.random_range(0..2u8) == 1 { 1.0 } else { -1.0 };
                let s1 = if rng.random_range(0..2u8) == 1 { 1.0 } else { -1.0 };
                let y = u8::from(s0 != s1);
                let mut x = Vec::with_capacity(p);
                x.push(s0 + noise * normal(&mut rng));
                x.push(s1 + noise * normal(&mut rng));
                for _ in 2..p {
                    x.push(noise * normal(&mut rng));
                }
                points.push(DataPoint { x, y });
            }
        }
        DataKind::Linear => {
            let w: Vec<f64> = (0..p).map(|_| normal(&mut rng)).collect();
            for _ in 0..n {
                let x: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
                let margin: f64 = w.iter().zip(&x).map(|(wi, xi)| wi * xi).sum();
                let mut y = u8::from(margin >= 0.0);
                if rng.random_range(0.0..1.0) < noise {
                    y ^= 1;
                }
                points.push(DataPoint { x, y });
            }
        }
    }
    Dataset::new(points)
}
