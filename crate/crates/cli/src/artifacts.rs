//! Artifact writers. Floats use the shortest round-trip form so that
//! reruns are byte-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::failure::{Failure, Tag};

pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(path: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(path)
            .with_context(|| format!("cannot create output directory {}", path.display()))
            .runtime()?;
        Ok(Self(path.to_path_buf()))
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    /// Opens `name` and hands a buffered writer to `body`.
    pub fn write(
        &self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> anyhow::Result<()>,
    ) -> Result<(), Failure> {
        let path = self.file(name);
        let go = || -> anyhow::Result<()> {
            let mut w = BufWriter::new(File::create(&path)?);
            body(&mut w)?;
            w.flush()?;
            Ok(())
        };
        go().with_context(|| format!("cannot write {}", path.display())).runtime()
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    pub fn matrix(&self, name: &str, m: &DMatrix<f64>) -> Result<(), Failure> {
        self.write(name, |w| write_matrix(w, m))
    }
}

/// Header `asset_1,…,asset_N`, then one row per matrix row.
pub fn write_matrix<W: Write>(w: W, m: &DMatrix<f64>) -> anyhow::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record((1..=m.ncols()).map(|j| format!("asset_{j}")))?;
    for i in 0..m.nrows() {
        wtr.write_record(m.row(i).iter().map(|v| format!("{v:?}")))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix`].
#[cfg(test)]
pub fn read_matrix<R: std::io::Read>(r: R) -> anyhow::Result<DMatrix<f64>> {
    let mut rdr = csv::Reader::from_reader(r);
    let n = rdr.headers()?.len();
    let mut vals = Vec::new();
    for rec in rdr.records() {
        for f in rec?.iter() {
            vals.push(f.parse::<f64>()?);
        }
    }
    anyhow::ensure!(vals.len() % n == 0, "ragged matrix");
    Ok(DMatrix::from_row_slice(vals.len() / n, n, &vals))
}

/// Row-major nested vectors, for JSON.
pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Equal-width histogram over `[min, max]`; the top edge is inclusive.
pub fn histogram(xs: &[f64], bins: usize) -> Vec<Bin> {
    let finite: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for x in finite {
        let k = (((x - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| Bin { lower: lo + k as f64 * width, upper: lo + (k + 1) as f64 * width, count })
        .collect()
}
