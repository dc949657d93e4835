//! Attention-map tooling: head combination, alignment metrics and export.
//!
//! The diagonality score is a constructed proxy for alignment quality, not
//! a published measure.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::tensor::Tensor;

/// Combined attention of one extractor layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub layer: usize,
    /// `Tq × Tk` root-mean-square over heads.
    pub combined: Tensor<f64>,
    /// Raw `H × Tq × Tk` weights, when kept.
    pub heads: Option<Tensor<f64>>,
}

impl AttentionMap {
    pub fn from_heads(layer: usize, heads: Tensor<f64>) -> Result<Self> {
        Ok(Self {
            layer,
            combined: combine_heads_rms(&heads)?,
            heads: Some(heads),
        })
    }
}

fn dims3(w: &Tensor<f64>) -> Result<(usize, usize, usize)> {
    match w.shape() {
        &[h, t, s] => Ok((h, t, s)),
        other => Err(Error::shape(format!("expected H × T × S weights, got {other:?}"))),
    }
}

/// `out[i][j] = sqrt(mean_h w[h][i][j]²)`.
pub fn combine_heads_rms(weights: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (h, t, s) = dims3(weights)?;
    let d = weights.data();
    let plane = t * s;
    let out = (0..plane)
        .map(|k| ((0..h).map(|hh| d[hh * plane + k].powi(2)).sum::<f64>() / h as f64).sqrt())
        .collect();
    Tensor::new([t, s], out)
}

/// Scales each row to sum 1. All-zero rows stay zero.
pub fn renormalize_rows(map: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (t, s) = (map.rows()?, map.cols()?);
    let mut out = map.clone();
    let data = out.data_mut();
    for i in 0..t {
        let row = &mut data[i * s..(i + 1) * s];
        if row.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::shape(format!("row {i} has a negative or non-finite weight")));
        }
        let z: f64 = row.iter().sum();
        if z > 0.0 {
            row.iter_mut().for_each(|v| *v /= z);
        }
    }
    Ok(out)
}

fn position(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

/// Attention-weighted mean distance from the normalized diagonal, after row
/// renormalization: `(1/T) Σ_i Σ_j w̃[i][j] · |i/(T−1) − j/(S−1)|`.
/// Zero means every row's mass sits on the diagonal.
pub fn diagonality(map: &Tensor<f64>) -> Result<f64> {
    let w = renormalize_rows(map)?;
    let (t, s) = (w.rows()?, w.cols()?);
    let mut total = 0.0;
    for i in 0..t {
        let pi = position(i, t);
        total += w
            .row(i)
            .iter()
            .enumerate()
            .map(|(j, &v)| v * (pi - position(j, s)).abs())
            .sum::<f64>();
    }
    Ok(total / t as f64)
}

/// Per-row argmax `(i, j*)`; ties go to the smaller `j`.
pub fn argmax_path(map: &Tensor<f64>) -> Result<Vec<(usize, usize)>> {
    let t = map.rows()?;
    Ok((0..t)
        .map(|i| {
            let row = map.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            (i, best)
        })
        .collect())
}

/// A stretch of consecutive output frames copied from consecutive target
/// frames: one extracted voice fragment. Bounds are inclusive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FragmentRun {
    pub query_start: usize,
    pub query_end: usize,
    pub target_start: usize,
    pub target_end: usize,
    /// Mean map value along the run.
    pub mean_weight: f64,
}

impl FragmentRun {
    pub fn len(&self) -> usize {
        self.query_end - self.query_start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl fmt::Display for FragmentRun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{:.6}",
            self.query_start, self.query_end, self.target_start, self.target_end, self.mean_weight
        )
    }
}

/// Splits the argmax path into runs where `j*` advances by exactly one per row.
pub fn fragment_runs(map: &Tensor<f64>) -> Result<Vec<FragmentRun>> {
    let path = argmax_path(map)?;
    let mut runs: Vec<FragmentRun> = Vec::new();
    let mut sum = 0.0;
    for &(i, j) in &path {
        let v = map.at(i, j);
        match runs.last_mut() {
            Some(r) if r.target_end + 1 == j => {
                r.query_end = i;
                r.target_end = j;
                sum += v;
                r.mean_weight = sum / r.len() as f64;
            }
            _ => {
                sum = v;
                runs.push(FragmentRun {
                    query_start: i,
                    query_end: i,
                    target_start: j,
                    target_end: j,
                    mean_weight: v,
                });
            }
        }
    }
    Ok(runs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Pgm,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "pgm" => Ok(Self::Pgm),
            other => Err(Error::Usage(format!("unknown map format {other:?} (csv or pgm)"))),
        }
    }
}

/// One line per query frame, comma-separated, LF endings, shortest
/// round-trip decimal representation.
pub fn map_to_csv(map: &Tensor<f64>) -> Result<Vec<u8>> {
    map.cols()?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for i in 0..map.rows()? {
        w.write_record(map.row(i).iter().map(|v| v.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Binary 8-bit greyscale, one image row per query frame, scaled so that
/// the largest value maps to 255.
pub fn map_to_pgm(map: &Tensor<f64>) -> Result<Vec<u8>> {
    let (t, s) = (map.rows()?, map.cols()?);
    let max = map.data().iter().cloned().fold(0.0, f64::max);
    let mut out = Vec::with_capacity(t * s + 32);
    write!(out, "P5\n{s} {t}\n255\n")?;
    out.extend(map.data().iter().map(|&v| {
        if max > 0.0 {
            (v.max(0.0) / max * 255.0).round() as u8
        } else {
            0
        }
    }));
    Ok(out)
}

pub fn export_map(map: &Tensor<f64>, path: &Path, format: ExportFormat) -> Result<()> {
    let bytes = match format {
        ExportFormat::Csv => map_to_csv(map)?,
        ExportFormat::Pgm => map_to_pgm(map)?,
    };
    fsutil::atomic_write(path, &bytes)
}

pub fn parse_csv_map(bytes: &[u8]) -> Result<Tensor<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(bytes);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format("attention CSV", format!("not a number: {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::format("attention CSV", "no rows"));
    }
    Tensor::from_rows(&rows)
}

pub fn read_csv_map(path: &Path) -> Result<Tensor<f64>> {
    let bytes = fsutil::read(path)?;
    parse_csv_map(&bytes).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(n: usize) -> Tensor<f64> {
        let mut m = Tensor::zeros([n, n]);
        for i in 0..n {
            m.data_mut()[i * n + i] = 1.0;
        }
        m
    }

    #[test]
    fn rms_of_two_heads() {
        let w = Tensor::new([2, 1, 1], vec![0.3, 0.4]).unwrap();
        let c = combine_heads_rms(&w).unwrap();
        assert!((c.data()[0] - 0.353_553_390_593_273_8).abs() < 1e-12);
    }

    #[test]
    fn single_head_is_identity() {
        let w = Tensor::new([1, 2, 2], vec![0.1, 0.9, 0.5, 0.5]).unwrap();
        assert_eq!(combine_heads_rms(&w).unwrap().data(), w.data());
    }

    #[test]
    fn diagonality_examples() {
        assert_eq!(diagonality(&identity(5)).unwrap(), 0.0);
        let uniform = Tensor::full([3, 3], 1.0 / 3.0);
        assert!((diagonality(&uniform).unwrap() - 4.0 / 9.0).abs() < 1e-12);
        let anti = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!((diagonality(&anti).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_axes_use_position_zero() {
        let col = Tensor::full([3, 1], 1.0);
        // j is always at position 0, rows at 0, 0.5, 1.
        assert!((diagonality(&col).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_go_left() {
        let m = Tensor::full([3, 4], 0.25);
        let path = argmax_path(&m).unwrap();
        assert!(path.iter().all(|&(_, j)| j == 0));
        assert_eq!(argmax_path(&identity(3)).unwrap(), vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn block_runs() {
        // Rows 0-1 copy target 4-5, rows 2-4 copy 0-2, row 5 copies 7.
        let targets = [4, 5, 0, 1, 2, 7];
        let mut m = Tensor::zeros([6, 8]);
        for (i, &j) in targets.iter().enumerate() {
            m.data_mut()[i * 8 + j] = 0.5;
        }
        let runs = fragment_runs(&m).unwrap();
        assert_eq!(runs.len(), 3);
        assert_eq!((runs[0].query_start, runs[0].query_end, runs[0].target_start), (0, 1, 4));
        assert_eq!((runs[1].query_start, runs[1].query_end, runs[1].target_end), (2, 4, 2));
        assert_eq!(runs[2].len(), 1);
        assert_eq!(runs[1].to_string(), "2\t4\t0\t2\t0.500000");
    }

    #[test]
    fn csv_round_trip() {
        let m = Tensor::from_rows(&[[0.1, 1.0 / 3.0], [2e-17, 0.75]]).unwrap();
        let bytes = map_to_csv(&m).unwrap();
        assert!(!bytes.contains(&b'\r'));
        assert_eq!(parse_csv_map(&bytes).unwrap(), m);
    }

    #[test]
    fn pgm_layout() {
        let m = Tensor::from_rows(&[[0.0, 0.2, 0.4], [0.1, 0.8, 0.0]]).unwrap();
        let bytes = map_to_pgm(&m).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let pixels = &bytes[header.len()..];
        assert_eq!(pixels.len(), 6);
        assert_eq!(pixels[4], 255);
        assert_eq!(pixels[2], 128);
    }

    #[test]
    fn format_names() {
        assert_eq!("CSV".parse::<ExportFormat>().unwrap(), ExportFormat::Csv);
        assert!("png".parse::<ExportFormat>().is_err());
    }
}
