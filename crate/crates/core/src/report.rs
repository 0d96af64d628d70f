//! Plot-ready series and small output helpers.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins over [lo, hi]; the last bin is closed on the right and
/// values outside the range are clamped into the end bins.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<HistogramBin> {
    let bins = bins.max(1);
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|k| HistogramBin {
            lo: lo + width * k as f64,
            hi: if k + 1 == bins { hi } else { lo + width * (k + 1) as f64 },
            count: 0,
        })
        .collect();
    for &v in values.iter().filter(|v| v.is_finite()) {
        let k = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        out[k].count += 1;
    }
    out
}

/// Linear-interpolation quantile of the sorted sample (R type 7).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let (i, frac) = (h.floor() as usize, h - h.floor());
    match v.get(i + 1) {
        Some(next) => v[i] + frac * (next - v[i]),
        None => v[i],
    }
}

pub fn iqr(values: &[f64]) -> f64 {
    quantile(values, 0.75) - quantile(values, 0.25)
}

/// Accuracy summary for numeric responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub cases: usize,
    pub mse: f64,
}

impl RegressionReport {
    pub fn new(fitted: &[f64], actual: &[f64]) -> Self {
        let n = fitted.len().min(actual.len());
        let sse: f64 = fitted.iter().zip(actual).map(|(f, a)| (f - a).powi(2)).sum();
        RegressionReport {
            cases: n,
            mse: if n == 0 { f64::NAN } else { sse / n as f64 },
        }
    }
}

pub fn write_histogram_csv<W: Write>(bins: &[HistogramBin], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lo", "hi", "count"])?;
    for b in bins {
        w.write_record([b.lo.to_string(), b.hi.to_string(), b.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes atomically: a temporary file in the target directory is renamed
/// over `path` once fully written.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Renders any CSV-producing writer into bytes and writes them atomically.
pub fn write_csv_atomic<F, E>(path: &Path, render: F) -> crate::Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), E>,
    crate::Error: From<E>,
{
    let mut buf = Vec::new();
    render(&mut buf)?;
    write_atomic(path, &buf).map_err(|e| crate::Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_every_value() {
        let h = histogram(&[0.0, 0.05, 0.5, 0.99, 1.0, 1.2, -0.1], 10, 0.0, 1.0);
        assert_eq!(h.len(), 10);
        assert_eq!(h[0].count, 3);
        assert_eq!(h[5].count, 1);
        assert_eq!(h[9].count, 3);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 7);
        assert_eq!(h[9].hi, 1.0);
    }

    #[test]
    fn quantiles_by_hand() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(iqr(&v), 1.5);
        assert_eq!(iqr(&[7.0; 5]), 0.0);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn mse_by_hand() {
        let r = RegressionReport::new(&[1.0, 2.0, 4.0], &[1.0, 3.0, 2.0]);
        assert_eq!(r.cases, 3);
        assert!((r.mse - 5.0 / 3.0).abs() < 1e-15);
        assert!(RegressionReport::new(&[], &[]).mse.is_nan());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
