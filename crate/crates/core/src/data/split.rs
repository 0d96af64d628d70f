use std::fmt;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, ResponseMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        })
    }
}

/// Disjoint training/validation/test index sets covering all cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub proportions: [f64; 3],
    pub stratified: bool,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitAssignment {
    pub fn n_cases(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn indices(&self, split: SplitName) -> &[usize] {
        match split {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    /// Per-case split label, indexed by case.
    pub fn labels(&self) -> Vec<SplitName> {
        let mut out = vec![SplitName::Train; self.n_cases()];
        for &i in &self.validation {
            out[i] = SplitName::Validation;
        }
        for &i in &self.test {
            out[i] = SplitName::Test;
        }
        out
    }
}

fn check_proportions(p: [f64; 3]) -> Result<(), DataError> {
    let ok = p.iter().all(|v| v.is_finite() && *v > 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9;
    if ok {
        Ok(())
    } else {
        Err(DataError::InvalidProportions(p))
    }
}

/// Split sizes for `n` items: the first two by rounding, the last takes the rest.
fn sizes(n: usize, p: [f64; 3]) -> [usize; 3] {
    let a = (((n as f64) * p[0]).round() as usize).min(n);
    let b = (((n as f64) * p[1]).round() as usize).min(n - a);
    [a, b, n - a - b]
}

/// Random three-way split, deterministic in `seed`. With `stratified`, each
/// class is split separately so class proportions hold within one case.
pub fn split_three_way(
    ds: &Dataset,
    seed: u64,
    proportions: [f64; 3],
    stratified: bool,
) -> Result<SplitAssignment, DataError> {
    check_proportions(proportions)?;
    let n = ds.n_cases();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut parts: [Vec<usize>; 3] = Default::default();
    if stratified && ds.mode() == ResponseMode::Classification {
        for class in [0.0, 1.0] {
            let mut idx: Vec<usize> = (0..n).filter(|&i| ds.y()[i] == class).collect();
            idx.shuffle(&mut rng);
            let sz = sizes(idx.len(), proportions);
            let mut rest = idx.as_slice();
            for (part, &k) in parts.iter_mut().zip(&sz) {
                let (head, tail) = rest.split_at(k);
                part.extend_from_slice(head);
                rest = tail;
            }
        }
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let sz = sizes(n, proportions);
        let mut rest = idx.as_slice();
        for (part, &k) in parts.iter_mut().zip(&sz) {
            let (head, tail) = rest.split_at(k);
            part.extend_from_slice(head);
            rest = tail;
        }
    }
    for part in parts.iter_mut() {
        part.sort_unstable();
    }

    let names = [SplitName::Train, SplitName::Validation, SplitName::Test];
    for (part, &split) in parts.iter().zip(&names) {
        if part.len() < 2 {
            return Err(DataError::SplitTooSmall {
                split,
                count: part.len(),
            });
        }
        if ds.mode() == ResponseMode::Classification {
            let pos = part.iter().filter(|&&i| ds.y()[i] == 1.0).count();
            for (class, count) in [(0u8, part.len() - pos), (1u8, pos)] {
                if count < 2 {
                    return Err(DataError::ClassStarved {
                        split,
                        class,
                        count,
                    });
                }
            }
        }
    }

    let [train, validation, test] = parts;
    Ok(SplitAssignment {
        seed,
        proportions,
        stratified,
        train,
        validation,
        test,
    })
}

/// Writes `index,split` rows in case order.
pub fn write_split_csv<W: Write>(assignment: &SplitAssignment, out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "split"])?;
    for (i, label) in assignment.labels().iter().enumerate() {
        w.write_record([i.to_string(), label.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a file written by [`write_split_csv`] and returns the case
/// indices assigned to `which`, in case order.
pub fn read_split_csv<R: Read>(input: R, which: SplitName) -> Result<Vec<usize>, DataError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = || DataError::Shape(format!("malformed split row {:?}", rec.iter().collect::<Vec<_>>()));
        let index: usize = rec.get(0).and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
        let label = rec.get(1).map(str::trim).ok_or_else(bad)?;
        if ![SplitName::Train, SplitName::Validation, SplitName::Test]
            .iter()
            .any(|s| s.to_string() == label)
        {
            return Err(bad());
        }
        if label == which.to_string() {
            out.push(index);
        }
    }
    Ok(out)
}
