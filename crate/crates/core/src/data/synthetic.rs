use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, ResponseMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// One predictor uniform on [−3, 3]; y = sin(2.5x)·x + N(0, noise²).
    Regression1d,
    /// Two standard-normal predictors; class 1 inside the disc holding 40%
    /// of the predictor mass, each label flipped with probability noise.
    NonlinearBinary,
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticKind::Regression1d => "regression1d",
            SyntheticKind::NonlinearBinary => "nonlinear_binary",
        })
    }
}

impl FromStr for SyntheticKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "regression1d" => Ok(SyntheticKind::Regression1d),
            "nonlinear_binary" => Ok(SyntheticKind::NonlinearBinary),
            other => Err(DataError::UnknownKind(other.to_owned())),
        }
    }
}

pub fn regression1d_target(x: f64) -> f64 {
    (2.5 * x).sin() * x
}

const DISC_MASS: f64 = 0.4;

/// Squared radius of the class-1 disc: P(χ²₂ ≤ r²) = DISC_MASS.
fn disc_radius_sq() -> f64 {
    -2.0 * (1.0 - DISC_MASS).ln()
}

/// Synthetic cases; a pure function of its arguments.
pub fn generate_synthetic(
    kind: SyntheticKind,
    n: usize,
    seed: u64,
    noise_scale: f64,
) -> Result<Dataset, DataError> {
    if n < 20 {
        return Err(DataError::SyntheticTooSmall(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        SyntheticKind::Regression1d => {
            let mut x = DMatrix::zeros(n, 1);
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let xi: f64 = rng.random_range(-3.0..3.0);
                let eps: f64 = rng.sample(StandardNormal);
                x[(i, 0)] = xi;
                y.push(regression1d_target(xi) + noise_scale * eps);
            }
            Dataset::new(x, y, vec!["x".into()], ResponseMode::Regression)
        }
        SyntheticKind::NonlinearBinary => {
            let flip = noise_scale.clamp(0.0, 0.5);
            let r2 = disc_radius_sq();
            let mut x = DMatrix::zeros(n, 2);
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                x[(i, 0)] = a;
                x[(i, 1)] = b;
                let inside = a * a + b * b <= r2;
                let flipped = rng.random::<f64>() < flip;
                y.push(if inside != flipped { 1.0 } else { 0.0 });
            }
            Dataset::new(
                x,
                y,
                vec!["x1".into(), "x2".into()],
                ResponseMode::Classification,
            )
        }
    }
}
