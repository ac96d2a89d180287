//! Kernel functions for the SVM dual and its recourse evaluation.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A positive-definite kernel over feature vectors.
///
/// The polynomial kernel uses the inhomogeneous form `(u.v + 1)^degree`, so
/// `poly:1` equals the linear kernel shifted by one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Linear,
    Polynomial { degree: u32 },
    Rbf { gamma: f64 },
}

impl KernelSpec {
    /// Checks the kernel parameters: degree at least 1, gamma positive and
    /// finite.
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree } => {
                if degree == 0 {
                    Err(Error::InvalidInput(
                        "polynomial kernel degree must be at least 1".into(),
                    ))
                } else {
                    Ok(())
                }
            }
            KernelSpec::Rbf { gamma } => {
                if gamma.is_finite() && gamma > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidInput(format!(
                        "rbf kernel gamma must be positive and finite, got {gamma}"
                    )))
                }
            }
        }
    }

    /// Evaluates `k(u, v)`.
    ///
    /// # Panics
    ///
    /// Panics when `u` and `v` have different lengths; callers going through
    /// [`gram`] or the model types get that checked up front.
    pub fn eval(&self, u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> f64 {
        assert_eq!(u.len(), v.len(), "kernel arguments must share a dimension");
        match *self {
            KernelSpec::Linear => u.dot(&v),
            KernelSpec::Polynomial { degree } => (u.dot(&v) + 1.0).powi(degree as i32),
            KernelSpec::Rbf { gamma } => {
                let mut sq = 0.0;
                for (a, b) in u.iter().zip(v.iter()) {
                    let d = a - b;
                    sq += d * d;
                }
                (-gamma * sq).exp()
            }
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Polynomial { degree } => write!(f, "poly:{degree}"),
            KernelSpec::Rbf { gamma } => write!(f, "rbf:{gamma}"),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    /// Parses the command-line form: `linear`, `poly:D`, or `rbf:G`.
    fn from_str(s: &str) -> Result<Self> {
        let spec = match s.split_once(':') {
            None if s == "linear" => KernelSpec::Linear,
            Some(("poly", d)) => {
                let degree = d.parse::<u32>().map_err(|_| {
                    Error::InvalidInput(format!("bad polynomial degree {d:?} in kernel spec"))
                })?;
                KernelSpec::Polynomial { degree }
            }
            Some(("rbf", g)) => {
                let gamma = g.parse::<f64>().map_err(|_| {
                    Error::InvalidInput(format!("bad rbf gamma {g:?} in kernel spec"))
                })?;
                KernelSpec::Rbf { gamma }
            }
            _ => {
                return Err(Error::InvalidInput(format!(
                    "unknown kernel spec {s:?}; expected linear, poly:D, or rbf:G"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Cross-Gram matrix `G[i, j] = k(xs_i, ys_j)` between two row sets.
///
/// With `xs == ys` this is the (symmetric, PSD) Gram matrix of the set.
pub fn gram(
    kernel: &KernelSpec,
    xs: ArrayView2<'_, f64>,
    ys: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    if xs.ncols() != ys.ncols() {
        return Err(Error::InvalidInput(format!(
            "gram matrix needs matching feature dimensions, got {} and {}",
            xs.ncols(),
            ys.ncols()
        )));
    }
    kernel.validate()?;
    let mut out = Array2::zeros((xs.nrows(), ys.nrows()));
    for (i, xi) in xs.rows().into_iter().enumerate() {
        for (j, yj) in ys.rows().into_iter().enumerate() {
            out[(i, j)] = kernel.eval(xi, yj);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};

    #[test]
    fn known_values_for_all_families() {
        let u = array![1.0, 2.0];
        let v = array![3.0, 4.0];
        assert_abs_diff_eq!(KernelSpec::Linear.eval(u.view(), v.view()), 11.0);
        // (11 + 1)^2
        assert_abs_diff_eq!(
            KernelSpec::Polynomial { degree: 2 }.eval(u.view(), v.view()),
            144.0
        );
        // ||u - v||^2 = 8, gamma = 0.5 -> exp(-4)
        assert_abs_diff_eq!(
            KernelSpec::Rbf { gamma: 0.5 }.eval(u.view(), v.view()),
            (-4.0f64).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn degree_one_polynomial_is_shifted_linear() {
        let u = array![0.3, -1.2, 2.0];
        let v = array![1.5, 0.4, -0.7];
        let lin = KernelSpec::Linear.eval(u.view(), v.view());
        let poly = KernelSpec::Polynomial { degree: 1 }.eval(u.view(), v.view());
        assert_abs_diff_eq!(poly, lin + 1.0, epsilon = 1e-15);
    }

    #[test]
    fn evaluation_is_symmetric_in_its_arguments() {
        let points = [
            array![0.0, 1.0, -2.0],
            array![3.5, -0.25, 0.125],
            array![-1.0, -1.0, -1.0],
        ];
        for kernel in [
            KernelSpec::Linear,
            KernelSpec::Polynomial { degree: 3 },
            KernelSpec::Rbf { gamma: 0.7 },
        ] {
            for a in &points {
                for b in &points {
                    assert_eq!(
                        kernel.eval(a.view(), b.view()),
                        kernel.eval(b.view(), a.view()),
                        "{kernel} not symmetric"
                    );
                }
            }
        }
    }

    #[test]
    fn rbf_is_one_on_the_diagonal_and_bounded() {
        let kernel = KernelSpec::Rbf { gamma: 2.0 };
        let u = array![0.5, -3.0];
        assert_abs_diff_eq!(kernel.eval(u.view(), u.view()), 1.0);
        let v = array![10.0, 10.0];
        let k = kernel.eval(u.view(), v.view());
        assert!(k > 0.0 && k < 1.0);
    }

    #[test]
    fn gram_matches_pairwise_eval_and_is_symmetric() {
        let xs: Array2<f64> = array![[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]];
        let kernel = KernelSpec::Polynomial { degree: 2 };
        let g = gram(&kernel, xs.view(), xs.view()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g[(i, j)], kernel.eval(xs.row(i), xs.row(j)));
                assert_eq!(g[(i, j)], g[(j, i)]);
            }
        }
    }

    #[test]
    fn parse_round_trips_and_rejects_garbage() {
        for s in ["linear", "poly:3", "rbf:0.5"] {
            let k: KernelSpec = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert!("poly:0".parse::<KernelSpec>().is_err());
        assert!("rbf:-1".parse::<KernelSpec>().is_err());
        assert!("rbf:nan".parse::<KernelSpec>().is_err());
        assert!("sigmoid".parse::<KernelSpec>().is_err());
        assert!("poly:two".parse::<KernelSpec>().is_err());
    }

    #[test]
    fn mismatched_dimensions_error_in_gram() {
        let xs: Array2<f64> = array![[1.0, 0.0]];
        let ys: Array2<f64> = array![[1.0, 0.0, 2.0]];
        assert!(gram(&KernelSpec::Linear, xs.view(), ys.view()).is_err());
    }
}
