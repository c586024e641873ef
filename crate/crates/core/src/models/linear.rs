use serde::{Deserialize, Serialize};

use super::{ModelError, Scalar, TrainingSet};

/// Damping added to the diagonal of the standardized normal equations.
pub const RIDGE_LAMBDA: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LinearModel<T: Scalar> {
    pub weights: Vec<T>,
    pub intercept: T,
    pub feature_dim: usize,
}

impl<T: Scalar> LinearModel<T> {
    pub fn new(weights: Vec<T>, intercept: T) -> Self {
        Self {
            feature_dim: weights.len(),
            weights,
            intercept,
        }
    }

    /// Columns are centered and scaled to unit variance before solving
    /// `(ZᵀZ + λI)w = Zᵀ(y − ȳ)`, then mapped back to the raw feature scale.
    /// Constant columns receive weight 0.
    pub fn fit(data: &TrainingSet<T>) -> Result<Self, ModelError> {
        data.validate()?;
        let d = data.feature_dim();
        let n = data.len();
        if n < d + 1 {
            return Err(ModelError::InsufficientData { needed: d + 1, have: n });
        }
        let n_t = T::from_usize(n).unwrap();
        let (means, scales) = standardization(&data.features, d);
        let y_mean = data.labels.iter().fold(T::zero(), |a, y| a + *y) / n_t;
        let lambda = T::from_f64_lossy(RIDGE_LAMBDA);

        let z = |row: &[T], j: usize| {
            if scales[j] > T::zero() {
                (row[j] - means[j]) / scales[j]
            } else {
                T::zero()
            }
        };
        let mut a = vec![vec![T::zero(); d + 1]; d];
        for (row, y) in data.features.iter().zip(&data.labels) {
            let zr: Vec<T> = (0..d).map(|j| z(row, j)).collect();
            let dy = *y - y_mean;
            for i in 0..d {
                for k in i..d {
                    a[i][k] = a[i][k] + zr[i] * zr[k];
                }
                a[i][d] = a[i][d] + zr[i] * dy;
            }
        }
        for i in 0..d {
            for k in 0..i {
                a[i][k] = a[k][i];
            }
            a[i][i] = a[i][i] + lambda;
        }
        let w = solve(a, lambda)?;

        let weights: Vec<T> = (0..d)
            .map(|j| if scales[j] > T::zero() { w[j] / scales[j] } else { T::zero() })
            .collect();
        let intercept = (0..d).fold(y_mean, |acc, j| acc - weights[j] * means[j]);
        if !intercept.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(ModelError::DegenerateDesign);
        }
        Ok(Self {
            weights,
            intercept,
            feature_dim: d,
        })
    }

    pub fn predict(&self, x: &[T]) -> Result<T, ModelError> {
        if x.len() != self.feature_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        Ok(self.weights.iter().zip(x).fold(self.intercept, |acc, (w, v)| acc + *w * *v))
    }

    /// The quantity minimized by [`LinearModel::fit`]: squared residuals plus
    /// λ times the squared weights expressed on the standardized scale.
    pub fn damped_objective(&self, data: &TrainingSet<T>) -> Result<T, ModelError> {
        let (_, scales) = standardization(&data.features, self.feature_dim);
        let mut total = T::zero();
        for (x, y) in data.features.iter().zip(&data.labels) {
            let r = self.predict(x)? - *y;
            total = total + r * r;
        }
        let lambda = T::from_f64_lossy(RIDGE_LAMBDA);
        Ok(self
            .weights
            .iter()
            .zip(&scales)
            .fold(total, |acc, (w, s)| acc + lambda * (*w * *s) * (*w * *s)))
    }
}

fn standardization<T: Scalar>(rows: &[Vec<T>], d: usize) -> (Vec<T>, Vec<T>) {
    let n_t = T::from_usize(rows.len().max(1)).unwrap();
    let means: Vec<T> = (0..d)
        .map(|j| rows.iter().fold(T::zero(), |a, r| a + r[j]) / n_t)
        .collect();
    let scales: Vec<T> = (0..d)
        .map(|j| {
            let var = rows.iter().fold(T::zero(), |a, r| {
                let c = r[j] - means[j];
                a + c * c
            }) / n_t;
            var.sqrt()
        })
        .collect();
    (means, scales)
}

/// Gaussian elimination with partial pivoting on an augmented `d × (d+1)`
/// system. A pivot below half the damping means the ridge term cannot keep
/// the system well-posed.
fn solve<T: Scalar>(mut a: Vec<Vec<T>>, lambda: T) -> Result<Vec<T>, ModelError> {
    let d = a.len();
    let floor = lambda / T::from_f64_lossy(2.0);
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        if !p.is_finite() || p.abs() < floor {
            return Err(ModelError::DegenerateDesign);
        }
        for row in col + 1..d {
            let factor = a[row][col] / p;
            if factor == T::zero() {
                continue;
            }
            for k in col..=d {
                a[row][k] = a[row][k] - factor * a[col][k];
            }
        }
    }
    let mut x = vec![T::zero(); d];
    for row in (0..d).rev() {
        let acc = (row + 1..d).fold(a[row][d], |acc, k| acc - a[row][k] * x[k]);
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codecs::DataType;
    use crate::models::Target;
    use proptest::prelude::*;

    fn set(xs: &[Vec<f64>], ys: &[f64]) -> TrainingSet<f64> {
        let d = xs.first().map_or(0, Vec::len);
        let mut s = TrainingSet::new(DataType::Int64, Target::StorageScanNs, "test", (0..d).map(|i| format!("x{i}")).collect());
        for (x, y) in xs.iter().zip(ys) {
            s.push(x.clone(), *y);
        }
        s
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn affine_map() {
        let m = LinearModel::new(vec![2.0], 1.0);
        assert_eq!(m.predict(&[3.0]).unwrap(), 7.0);
        assert!(m.predict(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn noiseless_line() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.5]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x[0] + 2.0).collect();
        let m = LinearModel::fit(&set(&xs, &ys)).unwrap();
        assert!(rel(m.weights[0], 3.0) < 1e-6);
        assert!(rel(m.intercept, 2.0) < 1e-6);
    }

    #[test]
    fn identity_points() {
        let m = LinearModel::fit(&set(&[vec![1.0], vec![2.0], vec![3.0]], &[1.0, 2.0, 3.0])).unwrap();
        assert!((m.weights[0] - 1.0).abs() < 1e-7);
        assert!(m.intercept.abs() < 1e-7);
    }

    #[test]
    fn storage_calibration_oracle() {
        // t = L + s / T with L = 150 µs, T = 300 MB/s; sizes span 4 KiB..64 MiB.
        let (latency, throughput) = (150_000.0, 300e6);
        let sizes = [4096.0, 65_536.0, 1_048_576.0, 8_388_608.0, 67_108_864.0];
        let xs: Vec<Vec<f64>> = sizes.iter().map(|s| vec![*s]).collect();
        let ys: Vec<f64> = sizes.iter().map(|s| latency + s / throughput * 1e9).collect();
        let m = LinearModel::fit(&set(&xs, &ys)).unwrap();
        assert!(rel(m.intercept, latency) < 0.01);
        assert!(rel(1e9 / m.weights[0], throughput) < 0.01);
    }

    #[test]
    fn constant_column_gets_zero_weight() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 4.0]).collect();
        let ys: Vec<f64> = (0..10).map(|i| 2.0 * i as f64 + 1.0).collect();
        let m = LinearModel::fit(&set(&xs, &ys)).unwrap();
        assert_eq!(m.weights[1], 0.0);
        assert!((m.predict(&[20.0, 4.0]).unwrap() - 41.0).abs() < 1e-6);
    }

    #[test]
    fn too_few_rows() {
        let err = LinearModel::fit(&set(&[vec![1.0, 2.0], vec![2.0, 1.0]], &[1.0, 2.0])).unwrap_err();
        assert_eq!(err, ModelError::InsufficientData { needed: 3, have: 2 });
    }

    #[test]
    fn duplicate_columns_are_damped() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, i as f64]).collect();
        let ys: Vec<f64> = (0..10).map(|i| 4.0 * i as f64).collect();
        let m = LinearModel::fit(&set(&xs, &ys)).unwrap();
        assert!((m.weights[0] + m.weights[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn generic_over_f32() {
        let mut s = TrainingSet::new(DataType::Int64, Target::StorageScanNs, "f32", vec!["x".into()]);
        for i in 0..10 {
            s.push(vec![i as f32], 3.0 * i as f32 + 2.0);
        }
        let m = LinearModel::fit(&s).unwrap();
        assert!((m.weights[0] - 3.0).abs() < 1e-4);
        assert!((m.intercept - 2.0).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn perturbation_never_improves(
            rows in proptest::collection::vec((proptest::collection::vec(-100.0f64..100.0, 2), 0.0f64..1e3), 6..40),
            which in 0usize..2,
            up in any::<bool>(),
        ) {
            let (xs, ys): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
            let data = set(&xs, &ys);
            let m = match LinearModel::fit(&data) {
                Ok(m) => m,
                Err(ModelError::DegenerateDesign) => return Ok(()),
                Err(e) => panic!("{e}"),
            };
            let base = m.damped_objective(&data).unwrap();
            let mut p = m.clone();
            p.weights[which] *= if up { 1.01 } else { 0.99 };
            let perturbed = p.damped_objective(&data).unwrap();
            prop_assert!(perturbed >= base * (1.0 - 1e-9) - 1e-9);
        }
    }
}
