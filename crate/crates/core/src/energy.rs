//! Target energies `U(theta)` with exact and stochastic gradients.
//!
//! Every model is immutable after construction. Stochastic gradients take the
//! random stream from the caller and hand back a [`NoiseRecord`] that pins the
//! draw, so the same gradient can be recomputed later with
//! [`EnergyModel::replay_stochastic_gradient`].

use std::f64::consts::{LN_2, PI};
use std::sync::Arc;

use rand::seq::index;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The random component of one stochastic-gradient evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NoiseRecord {
    /// No randomness: the gradient is the exact full-batch gradient.
    Exact,
    /// Additive perturbation of the exact gradient.
    Perturbation(Vec<f64>),
    /// Sorted indices of the minibatch examples.
    Minibatch(Vec<usize>),
}

pub trait EnergyModel: Send + Sync {
    fn dim(&self) -> usize;

    /// `U(theta)`, up to an additive constant that is fixed per model.
    fn potential(&self, theta: &[f64]) -> Result<f64>;

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>>;

    /// An unbiased estimate of the gradient together with the draw that produced it.
    ///
    /// Models without a stochastic estimator return the exact gradient.
    fn stochastic_gradient(
        &self,
        theta: &[f64],
        _rng: &mut dyn RngCore,
    ) -> Result<(Vec<f64>, NoiseRecord)> {
        Ok((self.gradient(theta)?, NoiseRecord::Exact))
    }

    /// Recomputes the stochastic gradient pinned by `record` at `theta`.
    fn replay_stochastic_gradient(&self, theta: &[f64], record: &NoiseRecord) -> Result<Vec<f64>> {
        match record {
            NoiseRecord::Exact => self.gradient(theta),
            other => Err(Error::Contract(format!(
                "model has no stochastic gradient, cannot replay {}",
                record_kind(other)
            ))),
        }
    }

    fn has_exact_gradient(&self) -> bool {
        true
    }

    fn has_stochastic_gradient(&self) -> bool {
        false
    }
}

fn record_kind(record: &NoiseRecord) -> &'static str {
    match record {
        NoiseRecord::Exact => "an exact record",
        NoiseRecord::Perturbation(_) => "a perturbation record",
        NoiseRecord::Minibatch(_) => "a minibatch record",
    }
}

macro_rules! forward_energy_model {
    ($($wrapper:ty),*) => {$(
        impl<M: EnergyModel + ?Sized> EnergyModel for $wrapper {
            fn dim(&self) -> usize {
                (**self).dim()
            }
            fn potential(&self, theta: &[f64]) -> Result<f64> {
                (**self).potential(theta)
            }
            fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
                (**self).gradient(theta)
            }
            fn stochastic_gradient(
                &self,
                theta: &[f64],
                rng: &mut dyn RngCore,
            ) -> Result<(Vec<f64>, NoiseRecord)> {
                (**self).stochastic_gradient(theta, rng)
            }
            fn replay_stochastic_gradient(
                &self,
                theta: &[f64],
                record: &NoiseRecord,
            ) -> Result<Vec<f64>> {
                (**self).replay_stochastic_gradient(theta, record)
            }
            fn has_exact_gradient(&self) -> bool {
                (**self).has_exact_gradient()
            }
            fn has_stochastic_gradient(&self) -> bool {
                (**self).has_stochastic_gradient()
            }
        }
    )*};
}

forward_energy_model!(&M, Box<M>, Arc<M>);

/// Validates length and finiteness of a position.
pub fn check_position(theta: &[f64], dim: usize) -> Result<()> {
    if theta.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: theta.len(),
        });
    }
    if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "position coordinate {i} is not finite ({})",
            theta[i]
        )));
    }
    Ok(())
}

/// `U(theta) = (theta + 4)(theta + 1)(theta - 1)(theta - 3) / 14 + 0.5`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DoubleWell;

impl DoubleWell {
    /// Exclusive range with negligible target mass outside.
    pub const SUPPORT: (f64, f64) = (-5.0, 4.0);
}

impl EnergyModel for DoubleWell {
    fn dim(&self) -> usize {
        1
    }

    fn potential(&self, theta: &[f64]) -> Result<f64> {
        check_position(theta, 1)?;
        let x = theta[0];
        Ok((x + 4.0) * (x + 1.0) * (x - 1.0) * (x - 3.0) / 14.0 + 0.5)
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_position(theta, 1)?;
        let x = theta[0];
        // d/dx of x^4 + x^3 - 13x^2 - x + 12
        Ok(vec![(((4.0 * x + 3.0) * x - 26.0) * x - 1.0) / 14.0])
    }
}

/// `N(z1; z2^2/4, 1) N(z2; 0, v)`, a banana-shaped density.
///
/// `v` is the variance of the second coordinate and defaults to 4.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dist1 {
    z2_variance: f64,
}

impl Default for Dist1 {
    fn default() -> Self {
        Self { z2_variance: 4.0 }
    }
}

impl Dist1 {
    pub fn new(z2_variance: f64) -> Result<Self> {
        if !(z2_variance > 0.0 && z2_variance.is_finite()) {
            return Err(Error::Config(format!(
                "Dist1 z2 variance must be positive, got {z2_variance}"
            )));
        }
        Ok(Self { z2_variance })
    }

    pub fn z2_variance(&self) -> f64 {
        self.z2_variance
    }

    /// Negative log normalizer; the value of `U` at the origin.
    pub fn log_normalizer(&self) -> f64 {
        (2.0 * PI).ln() + 0.5 * self.z2_variance.ln()
    }

    pub fn sample_exact(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let z2 = self.z2_variance.sqrt() * crate::rng::std_normal(rng);
        let z1: f64 = z2 * z2 / 4.0 + crate::rng::std_normal(rng);
        vec![z1, z2]
    }
}

impl EnergyModel for Dist1 {
    fn dim(&self) -> usize {
        2
    }

    fn potential(&self, z: &[f64]) -> Result<f64> {
        check_position(z, 2)?;
        let resid = z[0] - z[1] * z[1] / 4.0;
        Ok(0.5 * resid * resid + 0.5 * z[1] * z[1] / self.z2_variance + self.log_normalizer())
    }

    fn gradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_position(z, 2)?;
        let resid = z[0] - z[1] * z[1] / 4.0;
        Ok(vec![resid, -0.5 * z[1] * resid + z[1] / self.z2_variance])
    }
}

/// Equal mixture of two zero-mean Gaussians with covariances
/// `[[2, 1.8], [1.8, 2]]` and `[[2, -1.8], [-1.8, 2]]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dist2;

impl Dist2 {
    pub const VARIANCE: f64 = 2.0;
    pub const COVARIANCE: f64 = 1.8;

    fn det() -> f64 {
        Self::VARIANCE * Self::VARIANCE - Self::COVARIANCE * Self::COVARIANCE
    }

    /// Quadratic forms `z' S^-1 z` for the `+` and `-` components.
    fn quadratic_forms(z: &[f64]) -> (f64, f64) {
        let diag = Self::VARIANCE * (z[0] * z[0] + z[1] * z[1]);
        let cross = 2.0 * Self::COVARIANCE * z[0] * z[1];
        ((diag - cross) / Self::det(), (diag + cross) / Self::det())
    }

    pub fn sample_exact(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let sign = if rng.next_u32() & 1 == 0 { 1.0 } else { -1.0 };
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        let l11 = Self::VARIANCE.sqrt();
        let l21 = sign * Self::COVARIANCE / l11;
        let l22 = (Self::VARIANCE - l21 * l21).sqrt();
        vec![l11 * a, l21 * a + l22 * b]
    }
}

impl EnergyModel for Dist2 {
    fn dim(&self) -> usize {
        2
    }

    fn potential(&self, z: &[f64]) -> Result<f64> {
        check_position(z, 2)?;
        let (qp, qm) = Self::quadratic_forms(z);
        // -log(0.5 e^{-qp/2} + 0.5 e^{-qm/2}) + log(2 pi sqrt(det))
        let lo = qp.min(qm);
        let hi = qp.max(qm);
        let neg_log_sum = 0.5 * lo - (-0.5 * (hi - lo)).exp().ln_1p();
        Ok(neg_log_sum + LN_2 + (2.0 * PI).ln() + 0.5 * Self::det().ln())
    }

    fn gradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_position(z, 2)?;
        let (qp, qm) = Self::quadratic_forms(z);
        // softmax weights of the two components
        let wp = 1.0 / (1.0 + (0.5 * (qp - qm)).exp());
        let wm = 1.0 - wp;
        let det = Self::det();
        let (v, c) = (Self::VARIANCE, Self::COVARIANCE);
        let plus = [(v * z[0] - c * z[1]) / det, (v * z[1] - c * z[0]) / det];
        let minus = [(v * z[0] + c * z[1]) / det, (v * z[1] + c * z[0]) / det];
        Ok(vec![
            wp * plus[0] + wm * minus[0],
            wp * plus[1] + wm * minus[1],
        ])
    }
}

/// Constant energy; the zero-gradient free particle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Flat {
    pub dim: usize,
    pub value: f64,
}

impl Flat {
    pub fn new(dim: usize) -> Self {
        Self { dim, value: 0.0 }
    }
}

impl EnergyModel for Flat {
    fn dim(&self) -> usize {
        self.dim
    }

    fn potential(&self, theta: &[f64]) -> Result<f64> {
        check_position(theta, self.dim)?;
        Ok(self.value)
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_position(theta, self.dim)?;
        Ok(vec![0.0; self.dim])
    }
}

/// Isotropic quadratic `U = |theta|^2 / 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StandardGaussian {
    pub dim: usize,
}

impl EnergyModel for StandardGaussian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn potential(&self, theta: &[f64]) -> Result<f64> {
        check_position(theta, self.dim)?;
        Ok(0.5 * theta.iter().map(|x| x * x).sum::<f64>())
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_position(theta, self.dim)?;
        Ok(theta.to_vec())
    }
}

/// Simulated stochastic gradients: `grad U + scale * N(0, I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianNoise<M> {
    inner: M,
    scale: f64,
}

impl<M: EnergyModel> GaussianNoise<M> {
    pub fn new(inner: M, scale: f64) -> Self {
        Self { inner, scale }
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl<M: EnergyModel> EnergyModel for GaussianNoise<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn potential(&self, theta: &[f64]) -> Result<f64> {
        self.inner.potential(theta)
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.inner.gradient(theta)
    }

    fn stochastic_gradient(
        &self,
        theta: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<(Vec<f64>, NoiseRecord)> {
        let perturbation: Vec<f64> = (0..self.dim())
            .map(|_| self.scale * crate::rng::std_normal(rng))
            .collect();
        let record = NoiseRecord::Perturbation(perturbation);
        let grad = self.replay_stochastic_gradient(theta, &record)?;
        Ok((grad, record))
    }

    fn replay_stochastic_gradient(&self, theta: &[f64], record: &NoiseRecord) -> Result<Vec<f64>> {
        match record {
            NoiseRecord::Exact => self.inner.gradient(theta),
            NoiseRecord::Perturbation(p) => {
                if p.len() != self.dim() {
                    return Err(Error::Contract(format!(
                        "perturbation record has length {}, model dimension is {}",
                        p.len(),
                        self.dim()
                    )));
                }
                let mut grad = self.inner.gradient(theta)?;
                grad.iter_mut().zip(p).for_each(|(g, e)| *g += e);
                Ok(grad)
            }
            NoiseRecord::Minibatch(_) => Err(Error::Contract(
                "Gaussian-noise model cannot replay a minibatch record".into(),
            )),
        }
    }

    fn has_stochastic_gradient(&self) -> bool {
        true
    }
}

/// Hides a model's stochastic estimator: every gradient is full-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct FullBatch<M>(pub M);

impl<M: EnergyModel> EnergyModel for FullBatch<M> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn potential(&self, theta: &[f64]) -> Result<f64> {
        self.0.potential(theta)
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.0.gradient(theta)
    }
}

/// Binary classification data with labels in `{-1, +1}`, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    n: usize,
    p: usize,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Contract("dataset must contain at least one row".into()));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(Error::Contract(format!("label {bad} is not -1 or +1")));
        }
        let p = rows[0].len();
        let mut features = Vec::with_capacity(n * p);
        for row in &rows {
            if row.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("non-finite feature value".into()));
            }
            features.extend_from_slice(row);
        }
        Ok(Self {
            features,
            labels,
            n,
            p,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn num_features(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.features[i * self.p + j]).collect()
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `1 / (1 + exp(-x))` without overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bayesian logistic regression with an isotropic Gaussian prior.
///
/// `U(theta) = sum_i log(1 + exp(-y_i theta' x_i)) + |theta|^2 / (2 prior_variance)`.
/// The stochastic gradient subsamples `minibatch_size` rows uniformly without
/// replacement and rescales the data term by `n / minibatch_size`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticRegression {
    data: Dataset,
    prior_variance: f64,
    minibatch_size: usize,
}

impl LogisticRegression {
    pub const DEFAULT_PRIOR_VARIANCE: f64 = 10.0;

    pub fn new(data: Dataset, prior_variance: f64, minibatch_size: usize) -> Result<Self> {
        if !(prior_variance > 0.0 && prior_variance.is_finite()) {
            return Err(Error::Config(format!(
                "prior variance must be positive, got {prior_variance}"
            )));
        }
        if minibatch_size == 0 || minibatch_size > data.len() {
            return Err(Error::Config(format!(
                "minibatch size {minibatch_size} must be in 1..={}",
                data.len()
            )));
        }
        Ok(Self {
            data,
            prior_variance,
            minibatch_size,
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn minibatch_size(&self) -> usize {
        self.minibatch_size
    }

    pub fn prior_variance(&self) -> f64 {
        self.prior_variance
    }

    /// Same model with a different minibatch size.
    pub fn with_minibatch(&self, minibatch_size: usize) -> Result<Self> {
        Self::new(self.data.clone(), self.prior_variance, minibatch_size)
    }

    fn margin(&self, theta: &[f64], i: usize) -> f64 {
        self.data.label(i) * dot(theta, self.data.row(i))
    }

    /// `scale * sum_{i in rows} grad log(1 + exp(-y_i theta' x_i)) + theta / prior_variance`.
    fn batch_gradient(
        &self,
        theta: &[f64],
        rows: impl Iterator<Item = usize>,
        scale: f64,
    ) -> Vec<f64> {
        let mut data_term = vec![0.0; self.data.p];
        for i in rows {
            let w = -self.data.label(i) * sigmoid(-self.margin(theta, i));
            for (acc, x) in data_term.iter_mut().zip(self.data.row(i)) {
                *acc += w * x;
            }
        }
        data_term
            .iter()
            .zip(theta)
            .map(|(d, t)| scale * d + t / self.prior_variance)
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl EnergyModel for LogisticRegression {
    fn dim(&self) -> usize {
        self.data.p
    }

    fn potential(&self, theta: &[f64]) -> Result<f64> {
        check_position(theta, self.dim())?;
        let nll: f64 = (0..self.data.n)
            .map(|i| softplus(-self.margin(theta, i)))
            .sum();
        Ok(nll + 0.5 * dot(theta, theta) / self.prior_variance)
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_position(theta, self.dim())?;
        Ok(self.batch_gradient(theta, 0..self.data.n, 1.0))
    }

    fn stochastic_gradient(
        &self,
        theta: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<(Vec<f64>, NoiseRecord)> {
        let mut rows = index::sample(rng, self.data.n, self.minibatch_size).into_vec();
        rows.sort_unstable();
        let record = NoiseRecord::Minibatch(rows);
        let grad = self.replay_stochastic_gradient(theta, &record)?;
        Ok((grad, record))
    }

    fn replay_stochastic_gradient(&self, theta: &[f64], record: &NoiseRecord) -> Result<Vec<f64>> {
        check_position(theta, self.dim())?;
        match record {
            NoiseRecord::Exact => self.gradient(theta),
            NoiseRecord::Minibatch(rows) => {
                if rows.is_empty() || rows.len() > self.data.n {
                    return Err(Error::Config(format!(
                        "minibatch of {} rows for a dataset of {}",
                        rows.len(),
                        self.data.n
                    )));
                }
                if let Some(&bad) = rows.iter().find(|&&i| i >= self.data.n) {
                    return Err(Error::Contract(format!("minibatch row {bad} out of range")));
                }
                let scale = self.data.n as f64 / rows.len() as f64;
                Ok(self.batch_gradient(theta, rows.iter().copied(), scale))
            }
            NoiseRecord::Perturbation(_) => Err(Error::Contract(
                "logistic regression cannot replay a perturbation record".into(),
            )),
        }
    }

    fn has_stochastic_gradient(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn central_difference(model: &dyn EnergyModel, theta: &[f64], i: usize, h: f64) -> f64 {
        let mut up = theta.to_vec();
        let mut down = theta.to_vec();
        up[i] += h;
        down[i] -= h;
        (model.potential(&up).unwrap() - model.potential(&down).unwrap()) / (2.0 * h)
    }

    fn toy_dataset() -> Dataset {
        let rows = vec![
            vec![0.5, -1.0, 1.0],
            vec![-0.3, 0.8, 1.0],
            vec![1.2, 0.1, 1.0],
            vec![-1.5, -0.4, 1.0],
            vec![0.0, 2.0, 1.0],
        ];
        Dataset::new(rows, vec![1.0, -1.0, 1.0, -1.0, 1.0]).unwrap()
    }

    #[test]
    fn double_well_values() {
        let dw = DoubleWell;
        assert_eq!(dw.potential(&[1.0]).unwrap(), 0.5);
        let expected = 4.0 * 1.0 * -1.0 * -3.0 / 14.0 + 0.5;
        assert!((dw.potential(&[0.0]).unwrap() - expected).abs() < 1e-15);
        for root in [-4.0, -1.0, 1.0, 3.0] {
            assert_eq!(dw.potential(&[root]).unwrap(), 0.5);
        }
        let fd = central_difference(&dw, &[0.5], 0, 1e-5);
        assert!((dw.gradient(&[0.5]).unwrap()[0] - fd).abs() < 1e-6);
    }

    #[test]
    fn double_well_has_exactly_four_level_crossings() {
        // sign changes of U - 0.5 on a fine grid
        let f = |x: f64| DoubleWell.potential(&[x]).unwrap() - 0.5;
        let mut crossings = Vec::new();
        let mut x = -10.0;
        let step = 1e-3;
        while x < 10.0 {
            let (a, b) = (f(x), f(x + step));
            if a == 0.0 {
                crossings.push(x);
            } else if a * b < 0.0 {
                crossings.push(x + step / 2.0);
            }
            x += step;
        }
        assert_eq!(crossings.len(), 4, "{crossings:?}");
        for (c, r) in crossings.iter().zip([-4.0, -1.0, 1.0, 3.0]) {
            assert!((c - r).abs() < 2e-3);
        }
    }

    #[test]
    fn dist_gradients_vanish_at_origin() {
        assert_eq!(Dist1::default().gradient(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let g = Dist2.gradient(&[0.0, 0.0]).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn dist1_origin_is_the_normalizer() {
        let d = Dist1::default();
        assert_eq!(d.potential(&[0.0, 0.0]).unwrap(), d.log_normalizer());
        assert!((d.log_normalizer() - ((2.0 * PI).ln() + 2f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn dist2_matches_direct_mixture_density() {
        let pdf = |z: &[f64], c: f64| {
            let det: f64 = 4.0 - c * c;
            let q = (2.0 * z[0] * z[0] - 2.0 * c * z[0] * z[1] + 2.0 * z[1] * z[1]) / det;
            (-0.5 * q).exp() / (2.0 * PI * det.sqrt())
        };
        for z in [[0.3, -1.2], [2.0, 2.0], [-1.0, 0.5], [0.0, 0.0]] {
            let density = 0.5 * pdf(&z, 1.8) + 0.5 * pdf(&z, -1.8);
            let u = Dist2.potential(&z).unwrap();
            assert!((u + density.ln()).abs() < 1e-12, "{z:?}");
        }
    }

    #[test]
    fn contract_errors() {
        assert!(matches!(
            DoubleWell.potential(&[0.0, 1.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
        assert!(matches!(DoubleWell.gradient(&[f64::NAN]), Err(Error::Domain(_))));
        assert!(matches!(
            Dist1::default().potential(&[f64::INFINITY, 0.0]),
            Err(Error::Domain(_))
        ));
        assert!(LogisticRegression::new(toy_dataset(), 10.0, 6).is_err());
        assert!(LogisticRegression::new(toy_dataset(), 0.0, 2).is_err());
        assert!(Dist1::new(-1.0).is_err());
        let lr = LogisticRegression::new(toy_dataset(), 10.0, 2).unwrap();
        let theta = [0.1, 0.2, 0.3];
        assert!(matches!(
            lr.replay_stochastic_gradient(&theta, &NoiseRecord::Perturbation(vec![0.0; 3])),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            GaussianNoise::new(DoubleWell, 1.0)
                .replay_stochastic_gradient(&[0.0], &NoiseRecord::Minibatch(vec![0])),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            DoubleWell.replay_stochastic_gradient(&[0.0], &NoiseRecord::Perturbation(vec![1.0])),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![], vec![]).is_err());
        assert!(Dataset::new(vec![vec![1.0]], vec![0.0]).is_err());
        assert!(Dataset::new(vec![vec![1.0], vec![1.0, 2.0]], vec![1.0, -1.0]).is_err());
        let d = toy_dataset();
        assert_eq!((d.len(), d.num_features()), (5, 3));
        assert_eq!(d.column(1), vec![-1.0, 0.8, 0.1, -0.4, 2.0]);
    }

    #[test]
    fn zero_perturbation_replays_exact_gradient() {
        let m = GaussianNoise::new(Dist2, 1.0);
        let theta = [0.7, -0.2];
        let g = m
            .replay_stochastic_gradient(&theta, &NoiseRecord::Perturbation(vec![0.0, 0.0]))
            .unwrap();
        assert_eq!(g, Dist2.gradient(&theta).unwrap());
    }

    #[test]
    fn full_minibatch_is_exact_gradient() {
        let lr = LogisticRegression::new(toy_dataset(), 10.0, 5).unwrap();
        let theta = [0.3, -0.7, 0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (g, _) = lr.stochastic_gradient(&theta, &mut rng).unwrap();
        assert_eq!(g, lr.gradient(&theta).unwrap());
    }

    #[test]
    fn replay_is_bitwise_and_theta_dependent() {
        let lr = LogisticRegression::new(toy_dataset(), 10.0, 2).unwrap();
        let noisy = GaussianNoise::new(Dist1::default(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let theta = [0.3, -0.7, 0.2];
        let (g, rec) = lr.stochastic_gradient(&theta, &mut rng).unwrap();
        assert_eq!(lr.replay_stochastic_gradient(&theta, &rec).unwrap(), g);
        assert_eq!(
            lr.replay_stochastic_gradient(&theta, &rec).unwrap(),
            lr.replay_stochastic_gradient(&theta, &rec).unwrap()
        );
        // At a new theta the record fixes the minibatch only.
        let other = [1.0, 1.0, -1.0];
        let NoiseRecord::Minibatch(rows) = &rec else {
            panic!("expected minibatch record")
        };
        let direct = lr.batch_gradient(&other, rows.iter().copied(), 5.0 / 2.0);
        assert_eq!(lr.replay_stochastic_gradient(&other, &rec).unwrap(), direct);

        let z = [0.4, 1.1];
        let (g, rec) = noisy.stochastic_gradient(&z, &mut rng).unwrap();
        assert_eq!(noisy.replay_stochastic_gradient(&z, &rec).unwrap(), g);
    }

    #[test]
    fn logistic_potential_is_stable_at_large_margins() {
        let d = Dataset::new(vec![vec![1.0]], vec![1.0]).unwrap();
        let lr = LogisticRegression::new(d, 10.0, 1).unwrap();
        let u = lr.potential(&[-1000.0]).unwrap();
        assert!((u - (1000.0 + 1e6 / 20.0)).abs() < 1e-9);
        assert!(lr.potential(&[1000.0]).unwrap().is_finite());
        assert!(lr.gradient(&[-1000.0]).unwrap()[0].is_finite());
        assert!((softplus(0.0) - LN_2).abs() < 1e-15);
        assert_eq!(sigmoid(-800.0), 0.0);
    }

    #[test]
    fn minibatch_gradient_is_unbiased() {
        let lr = LogisticRegression::new(toy_dataset(), 10.0, 2).unwrap();
        let theta = [0.3, -0.7, 0.2];
        let exact = lr.gradient(&theta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 40_000;
        let mut sum = vec![0.0; 3];
        let mut sumsq = vec![0.0; 3];
        for _ in 0..draws {
            let (g, _) = lr.stochastic_gradient(&theta, &mut rng).unwrap();
            for k in 0..3 {
                sum[k] += g[k];
                sumsq[k] += g[k] * g[k];
            }
        }
        for k in 0..3 {
            let mean = sum[k] / draws as f64;
            let var = sumsq[k] / draws as f64 - mean * mean;
            let se = (var / draws as f64).sqrt();
            assert!((mean - exact[k]).abs() < 4.0 * se + 1e-12, "coordinate {k}");
        }
    }

    fn any_model(idx: usize) -> Box<dyn EnergyModel> {
        match idx {
            0 => Box::new(DoubleWell),
            1 => Box::new(Dist1::default()),
            2 => Box::new(Dist2),
            _ => Box::new(LogisticRegression::new(toy_dataset(), 10.0, 5).unwrap()),
        }
    }

    proptest! {
        #[test]
        fn gradients_match_finite_differences(
            idx in 0usize..4,
            coords in prop::collection::vec(-3.0f64..3.0, 3),
        ) {
            let model = any_model(idx);
            let theta = &coords[..model.dim()];
            let grad = model.gradient(theta).unwrap();
            for i in 0..model.dim() {
                let fd = central_difference(model.as_ref(), theta, i, 1e-5);
                let scale = grad[i].abs().max(1.0);
                prop_assert!((grad[i] - fd).abs() / scale < 1e-4,
                    "coord {} grad {} fd {}", i, grad[i], fd);
            }
        }
    }
}
