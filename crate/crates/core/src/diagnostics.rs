//! Grid densities, symmetric KL, moments and a two-sample KS test.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Cells with less mass than this are floored before taking logs.
pub const KL_FLOOR: f64 = 1e-10;

/// Regular grid over a box in one or two dimensions. Cells are stored with
/// the last dimension varying fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub bins: Vec<usize>,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, bins: Vec<usize>) -> Result<Self> {
        let g = Self { lower, upper, bins };
        g.validate()?;
        Ok(g)
    }

    pub fn line(lower: f64, upper: f64, bins: usize) -> Result<Self> {
        Self::new(vec![lower], vec![upper], vec![bins])
    }

    pub fn square(lower: [f64; 2], upper: [f64; 2], bins: [usize; 2]) -> Result<Self> {
        Self::new(lower.to_vec(), upper.to_vec(), bins.to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.lower.len();
        if !(d == 1 || d == 2) || self.upper.len() != d || self.bins.len() != d {
            return Err(Error::Contract("grids must be one- or two-dimensional".into()));
        }
        for i in 0..d {
            if !(self.lower[i].is_finite() && self.upper[i].is_finite() && self.lower[i] < self.upper[i]) {
                return Err(Error::Contract(format!("degenerate bounds in dimension {i}")));
            }
            if self.bins[i] < 2 {
                return Err(Error::Contract(format!("need at least 2 bins in dimension {i}")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.bins.len()
    }

    pub fn cells(&self) -> usize {
        self.bins.iter().product()
    }

    pub fn width(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.bins[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.width(a)).product()
    }

    pub fn center(&self, cell: usize) -> Vec<f64> {
        let mut rest = cell;
        let mut out = vec![0.0; self.dim()];
        for axis in (0..self.dim()).rev() {
            let i = rest % self.bins[axis];
            rest /= self.bins[axis];
            out[axis] = self.lower[axis] + (i as f64 + 0.5) * self.width(axis);
        }
        out
    }

    /// Cell containing `x`, clamping to the edge cells. The flag is true when
    /// clamping was needed.
    pub fn locate(&self, x: &[f64]) -> (usize, bool) {
        let mut cell = 0;
        let mut spilled = false;
        for axis in 0..self.dim() {
            let pos = (x[axis] - self.lower[axis]) / self.width(axis);
            let n = self.bins[axis];
            let i = if pos.is_nan() || pos < 0.0 {
                spilled = true;
                0
            } else if pos >= n as f64 {
                spilled = !(pos == n as f64 && x[axis] == self.upper[axis]) || spilled;
                n - 1
            } else {
                pos as usize
            };
            cell = cell * n + i;
        }
        (cell, spilled)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub grid: GridSpec,
    /// Probability mass per cell, summing to 1.
    pub masses: Vec<f64>,
    /// Samples that fell outside the box and were clamped into an edge cell.
    pub spill: usize,
}

impl GridDensity {
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.grid.dim()];
        for (cell, p) in self.masses.iter().enumerate() {
            for (acc, c) in m.iter_mut().zip(self.grid.center(cell)) {
                *acc += p * c;
            }
        }
        m
    }

    /// Per-axis variance of the cell-center distribution.
    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut v = vec![0.0; self.grid.dim()];
        for (cell, p) in self.masses.iter().enumerate() {
            for ((acc, c), m) in v.iter_mut().zip(self.grid.center(cell)).zip(&mean) {
                *acc += p * (c - m) * (c - m);
            }
        }
        v
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.masses.iter().enumerate() {
            if *p > self.masses[best] {
                best = i;
            }
        }
        best
    }

    /// One row per cell: center coordinates, then mass.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            let header: Vec<String> = (0..self.grid.dim()).map(|i| format!("x_{i}")).collect();
            writeln!(w, "{},mass", header.join(","))?;
            for (cell, p) in self.masses.iter().enumerate() {
                let c: Vec<String> = self.grid.center(cell).iter().map(|v| format!("{v:.16e}")).collect();
                writeln!(w, "{},{p:.16e}", c.join(","))?;
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

pub fn histogram_density(samples: &[Vec<f64>], grid: &GridSpec) -> Result<GridDensity> {
    grid.validate()?;
    if samples.is_empty() {
        return Err(Error::Contract("cannot build a histogram from zero samples".into()));
    }
    let mut counts = vec![0u64; grid.cells()];
    let mut spill = 0;
    for s in samples {
        if s.len() != grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: grid.dim(),
                got: s.len(),
            });
        }
        let (cell, spilled) = grid.locate(s);
        counts[cell] += 1;
        spill += spilled as usize;
    }
    let n = samples.len() as f64;
    Ok(GridDensity {
        grid: grid.clone(),
        masses: counts.into_iter().map(|c| c as f64 / n).collect(),
        spill,
    })
}

/// Quadrature density `exp(-U(center))` normalized over the grid. Cells with
/// `U = +inf` get zero mass.
pub fn analytic_density<F>(potential: F, grid: &GridSpec) -> Result<GridDensity>
where
    F: Fn(&[f64]) -> f64,
{
    grid.validate()?;
    let energies: Vec<f64> = (0..grid.cells()).map(|c| potential(&grid.center(c))).collect();
    if energies.iter().any(|u| u.is_nan() || *u == f64::NEG_INFINITY) {
        return Err(Error::Contract("potential is NaN or -inf on the grid".into()));
    }
    let min = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::Contract("potential is infinite on the whole grid".into()));
    }
    let weights: Vec<f64> = energies.iter().map(|u| (min - u).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(GridDensity {
        grid: grid.clone(),
        masses: weights.into_iter().map(|w| w / total).collect(),
        spill: 0,
    })
}

fn floored(masses: &[f64]) -> Vec<f64> {
    let v: Vec<f64> = masses.iter().map(|m| m.max(KL_FLOOR)).collect();
    let total: f64 = v.iter().sum();
    v.into_iter().map(|m| m / total).collect()
}

/// `KL(p||q) + KL(q||p) = sum (p - q) ln(p / q)` after flooring both densities.
pub fn symmetric_kl(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    if p.grid != q.grid || p.masses.len() != q.masses.len() {
        return Err(Error::Contract("densities live on different grids".into()));
    }
    let (p, q) = (floored(&p.masses), floored(&q.masses));
    let kl: f64 = p.iter().zip(&q).map(|(a, b)| (a - b) * (a.ln() - b.ln())).sum();
    Ok(kl.max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: Vec<f64>,
    /// Unbiased (`n - 1`) sample covariance, row-major `d x d`.
    pub covariance: Vec<Vec<f64>>,
}

pub fn moments(samples: &[Vec<f64>]) -> Result<Moments> {
    if samples.len() < 2 {
        return Err(Error::Contract("moments need at least two samples".into()));
    }
    let d = samples[0].len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        if s.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: s.len() });
        }
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![vec![0.0; d]; d];
    for s in samples {
        for i in 0..d {
            let di = s[i] - mean[i];
            for j in i..d {
                cov[i][j] += di * (s[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= n - 1.0;
            cov[j][i] = cov[i][j];
        }
    }
    Ok(Moments { mean, covariance: cov })
}

/// `(1/p) sum (a_i - b_i)^2`.
pub fn parameter_mse(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() || estimate.is_empty() {
        return Err(Error::Contract(format!(
            "cannot compare vectors of lengths {} and {}",
            estimate.len(),
            reference.len()
        )));
    }
    let sum: f64 = estimate.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / estimate.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

impl KsResult {
    pub fn passes(&self, significance: f64) -> bool {
        self.p_value > significance
    }
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    let mut prev_term = 0.0;
    for j in 1..=200 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term <= 1e-12 * sum.abs() || (prev_term > 0.0 && term <= 1e-16 * prev_term) {
            return (2.0 * sum).clamp(0.0, 1.0);
        }
        sign = -sign;
        prev_term = term;
    }
    // no convergence happens only for tiny lambda
    1.0
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("KS test needs non-empty samples".into()));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::Contract("KS test samples contain NaN".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(lambda),
    })
}

/// Exact sampler for a one-dimensional target via the inverse CDF of its
/// piecewise-linear quadrature on a fine grid.
#[derive(Clone, Debug)]
pub struct InverseCdf {
    lower: f64,
    width: f64,
    cdf: Vec<f64>,
}

impl InverseCdf {
    pub fn new<F: Fn(f64) -> f64>(potential: F, lower: f64, upper: f64, cells: usize) -> Result<Self> {
        let grid = GridSpec::line(lower, upper, cells)?;
        let density = analytic_density(|x| potential(x[0]), &grid)?;
        let mut cdf = Vec::with_capacity(cells + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for m in &density.masses {
            acc += m;
            cdf.push(acc);
        }
        let last = *cdf.last().expect("non-empty");
        cdf.iter_mut().for_each(|c| *c /= last);
        Ok(Self {
            lower,
            width: grid.width(0),
            cdf,
        })
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|c| *c <= u).clamp(1, self.cdf.len() - 1);
        let (lo, hi) = (self.cdf[k - 1], self.cdf[k]);
        let frac = if hi > lo { (u - lo) / (hi - lo) } else { 0.5 };
        self.lower + (k as f64 - 1.0 + frac.clamp(0.0, 1.0)) * self.width
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.gen())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn point_mass_and_uniform_centers() {
        let g = GridSpec::line(0.0, 1.0, 10).unwrap();
        let h = histogram_density(&[vec![0.55], vec![0.51]], &g).unwrap();
        assert_eq!(h.masses[5], 1.0);
        let centers: Vec<Vec<f64>> = (0..10).map(|c| g.center(c)).collect();
        let h = histogram_density(&centers, &g).unwrap();
        assert!(h.masses.iter().all(|m| (m - 0.1).abs() < 1e-12));
        let g2 = GridSpec::square([-1.0, 0.0], [1.0, 3.0], [4, 3]).unwrap();
        let centers: Vec<Vec<f64>> = (0..12).map(|c| g2.center(c)).collect();
        let h = histogram_density(&centers, &g2).unwrap();
        assert!(h.masses.iter().all(|m| (m - 1.0 / 12.0).abs() < 1e-12));
        assert_eq!(h.spill, 0);
    }

    #[test]
    fn spill_is_counted_and_clamped() {
        let g = GridSpec::line(0.0, 1.0, 4).unwrap();
        let h = histogram_density(&[vec![-3.0], vec![7.0], vec![1.0]], &g).unwrap();
        assert_eq!(h.spill, 2);
        assert!((h.masses[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((h.masses[3] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn histogram_contract_errors() {
        let g = GridSpec::line(0.0, 1.0, 4).unwrap();
        assert!(matches!(histogram_density(&[], &g), Err(Error::Contract(_))));
        assert!(GridSpec::line(1.0, 1.0, 4).is_err());
        assert!(GridSpec::line(0.0, 1.0, 1).is_err());
        assert!(GridSpec::new(vec![0.0; 3], vec![1.0; 3], vec![2; 3]).is_err());
    }

    #[test]
    fn normal_histogram_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<Vec<f64>> = (0..1_000_000)
            .map(|_| vec![StandardNormal.sample(&mut rng)])
            .collect();
        let g = GridSpec::line(-5.0, 5.0, 100).unwrap();
        let h = histogram_density(&samples, &g).unwrap();
        let q = analytic_density(|x| 0.5 * x[0] * x[0], &g).unwrap();
        assert!(symmetric_kl(&h, &q).unwrap() < 0.01);
    }

    #[test]
    fn analytic_density_examples() {
        let g = GridSpec::line(-2.0, 2.0, 8).unwrap();
        let flat = analytic_density(|_| 3.0, &g).unwrap();
        assert!(flat.masses.iter().all(|m| (m - 0.125).abs() < 1e-15));

        let g = GridSpec::line(-6.0, 6.0, 1200).unwrap();
        let n = analytic_density(|x| 0.5 * x[0] * x[0], &g).unwrap();
        assert!(n.mean()[0].abs() < 1e-3);
        assert!((n.variance()[0] - 1.0).abs() < 1e-2);

        assert!(analytic_density(|_| f64::INFINITY, &g).is_err());
        assert!(analytic_density(|_| f64::NAN, &g).is_err());
    }

    #[test]
    fn double_well_grid_is_bimodal() {
        use crate::energy::{DoubleWell, EnergyModel};
        let g = GridSpec::line(-5.0, 4.0, 900).unwrap();
        let d = analytic_density(|x| DoubleWell.potential(x).unwrap(), &g).unwrap();
        // local maxima of the mass vector, by grid search
        let m = &d.masses;
        let peaks: Vec<f64> = (1..m.len() - 1)
            .filter(|&i| m[i] > m[i - 1] && m[i] >= m[i + 1])
            .map(|i| g.center(i)[0])
            .collect();
        assert_eq!(peaks.len(), 2, "{peaks:?}");
        // the polynomial's stationary minima, located by a finer grid search
        let fine: Vec<f64> = (0..90_000).map(|i| -5.0 + (i as f64 + 0.5) * 1e-4).collect();
        let u = |x: f64| DoubleWell.potential(&[x]).unwrap();
        let left = fine.iter().filter(|x| **x < 0.0).cloned().min_by(|a, b| u(*a).total_cmp(&u(*b))).unwrap();
        let right = fine.iter().filter(|x| **x > 0.0).cloned().min_by(|a, b| u(*a).total_cmp(&u(*b))).unwrap();
        assert!((peaks[0] - left).abs() < 0.02);
        assert!((peaks[1] - right).abs() < 0.02);
    }

    #[test]
    fn symmetric_kl_examples() {
        let g = GridSpec::line(0.0, 1.0, 2).unwrap();
        let p = GridDensity { grid: g.clone(), masses: vec![0.5, 0.5], spill: 0 };
        let q = GridDensity { grid: g.clone(), masses: vec![0.25, 0.75], spill: 0 };
        let direct = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln()
            + 0.25 * (0.25f64 / 0.5).ln()
            + 0.75 * (0.75f64 / 0.5).ln();
        assert!((symmetric_kl(&p, &q).unwrap() - direct).abs() < 1e-15);
        assert_eq!(symmetric_kl(&p, &q).unwrap(), symmetric_kl(&q, &p).unwrap());
        assert_eq!(symmetric_kl(&p, &p).unwrap(), 0.0);
        let other = GridDensity {
            grid: GridSpec::line(0.0, 2.0, 2).unwrap(),
            masses: vec![0.5, 0.5],
            spill: 0,
        };
        assert!(matches!(symmetric_kl(&p, &other), Err(Error::Contract(_))));
    }

    #[test]
    fn empty_cells_give_finite_kl() {
        let g = GridSpec::line(0.0, 1.0, 3).unwrap();
        let p = GridDensity { grid: g.clone(), masses: vec![1.0, 0.0, 0.0], spill: 0 };
        let q = GridDensity { grid: g, masses: vec![0.0, 0.0, 1.0], spill: 0 };
        let kl = symmetric_kl(&p, &q).unwrap();
        assert!(kl.is_finite() && kl > 0.0);
    }

    #[test]
    fn moments_examples() {
        let m = moments(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(m.mean, vec![1.0, 1.0]);
        assert_eq!(m.covariance, vec![vec![2.0, 2.0], vec![2.0, 2.0]]);
        let same = moments(&[vec![1.5], vec![1.5], vec![1.5]]).unwrap();
        assert_eq!(same.covariance, vec![vec![0.0]]);
        assert!(moments(&[vec![1.0]]).is_err());
    }

    #[test]
    fn dist2_exact_draw_moments() {
        use crate::energy::Dist2;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<Vec<f64>> = (0..1_000_000).map(|_| Dist2.sample_exact(&mut rng).to_vec()).collect();
        let m = moments(&draws).unwrap();
        assert!((m.covariance[0][0] / 2.0 - 1.0).abs() < 0.02);
        assert!((m.covariance[1][1] / 2.0 - 1.0).abs() < 0.02);
        assert!(m.covariance[0][1].abs() < 0.05);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(parameter_mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(parameter_mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!((parameter_mse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(parameter_mse(&[1.0], &[1.0, 2.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn kolmogorov_reference_values() {
        // classical critical points of the limiting distribution
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
    }

    #[test]
    fn ks_detects_shift_and_accepts_same_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let c: Vec<f64> = b.iter().map(|x: &f64| x + 0.2).collect();
        assert!(ks_two_sample(&a, &b).unwrap().passes(0.01));
        assert!(!ks_two_sample(&a, &c).unwrap().passes(0.01));
        let same = ks_two_sample(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(same.statistic, 0.0);
        let apart = ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(apart.statistic, 1.0);
    }

    #[test]
    fn inverse_cdf_draws_a_normal() {
        let inv = InverseCdf::new(|x| 0.5 * x * x, -8.0, 8.0, 100_000).unwrap();
        assert!(inv.quantile(0.5).abs() < 1e-3);
        assert!((inv.quantile(0.975) - 1.959964).abs() < 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..10_000).map(|_| inv.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(ks_two_sample(&a, &b).unwrap().passes(0.01));
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative_and_symmetric(p in prop::collection::vec(0.0f64..1.0, 6), q in prop::collection::vec(0.0f64..1.0, 6)) {
            prop_assume!(p.iter().sum::<f64>() > 0.0 && q.iter().sum::<f64>() > 0.0);
            let g = GridSpec::line(0.0, 1.0, 6).unwrap();
            let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
            let p = GridDensity { grid: g.clone(), masses: norm(&p), spill: 0 };
            let q = GridDensity { grid: g, masses: norm(&q), spill: 0 };
            let a = symmetric_kl(&p, &q).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - symmetric_kl(&q, &p).unwrap()).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn histogram_ignores_row_order(xs in prop::collection::vec(-3.0f64..3.0, 1..60), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let g = GridSpec::line(-2.0, 2.0, 7).unwrap();
            let rows: Vec<Vec<f64>> = xs.iter().map(|x| vec![*x]).collect();
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(histogram_density(&rows, &g).unwrap(), histogram_density(&shuffled, &g).unwrap());
        }

        #[test]
        fn analytic_density_ignores_constant_shift(c in -50.0f64..50.0) {
            let g = GridSpec::square([-3.0, -3.0], [3.0, 3.0], [20, 20]).unwrap();
            let u = |x: &[f64]| 0.5 * x[0] * x[0] + 0.3 * x[0] * x[1] + x[1] * x[1];
            let a = analytic_density(u, &g).unwrap();
            let b = analytic_density(|x| u(x) + c, &g).unwrap();
            for (p, q) in a.masses.iter().zip(&b.masses) {
                prop_assert!((p - q).abs() <= 1e-12);
            }
            prop_assert!((a.masses.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
