//! Stationary OU sampling and direct sampling of the field
//! `(u, t) ↦ S^u ω(t)` from its covariance.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::covariance::{cov, mean_and_std_err, CovarianceQuery};
use crate::flow::{FlowPlan, PreparedPath};
use crate::par;
use crate::paths::{OuPath, TimeGrid};
use crate::{Error, Result};

/// Dense factorization budget for [`sample_field`].
pub const FIELD_DIM_CAP: usize = 4096;
/// Largest diagonal jitter tried before giving up.
pub const MAX_JITTER: f64 = 1e-6;
/// Accuracy of the covariance entries of the field matrix.
const FIELD_COV_ABS_ERR: f64 = 1e-10;

/// A ChaCha20 stream: same `(seed, stream_id)`, same numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// The `k`-th stream after this one.
    pub fn offset(&self, k: u64) -> Self {
        Self::new(self.seed, self.stream_id.wrapping_add(k))
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Exact AR(1) recursion for covariance `e^{-|Δt|/2}`.
pub fn sample_ou(grid: TimeGrid, stream: RngStream) -> OuPath {
    let mut rng = stream.rng();
    let rho = (-0.5 * grid.dt()).exp();
    let innov = (-(-grid.dt()).exp_m1()).sqrt();
    let mut values = Vec::with_capacity(grid.len());
    let mut x: f64 = StandardNormal.sample(&mut rng);
    values.push(x);
    for _ in 1..grid.len() {
        let xi: f64 = StandardNormal.sample(&mut rng);
        x = rho * x + innov * xi;
        values.push(x);
    }
    OuPath::new(grid, values).expect("finite samples on a valid grid")
}

/// `count` independent paths on streams `base, base+1, …`.
pub fn sample_ou_batch(grid: TimeGrid, base: RngStream, count: usize) -> Vec<OuPath> {
    par::map_range(count, |k| sample_ou(grid, base.offset(k as u64)))
}

/// One draw of the field on `u_grid × t_grid`.
#[derive(Debug, Clone)]
pub struct FieldSample {
    pub u_grid: Vec<f64>,
    pub t_grid: TimeGrid,
    /// `values[i][j] = S^{u_i} ω(t_j)`.
    pub values: Vec<Vec<f64>>,
}

impl FieldSample {
    pub fn row(&self, i: usize) -> Result<OuPath> {
        OuPath::new(self.t_grid, self.values[i].clone())
    }
}

/// Cholesky factor of the field covariance, reusable across draws.
#[derive(Debug, Clone)]
pub struct FieldSampler {
    u_grid: Vec<f64>,
    t_grid: TimeGrid,
    factor: DMatrix<f64>,
    jitter_used: f64,
}

impl FieldSampler {
    pub fn new(u_grid: &[f64], t_grid: TimeGrid, jitter: f64) -> Result<Self> {
        let cov = field_covariance(u_grid, t_grid)?;
        let mut ladder = vec![jitter.max(0.0)];
        let mut j = 1e-10;
        while j <= MAX_JITTER * (1.0 + 1e-9) {
            if j > jitter {
                ladder.push(j);
            }
            j *= 10.0;
        }
        for &eps in &ladder {
            let mut m = cov.clone();
            for d in 0..m.nrows() {
                m[(d, d)] += eps;
            }
            if let Some(ch) = m.cholesky() {
                return Ok(Self {
                    u_grid: u_grid.to_vec(),
                    t_grid,
                    factor: ch.l(),
                    jitter_used: eps,
                });
            }
        }
        let min_eigenvalue = SymmetricEigen::new(cov).eigenvalues.min();
        Err(Error::NonPsd { min_eigenvalue })
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn draw(&self, stream: RngStream) -> FieldSample {
        let mut rng = stream.rng();
        let dim = self.factor.nrows();
        let xi = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        let x = &self.factor * xi;
        let n = self.t_grid.len();
        let values = (0..self.u_grid.len())
            .map(|i| x.as_slice()[i * n..(i + 1) * n].to_vec())
            .collect();
        FieldSample {
            u_grid: self.u_grid.clone(),
            t_grid: self.t_grid,
            values,
        }
    }
}

/// Covariance matrix of the stacked field, index `i·n + j ↔ (u_i, t_j)`.
/// The upper triangle is computed (one quadrature per distinct difference)
/// and mirrored, so the result is exactly symmetric.
pub fn field_covariance(u_grid: &[f64], t_grid: TimeGrid) -> Result<DMatrix<f64>> {
    let n = t_grid.len();
    let dim = u_grid.len() * n;
    if dim == 0 || dim > FIELD_DIM_CAP {
        return Err(Error::Parameter(format!("field dimension {dim} outside 1..={FIELD_DIM_CAP}")));
    }
    let dt = t_grid.dt();
    let key = |a: usize, b: usize| -> (i64, u64, u64) {
        let (ia, ja) = (a / n, a % n);
        let (ib, jb) = (b / n, b % n);
        // E[X_a X_b] = cov(t_b - t_a, u_a - u_b)
        (jb as i64 - ja as i64, u_grid[ia].to_bits(), u_grid[ib].to_bits())
    };
    let mut distinct: HashMap<(i64, u64, u64), usize> = HashMap::new();
    let mut order = Vec::new();
    for a in 0..dim {
        for b in a..dim {
            let k = key(a, b);
            if !distinct.contains_key(&k) {
                distinct.insert(k, order.len());
                order.push(k);
            }
        }
    }
    let values = par::map_slice(&order, |&(lag, ua, ub)| {
        let q = CovarianceQuery::new(lag as f64 * dt, f64::from_bits(ua) - f64::from_bits(ub))?;
        cov(q, FIELD_COV_ABS_ERR)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let mut m = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in a..dim {
            let v = values[distinct[&key(a, b)]];
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    Ok(m)
}

pub fn sample_field(u_grid: &[f64], t_grid: TimeGrid, stream: RngStream, jitter: f64) -> Result<FieldSample> {
    Ok(FieldSampler::new(u_grid, t_grid, jitter)?.draw(stream))
}

/// Empirical `E[ω(0)·S^u ω(d)]` against `cov(-d, u)` for a few lags.
#[derive(Debug, Clone, Serialize)]
pub struct FieldFlowReport {
    pub u: f64,
    pub n_paths: usize,
    pub lags: Vec<f64>,
    pub empirical: Vec<f64>,
    pub std_err: Vec<f64>,
    pub expected: Vec<f64>,
    pub max_defect: f64,
    /// Largest `|empirical - expected| / std_err`.
    pub max_z: f64,
}

/// Window used by [`field_vs_flow_check`]: `[-100, 100]` at step 1/8.
pub fn check_grid() -> TimeGrid {
    TimeGrid::spanning(-100.0, 100.0, 0.125).expect("valid constant grid")
}

pub fn field_vs_flow_check(n_paths: usize, u: f64, stream: RngStream) -> Result<FieldFlowReport> {
    let mut reports = field_vs_flow_multi(n_paths, &[u], &[-1.0, -0.5, 0.0, 0.5, 1.0], stream)?;
    Ok(reports.remove(0))
}

/// [`field_vs_flow_check`] for several `u` on the same draws.
pub fn field_vs_flow_multi(n_paths: usize, us: &[f64], lags: &[f64], stream: RngStream) -> Result<Vec<FieldFlowReport>> {
    if n_paths < 100 {
        return Err(Error::Parameter(format!("{n_paths} paths, need at least 100")));
    }
    let grid = check_grid();
    let plan = FlowPlan::new(grid)?;
    let center = grid.index_of(0.0).expect("0 is a node");
    let lag_idx: Vec<i64> = lags
        .iter()
        .map(|&d| {
            let k = (d / grid.dt()).round();
            if (k * grid.dt() - d).abs() > 1e-9 || k.abs() as usize > grid.len() / 8 {
                Err(Error::Window(format!("lag {d} is not a central grid offset")))
            } else {
                Ok(k as i64)
            }
        })
        .collect::<Result<_>>()?;
    let multipliers: Vec<_> = us.iter().map(|&u| plan.multipliers(u)).collect();
    // products[path][u][lag]
    let products = par::map_range(n_paths, |p| -> Result<Vec<Vec<f64>>> {
        let w = sample_ou(grid, stream.offset(p as u64));
        let prep: PreparedPath = plan.prepare(&w)?;
        let w0 = w.values()[center];
        multipliers
            .iter()
            .map(|m| {
                let out = prep.apply_multipliers(m)?;
                Ok(lag_idx
                    .iter()
                    .map(|&k| w0 * out.values()[(center as i64 + k) as usize])
                    .collect())
            })
            .collect()
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    us.iter()
        .enumerate()
        .map(|(iu, &u)| {
            let mut report = FieldFlowReport {
                u,
                n_paths,
                lags: lags.to_vec(),
                empirical: vec![],
                std_err: vec![],
                expected: vec![],
                max_defect: 0.0,
                max_z: 0.0,
            };
            for (il, &d) in lags.iter().enumerate() {
                let xs: Vec<f64> = products.iter().map(|p| p[iu][il]).collect();
                let (m, se) = mean_and_std_err(&xs);
                // E[S^u ω(d)·ω(0)] = cov(0 - d, u - 0)
                let e = cov(CovarianceQuery::new(-d, u)?, 1e-10)?;
                report.max_defect = report.max_defect.max((m - e).abs());
                report.max_z = report.max_z.max((m - e).abs() / se.max(f64::MIN_POSITIVE));
                report.empirical.push(m);
                report.std_err.push(se);
                report.expected.push(e);
            }
            Ok(report)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ou_marginals() {
        let grid = TimeGrid::new(0.0, 0.5, 16).unwrap();
        let n = 10_000;
        let paths = sample_ou_batch(grid, RngStream::new(7, 0), n);
        let at: Vec<f64> = paths.iter().map(|p| p.values()[5]).collect();
        let var = at.iter().map(|x| x * x).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() < 5.0 * (2.0 / n as f64).sqrt(), "{var}");
        let lag: Vec<f64> = paths.iter().map(|p| p.values()[5] * p.values()[6]).collect();
        let (m, se) = mean_and_std_err(&lag);
        assert!((m - (-0.25f64).exp()).abs() < 5.0 * se, "{m} ± {se}");
    }

    #[test]
    fn lag_one_autocorrelation_along_a_path() {
        let grid = TimeGrid::new(0.0, 0.5, 200_000).unwrap();
        let v = sample_ou(grid, RngStream::new(3, 9)).into_values();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let ac = v.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / ((n - 1.0) * var);
        // std err of a lag-1 AR(1) autocorrelation ≈ √((1-ρ²)/n)
        let rho = (-0.25f64).exp();
        assert!((ac - rho).abs() < 5.0 * ((1.0 - rho * rho) / n).sqrt(), "{ac}");
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let grid = TimeGrid::new(0.0, 0.1, 50).unwrap();
        let a = sample_ou(grid, RngStream::new(1, 2));
        let b = sample_ou(grid, RngStream::new(1, 2));
        let c = sample_ou(grid, RngStream::new(1, 3));
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn field_matrix_is_symmetric_with_unit_diagonal() {
        let m = field_covariance(&[0.0, 0.4], TimeGrid::new(0.0, 0.5, 6).unwrap()).unwrap();
        for a in 0..m.nrows() {
            assert!((m[(a, a)] - 1.0).abs() < 1e-9);
            for b in 0..m.ncols() {
                assert_eq!(m[(a, b)], m[(b, a)]);
            }
        }
        assert!(field_covariance(&[0.0; 2], TimeGrid::new(0.0, 0.1, 3000).unwrap()).is_err());
    }

    #[test]
    fn single_row_field_is_ou() {
        let grid = TimeGrid::new(0.0, 0.5, 8).unwrap();
        let sampler = FieldSampler::new(&[0.3], grid, 0.0).unwrap();
        let n = 4000;
        let draws: Vec<FieldSample> = (0..n).map(|k| sampler.draw(RngStream::new(11, k))).collect();
        let sq: Vec<f64> = draws.iter().map(|d| d.values[0][3].powi(2)).collect();
        let (m, se) = mean_and_std_err(&sq);
        assert!((m - 1.0).abs() < 5.0 * se);
        let lag: Vec<f64> = draws.iter().map(|d| d.values[0][3] * d.values[0][4]).collect();
        let (m, se) = mean_and_std_err(&lag);
        assert!((m - (-0.25f64).exp()).abs() < 5.0 * se);
    }

    #[test]
    fn unit_separated_rows_are_uncorrelated_at_equal_times() {
        let grid = TimeGrid::new(0.0, 0.5, 4).unwrap();
        let sampler = FieldSampler::new(&[0.2, 1.2], grid, 1e-10).unwrap();
        let xs: Vec<f64> = (0..1000)
            .map(|k| {
                let d = sampler.draw(RngStream::new(5, k));
                d.values[0][2] * d.values[1][2]
            })
            .collect();
        let (m, se) = mean_and_std_err(&xs);
        assert!(m.abs() < 5.0 * se, "{m} ± {se}");
    }

    #[test]
    fn zero_jitter_is_reproducible() {
        let grid = TimeGrid::new(0.0, 1.0, 5).unwrap();
        let a = sample_field(&[0.0, 0.5], grid, RngStream::new(2, 0), 0.0).unwrap();
        let b = sample_field(&[0.0, 0.5], grid, RngStream::new(2, 0), 0.0).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(FieldSampler::new(&[0.0, 0.5], grid, 0.0).unwrap().jitter_used(), 0.0);
    }

    #[test]
    fn fine_grids_fall_back_on_jitter_or_report_eigenvalue() {
        // rows at u and u + 1e-9 are numerically identical
        let grid = TimeGrid::new(0.0, 0.01, 20).unwrap();
        match FieldSampler::new(&[0.0, 1e-9], grid, 0.0) {
            Ok(s) => assert!(s.jitter_used() > 0.0),
            Err(Error::NonPsd { min_eigenvalue }) => assert!(min_eigenvalue < 1e-6),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn flow_matches_field_covariance() {
        let reports = field_vs_flow_multi(400, &[0.0, 0.5, 1.0], &[-1.0, 0.0, 1.0], RngStream::new(42, 0)).unwrap();
        for r in &reports {
            assert!(r.max_z < 5.0, "u={}: {:?}", r.u, r);
        }
        // u = 0 is the identity: ω(0)·ω(0) at lag 0 averages to 1
        assert!((reports[0].expected[1] - 1.0).abs() < 1e-9);
        assert!(field_vs_flow_check(10, 0.5, RngStream::new(1, 0)).is_err());
    }
}
