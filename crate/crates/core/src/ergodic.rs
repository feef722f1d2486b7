//! Birkhoff averages along translations `τ_s` and along flow iterates
//! `S^{mu}`.
//!
//! Flow iterates are computed directly from the multiplier of `S^{mu}` on
//! the circular model of the observation window, so no margin is consumed by
//! repeated application and the harness works for any `n`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use crate::covariance::mean_and_std_err;
use crate::flow::FlowPlan;
use crate::gaussian::{sample_ou, RngStream};
use crate::par;
use crate::paths::{OuPath, TimeGrid};
use crate::{Error, Result};

/// Functional evaluated on a path around `t = 0`.
#[derive(Clone)]
pub enum Observable {
    ValueSquareAt0,
    ValueAt0,
    /// `ω(0)·ω(τ)`
    ProductLag(f64),
    /// Arbitrary function of the samples in `[-half_width, half_width]`.
    Window {
        half_width: f64,
        f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::ValueSquareAt0 => write!(f, "value_square_at_0"),
            Observable::ValueAt0 => write!(f, "value_at_0"),
            Observable::ProductLag(t) => write!(f, "product_lag:{t}"),
            Observable::Window { half_width, .. } => write!(f, "window:{half_width}"),
        }
    }
}

impl FromStr for Observable {
    type Err = Error;

    /// `value_square_at_0`, `value_at_0` or `product_lag:<τ>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "value_square_at_0" => Ok(Observable::ValueSquareAt0),
            "value_at_0" => Ok(Observable::ValueAt0),
            _ => {
                let lag = s
                    .strip_prefix("product_lag:")
                    .ok_or_else(|| Error::Parse(format!("unknown observable {s:?}")))?;
                let tau: f64 = lag.parse().map_err(|_| Error::Parse(format!("bad lag {lag:?}")))?;
                Ok(Observable::ProductLag(tau))
            }
        }
    }
}

impl Observable {
    /// Node offsets `(lo, hi)` around the evaluation node that must exist.
    fn reach(&self, dt: f64) -> Result<(i64, i64)> {
        let steps = |x: f64| -> Result<i64> {
            let k = (x / dt).round();
            if (k * dt - x).abs() > 1e-9 * dt.max(x.abs()) {
                return Err(Error::Parameter(format!("{x} is not a multiple of the step {dt}")));
            }
            Ok(k as i64)
        };
        Ok(match self {
            Observable::ValueSquareAt0 | Observable::ValueAt0 => (0, 0),
            Observable::ProductLag(t) => {
                let k = steps(*t)?;
                (k.min(0), k.max(0))
            }
            Observable::Window { half_width, .. } => {
                let k = (half_width / dt).ceil() as i64;
                (-k, k)
            }
        })
    }

    /// `f(τ_{t_j} ω)` from the samples, `j` the node of the shifted origin.
    fn eval_at(&self, v: &[f64], j: usize, dt: f64) -> Result<f64> {
        let (lo, hi) = self.reach(dt)?;
        if (j as i64) + lo < 0 || (j as i64) + hi >= v.len() as i64 {
            return Err(Error::Window(format!("observable {self} reaches outside the window at node {j}")));
        }
        Ok(match self {
            Observable::ValueSquareAt0 => v[j] * v[j],
            Observable::ValueAt0 => v[j],
            Observable::ProductLag(_) => v[j] * v[(j as i64 + hi + lo) as usize],
            Observable::Window { f, .. } => f(&v[(j as i64 + lo) as usize..=(j as i64 + hi) as usize]),
        })
    }

    /// `f(ω)` with the origin at `t = 0` of the path's grid.
    pub fn eval(&self, w: &OuPath) -> Result<f64> {
        let j = w
            .grid()
            .index_of(0.0)
            .ok_or_else(|| Error::Window("t = 0 is not a grid node".into()))?;
        self.eval_at(w.values(), j, w.grid().dt())
    }
}

/// Partial averages `A_k` at abscissae `x_k` (time `T` or count `n`).
#[derive(Debug, Clone, Serialize)]
pub struct RunningAverages {
    pub abscissae: Vec<f64>,
    pub partial_averages: Vec<f64>,
    #[serde(rename = "final")]
    pub final_value: f64,
    /// Batch-means standard error of the final average.
    pub std_err_estimate: f64,
}

const BATCHES: usize = 32;

/// Observables reading fewer nodes than this are evaluated pointwise.
const LOCAL_NODES: i64 = 16;

fn batch_std_err(samples: &[f64]) -> f64 {
    let size = samples.len() / BATCHES;
    if size == 0 {
        return mean_and_std_err(samples).1;
    }
    let means: Vec<f64> = samples.chunks_exact(size).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    mean_and_std_err(&means).1
}

/// `(1/T)∫_0^T f(τ_s ω) ds` at `T = step, 2·step, …, T_max` by the
/// trapezoid rule at `step`.
pub fn birkhoff_translation(w: &OuPath, f: &Observable, t_max: f64, step: f64) -> Result<RunningAverages> {
    let dt = w.grid().dt();
    let stride = (step / dt).round() as usize;
    if stride == 0 || (stride as f64 * dt - step).abs() > 1e-9 * step || !(t_max >= step) {
        return Err(Error::Parameter(format!("step {step} must be a positive multiple of {dt} not above T = {t_max}")));
    }
    let j0 = w
        .grid()
        .index_of(0.0)
        .ok_or_else(|| Error::Window("t = 0 is not a grid node".into()))?;
    let count = (t_max / step + 1e-9).floor() as usize;
    let needed = j0 + count * stride;
    let (_, hi) = f.reach(dt)?;
    if needed as i64 + hi >= w.grid().len() as i64 {
        return Err(Error::Window(format!(
            "window ends at {} but T = {t_max} needs {}",
            w.grid().t_end(),
            (needed as i64 + hi) as f64 * dt + w.grid().t_start()
        )));
    }
    let samples = (0..=count)
        .map(|k| f.eval_at(w.values(), j0 + k * stride, dt))
        .collect::<Result<Vec<f64>>>()?;
    let mut integral = 0.0;
    let mut abscissae = Vec::with_capacity(count);
    let mut partial = Vec::with_capacity(count);
    for k in 1..=count {
        integral += 0.5 * step * (samples[k - 1] + samples[k]);
        let t = k as f64 * step;
        abscissae.push(t);
        partial.push(integral / t);
    }
    Ok(RunningAverages {
        final_value: *partial.last().expect("count ≥ 1"),
        abscissae,
        partial_averages: partial,
        std_err_estimate: batch_std_err(&samples),
    })
}

/// `(1/n)Σ_{m<n} f(S^{mu} ω)` for `n = 1..=n_max`, each `S^{mu}` applied
/// directly on the circular model of `w`'s window.
pub fn birkhoff_flow(w: &OuPath, f: &Observable, u: f64, n_max: usize) -> Result<RunningAverages> {
    if u == 0.0 || !u.is_finite() {
        return Err(Error::Parameter(format!("flow averages need a finite u ≠ 0, got {u}")));
    }
    if n_max == 0 {
        return Err(Error::Parameter("n_max must be positive".into()));
    }
    f.eval(w)?;
    let plan = FlowPlan::circular(*w.grid());
    let prep = plan.prepare(w)?;
    let dt = w.grid().dt();
    let (lo, hi) = f.reach(dt)?;
    let samples = if hi - lo < LOCAL_NODES {
        // only the nodes the observable reads
        let j0 = w.grid().index_of(0.0).expect("checked by eval") as i64;
        let nodes: Vec<usize> = (j0 + lo..=j0 + hi).map(|j| j as usize).collect();
        prep.iterate_at(&nodes, u, n_max)?
            .iter()
            .map(|local| f.eval_at(local, (-lo) as usize, dt))
            .collect::<Result<Vec<f64>>>()?
    } else {
        par::map_range(n_max, |m| f.eval(&prep.apply(m as f64 * u)?))
            .into_iter()
            .collect::<Result<Vec<f64>>>()?
    };
    let mut acc = 0.0;
    let mut partial = Vec::with_capacity(n_max);
    for (m, s) in samples.iter().enumerate() {
        acc += s;
        partial.push(acc / (m + 1) as f64);
    }
    Ok(RunningAverages {
        abscissae: (1..=n_max).map(|n| n as f64).collect(),
        final_value: *partial.last().expect("n_max ≥ 1"),
        partial_averages: partial,
        std_err_estimate: batch_std_err(&samples),
    })
}

/// Default window for flow averages: 8192 nodes at step 0.5, origin in the
/// middle.
pub fn default_flow_grid() -> TimeGrid {
    TimeGrid::new(-2048.0, 0.5, 8192).expect("valid constant grid")
}

/// Default window for translation averages up to `t_max`, step 1/4.
pub fn default_translation_grid(t_max: f64) -> Result<TimeGrid> {
    TimeGrid::spanning(-8.0, t_max + 8.0, 0.25)
}

/// [`birkhoff_flow`] on a fresh OU path from `stream`.
pub fn flow_average_for_seed(f: &Observable, u: f64, n_max: usize, stream: RngStream) -> Result<RunningAverages> {
    birkhoff_flow(&sample_ou(default_flow_grid(), stream), f, u, n_max)
}

/// [`birkhoff_translation`] on a fresh OU path from `stream`.
pub fn translation_average_for_seed(f: &Observable, t_max: f64, step: f64, stream: RngStream) -> Result<RunningAverages> {
    let grid = default_translation_grid(t_max)?;
    birkhoff_translation(&sample_ou(grid, stream), f, t_max, step)
}
