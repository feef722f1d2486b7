//! The acceptance suite: every criterion as one or more named checks with a
//! target, the value achieved and a verdict.
//!
//! The report is deterministic for a given [`VerifyOptions`]; wall-clock
//! timings are returned separately so that reports compare byte for byte.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::Serialize;

use crate::covariance::{continuity_constant, cov, range_grid, CovarianceQuery, MIN_ABS_ERR};
use crate::ergodic::{flow_average_for_seed, translation_average_for_seed, Observable};
use crate::flow::{apply_flow, group_law_defect, FlowPlan};
use crate::gaussian::{field_vs_flow_multi, sample_ou, RngStream};
use crate::kernel::{apply_fractional_kernel, ode_residual, phi_eval, phi_fourier, phi_fourier_expected};
use crate::paths::{f_forward, hu_norm_spectral, scale, translate, WienerPath};
use crate::specfun::{laguerre_deriv, multiplier_eval};
use crate::transform::{jeulin_yor_wiener, s_time_domain, ConvolutionOptions};
use crate::{OuPath, Result, TimeGrid};

/// How `achieved` must compare with `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Below,
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub criterion: String,
    pub relation: Relation,
    pub target: f64,
    /// `null` in JSON when the computation itself failed.
    pub achieved: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    fn new(criterion: &str, name: &str, relation: Relation, target: f64, achieved: f64) -> Self {
        let pass = match relation {
            Relation::Below => achieved < target,
            Relation::AtMost => achieved <= target,
            Relation::AtLeast => achieved >= target,
        };
        Check {
            name: name.to_string(),
            criterion: criterion.to_string(),
            relation,
            target,
            achieved,
            pass,
            detail: None,
        }
    }

    fn failed(criterion: &str, err: crate::Error) -> Self {
        Check {
            name: format!("criterion {criterion}"),
            criterion: criterion.to_string(),
            relation: Relation::Below,
            target: 0.0,
            achieved: f64::NAN,
            pass: false,
            detail: Some(err.to_string()),
        }
    }

    fn with_detail(mut self, detail: String) -> Self {
        self.detail = Some(detail);
        self
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Multiplies every tolerance; `0` makes every tolerance check fail.
    pub tolerance_scale: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 20_240_917,
            tolerance_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub options: VerifyOptions,
    pub checks: Vec<Check>,
    pub all_pass: bool,
}

impl VerifyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Wall-clock time per criterion, in the order run.
pub type Timings = Vec<(String, Duration)>;

type CriterionFn = fn(&VerifyOptions) -> Result<Vec<Check>>;

const CRITERIA: [(&str, CriterionFn); 14] = [
    ("1", multiplier_algebra),
    ("2", covariance_slices),
    ("3", unit_flow_vs_convolution),
    ("4", group_law),
    ("5", kernel_vs_spectral),
    ("6", integer_limit),
    ("7", ode),
    ("8", phi_transform),
    ("9", isometry),
    ("10", monte_carlo_covariance),
    ("11", ergodic_averages),
    ("12", continuity),
    ("13", conjugation),
    ("14", determinism),
];

/// Criterion identifiers in run order.
pub fn criteria() -> Vec<&'static str> {
    CRITERIA.iter().map(|(id, _)| *id).collect()
}

/// Runs all criteria.
pub fn run(opts: &VerifyOptions) -> (VerifyReport, Timings) {
    run_selected(opts, &criteria())
}

/// Runs the listed criteria (by identifier) in the standard order.
pub fn run_selected(opts: &VerifyOptions, ids: &[&str]) -> (VerifyReport, Timings) {
    let mut checks = Vec::new();
    let mut timings = Vec::new();
    for (id, f) in CRITERIA.iter().filter(|(id, _)| ids.contains(id)) {
        let start = Instant::now();
        match f(opts) {
            Ok(cs) => checks.extend(cs),
            Err(e) => checks.push(Check::failed(id, e)),
        }
        timings.push((id.to_string(), start.elapsed()));
    }
    let all_pass = checks.iter().all(|c| c.pass);
    (
        VerifyReport {
            options: *opts,
            checks,
            all_pass,
        },
        timings,
    )
}

fn max_abs_diff(a: &OuPath, b: &OuPath, t_min: f64, t_max: f64) -> Result<f64> {
    let off = a
        .grid()
        .offset_of(b.grid())
        .ok_or_else(|| crate::Error::Parameter("paths do not share a lattice".into()))?;
    let mut worst: f64 = 0.0;
    for (j, t) in a.grid().times().enumerate() {
        let jb = j as i64 - off;
        if t >= t_min && t <= t_max && jb >= 0 && (jb as usize) < b.values().len() {
            worst = worst.max((a.values()[j] - b.values()[jb as usize]).abs());
        }
    }
    Ok(worst)
}

fn bump(t: f64) -> f64 {
    (-t * t / 8.0).exp() * (1.0 + 0.3 * (0.8 * t).sin())
}

fn bump_path(dt: f64) -> Result<OuPath> {
    OuPath::from_fn(TimeGrid::spanning(-100.0, 100.0, dt)?, bump)
}

fn multiplier_algebra(o: &VerifyOptions) -> Result<Vec<Check>> {
    let us: Vec<f64> = (-16..=16).map(|k| k as f64 * 0.25 + 0.0625).collect();
    let mut lambdas: Vec<f64> = (-200..=200).map(|k| k as f64 * 0.25).collect();
    lambdas.extend([1e3, -1e3, 1e6, -1e6]);
    let mut unit: f64 = 0.0;
    let mut group: f64 = 0.0;
    for &u in &us {
        for &l in &lambdas {
            let m = multiplier_eval(u, l);
            unit = unit.max((m.norm() - 1.0).abs());
            for &v in us.iter().step_by(4) {
                let d = (m * multiplier_eval(v, l) - multiplier_eval(u + v, l)).norm();
                group = group.max(d);
            }
        }
    }
    let tol = 1e-12 * o.tolerance_scale;
    Ok(vec![
        Check::new("1", "multiplier modulus", Relation::Below, tol, unit),
        Check::new("1", "multiplier group law", Relation::Below, tol, group),
    ])
}

fn covariance_slices(o: &VerifyOptions) -> Result<Vec<Check>> {
    let tol = 1e-8 * o.tolerance_scale;
    let mut time_slice: f64 = 0.0;
    for k in 0..=100 {
        let d_t = k as f64 * 0.1;
        let c = cov(CovarianceQuery::new(d_t, 0.0)?, MIN_ABS_ERR)?;
        time_slice = time_slice.max((c - (-d_t.abs() / 2.0).exp()).abs());
    }
    let mut sinc_slice: f64 = 0.0;
    for k in 1..=40 {
        for d_u in [k as f64 * 0.1, -(k as f64) * 0.1] {
            let c = cov(CovarianceQuery::new(0.0, d_u)?, MIN_ABS_ERR)?;
            sinc_slice = sinc_slice.max((c - (PI * d_u).sin() / (PI * d_u)).abs());
        }
    }
    let mut integers: f64 = 0.0;
    for n in 1..=5 {
        integers = integers.max(cov(CovarianceQuery::new(0.0, n as f64)?, MIN_ABS_ERR)?.abs());
    }
    Ok(vec![
        Check::new("2", "cov(dt, 0) = exp(-|dt|/2)", Relation::Below, tol, time_slice),
        Check::new("2", "cov(0, du) = sinc", Relation::Below, tol, sinc_slice),
        Check::new("2", "cov(0, n) = 0", Relation::Below, tol, integers),
    ])
}

fn unit_flow_vs_convolution(o: &VerifyOptions) -> Result<Vec<Check>> {
    let w = bump_path(1.0 / 32.0)?;
    let plan = FlowPlan::new(*w.grid())?;
    let spectral = apply_flow(&w, 1.0, &plan)?;
    let direct = s_time_domain(&w, ConvolutionOptions::default())?;
    let d = max_abs_diff(&spectral, &direct.path, -50.0, 50.0)?;
    Ok(vec![Check::new(
        "3",
        "flow at u = 1 vs convolution with mu",
        Relation::Below,
        1e-6 * o.tolerance_scale,
        d,
    )])
}

fn group_law(o: &VerifyOptions) -> Result<Vec<Check>> {
    let w = bump_path(1.0 / 32.0)?;
    let plan = FlowPlan::new(*w.grid())?;
    [(0.3, 0.7), (-1.2, 1.2), (1.5, -0.4)]
        .iter()
        .map(|&(u, v)| {
            let d = group_law_defect(&w, u, v, &plan)?;
            Ok(Check::new(
                "4",
                &format!("group law defect ({u}, {v})"),
                Relation::Below,
                1e-6 * o.tolerance_scale,
                d,
            ))
        })
        .collect()
}

/// Step for the OU comparison. Sampled paths carry energy up to Nyquist,
/// where no kernel discretization agrees with the band-limited multiplier
/// exactly; at this step the gap is a few times 1e-4.
const OU_KERNEL_DT: f64 = 1.0 / 128.0;

fn kernel_vs_spectral(o: &VerifyOptions) -> Result<Vec<Check>> {
    let us = [0.3, 0.5, 1.5, -0.7];
    let mut checks = Vec::new();
    let dt = 1.0 / 64.0;
    let w = bump_path(dt)?;
    let plan = FlowPlan::new(*w.grid())?;
    for &u in &us {
        let k = apply_fractional_kernel(&w, u, 16.0 * dt)?;
        let f = apply_flow(&w, u, &plan)?;
        let d = max_abs_diff(&f, &k.path, -25.0, 25.0)?;
        checks.push(Check::new(
            "5",
            &format!("kernel vs flow on a bump, u = {u}"),
            Relation::Below,
            1e-4 * o.tolerance_scale,
            d,
        ));
    }
    let grid = TimeGrid::spanning(-100.0, 100.0, OU_KERNEL_DT)?;
    let plan = FlowPlan::new(grid)?;
    let w = sample_ou(grid, RngStream::new(o.seed, 5));
    for &u in &us {
        let k = apply_fractional_kernel(&w, u, 16.0 * OU_KERNEL_DT)?;
        let f = apply_flow(&w, u, &plan)?;
        let d = max_abs_diff(&f, &k.path, -25.0, 25.0)?;
        checks.push(Check::new(
            "5",
            &format!("kernel vs flow on an OU path, u = {u}"),
            Relation::Below,
            1e-3 * o.tolerance_scale,
            d,
        ));
    }
    Ok(checks)
}

fn integer_limit(o: &VerifyOptions) -> Result<Vec<Check>> {
    (0..=2i64)
        .map(|n| {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let mut worst: f64 = 0.0;
            for j in 0..=490 {
                let x = 0.1 + j as f64 * 0.01;
                let limit = sign * (-x / 2.0).exp() * laguerre_deriv(n, x)?;
                worst = worst.max((phi_eval(n as f64 + 1e-4, x)? - limit).abs());
            }
            Ok(Check::new(
                "6",
                &format!("Phi near u = {n}"),
                Relation::Below,
                1e-2 * o.tolerance_scale,
                worst,
            ))
        })
        .collect()
}

fn ode(o: &VerifyOptions) -> Result<Vec<Check>> {
    let xs = [-5.0, -2.0, -1.0, -0.5, 0.5, 1.0, 2.0, 5.0];
    [0.5, 1.7]
        .iter()
        .map(|&u| {
            Ok(Check::new(
                "7",
                &format!("theta ODE residual, u = {u}"),
                Relation::Below,
                1e-4 * o.tolerance_scale,
                ode_residual(u, &xs)?,
            ))
        })
        .collect()
}

fn phi_transform(o: &VerifyOptions) -> Result<Vec<Check>> {
    // λ = 0 excluded: both sides jump there
    let lambdas: Vec<f64> = (-80..=80).filter(|&k| k != 0).map(|k| k as f64 * 0.25).collect();
    [0.3, 0.5]
        .iter()
        .map(|&u| {
            let got = phi_fourier(u, &lambdas)?;
            let worst = lambdas
                .iter()
                .zip(&got)
                .map(|(&l, g)| (g - phi_fourier_expected(u, l)).norm())
                .fold(0.0, f64::max);
            Ok(Check::new(
                "8",
                &format!("Fourier transform of Phi, u = {u}"),
                Relation::Below,
                1e-4 * o.tolerance_scale,
                worst,
            ))
        })
        .collect()
}

fn isometry(o: &VerifyOptions) -> Result<Vec<Check>> {
    let grid = TimeGrid::spanning(-40.0, 40.0, 1.0 / 8.0)?;
    let plan = FlowPlan::circular(grid);
    let mut rng = RngStream::new(o.seed, 9).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let a: f64 = rng.random_range(0.2..2.0);
        let c: f64 = rng.random_range(-5.0..5.0);
        let f: f64 = rng.random_range(0.0..3.0);
        let u: f64 = rng.random_range(-4.0..4.0);
        let w = OuPath::from_fn(grid, |t| (-(t - c).powi(2) * a / 4.0).exp() * (f * t).cos())?;
        let before = hu_norm_spectral(&w);
        let after = hu_norm_spectral(&apply_flow(&w, u, &plan)?);
        worst = worst.max((after - before).abs() / before);
    }
    Ok(vec![Check::new(
        "9",
        "relative change of the H^U norm",
        Relation::Below,
        1e-10 * o.tolerance_scale,
        worst,
    )])
}

fn monte_carlo_covariance(o: &VerifyOptions) -> Result<Vec<Check>> {
    let reports = field_vs_flow_multi(10_000, &[0.5, 1.0, 2.0], &[0.0], RngStream::new(o.seed, 10))?;
    Ok(reports
        .iter()
        .map(|r| {
            Check::new(
                "10",
                &format!("E[w(0) S^u w(0)] vs cov(0, u), u = {}", r.u),
                Relation::Below,
                5.0 * o.tolerance_scale,
                r.max_z,
            )
            .with_detail(format!(
                "empirical {:.6}, expected {:.6}, std err {:.2e}",
                r.empirical[0], r.expected[0], r.std_err[0]
            ))
        })
        .collect())
}

fn ergodic_averages(o: &VerifyOptions) -> Result<Vec<Check>> {
    let tol = 0.1 * o.tolerance_scale;
    let mut within = 0;
    let mut finals = Vec::new();
    for s in 0..10 {
        let avg = flow_average_for_seed(&Observable::ValueSquareAt0, 0.7, 1 << 12, RngStream::new(o.seed + s, 11))?;
        if (avg.final_value - 1.0).abs() <= tol {
            within += 1;
        }
        finals.push(format!("{:.4}", avg.final_value));
    }
    let trans = translation_average_for_seed(&Observable::ProductLag(1.0), 1000.0, 0.25, RngStream::new(o.seed, 12))?;
    Ok(vec![
        Check::new(
            "11",
            "flow averages of w(0)^2 within 0.1 of 1 (seeds of 10)",
            Relation::AtLeast,
            8.0,
            within as f64,
        )
        .with_detail(format!("finals [{}]", finals.join(", "))),
        Check::new(
            "11",
            "translation average of w(0)w(1) vs exp(-1/2)",
            Relation::AtMost,
            tol,
            (trans.final_value - (-0.5f64).exp()).abs(),
        ),
    ])
}

fn continuity(o: &VerifyOptions) -> Result<Vec<Check>> {
    let g = range_grid(-2.0, 2.0, 0.1)?;
    let c = continuity_constant(&g, &g)?;
    Ok(vec![Check::new(
        "12",
        "smallest continuity constant C",
        Relation::AtMost,
        10.0 * o.tolerance_scale,
        c,
    )])
}

/// Distance in units in the last place.
fn ulps(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if a.signum() != b.signum() {
        return f64::INFINITY;
    }
    (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs() as f64
}

fn conjugation(o: &VerifyOptions) -> Result<Vec<Check>> {
    let grid = TimeGrid::new(-3.0, 1.0 / 32.0, 193)?;
    let g = WienerPath::from_fn(WienerPath::geometric_nodes(&grid), |x| x.sqrt() * (-(x.ln()).powi(2)).exp())?;
    let mut worst_ulps: f64 = 0.0;
    let mut worst_start: f64 = 0.0;
    for alpha in [0.5, 2.0, 4.0] {
        let lhs = f_forward(&scale(&g, alpha)?)?;
        let rhs = translate(&f_forward(&g)?, alpha.ln());
        worst_start = worst_start.max((lhs.grid().t_start() - rhs.grid().t_start()).abs());
        for (a, b) in lhs.values().iter().zip(rhs.values()) {
            worst_ulps = worst_ulps.max(ulps(*a, *b));
        }
    }

    let grid = TimeGrid::spanning(-60.0, 20.0, 1.0 / 64.0)?;
    let theta = WienerPath::from_fn(WienerPath::geometric_nodes(&grid), |x| x.sqrt() * bump(x.ln()))?;
    let jy = f_forward(&jeulin_yor_wiener(&theta))?;
    let lhs = OuPath::new(*jy.grid(), jy.values().iter().map(|v| -v).collect())?;
    let rhs = s_time_domain(&f_forward(&theta)?, ConvolutionOptions::default())?;
    let d = max_abs_diff(&lhs, &rhs.path, -10.0, 10.0)?;
    Ok(vec![
        Check::new(
            "13",
            "F(scale(g, a)) vs translate(F(g), log a), ulps",
            Relation::AtMost,
            (4.0 * o.tolerance_scale).floor(),
            worst_ulps,
        )
        .with_detail(format!("grid origins differ by {worst_start:.1e}")),
        Check::new(
            "13",
            "Jeulin-Yor conjugation on a smooth Wiener path",
            Relation::Below,
            1e-4 * o.tolerance_scale,
            d,
        ),
    ])
}

/// Reruns the randomized pieces at reduced size and compares bit patterns.
fn determinism(o: &VerifyOptions) -> Result<Vec<Check>> {
    let once = || -> Result<Vec<u64>> {
        let mut bits = Vec::new();
        let grid = TimeGrid::spanning(-50.0, 50.0, 0.125)?;
        let w = sample_ou(grid, RngStream::new(o.seed, 14));
        bits.extend(w.values().iter().map(|v| v.to_bits()));
        let out = apply_flow(&w, 0.7, &FlowPlan::new(grid)?)?;
        bits.extend(out.values().iter().map(|v| v.to_bits()));
        for r in field_vs_flow_multi(200, &[0.5], &[0.0, 1.0], RngStream::new(o.seed, 15))? {
            bits.extend(r.empirical.iter().map(|v| v.to_bits()));
        }
        let avg = flow_average_for_seed(&Observable::ValueSquareAt0, 0.7, 64, RngStream::new(o.seed, 16))?;
        bits.extend(avg.partial_averages.iter().map(|v| v.to_bits()));
        Ok(bits)
    };
    let a = once()?;
    let b = once()?;
    let mismatches = a.iter().zip(&b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len());
    Ok(vec![Check::new(
        "14",
        "bitwise mismatches between identical runs",
        Relation::AtMost,
        0.0,
        mismatches as f64,
    )])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relations() {
        assert!(Check::new("x", "x", Relation::Below, 1.0, 0.5).pass);
        assert!(!Check::new("x", "x", Relation::Below, 1.0, 1.0).pass);
        assert!(Check::new("x", "x", Relation::AtMost, 1.0, 1.0).pass);
        assert!(Check::new("x", "x", Relation::AtLeast, 8.0, 8.0).pass);
        assert!(!Check::new("x", "x", Relation::Below, 1.0, f64::NAN).pass);
    }

    #[test]
    fn ulp_distance() {
        assert_eq!(ulps(1.0, 1.0), 0.0);
        assert_eq!(ulps(1.0, f64::from_bits(1.0f64.to_bits() + 3)), 3.0);
        assert_eq!(ulps(1.0, -1.0), f64::INFINITY);
    }

    #[test]
    fn cheap_criteria_pass_and_fail_on_demand() {
        let ids = ["1", "6", "7"];
        let (report, timings) = run_selected(&VerifyOptions::default(), &ids);
        assert!(report.all_pass, "{}", report.to_json());
        assert_eq!(timings.len(), 3);
        let strict = VerifyOptions {
            tolerance_scale: 0.0,
            ..VerifyOptions::default()
        };
        let (report, _) = run_selected(&strict, &ids);
        assert!(!report.all_pass);
        assert_eq!(report.failures().count(), report.checks.len());
    }

    #[test]
    fn failed_computation_serializes_as_null() {
        let c = Check::failed("3", crate::Error::Parameter("boom".into()));
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("\"achieved\":null"), "{json}");
        assert!(json.contains("boom"));
    }
}
