//! Command-line front end. Each command's keys double as `--flags` and as
//! entries of an optional `--config` file; see [`crate::config`].
//!
//! Arrays go to CSV, reports to JSON, and every command writes a sidecar
//! `<out>.meta.json` with the resolved configuration.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use clap::{Arg, ArgMatches, Command};
use serde_json::{json, Value};

use crate::config::{parse_flat, KeySpec, RunConfig};
use crate::covariance::{range_grid, CovarianceTable};
use crate::ergodic::{birkhoff_flow, birkhoff_translation, default_flow_grid, default_translation_grid, Observable};
use crate::flow::{apply_flow, FlowPlan, IMAG_RESIDUE_LIMIT};
use crate::gaussian::{sample_ou, FieldSampler, RngStream};
use crate::kernel::{apply_fractional_kernel_with, decompose, DEFAULT_PV_STEPS};
use crate::paths::fmt_f64;
use crate::verify::{criteria, run_selected, VerifyOptions};
use crate::{Error, OuPath, Result, TimeGrid};

const SAMPLE_OU: &[KeySpec] = &[
    KeySpec::new("t_min", "-10", "first node"),
    KeySpec::new("t_max", "10", "last node"),
    KeySpec::new("dt", "0.01", "grid step"),
    KeySpec::new("seed", "0", "RNG seed"),
    KeySpec::new("stream", "0", "RNG stream id"),
    KeySpec::required("out", "output CSV (t,value)"),
];

const TRANSFORM: &[KeySpec] = &[
    KeySpec::required("in", "input CSV (t,value) on a uniform grid"),
    KeySpec::required("out", "output CSV (t,value)"),
    KeySpec::required("u", "flow parameter"),
    KeySpec::new("method", "spectral", "spectral | kernel"),
    KeySpec::new("boundary", "padded", "spectral boundary model: padded | circular"),
    KeySpec::new("central_fraction", "0.5", "spectral: fraction of the window written out"),
    KeySpec::new("eps_pv", "auto", "kernel: principal-value radius (auto = 16 steps)"),
    KeySpec::new("tail_tol", "1e-10", "kernel: bound on the truncated kernel tail"),
];

const KERNEL: &[KeySpec] = &[
    KeySpec::new("u", "0.5", "flow parameter"),
    KeySpec::new("x_min", "-5", "first abscissa"),
    KeySpec::new("x_max", "5", "last abscissa"),
    KeySpec::new("x_step", "0.01", "abscissa step (x = 0 is skipped)"),
    KeySpec::required("out", "output CSV (x,atom_coeff,pv_coeff,phi)"),
];

const COV: &[KeySpec] = &[
    KeySpec::new("dt_min", "-5", "first time lag"),
    KeySpec::new("dt_max", "5", "last time lag"),
    KeySpec::new("dt_step", "0.5", "time-lag step"),
    KeySpec::new("du_min", "-2", "first parameter lag"),
    KeySpec::new("du_max", "2", "last parameter lag"),
    KeySpec::new("du_step", "0.5", "parameter-lag step"),
    KeySpec::new("abs_err", "1e-8", "absolute accuracy per entry"),
    KeySpec::required("out", "output CSV (dt,du,cov)"),
];

const FIELD: &[KeySpec] = &[
    KeySpec::new("u_min", "0", "first flow parameter"),
    KeySpec::new("u_max", "1", "last flow parameter"),
    KeySpec::new("u_step", "0.5", "flow-parameter step"),
    KeySpec::new("t_min", "-5", "first node"),
    KeySpec::new("t_max", "5", "last node"),
    KeySpec::new("dt", "0.25", "grid step"),
    KeySpec::new("jitter", "0", "initial diagonal jitter"),
    KeySpec::new("seed", "0", "RNG seed"),
    KeySpec::new("stream", "0", "RNG stream id"),
    KeySpec::required("out", "output CSV (u,t,value)"),
];

const ERGODIC: &[KeySpec] = &[
    KeySpec::new("mode", "flow", "flow | translation"),
    KeySpec::new("u", "0.7", "flow: step parameter"),
    KeySpec::new("n", "4096", "flow: number of iterates"),
    KeySpec::new("t_max", "1000", "translation: horizon"),
    KeySpec::new("step", "0.25", "translation: quadrature step"),
    KeySpec::new("obs", "value_square_at_0", "value_square_at_0 | value_at_0 | product_lag:<tau>"),
    KeySpec::new("seed", "0", "RNG seed"),
    KeySpec::new("stream", "0", "RNG stream id"),
    KeySpec::required("out", "output JSON report"),
];

const VERIFY: &[KeySpec] = &[
    KeySpec::new("seed", "20240917", "RNG seed"),
    KeySpec::new("tolerance_scale", "1", "multiplies every tolerance"),
    KeySpec::new("criteria", "all", "comma-separated criterion ids, or all"),
    KeySpec::new("out", "verify-report.json", "output JSON report"),
];

const COMMANDS: &[(&str, &str, &[KeySpec])] = &[
    ("sample-ou", "Sample a stationary OU path", SAMPLE_OU),
    ("transform", "Apply S^u to a path", TRANSFORM),
    ("kernel", "Tabulate the fractional kernel", KERNEL),
    ("cov", "Tabulate the field covariance", COV),
    ("field", "Draw the two-parameter Gaussian field", FIELD),
    ("ergodic", "Birkhoff averages along the flow or translations", ERGODIC),
    ("verify", "Run the acceptance checks", VERIFY),
];

pub fn command() -> Command {
    let mut root = Command::new("ouflow")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Measure-preserving flow on Ornstein-Uhlenbeck path space")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about, specs) in COMMANDS {
        let mut sub = Command::new(*name).about(*about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("flat key = value file; flags override it"),
        );
        for s in *specs {
            let help = match s.default {
                Some(d) => format!("{} [default: {d}]", s.doc),
                None => format!("{} [required]", s.doc),
            };
            sub = sub.arg(
                Arg::new(s.key)
                    .long(s.key.replace('_', "-"))
                    .value_name("VALUE")
                    .allow_hyphen_values(true)
                    .help(help),
            );
        }
        root = root.subcommand(sub);
    }
    root
}

fn specs_for(name: &str) -> Result<&'static [KeySpec]> {
    COMMANDS
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|(_, _, s)| *s)
        .ok_or_else(|| Error::Parameter(format!("unknown command {name}")))
}

/// Resolves the configuration of a parsed subcommand.
pub fn resolve(name: &str, m: &ArgMatches, env_seed: Option<&str>) -> Result<RunConfig> {
    let specs = specs_for(name)?;
    let file = match m.get_one::<String>("config") {
        Some(p) => parse_flat(&std::fs::read_to_string(p)?)?,
        None => Vec::new(),
    };
    let flags: Vec<(String, String)> = specs
        .iter()
        .filter_map(|s| m.get_one::<String>(s.key).map(|v| (s.key.to_string(), v.clone())))
        .collect();
    RunConfig::resolve(name, specs, &file, &flags, env_seed)
}

/// Runs the parsed command; returns the process exit code.
pub fn dispatch(m: &ArgMatches, env_seed: Option<&str>) -> Result<u8> {
    let (name, sub) = m
        .subcommand()
        .ok_or_else(|| Error::Parameter("no command given".into()))?;
    let cfg = resolve(name, sub, env_seed)?;
    match name {
        "sample-ou" => cmd_sample_ou(&cfg),
        "transform" => cmd_transform(&cfg),
        "kernel" => cmd_kernel(&cfg),
        "cov" => cmd_cov(&cfg),
        "field" => cmd_field(&cfg),
        "ergodic" => cmd_ergodic(&cfg),
        "verify" => cmd_verify(&cfg),
        other => Err(Error::Parameter(format!("unknown command {other}"))),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, T>(args: I, env_seed: Option<&str>) -> Result<u8>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let m = command()
        .try_get_matches_from(args)
        .map_err(|e| Error::Parameter(e.to_string()))?;
    dispatch(&m, env_seed)
}

fn sidecar_path(out: &str) -> String {
    format!("{out}.meta.json")
}

fn write_outputs(cfg: &RunConfig, body: &[u8], metadata: Value) -> Result<()> {
    let out = cfg.get_str("out")?;
    write_file(out, body)?;
    write_file(&sidecar_path(out), cfg.sidecar(metadata).as_bytes())
}

fn write_file(path: &str, body: &[u8]) -> Result<()> {
    if let Some(dir) = Path::new(path).parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(body)?;
    f.flush()?;
    Ok(())
}

fn stream(cfg: &RunConfig) -> Result<RngStream> {
    Ok(RngStream::new(cfg.get("seed")?, cfg.get("stream")?))
}

fn grid_json(g: &TimeGrid) -> Value {
    json!({"t_start": g.t_start(), "dt": g.dt(), "n": g.len()})
}

fn csv_of(path: &OuPath) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    path.write_csv(&mut buf)?;
    Ok(buf)
}

fn cmd_sample_ou(cfg: &RunConfig) -> Result<u8> {
    let grid = TimeGrid::spanning(cfg.get("t_min")?, cfg.get("t_max")?, cfg.get("dt")?)?;
    let s = stream(cfg)?;
    let w = sample_ou(grid, s);
    write_outputs(cfg, &csv_of(&w)?, json!({"grid": grid_json(&grid), "rng": s}))?;
    Ok(0)
}

fn cmd_transform(cfg: &RunConfig) -> Result<u8> {
    let w = OuPath::read_csv(BufReader::new(File::open(cfg.get_str("in")?)?))?;
    let u: f64 = cfg.get("u")?;
    let (out, meta) = match cfg.get_str("method")? {
        "spectral" => {
            let plan = match cfg.get_str("boundary")? {
                "padded" => FlowPlan::new(*w.grid())?,
                "circular" => FlowPlan::circular(*w.grid()),
                b => return Err(Error::Parameter(format!("boundary must be padded or circular, got {b:?}"))),
            };
            let fraction: f64 = cfg.get("central_fraction")?;
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::Parameter(format!("central_fraction = {fraction} must lie in (0, 1]")));
            }
            let full = apply_flow(&w, u, &plan)?;
            let r = plan.central_range(fraction);
            let kept = full.slice(r.start, r.end)?;
            let meta = json!({
                "input_grid": grid_json(w.grid()),
                "output_grid": grid_json(kept.grid()),
                "boundary": format!("{:?}", plan.boundary()).to_lowercase(),
                "padded_len": plan.padded_len(),
                "pad_left": plan.pad_left(),
                "pad_right": plan.pad_right(),
                "taper_width": plan.taper_width(),
                "imag_residue_limit": IMAG_RESIDUE_LIMIT * w.sup_abs(),
            });
            (kept, meta)
        }
        "kernel" => {
            let dt = w.grid().dt();
            let eps = match cfg.get_str("eps_pv")? {
                "auto" => DEFAULT_PV_STEPS as f64 * dt,
                _ => cfg.get("eps_pv")?,
            };
            let r = apply_fractional_kernel_with(&w, u, eps, cfg.get("tail_tol")?)?;
            let meta = json!({
                "input_grid": grid_json(w.grid()),
                "output_grid": grid_json(r.path.grid()),
                "margin": r.margin,
                "tail_bound": r.tail_bound,
                "eps_pv": r.eps_pv,
                "eps_snapped": r.eps_snapped,
            });
            (r.path, meta)
        }
        m => return Err(Error::Parameter(format!("method must be spectral or kernel, got {m:?}"))),
    };
    write_outputs(cfg, &csv_of(&out)?, meta)?;
    Ok(0)
}

fn cmd_kernel(cfg: &RunConfig) -> Result<u8> {
    let u: f64 = cfg.get("u")?;
    let xs = range_grid(cfg.get("x_min")?, cfg.get("x_max")?, cfg.get("x_step")?)?;
    let dec = decompose(u);
    let mut body = String::from("x,atom_coeff,pv_coeff,phi\n");
    let mut skipped = 0;
    for &x in &xs {
        if x == 0.0 {
            skipped += 1;
            continue;
        }
        body.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(x),
            fmt_f64(dec.atom_coeff),
            fmt_f64(dec.pv_coeff),
            fmt_f64(dec.phi(x)?)
        ));
    }
    write_outputs(cfg, body.as_bytes(), json!({"rows": xs.len() - skipped, "skipped_origin": skipped > 0}))?;
    Ok(0)
}

fn cmd_cov(cfg: &RunConfig) -> Result<u8> {
    let d_t = range_grid(cfg.get("dt_min")?, cfg.get("dt_max")?, cfg.get("dt_step")?)?;
    let d_u = range_grid(cfg.get("du_min")?, cfg.get("du_max")?, cfg.get("du_step")?)?;
    let table = CovarianceTable::compute(&d_t, &d_u, cfg.get("abs_err")?)?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    write_outputs(cfg, &buf, json!({"rows": d_t.len() * d_u.len()}))?;
    Ok(0)
}

fn cmd_field(cfg: &RunConfig) -> Result<u8> {
    let us = range_grid(cfg.get("u_min")?, cfg.get("u_max")?, cfg.get("u_step")?)?;
    let grid = TimeGrid::spanning(cfg.get("t_min")?, cfg.get("t_max")?, cfg.get("dt")?)?;
    let s = stream(cfg)?;
    let sampler = FieldSampler::new(&us, grid, cfg.get("jitter")?)?;
    let sample = sampler.draw(s);
    let mut body = String::from("u,t,value\n");
    for (u, row) in sample.u_grid.iter().zip(&sample.values) {
        for (t, v) in grid.times().zip(row) {
            body.push_str(&format!("{},{},{}\n", fmt_f64(*u), fmt_f64(t), fmt_f64(*v)));
        }
    }
    let meta = json!({
        "u_grid": us,
        "t_grid": grid_json(&grid),
        "dimension": us.len() * grid.len(),
        "jitter_used": sampler.jitter_used(),
        "rng": s,
    });
    write_outputs(cfg, body.as_bytes(), meta)?;
    Ok(0)
}

fn cmd_ergodic(cfg: &RunConfig) -> Result<u8> {
    let obs: Observable = cfg.get_str("obs")?.parse()?;
    let s = stream(cfg)?;
    let (avg, params) = match cfg.get_str("mode")? {
        "flow" => {
            let u: f64 = cfg.get("u")?;
            let n: usize = cfg.get("n")?;
            let grid = default_flow_grid();
            let avg = birkhoff_flow(&sample_ou(grid, s), &obs, u, n)?;
            (avg, json!({"mode": "flow", "u": u, "n": n, "grid": grid_json(&grid)}))
        }
        "translation" => {
            let t_max: f64 = cfg.get("t_max")?;
            let step: f64 = cfg.get("step")?;
            let grid = default_translation_grid(t_max)?;
            let avg = birkhoff_translation(&sample_ou(grid, s), &obs, t_max, step)?;
            (avg, json!({"mode": "translation", "t_max": t_max, "step": step, "grid": grid_json(&grid)}))
        }
        m => return Err(Error::Parameter(format!("mode must be flow or translation, got {m:?}"))),
    };
    let mut params = params;
    params["obs"] = json!(obs.to_string());
    params["seed"] = json!(s.seed);
    params["stream"] = json!(s.stream_id);
    let report = json!({
        "params": params,
        "partial_averages": avg.partial_averages,
        "final": avg.final_value,
        "std_err_estimate": avg.std_err_estimate,
    });
    let body = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_outputs(cfg, body.as_bytes(), json!({"final": avg.final_value}))?;
    Ok(0)
}

fn cmd_verify(cfg: &RunConfig) -> Result<u8> {
    let opts = VerifyOptions {
        seed: cfg.get("seed")?,
        tolerance_scale: cfg.get("tolerance_scale")?,
    };
    if !(opts.tolerance_scale >= 0.0) {
        return Err(Error::Parameter(format!("tolerance_scale = {} must be ≥ 0", opts.tolerance_scale)));
    }
    let all = criteria();
    let selected: Vec<&str> = match cfg.get_str("criteria")? {
        "all" => all.clone(),
        list => {
            let ids: Vec<&str> = list.split(',').map(str::trim).collect();
            if let Some(bad) = ids.iter().find(|id| !all.contains(id)) {
                return Err(Error::Parameter(format!("unknown criterion {bad:?}")));
            }
            all.iter().copied().filter(|id| ids.contains(id)).collect()
        }
    };
    let (report, timings) = run_selected(&opts, &selected);
    for c in &report.checks {
        println!(
            "{} [{}] {}: achieved {:e}, target {:e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.criterion,
            c.name,
            c.achieved,
            c.target
        );
    }
    for (id, t) in &timings {
        eprintln!("criterion {id}: {:.3} s", t.as_secs_f64());
    }
    let body = report.to_json() + "\n";
    let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
    write_outputs(cfg, body.as_bytes(), json!({"criteria": selected, "failed": failed}))?;
    Ok(if report.all_pass { 0 } else { 1 })
}
