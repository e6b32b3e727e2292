//! Command-line front end. [`run`] parses argv, dispatches, writes the report
//! to `out` and diagnostics to `err`, and returns the process exit code:
//! 0 on success (a non-converged solve is still a success), 1 on usage or
//! validation errors, 2 on runtime failures.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::exponents::{
    classify_region, derive_exponents, moser_ladder_exponents, weak_form_indices, ExponentTable, SystemParams,
};
use crate::fields::{solution_norms, BoundaryField, FieldSpec, NormExponents, VolumeSamples};
use crate::moser::{appendix_b_sup, ladder, truncation_identity, weak_truncation_balance, TruncationParams};
use crate::solver::{solve_coupled, NonlinearityConfig, Outcome, SolutionPair, SolverConfig};
use crate::sphere::{HarmonicCoeffs, NtdSpectrum, SphereGrid};
use crate::verify::{bound_norms, region_grid, run_sweep, write_region_csv, BoundNorms, KindConfig, SweepSpec};

#[derive(Debug, Parser)]
#[command(name = "nlbc", version, about = "Coupled nonlinear Neumann problems on the unit ball")]
pub struct Cli {
    /// Print the report as JSON.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exponent calculus for (N, p1, p2).
    Exponents(ExponentsArgs),
    /// Spectral self-checks.
    #[command(subcommand)]
    Sphere(SphereCommand),
    /// Norms of the solution with the given Neumann (or Dirichlet) data.
    Norms(NormsArgs),
    /// Solve the coupled system from a TOML or JSON config.
    Solve(SolveArgs),
    /// Truncation identities, integrability ladder and the product bound.
    Moser(MoserArgs),
    /// Sweep coefficient grids and fit the bound constants.
    VerifyBound(VerifyArgs),
    /// Classify a lattice of exponent pairs.
    RegionGrid(RegionArgs),
}

#[derive(Debug, Args)]
pub struct ExponentsArgs {
    #[arg(long = "N")]
    pub n: u32,
    #[arg(long)]
    pub p1: f64,
    #[arg(long)]
    pub p2: f64,
    /// Also list the first I ladder exponents.
    #[arg(long, value_name = "I")]
    pub ladder: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum SphereCommand {
    Selftest {
        #[arg(long, default_value_t = 16)]
        lmax: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FieldKind {
    Constant,
    Harmonic,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FieldRole {
    /// The field is the Neumann data `h`.
    Neumann,
    /// The field is the Dirichlet trace `u`.
    Trace,
}

#[derive(Debug, Args)]
pub struct NormsArgs {
    #[arg(long, default_value_t = 8)]
    pub lmax: usize,
    #[arg(long, value_enum, default_value_t = FieldKind::Constant)]
    pub field: FieldKind,
    #[arg(long, value_enum, default_value_t = FieldRole::Neumann)]
    pub role: FieldRole,
    /// Constant value, or the amplitude of a harmonic / random field.
    #[arg(long, default_value_t = 1.0)]
    pub value: f64,
    #[arg(long, default_value_t = 0)]
    pub l: usize,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub m: i64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub decay: f64,
    #[arg(long, default_value_t = 3)]
    pub oversample: usize,
    #[arg(long, default_value_t = crate::fields::DEFAULT_RADIAL_NODES)]
    pub radial: usize,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Summary JSON (also the input of `moser`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Plain-text dump of the u trace coefficients, `l m value` per line.
    #[arg(long)]
    pub coeffs_u: Option<PathBuf>,
    /// Same for the v trace.
    #[arg(long)]
    pub coeffs_v: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("mode").required(true).args(["identity", "ladder", "appendix_b"])))]
pub struct MoserArgs {
    /// Solution file written by `solve --out`.
    #[arg(long)]
    pub solution: Option<PathBuf>,
    /// Truncation identities for `s` and `L`.
    #[arg(long, num_args = 2, value_names = ["S", "L"])]
    pub identity: Option<Vec<f64>>,
    #[arg(long, value_name = "I_MAX")]
    pub ladder: Option<usize>,
    /// Constrained product bound for `C`, `C~`, `s`.
    #[arg(long = "appendix-b", num_args = 3, value_names = ["C", "CT", "S"])]
    pub appendix_b: Option<Vec<f64>>,
    #[arg(long, default_value_t = 400)]
    pub grid_n: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override the CSV path named in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegionArgs {
    #[arg(long = "N")]
    pub n: f64,
    #[arg(long)]
    pub pmax: f64,
    #[arg(long)]
    pub step: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// `solve` config: solver keys at top level plus `f` and `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    #[serde(flatten)]
    pub solver: SolverConfig,
    pub f: NonlinearityConfig,
    pub g: NonlinearityConfig,
}

/// What `solve --out` writes and `moser --solution` reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub config: SolveConfig,
    pub outcome: Outcome,
    pub iterations: usize,
    pub residual: Option<f64>,
    pub norms: Option<BoundNorms>,
    pub u: Option<HarmonicCoeffs>,
    pub v: Option<HarmonicCoeffs>,
}

impl SolutionFile {
    /// Rebuild the converged pair.
    pub fn to_solution(&self) -> Result<SolutionPair> {
        let (Some(u), Some(v)) = (&self.u, &self.v) else {
            return Err(Error::invalid(format!("solution file holds no traces (outcome {})", self.outcome)));
        };
        let cfg = &self.config;
        let l_max = cfg.solver.l_max;
        let grid = Arc::new(SphereGrid::with_oversample(l_max, cfg.solver.oversample)?);
        SolutionPair::from_traces(cfg.f.build(l_max)?, cfg.g.build(l_max)?, grid, u, v)
    }
}

/// `verify-bound` config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(rename = "N", default = "three")]
    pub n: u32,
    pub p1: f64,
    pub p2: f64,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    pub f: KindConfig,
    pub g: KindConfig,
    pub output: PathBuf,
    pub solver: SolverConfig,
}

fn three() -> u32 {
    3
}

/// Parse TOML, or JSON when the extension is `.json`.
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Solve(_) => 2,
        _ => 1,
    }
}

/// Parse `args` (including the program name) and execute.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(report) => {
            let text = if cli.json {
                serde_json::to_string_pretty(&report).expect("reports serialize") + "\n"
            } else {
                render_text(&report)
            };
            match out.write_all(text.as_bytes()) {
                Ok(()) => 0,
                Err(_) => 2,
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("reports serialize")
}

fn dispatch(cli: &Cli) -> Result<Value> {
    match &cli.command {
        Command::Exponents(a) => exponents_report(a),
        Command::Sphere(SphereCommand::Selftest { lmax }) => Ok(to_value(&crate::sphere::selftest(*lmax)?)),
        Command::Norms(a) => norms_report(a),
        Command::Solve(a) => solve_report(a),
        Command::Moser(a) => moser_report(a),
        Command::VerifyBound(a) => verify_report(a),
        Command::RegionGrid(a) => region_report(a),
    }
}

/// Key names of [`ExponentTable`] as serialized.
fn table_keys() -> Vec<String> {
    let probe = derive_exponents(&SystemParams::new(3, 2.0, 2.0).expect("valid")).expect("strict point");
    match to_value(&probe) {
        Value::Object(m) => m.keys().cloned().collect(),
        _ => unreachable!(),
    }
}

fn exponents_report(a: &ExponentsArgs) -> Result<Value> {
    let params = SystemParams::new(a.n, a.p1, a.p2)?;
    let (region, delta0) = classify_region(&params);
    let mut obj = Map::new();
    obj.insert("N".into(), json!(params.n));
    obj.insert("p1".into(), json!(params.p1));
    obj.insert("p2".into(), json!(params.p2));
    obj.insert("swapped".into(), json!(params.swapped));
    obj.insert("region".into(), json!(region));
    let table: Option<ExponentTable> = derive_exponents(&params).ok();
    match table {
        Some(t) => {
            if let Value::Object(m) = to_value(&t) {
                obj.extend(m);
            }
        }
        None => {
            for k in table_keys() {
                obj.insert(k, Value::Null);
            }
            obj.insert("delta0".into(), json!(delta0));
        }
    }
    obj.insert("weak_form".into(), to_value(&weak_form_indices(&params)?));
    if let Some(i) = a.ladder {
        obj.insert("ladder".into(), to_value(&moser_ladder_exponents(params.n, i)?));
    }
    Ok(Value::Object(obj))
}

fn norms_report(a: &NormsArgs) -> Result<Value> {
    let spec = match a.field {
        FieldKind::Constant => FieldSpec::Constant { value: a.value },
        FieldKind::Harmonic => FieldSpec::Harmonic { l: a.l, m: a.m, amplitude: a.value },
        FieldKind::Random => FieldSpec::Random { seed: a.seed, amplitude: a.value, offset: 0.0, decay: a.decay },
    };
    let grid = Arc::new(SphereGrid::with_oversample(a.lmax, a.oversample)?);
    let field = spec.build(grid.clone())?;
    let spectrum = NtdSpectrum::new(a.lmax)?;
    let (trace, neumann) = match a.role {
        FieldRole::Neumann => (BoundaryField::from_coeffs(grid.clone(), &spectrum.apply(field.coeffs())?)?, field),
        FieldRole::Trace => {
            let h = BoundaryField::from_coeffs(grid.clone(), &spectrum.apply_inverse(field.coeffs())?)?;
            (field, h)
        }
    };
    let volume = VolumeSamples::new(grid, a.radial)?;
    Ok(to_value(&solution_norms(&trace, &neumann, &volume, &NormExponents::default())?))
}

fn write_coeff_dump(path: &Path, c: &HarmonicCoeffs) -> Result<()> {
    let mut s = String::new();
    for (l, m, v) in c.iter() {
        s.push_str(&format!("{l} {m} {}\n", crate::verify::fmt_f64(v)));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Parse(e.to_string()))? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn solve_report(a: &SolveArgs) -> Result<Value> {
    let cfg: SolveConfig = load_config(&a.config)?;
    cfg.solver.validate()?;
    let l_max = cfg.solver.l_max;
    let f = cfg.f.build(l_max)?;
    let g = cfg.g.build(l_max)?;
    let file = match solve_coupled(&f, &g, &cfg.solver) {
        Ok(sol) => SolutionFile {
            config: cfg.clone(),
            outcome: Outcome::Converged,
            iterations: sol.iterations,
            residual: Some(sol.residual),
            norms: Some(bound_norms(&sol)?),
            u: Some(sol.u.coeffs().clone()),
            v: Some(sol.v.coeffs().clone()),
        },
        Err(Error::Solve(e)) => {
            let (iterations, residual) = match &e {
                crate::solver::SolveError::MaxIterations { history } => (history.len(), history.last().copied()),
                crate::solver::SolveError::Blowup { iteration, .. }
                | crate::solver::SolveError::NonFinite { iteration } => (*iteration, None),
            };
            SolutionFile {
                config: cfg.clone(),
                outcome: e.outcome(),
                iterations,
                residual,
                norms: None,
                u: None,
                v: None,
            }
        }
        Err(e) => return Err(e),
    };
    if let Some(p) = &a.out {
        write_json(p, &file)?;
    }
    if let (Some(p), Some(u)) = (&a.coeffs_u, &file.u) {
        write_coeff_dump(p, u)?;
    }
    if let (Some(p), Some(v)) = (&a.coeffs_v, &file.v) {
        write_coeff_dump(p, v)?;
    }
    // The report omits the coefficient arrays.
    Ok(json!({
        "outcome": file.outcome,
        "iterations": file.iterations,
        "residual": file.residual,
        "norms": file.norms,
        "Lmax": l_max,
    }))
}

fn load_solution(a: &MoserArgs) -> Result<SolutionPair> {
    let path = a.solution.as_ref().ok_or_else(|| Error::invalid("--solution is required for this mode"))?;
    let file: SolutionFile = load_config(path)?;
    file.to_solution()
}

fn moser_report(a: &MoserArgs) -> Result<Value> {
    if let Some(v) = &a.appendix_b {
        let r = appendix_b_sup(v[0], v[1], v[2], a.grid_n)?;
        return Ok(json!({ "C": v[0], "Ct": v[1], "s": v[2], "grid_n": a.grid_n, "result": r }));
    }
    let sol = load_solution(a)?;
    if let Some(v) = &a.identity {
        let t = TruncationParams::new(v[0], v[1])?;
        let volume = VolumeSamples::new(Arc::new(SphereGrid::with_oversample(sol.l_max(), 2)?), crate::fields::DEFAULT_RADIAL_NODES)?;
        let energy = truncation_identity(&sol.u, &sol.fu, t, &volume)?;
        let weak = weak_truncation_balance(&sol, t)?;
        return Ok(json!({ "s": t.s, "L": t.cap, "energy_identity": energy, "weak_balance": weak }));
    }
    let i_max = a.ladder.expect("clap enforces one mode");
    let rep = ladder(&sol, i_max)?;
    let normalized: Vec<Value> = rep.normalized().iter().map(|(u, v)| json!({ "u": u, "v": v })).collect();
    let mut v = to_value(&rep);
    v["normalized"] = Value::Array(normalized);
    Ok(v)
}

fn verify_report(a: &VerifyArgs) -> Result<Value> {
    let cfg: VerifyConfig = load_config(&a.config)?;
    let spec = SweepSpec {
        params: SystemParams::new(cfg.n, cfg.p1, cfg.p2)?,
        b1_grid: cfg.b1,
        b2_grid: cfg.b2,
        f_kind: cfg.f,
        g_kind: cfg.g,
        solver: cfg.solver,
        output: a.out.clone().unwrap_or(cfg.output),
    };
    let (_, summary) = run_sweep(&spec)?;
    let mut v = to_value(&summary);
    v["csv"] = json!(spec.output.display().to_string());
    v["summary"] = json!(spec.summary_path().display().to_string());
    Ok(v)
}

fn region_report(a: &RegionArgs) -> Result<Value> {
    let rows = region_grid(a.n, a.pmax, a.step)?;
    write_region_csv(&a.out, &rows)?;
    let count = |c| rows.iter().filter(|r| r.class == c).count();
    use crate::exponents::RegionClass::*;
    Ok(json!({
        "N": a.n,
        "rows": rows.len(),
        "square_edge": a.n / (a.n - 2.0),
        "StrictlyBelow": count(StrictlyBelow),
        "OnHyperbola": count(OnHyperbola),
        "Above": count(Above),
        "csv": a.out.display().to_string(),
    }))
}

/// `key = value` lines with dotted paths for nested objects.
fn render_text(v: &Value) -> String {
    fn walk(prefix: &str, v: &Value, out: &mut String) {
        match v {
            Value::Object(m) => {
                for (k, x) in m {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&p, x, out);
                }
            }
            Value::Array(xs) if xs.iter().any(|x| x.is_object() || x.is_array()) => {
                for (i, x) in xs.iter().enumerate() {
                    walk(&format!("{prefix}[{i}]"), x, out);
                }
            }
            other => {
                out.push_str(prefix);
                out.push_str(" = ");
                out.push_str(&other.to_string());
                out.push('\n');
            }
        }
    }
    let mut s = String::new();
    walk("", v, &mut s);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("nlbc").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn exponents_json() {
        let (code, out, _) = call(&["exponents", "--N", "3", "--p1", "2", "--p2", "2", "--json"]);
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert!((v["A"].as_f64().unwrap() - 1.0).abs() < 1e-14);
        assert!((v["B"].as_f64().unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(v["region"], json!("StrictlyBelow"));
    }

    #[test]
    fn exponents_on_hyperbola_are_null() {
        let (code, out, _) = call(&["exponents", "--N", "3", "--p1", "3", "--p2", "3", "--json"]);
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["region"], json!("OnHyperbola"));
        assert!(v["A"].is_null() && v["eta"].is_null() && v["Bt2"].is_null());
    }

    #[test]
    fn usage_and_validation_errors() {
        let (code, _, err) = call(&["exponents", "--N", "3", "--p1", "2", "--p2", "2", "--bogus"]);
        assert_eq!(code, 1);
        assert!(err.contains("Usage"));
        let (code, _, err) = call(&["exponents", "--N", "3", "--p1", "0.5", "--p2", "2"]);
        assert_eq!(code, 1);
        assert_eq!(err.lines().count(), 1);
        let (code, _, _) = call(&["moser", "--appendix-b", "1", "1", "1", "--grid-n", "10"]);
        assert_eq!(code, 1);
    }

    #[test]
    fn text_rendering() {
        let (code, out, _) = call(&["exponents", "--N", "3", "--p1", "2", "--p2", "3"]);
        assert_eq!(code, 0);
        let a: f64 = out.lines().find_map(|l| l.strip_prefix("A = ")).unwrap().parse().unwrap();
        assert!((a - 2.0).abs() < 1e-14);
        assert!(out.lines().any(|l| l.starts_with("weak_form.")));
    }

    #[test]
    fn norms_constant() {
        let (code, out, _) = call(&["norms", "--lmax", "4", "--json"]);
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        let l0 = (std::f64::consts::E.powi(2) - 1.0) / 2.0;
        assert!((v["linf_volume"].as_f64().unwrap() - l0).abs() < 1e-12);
    }
}
