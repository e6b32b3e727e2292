//! Sweeps of the sup-norm versus energy bound and the exponent-plane
//! classification grid.
//!
//! For a converged pair the bound ratios are
//! `ratio_u = ||u||_inf / ((1 + ||u||_{H^1}^A)(1 + ||v||_{H^1}^A))` and the
//! same with `B` for `v`; the fitted constants are the maxima over a sweep.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::{classify_point, derive_exponents, ExponentTable, RegionClass, SystemParams, HYPERBOLA_TOL};
use crate::fields::{sup_norm, FieldSpec};
use crate::par;
use crate::solver::{solve_coupled, NonlinearityConfig, Outcome, SolutionPair, SolverConfig};
use crate::sphere::NtdSpectrum;

/// Frozen column order of sweep files.
pub const SWEEP_COLUMNS: [&str; 15] = [
    "b1", "b2", "p1", "p2", "h1_u", "h1_v", "linf_u", "linf_v", "A", "B", "ratio_u", "ratio_v", "iterations",
    "residual", "outcome",
];

/// Frozen column order of region files.
pub const REGION_COLUMNS: [&str; 6] = ["p1", "p2", "delta0", "class", "in_square", "square_edge"];

/// Norms entering the bound for one converged pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundNorms {
    pub h1_u: f64,
    pub h1_v: f64,
    pub linf_u: f64,
    pub linf_v: f64,
}

/// `H^1` norms from the spectral energy of the traces, sup norms from the
/// refined boundary maximum (equal to the ball maximum for solutions).
pub fn bound_norms(sol: &SolutionPair) -> Result<BoundNorms> {
    let spectrum = NtdSpectrum::new(sol.l_max())?;
    Ok(BoundNorms {
        h1_u: spectrum.energy_from_trace(sol.u.coeffs())?.sqrt(),
        h1_v: spectrum.energy_from_trace(sol.v.coeffs())?.sqrt(),
        linf_u: sup_norm(&sol.u),
        linf_v: sup_norm(&sol.v),
    })
}

/// `(ratio_u, ratio_v)` for given norms and exponents `A`, `B`.
pub fn ratios_from_norms(n: &BoundNorms, a: f64, b: f64) -> (f64, f64) {
    let ru = n.linf_u / ((1.0 + n.h1_u.powf(a)) * (1.0 + n.h1_v.powf(a)));
    let rv = n.linf_v / ((1.0 + n.h1_u.powf(b)) * (1.0 + n.h1_v.powf(b)));
    (ru, rv)
}

pub fn bound_ratios(sol: &SolutionPair, table: &ExponentTable) -> Result<(f64, f64)> {
    if !(table.delta0 > HYPERBOLA_TOL) {
        return Err(Error::NotStrictlySubcritical { delta0: table.delta0 });
    }
    Ok(ratios_from_norms(&bound_norms(sol)?, table.a, table.b))
}

/// Nonlinearity family of a sweep: the kind plus kind-specific extras; `b`
/// comes from the grid and `p` from the exponent pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindConfig {
    pub kind: String,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<FieldSpec>,
}

impl KindConfig {
    pub fn named(kind: &str) -> Self {
        Self { kind: kind.to_string(), cap: None, weight: None }
    }

    fn with(&self, b: f64, p: f64) -> NonlinearityConfig {
        NonlinearityConfig { kind: self.kind.clone(), b, p, cap: self.cap, weight: self.weight.clone() }
    }
}

/// `f` grows with `p2` and `g` with `p1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub params: SystemParams,
    pub b1_grid: Vec<f64>,
    pub b2_grid: Vec<f64>,
    pub f_kind: KindConfig,
    pub g_kind: KindConfig,
    pub solver: SolverConfig,
    pub output: PathBuf,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.params.n != 3 {
            return Err(Error::invalid(format!("sweeps solve on the 3-ball; got N = {}", self.params.n)));
        }
        if self.b1_grid.is_empty() || self.b2_grid.is_empty() {
            return Err(Error::invalid("coefficient grids must be non-empty"));
        }
        self.solver.validate()?;
        for &b in self.b1_grid.iter().chain(&self.b2_grid) {
            self.f_kind.with(b, self.params.p2).build(self.solver.l_max)?;
            self.g_kind.with(b, self.params.p1).build(self.solver.l_max)?;
        }
        Ok(())
    }

    /// Companion summary path: `<output stem>.summary.json`.
    pub fn summary_path(&self) -> PathBuf {
        self.output.with_extension("summary.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub b1: f64,
    pub b2: f64,
    pub p1: f64,
    pub p2: f64,
    pub h1_u: Option<f64>,
    pub h1_v: Option<f64>,
    pub linf_u: Option<f64>,
    pub linf_v: Option<f64>,
    #[serde(rename = "A")]
    pub a: Option<f64>,
    #[serde(rename = "B")]
    pub b: Option<f64>,
    pub ratio_u: Option<f64>,
    pub ratio_v: Option<f64>,
    pub iterations: usize,
    pub residual: Option<f64>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    #[serde(rename = "N")]
    pub n: u32,
    pub p1: f64,
    pub p2: f64,
    pub region: RegionClass,
    #[serde(rename = "A")]
    pub a: Option<f64>,
    #[serde(rename = "B")]
    pub b: Option<f64>,
    /// Max `ratio_u` over converged rows.
    #[serde(rename = "C0")]
    pub c0: Option<f64>,
    /// Max `ratio_v` over converged rows.
    #[serde(rename = "C1")]
    pub c1: Option<f64>,
    pub rows: usize,
    pub counts: BTreeMap<String, usize>,
}

/// Solve every `(b1, b2)` grid point. Points run in parallel; rows come back
/// in grid order (`b1` outer, `b2` inner). Failed solves become rows with
/// their outcome and no norms.
pub fn sweep_rows(spec: &SweepSpec) -> Result<Vec<BoundRow>> {
    spec.validate()?;
    let params = spec.params;
    let table = derive_exponents(&params).ok();
    let points: Vec<(f64, f64)> =
        spec.b1_grid.iter().flat_map(|&b1| spec.b2_grid.iter().map(move |&b2| (b1, b2))).collect();
    let l_max = spec.solver.l_max;
    par::map_slice(&points, |&(b1, b2)| -> Result<BoundRow> {
        let f = spec.f_kind.with(b1, params.p2).build(l_max)?;
        let g = spec.g_kind.with(b2, params.p1).build(l_max)?;
        let mut row = BoundRow {
            b1,
            b2,
            p1: params.p1,
            p2: params.p2,
            h1_u: None,
            h1_v: None,
            linf_u: None,
            linf_v: None,
            a: table.as_ref().map(|t| t.a),
            b: table.as_ref().map(|t| t.b),
            ratio_u: None,
            ratio_v: None,
            iterations: 0,
            residual: None,
            outcome: Outcome::Converged,
        };
        match solve_coupled(&f, &g, &spec.solver) {
            Ok(sol) => {
                let norms = bound_norms(&sol)?;
                row.h1_u = Some(norms.h1_u);
                row.h1_v = Some(norms.h1_v);
                row.linf_u = Some(norms.linf_u);
                row.linf_v = Some(norms.linf_v);
                if let Some(t) = &table {
                    let (ru, rv) = ratios_from_norms(&norms, t.a, t.b);
                    row.ratio_u = Some(ru);
                    row.ratio_v = Some(rv);
                }
                row.iterations = sol.iterations;
                row.residual = Some(sol.residual);
            }
            Err(Error::Solve(e)) => {
                row.outcome = e.outcome();
                match e {
                    crate::solver::SolveError::MaxIterations { history } => {
                        row.iterations = history.len();
                        row.residual = history.last().copied();
                    }
                    crate::solver::SolveError::Blowup { iteration, .. }
                    | crate::solver::SolveError::NonFinite { iteration } => row.iterations = iteration,
                }
            }
            Err(other) => return Err(other),
        }
        Ok(row)
    })
    .into_iter()
    .collect()
}

pub fn summarize(spec: &SweepSpec, rows: &[BoundRow]) -> SweepSummary {
    let table = derive_exponents(&spec.params).ok();
    let (region, _) = crate::exponents::classify_region(&spec.params);
    let mut counts = BTreeMap::new();
    for o in [Outcome::Converged, Outcome::Blowup, Outcome::MaxIterations] {
        counts.insert(o.to_string(), rows.iter().filter(|r| r.outcome == o).count());
    }
    let max_of = |pick: fn(&BoundRow) -> Option<f64>| {
        rows.iter()
            .filter(|r| r.outcome == Outcome::Converged)
            .filter_map(pick)
            .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))))
    };
    SweepSummary {
        n: spec.params.n,
        p1: spec.params.p1,
        p2: spec.params.p2,
        region,
        a: table.as_ref().map(|t| t.a),
        b: table.as_ref().map(|t| t.b),
        c0: max_of(|r| r.ratio_u),
        c1: max_of(|r| r.ratio_v),
        rows: rows.len(),
        counts,
    }
}

/// Run the sweep, write the CSV to `spec.output` and the summary JSON next
/// to it.
pub fn run_sweep(spec: &SweepSpec) -> Result<(Vec<BoundRow>, SweepSummary)> {
    let rows = sweep_rows(spec)?;
    let summary = summarize(spec, &rows);
    write_sweep_csv(&spec.output, &rows)?;
    let path = spec.summary_path();
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok((rows, summary))
}

/// Canonical decimal with 17 significant digits; round-trips bit-exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn parse_f64(field: &str, column: &str) -> Result<f64> {
    field.parse().map_err(|_| Error::Parse(format!("column {column}: bad number {field:?}")))
}

fn parse_opt(field: &str, column: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_f64(field, column).map(Some)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_sweep_csv(path: &Path, rows: &[BoundRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
    w.write_record(SWEEP_COLUMNS).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            fmt_f64(r.b1),
            fmt_f64(r.b2),
            fmt_f64(r.p1),
            fmt_f64(r.p2),
            fmt_opt(r.h1_u),
            fmt_opt(r.h1_v),
            fmt_opt(r.linf_u),
            fmt_opt(r.linf_v),
            fmt_opt(r.a),
            fmt_opt(r.b),
            fmt_opt(r.ratio_u),
            fmt_opt(r.ratio_v),
            r.iterations.to_string(),
            fmt_opt(r.residual),
            r.outcome.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<BoundRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(SWEEP_COLUMNS.iter().copied()) {
        return Err(Error::Parse(format!("{}: unexpected header {:?}", path.display(), header)));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        rows.push(BoundRow {
            b1: parse_f64(f(0), "b1")?,
            b2: parse_f64(f(1), "b2")?,
            p1: parse_f64(f(2), "p1")?,
            p2: parse_f64(f(3), "p2")?,
            h1_u: parse_opt(f(4), "h1_u")?,
            h1_v: parse_opt(f(5), "h1_v")?,
            linf_u: parse_opt(f(6), "linf_u")?,
            linf_v: parse_opt(f(7), "linf_v")?,
            a: parse_opt(f(8), "A")?,
            b: parse_opt(f(9), "B")?,
            ratio_u: parse_opt(f(10), "ratio_u")?,
            ratio_v: parse_opt(f(11), "ratio_v")?,
            iterations: f(12).parse().map_err(|_| Error::Parse(format!("column iterations: {:?}", f(12))))?,
            residual: parse_opt(f(13), "residual")?,
            outcome: f(14).parse()?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub p1: f64,
    pub p2: f64,
    pub delta0: f64,
    pub class: RegionClass,
    /// Both exponents strictly inside `(1, N/(N-2))`.
    pub in_square: bool,
    /// `N / (N - 2)`.
    pub square_edge: f64,
}

/// Classify the lattice `p = 1 + k step <= p_max`, `k >= 1`, in both
/// exponents. `n` may be fractional (a plotting convenience); it must
/// exceed 2.
pub fn region_grid(n: f64, p_max: f64, step: f64) -> Result<Vec<RegionRow>> {
    if !(n > 2.0 && n.is_finite()) {
        return Err(Error::invalid(format!("dimension N = {n} must be > 2")));
    }
    if !(p_max > 1.0 && p_max.is_finite()) {
        return Err(Error::invalid(format!("p_max = {p_max} must be > 1")));
    }
    if !(step > 0.0 && step <= 0.5) {
        return Err(Error::invalid(format!("step = {step} must lie in (0, 0.5]")));
    }
    let count = ((p_max - 1.0) / step + 1e-9).floor() as usize;
    let edge = n / (n - 2.0);
    let ps: Vec<f64> = (1..=count).map(|k| 1.0 + k as f64 * step).collect();
    Ok(ps
        .iter()
        .flat_map(|&p1| {
            ps.iter().map(move |&p2| {
                let (class, delta0) = classify_point(n, p1, p2);
                RegionRow { p1, p2, delta0, class, in_square: p1 < edge && p2 < edge, square_edge: edge }
            })
        })
        .collect())
}

pub fn write_region_csv(path: &Path, rows: &[RegionRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", REGION_COLUMNS.join(",")).map_err(io)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt_f64(r.p1),
            fmt_f64(r.p2),
            fmt_f64(r.delta0),
            r.class,
            r.in_square,
            fmt_f64(r.square_edge)
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_region_csv(path: &Path) -> Result<Vec<RegionRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(REGION_COLUMNS.iter().copied()) {
        return Err(Error::Parse(format!("{}: unexpected header {:?}", path.display(), header)));
    }
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let f = |i: usize| rec.get(i).unwrap_or("");
            Ok(RegionRow {
                p1: parse_f64(f(0), "p1")?,
                p2: parse_f64(f(1), "p2")?,
                delta0: parse_f64(f(2), "delta0")?,
                class: f(3).parse()?,
                in_square: f(4).parse().map_err(|_| Error::Parse(format!("column in_square: {:?}", f(4))))?,
                square_edge: parse_f64(f(5), "square_edge")?,
            })
        })
        .collect()
}
