//! Batch drivers: convergence tables, audit suites and consistency suites.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::audit::{audit, AuditCertificate, AuditOptions, Verdict};
use crate::complementary::ComplementaryKernels;
use crate::consistency::{analyze, ConsistencyReport, ManufacturedFunction};
use crate::error::{Error, Result};
use crate::fem::{
    l2_error, solve, stability_bound, DiscreteSolution, ErrorSummary, SolveOptions, SpatialGrid,
    StabilityBound, SubdiffusionProblem,
};
use crate::kernels::KernelTable;
use crate::mesh::{
    graded_mesh, random_admissible_mesh, random_ratio_mesh, two_part_mesh, TimeMesh, RANDOM_RHO_MIN,
    RHO_MAX,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFamily {
    Uniform,
    Graded,
    TwoPart,
    Random,
    File,
}

impl MeshFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            MeshFamily::Uniform => "uniform",
            MeshFamily::Graded => "graded",
            MeshFamily::TwoPart => "twopart",
            MeshFamily::Random => "random",
            MeshFamily::File => "file",
        }
    }
}

impl fmt::Display for MeshFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MeshFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(MeshFamily::Uniform),
            "graded" => Ok(MeshFamily::Graded),
            "twopart" => Ok(MeshFamily::TwoPart),
            "random" => Ok(MeshFamily::Random),
            "file" => Ok(MeshFamily::File),
            _ => Err(Error::Parse(format!("unknown mesh family `{s}`"))),
        }
    }
}

/// Parameters shared by every batch driver.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub alpha: f64,
    pub sigma: f64,
    pub gammas: Vec<f64>,
    pub ns: Vec<usize>,
    pub m: usize,
    pub kappa: f64,
    pub t_final: f64,
    pub mesh: MeshFamily,
    pub mesh_file: Option<PathBuf>,
    /// Upper ratio bound for random meshes; above 7/4 the meshes leave the
    /// ratio hypothesis.
    pub rho_max: f64,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            alpha: 0.4,
            sigma: 0.8,
            gammas: vec![1.0],
            ns: vec![64, 128, 256, 512],
            m: 4096,
            kappa: 2.0,
            t_final: 1.0,
            mesh: MeshFamily::TwoPart,
            mesh_file: None,
            rho_max: RHO_MAX,
            seeds: vec![0],
            out: None,
        }
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::Parse(format!("{key}: bad entry `{s}`"))))
        .collect()
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{key}: bad value `{value}`")))
}

impl ExperimentConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "alpha" => self.alpha = parse_one(key, value)?,
            "sigma" => self.sigma = parse_one(key, value)?,
            "gamma" => self.gammas = parse_list(key, value)?,
            "N" => self.ns = parse_list(key, value)?,
            "M" => self.m = parse_one(key, value)?,
            "kappa" => self.kappa = parse_one(key, value)?,
            "T" => self.t_final = parse_one(key, value)?,
            "mesh" => self.mesh = value.trim().parse()?,
            "mesh_file" => self.mesh_file = Some(PathBuf::from(value.trim())),
            "rho_max" => self.rho_max = parse_one(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "out" => self.out = Some(PathBuf::from(value.trim())),
            _ => return Err(Error::Parse(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", lineno + 1)))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        c.merge_text(text)?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Domain(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if let Some(n) = self.ns.iter().find(|&&n| n < 8) {
            return Err(Error::InvalidArgument(format!("N must be at least 8, got {n}")));
        }
        if let Some(g) = self.gammas.iter().find(|&&g| !(g >= 1.0)) {
            return Err(Error::InvalidArgument(format!("gamma must be at least 1, got {g}")));
        }
        if self.m < 2 {
            return Err(Error::InvalidArgument(format!("M must be at least 2, got {}", self.m)));
        }
        if !(self.t_final > 0.0) {
            return Err(Error::InvalidArgument(format!("T must be positive, got {}", self.t_final)));
        }
        if self.mesh == MeshFamily::File && self.mesh_file.is_none() {
            return Err(Error::InvalidArgument("mesh=file needs mesh_file".into()));
        }
        Ok(())
    }

    /// Builds one mesh of the configured family with `θ = α/2`.
    pub fn build_mesh(&self, n: usize, gamma: f64, seed: u64) -> Result<TimeMesh> {
        let theta = self.alpha / 2.0;
        match self.mesh {
            MeshFamily::Uniform => graded_mesh(self.t_final, n, 1.0, theta),
            MeshFamily::Graded => graded_mesh(self.t_final, n, gamma, theta),
            MeshFamily::TwoPart => two_part_mesh(self.t_final, n, gamma, theta),
            MeshFamily::Random if self.rho_max <= RHO_MAX => {
                random_admissible_mesh(self.t_final, n, self.rho_max, seed, theta)
            }
            MeshFamily::Random => random_ratio_mesh(self.t_final, n, RANDOM_RHO_MIN, self.rho_max, seed, theta),
            MeshFamily::File => {
                let path = self
                    .mesh_file
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("mesh=file needs mesh_file".into()))?;
                TimeMesh::from_text(&std::fs::read_to_string(path)?)?.with_theta(theta)
            }
        }
    }
}

/// `min{γσ, 2}` for `σ ∈ (0,1) ∪ (1,2)`, `γ >= 1`.
pub fn expected_order(sigma: f64, gamma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma < 2.0) || sigma == 1.0 {
        return Err(Error::Domain(format!("sigma must lie in (0,1) or (1,2), got {sigma}")));
    }
    if !(gamma >= 1.0) {
        return Err(Error::Domain(format!("gamma must be at least 1, got {gamma}")));
    }
    Ok((gamma * sigma).min(2.0))
}

/// `log₂(e_{i-1}/e_i)`; the first entry is `None`.
pub fn orders(errors: &[f64]) -> Vec<Option<f64>> {
    (0..errors.len())
        .map(|i| (i > 0).then(|| (errors[i - 1] / errors[i]).log2()))
        .collect()
}

/// One manufactured solve with its error and a priori bound.
#[derive(Debug, Clone)]
pub struct ManufacturedRun {
    pub solution: DiscreteSolution,
    pub errors: ErrorSummary,
    pub bound: StabilityBound,
    pub stability_violations: Vec<usize>,
}

pub fn solve_manufactured(config: &ExperimentConfig, n: usize, gamma: f64) -> Result<ManufacturedRun> {
    let problem = SubdiffusionProblem::manufactured(config.alpha, config.kappa, config.sigma, config.t_final)?;
    let mesh = config.build_mesh(n, gamma, config.seeds.first().copied().unwrap_or(0))?;
    let table = KernelTable::build(&mesh, config.alpha)?;
    let grid = SpatialGrid::new(config.m)?;
    let solution = solve(&problem, &table, &grid, SolveOptions::default())?;
    let errors = l2_error(&solution, &problem)?;
    let comp = ComplementaryKernels::new(&table)?;
    let norms = solution.norms();
    let bound = stability_bound(&problem, &table, &comp, &grid, norms[0])?;
    let stability_violations = bound.violations(&norms);
    Ok(ManufacturedRun {
        solution,
        errors,
        bound,
        stability_violations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub n: usize,
    pub e: Option<f64>,
    pub order: Option<f64>,
    pub failure: Option<String>,
    pub stability_ok: bool,
    pub step_cap_exceeded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub alpha: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub rows: Vec<ErrorRow>,
    pub expected_order: Option<f64>,
}

impl ErrorReport {
    /// CSV with header `N,eN,order` and a `#` footer.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "N,eN,order")?;
        for r in &self.rows {
            let e = r.e.map(|e| format!("{e:e}")).unwrap_or_default();
            let q = r.order.map(|q| format!("{q:.4}")).unwrap_or_default();
            writeln!(w, "{},{},{}", r.n, e, q)?;
        }
        for r in &self.rows {
            if let Some(msg) = &r.failure {
                writeln!(w, "# N={} failed: {}", r.n, msg)?;
            }
        }
        let expected = self.expected_order.map(|q| format!("{q:.2}")).unwrap_or_else(|| "undefined".into());
        writeln!(
            w,
            "# alpha={} sigma={} gamma={} expected_order={}",
            self.alpha, self.sigma, self.gamma, expected
        )?;
        Ok(())
    }

    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.e.unwrap_or(f64::NAN)).collect()
    }

    pub fn orders(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.order).collect()
    }
}

/// One report per `γ`; rows for all `(γ, N)` pairs run in parallel.
pub fn run_table(config: &ExperimentConfig) -> Result<Vec<ErrorReport>> {
    config.validate()?;
    let pairs: Vec<(f64, usize)> = config
        .gammas
        .iter()
        .flat_map(|&g| config.ns.iter().map(move |&n| (g, n)))
        .collect();
    let results: Vec<Result<ManufacturedRun>> = pairs
        .par_iter()
        .map(|&(g, n)| solve_manufactured(config, n, g))
        .collect();
    let mut reports = Vec::new();
    for (gi, &gamma) in config.gammas.iter().enumerate() {
        let chunk = &results[gi * config.ns.len()..(gi + 1) * config.ns.len()];
        let mut rows: Vec<ErrorRow> = config
            .ns
            .iter()
            .zip(chunk)
            .map(|(&n, r)| match r {
                Ok(run) => ErrorRow {
                    n,
                    e: Some(run.errors.max),
                    order: None,
                    failure: None,
                    stability_ok: run.stability_violations.is_empty(),
                    step_cap_exceeded: run.solution.step_cap_exceeded,
                },
                Err(err) => ErrorRow {
                    n,
                    e: None,
                    order: None,
                    failure: Some(err.to_string()),
                    stability_ok: false,
                    step_cap_exceeded: false,
                },
            })
            .collect();
        for i in 1..rows.len() {
            if let (Some(a), Some(b)) = (rows[i - 1].e, rows[i].e) {
                rows[i].order = Some((a / b).log2());
            }
        }
        reports.push(ErrorReport {
            alpha: config.alpha,
            sigma: config.sigma,
            gamma,
            rows,
            expected_order: expected_order(config.sigma, gamma).ok(),
        });
    }
    Ok(reports)
}

/// One mesh of a suite, labelled for reporting.
#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub label: String,
    pub alpha: f64,
    pub seed: u64,
    pub mesh: TimeMesh,
}

impl ExperimentConfig {
    /// Every `(seed, N, γ)` combination of the configured family.
    pub fn suite_cases(&self) -> Result<Vec<SuiteCase>> {
        self.validate()?;
        let mut cases = Vec::new();
        for &seed in &self.seeds {
            for &n in &self.ns {
                for &g in &self.gammas {
                    cases.push(SuiteCase {
                        label: format!("{} N={} gamma={} seed={}", self.mesh, n, g, seed),
                        alpha: self.alpha,
                        seed,
                        mesh: self.build_mesh(n, g, seed)?,
                    });
                }
            }
        }
        Ok(cases)
    }
}

/// Uniform, graded (`γ = 2`) and two-part (`γ = 3`) meshes with `N = 64` for
/// `α ∈ {0.4, 0.6, 0.8}`.
pub fn default_suite_cases() -> Result<Vec<SuiteCase>> {
    let mut cases = Vec::new();
    for alpha in [0.4, 0.6, 0.8] {
        for (family, gamma) in [(MeshFamily::Uniform, 1.0), (MeshFamily::Graded, 2.0), (MeshFamily::TwoPart, 3.0)] {
            let config = ExperimentConfig {
                alpha,
                mesh: family,
                ns: vec![64],
                gammas: vec![gamma],
                ..ExperimentConfig::default()
            };
            cases.extend(config.suite_cases()?);
        }
    }
    for c in &mut cases {
        c.label = format!("alpha={} {}", c.alpha, c.label);
    }
    Ok(cases)
}

#[derive(Debug, Clone)]
pub struct AuditSuiteRow {
    pub label: String,
    pub certificate: std::result::Result<AuditCertificate, String>,
}

#[derive(Debug, Clone, Default)]
pub struct AuditSuiteReport {
    pub rows: Vec<AuditSuiteRow>,
}

impl AuditSuiteReport {
    /// Cases whose mesh satisfies the hypothesis but some check failed.
    pub fn failures(&self) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|r| match &r.certificate {
                Ok(c) => c.checks.iter().any(|ch| c.verdict(ch) == Verdict::Fail),
                Err(_) => true,
            })
            .map(|r| r.label.as_str())
            .collect()
    }

    pub fn exit_code(&self) -> i32 {
        i32::from(!self.failures().is_empty())
    }

    /// Per-index CSV; each case block starts with a `# case` line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "check,n,k,margin,pass")?;
        for r in &self.rows {
            writeln!(w, "# case {}", r.label)?;
            match &r.certificate {
                Ok(c) => {
                    let mut buf = Vec::new();
                    c.write_csv(&mut buf)?;
                    // drop the per-certificate header
                    let body = buf.splitn(2, |&b| b == b'\n').nth(1).unwrap_or(&[]);
                    w.write_all(body)?;
                }
                Err(msg) => writeln!(w, "# error {msg}")?,
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            match &r.certificate {
                Ok(c) => {
                    let worst = c
                        .checks
                        .iter()
                        .filter_map(|ch| ch.worst().map(|e| (ch.name, e.margin)))
                        .min_by(|a, b| a.1.total_cmp(&b.1));
                    let status = if c.all_passed() {
                        "pass"
                    } else if c.hypothesis_ok {
                        "FAIL"
                    } else {
                        "outside-hypothesis"
                    };
                    match worst {
                        Some((name, m)) => {
                            s.push_str(&format!("{}: {} (worst {} {:+.3e})\n", r.label, status, name, m))
                        }
                        None => s.push_str(&format!("{}: {}\n", r.label, status)),
                    }
                }
                Err(msg) => s.push_str(&format!("{}: error {}\n", r.label, msg)),
            }
        }
        s
    }
}

pub fn run_audit_suite(cases: &[SuiteCase]) -> AuditSuiteReport {
    let rows = cases
        .par_iter()
        .map(|case| {
            let certificate = KernelTable::build(&case.mesh, case.alpha)
                .and_then(|t| {
                    audit(
                        &t,
                        AuditOptions {
                            seed: case.seed,
                            ..AuditOptions::default()
                        },
                    )
                })
                .map_err(|e| e.to_string());
            AuditSuiteRow {
                label: case.label.clone(),
                certificate,
            }
        })
        .collect();
    AuditSuiteReport { rows }
}

#[derive(Debug, Clone)]
pub struct ConsistencySuiteRow {
    pub label: String,
    pub hypothesis_ok: bool,
    pub report: std::result::Result<ConsistencyReport, String>,
}

#[derive(Debug, Clone, Default)]
pub struct ConsistencySuiteReport {
    pub rows: Vec<ConsistencySuiteRow>,
}

impl ConsistencySuiteReport {
    pub fn failures(&self) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|r| {
                r.hypothesis_ok
                    && match &r.report {
                        Ok(rep) => !rep.ecs_violations().is_empty() || !rep.glob_violations().is_empty(),
                        Err(_) => true,
                    }
            })
            .map(|r| r.label.as_str())
            .collect()
    }

    pub fn exit_code(&self) -> i32 {
        i32::from(!self.failures().is_empty())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,t_offset,upsilon,g_loc,g_his,ecs_rhs,e_glob,r_offset")?;
        for r in &self.rows {
            let tag = if r.hypothesis_ok { "" } else { " outside-hypothesis" };
            writeln!(w, "# case {}{}", r.label, tag)?;
            match &r.report {
                Ok(rep) => {
                    let mut buf = Vec::new();
                    rep.write_csv(&mut buf)?;
                    let body = buf.splitn(2, |&b| b == b'\n').nth(1).unwrap_or(&[]);
                    w.write_all(body)?;
                }
                Err(msg) => writeln!(w, "# error {msg}")?,
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let line = match &r.report {
                Ok(rep) => {
                    let ecs = rep.ecs_violations().len();
                    let glob = rep.glob_violations().len();
                    let status = match (ecs + glob, r.hypothesis_ok) {
                        (0, _) => "pass",
                        (_, true) => "FAIL",
                        (_, false) => "outside-hypothesis",
                    };
                    format!("{}: {} (ecs violations {}, global violations {})\n", r.label, status, ecs, glob)
                }
                Err(msg) => format!("{}: error {}\n", r.label, msg),
            };
            s.push_str(&line);
        }
        s
    }
}

/// Consistency analysis of `v = 1 + ω_{1+σ}(t)` on every case.
pub fn run_consistency_suite(cases: &[SuiteCase], sigma: f64) -> Result<ConsistencySuiteReport> {
    let v = ManufacturedFunction::power(sigma)?;
    let rows = cases
        .par_iter()
        .map(|case| {
            let hypothesis_ok = crate::mesh::check_conditions(&case.mesh, case.alpha, 1.0).m1_ok;
            let report = KernelTable::build(&case.mesh, case.alpha)
                .and_then(|t| analyze(&t, &v))
                .map_err(|e| e.to_string());
            ConsistencySuiteRow {
                label: case.label.clone(),
                hypothesis_ok,
                report,
            }
        })
        .collect();
    Ok(ConsistencySuiteReport { rows })
}
