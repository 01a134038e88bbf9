//! Linear finite elements on `(0, π)` with homogeneous Dirichlet conditions,
//! stepped in time with the offset-point Caputo discretisation.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::complementary::ComplementaryKernels;
use crate::error::{Error, Result};
use crate::kernels::{check_alpha, KernelTable};
use crate::mesh::{check_conditions, TimeMesh};
use crate::quadrature::GaussLegendre;
use crate::special::{gamma, mittag_leffler, omega, MittagLeffler};

/// Symmetric tridiagonal matrix with constant diagonals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub diag: f64,
    pub off: f64,
}

impl Stencil {
    /// `y = S x` for an `M`-vector with zero Dirichlet padding.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let m = x.len();
        for i in 0..m {
            let left = if i > 0 { x[i - 1] } else { 0.0 };
            let right = if i + 1 < m { x[i + 1] } else { 0.0 };
            y[i] = self.diag * x[i] + self.off * (left + right);
        }
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..x.len() {
            s += self.diag * x[i] * x[i];
            if i + 1 < x.len() {
                s += 2.0 * self.off * x[i] * x[i + 1];
            }
        }
        s
    }

    pub fn combine(a: f64, p: &Stencil, b: f64, q: &Stencil) -> Stencil {
        Stencil {
            diag: a * p.diag + b * q.diag,
            off: a * p.off + b * q.off,
        }
    }
}

/// Thomas elimination; `step` is only used for error reporting.
pub fn solve_tridiagonal(s: &Stencil, rhs: &[f64], step: usize) -> Result<Vec<f64>> {
    let m = rhs.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    let mut prev_c = 0.0;
    let mut prev_d = 0.0;
    for i in 0..m {
        let pivot = s.diag - s.off * prev_c;
        if !(pivot > 0.0) {
            return Err(Error::NonpositivePivot { step, row: i, pivot });
        }
        c[i] = s.off / pivot;
        d[i] = (rhs[i] - s.off * prev_d) / pivot;
        prev_c = c[i];
        prev_d = d[i];
    }
    for i in (0..m.saturating_sub(1)).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// Uniform grid of `M` interior nodes `x_i = i h`, `h = π/(M+1)`.
#[derive(Debug, Clone)]
pub struct SpatialGrid {
    m: usize,
    h: f64,
    mass: Stencil,
    stiffness: Stencil,
    gauss: GaussLegendre,
}

impl SpatialGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 interior nodes, got {m}")));
        }
        let h = PI / (m as f64 + 1.0);
        Ok(SpatialGrid {
            m,
            h,
            mass: Stencil {
                diag: 4.0 * h / 6.0,
                off: h / 6.0,
            },
            stiffness: Stencil {
                diag: 2.0 / h,
                off: -1.0 / h,
            },
            gauss: GaussLegendre::new(4),
        })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn x(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.h
    }

    pub fn mass(&self) -> &Stencil {
        &self.mass
    }

    pub fn stiffness(&self) -> &Stencil {
        &self.stiffness
    }

    /// Nodal values of `w` at the interior nodes.
    pub fn interpolate(&self, w: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.m).map(|i| w(self.x(i))).collect()
    }

    /// `∫ w φ_i` by 4-point Gauss on each element.
    pub fn load_vector(&self, w: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for e in 0..=self.m {
            let (a, b) = (e as f64 * self.h, (e + 1) as f64 * self.h);
            for (x, wt) in self.gauss.mapped(a, b) {
                let fx = w(x) * wt;
                let right_share = (x - a) / self.h;
                // element e spans nodes e-1 (left) and e (right) in interior numbering
                if e >= 1 {
                    out[e - 1] += fx * (1.0 - right_share);
                }
                if e < self.m {
                    out[e] += fx * right_share;
                }
            }
        }
        out
    }

    /// `(∫ w²)^{1/2}` over `(0, π)` by the same element rule.
    pub fn l2_norm_of(&self, w: impl Fn(f64) -> f64) -> f64 {
        let mut s = 0.0;
        for e in 0..=self.m {
            let (a, b) = (e as f64 * self.h, (e + 1) as f64 * self.h);
            s += self.gauss.integrate(|x| w(x) * w(x), a, b);
        }
        s.sqrt()
    }

    /// Ritz projection from the derivative `w'`: solves `S R = (∫ w' φ_i')_i`.
    pub fn ritz_projection(&self, w_prime: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
        let mut rhs = vec![0.0; self.m];
        for e in 0..=self.m {
            let (a, b) = (e as f64 * self.h, (e + 1) as f64 * self.h);
            let avg = self.gauss.integrate(&w_prime, a, b) / self.h;
            if e >= 1 {
                rhs[e - 1] -= avg;
            }
            if e < self.m {
                rhs[e] += avg;
            }
        }
        solve_tridiagonal(&self.stiffness, &rhs, 0)
    }

    /// Discrete L2 norm `(xᵀ Mass x)^{1/2}` of a nodal vector.
    pub fn norm(&self, x: &[f64]) -> f64 {
        self.mass.quadratic_form(x).max(0.0).sqrt()
    }
}

type SourceFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type SpaceFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ProblemKind {
    /// Exact solution `u = (1 + ω_{1+σ}(t)) sin x`.
    Manufactured { sigma: f64 },
    /// Source `f(x, t)`, initial value `u_0` and its derivative `u_0'`.
    Custom {
        source: SourceFn,
        initial: SpaceFn,
        initial_slope: SpaceFn,
    },
}

impl fmt::Debug for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemKind::Manufactured { sigma } => write!(f, "Manufactured {{ sigma: {sigma} }}"),
            ProblemKind::Custom { .. } => write!(f, "Custom"),
        }
    }
}

/// `∂_t^α u - u_xx = κ u + f` on `(0, π) × (0, T]`.
#[derive(Debug, Clone)]
pub struct SubdiffusionProblem {
    pub alpha: f64,
    pub kappa: f64,
    pub t_final: f64,
    pub kind: ProblemKind,
}

impl SubdiffusionProblem {
    pub fn manufactured(alpha: f64, kappa: f64, sigma: f64, t_final: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
        }
        Ok(SubdiffusionProblem {
            alpha,
            kappa,
            t_final,
            kind: ProblemKind::Manufactured { sigma },
        })
    }

    pub fn custom(
        alpha: f64,
        kappa: f64,
        t_final: f64,
        source: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        initial: impl Fn(f64) -> f64 + Send + Sync + 'static,
        initial_slope: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(SubdiffusionProblem {
            alpha,
            kappa,
            t_final,
            kind: ProblemKind::Custom {
                source: Arc::new(source),
                initial: Arc::new(initial),
                initial_slope: Arc::new(initial_slope),
            },
        })
    }

    /// Time factor `1 + ω_{1+σ}(t)` of the manufactured solution.
    fn exact_time_factor(sigma: f64, t: f64) -> f64 {
        1.0 + if t > 0.0 { omega(1.0 + sigma, t).unwrap_or(f64::NAN) } else { 0.0 }
    }

    /// Time factor of the manufactured source.
    fn source_time_factor(&self, sigma: f64, t: f64) -> f64 {
        omega(1.0 + sigma - self.alpha, t).unwrap_or(f64::NAN)
            + (1.0 - self.kappa) * Self::exact_time_factor(sigma, t)
    }

    /// Exact solution at `(x, t)` for manufactured problems.
    pub fn exact(&self, x: f64, t: f64) -> Option<f64> {
        match self.kind {
            ProblemKind::Manufactured { sigma } => Some(Self::exact_time_factor(sigma, t) * x.sin()),
            ProblemKind::Custom { .. } => None,
        }
    }

    pub fn source(&self, x: f64, t: f64) -> f64 {
        match &self.kind {
            ProblemKind::Manufactured { sigma } => self.source_time_factor(*sigma, t) * x.sin(),
            ProblemKind::Custom { source, .. } => source(x, t),
        }
    }

    /// `‖f(·, t)‖_{L2(0,π)}`.
    pub fn source_norm(&self, grid: &SpatialGrid, t: f64) -> f64 {
        match &self.kind {
            ProblemKind::Manufactured { sigma } => {
                self.source_time_factor(*sigma, t).abs() * (PI / 2.0).sqrt()
            }
            ProblemKind::Custom { source, .. } => grid.l2_norm_of(|x| source(x, t)),
        }
    }

    /// `1 / (11 Γ(2-α) κ₊)^{1/α}`, or `None` when `κ <= 0`.
    pub fn step_cap(&self) -> Option<f64> {
        (self.kappa > 0.0)
            .then(|| (11.0 * gamma(2.0 - self.alpha) * self.kappa).powf(-1.0 / self.alpha))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOptions {
    /// Reject meshes whose largest step exceeds [`SubdiffusionProblem::step_cap`].
    pub enforce_step_cap: bool,
}

#[derive(Debug, Clone)]
pub struct DiscreteSolution {
    pub mesh: TimeMesh,
    pub grid: SpatialGrid,
    /// Nodal vectors `U^0..=U^N`.
    pub u: Vec<Vec<f64>>,
    /// The mesh satisfies the ratio hypothesis with `θ = α/2`.
    pub hypothesis_ok: bool,
    /// The largest step exceeds the stability step cap.
    pub step_cap_exceeded: bool,
}

impl DiscreteSolution {
    /// `‖u_h^n‖` for `n = 0..=N`.
    pub fn norms(&self) -> Vec<f64> {
        self.u.iter().map(|x| self.grid.norm(x)).collect()
    }
}

/// Right-hand side of step `n` and the system stencil.
struct Stepper<'a> {
    problem: &'a SubdiffusionProblem,
    grid: &'a SpatialGrid,
    table: &'a KernelTable,
    /// `S - κ Mass`
    operator: Stencil,
    /// Manufactured problems share one spatial load shape.
    sine_load: Option<Vec<f64>>,
}

impl<'a> Stepper<'a> {
    fn new(problem: &'a SubdiffusionProblem, grid: &'a SpatialGrid, table: &'a KernelTable) -> Self {
        let operator = Stencil::combine(1.0, grid.stiffness(), -problem.kappa, grid.mass());
        let sine_load = matches!(problem.kind, ProblemKind::Manufactured { .. })
            .then(|| grid.load_vector(f64::sin));
        Stepper {
            problem,
            grid,
            table,
            operator,
            sine_load,
        }
    }

    fn load(&self, t: f64) -> Vec<f64> {
        match (&self.problem.kind, &self.sine_load) {
            (ProblemKind::Manufactured { sigma }, Some(shape)) => {
                let g = self.problem.source_time_factor(*sigma, t);
                shape.iter().map(|s| g * s).collect()
            }
            _ => self.grid.load_vector(|x| self.problem.source(x, t)),
        }
    }

    /// History `Σ_{k<n} A^{(n)}_{n-k} ∇U^k`.
    fn history(&self, n: usize, diffs: &[Vec<f64>]) -> Vec<f64> {
        let m = self.grid.len();
        let row = self.table.row(n);
        let mut out = vec![0.0; m];
        const CHUNK: usize = 256;
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            let lo = c * CHUNK;
            for k in 1..n {
                let a = row.kernel[k - 1];
                let d = &diffs[k - 1][lo..lo + chunk.len()];
                for (o, x) in chunk.iter_mut().zip(d) {
                    *o += a * x;
                }
            }
        });
        out
    }

    fn step(&self, n: usize, prev: &[f64], diffs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let m = self.grid.len();
        let theta = self.table.mesh().theta();
        let a0 = self.table.lag(n, 0);
        let mass = self.grid.mass();
        let system = Stencil::combine(a0, mass, 1.0 - theta, &self.operator);

        // Mass (A_0 U^{n-1} - H) - θ (S - κ Mass) U^{n-1} + F
        let hist = self.history(n, diffs);
        let combo: Vec<f64> = prev.iter().zip(&hist).map(|(p, h)| a0 * p - h).collect();
        let mut rhs = vec![0.0; m];
        mass.apply(&combo, &mut rhs);
        let mut op_prev = vec![0.0; m];
        self.operator.apply(prev, &mut op_prev);
        let load = self.load(self.table.mesh().t_offset(n));
        for i in 0..m {
            rhs[i] += load[i] - theta * op_prev[i];
        }
        solve_tridiagonal(&system, &rhs, n)
    }
}

/// Initial vector: Ritz projection of `u_0`.
pub fn initial_value(problem: &SubdiffusionProblem, grid: &SpatialGrid) -> Result<Vec<f64>> {
    match &problem.kind {
        ProblemKind::Manufactured { .. } => grid.ritz_projection(f64::cos),
        ProblemKind::Custom { initial_slope, .. } => grid.ritz_projection(|x| initial_slope(x)),
    }
}

/// Runs the full time-stepping loop.
pub fn solve(
    problem: &SubdiffusionProblem,
    table: &KernelTable,
    grid: &SpatialGrid,
    opts: SolveOptions,
) -> Result<DiscreteSolution> {
    if table.alpha() != problem.alpha {
        return Err(Error::InvalidArgument(format!(
            "kernel table built for alpha={} but problem has alpha={}",
            table.alpha(),
            problem.alpha
        )));
    }
    let mesh = table.mesh();
    let step_cap_exceeded = problem.step_cap().is_some_and(|cap| mesh.max_step() > cap);
    if step_cap_exceeded && opts.enforce_step_cap {
        return Err(Error::InvalidArgument(format!(
            "largest step {} exceeds the stability cap {}",
            mesh.max_step(),
            problem.step_cap().unwrap_or(f64::INFINITY)
        )));
    }
    let stepper = Stepper::new(problem, grid, table);
    let mut u = Vec::with_capacity(mesh.len() + 1);
    u.push(initial_value(problem, grid)?);
    let mut diffs: Vec<Vec<f64>> = Vec::with_capacity(mesh.len());
    for n in 1..=mesh.len() {
        let next = stepper.step(n, &u[n - 1], &diffs)?;
        diffs.push(next.iter().zip(&u[n - 1]).map(|(a, b)| a - b).collect());
        u.push(next);
    }
    Ok(DiscreteSolution {
        mesh: mesh.clone(),
        grid: grid.clone(),
        u,
        hypothesis_ok: check_conditions(mesh, problem.alpha, 1.0).m1_ok,
        step_cap_exceeded,
    })
}

/// `‖U^n - I_h u(t_n)‖` for each `n`, and `e(N) = max_{n>=1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSummary {
    pub per_step: Vec<f64>,
    pub max: f64,
}

pub fn l2_error(sol: &DiscreteSolution, problem: &SubdiffusionProblem) -> Result<ErrorSummary> {
    let sigma = match problem.kind {
        ProblemKind::Manufactured { sigma } => sigma,
        ProblemKind::Custom { .. } => {
            return Err(Error::InvalidArgument("error needs a manufactured solution".into()))
        }
    };
    let sines = sol.grid.interpolate(f64::sin);
    let per_step: Vec<f64> = sol
        .u
        .iter()
        .enumerate()
        .map(|(n, un)| {
            let c = SubdiffusionProblem::exact_time_factor(sigma, sol.mesh.t(n));
            let diff: Vec<f64> = un.iter().zip(&sines).map(|(x, s)| x - c * s).collect();
            sol.grid.norm(&diff)
        })
        .collect();
    let max = per_step[1..].iter().copied().fold(0.0, f64::max);
    Ok(ErrorSummary { per_step, max })
}

/// Both forms of the a priori bound at each level `n = 1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityBound {
    /// With the complementary kernel sums.
    pub kernel_form: Vec<f64>,
    /// With `6 Γ(1-α) max t_j^α ‖f(t_{j-θ})‖`.
    pub simple_form: Vec<f64>,
    /// Levels where the Mittag–Leffler factor overflowed; the bounds there
    /// are `+∞`.
    pub saturated: Vec<usize>,
}

impl StabilityBound {
    /// Levels `n` where `norms[n] > bound + 1e-10·max(1, bound)`.
    pub fn violations(&self, norms: &[f64]) -> Vec<usize> {
        self.kernel_form
            .iter()
            .zip(&self.simple_form)
            .enumerate()
            .filter(|(i, (b1, b2))| {
                let v = norms[i + 1];
                let b = b1.min(**b2);
                v > b + 1e-10 * b.max(1.0)
            })
            .map(|(i, _)| i + 1)
            .collect()
    }
}

pub fn stability_bound(
    problem: &SubdiffusionProblem,
    table: &KernelTable,
    comp: &ComplementaryKernels<'_>,
    grid: &SpatialGrid,
    u0_norm: f64,
) -> Result<StabilityBound> {
    let mesh = table.mesh();
    let alpha = problem.alpha;
    let kp = problem.kappa.max(0.0);
    let n_steps = mesh.len();
    let f_norms: Vec<f64> = (1..=n_steps).map(|j| problem.source_norm(grid, mesh.t_offset(j))).collect();
    comp.fill();
    let conv: Vec<f64> = (1..=n_steps)
        .into_par_iter()
        .map(|k| comp.row(k).iter().zip(&f_norms).map(|(p, f)| p * f).sum())
        .collect();
    let g1 = gamma(1.0 - alpha);
    let mut kernel_form = Vec::with_capacity(n_steps);
    let mut simple_form = Vec::with_capacity(n_steps);
    let mut saturated = Vec::new();
    let mut max_conv: f64 = 0.0;
    let mut max_weighted: f64 = 0.0;
    for n in 1..=n_steps {
        max_conv = max_conv.max(conv[n - 1]);
        max_weighted = max_weighted.max(mesh.t(n).powf(alpha) * f_norms[n - 1]);
        let factor = match mittag_leffler(alpha, 20.0 * kp * mesh.t(n).powf(alpha)) {
            MittagLeffler::Value(v) => 2.0 * v,
            MittagLeffler::Saturated { .. } => {
                saturated.push(n);
                f64::INFINITY
            }
        };
        let scaled = |data: f64| if data == 0.0 { 0.0 } else { factor * data };
        kernel_form.push(scaled(u0_norm + 2.0 * max_conv));
        simple_form.push(scaled(u0_norm + 6.0 * g1 * max_weighted));
    }
    Ok(StabilityBound {
        kernel_form,
        simple_form,
        saturated,
    })
}
