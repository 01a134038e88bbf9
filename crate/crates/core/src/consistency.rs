//! Truncation error of the discrete Caputo operator at the offset points,
//! its cell-wise majorants `G_loc`, `G_his`, the global consistency error and
//! the offset interpolation error `R^{n-θ}`.

use std::io::Write;

use rayon::prelude::*;

use crate::complementary::{ComplementaryKernels, PI_A};
use crate::error::{Error, Result};
use crate::kernels::{check_alpha, KernelTable, Kernels};
use crate::mesh::{check_conditions, TimeMesh};
use crate::quadrature::{integrate, integrate_endpoint_singular, integrate_two_sided, Tolerance};
use crate::special::{gamma, is_gamma_pole, omega, PowerKernel};

/// Relative slack used when comparing `|Υ|` with its majorant, to absorb
/// roundoff when both sides vanish.
pub const ECS_SLACK: f64 = 1e-12;

fn tol() -> Tolerance {
    Tolerance::relative(1e-12)
}

#[derive(Debug, Clone, Copy)]
enum Profile {
    /// `v = 1 + ω_{1+σ}`; `w[j]` is the kernel of the `j`-th derivative.
    Power { sigma: f64, w: [PowerKernel; 4] },
    /// `c0 + c1 t + c2 t² + c3 t³`.
    Cubic([f64; 4]),
}

/// A test function with exact derivatives and exact Caputo derivative.
#[derive(Debug, Clone, Copy)]
pub struct ManufacturedFunction {
    profile: Profile,
}

impl ManufacturedFunction {
    /// `v(t) = 1 + ω_{1+σ}(t)` for `σ ∈ (0,1) ∪ (1,2)`.
    pub fn power(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma < 2.0) || sigma == 1.0 {
            return Err(Error::Domain(format!("sigma must lie in (0,1) or (1,2), got {sigma}")));
        }
        let w = [
            PowerKernel::new(1.0 + sigma)?,
            PowerKernel::new(sigma)?,
            PowerKernel::new(sigma - 1.0)?,
            PowerKernel::new(sigma - 2.0)?,
        ];
        Ok(ManufacturedFunction {
            profile: Profile::Power { sigma, w },
        })
    }

    /// Polynomial of degree at most three, coefficients from `t^0` up.
    pub fn polynomial(coeffs: [f64; 4]) -> Self {
        ManufacturedFunction {
            profile: Profile::Cubic(coeffs),
        }
    }

    pub fn sigma(&self) -> Option<f64> {
        match self.profile {
            Profile::Power { sigma, .. } => Some(sigma),
            Profile::Cubic(_) => None,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self.profile {
            Profile::Power { w, .. } => 1.0 + if t > 0.0 { w[0].eval(t) } else { 0.0 },
            Profile::Cubic(c) => c[0] + t * (c[1] + t * (c[2] + t * c[3])),
        }
    }

    /// `v(b) - v(a)` for `0 <= a <= b`, without cancellation between the
    /// two values.
    pub fn increment(&self, a: f64, b: f64) -> f64 {
        match self.profile {
            Profile::Power { sigma, w } => {
                if a <= 0.0 {
                    w[0].eval(b)
                } else {
                    w[0].eval(a) * (sigma * ((b - a) / a).ln_1p()).exp_m1()
                }
            }
            Profile::Cubic(c) => (b - a) * (c[1] + c[2] * (a + b) + c[3] * (a * a + a * b + b * b)),
        }
    }

    /// `j`-th derivative for `1 <= j <= 3`, `t > 0`.
    pub fn derivative(&self, j: usize, t: f64) -> f64 {
        match self.profile {
            Profile::Power { w, .. } => w[j].eval(t),
            Profile::Cubic(c) => match j {
                1 => c[1] + t * (2.0 * c[2] + 3.0 * c[3] * t),
                2 => 2.0 * c[2] + 6.0 * c[3] * t,
                3 => 6.0 * c[3],
                _ => panic!("derivative order {j} not available"),
            },
        }
    }

    /// Exact Caputo derivative of order `alpha` at `t > 0`.
    pub fn caputo(&self, alpha: f64, t: f64) -> Result<f64> {
        check_alpha(alpha)?;
        match self.profile {
            Profile::Power { sigma, .. } => omega(1.0 + sigma - alpha, t),
            Profile::Cubic(c) => Ok(c[1] * omega(2.0 - alpha, t)?
                + 2.0 * c[2] * omega(3.0 - alpha, t)?
                + 6.0 * c[3] * omega(4.0 - alpha, t)?),
        }
    }

    /// Exponent `β` such that `v'''·s²` behaves like `s^{-β}` near 0.
    fn singular_exponent(&self) -> f64 {
        match self.profile {
            Profile::Power { sigma, .. } => (1.0 - sigma).max(0.0),
            Profile::Cubic(_) => 0.0,
        }
    }

    /// `∫_0^b s² v'''(s) ds`, signed, in closed form.
    fn origin_moment(&self, b: f64) -> f64 {
        match self.profile {
            Profile::Power { sigma, .. } => {
                // Γ(σ-2) carries the sign of v'''
                b.powf(sigma) / (sigma * gamma(sigma - 2.0))
            }
            Profile::Cubic(c) => 2.0 * c[3] * b.powi(3),
        }
    }
}

/// `∫_a^b (s-a)² |v'''| ds`, analytic when `a = 0`.
fn left_square_moment(v: &ManufacturedFunction, a: f64, b: f64) -> f64 {
    if a == 0.0 {
        return v.origin_moment(b).abs();
    }
    integrate(|s| (s - a) * (s - a) * v.derivative(3, s).abs(), a, b, tol()).value
}

/// `∫_a^b (b-s)^p |v'''| ds` for `a > 0`.
fn right_moment(v: &ManufacturedFunction, a: f64, b: f64, p: i32) -> f64 {
    integrate(|s| (b - s).powi(p) * v.derivative(3, s).abs(), a, b, tol()).value
}

fn check_cell_index(mesh: &TimeMesh, k: usize, last: usize) -> Result<()> {
    if k == 0 || k > last {
        return Err(Error::Index(format!("cell k={k} outside 1..={last}")));
    }
    let _ = mesh;
    Ok(())
}

/// `G_loc^k`, the local majorant on cell `k`.
pub fn g_loc(mesh: &TimeMesh, v: &ManufacturedFunction, k: usize) -> Result<f64> {
    check_cell_index(mesh, k, mesh.len())?;
    let (a, b) = (mesh.t(k - 1), mesh.t(k));
    let mid = a + 0.5 * mesh.tau(k);
    Ok(1.5 * left_square_moment(v, a, mid) + 1.5 * mesh.tau(k) * right_moment(v, mid, b, 1))
}

/// `G_his^k`, the history majorant on cells `k` and `k+1`, `k <= N-1`.
pub fn g_his(mesh: &TimeMesh, v: &ManufacturedFunction, k: usize) -> Result<f64> {
    check_cell_index(mesh, k, mesh.len() - 1)?;
    Ok(2.5 * left_square_moment(v, mesh.t(k - 1), mesh.t(k))
        + 2.5 * right_moment(v, mesh.t(k), mesh.t(k + 1), 2))
}

/// `Υ^{n-θ}` and the magnitude scale used to judge roundoff.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub upsilon: Vec<f64>,
    /// `|exact| + Σ_k |A_{n-k} ∇v^k|`.
    pub scale: Vec<f64>,
}

/// `Υ^{n-θ}` = exact Caputo at `t_{n-θ}` minus the discrete operator.
pub fn truncation_error(table: &KernelTable, v: &ManufacturedFunction) -> Result<Truncation> {
    let mesh = table.mesh();
    let increments: Vec<f64> = (1..=mesh.len()).map(|k| v.increment(mesh.t(k - 1), mesh.t(k))).collect();
    let discrete = table.apply_increments(&increments)?;
    let mut upsilon = Vec::with_capacity(table.len());
    let mut scale = Vec::with_capacity(table.len());
    for (row, d) in table.rows().iter().zip(&discrete) {
        let exact = v.caputo(table.alpha(), mesh.t_offset(row.n))?;
        let sum_abs: f64 = row
            .kernel
            .iter()
            .enumerate()
            .map(|(i, a)| (a * increments[i]).abs())
            .sum();
        upsilon.push(exact - d);
        scale.push(exact.abs() + sum_abs);
    }
    Ok(Truncation { upsilon, scale })
}

/// Local term `∫_{t_{n-1}}^{t_{n-θ}} ϖ'(s)(v'(s) - ∇v^n/τ_n) ds`.
fn local_term(mesh: &TimeMesh, kern: &Kernels, v: &ManufacturedFunction, n: usize) -> f64 {
    let a = mesh.t(n - 1);
    let slope = v.increment(a, mesh.t(n)) / mesh.tau(n);
    let len = (1.0 - mesh.theta()) * mesh.tau(n);
    let left = if n == 1 { v.singular_exponent() } else { 0.0 };
    integrate_two_sided(
        |s, _, dr| kern.w1.eval(dr) * (v.derivative(1, s) - slope),
        a,
        a + len,
        left,
        kern.alpha,
        tol(),
    )
    .value
}

/// History term on cell `k < n` from the quadratic interpolation error
/// formula, with the linear interpolation error of `ϖ` in Peano form.
fn history_term(
    mesh: &TimeMesh,
    kern: &Kernels,
    v: &ManufacturedFunction,
    b: f64,
    n: usize,
    k: usize,
) -> f64 {
    let (t0, t1, t2) = (mesh.t(k - 1), mesh.t(k), mesh.t(k + 1));
    let tau = mesh.tau(k);
    let d = mesh.offset_distance(n, k);
    let left = if t0 == 0.0 {
        v.origin_moment(tau)
    } else {
        integrate(|s| (s - t0) * (s - t0) * v.derivative(3, s), t0, t1, tol()).value
    };
    let right = integrate(|s| (t2 - s) * (t2 - s) * v.derivative(3, s), t1, t2, tol()).value;

    // K(u) = ∫ ϖ''(y) ½[(u-z)_+² - u²(τ-z)/τ] dz with u, z measured from t_{k-1}
    let peano = |u: f64| {
        let second = |z: f64| kern.second(d + (tau - z));
        let below = integrate(
            |z| second(z) * 0.5 * ((u - z) * (u - z) - u * u * (tau - z) / tau),
            0.0,
            u,
            tol(),
        )
        .value;
        let above = integrate(|z| second(z) * (-0.5 * u * u * (tau - z) / tau), u, tau, tol()).value;
        below + above
    };
    let beta = if t0 == 0.0 { v.singular_exponent() } else { 0.0 };
    let tail = integrate_endpoint_singular(|u| v.derivative(3, t0 + u) * peano(u), tau, beta, tol())
        .value;
    0.5 * b * left - 0.5 * mesh.rho(k) * b * right + tail
}

/// Cell contributions `Υ^{n-θ}_k`, `k = 1..=n`, evaluated by quadrature.
pub fn per_cell_upsilon(table: &KernelTable, v: &ManufacturedFunction, n: usize) -> Result<Vec<f64>> {
    let mesh = table.mesh();
    if n == 0 || n > table.len() {
        return Err(Error::Index(format!("level n={n} outside 1..={}", table.len())));
    }
    let kern = Kernels::new(table.alpha())?;
    let row = table.row(n);
    let mut out: Vec<f64> = (1..n)
        .into_par_iter()
        .map(|k| history_term(mesh, &kern, v, row.b[k - 1], n, k))
        .collect();
    out.push(local_term(mesh, &kern, v, n));
    Ok(out)
}

/// Result of the cell-wise reconstruction check.
#[derive(Debug, Clone, PartialEq)]
pub struct PerCellReport {
    /// `max_n |Σ_k Υ_k - Υ| / scale_n`.
    pub max_reconstruction_residual: f64,
    /// `max_n |Υ_n| / (a_0 G_loc^n)`, at most 1 when the local bound holds.
    pub max_local_ratio: f64,
}

pub fn per_cell_check(table: &KernelTable, v: &ManufacturedFunction) -> Result<PerCellReport> {
    let tr = truncation_error(table, v)?;
    let mesh = table.mesh();
    let mut residual: f64 = 0.0;
    let mut ratio: f64 = 0.0;
    for n in 1..=table.len() {
        let cells = per_cell_upsilon(table, v, n)?;
        let sum: f64 = cells.iter().sum();
        residual = residual.max((sum - tr.upsilon[n - 1]).abs() / tr.scale[n - 1]);
        let bound = table.row(n).a[n - 1] * g_loc(mesh, v, n)?;
        let local = cells[n - 1].abs();
        if local > ECS_SLACK * tr.scale[n - 1] {
            ratio = ratio.max(local / bound);
        }
    }
    Ok(PerCellReport {
        max_reconstruction_residual: residual,
        max_local_ratio: ratio,
    })
}

/// `R^{n-θ} = v(t_{n-θ}) - θ v(t_{n-1}) - (1-θ) v(t_n)`.
pub fn offset_interpolation_error(mesh: &TimeMesh, v: &ManufacturedFunction) -> Vec<f64> {
    let theta = mesh.theta();
    (1..=mesh.len())
        .map(|n| {
            let mid = mesh.t_offset(n);
            theta * v.increment(mesh.t(n - 1), mid) - (1.0 - theta) * v.increment(mid, mesh.t(n))
        })
        .collect()
}

/// Integral form of `R^{n-θ}`:
/// `-θ∫_{t_{n-1}}^{t_{n-θ}} (s-t_{n-1}) v'' - (1-θ)∫_{t_{n-θ}}^{t_n} (t_n-s) v''`.
pub fn offset_interpolation_error_quadrature(mesh: &TimeMesh, v: &ManufacturedFunction) -> Vec<f64> {
    let theta = mesh.theta();
    (1..=mesh.len())
        .map(|n| {
            let (a, m, b) = (mesh.t(n - 1), mesh.t_offset(n), mesh.t(n));
            let beta = if n == 1 { v.singular_exponent() } else { 0.0 };
            let left =
                integrate_endpoint_singular(|d| d * v.derivative(2, a + d), m - a, beta, tol()).value;
            let right = integrate(|s| (b - s) * v.derivative(2, s), m, b, tol()).value;
            -theta * left - (1.0 - theta) * right
        })
        .collect()
}

/// One level of a [`ConsistencyReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyRow {
    pub n: usize,
    pub t_offset: f64,
    pub upsilon: f64,
    pub scale: f64,
    pub g_loc: f64,
    /// `None` at the last level, where the history majorant is undefined.
    pub g_his: Option<f64>,
    pub ecs_rhs: f64,
    /// `Σ_k P^{(n)}_{n-k} |Υ^{k-θ}|`.
    pub e_glob: f64,
    /// `Σ_k P^{(n)}_{n-k} A^{(k)}_0 (G_loc^k + G_his^k)`.
    pub e_glob_majorant: f64,
    /// `π_A Γ(1-α) max_{l<=n} t_l^α |Υ^{l-θ}|`.
    pub e_glob_simple_bound: f64,
    pub r_offset: f64,
}

impl ConsistencyRow {
    pub fn ecs_holds(&self) -> bool {
        self.upsilon.abs() <= self.ecs_rhs + ECS_SLACK * self.scale
    }

    pub fn glob_holds(&self) -> bool {
        let slack = ECS_SLACK * self.e_glob.abs().max(1e-300);
        self.e_glob <= self.e_glob_majorant + slack && self.e_glob <= self.e_glob_simple_bound + slack
    }
}

#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub alpha: f64,
    pub theta: f64,
    pub hypothesis_ok: bool,
    pub rows: Vec<ConsistencyRow>,
}

impl ConsistencyReport {
    /// Levels where `|Υ|` exceeds the majorant.
    pub fn ecs_violations(&self) -> Vec<usize> {
        self.rows.iter().filter(|r| !r.ecs_holds()).map(|r| r.n).collect()
    }

    pub fn glob_violations(&self) -> Vec<usize> {
        self.rows.iter().filter(|r| !r.glob_holds()).map(|r| r.n).collect()
    }

    /// CSV with header `n,t_offset,upsilon,g_loc,g_his,ecs_rhs,e_glob,r_offset`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,t_offset,upsilon,g_loc,g_his,ecs_rhs,e_glob,r_offset")?;
        for r in &self.rows {
            let g_his = r.g_his.map(|g| format!("{g:e}")).unwrap_or_default();
            writeln!(
                w,
                "{},{:e},{:e},{:e},{},{:e},{:e},{:e}",
                r.n, r.t_offset, r.upsilon, r.g_loc, g_his, r.ecs_rhs, r.e_glob, r.r_offset
            )?;
        }
        Ok(())
    }
}

/// Full analysis: `Υ`, the majorants, the ECS bound and the global error.
///
/// Fails with [`Error::Monotonicity`] when the kernel rows are not monotone,
/// since the complementary kernels are then undefined.
pub fn analyze(table: &KernelTable, v: &ManufacturedFunction) -> Result<ConsistencyReport> {
    let mesh = table.mesh();
    let alpha = table.alpha();
    let n_steps = table.len();
    let tr = truncation_error(table, v)?;
    let g_loc_all: Vec<f64> = (1..=n_steps)
        .into_par_iter()
        .map(|k| g_loc(mesh, v, k))
        .collect::<Result<_>>()?;
    let g_his_all: Vec<f64> = (1..n_steps)
        .into_par_iter()
        .map(|k| g_his(mesh, v, k))
        .collect::<Result<_>>()?;
    let comp = ComplementaryKernels::new(table)?;
    comp.fill();
    let r_offset = offset_interpolation_error(mesh, v);

    let gamma_1ma = gamma(1.0 - alpha);
    debug_assert!(!is_gamma_pole(1.0 - alpha));
    let mut running_max: f64 = 0.0;
    let mut rows = Vec::with_capacity(n_steps);
    for n in 1..=n_steps {
        let row = table.row(n);
        let mut ecs_rhs = row.kernel[n - 1] * g_loc_all[n - 1];
        for k in 1..n {
            ecs_rhs += (row.kernel[k] - row.kernel[k - 1]) * g_his_all[k - 1];
        }
        let p = comp.row(n);
        let mut e_glob = 0.0;
        let mut majorant = 0.0;
        for k in 1..=n {
            let pk = p[k - 1];
            e_glob += pk * tr.upsilon[k - 1].abs();
            let his = if k < n { g_his_all[k - 1] } else { 0.0 };
            majorant += pk * table.lag(k, 0) * (g_loc_all[k - 1] + his);
        }
        running_max = running_max.max(mesh.t(n).powf(alpha) * tr.upsilon[n - 1].abs());
        rows.push(ConsistencyRow {
            n,
            t_offset: mesh.t_offset(n),
            upsilon: tr.upsilon[n - 1],
            scale: tr.scale[n - 1],
            g_loc: g_loc_all[n - 1],
            g_his: g_his_all.get(n - 1).copied(),
            ecs_rhs,
            e_glob,
            e_glob_majorant: majorant,
            e_glob_simple_bound: PI_A * gamma_1ma * running_max,
            r_offset: r_offset[n - 1],
        });
    }
    Ok(ConsistencyReport {
        alpha,
        theta: mesh.theta(),
        hypothesis_ok: check_conditions(mesh, alpha, 1.0).m1_ok,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::graded_mesh;

    #[test]
    fn cubic_g_loc_on_unit_cell() {
        let m = TimeMesh::new(vec![0.0, 1.0, 2.0], 0.25).unwrap();
        let v = ManufacturedFunction::polynomial([0.0, 0.0, 0.0, 1.0]);
        assert!((g_loc(&m, &v, 1).unwrap() - 1.5).abs() < 1e-13);
        assert!((g_loc(&m, &v, 2).unwrap() - 1.5).abs() < 1e-13);
        // (5/2)(6/3) + (5/2)(6/3)
        assert!((g_his(&m, &v, 1).unwrap() - 10.0).abs() < 1e-12);
        assert!(g_his(&m, &v, 2).is_err());
    }

    #[test]
    fn quadratics_have_no_majorant_and_no_error() {
        let m = graded_mesh(1.0, 16, 2.0, 0.25).unwrap();
        let t = KernelTable::build(&m, 0.5).unwrap();
        let v = ManufacturedFunction::polynomial([1.0, -2.0, 3.0, 0.0]);
        let tr = truncation_error(&t, &v).unwrap();
        for (u, s) in tr.upsilon.iter().zip(&tr.scale) {
            assert!(u.abs() <= 1e-12 * s, "{u} vs {s}");
        }
        assert_eq!(g_loc(&m, &v, 3).unwrap(), 0.0);
        let rep = analyze(&t, &v).unwrap();
        assert!(rep.ecs_violations().is_empty());
    }

    #[test]
    fn power_g_loc_first_cell_matches_quadrature() {
        let m = graded_mesh(1.0, 64, 2.0, 0.2).unwrap();
        let v = ManufacturedFunction::power(0.8).unwrap();
        let tau = m.tau(1);
        // frozen from an independent high-precision evaluation
        let want = 0.000_420_609_223_336_685_4;
        let got = g_loc(&m, &v, 1).unwrap();
        assert!((got - want).abs() <= 1e-12 * want, "{got}");
        let q = integrate_endpoint_singular(
            |s| s * s * v.derivative(3, s).abs(),
            0.5 * tau,
            0.2,
            Tolerance::relative(1e-12),
        )
        .value;
        let analytic = left_square_moment(&v, 0.0, 0.5 * tau);
        assert!((q - analytic).abs() <= 1e-8 * analytic);
    }

    #[test]
    fn power_profile_rejects_bad_sigma() {
        for s in [0.0, -0.5, 1.0, 2.0, 2.5] {
            assert!(matches!(ManufacturedFunction::power(s), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn offset_error_forms_agree() {
        let m = TimeMesh::new(vec![0.0, 1.0], 0.25).unwrap();
        let v = ManufacturedFunction::polynomial([0.0, 0.0, 1.0, 0.0]);
        assert!((offset_interpolation_error(&m, &v)[0] + 0.1875).abs() < 1e-15);
        let g = graded_mesh(1.0, 32, 2.5, 0.2).unwrap();
        let p = ManufacturedFunction::power(0.8).unwrap();
        let direct = offset_interpolation_error(&g, &p);
        let quad = offset_interpolation_error_quadrature(&g, &p);
        for (x, y) in direct.iter().zip(&quad) {
            assert!((x - y).abs() <= 1e-10 * y.abs() + 1e-15, "{x} vs {y}");
        }
    }

    #[test]
    fn cell_terms_reconstruct_upsilon() {
        for (sigma, gamma_) in [(0.4, 2.0), (0.8, 2.5), (1.4, 1.0)] {
            let m = graded_mesh(1.0, 12, gamma_, 0.2).unwrap();
            let t = KernelTable::build(&m, 0.4).unwrap();
            let v = ManufacturedFunction::power(sigma).unwrap();
            let r = per_cell_check(&t, &v).unwrap();
            assert!(r.max_reconstruction_residual < 1e-11, "σ={sigma}: {r:?}");
            assert!(r.max_local_ratio <= 1.0, "σ={sigma}: {r:?}");
        }
    }

    #[test]
    fn ecs_holds_for_cubic_and_power() {
        let u = graded_mesh(1.0, 8, 1.0, 0.25).unwrap();
        let t = KernelTable::build(&u, 0.5).unwrap();
        let rep = analyze(&t, &ManufacturedFunction::polynomial([0.0, 0.0, 0.0, 1.0])).unwrap();
        assert!(rep.ecs_violations().is_empty());
        let g = graded_mesh(1.0, 64, 2.5, 0.2).unwrap();
        let t = KernelTable::build(&g, 0.4).unwrap();
        let rep = analyze(&t, &ManufacturedFunction::power(0.8).unwrap()).unwrap();
        assert!(rep.ecs_violations().is_empty());
        assert!(rep.glob_violations().is_empty());
        let first = &rep.rows[0];
        let p0 = 1.0 / t.lag(1, 0);
        assert!((first.e_glob - p0 * first.upsilon.abs()).abs() <= 1e-15 * first.e_glob);
    }
}
