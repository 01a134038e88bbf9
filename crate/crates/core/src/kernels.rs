//! Discrete Caputo kernels at the offset points `t_{n-θ}`.
//!
//! For every level `n` and cell `k` the table holds the interpolation weights
//! `a^{(n)}_{n-k}`, the quadratic correction weights `b^{(n)}_{n-k}`, the
//! assembled kernels `A^{(n)}_{n-k}` and the bridge integrals `I`, `J` used by
//! the monotonicity audit.
//!
//! Closed forms are written in terms of `D = t_{n-θ} - t_k` and
//! `r = τ_k / D`. Differences such as `(1+r)^{1-α} - 1` cancel badly on
//! strongly graded meshes, so small `r` goes through binomial series.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::TimeMesh;
use crate::quadrature::{integrate, integrate_endpoint_singular, Tolerance};
use crate::special::PowerKernel;

/// Below this `r` the series forms are used.
const SERIES_CUTOFF: f64 = 0.5;

/// How kernel integrals are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Evaluation {
    #[default]
    ClosedForm,
    /// Adaptive Gauss–Kronrod on the defining integrals. Slow; meant for
    /// cross-checks on small meshes.
    Quadrature,
}

/// Weights of one level `n`. Vectors are indexed by cell: entry `k-1`
/// belongs to cell `[t_{k-1}, t_k]`, i.e. lag `n-k`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRow {
    pub n: usize,
    /// `a^{(n)}_{n-k}`, `k = 1..=n`.
    pub a: Vec<f64>,
    /// `b^{(n)}_{n-k}`, `k = 1..=n-1`.
    pub b: Vec<f64>,
    /// `A^{(n)}_{n-k}`, `k = 1..=n`.
    pub kernel: Vec<f64>,
    /// `I^{(n)}_{n-k} = a_{n-k} - ϖ'_n(t_{k-1})`, `k = 1..=n-1`.
    pub bridge_i: Vec<f64>,
    /// `J^{(n)}_{n-k} = ϖ'_n(t_k) - a_{n-k}`, `k = 1..=n-1`.
    pub bridge_j: Vec<f64>,
}

impl KernelRow {
    /// `A^{(n)}_j` for `0 <= j < n`.
    #[inline]
    pub fn lag(&self, j: usize) -> f64 {
        self.kernel[self.n - 1 - j]
    }

    #[inline]
    pub fn a_lag(&self, j: usize) -> f64 {
        self.a[self.n - 1 - j]
    }

    /// `b^{(n)}_j` for `1 <= j < n`.
    #[inline]
    pub fn b_lag(&self, j: usize) -> f64 {
        self.b[self.n - 1 - j]
    }

    #[inline]
    pub fn i_lag(&self, j: usize) -> f64 {
        self.bridge_i[self.n - 1 - j]
    }

    #[inline]
    pub fn j_lag(&self, j: usize) -> f64 {
        self.bridge_j[self.n - 1 - j]
    }
}

/// `(1+r)^c - 1`.
#[inline]
fn pow_m1(c: f64, r: f64) -> f64 {
    (c * r.ln_1p()).exp_m1()
}

/// `Σ_{i>=2} w(i) C(c,i) r^{i+shift}` with `shift >= -1`.
fn binomial_tail(c: f64, r: f64, shift: i32, w: impl Fn(f64) -> f64) -> f64 {
    let mut binom = 0.5 * c * (c - 1.0);
    let mut rp = r.powi(2 + shift);
    let mut sum = 0.0;
    for i in 2..400 {
        let fi = i as f64;
        let term = w(fi) * binom * rp;
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
        binom *= (c - fi) / (fi + 1.0);
        rp *= r;
    }
    sum
}

/// `c - ((1+r)^c - 1)/r`, positive for `0 < c < 1`.
fn j_shape(c: f64, r: f64) -> f64 {
    if r <= SERIES_CUTOFF {
        -binomial_tail(c, r, -1, |_| 1.0)
    } else {
        c - pow_m1(c, r) / r
    }
}

/// `((1+r)^c - 1)/r - c (1+r)^{c-1}`, positive for `0 < c < 1`.
fn i_shape(c: f64, r: f64) -> f64 {
    if r <= SERIES_CUTOFF {
        binomial_tail(c, r, -1, |i| 1.0 - i)
    } else {
        pow_m1(c, r) / r - c * (1.0 + r).powf(c - 1.0)
    }
}

/// `∫_0^r (1+x)^c dx - (r/2)((1+r)^c + 1)`, the trapezoid defect.
fn g_shape(c: f64, r: f64) -> f64 {
    if r <= SERIES_CUTOFF {
        -binomial_tail(c, r, 1, |i| (i - 1.0) / (2.0 * (i + 1.0)))
    } else {
        pow_m1(c + 1.0, r) / (c + 1.0) - 0.5 * r * (pow_m1(c, r) + 2.0)
    }
}

/// Power kernels shared by all rows for one `α`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Kernels {
    pub alpha: f64,
    /// `ω_{1-α}`
    pub w1: PowerKernel,
    /// `ω_{2-α}`
    pub w2: PowerKernel,
}

impl Kernels {
    pub fn new(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Kernels {
            alpha,
            w1: PowerKernel::new(1.0 - alpha)?,
            w2: PowerKernel::new(2.0 - alpha)?,
        })
    }

    /// `ϖ''(s)` as a function of `x = t_{n-θ} - s > 0`.
    #[inline]
    pub fn second(&self, x: f64) -> f64 {
        self.alpha * self.w1.eval(x) / x
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("alpha must lie in (0,1), got {alpha}")))
    }
}

fn check_level(mesh: &TimeMesh, n: usize) -> Result<()> {
    if n == 0 || n > mesh.len() {
        return Err(Error::Index(format!("level n={n} outside 1..={}", mesh.len())));
    }
    Ok(())
}

fn check_cell(mesh: &TimeMesh, n: usize, k: usize, last: usize) -> Result<()> {
    check_level(mesh, n)?;
    if k == 0 || k > last {
        return Err(Error::Index(format!("cell k={k} outside 1..={last} at level n={n}")));
    }
    Ok(())
}

fn a_closed(mesh: &TimeMesh, kern: &Kernels, n: usize, k: usize) -> f64 {
    let c = 1.0 - kern.alpha;
    if k == n {
        let tau = mesh.tau(n);
        return kern.w2.eval((1.0 - mesh.theta()) * tau) / tau;
    }
    let d = mesh.offset_distance(n, k);
    let tau = mesh.tau(k);
    kern.w2.eval(d) * pow_m1(c, tau / d) / tau
}

fn b_closed(mesh: &TimeMesh, kern: &Kernels, n: usize, k: usize) -> f64 {
    let c = 1.0 - kern.alpha;
    let d = mesh.offset_distance(n, k);
    let tau = mesh.tau(k);
    let next = mesh.tau(k + 1);
    2.0 / (tau * (tau + next)) * kern.w2.eval(d) * d * g_shape(c, tau / d)
}

fn bridges_closed(mesh: &TimeMesh, kern: &Kernels, n: usize, k: usize) -> (f64, f64) {
    let c = 1.0 - kern.alpha;
    let d = mesh.offset_distance(n, k);
    let r = mesh.tau(k) / d;
    let scale = kern.w2.eval(d) / d;
    (scale * i_shape(c, r), scale * j_shape(c, r))
}

fn quad_tol() -> Tolerance {
    Tolerance::relative(1e-13)
}

fn a_quad(mesh: &TimeMesh, kern: &Kernels, n: usize, k: usize) -> f64 {
    if k == n {
        let tau = mesh.tau(n);
        let len = (1.0 - mesh.theta()) * tau;
        return integrate_endpoint_singular(|x| kern.w1.eval(x), len, kern.alpha, quad_tol()).value
            / tau;
    }
    let d = mesh.offset_distance(n, k);
    let tau = mesh.tau(k);
    integrate(|u| kern.w1.eval(d + u), 0.0, tau, quad_tol()).value / tau
}

/// Cell integral `∫ p(t_k - s) ϖ''(s) ds` over `[t_{k-1}, t_k]`.
fn cell_second_moment(
    mesh: &TimeMesh,
    kern: &Kernels,
    n: usize,
    k: usize,
    p: impl Fn(f64, f64) -> f64,
) -> f64 {
    let d = mesh.offset_distance(n, k);
    let tau = mesh.tau(k);
    integrate(|u| p(u, tau) * kern.second(d + u), 0.0, tau, quad_tol()).value
}

fn b_quad(mesh: &TimeMesh, kern: &Kernels, n: usize, k: usize) -> f64 {
    let tau = mesh.tau(k);
    let next = mesh.tau(k + 1);
    cell_second_moment(mesh, kern, n, k, |u, t| u * (t - u)) / (tau * (tau + next))
}

fn bridges_quad(mesh: &TimeMesh, kern: &Kernels, n: usize, k: usize) -> (f64, f64) {
    let tau = mesh.tau(k);
    let i = cell_second_moment(mesh, kern, n, k, |u, _| u) / tau;
    let j = cell_second_moment(mesh, kern, n, k, |u, t| t - u) / tau;
    (i, j)
}

/// `a^{(n)}_{n-k}` for `1 <= k <= n`.
pub fn a_coeff(mesh: &TimeMesh, alpha: f64, n: usize, k: usize) -> Result<f64> {
    check_cell(mesh, n, k, n)?;
    Ok(a_closed(mesh, &Kernels::new(alpha)?, n, k))
}

/// `b^{(n)}_{n-k}` for `1 <= k <= n-1`.
pub fn b_coeff(mesh: &TimeMesh, alpha: f64, n: usize, k: usize) -> Result<f64> {
    check_cell(mesh, n, k, n - 1)?;
    Ok(b_closed(mesh, &Kernels::new(alpha)?, n, k))
}

/// `(I^{(n)}_{n-k}, J^{(n)}_{n-k})` for `1 <= k <= n-1`.
pub fn bridge_integrals(mesh: &TimeMesh, alpha: f64, n: usize, k: usize) -> Result<(f64, f64)> {
    check_cell(mesh, n, k, n - 1)?;
    Ok(bridges_closed(mesh, &Kernels::new(alpha)?, n, k))
}

pub(crate) fn build_row(mesh: &TimeMesh, kern: &Kernels, n: usize, eval: Evaluation) -> KernelRow {
    let (a, b, bridges): (Vec<f64>, Vec<f64>, Vec<(f64, f64)>) = match eval {
        Evaluation::ClosedForm => (
            (1..=n).map(|k| a_closed(mesh, kern, n, k)).collect(),
            (1..n).map(|k| b_closed(mesh, kern, n, k)).collect(),
            (1..n).map(|k| bridges_closed(mesh, kern, n, k)).collect(),
        ),
        Evaluation::Quadrature => (
            (1..=n).map(|k| a_quad(mesh, kern, n, k)).collect(),
            (1..n).map(|k| b_quad(mesh, kern, n, k)).collect(),
            (1..n).map(|k| bridges_quad(mesh, kern, n, k)).collect(),
        ),
    };
    let kernel = assemble(mesh, n, &a, &b);
    let (bridge_i, bridge_j) = bridges.into_iter().unzip();
    KernelRow {
        n,
        a,
        b,
        kernel,
        bridge_i,
        bridge_j,
    }
}

/// Combines `a` and `b` (cell-indexed) into `A^{(n)}_{n-k}`.
fn assemble(mesh: &TimeMesh, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    if n == 1 {
        return vec![a[0]];
    }
    let mut kernel = Vec::with_capacity(n);
    kernel.push(a[0] - b[0]);
    for k in 2..n {
        kernel.push(a[k - 1] + mesh.rho(k - 1) * b[k - 2] - b[k - 1]);
    }
    kernel.push(a[n - 1] + mesh.rho(n - 1) * b[n - 2]);
    kernel
}

/// One kernel row, evaluated in closed form.
pub fn kernel_row(mesh: &TimeMesh, alpha: f64, n: usize) -> Result<KernelRow> {
    check_level(mesh, n)?;
    Ok(build_row(mesh, &Kernels::new(alpha)?, n, Evaluation::ClosedForm))
}

/// All kernel rows `n = 1..=N` of a mesh.
#[derive(Debug, Clone)]
pub struct KernelTable {
    mesh: TimeMesh,
    alpha: f64,
    rows: Vec<KernelRow>,
}

impl KernelTable {
    pub fn build(mesh: &TimeMesh, alpha: f64) -> Result<Self> {
        Self::build_with(mesh, alpha, Evaluation::ClosedForm)
    }

    pub fn build_with(mesh: &TimeMesh, alpha: f64, eval: Evaluation) -> Result<Self> {
        let kern = Kernels::new(alpha)?;
        let rows = (1..=mesh.len())
            .into_par_iter()
            .map(|n| build_row(mesh, &kern, n, eval))
            .collect();
        Ok(KernelTable {
            mesh: mesh.clone(),
            alpha,
            rows,
        })
    }

    pub fn mesh(&self) -> &TimeMesh {
        &self.mesh
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row `n`, `1 <= n <= N`.
    #[inline]
    pub fn row(&self, n: usize) -> &KernelRow {
        &self.rows[n - 1]
    }

    pub fn rows(&self) -> &[KernelRow] {
        &self.rows
    }

    /// `A^{(n)}_j`.
    #[inline]
    pub fn lag(&self, n: usize, j: usize) -> f64 {
        self.rows[n - 1].lag(j)
    }

    /// `(D_τ v)^{n-θ} = Σ_k A^{(n)}_{n-k} ∇_τ v^k` for every `n`.
    ///
    /// `v` holds the nodal values `v^0..=v^N`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_values(v)?;
        let increments: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
        self.apply_increments(&increments)
    }

    /// Same operator from the increments `∇_τ v^k`, `k = 1..=N`.
    pub fn apply_increments(&self, dv: &[f64]) -> Result<Vec<f64>> {
        if dv.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: dv.len(),
            });
        }
        Ok(self
            .rows
            .iter()
            .map(|row| row.kernel.iter().zip(dv).map(|(a, d)| a * d).sum())
            .collect())
    }

    /// Same operator in the form
    /// `A_0 v^n - Σ_{k<n} (A_{n-k-1} - A_{n-k}) v^k - A_{n-1} v^0`.
    pub fn apply_rearranged(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_values(v)?;
        Ok(self
            .rows
            .iter()
            .map(|row| {
                let n = row.n;
                let mut s = row.kernel[n - 1] * v[n] - row.kernel[0] * v[0];
                for (k, vk) in v.iter().enumerate().take(n).skip(1) {
                    s -= (row.kernel[k] - row.kernel[k - 1]) * vk;
                }
                s
            })
            .collect())
    }

    fn check_values(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.len() + 1 {
            return Err(Error::LengthMismatch {
                expected: self.len() + 1,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// CSV with header `n,k,a,b,A`; `b` is empty for `k = n`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,k,a,b,A")?;
        for row in &self.rows {
            write_row(&mut w, row)?;
        }
        Ok(())
    }

    /// Same layout as [`KernelTable::write_csv`], restricted to row `n`.
    pub fn write_row_csv<W: Write>(&self, n: usize, mut w: W) -> Result<()> {
        if n == 0 || n > self.len() {
            return Err(Error::Index(format!("row {n} outside 1..={}", self.len())));
        }
        writeln!(w, "n,k,a,b,A")?;
        write_row(&mut w, self.row(n))
    }
}

fn write_row<W: Write>(w: &mut W, row: &KernelRow) -> Result<()> {
    for k in 1..=row.n {
        let b = if k < row.n { format!("{:e}", row.b[k - 1]) } else { String::new() };
        writeln!(w, "{},{},{:e},{},{:e}", row.n, k, row.a[k - 1], b, row.kernel[k - 1])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{graded_mesh, TimeMesh};

    fn unit_mesh(n: usize) -> TimeMesh {
        TimeMesh::new((0..=n).map(|k| k as f64).collect(), 0.25).unwrap()
    }

    fn close(x: f64, y: f64, tol: f64) -> bool {
        (x - y).abs() <= tol * y.abs().max(1e-300)
    }

    // Reference values from an independent 30-digit evaluation of the
    // defining integrals, unit steps, α = 1/2, θ = 1/4.
    #[test]
    fn unit_step_reference_values() {
        let m = unit_mesh(3);
        assert!(close(a_coeff(&m, 0.5, 1, 1).unwrap(), 0.977_205_023_805_839_8, 1e-14));
        assert!(close(a_coeff(&m, 0.5, 2, 1).unwrap(), 0.515_500_306_554_621_7, 1e-14));
        assert!(close(b_coeff(&m, 0.5, 2, 1).unwrap(), 0.017_931_863_101_134_534, 1e-13));
        let row = kernel_row(&m, 0.5, 3).unwrap();
        let want = [0.371_401_833_822_048_5, 0.504_666_438_525_754_6, 0.995_136_886_906_974_4];
        for (got, want) in row.kernel.iter().zip(want) {
            assert!(close(*got, want, 1e-13), "{got} vs {want}");
        }
        let (i, j) = bridge_integrals(&m, 0.5, 3, 1).unwrap();
        assert!(close(i, 0.038_280_709_029_810_97, 1e-13));
        assert!(close(j, 0.047_987_408_351_530_18, 1e-13));
    }

    #[test]
    fn first_row_is_a0() {
        let m = graded_mesh(1.0, 5, 2.0, 0.3).unwrap();
        let t = KernelTable::build(&m, 0.6).unwrap();
        assert_eq!(t.row(1).kernel, t.row(1).a);
        assert!(t.row(1).b.is_empty());
    }

    #[test]
    fn shapes_match_direct_forms_near_cutoff() {
        for &c in &[0.05, 0.4, 0.6, 0.95] {
            for &r in &[0.3, 0.49, 0.5] {
                let pd = pow_m1(c, r);
                let j = c - pd / r;
                let i = pd / r - c * (1.0 + r).powf(c - 1.0);
                let g = pow_m1(c + 1.0, r) / (c + 1.0) - 0.5 * r * (pd + 2.0);
                assert!(close(j_shape(c, r), j, 1e-12));
                assert!(close(i_shape(c, r), i, 1e-12));
                assert!(close(g_shape(c, r), g, 1e-10));
            }
        }
    }

    #[test]
    fn closed_forms_match_quadrature() {
        let m = graded_mesh(1.0, 12, 3.0, 0.2).unwrap();
        let c = KernelTable::build(&m, 0.4).unwrap();
        let q = KernelTable::build_with(&m, 0.4, Evaluation::Quadrature).unwrap();
        for (rc, rq) in c.rows().iter().zip(q.rows()) {
            for (x, y) in rc.a.iter().chain(&rc.b).chain(&rc.bridge_i).chain(&rc.bridge_j).zip(
                rq.a.iter().chain(&rq.b).chain(&rq.bridge_i).chain(&rq.bridge_j),
            ) {
                assert!(close(*x, *y, 1e-10), "{x} vs {y} at n={}", rc.n);
            }
        }
    }

    #[test]
    fn index_and_domain_errors() {
        let m = unit_mesh(3);
        assert!(matches!(a_coeff(&m, 0.5, 4, 1), Err(Error::Index(_))));
        assert!(matches!(a_coeff(&m, 0.5, 2, 3), Err(Error::Index(_))));
        assert!(matches!(b_coeff(&m, 0.5, 2, 2), Err(Error::Index(_))));
        assert!(matches!(a_coeff(&m, 1.0, 1, 1), Err(Error::Domain(_))));
        assert!(matches!(kernel_row(&m, 0.0, 1), Err(Error::Domain(_))));
        let t = KernelTable::build(&m, 0.5).unwrap();
        assert!(matches!(t.apply(&[0.0; 3]), Err(Error::LengthMismatch { expected: 4, got: 3 })));
    }

    #[test]
    fn both_operator_forms_agree() {
        let m = graded_mesh(1.0, 20, 2.0, 0.3).unwrap();
        let t = KernelTable::build(&m, 0.6).unwrap();
        let v: Vec<f64> = m.nodes().iter().map(|&x| (3.0 * x).sin() + x * x).collect();
        let p = t.apply(&v).unwrap();
        let q = t.apply_rearranged(&v).unwrap();
        for (x, y) in p.iter().zip(&q) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn csv_has_header_and_all_entries() {
        let t = KernelTable::build(&unit_mesh(3), 0.5).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines[0], "n,k,a,b,A");
        assert_eq!(lines.len(), 1 + 6);
        assert!(lines[1].starts_with("1,1,"));
        assert!(lines[1].contains(",,"));
    }
}
