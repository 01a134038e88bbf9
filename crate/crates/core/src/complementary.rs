//! Discrete complementary convolution kernels `P^{(n)}_{n-j}`.
//!
//! They are defined by `P^{(n)}_0 = 1/A^{(n)}_0` and
//! `P^{(n)}_{n-j} = (1/A^{(j)}_0) Σ_{k=j+1}^{n} (A^{(k)}_{k-j-1} - A^{(k)}_{k-j}) P^{(n)}_{n-k}`,
//! which makes `Σ_{j=k}^{n} P^{(n)}_{n-j} A^{(j)}_{j-k} = 1` for `1 <= k <= n`.
//! Rows are computed on demand and cached.

use std::io::Write;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::KernelTable;
use crate::special::PowerKernel;

/// Constant in the complementary kernel bound.
pub const PI_A: f64 = 11.0 / 4.0;

/// Returns the first `(n, k)` where `A^{(n)}_{n-k-1} < A^{(n)}_{n-k}`.
pub fn check_monotone(table: &KernelTable) -> Result<()> {
    for row in table.rows() {
        for k in 1..row.n {
            if row.kernel[k] < row.kernel[k - 1] {
                return Err(Error::Monotonicity { n: row.n, k });
            }
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct ComplementaryKernels<'a> {
    table: &'a KernelTable,
    rows: Vec<OnceLock<Vec<f64>>>,
}

impl<'a> ComplementaryKernels<'a> {
    /// Fails with [`Error::Monotonicity`] when some kernel row is not
    /// monotone, since the recursion then loses its meaning.
    pub fn new(table: &'a KernelTable) -> Result<Self> {
        check_monotone(table)?;
        Ok(ComplementaryKernels {
            table,
            rows: (0..table.len()).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row `n`: entry `j-1` is `P^{(n)}_{n-j}`, `j = 1..=n`.
    pub fn row(&self, n: usize) -> &[f64] {
        self.rows[n - 1].get_or_init(|| compute_row(self.table, n))
    }

    /// `P^{(n)}_{n-j}`.
    pub fn get(&self, n: usize, j: usize) -> f64 {
        self.row(n)[j - 1]
    }

    /// Fills every row, in parallel.
    pub fn fill(&self) {
        (1..=self.len()).into_par_iter().for_each(|n| {
            self.row(n);
        });
    }

    /// `max_{1<=k<=n<=N} |Σ_j P^{(n)}_{n-j} A^{(j)}_{j-k} - 1|`.
    pub fn identity_residual(&self) -> f64 {
        (1..=self.len())
            .into_par_iter()
            .map(|n| {
                let p = self.row(n);
                (1..=n)
                    .map(|k| {
                        let s: f64 = (k..=n).map(|j| p[j - 1] * self.table.lag(j, j - k)).sum();
                        (s - 1.0).abs()
                    })
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// CSV with header `n,j,P`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,j,P")?;
        for n in 1..=self.len() {
            for (j, p) in self.row(n).iter().enumerate() {
                writeln!(w, "{},{},{:e}", n, j + 1, p)?;
            }
        }
        Ok(())
    }
}

fn compute_row(table: &KernelTable, n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n];
    p[n - 1] = 1.0 / table.lag(n, 0);
    for j in (1..n).rev() {
        let mut s = 0.0;
        for k in j + 1..=n {
            let row = table.row(k);
            // cells j+1 and j of row k
            s += (row.kernel[j] - row.kernel[j - 1]) * p[k - 1];
        }
        p[j - 1] = s / table.lag(j, 0);
    }
    p
}

/// Worst case of `Σ_j P^{(n)}_{n-j} ω_{1+(m-1)α}(t_j) / (π_A ω_{1+mα}(t_n))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PBoundReport {
    pub m: u32,
    pub worst_ratio: f64,
    pub worst_n: usize,
}

impl PBoundReport {
    pub fn holds(&self) -> bool {
        self.worst_ratio <= 1.0
    }
}

/// Checks the bound for `m = 0` or `m = 1`.
pub fn verify_p_bound(comp: &ComplementaryKernels<'_>, m: u32) -> Result<PBoundReport> {
    if m > 1 {
        return Err(Error::InvalidArgument(format!("m must be 0 or 1, got {m}")));
    }
    let alpha = comp.table.alpha();
    let mesh = comp.table.mesh();
    let lhs_kernel = PowerKernel::new(1.0 + (m as f64 - 1.0) * alpha)?;
    let rhs_kernel = PowerKernel::new(1.0 + m as f64 * alpha)?;
    let (worst_ratio, worst_n) = (1..=comp.len())
        .into_par_iter()
        .map(|n| {
            let lhs: f64 = comp
                .row(n)
                .iter()
                .enumerate()
                .map(|(i, p)| p * lhs_kernel.eval(mesh.t(i + 1)))
                .sum();
            (lhs / (PI_A * rhs_kernel.eval(mesh.t(n))), n)
        })
        .reduce(|| (f64::NEG_INFINITY, 0), |x, y| if y.0 > x.0 { y } else { x });
    Ok(PBoundReport {
        m,
        worst_ratio,
        worst_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{graded_mesh, TimeMesh};

    /// Solves `Σ_{j=k}^{n} P_j A^{(j)}_{j-k} = 1` by back substitution.
    fn triangular_oracle(table: &KernelTable, n: usize) -> Vec<f64> {
        let mut p = vec![0.0; n];
        for k in (1..=n).rev() {
            let s: f64 = (k + 1..=n).map(|j| p[j - 1] * table.lag(j, j - k)).sum();
            p[k - 1] = (1.0 - s) / table.lag(k, 0);
        }
        p
    }

    #[test]
    fn recursion_matches_triangular_solve() {
        let m = graded_mesh(1.0, 30, 2.5, 0.3).unwrap();
        let t = KernelTable::build(&m, 0.6).unwrap();
        let c = ComplementaryKernels::new(&t).unwrap();
        for n in [1, 2, 7, 30] {
            for (x, y) in c.row(n).iter().zip(triangular_oracle(&t, n)) {
                assert!((x - y).abs() <= 1e-12 * y.abs(), "n={n}: {x} vs {y}");
            }
        }
        assert!(c.identity_residual() < 1e-12);
        assert!(c.row(5).iter().all(|&p| p > 0.0));
    }

    #[test]
    fn p_bound_on_graded_mesh() {
        let m = graded_mesh(1.0, 40, 3.0, 0.2).unwrap();
        let t = KernelTable::build(&m, 0.4).unwrap();
        let c = ComplementaryKernels::new(&t).unwrap();
        for mm in [0, 1] {
            assert!(verify_p_bound(&c, mm).unwrap().holds());
        }
        assert!(verify_p_bound(&c, 2).is_err());
    }

    #[test]
    fn nonmonotone_rows_are_rejected() {
        // a huge ratio breaks A2
        let m = TimeMesh::new(vec![0.0, 1.0, 1.001, 1.002], 0.2).unwrap();
        let t = KernelTable::build(&m, 0.4).unwrap();
        assert!(matches!(
            ComplementaryKernels::new(&t),
            Err(Error::Monotonicity { .. })
        ));
    }

    #[test]
    fn csv_layout() {
        let m = graded_mesh(1.0, 3, 1.0, 0.2).unwrap();
        let t = KernelTable::build(&m, 0.4).unwrap();
        let c = ComplementaryKernels::new(&t).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next(), Some("n,j,P"));
        assert_eq!(s.lines().count(), 1 + 6);
    }
}
