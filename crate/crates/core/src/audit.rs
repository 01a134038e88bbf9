//! Numerical certificates for the kernel inequalities on a concrete mesh.
//!
//! Every check is written as `LHS >= RHS` and recorded per index with the
//! scaled margin `(LHS - RHS) / max(|LHS|, |RHS|, 1e-300)`. Equalities are
//! recorded with margin `-|LHS - RHS| / scale`. A check passes when its worst
//! margin is at least [`MARGIN_TOL`].

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::complementary::{check_monotone, ComplementaryKernels, PI_A};
use crate::error::Result;
use crate::kernels::KernelTable;
use crate::mesh::{check_conditions, TimeMesh};
use crate::special::PowerKernel;

pub const MARGIN_TOL: f64 = -1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub n: usize,
    pub k: usize,
    pub margin: f64,
}

#[inline]
fn scale(lhs: f64, rhs: f64) -> f64 {
    lhs.abs().max(rhs.abs()).max(1e-300)
}

fn ge(n: usize, k: usize, lhs: f64, rhs: f64) -> Entry {
    Entry {
        n,
        k,
        margin: (lhs - rhs) / scale(lhs, rhs),
    }
}

fn eq(n: usize, k: usize, lhs: f64, rhs: f64) -> Entry {
    Entry {
        n,
        k,
        margin: -(lhs - rhs).abs() / scale(lhs, rhs),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// Failed on a mesh that does not satisfy the ratio hypothesis.
    OutsideHypothesis,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "true",
            Verdict::Fail => "false",
            Verdict::OutsideHypothesis => "outside-hypothesis",
        }
    }
}

impl Check {
    fn new(name: &'static str, entries: Vec<Entry>) -> Self {
        Check { name, entries }
    }

    /// Entry with the smallest margin.
    pub fn worst(&self) -> Option<Entry> {
        self.entries
            .iter()
            .copied()
            .min_by(|x, y| x.margin.total_cmp(&y.margin))
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.margin >= MARGIN_TOL)
    }
}

fn per_row<F>(table: &KernelTable, f: F) -> Vec<Entry>
where
    F: Fn(&TimeMesh, usize, &mut Vec<Entry>) + Sync,
{
    let mesh = table.mesh();
    (1..=table.len())
        .into_par_iter()
        .flat_map_iter(|n| {
            let mut out = Vec::new();
            f(mesh, n, &mut out);
            out
        })
        .collect()
}

/// `(1/τ_k) ∫_{t_{k-1}}^{t_k} ω_{1-α}(t_n - s) ds` through the `ω_{2-α}` difference.
fn cell_average_at_tn(mesh: &TimeMesh, w2: &PowerKernel, n: usize, k: usize) -> f64 {
    let tau = mesh.tau(k);
    if k == n {
        return w2.eval(tau) / tau;
    }
    let d = mesh.t(n) - mesh.t(k);
    let c = w2.beta() - 1.0;
    w2.eval(d) * (c * (tau / d).ln_1p()).exp_m1() / tau
}

fn weight_kernels(table: &KernelTable) -> (PowerKernel, PowerKernel) {
    let a = table.alpha();
    (
        PowerKernel::new(1.0 - a).expect("alpha in (0,1)"),
        PowerKernel::new(2.0 - a).expect("alpha in (0,1)"),
    )
}

/// `A^{(n)}_{n-k} >= (4/11)(1/τ_k)∫ω_{1-α}(t_n - s)ds` for `1 <= k <= n`.
/// This is also the lower half of the boundedness statement.
pub fn audit_a1(table: &KernelTable) -> Check {
    let (_, w2) = weight_kernels(table);
    Check::new(
        "A1",
        per_row(table, |mesh, n, out| {
            let row = table.row(n);
            for k in 1..=n {
                out.push(ge(n, k, row.kernel[k - 1], 4.0 / 11.0 * cell_average_at_tn(mesh, &w2, n, k)));
            }
        }),
    )
}

/// `A^{(n)}_0 <= (24/11) ω_{2-α}(τ_n)/τ_n`.
pub fn audit_bounded(table: &KernelTable) -> Check {
    let (_, w2) = weight_kernels(table);
    Check::new(
        "bounded_upper",
        per_row(table, |mesh, n, out| {
            let tau = mesh.tau(n);
            out.push(ge(n, n, 24.0 / 11.0 * w2.eval(tau) / tau, table.lag(n, 0)));
        }),
    )
}

/// `A_{n-k-1} - A_{n-k} >= (1+ρ_k) b_{n-k} + I_{n-k}/5` for `1 <= k <= n-1`.
pub fn audit_monotone(table: &KernelTable) -> Check {
    Check::new(
        "monotone",
        per_row(table, |mesh, n, out| {
            let row = table.row(n);
            for k in 1..n {
                let lhs = row.kernel[k] - row.kernel[k - 1];
                let rhs = (1.0 + mesh.rho(k)) * row.b[k - 1] + row.bridge_i[k - 1] / 5.0;
                out.push(ge(n, k, lhs, rhs));
            }
        }),
    )
}

/// `((1-2θ)/(1-θ)) A_0 > A_1` for `n >= 2`, and `θ^{(n)} >= θ` for all `n`.
pub fn audit_first_vs_second(table: &KernelTable) -> Vec<Check> {
    let theta = table.mesh().theta();
    let ratio = per_row(table, |_, n, out| {
        if n >= 2 {
            let (a0, a1) = (table.lag(n, 0), table.lag(n, 1));
            out.push(ge(n, n - 1, (1.0 - 2.0 * theta) / (1.0 - theta) * a0, a1));
        }
    });
    let theta_n = per_row(table, |_, n, out| {
        let tn = if n == 1 {
            0.5
        } else {
            let (a0, a1) = (table.lag(n, 0), table.lag(n, 1));
            (a0 - a1) / (2.0 * a0 - a1)
        };
        out.push(ge(n, n, tn, theta));
    });
    vec![Check::new("first_vs_second", ratio), Check::new("theta_n", theta_n)]
}

/// Bracketing and averaging properties of the `a` weights.
pub fn audit_a_weights(table: &KernelTable) -> Vec<Check> {
    let (w1, w2) = weight_kernels(table);
    let left = per_row(table, |mesh, n, out| {
        let row = table.row(n);
        for k in 1..=n {
            out.push(ge(n, k, row.a[k - 1], w1.eval(mesh.offset_distance(n, k - 1))));
        }
    });
    let right = per_row(table, |mesh, n, out| {
        let row = table.row(n);
        for k in 2..=n {
            out.push(ge(n, k, w1.eval(mesh.offset_distance(n, k - 1)), row.a[k - 2]));
        }
    });
    let avg = per_row(table, |mesh, n, out| {
        let row = table.row(n);
        for k in 1..n {
            out.push(ge(n, k, row.a[k - 1], cell_average_at_tn(mesh, &w2, n, k)));
        }
        out.push(ge(n, n, row.a[n - 1], 0.75 * cell_average_at_tn(mesh, &w2, n, n)));
    });
    vec![
        Check::new("a_above_left_node", left),
        Check::new("a_below_right_node", right),
        Check::new("a_above_cell_average", avg),
    ]
}

/// Positivity and upper bounds of the `b` weights.
pub fn audit_b_weights(table: &KernelTable) -> Vec<Check> {
    let theta = table.mesh().theta();
    let positive = per_row(table, |_, n, out| {
        for (k, &b) in table.row(n).b.iter().enumerate() {
            out.push(ge(n, k + 1, b, 0.0));
        }
    });
    let moment = per_row(table, |mesh, n, out| {
        let row = table.row(n);
        for k in 1..n {
            let rho = mesh.rho(k);
            let total = row.bridge_i[k - 1] + row.bridge_j[k - 1];
            out.push(ge(n, k, rho / (4.0 * (1.0 + rho)) * total, row.b[k - 1]));
        }
    });
    let vs_a = per_row(table, |mesh, n, out| {
        let row = table.row(n);
        for k in 1..n {
            let rho = mesh.rho(k);
            let lhs = theta * mesh.tau(k) / (2.0 * mesh.offset_distance(n, k)) * rho / (1.0 + rho)
                * row.a[k - 1];
            out.push(ge(n, k, lhs, row.b[k - 1]));
        }
    });
    vec![
        Check::new("b_positive", positive),
        Check::new("b_moment_bound", moment),
        Check::new("b_vs_a", vs_a),
    ]
}

/// Bridge integral inequalities for `1 <= k <= n-2`.
pub fn audit_bridges(table: &KernelTable) -> Vec<Check> {
    let vs_b = |name, which: fn(f64, f64, f64, f64) -> (f64, f64)| {
        Check::new(
            name,
            per_row(table, |mesh, n, out| {
                let row = table.row(n);
                for k in 1..n.saturating_sub(1) {
                    let (lhs, rhs) =
                        which(row.bridge_i[k - 1], row.bridge_j[k - 1], row.b[k - 1], mesh.rho(k));
                    out.push(ge(n, k, lhs, rhs));
                }
            }),
        )
    };
    let ratio = |name, pick: fn(&crate::kernels::KernelRow) -> &Vec<f64>| {
        Check::new(
            name,
            per_row(table, |mesh, n, out| {
                let v = pick(table.row(n));
                for k in 1..n.saturating_sub(1) {
                    out.push(ge(n, k, v[k], v[k - 1] / mesh.rho(k)));
                }
            }),
        )
    };
    vec![
        vs_b("I_vs_b", |i, _, b, r| (i, (1.0 + r) / r * b)),
        vs_b("J_vs_b", |_, j, b, r| (j, 2.0 * (1.0 + r) / r * b)),
        vs_b("J_vs_I", |i, j, _, _| (j, i)),
        ratio("I_ratio", |row| &row.bridge_i),
        ratio("J_ratio", |row| &row.bridge_j),
    ]
}

/// Difference identities and lower bounds for consecutive `a` weights.
pub fn audit_a_differences(table: &KernelTable) -> Vec<Check> {
    let theta = table.mesh().theta();
    let (w1, _) = weight_kernels(table);
    // additive form: the difference a_{k+1} - a_k cancels catastrophically
    // in the far history, where consecutive weights agree to ~6 digits
    let identity = per_row(table, |mesh, n, out| {
        let row = table.row(n);
        for k in 1..n {
            let gap = if k + 1 < n {
                row.bridge_i[k] + row.bridge_j[k - 1]
            } else {
                theta / (1.0 - 2.0 * theta) * w1.eval(mesh.offset_distance(n, n - 1))
                    + row.bridge_j[n - 2]
            };
            out.push(eq(n, k, row.a[k], row.a[k - 1] + gap));
        }
    });
    let lower = per_row(table, |mesh, n, out| {
        let row = table.row(n);
        for k in 1..n {
            let lhs = row.a[k] - row.a[k - 1];
            let rhs = if k + 1 < n {
                if k == 1 {
                    row.b[1] + 1.2 * row.bridge_i[0]
                } else {
                    row.b[k] + mesh.rho(k - 1) * row.b[k - 2] + row.bridge_i[k - 1] / 5.0
                }
            } else if n == 2 {
                row.bridge_i[0]
            } else {
                mesh.rho(n - 2) * row.b[n - 3] + row.bridge_i[n - 2]
            };
            out.push(ge(n, k, lhs, rhs));
        }
    });
    vec![Check::new("a_diff_identity", identity), Check::new("a_diff_lower", lower)]
}

/// `(D v)^{n-θ} v^{n-θ} >= ½ Σ_k A^{(n)}_{n-k} ∇(v^k)²` for random sequences.
/// Entries carry the trial index in `k`.
pub fn audit_quadratic_form(table: &KernelTable, trials: usize, seed: u64) -> Check {
    let theta = table.mesh().theta();
    let len = table.len();
    let entries = (0..trials)
        .into_par_iter()
        .flat_map_iter(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
            let v: Vec<f64> = (0..=len).map(|_| StandardNormal.sample(&mut rng)).collect();
            quadratic_form_entries(table, theta, &v, trial)
        })
        .collect();
    Check::new("quadratic_form", entries)
}

fn quadratic_form_entries(table: &KernelTable, theta: f64, v: &[f64], tag: usize) -> Vec<Entry> {
    table
        .rows()
        .iter()
        .map(|row| {
            let n = row.n;
            let mut dv = 0.0;
            let mut rhs = 0.0;
            for k in 1..=n {
                let a = row.kernel[k - 1];
                dv += a * (v[k] - v[k - 1]);
                rhs += a * (v[k] * v[k] - v[k - 1] * v[k - 1]);
            }
            let lhs = dv * (theta * v[n - 1] + (1.0 - theta) * v[n]);
            ge(n, tag, lhs, 0.5 * rhs)
        })
        .collect()
}

/// Complementary kernel bounds for `m = 0, 1` and the defining identity.
pub fn audit_complementary(comp: &ComplementaryKernels<'_>, table: &KernelTable) -> Vec<Check> {
    let mut checks = Vec::new();
    for m in [0u32, 1] {
        let alpha = table.alpha();
        let mesh = table.mesh();
        let lhs_k = PowerKernel::new(1.0 + (m as f64 - 1.0) * alpha).expect("alpha in (0,1)");
        let rhs_k = PowerKernel::new(1.0 + m as f64 * alpha).expect("alpha in (0,1)");
        let entries = (1..=comp.len())
            .into_par_iter()
            .map(|n| {
                let sum: f64 =
                    comp.row(n).iter().enumerate().map(|(i, p)| p * lhs_k.eval(mesh.t(i + 1))).sum();
                ge(n, 0, PI_A * rhs_k.eval(mesh.t(n)), sum)
            })
            .collect();
        checks.push(Check::new(if m == 0 { "P_bound_m0" } else { "P_bound_m1" }, entries));
    }
    let identity = (1..=comp.len())
        .into_par_iter()
        .flat_map_iter(|n| {
            let p = comp.row(n);
            (1..=n)
                .map(|k| {
                    let s: f64 = (k..=n).map(|j| p[j - 1] * table.lag(j, j - k)).sum();
                    eq(n, k, s, 1.0)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    checks.push(Check::new("P_identity", identity));
    checks
}

/// Options of a full audit run.
#[derive(Debug, Clone, Copy)]
pub struct AuditOptions {
    pub quadratic_trials: usize,
    pub seed: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            quadratic_trials: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AuditCertificate {
    pub mesh_fingerprint: u64,
    pub steps: usize,
    pub alpha: f64,
    pub theta: f64,
    /// Whether the mesh satisfies the ratio hypothesis with `θ = α/2`.
    pub hypothesis_ok: bool,
    pub checks: Vec<Check>,
}

/// FNV-1a over the node and θ bit patterns.
pub fn mesh_fingerprint(mesh: &TimeMesh) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for x in mesh.nodes().iter().chain(std::iter::once(&mesh.theta())) {
        for byte in x.to_bits().to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

impl AuditCertificate {
    pub fn verdict(&self, check: &Check) -> Verdict {
        if check.passed() {
            Verdict::Pass
        } else if self.hypothesis_ok {
            Verdict::Fail
        } else {
            Verdict::OutsideHypothesis
        }
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Per-index CSV with header `check,n,k,margin,pass`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "check,n,k,margin,pass")?;
        for check in &self.checks {
            for e in &check.entries {
                let verdict = if e.margin >= MARGIN_TOL {
                    Verdict::Pass
                } else if self.hypothesis_ok {
                    Verdict::Fail
                } else {
                    Verdict::OutsideHypothesis
                };
                writeln!(w, "{},{},{},{:e},{}", check.name, e.n, e.k, e.margin, verdict.as_str())?;
            }
        }
        Ok(())
    }

    /// One line per check: name, verdict, worst margin and where it occurred.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for check in &self.checks {
            let verdict = self.verdict(check).as_str();
            match check.worst() {
                Some(e) => s.push_str(&format!(
                    "{:<22} {:<18} worst margin {:+.3e} at n={} k={}\n",
                    check.name, verdict, e.margin, e.n, e.k
                )),
                None => s.push_str(&format!("{:<22} {:<18} (no indices)\n", check.name, verdict)),
            }
        }
        s
    }
}

/// Runs every check on one kernel table.
pub fn audit(table: &KernelTable, opts: AuditOptions) -> Result<AuditCertificate> {
    let mesh = table.mesh();
    let hypothesis_ok = check_conditions(mesh, table.alpha(), 1.0).m1_ok;
    let mut checks = vec![audit_a1(table), audit_bounded(table), audit_monotone(table)];
    checks.extend(audit_first_vs_second(table));
    checks.extend(audit_a_weights(table));
    checks.extend(audit_b_weights(table));
    checks.extend(audit_bridges(table));
    checks.extend(audit_a_differences(table));
    checks.push(audit_quadratic_form(table, opts.quadratic_trials, opts.seed));
    if check_monotone(table).is_ok() {
        let comp = ComplementaryKernels::new(table)?;
        checks.extend(audit_complementary(&comp, table));
    }
    Ok(AuditCertificate {
        mesh_fingerprint: mesh_fingerprint(mesh),
        steps: mesh.len(),
        alpha: table.alpha(),
        theta: mesh.theta(),
        hypothesis_ok,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{graded_mesh, random_admissible_mesh, random_ratio_mesh};

    fn certify(mesh: &TimeMesh, alpha: f64) -> AuditCertificate {
        let t = KernelTable::build(mesh, alpha).unwrap();
        audit(&t, AuditOptions::default()).unwrap()
    }

    #[test]
    fn uniform_and_graded_meshes_pass() {
        for &alpha in &[0.4, 0.5, 0.6, 0.8] {
            let u = graded_mesh(1.0, 32, 1.0, alpha / 2.0).unwrap();
            let c = certify(&u, alpha);
            assert!(c.all_passed(), "uniform α={alpha}\n{}", c.summary());
            let g = graded_mesh(1.0, 32, 3.0, alpha / 2.0).unwrap();
            let c = certify(&g, alpha);
            assert!(c.all_passed(), "graded α={alpha}\n{}", c.summary());
        }
    }

    #[test]
    fn random_admissible_meshes_pass() {
        for seed in 0..20 {
            let m = random_admissible_mesh(1.0, 24, 1.75, seed, 0.3).unwrap();
            let c = certify(&m, 0.6);
            assert!(c.hypothesis_ok);
            assert!(c.all_passed(), "seed {seed}\n{}", c.summary());
        }
    }

    #[test]
    fn constant_sequence_gives_zero_quadratic_form() {
        let m = graded_mesh(1.0, 8, 2.0, 0.2).unwrap();
        let t = KernelTable::build(&m, 0.4).unwrap();
        for e in quadratic_form_entries(&t, 0.2, &[3.0; 9], 0) {
            assert_eq!(e.margin, 0.0);
        }
    }

    #[test]
    fn failures_off_hypothesis_are_labelled() {
        let m = random_ratio_mesh(1.0, 24, 2.5, 3.0, 5, 0.2).unwrap();
        let c = certify(&m, 0.4);
        assert!(!c.hypothesis_ok);
        for check in &c.checks {
            assert_ne!(c.verdict(check), Verdict::Fail);
        }
    }

    #[test]
    fn csv_layout() {
        let m = graded_mesh(1.0, 4, 1.0, 0.2).unwrap();
        let c = certify(&m, 0.4);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next(), Some("check,n,k,margin,pass"));
        assert!(s.lines().skip(1).all(|l| l.split(',').count() == 5));
    }

    #[test]
    fn fingerprint_depends_on_nodes() {
        let a = graded_mesh(1.0, 4, 1.0, 0.2).unwrap();
        let b = graded_mesh(1.0, 4, 1.5, 0.2).unwrap();
        assert_ne!(mesh_fingerprint(&a), mesh_fingerprint(&b));
        assert_eq!(mesh_fingerprint(&a), mesh_fingerprint(&a.clone()));
    }
}
