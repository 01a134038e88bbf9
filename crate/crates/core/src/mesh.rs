//! Nonuniform time meshes `0 = t_0 < t_1 < ... < t_N = T` with an offset
//! parameter θ, the graded and two-part constructions, random audit meshes,
//! and the step-ratio / grading condition checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Largest step ratio `τ_k/τ_{k+1}` admitted by the kernel theory.
pub const RHO_MAX: f64 = 7.0 / 4.0;

/// Lower bound on drawn ratios in [`random_admissible_mesh`].
pub const RANDOM_RHO_MIN: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeMesh {
    nodes: Vec<f64>,
    steps: Vec<f64>,
    theta: f64,
}

impl TimeMesh {
    pub fn new(nodes: Vec<f64>, theta: f64) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidArgument("a mesh needs at least two nodes".into()));
        }
        if nodes[0] != 0.0 {
            return Err(Error::InvalidArgument(format!("t_0 must be 0, got {}", nodes[0])));
        }
        if !(0.0..0.5).contains(&theta) {
            return Err(Error::InvalidArgument(format!("theta must lie in [0, 1/2), got {theta}")));
        }
        let mut steps = Vec::with_capacity(nodes.len() - 1);
        for (k, w) in nodes.windows(2).enumerate() {
            let tau = w[1] - w[0];
            if !(tau > 0.0) || !w[1].is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "nodes must be finite and strictly increasing (t_{} = {}, t_{} = {})",
                    k,
                    w[0],
                    k + 1,
                    w[1]
                )));
            }
            steps.push(tau);
        }
        Ok(TimeMesh { nodes, steps, theta })
    }

    /// Same nodes with a different offset parameter.
    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        TimeMesh::new(self.nodes.clone(), theta)
    }

    /// Number of steps `N`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn final_time(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// `t_k` for `0 <= k <= N`.
    #[inline]
    pub fn t(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    /// `τ_k = t_k - t_{k-1}` for `1 <= k <= N`.
    #[inline]
    pub fn tau(&self, k: usize) -> f64 {
        self.steps[k - 1]
    }

    /// `ρ_k = τ_k / τ_{k+1}` for `1 <= k <= N-1`.
    #[inline]
    pub fn rho(&self, k: usize) -> f64 {
        self.steps[k - 1] / self.steps[k]
    }

    /// Offset node `t_{n-θ} = θ t_{n-1} + (1-θ) t_n`.
    #[inline]
    pub fn t_offset(&self, n: usize) -> f64 {
        self.nodes[n - 1] + (1.0 - self.theta) * self.steps[n - 1]
    }

    /// Distance `t_{n-θ} - t_j` for `j < n`, free of cancellation.
    #[inline]
    pub fn offset_distance(&self, n: usize, j: usize) -> f64 {
        debug_assert!(j < n);
        (self.nodes[n - 1] - self.nodes[j]) + (1.0 - self.theta) * self.steps[n - 1]
    }

    pub fn max_step(&self) -> f64 {
        self.steps.iter().copied().fold(0.0, f64::max)
    }

    /// Largest ratio and its index `k`, or `None` when `N = 1`.
    pub fn max_ratio(&self) -> Option<(f64, usize)> {
        (1..self.len())
            .map(|k| (self.rho(k), k))
            .fold(None, |acc, (r, k)| match acc {
                Some((best, _)) if best >= r => acc,
                _ => Some((r, k)),
            })
    }

    /// Plain-text form: a `# theta=<value>` header and one node per line.
    /// Values use the shortest representation that parses back exactly.
    pub fn to_text(&self) -> String {
        let mut s = format!("# theta={:?}\n", self.theta);
        for t in &self.nodes {
            s.push_str(&format!("{t:?}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut theta = None;
        let mut nodes = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("theta=") {
                    theta = Some(v.trim().parse::<f64>().map_err(|e| {
                        Error::Parse(format!("line {}: bad theta {v:?}: {e}", lineno + 1))
                    })?);
                }
                continue;
            }
            nodes.push(line.parse::<f64>().map_err(|e| {
                Error::Parse(format!("line {}: bad node {line:?}: {e}", lineno + 1))
            })?);
        }
        let theta = theta.ok_or_else(|| Error::Parse("missing '# theta=' header".into()))?;
        TimeMesh::new(nodes, theta)
    }
}

fn check_common(t_final: f64, n: usize, gamma: f64) -> Result<()> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidArgument(format!("T must be positive, got {t_final}")));
    }
    if n < 1 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    if !(gamma >= 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must be >= 1, got {gamma}")));
    }
    Ok(())
}

/// Smoothly graded mesh `t_k = T (k/N)^γ`.
pub fn graded_mesh(t_final: f64, n: usize, gamma: f64, theta: f64) -> Result<TimeMesh> {
    check_common(t_final, n, gamma)?;
    let nf = n as f64;
    let nodes = (0..=n)
        .map(|k| if k == n { t_final } else { t_final * (k as f64 / nf).powf(gamma) })
        .collect();
    TimeMesh::new(nodes, theta)
}

/// Parameters of the two-part construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPartLayout {
    /// End of the graded part, `T_0 = 2^{-γ}`.
    pub t0: f64,
    /// Number of graded steps, `N_0 = ⌈γN / (2^γ - 1 + γ)⌉`.
    pub n0: usize,
    /// Uniform step on `[T_0, T]`.
    pub tau_uniform: f64,
}

pub fn two_part_layout(t_final: f64, n: usize, gamma: f64) -> Result<TwoPartLayout> {
    check_common(t_final, n, gamma)?;
    let t0 = 2f64.powf(-gamma);
    if t0 >= t_final {
        return Err(Error::InvalidArgument(format!(
            "two-part mesh needs T > 2^-gamma = {t0}, got T = {t_final}"
        )));
    }
    let n0 = (gamma * n as f64 / (2f64.powf(gamma) - 1.0 + gamma)).ceil() as usize;
    if n0 >= n || n0 == 0 {
        return Err(Error::InvalidArgument(format!(
            "two-part mesh needs N_0 < N, got N_0 = {n0}, N = {n}"
        )));
    }
    Ok(TwoPartLayout {
        t0,
        n0,
        tau_uniform: (t_final - t0) / (n - n0) as f64,
    })
}

/// Graded on `[0, T_0]` with `t_n = (n/N_0)^γ T_0`, uniform on `[T_0, T]`.
pub fn two_part_mesh(t_final: f64, n: usize, gamma: f64, theta: f64) -> Result<TimeMesh> {
    let layout = two_part_layout(t_final, n, gamma)?;
    let n0f = layout.n0 as f64;
    let mut nodes = Vec::with_capacity(n + 1);
    for k in 0..=layout.n0 {
        nodes.push(if k == layout.n0 { layout.t0 } else { (k as f64 / n0f).powf(gamma) * layout.t0 });
    }
    let m = n - layout.n0;
    for j in 1..=m {
        nodes.push(if j == m {
            t_final
        } else {
            layout.t0 + j as f64 * layout.tau_uniform
        });
    }
    TimeMesh::new(nodes, theta)
}

/// Random mesh with step ratios drawn uniformly from `[0.2, rho_max]`,
/// rescaled so that `t_N = T`. Deterministic for a given seed.
pub fn random_admissible_mesh(
    t_final: f64,
    n: usize,
    rho_max: f64,
    seed: u64,
    theta: f64,
) -> Result<TimeMesh> {
    if n < 2 {
        return Err(Error::InvalidArgument("random meshes need N >= 2".into()));
    }
    if !(rho_max > 0.0 && rho_max <= RHO_MAX * (1.0 + 1e-12)) {
        return Err(Error::InvalidArgument(format!("rho_max must lie in (0, 7/4], got {rho_max}")));
    }
    random_ratio_mesh(t_final, n, RANDOM_RHO_MIN.min(rho_max), rho_max, seed, theta)
}

/// Random mesh with ratios in `[lo, hi]`; no admissibility cap. Used to probe
/// meshes outside the ratio hypothesis.
pub fn random_ratio_mesh(
    t_final: f64,
    n: usize,
    lo: f64,
    hi: f64,
    seed: u64,
    theta: f64,
) -> Result<TimeMesh> {
    if !(t_final > 0.0) || n < 1 || !(lo > 0.0 && lo <= hi) {
        return Err(Error::InvalidArgument("bad random mesh parameters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(n);
    steps.push(1.0f64);
    for _ in 1..n {
        let rho = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
        let prev = *steps.last().unwrap();
        steps.push(prev / rho);
    }
    let total: f64 = steps.iter().sum();
    let mut nodes = Vec::with_capacity(n + 1);
    nodes.push(0.0);
    let mut acc = 0.0;
    for (k, s) in steps.iter().enumerate() {
        acc += s;
        nodes.push(if k + 1 == n { t_final } else { t_final * acc / total });
    }
    TimeMesh::new(nodes, theta)
}

/// Outcome of the ratio (M1) and grading (M2) checks.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshConditionReport {
    pub m1_ok: bool,
    pub theta_matches: bool,
    /// Largest `ρ_k` and its index (`0.0`, `0` when `N = 1`).
    pub worst_rho: f64,
    pub worst_rho_index: usize,
    pub m2_ok: bool,
    /// Smallest constant satisfying the three grading inequalities.
    pub c_gamma: f64,
    pub c_gamma_index: usize,
    pub c_gamma_ceiling: f64,
    pub gamma: f64,
}

pub const DEFAULT_C_GAMMA_CEILING: f64 = 10.0;

pub fn check_conditions(mesh: &TimeMesh, alpha: f64, gamma: f64) -> MeshConditionReport {
    check_conditions_with_ceiling(mesh, alpha, gamma, DEFAULT_C_GAMMA_CEILING)
}

pub fn check_conditions_with_ceiling(
    mesh: &TimeMesh,
    alpha: f64,
    gamma: f64,
    ceiling: f64,
) -> MeshConditionReport {
    let theta_matches = mesh.theta() == alpha / 2.0;
    let (worst_rho, worst_rho_index) = mesh.max_ratio().unwrap_or((0.0, 0));
    let m1_ok = theta_matches && worst_rho <= RHO_MAX * (1.0 + 1e-12);

    let tau_max = mesh.max_step();
    let mut c = 0.0;
    let mut c_idx = 0;
    let mut bump = |v: f64, k: usize| {
        if v > c {
            c = v;
            c_idx = k;
        }
    };
    for k in 1..=mesh.len() {
        let tk = mesh.t(k);
        let cap = 1f64.min(tk.powf(1.0 - 1.0 / gamma));
        bump(mesh.tau(k) / (tau_max * cap), k);
        if k >= 2 {
            bump(tk / mesh.t(k - 1), k);
            bump((mesh.tau(k) / tk) / (mesh.tau(k - 1) / mesh.t(k - 1)), k);
        }
    }
    MeshConditionReport {
        m1_ok,
        theta_matches,
        worst_rho,
        worst_rho_index,
        m2_ok: c <= ceiling,
        c_gamma: c,
        c_gamma_index: c_idx,
        c_gamma_ceiling: ceiling,
        gamma,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graded_nodes() {
        let m = graded_mesh(1.0, 4, 2.0, 0.2).unwrap();
        assert_eq!(m.nodes(), &[0.0, 1.0 / 16.0, 0.25, 9.0 / 16.0, 1.0]);
        assert!((m.rho(1) - 1.0 / 3.0).abs() < 1e-15);
        let u = graded_mesh(1.0, 4, 1.0, 0.2).unwrap();
        assert_eq!(u.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        for k in 1..4 {
            assert_eq!(u.rho(k), 1.0);
        }
    }

    #[test]
    fn graded_rejects_bad_arguments() {
        assert!(graded_mesh(1.0, 4, 0.5, 0.2).is_err());
        assert!(graded_mesh(1.0, 4, 2.0, 0.5).is_err());
        assert!(graded_mesh(1.0, 4, 2.0, -0.1).is_err());
        assert!(graded_mesh(0.0, 4, 2.0, 0.1).is_err());
        assert!(graded_mesh(1.0, 0, 2.0, 0.1).is_err());
    }

    #[test]
    fn two_part_examples() {
        let l = two_part_layout(1.0, 8, 2.0).unwrap();
        assert_eq!(l.t0, 0.25);
        assert_eq!(l.n0, 4);
        assert!((l.tau_uniform - 0.1875).abs() < 1e-15);
        let m = two_part_mesh(1.0, 8, 2.0, 0.2).unwrap();
        assert_eq!(m.len(), 8);
        assert_eq!(m.t(4), 0.25);
        assert!(m.tau(5) >= m.tau(4));

        let l = two_part_layout(1.0, 8, 1.0).unwrap();
        assert_eq!((l.t0, l.n0), (0.5, 4));
        let m = two_part_mesh(1.0, 8, 1.0, 0.2).unwrap();
        for k in 1..=8 {
            assert!((m.tau(k) - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn two_part_rejects_too_few_steps() {
        // N = 1: N_0 = 1 = N
        assert!(two_part_mesh(1.0, 1, 2.0, 0.2).is_err());
    }

    #[test]
    fn two_part_64_passes_m1() {
        let m = two_part_mesh(1.0, 64, 2.0, 0.2).unwrap();
        assert!(check_conditions(&m, 0.4, 2.0).m1_ok);
    }

    #[test]
    fn random_mesh_examples() {
        let a = random_admissible_mesh(1.0, 16, 1.75, 1, 0.2).unwrap();
        let b = random_admissible_mesh(1.0, 16, 1.75, 1, 0.2).unwrap();
        assert_eq!(a, b);
        for k in 1..16 {
            assert!(a.rho(k) <= 1.75 && a.rho(k) >= RANDOM_RHO_MIN * (1.0 - 1e-12));
        }
        assert_eq!(a.final_time(), 1.0);
        let c = random_admissible_mesh(1.0, 2, 1.0, 7, 0.2).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.rho(1) <= 1.0 + 1e-15);
        // a degenerate ratio window pins the mesh: equal steps when lo = hi = 1
        let d = random_ratio_mesh(1.0, 2, 1.0, 1.0, 7, 0.2).unwrap();
        assert_eq!(d.nodes(), &[0.0, 0.5, 1.0]);
        assert!(random_admissible_mesh(1.0, 16, 2.0, 1, 0.2).is_err());
    }

    #[test]
    fn conditions() {
        let g = graded_mesh(1.0, 64, 3.0, 0.2).unwrap();
        let r = check_conditions(&g, 0.4, 3.0);
        assert!(r.m1_ok);
        assert!(r.worst_rho <= 1.0);
        let u = graded_mesh(1.0, 8, 1.0, 0.3).unwrap();
        assert!(!check_conditions(&u, 0.4, 1.0).m1_ok);
        let bad = TimeMesh::new(vec![0.0, 0.19, 0.29, 1.0], 0.2).unwrap();
        let r = check_conditions(&bad, 0.4, 1.0);
        assert!(!r.m1_ok);
        assert_eq!(r.worst_rho_index, 1);
        // uniform mesh: C_γ = 1 for γ = 1 apart from the node-ratio term t_2/t_1 = 2
        let r = check_conditions(&graded_mesh(1.0, 8, 1.0, 0.2).unwrap(), 0.4, 1.0);
        assert!((r.c_gamma - 2.0).abs() < 1e-12);
        assert!(r.m2_ok);
    }

    #[test]
    fn text_round_trip() {
        let m = graded_mesh(1.0, 17, 2.7, 0.35).unwrap();
        let back = TimeMesh::from_text(&m.to_text()).unwrap();
        assert_eq!(m, back);
        assert!(TimeMesh::from_text("0\n1\n").is_err());
        assert!(TimeMesh::from_text("# theta=0.2\n0\nx\n").is_err());
    }
}
