//! Adaptive Gauss–Kronrod and fixed Gauss–Legendre quadrature.
//!
//! The adaptive driver follows the QUADPACK `qag` strategy with the 21-point
//! Kronrod extension of the 10-point Gauss rule: the interval with the largest
//! error estimate is bisected until the global estimate meets the tolerance.
//! Integrable algebraic endpoint singularities are handled by a power change
//! of variables that makes the transformed integrand bounded.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_932_299_918,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss weights for XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// Stopping rule for the adaptive driver.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Tolerance {
    pub fn relative(rel: f64) -> Self {
        Tolerance {
            abs: 0.0,
            rel,
            max_intervals: 2000,
        }
    }

    pub fn with_abs(mut self, abs: f64) -> Self {
        self.abs = abs;
        self
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::relative(1e-12)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub abs_err: f64,
    pub intervals: usize,
    pub converged: bool,
}

fn rescale_error(err: f64, res_abs: f64, res_asc: f64) -> f64 {
    let mut err = err.abs();
    if res_asc != 0.0 && err != 0.0 {
        let scale = (200.0 * err / res_asc).powf(1.5);
        err = if scale < 1.0 { res_asc * scale } else { res_asc };
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    err
}

/// One application of the 21-point Kronrod rule on `[a, b]`.
///
/// Returns `(kronrod estimate, error estimate)`.
pub fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = WGK[10] * fc;
    let mut res_g = 0.0;
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let x = half * XGK[j];
        let f1 = f(center - x);
        let f2 = f(center + x);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let h = half.abs();
    let err = rescale_error((res_k - res_g) * half, res_abs * h, res_asc * h);
    (res_k * half, err)
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Globally adaptive Gauss–Kronrod quadrature of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> QuadResult {
    if a == b {
        return QuadResult {
            value: 0.0,
            abs_err: 0.0,
            intervals: 0,
            converged: true,
        };
    }
    let (v0, e0) = gk21(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Segment {
        a,
        b,
        value: v0,
        err: e0,
    });
    let mut total = v0;
    let mut total_err = e0;
    let mut intervals = 1;
    // Segments too short to bisect again are retired with their estimate.
    let mut retired_value = 0.0;
    let mut retired_err = 0.0;
    loop {
        let target = tol.abs.max(tol.rel * total.abs());
        if total_err <= target || intervals >= tol.max_intervals {
            break;
        }
        let Some(seg) = heap.pop() else { break };
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a.min(seg.b) || mid >= seg.a.max(seg.b) {
            retired_value += seg.value;
            retired_err += seg.err;
            continue;
        }
        let (vl, el) = gk21(&f, seg.a, mid);
        let (vr, er) = gk21(&f, mid, seg.b);
        total += vl + vr - seg.value;
        total_err += el + er - seg.err;
        intervals += 1;
        heap.push(Segment {
            a: seg.a,
            b: mid,
            value: vl,
            err: el,
        });
        heap.push(Segment {
            a: mid,
            b: seg.b,
            value: vr,
            err: er,
        });
        // Periodic resummation keeps the running totals from drifting.
        if intervals % 64 == 0 {
            total = retired_value + heap.iter().map(|s| s.value).sum::<f64>();
            total_err = retired_err + heap.iter().map(|s| s.err).sum::<f64>();
        }
    }
    let value = retired_value + heap.iter().map(|s| s.value).sum::<f64>();
    let abs_err = retired_err + heap.iter().map(|s| s.err).sum::<f64>();
    let target = tol.abs.max(tol.rel * value.abs());
    QuadResult {
        value,
        abs_err,
        intervals,
        converged: abs_err <= target,
    }
}

/// Integrates a function with an algebraic singularity `d^{-beta}` at one
/// endpoint, where `d` is the distance to that endpoint.
///
/// The integrand is supplied as a function of `d` in `(0, len)`, so callers
/// never lose the small offset to cancellation in `x - a`. The substitution
/// `d = len * u^m` with `m = 1/(1 - beta)` cancels the leading singular factor.
pub fn integrate_endpoint_singular<F: Fn(f64) -> f64>(
    f: F,
    len: f64,
    beta: f64,
    tol: Tolerance,
) -> QuadResult {
    assert!(beta < 1.0, "non-integrable endpoint singularity");
    let m = if beta > 0.0 { (1.0 / (1.0 - beta)).min(50.0) } else { 1.0 };
    if m == 1.0 {
        return integrate(f, 0.0, len, tol);
    }
    integrate(
        |u: f64| {
            let d = len * u.powf(m);
            if d <= 0.0 {
                return 0.0;
            }
            f(d) * len * m * u.powf(m - 1.0)
        },
        0.0,
        1.0,
        tol,
    )
}

/// Integral over `[a, b]` of a function singular at one or both ends.
///
/// `f(x, dl, dr)` receives the point together with its exact distances to the
/// left and right endpoints. `beta_left`/`beta_right` are the singularity
/// exponents (use `0.0` for a regular end).
pub fn integrate_two_sided<F: Fn(f64, f64, f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    beta_left: f64,
    beta_right: f64,
    tol: Tolerance,
) -> QuadResult {
    let len = b - a;
    let half = 0.5 * len;
    let left = integrate_endpoint_singular(|d| f(a + d, d, len - d), half, beta_left, tol);
    let right = integrate_endpoint_singular(|d| f(b - d, len - d, d), len - half, beta_right, tol);
    QuadResult {
        value: left.value + right.value,
        abs_err: left.abs_err + right.abs_err,
        intervals: left.intervals + right.intervals,
        converged: left.converged && right.converged,
    }
}

/// Fixed Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the `n`-point rule by Newton iteration on `P_n`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                let pn = if n == 1 { x } else { p1 };
                let pm = if n == 1 { 1.0 } else { p0 };
                dp = nf * (x * pn - pm) / (x * x - 1.0);
                let dx = pn / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            weights[i] = w;
            nodes[n - 1 - i] = x;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (c + h * x, h * w))
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_integrates_polynomials_exactly() {
        let (v, _) = gk21(&|x: f64| x.powi(20) - 3.0 * x.powi(7), 0.0, 1.0);
        assert!((v - (1.0 / 21.0 - 3.0 / 8.0)).abs() < 1e-15);
    }

    #[test]
    fn adaptive_handles_peaks() {
        let r = integrate(|x: f64| 1.0 / (1e-4 + x * x), -1.0, 1.0, Tolerance::relative(1e-12));
        let exact = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert!(r.converged);
        assert!((r.value - exact).abs() / exact < 1e-12);
    }

    #[test]
    fn endpoint_singularity_is_resolved() {
        // ∫_0^1 d^{-0.8} dd = 5
        let r = integrate_endpoint_singular(|d: f64| d.powf(-0.8), 1.0, 0.8, Tolerance::relative(1e-13));
        assert!((r.value - 5.0).abs() < 1e-12);
        // ∫_0^2 x^{-1/2} (2-x)^{-1/2} dx = π
        let r = integrate_two_sided(
            |_, dl: f64, dr: f64| 1.0 / (dl * dr).sqrt(),
            0.0,
            2.0,
            0.5,
            0.5,
            Tolerance::relative(1e-13),
        );
        assert!((r.value - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn gauss_legendre_weights_and_exactness() {
        for n in [1, 2, 5, 16, 32] {
            let gl = GaussLegendre::new(n);
            let sum: f64 = gl.weights.iter().sum();
            assert!((sum - 2.0).abs() < 1e-14, "n={n}");
            let deg = 2 * n - 1;
            let v = gl.integrate(|x| x.powi(deg as i32 - 1) + 1.0, 0.0, 1.0);
            assert!((v - (1.0 / deg as f64 + 1.0)).abs() < 1e-14, "n={n}");
        }
    }
}
