//! Metric entropy of Fourier-truncated Besov balls.
//!
//! With sharp dyadic blocks `Δ_j` the ball `{sup_j 2^{js}‖Δ_j f‖_p ≤ M, |k| ≤ K}` is a product
//! of block balls, so covering numbers in a `B^t_{p'∞}` norm factor over blocks and each
//! factor is bracketed by volume ratios. `H^t` uses the dyadic-weight equivalent
//! `(Σ_j 2^{2jt}‖Δ_j f‖²_2)^{1/2}`.

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::stats::{fit_rate, RateFit};

/// Default cap on the real dimension of the truncated ball.
pub const DEFAULT_BUDGET: u64 = 1 << 40;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BallSpec {
    pub dim: usize,
    pub s: f64,
    /// Integrability of the source ball, `2` or `∞`.
    pub p: f64,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum EntropyNorm {
    /// `B^t_{p∞}` with `p ∈ {2, ∞}`.
    Besov { t: f64, p: f64 },
    /// `H^t` through its dyadic `B^t_{22}` form.
    Sobolev { t: f64 },
}

impl EntropyNorm {
    fn t(&self) -> f64 {
        match *self {
            EntropyNorm::Besov { t, .. } | EntropyNorm::Sobolev { t } => t,
        }
    }

    fn p(&self) -> f64 {
        match *self {
            EntropyNorm::Besov { p, .. } => p,
            EntropyNorm::Sobolev { .. } => 2.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EntropyCurve {
    pub ball: BallSpec,
    pub norm: EntropyNorm,
    pub truncation: usize,
    /// Decreasing radii.
    pub radii: Vec<f64>,
    /// Certified lower bound on `log N`.
    pub lower: Vec<f64>,
    /// Certified upper bound on `log N`.
    pub upper: Vec<f64>,
    /// Midpoint of the bracket.
    pub log_covering: Vec<f64>,
    /// Radii whose midpoint moves by more than the bracket width when `K` doubles.
    pub saturated: Vec<bool>,
    /// Set when the budget forced a smaller `K` than requested.
    pub budget_exhausted: bool,
    /// Radius of the truncated ball in the target norm.
    pub diameter: f64,
}

impl EntropyCurve {
    /// Curve from given values, with a zero-width bracket.
    pub fn synthetic(radii: Vec<f64>, log_covering: Vec<f64>, diameter: f64) -> Result<Self> {
        if radii.len() != log_covering.len() {
            return Err(Error::InvalidArgument("radii and values differ in length".into()));
        }
        let n = radii.len();
        Ok(EntropyCurve {
            ball: BallSpec { dim: 1, s: f64::NAN, p: f64::NAN, radius: f64::NAN },
            norm: EntropyNorm::Sobolev { t: f64::NAN },
            truncation: 0,
            lower: log_covering.clone(),
            upper: log_covering.clone(),
            log_covering,
            radii,
            saturated: vec![false; n],
            budget_exhausted: false,
            diameter,
        })
    }
}

fn isqrt(x: i64) -> i64 {
    let mut r = (x as f64).sqrt() as i64;
    while r * r > x {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= x {
        r += 1;
    }
    r
}

/// `#{k ∈ Z^d : |k|² ≤ x}`.
fn lattice_ball(dim: usize, x: i64) -> u64 {
    if x < 0 {
        return 0;
    }
    let r = isqrt(x);
    if dim == 1 {
        return (2 * r + 1) as u64;
    }
    (-r..=r).map(|k| lattice_ball(dim - 1, x - k * k)).sum()
}

/// Number of wavevectors in each dyadic block `2^{j−1} ≤ |k| < 2^j`, `|k| ≤ K`.
pub fn block_counts(dim: usize, truncation: usize) -> Vec<u64> {
    let k2 = (truncation * truncation) as i64;
    let mut counts = vec![1u64];
    let mut below = 1u64;
    let mut j = 1;
    loop {
        let lo = 1i64 << (2 * (j - 1));
        if lo > k2 {
            break;
        }
        let hi = ((1i64 << (2 * j)) - 1).min(k2);
        let upto = lattice_ball(dim, hi);
        counts.push(upto - below);
        below = upto;
        j += 1;
    }
    counts
}

fn log_ball_volume(n: f64) -> f64 {
    0.5 * n * std::f64::consts::PI.ln() - ln_gamma(0.5 * n + 1.0)
}

struct Blocks {
    dims: Vec<f64>,
    /// Source block radii `M 2^{−js}` bracketed through body comparisons.
    r_in: Vec<f64>,
    r_out: Vec<f64>,
    /// Target block scale `2^{−jt}` bracketed likewise.
    a_in: Vec<f64>,
    a_out: Vec<f64>,
}

/// Body comparison on one block with `n` wavevectors: `‖f‖_2 ≤ ‖f‖_∞ ≤ √n ‖f‖_2`.
fn blocks(ball: &BallSpec, norm: &EntropyNorm, counts: &[u64]) -> Blocks {
    let (t, pt) = (norm.t(), norm.p());
    let mut b = Blocks { dims: vec![], r_in: vec![], r_out: vec![], a_in: vec![], a_out: vec![] };
    for (j, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let r = ball.radius * (-(j as f64) * ball.s).exp2();
        let a = (-(j as f64) * t).exp2();
        let root = (n as f64).sqrt();
        b.dims.push(n as f64);
        // both bodies are measured in the target's L^{p'} ball
        let (r_in, r_out) = match (ball.p.is_infinite(), pt.is_infinite()) {
            (true, false) => (r / root, r),
            (false, true) => (r, r * root),
            _ => (r, r),
        };
        b.r_in.push(r_in);
        b.r_out.push(r_out);
        b.a_in.push(a);
        b.a_out.push(a);
    }
    b
}

/// `(lower, upper)` bounds on `log N` at radius `eps`.
fn bracket(b: &Blocks, norm: &EntropyNorm, eps: f64) -> (f64, f64) {
    match norm {
        EntropyNorm::Besov { .. } => {
            let mut lo = 0.0;
            let mut hi = 0.0;
            for j in 0..b.dims.len() {
                let ratio_in = b.r_in[j] / (eps * b.a_out[j]);
                let ratio_out = b.r_out[j] / (eps * b.a_in[j]);
                if ratio_in > 1.0 {
                    lo += b.dims[j] * ratio_in.ln();
                }
                if ratio_out > 1.0 {
                    hi += b.dims[j] * (1.0 + 2.0 * ratio_out).ln();
                }
            }
            (lo, hi.max(lo))
        }
        EntropyNorm::Sobolev { .. } => {
            let radius: f64 = (0..b.dims.len()).map(|j| (b.r_out[j] / b.a_in[j]).powi(2)).sum::<f64>().sqrt();
            if eps >= radius {
                return (0.0, 0.0);
            }
            // projection onto the leading blocks: product of balls against an ellipsoid
            let mut lo = 0.0f64;
            let (mut acc, mut n) = (0.0, 0.0);
            for j in 0..b.dims.len() {
                acc += log_ball_volume(b.dims[j]) + b.dims[j] * (b.r_in[j] / (eps * b.a_out[j])).ln();
                n += b.dims[j];
                lo = lo.max(acc - log_ball_volume(n));
            }
            // split ε over blocks as ε_j = ε√w_j with Σ w_j ≤ 1, weights peaked at a pivot block
            let nb = b.dims.len();
            let norm_w = 1.0 / (1.0 + std::f64::consts::PI.powi(2) / 3.0);
            let mut hi = f64::INFINITY;
            for pivot in 0..nb {
                let mut total = 0.0;
                for j in 0..nb {
                    let w = norm_w / (1.0 + j.abs_diff(pivot) as f64).powi(2);
                    let ratio = b.r_out[j] / (eps * w.sqrt() * b.a_in[j]);
                    if ratio > 1.0 {
                        total += b.dims[j] * (1.0 + 2.0 * ratio).ln();
                    }
                }
                hi = hi.min(total);
            }
            (lo, hi.max(lo))
        }
    }
}

fn diameter(b: &Blocks, norm: &EntropyNorm) -> f64 {
    let ratios = (0..b.dims.len()).map(|j| b.r_out[j] / b.a_in[j]);
    match norm {
        EntropyNorm::Besov { .. } => ratios.fold(0.0, f64::max),
        EntropyNorm::Sobolev { .. } => ratios.map(|r| r * r).sum::<f64>().sqrt(),
    }
}

fn check_p(p: f64) -> Result<()> {
    if p == 2.0 || p.is_infinite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("integrability {p} not supported (use 2 or inf)")))
    }
}

/// Bracketed covering numbers of the ball in `norm` at each radius.
pub fn estimate_covering(
    ball: BallSpec,
    norm: EntropyNorm,
    radii: &[f64],
    truncation: usize,
    budget: u64,
) -> Result<EntropyCurve> {
    check_p(ball.p)?;
    check_p(norm.p())?;
    if ball.dim == 0 || ball.dim > 3 {
        return Err(Error::InvalidArgument(format!("dimension {} outside 1..=3", ball.dim)));
    }
    if !(ball.radius > 0.0) || truncation == 0 {
        return Err(Error::InvalidArgument("need positive ball radius and truncation".into()));
    }
    let inv = |p: f64| if p.is_infinite() { 0.0 } else { 1.0 / p };
    let d = ball.dim as f64;
    let gap = (d * inv(ball.p) - d * inv(norm.p())).max(0.0);
    if !(ball.s - norm.t() > gap) {
        return Err(Error::InvalidArgument(format!(
            "need s − t > {gap} (got s = {}, t = {})",
            ball.s,
            norm.t()
        )));
    }
    if radii.iter().any(|r| !(*r > 0.0)) || radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("radii must be positive and strictly decreasing".into()));
    }
    let mut k = truncation;
    let mut exhausted = false;
    let mut counts = block_counts(ball.dim, k);
    while counts.iter().sum::<u64>() > budget && k > 1 {
        k /= 2;
        exhausted = true;
        counts = block_counts(ball.dim, k);
    }
    let b = blocks(&ball, &norm, &counts);
    let b2 = blocks(&ball, &norm, &block_counts(ball.dim, 2 * k));
    let mut curve = EntropyCurve {
        ball,
        norm,
        truncation: k,
        radii: radii.to_vec(),
        lower: vec![],
        upper: vec![],
        log_covering: vec![],
        saturated: vec![],
        budget_exhausted: exhausted,
        diameter: diameter(&b, &norm),
    };
    for &eps in radii {
        let (lo, hi) = bracket(&b, &norm, eps);
        let (lo2, hi2) = bracket(&b2, &norm, eps);
        curve.lower.push(lo);
        curve.upper.push(hi);
        curve.log_covering.push(0.5 * (lo + hi));
        let moved = (0.5 * (lo2 + hi2) - 0.5 * (lo + hi)).abs();
        curve.saturated.push(moved > (hi - lo).max(1e-9 * hi));
    }
    Ok(curve)
}

/// Geometric grid of `count` radii from `hi` down to `lo`.
pub fn geometric_radii(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| hi * (lo / hi).powf(i as f64 / (count - 1) as f64)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ExponentFit {
    /// Slope of `log log N` against `log(1/ε)` on the bracket midpoint.
    pub estimate: f64,
    pub from_lower: f64,
    pub from_upper: f64,
    pub fit: RateFit,
    pub points: usize,
}

fn usable(curve: &EntropyCurve) -> Vec<usize> {
    (0..curve.radii.len())
        .filter(|&i| curve.lower[i] > 0.0 && !curve.saturated[i] && curve.radii[i] < curve.diameter)
        .collect()
}

/// Power-law exponent of `log N` in `1/ε` over unsaturated radii.
pub fn fit_exponent(curve: &EntropyCurve) -> Result<ExponentFit> {
    let idx = usable(curve);
    if idx.len() < 3 {
        return Err(Error::InvalidArgument("fewer than three usable radii".into()));
    }
    let x: Vec<f64> = idx.iter().map(|&i| 1.0 / curve.radii[i]).collect();
    let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let fit = fit_rate(&x, &pick(&curve.log_covering))?;
    Ok(ExponentFit {
        estimate: fit.slope,
        from_lower: fit_rate(&x, &pick(&curve.lower))?.slope,
        from_upper: fit_rate(&x, &pick(&curve.upper))?.slope,
        fit,
        points: idx.len(),
    })
}

fn validate(curve: &EntropyCurve) -> Result<()> {
    let n = curve.radii.len();
    if n < 5 || curve.radii[0] / curve.radii[n - 1] < 10.0 * (1.0 - 1e-12) {
        return Err(Error::InvalidArgument("need at least five radii spanning a decade".into()));
    }
    if curve.log_covering.windows(2).any(|w| w[1] < w[0] - 1e-9 * w[0].abs().max(1.0)) {
        return Err(Error::InvalidArgument("log N must be nonincreasing in ε".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct DudleyReport {
    /// `∫₀^D √log N dε`, infinite when divergent.
    pub value: f64,
    pub measured: f64,
    /// Power-law extrapolation below the smallest radius.
    pub small_scale: f64,
    /// Linear closure from the largest radius to the diameter.
    pub large_scale: f64,
    /// Fitted exponent of `√log N` in `ε`.
    pub exponent: f64,
    pub divergent: bool,
}

/// Dudley entropy integral of the bracket midpoint.
pub fn dudley_integral(curve: &EntropyCurve) -> Result<DudleyReport> {
    validate(curve)?;
    let root: Vec<f64> = curve.log_covering.iter().map(|v| v.max(0.0).sqrt()).collect();
    let r = &curve.radii;
    let n = r.len();
    if root.iter().all(|&v| v == 0.0) {
        return Ok(DudleyReport { value: 0.0, measured: 0.0, small_scale: 0.0, large_scale: 0.0, exponent: 0.0, divergent: false });
    }
    let measured: f64 = (0..n - 1).map(|i| 0.5 * (root[i] + root[i + 1]) * (r[i] - r[i + 1])).sum();
    let large_scale = if curve.diameter > r[0] { 0.5 * root[0] * (curve.diameter - r[0]) } else { 0.0 };
    let idx: Vec<usize> = (0..n).filter(|&i| root[i] > 0.0 && !curve.saturated[i]).collect();
    if idx.len() < 2 {
        return Err(Error::InvalidArgument("too few positive entropy values to extrapolate".into()));
    }
    let fit = fit_rate(&idx.iter().map(|&i| r[i]).collect::<Vec<_>>(), &idx.iter().map(|&i| root[i]).collect::<Vec<_>>())?;
    let alpha = fit.slope;
    let divergent = alpha <= -1.0;
    let small_scale = if divergent {
        f64::INFINITY
    } else {
        let last = r[n - 1];
        let c = fit.intercept.exp();
        c * last.powf(alpha + 1.0) / (alpha + 1.0)
    };
    Ok(DudleyReport {
        value: measured + large_scale + small_scale,
        measured,
        small_scale,
        large_scale,
        exponent: alpha,
        divergent,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SudakovReport {
    /// Slope of `log(ε√log N)` against `log(1/ε)`; positive means growth as `ε → 0`.
    pub growth_exponent: f64,
    pub from_lower: f64,
    pub from_upper: f64,
    pub ci: (f64, f64),
}

/// Trend of `ε √log N` over the measured range.
pub fn sudakov_check(curve: &EntropyCurve) -> Result<SudakovReport> {
    validate(curve)?;
    let idx = usable(curve);
    let idx = if curve.truncation == 0 {
        (0..curve.radii.len()).filter(|&i| curve.log_covering[i] > 0.0).collect()
    } else {
        idx
    };
    if idx.len() < 3 {
        return Err(Error::InvalidArgument("fewer than three usable radii".into()));
    }
    let x: Vec<f64> = idx.iter().map(|&i| 1.0 / curve.radii[i]).collect();
    let series = |v: &[f64]| idx.iter().map(|&i| curve.radii[i] * v[i].sqrt()).collect::<Vec<f64>>();
    let mid = fit_rate(&x, &series(&curve.log_covering))?;
    Ok(SudakovReport {
        growth_exponent: mid.slope,
        from_lower: fit_rate(&x, &series(&curve.lower))?.slope,
        from_upper: fit_rate(&x, &series(&curve.upper))?.slope,
        ci: mid.ci,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const INF: f64 = f64::INFINITY;

    fn ball(dim: usize, s: f64, p: f64) -> BallSpec {
        BallSpec { dim, s, p, radius: 1.0 }
    }

    #[test]
    fn lattice_counts() {
        assert_eq!(block_counts(1, 8), vec![1, 2, 4, 8, 2]);
        let c = block_counts(2, 4);
        // |k|² ≤ 16 has 49 points
        assert_eq!(c.iter().sum::<u64>(), 49);
        assert_eq!(c, vec![1, 8, 36, 4]);
        let brute = (-5i64..=5)
            .flat_map(|a| (-5i64..=5).flat_map(move |b| (-5i64..=5).map(move |c| a * a + b * b + c * c)))
            .filter(|&r| r <= 25)
            .count() as u64;
        assert_eq!(block_counts(3, 5).iter().sum::<u64>(), brute);
    }

    #[test]
    fn zero_entropy_beyond_the_diameter() {
        for norm in [EntropyNorm::Besov { t: -0.5, p: INF }, EntropyNorm::Sobolev { t: -1.0 }] {
            let c = estimate_covering(ball(2, 1.0, 2.0), norm, &[1.0], 64, DEFAULT_BUDGET).unwrap();
            let big = 1.01 * c.diameter;
            let c = estimate_covering(ball(2, 1.0, 2.0), norm, &[2.0 * big, big], 64, DEFAULT_BUDGET).unwrap();
            assert_eq!(c.upper, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn bracket_is_ordered_and_monotone() {
        let radii = geometric_radii(1.0, 1e-3, 25);
        for (b, norm) in [
            (ball(1, 1.0, INF), EntropyNorm::Besov { t: -0.5, p: INF }),
            (ball(2, 1.0, INF), EntropyNorm::Sobolev { t: -1.0 }),
            (ball(3, 1.5, 2.0), EntropyNorm::Besov { t: -0.5, p: INF }),
        ] {
            let c = estimate_covering(b, norm, &radii, 256, DEFAULT_BUDGET).unwrap();
            for i in 0..radii.len() {
                assert!(c.lower[i] <= c.upper[i]);
            }
            assert!(c.upper.windows(2).all(|w| w[1] >= w[0]));
            assert!(c.lower.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn exponent_of_the_one_dimensional_example() {
        let radii = geometric_radii(0.05, 0.005, 12);
        let c = estimate_covering(ball(1, 1.0, INF), EntropyNorm::Besov { t: -0.5, p: INF }, &radii, 1024, DEFAULT_BUDGET).unwrap();
        let fit = fit_exponent(&c).unwrap();
        let target = 1.0 / 1.5;
        assert!((fit.estimate / target - 1.0).abs() <= 0.25, "{fit:?}");
    }

    #[test]
    fn radius_scaling_shifts_the_curve() {
        let radii = geometric_radii(0.1, 0.001, 9);
        let norm = EntropyNorm::Sobolev { t: -1.0 };
        let c1 = estimate_covering(ball(2, 0.5, 2.0), norm, &radii, 512, DEFAULT_BUDGET).unwrap();
        let doubled: Vec<f64> = radii.iter().map(|r| 2.0 * r).collect();
        let mut b2 = ball(2, 0.5, 2.0);
        b2.radius = 2.0;
        let c2 = estimate_covering(b2, norm, &doubled, 512, DEFAULT_BUDGET).unwrap();
        for i in 0..radii.len() {
            assert!((c1.lower[i] - c2.lower[i]).abs() <= 1e-9 * c1.lower[i].max(1.0));
            assert!((c1.upper[i] - c2.upper[i]).abs() <= 1e-9 * c1.upper[i].max(1.0));
        }
    }

    #[test]
    fn truncation_doubling_is_stable_off_saturation() {
        let radii = geometric_radii(0.1, 0.01, 8);
        let norm = EntropyNorm::Besov { t: -0.5, p: INF };
        let c = estimate_covering(ball(2, 1.5, INF), norm, &radii, 256, DEFAULT_BUDGET).unwrap();
        let c2 = estimate_covering(ball(2, 1.5, INF), norm, &radii, 512, DEFAULT_BUDGET).unwrap();
        for i in 0..radii.len() {
            assert!(!c.saturated[i]);
            assert!((c2.log_covering[i] - c.log_covering[i]).abs() <= c.upper[i] - c.lower[i]);
        }
        let coarse = estimate_covering(ball(2, 1.5, INF), norm, &radii, 4, DEFAULT_BUDGET).unwrap();
        assert!(coarse.saturated.iter().any(|&s| s));
    }

    #[test]
    fn budget_truncates_with_flag() {
        let c = estimate_covering(ball(3, 1.0, 2.0), EntropyNorm::Sobolev { t: -1.0 }, &[0.1, 0.05], 512, 10_000).unwrap();
        assert!(c.budget_exhausted);
        assert!(c.truncation < 512);
    }

    #[test]
    fn hypothesis_is_enforced() {
        let r = estimate_covering(ball(2, 0.1, 2.0), EntropyNorm::Besov { t: -0.5, p: INF }, &[0.1], 64, DEFAULT_BUDGET);
        assert!(r.is_err());
    }

    #[test]
    fn dudley_on_synthetic_curves() {
        let radii = geometric_radii(1.0, 0.01, 40);
        let zero = EntropyCurve::synthetic(radii.clone(), vec![0.0; 40], 1.0).unwrap();
        assert_eq!(dudley_integral(&zero).unwrap().value, 0.0);
        let inv: Vec<f64> = radii.iter().map(|r| 1.0 / r).collect();
        let d = dudley_integral(&EntropyCurve::synthetic(radii.clone(), inv, 1.0).unwrap()).unwrap();
        assert!(!d.divergent);
        assert!((d.value / 2.0 - 1.0).abs() < 0.05, "{d:?}");
        let cube: Vec<f64> = radii.iter().map(|r| r.powi(-3)).collect();
        assert!(dudley_integral(&EntropyCurve::synthetic(radii.clone(), cube, 1.0).unwrap()).unwrap().divergent);
        let mut bumpy: Vec<f64> = radii.iter().map(|r| 1.0 / r).collect();
        bumpy[3] = 0.0;
        assert!(dudley_integral(&EntropyCurve::synthetic(radii, bumpy, 1.0).unwrap()).is_err());
    }

    #[test]
    fn sudakov_trends() {
        let radii = geometric_radii(0.1, 0.01, 10);
        let flat = EntropyCurve::synthetic(radii.clone(), vec![4.0; 10], 1.0).unwrap();
        assert!((sudakov_check(&flat).unwrap().growth_exponent + 1.0).abs() < 1e-10);
        let norm = EntropyNorm::Sobolev { t: -1.0 };
        let rough = estimate_covering(ball(3, 0.25, 2.0), norm, &radii, 1024, DEFAULT_BUDGET).unwrap();
        let smooth = estimate_covering(ball(3, 2.0, 2.0), norm, &radii, 1024, DEFAULT_BUDGET).unwrap();
        let g_rough = sudakov_check(&rough).unwrap();
        let g_smooth = sudakov_check(&smooth).unwrap();
        assert!(g_rough.growth_exponent > 0.0, "{g_rough:?}");
        assert!(g_smooth.growth_exponent < 0.0, "{g_smooth:?}");
    }
}
