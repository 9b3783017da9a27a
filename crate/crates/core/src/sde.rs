//! Euler–Maruyama simulation of `dX = b(X)dt + σ(X)dW` on the torus, occupation averages and
//! occupation histograms.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::generator::{DiffusivitySpec, DriftSpec};
use crate::rng::stream_rng;
use crate::scalar::Real;
use crate::spectral::{PeriodicField, PhaseTables, SpectralEvaluator, MAX_DIM};

/// Number of completed steps of size `h` in `[0, horizon]`.
pub fn step_count(horizon: f64, h: f64) -> usize {
    (horizon / h * (1.0 + 1e-12)).floor() as usize
}

#[inline]
fn wrap<T: Real>(x: T) -> T {
    let y = x - x.floor();
    // x slightly below an integer can round up to exactly 1
    if y >= T::one() {
        T::zero()
    } else {
        y
    }
}

/// Off-grid coefficient evaluation for the Euler–Maruyama recursion.
#[derive(Clone, Debug)]
pub struct Simulator<T: Real> {
    dim: usize,
    drift: Vec<SpectralEvaluator<T>>,
    sigma: Vec<SpectralEvaluator<T>>,
    drift_const: Option<Vec<T>>,
    sigma_const: Option<Vec<T>>,
    kmax: [usize; MAX_DIM],
}

impl<T: Real> Simulator<T> {
    pub fn new(drift: &DriftSpec<T>, diffusivity: &DiffusivitySpec<T>) -> Result<Self> {
        let dim = drift.dim();
        if diffusivity.dim() != dim {
            return Err(Error::GridMismatch("drift and diffusivity dimensions differ".into()));
        }
        let drift: Vec<_> = drift.components.iter().map(|f| f.evaluator()).collect();
        let sigma: Vec<_> = diffusivity.sigma_entries().iter().map(|f| f.evaluator()).collect();
        let constants = |evs: &[SpectralEvaluator<T>]| evs.iter().map(|e| e.constant_value()).collect::<Option<Vec<T>>>();
        let all: Vec<&SpectralEvaluator<T>> = drift.iter().chain(&sigma).collect();
        let kmax = PhaseTables::covering(dim, &all).kmax();
        Ok(Simulator { dim, drift_const: constants(&drift), sigma_const: constants(&sigma), drift, sigma, kmax })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tables(&self) -> PhaseTables<T> {
        PhaseTables::new(self.dim, self.kmax)
    }

    /// Writes `b(x)` and row-major `σ(x)` into the buffers.
    pub fn coefficients(&self, x: &[T], tables: &mut PhaseTables<T>, b: &mut [T], s: &mut [T]) {
        if self.drift_const.is_none() || self.sigma_const.is_none() {
            tables.update(x);
        }
        match &self.drift_const {
            Some(c) => b[..self.dim].copy_from_slice(c),
            None => {
                for (bi, ev) in b.iter_mut().zip(&self.drift) {
                    *bi = ev.value_at(tables);
                }
            }
        }
        match &self.sigma_const {
            Some(c) => s[..self.dim * self.dim].copy_from_slice(c),
            None => {
                for (si, ev) in s.iter_mut().zip(&self.sigma) {
                    *si = ev.value_at(tables);
                }
            }
        }
    }

    /// One step `x ← wrap(x + b(x)h + σ(x)ξ)` with buffers of length `d` and `d²`.
    #[inline]
    fn step(&self, x: &mut [T], xi: &[T], h: T, tables: &mut PhaseTables<T>, b: &mut [T], s: &mut [T]) {
        self.coefficients(x, tables, b, s);
        let d = self.dim;
        let mut next = [T::zero(); MAX_DIM];
        for a in 0..d {
            let mut v = x[a] + b[a] * h;
            for j in 0..d {
                v = v + s[a * d + j] * xi[j];
            }
            next[a] = v;
        }
        for a in 0..d {
            x[a] = wrap(next[a]);
        }
    }

    /// Runs `steps` steps with fresh `Normal(0, hI)` increments. `visit(k, X_k, ξ_k)` is called
    /// before step `k`; the final state is returned.
    pub fn run<R: Rng + ?Sized>(
        &self,
        x0: &[T],
        h: T,
        steps: usize,
        rng: &mut R,
        mut visit: impl FnMut(usize, &[T], &[T]),
    ) -> Result<Vec<T>> {
        let sqrt_h = h.sqrt();
        let d = self.dim;
        let mut xi = [T::zero(); MAX_DIM];
        self.drive(x0, h, steps, |_, out: &mut [T]| {
            for o in out.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *o = T::lit(z) * sqrt_h;
            }
        }, |k, x, noise| {
            xi[..d].copy_from_slice(noise);
            visit(k, x, &xi[..d]);
        })
    }

    /// Replays the scheme from stored increments (`steps × d`, row-major).
    pub fn replay(&self, x0: &[T], h: T, noise: &[T], visit: impl FnMut(usize, &[T], &[T])) -> Result<Vec<T>> {
        let d = self.dim;
        if noise.len() % d != 0 {
            return Err(Error::InvalidArgument("noise length is not a multiple of the dimension".into()));
        }
        self.drive(x0, h, noise.len() / d, |k, out: &mut [T]| out.copy_from_slice(&noise[k * d..(k + 1) * d]), visit)
    }

    fn drive(
        &self,
        x0: &[T],
        h: T,
        steps: usize,
        mut noise: impl FnMut(usize, &mut [T]),
        mut visit: impl FnMut(usize, &[T], &[T]),
    ) -> Result<Vec<T>> {
        let d = self.dim;
        if x0.len() != d {
            return Err(Error::InvalidArgument(format!("initial point has {} coordinates, expected {d}", x0.len())));
        }
        if !(h > T::zero()) {
            return Err(Error::InvalidArgument("step size must be positive".into()));
        }
        let mut x: Vec<T> = x0.iter().map(|&v| wrap(v)).collect();
        let mut tables = self.tables();
        let mut b = [T::zero(); MAX_DIM];
        let mut s = [T::zero(); MAX_DIM * MAX_DIM];
        let mut xi = [T::zero(); MAX_DIM];
        for k in 0..steps {
            noise(k, &mut xi[..d]);
            visit(k, &x, &xi[..d]);
            self.step(&mut x, &xi[..d], h, &mut tables, &mut b, &mut s);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { step: k + 1 });
            }
        }
        Ok(x)
    }
}

/// A stored trajectory with its driving increments.
#[derive(Clone, Debug)]
pub struct DiffusionPath<T: Real> {
    pub dim: usize,
    pub x0: Vec<T>,
    pub step: f64,
    pub horizon: f64,
    pub seed: u64,
    /// `(steps + 1) × d`, row-major.
    states: Vec<T>,
    /// `steps × d`, row-major; empty when the path was built without noise.
    noise: Vec<T>,
}

impl<T: Real> DiffusionPath<T> {
    pub fn steps(&self) -> usize {
        self.states.len() / self.dim - 1
    }

    pub fn state(&self, k: usize) -> &[T] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[T] {
        self.state(self.steps())
    }

    pub fn states(&self) -> &[T] {
        &self.states
    }

    pub fn noise(&self) -> Result<&[T]> {
        if self.noise.is_empty() && self.steps() > 0 {
            Err(Error::MissingNoise)
        } else {
            Ok(&self.noise)
        }
    }

    /// Effective horizon `steps · h` of the left-endpoint sums.
    pub fn duration(&self) -> f64 {
        self.steps() as f64 * self.step
    }

    /// Copy without the increments.
    pub fn without_noise(&self) -> Self {
        DiffusionPath { noise: Vec::new(), ..self.clone() }
    }

    /// CSV dump `step,x1..xd`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step");
        for a in 0..self.dim {
            out.push_str(&format!(",x{}", a + 1));
        }
        out.push('\n');
        for k in 0..=self.steps() {
            out.push_str(&k.to_string());
            for v in self.state(k) {
                out.push_str(&format!(",{}", v.as_f64()));
            }
            out.push('\n');
        }
        out
    }
}

/// Simulates `floor(T/h)` Euler–Maruyama steps from `x0` and stores the path.
pub fn simulate_path<T: Real>(
    drift: &DriftSpec<T>,
    diffusivity: &DiffusivitySpec<T>,
    x0: &[T],
    horizon: f64,
    h: f64,
    seed: u64,
) -> Result<DiffusionPath<T>> {
    let mut rng = stream_rng(seed, "path", 0);
    simulate_path_with(&Simulator::new(drift, diffusivity)?, x0, horizon, h, seed, &mut rng)
}

pub fn simulate_path_with<T: Real, R: Rng + ?Sized>(
    sim: &Simulator<T>,
    x0: &[T],
    horizon: f64,
    h: f64,
    seed: u64,
    rng: &mut R,
) -> Result<DiffusionPath<T>> {
    if !(h > 0.0) || !(horizon >= h) {
        return Err(Error::InvalidArgument(format!("need T >= h > 0 (got T={horizon}, h={h})")));
    }
    let steps = step_count(horizon, h);
    let d = sim.dim();
    let mut states = Vec::with_capacity((steps + 1) * d);
    let mut noise = Vec::with_capacity(steps * d);
    let last = sim.run(x0, T::lit(h), steps, rng, |_, x, xi| {
        states.extend_from_slice(x);
        noise.extend_from_slice(xi);
    })?;
    states.extend_from_slice(&last);
    Ok(DiffusionPath { dim: d, x0: x0.to_vec(), step: h, horizon, seed, states, noise })
}

/// Rebuilds a path from stored increments.
pub fn replay_path<T: Real>(sim: &Simulator<T>, x0: &[T], h: f64, noise: &[T], seed: u64) -> Result<DiffusionPath<T>> {
    let d = sim.dim();
    let mut states = Vec::with_capacity(noise.len() + d);
    let last = sim.replay(x0, T::lit(h), noise, |_, x, _| states.extend_from_slice(x))?;
    states.extend_from_slice(&last);
    let horizon = (noise.len() / d) as f64 * h;
    Ok(DiffusionPath { dim: d, x0: x0.to_vec(), step: h, horizon, seed, states, noise: noise.to_vec() })
}

/// Sums consecutive blocks of `factor` increments: the Brownian increments of the same path
/// on a grid `factor` times coarser.
pub fn coarsen_noise<T: Real>(noise: &[T], dim: usize, factor: usize) -> Vec<T> {
    let steps = noise.len() / dim / factor;
    let mut out = vec![T::zero(); steps * dim];
    for k in 0..steps {
        for j in 0..factor {
            for a in 0..dim {
                out[k * dim + a] = out[k * dim + a] + noise[(k * factor + j) * dim + a];
            }
        }
    }
    out
}

/// `(1/T) Σ_k f(X_k) h` over completed steps.
pub fn occupation_average<T: Real>(path: &DiffusionPath<T>, f: &PeriodicField<T>) -> Result<f64> {
    if f.dim() != path.dim {
        return Err(Error::GridMismatch("test function dimension differs from path".into()));
    }
    let steps = path.steps();
    if steps == 0 {
        return Err(Error::InvalidArgument("path has no completed steps".into()));
    }
    let ev = f.evaluator();
    let mut acc = OccupationSum::default();
    for k in 0..steps {
        acc.add(ev.value(path.state(k)).as_f64());
    }
    Ok(acc.mean())
}

/// Compensated running sum for long time averages.
#[derive(Clone, Copy, Debug, Default)]
pub struct OccupationSum {
    sum: f64,
    comp: f64,
    count: usize,
}

impl OccupationSum {
    pub fn add(&mut self, v: f64) {
        let y = v - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
        self.count += 1;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

/// Probability weights on the `m^d` cells of the torus (cell centres `(i + ½)/m`).
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    pub dim: usize,
    pub bins: usize,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(dim: usize, bins: usize, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM || bins < 2 {
            return Err(Error::InvalidArgument(format!("need 1 <= d <= 3 and m >= 2 (got d={dim}, m={bins})")));
        }
        if weights.len() != bins.pow(dim as u32) {
            return Err(Error::InvalidArgument("weight vector has the wrong length".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        Ok(DiscreteMeasure { dim, bins, weights })
    }

    pub fn uniform(dim: usize, bins: usize) -> Result<Self> {
        let len = bins.pow(dim as u32);
        Self::new(dim, bins, vec![1.0 / len as f64; len])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Per-axis bin indices of a flat cell index.
    pub fn cell_index(&self, flat: usize) -> [usize; MAX_DIM] {
        crate::spectral::unravel(flat, self.dim, self.bins)
    }

    pub fn cell_of(&self, x: &[f64]) -> usize {
        x.iter().take(self.dim).fold(0, |acc, &v| acc * self.bins + ((v * self.bins as f64) as usize).min(self.bins - 1))
    }
}

/// Streaming occupation histogram.
#[derive(Clone, Debug)]
pub struct HistogramAccumulator {
    dim: usize,
    bins: usize,
    counts: Vec<u64>,
    total: u64,
}

impl HistogramAccumulator {
    pub fn new(dim: usize, bins: usize) -> Self {
        HistogramAccumulator { dim, bins, counts: vec![0; bins.pow(dim as u32)], total: 0 }
    }

    #[inline]
    pub fn add<T: Real>(&mut self, x: &[T]) {
        let m = self.bins;
        let flat = x
            .iter()
            .take(self.dim)
            .fold(0, |acc, v| acc * m + ((v.as_f64() * m as f64) as usize).min(m - 1));
        self.counts[flat] += 1;
        self.total += 1;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn finish(&self) -> Result<DiscreteMeasure> {
        if self.total == 0 {
            return Err(Error::InvalidArgument("empty histogram".into()));
        }
        let t = self.total as f64;
        DiscreteMeasure::new(self.dim, self.bins, self.counts.iter().map(|&c| c as f64 / t).collect())
    }
}

/// Fraction of completed steps spent in each of the `m^d` cells.
pub fn occupation_histogram<T: Real>(path: &DiffusionPath<T>, bins: usize) -> Result<DiscreteMeasure> {
    if bins < 2 {
        return Err(Error::InvalidArgument("need at least two bins per axis".into()));
    }
    let mut acc = HistogramAccumulator::new(path.dim, bins);
    for k in 0..path.steps() {
        acc.add(path.state(k));
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::rng::stream_rng;
    use crate::spectral::{synthesize, Mode};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn degenerate(dim: usize, b: &[f64]) -> (DriftSpec<f64>, DiffusivitySpec<f64>) {
        let drift = DriftSpec::new(b.iter().map(|&v| PeriodicField::constant(dim, 8, v).unwrap()).collect()).unwrap();
        let sigma = DiffusivitySpec::new_unchecked(vec![PeriodicField::zeros(dim, 8).unwrap(); dim * dim]).unwrap();
        (drift, sigma)
    }

    #[test]
    fn frozen_and_transported_paths() {
        let (b, s) = degenerate(2, &[0.0, 0.0]);
        let p = simulate_path(&b, &s, &[0.3, 0.7], 1.0, 0.1, 1).unwrap();
        assert!((0..=p.steps()).all(|k| p.state(k) == [0.3, 0.7]));
        let (b, s) = degenerate(2, &[1.0, 0.0]);
        let p = simulate_path(&b, &s, &[0.0, 0.0], 1.0, 0.25, 1).unwrap();
        let xs: Vec<f64> = (0..=4).map(|k| p.state(k)[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 0.0]);
        let hist = occupation_histogram(&p, 4).unwrap();
        for i in 0..4 {
            assert_eq!(hist.weights[i * 4], 0.25);
        }
        let f = synthesize::<f64>(&[Mode::cos(&[1, 0], 1.0)], 2, 8).unwrap();
        let frozen = simulate_path(&degenerate(2, &[0.0, 0.0]).0, &degenerate(2, &[0.0, 0.0]).1, &[0.3, 0.7], 1.0, 0.1, 1)
            .unwrap();
        let avg = occupation_average(&frozen, &f).unwrap();
        assert!((avg - f.eval(&[0.3, 0.7])).abs() < 1e-14);
        let one_cell = occupation_histogram(&frozen, 5).unwrap();
        assert_eq!(one_cell.weights.iter().filter(|&&w| w > 0.0).count(), 1);
    }

    #[test]
    fn replay_is_bit_exact_and_confined() {
        let m = presets::shear::<f64>(2, 16).unwrap();
        let sim = Simulator::new(&m.drift, &m.diffusivity).unwrap();
        let p = simulate_path(&m.drift, &m.diffusivity, &[0.0, 0.0], 20.0, 0.01, 5).unwrap();
        let q = simulate_path(&m.drift, &m.diffusivity, &[0.0, 0.0], 20.0, 0.01, 5).unwrap();
        assert_eq!(p.states(), q.states());
        let r = replay_path(&sim, &[0.0, 0.0], 0.01, p.noise().unwrap(), 5).unwrap();
        assert_eq!(p.states(), r.states());
        assert_eq!(p.steps(), 2000);
        assert!(p.states().iter().all(|&v| (0.0..1.0).contains(&v)));
        assert!(matches!(p.without_noise().noise(), Err(Error::MissingNoise)));
    }

    #[test]
    fn constant_average_and_linearity() {
        let m = presets::zero_drift::<f64>(2, 16).unwrap();
        let p = simulate_path(&m.drift, &m.diffusivity, &[0.0, 0.0], 5.0, 0.01, 2).unwrap();
        let c = PeriodicField::constant(2, 16, 2.5).unwrap();
        assert!((occupation_average(&p, &c).unwrap() - 2.5).abs() < 1e-14);
        let f = synthesize::<f64>(&[Mode::cos(&[1, 0], 1.0)], 2, 16).unwrap();
        let g = synthesize::<f64>(&[Mode::sin(&[1, 2], 0.7)], 2, 16).unwrap();
        let lhs = occupation_average(&p, &f.axpy(3.0, &g)).unwrap();
        let rhs = occupation_average(&p, &f).unwrap() + 3.0 * occupation_average(&p, &g).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn zero_drift_histogram_is_uniform() {
        // χ² acceptance at 99% with m² − 1 degrees of freedom, on a thinned path
        let m = presets::zero_drift::<f64>(2, 16).unwrap();
        let p = simulate_path(&m.drift, &m.diffusivity, &[0.0, 0.0], 1e4, 0.01, 3).unwrap();
        let bins = 8;
        let mut counts = vec![0.0f64; bins * bins];
        // one sample per unit time keeps the draws close to independent
        let stride = 100;
        let mut total = 0.0;
        let hist = DiscreteMeasure::uniform(2, bins).unwrap();
        for k in (0..p.steps()).step_by(stride) {
            counts[hist.cell_of(p.state(k))] += 1.0;
            total += 1.0;
        }
        let expected = total / (bins * bins) as f64;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        let crit = ChiSquared::new((bins * bins - 1) as f64).unwrap().inverse_cdf(0.99);
        assert!(chi2 < crit, "{chi2} vs {crit}");
        let occ = occupation_histogram(&p, bins).unwrap();
        assert!((occ.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let f = synthesize::<f64>(&[Mode::cos(&[1, 0], 1.0)], 2, 16).unwrap();
        let sd = (1.0 / (2.0 * std::f64::consts::PI.powi(2)) / 1e4).sqrt();
        assert!(occupation_average(&p, &f).unwrap().abs() < 4.0 * sd);
    }

    #[test]
    fn weak_order_semigroup() {
        let m = presets::zero_drift::<f64>(2, 8).unwrap();
        let sim = Simulator::new(&m.drift, &m.diffusivity).unwrap();
        let x0 = [0.1, 0.0];
        for t in [0.1, 0.5] {
            let steps = step_count(t, 1e-3);
            let vals: Vec<f64> = (0..2000u64)
                .map(|i| {
                    let mut rng = stream_rng(11, "semigroup", i);
                    let x = sim.run(&x0, 1e-3, steps, &mut rng, |_, _, _| {}).unwrap();
                    (std::f64::consts::TAU * x[0]).cos()
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / 2000.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1999.0;
            let exact = (-2.0 * std::f64::consts::PI.powi(2) * t).exp() * (std::f64::consts::TAU * x0[0]).cos();
            assert!((mean - exact).abs() <= 3.0 * (var / 2000.0).sqrt(), "t={t}: {mean} vs {exact}");
        }
    }

    #[test]
    fn coarsened_noise_sums_blocks() {
        let noise = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        assert_eq!(coarsen_noise(&noise, 2, 2), vec![4.0, 6.0, 12.0, 14.0]);
    }

    #[test]
    fn f32_paths_stay_on_torus() {
        let m = presets::shear::<f32>(2, 8).unwrap();
        let p = simulate_path(&m.drift, &m.diffusivity, &[0.5f32, 0.5], 5.0, 0.01, 9).unwrap();
        assert!(p.states().iter().all(|&v| (0.0..1.0).contains(&v)));
    }
}
