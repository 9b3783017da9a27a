//! The acceptance suite. Each criterion returns a verdict with the measured numbers; `quick`
//! shrinks sample sizes for smoke runs, where verdicts are not meaningful.

use std::f64::consts::PI;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use torus_clt::entropy::{
    dudley_integral, estimate_covering, fit_exponent, geometric_radii, BallSpec, EntropyNorm, DEFAULT_BUDGET,
};
use torus_clt::generator::{assemble, assemble_adjoint};
use torus_clt::invariant::solve_invariant;
use torus_clt::limit::{covariance, decompose_with, quadratic_variation};
use torus_clt::poisson::{center_mu, smoothing_ratio, solve_poisson, solve_poisson_dense};
use torus_clt::presets;
use torus_clt::rng::stream_rng;
use torus_clt::sde::{coarsen_noise, replay_path, simulate_path, simulate_path_with, Simulator};
use torus_clt::spectral::synthesize;
use torus_clt::stats::{ks_one_sample, ks_two_sample};
use torus_clt::wasserstein::{rate_experiment, RateConfig, RateReport};
use torus_clt::{BesovIndex, Mode};

use crate::error::CliError;
use crate::experiments::{clt_samples, normal_cdf, Setup, SOLVER_TOL};
use crate::output::{Artifacts, Table};

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// Wall-clock time; kept out of the CSV so reruns stay byte-identical.
    pub seconds: f64,
}

fn verdict(id: u32, name: &str, passed: bool, detail: String, start: Instant) -> Verdict {
    Verdict { id, name: name.into(), passed, detail, seconds: start.elapsed().as_secs_f64() }
}

fn model_setup(name: &str, dim: usize, n: usize) -> Result<Setup, CliError> {
    let model = presets::by_name::<f64>(name, dim, n)?;
    let l = assemble(&model.drift, &model.diffusivity)?;
    let mu = solve_invariant(&assemble_adjoint(&model.drift, &model.diffusivity)?, SOLVER_TOL)?;
    Ok(Setup { model, l, mu })
}

/// Ten random modes with `|k_i| ≤ kmax` and amplitudes uniform in `[-1, 1]`.
pub fn random_modes(rng: &mut impl Rng, dim: usize, kmax: i64) -> Vec<Mode> {
    (0..10)
        .map(|_| {
            let k: Vec<i64> = (0..dim).map(|_| rng.random_range(-kmax..=kmax)).collect();
            Mode::new(&k, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
        .collect()
}

fn unit_cos(dim: usize, scale: f64) -> Vec<Mode> {
    let mut k = vec![0; dim];
    k[0] = 1;
    vec![Mode::cos(&k, scale)]
}

/// Invariant density of the one-dimensional gradient model against `e^{2B}/∫e^{2B}`.
pub fn invariant_oracle() -> Result<Verdict, CliError> {
    let start = Instant::now();
    let m = presets::default_gradient::<f64>(1, 64)?;
    let mu = solve_invariant(&assemble_adjoint(&m.drift, &m.diffusivity)?, 1e-12)?;
    let exact = presets::gradient_density::<f64>(1, 64, &presets::default_potential(1))?;
    let err = mu.density.sub(&exact).grid_sup();
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("sup error {err:.3e} (≤ 1e-6), runtime < 10s: {}", secs < 10.0);
    Ok(verdict(1, "invariant measure oracle", err <= 1e-6 && secs < 10.0, detail, start))
}

/// Single-mode Poisson solutions in closed form, and iterative against dense solves.
pub fn poisson_oracle(seed: u64) -> Result<Verdict, CliError> {
    let start = Instant::now();
    let (d, n) = (2, 32);
    let s = model_setup("zero-drift", d, n)?;
    let mut closed = 0.0f64;
    for k in [[1i64, 0], [0, 1], [1, 1], [2, -1], [3, 2], [5, 0]] {
        let f = synthesize::<f64>(&[Mode::cos(&k, 1.0)], d, n)?;
        let u = solve_poisson(&s.l, &f, &s.mu, 1e-13)?.u;
        let k2 = (k[0] * k[0] + k[1] * k[1]) as f64;
        let exact = f.scale(-1.0 / (2.0 * PI * PI * k2));
        closed = closed.max(u.sub(&exact).grid_sup());
    }
    let mut dense = 0.0f64;
    let mut rng = stream_rng(seed, "acceptance/poisson", 0);
    for name in ["gradient", "shear"] {
        let s = model_setup(name, d, n)?;
        for _ in 0..3 {
            let f = center_mu(&synthesize(&random_modes(&mut rng, d, 6), d, n)?, &s.mu)?;
            let u = solve_poisson(&s.l, &f, &s.mu, 1e-13)?.u;
            let v = solve_poisson_dense(&s.l, &f)?;
            dense = dense.max(u.sub(&v).grid_sup());
        }
    }
    let detail = format!("closed-form sup error {closed:.3e} (≤ 1e-10), dense sup discrepancy {dense:.3e} (≤ 1e-8)");
    Ok(verdict(2, "Poisson oracle", closed <= 1e-10 && dense <= 1e-8, detail, start))
}

/// `|⟨Lu,v⟩ − ⟨u,L*v⟩| ≤ 1e-8‖u‖‖v‖` on random pairs.
pub fn duality(seed: u64) -> Result<Verdict, CliError> {
    let start = Instant::now();
    let (d, n) = (2, 16);
    let mut worst = 0.0f64;
    for name in ["gradient", "shear", "modulated"] {
        let m = presets::by_name::<f64>(name, d, n)?;
        let l = assemble(&m.drift, &m.diffusivity)?;
        let adj = assemble_adjoint(&m.drift, &m.diffusivity)?;
        let mut rng = stream_rng(seed, &format!("acceptance/duality/{name}"), 0);
        for _ in 0..50 {
            let u = synthesize::<f64>(&random_modes(&mut rng, d, 4), d, n)?;
            let v = synthesize::<f64>(&random_modes(&mut rng, d, 4), d, n)?;
            let gap = (l.apply(&u)?.inner(&v) - u.inner(&adj.apply(&v)?)).abs();
            worst = worst.max(gap / (u.l2_norm() * v.l2_norm()));
        }
    }
    let detail = format!("worst relative gap {worst:.3e} over 150 pairs (≤ 1e-8)");
    Ok(verdict(3, "duality identity", worst <= 1e-8, detail, start))
}

/// KS of `G_T(√2 cos 2πx₁)` against `Normal(0, 1/π²)`.
pub fn clt_marginal(seed: u64, quick: bool) -> Result<Verdict, CliError> {
    let start = Instant::now();
    let (reps, horizon) = if quick { (30, 20.0) } else { (200, 200.0) };
    let s = model_setup("zero-drift", 2, 16)?;
    let f = synthesize::<f64>(&unit_cos(2, std::f64::consts::SQRT_2), 2, 16)?;
    let var = covariance(&f, &f, &s.l, &s.mu, SOLVER_TOL)?;
    let target = 1.0 / (PI * PI);
    let samples = clt_samples(&s, std::slice::from_ref(&f), &[0.0, 0.0], horizon, 0.01, reps, seed)?;
    let xs: Vec<f64> = samples.iter().map(|v| v[0]).collect();
    let ks = ks_one_sample(&xs, normal_cdf(target), "Normal(0, 1/π²)")?;
    let secs = start.elapsed().as_secs_f64();
    let var_ok = (var - target).abs() <= 1e-8 * target;
    let detail = format!(
        "KS p = {:.4} (> 0.01), n = {reps}, limit variance {var:.10} vs 1/π² = {target:.10}, runtime < 300s: {}",
        ks.p_value,
        secs < 300.0
    );
    Ok(verdict(4, "CLT marginal", ks.p_value > 0.01 && var_ok && secs < 300.0, detail, start))
}

/// RMS of the decomposition residual over coupled paths at `h`, `h/2`, `h/4`.
pub fn martingale(seed: u64, quick: bool) -> Result<Verdict, CliError> {
    let start = Instant::now();
    let (paths, horizon) = if quick { (10, 2.0) } else { (100, 10.0) };
    let (d, n) = (2, 16);
    let s = model_setup("zero-drift", d, n)?;
    let sim = Simulator::new(&s.model.drift, &s.model.diffusivity)?;
    let f = synthesize::<f64>(&unit_cos(d, 1.0), d, n)?;
    let u = solve_poisson(&s.l, &f, &s.mu, SOLVER_TOL)?.u;
    let fine_h = 0.0025;
    let per_path = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = stream_rng(seed, "acceptance/martingale", p as u64);
            let fine = simulate_path_with(&sim, &[0.0, 0.0], horizon, fine_h, seed, &mut rng)?;
            let noise = fine.noise()?.to_vec();
            [4usize, 2, 1]
                .iter()
                .map(|&factor| {
                    let coarse = coarsen_noise(&noise, d, factor);
                    let path = replay_path(&sim, &[0.0, 0.0], fine_h * factor as f64, &coarse, seed)?;
                    Ok(decompose_with(&path, &coarse, &f, &u, &s.model.diffusivity, &s.mu)?.residual.powi(2))
                })
                .collect::<torus_clt::Result<Vec<f64>>>()
        })
        .collect::<torus_clt::Result<Vec<_>>>()?;
    let rms: Vec<f64> = (0..3).map(|i| (per_path.iter().map(|r| r[i]).sum::<f64>() / paths as f64).sqrt()).collect();
    let ratios = [rms[1] / rms[0], rms[2] / rms[1]];
    let ok = ratios.iter().all(|r| (0.3..=0.8).contains(r));
    let detail = format!(
        "residual RMS {:.4e}, {:.4e}, {:.4e} at h = 0.01, 0.005, 0.0025; ratios {:.3}, {:.3} (in [0.3, 0.8])",
        rms[0], rms[1], rms[2], ratios[0], ratios[1]
    );
    Ok(verdict(5, "martingale decomposition", ok, detail, start))
}

/// Time average of `‖σᵀ∇u‖²` against `C(f, f)`.
pub fn quadratic_variation_limit(seed: u64, quick: bool) -> Result<Verdict, CliError> {
    let start = Instant::now();
    let horizon = if quick { 500.0 } else { 1e4 };
    let (d, n) = (2, 16);
    let s = model_setup("zero-drift", d, n)?;
    let f = synthesize::<f64>(&unit_cos(d, 1.0), d, n)?;
    let u = solve_poisson(&s.l, &f, &s.mu, SOLVER_TOL)?.u;
    let c = covariance(&f, &f, &s.l, &s.mu, SOLVER_TOL)?;
    let path = simulate_path(&s.model.drift, &s.model.diffusivity, &[0.0, 0.0], horizon, 0.01, seed)?;
    let (qv, se) = quadratic_variation(&path, &u, &s.model.diffusivity, 50)?;
    let detail = format!("time average {qv:.6} ± {se:.6} (batch-means SE) vs C(f,f) = {c:.6}; |diff| = {:.2} SE (≤ 3)", (qv - c).abs() / se);
    Ok(verdict(6, "quadratic variation limit", (qv - c).abs() <= 3.0 * se, detail, start))
}

/// A named rate run of the Wasserstein experiment.
pub struct RateRun {
    pub label: String,
    pub report: RateReport,
    pub seconds: f64,
}

/// The three acceptance rate runs: d = 2 and d = 3 zero drift, d = 2 shear.
pub fn rate_runs(seed: u64, quick: bool) -> Result<Vec<RateRun>, CliError> {
    let horizons: Vec<f64> = if quick { vec![8.0, 16.0, 32.0] } else { (5..=11).map(|j| 2f64.powi(j)).collect() };
    let reps = if quick { 20 } else { 50 };
    let specs = [("d=2 zero-drift", "zero-drift", 2, 16, 16, 0.01), ("d=3 zero-drift", "zero-drift", 3, 8, 8, 0.01), (
        "d=2 shear",
        "shear",
        2,
        16,
        16,
        0.0025,
    )];
    specs
        .iter()
        .map(|&(label, name, dim, n, bins, h)| {
            let start = Instant::now();
            let m = presets::by_name::<f64>(name, dim, n)?;
            let bins = if quick { 4 } else { bins };
            let mut cfg = RateConfig::new(dim, horizons.clone(), bins, reps, seed);
            cfg.step = h;
            cfg.invariant_tol = SOLVER_TOL;
            if quick {
                cfg.bias_replications = 2;
                cfg.max_refinements = 0;
            }
            let report = rate_experiment(&m.drift, &m.diffusivity, &cfg)?;
            Ok(RateRun { label: label.into(), report, seconds: start.elapsed().as_secs_f64() })
        })
        .collect()
}

pub fn wasserstein_rate(runs: &[RateRun]) -> Verdict {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let slope = r.report.fit.slope;
        let in_band = (-0.6..=-0.4).contains(&slope);
        let fast = !r.label.starts_with("d=3") || r.seconds < 1800.0;
        ok &= in_band && fast;
        let bias = r.report.bias.as_ref().map_or("no bias check".to_string(), |b| {
            format!("bias {:.2e} vs 0.2·{:.2e} {}", b.estimate, b.smallest_mean, if b.passed { "ok" } else { "exceeded" })
        });
        parts.push(format!("{}: slope {slope:.3} (m = {}, {bias})", r.label, r.report.bins));
    }
    let detail = format!("{}; band [-0.6, -0.4], d=3 runtime < 1800s: {}", parts.join("; "), runs.iter().all(|r| !r.label.starts_with("d=3") || r.seconds < 1800.0));
    Verdict { seconds: runs.iter().map(|r| r.seconds).sum(), ..verdict(7, "Wasserstein rate", ok, detail, start) }
}

pub fn scaled_stability(runs: &[RateRun]) -> Result<Verdict, CliError> {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let last = r.report.rows.len() - 1;
        let ks = ks_two_sample(&r.report.scaled_samples(last), &r.report.scaled_samples(last - 1))?;
        ok &= ks.p_value > 0.01;
        parts.push(format!("{}: p = {:.4}", r.label, ks.p_value));
    }
    let detail = format!("two-sample KS of √T·W₁ at the two largest T: {} (each > 0.01)", parts.join(", "));
    Ok(verdict(8, "√T·W₁ stability", ok, detail, start))
}

/// `sup_f ‖L⁻¹f‖_{H²}/‖f‖_{L²}` at `n = 16` and `n = 32`.
pub fn smoothing_stability(seed: u64, quick: bool) -> Result<Verdict, CliError> {
    let start = Instant::now();
    let count = if quick { 5 } else { 50 };
    let d = 2;
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["gradient", "shear", "modulated"] {
        let mut rng = stream_rng(seed, &format!("acceptance/smoothing/{name}"), 0);
        let family: Vec<Vec<Mode>> = (0..count).map(|_| random_modes(&mut rng, d, 4)).collect();
        let sups = [16usize, 32]
            .iter()
            .map(|&n| {
                let s = model_setup(name, d, n)?;
                family.iter().try_fold(0.0f64, |acc, modes| {
                    let f = center_mu(&synthesize(modes, d, n)?, &s.mu)?;
                    Ok::<f64, CliError>(acc.max(smoothing_ratio(&s.l, &s.mu, &f, BesovIndex::sobolev(2.0), SOLVER_TOL)?))
                })
            })
            .collect::<Result<Vec<f64>, CliError>>()?;
        let change = (sups[1] / sups[0] - 1.0).abs();
        ok &= change <= 0.1;
        parts.push(format!("{name}: {:.5} → {:.5} ({:.2}%)", sups[0], sups[1], 100.0 * change));
    }
    let detail = format!("sup H² ratio at n = 16 → 32: {} (≤ 10%)", parts.join(", "));
    Ok(verdict(9, "2-smoothing stability", ok, detail, start))
}

/// Covering exponents against `d/(s − t)`, and Dudley flags on both sides of `s = d/2 − 1 + γ`.
pub fn entropy_exponents() -> Result<Verdict, CliError> {
    let start = Instant::now();
    let inf = f64::INFINITY;
    let mut ok = true;
    let mut parts = Vec::new();
    let configs = [
        (1, 1.0, inf, EntropyNorm::Besov { t: -0.5, p: inf }),
        (2, 1.0, inf, EntropyNorm::Besov { t: -0.5, p: inf }),
        (2, 0.5, 2.0, EntropyNorm::Sobolev { t: -1.0 }),
    ];
    let radii = geometric_radii(0.05, 0.005, 11);
    for (dim, s, p, norm) in configs {
        let curve = estimate_covering(BallSpec { dim, s, p, radius: 1.0 }, norm, &radii, 4096, DEFAULT_BUDGET)?;
        let t = match norm {
            EntropyNorm::Besov { t, .. } | EntropyNorm::Sobolev { t } => t,
        };
        let target = dim as f64 / (s - t);
        let fit = fit_exponent(&curve)?;
        let rel = (fit.estimate / target - 1.0).abs();
        ok &= rel <= 0.25;
        parts.push(format!("d={dim} s={s} t={t}: {:.3} vs {target:.3} ({:.1}%)", fit.estimate, 100.0 * rel));
    }
    // ρ_L balls behave like B^{γ−1}_∞ balls; γ = 0.1
    let gamma = 0.1;
    let t = gamma - 1.0;
    let radii = geometric_radii(0.1, 0.01, 11);
    for dim in [2usize, 3] {
        let threshold = dim as f64 / 2.0 - 1.0 + gamma;
        for s in [threshold + 0.5, threshold - 0.5] {
            let curve =
                estimate_covering(BallSpec { dim, s, p: inf, radius: 1.0 }, EntropyNorm::Besov { t, p: inf }, &radii, 4096, DEFAULT_BUDGET)?;
            let dudley = dudley_integral(&curve)?;
            let expected = s <= threshold;
            ok &= dudley.divergent == expected;
            parts.push(format!(
                "d={dim} s={s:.1}: {} (expected {})",
                if dudley.divergent { "divergent" } else { "finite" },
                if expected { "divergent" } else { "finite" }
            ));
        }
    }
    let detail = format!("{}; exponents within 25%", parts.join(", "));
    Ok(verdict(10, "entropy exponent and Dudley dichotomy", ok, detail, start))
}

/// Criteria 1 to 10.
pub fn run_suite(seed: u64, quick: bool) -> Result<Vec<Verdict>, CliError> {
    let mut out = vec![
        invariant_oracle()?,
        poisson_oracle(seed)?,
        duality(seed)?,
        clt_marginal(seed, quick)?,
        martingale(seed, quick)?,
        quadratic_variation_limit(seed, quick)?,
    ];
    let runs = rate_runs(seed, quick)?;
    out.push(wasserstein_rate(&runs));
    out.push(scaled_stability(&runs)?);
    out.push(smoothing_stability(seed, quick)?);
    out.push(entropy_exponents()?);
    Ok(out)
}

pub fn write_suite(verdicts: &[Verdict], quick: bool, out: &mut Artifacts, prefix: &str) -> Result<(), CliError> {
    let mut t = Table::new(&[
        ("criterion", "integer", "acceptance criterion number"),
        ("name", "string", "short name"),
        ("passed", "boolean", "verdict"),
        ("detail", "string", "measured values and thresholds"),
    ]);
    for v in verdicts {
        t.push(vec![v.id.to_string(), v.name.clone(), v.passed.to_string(), csv_quote(&v.detail)]);
    }
    out.table(&format!("{prefix}/criteria.csv"), &t)?;
    out.json(
        &format!("{prefix}/report.json"),
        &serde_json::json!({ "quick": quick, "all_passed": verdicts.iter().all(|v| v.passed), "criteria": verdicts }),
    )
}

fn csv_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}
