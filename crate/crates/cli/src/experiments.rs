//! One function per subcommand; each writes its tables and a JSON report under `prefix/`.

use rayon::prelude::*;
use serde::Serialize;
use torus_clt::entropy::{
    dudley_integral, estimate_covering, fit_exponent, geometric_radii, sudakov_check, BallSpec, DudleyReport, EntropyNorm,
    ExponentFit, SudakovReport, DEFAULT_BUDGET,
};
use torus_clt::generator::{assemble, assemble_adjoint};
use torus_clt::invariant::solve_invariant;
use torus_clt::limit::{gram, lipschitz_net, net_sup_samples, sample_limit_with, TestFamily};
use torus_clt::poisson::{center_mu, smoothing_ratio, solve_poisson, solve_poisson_dense};
use torus_clt::rng::stream_rng;
use torus_clt::sde::{occupation_histogram, simulate_path, step_count, Simulator};
use torus_clt::spectral::synthesize;
use torus_clt::stats::{ks_one_sample, ks_two_sample, TestReport};
use torus_clt::wasserstein::{rate_experiment, BiasCheck, RateConfig};
use torus_clt::{BesovIndex, Field, Generator, Measure, Model};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{num, Artifacts, Table};

pub const SOLVER_TOL: f64 = 1e-10;

pub struct Setup {
    pub model: Model,
    pub l: Generator,
    pub mu: Measure,
}

pub fn setup(cfg: &ExperimentConfig) -> Result<Setup, CliError> {
    let model = cfg.model()?;
    let l = assemble(&model.drift, &model.diffusivity)?;
    let mu = solve_invariant(&assemble_adjoint(&model.drift, &model.diffusivity)?, SOLVER_TOL)?;
    Ok(Setup { model, l, mu })
}

fn coord_columns(dim: usize) -> Vec<String> {
    (1..=dim).map(|a| format!("x{a}")).collect()
}

/// Table with grid coordinates followed by `extra` columns.
fn grid_table(dim: usize, lead: &[(&str, &str, &str)], extra: &[(&str, &str, &str)]) -> Table {
    let names = coord_columns(dim);
    let mut cols: Vec<(&str, &str, &str)> = lead.to_vec();
    cols.extend(names.iter().map(|n| (n.as_str(), "float", "grid node coordinate in [0,1)")));
    cols.extend_from_slice(extra);
    Table::new(&cols)
}

fn node_cells(f: &Field, flat: usize) -> Vec<String> {
    f.node(flat).iter().take(f.dim()).map(|&x| num(x)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct InvariantReport {
    pub model: String,
    pub dim: usize,
    pub resolution: usize,
    pub residual: f64,
    pub iterations: usize,
    pub mass: f64,
    pub min_density: f64,
    pub max_density: f64,
    pub max_gradient: f64,
    pub lambda: f64,
    pub lambda_max: f64,
}

pub fn invariant(cfg: &ExperimentConfig, out: &mut Artifacts, prefix: &str) -> Result<InvariantReport, CliError> {
    let s = setup(cfg)?;
    let mut t = grid_table(cfg.dim(), &[], &[("density", "float", "invariant density on the grid")]);
    for flat in 0..s.mu.density.len() {
        let mut row = node_cells(&s.mu.density, flat);
        row.push(num(s.mu.density.values()[flat]));
        t.push(row);
    }
    out.table(&format!("{prefix}/density.csv"), &t)?;
    let report = InvariantReport {
        model: s.model.name.clone(),
        dim: cfg.dim(),
        resolution: cfg.grid.resolution,
        residual: s.mu.residual,
        iterations: s.mu.iterations,
        mass: s.mu.mass,
        min_density: s.mu.min_density,
        max_density: s.mu.max_density,
        max_gradient: s.mu.max_gradient,
        lambda: s.l.lambda(),
        lambda_max: s.l.lambda_max(),
    };
    out.json(&format!("{prefix}/report.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct PoissonEntry {
    pub function: usize,
    pub residual: f64,
    pub iterations: usize,
    /// `‖L⁻¹f‖_{H²} / ‖f‖_{L²}`.
    pub smoothing_ratio: f64,
    /// Sup distance to the dense solve, when the grid is small enough for it.
    pub dense_discrepancy: Option<f64>,
}

pub fn poisson(cfg: &ExperimentConfig, out: &mut Artifacts, prefix: &str) -> Result<Vec<PoissonEntry>, CliError> {
    let s = setup(cfg)?;
    let (d, n) = (cfg.dim(), cfg.grid.resolution);
    let mut t = grid_table(
        d,
        &[("function", "integer", "index into tests.functions")],
        &[("f", "float", "μ-centred right-hand side"), ("u", "float", "mean-zero solution of Lu = f")],
    );
    let mut entries = Vec::new();
    for (i, modes) in cfg.test_modes().iter().enumerate() {
        let f = center_mu(&synthesize(modes, d, n)?, &s.mu)?;
        let sol = solve_poisson(&s.l, &f, &s.mu, SOLVER_TOL)?;
        let dense = if (d <= 2 && n <= 32) || (d == 3 && n <= 8) {
            let u = solve_poisson_dense(&s.l, &f)?;
            Some(u.sub(&sol.u).grid_sup())
        } else {
            None
        };
        let ratio = if f.grid_sup() > 0.0 { smoothing_ratio(&s.l, &s.mu, &f, BesovIndex::sobolev(2.0), SOLVER_TOL)? } else { 0.0 };
        for flat in 0..f.len() {
            let mut row = vec![i.to_string()];
            row.extend(node_cells(&f, flat));
            row.push(num(f.values()[flat]));
            row.push(num(sol.u.values()[flat]));
            t.push(row);
        }
        entries.push(PoissonEntry {
            function: i,
            residual: sol.residual,
            iterations: sol.iterations,
            smoothing_ratio: ratio,
            dense_discrepancy: dense,
        });
    }
    out.table(&format!("{prefix}/solution.csv"), &t)?;
    out.json(&format!("{prefix}/report.json"), &entries)?;
    Ok(entries)
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulateReport {
    pub steps: usize,
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
    /// `√T(μ̂_T(f) − μ(f))` of each test function.
    pub empirical_process: Vec<f64>,
}

pub fn simulate(cfg: &ExperimentConfig, out: &mut Artifacts, prefix: &str) -> Result<SimulateReport, CliError> {
    let s = setup(cfg)?;
    let d = cfg.dim();
    let path = simulate_path(&s.model.drift, &s.model.diffusivity, &cfg.x0(), cfg.sde.horizon, cfg.sde.step, cfg.seeds.master)?;
    let names = coord_columns(d);
    let mut cols = vec![("step", "integer", "step index k"), ("t", "float", "time k·h")];
    cols.extend(names.iter().map(|n| (n.as_str(), "float", "state coordinate in [0,1)")));
    let mut t = Table::new(&cols);
    for k in 0..=path.steps() {
        let mut row = vec![k.to_string(), num(k as f64 * path.step)];
        row.extend(path.state(k).iter().map(|&x| num(x)));
        t.push(row);
    }
    out.table(&format!("{prefix}/path.csv"), &t)?;

    let hist = occupation_histogram(&path, cfg.ot.bins)?;
    let names: Vec<String> = (1..=d).map(|a| format!("cell{a}")).collect();
    let mut cols = vec![("cell", "integer", "flat cell index")];
    cols.extend(names.iter().map(|n| (n.as_str(), "integer", "cell index along the axis")));
    cols.push(("weight", "float", "fraction of completed steps spent in the cell"));
    let mut h = Table::new(&cols);
    for c in 0..hist.len() {
        let mut row = vec![c.to_string()];
        row.extend(hist.cell_index(c).iter().take(d).map(|i| i.to_string()));
        row.push(num(hist.weights[c]));
        h.push(row);
    }
    out.table(&format!("{prefix}/occupation.csv"), &h)?;

    let fs = test_fields(cfg)?;
    let g = torus_clt::limit::empirical_process(&path, &fs, &s.mu)?;
    let report = SimulateReport {
        steps: path.steps(),
        horizon: path.duration(),
        step: path.step,
        seed: cfg.seeds.master,
        empirical_process: g.values,
    };
    out.json(&format!("{prefix}/report.json"), &report)?;
    Ok(report)
}

fn test_fields(cfg: &ExperimentConfig) -> Result<Vec<Field>, CliError> {
    Ok(cfg
        .test_modes()
        .iter()
        .map(|m| synthesize(m, cfg.dim(), cfg.grid.resolution))
        .collect::<torus_clt::Result<Vec<_>>>()?)
}

#[derive(Clone, Debug, Serialize)]
pub struct CltReport {
    pub replications: usize,
    pub horizon: f64,
    pub step: f64,
    pub covariance: Vec<Vec<f64>>,
    /// One-sample KS of each marginal against `Normal(0, C(f_i, f_i))`.
    pub marginal_tests: Vec<Option<TestReport>>,
}

/// `G_T(f_i)` over independent replications, in replication order.
pub fn clt_samples(
    s: &Setup,
    fs: &[Field],
    x0: &[f64],
    horizon: f64,
    h: f64,
    replications: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, CliError> {
    let family = TestFamily::new(fs, &s.mu)?;
    let sim = Simulator::new(&s.model.drift, &s.model.diffusivity)?;
    let steps = step_count(horizon, h);
    Ok((0..replications)
        .into_par_iter()
        .map(|rep| family.sample(&sim, x0, h, steps, &mut stream_rng(seed, "clt", rep as u64)))
        .collect::<torus_clt::Result<Vec<_>>>()?)
}

pub fn normal_cdf(variance: f64) -> impl Fn(f64) -> f64 {
    let sd = variance.sqrt();
    move |x| 0.5 * statrs::function::erf::erfc(-x / (sd * std::f64::consts::SQRT_2))
}

pub fn clt(cfg: &ExperimentConfig, out: &mut Artifacts, prefix: &str) -> Result<CltReport, CliError> {
    let s = setup(cfg)?;
    let fs = test_fields(cfg)?;
    let g = gram(&fs, &s.l, &s.mu, SOLVER_TOL)?;
    let samples = clt_samples(&s, &fs, &cfg.x0(), cfg.sde.horizon, cfg.sde.step, cfg.sde.replications, cfg.seeds.master)?;

    let mut t = Table::new(&[
        ("replication", "integer", "independent path index"),
        ("function", "integer", "index into tests.functions"),
        ("value", "float", "√T(μ̂_T(f) − μ(f))"),
    ]);
    for (rep, v) in samples.iter().enumerate() {
        for (i, x) in v.iter().enumerate() {
            t.push(vec![rep.to_string(), i.to_string(), num(*x)]);
        }
    }
    out.table(&format!("{prefix}/samples.csv"), &t)?;

    let mut c = Table::new(&[
        ("i", "integer", "test function index"),
        ("j", "integer", "test function index"),
        ("covariance", "float", "limit covariance C(f_i, f_j)"),
    ]);
    for i in 0..g.size {
        for j in 0..g.size {
            c.push(vec![i.to_string(), j.to_string(), num(g.entry(i, j))]);
        }
    }
    out.table(&format!("{prefix}/gram.csv"), &c)?;

    let mut rng = stream_rng(cfg.seeds.master, "limit", 0);
    let mut l = Table::new(&[
        ("draw", "integer", "draw index"),
        ("function", "integer", "test function index"),
        ("value", "float", "sample of the Gaussian limit G(f)"),
    ]);
    for draw in 0..cfg.sde.replications {
        for (i, x) in sample_limit_with(&g, &mut rng)?.iter().enumerate() {
            l.push(vec![draw.to_string(), i.to_string(), num(*x)]);
        }
    }
    out.table(&format!("{prefix}/limit_draws.csv"), &l)?;

    let marginal_tests = (0..g.size)
        .map(|i| {
            let var = g.entry(i, i);
            if var > 0.0 && samples.len() >= torus_clt::stats::KS_MIN_SAMPLES {
                let xs: Vec<f64> = samples.iter().map(|v| v[i]).collect();
                ks_one_sample(&xs, normal_cdf(var), &format!("Normal(0, {var})")).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<torus_clt::Result<Vec<_>>>()?;
    let report = CltReport {
        replications: samples.len(),
        horizon: cfg.sde.horizon,
        step: cfg.sde.step,
        covariance: (0..g.size).map(|i| (0..g.size).map(|j| g.entry(i, j)).collect()).collect(),
        marginal_tests,
    };
    out.json(&format!("{prefix}/report.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct WassersteinReport {
    pub model: String,
    pub dim: usize,
    pub bins: usize,
    pub step: f64,
    pub slope: f64,
    pub slope_ci: (f64, f64),
    pub bias: Option<BiasCheck>,
    /// Two-sample KS of `√T·W₁` at the two largest horizons.
    pub stability: Option<TestReport>,
    /// Mean `√T·W₁` at the largest horizon.
    pub scaled_mean: f64,
    /// Mean of `max |G(f)|` over the Lipschitz net, a lower surrogate of `E‖G‖_F`.
    pub net_sup_mean: f64,
    pub net_size: usize,
}

pub fn rate_config(cfg: &ExperimentConfig) -> RateConfig {
    let mut r = RateConfig::new(cfg.dim(), cfg.ot.horizons.clone(), cfg.ot.bins, cfg.ot.replications, cfg.seeds.master);
    r.step = cfg.ot.step.unwrap_or(cfg.sde.step);
    r.x0 = cfg.x0();
    r.cap = cfg.ot.cap;
    r.bias_replications = cfg.ot.bias_replications;
    r.max_refinements = cfg.ot.max_refinements;
    r.invariant_tol = SOLVER_TOL;
    r
}

pub fn wasserstein_rate(cfg: &ExperimentConfig, out: &mut Artifacts, prefix: &str) -> Result<WassersteinReport, CliError> {
    cfg.validate_rate()?;
    let model = cfg.model()?;
    let rc = rate_config(cfg);
    let r = rate_experiment(&model.drift, &model.diffusivity, &rc)?;

    let mut rows = Table::new(&[
        ("horizon", "float", "time horizon T"),
        ("mean_w1", "float", "mean W₁(μ̂_T, μ) over replications"),
        ("sd_w1", "float", "standard deviation over replications"),
        ("replications", "integer", "number of replications"),
    ]);
    for row in &r.rows {
        rows.push(vec![num(row.horizon), num(row.mean), num(row.sd), row.replications.to_string()]);
    }
    out.table(&format!("{prefix}/rows.csv"), &rows)?;
    let mut raw = Table::new(&[
        ("horizon", "float", "time horizon T"),
        ("replication", "integer", "independent path index"),
        ("w1", "float", "W₁(μ̂_T, μ) on the bin grid"),
        ("scaled_w1", "float", "√T·W₁"),
    ]);
    for &(h, rep, w) in &r.raw {
        raw.push(vec![num(h), rep.to_string(), num(w), num(h.sqrt() * w)]);
    }
    out.table(&format!("{prefix}/raw.csv"), &raw)?;

    let last = r.rows.len() - 1;
    let (a, b) = (r.scaled_samples(last), r.scaled_samples(last - 1));
    let stability = if a.len().min(b.len()) >= torus_clt::stats::KS_MIN_SAMPLES { Some(ks_two_sample(&a, &b)?) } else { None };

    let s = setup(cfg)?;
    let net = lipschitz_net(cfg.dim(), cfg.grid.resolution, cfg.ot.net_kmax)?;
    let g = gram(&net, &s.l, &s.mu, SOLVER_TOL)?;
    let sups = net_sup_samples(&g, cfg.ot.net_draws, &mut stream_rng(cfg.seeds.master, "limit/net", 0))?;
    let mut n = Table::new(&[("draw", "integer", "draw index"), ("net_sup", "float", "max over the Lipschitz net of |G(f)|")]);
    for (i, x) in sups.iter().enumerate() {
        n.push(vec![i.to_string(), num(*x)]);
    }
    out.table(&format!("{prefix}/net_sup.csv"), &n)?;
    let report = WassersteinReport {
        model: model.name.clone(),
        dim: r.dim,
        bins: r.bins,
        step: rc.step,
        slope: r.fit.slope,
        slope_ci: r.fit.ci,
        bias: r.bias.clone(),
        stability,
        scaled_mean: torus_clt::stats::mean(&a),
        net_sup_mean: torus_clt::stats::mean(&sups),
        net_size: net.len(),
    };
    out.json(&format!("{prefix}/report.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct EntropyReport {
    pub truncation: usize,
    pub budget_exhausted: bool,
    /// `d/(s − t)`.
    pub target_exponent: f64,
    pub exponent: ExponentFit,
    pub dudley: DudleyReport,
    pub sudakov: SudakovReport,
}

pub fn entropy(cfg: &ExperimentConfig, out: &mut Artifacts, prefix: &str) -> Result<EntropyReport, CliError> {
    let e = &cfg.entropy;
    let ball = BallSpec { dim: e.dim, s: e.s, p: e.p.value(), radius: e.radius };
    let norm = if e.norm == "sobolev" { EntropyNorm::Sobolev { t: e.t } } else { EntropyNorm::Besov { t: e.t, p: e.norm_p.value() } };
    let radii = geometric_radii(e.radius_hi, e.radius_lo, e.radius_count);
    let curve = estimate_covering(ball, norm, &radii, e.truncation, DEFAULT_BUDGET)?;
    let mut t = Table::new(&[
        ("radius", "float", "covering radius ε"),
        ("log_n_lower", "float", "certified lower bound on log N(ε)"),
        ("log_n_upper", "float", "certified upper bound on log N(ε)"),
        ("log_n", "float", "bracket midpoint"),
        ("saturated", "boolean", "midpoint moves under truncation doubling"),
    ]);
    for i in 0..curve.radii.len() {
        t.push(vec![
            num(curve.radii[i]),
            num(curve.lower[i]),
            num(curve.upper[i]),
            num(curve.log_covering[i]),
            curve.saturated[i].to_string(),
        ]);
    }
    out.table(&format!("{prefix}/curve.csv"), &t)?;
    let report = EntropyReport {
        truncation: curve.truncation,
        budget_exhausted: curve.budget_exhausted,
        target_exponent: e.dim as f64 / (e.s - e.t),
        exponent: fit_exponent(&curve)?,
        dudley: dudley_integral(&curve)?,
        sudakov: sudakov_check(&curve)?,
    };
    out.json(&format!("{prefix}/report.json"), &report)?;
    Ok(report)
}
