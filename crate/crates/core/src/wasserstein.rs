//! Wasserstein-1 distance on the torus between measures on a cell grid, and the `√T` rate
//! experiment for occupation histograms.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generator::{DiffusivitySpec, DriftSpec};
use crate::invariant::{solve_invariant, InvariantMeasure};
use crate::rng::stream_rng;
use crate::sde::{step_count, DiscreteMeasure, HistogramAccumulator, Simulator};
use crate::spectral::{PeriodicField, MAX_DIM};
use crate::stats::{fit_rate, mean, variance, RateFit};

/// Largest grid handled by the exact solver unless overridden.
pub const EXACT_CELL_CAP: usize = 4096;
pub const MARGINAL_TOL: f64 = 1e-9;
pub const DUALITY_GAP_TOL: f64 = 1e-8;

/// Geodesic distance on the flat torus `[0,1)^d`.
pub fn torus_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let t = (a - b).abs().rem_euclid(1.0);
            t.min(1.0 - t).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Distances between cell centres of an `m^d` grid, tabulated by per-axis index offset.
#[derive(Clone, Debug)]
struct CellMetric {
    dim: usize,
    bins: usize,
    axis: Vec<f64>,
}

impl CellMetric {
    fn new(dim: usize, bins: usize) -> Self {
        let axis = (0..bins)
            .map(|o| {
                let t = o.min(bins - o) as f64 / bins as f64;
                t * t
            })
            .collect();
        CellMetric { dim, bins, axis }
    }

    fn coords(&self, flat: usize) -> [usize; MAX_DIM] {
        crate::spectral::unravel(flat, self.dim, self.bins)
    }

    fn dist(&self, a: &[usize; MAX_DIM], b: &[usize; MAX_DIM]) -> f64 {
        (0..self.dim).map(|i| self.axis[a[i].abs_diff(b[i])]).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TransportPlan {
    pub dim: usize,
    pub bins: usize,
    /// Nonzero entries `(source cell, target cell, mass)`.
    pub entries: Vec<(usize, usize, f64)>,
    pub cost: f64,
}

impl TransportPlan {
    /// Largest deviation of the plan marginals from `source` and `target`.
    pub fn marginal_error(&self, source: &DiscreteMeasure, target: &DiscreteMeasure) -> f64 {
        let mut rows = source.weights.clone();
        let mut cols = target.weights.clone();
        for &(i, j, m) in &self.entries {
            rows[i] -= m;
            cols[j] -= m;
        }
        rows.iter().chain(&cols).fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.entries.iter().all(|e| e.2 >= 0.0)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExactTransport {
    pub cost: f64,
    pub plan: TransportPlan,
    /// `|primal − dual|` for the final basis potentials.
    pub duality_gap: f64,
    /// Most negative reduced cost at termination.
    pub dual_infeasibility: f64,
    pub pivots: usize,
}

fn check_pair(nu: &DiscreteMeasure, rho: &DiscreteMeasure) -> Result<()> {
    if nu.dim != rho.dim || nu.bins != rho.bins {
        return Err(Error::GridMismatch(format!(
            "measures on {}^{} and {}^{} grids",
            nu.bins, nu.dim, rho.bins, rho.dim
        )));
    }
    Ok(())
}

/// Splits `ν − ρ` into supply and demand cells; shared mass stays in place at zero cost.
fn excess(nu: &DiscreteMeasure, rho: &DiscreteMeasure) -> (Vec<(usize, f64)>, Vec<(usize, f64)>, Vec<(usize, usize, f64)>) {
    let mut supply = Vec::new();
    let mut demand = Vec::new();
    let mut stay = Vec::new();
    for (c, (&a, &b)) in nu.weights.iter().zip(&rho.weights).enumerate() {
        let shared = a.min(b);
        if shared > 0.0 {
            stay.push((c, c, shared));
        }
        if a > b {
            supply.push((c, a - b));
        } else if b > a {
            demand.push((c, b - a));
        }
    }
    // equalise totals lost to rounding
    let (sa, sb): (f64, f64) = (supply.iter().map(|s| s.1).sum(), demand.iter().map(|s| s.1).sum());
    if sb > 0.0 {
        for d in &mut demand {
            d.1 *= sa / sb;
        }
    }
    (supply, demand, stay)
}

/// Exact W₁ by the transportation simplex on the excess of `ν` over `ρ`.
pub fn w1_exact(nu: &DiscreteMeasure, rho: &DiscreteMeasure) -> Result<ExactTransport> {
    w1_exact_capped(nu, rho, EXACT_CELL_CAP)
}

pub fn w1_exact_capped(nu: &DiscreteMeasure, rho: &DiscreteMeasure, cap: usize) -> Result<ExactTransport> {
    check_pair(nu, rho)?;
    if nu.len() > cap {
        return Err(Error::SizeCap { cells: nu.len(), cap });
    }
    let metric = CellMetric::new(nu.dim, nu.bins);
    let (supply, demand, mut entries) = excess(nu, rho);
    let src: Vec<_> = supply.iter().map(|s| metric.coords(s.0)).collect();
    let dst: Vec<_> = demand.iter().map(|s| metric.coords(s.0)).collect();
    let cost = |i: usize, j: usize| metric.dist(&src[i], &dst[j]);
    let a: Vec<f64> = supply.iter().map(|s| s.1).collect();
    let b: Vec<f64> = demand.iter().map(|s| s.1).collect();
    let sol = if a.is_empty() || b.is_empty() {
        SimplexSolution { flows: vec![], primal: 0.0, dual: 0.0, min_reduced: 0.0, pivots: 0 }
    } else {
        transport_simplex(&a, &b, &cost)?
    };
    for &(i, j, f) in &sol.flows {
        if f > 0.0 {
            entries.push((supply[i].0, demand[j].0, f));
        }
    }
    let plan = TransportPlan { dim: nu.dim, bins: nu.bins, entries, cost: sol.primal };
    Ok(ExactTransport {
        cost: sol.primal,
        plan,
        duality_gap: (sol.primal - sol.dual).abs(),
        dual_infeasibility: sol.min_reduced.min(0.0),
        pivots: sol.pivots,
    })
}

struct SimplexSolution {
    flows: Vec<(usize, usize, f64)>,
    primal: f64,
    dual: f64,
    min_reduced: f64,
    pivots: usize,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        self.0[ra] = rb;
        ra != rb
    }
}

/// Transportation simplex. Nodes `0..p` are sources, `p..p+q` sinks; the basis is a spanning
/// tree of `p + q − 1` cells.
fn transport_simplex(a: &[f64], b: &[f64], cost: &impl Fn(usize, usize) -> f64) -> Result<SimplexSolution> {
    let (p, q) = (a.len(), b.len());
    let nodes = p + q;
    let mut c = vec![0.0; p * q];
    for i in 0..p {
        for j in 0..q {
            c[i * q + j] = cost(i, j);
        }
    }
    let cmax = c.iter().fold(0.0f64, |m, v| m.max(*v));
    let eps = 1e-12 * cmax.max(1e-300);

    // matrix-minimum start: every allocation exhausts a row or a column, so it is acyclic
    let mut order: Vec<u32> = (0..(p * q) as u32).collect();
    order.sort_unstable_by(|&x, &y| c[x as usize].total_cmp(&c[y as usize]));
    let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
    let mut flow = vec![0.0; p * q];
    let mut basic = vec![false; p * q];
    let mut uf = UnionFind((0..nodes).collect());
    let mut count = 0;
    for &cell in &order {
        let cell = cell as usize;
        let (i, j) = (cell / q, cell % q);
        if ra[i] <= 0.0 || rb[j] <= 0.0 {
            continue;
        }
        let m = ra[i].min(rb[j]);
        flow[cell] = m;
        basic[cell] = true;
        uf.union(i, p + j);
        count += 1;
        ra[i] -= m;
        rb[j] -= m;
        if ra[i] <= rb[j] {
            ra[i] = 0.0;
        } else {
            rb[j] = 0.0;
        }
    }
    for &cell in &order {
        if count == nodes - 1 {
            break;
        }
        let cell = cell as usize;
        if !basic[cell] && uf.union(cell / q, p + cell % q) {
            basic[cell] = true;
            count += 1;
        }
    }

    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for cell in (0..p * q).filter(|&x| basic[x]) {
        let (i, j) = (cell / q, cell % q);
        adj[i].push(p + j);
        adj[p + j].push(i);
    }
    let mut pot = vec![0.0; nodes];
    let mut parent = vec![usize::MAX; nodes];
    let mut depth = vec![0usize; nodes];
    let mut queue = Vec::with_capacity(nodes);
    let cell_of = |x: usize, y: usize| if x < p { x * q + (y - p) } else { y * q + (x - p) };

    // potentials u_i + v_j = c_ij on the tree, rooted at source 0
    queue.push(0);
    parent[0] = 0;
    let mut head = 0;
    while head < queue.len() {
        let x = queue[head];
        head += 1;
        for &y in &adj[x] {
            if parent[y] == usize::MAX {
                parent[y] = x;
                pot[y] = c[cell_of(x, y)] - pot[x];
                depth[y] = depth[x] + 1;
                queue.push(y);
            }
        }
    }
    if queue.len() != nodes {
        return Err(Error::Factorization("transport basis is not a spanning tree".into()));
    }
    let mut stamp = vec![0u32; nodes];
    let mut round = 0u32;

    let block = ((p * q) as f64).sqrt().ceil() as usize;
    let mut cursor = 0usize;
    let max_pivots = 200 * nodes + 10_000;
    let mut pivots = 0;
    loop {
        // block search for an entering cell
        let mut best = (0.0, usize::MAX);
        let mut scanned = 0;
        while scanned < p * q {
            let end = (scanned + block).min(p * q);
            for _ in scanned..end {
                let cell = cursor;
                cursor = if cursor + 1 == p * q { 0 } else { cursor + 1 };
                if basic[cell] {
                    continue;
                }
                let r = c[cell] - pot[cell / q] - pot[p + cell % q];
                if r < best.0 {
                    best = (r, cell);
                }
            }
            scanned = end;
            if best.0 < -eps {
                break;
            }
        }
        if best.0 >= -eps {
            let mut primal = 0.0;
            let mut flows = Vec::new();
            for cell in (0..p * q).filter(|&x| basic[x]) {
                primal += flow[cell] * c[cell];
                flows.push((cell / q, cell % q, flow[cell]));
            }
            let dual = (0..p).map(|i| pot[i] * a[i]).sum::<f64>() + (0..q).map(|j| pot[p + j] * b[j]).sum::<f64>();
            return Ok(SimplexSolution { flows, primal, dual, min_reduced: best.0, pivots });
        }
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::NoConvergence { iterations: pivots, history: vec![best.0] });
        }

        // cycle: entering (i, j) then the tree path from sink j back to source i
        let enter = best.1;
        let (ei, ej) = (enter / q, p + enter % q);
        let (mut x, mut y) = (ei, ej);
        let (mut up_i, mut up_j) = (vec![ei], vec![ej]);
        while depth[x] > depth[y] {
            x = parent[x];
            up_i.push(x);
        }
        while depth[y] > depth[x] {
            y = parent[y];
            up_j.push(y);
        }
        while x != y {
            x = parent[x];
            y = parent[y];
            up_i.push(x);
            up_j.push(y);
        }
        up_i.pop();
        let mut path = up_j;
        path.extend(up_i.iter().rev());
        // path runs ej → ... → ei; cells alternate −, +, − starting at the first edge
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (k, w) in path.windows(2).enumerate() {
            if k % 2 == 0 {
                let cell = cell_of(w[0], w[1]);
                if flow[cell] < theta {
                    theta = flow[cell];
                    leave = cell;
                }
            }
        }
        for (k, w) in path.windows(2).enumerate() {
            let cell = cell_of(w[0], w[1]);
            if k % 2 == 0 {
                flow[cell] = (flow[cell] - theta).max(0.0);
            } else {
                flow[cell] += theta;
            }
        }
        flow[enter] = theta;
        flow[leave] = 0.0;
        basic[leave] = false;
        basic[enter] = true;
        let (li, lj) = (leave / q, p + leave % q);
        adj[li].retain(|&y| y != lj);
        adj[lj].retain(|&y| y != li);
        adj[ei].push(ej);
        adj[ej].push(ei);

        // only the subtree cut off by the leaving edge changes potentials and depths
        let child = if parent[lj] == li && lj != 0 { lj } else { li };
        round += 1;
        queue.clear();
        queue.push(child);
        stamp[child] = round;
        let mut head = 0;
        while head < queue.len() {
            let x = queue[head];
            head += 1;
            for &y in &adj[x] {
                if stamp[y] != round && parent[y] == x && !(x == child && y == parent[child]) {
                    stamp[y] = round;
                    queue.push(y);
                }
            }
        }
        let (inner, outer) = if stamp[ei] == round { (ei, ej) } else { (ej, ei) };
        round += 1;
        parent[inner] = outer;
        depth[inner] = depth[outer] + 1;
        pot[inner] = c[enter] - pot[outer];
        queue.clear();
        queue.push(inner);
        stamp[inner] = round;
        let mut head = 0;
        while head < queue.len() {
            let x = queue[head];
            head += 1;
            for &y in &adj[x] {
                if stamp[y] != round && y != parent[x] {
                    stamp[y] = round;
                    parent[y] = x;
                    depth[y] = depth[x] + 1;
                    pot[y] = c[cell_of(x, y)] - pot[x];
                    queue.push(y);
                }
            }
        }
    }
}

/// Closed-form W₁ on the circle for measures on `m` equal cells: `(1/m) min_c Σ |F_i − c|`
/// with `F` the cumulative difference.
pub fn w1_circle(nu: &[f64], rho: &[f64]) -> f64 {
    let m = nu.len();
    let mut acc = 0.0;
    let mut cum: Vec<f64> = nu
        .iter()
        .zip(rho)
        .map(|(a, b)| {
            acc += a - b;
            acc
        })
        .collect();
    let mut sorted = cum.clone();
    sorted.sort_by(f64::total_cmp);
    let med = sorted[m / 2];
    cum.iter_mut().map(|f| (*f - med).abs()).sum::<f64>() / m as f64
}

/// Kantorovich lower bound `max_f ∫f dν − ∫f dρ` over the given potentials, each rescaled to
/// be 1-Lipschitz (gradient sup on an 8× refined grid).
pub fn w1_dual_bound(nu: &DiscreteMeasure, rho: &DiscreteMeasure, potentials: &[PeriodicField<f64>]) -> Result<f64> {
    check_pair(nu, rho)?;
    let mut best = 0.0f64;
    for f in potentials {
        if f.dim() != nu.dim {
            return Err(Error::GridMismatch("potential dimension differs from measures".into()));
        }
        let lip = lipschitz_constant(f);
        if lip == 0.0 {
            continue;
        }
        let ev = f.evaluator();
        let h = 1.0 / nu.bins as f64;
        let mut x = vec![0.0; nu.dim];
        let mut pairing = 0.0;
        for c in 0..nu.len() {
            let idx = nu.cell_index(c);
            for a in 0..nu.dim {
                x[a] = (idx[a] as f64 + 0.5) * h;
            }
            pairing += ev.value(&x) * (nu.weights[c] - rho.weights[c]);
        }
        best = best.max(pairing.abs() / lip.max(1.0));
    }
    Ok(best)
}

/// `sup |∇f|` sampled on an 8× refined grid.
pub fn lipschitz_constant(f: &PeriodicField<f64>) -> f64 {
    let factor = 8;
    let grads: Vec<_> = f.gradient().iter().map(|g| g.refine(factor * f.resolution())).collect();
    (0..grads[0].len())
        .map(|x| grads.iter().map(|g| g.values()[x].powi(2)).sum::<f64>())
        .fold(0.0f64, f64::max)
        .sqrt()
}

#[derive(Clone, Copy, Debug)]
pub struct EntropicOptions {
    /// Relative target width of the `[lower, upper]` bracket.
    pub bracket: f64,
    pub max_iter: usize,
}

impl Default for EntropicOptions {
    fn default() -> Self {
        EntropicOptions { bracket: 0.05, max_iter: 20_000 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EntropicTransport {
    /// Debiased Sinkhorn value clipped into the bracket.
    pub estimate: f64,
    /// Dual value of c-transformed potentials: a certified lower bound.
    pub lower: f64,
    /// Cost of the rounded, exactly feasible plan: a certified upper bound.
    pub upper: f64,
    pub epsilon: f64,
    pub bracketed: bool,
}

fn logsumexp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn potentials at regularisation `eps`, warm-started from `f`.
fn sinkhorn(c: &[f64], a: &[f64], b: &[f64], eps: f64, f: &mut [f64], g: &mut [f64], iters: usize) {
    let (p, q) = (a.len(), b.len());
    let la: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    for _ in 0..iters {
        for j in 0..q {
            g[j] = -eps * logsumexp((0..p).map(|i| (f[i] - c[i * q + j]) / eps + la[i]));
        }
        let mut err = 0.0f64;
        for i in 0..p {
            let new = -eps * logsumexp((0..q).map(|j| (g[j] - c[i * q + j]) / eps + lb[j]));
            err = err.max((new - f[i]).abs());
            f[i] = new;
        }
        if err < 1e-3 * eps {
            break;
        }
    }
}

fn entropic_cost(c: &[f64], a: &[f64], b: &[f64], eps: f64, iters: usize) -> f64 {
    let mut f = vec![0.0; a.len()];
    let mut g = vec![0.0; b.len()];
    sinkhorn(c, a, b, eps, &mut f, &mut g, iters);
    f.iter().zip(a).map(|(x, w)| x * w).sum::<f64>() + g.iter().zip(b).map(|(x, w)| x * w).sum::<f64>()
}

/// Entropic approximation with ε-scaling and debiasing, bracketed by certified bounds.
pub fn w1_entropic(nu: &DiscreteMeasure, rho: &DiscreteMeasure, opts: EntropicOptions) -> Result<EntropicTransport> {
    check_pair(nu, rho)?;
    let metric = CellMetric::new(nu.dim, nu.bins);
    let (supply, demand, _) = excess(nu, rho);
    if supply.is_empty() || demand.is_empty() {
        return Ok(EntropicTransport { estimate: 0.0, lower: 0.0, upper: 0.0, epsilon: 0.0, bracketed: true });
    }
    let (p, q) = (supply.len(), demand.len());
    let a: Vec<f64> = supply.iter().map(|s| s.1).collect();
    let b: Vec<f64> = demand.iter().map(|s| s.1).collect();
    let mass: f64 = a.iter().sum();
    let an: Vec<f64> = a.iter().map(|x| x / mass).collect();
    let bn: Vec<f64> = b.iter().map(|x| x / mass).collect();
    let pts = |s: &[(usize, f64)]| s.iter().map(|x| metric.coords(x.0)).collect::<Vec<_>>();
    let (src, dst) = (pts(&supply), pts(&demand));
    let table = |u: &[[usize; MAX_DIM]], v: &[[usize; MAX_DIM]]| {
        let mut c = Vec::with_capacity(u.len() * v.len());
        for x in u {
            for y in v {
                c.push(metric.dist(x, y));
            }
        }
        c
    };
    let c = table(&src, &dst);
    let diameter = (nu.dim as f64).sqrt() / 2.0;
    let mut eps = diameter;
    let mut f = vec![0.0; p];
    let mut g = vec![0.0; q];
    let mut best = EntropicTransport { estimate: 0.0, lower: 0.0, upper: f64::INFINITY, epsilon: eps, bracketed: false };
    let min_eps = 1e-4 * diameter / nu.bins as f64;
    while eps >= min_eps {
        sinkhorn(&c, &an, &bn, eps, &mut f, &mut g, opts.max_iter / 20);
        let lower = mass * c_transform_dual(&c, &an, &bn, &f);
        let upper = mass * rounded_plan_cost(&c, &an, &bn, &f, &g, eps);
        let ot_ab = entropic_cost(&c, &an, &bn, eps, opts.max_iter / 20);
        let ot_aa = entropic_cost(&table(&src, &src), &an, &an, eps, opts.max_iter / 20);
        let ot_bb = entropic_cost(&table(&dst, &dst), &bn, &bn, eps, opts.max_iter / 20);
        let debiased = mass * (ot_ab - 0.5 * (ot_aa + ot_bb));
        let lower = lower.max(best.lower);
        let upper = upper.min(best.upper);
        best = EntropicTransport {
            estimate: debiased.clamp(lower, upper),
            lower,
            upper,
            epsilon: eps,
            bracketed: upper - lower <= opts.bracket * upper,
        };
        if best.bracketed {
            break;
        }
        eps *= 0.5;
    }
    Ok(best)
}

/// Dual value after two c-transforms, which makes the potentials exactly feasible.
fn c_transform_dual(c: &[f64], a: &[f64], b: &[f64], f: &[f64]) -> f64 {
    let (p, q) = (a.len(), b.len());
    let g: Vec<f64> = (0..q).map(|j| (0..p).map(|i| c[i * q + j] - f[i]).fold(f64::INFINITY, f64::min)).collect();
    let f2: Vec<f64> = (0..p).map(|i| (0..q).map(|j| c[i * q + j] - g[j]).fold(f64::INFINITY, f64::min)).collect();
    f2.iter().zip(a).map(|(x, w)| x * w).sum::<f64>() + g.iter().zip(b).map(|(x, w)| x * w).sum::<f64>()
}

/// Cost of the Sinkhorn plan after rounding onto the exact marginals.
fn rounded_plan_cost(c: &[f64], a: &[f64], b: &[f64], f: &[f64], g: &[f64], eps: f64) -> f64 {
    let (p, q) = (a.len(), b.len());
    let mut plan: Vec<f64> = (0..p * q).map(|x| ((f[x / q] + g[x % q] - c[x]) / eps).exp() * a[x / q] * b[x % q]).collect();
    for i in 0..p {
        let r: f64 = plan[i * q..(i + 1) * q].iter().sum();
        if r > a[i] {
            plan[i * q..(i + 1) * q].iter_mut().for_each(|v| *v *= a[i] / r);
        }
    }
    for j in 0..q {
        let s: f64 = (0..p).map(|i| plan[i * q + j]).sum();
        if s > b[j] {
            (0..p).for_each(|i| plan[i * q + j] *= b[j] / s);
        }
    }
    let ra: Vec<f64> = (0..p).map(|i| a[i] - plan[i * q..(i + 1) * q].iter().sum::<f64>()).collect();
    let rb: Vec<f64> = (0..q).map(|j| b[j] - (0..p).map(|i| plan[i * q + j]).sum::<f64>()).collect();
    let missing: f64 = ra.iter().sum();
    let mut cost: f64 = plan.iter().zip(c).map(|(x, y)| x * y).sum();
    if missing > 0.0 {
        for i in 0..p {
            for j in 0..q {
                cost += ra[i] * rb[j] / missing * c[i * q + j];
            }
        }
    }
    cost
}

/// Exact solver up to `cap` cells, entropic bracket above it.
pub fn w1(nu: &DiscreteMeasure, rho: &DiscreteMeasure, cap: usize) -> Result<f64> {
    if nu.len() <= cap {
        Ok(w1_exact_capped(nu, rho, cap)?.cost)
    } else {
        Ok(w1_entropic(nu, rho, EntropicOptions::default())?.estimate)
    }
}

/// Exact cell averages of a band-limited density on an `m^d` grid.
pub fn discretize_density(density: &PeriodicField<f64>, bins: usize) -> Result<DiscreteMeasure> {
    let (dim, n) = (density.dim(), density.resolution());
    let h = 1.0 / bins as f64;
    // per-axis factor ∫_{cell i} e^{2πikx} dx / h, indexed by grid index of k then cell
    let factors: Vec<Vec<num_complex::Complex<f64>>> = (0..n)
        .map(|idx| {
            let k = crate::spectral::wavenumber(idx, n) as f64;
            (0..bins)
                .map(|i| {
                    if k == 0.0 {
                        return num_complex::Complex::new(1.0, 0.0);
                    }
                    let w = 2.0 * std::f64::consts::PI * k;
                    let lo = num_complex::Complex::from_polar(1.0, w * i as f64 * h);
                    let hi = num_complex::Complex::from_polar(1.0, w * (i as f64 + 1.0) * h);
                    (hi - lo) / num_complex::Complex::new(0.0, w * h)
                })
                .collect()
        })
        .collect();
    let coeffs = density.coeffs();
    let active: Vec<usize> = (0..coeffs.len()).filter(|&x| coeffs[x].norm() > 0.0).collect();
    let cells = bins.pow(dim as u32);
    let mut w = vec![0.0; cells];
    for (cell, wc) in w.iter_mut().enumerate() {
        let ci = crate::spectral::unravel(cell, dim, bins);
        let mut acc = num_complex::Complex::new(0.0, 0.0);
        for &x in &active {
            let ki = crate::spectral::unravel(x, dim, n);
            let mut t = coeffs[x];
            for a in 0..dim {
                t *= factors[ki[a]][ci[a]];
            }
            acc += t;
        }
        *wc = acc.re.max(0.0) * h.powi(dim as i32);
    }
    let total: f64 = w.iter().sum();
    DiscreteMeasure::new(dim, bins, w.into_iter().map(|v| v / total).collect())
}

#[derive(Clone, Debug)]
pub struct RateConfig {
    pub horizons: Vec<f64>,
    pub step: f64,
    pub bins: usize,
    pub replications: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub cap: usize,
    /// Replications at the largest horizon used for the binning-bias estimate; 0 skips it.
    pub bias_replications: usize,
    /// Maximum number of bin doublings when the bias check fails.
    pub max_refinements: usize,
    pub invariant_tol: f64,
}

impl RateConfig {
    pub fn new(dim: usize, horizons: Vec<f64>, bins: usize, replications: usize, seed: u64) -> Self {
        RateConfig {
            horizons,
            step: 0.01,
            bins,
            replications,
            seed,
            x0: vec![0.0; dim],
            cap: EXACT_CELL_CAP,
            bias_replications: 5,
            max_refinements: 1,
            invariant_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RateRow {
    pub horizon: f64,
    pub mean: f64,
    pub sd: f64,
    pub replications: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct BiasCheck {
    pub bins: usize,
    /// Estimated binning bias at `m` bins and the largest horizon: `2|W̄_m − W̄_2m|`, or
    /// `|W̄_{m/2} − W̄_m|` when `2m` bins exceed the cap.
    pub estimate: f64,
    pub smallest_mean: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RateReport {
    pub dim: usize,
    pub bins: usize,
    pub rows: Vec<RateRow>,
    /// `(horizon, replication, W₁)` in deterministic order.
    pub raw: Vec<(f64, usize, f64)>,
    pub fit: RateFit,
    pub bias: Option<BiasCheck>,
}

impl RateReport {
    /// `√T·W₁` samples at horizon index `t`.
    pub fn scaled_samples(&self, t: usize) -> Vec<f64> {
        let horizon = self.rows[t].horizon;
        self.raw.iter().filter(|r| r.0 == horizon).map(|r| horizon.sqrt() * r.2).collect()
    }
}

fn histograms(
    sim: &Simulator<f64>,
    cfg: &RateConfig,
    horizon: f64,
    task: &str,
    rep: usize,
    bins: &[usize],
) -> Result<Vec<DiscreteMeasure>> {
    let mut rng = stream_rng(cfg.seed, task, rep as u64);
    let mut accs: Vec<_> = bins.iter().map(|&m| HistogramAccumulator::new(sim.dim(), m)).collect();
    sim.run(&cfg.x0, cfg.step, step_count(horizon, cfg.step), &mut rng, |_, x, _| {
        accs.iter_mut().for_each(|a| a.add(x));
    })?;
    accs.iter().map(|a| a.finish()).collect()
}

/// Runs independent replications at each horizon and fits `log W̄₁` against `log T`.
pub fn rate_experiment(drift: &DriftSpec<f64>, diffusivity: &DiffusivitySpec<f64>, cfg: &RateConfig) -> Result<RateReport> {
    let dim = drift.dim();
    if dim > 3 {
        return Err(Error::InvalidArgument("the rate experiment covers d ≤ 3".into()));
    }
    if cfg.horizons.len() < 2 || cfg.replications < 2 {
        return Err(Error::InvalidArgument("need two or more horizons and replications".into()));
    }
    let adjoint = crate::generator::assemble_adjoint(drift, diffusivity)?;
    let mu = solve_invariant(&adjoint, cfg.invariant_tol)?;
    let sim = Simulator::new(drift, diffusivity)?;
    let mut bins = cfg.bins;
    let mut refinements = 0;
    loop {
        let report = rate_at_bins(&sim, &mu, cfg, bins)?;
        let retry = matches!(&report.bias, Some(b) if !b.passed)
            && refinements < cfg.max_refinements
            && (2 * bins).pow(dim as u32) <= cfg.cap;
        if !retry {
            return Ok(report);
        }
        bins *= 2;
        refinements += 1;
    }
}

fn rate_at_bins(sim: &Simulator<f64>, mu: &InvariantMeasure<f64>, cfg: &RateConfig, bins: usize) -> Result<RateReport> {
    let dim = sim.dim();
    let target = discretize_density(&mu.density, bins)?;
    let mut raw = Vec::new();
    let mut rows = Vec::new();
    for (t_idx, &horizon) in cfg.horizons.iter().enumerate() {
        let task = format!("w1/{t_idx}");
        let costs = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| {
                let hist = histograms(sim, cfg, horizon, &task, rep, &[bins])?;
                w1(&hist[0], &target, cfg.cap)
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(RateRow { horizon, mean: mean(&costs), sd: variance(&costs).sqrt(), replications: costs.len() });
        raw.extend(costs.iter().enumerate().map(|(rep, &c)| (horizon, rep, c)));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.horizon).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    let fit = fit_rate(&xs, &ys)?;
    // under an O(1/m) binning bias the bias at m is 2(W̄_m − W̄_2m), or W̄_{m/2} − W̄_m when 2m is over the cap
    let fine = (2 * bins).pow(dim as u32) <= cfg.cap;
    let other = if fine { 2 * bins } else { bins / 2 };
    let bias = if cfg.bias_replications > 0 && other >= 2 {
        let horizon = *cfg.horizons.last().unwrap();
        let last = cfg.horizons.len() - 1;
        let target_other = discretize_density(&mu.density, other)?;
        let pairs = (0..cfg.bias_replications)
            .into_par_iter()
            .map(|rep| {
                let h = histograms(sim, cfg, horizon, &format!("w1/{last}"), rep, &[bins, other])?;
                Ok((w1(&h[0], &target, cfg.cap)?, w1(&h[1], &target_other, cfg.cap)?))
            })
            .collect::<Result<Vec<(f64, f64)>>>()?;
        let at_bins = mean(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        let at_other = mean(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
        let estimate = if fine { 2.0 * (at_bins - at_other).abs() } else { (at_other - at_bins).abs() };
        let smallest = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        Some(BiasCheck { bins, estimate, smallest_mean: smallest, passed: estimate <= 0.2 * smallest })
    } else {
        None
    };
    Ok(RateReport { dim, bins, rows, raw, fit, bias })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::spectral::{synthesize, Mode};
    use rand::Rng;

    fn random_measure(rng: &mut impl Rng, dim: usize, bins: usize, sparsity: f64) -> DiscreteMeasure {
        let mut w: Vec<f64> = (0..bins.pow(dim as u32))
            .map(|_| if rng.random::<f64>() < sparsity { 0.0 } else { rng.random::<f64>() })
            .collect();
        w[0] += 1e-3;
        let s: f64 = w.iter().sum();
        DiscreteMeasure::new(dim, bins, w.into_iter().map(|v| v / s).collect()).unwrap()
    }

    fn point(dim: usize, bins: usize, cell: usize) -> DiscreteMeasure {
        let mut w = vec![0.0; bins.pow(dim as u32)];
        w[cell] = 1.0;
        DiscreteMeasure::new(dim, bins, w).unwrap()
    }

    #[test]
    fn torus_distance_examples() {
        assert_eq!(torus_distance(&[0.0], &[0.5]), 0.5);
        assert_eq!(torus_distance(&[0.3, 0.2], &[0.3, 0.2]), 0.0);
        assert!((torus_distance(&[0.0, 0.0], &[0.9, 0.0]) - 0.1).abs() < 1e-15);
        let mut rng = stream_rng(1, "dist", 0);
        for _ in 0..1000 {
            let p: Vec<[f64; 3]> = (0..3).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
            let (x, y, z) = (&p[0][..], &p[1][..], &p[2][..]);
            assert!(torus_distance(x, y) <= 3f64.sqrt() / 2.0 + 1e-15);
            assert!((torus_distance(x, y) - torus_distance(y, x)).abs() < 1e-15);
            assert!(torus_distance(x, z) <= torus_distance(x, y) + torus_distance(y, z) + 1e-15);
        }
    }

    #[test]
    fn exact_solver_examples() {
        let mut rng = stream_rng(2, "ot", 0);
        let nu = random_measure(&mut rng, 2, 8, 0.0);
        assert_eq!(w1_exact(&nu, &nu).unwrap().cost, 0.0);
        let r = w1_exact(&point(1, 16, 0), &point(1, 16, 8)).unwrap();
        assert!((r.cost - 0.5).abs() < 1e-15);
        assert!(matches!(w1_exact_capped(&nu, &nu, 10), Err(Error::SizeCap { .. })));
    }

    #[test]
    fn exact_solver_matches_circle_formula() {
        let mut rng = stream_rng(3, "ot", 0);
        for trial in 0..50 {
            let sparsity = if trial % 2 == 0 { 0.0 } else { 0.5 };
            let nu = random_measure(&mut rng, 1, 16, sparsity);
            let rho = random_measure(&mut rng, 1, 16, sparsity);
            let r = w1_exact(&nu, &rho).unwrap();
            assert!((r.cost - w1_circle(&nu.weights, &rho.weights)).abs() < 1e-12);
            assert!(r.duality_gap <= DUALITY_GAP_TOL);
            assert!(r.plan.marginal_error(&nu, &rho) <= MARGINAL_TOL);
            assert!(r.plan.is_nonnegative());
        }
    }

    #[test]
    fn exact_solver_certificates_in_higher_dimension() {
        let mut rng = stream_rng(4, "ot", 0);
        for (dim, bins) in [(2, 16), (3, 8)] {
            let nu = random_measure(&mut rng, dim, bins, 0.3);
            let rho = random_measure(&mut rng, dim, bins, 0.3);
            let r = w1_exact(&nu, &rho).unwrap();
            assert!(r.duality_gap <= DUALITY_GAP_TOL, "{}", r.duality_gap);
            assert!(r.dual_infeasibility > -1e-10);
            assert!(r.plan.marginal_error(&nu, &rho) <= MARGINAL_TOL);
            let recomputed: f64 = r
                .plan
                .entries
                .iter()
                .map(|&(i, j, m)| {
                    let (a, b) = (nu.cell_index(i), nu.cell_index(j));
                    let xa: Vec<f64> = (0..dim).map(|k| (a[k] as f64 + 0.5) / bins as f64).collect();
                    let xb: Vec<f64> = (0..dim).map(|k| (b[k] as f64 + 0.5) / bins as f64).collect();
                    m * torus_distance(&xa, &xb)
                })
                .sum();
            assert!((recomputed - r.cost).abs() < 1e-12);
        }
    }

    #[test]
    fn w1_is_a_metric_on_random_triples() {
        let mut rng = stream_rng(5, "ot", 0);
        for _ in 0..20 {
            let m: Vec<_> = (0..3).map(|_| random_measure(&mut rng, 2, 8, 0.2)).collect();
            let d = |a: usize, b: usize| w1_exact(&m[a], &m[b]).unwrap().cost;
            assert!((d(0, 1) - d(1, 0)).abs() < 1e-12);
            assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-8);
        }
    }

    fn random_potential(rng: &mut impl Rng, n: usize) -> PeriodicField<f64> {
        let modes: Vec<Mode> = (1..=8)
            .map(|k| {
                let w = 1.0 / (k * k) as f64;
                Mode::new(&[k], w * rng.random_range(-1.0..1.0), w * rng.random_range(-1.0..1.0))
            })
            .collect();
        synthesize(&modes, 1, n).unwrap()
    }

    #[test]
    fn dual_bound_is_below_exact_cost() {
        let mut rng = stream_rng(6, "dual", 0);
        let zero = PeriodicField::constant(1, 32, 3.0).unwrap();
        let mut ratios = Vec::new();
        for _ in 0..20 {
            let nu = random_measure(&mut rng, 1, 16, 0.0);
            let rho = random_measure(&mut rng, 1, 16, 0.0);
            let exact = w1_exact(&nu, &rho).unwrap().cost;
            assert_eq!(w1_dual_bound(&nu, &rho, std::slice::from_ref(&zero)).unwrap(), 0.0);
            let pots: Vec<_> = (0..64).map(|_| random_potential(&mut rng, 32)).collect();
            assert_eq!(w1_dual_bound(&nu, &nu, &pots).unwrap(), 0.0);
            let lb = w1_dual_bound(&nu, &rho, &pots).unwrap();
            assert!(lb <= exact + MARGINAL_TOL);
            ratios.push(lb / exact);
        }
        let worst = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        // smooth random potentials recover roughly half of the optimal pairing on 16 cells
        assert!(worst > 0.3, "{ratios:?}");
    }

    #[test]
    fn entropic_bracket_contains_exact_value() {
        let mut rng = stream_rng(7, "sinkhorn", 0);
        for _ in 0..3 {
            let nu = random_measure(&mut rng, 2, 8, 0.0);
            let rho = random_measure(&mut rng, 2, 8, 0.0);
            let exact = w1_exact(&nu, &rho).unwrap().cost;
            let e = w1_entropic(&nu, &rho, EntropicOptions::default()).unwrap();
            assert!(e.bracketed);
            assert!(e.lower <= exact + 1e-12 && exact <= e.upper + 1e-12, "{e:?} {exact}");
            assert!((e.estimate - exact).abs() <= 0.05 * exact);
        }
    }

    #[test]
    fn discretized_density_has_exact_cell_masses() {
        let f = synthesize(&[Mode::cos(&[0], 1.0), Mode::new(&[1], 0.3, 0.4)], 1, 16).unwrap();
        let d = discretize_density(&f, 8).unwrap();
        for (i, w) in d.weights.iter().enumerate() {
            let (a, b) = (i as f64 / 8.0, (i + 1) as f64 / 8.0);
            let tau = 2.0 * std::f64::consts::PI;
            let exact = (b - a) + 0.3 * ((tau * b).sin() - (tau * a).sin()) / tau - 0.4 * ((tau * b).cos() - (tau * a).cos()) / tau;
            assert!((w - exact).abs() < 1e-14);
        }
        let uniform = PeriodicField::constant(2, 8, 1.0).unwrap();
        let u = discretize_density(&uniform, 4).unwrap();
        assert!(u.weights.iter().all(|w| (w - 1.0 / 16.0).abs() < 1e-15));
    }

    #[test]
    fn discretization_consistency_under_bin_doubling() {
        let nu = synthesize(&[Mode::cos(&[0], 1.0), Mode::new(&[1], 0.5, 0.2)], 1, 16).unwrap();
        let rho = synthesize(&[Mode::cos(&[0], 1.0), Mode::new(&[2], -0.3, 0.4)], 1, 16).unwrap();
        let w: Vec<f64> = [8, 16, 32, 64]
            .iter()
            .map(|&m| w1_exact(&discretize_density(&nu, m).unwrap(), &discretize_density(&rho, m).unwrap()).unwrap().cost)
            .collect();
        let c: Vec<f64> = (0..3).map(|i| (w[i + 1] - w[i]).abs() * (8 << i) as f64).collect();
        assert!(c[1] <= 1.5 * c[0] + 1e-12 && c[2] <= 1.5 * c[1] + 1e-12, "{c:?}");
    }
}
