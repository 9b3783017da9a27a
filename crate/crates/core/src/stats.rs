//! Goodness-of-fit tests and rate regression used by the experiments.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub const KS_MIN_SAMPLES: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestReport {
    pub statistic: f64,
    pub p_value: f64,
    pub n: Vec<usize>,
    pub null_description: String,
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    // the series is 1 to double precision below 0.2 and converges slowly there
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Stephens' finite-sample correction of the asymptotic statistic.
fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let sq = n_eff.sqrt();
    kolmogorov_survival((sq + 0.12 + 0.11 / sq) * d)
}

/// One-sample Kolmogorov–Smirnov test of `samples` against the continuous `cdf`.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64, null_description: &str) -> Result<TestReport> {
    if samples.len() < KS_MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "KS test needs at least {KS_MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let mut xs = samples.to_vec();
    if xs.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidArgument("NaN sample".into()));
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(TestReport {
        statistic: d,
        p_value: ks_p_value(d, n),
        n: vec![xs.len()],
        null_description: null_description.to_string(),
    })
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestReport> {
    if a.len() < KS_MIN_SAMPLES || b.len() < KS_MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!("KS test needs at least {KS_MIN_SAMPLES} samples per group")));
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(TestReport {
        statistic: d,
        p_value: ks_p_value(d, na * nb / (na + nb)),
        n: vec![xa.len(), xb.len()],
        null_description: "both samples share one continuous distribution".into(),
    })
}

/// Pearson χ² test of counts against equal cell masses.
pub fn chi2_uniform(counts: &[f64]) -> Result<TestReport> {
    if counts.len() < 2 {
        return Err(Error::InvalidArgument("χ² test needs at least two cells".into()));
    }
    let total: f64 = counts.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("χ² test needs positive total count".into()));
    }
    let expected = total / counts.len() as f64;
    let statistic: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(TestReport {
        statistic,
        p_value: (1.0 - dist.cdf(statistic)).clamp(0.0, 1.0),
        n: vec![total.round() as usize],
        null_description: format!("uniform over {} cells", counts.len()),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// 95% confidence interval of the slope.
    pub ci: (f64, f64),
}

/// Ordinary least squares of `log y` on `log x`.
pub fn fit_rate(x: &[f64], y: &[f64]) -> Result<RateFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument("rate fit needs two or more (x, y) pairs".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument("rate fit needs positive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("rate fit needs distinct x values".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (stderr, ci) = if lx.len() > 2 {
        let rss: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        let se = (rss / (n - 2.0) / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, n - 2.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let q = t.inverse_cdf(0.975);
        (se, (slope - q * se, slope + q * se))
    } else {
        (f64::NAN, (f64::NEG_INFINITY, f64::INFINITY))
    };
    Ok(RateFit { slope, intercept, slope_stderr: stderr, ci })
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Mean and batch-means standard error of a correlated series.
pub fn batch_means(series: &[f64], batches: usize) -> Result<(f64, f64)> {
    if batches < 2 || series.len() < batches {
        return Err(Error::InvalidArgument("batch means needs at least two non-empty batches".into()));
    }
    let size = series.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| mean(&series[b * size..(b + 1) * size])).collect();
    Ok((mean(&series[..size * batches]), (variance(&means) / batches as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use statrs::distribution::Normal;

    fn normal_cdf(x: f64) -> f64 {
        Normal::new(0.0, 1.0).unwrap().cdf(x)
    }

    #[test]
    fn kolmogorov_reference_values() {
        // tabulated quantiles of the Kolmogorov distribution
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn ks_accepts_the_null() {
        let mut rng = stream_rng(1, "ks", 0);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let r = ks_one_sample(&xs, normal_cdf, "N(0,1)").unwrap();
        assert!(r.p_value > 0.01);
        let ys: Vec<f64> = (0..500).map(|_| rng.sample(StandardNormal)).collect();
        assert!(ks_two_sample(&xs, &ys).unwrap().p_value > 0.01);
    }

    #[test]
    fn ks_degenerate_and_small() {
        let r = ks_one_sample(&[0.0; 50], normal_cdf, "N(0,1)").unwrap();
        assert!((r.statistic - 0.5).abs() < 1e-12);
        assert!(ks_one_sample(&[0.0; 5], normal_cdf, "N(0,1)").is_err());
    }

    #[test]
    fn ks_rejects_shifted_samples() {
        let mut rng = stream_rng(2, "ks", 0);
        let xs: Vec<f64> = (0..2000).map(|_| rng.sample::<f64, _>(StandardNormal) + 0.3).collect();
        assert!(ks_one_sample(&xs, normal_cdf, "N(0,1)").unwrap().p_value < 1e-6);
    }

    #[test]
    fn chi2_on_exact_uniform_counts() {
        let r = chi2_uniform(&[10.0; 16]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rate_fit_examples() {
        let x: Vec<f64> = (5..12).map(|j| 2f64.powi(j)).collect();
        let y: Vec<f64> = x.iter().map(|t| t.powf(-0.5)).collect();
        assert!((fit_rate(&x, &y).unwrap().slope + 0.5).abs() < 1e-10);
        let c = vec![3.0; x.len()];
        assert!(fit_rate(&x, &c).unwrap().slope.abs() < 1e-12);
        // coverage of the 95% interval on a noisy power law
        let mut covered = 0;
        for trial in 0..100 {
            let mut rng = stream_rng(3, "fit", trial);
            let y: Vec<f64> = x
                .iter()
                .map(|t| t.powf(-0.5) * (0.1 * rng.sample::<f64, _>(StandardNormal)).exp())
                .collect();
            let fit = fit_rate(&x, &y).unwrap();
            if fit.ci.0 <= -0.5 && -0.5 <= fit.ci.1 {
                covered += 1;
            }
        }
        assert!(covered >= 90, "{covered}");
    }

    #[test]
    fn batch_means_of_iid_series() {
        let mut rng = stream_rng(4, "bm", 0);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        let (m, se) = batch_means(&xs, 50).unwrap();
        assert!((se - 1.0 / (1e5f64).sqrt()).abs() < 0.3 / (1e5f64).sqrt());
        assert!(m.abs() < 4.0 * se);
    }
}
