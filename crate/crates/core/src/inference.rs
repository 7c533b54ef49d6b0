//! Hypothesis tests built on the Half-KFN statistic.
//!
//! * [`permutation_test`]: re-splits the pooled sample `P` times and compares
//!   the observed statistic with the re-split statistics, each perturbed by a
//!   tiny Gaussian draw so that ties occur with probability zero.
//! * [`bootstrap_test`]: averages the statistic over `M` with-replacement
//!   resamples and standardizes the mean with the asymptotic null moments,
//!   whose mutual- and shared-farthest-neighbour probabilities are estimated
//!   from the per-class max-coordinate projections (`k = 1` only).
//!
//! Replicate `t` draws from ChaCha stream `t + 1` of the configured seed and
//! stream 0 perturbs the observed statistic, so reports depend only on the
//! inputs and the seed.

use std::time::Instant;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::error::{Error, Result};
use crate::feature_space::SampleSet;
use crate::kfn::{half_kfn, PooledSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "drift")]
    Drift,
    #[serde(rename = "no-drift")]
    NoDrift,
}

impl Decision {
    pub fn is_drift(self) -> bool {
        self == Decision::Drift
    }
}

/// Direction in which a statistic moves under drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    LargerIsDrift,
    SmallerIsDrift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationConfig {
    pub permutations: usize,
    pub sigma_noise: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        PermutationConfig {
            permutations: 100,
            sigma_noise: 1e-8,
            alpha: 0.05,
            seed: 0,
        }
    }
}

impl PermutationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.permutations == 0 {
            return Err(Error::Config("permutation count must be at least 1".into()));
        }
        if !(self.sigma_noise > 0.0 && self.sigma_noise.is_finite()) {
            return Err(Error::Config("sigma_noise must be positive".into()));
        }
        check_alpha(self.alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    /// Reject when the upper-tail probability of `|z|` is below `alpha / 2`.
    TwoSided,
    /// Reject when the upper-tail probability of `z` is below `alpha`.
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub k: usize,
    pub alpha: f64,
    pub seed: u64,
    pub sidedness: Sidedness,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 10,
            k: 1,
            alpha: 0.05,
            seed: 0,
            sidedness: Sidedness::TwoSided,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resamples < 2 {
            return Err(Error::Config("bootstrap needs at least 2 resamples".into()));
        }
        if self.k != 1 {
            return Err(Error::Config(format!(
                "bootstrap test supports k = 1 only, got k = {}",
                self.k
            )));
        }
        check_alpha(self.alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub p1: f64,
    pub p2: f64,
    pub mu: f64,
    pub sigma2: f64,
}

/// Outcome of a single detection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub method: String,
    pub statistic: f64,
    pub p_value: f64,
    pub z_score: Option<f64>,
    pub decision: Decision,
    pub elapsed_s: f64,
    pub config: serde_json::Value,
}

impl TestReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub(crate) fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Observed statistic and permutation p-value of `statistic` on `pool`.
///
/// `p = #{t : T <= T_t} / P` for statistics that grow under drift, and
/// `#{t : T >= T_t} / P` for those that shrink, where `T` and `T_t` carry
/// independent `N(0, sigma_noise^2)` perturbations.
pub fn permutation_p_value<F>(
    pool: &PooledSample,
    orientation: Orientation,
    cfg: &PermutationConfig,
    statistic: F,
) -> Result<(f64, f64)>
where
    F: Fn(&PooledSample) -> Result<f64>,
{
    cfg.validate()?;
    let noise = Normal::new(0.0, cfg.sigma_noise).expect("validated sigma");
    let observed = statistic(pool)?;
    let perturbed = observed + noise.sample(&mut replicate_rng(cfg.seed, 0));

    let mut order: Vec<usize> = (0..pool.n()).collect();
    let mut exceed = 0usize;
    for t in 0..cfg.permutations {
        let mut rng = replicate_rng(cfg.seed, t as u64 + 1);
        order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
        order.shuffle(&mut rng);
        let value = statistic(&pool.reordered(&order))? + noise.sample(&mut rng);
        let hit = match orientation {
            Orientation::LargerIsDrift => perturbed <= value,
            Orientation::SmallerIsDrift => perturbed >= value,
        };
        exceed += usize::from(hit);
    }
    Ok((observed, exceed as f64 / cfg.permutations as f64))
}

/// Permutation test of the Half-KFN statistic with `k` farthest neighbours.
pub fn permutation_test(source: &SampleSet, target: &SampleSet, k: usize, cfg: &PermutationConfig) -> Result<TestReport> {
    let start = Instant::now();
    let pool = PooledSample::new(source, target)?;
    let (t, p) = permutation_p_value(&pool, Orientation::LargerIsDrift, cfg, |p| Ok(half_kfn(p, k)?.t))?;
    Ok(TestReport {
        method: "half_kfn_permutation".into(),
        statistic: t,
        p_value: p,
        z_score: None,
        decision: if p < cfg.alpha { Decision::Drift } else { Decision::NoDrift },
        elapsed_s: start.elapsed().as_secs_f64(),
        config: serde_json::json!({
            "k": k,
            "n1": pool.n1(),
            "n2": pool.n2(),
            "permutations": cfg.permutations,
            "sigma_noise": cfg.sigma_noise,
            "alpha": cfg.alpha,
            "seed": cfg.seed,
        }),
    })
}

fn binom2(m: usize) -> f64 {
    (m * m.saturating_sub(1)) as f64 / 2.0
}

/// Contribution of one class to `(p1, p2)`: `values` are the class members'
/// max coordinates, `sources` of which come from the source sample.
fn class_terms(values: &[f64], sources: usize, n1: usize) -> (f64, f64) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mid = (lo + hi) / 2.0;
    let left = values.iter().filter(|&&v| v <= mid).count();
    let right = values.len() - left;
    let pairs = binom2(values.len());
    let weight = (sources as f64 / n1 as f64).powi(2);
    (weight / pairs, weight * (binom2(left) + binom2(right)) / pairs)
}

fn p1_p2_k1(pool: &PooledSample, drop_singletons: bool) -> Result<(f64, f64)> {
    let (mut p1, mut p2) = (0.0, 0.0);
    for class in 0..pool.dim() {
        let members = pool.class_members(class);
        match members.len() {
            0 => continue,
            1 if drop_singletons => {
                warn!("class {class} has a single member; excluded from p1/p2 estimation");
                continue;
            }
            1 => return Err(Error::DegenerateClass { class, members: 1 }),
            _ => {}
        }
        let values: Vec<f64> = members.iter().map(|&i| pool.row(i)[class]).collect();
        let sources = members.iter().filter(|&&i| pool.is_source(i)).count();
        let (a, b) = class_terms(&values, sources, pool.n1());
        p1 += a;
        p2 += b;
    }
    Ok((p1, p2))
}

/// Estimates the mutual-farthest-neighbour probability `p1` and the
/// shared-farthest-neighbour probability `p2` for `k = 1`.
///
/// Each class is projected onto its max coordinate. On a line the only
/// mutually farthest pair is (min, max), and two points share a farthest
/// neighbour exactly when they sit on the same side of `(min + max) / 2`;
/// points on the midpoint count as left. Class terms are weighted by
/// `(n1_class / n1)^2`.
pub fn estimate_p1_p2_k1(pool: &PooledSample) -> Result<(f64, f64)> {
    p1_p2_k1(pool, false)
}

/// Asymptotic null mean and variance of the statistic for `k = 1`:
/// `mu = lambda2`, `sigma2 = lambda2^2 p1 + lambda1 lambda2 p2`.
pub fn asymptotic_moments(n1: usize, n2: usize, p1: f64, p2: f64) -> MomentEstimate {
    let n = (n1 + n2) as f64;
    let (l1, l2) = (n1 as f64 / n, n2 as f64 / n);
    MomentEstimate {
        p1,
        p2,
        mu: l2,
        sigma2: l2 * l2 * p1 + l1 * l2 * p2,
    }
}

/// Exact mean and variance of the statistic over uniformly random
/// source/target relabelings of a fixed pool in which every vector has `k`
/// intra-class farthest neighbours.
///
/// `p1_rs[r][s]` and `p2_rs[r][s]` are the fractions of ordered pairs
/// `(i, j)`, `i != j`, for which the `r`-th farthest neighbour of `i` is `j`
/// and the `s`-th of `j` is `i`, respectively for which those two neighbours
/// coincide. As `n` grows the coefficients tend to `lambda2^2`,
/// `lambda1 lambda2` and `0`, recovering [`asymptotic_moments`].
pub fn finite_sample_moments(n1: usize, n2: usize, k: usize, p1_rs: &[Vec<f64>], p2_rs: &[Vec<f64>]) -> Result<(f64, f64)> {
    let n = n1 + n2;
    if n < 4 || n1 == 0 || n2 == 0 {
        return Err(Error::UnsupportedSize(format!(
            "finite-sample moments need n1, n2 >= 1 and n >= 4, got n1 = {n1}, n2 = {n2}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let avg = |m: &[Vec<f64>]| -> Result<f64> {
        if m.len() != k || m.iter().any(|row| row.len() != k) {
            return Err(Error::InvalidInput(format!("probability matrices must be {k} x {k}")));
        }
        Ok(m.iter().flatten().sum::<f64>() / (k * k) as f64)
    };
    let (a1, a2) = (avg(p1_rs)?, avg(p2_rs)?);
    let (n1, n2, n, k) = (n1 as f64, n2 as f64, n as f64, k as f64);

    let mean = n2 / (n - 1.0);
    let c1 = n2 * (n1 - 1.0) * (n2 - 1.0) / (n1 * (n - 2.0) * (n - 3.0));
    let c2 = n2 * (n1 - 1.0) * (n1 - 2.0) / (n1 * (n - 2.0) * (n - 3.0));
    let residual = n2 * (n1 - 1.0) * (n - 1.0 - k * n1) / (k * n1 * (n - 1.0).powi(2) * (n - 2.0));
    Ok((mean, c1 * a1 + c2 * a2 + residual))
}

/// Bootstrap hypothesis test of the Half-KFN statistic (`k = 1`).
pub fn bootstrap_test(source: &SampleSet, target: &SampleSet, cfg: &BootstrapConfig) -> Result<TestReport> {
    cfg.validate()?;
    let start = Instant::now();
    let pool = PooledSample::new(source, target)?;
    let (n1, n2) = (pool.n1(), pool.n2());

    let (p1, p2) = p1_p2_k1(&pool, true)?;
    let moments = asymptotic_moments(n1, n2, p1, p2);
    if moments.sigma2 <= 0.0 {
        return Err(Error::DegenerateVariance);
    }

    let mut idx = vec![0usize; pool.n()];
    let mut total = 0.0;
    for m in 0..cfg.resamples {
        let mut rng = replicate_rng(cfg.seed, m as u64 + 1);
        for slot in &mut idx[..n1] {
            *slot = rng.random_range(0..n1);
        }
        for slot in &mut idx[n1..] {
            *slot = rng.random_range(n1..n1 + n2);
        }
        total += half_kfn(&pool.reordered(&idx), cfg.k)?.t;
    }
    let mean_t = total / cfg.resamples as f64;
    let z = (mean_t - moments.mu) / (moments.sigma2 / cfg.resamples as f64).sqrt();

    let normal = StdNormal::standard();
    let (p, tail, threshold) = match cfg.sidedness {
        Sidedness::TwoSided => {
            let tail = normal.sf(z.abs());
            ((2.0 * tail).min(1.0), tail, cfg.alpha / 2.0)
        }
        Sidedness::Upper => {
            let tail = normal.sf(z);
            (tail, tail, cfg.alpha)
        }
    };
    Ok(TestReport {
        method: "half_kfn_bootstrap".into(),
        statistic: mean_t,
        p_value: p,
        z_score: Some(z),
        decision: if tail < threshold { Decision::Drift } else { Decision::NoDrift },
        elapsed_s: start.elapsed().as_secs_f64(),
        config: serde_json::json!({
            "k": cfg.k,
            "n1": n1,
            "n2": n2,
            "resamples": cfg.resamples,
            "alpha": cfg.alpha,
            "seed": cfg.seed,
            "sidedness": cfg.sidedness,
            "moments": moments,
        }),
    })
}
