//! Reference two-sample statistics, each turned into a test by the shared
//! permutation engine.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{permutation_p_value, Decision, Orientation, PermutationConfig, TestReport};
use crate::kfn::{sq_distance, PooledSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Knn,
    Mmd,
    Energy,
    Fr,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [BaselineKind::Mmd, BaselineKind::Energy, BaselineKind::Fr, BaselineKind::Knn];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Knn => "knn",
            BaselineKind::Mmd => "mmd",
            BaselineKind::Energy => "energy",
            BaselineKind::Fr => "fr",
        }
    }

    pub fn orientation(self) -> Orientation {
        match self {
            BaselineKind::Fr => Orientation::SmallerIsDrift,
            _ => Orientation::LargerIsDrift,
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineStatistic {
    pub name: BaselineKind,
    pub value: f64,
    pub orientation: Orientation,
}

impl BaselineStatistic {
    fn new(name: BaselineKind, value: f64) -> Self {
        BaselineStatistic {
            name,
            value,
            orientation: name.orientation(),
        }
    }
}

/// Schilling's nearest-neighbour statistic: the fraction of (point, rank)
/// pairs, over all `n` pooled points and ranks `1..=k`, whose nearest
/// neighbour lies in the same sample as the point.
pub fn knn_statistic(pool: &PooledSample, k: usize) -> Result<BaselineStatistic> {
    let n = pool.n();
    if k == 0 || n <= k {
        return Err(Error::InvalidInput(format!("knn statistic needs 1 <= k < n, got k = {k}, n = {n}")));
    }
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    let mut same = 0usize;
    for i in 0..n {
        best.clear();
        let xi = pool.row(i);
        for j in (0..n).filter(|&j| j != i) {
            let d = sq_distance(xi, pool.row(j));
            if best.len() == k {
                if d >= best[k - 1].0 {
                    continue;
                }
                best.pop();
            }
            let pos = best.iter().position(|&(e, _)| d < e).unwrap_or(best.len());
            best.insert(pos, (d, j));
        }
        same += best.iter().filter(|&&(_, j)| pool.is_source(j) == pool.is_source(i)).count();
    }
    Ok(BaselineStatistic::new(BaselineKind::Knn, same as f64 / (n * k) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    MedianHeuristic,
    Fixed(f64),
}

/// Median of the pooled pairwise Euclidean distances.
pub fn median_pairwise_distance(pool: &PooledSample) -> f64 {
    let n = pool.n();
    let mut d: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(pool.sq_distance(i, j).sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let len = d.len();
    let mid = len / 2;
    let (lower, upper, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if len % 2 == 1 {
        upper
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (below + upper) / 2.0
    }
}

fn resolve_bandwidth(pool: &PooledSample, bandwidth: Bandwidth) -> Result<f64> {
    let h = match bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::MedianHeuristic => median_pairwise_distance(pool),
    };
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else if matches!(bandwidth, Bandwidth::MedianHeuristic) {
        Err(Error::DegenerateBandwidth)
    } else {
        Err(Error::InvalidInput(format!("bandwidth must be positive, got {h}")))
    }
}

/// Unbiased squared MMD with Gaussian kernel `exp(-|x - y|^2 / (2 h^2))`.
pub fn mmd_statistic(pool: &PooledSample, bandwidth: Bandwidth) -> Result<BaselineStatistic> {
    let (n1, n2) = (pool.n1(), pool.n2());
    if n1 < 2 || n2 < 2 {
        return Err(Error::InvalidInput(format!("mmd needs n1, n2 >= 2, got {n1} and {n2}")));
    }
    let h = resolve_bandwidth(pool, bandwidth)?;
    let gamma = 1.0 / (2.0 * h * h);
    let n = pool.n();
    let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let kv = (-gamma * pool.sq_distance(i, j)).exp();
            match (pool.is_source(i), pool.is_source(j)) {
                (true, true) => xx += kv,
                (false, false) => yy += kv,
                _ => xy += kv,
            }
        }
    }
    let (a, b) = (n1 as f64, n2 as f64);
    let value = 2.0 * xx / (a * (a - 1.0)) + 2.0 * yy / (b * (b - 1.0)) - 2.0 * xy / (a * b);
    Ok(BaselineStatistic::new(BaselineKind::Mmd, value))
}

/// Energy statistic `n1 n2 / n * (2 E|X - Y| - E|X - X'| - E|Y - Y'|)`, with
/// the within-sample means taken over all ordered pairs including the
/// diagonal.
pub fn energy_statistic(pool: &PooledSample) -> Result<BaselineStatistic> {
    let (n1, n2) = (pool.n1(), pool.n2());
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidInput("energy statistic needs n1, n2 >= 1".into()));
    }
    let n = pool.n();
    let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let d = pool.sq_distance(i, j).sqrt();
            match (pool.is_source(i), pool.is_source(j)) {
                (true, true) => xx += d,
                (false, false) => yy += d,
                _ => xy += d,
            }
        }
    }
    let (a, b) = (n1 as f64, n2 as f64);
    let value = (a * b / (a + b)) * (2.0 * xy / (a * b) - 2.0 * xx / (a * a) - 2.0 * yy / (b * b));
    Ok(BaselineStatistic::new(BaselineKind::Energy, value))
}

/// Euclidean minimum spanning tree of the pooled points, as `(i, j)` edges
/// with `i < j`. Edges are ordered by squared length and then by `(i, j)`,
/// which makes the tree unique.
pub fn minimum_spanning_tree(pool: &PooledSample) -> Vec<(usize, usize)> {
    let n = pool.n();
    if n < 2 {
        return Vec::new();
    }
    let key = |d: f64, a: usize, b: usize| (d, a.min(b), a.max(b));
    let less = |x: (f64, usize, usize), y: (f64, usize, usize)| {
        x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)).is_lt()
    };
    let mut in_tree = vec![false; n];
    let mut best: Vec<(f64, usize, usize)> = vec![(f64::INFINITY, usize::MAX, usize::MAX); n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let xc = pool.row(current);
        let mut next = usize::MAX;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let cand = key(sq_distance(xc, pool.row(j)), current, j);
            if less(cand, best[j]) {
                best[j] = cand;
            }
            if next == usize::MAX || less(best[j], best[next]) {
                next = j;
            }
        }
        let (_, a, b) = best[next];
        edges.push((a, b));
        in_tree[next] = true;
        current = next;
    }
    edges
}

/// Friedman-Rafsky statistic: number of MST edges joining the two samples.
pub fn fr_statistic(pool: &PooledSample) -> Result<BaselineStatistic> {
    if pool.n() < 2 {
        return Err(Error::InvalidInput("fr statistic needs n >= 2".into()));
    }
    let cross = minimum_spanning_tree(pool)
        .into_iter()
        .filter(|&(a, b)| pool.is_source(a) != pool.is_source(b))
        .count();
    Ok(BaselineStatistic::new(BaselineKind::Fr, cross as f64))
}

/// Permutation test of an arbitrary statistic, rejecting in the direction of
/// the statistic's orientation.
pub fn permutation_test_generic<F>(pool: &PooledSample, statistic: F, cfg: &PermutationConfig) -> Result<TestReport>
where
    F: Fn(&PooledSample) -> Result<BaselineStatistic>,
{
    let start = Instant::now();
    let first = statistic(pool)?;
    let (value, p) = permutation_p_value(pool, first.orientation, cfg, |p| Ok(statistic(p)?.value))?;
    Ok(TestReport {
        method: first.name.name().into(),
        statistic: value,
        p_value: p,
        z_score: None,
        decision: if p < cfg.alpha { Decision::Drift } else { Decision::NoDrift },
        elapsed_s: start.elapsed().as_secs_f64(),
        config: serde_json::json!({
            "n1": pool.n1(),
            "n2": pool.n2(),
            "permutations": cfg.permutations,
            "sigma_noise": cfg.sigma_noise,
            "alpha": cfg.alpha,
            "seed": cfg.seed,
            "orientation": first.orientation,
        }),
    })
}

/// Runs baseline `kind` on `pool`. The MMD bandwidth is resolved once on the
/// observed pool and held fixed across permutations.
pub fn baseline_test(pool: &PooledSample, kind: BaselineKind, k: usize, cfg: &PermutationConfig) -> Result<TestReport> {
    let start = Instant::now();
    let mut report = match kind {
        BaselineKind::Knn => permutation_test_generic(pool, |p| knn_statistic(p, k), cfg)?,
        BaselineKind::Mmd => {
            let h = resolve_bandwidth(pool, Bandwidth::MedianHeuristic)?;
            let mut r = permutation_test_generic(pool, |p| mmd_statistic(p, Bandwidth::Fixed(h)), cfg)?;
            r.config["bandwidth"] = serde_json::json!(h);
            r
        }
        BaselineKind::Energy => permutation_test_generic(pool, energy_statistic, cfg)?,
        BaselineKind::Fr => permutation_test_generic(pool, fr_statistic, cfg)?,
    };
    if kind == BaselineKind::Knn {
        report.config["k"] = serde_json::json!(k);
    }
    report.elapsed_s = start.elapsed().as_secs_f64();
    Ok(report)
}
