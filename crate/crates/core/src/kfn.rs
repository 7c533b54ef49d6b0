//! Half-KFN statistic.
//!
//! Source and target vectors are pooled, each vector is assigned the class of
//! its largest entry, and every source vector looks up its `k` farthest
//! neighbours among the other pooled vectors of the same class. The statistic
//! is the fraction of those neighbours that come from the target sample.
//!
//! Two independent evaluations are provided: the indicator-matrix form, which
//! builds each source row of the neighbour matrix and sums its target block,
//! and the farthest-neighbour form, which walks the ranked neighbour lists.
//! They must agree exactly on every pool.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_space::{argmax_class, SampleSet};

/// Source vectors followed by target vectors, with per-vector classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledSample {
    data: Vec<f64>,
    dim: usize,
    n1: usize,
    classes: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl PooledSample {
    pub fn new(source: &SampleSet, target: &SampleSet) -> Result<Self> {
        if source.dim() != target.dim() {
            return Err(Error::InvalidInput(format!(
                "source has L = {}, target has L = {}",
                source.dim(),
                target.dim()
            )));
        }
        let dim = source.dim();
        let mut data = Vec::with_capacity((source.len() + target.len()) * dim);
        for v in source.iter().chain(target.iter()) {
            data.extend_from_slice(v.as_slice());
        }
        Ok(PooledSample::from_flat(data, dim, source.len()))
    }

    /// Pool from raw rows; the first `n1` rows are the source sample.
    ///
    /// Rows are not checked against the softmax invariants, which lets the
    /// baseline statistics run on arbitrary real vectors.
    pub fn from_rows(rows: &[Vec<f64>], n1: usize) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("rows must be nonempty with a common dimension".into()));
        }
        if n1 == 0 || n1 >= rows.len() {
            return Err(Error::InvalidInput(format!(
                "need 1 <= n1 < n, got n1 = {n1}, n = {}",
                rows.len()
            )));
        }
        Ok(PooledSample::from_flat(rows.concat(), dim, n1))
    }

    pub(crate) fn from_flat(data: Vec<f64>, dim: usize, n1: usize) -> Self {
        let n = data.len() / dim;
        let classes: Vec<usize> = data.chunks_exact(dim).map(argmax_class).collect();
        let mut members = vec![Vec::new(); dim];
        for (i, &c) in classes.iter().enumerate() {
            members[c].push(i);
        }
        debug_assert!(n1 <= n);
        PooledSample {
            data,
            dim,
            n1,
            classes,
            members,
        }
    }

    /// New pool whose row `i` is row `order[i]` of this pool, keeping `n1`.
    pub fn reordered(&self, order: &[usize]) -> PooledSample {
        let mut data = Vec::with_capacity(order.len() * self.dim);
        for &i in order {
            data.extend_from_slice(self.row(i));
        }
        PooledSample::from_flat(data, self.dim, self.n1.min(order.len()))
    }

    pub fn n(&self) -> usize {
        self.classes.len()
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n() - self.n1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn is_source(&self, i: usize) -> bool {
        i < self.n1
    }

    pub fn class_of(&self, i: usize) -> usize {
        self.classes[i]
    }

    /// Pooled indices of class `class`, ascending.
    pub fn class_members(&self, class: usize) -> &[usize] {
        &self.members[class]
    }

    /// Squared Euclidean distance between rows `i` and `j`.
    pub fn sq_distance(&self, i: usize, j: usize) -> f64 {
        sq_distance(self.row(i), self.row(j))
    }
}

#[inline]
pub(crate) fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryRange {
    SourceOnly,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

/// Ranked intra-class farthest neighbours for a set of query vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FarthestNeighborTable {
    k: usize,
    queries: Vec<usize>,
    lists: Vec<Vec<Neighbor>>,
}

impl FarthestNeighborTable {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn queries(&self) -> &[usize] {
        &self.queries
    }

    pub fn neighbors(&self, query_pos: usize) -> &[Neighbor] {
        &self.lists[query_pos]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[Neighbor])> {
        self.queries.iter().copied().zip(self.lists.iter().map(Vec::as_slice))
    }
}

/// Collects into `buf` the `k` same-class rows farthest from `query`, as
/// `(squared distance, index)` sorted by decreasing distance and then
/// increasing index.
fn top_k_farthest(pool: &PooledSample, query: usize, k: usize, buf: &mut Vec<(f64, usize)>) {
    buf.clear();
    let q = pool.row(query);
    for &j in pool.class_members(pool.class_of(query)) {
        if j == query {
            continue;
        }
        let d = sq_distance(q, pool.row(j));
        if buf.len() == k {
            // Members arrive in increasing index order, so an equal distance
            // never displaces an entry already held.
            if d <= buf[k - 1].0 {
                continue;
            }
            buf.pop();
        }
        let pos = buf.iter().position(|&(e, _)| d > e).unwrap_or(buf.len());
        buf.insert(pos, (d, j));
    }
}

/// Finds, for each query, its `k` farthest pooled neighbours of the same
/// class. Distance ties go to the smaller pooled index; classes with `m <= k`
/// other members yield all `m`.
pub fn intra_class_farthest_neighbors(pool: &PooledSample, k: usize, range: QueryRange) -> FarthestNeighborTable {
    let queries: Vec<usize> = match range {
        QueryRange::SourceOnly => (0..pool.n1()).collect(),
        QueryRange::All => (0..pool.n()).collect(),
    };
    let mut buf = Vec::with_capacity(k + 1);
    let lists = queries
        .iter()
        .map(|&i| {
            top_k_farthest(pool, i, k, &mut buf);
            buf.iter()
                .map(|&(d, index)| Neighbor {
                    index,
                    distance: d.sqrt(),
                })
                .collect()
        })
        .collect();
    FarthestNeighborTable { k, queries, lists }
}

/// Value of the statistic together with the counts it was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfKfnValue {
    pub t: f64,
    /// Number of (source query, neighbour rank) pairs whose neighbour is a
    /// target vector.
    pub cross_count: usize,
    pub k: usize,
    pub n1: usize,
    pub n2: usize,
}

impl HalfKfnValue {
    fn new(cross_count: usize, k: usize, pool: &PooledSample) -> Self {
        HalfKfnValue {
            t: cross_count as f64 / (pool.n1() * k) as f64,
            cross_count,
            k,
            n1: pool.n1(),
            n2: pool.n2(),
        }
    }
}

fn check_pool(pool: &PooledSample, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if pool.n1() == 0 || pool.n2() == 0 {
        return Err(Error::InvalidInput(format!(
            "need n1 >= 1 and n2 >= 1, got {} and {}",
            pool.n1(),
            pool.n2()
        )));
    }
    Ok(())
}

/// Indicator-matrix evaluation: for each source row, marks the `k` largest
/// same-class distances in a full-length row and sums the target block.
pub fn half_kfn_matrix_form(pool: &PooledSample, k: usize) -> Result<HalfKfnValue> {
    check_pool(pool, k)?;
    let n = pool.n();
    let mut distances: Vec<Option<f64>> = vec![None; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut indicator = vec![false; n];
    let mut cross = 0;
    for i in 0..pool.n1() {
        let ci = pool.class_of(i);
        for (j, d) in distances.iter_mut().enumerate() {
            *d = (j != i && pool.class_of(j) == ci).then(|| {
                let (a, b) = (pool.row(i), pool.row(j));
                let mut acc = 0.0;
                for c in 0..a.len() {
                    acc += (a[c] - b[c]) * (a[c] - b[c]);
                }
                acc
            });
        }
        order.clear();
        order.extend((0..n).filter(|&j| distances[j].is_some()));
        order.sort_by(|&a, &b| {
            let (da, db) = (distances[a].unwrap(), distances[b].unwrap());
            db.total_cmp(&da).then(a.cmp(&b))
        });
        indicator.iter_mut().for_each(|x| *x = false);
        for &j in order.iter().take(k) {
            indicator[j] = true;
        }
        cross += indicator[pool.n1()..].iter().filter(|&&x| x).count();
    }
    Ok(HalfKfnValue::new(cross, k, pool))
}

/// Farthest-neighbour evaluation: counts ranks `r <= k` whose neighbour
/// belongs to the target sample.
pub fn half_kfn_fn_form(pool: &PooledSample, k: usize) -> Result<HalfKfnValue> {
    check_pool(pool, k)?;
    let mut buf = Vec::with_capacity(k + 1);
    let mut cross = 0;
    for i in 0..pool.n1() {
        top_k_farthest(pool, i, k, &mut buf);
        cross += buf.iter().filter(|&&(_, j)| !pool.is_source(j)).count();
    }
    Ok(HalfKfnValue::new(cross, k, pool))
}

/// Half-KFN statistic (farthest-neighbour form).
pub fn half_kfn(pool: &PooledSample, k: usize) -> Result<HalfKfnValue> {
    half_kfn_fn_form(pool, k)
}
