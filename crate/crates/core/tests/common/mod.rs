//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use halfkfn::kfn::PooledSample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn class_of(v: &[f64]) -> usize {
    let mut best = 0;
    for c in 1..v.len() {
        if v[c] > v[best] {
            best = c;
        }
    }
    best
}

/// Random probability vector of dimension `l`.
pub fn random_simplex(rng: &mut ChaCha8Rng, l: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..l).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, l: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| random_simplex(rng, l)).collect()
}

/// Same-class farthest neighbours of `i`, sorted by distance descending and
/// index ascending, truncated to `k`.
pub fn farthest(rows: &[Vec<f64>], i: usize, k: usize) -> Vec<usize> {
    let c = class_of(&rows[i]);
    let mut cand: Vec<usize> = (0..rows.len()).filter(|&j| j != i && class_of(&rows[j]) == c).collect();
    cand.sort_by(|&a, &b| {
        dist2(&rows[i], &rows[b])
            .partial_cmp(&dist2(&rows[i], &rows[a]))
            .unwrap()
            .then(a.cmp(&b))
    });
    cand.truncate(k);
    cand
}

/// Half-KFN statistic computed from the definition.
pub fn half_kfn_oracle(rows: &[Vec<f64>], n1: usize, k: usize) -> (usize, f64) {
    let mut cross = 0;
    for i in 0..n1 {
        cross += farthest(rows, i, k).iter().filter(|&&j| j >= n1).count();
    }
    (cross, cross as f64 / (n1 * k) as f64)
}

/// Calls `f` with every `m`-subset of `0..n` in lexicographic order.
pub fn for_each_subset(n: usize, m: usize, mut f: impl FnMut(&[usize])) {
    if m > n {
        return;
    }
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        f(&idx);
        let mut i = m;
        while i > 0 && idx[i - 1] == i - 1 + n - m {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..m {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Mean and population variance of T over all labelings that pick `n1` of
/// the pooled rows as source.
pub fn relabeling_moments(rows: &[Vec<f64>], n1: usize, k: usize) -> (f64, f64) {
    let n = rows.len();
    let mut values = Vec::new();
    for_each_subset(n, n1, |s| {
        let mut order: Vec<usize> = s.to_vec();
        order.extend((0..n).filter(|j| !s.contains(j)));
        let relabeled: Vec<Vec<f64>> = order.iter().map(|&j| rows[j].clone()).collect();
        values.push(half_kfn_oracle(&relabeled, n1, k).1);
    });
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    (mean, var)
}

/// Exact pair probabilities over ordered pairs `i != j` of the pool:
/// `p1[r][s]` for `FN_i(r) = j, FN_j(s) = i` and `p2[r][s]` for
/// `FN_i(r) = FN_j(s)`.
pub fn pair_probabilities(rows: &[Vec<f64>], k: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = rows.len();
    let fns: Vec<Vec<usize>> = (0..n).map(|i| farthest(rows, i, k)).collect();
    let mut p1 = vec![vec![0.0; k]; k];
    let mut p2 = vec![vec![0.0; k]; k];
    let denom = (n * (n - 1)) as f64;
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            for r in 0..k {
                for s in 0..k {
                    if fns[i][r] == j && fns[j][s] == i {
                        p1[r][s] += 1.0 / denom;
                    }
                    if fns[i][r] == fns[j][s] {
                        p2[r][s] += 1.0 / denom;
                    }
                }
            }
        }
    }
    (p1, p2)
}

/// Five event probabilities for k = 1 counted directly over ordered pairs.
pub fn event_probabilities(rows: &[Vec<f64>]) -> [f64; 5] {
    let n = rows.len();
    let fns: Vec<usize> = (0..n).map(|i| farthest(rows, i, 1)[0]).collect();
    let mut c = [0usize; 5];
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let (a, b) = (fns[i], fns[j]);
            if a == j && b == i {
                c[0] += 1;
            } else if a == b {
                c[1] += 1;
            } else if a == j {
                c[2] += 1;
            } else if b == i {
                c[3] += 1;
            } else {
                c[4] += 1;
            }
        }
    }
    let d = (n * (n - 1)) as f64;
    c.map(|x| x as f64 / d)
}

pub fn min_class_population(rows: &[Vec<f64>]) -> usize {
    let l = rows[0].len();
    (0..l)
        .map(|c| rows.iter().filter(|r| class_of(r) == c).count())
        .filter(|&m| m > 0)
        .min()
        .unwrap_or(0)
}

pub fn distances_distinct(rows: &[Vec<f64>]) -> bool {
    let mut d = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(dist2(&rows[i], &rows[j]));
        }
    }
    d.sort_by(f64::total_cmp);
    d.windows(2).all(|w| w[1] - w[0] > 1e-12)
}

pub fn knn_oracle(rows: &[Vec<f64>], n1: usize, k: usize) -> f64 {
    let n = rows.len();
    let mut same = 0;
    for i in 0..n {
        let mut cand: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        cand.sort_by(|&a, &b| dist2(&rows[i], &rows[a]).total_cmp(&dist2(&rows[i], &rows[b])).then(a.cmp(&b)));
        same += cand[..k].iter().filter(|&&j| (j < n1) == (i < n1)).count();
    }
    same as f64 / (n * k) as f64
}

pub fn mmd_oracle(rows: &[Vec<f64>], n1: usize, h: f64) -> f64 {
    let kern = |a: &[f64], b: &[f64]| (-dist2(a, b) / (2.0 * h * h)).exp();
    let (x, y) = rows.split_at(n1);
    let (m, n) = (x.len() as f64, y.len() as f64);
    let mut kxx = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            if i != j {
                kxx += kern(&x[i], &x[j]);
            }
        }
    }
    let mut kyy = 0.0;
    for i in 0..y.len() {
        for j in 0..y.len() {
            if i != j {
                kyy += kern(&y[i], &y[j]);
            }
        }
    }
    let kxy: f64 = x.iter().flat_map(|a| y.iter().map(move |b| kern(a, b))).sum();
    kxx / (m * (m - 1.0)) + kyy / (n * (n - 1.0)) - 2.0 * kxy / (m * n)
}

pub fn median_distance_oracle(rows: &[Vec<f64>]) -> f64 {
    let mut d = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(dist2(&rows[i], &rows[j]).sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    if m % 2 == 1 {
        d[m / 2]
    } else {
        (d[m / 2 - 1] + d[m / 2]) / 2.0
    }
}

pub fn energy_oracle(rows: &[Vec<f64>], n1: usize) -> f64 {
    let (x, y) = rows.split_at(n1);
    let mean = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        a.iter().flat_map(|p| b.iter().map(move |q| dist2(p, q).sqrt())).sum::<f64>() / (a.len() * b.len()) as f64
    };
    let (m, n) = (x.len() as f64, y.len() as f64);
    m * n / (m + n) * (2.0 * mean(x, y) - mean(x, x) - mean(y, y))
}

/// Cross-sample edge count of the minimum spanning tree, built with
/// Kruskal's algorithm over edges ordered by (length, i, j).
pub fn fr_oracle(rows: &[Vec<f64>], n1: usize) -> f64 {
    let n = rows.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            edges.push((dist2(&rows[i], &rows[j]), i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut cross = 0;
    for (_, i, j) in edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a] = b;
            if (i < n1) != (j < n1) {
                cross += 1;
            }
        }
    }
    cross as f64
}

/// All spanning trees of a small complete graph (n <= 6), as edge lists.
pub fn spanning_tree_weights(rows: &[Vec<f64>]) -> Vec<(f64, Vec<(usize, usize)>)> {
    let n = rows.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            edges.push((i, j));
        }
    }
    let mut out = Vec::new();
    for_each_subset(edges.len(), n - 1, |s| {
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                x = p[x];
            }
            x
        }
        let mut ok = true;
        for &e in s {
            let (a, b) = (find(&mut parent, edges[e].0), find(&mut parent, edges[e].1));
            if a == b {
                ok = false;
                break;
            }
            parent[a] = b;
        }
        if ok {
            let tree: Vec<(usize, usize)> = s.iter().map(|&e| edges[e]).collect();
            let w = tree.iter().map(|&(i, j)| dist2(&rows[i], &rows[j]).sqrt()).sum();
            out.push((w, tree));
        }
    });
    out
}

pub fn pool(rows: &[Vec<f64>], n1: usize) -> PooledSample {
    PooledSample::from_rows(rows, n1).unwrap()
}
