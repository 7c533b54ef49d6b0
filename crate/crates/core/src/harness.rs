//! Simulated-data experiments: three uniform feature blocks, a softmax
//! regression reducer, Gaussian-noise drift on a fraction of the candidate
//! sample, and repeated detection runs aggregated into rejection rates,
//! p-value summaries and timings.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_test, BaselineKind};
use crate::error::{Error, Result};
use crate::feature_space::{train_reducer, Origin, ReducerModel, SampleSet, TrainConfig};
use crate::inference::{bootstrap_test, permutation_test, replicate_rng, BootstrapConfig, PermutationConfig, Sidedness, TestReport};
use crate::kfn::PooledSample;

/// Feature dimension of the simulated data.
pub const FEATURE_DIM: usize = 5;
/// Lower corners of the three class blocks; each block is `[a, a + 1]^5`.
pub const BLOCK_OFFSETS: [f64; 3] = [1.0, 5.0, 10.0];
pub const SAMPLES_PER_CLASS: usize = 2000;
/// Size of the unlabeled test pool the two samples are nominally drawn from.
pub const TEST_POOL_BUDGET: usize = 3000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    HalfKfnPermutation,
    HalfKfnBootstrap,
    Baseline(BaselineKind),
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Baseline(BaselineKind::Mmd),
        Method::Baseline(BaselineKind::Energy),
        Method::Baseline(BaselineKind::Fr),
        Method::Baseline(BaselineKind::Knn),
        Method::HalfKfnPermutation,
        Method::HalfKfnBootstrap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::HalfKfnPermutation => "half_kfn_permutation",
            Method::HalfKfnBootstrap => "half_kfn_bootstrap",
            Method::Baseline(b) => b.name(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> Self {
        m.name().to_string()
    }
}

/// Parameters forwarded to every detection method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestParams {
    pub k: usize,
    pub permutations: usize,
    pub resamples: usize,
    pub sigma_noise: f64,
    pub alpha: f64,
    pub sidedness: Sidedness,
}

impl Default for TestParams {
    fn default() -> Self {
        TestParams {
            k: 1,
            permutations: 100,
            resamples: 10,
            sigma_noise: 1e-8,
            alpha: 0.05,
            sidedness: Sidedness::TwoSided,
        }
    }
}

/// Runs one detection method on a source/target pair.
pub fn run_method(method: Method, source: &SampleSet, target: &SampleSet, params: &TestParams, seed: u64) -> Result<TestReport> {
    let perm = PermutationConfig {
        permutations: params.permutations,
        sigma_noise: params.sigma_noise,
        alpha: params.alpha,
        seed,
    };
    match method {
        Method::HalfKfnPermutation => permutation_test(source, target, params.k, &perm),
        Method::HalfKfnBootstrap => bootstrap_test(
            source,
            target,
            &BootstrapConfig {
                resamples: params.resamples,
                k: params.k,
                alpha: params.alpha,
                seed,
                sidedness: params.sidedness,
            },
        ),
        Method::Baseline(kind) => baseline_test(&PooledSample::new(source, target)?, kind, params.k, &perm),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n1: usize,
    pub n2: usize,
    pub delta: f64,
    pub sigma_gn: f64,
    pub methods: Vec<Method>,
    pub runs: usize,
    pub master_seed: u64,
    pub params: TestParams,
    pub training: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n1: 500,
            n2: 500,
            delta: 0.0,
            sigma_gn: 20.0,
            methods: Method::ALL.to_vec(),
            runs: 100,
            master_seed: 0,
            params: TestParams::default(),
            training: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods configured".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.n1 == 0 || self.n2 == 0 {
            return Err(Error::Config("n1 and n2 must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!("delta must lie in [0, 1], got {}", self.delta)));
        }
        if !(self.sigma_gn > 0.0 && self.sigma_gn.is_finite()) {
            return Err(Error::Config("sigma_gn must be positive".into()));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive independent seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, run: u64, purpose: u64) -> u64 {
    mix(mix(mix(master) ^ run) ^ purpose)
}

fn uniform_block_row(rng: &mut impl Rng, offset: f64) -> Vec<f64> {
    (0..FEATURE_DIM).map(|_| offset + rng.random::<f64>()).collect()
}

/// 6000 labelled training rows: 2000 per class, class `c` uniform on
/// `[a_c, a_c + 1]^5` with `a = (1, 5, 10)`. Labels are `0, 1, 2`.
pub fn generate_simulated_training(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = replicate_rng(seed, 0);
    let mut features = Vec::with_capacity(3 * SAMPLES_PER_CLASS);
    let mut labels = Vec::with_capacity(3 * SAMPLES_PER_CLASS);
    for (class, &offset) in BLOCK_OFFSETS.iter().enumerate() {
        for _ in 0..SAMPLES_PER_CLASS {
            features.push(uniform_block_row(&mut rng, offset));
            labels.push(class);
        }
    }
    (features, labels)
}

/// Two unlabeled samples from the undrifted mixture (each row picks one of
/// the three blocks with probability 1/3).
pub fn generate_test_split(seed: u64, n1: usize, n2: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    if n1 + n2 > TEST_POOL_BUDGET {
        warn!("n1 + n2 = {} exceeds the test pool budget of {TEST_POOL_BUDGET}", n1 + n2);
    }
    let mut rng = replicate_rng(seed, 0);
    let mut draw = |m: usize| -> Vec<Vec<f64>> {
        (0..m)
            .map(|_| {
                let offset = BLOCK_OFFSETS[rng.random_range(0..BLOCK_OFFSETS.len())];
                uniform_block_row(&mut rng, offset)
            })
            .collect()
    };
    let control = draw(n1);
    let candidate = draw(n2);
    (control, candidate)
}

/// Number of rows perturbed for drift proportion `delta` (ties to even).
pub fn drift_count(delta: f64, n: usize) -> usize {
    (delta * n as f64).round_ties_even() as usize
}

/// Adds `N(0, sigma_gn^2)` noise to every coordinate of `drift_count(delta, n)`
/// rows chosen uniformly without replacement.
pub fn inject_gaussian_drift(candidate: &[Vec<f64>], delta: f64, sigma_gn: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidInput(format!("delta must lie in [0, 1], got {delta}")));
    }
    let noise = Normal::new(0.0, sigma_gn).map_err(|e| Error::InvalidInput(format!("sigma_gn: {e}")))?;
    let mut out = candidate.to_vec();
    let count = drift_count(delta, out.len());
    let mut rng = replicate_rng(seed, 0);
    let mut chosen = index::sample(&mut rng, out.len(), count).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        for x in &mut out[i] {
            *x += noise.sample(&mut rng);
        }
    }
    Ok(out)
}

/// Trains the reducer on the simulated training data.
pub fn train_simulated_reducer(cfg: &TrainConfig) -> Result<ReducerModel> {
    let (features, labels) = generate_simulated_training(cfg.seed);
    train_reducer(&features, &labels, cfg)
}

/// Reduced source and target samples for run `run` of `cfg`.
pub fn simulate_run(cfg: &ExperimentConfig, model: &ReducerModel, run: u64) -> Result<(SampleSet, SampleSet)> {
    let (control, candidate) = generate_test_split(derive_seed(cfg.master_seed, run, 1), cfg.n1, cfg.n2);
    let drifted = inject_gaussian_drift(&candidate, cfg.delta, cfg.sigma_gn, derive_seed(cfg.master_seed, run, 2))?;
    Ok((
        model.reduce(&control, Origin::Source)?,
        model.reduce(&drifted, Origin::Target)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub method: Method,
    pub delta: f64,
    pub n1: usize,
    pub n2: usize,
    pub rejection_rate: f64,
    pub mean_p: f64,
    pub sd_p: f64,
    pub mean_elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub n1: usize,
    pub n2: usize,
    pub permutation_s: f64,
    pub bootstrap_s: f64,
    /// `permutation_s / bootstrap_s`.
    pub ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub rows: Vec<PowerRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub timing: Vec<TimingRow>,
    pub metadata: serde_json::Value,
}

pub const POWER_CSV_HEADER: &str = "method,delta,n1,n2,rejection_rate,mean_p,sd_p,mean_elapsed_s";

impl PowerReport {
    pub fn row(&self, method: Method, delta: f64, n1: usize) -> Option<&PowerRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.delta == delta && r.n1 == n1)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let mut body = String::new();
        body.push_str(POWER_CSV_HEADER);
        body.push('\n');
        for r in &self.rows {
            body.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.method, r.delta, r.n1, r.n2, r.rejection_rate, r.mean_p, r.sd_p, r.mean_elapsed_s
            ));
        }
        out.write_all(body.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn write_timing_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut body = String::from("n1,n2,permutation_s,bootstrap_s,ratio\n");
        for t in &self.timing {
            body.push_str(&format!(
                "{},{},{},{},{}\n",
                t.n1, t.n2, t.permutation_s, t.bootstrap_s, t.ratio
            ));
        }
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn merge(&mut self, other: PowerReport) {
        self.rows.extend(other.rows);
        self.timing.extend(other.timing);
    }
}

fn summarize(method: Method, cfg: &ExperimentConfig, reports: &[TestReport]) -> PowerRow {
    let runs = reports.len() as f64;
    let rejections = reports.iter().filter(|r| r.decision.is_drift()).count();
    let mean_p = reports.iter().map(|r| r.p_value).sum::<f64>() / runs;
    let sd_p = if reports.len() > 1 {
        (reports.iter().map(|r| (r.p_value - mean_p).powi(2)).sum::<f64>() / (runs - 1.0)).sqrt()
    } else {
        0.0
    };
    PowerRow {
        method,
        delta: cfg.delta,
        n1: cfg.n1,
        n2: cfg.n2,
        rejection_rate: rejections as f64 / runs,
        mean_p,
        sd_p,
        mean_elapsed_s: reports.iter().map(|r| r.elapsed_s).sum::<f64>() / runs,
    }
}

/// Runs every configured method on `cfg.runs` independent simulated splits,
/// reusing one trained reducer, and returns the per-method reports in run
/// order.
pub fn collect_reports(cfg: &ExperimentConfig, model: &ReducerModel) -> Result<Vec<(Method, Vec<TestReport>)>> {
    cfg.validate()?;
    let mut per_method: Vec<(Method, Vec<TestReport>)> =
        cfg.methods.iter().map(|&m| (m, Vec::with_capacity(cfg.runs))).collect();
    for run in 0..cfg.runs as u64 {
        let (source, target) = simulate_run(cfg, model, run)?;
        let seed = derive_seed(cfg.master_seed, run, 3);
        for (method, reports) in &mut per_method {
            reports.push(run_method(*method, &source, &target, &cfg.params, seed)?);
        }
    }
    Ok(per_method)
}

fn metadata(cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::json!({
        "runs": cfg.runs,
        "sigma_gn": cfg.sigma_gn,
        "master_seed": cfg.master_seed,
        "params": cfg.params,
        "training": cfg.training,
        "note": "timings use this tool's permutation and resample counts, which may differ from other published setups",
    })
}

/// Power / Type-I error study for one `(n1, n2, delta)` cell with a given
/// reducer.
pub fn run_power_study_with_model(cfg: &ExperimentConfig, model: &ReducerModel) -> Result<PowerReport> {
    let rows = collect_reports(cfg, model)?
        .iter()
        .map(|(m, reports)| summarize(*m, cfg, reports))
        .collect();
    Ok(PowerReport {
        rows,
        timing: Vec::new(),
        metadata: metadata(cfg),
    })
}

/// Power / Type-I error study; trains the reducer once from `cfg.training`.
pub fn run_power_study(cfg: &ExperimentConfig) -> Result<PowerReport> {
    cfg.validate()?;
    let model = train_simulated_reducer(&cfg.training)?;
    run_power_study_with_model(cfg, &model)
}

/// Power study whose report also carries the permutation / bootstrap
/// single-run time ratio. Runs are executed serially.
pub fn run_timing_benchmark_with_model(cfg: &ExperimentConfig, model: &ReducerModel) -> Result<PowerReport> {
    let mut report = run_power_study_with_model(cfg, model)?;
    let time = |m: Method| report.row(m, cfg.delta, cfg.n1).map(|r| r.mean_elapsed_s);
    if let (Some(permutation_s), Some(bootstrap_s)) = (time(Method::HalfKfnPermutation), time(Method::HalfKfnBootstrap)) {
        report.timing.push(TimingRow {
            n1: cfg.n1,
            n2: cfg.n2,
            permutation_s,
            bootstrap_s,
            ratio: permutation_s / bootstrap_s,
        });
    }
    Ok(report)
}

pub fn run_timing_benchmark(cfg: &ExperimentConfig) -> Result<PowerReport> {
    cfg.validate()?;
    let model = train_simulated_reducer(&cfg.training)?;
    run_timing_benchmark_with_model(cfg, &model)
}

/// Grid of sample sizes (`n1 = n2`) and drift proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub sizes: Vec<usize>,
    pub deltas: Vec<f64>,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            sizes: vec![100, 200, 500, 1000],
            deltas: vec![0.0, 0.01, 0.05],
        }
    }
}

/// Runs `base` at every `(size, delta)` of `sweep` with one shared reducer.
/// With `timing` set, each size also gets a [`TimingRow`].
pub fn run_sweep(base: &ExperimentConfig, sweep: &Sweep, timing: bool) -> Result<PowerReport> {
    if sweep.sizes.is_empty() || sweep.deltas.is_empty() {
        return Err(Error::Config("sweep needs at least one size and one delta".into()));
    }
    base.validate()?;
    let model = train_simulated_reducer(&base.training)?;
    let mut report = PowerReport {
        metadata: metadata(base),
        ..PowerReport::default()
    };
    for &n in &sweep.sizes {
        for &delta in &sweep.deltas {
            let cfg = ExperimentConfig {
                n1: n,
                n2: n,
                delta,
                ..base.clone()
            };
            let cell = if timing {
                run_timing_benchmark_with_model(&cfg, &model)?
            } else {
                run_power_study_with_model(&cfg, &model)?
            };
            report.merge(cell);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn training_blocks() {
        let (x, y) = generate_simulated_training(4);
        assert_eq!(x.len(), 6000);
        assert_eq!(y.len(), 6000);
        for (class, range) in [(0usize, (1.4, 1.6)), (1, (5.4, 5.6)), (2, (10.4, 10.6))] {
            let rows: Vec<&Vec<f64>> = x.iter().zip(&y).filter(|(_, &l)| l == class).map(|(r, _)| r).collect();
            assert_eq!(rows.len(), 2000);
            for c in 0..FEATURE_DIM {
                let m = rows.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64;
                assert!(m > range.0 && m < range.1, "class {class} coord {c} mean {m}");
            }
        }
        let max0 = x[..2000].iter().flatten().copied().fold(f64::MIN, f64::max);
        let min1 = x[2000..4000].iter().flatten().copied().fold(f64::MAX, f64::min);
        assert!(max0 < min1);
        assert_eq!(generate_simulated_training(4), (x, y));
    }

    #[test]
    fn test_split_mixture() {
        let (a, b) = generate_test_split(8, 100, 100);
        assert_eq!((a.len(), b.len()), (100, 100));
        let counts = a.iter().chain(&b).fold([0usize; 3], |mut acc, r| {
            let block = BLOCK_OFFSETS.iter().position(|&o| r[0] >= o && r[0] <= o + 1.0).unwrap();
            assert!(r.iter().all(|&v| v >= BLOCK_OFFSETS[block] && v <= BLOCK_OFFSETS[block] + 1.0));
            acc[block] += 1;
            acc
        });
        // binomial(200, 1/3) sd is about 6.7
        assert!(counts.iter().all(|&c| (c as f64 - 200.0 / 3.0).abs() < 25.0), "{counts:?}");
        assert_eq!(generate_test_split(8, 100, 100), (a, b));
    }

    #[test]
    fn drift_touches_exact_rows() {
        let (_, cand) = generate_test_split(1, 10, 100);
        assert_eq!(inject_gaussian_drift(&cand, 0.0, 20.0, 5).unwrap(), cand);
        let drifted = inject_gaussian_drift(&cand, 0.05, 20.0, 5).unwrap();
        let changed = cand.iter().zip(&drifted).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 5);
        assert!(inject_gaussian_drift(&cand, 1.5, 20.0, 5).is_err());
    }

    #[test]
    fn drift_count_rounds_half_to_even() {
        assert_eq!(drift_count(0.05, 100), 5);
        assert_eq!(drift_count(0.01, 250), 2);
        assert_eq!(drift_count(0.01, 350), 4);
        assert_eq!(drift_count(0.0, 1000), 0);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!(matches!("smooth_knn".parse::<Method>(), Err(Error::Config(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.methods.clear();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            runs: 0,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
