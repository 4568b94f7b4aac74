//! Synthetic long-tailed partially-labeled datasets.
//!
//! Two worlds are available: the four-quadrant 2D toy world and a
//! gaussian-cluster world that scales to arbitrary class counts. Generation
//! is a pure function of the config (seed included): the same config yields
//! byte-identical datasets.
//!
//! Ground-truth labels live in the dataset but are only reachable through
//! [`PartialDataset::oracle_labels`]; training code receives a [`TrainView`]
//! that carries features and candidate masks only.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Bitmask over the class space; always contains the hidden true label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    num_classes: usize,
    words: Vec<u64>,
}

impl CandidateSet {
    pub fn empty(num_classes: usize) -> Self {
        Self {
            num_classes,
            words: vec![0; num_classes.div_ceil(64)],
        }
    }

    pub fn from_members<I: IntoIterator<Item = usize>>(num_classes: usize, members: I) -> Self {
        let mut s = Self::empty(num_classes);
        for m in members {
            s.insert(m);
        }
        s
    }

    pub fn insert(&mut self, class: usize) {
        assert!(class < self.num_classes);
        self.words[class / 64] |= 1 << (class % 64);
    }

    #[inline]
    pub fn contains(&self, class: usize) -> bool {
        class < self.num_classes && self.words[class / 64] >> (class % 64) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Member classes in ascending order.
    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_classes).filter(|&c| self.contains(c))
    }

    /// Non-member classes in ascending order.
    pub fn non_members(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_classes).filter(|&c| !self.contains(c))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum World {
    Toy2d,
    GaussianClusters,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CandidateMode {
    /// Every negative label flips into the candidate set with probability `q`.
    Uniform { q: f64 },
    /// Negatives sharing the true label's superclass flip with probability
    /// `8q`, others with `q`.
    NonUniform { q: f64, superclass_map: Vec<usize> },
}

impl CandidateMode {
    pub fn q(&self) -> f64 {
        match self {
            CandidateMode::Uniform { q } | CandidateMode::NonUniform { q, .. } => *q,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub world: World,
    pub num_classes: usize,
    pub n_max: usize,
    pub imbalance_ratio: f64,
    pub candidate_mode: CandidateMode,
    pub feature_dim: usize,
    /// Pairwise distance between class centers (gaussian world only).
    #[serde(default = "default_separation")]
    pub cluster_separation: f64,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_separation() -> f64 {
    3.0
}

fn default_test_per_class() -> usize {
    100
}

/// Per-class share of `n_max` in the toy world; reproduces the 1000/500/100/30
/// split at the default `n_max = 1000`.
const TOY_COUNT_RATIOS: [f64; 4] = [1.0, 0.5, 0.1, 0.03];

impl GeneratorConfig {
    /// The four-quadrant 2D world with its reference settings: counts
    /// 1000/500/100/30, uniform flip probability 0.6, 100 test samples per
    /// class.
    pub fn toy2d(seed: u64) -> Self {
        Self {
            world: World::Toy2d,
            num_classes: 4,
            n_max: 1000,
            imbalance_ratio: 1000.0 / 30.0,
            candidate_mode: CandidateMode::Uniform { q: 0.6 },
            feature_dim: 2,
            cluster_separation: default_separation(),
            test_per_class: default_test_per_class(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Validation("num_classes must be >= 1".into()));
        }
        if self.imbalance_ratio < 1.0 {
            return Err(Error::Validation("imbalance_ratio must be >= 1".into()));
        }
        if self.n_max == 0 {
            return Err(Error::Validation("n_max must be positive".into()));
        }
        if self.test_per_class == 0 {
            return Err(Error::Validation("test_per_class must be positive".into()));
        }
        let q = self.candidate_mode.q();
        if !(0.0..1.0).contains(&q) {
            return Err(Error::Validation("q must lie in [0,1)".into()));
        }
        if let CandidateMode::NonUniform { q, superclass_map } = &self.candidate_mode {
            if 8.0 * q >= 1.0 {
                return Err(Error::Validation(
                    "non-uniform mode requires 8q < 1 (small ambiguity degree)".into(),
                ));
            }
            if superclass_map.len() != self.num_classes {
                return Err(Error::Validation(
                    "superclass_map must cover all classes".into(),
                ));
            }
        }
        match self.world {
            World::Toy2d => {
                if self.num_classes != 4 {
                    return Err(Error::Validation("toy2d world requires exactly 4 classes".into()));
                }
                if self.feature_dim != 2 {
                    return Err(Error::Validation("toy2d world requires feature_dim = 2".into()));
                }
            }
            World::GaussianClusters => {
                if self.feature_dim < self.num_classes {
                    return Err(Error::Validation(
                        "gaussian world places centers on scaled basis vectors; feature_dim must be >= num_classes".into(),
                    ));
                }
                if self.cluster_separation <= 0.0 {
                    return Err(Error::Validation("cluster_separation must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// Training set: features, candidate masks, hidden labels, and generator
/// metadata. Counts are nonincreasing in class index.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialDataset {
    features: Mat,
    candidates: Vec<CandidateSet>,
    oracle: Vec<usize>,
    counts: Vec<usize>,
    eta: f64,
    meta: GeneratorConfig,
}

/// The slice of a dataset that the learner is allowed to see.
#[derive(Clone, Copy, Debug)]
pub struct TrainView<'a> {
    pub features: &'a Mat,
    pub candidates: &'a [CandidateSet],
}

impl<'a> TrainView<'a> {
    pub fn num_samples(&self) -> usize {
        self.features.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.candidates.first().map_or(0, CandidateSet::num_classes)
    }
}

impl PartialDataset {
    pub fn num_samples(&self) -> usize {
        self.features.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn candidates(&self) -> &[CandidateSet] {
        &self.candidates
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Analytic ambiguity degree of the generating process.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn meta(&self) -> &GeneratorConfig {
        &self.meta
    }

    /// Candidate-only view for the training path.
    pub fn train_view(&self) -> TrainView<'_> {
        TrainView {
            features: &self.features,
            candidates: &self.candidates,
        }
    }

    /// Hidden ground-truth labels. Harness/eval use only; strategy code must
    /// go through [`TrainView`], which cannot reach these.
    pub fn oracle_labels(&self) -> &[usize] {
        &self.oracle
    }
}

/// Balanced labeled test split.
#[derive(Clone, Debug, PartialEq)]
pub struct TestSet {
    pub features: Mat,
    pub labels: Vec<usize>,
}

impl TestSet {
    pub fn num_samples(&self) -> usize {
        self.features.rows()
    }
}

/// Exponential-decay class sizes: `counts[c] = round(n_max * rho^(-c/(C-1)))`,
/// round half up.
pub fn longtail_counts(num_classes: usize, n_max: usize, rho: f64) -> Result<Vec<usize>> {
    if num_classes < 2 {
        return Err(Error::Validation("longtail_counts requires C >= 2".into()));
    }
    if rho < 1.0 || (n_max as f64) < rho {
        return Err(Error::Validation("need n_max >= rho >= 1".into()));
    }
    let mut counts = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let expo = -(c as f64) / (num_classes as f64 - 1.0);
        let raw = n_max as f64 * rho.powf(expo);
        let rounded = (raw + 0.5).floor();
        if rounded < 1.0 {
            return Err(Error::Validation(format!(
                "class {c} would be empty (count rounds to 0)"
            )));
        }
        counts.push(rounded as usize);
    }
    Ok(counts)
}

fn toy_counts(n_max: usize) -> Result<Vec<usize>> {
    let mut counts = Vec::with_capacity(4);
    for ratio in TOY_COUNT_RATIOS {
        let rounded = (n_max as f64 * ratio + 0.5).floor();
        if rounded < 1.0 {
            return Err(Error::Validation("toy2d class would be empty; raise n_max".into()));
        }
        counts.push(rounded as usize);
    }
    Ok(counts)
}

/// Per-class counts a config will generate, without sampling anything.
pub fn planned_counts(cfg: &GeneratorConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    match cfg.world {
        World::Toy2d => toy_counts(cfg.n_max),
        World::GaussianClusters => {
            if cfg.num_classes == 1 {
                Ok(vec![cfg.n_max])
            } else {
                longtail_counts(cfg.num_classes, cfg.n_max, cfg.imbalance_ratio)
            }
        }
    }
}

/// Draws one candidate mask for true label `y`: `y` always included, each
/// negative flipped in independently per the candidate mode.
pub fn gen_candidates(y: usize, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> CandidateSet {
    let c = cfg.num_classes;
    debug_assert!(y < c);
    let mut mask = CandidateSet::empty(c);
    mask.insert(y);
    for j in 0..c {
        if j == y {
            continue;
        }
        let p = match &cfg.candidate_mode {
            CandidateMode::Uniform { q } => *q,
            CandidateMode::NonUniform { q, superclass_map } => {
                if superclass_map[j] == superclass_map[y] {
                    8.0 * q
                } else {
                    *q
                }
            }
        };
        // one draw per negative, consumed unconditionally to pin the stream
        let u: f64 = rng.random();
        if u < p {
            mask.insert(j);
        }
    }
    mask
}

/// Supremum over wrong labels of the flip-in probability. Vacuously zero for
/// a single-class world.
pub fn analytic_ambiguity(cfg: &GeneratorConfig) -> Result<f64> {
    cfg.validate()?;
    if cfg.num_classes == 1 {
        return Ok(0.0);
    }
    let eta = match &cfg.candidate_mode {
        CandidateMode::Uniform { q } => *q,
        CandidateMode::NonUniform { q, .. } => 8.0 * q,
    };
    if eta >= 1.0 {
        return Err(Error::Validation(
            "ambiguity degree >= 1 violates the small ambiguity degree condition".into(),
        ));
    }
    Ok(eta)
}

/// Oracle class prior `counts / N`. Harness context only.
pub fn empirical_prior(ds: &PartialDataset) -> Vec<f64> {
    let n: usize = ds.counts.iter().sum();
    ds.counts.iter().map(|&c| c as f64 / n as f64).collect()
}

/// Quadrant of the toy world for each class, ordered by descending count:
/// class 0 is the 1000-sample quadrant, class 3 the 30-sample one.
const TOY_QUADRANTS: [([f64; 2], [f64; 2]); 4] = [
    ([0.0, 0.0], [1.0, 1.0]),
    ([-1.0, 0.0], [0.0, 1.0]),
    ([0.0, -1.0], [1.0, 0.0]),
    ([-1.0, -1.0], [0.0, 0.0]),
];

fn draw_feature(cfg: &GeneratorConfig, class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match cfg.world {
        World::Toy2d => {
            let (lo, hi) = TOY_QUADRANTS[class];
            (0..2)
                .map(|d| lo[d] + (hi[d] - lo[d]) * rng.random::<f64>())
                .collect()
        }
        World::GaussianClusters => {
            // center = (sep / sqrt(2)) * e_class, unit-variance isotropic noise
            let scale = cfg.cluster_separation / std::f64::consts::SQRT_2;
            (0..cfg.feature_dim)
                .map(|d| {
                    let center = if d == class { scale } else { 0.0 };
                    center + crate::numeric::standard_normal(rng)
                })
                .collect()
        }
    }
}

/// Generates the long-tailed partial-label train split and the balanced
/// labeled test split.
pub fn synth_dataset(cfg: &GeneratorConfig) -> Result<(PartialDataset, TestSet)> {
    cfg.validate()?;
    let eta = analytic_ambiguity(cfg)?;
    let counts = planned_counts(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n: usize = counts.iter().sum();

    // train features, class-major order
    let mut features = Mat::zeros(n, cfg.feature_dim);
    let mut oracle = Vec::with_capacity(n);
    let mut row = 0;
    for (class, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            let x = draw_feature(cfg, class, &mut rng);
            features.row_mut(row).copy_from_slice(&x);
            oracle.push(class);
            row += 1;
        }
    }

    // candidate masks
    let candidates: Vec<CandidateSet> = oracle
        .iter()
        .map(|&y| gen_candidates(y, cfg, &mut rng))
        .collect();

    // balanced test split
    let n_test = cfg.test_per_class * cfg.num_classes;
    let mut test_features = Mat::zeros(n_test, cfg.feature_dim);
    let mut test_labels = Vec::with_capacity(n_test);
    let mut row = 0;
    for class in 0..cfg.num_classes {
        for _ in 0..cfg.test_per_class {
            let x = draw_feature(cfg, class, &mut rng);
            test_features.row_mut(row).copy_from_slice(&x);
            test_labels.push(class);
            row += 1;
        }
    }

    // the gaussian world ships variance-normalized by train-split statistics
    // (no centering: the class-frequency signal in the feature mean is what
    // the dynamic rebalancing estimator feeds on); the toy world keeps its
    // raw [-1,1]^2 geometry
    if cfg.world == World::GaussianClusters {
        let mut var = vec![0.0; cfg.feature_dim];
        for r in 0..n {
            for (d, v) in features.row(r).iter().enumerate() {
                var[d] += v * v;
            }
        }
        let scale: Vec<f64> = var
            .iter()
            .map(|v| (v / n as f64).sqrt().max(1e-12))
            .collect();
        for r in 0..n {
            for (d, v) in features.row_mut(r).iter_mut().enumerate() {
                *v /= scale[d];
            }
        }
        for r in 0..n_test {
            for (d, v) in test_features.row_mut(r).iter_mut().enumerate() {
                *v /= scale[d];
            }
        }
    }

    let ds = PartialDataset {
        features,
        candidates,
        oracle,
        counts,
        eta,
        meta: cfg.clone(),
    };
    debug_assert!(ds
        .oracle
        .iter()
        .zip(&ds.candidates)
        .all(|(&y, s)| s.contains(y)));
    Ok((
        ds,
        TestSet {
            features: test_features,
            labels: test_labels,
        },
    ))
}

// ---------------------------------------------------------------------------
// File formats: train JSONL, meta sidecar JSON, test JSONL.

#[derive(Serialize, Deserialize)]
struct TrainRecord {
    id: usize,
    x: Vec<f64>,
    cands: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TestRecord {
    id: usize,
    x: Vec<f64>,
    y: usize,
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    #[serde(rename = "C")]
    c: usize,
    counts: Vec<usize>,
    eta: f64,
    cfg: GeneratorConfig,
    oracle_labels: Vec<usize>,
}

pub const TRAIN_FILE: &str = "train.jsonl";
pub const META_FILE: &str = "meta.json";
pub const TEST_FILE: &str = "test.jsonl";

/// Writes `train.jsonl`, `meta.json` (the harness-only sidecar), and
/// `test.jsonl` into `dir`.
pub fn write_dataset(ds: &PartialDataset, test: &TestSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut train_out = String::new();
    for i in 0..ds.num_samples() {
        let rec = TrainRecord {
            id: i,
            x: ds.features.row(i).to_vec(),
            cands: ds.candidates[i].members().collect(),
        };
        writeln!(train_out, "{}", serde_json::to_string(&rec)?)
            .expect("string write cannot fail");
    }
    fs::File::create(dir.join(TRAIN_FILE))?.write_all(train_out.as_bytes())?;

    let meta = MetaFile {
        c: ds.num_classes(),
        counts: ds.counts.clone(),
        eta: ds.eta,
        cfg: ds.meta.clone(),
        oracle_labels: ds.oracle.clone(),
    };
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)?)?;

    let mut test_out = String::new();
    for i in 0..test.num_samples() {
        let rec = TestRecord {
            id: i,
            x: test.features.row(i).to_vec(),
            y: test.labels[i],
        };
        writeln!(test_out, "{}", serde_json::to_string(&rec)?).expect("string write cannot fail");
    }
    fs::File::create(dir.join(TEST_FILE))?.write_all(test_out.as_bytes())?;
    Ok(())
}

/// Loads a dataset directory written by [`write_dataset`].
pub fn load_dataset(dir: &Path) -> Result<(PartialDataset, TestSet)> {
    let meta: MetaFile = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
    let c = meta.c;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut candidates = Vec::new();
    for line in BufReader::new(fs::File::open(dir.join(TRAIN_FILE))?).lines() {
        let rec: TrainRecord = serde_json::from_str(&line?)?;
        if rec.id != rows.len() {
            return Err(Error::Validation("train records out of order".into()));
        }
        rows.push(rec.x);
        candidates.push(CandidateSet::from_members(c, rec.cands));
    }
    let features = Mat::from_rows(&rows)?;
    if meta.oracle_labels.len() != features.rows() {
        return Err(Error::Validation("oracle label count mismatch".into()));
    }
    for (y, s) in meta.oracle_labels.iter().zip(&candidates) {
        if !s.contains(*y) {
            return Err(Error::Validation(
                "candidate set missing its oracle label".into(),
            ));
        }
    }
    if meta.counts.iter().sum::<usize>() != features.rows() {
        return Err(Error::Validation("class counts do not sum to N".into()));
    }
    if meta.counts.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Validation("class counts must be nonincreasing".into()));
    }

    let test = load_test_jsonl(&dir.join(TEST_FILE))?;

    Ok((
        PartialDataset {
            features,
            candidates,
            oracle: meta.oracle_labels,
            counts: meta.counts,
            eta: meta.eta,
            meta: meta.cfg,
        },
        test,
    ))
}

/// Loads a standalone balanced test split (`{"id","x","y"}` JSONL).
pub fn load_test_jsonl(path: &Path) -> Result<TestSet> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for line in BufReader::new(fs::File::open(path)?).lines() {
        let rec: TestRecord = serde_json::from_str(&line?)?;
        rows.push(rec.x);
        labels.push(rec.y);
    }
    if rows.is_empty() {
        return Err(Error::Validation("empty test file".into()));
    }
    Ok(TestSet {
        features: Mat::from_rows(&rows)?,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_cfg(c: usize, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            world: World::GaussianClusters,
            num_classes: c,
            n_max: 50,
            imbalance_ratio: 10.0,
            candidate_mode: CandidateMode::Uniform { q: 0.1 },
            feature_dim: c.max(2),
            cluster_separation: 3.0,
            test_per_class: 5,
            seed,
        }
    }

    #[test]
    fn longtail_counts_match_direct_formula() {
        let counts = longtail_counts(10, 1000, 100.0).unwrap();
        assert_eq!(counts, vec![1000, 599, 359, 215, 129, 77, 46, 28, 17, 10]);
    }

    #[test]
    fn longtail_counts_flat_when_rho_is_one() {
        assert_eq!(longtail_counts(5, 42, 1.0).unwrap(), vec![42; 5]);
    }

    #[test]
    fn longtail_counts_two_class_edge() {
        assert_eq!(longtail_counts(2, 100, 50.0).unwrap(), vec![100, 2]);
    }

    #[test]
    fn longtail_counts_rejects_empty_class() {
        // n_max/rho rounds below 1
        assert!(longtail_counts(3, 10, 25.0).is_err());
    }

    #[test]
    fn toy_world_matches_reference_counts() {
        let (ds, test) = synth_dataset(&GeneratorConfig::toy2d(1)).unwrap();
        assert_eq!(ds.counts(), &[1000, 500, 100, 30]);
        assert_eq!(ds.num_samples(), 1630);
        assert_eq!(test.num_samples(), 400);
        assert!((ds.eta() - 0.6).abs() < 1e-15);
        // raw quadrant geometry survives
        assert!(ds.features().data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn toy_world_rejects_other_class_counts() {
        let mut cfg = GeneratorConfig::toy2d(1);
        cfg.num_classes = 5;
        assert!(matches!(synth_dataset(&cfg), Err(Error::Validation(_))));
    }

    #[test]
    fn single_class_world_has_vacuous_candidates() {
        let mut cfg = gaussian_cfg(1, 3);
        cfg.imbalance_ratio = 1.0;
        cfg.feature_dim = 2;
        let (ds, _) = synth_dataset(&cfg).unwrap();
        assert!(ds.candidates().iter().all(|s| s.len() == 1 && s.contains(0)));
        assert_eq!(ds.eta(), 0.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = GeneratorConfig {
            world: World::GaussianClusters,
            num_classes: 20,
            n_max: 500,
            imbalance_ratio: 50.0,
            candidate_mode: CandidateMode::Uniform { q: 0.05 },
            feature_dim: 20,
            cluster_separation: 3.0,
            test_per_class: 20,
            seed: 7,
        };
        let (a, at) = synth_dataset(&cfg).unwrap();
        let (b, bt) = synth_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(at, bt);
    }

    #[test]
    fn oracle_label_always_in_candidates() {
        let (ds, _) = synth_dataset(&GeneratorConfig::toy2d(11)).unwrap();
        for (y, s) in ds.oracle_labels().iter().zip(ds.candidates()) {
            assert!(s.contains(*y));
            assert!(!s.is_empty());
        }
    }

    #[test]
    fn q_zero_gives_singleton_sets() {
        let mut cfg = gaussian_cfg(6, 5);
        cfg.candidate_mode = CandidateMode::Uniform { q: 0.0 };
        let (ds, _) = synth_dataset(&cfg).unwrap();
        for (y, s) in ds.oracle_labels().iter().zip(ds.candidates()) {
            assert_eq!(s.len(), 1);
            assert!(s.contains(*y));
        }
    }

    #[test]
    fn mean_candidate_size_matches_binomial_expectation() {
        // E|S| = 1 + 99 * 0.05 = 5.95 over 1e5 trials
        let cfg = GeneratorConfig {
            world: World::GaussianClusters,
            num_classes: 100,
            n_max: 10,
            imbalance_ratio: 1.0,
            candidate_mode: CandidateMode::Uniform { q: 0.05 },
            feature_dim: 100,
            cluster_separation: 3.0,
            test_per_class: 1,
            seed: 99,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(424242);
        let trials = 100_000;
        let mut total = 0usize;
        for t in 0..trials {
            total += gen_candidates(t % 100, &cfg, &mut rng).len();
        }
        let mean = total as f64 / trials as f64;
        assert!((5.90..=6.00).contains(&mean), "mean |S| = {mean}");
    }

    #[test]
    fn nonuniform_superclass_flip_rate() {
        // same-superclass negatives flip at 8q = 0.24 within a wide MC margin
        let cfg = GeneratorConfig {
            world: World::GaussianClusters,
            num_classes: 10,
            n_max: 10,
            imbalance_ratio: 1.0,
            candidate_mode: CandidateMode::NonUniform {
                q: 0.03,
                superclass_map: vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1],
            },
            feature_dim: 10,
            cluster_separation: 3.0,
            test_per_class: 1,
            seed: 17,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 100_000usize;
        let mut same_hits = 0usize;
        let mut same_draws = 0usize;
        for _ in 0..trials {
            let mask = gen_candidates(0, &cfg, &mut rng);
            for j in 1..5 {
                same_draws += 1;
                if mask.contains(j) {
                    same_hits += 1;
                }
            }
        }
        let rate = same_hits as f64 / same_draws as f64;
        let p = 0.24;
        let ci = 2.576 * (p * (1.0 - p) / same_draws as f64).sqrt();
        assert!(
            (rate - p).abs() <= ci,
            "same-superclass rate {rate} outside {p} +- {ci}"
        );
    }

    #[test]
    fn ambiguity_values() {
        let mut cfg = gaussian_cfg(4, 0);
        cfg.candidate_mode = CandidateMode::Uniform { q: 0.5 };
        assert!((analytic_ambiguity(&cfg).unwrap() - 0.5).abs() < 1e-15);
        cfg.candidate_mode = CandidateMode::NonUniform {
            q: 0.05,
            superclass_map: vec![0, 0, 1, 1],
        };
        assert!((analytic_ambiguity(&cfg).unwrap() - 0.4).abs() < 1e-15);
        assert!((analytic_ambiguity(&GeneratorConfig::toy2d(0)).unwrap() - 0.6).abs() < 1e-15);
        // 8q >= 1 violates the small ambiguity degree condition
        cfg.candidate_mode = CandidateMode::NonUniform {
            q: 0.2,
            superclass_map: vec![0, 0, 1, 1],
        };
        assert!(analytic_ambiguity(&cfg).is_err());
    }

    #[test]
    fn empirical_prior_matches_counts() {
        let (ds, _) = synth_dataset(&GeneratorConfig::toy2d(2)).unwrap();
        let prior = empirical_prior(&ds);
        let expect = [1000.0, 500.0, 100.0, 30.0].map(|c| c / 1630.0);
        for (p, e) in prior.iter().zip(&expect) {
            assert!((p - e).abs() < 1e-15);
        }
        assert!((prior.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn imbalance_ratio_recovered_within_rounding() {
        let counts = longtail_counts(20, 500, 50.0).unwrap();
        let realized = counts[0] as f64 / counts[19] as f64;
        assert_eq!(counts[0], 500);
        assert!((counts[19] as i64 - 10).abs() <= 1);
        assert!((realized - 50.0).abs() <= 50.0 * 0.1);
    }

    #[test]
    fn files_round_trip_and_are_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = gaussian_cfg(4, 21);
        let (ds, test) = synth_dataset(&cfg).unwrap();
        write_dataset(&ds, &test, dir.path()).unwrap();
        let first = std::fs::read(dir.path().join(TRAIN_FILE)).unwrap();
        let (ds2, test2) = load_dataset(dir.path()).unwrap();
        assert_eq!(ds, ds2);
        assert_eq!(test, test2);
        write_dataset(&ds2, &test2, dir.path()).unwrap();
        let second = std::fs::read(dir.path().join(TRAIN_FILE)).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn gaussian_features_are_scale_normalized() {
        // unit second moment per dimension; the mean keeps its head-ward
        // frequency signal
        let cfg = gaussian_cfg(5, 13);
        let (ds, _) = synth_dataset(&cfg).unwrap();
        let n = ds.num_samples() as f64;
        for d in 0..ds.feature_dim() {
            let second: f64 = (0..ds.num_samples())
                .map(|r| ds.features().get(r, d).powi(2))
                .sum::<f64>()
                / n;
            assert!((second - 1.0).abs() < 1e-8, "dim {d} second moment {second}");
        }
        let mean0: f64 = (0..ds.num_samples())
            .map(|r| ds.features().get(r, 0))
            .sum::<f64>()
            / n;
        assert!(mean0 > 0.1, "head dimension keeps a positive mean, got {mean0}");
    }
}
