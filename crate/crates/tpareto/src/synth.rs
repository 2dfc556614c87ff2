//! Deterministic generator of labeled multimodal instances, with a
//! Monte-Carlo oracle for the best achievable accuracy.
//!
//! Each sample draws a latent binary label and, per modality, emits vectors
//! `ρ_m · s · μ_m + σ · ε` where `μ_m` is a fixed unit direction, `ε` is
//! standard Gaussian noise, and `s` is the label sign — except that with
//! probability `conflict_rate` one uniformly chosen modality flips to the
//! anti-label sign. The flip is what induces gradient conflict between the
//! fusion levels during training.
//!
//! Randomness comes from ChaCha8 streams: the dataset seed picks the key,
//! dataset-level draws use stream 0, sample `i` uses stream `i + 1`, and
//! oracle sample `i` uses stream `2³² + i`. Parallel and sequential
//! generation therefore produce bit-identical output, and re-runs are
//! bit-identical regardless of thread count. (The Gaussian sampler's rare
//! tail path calls the platform's `ln`, so byte equality across different
//! libm implementations holds only as far as theirs does.)

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::error::{Error, Result};
use crate::model::ModalityEmbeddings;
use crate::par;
use crate::tensor::Tensor;

const ORACLE_STREAM_BASE: u64 = 1 << 32;

/// Labels: 1 = fake, 0 = real.
pub const LABEL_FAKE: usize = 1;
pub const LABEL_REAL: usize = 0;

/// Per-modality informativeness in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Informativeness {
    pub text: f64,
    pub audio: f64,
    pub image: f64,
    pub extra: f64,
}

impl Informativeness {
    pub fn as_array(&self) -> [f64; 4] {
        [self.text, self.audio, self.image, self.extra]
    }
}

impl Default for Informativeness {
    fn default() -> Self {
        Self { text: 0.8, audio: 0.6, image: 0.4, extra: 0.2 }
    }
}

/// Generator configuration. The seed fully determines the output.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Feature dimension; must match the model dimension.
    pub dim: usize,
    pub rho: Informativeness,
    /// Fraction of samples where one modality carries the anti-label signal.
    pub conflict_rate: f64,
    pub noise_sigma: f64,
    pub text_len: usize,
    pub audio_len: usize,
    pub image_count: usize,
    /// Inclusive range for the number of comments per sample.
    pub comment_count: (usize, usize),
    /// Like counts are `floor(LogNormal(mean, sigma))` — heavy-tailed.
    pub like_log_mean: f64,
    pub like_log_sigma: f64,
    pub include_publisher: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_samples: 4000,
            seed: 0,
            dim: 32,
            rho: Informativeness::default(),
            conflict_rate: 0.0,
            noise_sigma: 1.0,
            text_len: 4,
            audio_len: 4,
            image_count: 2,
            comment_count: (1, 3),
            like_log_mean: 1.0,
            like_log_sigma: 1.5,
            include_publisher: true,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.dim == 0 {
            return Err(Error::InvalidConfig("n_samples and dim must be positive".into()));
        }
        for (name, r) in [
            ("rho.text", self.rho.text),
            ("rho.audio", self.rho.audio),
            ("rho.image", self.rho.image),
            ("rho.extra", self.rho.extra),
            ("conflict_rate", self.conflict_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidConfig(format!("{name} = {r} outside [0, 1]")));
            }
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("noise_sigma must be non-negative".into()));
        }
        if self.text_len == 0 || self.audio_len == 0 || self.image_count == 0 {
            return Err(Error::InvalidConfig("sequence lengths must be at least 1".into()));
        }
        if self.comment_count.0 > self.comment_count.1 {
            return Err(Error::InvalidConfig("comment count range is inverted".into()));
        }
        if self.like_log_sigma < 0.0 {
            return Err(Error::InvalidConfig("like_log_sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding; stored in dataset headers.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

/// One generated sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticInstance {
    pub embeddings: ModalityEmbeddings,
    /// 1 = fake, 0 = real.
    pub label: usize,
}

impl SyntheticInstance {
    pub fn as_pair(&self) -> (ModalityEmbeddings, usize) {
        (self.embeddings.clone(), self.label)
    }
}

/// Converts instances into the (embeddings, label) pairs the model eats.
pub fn as_pairs(data: &[SyntheticInstance]) -> Vec<(ModalityEmbeddings, usize)> {
    data.iter().map(|s| s.as_pair()).collect()
}

/// Fixed per-seed unit directions, one per modality.
fn directions(cfg: &GenConfig) -> [Vec<f64>; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    std::array::from_fn(|_| {
        let mut v: Vec<f64> = (0..cfg.dim).map(|_| normal.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // a zero draw is astronomically unlikely; fall back to a basis vector
        if n == 0.0 {
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= n);
        }
        v
    })
}

/// Labels alternate so every dataset is balanced to within one sample, and
/// every index-order split of an even prefix stays balanced.
fn label_of(index: usize) -> usize {
    if index.is_multiple_of(2) {
        LABEL_FAKE
    } else {
        LABEL_REAL
    }
}

fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-modality label signs for one sample: the label sign everywhere,
/// except one uniformly chosen modality flips with probability
/// `conflict_rate`.
fn sample_signs(rng: &mut ChaCha8Rng, label: usize, conflict_rate: f64) -> [f64; 4] {
    let y = if label == LABEL_FAKE { 1.0 } else { -1.0 };
    let mut signs = [y; 4];
    let u: f64 = rng.random();
    if u < conflict_rate {
        let m = rng.random_range(0..4usize);
        signs[m] = -y;
    }
    signs
}

#[allow(clippy::too_many_arguments)]
fn signal_rows(
    rng: &mut ChaCha8Rng,
    normal: &Normal<f64>,
    count: usize,
    dim: usize,
    rho: f64,
    sign: f64,
    mu: &[f64],
    sigma: f64,
) -> Tensor {
    let mut data = Vec::with_capacity(count * dim);
    for _ in 0..count {
        for m in &mu[..dim] {
            data.push(rho * sign * m + sigma * normal.sample(rng));
        }
    }
    Tensor { shape: vec![count, dim], data, requires_grad: false }
}

fn generate_one(cfg: &GenConfig, mu: &[Vec<f64>; 4], index: usize, stream: u64) -> SyntheticInstance {
    let mut rng = sample_rng(cfg.seed, stream);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let label = label_of(index);
    let signs = sample_signs(&mut rng, label, cfg.conflict_rate);
    let (d, sigma) = (cfg.dim, cfg.noise_sigma);

    let text = signal_rows(&mut rng, &normal, cfg.text_len, d, cfg.rho.text, signs[0], &mu[0], sigma);
    let audio =
        signal_rows(&mut rng, &normal, cfg.audio_len, d, cfg.rho.audio, signs[1], &mu[1], sigma);
    let images =
        signal_rows(&mut rng, &normal, cfg.image_count, d, cfg.rho.image, signs[2], &mu[2], sigma);

    let n_comments = rng.random_range(cfg.comment_count.0..=cfg.comment_count.1);
    let likes_dist = LogNormal::new(cfg.like_log_mean, cfg.like_log_sigma).expect("valid lognormal");
    let mut comments = Vec::with_capacity(n_comments);
    let mut like_counts = Vec::with_capacity(n_comments);
    for _ in 0..n_comments {
        comments.push(signal_rows(&mut rng, &normal, 1, d, cfg.rho.extra, signs[3], &mu[3], sigma));
        like_counts.push(likes_dist.sample(&mut rng).floor().max(0.0) as u64);
    }
    let publisher = cfg
        .include_publisher
        .then(|| signal_rows(&mut rng, &normal, 1, d, cfg.rho.extra, signs[3], &mu[3], sigma));

    SyntheticInstance {
        embeddings: ModalityEmbeddings { text, audio, images, comments, like_counts, publisher },
        label,
    }
}

/// Generates the dataset described by `cfg`. Bit-identical across runs,
/// platforms, and thread counts.
pub fn generate(cfg: &GenConfig) -> Result<Vec<SyntheticInstance>> {
    cfg.validate()?;
    let mu = directions(cfg);
    Ok(par::map_indexed(cfg.n_samples, |i| generate_one(cfg, &mu, i, i as u64 + 1)))
}

/// Sequential reference path for [`generate`]; used by the benches to
/// compare against the data-parallel path.
pub fn generate_sequential(cfg: &GenConfig) -> Result<Vec<SyntheticInstance>> {
    cfg.validate()?;
    let mu = directions(cfg);
    Ok((0..cfg.n_samples).map(|i| generate_one(cfg, &mu, i, i as u64 + 1)).collect())
}

// ── Bayes oracle ────────────────────────────────────────────────────

/// Monte-Carlo estimate of the optimal accuracy under the generative
/// model, with its standard error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub accuracy: f64,
    pub std_error: f64,
    pub n_mc: usize,
}

/// Sufficient statistics of one sample: per modality, the summed
/// projection onto the signal direction.
fn projections(cfg: &GenConfig, mu: &[Vec<f64>; 4], s: &SyntheticInstance) -> [f64; 4] {
    let d = cfg.dim;
    let proj_rows = |t: &Tensor, m: &[f64]| -> f64 {
        t.data
            .chunks_exact(d)
            .map(|row| row.iter().zip(m).map(|(x, mu)| x * mu).sum::<f64>())
            .sum()
    };
    let e = &s.embeddings;
    let mut extra_p = 0.0;
    for c in &e.comments {
        extra_p += proj_rows(c, &mu[3]);
    }
    if let Some(p) = &e.publisher {
        extra_p += proj_rows(p, &mu[3]);
    }
    [proj_rows(&e.text, &mu[0]), proj_rows(&e.audio, &mu[1]), proj_rows(&e.images, &mu[2]), extra_p]
}

fn log_sum_exp(vals: &[f64]) -> f64 {
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-likelihood ratio log P(x | fake) − log P(x | real), marginalizing
/// the conflict choice. Only the projections onto the signal directions
/// matter; everything orthogonal cancels.
fn posterior_llr(cfg: &GenConfig, q: &[f64; 4]) -> f64 {
    // q_m = ρ_m · p_m / σ², the coefficient of the sign in the log-density
    let c = cfg.conflict_rate;
    let side = |y: f64| -> f64 {
        let base: f64 = q.iter().map(|v| y * v).sum();
        let mut terms = Vec::with_capacity(5);
        if c < 1.0 {
            terms.push((1.0 - c).ln() + base);
        }
        if c > 0.0 {
            for qm in q {
                terms.push((c / 4.0).ln() + base - 2.0 * y * qm);
            }
        }
        log_sum_exp(&terms)
    };
    side(1.0) - side(-1.0)
}

fn scaled_stats(cfg: &GenConfig, mu: &[Vec<f64>; 4], s: &SyntheticInstance) -> [f64; 4] {
    // σ = 0 degenerates the densities; a tiny floor keeps the sign
    // information while staying comfortably inside f64 range
    let var = (cfg.noise_sigma * cfg.noise_sigma).max(1e-12);
    let p = projections(cfg, mu, s);
    let rho = cfg.rho.as_array();
    std::array::from_fn(|m| rho[m] * p[m] / var)
}

/// Classifies one sample with the exact posterior; 2 = correct, 1 = tie
/// (zero likelihood ratio), 0 = wrong. Integer credit keeps parallel
/// reduction exact.
fn oracle_credit(cfg: &GenConfig, mu: &[Vec<f64>; 4], s: &SyntheticInstance) -> u64 {
    let q = scaled_stats(cfg, mu, s);
    let llr = posterior_llr(cfg, &q);
    if llr == 0.0 {
        return 1;
    }
    let predicted = if llr > 0.0 { LABEL_FAKE } else { LABEL_REAL };
    if predicted == s.label {
        2
    } else {
        0
    }
}

/// Estimates the best achievable accuracy by running the exact posterior
/// classifier on `n_mc` fresh samples.
pub fn bayes_oracle(cfg: &GenConfig, n_mc: usize) -> Result<OracleEstimate> {
    cfg.validate()?;
    if n_mc == 0 {
        return Err(Error::InvalidConfig("n_mc must be positive".into()));
    }
    let mu = directions(cfg);
    let credits = par::map_indexed(n_mc, |i| {
        let sample = generate_one(cfg, &mu, i, ORACLE_STREAM_BASE + i as u64);
        oracle_credit(cfg, &mu, &sample)
    });
    let total: u64 = credits.iter().sum();
    let accuracy = total as f64 / (2.0 * n_mc as f64);
    let std_error = (accuracy * (1.0 - accuracy) / n_mc as f64).sqrt();
    Ok(OracleEstimate { accuracy, std_error, n_mc })
}

// ── Splits ──────────────────────────────────────────────────────────

/// Index-order holdout split or k-fold selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Deterministic index-order split by the given ratios.
    Ordered,
    /// `fold` is the test fold; the next fold (cyclically) is validation;
    /// the rest train. Ratios are ignored.
    KFold { k: usize, fold: usize },
}

#[derive(Debug, Clone)]
pub struct SplitSets {
    pub train: Vec<SyntheticInstance>,
    pub val: Vec<SyntheticInstance>,
    pub test: Vec<SyntheticInstance>,
}

/// Splits a dataset deterministically; the parts are disjoint and cover
/// the input.
pub fn split(
    data: &[SyntheticInstance],
    ratios: (f64, f64, f64),
    mode: SplitMode,
) -> Result<SplitSets> {
    if data.is_empty() {
        return Err(Error::EmptySplit("no samples to split".into()));
    }
    match mode {
        SplitMode::Ordered => {
            let (rt, rv, rs) = ratios;
            if rt < 0.0 || rv < 0.0 || rs < 0.0 || (rt + rv + rs - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "split ratios {ratios:?} must be non-negative and sum to 1"
                )));
            }
            let n = data.len();
            let n_val = (n as f64 * rv).floor() as usize;
            let n_test = (n as f64 * rs).floor() as usize;
            let n_train = n - n_val - n_test;
            for (name, ratio, size) in
                [("train", rt, n_train), ("val", rv, n_val), ("test", rs, n_test)]
            {
                if ratio > 0.0 && size == 0 {
                    return Err(Error::EmptySplit(format!(
                        "{name} ratio {ratio} yields zero samples out of {n}"
                    )));
                }
            }
            Ok(SplitSets {
                train: data[..n_train].to_vec(),
                val: data[n_train..n_train + n_val].to_vec(),
                test: data[n_train + n_val..].to_vec(),
            })
        }
        SplitMode::KFold { k, fold } => {
            if k < 2 || fold >= k {
                return Err(Error::InvalidConfig(format!("k-fold with k={k}, fold={fold}")));
            }
            let n = data.len();
            if n < k {
                return Err(Error::EmptySplit(format!("{n} samples across {k} folds")));
            }
            let bounds = |f: usize| (f * n / k, (f + 1) * n / k);
            let (ts, te) = bounds(fold);
            let vfold = (fold + 1) % k;
            let (vs, ve) = bounds(vfold);
            let mut train = Vec::new();
            for (i, s) in data.iter().enumerate() {
                let in_test = i >= ts && i < te;
                let in_val = i >= vs && i < ve;
                if !in_test && !in_val {
                    train.push(s.clone());
                }
            }
            Ok(SplitSets {
                train,
                val: data[vs..ve].to_vec(),
                test: data[ts..te].to_vec(),
            })
        }
    }
}

// ── Dataset files ───────────────────────────────────────────────────

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// First line of a dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub config: GenConfig,
    pub config_hash: String,
}

/// Writes a JSON header line followed by one JSON instance per line.
pub fn save_dataset(
    path: &std::path::Path,
    cfg: &GenConfig,
    data: &[SyntheticInstance],
) -> Result<()> {
    use std::io::Write;
    let header =
        DatasetHeader { version: DATASET_FORMAT_VERSION, config: cfg.clone(), config_hash: cfg.hash() };
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for s in data {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a dataset file written by [`save_dataset`].
pub fn load_dataset(path: &std::path::Path) -> Result<(DatasetHeader, Vec<SyntheticInstance>)> {
    use std::io::BufRead;
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::InvalidConfig("empty dataset file".into()))??;
    let header: DatasetHeader = serde_json::from_str(&header_line)?;
    if header.version != DATASET_FORMAT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "dataset format version {} (supported: {DATASET_FORMAT_VERSION})",
            header.version
        )));
    }
    let mut data = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        data.push(serde_json::from_str(&line)?);
    }
    Ok((header, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> GenConfig {
        GenConfig {
            n_samples: 64,
            seed: 11,
            dim: 8,
            text_len: 3,
            audio_len: 2,
            image_count: 2,
            comment_count: (1, 2),
            ..GenConfig::default()
        }
    }

    #[test]
    fn generation_is_bit_identical_across_calls() {
        let cfg = tiny_cfg();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.label, y.label);
            assert_eq!(x.embeddings.text.data, y.embeddings.text.data);
            assert_eq!(x.embeddings.like_counts, y.embeddings.like_counts);
        }
    }

    #[test]
    fn parallel_matches_sequential_exactly() {
        let cfg = tiny_cfg();
        let a = generate(&cfg).unwrap();
        let b = generate_sequential(&cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.embeddings.text.data, y.embeddings.text.data);
            assert_eq!(x.embeddings.audio.data, y.embeddings.audio.data);
            assert_eq!(x.embeddings.images.data, y.embeddings.images.data);
        }
    }

    #[test]
    fn labels_are_balanced() {
        for n in [10usize, 11, 64, 101] {
            let cfg = GenConfig { n_samples: n, ..tiny_cfg() };
            let data = generate(&cfg).unwrap();
            let fake = data.iter().filter(|s| s.label == LABEL_FAKE).count() as i64;
            let real = data.len() as i64 - fake;
            assert!((fake - real).abs() <= 1, "n={n}: {fake} vs {real}");
        }
    }

    #[test]
    fn zero_informativeness_is_chance_level_for_the_oracle() {
        let cfg = GenConfig {
            rho: Informativeness { text: 0.0, audio: 0.0, image: 0.0, extra: 0.0 },
            ..tiny_cfg()
        };
        let est = bayes_oracle(&cfg, 20_000).unwrap();
        assert!((est.accuracy - 0.5).abs() <= 1e-9, "got {}", est.accuracy);
    }

    #[test]
    fn noise_free_single_modality_is_perfectly_separable() {
        let cfg = GenConfig {
            rho: Informativeness { text: 1.0, audio: 0.0, image: 0.0, extra: 0.0 },
            noise_sigma: 0.0,
            conflict_rate: 0.0,
            ..tiny_cfg()
        };
        let est = bayes_oracle(&cfg, 10_000).unwrap();
        assert_eq!(est.accuracy, 1.0);
    }

    #[test]
    fn mixed_config_oracle_is_strictly_between_chance_and_perfect() {
        let cfg = GenConfig {
            rho: Informativeness { text: 0.8, audio: 0.6, image: 0.4, extra: 0.2 },
            noise_sigma: 1.0,
            conflict_rate: 0.3,
            ..tiny_cfg()
        };
        let est = bayes_oracle(&cfg, 100_000).unwrap();
        assert!(est.accuracy > 0.5 && est.accuracy < 1.0, "got {}", est.accuracy);
        assert!(est.std_error < 0.005);
    }

    #[test]
    fn oracle_accuracy_is_monotone_in_text_informativeness() {
        let base = tiny_cfg();
        let grid = [0.2, 0.5, 0.8];
        let mut prev: Option<OracleEstimate> = None;
        for rho_t in grid {
            let cfg = GenConfig {
                rho: Informativeness { text: rho_t, ..base.rho },
                conflict_rate: 0.2,
                ..base.clone()
            };
            let est = bayes_oracle(&cfg, 30_000).unwrap();
            if let Some(p) = prev {
                let slack = 3.0 * (p.std_error + est.std_error);
                assert!(
                    est.accuracy >= p.accuracy - slack,
                    "accuracy dropped: {} -> {}",
                    p.accuracy,
                    est.accuracy
                );
            }
            prev = Some(est);
        }
    }

    #[test]
    fn ordered_split_sizes_match_ratios() {
        let cfg = GenConfig { n_samples: 100, ..tiny_cfg() };
        let data = generate(&cfg).unwrap();
        let s = split(&data, (0.7, 0.15, 0.15), SplitMode::Ordered).unwrap();
        assert_eq!(s.train.len(), 70);
        assert_eq!(s.val.len(), 15);
        assert_eq!(s.test.len(), 15);
    }

    #[test]
    fn all_train_split_is_valid() {
        let data = generate(&tiny_cfg()).unwrap();
        let s = split(&data, (1.0, 0.0, 0.0), SplitMode::Ordered).unwrap();
        assert_eq!(s.train.len(), data.len());
        assert!(s.val.is_empty());
        assert!(s.test.is_empty());
    }

    #[test]
    fn undersized_split_is_an_error() {
        let cfg = GenConfig { n_samples: 3, ..tiny_cfg() };
        let data = generate(&cfg).unwrap();
        let err = split(&data, (0.7, 0.15, 0.15), SplitMode::Ordered).unwrap_err();
        assert!(matches!(err, Error::EmptySplit(_)));
    }

    #[test]
    fn five_fold_test_sets_partition_the_data() {
        let cfg = GenConfig { n_samples: 100, ..tiny_cfg() };
        let data = generate(&cfg).unwrap();
        let mut seen = vec![false; data.len()];
        for fold in 0..5 {
            let s = split(&data, (0.0, 0.0, 0.0), SplitMode::KFold { k: 5, fold }).unwrap();
            assert_eq!(s.test.len(), 20);
            assert_eq!(s.train.len() + s.val.len() + s.test.len(), data.len());
            for inst in &s.test {
                // recover the index by matching the text tensor
                let idx = data
                    .iter()
                    .position(|d| d.embeddings.text.data == inst.embeddings.text.data)
                    .unwrap();
                assert!(!seen[idx], "fold overlap at {idx}");
                seen[idx] = true;
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn dataset_roundtrip_preserves_bits() {
        let cfg = GenConfig { n_samples: 12, ..tiny_cfg() };
        let data = generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        save_dataset(&path, &cfg, &data).unwrap();
        let (header, loaded) = load_dataset(&path).unwrap();
        assert_eq!(header.config_hash, cfg.hash());
        assert_eq!(loaded.len(), data.len());
        for (a, b) in data.iter().zip(&loaded) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.embeddings.text.data, b.embeddings.text.data);
            assert_eq!(a.embeddings.audio.data, b.embeddings.audio.data);
            assert_eq!(a.embeddings.images.data, b.embeddings.images.data);
            assert_eq!(a.embeddings.like_counts, b.embeddings.like_counts);
        }
    }

    #[test]
    fn like_counts_are_heavy_tailed() {
        let cfg = GenConfig { n_samples: 500, comment_count: (2, 4), ..tiny_cfg() };
        let data = generate(&cfg).unwrap();
        let likes: Vec<u64> =
            data.iter().flat_map(|s| s.embeddings.like_counts.iter().copied()).collect();
        let max = *likes.iter().max().unwrap();
        let mean = likes.iter().sum::<u64>() as f64 / likes.len() as f64;
        assert!(max as f64 > 10.0 * mean, "max {max} vs mean {mean}");
    }

    #[test]
    fn conflict_flips_exactly_one_modality() {
        let cfg = GenConfig {
            conflict_rate: 1.0,
            noise_sigma: 0.0,
            rho: Informativeness { text: 1.0, audio: 1.0, image: 1.0, extra: 1.0 },
            ..tiny_cfg()
        };
        let mu = directions(&cfg);
        let data = generate(&cfg).unwrap();
        for s in &data {
            let p = projections(&cfg, &mu, s);
            let y = if s.label == LABEL_FAKE { 1.0 } else { -1.0 };
            let flipped = p.iter().filter(|v| (**v) * y < 0.0).count();
            assert_eq!(flipped, 1, "exactly one modality must carry the anti-label signal");
        }
    }
}
