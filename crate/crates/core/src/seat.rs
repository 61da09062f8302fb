//! Sentence-embedding association statistics.
//!
//! The per-sentence association `s(w, A, B)` is the difference of mean
//! cosine similarities against the two attribute sets. The effect size is
//! Cohen's d of the target-set association means; the p-value comes from a
//! permutation test over equal-size re-partitions of the target union.
//!
//! Two denominator conventions are implemented. `Standard` normalizes by
//! the deviation of `s(w,A,B)` over the targets `X U Y` (the usual WEAT
//! form); `SwappedRoles` normalizes by the deviation of `s(t,X,Y)` over
//! the attributes `A U B`. They coincide on symmetric fixtures but not in
//! general, so both stay available.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arith::{apply, ArithError, BiasVector};
use crate::tensor::TensorMap;

/// Largest number of equal-size partitions the exact test will enumerate.
pub const EXACT_PARTITION_BUDGET: u128 = 200_000;

/// A SEAT test: two target sentence sets and two attribute sentence sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeatTest {
    pub name: String,
    pub targets_x_name: String,
    pub targets_x: Vec<String>,
    pub targets_y_name: String,
    pub targets_y: Vec<String>,
    pub attributes_a_name: String,
    pub attributes_a: Vec<String>,
    pub attributes_b_name: String,
    pub attributes_b: Vec<String>,
}

impl SeatTest {
    /// All four sets must be non-empty and the set names distinct.
    pub fn validate(&self) -> Result<(), SeatError> {
        for (set, sentences) in [
            (&self.targets_x_name, &self.targets_x),
            (&self.targets_y_name, &self.targets_y),
            (&self.attributes_a_name, &self.attributes_a),
            (&self.attributes_b_name, &self.attributes_b),
        ] {
            if sentences.is_empty() {
                return Err(SeatError::EmptySet { test: self.name.clone(), set: set.clone() });
            }
        }
        let names = [
            &self.targets_x_name,
            &self.targets_y_name,
            &self.attributes_a_name,
            &self.attributes_b_name,
        ];
        for i in 0..names.len() {
            for j in i + 1..names.len() {
                if names[i] == names[j] {
                    return Err(SeatError::DuplicateSetName {
                        test: self.name.clone(),
                        set: names[i].clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SeatError {
    EmptySet { test: String, set: String },
    DuplicateSetName { test: String, set: String },
    ZeroVector,
    DimensionMismatch,
    /// The denominator standard deviation is zero.
    DegenerateVariance,
    UnequalSizes { nx: usize, ny: usize },
    TooManyPartitions { count: u128, budget: u128 },
    EmptyGroup,
    Provider(String),
    Arith(ArithError),
}

impl fmt::Display for SeatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeatError::EmptySet { test, set } => write!(f, "test {test:?}: set {set:?} is empty"),
            SeatError::DuplicateSetName { test, set } => {
                write!(f, "test {test:?}: duplicate set name {set:?}")
            }
            SeatError::ZeroVector => write!(f, "zero-norm vector passed to cosine"),
            SeatError::DimensionMismatch => write!(f, "embedding dimensions differ"),
            SeatError::DegenerateVariance => {
                write!(f, "association scores have zero variance; effect size undefined")
            }
            SeatError::UnequalSizes { nx, ny } => {
                write!(f, "permutation test needs |X| == |Y|, got {nx} and {ny}")
            }
            SeatError::TooManyPartitions { count, budget } => write!(
                f,
                "exact test over {count} partitions exceeds budget {budget}; use Monte Carlo"
            ),
            SeatError::EmptyGroup => write!(f, "aggregation group has no results"),
            SeatError::Provider(msg) => write!(f, "embedding provider failed: {msg}"),
            SeatError::Arith(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for SeatError {}

impl From<ArithError> for SeatError {
    fn from(e: ArithError) -> Self {
        SeatError::Arith(e)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64, SeatError> {
    if a.len() != b.len() {
        return Err(SeatError::DimensionMismatch);
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(SeatError::ZeroVector);
    }
    Ok(dot / (libm::sqrt(na) * libm::sqrt(nb)))
}

/// `s(w, A, B)`: mean cosine against A minus mean cosine against B.
pub fn assoc_w(w: &[f64], a_set: &[Vec<f64>], b_set: &[Vec<f64>]) -> Result<f64, SeatError> {
    if a_set.is_empty() || b_set.is_empty() {
        return Err(SeatError::EmptySet { test: String::new(), set: "attribute set".to_owned() });
    }
    let mut sa = 0.0;
    for a in a_set {
        sa += cosine(w, a)?;
    }
    let mut sb = 0.0;
    for b in b_set {
        sb += cosine(w, b)?;
    }
    Ok(sa / a_set.len() as f64 - sb / b_set.len() as f64)
}

/// Set-level statistic: sum of `s(x,A,B)` over X minus sum over Y
/// (sums, not means).
pub fn assoc_sets(
    x_set: &[Vec<f64>],
    y_set: &[Vec<f64>],
    a_set: &[Vec<f64>],
    b_set: &[Vec<f64>],
) -> Result<f64, SeatError> {
    if x_set.is_empty() || y_set.is_empty() {
        return Err(SeatError::EmptySet { test: String::new(), set: "target set".to_owned() });
    }
    let mut total = 0.0;
    for x in x_set {
        total += assoc_w(x, a_set, b_set)?;
    }
    for y in y_set {
        total -= assoc_w(y, a_set, b_set)?;
    }
    Ok(total)
}

/// Which population the denominator deviation runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenomMode {
    /// sigma of `{s(w,A,B) | w in X U Y}` — the conventional WEAT form.
    Standard,
    /// sigma of `{s(t,X,Y) | t in A U B}` — the effect-size formula with
    /// target and attribute roles swapped.
    SwappedRoles,
}

/// Degrees-of-freedom adjustment for the denominator deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ddof {
    /// Population deviation.
    Zero,
    /// Sample deviation (n - 1).
    One,
}

fn std_dev(values: &[f64], ddof: Ddof) -> Result<f64, SeatError> {
    let n = values.len() as f64;
    let denom = match ddof {
        Ddof::Zero => n,
        Ddof::One => {
            if values.len() < 2 {
                return Err(SeatError::DegenerateVariance);
            }
            n - 1.0
        }
    };
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / denom;
    let sd = libm::sqrt(var);
    if sd == 0.0 {
        return Err(SeatError::DegenerateVariance);
    }
    Ok(sd)
}

/// Cohen's d of the target association means.
pub fn effect_size(
    x_set: &[Vec<f64>],
    y_set: &[Vec<f64>],
    a_set: &[Vec<f64>],
    b_set: &[Vec<f64>],
    denom_mode: DenomMode,
    ddof: Ddof,
) -> Result<f64, SeatError> {
    if x_set.is_empty() || y_set.is_empty() || a_set.is_empty() || b_set.is_empty() {
        return Err(SeatError::EmptySet { test: String::new(), set: "input set".to_owned() });
    }
    let sx: Result<Vec<f64>, _> = x_set.iter().map(|x| assoc_w(x, a_set, b_set)).collect();
    let sy: Result<Vec<f64>, _> = y_set.iter().map(|y| assoc_w(y, a_set, b_set)).collect();
    let (sx, sy) = (sx?, sy?);
    let numerator = sx.iter().sum::<f64>() / sx.len() as f64 - sy.iter().sum::<f64>() / sy.len() as f64;
    let denom_values: Vec<f64> = match denom_mode {
        DenomMode::Standard => sx.into_iter().chain(sy).collect(),
        DenomMode::SwappedRoles => {
            let mut vals = Vec::with_capacity(a_set.len() + b_set.len());
            for t in a_set.iter().chain(b_set) {
                vals.push(assoc_w(t, x_set, y_set)?);
            }
            vals
        }
    };
    Ok(numerator / std_dev(&denom_values, ddof)?)
}

/// Sampling regime for [`permutation_test`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermMode {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
    /// Exact when the partition count fits the budget, else Monte Carlo.
    Auto { samples: usize, seed: u64 },
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut out: u128 = 1;
    for i in 0..k {
        out = out * (n - i) as u128 / (i + 1) as u128;
    }
    out
}

/// `p = Pr[s(X*, Y*, A, B) > s(X, Y, A, B)]` over equal-size partitions
/// `(X*, Y*)` of `X U Y`. Strict inequality: ties do not count.
pub fn permutation_test(
    x_set: &[Vec<f64>],
    y_set: &[Vec<f64>],
    a_set: &[Vec<f64>],
    b_set: &[Vec<f64>],
    mode: PermMode,
) -> Result<f64, SeatError> {
    if x_set.len() != y_set.len() {
        return Err(SeatError::UnequalSizes { nx: x_set.len(), ny: y_set.len() });
    }
    // per-element association scores; every partition statistic is a
    // signed sum over these
    let mut scores = Vec::with_capacity(x_set.len() + y_set.len());
    for w in x_set.iter().chain(y_set) {
        scores.push(assoc_w(w, a_set, b_set)?);
    }
    let n = x_set.len();
    let total = scores.len();
    let sum_all: f64 = scores.iter().sum();
    // observed through the same expression as the partition statistics,
    // so the identity partition ties bit-exactly
    let observed = 2.0 * scores[..n].iter().sum::<f64>() - sum_all;

    let count = binomial(total, n);
    let mode = match mode {
        PermMode::Auto { samples, seed } => {
            if count <= EXACT_PARTITION_BUDGET {
                PermMode::Exact
            } else {
                PermMode::MonteCarlo { samples, seed }
            }
        }
        m => m,
    };

    match mode {
        PermMode::Exact => {
            if count > EXACT_PARTITION_BUDGET {
                return Err(SeatError::TooManyPartitions { count, budget: EXACT_PARTITION_BUDGET });
            }
            let mut greater = 0u64;
            let mut enumerated = 0u64;
            // lexicographic combinations of n indices out of `total`
            let mut idx: Vec<usize> = (0..n).collect();
            loop {
                let sel: f64 = idx.iter().map(|&i| scores[i]).sum();
                if 2.0 * sel - sum_all > observed {
                    greater += 1;
                }
                enumerated += 1;
                // rightmost index that can still move
                let Some(i) = (0..n).rev().find(|&i| idx[i] < total - n + i) else {
                    break;
                };
                idx[i] += 1;
                for j in i + 1..n {
                    idx[j] = idx[j - 1] + 1;
                }
            }
            debug_assert_eq!(enumerated as u128, count);
            Ok(greater as f64 / enumerated as f64)
        }
        PermMode::MonteCarlo { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..total).collect();
            let mut greater = 0u64;
            for _ in 0..samples {
                order.shuffle(&mut rng);
                let sel: f64 = order[..n].iter().map(|&i| scores[i]).sum();
                if 2.0 * sel - sum_all > observed {
                    greater += 1;
                }
            }
            Ok(greater as f64 / samples as f64)
        }
        PermMode::Auto { .. } => unreachable!("resolved above"),
    }
}

/// Maps a sentence to a fixed-dimension embedding. Implementations must be
/// deterministic within a run; caching is the implementor's business.
pub trait EmbeddingProvider {
    fn embed(&mut self, sentence: &str) -> Result<Vec<f64>, String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermMethod {
    Exact,
    MonteCarlo(usize),
}

/// Effect size and permutation p for one SEAT test.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectResult {
    pub test_name: String,
    pub d: f64,
    pub p: f64,
    pub n_x: usize,
    pub n_y: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub method: PermMethod,
}

impl EffectResult {
    /// Reports mark p < 0.01 with a star.
    pub fn significant(&self) -> bool {
        self.p < 0.01
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectOptions {
    pub denom_mode: DenomMode,
    pub ddof: Ddof,
    pub perm: PermMode,
}

impl Default for EffectOptions {
    fn default() -> Self {
        EffectOptions {
            denom_mode: DenomMode::Standard,
            ddof: Ddof::One,
            perm: PermMode::Auto { samples: 10_000, seed: 0 },
        }
    }
}

fn embed_all(
    provider: &mut dyn EmbeddingProvider,
    sentences: &[String],
) -> Result<Vec<Vec<f64>>, SeatError> {
    sentences.iter().map(|s| provider.embed(s).map_err(SeatError::Provider)).collect()
}

/// Embed all four sets once and compute d and p.
pub fn run_test(
    provider: &mut dyn EmbeddingProvider,
    test: &SeatTest,
    options: &EffectOptions,
) -> Result<EffectResult, SeatError> {
    test.validate()?;
    let x = embed_all(provider, &test.targets_x)?;
    let y = embed_all(provider, &test.targets_y)?;
    let a = embed_all(provider, &test.attributes_a)?;
    let b = embed_all(provider, &test.attributes_b)?;
    let d = effect_size(&x, &y, &a, &b, options.denom_mode, options.ddof)?;
    let p = permutation_test(&x, &y, &a, &b, options.perm)?;
    let method = match options.perm {
        PermMode::Exact => PermMethod::Exact,
        PermMode::MonteCarlo { samples, .. } => PermMethod::MonteCarlo(samples),
        PermMode::Auto { samples, .. } => {
            if binomial(x.len() + y.len(), x.len()) <= EXACT_PARTITION_BUDGET {
                PermMethod::Exact
            } else {
                PermMethod::MonteCarlo(samples)
            }
        }
    };
    Ok(EffectResult {
        test_name: test.name.clone(),
        d,
        p,
        n_x: x.len(),
        n_y: y.len(),
        n_a: a.len(),
        n_b: b.len(),
        method,
    })
}

/// Per-variant aggregate: mean of per-test |d| within each seed, then mean
/// and deviation across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub variant: String,
    pub mean_abs_d: f64,
    pub std_over_seeds: f64,
    pub n_seeds: usize,
}

/// `groups` holds (variant, seed, per-test effect sizes). Output rows are
/// sorted by variant name.
pub fn aggregate(groups: &[(String, u64, Vec<f64>)]) -> Result<Vec<VariantSummary>, SeatError> {
    use alloc::collections::BTreeMap;
    let mut per_variant: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (variant, _seed, ds) in groups {
        if ds.is_empty() {
            return Err(SeatError::EmptyGroup);
        }
        let mean_abs = ds.iter().map(|d| d.abs()).sum::<f64>() / ds.len() as f64;
        per_variant.entry(variant).or_default().push(mean_abs);
    }
    if per_variant.is_empty() {
        return Err(SeatError::EmptyGroup);
    }
    Ok(per_variant
        .into_iter()
        .map(|(variant, means)| {
            let n = means.len();
            let mean = means.iter().sum::<f64>() / n as f64;
            let std = if n < 2 {
                0.0
            } else {
                let var =
                    means.iter().map(|&m| (m - mean) * (m - mean)).sum::<f64>() / (n as f64 - 1.0);
                libm::sqrt(var)
            };
            VariantSummary { variant: variant.to_owned(), mean_abs_d: mean, std_over_seeds: std, n_seeds: n }
        })
        .collect())
}

/// One evaluated (lambda, seed, test) point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub seed: u64,
    pub test_name: String,
    pub d: f64,
    pub p: f64,
    /// Masked-LM loss of the scaled model on a neutral corpus — the
    /// representation-collapse probe.
    pub neutral_loss: f64,
}

/// Per-lambda aggregate over seeds and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAggregate {
    pub lambda: f64,
    pub mean_abs_d: f64,
    pub std_over_seeds: f64,
    pub mean_neutral_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<SweepAggregate>,
}

/// Scale each seed's bias vector across the lambda grid and evaluate every
/// test on the resulting model. `make_provider` builds an embedding
/// provider for a scaled checkpoint; `neutral_loss` scores it on neutral
/// text.
pub fn lambda_sweep<P, F, G>(
    theta_org: &TensorMap,
    vectors: &[(u64, BiasVector)],
    lambdas: &[f64],
    tests: &[SeatTest],
    options: &EffectOptions,
    mut make_provider: F,
    mut neutral_loss: G,
) -> Result<SweepReport, SeatError>
where
    P: EmbeddingProvider,
    F: FnMut(&TensorMap) -> Result<P, String>,
    G: FnMut(&TensorMap) -> Result<f64, String>,
{
    if lambdas.is_empty() {
        return Err(SeatError::EmptyGroup);
    }
    let mut rows = Vec::new();
    let mut aggregates = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut per_seed_means = Vec::with_capacity(vectors.len());
        let mut loss_sum = 0.0;
        for (seed, vector) in vectors {
            let theta = apply(theta_org, vector, lambda)?;
            let mut provider = make_provider(&theta).map_err(SeatError::Provider)?;
            let loss = neutral_loss(&theta).map_err(SeatError::Provider)?;
            loss_sum += loss;
            let mut abs_sum = 0.0;
            for test in tests {
                let result = run_test(&mut provider, test, options)?;
                abs_sum += result.d.abs();
                rows.push(SweepRow {
                    lambda,
                    seed: *seed,
                    test_name: result.test_name.clone(),
                    d: result.d,
                    p: result.p,
                    neutral_loss: loss,
                });
            }
            per_seed_means.push(abs_sum / tests.len().max(1) as f64);
        }
        let n = per_seed_means.len();
        let mean = per_seed_means.iter().sum::<f64>() / n.max(1) as f64;
        let std = if n < 2 {
            0.0
        } else {
            let var = per_seed_means.iter().map(|&m| (m - mean) * (m - mean)).sum::<f64>()
                / (n as f64 - 1.0);
            libm::sqrt(var)
        };
        aggregates.push(SweepAggregate {
            lambda,
            mean_abs_d: mean,
            std_over_seeds: std,
            mean_neutral_loss: loss_sum / n.max(1) as f64,
        });
    }
    Ok(SweepReport { rows, aggregates })
}

/// Convenience for reports: CSV-stable formatting of an f64.
pub fn format_float(x: f64) -> String {
    format!("{x:.10}")
}
