//! Bias-vector construction and application.
//!
//! A bias vector is the elementwise difference between a bias-overfitted
//! checkpoint and its base checkpoint, minus the tensors matched by a
//! layer-exclusion filter (normalization layers by default). Applying it
//! with a scaling factor `lambda` produces the debiased checkpoint:
//! `out = org - lambda * delta` on included tensors, with excluded tensors
//! copied through unchanged.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::tensor::{Tensor, TensorMap};

/// Case-insensitive glob patterns (`*` and `?`) over tensor names.
/// An empty pattern list excludes nothing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LayerFilter {
    patterns: Vec<String>,
}

/// Exclusion patterns covering common encoder LayerNorm naming schemes.
pub const DEFAULT_EXCLUDE_PATTERNS: &[&str] =
    &["*layernorm*", "*layer_norm*", "*ln_f*", "*ln_1*", "*ln_2*", "*ln1*", "*ln2*"];

impl LayerFilter {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new<S: AsRef<str>>(patterns: impl IntoIterator<Item = S>) -> Self {
        LayerFilter {
            patterns: patterns.into_iter().map(|p| p.as_ref().to_lowercase()).collect(),
        }
    }

    pub fn default_layernorm() -> Self {
        Self::new(DEFAULT_EXCLUDE_PATTERNS.iter().copied())
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    pub fn matches(&self, name: &str) -> bool {
        let lower = name.to_lowercase();
        self.patterns.iter().any(|p| glob_match(p, &lower))
    }
}

/// Minimal glob matcher: `*` matches any run, `?` one character.
/// Both inputs are expected pre-lowercased.
fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    // Iterative matcher with single backtrack point per `*`.
    let (mut pi, mut ti) = (0usize, 0usize);
    let (mut star_pi, mut star_ti) = (usize::MAX, 0usize);
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star_pi = pi;
            star_ti = ti;
            pi += 1;
        } else if star_pi != usize::MAX {
            pi = star_pi + 1;
            star_ti += 1;
            ti = star_ti;
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '*' {
        pi += 1;
    }
    pi == p.len()
}

/// Error-free transformation of `a + b`: returns the rounded sum and the
/// exact rounding error, so `s + e == a + b` as reals (Knuth two-sum).
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bp = s - a;
    let e = (a - (s - bp)) + (b - bp);
    (s, e)
}

/// Sum a short expansion so the result is the exact sum whenever that sum
/// is representable. Error-free accumulation passes concentrate the value
/// in the last slot; the leftovers after three passes are O(u^3) relative
/// and cannot perturb the final rounding.
fn exact_sum(terms: &mut [f64]) -> f64 {
    for _ in 0..3 {
        for i in 1..terms.len() {
            let (s, e) = two_sum(terms[i - 1], terms[i]);
            terms[i - 1] = e;
            terms[i] = s;
        }
    }
    let (last, low) = terms.split_last().expect("expansion is never empty");
    last + low.iter().sum::<f64>()
}

/// `org - lambda*(d + r)` with compensated products and sums. When
/// `d + r` is exactly `bias - org` (as `diff` guarantees) and lambda is
/// -1, this returns `bias` bit-exactly.
fn combine(org: f64, d: f64, r: f64, lambda: f64) -> f64 {
    let m1 = -lambda * d;
    let e1 = libm::fma(-lambda, d, -m1);
    let m2 = -lambda * r;
    let e2 = libm::fma(-lambda, r, -m2);
    exact_sum(&mut [e2, e1, m2, m1, org])
}

/// A checkpoint delta plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasVector {
    /// The per-tensor deltas (tensors matched by the filter are absent).
    pub delta: TensorMap,
    /// Exact rounding errors of the subtraction that produced `delta`,
    /// stored as float64 tensors under the same names. Carrying them lets
    /// `apply` with integer lambda recover checkpoints bit-exactly. Empty
    /// for hand-assembled vectors; treated as zero then.
    pub residual: TensorMap,
    /// Sorted names that the filter excluded.
    pub excluded: Vec<String>,
    /// Content digest of the base checkpoint, if this vector came from `diff`.
    pub source_org_digest: Option<[u8; 32]>,
    /// Content digest of the biased checkpoint, if this vector came from `diff`.
    pub source_bias_digest: Option<[u8; 32]>,
    pub seed: Option<u64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArithError {
    /// Tensor name sets differ; carries the symmetric difference
    /// (names only in the first map, names only in the second).
    NameSetMismatch { only_left: Vec<String>, only_right: Vec<String> },
    ShapeMismatch { name: String },
    DtypeMismatch { name: String },
    /// The delta names a tensor the target checkpoint lacks.
    MissingTensor { name: String },
    NonFiniteScale,
}

impl fmt::Display for ArithError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArithError::NameSetMismatch { only_left, only_right } => write!(
                f,
                "tensor name sets differ: only in first: {only_left:?}; only in second: {only_right:?}"
            ),
            ArithError::ShapeMismatch { name } => write!(f, "shape mismatch for tensor {name:?}"),
            ArithError::DtypeMismatch { name } => write!(f, "dtype mismatch for tensor {name:?}"),
            ArithError::MissingTensor { name } => {
                write!(f, "checkpoint lacks tensor {name:?} named by the bias vector")
            }
            ArithError::NonFiniteScale => write!(f, "scale factor must be finite"),
        }
    }
}

impl core::error::Error for ArithError {}

fn check_same_names(a: &TensorMap, b: &TensorMap) -> Result<(), ArithError> {
    let only_left: Vec<String> =
        a.names().filter(|n| b.get(n).is_none()).map(|n| n.to_owned()).collect();
    let only_right: Vec<String> =
        b.names().filter(|n| a.get(n).is_none()).map(|n| n.to_owned()).collect();
    if only_left.is_empty() && only_right.is_empty() {
        Ok(())
    } else {
        Err(ArithError::NameSetMismatch { only_left, only_right })
    }
}

fn check_compatible(name: &str, a: &Tensor, b: &Tensor) -> Result<(), ArithError> {
    if a.dtype() != b.dtype() {
        return Err(ArithError::DtypeMismatch { name: name.to_owned() });
    }
    if a.shape() != b.shape() {
        return Err(ArithError::ShapeMismatch { name: name.to_owned() });
    }
    Ok(())
}

/// `delta = theta_bias - theta_org` on every tensor the filter does not
/// exclude. Both checkpoints must have identical name sets, shapes, and
/// dtypes; a mismatch is a hard error, never a skip.
pub fn diff(
    theta_bias: &TensorMap,
    theta_org: &TensorMap,
    filter: &LayerFilter,
) -> Result<BiasVector, ArithError> {
    check_same_names(theta_bias, theta_org)?;
    let mut delta = TensorMap::new();
    let mut residual = TensorMap::new();
    let mut excluded = Vec::new();
    for (name, tb) in theta_bias.iter() {
        let to = theta_org.get(name).expect("name sets verified equal");
        check_compatible(name, tb, to)?;
        if filter.matches(name) {
            excluded.push(name.to_owned());
            continue;
        }
        let shape = tb.shape().to_vec();
        let (d, r) = match (tb.as_f64(), to.as_f64()) {
            (Some(bs), Some(os)) => {
                let mut ds = Vec::with_capacity(bs.len());
                let mut rs = Vec::with_capacity(bs.len());
                for (&b, &o) in bs.iter().zip(os) {
                    let (s, e) = two_sum(b, -o);
                    ds.push(s);
                    rs.push(e);
                }
                (Tensor::from_f64(shape.clone(), ds), Tensor::from_f64(shape, rs))
            }
            _ => {
                let bs = tb.as_f32().expect("dtypes verified equal");
                let os = to.as_f32().expect("dtypes verified equal");
                let mut ds = Vec::with_capacity(bs.len());
                let mut rs = Vec::with_capacity(bs.len());
                for (&b, &o) in bs.iter().zip(os) {
                    // d32 + r matches b - o to ~2^-78 relative, so recovery
                    // survives any cancellation a real checkpoint can show
                    let (wide, e) = two_sum(b as f64, -(o as f64));
                    let d32 = wide as f32;
                    ds.push(d32);
                    rs.push((wide - d32 as f64) + e);
                }
                (Tensor::from_f32(shape.clone(), ds), Tensor::from_f64(shape, rs))
            }
        };
        delta.insert(name, d.expect("shape preserved")).expect("names unique in source map");
        residual.insert(name, r.expect("shape preserved")).expect("names unique in source map");
    }
    Ok(BiasVector {
        delta,
        residual,
        excluded,
        source_org_digest: Some(theta_org.content_digest()),
        source_bias_digest: Some(theta_bias.content_digest()),
        seed: None,
        note: String::new(),
    })
}

/// `out = theta_org - lambda * delta` on tensors named by the vector;
/// everything else (including excluded tensors) is copied unchanged.
pub fn apply(theta_org: &TensorMap, v: &BiasVector, lambda: f64) -> Result<TensorMap, ArithError> {
    if !lambda.is_finite() {
        return Err(ArithError::NonFiniteScale);
    }
    for (name, d) in v.delta.iter() {
        let t = theta_org.get(name).ok_or_else(|| ArithError::MissingTensor { name: name.to_owned() })?;
        check_compatible(name, t, d)?;
    }
    let mut out = TensorMap::new();
    for (name, t) in theta_org.iter() {
        let tensor = match v.delta.get(name) {
            // lambda == 0 copies bit-exact, skipping the round trip through
            // arithmetic (0.0 * -0.0 sign quirks and f32 rounding).
            Some(_) if lambda == 0.0 => t.clone(),
            Some(d) => {
                let res = v.residual.get(name).and_then(Tensor::as_f64);
                let shape = t.shape().to_vec();
                match (t.as_f64(), d.as_f64()) {
                    (Some(os), Some(ds)) => {
                        let vals: Vec<f64> = os
                            .iter()
                            .zip(ds)
                            .enumerate()
                            .map(|(i, (&o, &dv))| {
                                combine(o, dv, res.map_or(0.0, |r| r[i]), lambda)
                            })
                            .collect();
                        Tensor::from_f64(shape, vals).expect("shape preserved")
                    }
                    _ => {
                        let os = t.as_f32().expect("dtypes verified equal");
                        let ds = d.as_f32().expect("dtypes verified equal");
                        // compensated float64 evaluation, then one rounding back to
                        // float32; exact recovery unless |delta| exceeds
                        // 2^53 times the recovered value
                        let vals: Vec<f32> = os
                            .iter()
                            .zip(ds)
                            .enumerate()
                            .map(|(i, (&o, &dv))| {
                                let r = res.map_or(0.0, |r| r[i]);
                                combine(o as f64, dv as f64, r, lambda) as f32
                            })
                            .collect();
                        Tensor::from_f32(shape, vals).expect("shape preserved")
                    }
                }
            }
            None => t.clone(),
        };
        out.insert(name, tensor).expect("names unique in source map");
    }
    for (k, val) in theta_org.metadata() {
        out.set_metadata(k, val);
    }
    out.set_metadata("bias_vector.lambda", &format!("{lambda}"));
    if let Some(d) = &v.source_bias_digest {
        out.set_metadata("bias_vector.source_bias_digest", &hex(d));
    }
    if let Some(d) = &v.source_org_digest {
        out.set_metadata("bias_vector.source_org_digest", &hex(d));
    }
    Ok(out)
}

/// Multiply every delta element by `c`; provenance is preserved and the
/// note records the scaling.
pub fn scale(v: &BiasVector, c: f64) -> Result<BiasVector, ArithError> {
    if !c.is_finite() {
        return Err(ArithError::NonFiniteScale);
    }
    let mut delta = TensorMap::new();
    let mut residual = TensorMap::new();
    for (name, t) in v.delta.iter() {
        let res = v.residual.get(name).and_then(Tensor::as_f64);
        let shape = t.shape().to_vec();
        let (d, r) = match t.as_f64() {
            Some(ds) => {
                let mut dv = Vec::with_capacity(ds.len());
                let mut rv = Vec::with_capacity(ds.len());
                for (i, &x) in ds.iter().enumerate() {
                    let m = c * x;
                    let e = libm::fma(c, x, -m);
                    dv.push(m);
                    rv.push(c * res.map_or(0.0, |r| r[i]) + e);
                }
                (Tensor::from_f64(shape.clone(), dv), Tensor::from_f64(shape, rv))
            }
            None => {
                let ds = t.as_f32().expect("only two dtypes exist");
                let mut dv = Vec::with_capacity(ds.len());
                let mut rv = Vec::with_capacity(ds.len());
                for (i, &x) in ds.iter().enumerate() {
                    let wide = c * (x as f64 + res.map_or(0.0, |r| r[i]));
                    let m = wide as f32;
                    dv.push(m);
                    rv.push(wide - m as f64);
                }
                (Tensor::from_f32(shape.clone(), dv), Tensor::from_f64(shape, rv))
            }
        };
        delta.insert(name, d.expect("shape preserved")).expect("names unique in source map");
        residual.insert(name, r.expect("shape preserved")).expect("names unique in source map");
    }
    let note = if v.note.is_empty() {
        format!("scaled by {c}")
    } else {
        format!("{}; scaled by {c}", v.note)
    };
    Ok(BiasVector {
        delta,
        residual,
        excluded: v.excluded.clone(),
        source_org_digest: v.source_org_digest,
        source_bias_digest: v.source_bias_digest,
        seed: v.seed,
        note,
    })
}

/// Elementwise sum of two vectors over identical name sets. The result is
/// composite: source digests are cleared and the excluded list is the
/// sorted union.
pub fn add(v1: &BiasVector, v2: &BiasVector) -> Result<BiasVector, ArithError> {
    check_same_names(&v1.delta, &v2.delta)?;
    let mut delta = TensorMap::new();
    let mut residual = TensorMap::new();
    for (name, a) in v1.delta.iter() {
        let b = v2.delta.get(name).expect("name sets verified equal");
        check_compatible(name, a, b)?;
        let ra = v1.residual.get(name).and_then(Tensor::as_f64);
        let rb = v2.residual.get(name).and_then(Tensor::as_f64);
        let shape = a.shape().to_vec();
        let (d, r) = match (a.as_f64(), b.as_f64()) {
            (Some(xs), Some(ys)) => {
                let mut dv = Vec::with_capacity(xs.len());
                let mut rv = Vec::with_capacity(xs.len());
                for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
                    let (s, e) = two_sum(x, y);
                    dv.push(s);
                    rv.push(ra.map_or(0.0, |r| r[i]) + rb.map_or(0.0, |r| r[i]) + e);
                }
                (Tensor::from_f64(shape.clone(), dv), Tensor::from_f64(shape, rv))
            }
            _ => {
                let xs = a.as_f32().expect("dtypes verified equal");
                let ys = b.as_f32().expect("dtypes verified equal");
                let mut dv = Vec::with_capacity(xs.len());
                let mut rv = Vec::with_capacity(xs.len());
                for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
                    let wide = x as f64
                        + y as f64
                        + ra.map_or(0.0, |r| r[i])
                        + rb.map_or(0.0, |r| r[i]);
                    let s = wide as f32;
                    dv.push(s);
                    rv.push(wide - s as f64);
                }
                (Tensor::from_f32(shape.clone(), dv), Tensor::from_f64(shape, rv))
            }
        };
        delta.insert(name, d.expect("shape preserved")).expect("names unique in source map");
        residual.insert(name, r.expect("shape preserved")).expect("names unique in source map");
    }
    let mut excluded: Vec<String> = v1.excluded.iter().chain(&v2.excluded).cloned().collect();
    excluded.sort();
    excluded.dedup();
    Ok(BiasVector {
        delta,
        residual,
        excluded,
        source_org_digest: None,
        source_bias_digest: None,
        seed: None,
        note: String::from("sum of two bias vectors"),
    })
}

pub fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::vec;

    fn map1(name: &str, vals: &[f64]) -> TensorMap {
        let mut m = TensorMap::new();
        m.insert(name, Tensor::from_f64(vec![vals.len()], vals.to_vec()).unwrap()).unwrap();
        m
    }

    #[test]
    fn glob_basics() {
        assert!(glob_match("*layernorm*", "enc.layernorm.weight"));
        assert!(glob_match("a?c", "abc"));
        assert!(!glob_match("a?c", "ac"));
        assert!(glob_match("*", ""));
        assert!(!glob_match("x*", "yx"));
    }

    #[test]
    fn filter_is_case_insensitive() {
        let f = LayerFilter::new(["*layernorm*"]);
        assert!(f.matches("enc.LayerNorm.weight"));
        assert!(!f.matches("enc.attn.w"));
        assert!(!LayerFilter::none().matches("enc.LayerNorm.weight"));
    }

    #[test]
    fn diff_scalar_subtraction() {
        let v = diff(&map1("w", &[3.0]), &map1("w", &[1.0]), &LayerFilter::none()).unwrap();
        assert_eq!(v.delta.get("w").unwrap().as_f64().unwrap(), &[2.0]);
        assert!(v.excluded.is_empty());
    }

    #[test]
    fn diff_identical_is_zero() {
        let m = map1("w", &[1.5, -2.0]);
        let v = diff(&m, &m, &LayerFilter::default_layernorm()).unwrap();
        assert_eq!(v.delta.get("w").unwrap().as_f64().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn diff_excludes_filtered_names() {
        let mut a = map1("enc.attn.w", &[2.0]);
        a.insert("enc.LayerNorm.weight", Tensor::from_f64(vec![1], vec![5.0]).unwrap()).unwrap();
        let mut b = map1("enc.attn.w", &[1.0]);
        b.insert("enc.LayerNorm.weight", Tensor::from_f64(vec![1], vec![3.0]).unwrap()).unwrap();
        let v = diff(&a, &b, &LayerFilter::new(["*layernorm*"])).unwrap();
        assert!(v.delta.get("enc.attn.w").is_some());
        assert!(v.delta.get("enc.LayerNorm.weight").is_none());
        assert_eq!(v.excluded, vec!["enc.LayerNorm.weight".to_owned()]);
    }

    #[test]
    fn diff_name_mismatch_reports_symmetric_difference() {
        let err = diff(&map1("a", &[1.0]), &map1("b", &[1.0]), &LayerFilter::none()).unwrap_err();
        match err {
            ArithError::NameSetMismatch { only_left, only_right } => {
                assert_eq!(only_left, vec!["a".to_owned()]);
                assert_eq!(only_right, vec!["b".to_owned()]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn apply_lambda_zero_is_identity() {
        let org = map1("w", &[1.25]);
        let v = diff(&map1("w", &[9.0]), &org, &LayerFilter::none()).unwrap();
        let out = apply(&org, &v, 0.0).unwrap();
        assert_eq!(out.get("w"), org.get("w"));
    }

    #[test]
    fn apply_basic_algebra() {
        // 1 - 1*2 = -1
        let org = map1("w", &[1.0]);
        let v = diff(&map1("w", &[3.0]), &org, &LayerFilter::none()).unwrap();
        let out = apply(&org, &v, 1.0).unwrap();
        assert_eq!(out.get("w").unwrap().as_f64().unwrap(), &[-1.0]);
    }

    #[test]
    fn apply_minus_one_recovers_biased() {
        let mut org = map1("enc.attn.w", &[1.0, 2.0]);
        org.insert("ln1.weight", Tensor::from_f64(vec![1], vec![0.5]).unwrap()).unwrap();
        let mut biased = map1("enc.attn.w", &[4.0, -1.0]);
        biased.insert("ln1.weight", Tensor::from_f64(vec![1], vec![0.9]).unwrap()).unwrap();
        let v = diff(&biased, &org, &LayerFilter::new(["*ln1*"])).unwrap();
        let out = apply(&org, &v, -1.0).unwrap();
        assert_eq!(out.get("enc.attn.w"), biased.get("enc.attn.w"));
        // excluded tensor stays at the org value
        assert_eq!(out.get("ln1.weight"), org.get("ln1.weight"));
    }

    #[test]
    fn scale_and_apply_commute() {
        let org = map1("w", &[1.0, -3.0, 2.5]);
        let biased = map1("w", &[0.5, 1.0, 4.0]);
        let v = diff(&biased, &org, &LayerFilter::none()).unwrap();
        let scaled = scale(&v, 0.75).unwrap();
        let a = apply(&org, &scaled, 1.0).unwrap();
        let b = apply(&org, &v, 0.75).unwrap();
        assert_eq!(a.get("w"), b.get("w"));
    }

    #[test]
    fn add_and_cancel() {
        let org = map1("w", &[1.0]);
        let v = diff(&map1("w", &[3.5]), &org, &LayerFilter::none()).unwrap();
        let neg = scale(&v, -1.0).unwrap();
        let sum = add(&v, &neg).unwrap();
        assert_eq!(sum.delta.get("w").unwrap().as_f64().unwrap(), &[0.0]);
        assert!(sum.source_org_digest.is_none());
    }

    #[test]
    fn add_sums_elementwise() {
        let v1 = diff(&map1("w", &[1.0]), &map1("w", &[0.0]), &LayerFilter::none()).unwrap();
        let v2 = diff(&map1("w", &[2.5]), &map1("w", &[0.0]), &LayerFilter::none()).unwrap();
        let sum = add(&v1, &v2).unwrap();
        assert_eq!(sum.delta.get("w").unwrap().as_f64().unwrap(), &[3.5]);
    }

    #[test]
    fn recovery_is_bit_exact_across_magnitudes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let wide = |rng: &mut rand_chacha::ChaCha8Rng| {
            let m: f64 = rng.random_range(-1.0..1.0);
            let e: i32 = rng.random_range(-80..80);
            m * libm::exp2(e as f64)
        };
        let orgs: Vec<f64> = (0..n).map(|_| wide(&mut rng)).collect();
        let biases: Vec<f64> = (0..n).map(|_| wide(&mut rng)).collect();

        let org = map1("w", &orgs);
        let biased = map1("w", &biases);
        let v = diff(&biased, &org, &LayerFilter::none()).unwrap();
        let out = apply(&org, &v, -1.0).unwrap();
        let got = out.get("w").unwrap().as_f64().unwrap();
        for (g, b) in got.iter().zip(&biases) {
            assert_eq!(g.to_bits(), b.to_bits());
        }

        // float32 keeps a narrower exponent spread: a single float64
        // residual tracks the rounded-away bits only up to a 2^53
        // magnitude ratio between delta and result
        let wide32 = |rng: &mut rand_chacha::ChaCha8Rng| {
            let m: f64 = rng.random_range(-1.0..1.0);
            let e: i32 = rng.random_range(-20..20);
            m * libm::exp2(e as f64)
        };
        let mut org32 = TensorMap::new();
        let o32: Vec<f32> = (0..n).map(|_| wide32(&mut rng) as f32).collect();
        let b32: Vec<f32> = (0..n).map(|_| wide32(&mut rng) as f32).collect();
        org32.insert("w", Tensor::from_f32(vec![n], o32.clone()).unwrap()).unwrap();
        let mut biased32 = TensorMap::new();
        biased32.insert("w", Tensor::from_f32(vec![n], b32.clone()).unwrap()).unwrap();
        let v32 = diff(&biased32, &org32, &LayerFilter::none()).unwrap();
        let out32 = apply(&org32, &v32, -1.0).unwrap();
        for (g, b) in out32.get("w").unwrap().as_f32().unwrap().iter().zip(&b32) {
            assert_eq!(g.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn apply_missing_tensor_errors() {
        let org = map1("w", &[1.0]);
        let v = diff(&map1("u", &[2.0]), &map1("u", &[0.0]), &LayerFilter::none()).unwrap();
        assert!(matches!(apply(&org, &v, 1.0), Err(ArithError::MissingTensor { .. })));
    }
}
