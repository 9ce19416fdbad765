//! Content-free calibration of output probabilities.
//!
//! A few-shot prompt biases the model toward certain answers (answers
//! frequent in the prompt, answers near its end, answers common in
//! pre-training text). The correction applied here is an affine map
//!
//! ```text
//! q = softmax(W * p + b)        with W diagonal
//! ```
//!
//! whose parameters are fitted so that a *content-free* test input
//! ("N/A", "\[MASK\]", the empty string) scores uniformly across answers.
//! Two fitting rules are provided:
//!
//! * [`fit_diagonal`]: `W = diag(p_cf)^-1`, `b = 0`; preferred for
//!   classification.
//! * [`fit_additive`]: `W = I`, `b = -p_cf`; preferred for generation,
//!   where the first-token distribution is large and truncated.
//!
//! Note: the affine map is applied to the backend's output
//! **probabilities**, not to logits. Completions APIs expose only
//! probabilities, so the softmax here re-normalizes probability-space
//! scores. This changes the numeric values of `q` relative to a
//! logit-space fit but never the argmax, which is what prediction uses.
//!
//! This is calibration in the measurement-device sense (zeroing a biased
//! instrument), not statistical calibration of confidence estimates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{label_probs, BackendError, LmBackend, LmQuery};
use crate::prompt::{render, PromptError, PromptSpec};
use crate::ClassId;

/// Floor below which a content-free probability is considered degenerate.
/// `fit_diagonal` refuses such entries instead of clamping them: a silent
/// clamp would hide a broken content-free estimate behind a huge weight.
pub const ZERO_ENTRY_EPS: f64 = 1e-12;

/// Tolerance on total probability mass for a valid [`ProbVector`].
pub const MASS_EPS: f64 = 1e-9;

/// Default content-free inputs ensembled by [`estimate_content_free`].
pub const DEFAULT_CF_INPUTS: [&str; 3] = ["N/A", "[MASK]", ""];

#[derive(Debug, Error)]
pub enum CalibrationError {
    /// Every raw probability was zero; the backend returned no usable
    /// mass for any label. Callers should widen the requested top-k.
    #[error("all raw label probabilities are zero; widen the backend top-k")]
    AllZeroMass,
    /// A raw probability was negative or non-finite.
    #[error("invalid probability {value} for class {class}")]
    InvalidProbability { class: ClassId, value: f64 },
    #[error("duplicate class id {0} in probability vector")]
    DuplicateClass(ClassId),
    /// Entries plus remainder do not sum to one.
    #[error("probability mass sums to {sum}, expected 1 within {MASS_EPS}")]
    MassMismatch { sum: f64 },
    /// A content-free probability is at or below [`ZERO_ENTRY_EPS`], so the
    /// diagonal fit would produce an unbounded weight. Add more content-free
    /// inputs or use the additive fit.
    #[error("content-free probability {value} for class {class} is below {ZERO_ENTRY_EPS}; add content-free inputs or use the additive fit")]
    ZeroEntry { class: ClassId, value: f64 },
    #[error("dimension mismatch: {params} calibration parameters vs {probs} probabilities")]
    DimensionMismatch { params: usize, probs: usize },
    /// Every content-free input failed at the backend.
    #[error("all {count} content-free inputs failed; last error: {last}")]
    AllContentFreeInputsFailed { count: usize, last: BackendError },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

// ─── ProbVector ──────────────────────────────────────────────────────────────

/// A probability distribution over an ordered set of classes, plus the
/// mass not covered by the listed entries.
///
/// For classification the entries cover the whole label space and
/// `remainder_mass` is zero. For truncated token distributions
/// (generation over large vocabularies) the entries are the listed
/// top-k tokens and `remainder_mass` carries the rest; the remainder is
/// preserved through calibration but never participates in argmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector {
    entries: Vec<(ClassId, f64)>,
    remainder_mass: f64,
}

impl ProbVector {
    /// Validates entries: non-negative finite probabilities, unique class
    /// ids, total mass within [`MASS_EPS`] of one.
    pub fn new(
        entries: Vec<(ClassId, f64)>,
        remainder_mass: f64,
    ) -> Result<Self, CalibrationError> {
        let mut seen = std::collections::BTreeSet::new();
        for &(class, p) in &entries {
            if !p.is_finite() || p < 0.0 {
                return Err(CalibrationError::InvalidProbability { class, value: p });
            }
            if !seen.insert(class) {
                return Err(CalibrationError::DuplicateClass(class));
            }
        }
        if !remainder_mass.is_finite() || remainder_mass < 0.0 {
            return Err(CalibrationError::InvalidProbability {
                class: ClassId(usize::MAX),
                value: remainder_mass,
            });
        }
        let sum: f64 = entries.iter().map(|(_, p)| p).sum::<f64>() + remainder_mass;
        if (sum - 1.0).abs() > MASS_EPS {
            return Err(CalibrationError::MassMismatch { sum });
        }
        Ok(Self {
            entries,
            remainder_mass,
        })
    }

    /// A distribution over classes `0..k` with the given probabilities and
    /// no remainder.
    pub fn dense(probs: &[f64]) -> Result<Self, CalibrationError> {
        Self::new(
            probs
                .iter()
                .copied()
                .enumerate()
                .map(|(i, p)| (ClassId(i), p))
                .collect(),
            0.0,
        )
    }

    /// Uniform distribution over classes `0..k`.
    pub fn uniform(k: usize) -> Self {
        let p = 1.0 / k as f64;
        Self {
            entries: (0..k).map(|i| (ClassId(i), p)).collect(),
            remainder_mass: 0.0,
        }
    }

    pub fn entries(&self) -> &[(ClassId, f64)] {
        &self.entries
    }

    pub fn remainder_mass(&self) -> f64 {
        self.remainder_mass
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Probability of a class, or 0 if the class is not listed.
    pub fn prob(&self, class: ClassId) -> f64 {
        self.entries
            .iter()
            .find(|(c, _)| *c == class)
            .map(|(_, p)| *p)
            .unwrap_or(0.0)
    }

    pub fn probs(&self) -> Vec<f64> {
        self.entries.iter().map(|(_, p)| *p).collect()
    }

    /// Largest absolute deviation from the uniform distribution over the
    /// listed entries.
    pub fn max_deviation_from_uniform(&self) -> f64 {
        let u = (1.0 - self.remainder_mass) / self.entries.len() as f64;
        self.entries
            .iter()
            .map(|(_, p)| (p - u).abs())
            .fold(0.0, f64::max)
    }
}

// ─── CalibrationParams ───────────────────────────────────────────────────────

/// Diagonal affine calibration: per-class scale `w_diag` and offset `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub w_diag: Vec<f64>,
    pub b: Vec<f64>,
}

impl CalibrationParams {
    /// Identity parameters (`w = 1`, `b = 0`): calibration is a no-op up
    /// to the monotone softmax.
    pub fn identity(k: usize) -> Self {
        Self {
            w_diag: vec![1.0; k],
            b: vec![0.0; k],
        }
    }

    pub fn k(&self) -> usize {
        self.w_diag.len()
    }
}

/// How calibration parameters were fitted. The `Display` form is used in
/// run records and config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMode {
    None,
    Diagonal,
    Additive,
    Oracle,
}

impl std::fmt::Display for CalibrationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CalibrationMode::None => "none",
            CalibrationMode::Diagonal => "diagonal",
            CalibrationMode::Additive => "additive",
            CalibrationMode::Oracle => "oracle",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for CalibrationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(CalibrationMode::None),
            "diagonal" => Ok(CalibrationMode::Diagonal),
            "additive" => Ok(CalibrationMode::Additive),
            "oracle" => Ok(CalibrationMode::Oracle),
            other => Err(format!("unknown calibration mode `{other}`")),
        }
    }
}

// ─── Core operations ─────────────────────────────────────────────────────────

/// Renormalizes raw label probabilities to sum to one.
///
/// The raw values are next-token probabilities of each label's first
/// token; they do not sum to one because the rest of the vocabulary
/// absorbs the remaining mass. Relative order is preserved.
pub fn renormalize_label_probs(raw: &[(ClassId, f64)]) -> Result<ProbVector, CalibrationError> {
    for &(class, p) in raw {
        if !p.is_finite() || p < 0.0 {
            return Err(CalibrationError::InvalidProbability { class, value: p });
        }
    }
    let sum: f64 = raw.iter().map(|(_, p)| p).sum();
    if sum <= 0.0 {
        return Err(CalibrationError::AllZeroMass);
    }
    ProbVector::new(raw.iter().map(|&(c, p)| (c, p / sum)).collect(), 0.0)
}

/// Fits `W = diag(p_cf)^-1`, `b = 0`.
///
/// With these parameters the content-free input itself calibrates to the
/// uniform distribution: `W * p_cf` is the all-ones vector.
pub fn fit_diagonal(p_cf: &ProbVector) -> Result<CalibrationParams, CalibrationError> {
    let mut w_diag = Vec::with_capacity(p_cf.len());
    for &(class, p) in p_cf.entries() {
        if p <= ZERO_ENTRY_EPS {
            return Err(CalibrationError::ZeroEntry { class, value: p });
        }
        w_diag.push(1.0 / p);
    }
    let b = vec![0.0; p_cf.len()];
    Ok(CalibrationParams { w_diag, b })
}

/// Fits `W = I`, `b = -p_cf`.
///
/// Tolerates zero entries, so it remains usable when the content-free
/// estimate is degenerate or truncated. For truncated token
/// distributions, classes absent from `p_cf` keep `b = 0` (see
/// [`TokenCalibration`]).
pub fn fit_additive(p_cf: &ProbVector) -> CalibrationParams {
    CalibrationParams {
        w_diag: vec![1.0; p_cf.len()],
        b: p_cf.entries().iter().map(|(_, p)| -p).collect(),
    }
}

/// Applies `q = softmax(W * p + b)` over the listed entries.
///
/// The softmax runs over probability-space scores (see module docs). The
/// input's remainder mass is carried through unchanged: the calibrated
/// entries are scaled to sum to `1 - remainder_mass`, so the output is a
/// valid [`ProbVector`] and the remainder can never win the argmax.
pub fn apply_calibration(
    params: &CalibrationParams,
    p: &ProbVector,
) -> Result<ProbVector, CalibrationError> {
    if params.k() != p.len() {
        return Err(CalibrationError::DimensionMismatch {
            params: params.k(),
            probs: p.len(),
        });
    }
    let scores: Vec<f64> = p
        .entries()
        .iter()
        .zip(params.w_diag.iter().zip(params.b.iter()))
        .map(|(&(_, prob), (&w, &b))| w * prob + b)
        .collect();
    // Stabilized softmax; scores here are bounded (w*p+b with p in [0,1])
    // but the shift costs nothing.
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let listed_mass = 1.0 - p.remainder_mass();
    let entries = p
        .entries()
        .iter()
        .zip(exps.iter())
        .map(|(&(c, _), &e)| (c, e / z * listed_mass))
        .collect();
    ProbVector::new(entries, p.remainder_mass())
}

/// Pre-softmax calibrated scores `W * p + b`. Argmax of these equals the
/// argmax of [`apply_calibration`]'s output.
pub fn calibrated_scores(
    params: &CalibrationParams,
    p: &ProbVector,
) -> Result<Vec<f64>, CalibrationError> {
    if params.k() != p.len() {
        return Err(CalibrationError::DimensionMismatch {
            params: params.k(),
            probs: p.len(),
        });
    }
    Ok(p.entries()
        .iter()
        .zip(params.w_diag.iter().zip(params.b.iter()))
        .map(|(&(_, prob), (&w, &b))| w * prob + b)
        .collect())
}

/// Predicted class: maximum probability among listed entries, ties broken
/// by the lowest class id so that repeated runs are reproducible.
pub fn predict(q: &ProbVector) -> ClassId {
    let mut best: Option<(ClassId, f64)> = None;
    for &(class, p) in q.entries() {
        match best {
            None => best = Some((class, p)),
            Some((bc, bp)) => {
                if p > bp || (p == bp && class < bc) {
                    best = Some((class, p));
                }
            }
        }
    }
    best.map(|(c, _)| c).unwrap_or(ClassId(0))
}

// ─── Content-free estimation ─────────────────────────────────────────────────

/// Per-input and ensembled label distributions for content-free probes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContentFreeEstimate {
    /// One renormalized label distribution per content-free input that
    /// succeeded at the backend.
    pub per_input: Vec<(String, ProbVector)>,
    /// Arithmetic mean of the per-input distributions, renormalized.
    pub ensemble: ProbVector,
    /// Content-free inputs whose backend query failed; present for
    /// reporting only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_inputs: Vec<String>,
}

/// Queries the label distribution for each content-free input slotted
/// into the spec's test position and ensembles the results.
///
/// Per-input distributions are renormalized individually, then their
/// arithmetic mean is renormalized again. Inputs that fail at the
/// backend are skipped and reported in `failed_inputs`; only when every
/// input fails does the call error.
pub fn estimate_content_free(
    lm: &dyn LmBackend,
    spec: &PromptSpec,
    cf_inputs: &[String],
) -> Result<ContentFreeEstimate, CalibrationError> {
    assert!(!cf_inputs.is_empty(), "cf_inputs must be non-empty");
    let labels = spec.require_label_space()?.clone();
    let mut per_input = Vec::with_capacity(cf_inputs.len());
    let mut failed_inputs = Vec::new();
    let mut last_err: Option<BackendError> = None;
    for cf in cf_inputs {
        let probe = spec.with_test_input(cf.clone());
        let prompt = render(&probe)?;
        let query = LmQuery::new(prompt).with_context(&probe);
        match label_probs(lm, &query, &labels) {
            Ok(raw) => per_input.push((cf.clone(), renormalize_label_probs(&raw)?)),
            Err(err) => {
                failed_inputs.push(cf.clone());
                last_err = Some(err);
            }
        }
    }
    if per_input.is_empty() {
        return Err(CalibrationError::AllContentFreeInputsFailed {
            count: cf_inputs.len(),
            last: last_err.expect("at least one failure when per_input is empty"),
        });
    }
    let ensemble = mean_ensemble(per_input.iter().map(|(_, v)| v))?;
    Ok(ContentFreeEstimate {
        per_input,
        ensemble,
        failed_inputs,
    })
}

/// Arithmetic mean of probability vectors over the same class set,
/// renormalized.
pub fn mean_ensemble<'a>(
    vectors: impl Iterator<Item = &'a ProbVector>,
) -> Result<ProbVector, CalibrationError> {
    let mut acc: Vec<(ClassId, f64)> = Vec::new();
    let mut n = 0usize;
    for v in vectors {
        if acc.is_empty() {
            acc = v.entries().to_vec();
        } else {
            if acc.len() != v.len() {
                return Err(CalibrationError::DimensionMismatch {
                    params: acc.len(),
                    probs: v.len(),
                });
            }
            for (slot, &(_, p)) in acc.iter_mut().zip(v.entries()) {
                slot.1 += p;
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(CalibrationError::AllZeroMass);
    }
    renormalize_label_probs(&acc)
}

// ─── Token-space calibration (generation) ────────────────────────────────────

/// Calibration over a truncated token distribution, keyed by token.
///
/// Generation tasks calibrate only the first output token; the
/// distribution at that position is a top-k truncation of the
/// vocabulary. Parameters are fitted per token from the content-free
/// first-token estimate. Tokens seen at test time that were absent from
/// the content-free estimate get identity parameters (`w = 1`, `b = 0`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenCalibration {
    by_token: BTreeMap<String, (f64, f64)>,
}

impl TokenCalibration {
    /// Diagonal fit over a token-keyed content-free distribution.
    /// Entries at or below [`ZERO_ENTRY_EPS`] are refused, as in
    /// [`fit_diagonal`].
    pub fn fit_diagonal(cf_top: &[(String, f64)]) -> Result<Self, CalibrationError> {
        let mut by_token = BTreeMap::new();
        for (i, (token, p)) in cf_top.iter().enumerate() {
            if *p <= ZERO_ENTRY_EPS {
                return Err(CalibrationError::ZeroEntry {
                    class: ClassId(i),
                    value: *p,
                });
            }
            by_token.insert(token.clone(), (1.0 / p, 0.0));
        }
        Ok(Self { by_token })
    }

    /// Additive fit over a token-keyed content-free distribution.
    pub fn fit_additive(cf_top: &[(String, f64)]) -> Self {
        let by_token = cf_top
            .iter()
            .map(|(token, p)| (token.clone(), (1.0, -p)))
            .collect();
        Self { by_token }
    }

    /// Aligns the fitted parameters to a test-time token list, padding
    /// absent tokens with identity parameters.
    pub fn params_for(&self, tokens: &[String]) -> CalibrationParams {
        let mut w_diag = Vec::with_capacity(tokens.len());
        let mut b = Vec::with_capacity(tokens.len());
        for token in tokens {
            let &(w, bias) = self.by_token.get(token).unwrap_or(&(1.0, 0.0));
            w_diag.push(w);
            b.push(bias);
        }
        CalibrationParams { w_diag, b }
    }
}

/// Mean of token-keyed distributions over the union of their tokens.
///
/// A token missing from one input contributes zero for that input. The
/// result is not renormalized: it is a truncated distribution whose
/// uncovered mass stays in the implicit remainder.
pub fn ensemble_token_distributions(per_input: &[Vec<(String, f64)>]) -> Vec<(String, f64)> {
    let mut acc: BTreeMap<String, f64> = BTreeMap::new();
    for dist in per_input {
        for (token, p) in dist {
            *acc.entry(token.clone()).or_insert(0.0) += p;
        }
    }
    let n = per_input.len().max(1) as f64;
    acc.into_iter().map(|(t, p)| (t, p / n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(probs: &[f64]) -> ProbVector {
        ProbVector::dense(probs).unwrap()
    }

    #[test]
    fn renormalize_divides_by_sum() {
        // 0.309 + 0.191 = 0.5, so each entry doubles.
        let raw = [(ClassId(0), 0.309), (ClassId(1), 0.191)];
        let v = renormalize_label_probs(&raw).unwrap();
        assert!((v.prob(ClassId(0)) - 0.618).abs() < 1e-15);
        assert!((v.prob(ClassId(1)) - 0.382).abs() < 1e-15);
    }

    #[test]
    fn renormalize_symmetric_and_identity_cases() {
        let v = renormalize_label_probs(&[(ClassId(0), 0.25), (ClassId(1), 0.25)]).unwrap();
        assert_eq!(v.probs(), vec![0.5, 0.5]);
        let v = renormalize_label_probs(&[(ClassId(0), 1.0), (ClassId(1), 0.0)]).unwrap();
        assert_eq!(v.probs(), vec![1.0, 0.0]);
    }

    #[test]
    fn renormalize_rejects_all_zero() {
        let err = renormalize_label_probs(&[(ClassId(0), 0.0), (ClassId(1), 0.0)]).unwrap_err();
        assert!(matches!(err, CalibrationError::AllZeroMass));
    }

    #[test]
    fn fit_diagonal_takes_reciprocals() {
        let params = fit_diagonal(&pv(&[0.618, 0.382])).unwrap();
        assert!((params.w_diag[0] - 1.6181229773462784).abs() < 1e-12);
        assert!((params.w_diag[1] - 2.6178010471204187).abs() < 1e-12);
        assert_eq!(params.b, vec![0.0, 0.0]);
    }

    #[test]
    fn fit_diagonal_uniform_gives_k() {
        for k in 2..=14 {
            let params = fit_diagonal(&ProbVector::uniform(k)).unwrap();
            for w in &params.w_diag {
                assert!((w - k as f64).abs() < 1e-9);
            }
        }
        let params = fit_diagonal(&pv(&[0.5, 0.25, 0.25])).unwrap();
        assert_eq!(params.w_diag, vec![2.0, 4.0, 4.0]);
    }

    #[test]
    fn fit_diagonal_refuses_zero_entry() {
        let v = pv(&[1.0, 0.0]);
        match fit_diagonal(&v) {
            Err(CalibrationError::ZeroEntry { class, .. }) => assert_eq!(class, ClassId(1)),
            other => panic!("expected ZeroEntry, got {other:?}"),
        }
    }

    #[test]
    fn fit_additive_negates_probs() {
        let params = fit_additive(&pv(&[0.618, 0.382]));
        assert_eq!(params.w_diag, vec![1.0, 1.0]);
        assert_eq!(params.b, vec![-0.618, -0.382]);
    }

    #[test]
    fn additive_uniform_shift_preserves_argmax() {
        let params = fit_additive(&ProbVector::uniform(3));
        for probs in [[0.5, 0.3, 0.2], [0.1, 0.2, 0.7], [0.2, 0.6, 0.2]] {
            let p = pv(&probs);
            let q = apply_calibration(&params, &p).unwrap();
            assert_eq!(predict(&q), predict(&p));
        }
    }

    #[test]
    fn calibrating_the_content_free_vector_is_uniform() {
        let p_cf = pv(&[0.618, 0.382]);
        let params = fit_diagonal(&p_cf).unwrap();
        let q = apply_calibration(&params, &p_cf).unwrap();
        assert!(q.max_deviation_from_uniform() < 1e-9);
    }

    #[test]
    fn apply_matches_hand_computed_scores() {
        // w = [1/0.618, 1/0.382] applied to [0.8, 0.2]:
        // scores [1.2944983818770228, 0.5235602094240838], softmax of which
        // is [0.6837238043269936, 0.31627619567300624].
        let params = fit_diagonal(&pv(&[0.618, 0.382])).unwrap();
        let p = pv(&[0.8, 0.2]);
        let scores = calibrated_scores(&params, &p).unwrap();
        assert!((scores[0] - 1.2944983818770228).abs() < 1e-12);
        assert!((scores[1] - 0.5235602094240838).abs() < 1e-12);
        let q = apply_calibration(&params, &p).unwrap();
        assert!((q.prob(ClassId(0)) - 0.6837238043269936).abs() < 1e-12);
        assert!((q.prob(ClassId(1)) - 0.31627619567300624).abs() < 1e-12);
        assert_eq!(predict(&q), ClassId(0));
    }

    #[test]
    fn identity_params_keep_argmax() {
        let p = pv(&[0.1, 0.7, 0.2]);
        let q = apply_calibration(&CalibrationParams::identity(3), &p).unwrap();
        assert_eq!(predict(&q), ClassId(1));
    }

    #[test]
    fn apply_rejects_dimension_mismatch() {
        let params = CalibrationParams::identity(3);
        let err = apply_calibration(&params, &pv(&[0.5, 0.5])).unwrap_err();
        assert!(matches!(
            err,
            CalibrationError::DimensionMismatch {
                params: 3,
                probs: 2
            }
        ));
    }

    #[test]
    fn apply_carries_remainder_mass() {
        let p = ProbVector::new(vec![(ClassId(0), 0.5), (ClassId(1), 0.3)], 0.2).unwrap();
        let q = apply_calibration(&CalibrationParams::identity(2), &p).unwrap();
        assert!((q.remainder_mass() - 0.2).abs() < 1e-15);
        let sum: f64 = q.probs().iter().sum::<f64>() + q.remainder_mass();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn predict_breaks_ties_toward_lowest_class() {
        assert_eq!(predict(&pv(&[0.7, 0.3])), ClassId(0));
        assert_eq!(predict(&pv(&[0.5, 0.5])), ClassId(0));
        assert_eq!(predict(&pv(&[0.3, 0.35, 0.35])), ClassId(1));
    }

    #[test]
    fn uniform_cf_calibration_is_prediction_neutral() {
        let params = fit_diagonal(&ProbVector::uniform(4)).unwrap();
        for probs in [
            [0.4, 0.3, 0.2, 0.1],
            [0.1, 0.1, 0.4, 0.4],
            [0.25, 0.25, 0.25, 0.25],
        ] {
            let p = pv(&probs);
            let q = apply_calibration(&params, &p).unwrap();
            assert_eq!(predict(&q), predict(&p));
        }
    }

    #[test]
    fn mean_ensemble_of_identical_vectors_is_identity() {
        let v = pv(&[0.7, 0.3]);
        let vs = [v.clone(), v.clone(), v.clone()];
        let e = mean_ensemble(vs.iter()).unwrap();
        assert!((e.prob(ClassId(0)) - 0.7).abs() < 1e-12);
        assert!((e.prob(ClassId(1)) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn token_fit_additive_leaves_absent_tokens_alone() {
        let cf = vec![
            ("alpha".to_string(), 0.2),
            ("beta".to_string(), 0.1),
            ("gamma".to_string(), 0.05),
        ];
        let cal = TokenCalibration::fit_additive(&cf);
        let tokens: Vec<String> = ["alpha", "delta", "gamma"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let params = cal.params_for(&tokens);
        assert_eq!(params.w_diag, vec![1.0, 1.0, 1.0]);
        assert_eq!(params.b, vec![-0.2, 0.0, -0.05]);
    }

    #[test]
    fn token_fit_diagonal_pads_identity() {
        let cf = vec![("alpha".to_string(), 0.5), ("beta".to_string(), 0.25)];
        let cal = TokenCalibration::fit_diagonal(&cf).unwrap();
        let tokens: Vec<String> = ["beta", "omega"].iter().map(|s| s.to_string()).collect();
        let params = cal.params_for(&tokens);
        assert_eq!(params.w_diag, vec![4.0, 1.0]);
        assert_eq!(params.b, vec![0.0, 0.0]);
    }

    #[test]
    fn token_ensemble_averages_over_union() {
        let a = vec![("x".to_string(), 0.4), ("y".to_string(), 0.2)];
        let b = vec![("y".to_string(), 0.4)];
        let e = ensemble_token_distributions(&[a, b]);
        let m: BTreeMap<_, _> = e.into_iter().collect();
        assert!((m["x"] - 0.2).abs() < 1e-15);
        assert!((m["y"] - 0.3).abs() < 1e-15);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_dist(k: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(1e-6f64..1.0, k).prop_map(|raw| {
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / sum).collect()
            })
        }

        fn arb_dist_any_k() -> impl Strategy<Value = Vec<f64>> {
            (2usize..=14).prop_flat_map(arb_dist)
        }

        proptest! {
            #[test]
            fn diagonal_fit_calibrates_cf_to_uniform(cf in arb_dist_any_k()) {
                let p_cf = pv(&cf);
                let params = fit_diagonal(&p_cf).unwrap();
                let q = apply_calibration(&params, &p_cf).unwrap();
                prop_assert!(q.max_deviation_from_uniform() < 1e-9);
            }

            #[test]
            fn calibrated_output_is_a_distribution(probs in arb_dist(4)) {
                let p = pv(&probs);
                let params = fit_additive(&pv(&[0.4, 0.3, 0.2, 0.1]));
                let q = apply_calibration(&params, &p).unwrap();
                let sum: f64 = q.probs().iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                prop_assert!(q.probs().iter().all(|&x| x >= 0.0));
            }

            #[test]
            fn argmax_matches_pre_softmax_scores(probs in arb_dist(5), cf in arb_dist(5)) {
                let p = pv(&probs);
                let params = fit_diagonal(&pv(&cf)).unwrap();
                let q = apply_calibration(&params, &p).unwrap();
                let scores = calibrated_scores(&params, &p).unwrap();
                let score_argmax = scores
                    .iter()
                    .enumerate()
                    .fold((0usize, f64::NEG_INFINITY), |acc, (i, &s)| {
                        if s > acc.1 { (i, s) } else { acc }
                    })
                    .0;
                prop_assert_eq!(predict(&q), ClassId(score_argmax));
            }

            #[test]
            fn diagonal_fit_is_scale_invariant(probs in arb_dist(3), cf in arb_dist(3), c in 0.01f64..100.0) {
                // Scaling p_cf and renormalizing changes nothing, so the fits
                // give identical predictions.
                let scaled: Vec<f64> = cf.iter().map(|x| x * c).collect();
                let sum: f64 = scaled.iter().sum();
                let renorm: Vec<f64> = scaled.iter().map(|x| x / sum).collect();
                let a = fit_diagonal(&pv(&cf)).unwrap();
                let b = fit_diagonal(&pv(&renorm)).unwrap();
                let p = pv(&probs);
                let qa = apply_calibration(&a, &p).unwrap();
                let qb = apply_calibration(&b, &p).unwrap();
                prop_assert_eq!(predict(&qa), predict(&qb));
            }

            #[test]
            fn renormalize_preserves_relative_order(raw in proptest::collection::vec(0.0f64..1.0, 2..8)) {
                prop_assume!(raw.iter().any(|&x| x > 0.0));
                let pairs: Vec<(ClassId, f64)> =
                    raw.iter().enumerate().map(|(i, &p)| (ClassId(i), p)).collect();
                let v = renormalize_label_probs(&pairs).unwrap();
                for i in 0..raw.len() {
                    for j in 0..raw.len() {
                        if raw[i] < raw[j] {
                            prop_assert!(v.prob(ClassId(i)) <= v.prob(ClassId(j)));
                        }
                    }
                }
            }
        }
    }
}
