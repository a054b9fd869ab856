//! Training losses with analytic gradients.
//!
//! Cross-entropy, KL divergence, and MSE back the distillation objective;
//! the multi-similarity loss drives momentum-contrast pretraining and the
//! symmetric NT-Xent loss drives cross-modal alignment. Every loss ships its
//! own gradient, validated by [`grad_check`]; there is no autodiff engine.
//!
//! Natural logarithms throughout. Probabilities are clamped at `EPS` before
//! taking logs so degenerate inputs stay finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EPS: f64 = 1e-12;

/// Discrete probability distribution over `C >= 2` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector {
    values: Vec<f64>,
}

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("probability vector needs >= 2 classes"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("probabilities must be finite and >= 0"));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(ProbVector { values })
    }

    /// One-hot distribution with mass on `class`.
    pub fn one_hot(class: usize, num_classes: usize) -> Result<Self> {
        if num_classes < 2 || class >= num_classes {
            return Err(Error::invalid("one_hot: class out of range"));
        }
        let mut values = vec![0.0; num_classes];
        values[class] = 1.0;
        Ok(ProbVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        ProbVector::new(values)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Vec<f64> {
        p.values
    }
}

fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("length mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// `-sum_i y_i ln(p_i)`.
pub fn cross_entropy(y: &ProbVector, p: &ProbVector) -> Result<f64> {
    check_same_len(y.len(), p.len())?;
    Ok(y
        .values()
        .iter()
        .zip(p.values())
        .filter(|(yi, _)| **yi > 0.0)
        .map(|(yi, pi)| -yi * pi.max(EPS).ln())
        .sum())
}

/// Gradient of [`cross_entropy`] with respect to `p`.
pub fn cross_entropy_grad_p(y: &ProbVector, p: &ProbVector) -> Result<Vec<f64>> {
    check_same_len(y.len(), p.len())?;
    Ok(y
        .values()
        .iter()
        .zip(p.values())
        .map(|(yi, pi)| if *yi > 0.0 { -yi / pi.max(EPS) } else { 0.0 })
        .collect())
}

/// `sum_i p_i ln(p_i / q_i)` where `p` is the true distribution.
pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    check_same_len(p.len(), q.len())?;
    Ok(p
        .values()
        .iter()
        .zip(q.values())
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi.max(EPS)).ln())
        .sum())
}

/// Gradient of [`kl_divergence`] with respect to `q`: `-p_i / q_i`.
pub fn kl_grad_q(p: &ProbVector, q: &ProbVector) -> Result<Vec<f64>> {
    check_same_len(p.len(), q.len())?;
    Ok(p
        .values()
        .iter()
        .zip(q.values())
        .map(|(pi, qi)| if *pi > 0.0 { -pi / qi.max(EPS) } else { 0.0 })
        .collect())
}

/// Gradient of [`kl_divergence`] with respect to `p`: `ln(p_i/q_i) + 1`.
pub fn kl_grad_p(p: &ProbVector, q: &ProbVector) -> Result<Vec<f64>> {
    check_same_len(p.len(), q.len())?;
    Ok(p
        .values()
        .iter()
        .zip(q.values())
        .map(|(pi, qi)| (pi.max(EPS) / qi.max(EPS)).ln() + 1.0)
        .collect())
}

/// `-sum_i y_i ln(y_i)`, with `0 ln 0 = 0`.
pub fn entropy(y: &ProbVector) -> f64 {
    y.values()
        .iter()
        .filter(|v| **v > 0.0)
        .map(|v| -v * v.ln())
        .sum()
}

/// Mean squared error `(1/n) sum (y_i - y_hat_i)^2`.
pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_same_len(y.len(), y_hat.len())?;
    if y.is_empty() {
        return Err(Error::invalid("mse needs n >= 1"));
    }
    let n = y.len() as f64;
    Ok(y
        .iter()
        .zip(y_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Gradient of [`mse`] with respect to `y_hat`: `2(y_hat_i - y_i)/n`.
pub fn mse_grad(y: &[f64], y_hat: &[f64]) -> Result<Vec<f64>> {
    check_same_len(y.len(), y_hat.len())?;
    if y.is_empty() {
        return Err(Error::invalid("mse needs n >= 1"));
    }
    let n = y.len() as f64;
    Ok(y.iter().zip(y_hat).map(|(a, b)| 2.0 * (b - a) / n).collect())
}

/// Pairwise similarities with positive/negative pair masks.
///
/// Rows index anchors; columns index candidates. When rows and columns refer
/// to the same embedding list, use [`SimilarityMatrix::same_set`], which also
/// rejects self-pairs on the diagonal.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    s: Vec<f64>,
    pos: Vec<bool>,
    neg: Vec<bool>,
}

impl SimilarityMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        s: Vec<f64>,
        pos: Vec<bool>,
        neg: Vec<bool>,
    ) -> Result<Self> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::invalid("similarity matrix too large"))?;
        if s.len() != n || pos.len() != n || neg.len() != n {
            return Err(Error::invalid("similarity matrix shape mismatch"));
        }
        if s.iter().any(|v| !v.is_finite() || v.abs() > 1.0 + 1e-9) {
            return Err(Error::invalid("similarities must lie in [-1, 1]"));
        }
        if pos.iter().zip(&neg).any(|(p, n)| *p && *n) {
            return Err(Error::invalid("pos and neg masks must be disjoint"));
        }
        Ok(SimilarityMatrix { rows, cols, s, pos, neg })
    }

    /// Square matrix over one embedding list; the diagonal (self-pairs) must
    /// be excluded from both masks.
    pub fn same_set(n: usize, s: Vec<f64>, pos: Vec<bool>, neg: Vec<bool>) -> Result<Self> {
        let m = Self::new(n, n, s, pos, neg)?;
        for i in 0..n {
            if m.pos[i * n + i] || m.neg[i * n + i] {
                return Err(Error::invalid("diagonal self-pairs must be unmasked"));
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.s[i * self.cols + j]
    }

    pub fn is_pos(&self, i: usize, j: usize) -> bool {
        self.pos[i * self.cols + j]
    }

    pub fn is_neg(&self, i: usize, j: usize) -> bool {
        self.neg[i * self.cols + j]
    }

    fn count(mask: &[bool]) -> usize {
        mask.iter().filter(|b| **b).count()
    }
}

/// Multi-similarity loss hyperparameters.
///
/// `alpha` weights negatives, `beta` weights positives, `lambda` is the
/// similarity margin. The two `*_term_scale` factors default to 1 (the loss
/// exactly as displayed); set them to `1/alpha` and `1/beta` for the
/// canonical multi-similarity formulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MsParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    #[serde(default = "one")]
    pub pos_term_scale: f64,
    #[serde(default = "one")]
    pub neg_term_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl MsParams {
    pub fn new(alpha: f64, beta: f64, lambda: f64) -> Result<Self> {
        let p = MsParams {
            alpha,
            beta,
            lambda,
            pos_term_scale: 1.0,
            neg_term_scale: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid("alpha must be > 0"));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid("beta must be > 0"));
        }
        if !self.lambda.is_finite() || self.lambda.abs() > 1.0 {
            return Err(Error::invalid("lambda must lie in [-1, 1]"));
        }
        Ok(())
    }
}

/// Multi-similarity loss, evaluated exactly as displayed with inner sums
/// grouped per anchor row. A term whose pair set is empty contributes 0.
pub fn multi_similarity_loss(sm: &SimilarityMatrix, params: &MsParams) -> Result<f64> {
    params.validate()?;
    let (n_pos, n_neg) = (
        SimilarityMatrix::count(&sm.pos),
        SimilarityMatrix::count(&sm.neg),
    );
    if n_pos == 0 && n_neg == 0 {
        return Err(Error::invalid("both pair masks are empty"));
    }
    let (neg_exp_rows, pos_exp_rows) = ms_row_sums(sm, params);
    let mut loss = 0.0;
    if n_pos > 0 {
        let mut t = 0.0;
        for i in 0..sm.rows {
            let p_count = (0..sm.cols).filter(|&j| sm.is_pos(i, j)).count();
            if p_count > 0 {
                t += p_count as f64 * (1.0 + neg_exp_rows[i]).ln();
            }
        }
        loss += params.pos_term_scale * t / n_pos as f64;
    }
    if n_neg > 0 {
        let mut t = 0.0;
        for i in 0..sm.rows {
            let n_count = (0..sm.cols).filter(|&j| sm.is_neg(i, j)).count();
            if n_count > 0 {
                t += n_count as f64 * (1.0 + pos_exp_rows[i]).ln();
            }
        }
        loss += params.neg_term_scale * t / n_neg as f64;
    }
    Ok(loss)
}

/// Per-row `sum_k exp(alpha (s_ik - lambda))` over negatives and
/// `sum_j exp(beta (lambda - s_ij))` over positives.
fn ms_row_sums(sm: &SimilarityMatrix, params: &MsParams) -> (Vec<f64>, Vec<f64>) {
    let mut neg_rows = vec![0.0; sm.rows];
    let mut pos_rows = vec![0.0; sm.rows];
    for i in 0..sm.rows {
        for j in 0..sm.cols {
            if sm.is_neg(i, j) {
                neg_rows[i] += (params.alpha * (sm.at(i, j) - params.lambda)).exp();
            } else if sm.is_pos(i, j) {
                pos_rows[i] += (params.beta * (params.lambda - sm.at(i, j))).exp();
            }
        }
    }
    (neg_rows, pos_rows)
}

/// Gradient of [`multi_similarity_loss`] with respect to every similarity
/// entry (row-major; unmasked entries get 0).
pub fn multi_similarity_grad(sm: &SimilarityMatrix, params: &MsParams) -> Result<Vec<f64>> {
    params.validate()?;
    let (n_pos, n_neg) = (
        SimilarityMatrix::count(&sm.pos),
        SimilarityMatrix::count(&sm.neg),
    );
    if n_pos == 0 && n_neg == 0 {
        return Err(Error::invalid("both pair masks are empty"));
    }
    let (neg_exp_rows, pos_exp_rows) = ms_row_sums(sm, params);
    let pos_counts: Vec<usize> = (0..sm.rows)
        .map(|i| (0..sm.cols).filter(|&j| sm.is_pos(i, j)).count())
        .collect();
    let neg_counts: Vec<usize> = (0..sm.rows)
        .map(|i| (0..sm.cols).filter(|&j| sm.is_neg(i, j)).count())
        .collect();
    let mut grad = vec![0.0; sm.rows * sm.cols];
    for i in 0..sm.rows {
        for j in 0..sm.cols {
            let g = &mut grad[i * sm.cols + j];
            if sm.is_neg(i, j) && n_pos > 0 {
                // s_ij appears in the first term of every positive anchored at i.
                let e = (params.alpha * (sm.at(i, j) - params.lambda)).exp();
                *g += params.pos_term_scale * pos_counts[i] as f64 / n_pos as f64
                    * params.alpha
                    * e
                    / (1.0 + neg_exp_rows[i]);
            }
            if sm.is_pos(i, j) && n_neg > 0 {
                let e = (params.beta * (params.lambda - sm.at(i, j))).exp();
                *g -= params.neg_term_scale * neg_counts[i] as f64 / n_neg as f64
                    * params.beta
                    * e
                    / (1.0 + pos_exp_rows[i]);
            }
        }
    }
    Ok(grad)
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Symmetric NT-Xent over raw (not necessarily unit-norm) paired rows.
///
/// `v[i]` and `w[i]` are a positive pair; all other in-batch combinations are
/// negatives. Both softmax directions are summed and averaged by `-1/N`.
pub fn nt_xent_raw(v: &[Vec<f64>], w: &[Vec<f64>], tau: f64) -> Result<f64> {
    let n = validate_pairs(v, w, tau)?;
    let a = pair_logits(v, w, tau);
    let mut acc = 0.0;
    for i in 0..n {
        let row_lse = log_sum_exp((0..n).map(|j| a[i * n + j]));
        let col_lse = log_sum_exp((0..n).map(|j| a[j * n + i]));
        acc += 2.0 * a[i * n + i] - row_lse - col_lse;
    }
    Ok(-acc / n as f64)
}

/// Gradients of [`nt_xent_raw`] with respect to `v` and `w`.
pub fn nt_xent_raw_grad(
    v: &[Vec<f64>],
    w: &[Vec<f64>],
    tau: f64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let n = validate_pairs(v, w, tau)?;
    let dim = v[0].len();
    let a = pair_logits(v, w, tau);
    // dL/da[i][j] = (row_softmax[i][j] + col_softmax[i][j] - 2*delta_ij) / N
    let mut ga = vec![0.0; n * n];
    for i in 0..n {
        let row_lse = log_sum_exp((0..n).map(|j| a[i * n + j]));
        for j in 0..n {
            ga[i * n + j] += (a[i * n + j] - row_lse).exp();
        }
    }
    for j in 0..n {
        let col_lse = log_sum_exp((0..n).map(|i| a[i * n + j]));
        for i in 0..n {
            ga[i * n + j] += (a[i * n + j] - col_lse).exp();
        }
    }
    for i in 0..n {
        ga[i * n + i] -= 2.0;
    }
    for g in ga.iter_mut() {
        *g /= n as f64;
    }
    let mut gv = vec![vec![0.0; dim]; n];
    let mut gw = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for j in 0..n {
            let g = ga[i * n + j] / tau;
            for d in 0..dim {
                gv[i][d] += g * w[j][d];
                gw[j][d] += g * v[i][d];
            }
        }
    }
    Ok((gv, gw))
}

fn validate_pairs(v: &[Vec<f64>], w: &[Vec<f64>], tau: f64) -> Result<usize> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid("tau must be > 0"));
    }
    if v.is_empty() || v.len() != w.len() {
        return Err(Error::invalid("need N >= 1 pairs with |V| == |W|"));
    }
    let dim = v[0].len();
    if dim == 0 || v.iter().chain(w).any(|x| x.len() != dim) {
        return Err(Error::invalid("all vectors must share a non-zero dim"));
    }
    Ok(v.len())
}

fn pair_logits(v: &[Vec<f64>], w: &[Vec<f64>], tau: f64) -> Vec<f64> {
    let n = v.len();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = crate::embedding::dot(&v[i], &w[j]) / tau;
        }
    }
    a
}

/// Symmetric NT-Xent over unit-norm embedding pairs.
pub fn clip_nt_xent(
    v: &[crate::embedding::EmbeddingVector],
    w: &[crate::embedding::EmbeddingVector],
    tau: f64,
) -> Result<f64> {
    if v.len() != w.len() {
        return Err(Error::invalid("need |V| == |W|"));
    }
    let vr: Vec<Vec<f64>> = v.iter().map(|e| e.values().to_vec()).collect();
    let wr: Vec<Vec<f64>> = w.iter().map(|e| e.values().to_vec()).collect();
    nt_xent_raw(&vr, &wr, tau)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let exps: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of softmax(logits) against `y`, with the composite gradient
/// `p - y` with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], y: &ProbVector) -> Result<(f64, Vec<f64>)> {
    check_same_len(logits.len(), y.len())?;
    let p = softmax(logits);
    let loss = y
        .values()
        .iter()
        .zip(&p)
        .filter(|(yi, _)| **yi > 0.0)
        .map(|(yi, pi)| -yi * pi.max(EPS).ln())
        .sum();
    let grad = p.iter().zip(y.values()).map(|(pi, yi)| pi - yi).collect();
    Ok((loss, grad))
}

/// `KL(p_teacher || softmax(logits / temperature))` with its gradient with
/// respect to the logits: `(q - p) / T`.
pub fn tempered_kl_to_logits(
    p_teacher: &[f64],
    logits: &[f64],
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    check_same_len(p_teacher.len(), logits.len())?;
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be > 0"));
    }
    let scaled: Vec<f64> = logits.iter().map(|x| x / temperature).collect();
    let q = softmax(&scaled);
    let loss = p_teacher
        .iter()
        .zip(&q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi.max(EPS)).ln())
        .sum();
    let grad = q
        .iter()
        .zip(p_teacher)
        .map(|(qi, pi)| (qi - pi) / temperature)
        .collect();
    Ok((loss, grad))
}

/// Compare an analytic gradient against central finite differences.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |numeric_i|)`. The loss
/// must be smooth at `x` (keep inputs away from clamped regions).
pub fn grad_check<F>(mut f: F, x: &[f64], analytic: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    let mut xs = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..xs.len() {
        let orig = xs[i];
        xs[i] = orig + h;
        let fp = f(&xs);
        xs[i] = orig - h;
        let fm = f(&xs);
        xs[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}
