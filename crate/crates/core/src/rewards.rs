//! Title-rewriting rewards and ranked-list rewards.
//!
//! A rewritten title is scored on five components combined linearly:
//! user-to-item rank preservation (U2I), item-to-item neighbourhood
//! preservation (I2I), decoding complexity (DC), compression (CR) and
//! discriminability (DPR). Code-generating recommenders are trained with
//! `R_ord` and `R_pre` over the produced list.

use serde::{Deserialize, Serialize};

use crate::catalog::EmbeddingSet;
use crate::decoder::LanguageModel;
use crate::TokenId;

pub const DEFAULT_TAU: f64 = 2000.0;
pub const DEFAULT_ALPHA_PPL: f64 = 0.1;
pub const DPR_CANDIDATES: usize = 4;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RewardError {
    #[error("rankings differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("rankings must hold at least two entries")]
    TooShort,
    #[error("rankings are not over the same candidate set")]
    CandidateMismatch,
    #[error("rank must be at least 1")]
    InvalidRank,
    #[error("rewritten title is empty")]
    EmptyRewrite,
    #[error("original title is empty")]
    EmptyOriginal,
    #[error("target sequence is empty")]
    EmptyTarget,
    #[error("catalog of {0} items is too small for {DPR_CANDIDATES} candidates")]
    CatalogTooSmall(usize),
    #[error("item position {0} out of range")]
    ItemOutOfRange(usize),
    #[error("invalid weight or value: {0}")]
    InvalidValue(String),
    #[error("perplexity must be positive, got {0}")]
    InvalidPerplexity(f64),
}

/// Row-major `N × N` co-interaction similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Items other than `i`, most similar first, ties by position.
    pub fn neighbors(&self, i: usize, top: usize) -> Vec<usize> {
        let row = self.row(i);
        let mut idx: Vec<usize> = (0..self.n).filter(|&j| j != i).collect();
        idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        idx.truncate(top);
        idx
    }
}

/// `S_ij = C_ij / (|C_i·| · |C_·j|)` where `C_ij` counts users who touched
/// both items and `|C_i·|` counts users who touched `i`. Repeated
/// interactions by one user count once. The diagonal is zero.
pub fn contribution_similarity(histories: &[Vec<usize>], n: usize) -> Result<SimilarityMatrix, RewardError> {
    let mut co = vec![0u64; n * n];
    let mut users = vec![0u64; n];
    for h in histories {
        let mut items: Vec<usize> = h.clone();
        items.sort_unstable();
        items.dedup();
        if let Some(&bad) = items.iter().find(|&&i| i >= n) {
            return Err(RewardError::ItemOutOfRange(bad));
        }
        for (a, &i) in items.iter().enumerate() {
            users[i] += 1;
            for &j in &items[a + 1..] {
                co[i * n + j] += 1;
                co[j * n + i] += 1;
            }
        }
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let c = co[i * n + j];
            if c > 0 {
                values[i * n + j] = c as f64 / (users[i] as f64 * users[j] as f64);
            }
        }
    }
    Ok(SimilarityMatrix { n, values })
}

/// Spearman's ρ between two orderings of the same candidates.
pub fn spearman(rank_a: &[usize], rank_b: &[usize]) -> Result<f64, RewardError> {
    if rank_a.len() != rank_b.len() {
        return Err(RewardError::LengthMismatch(rank_a.len(), rank_b.len()));
    }
    let n = rank_a.len();
    if n < 2 {
        return Err(RewardError::TooShort);
    }
    let mut pos_b = std::collections::HashMap::with_capacity(n);
    for (r, &item) in rank_b.iter().enumerate() {
        if pos_b.insert(item, r).is_some() {
            return Err(RewardError::CandidateMismatch);
        }
    }
    let mut seen = std::collections::HashSet::with_capacity(n);
    let mut d2: u128 = 0;
    for (r, item) in rank_a.iter().enumerate() {
        if !seen.insert(item) {
            return Err(RewardError::CandidateMismatch);
        }
        let rb = *pos_b.get(item).ok_or(RewardError::CandidateMismatch)?;
        let d = r.abs_diff(rb) as u128;
        d2 += d * d;
    }
    let n = n as f64;
    Ok(1.0 - 6.0 * d2 as f64 / (n * (n * n - 1.0)))
}

/// Fractional (average) ranks, 1-based, highest score first.
pub fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's ρ between two score vectors over the same candidates, with
/// tied scores given average ranks. A constant vector yields 0.
pub fn spearman_scores(a: &[f64], b: &[f64]) -> Result<f64, RewardError> {
    if a.len() != b.len() {
        return Err(RewardError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(RewardError::TooShort);
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

pub fn r_i2i(pi_orig: &[usize], pi_gen: &[usize]) -> Result<f64, RewardError> {
    Ok(0.5 * (1.0 + spearman(pi_orig, pi_gen)?))
}

pub fn r_u2i(rank_of_target: usize, tau: f64) -> Result<f64, RewardError> {
    if rank_of_target < 1 {
        return Err(RewardError::InvalidRank);
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(RewardError::InvalidValue(format!("tau {tau}")));
    }
    Ok((-((rank_of_target - 1) as f64) / tau).exp())
}

fn log_softmax_at(logits: &[f64], t: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits[t] - lse
}

/// `exp(−(1/|y|) Σ_j log P(y_j | x, y_<j))`.
pub fn conditional_perplexity(
    model: &dyn LanguageModel,
    context: &[TokenId],
    target: &[TokenId],
) -> Result<f64, RewardError> {
    if target.is_empty() {
        return Err(RewardError::EmptyTarget);
    }
    let mut prefix = context.to_vec();
    let mut nll = 0.0;
    for &t in target {
        let logits = model.logits(&prefix);
        if t as usize >= logits.len() {
            return Err(RewardError::InvalidValue(format!(
                "token {t} outside the model vocabulary"
            )));
        }
        nll -= log_softmax_at(&logits, t as usize);
        prefix.push(t);
    }
    Ok((nll / target.len() as f64).exp())
}

pub fn r_dc(ppl: f64, alpha_ppl: f64) -> Result<f64, RewardError> {
    if ppl.is_nan() || ppl <= 0.0 {
        return Err(RewardError::InvalidPerplexity(ppl));
    }
    if !(alpha_ppl > 0.0 && alpha_ppl.is_finite()) {
        return Err(RewardError::InvalidValue(format!("alpha_ppl {alpha_ppl}")));
    }
    Ok((-alpha_ppl * ppl).exp())
}

pub fn r_cr(len_x: usize, len_y: usize) -> Result<f64, RewardError> {
    if len_x == 0 {
        return Err(RewardError::EmptyOriginal);
    }
    if len_y == 0 {
        return Err(RewardError::EmptyRewrite);
    }
    let ratio = len_y as f64 / len_x as f64;
    Ok(1.0 / (1.0 + ratio * ratio))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// The true item followed by its three most cosine-similar items.
pub fn build_dpr_candidates(item: usize, embeddings: &EmbeddingSet) -> Result<[usize; DPR_CANDIDATES], RewardError> {
    let n = embeddings.len();
    if n < DPR_CANDIDATES {
        return Err(RewardError::CatalogTooSmall(n));
    }
    if item >= n {
        return Err(RewardError::ItemOutOfRange(item));
    }
    let q = embeddings.vector(item);
    let mut others: Vec<(usize, f64)> = (0..n)
        .filter(|&j| j != item)
        .map(|j| (j, cosine(q, embeddings.vector(j))))
        .collect();
    others.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok([item, others[0].0, others[1].0, others[2].0])
}

/// Picks the candidate whose embedding best matches the rewrite's
/// embedding, ties to the earliest candidate.
pub fn cosine_discriminator(rewrite: &[f64], candidates: &[usize], embeddings: &EmbeddingSet) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &c in candidates {
        let s = cosine(rewrite, embeddings.vector(c));
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((c, s));
        }
    }
    best.map(|(c, _)| c)
}

pub fn r_dpr(selected: usize, truth: usize) -> f64 {
    if selected == truth {
        1.0
    } else {
        0.0
    }
}

/// `λ₁..λ₅` in the order U2I, I2I, DC, CR, DPR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub u2i: f64,
    pub i2i: f64,
    pub dc: f64,
    pub cr: f64,
    pub dpr: f64,
}

impl RewardWeights {
    pub fn new(u2i: f64, i2i: f64, dc: f64, cr: f64, dpr: f64) -> Result<Self, RewardError> {
        let w = RewardWeights { u2i, i2i, dc, cr, dpr };
        if w.as_array().iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(RewardError::InvalidValue(format!("weights {:?}", w.as_array())));
        }
        Ok(w)
    }

    pub fn uniform() -> Self {
        RewardWeights::new(1.0, 1.0, 1.0, 1.0, 1.0).unwrap()
    }

    pub fn steam() -> Self {
        RewardWeights::new(3.0, 1.0, 2.5, 1.0, 1.0).unwrap()
    }

    pub fn movies_toys() -> Self {
        RewardWeights::new(4.0, 1.0, 2.0, 1.0, 1.0).unwrap()
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "uniform" => Some(Self::uniform()),
            "steam" => Some(Self::steam()),
            "movies" | "toys" | "movies_toys" => Some(Self::movies_toys()),
            _ => None,
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.u2i, self.i2i, self.dc, self.cr, self.dpr]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    pub u2i: f64,
    pub i2i: f64,
    pub dc: f64,
    pub cr: f64,
    pub dpr: f64,
}

impl RewardComponents {
    pub fn as_array(&self) -> [f64; 5] {
        [self.u2i, self.i2i, self.dc, self.cr, self.dpr]
    }
}

pub fn combine_rewards(components: &RewardComponents, weights: &RewardWeights) -> Result<f64, RewardError> {
    let c = components.as_array();
    if c.iter().any(|x| !x.is_finite()) {
        return Err(RewardError::InvalidValue(format!("components {c:?}")));
    }
    Ok(c.iter().zip(weights.as_array()).map(|(a, b)| a * b).sum())
}

/// `1/log₂(rank+1)` at the first occurrence of `target`, else 0.
pub fn r_ord(list: &[usize], target: usize) -> f64 {
    match list.iter().position(|&x| x == target) {
        Some(i) => 1.0 / ((i + 2) as f64).log2(),
        None => 0.0,
    }
}

pub fn r_pre(list: &[usize], target: usize) -> f64 {
    if list.contains(&target) {
        1.0
    } else {
        0.0
    }
}

/// 1-based rank of `target` among all items by cosine similarity to the
/// mean embedding of `history`; ties are resolved in the target's favour
/// only against later positions.
pub fn u2i_rank(history: &[usize], target: usize, embeddings: &EmbeddingSet) -> Result<usize, RewardError> {
    if target >= embeddings.len() {
        return Err(RewardError::ItemOutOfRange(target));
    }
    if history.is_empty() {
        return Err(RewardError::InvalidValue("empty history".into()));
    }
    let mut user = vec![0.0; embeddings.dim()];
    for &h in history {
        if h >= embeddings.len() {
            return Err(RewardError::ItemOutOfRange(h));
        }
        for (u, x) in user.iter_mut().zip(embeddings.vector(h)) {
            *u += x;
        }
    }
    let st = cosine(&user, embeddings.vector(target));
    let better = (0..embeddings.len())
        .filter(|&j| {
            let s = cosine(&user, embeddings.vector(j));
            s > st || (s == st && j < target)
        })
        .count();
    Ok(better + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_co_occurrence_has_unit_similarity() {
        let s = contribution_similarity(&[vec![0, 1]], 3).unwrap();
        assert_eq!(s.get(0, 1), 1.0);
        assert_eq!(s.get(1, 0), 1.0);
        assert_eq!(s.get(0, 2), 0.0);
        assert_eq!(s.get(0, 0), 0.0);
    }

    #[test]
    fn spearman_extremes() {
        let a: Vec<usize> = (0..10).collect();
        let mut r = a.clone();
        r.reverse();
        assert_eq!(spearman(&a, &a).unwrap(), 1.0);
        assert_eq!(spearman(&a, &r).unwrap(), -1.0);
        assert_eq!(r_i2i(&a, &a).unwrap(), 1.0);
        assert_eq!(r_i2i(&a, &r).unwrap(), 0.0);
        assert_eq!(spearman(&a, &a[..9]), Err(RewardError::LengthMismatch(10, 9)));
        assert_eq!(spearman(&[1, 2], &[1, 3]), Err(RewardError::CandidateMismatch));
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 0.0]), vec![1.5, 3.0, 1.5, 4.0]);
        assert_eq!(spearman_scores(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn u2i_values() {
        assert_eq!(r_u2i(1, DEFAULT_TAU).unwrap(), 1.0);
        assert!((r_u2i(2001, DEFAULT_TAU).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!((r_u2i(2001, DEFAULT_TAU).unwrap() - 0.3679).abs() < 1e-4);
        assert_eq!(r_u2i(0, DEFAULT_TAU), Err(RewardError::InvalidRank));
    }

    #[test]
    fn dc_and_cr_values() {
        assert!((r_dc(1.0, 1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!(r_dc(1e-12, 0.1).unwrap() > 0.999_999);
        assert!(r_dc(0.0, 0.1).is_err());
        assert_eq!(r_cr(10, 10).unwrap(), 0.5);
        assert_eq!(r_cr(10, 5).unwrap(), 0.8);
        assert_eq!(r_cr(10, 0), Err(RewardError::EmptyRewrite));
        assert!(r_cr(1, 10_000).unwrap() < 1e-7);
    }

    #[test]
    fn combine_and_presets() {
        let ones = RewardComponents {
            u2i: 1.0,
            i2i: 1.0,
            dc: 1.0,
            cr: 1.0,
            dpr: 1.0,
        };
        assert_eq!(combine_rewards(&ones, &RewardWeights::uniform()).unwrap(), 5.0);
        assert_eq!(RewardWeights::steam().as_array(), [3.0, 1.0, 2.5, 1.0, 1.0]);
        let zero = RewardWeights::new(0.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(combine_rewards(&ones, &zero).unwrap(), 0.0);
        assert!(RewardWeights::new(-1.0, 0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn list_rewards() {
        assert_eq!(r_ord(&[4, 5, 6], 4), 1.0);
        assert_eq!(r_ord(&[4, 5, 6], 6), 0.5);
        assert_eq!(r_ord(&[4, 5, 6], 7), 0.0);
        assert_eq!(r_pre(&[4, 5, 6], 5), 1.0);
        assert_eq!(r_pre(&[4, 5, 6], 7), 0.0);
    }

    #[test]
    fn dpr_on_four_items_uses_every_other_item() {
        let e = EmbeddingSet::new(2, vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.9, 0.1], vec![-1.0, 0.0]]).unwrap();
        let c = build_dpr_candidates(0, &e).unwrap();
        assert_eq!(c, [0, 2, 1, 3]);
        assert_eq!(r_dpr(0, 0), 1.0);
        assert_eq!(r_dpr(1, 0), 0.0);
    }
}
