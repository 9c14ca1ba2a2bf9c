//! The `<SOI>`/`<EOI>` state machine and logit masking.
//!
//! Outside an item segment the whole vocabulary except `<EOI>` is allowed.
//! Emitting `<SOI>` hands control to the active grounding strategy until
//! the matching `<EOI>`:
//!
//! * [`GroundingStrategy::Retrieval`] retrieves one item from the hidden
//!   state at `<SOI>` and force-emits its surface followed by `<EOI>`;
//! * [`GroundingStrategy::TitleTree`] and [`GroundingStrategy::CodeTree`]
//!   mask every step to the prefix-tree children that still lead to an
//!   item not yet emitted in this response.

mod models;

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use models::{FnModel, RandomLogitModel, UniformModel};

use crate::catalog::{ControlTokens, EmbeddingSet, Vocab};
use crate::objectives::ProjectionParams;
use crate::seed;
use crate::trie::{NodeId, PrefixTree, TrieError, VisitCounts};
use crate::TokenId;

/// Value written into masked logit slots.
pub const MASKED: f64 = f64::NEG_INFINITY;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DecodeError {
    #[error("allowed token set is empty")]
    EmptyAllowedSet,
    #[error("catalog exhausted after {items_emitted} items")]
    ExhaustedCatalog { items_emitted: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("model returned {actual} logits for a vocabulary of {expected}")]
    VocabMismatch { expected: usize, actual: usize },
    #[error("token {0} is outside the vocabulary")]
    TokenOutOfRange(TokenId),
    #[error("k must be at least 1")]
    ZeroItems,
    #[error("max_len {max_len} cannot hold {k} items")]
    MaxLenTooSmall { max_len: usize, k: usize },
    #[error("the tree uses control token {0} as an edge")]
    ControlTokenInTree(TokenId),
    #[error("retrieval index has {surfaces} surfaces for {embeddings} embeddings")]
    IndexMismatch { surfaces: usize, embeddings: usize },
    #[error("empty retrieval index")]
    EmptyIndex,
    #[error("trie: {0}")]
    Trie(#[from] TrieError),
}

/// A scoring backbone. Implementations must be pure functions of the prefix.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;

    /// Next-token logits given the full prefix (prompt followed by response).
    fn logits(&self, prefix: &[TokenId]) -> Vec<f64>;

    /// The designated hidden vector at the last position of `prefix`.
    fn hidden(&self, prefix: &[TokenId]) -> Vec<f64>;
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn logits(&self, prefix: &[TokenId]) -> Vec<f64> {
        (**self).logits(prefix)
    }
    fn hidden(&self, prefix: &[TokenId]) -> Vec<f64> {
        (**self).hidden(prefix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Ret,
    Cgen,
    Token,
}

impl std::str::FromStr for StrategyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ret" => Ok(StrategyKind::Ret),
            "cgen" => Ok(StrategyKind::Cgen),
            "token" => Ok(StrategyKind::Token),
            other => Err(format!("unknown strategy `{other}` (expected ret|cgen|token)")),
        }
    }
}

/// Embedding index used by retrieval grounding.
#[derive(Debug, Clone, Copy)]
pub struct RetrievalIndex<'a> {
    pub projection: &'a ProjectionParams,
    pub embeddings: &'a EmbeddingSet,
    /// Token sequence inserted into the response for each catalog position.
    pub surfaces: &'a [Vec<TokenId>],
}

#[derive(Debug, Clone, Copy)]
pub enum GroundingStrategy<'a> {
    Retrieval(RetrievalIndex<'a>),
    TitleTree(&'a PrefixTree),
    CodeTree(&'a PrefixTree),
}

impl<'a> GroundingStrategy<'a> {
    pub fn kind(&self) -> StrategyKind {
        match self {
            GroundingStrategy::Retrieval(_) => StrategyKind::Ret,
            GroundingStrategy::TitleTree(_) => StrategyKind::Cgen,
            GroundingStrategy::CodeTree(_) => StrategyKind::Token,
        }
    }

    fn tree(&self) -> Option<&'a PrefixTree> {
        match *self {
            GroundingStrategy::TitleTree(t) | GroundingStrategy::CodeTree(t) => Some(t),
            GroundingStrategy::Retrieval(_) => None,
        }
    }

    /// Rejects trees that route through control tokens and indexes whose
    /// parts disagree in size.
    pub fn validate(&self, controls: ControlTokens) -> Result<(), DecodeError> {
        match self {
            GroundingStrategy::Retrieval(idx) => {
                if idx.embeddings.is_empty() {
                    return Err(DecodeError::EmptyIndex);
                }
                if idx.surfaces.len() != idx.embeddings.len() {
                    return Err(DecodeError::IndexMismatch {
                        surfaces: idx.surfaces.len(),
                        embeddings: idx.embeddings.len(),
                    });
                }
                if idx.projection.output_width() != idx.embeddings.dim() {
                    return Err(DecodeError::DimensionMismatch {
                        expected: idx.embeddings.dim(),
                        actual: idx.projection.output_width(),
                    });
                }
                Ok(())
            }
            GroundingStrategy::TitleTree(t) | GroundingStrategy::CodeTree(t) => {
                for c in [controls.soi, controls.eoi] {
                    if t.contains_token(c) {
                        return Err(DecodeError::ControlTokenInTree(c));
                    }
                }
                Ok(())
            }
        }
    }
}

/// How a token is picked from masked logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Greedy,
    Sampled { seed: u64 },
}

/// Stateful token picker for one decode session.
#[derive(Debug, Clone)]
pub struct Selector {
    rng: Option<ChaCha8Rng>,
}

impl Selector {
    pub fn new(selection: Selection) -> Self {
        match selection {
            Selection::Greedy => Selector { rng: None },
            Selection::Sampled { seed } => Selector {
                rng: Some(seed::rng_for(seed, "decode-sampling")),
            },
        }
    }

    /// Greedy takes the argmax (ties to the lowest id); sampling draws from
    /// the softmax renormalized over the unmasked entries.
    pub fn pick(&mut self, masked: &[f64]) -> Result<TokenId, DecodeError> {
        match &mut self.rng {
            None => argmax(masked).ok_or(DecodeError::EmptyAllowedSet),
            Some(rng) => {
                let max = masked.iter().copied().fold(MASKED, f64::max);
                if max == MASKED {
                    return Err(DecodeError::EmptyAllowedSet);
                }
                let weights: Vec<f64> = masked.iter().map(|&x| (x - max).exp()).collect();
                let total: f64 = weights.iter().sum();
                let mut u = rng.gen::<f64>() * total;
                let mut last = None;
                for (i, &w) in weights.iter().enumerate() {
                    if w > 0.0 {
                        last = Some(i as TokenId);
                        if u < w {
                            return Ok(i as TokenId);
                        }
                        u -= w;
                    }
                }
                last.ok_or(DecodeError::EmptyAllowedSet)
            }
        }
    }
}

/// Index of the largest finite-or-infinite value above the mask, ties to
/// the lowest index.
pub fn argmax(values: &[f64]) -> Option<TokenId> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v == MASKED || v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i as TokenId)
}

/// Keeps `allowed` entries and sets every other entry to [`MASKED`].
pub fn mask_logits(logits: &[f64], allowed: &[TokenId]) -> Result<Vec<f64>, DecodeError> {
    if allowed.is_empty() {
        return Err(DecodeError::EmptyAllowedSet);
    }
    let mut out = vec![MASKED; logits.len()];
    for &t in allowed {
        let i = t as usize;
        if i >= logits.len() {
            return Err(DecodeError::TokenOutOfRange(t));
        }
        out[i] = logits[i];
    }
    Ok(out)
}

/// Allowed next tokens for the current state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AllowedTokens {
    /// Every token except the given one.
    AllExcept(TokenId),
    /// Exactly these tokens, ascending.
    Only(Vec<TokenId>),
    /// A single token that is emitted without consulting the model.
    Forced(TokenId),
}

impl AllowedTokens {
    fn apply(&self, logits: &[f64]) -> Result<Vec<f64>, DecodeError> {
        match self {
            AllowedTokens::AllExcept(t) => {
                let mut out = logits.to_vec();
                if let Some(x) = out.get_mut(*t as usize) {
                    *x = MASKED;
                }
                Ok(out)
            }
            AllowedTokens::Only(ts) => mask_logits(logits, ts),
            AllowedTokens::Forced(t) => mask_logits(logits, &[*t]),
        }
    }

    pub fn contains(&self, token: TokenId) -> bool {
        match self {
            AllowedTokens::AllExcept(t) => token != *t,
            AllowedTokens::Only(ts) => ts.binary_search(&token).is_ok(),
            AllowedTokens::Forced(t) => token == *t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Free,
    InItem,
}

/// One decode session: response so far, segment cursor and visit counts.
#[derive(Debug, Clone)]
pub struct DecodeState {
    mode: Mode,
    cursor: NodeId,
    visits: VisitCounts,
    prompt_len: usize,
    context: Vec<TokenId>,
    segment: Vec<TokenId>,
    items_emitted: Vec<usize>,
    forced: VecDeque<TokenId>,
    pending_item: Option<usize>,
}

impl DecodeState {
    pub fn new(prompt: &[TokenId]) -> Self {
        DecodeState {
            mode: Mode::Free,
            cursor: 0,
            visits: VisitCounts::new(),
            prompt_len: prompt.len(),
            context: prompt.to_vec(),
            segment: Vec::new(),
            items_emitted: Vec::new(),
            forced: VecDeque::new(),
            pending_item: None,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn cursor(&self) -> NodeId {
        self.cursor
    }

    pub fn visits(&self) -> &VisitCounts {
        &self.visits
    }

    /// Response tokens emitted so far (prompt excluded).
    pub fn emitted(&self) -> &[TokenId] {
        &self.context[self.prompt_len..]
    }

    pub fn items_emitted(&self) -> &[usize] {
        &self.items_emitted
    }

    /// Computes the allowed set without touching the model.
    pub fn allowed_tokens(
        &self,
        strategy: &GroundingStrategy<'_>,
        controls: ControlTokens,
    ) -> Result<AllowedTokens, DecodeError> {
        if let Some(&t) = self.forced.front() {
            return Ok(AllowedTokens::Forced(t));
        }
        match (self.mode, strategy.tree()) {
            (Mode::Free, _) => Ok(AllowedTokens::AllExcept(controls.eoi)),
            (Mode::InItem, Some(tree)) => {
                let next = tree.next_tokens(self.cursor, &self.visits)?;
                if next.is_empty() {
                    Err(DecodeError::ExhaustedCatalog {
                        items_emitted: self.items_emitted.len(),
                    })
                } else if next.tokens.is_empty() {
                    Ok(AllowedTokens::Forced(controls.eoi))
                } else {
                    Ok(AllowedTokens::Only(next.with_end_token(controls.eoi)))
                }
            }
            // Retrieval segments are always fully forced.
            (Mode::InItem, None) => Err(DecodeError::EmptyAllowedSet),
        }
    }

    /// Applies a chosen token. `model` is only consulted when retrieval
    /// grounding needs the hidden state at `<SOI>`.
    pub fn advance(
        &mut self,
        token: TokenId,
        model: &dyn LanguageModel,
        strategy: &GroundingStrategy<'_>,
        controls: ControlTokens,
    ) -> Result<(), DecodeError> {
        if self.forced.front() == Some(&token) {
            self.forced.pop_front();
            self.context.push(token);
            if token == controls.eoi {
                if let Some(item) = self.pending_item.take() {
                    self.items_emitted.push(item);
                }
                self.mode = Mode::Free;
            }
            return Ok(());
        }
        match self.mode {
            Mode::Free => {
                if token == controls.eoi {
                    return Err(DecodeError::EmptyAllowedSet);
                }
                self.context.push(token);
                if token == controls.soi {
                    self.mode = Mode::InItem;
                    match strategy {
                        GroundingStrategy::Retrieval(idx) => {
                            let hidden = model.hidden(&self.context);
                            let pos = ground_ret(&hidden, idx.projection, idx.embeddings)?;
                            self.forced.extend(idx.surfaces[pos].iter().copied());
                            self.forced.push_back(controls.eoi);
                            self.pending_item = Some(pos);
                        }
                        _ => {
                            self.cursor = 0;
                            self.segment.clear();
                        }
                    }
                }
                Ok(())
            }
            Mode::InItem => {
                let tree = strategy.tree().ok_or(DecodeError::EmptyAllowedSet)?;
                if token == controls.eoi {
                    let leaf = tree.end_leaf(self.cursor)?.ok_or(TrieError::PathNotInTree)?;
                    let item = tree.terminal_item(leaf)?.ok_or(TrieError::PathNotInTree)?;
                    tree.record_completion(&mut self.visits, &self.segment)?;
                    self.items_emitted.push(item);
                    self.segment.clear();
                    self.mode = Mode::Free;
                } else {
                    let d = tree.descend(self.cursor, token)?;
                    if self.visits.get(d.node) >= tree.leaf_count(d.node)? {
                        return Err(TrieError::TokenNotAllowed {
                            node: self.cursor,
                            token,
                        }
                        .into());
                    }
                    self.cursor = d.node;
                    self.segment.push(token);
                }
                self.context.push(token);
                Ok(())
            }
        }
    }
}

/// Decodes one token and updates the state.
pub fn step(
    state: &mut DecodeState,
    model: &dyn LanguageModel,
    strategy: &GroundingStrategy<'_>,
    controls: ControlTokens,
    selector: &mut Selector,
) -> Result<TokenId, DecodeError> {
    let allowed = state.allowed_tokens(strategy, controls)?;
    let token = match allowed {
        AllowedTokens::Forced(t) => t,
        ref other => {
            let logits = model.logits(&state.context);
            if logits.len() != model.vocab_size() {
                return Err(DecodeError::VocabMismatch {
                    expected: model.vocab_size(),
                    actual: logits.len(),
                });
            }
            selector.pick(&other.apply(&logits)?)?
        }
    };
    state.advance(token, model, strategy, controls)?;
    Ok(token)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeOutput {
    pub response_tokens: Vec<TokenId>,
    pub items: Vec<usize>,
    /// Set when `max_len` stopped decoding before `k` items were closed.
    pub truncated: bool,
}

/// Decodes until `k` item segments are closed or `max_len` tokens have
/// been emitted.
pub fn decode_response(
    model: &dyn LanguageModel,
    prompt: &[TokenId],
    strategy: &GroundingStrategy<'_>,
    controls: ControlTokens,
    k: usize,
    max_len: usize,
    selection: Selection,
) -> Result<DecodeOutput, DecodeError> {
    if k == 0 {
        return Err(DecodeError::ZeroItems);
    }
    if max_len < 3 * k {
        return Err(DecodeError::MaxLenTooSmall { max_len, k });
    }
    strategy.validate(controls)?;
    if let Some(&t) = prompt.iter().find(|&&t| t as usize >= model.vocab_size()) {
        return Err(DecodeError::TokenOutOfRange(t));
    }
    let mut state = DecodeState::new(prompt);
    let mut selector = Selector::new(selection);
    let mut truncated = false;
    while state.items_emitted.len() < k || state.mode != Mode::Free {
        if state.emitted().len() >= max_len {
            truncated = true;
            break;
        }
        step(&mut state, model, strategy, controls, &mut selector)?;
    }
    Ok(DecodeOutput {
        response_tokens: state.emitted().to_vec(),
        items: state.items_emitted,
        truncated,
    })
}

/// Projects `hidden` and returns the catalog position with the largest
/// inner product, ties to the lowest position.
pub fn ground_ret(hidden: &[f64], proj: &ProjectionParams, embeddings: &EmbeddingSet) -> Result<usize, DecodeError> {
    if hidden.len() != proj.input_width() {
        return Err(DecodeError::DimensionMismatch {
            expected: proj.input_width(),
            actual: hidden.len(),
        });
    }
    if proj.output_width() != embeddings.dim() {
        return Err(DecodeError::DimensionMismatch {
            expected: embeddings.dim(),
            actual: proj.output_width(),
        });
    }
    let q = proj.forward(hidden);
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in embeddings.vectors().iter().enumerate() {
        let s: f64 = q.iter().zip(e).map(|(a, b)| a * b).sum();
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i).ok_or(DecodeError::EmptyIndex)
}

pub fn count_soi(response: &[TokenId], vocab: &Vocab) -> usize {
    response.iter().filter(|&&t| t == vocab.soi_id()).count()
}

/// Splits a response into the token runs between `<SOI>` and `<EOI>`.
/// An unterminated trailing segment is returned as well.
pub fn item_segments(response: &[TokenId], controls: ControlTokens) -> Vec<Vec<TokenId>> {
    let mut out = Vec::new();
    let mut cur: Option<Vec<TokenId>> = None;
    for &t in response {
        if t == controls.soi {
            if let Some(seg) = cur.take() {
                out.push(seg);
            }
            cur = Some(Vec::new());
        } else if t == controls.eoi {
            if let Some(seg) = cur.take() {
                out.push(seg);
            }
        } else if let Some(seg) = cur.as_mut() {
            seg.push(t);
        }
    }
    if let Some(seg) = cur {
        out.push(seg);
    }
    out
}
