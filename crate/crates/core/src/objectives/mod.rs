//! Training objectives with hand-derived gradients.
//!
//! * masked LM loss: cross-entropy over response positions outside item
//!   segments (the `<SOI>` token itself counts, item tokens and `<EOI>` do not);
//! * scope-mask loss: cross-entropy at every response position with the
//!   softmax denominator restricted to the valid next-token set;
//! * retrieval loss: `-(1/K) Σ log σ(proj(h_j) · e_j)` over the `<SOI>`
//!   hidden states of a response;
//! * combined loss: `L_lm + α · L_ret`.
//!
//! All gradients come from `softmax − onehot` over the active support and
//! the chain rule through the projection; there is no autodiff.

mod projection;
mod toy;

use serde::{Deserialize, Serialize};

pub use projection::{gelu, gelu_derivative, ProjectionParams, ProjectionTrace};
pub use toy::ToyLm;

use crate::catalog::{self, Catalog, ControlTokens, EmbeddingSet};
use crate::seed;
use crate::trie::PrefixTree;
use crate::TokenId;

pub const DEFAULT_ALPHA_RET: f64 = 1.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ObjectiveError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("response position {position}: token {token} is not a valid continuation of the item prefix")]
    InvalidItemPath { position: usize, token: TokenId },
    #[error("token {token} outside a vocabulary of {vocab}")]
    TokenOutOfRange { token: TokenId, vocab: usize },
    #[error("loss became non-finite at step {0}")]
    Divergence(usize),
    #[error("invalid training setup: {0}")]
    Setup(String),
}

/// One instruction/response pair with its item-segment annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub instruction: Vec<TokenId>,
    pub response: Vec<TokenId>,
    /// True on tokens strictly inside an item segment and on `<EOI>`.
    pub item_token_mask: Vec<bool>,
    pub soi_positions: Vec<usize>,
    pub target_items: Vec<usize>,
}

impl TrainingExample {
    /// Derives the mask and `<SOI>` positions. Segments must be balanced and
    /// there must be one target item per segment.
    pub fn new(
        instruction: Vec<TokenId>,
        response: Vec<TokenId>,
        target_items: Vec<usize>,
        controls: ControlTokens,
    ) -> Result<Self, ObjectiveError> {
        let mut mask = Vec::with_capacity(response.len());
        let mut soi_positions = Vec::new();
        let mut inside = false;
        for (j, &t) in response.iter().enumerate() {
            if t == controls.soi {
                if inside {
                    return Err(ObjectiveError::MalformedResponse(format!("nested <SOI> at {j}")));
                }
                inside = true;
                soi_positions.push(j);
                mask.push(false);
            } else if t == controls.eoi {
                if !inside {
                    return Err(ObjectiveError::MalformedResponse(format!(
                        "<EOI> outside a segment at {j}"
                    )));
                }
                inside = false;
                mask.push(true);
            } else {
                mask.push(inside);
            }
        }
        if inside {
            return Err(ObjectiveError::MalformedResponse("unterminated item segment".into()));
        }
        if soi_positions.len() != target_items.len() {
            return Err(ObjectiveError::MalformedResponse(format!(
                "{} segments but {} target items",
                soi_positions.len(),
                target_items.len()
            )));
        }
        Ok(TrainingExample {
            instruction,
            response,
            item_token_mask: mask,
            soi_positions,
            target_items,
        })
    }

    /// Context seen when predicting `response[j]`.
    pub fn prefix(&self, j: usize) -> Vec<TokenId> {
        let mut p = Vec::with_capacity(self.instruction.len() + j);
        p.extend_from_slice(&self.instruction);
        p.extend_from_slice(&self.response[..j]);
        p
    }

    fn check_vocab(&self, vocab: usize) -> Result<(), ObjectiveError> {
        match self
            .instruction
            .iter()
            .chain(&self.response)
            .find(|&&t| t as usize >= vocab)
        {
            Some(&token) => Err(ObjectiveError::TokenOutOfRange { token, vocab }),
            None => Ok(()),
        }
    }
}

/// Softmax support at one position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Support {
    Full,
    /// Ascending token ids.
    Restricted(Vec<TokenId>),
}

/// The valid-next-token function used by the scope-mask loss.
pub trait TokenScope {
    fn support(&self, response_prefix: &[TokenId]) -> Result<Support, ObjectiveError>;
}

/// The full vocabulary at every position.
#[derive(Debug, Clone, Copy, Default)]
pub struct FullScope;

impl TokenScope for FullScope {
    fn support(&self, _response_prefix: &[TokenId]) -> Result<Support, ObjectiveError> {
        Ok(Support::Full)
    }
}

/// Full vocabulary in free text, prefix-tree children (plus `<EOI>` where a
/// surface can end) inside item segments.
#[derive(Debug, Clone, Copy)]
pub struct TreeScope<'a> {
    pub tree: &'a PrefixTree,
    pub controls: ControlTokens,
}

impl TokenScope for TreeScope<'_> {
    fn support(&self, response_prefix: &[TokenId]) -> Result<Support, ObjectiveError> {
        let last_control = response_prefix
            .iter()
            .rposition(|&t| t == self.controls.soi || t == self.controls.eoi);
        let start = match last_control {
            Some(i) if response_prefix[i] == self.controls.soi => i + 1,
            _ => return Ok(Support::Full),
        };
        let mut node = self.tree.root();
        for (off, &t) in response_prefix[start..].iter().enumerate() {
            node = self
                .tree
                .descend(node, t)
                .map_err(|_| ObjectiveError::InvalidItemPath {
                    position: start + off,
                    token: t,
                })?
                .node;
        }
        let mut allowed: Vec<TokenId> = self
            .tree
            .children(node)
            .map_err(|e| ObjectiveError::Setup(e.to_string()))?
            .map(|(t, _)| t)
            .collect();
        if self.tree.end_leaf(node).ok().flatten().is_some() {
            if let Err(i) = allowed.binary_search(&self.controls.eoi) {
                allowed.insert(i, self.controls.eoi);
            }
        }
        Ok(Support::Restricted(allowed))
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `−log softmax_S(z)[target]` and its gradient `p_S − onehot`, with
/// zeros outside the support `S`.
pub fn restricted_cross_entropy(
    logits: &[f64],
    target: TokenId,
    support: &Support,
) -> Result<(f64, Vec<f64>), ObjectiveError> {
    let t = target as usize;
    if t >= logits.len() {
        return Err(ObjectiveError::TokenOutOfRange {
            token: target,
            vocab: logits.len(),
        });
    }
    let mut grad = vec![0.0; logits.len()];
    let loss = match support {
        Support::Full => {
            let lse = log_sum_exp(logits.iter().copied());
            for (g, &z) in grad.iter_mut().zip(logits) {
                *g = (z - lse).exp();
            }
            lse - logits[t]
        }
        Support::Restricted(s) => {
            if s.binary_search(&target).is_err() {
                return Err(ObjectiveError::InvalidItemPath {
                    position: 0,
                    token: target,
                });
            }
            let lse = log_sum_exp(s.iter().map(|&i| logits[i as usize]));
            for &i in s {
                grad[i as usize] = (logits[i as usize] - lse).exp();
            }
            lse - logits[t]
        }
    };
    grad[t] -= 1.0;
    Ok((loss, grad))
}

/// Sum of `−log P(Y_j | Y_<j, X)` over positions outside item segments.
pub fn masked_lm_loss(model: &ToyLm, example: &TrainingExample) -> Result<(f64, Vec<f64>), ObjectiveError> {
    use crate::decoder::LanguageModel;
    example.check_vocab(model.vocab_size())?;
    let mut grad = vec![0.0; model.param_count()];
    let mut loss = 0.0;
    for (j, &y) in example.response.iter().enumerate() {
        if example.item_token_mask[j] {
            continue;
        }
        let prefix = example.prefix(j);
        let f = model.feature(&prefix);
        let z = model.logits_from_feature(&f);
        let (l, dz) = restricted_cross_entropy(&z, y, &Support::Full)?;
        loss += l;
        model.backprop_logits(&prefix, &f, &dz, &mut grad);
    }
    Ok((loss, grad))
}

/// Sum over all response positions of cross-entropy restricted to
/// `scope.support(Y_<j)`.
pub fn scope_mask_loss(
    model: &ToyLm,
    example: &TrainingExample,
    scope: &dyn TokenScope,
) -> Result<(f64, Vec<f64>), ObjectiveError> {
    use crate::decoder::LanguageModel;
    example.check_vocab(model.vocab_size())?;
    let mut grad = vec![0.0; model.param_count()];
    let mut loss = 0.0;
    for (j, &y) in example.response.iter().enumerate() {
        let support = scope.support(&example.response[..j])?;
        let prefix = example.prefix(j);
        let f = model.feature(&prefix);
        let z = model.logits_from_feature(&f);
        let (l, dz) = restricted_cross_entropy(&z, y, &support).map_err(|e| match e {
            ObjectiveError::InvalidItemPath { token, .. } => ObjectiveError::InvalidItemPath { position: j, token },
            other => other,
        })?;
        loss += l;
        model.backprop_logits(&prefix, &f, &dz, &mut grad);
    }
    Ok((loss, grad))
}

/// Per-position scope-mask and full-vocabulary cross-entropies, for
/// comparing the two denominators.
pub fn per_position_losses(
    model: &ToyLm,
    example: &TrainingExample,
    scope: &dyn TokenScope,
) -> Result<Vec<(f64, f64)>, ObjectiveError> {
    let mut out = Vec::with_capacity(example.response.len());
    for (j, &y) in example.response.iter().enumerate() {
        let support = scope.support(&example.response[..j])?;
        let z = model.logits_from_feature(&model.feature(&example.prefix(j)));
        let (scoped, _) = restricted_cross_entropy(&z, y, &support)?;
        let (full, _) = restricted_cross_entropy(&z, y, &Support::Full)?;
        out.push((scoped, full));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalLoss {
    pub loss: f64,
    /// `∂L/∂h_j` for every hidden state, for backpropagation upstream.
    pub grad_hidden: Vec<Vec<f64>>,
    pub grad_w1: Vec<f64>,
    pub grad_w2: Vec<f64>,
}

/// `log σ(s)` computed without overflow.
fn log_sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        -(-s).exp().ln_1p()
    } else {
        s - s.exp().ln_1p()
    }
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `−(1/K) Σ_j log σ(proj(h_j) · e_j)` with gradients for the hidden states
/// and both projection matrices.
pub fn retrieval_loss(
    hiddens: &[Vec<f64>],
    proj: &ProjectionParams,
    targets: &[&[f64]],
) -> Result<RetrievalLoss, ObjectiveError> {
    if hiddens.is_empty() || hiddens.len() != targets.len() {
        return Err(ObjectiveError::Shape(format!(
            "{} hidden states for {} targets",
            hiddens.len(),
            targets.len()
        )));
    }
    let k = hiddens.len() as f64;
    let mut grad_w1 = vec![0.0; proj.w1().len()];
    let mut grad_w2 = vec![0.0; proj.w2().len()];
    let mut grad_hidden = Vec::with_capacity(hiddens.len());
    let mut loss = 0.0;
    for (h, e) in hiddens.iter().zip(targets) {
        if h.len() != proj.input_width() || e.len() != proj.output_width() {
            return Err(ObjectiveError::Shape(format!(
                "hidden {} / target {} vs projection {} -> {}",
                h.len(),
                e.len(),
                proj.input_width(),
                proj.output_width()
            )));
        }
        let trace = proj.forward_trace(h);
        let s: f64 = trace.output.iter().zip(e.iter()).map(|(a, b)| a * b).sum();
        loss -= log_sigmoid(s) / k;
        let ds = -(1.0 - sigmoid(s)) / k;
        let d_out: Vec<f64> = e.iter().map(|&x| ds * x).collect();
        grad_hidden.push(proj.backward(h, &trace, &d_out, &mut grad_w1, &mut grad_w2));
    }
    Ok(RetrievalLoss {
        loss,
        grad_hidden,
        grad_w1,
        grad_w2,
    })
}

pub fn combined_ret_loss(lm_loss: f64, ret_loss: f64, alpha_ret: f64) -> f64 {
    lm_loss + alpha_ret * ret_loss
}

/// Gradients of the combined loss for a toy model with a projection head.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedGradients {
    pub loss: f64,
    pub lm_loss: f64,
    pub ret_loss: f64,
    pub grad_theta: Vec<f64>,
    pub grad_w1: Vec<f64>,
    pub grad_w2: Vec<f64>,
}

/// `L_lm + α L_ret` for one example; hidden states are taken at each
/// `<SOI>` position (prefix including the `<SOI>` token).
pub fn combined_ret_objective(
    model: &ToyLm,
    proj: &ProjectionParams,
    example: &TrainingExample,
    embeddings: &EmbeddingSet,
    alpha_ret: f64,
) -> Result<CombinedGradients, ObjectiveError> {
    let (lm_loss, mut grad_theta) = masked_lm_loss(model, example)?;
    let mut grad_w1 = vec![0.0; proj.w1().len()];
    let mut grad_w2 = vec![0.0; proj.w2().len()];
    let mut ret_loss = 0.0;
    if !example.soi_positions.is_empty() {
        let prefixes: Vec<Vec<TokenId>> = example.soi_positions.iter().map(|&p| example.prefix(p + 1)).collect();
        let hiddens: Vec<Vec<f64>> = prefixes.iter().map(|p| model.feature(p)).collect();
        let targets = example
            .target_items
            .iter()
            .map(|&i| {
                if i < embeddings.len() {
                    Ok(embeddings.vector(i))
                } else {
                    Err(ObjectiveError::Shape(format!("target item {i} has no embedding")))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let r = retrieval_loss(&hiddens, proj, &targets)?;
        ret_loss = r.loss;
        for (p, dh) in prefixes.iter().zip(&r.grad_hidden) {
            let scaled: Vec<f64> = dh.iter().map(|x| alpha_ret * x).collect();
            model.backprop_feature(p, &scaled, &mut grad_theta);
        }
        grad_w1 = r.grad_w1.iter().map(|g| alpha_ret * g).collect();
        grad_w2 = r.grad_w2.iter().map(|g| alpha_ret * g).collect();
    }
    Ok(CombinedGradients {
        loss: combined_ret_loss(lm_loss, ret_loss, alpha_ret),
        lm_loss,
        ret_loss,
        grad_theta,
        grad_w1,
        grad_w2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MaskedLm,
    ScopeMask,
    CombinedRet,
}

impl std::str::FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "masked_lm" | "masked-lm" => Ok(LossKind::MaskedLm),
            "scope_mask" | "scope-mask" => Ok(LossKind::ScopeMask),
            "combined_ret" | "combined-ret" => Ok(LossKind::CombinedRet),
            other => Err(format!("unknown loss kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub alpha_ret: f64,
    /// Examples per step; `None` means full batch.
    pub batch_size: Option<usize>,
}

impl TrainConfig {
    pub fn new(loss: LossKind, steps: usize, learning_rate: f64, seed: u64) -> Self {
        TrainConfig {
            loss,
            steps,
            learning_rate,
            seed,
            alpha_ret: DEFAULT_ALPHA_RET,
            batch_size: None,
        }
    }
}

/// What the chosen loss needs besides the model and examples.
#[derive(Clone, Copy, Default)]
pub struct TrainResources<'a> {
    /// Required for [`LossKind::ScopeMask`].
    pub scope: Option<&'a dyn TokenScope>,
    /// Required for [`LossKind::CombinedRet`].
    pub embeddings: Option<&'a EmbeddingSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ToyLm,
    /// Present for [`LossKind::CombinedRet`].
    pub projection: Option<ProjectionParams>,
    /// Mean batch loss before each update.
    pub trace: Vec<f64>,
}

/// Plain gradient descent on the mean per-example loss.
pub fn train_toy(
    model: ToyLm,
    projection: Option<ProjectionParams>,
    examples: &[TrainingExample],
    resources: TrainResources<'_>,
    config: &TrainConfig,
) -> Result<TrainOutcome, ObjectiveError> {
    if config.steps == 0 {
        return Err(ObjectiveError::Setup("steps must be at least 1".into()));
    }
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(ObjectiveError::Setup(format!(
            "learning rate {} is invalid",
            config.learning_rate
        )));
    }
    if examples.is_empty() {
        return Err(ObjectiveError::Setup("no training examples".into()));
    }
    let mut model = model;
    let mut projection = projection;
    match config.loss {
        LossKind::ScopeMask if resources.scope.is_none() => {
            return Err(ObjectiveError::Setup("scope-mask loss needs a token scope".into()))
        }
        LossKind::CombinedRet => {
            let emb = resources
                .embeddings
                .ok_or_else(|| ObjectiveError::Setup("combined loss needs item embeddings".into()))?;
            if projection.is_none() {
                projection = Some(ProjectionParams::random(
                    model.width(),
                    emb.dim(),
                    seed::derive(config.seed, "projection"),
                )?);
            }
        }
        _ => {}
    }

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = seed::rng_for(config.seed, "train-batches");
    let batch = config.batch_size.unwrap_or(examples.len()).clamp(1, examples.len());
    let mut cursor = examples.len();
    let mut trace = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        if batch < examples.len() && cursor + batch > examples.len() {
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let ids: &[usize] = if batch < examples.len() {
            let s = &order[cursor..cursor + batch];
            cursor += batch;
            s
        } else {
            &order
        };

        let mut grad = vec![0.0; model.param_count()];
        let mut gw1 = projection.as_ref().map(|p| vec![0.0; p.w1().len()]);
        let mut gw2 = projection.as_ref().map(|p| vec![0.0; p.w2().len()]);
        let mut total = 0.0;
        for &i in ids {
            let ex = &examples[i];
            match config.loss {
                LossKind::MaskedLm => {
                    let (l, g) = masked_lm_loss(&model, ex)?;
                    total += l;
                    add_into(&mut grad, &g);
                }
                LossKind::ScopeMask => {
                    let (l, g) = scope_mask_loss(&model, ex, resources.scope.unwrap())?;
                    total += l;
                    add_into(&mut grad, &g);
                }
                LossKind::CombinedRet => {
                    let c = combined_ret_objective(
                        &model,
                        projection.as_ref().unwrap(),
                        ex,
                        resources.embeddings.unwrap(),
                        config.alpha_ret,
                    )?;
                    total += c.loss;
                    add_into(&mut grad, &c.grad_theta);
                    add_into(gw1.as_mut().unwrap(), &c.grad_w1);
                    add_into(gw2.as_mut().unwrap(), &c.grad_w2);
                }
            }
        }
        let n = ids.len() as f64;
        let mean = total / n;
        if !mean.is_finite() {
            return Err(ObjectiveError::Divergence(step));
        }
        trace.push(mean);
        let scale = config.learning_rate / n;
        if scale != 0.0 {
            for (p, g) in model.params_mut().iter_mut().zip(&grad) {
                *p -= scale * g;
            }
            if let (Some(p), Some(g1), Some(g2)) = (projection.as_mut(), gw1.as_ref(), gw2.as_ref()) {
                for (w, g) in p.w1_mut().iter_mut().zip(g1) {
                    *w -= scale * g;
                }
                for (w, g) in p.w2_mut().iter_mut().zip(g2) {
                    *w -= scale * g;
                }
            }
            if model.params().iter().any(|x| !x.is_finite()) {
                return Err(ObjectiveError::Divergence(step));
            }
        }
    }
    Ok(TrainOutcome {
        model,
        projection,
        trace,
    })
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

/// Gradient descent on the retrieval loss alone, for a fixed set of
/// `(hidden, item)` pairs. Returns the per-step loss trace.
pub fn train_projection(
    proj: &mut ProjectionParams,
    hiddens: &[Vec<f64>],
    targets: &[&[f64]],
    steps: usize,
    learning_rate: f64,
) -> Result<Vec<f64>, ObjectiveError> {
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let r = retrieval_loss(hiddens, proj, targets)?;
        if !r.loss.is_finite() {
            return Err(ObjectiveError::Divergence(step));
        }
        trace.push(r.loss);
        for (w, g) in proj.w1_mut().iter_mut().zip(&r.grad_w1) {
            *w -= learning_rate * g;
        }
        for (w, g) in proj.w2_mut().iter_mut().zip(&r.grad_w2) {
            *w -= learning_rate * g;
        }
    }
    Ok(trace)
}

/// How training examples are cut from interaction histories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExampleOptions {
    /// Number of item segments in each response: the sampled next item and
    /// the distinct items that follow it in the history.
    pub max_labels: usize,
    /// Augmented samples drawn per history.
    pub samples_per_history: usize,
}

impl Default for ExampleOptions {
    fn default() -> Self {
        ExampleOptions {
            max_labels: 1,
            samples_per_history: 1,
        }
    }
}

/// Concatenated title surfaces of the given items.
pub fn prompt_tokens(catalog: &Catalog, items: &[usize]) -> Vec<TokenId> {
    items
        .iter()
        .flat_map(|&i| catalog.items()[i].surface.iter().copied())
        .collect()
}

/// `<SOI> surface <EOI>` for each item.
pub fn response_tokens(catalog: &Catalog, items: &[usize]) -> Vec<TokenId> {
    let c = catalog.vocab().controls();
    let mut out = Vec::new();
    for &i in items {
        out.push(c.soi);
        out.extend_from_slice(&catalog.items()[i].surface);
        out.push(c.eoi);
    }
    out
}

/// Cuts augmented training examples out of histories (catalog positions).
/// Histories shorter than three items are skipped.
pub fn build_examples(
    catalog: &Catalog,
    histories: &[Vec<usize>],
    options: ExampleOptions,
    root_seed: u64,
) -> Result<Vec<TrainingExample>, ObjectiveError> {
    let controls = catalog.vocab().controls();
    let mut out = Vec::new();
    for (u, h) in histories.iter().enumerate() {
        if h.len() < 3 {
            continue;
        }
        for s in 0..options.samples_per_history {
            let seed = seed::mix(seed::derive(root_seed, "examples"), (u as u64) << 16 | s as u64);
            let (start, end) =
                catalog::sample_segment(h.len(), seed).map_err(|e| ObjectiveError::Setup(e.to_string()))?;
            let context = &h[start..end];
            let mut labels = vec![h[end]];
            for &next in &h[end + 1..] {
                if labels.len() >= options.max_labels.max(1) {
                    break;
                }
                if !labels.contains(&next) {
                    labels.push(next);
                }
            }
            out.push(TrainingExample::new(
                prompt_tokens(catalog, context),
                response_tokens(catalog, &labels),
                labels,
                controls,
            )?);
        }
    }
    Ok(out)
}
