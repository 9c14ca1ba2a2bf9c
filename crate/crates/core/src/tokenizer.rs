//! Residual quantization of item embeddings into discrete code tuples.
//!
//! Stage `d` picks the code vector nearest to the residual left by stages
//! `1..d`; the tuple of picked indices is the item's identifier and is
//! spelled with dedicated vocabulary tokens such as `<a_11><b_2>`.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, CatalogError, EmbeddingSet, Vocab};
use crate::seed;
use crate::TokenId;

pub const DEFAULT_BETA: f64 = 0.25;
/// Weight of the reconstruction term against the quantization term.
pub const DEFAULT_RECON_WEIGHT: f64 = 1.0;
pub const CODEBOOK_FORMAT: &str = "rq-codebooks";
pub const CODEBOOK_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("{items} items cannot fill a codebook of {size} entries")]
    TooFewItems { items: usize, size: usize },
    #[error("invalid codebook shape: {0}")]
    Shape(String),
    #[error("code index {index} at stage {stage} outside codebook of size {size}")]
    CodeOutOfRange { stage: usize, index: usize, size: usize },
    #[error("no codes given")]
    Empty,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `D` codebooks of `K` vectors each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookStack {
    depth: usize,
    size: usize,
    dim: usize,
    beta: f64,
    /// `codebooks[d][k]` is code vector `k` of stage `d`.
    codebooks: Vec<Vec<Vec<f64>>>,
}

impl CodebookStack {
    pub fn new(codebooks: Vec<Vec<Vec<f64>>>, beta: f64) -> Result<Self, TokenizerError> {
        let depth = codebooks.len();
        if depth == 0 {
            return Err(TokenizerError::Shape("depth must be at least 1".into()));
        }
        let size = codebooks[0].len();
        if size < 2 {
            return Err(TokenizerError::Shape("codebook size must be at least 2".into()));
        }
        let dim = codebooks[0][0].len();
        if dim == 0 {
            return Err(TokenizerError::Shape("zero-width code vectors".into()));
        }
        for book in &codebooks {
            if book.len() != size {
                return Err(TokenizerError::Shape(format!(
                    "codebook sizes {} and {}",
                    size,
                    book.len()
                )));
            }
            for v in book {
                if v.len() != dim {
                    return Err(TokenizerError::DimensionMismatch {
                        expected: dim,
                        actual: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(TokenizerError::Shape("non-finite code vector".into()));
                }
            }
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(TokenizerError::Shape(format!("beta {beta}")));
        }
        Ok(CodebookStack {
            depth,
            size,
            dim,
            beta,
            codebooks,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn codebook(&self, stage: usize) -> &[Vec<f64>] {
        &self.codebooks[stage]
    }

    pub fn code_vector(&self, stage: usize, index: usize) -> &[f64] {
        &self.codebooks[stage][index]
    }

    /// Sum of the selected code vectors.
    pub fn decode(&self, code: &ItemCode) -> Result<Vec<f64>, TokenizerError> {
        self.check_code(code)?;
        let mut out = vec![0.0; self.dim];
        for (d, &k) in code.indices.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(&self.codebooks[d][k]) {
                *o += c;
            }
        }
        Ok(out)
    }

    fn check_code(&self, code: &ItemCode) -> Result<(), TokenizerError> {
        if code.indices.len() != self.depth {
            return Err(TokenizerError::Shape(format!(
                "code of length {} for depth {}",
                code.indices.len(),
                self.depth
            )));
        }
        for (stage, &index) in code.indices.iter().enumerate() {
            if index >= self.size {
                return Err(TokenizerError::CodeOutOfRange {
                    stage,
                    index,
                    size: self.size,
                });
            }
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = serde_json::json!({
            "format": CODEBOOK_FORMAT,
            "version": CODEBOOK_VERSION,
            "depth": self.depth,
            "size": self.size,
            "dim": self.dim,
            "beta": self.beta,
        });
        writeln!(w, "{header}")?;
        for (stage, book) in self.codebooks.iter().enumerate() {
            for (index, v) in book.iter().enumerate() {
                let line = serde_json::json!({"stage": stage, "index": index, "vector": v});
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, TokenizerError> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
            depth: usize,
            size: usize,
            dim: usize,
            beta: f64,
        }
        #[derive(Deserialize)]
        struct Entry {
            stage: usize,
            index: usize,
            vector: Vec<f64>,
        }
        let parse = |line: usize, message: String| TokenizerError::Parse { line, message };
        let mut lines = r
            .lines()
            .enumerate()
            .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
        let (_, first) = lines.next().ok_or_else(|| parse(1, "empty codebook file".into()))?;
        let header: Header = serde_json::from_str(&first?).map_err(|e| parse(1, e.to_string()))?;
        if header.format != CODEBOOK_FORMAT || header.version != CODEBOOK_VERSION {
            return Err(parse(
                1,
                format!("unsupported format {} v{}", header.format, header.version),
            ));
        }
        if header.depth == 0 || header.size == 0 || header.depth.saturating_mul(header.size) > 1 << 24 {
            return Err(parse(1, "bad codebook shape".into()));
        }
        let mut books: Vec<Vec<Option<Vec<f64>>>> = vec![vec![None; header.size]; header.depth];
        for (i, line) in lines {
            let e: Entry = serde_json::from_str(&line?).map_err(|e| parse(i + 1, e.to_string()))?;
            if e.stage >= header.depth || e.index >= header.size || e.vector.len() != header.dim {
                return Err(parse(i + 1, "entry outside the declared shape".into()));
            }
            if books[e.stage][e.index].replace(e.vector).is_some() {
                return Err(parse(i + 1, format!("duplicate entry ({}, {})", e.stage, e.index)));
            }
        }
        let codebooks = books
            .into_iter()
            .enumerate()
            .map(|(d, b)| {
                b.into_iter()
                    .enumerate()
                    .map(|(k, v)| v.ok_or_else(|| parse(0, format!("missing entry ({d}, {k})"))))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        CodebookStack::new(codebooks, header.beta)
    }
}

/// One index per stage.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ItemCode {
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub code: ItemCode,
    pub quantized: Vec<f64>,
    /// `r_0 = z, r_1, ..., r_D`.
    pub residuals: Vec<Vec<f64>>,
    /// The code vector picked at each stage.
    pub selected: Vec<Vec<f64>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(book: &[Vec<f64>], r: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in book.iter().enumerate() {
        let d = sq_dist(c, r);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Greedy residual encoding, ties to the lowest index.
pub fn rq_encode(z: &[f64], stack: &CodebookStack) -> Result<Encoding, TokenizerError> {
    if z.len() != stack.dim {
        return Err(TokenizerError::DimensionMismatch {
            expected: stack.dim,
            actual: z.len(),
        });
    }
    let mut residuals = Vec::with_capacity(stack.depth + 1);
    let mut selected = Vec::with_capacity(stack.depth);
    let mut indices = Vec::with_capacity(stack.depth);
    let mut quantized = vec![0.0; z.len()];
    let mut r = z.to_vec();
    for book in &stack.codebooks {
        let (k, _) = nearest(book, &r);
        let c = &book[k];
        let next: Vec<f64> = r.iter().zip(c).map(|(a, b)| a - b).collect();
        for (q, x) in quantized.iter_mut().zip(c) {
            *q += x;
        }
        residuals.push(std::mem::replace(&mut r, next));
        selected.push(c.clone());
        indices.push(k);
    }
    residuals.push(r);
    Ok(Encoding {
        code: ItemCode { indices },
        quantized,
        residuals,
        selected,
    })
}

/// Quantization loss value and its two gradient streams.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationLoss {
    pub value: f64,
    /// Per stage, `∂/∂z_q = 2(z_q − r)` from the codebook term.
    pub codebook_grads: Vec<Vec<f64>>,
    /// Per stage, `∂/∂r = 2β(r − z_q)` from the commitment term.
    pub encoder_grads: Vec<Vec<f64>>,
}

/// `Σ_d ‖sg[r_{d−1}] − z_q^(d)‖² + β‖r_{d−1} − sg[z_q^(d)]‖²`.
///
/// `residuals[d]` is the residual entering stage `d`; extra trailing
/// residuals (such as `r_D` from [`Encoding`]) are ignored.
pub fn quantization_loss(
    residuals: &[Vec<f64>],
    selected: &[Vec<f64>],
    beta: f64,
) -> Result<QuantizationLoss, TokenizerError> {
    if residuals.len() < selected.len() {
        return Err(TokenizerError::Shape(format!(
            "{} residuals for {} stages",
            residuals.len(),
            selected.len()
        )));
    }
    let mut value = 0.0;
    let mut codebook_grads = Vec::with_capacity(selected.len());
    let mut encoder_grads = Vec::with_capacity(selected.len());
    for (r, z) in residuals.iter().zip(selected) {
        if r.len() != z.len() {
            return Err(TokenizerError::DimensionMismatch {
                expected: r.len(),
                actual: z.len(),
            });
        }
        let e = sq_dist(r, z);
        value += e + beta * e;
        codebook_grads.push(z.iter().zip(r).map(|(a, b)| 2.0 * (a - b)).collect());
        encoder_grads.push(r.iter().zip(z).map(|(a, b)| 2.0 * beta * (a - b)).collect());
    }
    Ok(QuantizationLoss {
        value,
        codebook_grads,
        encoder_grads,
    })
}

/// `‖ê − e‖² + L_quant`.
pub fn total_tokenizer_loss(z_in: &[f64], z_reconstructed: &[f64], quant_loss: f64) -> Result<f64, TokenizerError> {
    weighted_tokenizer_loss(z_in, z_reconstructed, quant_loss, DEFAULT_RECON_WEIGHT)
}

/// `w · ‖ê − e‖² + L_quant`.
pub fn weighted_tokenizer_loss(
    z_in: &[f64],
    z_reconstructed: &[f64],
    quant_loss: f64,
    recon_weight: f64,
) -> Result<f64, TokenizerError> {
    if z_in.len() != z_reconstructed.len() {
        return Err(TokenizerError::DimensionMismatch {
            expected: z_in.len(),
            actual: z_reconstructed.len(),
        });
    }
    Ok(recon_weight * sq_dist(z_in, z_reconstructed) + quant_loss)
}

/// An affine decoder `ê = A ẑ + b` fitted by least squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDecoder {
    dim: usize,
    /// Row-major `dim × dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearDecoder {
    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        LinearDecoder {
            dim,
            weights,
            bias: vec![0.0; dim],
        }
    }

    /// Minimizes `Σ ‖A x_i + b − y_i‖² + ridge ‖A‖²` over `(A, b)`.
    pub fn fit(inputs: &[Vec<f64>], targets: &[Vec<f64>], ridge: f64) -> Result<Self, TokenizerError> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(TokenizerError::Shape(format!(
                "{} inputs for {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let dim = inputs[0].len();
        if inputs.iter().chain(targets).any(|v| v.len() != dim) {
            return Err(TokenizerError::Shape("ragged regression data".into()));
        }
        // Normal equations over the augmented input [x, 1].
        let n = dim + 1;
        let mut gram = vec![0.0; n * n];
        let mut rhs = vec![0.0; n * dim];
        for (x, y) in inputs.iter().zip(targets) {
            let xa = |i: usize| if i < dim { x[i] } else { 1.0 };
            for i in 0..n {
                for j in 0..n {
                    gram[i * n + j] += xa(i) * xa(j);
                }
                for (c, &yc) in y.iter().enumerate() {
                    rhs[i * dim + c] += xa(i) * yc;
                }
            }
        }
        for i in 0..dim {
            gram[i * n + i] += ridge.max(1e-12);
        }
        let sol =
            solve(gram, rhs, n, dim).ok_or_else(|| TokenizerError::Shape("singular least-squares system".into()))?;
        let mut weights = vec![0.0; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                weights[c * dim + r] = sol[r * dim + c];
            }
        }
        Ok(LinearDecoder {
            dim,
            weights,
            bias: sol[dim * dim..].to_vec(),
        })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|r| {
                self.bias[r]
                    + self.weights[r * self.dim..(r + 1) * self.dim]
                        .iter()
                        .zip(x)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Gaussian elimination with partial pivoting for `A X = B`, `A` n×n,
/// `B` n×m, both row-major.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize, m: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            for k in 0..m {
                b.swap(col * m + k, piv * m + k);
            }
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = a[row * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            for k in 0..m {
                b[row * m + k] -= f * b[col * m + k];
            }
        }
    }
    for row in 0..n {
        let d = a[row * n + row];
        for k in 0..m {
            b[row * m + k] /= d;
        }
    }
    Some(b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodebookConfig {
    pub depth: usize,
    pub size: usize,
    pub iters: usize,
    pub seed: u64,
    pub beta: f64,
}

impl CodebookConfig {
    pub fn new(depth: usize, size: usize, iters: usize, seed: u64) -> Self {
        CodebookConfig {
            depth,
            size,
            iters,
            seed,
            beta: DEFAULT_BETA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean `‖z − ẑ‖²` after each stage.
    pub stage_errors: Vec<f64>,
    /// Mean within-cluster squared distance per stage and iteration.
    pub trace: Vec<Vec<f64>>,
    /// Dead entries reseeded per stage.
    pub reseeded: Vec<usize>,
}

/// Stage-wise residual k-means with k-means++ seeding. Stage `d` only
/// depends on the seed and stages before it, so training a deeper stack
/// with the same seed extends a shallower one.
pub fn train_codebooks(
    embeddings: &[Vec<f64>],
    config: &CodebookConfig,
) -> Result<(CodebookStack, TrainReport), TokenizerError> {
    if config.depth == 0 || config.size < 2 {
        return Err(TokenizerError::Shape(format!(
            "depth {} size {}",
            config.depth, config.size
        )));
    }
    if embeddings.len() < config.size {
        return Err(TokenizerError::TooFewItems {
            items: embeddings.len(),
            size: config.size,
        });
    }
    let dim = embeddings[0].len();
    if let Some(v) = embeddings.iter().find(|v| v.len() != dim) {
        return Err(TokenizerError::DimensionMismatch {
            expected: dim,
            actual: v.len(),
        });
    }
    let mut residuals: Vec<Vec<f64>> = embeddings.to_vec();
    let mut books = Vec::with_capacity(config.depth);
    let mut report = TrainReport {
        stage_errors: Vec::new(),
        trace: Vec::new(),
        reseeded: Vec::new(),
    };
    for stage in 0..config.depth {
        let stage_seed = seed::mix(seed::derive(config.seed, "rq-stage"), stage as u64);
        let (book, trace, reseeded) = kmeans(&residuals, config.size, config.iters, stage_seed);
        for r in residuals.iter_mut() {
            let (k, _) = nearest(&book, r);
            for (x, c) in r.iter_mut().zip(&book[k]) {
                *x -= c;
            }
        }
        let err = residuals
            .iter()
            .map(|r| r.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            / residuals.len() as f64;
        report.stage_errors.push(err);
        report.trace.push(trace);
        report.reseeded.push(reseeded);
        books.push(book);
    }
    Ok((CodebookStack::new(books, config.beta)?, report))
}

fn kmeans(points: &[Vec<f64>], k: usize, iters: usize, seed_value: u64) -> (Vec<Vec<f64>>, Vec<f64>, usize) {
    let mut rng = seed::rng_for(seed_value, "kmeans");
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..points.len())].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.gen_range(0..points.len())
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }

    let dim = points[0].len();
    let mut assign = vec![0usize; points.len()];
    let mut trace = Vec::with_capacity(iters);
    let mut reseeded = 0;
    for _ in 0..iters {
        let mut inertia = 0.0;
        let mut dist = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(&centers, p);
            assign[i] = c;
            dist[i] = d;
            inertia += d;
        }
        trace.push(inertia / points.len() as f64);
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assign) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut taken = vec![false; points.len()];
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                centers[c] = sums[c].iter().map(|s| s * inv).collect();
            } else {
                // Dead entry: move it to the worst-served point.
                let far = (0..points.len())
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    taken[i] = true;
                    centers[c] = points[i].clone();
                    reseeded += 1;
                }
            }
        }
    }
    (centers, trace, reseeded)
}

/// Encodes every embedding.
pub fn assign_codes(embeddings: &EmbeddingSet, stack: &CodebookStack) -> Result<Vec<ItemCode>, TokenizerError> {
    embeddings
        .vectors()
        .iter()
        .map(|v| rq_encode(v, stack).map(|e| e.code))
        .collect()
}

/// `1 − distinct / total`.
pub fn collision_rate(codes: &[ItemCode]) -> Result<f64, TokenizerError> {
    if codes.is_empty() {
        return Err(TokenizerError::Empty);
    }
    let distinct: HashSet<&ItemCode> = codes.iter().collect();
    Ok(1.0 - distinct.len() as f64 / codes.len() as f64)
}

/// Token ids reserved for code indices, `D·K` of them in one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeVocabulary {
    pub depth: usize,
    pub size: usize,
    pub first_id: TokenId,
}

/// `<a_11>` for stage 0, index 11; stages past `z` use `<s26_11>`.
pub fn code_token_name(stage: usize, index: usize) -> String {
    if stage < 26 {
        format!("<{}_{index}>", (b'a' + stage as u8) as char)
    } else {
        format!("<s{stage}_{index}>")
    }
}

impl CodeVocabulary {
    /// Appends the code tokens to `vocab`.
    pub fn extend(vocab: &mut Vocab, depth: usize, size: usize) -> Result<Self, TokenizerError> {
        let first_id = vocab.len() as TokenId;
        for d in 0..depth {
            for k in 0..size {
                let id = vocab.push_token(&code_token_name(d, k))?;
                debug_assert_eq!(id as usize, first_id as usize + d * size + k);
            }
        }
        Ok(CodeVocabulary { depth, size, first_id })
    }

    pub fn token(&self, stage: usize, index: usize) -> Result<TokenId, TokenizerError> {
        if stage >= self.depth || index >= self.size {
            return Err(TokenizerError::CodeOutOfRange {
                stage,
                index,
                size: self.size,
            });
        }
        Ok(self.first_id + (stage * self.size + index) as TokenId)
    }

    /// The `(stage, index)` behind a code token.
    pub fn decode(&self, token: TokenId) -> Option<(usize, usize)> {
        let off = token.checked_sub(self.first_id)? as usize;
        (off < self.depth * self.size).then(|| (off / self.size, off % self.size))
    }

    pub fn spell(&self, code: &ItemCode) -> Result<Vec<TokenId>, TokenizerError> {
        if code.indices.len() != self.depth {
            return Err(TokenizerError::Shape(format!(
                "code of length {} for depth {}",
                code.indices.len(),
                self.depth
            )));
        }
        code.indices
            .iter()
            .enumerate()
            .map(|(d, &k)| self.token(d, k))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSurfaces {
    /// Token spelling per catalog position.
    pub surfaces: Vec<Vec<TokenId>>,
    /// The item a decoded code resolves to: the lowest position sharing
    /// the tuple.
    pub representative: Vec<usize>,
    /// Items shadowed by a representative.
    pub collisions: usize,
}

pub fn codes_to_surfaces(codes: &[ItemCode], vocab: &CodeVocabulary) -> Result<CodeSurfaces, TokenizerError> {
    let mut first: std::collections::HashMap<&ItemCode, usize> = std::collections::HashMap::new();
    let mut surfaces = Vec::with_capacity(codes.len());
    let mut representative = Vec::with_capacity(codes.len());
    let mut collisions = 0;
    for (i, c) in codes.iter().enumerate() {
        surfaces.push(vocab.spell(c)?);
        let rep = *first.entry(c).or_insert(i);
        if rep != i {
            collisions += 1;
        }
        representative.push(rep);
    }
    Ok(CodeSurfaces {
        surfaces,
        representative,
        collisions,
    })
}

#[derive(Serialize, Deserialize)]
struct CodeRecord {
    item_id: String,
    code: Vec<usize>,
}

pub fn write_codes<W: Write>(mut w: W, catalog: &Catalog, codes: &[ItemCode]) -> Result<(), TokenizerError> {
    if codes.len() != catalog.len() {
        return Err(TokenizerError::Shape(format!(
            "{} codes for {} items",
            codes.len(),
            catalog.len()
        )));
    }
    for (item, c) in catalog.items().iter().zip(codes) {
        let rec = CodeRecord {
            item_id: item.item_id.clone(),
            code: c.indices.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&rec).expect("plain record"))?;
    }
    Ok(())
}

/// Reads a codes file into catalog order; every item needs exactly one code.
pub fn read_codes<R: BufRead>(r: R, catalog: &Catalog) -> Result<Vec<ItemCode>, TokenizerError> {
    let mut out: Vec<Option<ItemCode>> = vec![None; catalog.len()];
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CodeRecord = serde_json::from_str(&line).map_err(|e| TokenizerError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let pos = catalog
            .position(&rec.item_id)
            .ok_or_else(|| CatalogError::UnknownItem(rec.item_id.clone()))?;
        if out[pos].replace(ItemCode { indices: rec.code }).is_some() {
            return Err(TokenizerError::Parse {
                line: i + 1,
                message: format!("duplicate code for {}", rec.item_id),
            });
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(i, c)| {
            c.ok_or_else(|| TokenizerError::Parse {
                line: 0,
                message: format!("no code for {}", catalog.items()[i].item_id),
            })
        })
        .collect()
}
