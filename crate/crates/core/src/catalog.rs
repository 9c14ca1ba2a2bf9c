//! Item catalog, surface tokenization, synthetic embeddings and interaction
//! log splits.
//!
//! The catalog is the set of in-domain items. Anything a decoder emits that
//! does not resolve to one of these items is out-of-domain.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::TokenId;

pub const SOI_TOKEN: &str = "<SOI>";
pub const EOI_TOKEN: &str = "<EOI>";

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate item_id `{0}`")]
    DuplicateItem(String),
    #[error("empty title for item `{0}`")]
    EmptyTitle(String),
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("token `{0}` already in vocabulary")]
    TokenExists(String),
    #[error("unknown item_id `{0}`")]
    UnknownItem(String),
    #[error("history of length {0} is too short (need at least 3)")]
    HistoryTooShort(usize),
    #[error("embedding dimension must be at least 2, got {0}")]
    BadDimension(usize),
    #[error("embedding for item `{item}` is invalid: {reason}")]
    BadEmbedding { item: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Bijective token/id mapping with the two control tokens always present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
    soi_id: TokenId,
    eoi_id: TokenId,
}

/// The pair of control token ids delimiting an item segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlTokens {
    pub soi: TokenId,
    pub eoi: TokenId,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    /// A vocabulary holding only `<SOI>` (id 0) and `<EOI>` (id 1).
    pub fn new() -> Self {
        let mut v = Vocab {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
            soi_id: 0,
            eoi_id: 1,
        };
        v.soi_id = v.intern(SOI_TOKEN);
        v.eoi_id = v.intern(EOI_TOKEN);
        v
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn soi_id(&self) -> TokenId {
        self.soi_id
    }

    pub fn eoi_id(&self) -> TokenId {
        self.eoi_id
    }

    pub fn controls(&self) -> ControlTokens {
        ControlTokens {
            soi: self.soi_id,
            eoi: self.eoi_id,
        }
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Returns the id of `token`, adding it if absent.
    pub(crate) fn intern(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.token_to_id.get(token) {
            return id;
        }
        let id = self.id_to_token.len() as TokenId;
        self.id_to_token.push(token.to_string());
        self.token_to_id.insert(token.to_string(), id);
        id
    }

    /// Appends a token that must not already exist.
    pub fn push_token(&mut self, token: &str) -> Result<TokenId, CatalogError> {
        if self.token_to_id.contains_key(token) {
            return Err(CatalogError::TokenExists(token.to_string()));
        }
        Ok(self.intern(token))
    }

    /// Looks up every word of the normalized title; unknown words are an error.
    pub fn tokenize(&self, title: &str) -> Result<Vec<TokenId>, CatalogError> {
        tokenize_surface(title, self)
    }

    /// Renders ids back to a space-joined string.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Lowercases, maps every non-alphanumeric character to a space and
/// collapses whitespace.
pub fn normalize_title(title: &str) -> String {
    let mapped: String = title
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .flat_map(char::to_lowercase)
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lookup-only tokenization of a title into surface token ids.
pub fn tokenize_surface(title: &str, vocab: &Vocab) -> Result<Vec<TokenId>, CatalogError> {
    let normalized = normalize_title(title);
    if normalized.is_empty() {
        return Err(CatalogError::EmptyTitle(title.to_string()));
    }
    normalized
        .split(' ')
        .map(|w| vocab.id(w).ok_or_else(|| CatalogError::UnknownToken(w.to_string())))
        .collect()
}

fn intern_surface(title: &str, vocab: &mut Vocab) -> Vec<TokenId> {
    normalize_title(title)
        .split(' ')
        .filter(|w| !w.is_empty())
        .map(|w| vocab.intern(w))
        .collect()
}

/// Raw catalog row as it appears on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub categories: Vec<String>,
}

impl ItemRecord {
    pub fn new(item_id: impl Into<String>, title: impl Into<String>) -> Self {
        ItemRecord {
            item_id: item_id.into(),
            title: title.into(),
            description: String::new(),
            categories: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub item_id: String,
    pub title: String,
    pub description: String,
    pub categories: Vec<String>,
    /// Token ids of the normalized title; never contains a control token.
    pub surface: Vec<TokenId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatalogFormat {
    Jsonl,
    Tsv,
}

impl std::str::FromStr for CatalogFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(CatalogFormat::Jsonl),
            "tsv" => Ok(CatalogFormat::Tsv),
            other => Err(format!("unknown catalog format `{other}`")),
        }
    }
}

/// The in-domain item universe.
#[derive(Debug, Clone)]
pub struct Catalog {
    items: Vec<Item>,
    vocab: Vocab,
    by_id: HashMap<String, usize>,
    by_surface: HashMap<Vec<TokenId>, usize>,
}

impl Catalog {
    /// Builds a catalog in record order. The vocabulary holds the control
    /// tokens followed by title words in order of first appearance.
    pub fn from_records(records: Vec<ItemRecord>) -> Result<Self, CatalogError> {
        let mut vocab = Vocab::new();
        let mut items = Vec::with_capacity(records.len());
        let mut by_id = HashMap::with_capacity(records.len());
        let mut by_surface = HashMap::with_capacity(records.len());
        for rec in records {
            if normalize_title(&rec.title).is_empty() {
                return Err(CatalogError::EmptyTitle(rec.item_id));
            }
            if by_id.contains_key(&rec.item_id) {
                return Err(CatalogError::DuplicateItem(rec.item_id));
            }
            let surface = intern_surface(&rec.title, &mut vocab);
            let pos = items.len();
            by_id.insert(rec.item_id.clone(), pos);
            by_surface.entry(surface.clone()).or_insert(pos);
            items.push(Item {
                item_id: rec.item_id,
                title: rec.title,
                description: rec.description,
                categories: rec.categories,
                surface,
            });
        }
        Ok(Catalog {
            items,
            vocab,
            by_id,
            by_surface,
        })
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item(&self, pos: usize) -> Option<&Item> {
        self.items.get(pos)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn position(&self, item_id: &str) -> Option<usize> {
        self.by_id.get(item_id).copied()
    }

    pub fn surfaces(&self) -> Vec<Vec<TokenId>> {
        self.items.iter().map(|it| it.surface.clone()).collect()
    }

    /// Lowest catalog position whose surface equals `surface` exactly.
    pub fn lookup_surface(&self, surface: &[TokenId]) -> Option<usize> {
        self.by_surface.get(surface).copied()
    }

    /// Resolves free text to a catalog position by exact normalized-title match.
    pub fn resolve_title(&self, text: &str) -> Option<usize> {
        let ids = tokenize_surface(text, &self.vocab).ok()?;
        self.lookup_surface(&ids)
    }

    /// Maps item ids to positions, failing on the first unknown id.
    pub fn positions_of(&self, ids: &[String]) -> Result<Vec<usize>, CatalogError> {
        ids.iter()
            .map(|id| self.position(id).ok_or_else(|| CatalogError::UnknownItem(id.clone())))
            .collect()
    }
}

fn read_to_string(path: &Path) -> Result<String, CatalogError> {
    fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_tsv_line(line: &str, lineno: usize) -> Result<ItemRecord, CatalogError> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() < 2 {
        return Err(CatalogError::Parse {
            line: lineno,
            message: format!("expected at least 2 tab-separated columns, got {}", cols.len()),
        });
    }
    let categories = cols
        .get(3)
        .map(|c| {
            c.split('|')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        })
        .unwrap_or_default();
    Ok(ItemRecord {
        item_id: cols[0].trim().to_string(),
        title: cols[1].to_string(),
        description: cols.get(2).map(|s| s.to_string()).unwrap_or_default(),
        categories,
    })
}

/// Parses catalog text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_catalog(text: &str, format: CatalogFormat) -> Result<Catalog, CatalogError> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec = match format {
            CatalogFormat::Jsonl => serde_json::from_str::<ItemRecord>(line).map_err(|e| CatalogError::Parse {
                line: lineno,
                message: e.to_string(),
            })?,
            CatalogFormat::Tsv => {
                if records.is_empty() && line.starts_with("item_id\t") {
                    continue;
                }
                parse_tsv_line(line, lineno)?
            }
        };
        records.push(rec);
    }
    Catalog::from_records(records)
}

pub fn load_catalog(path: &Path, format: CatalogFormat) -> Result<Catalog, CatalogError> {
    parse_catalog(&read_to_string(path)?, format)
}

/// One user's chronologically ordered interactions (oldest first).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionLog {
    pub user_id: String,
    pub history: Vec<String>,
}

impl InteractionLog {
    /// Catalog positions of the history; fails on ids outside the catalog.
    pub fn positions(&self, catalog: &Catalog) -> Result<Vec<usize>, CatalogError> {
        catalog.positions_of(&self.history)
    }
}

pub fn parse_interactions(text: &str, catalog: &Catalog) -> Result<Vec<InteractionLog>, CatalogError> {
    let mut logs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let log: InteractionLog = serde_json::from_str(line).map_err(|e| CatalogError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        log.positions(catalog)?;
        logs.push(log);
    }
    Ok(logs)
}

pub fn load_interactions(path: &Path, catalog: &Catalog) -> Result<Vec<InteractionLog>, CatalogError> {
    parse_interactions(&read_to_string(path)?, catalog)
}

/// Leave-one-out partition of one history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub valid: T,
    pub test: T,
}

/// Last interaction is the test target, the one before it the validation
/// target, everything earlier is training history.
pub fn leave_one_out_split<T: Clone>(history: &[T]) -> Result<Split<T>, CatalogError> {
    let n = history.len();
    if n < 3 {
        return Err(CatalogError::HistoryTooShort(n));
    }
    Ok(Split {
        train: history[..n - 2].to_vec(),
        valid: history[n - 2].clone(),
        test: history[n - 1].clone(),
    })
}

/// Largest 1-based segment end allowed by the augmentation window.
pub const AUGMENT_MAX_END: usize = 10;

/// Samples a contiguous context `history[a..=b]` (1-based, `1 <= a < b`)
/// with `b <= 10` and `b < len`, and returns it with the item at `b + 1`.
pub fn sample_augmented_pair<T: Clone>(history: &[T], rng_seed: u64) -> Result<(Vec<T>, T), CatalogError> {
    let (start, end) = sample_segment(history.len(), rng_seed)?;
    Ok((history[start..end].to_vec(), history[end].clone()))
}

/// The index form of [`sample_augmented_pair`]: returns the 0-based
/// half-open context range `start..end`; the target sits at `end`.
pub fn sample_segment(len: usize, rng_seed: u64) -> Result<(usize, usize), CatalogError> {
    if len < 3 {
        return Err(CatalogError::HistoryTooShort(len));
    }
    let mut rng = seed::rng_for(rng_seed, "augment");
    let max_end = AUGMENT_MAX_END.min(len - 1);
    let b = rng.gen_range(2..=max_end);
    let a = rng.gen_range(1..b);
    Ok((a - 1, b))
}

/// Item vectors aligned with catalog order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingSet {
    pub fn new(dim: usize, vectors: Vec<Vec<f64>>) -> Result<Self, CatalogError> {
        if dim == 0 {
            return Err(CatalogError::BadDimension(dim));
        }
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(CatalogError::BadEmbedding {
                    item: i.to_string(),
                    reason: format!("length {} != dim {dim}", v.len()),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(CatalogError::BadEmbedding {
                    item: i.to_string(),
                    reason: "non-finite entry".into(),
                });
            }
        }
        Ok(EmbeddingSet { dim, vectors })
    }

    /// Synthetic embeddings for every catalog item.
    pub fn synthesize(catalog: &Catalog, dim: usize, seed: u64) -> Result<Self, CatalogError> {
        let vectors = catalog
            .items()
            .iter()
            .map(|it| synth_embedding(it, dim, seed))
            .collect::<Result<Vec<_>, _>>()?;
        EmbeddingSet::new(dim, vectors)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, pos: usize) -> &[f64] {
        &self.vectors[pos]
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }
}

#[derive(Debug, Deserialize)]
struct EmbeddingRecord {
    item_id: String,
    embedding: Vec<f64>,
}

/// Reads `{"item_id": .., "embedding": [..]}` lines and aligns them with the
/// catalog. Every catalog item must be present exactly once.
pub fn parse_embeddings(text: &str, catalog: &Catalog) -> Result<EmbeddingSet, CatalogError> {
    let mut slots: Vec<Option<Vec<f64>>> = vec![None; catalog.len()];
    let mut dim = None;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(line).map_err(|e| CatalogError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let pos = catalog
            .position(&rec.item_id)
            .ok_or_else(|| CatalogError::UnknownItem(rec.item_id.clone()))?;
        if slots[pos].is_some() {
            return Err(CatalogError::DuplicateItem(rec.item_id));
        }
        dim.get_or_insert(rec.embedding.len());
        slots[pos] = Some(rec.embedding);
    }
    let vectors = slots
        .into_iter()
        .enumerate()
        .map(|(pos, v)| {
            v.ok_or_else(|| CatalogError::BadEmbedding {
                item: catalog.items()[pos].item_id.clone(),
                reason: "missing".into(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    EmbeddingSet::new(dim.unwrap_or(2), vectors)
}

pub fn load_embeddings(path: &Path, catalog: &Catalog) -> Result<EmbeddingSet, CatalogError> {
    parse_embeddings(&read_to_string(path)?, catalog)
}

/// Deterministic content-hashed unit vector for an item.
///
/// Every character trigram of `title | description | categories` is hashed
/// to a bucket in `0..dim` with a `±1` sign, then the vector is
/// L2-normalized. Texts shorter than three characters hash as one gram.
pub fn synth_embedding(item: &Item, dim: usize, seed: u64) -> Result<Vec<f64>, CatalogError> {
    if dim < 2 {
        return Err(CatalogError::BadDimension(dim));
    }
    let text = format!(
        "{}\u{1f}{}\u{1f}{}",
        item.title,
        item.description,
        item.categories.join("\u{1e}")
    );
    let chars: Vec<char> = text.chars().collect();
    let mut v = vec![0.0f64; dim];
    let mut add_gram = |gram: &[char]| {
        let s: String = gram.iter().collect();
        let h = seed::mix(seed, seed::fnv1a(s.as_bytes()));
        let bucket = (h % dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
        v[bucket] += sign;
    };
    if chars.len() < 3 {
        add_gram(&chars);
    } else {
        for w in chars.windows(3) {
            add_gram(w);
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // All grams cancelled; fall back to a seeded basis direction.
        let axis = (seed::mix(seed, seed::fnv1a(text.as_bytes())) % dim as u64) as usize;
        v[axis] = 1.0;
        return Ok(v);
    }
    for x in &mut v {
        *x /= norm;
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_items() -> Catalog {
        parse_catalog(
            r#"{"item_id":"i1","title":"a b","description":"","categories":[]}
{"item_id":"i2","title":"a c","description":"x","categories":["k"]}
{"item_id":"i3","title":"d","description":"","categories":[]}
"#,
            CatalogFormat::Jsonl,
        )
        .unwrap()
    }

    #[test]
    fn three_line_catalog() {
        let cat = three_items();
        assert_eq!(cat.len(), 3);
        let mut words: Vec<&str> = cat.vocab().tokens().iter().map(String::as_str).collect();
        words.sort();
        assert_eq!(words, vec!["<EOI>", "<SOI>", "a", "b", "c", "d"]);
        let v = cat.vocab();
        assert_eq!(cat.items()[1].surface, vec![v.id("a").unwrap(), v.id("c").unwrap()]);
    }

    #[test]
    fn duplicate_id_is_named() {
        let err = parse_catalog(
            "{\"item_id\":\"x\",\"title\":\"a\"}\n{\"item_id\":\"x\",\"title\":\"b\"}\n",
            CatalogFormat::Jsonl,
        )
        .unwrap_err();
        assert!(matches!(err, CatalogError::DuplicateItem(ref id) if id == "x"));
        assert!(err.to_string().contains("`x`"));
    }

    #[test]
    fn empty_file_has_only_controls() {
        let cat = parse_catalog("", CatalogFormat::Jsonl).unwrap();
        assert!(cat.is_empty());
        assert_eq!(cat.vocab().len(), 2);
        assert_ne!(cat.vocab().soi_id(), cat.vocab().eoi_id());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_catalog("{\"item_id\":\"a\",\"title\":\"t\"}\n{oops\n", CatalogFormat::Jsonl).unwrap_err();
        assert!(matches!(err, CatalogError::Parse { line: 2, .. }));
    }

    #[test]
    fn empty_title_rejected() {
        let err = parse_catalog("{\"item_id\":\"a\",\"title\":\"  ?! \"}\n", CatalogFormat::Jsonl).unwrap_err();
        assert!(matches!(err, CatalogError::EmptyTitle(_)));
    }

    #[test]
    fn tsv_matches_jsonl() {
        let tsv = "item_id\ttitle\tdescription\tcategories\ni1\ta b\t\t\ni2\ta c\tx\tk\ni3\td\t\t\n";
        let a = parse_catalog(tsv, CatalogFormat::Tsv).unwrap();
        let b = three_items();
        assert_eq!(a.items(), b.items());
    }

    #[test]
    fn tokenize_normalizes_whitespace_and_case() {
        let cat = three_items();
        let v = cat.vocab();
        let ab = vec![v.id("a").unwrap(), v.id("b").unwrap()];
        assert_eq!(tokenize_surface("a b", v).unwrap(), ab);
        assert_eq!(tokenize_surface("  a   b ", v).unwrap(), ab);
        assert_eq!(tokenize_surface("A, b!", v).unwrap(), ab);
        assert_eq!(v.detokenize(&ab), "a b");
        assert!(matches!(tokenize_surface("a zz", v), Err(CatalogError::UnknownToken(w)) if w == "zz"));
        assert!(matches!(tokenize_surface("   ", v), Err(CatalogError::EmptyTitle(_))));
    }

    #[test]
    fn control_strings_in_titles_become_words() {
        let cat = Catalog::from_records(vec![ItemRecord::new("x", "<SOI> and <EOI>")]).unwrap();
        let v = cat.vocab();
        assert!(!cat.items()[0].surface.contains(&v.soi_id()));
        assert!(!cat.items()[0].surface.contains(&v.eoi_id()));
    }

    #[test]
    fn leave_one_out() {
        let s = leave_one_out_split(&["i1", "i2", "i3", "i4"]).unwrap();
        assert_eq!(s.train, vec!["i1", "i2"]);
        assert_eq!((s.valid, s.test), ("i3", "i4"));
        let s = leave_one_out_split(&["i1", "i2", "i3"]).unwrap();
        assert_eq!(s.train, vec!["i1"]);
        assert!(matches!(
            leave_one_out_split(&["i1", "i2"]),
            Err(CatalogError::HistoryTooShort(2))
        ));
    }

    #[test]
    fn augmented_pair_forced_case() {
        let (ctx, target) = sample_augmented_pair(&["i1", "i2", "i3"], 99).unwrap();
        assert_eq!(ctx, vec!["i1", "i2"]);
        assert_eq!(target, "i3");
        assert!(sample_augmented_pair(&["i1", "i2"], 0).is_err());
    }

    #[test]
    fn augmented_pair_window_on_long_history() {
        let h: Vec<usize> = (0..12).collect();
        for s in 0..200 {
            let (ctx, target) = sample_augmented_pair(&h, s).unwrap();
            assert!(ctx.len() >= 2);
            let a = ctx[0] + 1;
            let b = a + ctx.len() - 1;
            assert!(1 <= a && a < b && b <= 10);
            assert_eq!(target, h[b]);
            assert_eq!(sample_augmented_pair(&h, s).unwrap(), (ctx, target));
        }
    }

    #[test]
    fn synthetic_embedding_contract() {
        let cat = three_items();
        let it = &cat.items()[1];
        let a = synth_embedding(it, 16, 1).unwrap();
        let b = synth_embedding(it, 16, 1).unwrap();
        let c = synth_embedding(it, 16, 2).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().zip(&c).any(|(x, y)| x != y));
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert!(synth_embedding(it, 1, 1).is_err());

        let twin = Item {
            item_id: "other".into(),
            ..it.clone()
        };
        assert_eq!(synth_embedding(&twin, 16, 1).unwrap(), a);
    }

    #[test]
    fn embeddings_jsonl_alignment() {
        let cat = three_items();
        let text = "{\"item_id\":\"i3\",\"embedding\":[0,1]}\n{\"item_id\":\"i1\",\"embedding\":[1,0]}\n{\"item_id\":\"i2\",\"embedding\":[1,1]}\n";
        let e = parse_embeddings(text, &cat).unwrap();
        assert_eq!(e.vector(0), &[1.0, 0.0]);
        assert_eq!(e.vector(2), &[0.0, 1.0]);
        let missing = "{\"item_id\":\"i1\",\"embedding\":[1,0]}\n";
        assert!(parse_embeddings(missing, &cat).is_err());
    }
}
