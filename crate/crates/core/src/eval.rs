//! Ranking and reliability metrics, plus the prefix-tree benchmark.

use std::collections::{BTreeMap, HashSet};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{normalize_title, ControlTokens, Vocab};
use crate::decoder::{item_segments, DecodeState, GroundingStrategy, UniformModel};
use crate::seed;
use crate::trie::TreeBuilder;
use crate::TokenId;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("nothing to evaluate")]
    Empty,
    #[error("benchmark: {0}")]
    Bench(String),
}

/// One entry of a recommendation list.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entry {
    Item(usize),
    /// Text that names no catalog item.
    Ood(String),
}

impl Entry {
    fn dedup_key(&self) -> Entry {
        match self {
            Entry::Item(i) => Entry::Item(*i),
            Entry::Ood(t) => Entry::Ood(normalize_title(t)),
        }
    }
}

pub type RecommendationList = Vec<Entry>;

/// Maps each item segment of a response through `resolve`; segments that
/// resolve to nothing become OOD entries carrying their detokenized text.
pub fn resolve_response(
    response: &[TokenId],
    controls: ControlTokens,
    vocab: &Vocab,
    resolve: impl Fn(&[TokenId]) -> Option<usize>,
) -> RecommendationList {
    item_segments(response, controls)
        .into_iter()
        .map(|seg| match resolve(&seg) {
            Some(i) => Entry::Item(i),
            None => Entry::Ood(vocab.detokenize(&seg)),
        })
        .collect()
}

/// 1-based rank of `target` among the in-domain entries of `list`.
fn in_domain_rank(list: &[Entry], target: usize) -> Option<usize> {
    list.iter()
        .filter_map(|e| match e {
            Entry::Item(i) => Some(*i),
            Entry::Ood(_) => None,
        })
        .position(|i| i == target)
        .map(|p| p + 1)
}

/// 1 if `target` is among the first `k` in-domain entries.
pub fn hr_at_k(list: &[Entry], target: usize, k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    Ok(match in_domain_rank(list, target) {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    })
}

/// `1/log₂(rank+1)` for the first occurrence of `target` within the first
/// `k` in-domain entries.
pub fn ndcg_at_k(list: &[Entry], target: usize, k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    Ok(match in_domain_rank(list, target) {
        Some(r) if r <= k => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    })
}

/// Surplus copies among the first `min(k, len)` entries, over that count.
/// OOD entries compare by normalized text. An empty list scores 0.
pub fn repeat_at_k(list: &[Entry], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let head = &list[..k.min(list.len())];
    if head.is_empty() {
        return Ok(0.0);
    }
    let distinct: HashSet<Entry> = head.iter().map(Entry::dedup_key).collect();
    Ok((head.len() - distinct.len()) as f64 / head.len() as f64)
}

/// Share of OOD entries among the first `min(k, len)` entries.
pub fn ood_at_k(list: &[Entry], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let head = &list[..k.min(list.len())];
    if head.is_empty() {
        return Ok(0.0);
    }
    let ood = head.iter().filter(|e| matches!(e, Entry::Ood(_))).count();
    Ok(ood as f64 / head.len() as f64)
}

/// Share of responses holding exactly `expected_n` `<SOI>` tokens.
pub fn csn(responses: &[Vec<TokenId>], expected_n: usize, vocab: &Vocab) -> f64 {
    if responses.is_empty() {
        return 0.0;
    }
    let soi = vocab.soi_id();
    let hits = responses
        .iter()
        .filter(|r| r.iter().filter(|&&t| t == soi).count() == expected_n)
        .count();
    hits as f64 / responses.len() as f64
}

/// Per-k means over a run, keyed `hr@k`, `ndcg@k`, `repeat@k`, `ood@k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(flatten)]
    pub metrics: BTreeMap<String, f64>,
    pub decodes: usize,
}

impl MetricReport {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }
}

pub fn evaluate_run(decodes: &[(RecommendationList, usize)], ks: &[usize]) -> Result<MetricReport, EvalError> {
    if decodes.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut metrics = BTreeMap::new();
    let n = decodes.len() as f64;
    for &k in ks {
        let (mut hr, mut ndcg, mut rep, mut ood) = (0.0, 0.0, 0.0, 0.0);
        for (list, target) in decodes {
            hr += hr_at_k(list, *target, k)?;
            ndcg += ndcg_at_k(list, *target, k)?;
            rep += repeat_at_k(list, k)?;
            ood += ood_at_k(list, k)?;
        }
        metrics.insert(format!("hr@{k}"), hr / n);
        metrics.insert(format!("ndcg@{k}"), ndcg / n);
        metrics.insert(format!("repeat@{k}"), rep / n);
        metrics.insert(format!("ood@{k}"), ood / n);
    }
    Ok(MetricReport {
        metrics,
        decodes: decodes.len(),
    })
}

/// Items ordered by interaction count, most popular first, ties by
/// position.
pub fn popularity_ranking(histories: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n];
    for h in histories {
        for &i in h {
            if i < n {
                counts[i] += 1;
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub title_len: usize,
    pub word_vocab: usize,
    pub trials: usize,
    pub warmup: usize,
    /// Titles walked per trial to time inner allowed sets.
    pub probes: usize,
    /// Titles per simulated response; visit counts reset between responses.
    pub items_per_response: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![10_000, 100_000],
            title_len: 6,
            word_vocab: 1000,
            trials: 3,
            warmup: 1,
            probes: 200,
            items_per_response: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub size: usize,
    pub tokens: usize,
    pub nodes: usize,
    pub build_seconds: f64,
    pub inner_seconds_per_token: f64,
    pub outer_seconds_per_token: f64,
}

/// Random titles over a word vocabulary; ids start after the control
/// tokens.
pub fn synthetic_titles(count: usize, title_len: usize, word_vocab: usize, seed_value: u64) -> Vec<Vec<TokenId>> {
    let mut rng = seed::rng_for(seed_value, "bench-titles");
    (0..count)
        .map(|_| {
            (0..title_len)
                .map(|_| 2 + rng.gen_range(0..word_vocab) as TokenId)
                .collect()
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Times tree construction and per-token allowed-set computation for each
/// catalog size. Reported values are medians over `trials` after `warmup`
/// discarded trials.
pub fn bench_tree(config: &BenchConfig) -> Result<Vec<BenchRow>, EvalError> {
    if config.sizes.contains(&0) || config.title_len == 0 || config.word_vocab == 0 {
        return Err(EvalError::Bench(
            "sizes, title length and vocabulary must be positive".into(),
        ));
    }
    if config.trials == 0 || config.probes == 0 {
        return Err(EvalError::Bench("trials and probes must be positive".into()));
    }
    let controls = ControlTokens { soi: 0, eoi: 1 };
    let model = UniformModel {
        vocab_size: 2 + config.word_vocab,
        hidden_width: 1,
    };
    let mut rows = Vec::with_capacity(config.sizes.len());
    for &size in &config.sizes {
        let titles = synthetic_titles(
            size,
            config.title_len,
            config.word_vocab,
            seed::mix(config.seed, size as u64),
        );
        let positions: Vec<usize> = (0..size).collect();
        let tokens = size * config.title_len;
        let (mut build, mut inner, mut outer) = (Vec::new(), Vec::new(), Vec::new());
        let mut nodes = 0;
        // One builder per size; each trial's tree is handed back so later
        // trials measure construction on warm storage.
        let mut builder = TreeBuilder::new();
        for trial in 0..config.warmup + config.trials {
            let t0 = Instant::now();
            let tree = builder
                .build(&titles, &positions)
                .map_err(|e| EvalError::Bench(e.to_string()))?;
            let b = t0.elapsed();
            nodes = tree.node_count();
            let strategy = GroundingStrategy::TitleTree(&tree);
            let mut rng = seed::rng_for(seed::mix(config.seed, trial as u64), "bench-probes");
            let (mut in_time, mut in_count) = (Duration::ZERO, 0usize);
            let (mut out_time, mut out_count) = (Duration::ZERO, 0usize);
            let mut state = DecodeState::new(&[]);
            let mut in_response = 0;
            for _ in 0..config.probes {
                if in_response == config.items_per_response.max(1) {
                    state = DecodeState::new(&[]);
                    in_response = 0;
                }
                in_response += 1;
                let title = &titles[rng.gen_range(0..size)];
                let t = Instant::now();
                let allowed = state.allowed_tokens(&strategy, controls);
                out_time += t.elapsed();
                out_count += 1;
                std::hint::black_box(&allowed);
                state
                    .advance(controls.soi, &model, &strategy, controls)
                    .map_err(|e| EvalError::Bench(e.to_string()))?;
                for &tok in title.iter().chain(std::iter::once(&controls.eoi)) {
                    let t = Instant::now();
                    let allowed = state.allowed_tokens(&strategy, controls);
                    in_time += t.elapsed();
                    in_count += 1;
                    let allowed = allowed.map_err(|e| EvalError::Bench(e.to_string()))?;
                    if !allowed.contains(tok) {
                        // Already emitted in this response; start a fresh one.
                        in_response = config.items_per_response.max(1);
                        break;
                    }
                    state
                        .advance(tok, &model, &strategy, controls)
                        .map_err(|e| EvalError::Bench(e.to_string()))?;
                }
            }
            if trial >= config.warmup {
                build.push(b.as_secs_f64());
                inner.push(in_time.as_secs_f64() / in_count.max(1) as f64);
                outer.push(out_time.as_secs_f64() / out_count.max(1) as f64);
            }
            builder.recycle(tree);
        }
        rows.push(BenchRow {
            size,
            tokens,
            nodes,
            build_seconds: median(build),
            inner_seconds_per_token: median(inner),
            outer_seconds_per_token: median(outer),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(v: &[usize]) -> Vec<Entry> {
        v.iter().map(|&i| Entry::Item(i)).collect()
    }

    #[test]
    fn hit_ratio_cutoffs() {
        let mut l = items(&[7]);
        assert_eq!(hr_at_k(&l, 7, 10).unwrap(), 1.0);
        assert_eq!(hr_at_k(&l, 8, 10).unwrap(), 0.0);
        l = items(&(0..11).collect::<Vec<_>>());
        assert_eq!(hr_at_k(&l, 10, 10).unwrap(), 0.0);
        assert_eq!(hr_at_k(&l, 10, 11).unwrap(), 1.0);
        assert_eq!(hr_at_k(&l, 1, 0), Err(EvalError::ZeroK));
    }

    #[test]
    fn ndcg_values() {
        assert_eq!(ndcg_at_k(&items(&[3, 4]), 3, 5).unwrap(), 1.0);
        let v = ndcg_at_k(&items(&[3, 4]), 4, 5).unwrap();
        assert!((v - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn repeat_values() {
        assert_eq!(repeat_at_k(&items(&[1, 2, 3]), 3).unwrap(), 0.0);
        assert!((repeat_at_k(&items(&[5, 5, 5]), 3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let l = items(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 0]);
        assert!((repeat_at_k(&l, 10).unwrap() - 0.1).abs() < 1e-15);
        let o = vec![Entry::Ood("Big Game!".into()), Entry::Ood("big  game".into())];
        assert_eq!(repeat_at_k(&o, 2).unwrap(), 0.5);
        assert_eq!(repeat_at_k(&[], 10).unwrap(), 0.0);
    }

    #[test]
    fn ood_values() {
        let mut l = items(&[0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(ood_at_k(&l, 10).unwrap(), 0.0);
        l.push(Entry::Ood("x".into()));
        l.push(Entry::Ood("y".into()));
        assert!((ood_at_k(&l, 10).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn csn_counts() {
        let v = Vocab::new();
        let r = vec![vec![0, 5, 1, 0, 6, 1], vec![9, 9], vec![0, 5, 1]];
        assert!((csn(&r, 2, &v) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(csn(&[vec![7], vec![]], 0, &v), 1.0);
    }

    #[test]
    fn run_report() {
        let r = evaluate_run(&[(items(&[4, 2]), 4)], &[5, 10]).unwrap();
        assert_eq!(r.get("hr@5"), Some(1.0));
        assert_eq!(r.get("ndcg@10"), Some(1.0));
        assert_eq!(r.get("repeat@10"), Some(0.0));
        assert_eq!(r.get("ood@5"), Some(0.0));
        assert_eq!(evaluate_run(&[], &[5]), Err(EvalError::Empty));
    }

    #[test]
    fn popularity_orders_by_count() {
        assert_eq!(popularity_ranking(&[vec![2, 1], vec![2]], 4), vec![2, 1, 0, 3]);
    }

    #[test]
    fn bench_runs_small() {
        let cfg = BenchConfig {
            sizes: vec![50, 100],
            trials: 1,
            warmup: 0,
            probes: 5,
            ..BenchConfig::default()
        };
        let rows = bench_tree(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].tokens, 600);
    }
}
