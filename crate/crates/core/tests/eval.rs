mod common;

use std::collections::HashSet;

use grounded_core::catalog::normalize_title;
use grounded_core::decoder::{decode_response, GroundingStrategy, RandomLogitModel, Selection};
use grounded_core::eval::{
    bench_tree, csn, evaluate_run, hr_at_k, ndcg_at_k, ood_at_k, popularity_ranking, repeat_at_k, resolve_response,
    BenchConfig, Entry, EvalError, RecommendationList,
};
use grounded_core::trie::PrefixTree;
use grounded_core::TokenId;
use rand::Rng;

fn random_list(rng: &mut impl Rng, len: usize) -> RecommendationList {
    (0..len)
        .map(|_| {
            if rng.gen_bool(0.2) {
                Entry::Ood(format!("zz{}", rng.gen_range(0..3)))
            } else {
                Entry::Item(rng.gen_range(0..15))
            }
        })
        .collect()
}

/// Reference metrics written straight from the definitions.
fn reference(list: &[Entry], target: usize, k: usize) -> [f64; 4] {
    let items: Vec<usize> = list
        .iter()
        .filter_map(|e| if let Entry::Item(i) = e { Some(*i) } else { None })
        .collect();
    let rank = items.iter().position(|&i| i == target).map(|p| p + 1);
    let hr = if rank.is_some_and(|r| r <= k) { 1.0 } else { 0.0 };
    let ndcg = match rank {
        Some(r) if r <= k => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    };
    let head = &list[..k.min(list.len())];
    let (mut rep, mut ood) = (0.0, 0.0);
    if !head.is_empty() {
        let mut seen = Vec::new();
        let mut dups = 0;
        for e in head {
            if seen.contains(e) {
                dups += 1;
            } else {
                seen.push(e.clone());
            }
        }
        rep = dups as f64 / head.len() as f64;
        ood = head.iter().filter(|e| matches!(e, Entry::Ood(_))).count() as f64 / head.len() as f64;
    }
    [hr, ndcg, rep, ood]
}

#[test]
fn run_means_match_per_decode_definitions() {
    let mut rng = common::rng(1);
    let decodes: Vec<(RecommendationList, usize)> = (0..100)
        .map(|_| {
            let len = rng.gen_range(0..14);
            (random_list(&mut rng, len), rng.gen_range(0..15))
        })
        .collect();
    let report = evaluate_run(&decodes, &[5, 10]).unwrap();
    assert_eq!(report.decodes, 100);
    for k in [5, 10] {
        let mut sums = [0.0; 4];
        for (list, t) in &decodes {
            for (s, v) in sums.iter_mut().zip(reference(list, *t, k)) {
                *s += v;
            }
        }
        for (name, s) in ["hr", "ndcg", "repeat", "ood"].iter().zip(sums) {
            let got = report.get(&format!("{name}@{k}")).unwrap();
            assert!((got - s / 100.0).abs() < 1e-12, "{name}@{k}");
        }
    }
    assert_eq!(evaluate_run(&[], &[5]), Err(EvalError::Empty));
}

#[test]
fn ranking_metrics_are_consistent_and_grow_with_k() {
    let mut rng = common::rng(2);
    for _ in 0..2000 {
        let len = rng.gen_range(0..20);
        let list = random_list(&mut rng, len);
        let target = rng.gen_range(0..15);
        let mut last = (0.0, 0.0);
        for k in 1..=20 {
            let hr = hr_at_k(&list, target, k).unwrap();
            let ndcg = ndcg_at_k(&list, target, k).unwrap();
            assert!(ndcg <= hr && (ndcg > 0.0) == (hr == 1.0));
            assert!(hr >= last.0 && ndcg >= last.1);
            last = (hr, ndcg);
            for v in [repeat_at_k(&list, k).unwrap(), ood_at_k(&list, k).unwrap()] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }
    assert_eq!(hr_at_k(&[], 0, 0), Err(EvalError::ZeroK));
    // OOD entries do not take up ranks.
    let list = vec![Entry::Ood("x".into()), Entry::Item(3)];
    assert_eq!(ndcg_at_k(&list, 3, 1).unwrap(), 1.0);
    assert_eq!(ood_at_k(&list, 1).unwrap(), 1.0);
}

#[test]
fn resolved_responses_flag_unknown_titles() {
    let cat = common::random_catalog(100, 40, 3);
    let vocab = cat.vocab();
    let c = vocab.controls();
    let titles: HashSet<String> = cat.items().iter().map(|i| normalize_title(&i.title)).collect();
    let mut rng = common::rng(4);
    for _ in 0..300 {
        let mut response: Vec<TokenId> = Vec::new();
        let mut want = Vec::new();
        for _ in 0..rng.gen_range(0..6) {
            let seg: Vec<TokenId> = if rng.gen_bool(0.5) {
                cat.item(rng.gen_range(0..100)).unwrap().surface.clone()
            } else {
                (0..rng.gen_range(1..4))
                    .map(|_| rng.gen_range(2..vocab.len() as TokenId))
                    .collect()
            };
            let text = vocab.detokenize(&seg);
            want.push(titles.contains(&text));
            response.push(c.soi);
            response.extend(&seg);
            response.push(c.eoi);
        }
        let list = resolve_response(&response, c, vocab, |s| cat.lookup_surface(s));
        assert_eq!(list.len(), want.len());
        for (e, known) in list.iter().zip(&want) {
            assert_eq!(matches!(e, Entry::Item(_)), *known);
        }
    }
}

#[test]
fn csn_counts_exact_item_counts() {
    let cat = common::random_catalog(5, 10, 0);
    let v = cat.vocab();
    let s = v.soi_id();
    let responses = vec![vec![s, 5, 1, s, 6, 1], vec![s, 5, 1], vec![], vec![7, s, s]];
    let hits = responses
        .iter()
        .filter(|r| r.iter().filter(|&&t| t == s).count() == 2)
        .count();
    assert_eq!(csn(&responses, 2, v), hits as f64 / 4.0);
    assert_eq!(csn(&responses, 0, v), 0.25);
    assert_eq!(csn(&[], 2, v), 0.0);
}

#[test]
fn constrained_decodes_never_leave_the_catalog() {
    let cat = common::random_catalog(200, 80, 5);
    let surfaces = cat.surfaces();
    let positions: Vec<usize> = (0..surfaces.len()).collect();
    let tree = PrefixTree::build(&surfaces, &positions).unwrap();
    let c = cat.vocab().controls();
    let mut decodes = Vec::new();
    let mut responses = Vec::new();
    for trial in 0..50 {
        let m = RandomLogitModel::new(cat.vocab().len(), trial).with_bias(c.soi, 6.0);
        let out = decode_response(
            &m,
            &[],
            &GroundingStrategy::TitleTree(&tree),
            c,
            10,
            1000,
            Selection::Greedy,
        )
        .unwrap();
        let list = resolve_response(&out.response_tokens, c, cat.vocab(), |s| cat.lookup_surface(s));
        decodes.push((list, trial as usize % 200));
        responses.push(out.response_tokens);
    }
    let report = evaluate_run(&decodes, &[10]).unwrap();
    assert_eq!(report.get("ood@10"), Some(0.0));
    assert_eq!(report.get("repeat@10"), Some(0.0));
    assert_eq!(csn(&responses, 10, cat.vocab()), 1.0);
}

#[test]
fn popularity_orders_by_count_then_position() {
    let order = popularity_ranking(&[vec![2, 2, 1], vec![3, 1], vec![0]], 4);
    assert_eq!(order, vec![1, 2, 0, 3]);
}

#[test]
fn small_benchmark_reports_every_size() {
    let cfg = BenchConfig {
        sizes: vec![200, 800],
        trials: 2,
        warmup: 1,
        probes: 20,
        ..BenchConfig::default()
    };
    let rows = bench_tree(&cfg).unwrap();
    assert_eq!(rows.iter().map(|r| r.size).collect::<Vec<_>>(), vec![200, 800]);
    for r in &rows {
        assert_eq!(r.tokens, r.size * cfg.title_len);
        assert!(r.nodes > r.size && r.nodes <= r.tokens + r.size + 1);
        assert!(r.build_seconds > 0.0 && r.inner_seconds_per_token > 0.0 && r.outer_seconds_per_token > 0.0);
    }
}
