mod common;

use std::collections::HashSet;

use grounded_core::catalog::{Catalog, ControlTokens, EmbeddingSet, ItemRecord};
use grounded_core::decoder::{
    argmax, count_soi, decode_response, ground_ret, item_segments, mask_logits, step, AllowedTokens, DecodeError,
    DecodeState, FnModel, GroundingStrategy, Mode, RandomLogitModel, Selection, Selector, UniformModel, MASKED,
};
use grounded_core::objectives::ProjectionParams;
use grounded_core::tokenizer::{assign_codes, codes_to_surfaces, train_codebooks, CodeVocabulary, CodebookConfig};
use grounded_core::trie::PrefixTree;
use grounded_core::TokenId;
use rand::Rng;

fn five_items() -> Catalog {
    Catalog::from_records(
        ["red", "red fox", "blue whale", "blue", "green tea"]
            .iter()
            .enumerate()
            .map(|(i, t)| ItemRecord::new(format!("i{i}"), *t))
            .collect(),
    )
    .unwrap()
}

fn title_tree(cat: &Catalog) -> PrefixTree {
    let positions: Vec<usize> = (0..cat.len()).collect();
    PrefixTree::build(&cat.surfaces(), &positions).unwrap()
}

/// Prefers `<SOI>` outside items and otherwise the lowest token id.
fn eager_model(vocab: usize, soi: TokenId) -> FnModel {
    FnModel::new(vocab, 1, move |_| {
        let mut z: Vec<f64> = (0..vocab).map(|t| -(t as f64)).collect();
        z[soi as usize] = 5.0;
        z
    })
}

#[test]
fn masking_keeps_argmax_inside_allowed_set() {
    let mut rng = common::rng(3);
    for _ in 0..1000 {
        let n = rng.gen_range(1..40);
        let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let mut allowed: Vec<TokenId> = (0..n as TokenId).filter(|_| rng.gen_bool(0.3)).collect();
        if allowed.is_empty() {
            allowed.push(rng.gen_range(0..n as TokenId));
        }
        let masked = mask_logits(&logits, &allowed).unwrap();
        assert!(allowed.contains(&argmax(&masked).unwrap()));
    }
    let all: Vec<TokenId> = (0..3).collect();
    assert_eq!(mask_logits(&[1.0, 2.0, 3.0], &all).unwrap(), vec![1.0, 2.0, 3.0]);
    assert_eq!(argmax(&mask_logits(&[1.0, 2.0, 3.0], &[0]).unwrap()), Some(0));
    assert_eq!(mask_logits(&[1.0], &[]), Err(DecodeError::EmptyAllowedSet));
}

#[test]
fn soi_opens_an_item_at_the_root() {
    let cat = five_items();
    let tree = title_tree(&cat);
    let c = cat.vocab().controls();
    let s = GroundingStrategy::TitleTree(&tree);
    let model = eager_model(cat.vocab().len(), c.soi);
    let mut state = DecodeState::new(&[]);
    let mut sel = Selector::new(Selection::Greedy);
    assert_eq!(step(&mut state, &model, &s, c, &mut sel).unwrap(), c.soi);
    assert_eq!(state.mode(), Mode::InItem);
    assert_eq!(state.cursor(), tree.root());
}

#[test]
fn emitted_item_is_excluded_from_later_segments() {
    let cat = Catalog::from_records(vec![ItemRecord::new("x", "a b"), ItemRecord::new("y", "a c")]).unwrap();
    let tree = title_tree(&cat);
    let c = cat.vocab().controls();
    let v = cat.vocab();
    let (a, b, cc) = (v.id("a").unwrap(), v.id("b").unwrap(), v.id("c").unwrap());
    let s = GroundingStrategy::TitleTree(&tree);
    let m = UniformModel {
        vocab_size: v.len(),
        hidden_width: 1,
    };
    let mut state = DecodeState::new(&[]);
    for tok in [c.soi, a, b, c.eoi, c.soi, a] {
        state.advance(tok, &m, &s, c).unwrap();
    }
    assert_eq!(state.items_emitted(), &[0]);
    assert_eq!(state.allowed_tokens(&s, c).unwrap(), AllowedTokens::Only(vec![cc]));
    assert!(matches!(state.advance(b, &m, &s, c), Err(DecodeError::Trie(_))));
}

#[test]
fn scripted_model_lists_the_lexicographically_first_items() {
    let cat = five_items();
    let tree = title_tree(&cat);
    let c = cat.vocab().controls();
    let model = eager_model(cat.vocab().len(), c.soi);
    let out = decode_response(
        &model,
        &[],
        &GroundingStrategy::TitleTree(&tree),
        c,
        3,
        50,
        Selection::Greedy,
    )
    .unwrap();
    // Inside an item <EOI> (id 1) beats every word, so each item ends as
    // soon as it can: the order is plain lexicographic order on token ids.
    let mut order: Vec<(Vec<TokenId>, usize)> = cat.surfaces().into_iter().zip(0..).collect();
    order.sort();
    let want: Vec<usize> = order.iter().take(3).map(|(_, p)| *p).collect();
    assert_eq!(out.items, want);
    assert_eq!(count_soi(&out.response_tokens, cat.vocab()), 3);
    let segments = item_segments(&out.response_tokens, c);
    for (seg, &item) in segments.iter().zip(&out.items) {
        assert_eq!(cat.lookup_surface(seg), Some(item));
    }

    let err = decode_response(
        &model,
        &[],
        &GroundingStrategy::TitleTree(&tree),
        c,
        10,
        100,
        Selection::Greedy,
    );
    assert_eq!(err, Err(DecodeError::ExhaustedCatalog { items_emitted: 5 }));
}

fn assert_grounded(out: &[TokenId], items: &[usize], c: ControlTokens, resolve: impl Fn(&[TokenId]) -> Option<usize>) {
    let segments = item_segments(out, c);
    assert_eq!(segments.len(), items.len());
    for (seg, &item) in segments.iter().zip(items) {
        assert_eq!(resolve(seg), Some(item));
    }
    let distinct: HashSet<&usize> = items.iter().collect();
    assert_eq!(distinct.len(), items.len());
    let mut inside = false;
    for &t in out {
        if t == c.soi {
            assert!(!inside);
            inside = true;
        } else if t == c.eoi {
            assert!(inside, "<EOI> outside an item segment");
            inside = false;
        }
    }
}

#[test]
fn random_models_stay_in_catalog_under_both_trees() {
    let cat = common::random_catalog(300, 120, 11);
    let tree = title_tree(&cat);
    let emb = EmbeddingSet::synthesize(&cat, 8, 0).unwrap();
    let stack = train_codebooks(emb.vectors(), &CodebookConfig::new(2, 8, 4, 1))
        .unwrap()
        .0;
    let codes = assign_codes(&emb, &stack).unwrap();
    let mut vocab = cat.vocab().clone();
    let code_vocab = CodeVocabulary::extend(&mut vocab, 2, 8).unwrap();
    let surfaces = codes_to_surfaces(&codes, &code_vocab).unwrap();
    let code_tree = PrefixTree::build(&surfaces.surfaces, &surfaces.representative).unwrap();
    let c = cat.vocab().controls();
    let word_vocab = cat.vocab().len();
    for trial in 0..200u64 {
        let m = RandomLogitModel::new(word_vocab, trial).with_bias(c.soi, 6.0);
        let sel = Selection::Sampled { seed: trial };
        let out = decode_response(&m, &[], &GroundingStrategy::TitleTree(&tree), c, 5, 2000, sel).unwrap();
        assert_grounded(&out.response_tokens, &out.items, c, |s| cat.lookup_surface(s));

        let m = RandomLogitModel::new(vocab.len(), trial).with_bias(c.soi, 6.0);
        let out = decode_response(&m, &[], &GroundingStrategy::CodeTree(&code_tree), c, 5, 2000, sel).unwrap();
        assert_grounded(&out.response_tokens, &out.items, c, |s| code_tree.lookup(s));
    }
}

#[test]
fn sampling_renormalizes_over_the_allowed_set() {
    let mut sel = Selector::new(Selection::Sampled { seed: 5 });
    // Token 2 is masked out; the other two carry weights 1 and 3.
    let masked = vec![0.0, 3f64.ln(), MASKED];
    let n = 20_000;
    let ones = (0..n).filter(|_| sel.pick(&masked).unwrap() == 1).count();
    let freq = ones as f64 / n as f64;
    assert!((freq - 0.75).abs() < 0.015, "frequency {freq}");
}

#[test]
fn retrieval_picks_the_basis_vector() {
    // Hidden width 8 feeds an inner width of 4; W1 copies the first four
    // coordinates and GELU keeps positive entries positive.
    let proj = ProjectionParams::new(8, 4, identity(8, 4), identity(4, 4)).unwrap();
    let emb = EmbeddingSet::new(4, (0..4).map(|i| basis(4, i)).collect()).unwrap();
    assert_eq!(ground_ret(&basis(8, 2), &proj, &emb).unwrap(), 2);
    let scaled: Vec<f64> = basis(8, 2).iter().map(|x| 5.0 * x).collect();
    assert_eq!(ground_ret(&scaled, &proj, &emb).unwrap(), 2);
    assert!(matches!(
        ground_ret(&[1.0, 0.0], &proj, &emb),
        Err(DecodeError::DimensionMismatch { .. })
    ));
}

#[test]
fn retrieval_matches_brute_force_and_scaling() {
    let mut rng = common::rng(17);
    for trial in 0..200 {
        let proj = ProjectionParams::random(6, 3, trial).unwrap();
        let vectors: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let emb = EmbeddingSet::new(3, vectors.clone()).unwrap();
        let h: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let q = proj.forward(&h);
        let scores: Vec<f64> = vectors
            .iter()
            .map(|e| e.iter().zip(&q).map(|(a, b)| a * b).sum())
            .collect();
        let mut best = 0;
        for i in 1..3 {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        assert_eq!(ground_ret(&h, &proj, &emb).unwrap(), best);
    }
}

#[test]
fn retrieval_decode_inserts_the_title() {
    let cat = five_items();
    let c = cat.vocab().controls();
    let proj = ProjectionParams::new(10, 5, identity(10, 5), identity(5, 5)).unwrap();
    let emb = EmbeddingSet::new(5, (0..5).map(|i| basis(5, i)).collect()).unwrap();
    let surfaces = cat.surfaces();
    let idx = grounded_core::decoder::RetrievalIndex {
        projection: &proj,
        embeddings: &emb,
        surfaces: &surfaces,
    };
    struct Pointing(usize);
    impl grounded_core::LanguageModel for Pointing {
        fn vocab_size(&self) -> usize {
            self.0
        }
        fn logits(&self, _p: &[TokenId]) -> Vec<f64> {
            let mut z = vec![0.0; self.0];
            z[0] = 1.0;
            z
        }
        fn hidden(&self, _p: &[TokenId]) -> Vec<f64> {
            basis(10, 4)
        }
    }
    let out = decode_response(
        &Pointing(cat.vocab().len()),
        &[],
        &GroundingStrategy::Retrieval(idx),
        c,
        1,
        10,
        Selection::Greedy,
    )
    .unwrap();
    assert_eq!(out.items, vec![4]);
    assert_eq!(item_segments(&out.response_tokens, c), vec![surfaces[4].clone()]);
}

#[test]
fn counting_start_tokens() {
    let cat = five_items();
    let c = cat.vocab().controls();
    let w = cat.vocab().id("red").unwrap();
    let mut ten = Vec::new();
    for _ in 0..10 {
        ten.extend([c.soi, w, c.eoi]);
    }
    assert_eq!(count_soi(&ten, cat.vocab()), 10);
    assert_eq!(count_soi(&[w, w], cat.vocab()), 0);
    assert_eq!(count_soi(&[c.soi, w, c.eoi, c.soi, w, c.eoi], cat.vocab()), 2);
}

fn basis(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn identity(rows: usize, cols: usize) -> Vec<f64> {
    let mut m = vec![0.0; rows * cols];
    for i in 0..rows.min(cols) {
        m[i * cols + i] = 1.0;
    }
    m
}
