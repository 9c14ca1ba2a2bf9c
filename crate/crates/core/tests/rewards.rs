mod common;

use grounded_core::catalog::EmbeddingSet;
use grounded_core::decoder::{FnModel, UniformModel};
use grounded_core::rewards::{
    build_dpr_candidates, combine_rewards, conditional_perplexity, contribution_similarity, cosine,
    cosine_discriminator, r_cr, r_dc, r_dpr, r_i2i, r_ord, r_pre, r_u2i, spearman, spearman_scores, u2i_rank,
    RewardComponents, RewardError, RewardWeights,
};
use grounded_core::TokenId;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn similarity_matches_direct_counting() {
    let histories = vec![vec![0, 1, 2], vec![1, 2, 2], vec![0, 3], vec![2], vec![1, 3, 1]];
    let s = contribution_similarity(&histories, 4).unwrap();
    let touched = |u: &Vec<usize>, i: usize| u.contains(&i);
    for i in 0..4 {
        for j in 0..4 {
            let both = histories.iter().filter(|u| touched(u, i) && touched(u, j)).count() as f64;
            let ci = histories.iter().filter(|u| touched(u, i)).count() as f64;
            let cj = histories.iter().filter(|u| touched(u, j)).count() as f64;
            let want = if i == j || both == 0.0 { 0.0 } else { both / (ci * cj) };
            assert!((s.get(i, j) - want).abs() < 1e-15, "({i},{j})");
        }
    }
    // Item 1: three users, item 2: three users, two share both.
    assert!((s.get(1, 2) - 2.0 / 9.0).abs() < 1e-15);
    assert_eq!(
        contribution_similarity(&[vec![5]], 4).unwrap_err(),
        RewardError::ItemOutOfRange(5)
    );
}

#[test]
fn similarity_is_symmetric_on_random_logs() {
    let histories = common::genre_histories(300, 4);
    let s = contribution_similarity(&histories, 200).unwrap();
    for i in 0..200 {
        assert_eq!(s.get(i, i), 0.0);
        for j in 0..i {
            assert_eq!(s.get(i, j), s.get(j, i));
            assert!(s.get(i, j) >= 0.0 && s.get(i, j) <= 1.0);
        }
    }
}

/// Pearson correlation of the two position vectors.
fn pearson_positions(a: &[usize], b: &[usize]) -> f64 {
    let pos = |order: &[usize], item: usize| order.iter().position(|&x| x == item).unwrap() as f64;
    let xs: Vec<f64> = a.iter().map(|&i| pos(a, i)).collect();
    let ys: Vec<f64> = a.iter().map(|&i| pos(b, i)).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn spearman_equals_correlation_of_positions() {
    let mut rng = common::rng(5);
    let base: Vec<usize> = (10..16).collect();
    for _ in 0..500 {
        let mut a = base.clone();
        let mut b = base.clone();
        a.shuffle(&mut rng);
        b.shuffle(&mut rng);
        let rho = spearman(&a, &b).unwrap();
        assert!((rho - pearson_positions(&a, &b)).abs() < 1e-12);
        let r = r_i2i(&a, &b).unwrap();
        assert!((0.0..=1.0).contains(&r));
    }
    let rev: Vec<usize> = base.iter().rev().copied().collect();
    assert_eq!(spearman(&base, &base).unwrap(), 1.0);
    assert_eq!(spearman(&base, &rev).unwrap(), -1.0);
    assert_eq!(r_i2i(&base, &rev).unwrap(), 0.0);
    assert_eq!(spearman(&[1, 2], &[1, 3]), Err(RewardError::CandidateMismatch));
    assert_eq!(spearman(&[1], &[1]), Err(RewardError::TooShort));

    assert_eq!(spearman_scores(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).unwrap(), 0.0);
    assert!((spearman_scores(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn i2i_reward_compares_neighbourhoods() {
    let histories = common::genre_histories(400, 8);
    let s = contribution_similarity(&histories, 200).unwrap();
    let orig = s.neighbors(7, 10);
    assert_eq!(orig.len(), 10);
    assert!(!orig.contains(&7));
    for w in orig.windows(2) {
        assert!(s.get(7, w[0]) >= s.get(7, w[1]));
    }
    assert_eq!(r_i2i(&orig, &orig).unwrap(), 1.0);
    let mut swapped = orig.clone();
    swapped.swap(0, 1);
    // One adjacent swap: d² = 2, ρ = 1 − 12/990.
    let want = 0.5 * (1.0 + 1.0 - 12.0 / 990.0);
    assert!((r_i2i(&orig, &swapped).unwrap() - want).abs() < 1e-12);
}

#[test]
fn u2i_reward_decays_with_rank() {
    assert_eq!(r_u2i(1, 2000.0).unwrap(), 1.0);
    assert!((r_u2i(2001, 2000.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
    let mut last = 1.0;
    for rank in 2..50 {
        let r = r_u2i(rank, 10.0).unwrap();
        assert!(r < last && r > 0.0);
        last = r;
    }
    assert_eq!(r_u2i(0, 1.0), Err(RewardError::InvalidRank));
    assert!(r_u2i(1, 0.0).is_err());

    let emb = EmbeddingSet::new(2, vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
    assert_eq!(u2i_rank(&[0], 0, &emb).unwrap(), 1);
    assert_eq!(u2i_rank(&[0], 1, &emb).unwrap(), 2);
    assert_eq!(u2i_rank(&[0], 3, &emb).unwrap(), 4);
}

#[test]
fn perplexity_of_uniform_model_is_vocabulary_size() {
    let m = UniformModel {
        vocab_size: 37,
        hidden_width: 1,
    };
    let p = conditional_perplexity(&m, &[1, 2], &[3, 4, 5, 6]).unwrap();
    assert!((p - 37.0).abs() < 1e-9);
    assert_eq!(conditional_perplexity(&m, &[1], &[]), Err(RewardError::EmptyTarget));
}

#[test]
fn perplexity_follows_the_chain_rule() {
    // Logits depend on the prefix length and last token.
    let f = |prefix: &[TokenId]| -> Vec<f64> {
        let last = *prefix.last().unwrap_or(&0) as f64;
        (0..6)
            .map(|t| ((t as f64 + 1.0) * (last + prefix.len() as f64)).sin())
            .collect()
    };
    let m = FnModel::new(6, 1, f);
    let ctx = [2, 5];
    let target = [1, 4, 3];
    let mut log_p = 0.0;
    let mut prefix = ctx.to_vec();
    for &t in &target {
        let z = f(&prefix);
        let denom: f64 = z.iter().map(|x| x.exp()).sum();
        log_p += (z[t as usize].exp() / denom).ln();
        prefix.push(t);
    }
    let want = (-log_p / 3.0).exp();
    let got = conditional_perplexity(&m, &ctx, &target).unwrap();
    assert!((got - want).abs() < 1e-12 * want);
}

#[test]
fn complexity_and_compression_rewards_are_monotone() {
    let mut last = f64::INFINITY;
    for i in 1..100 {
        let r = r_dc(i as f64 * 0.5, 0.1).unwrap();
        assert!(r < last && r > 0.0 && r <= 1.0);
        last = r;
    }
    assert!(r_dc(0.0, 0.1).is_err());
    assert_eq!(r_cr(10, 10).unwrap(), 0.5);
    let mut last = 1.0;
    for y in 1..30 {
        let r = r_cr(10, y).unwrap();
        assert!(r < last);
        last = r;
    }
    assert_eq!(r_cr(3, 0), Err(RewardError::EmptyRewrite));
    assert_eq!(r_cr(0, 3), Err(RewardError::EmptyOriginal));
}

#[test]
fn dpr_candidates_are_the_nearest_distinct_items() {
    let cat = common::random_catalog(80, 30, 11);
    let emb = EmbeddingSet::synthesize(&cat, 16, 0).unwrap();
    for item in 0..80 {
        let c = build_dpr_candidates(item, &emb).unwrap();
        assert_eq!(c[0], item);
        assert!(!c[1..].contains(&item));
        let q = emb.vector(item);
        let worst = c[1..]
            .iter()
            .map(|&j| cosine(q, emb.vector(j)))
            .fold(f64::INFINITY, f64::min);
        for j in (0..80).filter(|j| !c.contains(j)) {
            assert!(cosine(q, emb.vector(j)) <= worst);
        }
        // The exact embedding is always recognised.
        assert_eq!(cosine_discriminator(q, &c, &emb), Some(item));
    }
    let mut v = emb.vectors().to_vec();
    v[40] = v[3].iter().map(|x| x * 1.0001 + 1e-6).collect();
    let near = EmbeddingSet::new(16, v).unwrap();
    assert_eq!(build_dpr_candidates(3, &near).unwrap()[1], 40);
    assert!(build_dpr_candidates(0, &EmbeddingSet::new(2, vec![vec![1.0, 0.0]; 3]).unwrap()).is_err());
}

#[test]
fn uninformative_rewrites_score_one_in_four() {
    // Four orthonormal candidates and isotropic rewrites make every
    // candidate equally likely to be picked.
    let mut vectors = vec![vec![0.0; 6]; 4];
    for (i, v) in vectors.iter_mut().enumerate() {
        v[i] = 1.0;
    }
    let emb = EmbeddingSet::new(6, vectors).unwrap();
    let c = build_dpr_candidates(0, &emb).unwrap();
    let mut rng = common::rng(12);
    let trials = 10_000;
    let hits: f64 = (0..trials)
        .map(|_| {
            let z: Vec<f64> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
            r_dpr(cosine_discriminator(&z, &c, &emb).unwrap(), 0)
        })
        .sum();
    let rate = hits / trials as f64;
    assert!((rate - 0.25).abs() < 0.02, "{rate}");
}

#[test]
fn combined_reward_is_the_weighted_sum() {
    let c = RewardComponents {
        u2i: 0.3,
        i2i: 0.7,
        dc: 0.2,
        cr: 0.5,
        dpr: 1.0,
    };
    let w = RewardWeights::steam();
    assert_eq!(w.as_array(), [3.0, 1.0, 2.5, 1.0, 1.0]);
    let want = 3.0 * 0.3 + 0.7 + 2.5 * 0.2 + 0.5 + 1.0;
    assert!((combine_rewards(&c, &w).unwrap() - want).abs() < 1e-12);
    assert_eq!(RewardWeights::preset("toys"), Some(RewardWeights::movies_toys()));
    assert!(RewardWeights::new(1.0, -1.0, 1.0, 1.0, 1.0).is_err());

    let mut rng = common::rng(13);
    for _ in 0..200 {
        let a: [f64; 5] = std::array::from_fn(|_| rng.gen());
        let b: [f64; 5] = std::array::from_fn(|_| rng.gen());
        let ca = RewardComponents {
            u2i: a[0],
            i2i: a[1],
            dc: a[2],
            cr: a[3],
            dpr: a[4],
        };
        let cb = RewardComponents {
            u2i: b[0],
            i2i: b[1],
            dc: b[2],
            cr: b[3],
            dpr: b[4],
        };
        let sum = RewardComponents {
            u2i: a[0] + b[0],
            i2i: a[1] + b[1],
            dc: a[2] + b[2],
            cr: a[3] + b[3],
            dpr: a[4] + b[4],
        };
        let lhs = combine_rewards(&sum, &w).unwrap();
        let rhs = combine_rewards(&ca, &w).unwrap() + combine_rewards(&cb, &w).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

#[test]
fn order_reward_rewards_early_hits() {
    assert_eq!(r_ord(&[4, 5, 6], 4), 1.0);
    assert!((r_ord(&[4, 5, 6], 6) - 0.5).abs() < 1e-15);
    assert_eq!(r_ord(&[4, 5, 6], 9), 0.0);
    assert_eq!(r_ord(&[6, 6], 6), 1.0);
    assert_eq!(r_pre(&[], 1), 0.0);
}

proptest! {
    #[test]
    fn list_rewards_agree_and_stay_in_range(list in prop::collection::vec(0usize..20, 0..12), target in 0usize..20) {
        let o = r_ord(&list, target);
        let p = r_pre(&list, target);
        prop_assert!((0.0..=1.0).contains(&o));
        prop_assert_eq!(o > 0.0, p == 1.0);
        prop_assert!(o <= p);
    }

    #[test]
    fn component_rewards_stay_in_unit_range(
        rank in 1usize..100_000,
        tau in 0.1f64..1e4,
        ppl in 1e-3f64..1e4,
        alpha in 1e-3f64..10.0,
        lx in 1usize..200,
        ly in 1usize..200,
    ) {
        for r in [r_u2i(rank, tau).unwrap(), r_dc(ppl, alpha).unwrap(), r_cr(lx, ly).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
