#![allow(dead_code)]

use grounded_core::catalog::{Catalog, ItemRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` items with distinct random titles of 1 to 4 words drawn from
/// `words` distinct words. Some titles are prefixes of others.
pub fn random_catalog(n: usize, words: usize, seed: u64) -> Catalog {
    let mut r = rng(seed);
    let mut seen = HashSet::new();
    let mut recs = Vec::with_capacity(n);
    while recs.len() < n {
        let len = r.gen_range(1..=4);
        let title: Vec<String> = (0..len).map(|_| format!("w{}", r.gen_range(0..words))).collect();
        let title = title.join(" ");
        if seen.insert(title.clone()) {
            recs.push(ItemRecord::new(format!("item{}", recs.len()), title));
        }
    }
    Catalog::from_records(recs).unwrap()
}

/// Ten genres of twenty items each. Titles are `"g<genre> t<item>"`.
pub fn genre_catalog() -> Catalog {
    let recs = (0..200)
        .map(|i| ItemRecord::new(format!("it{i}"), format!("g{} t{i}", i / 20)))
        .collect();
    Catalog::from_records(recs).unwrap()
}

/// Users with a favourite genre; every interaction comes from that genre
/// with Zipf(1) popularity over the genre's items, except for a 10% chance
/// of a uniformly random item.
pub fn genre_histories(users: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut r = rng(seed);
    let weights: Vec<f64> = (1..=20).map(|k| 1.0 / k as f64).collect();
    let total: f64 = weights.iter().sum();
    (0..users)
        .map(|_| {
            let genre = r.gen_range(0..10);
            let len = r.gen_range(6..=12);
            (0..len)
                .map(|_| {
                    if r.gen::<f64>() < 0.1 {
                        return r.gen_range(0..200);
                    }
                    let mut u = r.gen::<f64>() * total;
                    let mut k = 19;
                    for (j, w) in weights.iter().enumerate() {
                        if u < *w {
                            k = j;
                            break;
                        }
                        u -= w;
                    }
                    genre * 20 + k
                })
                .collect()
        })
        .collect()
}

/// Central finite difference of `f` along every coordinate of `x`.
pub fn numeric_gradient(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-12)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}
