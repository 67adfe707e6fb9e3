mod common;

use std::collections::BTreeSet;

use common::unit;
use mmct_core::evaluator::{miou_at_k, retrieval_eval};
use mmct_core::rng::SeededRng;
use proptest::prelude::*;

/// Features drawn from a small pool so that exact score ties are common.
fn pooled(n: usize, pool: usize, dim: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let pool: Vec<Vec<f64>> = (0..pool).map(|_| unit(dim, rng)).collect();
    (0..n).map(|_| pool[rng.below(pool.len() as u64) as usize].clone()).collect()
}

fn score(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rank of `target` after a full sort by (score descending, index ascending).
fn brute_rank(scores: &[f64], target: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order.iter().position(|&i| i == target).unwrap() + 1
}

/// Smallest value v with at least ⌈n/2⌉ values ≤ v.
fn brute_lower_median(values: &[usize]) -> usize {
    let need = values.len().div_ceil(2);
    *values.iter().filter(|&&v| values.iter().filter(|&&u| u <= v).count() >= need).min().unwrap()
}

fn brute_r_at(ranks: &[usize], k: usize) -> f64 {
    100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// `t` is in the top K iff fewer than K tags beat it under the tie rule.
fn brute_top_k(scores: &[f64], k: usize) -> BTreeSet<usize> {
    (0..scores.len())
        .filter(|&t| (0..scores.len()).filter(|&u| scores[u] > scores[t] || (scores[u] == scores[t] && u < t)).count() < k)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn retrieval_matches_brute_force(seed in any::<u64>(), n in 1usize..=16, pool in 1usize..6, dim in 1usize..4) {
        let mut rng = SeededRng::new(seed);
        let images = pooled(n, pool, dim, &mut rng);
        let captions = pooled(n, pool, dim, &mut rng);
        let ks: Vec<usize> = (1..=n + 1).collect();
        let (i2t, t2i) = retrieval_eval(&images, &captions, &ks).unwrap();

        let i2t_ranks: Vec<usize> = (0..n)
            .map(|i| brute_rank(&captions.iter().map(|c| score(&images[i], c)).collect::<Vec<_>>(), i))
            .collect();
        let t2i_ranks: Vec<usize> = (0..n)
            .map(|j| brute_rank(&images.iter().map(|im| score(im, &captions[j])).collect::<Vec<_>>(), j))
            .collect();
        for (report, ranks) in [(&i2t, &i2t_ranks), (&t2i, &t2i_ranks)] {
            prop_assert_eq!(report.med_r, brute_lower_median(ranks));
            for &k in &ks {
                prop_assert_eq!(report.r_at[&k], brute_r_at(ranks, k));
            }
            let values: Vec<f64> = report.r_at.values().copied().collect();
            prop_assert!(values.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(report.r_at[&n], 100.0);
        }
    }

    #[test]
    fn miou_matches_brute_force(seed in any::<u64>(), n in 1usize..=16, tags in 1usize..10, k_frac in 0.0f64..1.0) {
        let mut rng = SeededRng::new(seed);
        let k = 1 + ((tags - 1) as f64 * k_frac) as usize;
        let scores: Vec<Vec<f64>> = (0..n).map(|_| (0..tags).map(|_| rng.below(4) as f64 / 4.0).collect()).collect();
        let gt: Vec<Vec<u8>> = (0..n).map(|_| (0..tags).map(|_| u8::from(rng.bernoulli(0.4))).collect()).collect();
        let expected = scores.iter().zip(&gt).map(|(s, g)| {
            let pred = brute_top_k(s, k);
            let truth: BTreeSet<usize> = (0..tags).filter(|&t| g[t] == 1).collect();
            pred.intersection(&truth).count() as f64 / pred.union(&truth).count() as f64
        }).sum::<f64>() / n as f64;
        prop_assert_eq!(miou_at_k(&scores, &gt, k).unwrap(), expected);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn reports_ignore_pair_order_without_ties(seed in any::<u64>(), n in 2usize..40) {
        let mut rng = SeededRng::new(seed);
        let images: Vec<Vec<f64>> = (0..n).map(|_| unit(8, &mut rng)).collect();
        let captions: Vec<Vec<f64>> = (0..n).map(|_| unit(8, &mut rng)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let pi: Vec<Vec<f64>> = perm.iter().map(|&i| images[i].clone()).collect();
        let pc: Vec<Vec<f64>> = perm.iter().map(|&i| captions[i].clone()).collect();
        let ks = [1, 3, 5];
        prop_assert_eq!(retrieval_eval(&images, &captions, &ks).unwrap(), retrieval_eval(&pi, &pc, &ks).unwrap());
    }
}
