//! Deterministic task sampler.
//!
//! Task `t` of seed `s` draws from PCG64 (XSL-RR 128/64, as in
//! `rand_pcg::Pcg64`) constructed with `state = s` and `stream = t`. Bounded
//! integers in `[0, n)` use rejection sampling on raw 64-bit outputs: draw
//! `x`, reject while `x < (2^64 - n) mod n`, return `x mod n`.
//!
//! Per task: one draw picks the class; then a partial Fisher-Yates shuffle of
//! `0..pool_len` draws `shots + 1` distinct images, the first `shots` being
//! the support set and the last the query.

use rand::RngCore;
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

pub const GENERATOR: &str = "pcg64 (xsl-rr 128/64), state=seed, stream=task_index, rejection-bounded integers";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledTask {
    pub seed: u64,
    pub task_index: usize,
    pub class_index: usize,
    pub support: Vec<usize>,
    pub query: usize,
}

pub(crate) fn task_rng(seed: u64, task_index: usize) -> Pcg64 {
    Pcg64::new(u128::from(seed), task_index as u128)
}

pub(crate) fn bounded(rng: &mut impl RngCore, n: usize) -> usize {
    assert!(n > 0);
    let n = n as u64;
    let threshold = n.wrapping_neg() % n;
    loop {
        let x = rng.next_u64();
        if x >= threshold {
            return (x % n) as usize;
        }
    }
}

/// `pool_sizes[c]` is the number of images of class `c`; each must be at
/// least `shots + 1` (checked by manifest validation).
pub fn sample_task(pool_sizes: &[usize], shots: usize, seed: u64, task_index: usize) -> SampledTask {
    let mut rng = task_rng(seed, task_index);
    let class_index = bounded(&mut rng, pool_sizes.len());
    let pool = pool_sizes[class_index];
    let take = shots + 1;
    assert!(pool >= take, "class pool smaller than shots + 1");
    let mut idx: Vec<usize> = (0..pool).collect();
    for i in 0..take {
        let j = i + bounded(&mut rng, pool - i);
        idx.swap(i, j);
    }
    SampledTask {
        seed,
        task_index,
        class_index,
        support: idx[..shots].to_vec(),
        query: idx[shots],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn samples_are_distinct_and_in_range() {
        let pools = [5, 9, 12];
        for t in 0..200 {
            let s = sample_task(&pools, 4, 3, t);
            let mut all: Vec<usize> = s.support.clone();
            all.push(s.query);
            let unique: BTreeSet<_> = all.iter().collect();
            assert_eq!(unique.len(), 5);
            assert!(all.iter().all(|&i| i < pools[s.class_index]));
        }
    }

    #[test]
    fn deterministic_per_seed_and_task() {
        let pools = [6, 6];
        assert_eq!(sample_task(&pools, 1, 0, 17), sample_task(&pools, 1, 0, 17));
        let per_seed: Vec<Vec<SampledTask>> = (0..5)
            .map(|s| (0..20).map(|t| sample_task(&pools, 1, s, t)).collect())
            .collect();
        for a in 0..5 {
            for b in a + 1..5 {
                let strip = |v: &Vec<SampledTask>| {
                    v.iter()
                        .map(|t| (t.class_index, t.support.clone(), t.query))
                        .collect::<Vec<_>>()
                };
                assert_ne!(strip(&per_seed[a]), strip(&per_seed[b]));
            }
        }
    }

    #[test]
    fn classes_and_images_are_roughly_uniform() {
        let pools = [4, 4, 4, 4];
        let mut class_counts = [0usize; 4];
        let mut query_counts = [0usize; 4];
        for t in 0..4000 {
            let s = sample_task(&pools, 1, 1, t);
            class_counts[s.class_index] += 1;
            query_counts[s.query] += 1;
        }
        for c in class_counts.iter().chain(&query_counts) {
            assert!((800..1200).contains(c), "{class_counts:?} {query_counts:?}");
        }
    }

    #[test]
    fn bounded_rejects_biased_tail() {
        struct Fixed(Vec<u64>);
        impl RngCore for Fixed {
            fn next_u32(&mut self) -> u32 {
                self.next_u64() as u32
            }
            fn next_u64(&mut self) -> u64 {
                self.0.remove(0)
            }
            fn fill_bytes(&mut self, _: &mut [u8]) {
                unimplemented!()
            }
        }
        // for n = 3 the threshold is 2^64 mod 3 = 1, so 0 is rejected
        let mut rng = Fixed(vec![0, 7]);
        assert_eq!(bounded(&mut rng, 3), 1);
    }
}
