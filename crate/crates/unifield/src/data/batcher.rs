//! Mixed-domain batching: each epoch is a seeded shuffle over the union of
//! all domains' training samples; every sample is subsampled to a point
//! budget by seeded choice without replacement. Batches mix domains freely.

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::Sample;

#[derive(Debug)]
pub struct MixedBatcher {
    samples: Vec<Sample>,
    batch_size: usize,
    points_per_sample: usize,
    seed: u64,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
}

impl MixedBatcher {
    pub fn new(
        samples: Vec<Sample>,
        batch_size: usize,
        points_per_sample: usize,
        seed: u64,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::contract("batcher needs at least one training sample"));
        }
        if batch_size == 0 || points_per_sample == 0 {
            return Err(Error::contract(
                "batch size and point budget must be positive",
            ));
        }
        let mut b = MixedBatcher {
            samples,
            batch_size,
            points_per_sample,
            seed,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
        };
        b.reshuffle();
        Ok(b)
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn reshuffle(&mut self) {
        let mut rng = Rng::new(self.seed).derive(0xE70C).derive(self.epoch);
        self.order = (0..self.samples.len()).collect();
        rng.shuffle(&mut self.order);
        self.cursor = 0;
    }

    /// Next batch of subsampled samples. The final batch of an epoch may be
    /// short; the next call starts a fresh epoch shuffle.
    pub fn next_batch(&mut self) -> Vec<Sample> {
        if self.cursor >= self.order.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let picks: Vec<usize> = self.order[self.cursor..end].to_vec();
        self.cursor = end;

        picks
            .iter()
            .map(|&idx| {
                let s = &self.samples[idx];
                if s.len() <= self.points_per_sample {
                    return s.clone();
                }
                let mut rng = Rng::new(self.seed)
                    .derive(0x5B5A)
                    .derive(self.epoch)
                    .derive(idx as u64);
                let chosen = rng.choose(s.len(), self.points_per_sample);
                s.subsample(&chosen)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{gen_cylinder, gen_sphere};

    fn pool() -> Vec<Sample> {
        let mut out = Vec::new();
        for i in 0..5 {
            out.push(gen_cylinder(20, 0.0, i).unwrap().with_domain(0));
        }
        for i in 0..3 {
            out.push(gen_sphere(20, 0.0, 100 + i).unwrap().with_domain(1));
        }
        out
    }

    #[test]
    fn epoch_covers_every_sample_exactly_once() {
        let mut b = MixedBatcher::new(pool(), 3, 16, 7).unwrap();
        let mut tags = Vec::new();
        // 8 samples, batch 3 => batches of 3, 3, 2 in one epoch
        for _ in 0..3 {
            for s in b.next_batch() {
                tags.push(s.tag.clone());
            }
        }
        tags.sort();
        let mut expect: Vec<String> = pool().iter().map(|s| s.tag.clone()).collect();
        expect.sort();
        assert_eq!(tags, expect);
        assert_eq!(b.epoch(), 0);
        b.next_batch();
        assert_eq!(b.epoch(), 1);
    }

    #[test]
    fn fixed_seed_reproduces_batch_sequence() {
        let run = || {
            let mut b = MixedBatcher::new(pool(), 2, 8, 42).unwrap();
            let mut log = Vec::new();
            for _ in 0..6 {
                for s in b.next_batch() {
                    log.push((s.tag.clone(), s.points.coords().to_vec()));
                }
            }
            log
        };
        let a = run();
        let c = run();
        assert_eq!(a.len(), c.len());
        for ((ta, pa), (tc, pc)) in a.iter().zip(&c) {
            assert_eq!(ta, tc);
            assert!(pa.iter().zip(pc).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn subsampling_respects_point_budget() {
        let mut b = MixedBatcher::new(pool(), 4, 12, 1).unwrap();
        for s in b.next_batch() {
            assert_eq!(s.len(), 12);
            assert_eq!(s.target.len(), 12);
        }
        // budget larger than the sample keeps every point
        let mut b = MixedBatcher::new(pool(), 4, 50, 1).unwrap();
        for s in b.next_batch() {
            assert_eq!(s.len(), 20);
        }
    }

    #[test]
    fn batches_mix_domains() {
        let mut b = MixedBatcher::new(pool(), 8, 8, 3).unwrap();
        let batch = b.next_batch();
        let domains: std::collections::BTreeSet<usize> =
            batch.iter().map(|s| s.domain).collect();
        assert_eq!(domains.len(), 2);
    }

    #[test]
    fn rejects_empty_pool() {
        assert!(MixedBatcher::new(Vec::new(), 4, 16, 0).is_err());
    }
}
