//! Deterministic random streams keyed by (master seed, label, kind).
//!
//! Each stream is a ChaCha8 keystream whose 256-bit key is derived from the
//! key triple, so draws depend only on the key and never on scheduling.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::genealogy::Label;

/// Which independent family a stream belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamKind {
    Brownian,
    Poisson,
    UniformMark,
    /// Draws of randomized feedback policies.
    Action,
}

impl StreamKind {
    fn tag(self) -> u64 {
        match self {
            StreamKind::Brownian => 0x6272_6f77,
            StreamKind::Poisson => 0x706f_6973,
            StreamKind::UniformMark => 0x6d61_726b,
            StreamKind::Action => 0x6163_7469,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn absorb(state: &mut u64, word: u64) {
    *state ^= word;
    splitmix64(state);
}

/// Master seed of replication `index` in an experiment seeded with `seed`.
pub fn replication_seed(seed: u64, index: u64) -> u64 {
    let mut s = 0x7265_706c_6963_6174u64;
    absorb(&mut s, seed);
    absorb(&mut s, index);
    splitmix64(&mut s)
}

/// A reproducible random stream.
#[derive(Clone, Debug)]
pub struct LabelStream {
    rng: ChaCha8Rng,
}

impl LabelStream {
    pub fn new(master_seed: u64, label: &Label, kind: StreamKind) -> Self {
        let mut s = master_seed;
        absorb(&mut s, kind.tag());
        absorb(&mut s, label.generation() as u64);
        for &v in label.path() {
            absorb(&mut s, u64::from(v));
        }
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
        }
        Self {
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Uniform draw on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Exponential waiting time with the given rate.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        // 1 - U lies in (0, 1], so the log is finite
        -(1.0 - self.uniform()).ln() / rate
    }

    /// Uniform index in 0..n.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

impl RngCore for LabelStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Convenience constructor matching the operation name.
pub fn label_stream(master_seed: u64, label: &Label, kind: StreamKind) -> LabelStream {
    LabelStream::new(master_seed, label, kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(s: &str) -> Label {
        s.parse().unwrap()
    }

    #[test]
    fn same_key_same_draws() {
        let mut a = label_stream(7, &l("1·0"), StreamKind::Brownian);
        let mut b = label_stream(7, &l("1·0"), StreamKind::Brownian);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn sibling_labels_differ() {
        let mut a = label_stream(7, &l("0"), StreamKind::Brownian);
        let mut b = label_stream(7, &l("1"), StreamKind::Brownian);
        assert_ne!(a.uniform(), b.uniform());
    }

    #[test]
    fn path_boundaries_matter() {
        // "1·0" and "10" must not collide
        let mut a = label_stream(1, &l("1·0"), StreamKind::Poisson);
        let mut b = label_stream(1, &l("10"), StreamKind::Poisson);
        let mut c = label_stream(1, &Label::root(), StreamKind::Poisson);
        let (x, y, z) = (a.uniform(), b.uniform(), c.uniform());
        assert!(x != y && y != z && x != z);
    }

    #[test]
    fn kinds_are_uncorrelated() {
        let n = 10_000;
        let mut a = label_stream(99, &l("0"), StreamKind::Brownian);
        let mut b = label_stream(99, &l("0"), StreamKind::Poisson);
        let xs: Vec<f64> = (0..n).map(|_| a.uniform()).collect();
        let ys: Vec<f64> = (0..n).map(|_| b.uniform()).collect();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(&ys) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
        let r = sxy / (sxx * syy).sqrt();
        assert!(r.abs() < 0.05, "cross-correlation {r}");
    }

    #[test]
    fn replication_seeds_are_distinct() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| replication_seed(5, i)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(replication_seed(5, 0), replication_seed(6, 0));
    }

    #[test]
    fn exponential_mean() {
        let mut s = label_stream(3, &Label::root(), StreamKind::Poisson);
        let n = 20_000;
        let mean = (0..n).map(|_| s.exponential(2.0)).sum::<f64>() / n as f64;
        // SE of the mean is 0.5 / sqrt(n)
        assert!((mean - 0.5).abs() < 4.0 * 0.5 / (n as f64).sqrt());
    }
}
