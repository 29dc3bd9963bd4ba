//! Keyed, reproducible random-number streams.
//!
//! Every source of randomness in a simulation is a [`ChaCha8Rng`] keyed by
//! `(master_seed, domain tag, client, round)`. Streams are independent by
//! construction, so clients may train concurrently (or in any order) without
//! perturbing each other's draws, and a single `master_seed` fully determines
//! an experiment.
//!
//! The cipher's word position (`get_word_pos`/`set_word_pos`) is what client
//! checkpoints capture as their `rng_cursor`: restoring it replays the exact
//! draw sequence of an uninterrupted run.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A named random stream within one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Synthetic dataset generation.
    DataGen,
    /// Train/test split shuffle.
    Split,
    /// Client data partitioning.
    Partition,
    /// Per-client compute-capacity draws.
    Capacity,
    /// Model weight initialization.
    ModelInit,
    /// Per-round client availability sampling.
    Availability { round: u64 },
    /// Per-round failure injection.
    Failures { round: u64 },
    /// Per-round random-baseline selection.
    RandomSelection { round: u64 },
    /// A client's local-training draws (epoch shuffles) for one round.
    LocalTrain { client: u64, round: u64 },
    /// A client's update-noise draws for one round.
    UpdateNoise { client: u64, round: u64 },
}

impl Stream {
    /// Domain-separation words: (tag, client-ish, round-ish).
    fn words(self) -> (u64, u64, u64) {
        match self {
            Stream::DataGen => (1, 0, 0),
            Stream::Split => (2, 0, 0),
            Stream::Partition => (3, 0, 0),
            Stream::Capacity => (4, 0, 0),
            Stream::ModelInit => (5, 0, 0),
            Stream::Availability { round } => (6, 0, round),
            Stream::Failures { round } => (7, 0, round),
            Stream::RandomSelection { round } => (8, 0, round),
            Stream::LocalTrain { client, round } => (9, client, round),
            Stream::UpdateNoise { client, round } => (10, client, round),
        }
    }
}

/// Derive the generator for `stream` under `master_seed`.
///
/// The 256-bit ChaCha key is the four words `(master_seed, tag, client,
/// round)` laid out little-endian, so distinct streams can never collide.
pub fn seeded(master_seed: u64, stream: Stream) -> ChaCha8Rng {
    let (tag, a, b) = stream.words();
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&tag.to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_key_same_stream() {
        let mut a = seeded(7, Stream::LocalTrain { client: 3, round: 9 });
        let mut b = seeded(7, Stream::LocalTrain { client: 3, round: 9 });
        let xs: Vec<u64> = (0..16).map(|_| a.random()).collect();
        let ys: Vec<u64> = (0..16).map(|_| b.random()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn streams_are_domain_separated() {
        let mut a = seeded(7, Stream::LocalTrain { client: 3, round: 9 });
        let mut b = seeded(7, Stream::UpdateNoise { client: 3, round: 9 });
        let mut c = seeded(8, Stream::LocalTrain { client: 3, round: 9 });
        let x: u64 = a.random();
        assert_ne!(x, b.random());
        assert_ne!(x, c.random());
    }

    #[test]
    fn word_pos_round_trips() {
        let mut rng = seeded(1, Stream::LocalTrain { client: 0, round: 0 });
        let _: [u64; 5] = rng.random();
        let pos = rng.get_word_pos();
        let next: u64 = rng.random();
        rng.set_word_pos(pos);
        assert_eq!(next, rng.random::<u64>());
    }
}
