//! Seed derivation for reproducible, schedule-independent random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream keyed by
//! `(master_seed, domain)` and selected by `(trial, step)` through the
//! stream counter, so sub-streams never overlap.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Purpose tag separating otherwise identical `(trial, step)` indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    FaxionTrack,
    InitialFrequency,
    FastNoise,
    TimeDomainNoise,
    Envelope,
    Sampling,
}

impl Domain {
    fn tag(self) -> &'static [u8] {
        match self {
            Domain::FaxionTrack => b"faxion-track",
            Domain::InitialFrequency => b"initial-frequency",
            Domain::FastNoise => b"fast-noise",
            Domain::TimeDomainNoise => b"timedomain-noise",
            Domain::Envelope => b"envelope",
            Domain::Sampling => b"sampling",
        }
    }
}

/// Stream for `(master_seed, domain, trial, step)`.
pub fn stream(master_seed: u64, domain: Domain, trial: u32, step: u32) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(domain.tag());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(((trial as u64) << 32) | step as u64);
    rng
}
