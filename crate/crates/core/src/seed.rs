//! Seed derivation for reproducible, shard-independent Monte Carlo.

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Expands a 64-bit seed into a 256-bit ChaCha key.
pub fn expand_seed(seed: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut state = seed;
    for chunk in key.chunks_exact_mut(8) {
        state = mix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    key
}

/// Independent seed streams of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeedStream {
    /// Null replicates used to calibrate thresholds.
    Calibration,
    /// Replicates under the `i`-th evaluated state.
    Evaluation(u32),
}

impl SeedStream {
    fn tag(self) -> u64 {
        match self {
            SeedStream::Calibration => 0x0C41_1B8A,
            SeedStream::Evaluation(i) => 0xE7A1_0000_0000 | u64::from(i),
        }
    }
}

/// Dataset seed of replicate `index` in `stream` under the experiment seed.
pub fn replicate_seed(master: u64, stream: SeedStream, index: u64) -> u64 {
    mix64(mix64(master ^ mix64(stream.tag())) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}
