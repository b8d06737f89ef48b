//! Keyed random streams. Every draw in the library comes from a generator
//! addressed by `(seed, purpose, replication)`, so results do not depend on
//! how replications are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Path,
    Rosenblatt,
    Lambda,
    Innovation,
    Test(u64),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Path => 0x5041_5448,
            Purpose::Rosenblatt => 0x524f_5342,
            Purpose::Lambda => 0x4c41_4d42,
            Purpose::Innovation => 0x494e_4e4f,
            Purpose::Test(k) => 0x5445_5354_0000_0000 ^ k,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// ChaCha8 keyed by `(seed, purpose)` with the replication index as the
/// stream id.
pub fn stream(seed: u64, purpose: Purpose, replication: u64) -> ChaCha8Rng {
    let key = splitmix(splitmix(seed) ^ purpose.tag());
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(replication);
    rng
}
