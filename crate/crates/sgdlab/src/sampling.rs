//! Seeded, hierarchically derivable random streams plus with-replacement
//! minibatch draws and their index-count reformulation.
//!
//! Every random decision in the library is keyed by a [`StreamKey`]: a master
//! seed plus an ordered path of labeled indices. Distinct paths give
//! statistically independent streams; the same key always reproduces the same
//! stream. The documented path schema is stable:
//!
//! - dataset examples: `rep/{r}/variant/{v}/examples` (variant 0 = S, 1 = S')
//! - teacher vector:   `teacher`
//! - index draws:      `rep/{r}/machine/{m}/round/{t}/step/{s}`
//! - test data:        `test/{t}/examples`
//!
//! Index-draw paths deliberately carry no dataset-variant segment, so a run on
//! S and a run on any single-replacement S^(i) consume identical index
//! sequences. That shared-path coupling is what makes paired stability runs
//! differ only through the replaced example.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// One labeled segment of a stream path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathSeg {
    Rep(u64),
    Variant(u32),
    Machine(u64),
    Round(u64),
    Step(u64),
    /// Purpose label with no index, e.g. `examples`, `teacher`, `test`.
    Tag(&'static str),
}

impl PathSeg {
    fn label(&self) -> &str {
        match self {
            PathSeg::Rep(_) => "rep",
            PathSeg::Variant(_) => "variant",
            PathSeg::Machine(_) => "machine",
            PathSeg::Round(_) => "round",
            PathSeg::Step(_) => "step",
            PathSeg::Tag(t) => t,
        }
    }

    fn index(&self) -> u64 {
        match self {
            PathSeg::Rep(i) | PathSeg::Machine(i) | PathSeg::Round(i) | PathSeg::Step(i) => *i,
            PathSeg::Variant(v) => u64::from(*v),
            PathSeg::Tag(_) => 0,
        }
    }
}

/// Master seed plus ordered path of labeled indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamKey {
    pub master_seed: u64,
    pub path: Vec<PathSeg>,
}

impl StreamKey {
    pub fn new(master_seed: u64) -> Self {
        StreamKey { master_seed, path: Vec::new() }
    }

    /// Returns a key extended by one segment; the receiver is unchanged.
    #[must_use]
    pub fn child(&self, seg: PathSeg) -> Self {
        let mut path = self.path.clone();
        path.push(seg);
        StreamKey { master_seed: self.master_seed, path }
    }

    /// Path rendered in the documented `label/index` schema.
    pub fn path_string(&self) -> String {
        let mut s = String::new();
        for seg in &self.path {
            if !s.is_empty() {
                s.push('/');
            }
            s.push_str(seg.label());
            if !matches!(seg, PathSeg::Tag(_)) {
                s.push('/');
                s.push_str(&seg.index().to_string());
            }
        }
        s
    }
}

/// Deterministic stream for a key. Sibling keys (any differing segment) give
/// independent streams; the mapping is a SHA-256 of the key into a ChaCha12
/// seed, so there is no correlation structure to inherit from nearby seeds.
pub fn derive_stream(key: &StreamKey) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(key.master_seed.to_le_bytes());
    for seg in &key.path {
        hasher.update(seg.label().as_bytes());
        hasher.update([0u8]);
        hasher.update(seg.index().to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(seed)
}

/// First output of the key's stream, for deriving scalar sub-seeds.
pub fn derive_subseed(key: &StreamKey) -> u64 {
    derive_stream(key).gen()
}

/// One round of with-replacement index draws: the raw indices `i_{t,j}` and
/// the multiplicity vector over `[0, n)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrawRecord {
    /// Iteration the draw belongs to.
    pub t: usize,
    /// The `b` drawn indices, in draw order.
    pub indices: Vec<usize>,
    /// counts[m] = number of draws equal to m; sums to b.
    pub counts: Vec<u32>,
}

/// Draws `b` i.i.d. uniform indices over `[0, n)` and tallies them.
pub fn draw_minibatch(t: usize, n: usize, b: usize, stream: &mut ChaCha12Rng) -> DrawRecord {
    assert!(n >= 1, "draw_minibatch: n must be >= 1");
    assert!(b >= 1, "draw_minibatch: b must be >= 1");
    let indices: Vec<usize> = (0..b).map(|_| stream.gen_range(0..n)).collect();
    let counts = index_counts(&indices, n);
    DrawRecord { t, indices, counts }
}

/// Exact multiplicity vector of `indices` over `[0, n)`.
///
/// Panics if any index is out of range (contract violation).
pub fn index_counts(indices: &[usize], n: usize) -> Vec<u32> {
    let mut counts = vec![0u32; n];
    for &i in indices {
        assert!(i < n, "index_counts: index {i} out of range for n={n}");
        counts[i] += 1;
    }
    counts
}
