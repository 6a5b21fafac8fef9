//! Ring arithmetic over the m-bit circular identifier space.
//!
//! Node ids, cluster ids and metadata keys all live in the same space. All
//! arithmetic is modulo `2^m`, where `m` is fixed per [`IdSpace`].

use std::fmt;

use crate::error::{Error, Result};

pub const DEFAULT_BITS: u32 = 64;

/// A point on the identifier ring.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Identifier(u64);

impl Identifier {
    pub fn value(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

/// The clockwise interval `(start, end]`.
///
/// `start == end` denotes the full ring unless the span is explicitly empty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RingSpan {
    pub start: Identifier,
    pub end: Identifier,
    empty: bool,
}

impl RingSpan {
    pub fn new(start: Identifier, end: Identifier) -> Self {
        RingSpan {
            start,
            end,
            empty: false,
        }
    }

    pub fn full(at: Identifier) -> Self {
        RingSpan::new(at, at)
    }

    pub fn empty(at: Identifier) -> Self {
        RingSpan {
            start: at,
            end: at,
            empty: true,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn is_full(&self) -> bool {
        !self.empty && self.start == self.end
    }

    /// `(end, start]`; the complement of the full ring is empty and vice versa.
    pub fn complement(&self) -> Self {
        if self.empty {
            RingSpan::full(self.start)
        } else if self.start == self.end {
            RingSpan::empty(self.start)
        } else {
            RingSpan::new(self.end, self.start)
        }
    }
}

/// The identifier space `[0, 2^bits)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct IdSpace {
    bits: u32,
}

impl Default for IdSpace {
    fn default() -> Self {
        IdSpace { bits: DEFAULT_BITS }
    }
}

impl IdSpace {
    pub fn new(bits: u32) -> Result<Self> {
        if (1..=64).contains(&bits) {
            Ok(IdSpace { bits })
        } else {
            Err(Error::IdBits(bits))
        }
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    pub fn mask(self) -> u64 {
        if self.bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.bits) - 1
        }
    }

    /// Number of points on the ring, `2^bits`.
    pub fn size(self) -> u128 {
        1u128 << self.bits
    }

    pub fn id(self, value: u64) -> Identifier {
        Identifier(value & self.mask())
    }

    pub fn add(self, a: Identifier, delta: u64) -> Identifier {
        self.id(a.0.wrapping_add(delta))
    }

    pub fn sub(self, a: Identifier, delta: u64) -> Identifier {
        self.id(a.0.wrapping_sub(delta))
    }

    /// `(b - a) mod 2^bits`.
    pub fn clockwise_distance(self, a: Identifier, b: Identifier) -> u64 {
        b.0.wrapping_sub(a.0) & self.mask()
    }

    pub fn in_span(self, x: Identifier, span: &RingSpan) -> bool {
        if span.empty {
            return false;
        }
        if span.start == span.end {
            return true;
        }
        let dx = self.clockwise_distance(span.start, x);
        dx != 0 && dx <= self.clockwise_distance(span.start, span.end)
    }

    /// Open interval `(a, b)`; when `a == b` this is every point except `a`.
    pub fn strictly_between(self, x: Identifier, a: Identifier, b: Identifier) -> bool {
        let dx = self.clockwise_distance(a, x);
        if a == b {
            return dx != 0;
        }
        dx != 0 && dx < self.clockwise_distance(a, b)
    }

    pub fn span_len(self, span: &RingSpan) -> u128 {
        if span.empty {
            0
        } else if span.start == span.end {
            self.size()
        } else {
            self.clockwise_distance(span.start, span.end) as u128
        }
    }

    /// Seedless 64-bit hash (FNV-1a followed by the murmur3 finalizer),
    /// truncated to the ring width.
    pub fn hash_key(self, name: &[u8]) -> Identifier {
        self.id(hash64(name))
    }
}

pub(crate) fn hash64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    fmix64(h)
}

pub(crate) fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> IdSpace {
        IdSpace::new(4).unwrap()
    }

    #[test]
    fn hash_is_deterministic() {
        let s = IdSpace::default();
        assert_eq!(s.hash_key(b"emergency"), s.hash_key(b"emergency"));
        assert_ne!(s.hash_key(b"emergency"), s.hash_key(b"emergencz"));
    }

    #[test]
    fn hash_of_empty_is_pinned() {
        // Frozen: changing this value breaks cross-release reproducibility.
        assert_eq!(IdSpace::default().hash_key(b"").value(), fmix64(0xcbf2_9ce4_8422_2325));
        assert_eq!(IdSpace::default().hash_key(b"").value(), 0xefd0_1f60_ba99_2926);
    }

    #[test]
    fn hash_truncates_to_width() {
        let s = IdSpace::new(10).unwrap();
        for i in 0..1000u32 {
            assert!(s.hash_key(&i.to_le_bytes()).value() < 1024);
        }
    }

    #[test]
    fn hash_buckets_pass_chi_square() {
        let s = IdSpace::default();
        let mut counts = [0u64; 16];
        let n = 100_000u64;
        for i in 0..n {
            let name = format!("service-{i}-{}", i.wrapping_mul(2_654_435_761));
            counts[(s.hash_key(name.as_bytes()).value() >> 60) as usize] += 1;
        }
        let expected = n as f64 / 16.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // Upper 1% point of chi-square with 15 degrees of freedom.
        assert!(chi2 < 30.578, "chi2 = {chi2}");
    }

    #[test]
    fn span_membership() {
        let s = small();
        assert!(s.in_span(s.id(5), &RingSpan::new(s.id(3), s.id(7))));
        assert!(s.in_span(s.id(1), &RingSpan::new(s.id(6), s.id(2))));
        assert!(!s.in_span(s.id(3), &RingSpan::new(s.id(3), s.id(7))));
        assert!(s.in_span(s.id(7), &RingSpan::new(s.id(3), s.id(7))));
        assert!(s.in_span(s.id(3), &RingSpan::full(s.id(3))));
        assert!(!s.in_span(s.id(3), &RingSpan::empty(s.id(3))));
    }

    #[test]
    fn distances() {
        let s = small();
        assert_eq!(s.clockwise_distance(s.id(3), s.id(7)), 4);
        assert_eq!(s.clockwise_distance(s.id(9), s.id(9)), 0);
        assert_eq!(s.clockwise_distance(s.id(15), s.id(1)), 2);
        let w = IdSpace::default();
        assert_eq!(w.clockwise_distance(w.id(u64::MAX), w.id(1)), 2);
    }

    #[test]
    fn bits_out_of_range_rejected() {
        assert!(IdSpace::new(0).is_err());
        assert!(IdSpace::new(65).is_err());
    }

    #[test]
    fn spans_of_cluster_ids_tile_the_ring() {
        let s = IdSpace::new(8).unwrap();
        let mut ids: Vec<u64> = vec![3, 17, 90, 91, 200, 255];
        ids.sort();
        for x in 0..256u64 {
            let owners = ids
                .iter()
                .enumerate()
                .filter(|(i, &id)| {
                    let pred = ids[(i + ids.len() - 1) % ids.len()];
                    s.in_span(s.id(x), &RingSpan::new(s.id(pred), s.id(id)))
                })
                .count();
            assert_eq!(owners, 1, "point {x}");
        }
    }

    proptest! {
        #[test]
        fn complement_is_exclusive(bits in 1u32..=64, a: u64, b: u64, x: u64) {
            let s = IdSpace::new(bits).unwrap();
            let span = RingSpan::new(s.id(a), s.id(b));
            let x = s.id(x);
            prop_assert!(s.in_span(x, &span) ^ s.in_span(x, &span.complement()));
        }

        #[test]
        fn distances_sum_to_ring_size(bits in 1u32..=64, a: u64, b: u64) {
            let s = IdSpace::new(bits).unwrap();
            let (a, b) = (s.id(a), s.id(b));
            prop_assume!(a != b);
            let total = s.clockwise_distance(a, b) as u128 + s.clockwise_distance(b, a) as u128;
            prop_assert_eq!(total, s.size());
        }

        #[test]
        fn k_spans_partition_small_ring(raw in proptest::collection::btree_set(0u64..256, 1..20)) {
            let s = IdSpace::new(8).unwrap();
            let ids: Vec<u64> = raw.into_iter().collect();
            let total: u128 = (0..ids.len())
                .map(|i| {
                    let pred = ids[(i + ids.len() - 1) % ids.len()];
                    s.span_len(&RingSpan::new(s.id(pred), s.id(ids[i])))
                })
                .sum();
            prop_assert_eq!(total, s.size());
            for x in 0..256u64 {
                let owners = (0..ids.len())
                    .filter(|&i| {
                        let pred = ids[(i + ids.len() - 1) % ids.len()];
                        s.in_span(s.id(x), &RingSpan::new(s.id(pred), s.id(ids[i])))
                    })
                    .count();
                prop_assert_eq!(owners, 1);
            }
        }
    }
}
