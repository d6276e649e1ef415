//! Bit-packed coordinate masks.
//!
//! Masks select coordinates of the flat parameter vector: which weights are
//! active in a forward pass, which ones the current task may train, which
//! ones are frozen. The packing (little-endian `u64` words, bit `i` at word
//! `i / 64`, bit `i % 64`) is also the checkpoint wire layout.

/// A fixed-length bitmask over parameter coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMask {
    words: Vec<u64>,
    len: usize,
}

impl BitMask {
    pub fn zeros(len: usize) -> Self {
        BitMask {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut m = Self::zeros(len);
        for w in &mut m.words {
            *w = u64::MAX;
        }
        m.clear_tail();
        m
    }

    pub fn from_fn(len: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut m = Self::zeros(len);
        for i in 0..len {
            if f(i) {
                m.set(i, true);
            }
        }
        m
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self::from_fn(bits.len(), |i| bits[i])
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len);
        let (w, b) = (i / 64, i % 64);
        if value {
            self.words[w] |= 1 << b;
        } else {
            self.words[w] &= !(1 << b);
        }
    }

    /// Number of set bits.
    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Indices of set bits, ascending.
    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.get(i))
    }

    pub fn union(&self, other: &BitMask) -> BitMask {
        assert_eq!(self.len, other.len, "mask length mismatch");
        let words = self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| a | b)
            .collect();
        BitMask {
            words,
            len: self.len,
        }
    }

    pub fn intersection(&self, other: &BitMask) -> BitMask {
        assert_eq!(self.len, other.len, "mask length mismatch");
        let words = self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| a & b)
            .collect();
        BitMask {
            words,
            len: self.len,
        }
    }

    /// True if no bit is set in both masks.
    pub fn is_disjoint(&self, other: &BitMask) -> bool {
        assert_eq!(self.len, other.len, "mask length mismatch");
        self.words.iter().zip(&other.words).all(|(a, b)| a & b == 0)
    }

    /// True if every set bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BitMask) -> bool {
        assert_eq!(self.len, other.len, "mask length mismatch");
        self.words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| a & !b == 0)
    }

    /// Raw little-endian words, tail bits guaranteed zero.
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn from_words(words: Vec<u64>, len: usize) -> Option<Self> {
        if words.len() != len.div_ceil(64) {
            return None;
        }
        let mut m = BitMask { words, len };
        let tail_dirty = {
            let check = m.clone();
            let mut cleared = m.clone();
            cleared.clear_tail();
            check != cleared
        };
        if tail_dirty {
            return None;
        }
        m.clear_tail();
        Some(m)
    }

    fn clear_tail(&mut self) {
        let used = self.len % 64;
        if used != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << used) - 1;
            }
        }
        if self.len == 0 {
            self.words.clear();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn set_get_count() {
        let mut m = BitMask::zeros(130);
        assert_eq!(m.count_ones(), 0);
        m.set(0, true);
        m.set(64, true);
        m.set(129, true);
        assert_eq!(m.count_ones(), 3);
        assert!(m.get(64));
        assert!(!m.get(63));
        m.set(64, false);
        assert_eq!(m.count_ones(), 2);
        assert_eq!(m.iter_ones().collect::<Vec<_>>(), vec![0, 129]);
    }

    #[test]
    fn ones_has_clean_tail() {
        let m = BitMask::ones(70);
        assert_eq!(m.count_ones(), 70);
        assert_eq!(m.words().len(), 2);
        assert_eq!(m.words()[1] >> 6, 0);
    }

    #[test]
    fn subset_and_disjoint() {
        let a = BitMask::from_bools(&[true, false, true, false]);
        let b = BitMask::from_bools(&[true, true, true, false]);
        assert!(a.is_subset_of(&b));
        assert!(!b.is_subset_of(&a));
        let c = BitMask::from_bools(&[false, true, false, true]);
        assert!(a.is_disjoint(&c));
        assert!(!a.is_disjoint(&b));
    }

    proptest! {
        #[test]
        fn words_round_trip(bits in proptest::collection::vec(any::<bool>(), 0..200)) {
            let m = BitMask::from_bools(&bits);
            let back = BitMask::from_words(m.words().to_vec(), m.len()).unwrap();
            prop_assert_eq!(back, m);
        }

        #[test]
        fn union_intersection_counts(bits_a in proptest::collection::vec(any::<bool>(), 100), bits_b in proptest::collection::vec(any::<bool>(), 100)) {
            let a = BitMask::from_bools(&bits_a);
            let b = BitMask::from_bools(&bits_b);
            let u = a.union(&b);
            let i = a.intersection(&b);
            prop_assert_eq!(u.count_ones() + i.count_ones(), a.count_ones() + b.count_ones());
            prop_assert!(i.is_subset_of(&u));
        }
    }
}
