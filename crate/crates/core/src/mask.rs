//! Packed binary masks.
//!
//! Pixels are stored row-major, 64 per word, so set operations and area
//! counts reduce to word-wise logic and `count_ones`. Bits past the last
//! pixel of the final word are always zero.

use std::fmt;

const WORD: usize = 64;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    words: Vec<u64>,
    area: usize,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        let n = height * width;
        BinaryMask {
            height,
            width,
            words: vec![0; n.div_ceil(WORD)],
            area: 0,
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        let mut m = Self::new(height, width);
        let n = height * width;
        for w in m.words.iter_mut() {
            *w = u64::MAX;
        }
        let tail = n % WORD;
        if tail != 0 {
            if let Some(last) = m.words.last_mut() {
                *last = (1u64 << tail) - 1;
            }
        }
        m.area = n;
        m
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(height, width);
        for r in 0..height {
            for c in 0..width {
                if f(r, c) {
                    m.set(r, c, true);
                }
            }
        }
        m
    }

    /// Builds a mask from row-major booleans. Panics if the length is not `height * width`.
    pub fn from_bools(height: usize, width: usize, bits: &[bool]) -> Self {
        assert_eq!(bits.len(), height * width, "bit count must equal height*width");
        let mut m = Self::new(height, width);
        for (idx, &b) in bits.iter().enumerate() {
            if b {
                m.words[idx / WORD] |= 1 << (idx % WORD);
            }
        }
        m.recount();
        m
    }

    /// Builds a mask by thresholding row-major scores with a strict `>`.
    pub fn from_threshold(height: usize, width: usize, values: &[f32], threshold: f32) -> Self {
        assert_eq!(values.len(), height * width);
        let mut m = Self::new(height, width);
        for (word, chunk) in m.words.iter_mut().zip(values.chunks(WORD)) {
            let mut bits = 0u64;
            for (k, &v) in chunk.iter().enumerate() {
                bits |= ((v > threshold) as u64) << k;
            }
            *word = bits;
        }
        m.recount();
        m
    }

    pub(crate) fn from_words(height: usize, width: usize, words: Vec<u64>) -> Self {
        debug_assert_eq!(words.len(), (height * width).div_ceil(WORD));
        let mut m = BinaryMask {
            height,
            width,
            words,
            area: 0,
        };
        m.recount();
        m
    }

    fn recount(&mut self) {
        self.area = self.words.iter().map(|w| w.count_ones() as usize).sum();
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Number of pixels, `height * width`.
    #[inline]
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    /// Cached count of positive pixels.
    #[inline]
    pub fn area(&self) -> usize {
        self.area
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.area == 0
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        assert!(row < self.height && col < self.width, "pixel out of bounds");
        self.get_index(row * self.width + col)
    }

    #[inline]
    pub fn get_index(&self, idx: usize) -> bool {
        (self.words[idx / WORD] >> (idx % WORD)) & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        assert!(row < self.height && col < self.width, "pixel out of bounds");
        self.set_index(row * self.width + col, value);
    }

    pub fn set_index(&mut self, idx: usize, value: bool) {
        let bit = 1u64 << (idx % WORD);
        let word = &mut self.words[idx / WORD];
        let was = *word & bit != 0;
        if value && !was {
            *word |= bit;
            self.area += 1;
        } else if !value && was {
            *word &= !bit;
            self.area -= 1;
        }
    }

    /// Row-major linear indices of positive pixels, ascending.
    pub fn iter_ones(&self) -> Ones<'_> {
        Ones {
            words: &self.words,
            word_idx: 0,
            current: self.words.first().copied().unwrap_or(0),
        }
    }

    pub fn row_count(&self, row: usize) -> usize {
        (0..self.width).filter(|&c| self.get(row, c)).count()
    }

    pub fn col_count(&self, col: usize) -> usize {
        (0..self.height).filter(|&r| self.get(r, col)).count()
    }

    fn assert_same_dims(&self, other: &BinaryMask) {
        assert_eq!(self.dims(), other.dims(), "mask dimensions differ");
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> usize {
        self.assert_same_dims(other);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn union_area(&self, other: &BinaryMask) -> usize {
        self.area + other.area - self.intersection_area(other)
    }

    fn zip_with(&self, other: &BinaryMask, op: impl Fn(u64, u64) -> u64) -> BinaryMask {
        self.assert_same_dims(other);
        let words = self
            .words
            .iter()
            .zip(&other.words)
            .map(|(&a, &b)| op(a, b))
            .collect();
        BinaryMask::from_words(self.height, self.width, words)
    }

    pub fn and(&self, other: &BinaryMask) -> BinaryMask {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn or(&self, other: &BinaryMask) -> BinaryMask {
        self.zip_with(other, |a, b| a | b)
    }

    /// Pixels of `self` that are not in `other`.
    pub fn and_not(&self, other: &BinaryMask) -> BinaryMask {
        self.zip_with(other, |a, b| a & !b)
    }

    pub fn or_assign(&mut self, other: &BinaryMask) {
        self.assert_same_dims(other);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
        self.recount();
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.assert_same_dims(other);
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn is_disjoint(&self, other: &BinaryMask) -> bool {
        self.intersection_area(other) == 0
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.get_index(i)).collect()
    }
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BinaryMask {}x{} area={}", self.height, self.width, self.area)?;
        if self.len() <= 64 * 64 {
            for r in 0..self.height {
                let row: String = (0..self.width)
                    .map(|c| if self.get(r, c) { '#' } else { '.' })
                    .collect();
                writeln!(f, "  {row}")?;
            }
        }
        Ok(())
    }
}

pub struct Ones<'a> {
    words: &'a [u64],
    word_idx: usize,
    current: u64,
}

impl Iterator for Ones<'_> {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        loop {
            if self.current != 0 {
                let bit = self.current.trailing_zeros() as usize;
                self.current &= self.current - 1;
                return Some(self.word_idx * WORD + bit);
            }
            self.word_idx += 1;
            if self.word_idx >= self.words.len() {
                return None;
            }
            self.current = self.words[self.word_idx];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_mask_area_and_tail_bits() {
        let m = BinaryMask::full(3, 67);
        assert_eq!(m.area(), 201);
        assert_eq!(m.iter_ones().count(), 201);
        assert_eq!(m.iter_ones().last(), Some(200));
    }

    #[test]
    fn set_keeps_area_in_sync() {
        let mut m = BinaryMask::new(4, 4);
        m.set(1, 2, true);
        m.set(1, 2, true);
        assert_eq!(m.area(), 1);
        m.set(3, 3, true);
        m.set(1, 2, false);
        assert_eq!(m.area(), 1);
        assert!(m.get(3, 3));
    }

    #[test]
    fn threshold_is_strict() {
        let m = BinaryMask::from_threshold(1, 3, &[0.2, 0.21, 0.1], 0.2);
        assert_eq!(m.to_bools(), vec![false, true, false]);
    }

    #[test]
    fn set_ops() {
        let a = BinaryMask::from_bools(1, 4, &[true, true, false, false]);
        let b = BinaryMask::from_bools(1, 4, &[false, true, true, false]);
        assert_eq!(a.intersection_area(&b), 1);
        assert_eq!(a.union_area(&b), 3);
        assert_eq!(a.and_not(&b).to_bools(), vec![true, false, false, false]);
        assert!(a.and(&b).is_subset_of(&a));
        let mut c = a.clone();
        c.or_assign(&b);
        assert_eq!(c, a.or(&b));
        assert_eq!(c.area(), 3);
    }
}
