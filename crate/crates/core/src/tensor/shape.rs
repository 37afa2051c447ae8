use std::fmt;

use crate::error::{Error, Result};

/// Extents of a dense row-major tensor. Rank 0 is a scalar.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Shape(pub(crate) Vec<usize>);

impl Shape {
    pub fn new(extents: impl Into<Vec<usize>>) -> Result<Self> {
        let extents = extents.into();
        if extents.contains(&0) {
            return Err(Error::shape(format!("zero extent in shape {extents:?}")));
        }
        Ok(Shape(extents))
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0[axis]
    }

    /// Row-major element strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.rank()];
        for i in (0..self.rank().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }

    /// Result shape of broadcasting `self` against `other`, right-aligned.
    pub fn broadcast(&self, other: &Shape) -> Option<Shape> {
        let rank = self.rank().max(other.rank());
        let mut out = vec![1; rank];
        for (i, slot) in out.iter_mut().enumerate() {
            let a = self.aligned(rank, i);
            let b = other.aligned(rank, i);
            *slot = match (a, b) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => return None,
            };
        }
        Some(Shape(out))
    }

    /// Whether `self` can be expanded to `target` by broadcasting alone.
    pub fn expands_to(&self, target: &Shape) -> bool {
        self.rank() <= target.rank() && self.broadcast(target).as_ref() == Some(target)
    }

    /// Extent at output axis `i` when right-aligned into a rank-`rank` shape.
    fn aligned(&self, rank: usize, i: usize) -> usize {
        let offset = rank - self.rank();
        if i < offset {
            1
        } else {
            self.0[i - offset]
        }
    }

    /// Strides of `self` viewed inside the rank-`target.rank()` broadcast
    /// frame, with 0 on every broadcast axis.
    pub(crate) fn broadcast_strides(&self, target: &Shape) -> Vec<usize> {
        let rank = target.rank();
        let own = self.strides();
        let offset = rank - self.rank();
        (0..rank)
            .map(|i| {
                if i < offset || self.0[i - offset] == 1 {
                    0
                } else {
                    own[i - offset]
                }
            })
            .collect()
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl TryFrom<&[usize]> for Shape {
    type Error = Error;
    fn try_from(value: &[usize]) -> Result<Self> {
        Shape::new(value.to_vec())
    }
}

/// Walks every multi-index of `shape` in row-major order, yielding the
/// linear offsets of each operand under its own stride vector.
pub(crate) struct StridedWalk<'a, const K: usize> {
    dims: &'a [usize],
    strides: [&'a [usize]; K],
    index: Vec<usize>,
    offsets: [usize; K],
    remaining: usize,
}

impl<'a, const K: usize> StridedWalk<'a, K> {
    pub(crate) fn new(dims: &'a [usize], strides: [&'a [usize]; K]) -> Self {
        StridedWalk {
            dims,
            strides,
            index: vec![0; dims.len()],
            offsets: [0; K],
            remaining: dims.iter().product(),
        }
    }
}

impl<const K: usize> Iterator for StridedWalk<'_, K> {
    type Item = [usize; K];

    fn next(&mut self) -> Option<[usize; K]> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let current = self.offsets;
        for axis in (0..self.dims.len()).rev() {
            self.index[axis] += 1;
            for k in 0..K {
                self.offsets[k] += self.strides[k][axis];
            }
            if self.index[axis] < self.dims[axis] {
                break;
            }
            for k in 0..K {
                self.offsets[k] -= self.strides[k][axis] * self.dims[axis];
            }
            self.index[axis] = 0;
        }
        Some(current)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        let a = Shape::new([2, 1, 1]).unwrap();
        let b = Shape::new([1, 1, 2]).unwrap();
        assert_eq!(a.broadcast(&b).unwrap().dims(), &[2, 1, 2]);
        let c = Shape::new([3]).unwrap();
        let d = Shape::new([4, 3]).unwrap();
        assert_eq!(c.broadcast(&d).unwrap().dims(), &[4, 3]);
        assert!(Shape::new([2]).unwrap().broadcast(&Shape::new([3]).unwrap()).is_none());
        assert!(c.expands_to(&d));
        assert!(!d.expands_to(&c));
    }

    #[test]
    fn zero_extent_is_rejected() {
        assert!(Shape::new([2, 0]).is_err());
    }

    #[test]
    fn strides_are_row_major() {
        assert_eq!(Shape::new([2, 3, 4]).unwrap().strides(), vec![12, 4, 1]);
        assert!(Shape::scalar().strides().is_empty());
    }

    #[test]
    fn walk_visits_broadcast_offsets() {
        let out = Shape::new([2, 3]).unwrap();
        let col = Shape::new([2, 1]).unwrap().broadcast_strides(&out);
        let row = Shape::new([3]).unwrap().broadcast_strides(&out);
        let out_strides = out.strides();
        let visited: Vec<_> = StridedWalk::new(out.dims(), [&out_strides, &col, &row]).collect();
        assert_eq!(visited, vec![[0, 0, 0], [1, 0, 1], [2, 0, 2], [3, 1, 0], [4, 1, 1], [5, 1, 2]]);
    }
}
