//! Dyadic partitions of the unit interval.
//!
//! Depth `d` splits `[0, 1]` into `2^d` bins of width `2^-d`. Bins are
//! half-open `[k/2^d, (k+1)/2^d)` except the last one at each depth, which is
//! closed at 1 so that every point of `[0, 1]` has exactly one bin.
//!
//! No tree is ever materialized: a [`BinRef`] is a `(depth, index)` pair and
//! navigation is shift arithmetic on the index.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};

/// Deepest depth whose bin edges are exact in `f64`.
pub const MAX_DEPTH: u32 = 52;

/// A bin of the dyadic tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BinRef {
    pub depth: u32,
    pub index: u64,
}

impl BinRef {
    pub fn new(depth: u32, index: u64) -> Result<Self> {
        if depth > MAX_DEPTH {
            return Err(Error::Input(format!("depth {depth} exceeds {MAX_DEPTH}")));
        }
        if index >= bins_at(depth) {
            return Err(Error::Input(format!(
                "index {index} out of range for depth {depth}"
            )));
        }
        Ok(BinRef { depth, index })
    }

    pub const fn root() -> Self {
        BinRef { depth: 0, index: 0 }
    }

    pub fn width(&self) -> f64 {
        width_at(self.depth)
    }

    pub fn lo(&self) -> f64 {
        self.index as f64 * self.width()
    }

    pub fn hi(&self) -> f64 {
        (self.index + 1) as f64 * self.width()
    }

    /// Whether this is the last bin at its depth (closed at 1).
    pub fn is_last(&self) -> bool {
        self.index + 1 == bins_at(self.depth)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo() && (x < self.hi() || (self.is_last() && x <= 1.0))
    }

    /// Ancestor of this bin at the coarser depth `depth`.
    pub fn parent(&self, depth: u32) -> Result<BinRef> {
        if depth >= self.depth {
            return Err(Error::Input(format!(
                "parent depth {depth} must be shallower than {}",
                self.depth
            )));
        }
        Ok(BinRef {
            depth,
            index: self.index >> (self.depth - depth),
        })
    }

    /// Descendants at the deeper depth `depth`, in increasing index order.
    pub fn children(&self, depth: u32) -> Result<Vec<BinRef>> {
        Ok(self
            .children_range(depth)?
            .map(|index| BinRef { depth, index })
            .collect())
    }

    /// Index range of the descendants at `depth`.
    pub fn children_range(&self, depth: u32) -> Result<Range<u64>> {
        if depth <= self.depth {
            return Err(Error::Input(format!(
                "children depth {depth} must be deeper than {}",
                self.depth
            )));
        }
        if depth > MAX_DEPTH {
            return Err(Error::Input(format!("depth {depth} exceeds {MAX_DEPTH}")));
        }
        let shift = depth - self.depth;
        Ok((self.index << shift)..((self.index + 1) << shift))
    }

    /// Whether `other` lies inside this bin (a bin contains itself).
    pub fn covers(&self, other: &BinRef) -> bool {
        other.depth >= self.depth && (other.index >> (other.depth - self.depth)) == self.index
    }
}

impl fmt::Display for BinRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B[{},{}]", self.depth, self.index)
    }
}

/// Number of bins at `depth`.
pub fn bins_at(depth: u32) -> u64 {
    1u64 << depth
}

pub fn width_at(depth: u32) -> f64 {
    (-(depth as f64)).exp2()
}

/// Bin at `depth` containing `x`.
pub fn bin_of(x: f64, depth: u32) -> Result<BinRef> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Input(format!("arm {x} outside [0, 1]")));
    }
    if depth > MAX_DEPTH {
        return Err(Error::Input(format!("depth {depth} exceeds {MAX_DEPTH}")));
    }
    Ok(BinRef {
        depth,
        index: bin_index(x, depth),
    })
}

/// Index-only variant of [`bin_of`] for hot loops; `x` must be in `[0, 1]`.
#[inline]
pub(crate) fn bin_index(x: f64, depth: u32) -> u64 {
    let n = bins_at(depth);
    // x * 2^d is exact, so flooring never misplaces a point across an edge.
    ((x * n as f64).floor() as u64).min(n - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(depth: u32, index: u64) -> BinRef {
        BinRef { depth, index }
    }

    #[test]
    fn point_location() {
        assert_eq!(bin_of(0.3, 4).unwrap(), b(4, 4));
        assert_eq!(bin_of(1.0, 3).unwrap(), b(3, 7));
        assert_eq!(bin_of(0.5, 1).unwrap(), b(1, 1));
        assert_eq!(bin_of(0.0, 0).unwrap(), BinRef::root());
    }

    #[test]
    fn point_location_rejects_out_of_range() {
        assert!(bin_of(-0.1, 2).is_err());
        assert!(bin_of(1.0000001, 2).is_err());
        assert!(bin_of(f64::NAN, 2).is_err());
        assert!(bin_of(0.5, 60).is_err());
    }

    #[test]
    fn parents() {
        assert_eq!(b(3, 5).parent(1).unwrap(), b(1, 1));
        assert_eq!(b(4, 0).parent(0).unwrap(), b(0, 0));
        assert_eq!(b(2, 3).parent(1).unwrap(), b(1, 1));
        assert!(b(2, 3).parent(2).is_err());
        assert!(b(2, 3).parent(3).is_err());
    }

    #[test]
    fn child_lists() {
        assert_eq!(
            b(0, 0).children(2).unwrap(),
            vec![b(2, 0), b(2, 1), b(2, 2), b(2, 3)]
        );
        assert_eq!(
            b(1, 1).children(3).unwrap(),
            vec![b(3, 4), b(3, 5), b(3, 6), b(3, 7)]
        );
        assert_eq!(b(2, 2).children(3).unwrap(), vec![b(3, 4), b(3, 5)]);
        assert!(b(2, 2).children(2).is_err());
    }

    #[test]
    fn widths_are_exact() {
        assert_eq!(b(3, 5).width(), 0.125);
        assert_eq!(b(3, 5).lo(), 0.625);
        assert_eq!(b(3, 5).hi(), 0.75);
        assert!(b(3, 7).contains(1.0));
        assert!(!b(3, 6).contains(0.875));
        assert!(b(3, 7).contains(0.875));
    }

    #[test]
    fn constructor_validates() {
        assert!(BinRef::new(2, 4).is_err());
        assert!(BinRef::new(2, 3).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn parent_child_roundtrip(d in 1u32..12, extra in 1u32..5, up in 0u32..12, seed in any::<u64>()) {
                let up = up % d;
                let bin = b(d, seed % bins_at(d));
                let p = bin.parent(up).unwrap();
                prop_assert!(p.children(d).unwrap().contains(&bin));
                for c in bin.children(d + extra).unwrap() {
                    prop_assert_eq!(c.parent(d).unwrap(), bin);
                    prop_assert!(c.lo() >= bin.lo() && c.hi() <= bin.hi());
                }
            }

            #[test]
            fn depth_partitions_unit_interval(x in 0.0f64..=1.0, d in 0u32..20) {
                let hits = (0..bins_at(d.min(10))).filter(|&k| b(d.min(10), k).contains(x)).count();
                prop_assert_eq!(hits, 1);
                prop_assert!(bin_of(x, d).unwrap().contains(x));
            }

            #[test]
            fn point_location_nests(x in 0.0f64..=1.0, d in 0u32..20, extra in 1u32..10) {
                let coarse = bin_of(x, d).unwrap();
                let fine = bin_of(x, d + extra).unwrap();
                prop_assert!(coarse.children(d + extra).unwrap().contains(&fine));
            }
        }
    }
}
