use crate::Scalar;

/// Binary sum tree (with a companion min tree) over a power-of-two number of
/// leaves. Node 1 is the root; leaf `i` lives at `capacity + i`.
///
/// Updates recompute each ancestor from its two children, so internal nodes
/// never drift from the sum of their children by more than one rounding.
#[derive(Clone, Debug, PartialEq)]
pub struct SumTree<T> {
    capacity: usize,
    sums: Vec<T>,
    mins: Vec<T>,
}

impl<T: Scalar> SumTree<T> {
    /// Holds at least `min_capacity` leaves, all zero.
    pub fn new(min_capacity: usize) -> Self {
        assert!(min_capacity > 0, "contract violation: sum tree capacity must be positive");
        let capacity = min_capacity.next_power_of_two();
        Self {
            capacity,
            sums: vec![T::zero(); 2 * capacity],
            mins: vec![T::infinity(); 2 * capacity],
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> T {
        self.sums[1]
    }

    /// Smallest weight among leaves that were ever set.
    pub fn min(&self) -> T {
        self.mins[1]
    }

    pub fn get(&self, leaf: usize) -> T {
        self.sums[self.capacity + leaf]
    }

    pub fn set(&mut self, leaf: usize, weight: T) {
        assert!(leaf < self.capacity, "contract violation: leaf {leaf} out of range");
        assert!(weight >= T::zero() && weight.is_finite(), "contract violation: weight must be finite and >= 0");
        let mut i = self.capacity + leaf;
        self.sums[i] = weight;
        self.mins[i] = weight;
        while i > 1 {
            i /= 2;
            self.sums[i] = self.sums[2 * i] + self.sums[2 * i + 1];
            self.mins[i] = self.mins[2 * i].min(self.mins[2 * i + 1]);
        }
    }

    /// Leaf whose cumulative-weight interval contains `mass`, for
    /// `0 <= mass < total()`. Never returns a zero-weight leaf while the
    /// total is positive.
    pub fn find_prefix(&self, mut mass: T) -> usize {
        assert!(self.total() > T::zero(), "contract violation: prefix search on an empty tree");
        let mut i = 1;
        while i < self.capacity {
            let (l, r) = (2 * i, 2 * i + 1);
            if (mass < self.sums[l] && self.sums[l] > T::zero()) || self.sums[r] <= T::zero() {
                i = l;
            } else {
                mass -= self.sums[l];
                i = r;
            }
        }
        i - self.capacity
    }

    /// Largest deviation of an internal node from the sum of its children.
    pub fn max_inconsistency(&self) -> T {
        (1..self.capacity)
            .map(|i| (self.sums[i] - (self.sums[2 * i] + self.sums[2 * i + 1])).abs())
            .fold(T::zero(), T::max)
    }
}
