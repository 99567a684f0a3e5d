//! Array-backed sum tree over nonnegative weights.
//!
//! Leaves live at `nodes[size + i]` for a power-of-two `size >= capacity`,
//! internal node `k` holds `nodes[2k] + nodes[2k + 1]` and `nodes[1]` is the
//! total. Sampling and single-leaf updates both touch one root-to-leaf path.

use std::cell::Cell;

use crate::error::{Error, Result};

/// Updates between full rebuilds of the internal sums.
pub const REFRESH_INTERVAL: u64 = 1 << 16;

#[derive(Clone, Debug)]
pub struct WeightedIndexTree {
    capacity: usize,
    size: usize,
    nodes: Vec<f64>,
    updates_since_refresh: u64,
    last_visits: Cell<usize>,
}

impl WeightedIndexTree {
    /// Builds a tree in O(l). Negative or non-finite weights are rejected.
    pub fn build(weights: &[f64]) -> Result<Self> {
        if let Some(pos) = weights.iter().position(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Argument(format!(
                "weight {pos} is {} (must be finite and nonnegative)",
                weights[pos]
            )));
        }
        let capacity = weights.len();
        let size = capacity.max(1).next_power_of_two();
        let mut nodes = vec![0.0; 2 * size];
        nodes[size..size + capacity].copy_from_slice(weights);
        let mut tree = Self {
            capacity,
            size,
            nodes,
            updates_since_refresh: 0,
            last_visits: Cell::new(0),
        };
        tree.rebuild();
        Ok(tree)
    }

    /// An all-zero tree with `capacity` leaves.
    pub fn zeros(capacity: usize) -> Self {
        Self::build(&vec![0.0; capacity]).expect("zeros are valid weights")
    }

    fn rebuild(&mut self) {
        for k in (1..self.size).rev() {
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
        self.updates_since_refresh = 0;
    }

    /// Nodes on a root-to-leaf path.
    pub fn depth(&self) -> usize {
        self.size.trailing_zeros() as usize + 1
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.nodes[self.size + i]
    }

    pub fn leaves(&self) -> &[f64] {
        &self.nodes[self.size..self.size + self.capacity]
    }

    /// Nodes touched by the most recent `sample` or `update`.
    pub fn last_op_visits(&self) -> usize {
        self.last_visits.get()
    }

    /// Internal node sums, indexed as in the array layout (`[0]` unused).
    pub fn internal_sums(&self) -> &[f64] {
        &self.nodes[..self.size]
    }

    /// Returns the leaf whose prefix-sum interval contains `u * total`.
    pub fn sample(&self, u: f64) -> Result<usize> {
        let total = self.total();
        if !(total > 0.0) {
            return Err(Error::EmptySupport("sum tree has zero total weight".into()));
        }
        if !(0.0..1.0).contains(&u) {
            return Err(Error::Argument(format!("uniform draw {u} outside [0, 1)")));
        }
        let mut target = u * total;
        let mut node = 1;
        let mut visits = 1;
        while node < self.size {
            let left = self.nodes[2 * node];
            let right = self.nodes[2 * node + 1];
            // Rounding can push the target past a subtree's sum; never descend
            // into a zero-weight side.
            if (target < left && left > 0.0) || right <= 0.0 {
                node *= 2;
            } else {
                target -= left;
                node = 2 * node + 1;
            }
            visits += 1;
        }
        self.last_visits.set(visits);
        Ok(node - self.size)
    }

    /// Sets leaf `i` to `w` and repairs its ancestors.
    pub fn update(&mut self, i: usize, w: f64) -> Result<()> {
        if i >= self.capacity {
            return Err(Error::Argument(format!(
                "leaf {i} out of range for capacity {}",
                self.capacity
            )));
        }
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::Argument(format!(
                "weight {w} must be finite and nonnegative"
            )));
        }
        self.set_unchecked(i, w);
        Ok(())
    }

    #[inline]
    pub(crate) fn set_unchecked(&mut self, i: usize, w: f64) {
        let mut node = self.size + i;
        self.nodes[node] = w;
        let mut visits = 1;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
            visits += 1;
        }
        self.last_visits.set(visits);
        self.updates_since_refresh += 1;
        if self.updates_since_refresh >= REFRESH_INTERVAL {
            self.rebuild();
        }
    }

    /// `log(w_i) - log(total)`.
    pub fn log_weight_fraction(&self, i: usize) -> Result<f64> {
        if i >= self.capacity {
            return Err(Error::Argument(format!(
                "leaf {i} out of range for capacity {}",
                self.capacity
            )));
        }
        let w = self.weight(i);
        let total = self.total();
        if !(w > 0.0) || !(total > 0.0) {
            return Err(Error::Domain(format!(
                "log weight fraction undefined for w_{i} = {w}, total = {total}"
            )));
        }
        Ok(w.ln() - total.ln())
    }
}
