//! The picked set `P` and remaining set `R` of an ongoing reordering.

use thiserror::Error;

use crate::sample::SamplePool;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SelectionError {
    #[error("sample {0} is out of range")]
    OutOfRange(usize),
    #[error("sample {0} has already been picked")]
    AlreadyPicked(usize),
    #[error("sample {0} appears more than once in the batch")]
    DuplicateInBatch(usize),
    #[error("nothing has been picked yet")]
    NothingPicked,
    #[error("batch is empty")]
    EmptyBatch,
}

/// Ordered picks plus, per dimension, the picked values in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionState {
    picked: Vec<usize>,
    is_picked: Vec<bool>,
    // ascending by index
    remaining: Vec<usize>,
    picked_sorted: Vec<Vec<f64>>,
}

impl SelectionState {
    pub fn new(pool: &SamplePool) -> Self {
        Self {
            picked: Vec::with_capacity(pool.len()),
            is_picked: vec![false; pool.len()],
            remaining: (0..pool.len()).collect(),
            picked_sorted: vec![Vec::with_capacity(pool.len()); pool.dim()],
        }
    }

    pub fn picked(&self) -> &[usize] {
        &self.picked
    }

    /// Unpicked indices in ascending order.
    pub fn remaining(&self) -> &[usize] {
        &self.remaining
    }

    pub fn picked_sorted(&self, j: usize) -> &[f64] {
        &self.picked_sorted[j]
    }

    pub fn is_picked(&self, i: usize) -> bool {
        self.is_picked[i]
    }

    pub fn n_picked(&self) -> usize {
        self.picked.len()
    }

    pub fn is_complete(&self) -> bool {
        self.remaining.is_empty()
    }

    pub fn check_candidate(&self, i: usize) -> Result<(), SelectionError> {
        match self.is_picked.get(i) {
            None => Err(SelectionError::OutOfRange(i)),
            Some(true) => Err(SelectionError::AlreadyPicked(i)),
            Some(false) => Ok(()),
        }
    }

    pub fn check_batch(&self, batch: &[usize]) -> Result<(), SelectionError> {
        if batch.is_empty() {
            return Err(SelectionError::EmptyBatch);
        }
        let mut seen = std::collections::HashSet::with_capacity(batch.len());
        for &i in batch {
            self.check_candidate(i)?;
            if !seen.insert(i) {
                return Err(SelectionError::DuplicateInBatch(i));
            }
        }
        Ok(())
    }

    /// Moves `i` from `R` to the end of `P`.
    pub fn insert(&mut self, pool: &SamplePool, i: usize) -> Result<(), SelectionError> {
        self.check_candidate(i)?;
        self.is_picked[i] = true;
        self.picked.push(i);
        let pos = self
            .remaining
            .binary_search(&i)
            .expect("unpicked index must be in remaining");
        self.remaining.remove(pos);
        for (j, col) in self.picked_sorted.iter_mut().enumerate() {
            let v = pool.value(i, j);
            let at = col.partition_point(|&x| x < v);
            col.insert(at, v);
        }
        Ok(())
    }

    pub fn insert_all(&mut self, pool: &SamplePool, batch: &[usize]) -> Result<(), SelectionError> {
        self.check_batch(batch)?;
        for &i in batch {
            self.insert(pool, i)?;
        }
        Ok(())
    }
}
