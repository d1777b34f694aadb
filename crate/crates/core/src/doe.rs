//! Latin hypercube design of experiments.

use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::rng::{unit_open, RunRng};

/// n-point Latin hypercube in the open unit cube (0,1)^dim.
///
/// Each dimension gets an independent random permutation of the n strata and
/// one jitter per cell, so every one-dimensional projection is stratified.
/// Draw order is fixed (dimension-major), keeping the design reproducible.
pub fn latin_hypercube(n: usize, dim: usize, rng: &mut RunRng) -> Matrix {
    assert!(n > 0 && dim > 0, "degenerate design requested");
    let mut m = Matrix::zeros(n, dim);
    for j in 0..dim {
        let perm = permutation(n, rng);
        for i in 0..n {
            let v = (perm[i] as f64 + unit_open(rng)) / n as f64;
            m.set(i, j, v);
        }
    }
    m
}

/// Fisher-Yates shuffle of 0..n.
fn permutation(n: usize, rng: &mut RunRng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = uniform_index(rng, i + 1);
        p.swap(i, j);
    }
    p
}

/// Unbiased uniform draw from 0..bound via masked rejection.
fn uniform_index(rng: &mut RunRng, bound: usize) -> usize {
    use rand_chacha::rand_core::RngCore;
    debug_assert!(bound > 0);
    let bound = bound as u64;
    let mask = bound.next_power_of_two() - 1;
    loop {
        let v = rng.next_u64() & mask;
        if v < bound {
            return v as usize;
        }
    }
}
