//! Gauss-Legendre quadrature with runtime node computation.
//!
//! Nodes and weights come from Newton iteration on the Legendre recurrence;
//! for the node counts used here (up to a few hundred) this converges in a
//! handful of steps per root and is accurate to machine precision.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{abs, cos};

/// A fixed Gauss-Legendre rule on the reference interval [-1, 1].
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Build an n-point rule. Panics for n == 0.
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "quadrature rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Chebyshev-like initial guess for the i-th positive root.
            let mut z = cos(core::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5));
            let mut pp = 0.0;
            for _ in 0..100 {
                // Legendre recurrence up to degree n at z.
                let mut p1 = 1.0;
                let mut p2 = 0.0;
                for k in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = ((2.0 * k as f64 + 1.0) * z * p2 - k as f64 * p3) / (k as f64 + 1.0);
                }
                pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
                let dz = p1 / pp;
                z -= dz;
                if abs(dz) < 1e-15 {
                    break;
                }
            }
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            let w = 2.0 / ((1.0 - z * z) * pp * pp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integrate f over [a, b] by affine transform of the reference rule.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut s = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(mid + half * x);
        }
        half * s
    }
}
