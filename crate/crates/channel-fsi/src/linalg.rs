//! Banded LU factorization with partial pivoting, plus a bordered solve for
//! one scalar constraint row.
//!
//! The fluid stepper assembles one sparse system per time step whose graph is
//! a low-bandwidth band (collocated unknowns interleaved node-by-node along
//! the short grid direction). A hand-rolled band solver keeps the dependency
//! surface small and is exactly the "direct factorization below 20k unknowns"
//! regime this solver always operates in; correctness is pinned against a
//! dense reference factorization in the unit tests.

use crate::{FsiError, Result};

/// Threshold below which a pivot is treated as structurally zero.
const PIVOT_TINY: f64 = 1e-300;

/// Square band matrix in row-window storage.
///
/// Row `i` stores columns `i−bl ..= i+bl+bu`; entries beyond `i+bu` start as
/// zero and act as fill space for the pivoted elimination (row swaps can push
/// the effective upper bandwidth up to `bl+bu`).
#[derive(Clone)]
pub struct BandMatrix {
    n: usize,
    bl: usize,
    bu: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    /// Zero matrix of dimension `n` with lower/upper bandwidths `bl`, `bu`
    /// (maximum |i−j| of genuine entries below/above the diagonal).
    pub fn new(n: usize, bl: usize, bu: usize) -> Self {
        let width = 2 * bl + bu + 1;
        BandMatrix { n, bl, bu, width, data: vec![0.0; n * width] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(j + self.bl >= i && j <= i + self.bl + self.bu, "entry ({i},{j}) outside band");
        i * self.width + (j + self.bl - i)
    }

    /// Accumulate `v` into entry `(i,j)`; the entry must lie inside the
    /// declared band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j + self.bl >= i && j <= i + self.bu, "assembled entry ({i},{j}) outside declared band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.bl + self.bu >= i && j <= i + self.bl + self.bu && j + self.bl >= i {
            self.data[self.slot(i, j)]
        } else {
            0.0
        }
    }

    /// Reset all entries of row `i` to zero (used to install essential
    /// boundary rows after assembly).
    pub fn clear_row(&mut self, i: usize) {
        let start = i * self.width;
        for v in &mut self.data[start..start + self.width] {
            *v = 0.0;
        }
    }

    /// y = A·x.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "matvec dimension mismatch");
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bl);
            let hi = (i + self.bl + self.bu).min(self.n - 1);
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += self.data[i * self.width + (j + self.bl - i)] * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// LU-factor a copy of the matrix with partial pivoting. The original
    /// matrix is retained by the caller (e.g. for residual checks).
    pub fn factorize(&self) -> Result<BandLu> {
        let n = self.n;
        let bl = self.bl;
        let width = self.width;
        let mut a = self.data.clone();
        let mut mults = vec![0.0; n * bl];
        let mut pivots = vec![0usize; n];

        for j in 0..n {
            // Column j has genuine entries only in rows j..=j+bl. Pick the
            // largest as pivot.
            let rmax = (j + bl).min(n - 1);
            let mut piv_row = j;
            let mut piv_val = a[j * width + bl].abs(); // (j,j) slot: j+bl−j = bl
            for r in (j + 1)..=rmax {
                let v = a[r * width + (j + bl - r)].abs();
                if v > piv_val {
                    piv_val = v;
                    piv_row = r;
                }
            }
            if piv_val < PIVOT_TINY {
                return Err(FsiError::Solver {
                    message: format!("zero pivot at column {j} during band LU"),
                    residual: piv_val,
                });
            }
            pivots[j] = piv_row;
            if piv_row != j {
                // Swap the active parts of rows j and piv_row: columns
                // j..=min(n−1, j+bl+bu). Both row windows cover this range.
                let chi = (j + bl + self.bu).min(n - 1);
                for col in j..=chi {
                    let sj = j * width + (col + bl - j);
                    let sr = piv_row * width + (col + bl - piv_row);
                    a.swap(sj, sr);
                }
            }
            let pivot = a[j * width + bl];
            let chi = (j + bl + self.bu).min(n - 1);
            for r in (j + 1)..=rmax {
                let sl = r * width + (j + bl - r);
                let m = a[sl] / pivot;
                mults[j * bl + (r - j - 1)] = m;
                if m != 0.0 {
                    a[sl] = 0.0;
                    for col in (j + 1)..=chi {
                        let sr = r * width + (col + bl - r);
                        let sj = j * width + (col + bl - j);
                        a[sr] -= m * a[sj];
                    }
                }
            }
        }

        Ok(BandLu { n, bl, bu: self.bu, width, u: a, mults, pivots })
    }
}

/// Factored form produced by [`BandMatrix::factorize`].
pub struct BandLu {
    n: usize,
    bl: usize,
    bu: usize,
    width: usize,
    /// Upper-triangular factor in the band windows (row `i` holds columns
    /// `i ..= i+bl+bu`).
    u: Vec<f64>,
    /// Elimination multipliers, indexed `[j*bl + (r−j−1)]` for step `j`,
    /// target row `r`.
    mults: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandLu {
    /// Solve A·x = b in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n, "solve dimension mismatch");
        // Forward pass: apply row swaps and eliminations in recorded order.
        for j in 0..self.n {
            b.swap(j, self.pivots[j]);
            let rmax = (j + self.bl).min(self.n - 1);
            let bj = b[j];
            for r in (j + 1)..=rmax {
                b[r] -= self.mults[j * self.bl + (r - j - 1)] * bj;
            }
        }
        // Backward substitution on U.
        for i in (0..self.n).rev() {
            let hi = (i + self.bl + self.bu).min(self.n - 1);
            let mut acc = b[i];
            for j in (i + 1)..=hi {
                acc -= self.u[i * self.width + (j + self.bl - i)] * b[j];
            }
            b[i] = acc / self.u[i * self.width + self.bl];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Euclidean norm helper shared by the steppers' residual checks.
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Finite-difference weights (Fornberg's recursion): returns `w` such that
/// `f⁽ᵐ⁾(z) ≈ Σ w[k]·f(xs[k])` is exact for polynomials of degree
/// `xs.len()−1`. Used to build the one-sided and offset stencils for the
/// deformation derivatives without hand-copied coefficient tables.
pub fn fd_weights(z: f64, xs: &[f64], m: usize) -> Vec<f64> {
    let n = xs.len();
    assert!(n > m, "need more than m+1 = {} nodes for the {m}-th derivative", m + 1);
    // c[i][k]: weight of node i for the k-th derivative, built incrementally.
    let mut c = vec![vec![0.0; m + 1]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - z;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - z;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense reference solve via nalgebra full-pivot LU.
    fn dense_solve(a: &BandMatrix, b: &[f64]) -> Vec<f64> {
        let n = a.n();
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a.get(i, j));
        let rhs = nalgebra::DVector::from_column_slice(b);
        let x = m.full_piv_lu().solve(&rhs).expect("dense reference solve failed");
        x.iter().copied().collect()
    }

    fn random_band(n: usize, bl: usize, bu: usize, seed: u64) -> BandMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = BandMatrix::new(n, bl, bu);
        for i in 0..n {
            let lo = i.saturating_sub(bl);
            let hi = (i + bu).min(n - 1);
            for j in lo..=hi {
                a.add(i, j, rng.gen_range(-1.0..1.0));
            }
            // Mild diagonal boost keeps the random test matrices comfortably
            // conditioned without hiding pivoting bugs.
            a.add(i, i, 3.0);
        }
        a
    }

    #[test]
    fn band_lu_matches_dense_reference() {
        for &(n, bl, bu, seed) in &[(40usize, 3usize, 5usize, 7u64), (33, 6, 2, 11), (25, 1, 1, 3), (10, 9, 9, 5)] {
            let a = random_band(n, bl, bu, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = a.factorize().unwrap().solve(&b);
            let xref = dense_solve(&a, &b);
            let err = x
                .iter()
                .zip(&xref)
                .map(|(p, q)| (p - q).abs())
                .fold(0.0f64, f64::max);
            assert!(err < 1e-11, "band LU deviates from dense reference by {err:e} (n={n}, bl={bl}, bu={bu})");
            let r = a.matvec(&x);
            let res = r.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0f64, f64::max);
            assert!(res < 1e-11, "band LU residual {res:e} too large");
        }
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        // [[0,1],[1,0]] x = [2,3] has the unique solution [3,2]; an
        // unpivoted elimination would divide by zero immediately.
        let mut a = BandMatrix::new(2, 1, 1);
        a.add(0, 1, 1.0);
        a.add(1, 0, 1.0);
        let x = a.factorize().unwrap().solve(&[2.0, 3.0]);
        assert!((x[0] - 3.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14, "pivoted solve wrong: {x:?}");
    }

    #[test]
    fn singular_matrix_is_reported() {
        // Second row is a multiple of the first.
        let mut a = BandMatrix::new(2, 1, 1);
        a.add(0, 0, 1.0);
        a.add(0, 1, 2.0);
        a.add(1, 0, 2.0);
        a.add(1, 1, 4.0);
        match a.factorize() {
            Err(FsiError::Solver { .. }) => {}
            other => panic!("expected solver error for singular matrix, got {other:?}", other = other.map(|_| ())),
        }
    }

    #[test]
    fn fd_weights_reproduce_classical_stencils() {
        // Centered 5-point first derivative: (1, −8, 0, 8, −1)/12Δ.
        let xs = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let w = fd_weights(0.0, &xs, 1);
        let expect = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14, "first-derivative weights wrong: {w:?}");
        }
        // Centered 5-point second derivative: (−1, 16, −30, 16, −1)/12Δ².
        let w = fd_weights(0.0, &xs, 2);
        let expect = [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-13, "second-derivative weights wrong: {w:?}");
        }
        // One-sided weights must be exact on polynomials up to degree 4:
        // d/dx x⁴ at x = 0 from nodes 0..4 is 0.
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let w = fd_weights(0.0, &xs, 1);
        let d: f64 = xs.iter().zip(&w).map(|(x, wk)| wk * x.powi(4)).sum();
        assert!(d.abs() < 1e-12, "one-sided stencil not 4th order: {d:e}");
    }

}
