//! Discrete transformed operators and integral forms on the reference
//! rectangle `D = (0,L) × (0,1)`.
//!
//! Pulling the channel `Ω(h)` back to `D` replaces the Cartesian derivatives
//! by the "hatted" ones
//!
//! ```text
//! ∂̂₁f = ∂_{y₁}f − (y₂/h)·∂_{y₁}h·∂_{y₂}f,      ∂̂₂f = (1/h)·∂_{y₂}f,
//! ```
//!
//! which this module discretizes with 2nd-order centered differences
//! (one-sided at the boundary nodes) on a collocated uniform grid. On top of
//! those sit the transformed divergence `div_h`, deformation tensor `e_h`,
//! the viscous bilinear form, the convective trilinear form `b_h` (with the
//! ±½ boundary corrections that make it skew-symmetric for transformed
//! divergence-free transport fields), and the ε-weighted pressure form. All
//! integrals use the tensor-product trapezoidal rule on the same nodes, so
//! every identity the diagnostics check holds with *shared* discrete
//! gradients.

use crate::geometry::{DeformationSnapshot, Grid1d};
use crate::{FsiError, Result};

/// Uniform collocated grid on `D = (0,L) × (0,1)`: `n1 × n2` cells,
/// `(n1+1) × (n2+1)` nodes, `y₂`-index fastest in memory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid2d {
    pub l: f64,
    pub n1: usize,
    pub n2: usize,
}

impl Grid2d {
    pub fn new(l: f64, n1: usize, n2: usize) -> Self {
        assert!(l > 0.0, "channel length must be positive");
        assert!(n1 >= 4 && n2 >= 4, "need at least 4 cells per direction");
        Grid2d { l, n1, n2 }
    }

    /// Nodes along y₁.
    pub fn m1(&self) -> usize {
        self.n1 + 1
    }

    /// Nodes along y₂.
    pub fn m2(&self) -> usize {
        self.n2 + 1
    }

    pub fn node_count(&self) -> usize {
        self.m1() * self.m2()
    }

    pub fn dy1(&self) -> f64 {
        self.l / self.n1 as f64
    }

    pub fn dy2(&self) -> f64 {
        1.0 / self.n2 as f64
    }

    pub fn y1(&self, i: usize) -> f64 {
        self.l * i as f64 / self.n1 as f64
    }

    pub fn y2(&self, j: usize) -> f64 {
        j as f64 / self.n2 as f64
    }

    /// Flat node index of `(i, j)`.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.m1() && j < self.m2());
        i * self.m2() + j
    }

    /// Trapezoidal weight along y₁.
    pub fn w1(&self, i: usize) -> f64 {
        if i == 0 || i == self.n1 {
            0.5 * self.dy1()
        } else {
            self.dy1()
        }
    }

    /// Trapezoidal weight along y₂.
    pub fn w2(&self, j: usize) -> f64 {
        if j == 0 || j == self.n2 {
            0.5 * self.dy2()
        } else {
            self.dy2()
        }
    }

    /// The 1D wall grid shared with the structure solver.
    pub fn wall_grid(&self) -> Grid1d {
        Grid1d::new(self.l, self.n1)
    }
}

/// Transformed velocity and kinematic pressure at one time level.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub q: Vec<f64>,
    pub t: f64,
}

impl FlowState {
    pub fn zero(grid: &Grid2d) -> Self {
        let n = grid.node_count();
        FlowState { u1: vec![0.0; n], u2: vec![0.0; n], q: vec![0.0; n], t: 0.0 }
    }

    /// Maximum violation of the essential boundary data of the velocity
    /// space: `u₁ = 0` on the wall `S_w`, `u₂ = 0` on `S_in ∪ S_out ∪ S_c`.
    pub fn bc_violation(&self, grid: &Grid2d) -> f64 {
        let mut v = 0.0f64;
        for i in 0..grid.m1() {
            v = v.max(self.u1[grid.idx(i, grid.n2)].abs()); // wall
            v = v.max(self.u2[grid.idx(i, 0)].abs()); // bottom
        }
        for j in 0..grid.m2() {
            v = v.max(self.u2[grid.idx(0, j)].abs()); // inflow
            v = v.max(self.u2[grid.idx(grid.n1, j)].abs()); // outflow
        }
        v
    }
}

/// First-derivative stencil at position `i` of `m` nodes:
/// `([nodes], [coefficients])` with `inv_2d = 1/(2Δ)`. Centered inside,
/// one-sided 2-point at the two boundary nodes. Together with the
/// trapezoidal weights this is a summation-by-parts pair
/// (`DᵀW + WD = diag(−1, 0, …, 0, 1)`), which keeps the weak Gram
/// operators built from it second-order accurate up to the boundary;
/// a 3-point one-sided closure would poison the boundary-adjacent rows
/// of `DᵀWD` and drop the solver to first order globally.
#[inline]
pub(crate) fn d_stencil(i: usize, m: usize, inv_2d: f64) -> ([usize; 3], [f64; 3]) {
    if i == 0 {
        ([0, 1, 2], [-2.0 * inv_2d, 2.0 * inv_2d, 0.0])
    } else if i == m - 1 {
        ([m - 3, m - 2, m - 1], [0.0, -2.0 * inv_2d, 2.0 * inv_2d])
    } else {
        ([i - 1, i, i + 1], [-inv_2d, 0.0, inv_2d])
    }
}

/// ∂f/∂y₁ at node `(i,j)`.
#[inline]
pub fn d_y1(field: &[f64], grid: &Grid2d, i: usize, j: usize) -> f64 {
    let (nodes, coeff) = d_stencil(i, grid.m1(), 0.5 / grid.dy1());
    coeff[0] * field[grid.idx(nodes[0], j)]
        + coeff[1] * field[grid.idx(nodes[1], j)]
        + coeff[2] * field[grid.idx(nodes[2], j)]
}

/// ∂f/∂y₂ at node `(i,j)`.
#[inline]
pub fn d_y2(field: &[f64], grid: &Grid2d, i: usize, j: usize) -> f64 {
    let (nodes, coeff) = d_stencil(j, grid.m2(), 0.5 / grid.dy2());
    coeff[0] * field[grid.idx(i, nodes[0])]
        + coeff[1] * field[grid.idx(i, nodes[1])]
        + coeff[2] * field[grid.idx(i, nodes[2])]
}

fn check_field(len: usize, grid: &Grid2d, what: &str) -> Result<()> {
    if len != grid.node_count() {
        return Err(FsiError::Dimension(format!(
            "{what} has {len} entries, grid has {}",
            grid.node_count()
        )));
    }
    Ok(())
}

fn check_snapshot(h: &DeformationSnapshot<'_>, grid: &Grid2d) -> Result<()> {
    if h.h.len() != grid.m1() {
        return Err(FsiError::Dimension(format!(
            "deformation snapshot has {} nodes, grid has {}",
            h.h.len(),
            grid.m1()
        )));
    }
    Ok(())
}

/// Transformed divergence `div_h u = ∂_{y₁}u₁ − (y₂/h)∂_{y₁}h·∂_{y₂}u₁ +
/// (1/h)∂_{y₂}u₂` at every node.
pub fn div_h_field(
    u1: &[f64],
    u2: &[f64],
    h: &DeformationSnapshot<'_>,
    grid: &Grid2d,
) -> Result<Vec<f64>> {
    check_field(u1.len(), grid, "u1")?;
    check_field(u2.len(), grid, "u2")?;
    check_snapshot(h, grid)?;
    let mut out = vec![0.0; grid.node_count()];
    for i in 0..grid.m1() {
        let hi = h.h[i];
        let hs = h.h_y1[i];
        for j in 0..grid.m2() {
            let y2 = grid.y2(j);
            out[grid.idx(i, j)] = d_y1(u1, grid, i, j) - (y2 / hi) * hs * d_y2(u1, grid, i, j)
                + d_y2(u2, grid, i, j) / hi;
        }
    }
    Ok(out)
}

/// Symmetric transformed deformation tensor `e_h(u)`; returns the three
/// distinct components `(e₁₁, e₁₂, e₂₂)` nodewise.
pub fn def_tensor_field(
    u1: &[f64],
    u2: &[f64],
    h: &DeformationSnapshot<'_>,
    grid: &Grid2d,
) -> Result<[Vec<f64>; 3]> {
    check_field(u1.len(), grid, "u1")?;
    check_field(u2.len(), grid, "u2")?;
    check_snapshot(h, grid)?;
    let n = grid.node_count();
    let mut e11 = vec![0.0; n];
    let mut e12 = vec![0.0; n];
    let mut e22 = vec![0.0; n];
    for i in 0..grid.m1() {
        let hi = h.h[i];
        let hs = h.h_y1[i];
        for j in 0..grid.m2() {
            let y2 = grid.y2(j);
            let k = grid.idx(i, j);
            let slope = y2 * hs / hi;
            let hat1_u1 = d_y1(u1, grid, i, j) - slope * d_y2(u1, grid, i, j);
            let hat1_u2 = d_y1(u2, grid, i, j) - slope * d_y2(u2, grid, i, j);
            let hat2_u1 = d_y2(u1, grid, i, j) / hi;
            let hat2_u2 = d_y2(u2, grid, i, j) / hi;
            e11[k] = hat1_u1;
            e12[k] = 0.5 * (hat1_u2 + hat2_u1);
            e22[k] = hat2_u2;
        }
    }
    Ok([e11, e12, e22])
}

/// Viscous bilinear form `((u,ψ))_h = (μ/ρ)∫_D h·e_h(u):e_h(ψ) dy` by
/// trapezoidal quadrature. Symmetric; nonnegative on the diagonal.
pub fn viscous_form(
    u: (&[f64], &[f64]),
    psi: (&[f64], &[f64]),
    h: &DeformationSnapshot<'_>,
    mu_over_rho: f64,
    grid: &Grid2d,
) -> Result<f64> {
    let eu = def_tensor_field(u.0, u.1, h, grid)?;
    let ep = def_tensor_field(psi.0, psi.1, h, grid)?;
    let mut acc = 0.0;
    for i in 0..grid.m1() {
        let hw = h.h[i] * grid.w1(i);
        for j in 0..grid.m2() {
            let k = grid.idx(i, j);
            let dot = eu[0][k] * ep[0][k] + 2.0 * eu[1][k] * ep[1][k] + eu[2][k] * ep[2][k];
            acc += hw * grid.w2(j) * dot;
        }
    }
    Ok(mu_over_rho * acc)
}

/// Convective trilinear form
///
/// ```text
/// b_h(u,z,ψ) = ∫_D (h·u₁·∂̂₁z + u₂·∂_{y₂}z)·ψ dy
///            − ½∫₀¹ R₀(L)·u₁z₁ψ₁|_{y₁=L} dy₂ + ½∫₀¹ R₀(0)·u₁z₁ψ₁|_{y₁=0} dy₂
///            − ½∫₀ᴸ u₂z₂ψ₂|_{y₂=1} dy₁,
/// ```
///
/// with the boundary corrections carrying the reference radius exactly as
/// the weak formulation writes them. For transport fields `u` that are
/// discretely `div_h`-free, honor the essential boundary data, and have
/// `h = R₀` at the two ends (always true for clamped wall displacements),
/// the corrections make `b_h` skew-symmetric in `(z, ψ)` up to quadrature
/// error.
pub fn convective_form(
    u: (&[f64], &[f64]),
    z: (&[f64], &[f64]),
    psi: (&[f64], &[f64]),
    h: &DeformationSnapshot<'_>,
    r0_ends: (f64, f64),
    grid: &Grid2d,
) -> Result<f64> {
    for (f, name) in [
        (u.0, "u1"),
        (u.1, "u2"),
        (z.0, "z1"),
        (z.1, "z2"),
        (psi.0, "psi1"),
        (psi.1, "psi2"),
    ] {
        check_field(f.len(), grid, name)?;
    }
    check_snapshot(h, grid)?;

    let mut acc = 0.0;
    for i in 0..grid.m1() {
        let hi = h.h[i];
        let hs = h.h_y1[i];
        let w1 = grid.w1(i);
        for j in 0..grid.m2() {
            let y2 = grid.y2(j);
            let k = grid.idx(i, j);
            let slope = y2 * hs / hi;
            let hat1_z1 = d_y1(z.0, grid, i, j) - slope * d_y2(z.0, grid, i, j);
            let hat1_z2 = d_y1(z.1, grid, i, j) - slope * d_y2(z.1, grid, i, j);
            let conv1 = hi * u.0[k] * hat1_z1 + u.1[k] * d_y2(z.0, grid, i, j);
            let conv2 = hi * u.0[k] * hat1_z2 + u.1[k] * d_y2(z.1, grid, i, j);
            acc += w1 * grid.w2(j) * (conv1 * psi.0[k] + conv2 * psi.1[k]);
        }
    }

    // In/outflow corrections ∓½R₀·u₁z₁ψ₁ and the wall correction −½u₂z₂ψ₂.
    let (r0_in, r0_out) = r0_ends;
    for j in 0..grid.m2() {
        let w2 = grid.w2(j);
        let kin = grid.idx(0, j);
        let kout = grid.idx(grid.n1, j);
        acc += 0.5 * w2 * r0_in * u.0[kin] * z.0[kin] * psi.0[kin];
        acc -= 0.5 * w2 * r0_out * u.0[kout] * z.0[kout] * psi.0[kout];
    }
    for i in 0..grid.m1() {
        let k = grid.idx(i, grid.n2);
        acc -= 0.5 * grid.w1(i) * u.1[k] * z.1[k] * psi.1[k];
    }
    Ok(acc)
}

/// ε-weighted pressure form `ε·a₁(q,φ) = ε∫_D h·∇̂q·∇̂φ dy` (hatted gradient,
/// h-weighted measure): the transformed stiffness of the elliptic pressure
/// equation. Symmetric, positive semidefinite, kernel = constants.
pub fn pressure_form(
    q: &[f64],
    phi: &[f64],
    eps: f64,
    h: &DeformationSnapshot<'_>,
    grid: &Grid2d,
) -> Result<f64> {
    check_field(q.len(), grid, "q")?;
    check_field(phi.len(), grid, "phi")?;
    check_snapshot(h, grid)?;
    let mut acc = 0.0;
    for i in 0..grid.m1() {
        let hi = h.h[i];
        let hs = h.h_y1[i];
        let w1 = grid.w1(i);
        for j in 0..grid.m2() {
            let y2 = grid.y2(j);
            let slope = y2 * hs / hi;
            let hat1_q = d_y1(q, grid, i, j) - slope * d_y2(q, grid, i, j);
            let hat2_q = d_y2(q, grid, i, j) / hi;
            let hat1_p = d_y1(phi, grid, i, j) - slope * d_y2(phi, grid, i, j);
            let hat2_p = d_y2(phi, grid, i, j) / hi;
            acc += w1 * grid.w2(j) * hi * (hat1_q * hat1_p + hat2_q * hat2_p);
        }
    }
    Ok(eps * acc)
}

/// L²(D) norm of a nodal field by trapezoidal quadrature.
pub fn l2_norm(field: &[f64], grid: &Grid2d) -> f64 {
    let mut acc = 0.0;
    for i in 0..grid.m1() {
        let w1 = grid.w1(i);
        for j in 0..grid.m2() {
            let v = field[grid.idx(i, j)];
            acc += w1 * grid.w2(j) * v * v;
        }
    }
    acc.sqrt()
}

/// Quadrature functional behind the zero-mean pressure constraint:
/// `∫_D q dy` by trapezoidal quadrature on the reference rectangle.
pub fn weighted_mean(q: &[f64], grid: &Grid2d) -> f64 {
    let mut acc = 0.0;
    for i in 0..grid.m1() {
        let w1 = grid.w1(i);
        for j in 0..grid.m2() {
            acc += w1 * grid.w2(j) * q[grid.idx(i, j)];
        }
    }
    acc
}
