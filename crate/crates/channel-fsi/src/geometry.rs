//! Wall deformations `h = R₀ + δ`, admissibility checks, and the pointwise
//! transformation algebra between two deformed channels.
//!
//! Every moving channel `Ω(h)` is pulled back to the reference rectangle
//! `D = (0,L)×(0,1)` by `x₂ = y₂·h(y₁,t)`. Comparing two channels `Ω(h¹)`,
//! `Ω(h²)` on `D` requires the change-of-variables Jacobian
//!
//! ```text
//! J = [ 1                      0     ]          h¹
//!     [ y₂·h²·∂_{y₁}(h¹/h²)  h¹/h² ],  det J = ――,
//!                                               h²
//! ```
//!
//! the Piola matrix `R = det J · J⁻¹` (which maps div-free fields on `Ω(h¹)`
//! to div-free fields on `Ω(h²)` in the transformed sense), and a family of
//! "error matrices" `E₁, E₂, E₃, E_R` that quantify how the transformed time
//! derivative, gradient, and deformation tensor change between the two
//! geometries. All of these are pointwise algebraic expressions in the jets
//! `(h, ∂_{y₁}h, ∂²_{y₁}h, ∂_t h, ∂_t∂_{y₁}h)` of the two deformations; the
//! formulas below are verified numerically by the `analysis` module.
//!
//! The scalar `wE = h²·∂_{y₁}(h¹/h²)` is named `w_e` here; the letter `E`
//! alone is reserved for the structural stiffness factor in [`crate::structure`].

use crate::linalg::fd_weights;
use crate::{FsiError, Result};
use nalgebra::{Matrix2, Vector2};

/// Uniform 1D node grid on `[0, L]` (the wall coordinate `y₁`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid1d {
    /// Channel length `L`.
    pub l: f64,
    /// Cell count; there are `n + 1` nodes.
    pub n: usize,
}

impl Grid1d {
    pub fn new(l: f64, n: usize) -> Self {
        assert!(l > 0.0 && n >= 4, "grid needs positive length and at least 4 cells");
        Grid1d { l, n }
    }

    /// Number of nodes.
    pub fn m(&self) -> usize {
        self.n + 1
    }

    /// Node spacing Δy₁.
    pub fn dy(&self) -> f64 {
        self.l / self.n as f64
    }

    /// Coordinate of node `i`.
    pub fn y(&self, i: usize) -> f64 {
        self.l * i as f64 / self.n as f64
    }

    /// Trapezoidal quadrature weight of node `i`.
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.n {
            0.5 * self.dy()
        } else {
            self.dy()
        }
    }
}

/// Reference wall shape `R₀(y₁)` with analytic derivatives.
///
/// Only smooth closed-form shapes are supported; the structure stepper's
/// `−aR₀''` forcing and the end slopes of `h` use the exact derivatives
/// rather than differences of samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum R0Spec {
    /// Straight wall `R₀ ≡ value`.
    Constant { value: f64 },
    /// Smooth bulge `R₀(y₁) = base + amp·sin²(πy₁/L)`; clamps to `base` with
    /// zero slope at both ends.
    SineBump { base: f64, amp: f64 },
}

impl R0Spec {
    pub fn value(&self, y1: f64, l: f64) -> f64 {
        match *self {
            R0Spec::Constant { value } => value,
            R0Spec::SineBump { base, amp } => {
                let s = (std::f64::consts::PI * y1 / l).sin();
                base + amp * s * s
            }
        }
    }

    pub fn slope(&self, y1: f64, l: f64) -> f64 {
        match *self {
            R0Spec::Constant { .. } => 0.0,
            R0Spec::SineBump { amp, .. } => {
                let w = std::f64::consts::PI / l;
                amp * w * (2.0 * w * y1).sin()
            }
        }
    }

    pub fn curvature(&self, y1: f64, l: f64) -> f64 {
        match *self {
            R0Spec::Constant { .. } => 0.0,
            R0Spec::SineBump { amp, .. } => {
                let w = std::f64::consts::PI / l;
                2.0 * amp * w * w * (2.0 * w * y1).cos()
            }
        }
    }

    /// Range of `R₀` over `[0, L]` (used for the admissibility default α).
    pub fn range(&self, l: f64, samples: usize) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..=samples {
            let v = self.value(l * i as f64 / samples as f64, l);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Pointwise jet of a deformation: `h` and the four derivatives the
/// transformation algebra needs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DeformationJet {
    pub h: f64,
    pub h_y1: f64,
    pub h_y1y1: f64,
    pub h_t: f64,
    pub h_ty1: f64,
}

/// Pointwise deformation value and slope (enough for the transformation
/// matrices, which carry no time derivatives).
#[derive(Clone, Copy, Debug)]
pub struct DeformationPoint {
    pub h: f64,
    pub h_y1: f64,
}

/// Wall shape `h = R₀ + δ` and its derivatives sampled on the 1D grid at
/// every time level. Immutable after construction; shared freely.
#[derive(Clone, Debug)]
pub struct DeformationHistory {
    pub grid: Grid1d,
    /// Time levels, uniformly spaced, starting at the initial time.
    pub times: Vec<f64>,
    /// `h[n][i]` = deformation at time level `n`, node `i`. Strictly positive.
    pub h: Vec<Vec<f64>>,
    pub h_y1: Vec<Vec<f64>>,
    pub h_y1y1: Vec<Vec<f64>>,
    pub h_t: Vec<Vec<f64>>,
    pub h_ty1: Vec<Vec<f64>>,
}

/// Borrowed view of one time level of a [`DeformationHistory`].
#[derive(Clone, Copy)]
pub struct DeformationSnapshot<'a> {
    pub grid: Grid1d,
    pub h: &'a [f64],
    pub h_y1: &'a [f64],
    pub h_y1y1: &'a [f64],
    pub h_t: &'a [f64],
    pub h_ty1: &'a [f64],
}

impl DeformationHistory {
    pub fn snapshot(&self, level: usize) -> DeformationSnapshot<'_> {
        DeformationSnapshot {
            grid: self.grid,
            h: &self.h[level],
            h_y1: &self.h_y1[level],
            h_y1y1: &self.h_y1y1[level],
            h_t: &self.h_t[level],
            h_ty1: &self.h_ty1[level],
        }
    }

    pub fn jet(&self, level: usize, node: usize) -> DeformationJet {
        DeformationJet {
            h: self.h[level][node],
            h_y1: self.h_y1[level][node],
            h_y1y1: self.h_y1y1[level][node],
            h_t: self.h_t[level][node],
            h_ty1: self.h_ty1[level][node],
        }
    }

    pub fn levels(&self) -> usize {
        self.times.len()
    }

    /// Basic structural validation: matching dimensions and positive `h`.
    pub fn validate(&self) -> Result<()> {
        let m = self.grid.m();
        let levels = self.times.len();
        for arr in [&self.h, &self.h_y1, &self.h_y1y1, &self.h_t, &self.h_ty1] {
            if arr.len() != levels || arr.iter().any(|row| row.len() != m) {
                return Err(FsiError::Dimension(format!(
                    "deformation arrays must be {levels} levels × {m} nodes"
                )));
            }
        }
        for (n, row) in self.h.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                if !(v > 0.0) {
                    return Err(FsiError::Domain(format!(
                        "h must stay positive; h[{n}][{i}] = {v}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Apply a 1D derivative stencil table to every row of `field`.
///
/// `stencils[i]` lists `(node, weight)` pairs producing the derivative at
/// node `i`.
fn apply_stencils(field: &[f64], stencils: &[Vec<(usize, f64)>]) -> Vec<f64> {
    stencils
        .iter()
        .map(|st| st.iter().map(|&(j, w)| w * field[j]).sum())
        .collect()
}

/// Build per-node stencil tables for the `m`-th y₁-derivative at 4th order:
/// centered 5-point stencils inside, offset/one-sided stencils near the ends
/// (6 points for the second derivative, which needs the extra node to keep
/// 4th order one-sided).
fn derivative_stencils(grid: &Grid1d, m: usize) -> Vec<Vec<(usize, f64)>> {
    let nodes = grid.m();
    let dy = grid.dy();
    // One-sided window size: 5 points give a 4th-order first derivative, the
    // second derivative needs 6.
    let pts = if m == 1 { 5 } else { nodes.min(6) };
    let half = 2; // reach of the centered 5-point interior stencil
    (0..nodes)
        .map(|i| {
            let (lo, count) = if i >= half && i + half < nodes {
                (i - half, 5)
            } else {
                // Window pushed inward from the boundary, keeping node i inside.
                (i.saturating_sub(pts - 1).min(nodes - pts), pts)
            };
            let xs: Vec<f64> = (0..count).map(|k| ((lo + k) as f64 - i as f64) * dy).collect();
            fd_weights(0.0, &xs, m)
                .into_iter()
                .enumerate()
                .map(|(k, w)| (lo + k, w))
                .collect()
        })
        .collect()
}

/// Second-order time-derivative stencils over the uniform levels: centered
/// interior, one-sided at the first/last level (first-order fallback when
/// only two levels exist).
fn time_stencils(levels: usize, dt: f64) -> Vec<Vec<(usize, f64)>> {
    assert!(levels >= 1);
    if levels == 1 {
        return vec![vec![(0, 0.0)]];
    }
    if levels == 2 {
        return vec![
            vec![(0, -1.0 / dt), (1, 1.0 / dt)],
            vec![(0, -1.0 / dt), (1, 1.0 / dt)],
        ];
    }
    (0..levels)
        .map(|n| {
            if n == 0 {
                vec![(0, -1.5 / dt), (1, 2.0 / dt), (2, -0.5 / dt)]
            } else if n == levels - 1 {
                vec![(n - 2, 0.5 / dt), (n - 1, -2.0 / dt), (n, 1.5 / dt)]
            } else {
                vec![(n - 1, -0.5 / dt), (n + 1, 0.5 / dt)]
            }
        })
        .collect()
}

/// Assemble `h = R₀ + δ` with all derivative arrays from sampled wall
/// displacements `delta[level][node]`.
///
/// `delta` must be clamped: zero value at both end nodes of every level (the
/// wall is fixed there, so `∂_{y₁}δ = ∂_tδ = 0` at the ends as well). Space
/// derivatives of `δ` use 4th-order stencils with the exact zero end slope
/// substituted at the end nodes; time derivatives use 2nd-order differences
/// over the levels. The `R₀` contribution is analytic throughout.
pub fn eval_deformation(
    delta: &[Vec<f64>],
    r0: &R0Spec,
    grid: Grid1d,
    times: &[f64],
) -> Result<DeformationHistory> {
    let m = grid.m();
    if delta.len() != times.len() {
        return Err(FsiError::Dimension(format!(
            "delta has {} levels but times has {}",
            delta.len(),
            times.len()
        )));
    }
    if times.is_empty() {
        return Err(FsiError::Dimension("need at least one time level".into()));
    }
    for (n, row) in delta.iter().enumerate() {
        if row.len() != m {
            return Err(FsiError::Dimension(format!(
                "delta level {n} has {} nodes, grid has {m}",
                row.len()
            )));
        }
        if row[0] != 0.0 || row[m - 1] != 0.0 {
            return Err(FsiError::Domain(format!(
                "delta must be clamped to zero at the ends; level {n} has ({}, {})",
                row[0],
                row[m - 1]
            )));
        }
    }
    let dt = if times.len() >= 2 { times[1] - times[0] } else { 1.0 };
    for w in times.windows(2) {
        if !((w[1] - w[0]) > 0.0) || ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1.0) {
            return Err(FsiError::Dimension("time levels must be uniformly increasing".into()));
        }
    }

    let st1 = derivative_stencils(&grid, 1);
    let st2 = derivative_stencils(&grid, 2);

    let levels = times.len();
    let mut h = Vec::with_capacity(levels);
    let mut h_y1 = Vec::with_capacity(levels);
    let mut h_y1y1 = Vec::with_capacity(levels);
    for row in delta {
        let mut d1 = apply_stencils(row, &st1);
        let d2 = apply_stencils(row, &st2);
        // The clamped boundary makes the end slope of δ exactly zero; encode
        // that instead of the one-sided estimate.
        d1[0] = 0.0;
        d1[m - 1] = 0.0;
        let mut hv = Vec::with_capacity(m);
        let mut hs = Vec::with_capacity(m);
        let mut hc = Vec::with_capacity(m);
        for i in 0..m {
            let y1 = grid.y(i);
            hv.push(r0.value(y1, grid.l) + row[i]);
            hs.push(r0.slope(y1, grid.l) + d1[i]);
            hc.push(r0.curvature(y1, grid.l) + d2[i]);
        }
        h.push(hv);
        h_y1.push(hs);
        h_y1y1.push(hc);
    }

    let ts = time_stencils(levels, dt);
    let time_diff = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..levels)
            .map(|n| {
                (0..m)
                    .map(|i| ts[n].iter().map(|&(k, w)| w * rows[k][i]).sum())
                    .collect()
            })
            .collect()
    };
    // R₀ is time-independent, so differencing h (or δ) in time is identical.
    let h_t = time_diff(&h);
    let h_ty1 = time_diff(&h_y1);

    let history = DeformationHistory { grid, times: times.to_vec(), h, h_y1, h_y1y1, h_t, h_ty1 };
    history.validate()?;
    Ok(history)
}

/// Assemble a [`DeformationHistory`] from an analytic displacement jet
/// (tests and manufactured solutions): `jet(y1, t)` returns the exact
/// derivatives of δ, to which the analytic `R₀` contribution is added.
pub fn eval_deformation_analytic(
    jet: impl Fn(f64, f64) -> DeformationJet,
    r0: &R0Spec,
    grid: Grid1d,
    times: &[f64],
) -> Result<DeformationHistory> {
    let m = grid.m();
    if times.is_empty() {
        return Err(FsiError::Dimension("need at least one time level".into()));
    }
    let mut h = Vec::new();
    let mut h_y1 = Vec::new();
    let mut h_y1y1 = Vec::new();
    let mut h_t = Vec::new();
    let mut h_ty1 = Vec::new();
    for &t in times {
        let mut row = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..m {
            let y1 = grid.y(i);
            let d = jet(y1, t);
            row.0.push(r0.value(y1, grid.l) + d.h);
            row.1.push(r0.slope(y1, grid.l) + d.h_y1);
            row.2.push(r0.curvature(y1, grid.l) + d.h_y1y1);
            row.3.push(d.h_t);
            row.4.push(d.h_ty1);
        }
        h.push(row.0);
        h_y1.push(row.1);
        h_y1y1.push(row.2);
        h_t.push(row.3);
        h_ty1.push(row.4);
    }
    let history = DeformationHistory { grid, times: times.to_vec(), h, h_y1, h_y1y1, h_t, h_ty1 };
    history.validate()?;
    Ok(history)
}

/// Admissible-set parameters: `α ≤ h ≤ 1/α` and the slope/speed bound `K`.
#[derive(Clone, Copy, Debug)]
pub struct AdmissibilityParams {
    pub alpha: f64,
    pub k_bound: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub t_max: f64,
}

impl AdmissibilityParams {
    /// Validates `0 < α < min{R_min, 1/(R_min+R_max)}` — the condition that
    /// keeps the ball of admissible wall displacements away from wall–bottom
    /// contact — plus basic positivity.
    pub fn new(alpha: f64, k_bound: f64, r_min: f64, r_max: f64, t_max: f64) -> Result<Self> {
        if !(r_min > 0.0 && r_max >= r_min) {
            return Err(FsiError::Domain(format!(
                "reference radius bounds must satisfy 0 < R_min ≤ R_max (got {r_min}, {r_max})"
            )));
        }
        let cap = r_min.min(1.0 / (r_min + r_max));
        if !(alpha > 0.0 && alpha < 1.0 && alpha < cap) {
            return Err(FsiError::Domain(format!(
                "alpha must lie in (0,1) and below min{{R_min, 1/(R_min+R_max)}} = {cap:.6}; got {alpha}"
            )));
        }
        if !(k_bound > 0.0 && t_max > 0.0) {
            return Err(FsiError::Domain("K and T_max must be positive".into()));
        }
        Ok(AdmissibilityParams { alpha, k_bound, r_min, r_max, t_max })
    }

    /// Largest admissible α for the given radius range, with a 10% safety
    /// margin.
    pub fn default_alpha(r_min: f64, r_max: f64) -> f64 {
        0.9 * r_min.min(1.0 / (r_min + r_max))
    }
}

/// Outcome of [`check_admissible`]: extrema of the deformation with their
/// locations, and the attained slope/speed bound.
#[derive(Clone, Debug)]
pub struct AdmissibilityReport {
    pub pass: bool,
    pub h_min: f64,
    /// `(time level, node)` where the minimum is attained.
    pub h_min_at: (usize, usize),
    pub h_max: f64,
    pub h_max_at: (usize, usize),
    /// Max over nodes of `max_t |∂_{y₁}h| + ∫₀ᵀ|∂_t h|² dt`.
    pub slope_speed_max: f64,
    pub slope_speed_node: usize,
    /// Human-readable description of every violated bound with its location.
    pub violations: Vec<String>,
}

/// Check `α ≤ h ≤ 1/α` at every sample and the per-node bound
/// `max_t |∂_{y₁}h| + ∫₀ᵀ|∂_t h|² dt ≤ K` (trapezoidal time integral).
/// Violations are data, not errors.
pub fn check_admissible(h: &DeformationHistory, params: &AdmissibilityParams) -> AdmissibilityReport {
    let m = h.grid.m();
    let levels = h.times.len();
    let mut h_min = f64::INFINITY;
    let mut h_max = f64::NEG_INFINITY;
    let mut h_min_at = (0, 0);
    let mut h_max_at = (0, 0);
    let mut violations = Vec::new();

    for n in 0..levels {
        for i in 0..m {
            let v = h.h[n][i];
            if v < h_min {
                h_min = v;
                h_min_at = (n, i);
            }
            if v > h_max {
                h_max = v;
                h_max_at = (n, i);
            }
        }
    }
    if h_min < params.alpha {
        violations.push(format!(
            "h = {h_min:.6} < α = {} at time level {}, node {}",
            params.alpha, h_min_at.0, h_min_at.1
        ));
    }
    if h_max > 1.0 / params.alpha {
        violations.push(format!(
            "h = {h_max:.6} > 1/α = {:.6} at time level {}, node {}",
            1.0 / params.alpha,
            h_max_at.0,
            h_max_at.1
        ));
    }

    // Per-node slope/speed functional; trapezoidal rule over the levels.
    let mut slope_speed_max = f64::NEG_INFINITY;
    let mut slope_speed_node = 0;
    let dt = if levels >= 2 { h.times[1] - h.times[0] } else { 0.0 };
    for i in 0..m {
        let slope = (0..levels).map(|n| h.h_y1[n][i].abs()).fold(0.0f64, f64::max);
        let mut speed_sq = 0.0;
        for n in 0..levels {
            let w = if n == 0 || n == levels - 1 { 0.5 * dt } else { dt };
            speed_sq += w * h.h_t[n][i] * h.h_t[n][i];
        }
        let bound = slope + speed_sq;
        if bound > slope_speed_max {
            slope_speed_max = bound;
            slope_speed_node = i;
        }
    }
    if slope_speed_max > params.k_bound {
        violations.push(format!(
            "slope/speed bound {slope_speed_max:.6} > K = {} at node {slope_speed_node}",
            params.k_bound
        ));
    }

    AdmissibilityReport {
        pass: violations.is_empty(),
        h_min,
        h_min_at,
        h_max,
        h_max_at,
        slope_speed_max,
        slope_speed_node,
        violations,
    }
}

/// The transformation matrices between `Ω(h¹)` and `Ω(h²)` at one reference
/// point.
#[derive(Clone, Copy, Debug)]
pub struct PointTransformSet {
    pub j: Matrix2<f64>,
    pub jinv: Matrix2<f64>,
    /// Piola matrix `R = det J · J⁻¹`.
    pub r: Matrix2<f64>,
    pub rinv: Matrix2<f64>,
    /// Velocity-gradient factor of the first deformation:
    /// `F_h = ½[[1, 0], [−(y₂/h¹)∂_{y₁}h¹, 1/h¹]]`.
    pub f_h: Matrix2<f64>,
    pub det_j: f64,
}

/// Assemble the Jacobian/Piola matrices for the pair `(h¹, h²)` at height
/// `y₂`. With `w_e = h²∂_{y₁}(h¹/h²) = (∂_{y₁}h¹·h² − h¹·∂_{y₁}h²)/h²`:
///
/// ```text
/// J  = [[1, 0], [y₂·w_e, h¹/h²]],        det J = h¹/h²,
/// R  = [[h¹/h², 0], [−y₂·w_e, 1]],       R = det J · J⁻¹ = cof(J)ᵀ.
/// ```
pub fn point_transforms(h1: DeformationPoint, h2: DeformationPoint, y2: f64) -> Result<PointTransformSet> {
    if !(h1.h > 0.0 && h2.h > 0.0) {
        return Err(FsiError::Domain(format!(
            "deformations must be positive (got h¹ = {}, h² = {})",
            h1.h, h2.h
        )));
    }
    let w_e = (h1.h_y1 * h2.h - h1.h * h2.h_y1) / h2.h;
    let det_j = h1.h / h2.h;
    let j = Matrix2::new(1.0, 0.0, y2 * w_e, det_j);
    let jinv = Matrix2::new(1.0, 0.0, -y2 * w_e / det_j, 1.0 / det_j);
    let r = Matrix2::new(det_j, 0.0, -y2 * w_e, 1.0);
    let rinv = Matrix2::new(1.0 / det_j, 0.0, y2 * w_e / det_j, 1.0);
    let f_h = 0.5 * Matrix2::new(1.0, 0.0, -(y2 / h1.h) * h1.h_y1, 1.0 / h1.h);
    Ok(PointTransformSet { j, jinv, r, rinv, f_h, det_j })
}

/// Pointwise velocity sample with its reference gradient,
/// `grad[(i,j)] = ∂u_i/∂y_j`.
#[derive(Clone, Copy, Debug)]
pub struct VelocityPoint {
    pub u: Vector2<f64>,
    pub grad: Matrix2<f64>,
}

/// The error matrices comparing the transformed calculus of two deformations.
#[derive(Clone, Copy, Debug)]
pub struct ErrorMatrixSet {
    /// Defect of the distributive time derivative under the Piola map:
    /// `∂̄ₜ^{h²}(h²Ru¹) = J⁻¹∂̄ₜ^{h¹}(h¹u¹) + E₁`.
    pub e1: Vector2<f64>,
    /// Gradient defect: `∇(Ru) = ∇u + E₂(u)`.
    pub e2: Matrix2<f64>,
    /// Velocity-gradient factor difference: `E₃ = F_{h²} − F_{h¹}`.
    pub e3: Matrix2<f64>,
    /// Piola-matrix defect: `R = I + E_R`.
    pub e_r: Matrix2<f64>,
    /// `w_e = h²∂_{y₁}(h¹/h²)`, evaluated in difference form.
    pub w_e: f64,
}

/// Assemble all error matrices at one point. Every entry is written as a
/// polynomial in the differences `h̄ = h¹ − h²` (and their derivatives), so
/// that `h¹ ≡ h²` yields exact zeros and nearby deformations do not suffer
/// catastrophic cancellation:
///
/// ```text
/// w_e   = (h¹·∂h̄ − ∂h¹·h̄)/h²
/// E₁    = [ (h¹ₜ/h¹ − h²ₜ/h²)·h¹(u₁ + y₂∂₂u₁),
///           (h¹ₜ/h¹ − h²ₜ/h²)·y₂h²(∂₂u₂ − y₂w_e∂₂u₁) + y₂u₁(2w_e·h²ₜ − Nₜ) ]
/// E₂    = [[ w_e·u₁/h² + (h̄/h²)∂₁u₁,  (h̄/h²)∂₂u₁ ],
///          [ −y₂·∂₁(w_e·u₁),          −w_e(u₁ + y₂∂₂u₁) ]]
/// E₃    = ½[[0, 0], [y₂w_e/h¹, h̄/(h¹h²)]]
/// E_R   = [[h̄/h², 0], [−y₂w_e, 0]]
/// ```
///
/// where `N = ∂h¹·h² − h¹·∂h²` (so `w_e = N/h²`) and `∂₁(w_e·u₁)` expands via
/// `∂_{y₁}w_e = (h²∂²h̄ − h̄∂²h²)/h² − w_e·∂h²/h²`.
pub fn error_matrices(
    h1: DeformationJet,
    h2: DeformationJet,
    vel: VelocityPoint,
    y2: f64,
) -> Result<ErrorMatrixSet> {
    if !(h1.h > 0.0 && h2.h > 0.0) {
        return Err(FsiError::Domain(format!(
            "deformations must be positive (got h¹ = {}, h² = {})",
            h1.h, h2.h
        )));
    }
    let hbar = h1.h - h2.h;
    let hbar_y1 = h1.h_y1 - h2.h_y1;
    let hbar_y1y1 = h1.h_y1y1 - h2.h_y1y1;
    let hbar_t = h1.h_t - h2.h_t;
    let hbar_ty1 = h1.h_ty1 - h2.h_ty1;

    let w_e = (h1.h * hbar_y1 - h1.h_y1 * hbar) / h2.h;
    let w_e_y1 = (h2.h * hbar_y1y1 - hbar * h2.h_y1y1) / h2.h - w_e * h2.h_y1 / h2.h;
    // N = w_e·h²; its time derivative in difference form.
    let n_t = h2.h_t * hbar_y1 + h2.h * hbar_ty1 - hbar_t * h2.h_y1 - hbar * h2.h_ty1;

    let u1 = vel.u[0];
    let d1u1 = vel.grad[(0, 0)];
    let d2u1 = vel.grad[(0, 1)];
    let d2u2 = vel.grad[(1, 1)];

    // h¹ₜ/h¹ − h²ₜ/h² = (h¹ₜh² − h¹h²ₜ)/(h¹h²), numerator in difference form.
    let rate_diff = (h2.h * hbar_t - hbar * h2.h_t) / (h1.h * h2.h);

    let e1 = Vector2::new(
        rate_diff * h1.h * (u1 + y2 * d2u1),
        rate_diff * y2 * h2.h * (d2u2 - y2 * w_e * d2u1) + y2 * u1 * (2.0 * w_e * h2.h_t - n_t),
    );
    let e2 = Matrix2::new(
        w_e * u1 / h2.h + (hbar / h2.h) * d1u1,
        (hbar / h2.h) * d2u1,
        -y2 * (w_e_y1 * u1 + w_e * d1u1),
        -w_e * (u1 + y2 * d2u1),
    );
    let e3 = 0.5 * Matrix2::new(0.0, 0.0, y2 * w_e / h1.h, hbar / (h1.h * h2.h));
    let e_r = Matrix2::new(hbar / h2.h, 0.0, -y2 * w_e, 0.0);

    Ok(ErrorMatrixSet { e1, e2, e3, e_r, w_e })
}

/// Apply the Piola matrix: `u ↦ R·u`. Because the first column of `R` only
/// scales `u₁`, wall traces with `u₁ = 0` keep their second component
/// unchanged — the property the coupled problem's test functions rely on.
pub fn piola_apply(u: Vector2<f64>, transforms: &PointTransformSet) -> Vector2<f64> {
    transforms.r * u
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid() -> Grid1d {
        Grid1d::new(1.0, 32)
    }

    #[test]
    fn identity_deformation_has_zero_derivatives() {
        let g = grid();
        let times: Vec<f64> = (0..6).map(|n| 0.01 * n as f64).collect();
        let delta = vec![vec![0.0; g.m()]; times.len()];
        let h = eval_deformation(&delta, &R0Spec::Constant { value: 1.0 }, g, &times).unwrap();
        for n in 0..times.len() {
            for i in 0..g.m() {
                assert_eq!(h.h[n][i], 1.0);
                assert_eq!(h.h_y1[n][i], 0.0);
                assert_eq!(h.h_y1y1[n][i], 0.0);
                assert_eq!(h.h_t[n][i], 0.0);
                assert_eq!(h.h_ty1[n][i], 0.0);
            }
        }
    }

    #[test]
    fn reference_radius_derivatives_are_analytic() {
        // R₀ = 1 + 0.1·sin²(πy₁/L) enters with closed-form derivatives, so
        // h_y1 matches them to rounding even on a coarse grid.
        let g = grid();
        let times = [0.0, 0.01, 0.02];
        let delta = vec![vec![0.0; g.m()]; 3];
        let r0 = R0Spec::SineBump { base: 1.0, amp: 0.1 };
        let h = eval_deformation(&delta, &r0, g, &times).unwrap();
        for i in 0..g.m() {
            let y1 = g.y(i);
            assert_relative_eq!(h.h_y1[0][i], r0.slope(y1, g.l), epsilon = 1e-13);
            assert_relative_eq!(h.h_y1y1[0][i], r0.curvature(y1, g.l), epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_in_time_delta_has_exact_time_derivative() {
        let g = grid();
        let s = 0.05;
        let times: Vec<f64> = (0..8).map(|n| 0.01 * n as f64).collect();
        let shape = |y1: f64| 1.0 - (2.0 * std::f64::consts::PI * y1 / g.l).cos();
        let delta: Vec<Vec<f64>> = times
            .iter()
            .map(|&t| (0..g.m()).map(|i| t * shape(g.y(i)) * s).collect())
            .collect();
        let h = eval_deformation(&delta, &R0Spec::Constant { value: 1.0 }, g, &times).unwrap();
        // Both centered and one-sided 2nd-order differences are exact for
        // data linear in t.
        for n in 0..times.len() {
            for i in 0..g.m() {
                assert_relative_eq!(h.h_t[n][i], shape(g.y(i)) * s, max_relative = 1e-12, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn smooth_delta_derivatives_match_analytic_jets() {
        // δ = A·t²·sin²(πy₁/L): clamped, smooth; 4th-order space stencils and
        // 2nd-order time stencils. The one-sided six-point second-derivative
        // closure at the ends dominates the error budget (≈ 1.4e-6 here).
        let g = Grid1d::new(1.0, 64);
        let a = 0.1;
        let w = std::f64::consts::PI / g.l;
        let times: Vec<f64> = (0..11).map(|n| 0.01 * n as f64).collect();
        let delta: Vec<Vec<f64>> = times
            .iter()
            .map(|&t| {
                let mut row: Vec<f64> =
                    (0..g.m()).map(|i| a * t * t * (w * g.y(i)).sin().powi(2)).collect();
                // sin(π) is only zero up to rounding; the ends are clamped.
                row[0] = 0.0;
                let m = row.len();
                row[m - 1] = 0.0;
                row
            })
            .collect();
        let h = eval_deformation(&delta, &R0Spec::Constant { value: 1.0 }, g, &times).unwrap();
        let mut err = 0.0f64;
        for (n, &t) in times.iter().enumerate() {
            for i in 0..g.m() {
                let y1 = g.y(i);
                let dy1 = a * t * t * w * (2.0 * w * y1).sin();
                let dy1y1 = 2.0 * a * t * t * w * w * (2.0 * w * y1).cos();
                let dt = 2.0 * a * t * (w * y1).sin().powi(2);
                let dty1 = 2.0 * a * t * w * (2.0 * w * y1).sin();
                err = err
                    .max((h.h_y1[n][i] - dy1).abs())
                    .max((h.h_y1y1[n][i] - dy1y1).abs())
                    .max((h.h_t[n][i] - dt).abs())
                    .max((h.h_ty1[n][i] - dty1).abs());
            }
        }
        assert!(err < 5e-6, "derivative arrays deviate from analytic jets by {err:e}");
    }

    #[test]
    fn unclamped_delta_is_rejected() {
        let g = grid();
        let mut delta = vec![vec![0.0; g.m()]];
        delta[0][0] = 0.1;
        let err = eval_deformation(&delta, &R0Spec::Constant { value: 1.0 }, g, &[0.0]);
        assert!(matches!(err, Err(FsiError::Domain(_))), "unclamped delta must be a domain error");
    }

    #[test]
    fn admissibility_pass_and_extrema() {
        let g = grid();
        let times = [0.0, 0.01];
        let delta = vec![vec![0.0; g.m()]; 2];
        let h = eval_deformation(&delta, &R0Spec::Constant { value: 1.0 }, g, &times).unwrap();
        let params = AdmissibilityParams { alpha: 0.45, k_bound: 10.0, r_min: 1.0, r_max: 1.0, t_max: 1.0 };
        let report = check_admissible(&h, &params);
        assert!(report.pass, "straight unit channel must be admissible: {:?}", report.violations);
        assert_eq!(report.h_min, 1.0);
        assert_eq!(report.h_max, 1.0);
    }

    #[test]
    fn admissibility_locates_violations() {
        let g = grid();
        // Dip the wall to 0.4 < α = 0.5 mid-channel at the second level.
        let shape = |y1: f64| (std::f64::consts::PI * y1 / g.l).sin().powi(2);
        let times = [0.0, 0.01];
        let mut dipped: Vec<f64> = (0..g.m()).map(|i| -0.6 * shape(g.y(i))).collect();
        dipped[0] = 0.0;
        dipped[g.m() - 1] = 0.0;
        let delta: Vec<Vec<f64>> = vec![vec![0.0; g.m()], dipped];
        let h = eval_deformation(&delta, &R0Spec::Constant { value: 1.0 }, g, &times).unwrap();
        let params = AdmissibilityParams { alpha: 0.5, k_bound: 100.0, r_min: 1.0, r_max: 1.0, t_max: 1.0 };
        let report = check_admissible(&h, &params);
        assert!(!report.pass);
        assert_eq!(report.h_min_at.0, 1, "violation must be located at the dipped time level");
        assert!(report.violations[0].contains("node"), "violation must name the node: {}", report.violations[0]);
    }

    #[test]
    fn admissibility_bounds_are_non_strict() {
        // |h_y1| ≡ K with h_t ≡ 0 sits exactly on the constraint and passes.
        let g = grid();
        let h = DeformationHistory {
            grid: g,
            times: vec![0.0],
            h: vec![vec![1.0; g.m()]],
            h_y1: vec![vec![2.0; g.m()]],
            h_y1y1: vec![vec![0.0; g.m()]],
            h_t: vec![vec![0.0; g.m()]],
            h_ty1: vec![vec![0.0; g.m()]],
        };
        let params = AdmissibilityParams { alpha: 0.5, k_bound: 2.0, r_min: 1.0, r_max: 1.0, t_max: 1.0 };
        assert!(check_admissible(&h, &params).pass);
    }

    #[test]
    fn alpha_constraint_is_enforced() {
        // R_min = R_max = 1 caps α below 1/2.
        assert!(AdmissibilityParams::new(0.45, 50.0, 1.0, 1.0, 1.0).is_ok());
        assert!(AdmissibilityParams::new(0.55, 50.0, 1.0, 1.0, 1.0).is_err());
        let a = AdmissibilityParams::default_alpha(1.0, 1.0);
        assert_relative_eq!(a, 0.45, epsilon = 1e-15);
    }

    #[test]
    fn point_transforms_constant_case() {
        // h¹ = 2, h² = 1, zero slopes: J = diag(1,2), R = diag(2,1).
        let t = point_transforms(
            DeformationPoint { h: 2.0, h_y1: 0.0 },
            DeformationPoint { h: 1.0, h_y1: 0.0 },
            0.5,
        )
        .unwrap();
        assert_eq!(t.det_j, 2.0);
        assert_eq!(t.j, Matrix2::new(1.0, 0.0, 0.0, 2.0));
        assert_eq!(t.r, Matrix2::new(2.0, 0.0, 0.0, 1.0));
        assert_relative_eq!((t.j * t.jinv - Matrix2::identity()).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn point_transforms_sloped_case() {
        // h¹ = 1 with slope 1, h² = 1 with slope 0, y₂ = 1:
        // w_e = 1, J = [[1,0],[1,1]], R = [[1,0],[−1,1]] = cof(J)ᵀ.
        let t = point_transforms(
            DeformationPoint { h: 1.0, h_y1: 1.0 },
            DeformationPoint { h: 1.0, h_y1: 0.0 },
            1.0,
        )
        .unwrap();
        assert_eq!(t.j, Matrix2::new(1.0, 0.0, 1.0, 1.0));
        assert_eq!(t.r, Matrix2::new(1.0, 0.0, -1.0, 1.0));
        // R = det J · J⁻¹ cross-checked numerically.
        let r_ref = t.det_j * t.j.try_inverse().unwrap();
        assert_relative_eq!((t.r - r_ref).norm(), 0.0, epsilon = 1e-14);
        // Adjugate (cofactor-transpose) of J for the 2×2 case.
        let cof_t = Matrix2::new(t.j[(1, 1)], -t.j[(0, 1)], -t.j[(1, 0)], t.j[(0, 0)]);
        assert_relative_eq!((t.r - cof_t).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn equal_deformations_give_identity_and_zeros() {
        let jet = DeformationJet { h: 1.3, h_y1: 0.2, h_y1y1: -0.5, h_t: 0.1, h_ty1: 0.3 };
        let p = DeformationPoint { h: jet.h, h_y1: jet.h_y1 };
        let t = point_transforms(p, p, 0.7).unwrap();
        assert_eq!(t.r, Matrix2::identity());
        assert_eq!(t.det_j, 1.0);
        let vel = VelocityPoint {
            u: Vector2::new(0.4, -0.2),
            grad: Matrix2::new(0.1, 0.2, 0.3, 0.4),
        };
        let e = error_matrices(jet, jet, vel, 0.7).unwrap();
        assert_eq!(e.w_e, 0.0);
        assert_eq!(e.e1, Vector2::zeros());
        assert_eq!(e.e2, Matrix2::zeros());
        assert_eq!(e.e3, Matrix2::zeros());
        assert_eq!(e.e_r, Matrix2::zeros());
    }

    #[test]
    fn error_matrices_constant_offset() {
        // h¹ = 2, h² = 1, all derivatives zero, u = (1,0) with zero gradient:
        // w_e = 0, E₂ = 0, E_R = [[1,0],[0,0]], E₃ = ½·diag-ish with only the
        // (2,2) entry h̄/(h¹h²) = ½ surviving.
        let h1 = DeformationJet { h: 2.0, ..Default::default() };
        let h2 = DeformationJet { h: 1.0, ..Default::default() };
        let vel = VelocityPoint { u: Vector2::new(1.0, 0.0), grad: Matrix2::zeros() };
        let e = error_matrices(h1, h2, vel, 0.3).unwrap();
        assert_eq!(e.w_e, 0.0);
        assert_eq!(e.e2, Matrix2::zeros());
        assert_eq!(e.e_r, Matrix2::new(1.0, 0.0, 0.0, 0.0));
        assert_eq!(e.e3, Matrix2::new(0.0, 0.0, 0.0, 0.25));
        assert_eq!(e.e1, Vector2::zeros());
    }

    #[test]
    fn piola_apply_is_matrix_vector_product() {
        let t = point_transforms(
            DeformationPoint { h: 2.0, h_y1: 0.0 },
            DeformationPoint { h: 1.0, h_y1: 0.0 },
            0.5,
        )
        .unwrap();
        let v = piola_apply(Vector2::new(1.0, 1.0), &t);
        assert_eq!(v, Vector2::new(2.0, 1.0));
        // Wall-trace preservation: u₁ = 0 ⇒ (Ru)₂ = u₂.
        let w = piola_apply(Vector2::new(0.0, 0.8), &t);
        assert_eq!(w[1], 0.8);
    }
}
