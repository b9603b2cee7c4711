//! Partitioned evolution on a frozen geometry and the global fixed-point
//! iteration that updates the geometry from the wall displacement it
//! produces.
//!
//! One evaluation of the solution map `F` advances the coupled
//! fluid–structure system over the whole time horizon while the channel
//! geometry is held at a *given* deformation trajectory `δ`; the wall
//! displacement the run produces is a new trajectory `F(δ)`. A solution of
//! the coupled problem is a fixed point `δ* = F(δ*)`, found here by plain
//! successive substitution. Distances between trajectories are measured in
//! the norm of the space where the map contracts for short horizons:
//! the intersection of `H¹(0,T; H²(0,L))` (time-seminorm variant) with
//! `W^{1,∞}(0,T; L²(0,L))`.

use crate::config::ModelConfig;
use crate::fluid::{self, FluidStepper, PressureData, SchemeParams};
use crate::geometry::{
    check_admissible, eval_deformation, AdmissibilityReport, DeformationHistory, Grid1d,
};
use crate::operators::{self, FlowState};
use crate::structure::{self, step_wall, WallState};
use crate::{FsiError, Result};

use nalgebra::DVector;

/// One complete coupled run: flow and wall states at every time level plus
/// the (frozen) geometry the fluid saw. `flow[n]`, `wall[n]` and
/// `history.times[n]` share the time stamp `n·Δt`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub flow: Vec<FlowState>,
    pub wall: Vec<WallState>,
    pub history: DeformationHistory,
}

impl Trajectory {
    /// Number of stored time levels (steps + 1).
    pub fn levels(&self) -> usize {
        self.flow.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.history.times
    }

    /// The wall displacement per time level — the output the fixed-point
    /// iteration feeds back in as the next geometry.
    pub fn wall_eta_levels(&self) -> Vec<Vec<f64>> {
        self.wall.iter().map(|w| w.eta.clone()).collect()
    }
}

/// Advance the coupled system over the full horizon with the geometry frozen
/// at the displacement trajectory `delta` (one row per time level, node
/// values on the wall grid, exact zeros at the clamped ends).
///
/// Within each step the two solves are sequential: the fluid advances first
/// against the current wall velocity, then the wall advances against the
/// fresh fluid trace. Pressure data are sampled at the implicit time level.
/// The run fails with [`FsiError::Admissibility`] if the frozen geometry
/// leaves the admissible set, and is deterministic: identical inputs give
/// bit-identical trajectories.
pub fn evaluate_f(delta: &[Vec<f64>], config: &ModelConfig) -> Result<Trajectory> {
    config.validate()?;
    let grid = config.grid2();
    let g1 = config.grid1();
    let times = config.times();
    if delta.len() != times.len() {
        return Err(FsiError::Dimension(format!(
            "deformation trajectory has {} levels but the time grid has {}",
            delta.len(),
            times.len()
        )));
    }

    let history = eval_deformation(delta, &config.r0, g1, &times)?;
    let adm = check_admissible(&history, &config.admissibility()?);
    if !adm.pass {
        return Err(FsiError::Admissibility(adm.violations.join("; ")));
    }

    let scheme = SchemeParams::new(config.kappa(), config.eps, config.dt, config.lin_tol)?;
    let stepper = FluidStepper::new(grid.clone(), config.nu(), scheme)?;
    let wall_params = config.wall_params()?;

    let steps = config.steps();
    let mut flow = Vec::with_capacity(steps + 1);
    let mut wall = Vec::with_capacity(steps + 1);
    flow.push(FlowState::zero(&grid));
    wall.push(WallState::zero(&g1));

    for n in 0..steps {
        let t_next = times[n + 1];
        let data = PressureData {
            q_in: config.q_in.eval(t_next),
            q_out: config.q_out.eval(t_next),
            q_w: vec![config.q_w.eval(t_next); g1.m()],
        };
        let next_flow = stepper.step(
            &flow[n],
            history.snapshot(n),
            history.snapshot(n + 1),
            &wall[n].sigma,
            &data,
        )?;
        let trace = fluid::wall_trace(&next_flow, &grid);
        let next_wall =
            step_wall(&wall[n], &trace, &wall_params, config.kappa(), config.dt, &g1)?;
        flow.push(next_flow);
        wall.push(next_wall);
    }

    Ok(Trajectory { flow, wall, history })
}

fn check_level_shapes(eta: &[Vec<f64>], m: usize, what: &str) -> Result<()> {
    if let Some(row) = eta.iter().find(|row| row.len() != m) {
        return Err(FsiError::Dimension(format!(
            "{what}: every level must have {m} nodes, found one with {}",
            row.len()
        )));
    }
    Ok(())
}

/// Distance between two displacement trajectories in the iteration space:
/// the `H¹(0,T;H²)` time-seminorm component plus the `W^{1,∞}(0,T;L²)`
/// component, both on the difference and built from forward differences in
/// time,
///
/// ```text
/// z(η¹,η²) = ( Σ_n Δt ‖s_n‖²_{H²} )^{1/2} + max_n ‖s_n‖_{L²},
///            s_n = (η̄_{n+1} − η̄_n)/Δt,  η̄ = η¹ − η²,
/// ```
///
/// with `‖f‖²_{H²} = ‖f‖² + ‖f''‖²` and the second derivative realized by
/// the clamped second-difference matrix. Any norm equivalent to the
/// continuous intersection norm serves the contraction argument; this one is
/// exact for trajectories resolved on the grid.
pub fn z_distance(eta1: &[Vec<f64>], eta2: &[Vec<f64>], grid: &Grid1d, dt: f64) -> Result<f64> {
    if eta1.len() != eta2.len() {
        return Err(FsiError::Dimension(format!(
            "trajectories have {} and {} levels",
            eta1.len(),
            eta2.len()
        )));
    }
    if eta1.len() < 2 {
        return Err(FsiError::Dimension("need at least two time levels".into()));
    }
    if !(dt > 0.0) {
        return Err(FsiError::Domain(format!("time step must be positive, got {dt}")));
    }
    let m = grid.m();
    check_level_shapes(eta1, m, "first trajectory")?;
    check_level_shapes(eta2, m, "second trajectory")?;

    let d2 = structure::d2_matrix_clamped(grid);
    let mut h1_sq = 0.0;
    let mut sup = 0.0f64;
    for n in 0..eta1.len() - 1 {
        let s: DVector<f64> = DVector::from_fn(m, |i, _| {
            ((eta1[n + 1][i] - eta2[n + 1][i]) - (eta1[n][i] - eta2[n][i])) / dt
        });
        let curv = &d2 * &s;
        let mut l2 = 0.0;
        let mut l2_curv = 0.0;
        for i in 0..m {
            let w = grid.weight(i);
            l2 += w * s[i] * s[i];
            l2_curv += w * curv[i] * curv[i];
        }
        h1_sq += dt * (l2 + l2_curv);
        sup = sup.max(l2.sqrt());
    }
    Ok(h1_sq.sqrt() + sup)
}

/// How a run of [`global_iterate`] ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IterationStatus {
    /// Successive iterates came within tolerance and the fixed point was
    /// confirmed by one extra evaluation.
    Converged,
    /// The iteration budget ran out before the tolerance was met.
    MaxIter,
    /// The contraction estimate exceeded one for three consecutive steps.
    Diverged,
    /// An iterate left the admissible set mid-iteration.
    AdmissibilityViolation,
}

/// Complete record of a fixed-point run. Divergence and admissibility
/// failures are reported here as data — the caller decides whether to treat
/// them as fatal.
#[derive(Clone, Debug)]
pub struct IterationReport {
    pub status: IterationStatus,
    /// Number of map evaluations consumed by the iteration itself (the
    /// confirming evaluation after convergence is not counted).
    pub iterations: usize,
    /// `d_k = z(η^k, η^{k−1})`, one entry per iteration.
    pub d: Vec<f64>,
    /// Contraction estimates `q_k = d_k/d_{k−1}`, one entry per iteration
    /// after the first; `None` when the previous distance had already hit
    /// the solver tolerance floor and the quotient would be noise.
    pub q: Vec<Option<f64>>,
    /// `z(F(η*), η*)` from the confirming evaluation after convergence.
    pub fixed_point_residual: Option<f64>,
    /// Admissibility report of each iterate's geometry, in order.
    pub admissibility: Vec<AdmissibilityReport>,
    /// Human-readable summary; on divergence it suggests the standard
    /// remedy of halving the time horizon.
    pub message: String,
}

fn z_ball_bound(config: &ModelConfig) -> Result<f64> {
    let adm = config.admissibility()?;
    Ok(adm.r_min - adm.alpha)
}

/// Successive substitution `η^{k+1} = F(η^k)` from `eta0` (zero when absent).
///
/// Each iterate is checked against the admissible set before it is used as
/// geometry: the pointwise bounds via [`check_admissible`] and the ball
/// condition `‖η‖_Z ≤ R_min − α`. A violation at the *initial* guess is an
/// error; a violation later, an iteration budget exhausted, or a contraction
/// estimate `q_k ≥ 1` for three consecutive iterations all end the run with
/// the corresponding [`IterationStatus`] and the last completed trajectory.
/// On convergence the map is evaluated once more at the accepted iterate and
/// `z(F(η*), η*)` is stored, so the returned trajectory is the run *at* the
/// fixed point rather than the one that led to it.
pub fn global_iterate(
    eta0: Option<Vec<Vec<f64>>>,
    config: &ModelConfig,
    tol: f64,
    max_iter: usize,
) -> Result<(Trajectory, IterationReport)> {
    config.validate()?;
    if !(tol >= 0.0) {
        return Err(FsiError::Domain(format!("tolerance must be nonnegative, got {tol}")));
    }
    if max_iter == 0 {
        return Err(FsiError::Domain("need at least one iteration".into()));
    }
    let g1 = config.grid1();
    let levels = config.steps() + 1;
    let mut eta_prev =
        eta0.unwrap_or_else(|| vec![vec![0.0; g1.m()]; levels]);
    if eta_prev.len() != levels {
        return Err(FsiError::Dimension(format!(
            "initial guess has {} levels but the time grid has {levels}",
            eta_prev.len()
        )));
    }
    check_level_shapes(&eta_prev, g1.m(), "initial guess")?;

    let ball = z_ball_bound(config)?;
    let q_floor = 10.0 * config.lin_tol;
    let zeros = vec![vec![0.0; g1.m()]; levels];

    let mut d = Vec::new();
    let mut q: Vec<Option<f64>> = Vec::new();
    let mut admissibility = Vec::new();
    let mut best: Option<Trajectory> = None;
    let mut bad_streak = 0usize;

    for k in 1..=max_iter {
        let traj = match evaluate_f(&eta_prev, config) {
            Ok(t) => t,
            Err(FsiError::Admissibility(msg)) if k > 1 => {
                let report = IterationReport {
                    status: IterationStatus::AdmissibilityViolation,
                    iterations: k - 1,
                    d,
                    q,
                    fixed_point_residual: None,
                    admissibility,
                    message: format!(
                        "iterate {k} left the admissible set: {msg}; \
                         halving the time horizon usually restores admissibility"
                    ),
                };
                return Ok((best.expect("k > 1 implies a stored trajectory"), report));
            }
            Err(e) => return Err(e),
        };
        admissibility
            .push(check_admissible(&traj.history, &config.admissibility()?));

        let eta_next = traj.wall_eta_levels();
        let d_k = z_distance(&eta_next, &eta_prev, &g1, config.dt)?;
        if d.is_empty() {
            q.clear();
        } else {
            let d_prev = *d.last().expect("nonempty");
            q.push(if d_prev > q_floor { Some(d_k / d_prev) } else { None });
        }
        d.push(d_k);
        best = Some(traj);

        // Ball check on the new iterate before it can become geometry.
        let z_norm = z_distance(&eta_next, &zeros, &g1, config.dt)?;
        if z_norm > ball {
            let report = IterationReport {
                status: IterationStatus::AdmissibilityViolation,
                iterations: k,
                d,
                q,
                fixed_point_residual: None,
                admissibility,
                message: format!(
                    "iterate {k} has ‖η‖_Z = {z_norm:.6e} > R_min − α = {ball:.6e}; \
                     halving the time horizon shrinks the iterates"
                ),
            };
            return Ok((best.expect("just stored"), report));
        }

        if d_k <= tol {
            // Confirm the fixed point with one more evaluation at η*.
            let confirm = evaluate_f(&eta_next, config)?;
            let residual =
                z_distance(&confirm.wall_eta_levels(), &eta_next, &g1, config.dt)?;
            admissibility
                .push(check_admissible(&confirm.history, &config.admissibility()?));
            let report = IterationReport {
                status: IterationStatus::Converged,
                iterations: k,
                d,
                q,
                fixed_point_residual: Some(residual),
                admissibility,
                message: format!(
                    "converged after {k} iterations; fixed-point residual {residual:.3e}"
                ),
            };
            return Ok((confirm, report));
        }

        let last_q = q.last().copied().flatten();
        bad_streak = match last_q {
            Some(v) if v >= 1.0 => bad_streak + 1,
            _ => 0,
        };
        if bad_streak >= 3 {
            let report = IterationReport {
                status: IterationStatus::Diverged,
                iterations: k,
                d,
                q,
                fixed_point_residual: None,
                admissibility,
                message: "contraction estimate q_k ≥ 1 for three consecutive \
                          iterations; halve the time horizon and retry"
                    .into(),
            };
            return Ok((best.expect("just stored"), report));
        }

        eta_prev = eta_next;
    }

    let report = IterationReport {
        status: IterationStatus::MaxIter,
        iterations: max_iter,
        d,
        q,
        fixed_point_residual: None,
        admissibility,
        message: format!("tolerance {tol:.3e} not reached within {max_iter} iterations"),
    };
    Ok((best.expect("max_iter ≥ 1"), report))
}

/// Per-step energy ledger of one coupled run.
///
/// For each step the ledger records the total (fluid + wall) energy level,
/// its increase, the nonnegative dissipation actually removed, and a bound
/// on the work the data and the non-dissipative scheme terms can inject.
/// Testing the implicit step against its own solution turns the two solves
/// into an exact identity
///
/// ```text
/// E_{n+1} − E_n = −Δt·D_n + Δt·S_n,   D_n ≥ 0,
/// ```
///
/// where `D_n` collects the backward-Euler jump terms, the viscous and
/// pressure-regularization forms, the penalty mismatch and the wall damping;
/// `S_n` collects the boundary-pressure work, the transport form, the
/// mesh-motion remainder, the reference-curvature forcing and the penalty
/// partition slack. `work_bound[n]` is `Σ |terms of S_n|`, so the audit
/// inequality `increase ≤ Δt·work_bound` holds up to solver and rounding
/// error whenever the structural stiffness factor is constant along the
/// wall (with a variable factor the wall telescoping acquires a commutator
/// remainder of the same order as the stiffness variation).
#[derive(Clone, Debug)]
pub struct EnergyAudit {
    /// Time stamp of the *end* of each step.
    pub t: Vec<f64>,
    /// Total energy at every level (one more entry than steps).
    pub total: Vec<f64>,
    /// `total[n+1] − total[n]` per step.
    pub increase: Vec<f64>,
    /// `Δt · Σ |injection terms|` per step.
    pub work_bound: Vec<f64>,
    /// `Δt · D_n` per step (reported, not part of the bound).
    pub dissipation: Vec<f64>,
    /// `max_n (increase[n] − work_bound[n])` — at or below solver noise for
    /// an energy-consistent scheme.
    pub max_excess: f64,
}

/// Audit the energy budget of a completed run. See [`EnergyAudit`].
pub fn energy_audit(traj: &Trajectory, config: &ModelConfig) -> Result<EnergyAudit> {
    let grid = config.grid2();
    let g1 = config.grid1();
    let wall_params = config.wall_params()?;
    let nu = config.nu();
    let kappa = config.kappa();
    let dt = config.dt;
    let steps = traj.levels().saturating_sub(1);
    if traj.wall.len() != traj.levels() || traj.history.levels() != traj.levels() {
        return Err(FsiError::Dimension("trajectory arrays disagree on level count".into()));
    }

    let total: Vec<f64> = (0..traj.levels())
        .map(|n| {
            fluid::fluid_energy(&traj.flow[n], &traj.history.h[n], &grid)
                + structure::wall_energy(&traj.wall[n], &wall_params, &g1)
        })
        .collect();

    let top = grid.m2() - 1;
    let mut t = Vec::with_capacity(steps);
    let mut increase = Vec::with_capacity(steps);
    let mut work_bound = Vec::with_capacity(steps);
    let mut dissipation = Vec::with_capacity(steps);
    let mut max_excess = f64::NEG_INFINITY;

    for n in 0..steps {
        let t_next = traj.history.times[n + 1];
        let u_prev = &traj.flow[n];
        let u = &traj.flow[n + 1];
        let w_prev = &traj.wall[n];
        let w = &traj.wall[n + 1];
        let snap = traj.history.snapshot(n + 1);
        let h_prev = &traj.history.h[n];
        let h_next = &traj.history.h[n + 1];

        // --- injected work -------------------------------------------------
        let q_in = config.q_in.eval(t_next);
        let q_out = config.q_out.eval(t_next);
        let q_w = config.q_w.eval(t_next);
        let mut data_work = 0.0;
        for j in 0..grid.m2() {
            let w2 = grid.w2(j);
            data_work += w2 * h_next[0] * q_in * u.u1[grid.idx(0, j)];
            data_work -= w2 * h_next[grid.m1() - 1] * q_out * u.u1[grid.idx(grid.m1() - 1, j)];
        }
        for i in 0..grid.m1() {
            data_work -= grid.w1(i) * q_w * u.u2[grid.idx(i, top)];
        }

        let transport = operators::convective_form(
            (&u_prev.u1, &u_prev.u2),
            (&u.u1, &u.u2),
            (&u.u1, &u.u2),
            &snap,
            (h_next[0], h_next[grid.m1() - 1]),
            &grid,
        )?;

        // Mesh-motion remainder ⟨h_t(u + y₂∂₂u), u⟩ − ½⟨h_t|u|²⟩ − ½(h_t u₂², wall).
        let mut mesh = 0.0;
        for i in 0..grid.m1() {
            let h_t = (h_next[i] - h_prev[i]) / dt;
            let w1 = grid.w1(i);
            for j in 0..grid.m2() {
                let k = grid.idx(i, j);
                let y2 = grid.y2(j);
                let s1 = u.u1[k] + y2 * operators::d_y2(&u.u1, &grid, i, j);
                let s2 = u.u2[k] + y2 * operators::d_y2(&u.u2, &grid, i, j);
                let sq = u.u1[k] * u.u1[k] + u.u2[k] * u.u2[k];
                mesh += w1 * grid.w2(j) * (h_t * (s1 * u.u1[k] + s2 * u.u2[k]) - 0.5 * h_t * sq);
            }
            let u2w = u.u2[grid.idx(i, top)];
            mesh -= 0.5 * w1 * h_t * u2w * u2w;
        }

        // Reference-curvature forcing and penalty partition slack on the wall.
        let mut curvature = 0.0;
        let mut partition = 0.0;
        for i in 0..g1.m() {
            let wq = g1.weight(i);
            let e = wall_params.estiff[i];
            curvature += wq * wall_params.a * e * wall_params.r0_y1y1[i] * w.sigma[i];
            let u2w = u.u2[grid.idx(i, top)];
            partition += wq * kappa * u2w * (w.sigma[i] - w_prev.sigma[i]);
        }

        let injected =
            data_work.abs() + transport.abs() + mesh.abs() + curvature.abs() + partition.abs();

        // --- dissipation (reported) ----------------------------------------
        let viscous = operators::viscous_form((&u.u1, &u.u2), (&u.u1, &u.u2), &snap, nu, &grid)?;
        let reg = operators::pressure_form(&u.q, &u.q, config.eps, &snap, &grid)?;
        let mut mismatch = 0.0;
        for i in 0..g1.m() {
            let diff = u.u2[grid.idx(i, top)] - w.sigma[i];
            mismatch += g1.weight(i) * kappa * diff * diff;
        }
        let d2 = structure::d2_matrix_clamped(&g1);
        let sig = DVector::from_column_slice(&w.sigma);
        let curv = &d2 * &sig;
        let mut damping = 0.0;
        for i in 0..g1.m() {
            damping +=
                g1.weight(i) * wall_params.c * wall_params.estiff[i] * curv[i] * curv[i];
        }

        let delta_e = total[n + 1] - total[n];
        t.push(t_next);
        increase.push(delta_e);
        work_bound.push(dt * injected);
        dissipation.push(dt * (viscous + reg + mismatch + damping));
        max_excess = max_excess.max(delta_e - dt * injected);
    }

    Ok(EnergyAudit { t, total, increase, work_bound, dissipation, max_excess })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PressureSpec;

    fn small_config() -> ModelConfig {
        ModelConfig {
            n1: 16,
            n2: 8,
            dt: 0.005,
            t_final: 0.05,
            q_in: PressureSpec::Pulse { amplitude: 5.0, t_rise: 0.0125, t_fall: 0.025 },
            ..ModelConfig::default()
        }
    }

    fn bits(traj: &Trajectory) -> Vec<u64> {
        let mut out = Vec::new();
        for s in &traj.flow {
            out.extend(s.u1.iter().map(|v| v.to_bits()));
            out.extend(s.u2.iter().map(|v| v.to_bits()));
            out.extend(s.q.iter().map(|v| v.to_bits()));
        }
        for w in &traj.wall {
            out.extend(w.eta.iter().map(|v| v.to_bits()));
            out.extend(w.sigma.iter().map(|v| v.to_bits()));
        }
        out
    }

    #[test]
    fn zero_data_run_is_a_fixed_point() {
        let cfg = ModelConfig {
            q_in: PressureSpec::Constant { value: 0.0 },
            ..small_config()
        };
        let levels = cfg.steps() + 1;
        let zeros = vec![vec![0.0; cfg.grid1().m()]; levels];
        let traj = evaluate_f(&zeros, &cfg).unwrap();
        let peak = traj
            .flow
            .iter()
            .flat_map(|s| s.u1.iter().chain(&s.u2).chain(&s.q))
            .chain(traj.wall.iter().flat_map(|w| w.eta.iter().chain(&w.sigma)))
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        assert_eq!(peak, 0.0, "zero data must preserve the zero state exactly");

        let (_, report) = global_iterate(None, &cfg, 0.0, 5).unwrap();
        assert_eq!(report.status, IterationStatus::Converged);
        assert_eq!(report.iterations, 1);
        assert_eq!(report.d, vec![0.0]);
        assert_eq!(report.fixed_point_residual, Some(0.0));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let cfg = small_config();
        let g1 = cfg.grid1();
        let levels = cfg.steps() + 1;
        let delta: Vec<Vec<f64>> = (0..levels)
            .map(|n| {
                let ramp = n as f64 * cfg.dt / cfg.t_final;
                (0..g1.m())
                    .map(|i| {
                        let s = (std::f64::consts::PI * g1.y(i) / g1.l).sin();
                        0.01 * ramp * s * s
                    })
                    .collect::<Vec<f64>>()
            })
            .map(|mut row| {
                row[0] = 0.0;
                *row.last_mut().unwrap() = 0.0;
                row
            })
            .collect();
        let t1 = evaluate_f(&delta, &cfg).unwrap();
        let t2 = evaluate_f(&delta, &cfg).unwrap();
        assert_eq!(bits(&t1), bits(&t2), "repeat evaluation must be bit-identical");
    }

    #[test]
    fn z_distance_matches_separable_profile() {
        // η(y,t) = t·g(y), g = 1 − cos(2πy/L): the forward differences all
        // equal g, so z = √T·‖g‖_{H²} + ‖g‖_{L²} exactly in time and to
        // second order in space.
        let g1 = Grid1d::new(1.0, 64);
        let dt = 0.005;
        let steps = 20;
        let tfin = dt * steps as f64;
        let gfun = |y: f64| 1.0 - (2.0 * std::f64::consts::PI * y).cos();
        let eta: Vec<Vec<f64>> = (0..=steps)
            .map(|n| (0..g1.m()).map(|i| n as f64 * dt * gfun(g1.y(i))).collect())
            .collect();
        let zeros = vec![vec![0.0; g1.m()]; steps + 1];
        let z = z_distance(&eta, &zeros, &g1, dt).unwrap();

        let two_pi = 2.0 * std::f64::consts::PI;
        let l2_sq = 1.5;
        let curv_sq = two_pi.powi(4) * 0.5;
        let expected = (tfin * (l2_sq + curv_sq)).sqrt() + l2_sq.sqrt();
        assert!(
            (z - expected).abs() < 2e-2 * expected,
            "z = {z}, expected ≈ {expected}"
        );
    }

    #[test]
    fn z_distance_is_homogeneous_and_definite() {
        let g1 = Grid1d::new(1.0, 16);
        let dt = 0.01;
        let eta: Vec<Vec<f64>> = (0..5)
            .map(|n| (0..g1.m()).map(|i| (n * i) as f64 * 1e-3).collect())
            .collect();
        let eta2: Vec<Vec<f64>> =
            eta.iter().map(|row| row.iter().map(|v| 2.0 * v).collect()).collect();
        let zeros = vec![vec![0.0; g1.m()]; 5];
        let z1 = z_distance(&eta, &zeros, &g1, dt).unwrap();
        let z2 = z_distance(&eta2, &zeros, &g1, dt).unwrap();
        assert!((z2 - 2.0 * z1).abs() < 1e-12 * z1.max(1.0));
        assert_eq!(z_distance(&eta, &eta, &g1, dt).unwrap(), 0.0);
    }

    #[test]
    fn energy_increase_is_bounded_by_injected_work() {
        let cfg = small_config();
        let levels = cfg.steps() + 1;
        let zeros = vec![vec![0.0; cfg.grid1().m()]; levels];
        let traj = evaluate_f(&zeros, &cfg).unwrap();
        let audit = energy_audit(&traj, &cfg).unwrap();
        let scale = audit.total.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
        assert!(
            audit.max_excess <= 1e-9 * scale,
            "excess {} vs scale {scale}",
            audit.max_excess
        );
        assert!(audit.dissipation.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn iteration_contracts_on_a_short_horizon() {
        let cfg = small_config();
        let (traj, report) = global_iterate(None, &cfg, 1e-8, 20).unwrap();
        assert_eq!(report.status, IterationStatus::Converged, "{}", report.message);
        for (k, qk) in report.q.iter().enumerate() {
            if let Some(v) = qk {
                assert!(*v < 1.0, "q_{} = {v} must contract", k + 2);
            }
        }
        let res = report.fixed_point_residual.unwrap();
        assert!(res <= 1e-7, "fixed-point residual {res}");
        assert_eq!(traj.levels(), cfg.steps() + 1);
    }
}
