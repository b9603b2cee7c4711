//! Result serialization: CSV reports and legacy structured-points snapshots.
//!
//! Everything here is plain text with a fixed column order. Numbers are
//! rendered with Rust's shortest round-trip formatting for `f64`, so a file
//! read back with [`read_csv`] reproduces the written values bit for bit —
//! reports can be diffed across runs and post-processed without precision
//! loss. Empty cells encode "not defined" (for example the contraction
//! quotient on the first iteration); no other quoting dialect is needed
//! because the writers only emit numbers and fixed lower-case tags.

use std::fs;
use std::path::{Path, PathBuf};

use crate::analysis::{DependenceReport, EquicontinuityProfile, ResidualStats};
use crate::config::{self, ModelConfig};
use crate::coupling::{IterationReport, Trajectory};
use crate::operators::{self, FlowState, Grid2d};
use crate::{fluid, structure, FsiError, Result};

/// Shortest decimal rendering of `x` that parses back to identical bits.
pub fn fmt_num(x: f64) -> String {
    format!("{x}")
}

/// Write one CSV file with the given header and pre-rendered rows.
///
/// Every row must have exactly `header.len()` cells, and no cell may contain
/// a comma or newline — the schemas in this module never need them.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    for (r, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(FsiError::Dimension(format!(
                "csv row {r} has {} cells, header has {}",
                row.len(),
                header.len()
            )));
        }
        for cell in row {
            if cell.contains(',') || cell.contains('\n') {
                return Err(FsiError::Domain(format!(
                    "csv cell {cell:?} would need quoting, which this dialect does not support"
                )));
            }
        }
    }
    let mut text = String::with_capacity(rows.len() * 16 * header.len());
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// A CSV file read back into memory; produced by [`read_csv`].
#[derive(Clone, Debug)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    /// Index of the named column.
    pub fn column(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| {
            FsiError::Domain(format!(
                "csv has no column {name:?} (header: {:?})",
                self.header
            ))
        })
    }

    /// Parse the named column; empty cells become `None`.
    pub fn nums(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let c = self.column(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let cell = &row[c];
                if cell.is_empty() {
                    return Ok(None);
                }
                cell.parse::<f64>().map(Some).map_err(|_| {
                    FsiError::Domain(format!(
                        "csv cell {cell:?} (row {r}, column {name:?}) is not a number"
                    ))
                })
            })
            .collect()
    }

    /// Parse the named column, requiring every cell to be present.
    pub fn dense(&self, name: &str) -> Result<Vec<f64>> {
        self.nums(name)?
            .into_iter()
            .enumerate()
            .map(|(r, v)| {
                v.ok_or_else(|| {
                    FsiError::Domain(format!("csv column {name:?} is empty at row {r}"))
                })
            })
            .collect()
    }
}

/// Read a CSV produced by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| FsiError::Domain(format!("{} is empty", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Vec<String> = line.split(',').map(str::to_string).collect();
        if row.len() != header.len() {
            return Err(FsiError::Dimension(format!(
                "{} line {}: {} cells, expected {}",
                path.display(),
                k + 2,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok(CsvTable { header, rows })
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

/// One row of the per-step diagnostic series of a trajectory.
#[derive(Clone, Copy, Debug)]
pub struct TimeSeriesRow {
    pub t: f64,
    /// `½ ∫_D h|u|² dy` — kinetic energy of the transformed fluid.
    pub fluid_energy: f64,
    /// Kinetic plus elastic energy of the wall.
    pub wall_energy: f64,
    /// `‖div_h u‖_{L²(D)}` — the defect the ε-relaxation leaves.
    pub div_h_norm: f64,
    /// `‖u₂ − σ‖_{L²(S_w)}` — the mismatch the κ-penalty leaves.
    pub wall_mismatch_norm: f64,
}

/// Per-step diagnostics of a trajectory, in time order.
pub fn time_series(traj: &Trajectory, config: &ModelConfig) -> Result<Vec<TimeSeriesRow>> {
    let grid = config.grid2();
    let g1 = config.grid1();
    let params = config.wall_params()?;
    let mut rows = Vec::with_capacity(traj.levels());
    for n in 0..traj.levels() {
        let flow = &traj.flow[n];
        let wall = &traj.wall[n];
        let snap = traj.history.snapshot(n);
        let div = operators::div_h_field(&flow.u1, &flow.u2, &snap, &grid)?;
        let trace = fluid::wall_trace(flow, &grid);
        let mut mismatch = 0.0;
        for i in 0..g1.m() {
            let r = trace[i] - wall.sigma[i];
            mismatch += g1.weight(i) * r * r;
        }
        rows.push(TimeSeriesRow {
            t: flow.t,
            fluid_energy: fluid::fluid_energy(flow, snap.h, &grid),
            wall_energy: structure::wall_energy(wall, &params, &g1),
            div_h_norm: operators::l2_norm(&div, &grid),
            wall_mismatch_norm: mismatch.sqrt(),
        });
    }
    Ok(rows)
}

const TIME_SERIES_HEADER: [&str; 5] = [
    "t",
    "fluid_energy",
    "wall_energy",
    "div_h_norm",
    "wall_mismatch_norm",
];

/// Write the diagnostic time series (columns as in [`TimeSeriesRow`]).
pub fn write_time_series(path: &Path, rows: &[TimeSeriesRow]) -> Result<()> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                fmt_num(r.t),
                fmt_num(r.fluid_energy),
                fmt_num(r.wall_energy),
                fmt_num(r.div_h_norm),
                fmt_num(r.wall_mismatch_norm),
            ]
        })
        .collect();
    write_csv(path, &TIME_SERIES_HEADER, &body)
}

/// Write the fixed-point record: one row per iteration `k` with the distance
/// `d_k = z(η^k, η^{k−1})` and the contraction quotient `q_k = d_k/d_{k−1}`.
/// The quotient cell is empty for `k = 1` (nothing to divide by) and whenever
/// the previous distance had already reached the solver floor, so the filled
/// `q_k` cells number at most `iterations − 1`.
pub fn write_iteration_report(path: &Path, report: &IterationReport) -> Result<()> {
    let mut body = Vec::with_capacity(report.d.len());
    for k in 1..=report.d.len() {
        let q = if k >= 2 { report.q.get(k - 2).copied().flatten() } else { None };
        body.push(vec![
            fmt_num(k as f64),
            fmt_num(report.d[k - 1]),
            q.map(fmt_num).unwrap_or_default(),
        ]);
    }
    write_csv(path, &["k", "d_k", "q_k"], &body)
}

/// Write a continuous-dependence report: the stability functionals per time
/// level, the combined right-hand side, and the observed ratio `lhs/rhs`.
pub fn write_dependence_report(path: &Path, report: &DependenceReport) -> Result<()> {
    let mut body = Vec::with_capacity(report.t.len());
    for k in 0..report.t.len() {
        let rhs = report.data_term[k] + report.deformation_term[k];
        body.push(vec![
            fmt_num(report.t[k]),
            fmt_num(report.g[k]),
            fmt_num(report.lhs[k]),
            fmt_num(report.data_term[k]),
            fmt_num(report.deformation_term[k]),
            fmt_num(rhs),
            fmt_num(report.ratio[k]),
        ]);
    }
    write_csv(
        path,
        &["t", "g", "lhs", "data_term", "deformation_term", "rhs", "ratio"],
        &body,
    )
}

/// Write identity-verification statistics, one row per kind. Kinds that ran
/// a refinement study additionally get their per-grid residuals written to
/// `<stem>_refinement.csv` next to the main file.
pub fn write_residual_stats(path: &Path, stats: &[ResidualStats]) -> Result<()> {
    let body: Vec<Vec<String>> = stats
        .iter()
        .map(|s| {
            vec![
                s.kind.name().to_string(),
                fmt_num(s.count as f64),
                fmt_num(s.max_residual),
                fmt_num(s.mean_residual),
                s.slope.map(fmt_num).unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(
        path,
        &["kind", "samples", "max_residual", "mean_residual", "slope"],
        &body,
    )?;
    let mut detail = Vec::new();
    for s in stats {
        for &(n, r) in &s.refinement {
            detail.push(vec![s.kind.name().to_string(), fmt_num(n as f64), fmt_num(r)]);
        }
    }
    if !detail.is_empty() {
        write_csv(&sibling(path, "_refinement"), &["kind", "n", "residual"], &detail)?;
    }
    Ok(())
}

/// Write an equicontinuity profile: `value(τ)` per offset and the difference
/// quotient `value/τ` (empty at `τ = 0`). The fitted slope and the largest
/// quotient are scalar summaries; callers report them separately.
pub fn write_equicontinuity(path: &Path, profile: &EquicontinuityProfile) -> Result<()> {
    let mut body = Vec::with_capacity(profile.taus.len());
    for (k, &tau) in profile.taus.iter().enumerate() {
        let ratio =
            if tau > 0.0 { fmt_num(profile.values[k] / tau) } else { String::new() };
        body.push(vec![fmt_num(tau), fmt_num(profile.values[k]), ratio]);
    }
    write_csv(path, &["tau", "value", "ratio"], &body)
}

/// Write one time level as a legacy structured-points snapshot with point
/// scalars `u1`, `u2`, `q`, and the deformed vertical coordinate
/// `x2_deformed = y₂·h(y₁)` for reconstructing the physical domain.
pub fn write_vtk_snapshot(
    path: &Path,
    flow: &FlowState,
    h: &[f64],
    grid: &Grid2d,
) -> Result<()> {
    if h.len() != grid.m1() {
        return Err(FsiError::Dimension(format!(
            "deformation has {} nodes, grid direction 1 has {}",
            h.len(),
            grid.m1()
        )));
    }
    let nodes = grid.node_count();
    if flow.u1.len() != nodes || flow.u2.len() != nodes || flow.q.len() != nodes {
        return Err(FsiError::Dimension(format!(
            "flow state does not match the {}×{} grid",
            grid.m1(),
            grid.m2()
        )));
    }
    // Legacy structured points list values with the first index fastest.
    let order = |f: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
        let mut v = Vec::with_capacity(nodes);
        for j in 0..grid.m2() {
            for i in 0..grid.m1() {
                v.push(f(i, j));
            }
        }
        v
    };
    let fields: [(&str, Vec<f64>); 4] = [
        ("u1", order(&|i, j| flow.u1[grid.idx(i, j)])),
        ("u2", order(&|i, j| flow.u2[grid.idx(i, j)])),
        ("q", order(&|i, j| flow.q[grid.idx(i, j)])),
        ("x2_deformed", order(&|i, j| grid.y2(j) * h[i])),
    ];
    let mut text = String::new();
    text.push_str("# vtk DataFile Version 3.0\n");
    text.push_str(&format!("channel fields at t={}\n", fmt_num(flow.t)));
    text.push_str("ASCII\nDATASET STRUCTURED_POINTS\n");
    text.push_str(&format!("DIMENSIONS {} {} 1\n", grid.m1(), grid.m2()));
    text.push_str("ORIGIN 0 0 0\n");
    text.push_str(&format!(
        "SPACING {} {} 1\n",
        fmt_num(grid.dy1()),
        fmt_num(grid.dy2())
    ));
    text.push_str(&format!("POINT_DATA {nodes}\n"));
    for (name, values) in &fields {
        text.push_str(&format!("SCALARS {name} double 1\nLOOKUP_TABLE default\n"));
        for chunk in values.chunks(6) {
            let line: Vec<String> = chunk.iter().map(|&x| fmt_num(x)).collect();
            text.push_str(&line.join(" "));
            text.push('\n');
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Write the standard outputs of a run into `dir` (created if needed): the
/// resolved configuration, the diagnostic time series, the iteration record
/// when one is supplied, and per-level field snapshots under `fields/` when
/// the configuration asks for them.
pub fn write_run_outputs(
    dir: &Path,
    traj: &Trajectory,
    config: &ModelConfig,
    report: Option<&IterationReport>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.ini"), config::write_config(config))?;
    write_time_series(&dir.join("time_series.csv"), &time_series(traj, config)?)?;
    if let Some(rep) = report {
        write_iteration_report(&dir.join("iterate.csv"), rep)?;
    }
    if config.write_fields {
        let fdir = dir.join("fields");
        fs::create_dir_all(&fdir)?;
        let grid = config.grid2();
        for n in (0..traj.levels()).step_by(config.field_stride.max(1)) {
            let snap = traj.history.snapshot(n);
            write_vtk_snapshot(
                &fdir.join(format!("step_{n:05}.vtk")),
                &traj.flow[n],
                snap.h,
                &grid,
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PressureSpec;
    use crate::coupling::{evaluate_f, IterationStatus};

    fn scratch(name: &str) -> PathBuf {
        let dir = std::env::temp_dir()
            .join(format!("channel-fsi-io-{}-{name}", std::process::id()));
        if dir.exists() {
            let _ = fs::remove_dir_all(&dir);
        }
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn quiet_config() -> ModelConfig {
        let mut cfg = ModelConfig::default();
        cfg.n1 = 8;
        cfg.n2 = 4;
        cfg.dt = 0.01;
        cfg.t_final = 0.03;
        cfg.q_in = PressureSpec::Constant { value: 0.0 };
        cfg
    }

    #[test]
    fn numbers_round_trip_bitwise() {
        let values = [
            0.0,
            -0.0,
            1.0,
            -1.5,
            std::f64::consts::PI,
            1.0 / 3.0,
            1e-300,
            1e300,
            f64::MIN_POSITIVE,
            5e-324,
            f64::MAX,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NAN,
            6.02e23,
            -4.9406564584124654e-12,
        ];
        for &x in &values {
            let s = fmt_num(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x:?} rendered as {s:?}");
        }
    }

    #[test]
    fn csv_write_read_round_trip() {
        let dir = scratch("roundtrip");
        let path = dir.join("table.csv");
        let rows = vec![
            vec![fmt_num(1.0), fmt_num(0.1 + 0.2), String::new()],
            vec![fmt_num(-0.0), fmt_num(1e-300), fmt_num(f64::MAX)],
        ];
        write_csv(&path, &["a", "b", "c"], &rows).unwrap();
        let table = read_csv(&path).unwrap();
        assert_eq!(table.header, ["a", "b", "c"]);
        assert_eq!(table.rows, rows);
        let b = table.dense("b").unwrap();
        assert_eq!(b[0].to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(b[1].to_bits(), 1e-300_f64.to_bits());
        let c = table.nums("c").unwrap();
        assert!(c[0].is_none());
        assert_eq!(c[1], Some(f64::MAX));
        assert!(table.dense("c").is_err());
        assert!(table.column("missing").is_err());

        // Shape violations are rejected at write time.
        let ragged = vec![vec![fmt_num(1.0)]];
        assert!(write_csv(&path, &["a", "b"], &ragged).is_err());
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn zero_run_outputs_are_all_zero_and_complete() {
        let dir = scratch("zero-run");
        let mut cfg = quiet_config();
        cfg.write_fields = true;
        cfg.field_stride = 2;
        let g1 = cfg.grid1();
        let zeros = vec![vec![0.0; g1.m()]; cfg.steps() + 1];
        let traj = evaluate_f(&zeros, &cfg).unwrap();
        write_run_outputs(&dir, &traj, &cfg, None).unwrap();

        let table = read_csv(&dir.join("time_series.csv")).unwrap();
        assert_eq!(table.header, TIME_SERIES_HEADER);
        assert_eq!(table.rows.len(), cfg.steps() + 1);
        for name in ["fluid_energy", "wall_energy", "div_h_norm", "wall_mismatch_norm"] {
            for v in table.dense(name).unwrap() {
                assert_eq!(v, 0.0, "column {name} must vanish on the zero run");
            }
        }
        let t = table.dense("t").unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t[3].to_bits(), traj.times()[3].to_bits());

        assert!(dir.join("config.ini").is_file());
        assert!(dir.join("fields").join("step_00000.vtk").is_file());
        assert!(dir.join("fields").join("step_00002.vtk").is_file());
        assert!(!dir.join("fields").join("step_00001.vtk").exists());
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn iteration_record_shape_matches_contract() {
        let dir = scratch("iterate");
        let path = dir.join("iterate.csv");
        let report = IterationReport {
            status: IterationStatus::Converged,
            iterations: 3,
            d: vec![1.0, 0.5, 1.0 / 3.0],
            q: vec![Some(0.5), Some(2.0 / 3.0)],
            fixed_point_residual: Some(1e-12),
            admissibility: Vec::new(),
            message: String::new(),
        };
        write_iteration_report(&path, &report).unwrap();
        let table = read_csv(&path).unwrap();
        assert_eq!(table.header, ["k", "d_k", "q_k"]);
        assert_eq!(table.rows.len(), 3);
        let q = table.nums("q_k").unwrap();
        assert!(q[0].is_none(), "q_1 is undefined");
        let filled = q.iter().filter(|v| v.is_some()).count();
        assert_eq!(filled, report.iterations - 1);
        assert_eq!(q[2].unwrap().to_bits(), (2.0f64 / 3.0).to_bits());
        let d = table.dense("d_k").unwrap();
        assert_eq!(d[2].to_bits(), (1.0f64 / 3.0).to_bits());
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn dependence_and_residual_writers_round_trip() {
        let dir = scratch("reports");
        let dep = DependenceReport {
            t: vec![0.0, 0.1],
            g: vec![0.0, 2e-5],
            lhs: vec![0.0, 3e-5],
            data_term: vec![0.0, 4e-5],
            deformation_term: vec![0.0, 1e-6],
            ratio: vec![0.0, 3e-5 / 4.1e-5],
        };
        let dep_path = dir.join("dependence.csv");
        write_dependence_report(&dep_path, &dep).unwrap();
        let table = read_csv(&dep_path).unwrap();
        assert_eq!(
            table.header,
            ["t", "g", "lhs", "data_term", "deformation_term", "rhs", "ratio"]
        );
        let rhs = table.dense("rhs").unwrap();
        let data = table.dense("data_term").unwrap();
        let def = table.dense("deformation_term").unwrap();
        for k in 0..rhs.len() {
            assert_eq!(rhs[k].to_bits(), (data[k] + def[k]).to_bits());
        }

        let stats = vec![
            ResidualStats {
                kind: crate::analysis::IdentityKind::Piola,
                count: 100,
                max_residual: 3e-15,
                mean_residual: 5e-16,
                refinement: Vec::new(),
                slope: None,
            },
            ResidualStats {
                kind: crate::analysis::IdentityKind::TrilinearSkew,
                count: 3,
                max_residual: 1e-3,
                mean_residual: 4e-4,
                refinement: vec![(16, 1e-3), (32, 2.6e-4), (64, 6.5e-5)],
                slope: Some(1.97),
            },
        ];
        let res_path = dir.join("residuals.csv");
        write_residual_stats(&res_path, &stats).unwrap();
        let table = read_csv(&res_path).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.rows[0][0], "piola");
        let slopes = table.nums("slope").unwrap();
        assert!(slopes[0].is_none());
        assert_eq!(slopes[1], Some(1.97));
        let detail = read_csv(&dir.join("residuals_refinement.csv")).unwrap();
        assert_eq!(detail.rows.len(), 3);
        assert_eq!(detail.dense("n").unwrap(), vec![16.0, 32.0, 64.0]);
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn vtk_snapshot_lists_every_field_at_every_node() {
        let dir = scratch("vtk");
        let grid = Grid2d::new(1.0, 5, 4);
        let mut flow = FlowState::zero(&grid);
        for i in 0..grid.m1() {
            for j in 0..grid.m2() {
                let n = grid.idx(i, j);
                flow.u1[n] = i as f64 + 10.0 * j as f64;
                flow.q[n] = -(n as f64);
            }
        }
        flow.t = 0.25;
        let h: Vec<f64> = (0..grid.m1()).map(|i| 1.0 + 0.1 * i as f64).collect();
        let path = dir.join("step.vtk");
        write_vtk_snapshot(&path, &flow, &h, &grid).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("DATASET STRUCTURED_POINTS"));
        assert!(text.contains(&format!("DIMENSIONS {} {} 1", grid.m1(), grid.m2())));
        for name in ["u1", "u2", "q", "x2_deformed"] {
            assert!(text.contains(&format!("SCALARS {name} double 1")));
        }
        // Each block carries exactly one value per node, first index fastest.
        let blocks: Vec<&str> = text.split("LOOKUP_TABLE default\n").collect();
        assert_eq!(blocks.len(), 5);
        for block in &blocks[1..] {
            let numbers = block
                .lines()
                .take_while(|l| !l.starts_with("SCALARS"))
                .flat_map(str::split_whitespace)
                .map(|tok| tok.parse::<f64>().unwrap())
                .count();
            assert_eq!(numbers, grid.node_count());
        }
        // Spot-check ordering: the second value of u1 is node (i=1, j=0).
        let u1_block = blocks[1];
        let vals: Vec<f64> = u1_block
            .lines()
            .take_while(|l| !l.starts_with("SCALARS"))
            .flat_map(str::split_whitespace)
            .map(|tok| tok.parse::<f64>().unwrap())
            .collect();
        assert_eq!(vals[1], flow.u1[grid.idx(1, 0)]);
        assert_eq!(vals[grid.m1()], flow.u1[grid.idx(0, 1)]);
        let _ = fs::remove_dir_all(&dir);
    }
}
