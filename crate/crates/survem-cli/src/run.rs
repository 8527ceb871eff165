//! Experiment runner: builds the per-level mesh hierarchies, solves every
//! (order, level) pair, and writes convergence tables, regularity audits,
//! and log-log plots.

use crate::config::{ExperimentConfig, MeshFamily};
use crate::plot::{FitLine, PlotSeries, SvgPlot};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;
use survem::assembly::{solve_problem, solve_two_chart, ProblemData};
use survem::chart::{Chart, Domain};
use survem::mesh::{generate_triangulation, generate_voronoi_polymesh_graded, mesh_to_json, PolyMesh};
use survem::mms::{compute_errors, eoc, ManufacturedCase};

/// One line of `convergence.csv`, plus the grouping keys tests need.
#[derive(Debug, Clone)]
pub struct Row {
    pub test_case: u8,
    pub mesh_family: MeshFamily,
    pub k: usize,
    pub level: usize,
    pub h: f64,
    pub n_cells: usize,
    pub n_dofs: usize,
    pub err_l2: f64,
    pub err_h1: f64,
    pub eoc_l2: Option<f64>,
    pub eoc_h1: Option<f64>,
    pub cond_estimate: f64,
    pub runtime_ms: u128,
    pub config_hash: String,
    pub mesh_checksum: String,
    /// Mesh-set index within a level: test case 2 runs two fixed coarse
    /// partitions per boundary resolution, every other study has one.
    pub set: usize,
    /// Boundary-polyline resolution of the mesh behind this row.
    pub boundary_nodes: usize,
}

/// A failed pipeline stage; rendered as a structured report on stderr and
/// mapped to exit code 3.
#[derive(Debug, Clone)]
pub struct RunError {
    pub stage: &'static str,
    pub k: Option<usize>,
    pub level: Option<usize>,
    pub message: String,
}

impl RunError {
    fn new(stage: &'static str, message: impl Into<String>) -> Self {
        RunError { stage, k: None, level: None, message: message.into() }
    }

    fn at(stage: &'static str, k: usize, level: usize, message: impl Into<String>) -> Self {
        RunError { stage, k: Some(k), level: Some(level), message: message.into() }
    }

    /// Machine-readable one-line report.
    pub fn structured(&self) -> String {
        serde_json::json!({
            "error": {
                "stage": self.stage,
                "k": self.k,
                "level": self.level,
                "message": self.message,
            }
        })
        .to_string()
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed", self.stage)?;
        if let Some(k) = self.k {
            write!(f, " at order {k}")?;
        }
        if let Some(level) = self.level {
            write!(f, ", level {level}")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for RunError {}

fn solve_stage(e: &survem::Error) -> &'static str {
    match e {
        survem::Error::Solve(_) => "solve",
        _ => "assembly",
    }
}

/// Everything a finished run leaves behind.
pub struct RunOutput {
    pub rows: Vec<Row>,
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

struct MeshSlot {
    level: usize,
    set: usize,
    boundary_nodes: usize,
    mesh: PolyMesh,
    checksum: String,
}

fn slot_seed(seed: u64, level: usize, set: usize) -> u64 {
    seed ^ ((level as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        ^ ((set as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

/// Enough relaxation that the largest cell diameter tracks the nominal
/// resolution closely; level-to-level rates are computed from measured
/// diameters and suffer when the size distribution has a loose tail.
fn lloyd_for(n_cells: usize) -> u32 {
    if n_cells > 2000 {
        20
    } else {
        10
    }
}

fn checksum_mesh(mesh: &PolyMesh) -> String {
    let digest = Sha256::digest(mesh_to_json(mesh).as_bytes());
    let mut hex = String::with_capacity(16);
    for byte in digest.iter().take(8) {
        write!(hex, "{byte:02x}").unwrap();
    }
    hex
}

fn make_slot(
    cfg: &ExperimentConfig,
    domain: Domain,
    level: usize,
    set: usize,
    n_cells_target: usize,
    boundary_nodes: usize,
) -> Result<MeshSlot, RunError> {
    // On the quarter disk the metric coefficients steepen toward the arc on
    // the scale sqrt(r) - 1; Voronoi cells are locally shrunk there so the
    // per-cell error stays balanced with the interior.
    let grading: Option<Box<dyn Fn([f64; 2]) -> f64 + Sync>> =
        if matches!(cfg.test_case, 1 | 3) && cfg.mesh_family == MeshFamily::Poly {
            let width = (3.0 * (cfg.r.sqrt() - 1.0)).clamp(0.05, 0.6);
            Some(Box::new(move |p: [f64; 2]| {
                let dist = 1.0 - p[0].hypot(p[1]);
                0.5 + 0.5 * (dist / width).clamp(0.0, 1.0)
            }))
        } else {
            None
        };
    let mesh = match cfg.mesh_family {
        MeshFamily::Tri => generate_triangulation(domain, level as u32, boundary_nodes),
        MeshFamily::Poly => generate_voronoi_polymesh_graded(
            domain,
            n_cells_target,
            boundary_nodes,
            slot_seed(cfg.seed, level, set),
            lloyd_for(n_cells_target),
            grading.as_deref(),
        ),
    }
    .map_err(|e| RunError {
        stage: "mesh_generation",
        k: None,
        level: Some(level),
        message: e.to_string(),
    })?;
    let checksum = checksum_mesh(&mesh);
    Ok(MeshSlot { level, set, boundary_nodes, mesh, checksum })
}

/// Build every mesh of the study once; all orders share them.
fn build_meshes(cfg: &ExperimentConfig) -> Result<Vec<MeshSlot>, RunError> {
    let mut slots = Vec::new();
    match cfg.test_case {
        1 | 3 => {
            for level in 0..cfg.levels {
                // The polygonal family tracks the triangulation's cell count
                // so the two hierarchies are comparable level by level.
                let target = match cfg.mesh_family {
                    MeshFamily::Tri => 0,
                    MeshFamily::Poly => {
                        generate_triangulation(Domain::QuarterDisk, level as u32, cfg.boundary_nodes)
                            .map_err(|e| RunError {
                                stage: "mesh_generation",
                                k: None,
                                level: Some(level),
                                message: e.to_string(),
                            })?
                            .n_cells()
                    }
                };
                slots.push(make_slot(
                    cfg,
                    Domain::QuarterDisk,
                    level,
                    0,
                    target,
                    cfg.boundary_nodes,
                )?);
            }
        }
        2 => {
            for level in 0..cfg.levels {
                let boundary_nodes = cfg.boundary_nodes << level;
                for (set, n_cells) in [25usize, 100].into_iter().enumerate() {
                    slots.push(make_slot(
                        cfg,
                        Domain::QuarterDisk,
                        level,
                        set,
                        n_cells,
                        boundary_nodes,
                    )?);
                }
            }
        }
        4 => {
            for level in 0..cfg.levels {
                let n_cells = 100usize << (2 * level);
                slots.push(make_slot(cfg, Domain::UnitDisk, level, 0, n_cells, cfg.boundary_nodes)?);
            }
        }
        other => {
            return Err(RunError::new(
                "configuration",
                format!("unknown test case {other}"),
            ))
        }
    }
    Ok(slots)
}

enum ProblemSetup {
    Single(ManufacturedCase),
    Sphere { north: ManufacturedCase, south: ManufacturedCase },
}

fn build_setup(cfg: &ExperimentConfig) -> Result<ProblemSetup, RunError> {
    match cfg.test_case {
        4 => Ok(ProblemSetup::Sphere {
            north: ManufacturedCase::new(Chart::stereo_north(), [0.0, 0.0], 0.0),
            south: ManufacturedCase::new(Chart::stereo_south(), [0.0, 0.0], 0.0),
        }),
        _ => {
            let chart = Chart::monge_trig(cfg.r, cfg.a, cfg.freq)
                .map_err(|e| RunError::new("configuration", e.to_string()))?;
            Ok(ProblemSetup::Single(ManufacturedCase::new(chart, cfg.w_hat, cfg.gamma)))
        }
    }
}

struct Solved {
    k: usize,
    slot: usize,
    err_l2: f64,
    err_h1: f64,
    n_dofs: usize,
    cond_estimate: f64,
    runtime_ms: u128,
}

fn solve_single(
    case: &ManufacturedCase,
    slot: &MeshSlot,
    k: usize,
    cfg: &ExperimentConfig,
) -> Result<(f64, f64, usize, f64), RunError> {
    let forcing = |s: [f64; 2]| case.forcing(s);
    let boundary = |s: [f64; 2]| case.solution(s);
    let prob = ProblemData {
        chart: &case.chart,
        w_hat: case.w_hat,
        gamma: case.gamma,
        forcing: &forcing,
        boundary: &boundary,
    };
    let sol = solve_problem(&slot.mesh, k, cfg.stab_kind.resolve(k), &prob)
        .map_err(|e| RunError::at(solve_stage(&e), k, slot.level, e.to_string()))?;
    let (err_l2, err_h1) = compute_errors(&sol, case, Default::default())
        .map_err(|e| RunError::at("error_norms", k, slot.level, e.to_string()))?;
    Ok((err_l2, err_h1, sol.uh.len(), sol.report.cond_estimate))
}

fn solve_task(
    setup: &ProblemSetup,
    slots: &[MeshSlot],
    slot_idx: usize,
    k: usize,
    cfg: &ExperimentConfig,
) -> Result<Solved, RunError> {
    let slot = &slots[slot_idx];
    let started = Instant::now();
    let (err_l2, err_h1, n_dofs, cond_estimate) = match setup {
        ProblemSetup::Single(case) => solve_single(case, slot, k, cfg)?,
        ProblemSetup::Sphere { north, south } => {
            let fn_ = |s: [f64; 2]| north.forcing(s);
            let bn = |s: [f64; 2]| north.solution(s);
            let fs = |s: [f64; 2]| south.forcing(s);
            let bs = |s: [f64; 2]| south.solution(s);
            let prob_n = ProblemData {
                chart: &north.chart,
                w_hat: [0.0, 0.0],
                gamma: 0.0,
                forcing: &fn_,
                boundary: &bn,
            };
            let prob_s = ProblemData {
                chart: &south.chart,
                w_hat: [0.0, 0.0],
                gamma: 0.0,
                forcing: &fs,
                boundary: &bs,
            };
            let (sol_n, sol_s) = solve_two_chart(
                &slot.mesh,
                &slot.mesh,
                k,
                cfg.stab_kind.resolve(k),
                &prob_n,
                &prob_s,
            )
            .map_err(|e| RunError::at(solve_stage(&e), k, slot.level, e.to_string()))?;
            let (l2_n, h1_n) = compute_errors(&sol_n, north, Default::default())
                .map_err(|e| RunError::at("error_norms", k, slot.level, e.to_string()))?;
            let (l2_s, h1_s) = compute_errors(&sol_s, south, Default::default())
                .map_err(|e| RunError::at("error_norms", k, slot.level, e.to_string()))?;
            (
                l2_n.hypot(l2_s),
                h1_n.hypot(h1_s),
                sol_n.uh.len() + sol_s.uh.len(),
                sol_n.report.cond_estimate.max(sol_s.report.cond_estimate),
            )
        }
    };
    Ok(Solved {
        k,
        slot: slot_idx,
        err_l2,
        err_h1,
        n_dofs,
        cond_estimate,
        runtime_ms: started.elapsed().as_millis(),
    })
}

/// Run the configured study end to end and write its artifacts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let config_hash = cfg.config_hash();
    fs::create_dir_all(&cfg.output).map_err(|e| {
        RunError::new("output", format!("cannot create {}: {e}", cfg.output.display()))
    })?;

    let slots = build_meshes(cfg)?;
    let setup = build_setup(cfg)?;

    let mut warnings = Vec::new();
    for slot in &slots {
        let report = slot.mesh.regularity_report();
        if report.rho_estimate < 0.05 {
            warnings.push(format!(
                "level {} set {}: shape-regularity estimate {:.4} below 0.05",
                slot.level, slot.set, report.rho_estimate
            ));
        }
    }

    let tasks: Vec<(usize, usize)> = cfg
        .orders
        .iter()
        .flat_map(|&k| (0..slots.len()).map(move |slot| (k, slot)))
        .collect();
    let solved: Vec<Solved> = if cfg.parallel {
        tasks
            .par_iter()
            .map(|&(k, slot)| solve_task(&setup, &slots, slot, k, cfg))
            .collect::<Result<_, _>>()?
    } else {
        tasks
            .iter()
            .map(|&(k, slot)| solve_task(&setup, &slots, slot, k, cfg))
            .collect::<Result<_, _>>()?
    };

    let mut rows = assemble_rows(cfg, &slots, solved, &config_hash);
    rows.sort_by_key(|r| (r.k, r.set, r.level));

    let mut files = Vec::new();
    let conv_path = cfg.output.join("convergence.csv");
    fs::write(&conv_path, render_convergence_csv(&rows))
        .map_err(|e| RunError::new("output", format!("cannot write convergence.csv: {e}")))?;
    files.push(conv_path);

    let reg_path = cfg.output.join("regularity.csv");
    fs::write(&reg_path, render_regularity_csv(cfg, &slots))
        .map_err(|e| RunError::new("output", format!("cannot write regularity.csv: {e}")))?;
    files.push(reg_path);

    for (norm, filename) in [(ErrKind::L2, "plot_l2.svg"), (ErrKind::H1, "plot_h1.svg")] {
        let path = cfg.output.join(filename);
        fs::write(&path, render_plot(cfg, &rows, norm))
            .map_err(|e| RunError::new("output", format!("cannot write {filename}: {e}")))?;
        files.push(path);
    }

    Ok(RunOutput { rows, files, warnings })
}

fn assemble_rows(
    cfg: &ExperimentConfig,
    slots: &[MeshSlot],
    mut solved: Vec<Solved>,
    config_hash: &str,
) -> Vec<Row> {
    solved.sort_by_key(|s| (s.k, slots[s.slot].set, slots[s.slot].level));
    let mut rows: Vec<Row> = Vec::with_capacity(solved.len());
    for s in solved {
        let slot = &slots[s.slot];
        // Rates relate consecutive levels within one (order, mesh-set)
        // group; test case 2 refines the boundary only, so rates against a
        // nearly constant h are not meaningful there.
        let (eoc_l2, eoc_h1) = match rows.last() {
            Some(prev)
                if cfg.test_case != 2
                    && prev.k == s.k
                    && prev.set == slot.set
                    && prev.level + 1 == slot.level =>
            {
                (
                    Some(eoc(prev.err_l2, s.err_l2, prev.h, slot.mesh.h())),
                    Some(eoc(prev.err_h1, s.err_h1, prev.h, slot.mesh.h())),
                )
            }
            _ => (None, None),
        };
        rows.push(Row {
            test_case: cfg.test_case,
            mesh_family: cfg.mesh_family,
            k: s.k,
            level: slot.level,
            h: slot.mesh.h(),
            n_cells: slot.mesh.n_cells() * if cfg.test_case == 4 { 2 } else { 1 },
            n_dofs: s.n_dofs,
            err_l2: s.err_l2,
            err_h1: s.err_h1,
            eoc_l2,
            eoc_h1,
            cond_estimate: s.cond_estimate,
            runtime_ms: s.runtime_ms,
            config_hash: config_hash.to_string(),
            mesh_checksum: slot.checksum.clone(),
            set: slot.set,
            boundary_nodes: slot.boundary_nodes,
        });
    }
    rows
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.4}"))
}

fn render_convergence_csv(rows: &[Row]) -> String {
    let mut out = String::from(
        "test_case,mesh_family,k,level,h,n_cells,n_dofs,err_l2,err_h1,eoc_l2,eoc_h1,\
         cond_estimate,runtime_ms,config_hash,mesh_checksum\n",
    );
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:e},{},{},{:e},{:e},{},{},{:.6e},{},{},{}",
            r.test_case,
            r.mesh_family,
            r.k,
            r.level,
            r.h,
            r.n_cells,
            r.n_dofs,
            r.err_l2,
            r.err_h1,
            fmt_opt(r.eoc_l2),
            fmt_opt(r.eoc_h1),
            r.cond_estimate,
            r.runtime_ms,
            r.config_hash,
            r.mesh_checksum,
        )
        .unwrap();
    }
    out
}

fn render_regularity_csv(cfg: &ExperimentConfig, slots: &[MeshSlot]) -> String {
    let mut out = String::from(
        "test_case,mesh_family,level,set,n_vertices,n_edges,n_cells,h,rho_estimate,\
         edge_ratio,min_edge_over_hp,n_non_star_cells,mesh_checksum\n",
    );
    for slot in slots {
        let rep = slot.mesh.regularity_report();
        let non_star = rep.star_shaped_flags.iter().filter(|&&ok| !ok).count();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{:e},{:.6},{:.6},{:.6},{},{}",
            cfg.test_case,
            cfg.mesh_family,
            slot.level,
            slot.set,
            slot.mesh.n_vertices(),
            slot.mesh.n_edges(),
            slot.mesh.n_cells(),
            slot.mesh.h(),
            rep.rho_estimate,
            rep.edge_ratio,
            rep.min_edge_over_hp,
            non_star,
            slot.checksum,
        )
        .unwrap();
    }
    out
}

#[derive(Clone, Copy)]
enum ErrKind {
    L2,
    H1,
}

impl ErrKind {
    fn pick(self, r: &Row) -> f64 {
        match self {
            ErrKind::L2 => r.err_l2,
            ErrKind::H1 => r.err_h1,
        }
    }

    fn label(self) -> &'static str {
        match self {
            ErrKind::L2 => "L2 error",
            ErrKind::H1 => "broken H1 error",
        }
    }

    /// Expected rate for the reference slope marker.
    fn optimal_rate(self, k: usize) -> f64 {
        match self {
            ErrKind::L2 => (k + 1) as f64,
            ErrKind::H1 => k as f64,
        }
    }
}

fn render_plot(cfg: &ExperimentConfig, rows: &[Row], kind: ErrKind) -> String {
    let boundary_axis = cfg.test_case == 2;
    let mut series: Vec<PlotSeries> = Vec::new();
    let mut ref_slopes: Vec<f64> = Vec::new();
    for &k in &cfg.orders {
        let sets: Vec<usize> = if cfg.test_case == 2 { vec![0, 1] } else { vec![0] };
        for set in sets {
            let group: Vec<&Row> = rows.iter().filter(|r| r.k == k && r.set == set).collect();
            if group.is_empty() {
                continue;
            }
            let points: Vec<(f64, f64)> = group
                .iter()
                .map(|r| {
                    let x = if boundary_axis { r.boundary_nodes as f64 } else { r.h };
                    (x, kind.pick(r))
                })
                .collect();
            let label = if cfg.test_case == 2 {
                format!("k={k}, {} cells", group[0].n_cells)
            } else {
                format!("k={k}")
            };
            let fit = if boundary_axis {
                None
            } else {
                fit_line(&points, cfg.fit_window)
            };
            series.push(PlotSeries { label, points, fit });
        }
        if !boundary_axis {
            ref_slopes.push(kind.optimal_rate(k));
        }
    }
    let x_label = if boundary_axis { "boundary nodes" } else { "mesh size h" };
    let title = format!(
        "Test case {}: {} vs {} ({} meshes)",
        cfg.test_case,
        kind.label(),
        x_label,
        cfg.mesh_family
    );
    SvgPlot {
        title: &title,
        x_label,
        y_label: kind.label(),
        series: &series,
        reference_slopes: &ref_slopes,
    }
    .render()
}

/// Least-squares line in log10-log10 space over the last `window` points
/// (0 = all points).
fn fit_line(points: &[(f64, f64)], window: usize) -> Option<FitLine> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let take = if window == 0 { n } else { window.clamp(2, n) };
    let tail = &points[n - take..];
    let logs: Vec<(f64, f64)> = tail
        .iter()
        .filter(|&&(x, y)| x > 0.0 && y > 0.0)
        .map(|&(x, y)| (x.log10(), y.log10()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let m = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let x_min = logs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x_max = logs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    Some(FitLine {
        slope,
        intercept: mean_y - slope * mean_x,
        log_x_range: (x_min, x_max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_seeds_differ_across_levels_and_sets() {
        let mut seen = std::collections::HashSet::new();
        for level in 0..6 {
            for set in 0..2 {
                assert!(seen.insert(slot_seed(42, level, set)));
            }
        }
    }

    #[test]
    fn fit_lines_recover_exact_power_laws() {
        let points: Vec<(f64, f64)> = (0..5)
            .map(|i| {
                let h = 0.5f64.powi(i);
                (h, 3.0 * h.powi(3))
            })
            .collect();
        let fit = fit_line(&points, 0).unwrap();
        assert!((fit.slope - 3.0).abs() < 1e-12);
        let tail = fit_line(&points, 2).unwrap();
        assert!((tail.slope - 3.0).abs() < 1e-12);
        assert!(fit_line(&points[..1], 0).is_none());
    }

    #[test]
    fn structured_errors_are_one_json_line() {
        let err = RunError::at("solve", 3, 2, "boom");
        let line = err.structured();
        let parsed: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(parsed["error"]["stage"], "solve");
        assert_eq!(parsed["error"]["k"], 3);
        assert_eq!(parsed["error"]["level"], 2);
        assert!(!line.contains('\n'));
    }
}
