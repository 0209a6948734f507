//! Task execution. Every number written to a report comes from a library
//! call; the driver only samples inputs, formats outputs, and applies the
//! pass thresholds pinned below.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use finsler::berwald::{is_berwald, ricci_identity_check, szabo_check};
use finsler::calculus::{verify_structure_conditions, VolumeForm};
use finsler::chart::{
    build_chart, h1_norm, rescale_volume, rescaling_experiment, weak_form_pairing, DELTA_DET,
};
use finsler::grid::Grid;
use finsler::linalg;
use finsler::metric::{lattice_samples, MetricSpec};
use finsler::spray::riemann_curvature;
use finsler::verify::core_identity_suite;
use finsler::Error;

use crate::report::{csv, Doc, Status};
use crate::scenario::TaskDto;

/// Half-width of the base-point sampling box for identity, structure,
/// curvature and Berwald sampling.
const SAMPLE_HALF_WIDTH: f64 = 0.5;
/// Indicatrix quadrature nodes for the averaged-metric checks.
const AVERAGING_NODES: usize = 48;
/// Berwald gate tolerance for the szabo and ricci-identity tasks.
const BERWALD_GATE_TOL: f64 = 1e-6;
/// Pass threshold for the parallelism deviation of the averaged metric.
const SZABO_TOL: f64 = 1e-5;
/// Pass threshold for the three-way Ricci agreement.
const RICCI_TOL: f64 = 1e-6;
/// Weak-form pairing threshold, relative to the test function's H1 norm.
const WEAK_FORM_TOL: f64 = 1e-6;
const WEAK_FORM_TRIALS: usize = 20;
/// Deviations below this are quadrature noise; a rescaling table is
/// still monotone if consecutive entries both sit under the floor.
const RESCALING_NOISE_FLOOR: f64 = 1e-9;

pub struct Ctx {
    pub spec: MetricSpec,
    pub vol: VolumeForm,
    pub seed: u64,
}

pub struct TaskOutcome {
    pub status: Status,
    /// Report body after the `task` / `status` head lines.
    pub body: String,
    /// `(file suffix, csv text)` table payloads.
    pub tables: Vec<(String, String)>,
}

fn sample_box(m: usize) -> (Vec<f64>, Vec<f64>) {
    (vec![-SAMPLE_HALF_WIDTH; m], vec![SAMPLE_HALF_WIDTH; m])
}

fn grid_n(h: f64) -> usize {
    (2.0 / h).round() as usize
}

pub fn run_task(task: &TaskDto, ctx: &Ctx) -> finsler::Result<TaskOutcome> {
    match task {
        TaskDto::VerifyCore { samples } => verify_core(ctx, *samples),
        TaskDto::StructureConditions { samples } => structure_conditions(ctx, *samples),
        TaskDto::HarmonicChart { eps, h } => harmonic_chart(ctx, *eps, *h),
        TaskDto::Rescaling { eps_list, h } => rescaling(ctx, eps_list, *h),
        TaskDto::Curvature { samples } => curvature(ctx, *samples),
        TaskDto::Berwald { n, tol } => berwald(ctx, *n, *tol),
        TaskDto::Szabo => szabo(ctx),
        TaskDto::RicciIdentity => ricci_identity(ctx),
    }
}

fn verify_core(ctx: &Ctx, samples: usize) -> finsler::Result<TaskOutcome> {
    let (lo, hi) = sample_box(ctx.spec.dim());
    let report = core_identity_suite(&ctx.spec, &lo, &hi, samples, ctx.seed)?;
    let mut doc = Doc::new();
    doc.usize("samples", report.samples);
    doc.float("min_g_eigenvalue", report.min_g_eigenvalue);
    for check in &report.checks {
        doc.section(&format!("checks.{}", check.name));
        doc.float("max_error", check.max_error);
        doc.float("tolerance", check.tolerance);
        doc.bool("passed", check.passed());
        doc.floats("witness_x", &check.witness_x);
        doc.floats("witness_v", &check.witness_v);
    }
    let status = if report.passed { Status::Pass } else { Status::Fail };
    Ok(TaskOutcome { status, body: doc.render(), tables: Vec::new() })
}

fn structure_conditions(ctx: &Ctx, samples: usize) -> finsler::Result<TaskOutcome> {
    let (lo, hi) = sample_box(ctx.spec.dim());
    let report = verify_structure_conditions(&ctx.spec, &ctx.vol, &lo, &hi, samples, ctx.seed)?;
    let mut doc = Doc::new();
    doc.usize("samples", report.samples);
    doc.float("constant", report.constant);
    doc.float("growth_value", report.growth_value);
    doc.float("growth_x", report.growth_x);
    doc.float("growth_omega", report.growth_omega);
    doc.float("ellipticity", report.ellipticity);
    doc.float("monotonicity", report.monotonicity);
    doc.usize("violations", report.violations.len());
    for (k, v) in report.violations.iter().take(5).enumerate() {
        doc.section(&format!("violation.{k}"));
        doc.str("condition", v.condition);
        doc.float("value", v.value);
        doc.floats("x", &v.x);
        doc.floats("omega", &v.omega);
        if let Some(w2) = &v.omega2 {
            doc.floats("omega2", w2);
        }
    }
    let status = if report.violations.is_empty() { Status::Pass } else { Status::Fail };
    Ok(TaskOutcome { status, body: doc.render(), tables: Vec::new() })
}

fn harmonic_chart(ctx: &Ctx, eps: f64, h: f64) -> finsler::Result<TaskOutcome> {
    let (spec, vol) = if eps == 1.0 {
        (ctx.spec.clone(), ctx.vol.clone())
    } else {
        (
            MetricSpec::x_scaled(ctx.spec.clone(), eps),
            rescale_volume(&ctx.vol, eps)?,
        )
    };
    let grid = Arc::new(Grid::disk(1.0, grid_n(h))?);
    let chart = build_chart(&spec, &vol, grid.clone(), DELTA_DET)?;

    let mut identity_deviation = 0.0f64;
    for (node, p) in grid.nodes.iter().enumerate() {
        for (i, field) in chart.fields.iter().enumerate() {
            identity_deviation = identity_deviation.max((field.values[node] - p[i]).abs());
        }
    }
    let j = chart.center_jacobian()?;
    let center_deviation = linalg::spectral_norm(&(j - DMatrix::identity(2, 2)));
    let det_center = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)];

    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut weak_form_max = 0.0f64;
    for field in &chart.fields {
        for _ in 0..WEAK_FORM_TRIALS {
            let eta: Vec<f64> =
                (0..grid.interior.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let pairing = weak_form_pairing(&spec, &vol, field, &eta)?;
            let norm = h1_norm(&grid, &eta)?;
            weak_form_max = weak_form_max.max(pairing.abs() / norm);
        }
    }

    let mut doc = Doc::new();
    doc.float("eps", eps);
    doc.float("h", 2.0 / grid_n(h) as f64);
    doc.usize("nodes", grid.node_count());
    doc.float("certified_radius", chart.certified_radius);
    doc.float("delta_det", chart.delta_det);
    doc.float("det_center", det_center);
    doc.float("center_deviation", center_deviation);
    doc.float("identity_deviation", identity_deviation);
    doc.float("weak_form_max_ratio", weak_form_max);
    doc.usize("weak_form_trials", WEAK_FORM_TRIALS);
    let mut tables = Vec::new();
    for (i, (field, sol)) in chart.fields.iter().zip(&chart.solutions).enumerate() {
        doc.section(&format!("field.u{}", i + 1));
        doc.float("energy", sol.energy);
        doc.float("residual", sol.residual);
        doc.usize("ncg_iterations", sol.ncg_iterations);
        doc.usize("newton_iterations", sol.newton_iterations);
        doc.usize("degenerate_points", sol.degenerate_points);
        let rows: Vec<Vec<f64>> = grid
            .nodes
            .iter()
            .zip(&field.values)
            .map(|(p, v)| vec![p[0], p[1], *v])
            .collect();
        tables.push((format!("u{}", i + 1), csv(&["x", "y", "value"], &rows)));
    }
    let status = if weak_form_max <= WEAK_FORM_TOL { Status::Pass } else { Status::Fail };
    Ok(TaskOutcome { status, body: doc.render(), tables })
}

fn rescaling(ctx: &Ctx, eps_list: &[f64], h: f64) -> finsler::Result<TaskOutcome> {
    let table = rescaling_experiment(&ctx.spec, &ctx.vol, eps_list, grid_n(h))?;
    let monotone = table.rows.windows(2).all(|w| {
        w[1].deviation < w[0].deviation
            || (w[0].deviation < RESCALING_NOISE_FLOOR && w[1].deviation < RESCALING_NOISE_FLOOR)
    });
    let mut doc = Doc::new();
    doc.float("h", 2.0 / grid_n(h) as f64);
    doc.bool("monotone_decreasing", monotone);
    match table.slope {
        Some(s) => doc.float("loglog_slope", s),
        None => doc.str("loglog_slope", "unresolved"),
    }
    let mut rows = Vec::new();
    for (k, row) in table.rows.iter().enumerate() {
        doc.section(&format!("row.{k}"));
        doc.float("eps", row.eps);
        doc.float("deviation", row.deviation);
        doc.float("center_deviation", row.center_deviation);
        doc.float("det_center", row.det_center);
        rows.push(vec![row.eps, row.deviation]);
    }
    let tables = vec![("table".to_string(), csv(&["eps", "deviation"], &rows))];
    let status = if monotone { Status::Pass } else { Status::Fail };
    Ok(TaskOutcome { status, body: doc.render(), tables })
}

fn curvature(ctx: &Ctx, samples: usize) -> finsler::Result<TaskOutcome> {
    let m = ctx.spec.dim();
    let (lo, hi) = sample_box(m);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut rows = Vec::with_capacity(samples);
    let mut max_norm = 0.0f64;
    let mut ratio_min = f64::INFINITY;
    let mut ratio_max = f64::NEG_INFINITY;
    for _ in 0..samples {
        let x: Vec<f64> = (0..m).map(|i| rng.gen_range(lo[i]..hi[i])).collect();
        let mut y: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if linalg::norm(&y) < 0.1 {
            y[0] += 1.0;
        }
        let data = riemann_curvature(&ctx.spec, &x, &y)?;
        let norm = data.r.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let f2 = ctx.spec.f2(&x, &y);
        let ratio = data.ricci / f2;
        max_norm = max_norm.max(norm);
        ratio_min = ratio_min.min(ratio);
        ratio_max = ratio_max.max(ratio);
        let mut row = x.clone();
        row.extend_from_slice(&y);
        row.extend_from_slice(&[norm, data.ricci, f2, ratio]);
        rows.push(row);
    }
    let mut doc = Doc::new();
    doc.usize("samples", samples);
    doc.float("max_riemann_entry", max_norm);
    doc.float("ricci_over_f2_min", ratio_min);
    doc.float("ricci_over_f2_max", ratio_max);
    let mut header: Vec<String> = (1..=m).map(|i| format!("x{i}")).collect();
    header.extend((1..=m).map(|i| format!("y{i}")));
    header.extend(["riemann_max_abs", "ricci", "f_squared", "ricci_over_f2"].map(String::from));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let tables = vec![("table".to_string(), csv(&header_refs, &rows))];
    Ok(TaskOutcome { status: Status::Pass, body: doc.render(), tables })
}

fn berwald_points(m: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let (lo, hi) = sample_box(m);
    let mut xs = lattice_samples(&lo, &hi, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        xs.push((0..m).map(|i| rng.gen_range(lo[i]..hi[i])).collect());
    }
    xs
}

fn berwald(ctx: &Ctx, n: usize, tol: f64) -> finsler::Result<TaskOutcome> {
    let xs = berwald_points(ctx.spec.dim(), n, ctx.seed);
    let report = is_berwald(&ctx.spec, &xs, tol)?;
    let mut doc = Doc::new();
    doc.usize("points", xs.len());
    doc.bool("berwald", report.berwald);
    doc.float("max_residual", report.max_residual);
    doc.float("tolerance", report.tol);
    doc.floats("witness_x", &report.witness.0);
    doc.floats("witness_y", &report.witness.1);
    Ok(TaskOutcome { status: Status::Pass, body: doc.render(), tables: Vec::new() })
}

fn szabo(ctx: &Ctx) -> finsler::Result<TaskOutcome> {
    let (lo, hi) = sample_box(ctx.spec.dim());
    let xs = lattice_samples(&lo, &hi, 3);
    let mut doc = Doc::new();
    doc.usize("points", xs.len());
    doc.usize("nodes", AVERAGING_NODES);
    match szabo_check(&ctx.spec, AVERAGING_NODES, &xs, BERWALD_GATE_TOL) {
        Ok(report) => {
            doc.float("max_deviation", report.max_deviation);
            doc.float("tolerance", SZABO_TOL);
            doc.float("berwald_residual", report.berwald_residual);
            doc.floats("witness_x", &report.witness.0);
            let status = if report.max_deviation <= SZABO_TOL {
                Status::Pass
            } else {
                Status::Fail
            };
            Ok(TaskOutcome { status, body: doc.render(), tables: Vec::new() })
        }
        Err(Error::NotBerwald { residual, tol }) => {
            doc.str("reason", "metric is not Berwald; averaged-metric parallelism undefined");
            doc.float("berwald_residual", residual);
            doc.float("berwald_tolerance", tol);
            Ok(TaskOutcome { status: Status::Degenerate, body: doc.render(), tables: Vec::new() })
        }
        Err(e) => Err(e),
    }
}

fn ricci_identity(ctx: &Ctx) -> finsler::Result<TaskOutcome> {
    let (lo, hi) = sample_box(ctx.spec.dim());
    let xs = lattice_samples(&lo, &hi, 3);
    let mut doc = Doc::new();
    doc.usize("points", xs.len());
    doc.usize("nodes", AVERAGING_NODES);
    match ricci_identity_check(&ctx.spec, AVERAGING_NODES, &xs, BERWALD_GATE_TOL) {
        Ok(report) => {
            doc.float("max_deviation", report.max_deviation);
            doc.float("tolerance", RICCI_TOL);
            doc.float("spray_vs_chern", report.spray_vs_chern);
            doc.float("spray_vs_averaged", report.spray_vs_averaged);
            doc.float("chern_vs_averaged", report.chern_vs_averaged);
            doc.float("y_independence", report.y_independence);
            let status = if report.max_deviation <= RICCI_TOL {
                Status::Pass
            } else {
                Status::Fail
            };
            Ok(TaskOutcome { status, body: doc.render(), tables: Vec::new() })
        }
        Err(Error::NotBerwald { residual, tol }) => {
            doc.str("reason", "metric is not Berwald; the Ricci comparison needs a linear connection");
            doc.float("berwald_residual", residual);
            doc.float("berwald_tolerance", tol);
            Ok(TaskOutcome { status: Status::Degenerate, body: doc.render(), tables: Vec::new() })
        }
        Err(e) => Err(e),
    }
}
