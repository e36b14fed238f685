//! One function per subcommand. Each writes its tables into the run
//! directory and returns an error only after everything it could compute
//! has been written.

mod balance;
mod spectrum;
mod verify;

pub use balance::balance;
pub use spectrum::spectrum;
pub use verify::verify;

use std::time::Instant;

use qsol_core::math::loglog_slope;
use qsol_core::quadrature::{GridOptions, QuadratureGrid};
use qsol_core::soliton::{classical_functional, normalized_f_p, xi_asymptotics};
use qsol_core::toric::lattice_points;

use crate::artifacts::{num, RunDir, Table};
use crate::config::RunConfig;
use crate::error::CliError;

/// Directions `η` of the Riemann-sum table.
pub const RIEMANN_DIRECTIONS: [[f64; 2]; 2] = [[0.5, 0.25], [-0.3, 0.7]];

pub(crate) fn grid_options(cfg: &RunConfig) -> GridOptions {
    GridOptions {
        tol: cfg.quad_tol,
        max_order: cfg.quad_max_order,
        ..GridOptions::default()
    }
}

pub(crate) fn numeric(e: impl ToString) -> CliError {
    CliError::Numeric(e.to_string())
}

pub(crate) fn slope_text(s: Option<f64>) -> String {
    s.map(num).unwrap_or_else(|| "none".into())
}

/// Coordinate names `prefix_1, …, prefix_n`.
pub(crate) fn coord_columns(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i}")).collect()
}

/// Indices of grid nodes whose `e^{-φ} dx` weight is within `e^{-40}` of the largest.
pub(crate) fn mass_window(grid: &QuadratureGrid, phi_values: &[f64]) -> Vec<usize> {
    let logw: Vec<f64> = phi_values
        .iter()
        .zip(grid.log_weights())
        .map(|(v, w)| w - v)
        .collect();
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..logw.len()).filter(|&i| logw[i] >= top - 40.0).collect()
}

/// Combines per-level failures into one numeric error.
pub(crate) fn failures_to_result(failures: Vec<String>) -> Result<(), CliError> {
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(failures.join("; ")))
    }
}

/// Lattice points of `pP` for every configured level.
pub fn basis(cfg: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let poly = cfg.polytope();
    let n = poly.dim();
    let mut header = vec!["p".to_string(), "index".to_string()];
    header.extend(coord_columns("a", n));
    let mut table = Table::new(&header);
    let mut counts = Table::new(&["p", "count"]);
    for &p in &cfg.levels {
        let basis = lattice_points(&poly, p).map_err(numeric)?;
        for i in 0..basis.len() {
            let mut row = vec![p.to_string(), i.to_string()];
            row.extend(basis.point(i).iter().map(|a| a.to_string()));
            table.push(row);
        }
        counts.push(vec![p.to_string(), basis.len().to_string()]);
        log::info!("{} p={p}: {} sections", poly.name(), basis.len());
    }
    run.write("basis.csv", &table)?;
    run.write("basis_counts.csv", &counts)
}

/// Soliton fields `ξ_p`, their distance to `ξ_∞`, and Riemann sums of `F`.
pub fn xi(cfg: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let poly = cfg.polytope();
    let n = poly.dim();
    let started = Instant::now();
    let asym = xi_asymptotics(&poly, &cfg.levels, cfg.solver_tol).map_err(numeric)?;
    let mut header = vec!["p".to_string()];
    header.extend(coord_columns("xi", n));
    header.push("gap".into());
    let mut table = Table::new(&header);
    let mut failures = Vec::new();
    for row in &asym.rows {
        match &row.outcome {
            Ok((xi, gap)) => {
                let mut r = vec![row.level.to_string()];
                r.extend(xi.as_slice().iter().map(|v| num(*v)));
                r.push(num(*gap));
                table.push(r);
            }
            Err(e) => failures.push(format!("xi at p={}: {e}", row.level)),
        }
    }
    let limit: Vec<String> = asym
        .xi_infinity
        .as_slice()
        .iter()
        .map(|v| num(*v))
        .collect();
    table
        .footer
        .push(format!("xi_infinity = {}", limit.join(" ")));
    table
        .footer
        .push(format!("slope = {}", slope_text(asym.slope)));
    run.write("xi.csv", &table)?;
    run.stage(
        "xi",
        started,
        failures_to_result(failures.clone()).map_err(|e| e.to_string()),
    );

    let started = Instant::now();
    let mut riemann = Table::new(&["p", "eta", "riemann_sum", "integral", "gap"]);
    let mut gaps: Vec<Vec<(f64, f64)>> = vec![Vec::new(); RIEMANN_DIRECTIONS.len()];
    for &p in &cfg.levels {
        let basis = lattice_points(&poly, p).map_err(numeric)?;
        for (k, eta) in RIEMANN_DIRECTIONS.iter().enumerate() {
            let eta = &eta[..n];
            let exact = classical_functional(&poly, eta).map_err(numeric)?;
            let sum = normalized_f_p(&basis, eta);
            let gap = (sum - exact).abs();
            riemann.push(vec![
                p.to_string(),
                (k + 1).to_string(),
                num(sum),
                num(exact),
                num(gap),
            ]);
            gaps[k].push((p as f64, gap));
        }
    }
    for (k, g) in gaps.iter().enumerate() {
        let (ps, ys): (Vec<f64>, Vec<f64>) = g.iter().copied().unzip();
        riemann.footer.push(format!(
            "slope eta={} = {}",
            k + 1,
            slope_text(loglog_slope(&ps, &ys))
        ));
    }
    run.write("riemann.csv", &riemann)?;
    run.stage("riemann", started, Ok(()));
    failures_to_result(failures)
}
