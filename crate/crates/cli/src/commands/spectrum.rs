use std::sync::Arc;
use std::time::Instant;

use qsol_core::math::loglog_slope;
use qsol_core::quadrature::build_grid;
use qsol_core::quantization::{bergman_leading_density, gram, rawnsley, Potential};
use qsol_core::spectral::{gap_report, GapMetric, GapOptions};
use qsol_core::toric::{lattice_points, ReflexivePolytope};

use super::{coord_columns, failures_to_result, grid_options, mass_window, numeric, slope_text};
use crate::artifacts::{num, RunDir, Table};
use crate::config::RunConfig;
use crate::error::CliError;

/// `sup |p⁻¹ρ - ω/dν|` for the Gram product of `φ`, over nodes carrying `dν` mass.
fn bergman_defect(
    cfg: &RunConfig,
    poly: &ReflexivePolytope,
    phi: &Potential,
    level: u32,
) -> Result<f64, CliError> {
    let basis = Arc::new(lattice_points(poly, level).map_err(numeric)?);
    let grid = build_grid(phi, &basis, &grid_options(cfg)).map_err(numeric)?;
    let h = gram(phi, &basis, &grid).map_err(numeric)?;
    let values = phi.values_on(&grid);
    let p = level as f64;
    Ok(mass_window(&grid, &values)
        .into_iter()
        .map(|i| {
            let x = grid.point(i);
            (rawnsley(&h, phi, x) / p - bergman_leading_density(phi, x)).abs()
        })
        .fold(0.0, f64::max))
}

/// Channel spectra, Galerkin eigenvalues and (for the reference metric)
/// Bergman density defects.
pub fn spectrum(cfg: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let poly = cfg.polytope();
    let n = poly.dim();
    let opts = GapOptions {
        policy: cfg.spectrum_xi,
        metric: cfg.spectrum_metric,
        count: cfg.spectrum_count,
        grid: grid_options(cfg),
        flow_tolerance: cfg.flow_tol,
        solver_tolerance: cfg.solver_tol,
        galerkin_degree: cfg.spectrum_degree,
        ..GapOptions::default()
    };
    let started = Instant::now();
    let report = gap_report(&poly, &cfg.levels, &opts);
    let mut failures: Vec<String> = report
        .failures
        .iter()
        .map(|(p, e)| format!("spectrum at p={p}: {e}"))
        .collect();

    let mut table = Table::new(&["p", "k", "gamma", "lambda", "defect"]);
    let mut levels_header = vec!["p".to_string()];
    levels_header.extend(coord_columns("xi", n));
    levels_header.extend(
        [
            "unitality_defect",
            "symmetry_defect",
            "galerkin_degree",
            "galerkin_change",
            "galerkin_converged",
        ]
        .map(String::from),
    );
    let mut levels = Table::new(&levels_header);
    for row in &report.rows {
        for k in 0..row.gammas.len().min(row.lambdas.len()) {
            table.push(vec![
                row.level.to_string(),
                k.to_string(),
                num(row.gammas[k]),
                num(row.lambdas[k]),
                num(row.defect(k)),
            ]);
        }
        let mut r = vec![row.level.to_string()];
        r.extend(row.xi.iter().map(|v| num(*v)));
        r.extend([
            num(row.unitality_defect),
            num(row.symmetry_defect),
            row.galerkin.degree.to_string(),
            num(row.galerkin.change),
            u8::from(row.galerkin.converged).to_string(),
        ]);
        levels.push(r);
    }
    for k in 1..cfg.spectrum_count {
        table
            .footer
            .push(format!("slope k={k} = {}", slope_text(report.slope(k))));
    }
    for k in 1..cfg.spectrum_count {
        table.footer.push(format!(
            "max p^2 defect k={k} = {}",
            num(report.scaled_defect(k))
        ));
    }
    run.write("spectrum.csv", &table)?;
    run.write("spectrum_levels.csv", &levels)?;
    run.stage(
        "spectrum",
        started,
        failures_to_result(failures.clone()).map_err(|e| e.to_string()),
    );

    if cfg.spectrum_metric == GapMetric::Reference {
        let started = Instant::now();
        let phi = Potential::reference(&poly);
        let mut density = Table::new(&["p", "bergman_defect"]);
        let (mut ps, mut ds) = (Vec::new(), Vec::new());
        for &p in &cfg.levels {
            match bergman_defect(cfg, &poly, &phi, p) {
                Ok(d) => {
                    density.push(vec![p.to_string(), num(d)]);
                    ps.push(p as f64);
                    ds.push(d);
                }
                Err(e) => failures.push(format!("density at p={p}: {e}")),
            }
        }
        density
            .footer
            .push(format!("slope = {}", slope_text(loglog_slope(&ps, &ds))));
        run.write("density.csv", &density)?;
        run.stage("density", started, Ok(()));
    }
    failures_to_result(failures)
}
