use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use qsol_core::balance::{
    compare_to_soliton, moment_map, run_flow, soliton_residual, BalanceConfig, FlowState,
    InitialProduct,
};
use qsol_core::math::loglog_slope;
use qsol_core::quadrature::build_grid;
use qsol_core::quantization::{fs_potential, twist_product, Potential};
use qsol_core::soliton::{quantized_futaki, solve_xi_p};
use qsol_core::toric::{lattice_points, ReflexivePolytope, SectionBasis};

use super::{coord_columns, failures_to_result, grid_options, numeric, slope_text};
use crate::artifacts::{num, read_table, RunDir, Table};
use crate::config::{FlowInit, RunConfig};
use crate::error::CliError;

/// Everything kept from a converged (or exhausted) flow at one level.
struct LevelRun {
    level: u32,
    xi: Vec<f64>,
    state: FlowState,
    /// `FS(twist(H, ξ_p))`, the potential of the rescaled balanced metric.
    potential: Potential,
}

fn load_weights(cfg: &RunConfig, basis: &SectionBasis) -> Result<Vec<f64>, CliError> {
    let path = cfg.weights.as_ref().expect("weights configured");
    let table = read_table(path)?;
    let n = basis.dim();
    let bad = |message: String| CliError::Format {
        path: path.clone(),
        message,
    };
    if table.header.len() != n + 2 || table.header[0] != "p" || table.header[n + 1] != "log_weight"
    {
        return Err(bad(format!("expected columns p, a_1..a_{n}, log_weight")));
    }
    let mut found: HashMap<usize, f64> = HashMap::new();
    for row in table
        .rows
        .iter()
        .filter(|r| r[0] == basis.level().to_string())
    {
        let alpha: Vec<i64> = row[1..=n]
            .iter()
            .map(|a| a.parse())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("{e}")))?;
        let idx = basis
            .index_of(&alpha)
            .ok_or_else(|| bad(format!("{alpha:?} is not a section at p={}", basis.level())))?;
        found.insert(idx, row[n + 1].parse().map_err(|e| bad(format!("{e}")))?);
    }
    (0..basis.len())
        .map(|i| {
            found
                .get(&i)
                .copied()
                .ok_or_else(|| bad(format!("missing weight for {:?}", basis.point(i))))
        })
        .collect()
}

fn flow_level(cfg: &RunConfig, poly: &ReflexivePolytope, level: u32) -> Result<LevelRun, CliError> {
    let basis = Arc::new(lattice_points(poly, level).map_err(numeric)?);
    let xi = solve_xi_p(&basis, cfg.solver_tol)
        .map_err(numeric)?
        .solution
        .as_slice()
        .to_vec();
    let mut config = BalanceConfig::new(level, xi.clone());
    config.mode = cfg.flow_mode;
    config.tolerance = cfg.flow_tol;
    config.max_iterations = cfg.flow_max_iter;
    config.grid = grid_options(cfg);
    config.initial = match (&cfg.weights, cfg.flow_init) {
        (Some(_), _) => InitialProduct::LogWeights(load_weights(cfg, &basis)?),
        (None, FlowInit::Reference) => InitialProduct::ReferenceGram,
        (None, FlowInit::Uniform) => InitialProduct::Uniform,
    };
    let state = run_flow(poly, &config).map_err(numeric)?;
    let potential = fs_potential(&twist_product(&state.product, &xi));
    Ok(LevelRun {
        level,
        xi,
        state,
        potential,
    })
}

/// `(p, iteration, residual, Ψ, dt)` rows; `dt` is zero for the starting
/// state and for states revisited on a new grid.
fn residual_rows(run: &LevelRun, table: &mut Table) {
    let s = &run.state;
    let mut steps = s.steps.iter();
    let mut iteration = 0usize;
    for (i, (r, psi)) in s.residual_history.iter().zip(&s.energy_history).enumerate() {
        let dt = if i == 0 || s.grid_changes.contains(&i) {
            0.0
        } else {
            iteration += 1;
            steps.next().map(|st| st.dt).unwrap_or(f64::NAN)
        };
        table.push(vec![
            run.level.to_string(),
            iteration.to_string(),
            num(*r),
            num(*psi),
            num(dt),
        ]);
    }
}

/// Largest `|Fut(e_i)| / p^{n+1}` over coordinate directions.
fn scaled_futaki(level: u32, dim: usize, fut: impl Fn(&[f64]) -> f64) -> f64 {
    let scale = (level as f64).powi(dim as i32 + 1);
    (0..dim)
        .map(|i| {
            let mut eta = vec![0.0; dim];
            eta[i] = 1.0;
            fut(&eta).abs() / scale
        })
        .fold(0.0, f64::max)
}

fn summary_row(
    cfg: &RunConfig,
    poly: &ReflexivePolytope,
    run: &LevelRun,
    target: &Potential,
) -> Result<Vec<String>, CliError> {
    let n = poly.dim();
    let s = &run.state;
    let basis = s.product.basis();
    let futaki_xi = scaled_futaki(run.level, n, |eta| quantized_futaki(basis, &run.xi, eta));
    let mm = moment_map(&s.product, &run.xi, &s.grid).map_err(numeric)?;
    // Σ⟨α,η⟩ d μ = -(Vol/Tr) Fut, so the moment map yields Fut directly.
    let futaki_mu = scaled_futaki(run.level, n, |eta| {
        mm.pairing(basis, &run.xi, eta) / mm.balanced_level()
    });
    let rise = s
        .steps
        .iter()
        .map(|st| st.energy_after - st.energy_before)
        .fold(f64::NEG_INFINITY, f64::max);
    let level_one = lattice_points(poly, 1).map_err(numeric)?;
    let own = build_grid(&run.potential, &level_one, &grid_options(cfg)).map_err(numeric)?;
    let residual = soliton_residual(&run.potential, &run.xi, &own).map_err(numeric)?;
    let target_grid = build_grid(target, &level_one, &grid_options(cfg)).map_err(numeric)?;
    let distance = compare_to_soliton(&run.potential, target, &target_grid);
    Ok(vec![
        run.level.to_string(),
        u8::from(s.converged).to_string(),
        s.iterations.to_string(),
        s.rejected_steps.to_string(),
        s.grid_refits.to_string(),
        num(s.final_residual()),
        num(s.check_residual),
        num(*s.energy_history.first().unwrap_or(&f64::NAN)),
        num(*s.energy_history.last().unwrap_or(&f64::NAN)),
        num(if s.steps.is_empty() { 0.0 } else { rise }),
        num(futaki_xi),
        num(futaki_mu),
        num(residual.variance),
        num(residual.spread),
        num(distance.sup),
        num(distance.l2),
    ])
}

/// Sample points of the potential table: a uniform lattice on `[-r, r]ⁿ`.
fn sample_points(dim: usize) -> Vec<Vec<f64>> {
    let axis = |half: f64, step: f64| -> Vec<f64> {
        let m = (2.0 * half / step).round() as i64;
        (0..=m).map(|i| -half + step * i as f64).collect()
    };
    if dim == 1 {
        axis(10.0, 0.25).into_iter().map(|x| vec![x]).collect()
    } else {
        let a = axis(6.0, 0.5);
        a.iter()
            .flat_map(|&x| a.iter().map(move |&y| vec![x, y]))
            .collect()
    }
}

pub const SUMMARY_COLUMNS: [&str; 16] = [
    "p",
    "converged",
    "iterations",
    "rejected_steps",
    "grid_refits",
    "residual",
    "check_residual",
    "energy_start",
    "energy_final",
    "max_energy_rise",
    "futaki_xi",
    "futaki_mu",
    "soliton_variance",
    "soliton_spread",
    "distance_sup",
    "distance_l2",
];

/// Balancing flow at each level with `ξ` frozen to `ξ_p`.
pub fn balance(cfg: &RunConfig, run_dir: &mut RunDir) -> Result<(), CliError> {
    let poly = cfg.polytope();
    let n = poly.dim();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for &p in &cfg.levels {
        let started = Instant::now();
        let outcome = flow_level(cfg, &poly, p);
        let status = match &outcome {
            Ok(r) if !r.state.converged => {
                let msg = format!(
                    "flow at p={p} stopped after {} iterations with residual {:e}",
                    r.state.iterations,
                    r.state.final_residual()
                );
                failures.push(msg.clone());
                Err(msg)
            }
            Ok(r) => {
                log::info!(
                    "{} p={p}: converged in {} iterations",
                    poly.name(),
                    r.state.iterations
                );
                Ok(())
            }
            Err(e) => {
                failures.push(format!("p={p}: {e}"));
                Err(e.to_string())
            }
        };
        run_dir.stage(format!("balance p={p}"), started, status);
        if let Ok(r) = outcome {
            runs.push(r);
        }
    }

    let mut residuals = Table::new(&["p", "iteration", "residual", "psi", "dt"]);
    let mut weight_header = vec!["p".to_string()];
    weight_header.extend(coord_columns("a", n));
    weight_header.push("log_weight".into());
    let mut weights = Table::new(&weight_header);
    let mut sample_header = vec!["p".to_string()];
    sample_header.extend(coord_columns("x", n));
    sample_header.push("phi".into());
    let mut samples = Table::new(&sample_header);
    let points = sample_points(n);
    for r in &runs {
        residual_rows(r, &mut residuals);
        let product = &r.state.product;
        for (i, lw) in product.log_weights().iter().enumerate() {
            let mut row = vec![r.level.to_string()];
            row.extend(product.basis().point(i).iter().map(|a| a.to_string()));
            row.push(num(*lw));
            weights.push(row);
        }
        let origin = r.potential.value(&vec![0.0; n]);
        for x in &points {
            let mut row = vec![r.level.to_string()];
            row.extend(x.iter().map(|v| num(*v)));
            row.push(num(r.potential.value(x) - origin));
            samples.push(row);
        }
    }
    samples
        .footer
        .push("phi = FS(twist(H, xi_p)) - FS(twist(H, xi_p))(0)".into());
    run_dir.write("residuals.csv", &residuals)?;
    run_dir.write("weights_final.csv", &weights)?;
    run_dir.write("potential_samples.csv", &samples)?;

    // Distances: the round potential on the line, the highest level otherwise.
    let started = Instant::now();
    let (target, target_name) = if poly.name() == "CP1" {
        (Potential::round_cp1(), "round".to_string())
    } else if let Some(top) = runs.iter().max_by_key(|r| r.level) {
        (
            top.potential.clone(),
            format!("self-convergence against p={}", top.level),
        )
    } else {
        return failures_to_result(failures);
    };
    let mut summary = Table::new(&SUMMARY_COLUMNS);
    for r in &runs {
        match summary_row(cfg, &poly, r, &target) {
            Ok(row) => summary.push(row),
            Err(e) => failures.push(format!("diagnostics at p={}: {e}", r.level)),
        }
    }
    let column = |name: &str| -> Vec<f64> {
        let j = SUMMARY_COLUMNS
            .iter()
            .position(|c| *c == name)
            .expect("summary column");
        summary
            .rows
            .iter()
            .map(|r| r[j].parse().unwrap_or(f64::NAN))
            .collect()
    };
    let ps = column("p");
    summary
        .footer
        .push(format!("distance target = {target_name}"));
    summary.footer.push(format!(
        "slope distance_sup = {}",
        slope_text(loglog_slope(&ps, &column("distance_sup")))
    ));
    summary.footer.push(format!(
        "slope soliton_variance = {}",
        slope_text(loglog_slope(&ps, &column("soliton_variance")))
    ));
    run_dir.write("balance_summary.csv", &summary)?;
    run_dir.stage("diagnostics", started, Ok(()));
    failures_to_result(failures)
}
