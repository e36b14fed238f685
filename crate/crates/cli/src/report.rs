//! Consolidation of a run directory into `report.csv` and `report.json`.
//!
//! The report depends only on the checksummed tables, so emitting it twice
//! gives identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use qsol_core::math::loglog_slope;

use crate::artifacts::{read_table, sha256_hex, RunManifest, Table};
use crate::error::CliError;

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";

/// Meaning and producing operation of every column the CLI emits.
/// Entries ending in `_` document numbered columns (`a_1`, `a_2`, …).
const COLUMN_DOCS: &[(&str, &str, &str)] = &[
    ("basis.csv", "p", "level"),
    (
        "basis.csv",
        "index",
        "position of the section in the basis (lattice_points)",
    ),
    (
        "basis.csv",
        "a_",
        "lattice point coordinates of the section (lattice_points)",
    ),
    ("basis_counts.csv", "p", "level"),
    (
        "basis_counts.csv",
        "count",
        "number of lattice points of pP (lattice_points)",
    ),
    ("xi.csv", "p", "level"),
    ("xi.csv", "xi_", "soliton field xi_p component (solve_xi_p)"),
    ("xi.csv", "gap", "|xi_p - xi_inf| (xi_asymptotics)"),
    ("riemann.csv", "p", "level"),
    ("riemann.csv", "eta", "index of the fixed direction eta"),
    (
        "riemann.csv",
        "riemann_sum",
        "F_p(eta)/p^(n+1) (normalized_f_p)",
    ),
    (
        "riemann.csv",
        "integral",
        "integral of exp<u,eta> over P (classical_functional)",
    ),
    ("riemann.csv", "gap", "|riemann_sum - integral|"),
    ("residuals.csv", "p", "level"),
    (
        "residuals.csv",
        "iteration",
        "accepted flow steps so far (run_flow)",
    ),
    (
        "residuals.csv",
        "residual",
        "balanced residual of the state (run_flow)",
    ),
    ("residuals.csv", "psi", "energy Psi of the state (run_flow)"),
    (
        "residuals.csv",
        "dt",
        "flow time of the step into the state, 0 on grid changes (run_flow)",
    ),
    ("weights_final.csv", "p", "level"),
    ("weights_final.csv", "a_", "section lattice point"),
    (
        "weights_final.csv",
        "log_weight",
        "final log-weight l_a of the product (run_flow)",
    ),
    ("potential_samples.csv", "p", "level"),
    (
        "potential_samples.csv",
        "x_",
        "sample point in log-coordinates",
    ),
    (
        "potential_samples.csv",
        "phi",
        "FS(twist(H, xi_p)) minus its value at 0 (fs_potential)",
    ),
    ("balance_summary.csv", "p", "level"),
    (
        "balance_summary.csv",
        "converged",
        "1 if the flow reached flow.tol (run_flow)",
    ),
    (
        "balance_summary.csv",
        "iterations",
        "accepted steps (run_flow)",
    ),
    (
        "balance_summary.csv",
        "rejected_steps",
        "trial steps rejected for raising Psi (run_flow)",
    ),
    (
        "balance_summary.csv",
        "grid_refits",
        "grid rebuilds at the requested tolerance (run_flow)",
    ),
    (
        "balance_summary.csv",
        "residual",
        "final balanced residual (run_flow)",
    ),
    (
        "balance_summary.csv",
        "check_residual",
        "residual on a grid refitted to the final potential (run_flow)",
    ),
    (
        "balance_summary.csv",
        "energy_start",
        "Psi of the initial product (run_flow)",
    ),
    (
        "balance_summary.csv",
        "energy_final",
        "Psi of the final product (run_flow)",
    ),
    (
        "balance_summary.csv",
        "max_energy_rise",
        "largest Psi increase over accepted steps (run_flow)",
    ),
    (
        "balance_summary.csv",
        "futaki_xi",
        "max_i |Fut_p^xi_p(e_i)|/p^(n+1) (quantized_futaki)",
    ),
    (
        "balance_summary.csv",
        "futaki_mu",
        "max_i |(Tr/Vol) sum <a,e_i> d mu|/p^(n+1) (moment_map)",
    ),
    (
        "balance_summary.csv",
        "soliton_variance",
        "variance of the soliton residual (soliton_residual)",
    ),
    (
        "balance_summary.csv",
        "soliton_spread",
        "sup - inf of the soliton residual (soliton_residual)",
    ),
    (
        "balance_summary.csv",
        "distance_sup",
        "sup distance to the target potential (compare_to_soliton)",
    ),
    (
        "balance_summary.csv",
        "distance_l2",
        "L2 distance to the target potential (compare_to_soliton)",
    ),
    ("spectrum.csv", "p", "level"),
    ("spectrum.csv", "k", "eigenvalue index"),
    (
        "spectrum.csv",
        "gamma",
        "channel eigenvalue gamma_k (channel_spectrum)",
    ),
    (
        "spectrum.csv",
        "lambda",
        "Galerkin eigenvalue lambda_k (tz_spectrum)",
    ),
    (
        "spectrum.csv",
        "defect",
        "|1 - gamma_k - lambda_k/p| (gap_report)",
    ),
    ("spectrum_levels.csv", "p", "level"),
    (
        "spectrum_levels.csv",
        "xi_",
        "twist used by the channel (gap_report)",
    ),
    (
        "spectrum_levels.csv",
        "unitality_defect",
        "max |E 1 - 1| (channel_matrix)",
    ),
    (
        "spectrum_levels.csv",
        "symmetry_defect",
        "asymmetry of D^1/2 E D^-1/2 (channel_matrix)",
    ),
    (
        "spectrum_levels.csv",
        "galerkin_degree",
        "polynomial degree of the Galerkin space (tz_spectrum)",
    ),
    (
        "spectrum_levels.csv",
        "galerkin_change",
        "eigenvalue change against degree - 2 (tz_spectrum)",
    ),
    (
        "spectrum_levels.csv",
        "galerkin_converged",
        "1 if the change is within tolerance (tz_spectrum)",
    ),
    ("density.csv", "p", "level"),
    (
        "density.csv",
        "bergman_defect",
        "sup |rho/p - omega/dnu| (rawnsley, bergman_leading_density)",
    ),
    ("verify.csv", "p", "level"),
    ("verify.csv", "check", "identity name"),
    (
        "verify.csv",
        "residual",
        "relative residual of the identity (verify)",
    ),
    ("verify.csv", "threshold", "largest accepted residual"),
    ("verify.csv", "pass", "1 if residual <= threshold"),
];

pub fn column_doc(file: &str, column: &str) -> Option<&'static str> {
    COLUMN_DOCS.iter().find_map(|(f, c, doc)| {
        let matches = if let Some(prefix) = c.strip_suffix('_') {
            column
                .strip_prefix(prefix)
                .and_then(|r| r.strip_prefix('_'))
                .is_some_and(|r| r.parse::<usize>().is_ok())
        } else {
            *c == column
        };
        (*f == file && matches).then_some(*doc)
    })
}

fn column(table: &Table, name: &str) -> Option<Vec<f64>> {
    let j = table.header.iter().position(|h| h == name)?;
    Some(
        table
            .rows
            .iter()
            .map(|r| r[j].parse().unwrap_or(f64::NAN))
            .collect(),
    )
}

/// Log-log slope of `y` against `p`, optionally within groups of `key`.
fn grouped_slopes(table: &Table, key: Option<&str>, y: &str) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    let (Some(ps), Some(ys)) = (column(table, "p"), column(table, y)) else {
        return out;
    };
    let keys: Vec<String> = match key.and_then(|k| table.header.iter().position(|h| h == k)) {
        Some(j) => table.rows.iter().map(|r| r[j].clone()).collect(),
        None => vec![String::new(); ps.len()],
    };
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for i in 0..ps.len() {
        let g = groups.entry(&keys[i]).or_default();
        g.0.push(ps[i]);
        g.1.push(ys[i]);
    }
    for (k, (x, v)) in groups {
        let name = if k.is_empty() {
            y.to_string()
        } else {
            format!("{y} {}={k}", key.unwrap_or(""))
        };
        out.insert(name, loglog_slope(&x, &v).map_or(Value::Null, Value::from));
    }
    out
}

/// Per-level geometric mean contraction of the residual over the run.
fn contraction_rates(table: &Table) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    let (Some(ps), Some(rs), Some(its)) = (
        column(table, "p"),
        column(table, "residual"),
        column(table, "iteration"),
    ) else {
        return out;
    };
    let mut by_level: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for i in 0..ps.len() {
        by_level
            .entry(ps[i] as u64)
            .or_default()
            .push((its[i], rs[i]));
    }
    for (p, series) in by_level {
        let (first, last) = (series[0], series[series.len() - 1]);
        let steps = last.0 - first.0;
        let rate = if steps > 0.0 && first.1 > 0.0 && last.1 > 0.0 {
            Value::from((last.1 / first.1).powf(1.0 / steps))
        } else {
            Value::Null
        };
        out.insert(format!("residual contraction p={p}"), rate);
    }
    out
}

fn pass_summary(tables: &BTreeMap<String, Table>) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    let all_ones = |t: &Table, c: &str| column(t, c).map(|v| v.iter().all(|x| *x == 1.0));
    if let Some(t) = tables.get("verify.csv") {
        out.insert(
            "verify".into(),
            Value::from(all_ones(t, "pass").unwrap_or(false)),
        );
    }
    if let Some(t) = tables.get("balance_summary.csv") {
        out.insert(
            "balance converged".into(),
            Value::from(all_ones(t, "converged").unwrap_or(false)),
        );
    }
    if let Some(t) = tables.get("spectrum_levels.csv") {
        out.insert(
            "galerkin converged".into(),
            Value::from(all_ones(t, "galerkin_converged").unwrap_or(false)),
        );
    }
    out
}

/// Writes `report.csv` (long format: source, row, p, quantity, value) and
/// `report.json` (column docs, slopes, rates, pass/fail) into `dir`.
pub fn emit_report(dir: &Path) -> Result<(), CliError> {
    let manifest = RunManifest::load(dir)?;
    let mut tables = BTreeMap::new();
    let mut footers = BTreeMap::new();
    for record in &manifest.files {
        let path = dir.join(&record.name);
        let bytes = fs::read(&path).map_err(CliError::io(&path))?;
        if sha256_hex(&bytes) != record.sha256 {
            return Err(CliError::Integrity {
                file: record.name.clone(),
            });
        }
        if record.name.ends_with(".csv") {
            let table = read_table(&path)?;
            footers.insert(record.name.clone(), Value::from(table.footer.clone()));
            tables.insert(record.name.clone(), table);
        }
    }

    let mut long = Table::new(&["source", "row", "p", "quantity", "value"]);
    let mut columns = BTreeMap::new();
    for (name, table) in &tables {
        let docs: BTreeMap<String, Value> = table
            .header
            .iter()
            .map(|c| {
                (
                    c.clone(),
                    Value::from(column_doc(name, c).unwrap_or("undocumented")),
                )
            })
            .collect();
        columns.insert(name.clone(), Value::from(serde_json::Map::from_iter(docs)));
        let p_col = table.header.iter().position(|h| h == "p");
        for (i, row) in table.rows.iter().enumerate() {
            let p = p_col.map(|j| row[j].clone()).unwrap_or_default();
            for (j, value) in row.iter().enumerate() {
                if Some(j) != p_col {
                    long.push(vec![
                        name.clone(),
                        i.to_string(),
                        p.clone(),
                        table.header[j].clone(),
                        value.clone(),
                    ]);
                }
            }
        }
    }

    let mut slopes = BTreeMap::new();
    let mut rates = BTreeMap::new();
    let mut add = |file: &str, key: Option<&str>, y: &str| {
        if let Some(t) = tables.get(file) {
            for (k, v) in grouped_slopes(t, key, y) {
                slopes.insert(format!("{file}: {k}"), v);
            }
        }
    };
    add("xi.csv", None, "gap");
    add("riemann.csv", Some("eta"), "gap");
    add("spectrum.csv", Some("k"), "defect");
    add("density.csv", None, "bergman_defect");
    add("balance_summary.csv", None, "distance_sup");
    add("balance_summary.csv", None, "soliton_variance");
    if let Some(t) = tables.get("residuals.csv") {
        for (k, v) in contraction_rates(t) {
            rates.insert(format!("residuals.csv: {k}"), v);
        }
    }

    let report = json!({
        "artifact": manifest.artifact,
        "version": manifest.version,
        "mode": manifest.mode,
        "config": manifest.config,
        "status": manifest.status,
        "stages": manifest.stages.iter().map(|s| json!({"name": s.name, "status": s.status})).collect::<Vec<_>>(),
        "columns": columns,
        "footers": footers,
        "slopes": slopes,
        "rates": rates,
        "pass": pass_summary(&tables),
        "report_columns": {
            "source": "table the value comes from",
            "row": "row index within that table",
            "p": "level of the row",
            "quantity": "column name in the source table",
            "value": "value as written in the source table",
        },
    });
    let csv_path = dir.join(REPORT_CSV);
    fs::write(&csv_path, long.to_bytes()).map_err(CliError::io(&csv_path))?;
    let json_path = dir.join(REPORT_JSON);
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    fs::write(&json_path, text).map_err(CliError::io(&json_path))?;
    log::info!(
        "report: {} rows, {} slopes",
        long.rows.len(),
        report["slopes"].as_object().map_or(0, |m| m.len())
    );
    Ok(())
}
