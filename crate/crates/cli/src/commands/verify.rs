use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use qsol_core::balance::{log_twist_factors, moment_map};
use qsol_core::quadrature::{build_grid, QuadratureGrid};
use qsol_core::quantization::{
    berezin_symbol, fs_potential, gram, rawnsley, toeplitz, DiagonalObservable, InvariantProduct,
    Potential,
};
use qsol_core::soliton::{quantized_futaki, solve_xi_p};
use qsol_core::spectral::channel_matrix;
use qsol_core::toric::lattice_points;

use super::{grid_options, mass_window};
use crate::artifacts::{num, RunDir, Table};
use crate::config::RunConfig;
use crate::error::CliError;

pub const CHECKS: [&str; 9] = [
    "tuynman",
    "duality",
    "theta_mean_zero",
    "mu_trace",
    "futaki_pairing",
    "markov_unit",
    "markov_range",
    "channel_unitality",
    "channel_symmetry",
];

#[derive(Clone, Debug, Serialize)]
pub struct CheckRecord {
    pub p: u32,
    pub check: String,
    /// Relative residual; absent when the check could not be evaluated.
    pub residual: Option<f64>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Serialize)]
struct Verdict<'a> {
    pass: bool,
    manifold: &'a str,
    levels: &'a [u32],
    threshold: f64,
    lie_weight_scale: f64,
    checks: &'a [CheckRecord],
}

/// Objects shared by the checks at one level: the reference potential, its
/// Gram product on the doubled-level grid and the soliton field `ξ_p`.
struct Level {
    phi: Potential,
    product: InvariantProduct,
    grid: QuadratureGrid,
    xi: Vec<f64>,
    /// Coordinate directions, plus `ξ_p` when it is nonzero.
    directions: Vec<Vec<f64>>,
}

fn prepare(cfg: &RunConfig, level: u32) -> Result<Level, String> {
    let poly = cfg.polytope();
    let n = poly.dim();
    let phi = Potential::reference(&poly);
    let basis = Arc::new(lattice_points(&poly, level).map_err(|e| e.to_string())?);
    let xi = solve_xi_p(&basis, cfg.solver_tol)
        .map_err(|e| e.to_string())?
        .solution
        .as_slice()
        .to_vec();
    let doubled = lattice_points(&poly, 2 * level).map_err(|e| e.to_string())?;
    let grid = build_grid(&phi, &doubled, &grid_options(cfg)).map_err(|e| e.to_string())?;
    let product = gram(&phi, &basis, &grid).map_err(|e| e.to_string())?;
    let mut directions: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            e
        })
        .collect();
    if xi.iter().any(|v| *v != 0.0) {
        directions.push(xi.clone());
    }
    Ok(Level {
        phi,
        product,
        grid,
        xi,
        directions,
    })
}

fn theta<'a>(phi: &'a Potential, eta: &[f64]) -> impl Fn(&[f64]) -> f64 + Sync + Send + 'a {
    let eta = eta.to_vec();
    move |x: &[f64]| {
        let j = phi.jet(x);
        eta.iter().enumerate().map(|(d, e)| j.grad[d] * e).sum()
    }
}

/// `max_α |(p+1) T(θ(η))_α - s⟨α,η⟩| / max_α |⟨α,η⟩|`, with `s` the
/// configured weight scale (1 for the true convention).
fn tuynman(lv: &Level, scale: f64) -> Result<f64, String> {
    let basis = lv.product.basis();
    let p1 = basis.level() as f64 + 1.0;
    let mut worst: f64 = 0.0;
    for eta in &lv.directions {
        let t = toeplitz(theta(&lv.phi, eta), &lv.product, &lv.phi, &lv.grid)
            .map_err(|e| e.to_string())?;
        let (mut defect, mut size): (f64, f64) = (0.0, 0.0);
        for a in 0..basis.len() {
            let w = basis.pairing(a, eta);
            defect = defect.max((p1 * t.entries()[a] - scale * w).abs());
            size = size.max(w.abs());
        }
        worst = worst.max(defect / size);
    }
    Ok(worst)
}

/// `|Tr[T(f)A] - ∫ f σ(A) ρ dν|`, relative to `N max|A| max|f|`.
fn duality(lv: &Level) -> Result<f64, String> {
    let n = lv.grid.dim();
    let f = move |x: &[f64]| (0.7 * x[0]).sin() + if n == 2 { (x[1] / 3.0).cos() } else { 0.0 };
    let fmax = if n == 2 { 2.0 } else { 1.0 };
    let h = &lv.product;
    let t = toeplitz(f, h, &lv.phi, &lv.grid).map_err(|e| e.to_string())?;
    let a = DiagonalObservable((0..h.len()).map(|i| ((i * 7) % 5) as f64 - 2.0).collect());
    let lhs: f64 = t
        .entries()
        .iter()
        .zip(a.entries())
        .map(|(t, a)| t * a)
        .sum();
    let two_pi_n = (2.0 * std::f64::consts::PI).powi(n as i32);
    let mut rhs = 0.0;
    for i in 0..lv.grid.len() {
        let x = lv.grid.point(i);
        let density =
            rawnsley(h, &lv.phi, x) * two_pi_n * (lv.grid.log_weight(i) - lv.phi.value(x)).exp();
        rhs += f(x) * berezin_symbol(&a, h, x).map_err(|e| e.to_string())? * density;
    }
    Ok((lhs - rhs).abs() / (h.len() as f64 * a.max_abs() * fmax))
}

/// `|∫ θ(η) e^{-φ} dx| / ∫ |θ(η)| e^{-φ} dx`.
fn theta_mean_zero(lv: &Level) -> f64 {
    let values = lv.phi.values_on(&lv.grid);
    let mut worst: f64 = 0.0;
    for eta in &lv.directions {
        let th = lv.grid.evaluate(theta(&lv.phi, eta));
        let (mut signed, mut total) = (0.0, 0.0);
        for i in 0..lv.grid.len() {
            let w = (lv.grid.log_weight(i) - values[i]).exp();
            signed += th[i] * w;
            total += th[i].abs() * w;
        }
        worst = worst.max(signed.abs() / total);
    }
    worst
}

/// Moment map identities for `H = gram(φ)`, on a grid fitted to `FS(H)`:
/// `Σ dμ = 0` relative to `Vol`, and `Σ⟨α,η⟩dμ = -(Vol/Tr) Fut` relative to
/// `(Vol/Tr) Σ |⟨α,η⟩| d`.
fn moment_identities(cfg: &RunConfig, lv: &Level) -> Result<(f64, f64), String> {
    let h = &lv.product;
    let basis = h.basis();
    let grid =
        build_grid(&fs_potential(h), basis, &grid_options(cfg)).map_err(|e| e.to_string())?;
    let mm = moment_map(h, &lv.xi, &grid).map_err(|e| e.to_string())?;
    let trace = mm.twisted_trace(basis, &lv.xi).abs() / mm.log_volume.exp();
    let level = mm.balanced_level();
    let d: Vec<f64> = log_twist_factors(basis, &lv.xi)
        .into_iter()
        .map(f64::exp)
        .collect();
    let mut pairing: f64 = 0.0;
    for eta in &lv.directions {
        let size: f64 = (0..basis.len())
            .map(|a| basis.pairing(a, eta).abs() * d[a])
            .sum();
        let fut = quantized_futaki(basis, &lv.xi, eta);
        pairing =
            pairing.max((mm.pairing(basis, &lv.xi, eta) + level * fut).abs() / (level * size));
    }
    Ok((trace, pairing))
}

/// `sup |B(1) - 1|` and the worst excursion of `B(f)` outside `[0, 1]` for
/// `f = 1/(1+|x|²)`, over nodes carrying `dν` mass.
fn markov(lv: &Level) -> Result<(f64, f64), String> {
    let h = &lv.product;
    let values = lv.phi.values_on(&lv.grid);
    let window = mass_window(&lv.grid, &values);
    let one = toeplitz(|_| 1.0, h, &lv.phi, &lv.grid).map_err(|e| e.to_string())?;
    let bump = |x: &[f64]| 1.0 / (1.0 + x.iter().map(|v| v * v).sum::<f64>());
    let tf = toeplitz(bump, h, &lv.phi, &lv.grid).map_err(|e| e.to_string())?;
    let (mut unit, mut range): (f64, f64) = (0.0, 0.0);
    for i in window {
        let x = lv.grid.point(i);
        unit = unit.max((berezin_symbol(&one, h, x).map_err(|e| e.to_string())? - 1.0).abs());
        let b = berezin_symbol(&tf, h, x).map_err(|e| e.to_string())?;
        range = range.max((b - 1.0).max(-b).max(0.0));
    }
    Ok((unit, range))
}

fn channel(lv: &Level) -> Result<(f64, f64), String> {
    let e = channel_matrix(&lv.product, &lv.phi, &lv.xi, &lv.grid).map_err(|e| e.to_string())?;
    Ok((e.unitality_defect(), e.symmetry_defect()))
}

fn level_checks(cfg: &RunConfig, level: u32) -> Vec<(&'static str, Result<f64, String>)> {
    let lv = match prepare(cfg, level) {
        Ok(lv) => lv,
        Err(e) => return CHECKS.iter().map(|c| (*c, Err(e.clone()))).collect(),
    };
    let pair = |r: Result<(f64, f64), String>| match r {
        Ok((a, b)) => (Ok(a), Ok(b)),
        Err(e) => (Err(e.clone()), Err(e)),
    };
    let (mu_trace, futaki) = pair(moment_identities(cfg, &lv));
    let (unit, range) = pair(markov(&lv));
    let (unitality, symmetry) = pair(channel(&lv));
    vec![
        ("tuynman", tuynman(&lv, cfg.lie_weight_scale)),
        ("duality", duality(&lv)),
        ("theta_mean_zero", Ok(theta_mean_zero(&lv))),
        ("mu_trace", mu_trace),
        ("futaki_pairing", futaki),
        ("markov_unit", unit),
        ("markov_range", range),
        ("channel_unitality", unitality),
        ("channel_symmetry", symmetry),
    ]
}

/// Exact identities on the configured manifold and levels. Every check is
/// attempted; a failing or erroring check makes the run fail.
pub fn verify(cfg: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let mut records = Vec::new();
    for &p in &cfg.levels {
        let started = Instant::now();
        for (check, outcome) in level_checks(cfg, p) {
            let record = match outcome {
                Ok(r) => CheckRecord {
                    p,
                    check: check.into(),
                    residual: Some(r),
                    pass: r <= cfg.verify_threshold,
                    error: None,
                },
                Err(e) => CheckRecord {
                    p,
                    check: check.into(),
                    residual: None,
                    pass: false,
                    error: Some(e),
                },
            };
            if !record.pass {
                log::warn!(
                    "p={p} {check}: {:?} {}",
                    record.residual,
                    record.error.as_deref().unwrap_or("")
                );
            }
            records.push(record);
        }
        run.stage(format!("verify p={p}"), started, Ok(()));
    }
    let mut table = Table::new(&["p", "check", "residual", "threshold", "pass"]);
    for r in &records {
        table.push(vec![
            r.p.to_string(),
            r.check.clone(),
            r.residual.map(num).unwrap_or_else(|| "NaN".into()),
            num(cfg.verify_threshold),
            u8::from(r.pass).to_string(),
        ]);
    }
    run.write("verify.csv", &table)?;
    let pass = records.iter().all(|r| r.pass);
    let verdict = Verdict {
        pass,
        manifold: &cfg.manifold,
        levels: &cfg.levels,
        threshold: cfg.verify_threshold,
        lie_weight_scale: cfg.lie_weight_scale,
        checks: &records,
    };
    let mut json = serde_json::to_string_pretty(&verdict).expect("verdict serializes");
    json.push('\n');
    run.write_bytes("verify.json", json.as_bytes())?;
    println!("{json}");
    if pass {
        Ok(())
    } else {
        let failed: Vec<String> = records
            .iter()
            .filter(|r| !r.pass)
            .map(|r| format!("{} at p={}", r.check, r.p))
            .collect();
        Err(CliError::ChecksFailed(format!(
            "failed checks: {}",
            failed.join(", ")
        )))
    }
}
