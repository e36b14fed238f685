//! Acceptance suite. Drives the `qsol` binary on the reference workloads and
//! prints one PASS/FAIL line per criterion. Exits nonzero if any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

const BIN: &str = env!("CARGO_BIN_EXE_qsol");

// Tolerances and limits, fixed per criterion.
const IDENTITY_TOL: f64 = 1e-8;
const IDENTITY_SECONDS: f64 = 120.0;
const XI_ZERO_TOL: f64 = 1e-12;
const XI_DIAGONAL_TOL: f64 = 1e-12;
const XI_LIMIT_TOL: f64 = 1e-10;
const XI_SLOPE_MAX: f64 = -0.9;
const XI_SECONDS: f64 = 60.0;
const FLOW_TOL: f64 = 1e-9;
const FLOW_MAX_ITER: usize = 500;
const FUTAKI_TOL: f64 = 1e-7;
/// Ψ may rise by round-off only: this multiple of `max |Ψ|`.
const ENERGY_ROUNDOFF: f64 = 1e-12;
const FLOW_SECONDS: f64 = 300.0;
/// `C` in `d_p ≤ C/p`.
const DISTANCE_CONSTANT: f64 = 1.0;
const DISTANCE_ORDER_MIN: f64 = 0.9;
/// Distances below this are at the solver noise floor, where no rate is measurable.
const DISTANCE_NOISE_FLOOR: f64 = 10.0 * FLOW_TOL;
const VARIANCE_ORDER_MIN: f64 = 0.8;
const SOLITON_SECONDS: f64 = 600.0;
const GAP_SLOPE_MAX: f64 = -1.8;
const GAMMA0_TOL: f64 = 1e-9;
const GALERKIN_TOL: f64 = 1e-4;
const GAP_SECONDS: f64 = 300.0;
const DENSITY_ORDER_MIN: f64 = 0.9;
const DENSITY_SECONDS: f64 = 120.0;

struct Run {
    dir: PathBuf,
    code: Option<i32>,
    seconds: f64,
}

/// All workloads at one thread count.
struct Runs {
    verify_cp1: Run,
    verify_dp8: Run,
    xi_cp1: Run,
    xi_cp2: Run,
    xi_dp8: Run,
    balance_cp1: Run,
    balance_dp8: Run,
    spectrum_cp1: Run,
}

impl Runs {
    fn all(&self) -> [(&'static str, &Run); 8] {
        [
            ("verify CP1", &self.verify_cp1),
            ("verify dP8", &self.verify_dp8),
            ("xi CP1", &self.xi_cp1),
            ("xi CP2", &self.xi_cp2),
            ("xi dP8", &self.xi_dp8),
            ("balance CP1", &self.balance_cp1),
            ("balance dP8", &self.balance_dp8),
            ("spectrum CP1", &self.spectrum_cp1),
        ]
    }
}

fn scratch() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().expect("temporary directory"))
        .path()
}

fn run(threads: usize, name: &str, args: &[&str]) -> Run {
    let dir = scratch().join(format!("t{threads}")).join(name);
    let started = Instant::now();
    let status = Command::new(BIN)
        .args(args)
        .arg("--out")
        .arg(&dir)
        .env("QSOL_THREADS", threads.to_string())
        .env("RUST_LOG", "warn")
        .stdout(std::process::Stdio::null())
        .status()
        .expect("qsol runs");
    Run {
        dir,
        code: status.code(),
        seconds: started.elapsed().as_secs_f64(),
    }
}

fn workloads(threads: usize) -> &'static Runs {
    static ONE: OnceLock<Runs> = OnceLock::new();
    static FOUR: OnceLock<Runs> = OnceLock::new();
    let cell = match threads {
        1 => &ONE,
        4 => &FOUR,
        _ => unreachable!("only 1 and 4 threads are exercised"),
    };
    cell.get_or_init(|| Runs {
        verify_cp1: run(
            threads,
            "verify-cp1",
            &["verify", "--manifold", "CP1", "--p", "2,4,8"],
        ),
        verify_dp8: run(
            threads,
            "verify-dp8",
            &["verify", "--manifold", "dP8", "--p", "2,4"],
        ),
        xi_cp1: run(
            threads,
            "xi-cp1",
            &["xi", "--manifold", "CP1", "--p", "1..10"],
        ),
        xi_cp2: run(
            threads,
            "xi-cp2",
            &["xi", "--manifold", "CP2", "--p", "1..10"],
        ),
        xi_dp8: run(
            threads,
            "xi-dp8",
            &["xi", "--manifold", "dP8", "--p", "4..40", "--tol", "1e-12"],
        ),
        // Uniform start so the flow does real work; the reference start is
        // already balanced on the line.
        balance_cp1: run(
            threads,
            "balance-cp1",
            &[
                "balance",
                "--manifold",
                "CP1",
                "--p",
                "2..25",
                "--flow.init",
                "uniform",
            ],
        ),
        balance_dp8: run(
            threads,
            "balance-dp8",
            &["balance", "--manifold", "dP8", "--p", "2..8"],
        ),
        spectrum_cp1: run(
            threads,
            "spectrum-cp1",
            &["spectrum", "--manifold", "CP1", "--p", "5..25"],
        ),
    })
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, String> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        let header = r
            .headers()
            .map_err(|e| e.to_string())?
            .iter()
            .map(String::from)
            .collect();
        let rows = r
            .records()
            .map(|x| x.map(|x| x.iter().map(String::from).collect()))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        Ok(Self { header, rows })
    }

    fn col(&self, name: &str) -> Result<Vec<f64>, String> {
        let j = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or(format!("no column {name}"))?;
        self.rows
            .iter()
            .map(|r| r[j].parse::<f64>().map_err(|e| format!("{name}: {e}")))
            .collect()
    }

    fn text(&self, name: &str) -> Result<Vec<String>, String> {
        let j = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or(format!("no column {name}"))?;
        Ok(self.rows.iter().map(|r| r[j].clone()).collect())
    }

    /// Rows with `lo ≤ p ≤ hi`.
    fn levels(&self, lo: f64, hi: f64) -> Result<Self, String> {
        let ps = self.col("p")?;
        let rows = self
            .rows
            .iter()
            .zip(&ps)
            .filter(|(_, p)| **p >= lo && **p <= hi)
            .map(|(r, _)| r.clone())
            .collect();
        Ok(Self {
            header: self.header.clone(),
            rows,
        })
    }
}

fn table(run: &Run, file: &str) -> Result<Table, String> {
    Table::read(&run.dir.join(file))
}

/// Least-squares slope of `ln y` against `ln x`.
fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `t*` with `ξ_∞ = (t*, t*)` on dP8: the root of `∫_P u₁ e^{t(u₁+u₂)} du`,
/// reduced to the variable `s = u₁ + u₂ ∈ [-1, 1]`.
fn dp8_limit_root() -> f64 {
    let moment = |t: f64| simpson(|s| (t * s).exp() * (s * s + 2.0 * s) / 2.0, -1.0, 1.0, 4000);
    let (mut lo, mut hi) = (-2.0, 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if moment(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn require(ok: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(message())
    }
}

fn exited_ok(run: &Run) -> Result<(), String> {
    require(run.code == Some(0), || {
        format!("{} exited with {:?}", run.dir.display(), run.code)
    })
}

fn criterion_1(r: &Runs) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for run in [&r.verify_cp1, &r.verify_dp8] {
        exited_ok(run)?;
        let text =
            std::fs::read_to_string(run.dir.join("verify.json")).map_err(|e| e.to_string())?;
        let verdict: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        require(verdict["pass"] == serde_json::Value::Bool(true), || {
            "verdict is not pass".into()
        })?;
        let t = table(run, "verify.csv")?;
        let names = t.text("check")?;
        for check in [
            "tuynman",
            "duality",
            "theta_mean_zero",
            "mu_trace",
            "futaki_pairing",
            "channel_unitality",
            "channel_symmetry",
        ] {
            require(names.iter().any(|n| n == check), || {
                format!("{check} missing")
            })?;
        }
        for (name, res) in names.iter().zip(t.col("residual")?) {
            require(res <= IDENTITY_TOL, || format!("{name} residual {res:e}"))?;
            worst = worst.max(res);
            count += 1;
        }
    }
    let seconds = r.verify_cp1.seconds + r.verify_dp8.seconds;
    require(seconds < IDENTITY_SECONDS, || format!("{seconds:.1} s"))?;
    Ok(format!(
        "{count} residuals, max {worst:.2e} <= {IDENTITY_TOL:e}; {seconds:.1} s"
    ))
}

fn criterion_2(r: &Runs) -> Result<String, String> {
    for run in [&r.xi_cp1, &r.xi_cp2] {
        exited_ok(run)?;
        let t = table(run, "xi.csv")?;
        require(t.col("p")?.len() == 10, || "expected p = 1..10".into())?;
        for c in t.header.iter().filter(|h| h.starts_with("xi_")) {
            let worst = t.col(c)?.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            require(worst <= XI_ZERO_TOL, || format!("{c} reaches {worst:e}"))?;
        }
    }
    exited_ok(&r.xi_dp8)?;
    let t = table(&r.xi_dp8, "xi.csv")?;
    let (a, b) = (t.col("xi_1")?, t.col("xi_2")?);
    let asym = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(1.0))
        .fold(0.0, f64::max);
    require(asym <= XI_DIAGONAL_TOL, || {
        format!("xi_p off the diagonal by {asym:e}")
    })?;
    let text = std::fs::read_to_string(r.xi_dp8.dir.join("xi.csv")).map_err(|e| e.to_string())?;
    let limit: Vec<f64> = text
        .lines()
        .find_map(|l| l.strip_prefix("# xi_infinity = "))
        .ok_or("no xi_infinity footer")?
        .split_whitespace()
        .map(|v| v.parse().map_err(|e| format!("{e}")))
        .collect::<Result<_, String>>()?;
    let root = dp8_limit_root();
    let off = limit.iter().map(|v| (v - root).abs()).fold(0.0, f64::max);
    require(off <= XI_LIMIT_TOL, || {
        format!("xi_inf {limit:?} vs oracle t* = {root}")
    })?;
    let ps = t.col("p")?;
    require(
        ps.first() == Some(&4.0) && ps.last() == Some(&40.0) && ps.len() == 37,
        || "expected p = 4..40".into(),
    )?;
    // Gap measured against the oracle, not the solver's own limit.
    let gaps: Vec<f64> = a
        .iter()
        .zip(&b)
        .map(|(x, y)| ((x - root).powi(2) + (y - root).powi(2)).sqrt())
        .collect();
    let s = slope(&ps, &gaps);
    require(s <= XI_SLOPE_MAX, || format!("slope {s:.3}"))?;
    let seconds = r.xi_cp1.seconds + r.xi_cp2.seconds + r.xi_dp8.seconds;
    require(seconds < XI_SECONDS, || format!("{seconds:.1} s"))?;
    Ok(format!("t* = {root:.12}, |xi_inf - oracle| = {off:.1e}, slope {s:.3} <= {XI_SLOPE_MAX}; {seconds:.1} s"))
}

/// Residual and energy checks for one manifold's balance run.
fn flow_checks(run: &Run, max_p: f64) -> Result<String, String> {
    exited_ok(run)?;
    let s = table(run, "balance_summary.csv")?.levels(1.0, max_p)?;
    for (p, ((c, res), it)) in s.col("p")?.iter().zip(
        s.col("converged")?
            .iter()
            .zip(s.col("residual")?)
            .zip(s.col("iterations")?),
    ) {
        require(*c == 1.0 && res <= FLOW_TOL, || {
            format!("p={p}: residual {res:e}")
        })?;
        require(it <= FLOW_MAX_ITER as f64, || {
            format!("p={p}: {it} iterations")
        })?;
    }
    let fut = s
        .col("futaki_xi")?
        .into_iter()
        .chain(s.col("futaki_mu")?)
        .fold(0.0, f64::max);
    require(fut <= FUTAKI_TOL, || format!("|Fut|/p^(n+1) = {fut:e}"))?;
    // Ψ along accepted steps: consecutive states on one grid (dt > 0).
    let h = table(run, "residuals.csv")?.levels(1.0, max_p)?;
    let (ps, psi, dt) = (h.col("p")?, h.col("psi")?, h.col("dt")?);
    let scale = psi.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut rise = f64::NEG_INFINITY;
    let mut steps = 0;
    for i in 1..psi.len() {
        if ps[i] == ps[i - 1] && dt[i] > 0.0 {
            rise = rise.max(psi[i] - psi[i - 1]);
            steps += 1;
        }
    }
    require(rise <= ENERGY_ROUNDOFF * scale, || {
        format!("Psi rose by {rise:e}")
    })?;
    let iters = s.col("iterations")?.iter().fold(0.0f64, |m, v| m.max(*v));
    Ok(format!("max iterations {iters}, |Fut|/p^(n+1) <= {fut:.1e}, {steps} steps with max Psi rise {rise:.1e}"))
}

fn criterion_3(r: &Runs) -> Result<String, String> {
    let cp1 = flow_checks(&r.balance_cp1, 20.0)?;
    let dp8 = flow_checks(&r.balance_dp8, 8.0)?;
    for run in [&r.balance_cp1, &r.balance_dp8] {
        require(run.seconds < FLOW_SECONDS, || {
            format!("{:.1} s", run.seconds)
        })?;
    }
    Ok(format!(
        "CP1 p<=20: {cp1}; dP8 p<=8: {dp8}; {:.1} s / {:.1} s",
        r.balance_cp1.seconds, r.balance_dp8.seconds
    ))
}

fn criterion_4(r: &Runs) -> Result<String, String> {
    exited_ok(&r.balance_cp1)?;
    let s = table(&r.balance_cp1, "balance_summary.csv")?.levels(5.0, 25.0)?;
    let (ps, d) = (s.col("p")?, s.col("distance_sup")?);
    require(ps.len() == 21, || "expected p = 5..25".into())?;
    let bound = ps.iter().zip(&d).map(|(p, d)| p * d).fold(0.0, f64::max);
    require(bound <= DISTANCE_CONSTANT, || {
        format!("max p*d = {bound:e}")
    })?;
    let order = -slope(&ps, &d);
    let floor = d.iter().fold(0.0f64, |m, v| m.max(*v));
    let cp1 = if order >= DISTANCE_ORDER_MIN {
        format!("CP1 order {order:.3}")
    } else if floor <= DISTANCE_NOISE_FLOOR {
        format!("CP1 balanced = round: all d_p <= {floor:.1e} (noise floor {DISTANCE_NOISE_FLOOR:e}), raw order {order:.3}")
    } else {
        return Err(format!(
            "CP1 order {order:.3} < {DISTANCE_ORDER_MIN} with d up to {floor:e}"
        ));
    };
    exited_ok(&r.balance_dp8)?;
    let s = table(&r.balance_dp8, "balance_summary.csv")?.levels(2.0, 8.0)?;
    let (ps, v) = (s.col("p")?, s.col("soliton_variance")?);
    require(ps.len() == 7, || "expected p = 2..8".into())?;
    require(v.windows(2).all(|w| w[1] < w[0]), || {
        format!("variance not decreasing: {v:?}")
    })?;
    let vorder = -slope(&ps, &v);
    require(vorder >= VARIANCE_ORDER_MIN, || {
        format!("dP8 variance order {vorder:.3}")
    })?;
    let seconds = r.balance_cp1.seconds + r.balance_dp8.seconds;
    require(seconds < SOLITON_SECONDS, || format!("{seconds:.1} s"))?;
    Ok(format!("{cp1}, max p*d = {bound:.1e}; dP8 variance order {vorder:.3} >= {VARIANCE_ORDER_MIN}; {seconds:.1} s"))
}

fn criterion_5(r: &Runs) -> Result<String, String> {
    exited_ok(&r.spectrum_cp1)?;
    let t = table(&r.spectrum_cp1, "spectrum.csv")?;
    let (ps, ks, gammas, lambdas) = (t.col("p")?, t.col("k")?, t.col("gamma")?, t.col("lambda")?);
    let mut by_k: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut gamma0: f64 = 0.0;
    let mut galerkin: f64 = 0.0;
    for i in 0..ps.len() {
        let k = ks[i] as usize;
        let reference = (k * (k + 1)) as f64 / 2.0;
        galerkin = galerkin.max((lambdas[i] - reference).abs());
        if k == 0 {
            gamma0 = gamma0.max((gammas[i] - 1.0).abs());
        }
        let e = by_k.entry(k).or_default();
        e.0.push(ps[i]);
        e.1.push((1.0 - gammas[i] - reference / ps[i]).abs());
    }
    require(gamma0 <= GAMMA0_TOL, || {
        format!("|gamma_0 - 1| = {gamma0:e}")
    })?;
    require(galerkin <= GALERKIN_TOL, || {
        format!("Galerkin error {galerkin:e}")
    })?;
    let mut slopes = Vec::new();
    for k in [1usize, 2] {
        let (x, y) = by_k.get(&k).ok_or(format!("no k={k}"))?;
        require(x.len() == 21, || "expected p = 5..25".into())?;
        let s = slope(x, y);
        require(s <= GAP_SLOPE_MAX, || format!("k={k} slope {s:.3}"))?;
        slopes.push(s);
    }
    let seconds = r.spectrum_cp1.seconds;
    require(seconds < GAP_SECONDS, || format!("{seconds:.1} s"))?;
    Ok(format!(
        "slopes k=1 {:.3}, k=2 {:.3} <= {GAP_SLOPE_MAX}; |gamma_0 - 1| {gamma0:.1e}; |lambda_k - k(k+1)/2| {galerkin:.1e}; {seconds:.2} s",
        slopes[0], slopes[1]
    ))
}

fn criterion_6(r: &Runs) -> Result<String, String> {
    exited_ok(&r.spectrum_cp1)?;
    let t = table(&r.spectrum_cp1, "density.csv")?;
    let bergman = -slope(&t.col("p")?, &t.col("bergman_defect")?);
    require(bergman >= DENSITY_ORDER_MIN, || {
        format!("Bergman order {bergman:.3}")
    })?;
    let mut orders = Vec::new();
    for run in [&r.xi_cp1, &r.xi_dp8] {
        exited_ok(run)?;
        let t = table(run, "riemann.csv")?;
        let (ps, etas, gaps) = (t.col("p")?, t.col("eta")?, t.col("gap")?);
        for eta in [1.0, 2.0] {
            let (x, y): (Vec<f64>, Vec<f64>) = (0..ps.len())
                .filter(|&i| etas[i] == eta)
                .map(|i| (ps[i], gaps[i]))
                .unzip();
            let order = -slope(&x, &y);
            require(order >= DENSITY_ORDER_MIN, || {
                format!("Riemann order {order:.3} for eta {eta}")
            })?;
            orders.push(order);
        }
    }
    let seconds = r.spectrum_cp1.seconds + r.xi_cp1.seconds + r.xi_dp8.seconds;
    require(seconds < DENSITY_SECONDS, || format!("{seconds:.1} s"))?;
    Ok(format!(
        "Bergman order {bergman:.3}; F_p orders CP1 {:.3}/{:.3}, dP8 {:.3}/{:.3} >= {DENSITY_ORDER_MIN}; {seconds:.1} s",
        orders[0], orders[1], orders[2], orders[3]
    ))
}

fn csv_payloads(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            out.insert(name, std::fs::read(&path).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

fn criterion_7() -> Result<String, String> {
    let (one, four) = (workloads(1), workloads(4));
    let mut files = 0;
    for ((name, a), (_, b)) in one.all().iter().zip(four.all().iter()) {
        let (pa, pb) = (csv_payloads(&a.dir)?, csv_payloads(&b.dir)?);
        require(!pa.is_empty(), || format!("{name}: no CSV output"))?;
        require(pa.keys().eq(pb.keys()), || {
            format!("{name}: different file sets")
        })?;
        for (file, bytes) in &pa {
            require(pb[file] == *bytes, || {
                format!("{name}: {file} differs between 1 and 4 threads")
            })?;
            files += 1;
        }
    }
    Ok(format!(
        "{files} CSV files byte-identical under QSOL_THREADS 1 and 4"
    ))
}

type Criterion = Box<dyn Fn() -> Result<String, String>>;

fn main() {
    let runs = workloads(1);
    let criteria: [(&str, Criterion); 7] = [
        ("1 exact identities", Box::new(|| criterion_1(runs))),
        ("2 soliton vector fields", Box::new(|| criterion_2(runs))),
        ("3 balancing flow", Box::new(|| criterion_3(runs))),
        (
            "4 convergence to the soliton",
            Box::new(|| criterion_4(runs)),
        ),
        ("5 spectral gap", Box::new(|| criterion_5(runs))),
        ("6 semiclassical densities", Box::new(|| criterion_6(runs))),
        ("7 determinism", Box::new(criterion_7)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    // Statics are never dropped; clear the run directories by hand.
    let _ = std::fs::remove_dir_all(scratch());
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
