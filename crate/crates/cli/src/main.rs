use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, Command};

use qsol::config::{defaults_text, load_config, Mode, KEYS};
use qsol::error::{CliError, ConfigError};

fn command() -> Command {
    let modes: Vec<&'static str> = Mode::ALL.iter().map(|m| m.name()).collect();
    let mut cmd = Command::new("qsol")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Balanced metrics, soliton fields and quantum channel spectra on toric Fano manifolds")
        .after_help("Exit codes: 0 success, 1 check failure, 2 usage, 3 numeric failure.\nQSOL_THREADS caps the worker threads.")
        .arg(Arg::new("command").value_name("COMMAND").value_parser(modes).help("subcommand; overrides `mode`"))
        .arg(Arg::new("config").long("config").value_name("FILE").help("key = value file applied before flags"))
        .arg(Arg::new("tol").long("tol").value_name("TOL").help("solver.tol for xi, flow.tol for balance"))
        .arg(Arg::new("print-defaults").long("print-defaults").action(ArgAction::SetTrue).help("print every key with its default"));
    for (key, default, doc) in KEYS {
        cmd = cmd.arg(
            Arg::new(*key)
                .long(*key)
                .value_name("VALUE")
                .help(format!("{doc} [default: {default}]")),
        );
    }
    cmd
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(text) = std::env::var("QSOL_THREADS") else {
        return Ok(());
    };
    let threads: usize = text.parse().ok().filter(|t| *t > 0).ok_or_else(|| {
        ConfigError::Usage(format!(
            "QSOL_THREADS must be a positive integer, got `{text}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Numeric(format!("cannot start thread pool: {e}")))
}

fn run() -> Result<(), CliError> {
    let matches = command().try_get_matches().map_err(|e| {
        if matches!(
            e.kind(),
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
        ) {
            let _ = e.print();
            std::process::exit(0);
        }
        let text = e.render().to_string();
        ConfigError::Usage(
            text.strip_prefix("error: ")
                .unwrap_or(&text)
                .trim_end()
                .to_string(),
        )
    })?;
    if matches.get_flag("print-defaults") {
        print!("{}", defaults_text());
        return Ok(());
    }
    let mut overrides: Vec<(String, String)> = KEYS
        .iter()
        .filter_map(|(k, _, _)| {
            matches
                .get_one::<String>(k)
                .map(|v| (k.to_string(), v.clone()))
        })
        .collect();
    if let Some(c) = matches.get_one::<String>("command") {
        if let Some((_, m)) = overrides.iter().find(|(k, _)| k == "mode") {
            if m != c {
                return Err(ConfigError::Usage(format!(
                    "subcommand `{c}` conflicts with --mode {m}"
                ))
                .into());
            }
        }
        overrides.push(("mode".into(), c.clone()));
    }
    let file = matches.get_one::<String>("config").map(PathBuf::from);
    if let Some(tol) = matches.get_one::<String>("tol") {
        let mode = load_config(file.as_deref(), &overrides)?.mode;
        let key = match mode {
            Mode::Xi => "solver.tol",
            Mode::Balance => "flow.tol",
            m => {
                return Err(ConfigError::Usage(format!(
                    "--tol is ambiguous for `{m}`; use a dotted key"
                ))
                .into())
            }
        };
        overrides.push((key.into(), tol.clone()));
    }
    let cfg = load_config(file.as_deref(), &overrides)?;
    configure_threads()?;
    qsol::run(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
