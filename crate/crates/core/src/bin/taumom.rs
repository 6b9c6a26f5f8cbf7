use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::SystemTime;

use clap::{Parser, Subcommand, ValueEnum};

use tau_moments::cli::{self, EXIT_CONFIG, EXIT_PASS};
use tau_moments::config::{Format, MonteCarloRequest, PolysPayload, ProbPayload, RunConfig};
use tau_moments::inner_product::Domain;
use tau_moments::mops::MopsKind;
use tau_moments::report::VerificationReport;
use tau_moments::scenarios::ScenarioName;
use tau_moments::Error;

#[derive(Parser)]
#[command(name = "taumom", version, about = "Tau functions of block moment matrices and their identities")]
struct Args {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides every tolerance.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Leave timestamps and wall times out of reports.
    #[arg(long, global = true)]
    no_timestamps: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Random sweeps over every identity family.
    Verify,
    /// A preset with its special identities.
    Scenario {
        #[arg(value_parser = parse_name)]
        name: Option<ScenarioName>,
    },
    /// Coefficient tables of a preset's polynomials.
    Polys {
        #[arg(value_parser = parse_name)]
        preset: Option<ScenarioName>,
        /// Composition `m = n = (n)`.
        #[arg(long)]
        n: Option<usize>,
        /// type_i, type_ii, dual_type_i or dual_type_ii; all when absent.
        #[arg(long = "kind", value_parser = parse_kind)]
        kinds: Vec<MopsKind>,
    },
    /// Non-intersection probability of Brownian bridges.
    Prob {
        #[arg(long, value_parser = parse_name)]
        preset: Option<ScenarioName>,
        /// Every window is the whole line.
        #[arg(long)]
        whole_line: bool,
        /// Accepted Monte-Carlo paths; no Monte Carlo when absent.
        #[arg(long)]
        mc: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn parse_name(s: &str) -> Result<ScenarioName, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_kind(s: &str) -> Result<MopsKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn load(args: &Args) -> Result<RunConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.tolerance {
        cfg.tolerance = Some(t);
    }
    if let Some(f) = args.format {
        cfg.format = match f {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
        };
    }
    if let Some(o) = &args.out {
        cfg.output = Some(o.clone());
    }
    match &args.command {
        Command::Polys { preset, n, kinds } => {
            let pl = cfg.polys.get_or_insert_with(|| PolysPayload {
                preset: ScenarioName::Gue,
                n: None,
                composition: None,
                times: None,
                geometry: None,
                kinds: Vec::new(),
            });
            if let Some(p) = preset {
                pl.preset = *p;
            }
            if n.is_some() {
                pl.n = *n;
                pl.composition = None;
            }
            if !kinds.is_empty() {
                pl.kinds = kinds.clone();
            }
            if pl.kinds.is_empty() {
                pl.kinds = vec![MopsKind::TypeI, MopsKind::TypeII, MopsKind::DualTypeI, MopsKind::DualTypeII];
            }
        }
        Command::Prob {
            preset,
            whole_line,
            mc,
            steps,
        } => {
            let pl = cfg.prob.get_or_insert_with(ProbPayload::default);
            if preset.is_some() {
                pl.preset = *preset;
                pl.geometry = None;
            }
            if *whole_line {
                let mut g = pl.resolved_geometry()?;
                g.windows = vec![Domain::real_line(); g.slices.len()];
                pl.geometry = Some(g);
            }
            if mc.is_some() || steps.is_some() {
                let req = pl.monte_carlo.get_or_insert_with(MonteCarloRequest::default);
                if let Some(a) = mc {
                    req.accepted = *a;
                }
                if let Some(s) = steps {
                    req.steps = *s;
                }
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(cfg: &RunConfig, text: &str) -> Result<(), Error> {
    match &cfg.output {
        Some(path) => fs::write(path, text).map_err(|e| Error::ConfigInvalid(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_report(cfg: &RunConfig, mut report: VerificationReport, stamp: bool) -> Result<i32, Error> {
    if stamp {
        report.generated_at = Some(humantime::format_rfc3339_seconds(SystemTime::now()).to_string());
    } else {
        report.strip_timing();
    }
    let text = match cfg.format {
        Format::Json => report.to_json() + "\n",
        Format::Csv => report.to_csv(),
    };
    emit(cfg, &text)?;
    let s = &report.summary;
    eprintln!(
        "taumom: {}/{} checks passed; worst {} at {:.3e} of tolerance",
        s.passed,
        s.total,
        s.worst_id.as_deref().unwrap_or("-"),
        s.worst_ratio
    );
    Ok(cli::report_exit_code(&report))
}

fn run(args: &Args) -> Result<i32, Error> {
    let cfg = load(args)?;
    let stamp = !args.no_timestamps;
    match &args.command {
        Command::Verify => emit_report(&cfg, cli::cmd_verify(&cfg)?, stamp),
        Command::Scenario { name } => emit_report(&cfg, cli::cmd_scenario(&cfg, *name)?, stamp),
        Command::Polys { .. } => {
            let sols = cli::cmd_polys(&cfg)?;
            let text = match cfg.format {
                Format::Csv => cli::polys_csv(&sols),
                Format::Json => serde_json::to_string_pretty(&sols).expect("polynomials serialise") + "\n",
            };
            emit(&cfg, &text)?;
            Ok(EXIT_PASS)
        }
        Command::Prob { .. } => {
            let out = cli::cmd_prob(&cfg)?;
            let text = match cfg.format {
                Format::Csv => out.to_csv(),
                Format::Json => serde_json::to_string_pretty(&out).expect("result serialises") + "\n",
            };
            emit(&cfg, &text)?;
            Ok(EXIT_PASS)
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = args.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("taumom: error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }
    let code = match run(&args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("taumom: error: {e}");
            cli::exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
