use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gridopf::chance::compute_alpha;
use gridopf::sim::{
    compare_cases, emit_outputs, load_inputs, run_scenario_with, write_comparison, CaseMode, Comparison, Overrides,
    Scenario, SimError, StepOptions, StepRecord,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(name = "gridopf", version, about = "Chance-constrained OPF for three-phase distribution feeders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Inputs {
    /// Grid JSON; defaults to the scenario's `grid` entry.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    scenario: PathBuf,
    /// Chance-constraint probability level.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of steps to run, at most the scenario horizon.
    #[arg(long)]
    horizon: Option<usize>,
}

impl Inputs {
    fn load(&self, case: Option<CaseMode>) -> Result<Scenario, SimError> {
        let ov = Overrides {
            beta: self.beta,
            case,
            seed: self.seed,
            horizon: self.horizon,
        };
        load_inputs(self.grid.as_deref(), &self.scenario, &ov)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one case over the horizon and write reports.
    Run {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum)]
        case: Option<CaseMode>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Write every step's program and solution under `<out>/programs`.
        #[arg(long)]
        dump_program: bool,
    },
    /// Run both cases on the same seed and write a comparison.
    Compare {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Write every step's program and solution under `<out>/<case>/programs`.
        #[arg(long)]
        dump_program: bool,
    },
    /// Print the tightening factor for a probability level.
    Alpha {
        #[arg(long)]
        beta: f64,
    },
    /// Run the covariance-aware case and Monte-Carlo check every step's band probability.
    Verify {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
}

fn failed_steps(records: &[StepRecord]) -> usize {
    records.iter().filter(|r| !r.status.applied()).count()
}

fn report(path: &Path, case: &str, s: &gridopf::sim::Summary) {
    println!(
        "{case}: violations={} worst_excursion={:.6} dg_used={:.4}/{:.4} curtailed_steps={} -> {}",
        s.violations,
        s.worst_excursion,
        s.dg_energy_used,
        s.dg_energy_available,
        s.curtailed_steps,
        path.display()
    );
}

fn execute(cmd: Command) -> Result<u8, SimError> {
    match cmd {
        Command::Run {
            inputs,
            case,
            out,
            dump_program,
        } => {
            let scn = inputs.load(case)?;
            let opts = StepOptions {
                dump_program,
                ..StepOptions::default()
            };
            let records = run_scenario_with(&scn, &opts);
            let summary = emit_outputs(&scn, &records, &out)?;
            report(&out, scn.case.label(), &summary);
            Ok(if failed_steps(&records) > 0 { EXIT_SOLVER } else { 0 })
        }
        Command::Compare {
            inputs,
            out,
            dump_program,
        } => {
            let scn = inputs.load(None)?;
            let opts = StepOptions {
                dump_program,
                ..StepOptions::default()
            };
            let (with, without) = compare_cases(&scn, &opts);
            let mut summaries = Vec::new();
            for (case, records) in [(CaseMode::WithCov, &with), (CaseMode::NoCov, &without)] {
                let scn = Scenario { case, ..scn.clone() };
                let dir = out.join(case.label());
                let s = emit_outputs(&scn, records, &dir)?;
                report(&dir, case.label(), &s);
                summaries.push(s);
            }
            let no_cov = summaries.pop().expect("two cases");
            let with_cov = summaries.pop().expect("two cases");
            write_comparison(&Comparison { with_cov, no_cov }, &out)?;
            Ok(if failed_steps(&with) + failed_steps(&without) > 0 { EXIT_SOLVER } else { 0 })
        }
        Command::Alpha { beta } => match compute_alpha(beta) {
            Ok(a) => {
                println!("{a:.6}");
                Ok(0)
            }
            Err(e) => {
                eprintln!("error: {e}");
                Ok(EXIT_CONFIG)
            }
        },
        Command::Verify { inputs, samples } => {
            if samples == 0 {
                eprintln!("error: --samples must be positive");
                return Ok(EXIT_CONFIG);
            }
            let scn = inputs.load(Some(CaseMode::WithCov))?;
            let opts = StepOptions {
                verify_samples: Some(samples),
                ..StepOptions::default()
            };
            let records = run_scenario_with(&scn, &opts);
            let stderr = (scn.beta * (1.0 - scn.beta) / samples as f64).sqrt();
            let threshold = scn.beta - 3.0 * stderr;
            let mut below = 0;
            println!("t,status,min_probability");
            for r in &records {
                let p = r.min_probability;
                if p.is_some_and(|p| p < threshold) {
                    below += 1;
                }
                let shown = p.map_or_else(|| "nan".to_string(), |p| format!("{p:.6}"));
                println!("{},{},{shown}", r.t, r.status.label());
            }
            println!("threshold={threshold:.6} below={below} failed={}", failed_steps(&records));
            Ok(if below > 0 || failed_steps(&records) > 0 { EXIT_SOLVER } else { 0 })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
