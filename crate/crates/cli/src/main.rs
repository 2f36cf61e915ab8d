use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qsynth_cli::{cmd_models, cmd_region, cmd_simulate, cmd_synth, CliError, RunConfig, SimArgs};
use qsynth_core::abstraction::{SuccessorMode, Variant};
use qsynth_core::models::BuckParams;
use qsynth_core::simulator::Disturbance;

#[derive(Parser)]
#[command(name = "qsynth", version, about = "Quantized controller synthesis for discrete time linear hybrid systems")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the abstraction, synthesize, emit the controller and reports.
    Synth(Common),
    /// Run a generated controller in closed loop.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Generated controller source.
        #[arg(long)]
        controller: PathBuf,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// Monte-Carlo trials from random controllable states; 0 writes one full trace.
        #[arg(long, default_value_t = 0)]
        trials: usize,
        /// Initial state for a single run, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        initial: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = DisturbanceArg::Nominal)]
        disturbance: DisturbanceArg,
        /// Count trials reaching the goal later than this many steps.
        #[arg(long)]
        goal_bound: Option<usize>,
    },
    /// Dump the controllable region of a generated controller.
    Region {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        controller: PathBuf,
    },
    /// List the built-in models.
    Models,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Max,
    Min,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuccessorArg {
    Box,
    Exact,
}

#[derive(Clone, Copy, ValueEnum)]
enum DisturbanceArg {
    Nominal,
    PerTrial,
    PerStep,
}

#[derive(Args)]
struct Common {
    /// Built-in model name (see `qsynth models`) or a .json model file.
    #[arg(long, default_value = "buck")]
    model: String,
    /// AD bits per state variable.
    #[arg(long, default_value_t = 6)]
    bits: u32,
    /// Number of switches of a multi-input model.
    #[arg(long)]
    inputs: Option<usize>,
    #[arg(long, default_value_t = 5.0, allow_hyphen_values = true)]
    goal_vref: f64,
    #[arg(long, default_value_t = 0.5)]
    goal_eps: f64,
    /// State variable the goal band constrains.
    #[arg(long)]
    goal_var: Option<String>,
    #[arg(long, value_enum, default_value_t = VariantArg::Min)]
    variant: VariantArg,
    /// Successor computation: bounding box, or box filtered cell by cell.
    #[arg(long, value_enum, default_value_t = SuccessorArg::Box)]
    successors: SuccessorArg,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Branch-and-bound node budget per MILP query.
    #[arg(long, default_value_t = 1_000_000)]
    budget_nodes: u64,
    /// JSON file overriding converter parameters.
    #[arg(long)]
    params: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<RunConfig, CliError> {
        let params = match &self.params {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str::<BuckParams>(&text)?
            }
            None => BuckParams::default(),
        };
        Ok(RunConfig {
            model: self.model.clone(),
            inputs: self.inputs,
            bits: self.bits,
            goal_vref: self.goal_vref,
            goal_eps: self.goal_eps,
            goal_var: self.goal_var.clone(),
            variant: match self.variant {
                VariantArg::Max => Variant::Maximum,
                VariantArg::Min => Variant::Minimum,
            },
            successors: match self.successors {
                SuccessorArg::Box => SuccessorMode::Box,
                SuccessorArg::Exact => SuccessorMode::Exact,
            },
            budget_nodes: self.budget_nodes,
            seed: self.seed,
            params,
            jobs: self.jobs,
            out: self.out.clone(),
        })
    }
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.cmd {
        Command::Synth(c) => {
            let r = cmd_synth(&c.config()?)?;
            println!(
                "μ = {}  controllable = {}  max_rank = {}  config_hash = {}",
                r.outcome, r.controllable, r.max_rank, r.config_hash
            );
            println!("controller: {}", r.source.display());
            Ok(r.exit_code)
        }
        Command::Simulate { common, controller, steps, trials, initial, disturbance, goal_bound } => {
            let args = SimArgs {
                controller,
                steps,
                trials,
                initial,
                disturbance: match disturbance {
                    DisturbanceArg::Nominal => Disturbance::Nominal,
                    DisturbanceArg::PerTrial => Disturbance::PerTrial,
                    DisturbanceArg::PerStep => Disturbance::PerStep,
                },
                goal_bound,
            };
            let r = cmd_simulate(&common.config()?, &args)?;
            let s = &r.summary;
            println!(
                "trials = {}  safety_violations = {}  faults = {}  reached_goal = {}",
                s.trials, s.safety_violations, s.faults, s.reached_goal
            );
            Ok(r.exit_code)
        }
        Command::Region { common, controller } => {
            let n = cmd_region(&common.config()?, &controller)?;
            println!("controllable cells = {n}");
            Ok(0)
        }
        Command::Models => {
            print!("{}", cmd_models());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QSYNTH_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("qsynth: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
