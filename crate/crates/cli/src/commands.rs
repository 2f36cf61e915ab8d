use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::Serialize;

use qsynth_core::abstraction::{build, peak_rss_bytes, BuildOptions};
use qsynth_core::codegen::{compile, compile_region, decode_action, emit_source, parse_source, SourceHeader, Stmt};
use qsynth_core::models::BUILTIN_NAMES;
use qsynth_core::quantization::{all_actions, Cell, QuantAction};
use qsynth_core::simulator::{monte_carlo, run, ControlLaw, Disturbance, MonteCarloConfig, MonteCarloSummary, SimConfig};
use qsynth_core::synthesis::{synthesize, Outcome, RegionCells, GOAL_TOO_FINE};

use crate::config::{Resolved, RunConfig};
use crate::report::{self, StatsRow, TextReport};
use crate::{CliError, EXIT_NO_GOAL, EXIT_UNSAFE};

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// User plus system CPU time of this process.
fn cpu_secs() -> f64 {
    // SAFETY: getrusage only writes into the zeroed struct we hand it.
    let mut ru: libc::rusage = unsafe { std::mem::zeroed() };
    if unsafe { libc::getrusage(libc::RUSAGE_SELF, &mut ru) } != 0 {
        return 0.0;
    }
    let tv = |t: libc::timeval| t.tv_sec as f64 + t.tv_usec as f64 * 1e-6;
    tv(ru.ru_utime) + tv(ru.ru_stime)
}

#[derive(Serialize)]
struct PersistedConfig<'a> {
    config_hash: &'a str,
    model_hash: &'a str,
    model: &'a str,
    config: &'a RunConfig,
}

fn write_config(dir: &Path, cfg: &RunConfig, r: &Resolved) -> Result<(), CliError> {
    let p = PersistedConfig { config_hash: &r.config_hash, model_hash: &r.model_hash, model: &r.model_name, config: cfg };
    let mut text = serde_json::to_string_pretty(&p)?;
    text.push('\n');
    report::write_text(&dir.join("config.json"), &text)
}

/// File-name stem for generated sources: `buck_8bits`, `multibuck-3_4bits`.
pub fn source_stem(model: &str, bits: u32) -> String {
    let base = Path::new(model).file_stem().and_then(|s| s.to_str()).unwrap_or(model);
    let clean: String = base.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' }).collect();
    format!("{clean}_{bits}bits")
}

#[derive(Debug, Clone)]
pub struct SynthReport {
    pub outcome: Outcome,
    pub exit_code: i32,
    pub config_hash: String,
    pub controllable: usize,
    pub max_rank: u32,
    pub source: PathBuf,
}

/// Abstraction, synthesis, code generation and every report for one config.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthReport, CliError> {
    let r = cfg.resolve()?;
    let out = &cfg.out;
    prepare_out(out)?;
    write_config(out, cfg, &r)?;
    info!("synth {} b={} hash={}", r.model_name, cfg.bits, r.config_hash);

    let wall = Instant::now();
    let cpu0 = cpu_secs();
    let opts = BuildOptions { mode: cfg.successors, jobs: cfg.jobs.max(1) };
    let (abs, mut stats) = build(&r.h, &r.schema, cfg.variant, &r.solver, opts)?;
    let regions = RegionCells::resolve(&r.h, &abs, &r.regions, &r.solver)?;
    let k = synthesize(&abs, &regions);
    let law = compile(&k, &r.schema);
    let region = compile_region(&k, &r.schema);
    let header = SourceHeader { model: r.model_name.clone(), model_hash: r.model_hash.clone(), goal: r.goal_text.clone() };
    let src = emit_source(&law, &region, &header);
    let cpu = cpu_secs() - cpu0;
    let wall = wall.elapsed().as_secs_f64();
    // Region queries run after the build, so take the totals from the solver.
    stats.milp = r.solver.stats_snapshot();
    info!("{}: {} of {} cells controllable, max rank {}", k.outcome, k.controllable_count(), abs.num_cells(), k.max_rank());
    if abs.unresolved > 0 {
        warn!("{} MILP queries hit the node budget and were answered conservatively", abs.unresolved);
    }

    let names = r.h.state_names();
    let source = out.join(format!("{}_controller.c", source_stem(&r.model_name, cfg.bits)));
    report::write_text(&source, &src)?;
    let row = StatsRow {
        hash: &r.config_hash,
        model: &r.model_name,
        bits: cfg.bits,
        inputs: r.h.inputs.len(),
        stats: &stats,
        k_lines: src.lines().count(),
        k: &k,
        cells: abs.num_cells(),
        unresolved: abs.unresolved,
    };
    report::write_stats(&out.join("stats.csv"), &row)?;
    report::write_milp(&out.join("milp.csv"), &r.config_hash, &stats)?;
    report::write_abstraction(&out.join("abstraction.csv"), &r.config_hash, &names, &abs)?;
    report::write_controller(&out.join("controller.csv"), &r.config_hash, &names, &r.schema, &k)?;
    report::write_region(&out.join("region.csv"), &r.config_hash, &names, &r.schema, |c| {
        k.is_controllable(r.schema.linear_index(c))
    })?;
    let text = report::text_report(&TextReport {
        row: &row,
        model_hash: &r.model_hash,
        goal: &r.goal_text,
        cpu_secs: cpu,
        wall_secs: wall,
        mem_bytes: peak_rss_bytes(),
        diagnostic: k.diagnostic.as_deref(),
        tree_depth: law.depth(),
    });
    report::write_text(&out.join("report.txt"), &text)?;

    let no_goal = k.outcome == Outcome::NoSol && k.diagnostic.as_deref() == Some(GOAL_TOO_FINE);
    Ok(SynthReport {
        outcome: k.outcome,
        exit_code: if no_goal { EXIT_NO_GOAL } else { 0 },
        config_hash: r.config_hash,
        controllable: k.controllable_count(),
        max_rank: k.max_rank(),
        source,
    })
}

/// Generated controller as read back from its source file.
pub struct SourceLaw {
    law: Stmt,
    region: Stmt,
    actions: Vec<QuantAction>,
}

impl SourceLaw {
    pub fn in_region(&self, cell: &Cell) -> bool {
        self.region.eval(&cell.0).0 == 1
    }
}

impl ControlLaw for SourceLaw {
    fn controllable(&self, cell: &Cell) -> bool {
        self.in_region(cell)
    }

    fn action(&self, cell: &Cell) -> Option<QuantAction> {
        decode_action(self.law.eval(&cell.0).0, &self.actions).map(|a| self.actions[a].clone())
    }
}

fn header_field<'a>(src: &'a str, key: &str) -> Option<&'a str> {
    src.lines()
        .take_while(|l| l.starts_with("/*"))
        .find_map(|l| l.strip_prefix("/* ")?.strip_suffix(" */")?.strip_prefix(key)?.strip_prefix(": "))
}

/// Loads a controller source and checks it belongs to the resolved config.
fn load_controller(path: &Path, r: &Resolved) -> Result<SourceLaw, CliError> {
    let src = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let found = header_field(&src, "model hash").unwrap_or("").to_string();
    if found != r.model_hash {
        return Err(CliError::HashMismatch { expected: r.model_hash.clone(), found });
    }
    let bits: Vec<String> = r.schema.bits.iter().map(u32::to_string).collect();
    let found_bits = header_field(&src, "bits").unwrap_or("");
    if found_bits != bits.join(",") {
        return Err(CliError::Usage(format!("controller was generated for {found_bits} bits, config has {}", bits.join(","))));
    }
    let mut fns: HashMap<String, Stmt> = parse_source(&src)?;
    let mut take = |name: &str| fns.remove(name).ok_or_else(|| qsynth_core::codegen::ParseError::Missing(name.into()));
    let law = take("control_law")?;
    let region = take("controllable_region")?;
    Ok(SourceLaw { law, region, actions: all_actions(r.h.inputs.len()) })
}

#[derive(Debug, Clone)]
pub struct SimArgs {
    pub controller: PathBuf,
    pub steps: usize,
    /// 0 = one trajectory with a full trace.
    pub trials: usize,
    pub initial: Option<Vec<f64>>,
    pub disturbance: Disturbance,
    pub goal_bound: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub summary: MonteCarloSummary,
    pub exit_code: i32,
}

fn disturbance_name(d: Disturbance) -> &'static str {
    match d {
        Disturbance::Nominal => "nominal",
        Disturbance::PerTrial => "per-trial",
        Disturbance::PerStep => "per-step",
    }
}

/// Closed-loop simulation of a generated controller against the concrete model.
pub fn cmd_simulate(cfg: &RunConfig, args: &SimArgs) -> Result<SimReport, CliError> {
    let r = cfg.resolve()?;
    let law = load_controller(&args.controller, &r)?;
    prepare_out(&cfg.out)?;
    let names = r.h.state_names();
    let start: Vec<usize> =
        r.schema.enumerate_cells().enumerate().filter(|(_, c)| law.in_region(c)).map(|(i, _)| i).collect();
    let mc = MonteCarloConfig {
        trials: args.trials.max(1),
        steps: args.steps,
        disturbance: args.disturbance,
        seed: cfg.seed,
        jobs: cfg.jobs.max(1),
        goal_bound: args.goal_bound,
    };

    let summary = if args.trials == 0 {
        let trace = match &args.initial {
            Some(x0) => {
                let sc = SimConfig { steps: args.steps, initial: x0.clone(), disturbance: args.disturbance, seed: cfg.seed, stream: 1 };
                run(&r.plant, &law, &r.schema, &r.regions.goal, &sc)?
            }
            None => {
                if start.is_empty() {
                    return Err(CliError::Usage("controllable region is empty; pass --initial to simulate anyway".into()));
                }
                monte_carlo(&r.plant, &law, &start, &r.schema, &r.regions.goal, &mc)?.1.remove(0)
            }
        };
        report::write_trace(&cfg.out.join("trace.csv"), &r.config_hash, &names, &trace)?;
        summarize(&trace, args.goal_bound)
    } else {
        if args.initial.is_some() {
            return Err(CliError::Usage("--initial applies to single runs, not --trials".into()));
        }
        if start.is_empty() {
            return Err(CliError::Usage("controllable region is empty; nothing to sample".into()));
        }
        let (s, traces) = monte_carlo(&r.plant, &law, &start, &r.schema, &r.regions.goal, &mc)?;
        report::write_trials(&cfg.out.join("trials.csv"), &r.config_hash, &names, &traces)?;
        s
    };
    let text = report::sim_summary(&r.config_hash, &r.model_hash, &summary, args.steps, disturbance_name(args.disturbance));
    report::write_text(&cfg.out.join("summary.txt"), &text)?;
    info!("{} trials, {} violations, {} faults", summary.trials, summary.safety_violations, summary.faults);
    let exit_code = if summary.safety_violations > 0 { EXIT_UNSAFE } else { 0 };
    Ok(SimReport { summary, exit_code })
}

fn summarize(t: &qsynth_core::simulator::SimTrace, bound: Option<usize>) -> MonteCarloSummary {
    let reached = usize::from(t.goal_step.is_some());
    MonteCarloSummary {
        trials: 1,
        safety_violations: usize::from(t.safety_violation),
        faults: usize::from(t.fault),
        reached_goal: reached,
        goal_reach_rate: reached as f64,
        max_steps_to_goal: t.goal_step,
        late: usize::from(match (bound, t.goal_step) {
            (Some(b), Some(g)) => g > b,
            (Some(_), None) => true,
            (None, _) => false,
        }),
    }
}

/// Region CSV recomputed from a generated controller; returns the number of
/// controllable cells.
pub fn cmd_region(cfg: &RunConfig, controller: &Path) -> Result<usize, CliError> {
    let r = cfg.resolve()?;
    let law = load_controller(controller, &r)?;
    prepare_out(&cfg.out)?;
    let names = r.h.state_names();
    report::write_region(&cfg.out.join("region.csv"), &r.config_hash, &names, &r.schema, |c| law.in_region(c))
}

pub fn cmd_models() -> String {
    let mut out = String::new();
    for n in BUILTIN_NAMES {
        out.push_str(n);
        out.push('\n');
    }
    out.push_str("<path>.json (model file)\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems() {
        assert_eq!(source_stem("buck", 8), "buck_8bits");
        assert_eq!(source_stem("multibuck:3", 4), "multibuck-3_4bits");
        assert_eq!(source_stem("models/toy.json", 2), "toy_2bits");
    }

    #[test]
    fn header_fields() {
        let src = "/* model: toy */\n/* model hash: abc */\n/* bits: 2 */\n#define FAULT (-1)\n";
        assert_eq!(header_field(src, "model hash"), Some("abc"));
        assert_eq!(header_field(src, "bits"), Some("2"));
        assert_eq!(header_field(src, "goal"), None);
    }
}
