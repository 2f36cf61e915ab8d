//! CSV and text artifacts. Everything in a CSV is a pure function of the
//! configuration; timings and memory only go to the text report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use qsynth_core::abstraction::{AbstractionStats, ControlAbstraction};
use qsynth_core::milp::NUM_KINDS;
use qsynth_core::quantization::{action_bits, Cell, QuantSchema};
use qsynth_core::simulator::{MonteCarloSummary, SimTrace};
use qsynth_core::synthesis::Controller;

use crate::CliError;

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    let f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn cell_tuple(c: &Cell) -> String {
    c.0.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

fn cell_header(names: &[&str]) -> Vec<String> {
    names.iter().map(|n| format!("cell_{n}")).collect()
}

pub(crate) struct StatsRow<'a> {
    pub hash: &'a str,
    pub model: &'a str,
    pub bits: u32,
    pub inputs: usize,
    pub stats: &'a AbstractionStats,
    pub k_lines: usize,
    pub k: &'a Controller,
    pub cells: usize,
    pub unresolved: u64,
}

pub(crate) fn write_stats(path: &Path, r: &StatsRow<'_>) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record([
        "config_hash", "model", "b", "n", "Arcs", "MaxLoops", "LoopFrac", "|K|", "μ", "cells", "admissible",
        "controllable", "max_rank", "unresolved",
    ])?;
    w.write_record([
        r.hash.to_string(),
        r.model.to_string(),
        r.bits.to_string(),
        r.inputs.to_string(),
        r.stats.arcs.to_string(),
        r.stats.max_loops.to_string(),
        format!("{:.6}", r.stats.loop_frac),
        r.k_lines.to_string(),
        r.k.outcome.to_string(),
        r.cells.to_string(),
        r.stats.admissible_cells.to_string(),
        r.k.controllable_count().to_string(),
        r.k.max_rank().to_string(),
        r.unresolved.to_string(),
    ])?;
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub(crate) fn write_milp(path: &Path, hash: &str, stats: &AbstractionStats) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["config_hash", "kind", "Num"])?;
    for kind in 1..=NUM_KINDS as u8 {
        w.write_record([hash.to_string(), kind.to_string(), stats.milp.kind(kind).count.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub(crate) fn write_abstraction(path: &Path, hash: &str, names: &[&str], abs: &ControlAbstraction) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let mut head = vec!["config_hash".to_string()];
    head.extend(cell_header(names));
    head.extend(["action", "successors", "self_loop", "kept"].map(String::from));
    w.write_record(&head)?;
    for (c, row) in abs.transitions.iter().enumerate() {
        let cell = abs.schema.from_linear(c);
        for (a, t) in row.iter().enumerate() {
            let Some(t) = t else { continue };
            let mut succ: Vec<String> =
                t.successors.iter().map(|&s| format!("({})", cell_tuple(&abs.schema.from_linear(s as usize)))).collect();
            if t.unsafe_exit {
                succ.push("UNSAFE".into());
            }
            let mut rec = vec![hash.to_string()];
            rec.extend(cell.0.iter().map(u32::to_string));
            rec.push(action_bits(&abs.actions[a]));
            rec.push(succ.join(" "));
            rec.push(u8::from(t.self_loop).to_string());
            rec.push(u8::from(t.keeps_loop(abs.variant)).to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub(crate) fn write_controller(path: &Path, hash: &str, names: &[&str], schema: &QuantSchema, k: &Controller) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let mut head = vec!["config_hash".to_string()];
    head.extend(cell_header(names));
    head.extend(["action", "rank"].map(String::from));
    w.write_record(&head)?;
    for &c in k.enabled.keys() {
        let c = c as usize;
        let a = k.chosen(c).expect("controllable cells have an action");
        let mut rec = vec![hash.to_string()];
        rec.extend(schema.from_linear(c).0.iter().map(u32::to_string));
        rec.push(action_bits(&k.actions[a]));
        rec.push(k.rank[c].expect("controllable cells are ranked").to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

/// One row per cell: indices, box corners, controllable flag.
pub(crate) fn write_region(
    path: &Path,
    hash: &str,
    names: &[&str],
    schema: &QuantSchema,
    controllable: impl Fn(&Cell) -> bool,
) -> Result<usize, CliError> {
    let mut w = writer(path)?;
    let mut head = vec!["config_hash".to_string()];
    head.extend(cell_header(names));
    for n in names {
        head.push(format!("{n}_lo"));
        head.push(format!("{n}_hi"));
    }
    head.push("controllable".into());
    w.write_record(&head)?;
    let mut count = 0;
    for cell in schema.enumerate_cells() {
        let mut rec = vec![hash.to_string()];
        rec.extend(cell.0.iter().map(u32::to_string));
        for iv in schema.cell_box(&cell)? {
            rec.push(iv.lower.to_string());
            rec.push(iv.upper.to_string());
        }
        let flag = controllable(&cell);
        count += usize::from(flag);
        rec.push(u8::from(flag).to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(count)
}

pub(crate) fn write_trace(path: &Path, hash: &str, names: &[&str], trace: &SimTrace) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let mut head = vec!["config_hash".to_string(), "step".into()];
    head.extend(names.iter().map(|n| n.to_string()));
    head.extend(["cell", "action", "q", "R", "V", "in_goal", "fault"].map(String::from));
    w.write_record(&head)?;
    for r in &trace.rows {
        let mut rec = vec![hash.to_string(), r.step.to_string()];
        rec.extend(r.state.iter().map(f64::to_string));
        rec.push(r.cell.clone().unwrap_or_default());
        rec.push(r.action.clone().unwrap_or_default());
        rec.push(r.mode_bits.clone().unwrap_or_default());
        rec.push(if r.r.is_nan() { String::new() } else { r.r.to_string() });
        rec.push(r.v.iter().map(f64::to_string).collect::<Vec<_>>().join(" "));
        rec.push(u8::from(r.in_goal).to_string());
        rec.push(u8::from(r.fault).to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub(crate) fn write_trials(path: &Path, hash: &str, names: &[&str], traces: &[SimTrace]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let mut head = vec!["config_hash".to_string(), "trial".into()];
    head.extend(names.iter().map(|n| format!("{n}_0")));
    head.extend(["R", "V", "steps", "goal_step", "fault", "safety_violation"].map(String::from));
    w.write_record(&head)?;
    for (i, t) in traces.iter().enumerate() {
        let first = &t.rows[0];
        let mut rec = vec![hash.to_string(), i.to_string()];
        rec.extend(first.state.iter().map(f64::to_string));
        rec.push(if first.r.is_nan() { String::new() } else { first.r.to_string() });
        rec.push(first.v.iter().map(f64::to_string).collect::<Vec<_>>().join(" "));
        rec.push((t.rows.len() - 1).to_string());
        rec.push(t.goal_step.map(|g| g.to_string()).unwrap_or_default());
        rec.push(u8::from(t.fault).to_string());
        rec.push(u8::from(t.safety_violation).to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub(crate) struct TextReport<'a> {
    pub row: &'a StatsRow<'a>,
    pub model_hash: &'a str,
    pub goal: &'a str,
    pub cpu_secs: f64,
    pub wall_secs: f64,
    pub mem_bytes: u64,
    pub diagnostic: Option<&'a str>,
    pub tree_depth: u32,
}

pub(crate) fn text_report(r: &TextReport<'_>) -> String {
    let s = r.row;
    let mut out = String::new();
    let _ = writeln!(out, "config_hash = {}", s.hash);
    let _ = writeln!(out, "model = {}", s.model);
    let _ = writeln!(out, "model_hash = {}", r.model_hash);
    let _ = writeln!(out, "goal = {}", r.goal);
    let _ = writeln!(out, "b = {}", s.bits);
    let _ = writeln!(out, "n = {}", s.inputs);
    let _ = writeln!(out, "Arcs = {}", s.stats.arcs);
    let _ = writeln!(out, "MaxLoops = {}", s.stats.max_loops);
    let _ = writeln!(out, "LoopFrac = {:.6}", s.stats.loop_frac);
    let _ = writeln!(out, "|K| = {} (lines of generated source)", s.k_lines);
    let _ = writeln!(out, "μ = {}", s.k.outcome);
    if let Some(d) = r.diagnostic {
        let _ = writeln!(out, "diagnostic = {d}");
    }
    let _ = writeln!(out, "cells = {}", s.cells);
    let _ = writeln!(out, "admissible = {}", s.stats.admissible_cells);
    let _ = writeln!(out, "controllable = {}", s.k.controllable_count());
    let _ = writeln!(out, "max_rank = {}", s.k.max_rank());
    let _ = writeln!(out, "tree_depth = {}", r.tree_depth);
    let _ = writeln!(out, "unresolved_queries = {}", s.unresolved);
    out.push_str("\n# measured locally; not comparable to reference hardware\n");
    let _ = writeln!(out, "CPU = {:.3} s", r.cpu_secs);
    let _ = writeln!(out, "wall = {:.3} s", r.wall_secs);
    let _ = writeln!(out, "MEM = {} bytes (peak resident)", r.mem_bytes);
    out.push_str("\n# MILP queries per kind: Num, Avg (s), Time (s)\n");
    out.push_str("# 1 admissibility, 2 successor bounds, 3 self-loop, 4 equilibrium, 5 region membership\n");
    for kind in 1..=NUM_KINDS as u8 {
        let k = s.stats.milp.kind(kind);
        let _ = writeln!(out, "kind {kind}: Num = {}, Avg = {:.3e}, Time = {:.3}", k.count, k.avg_secs, k.total_secs);
    }
    out
}

pub(crate) fn sim_summary(hash: &str, model_hash: &str, s: &MonteCarloSummary, steps: usize, disturbance: &str) -> String {
    let mut out = String::new();
    out.push_str("# closed-loop simulation; an addition to the formal guarantee, not part of it\n");
    let _ = writeln!(out, "config_hash = {hash}");
    let _ = writeln!(out, "model_hash = {model_hash}");
    let _ = writeln!(out, "disturbance = {disturbance}");
    let _ = writeln!(out, "steps = {steps}");
    let _ = writeln!(out, "trials = {}", s.trials);
    let _ = writeln!(out, "safety_violations = {}", s.safety_violations);
    let _ = writeln!(out, "faults = {}", s.faults);
    let _ = writeln!(out, "reached_goal = {}", s.reached_goal);
    let _ = writeln!(out, "goal_reach_rate = {:.6}", s.goal_reach_rate);
    let _ = writeln!(
        out,
        "max_steps_to_goal = {}",
        s.max_steps_to_goal.map(|m| m.to_string()).unwrap_or_else(|| "-".into())
    );
    let _ = writeln!(out, "late = {}", s.late);
    out
}
