use qsynth_core::abstraction::{build, BuildOptions, SuccessorMode, Variant};
use qsynth_core::milp::MilpSolver;
use qsynth_core::models::toy::{contraction_spec, planar_spec, shift_spec, AffineSpec};
use qsynth_core::predicate::Predicate;
use qsynth_core::quantization::QuantSchema;
use qsynth_core::synthesis::{synthesize, Controller, Outcome, RegionCells, RegionSpec};

fn synth(spec: &AffineSpec, b: u32, goal: &[(&str, f64, f64)], variant: Variant, mode: SuccessorMode) -> (QuantSchema, Controller) {
    let h = spec.build().unwrap();
    let schema = QuantSchema::uniform(h.safety_box(), b).unwrap();
    let solver = MilpSolver::default();
    let (abs, _) = build(&h, &schema, variant, &solver, BuildOptions { mode, jobs: 1 }).unwrap();
    let mut g = Predicate::new();
    for &(v, lo, hi) in goal {
        g.within(v, lo, hi);
    }
    let regions = RegionCells::resolve(&h, &abs, &RegionSpec { goal: g, initial: None }, &solver).unwrap();
    (schema, synthesize(&abs, &regions))
}

/// Grid points of a cell, lower edges included.
fn cell_samples(schema: &QuantSchema, idx: usize, per_dim: usize) -> Vec<Vec<f64>> {
    let c = schema.from_linear(idx);
    let b = schema.cell_box(&c).unwrap();
    let mut out = vec![Vec::new()];
    for iv in &b {
        let pts: Vec<f64> = (0..per_dim)
            .map(|k| iv.lower + (iv.upper - iv.lower) * k as f64 / (per_dim - 1) as f64)
            .collect();
        out = out.into_iter().flat_map(|p| pts.iter().map(move |&x| [p.clone(), vec![x]].concat())).collect();
    }
    // Upper edges belong to the next cell, except on the last one.
    out.retain(|p| schema.quantize(p).map(|q| schema.linear_index(&q) == idx).unwrap_or(false));
    out
}

/// Concrete steps under the chosen action never leave the controllable region.
fn assert_closed(spec: &AffineSpec, schema: &QuantSchema, k: &Controller) {
    for (idx, _) in k.rank.iter().enumerate().filter(|(_, r)| r.is_some()) {
        let a = &k.actions[k.chosen(idx).unwrap()];
        for x in cell_samples(schema, idx, 9) {
            let y = spec.image(&x, a);
            let q = schema.quantize(&y).unwrap_or_else(|_| panic!("{}: {x:?} under {a:?} leaves the range: {y:?}", spec.name));
            assert!(k.is_controllable(schema.linear_index(&q)), "{}: {x:?} -> {y:?} leaves the region", spec.name);
        }
    }
}

#[test]
fn contraction_region_is_closed_and_ranked() {
    let spec = contraction_spec();
    // At one bit no cell fits inside the goal.
    let (_, k) = synth(&spec, 1, &[("x", 1.0, 3.0)], Variant::Minimum, SuccessorMode::Exact);
    assert_eq!(k.outcome, Outcome::NoSol);
    for b in 2..=4 {
        let (schema, k) = synth(&spec, b, &[("x", 1.0, 3.0)], Variant::Minimum, SuccessorMode::Exact);
        assert_eq!(k.outcome, Outcome::Sol, "b={b}");
        assert_closed(&spec, &schema, &k);
        for (i, r) in k.rank.iter().enumerate() {
            if k.goal[i] {
                assert_eq!(*r, Some(0));
            }
        }
    }
}

#[test]
fn planar_region_is_closed() {
    let spec = planar_spec();
    for b in 1..=3 {
        for mode in [SuccessorMode::Box, SuccessorMode::Exact] {
            let (schema, k) = synth(&spec, b, &[("x", 1.0, 3.0), ("y", 1.0, 3.0)], Variant::Minimum, mode);
            assert_closed(&spec, &schema, &k);
        }
    }
}

#[test]
fn dropping_self_loops_never_shrinks_the_region() {
    for spec in [shift_spec(), contraction_spec()] {
        for b in 1..=4 {
            let (_, kmax) = synth(&spec, b, &[("x", 1.0, 3.0)], Variant::Maximum, SuccessorMode::Box);
            let (_, kmin) = synth(&spec, b, &[("x", 1.0, 3.0)], Variant::Minimum, SuccessorMode::Box);
            for i in 0..kmax.rank.len() {
                assert!(!kmax.is_controllable(i) || kmin.is_controllable(i), "{} b={b} cell {i}", spec.name);
            }
        }
    }
}

#[test]
fn exact_successors_never_shrink_the_region() {
    let spec = planar_spec();
    for b in 1..=3 {
        let goal = [("x", 1.0, 3.0), ("y", 1.0, 3.0)];
        let (_, kbox) = synth(&spec, b, &goal, Variant::Minimum, SuccessorMode::Box);
        let (_, kexact) = synth(&spec, b, &goal, Variant::Minimum, SuccessorMode::Exact);
        assert!(kbox.controllable_count() <= kexact.controllable_count());
        for i in 0..kbox.rank.len() {
            assert!(!kbox.is_controllable(i) || kexact.is_controllable(i));
        }
    }
}

#[test]
fn shift_controller_steps_toward_the_goal() {
    // x' = x + 2u - 1 on [0, 4] with four unit cells and goal [1, 3]: from
    // cell 0 only u = 1 helps, from cell 3 only u = 0.
    let (_, k) = synth(&shift_spec(), 2, &[("x", 1.0, 3.0)], Variant::Minimum, SuccessorMode::Exact);
    assert_eq!(k.outcome, Outcome::Sol);
    assert_eq!(k.chosen(0), Some(1));
    assert_eq!(k.chosen(3), Some(0));
    assert_eq!(k.rank[0], Some(1));
    assert_eq!(k.rank[3], Some(1));
}
