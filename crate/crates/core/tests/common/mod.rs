#![allow(dead_code)]

use std::collections::BTreeMap;

use autograd::Graph;
use pix2nerf::config::{ablation_config, AblationTag, TrainingConfig};
use pix2nerf::data::{make_synthetic_dataset, Dataset, SceneCamera};
use pix2nerf::params::{Bound, Group, ParameterStore};
use pix2nerf::training::{routing, Objective, TrainState, Trainer};

/// Smallest model that exercises every network: widths of 8 and a single
/// low-resolution stage.
pub fn tiny_config(resolution: usize, extra: &str) -> TrainingConfig {
    let text = format!(
        "z_dim = 4
mapping_width = 8
mapping_layers = 1
field_width = 8
field_layers = 2
disc_widths = 8,8
enc_widths = 8,8
perceptual_widths = 4,8
batch_size = 2
total_iterations = 4
stages = 0:{resolution}:4:1e-3:1e-3:1e-3
seed = 3
{extra}"
    );
    TrainingConfig::parse(&text).expect("tiny config parses")
}

pub fn tiny_dataset(cfg: &TrainingConfig, n: usize, seed: u64) -> Dataset {
    let prior = cfg.pose_prior().unwrap();
    make_synthetic_dataset(n, 1, &prior, SceneCamera::default(), cfg.max_resolution(), seed).unwrap().dataset
}

/// Routing written out per tag, independent of the flag plumbing.
pub fn expected_routing(tag: Option<AblationTag>, it: usize, total: usize) -> (bool, Vec<(Objective, Vec<Group>)>) {
    use AblationTag::*;
    let warm = match tag {
        Some(A | E | G | H | I | J) => false,
        Some(F) => true,
        _ => it < total / 2,
    };
    let mut steps = Vec::new();
    if tag != Some(A) {
        steps.push((Objective::Discriminator, vec![Group::Discriminator]));
    }
    if !matches!(tag, Some(B | C)) {
        steps.push((Objective::Inversion, vec![Group::Encoder]));
    }
    if it % 2 == 0 {
        if !matches!(tag, Some(A | B)) {
            steps.push((Objective::Generator, vec![Group::Generator]));
        }
    } else {
        let mut groups = Vec::new();
        if tag != Some(A) {
            groups.push(Group::Generator);
        }
        if !warm {
            groups.push(Group::Encoder);
        }
        steps.push((Objective::Odd, groups));
    }
    (warm, steps)
}

pub fn routing_config(tag: Option<AblationTag>, total: usize) -> TrainingConfig {
    let base = tiny_config(8, &format!("total_iterations = {total}"));
    match tag {
        Some(t) => ablation_config(t, base),
        None => base,
    }
}

pub fn changed(before: &TrainState<f32>, after: &TrainState<f32>) -> Vec<Group> {
    Group::ALL.into_iter().filter(|g| !before.params.group_identical(&after.params, *g)).collect()
}

/// Every routed step of `tag` over `total` iterations, checking that each
/// objective changes exactly its groups and that a whole training step
/// changes their union.
pub fn check_step_groups(tag: Option<AblationTag>, total: usize) -> Result<(), String> {
    let cfg = routing_config(tag, total);
    let data = tiny_dataset(&cfg, 4, 5);
    let trainer = Trainer::new(&cfg, &data).map_err(|e| e.to_string())?;
    for it in 0..total {
        let (warm, steps) = expected_routing(tag, it, total);
        let route = routing(it, total, &cfg.flags);
        if route.warmup != warm || route.steps != steps {
            return Err(format!("{tag:?} it {it}: routing {:?}, expected {steps:?}", route.steps));
        }
        let mut state = TrainState::<f32>::initialize(&cfg).map_err(|e| e.to_string())?;
        state.iteration = it;
        let fakes = trainer.draw_fakes(&mut state).map_err(|e| e.to_string())?;
        for (objective, groups) in &steps {
            let before = state.clone();
            trainer.apply_objective(&mut state, *objective, groups, Some(&fakes)).map_err(|e| e.to_string())?;
            let got = changed(&before, &state);
            if &got != groups {
                return Err(format!("{tag:?} it {it} {objective}: changed {got:?}, expected {groups:?}"));
            }
        }
        let mut whole = TrainState::<f32>::initialize(&cfg).map_err(|e| e.to_string())?;
        whole.iteration = it;
        let start = whole.clone();
        trainer.training_step(&mut whole).map_err(|e| e.to_string())?;
        let mut union: Vec<Group> = steps.iter().flat_map(|(_, g)| g.iter().copied()).collect();
        union.sort();
        union.dedup();
        let got = changed(&start, &whole);
        if got != union {
            return Err(format!("{tag:?} it {it} full step: changed {got:?}, expected {union:?}"));
        }
    }
    Ok(())
}

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor so entries with vanishing gradient compare absolutely.
pub const FLOOR: f64 = 1e-6;

fn probe_indices(len: usize) -> Vec<usize> {
    let mut idx = vec![0, len / 3, len / 2, (2 * len) / 3, len - 1];
    idx.sort_unstable();
    idx.dedup();
    idx
}

/// Largest relative error per parameter group between backprop and central
/// differences of the same loss.
pub fn gradient_errors(cfg: &TrainingConfig, objective: Objective) -> BTreeMap<Group, (f64, usize)> {
    let data = tiny_dataset(cfg, 4, 21);
    let trainer = Trainer::new(cfg, &data).unwrap();
    let mut state = TrainState::<f64>::initialize(cfg).unwrap();
    state.iteration = 1;
    let fakes = match objective {
        Objective::Discriminator | Objective::Inversion => Some(trainer.draw_fakes(&mut state).unwrap()),
        _ => None,
    };
    let groups = Trainer::groups_read(objective);
    let rng = state.rng.clone();
    let loss_at = |params: &ParameterStore<f64>| -> f64 {
        let graph = Graph::new();
        let bound = Bound::new(&graph, params, groups, &[]);
        let mut rng = rng.clone();
        let (loss, _) = trainer.objective_loss(&graph, &bound, objective, 1, &mut rng, fakes.as_ref()).unwrap();
        loss.item()
    };

    let graph = Graph::new();
    let bound = Bound::new(&graph, &state.params, groups, groups);
    let mut r = rng.clone();
    let (loss, _) = trainer.objective_loss(&graph, &bound, objective, 1, &mut r, fakes.as_ref()).unwrap();
    assert!((loss.item() - loss_at(&state.params)).abs() < 1e-12, "loss is reproducible");
    let grads = graph.backward(loss);

    let mut errors: BTreeMap<Group, (f64, usize)> = BTreeMap::new();
    let mut params = state.params.clone();
    for (name, var) in bound.trainable() {
        let group = Group::of(name).unwrap();
        let len = state.params.require(name).unwrap().len();
        let analytic = grads.get(*var).map(|g| g.data().to_vec());
        for i in probe_indices(len) {
            let original = params.get(name).unwrap().data()[i];
            params.get_mut(name).unwrap().data_mut()[i] = original + STEP;
            let up = loss_at(&params);
            params.get_mut(name).unwrap().data_mut()[i] = original - STEP;
            let down = loss_at(&params);
            params.get_mut(name).unwrap().data_mut()[i] = original;
            let numeric = (up - down) / (2.0 * STEP);
            let Some(analytic) = &analytic else {
                assert!(numeric.abs() < 1e-9, "{name}: loss depends on a parameter without gradient");
                continue;
            };
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            let entry = errors.entry(group).or_insert((0.0, 0));
            if rel > entry.0 {
                entry.0 = rel;
            }
            if a.abs() > FLOOR {
                entry.1 += 1;
            }
        }
    }
    errors
}
