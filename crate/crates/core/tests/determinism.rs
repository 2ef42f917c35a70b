mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pix2nerf::checkpoint::{load_checkpoint, save_checkpoint};
use pix2nerf::config::TrainingConfig;
use pix2nerf::data::Dataset;
use pix2nerf::training::{TrainState, Trainer};

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn train(cfg: &TrainingConfig, data: &Dataset, steps: usize, dir: &Path) -> (TrainState<f32>, Vec<u8>) {
    let trainer = Trainer::new(cfg, data).unwrap();
    let mut state = TrainState::<f32>::initialize(cfg).unwrap();
    let mut log = Vec::new();
    trainer.run(&mut state, steps, Some(&mut log), |_, _| Ok(())).unwrap();
    save_checkpoint(&state, cfg, dir).unwrap();
    (state, log)
}

#[test]
fn repeated_runs_are_bit_identical() {
    let cfg = common::tiny_config(8, "total_iterations = 100");
    let data = common::tiny_dataset(&cfg, 8, 2);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (state_a, log_a) = train(&cfg, &data, 100, a.path());
    let (state_b, log_b) = train(&cfg, &data, 100, b.path());
    assert_eq!(log_a, log_b);
    assert_eq!(String::from_utf8(log_a).unwrap().lines().count(), 100);
    assert_eq!(state_a, state_b);
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(ta.len() > 2);
    assert_eq!(ta, tb);
}

#[test]
fn resumed_runs_match_uninterrupted() {
    let cfg = common::tiny_config(8, "total_iterations = 12");
    let data = common::tiny_dataset(&cfg, 8, 2);
    let dir = tempfile::tempdir().unwrap();
    let (mut straight, _) = train(&cfg, &data, 7, dir.path());
    let trainer = Trainer::new(&cfg, &data).unwrap();
    let mut straight_log = Vec::new();
    trainer.run(&mut straight, 5, Some(&mut straight_log), |_, _| Ok(())).unwrap();

    let mut logs = Vec::new();
    for _ in 0..2 {
        let ckpt = load_checkpoint::<f32>(dir.path()).unwrap();
        assert_eq!(ckpt.cfg, cfg);
        assert_eq!(ckpt.state.iteration, 7);
        let mut state = ckpt.state;
        let mut log = Vec::new();
        trainer.run(&mut state, 5, Some(&mut log), |_, _| Ok(())).unwrap();
        assert_eq!(state, straight);
        logs.push(log);
    }
    assert_eq!(logs[0], logs[1]);
    assert_eq!(logs[0], straight_log);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let cfg = common::tiny_config(8, "total_iterations = 4");
    let data = common::tiny_dataset(&cfg, 4, 2);
    let dir = tempfile::tempdir().unwrap();
    let (state, _) = train(&cfg, &data, 3, dir.path());
    let loaded = load_checkpoint::<f32>(dir.path()).unwrap();
    assert_eq!(loaded.state, state);
    let again = tempfile::tempdir().unwrap();
    save_checkpoint(&loaded.state, &loaded.cfg, again.path()).unwrap();
    assert_eq!(tree(dir.path()), tree(again.path()));
}
