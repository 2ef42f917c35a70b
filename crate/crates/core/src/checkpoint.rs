//! Checkpoint directories: a text manifest, a config snapshot and one
//! little-endian flat array file per parameter or optimizer moment.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use autograd::{Real, Tensor};

use crate::config::TrainingConfig;
use crate::error::{Error, Result};
use crate::features::ConvFeatures;
use crate::optim::{AdamSlot, OptimizerState};
use crate::params::ParameterStore;
use crate::rng::{RngCursor, RngStream};
use crate::training::{init_parameters, TrainState};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_FILE: &str = "config.cfg";
const TENSOR_DIR: &str = "tensors";

/// Architecture keys echoed in the manifest and checked against the
/// config snapshot on load.
fn arch_entries(cfg: &TrainingConfig) -> Vec<(&'static str, String)> {
    let a = &cfg.arch;
    let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    vec![
        ("z_dim", a.z_dim.to_string()),
        ("mapping_width", a.mapping_width.to_string()),
        ("mapping_layers", a.mapping_layers.to_string()),
        ("field_width", a.field_width.to_string()),
        ("field_layers", a.field_layers.to_string()),
        ("omega0", format!("{:?}", a.omega0)),
        ("view_dependent", a.view_dependent.to_string()),
        ("disc_widths", join(&a.disc_widths)),
        ("enc_widths", join(&a.enc_widths)),
        ("base_resolution", cfg.base_resolution().to_string()),
    ]
}

fn encode_tensor<R: Real>(t: &Tensor<R>) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.data().len() * R::BYTES);
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

fn decode_tensor<S: Real, R: Real>(bytes: &[u8], shape: &[usize]) -> Option<Tensor<R>> {
    let n: usize = shape.iter().product();
    if bytes.len() != n * S::BYTES {
        return None;
    }
    let stored = Tensor::<S>::new(shape, bytes.chunks_exact(S::BYTES).map(S::read_le).collect());
    Some(stored.cast())
}

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

/// Writes `state` and the config that produced it to `dir`.
pub fn save_checkpoint<R: Real>(state: &TrainState<R>, cfg: &TrainingConfig, dir: &Path) -> Result<()> {
    let tensor_dir = dir.join(TENSOR_DIR);
    fs::create_dir_all(&tensor_dir)?;
    let mut manifest = String::new();
    let mut line = |s: String| {
        manifest.push_str(&s);
        manifest.push('\n');
    };
    line(format!("format_version = {FORMAT_VERSION}"));
    line(format!("precision = {}", R::NAME));
    line(format!("iteration = {}", state.iteration));
    line(format!("seed = {}", cfg.seed));
    line(format!("rng = {}", state.rng.cursor().encode()));
    line(format!(
        "perceptual_extractor = {}",
        ConvFeatures::perceptual(cfg.perceptual.seed, &cfg.perceptual.widths).tag()
    ));
    for (k, v) in arch_entries(cfg) {
        line(format!("arch.{k} = {v}"));
    }
    let write = |file: String, name: &str, t: &Tensor<R>| -> Result<String> {
        fs::write(tensor_dir.join(&file), encode_tensor(t))?;
        Ok(format!("tensor {file} {name} {}", shape_text(t.shape())))
    };
    let mut entries = Vec::new();
    for (name, t) in state.params.iter() {
        entries.push(write(format!("param.{name}.bin"), name, t)?);
    }
    for (key, slot) in &state.optim.slots {
        let tag = key.replace('/', "__");
        entries.push(format!("adam {key} {}", slot.step));
        for (name, t) in &slot.first {
            entries.push(write(format!("m.{tag}.{name}.bin"), &format!("m:{key}:{name}"), t)?);
        }
        for (name, t) in &slot.second {
            entries.push(write(format!("v.{tag}.{name}.bin"), &format!("v:{key}:{name}"), t)?);
        }
    }
    for e in entries {
        line(e);
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
    Ok(())
}

/// Loaded configuration and training state.
#[derive(Clone, Debug)]
pub struct Checkpoint<R: Real> {
    pub cfg: TrainingConfig,
    pub state: TrainState<R>,
}

struct Manifest {
    keys: BTreeMap<String, String>,
    tensors: Vec<(String, String, Vec<usize>)>,
    adam: Vec<(String, u64)>,
}

fn parse_manifest(dir: &Path, text: &str) -> Result<Manifest> {
    let bad = |msg: String| Error::checkpoint(dir, msg);
    let mut m = Manifest { keys: BTreeMap::new(), tensors: Vec::new(), adam: Vec::new() };
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("tensor ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(bad(format!("manifest line {}: malformed tensor entry", no + 1)));
            }
            let shape = parts[2]
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("manifest line {}: bad shape `{}`", no + 1, parts[2])))?;
            m.tensors.push((parts[0].to_string(), parts[1].to_string(), shape));
        } else if let Some(rest) = line.strip_prefix("adam ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            let step = parts.get(1).and_then(|s| s.parse().ok());
            match (parts.first(), step) {
                (Some(k), Some(s)) if parts.len() == 2 => m.adam.push((k.to_string(), s)),
                _ => return Err(bad(format!("manifest line {}: malformed adam entry", no + 1))),
            }
        } else if let Some((k, v)) = line.split_once('=') {
            m.keys.insert(k.trim().to_string(), v.trim().to_string());
        } else {
            return Err(bad(format!("manifest line {}: unrecognized `{line}`", no + 1)));
        }
    }
    Ok(m)
}

/// Reads a checkpoint, casting stored arrays to `R`.
pub fn load_checkpoint<R: Real>(dir: &Path) -> Result<Checkpoint<R>> {
    let bad = |msg: String| Error::checkpoint(dir, msg);
    let text = fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(|e| bad(format!("cannot read manifest: {e}")))?;
    let manifest = parse_manifest(dir, &text)?;
    let key = |k: &str| manifest.keys.get(k).ok_or_else(|| bad(format!("manifest lacks `{k}`")));
    let version: u32 = key("format_version")?.parse().map_err(|_| bad("unparsable format_version".into()))?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("format_version {version}, this build reads {FORMAT_VERSION}")));
    }
    let cfg_text = fs::read_to_string(dir.join(CONFIG_FILE)).map_err(|e| bad(format!("cannot read config: {e}")))?;
    let cfg = TrainingConfig::parse(&cfg_text).map_err(|e| bad(format!("config snapshot: {e}")))?;
    for (k, v) in arch_entries(&cfg) {
        let stored = key(&format!("arch.{k}"))?;
        if *stored != v {
            return Err(bad(format!("manifest {k} = {stored} disagrees with the config snapshot ({v})")));
        }
    }
    let seed: u64 = key("seed")?.parse().map_err(|_| bad("unparsable seed".into()))?;
    if seed != cfg.seed {
        return Err(bad(format!("manifest seed {seed} disagrees with the config snapshot ({})", cfg.seed)));
    }
    let iteration: usize = key("iteration")?.parse().map_err(|_| bad("unparsable iteration".into()))?;
    let cursor = RngCursor::decode(key("rng")?).ok_or_else(|| bad("unparsable rng cursor".into()))?;
    let precision = key("precision")?.clone();

    let read = |file: &str, shape: &[usize]| -> Result<Tensor<R>> {
        let bytes = fs::read(dir.join(TENSOR_DIR).join(file)).map_err(|e| bad(format!("{file}: {e}")))?;
        let t = match precision.as_str() {
            "f32" => decode_tensor::<f32, R>(&bytes, shape),
            "f64" => decode_tensor::<f64, R>(&bytes, shape),
            other => return Err(bad(format!("unknown precision `{other}`"))),
        };
        t.ok_or_else(|| bad(format!("{file}: {} bytes do not hold a {} array", bytes.len(), shape_text(shape))))
    };

    let reference: ParameterStore<f32> = init_parameters(&cfg, cfg.seed);
    let mut params = ParameterStore::new();
    let mut optim = OptimizerState::new();
    for (key, step) in &manifest.adam {
        optim.slots.insert(key.clone(), AdamSlot { step: *step, ..AdamSlot::default() });
    }
    for (file, name, shape) in &manifest.tensors {
        let parts: Vec<&str> = name.splitn(3, ':').collect();
        let param_name = if parts.len() == 3 { parts[2] } else { name.as_str() };
        let expected = reference
            .get(param_name)
            .ok_or_else(|| bad(format!("`{param_name}` is not part of this architecture")))?;
        if expected.shape() != shape.as_slice() {
            let z_hint = if param_name.starts_with("generator.mapping.0") || param_name.starts_with("encoder.latent") {
                " (check z_dim)"
            } else {
                ""
            };
            return Err(bad(format!(
                "`{param_name}` stored as {}, architecture expects {}{z_hint}",
                shape_text(shape),
                shape_text(expected.shape())
            )));
        }
        let tensor = read(file, shape)?;
        if parts.len() == 3 {
            let slot = optim
                .slots
                .get_mut(parts[1])
                .ok_or_else(|| bad(format!("moment `{name}` has no adam entry")))?;
            let target = if parts[0] == "m" { &mut slot.first } else { &mut slot.second };
            target.insert(param_name.to_string(), tensor);
        } else {
            params.insert(name.clone(), tensor);
        }
    }
    if let Some(missing) = reference.names().find(|n| params.get(n).is_none()) {
        return Err(bad(format!("missing parameter `{missing}`")));
    }
    let state = TrainState { iteration, params, optim, rng: RngStream::from_cursor(cursor) };
    Ok(Checkpoint { cfg, state })
}
