//! Model checkpoints: a text manifest (format version, architecture specs,
//! seed, named tensor shapes) followed by the raw little-endian `f64`
//! payloads in manifest order. Round-trips are bit-exact.

use crate::error::SfdaError;
use crate::model::{init_model, ClassifierBankSpec, GeneratorSpec, ModelState};
use crate::Result;
use std::fs;
use std::path::Path;

const VERSION_LINE: &str = "sfda-checkpoint v1";
const PAYLOAD_MARKER: &str = "payload";

fn tensor_names(model: &ModelState) -> Vec<String> {
    let mut names = Vec::new();
    let n_gen = model.generator_param_ids().len() / 2;
    for i in 0..n_gen {
        names.push(format!("g{i}.w"));
        names.push(format!("g{i}.b"));
    }
    for j in 0..model.bank_spec().k {
        let n_layers = model.head_param_ids(j).len() / 2;
        for l in 0..n_layers {
            names.push(format!("h{j}.{l}.w"));
            names.push(format!("h{j}.{l}.b"));
        }
    }
    names
}

/// Write a checkpoint. The manifest is plain text; the payload is every
/// parameter's values as little-endian `f64` in manifest order.
pub fn save_checkpoint(model: &ModelState, path: &Path) -> Result<()> {
    let g = model.generator_spec();
    let b = model.bank_spec();
    let hidden: Vec<String> = g.hidden_dims.iter().map(|d| d.to_string()).collect();
    let mut text = String::new();
    text.push_str(VERSION_LINE);
    text.push('\n');
    text.push_str(&format!(
        "generator input_dim={} hidden={} feature_dim={}\n",
        g.input_dim,
        hidden.join(","),
        g.feature_dim
    ));
    text.push_str(&format!(
        "bank k={} c={} head_hidden={}\n",
        b.k, b.c, b.head_hidden
    ));
    text.push_str(&format!("seed {}\n", model.seed()));
    let names = tensor_names(model);
    for (name, p) in names.iter().zip(model.params().iter()) {
        let (r, c) = p.value().shape();
        text.push_str(&format!("tensor {name} {r} {c}\n"));
    }
    text.push_str(PAYLOAD_MARKER);
    text.push('\n');

    let mut bytes = text.into_bytes();
    for p in model.params() {
        for v in p.value().data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| SfdaError::io(path.display().to_string(), e))
}

fn malformed(msg: impl Into<String>) -> SfdaError {
    SfdaError::CheckpointMalformed(msg.into())
}

fn parse_kv<'a>(token: &'a str, key: &str) -> Result<&'a str> {
    token
        .strip_prefix(key)
        .and_then(|s| s.strip_prefix('='))
        .ok_or_else(|| malformed(format!("expected `{key}=...`, found `{token}`")))
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let bytes = fs::read(path).map_err(|e| SfdaError::io(path.display().to_string(), e))?;

    // split the text manifest from the binary payload at the marker line
    let marker = format!("\n{PAYLOAD_MARKER}\n");
    let marker_at = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| malformed("missing payload marker"))?;
    let manifest =
        std::str::from_utf8(&bytes[..marker_at]).map_err(|_| malformed("manifest is not UTF-8"))?;
    let payload = &bytes[marker_at + marker.len()..];

    let mut lines = manifest.lines();
    let version = lines.next().ok_or_else(|| malformed("empty manifest"))?;
    if version != VERSION_LINE {
        return Err(SfdaError::CheckpointVersion {
            expected: VERSION_LINE.to_string(),
            found: version.to_string(),
        });
    }

    let gen_line = lines
        .next()
        .ok_or_else(|| malformed("missing generator line"))?;
    let toks: Vec<&str> = gen_line.split_whitespace().collect();
    if toks.len() != 4 || toks[0] != "generator" {
        return Err(malformed("bad generator line"));
    }
    let input_dim: usize = parse_kv(toks[1], "input_dim")?
        .parse()
        .map_err(|_| malformed("bad input_dim"))?;
    let hidden_str = parse_kv(toks[2], "hidden")?;
    let hidden_dims: Vec<usize> = if hidden_str.is_empty() {
        vec![]
    } else {
        hidden_str
            .split(',')
            .map(|s| s.parse().map_err(|_| malformed("bad hidden dims")))
            .collect::<Result<_>>()?
    };
    let feature_dim: usize = parse_kv(toks[3], "feature_dim")?
        .parse()
        .map_err(|_| malformed("bad feature_dim"))?;

    let bank_line = lines.next().ok_or_else(|| malformed("missing bank line"))?;
    let toks: Vec<&str> = bank_line.split_whitespace().collect();
    if toks.len() != 4 || toks[0] != "bank" {
        return Err(malformed("bad bank line"));
    }
    let k: usize = parse_kv(toks[1], "k")?
        .parse()
        .map_err(|_| malformed("bad k"))?;
    let c: usize = parse_kv(toks[2], "c")?
        .parse()
        .map_err(|_| malformed("bad c"))?;
    let head_hidden: usize = parse_kv(toks[3], "head_hidden")?
        .parse()
        .map_err(|_| malformed("bad head_hidden"))?;

    let seed_line = lines.next().ok_or_else(|| malformed("missing seed line"))?;
    let seed: u64 = seed_line
        .strip_prefix("seed ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| malformed("bad seed line"))?;

    let mut model = init_model(
        GeneratorSpec {
            input_dim,
            hidden_dims,
            feature_dim,
        },
        ClassifierBankSpec { k, c, head_hidden },
        seed,
    )?;

    // tensor lines must match the model layout exactly
    let expected_names = tensor_names(&model);
    let mut shapes = Vec::new();
    for (i, line) in lines.enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 || toks[0] != "tensor" {
            return Err(malformed(format!("bad tensor line: `{line}`")));
        }
        if i >= expected_names.len() {
            return Err(malformed("more tensors than the model has"));
        }
        if toks[1] != expected_names[i] {
            return Err(malformed(format!(
                "tensor order mismatch: expected {}, found {}",
                expected_names[i], toks[1]
            )));
        }
        let r: usize = toks[2].parse().map_err(|_| malformed("bad tensor rows"))?;
        let cc: usize = toks[3].parse().map_err(|_| malformed("bad tensor cols"))?;
        let model_shape = model.params()[i].value().shape();
        if (r, cc) != model_shape {
            return Err(SfdaError::CheckpointShape {
                name: toks[1].to_string(),
                manifest: format!("{r}x{cc}"),
                model: format!("{}x{}", model_shape.0, model_shape.1),
            });
        }
        shapes.push((r, cc));
    }
    if shapes.len() != expected_names.len() {
        return Err(malformed(format!(
            "manifest lists {} tensors, model has {}",
            shapes.len(),
            expected_names.len()
        )));
    }

    let total: usize = shapes.iter().map(|(r, c)| r * c).sum();
    let needed = total * 8;
    if payload.len() < needed {
        return Err(SfdaError::CheckpointTruncated {
            needed,
            found: payload.len(),
        });
    }

    let mut offset = 0usize;
    for (i, (r, c)) in shapes.iter().enumerate() {
        let n = r * c;
        let dst = model.params_mut()[i].value_mut().data_mut();
        for j in 0..n {
            let start = (offset + j) * 8;
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&payload[start..start + 8]);
            dst[j] = f64::from_le_bytes(buf);
        }
        offset += n;
    }
    Ok(model)
}
