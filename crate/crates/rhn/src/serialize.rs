//! Checkpoint format: a textual header followed by a flat little-endian
//! binary payload.
//!
//! Header grammar (UTF-8, one record per line, terminated by `end`):
//!
//! ```text
//! header     := magic config* tensor* "end" "\n"
//! magic      := "RHN-CHECKPOINT v1" "\n"
//! config     := "config." key " = " value "\n"
//! tensor     := "tensor " name " " rank (" " dim)* " " prec " " offset "\n"
//! prec       := "f32" | "f64"
//! ```
//!
//! `offset` is the tensor's byte offset inside the payload, which starts at
//! the byte after the `end` line. Payload scalars are little-endian and
//! written in the model's configured precision; in-memory math is f64 either
//! way. Tensors appear in the fixed enumeration order of
//! `ModelParams::tensors`.

use crate::error::{Error, Result};
use crate::lm::{init_model, ModelConfig, ModelParams, Precision};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &str = "RHN-CHECKPOINT v1";

fn config_block(config: &ModelConfig) -> Vec<(String, String)> {
    vec![
        ("depth".into(), config.depth.to_string()),
        ("hidden".into(), config.hidden.to_string()),
        ("embed".into(), config.embed.to_string()),
        ("vocab".into(), config.vocab.to_string()),
        ("coupled".into(), config.coupled.to_string()),
        ("use_hsg".into(), config.use_hsg.to_string()),
        ("dropout_embed".into(), config.dropout_embed.to_string()),
        ("dropout_state".into(), config.dropout_state.to_string()),
        ("dropout_output".into(), config.dropout_output.to_string()),
        ("gate_bias_init".into(), config.gate_bias_init.to_string()),
        ("precision".into(), config.precision.bits().to_string()),
    ]
}

fn parse_config(pairs: &[(String, String)]) -> Result<ModelConfig> {
    let get = |k: &str| -> Result<&str> {
        pairs
            .iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::parse("checkpoint", format!("missing config key {k}")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?.parse().map_err(|e| Error::parse("checkpoint", format!("config {k}: {e}")))
    };
    let real = |k: &str| -> Result<f64> {
        get(k)?.parse().map_err(|e| Error::parse("checkpoint", format!("config {k}: {e}")))
    };
    let flag = |k: &str| -> Result<bool> {
        get(k)?.parse().map_err(|e| Error::parse("checkpoint", format!("config {k}: {e}")))
    };
    let mut cfg = ModelConfig::new(num("depth")?, num("hidden")?, num("embed")?, num("vocab")?);
    cfg.coupled = flag("coupled")?;
    cfg.use_hsg = flag("use_hsg")?;
    cfg.dropout_embed = real("dropout_embed")?;
    cfg.dropout_state = real("dropout_state")?;
    cfg.dropout_output = real("dropout_output")?;
    cfg.gate_bias_init = real("gate_bias_init")?;
    cfg.precision = match get("precision")? {
        "32" => Precision::F32,
        "64" => Precision::F64,
        other => {
            return Err(Error::parse("checkpoint", format!("unknown precision {other}")))
        }
    };
    Ok(cfg)
}

pub fn save_model(path: &Path, params: &ModelParams, config: &ModelConfig) -> Result<()> {
    let views = params.tensors();
    let scalar_bytes = match config.precision {
        Precision::F32 => 4,
        Precision::F64 => 8,
    };
    let mut header = String::new();
    let _ = writeln!(header, "{MAGIC}");
    for (k, v) in config_block(config) {
        let _ = writeln!(header, "config.{k} = {v}");
    }
    let mut offset = 0usize;
    for t in &views {
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        let prec = if scalar_bytes == 4 { "f32" } else { "f64" };
        let _ = writeln!(header, "tensor {} {} {} {prec} {offset}", t.name, t.shape.len(), dims.join(" "));
        offset += t.data.len() * scalar_bytes;
    }
    header.push_str("end\n");

    let mut payload = Vec::with_capacity(offset);
    for t in &views {
        for &v in t.data {
            match config.precision {
                Precision::F32 => payload.extend_from_slice(&(v as f32).to_le_bytes()),
                Precision::F64 => payload.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }

    let mut file = std::fs::File::create(path)?;
    file.write_all(header.as_bytes())?;
    file.write_all(&payload)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(ModelParams, ModelConfig)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;

    // Header ends at the `end` line; find it without assuming the payload is
    // valid UTF-8.
    let end_marker = b"\nend\n";
    let end_pos = bytes
        .windows(end_marker.len())
        .position(|w| w == end_marker)
        .ok_or_else(|| Error::parse("checkpoint", "missing end marker"))?;
    let header = std::str::from_utf8(&bytes[..end_pos])
        .map_err(|e| Error::parse("checkpoint", format!("header not UTF-8: {e}")))?;
    let payload = &bytes[end_pos + end_marker.len()..];

    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::parse("checkpoint", "bad magic"));
    }
    let mut config_pairs = Vec::new();
    let mut tensor_lines = Vec::new();
    for line in lines {
        if let Some(rest) = line.strip_prefix("config.") {
            let (k, v) = rest
                .split_once(" = ")
                .ok_or_else(|| Error::parse("checkpoint", format!("bad config line: {line}")))?;
            config_pairs.push((k.to_string(), v.to_string()));
        } else if let Some(rest) = line.strip_prefix("tensor ") {
            tensor_lines.push(rest.to_string());
        } else {
            return Err(Error::parse("checkpoint", format!("unexpected line: {line}")));
        }
    }
    let config = parse_config(&config_pairs)?;

    // Allocate the right shapes, then overwrite every tensor from the payload.
    let mut params = init_model(&config, 0)?;
    let mut views = params.tensors_mut();
    if views.len() != tensor_lines.len() {
        return Err(Error::parse(
            "checkpoint",
            format!("expected {} tensors, header lists {}", views.len(), tensor_lines.len()),
        ));
    }
    for (view, line) in views.iter_mut().zip(&tensor_lines) {
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() < 4 {
            return Err(Error::parse("checkpoint", format!("bad tensor line: {line}")));
        }
        let name = fields[0];
        if name != view.name {
            return Err(Error::parse(
                "checkpoint",
                format!("tensor order mismatch: expected {}, found {name}", view.name),
            ));
        }
        let rank: usize = fields[1]
            .parse()
            .map_err(|e| Error::parse("checkpoint", format!("tensor {name} rank: {e}")))?;
        if fields.len() != 4 + rank {
            return Err(Error::parse("checkpoint", format!("bad tensor line: {line}")));
        }
        let mut count = 1usize;
        for d in &fields[2..2 + rank] {
            let dim: usize = d
                .parse()
                .map_err(|e| Error::parse("checkpoint", format!("tensor {name} dim: {e}")))?;
            count *= dim;
        }
        if count != view.data.len() {
            return Err(Error::parse(
                "checkpoint",
                format!("tensor {name}: header says {count} scalars, model expects {}", view.data.len()),
            ));
        }
        let prec = fields[2 + rank];
        let offset: usize = fields[3 + rank]
            .parse()
            .map_err(|e| Error::parse("checkpoint", format!("tensor {name} offset: {e}")))?;
        let scalar_bytes = match prec {
            "f32" => 4,
            "f64" => 8,
            other => return Err(Error::parse("checkpoint", format!("unknown precision {other}"))),
        };
        let end = offset + count * scalar_bytes;
        if end > payload.len() {
            return Err(Error::parse("checkpoint", format!("tensor {name} exceeds payload")));
        }
        let raw = &payload[offset..end];
        for (i, v) in view.data.iter_mut().enumerate() {
            *v = match prec {
                "f32" => {
                    f32::from_le_bytes(raw[i * 4..i * 4 + 4].try_into().unwrap()) as f64
                }
                _ => f64::from_le_bytes(raw[i * 8..i * 8 + 8].try_into().unwrap()),
            };
        }
    }
    drop(views);
    Ok((params, config))
}
