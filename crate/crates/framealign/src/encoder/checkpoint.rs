//! Binary checkpoint format for encoder parameters.
//!
//! Layout: an ASCII magic line, one metadata line, then for each tensor (in
//! the fixed PARAM_NAMES order) a header line followed by row-major f32
//! little-endian values, and a trailing "end" line. Parameters are f64 in
//! memory and f32 on disk; because every loaded f32 is exactly representable
//! as f64, save -> load -> save reproduces the file byte for byte.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{EncoderConfig, EncoderParams, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "framealign-ckpt v1";

fn ck_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn save(params: &EncoderParams, path: &Path) -> Result<()> {
    let c = &params.config;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{MAGIC}")?;
    writeln!(
        out,
        "seed={} mel_bins={} hidden={} dim={} buckets={} mixer_window={} hop={}",
        c.seed, c.mel_bins, c.hidden, c.dim, c.buckets, c.mixer_window, c.hop
    )?;
    for (name, tensor) in params.tensors() {
        writeln!(out, "tensor {name} {} {}", tensor.rows(), tensor.cols())?;
        for &v in tensor.data() {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    writeln!(out, "end")?;
    out.flush()?;
    Ok(())
}

fn read_line(reader: &mut impl BufRead, what: &str) -> Result<String> {
    let mut line = String::new();
    let n = reader.read_line(&mut line)?;
    if n == 0 {
        return Err(ck_err(format!("truncated file while reading {what}")));
    }
    Ok(line.trim_end_matches('\n').to_string())
}

fn meta_field<T: std::str::FromStr>(fields: &[(&str, &str)], key: &str) -> Result<T> {
    let raw = fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| ck_err(format!("missing metadata field {key}")))?;
    raw.parse()
        .map_err(|_| ck_err(format!("metadata field {key}: bad value {raw}")))
}

pub fn load(path: &Path) -> Result<EncoderParams> {
    let file = std::fs::File::open(path)?;
    let mut reader = BufReader::new(file);

    let magic = read_line(&mut reader, "magic")?;
    if magic != MAGIC {
        return Err(ck_err(format!("bad magic line {magic:?}")));
    }

    let meta = read_line(&mut reader, "metadata")?;
    let fields: Vec<(&str, &str)> = meta
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .collect();
    let config = EncoderConfig {
        seed: meta_field(&fields, "seed")?,
        mel_bins: meta_field(&fields, "mel_bins")?,
        hidden: meta_field(&fields, "hidden")?,
        dim: meta_field(&fields, "dim")?,
        buckets: meta_field(&fields, "buckets")?,
        mixer_window: meta_field(&fields, "mixer_window")?,
        hop: meta_field(&fields, "hop")?,
    };
    config.validate()?;

    let expected_shapes: [(usize, usize); 7] = [
        (config.buckets, config.hidden),
        (config.hidden, config.dim),
        (1, config.dim),
        (config.mel_bins, config.hidden),
        (1, config.hidden),
        (config.hidden, config.dim),
        (1, config.dim),
    ];

    let mut tensors = Vec::with_capacity(7);
    for (name, expected) in PARAM_NAMES.iter().zip(expected_shapes) {
        let header = read_line(&mut reader, &format!("tensor header {name}"))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" {
            return Err(ck_err(format!("bad tensor header {header:?}")));
        }
        if parts[1] != *name {
            return Err(ck_err(format!("expected tensor {name}, found {}", parts[1])));
        }
        let rows: usize = parts[2]
            .parse()
            .map_err(|_| ck_err(format!("tensor {name}: bad row count")))?;
        let cols: usize = parts[3]
            .parse()
            .map_err(|_| ck_err(format!("tensor {name}: bad column count")))?;
        if (rows, cols) != expected {
            return Err(ck_err(format!(
                "tensor {name}: shape {rows}x{cols} does not match config ({}x{})",
                expected.0, expected.1
            )));
        }
        let mut bytes = vec![0u8; rows * cols * 4];
        reader
            .read_exact(&mut bytes)
            .map_err(|_| ck_err(format!("truncated data for tensor {name}")))?;
        let mut tensor = Tensor::zeros(rows, cols);
        for (i, chunk) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(ck_err(format!("tensor {name}: non-finite value at {i}")));
            }
            tensor.data_mut()[i] = v as f64;
        }
        tensors.push(tensor);
    }

    let trailer = read_line(&mut reader, "trailer")?;
    if trailer != "end" {
        return Err(ck_err(format!("bad trailer {trailer:?}")));
    }

    let mut it = tensors.into_iter();
    Ok(EncoderParams {
        config,
        text_embed: it.next().unwrap(),
        text_proj_w: it.next().unwrap(),
        text_proj_b: it.next().unwrap(),
        audio_in_w: it.next().unwrap(),
        audio_in_b: it.next().unwrap(),
        audio_out_w: it.next().unwrap(),
        audio_out_b: it.next().unwrap(),
    })
}
