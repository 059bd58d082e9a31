//! Binary persistence of trained networks.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"EGF1"
//! version            u32 (currently 1)
//! config fingerprint 32 bytes (SHA-256 of the architecture description)
//! parameter table    count u32, then per parameter:
//!                      name_len u32, UTF-8 name, rank u32,
//!                      dims (rank × u64), values (numel × f64)
//! batch-norm stats   count u32, then per layer:
//!                      name_len u32, UTF-8 name, channels u32,
//!                      running mean (channels × f64),
//!                      running variance (channels × f64)
//! optimizer moments  count u32, then per parameter:
//!                      name_len u32, UTF-8 name, step count u64,
//!                      first moment (numel × f64),
//!                      second moment (numel × f64)
//! ```
//!
//! Loading rebuilds the network from the given architecture description and
//! requires the stored fingerprint to match it exactly, so weights can never
//! silently load into a different architecture. Every learnable value,
//! running statistic, and optimizer moment round-trips bit for bit.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelError, NetConfig, Network};

const MAGIC: &[u8; 4] = b"EGF1";
const VERSION: u32 = 1;
/// Upper bounds that keep a corrupted header from requesting absurd
/// allocations before the corruption is detected.
const MAX_NAME_LEN: usize = 4096;
const MAX_RANK: usize = 8;
const MAX_NUMEL: usize = 1 << 28;

fn format_err(msg: impl Into<String>) -> ModelError {
    ModelError::Format(msg.into())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), ModelError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            format_err("truncated weights file")
        } else {
            ModelError::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, ModelError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, ModelError> {
    let mut bytes = vec![0u8; n * 8];
    read_exact(r, &mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn read_name(r: &mut impl Read) -> Result<String, ModelError> {
    let len = read_u32(r)? as usize;
    if len == 0 || len > MAX_NAME_LEN {
        return Err(format_err(format!("implausible name length {len}")));
    }
    let mut bytes = vec![0u8; len];
    read_exact(r, &mut bytes)?;
    String::from_utf8(bytes).map_err(|_| format_err("parameter name is not valid UTF-8"))
}

fn write_name(w: &mut impl Write, name: &str) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Serialize the network (weights, batch-norm running statistics, and
/// optimizer moments) to `path`.
pub fn save_weights(net: &Network, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&net.config().fingerprint())?;

    let names = net.parameter_names();
    w.write_all(&(names.len() as u32).to_le_bytes())?;
    for name in &names {
        let p = net.param(name).expect("parameter_names yields live names");
        write_name(&mut w, name)?;
        let shape = p.tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        write_f64s(&mut w, p.tensor.data())?;
    }

    w.write_all(&(net.bn.len() as u32).to_le_bytes())?;
    for (name, state) in &net.bn {
        write_name(&mut w, name)?;
        w.write_all(&(state.channels() as u32).to_le_bytes())?;
        write_f64s(&mut w, &state.running_mean)?;
        write_f64s(&mut w, &state.running_var)?;
    }

    w.write_all(&(names.len() as u32).to_le_bytes())?;
    for name in &names {
        let p = net.param(name).expect("parameter_names yields live names");
        write_name(&mut w, name)?;
        w.write_all(&p.step_count.to_le_bytes())?;
        write_f64s(&mut w, &p.adam_m)?;
        write_f64s(&mut w, &p.adam_v)?;
    }

    w.flush()?;
    Ok(())
}

/// Rebuild a network for `config` and load saved state into it. Fails —
/// returning no network at all — on any magic/version/fingerprint mismatch,
/// unknown or missing parameter, shape mismatch, truncation, or trailing
/// bytes.
pub fn load_weights(path: impl AsRef<Path>, config: &NetConfig) -> Result<Network, ModelError> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(format_err("not a weights file (bad magic)"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(format_err(format!(
            "unsupported weights format version {version} (expected {VERSION})"
        )));
    }
    let mut fingerprint = [0u8; 32];
    read_exact(&mut r, &mut fingerprint)?;
    if fingerprint != config.fingerprint() {
        return Err(format_err(
            "weights were saved for a different architecture (fingerprint mismatch)",
        ));
    }

    let mut net = Network::build(config.clone(), 0)?;
    let names = net.parameter_names();
    let index: HashMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let count = read_u32(&mut r)? as usize;
    if count != names.len() {
        return Err(format_err(format!(
            "file holds {count} parameters, architecture has {}",
            names.len()
        )));
    }
    let mut seen = vec![false; names.len()];
    for _ in 0..count {
        let name = read_name(&mut r)?;
        let slot = *index
            .get(name.as_str())
            .ok_or_else(|| format_err(format!("unknown parameter '{name}'")))?;
        if seen[slot] {
            return Err(format_err(format!("duplicate parameter '{name}'")));
        }
        seen[slot] = true;
        let rank = read_u32(&mut r)? as usize;
        if rank > MAX_RANK {
            return Err(format_err(format!("implausible rank {rank} for '{name}'")));
        }
        let mut dims = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let d = read_u64(&mut r)? as usize;
            numel = numel.saturating_mul(d);
            dims.push(d);
        }
        if numel > MAX_NUMEL {
            return Err(format_err(format!("implausible size for '{name}'")));
        }
        let p = net.param_mut(&name).expect("name came from the live index");
        if p.tensor.shape() != dims.as_slice() {
            return Err(format_err(format!(
                "parameter '{name}' has shape {:?} in the file but {:?} in the architecture",
                dims,
                p.tensor.shape()
            )));
        }
        let values = read_f64s(&mut r, numel)?;
        p.tensor.data_mut().copy_from_slice(&values);
    }

    let bn_count = read_u32(&mut r)? as usize;
    if bn_count != net.bn.len() {
        return Err(format_err(format!(
            "file holds {bn_count} batch-norm layers, architecture has {}",
            net.bn.len()
        )));
    }
    let mut bn_seen: HashMap<String, ()> = HashMap::new();
    for _ in 0..bn_count {
        let name = read_name(&mut r)?;
        if bn_seen.insert(name.clone(), ()).is_some() {
            return Err(format_err(format!("duplicate batch-norm layer '{name}'")));
        }
        let channels = read_u32(&mut r)? as usize;
        let state = net
            .bn
            .get_mut(&name)
            .ok_or_else(|| format_err(format!("unknown batch-norm layer '{name}'")))?;
        if channels != state.channels() {
            return Err(format_err(format!(
                "batch-norm layer '{name}' has {channels} channels in the file but {} in the architecture",
                state.channels()
            )));
        }
        state.running_mean = read_f64s(&mut r, channels)?;
        state.running_var = read_f64s(&mut r, channels)?;
    }

    let moment_count = read_u32(&mut r)? as usize;
    if moment_count != names.len() {
        return Err(format_err(format!(
            "file holds {moment_count} moment records, architecture has {} parameters",
            names.len()
        )));
    }
    let mut moment_seen = vec![false; names.len()];
    for _ in 0..moment_count {
        let name = read_name(&mut r)?;
        let slot = *index
            .get(name.as_str())
            .ok_or_else(|| format_err(format!("unknown parameter '{name}' in moments")))?;
        if moment_seen[slot] {
            return Err(format_err(format!("duplicate moment record '{name}'")));
        }
        moment_seen[slot] = true;
        let step_count = read_u64(&mut r)?;
        let p = net.param_mut(&name).expect("name came from the live index");
        let n = p.tensor.numel();
        p.step_count = step_count;
        p.adam_m = read_f64s(&mut r, n)?;
        p.adam_v = read_f64s(&mut r, n)?;
    }

    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => return Err(format_err("trailing bytes after weights data")),
        Err(e) => return Err(ModelError::Io(e)),
    }

    Ok(net)
}
