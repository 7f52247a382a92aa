//! Binary parameter files.
//!
//! Layout: `b"CTPG"`, format version as `u32`, `n_θ` as `u64` (16 bytes), then
//! `n_θ` little-endian `f64` values. A text sidecar at `<path>.meta` records
//! the architecture and the seed that produced the initial parameters.

use std::fs;
use std::path::{Path, PathBuf};

use super::{FlatParams, MlpArch, PolicyError};

const MAGIC: &[u8; 4] = b"CTPG";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamsMeta {
    pub arch: MlpArch,
    pub seed: u64,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn save_params(path: &Path, params: &[f64], meta: &ParamsMeta) -> Result<(), PolicyError> {
    super::check_dim("parameters", meta.arch.num_params(), params.len())?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * params.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;

    let sizes: Vec<String> = meta.arch.layer_sizes.iter().map(|s| s.to_string()).collect();
    let text = format!(
        "layer_sizes = {}\nactivation = tanh\nlast_layer_scale = {}\nseed = {}\nn_params = {}\n",
        sizes.join(","),
        meta.arch.last_layer_scale,
        meta.seed,
        params.len()
    );
    fs::write(sidecar_path(path), text)?;
    Ok(())
}

/// Reads a parameter file and its sidecar, checking that they agree.
pub fn load_params(path: &Path) -> Result<(FlatParams, ParamsMeta), PolicyError> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(PolicyError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(PolicyError::Format(format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * n {
        return Err(PolicyError::Format(format!("expected {n} values, file holds {} bytes", body.len())));
    }
    let values: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();

    let text = fs::read_to_string(sidecar_path(path))?;
    let meta = parse_sidecar(&text)?;
    super::check_dim("parameters", meta.arch.num_params(), n)?;
    Ok((FlatParams::new(values), meta))
}

fn parse_sidecar(text: &str) -> Result<ParamsMeta, PolicyError> {
    let bad = |m: String| PolicyError::Format(m);
    let (mut sizes, mut scale, mut seed) = (None, None, None);
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("malformed sidecar line `{line}`")))?;
        let v = v.trim();
        match k.trim() {
            "layer_sizes" => {
                let parsed: Result<Vec<usize>, _> = v.split(',').map(|s| s.trim().parse()).collect();
                sizes = Some(parsed.map_err(|e| bad(format!("layer_sizes: {e}")))?);
            }
            "last_layer_scale" => scale = Some(v.parse::<f64>().map_err(|e| bad(format!("last_layer_scale: {e}")))?),
            "seed" => seed = Some(v.parse::<u64>().map_err(|e| bad(format!("seed: {e}")))?),
            "activation" if v != "tanh" => return Err(bad(format!("unsupported activation `{v}`"))),
            _ => {}
        }
    }
    let arch = MlpArch::new(
        sizes.ok_or_else(|| bad("sidecar lacks layer_sizes".into()))?,
        scale.ok_or_else(|| bad("sidecar lacks last_layer_scale".into()))?,
    )?;
    Ok(ParamsMeta { arch, seed: seed.ok_or_else(|| bad("sidecar lacks seed".into()))? })
}
