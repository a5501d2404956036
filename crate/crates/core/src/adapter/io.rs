//! `GPA1` adapter file:
//! `"GPA1" | u32 version | u32 d_z, d_a, d, mlp_depth, H | f32 tensors`,
//! tensors in [`AdapterParams::to_flat`] order.

use std::fs;
use std::path::Path;

use crate::adapter::params::layer_dims;
use crate::adapter::{AdapterConfig, AdapterParams, Linear};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::tag::format::{put_f32s, put_u32, ByteReader};

pub const ADAPTER_MAGIC: &[u8; 4] = b"GPA1";
pub const ADAPTER_VERSION: u32 = 1;

pub fn adapter_to_bytes(params: &AdapterParams) -> Result<Vec<u8>> {
    let d_z = params.embed_dim();
    let d_a = params.gate_dim();
    let d = params.hidden_dim();
    let depth = params.mlp.len();
    let hidden = if depth > 1 { params.mlp[0].output_dim() } else { 0 };
    let mut out = Vec::with_capacity(24 + params.num_params() * 4);
    out.extend_from_slice(ADAPTER_MAGIC);
    for v in [ADAPTER_VERSION as usize, d_z, d_a, d, depth, hidden] {
        put_u32(
            &mut out,
            u32::try_from(v).map_err(|_| Error::invalid("adapter dimension exceeds u32"))?,
        )?;
    }
    put_f32s(&mut out, &params.to_flat())?;
    Ok(out)
}

pub fn adapter_from_bytes(bytes: &[u8]) -> Result<AdapterParams> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != ADAPTER_MAGIC {
        return Err(Error::Format("bad magic, expected GPA1".into()));
    }
    let version = r.u32()?;
    if version != ADAPTER_VERSION {
        return Err(Error::Format(format!("unsupported adapter version {version}")));
    }
    let d_z = r.u32()? as usize;
    let d_a = r.u32()? as usize;
    let d = r.u32()? as usize;
    let depth = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    if d_z == 0 || d_a == 0 || d == 0 || depth == 0 || (depth > 1 && hidden == 0) {
        return Err(Error::validation("adapter header has a zero dimension"));
    }
    let cfg = AdapterConfig {
        d_a,
        mlp_depth: depth,
        mlp_hidden: hidden,
        ..AdapterConfig::default()
    };
    let w_q = DenseMatrix::from_vec(d_z, d_a, r.f32s(d_z * d_a)?)?;
    let w_k = DenseMatrix::from_vec(d_z, d_a, r.f32s(d_z * d_a)?)?;
    let dims = layer_dims(&cfg, d_z, d);
    let mut mlp = Vec::with_capacity(depth);
    for w in dims.windows(2) {
        let weight = DenseMatrix::from_vec(w[0], w[1], r.f32s(w[0] * w[1])?)?;
        let bias = r.f32s(w[1])?;
        mlp.push(Linear { weight, bias });
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes after adapter", r.remaining())));
    }
    let params = AdapterParams { w_q, w_k, mlp };
    if !params.is_finite() {
        return Err(Error::validation("adapter contains non-finite values"));
    }
    Ok(params)
}

pub fn save_adapter(params: &AdapterParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, adapter_to_bytes(params)?)?;
    Ok(())
}

pub fn load_adapter(path: impl AsRef<Path>) -> Result<AdapterParams> {
    adapter_from_bytes(&fs::read(path)?)
}
