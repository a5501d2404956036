//! Little-endian `GPB1` bundle container.
//!
//! ```text
//! "GPB1" | u32 version | u32 T | u32 d | u32 d_z | u64 N | u64 E
//! u8 undirected | u8 self_loops
//! f32[T*d] W | f32[T] b | f32[N*d_z] embeddings
//! u64[N+1] offsets | u64[E] targets
//! u64 masked_count | {u64 node, u32 position, u32 token, f32[d]}*
//! u64 prompt_count | {u64 node, u32 prompt_id, f32[d]}*
//! u8 has_token_strings | {u32 len, utf-8}*T
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lm_head::LmHead;
use crate::numerics::DenseMatrix;
use crate::tag::{Bundle, Graph, MaskedTokenRecord, PromptRecord};

pub const BUNDLE_MAGIC: &[u8; 4] = b"GPB1";
pub const BUNDLE_VERSION: u32 = 1;

pub fn save_bundle(bundle: &Bundle, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_bundle(bundle, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<Bundle> {
    let bytes = fs::read(path)?;
    read_bundle(&bytes)
}

pub fn write_bundle<W: Write>(bundle: &Bundle, w: &mut W) -> Result<()> {
    bundle.validate()?;
    let t = bundle.vocab_size();
    let d = bundle.hidden_dim();
    let g = &bundle.graph;

    w.write_all(BUNDLE_MAGIC)?;
    put_u32(w, BUNDLE_VERSION)?;
    put_u32(w, dim_u32(t)?)?;
    put_u32(w, dim_u32(d)?)?;
    put_u32(w, dim_u32(bundle.embed_dim())?)?;
    put_u64(w, g.num_nodes() as u64)?;
    put_u64(w, g.num_edges() as u64)?;
    w.write_all(&[bundle.undirected as u8, g.self_loops_added() as u8])?;
    put_f32s(w, bundle.head.weight().as_slice())?;
    put_f32s(w, bundle.head.bias())?;
    put_f32s(w, bundle.embeddings.as_slice())?;
    for &o in g.offsets() {
        put_u64(w, o as u64)?;
    }
    for &j in g.targets() {
        put_u64(w, j as u64)?;
    }
    put_u64(w, bundle.masked.len() as u64)?;
    for r in &bundle.masked {
        put_u64(w, r.node as u64)?;
        put_u32(w, r.position)?;
        put_u32(w, r.token)?;
        put_f32s(w, &r.hidden)?;
    }
    put_u64(w, bundle.prompts.len() as u64)?;
    for r in &bundle.prompts {
        put_u64(w, r.node as u64)?;
        put_u32(w, r.prompt_id)?;
        put_f32s(w, &r.hidden)?;
    }
    match &bundle.token_strings {
        None => w.write_all(&[0])?,
        Some(strings) => {
            w.write_all(&[1])?;
            for s in strings {
                put_u32(w, dim_u32(s.len())?)?;
                w.write_all(s.as_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_bundle(bytes: &[u8]) -> Result<Bundle> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != BUNDLE_MAGIC {
        return Err(Error::Format("bad magic, expected GPB1".into()));
    }
    let version = r.u32()?;
    if version != BUNDLE_VERSION {
        return Err(Error::Format(format!("unsupported bundle version {version}")));
    }
    let t = r.u32()? as usize;
    let d = r.u32()? as usize;
    let d_z = r.u32()? as usize;
    let n = r.len_u64()?;
    let e = r.len_u64()?;
    let undirected = r.flag()?;
    let self_loops = r.flag()?;

    let weight = DenseMatrix::from_vec(t, d, r.f32s(t.checked_mul(d).ok_or_else(overflow)?)?)
        .map_err(|e| Error::validation(e.to_string()))?;
    let bias = r.f32s(t)?;
    let head = LmHead::new(weight, bias)?;
    let embeddings = DenseMatrix::from_vec(n, d_z, r.f32s(n.checked_mul(d_z).ok_or_else(overflow)?)?)
        .map_err(|e| Error::validation(e.to_string()))?;
    let offsets = r.u64s(n.checked_add(1).ok_or_else(overflow)?)?;
    let targets = r.u64s(e)?;
    let graph = Graph::from_csr(n, offsets, targets, self_loops)?;

    let masked_count = r.len_u64()?;
    let mut masked = Vec::with_capacity(masked_count.min(r.remaining() / 16));
    for _ in 0..masked_count {
        let node = r.u64()? as usize;
        let position = r.u32()?;
        let token = r.u32()?;
        let hidden = r.f32s(d)?;
        masked.push(MaskedTokenRecord {
            node,
            position,
            token,
            hidden,
        });
    }
    let prompt_count = r.len_u64()?;
    let mut prompts = Vec::with_capacity(prompt_count.min(r.remaining() / 12));
    for _ in 0..prompt_count {
        let node = r.u64()? as usize;
        let prompt_id = r.u32()?;
        let hidden = r.f32s(d)?;
        prompts.push(PromptRecord {
            node,
            prompt_id,
            hidden,
        });
    }
    let token_strings = if r.flag()? {
        let mut strings = Vec::with_capacity(t.min(r.remaining() / 4));
        for _ in 0..t {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            let s = std::str::from_utf8(raw).map_err(|_| Error::Format("token string is not valid UTF-8".into()))?;
            strings.push(s.to_owned());
        }
        Some(strings)
    } else {
        None
    };
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes after bundle", r.remaining())));
    }

    let bundle = Bundle {
        graph,
        undirected,
        embeddings,
        head,
        masked,
        prompts,
        token_strings,
    };
    bundle.validate()?;
    Ok(bundle)
}

fn overflow() -> Error {
    Error::Format("dimension overflow".into())
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit in u32")))
}

pub(crate) fn put_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_f32s<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

/// Cursor over an in-memory file. Running past the end is an
/// `UnexpectedEof` I/O error.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if len > self.remaining() {
            return Err(Error::Io(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                format!("truncated file: need {len} bytes at offset {}", self.pos),
            )));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len_u64(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| overflow())
    }

    fn flag(&mut self) -> Result<bool> {
        match self.take(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!("flag byte {other} is neither 0 nor 1"))),
        }
    }

    pub(crate) fn f32s(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count.checked_mul(4).ok_or_else(overflow)?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn u64s(&mut self, count: usize) -> Result<Vec<usize>> {
        let raw = self.take(count.checked_mul(8).ok_or_else(overflow)?)?;
        raw.chunks_exact(8)
            .map(|c| usize::try_from(u64::from_le_bytes(c.try_into().unwrap())).map_err(|_| overflow()))
            .collect()
    }
}
