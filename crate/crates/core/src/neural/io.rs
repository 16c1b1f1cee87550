//! Graph files: `b"SKNN"`, u32 version, u64 manifest length, a JSON manifest
//! (graph spec plus free-form metadata), u64 value count, then parameter
//! values as little-endian f64 in node order.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::graph::{GraphSpec, LayerGraph};
use crate::codec;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SKNN";
const VERSION: u32 = 1;
const WHAT: &str = "graph file";

#[derive(Serialize, Deserialize)]
struct Manifest {
    graph: GraphSpec,
    meta: serde_json::Value,
}

pub fn save_graph(g: &LayerGraph, meta: &serde_json::Value, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_graph(g, meta)?;
    codec::write_atomic(path.as_ref(), |w| w.write_all(&bytes))
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<(LayerGraph, serde_json::Value)> {
    decode_graph(&mut codec::open_read(path.as_ref())?)
}

pub fn encode_graph(g: &LayerGraph, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let manifest = serde_json::to_vec(&Manifest {
        graph: g.spec().clone(),
        meta: meta.clone(),
    })
    .map_err(|e| Error::Parse(format!("{WHAT}: {e}")))?;
    let values = g.flat_values();
    let mut out = Vec::with_capacity(24 + manifest.len() + 8 * values.len());
    let io = |e: std::io::Error| Error::Parse(format!("{WHAT}: {e}"));
    codec::write_header(&mut out, MAGIC, VERSION).map_err(io)?;
    out.write_u64::<LittleEndian>(manifest.len() as u64)
        .map_err(io)?;
    out.extend_from_slice(&manifest);
    out.write_u64::<LittleEndian>(values.len() as u64)
        .map_err(io)?;
    codec::write_f64s(&mut out, &values).map_err(io)?;
    Ok(out)
}

pub fn decode_graph(r: &mut impl Read) -> Result<(LayerGraph, serde_json::Value)> {
    codec::read_header(r, MAGIC, VERSION, WHAT)?;
    let len = codec::read_len(r, WHAT)?;
    if len > 1 << 26 {
        return Err(Error::Parse(format!("{WHAT}: manifest of {len} bytes")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(codec::truncated(WHAT))?;
    let m: Manifest =
        serde_json::from_slice(&buf).map_err(|e| Error::Parse(format!("{WHAT}: {e}")))?;
    let n = codec::read_len(r, WHAT)?;
    if n > 1 << 30 {
        return Err(Error::Parse(format!("{WHAT}: {n} parameter values")));
    }
    let values = codec::read_f64s(r, n, WHAT)?;
    Ok((LayerGraph::from_values(m.graph, &values)?, m.meta))
}
