//! Shared pieces of the binary model formats: magic/version headers,
//! configuration digests and atomic file writes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::audio::tmp_path;
use crate::error::{Error, Result};

pub type ConfigDigest = [u8; 32];

/// SHA-256 of the canonical JSON encoding of a training configuration.
pub fn config_digest<T: Serialize>(cfg: &T) -> ConfigDigest {
    let json = serde_json::to_vec(cfg).expect("configuration types serialize to JSON");
    Sha256::digest(&json).into()
}

pub fn digest_hex(d: &ConfigDigest) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes through a temporary sibling file and renames it into place.
pub(crate) fn write_atomic(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let tmp = tmp_path(path);
    let io = |e| Error::io(path, e);
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io)?);
        body(&mut w).map_err(io)?;
        w.flush().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(io)
}

pub(crate) fn open_read(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).map_err(|e| Error::io(path, e))?,
    ))
}

pub(crate) fn write_header(
    w: &mut impl Write,
    magic: &[u8; 4],
    version: u32,
) -> std::io::Result<()> {
    w.write_all(magic)?;
    w.write_u32::<LittleEndian>(version)
}

pub(crate) fn truncated(what: &'static str) -> impl Fn(std::io::Error) -> Error {
    move |e| Error::Parse(format!("{what}: {e}"))
}

pub(crate) fn read_header(
    r: &mut impl Read,
    magic: &[u8; 4],
    version: u32,
    what: &'static str,
) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m).map_err(truncated(what))?;
    if &m != magic {
        return Err(Error::Parse(format!("{what}: bad magic")));
    }
    let v = r.read_u32::<LittleEndian>().map_err(truncated(what))?;
    if v != version {
        return Err(Error::Format {
            field: "version",
            value: v.to_string(),
        });
    }
    Ok(())
}

pub(crate) fn write_f64s(w: &mut impl Write, xs: &[f64]) -> std::io::Result<()> {
    for x in xs {
        w.write_f64::<LittleEndian>(*x)?;
    }
    Ok(())
}

pub(crate) fn read_f64s(r: &mut impl Read, n: usize, what: &'static str) -> Result<Vec<f64>> {
    let mut v = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut v)
        .map_err(truncated(what))?;
    Ok(v)
}

pub(crate) fn read_len(r: &mut impl Read, what: &'static str) -> Result<usize> {
    let n = r.read_u64::<LittleEndian>().map_err(truncated(what))?;
    usize::try_from(n).map_err(|_| Error::Parse(format!("{what}: length {n} overflows")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable_and_sensitive() {
        #[derive(Serialize)]
        struct C {
            k: usize,
        }
        assert_eq!(config_digest(&C { k: 3 }), config_digest(&C { k: 3 }));
        assert_ne!(config_digest(&C { k: 3 }), config_digest(&C { k: 4 }));
        assert_eq!(digest_hex(&config_digest(&C { k: 1 })).len(), 64);
    }

    #[test]
    fn header_round_trip() {
        let mut buf = Vec::new();
        write_header(&mut buf, b"TEST", 2).unwrap();
        assert!(read_header(&mut buf.as_slice(), b"TEST", 2, "t").is_ok());
        assert!(matches!(
            read_header(&mut buf.as_slice(), b"TEST", 1, "t"),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            read_header(&mut buf.as_slice(), b"NOPE", 2, "t"),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            read_header(&mut &buf[..3], b"TEST", 2, "t"),
            Err(Error::Parse(_))
        ));
    }
}
