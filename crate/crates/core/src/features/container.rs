//! Binary feature container: `b"SKFM"`, u32 version, u8 kind tag, u64 rows,
//! u64 cols, then row-major little-endian f64 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{FeatureKind, FeatureMatrix};
use crate::audio::tmp_path;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: &[u8; 4] = b"SKFM";
const VERSION: u32 = 1;

pub fn write_features(f: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = tmp_path(path);
    let io = |e| Error::io(path, e);
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io)?);
        encode(f, &mut w).map_err(io)?;
        w.flush().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(io)
}

fn encode(f: &FeatureMatrix, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u8(f.kind.tag())?;
    w.write_u64::<LittleEndian>(f.num_frames() as u64)?;
    w.write_u64::<LittleEndian>(f.dim() as u64)?;
    for v in f.values.as_slice() {
        w.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode(&mut BufReader::new(file))
}

fn decode(r: &mut impl Read) -> Result<FeatureMatrix> {
    let trunc = |e: std::io::Error| Error::Parse(format!("feature container: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != MAGIC {
        return Err(Error::Parse("feature container: bad magic".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(trunc)?;
    if version != VERSION {
        return Err(Error::Format {
            field: "version",
            value: version.to_string(),
        });
    }
    let kind = FeatureKind::from_tag(r.read_u8().map_err(trunc)?)?;
    let rows = r.read_u64::<LittleEndian>().map_err(trunc)? as usize;
    let cols = r.read_u64::<LittleEndian>().map_err(trunc)? as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Parse("feature container: dimensions overflow".into()))?;
    let mut data = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut data).map_err(trunc)?;
    Ok(FeatureMatrix::new(
        Matrix::from_vec(rows, cols, data)?,
        kind,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(rows in 0usize..20, cols in 1usize..8, seed in any::<u64>()) {
            let data: Vec<f64> = (0..rows * cols)
                .map(|i| (seed.wrapping_mul(i as u64 + 1) % 10007) as f64 * 1.5e-3 - 7.0)
                .collect();
            let f = FeatureMatrix::new(Matrix::from_vec(rows, cols, data).unwrap(), FeatureKind::Cqcc);
            let mut buf = Vec::new();
            encode(&f, &mut buf).unwrap();
            let g = decode(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(g.values, f.values);
            prop_assert_eq!(g.kind, f.kind);
        }
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(decode(&mut &b"NOPE"[..]).is_err());
        let f = FeatureMatrix::new(Matrix::zeros(3, 2), FeatureKind::Mfcc);
        let mut buf = Vec::new();
        encode(&f, &mut buf).unwrap();
        assert!(matches!(
            decode(&mut &buf[..buf.len() - 3]),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.skfm");
        let f = FeatureMatrix::new(
            Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            FeatureKind::Spectrum,
        );
        write_features(&f, &p).unwrap();
        assert_eq!(read_features(&p).unwrap().values, f.values);
    }
}
