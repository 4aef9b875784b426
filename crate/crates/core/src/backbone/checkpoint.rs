//! Binary parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        4 bytes  "MPU1"
//! version      u32      1
//! ratio        u32
//! feature_dim  u32
//! hidden       u32
//! offset_scale f64
//! seed         u64
//! n_params     u32
//! repeated n_params times:
//!   name_len   u32
//!   name       name_len bytes, UTF-8
//!   ndim       u32
//!   dims       ndim x u32
//!   values     prod(dims) x f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BackboneConfig, Upsampler};
use crate::autodiff::{ParameterSet, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MPU1";
const VERSION: u32 = 1;

pub fn write_checkpoint_to<W: Write>(model: &Upsampler, mut w: W) -> Result<()> {
    let cfg = model.config();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [cfg.ratio, cfg.feature_dim, cfg.hidden_layers] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&cfg.offset_scale.to_le_bytes())?;
    w.write_all(&cfg.seed.to_le_bytes())?;
    let params = model.params();
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_checkpoint(model: &Upsampler, path: &Path) -> Result<()> {
    write_checkpoint_to(model, BufWriter::new(File::create(path)?))
}

fn read_exact<R: Read, const N: usize>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            Error::Format(format!("checkpoint truncated while reading {what}"))
        }
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<R, 4>(r, what)?))
}

pub fn read_checkpoint_from<R: Read>(mut r: R) -> Result<Upsampler> {
    let magic = read_exact::<R, 4>(&mut r, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let ratio = read_u32(&mut r, "ratio")? as usize;
    let feature_dim = read_u32(&mut r, "feature_dim")? as usize;
    let hidden_layers = read_u32(&mut r, "hidden_layers")? as usize;
    let offset_scale = f64::from_le_bytes(read_exact::<R, 8>(&mut r, "offset_scale")?);
    let seed = u64::from_le_bytes(read_exact::<R, 8>(&mut r, "seed")?);
    let config = BackboneConfig {
        ratio,
        feature_dim,
        hidden_layers,
        offset_scale,
        seed,
    };
    config.validate()?;

    let count = read_u32(&mut r, "parameter count")?;
    let mut params = ParameterSet::new();
    for _ in 0..count {
        let len = read_u32(&mut r, "name length")? as usize;
        if len > 4096 {
            return Err(Error::Format(format!(
                "parameter name length {len} is implausible"
            )));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|_| Error::Format("checkpoint truncated while reading a name".into()))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let ndim = read_u32(&mut r, "rank")? as usize;
        if ndim == 0 || ndim > 8 {
            return Err(Error::Format(format!("parameter `{name}` has rank {ndim}")));
        }
        let shape = (0..ndim)
            .map(|_| read_u32(&mut r, "dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(read_exact::<R, 8>(&mut r, "values")?));
        }
        params
            .insert(&name, Tensor::new(shape, data)?)
            .map_err(|_| Error::Format(format!("duplicate parameter `{name}` in checkpoint")))?;
    }
    Upsampler::from_parts(config, params)
}

pub fn read_checkpoint(path: &Path) -> Result<Upsampler> {
    read_checkpoint_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = Upsampler::init(BackboneConfig {
            ratio: 8,
            seed: 3,
            offset_scale: 0.125,
            ..Default::default()
        })
        .unwrap();
        let mut buf = Vec::new();
        write_checkpoint_to(&m, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"MPU1");
        let back = read_checkpoint_from(&buf[..]).unwrap();
        assert_eq!(back.config(), m.config());
        for ((na, a), (nb, b)) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(na, nb);
            let ba: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ba, bb);
        }
        let mut again = Vec::new();
        write_checkpoint_to(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let m = Upsampler::init(BackboneConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_checkpoint_to(&m, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_checkpoint_from(&bad[..]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            read_checkpoint_from(&buf[..buf.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut ver = buf.clone();
        ver[4] = 9;
        assert!(read_checkpoint_from(&ver[..]).is_err());
    }
}
