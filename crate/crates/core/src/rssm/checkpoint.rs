//! Binary checkpoint container.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic        4 bytes  "LMPC"
//! version      u32
//! config       obs_dim, action_dim, h_dim, s_dim, hidden_dim : u64
//!              min_std, free_nats, reward_scale, obs_std      : f64
//! count        u64      number of tensors that follow
//! tensor       name_len u32, name (utf-8), ndim u32, dims u64 * ndim,
//!              data f64 * prod(dims)
//! ```
//!
//! Values round-trip bit-exactly.

use std::io::{Read, Write};

use super::{ModelParams, RssmConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LMPC";
pub const FORMAT_VERSION: u32 = 2;

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

fn read_len(r: &mut impl Read, what: &str) -> Result<usize> {
    usize::try_from(read_u64(r)?).map_err(|_| Error::Format(format!("{what} overflows usize")))
}

/// Writes a header followed by `tensors` in the given order.
pub fn write_checkpoint<'a>(
    w: &mut impl Write,
    config: &RssmConfig,
    tensors: impl ExactSizeIterator<Item = (String, &'a Tensor)>,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for d in [
        config.obs_dim,
        config.action_dim,
        config.h_dim,
        config.s_dim,
        config.hidden_dim,
    ] {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in [config.min_std, config.free_nats, config.reward_scale, config.obs_std] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        let len = u32::try_from(bytes.len())
            .map_err(|_| Error::Format(format!("parameter name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a container written by [`write_checkpoint`].
pub fn read_checkpoint(r: &mut impl Read) -> Result<(RssmConfig, Vec<(String, Tensor)>)> {
    let magic: [u8; 4] = read_array(r)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let config = RssmConfig {
        obs_dim: read_len(r, "obs_dim")?,
        action_dim: read_len(r, "action_dim")?,
        h_dim: read_len(r, "h_dim")?,
        s_dim: read_len(r, "s_dim")?,
        hidden_dim: read_len(r, "hidden_dim")?,
        min_std: read_f64(r)?,
        free_nats: read_f64(r)?,
        reward_scale: read_f64(r)?,
        obs_std: read_f64(r)?,
    };
    config.validate()?;
    let count = read_len(r, "tensor count")?;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("parameter name is not utf-8".into()))?;
        let ndim = read_u32(r)? as usize;
        let shape = (0..ndim)
            .map(|_| read_len(r, "dimension"))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
        tensors.push((name, Tensor::new(shape, data)?));
    }
    Ok((config, tensors))
}

/// Single-model convenience wrapper around [`write_checkpoint`].
pub fn save_model(w: &mut impl Write, params: &ModelParams) -> Result<()> {
    write_checkpoint(
        w,
        params.config(),
        ModelParams::names().into_iter().zip(params.tensors()),
    )
}

pub fn load_model(r: &mut impl Read) -> Result<ModelParams> {
    let (config, tensors) = read_checkpoint(r)?;
    ModelParams::from_named(&config, tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn params() -> ModelParams {
        let mut c = RssmConfig::new(2, 1);
        c.h_dim = 4;
        c.s_dim = 3;
        c.hidden_dim = 5;
        c.free_nats = 0.25;
        c.obs_std = 0.3;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        ModelParams::init(&c, &mut rng).unwrap()
    }

    #[test]
    fn bit_exact_roundtrip() {
        let mut p = params();
        // Values that do not survive a decimal round-trip.
        p.bias_mut(super::super::Layer::ObsOut).data_mut()[0] = f64::MIN_POSITIVE / 3.0;
        p.bias_mut(super::super::Layer::ObsOut).data_mut()[1] = -0.0;
        let mut buf = Vec::new();
        save_model(&mut buf, &p).unwrap();
        let q = load_model(&mut buf.as_slice()).unwrap();
        assert_eq!(q.config(), p.config());
        for (a, b) in p.tensors().iter().zip(q.tensors()) {
            assert_eq!(a.shape(), b.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn header_layout() {
        let p = params();
        let mut buf = Vec::new();
        save_model(&mut buf, &p).unwrap();
        assert_eq!(&buf[..4], b"LMPC");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[56..64].try_into().unwrap()), 0.25);
        assert_eq!(f64::from_le_bytes(buf[72..80].try_into().unwrap()), 0.3);
        assert_eq!(u64::from_le_bytes(buf[80..88].try_into().unwrap()), 24);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let p = params();
        let mut buf = Vec::new();
        save_model(&mut buf, &p).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(load_model(&mut bad.as_slice()), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(load_model(&mut bad.as_slice()).is_err());
        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(load_model(&mut &truncated[..]), Err(Error::Io(_))));
    }
}
