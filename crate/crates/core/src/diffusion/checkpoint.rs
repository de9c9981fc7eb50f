//! Binary denoiser checkpoints.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic            8 bytes  "FPAUGDM1"
//! version          u32      1
//! ap_count         u32
//! hidden_count     u32
//! hidden widths    u32 x hidden_count
//! activation       u8       0 = SiLU, 1 = ReLU
//! skips            u8       0 / 1
//! input_blend      u8       0 / 1
//! reserved         u8       0
//! cond_frequencies u32
//! time_dim         u32
//! bounds           f64 x 4  min.x, min.y, max.x, max.y
//! steps            u32
//! beta_start       f64
//! beta_end         f64
//! data_sigma       f64      0 = no output blend
//! param_count      u64
//! params           f64 x param_count
//! ```

use std::path::Path;

use super::denoiser::{DenoiserArch, DenoiserNetwork};
use super::schedule::NoiseSchedule;
use crate::dataset::{Bounds, Coordinate};
use crate::error::{Error, Result};
use crate::nn::Activation;

const MAGIC: &[u8; 8] = b"FPAUGDM1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: DenoiserNetwork,
    pub schedule: NoiseSchedule,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let net = &self.network;
        let arch = net.arch();
        let mut b = Vec::with_capacity(96 + 8 * net.param_count());
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(crate::diffusion::Denoise::ap_count(net) as u32).to_le_bytes());
        b.extend_from_slice(&(arch.hidden.len() as u32).to_le_bytes());
        for w in &arch.hidden {
            b.extend_from_slice(&(*w as u32).to_le_bytes());
        }
        b.push(arch.activation.code());
        b.push(arch.skips as u8);
        b.push(arch.input_blend as u8);
        b.push(0);
        b.extend_from_slice(&(arch.cond_frequencies as u32).to_le_bytes());
        b.extend_from_slice(&(arch.time_dim as u32).to_le_bytes());
        let bounds = net.bounds();
        for v in [bounds.min.x, bounds.min.y, bounds.max.x, bounds.max.y] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&(self.schedule.steps() as u32).to_le_bytes());
        b.extend_from_slice(&self.schedule.beta_start().to_le_bytes());
        b.extend_from_slice(&self.schedule.beta_end().to_le_bytes());
        b.extend_from_slice(&net.data_sigma().to_le_bytes());
        b.extend_from_slice(&(net.param_count() as u64).to_le_bytes());
        for p in net.params() {
            b.extend_from_slice(&p.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Config("not a denoiser checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {version}")));
        }
        let ap_count = r.u32()? as usize;
        let hidden_count = r.u32()? as usize;
        let hidden = (0..hidden_count).map(|_| r.u32().map(|w| w as usize)).collect::<Result<Vec<_>>>()?;
        let activation = Activation::from_code(r.u8()?)?;
        let skips = r.flag("skip")?;
        let input_blend = r.flag("input blend")?;
        r.take(1)?;
        let cond_frequencies = r.u32()? as usize;
        let time_dim = r.u32()? as usize;
        let (x0, y0, x1, y1) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let bounds = Bounds::new(Coordinate { x: x0, y: y0 }, Coordinate { x: x1, y: y1 })?;
        let steps = r.u32()? as usize;
        let schedule = NoiseSchedule::linear(steps, r.f64()?, r.f64()?)?;
        let data_sigma = r.f64()?;
        let count = r.u64()? as usize;
        if r.bytes.len() - r.pos != count * 8 {
            return Err(Error::Config(format!(
                "checkpoint declares {count} parameters but carries {} bytes",
                r.bytes.len() - r.pos
            )));
        }
        let params = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let arch = DenoiserArch {
            hidden,
            activation,
            cond_frequencies,
            time_dim,
            skips,
            input_blend,
        };
        let network = DenoiserNetwork::from_params(arch, ap_count, bounds, steps, params)?.with_blend(data_sigma, &schedule)?;
        Ok(Checkpoint { network, schedule })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Config("checkpoint is truncated".into()))?;
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn flag(&mut self, what: &str) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Config(format!("bad {what} flag {v}"))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
