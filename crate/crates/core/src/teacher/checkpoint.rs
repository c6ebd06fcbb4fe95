//! Binary checkpoint framing shared by teacher and student networks.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "TFDCKPT1"
//! kind         u8       0 = teacher, 1 = student
//! dim          u32
//! num_classes  u32
//! embed_freqs  u32
//! num_layers   u32
//! widths       u32 × num_layers
//! sigma_min    f64
//! sigma_max    f64
//! input_sigma  f64      fixed noise level fed to a student; 0 for teachers
//! spec_hash    32 bytes
//! step         u64
//! n_params     u64
//! n_extra      u64
//! params       f64 × n_params
//! extra        f64 × n_extra
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::net::{Architecture, DenoiserNet, NoiseSchedule};
use crate::error::{Result, TfdError};

pub const MAGIC: &[u8; 8] = b"TFDCKPT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Teacher,
    Student,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub net: DenoiserNet,
    pub input_sigma: f64,
    pub spec_hash: [u8; 32],
    pub step: u64,
    /// Opaque trailing state (optimizer moments, frozen bandwidths, ...).
    pub extra: Vec<f64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let arch = self.net.arch();
        let schedule = self.net.schedule();
        let params = self.net.flat_params();
        let mut out = Vec::with_capacity(128 + 8 * (params.len() + self.extra.len()));
        out.extend_from_slice(MAGIC);
        out.push(match self.kind {
            CheckpointKind::Teacher => 0,
            CheckpointKind::Student => 1,
        });
        for v in [arch.dim, arch.num_classes, arch.embed_freqs, arch.widths.len()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &w in &arch.widths {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        for v in [schedule.sigma_min, schedule.sigma_max, self.input_sigma] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.spec_hash);
        for v in [self.step, params.len() as u64, self.extra.len() as u64] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in params.iter().chain(&self.extra) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(TfdError::Format("bad checkpoint magic".into()));
        }
        let kind = match r.take(1)?[0] {
            0 => CheckpointKind::Teacher,
            1 => CheckpointKind::Student,
            k => return Err(TfdError::Format(format!("unknown checkpoint kind {k}"))),
        };
        let dim = r.u32()? as usize;
        let num_classes = r.u32()? as usize;
        let embed_freqs = r.u32()? as usize;
        let num_layers = r.u32()? as usize;
        if num_layers > 4096 {
            return Err(TfdError::Format(format!("implausible layer count {num_layers}")));
        }
        let widths = (0..num_layers).map(|_| r.u32().map(|w| w as usize)).collect::<Result<_>>()?;
        let schedule = NoiseSchedule {
            sigma_min: r.f64()?,
            sigma_max: r.f64()?,
        };
        let input_sigma = r.f64()?;
        let mut spec_hash = [0u8; 32];
        spec_hash.copy_from_slice(r.take(32)?);
        let step = r.u64()?;
        let n_params = r.u64()? as usize;
        let n_extra = r.u64()? as usize;
        let arch = Architecture {
            dim,
            num_classes,
            widths,
            embed_freqs,
        };
        arch.validate().map_err(|e| TfdError::Format(e.to_string()))?;
        if n_params != arch.param_count() {
            return Err(TfdError::Format(format!(
                "header declares {n_params} parameters, architecture needs {}",
                arch.param_count()
            )));
        }
        let expected = r.pos + 8 * (n_params + n_extra);
        if bytes.len() != expected {
            return Err(TfdError::Format(format!(
                "checkpoint is {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let params: Vec<f64> = (0..n_params).map(|_| r.f64()).collect::<Result<_>>()?;
        let extra: Vec<f64> = (0..n_extra).map(|_| r.f64()).collect::<Result<_>>()?;
        let mut net = DenoiserNet::new(arch, schedule, &mut crate::rng::SeedStream::new(0))
            .map_err(|e| TfdError::Format(e.to_string()))?;
        net.set_flat_params(&params)?;
        Ok(Self {
            kind,
            net,
            input_sigma,
            spec_hash,
            step,
            extra,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(TfdError::Format("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    fn sample() -> Checkpoint {
        let arch = Architecture {
            dim: 2,
            num_classes: 4,
            widths: vec![8, 12],
            embed_freqs: 3,
        };
        Checkpoint {
            kind: CheckpointKind::Student,
            net: DenoiserNet::new(arch, NoiseSchedule::default(), &mut SeedStream::new(9)).unwrap(),
            input_sigma: 2.0,
            spec_hash: [7u8; 32],
            step: 42,
            extra: vec![1.5, -0.25, f64::MIN_POSITIVE],
        }
    }

    #[test]
    fn bytes_round_trip_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_headers_rejected() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(TfdError::Format(_))));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(TfdError::Format(_))
        ));
        let mut bad_kind = bytes;
        bad_kind[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad_kind), Err(TfdError::Format(_))));
    }
}
