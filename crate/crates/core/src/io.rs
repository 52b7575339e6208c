//! Binary snapshots.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "AGETUMOR"
//! version    u8       = 1
//! d          u8
//! n_theta    u64
//! n_x        u64
//! theta_max  f64
//! half_width f64
//! t          f64
//! m          f64
//! step       u64
//! n          n_theta * n_x^d f64, age-major (see grid)
//! echo_len   u64
//! echo       UTF-8 bytes (configuration echo)
//! checksum   32 bytes, SHA-256 of everything above
//! ```
//!
//! Only `n` is stored; density and pressure are recomputed on load.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridSpec, State};
use crate::params::ParameterSet;

pub const MAGIC: &[u8; 8] = b"AGETUMOR";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub grid: GridSpec,
    pub t: f64,
    pub m: f64,
    pub step: u64,
    pub n: Vec<f64>,
    pub config_echo: String,
}

impl Snapshot {
    pub fn from_state(
        state: &State,
        grid: &Grid,
        step: u64,
        config_echo: impl Into<String>,
    ) -> Self {
        Snapshot {
            grid: grid.spec(),
            t: state.t,
            m: state.m,
            step,
            n: state.n.clone(),
            config_echo: config_echo.into(),
        }
    }

    /// Rebuild the grid and state, recomputing density and pressure.
    pub fn to_state(&self, params: &ParameterSet) -> Result<(Grid, State)> {
        let grid = Grid::new(self.grid)?;
        let state = State::new(&grid, params, self.n.clone(), self.m, self.t)?;
        Ok((grid, state))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(80 + 8 * self.n.len() + self.config_echo.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.grid.d as u8);
        out.extend_from_slice(&(self.grid.n_theta as u64).to_le_bytes());
        out.extend_from_slice(&(self.grid.n_x as u64).to_le_bytes());
        for v in [self.grid.theta_max, self.grid.half_width, self.t, self.m] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        for v in &self.n {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.config_echo.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config_echo.as_bytes());
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 {
            return Err(Error::Format("file too short".into()));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(Error::Format("checksum mismatch".into()));
        }
        let mut r = Reader {
            bytes: body,
            pos: 0,
        };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.take(1)?[0];
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let d = r.take(1)?[0] as usize;
        let n_theta = r.u64()? as usize;
        let n_x = r.u64()? as usize;
        let theta_max = r.f64()?;
        let half_width = r.f64()?;
        let t = r.f64()?;
        let m = r.f64()?;
        let step = r.u64()?;
        let grid = GridSpec {
            d,
            n_theta,
            theta_max,
            n_x,
            half_width,
        };
        let len = Grid::new(grid)
            .map_err(|e| Error::Format(format!("invalid grid metadata: {e}")))?
            .n_len();
        let n = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let echo_len = r.u64()? as usize;
        let config_echo = String::from_utf8(r.take(echo_len)?.to_vec())
            .map_err(|_| Error::Format("configuration echo is not UTF-8".into()))?;
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes".into()));
        }
        Ok(Snapshot {
            grid,
            t,
            m,
            step,
            n,
            config_echo,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Snapshot::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of data".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Snapshot {
        Snapshot {
            grid: GridSpec {
                d: 1,
                n_theta: 3,
                theta_max: 1.5,
                n_x: 4,
                half_width: 2.0,
            },
            t: 0.125,
            m: 20.0,
            step: 7,
            n: (0..12).map(|i| i as f64 * 0.1).collect(),
            config_echo: "m = 20".into(),
        }
    }

    #[test]
    fn detects_corruption() {
        let mut bytes = sample().to_bytes();
        bytes[40] ^= 1;
        assert!(matches!(
            Snapshot::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
        assert!(Snapshot::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        let s = sample();
        s.save(&path).unwrap();
        assert_eq!(Snapshot::load(&path).unwrap(), s);
    }

    proptest! {
        #[test]
        fn byte_round_trip_is_bit_exact(
            bits in proptest::collection::vec(any::<u64>(), 2 * 5 * 5),
            t in any::<f64>(),
            step in any::<u64>(),
            echo in ".{0,40}",
        ) {
            let n: Vec<f64> = bits.iter().map(|&b| f64::from_bits(b)).collect();
            let s = Snapshot {
                grid: GridSpec { d: 2, n_theta: 2, theta_max: 1.0, n_x: 5, half_width: 1.0 },
                t,
                m: 5.0,
                step,
                n,
                config_echo: echo,
            };
            let back = Snapshot::from_bytes(&s.to_bytes()).unwrap();
            prop_assert_eq!(back.to_bytes(), s.to_bytes());
            let same_bits = back.n.iter().zip(&s.n).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same_bits);
            prop_assert_eq!(back.t.to_bits(), s.t.to_bits());
        }
    }
}
