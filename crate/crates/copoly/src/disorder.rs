//! Seeded Gaussian disorder, prefix sums, block tilts, and the exact
//! fractional moment of the tilted measure's Radon-Nikodym derivative.
//!
//! Reproducibility contract: every sample is a pure function of
//! `(seed, stream, n, tilt)`. Gaussians come from the Box-Muller transform
//! applied to ChaCha12 output (that named pairing is the pinned generation
//! method; outputs are bit-stable across platforms and versions). Replica
//! `r` of a master seed uses stream `r + 1`, so replicas can be generated
//! in any order, or in parallel, with identical results.

use crate::{Error, Result};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::io::{Read, Write};
use std::sync::Arc;

/// Mean shift applied to the disorder on a set of sites.
///
/// Sites are 1-based (site `i` shifts `omega_i`). The shift is
/// `delta = 1 / sqrt(k)` for block scale `k` in the coarse-graining use.
#[derive(Clone, Debug)]
pub struct TiltSpec {
    sites: Arc<[usize]>,
    delta: f64,
}

impl TiltSpec {
    pub fn new(mut sites: Vec<usize>, delta: f64) -> Self {
        sites.sort_unstable();
        sites.dedup();
        TiltSpec {
            sites: sites.into(),
            delta,
        }
    }

    /// Tilt with shift `1/sqrt(k)` on the given sites.
    pub fn for_block_scale(sites: Vec<usize>, k: usize) -> Self {
        Self::new(sites, 1.0 / (k as f64).sqrt())
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// A realization of the disorder sequence with cached prefix sums.
#[derive(Clone, Debug)]
pub struct DisorderSample {
    omega: Vec<f64>,
    prefix: Vec<f64>,
    seed: u64,
    stream: u64,
    tilt: Option<TiltSpec>,
}

const STREAM_TAG: [u8; 8] = *b"copolydi";

fn keyed_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(&STREAM_TAG);
    ChaCha12Rng::from_seed(key)
}

/// Uniform draw in (0, 1], from the top 53 bits of one u64.
#[inline]
fn unit_open(rng: &mut ChaCha12Rng) -> f64 {
    (((rng.next_u64() >> 11) + 1) as f64) * (1.0 / 9007199254740992.0)
}

/// One Box-Muller pair of independent standard normals.
#[inline]
fn gaussian_pair(rng: &mut ChaCha12Rng) -> (f64, f64) {
    let u1 = unit_open(rng);
    let u2 = unit_open(rng);
    let radius = (-2.0 * u1.ln()).sqrt();
    let angle = std::f64::consts::TAU * u2;
    (radius * angle.cos(), radius * angle.sin())
}

fn draw_base(seed: u64, stream: u64, n: usize) -> Vec<f64> {
    let mut rng = keyed_rng(seed, stream);
    let mut omega = Vec::with_capacity(n);
    while omega.len() < n {
        let (a, b) = gaussian_pair(&mut rng);
        omega.push(a);
        if omega.len() < n {
            omega.push(b);
        }
    }
    omega
}

fn assemble(seed: u64, stream: u64, n: usize, tilt: Option<TiltSpec>) -> DisorderSample {
    let mut omega = draw_base(seed, stream, n);
    if let Some(t) = &tilt {
        for &site in t.sites() {
            if site >= 1 && site <= n {
                omega[site - 1] += t.delta();
            }
        }
    }
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &w in &omega {
        acc += w;
        prefix.push(acc);
    }
    DisorderSample {
        omega,
        prefix,
        seed,
        stream,
        tilt,
    }
}

/// Draws `omega_1..omega_n` i.i.d. N(0,1), plus the tilt shift where given.
pub fn sample(seed: u64, n: usize, tilt: Option<TiltSpec>) -> DisorderSample {
    assemble(seed, 0, n, tilt)
}

/// Replica `replica` of `master_seed`; independent of generation order.
pub fn sample_replica(
    master_seed: u64,
    replica: u64,
    n: usize,
    tilt: Option<TiltSpec>,
) -> DisorderSample {
    assemble(master_seed, replica + 1, n, tilt)
}

impl DisorderSample {
    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Replica stream index (0 for a direct [`sample`] call).
    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn tilt(&self) -> Option<&TiltSpec> {
        self.tilt.as_ref()
    }

    /// `omega_i` for 1-based site index i.
    #[inline]
    pub fn omega(&self, site: usize) -> f64 {
        self.omega[site - 1]
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omega
    }

    /// prefix[n] = sum_{i <= n} omega_i, with prefix[0] = 0.
    pub fn prefix(&self) -> &[f64] {
        &self.prefix
    }

    /// `sum_{i = a+1}^{b} omega_i` as a prefix difference.
    pub fn interval_sum(&self, a: usize, b: usize) -> Result<f64> {
        if a > b || b > self.len() {
            return Err(Error::IndexOutOfRange {
                a,
                b,
                n: self.len(),
            });
        }
        Ok(self.prefix[b] - self.prefix[a])
    }

    /// Binary dump: 16-byte header (magic u16, version u16, n u32, seed u64,
    /// all little-endian) followed by the omega array as f64 LE.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&MAGIC.to_le_bytes())?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for v in &self.omega {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a dump produced by [`DisorderSample::write_binary`].
    pub fn read_binary(mut r: impl Read) -> Result<DisorderSample> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        let magic = u16::from_le_bytes([header[0], header[1]]);
        let version = u16::from_le_bytes([header[2], header[3]]);
        if magic != MAGIC {
            return Err(Error::BadSampleFile(format!("bad magic 0x{magic:04x}")));
        }
        if version != FORMAT_VERSION {
            return Err(Error::BadSampleFile(format!("unknown version {version}")));
        }
        let n = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let seed = u64::from_le_bytes(header[8..16].try_into().unwrap());
        let mut omega = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            omega.push(f64::from_le_bytes(buf));
        }
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &w in &omega {
            acc += w;
            prefix.push(acc);
        }
        Ok(DisorderSample {
            omega,
            prefix,
            seed,
            stream: 0,
            tilt: None,
        })
    }

    /// log of the base-measure density ratio dP/dP_tilde at this sample,
    /// restricted to the tilt's sites: `sum_{i in W} (delta^2/2 - delta w_i)`.
    pub fn log_density_ratio(&self, tilt: &TiltSpec) -> f64 {
        let d = tilt.delta();
        let mut acc = 0.0;
        for &site in tilt.sites() {
            acc += 0.5 * d * d - d * self.omega(site);
        }
        acc
    }
}

const MAGIC: u16 = 0xC0D1;
const FORMAT_VERSION: u16 = 1;

/// Exact `(1-gamma)`-power of the `1/(1-gamma)`-moment of dP/dP_tilde under
/// the tilted product measure with shift `1/sqrt(k)` on `w_size` sites:
/// `exp(gamma |W| / (2 k (1 - gamma)))`.
pub fn rn_moment(gamma: f64, w_size: usize, k: usize) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::GammaOutOfRange(gamma));
    }
    Ok((gamma * w_size as f64 / (2.0 * k as f64 * (1.0 - gamma))).exp())
}
