//! Binary pair dataset.
//!
//! Little-endian: `u64` count, `u32` rays, `u32` k, then per pair the two
//! strips (`rays × 3` `f64` each, ray-major) and a label byte. Walk and step indices
//! are not stored; read pairs carry walk 0.

use std::io::{Read, Write};

use super::{LabeledPair, ReachabilityError};
use crate::env::{Observation, CHANNELS};

fn bad(msg: impl Into<String>) -> ReachabilityError {
    ReachabilityError::Dataset(msg.into())
}

pub fn write_pairs<W: Write>(
    pairs: &[LabeledPair],
    rays: usize,
    k: usize,
    mut w: W,
) -> Result<(), ReachabilityError> {
    w.write_all(&(pairs.len() as u64).to_le_bytes())?;
    w.write_all(&(rays as u32).to_le_bytes())?;
    w.write_all(&(k as u32).to_le_bytes())?;
    for p in pairs {
        for obs in [&p.obs_a, &p.obs_b] {
            if obs.rays() != rays {
                return Err(bad(format!(
                    "observation with {} rays in a {rays}-ray dataset",
                    obs.rays()
                )));
            }
            for v in obs.strip() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.write_all(&[p.label])?;
    }
    w.flush()?;
    Ok(())
}

/// Returns the pairs plus the stored `(rays, k)`.
pub fn read_pairs<R: Read>(
    mut r: R,
) -> Result<(Vec<LabeledPair>, usize, usize), ReachabilityError> {
    let mut b8 = [0u8; 8];
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
    let count = u64::from_le_bytes(b8);
    r.read_exact(&mut b4).map_err(|_| bad("truncated header"))?;
    let rays = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4).map_err(|_| bad("truncated header"))?;
    let k = u32::from_le_bytes(b4) as usize;
    let strip = |r: &mut R| -> Result<Observation, ReachabilityError> {
        let mut b8 = [0u8; 8];
        let mut values = Vec::with_capacity(rays * CHANNELS);
        for _ in 0..rays * CHANNELS {
            r.read_exact(&mut b8).map_err(|_| bad("truncated record"))?;
            values.push(f64::from_le_bytes(b8));
        }
        Observation::new(rays, values).ok_or_else(|| bad("strip value outside [0, 1]"))
    };
    let mut pairs = Vec::new();
    for _ in 0..count {
        let obs_a = strip(&mut r)?;
        let obs_b = strip(&mut r)?;
        let mut label = [0u8];
        r.read_exact(&mut label)
            .map_err(|_| bad("truncated record"))?;
        if label[0] > 1 {
            return Err(bad(format!("label byte {}", label[0])));
        }
        pairs.push(LabeledPair {
            obs_a,
            obs_b,
            label: label[0],
            walk: 0,
            steps: (0, 0),
        });
    }
    Ok((pairs, rays, k))
}
