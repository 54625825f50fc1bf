//! Binary cache of γ tables keyed by `(g, tail_eps)`.

use serde_json::{json, Value};

use super::{GainParams, GammaTable};
use crate::cache::CacheDir;
use crate::error::{Error, Result};
use crate::numerics::{LogScalar, Sign};

const KIND: &str = "gamma";

fn params(g: &GainParams, tail_eps: f64) -> Value {
    // bit patterns keep the key exact
    json!({ "g_bits": g.g.to_bits(), "m_bits": g.m.to_bits(), "tail_eps_bits": tail_eps.to_bits() })
}

fn push(buf: &mut Vec<u8>, x: LogScalar) {
    let s: i8 = match x.sign {
        Sign::Negative => -1,
        Sign::Zero => 0,
        Sign::Positive => 1,
    };
    buf.push(s as u8);
    buf.extend_from_slice(&x.logmag.to_le_bytes());
}

fn pull(bytes: &[u8]) -> Result<LogScalar> {
    let sign = match bytes[0] as i8 {
        -1 => Sign::Negative,
        0 => Sign::Zero,
        1 => Sign::Positive,
        s => return Err(Error::Cache(format!("bad sign byte {s}"))),
    };
    let logmag = f64::from_le_bytes(bytes[1..9].try_into().expect("9-byte record"));
    Ok(LogScalar { sign, logmag })
}

pub fn store(dir: &CacheDir, t: &GammaTable) -> Result<()> {
    let mut buf = Vec::with_capacity(9 * (t.row.len() + t.col.len()) + 24);
    buf.extend_from_slice(&(t.row.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(t.col.len() as u64).to_le_bytes());
    buf.extend_from_slice(&t.tail_mass.to_le_bytes());
    for &x in t.row.iter().chain(&t.col) {
        push(&mut buf, x);
    }
    dir.store(KIND, &params(&t.params, t.tail_eps), (t.row.len() + t.col.len()) as u64, &buf)?;
    Ok(())
}

pub fn load(dir: &CacheDir, g: &GainParams, tail_eps: f64) -> Result<Option<GammaTable>> {
    let Some((header, body)) = dir.load(KIND, &params(g, tail_eps))? else {
        return Ok(None);
    };
    if body.len() < 24 {
        return Err(Error::Cache("truncated gamma table".into()));
    }
    let nr = u64::from_le_bytes(body[0..8].try_into().unwrap()) as usize;
    let nc = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
    let tail_mass = f64::from_le_bytes(body[16..24].try_into().unwrap());
    if header.records as usize != nr + nc || body.len() != 24 + 9 * (nr + nc) || nr == 0 || nc == 0 {
        return Err(Error::Cache("gamma table length mismatch".into()));
    }
    let vals = body[24..].chunks(9).map(pull).collect::<Result<Vec<_>>>()?;
    Ok(Some(GammaTable {
        params: *g,
        tail_eps,
        imax: nr - 1,
        jmax: nc - 1,
        row: vals[..nr].to_vec(),
        col: vals[nr..].to_vec(),
        tail_mass,
    }))
}

/// Cached [`super::gamma_table`].
pub fn gamma_table_cached(dir: Option<&CacheDir>, g: GainParams, tail_eps: f64) -> Result<GammaTable> {
    if let Some(d) = dir {
        if let Some(t) = load(d, &g, tail_eps)? {
            return Ok(t);
        }
    }
    let t = super::gamma_table(g, tail_eps)?;
    if let Some(d) = dir {
        store(d, &t)?;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_hit_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let c = CacheDir::new(dir.path());
        let g = GainParams::from_mean(16.0).unwrap();
        let cold = gamma_table_cached(Some(&c), g, 1e-8).unwrap();
        let warm = gamma_table_cached(Some(&c), g, 1e-8).unwrap();
        assert_eq!(cold, warm);
        for (a, b) in cold.row.iter().zip(&warm.row) {
            assert_eq!(a.logmag.to_bits(), b.logmag.to_bits());
        }
    }
}
