//! Sobol' low-discrepancy sequence driven by a published direction-number
//! table (one line per dimension: d, s, a, m_1..m_s). Dimension one is the
//! base-2 radical-inverse sequence; points are generated in the usual
//! Gray-code order and the initial all-zeros point is skipped before use.

use crate::error::{Error, Result};
use crate::fields::{ParamVector, PARAM_DIM};

const TABLE: &str = include_str!("../data/new-joe-kuo-6.160.txt");
const BITS: usize = 32;

/// Direction numbers parsed from the table, expanded to 32 bits per
/// dimension.
#[derive(Clone, Debug)]
pub struct SobolGenerator {
    directions: Vec<[u32; BITS]>,
    state: Vec<u32>,
    index: u64,
}

impl SobolGenerator {
    /// Generator over the embedded table.
    pub fn new(dims: usize) -> Result<Self> {
        Self::from_table(TABLE, dims)
    }

    /// Number of dimensions the embedded table supports.
    pub fn max_dims() -> usize {
        TABLE.lines().skip(1).filter(|l| !l.trim().is_empty()).count() + 1
    }

    /// Parses a whitespace-separated direction-number table. Each data line
    /// holds `d s a m_1 ... m_s`; dimension one is implicit.
    pub fn from_table(table: &str, dims: usize) -> Result<Self> {
        if dims == 0 {
            return Err(Error::invalid("sobol dimension must be at least 1"));
        }
        let mut directions = Vec::with_capacity(dims);
        // Dimension 1: radical inverse, all m_j = 1.
        let mut first = [0u32; BITS];
        for (j, v) in first.iter_mut().enumerate() {
            *v = 1u32 << (31 - j);
        }
        directions.push(first);

        for (lineno, line) in table.lines().enumerate().skip(1) {
            if directions.len() >= dims {
                break;
            }
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |tok: Option<&str>, what: &str| -> Result<u64> {
                tok.ok_or_else(|| Error::Parse {
                    line: lineno + 1,
                    message: format!("missing {what}"),
                })?
                .parse::<u64>()
                .map_err(|e| Error::Parse {
                    line: lineno + 1,
                    message: format!("bad {what}: {e}"),
                })
            };
            let d = parse(it.next(), "dimension")? as usize;
            let s = parse(it.next(), "degree")? as usize;
            let a = parse(it.next(), "polynomial code")? as u32;
            if d != directions.len() + 1 {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("expected dimension {}, found {}", directions.len() + 1, d),
                });
            }
            if s == 0 || s > BITS {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("unsupported polynomial degree {s}"),
                });
            }
            let mut m = Vec::with_capacity(s);
            for k in 0..s {
                let mk = parse(it.next(), &format!("m_{}", k + 1))? as u32;
                // m_k must be odd and below 2^(k+1).
                if mk % 2 == 0 || u64::from(mk) >= (1u64 << (k + 1)) {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        message: format!("invalid direction number m_{} = {}", k + 1, mk),
                    });
                }
                m.push(mk);
            }
            let mut v = [0u32; BITS];
            for j in 0..s.min(BITS) {
                v[j] = m[j] << (31 - j);
            }
            for j in s..BITS {
                let mut val = v[j - s] ^ (v[j - s] >> s);
                for k in 1..s {
                    if (a >> (s - 1 - k)) & 1 == 1 {
                        val ^= v[j - k];
                    }
                }
                v[j] = val;
            }
            directions.push(v);
        }
        if directions.len() < dims {
            return Err(Error::invalid(format!(
                "direction-number table covers {} dimensions, {} requested",
                directions.len(),
                dims
            )));
        }
        Ok(SobolGenerator {
            state: vec![0; directions.len()],
            directions,
            index: 0,
        })
    }

    pub fn dims(&self) -> usize {
        self.directions.len()
    }

    /// Advances to the next point and returns it in [0,1)^dims. The very
    /// first call returns the point after the all-zeros origin.
    pub fn next_point(&mut self) -> Vec<f64> {
        let c = self.index.trailing_ones() as usize;
        debug_assert!(c < BITS, "index overflow in sobol generator");
        for (s, dir) in self.state.iter_mut().zip(&self.directions) {
            *s ^= dir[c];
        }
        self.index += 1;
        self.state
            .iter()
            .map(|&s| s as f64 * (1.0 / (1u64 << 32) as f64))
            .collect()
    }
}

/// First `count` Sobol points in [0,1]^100 (origin skipped), mapped affinely
/// onto [-1,1]^100.
pub fn sobol_parameters(count: usize) -> Result<Vec<ParamVector>> {
    if count == 0 {
        return Err(Error::invalid("sobol sample count must be at least 1"));
    }
    let mut gen = SobolGenerator::new(PARAM_DIM)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let p = gen.next_point();
        let mut c = [0.0; PARAM_DIM];
        for (ci, pi) in c.iter_mut().zip(&p) {
            *ci = 2.0 * pi - 1.0;
        }
        out.push(ParamVector::new(c)?);
    }
    Ok(out)
}
