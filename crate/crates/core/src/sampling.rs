//! Sobol low-discrepancy collocation points over the parameter box.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::residuals::Sample;
use crate::vg_model::{ParamBox, VgParams};

/// Primitive-polynomial data `(s, a, m_1..m_s)` for dimensions 2..=16, from
/// the `new-joe-kuo-6.21201` table (Joe & Kuo, 2008). Dimension 1 is the van
/// der Corput sequence.
const JOE_KUO: [(u32, u32, &[u32]); 15] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
];

pub const MAX_SOBOL_DIM: usize = JOE_KUO.len() + 1;
const BITS: usize = 32;

/// Unscrambled Sobol sequence in Gray-code order; point `i` is
/// `⊕_{k : bit k of gray(i)} v_k`.
#[derive(Debug, Clone)]
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
}

impl Sobol {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_SOBOL_DIM {
            return Err(Error::Config(format!(
                "Sobol dimension {dim} unsupported (1..={MAX_SOBOL_DIM})"
            )));
        }
        let mut directions = Vec::with_capacity(dim);
        let mut first = [0u32; BITS];
        for (k, v) in first.iter_mut().enumerate() {
            *v = 1 << (BITS - 1 - k);
        }
        directions.push(first);
        for &(s, a, m) in JOE_KUO.iter().take(dim - 1) {
            let s = s as usize;
            let mut v = [0u32; BITS];
            for k in 0..s {
                v[k] = m[k] << (BITS - 1 - k);
            }
            for k in s..BITS {
                let mut x = v[k - s] ^ (v[k - s] >> s);
                for t in 1..s {
                    if (a >> (s - 1 - t)) & 1 == 1 {
                        x ^= v[k - t];
                    }
                }
                v[k] = x;
            }
            directions.push(v);
        }
        Ok(Self { directions })
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    /// Point with sequence index `index` (index 0 is the origin).
    pub fn point(&self, index: u64, out: &mut [f64]) {
        assert!(index < 1 << BITS, "Sobol index beyond 2^32");
        let gray = index ^ (index >> 1);
        for (o, v) in out.iter_mut().zip(&self.directions) {
            let mut x = 0u32;
            let mut g = gray;
            let mut k = 0;
            while g != 0 {
                if g & 1 == 1 {
                    x ^= v[k];
                }
                g >>= 1;
                k += 1;
            }
            *o = x as f64 / (1u64 << BITS) as f64;
        }
    }
}

/// `n` points starting at sequence index `skip`, row-major.
pub fn sobol_sequence(dim: usize, n: usize, skip: u64) -> Result<Vec<Vec<f64>>> {
    let sobol = Sobol::new(dim)?;
    Ok((0..n as u64)
        .map(|i| {
            let mut p = vec![0.0; dim];
            sobol.point(skip + i, &mut p);
            p
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
}

/// Region the collocation points are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleBox {
    pub x_range: (f64, f64),
    pub tau_max: f64,
    /// Smallest admissible τ; draws below it are clamped.
    pub tau_floor: f64,
    pub params: ParamBox,
    /// When set, only `(x, τ)` are sampled and every sample carries these
    /// parameters.
    pub fixed_params: Option<VgParams>,
}

impl SampleBox {
    /// Training region: `x ∈ [ln(K/40), ln(2K)]`.
    pub fn training(strike: f64) -> Self {
        Self::with_x((strike / 40.0).ln(), (2.0 * strike).ln())
    }

    /// Test region: `x ∈ [ln(K/2), ln(2K)]`.
    pub fn test(strike: f64) -> Self {
        Self::with_x((strike / 2.0).ln(), (2.0 * strike).ln())
    }

    pub fn for_role(role: Role, strike: f64) -> Self {
        match role {
            Role::Train => Self::training(strike),
            Role::Test => Self::test(strike),
        }
    }

    fn with_x(lo: f64, hi: f64) -> Self {
        Self {
            x_range: (lo, hi),
            tau_max: 3.0,
            tau_floor: 1e-6,
            params: ParamBox::default(),
            fixed_params: None,
        }
    }

    pub fn fixed(mut self, p: VgParams) -> Self {
        self.fixed_params = Some(p);
        self
    }

    pub fn dim(&self) -> usize {
        if self.fixed_params.is_some() {
            2
        } else {
            7
        }
    }

    /// Affine map of a unit-cube point to a sample.
    pub fn map(&self, u: &[f64]) -> Sample {
        let lerp = |(lo, hi): (f64, f64), t: f64| lo + (hi - lo) * t;
        let x = lerp(self.x_range, u[0]);
        let tau = (self.tau_max * u[1]).max(self.tau_floor);
        let params = match self.fixed_params {
            Some(p) => p,
            None => VgParams {
                sigma: lerp(self.params.sigma, u[2]),
                nu: lerp(self.params.nu, u[3]),
                theta: lerp(self.params.theta, u[4]),
                r: lerp(self.params.r, u[5]),
                q: lerp(self.params.q, u[6]),
            },
        };
        Sample { x, tau, params }
    }
}

/// `n` samples from the Sobol points with indices `skip..skip + n`.
pub fn make_samples(bx: &SampleBox, n: usize, skip: u64) -> Result<Vec<Sample>> {
    let sobol = Sobol::new(bx.dim())?;
    let mut u = vec![0.0; bx.dim()];
    let mut out = Vec::with_capacity(n);
    for i in 0..n as u64 {
        sobol.point(skip + i, &mut u);
        let s = bx.map(&u);
        s.params.validate()?;
        out.push(s);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    x: f64,
    tau: f64,
    sigma: f64,
    nu: f64,
    theta: f64,
    r: f64,
    q: f64,
}

/// Writes samples as CSV with columns `x,tau,sigma,nu,theta,r,q`.
pub fn write_samples_csv(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in samples {
        let p = s.params;
        w.serialize(SampleRow {
            x: s.x,
            tau: s.tau,
            sigma: p.sigma,
            nu: p.nu,
            theta: p.theta,
            r: p.r,
            q: p.q,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<Sample>> {
    let mut rd = csv::Reader::from_path(path)?;
    let expected = ["x", "tau", "sigma", "nu", "theta", "r", "q"];
    let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    if header != expected {
        return Err(Error::Config(format!(
            "sample CSV header {header:?}, expected {expected:?}"
        )));
    }
    rd.deserialize::<SampleRow>()
        .map(|row| {
            let row = row?;
            Ok(Sample {
                x: row.x,
                tau: row.tau,
                params: VgParams {
                    sigma: row.sigma,
                    nu: row.nu,
                    theta: row.theta,
                    r: row.r,
                    q: row.q,
                },
            })
        })
        .collect()
}
