//! One-way network delay models.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Distribution of one-way message delay, in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LatencyModel {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, PartialEq, thiserror::Error)]
pub enum LatencyParseError {
    #[error("expected `fixed:<ms>` or `uniform:<lo>,<hi>`, got {0:?}")]
    Syntax(String),
    #[error("delays must satisfy 0 <= lo <= hi")]
    Range,
}

impl LatencyModel {
    pub fn none() -> Self {
        LatencyModel::Fixed(0.0)
    }

    pub fn sampler(&self, seed: u64) -> DelaySampler {
        DelaySampler { model: *self, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Largest delay the model can produce.
    pub fn max_ms(&self) -> f64 {
        match *self {
            LatencyModel::Fixed(d) => d,
            LatencyModel::Uniform { hi, .. } => hi,
        }
    }

    /// Width of the support; the largest possible difference between two
    /// samples.
    pub fn spread_ms(&self) -> f64 {
        match *self {
            LatencyModel::Fixed(_) => 0.0,
            LatencyModel::Uniform { lo, hi } => hi - lo,
        }
    }
}

impl FromStr for LatencyModel {
    type Err = LatencyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let syntax = || LatencyParseError::Syntax(s.to_owned());
        let (kind, args) = s.split_once(':').ok_or_else(syntax)?;
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| syntax());
        let model = match kind.trim() {
            "fixed" => LatencyModel::Fixed(num(args)?),
            "uniform" => {
                let (lo, hi) = args.split_once(',').ok_or_else(syntax)?;
                LatencyModel::Uniform { lo: num(lo)?, hi: num(hi)? }
            }
            _ => return Err(syntax()),
        };
        let ok = match model {
            LatencyModel::Fixed(d) => d >= 0.0,
            LatencyModel::Uniform { lo, hi } => lo >= 0.0 && hi >= lo,
        };
        if ok {
            Ok(model)
        } else {
            Err(LatencyParseError::Range)
        }
    }
}

impl fmt::Display for LatencyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatencyModel::Fixed(d) => write!(f, "fixed:{d}"),
            LatencyModel::Uniform { lo, hi } => write!(f, "uniform:{lo},{hi}"),
        }
    }
}

/// Seeded stream of delays drawn from a [`LatencyModel`].
#[derive(Clone, Debug)]
pub struct DelaySampler {
    model: LatencyModel,
    rng: ChaCha8Rng,
}

impl DelaySampler {
    pub fn next_ms(&mut self) -> f64 {
        match self.model {
            LatencyModel::Fixed(d) => d,
            LatencyModel::Uniform { lo, hi } if hi > lo => self.rng.random_range(lo..hi),
            LatencyModel::Uniform { lo, .. } => lo,
        }
    }
}
