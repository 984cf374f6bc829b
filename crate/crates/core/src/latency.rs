//! Latency models for client-to-server transit, server inference, and
//! server-to-client transit.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::types::ValidationError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatencyDist {
    Constant(u64),
    /// Inclusive range in milliseconds.
    Uniform {
        lo_ms: u64,
        hi_ms: u64,
    },
    /// `exp(N(mu, sigma))` milliseconds, clamped to `[clamp_lo_ms, clamp_hi_ms]`.
    LogNormal {
        mu: f64,
        sigma: f64,
        clamp_lo_ms: u64,
        clamp_hi_ms: u64,
    },
}

impl LatencyDist {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let bad = |m: String| Err(ValidationError::InvalidConfig(m));
        match *self {
            LatencyDist::Constant(_) => Ok(()),
            LatencyDist::Uniform { lo_ms, hi_ms } if lo_ms > hi_ms => {
                bad(format!("uniform latency lo {lo_ms} > hi {hi_ms}"))
            }
            LatencyDist::Uniform { .. } => Ok(()),
            LatencyDist::LogNormal {
                mu,
                sigma,
                clamp_lo_ms,
                clamp_hi_ms,
            } => {
                if !mu.is_finite() || !(sigma.is_finite() && sigma >= 0.0) {
                    return bad(format!(
                        "lognormal needs finite mu and sigma >= 0, got {mu}, {sigma}"
                    ));
                }
                if clamp_lo_ms > clamp_hi_ms {
                    return bad(format!(
                        "lognormal clamp lo {clamp_lo_ms} > hi {clamp_hi_ms}"
                    ));
                }
                Ok(())
            }
        }
    }

    /// Mean of the distribution. For the log-normal this is the unclamped
    /// `exp(mu + sigma^2 / 2)`, itself clamped to the bounds.
    pub fn mean_ms(&self) -> f64 {
        match *self {
            LatencyDist::Constant(c) => c as f64,
            LatencyDist::Uniform { lo_ms, hi_ms } => (lo_ms + hi_ms) as f64 / 2.0,
            LatencyDist::LogNormal {
                mu,
                sigma,
                clamp_lo_ms,
                clamp_hi_ms,
            } => (mu + sigma * sigma / 2.0)
                .exp()
                .clamp(clamp_lo_ms as f64, clamp_hi_ms as f64),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match *self {
            LatencyDist::Constant(_) => true,
            LatencyDist::Uniform { lo_ms, hi_ms } => lo_ms == hi_ms,
            LatencyDist::LogNormal {
                sigma,
                clamp_lo_ms,
                clamp_hi_ms,
                ..
            } => sigma == 0.0 || clamp_lo_ms == clamp_hi_ms,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match *self {
            LatencyDist::Constant(c) => c,
            LatencyDist::Uniform { lo_ms, hi_ms } => rng.random_range(lo_ms..=hi_ms),
            LatencyDist::LogNormal {
                mu,
                sigma,
                clamp_lo_ms,
                clamp_hi_ms,
            } => {
                let v = LogNormal::new(mu, sigma)
                    .expect("validated lognormal parameters")
                    .sample(rng);
                v.round().clamp(clamp_lo_ms as f64, clamp_hi_ms as f64) as u64
            }
        }
    }
}

impl fmt::Display for LatencyDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatencyDist::Constant(c) => write!(f, "const:{c}"),
            LatencyDist::Uniform { lo_ms, hi_ms } => write!(f, "uniform:{lo_ms}:{hi_ms}"),
            LatencyDist::LogNormal {
                mu,
                sigma,
                clamp_lo_ms,
                clamp_hi_ms,
            } => write!(f, "lognormal:{mu}:{sigma}:{clamp_lo_ms}:{clamp_hi_ms}"),
        }
    }
}

/// Parses `const:330`, `uniform:100:200` or `lognormal:5.8:0.3:50:2000`.
impl FromStr for LatencyDist {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let err = || ValidationError::InvalidConfig(format!("bad latency spec `{s}`"));
        let int = |p: &str| p.trim().parse::<u64>().map_err(|_| err());
        let real = |p: &str| p.trim().parse::<f64>().map_err(|_| err());
        let dist = match parts.as_slice() {
            ["const", c] => LatencyDist::Constant(int(c)?),
            ["uniform", lo, hi] => LatencyDist::Uniform {
                lo_ms: int(lo)?,
                hi_ms: int(hi)?,
            },
            ["lognormal", mu, sigma, lo, hi] => LatencyDist::LogNormal {
                mu: real(mu)?,
                sigma: real(sigma)?,
                clamp_lo_ms: int(lo)?,
                clamp_hi_ms: int(hi)?,
            },
            _ => return Err(err()),
        };
        dist.validate()?;
        Ok(dist)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LatencyTarget {
    ClientToServer,
    ServerInference,
    ServerToClient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyModel {
    pub dist: LatencyDist,
    pub applies_to: LatencyTarget,
}

/// Seeded latency sampler. Each leg draws from its own stream so changing
/// one distribution does not perturb the samples of the others.
#[derive(Debug, Clone)]
pub struct LatencyProfile {
    pub client_to_server: LatencyDist,
    pub inference: LatencyDist,
    pub server_to_client: LatencyDist,
    rng_c2s: ChaCha8Rng,
    rng_inf: ChaCha8Rng,
    rng_s2c: ChaCha8Rng,
}

impl LatencyProfile {
    pub fn new(
        client_to_server: LatencyDist,
        inference: LatencyDist,
        server_to_client: LatencyDist,
        seed: u64,
    ) -> Self {
        Self {
            client_to_server,
            inference,
            server_to_client,
            rng_c2s: ChaCha8Rng::seed_from_u64(seed ^ 0x6332_7300),
            rng_inf: ChaCha8Rng::seed_from_u64(seed ^ 0x696e_6600),
            rng_s2c: ChaCha8Rng::seed_from_u64(seed ^ 0x7332_6300),
        }
    }

    /// Only server inference latency; zero transit.
    pub fn inference_only(inference: LatencyDist, seed: u64) -> Self {
        Self::new(
            LatencyDist::Constant(0),
            inference,
            LatencyDist::Constant(0),
            seed,
        )
    }

    /// Builds a profile from a set of models; unspecified legs are zero.
    pub fn from_models(models: &[LatencyModel], seed: u64) -> Result<Self, ValidationError> {
        let mut legs = [None; 3];
        for m in models {
            m.dist.validate()?;
            let slot = match m.applies_to {
                LatencyTarget::ClientToServer => 0,
                LatencyTarget::ServerInference => 1,
                LatencyTarget::ServerToClient => 2,
            };
            if legs[slot].replace(m.dist).is_some() {
                return Err(ValidationError::InvalidConfig(format!(
                    "latency for {:?} given twice",
                    m.applies_to
                )));
            }
        }
        let zero = LatencyDist::Constant(0);
        Ok(Self::new(
            legs[0].unwrap_or(zero),
            legs[1].unwrap_or(zero),
            legs[2].unwrap_or(zero),
            seed,
        ))
    }

    pub fn sample_client_to_server(&mut self) -> u64 {
        self.client_to_server.sample(&mut self.rng_c2s)
    }

    pub fn sample_inference(&mut self) -> u64 {
        self.inference.sample(&mut self.rng_inf)
    }

    pub fn sample_server_to_client(&mut self) -> u64 {
        self.server_to_client.sample(&mut self.rng_s2c)
    }

    pub fn is_deterministic(&self) -> bool {
        self.client_to_server.is_deterministic()
            && self.inference.is_deterministic()
            && self.server_to_client.is_deterministic()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_grammar() {
        assert_eq!("const:330".parse(), Ok(LatencyDist::Constant(330)));
        assert_eq!(
            "uniform:100:200".parse(),
            Ok(LatencyDist::Uniform {
                lo_ms: 100,
                hi_ms: 200
            })
        );
        assert_eq!(
            "lognormal:5.8:0.3:50:2000".parse(),
            Ok(LatencyDist::LogNormal {
                mu: 5.8,
                sigma: 0.3,
                clamp_lo_ms: 50,
                clamp_hi_ms: 2000
            })
        );
        assert!("uniform:200:100".parse::<LatencyDist>().is_err());
        assert!("gamma:1".parse::<LatencyDist>().is_err());
        assert!("const:-1".parse::<LatencyDist>().is_err());
    }

    #[test]
    fn display_round_trips() {
        for s in ["const:330", "uniform:100:200", "lognormal:5.8:0.3:50:2000"] {
            let d: LatencyDist = s.parse().unwrap();
            assert_eq!(d.to_string(), s);
        }
    }

    #[test]
    fn uniform_is_reproducible_and_in_range() {
        let dist = LatencyDist::Uniform {
            lo_ms: 100,
            hi_ms: 200,
        };
        let draw = |seed| {
            let mut p = LatencyProfile::inference_only(dist, seed);
            (0..100).map(|_| p.sample_inference()).collect::<Vec<_>>()
        };
        let a = draw(7);
        assert_eq!(a, draw(7));
        assert_ne!(a, draw(8));
        assert!(a.iter().all(|v| (100..=200).contains(v)));
    }

    #[test]
    fn lognormal_respects_clamp() {
        let dist: LatencyDist = "lognormal:5.8:1.5:50:2000".parse().unwrap();
        let mut p = LatencyProfile::inference_only(dist, 1);
        for _ in 0..2000 {
            let v = p.sample_inference();
            assert!((50..=2000).contains(&v));
        }
    }

    #[test]
    fn legs_use_independent_streams() {
        let u = LatencyDist::Uniform {
            lo_ms: 0,
            hi_ms: 1000,
        };
        let mut a = LatencyProfile::new(u, u, u, 3);
        let mut b = LatencyProfile::new(LatencyDist::Constant(5), u, u, 3);
        let _ = b.sample_client_to_server();
        let _ = a.sample_client_to_server();
        assert_eq!(a.sample_inference(), b.sample_inference());
    }

    #[test]
    fn duplicate_leg_rejected() {
        let m = LatencyModel {
            dist: LatencyDist::Constant(1),
            applies_to: LatencyTarget::ServerInference,
        };
        assert!(LatencyProfile::from_models(&[m, m], 0).is_err());
        let p = LatencyProfile::from_models(&[m], 0).unwrap();
        assert_eq!(p.client_to_server, LatencyDist::Constant(0));
    }
}
