use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::time::Nanos;

/// Endless Poisson process: i.i.d. exponential gaps from a seeded generator.
#[derive(Debug, Clone)]
pub struct PoissonProcess {
    rng: ChaCha8Rng,
    gap: Exp<f64>,
    last: f64,
}

impl PoissonProcess {
    pub fn new(rate_rps: f64, seed: u64) -> Result<Self> {
        if !(rate_rps > 0.0 && rate_rps.is_finite()) {
            return Err(Error::Validation(format!("arrival rate {rate_rps} must be positive")));
        }
        Ok(PoissonProcess {
            rng: ChaCha8Rng::seed_from_u64(seed),
            gap: Exp::new(rate_rps).expect("positive rate"),
            last: 0.0,
        })
    }
}

impl Iterator for PoissonProcess {
    type Item = Nanos;

    fn next(&mut self) -> Option<Nanos> {
        self.last += self.gap.sample(&mut self.rng);
        Some(Nanos::from_secs_f64(self.last))
    }
}

/// Arrival times in `[0, horizon)`.
pub fn poisson_arrivals(rate_rps: f64, horizon: Nanos, seed: u64) -> Result<Vec<Nanos>> {
    if horizon == Nanos::ZERO {
        return Ok(Vec::new());
    }
    Ok(PoissonProcess::new(rate_rps, seed)?
        .take_while(|&t| t < horizon)
        .collect())
}
