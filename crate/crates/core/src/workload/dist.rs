use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scalar distribution used by the synthetic generators.
///
/// In config files a bare number is a constant; otherwise one of
/// `{ uniform = [lo, hi] }`, `{ uniform_int = [lo, hi] }` or `{ choice = [...] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dist {
    Const(f64),
    Kind(DistKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DistKind {
    Uniform([f64; 2]),
    /// Inclusive on both ends.
    UniformInt([i64; 2]),
    Choice(Vec<f64>),
}

impl Dist {
    pub fn constant(v: f64) -> Self {
        Dist::Const(v)
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        Dist::Kind(DistKind::Uniform([lo, hi]))
    }

    pub fn uniform_int(lo: i64, hi: i64) -> Self {
        Dist::Kind(DistKind::UniformInt([lo, hi]))
    }

    pub fn choice(values: Vec<f64>) -> Self {
        Dist::Kind(DistKind::Choice(values))
    }

    pub fn min(&self) -> f64 {
        match self {
            Dist::Const(v) => *v,
            Dist::Kind(DistKind::Uniform([lo, _])) => *lo,
            Dist::Kind(DistKind::UniformInt([lo, _])) => *lo as f64,
            Dist::Kind(DistKind::Choice(v)) => v.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            Dist::Const(v) => *v,
            Dist::Kind(DistKind::Uniform([_, hi])) => *hi,
            Dist::Kind(DistKind::UniformInt([_, hi])) => *hi as f64,
            Dist::Kind(DistKind::Choice(v)) => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Checks the support lies in `[lo, hi]` and is well formed.
    pub fn validate(&self, what: &str, lo: f64, hi: f64) -> Result<()> {
        let bad = match self {
            Dist::Const(v) => !v.is_finite(),
            Dist::Kind(DistKind::Uniform([a, b])) => !(a.is_finite() && b.is_finite() && a <= b),
            Dist::Kind(DistKind::UniformInt([a, b])) => a > b,
            Dist::Kind(DistKind::Choice(v)) => v.is_empty() || v.iter().any(|x| !x.is_finite()),
        };
        if bad || self.min() < lo || self.max() > hi {
            return Err(Error::Validation(format!(
                "{what}: distribution {self:?} must lie within [{lo}, {hi}]"
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Dist::Const(v) => *v,
            Dist::Kind(DistKind::Uniform([a, b])) => {
                if a == b {
                    *a
                } else {
                    rng.random_range(*a..*b)
                }
            }
            Dist::Kind(DistKind::UniformInt([a, b])) => rng.random_range(*a..=*b) as f64,
            Dist::Kind(DistKind::Choice(v)) => *v.choose(rng).expect("validated non-empty"),
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn parses_forms() {
        #[derive(Deserialize)]
        struct W {
            a: Dist,
            b: Dist,
            c: Dist,
        }
        let w: W = toml::from_str("a = 3\nb = { uniform_int = [8, 512] }\nc = { choice = [0.0, 1.0] }").unwrap();
        assert_eq!(w.a, Dist::Const(3.0));
        assert_eq!(w.b, Dist::uniform_int(8, 512));
        assert_eq!(w.c, Dist::choice(vec![0.0, 1.0]));
    }

    #[test]
    fn samples_stay_in_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dist::uniform_int(8, 12);
        for _ in 0..200 {
            let x = d.sample(&mut rng);
            assert!((8.0..=12.0).contains(&x) && x.fract() == 0.0);
        }
        assert!(Dist::uniform(-1.0, 2.0).validate("d", 0.0, 10.0).is_err());
        assert!(Dist::uniform(2.0, 1.0).validate("d", 0.0, 10.0).is_err());
    }
}
