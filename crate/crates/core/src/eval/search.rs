//! Seeded random hyperparameter search.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    /// Log-uniform.
    pub lr: (f64, f64),
    pub lr_decay: (f64, f64),
    /// Log-uniform.
    pub l2: (f64, f64),
    pub hidden: Vec<usize>,
    pub d_emb: Vec<usize>,
    /// Log-uniform.
    pub lambda_reg: (f64, f64),
    pub batch_size: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            lr: (1e-4, 1e-1),
            lr_decay: (0.95, 1.0),
            l2: (1e-6, 1e-1),
            hidden: vec![8, 16, 32, 64],
            d_emb: vec![8, 16, 32],
            lambda_reg: (1e-3, 10.0),
            batch_size: vec![16, 32, 64],
        }
    }
}

fn range_ok(name: &str, (lo, hi): (f64, f64), log: bool) -> Result<(), EvalError> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) || (log && lo <= 0.0) {
        return Err(EvalError::Plan(format!("search range {name} = [{lo}, {hi}] is invalid")));
    }
    Ok(())
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), EvalError> {
        range_ok("lr", self.lr, true)?;
        range_ok("l2", self.l2, true)?;
        range_ok("lambda_reg", self.lambda_reg, true)?;
        range_ok("lr_decay", self.lr_decay, false)?;
        if !(self.lr_decay.0 > 0.0 && self.lr_decay.1 <= 1.0) {
            return Err(EvalError::Plan("lr_decay range must lie in (0, 1]".into()));
        }
        for (name, v) in [("hidden", &self.hidden), ("d_emb", &self.d_emb), ("batch_size", &self.batch_size)] {
            if v.is_empty() {
                return Err(EvalError::Plan(format!("empty search space for {name}")));
            }
            if v.contains(&0) {
                return Err(EvalError::Plan(format!("{name} choices must be >= 1")));
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn log_uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    uniform(rng, (lo.ln(), hi.ln())).exp().clamp(lo, hi)
}

fn choose<T: Copy>(rng: &mut impl Rng, v: &[T]) -> T {
    v[rng.gen_range(0..v.len())]
}

/// `trials` configurations drawn from `space`. Fields outside the space (kind, epochs,
/// patience) come from `base`; each config gets its own seed from the stream.
pub fn random_search(space: &SearchSpace, base: &ModelConfig, trials: usize, rng: &mut impl Rng) -> Result<Vec<ModelConfig>, EvalError> {
    space.validate()?;
    if trials < 1 {
        return Err(EvalError::Plan("trials must be >= 1".into()));
    }
    Ok((0..trials)
        .map(|_| ModelConfig {
            lr: log_uniform(rng, space.lr),
            lr_decay: uniform(rng, space.lr_decay),
            l2: log_uniform(rng, space.l2),
            hidden: choose(rng, &space.hidden),
            d_emb: choose(rng, &space.d_emb),
            lambda_reg: log_uniform(rng, space.lambda_reg),
            batch_size: choose(rng, &space.batch_size),
            seed: rng.gen(),
            ..base.clone()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;

    fn in_bounds(c: &ModelConfig, s: &SearchSpace) -> bool {
        (s.lr.0..=s.lr.1).contains(&c.lr)
            && (s.lr_decay.0..=s.lr_decay.1).contains(&c.lr_decay)
            && (s.l2.0..=s.l2.1).contains(&c.l2)
            && (s.lambda_reg.0..=s.lambda_reg.1).contains(&c.lambda_reg)
            && s.hidden.contains(&c.hidden)
            && s.d_emb.contains(&c.d_emb)
            && s.batch_size.contains(&c.batch_size)
    }

    #[test]
    fn sampling_is_bounded_and_deterministic() {
        let s = SearchSpace::default();
        let base = ModelConfig::default();
        let one = random_search(&s, &base, 1, &mut rng_for(1, &[])).unwrap();
        assert_eq!(one.len(), 1);
        assert!(in_bounds(&one[0], &s));
        let a = random_search(&s, &base, 20, &mut rng_for(5, &[])).unwrap();
        let b = random_search(&s, &base, 20, &mut rng_for(5, &[])).unwrap();
        assert_eq!(a, b);
        let many = random_search(&s, &base, 10_000, &mut rng_for(2, &[])).unwrap();
        assert!(many.iter().all(|c| (1e-4..=1e-1).contains(&c.lr) && in_bounds(c, &s)));
        let below = many.iter().filter(|c| c.lr < 1e-2).count();
        assert!((6000..7300).contains(&below), "log-uniform mass below 1e-2: {below}");
    }

    #[test]
    fn bad_spaces() {
        let base = ModelConfig::default();
        let empty = SearchSpace { hidden: vec![], ..Default::default() };
        assert!(random_search(&empty, &base, 3, &mut rng_for(0, &[])).is_err());
        let bad = SearchSpace { lr: (0.0, 1.0), ..Default::default() };
        assert!(random_search(&bad, &base, 3, &mut rng_for(0, &[])).is_err());
        assert!(random_search(&SearchSpace::default(), &base, 0, &mut rng_for(0, &[])).is_err());
    }
}
