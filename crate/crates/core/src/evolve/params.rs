use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EvolveError;
use crate::program::MutationForm;
use crate::store::DEFAULT_NOVELTY_THRESHOLD;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Explore,
    Exploit,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Explore => "Explore",
            Phase::Exploit => "Exploit",
        }
    }
}

/// Explore iff `g <= alpha * G`. The comparison tolerates rounding in the
/// product so that e.g. `alpha = 0.29, G = 100` keeps generation 29.
pub fn choose_phase(g: u32, total: u32, alpha: f64) -> Phase {
    let boundary = alpha * total as f64;
    if (g as f64) <= boundary + 1e-9 * boundary.abs().max(1.0) {
        Phase::Explore
    } else {
        Phase::Exploit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormWeights {
    pub rewrite: f64,
    pub diff: f64,
    pub crossover: f64,
}

impl FormWeights {
    pub const EXPLORE: FormWeights = FormWeights {
        rewrite: 0.6,
        diff: 0.25,
        crossover: 0.15,
    };
    pub const EXPLOIT: FormWeights = FormWeights {
        rewrite: 0.25,
        diff: 0.6,
        crossover: 0.15,
    };

    pub fn validate(&self) -> Result<(), EvolveError> {
        let w = [self.rewrite, self.diff, self.crossover];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(EvolveError::InvalidWeights(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(EvolveError::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

pub fn sample_mutation_form(weights: &FormWeights, rng: &mut impl Rng) -> Result<MutationForm, EvolveError> {
    weights.validate()?;
    let x: f64 = rng.random::<f64>();
    Ok(if x < weights.rewrite {
        MutationForm::Rewrite
    } else if x < weights.rewrite + weights.diff {
        MutationForm::Diff
    } else if weights.crossover > 0.0 {
        MutationForm::Crossover
    } else if weights.diff > 0.0 {
        MutationForm::Diff
    } else {
        MutationForm::Rewrite
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchParams {
    pub islands: u32,
    pub generations: u32,
    pub alpha: f64,
    pub migration_interval: u32,
    pub migration_k: u32,
    pub selection_pressure: f64,
    pub explore_weights: FormWeights,
    pub exploit_weights: FormWeights,
    pub tau_high: f64,
    pub tau_low: f64,
    pub novelty_threshold: f64,
    pub novelty_attempts: u32,
    pub capacity: u32,
    /// Run the meta-summarizer before every n-th generation (0 disables).
    pub meta_interval: u32,
    /// Nearest stored neighbours of the parent shown in mutation prompts.
    pub knn_context: u32,
    /// Archive programs shown in non-crossover prompts.
    pub inspirations: u32,
    pub reps: u32,
    pub rng_seed: u64,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            islands: 2,
            generations: 18,
            alpha: 0.4,
            migration_interval: 3,
            migration_k: 2,
            selection_pressure: 1.0,
            explore_weights: FormWeights::EXPLORE,
            exploit_weights: FormWeights::EXPLOIT,
            tau_high: 1.0,
            tau_low: 0.2,
            novelty_threshold: DEFAULT_NOVELTY_THRESHOLD,
            novelty_attempts: 3,
            capacity: 16,
            meta_interval: 3,
            knn_context: 3,
            inspirations: 1,
            reps: 3,
            rng_seed: 0,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<(), EvolveError> {
        let bad = |m: &str| Err(EvolveError::InvalidParams(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie strictly between 0 and 1");
        }
        if self.islands == 0 || self.generations == 0 || self.migration_interval == 0 || self.migration_k == 0 {
            return bad("islands, generations, migration_interval and migration_k must be at least 1");
        }
        if self.capacity == 0 || self.reps == 0 || self.novelty_attempts == 0 {
            return bad("capacity, reps and novelty_attempts must be at least 1");
        }
        if self.selection_pressure.is_nan() || self.selection_pressure < 0.0 {
            return bad("selection_pressure must be nonnegative");
        }
        if !(self.novelty_threshold > 0.0 && self.novelty_threshold <= 1.0) {
            return bad("novelty_threshold must lie in (0, 1]");
        }
        if !(self.tau_high >= 0.0 && self.tau_low >= 0.0) {
            return bad("temperatures must be nonnegative");
        }
        self.explore_weights.validate()?;
        self.exploit_weights.validate()?;
        if self.explore_weights.rewrite <= self.explore_weights.diff {
            return Err(EvolveError::InvalidWeights(
                "explore weights need rewrite > diff".into(),
            ));
        }
        if self.exploit_weights.diff <= self.exploit_weights.rewrite {
            return Err(EvolveError::InvalidWeights(
                "exploit weights need diff > rewrite".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, EvolveError> {
        let p: SearchParams = toml::from_str(text).map_err(|e| EvolveError::InvalidParams(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, EvolveError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EvolveError::InvalidParams(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn weights(&self, phase: Phase) -> &FormWeights {
        match phase {
            Phase::Explore => &self.explore_weights,
            Phase::Exploit => &self.exploit_weights,
        }
    }

    pub fn temperature(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Explore => self.tau_high,
            Phase::Exploit => self.tau_low,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn phase_examples() {
        assert_eq!(choose_phase(1, 18, 0.4), Phase::Explore);
        assert_eq!(choose_phase(7, 18, 0.4), Phase::Explore);
        assert_eq!(choose_phase(8, 18, 0.4), Phase::Exploit);
        assert_eq!(choose_phase(29, 100, 0.29), Phase::Explore);
        assert_eq!(choose_phase(30, 100, 0.29), Phase::Exploit);
    }

    #[test]
    fn explore_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            match sample_mutation_form(&FormWeights::EXPLORE, &mut rng).unwrap() {
                MutationForm::Rewrite => counts[0] += 1,
                MutationForm::Diff => counts[1] += 1,
                MutationForm::Crossover => counts[2] += 1,
            }
        }
        for (c, w) in counts.iter().zip([0.6, 0.25, 0.15]) {
            assert!((*c as f64 / n as f64 - w).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn degenerate_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = FormWeights {
            rewrite: 1.0,
            diff: 0.0,
            crossover: 0.0,
        };
        assert!((0..1000).all(|_| sample_mutation_form(&w, &mut rng).unwrap() == MutationForm::Rewrite));
        let bad = FormWeights {
            rewrite: 0.5,
            diff: 0.2,
            crossover: 0.2,
        };
        assert!(sample_mutation_form(&bad, &mut rng).is_err());
    }

    #[test]
    fn exploit_ordering_enforced() {
        let p = SearchParams {
            exploit_weights: FormWeights {
                rewrite: 0.6,
                diff: 0.25,
                crossover: 0.15,
            },
            ..Default::default()
        };
        assert!(matches!(p.validate(), Err(EvolveError::InvalidWeights(_))));
        assert!(SearchParams::default().validate().is_ok());
        assert!(SearchParams {
            alpha: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn toml_overrides() {
        let p = SearchParams::from_toml("islands = 3\ngenerations = 6\n").unwrap();
        assert_eq!((p.islands, p.generations, p.alpha), (3, 6, 0.4));
        assert!(SearchParams::from_toml("bogus = 1\n").is_err());
    }
}
