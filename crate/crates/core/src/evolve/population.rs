use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EvolveError;

/// Population entry: candidate id and score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Island {
    pub index: u32,
    pub population: Vec<Member>,
    pub capacity: usize,
    pub seed_id: String,
}

impl Island {
    pub fn new(index: u32, capacity: usize, seed_id: impl Into<String>) -> Self {
        Self {
            index,
            population: Vec::new(),
            capacity,
            seed_id: seed_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.population.len()
    }

    pub fn is_empty(&self) -> bool {
        self.population.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.population.iter().any(|m| m.id == id)
    }

    fn worst(&self) -> Option<usize> {
        // Lowest score; among equals the earliest entry.
        self.population
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.score.total_cmp(&b.1.score).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
    }

    /// Add a viable candidate. When full, it replaces the worst member if
    /// its score is at least that member's. Returns the evicted id.
    pub fn insert(&mut self, member: Member) -> Result<Option<String>, ()> {
        if member.score <= 0.0 || self.contains(&member.id) {
            return Err(());
        }
        if self.population.len() < self.capacity {
            self.population.push(member);
            return Ok(None);
        }
        let w = self.worst().expect("capacity >= 1");
        if member.score >= self.population[w].score {
            Ok(Some(std::mem::replace(&mut self.population[w], member).id))
        } else {
            Err(())
        }
    }

    /// The `k` best members, score-descending, earlier entries first on ties.
    pub fn top(&self, k: usize) -> Vec<Member> {
        let mut v: Vec<(usize, &Member)> = self.population.iter().enumerate().collect();
        v.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)));
        v.into_iter().take(k).map(|(_, m)| m.clone()).collect()
    }
}

/// Index of the chosen member: probability proportional to `score^beta`
/// over positive scores, uniform when every score is zero.
pub fn select_parent(population: &[Member], beta: f64, rng: &mut impl Rng) -> Result<usize, EvolveError> {
    if population.is_empty() {
        return Err(EvolveError::EmptyIsland);
    }
    let weights: Vec<f64> = population
        .iter()
        .map(|m| if m.score > 0.0 { m.score.powf(beta) } else { 0.0 })
        .collect();
    if weights.iter().all(|&w| w == 0.0) || weights.iter().any(|w| !w.is_finite()) {
        return Ok(rng.random_range(0..population.len()));
    }
    let dist = WeightedIndex::new(&weights).map_err(|e| EvolveError::InvalidParams(e.to_string()))?;
    Ok(dist.sample(rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationEvent {
    pub id: String,
    pub score: f64,
    pub from_island: u32,
    pub to_island: u32,
    pub replaced: Option<String>,
}

/// Copy each island's top `k` (taken from the pre-migration state) into a
/// uniformly chosen other island, replacing its lowest member when the
/// migrant scores at least as high. Island sizes never change.
pub fn migrate(islands: &mut [Island], k: usize, rng: &mut impl Rng) -> Vec<MigrationEvent> {
    let n = islands.len();
    if n < 2 || k == 0 {
        return Vec::new();
    }
    let migrants: Vec<Vec<Member>> = islands.iter().map(|i| i.top(k)).collect();
    let mut events = Vec::new();
    for (src, group) in migrants.into_iter().enumerate() {
        let mut target = rng.random_range(0..n - 1);
        if target >= src {
            target += 1;
        }
        for m in group {
            let dst = &mut islands[target];
            if dst.contains(&m.id) {
                continue;
            }
            let Some(w) = dst.worst() else { continue };
            if m.score >= dst.population[w].score {
                let replaced = std::mem::replace(&mut dst.population[w], m.clone()).id;
                events.push(MigrationEvent {
                    id: m.id,
                    score: m.score,
                    from_island: islands[src].index,
                    to_island: islands[target].index,
                    replaced: Some(replaced),
                });
            }
        }
    }
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(id: &str, score: f64) -> Member {
        Member { id: id.into(), score }
    }

    #[test]
    fn zero_weight_never_chosen() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pop = [m("a", 10.0), m("b", 0.0)];
        assert!((0..1000).all(|_| select_parent(&pop, 1.0, &mut rng).unwrap() == 0));
        assert!(matches!(
            select_parent(&[], 1.0, &mut rng),
            Err(EvolveError::EmptyIsland)
        ));
    }

    #[test]
    fn squared_pressure_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pop = [m("a", 9.0), m("b", 3.0)];
        let n = 20_000;
        let a = (0..n)
            .filter(|_| select_parent(&pop, 2.0, &mut rng).unwrap() == 0)
            .count();
        assert!((a as f64 / n as f64 - 0.9).abs() < 0.01);
    }

    #[test]
    fn chi_square_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pop: Vec<_> = (0..4).map(|i| m(&i.to_string(), 5.0)).collect();
        let n = 10_000;
        let mut counts = [0f64; 4];
        for _ in 0..n {
            counts[select_parent(&pop, 1.0, &mut rng).unwrap()] += 1.0;
        }
        let e = n as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        // 3 degrees of freedom, p = 0.01 critical value.
        assert!(chi2 < 11.345, "chi2 = {chi2}");
    }

    #[test]
    fn beta_zero_is_uniform_over_viable() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pop = [m("a", 100.0), m("b", 1.0)];
        let n = 10_000;
        let a = (0..n)
            .filter(|_| select_parent(&pop, 0.0, &mut rng).unwrap() == 0)
            .count();
        assert!((a as f64 / n as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn capacity_replace_worst() {
        let mut i = Island::new(1, 2, "s");
        i.insert(m("a", 5.0)).unwrap();
        i.insert(m("b", 7.0)).unwrap();
        assert!(i.insert(m("c", 4.0)).is_err());
        assert_eq!(i.insert(m("d", 6.0)).unwrap(), Some("a".into()));
        assert!(i.insert(m("z", 0.0)).is_err());
        assert_eq!(i.len(), 2);
    }

    #[test]
    fn two_islands_one_migrant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = Island::new(1, 4, "s1");
        let mut b = Island::new(2, 4, "s2");
        for (j, s) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
            a.insert(m(&format!("a{j}"), *s)).unwrap();
            b.insert(m(&format!("b{j}"), s + 0.5)).unwrap();
        }
        let mut islands = [a, b];
        let ev = migrate(&mut islands, 1, &mut rng);
        assert_eq!((islands[0].len(), islands[1].len()), (4, 4));
        assert!(islands[1].contains("a3"));
        assert!(islands[0].contains("b3"));
        assert_eq!(ev.len(), 2);
    }

    #[test]
    fn weak_migrant_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = Island::new(1, 2, "s1");
        a.insert(m("weak", 1.0)).unwrap();
        let mut b = Island::new(2, 2, "s2");
        b.insert(m("x", 5.0)).unwrap();
        b.insert(m("y", 6.0)).unwrap();
        let mut islands = [a, b];
        let ev = migrate(&mut islands, 1, &mut rng);
        assert!(!islands[1].contains("weak"));
        assert!(ev.iter().all(|e| e.id != "weak"));
        let mut single = [Island::new(1, 2, "s")];
        assert!(migrate(&mut single, 2, &mut rng).is_empty());
    }
}
