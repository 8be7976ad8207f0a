//! UCB1 over a fixed uniform discretization, with optional restarts.

use rand::{Rng, RngCore};

use crate::agent::{Agent, Event};
use crate::error::{Error, Result};

/// Smallest `k >= 1` with `k^3 >= n`.
pub fn cube_root_ceil(n: u64) -> u64 {
    if n <= 1 {
        return 1;
    }
    let mut k = (n as f64).cbrt().round() as u64;
    while k.saturating_mul(k).saturating_mul(k) < n {
        k += 1;
    }
    while k > 1 && (k - 1) * (k - 1) * (k - 1) >= n {
        k -= 1;
    }
    k
}

/// Pull counts and reward sums of the current phase.
#[derive(Debug, Clone, PartialEq)]
pub struct UcbState {
    pub counts: Vec<u64>,
    pub sums: Vec<f64>,
    /// Round of the last (re)start.
    pub t0: u64,
}

impl UcbState {
    fn new(k: u64, t0: u64) -> Self {
        UcbState {
            counts: vec![0; k as usize],
            sums: vec![0.0; k as usize],
            t0,
        }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// UCB1 index of bin `k` at round `t`; infinite for unpulled bins.
    pub fn index(&self, k: usize, t: u64) -> f64 {
        let n = self.counts[k];
        if n == 0 {
            return f64::INFINITY;
        }
        let local = (t - self.t0 + 1) as f64;
        self.sums[k] / n as f64 + (2.0 * local.ln() / n as f64).sqrt()
    }

    /// Bin with the largest index, lowest index on ties.
    pub fn choose(&self, t: u64) -> usize {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for k in 0..self.bins() {
            let v = self.index(k, t);
            if v > best_v {
                best = k;
                best_v = v;
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct BinningUcb {
    name: String,
    horizon: u64,
    /// Phase starts, first is 1.
    phases: Vec<u64>,
    phase: usize,
    state: UcbState,
    next_round: u64,
    last: Option<(u64, usize, f64)>,
}

impl BinningUcb {
    /// `ceil(T^(1/3))` bins, never restarted.
    pub fn naive(horizon: u64) -> Result<Self> {
        Self::with_phases("binning_ucb_naive", horizon, vec![1])
    }

    /// Restarts at every `tau` with `ceil(len^(1/3))` bins for the phase
    /// that begins there. A phase starting at round 1 is implied.
    pub fn oracle(horizon: u64, taus: &[u64]) -> Result<Self> {
        if taus.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input(format!(
                "shift rounds {taus:?} are not increasing"
            )));
        }
        if let Some(&bad) = taus.iter().find(|&&t| t < 1 || t > horizon) {
            return Err(Error::Input(format!(
                "shift round {bad} outside [1, {horizon}]"
            )));
        }
        let mut phases = vec![1];
        phases.extend(taus.iter().copied().filter(|&t| t > 1));
        Self::with_phases("binning_ucb_oracle", horizon, phases)
    }

    fn with_phases(name: &str, horizon: u64, phases: Vec<u64>) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let mut agent = BinningUcb {
            name: name.to_string(),
            horizon,
            phases,
            phase: 0,
            state: UcbState::new(1, 1),
            next_round: 1,
            last: None,
        };
        agent.state = UcbState::new(agent.phase_bins(0), 1);
        Ok(agent)
    }

    fn phase_bins(&self, phase: usize) -> u64 {
        let end = self
            .phases
            .get(phase + 1)
            .copied()
            .unwrap_or(self.horizon + 1);
        cube_root_ceil(end - self.phases[phase])
    }

    pub fn state(&self) -> &UcbState {
        &self.state
    }

    pub fn phase_starts(&self) -> &[u64] {
        &self.phases
    }
}

impl Agent for BinningUcb {
    fn name(&self) -> &str {
        &self.name
    }

    fn horizon(&self) -> u64 {
        self.horizon
    }

    fn select(&mut self, t: u64, rng: &mut dyn RngCore) -> Result<f64> {
        if t != self.next_round || self.last.is_some() {
            return Err(Error::Sequencing(format!(
                "select at round {t}, expected {}",
                self.next_round
            )));
        }
        if self.phases.get(self.phase + 1) == Some(&t) {
            self.phase += 1;
            self.state = UcbState::new(self.phase_bins(self.phase), t);
        }
        let k = self.state.choose(t);
        let width = 1.0 / self.state.bins() as f64;
        let x = ((k as f64 + rng.random::<f64>()) * width).min(1.0);
        self.last = Some((t, k, x));
        Ok(x)
    }

    fn observe(&mut self, t: u64, x: f64, reward: f64) -> Result<Vec<Event>> {
        match self.last {
            Some((lt, k, lx)) if lt == t && lx == x => {
                self.state.counts[k] += 1;
                self.state.sums[k] += reward;
                self.last = None;
                self.next_round = t + 1;
                Ok(Vec::new())
            }
            _ => Err(Error::Sequencing(format!(
                "observe at round {t} without a matching select"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bin_counts() {
        assert_eq!(BinningUcb::naive(1_000_000).unwrap().state().bins(), 100);
        assert_eq!(BinningUcb::naive(8).unwrap().state().bins(), 2);
        assert_eq!(BinningUcb::naive(1).unwrap().state().bins(), 1);
        assert_eq!(cube_root_ceil(100_000), 47);
        assert_eq!(cube_root_ceil(9), 3);
    }

    #[test]
    fn single_pull_horizon() {
        let mut a = BinningUcb::naive(1).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let x = a.select(1, &mut r).unwrap();
        assert!((0.0..=1.0).contains(&x));
        a.observe(1, x, 1.0).unwrap();
        assert_eq!(a.state().counts, vec![1]);
    }

    #[test]
    fn oracle_with_single_phase_equals_naive() {
        let mut a = BinningUcb::naive(500).unwrap();
        let mut b = BinningUcb::oracle(500, &[1]).unwrap();
        let mut ra = ChaCha8Rng::seed_from_u64(3);
        let mut rb = ChaCha8Rng::seed_from_u64(3);
        for t in 1..=500 {
            let xa = a.select(t, &mut ra).unwrap();
            let xb = b.select(t, &mut rb).unwrap();
            assert_eq!(xa, xb);
            a.observe(t, xa, xa).unwrap();
            b.observe(t, xb, xb).unwrap();
        }
    }

    #[test]
    fn oracle_rebuilds_at_each_shift() {
        let mut a = BinningUcb::oracle(100_200, &[201]).unwrap();
        assert_eq!(a.state().bins(), 6);
        let mut r = ChaCha8Rng::seed_from_u64(1);
        for t in 1..=201 {
            let x = a.select(t, &mut r).unwrap();
            if t == 201 {
                assert_eq!(a.state().bins(), 47);
                assert!(a.state().counts.iter().all(|&c| c == 0));
                assert_eq!(a.state().t0, 201);
            }
            a.observe(t, x, 0.5).unwrap();
        }
    }

    #[test]
    fn rejects_bad_taus() {
        assert!(matches!(
            BinningUcb::oracle(100, &[50, 20]),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            BinningUcb::oracle(100, &[101]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn initial_sweep_then_ucb_rule() {
        let mut a = BinningUcb::oracle(2000, &[700]).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let mut noise = ChaCha8Rng::seed_from_u64(9);
        let mut since_restart = Vec::new();
        for t in 1..=2000 {
            if t == 700 {
                since_restart.clear();
            }
            let before = a.state().clone();
            let x = a.select(t, &mut r).unwrap();
            let st = a.state().clone();
            let k = (x * st.bins() as f64).floor().min(st.bins() as f64 - 1.0) as usize;
            // Brute force: maximize the index by scanning, first max wins.
            let reference = if st.t0 == t { &st } else { &before };
            let idx: Vec<f64> = (0..st.bins()).map(|j| reference.index(j, t)).collect();
            let top = idx.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(k, idx.iter().position(|&v| v == top).unwrap());
            since_restart.push(k);
            if since_restart.len() == st.bins() {
                let mut seen = since_restart.clone();
                seen.sort_unstable();
                assert_eq!(seen, (0..st.bins()).collect::<Vec<_>>());
            }
            let y = if noise.random::<f64>() < x { 1.0 } else { 0.0 };
            a.observe(t, x, y).unwrap();
        }
    }

    proptest! {
        #[test]
        fn cube_root_is_tight(n in 1u64..10_000_000_000) {
            let k = cube_root_ceil(n);
            prop_assert!(k * k * k >= n);
            prop_assert!(k == 1 || (k - 1).pow(3) < n);
        }
    }
}
