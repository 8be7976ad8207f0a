//! Time-indexed Lipschitz reward environments.
//!
//! Every environment is piecewise linear in the arm at each round, so bin
//! averages, maxima and round-to-round differences are computed exactly from
//! the knots of a [`Profile`]. Environments are oblivious: rewards depend on
//! the round and the arm only.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::partition::BinRef;

const SLOPE_TOL: f64 = 1e-12;

/// A continuous piecewise-linear function on `[0, 1]` given by its knots.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    knots: Vec<(f64, f64)>,
}

impl Profile {
    /// Builds a profile; knots must start at 0, end at 1 and be strictly
    /// increasing in `x`.
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Config("a profile needs at least two knots".into()));
        }
        if knots[0].0 != 0.0 || knots[knots.len() - 1].0 != 1.0 {
            return Err(Error::Config("profile knots must span [0, 1]".into()));
        }
        if knots
            .windows(2)
            .any(|w| w[1].0.partial_cmp(&w[0].0) != Some(std::cmp::Ordering::Greater))
        {
            return Err(Error::Config(
                "profile knots must be strictly increasing".into(),
            ));
        }
        Ok(Profile { knots })
    }

    /// Sorted knots with duplicates merged; used by the built-in shapes.
    fn from_sorted_unchecked(mut knots: Vec<(f64, f64)>) -> Self {
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        knots.dedup_by(|b, a| (a.0 - b.0).abs() < 1e-15);
        Profile { knots }
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.knots.partition_point(|&(kx, _)| kx <= x);
        if i == 0 {
            return self.knots[0].1;
        }
        if i == self.knots.len() {
            return self.knots[i - 1].1;
        }
        let (x0, y0) = self.knots[i - 1];
        let (x1, y1) = self.knots[i];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    /// Exact integral over `[a, b]`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut total = 0.0;
        for w in self.knots.windows(2) {
            let lo = w[0].0.max(a);
            let hi = w[1].0.min(b);
            if hi > lo {
                total += 0.5 * (self.eval(lo) + self.eval(hi)) * (hi - lo);
            }
        }
        total
    }

    pub fn average(&self, a: f64, b: f64) -> f64 {
        self.integral(a, b) / (b - a)
    }

    /// First maximizing knot and the maximum.
    pub fn max(&self) -> (f64, f64) {
        self.knots
            .iter()
            .copied()
            .fold((0.0, f64::NEG_INFINITY), |best, k| {
                if k.1 > best.1 {
                    k
                } else {
                    best
                }
            })
    }

    /// Largest absolute slope.
    pub fn lipschitz(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
            .fold(0.0, f64::max)
    }
}

/// Observation noise around the mean reward.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Noise {
    #[default]
    Bernoulli,
    /// Gaussian around the mean, clipped to `[0, 1]`.
    TruncatedGaussian {
        sigma: f64,
    },
    None,
}

/// Declarative environment description, as stored in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub horizon: u64,
    #[serde(default)]
    pub noise: Noise,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    ShiftingPeak,
    LowerBound,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftingPeakParams {
    pub period: u64,
    #[serde(default = "default_peak_lo")]
    pub peak_lo: f64,
    #[serde(default = "default_peak_hi")]
    pub peak_hi: f64,
    #[serde(default = "default_height")]
    pub height: f64,
}

fn default_peak_lo() -> f64 {
    0.3
}
fn default_peak_hi() -> f64 {
    0.7
}
fn default_height() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerBoundParams {
    #[serde(rename = "K")]
    pub k: u32,
    /// Bump index of each phase, in `1..=K`.
    pub phases: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSegment {
    pub from: u64,
    pub to: u64,
    pub breakpoints: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomParams {
    pub segments: Vec<CustomSegment>,
}

#[derive(Debug, Clone)]
enum Shape {
    /// Unit-slope tent whose peak sits at `lo` for the first period, then
    /// moves linearly between the anchors over each following period,
    /// alternating direction.
    ShiftingPeak {
        period: u64,
        lo: f64,
        hi: f64,
        height: f64,
    },
    LowerBound {
        k: u32,
        tau: u64,
        phases: Vec<u32>,
    },
    Custom {
        starts: Vec<u64>,
        profiles: Vec<Profile>,
    },
}

/// An immutable environment over rounds `1..=horizon`.
#[derive(Debug, Clone)]
pub struct EnvSpec {
    config: EnvConfig,
    shape: Shape,
}

impl EnvSpec {
    pub fn from_config(config: EnvConfig) -> Result<Self> {
        if config.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if let Noise::TruncatedGaussian { sigma } = config.noise {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::Config(format!(
                    "noise sigma must be positive, got {sigma}"
                )));
            }
        }
        let params = if config.params.is_null() {
            serde_json::Value::Object(Default::default())
        } else {
            config.params.clone()
        };
        let shape = match config.kind {
            EnvKind::ShiftingPeak => {
                let p: ShiftingPeakParams = serde_json::from_value(params)
                    .map_err(|e| Error::Config(format!("shifting_peak params: {e}")))?;
                if p.period == 0 || p.period > config.horizon {
                    return Err(Error::Config(format!(
                        "period {} must be in 1..={}",
                        p.period, config.horizon
                    )));
                }
                let in_unit = |v: f64| (0.0..=1.0).contains(&v);
                if !in_unit(p.peak_lo)
                    || !in_unit(p.peak_hi)
                    || !(p.height > 0.0 && p.height <= 1.0)
                {
                    return Err(Error::Config(
                        "peak anchors must lie in [0, 1] and height in (0, 1]".into(),
                    ));
                }
                Shape::ShiftingPeak {
                    period: p.period,
                    lo: p.peak_lo,
                    hi: p.peak_hi,
                    height: p.height,
                }
            }
            EnvKind::LowerBound => {
                let p: LowerBoundParams = serde_json::from_value(params)
                    .map_err(|e| Error::Config(format!("lower_bound params: {e}")))?;
                if p.k < 2 {
                    return Err(Error::Input(format!("K must be at least 2, got {}", p.k)));
                }
                if p.phases.is_empty() {
                    return Err(Error::Input("at least one phase is required".into()));
                }
                if let Some(bad) = p.phases.iter().find(|&&k| k == 0 || k > p.k) {
                    return Err(Error::Input(format!(
                        "phase index {bad} outside 1..={}",
                        p.k
                    )));
                }
                let tau = (p.k as u64).pow(3);
                let total = tau * p.phases.len() as u64;
                if config.horizon != total {
                    return Err(Error::Config(format!(
                        "horizon {} must equal K^3 * phases = {total}",
                        config.horizon
                    )));
                }
                Shape::LowerBound {
                    k: p.k,
                    tau,
                    phases: p.phases,
                }
            }
            EnvKind::Custom => {
                let p: CustomParams = serde_json::from_value(params)
                    .map_err(|e| Error::Config(format!("custom params: {e}")))?;
                let mut next = 1u64;
                let mut starts = Vec::new();
                let mut profiles = Vec::new();
                for seg in &p.segments {
                    if seg.from != next || seg.to < seg.from {
                        return Err(Error::Config(format!(
                            "segments must tile the horizon; expected a segment from {next}"
                        )));
                    }
                    let profile =
                        Profile::new(seg.breakpoints.iter().map(|&[x, y]| (x, y)).collect())?;
                    if profile
                        .knots()
                        .iter()
                        .any(|&(_, y)| !(0.0..=1.0).contains(&y))
                    {
                        return Err(Error::Config("mean rewards must lie in [0, 1]".into()));
                    }
                    if profile.lipschitz() > 1.0 + SLOPE_TOL {
                        return Err(Error::Config(format!(
                            "segment from {} has slope {} > 1",
                            seg.from,
                            profile.lipschitz()
                        )));
                    }
                    starts.push(seg.from);
                    profiles.push(profile);
                    next = seg.to + 1;
                }
                if next != config.horizon + 1 {
                    return Err(Error::Config(format!(
                        "segments cover 1..{} but horizon is {}",
                        next - 1,
                        config.horizon
                    )));
                }
                Shape::Custom { starts, profiles }
            }
        };
        Ok(EnvSpec { config, shape })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: EnvConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("environment: {e}")))?;
        EnvSpec::from_config(config)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn horizon(&self) -> u64 {
        self.config.horizon
    }

    pub fn noise(&self) -> Noise {
        self.config.noise
    }

    pub fn with_noise(mut self, noise: Noise) -> Self {
        self.config.noise = noise;
        self
    }

    /// Short SHA-256 digest of the canonical JSON config.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(&self.config).expect("config serializes");
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }

    fn check_round(&self, t: u64) {
        debug_assert!(t >= 1 && t <= self.horizon(), "round {t} outside horizon");
    }

    /// Peak location of a shifting-peak environment at round `t`.
    fn peak_at(t: u64, period: u64, lo: f64, hi: f64) -> f64 {
        let q = (t - 1) / period;
        if q == 0 {
            return lo;
        }
        let anchor = |j: u64| if j.is_multiple_of(2) { lo } else { hi };
        let frac = ((t - 1) % period + 1) as f64 / period as f64;
        let (from, to) = (anchor(q - 1), anchor(q));
        from + (to - from) * frac
    }

    fn lower_bound_parts(k: u32, idx: u32) -> (f64, f64, Option<f64>) {
        let eps = 1.0 / (2.0 * k as f64);
        let base = (1.0 - eps) / 2.0;
        let centre = (idx >= 2).then(|| (2 * idx - 1) as f64 / (2.0 * k as f64));
        (eps, base, centre)
    }

    fn lower_bound_phase(&self, t: u64, tau: u64, phases: &[u32]) -> u32 {
        phases[((t - 1) / tau) as usize]
    }

    fn segment_of(t: u64, starts: &[u64]) -> usize {
        starts.partition_point(|&s| s <= t) - 1
    }

    /// Mean reward `mu_t(x)`.
    pub fn mean(&self, t: u64, x: f64) -> f64 {
        self.check_round(t);
        match &self.shape {
            Shape::ShiftingPeak {
                period,
                lo,
                hi,
                height,
            } => {
                let p = Self::peak_at(t, *period, *lo, *hi);
                (height - (x - p).abs()).max(0.0)
            }
            Shape::LowerBound { k, tau, phases } => {
                let (eps, base, centre) =
                    Self::lower_bound_parts(*k, self.lower_bound_phase(t, *tau, phases));
                let mut v = base;
                if x < 2.0 * eps {
                    v += (eps - (x - eps).abs()) / 2.0;
                }
                if let Some(c) = centre {
                    let in_interval = x >= c - eps && (x < c + eps || (c + eps >= 1.0 && x <= 1.0));
                    if in_interval {
                        v += eps - (x - c).abs();
                    }
                }
                v
            }
            Shape::Custom { starts, profiles } => profiles[Self::segment_of(t, starts)].eval(x),
        }
    }

    /// The piecewise-linear mean at round `t`.
    pub fn profile(&self, t: u64) -> Profile {
        self.check_round(t);
        match &self.shape {
            Shape::ShiftingPeak {
                period,
                lo,
                hi,
                height,
            } => {
                let p = Self::peak_at(t, *period, *lo, *hi);
                let mut knots = vec![(p, *height)];
                for x in [0.0, 1.0, p - height, p + height] {
                    if (0.0..=1.0).contains(&x) {
                        knots.push((x, (height - (x - p).abs()).max(0.0)));
                    }
                }
                Profile::from_sorted_unchecked(knots)
            }
            Shape::LowerBound { k, tau, phases } => {
                let (eps, base, centre) =
                    Self::lower_bound_parts(*k, self.lower_bound_phase(t, *tau, phases));
                let mut knots = vec![
                    (0.0, base),
                    (eps, base + eps / 2.0),
                    (2.0 * eps, base),
                    (1.0, base),
                ];
                if let Some(c) = centre {
                    knots.push((c - eps, base));
                    knots.push((c, base + eps));
                    knots.push(((c + eps).min(1.0), base));
                }
                Profile::from_sorted_unchecked(knots)
            }
            Shape::Custom { starts, profiles } => profiles[Self::segment_of(t, starts)].clone(),
        }
    }

    /// Exact average of `mu_t` over bin `b`.
    pub fn bin_mean(&self, t: u64, b: BinRef) -> f64 {
        self.profile(t).average(b.lo(), b.hi())
    }

    /// A maximizer of `mu_t` and the maximum.
    pub fn best_value(&self, t: u64) -> (f64, f64) {
        self.check_round(t);
        match &self.shape {
            Shape::ShiftingPeak {
                period,
                lo,
                hi,
                height,
            } => (Self::peak_at(t, *period, *lo, *hi), *height),
            Shape::LowerBound { k, tau, phases } => {
                let (eps, base, centre) =
                    Self::lower_bound_parts(*k, self.lower_bound_phase(t, *tau, phases));
                match centre {
                    Some(c) => (c, base + eps),
                    None => (eps, base + eps / 2.0),
                }
            }
            Shape::Custom { .. } => self.profile(t).max(),
        }
    }

    /// Instantaneous regret `max_x mu_t(x) - mu_t(x)`.
    pub fn gap(&self, t: u64, x: f64) -> f64 {
        (self.best_value(t).1 - self.mean(t, x)).max(0.0)
    }

    /// One stochastic reward in `[0, 1]`.
    pub fn sample_reward(&self, t: u64, x: f64, rng: &mut dyn RngCore) -> f64 {
        let mu = self.mean(t, x);
        match self.config.noise {
            Noise::None => mu,
            Noise::Bernoulli => {
                if rng.random::<f64>() < mu {
                    1.0
                } else {
                    0.0
                }
            }
            Noise::TruncatedGaussian { sigma } => {
                let n = Normal::new(mu, sigma).expect("sigma validated");
                n.sample(rng).clamp(0.0, 1.0)
            }
        }
    }

    /// Rounds where the construction switches to a new piece, starting with 1.
    pub fn nominal_change_points(&self) -> Vec<u64> {
        match &self.shape {
            Shape::ShiftingPeak { period, .. } => (0..)
                .map(|q| 1 + q * period)
                .take_while(|&t| t <= self.horizon())
                .collect(),
            Shape::LowerBound { tau, phases, .. } => {
                (0..phases.len() as u64).map(|l| 1 + l * tau).collect()
            }
            Shape::Custom { starts, .. } => starts.clone(),
        }
    }

    /// Arms where some round's profile may have a knot that the grid misses.
    pub fn arm_breakpoints(&self) -> Vec<f64> {
        let mut xs = match &self.shape {
            Shape::ShiftingPeak { lo, hi, .. } => vec![*lo, *hi],
            Shape::LowerBound { k, phases, .. } => {
                let mut phases = phases.clone();
                phases.sort_unstable();
                phases.dedup();
                let mut xs = Vec::new();
                for idx in phases {
                    let (eps, _, centre) = Self::lower_bound_parts(*k, idx);
                    xs.extend([eps, 2.0 * eps]);
                    if let Some(c) = centre {
                        xs.extend([c - eps, c, (c + eps).min(1.0)]);
                    }
                }
                xs
            }
            Shape::Custom { profiles, .. } => profiles
                .iter()
                .flat_map(|p| p.knots().iter().map(|k| k.0))
                .collect(),
        };
        xs.retain(|x| (0.0..=1.0).contains(x));
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs
    }
}

/// Shifting-peak environment with unit height and Bernoulli noise.
pub fn make_shifting_peak(
    horizon: u64,
    period: u64,
    peak_lo: f64,
    peak_hi: f64,
) -> Result<EnvSpec> {
    EnvSpec::from_config(EnvConfig {
        kind: EnvKind::ShiftingPeak,
        horizon,
        noise: Noise::Bernoulli,
        params: serde_json::to_value(ShiftingPeakParams {
            period,
            peak_lo,
            peak_hi,
            height: 1.0,
        })?,
    })
}

/// Lower-bound family: phase `l` lasts `K^3` rounds and uses bump
/// `phases[l]`.
pub fn make_lower_bound_instance(k: u32, phases: &[u32]) -> Result<EnvSpec> {
    EnvSpec::from_config(EnvConfig {
        kind: EnvKind::LowerBound,
        horizon: (k.max(1) as u64).pow(3) * phases.len() as u64,
        noise: Noise::Bernoulli,
        params: serde_json::to_value(LowerBoundParams {
            k,
            phases: phases.to_vec(),
        })?,
    })
}

/// Rounds `from..=to` and the `(x, mu)` knots of their shared profile.
pub type Segment = (u64, u64, Vec<(f64, f64)>);

/// Custom environment from `(from, to, knots)` segments.
pub fn make_custom(horizon: u64, noise: Noise, segments: Vec<Segment>) -> Result<EnvSpec> {
    let segments = segments
        .into_iter()
        .map(|(from, to, knots)| CustomSegment {
            from,
            to,
            breakpoints: knots.into_iter().map(|(x, y)| [x, y]).collect(),
        })
        .collect();
    EnvSpec::from_config(EnvConfig {
        kind: EnvKind::Custom,
        horizon,
        noise,
        params: serde_json::to_value(CustomParams { segments })?,
    })
}
