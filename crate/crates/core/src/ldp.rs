//! Monte Carlo estimates of large-deviation rates for block means of i.i.d.
//! prior samples.
//!
//! A microstate has `n` independent draws from the prior; the coarse state is
//! the vector of `ñ` block means, each over `n/ñ` consecutive draws. The
//! probability that the coarse state lies within `δ` of a constant target `c`
//! decays like `exp(−n i(c))`, with the domain area normalized to one.
//!
//! Probabilities this small are out of reach of direct sampling once `n` is a
//! few thousand, so trials are drawn from the exponentially tilted prior whose
//! mean sits on the ball point closest to the prior mean, and each trial is
//! reweighted by its likelihood ratio. All weights are kept as logarithms.
//!
//! Trials run in batches of [`BATCH`]. Batch `b` of schedule entry `k` draws
//! from `ChaCha8Rng::seed_from_u64(seed)` on stream `(k << 32) | b`, so
//! results depend on the seed alone and not on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::{PriorKind, PriorModel, TabulatedDensity};

pub const BATCH: usize = 1024;
/// Hits needed before a rate is reported.
pub const MIN_HITS: usize = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Tilted proposal with likelihood-ratio weights.
    #[default]
    Tilted,
    /// Plain draws from the prior.
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MCConfig {
    pub n_schedule: Vec<usize>,
    pub macrocells: usize,
    pub ball_radius: f64,
    pub trials: usize,
    pub seed: u64,
    pub sampling: Sampling,
}

impl Default for MCConfig {
    fn default() -> Self {
        MCConfig {
            n_schedule: vec![1 << 8, 1 << 10, 1 << 12, 1 << 14],
            macrocells: 1,
            ball_radius: 0.05,
            trials: 100_000,
            seed: 0,
            sampling: Sampling::Tilted,
        }
    }
}

impl MCConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_schedule.is_empty() {
            return Err(Error::InvalidArgument("n_schedule is empty".into()));
        }
        if self.macrocells == 0 {
            return Err(Error::InvalidArgument("macrocells must be positive".into()));
        }
        if let Some(n) = self
            .n_schedule
            .iter()
            .find(|&&n| n == 0 || n % self.macrocells != 0)
        {
            return Err(Error::InvalidArgument(format!(
                "lattice size {n} is not a positive multiple of {} macrocells",
                self.macrocells
            )));
        }
        if !(self.ball_radius > 0.0 && self.ball_radius.is_finite()) {
            return Err(Error::InvalidArgument(
                "ball_radius must be positive".into(),
            ));
        }
        if self.trials < 1000 {
            return Err(Error::InvalidArgument(
                "at least 1000 trials are required".into(),
            ));
        }
        Ok(())
    }
}

/// Rate estimate at one lattice size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub n: usize,
    pub hits: usize,
    pub trials: usize,
    /// Estimated `log P`, present once any trial hits.
    pub log_probability: Option<f64>,
    /// `−(1/n) log P`, present with at least [`MIN_HITS`] hits.
    pub rate: Option<f64>,
    /// Standard error of the rate by the delta method.
    pub std_error: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// No hits: only `rate_lower_bound` is informative.
    pub censored: bool,
    /// 95% lower bound on the rate from the rule of three, for censored entries.
    pub rate_lower_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MCResult {
    pub target_value: f64,
    /// `I(q_target) = i(c)`.
    pub target: f64,
    /// Smallest and largest `i` over `[c − δ, c + δ]`.
    pub bracket: (f64, f64),
    /// Mean of the proposal distribution.
    pub proposal_mean: f64,
    pub estimates: Vec<RateEstimate>,
}

impl MCResult {
    /// Rates are nonincreasing from the second schedule entry on, up to
    /// `sigmas` combined standard errors.
    pub fn monotone_within(&self, sigmas: f64) -> bool {
        let rated: Vec<&RateEstimate> = self.estimates.iter().skip(1).collect();
        rated.windows(2).all(|w| match (w[0].rate, w[1].rate) {
            (Some(a), Some(b)) => {
                let se = w[0]
                    .std_error
                    .unwrap_or(0.0)
                    .hypot(w[1].std_error.unwrap_or(0.0));
                b <= a + sigmas * se
            }
            _ => false,
        })
    }

    pub fn last(&self) -> &RateEstimate {
        self.estimates.last().expect("schedule is nonempty")
    }
}

/// Draws `n` prior samples and returns their `ñ` block means.
pub fn sample_coarse<R: Rng + ?Sized>(
    prior: &PriorModel,
    n: usize,
    blocks: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if blocks == 0 || !n.is_multiple_of(blocks) {
        return Err(Error::InvalidArgument(format!(
            "{n} draws do not split into {blocks} blocks"
        )));
    }
    let sampler = Proposal::new(prior, 0.0, prior.mean())?;
    let m = n / blocks;
    Ok((0..blocks)
        .map(|_| (0..m).map(|_| sampler.draw(rng).0).sum::<f64>() / m as f64)
        .collect())
}

/// Sampling law for a single draw, optionally tilted by `η`.
enum Proposal {
    Gaussian {
        mean: f64,
    },
    Gamma {
        law: Gamma<f64>,
        offset: f64,
    },
    Table {
        prior: TabulatedDensity,
        proposal: Option<TabulatedDensity>,
    },
}

impl Proposal {
    /// Proposal whose mean is `mean`; `eta` is the matching tilt.
    fn new(prior: &PriorModel, eta: f64, mean: f64) -> Result<Self> {
        match prior.kind() {
            PriorKind::Gaussian => Ok(Proposal::Gaussian { mean }),
            PriorKind::GammaSkew => {
                let eps = prior.epsilon().expect("gamma prior has a skew");
                let law = Gamma::new(eps.powi(-2), eps / (1.0 - eps * eta))
                    .map_err(|e| Error::SamplerUnavailable(e.to_string()))?;
                Ok(Proposal::Gamma {
                    law,
                    offset: 1.0 / eps,
                })
            }
            PriorKind::Tabulated => {
                let table = prior
                    .table()
                    .ok_or_else(|| {
                        Error::SamplerUnavailable("tabulated prior without a table".into())
                    })?
                    .clone();
                let proposal = if eta == 0.0 {
                    None
                } else {
                    Some(tilted_table(&table, eta)?)
                };
                Ok(Proposal::Table {
                    prior: table,
                    proposal,
                })
            }
        }
    }

    /// One draw and, for tabulated proposals, its log likelihood ratio.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match self {
            Proposal::Gaussian { mean } => (mean + rng.sample::<f64, _>(StandardNormal), 0.0),
            Proposal::Gamma { law, offset } => (law.sample(rng) - offset, 0.0),
            Proposal::Table { prior, proposal } => match proposal {
                None => (prior.quantile(rng.random::<f64>()), 0.0),
                Some(p) => {
                    let y = p.quantile(rng.random::<f64>());
                    (y, prior.density_at(y).ln() - p.density_at(y).ln())
                }
            },
        }
    }

    /// Whether block weights follow from block sums alone.
    fn exact_tilt(&self) -> bool {
        !matches!(
            self,
            Proposal::Table {
                proposal: Some(_),
                ..
            }
        )
    }
}

/// Linear interpolant of `ρ(y) e^{ηy}` on the prior's abscissae, normalized.
fn tilted_table(table: &TabulatedDensity, eta: f64) -> Result<TabulatedDensity> {
    let y = table.abscissae().to_vec();
    let top = y.iter().map(|v| eta * v).fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = y
        .iter()
        .zip(table.density_values())
        .map(|(v, d)| d * (eta * v - top).exp())
        .collect();
    let mass: f64 = (1..y.len())
        .map(|k| 0.5 * (raw[k] + raw[k - 1]) * (y[k] - y[k - 1]))
        .sum();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::SamplerUnavailable("tilted table has no mass".into()));
    }
    TabulatedDensity::new(y, raw.into_iter().map(|d| d / mass).collect())
}

/// Sums over a batch: hit count, and log-sum-exp of weights and squared weights over hits.
#[derive(Clone, Copy, Debug)]
struct Tally {
    hits: usize,
    log_w: f64,
    log_w2: f64,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl Tally {
    const EMPTY: Tally = Tally {
        hits: 0,
        log_w: f64::NEG_INFINITY,
        log_w2: f64::NEG_INFINITY,
    };

    fn add(&mut self, log_w: f64) {
        self.hits += 1;
        self.log_w = log_add(self.log_w, log_w);
        self.log_w2 = log_add(self.log_w2, 2.0 * log_w);
    }

    fn merge(self, other: Tally) -> Tally {
        Tally {
            hits: self.hits + other.hits,
            log_w: log_add(self.log_w, other.log_w),
            log_w2: log_add(self.log_w2, other.log_w2),
        }
    }
}

struct Plan<'a> {
    proposal: Proposal,
    eta: f64,
    f_eta: f64,
    target: f64,
    radius: f64,
    blocks: usize,
    prior: &'a PriorModel,
}

impl Plan<'_> {
    fn run_batch(&self, n: usize, count: usize, rng: &mut ChaCha8Rng) -> Tally {
        let m = n / self.blocks;
        let mut tally = Tally::EMPTY;
        let mut means = vec![0.0; self.blocks];
        for _ in 0..count {
            let mut log_w = 0.0;
            for mean in means.iter_mut() {
                let mut sum = 0.0;
                let mut ratio = 0.0;
                for _ in 0..m {
                    let (y, lr) = self.proposal.draw(rng);
                    sum += y;
                    ratio += lr;
                }
                *mean = sum / m as f64;
                log_w += if self.proposal.exact_tilt() {
                    -self.eta * sum + m as f64 * self.f_eta
                } else {
                    ratio
                };
            }
            let dist2 =
                means.iter().map(|v| (v - self.target).powi(2)).sum::<f64>() / self.blocks as f64;
            if dist2 < self.radius * self.radius {
                tally.add(log_w);
            }
        }
        tally
    }

    /// Largest log weight on the ball, valid for exact tilts.
    fn log_weight_cap(&self, n: usize) -> Option<f64> {
        if !self.proposal.exact_tilt() {
            return None;
        }
        let mean = self.prior.mean_field(self.eta)?;
        Some(-(n as f64) * (self.eta * mean - self.f_eta))
    }
}

/// Estimates `−(1/n) log P{‖Q̃ − c‖ < δ}` along the schedule.
///
/// The distance is the root-mean-square deviation of the block means from
/// `c`, the L² distance on a unit-area domain split into `ñ` equal cells.
pub fn estimate_rate(config: &MCConfig, prior: &PriorModel, c: f64) -> Result<MCResult> {
    config.validate()?;
    let target = prior
        .rate_opt(c)
        .ok_or_else(|| Error::InvalidArgument(format!("rate is infinite at target {c}")))?;
    let delta = config.ball_radius;
    let ybar = prior.mean();
    let rate_or_inf = |y: f64| prior.rate_opt(y).unwrap_or(f64::INFINITY);
    let edge = (rate_or_inf(c - delta), rate_or_inf(c + delta));
    let bracket = if (c - ybar).abs() < delta {
        (0.0, edge.0.max(edge.1))
    } else {
        (edge.0.min(edge.1), edge.0.max(edge.1))
    };

    let proposal_mean = match config.sampling {
        Sampling::Direct => ybar,
        Sampling::Tilted if (c - ybar).abs() <= delta => ybar,
        Sampling::Tilted => c - delta * (c - ybar).signum(),
    };
    let eta = if proposal_mean == ybar {
        0.0
    } else {
        prior.rate_derivs(proposal_mean)?.0
    };
    let plan = Plan {
        proposal: Proposal::new(prior, eta, proposal_mean)?,
        eta,
        f_eta: prior.cgf(eta)?,
        target: c,
        radius: delta,
        blocks: config.macrocells,
        prior,
    };

    let mut estimates = Vec::with_capacity(config.n_schedule.len());
    for (k, &n) in config.n_schedule.iter().enumerate() {
        let batches = config.trials.div_ceil(BATCH);
        let tallies: Vec<Tally> = (0..batches)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(((k as u64) << 32) | b as u64);
                let count = BATCH.min(config.trials - b * BATCH);
                plan.run_batch(n, count, &mut rng)
            })
            .collect();
        let tally = tallies.into_iter().fold(Tally::EMPTY, Tally::merge);
        estimates.push(summarize(tally, n, config.trials, plan.log_weight_cap(n)));
    }

    Ok(MCResult {
        target_value: c,
        target,
        bracket,
        proposal_mean,
        estimates,
    })
}

fn summarize(t: Tally, n: usize, trials: usize, log_cap: Option<f64>) -> RateEstimate {
    let nf = n as f64;
    let ln_t = (trials as f64).ln();
    if t.hits == 0 {
        return RateEstimate {
            n,
            hits: 0,
            trials,
            log_probability: None,
            rate: None,
            std_error: None,
            ci_low: None,
            ci_high: None,
            censored: true,
            rate_lower_bound: log_cap.map(|cap| -(cap + 3f64.ln() - ln_t) / nf),
        };
    }
    let log_p = t.log_w - ln_t;
    if t.hits < MIN_HITS {
        return RateEstimate {
            n,
            hits: t.hits,
            trials,
            log_probability: Some(log_p),
            rate: None,
            std_error: None,
            ci_low: None,
            ci_high: None,
            censored: false,
            rate_lower_bound: None,
        };
    }
    // relative variance of the mean weight: (E[w²]/E[w]² − 1)/T
    let ratio = (t.log_w2 - ln_t - 2.0 * log_p).exp();
    let rel_se = ((ratio - 1.0).max(0.0) / trials as f64).sqrt();
    let rate = -log_p / nf;
    let se = rel_se / nf;
    RateEstimate {
        n,
        hits: t.hits,
        trials,
        log_probability: Some(log_p),
        rate: Some(rate),
        std_error: Some(se),
        ci_low: Some(rate - 1.96 * se),
        ci_high: Some(rate + 1.96 * se),
        censored: false,
        rate_lower_bound: None,
    }
}
