//! Scalar Gaussian channels `X = √w·X* + √(1−w)·Z` observed together with
//! side information `C = √w₀·X* + √(1−w₀)·Z′`, and the denoisers built on
//! them: posterior means, their divergence-free (DMMSE) projections, and
//! channel expectations used by state evolution.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::NormalRule;

/// Nodes of the uniform rule used for one-dimensional channel expectations.
pub const CHANNEL_NODES: usize = 2001;
/// Half-width, in standard deviations, of the uniform rules.
pub const CHANNEL_HALF_WIDTH: f64 = 10.0;
/// Nodes per axis of the uniform tensor rule over `(Z, Z′)`.
pub const JOINT_NODES: usize = 401;
/// Gauss–Hermite nodes per axis for the Gaussian-prior tensor rule.
pub const HERMITE_NODES: usize = 41;

/// Shared rule for expectations over one standard normal.
///
/// A fine trapezoid grid rather than Gauss–Hermite: the Rademacher posterior
/// mean has poles within `π(1−w)/(2√w)` of the real axis, and 101-node
/// Hermite rules lose about 5e-7 at `w = 0.9`.
pub fn default_rule() -> Arc<NormalRule> {
    static RULE: OnceLock<Arc<NormalRule>> = OnceLock::new();
    RULE.get_or_init(|| Arc::new(NormalRule::trapezoid(CHANNEL_NODES, CHANNEL_HALF_WIDTH)))
        .clone()
}

/// Per-axis rule of the two-dimensional expectations.
pub fn joint_rule() -> Arc<NormalRule> {
    static RULE: OnceLock<Arc<NormalRule>> = OnceLock::new();
    RULE.get_or_init(|| Arc::new(NormalRule::trapezoid(JOINT_NODES, CHANNEL_HALF_WIDTH)))
        .clone()
}

fn hermite_rule() -> Arc<NormalRule> {
    static RULE: OnceLock<Arc<NormalRule>> = OnceLock::new();
    RULE.get_or_init(|| Arc::new(NormalRule::new(HERMITE_NODES))).clone()
}

/// Unit-variance signal priors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prior {
    Rademacher,
    #[serde(rename = "gaussian")]
    UnitGaussian,
}

impl std::str::FromStr for Prior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rademacher" | "rad" | "pm1" => Ok(Prior::Rademacher),
            "gaussian" | "unitgaussian" | "normal" => Ok(Prior::UnitGaussian),
            other => Err(Error::Config(format!("unknown prior `{other}`"))),
        }
    }
}

impl std::fmt::Display for Prior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Prior::Rademacher => "rademacher",
            Prior::UnitGaussian => "gaussian",
        })
    }
}

/// A signal prior together with the strength of its side-information channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorModel {
    pub kind: Prior,
    /// `w₀`, the squared cosine similarity of the side information.
    pub side_info_strength: f64,
}

impl PriorModel {
    pub fn new(kind: Prior, side_info_strength: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&side_info_strength) {
            return Err(Error::Domain(format!(
                "side-information strength must lie in [0, 1), got {side_info_strength}"
            )));
        }
        Ok(PriorModel {
            kind,
            side_info_strength,
        })
    }

    /// No side information.
    pub fn plain(kind: Prior) -> Self {
        PriorModel {
            kind,
            side_info_strength: 0.0,
        }
    }

    /// `w₀/(1 − w₀)`
    pub fn side_snr(&self) -> f64 {
        self.side_info_strength / (1.0 - self.side_info_strength)
    }
}

/// Law of `X = μ·X* + σ·Z` for a given prior on `X*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelLaw {
    pub mu: f64,
    pub sigma: f64,
}

impl ChannelLaw {
    /// The normalized channel `√w·X* + √(1−w)·Z`.
    pub fn with_strength(w: f64) -> Self {
        ChannelLaw {
            mu: w.sqrt(),
            sigma: (1.0 - w).max(0.0).sqrt(),
        }
    }
}

/// `E[h(X*, X, C)]` for `X = μX* + σZ` and the side-information channel of
/// `prior`, with `Z, Z′` independent.
pub fn expect(prior: PriorModel, law: ChannelLaw, h: impl Fn(f64, f64, f64) -> f64) -> f64 {
    let rule = match prior.kind {
        Prior::Rademacher => joint_rule(),
        Prior::UnitGaussian => hermite_rule(),
    };
    expect_with(prior, law, &rule, h)
}

/// [`expect`] with an explicit per-axis rule.
pub fn expect_with(
    prior: PriorModel,
    law: ChannelLaw,
    rule: &NormalRule,
    h: impl Fn(f64, f64, f64) -> f64,
) -> f64 {
    let w0 = prior.side_info_strength;
    let (a, b) = (w0.sqrt(), (1.0 - w0).sqrt());
    let given = |s: f64| rule.expect(|z| rule.expect(|zc| h(s, law.mu * s + law.sigma * z, a * s + b * zc)));
    match prior.kind {
        Prior::Rademacher => 0.5 * (given(1.0) + given(-1.0)),
        Prior::UnitGaussian => hermite_rule().expect(given),
    }
}

/// `α = E[X*·f(X, C)]`, `E[f(X, C)²]` and the residual variance `E[f²] − α²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub alpha: f64,
    pub second_moment: f64,
    pub sigma2: f64,
}

pub fn channel_stats(prior: PriorModel, law: ChannelLaw, f: impl Fn(f64, f64) -> f64) -> ChannelStats {
    let alpha = expect(prior, law, |s, x, c| s * f(x, c));
    let second_moment = expect(prior, law, |_, x, c| f(x, c).powi(2));
    ChannelStats {
        alpha,
        second_moment,
        sigma2: second_moment - alpha * alpha,
    }
}

/// Combined log-likelihood slope `√w·x/(1−w) + √w₀·c/(1−w₀)` and total SNR.
fn evidence(prior: PriorModel, w: f64, x: f64, c: f64) -> (f64, f64) {
    let w0 = prior.side_info_strength;
    let r = w.sqrt() * x / (1.0 - w) + w0.sqrt() * c / (1.0 - w0);
    (r, w / (1.0 - w) + prior.side_snr())
}

/// `E[X* | X = x, C = c]` for the channel of strength `w`.
///
/// At `w = 1` the channel is noiseless; Rademacher returns `sign(x)` and the
/// Gaussian prior returns `x`.
pub fn posterior_mean(prior: PriorModel, w: f64, x: f64, c: f64) -> f64 {
    if w >= 1.0 {
        return match prior.kind {
            Prior::Rademacher => {
                if x == 0.0 {
                    0.0
                } else {
                    x.signum()
                }
            }
            Prior::UnitGaussian => x,
        };
    }
    let (r, s) = evidence(prior, w, x, c);
    match prior.kind {
        Prior::Rademacher => r.tanh(),
        Prior::UnitGaussian => r / (1.0 + s),
    }
}

/// `∂/∂x E[X* | X = x, C = c]`.
pub fn posterior_mean_derivative(prior: PriorModel, w: f64, x: f64, c: f64) -> f64 {
    if w >= 1.0 {
        return match prior.kind {
            Prior::Rademacher => 0.0,
            Prior::UnitGaussian => 1.0,
        };
    }
    let slope = w.sqrt() / (1.0 - w);
    let (r, s) = evidence(prior, w, x, c);
    match prior.kind {
        Prior::Rademacher => {
            let t = r.tanh();
            slope * (1.0 - t * t)
        }
        Prior::UnitGaussian => slope / (1.0 + s),
    }
}

/// MMSE of `X*` from a single Gaussian observation at SNR `s`.
pub fn mmse_at_snr(kind: Prior, s: f64) -> f64 {
    mmse_at_snr_with(kind, s, &default_rule())
}

pub fn mmse_at_snr_with(kind: Prior, s: f64, rule: &NormalRule) -> f64 {
    if s <= 0.0 {
        return 1.0;
    }
    if s.is_infinite() {
        return 0.0;
    }
    let v = match kind {
        Prior::UnitGaussian => 1.0 / (1.0 + s),
        // E[tanh²(s + √s Z)] = E[tanh(s + √s Z)], and 1 − tanh(y) = 2/(1 + e^{2y})
        // keeps the tail accurate
        Prior::Rademacher => rule.expect(|z| 2.0 / (1.0 + (2.0 * (s + s.sqrt() * z)).exp())),
    };
    v.clamp(0.0, 1.0)
}

/// `mmse(w) = E[(X* − E[X*|X, C])²]`, clamped to `[0, 1]`.
///
/// `(X, C)` is equivalent to one observation at SNR `w/(1−w) + w₀/(1−w₀)`.
pub fn mmse(prior: PriorModel, w: f64) -> f64 {
    mmse_with(prior, w, &default_rule())
}

pub fn mmse_with(prior: PriorModel, w: f64, rule: &NormalRule) -> f64 {
    if w >= 1.0 {
        return 0.0;
    }
    mmse_at_snr_with(prior.kind, w.max(0.0) / (1.0 - w) + prior.side_snr(), rule)
}

/// A channel of fixed strength with its DMMSE coefficients precomputed.
#[derive(Debug, Clone)]
pub struct ScalarChannel {
    prior: PriorModel,
    w: f64,
    mmse: f64,
    /// `E[Z·φ(X, C)]/√(1−w)`
    stein: f64,
    denominator: f64,
}

impl ScalarChannel {
    pub fn new(prior: PriorModel, w: f64) -> Result<Self> {
        Self::with_rule(prior, w, &default_rule())
    }

    pub fn with_rule(prior: PriorModel, w: f64, rule: &NormalRule) -> Result<Self> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::DegenerateChannel {
                w,
                reason: "strength outside [0, 1]".into(),
            });
        }
        let mmse = mmse_with(prior, w, rule);
        if w == 0.0 || w == 1.0 {
            return Ok(ScalarChannel {
                prior,
                w,
                mmse,
                stein: 0.0,
                denominator: 1.0,
            });
        }
        // Stein: E[Zφ]/√(1−w) = E[∂ₓφ] = √w·mmse/(1−w) for both priors
        let stein = w.sqrt() * mmse / (1.0 - w);
        let denominator = 1.0 - w.sqrt() * stein;
        if denominator.abs() < 1e-12 {
            return Err(Error::DegenerateChannel {
                w,
                reason: "DMMSE denominator vanishes".into(),
            });
        }
        Ok(ScalarChannel {
            prior,
            w,
            mmse,
            stein,
            denominator,
        })
    }

    pub fn prior(&self) -> PriorModel {
        self.prior
    }

    pub fn strength(&self) -> f64 {
        self.w
    }

    pub fn mmse(&self) -> f64 {
        self.mmse
    }

    /// `E[Z·φ(X, C)]/√(1−w)`, i.e. `E[∂ₓφ]`.
    pub fn stein_coefficient(&self) -> f64 {
        self.stein
    }

    pub fn posterior_mean(&self, x: f64, c: f64) -> f64 {
        posterior_mean(self.prior, self.w, x, c)
    }

    /// Divergence-free projection of the posterior mean.
    ///
    /// At `w = 0` the observation carries nothing and this is `E[X*|C]`.
    pub fn dmmse(&self, x: f64, c: f64) -> f64 {
        if self.w == 0.0 {
            return posterior_mean(self.prior, 0.0, 0.0, c);
        }
        if self.w == 1.0 {
            return self.posterior_mean(x, c);
        }
        (self.posterior_mean(x, c) - self.stein * x) / self.denominator
    }

    /// `∂/∂x` of [`ScalarChannel::dmmse`].
    pub fn dmmse_derivative(&self, x: f64, c: f64) -> f64 {
        if self.w == 0.0 {
            return 0.0;
        }
        if self.w == 1.0 {
            return posterior_mean_derivative(self.prior, 1.0, x, c);
        }
        (posterior_mean_derivative(self.prior, self.w, x, c) - self.stein) / self.denominator
    }
}
