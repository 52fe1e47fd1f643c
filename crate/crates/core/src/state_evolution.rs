//! Deterministic predictions: the general state evolution of an OAMP
//! template, the simplified recursion of the optimal iteration and the
//! fixed-point system for Gaussian noise.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::oamp::{DenoiserSet, OampStep};
use crate::scalar_channel::{channel_stats, expect, mmse, ChannelLaw, ChannelStats, PriorModel, ScalarChannel};
use crate::spectra::{InducedMeasures, Measure, SpectralPoint};

/// Step size below which the optimal recursion counts as converged.
pub const PLATEAU_TOL: f64 = 1e-12;

/// Cap on `ρ` once the previous channel is numerically noiseless.
pub const RHO_MAX: f64 = 1e100;

/// Channel parameters and summary statistics of one iteration.
///
/// Fields that a recursion does not produce are `NaN`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeState {
    pub t: usize,
    pub mu_u: f64,
    pub sigma_u: f64,
    pub mu_v: f64,
    pub sigma_v: f64,
    /// `E[U*·f_t(U_{t−1}, C)]`
    pub alpha: f64,
    /// `E[V*·g_t(V_{t−1}, C)]`
    pub beta: f64,
    pub sigma_f2: f64,
    pub sigma_g2: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub w1: f64,
    pub w2: f64,
    pub mmse_u: f64,
    pub mmse_v: f64,
}

impl SeState {
    /// Iteration 0: the iterates are zero and only the side information is
    /// known, so `w = 0` and the predicted errors are the side-information MMSEs.
    pub fn initial(prior_u: PriorModel, prior_v: PriorModel) -> Self {
        let (w1, w2) = (0.0, 0.0);
        SeState {
            t: 0,
            mu_u: 0.0,
            sigma_u: 0.0,
            mu_v: 0.0,
            sigma_v: 0.0,
            alpha: f64::NAN,
            beta: f64::NAN,
            sigma_f2: f64::NAN,
            sigma_g2: f64::NAN,
            rho1: f64::NAN,
            rho2: f64::NAN,
            w1,
            w2,
            mmse_u: mmse(prior_u, w1),
            mmse_v: mmse(prior_v, w2),
        }
    }

    pub fn law_u(&self) -> ChannelLaw {
        ChannelLaw {
            mu: self.mu_u,
            sigma: self.sigma_u,
        }
    }

    pub fn law_v(&self) -> ChannelLaw {
        ChannelLaw {
            mu: self.mu_v,
            sigma: self.sigma_v,
        }
    }

    /// `E[U_t²] = μ² + σ²`
    pub fn second_moment_u(&self) -> f64 {
        self.mu_u * self.mu_u + self.sigma_u * self.sigma_u
    }

    pub fn second_moment_v(&self) -> f64 {
        self.mu_v * self.mu_v + self.sigma_v * self.sigma_v
    }
}

/// Borrowed matrix denoisers of one iteration.
#[derive(Clone, Copy)]
pub struct MatrixDenoisers<'a> {
    pub f: &'a dyn Fn(SpectralPoint) -> f64,
    pub f_tilde: &'a dyn Fn(SpectralPoint) -> f64,
    pub g: &'a dyn Fn(SpectralPoint) -> f64,
    pub g_tilde: &'a dyn Fn(SpectralPoint) -> f64,
}

/// `E[∂ₓf(X, C)]` through Stein's identity `E[Z f(X, C)]/σ`.
pub fn stein_divergence(prior: PriorModel, law: ChannelLaw, f: &dyn Fn(f64, f64) -> f64) -> f64 {
    if law.sigma == 0.0 {
        return 0.0;
    }
    expect(prior, law, |s, x, c| (x - law.mu * s) / law.sigma * f(x, c)) / law.sigma
}

fn nonneg(name: &str, v: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -1e-10 {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!("{name} = {v:e} is negative")))
    }
}

/// One step of the general state evolution.
///
/// `fs` and `gs` are the statistics of the iterate denoisers under the
/// previous channel laws.
pub fn se_step_general(
    measures: &InducedMeasures,
    den: MatrixDenoisers,
    fs: ChannelStats,
    gs: ChannelStats,
    t: usize,
) -> Result<SeState> {
    let d = measures.spectrum().delta();
    let (a, b) = (fs.alpha, gs.alpha);
    let (sf2, sg2) = (nonneg("sigma_f^2", fs.sigma2)?, nonneg("sigma_g^2", gs.sigma2)?);
    let (f, ft, g, gt) = (den.f, den.f_tilde, den.g, den.g_tilde);
    let int = |m: Measure, h: &dyn Fn(f64, SpectralPoint) -> f64| measures.integrate(m, h);

    let f_nu1 = int(Measure::Nu1, &|_, p| f(p));
    let sft_nu3 = int(Measure::Nu3, &|s, p| s * ft(p));
    let g_nu2 = int(Measure::Nu2, &|_, p| g(p));
    let sgt_nu3 = int(Measure::Nu3, &|s, p| s * gt(p));
    let mu_u = a * f_nu1 + b * (1.0 + 1.0 / d) * sft_nu3;
    let mu_v = b * g_nu2 + a * (1.0 + d) * sgt_nu3;

    let f2_nu1 = int(Measure::Nu1, &|_, p| f(p).powi(2));
    let lft2_nu2 = int(Measure::Nu2, &|l, p| l * ft(p).powi(2));
    let f2_mu = int(Measure::Mu, &|_, p| f(p).powi(2));
    let sfft_nu3 = int(Measure::Nu3, &|s, p| s * f(p) * ft(p));
    let lft2_mut = int(Measure::MuTilde, &|l, p| l * ft(p).powi(2));
    let var_u = a * a * f2_nu1 + b * b / d * lft2_nu2 + sf2 * f2_mu + 2.0 * a * b * (1.0 + 1.0 / d) * sfft_nu3
        - mu_u * mu_u
        + sg2 / d * lft2_mut;

    let g2_nu2 = int(Measure::Nu2, &|_, p| g(p).powi(2));
    let lgt2_nu1 = int(Measure::Nu1, &|l, p| l * gt(p).powi(2));
    let lgt2_mu = int(Measure::Mu, &|l, p| l * gt(p).powi(2));
    let sggt_nu3 = int(Measure::Nu3, &|s, p| s * g(p) * gt(p));
    let g2_mut = int(Measure::MuTilde, &|_, p| g(p).powi(2));
    let var_v = b * b * g2_nu2 + a * a * d * lgt2_nu1 + sf2 * d * lgt2_mu + 2.0 * a * b * (1.0 + d) * sggt_nu3
        - mu_v * mu_v
        + sg2 * g2_mut;

    Ok(SeState {
        t,
        mu_u,
        sigma_u: nonneg("sigma_u^2", var_u)?.sqrt(),
        mu_v,
        sigma_v: nonneg("sigma_v^2", var_v)?.sqrt(),
        alpha: a,
        beta: b,
        sigma_f2: sf2,
        sigma_g2: sg2,
        rho1: f64::NAN,
        rho2: f64::NAN,
        w1: f64::NAN,
        w2: f64::NAN,
        mmse_u: f64::NAN,
        mmse_v: f64::NAN,
    })
}

/// General state evolution of a Markov template; `states[0]` is the
/// initial state of zero iterates.
pub fn general_se_run(
    measures: &InducedMeasures,
    prior_u: PriorModel,
    prior_v: PriorModel,
    steps: &[OampStep],
) -> Result<Vec<SeState>> {
    let mut states = vec![SeState::initial(prior_u, prior_v)];
    for (i, step) in steps.iter().enumerate() {
        let prev = states[i];
        let fs = channel_stats(prior_u, prev.law_u(), &*step.denoise_u);
        let gs = channel_stats(prior_v, prev.law_v(), &*step.denoise_v);
        let den = MatrixDenoisers {
            f: &*step.f_matrix,
            f_tilde: &*step.f_tilde,
            g: &*step.g_matrix,
            g_tilde: &*step.g_tilde,
        };
        let mut next = se_step_general(measures, den, fs, gs, i + 1)?;
        let wu = next.mu_u.powi(2) / next.second_moment_u();
        let wv = next.mu_v.powi(2) / next.second_moment_v();
        next.w1 = if wu.is_finite() { wu } else { 0.0 };
        next.w2 = if wv.is_finite() { wv } else { 0.0 };
        states.push(next);
    }
    Ok(states)
}

/// `ρ = 1/mmse(w) − 1/(1 − w)`.
pub fn rho_from(prior: PriorModel, w: f64) -> f64 {
    let m = mmse(prior, w);
    if m <= 0.0 || w >= 1.0 {
        return RHO_MAX;
    }
    (1.0 / m - 1.0 / (1.0 - w)).min(RHO_MAX)
}

/// Output of the optimal recursion.
#[derive(Debug, Clone)]
pub struct OptimalSe {
    /// `states[0]` is the initial state, `states[t]` iteration `t`.
    pub states: Vec<SeState>,
    /// Denoisers of iterations `1..=T`.
    pub denoisers: Vec<DenoiserSet>,
    /// First iteration after which `max |Δw| ≤ PLATEAU_TOL`, if reached.
    pub plateau: Option<usize>,
}

impl OptimalSe {
    pub fn last(&self) -> &SeState {
        self.states.last().expect("states always hold the initial law")
    }
}

/// One step of the simplified recursion from `(w₁, w₂)`.
pub fn optimal_se_step(
    measures: &Arc<InducedMeasures>,
    prior_u: PriorModel,
    prior_v: PriorModel,
    w1: f64,
    w2: f64,
) -> Result<(f64, f64, DenoiserSet)> {
    let rho1 = rho_from(prior_u, w1);
    let rho2 = rho_from(prior_v, w2);
    let theta = measures.shrinkage().theta();
    if !(rho1 > 0.0 && rho2 > 0.0) {
        return Err(Error::InvalidRegime {
            theta,
            rho1,
            rho2,
            reason: format!("no information beyond the Gaussian floor at (w1, w2) = ({w1}, {w2})"),
        });
    }
    let den = DenoiserSet::new(measures.clone(), rho1, rho2)?;
    let p = den.p_norm();
    let q = den.q_norm();
    let w1n = 1.0 - (1.0 - p) / (p * rho1);
    let w2n = 1.0 - (1.0 - q) / (q * rho2);
    Ok((w1n, w2n, den))
}

/// The optimal recursion for `t = 1..=T`; stops early at a plateau.
pub fn optimal_se_run(
    measures: Arc<InducedMeasures>,
    prior_u: PriorModel,
    prior_v: PriorModel,
    iterations: usize,
) -> Result<OptimalSe> {
    optimal_se_run_with(measures, prior_u, prior_v, iterations, true)
}

/// As [`optimal_se_run`]; `stop_at_plateau = false` always produces `T` steps.
pub fn optimal_se_run_with(
    measures: Arc<InducedMeasures>,
    prior_u: PriorModel,
    prior_v: PriorModel,
    iterations: usize,
    stop_at_plateau: bool,
) -> Result<OptimalSe> {
    run_optimal(measures, prior_u, prior_v, iterations, PLATEAU_TOL, stop_at_plateau)
}

fn run_optimal(
    measures: Arc<InducedMeasures>,
    prior_u: PriorModel,
    prior_v: PriorModel,
    iterations: usize,
    tol: f64,
    stop_at_plateau: bool,
) -> Result<OptimalSe> {
    if iterations == 0 {
        return Err(Error::Config("state evolution needs at least one iteration".into()));
    }
    let mut states = vec![SeState::initial(prior_u, prior_v)];
    let mut denoisers = Vec::with_capacity(iterations);
    let mut plateau = None;
    for t in 1..=iterations {
        let prev = states[t - 1];
        let (w1, w2, den) = optimal_se_step(&measures, prior_u, prior_v, prev.w1, prev.w2)?;
        for w in [w1, w2] {
            if !(-1e-9..=1.0 + 1e-9).contains(&w) {
                return Err(Error::RecursionBreakdown {
                    t,
                    state: format!("{prev:?} -> (w1, w2) = ({w1}, {w2})"),
                });
            }
        }
        let (w1, w2) = (w1.clamp(0.0, 1.0), w2.clamp(0.0, 1.0));
        let (rho1, rho2) = den.rho();
        let ch_u = ScalarChannel::new(prior_u, prev.w1)?;
        let ch_v = ScalarChannel::new(prior_v, prev.w2)?;
        let fs = channel_stats(prior_u, prev.law_u(), |x, c| ch_u.dmmse(x, c));
        let gs = channel_stats(prior_v, prev.law_v(), |x, c| ch_v.dmmse(x, c));
        let lu = ChannelLaw::with_strength(w1);
        let lv = ChannelLaw::with_strength(w2);
        if w1 < prev.w1 - 1e-9 || w2 < prev.w2 - 1e-9 {
            log::warn!("state evolution: w decreased at t = {t}: ({}, {}) -> ({w1}, {w2})", prev.w1, prev.w2);
        }
        states.push(SeState {
            t,
            mu_u: lu.mu,
            sigma_u: lu.sigma,
            mu_v: lv.mu,
            sigma_v: lv.sigma,
            alpha: fs.alpha,
            beta: gs.alpha,
            sigma_f2: fs.sigma2,
            sigma_g2: gs.sigma2,
            rho1,
            rho2,
            w1,
            w2,
            mmse_u: mmse(prior_u, w1),
            mmse_v: mmse(prior_v, w2),
        });
        denoisers.push(den);
        if plateau.is_none() && (w1 - prev.w1).abs().max((w2 - prev.w2).abs()) <= tol {
            plateau = Some(t);
            if stop_at_plateau {
                break;
            }
        }
    }
    Ok(OptimalSe {
        states,
        denoisers,
        plateau,
    })
}

/// Iterate the optimal recursion until `max |Δw| ≤ tol`.
pub fn optimal_se_limit(
    measures: Arc<InducedMeasures>,
    prior_u: PriorModel,
    prior_v: PriorModel,
    tol: f64,
    max_iter: usize,
) -> Result<SeState> {
    let run = run_optimal(measures, prior_u, prior_v, max_iter, tol, true)?;
    let s = run.states;
    let n = s.len();
    if run.plateau.is_some() {
        return Ok(s[n - 1]);
    }
    Err(Error::FixedPointNotConverged {
        last: (s[n - 1].w1, s[n - 1].w2),
        previous: (s[n - 2].w1, s[n - 2].w2),
    })
}

/// Solution of the Gaussian-noise fixed-point system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPoint {
    pub w1: f64,
    pub w2: f64,
    pub mmse_u: f64,
    pub mmse_v: f64,
    pub iterations: usize,
}

/// Knobs of the damped fixed-point iteration.
#[derive(Debug, Clone, Copy)]
pub struct FixedPointSolver {
    pub damping: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for FixedPointSolver {
    fn default() -> Self {
        FixedPointSolver {
            damping: 0.5,
            tolerance: 1e-12,
            max_iter: 10_000,
        }
    }
}

impl FixedPointSolver {
    /// Damped iteration of `w₂ = s₂/(1+s₂)`, `s₂ = θ²(1 − mmse_U(w₁))` and
    /// `w₁ = s₁/(1+s₁)`, `s₁ = (θ²/δ)(1 − mmse_V(w₂))` from `start`.
    pub fn solve(
        &self,
        theta: f64,
        delta: f64,
        prior_u: PriorModel,
        prior_v: PriorModel,
        start: (f64, f64),
    ) -> Result<FixedPoint> {
        let t2 = theta * theta;
        let map = |w1: f64, w2: f64| {
            let s2 = t2 * (1.0 - mmse(prior_u, w1));
            let s1 = t2 / delta * (1.0 - mmse(prior_v, w2));
            (s1 / (1.0 + s1), s2 / (1.0 + s2))
        };
        let (mut w1, mut w2) = start;
        let mut previous = (w1, w2);
        for k in 1..=self.max_iter {
            let (n1, n2) = map(w1, w2);
            let (x1, x2) = (
                (1.0 - self.damping) * w1 + self.damping * n1,
                (1.0 - self.damping) * w2 + self.damping * n2,
            );
            previous = (w1, w2);
            (w1, w2) = (x1, x2);
            if (w1 - previous.0).abs().max((w2 - previous.1).abs()) <= self.tolerance {
                return Ok(FixedPoint {
                    w1,
                    w2,
                    mmse_u: mmse(prior_u, w1),
                    mmse_v: mmse(prior_v, w2),
                    iterations: k,
                });
            }
        }
        Err(Error::FixedPointNotConverged {
            last: (w1, w2),
            previous,
        })
    }
}

/// Fixed point of the Gaussian-noise system reached from `w = 0`, the
/// state of the iterates before the first step.
///
/// Also solves from near-zero and near-one starts and logs a warning when
/// those reach different points.
pub fn gaussian_fixed_point(theta: f64, delta: f64, prior_u: PriorModel, prior_v: PriorModel) -> Result<FixedPoint> {
    if !(theta > 0.0) {
        return Err(Error::Domain(format!("fixed point needs theta > 0, got {theta}")));
    }
    let solver = FixedPointSolver::default();
    let (pu, pv) = (prior_u, prior_v);
    let fp = solver.solve(theta, delta, pu, pv, (0.0, 0.0))?;
    let others: Vec<FixedPoint> = [(1e-6, 1e-6), (1.0 - 1e-6, 1.0 - 1e-6)]
        .into_iter()
        .filter_map(|s| solver.solve(theta, delta, pu, pv, s).ok())
        .collect();
    let distinct = others
        .iter()
        .any(|o| (o.w1 - fp.w1).abs().max((o.w2 - fp.w2).abs()) > 1e-6);
    if distinct {
        log::warn!(
            "fixed-point system has several solutions at theta = {theta}: reached ({}, {}), others {:?}",
            fp.w1,
            fp.w2,
            others.iter().map(|o| (o.w1, o.w2)).collect::<Vec<_>>()
        );
    }
    Ok(fp)
}

/// Fixed points reached from near-zero and near-one starts.
pub fn fixed_point_scan(theta: f64, delta: f64, prior_u: PriorModel, prior_v: PriorModel) -> Vec<FixedPoint> {
    let solver = FixedPointSolver::default();
    let mut found: Vec<FixedPoint> = Vec::new();
    for s in [(1e-6, 1e-6), (1.0 - 1e-6, 1.0 - 1e-6)] {
        if let Ok(fp) = solver.solve(theta, delta, prior_u, prior_v, s) {
            if !found.iter().any(|o| (o.w1 - fp.w1).abs().max((o.w2 - fp.w2).abs()) <= 1e-6) {
                found.push(fp);
            }
        }
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oamp::{GeneralOampSpec, OptimalPlan};
    use crate::scalar_channel::Prior;
    use crate::spectra::{ShrinkageSet, SpectrumModel};

    fn mp_measures(theta: f64, delta: f64) -> Arc<InducedMeasures> {
        let s = Arc::new(SpectrumModel::marchenko_pastur(delta).unwrap());
        Arc::new(InducedMeasures::new(ShrinkageSet::new(s, theta).unwrap()).unwrap())
    }

    fn rad(w0: f64) -> PriorModel {
        PriorModel::new(Prior::Rademacher, w0).unwrap()
    }

    #[test]
    fn limit_matches_gaussian_fixed_point() {
        for (theta, delta, p) in [
            (2.0, 0.5, rad(0.04)),
            (1.5, 0.5, rad(0.1)),
            (2.0, 1.0, rad(0.04)),
            (1.2, 0.3, PriorModel::new(Prior::UnitGaussian, 0.2).unwrap()),
        ] {
            let lim = optimal_se_limit(mp_measures(theta, delta), p, p, 1e-13, 200).unwrap();
            let fp = gaussian_fixed_point(theta, delta, p, p).unwrap();
            assert!((lim.w1 - fp.w1).abs() <= 1e-6, "{theta} {delta}: {} vs {}", lim.w1, fp.w1);
            assert!((lim.w2 - fp.w2).abs() <= 1e-6, "{theta} {delta}: {} vs {}", lim.w2, fp.w2);
        }
    }

    #[test]
    fn reference_fixed_point() {
        let fp = gaussian_fixed_point(2.0, 0.5, rad(0.04), rad(0.04)).unwrap();
        assert!((fp.w1 - 0.881_690_66).abs() < 1e-7);
        assert!((fp.w2 - 0.798_470_95).abs() < 1e-7);
        assert!((fp.mmse_u - 0.009_484).abs() < 1e-6);
        assert!((fp.mmse_v - 0.068_448).abs() < 1e-6);
        assert_eq!(fixed_point_scan(2.0, 0.5, rad(0.04), rad(0.04)).len(), 1);
        assert!(matches!(gaussian_fixed_point(0.0, 0.5, rad(0.04), rad(0.04)), Err(Error::Domain(_))));
    }

    #[test]
    fn gaussian_prior_fixed_point_is_closed_form() {
        // mmse(w) = 1/(1 + w/(1−w) + s₀): solve the scalar system by bisection on w₁
        let (theta, delta, w0) = (1.5_f64, 0.4, 0.2);
        let p = PriorModel::new(Prior::UnitGaussian, w0).unwrap();
        let s0 = w0 / (1.0 - w0);
        let m = |w: f64| 1.0 / (1.0 + w / (1.0 - w) + s0);
        let t2 = theta * theta;
        let residual = |w1: f64| {
            let s2 = t2 * (1.0 - m(w1));
            let w2 = s2 / (1.0 + s2);
            let s1 = t2 / delta * (1.0 - m(w2));
            s1 / (1.0 + s1) - w1
        };
        let (mut lo, mut hi) = (1e-12, 1.0 - 1e-12);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if residual(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let fp = gaussian_fixed_point(theta, delta, p, p).unwrap();
        assert!((fp.w1 - lo).abs() < 1e-9, "{} vs {lo}", fp.w1);
    }

    #[test]
    fn limit_is_a_fixed_point_of_the_step() {
        let m = mp_measures(2.0, 0.5);
        let p = rad(0.04);
        let lim = optimal_se_limit(m.clone(), p, p, 1e-14, 200).unwrap();
        let (w1, w2, _) = optimal_se_step(&m, p, p, lim.w1, lim.w2).unwrap();
        assert!((w1 - lim.w1).abs() <= 1e-10);
        assert!((w2 - lim.w2).abs() <= 1e-10);
    }

    #[test]
    fn strong_signal_is_nearly_perfect() {
        let run = optimal_se_run(mp_measures(50.0, 0.5), rad(0.04), rad(0.04), 10).unwrap();
        let last = run.last();
        assert!(last.mmse_u <= 1e-3 && last.mmse_v <= 1e-3, "{last:?}");
    }

    #[test]
    fn noiseless_side_information_gives_extrinsic_strengths() {
        // with mmse ≈ 0 the first step returns (θ²/δ)/(1+θ²/δ) and θ²/(1+θ²)
        let p = rad(1.0 - 1e-9);
        let run = optimal_se_run_with(mp_measures(2.0, 0.5), p, p, 1, false).unwrap();
        let s = run.states[1];
        assert!((s.w1 - 8.0 / 9.0).abs() < 1e-4, "{}", s.w1);
        assert!((s.w2 - 4.0 / 5.0).abs() < 1e-4, "{}", s.w2);
        assert!(s.mmse_u < 1e-6 && s.mmse_v < 1e-6);
    }

    #[test]
    fn rho_examples() {
        let g = PriorModel::new(Prior::UnitGaussian, 0.2).unwrap();
        for w in [0.0, 0.3, 0.8] {
            assert!((rho_from(g, w) - 0.25).abs() < 1e-12);
        }
        assert_eq!(rho_from(rad(0.1), 1.0), RHO_MAX);
        assert!(rho_from(rad(0.0), 0.0).abs() < 1e-12);
        let r = optimal_se_step(&mp_measures(2.0, 0.5), rad(0.0), rad(0.0), 0.0, 0.0);
        assert!(matches!(r, Err(Error::InvalidRegime { .. })));
    }

    #[test]
    fn general_recursion_agrees_with_simplified_one() {
        let m = mp_measures(2.0, 0.5);
        let p = rad(0.04);
        let run = optimal_se_run_with(m.clone(), p, p, 5, false).unwrap();
        let plan = OptimalPlan {
            measures: m.clone(),
            prior_u: p,
            prior_v: p,
            se: run.states.clone(),
            denoisers: run.denoisers.clone(),
        };
        let steps = plan.general_steps().unwrap();
        let general = general_se_run(&m, p, p, &steps).unwrap();
        for (g, s) in general[1..].iter().zip(&run.states[1..]) {
            assert!((g.mu_u - s.mu_u).abs() < 1e-8, "{} vs {}", g.mu_u, s.mu_u);
            assert!((g.sigma_u - s.sigma_u).abs() < 1e-8);
            assert!((g.mu_v - s.mu_v).abs() < 1e-8);
            assert!((g.sigma_v - s.sigma_v).abs() < 1e-8);
            assert!((g.alpha - s.alpha).abs() < 1e-8 && (g.beta - s.beta).abs() < 1e-8);
        }
        assert!(GeneralOampSpec::register(m, p, p, steps).is_ok());
    }

    #[test]
    fn plateau_stops_the_run() {
        let run = optimal_se_run(mp_measures(2.0, 0.5), rad(0.04), rad(0.04), 200).unwrap();
        let t = run.plateau.unwrap();
        assert_eq!(run.states.len(), t + 1);
        assert!(t < 50);
    }

    #[test]
    fn stein_divergence_examples() {
        let p = rad(0.0);
        let law = ChannelLaw::with_strength(0.5);
        assert!((stein_divergence(p, law, &|x, _| x) - 1.0).abs() < 1e-10);
        assert!(stein_divergence(p, law, &|_, _| 1.0).abs() < 1e-12);
        assert_eq!(stein_divergence(p, ChannelLaw { mu: 1.0, sigma: 0.0 }, &|x, _| x), 0.0);
    }

    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn strengths_stay_in_unit_interval_and_increase(theta in 0.5f64..3.0, w0 in 0.01f64..0.3) {
            let run = optimal_se_run_with(mp_measures(theta, 0.5), rad(w0), rad(w0), 4, false).unwrap();
            for pair in run.states.windows(2) {
                prop_assert!((0.0..=1.0).contains(&pair[1].w1) && (0.0..=1.0).contains(&pair[1].w2));
                prop_assert!(pair[1].w1 >= pair[0].w1 - 1e-9 && pair[1].w2 >= pair[0].w2 - 1e-9);
                prop_assert!(pair[1].mmse_u <= 1.0 - w0 + 1e-9);
            }
        }
    }
}
