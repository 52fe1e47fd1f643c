//! Reference estimators: PCA and the standard AMP for Gaussian noise.
//!
//! The AMP recursion, for `W` with i.i.d. `N(0, 1/N)` entries:
//!
//! ```text
//! x_t = Yᵀ f(u_{t−1}, a) − b_t · g(x_{t−1}, b),    b_t = (1/N) Σᵢ ∂f(u_{t−1,i})
//! u_t = Y g(x_t, b)      − c_t · f(u_{t−1}, a),    c_t = (1/N) Σⱼ ∂g(x_{t,j})
//! ```
//!
//! with `u_0 = 0` and `f, g` posterior means at the strengths predicted by
//! the scalar recursion `SNR_v = θ²(1 − mmse_U)`, `SNR_u = (θ²/δ)(1 − mmse_V)`.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{ProblemInstance, SvdCache};
use crate::oamp::{cos2, IterationTrace, TraceRow};
use crate::scalar_channel::{mmse, posterior_mean, posterior_mean_derivative, PriorModel};

/// Which baseline produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Pca,
    Amp,
}

impl Baseline {
    pub fn tag(&self) -> &'static str {
        match self {
            Baseline::Pca => "pca",
            Baseline::Amp => "amp",
        }
    }
}

/// Per-iteration (or one-shot, `t = 0`) performance of a baseline.
#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub method: Baseline,
    pub trace: IterationTrace,
}

impl BaselineResult {
    pub fn iterations(&self) -> usize {
        self.trace.rows.len()
    }
}

fn mse(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64
}

fn inner(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Top singular pair, scaled to unit per-entry power and sign-aligned with
/// the truth for reporting.
pub fn pca_estimate(svd: &SvdCache, inst: &ProblemInstance) -> BaselineResult {
    let start = Instant::now();
    let (m, n) = (inst.m, inst.n);
    let mut u: Vec<f64> = (0..m).map(|i| svd.u[(i, 0)] * (m as f64).sqrt()).collect();
    let mut v: Vec<f64> = (0..n).map(|j| svd.v[(j, 0)] * (n as f64).sqrt()).collect();
    if inner(&u, &inst.u_star) < 0.0 {
        u.iter_mut().for_each(|x| *x = -*x);
    }
    if inner(&v, &inst.v_star) < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let row = TraceRow {
        t: 0,
        cos2_u: cos2(&u, &inst.u_star),
        cos2_v: cos2(&v, &inst.v_star),
        mse_u: mse(&u, &inst.u_star),
        mse_v: mse(&v, &inst.v_star),
        align_u: inner(&u, &inst.u_star) / m as f64,
        power_u: 1.0,
        align_v: inner(&v, &inst.v_star) / n as f64,
        power_v: 1.0,
        pred_w1: f64::NAN,
        pred_w2: f64::NAN,
        pred_mmse_u: f64::NAN,
        pred_mmse_v: f64::NAN,
        seconds: start.elapsed().as_secs_f64(),
    };
    BaselineResult {
        method: Baseline::Pca,
        trace: IterationTrace { rows: vec![row] },
    }
}

/// One state of the AMP scalar recursion.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AmpState {
    pub t: usize,
    /// `u_t = μ_u·u* + σ_u·Z`
    pub mu_u: f64,
    pub sigma_u: f64,
    pub mu_v: f64,
    pub sigma_v: f64,
    pub w_u: f64,
    pub w_v: f64,
}

/// Scalar recursion tracking the AMP iterates; `states[0]` is `u_0 = 0`.
pub fn gaussian_amp_se(theta: f64, delta: f64, prior_u: PriorModel, prior_v: PriorModel, iterations: usize) -> Vec<AmpState> {
    let mut states = vec![AmpState {
        t: 0,
        mu_u: 0.0,
        sigma_u: 0.0,
        mu_v: 0.0,
        sigma_v: 0.0,
        w_u: 0.0,
        w_v: 0.0,
    }];
    for t in 1..=iterations {
        let prev = states[t - 1];
        // E[U*f] = E[f²] = 1 − mmse for a posterior mean
        let fu = 1.0 - mmse(prior_u, prev.w_u);
        let mu_v = theta * delta.sqrt() * fu;
        let sigma_v = (delta * fu).sqrt();
        let w_v = strength(mu_v, sigma_v);
        let gv = 1.0 - mmse(prior_v, w_v);
        let mu_u = theta / delta.sqrt() * gv;
        let sigma_u = gv.sqrt();
        let w_u = strength(mu_u, sigma_u);
        states.push(AmpState {
            t,
            mu_u,
            sigma_u,
            mu_v,
            sigma_v,
            w_u,
            w_v,
        });
    }
    states
}

fn strength(mu: f64, sigma: f64) -> f64 {
    let p = mu * mu + sigma * sigma;
    if p > 0.0 {
        mu * mu / p
    } else {
        0.0
    }
}

/// Posterior mean for an unnormalized channel `μX* + σZ`.
struct ScaledDenoiser {
    prior: PriorModel,
    w: f64,
    scale: f64,
}

impl ScaledDenoiser {
    fn new(prior: PriorModel, mu: f64, sigma: f64) -> Self {
        let p = (mu * mu + sigma * sigma).sqrt();
        ScaledDenoiser {
            prior,
            w: strength(mu, sigma),
            scale: if p > 0.0 { 1.0 / p } else { 0.0 },
        }
    }

    fn value(&self, x: f64, c: f64) -> f64 {
        posterior_mean(self.prior, self.w, x * self.scale, c)
    }

    fn derivative(&self, x: f64, c: f64) -> f64 {
        if self.w == 0.0 {
            return 0.0;
        }
        posterior_mean_derivative(self.prior, self.w, x * self.scale, c) * self.scale
    }
}

fn check_finite(x: &[f64], t: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence(t))
    }
}

/// Run `T` AMP iterations. Predicted columns hold the AMP scalar recursion.
pub fn gaussian_amp_run(
    inst: &ProblemInstance,
    prior_u: PriorModel,
    prior_v: PriorModel,
    iterations: usize,
) -> Result<BaselineResult> {
    if !inst.descriptor.starts_with("gaussian") {
        log::warn!("AMP baseline run on non-Gaussian noise ({})", inst.descriptor);
    }
    let (m, n) = (inst.m, inst.n);
    let se = gaussian_amp_se(inst.theta, m as f64 / n as f64, prior_u, prior_v, iterations);
    let y = &inst.y;
    let mut u = vec![0.0; m];
    let mut g_prev = vec![0.0; n];
    let mut f_den = ScaledDenoiser::new(prior_u, 0.0, 0.0);
    let mut trace = IterationTrace::default();
    for t in 1..=iterations {
        let start = Instant::now();
        let f: Vec<f64> = u.iter().zip(&inst.a).map(|(&x, &c)| f_den.value(x, c)).collect();
        let b_t = u
            .iter()
            .zip(&inst.a)
            .map(|(&x, &c)| f_den.derivative(x, c))
            .sum::<f64>()
            / n as f64;
        let yf = y.transpose() * crate::model::to_col(&f);
        let x: Vec<f64> = (0..n).map(|j| yf[j] - b_t * g_prev[j]).collect();
        check_finite(&x, t)?;
        let s = se[t];
        let g_den = ScaledDenoiser::new(prior_v, s.mu_v, s.sigma_v);
        let g: Vec<f64> = x.iter().zip(&inst.b).map(|(&x, &c)| g_den.value(x, c)).collect();
        let c_t = x
            .iter()
            .zip(&inst.b)
            .map(|(&x, &c)| g_den.derivative(x, c))
            .sum::<f64>()
            / n as f64;
        let yg = y * crate::model::to_col(&g);
        let u_next: Vec<f64> = (0..m).map(|i| yg[i] - c_t * f[i]).collect();
        check_finite(&u_next, t)?;
        u = u_next;
        g_prev = g;
        f_den = ScaledDenoiser::new(prior_u, s.mu_u, s.sigma_u);
        let u_hat: Vec<f64> = u.iter().zip(&inst.a).map(|(&x, &c)| f_den.value(x, c)).collect();
        let v_hat = &g_prev;
        trace.rows.push(TraceRow {
            t,
            cos2_u: cos2(&u_hat, &inst.u_star),
            cos2_v: cos2(v_hat, &inst.v_star),
            mse_u: mse(&u_hat, &inst.u_star),
            mse_v: mse(v_hat, &inst.v_star),
            align_u: inner(&u, &inst.u_star) / m as f64,
            power_u: inner(&u, &u) / m as f64,
            align_v: inner(&x, &inst.v_star) / n as f64,
            power_v: inner(&x, &x) / n as f64,
            pred_w1: s.w_u,
            pred_w2: s.w_v,
            pred_mmse_u: mmse(prior_u, s.w_u),
            pred_mmse_v: mmse(prior_v, s.w_v),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(BaselineResult {
        method: Baseline::Amp,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_instance, thin_svd, InstanceSpec, NoiseModel, SpectrumSampling};
    use crate::scalar_channel::Prior;
    use crate::state_evolution::gaussian_fixed_point;

    fn rad() -> PriorModel {
        PriorModel::new(Prior::Rademacher, 0.04).unwrap()
    }

    fn instance(m: usize, n: usize, theta: f64, seed: u64) -> ProblemInstance {
        make_instance(
            &InstanceSpec {
                m,
                n,
                theta,
                prior_u: rad(),
                prior_v: rad(),
                noise: NoiseModel::Gaussian,
                sampling: SpectrumSampling::Iid,
                retain_noise: false,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn amp_recursion_converges_to_the_fixed_point() {
        let se = gaussian_amp_se(2.0, 0.5, rad(), rad(), 100);
        let fp = gaussian_fixed_point(2.0, 0.5, rad(), rad()).unwrap();
        let last = se.last().unwrap();
        assert!((last.w_u - fp.w1).abs() < 1e-8, "{} vs {}", last.w_u, fp.w1);
        assert!((last.w_v - fp.w2).abs() < 1e-8, "{} vs {}", last.w_v, fp.w2);
    }

    #[test]
    fn amp_recursion_first_step() {
        let se = gaussian_amp_se(2.0, 0.5, rad(), rad(), 1);
        let q = 1.0 - mmse(rad(), 0.0);
        let s = se[1];
        assert!((s.mu_v - 2.0 * 0.5f64.sqrt() * q).abs() < 1e-14);
        assert!((s.sigma_v - (0.5 * q).sqrt()).abs() < 1e-14);
        let snr = 4.0 * q;
        assert!((s.w_v - snr / (1.0 + snr)).abs() < 1e-12);
    }

    #[test]
    fn pca_is_sign_aligned_and_normalized() {
        let inst = instance(200, 400, 2.0, 7);
        let svd = thin_svd(&inst.y).unwrap();
        let r = pca_estimate(&svd, &inst);
        let row = r.trace.rows[0];
        assert_eq!(r.method, Baseline::Pca);
        assert!(row.align_u > 0.0 && row.align_v > 0.0);
        assert!((0.0..=1.0).contains(&row.cos2_u));
        // mse of a unit-power estimate is 2 − 2·align
        assert!((row.mse_u - (2.0 - 2.0 * row.align_u)).abs() < 1e-10);
        let strong = instance(100, 200, 60.0, 7);
        let s = pca_estimate(&thin_svd(&strong.y).unwrap(), &strong).trace.rows[0];
        assert!(s.cos2_u > 0.99 && s.cos2_v > 0.99);
    }

    #[test]
    fn amp_tracks_its_recursion() {
        let t = 6;
        let mut acc = vec![(0.0, 0.0); t];
        let seeds = 4;
        for seed in 0..seeds {
            let inst = instance(400, 800, 2.0, seed);
            let r = gaussian_amp_run(&inst, rad(), rad(), t).unwrap();
            assert_eq!(r.iterations(), t);
            for (a, row) in acc.iter_mut().zip(&r.trace.rows) {
                a.0 += row.cos2_u / seeds as f64;
                a.1 += row.cos2_v / seeds as f64;
            }
        }
        let se = gaussian_amp_se(2.0, 0.5, rad(), rad(), t);
        for (k, a) in acc.iter().enumerate() {
            let s = se[k + 1];
            assert!((a.0 - (1.0 - mmse(rad(), s.w_u))).abs() < 0.05, "t = {}: {a:?}", k + 1);
            assert!((a.1 - (1.0 - mmse(rad(), s.w_v))).abs() < 0.05, "t = {}: {a:?}", k + 1);
        }
    }

    #[test]
    fn tags() {
        assert_eq!(Baseline::Pca.tag(), "pca");
        assert_eq!(Baseline::Amp.tag(), "amp");
    }
}
