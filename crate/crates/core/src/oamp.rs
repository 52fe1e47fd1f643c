//! OAMP iterations: spectral application of matrix denoisers, the optimal
//! trace-free denoisers, the optimal iteration and the general template.
//!
//! Matrix denoisers are scalar functions of a [`SpectralPoint`], so the same
//! object is integrated against the limiting measures by state evolution and
//! applied to empirical eigenvalues here. Empirical outliers are evaluated
//! through the atom branch; bulk eigenvalues are clamped into the support.

use std::sync::Arc;
use std::time::Instant;

use faer::Mat;

use crate::error::{Error, Result};
use crate::model::{from_col, to_col, ProblemInstance, SvdCache};
use crate::scalar_channel::{posterior_mean, PriorModel, ScalarChannel};
use crate::spectra::{AtomBranch, InducedMeasures, Measure, SpectralAtom, SpectralPoint};
use crate::state_evolution::SeState;

/// Values of `P*, P̃*, Q*, Q̃*` at one spectral point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolvents {
    pub p: f64,
    pub p_tilde: f64,
    pub q: f64,
    pub q_tilde: f64,
}

/// The optimal trace-free matrix denoisers for one iteration.
#[derive(Debug, Clone)]
pub struct DenoiserSet {
    measures: Arc<InducedMeasures>,
    rho1: f64,
    rho2: f64,
    p_norm: f64,
    q_norm: f64,
}

impl DenoiserSet {
    pub fn new(measures: Arc<InducedMeasures>, rho1: f64, rho2: f64) -> Result<Self> {
        let theta = measures.shrinkage().theta();
        let invalid = |reason: String| Error::InvalidRegime {
            theta,
            rho1,
            rho2,
            reason,
        };
        if !(rho1 > 0.0 && rho2 > 0.0 && rho1.is_finite() && rho2.is_finite()) {
            return Err(invalid("rho parameters must be positive and finite".into()));
        }
        let mut set = DenoiserSet {
            measures,
            rho1,
            rho2,
            p_norm: 1.0,
            q_norm: 1.0,
        };
        let (nodes, _) = set.measures.spectrum().quadrature();
        for (l, p) in nodes.iter().zip(set.measures.shrinkage().node_values()) {
            let d = set.d_bulk(*l, p.phi1, p.phi2, p.phi3);
            if !(d > 0.0) {
                return Err(invalid(format!("D(λ) = {d} is not positive at λ = {l}")));
            }
        }
        let delta = set.measures.spectrum().delta();
        let p_norm = set.measures.integrate(Measure::Mu, |_, pt| set.resolvents(pt).p);
        let q_mu = set.measures.integrate(Measure::Mu, |_, pt| set.resolvents(pt).q);
        let q_norm = delta * q_mu + (1.0 - delta) * set.q_at_zero();
        for (name, v) in [("<P*>_mu", p_norm), ("<Q*>_mu~", q_norm)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("normalizer {name} = {v}")));
            }
        }
        set.p_norm = p_norm;
        set.q_norm = q_norm;
        Ok(set)
    }

    pub fn rho(&self) -> (f64, f64) {
        (self.rho1, self.rho2)
    }

    pub fn measures(&self) -> &Arc<InducedMeasures> {
        &self.measures
    }

    /// `⟨P*⟩_μ`
    pub fn p_norm(&self) -> f64 {
        self.p_norm
    }

    /// `⟨Q*⟩_μ̃`
    pub fn q_norm(&self) -> f64 {
        self.q_norm
    }

    fn d_bulk(&self, lambda: f64, phi1: f64, phi2: f64, phi3: f64) -> f64 {
        let delta = self.measures.spectrum().delta();
        (self.rho1 * phi1 + 1.0) * (self.rho2 * phi2 + delta) * lambda
            - self.rho1 * self.rho2 * phi3 * phi3
    }

    /// `D(λ)` at a bulk point.
    pub fn d(&self, lambda: f64) -> Result<f64> {
        let p = self.measures.shrinkage().phi(lambda)?;
        Ok(self.d_bulk(lambda, p.phi1, p.phi2, p.phi3))
    }

    /// Continuous extension `Q*(0) = δ/(ρ₂φ₂(0) + δ)`.
    pub fn q_at_zero(&self) -> f64 {
        let delta = self.measures.spectrum().delta();
        if delta >= 1.0 {
            return 0.0;
        }
        delta / (self.rho2 * self.measures.shrinkage().phi2_at_zero() + delta)
    }

    pub fn resolvents(&self, point: SpectralPoint) -> Resolvents {
        let delta = self.measures.spectrum().delta();
        let sd = delta.sqrt();
        let (r1, r2) = (self.rho1, self.rho2);
        match point {
            SpectralPoint::Bulk { lambda, phi } => {
                let d = self.d_bulk(lambda, phi.phi1, phi.phi2, phi.phi3);
                Resolvents {
                    p: lambda * (r2 * phi.phi2 + delta) / d,
                    p_tilde: sd * r2 * phi.phi3 / d,
                    q: delta * lambda * (r1 * phi.phi1 + 1.0) / d,
                    q_tilde: sd * r1 * phi.phi3 / d,
                }
            }
            SpectralPoint::Atom(atom) => atom_resolvents(atom, delta, r1, r2),
            SpectralPoint::NullSpace => Resolvents {
                p: 0.0,
                p_tilde: 0.0,
                q: self.q_at_zero(),
                q_tilde: 0.0,
            },
        }
    }

    /// `F*` at a spectral point.
    pub fn f(&self, point: SpectralPoint) -> f64 {
        (1.0 + 1.0 / self.rho1) * (1.0 - self.resolvents(point).p / self.p_norm)
    }

    /// `F̃*`
    pub fn f_tilde(&self, point: SpectralPoint) -> f64 {
        (1.0 + 1.0 / self.rho2) * self.resolvents(point).p_tilde / self.p_norm
    }

    /// `G*`
    pub fn g(&self, point: SpectralPoint) -> f64 {
        (1.0 + 1.0 / self.rho2) * (1.0 - self.resolvents(point).q / self.q_norm)
    }

    /// `G̃*`
    pub fn g_tilde(&self, point: SpectralPoint) -> f64 {
        (1.0 + 1.0 / self.rho1) * self.resolvents(point).q_tilde / self.q_norm
    }
}

/// Limits of `P*, P̃*, Q*, Q̃*` at an outlier, where `φᵢ` carry point masses
/// `mᵢ` (in `λ`-coordinates) with `m₁m₂λ* = m₃²`.
fn atom_resolvents(atom: &SpectralAtom, delta: f64, r1: f64, r2: f64) -> Resolvents {
    let (m1, m2, m3) = atom.phi_weights(delta);
    let e = r1 * m1 * delta + r2 * m2;
    let l = atom.location;
    let sd = delta.sqrt();
    Resolvents {
        p: r2 * m2 / e,
        p_tilde: sd * r2 * m3 / (e * l),
        q: delta * r1 * m1 / e,
        q_tilde: sd * r1 * m3 / (e * l),
    }
}

/// Owned counterpart of [`SpectralPoint`] attached to an empirical eigenvalue.
#[derive(Debug, Clone, Copy)]
enum MappedPoint {
    Bulk { lambda: f64, phi: crate::spectra::Shrinkage },
    Atom(usize),
}

/// Empirical eigenvalues of `YYᵀ` matched to points of the limiting model.
#[derive(Debug, Clone)]
pub struct SpectralMap {
    measures: Arc<InducedMeasures>,
    points: Vec<MappedPoint>,
    empirical: Vec<f64>,
}

impl SpectralMap {
    /// The `k`-th largest eigenvalue above the bulk is tied to the `k`-th
    /// atom above the bulk, the smallest ones below the bulk to the atoms
    /// below it; all others are clamped into the support.
    pub fn new(measures: Arc<InducedMeasures>, svd: &SvdCache) -> Result<Self> {
        let (lo, hi) = measures.spectrum().support();
        let m = svd.lambda.len();
        let mut points: Vec<Option<MappedPoint>> = vec![None; m];
        let atoms = measures.atoms();
        let upper: Vec<usize> = (0..atoms.len())
            .filter(|&k| atoms[k].branch == AtomBranch::AboveBulk)
            .collect();
        let lower: Vec<usize> = (0..atoms.len())
            .filter(|&k| atoms[k].branch == AtomBranch::BelowBulk)
            .rev()
            .collect();
        for (i, &k) in upper.iter().enumerate() {
            if i < m && svd.lambda[i] > hi {
                points[i] = Some(MappedPoint::Atom(k));
            }
        }
        for (j, &k) in lower.iter().enumerate() {
            if j < m && svd.lambda[m - 1 - j] < lo && points[m - 1 - j].is_none() {
                points[m - 1 - j] = Some(MappedPoint::Atom(k));
            }
        }
        let shrink = measures.shrinkage();
        let points = points
            .into_iter()
            .zip(&svd.lambda)
            .map(|(p, &l)| match p {
                Some(p) => Ok(p),
                None => {
                    let lambda = l.clamp(lo, hi);
                    Ok(MappedPoint::Bulk {
                        lambda,
                        phi: shrink.phi(lambda)?,
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SpectralMap {
            measures,
            points,
            empirical: svd.lambda.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> SpectralPoint<'_> {
        match self.points[i] {
            MappedPoint::Bulk { lambda, phi } => SpectralPoint::Bulk { lambda, phi },
            MappedPoint::Atom(k) => SpectralPoint::Atom(&self.measures.atoms()[k]),
        }
    }

    /// Evaluate `h` at every empirical eigenvalue, rejecting non-finite values.
    pub fn evaluate(&self, h: impl Fn(SpectralPoint) -> f64) -> Result<Vec<f64>> {
        (0..self.len())
            .map(|i| {
                let v = h(self.point(i));
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFiniteDenoiser(self.empirical[i]))
                }
            })
            .collect()
    }

    /// `h` at the null space of `YᵀY`.
    pub fn null_value(&self, h: impl Fn(SpectralPoint) -> f64) -> Result<f64> {
        let v = h(SpectralPoint::NullSpace);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteDenoiser(0.0))
        }
    }
}

/// Which Gram matrix a spectral function acts through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramSide {
    /// `h(YYᵀ)` on `ℝᴹ`
    Left,
    /// `h(YᵀY)` on `ℝᴺ`
    Right,
}

/// Matrix–vector actions of spectral functions through a cached SVD.
#[derive(Debug, Clone, Copy)]
pub struct SpectralOperator<'a> {
    svd: &'a SvdCache,
}

impl<'a> SpectralOperator<'a> {
    pub fn new(svd: &'a SvdCache) -> Self {
        SpectralOperator { svd }
    }

    /// `U·diag(h)·Uᵀx`
    pub fn left(&self, h: &[f64], x: &[f64]) -> Vec<f64> {
        let c = self.svd.u.transpose() * to_col(x);
        let scaled = faer::Col::from_fn(c.nrows(), |i| h[i] * c[i]);
        from_col(&(&self.svd.u * scaled))
    }

    /// `h₀·y + V·diag(h − h₀)·Vᵀy`
    pub fn right(&self, h: &[f64], h0: f64, y: &[f64]) -> Vec<f64> {
        let c = self.svd.v.transpose() * to_col(y);
        let scaled = faer::Col::from_fn(c.nrows(), |i| (h[i] - h0) * c[i]);
        let mut out = from_col(&(&self.svd.v * scaled));
        for (o, yi) in out.iter_mut().zip(y) {
            *o += h0 * yi;
        }
        out
    }

    /// `h(YYᵀ)·Y·g = U·diag(h·σ)·Vᵀg`
    pub fn left_cross(&self, h: &[f64], g: &[f64]) -> Vec<f64> {
        let c = self.svd.v.transpose() * to_col(g);
        let scaled = faer::Col::from_fn(c.nrows(), |i| h[i] * self.svd.sigma[i] * c[i]);
        from_col(&(&self.svd.u * scaled))
    }

    /// `h(YᵀY)·Yᵀ·f = V·diag(h·σ)·Uᵀf`
    pub fn right_cross(&self, h: &[f64], f: &[f64]) -> Vec<f64> {
        let c = self.svd.u.transpose() * to_col(f);
        let scaled = faer::Col::from_fn(c.nrows(), |i| h[i] * self.svd.sigma[i] * c[i]);
        from_col(&(&self.svd.v * scaled))
    }
}

/// Apply a spectral function of `YYᵀ` (left) or `YᵀY` (right) to a vector.
///
/// `h` is evaluated at the empirical squared singular values; `h_at_zero` is
/// used on the null space of `YᵀY`.
pub fn apply_spectral(
    svd: &SvdCache,
    h: impl Fn(f64) -> f64,
    side: GramSide,
    h_at_zero: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    let values: Vec<f64> = svd
        .lambda
        .iter()
        .map(|&l| {
            let v = h(l);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFiniteDenoiser(l))
            }
        })
        .collect::<Result<_>>()?;
    let op = SpectralOperator::new(svd);
    Ok(match side {
        GramSide::Left => op.left(&values, x),
        GramSide::Right => op.right(&values, h_at_zero, x),
    })
}

/// One row of an iteration trace.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TraceRow {
    pub t: usize,
    pub cos2_u: f64,
    pub cos2_v: f64,
    pub mse_u: f64,
    pub mse_v: f64,
    /// `⟨u_t, u*⟩/M`
    pub align_u: f64,
    /// `‖u_t‖²/M`
    pub power_u: f64,
    pub align_v: f64,
    pub power_v: f64,
    pub pred_w1: f64,
    pub pred_w2: f64,
    pub pred_mmse_u: f64,
    pub pred_mmse_v: f64,
    pub seconds: f64,
}

/// Per-iteration empirical and predicted quantities for one run.
#[derive(Debug, Clone, Default)]
pub struct IterationTrace {
    pub rows: Vec<TraceRow>,
}

/// Squared cosine similarity; zero if either vector vanishes.
pub fn cos2(x: &[f64], y: &[f64]) -> f64 {
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        xy += a * b;
        xx += a * a;
        yy += b * b;
    }
    if xx == 0.0 || yy == 0.0 {
        0.0
    } else {
        (xy * xy / (xx * yy)).min(1.0)
    }
}

fn mean_sq_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64
}

fn inner(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn check_finite(x: &[f64], t: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence(t))
    }
}

/// Everything the optimal iteration needs that does not depend on the draw.
#[derive(Debug, Clone)]
pub struct OptimalPlan {
    pub measures: Arc<InducedMeasures>,
    pub prior_u: PriorModel,
    pub prior_v: PriorModel,
    /// `se[0]` is the initial state, `se[t]` iteration `t`.
    pub se: Vec<SeState>,
    pub denoisers: Vec<DenoiserSet>,
}

impl OptimalPlan {
    pub fn iterations(&self) -> usize {
        self.se.len() - 1
    }

    /// The optimal iteration expressed as steps of the general template,
    /// with the `1/√w` normalizations folded into the matrix denoisers.
    pub fn general_steps(&self) -> Result<Vec<OampStep>> {
        (1..=self.iterations())
            .map(|t| {
                let (prev, cur) = (self.se[t - 1], self.se[t]);
                let (su, sv) = (1.0 / cur.w1.sqrt(), 1.0 / cur.w2.sqrt());
                let den = Arc::new(self.denoisers[t - 1].clone());
                let ch_u = ScalarChannel::new(self.prior_u, prev.w1)?;
                let ch_v = ScalarChannel::new(self.prior_v, prev.w2)?;
                let (pu, pv) = (self.prior_u, self.prior_v);
                let (d1, d2, d3, d4) = (den.clone(), den.clone(), den.clone(), den);
                Ok(OampStep {
                    f_matrix: Arc::new(move |p| su * d1.f(p)),
                    f_tilde: Arc::new(move |p| su * d2.f_tilde(p)),
                    g_matrix: Arc::new(move |p| sv * d3.g(p)),
                    g_tilde: Arc::new(move |p| sv * d4.g_tilde(p)),
                    denoise_u: Arc::new(move |x, c| ch_u.dmmse(x, c)),
                    denoise_v: Arc::new(move |x, c| ch_v.dmmse(x, c)),
                    post_u: Arc::new(move |x, c| posterior_mean(pu, cur.w1, x, c)),
                    post_v: Arc::new(move |x, c| posterior_mean(pv, cur.w2, x, c)),
                })
            })
            .collect()
    }
}

/// Observer receiving `(t, u_t, v_t)` after each iteration.
pub type IterateObserver<'a> = dyn FnMut(usize, &[f64], &[f64]) + 'a;

/// The optimal OAMP iteration with precomputed state evolution parameters.
pub fn optimal_oamp_run(inst: &ProblemInstance, svd: &SvdCache, plan: &OptimalPlan) -> Result<IterationTrace> {
    optimal_oamp_run_observed(inst, svd, plan, &mut |_, _, _| {})
}

pub fn optimal_oamp_run_observed(
    inst: &ProblemInstance,
    svd: &SvdCache,
    plan: &OptimalPlan,
    observer: &mut IterateObserver,
) -> Result<IterationTrace> {
    let map = SpectralMap::new(plan.measures.clone(), svd)?;
    let op = SpectralOperator::new(svd);
    let mut u = vec![0.0; inst.m];
    let mut v = vec![0.0; inst.n];
    let mut trace = IterationTrace::default();
    for t in 1..=plan.iterations() {
        let start = Instant::now();
        let prev = &plan.se[t - 1];
        let cur = &plan.se[t];
        let den = &plan.denoisers[t - 1];
        let ch_u = ScalarChannel::new(plan.prior_u, prev.w1)?;
        let ch_v = ScalarChannel::new(plan.prior_v, prev.w2)?;
        let f: Vec<f64> = u.iter().zip(&inst.a).map(|(&x, &c)| ch_u.dmmse(x, c)).collect();
        let g: Vec<f64> = v.iter().zip(&inst.b).map(|(&x, &c)| ch_v.dmmse(x, c)).collect();
        let hf = map.evaluate(|p| den.f(p))?;
        let hft = map.evaluate(|p| den.f_tilde(p))?;
        let hg = map.evaluate(|p| den.g(p))?;
        let hgt = map.evaluate(|p| den.g_tilde(p))?;
        let g0 = map.null_value(|p| den.g(p))?;
        let (su, sv) = (1.0 / cur.w1.sqrt(), 1.0 / cur.w2.sqrt());
        let u_next: Vec<f64> = op
            .left(&hf, &f)
            .iter()
            .zip(op.left_cross(&hft, &g))
            .map(|(a, b)| su * (a + b))
            .collect();
        let v_next: Vec<f64> = op
            .right(&hg, g0, &g)
            .iter()
            .zip(op.right_cross(&hgt, &f))
            .map(|(a, b)| sv * (a + b))
            .collect();
        check_finite(&u_next, t)?;
        check_finite(&v_next, t)?;
        u = u_next;
        v = v_next;
        observer(t, &u, &v);
        let u_hat: Vec<f64> = u
            .iter()
            .zip(&inst.a)
            .map(|(&x, &c)| posterior_mean(plan.prior_u, cur.w1, x, c))
            .collect();
        let v_hat: Vec<f64> = v
            .iter()
            .zip(&inst.b)
            .map(|(&x, &c)| posterior_mean(plan.prior_v, cur.w2, x, c))
            .collect();
        trace.rows.push(row(inst, t, &u, &v, &u_hat, &v_hat, cur, start));
    }
    Ok(trace)
}

#[allow(clippy::too_many_arguments)]
fn row(
    inst: &ProblemInstance,
    t: usize,
    u: &[f64],
    v: &[f64],
    u_hat: &[f64],
    v_hat: &[f64],
    se: &SeState,
    start: Instant,
) -> TraceRow {
    let (m, n) = (inst.m as f64, inst.n as f64);
    TraceRow {
        t,
        cos2_u: cos2(u_hat, &inst.u_star),
        cos2_v: cos2(v_hat, &inst.v_star),
        mse_u: mean_sq_diff(u_hat, &inst.u_star),
        mse_v: mean_sq_diff(v_hat, &inst.v_star),
        align_u: inner(u, &inst.u_star) / m,
        power_u: inner(u, u) / m,
        align_v: inner(v, &inst.v_star) / n,
        power_v: inner(v, v) / n,
        pred_w1: se.w1,
        pred_w2: se.w2,
        pred_mmse_u: se.mmse_u,
        pred_mmse_v: se.mmse_v,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// A spectral function usable both empirically and by state evolution.
pub type SpectralFn = Arc<dyn Fn(SpectralPoint) -> f64 + Send + Sync>;
/// An entrywise function of an iterate entry and its side information.
pub type IterateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// One iteration of the general template.
///
/// Iterate denoisers act entrywise on the previous iterate and the side
/// information; the iterate before the first step is zero.
#[derive(Clone)]
pub struct OampStep {
    pub f_matrix: SpectralFn,
    pub f_tilde: SpectralFn,
    pub g_matrix: SpectralFn,
    pub g_tilde: SpectralFn,
    pub denoise_u: IterateFn,
    pub denoise_v: IterateFn,
    pub post_u: IterateFn,
    pub post_v: IterateFn,
}

impl std::fmt::Debug for OampStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("OampStep { .. }")
    }
}

/// A registered sequence of OAMP steps with its state evolution.
#[derive(Debug, Clone)]
pub struct GeneralOampSpec {
    measures: Arc<InducedMeasures>,
    steps: Vec<OampStep>,
    se: Vec<SeState>,
}

impl GeneralOampSpec {
    /// Check the trace-free and divergence-free conditions and run the
    /// general state evolution alongside.
    pub fn register(
        measures: Arc<InducedMeasures>,
        prior_u: PriorModel,
        prior_v: PriorModel,
        steps: Vec<OampStep>,
    ) -> Result<Self> {
        let se = crate::state_evolution::general_se_run(&measures, prior_u, prior_v, &steps)?;
        for (t, step) in steps.iter().enumerate() {
            let fu = measures.integrate(Measure::Mu, |_, p| (step.f_matrix)(p));
            let gv = measures.integrate(Measure::MuTilde, |_, p| (step.g_matrix)(p));
            if fu.abs() > 1e-8 || gv.abs() > 1e-8 {
                return Err(Error::Registration(format!(
                    "step {}: matrix denoisers not trace-free (<F>_mu = {fu:e}, <G>_mu~ = {gv:e})",
                    t + 1
                )));
            }
            let prev = &se[t];
            let div_u = crate::state_evolution::stein_divergence(prior_u, prev.law_u(), &*step.denoise_u);
            let div_v = crate::state_evolution::stein_divergence(prior_v, prev.law_v(), &*step.denoise_v);
            if div_u.abs() > 1e-3 || div_v.abs() > 1e-3 {
                return Err(Error::Registration(format!(
                    "step {}: iterate denoisers not divergence-free (E f' = {div_u:e}, E g' = {div_v:e})",
                    t + 1
                )));
            }
        }
        Ok(GeneralOampSpec { measures, steps, se })
    }

    pub fn steps(&self) -> &[OampStep] {
        &self.steps
    }

    /// `se[0]` is the side-information law; `se[t]` the law after step `t`.
    pub fn state_evolution(&self) -> &[SeState] {
        &self.se
    }

    pub fn measures(&self) -> &Arc<InducedMeasures> {
        &self.measures
    }
}

/// Run the general template. Predicted `w` columns of the trace hold
/// `μ²/(μ² + σ²)` of each channel and `mmse` columns stay `NaN`.
pub fn general_oamp_run(inst: &ProblemInstance, svd: &SvdCache, spec: &GeneralOampSpec) -> Result<IterationTrace> {
    general_oamp_run_observed(inst, svd, spec, &mut |_, _, _| {})
}

pub fn general_oamp_run_observed(
    inst: &ProblemInstance,
    svd: &SvdCache,
    spec: &GeneralOampSpec,
    observer: &mut IterateObserver,
) -> Result<IterationTrace> {
    let map = SpectralMap::new(spec.measures.clone(), svd)?;
    let op = SpectralOperator::new(svd);
    let mut u = vec![0.0; inst.m];
    let mut v = vec![0.0; inst.n];
    let mut trace = IterationTrace::default();
    for (i, step) in spec.steps.iter().enumerate() {
        let t = i + 1;
        let start = Instant::now();
        let f: Vec<f64> = u.iter().zip(&inst.a).map(|(&x, &c)| (step.denoise_u)(x, c)).collect();
        let g: Vec<f64> = v.iter().zip(&inst.b).map(|(&x, &c)| (step.denoise_v)(x, c)).collect();
        let hf = map.evaluate(|p| (step.f_matrix)(p))?;
        let hft = map.evaluate(|p| (step.f_tilde)(p))?;
        let hg = map.evaluate(|p| (step.g_matrix)(p))?;
        let hgt = map.evaluate(|p| (step.g_tilde)(p))?;
        let g0 = map.null_value(|p| (step.g_matrix)(p))?;
        let u_next: Vec<f64> = op
            .left(&hf, &f)
            .iter()
            .zip(op.left_cross(&hft, &g))
            .map(|(a, b)| a + b)
            .collect();
        let v_next: Vec<f64> = op
            .right(&hg, g0, &g)
            .iter()
            .zip(op.right_cross(&hgt, &f))
            .map(|(a, b)| a + b)
            .collect();
        check_finite(&u_next, t)?;
        check_finite(&v_next, t)?;
        u = u_next;
        v = v_next;
        observer(t, &u, &v);
        let u_hat: Vec<f64> = u.iter().zip(&inst.a).map(|(&x, &c)| (step.post_u)(x, c)).collect();
        let v_hat: Vec<f64> = v.iter().zip(&inst.b).map(|(&x, &c)| (step.post_v)(x, c)).collect();
        trace.rows.push(row(inst, t, &u, &v, &u_hat, &v_hat, &spec.se[t], start));
    }
    Ok(trace)
}

/// Matrix for tests and diagnostics: `h(YYᵀ)` formed densely.
pub fn dense_left(svd: &SvdCache, h: &[f64]) -> Mat<f64> {
    let m = svd.m();
    let uh = Mat::from_fn(m, m, |i, j| svd.u[(i, j)] * h[j]);
    &uh * svd.u.transpose()
}
