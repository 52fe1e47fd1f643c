//! Spectral transforms of the limiting noise law and the signal–eigenspace
//! measures they induce.
//!
//! A [`SpectrumModel`] describes the limiting eigenvalue law `μ` of `WWᵀ`
//! together with the aspect ratio `δ = M/N`. From it we evaluate the
//! Stieltjes, Hilbert and rectangular `C` transforms, the three shrinkage
//! functions `φ₁, φ₂, φ₃` ([`ShrinkageSet`]), and the limits `ν₁, ν₂, ν₃` of
//! the signal-weighted spectral measures of `Y` ([`InducedMeasures`]).
//!
//! All density integrals use a Gauss–Legendre rule composed with the cosine
//! map `λ = c − h·cos t`, which absorbs square-root edge behaviour of the
//! density (and the `1/√` edge singularities of `μφ₁` at critical SNR).

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

/// Default number of quadrature nodes over the support.
pub const DEFAULT_NODES: usize = 2000;

/// Shape of the limiting spectral law of `WWᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumKind {
    /// Marchenko–Pastur law of `WWᵀ` for `W` with i.i.d. `N(0, 1/N)` entries.
    MarchenkoPastur,
    /// `Beta(a, b)` rescaled to `[lo, hi]`.
    ShiftedBeta { a: f64, b: f64, lo: f64, hi: f64 },
    /// Piecewise-linear density through `(grid[i], density[i])`, renormalized
    /// to unit mass. A single grid point denotes a point mass.
    Tabulated { grid: Vec<f64>, density: Vec<f64> },
}

/// Limiting noise spectrum `μ` with its aspect ratio and quadrature.
#[derive(Debug, Clone)]
pub struct SpectrumModel {
    kind: SpectrumKind,
    delta: f64,
    lo: f64,
    hi: f64,
    /// density normalizer (Beta function or tabulated mass)
    norm: f64,
    nodes: Vec<f64>,
    /// `dλ` weights at the nodes
    dl: Vec<f64>,
    density: Vec<f64>,
    /// `μ(λ_i)·dλ_i`
    mass: Vec<f64>,
}

impl SpectrumModel {
    pub fn marchenko_pastur(delta: f64) -> Result<Self> {
        check_delta(delta)?;
        let s = delta.sqrt();
        Self::build(
            SpectrumKind::MarchenkoPastur,
            delta,
            (1.0 - s).powi(2),
            (1.0 + s).powi(2),
            1.0,
            DEFAULT_NODES,
        )
    }

    pub fn shifted_beta(a: f64, b: f64, lo: f64, hi: f64, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        if !(a >= 1.0 && b >= 1.0) {
            return Err(Error::InvalidSpectrum(format!(
                "beta shape parameters must be >= 1 for a bounded density, got ({a}, {b})"
            )));
        }
        if !(lo >= 0.0 && hi > lo) {
            return Err(Error::InvalidSpectrum(format!(
                "support [{lo}, {hi}] must be a non-empty interval of R+"
            )));
        }
        let ln_beta = statrs::function::beta::ln_beta(a, b);
        Self::build(
            SpectrumKind::ShiftedBeta { a, b, lo, hi },
            delta,
            lo,
            hi,
            ln_beta.exp() * (hi - lo),
            DEFAULT_NODES,
        )
    }

    pub fn tabulated(grid: Vec<f64>, density: Vec<f64>, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        if grid.is_empty() || grid.len() != density.len() {
            return Err(Error::InvalidSpectrum(
                "grid and density must be non-empty and of equal length".into(),
            ));
        }
        if grid[0] < 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSpectrum(
                "grid must be strictly increasing on R+".into(),
            ));
        }
        if density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidSpectrum("density must be finite and >= 0".into()));
        }
        let lo = grid[0];
        let hi = *grid.last().unwrap();
        let norm = if grid.len() == 1 {
            1.0
        } else {
            grid.windows(2)
                .zip(density.windows(2))
                .map(|(g, d)| 0.5 * (g[1] - g[0]) * (d[0] + d[1]))
                .sum()
        };
        if !(norm > 0.0) {
            return Err(Error::InvalidSpectrum("density has zero mass".into()));
        }
        Self::build(
            SpectrumKind::Tabulated { grid, density },
            delta,
            lo,
            hi,
            norm,
            DEFAULT_NODES,
        )
    }

    /// Degenerate law with all mass at `at`.
    pub fn point_mass(at: f64, delta: f64) -> Result<Self> {
        Self::tabulated(vec![at], vec![1.0], delta)
    }

    /// Rebuild the quadrature with `n` nodes.
    pub fn with_nodes(self, n: usize) -> Result<Self> {
        let (lo, hi, norm) = (self.lo, self.hi, self.norm);
        Self::build(self.kind, self.delta, lo, hi, norm, n)
    }

    fn build(
        kind: SpectrumKind,
        delta: f64,
        lo: f64,
        hi: f64,
        norm: f64,
        n: usize,
    ) -> Result<Self> {
        let mut model = SpectrumModel {
            kind,
            delta,
            lo,
            hi,
            norm,
            nodes: Vec::new(),
            dl: Vec::new(),
            density: Vec::new(),
            mass: Vec::new(),
        };
        if model.is_point_mass() {
            model.nodes = vec![lo];
            model.dl = vec![0.0];
            model.density = vec![0.0];
            model.mass = vec![1.0];
            return Ok(model);
        }
        let (x, w) = gauss_legendre(n);
        let c = 0.5 * (lo + hi);
        let h = 0.5 * (hi - lo);
        for (xi, wi) in x.iter().zip(&w) {
            let t = 0.5 * PI * (xi + 1.0);
            let lambda = c - h * t.cos();
            let dl = 0.5 * PI * wi * h * t.sin();
            let d = model.density(lambda);
            model.nodes.push(lambda);
            model.dl.push(dl);
            model.density.push(d);
            model.mass.push(d * dl);
        }
        // Piecewise-linear tables are only accurate to O(n⁻²) under the rule;
        // renormalize so the quadrature measure is exactly a probability.
        if matches!(model.kind, SpectrumKind::Tabulated { .. }) {
            let total: f64 = model.mass.iter().sum();
            model.norm *= total;
            for (d, m) in model.density.iter_mut().zip(model.mass.iter_mut()) {
                *d /= total;
                *m /= total;
            }
        }
        Ok(model)
    }

    pub fn kind(&self) -> &SpectrumKind {
        &self.kind
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Closed support `[λ_min, λ_max]`.
    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn is_point_mass(&self) -> bool {
        matches!(&self.kind, SpectrumKind::Tabulated { grid, .. } if grid.len() == 1)
    }

    /// Quadrature nodes and their `μ`-masses.
    pub fn quadrature(&self) -> (&[f64], &[f64]) {
        (&self.nodes, &self.mass)
    }

    /// Short human-readable descriptor, used in file headers.
    pub fn descriptor(&self) -> String {
        match &self.kind {
            SpectrumKind::MarchenkoPastur => format!("mp(delta={})", self.delta),
            SpectrumKind::ShiftedBeta { a, b, lo, hi } => {
                format!("beta({a},{b},{lo},{hi};delta={})", self.delta)
            }
            SpectrumKind::Tabulated { grid, .. } => {
                format!("tabulated({} points;delta={})", grid.len(), self.delta)
            }
        }
    }

    /// Density `μ(λ)`; zero outside the support and for point masses.
    pub fn density(&self, lambda: f64) -> f64 {
        if !(lambda >= self.lo && lambda <= self.hi) {
            return 0.0;
        }
        match &self.kind {
            SpectrumKind::MarchenkoPastur => {
                if lambda <= 0.0 {
                    return 0.0;
                }
                let r = (self.hi - lambda) * (lambda - self.lo);
                r.max(0.0).sqrt() / (2.0 * PI * self.delta * lambda)
            }
            SpectrumKind::ShiftedBeta { a, b, lo, hi } => {
                let t = (lambda - lo) / (hi - lo);
                t.powf(a - 1.0) * (1.0 - t).powf(b - 1.0) / self.norm
            }
            SpectrumKind::Tabulated { grid, density } => {
                if grid.len() == 1 {
                    return 0.0;
                }
                let k = grid.partition_point(|g| *g <= lambda).clamp(1, grid.len() - 1);
                let (g0, g1) = (grid[k - 1], grid[k]);
                let s = (lambda - g0) / (g1 - g0);
                ((1.0 - s) * density[k - 1] + s * density[k]) / self.norm
            }
        }
    }

    /// `∫ f dμ` by quadrature.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.mass).map(|(&l, &m)| m * f(l)).sum()
    }

    fn in_support(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Stieltjes transform `S(z) = ∫ (z − λ)⁻¹ dμ(λ)`.
    pub fn stieltjes(&self, z: Complex64) -> Result<Complex64> {
        if z.im == 0.0 && self.in_support(z.re) {
            return Err(Error::Domain(format!(
                "Stieltjes transform evaluated at {} inside the support [{}, {}]",
                z.re, self.lo, self.hi
            )));
        }
        Ok(match self.kind {
            SpectrumKind::MarchenkoPastur => self.mp_stieltjes(z),
            _ => self
                .nodes
                .iter()
                .zip(&self.mass)
                .map(|(&l, &m)| m / (z - l))
                .sum(),
        })
    }

    fn mp_stieltjes(&self, z: Complex64) -> Complex64 {
        let d = self.delta;
        if z.norm() == 0.0 {
            // δ < 1 here (δ = 1 puts 0 in the support): S(0) = −∫λ⁻¹dμ
            return Complex64::new(-1.0 / (1.0 - d), 0.0);
        }
        let root = (z - self.lo).sqrt() * (z - self.hi).sqrt();
        (z - 1.0 + d - root) / (2.0 * d * z)
    }

    /// `S(z)` in closed form where one is known: Marchenko–Pastur and the
    /// semicircle `Beta(3/2, 3/2)`. Used to check near-axis behaviour, which a
    /// finite rule cannot resolve.
    pub fn closed_form_stieltjes(&self, z: Complex64) -> Option<Complex64> {
        match self.kind {
            SpectrumKind::MarchenkoPastur => Some(self.mp_stieltjes(z)),
            SpectrumKind::ShiftedBeta { a, b, lo, hi } if a == 1.5 && b == 1.5 => {
                let (c, r) = (0.5 * (lo + hi), 0.5 * (hi - lo));
                let w = z - c;
                let root = (w - r).sqrt() * (w + r).sqrt();
                Some(2.0 * (w - root) / (r * r))
            }
            _ => None,
        }
    }

    /// Stieltjes transform on the real axis outside the support.
    pub fn stieltjes_real(&self, x: f64) -> Result<f64> {
        Ok(self.stieltjes(Complex64::new(x, 0.0))?.re)
    }

    /// Hilbert transform `H(x) = π⁻¹ P.V.∫ μ(λ)/(x − λ) dλ`.
    ///
    /// Outside the support this is `S(x)/π`. Inside, the principal value is
    /// taken by subtracting the density at `x`, whose own P.V. integral over
    /// the support is a logarithm. Infinite at the location of a point mass.
    pub fn hilbert(&self, x: f64) -> f64 {
        if self.is_point_mass() {
            return 1.0 / (PI * (x - self.lo));
        }
        if !self.in_support(x) {
            return self.stieltjes_real(x).map(|s| s / PI).unwrap_or(f64::NAN);
        }
        match self.kind {
            SpectrumKind::MarchenkoPastur => (x - 1.0 + self.delta) / (2.0 * PI * self.delta * x),
            _ => self.hilbert_subtracted(x),
        }
    }

    fn hilbert_subtracted(&self, x: f64) -> f64 {
        let mx = self.density(x);
        let mut acc = 0.0;
        for ((&l, &dl), &d) in self.nodes.iter().zip(&self.dl).zip(&self.density) {
            let gap = x - l;
            if gap != 0.0 {
                acc += dl * (d - mx) / gap;
            } else {
                // removable singularity: the integrand tends to −μ′(x)
                acc -= dl * self.density_slope(x);
            }
        }
        if mx > 0.0 {
            acc += mx * ((x - self.lo) / (self.hi - x)).ln();
        }
        acc / PI
    }

    fn density_slope(&self, x: f64) -> f64 {
        let e = 1e-6 * (self.hi - self.lo);
        let a = (x - e).max(self.lo);
        let b = (x + e).min(self.hi);
        (self.density(b) - self.density(a)) / (b - a)
    }

    /// Rectangular `C`-transform `C(z) = z·S(z)·(δ·S(z) + (1 − δ)/z)`.
    pub fn c_transform(&self, z: Complex64) -> Result<Complex64> {
        if z.norm() == 0.0 {
            return Err(Error::Domain("C-transform is undefined at z = 0".into()));
        }
        let s = self.stieltjes(z)?;
        Ok(z * s * (self.delta * s + (1.0 - self.delta) / z))
    }

    /// `C` on the real axis outside the support.
    pub fn c_real(&self, x: f64) -> Result<f64> {
        Ok(self.c_transform(Complex64::new(x, 0.0))?.re)
    }

    /// Draw one eigenvalue from `μ`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            SpectrumKind::ShiftedBeta { a, b, lo, hi } => {
                let beta = rand_distr::Beta::new(a, b).expect("validated shape parameters");
                lo + (hi - lo) * beta.sample(rng)
            }
            _ => self.quantile(rng.random::<f64>()),
        }
    }

    /// Quantile function of `μ` by inverting the quadrature CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        if self.is_point_mass() {
            return self.lo;
        }
        if p >= 1.0 {
            return self.hi;
        }
        let p = p.max(0.0);
        // CDF at node i taken as the mass strictly left plus half its own.
        let mut cdf_prev = 0.0;
        let mut x_prev = self.lo;
        let mut acc = 0.0;
        for (&l, &m) in self.nodes.iter().zip(&self.mass) {
            let c = acc + 0.5 * m;
            if c >= p {
                let span = c - cdf_prev;
                let s = if span > 0.0 { (p - cdf_prev) / span } else { 0.0 };
                return x_prev + s * (l - x_prev);
            }
            acc += m;
            cdf_prev = c;
            x_prev = l;
        }
        let span = 1.0 - cdf_prev;
        let s = if span > 0.0 { (p - cdf_prev) / span } else { 1.0 };
        x_prev + s.clamp(0.0, 1.0) * (self.hi - x_prev)
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidSpectrum(format!(
            "aspect ratio delta must lie in (0, 1], got {delta}"
        )));
    }
    Ok(())
}

/// Values of the three shrinkage functions at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shrinkage {
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
}

/// Shrinkage functions `φ₁, φ₂, φ₃` for a spectrum at SNR `θ`.
#[derive(Debug, Clone)]
pub struct ShrinkageSet {
    spectrum: Arc<SpectrumModel>,
    theta: f64,
    hilbert_at_zero: f64,
    node_phi: Vec<Shrinkage>,
}

impl ShrinkageSet {
    pub fn new(spectrum: Arc<SpectrumModel>, theta: f64) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(Error::Domain(format!("SNR theta must be >= 0, got {theta}")));
        }
        if spectrum.is_point_mass() {
            return Err(Error::InvalidSpectrum(
                "shrinkage functions need an absolutely continuous spectrum".into(),
            ));
        }
        // H(0) in the zero-eigenvalue branch is read as the Hilbert transform of μ.
        let hilbert_at_zero = if spectrum.delta() < 1.0 {
            log::debug!("interpreting H(0) as the Hilbert transform of mu at 0");
            spectrum.hilbert(0.0)
        } else {
            0.0
        };
        let mut set = ShrinkageSet {
            spectrum,
            theta,
            hilbert_at_zero,
            node_phi: Vec::new(),
        };
        let nodes = set.spectrum.nodes.clone();
        set.node_phi = nodes.iter().map(|&l| set.phi_in_support(l)).collect();
        Ok(set)
    }

    pub fn spectrum(&self) -> &SpectrumModel {
        &self.spectrum
    }

    pub fn spectrum_arc(&self) -> &Arc<SpectrumModel> {
        &self.spectrum
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn delta(&self) -> f64 {
        self.spectrum.delta()
    }

    /// `H_μ(0)`, the value used by the zero-eigenvalue branch of `φ₂`.
    pub fn hilbert_at_zero(&self) -> f64 {
        self.hilbert_at_zero
    }

    /// `φ` values at the spectrum's quadrature nodes.
    pub fn node_values(&self) -> &[Shrinkage] {
        &self.node_phi
    }

    /// `lim_{ε→0⁺} |1 − θ²C(λ − iε)|²`, expanded through `μ(λ)` and `H_μ(λ)`.
    pub fn plemelj_denominator(&self, lambda: f64) -> f64 {
        let m = self.spectrum.density(lambda);
        let h = self.spectrum.hilbert(lambda);
        self.denominator_from(lambda, m, h)
    }

    fn denominator_from(&self, lambda: f64, m: f64, h: f64) -> f64 {
        let d = self.delta();
        let t2 = self.theta * self.theta;
        let real = 1.0 - t2 * ((1.0 - d) * PI * h - d * PI * PI * lambda * (m * m - h * h));
        let imag = PI * t2 * m * (1.0 - d + 2.0 * d * PI * lambda * h);
        real * real + imag * imag
    }

    fn phi_in_support(&self, lambda: f64) -> Shrinkage {
        let d = self.delta();
        let t = self.theta;
        let m = self.spectrum.density(lambda);
        let h = self.spectrum.hilbert(lambda);
        let den = self.denominator_from(lambda, m, h);
        let phi1 = (1.0 + d * t * t * PI * PI * lambda * (h * h + m * m)) / den;
        let phi3 = t * (1.0 - d + 2.0 * d * PI * lambda * h) / den;
        let phi2 = d * phi1 + t * (1.0 - d) / lambda * phi3;
        Shrinkage { phi1, phi2, phi3 }
    }

    /// `φ₂(0)` for `δ < 1`.
    pub fn phi2_at_zero(&self) -> f64 {
        let d = self.delta();
        d / (1.0 - self.theta * self.theta * (1.0 - d) * PI * self.hilbert_at_zero)
    }

    /// `(φ₁, φ₂, φ₃)` at `λ ≥ 0`.
    ///
    /// Off the support (other than `0`) the same formulas are evaluated with
    /// `μ(λ) = 0`; they diverge at the outlier locations.
    pub fn phi(&self, lambda: f64) -> Result<Shrinkage> {
        if !(lambda >= 0.0) {
            return Err(Error::Domain(format!(
                "shrinkage functions are defined on R+, got {lambda}"
            )));
        }
        if lambda == 0.0 {
            let at_zero = self.phi_in_support_at_zero();
            return Ok(at_zero);
        }
        Ok(self.phi_in_support(lambda))
    }

    fn phi_in_support_at_zero(&self) -> Shrinkage {
        let d = self.delta();
        if d < 1.0 {
            // φ₁ by continuity from the regular formula at λ = 0 with μ(0) = 0
            let den = self.denominator_from(0.0, 0.0, self.hilbert_at_zero);
            Shrinkage {
                phi1: 1.0 / den,
                phi2: self.phi2_at_zero(),
                phi3: 0.0,
            }
        } else {
            Shrinkage {
                phi1: f64::NAN,
                phi2: f64::NAN,
                phi3: 0.0,
            }
        }
    }
}

/// Which side of the bulk a spectral atom sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomBranch {
    AboveBulk,
    /// Root in `(0, λ_min)`. Lemma-type mass formulas are applied there too,
    /// but this region is not covered by the standard theory; flagged.
    BelowBulk,
}

/// A point mass of the induced measures at a root `λ*` of `1 − θ²C(λ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralAtom {
    pub location: f64,
    pub nu1_mass: f64,
    pub nu2_mass: f64,
    /// Mass of `ν₃` at `+√λ*`; the mass at `−√λ*` is its negative.
    pub nu3_mass: f64,
    /// `C′(λ*)`
    pub c_prime: f64,
    pub branch: AtomBranch,
}

impl SpectralAtom {
    /// `(m₁, m₂, m₃)`: atom weights in the `λ`-coordinates of `μφᵢ`, so that
    /// the matrix denoisers can be continued to the atom.
    pub fn phi_weights(&self, delta: f64) -> (f64, f64, f64) {
        let c = delta.sqrt() / (1.0 + delta);
        let sigma = self.location.sqrt();
        (self.nu1_mass, self.nu2_mass, 2.0 * sigma * self.nu3_mass / c)
    }
}

/// Knobs for the outlier root scan.
#[derive(Debug, Clone, Copy)]
pub struct AtomSearch {
    /// The scan above the bulk covers `(λ_max, λ_max + margin·(1 + θ²)]`.
    pub margin: f64,
    pub grid: usize,
    pub tolerance: f64,
}

impl Default for AtomSearch {
    fn default() -> Self {
        AtomSearch {
            margin: 10.0,
            grid: 10_000,
            tolerance: 1e-12,
        }
    }
}

/// All roots of `1 − θ²C(λ) = 0` off the support, with their masses.
pub fn find_spectral_atoms(s: &ShrinkageSet, search: &AtomSearch) -> Result<Vec<SpectralAtom>> {
    let theta = s.theta();
    if theta == 0.0 {
        return Ok(Vec::new());
    }
    let spec = s.spectrum();
    let (lo, hi) = spec.support();
    let t2 = theta * theta;
    let g = |x: f64| -> Result<f64> { Ok(1.0 - t2 * spec.c_real(x)?) };

    let mut roots = Vec::new();
    let top = hi + search.margin * (1.0 + t2);
    let step = (top - hi) / search.grid as f64;
    // The first probe hugs the edge so near-critical roots are bracketed.
    let edge = 1e-9 * hi.max(1.0);
    let above = std::iter::once(hi + edge).chain((1..=search.grid).map(|k| hi + k as f64 * step));
    scan(&g, above, search, &mut roots, AtomBranch::AboveBulk)?;
    if lo > 0.0 {
        let step = lo / (search.grid + 1) as f64;
        let below = (1..=search.grid)
            .map(|k| k as f64 * step)
            .chain(std::iter::once(lo - 1e-9 * lo.max(1.0)));
        scan(&g, below, search, &mut roots, AtomBranch::BelowBulk)?;
    }

    let delta = spec.delta();
    let mut atoms = Vec::with_capacity(roots.len());
    for (x, branch) in roots {
        let hstep = 1e-6 * x.max(1.0);
        let c_prime = (spec.c_real(x + hstep)? - spec.c_real(x - hstep)?) / (2.0 * hstep);
        let sx = spec.stieltjes_real(x)?;
        let nu1 = sx / (-t2 * c_prime);
        let nu2 = (delta * sx + (1.0 - delta) / x) / (-t2 * c_prime);
        let nu3 = -(delta.sqrt() / (1.0 + delta)) / (2.0 * theta.powi(3) * x.sqrt() * c_prime);
        for (name, m) in [("nu1", nu1), ("nu2", nu2)] {
            if !(m > 0.0 && m <= 1.0 + 1e-6) {
                return Err(Error::InconsistentAtom {
                    location: x,
                    reason: format!("{name} mass {m} outside (0, 1] (C' = {c_prime})"),
                });
            }
        }
        if branch == AtomBranch::BelowBulk {
            log::warn!("spectral atom at {x} below the bulk: unverified branch");
        }
        atoms.push(SpectralAtom {
            location: x,
            nu1_mass: nu1,
            nu2_mass: nu2,
            nu3_mass: nu3,
            c_prime,
            branch,
        });
    }
    atoms.sort_by(|a, b| b.location.total_cmp(&a.location));
    Ok(atoms)
}

fn scan(
    g: &impl Fn(f64) -> Result<f64>,
    grid: impl Iterator<Item = f64>,
    search: &AtomSearch,
    roots: &mut Vec<(f64, AtomBranch)>,
    branch: AtomBranch,
) -> Result<()> {
    let mut prev: Option<(f64, f64)> = None;
    for x in grid {
        let gx = g(x)?;
        if let Some((xp, gp)) = prev {
            if gp == 0.0 {
                roots.push((xp, branch));
            } else if gp.signum() != gx.signum() && gx != 0.0 {
                roots.push((bisect(g, xp, x, gp, search.tolerance)?, branch));
            }
        }
        prev = Some((x, gx));
    }
    Ok(())
}

fn bisect(g: &impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, mut ga: f64, tol: f64) -> Result<f64> {
    let (a0, b0) = (a, b);
    for _ in 0..300 {
        let mid = 0.5 * (a + b);
        if (b - a) <= tol * mid.abs().max(1.0) {
            return Ok(mid);
        }
        let gm = g(mid)?;
        if gm == 0.0 {
            return Ok(mid);
        }
        if gm.signum() == ga.signum() {
            a = mid;
            ga = gm;
        } else {
            b = mid;
        }
    }
    Err(Error::RootNotConverged { lo: a0, hi: b0 })
}

/// Measures against which [`InducedMeasures::integrate`] can integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    /// `μ`, the law of the eigenvalues of `WWᵀ`
    Mu,
    /// `μ̃ = δμ + (1 − δ)δ₀`, the law of the eigenvalues of `WᵀW`
    MuTilde,
    Nu1,
    Nu2,
    /// Signed measure on `σ ∈ ±√supp(μ)`
    Nu3,
}

/// Where a spectral function is being evaluated.
#[derive(Debug, Clone, Copy)]
pub enum SpectralPoint<'a> {
    /// A point of the support with its shrinkage values.
    Bulk { lambda: f64, phi: Shrinkage },
    Atom(&'a SpectralAtom),
    /// The zero eigenvalue of `YᵀY` (the `N − M` null directions).
    NullSpace,
}

impl SpectralPoint<'_> {
    pub fn lambda(&self) -> f64 {
        match self {
            SpectralPoint::Bulk { lambda, .. } => *lambda,
            SpectralPoint::Atom(a) => a.location,
            SpectralPoint::NullSpace => 0.0,
        }
    }
}

/// The limits `ν₁, ν₂, ν₃` of the signal-weighted spectral measures.
#[derive(Debug, Clone)]
pub struct InducedMeasures {
    shrinkage: ShrinkageSet,
    atoms: Vec<SpectralAtom>,
    nu2_zero_mass: f64,
}

impl InducedMeasures {
    pub fn new(shrinkage: ShrinkageSet) -> Result<Self> {
        Self::with_search(shrinkage, &AtomSearch::default())
    }

    pub fn with_search(shrinkage: ShrinkageSet, search: &AtomSearch) -> Result<Self> {
        let atoms = find_spectral_atoms(&shrinkage, search)?;
        let d = shrinkage.delta();
        let nu2_zero_mass = if d < 1.0 {
            let t = shrinkage.theta();
            (1.0 - d) / (1.0 - t * t * (1.0 - d) * PI * shrinkage.hilbert_at_zero())
        } else {
            0.0
        };
        Ok(InducedMeasures {
            shrinkage,
            atoms,
            nu2_zero_mass,
        })
    }

    pub fn shrinkage(&self) -> &ShrinkageSet {
        &self.shrinkage
    }

    pub fn spectrum(&self) -> &SpectrumModel {
        self.shrinkage.spectrum()
    }

    /// Atoms sorted by decreasing location.
    pub fn atoms(&self) -> &[SpectralAtom] {
        &self.atoms
    }

    pub fn nu2_zero_mass(&self) -> f64 {
        self.nu2_zero_mass
    }

    /// `ν₁` density `μ(λ)φ₁(λ)`.
    pub fn nu1_density(&self, lambda: f64) -> f64 {
        let s = self.shrinkage.spectrum();
        if lambda <= 0.0 || s.density(lambda) == 0.0 {
            return 0.0;
        }
        s.density(lambda) * self.shrinkage.phi_in_support(lambda).phi1
    }

    /// `ν₂` density `μ(λ)φ₂(λ)`.
    pub fn nu2_density(&self, lambda: f64) -> f64 {
        let s = self.shrinkage.spectrum();
        if lambda <= 0.0 || s.density(lambda) == 0.0 {
            return 0.0;
        }
        s.density(lambda) * self.shrinkage.phi_in_support(lambda).phi2
    }

    /// `ν₃` density with respect to `dσ`.
    pub fn nu3_density(&self, sigma: f64) -> f64 {
        let s = self.shrinkage.spectrum();
        let lambda = sigma * sigma;
        if sigma == 0.0 || s.density(lambda) == 0.0 {
            return 0.0;
        }
        let d = self.shrinkage.delta();
        d.sqrt() / (1.0 + d)
            * sigma.signum()
            * s.density(lambda)
            * self.shrinkage.phi_in_support(lambda).phi3
    }

    /// `⟨f⟩` over one of the measures, including every atom.
    ///
    /// `f` receives the coordinate of the measure (`σ` for `ν₃`, `λ`
    /// otherwise) and the spectral point it belongs to, so callers can
    /// continue spectral functions to the atoms.
    pub fn integrate(&self, measure: Measure, f: impl Fn(f64, SpectralPoint) -> f64) -> f64 {
        let spec = self.shrinkage.spectrum();
        let (nodes, mass) = spec.quadrature();
        let phis = self.shrinkage.node_values();
        let d = spec.delta();
        let bulk = nodes.iter().zip(mass).zip(phis);
        let point = |lambda: f64, phi: Shrinkage| SpectralPoint::Bulk { lambda, phi };
        match measure {
            Measure::Mu => bulk.map(|((&l, &m), &p)| m * f(l, point(l, p))).sum(),
            Measure::MuTilde => {
                let cont: f64 = bulk.map(|((&l, &m), &p)| m * f(l, point(l, p))).sum();
                let zero = if d < 1.0 { (1.0 - d) * f(0.0, SpectralPoint::NullSpace) } else { 0.0 };
                d * cont + zero
            }
            Measure::Nu1 => {
                let cont: f64 = bulk
                    .map(|((&l, &m), &p)| m * p.phi1 * f(l, point(l, p)))
                    .sum();
                cont + self
                    .atoms
                    .iter()
                    .map(|a| a.nu1_mass * f(a.location, SpectralPoint::Atom(a)))
                    .sum::<f64>()
            }
            Measure::Nu2 => {
                let cont: f64 = bulk
                    .map(|((&l, &m), &p)| m * p.phi2 * f(l, point(l, p)))
                    .sum();
                let zero = if d < 1.0 {
                    self.nu2_zero_mass * f(0.0, SpectralPoint::NullSpace)
                } else {
                    0.0
                };
                cont + zero
                    + self
                        .atoms
                        .iter()
                        .map(|a| a.nu2_mass * f(a.location, SpectralPoint::Atom(a)))
                        .sum::<f64>()
            }
            Measure::Nu3 => {
                let c = d.sqrt() / (1.0 + d);
                let cont: f64 = bulk
                    .filter(|((&l, _), _)| l > 0.0)
                    .map(|((&l, &m), &p)| {
                        let s = l.sqrt();
                        let at = point(l, p);
                        c * m * p.phi3 * (f(s, at) - f(-s, at)) / (2.0 * s)
                    })
                    .sum();
                cont + self
                    .atoms
                    .iter()
                    .map(|a| {
                        let s = a.location.sqrt();
                        let at = SpectralPoint::Atom(a);
                        a.nu3_mass * (f(s, at) - f(-s, at))
                    })
                    .sum::<f64>()
            }
        }
    }

    /// `⟨f⟩` for a plain function of the measure's coordinate.
    pub fn inner_product(&self, measure: Measure, f: impl Fn(f64) -> f64) -> f64 {
        self.integrate(measure, |x, _| f(x))
    }

    /// Stieltjes transform of `ν₁` assembled from density and atoms.
    pub fn nu1_stieltjes(&self, z: Complex64) -> Complex64 {
        let re = self.inner_product(Measure::Nu1, |l| (1.0 / (z - l)).re);
        let im = self.inner_product(Measure::Nu1, |l| (1.0 / (z - l)).im);
        Complex64::new(re, im)
    }

    /// Stieltjes transform of `ν₂` assembled from density and atoms.
    pub fn nu2_stieltjes(&self, z: Complex64) -> Complex64 {
        let re = self.inner_product(Measure::Nu2, |l| (1.0 / (z - l)).re);
        let im = self.inner_product(Measure::Nu2, |l| (1.0 / (z - l)).im);
        Complex64::new(re, im)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn semicircle_stieltjes(z: Complex64, c: f64, r: f64) -> Complex64 {
        // Beta(1.5, 1.5) on [c − r, c + r] is a semicircle law.
        let w = z - c;
        let root = (w - r).sqrt() * (w + r).sqrt();
        2.0 * (w - root) / (r * r)
    }

    fn beta13() -> SpectrumModel {
        SpectrumModel::shifted_beta(1.5, 1.5, 1.0, 3.0, 0.5).unwrap()
    }

    #[test]
    fn densities_integrate_to_one() {
        for s in [
            SpectrumModel::marchenko_pastur(0.5).unwrap(),
            SpectrumModel::marchenko_pastur(1.0).unwrap(),
            beta13(),
            SpectrumModel::tabulated(vec![1.0, 2.0, 3.0], vec![0.0, 5.0, 0.0], 0.5).unwrap(),
        ] {
            let total = s.expect(|_| 1.0);
            assert!((total - 1.0).abs() < 1e-6, "{}: {total}", s.descriptor());
        }
    }

    #[test]
    fn density_nonnegative_and_zero_outside() {
        let s = SpectrumModel::marchenko_pastur(0.3).unwrap();
        let (lo, hi) = s.support();
        assert_eq!(s.density(lo - 0.01), 0.0);
        assert_eq!(s.density(hi + 0.01), 0.0);
        for k in 0..=100 {
            let x = lo + (hi - lo) * k as f64 / 100.0;
            assert!(s.density(x) >= 0.0);
        }
    }

    #[test]
    fn point_mass_stieltjes() {
        let s = SpectrumModel::point_mass(1.0, 0.5).unwrap();
        let v = s.stieltjes(Complex64::new(2.0, 0.0)).unwrap();
        assert!((v.re - 1.0).abs() < 1e-15 && v.im == 0.0);
        assert!((s.hilbert(2.0) - 1.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn stieltjes_rejects_support() {
        let s = beta13();
        assert!(matches!(
            s.stieltjes(Complex64::new(2.0, 0.0)),
            Err(Error::Domain(_))
        ));
        assert!(s.stieltjes(Complex64::new(2.0, 0.1)).is_ok());
    }

    #[test]
    fn stieltjes_large_z_is_one_over_z() {
        for s in [SpectrumModel::marchenko_pastur(0.5).unwrap(), beta13()] {
            let z = Complex64::new(1e6, 0.0);
            let v = s.stieltjes(z).unwrap() * z;
            assert!((v.re - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn beta_quadrature_matches_semicircle_closed_form() {
        let s = beta13();
        for z in [
            Complex64::new(5.0, 0.0),
            Complex64::new(0.5, 0.0),
            Complex64::new(2.0, 0.3),
            Complex64::new(3.01, 0.0),
            Complex64::new(-1.0, 2.0),
        ] {
            let got = s.stieltjes(z).unwrap();
            let want = semicircle_stieltjes(z, 2.0, 1.0);
            assert!((got - want).norm() < 1e-9, "z = {z}: {got} vs {want}");
        }
    }

    #[test]
    fn beta_hilbert_matches_semicircle_inside() {
        // semicircle of radius 1 about 2: H(x) = 2(x − 2)/π inside the support
        let s = beta13();
        for k in 0..=20 {
            let x = 1.0 + 2.0 * k as f64 / 20.0;
            let want = 2.0 * (x - 2.0) / PI;
            assert!((s.hilbert(x) - want).abs() < 1e-8, "x = {x}");
        }
        assert!(s.hilbert(2.0).abs() < 1e-10);
    }

    #[test]
    fn tabulated_hilbert_agrees_with_beta_table() {
        let beta = beta13();
        let grid: Vec<f64> = (0..=4000).map(|k| 1.0 + 2.0 * k as f64 / 4000.0).collect();
        let dens: Vec<f64> = grid.iter().map(|&x| beta.density(x)).collect();
        let tab = SpectrumModel::tabulated(grid, dens, 0.5).unwrap();
        for x in [1.3, 2.0, 2.7] {
            assert!((tab.hilbert(x) - beta.hilbert(x)).abs() < 1e-3, "x = {x}");
        }
        let z = Complex64::new(4.0, 0.0);
        assert!((tab.stieltjes(z).unwrap() - beta.stieltjes(z).unwrap()).norm() < 1e-5);
    }

    #[test]
    fn c_transform_identities() {
        let one = SpectrumModel::marchenko_pastur(1.0).unwrap();
        let z = Complex64::new(5.0, 0.0);
        let s = one.stieltjes(z).unwrap();
        assert!((one.c_transform(z).unwrap() - z * s * s).norm() < 1e-14);

        let atom = SpectrumModel::point_mass(1.0, 0.5).unwrap();
        let c = atom.c_transform(Complex64::new(2.0, 0.0)).unwrap();
        assert!((c.re - 1.5).abs() < 1e-14);
        assert!(atom.c_transform(Complex64::new(0.0, 0.0)).is_err());

        let mp = SpectrumModel::marchenko_pastur(0.5).unwrap();
        let big = Complex64::new(1e6, 0.0);
        assert!(((mp.c_transform(big).unwrap() * big).re - 1.0).abs() < 1e-3);
    }

    #[test]
    fn mp_stieltjes_at_zero_is_minus_inverse_mean() {
        let mp = SpectrumModel::marchenko_pastur(0.5).unwrap();
        let s0 = mp.stieltjes_real(0.0).unwrap();
        let near = mp.stieltjes_real(1e-6).unwrap();
        assert!((s0 + 2.0).abs() < 1e-14);
        assert!((near - s0).abs() < 1e-4);
        let quad = -mp.expect(|l| 1.0 / l);
        assert!((quad - s0).abs() < 1e-6);
    }

    #[test]
    fn shrinkage_at_zero_snr() {
        let set = ShrinkageSet::new(Arc::new(beta13()), 0.0).unwrap();
        for l in [1.2, 2.0, 2.9] {
            let p = set.phi(l).unwrap();
            assert!((p.phi1 - 1.0).abs() < 1e-14);
            assert!((p.phi2 - 0.5).abs() < 1e-14);
            assert_eq!(p.phi3, 0.0);
            assert!((set.plemelj_denominator(l) - 1.0).abs() < 1e-14);
        }
        assert!(set.phi(-1.0).is_err());
        assert_eq!(set.phi(0.0).unwrap().phi3, 0.0);
    }

    #[test]
    fn shrinkage_square_case_phi2_equals_phi1() {
        let set = ShrinkageSet::new(Arc::new(SpectrumModel::marchenko_pastur(1.0).unwrap()), 1.3)
            .unwrap();
        for l in [0.5, 1.0, 3.0] {
            let p = set.phi(l).unwrap();
            assert!((p.phi1 - p.phi2).abs() < 1e-14);
        }
    }

    #[test]
    fn mp_outlier_location_is_closed_form() {
        // BBP-type location for the rectangular MP model
        let (d, t): (f64, f64) = (0.5, 2.0);
        let set = ShrinkageSet::new(Arc::new(SpectrumModel::marchenko_pastur(d).unwrap()), t).unwrap();
        let atoms = find_spectral_atoms(&set, &AtomSearch::default()).unwrap();
        assert_eq!(atoms.len(), 1);
        let want = (t * t + 1.0) * (t * t + d) / (t * t);
        assert!((atoms[0].location - want).abs() < 1e-8);
        let m = atoms[0].nu1_mass;
        assert!(m > 0.0 && m <= 1.0);
        assert!(atoms[0].nu3_mass > 0.0);
    }

    #[test]
    fn subcritical_mp_has_no_atoms() {
        // threshold is δ^{1/4} ≈ 0.8409 for δ = 0.5
        let set = ShrinkageSet::new(Arc::new(SpectrumModel::marchenko_pastur(0.5).unwrap()), 0.8)
            .unwrap();
        assert!(find_spectral_atoms(&set, &AtomSearch::default()).unwrap().is_empty());
    }

    #[test]
    fn induced_measures_at_zero_snr() {
        let set = ShrinkageSet::new(Arc::new(beta13()), 0.0).unwrap();
        let m = InducedMeasures::new(set).unwrap();
        assert!(m.atoms().is_empty());
        let mu1 = m.inner_product(Measure::Mu, |l| l);
        assert!((m.inner_product(Measure::Nu1, |l| l) - mu1).abs() < 1e-14);
        assert!((m.inner_product(Measure::Nu2, |l| l) - m.inner_product(Measure::MuTilde, |l| l)).abs() < 1e-14);
        assert_eq!(m.inner_product(Measure::Nu3, |s| s), 0.0);
        assert!((m.nu2_zero_mass() - 0.5).abs() < 1e-14);
    }

    /// Adaptive Simpson on `[a, b]`, used as an independent oracle.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (f(a), f(m), f(b));
        rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
    }

    fn mp_density(l: f64, d: f64) -> f64 {
        let (a, b) = ((1.0 - d.sqrt()).powi(2), (1.0 + d.sqrt()).powi(2));
        if l <= a || l >= b {
            0.0
        } else {
            ((b - l) * (l - a)).sqrt() / (2.0 * PI * d * l)
        }
    }

    /// P.V. by pairing `x ± r` around the singularity, excised radius `eps`.
    fn excision_pv(dens: &dyn Fn(f64) -> f64, lo: f64, hi: f64, x: f64, eps: f64) -> f64 {
        let r = (x - lo).min(hi - x);
        let paired = simpson(&|t: f64| (dens(x - t) - dens(x + t)) / t, eps, r, 1e-10);
        let tail = if x - lo < hi - x {
            simpson(&|l: f64| dens(l) / (x - l), x + r, hi, 1e-10)
        } else {
            simpson(&|l: f64| dens(l) / (x - l), lo, x - r, 1e-10)
        };
        (paired + tail) / PI
    }

    #[test]
    fn mp_stieltjes_matches_adaptive_oracle() {
        let d = 0.5;
        let mp = SpectrumModel::marchenko_pastur(d).unwrap();
        let (lo, hi) = mp.support();
        let oracle = simpson(&|l| mp_density(l, d) / (5.0 - l), lo, hi, 1e-13);
        let got = mp.stieltjes_real(5.0).unwrap();
        assert!((got - oracle).abs() < 1e-8, "{got} vs {oracle}");
        // the quadrature rule agrees with the closed form as well
        let quad = mp.expect(|l| 1.0 / (5.0 - l));
        assert!((quad - got).abs() < 1e-9);
    }

    #[test]
    fn mp_hilbert_matches_excision_oracle() {
        let d = 0.5;
        let mp = SpectrumModel::marchenko_pastur(d).unwrap();
        let (lo, hi) = mp.support();
        let oracle = excision_pv(&|l| mp_density(l, d), lo, hi, 1.0, 1e-9);
        assert!((mp.hilbert(1.0) - oracle).abs() < 1e-6, "{} vs {oracle}", mp.hilbert(1.0));
    }

    #[test]
    fn subtraction_hilbert_matches_exact_piecewise_linear_pv() {
        let grid: Vec<f64> = (0..=200).map(|k| 0.5 + k as f64 / 100.0).collect();
        let dens: Vec<f64> = grid.iter().map(|&x| ((x - 0.5) * (2.5 - x)).sqrt()).collect();
        let tab = SpectrumModel::tabulated(grid.clone(), dens, 0.7).unwrap();
        let vals: Vec<f64> = grid.iter().map(|&g| tab.density(g)).collect();
        // exact P.V. of a linear segment: ∫ (a + bλ)/(x − λ) = (a + bx)·ln|…| − b·Δ
        let exact = |x: f64| {
            let mut acc = 0.0;
            for k in 1..grid.len() {
                let (g0, g1) = (grid[k - 1], grid[k]);
                let b = (vals[k] - vals[k - 1]) / (g1 - g0);
                let at_x = vals[k - 1] + b * (x - g0);
                acc += at_x * ((x - g0).abs() / (x - g1).abs()).ln() - b * (g1 - g0);
            }
            acc / PI
        };
        for x in [0.8037, 1.505, 2.2013] {
            assert!((tab.hilbert(x) - exact(x)).abs() < 1e-5, "x = {x}: {} vs {}", tab.hilbert(x), exact(x));
        }
    }

    #[test]
    fn plemelj_consistency_on_support_grid() {
        // quadrature cannot resolve ε = 1e-6, so the oracle is analytic
        let mp = SpectrumModel::marchenko_pastur(0.5).unwrap();
        let beta = beta13();
        let cases: [(&SpectrumModel, &dyn Fn(Complex64) -> Complex64); 2] = [
            (&mp, &|z| mp.stieltjes(z).unwrap()),
            (&beta, &|z| semicircle_stieltjes(z, 2.0, 1.0)),
        ];
        for (spec, stieltjes) in cases {
            let (lo, hi) = spec.support();
            for k in 1..20 {
                let x = lo + (hi - lo) * k as f64 / 20.0;
                let s = stieltjes(Complex64::new(x, -1e-6));
                let h = PI * spec.hilbert(x);
                let m = PI * spec.density(x);
                assert!((s.re - h).abs() < 1e-3 * h.abs().max(1.0), "{x}");
                assert!((s.im - m).abs() < 1e-3 * m.abs().max(1.0), "{x}");
            }
        }
    }

    #[test]
    fn plemelj_denominator_matches_small_epsilon() {
        let set = ShrinkageSet::new(Arc::new(beta13()), 2.0).unwrap();
        let mp = Arc::new(SpectrumModel::marchenko_pastur(0.5).unwrap());
        let set_mp = ShrinkageSet::new(mp.clone(), 1.5).unwrap();
        let semicircle_c = |z: Complex64| {
            let s = semicircle_stieltjes(z, 2.0, 1.0);
            0.5 * z * s * s + 0.5 * s
        };
        let mp_c = |z: Complex64| mp.c_transform(z).unwrap();
        let cases: [(&ShrinkageSet, &dyn Fn(Complex64) -> Complex64, Vec<f64>); 2] = [
            (&set, &semicircle_c, vec![1.2, 2.0, 2.8]),
            (&set_mp, &mp_c, vec![0.3, 1.0, 2.5]),
        ];
        for (set, c_of, xs) in cases {
            for x in xs {
                let c = c_of(Complex64::new(x, -1e-6));
                let t2 = set.theta().powi(2);
                let want = (1.0 - t2 * c).norm_sqr();
                let got = set.plemelj_denominator(x);
                assert!((got - want).abs() < 1e-3 * want, "x = {x}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn shrinkage_matches_direct_rederivation() {
        // independent assembly: semicircle Hilbert and Stieltjes in closed form
        let (d, t, l) = (0.5_f64, 2.0_f64, 2.0_f64);
        let set = ShrinkageSet::new(Arc::new(beta13()), t).unwrap();
        let s_minus = semicircle_stieltjes(Complex64::new(l, -1e-12), 2.0, 1.0);
        let c = d * l * s_minus * s_minus + (1.0 - d) * s_minus;
        let den = (1.0 - t * t * c).norm_sqr();
        let (h, m) = (s_minus.re / PI, s_minus.im / PI);
        let phi1 = (1.0 + d * t * t * PI * PI * l * (h * h + m * m)) / den;
        let phi3 = t * (1.0 - d + 2.0 * d * PI * l * h) / den;
        let phi2 = d * phi1 + t * (1.0 - d) * phi3 / l;
        let p = set.phi(l).unwrap();
        assert!((p.phi1 - phi1).abs() < 1e-8 * phi1.abs().max(1.0));
        assert!((p.phi2 - phi2).abs() < 1e-8 * phi2.abs().max(1.0));
        assert!((p.phi3 - phi3).abs() < 1e-8 * phi3.abs().max(1.0));
    }

    #[test]
    fn mp_phi2_at_zero_closed_form() {
        // H_μ(0) = −1/(π(1 − δ)) for MP, so φ₂(0) = δ/(1 + θ²)
        let set = ShrinkageSet::new(Arc::new(SpectrumModel::marchenko_pastur(0.5).unwrap()), 2.0)
            .unwrap();
        assert!((set.phi2_at_zero() - 0.5 / 5.0).abs() < 1e-12);
        let m = InducedMeasures::new(set).unwrap();
        assert!((m.nu2_zero_mass() - 0.5 / 5.0).abs() < 1e-12);
    }

    fn measures(spec: SpectrumModel, theta: f64) -> InducedMeasures {
        InducedMeasures::new(ShrinkageSet::new(Arc::new(spec), theta).unwrap()).unwrap()
    }

    #[test]
    fn induced_measures_are_normalized() {
        for (spec, theta) in [
            (SpectrumModel::marchenko_pastur(0.5).unwrap(), 2.0),
            (SpectrumModel::marchenko_pastur(0.5).unwrap(), 1.0),
            (SpectrumModel::marchenko_pastur(0.5).unwrap(), 0.5),
            (SpectrumModel::marchenko_pastur(1.0).unwrap(), 1.5),
            (beta13(), 2.0),
            (beta13(), 0.3),
        ] {
            let name = format!("{} theta={theta}", spec.descriptor());
            let m = measures(spec, theta);
            let n1 = m.inner_product(Measure::Nu1, |_| 1.0);
            let n2 = m.inner_product(Measure::Nu2, |_| 1.0);
            let n3 = m.inner_product(Measure::Nu3, |_| 1.0);
            assert!((n1 - 1.0).abs() < 1e-4, "{name}: nu1 {n1}");
            assert!((n2 - 1.0).abs() < 1e-4, "{name}: nu2 {n2}");
            assert!(n3.abs() < 1e-4, "{name}: nu3 {n3}");
            for a in m.atoms() {
                assert!(a.nu1_mass > 0.0 && a.nu1_mass <= 1.0);
                assert!(a.nu2_mass > 0.0 && a.nu2_mass <= 1.0);
            }
        }
    }

    #[test]
    fn nu3_first_moment() {
        // coefficient of z⁻² in the ν₃ transform; θ = 1 exceeds the MP(0.5)
        // threshold, so the atoms at ±σ* contribute
        let (d, t) = (0.5_f64, 1.0);
        let m = measures(SpectrumModel::marchenko_pastur(d).unwrap(), t);
        assert_eq!(m.atoms().len(), 1);
        let first = m.inner_product(Measure::Nu3, |s| s);
        assert!((first - t * d.sqrt() / (1.0 + d)).abs() < 1e-3, "{first}");
        let sub = measures(SpectrumModel::marchenko_pastur(d).unwrap(), 0.8);
        assert!(sub.atoms().is_empty());
        let first = sub.inner_product(Measure::Nu3, |s| s);
        assert!((first - 0.8 * d.sqrt() / (1.0 + d)).abs() < 1e-3, "{first}");
    }

    #[test]
    fn nu_stieltjes_match_resolvent_formulas() {
        for (spec, theta) in [
            (SpectrumModel::marchenko_pastur(0.5).unwrap(), 2.0),
            (beta13(), 2.0),
            (beta13(), 0.7),
        ] {
            let m = measures(spec, theta);
            let s = m.spectrum();
            let t2 = theta * theta;
            for z in [
                Complex64::new(-1.0, 0.5),
                Complex64::new(2.0, 1.0),
                Complex64::new(8.0, 0.1),
                Complex64::new(0.5, -2.0),
                Complex64::new(12.0, 3.0),
            ] {
                let sm = s.stieltjes(z).unwrap();
                let g = 1.0 - t2 * s.c_transform(z).unwrap();
                let want1 = sm / g;
                let want2 = (s.delta() * sm + (1.0 - s.delta()) / z) / g;
                assert!((m.nu1_stieltjes(z) - want1).norm() < 1e-4, "{z}");
                assert!((m.nu2_stieltjes(z) - want2).norm() < 1e-4, "{z}");
                let cz2 = s.c_transform(z * z).unwrap();
                let want3 = s.delta().sqrt() / (1.0 + s.delta()) * theta * cz2 / (1.0 - t2 * cz2);
                let re = m.inner_product(Measure::Nu3, |x| (1.0 / (z - x)).re);
                let im = m.inner_product(Measure::Nu3, |x| (1.0 / (z - x)).im);
                assert!((Complex64::new(re, im) - want3).norm() < 1e-4, "{z}");
            }
        }
    }

    #[test]
    fn mp_detection_threshold() {
        // θ²C(λ_max) = 1 at θ = δ^{1/4}; scan θ and locate where atoms appear
        let spec = Arc::new(SpectrumModel::marchenko_pastur(0.5).unwrap());
        let mut first = None;
        for k in 0..200 {
            let t = 0.7 + 0.002 * k as f64;
            let set = ShrinkageSet::new(spec.clone(), t).unwrap();
            if !find_spectral_atoms(&set, &AtomSearch::default()).unwrap().is_empty() {
                first = Some(t);
                break;
            }
        }
        let t = first.unwrap();
        assert!((t - 0.5f64.powf(0.25)).abs() < 0.005, "{t}");
    }

    #[test]
    fn beta_lower_root_is_consistent() {
        // C decreases from 0 to C(λ_min) = 1 below the bulk; at θ = 2 a
        // second root appears below λ_min = 1
        let m = measures(beta13(), 2.0);
        assert_eq!(m.atoms().len(), 2);
        assert_eq!(m.atoms()[0].branch, AtomBranch::AboveBulk);
        assert_eq!(m.atoms()[1].branch, AtomBranch::BelowBulk);
        assert!(m.atoms()[1].location < 1.0);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let mp = SpectrumModel::marchenko_pastur(0.5).unwrap();
        let (lo, hi) = mp.support();
        assert!((mp.quantile(0.0) - lo).abs() < 1e-3);
        assert!((mp.quantile(1.0) - hi).abs() < 1e-12);
        let med = mp.quantile(0.5);
        let below = simpson(&|l| mp_density(l, 0.5), lo, med, 1e-12);
        assert!((below - 0.5).abs() < 1e-5);
    }

    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn shrinkage_nonnegative_on_support(d in 0.1f64..1.0, theta in 0.0f64..3.0, u in 0.001f64..0.999) {
            let spec = Arc::new(SpectrumModel::marchenko_pastur(d).unwrap());
            let (lo, hi) = spec.support();
            let set = ShrinkageSet::new(spec, theta).unwrap();
            let l = lo + u * (hi - lo);
            let p = set.phi(l).unwrap();
            prop_assert!(p.phi1 >= 0.0);
            prop_assert!(p.phi2 >= 0.0);
            prop_assert!(set.plemelj_denominator(l) >= 0.0);
        }

        #[test]
        fn atoms_have_opposite_nu3_and_bounded_masses(d in 0.2f64..1.0, theta in 0.0f64..4.0) {
            let spec = Arc::new(SpectrumModel::marchenko_pastur(d).unwrap());
            let m = InducedMeasures::new(ShrinkageSet::new(spec, theta).unwrap()).unwrap();
            for a in m.atoms() {
                prop_assert!(a.nu1_mass > 0.0 && a.nu1_mass <= 1.0);
                prop_assert!(a.nu2_mass > 0.0 && a.nu2_mass <= 1.0);
                let plus = m.integrate(Measure::Nu3, |s, p| match p {
                    SpectralPoint::Atom(_) if s > 0.0 => 1.0,
                    _ => 0.0,
                });
                let minus = m.integrate(Measure::Nu3, |s, p| match p {
                    SpectralPoint::Atom(_) if s < 0.0 => 1.0,
                    _ => 0.0,
                });
                prop_assert!((plus + minus).abs() < 1e-14);
            }
            prop_assert!((m.inner_product(Measure::Nu1, |_| 1.0) - 1.0).abs() < 1e-4);
        }

        #[test]
        fn c_decreases_above_the_bulk(d in 0.1f64..1.0, gap in 0.01f64..20.0) {
            let spec = SpectrumModel::marchenko_pastur(d).unwrap();
            let x = spec.support().1 + gap;
            let c0 = spec.c_real(x).unwrap();
            let c1 = spec.c_real(x * 1.01).unwrap();
            prop_assert!(c0 > 0.0 && c1 < c0);
        }
    }
}
