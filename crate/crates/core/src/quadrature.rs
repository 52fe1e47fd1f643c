//! Fixed Gauss rules: Legendre on an interval and Hermite against the
//! standard normal weight.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
///
/// Newton iteration on the three-term Legendre recurrence; accurate to
/// machine precision well past a few thousand nodes.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "need at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let weight = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = weight;
        w[n - 1 - i] = weight;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss–Hermite rule rescaled so that `Σ w_i f(z_i) ≈ E[f(Z)]`, `Z ~ N(0,1)`.
#[derive(Debug, Clone)]
pub struct NormalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NormalRule {
    pub fn new(n: usize) -> Self {
        let (x, w) = gauss_hermite(n);
        let scale = 1.0 / PI.sqrt();
        NormalRule {
            nodes: x.iter().map(|v| v * std::f64::consts::SQRT_2).collect(),
            weights: w.iter().map(|v| v * scale).collect(),
        }
    }

    /// Trapezoid rule on `[-half_width, half_width]` with `n` nodes.
    ///
    /// For analytic integrands with Gaussian decay the error falls like
    /// `exp(-2πd/h)`, `d` being the distance of the nearest singularity from
    /// the real axis, so it stays accurate where Hermite rules converge slowly
    /// (sharp `tanh` posteriors at high SNR).
    pub fn trapezoid(n: usize, half_width: f64) -> Self {
        assert!(n >= 2, "need at least two nodes");
        let h = 2.0 * half_width / (n - 1) as f64;
        let norm = h / (2.0 * PI).sqrt();
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let z = -half_width + i as f64 * h;
            let end = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            nodes.push(z);
            weights.push(end * norm * (-0.5 * z * z).exp());
        }
        NormalRule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(Z)]` for a standard normal `Z`.
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * f(z))
            .sum()
    }
}

/// Physicists' Gauss–Hermite rule (weight `exp(-x²)`), ascending nodes.
///
/// Golub–Welsch: nodes are the eigenvalues of the Jacobi matrix of the
/// orthonormal Hermite recurrence, weights come from the first eigenvector
/// components.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "need at least one node");
    let jacobi = faer::Mat::<f64>::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("symmetric tridiagonal eigenproblem");
    let mut nodes: Vec<f64> = (0..n).map(|i| eig.S()[i]).collect();
    let mut weights: Vec<f64> = (0..n).map(|i| PI.sqrt() * eig.U()[(0, i)].powi(2)).collect();
    // Symmetrize away rounding so odd moments vanish exactly.
    for i in 0..n / 2 {
        let x = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[n - 1 - i]);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}
