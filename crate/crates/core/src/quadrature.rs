//! Gauss rules on intervals and simplices.
//!
//! Simplex rules are conical products of Gauss-Jacobi rules, so a rule with
//! `n` points per axis integrates polynomials of degree `2n - 1` exactly on
//! triangles and tetrahedra alike.

use faer::{Mat, Side};

/// Nodes and weights on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Rule1d {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss-Jacobi rule for `∫₀¹ (1-t)^a t^b f(t) dt`, `a, b > -1`.
pub fn gauss_jacobi(n: usize, a: f64, b: f64) -> Rule1d {
    assert!(n >= 1, "rule needs at least one point");
    assert!(a > -1.0 && b > -1.0, "Jacobi exponents must exceed -1");
    // Golub-Welsch on the Jacobi matrix of the weight (1-x)^a (1+x)^b on [-1, 1].
    let mut jac = Mat::<f64>::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        let s = 2.0 * kf + a + b;
        let diag = if k == 0 {
            (b - a) / (a + b + 2.0)
        } else {
            (b * b - a * a) / (s * (s + 2.0))
        };
        jac[(k, k)] = diag;
        if k + 1 < n {
            let m = kf + 1.0;
            let s1 = 2.0 * m + a + b;
            let num = 4.0 * m * (m + a) * (m + b) * (m + a + b);
            let den = s1 * s1 * (s1 + 1.0) * (s1 - 1.0);
            let off = (num / den).sqrt();
            jac[(k, k + 1)] = off;
            jac[(k + 1, k)] = off;
        }
    }
    let mu0 = 2f64.powf(a + b + 1.0) * libm::tgamma(a + 1.0) * libm::tgamma(b + 1.0)
        / libm::tgamma(a + b + 2.0);
    let evd = jac
        .self_adjoint_eigen(Side::Lower)
        .expect("tridiagonal eigenproblem is well posed");
    let vals = evd.S().column_vector();
    let vecs = evd.U();
    // map x in [-1,1] to t = (1+x)/2; the weight picks up 2^{-(a+b+1)}.
    let scale = 2f64.powf(-(a + b + 1.0));
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = vecs[(0, i)];
            (0.5 * (1.0 + vals[i]), mu0 * v0 * v0 * scale)
        })
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    Rule1d {
        points: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Gauss-Legendre rule on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> Rule1d {
    gauss_jacobi(n, 0.0, 0.0)
}

/// Rule on the reference simplex `{x_i ≥ 0, Σ x_i ≤ 1}` stored in barycentric
/// form; weights sum to the reference volume `1/d!`.
#[derive(Debug, Clone)]
pub struct SimplexRule {
    pub dim: usize,
    /// `bary[q][0] = 1 - Σ x_i`, `bary[q][i] = x_i`; unused slots are zero.
    pub bary: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

impl SimplexRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Conical-product rule with `n` points per axis, exact to degree `2n - 1`.
pub fn simplex_rule(dim: usize, n: usize) -> SimplexRule {
    assert!(dim <= 3, "simplices up to dimension 3");
    let cart = collapsed(dim, n);
    let mut bary = Vec::with_capacity(cart.len());
    let mut weights = Vec::with_capacity(cart.len());
    for (x, w) in cart {
        let mut b = [0.0; 4];
        let mut s = 0.0;
        for (i, xi) in x.iter().enumerate() {
            b[i + 1] = *xi;
            s += xi;
        }
        b[0] = 1.0 - s;
        bary.push(b);
        weights.push(w);
    }
    SimplexRule { dim, bary, weights }
}

fn collapsed(dim: usize, n: usize) -> Vec<(Vec<f64>, f64)> {
    if dim == 0 {
        return vec![(Vec::new(), 1.0)];
    }
    let outer = gauss_jacobi(n, (dim - 1) as f64, 0.0);
    let inner = collapsed(dim - 1, n);
    let mut out = Vec::with_capacity(n * inner.len());
    for (u, wu) in outer.points.iter().zip(&outer.weights) {
        for (p, wp) in &inner {
            let mut x = Vec::with_capacity(dim);
            x.push(*u);
            x.extend(p.iter().map(|pi| (1.0 - u) * pi));
            out.push((x, wu * wp));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(k: u32) -> f64 {
        (1..=k).map(f64::from).product()
    }

    #[test]
    fn legendre_integrates_monomials() {
        let r = gauss_legendre(5);
        for k in 0..10 {
            let q: f64 = r
                .points
                .iter()
                .zip(&r.weights)
                .map(|(t, w)| w * t.powi(k))
                .sum();
            assert!((q - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "degree {k}");
        }
    }

    #[test]
    fn jacobi_matches_beta_integrals() {
        // ∫ (1-t)^a t^b t^k = B(b+k+1, a+1)
        for &(a, b) in &[(0.0, 0.5), (1.0, 0.0), (0.0, -0.5), (2.0, 1.5)] {
            let r = gauss_jacobi(6, a, b);
            for k in 0..11 {
                let q: f64 = r
                    .points
                    .iter()
                    .zip(&r.weights)
                    .map(|(t, w)| w * t.powi(k))
                    .sum();
                let kf = k as f64;
                let exact = libm::tgamma(b + kf + 1.0) * libm::tgamma(a + 1.0)
                    / libm::tgamma(a + b + kf + 2.0);
                assert!(
                    (q - exact).abs() < 1e-13 * exact.max(1.0),
                    "a={a} b={b} k={k}"
                );
            }
        }
    }

    #[test]
    fn simplex_rules_match_dirichlet_moments() {
        // ∫_T x^p y^q z^r = p! q! r! / (p+q+r+d)!
        for dim in 1..=3 {
            let rule = simplex_rule(dim, 3);
            let mut exps = Vec::new();
            for p in 0..=5u32 {
                for q in 0..=(5 - p) {
                    for r in 0..=(5 - p - q) {
                        if (dim < 2 && q > 0) || (dim < 3 && r > 0) {
                            continue;
                        }
                        exps.push([p, q, r]);
                    }
                }
            }
            for e in exps {
                let total: u32 = e.iter().sum();
                let exact = e.iter().map(|&k| factorial(k)).product::<f64>()
                    / factorial(total + dim as u32);
                let got: f64 = rule
                    .bary
                    .iter()
                    .zip(&rule.weights)
                    .map(|(b, w)| {
                        w * b[1].powi(e[0] as i32) * b[2].powi(e[1] as i32) * b[3].powi(e[2] as i32)
                    })
                    .sum();
                assert!((got - exact).abs() < 1e-15, "dim={dim} exps={e:?}");
            }
        }
    }
}
