//! Quadratic Lagrange kernels on simplices in barycentric form.

use crate::geometry::{Point, EDGES_2D, EDGES_3D};

/// Edge list of the reference `k`-simplex.
pub fn simplex_edges(k: usize) -> &'static [(usize, usize)] {
    match k {
        1 => &[(0, 1)],
        2 => &EDGES_2D,
        3 => &EDGES_3D,
        _ => &[],
    }
}

pub fn n_basis(k: usize) -> usize {
    (k + 1) * (k + 2) / 2
}

/// P2 basis values on a `k`-simplex at barycentric point `b`.
pub fn p2_values(k: usize, b: &[f64; 4]) -> [f64; 10] {
    let mut v = [0.0; 10];
    for i in 0..=k {
        v[i] = b[i] * (2.0 * b[i] - 1.0);
    }
    for (e, &(i, j)) in simplex_edges(k).iter().enumerate() {
        v[k + 1 + e] = 4.0 * b[i] * b[j];
    }
    v
}

/// Affine simplex geometry: barycentric gradients and volume.
#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub dim: usize,
    pub grad_bary: [Point; 4],
    pub volume: f64,
    pub verts: [Point; 4],
}

impl Affine {
    pub fn new(dim: usize, verts: &[Point; 4]) -> Self {
        // rows of J^{-T}: ∇λ_i for i ≥ 1, ∇λ_0 = -Σ
        let mut j = [[0.0; 3]; 3];
        for c in 0..dim {
            for r in 0..dim {
                j[r][c] = verts[c + 1][r] - verts[0][r];
            }
        }
        let mut g = [[0.0; 3]; 4];
        let det;
        if dim == 2 {
            det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            // inverse rows give ∇λ_1, ∇λ_2
            g[1] = [j[1][1] / det, -j[0][1] / det, 0.0];
            g[2] = [-j[1][0] / det, j[0][0] / det, 0.0];
        } else {
            let c0 = [j[0][0], j[1][0], j[2][0]];
            let c1 = [j[0][1], j[1][1], j[2][1]];
            let c2 = [j[0][2], j[1][2], j[2][2]];
            let x = crate::geometry::cross(&c1, &c2);
            det = crate::geometry::dot3(&c0, &x);
            let y = crate::geometry::cross(&c2, &c0);
            let z = crate::geometry::cross(&c0, &c1);
            for k in 0..3 {
                g[1][k] = x[k] / det;
                g[2][k] = y[k] / det;
                g[3][k] = z[k] / det;
            }
        }
        for k in 0..3 {
            g[0][k] = -(1..=dim).map(|i| g[i][k]).sum::<f64>();
        }
        let fact = if dim == 2 { 2.0 } else { 6.0 };
        Self {
            dim,
            grad_bary: g,
            volume: det.abs() / fact,
            verts: *verts,
        }
    }

    /// Physical point of barycentric coordinates.
    pub fn point(&self, b: &[f64; 4]) -> Point {
        let mut x = [0.0; 3];
        for i in 0..=self.dim {
            for k in 0..3 {
                x[k] += b[i] * self.verts[i][k];
            }
        }
        x
    }

    /// Barycentric coordinates of a physical point.
    pub fn bary(&self, x: &Point) -> [f64; 4] {
        let mut b = [0.0; 4];
        let d = crate::geometry::sub(x, &self.verts[0]);
        let mut s = 0.0;
        for i in 1..=self.dim {
            b[i] = crate::geometry::dot3(&self.grad_bary[i], &d);
            s += b[i];
        }
        b[0] = 1.0 - s;
        b
    }

    /// P2 basis gradients at `b`.
    pub fn grads(&self, b: &[f64; 4]) -> [Point; 10] {
        let d = self.dim;
        let g = &self.grad_bary;
        let mut out = [[0.0; 3]; 10];
        for i in 0..=d {
            let s = 4.0 * b[i] - 1.0;
            for k in 0..3 {
                out[i][k] = s * g[i][k];
            }
        }
        for (e, &(i, j)) in simplex_edges(d).iter().enumerate() {
            for k in 0..3 {
                out[d + 1 + e][k] = 4.0 * (b[j] * g[i][k] + b[i] * g[j][k]);
            }
        }
        out
    }

    /// Constant P2 basis Hessians.
    pub fn hessians(&self) -> [[[f64; 3]; 3]; 10] {
        let d = self.dim;
        let g = &self.grad_bary;
        let mut out = [[[0.0; 3]; 3]; 10];
        for i in 0..=d {
            for p in 0..3 {
                for q in 0..3 {
                    out[i][p][q] = 4.0 * g[i][p] * g[i][q];
                }
            }
        }
        for (e, &(i, j)) in simplex_edges(d).iter().enumerate() {
            for p in 0..3 {
                for q in 0..3 {
                    out[d + 1 + e][p][q] = 4.0 * (g[i][p] * g[j][q] + g[j][p] * g[i][q]);
                }
            }
        }
        out
    }

    /// Longest edge.
    pub fn diameter(&self) -> f64 {
        let mut h: f64 = 0.0;
        for i in 0..=self.dim {
            for j in i + 1..=self.dim {
                h = h.max(crate::geometry::norm(&crate::geometry::sub(
                    &self.verts[i],
                    &self.verts[j],
                )));
            }
        }
        h
    }
}

/// Symmetric gradient of a P2 field at `b` from nodal values `u[node][comp]`.
pub fn strain(aff: &Affine, b: &[f64; 4], u: &[[f64; 3]]) -> [[f64; 3]; 3] {
    let g = aff.grads(b);
    let mut du = [[0.0; 3]; 3];
    for (a, ua) in u.iter().enumerate() {
        for i in 0..3 {
            for j in 0..3 {
                du[i][j] += ua[i] * g[a][j];
            }
        }
    }
    let mut e = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            e[i][j] = 0.5 * (du[i][j] + du[j][i]);
        }
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::simplex_rule;

    fn tri() -> Affine {
        Affine::new(
            2,
            &[[0.1, 0.0, 0.0], [1.0, 0.2, 0.0], [0.3, 0.9, 0.0], [0.0; 3]],
        )
    }

    fn tet() -> Affine {
        Affine::new(
            3,
            &[
                [0.0, 0.0, 0.0],
                [1.0, 0.1, 0.0],
                [0.2, 1.0, 0.1],
                [0.1, 0.3, 0.8],
            ],
        )
    }

    #[test]
    fn partition_of_unity_and_nodality() {
        for k in 1..=3 {
            let mut pts: Vec<[f64; 4]> = Vec::new();
            for i in 0..=k {
                let mut b = [0.0; 4];
                b[i] = 1.0;
                pts.push(b);
            }
            for &(i, j) in simplex_edges(k) {
                let mut b = [0.0; 4];
                b[i] = 0.5;
                b[j] = 0.5;
                pts.push(b);
            }
            for (p, b) in pts.iter().enumerate() {
                let v = p2_values(k, b);
                for q in 0..n_basis(k) {
                    let want = if p == q { 1.0 } else { 0.0 };
                    assert!((v[q] - want).abs() < 1e-15);
                }
                assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradients_reproduce_quadratics() {
        for aff in [tri(), tet()] {
            let d = aff.dim;
            let f = |x: &Point| x[0] * x[0] + 2.0 * x[0] * x[1] - x[1] * x[2] + 3.0 * x[2];
            let df = |x: &Point| [2.0 * x[0] + 2.0 * x[1], 2.0 * x[0] - x[2], -x[1] + 3.0];
            let mut nodes = Vec::new();
            for i in 0..=d {
                let mut b = [0.0; 4];
                b[i] = 1.0;
                nodes.push(b);
            }
            for &(i, j) in simplex_edges(d) {
                let mut b = [0.0; 4];
                b[i] = 0.5;
                b[j] = 0.5;
                nodes.push(b);
            }
            let vals: Vec<f64> = nodes.iter().map(|b| f(&aff.point(b))).collect();
            let b = [0.2, 0.3, 0.4, 0.1];
            let b = if d == 2 { [0.2, 0.3, 0.5, 0.0] } else { b };
            let g = aff.grads(&b);
            let x = aff.point(&b);
            for k in 0..d {
                let got: f64 = (0..nodes.len()).map(|a| vals[a] * g[a][k]).sum();
                assert!((got - df(&x)[k]).abs() < 1e-12);
            }
            let h = aff.hessians();
            let got: f64 = (0..nodes.len()).map(|a| vals[a] * h[a][0][1]).sum();
            assert!((got - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bary_inverts_point() {
        let aff = tet();
        let b = [0.1, 0.2, 0.3, 0.4];
        let back = aff.bary(&aff.point(&b));
        for i in 0..4 {
            assert!((back[i] - b[i]).abs() < 1e-14);
        }
        let r = simplex_rule(3, 2);
        let v: f64 = r.weights.iter().sum::<f64>() * 6.0 * aff.volume;
        assert!(v > 0.0);
    }
}
