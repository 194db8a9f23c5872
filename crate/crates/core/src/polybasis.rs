//! Lagrange bases on the reference interval and triangle, plus quadrature.
//!
//! Reference interval is `[0, 1]`; reference triangle has vertices
//! `(0,0), (1,0), (0,1)`. Interval points are stored as `[t, 0.0]` so both
//! elements share one point type.

use nalgebra::DMatrix;
use thiserror::Error;

/// Highest polynomial degree a basis can be built for.
pub const MAX_DEGREE: usize = 4;
/// Highest exactness a quadrature rule can be requested with.
pub const MAX_EXACTNESS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RefElement {
    Interval,
    Triangle,
}

impl RefElement {
    /// Lebesgue measure of the reference element.
    pub fn measure(self) -> f64 {
        match self {
            RefElement::Interval => 1.0,
            RefElement::Triangle => 0.5,
        }
    }

    /// Dimension of P_k on this element.
    pub fn poly_dim(self, k: usize) -> usize {
        match self {
            RefElement::Interval => k + 1,
            RefElement::Triangle => (k + 1) * (k + 2) / 2,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("unsupported polynomial degree {0} (supported 0..={MAX_DEGREE})")]
    UnsupportedDegree(usize),
    #[error("unsupported quadrature exactness {0} (supported 0..={MAX_EXACTNESS})")]
    UnsupportedExactness(usize),
}

/// A quadrature rule on a reference element.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule {
    pub element: RefElement,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub exactness: usize,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn integrate(&self, f: impl Fn([f64; 2]) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| w * f(p))
            .sum()
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m {
        // Chebyshev-like initial guess on [-1, 1], descending order.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(m, x);
        if d != 0.0 {
            dp = d;
        }
        // map to [0, 1], ascending
        nodes[m - 1 - i] = 0.5 * (x + 1.0);
        weights[m - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if m == 0 {
        return (1.0, 0.0);
    }
    for n in 2..=m {
        let n = n as f64;
        let p2 = ((2.0 * n - 1.0) * x * p1 - (n - 1.0) * p0) / n;
        p0 = p1;
        p1 = p2;
    }
    let m = m as f64;
    let d = m * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Rule of at least the requested exactness. Triangle rules are collapsed
/// (Duffy) tensor products of Gauss-Legendre rules; all weights are positive.
pub fn quadrature_rule(element: RefElement, exactness: usize) -> Result<QuadRule, BasisError> {
    if exactness > MAX_EXACTNESS {
        return Err(BasisError::UnsupportedExactness(exactness));
    }
    let rule = match element {
        RefElement::Interval => {
            let m = exactness / 2 + 1;
            let (t, w) = gauss_legendre(m);
            QuadRule {
                element,
                points: t.into_iter().map(|t| [t, 0.0]).collect(),
                weights: w,
                exactness,
            }
        }
        RefElement::Triangle => {
            // x = a, y = b (1 - a), jacobian (1 - a): degree n + 1 in a.
            let m = (exactness + 2).div_ceil(2);
            let (t, w) = gauss_legendre(m);
            let mut points = Vec::with_capacity(m * m);
            let mut weights = Vec::with_capacity(m * m);
            for (a, wa) in t.iter().zip(&w) {
                for (b, wb) in t.iter().zip(&w) {
                    points.push([*a, b * (1.0 - a)]);
                    weights.push(wa * wb * (1.0 - a));
                }
            }
            QuadRule {
                element,
                points,
                weights,
                exactness,
            }
        }
    };
    Ok(rule)
}

/// Equispaced Lagrange nodes for P_k.
pub fn lagrange_nodes(element: RefElement, k: usize) -> Vec<[f64; 2]> {
    match (element, k) {
        (RefElement::Interval, 0) => vec![[0.5, 0.0]],
        (RefElement::Triangle, 0) => vec![[1.0 / 3.0, 1.0 / 3.0]],
        (RefElement::Interval, _) => (0..=k).map(|i| [i as f64 / k as f64, 0.0]).collect(),
        (RefElement::Triangle, _) => {
            let mut nodes = Vec::new();
            for j in 0..=k {
                for i in 0..=(k - j) {
                    nodes.push([i as f64 / k as f64, j as f64 / k as f64]);
                }
            }
            nodes
        }
    }
}

fn monomial_exponents(element: RefElement, k: usize) -> Vec<(i32, i32)> {
    match element {
        RefElement::Interval => (0..=k as i32).map(|a| (a, 0)).collect(),
        RefElement::Triangle => {
            let mut e = Vec::new();
            for total in 0..=k as i32 {
                for b in 0..=total {
                    e.push((total - b, b));
                }
            }
            e
        }
    }
}

fn powi(x: f64, e: i32) -> f64 {
    if e <= 0 {
        1.0
    } else {
        x.powi(e)
    }
}

/// Nodal Lagrange basis of P_k, expressed in the monomial basis.
#[derive(Debug, Clone)]
pub struct LagrangeBasis {
    element: RefElement,
    degree: usize,
    nodes: Vec<[f64; 2]>,
    exponents: Vec<(i32, i32)>,
    // phi_i = sum_m coeffs[(m, i)] x^a_m y^b_m
    coeffs: DMatrix<f64>,
}

impl LagrangeBasis {
    pub fn new(element: RefElement, degree: usize) -> Result<Self, BasisError> {
        if degree > MAX_DEGREE {
            return Err(BasisError::UnsupportedDegree(degree));
        }
        let nodes = lagrange_nodes(element, degree);
        let exponents = monomial_exponents(element, degree);
        let n = nodes.len();
        let vandermonde = DMatrix::from_fn(n, n, |j, m| {
            let (a, b) = exponents[m];
            powi(nodes[j][0], a) * powi(nodes[j][1], b)
        });
        let coeffs = vandermonde
            .try_inverse()
            .expect("Lagrange Vandermonde matrix is invertible for equispaced nodes");
        Ok(Self {
            element,
            degree,
            nodes,
            exponents,
            coeffs,
        })
    }

    pub fn element(&self) -> RefElement {
        self.element
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn values(&self, p: [f64; 2]) -> Vec<f64> {
        let mono: Vec<f64> = self
            .exponents
            .iter()
            .map(|&(a, b)| powi(p[0], a) * powi(p[1], b))
            .collect();
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|m| self.coeffs[(m, i)] * mono[m]).sum())
            .collect()
    }

    /// Reference gradients; the second component is zero on the interval.
    pub fn gradients(&self, p: [f64; 2]) -> Vec<[f64; 2]> {
        let dmono: Vec<[f64; 2]> = self
            .exponents
            .iter()
            .map(|&(a, b)| {
                let dx = if a > 0 {
                    a as f64 * powi(p[0], a - 1) * powi(p[1], b)
                } else {
                    0.0
                };
                let dy = if b > 0 {
                    b as f64 * powi(p[0], a) * powi(p[1], b - 1)
                } else {
                    0.0
                };
                [dx, dy]
            })
            .collect();
        (0..self.dim())
            .map(|i| {
                let mut g = [0.0; 2];
                for (m, d) in dmono.iter().enumerate() {
                    let c = self.coeffs[(m, i)];
                    g[0] += c * d[0];
                    g[1] += c * d[1];
                }
                g
            })
            .collect()
    }

    pub fn tabulate(&self, points: &[[f64; 2]]) -> BasisTables {
        let n = self.dim();
        let mut values = Vec::with_capacity(points.len() * n);
        let mut grads = Vec::with_capacity(points.len() * n);
        for &p in points {
            values.extend(self.values(p));
            grads.extend(self.gradients(p));
        }
        BasisTables {
            ndofs: n,
            npoints: points.len(),
            values,
            grads,
        }
    }
}

/// Basis values and reference gradients at a set of points, point-major.
#[derive(Debug, Clone)]
pub struct BasisTables {
    pub ndofs: usize,
    pub npoints: usize,
    values: Vec<f64>,
    grads: Vec<[f64; 2]>,
}

impl BasisTables {
    #[inline]
    pub fn value(&self, point: usize, dof: usize) -> f64 {
        self.values[point * self.ndofs + dof]
    }

    #[inline]
    pub fn grad(&self, point: usize, dof: usize) -> [f64; 2] {
        self.grads[point * self.ndofs + dof]
    }

    #[inline]
    pub fn values_at(&self, point: usize) -> &[f64] {
        &self.values[point * self.ndofs..(point + 1) * self.ndofs]
    }

    #[inline]
    pub fn grads_at(&self, point: usize) -> &[[f64; 2]] {
        &self.grads[point * self.ndofs..(point + 1) * self.ndofs]
    }
}

/// Tabulate the degree-`k` Lagrange basis at `points`.
pub fn basis_eval(
    element: RefElement,
    k: usize,
    points: &[[f64; 2]],
) -> Result<BasisTables, BasisError> {
    Ok(LagrangeBasis::new(element, k)?.tabulate(points))
}
