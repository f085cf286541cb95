//! Legendre basis machinery on Gauss–Lobatto–Legendre (GLL) points.
//!
//! Nodal element data lives on the tensor-product GLL grid of order `p`
//! (`p + 1` points per axis). The discrete Legendre transform maps those
//! nodal values to Legendre coefficients using the discrete orthogonality
//! of the Legendre polynomials under GLL quadrature:
//!
//! ```text
//! sum_i w_i P_m(x_i) P_n(x_i) = gamma_n * delta_mn
//! gamma_n = 2 / (2n + 1)   for n < p
//! gamma_p = 2 / p
//! ```
//!
//! so the inverse Vandermonde matrix is `V^-1[n][i] = w_i P_n(x_i) / gamma_n`
//! and the GLL-weighted nodal norm equals the gamma-weighted coefficient norm.

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 32;

const NEWTON_TOL: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 100;

/// One-dimensional GLL basis of order `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis1D {
    order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Discrete norms `gamma_n` of the Legendre modes.
    gammas: Vec<f64>,
    /// Row-major, `vandermonde[i * n + j] = P_j(x_i)`.
    vandermonde: Vec<f64>,
    /// Row-major, `inverse_vandermonde[j * n + i] = w_i P_j(x_i) / gamma_j`.
    inverse_vandermonde: Vec<f64>,
}

impl Basis1D {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of nodes per axis, `p + 1`.
    pub fn len(&self) -> usize {
        self.order + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of nodes in a 3D element, `(p + 1)^3`.
    pub fn element_len(&self) -> usize {
        self.len().pow(3)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn vandermonde(&self) -> &[f64] {
        &self.vandermonde
    }

    pub fn inverse_vandermonde(&self) -> &[f64] {
        &self.inverse_vandermonde
    }

    /// Tensor-product weight `w_i w_j w_k` at a flat index.
    pub fn weight3(&self, flat: usize) -> f64 {
        let (i, j, k) = unflatten(flat, self.len());
        self.weights[i] * self.weights[j] * self.weights[k]
    }

    /// Tensor-product metric factor `gamma_l gamma_m gamma_n` at a flat index.
    pub fn gamma3(&self, flat: usize) -> f64 {
        let (l, m, n) = unflatten(flat, self.len());
        self.gammas[l] * self.gammas[m] * self.gammas[n]
    }

    /// Evaluates a coefficient tensor at a point of the reference cube.
    pub fn evaluate(&self, coeffs: &[f64], xi: f64, eta: f64, zeta: f64) -> f64 {
        let n = self.len();
        let px = legendre_all(self.order, xi);
        let py = legendre_all(self.order, eta);
        let pz = legendre_all(self.order, zeta);
        let mut acc = 0.0;
        for k in 0..n {
            let mut plane = 0.0;
            for j in 0..n {
                let row = &coeffs[(k * n + j) * n..(k * n + j + 1) * n];
                let line: f64 = row.iter().zip(&px).map(|(c, p)| c * p).sum();
                plane += line * py[j];
            }
            acc += plane * pz[k];
        }
        acc
    }
}

/// Splits a flat tensor index into `(i, j, k)` with `i` fastest.
pub fn unflatten(flat: usize, n: usize) -> (usize, usize, usize) {
    (flat % n, (flat / n) % n, flat / (n * n))
}

pub fn flatten(i: usize, j: usize, k: usize, n: usize) -> usize {
    i + n * (j + n * k)
}

/// `P_n(x)` by Bonnet's three-term recurrence.
pub fn legendre_eval(n: usize, x: f64) -> f64 {
    legendre_with_prev(n, x).0
}

/// Returns `(P_n(x), P_{n-1}(x))`; for `n == 0` the second entry is 0.
fn legendre_with_prev(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut prev = 1.0;
    let mut cur = x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * cur - kf * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// `[P_0(x), ..., P_n(x)]`.
pub fn legendre_all(n: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    if n >= 1 {
        out.push(x);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * out[k] - kf * out[k - 1]) / (kf + 1.0);
        out.push(next);
    }
    out
}

/// Builds the GLL basis of order `p`.
///
/// Interior nodes are the roots of `P'_p`, found by Newton iteration on
/// `(1 - x^2) P'_p(x)` from Chebyshev–Gauss–Lobatto starting points.
pub fn gll_basis(p: usize) -> Result<Basis1D> {
    if !(1..=MAX_ORDER).contains(&p) {
        return Err(Error::InvalidOrder(p));
    }
    let n = p + 1;
    let pf = p as f64;
    let mut nodes = vec![0.0; n];
    nodes[0] = -1.0;
    nodes[p] = 1.0;
    for (i, node) in nodes.iter_mut().enumerate().take(p).skip(1) {
        let mut x = -(std::f64::consts::PI * i as f64 / pf).cos();
        for _ in 0..NEWTON_MAX_ITER {
            let (pn, pn1) = legendre_with_prev(p, x);
            // (1 - x^2) P'_p = p (P_{p-1} - x P_p); its derivative is -p(p+1) P_p.
            let g = pf * (pn1 - x * pn);
            let dg = -pf * (pf + 1.0) * pn;
            let dx = g / dg;
            x -= dx;
            if dx.abs() < NEWTON_TOL {
                break;
            }
        }
        *node = x;
    }
    // Symmetrize to remove last-bit asymmetry between mirrored roots.
    for i in 0..n / 2 {
        let m = 0.5 * (nodes[p - i] - nodes[i]);
        nodes[i] = -m;
        nodes[p - i] = m;
    }
    if n % 2 == 1 {
        nodes[p / 2] = 0.0;
    }

    let weights: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            let pn = legendre_eval(p, x);
            2.0 / (pf * (pf + 1.0) * pn * pn)
        })
        .collect();

    let gammas: Vec<f64> = (0..n)
        .map(|k| {
            if k == p {
                2.0 / pf
            } else {
                2.0 / (2.0 * k as f64 + 1.0)
            }
        })
        .collect();

    let mut vandermonde = vec![0.0; n * n];
    for (i, &x) in nodes.iter().enumerate() {
        let row = legendre_all(p, x);
        vandermonde[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    let mut inverse_vandermonde = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            inverse_vandermonde[j * n + i] = weights[i] * vandermonde[i * n + j] / gammas[j];
        }
    }

    Ok(Basis1D {
        order: p,
        nodes,
        weights,
        gammas,
        vandermonde,
        inverse_vandermonde,
    })
}

/// Nodal values of one element on the `(p+1)^3` GLL grid, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementField {
    pub order: usize,
    pub element_id: u64,
    pub values: Vec<f64>,
}

impl ElementField {
    pub fn new(order: usize, element_id: u64, values: Vec<f64>) -> Result<Self> {
        let expected = (order + 1).pow(3);
        if values.len() != expected {
            return Err(Error::dimension(format!(
                "element {element_id}: {} values for order {order}, expected {expected}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::dimension(format!(
                "element {element_id}: non-finite nodal value"
            )));
        }
        Ok(Self {
            order,
            element_id,
            values,
        })
    }

    pub fn constant(order: usize, element_id: u64, value: f64) -> Self {
        Self {
            order,
            element_id,
            values: vec![value; (order + 1).pow(3)],
        }
    }
}

/// Legendre coefficients of one element plus the mask of retained modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBlock {
    pub order: usize,
    pub element_id: u64,
    pub coeffs: Vec<f64>,
    pub kept_mask: Vec<bool>,
}

impl SpectralBlock {
    pub fn kept_count(&self) -> usize {
        self.kept_mask.iter().filter(|&&k| k).count()
    }

    /// Total weighted energy `sum gamma3 * c^2`, equal to the GLL-weighted
    /// nodal norm squared of the represented field.
    pub fn energy(&self, basis: &Basis1D) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .zip(&self.kept_mask)
            .filter(|(_, &kept)| kept)
            .map(|((idx, c), _)| basis.gamma3(idx) * c * c)
            .sum()
    }
}

/// Applies the `n x n` row-major matrix along each of the three axes.
fn apply_tensor(mat: &[f64], input: &[f64], n: usize) -> Vec<f64> {
    let mut a = vec![0.0; input.len()];
    let mut b = vec![0.0; input.len()];
    // x axis
    for jk in 0..n * n {
        let src = &input[jk * n..(jk + 1) * n];
        for r in 0..n {
            let m = &mat[r * n..(r + 1) * n];
            a[jk * n + r] = m.iter().zip(src).map(|(x, y)| x * y).sum();
        }
    }
    // y axis
    for k in 0..n {
        for i in 0..n {
            for r in 0..n {
                let m = &mat[r * n..(r + 1) * n];
                let mut acc = 0.0;
                for (j, mv) in m.iter().enumerate() {
                    acc += mv * a[i + n * (j + n * k)];
                }
                b[i + n * (r + n * k)] = acc;
            }
        }
    }
    // z axis
    for j in 0..n {
        for i in 0..n {
            for r in 0..n {
                let m = &mat[r * n..(r + 1) * n];
                let mut acc = 0.0;
                for (k, mv) in m.iter().enumerate() {
                    acc += mv * b[i + n * (j + n * k)];
                }
                a[i + n * (j + n * r)] = acc;
            }
        }
    }
    a
}

/// Applies a 1D matrix along a single axis (0 = x, 1 = y, 2 = z).
pub fn apply_axis(mat: &[f64], input: &[f64], n: usize, axis: usize, out: &mut [f64]) {
    let stride = n.pow(axis as u32);
    for (flat, slot) in out.iter_mut().enumerate() {
        let pos = (flat / stride) % n;
        let base = flat - pos * stride;
        let m = &mat[pos * n..(pos + 1) * n];
        let mut acc = 0.0;
        for (q, mv) in m.iter().enumerate() {
            acc += mv * input[base + q * stride];
        }
        *slot = acc;
    }
}

fn check_order(kind: &str, found: usize, basis: &Basis1D) -> Result<()> {
    if found != basis.order() {
        return Err(Error::dimension(format!(
            "{kind} order {found} does not match basis order {}",
            basis.order()
        )));
    }
    Ok(())
}

/// Nodal values to Legendre coefficients.
pub fn dlt_forward(field: &ElementField, basis: &Basis1D) -> Result<SpectralBlock> {
    check_order("field", field.order, basis)?;
    if field.values.len() != basis.element_len() {
        return Err(Error::dimension("field value count"));
    }
    let coeffs = apply_tensor(basis.inverse_vandermonde(), &field.values, basis.len());
    Ok(SpectralBlock {
        order: field.order,
        element_id: field.element_id,
        kept_mask: vec![true; coeffs.len()],
        coeffs,
    })
}

/// Legendre coefficients (masked) back to nodal values.
pub fn dlt_inverse(block: &SpectralBlock, basis: &Basis1D) -> Result<ElementField> {
    check_order("block", block.order, basis)?;
    if block.coeffs.len() != basis.element_len() || block.kept_mask.len() != block.coeffs.len() {
        return Err(Error::dimension("block coefficient count"));
    }
    let masked: Vec<f64> = block
        .coeffs
        .iter()
        .zip(&block.kept_mask)
        .map(|(&c, &k)| if k { c } else { 0.0 })
        .collect();
    let values = apply_tensor(basis.vandermonde(), &masked, basis.len());
    Ok(ElementField {
        order: block.order,
        element_id: block.element_id,
        values,
    })
}

/// Differentiation matrix on the GLL nodes, row-major: `D[i][j] = l'_j(x_i)`.
pub fn derivative_matrix(basis: &Basis1D) -> Vec<f64> {
    let n = basis.len();
    let p = basis.order() as f64;
    let x = basis.nodes();
    let pv: Vec<f64> = x.iter().map(|&xi| legendre_eval(basis.order(), xi)).collect();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] = if i != j {
                pv[i] / (pv[j] * (x[i] - x[j]))
            } else if i == 0 {
                -p * (p + 1.0) / 4.0
            } else if i == n - 1 {
                p * (p + 1.0) / 4.0
            } else {
                0.0
            };
        }
    }
    d
}
