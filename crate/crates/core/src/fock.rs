//! Energy-basis (Fock) representation of system states and reduced maps.
//!
//! Matrix elements are computed in phase space. With dimensionless
//! quadratures x = q sqrt(m w), p = p / sqrt(m w) and xi = s_r + i s_i, the
//! displacement is D(xi) = exp(i k.r) with k = sqrt2 (s_i, -s_r), and
//! Tr(rho A) = (1/pi) int chi_rho(xi) chi_A(-xi) d^2 xi. A Gaussian channel
//! acts as chi_out(k) = chi_in(L^T k) exp(-k^T N k / 2).

use std::f64::consts::PI;

use log::warn;
use nalgebra::{DMatrix, Matrix2, SymmetricEigen, Vector2};
use num_complex::Complex64;

use crate::dynamics::GaussianChannel;
use crate::error::{Error, Result};
use crate::model::{GaussianState, SystemOscillator};
use crate::par;

const QUADRATURE_TOL: f64 = 1e-9;
const MAX_DOUBLINGS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FockBasis {
    n_max: usize,
    oscillator: SystemOscillator,
}

impl FockBasis {
    pub fn new(n_max: usize, oscillator: SystemOscillator) -> Result<Self> {
        if n_max < 2 {
            return Err(Error::param("n_max", format!("must be at least 2, got {n_max}")));
        }
        Ok(FockBasis { n_max, oscillator })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        self.n_max + 1
    }

    pub fn oscillator(&self) -> &SystemOscillator {
        &self.oscillator
    }

    pub fn energy(&self, n: usize) -> f64 {
        self.oscillator.frequency * (n as f64 + 0.5)
    }

    fn scale(&self) -> f64 {
        (self.oscillator.mass * self.oscillator.frequency).sqrt()
    }

    pub fn dimensionless_covariance(&self, cov: &Matrix2<f64>) -> Matrix2<f64> {
        let s = Matrix2::new(self.scale(), 0.0, 0.0, 1.0 / self.scale());
        s * cov * s
    }

    pub fn dimensionless_mean(&self, mean: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(mean[0] * self.scale(), mean[1] / self.scale())
    }

    fn dimensionless_channel(&self, ch: &GaussianChannel) -> (Matrix2<f64>, Matrix2<f64>) {
        let s = Matrix2::new(self.scale(), 0.0, 0.0, 1.0 / self.scale());
        let si = Matrix2::new(1.0 / self.scale(), 0.0, 0.0, self.scale());
        (s * ch.drift * si, s * ch.noise * s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FockDensityMatrix {
    elements: DMatrix<Complex64>,
}

impl FockDensityMatrix {
    pub fn new(elements: DMatrix<Complex64>) -> Result<Self> {
        if elements.nrows() != elements.ncols() {
            return Err(Error::DimensionMismatch {
                expected: elements.nrows(),
                found: elements.ncols(),
            });
        }
        Ok(FockDensityMatrix { elements })
    }

    /// |n><m| in a basis of dimension `dim`.
    pub fn outer(n: usize, m: usize, dim: usize) -> Self {
        let mut e = DMatrix::zeros(dim, dim);
        e[(n, m)] = Complex64::new(1.0, 0.0);
        FockDensityMatrix { elements: e }
    }

    pub fn from_real(m: &DMatrix<f64>) -> Self {
        FockDensityMatrix {
            elements: m.map(|x| Complex64::new(x, 0.0)),
        }
    }

    pub fn dim(&self) -> usize {
        self.elements.nrows()
    }

    pub fn elements(&self) -> &DMatrix<Complex64> {
        &self.elements
    }

    pub fn get(&self, n: usize, m: usize) -> Complex64 {
        self.elements[(n, m)]
    }

    pub fn trace(&self) -> Complex64 {
        self.elements.trace()
    }

    /// 1 - Re Tr, the weight lost beyond the truncation.
    pub fn leakage(&self) -> f64 {
        1.0 - self.trace().re
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|n| self.elements[(n, n)].re).collect()
    }

    pub fn diagonal_part(&self) -> Self {
        let mut e = DMatrix::zeros(self.dim(), self.dim());
        for n in 0..self.dim() {
            e[(n, n)] = self.elements[(n, n)];
        }
        FockDensityMatrix { elements: e }
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.elements - self.elements.adjoint()).iter().fold(0.0, |a, z| a.max(z.norm()))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.elements + self.elements.adjoint()) * Complex64::new(0.5, 0.0);
        SymmetricEigen::new(h).eigenvalues.min()
    }

    pub fn max_abs_diff(&self, other: &FockDensityMatrix) -> f64 {
        (&self.elements - &other.elements).iter().fold(0.0, |a, z| a.max(z.norm()))
    }

    /// Largest |<n|rho|m>| with n != m.
    pub fn max_off_diagonal(&self) -> f64 {
        let mut best = 0.0f64;
        for n in 0..self.dim() {
            for m in 0..self.dim() {
                if n != m {
                    best = best.max(self.elements[(n, m)].norm());
                }
            }
        }
        best
    }

    /// Removes negative eigenvalues down to -1e-8 (roundoff) and rejects
    /// anything more negative.
    pub fn clip_negative(&self) -> Result<Self> {
        let h = (&self.elements + self.elements.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(h.clone());
        let min = eig.eigenvalues.min();
        if min >= 0.0 {
            return Ok(FockDensityMatrix { elements: h });
        }
        if min < -1e-8 {
            return Err(Error::Unphysical(format!("density matrix eigenvalue {min:e}")));
        }
        warn!("clipping density-matrix eigenvalue {min:e}");
        let vals = eig.eigenvalues.map(|x| Complex64::new(x.max(0.0), 0.0));
        let v = &eig.eigenvectors;
        Ok(FockDensityMatrix {
            elements: v * DMatrix::from_diagonal(&vals) * v.adjoint(),
        })
    }

    pub fn validate(&self, leakage_limit: f64) -> Result<()> {
        if self.elements.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Unphysical("non-finite matrix element".into()));
        }
        if self.hermiticity_error() > 1e-10 {
            return Err(Error::Unphysical(format!(
                "hermiticity error {:e}",
                self.hermiticity_error()
            )));
        }
        let leak = self.leakage();
        if leak > leakage_limit || leak < -1e-10 {
            return Err(Error::TruncationLeakage {
                leakage: leak,
                limit: leakage_limit,
            });
        }
        let min = self.min_eigenvalue();
        if min < -1e-8 {
            return Err(Error::Unphysical(format!("density matrix eigenvalue {min:e}")));
        }
        Ok(())
    }
}

/// Gauss-Hermite rule for the weight exp(-x^2).
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// w_i exp(x_i^2), finite where w_i underflows
    pub scaled_weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1);
        // Golub-Welsch start, Newton polish, weights from the orthonormal
        // Hermite functions so that no factor exp(x^2) is formed
        let jacobi = DMatrix::from_fn(order, order, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let mut nodes: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
        nodes.sort_by(f64::total_cmp);
        let mut scaled = Vec::with_capacity(order);
        for x in nodes.iter_mut() {
            for _ in 0..3 {
                let (psi, _) = hermite_functions(*x, order);
                let step = psi[order] / ((2.0 * order as f64).sqrt() * psi[order - 1]);
                if step.is_finite() {
                    *x -= step;
                }
            }
            let (psi, _) = hermite_functions(*x, order);
            let s: f64 = psi[..order].iter().map(|p| p * p).sum();
            scaled.push(1.0 / s);
        }
        // symmetrize
        for i in 0..order / 2 {
            let j = order - 1 - i;
            let x = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -x;
            nodes[j] = x;
            let w = 0.5 * (scaled[i] + scaled[j]);
            scaled[i] = w;
            scaled[j] = w;
        }
        if order % 2 == 1 {
            nodes[order / 2] = 0.0;
        }
        let weights = nodes.iter().zip(&scaled).map(|(x, w)| w * (-x * x).exp()).collect();
        GaussHermite {
            nodes,
            weights,
            scaled_weights: scaled,
        }
    }
}

/// Orthonormal Hermite functions psi_0..psi_order at x, and exp(-x^2/2).
fn hermite_functions(x: f64, order: usize) -> (Vec<f64>, f64) {
    let g = (-0.5 * x * x).exp();
    let mut psi = vec![0.0; order + 1];
    psi[0] = PI.powf(-0.25) * g;
    if order >= 1 {
        psi[1] = 2f64.sqrt() * x * psi[0];
    }
    for k in 1..order {
        psi[k + 1] = ((2.0 / (k as f64 + 1.0)).sqrt()) * x * psi[k]
            - ((k as f64) / (k as f64 + 1.0)).sqrt() * psi[k - 1];
    }
    (psi, g)
}

/// <a|D(alpha)|b> for a, b < dim, row-major into `out`.
pub fn displacement_elements(alpha: Complex64, dim: usize, out: &mut [Complex64]) {
    let ac = alpha.conj();
    out[0] = Complex64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for a in 1..dim {
        out[a * dim] = alpha * out[(a - 1) * dim] / (a as f64).sqrt();
    }
    for b in 0..dim - 1 {
        let inv = 1.0 / ((b + 1) as f64).sqrt();
        for a in 0..dim {
            let mut v = -ac * out[a * dim + b];
            if a > 0 {
                v += (a as f64).sqrt() * out[(a - 1) * dim + b];
            }
            out[a * dim + b + 1] = v * inv;
        }
    }
}

/// Tensor-product Gauss-Hermite rule for int F(s) d^2 s where F carries the
/// Gaussian exp(-s^T Q s / 2). Weights include the Jacobian and 1/pi.
struct PlaneRule {
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

impl PlaneRule {
    fn new(q: &Matrix2<f64>, order: usize) -> Result<Self> {
        let eig = q.symmetric_eigen();
        if !(eig.eigenvalues.min() > 0.0) {
            return Err(Error::Unphysical("phase-space Gaussian is not decaying".into()));
        }
        let scale = eig.eigenvalues.map(|x| (2.0 / x).sqrt());
        let jac = scale[0] * scale[1];
        let gh = GaussHermite::new(order);
        let mut points = Vec::with_capacity(order * order);
        let mut weights = Vec::with_capacity(order * order);
        for i in 0..order {
            for j in 0..order {
                let eta = Vector2::new(gh.nodes[i] * scale[0], gh.nodes[j] * scale[1]);
                let s = eig.eigenvectors * eta;
                points.push([s[0], s[1]]);
                weights.push(jac / PI * gh.scaled_weights[i] * gh.scaled_weights[j]);
            }
        }
        Ok(PlaneRule { points, weights })
    }
}

/// R^T M R with R = [[0, 1], [-1, 0]].
fn rotate(m: &Matrix2<f64>) -> Matrix2<f64> {
    let r = Matrix2::new(0.0, 1.0, -1.0, 0.0);
    r.transpose() * m * r
}

fn check_physical(cov: &Matrix2<f64>) -> Result<()> {
    let det = cov.determinant();
    if !(cov[(0, 0)] > 0.0 && cov[(1, 1)] > 0.0 && det >= 0.25 * (1.0 - 1e-10)) {
        return Err(Error::Unphysical(format!(
            "covariance violates the uncertainty relation (det {det})"
        )));
    }
    Ok(())
}

fn system_moments(state: &GaussianState) -> Result<(Vector2<f64>, Matrix2<f64>)> {
    match (state.system_mean(), state.system_covariance()) {
        (Some(m), Some(c)) => Ok((m, c)),
        _ => Err(Error::Layout("state has no system block".into())),
    }
}

/// Exact Fock matrix of a one-mode Gaussian state by the Bargmann-function
/// recursion.
pub fn gaussian_to_fock(state: &GaussianState, basis: &FockBasis) -> Result<FockDensityMatrix> {
    let (mean, cov) = system_moments(state)?;
    gaussian_moments_to_fock(&mean, &cov, basis)
}

pub fn gaussian_moments_to_fock(
    mean: &Vector2<f64>,
    cov: &Matrix2<f64>,
    basis: &FockBasis,
) -> Result<FockDensityMatrix> {
    let sigma = basis.dimensionless_covariance(cov);
    let r0 = basis.dimensionless_mean(mean);
    check_physical(&sigma)?;
    let dim = basis.dim();
    let sq = sigma + Matrix2::identity() * 0.5;
    let sq_inv = sq.try_inverse().ok_or_else(|| Error::Unphysical("singular covariance".into()))?;
    let i = Complex64::i();
    let one = Complex64::new(1.0, 0.0);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    // r = M (conj alpha, alpha)
    let m = [[one * h, one * h], [i * h, -i * h]];
    let mut b = [[Complex64::default(); 2]; 2];
    let mut y = [Complex64::default(); 2];
    for a in 0..2 {
        for c in 0..2 {
            let mut acc = Complex64::default();
            for k in 0..2 {
                for l in 0..2 {
                    acc += m[k][a] * sq_inv[(k, l)] * m[l][c];
                }
            }
            b[a][c] = acc;
        }
        let mut acc = Complex64::default();
        for k in 0..2 {
            for l in 0..2 {
                acc += m[k][a] * sq_inv[(k, l)] * r0[l];
            }
        }
        y[a] = acc;
    }
    b[0][1] -= one;
    b[1][0] -= one;
    let c = -0.5 * (r0.transpose() * sq_inv * r0)[(0, 0)];
    let norm = c.exp() / sq.determinant().sqrt();

    let mut hm = DMatrix::<Complex64>::zeros(dim, dim);
    hm[(0, 0)] = one;
    for mm in 0..dim - 1 {
        let mut v = y[1] * hm[(0, mm)];
        if mm > 0 {
            v -= b[1][1] * (mm as f64).sqrt() * hm[(0, mm - 1)];
        }
        hm[(0, mm + 1)] = v / ((mm + 1) as f64).sqrt();
    }
    for n in 0..dim - 1 {
        for mm in 0..dim {
            let mut v = y[0] * hm[(n, mm)];
            if n > 0 {
                v -= b[0][0] * (n as f64).sqrt() * hm[(n - 1, mm)];
            }
            if mm > 0 {
                v -= b[0][1] * (mm as f64).sqrt() * hm[(n, mm - 1)];
            }
            hm[(n + 1, mm)] = v / ((n + 1) as f64).sqrt();
        }
    }
    let mut elements = hm * Complex64::new(norm, 0.0);
    // exact hermiticity
    let sym = (&elements + elements.adjoint()) * Complex64::new(0.5, 0.0);
    elements = sym;
    Ok(FockDensityMatrix { elements })
}

/// Same matrix elements by phase-space quadrature of the characteristic
/// function, with order doubling until entries settle.
pub fn gaussian_to_fock_quadrature(
    state: &GaussianState,
    basis: &FockBasis,
) -> Result<FockDensityMatrix> {
    let (mean, cov) = system_moments(state)?;
    let sigma = basis.dimensionless_covariance(&cov);
    let r0 = basis.dimensionless_mean(&mean);
    check_physical(&sigma)?;
    let dim = basis.dim();
    let rs = rotate(&sigma);
    let q = Matrix2::identity() + rs * 2.0;
    let eval = |order: usize| -> Result<DMatrix<Complex64>> {
        let rule = PlaneRule::new(&q, order)?;
        let mut out = DMatrix::zeros(dim, dim);
        let mut d = vec![Complex64::default(); dim * dim];
        for (p, &w) in rule.points.iter().zip(&rule.weights) {
            let (sr, si) = (p[0], p[1]);
            // k = sqrt2 (s_i, -s_r)
            let phase = 2f64.sqrt() * (si * r0[0] - sr * r0[1]);
            let sv = Vector2::new(sr, si);
            let decay = (-(sv.transpose() * rs * sv)[(0, 0)]).exp();
            let chi = Complex64::from_polar(decay, phase);
            displacement_elements(Complex64::new(-sr, -si), dim, &mut d);
            let f = chi * w;
            for n in 0..dim {
                for m in 0..dim {
                    out[(n, m)] += f * d[n * dim + m];
                }
            }
        }
        Ok(out)
    };
    let (elements, _, _) = converge(2 * dim + 2, eval, |a, b| max_diff(a, b))?;
    Ok(FockDensityMatrix { elements })
}

fn max_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    (a - b).iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

fn converge<T>(
    start: usize,
    eval: impl Fn(usize) -> Result<T>,
    diff: impl Fn(&T, &T) -> f64,
) -> Result<(T, usize, f64)> {
    let mut order = start;
    let mut prev = eval(order)?;
    let mut change = f64::INFINITY;
    for _ in 0..MAX_DOUBLINGS {
        let next = eval(2 * order)?;
        change = diff(&prev, &next);
        order *= 2;
        prev = next;
        if change < QUADRATURE_TOL {
            return Ok((prev, order, change));
        }
    }
    Err(Error::QuadratureNotConverged {
        achieved: change,
        target: QUADRATURE_TOL,
        order,
    })
}

/// J_{nm;nu mu}(t) on a Fock truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatorTensor {
    dim: usize,
    time: f64,
    /// index ((n dim + m) dim + nu) dim + mu
    entries: Vec<Complex64>,
    order: usize,
    error_estimate: f64,
}

impl PropagatorTensor {
    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![Complex64::default(); dim.pow(4)];
        for n in 0..dim {
            for m in 0..dim {
                entries[((n * dim + m) * dim + n) * dim + m] = Complex64::new(1.0, 0.0);
            }
        }
        PropagatorTensor {
            dim,
            time: 0.0,
            entries,
            order: 0,
            error_estimate: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn quadrature_order(&self) -> usize {
        self.order
    }

    /// Largest entry change in the last order doubling.
    pub fn error_estimate(&self) -> f64 {
        self.error_estimate
    }

    pub fn get(&self, n: usize, m: usize, nu: usize, mu: usize) -> Complex64 {
        let d = self.dim;
        self.entries[((n * d + m) * d + nu) * d + mu]
    }

    pub fn max_abs_diff(&self, other: &PropagatorTensor) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .fold(0.0, |a, (x, y)| a.max((x - y).norm()))
    }
}

struct ChannelGeometry {
    /// s' = l s is the argument of the input characteristic function
    l: Matrix2<f64>,
    /// exp(-s^T noise s) multiplies the integrand
    noise: Matrix2<f64>,
    q: Matrix2<f64>,
}

fn channel_geometry(channel: &GaussianChannel, basis: &FockBasis) -> ChannelGeometry {
    let (drift, noise) = basis.dimensionless_channel(channel);
    let r = Matrix2::new(0.0, 1.0, -1.0, 0.0);
    let l = r.transpose() * drift.transpose() * r;
    let rn = rotate(&noise);
    let q = l.transpose() * l + Matrix2::identity() + rn * 2.0;
    ChannelGeometry { l, noise: rn, q }
}

fn tensor_entries(geo: &ChannelGeometry, dim: usize, order: usize) -> Result<Vec<Complex64>> {
    let d2 = dim * dim;
    let rule = PlaneRule::new(&geo.q, order)?;
    let npts = rule.points.len();
    let tables: Vec<(Vec<Complex64>, Vec<Complex64>)> = par::map_range(npts, |k| {
        let [sr, si] = rule.points[k];
        let s = Vector2::new(sr, si);
        let sp = geo.l * s;
        let damp = (-(s.transpose() * geo.noise * s)[(0, 0)]).exp() * rule.weights[k];
        let mut dout = vec![Complex64::default(); d2];
        let mut din = vec![Complex64::default(); d2];
        displacement_elements(Complex64::new(-sr, -si), dim, &mut dout);
        displacement_elements(Complex64::new(sp[0], sp[1]), dim, &mut din);
        for v in dout.iter_mut() {
            *v *= damp;
        }
        // reorder din[mu][nu] -> column (nu, mu)
        let din_t = (0..d2).map(|c| din[(c % dim) * dim + c / dim]).collect();
        (dout, din_t)
    });
    let ar = DMatrix::from_fn(npts, d2, |k, c| tables[k].0[c].re);
    let ai = DMatrix::from_fn(npts, d2, |k, c| tables[k].0[c].im);
    let br = DMatrix::from_fn(npts, d2, |k, c| tables[k].1[c].re);
    let bi = DMatrix::from_fn(npts, d2, |k, c| tables[k].1[c].im);
    let re = ar.tr_mul(&br) - ai.tr_mul(&bi);
    let im = ar.tr_mul(&bi) + ai.tr_mul(&br);
    let mut entries = vec![Complex64::default(); d2 * d2];
    for row in 0..d2 {
        for col in 0..d2 {
            entries[row * d2 + col] = Complex64::new(re[(row, col)], im[(row, col)]);
        }
    }
    Ok(entries)
}

pub fn propagator_tensor(channel: &GaussianChannel, basis: &FockBasis) -> Result<PropagatorTensor> {
    let dim = basis.dim();
    let geo = channel_geometry(channel, basis);
    let (entries, order, err) = converge(2 * dim, |order| tensor_entries(&geo, dim, order), |a, b| {
        a.iter().zip(b).fold(0.0, |acc, (x, y)| acc.max((x - y).norm()))
    })?;
    Ok(PropagatorTensor {
        dim,
        time: channel.time,
        entries,
        order,
        error_estimate: err,
    })
}

/// Tensor at a fixed Gauss-Hermite order per axis, without the doubling
/// loop; the error estimate is left at NaN.
pub fn propagator_tensor_at_order(
    channel: &GaussianChannel,
    basis: &FockBasis,
    order: usize,
) -> Result<PropagatorTensor> {
    if order == 0 {
        return Err(Error::param("order", "must be positive"));
    }
    let dim = basis.dim();
    let geo = channel_geometry(channel, basis);
    Ok(PropagatorTensor {
        dim,
        time: channel.time,
        entries: tensor_entries(&geo, dim, order)?,
        order,
        error_estimate: f64::NAN,
    })
}

/// Phi(rho) for an arbitrary operator rho, integrated directly; equal to the
/// tensor contraction but without forming the tensor.
pub fn apply_channel(
    channel: &GaussianChannel,
    rho: &FockDensityMatrix,
    basis: &FockBasis,
) -> Result<FockDensityMatrix> {
    let dim = basis.dim();
    if rho.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: rho.dim(),
        });
    }
    let geo = channel_geometry(channel, basis);
    let eval = |order: usize| -> Result<DMatrix<Complex64>> {
        let rule = PlaneRule::new(&geo.q, order)?;
        let mut out = DMatrix::zeros(dim, dim);
        let mut dout = vec![Complex64::default(); dim * dim];
        let mut din = vec![Complex64::default(); dim * dim];
        for (p, &w) in rule.points.iter().zip(&rule.weights) {
            let s = Vector2::new(p[0], p[1]);
            let sp = geo.l * s;
            displacement_elements(Complex64::new(sp[0], sp[1]), dim, &mut din);
            // chi_in(s') = sum rho_{nu mu} <mu|D|nu>
            let mut chi = Complex64::default();
            for nu in 0..dim {
                for mu in 0..dim {
                    let r = rho.elements[(nu, mu)];
                    if r != Complex64::default() {
                        chi += r * din[mu * dim + nu];
                    }
                }
            }
            let f = chi * (-(s.transpose() * geo.noise * s)[(0, 0)]).exp() * w;
            if f == Complex64::default() {
                continue;
            }
            displacement_elements(Complex64::new(-p[0], -p[1]), dim, &mut dout);
            for n in 0..dim {
                for m in 0..dim {
                    out[(n, m)] += f * dout[n * dim + m];
                }
            }
        }
        Ok(out)
    };
    let (elements, _, _) = converge(2 * dim, eval, max_diff)?;
    Ok(FockDensityMatrix { elements })
}

/// Contraction rho_nm(t) = sum J_{nm;nu mu} rho_{nu mu}(0).
pub fn evolve_density_matrix(
    rho0: &FockDensityMatrix,
    tensor: &PropagatorTensor,
) -> Result<FockDensityMatrix> {
    contract(rho0, tensor, false)
}

/// As `evolve_density_matrix` with every nu != mu term dropped.
pub fn secular_evolve(
    rho0: &FockDensityMatrix,
    tensor: &PropagatorTensor,
) -> Result<FockDensityMatrix> {
    contract(rho0, tensor, true)
}

fn contract(
    rho0: &FockDensityMatrix,
    tensor: &PropagatorTensor,
    secular: bool,
) -> Result<FockDensityMatrix> {
    let dim = tensor.dim;
    if rho0.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: rho0.dim(),
        });
    }
    let mut out = DMatrix::zeros(dim, dim);
    for n in 0..dim {
        for m in 0..dim {
            let mut acc = Complex64::default();
            for nu in 0..dim {
                for mu in 0..dim {
                    if secular && nu != mu {
                        continue;
                    }
                    acc += tensor.get(n, m, nu, mu) * rho0.elements[(nu, mu)];
                }
            }
            out[(n, m)] = acc;
        }
    }
    Ok(FockDensityMatrix { elements: out })
}

/// Thermal Fock state of the bare oscillator with mean occupation nbar.
pub fn thermal_fock(nbar: f64, dim: usize) -> FockDensityMatrix {
    let r = nbar / (1.0 + nbar);
    FockDensityMatrix {
        elements: DMatrix::from_fn(dim, dim, |n, m| {
            if n == m {
                Complex64::new(r.powi(n as i32) / (1.0 + nbar), 0.0)
            } else {
                Complex64::default()
            }
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_hermite_moments() {
        let gh = GaussHermite::new(20);
        let m0: f64 = gh.weights.iter().sum();
        assert!((m0 - PI.sqrt()).abs() < 1e-13);
        let m4: f64 = gh.nodes.iter().zip(&gh.weights).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m4 - 0.75 * PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn displacement_is_coherent_on_vacuum() {
        let alpha = Complex64::new(0.3, -0.7);
        let dim = 6;
        let mut d = vec![Complex64::default(); dim * dim];
        displacement_elements(alpha, dim, &mut d);
        let mut fact = 1.0;
        for a in 0..dim {
            if a > 0 {
                fact *= a as f64;
            }
            let expected = (-0.5 * alpha.norm_sqr()).exp() * alpha.powi(a as i32) / fact.sqrt();
            assert!((d[a * dim] - expected).norm() < 1e-15);
        }
        // unitarity restricted to low rows is approximate; check <1|D|1>
        let l = 1.0 - alpha.norm_sqr();
        assert!((d[dim + 1] - (-0.5 * alpha.norm_sqr()).exp() * l).norm() < 1e-15);
    }

    #[test]
    fn vacuum_maps_to_ground_projector() {
        let basis = FockBasis::new(4, SystemOscillator::natural()).unwrap();
        let state = GaussianState::system(Vector2::zeros(), Matrix2::identity() * 0.5);
        let rho = gaussian_to_fock(&state, &basis).unwrap();
        assert!((rho.get(0, 0).re - 1.0).abs() < 1e-15);
        assert!(rho.max_abs_diff(&FockDensityMatrix::outer(0, 0, 5)) < 1e-15);
        let rho = gaussian_to_fock_quadrature(&state, &basis).unwrap();
        assert!(rho.max_abs_diff(&FockDensityMatrix::outer(0, 0, 5)) < 1e-12);
    }

    #[test]
    fn rejects_unphysical_covariance() {
        let basis = FockBasis::new(4, SystemOscillator::natural()).unwrap();
        let state = GaussianState::system(Vector2::zeros(), Matrix2::identity() * 0.4);
        assert!(gaussian_to_fock(&state, &basis).is_err());
        assert!(FockBasis::new(1, SystemOscillator::natural()).is_err());
    }
}
