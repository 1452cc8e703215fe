//! Normal modes of a system coupled to many bath oscillators, without dense
//! matrices.
//!
//! In mass-weighted coordinates the potential matrix is an arrowhead
//! K = [[alpha, z^T], [z, diag(d)]] with d_j = w_j^2. Eigenvalues come from the
//! secular equation, solved in coordinates shifted to the nearest pole, and
//! eigenvectors from corrected couplings (Gu-Eisenstat), so that every
//! difference lambda_k - d_j is known to high relative accuracy.
//!
//! Momentum-coupled modes enter through the canonical swap
//! Q = p/(m w), P = -m w q, which turns them into position-coupled modes with
//! c = -m w^2 and leaves thermal bath states unchanged.

use nalgebra::{DMatrix, Matrix2};

use crate::dynamics::channel::GaussianChannel;
use crate::error::{Error, Result};
use crate::model::{BathLabel, QuadraticModel};
use crate::par;
use crate::units::Temperature;

const TIME_BATCH: usize = 64;
const POLE_BLOCK: usize = 512;

#[derive(Debug, Clone, Copy)]
enum Slot {
    Coupled { group: usize, weight: f64 },
    Decoupled,
}

#[derive(Debug, Clone)]
struct ModeInfo {
    label: BathLabel,
    index: usize,
    omega: f64,
    slot: Slot,
}

#[derive(Debug, Clone)]
pub struct StarModes {
    mass: f64,
    alpha: f64,
    poles: Vec<f64>,
    zhat: Vec<f64>,
    origin: Vec<Option<usize>>,
    mu: Vec<f64>,
    u0: Vec<f64>,
    modes: Vec<ModeInfo>,
}

/// Per-time coefficients of the system row of exp(t J A):
/// x_S(t) = sum_i c_i x_i + s_i pi_i, pi_S(t) = sum_i w_i x_i + c_i pi_i.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RowCoefficients {
    pub c: f64,
    pub s: f64,
    pub w: f64,
}

struct RowBatch {
    system: Vec<RowCoefficients>,
    /// rows 3t..3t+3 hold (c, s, w) of each pole group at time t
    groups: DMatrix<f64>,
}

impl StarModes {
    pub fn new(model: &QuadraticModel) -> Result<Self> {
        let sys = model.system();
        let m = sys.mass;
        let mut alpha = sys.frequency * sys.frequency;
        let mut raw = Vec::with_capacity(model.mode_count());
        for bath in model.baths() {
            for (index, mode) in bath.modes.iter().enumerate() {
                let d = mode.frequency * mode.frequency;
                let z = -mode.position_equivalent_coupling() / (m * mode.mass).sqrt();
                alpha += z * z / d;
                raw.push((bath.label, index, mode.frequency, d, z));
            }
        }
        let scale = raw.iter().map(|r| r.3).fold(alpha, f64::max);
        let tiny = 1e-150 * scale;

        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| raw[a].3.total_cmp(&raw[b].3).then(a.cmp(&b)));

        let mut modes: Vec<ModeInfo> = raw
            .iter()
            .map(|&(label, index, omega, _, _)| ModeInfo {
                label,
                index,
                omega,
                slot: Slot::Decoupled,
            })
            .collect();
        let mut poles = Vec::new();
        let mut zg = Vec::new();
        let mut start = 0;
        while start < order.len() {
            let d = raw[order[start]].3;
            let mut end = start;
            while end < order.len() && raw[order[end]].3 == d {
                end += 1;
            }
            let members: Vec<usize> = order[start..end]
                .iter()
                .copied()
                .filter(|&i| raw[i].4.abs() > tiny)
                .collect();
            if !members.is_empty() {
                let norm = members.iter().map(|&i| raw[i].4 * raw[i].4).sum::<f64>().sqrt();
                let group = poles.len();
                for &i in &members {
                    modes[i].slot = Slot::Coupled {
                        group,
                        weight: raw[i].4 / norm,
                    };
                }
                poles.push(d);
                zg.push(norm);
            }
            start = end;
        }

        let mut star = StarModes {
            mass: m,
            alpha,
            poles,
            zhat: Vec::new(),
            origin: Vec::new(),
            mu: Vec::new(),
            u0: Vec::new(),
            modes,
        };
        star.solve(&zg)?;
        Ok(star)
    }

    fn solve(&mut self, z: &[f64]) -> Result<()> {
        let n = self.poles.len();
        if n == 0 {
            self.origin = vec![None];
            self.mu = vec![self.alpha];
            self.u0 = vec![1.0];
        } else {
            let roots: Vec<(usize, f64)> = par::map_range(n + 1, |k| self.secular_root(z, k));
            self.origin = roots.iter().map(|r| Some(r.0)).collect();
            self.mu = roots.iter().map(|r| r.1).collect();
            self.zhat = par::map_range(n, |j| self.corrected_coupling(j, z[j]));
            self.u0 = par::map_range(n + 1, |k| {
                let s: f64 = (0..n)
                    .map(|g| {
                        let r = self.zhat[g] / self.diff(k, g);
                        r * r
                    })
                    .sum();
                1.0 / (1.0 + s).sqrt()
            });
        }
        let lowest = self.eigenvalue(0);
        if !(lowest > 0.0) {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: lowest,
            });
        }
        Ok(())
    }

    /// h(mu) = mu f(d_o + mu) with f the secular function; smooth at mu = 0.
    fn shifted_secular(&self, z: &[f64], o: usize, mu: f64) -> (f64, f64) {
        let d_o = self.poles[o];
        let a = self.alpha - d_o;
        let mut s = 0.0;
        let mut ds = 0.0;
        for (j, (&d, &zj)) in self.poles.iter().zip(z).enumerate() {
            if j == o {
                continue;
            }
            let r = 1.0 / ((d - d_o) - mu);
            let t = zj * zj * r;
            s += t;
            ds += t * r;
        }
        let h = mu * (a - mu) + z[o] * z[o] - mu * s;
        let dh = a - 2.0 * mu - s - mu * ds;
        (h, dh)
    }

    fn secular_root(&self, z: &[f64], k: usize) -> (usize, f64) {
        let n = self.poles.len();
        let znorm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        let spread = 1.01 * znorm + f64::MIN_POSITIVE;
        if k == 0 {
            let lo = self.alpha.min(self.poles[0]) - spread;
            return (0, self.bracketed_root(z, 0, lo - self.poles[0], 0.0));
        }
        if k == n {
            let hi = self.alpha.max(self.poles[n - 1]) + spread;
            return (n - 1, self.bracketed_root(z, n - 1, 0.0, hi - self.poles[n - 1]));
        }
        let gap = self.poles[k] - self.poles[k - 1];
        let (h_mid, _) = self.shifted_secular(z, k - 1, 0.5 * gap);
        if h_mid > 0.0 {
            // f > 0 at the midpoint: root lies in the right half
            let (h_right, _) = self.shifted_secular(z, k, -0.5 * gap);
            if h_right < 0.0 {
                return (k, self.bracketed_root(z, k, -0.5 * gap, 0.0));
            }
        }
        (k - 1, self.bracketed_root(z, k - 1, 0.0, 0.5 * gap))
    }

    fn bracketed_root(&self, z: &[f64], o: usize, mut a: f64, mut b: f64) -> f64 {
        let h_at = |mu: f64| self.shifted_secular(z, o, mu);
        let fa = if a == 0.0 { z[o] * z[o] } else { h_at(a).0 };
        let sign_a = fa > 0.0;
        let mut mu = 0.5 * (a + b);
        for _ in 0..500 {
            let (h, dh) = h_at(mu);
            if h == 0.0 {
                return mu;
            }
            if (h > 0.0) == sign_a {
                a = mu;
            } else {
                b = mu;
            }
            let mut next = mu - h / dh;
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if !(next > lo && next < hi) {
                next = 0.5 * (a + b);
            }
            let step = (next - mu).abs();
            mu = next;
            if step <= 2.0 * f64::EPSILON * mu.abs() || (hi - lo) <= 2.0 * f64::EPSILON * mu.abs() {
                break;
            }
        }
        mu
    }

    fn corrected_coupling(&self, j: usize, z: f64) -> f64 {
        let n = self.poles.len();
        let d = &self.poles;
        let mut prod = (-self.diff(j, j)) * self.diff(j + 1, j);
        for i in 0..j {
            prod *= -self.diff(i, j) / (d[j] - d[i]);
        }
        for i in j + 1..n {
            prod *= self.diff(i + 1, j) / (d[i] - d[j]);
        }
        prod.max(0.0).sqrt().copysign(z)
    }

    /// lambda_k - d_g, accurate to high relative precision.
    fn diff(&self, k: usize, g: usize) -> f64 {
        match self.origin[k] {
            Some(o) => (self.poles[o] - self.poles[g]) + self.mu[k],
            None => self.mu[k] - self.poles[g],
        }
    }

    fn eigenvalue(&self, k: usize) -> f64 {
        match self.origin[k] {
            Some(o) => self.poles[o] + self.mu[k],
            None => self.mu[k],
        }
    }

    pub fn eigenvalue_count(&self) -> usize {
        self.mu.len()
    }

    pub fn pole_count(&self) -> usize {
        self.poles.len()
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    /// Frequencies of normal modes with a system component, ascending.
    pub fn normal_frequencies(&self) -> Vec<f64> {
        (0..self.eigenvalue_count()).map(|k| self.eigenvalue(k).sqrt()).collect()
    }

    /// Squared system components U_0k^2, summing to one.
    pub fn system_weights(&self) -> Vec<f64> {
        self.u0.iter().map(|u| u * u).collect()
    }

    /// Reduced (q, p) covariance of the global thermal state.
    pub fn thermal_system_covariance(&self, temperature: Temperature) -> Matrix2<f64> {
        let mut xx = 0.0;
        let mut pp = 0.0;
        for k in 0..self.eigenvalue_count() {
            let w = self.eigenvalue(k).sqrt();
            let u2 = self.u0[k] * self.u0[k];
            xx += u2 * temperature.position_variance(w);
            pp += u2 * temperature.momentum_variance(w);
        }
        Matrix2::new(xx / self.mass, 0.0, 0.0, pp * self.mass)
    }

    fn row_batch(&self, times: &[f64]) -> RowBatch {
        let nk = self.eigenvalue_count();
        let ng = self.poles.len();
        let rows = 3 * times.len();
        let mut weights = DMatrix::zeros(rows, nk);
        let mut system = vec![RowCoefficients::default(); times.len()];
        for (ti, &t) in times.iter().enumerate() {
            let mut row = RowCoefficients::default();
            for k in 0..nk {
                let w = self.eigenvalue(k).sqrt();
                let u2 = self.u0[k] * self.u0[k];
                let (sin, cos) = (w * t).sin_cos();
                let c = u2 * cos;
                let s = u2 * sin / w;
                let ww = -u2 * w * sin;
                weights[(3 * ti, k)] = c;
                weights[(3 * ti + 1, k)] = s;
                weights[(3 * ti + 2, k)] = ww;
                row.c += c;
                row.s += s;
                row.w += ww;
            }
            system[ti] = row;
        }
        let mut groups = DMatrix::zeros(rows, ng);
        let mut start = 0;
        while start < ng {
            let width = POLE_BLOCK.min(ng - start);
            let resolvent = DMatrix::from_fn(nk, width, |k, g| 1.0 / self.diff(k, start + g));
            let block = &weights * resolvent;
            for g in 0..width {
                let zh = self.zhat[start + g];
                for r in 0..rows {
                    groups[(r, start + g)] = zh * block[(r, g)];
                }
            }
            start += width;
        }
        RowBatch { system, groups }
    }

    fn mode_temperatures(&self, temps: &BathTemperatures) -> Result<Vec<Temperature>> {
        self.modes.iter().map(|m| temps.get(m.label)).collect()
    }

    /// Reduced channels (factorized start, baths thermal) at each time, in
    /// physical (q, p) coordinates.
    pub fn channels(&self, temps: &BathTemperatures, times: &[f64]) -> Result<Vec<GaussianChannel>> {
        let mode_temps = self.mode_temperatures(temps)?;
        let ng = self.poles.len();
        let mut vx = vec![0.0; ng];
        let mut vp = vec![0.0; ng];
        for (info, temp) in self.modes.iter().zip(&mode_temps) {
            if let Slot::Coupled { group, weight } = info.slot {
                vx[group] += weight * weight * temp.position_variance(info.omega);
                vp[group] += weight * weight * temp.momentum_variance(info.omega);
            }
        }
        let batches: Vec<&[f64]> = times.chunks(TIME_BATCH).collect();
        let out = par::map_slice(&batches, |ts| {
            let batch = self.row_batch(ts);
            ts.iter()
                .enumerate()
                .map(|(ti, &t)| {
                    let (mut nxx, mut nxp, mut npp) = (0.0, 0.0, 0.0);
                    for g in 0..ng {
                        let c = batch.groups[(3 * ti, g)];
                        let s = batch.groups[(3 * ti + 1, g)];
                        let w = batch.groups[(3 * ti + 2, g)];
                        nxx += c * c * vx[g] + s * s * vp[g];
                        nxp += c * w * vx[g] + s * c * vp[g];
                        npp += w * w * vx[g] + c * c * vp[g];
                    }
                    self.to_physical(batch.system[ti], Matrix2::new(nxx, nxp, nxp, npp), t)
                })
                .collect::<Vec<_>>()
        });
        Ok(out.into_iter().flatten().collect())
    }

    fn to_physical(&self, row: RowCoefficients, noise: Matrix2<f64>, t: f64) -> GaussianChannel {
        let m = self.mass;
        GaussianChannel {
            drift: Matrix2::new(row.c, row.s / m, m * row.w, row.c),
            noise: Matrix2::new(noise[(0, 0)] / m, noise[(0, 1)], noise[(1, 0)], noise[(1, 1)] * m),
            time: t,
        }
    }

    /// System-row coefficients at each time.
    pub fn system_rows(&self, times: &[f64]) -> Vec<RowCoefficients> {
        let batches: Vec<&[f64]> = times.chunks(TIME_BATCH).collect();
        par::map_slice(&batches, |ts| self.row_batch(ts).system)
            .into_iter()
            .flatten()
            .collect()
    }

    /// Reduced (q, p) covariance when the global state at t = 0 is the thermal
    /// state of `initial` at `initial_temperature` times free thermal states of
    /// the remaining baths, evolved under `self`. The baths of `initial` must
    /// also be present in `self`, with identical modes.
    pub fn correlated_covariances(
        &self,
        initial: &StarModes,
        initial_temperature: Temperature,
        temps: &BathTemperatures,
        times: &[f64],
    ) -> Result<Vec<Matrix2<f64>>> {
        if (initial.mass - self.mass).abs() > 1e-14 * self.mass {
            return Err(Error::Layout("initial model has a different system".into()));
        }
        // position of each of our modes inside the initial model
        let lookup: std::collections::HashMap<(BathLabel, usize), usize> = initial
            .modes
            .iter()
            .enumerate()
            .map(|(i, m)| ((m.label, m.index), i))
            .collect();
        let mut inner = vec![None; self.modes.len()];
        for (j, m) in self.modes.iter().enumerate() {
            if let Some(&i) = lookup.get(&(m.label, m.index)) {
                if (initial.modes[i].omega - m.omega).abs() > 1e-12 * m.omega {
                    return Err(Error::Layout(format!("bath {} differs between models", m.label)));
                }
                inner[j] = Some(i);
            }
        }
        if inner.iter().filter(|x| x.is_some()).count() != initial.modes.len() {
            return Err(Error::Layout("initial model has baths absent from the evolution model".into()));
        }
        let free_temps = self.mode_temperatures_for_free(temps, &inner)?;

        let ng1 = initial.poles.len();
        let nk1 = initial.eigenvalue_count();
        let t1 = initial_temperature;
        let vx1: Vec<f64> = (0..nk1).map(|k| t1.position_variance(initial.eigenvalue(k).sqrt())).collect();
        let vp1: Vec<f64> = (0..nk1).map(|k| t1.momentum_variance(initial.eigenvalue(k).sqrt())).collect();

        let batches: Vec<&[f64]> = times.chunks(TIME_BATCH).collect();
        let out = par::map_slice(&batches, |ts| {
            let batch = self.row_batch(ts);
            let rows = 3 * ts.len();
            // projections of the coefficient vectors onto initial pole groups
            let mut h: DMatrix<f64> = DMatrix::zeros(rows, ng1);
            let mut acc = vec![[0.0f64; 3]; ts.len()];
            // per initial group, sums of squares and cross products of members
            let mut sq = vec![[0.0f64; 5]; ng1 * ts.len()];
            for (j, info) in self.modes.iter().enumerate() {
                let Slot::Coupled { group, weight } = info.slot else {
                    continue;
                };
                let coef = |ti: usize, r: usize| weight * batch.groups[(3 * ti + r, group)];
                match inner[j] {
                    None => {
                        let temp = free_temps[j];
                        let vx = temp.position_variance(info.omega);
                        let vp = temp.momentum_variance(info.omega);
                        for (ti, a) in acc.iter_mut().enumerate() {
                            let (c, s, w) = (coef(ti, 0), coef(ti, 1), coef(ti, 2));
                            a[0] += c * c * vx + s * s * vp;
                            a[1] += c * w * vx + s * c * vp;
                            a[2] += w * w * vx + c * c * vp;
                        }
                    }
                    Some(i) => {
                        let imode = &initial.modes[i];
                        match imode.slot {
                            Slot::Coupled { group: g1, weight: u1 } => {
                                for ti in 0..ts.len() {
                                    let (c, s, w) = (coef(ti, 0), coef(ti, 1), coef(ti, 2));
                                    h[(3 * ti, g1)] += u1 * c;
                                    h[(3 * ti + 1, g1)] += u1 * s;
                                    h[(3 * ti + 2, g1)] += u1 * w;
                                    let e = &mut sq[ti * ng1 + g1];
                                    e[0] += c * c;
                                    e[1] += s * s;
                                    e[2] += w * w;
                                    e[3] += c * w;
                                    e[4] += s * c;
                                }
                            }
                            Slot::Decoupled => {
                                let vx = t1.position_variance(imode.omega);
                                let vp = t1.momentum_variance(imode.omega);
                                for (ti, a) in acc.iter_mut().enumerate() {
                                    let (c, s, w) = (coef(ti, 0), coef(ti, 1), coef(ti, 2));
                                    a[0] += c * c * vx + s * s * vp;
                                    a[1] += c * w * vx + s * c * vp;
                                    a[2] += w * w * vx + c * c * vp;
                                }
                            }
                        }
                    }
                }
            }
            // complements of the coupling direction inside each initial group
            for (ti, a) in acc.iter_mut().enumerate() {
                for g1 in 0..ng1 {
                    let w1 = initial.poles[g1].sqrt();
                    let vx = t1.position_variance(w1);
                    let vp = t1.momentum_variance(w1);
                    let e = sq[ti * ng1 + g1];
                    let (hc, hs, hw) = (h[(3 * ti, g1)], h[(3 * ti + 1, g1)], h[(3 * ti + 2, g1)]);
                    a[0] += (e[0] - hc * hc) * vx + (e[1] - hs * hs) * vp;
                    a[1] += (e[3] - hc * hw) * vx + (e[4] - hs * hc) * vp;
                    a[2] += (e[2] - hw * hw) * vx + (e[0] - hc * hc) * vp;
                }
            }
            // projections onto the coupled initial normal modes
            let mut start = 0;
            while start < nk1 {
                let width = POLE_BLOCK.min(nk1 - start);
                let resolvent = DMatrix::from_fn(ng1, width, |g, k| {
                    initial.zhat[g] / initial.diff(start + k, g)
                });
                let proj = &h * resolvent;
                for (ti, a) in acc.iter_mut().enumerate() {
                    let row = batch.system[ti];
                    for kk in 0..width {
                        let k = start + kk;
                        let u = initial.u0[k];
                        let pc = u * (row.c + proj[(3 * ti, kk)]);
                        let ps = u * (row.s + proj[(3 * ti + 1, kk)]);
                        let pw = u * (row.w + proj[(3 * ti + 2, kk)]);
                        a[0] += vx1[k] * pc * pc + vp1[k] * ps * ps;
                        a[1] += vx1[k] * pc * pw + vp1[k] * ps * pc;
                        a[2] += vx1[k] * pw * pw + vp1[k] * pc * pc;
                    }
                }
                start += width;
            }
            let m = self.mass;
            acc.iter()
                .map(|a| Matrix2::new(a[0] / m, a[1], a[1], a[2] * m))
                .collect::<Vec<_>>()
        });
        Ok(out.into_iter().flatten().collect())
    }

    fn mode_temperatures_for_free(
        &self,
        temps: &BathTemperatures,
        inner: &[Option<usize>],
    ) -> Result<Vec<Temperature>> {
        self.modes
            .iter()
            .zip(inner)
            .map(|(m, i)| match i {
                Some(_) => Ok(Temperature::zero()),
                None => temps.get(m.label),
            })
            .collect()
    }
}

/// Temperatures of the attached baths, by label.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BathTemperatures(Vec<(BathLabel, Temperature)>);

impl BathTemperatures {
    pub fn new(entries: Vec<(BathLabel, Temperature)>) -> Self {
        BathTemperatures(entries)
    }

    pub fn uniform(model: &QuadraticModel, temperature: Temperature) -> Self {
        BathTemperatures(model.baths().iter().map(|b| (b.label, temperature)).collect())
    }

    pub fn get(&self, label: BathLabel) -> Result<Temperature> {
        self.0
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::Layout(format!("no temperature for bath {label}")))
    }
}
