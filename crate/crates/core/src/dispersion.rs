//! Fourier symbol, branch-continuous diagonalization and the transformed kernels.
//!
//! With `M(k) = ikA + E` skew-Hermitian, the frequencies are the eigenvalues of the
//! Hermitian `H(k) = -kA + iE`: `M s_n = -i omega_n s_n`, so that
//! `-S^{-1} M S = diag(i omega_n)`. `S` is unitary, hence `S^{-1} = S^H`.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{PeriodicGrid, Spectral, StateField};
use crate::system::SystemSpec;

type CMat = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolMatrix {
    pub k: f64,
    pub m: CMat,
}

pub fn symbol(spec: &SystemSpec, k: f64) -> SymbolMatrix {
    let n = spec.dim;
    SymbolMatrix {
        k,
        m: DMatrix::from_fn(n, n, |r, c| Complex64::new(spec.e_entry(r, c), k * spec.a_entry(r, c))),
    }
}

/// How branches are labelled across the wavenumber axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchPolicy {
    /// For `k < -k_cut` labels are mirrored so that `omega_n(k) = -omega_n(-k)`.
    pub k_cut: Option<f64>,
    pub gap_tol: f64,
}

impl BranchPolicy {
    /// Jump at `-k0/2`, smooth near both `k0` and `-k0`.
    pub fn for_carrier(k0: f64) -> Self {
        Self {
            k_cut: Some(0.5 * k0.abs()),
            gap_tol: 1e-8,
        }
    }

    pub fn continuous() -> Self {
        Self {
            k_cut: None,
            gap_tol: 1e-8,
        }
    }
}

impl Default for BranchPolicy {
    fn default() -> Self {
        Self::continuous()
    }
}

/// Labelled eigenpairs at one wavenumber.
#[derive(Debug, Clone, PartialEq)]
pub struct Modes {
    pub k: f64,
    pub omega: Vec<f64>,
    /// Columns are the unit eigenvectors `s_n(k)`.
    pub s: CMat,
}

impl Modes {
    pub fn s_inv(&self) -> CMat {
        self.s.adjoint()
    }

    pub fn column(&self, n: usize) -> Vec<Complex64> {
        self.s.column(n).iter().copied().collect()
    }

    /// Row `n` of `S^{-1}`, the left eigenvector `l_n`.
    pub fn left(&self, n: usize) -> Vec<Complex64> {
        self.s.column(n).iter().map(|z| z.conj()).collect()
    }

    fn mirrored(&self) -> Modes {
        Modes {
            k: -self.k,
            omega: self.omega.iter().map(|w| -w).collect(),
            s: self.s.map(|z| z.conj()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Derivatives {
    pub omega: f64,
    pub group_velocity: f64,
    pub curvature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub grid_sup_s: f64,
    pub grid_sup_s_inv: f64,
    /// `(k, |S| + |S^{-1}|)` beyond the grid.
    pub tail: Vec<(f64, f64)>,
    /// Same quantity for the diagonalizer of `A` alone.
    pub limit: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct DispersionData {
    pub k_grid: Vec<f64>,
    /// `omega[n][i]`.
    pub omega: Vec<Vec<f64>>,
    pub s: Vec<CMat>,
    pub s_inv: Vec<CMat>,
    pub cond: Vec<f64>,
    pub policy: BranchPolicy,
    /// Wavenumbers where labels change discontinuously.
    pub jumps: Vec<f64>,
    a: DMatrix<f64>,
    e: DMatrix<f64>,
}

fn hermitian(a: &DMatrix<f64>, e: &DMatrix<f64>, k: f64) -> CMat {
    DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| Complex64::new(-k * a[(r, c)], e[(r, c)]))
}

fn normalize_column(v: &mut [Complex64]) {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|z| *z /= norm);
    if let Some(p) = v.iter().find(|z| z.norm() > 1e-10) {
        let phase = p.conj() / p.norm();
        v.iter_mut().for_each(|z| *z *= phase);
    }
}

/// Eigenpairs of `H(k)` sorted ascending, columns normalized.
fn raw_modes(a: &DMatrix<f64>, e: &DMatrix<f64>, k: f64, gap_tol: f64) -> Result<Modes> {
    let n = a.nrows();
    let h = hermitian(a, e, k);
    let diagonal = (0..n).all(|r| (0..n).all(|c| r == c || h[(r, c)] == ZERO));
    let (vals, vecs): (Vec<f64>, CMat) = if diagonal {
        // a diagonal symbol keeps the canonical basis, even through exact degeneracy
        ((0..n).map(|i| h[(i, i)].re).collect(), CMat::identity(n, n))
    } else {
        let eig = h.symmetric_eigen();
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]).then(i.cmp(&j)));
    if !diagonal {
        for (pos, w) in order.windows(2).enumerate() {
            let gap = vals[w[1]] - vals[w[0]];
            if gap < gap_tol {
                return Err(Error::DegenerateSpectrum {
                    k,
                    gap,
                    a: pos,
                    b: pos + 1,
                });
            }
        }
    }
    let mut s = CMat::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let mut v: Vec<Complex64> = vecs.column(src).iter().copied().collect();
        normalize_column(&mut v);
        for r in 0..n {
            s[(r, col)] = v[r];
        }
    }
    Ok(Modes {
        k,
        omega: order.iter().map(|&i| vals[i]).collect(),
        s,
    })
}

/// Relabel `fresh` to follow `prev` by maximal eigenvector overlap; ties by ascending omega.
fn match_to(prev: &CMat, fresh: &Modes) -> Modes {
    let n = prev.ncols();
    let mut cand = Vec::with_capacity(n * n);
    for p in 0..n {
        for i in 0..n {
            let ov = (prev.column(p).adjoint() * fresh.s.column(i))[(0, 0)].norm();
            cand.push((ov, i, p));
        }
    }
    cand.sort_by(|x, y| {
        y.0.total_cmp(&x.0)
            .then(fresh.omega[x.1].total_cmp(&fresh.omega[y.1]))
            .then(x.2.cmp(&y.2))
    });
    let mut perm = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for (_, i, p) in cand {
        if perm[p] == usize::MAX && !used[i] {
            perm[p] = i;
            used[i] = true;
        }
    }
    Modes {
        k: fresh.k,
        omega: perm.iter().map(|&i| fresh.omega[i]).collect(),
        s: CMat::from_fn(n, n, |r, c| fresh.s[(r, perm[c])]),
    }
}

fn spectral_norm(m: &CMat) -> f64 {
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

fn condition(m: &CMat) -> f64 {
    let sv = m.clone().singular_values();
    let hi = sv.iter().copied().fold(0.0, f64::max);
    let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
    hi / lo
}

/// Diagonalize on a sorted grid with branch continuity.
pub fn eigendecompose(spec: &SystemSpec, k_grid: &[f64], policy: BranchPolicy) -> Result<DispersionData> {
    if k_grid.is_empty() {
        return Err(Error::Config("empty wavenumber grid".into()));
    }
    if k_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("wavenumber grid must be strictly increasing".into()));
    }
    let n = spec.dim;
    let a = DMatrix::from_row_slice(n, n, &spec.a);
    let e = DMatrix::from_row_slice(n, n, &spec.e);
    let cut = policy.k_cut.map(f64::abs);
    let mirrored = |k: f64| cut.is_some_and(|c| k < -c);

    let raw: Vec<Option<Modes>> = k_grid
        .par_iter()
        .map(|&k| {
            if mirrored(k) {
                Ok(None)
            } else {
                raw_modes(&a, &e, k, policy.gap_tol).map(Some)
            }
        })
        .collect::<Result<_>>()?;

    let len = k_grid.len();
    let reference = k_grid.iter().position(|&k| k >= 0.0).unwrap_or(len - 1);
    let mut labelled: Vec<Option<Modes>> = vec![None; len];
    labelled[reference] = raw[reference].clone();
    if labelled[reference].is_none() {
        return Err(Error::Config("reference wavenumber lies in the mirrored region".into()));
    }
    for i in reference + 1..len {
        let prev = labelled[i - 1].as_ref().map(|m| m.s.clone()).expect("marching right");
        labelled[i] = Some(match_to(&prev, raw[i].as_ref().expect("right side is direct")));
    }
    for i in (0..reference).rev() {
        let Some(fresh) = raw[i].as_ref() else { break };
        let prev = labelled[i + 1].as_ref().map(|m| m.s.clone()).expect("marching left");
        labelled[i] = Some(match_to(&prev, fresh));
    }

    let mut data = DispersionData {
        k_grid: k_grid.to_vec(),
        omega: vec![vec![0.0; len]; n],
        s: Vec::with_capacity(len),
        s_inv: Vec::with_capacity(len),
        cond: Vec::with_capacity(len),
        policy,
        jumps: Vec::new(),
        a,
        e,
    };
    // provisional fill so the direct region can serve the mirror lookups
    let placeholder = labelled[reference].clone().expect("reference present");
    let filled: Vec<Modes> = labelled
        .iter()
        .map(|m| m.clone().unwrap_or_else(|| placeholder.clone()))
        .collect();
    data.install(&filled);
    let first_direct = labelled.iter().position(Option::is_some).expect("reference present");
    let mut all = filled;
    for (i, slot) in all.iter_mut().enumerate().take(first_direct) {
        *slot = data.direct_side(-k_grid[i], first_direct)?.mirrored();
    }
    data.install(&all);
    if let Some(c) = cut {
        if first_direct > 0 {
            data.jumps.push(-c);
        }
    }
    data.check_continuity(first_direct)?;
    Ok(data)
}

impl DispersionData {
    fn install(&mut self, modes: &[Modes]) {
        let n = self.a.nrows();
        self.s.clear();
        self.s_inv.clear();
        self.cond.clear();
        for (i, m) in modes.iter().enumerate() {
            for b in 0..n {
                self.omega[b][i] = m.omega[b];
            }
            self.s_inv.push(m.s_inv());
            self.cond.push(condition(&m.s));
            self.s.push(m.s.clone());
        }
    }

    fn check_continuity(&self, first_direct: usize) -> Result<()> {
        let lip = 2.0 * spectral_norm(&self.a.map(|x| Complex64::new(x, 0.0))).max(1.0);
        for i in 1..self.k_grid.len() {
            if first_direct > 0 && i == first_direct {
                continue;
            }
            let dk = self.k_grid[i] - self.k_grid[i - 1];
            for b in 0..self.dim() {
                let jump = (self.omega[b][i] - self.omega[b][i - 1]).abs();
                if jump > lip * dk {
                    return Err(Error::DegenerateSpectrum {
                        k: self.k_grid[i],
                        gap: self.min_gap(i),
                        a: b,
                        b,
                    });
                }
            }
        }
        for (i, &c) in self.cond.iter().enumerate() {
            if c > 1e8 {
                return Err(Error::IllConditioned {
                    k: self.k_grid[i],
                    cond: c,
                });
            }
        }
        Ok(())
    }

    fn min_gap(&self, i: usize) -> f64 {
        let mut w: Vec<f64> = (0..self.dim()).map(|b| self.omega[b][i]).collect();
        w.sort_by(f64::total_cmp);
        w.windows(2).map(|p| p[1] - p[0]).fold(f64::INFINITY, f64::min)
    }

    /// Eigenvalues of `A`: the far-field slopes `-omega_n(k) / k`.
    pub fn transport_speeds(&self) -> Vec<f64> {
        self.a.clone().symmetric_eigen().eigenvalues.iter().copied().collect()
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn k_min(&self) -> f64 {
        self.k_grid[0]
    }

    pub fn k_max(&self) -> f64 {
        *self.k_grid.last().expect("non-empty grid")
    }

    /// Spacing of the grid near `k`.
    pub fn local_step(&self, k: f64) -> f64 {
        if self.k_grid.len() < 2 {
            return 1.0;
        }
        let i = self.nearest(k).clamp(1, self.k_grid.len() - 1);
        self.k_grid[i] - self.k_grid[i - 1]
    }

    fn nearest(&self, k: f64) -> usize {
        let i = self.k_grid.partition_point(|&x| x < k);
        if i == 0 {
            0
        } else if i == self.k_grid.len() {
            i - 1
        } else if (self.k_grid[i] - k).abs() < (k - self.k_grid[i - 1]).abs() {
            i
        } else {
            i - 1
        }
    }

    fn is_mirrored(&self, k: f64) -> bool {
        self.policy.k_cut.is_some_and(|c| k < -c.abs())
    }

    fn stored(&self, i: usize) -> Modes {
        Modes {
            k: self.k_grid[i],
            omega: (0..self.dim()).map(|b| self.omega[b][i]).collect(),
            s: self.s[i].clone(),
        }
    }

    /// Exact modes at `k` on the directly labelled side, matched to the nearest node
    /// with index `>= first_direct`, or marched outward beyond the grid.
    fn direct_side(&self, k: f64, first_direct: usize) -> Result<Modes> {
        if k > self.k_max() || k < self.k_grid[first_direct] {
            return self.march(k, first_direct);
        }
        let i = self.nearest(k).max(first_direct);
        let fresh = raw_modes(&self.a, &self.e, k, self.policy.gap_tol)?;
        Ok(match_to(&self.s[i], &fresh))
    }

    fn first_direct(&self) -> usize {
        self.k_grid
            .iter()
            .position(|&k| !self.is_mirrored(k))
            .unwrap_or(self.k_grid.len() - 1)
    }

    /// Geometric continuation from the grid edge; steps grow by at most 25%.
    fn march(&self, k: f64, first_direct: usize) -> Result<Modes> {
        let (start, dir) = if k > self.k_max() {
            (self.k_grid.len() - 1, 1.0)
        } else {
            (first_direct, -1.0)
        };
        let mut cur = self.stored(start);
        let step0 = self.local_step(cur.k);
        loop {
            let dist = (k - cur.k) * dir;
            if dist <= 0.0 {
                return Ok(cur);
            }
            let stride = (0.25 * cur.k.abs()).max(step0).min(dist);
            let next = if stride == dist { k } else { cur.k + dir * stride };
            let fresh = raw_modes(&self.a, &self.e, next, self.policy.gap_tol)?;
            cur = match_to(&cur.s, &fresh);
        }
    }

    /// Exact eigendecomposition at `k` (covered range), labelled consistently with the grid.
    pub fn branch_at(&self, k: f64) -> Result<Modes> {
        let pad = 1e-9 * self.k_max().abs().max(self.k_min().abs()).max(1.0);
        if k < self.k_min() - pad || k > self.k_max() + pad {
            return Err(Error::OutOfGrid {
                k,
                min: self.k_min(),
                max: self.k_max(),
            });
        }
        self.modes_at(k)
    }

    /// Labelled modes beyond the grid, by continuation from the nearest edge.
    pub fn branch_far(&self, k: f64) -> Result<Modes> {
        self.modes_at(k)
    }

    /// Labelled modes at any `k`.
    pub fn modes_at(&self, k: f64) -> Result<Modes> {
        if self.is_mirrored(k) {
            return Ok(self.modes_at(-k)?.mirrored());
        }
        self.direct_side(k, self.first_direct())
    }

    pub fn omega_at(&self, n: usize, k: f64) -> Result<f64> {
        Ok(self.modes_at(k)?.omega[n])
    }

    /// Grid node used for a solver wavenumber; nearest neighbour as fallback.
    pub fn node_index(&self, k: f64) -> Result<usize> {
        let step = if self.k_grid.len() > 1 { self.local_step(k) } else { 0.0 };
        let pad = 0.5 * step + 1e-9 * k.abs().max(1.0);
        if k < self.k_min() - pad || k > self.k_max() + pad {
            return Err(Error::OutOfGrid {
                k,
                min: self.k_min(),
                max: self.k_max(),
            });
        }
        Ok(self.nearest(k))
    }

    /// Node index for every FFT slot of `grid`.
    pub fn slot_nodes(&self, grid: &PeriodicGrid) -> Result<Vec<usize>> {
        (0..grid.n).map(|i| self.node_index(grid.wavenumber(i))).collect()
    }

    /// Diagonalization residual `|S D S^{-1} + M| / |M|` at node `i`.
    pub fn residual(&self, spec: &SystemSpec, i: usize) -> f64 {
        let m = symbol(spec, self.k_grid[i]).m;
        let n = self.dim();
        let d = CMat::from_fn(n, n, |r, c| {
            if r == c {
                Complex64::new(0.0, self.omega[r][i])
            } else {
                ZERO
            }
        });
        let res = &self.s[i] * d * &self.s_inv[i] + &m;
        res.norm() / m.norm().max(f64::MIN_POSITIVE)
    }

    /// Branches on which the nonlinearity never acts: `l_n` annihilates every
    /// quadratic and cubic slice at every node. Linear systems have none.
    pub fn inert_branches(&self, spec: &SystemSpec) -> Vec<bool> {
        let n = self.dim();
        if spec.is_linear() {
            return vec![false; n];
        }
        (0..n)
            .map(|b| {
                self.s.iter().all(|s| {
                    let l: Vec<Complex64> = (0..n).map(|j| s[(j, b)].conj()).collect();
                    let quad_ok = (0..n * n).all(|pq| {
                        let v: Complex64 = (0..n).map(|j| l[j] * spec.quad[j * n * n + pq]).sum();
                        v.norm() < 1e-12
                    });
                    let cubic_ok = (0..n * n * n).all(|pqr| {
                        let v: Complex64 = (0..n).map(|j| l[j] * spec.cubic[j * n * n * n + pqr]).sum();
                        v.norm() < 1e-12
                    });
                    quad_ok && cubic_ok
                })
            })
            .collect()
    }

    /// Columnar text: `k omega_0 .. omega_{N-1} cond`.
    pub fn dump(&self) -> String {
        let mut out = String::from("# k");
        for b in 0..self.dim() {
            let _ = write!(out, " omega_{b}");
        }
        out.push_str(" cond\n");
        for i in 0..self.k_grid.len() {
            let _ = write!(out, "{:.12e}", self.k_grid[i]);
            for b in 0..self.dim() {
                let _ = write!(out, " {:.12e}", self.omega[b][i]);
            }
            let _ = writeln!(out, " {:.6e}", self.cond[i]);
        }
        out
    }

    /// `U -> V = S^{-1} U` slot by slot in Fourier space.
    pub fn to_diagonal_spectra(&self, grid: &PeriodicGrid, spectra: &[Vec<Complex64>]) -> Result<Vec<Vec<Complex64>>> {
        self.apply_per_slot(grid, spectra, &self.s_inv)
    }

    pub fn from_diagonal_spectra(&self, grid: &PeriodicGrid, spectra: &[Vec<Complex64>]) -> Result<Vec<Vec<Complex64>>> {
        self.apply_per_slot(grid, spectra, &self.s)
    }

    fn apply_per_slot(&self, grid: &PeriodicGrid, spectra: &[Vec<Complex64>], mats: &[CMat]) -> Result<Vec<Vec<Complex64>>> {
        let n = self.dim();
        if spectra.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: spectra.len(),
            });
        }
        let nodes = self.slot_nodes(grid)?;
        let mut out = vec![vec![ZERO; grid.n]; n];
        for (slot, &node) in nodes.iter().enumerate() {
            let m = &mats[node];
            for r in 0..n {
                let mut acc = ZERO;
                for c in 0..n {
                    acc += m[(r, c)] * spectra[c][slot];
                }
                out[r][slot] = acc;
            }
        }
        Ok(out)
    }

    pub fn to_diagonal(&self, field: &StateField) -> Result<StateField> {
        let fft = Spectral::new(field.grid.n);
        let v = self.to_diagonal_spectra(&field.grid, &field.spectrum(&fft))?;
        Ok(StateField::from_spectrum(field.grid, &fft, v))
    }

    pub fn from_diagonal(&self, field: &StateField) -> Result<StateField> {
        let fft = Spectral::new(field.grid.n);
        let u = self.from_diagonal_spectra(&field.grid, &field.spectrum(&fft))?;
        Ok(StateField::from_spectrum(field.grid, &fft, u))
    }
}

/// `(S^{-1}, |S|, |S^{-1}|)` sup over the grid plus a tail/limit estimate.
pub fn check_uniform_bound(data: &DispersionData, k_max_extrapolate: f64) -> BoundReport {
    let mut grid_sup_s: f64 = 0.0;
    let mut grid_sup_s_inv: f64 = 0.0;
    for (s, si) in data.s.iter().zip(&data.s_inv) {
        grid_sup_s = grid_sup_s.max(spectral_norm(s));
        grid_sup_s_inv = grid_sup_s_inv.max(spectral_norm(si));
    }
    let mut tail = Vec::new();
    let edge = data.k_max().abs().max(data.k_min().abs()).max(1.0);
    let mut k = 2.0 * edge;
    while k <= k_max_extrapolate.max(2.0 * edge) {
        for kk in [k, -k] {
            let v = data
                .modes_at(kk)
                .map(|m| spectral_norm(&m.s) + spectral_norm(&m.s_inv()))
                .unwrap_or(f64::INFINITY);
            tail.push((kk, v));
        }
        k *= 2.0;
    }
    let a = data.a.map(|x| Complex64::new(x, 0.0));
    let q = a.symmetric_eigen().eigenvectors;
    let limit = spectral_norm(&q) + spectral_norm(&q.adjoint());

    let grid_total = grid_sup_s + grid_sup_s_inv;
    let finite = grid_total.is_finite() && limit.is_finite() && tail.iter().all(|t| t.1.is_finite());
    let bound = grid_total.max(limit) * (1.0 + 1e-6) + 1e-9;
    let bounded = tail.iter().all(|t| t.1 <= bound.max(2.0 * grid_total));
    // successive changes of the positive and negative tails must not grow
    let settles = [0usize, 1].iter().all(|&side| {
        let seq: Vec<f64> = tail.iter().skip(side).step_by(2).map(|t| t.1).collect();
        let d: Vec<f64> = seq.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        d.windows(2).all(|w| w[1] <= w[0] + 1e-9)
    });
    BoundReport {
        grid_sup_s,
        grid_sup_s_inv,
        tail,
        limit,
        pass: finite && bounded && settles,
    }
}

/// `omega`, `omega'`, `omega''` on branch `n` at `k0` by five-point central differences.
pub fn derivatives(data: &DispersionData, n: usize, k0: f64) -> Result<Derivatives> {
    if n >= data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            found: n + 1,
        });
    }
    let step = data.local_step(k0);
    for &j in &data.jumps {
        if (k0 - j).abs() < 5.0 * step {
            return Err(Error::TooCloseToJump { k0, jump: j, steps: 5 });
        }
    }
    let h = step.min(1e-2);
    if k0 - 2.0 * h < data.k_min() || k0 + 2.0 * h > data.k_max() {
        return Err(Error::OutOfGrid {
            k: k0,
            min: data.k_min(),
            max: data.k_max(),
        });
    }
    let f = |m: f64| data.branch_at(k0 + m * h).map(|x| x.omega[n]);
    let (fm2, fm1, f0, fp1, fp2) = (f(-2.0)?, f(-1.0)?, f(0.0)?, f(1.0)?, f(2.0)?);
    Ok(Derivatives {
        omega: f0,
        group_velocity: (fm2 - 8.0 * fm1 + 8.0 * fp1 - fp2) / (12.0 * h),
        curvature: (-fm2 + 16.0 * fm1 - 30.0 * f0 + 16.0 * fp1 - fp2) / (12.0 * h * h),
    })
}

/// `g^j_{j1 j2} = sum (S_k^{-1})_{j,i} b^i_{pq} (S_a)_{p,j1} (S_b)_{q,j2}`, flat `(j, j1, j2)`.
pub fn quadratic_kernel(spec: &SystemSpec, s_inv_k: &CMat, s_a: &CMat, s_b: &CMat) -> Vec<Complex64> {
    let n = spec.dim;
    // stage 1: t1[i][j1][q] = sum_p b[i][p][q] Sa[p][j1]
    let mut t1 = vec![ZERO; n * n * n];
    for i in 0..n {
        for p in 0..n {
            for q in 0..n {
                let b = spec.quad[(i * n + p) * n + q];
                if b == 0.0 {
                    continue;
                }
                for j1 in 0..n {
                    t1[(i * n + j1) * n + q] += s_a[(p, j1)] * b;
                }
            }
        }
    }
    let mut t2 = vec![ZERO; n * n * n];
    for i in 0..n {
        for j1 in 0..n {
            for q in 0..n {
                let v = t1[(i * n + j1) * n + q];
                if v == ZERO {
                    continue;
                }
                for j2 in 0..n {
                    t2[(i * n + j1) * n + j2] += v * s_b[(q, j2)];
                }
            }
        }
    }
    contract_output(n, s_inv_k, &t2, n * n)
}

/// Cubic analogue of [`quadratic_kernel`], flat `(j, j1, j2, j3)`.
pub fn cubic_kernel(spec: &SystemSpec, s_inv_k: &CMat, s_a: &CMat, s_b: &CMat, s_c: &CMat) -> Vec<Complex64> {
    let n = spec.dim;
    let n2 = n * n;
    let n3 = n2 * n;
    let mut t1 = vec![ZERO; n3 * n];
    for i in 0..n {
        for p in 0..n {
            for q in 0..n {
                for r in 0..n {
                    let c = spec.cubic[i * n3 + p * n2 + q * n + r];
                    if c == 0.0 {
                        continue;
                    }
                    for j1 in 0..n {
                        t1[i * n3 + j1 * n2 + q * n + r] += s_a[(p, j1)] * c;
                    }
                }
            }
        }
    }
    let mut t2 = vec![ZERO; n3 * n];
    for i in 0..n {
        for j1 in 0..n {
            for q in 0..n {
                for r in 0..n {
                    let v = t1[i * n3 + j1 * n2 + q * n + r];
                    if v == ZERO {
                        continue;
                    }
                    for j2 in 0..n {
                        t2[i * n3 + j1 * n2 + j2 * n + r] += v * s_b[(q, j2)];
                    }
                }
            }
        }
    }
    let mut t3 = vec![ZERO; n3 * n];
    for i in 0..n {
        for j1 in 0..n {
            for j2 in 0..n {
                for r in 0..n {
                    let v = t2[i * n3 + j1 * n2 + j2 * n + r];
                    if v == ZERO {
                        continue;
                    }
                    for j3 in 0..n {
                        t3[i * n3 + j1 * n2 + j2 * n + j3] += v * s_c[(r, j3)];
                    }
                }
            }
        }
    }
    contract_output(n, s_inv_k, &t3, n3)
}

fn contract_output(n: usize, s_inv: &CMat, t: &[Complex64], block: usize) -> Vec<Complex64> {
    let mut out = vec![ZERO; n * block];
    for j in 0..n {
        for i in 0..n {
            let w = s_inv[(j, i)];
            if w == ZERO {
                continue;
            }
            for x in 0..block {
                out[j * block + x] += w * t[i * block + x];
            }
        }
    }
    out
}

fn covered(data: &DispersionData, ks: &[f64]) -> Result<()> {
    let pad = 1e-9 * data.k_max().abs().max(data.k_min().abs()).max(1.0);
    for &k in ks {
        if k < data.k_min() - pad || k > data.k_max() + pad {
            return Err(Error::OutOfGrid {
                k,
                min: data.k_min(),
                max: data.k_max(),
            });
        }
    }
    Ok(())
}

/// `g^j_{j1 j2}(k, k - k1, k1)`.
pub fn transformed_quadratic(data: &DispersionData, spec: &SystemSpec, k: f64, k1: f64) -> Result<Vec<Complex64>> {
    covered(data, &[k, k - k1, k1])?;
    let mk = data.branch_at(k)?;
    let ma = data.branch_at(k - k1)?;
    let mb = data.branch_at(k1)?;
    Ok(quadratic_kernel(spec, &mk.s_inv(), &ma.s, &mb.s))
}

/// `h^j_{j1 j2 j3}(k, k1, k2, k3)` for wavenumbers with `k1 + k2 + k3 = k`.
pub fn transformed_cubic(data: &DispersionData, spec: &SystemSpec, k: f64, k1: f64, k2: f64, k3: f64) -> Result<Vec<Complex64>> {
    covered(data, &[k, k1, k2, k3])?;
    let m = [k, k1, k2, k3]
        .iter()
        .map(|&q| data.branch_at(q))
        .collect::<Result<Vec<_>>>()?;
    Ok(cubic_kernel(spec, &m[0].s_inv(), &m[1].s, &m[2].s, &m[3].s))
}

/// Uniform grid `[-k_max, k_max]` with `k0` on a node.
pub fn audit_grid(k0: f64, k_max: f64, dk_target: f64) -> Vec<f64> {
    let per = (k0 / dk_target).round().max(1.0);
    let dk = k0 / per;
    let m = (k_max / dk).ceil() as i64;
    (-m..=m).map(|i| i as f64 * dk).collect()
}

/// Dispersion data sufficient for the carrier algebra at `k0` (harmonics up to `4 k0`).
pub fn carrier_dispersion(spec: &SystemSpec, k0: f64) -> Result<DispersionData> {
    eigendecompose(spec, &audit_grid(k0, 4.0 * k0.abs() + 1.0, 0.01), BranchPolicy::for_carrier(k0))
}
