//! Dirichlet eigenbasis of the box, modal states, Galerkin damped evolution
//! and modal quadratures.
//!
//! Eigenfunctions are sine products. Along an axis of half-length `m` the
//! normalized factor is `sin(kπ(x+m)/(2m)) / √m`, so a mode with multi-index
//! `k` has eigenvalue `Σ_d (k_d π / (2 m_d))²`.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::decay::EnergyTrace;
use crate::error::{Error, Result};
use crate::geometry::{DampingField, DomainSpec, Face, Region};
use crate::quadrature::{composite, GaussLegendre};

/// Gauss points per panel for time quadratures.
const TIME_ORDER: usize = 16;

/// Relative entry change between quadrature refinements below which a damping
/// matrix counts as converged.
pub const DAMPING_QUAD_TOL: f64 = 1e-9;

/// Normalized 1-D Dirichlet sine on `[-m, m]`.
pub fn sine_mode(k: usize, m: f64, x: f64) -> f64 {
    (k as f64 * std::f64::consts::PI * (x + m) / (2.0 * m)).sin() / m.sqrt()
}

pub fn sine_mode_derivative(k: usize, m: f64, x: f64) -> f64 {
    let w = k as f64 * std::f64::consts::PI / (2.0 * m);
    w * (w * (x + m)).cos() / m.sqrt()
}

/// Closed form of `∫_lo^hi φ_a φ_b dx` for the normalized sines on `[-m, m]`.
pub fn sine_overlap(a: usize, b: usize, m: f64, lo: f64, hi: f64) -> f64 {
    use std::f64::consts::PI;
    let theta = |x: f64| PI * (x + m) / (2.0 * m);
    let prim = |k: i64, th: f64| {
        if k == 0 {
            th
        } else {
            (k as f64 * th).sin() / k as f64
        }
    };
    let (a, b) = (a as i64, b as i64);
    let (t0, t1) = (theta(lo), theta(hi));
    ((prim(a - b, t1) - prim(a - b, t0)) - (prim(a + b, t1) - prim(a + b, t0))) / PI
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    /// Sine wavenumbers per axis, each at least 1.
    pub index: Vec<usize>,
    pub mu: f64,
}

fn mode_eigenvalue(index: &[usize], half: &[f64]) -> f64 {
    let mut terms: Vec<f64> = index
        .iter()
        .zip(half)
        .map(|(&k, &m)| {
            let w = k as f64 * std::f64::consts::PI / (2.0 * m);
            w * w
        })
        .collect();
    // Summing sorted terms makes permuted indices on a cube tie exactly.
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    spec: DomainSpec,
    modes: Vec<Mode>,
}

fn sort_modes(modes: &mut [Mode]) {
    modes.sort_by(|a, b| a.mu.total_cmp(&b.mu).then_with(|| a.index.cmp(&b.index)));
}

/// The `n` lowest Dirichlet modes of the box, ties broken by multi-index.
pub fn build_basis(spec: &DomainSpec, n: usize) -> Result<EigenBasis> {
    if n == 0 {
        return Err(Error::validation("basis", "mode count N must be >= 1"));
    }
    let half = spec.half_lengths();
    let dim = spec.dim();
    let mut cap = mode_eigenvalue(&vec![1; dim], &half) * (n as f64).powf(2.0 / dim as f64) * 2.0;
    loop {
        let mut modes = Vec::new();
        let kmax: Vec<usize> = half
            .iter()
            .map(|&m| (cap.sqrt() * 2.0 * m / std::f64::consts::PI).floor() as usize)
            .collect();
        let mut idx = vec![1usize; dim];
        'outer: loop {
            if idx.iter().zip(&kmax).all(|(k, km)| k <= km) {
                let mu = mode_eigenvalue(&idx, &half);
                if mu <= cap {
                    modes.push(Mode { index: idx.clone(), mu });
                }
            }
            for d in (0..dim).rev() {
                idx[d] += 1;
                if idx[d] <= kmax[d].max(1) {
                    continue 'outer;
                }
                idx[d] = 1;
            }
            break;
        }
        if modes.len() >= n {
            sort_modes(&mut modes);
            modes.truncate(n);
            return Ok(EigenBasis { spec: *spec, modes });
        }
        cap *= 2.0;
    }
}

impl EigenBasis {
    /// All modes with `index[d] <= kmax[d]`, sorted like [`build_basis`].
    pub fn from_index_box(spec: &DomainSpec, kmax: &[usize]) -> Result<Self> {
        if kmax.len() != spec.dim() || kmax.contains(&0) {
            return Err(Error::validation("basis", "kmax needs one positive bound per axis"));
        }
        let half = spec.half_lengths();
        let mut modes = Vec::new();
        let mut idx = vec![1usize; spec.dim()];
        'outer: loop {
            modes.push(Mode { index: idx.clone(), mu: mode_eigenvalue(&idx, &half) });
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] <= kmax[d] {
                    continue 'outer;
                }
                idx[d] = 1;
            }
            break;
        }
        sort_modes(&mut modes);
        Ok(EigenBasis { spec: *spec, modes })
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn mu(&self, j: usize) -> f64 {
        self.modes[j].mu
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.mu).collect()
    }

    pub fn max_frequency(&self) -> f64 {
        self.modes.last().map_or(0.0, |m| m.mu.sqrt())
    }

    /// ℓ_j(x) for a zero-based mode number `j`.
    pub fn eigenfunction(&self, j: usize, x: &[f64]) -> f64 {
        let half = self.spec.half_lengths();
        self.modes[j]
            .index
            .iter()
            .zip(&half)
            .zip(x)
            .map(|((&k, &m), &xd)| sine_mode(k, m, xd))
            .product()
    }

    /// Zero-based position of the mode with the given multi-index.
    pub fn position_of(&self, index: &[usize]) -> Option<usize> {
        self.modes.iter().position(|m| m.index == index)
    }
}

/// Coefficients of a state over an eigenbasis: positions `b0` and velocities `b1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalState {
    pub basis: Arc<EigenBasis>,
    pub b0: Vec<f64>,
    pub b1: Vec<f64>,
}

impl ModalState {
    pub fn new(basis: Arc<EigenBasis>, b0: Vec<f64>, b1: Vec<f64>) -> Result<Self> {
        if b0.len() != basis.len() || b1.len() != basis.len() {
            return Err(Error::validation("modal state", "coefficient vectors must have length N"));
        }
        if b0.iter().chain(&b1).any(|v| !v.is_finite()) {
            return Err(Error::validation("modal state", "coefficients must be finite"));
        }
        Ok(ModalState { basis, b0, b1 })
    }

    pub fn zero(basis: Arc<EigenBasis>) -> Self {
        let n = basis.len();
        ModalState { basis, b0: vec![0.0; n], b1: vec![0.0; n] }
    }

    /// Unit position (or velocity) in mode `j`, counted from 1.
    pub fn single_mode(basis: Arc<EigenBasis>, j: usize, velocity: bool) -> Result<Self> {
        if j == 0 || j > basis.len() {
            return Err(Error::validation("modal state", format!("mode {j} not in 1..={}", basis.len())));
        }
        let mut s = Self::zero(basis);
        if velocity {
            s.b1[j - 1] = 1.0;
        } else {
            s.b0[j - 1] = 1.0;
        }
        Ok(s)
    }

    /// Positions `1/μ` on the `k` lowest modes whose lateral wavenumbers are
    /// all 1: energy sits near the vertical trapped rays.
    pub fn trapped_stack(basis: Arc<EigenBasis>, k: usize) -> Result<Self> {
        let lateral = basis.spec().vertical_axis();
        let picks: Vec<usize> = (0..basis.len())
            .filter(|&j| basis.modes()[j].index[..lateral].iter().all(|&i| i == 1))
            .take(k)
            .collect();
        if k == 0 || picks.len() < k {
            return Err(Error::validation(
                "trapped stack",
                format!("basis holds {} laterally-fundamental modes, {k} requested", picks.len()),
            ));
        }
        let mut s = Self::zero(basis);
        for j in picks {
            s.b0[j] = 1.0 / s.basis.mu(j);
        }
        Ok(s)
    }

    /// Gaussian coefficients `b0 ~ z/μ`, `b1 ~ z/√μ`, seeded.
    pub fn random_smooth(basis: Arc<EigenBasis>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = Self::zero(basis);
        for j in 0..s.b0.len() {
            let mu = s.basis.mu(j);
            let (z0, z1): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            s.b0[j] = z0 / mu;
            s.b1[j] = z1 / mu.sqrt();
        }
        s
    }

    pub fn len(&self) -> usize {
        self.b0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b0.is_empty()
    }

    /// `Σ μ_j b0_j² + b1_j²`, the H¹×L² energy.
    pub fn energy_g(&self) -> f64 {
        self.basis
            .modes()
            .iter()
            .zip(self.b0.iter().zip(&self.b1))
            .map(|(m, (p, v))| m.mu * p * p + v * v)
            .sum()
    }

    /// `Σ μ_j² b0_j²`.
    pub fn h2_norm_sq(&self) -> f64 {
        self.basis.modes().iter().zip(&self.b0).map(|(m, p)| m.mu * m.mu * p * p).sum()
    }

    /// `Σ μ_j b1_j²`.
    pub fn h1_velocity_norm_sq(&self) -> f64 {
        self.basis.modes().iter().zip(&self.b1).map(|(m, v)| m.mu * v * v).sum()
    }

    pub fn lambda_quotient(&self) -> Result<f64> {
        let den = self.energy_g();
        if den == 0.0 {
            return Err(Error::Undefined("Λ of the zero state"));
        }
        Ok((self.h2_norm_sq() + self.h1_velocity_norm_sq()) / den)
    }

    /// Conservative (undamped) evolution to time `t`.
    pub fn conservative_at(&self, t: f64) -> ModalState {
        let mut out = self.clone();
        for (j, m) in self.basis.modes().iter().enumerate() {
            let w = m.mu.sqrt();
            let (s, c) = (w * t).sin_cos();
            out.b0[j] = self.b0[j] * c + self.b1[j] * s / w;
            out.b1[j] = -self.b0[j] * w * s + self.b1[j] * c;
        }
        out
    }

    /// `(u, ∂_t u)` at `(x, t)` from the conservative series.
    pub fn synthesize_u(&self, x: &[f64], t: f64) -> Result<(f64, f64)> {
        if !self.basis.spec().in_closed_box(x) {
            return Err(Error::OutsideDomain { point: x.to_vec() });
        }
        let st = self.conservative_at(t);
        let mut u = 0.0;
        let mut ut = 0.0;
        for j in 0..st.len() {
            if st.b0[j] == 0.0 && st.b1[j] == 0.0 {
                continue;
            }
            let l = self.basis.eigenfunction(j, x);
            u += st.b0[j] * l;
            ut += st.b1[j] * l;
        }
        Ok((u, ut))
    }

    /// Time derivative of the damped state: `(b1, -μ b0 - D b1)`.
    pub fn damped_derivative(&self, d: &DampingMatrix) -> ModalState {
        let db1 = &d.matrix * DVector::from_column_slice(&self.b1);
        let acc = (0..self.len()).map(|j| -self.basis.mu(j) * self.b0[j] - db1[j]).collect();
        ModalState { basis: self.basis.clone(), b0: self.b1.clone(), b1: acc }
    }

    /// CSV with columns `index,mu,b0,b1`; `index` counts modes from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,mu,b0,b1\n");
        for j in 0..self.len() {
            let _ = writeln!(out, "{},{:?},{:?},{:?}", j + 1, self.basis.mu(j), self.b0[j], self.b1[j]);
        }
        out
    }

    pub fn from_csv(basis: Arc<EigenBasis>, text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("index,mu,b0,b1") {
            return Err(Error::Parse("modal CSV must start with header index,mu,b0,b1".into()));
        }
        let mut s = Self::zero(basis);
        let mut seen = vec![false; s.len()];
        for (row, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |what: &str| Error::Parse(format!("row {}: {what}", row + 2));
            if cols.len() != 4 {
                return Err(bad("expected 4 columns"));
            }
            let j: usize = cols[0].parse().map_err(|_| bad("bad index"))?;
            if j == 0 || j > s.len() {
                return Err(bad("index outside the basis"));
            }
            let num = |c: &str| c.parse::<f64>().map_err(|_| bad("bad number"));
            let mu = num(cols[1])?;
            if (mu - s.basis.mu(j - 1)).abs() > 1e-12 * mu.abs().max(1.0) {
                return Err(bad("eigenvalue does not match the basis"));
            }
            s.b0[j - 1] = num(cols[2])?;
            s.b1[j - 1] = num(cols[3])?;
            seen[j - 1] = true;
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::Parse(format!("mode {} missing", j + 1)));
        }
        Ok(s)
    }
}

/// Coefficients of a function against the basis by tensor Gauss quadrature,
/// with the squared L² norm of the function under the same rule. The
/// difference `norm - Σ coeff²` estimates the spectral tail beyond N.
pub fn project(basis: &EigenBasis, f: impl Fn(&[f64]) -> f64, panels: usize, order: usize) -> (Vec<f64>, f64) {
    let spec = basis.spec();
    let half = spec.half_lengths();
    let rules: Vec<(Vec<f64>, Vec<f64>)> = half.iter().map(|&m| composite(&[-m, m], panels, order)).collect();
    let tables = sine_tables(basis, &rules);
    let counts: Vec<usize> = rules.iter().map(|r| r.0.len()).collect();
    let mut coeffs = vec![0.0; basis.len()];
    let mut norm = 0.0;
    for_each_node(&counts, |ix| {
        let x: Vec<f64> = ix.iter().enumerate().map(|(d, &i)| rules[d].0[i]).collect();
        let w: f64 = ix.iter().enumerate().map(|(d, &i)| rules[d].1[i]).product();
        let v = f(&x);
        if v == 0.0 {
            return;
        }
        norm += w * v * v;
        for (j, mode) in basis.modes().iter().enumerate() {
            let l: f64 = mode.index.iter().enumerate().map(|(d, &k)| tables[d][k - 1][ix[d]]).product();
            coeffs[j] += w * v * l;
        }
    });
    (coeffs, norm)
}

/// `Σ_{j>N}` tail of the initial data: L² tail of the position and H⁻¹-free
/// L² tail of the velocity, each from [`project`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub position_l2: f64,
    pub velocity_l2: f64,
}

pub fn tail_estimate(
    basis: &EigenBasis,
    w0: impl Fn(&[f64]) -> f64,
    w1: impl Fn(&[f64]) -> f64,
    panels: usize,
    order: usize,
) -> TailEstimate {
    let tail = |f: &dyn Fn(&[f64]) -> f64| {
        let (c, n) = project(basis, f, panels, order);
        (n - c.iter().map(|v| v * v).sum::<f64>()).max(0.0)
    };
    TailEstimate { position_l2: tail(&w0), velocity_l2: tail(&w1) }
}

/// Per axis, per wavenumber `k` (row `k-1`), the sine values at the rule nodes.
fn sine_tables(basis: &EigenBasis, rules: &[(Vec<f64>, Vec<f64>)]) -> Vec<Vec<Vec<f64>>> {
    let half = basis.spec().half_lengths();
    (0..rules.len())
        .map(|d| {
            let kmax = basis.modes().iter().map(|m| m.index[d]).max().unwrap_or(1);
            (1..=kmax)
                .map(|k| rules[d].0.iter().map(|&x| sine_mode(k, half[d], x)).collect())
                .collect()
        })
        .collect()
}

fn for_each_node(counts: &[usize], mut f: impl FnMut(&[usize])) {
    if counts.contains(&0) {
        return;
    }
    let mut ix = vec![0usize; counts.len()];
    loop {
        f(&ix);
        let mut d = counts.len();
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            ix[d] += 1;
            if ix[d] < counts[d] {
                break;
            }
            ix[d] = 0;
        }
    }
}

/// Galerkin projection `D_jk = ∫ α ℓ_j ℓ_k` of a damping field.
#[derive(Debug, Clone, PartialEq)]
pub struct DampingMatrix {
    pub matrix: DMatrix<f64>,
    /// Gauss points per panel.
    pub order: usize,
    /// Panels per smooth piece, per axis.
    pub panels: Vec<usize>,
    /// Largest entry change against a rule with twice the panels.
    pub refinement_delta: f64,
    pub converged: bool,
}

impl DampingMatrix {
    pub fn zero(n: usize) -> Self {
        DampingMatrix {
            matrix: DMatrix::zeros(n, n),
            order: 0,
            panels: Vec::new(),
            refinement_delta: 0.0,
            converged: true,
        }
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        DampingMatrix { matrix, order: 0, panels: Vec::new(), refinement_delta: 0.0, converged: true }
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|&v| v == 0.0)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// `G_d[a][b] = ∫ g(x) φ_a φ_b dx` along one damped axis, for wavenumbers up
/// to `kmax` (row/column `k-1`).
fn axis_factor_gram(spec: &DomainSpec, field: &DampingField, axis: usize, kmax: usize, panels: usize, order: usize) -> DMatrix<f64> {
    let m = spec.half_lengths()[axis];
    let (xs, ws) = composite(&field.breakpoints(spec, axis), panels, order);
    let gw: Vec<f64> = xs.iter().zip(&ws).map(|(&x, &w)| w * field.axis_factor(spec, axis, x)).collect();
    let phi = DMatrix::from_fn(kmax, xs.len(), |k, q| sine_mode(k + 1, m, xs[q]));
    let mut weighted = phi.clone();
    for (q, w) in gw.iter().enumerate() {
        weighted.column_mut(q).scale_mut(*w);
    }
    let g = &weighted * phi.transpose();
    (&g + g.transpose()) * 0.5
}

/// `alpha_max (δ_jk − Π_d G_d[j_d][k_d])`, with `G_d = δ` on undamped axes.
fn assemble_damping(basis: &EigenBasis, field: &DampingField, grams: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = basis.len();
    let modes = basis.modes();
    let axes = grams.len();
    DMatrix::from_fn(n, n, |j, k| {
        let (a, b) = (&modes[j].index, &modes[k].index);
        if a[axes..] != b[axes..] {
            return 0.0;
        }
        let keep: f64 = (0..axes).map(|d| grams[d][(a[d] - 1, b[d] - 1)]).product();
        let delta = if j == k { 1.0 } else { 0.0 };
        field.alpha_max * (delta - keep)
    })
}

/// Projects `field` onto the basis. The field has the form
/// `alpha_max (1 − Π_d g(x_d))`, so only 1-D integrals of `g` against sine
/// pairs are needed; they use Gauss–Legendre panels aligned to the collar
/// edges (`order` points per panel). Convergence is judged against a rule
/// with doubled panels; a miss is logged and flagged, not fatal.
pub fn damping_matrix(basis: &EigenBasis, field: &DampingField, order: usize) -> DampingMatrix {
    let spec = basis.spec();
    let n = basis.len();
    let axes = field.damped_axes(spec);
    if field.is_zero() {
        return DampingMatrix { order, ..DampingMatrix::zero(n) };
    }
    if axes == 0 {
        let matrix = DMatrix::identity(n, n) * field.alpha_max;
        return DampingMatrix { matrix, order, panels: Vec::new(), refinement_delta: 0.0, converged: true };
    }
    let half = spec.half_lengths();
    let kmax: Vec<usize> = (0..axes).map(|d| basis.modes().iter().map(|m| m.index[d]).max().unwrap_or(1)).collect();
    let panels: Vec<usize> = (0..axes)
        .map(|d| {
            // A product of two sines oscillates at up to kmax·π/m per unit length.
            let rate = kmax[d] as f64 * std::f64::consts::PI / half[d];
            let longest = field
                .breakpoints(spec, d)
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(0.0, f64::max);
            ((rate * longest) / (0.5 * order as f64)).ceil().max(1.0) as usize
        })
        .collect();
    let grams = |scale: usize| -> Vec<DMatrix<f64>> {
        (0..axes)
            .map(|d| axis_factor_gram(spec, field, d, kmax[d], scale * panels[d], order))
            .collect()
    };
    let (coarse, fine) = (grams(1), grams(2));
    let refinement_delta = coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| (f - c).amax())
        .fold(0.0, f64::max)
        * field.alpha_max;
    let converged = refinement_delta <= DAMPING_QUAD_TOL * field.alpha_max;
    if !converged {
        log::warn!("damping matrix quadrature not converged: refinement changed entries by {refinement_delta:e}");
    }
    DampingMatrix {
        matrix: assemble_damping(basis, field, &fine),
        order,
        panels: panels.iter().map(|p| 2 * p).collect(),
        refinement_delta,
        converged,
    }
}

/// `∫_region ℓ_j ℓ_k` in closed form from 1-D sine overlaps.
pub fn mass_matrix(basis: &EigenBasis, region: Region) -> DMatrix<f64> {
    let spec = basis.spec();
    let n = basis.len();
    let boxed = |lo: &[f64], hi: &[f64]| {
        let half = spec.half_lengths();
        DMatrix::from_fn(n, n, |j, k| {
            let (a, b) = (&basis.modes()[j].index, &basis.modes()[k].index);
            (0..spec.dim()).map(|d| sine_overlap(a[d], b[d], half[d], lo[d], hi[d])).product()
        })
    };
    let inner = spec.collar_inner_box();
    let omega0 = spec.omega0();
    let identity = DMatrix::identity(n, n);
    match region {
        Region::Whole => identity,
        Region::Omega => identity - boxed(&inner.lo, &inner.hi),
        Region::Omega0 => boxed(&omega0.lo, &omega0.hi),
        Region::Union => identity - boxed(&inner.lo, &inner.hi) + boxed(&omega0.lo, &omega0.hi),
    }
}

/// `∫_faces ∂_ν ℓ_j ∂_ν ℓ_k` in closed form.
pub fn face_gram(basis: &EigenBasis, faces: &[Face]) -> DMatrix<f64> {
    let spec = basis.spec();
    let half = spec.half_lengths();
    let vert = spec.vertical_axis();
    let n = basis.len();
    let mut sides: Vec<(usize, f64)> = Vec::new();
    for face in faces {
        match face {
            Face::Gamma1 => sides.push((vert, half[vert])),
            Face::Gamma2 => sides.push((vert, -half[vert])),
            Face::Upsilon => {
                for d in 0..vert {
                    sides.push((d, half[d]));
                    sides.push((d, -half[d]));
                }
            }
        }
    }
    sides.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    sides.dedup();
    DMatrix::from_fn(n, n, |j, k| {
        let (a, b) = (&basis.modes()[j].index, &basis.modes()[k].index);
        sides
            .iter()
            .filter(|(d, _)| (0..spec.dim()).all(|e| e == *d || a[e] == b[e]))
            .map(|&(d, x)| sine_mode_derivative(a[d], half[d], x) * sine_mode_derivative(b[d], half[d], x))
            .sum()
    })
}

/// Composite Gauss rule on `[0, t]` resolving the frequencies of the basis.
pub(crate) fn time_rule(basis: &EigenBasis, t: f64) -> (Vec<f64>, Vec<f64>) {
    let rate = 2.0 * basis.max_frequency();
    let panels = ((t * rate / 6.0).ceil() as usize).max(1);
    composite(&[0.0, t], panels, TIME_ORDER)
}

/// `∫_0^t q(s)ᵀ G q(s) ds` along the conservative flow, with `q = b0` or,
/// when `velocity` is set, `q = ∂_t b0`.
pub fn conservative_quadratic_integral(state: &ModalState, gram: &DMatrix<f64>, t: f64, velocity: bool) -> f64 {
    let (nodes, weights) = time_rule(&state.basis, t);
    nodes
        .iter()
        .zip(&weights)
        .map(|(&s, &w)| {
            let st = state.conservative_at(s);
            let q = DVector::from_vec(if velocity { st.b1 } else { st.b0 });
            w * (gram * &q).dot(&q)
        })
        .sum()
}

/// `∫_0^T ∫_faces |∂_ν u|²` for the conservative evolution of `state`.
pub fn normal_trace_energy(state: &ModalState, faces: &[Face], t: f64) -> f64 {
    if t <= 0.0 || faces.is_empty() {
        return 0.0;
    }
    conservative_quadratic_integral(state, &face_gram(&state.basis, faces), t, false)
}

/// Connected groups of modes coupled through nonzero entries of `d`.
fn coupled_groups(d: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = d.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut i = i;
        while p[i] != r {
            let next = p[i];
            p[i] = r;
            i = next;
        }
        r
    }
    for j in 0..n {
        for k in (j + 1)..n {
            if d[(j, k)] != 0.0 || d[(k, j)] != 0.0 {
                let (a, b) = (find(&mut parent, j), find(&mut parent, k));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for j in 0..n {
        let r = find(&mut parent, j);
        groups.entry(r).or_default().push(j);
    }
    groups.into_values().collect()
}

/// First-order generator `[[0, I], [-diag μ, -D]]` restricted to `members`.
fn generator(mu: &[f64], d: &DMatrix<f64>, members: &[usize]) -> DMatrix<f64> {
    let m = members.len();
    let mut a = DMatrix::zeros(2 * m, 2 * m);
    for r in 0..m {
        a[(r, m + r)] = 1.0;
        a[(m + r, r)] = -mu[members[r]];
        for c in 0..m {
            a[(m + r, m + c)] = -d[(members[r], members[c])];
        }
    }
    a
}

struct PropagatorBlock {
    members: Vec<usize>,
    step: DMatrix<f64>,
    /// `∫_0^Δ e^{Aᵀs} blockdiag(0, 2D) e^{As} ds` by Gauss–Legendre in time.
    dissipation: DMatrix<f64>,
}

/// Exact-in-time propagator of the Galerkin system over a fixed step, with the
/// dissipated energy of each step as a quadratic form.
pub struct DampedPropagator {
    n: usize,
    step: f64,
    blocks: Vec<PropagatorBlock>,
}

impl DampedPropagator {
    pub fn new(basis: &EigenBasis, d: &DampingMatrix, step: f64) -> Result<Self> {
        if d.dim() != basis.len() {
            return Err(Error::validation("damping matrix", "size must match the basis"));
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::validation("propagator", "step must be positive"));
        }
        let mu = basis.eigenvalues();
        let gl = GaussLegendre::new(TIME_ORDER);
        let blocks = coupled_groups(&d.matrix)
            .into_iter()
            .map(|members| {
                let m = members.len();
                let a = generator(&mu, &d.matrix, &members);
                let dsub = DMatrix::from_fn(m, m, |r, c| d.matrix[(members[r], members[c])]);
                let mut dissipation = DMatrix::zeros(2 * m, 2 * m);
                if dsub.iter().any(|&v| v != 0.0) {
                    for (s, w) in gl.on(0.0, step) {
                        let e = (&a * s).exp();
                        let lower = e.rows(m, m).into_owned();
                        dissipation += (lower.transpose() * &dsub * &lower) * (2.0 * w);
                    }
                }
                PropagatorBlock { members, step: (&a * step).exp(), dissipation }
            })
            .collect();
        Ok(DampedPropagator { n: basis.len(), step, blocks })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Advances `(b0, b1)` by one step; returns the energy dissipated.
    pub fn advance(&self, b0: &mut [f64], b1: &mut [f64]) -> f64 {
        debug_assert_eq!(b0.len(), self.n);
        let mut lost = 0.0;
        for blk in &self.blocks {
            let m = blk.members.len();
            let y = DVector::from_fn(2 * m, |r, _| if r < m { b0[blk.members[r]] } else { b1[blk.members[r - m]] });
            lost += (&blk.dissipation * &y).dot(&y);
            let next = &blk.step * y;
            for (r, &j) in blk.members.iter().enumerate() {
                b0[j] = next[r];
                b1[j] = next[m + r];
            }
        }
        lost
    }
}

/// Galerkin solution at time `t` through one matrix exponential per coupled
/// group of modes.
pub fn evolve_damped(state: &ModalState, d: &DampingMatrix, t: f64) -> Result<ModalState> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::validation("evolve", "t must be finite and >= 0"));
    }
    if t == 0.0 {
        return Ok(state.clone());
    }
    let prop = DampedPropagator::new(&state.basis, d, t)?;
    let mut out = state.clone();
    prop.advance(&mut out.b0, &mut out.b1);
    if out.b0.iter().chain(&out.b1).any(|v| !v.is_finite()) {
        return Err(Error::Instability { step: 1 });
    }
    if out.energy_g() > state.energy_g() * (1.0 + 1e-9) + 1e-300 {
        return Err(Error::Accuracy(format!(
            "energy grew from {} to {} under damped evolution",
            state.energy_g(),
            out.energy_g()
        )));
    }
    Ok(out)
}

/// A damped Galerkin run: the energy trace plus the state at every record.
#[derive(Debug, Clone)]
pub struct DampedRun {
    pub trace: EnergyTrace,
    pub states: Vec<ModalState>,
}

/// Internal step keeping `Δ·(ω_max + ‖D‖)` moderate so the Gauss rule in time
/// resolves every step exactly to rounding.
fn internal_substeps(basis: &EigenBasis, d: &DampingMatrix, record_every: f64) -> usize {
    let norm_d = d.matrix.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let rate = basis.max_frequency() + norm_d;
    ((record_every * rate / 4.0).ceil() as usize).max(1)
}

/// Records energy and cumulative dissipation `2∫ b1ᵀ D b1` every
/// `record_every` up to `t_final`.
pub fn damped_trace(state: &ModalState, d: &DampingMatrix, t_final: f64, record_every: f64) -> Result<DampedRun> {
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::validation("trace", "t_final must be finite and >= 0"));
    }
    if !(record_every > 0.0 && record_every.is_finite()) {
        return Err(Error::validation("trace", "record_every must be positive"));
    }
    let records = (t_final / record_every).round() as usize;
    let sub = internal_substeps(&state.basis, d, record_every);
    let prop = DampedPropagator::new(&state.basis, d, record_every / sub as f64)?;
    let mut cur = state.clone();
    let mut times = vec![0.0];
    let mut energies = vec![cur.energy_g()];
    let mut dissipation = vec![0.0];
    let mut states = vec![cur.clone()];
    let mut lost = 0.0;
    for r in 1..=records {
        let before = cur.energy_g();
        for _ in 0..sub {
            lost += prop.advance(&mut cur.b0, &mut cur.b1);
        }
        let e = cur.energy_g();
        if !e.is_finite() {
            return Err(Error::Instability { step: (r * sub) as u64 });
        }
        if e > before * (1.0 + 1e-9) {
            return Err(Error::Accuracy(format!("energy grew at record {r}: {before} -> {e}")));
        }
        times.push(r as f64 * record_every);
        energies.push(e);
        dissipation.push(lost);
        states.push(cur.clone());
    }
    Ok(DampedRun { trace: EnergyTrace::new(times, energies, Some(dissipation))?, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DampingProfile, DampingSupport};
    use std::f64::consts::PI;

    fn square() -> DomainSpec {
        DomainSpec::new(2, 1.0, 1.0, 1.0, 0.2, 0.2).unwrap()
    }

    fn cube() -> DomainSpec {
        DomainSpec::new(3, 1.0, 1.0, 1.0, 0.2, 0.2).unwrap()
    }

    #[test]
    fn lowest_cube_eigenvalue() {
        let b = build_basis(&cube(), 1).unwrap();
        assert!((b.mu(0) - 3.0 * PI * PI / 4.0).abs() < 1e-12);
        assert!((b.mu(0) - 7.402203).abs() < 1e-6);
        assert_eq!(b.modes()[0].index, vec![1, 1, 1]);
    }

    #[test]
    fn square_degeneracy_ordered_by_index() {
        let b = build_basis(&square(), 3).unwrap();
        assert_eq!(b.mu(1), b.mu(2));
        assert!((b.mu(1) - 5.0 * PI * PI / 4.0).abs() < 1e-12);
        assert_eq!(b.modes()[1].index, vec![1, 2]);
        assert_eq!(b.modes()[2].index, vec![2, 1]);
        assert!(build_basis(&square(), 0).is_err());
    }

    #[test]
    fn basis_matches_brute_force_enumeration() {
        let spec = DomainSpec::new(3, 1.0, 0.7, 1.3, 0.2, 0.2).unwrap();
        let b = build_basis(&spec, 300).unwrap();
        let mut all = EigenBasis::from_index_box(&spec, &[25, 25, 25]).unwrap().eigenvalues();
        all.truncate(300);
        assert_eq!(b.eigenvalues(), all);
    }

    #[test]
    fn sine_overlap_matches_quadrature() {
        let gl = GaussLegendre::new(40);
        for (a, b) in [(1, 1), (1, 3), (4, 2), (7, 7)] {
            let q: f64 = gl.on(-0.3, 0.9).map(|(x, w)| w * sine_mode(a, 1.2, x) * sine_mode(b, 1.2, x)).sum();
            assert!((q - sine_overlap(a, b, 1.2, -0.3, 0.9)).abs() < 1e-13, "{a} {b}");
        }
        assert!((sine_overlap(3, 3, 1.2, -1.2, 1.2) - 1.0).abs() < 1e-14);
        assert!(sine_overlap(3, 5, 1.2, -1.2, 1.2).abs() < 1e-14);
    }

    #[test]
    fn energies_and_quotient() {
        let b = Arc::new(build_basis(&square(), 6).unwrap());
        let p = ModalState::single_mode(b.clone(), 1, false).unwrap();
        assert!((p.energy_g() - b.mu(0)).abs() < 1e-14);
        assert!((p.lambda_quotient().unwrap() - b.mu(0)).abs() < 1e-12);
        let v = ModalState::single_mode(b.clone(), 1, true).unwrap();
        assert_eq!(v.energy_g(), 1.0);
        let z = ModalState::zero(b.clone());
        assert_eq!(z.energy_g(), 0.0);
        assert!(matches!(z.lambda_quotient(), Err(Error::Undefined(_))));
        let mut mix = ModalState::zero(b.clone());
        mix.b0[0] = 1.0 / b.mu(0).sqrt();
        mix.b0[5] = 1.0 / b.mu(5).sqrt();
        let l = mix.lambda_quotient().unwrap();
        assert!(l > b.mu(0) && l < b.mu(5));
    }

    #[test]
    fn synthesis_examples() {
        let b = Arc::new(build_basis(&cube(), 4).unwrap());
        let x = [0.3, -0.2, 0.5];
        let l1 = b.eigenfunction(0, &x);
        let p = ModalState::single_mode(b.clone(), 1, false).unwrap();
        assert_eq!(p.synthesize_u(&x, 0.0).unwrap(), (l1, 0.0));
        let period = 2.0 * PI / b.mu(0).sqrt();
        let (u, ut) = p.synthesize_u(&x, period).unwrap();
        assert!((u - l1).abs() < 1e-12 && ut.abs() < 1e-12);
        let v = ModalState::single_mode(b.clone(), 1, true).unwrap();
        assert_eq!(v.synthesize_u(&x, 0.0).unwrap(), (0.0, l1));
        assert!(v.synthesize_u(&[2.0, 0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn damping_matrix_special_cases() {
        let b = build_basis(&square(), 20).unwrap();
        let zero = damping_matrix(&b, &DampingField::zero(), 12);
        assert!(zero.is_zero());
        let uni = DampingField::lateral(DampingProfile::Uniform, 0.7).unwrap();
        let d = damping_matrix(&b, &uni, 12);
        assert!((&d.matrix - DMatrix::identity(20, 20) * 0.7).amax() < 1e-15);
        let bnd = DampingField::new(DampingProfile::Indicator, DampingSupport::Boundary, 0.7).unwrap();
        let full = DomainSpec::new(2, 1.0, 1.0, 1.0, 0.2, 0.2).unwrap();
        let d = damping_matrix(&build_basis(&full, 20).unwrap(), &bnd, 12);
        assert!(d.converged);
        for j in 0..20 {
            assert!(d.matrix[(j, j)] > 0.0 && d.matrix[(j, j)] < 0.7);
        }
    }

    #[test]
    fn indicator_damping_matches_closed_form() {
        let spec = cube();
        let b = build_basis(&spec, 60).unwrap();
        let field = DampingField::lateral(DampingProfile::Indicator, 2.0).unwrap();
        let d = damping_matrix(&b, &field, 12);
        assert!(d.converged);
        let exact = mass_matrix(&b, Region::Omega) * 2.0;
        assert!((&d.matrix - &exact).amax() < 1e-12, "{}", (&d.matrix - &exact).amax());
        for j in 0..60 {
            assert!(d.matrix[(j, j)] > 0.0 && d.matrix[(j, j)] < 2.0);
        }
        // Different vertical wavenumbers never couple under lateral damping.
        for j in 0..60 {
            for k in 0..60 {
                if b.modes()[j].index[2] != b.modes()[k].index[2] {
                    assert_eq!(d.matrix[(j, k)], 0.0);
                }
            }
        }
    }

    #[test]
    fn smooth_bump_is_psd_and_converged() {
        let b = build_basis(&cube(), 40).unwrap();
        let field = DampingField::lateral(DampingProfile::SmoothBump, 1.5).unwrap();
        let d = damping_matrix(&b, &field, 12);
        assert!(d.converged, "delta {}", d.refinement_delta);
        let eig = d.matrix.clone().symmetric_eigen().eigenvalues;
        assert!(eig.min() > -1e-12);
        assert!(eig.max() < 1.5);
    }

    #[test]
    fn conservative_period_returns() {
        let b = Arc::new(build_basis(&square(), 5).unwrap());
        let s = ModalState::single_mode(b.clone(), 1, false).unwrap();
        let period = 2.0 * PI / b.mu(0).sqrt();
        let out = evolve_damped(&s, &DampingMatrix::zero(5), period).unwrap();
        assert!((out.b0[0] - 1.0).abs() < 1e-10 && out.b1[0].abs() < 1e-10);
        assert_eq!(evolve_damped(&s, &DampingMatrix::zero(5), 0.0).unwrap(), s);
    }

    #[test]
    fn uniform_damping_matches_damped_oscillator() {
        let b = Arc::new(build_basis(&square(), 4).unwrap());
        let c = 0.8;
        let d = DampingMatrix::from_matrix(DMatrix::identity(4, 4) * c);
        let s = ModalState::single_mode(b.clone(), 1, false).unwrap();
        let nu = (b.mu(0) - c * c / 4.0).sqrt();
        for t in [0.3, 1.7, 6.0] {
            let out = evolve_damped(&s, &d, t).unwrap();
            let exact = (-c * t / 2.0).exp() * ((nu * t).cos() + c / (2.0 * nu) * (nu * t).sin());
            assert!((out.b0[0] - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn trace_balances_energy() {
        let spec = square();
        let b = Arc::new(build_basis(&spec, 40).unwrap());
        let field = DampingField::lateral(DampingProfile::Indicator, 1.0).unwrap();
        let d = damping_matrix(&b, &field, 12);
        let s = ModalState::random_smooth(b, 9);
        let run = damped_trace(&s, &d, 10.0, 0.5).unwrap();
        let tr = &run.trace;
        let e0 = tr.energies[0];
        for k in 0..tr.times.len() {
            let diss = tr.dissipation.as_ref().unwrap()[k];
            assert!((tr.energies[k] + diss - e0).abs() <= 1e-10 * e0);
            if k > 0 {
                assert!(tr.energies[k] <= tr.energies[k - 1]);
            }
        }
    }

    #[test]
    fn normal_trace_single_mode_closed_form() {
        let b = Arc::new(build_basis(&cube(), 3).unwrap());
        let s = ModalState::single_mode(b.clone(), 1, false).unwrap();
        let t = 2.0 * PI / b.mu(0).sqrt();
        let all = [Face::Gamma1, Face::Gamma2, Face::Upsilon];
        // Each of the 6 faces carries (π/2)² from the normal derivative of the
        // 1-D factor at the endpoint; the tangential factors are normalized.
        let face_integral = 6.0 * (PI / 2.0).powi(2);
        let v = normal_trace_energy(&s, &all, t);
        assert!((v - t / 2.0 * face_integral).abs() < 1e-10 * v);
        assert!((normal_trace_energy(&s, &all, 2.0 * t) - 2.0 * v).abs() < 1e-10 * v);
        assert_eq!(normal_trace_energy(&ModalState::zero(b), &all, t), 0.0);
    }

    #[test]
    fn modal_csv_round_trip() {
        let b = Arc::new(build_basis(&square(), 7).unwrap());
        let s = ModalState::random_smooth(b.clone(), 4);
        let back = ModalState::from_csv(b.clone(), &s.to_csv()).unwrap();
        assert_eq!(back, s);
        assert!(ModalState::from_csv(b, "index,mu,b0,b1\n1,3.0,0,0\n").is_err());
    }

    #[test]
    fn projection_recovers_modes_and_tail() {
        let spec = square();
        let b = build_basis(&spec, 10).unwrap();
        let (c, n) = project(&b, |x| b.eigenfunction(2, x) * 0.5, 4, 12);
        assert!((c[2] - 0.5).abs() < 1e-13 && (n - 0.25).abs() < 1e-13);
        let t = tail_estimate(&b, |x| (1.0 - x[0] * x[0]) * (1.0 - x[1] * x[1]), |_| 0.0, 4, 12);
        assert!(t.position_l2 > 0.0 && t.position_l2 < 1e-3);
        assert_eq!(t.velocity_l2, 0.0);
    }
}
