//! Leapfrog finite differences for the damped wave equation on the box, with
//! the damping term treated implicitly node by node.
//!
//! The lattice includes the boundary nodes, which stay at zero. Energies are
//! midpoint-in-time quantities living on half steps; a trace reports them at
//! whole steps by averaging the two neighbouring half steps.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decay::EnergyTrace;
use crate::error::{Error, Result};
use crate::geometry::{DampingField, DomainSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    /// Cells per axis; the lattice has `resolution + 1` nodes per axis.
    pub resolution: Vec<usize>,
    pub spacing: Vec<f64>,
    pub dt: f64,
    pub w_prev: Vec<f64>,
    pub w_curr: Vec<f64>,
    pub alpha: Vec<f64>,
    pub step: u64,
    strides: Vec<usize>,
    half: Vec<f64>,
}

/// One node of the leapfrog update with implicit damping:
/// `(2w − (1 − αΔt/2) w⁻ + Δt² Δ_h w) / (1 + αΔt/2)`.
pub fn update_node(curr: f64, prev: f64, laplacian: f64, alpha: f64, dt: f64) -> f64 {
    let damp = 0.5 * alpha * dt;
    (2.0 * curr - (1.0 - damp) * prev + dt * dt * laplacian) / (1.0 + damp)
}

/// Largest stable step for the given spacings: `min h / √dim`.
pub fn cfl_limit(spacing: &[f64]) -> f64 {
    spacing.iter().copied().fold(f64::INFINITY, f64::min) / (spacing.len() as f64).sqrt()
}

impl GridState {
    pub fn node_count(&self) -> usize {
        self.w_curr.len()
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Lattice coordinates of a flat node index.
    pub fn coords(&self, flat: usize) -> Vec<usize> {
        self.strides.iter().zip(&self.resolution).map(|(s, r)| (flat / s) % (r + 1)).collect()
    }

    pub fn position(&self, flat: usize) -> Vec<f64> {
        self.coords(flat)
            .iter()
            .zip(&self.spacing)
            .zip(&self.half)
            .map(|((&i, &h), &m)| -m + i as f64 * h)
            .collect()
    }

    fn is_interior(&self, flat: usize) -> bool {
        self.coords(flat).iter().zip(&self.resolution).all(|(&i, &r)| i > 0 && i < r)
    }

    fn laplacian_at(&self, w: &[f64], flat: usize) -> f64 {
        let mut lap = 0.0;
        for (d, &s) in self.strides.iter().enumerate() {
            let h = self.spacing[d];
            lap += ((w[flat + s] + w[flat - s]) - 2.0 * w[flat]) / (h * h);
        }
        lap
    }

    /// `Δ_h w` on interior nodes, zero on the boundary.
    pub fn laplacian(&self, w: &[f64]) -> Vec<f64> {
        (0..w.len())
            .map(|i| if self.is_interior(i) { self.laplacian_at(w, i) } else { 0.0 })
            .collect()
    }

    /// Midpoint energy `Σ [((w − w⁻)/Δt)² + |∇_h((w + w⁻)/2)|²] · cell volume`,
    /// gradients taken on lattice edges.
    pub fn discrete_energy(&self) -> f64 {
        let mid: Vec<f64> = self.w_curr.iter().zip(&self.w_prev).map(|(a, b)| 0.5 * (a + b)).collect();
        let mut kinetic = 0.0;
        let mut potential = 0.0;
        for i in 0..mid.len() {
            let v = (self.w_curr[i] - self.w_prev[i]) / self.dt;
            kinetic += v * v;
            let c = self.coords(i);
            for (d, &s) in self.strides.iter().enumerate() {
                if c[d] < self.resolution[d] {
                    let g = (mid[i + s] - mid[i]) / self.spacing[d];
                    potential += g * g;
                }
            }
        }
        (kinetic + potential) * self.cell_volume()
    }

    /// Damping power `2 Σ α ((w − w⁻)/Δt)² · cell volume` at the current half step.
    pub fn dissipation_rate(&self) -> f64 {
        let s: f64 = self
            .w_curr
            .iter()
            .zip(&self.w_prev)
            .zip(&self.alpha)
            .map(|((a, b), &al)| {
                let v = (a - b) / self.dt;
                al * v * v
            })
            .sum();
        2.0 * s * self.cell_volume()
    }

    /// Advances one step in place.
    pub fn step(&mut self) -> Result<()> {
        let outer = self.strides[0];
        let mut next = vec![0.0; self.w_curr.len()];
        let this = &*self;
        next.par_chunks_mut(outer).enumerate().for_each(|(slab, out)| {
            if slab == 0 || slab == this.resolution[0] {
                return;
            }
            for (k, o) in out.iter_mut().enumerate() {
                let i = slab * outer + k;
                if this.is_interior(i) {
                    *o = update_node(this.w_curr[i], this.w_prev[i], this.laplacian_at(&this.w_curr, i), this.alpha[i], this.dt);
                }
            }
        });
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Instability { step: self.step + 1 });
        }
        self.w_prev = std::mem::replace(&mut self.w_curr, next);
        self.step += 1;
        Ok(())
    }

    /// Writes `w_curr` as little-endian f64 to `<stem>.bin` with a JSON
    /// header in `<stem>.json`.
    pub fn write_snapshot(&self, stem: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(8 * self.w_curr.len());
        for v in &self.w_curr {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(stem.with_extension("bin"), bytes)?;
        let header = SnapshotHeader {
            shape: self.resolution.iter().map(|r| r + 1).collect(),
            spacing: self.spacing.clone(),
            step: self.step,
            dt: self.dt,
            time: self.time(),
            dtype: "f64-le".into(),
        };
        std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&header)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    /// Nodes per axis, first axis slowest.
    pub shape: Vec<usize>,
    pub spacing: Vec<f64>,
    pub step: u64,
    pub dt: f64,
    pub time: f64,
    pub dtype: String,
}

/// Reads a snapshot written by [`GridState::write_snapshot`].
pub fn read_snapshot(stem: &Path) -> Result<(SnapshotHeader, Vec<f64>)> {
    let header: SnapshotHeader = serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
    let bytes = std::fs::read(stem.with_extension("bin"))?;
    let expected: usize = header.shape.iter().product();
    if bytes.len() != 8 * expected {
        return Err(Error::Parse(format!("snapshot holds {} bytes, header implies {}", bytes.len(), 8 * expected)));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, values))
}

/// Lattice with `resolution` cells per axis, Taylor-started from `(w0, w1)`:
/// `w⁻¹ = w⁰ − Δt w₁ + (Δt²/2)(Δ_h w⁰ − α w₁)`.
pub fn init_grid(
    spec: &DomainSpec,
    field: &DampingField,
    resolution: usize,
    dt: f64,
    w0: impl Fn(&[f64]) -> f64,
    w1: impl Fn(&[f64]) -> f64,
) -> Result<GridState> {
    if resolution < 4 {
        return Err(Error::validation("grid", format!("resolution >= 4 violated ({resolution})")));
    }
    let half = spec.half_lengths();
    let spacing: Vec<f64> = half.iter().map(|m| 2.0 * m / resolution as f64).collect();
    let limit = cfl_limit(&spacing);
    if !(dt > 0.0 && dt <= limit) {
        return Err(Error::validation("grid", format!("CFL dt <= {limit} violated (dt = {dt})")));
    }
    let dim = spec.dim();
    let res = vec![resolution; dim];
    let mut strides = vec![1usize; dim];
    for d in (0..dim - 1).rev() {
        strides[d] = strides[d + 1] * (res[d + 1] + 1);
    }
    let total = strides[0] * (res[0] + 1);
    let mut g = GridState {
        resolution: res,
        spacing,
        dt,
        w_prev: vec![0.0; total],
        w_curr: vec![0.0; total],
        alpha: vec![0.0; total],
        step: 0,
        strides,
        half,
    };
    let mut vel = vec![0.0; total];
    for i in 0..total {
        let x = g.position(i);
        g.alpha[i] = field.alpha_unchecked(spec, &x);
        if g.is_interior(i) {
            g.w_curr[i] = w0(&x);
            vel[i] = w1(&x);
        }
    }
    let lap = g.laplacian(&g.w_curr);
    for i in 0..total {
        if g.is_interior(i) {
            g.w_prev[i] = g.w_curr[i] - dt * vel[i] + 0.5 * dt * dt * (lap[i] - g.alpha[i] * vel[i]);
        }
    }
    Ok(g)
}

fn whole_steps(span: f64, dt: f64, what: &str) -> Result<u64> {
    let n = (span / dt).round();
    if (n * dt - span).abs() > 1e-9 * span.max(dt) {
        return Err(Error::validation("fdtd run", format!("{what} = {span} is not a whole number of steps dt = {dt}")));
    }
    Ok(n as u64)
}

/// Evolves to `t_final`, recording energy and cumulative dissipation every
/// `record_every` (both whole multiples of `dt`).
pub fn run(grid: &mut GridState, t_final: f64, record_every: f64) -> Result<EnergyTrace> {
    let dt = grid.dt;
    let steps = whole_steps(t_final, dt, "t_final")?;
    let every = if steps == 0 { 1 } else { whole_steps(record_every, dt, "record_every")?.max(1) };
    let t0 = grid.time();

    // Half-step energy and powers at t_n - dt/2 and t_n - 3dt/2.
    let mut e_before = grid.discrete_energy();
    let mut p_half = grid.dissipation_rate();
    let mut p_older = p_half;
    let mut lost = 0.0;

    let mut times = Vec::new();
    let mut energies = Vec::new();
    let mut dissipation = Vec::new();
    for n in 0..=steps {
        grid.step()?;
        let e_after = grid.discrete_energy();
        let p_after = grid.dissipation_rate();
        if n > 0 {
            // [t_{n-1}, t_n] by the trapezoid rule on a dt/2 mesh, whole-step
            // powers averaged from their half-step neighbours.
            lost += dt / 8.0 * (p_older + 6.0 * p_half + p_after);
        }
        if n % every == 0 || n == steps {
            times.push(t0 + n as f64 * dt);
            energies.push(0.5 * (e_before + e_after));
            dissipation.push(lost);
        }
        e_before = e_after;
        p_older = p_half;
        p_half = p_after;
    }
    EnergyTrace::new(times, energies, Some(dissipation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DampingProfile;
    use std::f64::consts::PI;

    fn square() -> DomainSpec {
        DomainSpec::new(2, 1.0, 1.0, 1.0, 0.2, 0.2).unwrap()
    }

    fn mode11(x: &[f64]) -> f64 {
        ((PI * (x[0] + 1.0) / 2.0).sin()) * ((PI * (x[1] + 1.0) / 2.0).sin())
    }

    #[test]
    fn three_point_update() {
        let out = update_node(1.0, 1.0, -2.0, 0.0, 0.5);
        assert_eq!(out, 0.5);
        let big = update_node(1.0, 0.5, -2.0, 1e12, 0.01);
        assert!(big.is_finite() && (big - 0.5).abs() < 1e-6);
    }

    #[test]
    fn cfl_and_resolution_checks() {
        let s = square();
        let h = 2.0 / 16.0;
        assert!(init_grid(&s, &DampingField::zero(), 16, h, |_| 0.0, |_| 0.0).is_err());
        assert!(init_grid(&s, &DampingField::zero(), 16, h / 2f64.sqrt(), |_| 0.0, |_| 0.0).is_ok());
        assert!(init_grid(&s, &DampingField::zero(), 3, 0.01, |_| 0.0, |_| 0.0).is_err());
    }

    #[test]
    fn zero_state_stays_zero() {
        let mut g = init_grid(&square(), &DampingField::zero(), 8, 0.05, |_| 0.0, |_| 0.0).unwrap();
        assert_eq!(g.discrete_energy(), 0.0);
        g.step().unwrap();
        assert!(g.w_curr.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn taylor_start_matches_eigenmode() {
        let dt = 0.01;
        let g = init_grid(&square(), &DampingField::zero(), 32, dt, mode11, |_| 0.0).unwrap();
        let mu = PI * PI / 2.0;
        // Discrete Laplacian eigenvalue of the sampled mode.
        let h = 2.0 / 32.0;
        let mu_h = 2.0 * 4.0 / (h * h) * (PI * h / 4.0).sin().powi(2);
        for i in 0..g.node_count() {
            let exact = g.w_curr[i] * (1.0 - 0.5 * dt * dt * mu_h);
            assert!((g.w_prev[i] - exact).abs() < 1e-14);
            let continuum = g.w_curr[i] * (1.0 - 0.5 * dt * dt * mu);
            assert!((g.w_prev[i] - continuum).abs() < 1e-6);
        }
    }

    #[test]
    fn undamped_energy_drift_is_second_order() {
        let drift = |res: usize| {
            let h = 2.0 / res as f64;
            let dt = 0.5 * h;
            let mut g = init_grid(&square(), &DampingField::zero(), res, dt, mode11, |_| 0.0).unwrap();
            let period = 2.0 * PI / (PI * PI / 2.0f64).sqrt();
            let t = (period / dt).round() * dt;
            let tr = run(&mut g, t, dt).unwrap();
            let e0 = tr.energies[0];
            tr.energies.iter().map(|e| (e - e0).abs() / e0).fold(0.0, f64::max)
        };
        let (coarse, fine) = (drift(16), drift(32));
        assert!(coarse < 1e-2);
        assert!(coarse / fine > 3.0, "coarse {coarse} fine {fine}");
    }

    #[test]
    fn damped_energy_balance_and_monotonicity() {
        let field = DampingField::lateral(DampingProfile::Uniform, 0.5).unwrap();
        let mut g = init_grid(&square(), &field, 32, 0.02, mode11, |_| 0.0).unwrap();
        let tr = run(&mut g, 4.0, 0.1).unwrap();
        let diss = tr.dissipation.as_ref().unwrap();
        let e0 = tr.energies[0];
        for k in 1..tr.len() {
            assert!(tr.energies[k] < tr.energies[k - 1]);
            assert!(diss[k] >= diss[k - 1]);
            assert!((tr.energies[k] + diss[k] - e0).abs() < 2e-3 * e0);
        }
    }

    #[test]
    fn zero_horizon_gives_one_record() {
        let mut g = init_grid(&square(), &DampingField::zero(), 8, 0.05, mode11, |_| 0.0).unwrap();
        let tr = run(&mut g, 0.0, 0.1).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.times, vec![0.0]);
    }

    #[test]
    fn symmetric_data_stays_symmetric() {
        let field = DampingField::lateral(DampingProfile::Indicator, 3.0).unwrap();
        let bump = |x: &[f64]| (1.0 - x[0] * x[0]) * (1.0 - x[1] * x[1]) * (1.0 + x[0] * x[0]);
        let mut g = init_grid(&square(), &field, 24, 0.03, bump, |_| 0.0).unwrap();
        for _ in 0..200 {
            g.step().unwrap();
        }
        let n = 25;
        for i in 0..n {
            for j in 0..n {
                let a = g.w_curr[i * n + j];
                assert!((a - g.w_curr[(n - 1 - i) * n + j]).abs() <= 1e-10);
                assert!((a - g.w_curr[i * n + (n - 1 - j)]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = init_grid(&square(), &DampingField::zero(), 8, 0.05, mode11, |_| 0.0).unwrap();
        let stem = dir.path().join("snap");
        g.write_snapshot(&stem).unwrap();
        let (h, v) = read_snapshot(&stem).unwrap();
        assert_eq!(h.shape, vec![9, 9]);
        assert_eq!(v, g.w_curr);
    }
}
