//! Generalized rays of the wave operator in the box: straight segments at
//! unit speed with specular reflection at the faces.
//!
//! Hitting an edge or corner (two faces reached within [`CORNER_TOL`] of
//! path length) ends the trace with [`Error::Corner`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DomainSpec, Face, Region};

pub const CORNER_TOL: f64 = 1e-12;

/// How many uncontrolled rays a [`GccReport`] keeps as witnesses.
pub const MAX_WITNESSES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub position: Vec<f64>,
    pub direction: Vec<f64>,
    pub clock: f64,
    pub reflections: u64,
}

impl Ray {
    /// Ray at `position` heading along `direction` (normalized here).
    pub fn new(spec: &DomainSpec, position: &[f64], direction: &[f64]) -> Result<Self> {
        if position.len() != spec.dim() || direction.len() != spec.dim() {
            return Err(Error::validation("ray", "position and direction must have length dim"));
        }
        if !spec.in_closed_box(position) {
            return Err(Error::OutsideDomain { point: position.to_vec() });
        }
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::validation("ray", "direction must be a nonzero finite vector"));
        }
        Ok(Ray {
            position: position.to_vec(),
            direction: direction.iter().map(|v| v / norm).collect(),
            clock: 0.0,
            reflections: 0,
        })
    }

    pub fn direction_norm(&self) -> f64 {
        self.direction.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Same point, opposite direction.
    pub fn reversed(&self) -> Ray {
        Ray {
            direction: self.direction.iter().map(|v| -v).collect(),
            ..self.clone()
        }
    }

    fn point_at(&self, s: f64) -> Vec<f64> {
        self.position
            .iter()
            .zip(&self.direction)
            .map(|(x, v)| x + s * v)
            .collect()
    }
}

struct Exit {
    length: f64,
    axis: usize,
    corner: bool,
}

fn next_exit(spec: &DomainSpec, ray: &Ray) -> Exit {
    let half = spec.half_lengths();
    let params: Vec<f64> = ray
        .position
        .iter()
        .zip(&ray.direction)
        .zip(&half)
        .map(|((&x, &v), &m)| {
            if v > 0.0 {
                ((m - x) / v).max(0.0)
            } else if v < 0.0 {
                ((-m - x) / v).max(0.0)
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let (axis, &length) = params
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("dim >= 2");
    let corner = params
        .iter()
        .enumerate()
        .any(|(d, &p)| d != axis && p - length <= CORNER_TOL);
    Exit { length, axis, corner }
}

fn face_of(spec: &DomainSpec, axis: usize, direction: f64) -> Face {
    if axis < spec.vertical_axis() {
        Face::Upsilon
    } else if direction > 0.0 {
        Face::Gamma1
    } else {
        Face::Gamma2
    }
}

/// Moves the ray to the first face it meets and reflects it there.
pub fn advance_to_boundary(spec: &DomainSpec, ray: &Ray) -> Result<(Ray, Face, f64)> {
    let exit = next_exit(spec, ray);
    let half = spec.half_lengths();
    let mut position = ray.point_at(exit.length);
    for (x, m) in position.iter_mut().zip(&half) {
        *x = x.clamp(-m, *m);
    }
    let along = ray.direction[exit.axis];
    position[exit.axis] = half[exit.axis].copysign(along);
    if exit.corner {
        return Err(Error::Corner {
            partial: Box::new(Ray {
                position,
                direction: ray.direction.clone(),
                clock: ray.clock + exit.length,
                reflections: ray.reflections,
            }),
        });
    }
    let mut direction = ray.direction.clone();
    direction[exit.axis] = -along;
    let next = Ray {
        position,
        direction,
        clock: ray.clock + exit.length,
        reflections: ray.reflections + 1,
    };
    Ok((next, face_of(spec, exit.axis, along), exit.length))
}

/// Follows the ray through `n` reflections.
pub fn trace(spec: &DomainSpec, ray: &Ray, n: u64) -> Result<Ray> {
    let mut r = ray.clone();
    for _ in 0..n {
        r = advance_to_boundary(spec, &r)?.0;
    }
    Ok(r)
}

/// Position of the ray after travelling path length `s` (reflections included).
pub fn position_after(spec: &DomainSpec, ray: &Ray, s: f64) -> Result<Vec<f64>> {
    let mut r = ray.clone();
    let target = ray.clock + s;
    loop {
        let exit = next_exit(spec, &r);
        if r.clock + exit.length >= target {
            return Ok(r.point_at(target - r.clock));
        }
        r = advance_to_boundary(spec, &r)?.0;
    }
}

/// Infimum of the parameters in `[0, len]` at which the segment is in the
/// open axis box `(lo, hi)`.
fn box_entry(ray: &Ray, lo: &[f64], hi: &[f64], len: f64) -> Option<f64> {
    let mut a = f64::NEG_INFINITY;
    let mut b = f64::INFINITY;
    for d in 0..ray.position.len() {
        let (x, v) = (ray.position[d], ray.direction[d]);
        if v == 0.0 {
            if !(lo[d] < x && x < hi[d]) {
                return None;
            }
        } else {
            let (t0, t1) = ((lo[d] - x) / v, (hi[d] - x) / v);
            a = a.max(t0.min(t1));
            b = b.min(t0.max(t1));
        }
    }
    (a < b && a <= len && b > 0.0).then_some(a.max(0.0))
}

/// Infimum of segment parameters at which the ray is in the collar ω.
fn collar_entry(spec: &DomainSpec, ray: &Ray, len: f64) -> Option<f64> {
    let half = spec.half_lengths();
    let mut best: Option<f64> = None;
    for d in 0..spec.vertical_axis() {
        let thr = half[d] - spec.collar();
        let (x, v) = (ray.position[d], ray.direction[d]);
        for sign in [1.0, -1.0] {
            // sign * (x + t v) > thr
            let (xs, vs) = (sign * x, sign * v);
            let entry = if vs == 0.0 {
                (xs > thr).then_some(0.0)
            } else if vs > 0.0 {
                let t = (thr - xs) / vs;
                (t <= len).then_some(t.max(0.0))
            } else {
                let t = (thr - xs) / vs;
                (t > 0.0).then_some(0.0)
            };
            if let Some(t) = entry {
                best = Some(best.map_or(t, |b: f64| b.min(t)));
            }
        }
    }
    best
}

fn region_entry(spec: &DomainSpec, ray: &Ray, region: Region, len: f64) -> Option<f64> {
    match region {
        Region::Whole => Some(0.0),
        Region::Omega => collar_entry(spec, ray, len),
        Region::Omega0 => {
            let b = spec.omega0();
            box_entry(ray, &b.lo, &b.hi, len)
        }
        Region::Union => {
            let b = spec.omega0();
            match (collar_entry(spec, ray, len), box_entry(ray, &b.lo, &b.hi, len)) {
                (Some(p), Some(q)) => Some(p.min(q)),
                (p, q) => p.or(q),
            }
        }
    }
}

/// Outcome of following one ray until it enters a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    /// Clock value at entry.
    pub time: f64,
    /// Reflections suffered before entry.
    pub reflections: u64,
}

/// First clock value `<= t_max` at which the ray is in the open region, or
/// `None` if it stays outside up to the horizon.
pub fn first_hit(spec: &DomainSpec, ray: &Ray, region: Region, t_max: f64) -> Result<Option<Hit>> {
    let mut r = ray.clone();
    loop {
        if r.clock > t_max {
            return Ok(None);
        }
        let exit = next_exit(spec, &r);
        if let Some(s) = region_entry(spec, &r, region, exit.length) {
            let time = r.clock + s;
            return Ok((time <= t_max).then_some(Hit {
                time,
                reflections: r.reflections,
            }));
        }
        if r.clock + exit.length > t_max {
            return Ok(None);
        }
        r = advance_to_boundary(spec, &r)?.0;
    }
}

pub fn first_hit_time(spec: &DomainSpec, ray: &Ray, region: Region, t_max: f64) -> Result<Option<f64>> {
    Ok(first_hit(spec, ray, region, t_max)?.map(|h| h.time))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionSampling {
    /// Quasi-random points filling the open box.
    Box,
    /// Quasi-random points filling ω₀.
    Omega0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionSampling {
    /// Low-discrepancy directions on the sphere (circle in 2-D) plus the two
    /// vertical axis directions.
    Sphere,
    /// Only the vertical axis directions.
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GccSampling {
    pub positions: PositionSampling,
    pub directions: DirectionSampling,
}

impl Default for GccSampling {
    fn default() -> Self {
        GccSampling {
            positions: PositionSampling::Box,
            directions: DirectionSampling::Sphere,
        }
    }
}

/// One sampled ray and what happened to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayOutcome {
    pub position: Vec<f64>,
    pub direction: Vec<f64>,
    pub first_hit_time: Option<f64>,
    pub reflections: u64,
    pub corner_terminated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GccReport {
    pub region: Region,
    pub t_max: f64,
    pub sample_count: usize,
    pub controlled_fraction: f64,
    pub max_first_hit_time: Option<f64>,
    pub corner_terminated: usize,
    /// Up to [`MAX_WITNESSES`] rays that never entered the region.
    pub witnesses: Vec<Ray>,
    #[serde(skip)]
    pub outcomes: Vec<RayOutcome>,
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    inv = r;
    inv
}

/// Cranley–Patterson rotated Halton points in the unit cube.
fn halton_points(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    const BASES: [u64; 3] = [2, 3, 5];
    let shift: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    (0..n)
        .map(|i| {
            (0..dim)
                .map(|d| (radical_inverse(i as u64 + 1, BASES[d]) + shift[d]).fract())
                .collect()
        })
        .collect()
}

fn sample_directions(dim: usize, n: usize, mode: DirectionSampling, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut up = vec![0.0; dim];
    up[dim - 1] = 1.0;
    let down: Vec<f64> = up.iter().map(|v| -v).collect();
    let mut dirs = vec![up, down];
    if mode == DirectionSampling::Vertical {
        return dirs;
    }
    let offset: f64 = rng.gen();
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    for i in 0..n {
        let dir = if dim == 2 {
            let th = std::f64::consts::TAU * (i as f64 + offset) / n as f64;
            vec![th.cos(), th.sin()]
        } else {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64 + std::f64::consts::TAU * offset;
            vec![r * phi.cos(), r * phi.sin(), z]
        };
        dirs.push(dir);
    }
    dirs
}

/// Sampled (not certified) check of the geometric control condition for
/// `region` within horizon `t_max`, using the default sampling.
pub fn gcc_check(spec: &DomainSpec, region: Region, t_max: f64, n_pos: usize, n_dir: usize, seed: u64) -> GccReport {
    gcc_check_with(spec, region, t_max, n_pos, n_dir, seed, GccSampling::default())
}

pub fn gcc_check_with(
    spec: &DomainSpec,
    region: Region,
    t_max: f64,
    n_pos: usize,
    n_dir: usize,
    seed: u64,
    sampling: GccSampling,
) -> GccReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = spec.dim();
    let unit = halton_points(n_pos, dim, &mut rng);
    let (lo, hi): (Vec<f64>, Vec<f64>) = match sampling.positions {
        PositionSampling::Box => {
            let half = spec.half_lengths();
            (half.iter().map(|m| -m).collect(), half)
        }
        PositionSampling::Omega0 => {
            let b = spec.omega0();
            (b.lo, b.hi)
        }
    };
    // Keep samples off the faces of the sampling box.
    let shrink = 1.0 - 1e-9;
    let positions: Vec<Vec<f64>> = unit
        .iter()
        .map(|u| {
            (0..dim)
                .map(|d| {
                    let mid = 0.5 * (lo[d] + hi[d]);
                    mid + shrink * (u[d] - 0.5) * (hi[d] - lo[d])
                })
                .collect()
        })
        .collect();
    let directions = sample_directions(dim, n_dir, sampling.directions, &mut rng);
    let samples: Vec<(usize, usize)> = (0..positions.len())
        .flat_map(|p| (0..directions.len()).map(move |d| (p, d)))
        .collect();

    let outcomes: Vec<RayOutcome> = samples
        .par_iter()
        .map(|&(p, d)| {
            let ray = Ray::new(spec, &positions[p], &directions[d]).expect("sample inside box");
            let (first_hit_time, reflections, corner_terminated) = match first_hit(spec, &ray, region, t_max) {
                Ok(Some(h)) => (Some(h.time), h.reflections, false),
                Ok(None) => (None, 0, false),
                Err(Error::Corner { partial }) => (None, partial.reflections, true),
                Err(e) => unreachable!("tracing a valid ray cannot fail otherwise: {e}"),
            };
            RayOutcome {
                position: ray.position,
                direction: ray.direction,
                first_hit_time,
                reflections,
                corner_terminated,
            }
        })
        .collect();

    GccReport::from_outcomes(spec, region, t_max, outcomes)
}

impl GccReport {
    pub fn from_outcomes(spec: &DomainSpec, region: Region, t_max: f64, outcomes: Vec<RayOutcome>) -> Self {
        let sample_count = outcomes.len();
        let controlled = outcomes.iter().filter(|o| o.first_hit_time.is_some()).count();
        let controlled_fraction = if sample_count == 0 {
            1.0
        } else {
            controlled as f64 / sample_count as f64
        };
        let max_first_hit_time = outcomes
            .iter()
            .filter_map(|o| o.first_hit_time)
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))));
        let corner_terminated = outcomes.iter().filter(|o| o.corner_terminated).count();
        let witnesses = outcomes
            .iter()
            .filter(|o| o.first_hit_time.is_none())
            .take(MAX_WITNESSES)
            .map(|o| Ray::new(spec, &o.position, &o.direction).expect("valid sample"))
            .collect();
        GccReport {
            region,
            t_max,
            sample_count,
            controlled_fraction,
            max_first_hit_time,
            corner_terminated,
            witnesses,
            outcomes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube() -> DomainSpec {
        DomainSpec::new(3, 1.0, 1.0, 1.0, 0.2, 0.2).unwrap()
    }

    #[test]
    fn axis_aligned_reflections() {
        let s = cube();
        let up = Ray::new(&s, &[0.0, 0.0, 0.0], &[0.0, 0.0, 1.0]).unwrap();
        let (r, face, len) = advance_to_boundary(&s, &up).unwrap();
        assert_eq!(face, Face::Gamma1);
        assert_eq!(len, 1.0);
        assert_eq!(r.position, vec![0.0, 0.0, 1.0]);
        assert_eq!(r.direction, vec![0.0, 0.0, -1.0]);
        assert_eq!(r.reflections, 1);

        let side = Ray::new(&s, &[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        let (r, face, len) = advance_to_boundary(&s, &side).unwrap();
        assert_eq!(face, Face::Upsilon);
        assert_eq!(len, 1.0);
        assert_eq!(r.position, vec![1.0, 0.0, 0.0]);
        assert_eq!(r.direction, vec![-1.0, 0.0, 0.0]);
    }

    #[test]
    fn oblique_ray_takes_nearest_face() {
        let s = cube();
        let ray = Ray::new(&s, &[0.5, 0.0, 0.0], &[0.6, 0.0, 0.8]).unwrap();
        let (r, face, len) = advance_to_boundary(&s, &ray).unwrap();
        assert_eq!(face, Face::Upsilon);
        assert!((len - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.position[0], 1.0);
        assert!((r.position[2] - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.direction[0] + 0.6).abs() < 1e-15 && (r.direction[2] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn corner_is_signalled() {
        let s = cube();
        let ray = Ray::new(&s, &[0.0, 0.0, 0.0], &[1.0, 0.0, 1.0]).unwrap();
        match advance_to_boundary(&s, &ray) {
            Err(Error::Corner { partial }) => {
                assert!((partial.position[0] - 1.0).abs() < 1e-15);
                assert!((partial.position[2] - 1.0).abs() < 1e-15);
            }
            other => panic!("expected corner, got {other:?}"),
        }
    }

    #[test]
    fn first_hit_examples() {
        let s = cube();
        let trapped = Ray::new(&s, &[0.1, -0.2, 0.05], &[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(first_hit_time(&s, &trapped, Region::Omega, 1e4).unwrap(), None);
        assert_eq!(first_hit_time(&s, &trapped, Region::Union, 1e4).unwrap(), Some(0.0));
        let side = Ray::new(&s, &[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        let t = first_hit_time(&s, &side, Region::Omega, 10.0).unwrap().unwrap();
        assert!((t - 0.8).abs() < 1e-15);
    }

    #[test]
    fn first_hit_after_reflection() {
        let s = cube();
        // Vertical ray above ω₀ heading up: reflects off Γ₁ and comes back down
        // into the band |x3| < 1/4 at clock 0.5 + 0.75.
        let r = Ray::new(&s, &[0.0, 0.0, 0.5], &[0.0, 0.0, 1.0]).unwrap();
        let h = first_hit(&s, &r, Region::Omega0, 10.0).unwrap().unwrap();
        assert!((h.time - 1.25).abs() < 1e-14);
        assert_eq!(h.reflections, 1);
        assert_eq!(first_hit(&s, &r, Region::Omega0, 1.0).unwrap(), None);
    }

    #[test]
    fn empty_sample_is_vacuously_controlled() {
        let rep = gcc_check(&cube(), Region::Union, 10.0, 0, 8, 1);
        assert_eq!(rep.sample_count, 0);
        assert_eq!(rep.controlled_fraction, 1.0);
    }

    #[test]
    fn vertical_rays_from_omega0_avoid_collar() {
        let s = cube();
        let sampling = GccSampling {
            positions: PositionSampling::Omega0,
            directions: DirectionSampling::Vertical,
        };
        let rep = gcc_check_with(&s, Region::Omega, 50.0, 64, 0, 3, sampling);
        assert_eq!(rep.sample_count, 128);
        assert_eq!(rep.controlled_fraction, 0.0);
        assert_eq!(rep.witnesses.len(), MAX_WITNESSES);
    }

    #[test]
    fn gcc_union_controls_sampled_rays() {
        let s = cube();
        let rep = gcc_check(&s, Region::Union, 20.0, 200, 30, 11);
        assert_eq!(rep.controlled_fraction, 1.0, "witnesses: {:?}", rep.witnesses);
        assert!(rep.max_first_hit_time.unwrap() < 20.0);
    }

    #[test]
    fn gcc_is_seed_deterministic() {
        let s = DomainSpec::new(2, 1.0, 1.0, 1.0, 0.2, 0.2).unwrap();
        let a = gcc_check(&s, Region::Omega, 6.0, 50, 10, 5);
        let b = gcc_check(&s, Region::Omega, 6.0, 50, 10, 5);
        assert_eq!(a, b);
        assert_eq!(a.outcomes, b.outcomes);
    }
}
