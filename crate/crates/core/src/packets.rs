//! Gaussian packets, their mirror images across the horizontal faces, and
//! the parameter rules that keep remote images small.
//!
//! Everything here is evaluated pointwise at a single frequency `(xi, tau)`.
//! The packet weight is
//!
//! ```text
//! a(x,t,s) = (is+1)^(-3/2) exp(-|x|^2 / (4h(is+1))) (-ihs+1)^(-1/2) exp(-t^2 / (4(-ihs+1)))
//! ```
//!
//! with principal branches, which are continuous for all real `s`.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::DomainSpec;

/// Terms of the image Gaussian sum below this value are dropped.
pub const IMAGE_TERM_CUTOFF: f64 = 1e-18;

/// Packet scale, center, and frequency window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PacketParams {
    pub h: f64,
    pub x_o: [f64; 3],
    pub rho: f64,
    pub sigma: f64,
    pub xi_o3: i64,
}

impl PacketParams {
    /// Validates against a 3-D domain: `0 < h <= h_o`, `x_o` in the closed
    /// observation box and `xi_o3` odd.
    pub fn new(spec: &DomainSpec, h: f64, x_o: [f64; 3], xi_o3: i64) -> Result<Self> {
        if spec.dim() != 3 {
            return Err(Error::validation("packet", "packets live in a 3-D box"));
        }
        let h_o = spec.h_o();
        if !(h > 0.0 && h <= h_o) {
            return Err(Error::validation("packet", format!("need 0 < h <= h_o = {h_o}, got {h}")));
        }
        if xi_o3 % 2 == 0 {
            return Err(Error::validation("packet", format!("xi_o3 must be odd, got {xi_o3}")));
        }
        let obs = spec.omega0();
        let inside = x_o
            .iter()
            .zip(obs.lo.iter().zip(&obs.hi))
            .all(|(&v, (&lo, &hi))| lo <= v && v <= hi);
        if !inside {
            return Err(Error::validation("packet", format!("center {x_o:?} outside the observation box")));
        }
        Ok(PacketParams {
            h,
            x_o,
            rho: spec.rho(),
            sigma: xi_o3.signum() as f64,
            xi_o3,
        })
    }

    /// The vertical frequency window `[xi_o3 - 1, xi_o3 + 1]`.
    pub fn xi3_window(&self) -> (f64, f64) {
        let c = self.xi_o3 as f64;
        (c - 1.0, c + 1.0)
    }

    /// The face `x3 = sign * sigma * rho`.
    pub fn face(&self, sign: f64) -> f64 {
        sign * self.sigma * self.rho
    }
}

/// Image counts below (`q`) and above (`p`) the packet, and the
/// propagation length they were chosen for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReflectionSchedule {
    pub p: u64,
    pub q: u64,
    pub length: f64,
}

fn dispersion(s: f64, h: f64) -> f64 {
    (s * s + 1.0).powf(-0.75) * ((h * s).powi(2) + 1.0).powf(-0.25)
}

/// The packet weight.
pub fn eval_a(x: [f64; 3], t: f64, s: f64, h: f64) -> Complex64 {
    let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    let space = Complex64::new(1.0, s);
    let time = Complex64::new(1.0, -h * s);
    (-1.5 * space.ln() - r2 / (4.0 * h * space) - 0.5 * time.ln() - t * t / (4.0 * time)).exp()
}

/// Closed-form modulus of [`eval_a`].
pub fn modulus_a(x: [f64; 3], t: f64, s: f64, h: f64) -> f64 {
    let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    let hs2 = (h * s).powi(2) + 1.0;
    dispersion(s, h) * (-r2 / (4.0 * h * (s * s + 1.0))).exp() * (-t * t / (4.0 * hs2)).exp()
}

/// Variant weight with `-ihs + 2` in the time factor. At `s = 0` it equals
/// `a(x, t / sqrt 2, 0)`.
pub fn eval_a_tilde(x: [f64; 3], t: f64, s: f64, h: f64) -> Complex64 {
    let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    let space = Complex64::new(1.0, s);
    // sqrt(2) (2 - ihs)^(-1/2) = (1 - ihs/2)^(-1/2)
    let time = Complex64::new(1.0, -0.5 * h * s);
    (-1.5 * space.ln() - r2 / (4.0 * h * space) - 0.5 * time.ln() - t * t / (8.0 * time)).exp()
}

/// Central-difference value of `(i d/ds + h (Laplacian - d^2/dt^2)) f` at
/// `(x, t, s)`. The evaluator receives `(x, t, s)`.
pub fn pde_residual<F>(f: F, x: [f64; 3], t: f64, s: f64, h: f64, step: f64) -> Result<Complex64>
where
    F: Fn([f64; 3], f64, f64) -> Complex64,
{
    if !(step > 0.0 && s - step > 0.0) {
        return Err(Error::Precondition(format!(
            "stencil step {step} must be positive and leave s - step > 0 (s = {s})"
        )));
    }
    let centre = f(x, t, s);
    let ds = (f(x, t, s + step) - f(x, t, s - step)) / (2.0 * step);
    let inv = 1.0 / (step * step);
    let mut lap = Complex64::new(0.0, 0.0);
    for d in 0..3 {
        let mut up = x;
        let mut down = x;
        up[d] += step;
        down[d] -= step;
        lap += (f(up, t, s) - 2.0 * centre + f(down, t, s)) * inv;
    }
    let dtt = (f(x, t + step, s) - 2.0 * centre + f(x, t - step, s)) * inv;
    Ok(Complex64::i() * ds + h * (lap - dtt))
}

fn parity(n: i64) -> f64 {
    if n.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Unevaluated sum `hi + lo` of two doubles, used where mirrored images
/// must round to identical values.
#[derive(Debug, Clone, Copy)]
struct DoubleDouble(f64, f64);

fn two_sum(a: f64, b: f64) -> DoubleDouble {
    let s = a + b;
    let bb = s - a;
    DoubleDouble(s, (a - (s - bb)) + (b - bb))
}

impl DoubleDouble {
    fn product(a: f64, b: f64) -> Self {
        let p = a * b;
        DoubleDouble(p, a.mul_add(b, -p))
    }

    fn normalized(hi: f64, lo: f64) -> Self {
        let s = hi + lo;
        DoubleDouble(s, lo - (s - hi))
    }

    fn add(self, b: f64) -> Self {
        let DoubleDouble(s, e) = two_sum(self.0, b);
        Self::normalized(s, e + self.1)
    }

    fn scale(self, b: f64) -> Self {
        let DoubleDouble(p, e) = Self::product(self.0, b);
        Self::normalized(p, e + self.1 * b)
    }

    fn square(self) -> Self {
        let DoubleDouble(p, e) = Self::product(self.0, self.0);
        Self::normalized(p, e + 2.0 * self.0 * self.1)
    }
}

/// Per-frequency kernel of the `n`-th image operator at `(x, t)` and time `s`.
#[allow(clippy::too_many_arguments)]
pub fn image_integrand(
    n: i64,
    x: [f64; 3],
    t: f64,
    s: f64,
    xi: [f64; 3],
    tau: f64,
    params: &PacketParams,
) -> Complex64 {
    let h = params.h;
    let sign = parity(n);
    let shift = DoubleDouble::product(2.0 * n as f64 * params.sigma, params.rho);
    let drift = params.x_o[2] + 2.0 * xi[2] * h * s;
    // Image-dependent parts carry extra precision; everything else is
    // shared between images and rounds identically.
    let vertical = shift.scale(sign).add(x[2]).add(-sign * drift);
    let mirrored = shift.add(sign * x[2]);
    let xi2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
    let common_phase = x[0] * xi[0] + x[1] * xi[1] + t * tau - (xi2 - tau * tau) * h * s;

    let lateral = [
        x[0] - params.x_o[0] - 2.0 * xi[0] * h * s,
        x[1] - params.x_o[1] - 2.0 * xi[1] * h * s,
        0.0,
    ];
    let shared = eval_a(lateral, t + 2.0 * tau * h * s, s, h);

    // exp(-y^2 / (4h(1+is))) = exp(-y^2 k) cis(y^2 k s), k = 1/(4h(1+s^2))
    let k = 1.0 / (4.0 * h * (1.0 + s * s));
    let exponent = vertical.square().scale(k);
    let angle = exponent.scale(s);
    let phase = mirrored
        .scale(xi[2])
        .add(common_phase)
        .add(angle.0)
        .add(angle.1);
    let modulus = (-exponent.0).exp() * (1.0 - exponent.1);
    sign * shared * Complex64::from_polar(modulus, phase.0) * Complex64::new(1.0, phase.1)
}

/// Sum of the `n` and `n + 1` kernels on the face `x3 = (-1)^n sigma rho`,
/// where they cancel.
#[allow(clippy::too_many_arguments)]
pub fn cancellation_residual(
    n: i64,
    x1: f64,
    x2: f64,
    t: f64,
    s: f64,
    xi: [f64; 3],
    tau: f64,
    params: &PacketParams,
) -> Complex64 {
    let x = [x1, x2, parity(n) * params.sigma * params.rho];
    image_integrand(n, x, t, s, xi, tau, params) + image_integrand(n + 1, x, t, s, xi, tau, params)
}

/// Sum of the kernels `n = -2Q ..= 2P + 1` on the face
/// `x3 = face_sign * sigma * rho`.
#[allow(clippy::too_many_arguments)]
pub fn face_sum(
    params: &PacketParams,
    schedule: &ReflectionSchedule,
    face_sign: f64,
    x1: f64,
    x2: f64,
    t: f64,
    s: f64,
    xi: [f64; 3],
    tau: f64,
) -> Complex64 {
    let x = [x1, x2, params.face(face_sign)];
    let lo = -2 * schedule.q as i64;
    let hi = 2 * schedule.p as i64 + 1;
    (lo..=hi).map(|n| image_integrand(n, x, t, s, xi, tau, params)).sum()
}

/// Image counts large enough that the remote images stay at distance at
/// least `sqrt(s^2 + 1)` for every `s <= length`.
pub fn choose_pq(length: f64, xi_o3: i64, rho: f64, h_o: f64) -> Result<ReflectionSchedule> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::validation("schedule", format!("length must be positive, got {length}")));
    }
    if !(rho > 0.0 && h_o > 0.0) {
        return Err(Error::validation("schedule", "rho and h_o must be positive"));
    }
    let q = ((length + 1.0) / (4.0 * rho)).ceil();
    let p = ((length + 1.0) + 2.0 * (xi_o3.unsigned_abs() as f64 + 1.0) * h_o * length) / (4.0 * rho);
    Ok(ReflectionSchedule {
        p: p.ceil() as u64,
        q: q as u64,
        length,
    })
}

/// Signed distances from the packet to the two outermost images at time
/// `s`, multiplied by `sigma` so both are positive when the schedule is
/// adequate.
pub fn remote_offsets(schedule: &ReflectionSchedule, sigma: f64, rho: f64, x_o3: f64, xi3: f64, h: f64, s: f64) -> (f64, f64) {
    let drift = x_o3 + 2.0 * xi3 * h * s;
    let below = (4.0 * schedule.q as f64 + 1.0) * sigma * rho + drift;
    let above = (4.0 * schedule.p as f64 + 3.0) * sigma * rho - drift;
    (sigma * below, sigma * above)
}

/// Arguments of the image Gaussian comb.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CombPoint {
    pub rho: f64,
    pub sigma: f64,
    pub x3: f64,
    pub x_o3: f64,
    pub xi3: f64,
    pub h: f64,
    pub s: f64,
}

/// Sum over all images of the Gaussian factor `exp(-d_n^2 / (4h(s^2+1)))`,
/// truncated once terms drop below [`IMAGE_TERM_CUTOFF`].
pub fn image_gaussian_sum(p: &CombPoint) -> f64 {
    let drift = p.sigma * p.x_o3 + 2.0 * p.sigma * p.xi3 * p.h * p.s;
    let scale = 4.0 * p.h * (p.s * p.s + 1.0);
    let term = |n: i64| {
        let d = parity(n) * p.x3 * p.sigma + 2.0 * n as f64 * p.rho - drift;
        (-d * d / scale).exp()
    };
    let n0 = (drift / (2.0 * p.rho)).round() as i64;
    let mut sum = term(n0);
    for dir in [1i64, -1] {
        let mut n = n0 + dir;
        let mut quiet = 0;
        while quiet < 2 {
            let v = term(n);
            sum += v;
            quiet = if v < IMAGE_TERM_CUTOFF { quiet + 1 } else { 0 };
            n += dir;
        }
    }
    sum
}

/// Smallest `c` with `sum <= 4 + c sqrt(h (s^2 + 1))` over `points`
/// (never negative).
pub fn calibrate_image_constant(points: &[CombPoint]) -> f64 {
    points
        .iter()
        .map(|p| (image_gaussian_sum(p) - 4.0) / (p.h * (p.s * p.s + 1.0)).sqrt())
        .fold(0.0, f64::max)
}

/// Balancing choice of the frequency cut `lambda` and propagation length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Balance {
    pub lambda: f64,
    pub length: f64,
    /// Relative residuals of the two balancing identities.
    pub residuals: [f64; 2],
}

/// `lambda = h^-4` and `length = h^-(4 + 10 gamma)`, which make both
/// `h^-3/2 lambda^-1/2` and `h^-3/2 length^-1/2 (lambda/h)^gamma` equal to
/// `sqrt h`.
pub fn choose_lambda_length(h: f64, gamma: f64) -> Result<Balance> {
    if h > 1.0 {
        return Err(Error::OutOfRange(format!("h = {h} > 1 would give lambda < 1")));
    }
    if !(h > 0.0) {
        return Err(Error::validation("balance", format!("h must be positive, got {h}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::validation("balance", format!("gamma must be positive, got {gamma}")));
    }
    let lambda = h.powi(-4);
    let length = h.powf(-(4.0 + 10.0 * gamma));
    let target = h.sqrt();
    let first = h.powf(-1.5) / lambda.sqrt();
    let second = h.powf(-1.5) / length.sqrt() * (lambda / h).powf(gamma);
    let residuals = [(first - target).abs() / target, (second - target).abs() / target];
    if residuals.iter().any(|r| !(*r <= 1e-12)) {
        return Err(Error::Accuracy(format!("balancing residuals {residuals:?} exceed 1e-12")));
    }
    Ok(Balance { lambda, length, residuals })
}

/// Outcome of one identity in [`verify_identities`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub samples: usize,
    /// Largest residual, or smallest ratio/margin for lower bounds.
    pub worst: f64,
    pub threshold: f64,
    /// `true` when `worst` must stay at or above `threshold`.
    pub lower_bound: bool,
    pub passed: bool,
}

impl IdentityCheck {
    fn upper(name: &'static str, samples: usize, worst: f64, threshold: f64) -> Self {
        IdentityCheck { name, samples, worst, threshold, lower_bound: false, passed: worst <= threshold }
    }

    fn lower(name: &'static str, samples: usize, worst: f64, threshold: f64) -> Self {
        IdentityCheck { name, samples, worst, threshold, lower_bound: true, passed: worst >= threshold }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub seed: u64,
    pub checks: Vec<IdentityCheck>,
    /// Brute-force constant of the image-sum bound.
    pub image_constant: f64,
    pub passed: bool,
}

/// Random point for the finite-difference order test: coordinates scaled to
/// the packet width so the stencil resolves it.
fn random_pde_point(rng: &mut impl rand::Rng) -> ([f64; 3], f64, f64, f64, f64) {
    let h: f64 = rng.gen_range(0.01..1.0);
    let w = h.sqrt();
    let x = [rng.gen_range(-1.5..1.5) * w, rng.gen_range(-1.5..1.5) * w, rng.gen_range(-1.5..1.5) * w];
    (x, rng.gen_range(-2.0..2.0), rng.gen_range(0.2..3.0), h, 0.02 * w)
}

/// Order of convergence ratio `|r(step)| / |r(step/2)|`.
fn halving_ratio(f: impl Fn([f64; 3], f64, f64) -> Complex64 + Copy, p: ([f64; 3], f64, f64, f64, f64)) -> f64 {
    let (x, t, s, h, step) = p;
    let coarse = pde_residual(f, x, t, s, h, step).map(|r| r.norm()).unwrap_or(f64::NAN);
    let fine = pde_residual(f, x, t, s, h, step / 2.0).map(|r| r.norm()).unwrap_or(f64::NAN);
    coarse / fine
}

/// Random packet parameters on a random 3-D box.
fn random_params(rng: &mut impl rand::Rng) -> PacketParams {
    let rho = rng.gen_range(0.5..2.0);
    let r_o = rng.gen_range(0.05..0.45) * rho;
    let spec = DomainSpec::with_default_collar(3, 2.0 * rho, 2.0 * rho, rho, r_o).expect("valid by construction");
    let xi_o3 = (2 * rng.gen_range(0..5) + 1) * if rng.gen_bool(0.5) { 1 } else { -1 };
    let obs = spec.omega0();
    let x_o = [0, 1, 2].map(|d| rng.gen_range(obs.lo[d]..=obs.hi[d]));
    let h = spec.h_o() * rng.gen_range(0.05..=1.0);
    PacketParams::new(&spec, h, x_o, xi_o3).expect("valid by construction")
}

fn random_frequency(rng: &mut impl rand::Rng, p: &PacketParams) -> ([f64; 3], f64) {
    let (lo, hi) = p.xi3_window();
    (
        [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(lo..=hi)],
        rng.gen_range(-5.0..5.0),
    )
}

/// Runs every packet identity on seeded random samples and grids.
pub fn verify_identities(seed: u64) -> IdentityReport {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let (t, s, h) = (rng.gen_range(-4.0..4.0), rng.gen_range(0.0..30.0), rng.gen_range(0.01..1.0));
        let m = modulus_a(x, t, s, h);
        if m > 0.0 {
            worst = worst.max((eval_a(x, t, s, h).norm() - m).abs() / m);
        }
    }
    checks.push(IdentityCheck::upper("modulus", 1000, worst, 1e-12));

    let (mut ra, mut rt) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..100 {
        let p = random_pde_point(&mut rng);
        let h = p.3;
        ra = ra.min(halving_ratio(move |x, t, s| eval_a(x, t, s, h), p));
        rt = rt.min(halving_ratio(move |x, t, s| eval_a_tilde(x, t, s, h), p));
    }
    checks.push(IdentityCheck::lower("schrodinger-order-a", 100, ra, 3.5));
    checks.push(IdentityCheck::lower("schrodinger-order-a-tilde", 100, rt, 3.5));

    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p = random_params(&mut rng);
        let n = rng.gen_range(-4..=4);
        let (xi, tau) = random_frequency(&mut rng, &p);
        let (x1, x2) = (p.x_o[0] + rng.gen_range(-0.5..0.5), p.x_o[1] + rng.gen_range(-0.5..0.5));
        let (t, s) = (rng.gen_range(-2.0..2.0), rng.gen_range(0.0..10.0));
        let x = [x1, x2, parity(n) * p.sigma * p.rho];
        let scale = image_integrand(n, x, t, s, xi, tau, &p).norm();
        let r = cancellation_residual(n, x1, x2, t, s, xi, tau, &p).norm();
        if scale > 0.0 {
            worst = worst.max(r / scale);
        } else {
            worst = worst.max(r);
        }
    }
    checks.push(IdentityCheck::upper("reflection-cancellation", 1000, worst, 1e-13));

    let (mut near, mut far) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let p = random_params(&mut rng);
        let sched = ReflectionSchedule { p: rng.gen_range(0..=6), q: rng.gen_range(0..=6), length: 1.0 };
        let (xi, tau) = random_frequency(&mut rng, &p);
        let (x1, x2) = (p.x_o[0] + rng.gen_range(-0.5..0.5), p.x_o[1] + rng.gen_range(-0.5..0.5));
        let (t, s) = (rng.gen_range(-2.0..2.0), rng.gen_range(0.0..10.0));
        let lo = -2 * sched.q as i64;
        let hi = 2 * sched.p as i64 + 1;
        let terms = |sign: f64| -> Vec<Complex64> {
            let x = [x1, x2, p.face(sign)];
            (lo..=hi).map(|n| image_integrand(n, x, t, s, xi, tau, &p)).collect()
        };
        let near_terms = terms(1.0);
        let scale = near_terms.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let sum = face_sum(&p, &sched, 1.0, x1, x2, t, s, xi, tau).norm();
        near = near.max(if scale > 0.0 { sum / scale } else { sum });
        let far_terms = terms(-1.0);
        let scale = far_terms.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let ends = far_terms[0] + far_terms[far_terms.len() - 1];
        let diff = (face_sum(&p, &sched, -1.0, x1, x2, t, s, xi, tau) - ends).norm();
        far = far.max(if scale > 0.0 { diff / scale } else { diff });
    }
    checks.push(IdentityCheck::upper("face-sum-near", 200, near, 1e-12));
    checks.push(IdentityCheck::upper("face-sum-far", 200, far, 1e-12));

    let (schedule_check, image_constant, image_check) = schedule_grid_checks();
    checks.push(schedule_check);
    checks.push(image_check);

    let mut worst = 0.0f64;
    let mut count = 0;
    for h in [1.0, 0.5, 0.1, 0.01] {
        for gamma in [1.5, 2.0, 3.0] {
            count += 1;
            worst = match choose_lambda_length(h, gamma) {
                Ok(b) => worst.max(b.residuals[0]).max(b.residuals[1]),
                Err(_) => f64::INFINITY,
            };
        }
    }
    checks.push(IdentityCheck::upper("lambda-length-balance", count, worst, 1e-12));

    let passed = checks.iter().all(|c| c.passed);
    IdentityReport { seed, checks, image_constant, passed }
}

/// The remote-image schedule and image-sum bound on the grid
/// `(s, h, x_o3, xi3)` for lengths {1, 3, 10} and `xi_o3` in {±1, ±3, ±7}.
/// Returns the schedule check, the calibrated image constant and the
/// image-sum check (which also requires the constant not to exceed
/// `2 sqrt(pi) / rho + 1`).
pub fn schedule_grid_checks() -> (IdentityCheck, f64, IdentityCheck) {
    let rho = 1.0;
    let h_o = 1.0;
    let mut margin = f64::INFINITY;
    let mut samples = 0;
    let mut points = Vec::new();
    for length in [1.0, 3.0, 10.0] {
        for xi_o3 in [-7i64, -3, -1, 1, 3, 7] {
            let sched = choose_pq(length, xi_o3, rho, h_o).expect("positive length");
            let sigma = xi_o3.signum() as f64;
            for i in 0..10 {
                let s = length * i as f64 / 9.0;
                for j in 1..=10 {
                    let h = h_o * (j as f64 / 10.0).powi(3);
                    for k in 0..10 {
                        let x_o3 = -rho / 4.0 + rho / 2.0 * k as f64 / 9.0;
                        for m in 0..10 {
                            let xi3 = xi_o3 as f64 - 1.0 + 2.0 * m as f64 / 9.0;
                            let (a, b) = remote_offsets(&sched, sigma, rho, x_o3, xi3, h, s);
                            let need = s * s + 1.0;
                            margin = margin.min(a.signum() * a * a - need).min(b.signum() * b * b - need);
                            samples += 1;
                            if m % 3 == 0 && k % 3 == 0 {
                                let x3 = sigma * rho * (2.0 * (i % 3) as f64 / 2.0 - 1.0);
                                points.push(CombPoint { rho, sigma, x3, x_o3, xi3, h, s });
                            }
                        }
                    }
                }
            }
        }
    }
    let schedule = IdentityCheck::lower("schedule-offsets", samples, margin, 0.0);
    let c = calibrate_image_constant(&points);
    let excess = points
        .iter()
        .map(|p| image_gaussian_sum(p) - 4.0 - c * (p.h * (p.s * p.s + 1.0)).sqrt())
        .fold(f64::NEG_INFINITY, f64::max);
    let reference = 2.0 * std::f64::consts::PI.sqrt() / rho + 1.0;
    let mut image = IdentityCheck::upper("image-sum-bound", points.len(), excess, 1e-12);
    image.passed &= c <= reference;
    (schedule, c, image)
}
