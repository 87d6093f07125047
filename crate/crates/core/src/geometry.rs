//! The partially cubic box, its damping and observation regions, and the
//! damping coefficient field.
//!
//! Coordinates have length `dim`. The first `dim - 1` axes are *lateral*
//! (half-widths `m1`, `m2`), the last axis is *vertical* with half-height
//! `rho`. The top face `x_vert = +rho` is Γ₁, the bottom face is Γ₂, and the
//! lateral faces together form Υ. In two dimensions the box is
//! `[-m1, m1] x [-rho, rho]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when deciding that a coordinate sits exactly on a face.
pub const FACE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    dim: usize,
    m1: f64,
    m2: f64,
    rho: f64,
    r_o: f64,
    collar: f64,
}

/// Named subsets of the box used by the ray tracer, the observability
/// quadratures and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    /// Lateral damping collar ω.
    Omega,
    /// Central observation box ω₀.
    Omega0,
    /// ω ∪ ω₀.
    Union,
    /// The whole open box.
    Whole,
}

impl Region {
    pub fn parse(name: &str) -> Option<Region> {
        match name {
            "omega" => Some(Region::Omega),
            "omega0" => Some(Region::Omega0),
            "union" | "omega-union-omega0" => Some(Region::Union),
            "whole" => Some(Region::Whole),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Omega => "omega",
            Region::Omega0 => "omega0",
            Region::Union => "union",
            Region::Whole => "whole",
        }
    }
}

/// Boundary faces of the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Face {
    /// Top face, vertical coordinate `+rho`.
    Gamma1,
    /// Bottom face, vertical coordinate `-rho`.
    Gamma2,
    /// Any lateral face.
    Upsilon,
}

/// Result of [`DomainSpec::classify_point`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSet {
    pub interior: bool,
    pub omega: bool,
    pub omega0: bool,
    pub gamma1: bool,
    pub gamma2: bool,
    pub upsilon: bool,
}

impl RegionSet {
    pub fn contains_face(&self, face: Face) -> bool {
        match face {
            Face::Gamma1 => self.gamma1,
            Face::Gamma2 => self.gamma2,
            Face::Upsilon => self.upsilon,
        }
    }
}

/// An axis-aligned open box `(lo_d, hi_d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn contains_open(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&lo, &hi))| lo < v && v < hi)
    }
}

impl DomainSpec {
    /// Builds and validates a domain. `m2` is ignored when `dim == 2`.
    pub fn new(dim: usize, m1: f64, m2: f64, rho: f64, r_o: f64, collar: f64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::validation("domain", format!("dim must be 2 or 3, got {dim}")));
        }
        let m2 = if dim == 2 { m1 } else { m2 };
        for (name, v) in [("m1", m1), ("m2", m2), ("rho", rho), ("r_o", r_o), ("collar", collar)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation("domain", format!("{name} must be positive, got {v}")));
            }
        }
        let min_len = if dim == 3 { m1.min(m2).min(rho) } else { m1.min(rho) };
        if r_o >= min_len / 2.0 {
            return Err(Error::validation(
                "domain",
                format!("r_o < min(m1,m2,rho)/2 violated: r_o = {r_o}, bound = {}", min_len / 2.0),
            ));
        }
        if collar > r_o {
            return Err(Error::validation(
                "domain",
                format!("collar <= r_o violated: collar = {collar}, r_o = {r_o}"),
            ));
        }
        Ok(DomainSpec { dim, m1, m2, rho, r_o, collar })
    }

    /// Domain with the default collar width `collar = r_o`.
    pub fn with_default_collar(dim: usize, m1: f64, m2: f64, rho: f64, r_o: f64) -> Result<Self> {
        Self::new(dim, m1, m2, rho, r_o, r_o)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn m1(&self) -> f64 {
        self.m1
    }
    pub fn m2(&self) -> f64 {
        self.m2
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn r_o(&self) -> f64 {
        self.r_o
    }
    pub fn collar(&self) -> f64 {
        self.collar
    }

    /// Semiclassical scale cap `min(1, (r_o/8)^2)`.
    pub fn h_o(&self) -> f64 {
        (self.r_o / 8.0).powi(2).min(1.0)
    }

    /// Index of the vertical axis.
    pub fn vertical_axis(&self) -> usize {
        self.dim - 1
    }

    /// Half side lengths per axis, lateral axes first.
    pub fn half_lengths(&self) -> Vec<f64> {
        match self.dim {
            2 => vec![self.m1, self.rho],
            _ => vec![self.m1, self.m2, self.rho],
        }
    }

    pub fn side_lengths(&self) -> Vec<f64> {
        self.half_lengths().iter().map(|h| 2.0 * h).collect()
    }

    pub fn volume(&self) -> f64 {
        self.side_lengths().iter().product()
    }

    pub fn diameter(&self) -> f64 {
        self.side_lengths().iter().map(|l| l * l).sum::<f64>().sqrt()
    }

    /// The observation box ω₀.
    pub fn omega0(&self) -> AxisBox {
        let half = self.half_lengths();
        let v = self.vertical_axis();
        let mut lo = Vec::with_capacity(self.dim);
        let mut hi = Vec::with_capacity(self.dim);
        for (d, &m) in half.iter().enumerate() {
            if d == v {
                lo.push(-self.rho / 4.0);
                hi.push(self.rho / 4.0);
            } else {
                lo.push(-m + self.r_o);
                hi.push(m - self.r_o);
            }
        }
        AxisBox { lo, hi }
    }

    /// The lateral box whose complement (within Ω) is the collar ω; its
    /// vertical extent is the full height.
    pub fn collar_inner_box(&self) -> AxisBox {
        let half = self.half_lengths();
        let v = self.vertical_axis();
        let lo = half
            .iter()
            .enumerate()
            .map(|(d, &m)| if d == v { -m } else { -m + self.collar })
            .collect();
        let hi = half
            .iter()
            .enumerate()
            .map(|(d, &m)| if d == v { m } else { m - self.collar })
            .collect();
        AxisBox { lo, hi }
    }

    pub fn in_closed_box(&self, x: &[f64]) -> bool {
        x.len() == self.dim
            && x
                .iter()
                .zip(self.half_lengths())
                .all(|(&v, m)| v.is_finite() && v.abs() <= m + FACE_TOL)
    }

    pub fn in_open_box(&self, x: &[f64]) -> bool {
        x.len() == self.dim && x.iter().zip(self.half_lengths()).all(|(&v, m)| v.abs() < m)
    }

    /// Open-set membership in ω (interior points within `collar` of a lateral face).
    pub fn in_omega(&self, x: &[f64]) -> bool {
        if !self.in_open_box(x) {
            return false;
        }
        let half = self.half_lengths();
        (0..self.vertical_axis()).any(|d| x[d].abs() > half[d] - self.collar)
    }

    pub fn in_omega0(&self, x: &[f64]) -> bool {
        self.omega0().contains_open(x)
    }

    pub fn in_region(&self, region: Region, x: &[f64]) -> bool {
        match region {
            Region::Omega => self.in_omega(x),
            Region::Omega0 => self.in_omega0(x),
            Region::Union => self.in_omega(x) || self.in_omega0(x),
            Region::Whole => self.in_open_box(x),
        }
    }

    pub fn classify_point(&self, x: &[f64]) -> Result<RegionSet> {
        if !self.in_closed_box(x) {
            return Err(Error::OutsideDomain { point: x.to_vec() });
        }
        let half = self.half_lengths();
        let v = self.vertical_axis();
        let mut set = RegionSet {
            interior: self.in_open_box(x),
            ..Default::default()
        };
        if set.interior {
            set.omega = self.in_omega(x);
            set.omega0 = self.in_omega0(x);
        } else {
            set.gamma1 = x[v] >= half[v];
            set.gamma2 = x[v] <= -half[v];
            set.upsilon = (0..v).any(|d| x[d].abs() >= half[d]);
        }
        Ok(set)
    }
}

/// Shape of the damping coefficient inside its support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DampingProfile {
    /// `alpha_max` on the support, zero elsewhere.
    Indicator,
    /// `alpha_max * (1 - Π_d (1 - b(d_d)))` with `b(d) = exp(1 - 1/d)` of the
    /// normalized depth `d_d` into the collar along each damped axis. Vanishes
    /// to all orders at the inner edge of the collar and is smooth elsewhere.
    SmoothBump,
    /// `alpha_max` everywhere in the box (support ignored).
    Uniform,
}

/// Which faces the damping collar hugs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DampingSupport {
    /// The collar ω along the lateral faces only; vertical rays are trapped.
    Lateral,
    /// A collar of the same width along every face, Γ₁ and Γ₂ included.
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampingField {
    pub profile: DampingProfile,
    pub support: DampingSupport,
    pub alpha_max: f64,
}

impl DampingField {
    pub fn new(profile: DampingProfile, support: DampingSupport, alpha_max: f64) -> Result<Self> {
        if !(alpha_max.is_finite() && alpha_max >= 0.0) {
            return Err(Error::validation("damping", format!("alpha_max must be >= 0, got {alpha_max}")));
        }
        Ok(DampingField { profile, support, alpha_max })
    }

    /// Lateral-collar damping with the given profile.
    pub fn lateral(profile: DampingProfile, alpha_max: f64) -> Result<Self> {
        Self::new(profile, DampingSupport::Lateral, alpha_max)
    }

    pub fn zero() -> Self {
        DampingField {
            profile: DampingProfile::Indicator,
            support: DampingSupport::Lateral,
            alpha_max: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.alpha_max == 0.0
    }

    /// Normalized depth into the support: positive inside, at most 1 on the
    /// faces, non-positive outside.
    pub fn depth(&self, spec: &DomainSpec, x: &[f64]) -> f64 {
        let half = spec.half_lengths();
        let c = spec.collar();
        (0..self.damped_axes(spec))
            .map(|d| (x[d].abs() - (half[d] - c)) / c)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Damping coefficient at `x`; `x` must lie in the closed box.
    pub fn alpha_at(&self, spec: &DomainSpec, x: &[f64]) -> Result<f64> {
        if !spec.in_closed_box(x) {
            return Err(Error::OutsideDomain { point: x.to_vec() });
        }
        Ok(self.alpha_unchecked(spec, x))
    }

    pub(crate) fn alpha_unchecked(&self, spec: &DomainSpec, x: &[f64]) -> f64 {
        if self.profile == DampingProfile::Uniform {
            return self.alpha_max;
        }
        let keep: f64 = (0..self.damped_axes(spec)).map(|d| self.axis_factor(spec, d, x[d])).product();
        self.alpha_max * (1.0 - keep)
    }

    /// Number of leading axes along which the collar runs.
    pub fn damped_axes(&self, spec: &DomainSpec) -> usize {
        if self.profile == DampingProfile::Uniform {
            return 0;
        }
        match self.support {
            DampingSupport::Lateral => spec.vertical_axis(),
            DampingSupport::Boundary => spec.dim(),
        }
    }

    /// Per-axis factor `g` with `α = alpha_max (1 − Π_d g(x_d))`: 1 away from
    /// the collar, dropping to 0 at the face.
    pub fn axis_factor(&self, spec: &DomainSpec, axis: usize, x: f64) -> f64 {
        let c = spec.collar();
        let depth = ((x.abs() - (spec.half_lengths()[axis] - c)) / c).min(1.0);
        if depth <= 0.0 {
            return 1.0;
        }
        match self.profile {
            DampingProfile::Indicator => 0.0,
            DampingProfile::SmoothBump => 1.0 - (1.0 - 1.0 / depth).exp(),
            DampingProfile::Uniform => 1.0,
        }
    }

    /// Breakpoints per axis at which the field is not smooth; quadrature
    /// panels are aligned to them.
    pub fn breakpoints(&self, spec: &DomainSpec, axis: usize) -> Vec<f64> {
        let m = spec.half_lengths()[axis];
        let lateral = axis < spec.vertical_axis();
        let cut = match (self.profile, self.support) {
            (DampingProfile::Uniform, _) => false,
            (_, DampingSupport::Lateral) => lateral,
            (_, DampingSupport::Boundary) => true,
        };
        if cut && !self.is_zero() {
            let c = spec.collar();
            vec![-m, -m + c, m - c, m]
        } else {
            vec![-m, m]
        }
    }
}
