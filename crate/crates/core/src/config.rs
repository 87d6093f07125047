//! Experiment configuration files.
//!
//! The format is TOML restricted to a fixed set of sections and keys.
//! Keys are order-insensitive; every section is optional and missing keys
//! take the defaults shown below.
//!
//! ```toml
//! seed = 7
//!
//! [domain]
//! dim = 2          # 2 or 3
//! m1 = 1.0
//! m2 = 1.0         # ignored in 2-D
//! rho = 1.0
//! r_o = 0.2
//! collar = 0.2     # defaults to r_o
//!
//! [damping]
//! profile = "smooth-bump"   # indicator | smooth-bump | uniform
//! support = "lateral"       # lateral | boundary
//! alpha_max = 1.0
//!
//! [solver]
//! kind = "galerkin"         # galerkin | fdtd
//! modes = 100               # lowest N eigenmodes ...
//! # index_box = [30, 60]    # ... or every index up to these bounds
//! resolution = 64           # fdtd cells per axis
//! # dt = 0.01               # fdtd step, defaults to half the CFL limit
//! t_final = 20.0
//! record_every = 0.25
//!
//! [initial]
//! preset = "single-mode"    # single-mode | trapped-stack | random-smooth
//! mode = 1
//! velocity = false
//! count = 20                # trapped-stack
//!
//! [analysis]
//! # fit_window = [2.0, 20.0]
//! skip = 2                  # transient halvings ignored by the regime test
//! region = "union"          # omega | omega0 | union | whole
//! # horizon = 11.3         # ray and observability horizon, defaults to 4 x diameter
//! positions = 100
//! directions = 100
//! states = 50
//!
//! [lemma]
//! c1 = 2.0
//! c2 = 1.0
//! beta = 1.0
//! gamma = 1.0
//! rate = 1.0                # samples F(s) = (1 + rate s)^(-power)
//! power = 1.0
//! s_max = 1e7
//! t_max = 100.0
//! ```

use std::collections::BTreeSet;

use serde::Serialize;
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::geometry::{DampingField, DampingProfile, DampingSupport, DomainSpec, Region};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainConfig {
    pub dim: usize,
    pub m1: f64,
    pub m2: f64,
    pub rho: f64,
    pub r_o: f64,
    pub collar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Galerkin,
    Fdtd,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisChoice {
    Lowest(usize),
    IndexBox(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub basis: BasisChoice,
    pub resolution: usize,
    pub dt: Option<f64>,
    pub t_final: f64,
    pub record_every: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialData {
    SingleMode { mode: usize, velocity: bool },
    TrappedStack { count: usize },
    RandomSmooth,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisConfig {
    pub fit_window: Option<(f64, f64)>,
    pub skip: usize,
    pub region: Region,
    pub horizon: Option<f64>,
    pub positions: usize,
    pub directions: usize,
    pub states: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaConfig {
    pub c1: f64,
    pub c2: f64,
    pub beta: f64,
    pub gamma: f64,
    pub rate: f64,
    pub power: f64,
    pub s_max: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub domain: DomainConfig,
    pub damping: DampingField,
    pub solver: SolverConfig,
    pub initial: InitialData,
    pub analysis: AnalysisConfig,
    pub lemma: LemmaConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        parse_config("").expect("empty config is valid")
    }
}

impl ExperimentConfig {
    pub fn spec(&self) -> Result<DomainSpec> {
        let d = &self.domain;
        DomainSpec::new(d.dim, d.m1, d.m2, d.rho, d.r_o, d.collar)
    }

    /// Ray and observability horizon: the configured one or four diameters.
    pub fn horizon(&self) -> Result<f64> {
        match self.analysis.horizon {
            Some(h) => Ok(h),
            None => Ok(4.0 * self.spec()?.diameter()),
        }
    }
}

/// Collects typed values and errors while walking the parsed table.
struct Reader {
    errors: Vec<String>,
}

struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
    seen: BTreeSet<&'static str>,
}

impl<'a> Section<'a> {
    fn path(&self, key: &str) -> String {
        if self.name.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.name)
        }
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a Value> {
        self.seen.insert(key);
        self.table.and_then(|t| t.get(key))
    }

    fn float(&mut self, r: &mut Reader, key: &'static str, default: Option<f64>) -> f64 {
        match self.raw(key) {
            Some(Value::Float(v)) => *v,
            Some(Value::Integer(v)) => *v as f64,
            Some(other) => {
                r.errors.push(format!("{}: expected a number, found {}", self.path(key), other.type_str()));
                f64::NAN
            }
            None => default.unwrap_or_else(|| {
                r.errors.push(format!("{}: missing required key", self.path(key)));
                f64::NAN
            }),
        }
    }

    fn opt_float(&mut self, r: &mut Reader, key: &'static str) -> Option<f64> {
        self.raw(key)?;
        Some(self.float(r, key, None))
    }

    fn uint(&mut self, r: &mut Reader, key: &'static str, default: u64) -> u64 {
        match self.raw(key) {
            Some(Value::Integer(v)) if *v >= 0 => *v as u64,
            Some(other) => {
                r.errors.push(format!(
                    "{}: expected a non-negative integer, found {}",
                    self.path(key),
                    describe(other)
                ));
                0
            }
            None => default,
        }
    }

    fn boolean(&mut self, r: &mut Reader, key: &'static str, default: bool) -> bool {
        match self.raw(key) {
            Some(Value::Boolean(b)) => *b,
            Some(other) => {
                r.errors.push(format!("{}: expected a boolean, found {}", self.path(key), other.type_str()));
                default
            }
            None => default,
        }
    }

    fn choice<T>(&mut self, r: &mut Reader, key: &'static str, default: T, parse: impl Fn(&str) -> Option<T>) -> T {
        match self.raw(key) {
            Some(Value::String(s)) => parse(s).unwrap_or_else(|| {
                r.errors.push(format!("{}: unrecognised value {s:?}", self.path(key)));
                default
            }),
            Some(other) => {
                r.errors.push(format!("{}: expected a string, found {}", self.path(key), other.type_str()));
                default
            }
            None => default,
        }
    }

    fn numbers(&mut self, r: &mut Reader, key: &'static str) -> Option<Vec<Value>> {
        match self.raw(key)? {
            Value::Array(items) => Some(items.clone()),
            other => {
                r.errors.push(format!("{}: expected an array, found {}", self.path(key), other.type_str()));
                None
            }
        }
    }

    fn finish(self, r: &mut Reader) {
        if let Some(t) = self.table {
            for key in t.keys() {
                if !self.seen.contains(key.as_str()) {
                    r.errors.push(format!("{}: unknown key", self.path(key)));
                }
            }
        }
    }
}

fn describe(v: &Value) -> String {
    match v {
        Value::Integer(i) => format!("integer {i}"),
        other => other.type_str().to_string(),
    }
}

fn section<'a>(root: &'a Table, name: &'static str, r: &mut Reader) -> Section<'a> {
    let table = match root.get(name) {
        Some(Value::Table(t)) => Some(t),
        Some(other) => {
            r.errors.push(format!("{name}: expected a section, found {}", other.type_str()));
            None
        }
        None => None,
    };
    Section { name, table, seen: BTreeSet::new() }
}

const SECTIONS: [&str; 6] = ["domain", "damping", "solver", "initial", "analysis", "lemma"];

/// Parses and validates a configuration. All problems are reported together,
/// each prefixed by its key path.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(vec![format!("syntax: {}", e.message())]))?;
    let mut r = Reader { errors: Vec::new() };

    let mut top = Section { name: "", table: Some(&root), seen: BTreeSet::new() };
    let seed = top.uint(&mut r, "seed", 0);
    for name in SECTIONS {
        top.seen.insert(name);
    }
    top.finish(&mut r);

    let mut s = section(&root, "domain", &mut r);
    let dim = s.uint(&mut r, "dim", 2) as usize;
    let m1 = s.float(&mut r, "m1", Some(1.0));
    let m2 = s.float(&mut r, "m2", Some(m1));
    let rho = s.float(&mut r, "rho", Some(1.0));
    let r_o = s.float(&mut r, "r_o", Some(0.2));
    let collar = s.float(&mut r, "collar", Some(r_o));
    s.finish(&mut r);
    let domain = DomainConfig { dim, m1, m2, rho, r_o, collar };
    check_domain(&domain, &mut r);

    let mut s = section(&root, "damping", &mut r);
    let profile = s.choice(&mut r, "profile", DampingProfile::SmoothBump, |v| match v {
        "indicator" => Some(DampingProfile::Indicator),
        "smooth-bump" => Some(DampingProfile::SmoothBump),
        "uniform" => Some(DampingProfile::Uniform),
        _ => None,
    });
    let support = s.choice(&mut r, "support", DampingSupport::Lateral, |v| match v {
        "lateral" => Some(DampingSupport::Lateral),
        "boundary" => Some(DampingSupport::Boundary),
        _ => None,
    });
    let alpha_max = s.float(&mut r, "alpha_max", Some(1.0));
    s.finish(&mut r);
    if !(alpha_max.is_finite() && alpha_max >= 0.0) {
        r.errors.push(format!("damping.alpha_max: must be finite and >= 0, got {alpha_max}"));
    }
    let damping = DampingField { profile, support, alpha_max };

    let mut s = section(&root, "solver", &mut r);
    let kind = s.choice(&mut r, "kind", SolverKind::Galerkin, |v| match v {
        "galerkin" => Some(SolverKind::Galerkin),
        "fdtd" => Some(SolverKind::Fdtd),
        _ => None,
    });
    let has_modes = s.table.is_some_and(|t| t.contains_key("modes"));
    let modes = s.uint(&mut r, "modes", 100) as usize;
    let basis = match s.numbers(&mut r, "index_box") {
        Some(items) => {
            if has_modes {
                r.errors.push("solver.index_box: conflicts with solver.modes".into());
            }
            let mut bounds = Vec::new();
            for item in &items {
                match item {
                    Value::Integer(v) if *v >= 1 => bounds.push(*v as usize),
                    other => r.errors.push(format!(
                        "solver.index_box: expected positive integers, found {}",
                        describe(other)
                    )),
                }
            }
            if bounds.len() != dim {
                r.errors.push(format!("solver.index_box: needs {dim} entries, found {}", bounds.len()));
            }
            BasisChoice::IndexBox(bounds)
        }
        None => {
            if modes == 0 {
                r.errors.push("solver.modes: must be at least 1".into());
            }
            BasisChoice::Lowest(modes)
        }
    };
    let resolution = s.uint(&mut r, "resolution", 64) as usize;
    let dt = s.opt_float(&mut r, "dt");
    let t_final = s.float(&mut r, "t_final", Some(20.0));
    let record_every = s.float(&mut r, "record_every", Some(0.25));
    s.finish(&mut r);
    if resolution < 4 {
        r.errors.push(format!("solver.resolution: must be at least 4, got {resolution}"));
    }
    if let Some(dt) = dt {
        if !(dt > 0.0) {
            r.errors.push(format!("solver.dt: must be positive, got {dt}"));
        }
    }
    if !(t_final > 0.0 && t_final.is_finite()) {
        r.errors.push(format!("solver.t_final: must be positive, got {t_final}"));
    }
    if !(record_every > 0.0 && record_every <= t_final) {
        r.errors.push(format!("solver.record_every: must lie in (0, t_final], got {record_every}"));
    }
    let solver = SolverConfig { kind, basis, resolution, dt, t_final, record_every };

    let mut s = section(&root, "initial", &mut r);
    #[derive(Clone, Copy)]
    enum Preset {
        Single,
        Stack,
        Random,
    }
    let preset = s.choice(&mut r, "preset", Preset::Single, |v| match v {
        "single-mode" => Some(Preset::Single),
        "trapped-stack" => Some(Preset::Stack),
        "random-smooth" => Some(Preset::Random),
        _ => None,
    });
    let initial = match preset {
        Preset::Single => {
            let mode = s.uint(&mut r, "mode", 1) as usize;
            let velocity = s.boolean(&mut r, "velocity", false);
            if mode == 0 {
                r.errors.push("initial.mode: modes are counted from 1".into());
            }
            InitialData::SingleMode { mode, velocity }
        }
        Preset::Stack => {
            let count = s.uint(&mut r, "count", 20) as usize;
            if count == 0 {
                r.errors.push("initial.count: must be at least 1".into());
            }
            InitialData::TrappedStack { count }
        }
        Preset::Random => InitialData::RandomSmooth,
    };
    s.finish(&mut r);

    let mut s = section(&root, "analysis", &mut r);
    let fit_window = s.numbers(&mut r, "fit_window").map(|items| {
        let vals: Vec<f64> = items
            .iter()
            .filter_map(|v| match v {
                Value::Float(f) => Some(*f),
                Value::Integer(i) => Some(*i as f64),
                _ => None,
            })
            .collect();
        if vals.len() != 2 || items.len() != 2 || !(vals[0] > 0.0 && vals[1] > vals[0]) {
            r.errors.push("analysis.fit_window: expected [start, end] with 0 < start < end".into());
            (f64::NAN, f64::NAN)
        } else {
            (vals[0], vals[1])
        }
    });
    let skip = s.uint(&mut r, "skip", 2) as usize;
    let region = s.choice(&mut r, "region", Region::Union, Region::parse);
    let horizon = s.opt_float(&mut r, "horizon");
    let positions = s.uint(&mut r, "positions", 100) as usize;
    let directions = s.uint(&mut r, "directions", 100) as usize;
    let states = s.uint(&mut r, "states", 50) as usize;
    s.finish(&mut r);
    if let Some(h) = horizon {
        if !(h > 0.0 && h.is_finite()) {
            r.errors.push(format!("analysis.horizon: must be positive, got {h}"));
        }
    }
    if states == 0 {
        r.errors.push("analysis.states: must be at least 1".into());
    }
    let analysis = AnalysisConfig { fit_window, skip, region, horizon, positions, directions, states };

    let mut s = section(&root, "lemma", &mut r);
    let lemma = LemmaConfig {
        c1: s.float(&mut r, "c1", Some(2.0)),
        c2: s.float(&mut r, "c2", Some(1.0)),
        beta: s.float(&mut r, "beta", Some(1.0)),
        gamma: s.float(&mut r, "gamma", Some(1.0)),
        rate: s.float(&mut r, "rate", Some(1.0)),
        power: s.float(&mut r, "power", Some(1.0)),
        s_max: s.float(&mut r, "s_max", Some(1e7)),
        t_max: s.float(&mut r, "t_max", Some(100.0)),
    };
    s.finish(&mut r);
    if !(lemma.c1 > 1.0) {
        r.errors.push(format!("lemma.c1: must exceed 1, got {}", lemma.c1));
    }
    for (key, v) in [
        ("c2", lemma.c2),
        ("beta", lemma.beta),
        ("gamma", lemma.gamma),
        ("rate", lemma.rate),
        ("power", lemma.power),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            r.errors.push(format!("lemma.{key}: must be positive, got {v}"));
        }
    }
    if !(lemma.t_max >= 2.0 && lemma.s_max >= lemma.t_max * lemma.t_max) {
        r.errors.push("lemma.t_max: need 2 <= t_max and t_max^2 <= s_max".into());
    }

    if r.errors.is_empty() {
        Ok(ExperimentConfig { seed, domain, damping, solver, initial, analysis, lemma })
    } else {
        Err(Error::Config(r.errors))
    }
}

fn check_domain(d: &DomainConfig, r: &mut Reader) {
    let before = r.errors.len();
    if d.dim != 2 && d.dim != 3 {
        r.errors.push(format!("domain.dim: must be 2 or 3, got {}", d.dim));
    }
    for (key, v) in [("m1", d.m1), ("m2", d.m2), ("rho", d.rho), ("r_o", d.r_o), ("collar", d.collar)] {
        if !(v.is_finite() && v > 0.0) {
            r.errors.push(format!("domain.{key}: must be positive, got {v}"));
        }
    }
    if r.errors.len() > before {
        return;
    }
    let min_len = if d.dim == 3 { d.m1.min(d.m2).min(d.rho) } else { d.m1.min(d.rho) };
    if d.r_o >= min_len / 2.0 {
        r.errors.push(format!("domain.r_o: must be below min side / 2 = {}, got {}", min_len / 2.0, d.r_o));
    } else if d.collar > d.r_o {
        r.errors.push(format!("domain.collar: must not exceed r_o = {}, got {}", d.r_o, d.collar));
    }
}

/// Writes a config back out in the file format. Parsing the result yields
/// an identical config.
pub fn serialize_config(c: &ExperimentConfig) -> String {
    let mut root = Table::new();
    root.insert("seed".into(), Value::Integer(c.seed as i64));

    let mut t = Table::new();
    t.insert("dim".into(), Value::Integer(c.domain.dim as i64));
    t.insert("m1".into(), Value::Float(c.domain.m1));
    t.insert("m2".into(), Value::Float(c.domain.m2));
    t.insert("rho".into(), Value::Float(c.domain.rho));
    t.insert("r_o".into(), Value::Float(c.domain.r_o));
    t.insert("collar".into(), Value::Float(c.domain.collar));
    root.insert("domain".into(), Value::Table(t));

    let mut t = Table::new();
    let profile = match c.damping.profile {
        DampingProfile::Indicator => "indicator",
        DampingProfile::SmoothBump => "smooth-bump",
        DampingProfile::Uniform => "uniform",
    };
    let support = match c.damping.support {
        DampingSupport::Lateral => "lateral",
        DampingSupport::Boundary => "boundary",
    };
    t.insert("profile".into(), Value::String(profile.into()));
    t.insert("support".into(), Value::String(support.into()));
    t.insert("alpha_max".into(), Value::Float(c.damping.alpha_max));
    root.insert("damping".into(), Value::Table(t));

    let mut t = Table::new();
    let kind = match c.solver.kind {
        SolverKind::Galerkin => "galerkin",
        SolverKind::Fdtd => "fdtd",
    };
    t.insert("kind".into(), Value::String(kind.into()));
    match &c.solver.basis {
        BasisChoice::Lowest(n) => {
            t.insert("modes".into(), Value::Integer(*n as i64));
        }
        BasisChoice::IndexBox(b) => {
            t.insert("index_box".into(), Value::Array(b.iter().map(|&k| Value::Integer(k as i64)).collect()));
        }
    }
    t.insert("resolution".into(), Value::Integer(c.solver.resolution as i64));
    if let Some(dt) = c.solver.dt {
        t.insert("dt".into(), Value::Float(dt));
    }
    t.insert("t_final".into(), Value::Float(c.solver.t_final));
    t.insert("record_every".into(), Value::Float(c.solver.record_every));
    root.insert("solver".into(), Value::Table(t));

    let mut t = Table::new();
    match &c.initial {
        InitialData::SingleMode { mode, velocity } => {
            t.insert("preset".into(), Value::String("single-mode".into()));
            t.insert("mode".into(), Value::Integer(*mode as i64));
            t.insert("velocity".into(), Value::Boolean(*velocity));
        }
        InitialData::TrappedStack { count } => {
            t.insert("preset".into(), Value::String("trapped-stack".into()));
            t.insert("count".into(), Value::Integer(*count as i64));
        }
        InitialData::RandomSmooth => {
            t.insert("preset".into(), Value::String("random-smooth".into()));
        }
    }
    root.insert("initial".into(), Value::Table(t));

    let a = &c.analysis;
    let mut t = Table::new();
    if let Some((lo, hi)) = a.fit_window {
        t.insert("fit_window".into(), Value::Array(vec![Value::Float(lo), Value::Float(hi)]));
    }
    t.insert("skip".into(), Value::Integer(a.skip as i64));
    t.insert("region".into(), Value::String(a.region.name().into()));
    if let Some(h) = a.horizon {
        t.insert("horizon".into(), Value::Float(h));
    }
    t.insert("positions".into(), Value::Integer(a.positions as i64));
    t.insert("directions".into(), Value::Integer(a.directions as i64));
    t.insert("states".into(), Value::Integer(a.states as i64));
    root.insert("analysis".into(), Value::Table(t));

    let l = &c.lemma;
    let mut t = Table::new();
    for (k, v) in [
        ("c1", l.c1),
        ("c2", l.c2),
        ("beta", l.beta),
        ("gamma", l.gamma),
        ("rate", l.rate),
        ("power", l.power),
        ("s_max", l.s_max),
        ("t_max", l.t_max),
    ] {
        t.insert(k.into(), Value::Float(v));
    }
    root.insert("lemma".into(), Value::Table(t));

    toml::to_string(&root).expect("plain tables always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn errors(text: &str) -> Vec<String> {
        match parse_config(text) {
            Err(Error::Config(e)) => e,
            other => panic!("expected config errors, got {other:?}"),
        }
    }

    #[test]
    fn empty_config_gets_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c.domain.dim, 2);
        assert_eq!(c.domain.collar, c.domain.r_o);
        assert_eq!(c.solver.kind, SolverKind::Galerkin);
        assert_eq!(c.initial, InitialData::SingleMode { mode: 1, velocity: false });
        assert!(c.spec().is_ok());
    }

    #[test]
    fn geometry_violation_names_its_path() {
        let e = errors("[domain]\nr_o = 0.6\n");
        assert_eq!(e.len(), 1);
        assert!(e[0].starts_with("domain.r_o:"), "{e:?}");
    }

    #[test]
    fn reports_every_problem_with_a_path() {
        let e = errors(
            "seeed = 1\n[damping]\nalpha_max = \"big\"\nshape = 1\n[solver]\nt_final = -1\n[initial]\npreset = \"wobble\"\n",
        );
        let joined = e.join("\n");
        for path in ["seeed:", "damping.alpha_max:", "damping.shape:", "solver.t_final:", "initial.preset:"] {
            assert!(joined.contains(path), "missing {path} in {joined}");
        }
    }

    #[test]
    fn syntax_errors_are_config_errors() {
        assert!(matches!(parse_config("[domain\n"), Err(Error::Config(_))));
    }

    #[test]
    fn conflicting_basis_keys() {
        let e = errors("[solver]\nmodes = 10\nindex_box = [3, 4]\n");
        assert!(e[0].contains("solver.index_box"));
        let e = errors("[solver]\nindex_box = [3]\n");
        assert!(e[0].contains("2 entries"));
    }

    #[test]
    fn round_trip() {
        let text = "seed = 11\n[domain]\ndim = 3\nm1 = 1.5\nrho = 0.75\nr_o = 0.1\ncollar = 0.05\n\
                    [damping]\nprofile = \"indicator\"\nsupport = \"boundary\"\nalpha_max = 2.5\n\
                    [solver]\nkind = \"fdtd\"\nindex_box = [4, 4, 9]\ndt = 0.01\nt_final = 3\nrecord_every = 0.1\n\
                    [initial]\npreset = \"trapped-stack\"\ncount = 5\n\
                    [analysis]\nfit_window = [1, 10.5]\nregion = \"omega0\"\nhorizon = 12.0\n";
        let c = parse_config(text).unwrap();
        let again = parse_config(&serialize_config(&c)).unwrap();
        assert_eq!(c, again);
        assert_eq!(serialize_config(&c), serialize_config(&again));
        let d = ExperimentConfig::default();
        assert_eq!(parse_config(&serialize_config(&d)).unwrap(), d);
    }
}
