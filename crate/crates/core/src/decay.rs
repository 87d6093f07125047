//! Energy-trace analysis: power-law fits, halving-time classification,
//! observability ratios and the iteration lemma that turns a recursive decay
//! inequality into an algebraic rate.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Region;
use crate::spectral::{conservative_quadratic_integral, mass_matrix, DampedRun, DampingMatrix, EigenBasis, ModalState};

/// Time-stamped energies, optionally with the cumulative dissipation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    pub dissipation: Option<Vec<f64>>,
}

impl EnergyTrace {
    pub fn new(times: Vec<f64>, energies: Vec<f64>, dissipation: Option<Vec<f64>>) -> Result<Self> {
        if times.len() != energies.len() || dissipation.as_ref().is_some_and(|d| d.len() != times.len()) {
            return Err(Error::validation("energy trace", "columns must have equal length"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::validation("energy trace", "times must be finite, >= 0 and strictly increasing"));
        }
        if energies.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::validation("energy trace", "energies must be finite and >= 0"));
        }
        Ok(EnergyTrace { times, energies, dissipation })
    }

    /// Samples `f` on the given times.
    pub fn from_fn(times: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let energies = times.iter().map(|&t| f(t)).collect();
        Self::new(times, energies, None)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Columns `t,energy` plus `dissipation` when present.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(if self.dissipation.is_some() { "t,energy,dissipation\n" } else { "t,energy\n" });
        for k in 0..self.len() {
            let _ = write!(out, "{:?},{:?}", self.times[k], self.energies[k]);
            if let Some(d) = &self.dissipation {
                let _ = write!(out, ",{:?}", d[k]);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().map(str::trim).unwrap_or_default();
        let with_diss = match header {
            "t,energy" => false,
            "t,energy,dissipation" => true,
            other => return Err(Error::Parse(format!("unexpected trace header {other:?}"))),
        };
        let width = if with_diss { 3 } else { 2 };
        let mut cols = vec![Vec::new(); width];
        for (row, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != width {
                return Err(Error::Parse(format!("row {}: expected {width} columns", row + 2)));
            }
            for (c, f) in fields.iter().enumerate() {
                cols[c].push(f.parse::<f64>().map_err(|_| Error::Parse(format!("row {}: bad number {f:?}", row + 2)))?);
            }
        }
        let dissipation = with_diss.then(|| cols.pop().unwrap());
        let energies = cols.pop().unwrap();
        let times = cols.pop().unwrap();
        Self::new(times, energies, dissipation)
    }
}

/// Least-squares power law `E ≈ C t^{-δ}` on a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub amplitude: f64,
    pub delta: f64,
    pub window: (f64, f64),
    pub samples: usize,
    /// Root-mean-square residual of `ln E` about the fitted line.
    pub rms_residual: f64,
    /// Largest positive residual of `ln E`.
    pub max_residual: f64,
    /// `C · exp(max_residual)`: the smallest amplitude whose envelope with the
    /// fitted exponent lies on or above every sample in the window.
    pub upper_amplitude: f64,
}

impl DecayFit {
    pub fn envelope(&self, t: f64) -> f64 {
        self.amplitude * t.powf(-self.delta)
    }

    pub fn upper_envelope(&self, t: f64) -> f64 {
        self.upper_amplitude * t.powf(-self.delta)
    }

    /// Whether the log–log residual is small enough to call the window a power law.
    pub fn is_power_law(&self, rms_tol: f64) -> bool {
        self.rms_residual <= rms_tol
    }
}

pub fn fit_power_law(trace: &EnergyTrace, window: (f64, f64)) -> Result<DecayFit> {
    let (lo, hi) = window;
    let picked: Vec<(f64, f64)> = trace
        .times
        .iter()
        .zip(&trace.energies)
        .filter(|(t, _)| **t >= lo && **t <= hi)
        .map(|(&t, &e)| (t, e))
        .collect();
    if picked.len() < 5 {
        return Err(Error::Fit(format!("window [{lo}, {hi}] holds {} samples, need 5", picked.len())));
    }
    if picked.iter().any(|&(t, e)| t <= 0.0 || e <= 0.0) {
        return Err(Error::Fit("log-log fit needs t > 0 and E > 0 in the window".into()));
    }
    let xs: Vec<f64> = picked.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = picked.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("window has no spread in t".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let resid: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - (intercept + slope * x)).collect();
    let rms_residual = (resid.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
    let max_residual = resid.iter().copied().fold(0.0, f64::max);
    let amplitude = intercept.exp();
    let delta = 0.0 - slope;
    // Nudge past rounding so the envelope, evaluated as written, never dips
    // below a sample.
    let mut upper_amplitude = amplitude * max_residual.exp();
    while picked.iter().any(|&(t, e)| upper_amplitude * t.powf(-delta) < e) {
        upper_amplitude = upper_amplitude.next_up();
    }
    Ok(DecayFit {
        amplitude,
        delta,
        window,
        samples: picked.len(),
        rms_residual,
        max_residual,
        upper_amplitude,
    })
}

/// Root in `[t_{i-1}, t_i]` of the local cubic interpolant of `ln E` minus `level`.
fn log_crossing(trace: &EnergyTrace, i: usize, level: f64) -> f64 {
    let lo = i.saturating_sub(2);
    let hi = (i + 1).min(trace.len() - 1);
    let nodes: Vec<(f64, f64)> = (lo..=hi).map(|j| (trace.times[j], trace.energies[j].ln())).collect();
    let interp = |t: f64| {
        nodes
            .iter()
            .enumerate()
            .map(|(a, &(ta, ya))| {
                let w: f64 = nodes
                    .iter()
                    .enumerate()
                    .filter(|&(b, _)| b != a)
                    .map(|(_, &(tb, _))| (t - tb) / (ta - tb))
                    .product();
                w * ya
            })
            .sum::<f64>()
            - level
    };
    let (mut a, mut b) = (trace.times[i - 1], trace.times[i]);
    // The bracket holds: the interpolant matches ln E at both ends.
    while b - a > 4.0 * f64::EPSILON * b.abs().max(a.abs()).max(f64::MIN_POSITIVE) {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if interp(mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// First times at which the energy falls to `E(0)/2^k`, k = 1, 2, ….
/// Between samples `ln E` is interpolated by the cubic through the four
/// nearest samples (fewer near the ends), which is exact for exponentials.
pub fn halving_times(trace: &EnergyTrace) -> Result<Vec<f64>> {
    if trace.is_empty() {
        return Ok(Vec::new());
    }
    if trace.energies.iter().any(|&e| e <= 0.0) {
        return Err(Error::Precondition("halving times need positive energies".into()));
    }
    if trace.energies.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Precondition("halving times need a non-increasing trace".into()));
    }
    let e0 = trace.energies[0];
    let mut out = Vec::new();
    let mut k = 1;
    for i in 1..trace.len() {
        loop {
            let target = e0 / 2f64.powi(k);
            let (ea, eb) = (trace.energies[i - 1], trace.energies[i]);
            if eb > target {
                break;
            }
            let (ta, tb) = (trace.times[i - 1], trace.times[i]);
            let t = if ea <= target {
                ta
            } else if eb == target {
                tb
            } else {
                log_crossing(trace, i, target.ln())
            };
            out.push(t);
            k += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "kebab-case")]
pub enum DecayRegime {
    /// Constant halving gaps.
    Exponential,
    /// Gaps growing geometrically by `2^{1/δ}`.
    PowerLaw { delta: f64 },
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalvingReport {
    pub times: Vec<f64>,
    /// Gaps between consecutive halvings; the first is measured from the trace start.
    pub gaps: Vec<f64>,
    /// `gaps[k+1] / gaps[k]` after the skipped transient.
    pub ratios: Vec<f64>,
    pub regime: DecayRegime,
}

/// Classifies the halving gaps, ignoring the first `skip` halvings.
pub fn classify_halving(trace: &EnergyTrace, skip: usize) -> Result<HalvingReport> {
    let times = halving_times(trace)?;
    let start = trace.times.first().copied().unwrap_or(0.0);
    let mut gaps = Vec::with_capacity(times.len());
    let mut prev = start;
    for &t in &times {
        gaps.push(t - prev);
        prev = t;
    }
    let ratios: Vec<f64> = gaps.windows(2).skip(skip).map(|w| w[1] / w[0]).collect();
    let regime = if ratios.is_empty() {
        DecayRegime::Undetermined
    } else if ratios.iter().all(|r| (0.9..=1.1).contains(r)) {
        DecayRegime::Exponential
    } else if ratios.iter().all(|&r| r >= 1.3) {
        let log_mean = ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64;
        DecayRegime::PowerLaw { delta: std::f64::consts::LN_2 / log_mean }
    } else {
        DecayRegime::Undetermined
    };
    Ok(HalvingReport { times, gaps, ratios, regime })
}

/// `‖(u₀,u₁)‖²_{H¹×L²} / ∫_0^T ∫_region |∂_t u|²` for the conservative flow.
pub fn observability_ratio(state: &ModalState, region: Region, t: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::validation("observability", "horizon T must be positive"));
    }
    let mass = mass_matrix(&state.basis, region);
    observability_ratio_with(state, &mass, t)
}

/// Same as [`observability_ratio`] with a precomputed region mass matrix.
pub fn observability_ratio_with(state: &ModalState, mass: &nalgebra::DMatrix<f64>, t: f64) -> Result<f64> {
    let den = conservative_quadratic_integral(state, mass, t, true);
    if !(den > 0.0) {
        return Err(Error::DegenerateObservability(format!("observed energy is {den}")));
    }
    Ok(state.energy_g() / den)
}

/// Constants of the iteration lemma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaParams {
    pub c1: f64,
    pub c2: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LemmaParams {
    pub fn new(c1: f64, c2: f64, beta: f64, gamma: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(c1.is_finite() && c1 > 1.0) {
            return Err(Error::validation("lemma params", format!("c1 > 1 violated (c1 = {c1})")));
        }
        for (name, v) in [("c2", c2), ("beta", beta), ("gamma", gamma)] {
            if !ok(v) {
                return Err(Error::validation("lemma params", format!("{name} > 0 violated ({name} = {v})")));
            }
        }
        Ok(LemmaParams { c1, c2, beta, gamma })
    }
}

/// `(2c₁/t)^{1/(β+1)} + c₂ t^{-1/γ}`, the bound on `𝓕(t²)` for `t >= 2`.
pub fn lemma_b_bound(params: &LemmaParams, t: f64) -> Result<f64> {
    if !(t >= 2.0) {
        return Err(Error::OutOfRange(format!("lemma bound needs t >= 2, got {t}")));
    }
    Ok((2.0 * params.c1 / t).powf(1.0 / (params.beta + 1.0)) + params.c2 * t.powf(-1.0 / params.gamma))
}

/// Non-increasing samples of a function, evaluated off-grid by linear
/// interpolation and held at the last value beyond the grid.
struct Sampled<'a> {
    grid: &'a [f64],
    values: &'a [f64],
}

impl Sampled<'_> {
    fn at(&self, s: f64) -> f64 {
        let g = self.grid;
        if s <= g[0] {
            return self.values[0];
        }
        if s >= g[g.len() - 1] {
            return self.values[g.len() - 1];
        }
        let i = g.partition_point(|&x| x <= s);
        let (a, b) = (g[i - 1], g[i]);
        let w = (s - a) / (b - a);
        self.values[i - 1] * (1.0 - w) + self.values[i] * w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaPoint {
    pub s: f64,
    /// Right side minus left side of the hypothesis at `s`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConclusionPoint {
    pub t: f64,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub params: LemmaParams,
    /// Hypothesis margins at grid points `0 < s <= max t²`.
    pub hypothesis: Vec<LemmaPoint>,
    pub hypothesis_holds: bool,
    /// Smallest checked `s` at which the hypothesis fails.
    pub first_violation: Option<f64>,
    /// Conclusion checks at every `t >= 2` whose `t²` lies inside the range
    /// where the hypothesis held.
    pub conclusion: Vec<ConclusionPoint>,
    pub conclusion_violations: usize,
}

/// Checks the lemma hypothesis on the sample grid, then the conclusion bound at
/// each `t` in `t_grid` covered by it.
pub fn lemma_b_verify(grid: &[f64], values: &[f64], params: &LemmaParams, t_grid: &[f64]) -> Result<LemmaReport> {
    if grid.len() != values.len() || grid.len() < 2 {
        return Err(Error::Precondition("need at least two samples with matching grid".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("grid must be strictly increasing".into()));
    }
    if values.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
        return Err(Error::Precondition("F must be positive and bounded by one".into()));
    }
    if values.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Precondition("F must be non-increasing".into()));
    }
    let f = Sampled { grid, values };
    let s_max = t_grid.iter().filter(|&&t| t >= 2.0).map(|t| t * t).fold(0.0, f64::max);

    let mut hypothesis = Vec::new();
    let mut first_violation = None;
    for (&s, &fs) in grid.iter().zip(values) {
        if s <= 0.0 {
            continue;
        }
        if s > s_max {
            break;
        }
        let jump = (params.c2 / fs).powf(params.gamma) + s;
        let rhs = params.c1 * fs.powf(-params.beta) * (fs - f.at(jump));
        let margin = rhs - fs;
        if margin < 0.0 && first_violation.is_none() {
            first_violation = Some(s);
        }
        hypothesis.push(LemmaPoint { s, margin });
    }
    let covered = first_violation.unwrap_or(f64::INFINITY);

    let mut conclusion = Vec::new();
    for &t in t_grid {
        if t < 2.0 || t * t >= covered || t * t > grid[grid.len() - 1] {
            continue;
        }
        conclusion.push(ConclusionPoint { t, value: f.at(t * t), bound: lemma_b_bound(params, t)? });
    }
    let conclusion_violations = conclusion.iter().filter(|c| c.value > c.bound).count();
    Ok(LemmaReport {
        params: *params,
        hypothesis,
        hypothesis_holds: first_violation.is_none(),
        first_violation,
        conclusion,
        conclusion_violations,
    })
}

/// The normalized function `𝓕(s) = σ (𝓔(w,s) + 𝓔(∂_t w,s)) / 𝓔(∂_t² w,0)` of
/// a damped run, with σ fixing `𝓕(0) = 1`. Derivative energies come from the
/// exact modal time derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedDecay {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub sigma: f64,
    /// `𝓔(∂_t² w,0) / (𝓔(w,s) + 𝓔(∂_t w,s))` per record: the ratio whose
    /// power sets the observation horizon in the derivation of the hypothesis.
    pub h_selection: Vec<f64>,
}

pub fn normalized_decay(run: &DampedRun, d: &DampingMatrix) -> Result<NormalizedDecay> {
    let raw: Vec<f64> = run
        .states
        .iter()
        .map(|s| s.energy_g() + s.damped_derivative(d).energy_g())
        .collect();
    let first = run.states.first().ok_or_else(|| Error::Precondition("empty run".into()))?;
    let second = first.damped_derivative(d).damped_derivative(d).energy_g();
    if !(raw[0] > 0.0 && second > 0.0) {
        return Err(Error::Undefined("normalized decay of the zero state"));
    }
    let sigma = second / raw[0];
    Ok(NormalizedDecay {
        times: run.trace.times.clone(),
        values: raw.iter().map(|r| r / raw[0]).collect(),
        sigma,
        h_selection: raw.iter().map(|r| second / r).collect(),
    })
}

/// `min_{j<=n} μ_j / j^{2/3}` over the sorted eigenvalues of a basis.
pub fn weyl_constant(basis: &EigenBasis, n: usize) -> f64 {
    basis
        .eigenvalues()
        .iter()
        .take(n)
        .enumerate()
        .map(|(j, mu)| mu / ((j + 1) as f64).powf(2.0 / 3.0))
        .fold(f64::INFINITY, f64::min)
}
