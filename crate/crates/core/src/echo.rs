//! Loschmidt echo `M(t) = |⟨ψ₀|(U_pert^†)^t (U_ref)^t|ψ₀⟩|²` for coherent
//! initial states, ensemble averages and exponential decay-rate fits.

use std::f64::consts::PI;

use ndarray::{Array1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classical::{CatMap, TorusPoint};
use crate::linalg::{CMatrix, CVector};
use crate::quantum::{build_propagator, HilbertDim, PerturbationSpec, Propagator};
use crate::spectral::validate_chi_grid;
use crate::{Error, Result, C64};

/// Periodic images summed on each side when building a coherent state.
pub const IMAGE_CUTOFF: i32 = 3;
pub const DEFAULT_STEPS: usize = 60;
pub const DEFAULT_ENSEMBLE: usize = 50;
/// Fit window ends where `M(t)` first drops to `SATURATION_FACTOR / N`.
pub const SATURATION_FACTOR: f64 = 5.0;
pub const WIDENED_SATURATION_FACTOR: f64 = 2.0;

/// Gaussian wave packet periodized on the torus, unit norm.
#[derive(Debug, Clone)]
pub struct CoherentState {
    pub center: TorusPoint,
    pub vector: CVector,
}

impl CoherentState {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// `Σ_j |ψ_j|² q_j` on the grid, with q taken relative to the center so
    /// the periodic cut does not bias it.
    pub fn position_expectation(&self) -> f64 {
        position_expectation(&self.vector, self.center.q())
    }
}

/// Position expectation of `v`, with grid positions unwrapped into
/// `[near − 1/2, near + 1/2)`.
pub fn position_expectation(v: &CVector, near: f64) -> f64 {
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(j, z)| {
            let q = j as f64 / n;
            let d = q - near - (q - near + 0.5).floor();
            z.norm_sqr() * (near + d)
        })
        .sum::<f64>()
        / v.iter().map(|z| z.norm_sqr()).sum::<f64>()
}

/// Amplitude at `q_j = j/N` ∝ `Σ_m exp[−πN(q_j − q + m)² + 2πiN p (q_j − q + m)]`
/// for `|m| ≤ 3`, normalized.
pub fn coherent_state(center: TorusPoint, n: usize) -> Result<CoherentState> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("coherent state needs N >= 2, got {n}")));
    }
    let nf = n as f64;
    let (q0, p0) = (center.q(), center.p());
    let mut vector = Array1::from_shape_fn(n, |j| {
        let q = j as f64 / nf;
        (-IMAGE_CUTOFF..=IMAGE_CUTOFF)
            .map(|m| {
                let x = q - q0 + m as f64;
                C64::from_polar((-PI * nf * x * x).exp(), 2.0 * PI * nf * p0 * x)
            })
            .sum::<C64>()
    });
    let norm = vector.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    vector.mapv_inplace(|z| z / norm);
    Ok(CoherentState { center, vector })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EchoMeta {
    pub n: usize,
    pub map: String,
    pub kind: String,
    pub n_states: usize,
    pub seed: Option<u64>,
}

/// `M(t)` for `t = 0..=T`, with the standard error of the ensemble mean.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoCurve {
    pub m: Vec<f64>,
    pub sem: Vec<f64>,
    pub meta: EchoMeta,
}

impl EchoCurve {
    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

fn echo_meta(u_pert: &Propagator, n_states: usize, seed: Option<u64>) -> EchoMeta {
    let meta = u_pert.meta();
    EchoMeta { n: meta.n, map: meta.map.clone(), kind: format!("{:?}", meta.kind), n_states, seed }
}

fn check_dims(u_ref: &Propagator, u_pert: &Propagator) -> Result<()> {
    if u_ref.dim() != u_pert.dim() {
        return Err(Error::DimensionMismatch { left: u_ref.dim(), right: u_pert.dim() });
    }
    Ok(())
}

/// Single-state echo by repeated matrix-vector products.
pub fn loschmidt_echo(u_ref: &Propagator, u_pert: &Propagator, psi0: &CoherentState, steps: usize) -> Result<EchoCurve> {
    check_dims(u_ref, u_pert)?;
    if psi0.dim() != u_ref.dim() {
        return Err(Error::DimensionMismatch { left: psi0.dim(), right: u_ref.dim() });
    }
    if steps == 0 {
        return Err(Error::InvalidParameter("echo needs at least one step".into()));
    }
    let overlap = |a: &CVector, b: &CVector| b.iter().zip(a.iter()).map(|(x, y)| x.conj() * y).sum::<C64>().norm_sqr();
    let mut a = psi0.vector.clone();
    let mut b = psi0.vector.clone();
    let mut m = Vec::with_capacity(steps + 1);
    m.push(overlap(&a, &b));
    for _ in 0..steps {
        a = u_ref.matrix().dot(&a);
        b = u_pert.matrix().dot(&b);
        m.push(overlap(&a, &b));
    }
    Ok(EchoCurve { sem: vec![0.0; m.len()], m, meta: echo_meta(u_pert, 1, None) })
}

/// Centers of the ensemble: uniform random phase-space points from `seed`.
pub fn ensemble_centers(n_states: usize, seed: u64) -> Vec<TorusPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_states).map(|_| TorusPoint::new(rng.random::<f64>(), rng.random::<f64>())).collect()
}

/// Reference trajectories `U_ref^t Ψ₀` of a coherent-state ensemble, kept
/// so several perturbed propagators can be compared against one
/// reference evolution.
pub struct ReferenceEnsemble {
    initial: CMatrix,
    trajectory: Vec<CMatrix>,
    seed: u64,
}

impl ReferenceEnsemble {
    pub fn new(u_ref: &Propagator, n_states: usize, steps: usize, seed: u64) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::InvalidParameter("ensemble needs at least one state".into()));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("echo needs at least one step".into()));
        }
        let n = u_ref.dim();
        let mut initial = CMatrix::zeros((n, n_states));
        for (s, center) in ensemble_centers(n_states, seed).into_iter().enumerate() {
            initial.column_mut(s).assign(&coherent_state(center, n)?.vector);
        }
        let mut trajectory = Vec::with_capacity(steps + 1);
        trajectory.push(initial.clone());
        for t in 0..steps {
            let next = u_ref.matrix().dot(&trajectory[t]);
            trajectory.push(next);
        }
        Ok(Self { initial, trajectory, seed })
    }

    pub fn steps(&self) -> usize {
        self.trajectory.len() - 1
    }

    pub fn n_states(&self) -> usize {
        self.initial.ncols()
    }

    /// Ensemble mean of `M(t)` against `u_pert`, with its standard error.
    pub fn echo(&self, u_pert: &Propagator) -> Result<EchoCurve> {
        let n = self.initial.nrows();
        if u_pert.dim() != n {
            return Err(Error::DimensionMismatch { left: n, right: u_pert.dim() });
        }
        let count = self.n_states();
        let mut b = self.initial.clone();
        let mut m = Vec::with_capacity(self.trajectory.len());
        let mut sem = Vec::with_capacity(self.trajectory.len());
        for (t, a) in self.trajectory.iter().enumerate() {
            if t == 0 {
                // every member is normalized, so M(0) = 1 for all of them
                m.push(1.0);
                sem.push(0.0);
                continue;
            }
            b = u_pert.matrix().dot(&b);
            let values: Vec<f64> = a
                .axis_iter(Axis(1))
                .zip(b.axis_iter(Axis(1)))
                .map(|(x, y)| y.iter().zip(x.iter()).map(|(p, q)| p.conj() * q).sum::<C64>().norm_sqr())
                .collect();
            let (mean, se) = mean_and_sem(&values);
            m.push(mean);
            sem.push(se);
        }
        Ok(EchoCurve { m, sem, meta: echo_meta(u_pert, count, Some(self.seed)) })
    }
}

fn mean_and_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean echo over `n_states` coherent states at seeded random centers.
pub fn echo_ensemble(u_ref: &Propagator, u_pert: &Propagator, n_states: usize, steps: usize, seed: u64) -> Result<EchoCurve> {
    check_dims(u_ref, u_pert)?;
    ReferenceEnsemble::new(u_ref, n_states, steps, seed)?.echo(u_pert)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitQuality {
    /// Window ends at the first `M(t) ≤ 5/N`.
    Good,
    /// Too few points above 5/N; the window was widened to 2/N.
    Widened,
    /// The curve never reached 5/N; the whole curve was fitted.
    NoSaturation,
}

impl FitQuality {
    pub fn as_str(self) -> &'static str {
        match self {
            FitQuality::Good => "ok",
            FitQuality::Widened => "widened",
            FitQuality::NoSaturation => "no-saturation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// Decay rate per map step, `−slope` of `ln M(t)`, clamped at zero.
    pub gamma: f64,
    pub stderr: f64,
    pub t_start: usize,
    pub t_end: usize,
    pub r_squared: f64,
    /// Mean of `M(t)` after the fit window (last value if none).
    pub saturation_level: f64,
    pub quality: FitQuality,
}

/// Least-squares line through `ln M(t)` on `t ∈ [1, t_sat]`.
pub fn fit_decay_rate(curve: &EchoCurve, n: usize) -> Result<DecayFit> {
    let m = &curve.m;
    if m.len() < 5 {
        return Err(Error::InvalidParameter(format!("need at least 5 time points, got {}", m.len())));
    }
    let first_below = |factor: f64| (1..m.len()).find(|&t| m[t] <= factor / n as f64);
    let usable_end = |end: usize| (1..=end).take_while(|&t| m[t] > 0.0).last();

    let (t_end, quality) = match first_below(SATURATION_FACTOR) {
        Some(t_sat) if usable_end(t_sat).is_some_and(|e| e >= 3) => (usable_end(t_sat).unwrap(), FitQuality::Good),
        Some(t_sat) => match first_below(WIDENED_SATURATION_FACTOR) {
            Some(t_wide) if usable_end(t_wide).is_some_and(|e| e >= 3) => {
                (usable_end(t_wide).unwrap(), FitQuality::Widened)
            }
            other => {
                let end = other.unwrap_or(t_sat);
                return Err(Error::FitWindowTooShort { points: usable_end(end).unwrap_or(0), t_sat: Some(t_sat) });
            }
        },
        None => match usable_end(m.len() - 1) {
            Some(e) if e >= 3 => (e, FitQuality::NoSaturation),
            e => return Err(Error::FitWindowTooShort { points: e.unwrap_or(0), t_sat: None }),
        },
    };

    let ts: Vec<f64> = (1..=t_end).map(|t| t as f64).collect();
    let ys: Vec<f64> = (1..=t_end).map(|t| m[t].ln()).collect();
    let line = least_squares(&ts, &ys);
    let tail = &m[t_end + 1..];
    let saturation_level = if tail.is_empty() { m[m.len() - 1] } else { tail.iter().sum::<f64>() / tail.len() as f64 };
    Ok(DecayFit {
        gamma: (-line.slope).max(0.0),
        stderr: line.slope_stderr,
        t_start: 1,
        t_end,
        r_squared: line.r_squared,
        saturation_level,
        quality,
    })
}

struct Line {
    slope: f64,
    slope_stderr: f64,
    r_squared: f64,
}

fn least_squares(x: &[f64], y: &[f64]) -> Line {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    let slope_stderr = if x.len() > 2 { (ss_res / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    Line { slope, slope_stderr, r_squared }
}

/// Options for a Γ(χ) sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaOptions {
    pub n_states: usize,
    pub steps: usize,
    pub seed: u64,
    /// Evolve the reference with the bare map instead of the map at `k0`.
    pub bare_reference: bool,
}

impl Default for GammaOptions {
    fn default() -> Self {
        Self { n_states: DEFAULT_ENSEMBLE, steps: DEFAULT_STEPS, seed: 0, bare_reference: false }
    }
}

/// Reference propagator for echo runs: the map at `k0`, or the bare map.
pub fn echo_reference_propagator(map: &CatMap, template: &PerturbationSpec, n: HilbertDim, bare: bool) -> Result<Propagator> {
    let spec = if bare {
        PerturbationSpec::new(template.kind, 0.0, 0.0, template.window)?
    } else {
        template.at_chi(0.0, n)?
    };
    build_propagator(map, &spec, n)
}

/// Echo and fit at one `χ` against a prepared reference ensemble.
pub fn gamma_at_chi(
    map: &CatMap,
    template: &PerturbationSpec,
    chi: f64,
    n: HilbertDim,
    reference: &ReferenceEnsemble,
) -> Result<(EchoCurve, DecayFit)> {
    let u = build_propagator(map, &template.at_chi(chi, n)?, n)?;
    let curve = reference.echo(&u)?;
    let fit = fit_decay_rate(&curve, n.get())?;
    Ok((curve, fit))
}

#[derive(Debug)]
pub struct GammaPoint {
    pub chi: f64,
    pub fit: Result<DecayFit>,
}

/// Γ(χ) over a grid with `U_pert` at `k0 + χ/N`. Per-point failures are
/// recorded and the sweep continues.
pub fn gamma_curve(
    map: &CatMap,
    template: &PerturbationSpec,
    chi_grid: &[f64],
    n: HilbertDim,
    options: &GammaOptions,
) -> Result<Vec<GammaPoint>> {
    validate_chi_grid(chi_grid)?;
    let u_ref = echo_reference_propagator(map, template, n, options.bare_reference)?;
    let reference = ReferenceEnsemble::new(&u_ref, options.n_states, options.steps, options.seed)?;
    Ok(chi_grid
        .iter()
        .map(|&chi| GammaPoint { chi, fit: gamma_at_chi(map, template, chi, n, &reference).map(|(_, f)| f) })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::{apply_cat_map, ShearWindow};
    use crate::quantum::{cat_propagator, PerturbationKind};

    fn synthetic(values: impl Iterator<Item = f64>) -> EchoCurve {
        let m: Vec<f64> = values.collect();
        EchoCurve { sem: vec![0.0; m.len()], m, meta: EchoMeta::default() }
    }

    fn propagators(n: usize, chi: f64) -> (Propagator, Propagator) {
        let d = HilbertDim::new(n).unwrap();
        let spec = PerturbationSpec::reference(PerturbationKind::MomentumShear, 0.02, ShearWindow::global()).unwrap();
        let r = build_propagator(&CatMap::g2(), &spec, d).unwrap();
        let p = build_propagator(&CatMap::g2(), &spec.at_chi(chi, d).unwrap(), d).unwrap();
        (r, p)
    }

    #[test]
    fn coherent_state_is_normalized_and_localized() {
        for (q, p) in [(0.1, 0.9), (0.5, 0.5), (0.99, 0.01)] {
            let psi = coherent_state(TorusPoint::new(q, p), 128).unwrap();
            let norm: f64 = psi.vector.iter().map(|z| z.norm_sqr()).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        let psi = coherent_state(TorusPoint::new(0.3, 0.5), 100).unwrap();
        assert!((psi.position_expectation() - 0.3).abs() < 2.0 / 10.0);
        assert!((psi.position_expectation() - 0.3).abs() < 1e-3);
        assert!(coherent_state(TorusPoint::new(0.3, 0.5), 1).is_err());
    }

    #[test]
    fn separated_coherent_states_are_nearly_orthogonal() {
        let n = 100;
        let a = coherent_state(TorusPoint::new(0.2, 0.2), n).unwrap();
        let b = coherent_state(TorusPoint::new(0.7, 0.7), n).unwrap();
        let ov: C64 = a.vector.iter().zip(b.vector.iter()).map(|(x, y)| x.conj() * y).sum();
        assert!(ov.norm_sqr() < (-(n as f64) / 10.0).exp());
    }

    #[test]
    fn one_step_tracks_the_classical_map() {
        let n = 400;
        let u = cat_propagator(&CatMap::g2(), HilbertDim::new(n).unwrap()).unwrap();
        let start = TorusPoint::new(0.13, 0.21);
        let psi = coherent_state(start, n).unwrap();
        let moved = u.matrix().dot(&psi.vector);
        let target = apply_cat_map(&CatMap::g2(), start);
        let q = position_expectation(&moved, target.q());
        assert!((q - target.q()).abs() < 3.0 / (n as f64).sqrt(), "{q} vs {}", target.q());
    }

    #[test]
    fn identical_propagators_never_decay() {
        let (r, _) = propagators(64, 0.0);
        let psi = coherent_state(TorusPoint::new(0.4, 0.1), 64).unwrap();
        let curve = loschmidt_echo(&r, &r, &psi, 30).unwrap();
        assert!(curve.m.iter().all(|m| (m - 1.0).abs() < 1e-12));
        let fit = fit_decay_rate(&curve, 64).unwrap();
        assert_eq!(fit.quality, FitQuality::NoSaturation);
        assert!(fit.gamma < 1e-12);
    }

    #[test]
    fn echo_starts_at_one_and_stays_bounded() {
        let (r, p) = propagators(80, 20.0);
        let psi = coherent_state(TorusPoint::new(0.77, 0.31), 80).unwrap();
        let curve = loschmidt_echo(&r, &p, &psi, 40).unwrap();
        assert!((curve.m[0] - 1.0).abs() < 1e-12);
        assert!(curve.m.iter().all(|&m| (0.0..=1.0 + 1e-9).contains(&m)));
        assert!(curve.m[40] < 0.5);
    }

    #[test]
    fn echo_is_symmetric_and_phase_invariant() {
        let (r, p) = propagators(50, 12.0);
        let psi = coherent_state(TorusPoint::new(0.6, 0.45), 50).unwrap();
        let base = loschmidt_echo(&r, &p, &psi, 25).unwrap();
        let swapped = loschmidt_echo(&p, &r, &psi, 25).unwrap();
        let phased = loschmidt_echo(&r, &p.with_global_phase(1.234), &psi, 25).unwrap();
        for t in 0..=25 {
            assert!((base.m[t] - swapped.m[t]).abs() < 1e-12);
            assert!((base.m[t] - phased.m[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn evolution_preserves_norm() {
        let (_, p) = propagators(60, 30.0);
        let mut v = coherent_state(TorusPoint::new(0.2, 0.8), 60).unwrap().vector;
        for _ in 0..200 {
            v = p.matrix().dot(&v);
        }
        let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_member_ensemble_equals_single_echo() {
        let (r, p) = propagators(40, 8.0);
        let seed = 17;
        let ens = echo_ensemble(&r, &p, 1, 20, seed).unwrap();
        let center = ensemble_centers(1, seed)[0];
        let single = loschmidt_echo(&r, &p, &coherent_state(center, 40).unwrap(), 20).unwrap();
        for t in 0..=20 {
            assert!((ens.m[t] - single.m[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn ensemble_is_deterministic_with_zero_initial_sem() {
        let (r, p) = propagators(40, 8.0);
        let a = echo_ensemble(&r, &p, 6, 15, 3).unwrap();
        let b = echo_ensemble(&r, &p, 6, 15, 3).unwrap();
        assert_eq!(a, b);
        assert!((a.m[0] - 1.0).abs() < 1e-12);
        assert_eq!(a.sem[0], 0.0);
        let other = echo_ensemble(&r, &p, 6, 15, 4).unwrap();
        assert_ne!(a.m, other.m);
        assert!(echo_ensemble(&r, &p, 0, 15, 3).is_err());
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let (r, _) = propagators(40, 0.0);
        let (_, p) = propagators(42, 1.0);
        let psi = coherent_state(TorusPoint::new(0.2, 0.2), 40).unwrap();
        assert!(matches!(loschmidt_echo(&r, &p, &psi, 3), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(echo_ensemble(&r, &p, 2, 3, 0), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn exact_exponential_fit() {
        let curve = synthetic((0..=60).map(|t| (-0.5 * t as f64).exp()));
        let fit = fit_decay_rate(&curve, 1_000_000).unwrap();
        assert!((fit.gamma - 0.5).abs() < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(fit.quality, FitQuality::Good);
        assert_eq!(fit.t_start, 1);
        assert_eq!(fit.t_end, 25);
        assert!(fit.t_start < fit.t_end);
    }

    #[test]
    fn fit_falls_back_then_gives_up() {
        let n = 1000;
        // 5/N reached at t = 2, 2/N at t = 3
        let fast = synthetic([1.0, 0.02, 0.004, 0.0015, 0.001, 0.001, 0.001].into_iter());
        let fit = fit_decay_rate(&fast, n).unwrap();
        assert_eq!(fit.quality, FitQuality::Widened);
        assert_eq!(fit.t_end, 3);

        let faster = synthetic([1.0, 0.001, 0.001, 0.001, 0.001, 0.001].into_iter());
        assert!(matches!(fit_decay_rate(&faster, n), Err(Error::FitWindowTooShort { .. })));

        let short = synthetic([1.0, 0.5, 0.25].into_iter());
        assert!(fit_decay_rate(&short, n).is_err());
    }
}
