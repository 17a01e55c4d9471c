//! Eigenphase spectra and the local density of states (LDOS).
//!
//! For a reference eigenstate `ψ_i(k0)` the LDOS places weight
//! `|⟨ψ_j(k)|ψ_i(k0)⟩|²` at the eigenphase difference `φ_j(k) − φ_i(k0)`,
//! wrapped to `(−π, π]`. Its width σ is the half-length of the smallest
//! interval around the mean that holds a fixed fraction (70%) of the weight.

use std::f64::consts::PI;

use ndarray::{s, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classical::CatMap;
use crate::linalg::{schur, unitarity_deviation, CMatrix};
use crate::quantum::{build_propagator, unitarity_limit, HilbertDim, PerturbationSpec, Propagator, PropagatorMeta};
use crate::{Error, Result, C64};

pub const DEFAULT_WIDTH_FRACTION: f64 = 0.7;
pub const DEFAULT_STATE_SAMPLE: usize = 50;
pub const LDOS_BINS: usize = 200;
/// Largest residual `‖Uψ − e^{iφ}ψ‖` accepted from a decomposition.
pub const EIGEN_RESIDUAL_LIMIT: f64 = 1e-8;

/// Wrap an angle into `(−π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = x - two_pi * (x / two_pi).round();
    if r <= -PI {
        r += two_pi;
    } else if r > PI {
        r -= two_pi;
    }
    r
}

/// Eigenphases in `(−π, π]` and orthonormal eigenvectors (columns of
/// `states`), index-aligned.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub phases: Vec<f64>,
    pub states: CMatrix,
    pub meta: Option<PropagatorMeta>,
    /// Largest eigen-residual observed when the system was computed.
    pub max_residual: f64,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.phases.len()
    }
}

pub fn eigendecompose(u: &Propagator) -> Result<EigenSystem> {
    let mut sys = decompose_unitary(&u.matrix())?;
    sys.meta = Some(u.meta().clone());
    Ok(sys)
}

/// Spectral decomposition of a raw unitary matrix via complex Schur form.
/// For a normal matrix the Schur vectors are eigenvectors, so the basis is
/// orthonormal even inside degenerate eigenspaces.
pub fn decompose_unitary(u: &ArrayView2<C64>) -> Result<EigenSystem> {
    let (r, c) = u.dim();
    if r != c {
        return Err(Error::DimensionMismatch { left: r, right: c });
    }
    let deviation = unitarity_deviation(u);
    if !(deviation < unitarity_limit(r)) {
        return Err(Error::NonUnitaryInput { deviation });
    }
    let schur = schur(u)?;
    let max_residual = schur.column_residuals().into_iter().fold(0.0, f64::max);
    if !(max_residual < EIGEN_RESIDUAL_LIMIT) {
        return Err(Error::Convergence(format!("eigen-residual {max_residual:e} above {EIGEN_RESIDUAL_LIMIT:e}")));
    }
    let phases = schur.t.diag().iter().map(|z| wrap_phase(z.arg())).collect();
    Ok(EigenSystem { phases, states: schur.z, meta: None, max_residual })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdosSample {
    pub dphi: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdosMeta {
    pub k0: f64,
    pub k: f64,
    pub n: usize,
    pub n_averaged_states: usize,
}

/// Weighted samples of eigenphase differences. Raw samples are kept so the
/// width never depends on a binning.
#[derive(Debug, Clone)]
pub struct LdosDistribution {
    pub samples: Vec<LdosSample>,
    pub meta: LdosMeta,
}

impl LdosDistribution {
    pub fn total_weight(&self) -> f64 {
        self.samples.iter().map(|s| s.weight).sum()
    }

    /// Weighted arithmetic mean of the wrapped differences.
    pub fn mean(&self) -> f64 {
        let total = self.total_weight();
        self.samples.iter().map(|s| s.weight * s.dphi).sum::<f64>() / total
    }

    /// Uniform histogram over `(−π, π]`: bin centers and densities (weight
    /// per radian).
    pub fn binned(&self, n_bins: usize) -> (Vec<f64>, Vec<f64>) {
        let h = 2.0 * PI / n_bins as f64;
        let mut density = vec![0.0; n_bins];
        for s in &self.samples {
            // bin b covers (−π + b·h, −π + (b+1)·h]
            let b = (((s.dphi + PI) / h).ceil() as isize - 1).clamp(0, n_bins as isize - 1) as usize;
            density[b] += s.weight / h;
        }
        let centers = (0..n_bins).map(|b| -PI + (b as f64 + 0.5) * h).collect();
        (centers, density)
    }
}

fn ldos_meta(reference: &EigenSystem, perturbed: &EigenSystem, n_states: usize) -> LdosMeta {
    LdosMeta {
        k0: reference.meta.as_ref().map_or(f64::NAN, |m| m.k),
        k: perturbed.meta.as_ref().map_or(f64::NAN, |m| m.k),
        n: reference.dim(),
        n_averaged_states: n_states,
    }
}

pub fn ldos_single(reference: &EigenSystem, perturbed: &EigenSystem, i: usize) -> Result<LdosDistribution> {
    ldos_averaged(reference, perturbed, &[i])
}

/// Uniform average of the single-state LDOS over `states`.
pub fn ldos_averaged(reference: &EigenSystem, perturbed: &EigenSystem, states: &[usize]) -> Result<LdosDistribution> {
    let n = reference.dim();
    if perturbed.dim() != n {
        return Err(Error::DimensionMismatch { left: n, right: perturbed.dim() });
    }
    if states.is_empty() {
        return Err(Error::EmptySample);
    }
    if let Some(&bad) = states.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidParameter(format!("state index {bad} out of range for N = {n}")));
    }
    // overlaps[j, s] = ⟨ψ_j(k)|ψ_{states[s]}(k0)⟩
    let selected = reference.states.select(Axis(1), states);
    let overlaps = perturbed.states.t().mapv(|z| z.conj()).dot(&selected);
    let scale = 1.0 / states.len() as f64;
    let mut samples = Vec::with_capacity(n * states.len());
    for (s, &i) in states.iter().enumerate() {
        let phi_i = reference.phases[i];
        let column = overlaps.slice(s![.., s]);
        for (j, z) in column.iter().enumerate() {
            samples.push(LdosSample { dphi: wrap_phase(perturbed.phases[j] - phi_i), weight: z.norm_sqr() * scale });
        }
    }
    Ok(LdosDistribution { samples, meta: ldos_meta(reference, perturbed, states.len()) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthEstimate {
    pub sigma: f64,
    pub mean_dphi: f64,
    pub fraction: f64,
    /// All weight sits at a single point (σ = 0).
    pub degenerate: bool,
}

/// Half-width of the smallest interval `[m − s, m + s]` (on the circle,
/// capped at π) around the weighted mean `m` that captures `fraction` of
/// the weight. Computed exactly from the sorted sample distances.
pub fn ldos_width(dist: &LdosDistribution, fraction: f64) -> Result<WidthEstimate> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!("width fraction {fraction} outside (0, 1)")));
    }
    let total = dist.total_weight();
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("LDOS has no weight".into()));
    }
    let mean = dist.mean();
    let mut by_distance: Vec<(f64, f64)> =
        dist.samples.iter().map(|s| (wrap_phase(s.dphi - mean).abs(), s.weight / total)).collect();
    by_distance.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Tolerance absorbs summation rounding so exact atoms are not skipped.
    let target = fraction - 1e-12;
    let mut acc = 0.0;
    let mut sigma = PI;
    let mut idx = 0;
    while idx < by_distance.len() {
        let d = by_distance[idx].0;
        // closed interval: take every sample at this same distance together
        while idx < by_distance.len() && by_distance[idx].0 <= d {
            acc += by_distance[idx].1;
            idx += 1;
        }
        if acc >= target {
            sigma = d.min(PI);
            break;
        }
    }
    let at_mean: f64 = by_distance.iter().take_while(|(d, _)| *d <= 1e-12).map(|(_, w)| w).sum();
    let degenerate = at_mean >= 1.0 - 1e-9;
    if degenerate {
        sigma = 0.0;
    }
    Ok(WidthEstimate { sigma, mean_dphi: mean, fraction, degenerate })
}

/// Which reference states the LDOS is averaged over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateSample {
    All,
    Random(usize),
}

/// Sorted distinct state indices drawn deterministically from `seed`.
pub fn choose_states(n: usize, sample: StateSample, seed: u64) -> Result<Vec<usize>> {
    match sample {
        StateSample::All => Ok((0..n).collect()),
        StateSample::Random(0) => Err(Error::EmptySample),
        StateSample::Random(count) if count >= n => Ok((0..n).collect()),
        StateSample::Random(count) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = rand::seq::index::sample(&mut rng, n, count).into_vec();
            idx.sort_unstable();
            Ok(idx)
        }
    }
}

/// Averaged LDOS at one strength `χ`, against a precomputed reference.
pub fn ldos_at_chi(
    map: &CatMap,
    template: &PerturbationSpec,
    chi: f64,
    n: HilbertDim,
    reference: &EigenSystem,
    states: &[usize],
) -> Result<LdosDistribution> {
    let spec = template.at_chi(chi, n)?;
    let u = build_propagator(map, &spec, n)?;
    let perturbed = eigendecompose(&u)?;
    ldos_averaged(reference, &perturbed, states)
}

/// Eigensystem of the reference propagator at `k0`.
pub fn reference_eigensystem(map: &CatMap, template: &PerturbationSpec, n: HilbertDim) -> Result<EigenSystem> {
    let spec = template.at_chi(0.0, n)?;
    eigendecompose(&build_propagator(map, &spec, n)?)
}

#[derive(Debug)]
pub struct SigmaPoint {
    pub chi: f64,
    pub width: Result<WidthEstimate>,
}

/// σ(χ) over a grid. Each point builds the propagator at `k = k0 + χ/N`,
/// decomposes it and averages the LDOS over the seeded state sample.
/// Failures are recorded per point.
pub fn sigma_curve(
    map: &CatMap,
    template: &PerturbationSpec,
    chi_grid: &[f64],
    n: HilbertDim,
    sample: StateSample,
    seed: u64,
) -> Result<Vec<SigmaPoint>> {
    validate_chi_grid(chi_grid)?;
    let reference = reference_eigensystem(map, template, n)?;
    let states = choose_states(n.get(), sample, seed)?;
    Ok(chi_grid
        .iter()
        .map(|&chi| SigmaPoint {
            chi,
            width: ldos_at_chi(map, template, chi, n, &reference, &states)
                .and_then(|d| ldos_width(&d, DEFAULT_WIDTH_FRACTION)),
        })
        .collect())
}

pub fn validate_chi_grid(chi_grid: &[f64]) -> Result<()> {
    if chi_grid.is_empty() {
        return Err(Error::InvalidParameter("empty chi grid".into()));
    }
    if chi_grid.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::InvalidParameter("chi values must be finite and nonnegative".into()));
    }
    if chi_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("chi grid must be strictly ascending".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::ShearWindow;
    use crate::quantum::{dft_matrix, PerturbationKind};
    use proptest::prelude::*;

    fn sys_of(u: &CMatrix) -> EigenSystem {
        decompose_unitary(&u.view()).unwrap()
    }

    fn dist(points: &[(f64, f64)]) -> LdosDistribution {
        LdosDistribution {
            samples: points.iter().map(|&(dphi, weight)| LdosSample { dphi, weight }).collect(),
            meta: LdosMeta { k0: 0.0, k: 0.0, n: points.len(), n_averaged_states: 1 },
        }
    }

    #[test]
    fn wrap_phase_range() {
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
        assert!((wrap_phase(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_phase(-0.5) + 0.5).abs() < 1e-15);
        assert!((wrap_phase(2.0 * PI + 0.25) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn identity_decomposes_to_zero_phases() {
        let sys = sys_of(&CMatrix::eye(6));
        assert!(sys.phases.iter().all(|p| p.abs() < 1e-15));
        assert!(unitarity_deviation(&sys.states.view()) < 1e-14);
    }

    #[test]
    fn dft4_eigenphases() {
        // eigenvalue multiset of the 4-point transform: {1, 1, −1, −i}
        let mut phases = sys_of(&dft_matrix(4)).phases;
        phases.sort_by(f64::total_cmp);
        let expect = [-PI / 2.0, 0.0, 0.0, PI];
        for (p, e) in phases.iter().zip(expect) {
            assert!((p - e).abs() < 1e-10, "{phases:?}");
        }
    }

    #[test]
    fn rejects_non_unitary_input() {
        let m = CMatrix::eye(3).mapv(|z| z * 1.1);
        assert!(matches!(decompose_unitary(&m.view()), Err(Error::NonUnitaryInput { .. })));
    }

    #[test]
    fn identical_systems_give_unit_delta() {
        let n = HilbertDim::new(40).unwrap();
        let spec = PerturbationSpec::reference(PerturbationKind::MomentumShear, 0.02, ShearWindow::global()).unwrap();
        let sys = reference_eigensystem(&CatMap::g2(), &spec, n).unwrap();
        for i in [0, 7, 39] {
            let d = ldos_single(&sys, &sys, i).unwrap();
            let heavy: Vec<_> = d.samples.iter().filter(|s| s.weight > 1e-9).collect();
            assert_eq!(heavy.len(), 1);
            assert!((heavy[0].weight - 1.0).abs() < 1e-9 && heavy[0].dphi.abs() < 1e-12);
            let w = ldos_width(&d, 0.7).unwrap();
            assert_eq!(w.sigma, 0.0);
            assert!(w.degenerate);
        }
        let avg = ldos_averaged(&sys, &sys, &[1, 2, 3, 30]).unwrap();
        assert_eq!(ldos_width(&avg, 0.7).unwrap().sigma, 0.0);
        assert!(matches!(ldos_averaged(&sys, &sys, &[]), Err(Error::EmptySample)));
    }

    #[test]
    fn single_index_average_equals_single() {
        let n = HilbertDim::new(30).unwrap();
        let spec = PerturbationSpec::reference(PerturbationKind::MomentumShear, 0.02, ShearWindow::global()).unwrap();
        let r = reference_eigensystem(&CatMap::g2(), &spec, n).unwrap();
        let p = eigendecompose(&build_propagator(&CatMap::g2(), &spec.at_chi(4.0, n).unwrap(), n).unwrap()).unwrap();
        let a = ldos_single(&r, &p, 5).unwrap();
        let b = ldos_averaged(&r, &p, &[5]).unwrap();
        assert_eq!(a.samples, b.samples);
        assert!((a.total_weight() - 1.0).abs() < 1e-9);
        let other = eigendecompose(&build_propagator(&CatMap::g2(), &spec, HilbertDim::new(31).unwrap()).unwrap()).unwrap();
        assert!(matches!(ldos_single(&r, &other, 0), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn width_examples() {
        let delta = dist(&[(0.0, 1.0)]);
        let w = ldos_width(&delta, 0.7).unwrap();
        assert_eq!(w.sigma, 0.0);
        assert!(w.degenerate);

        let m = 100_000;
        let h = 2.0 * PI / m as f64;
        let uniform: Vec<(f64, f64)> = (0..m).map(|b| (-PI + (b as f64 + 0.5) * h, 1.0 / m as f64)).collect();
        let w = ldos_width(&dist(&uniform), 0.7).unwrap();
        assert!((w.sigma - 0.7 * PI).abs() < 1e-4, "{}", w.sigma);

        let pair = ldos_width(&dist(&[(-1.0, 0.5), (1.0, 0.5)]), 0.7).unwrap();
        assert!(pair.mean_dphi.abs() < 1e-15);
        assert_eq!(pair.sigma, 1.0);
        assert!(!pair.degenerate);

        assert!(ldos_width(&delta, 1.0).is_err());
        assert!(ldos_width(&delta, 0.0).is_err());
    }

    #[test]
    fn interval_wraps_around_the_circle() {
        // weight split near ±π: arithmetic mean 0, distances close to π
        let d = dist(&[(3.0, 0.5), (-3.0, 0.5)]);
        let w = ldos_width(&d, 0.7).unwrap();
        assert!((w.sigma - 3.0).abs() < 1e-12);
    }

    #[test]
    fn binned_density_integrates_to_one() {
        let d = dist(&[(-PI + 1e-9, 0.2), (0.0, 0.3), (PI, 0.5)]);
        let (centers, dens) = d.binned(LDOS_BINS);
        assert_eq!(centers.len(), LDOS_BINS);
        let h = 2.0 * PI / LDOS_BINS as f64;
        assert!((dens.iter().sum::<f64>() * h - 1.0).abs() < 1e-12);
        assert!(dens[LDOS_BINS - 1] > 0.0 && dens[0] > 0.0);
    }

    #[test]
    fn choose_states_is_seeded_and_distinct() {
        let a = choose_states(300, StateSample::Random(50), 3).unwrap();
        let b = choose_states(300, StateSample::Random(50), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_ne!(a, choose_states(300, StateSample::Random(50), 4).unwrap());
        assert_eq!(choose_states(5, StateSample::All, 0).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(choose_states(5, StateSample::Random(0), 0).is_err());
    }

    #[test]
    fn sigma_curve_starts_at_zero() {
        let n = HilbertDim::new(60).unwrap();
        let spec = PerturbationSpec::reference(PerturbationKind::MomentumShear, 0.02, ShearWindow::global()).unwrap();
        let curve = sigma_curve(&CatMap::g2(), &spec, &[0.0, 2.0, 5.0], n, StateSample::Random(10), 1).unwrap();
        assert_eq!(curve[0].width.as_ref().unwrap().sigma, 0.0);
        assert!(curve[2].width.as_ref().unwrap().sigma > curve[1].width.as_ref().unwrap().sigma);
        assert!(sigma_curve(&CatMap::g2(), &spec, &[], n, StateSample::All, 1).is_err());
        assert!(sigma_curve(&CatMap::g2(), &spec, &[2.0, 1.0], n, StateSample::All, 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn width_monotone_in_fraction(
            pts in proptest::collection::vec((-3.0f64..3.0, 0.01f64..1.0), 2..40),
            f1 in 0.05f64..0.95,
            f2 in 0.05f64..0.95,
        ) {
            let total: f64 = pts.iter().map(|p| p.1).sum();
            let d = dist(&pts.iter().map(|&(x, w)| (x, w / total)).collect::<Vec<_>>());
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            let a = ldos_width(&d, lo).unwrap().sigma;
            let b = ldos_width(&d, hi).unwrap().sigma;
            prop_assert!(a <= b);
            prop_assert!((0.0..=PI).contains(&b));
        }

        #[test]
        fn ldos_weights_normalized(chi in 0.0f64..40.0, i in 0usize..24, double in proptest::bool::ANY) {
            let n = HilbertDim::new(24).unwrap();
            let kind = if double { PerturbationKind::DoubleShear } else { PerturbationKind::MomentumShear };
            let spec = PerturbationSpec::reference(kind, 0.02, ShearWindow::global()).unwrap();
            let r = reference_eigensystem(&CatMap::g3(), &spec, n).unwrap();
            let p = eigendecompose(&build_propagator(&CatMap::g3(), &spec.at_chi(chi, n).unwrap(), n).unwrap()).unwrap();
            let d = ldos_single(&r, &p, i).unwrap();
            prop_assert!((d.total_weight() - 1.0).abs() < 1e-9);
            prop_assert!(d.samples.iter().all(|s| s.dphi > -PI && s.dphi <= PI));
        }
    }
}
