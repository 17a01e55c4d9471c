//! Unitary propagators of the quantized (perturbed) cat maps on an
//! N-state torus Hilbert space with `2πħN = 1`.
//!
//! Positions live on the grid `q_j = j/N` and momenta on `p_l = l/N`. The
//! momentum shear is diagonal in position, the position shear is diagonal
//! in momentum and the two bases are related by the discrete Fourier
//! transform.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView2, Axis};

use crate::classical::{wrap_unit, CatMap, ShearWindow};
use crate::linalg::{adjoint, unitarity_deviation, CMatrix};
use crate::{Error, Result, C64};

/// Number of basis states. `ħ_eff = 1/(2πN)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HilbertDim(usize);

impl HilbertDim {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("Hilbert dimension N = {n}, need N >= 2")));
        }
        Ok(Self(n))
    }

    /// Dimension checked against the quantization rules of `map`.
    pub fn for_map(map: &CatMap, n: usize) -> Result<Self> {
        let dim = Self::new(n)?;
        check_quantizable(map, dim)?;
        Ok(dim)
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn hbar(self) -> f64 {
        1.0 / (2.0 * PI * self.0 as f64)
    }
}

impl fmt::Display for HilbertDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Strength in units of the effective Planck constant, `χ = kN`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledStrength {
    chi: f64,
    k: f64,
    n: HilbertDim,
}

impl ScaledStrength {
    pub fn from_chi(chi: f64, n: HilbertDim) -> Self {
        Self { chi, k: chi / n.get() as f64, n }
    }

    pub fn from_k(k: f64, n: HilbertDim) -> Self {
        Self { chi: k * n.get() as f64, k, n }
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }
    pub fn k(&self) -> f64 {
        self.k
    }
    pub fn dim(&self) -> HilbertDim {
        self.n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PerturbationKind {
    /// `U = U^G U^P`, optionally restricted to a position window.
    MomentumShear,
    /// `U = U^P U^G F^+ U^Q F`, both shears at the same χ.
    DoubleShear,
}

impl PerturbationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PerturbationKind::MomentumShear => "momentum-shear",
            PerturbationKind::DoubleShear => "double-shear",
        }
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "momentum-shear" | "momentum" => Ok(PerturbationKind::MomentumShear),
            "double-shear" | "double" => Ok(PerturbationKind::DoubleShear),
            other => Err(Error::InvalidParameter(format!(
                "unknown perturbation kind {other:?} (expected momentum-shear or double-shear)"
            ))),
        }
    }
}

/// Which perturbation, at which strength `k`, relative to the reference
/// strength `k0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub k: f64,
    pub k0: f64,
    pub window: ShearWindow,
}

/// Reference strength that lifts the non-generic degeneracies of the bare map.
pub const DEFAULT_K0: f64 = 0.02;

impl PerturbationSpec {
    pub fn new(kind: PerturbationKind, k: f64, k0: f64, window: ShearWindow) -> Result<Self> {
        if !(k0 >= 0.0 && k >= k0) {
            return Err(Error::InvalidParameter(format!("need k >= k0 >= 0, got k = {k}, k0 = {k0}")));
        }
        if kind == PerturbationKind::DoubleShear && !window.is_global() {
            return Err(Error::InvalidParameter("the double shear only supports the global window".into()));
        }
        Ok(Self { kind, k, k0, window })
    }

    /// Spec at the reference strength itself (`k = k0`).
    pub fn reference(kind: PerturbationKind, k0: f64, window: ShearWindow) -> Result<Self> {
        Self::new(kind, k0, k0, window)
    }

    /// Same kind, window and `k0`, with `k = k0 + χ/N`.
    pub fn at_chi(&self, chi: f64, n: HilbertDim) -> Result<Self> {
        Self::new(self.kind, self.k0 + chi / n.get() as f64, self.k0, self.window)
    }

    /// Differential strength `Δk = k − k0`.
    pub fn delta_k(&self) -> f64 {
        self.k - self.k0
    }
}

/// What a propagator represents; part of its cache identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PropagatorKind {
    Cat,
    MomentumShear,
    PositionShear,
    MomentumPerturbed,
    DoubleShear,
}

impl PropagatorKind {
    pub fn code(self) -> u8 {
        match self {
            PropagatorKind::Cat => 0,
            PropagatorKind::MomentumShear => 1,
            PropagatorKind::PositionShear => 2,
            PropagatorKind::MomentumPerturbed => 3,
            PropagatorKind::DoubleShear => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => PropagatorKind::Cat,
            1 => PropagatorKind::MomentumShear,
            2 => PropagatorKind::PositionShear,
            3 => PropagatorKind::MomentumPerturbed,
            4 => PropagatorKind::DoubleShear,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagatorMeta {
    /// Cat map label; empty for pure shears.
    pub map: String,
    pub kind: PropagatorKind,
    pub k: f64,
    pub k0: f64,
    pub window: ShearWindow,
    pub n: usize,
}

/// N×N unitary matrix that passed `max |U^H U − I| < 1e−10·N`.
#[derive(Debug, Clone)]
pub struct Propagator {
    matrix: CMatrix,
    meta: PropagatorMeta,
}

impl Propagator {
    /// Wrap a matrix after the unitarity check.
    pub fn checked(matrix: CMatrix, meta: PropagatorMeta) -> Result<Self> {
        let (r, c) = matrix.dim();
        if r != c {
            return Err(Error::DimensionMismatch { left: r, right: c });
        }
        if r != meta.n {
            return Err(Error::DimensionMismatch { left: r, right: meta.n });
        }
        let limit = unitarity_limit(r);
        let deviation = unitarity_deviation(&matrix.view());
        if !(deviation < limit) {
            return Err(Error::Unitarity { deviation, limit });
        }
        Ok(Self { matrix, meta })
    }

    pub fn matrix(&self) -> ArrayView2<'_, C64> {
        self.matrix.view()
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn meta(&self) -> &PropagatorMeta {
        &self.meta
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// The same operator times a global phase `e^{iθ}`.
    pub fn with_global_phase(&self, theta: f64) -> Self {
        let phase = C64::from_polar(1.0, theta);
        Self { matrix: self.matrix.mapv(|z| z * phase), meta: self.meta.clone() }
    }
}

pub fn unitarity_limit(n: usize) -> f64 {
    1e-10 * n as f64
}

fn is_paper_map(map: &CatMap) -> bool {
    [CatMap::g1(), CatMap::g2(), CatMap::g3(), CatMap::g4()].iter().any(|m| m.matrix() == map.matrix())
}

/// Quantizability rules: G1 needs even N, G2–G4 quantize for every N. For
/// other maps the checkerboard parity rule (odd diagonal with even
/// antidiagonal, or the reverse) and kernel periodicity only produce
/// warnings.
pub fn check_quantizable(map: &CatMap, n: HilbertDim) -> Result<()> {
    let n = n.get() as i64;
    if map.matrix() == CatMap::g1().matrix() {
        if n % 2 != 0 {
            return Err(Error::Quantization {
                label: map.label().to_string(),
                n: n as usize,
                reason: "this map requires an even number of states".into(),
            });
        }
        return Ok(());
    }
    if is_paper_map(map) {
        return Ok(());
    }
    let odd = |x: i64| x.rem_euclid(2) == 1;
    let checkerboard = (odd(map.g11()) && odd(map.g22()) && !odd(map.g12()) && !odd(map.g21()))
        || (!odd(map.g11()) && !odd(map.g22()) && odd(map.g12()) && odd(map.g21()));
    if !checkerboard {
        log::warn!("{map} does not satisfy the checkerboard parity condition; quantization may be inexact");
    }
    if odd(n * map.g11()) || odd(n * map.g22()) {
        log::warn!("{map} with N = {n}: propagator kernel is not periodic on the grid");
    }
    Ok(())
}

/// `U^G(q', q) = (i g12 N)^{-1/2} exp[iπN/g12 (g11 q² − 2q'q + g22 q'²)]`
/// on the grid `q = j/N`. Rows are indexed by `q'`.
pub fn cat_propagator(map: &CatMap, n: HilbertDim) -> Result<Propagator> {
    check_quantizable(map, n)?;
    let matrix = cat_matrix(map, n.get());
    Propagator::checked(
        matrix,
        PropagatorMeta {
            map: map.label().to_string(),
            kind: PropagatorKind::Cat,
            k: 0.0,
            k0: 0.0,
            window: ShearWindow::global(),
            n: n.get(),
        },
    )
}

fn cat_matrix(map: &CatMap, n: usize) -> CMatrix {
    let g12 = map.g12();
    let ni = n as i64;
    // The phase is π·m/(g12 N) with integer m, so reduce m mod 2·g12·N exactly.
    let modulus = 2 * g12.abs() * ni;
    let prefactor = (C64::new(0.0, (g12 * ni) as f64)).sqrt().inv();
    let scale = PI / (g12 * ni) as f64;
    CMatrix::from_shape_fn((n, n), |(row, col)| {
        let (qp, q) = (row as i64, col as i64);
        let m = (map.g11() * q * q - 2 * qp * q + map.g22() * qp * qp).rem_euclid(modulus);
        prefactor * C64::from_polar(1.0, scale * m as f64)
    })
}

/// `S_p(q) = (k/4π²)(sin 2πq − ½ sin 4πq)`, the action of the momentum shear.
pub fn shear_action(q: f64, k: f64) -> f64 {
    k / (4.0 * PI * PI) * ((2.0 * PI * q).sin() - 0.5 * (4.0 * PI * q).sin())
}

/// Grid points `j` inside the window: the half-open window with its lower
/// edge and width rounded to the nearest grid point, taken mod N.
pub fn window_mask(window: &ShearWindow, n: usize) -> Vec<bool> {
    if window.is_global() {
        return vec![true; n];
    }
    let nf = n as f64;
    let lower = (wrap_unit(window.center() - 0.5 * window.width()) * nf).round() as i64;
    let count = ((window.width() * nf).round() as i64).min(n as i64);
    (0..n as i64).map(|j| (j - lower).rem_euclid(n as i64) < count).collect()
}

/// Diagonal entries `exp[i 2πN S_p(j/N)]`, identity outside the window.
pub fn momentum_shear_phases(k: f64, n: usize, window: &ShearWindow) -> Array1<C64> {
    let mask = window_mask(window, n);
    let nf = n as f64;
    Array1::from_shape_fn(n, |j| {
        if mask[j] {
            C64::from_polar(1.0, 2.0 * PI * nf * shear_action(j as f64 / nf, k))
        } else {
            C64::new(1.0, 0.0)
        }
    })
}

/// Diagonal entries (momentum basis) `exp[(iχ/2π)(cos 6πp − ½ sin 4πp)]`.
pub fn position_shear_phases(chi: f64, n: usize) -> Array1<C64> {
    let nf = n as f64;
    Array1::from_shape_fn(n, |j| {
        let p = j as f64 / nf;
        C64::from_polar(1.0, chi / (2.0 * PI) * ((6.0 * PI * p).cos() - 0.5 * (4.0 * PI * p).sin()))
    })
}

pub fn momentum_shear_propagator(k: f64, n: HilbertDim, window: &ShearWindow) -> Result<Propagator> {
    let phases = momentum_shear_phases(k, n.get(), window);
    Propagator::checked(
        CMatrix::from_diag(&phases),
        PropagatorMeta {
            map: String::new(),
            kind: PropagatorKind::MomentumShear,
            k,
            k0: 0.0,
            window: *window,
            n: n.get(),
        },
    )
}

/// Position shear, diagonal in the momentum basis.
pub fn position_shear_propagator(chi: ScaledStrength, n: HilbertDim) -> Result<Propagator> {
    if chi.dim() != n {
        return Err(Error::DimensionMismatch { left: chi.dim().get(), right: n.get() });
    }
    let phases = position_shear_phases(chi.chi(), n.get());
    Propagator::checked(
        CMatrix::from_diag(&phases),
        PropagatorMeta {
            map: String::new(),
            kind: PropagatorKind::PositionShear,
            k: chi.k(),
            k0: 0.0,
            window: ShearWindow::global(),
            n: n.get(),
        },
    )
}

/// `F_{lj} = N^{-1/2} exp(−2πi lj/N)`, position to momentum amplitudes.
pub fn dft_matrix(n: usize) -> CMatrix {
    let scale = 1.0 / (n as f64).sqrt();
    CMatrix::from_shape_fn((n, n), |(l, j)| {
        let m = (l * j) % n;
        C64::from_polar(scale, -2.0 * PI * m as f64 / n as f64)
    })
}

/// `U = U^G U^P`: the cat map after a (possibly windowed) momentum shear.
pub fn compose_momentum_perturbed(map: &CatMap, k: f64, n: HilbertDim, window: &ShearWindow) -> Result<Propagator> {
    check_quantizable(map, n)?;
    let mut matrix = cat_matrix(map, n.get());
    let phases = momentum_shear_phases(k, n.get(), window);
    // Right-multiplying by a diagonal scales columns.
    for (mut col, ph) in matrix.axis_iter_mut(Axis(1)).zip(phases.iter()) {
        col.mapv_inplace(|z| z * ph);
    }
    Propagator::checked(
        matrix,
        PropagatorMeta {
            map: map.label().to_string(),
            kind: PropagatorKind::MomentumPerturbed,
            k,
            k0: 0.0,
            window: *window,
            n: n.get(),
        },
    )
}

/// `U = U^P U^G F^+ U^Q F` with both shears at `χ = kN`.
pub fn compose_double_shear(map: &CatMap, k: f64, n: HilbertDim) -> Result<Propagator> {
    check_quantizable(map, n)?;
    let dim = n.get();
    let chi = k * dim as f64;
    let f = dft_matrix(dim);
    let mut qf = f.clone();
    let uq = position_shear_phases(chi, dim);
    for (mut row, ph) in qf.axis_iter_mut(Axis(0)).zip(uq.iter()) {
        row.mapv_inplace(|z| z * ph);
    }
    let position_part = adjoint(&f.view()).dot(&qf);
    let mut matrix = cat_matrix(map, dim).dot(&position_part);
    let up = momentum_shear_phases(k, dim, &ShearWindow::global());
    for (mut row, ph) in matrix.axis_iter_mut(Axis(0)).zip(up.iter()) {
        row.mapv_inplace(|z| z * ph);
    }
    Propagator::checked(
        matrix,
        PropagatorMeta {
            map: map.label().to_string(),
            kind: PropagatorKind::DoubleShear,
            k,
            k0: 0.0,
            window: ShearWindow::global(),
            n: dim,
        },
    )
}

/// Propagator for a perturbation spec at its strength `k`, with `k0`
/// recorded in the metadata.
pub fn build_propagator(map: &CatMap, spec: &PerturbationSpec, n: HilbertDim) -> Result<Propagator> {
    let mut u = match spec.kind {
        PerturbationKind::MomentumShear => compose_momentum_perturbed(map, spec.k, n, &spec.window)?,
        PerturbationKind::DoubleShear => compose_double_shear(map, spec.k, n)?,
    };
    u.meta.k0 = spec.k0;
    Ok(u)
}
