//! Classical cat maps, the coordinate-dependent momentum shear and
//! Lyapunov exponents.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Strength above which the perturbed map is no longer guaranteed to be
/// conjugate to the bare cat map.
pub const ANOSOV_BOUND: f64 = 0.11;

/// Reduce `x` into `[0, 1)`. An exact (or rounded-up) 1.0 maps to 0.0.
#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// A hyperbolic torus automorphism: integer matrix with det 1 and trace > 2.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CatMap {
    label: String,
    g: [[i64; 2]; 2],
}

impl CatMap {
    pub fn new(label: impl Into<String>, g: [[i64; 2]; 2]) -> Result<Self> {
        let label = label.into();
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        if det != 1 {
            return Err(Error::InvalidMap { label, reason: format!("det = {det}, expected 1") });
        }
        let trace = g[0][0] + g[1][1];
        if trace <= 2 {
            return Err(Error::InvalidMap { label, reason: format!("trace = {trace}, must exceed 2") });
        }
        Ok(Self { label, g })
    }

    pub fn g1() -> Self {
        Self { label: "G1".into(), g: [[2, 1], [1, 1]] }
    }

    pub fn g2() -> Self {
        Self { label: "G2".into(), g: [[2, 1], [3, 2]] }
    }

    pub fn g3() -> Self {
        Self { label: "G3".into(), g: [[4, 1], [15, 4]] }
    }

    pub fn g4() -> Self {
        Self { label: "G4".into(), g: [[8, 1], [63, 8]] }
    }

    /// Look up one of the built-in maps by label (`G1` .. `G4`, case-insensitive).
    pub fn named(label: &str) -> Result<Self> {
        match label.to_ascii_uppercase().as_str() {
            "G1" => Ok(Self::g1()),
            "G2" => Ok(Self::g2()),
            "G3" => Ok(Self::g3()),
            "G4" => Ok(Self::g4()),
            _ => Err(Error::InvalidMap {
                label: label.to_string(),
                reason: "unknown map label (expected G1, G2, G3 or G4)".into(),
            }),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn matrix(&self) -> [[i64; 2]; 2] {
        self.g
    }

    pub fn g11(&self) -> i64 {
        self.g[0][0]
    }
    pub fn g12(&self) -> i64 {
        self.g[0][1]
    }
    pub fn g21(&self) -> i64 {
        self.g[1][0]
    }
    pub fn g22(&self) -> i64 {
        self.g[1][1]
    }

    pub fn trace(&self) -> i64 {
        self.g[0][0] + self.g[1][1]
    }

    fn as_f64(&self) -> [[f64; 2]; 2] {
        [
            [self.g[0][0] as f64, self.g[0][1] as f64],
            [self.g[1][0] as f64, self.g[1][1] as f64],
        ]
    }
}

impl fmt::Display for CatMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [[{}, {}], [{}, {}]]", self.label, self.g[0][0], self.g[0][1], self.g[1][0], self.g[1][1])
    }
}

/// Phase-space point with both coordinates kept in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusPoint {
    q: f64,
    p: f64,
}

impl TorusPoint {
    pub fn new(q: f64, p: f64) -> Self {
        Self { q: wrap_unit(q), p: wrap_unit(p) }
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

/// Position interval `[center - width/2, center + width/2)` taken mod 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShearWindow {
    center: f64,
    width: f64,
}

impl ShearWindow {
    pub fn new(center: f64, width: f64) -> Result<Self> {
        if !(width > 0.0 && width <= 1.0) {
            return Err(Error::InvalidParameter(format!("window width {width} outside (0, 1]")));
        }
        if !center.is_finite() {
            return Err(Error::InvalidParameter("window center must be finite".into()));
        }
        Ok(Self { center: wrap_unit(center), width })
    }

    /// The whole torus.
    pub fn global() -> Self {
        Self { center: 0.5, width: 1.0 }
    }

    /// Window of the given width centred on the maximum of the shear profile.
    pub fn at_shear_maximum(width: f64) -> Result<Self> {
        Self::new(shear_maximum_position(), width)
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn is_global(&self) -> bool {
        self.width >= 1.0
    }

    pub fn contains(&self, q: f64) -> bool {
        if self.is_global() {
            return true;
        }
        let offset = wrap_unit(q - (self.center - 0.5 * self.width));
        offset < self.width
    }
}

impl Default for ShearWindow {
    fn default() -> Self {
        Self::global()
    }
}

/// Position of the maximum of `cos 2πq − cos 4πq` in `[0, 1/2]`, where
/// `cos 2πq = 1/4`.
pub fn shear_maximum_position() -> f64 {
    (0.25f64).acos() / (2.0 * PI)
}

/// Momentum increment ε(q) = (k/2π)(cos 2πq − cos 4πq), zero outside the window.
pub fn shear_profile(q: f64, k: f64, window: &ShearWindow) -> f64 {
    if !window.contains(q) {
        return 0.0;
    }
    k / (2.0 * PI) * ((2.0 * PI * q).cos() - (4.0 * PI * q).cos())
}

/// dε/dq inside the window; the window edges contribute nothing.
fn shear_slope(q: f64, k: f64, window: &ShearWindow) -> f64 {
    if !window.contains(q) {
        return 0.0;
    }
    k * (2.0 * (4.0 * PI * q).sin() - (2.0 * PI * q).sin())
}

pub fn apply_cat_map(map: &CatMap, pt: TorusPoint) -> TorusPoint {
    let g = map.as_f64();
    // Reduce the integer entries first so large products stay accurate.
    TorusPoint::new(g[0][0] * pt.q + g[0][1] * pt.p, g[1][0] * pt.q + g[1][1] * pt.p)
}

/// One step of the perturbed map: `G · (q, p + ε(q)) mod 1`.
pub fn apply_perturbed_map(map: &CatMap, k: f64, window: &ShearWindow, pt: TorusPoint) -> TorusPoint {
    let kicked = TorusPoint::new(pt.q, pt.p + shear_profile(pt.q, k, window));
    apply_cat_map(map, kicked)
}

/// A cat map with its shear, remembering whether the strength is outside
/// the structural-stability bound.
#[derive(Debug, Clone)]
pub struct PerturbedCatMap {
    pub map: CatMap,
    pub k: f64,
    pub window: ShearWindow,
    pub exceeds_anosov_bound: bool,
}

impl PerturbedCatMap {
    pub fn new(map: CatMap, k: f64, window: ShearWindow) -> Self {
        let exceeds_anosov_bound = k.abs() >= ANOSOV_BOUND;
        if exceeds_anosov_bound {
            log::warn!("shear strength k = {k} is outside the Anosov bound |k| < {ANOSOV_BOUND}");
        }
        Self { map, k, window, exceeds_anosov_bound }
    }

    pub fn step(&self, pt: TorusPoint) -> TorusPoint {
        apply_perturbed_map(&self.map, self.k, &self.window, pt)
    }

    /// Jacobian of one step at `pt`: `G · [[1, 0], [ε'(q), 1]]`.
    pub fn jacobian(&self, pt: TorusPoint) -> [[f64; 2]; 2] {
        let g = self.map.as_f64();
        let s = shear_slope(pt.q, self.k, &self.window);
        [
            [g[0][0] + g[0][1] * s, g[0][1]],
            [g[1][0] + g[1][1] * s, g[1][1]],
        ]
    }
}

/// Largest Lyapunov exponent of the bare map, `ln((tr + sqrt(tr² − 4)) / 2)`.
pub fn lyapunov_closed_form(map: &CatMap) -> f64 {
    let tr = map.trace() as f64;
    ((tr + (tr * tr - 4.0).sqrt()) / 2.0).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovEstimate {
    /// Mean growth rate per map iteration.
    pub value: f64,
    pub std_error: f64,
    pub n_steps: usize,
    pub n_samples: usize,
    /// False when `std_error` exceeds 1% of `value`.
    pub converged: bool,
}

/// Steps discarded before accumulating, so the tangent frame aligns with
/// the unstable direction.
const TANGENT_BURN_IN: usize = 32;

/// Tangent-map estimate of the largest Lyapunov exponent.
///
/// Each sample starts at a uniformly random point with a randomly rotated
/// orthonormal tangent frame. The frame is pushed through the Jacobian and
/// re-orthonormalized (2×2 QR) every step; the exponent is the mean of
/// `ln |R₁₁|`. The reported `std_error` is the standard error over samples,
/// floored at the rounding level of the accumulated sum.
pub fn lyapunov_numeric(
    map: &CatMap,
    k: f64,
    window: &ShearWindow,
    n_steps: usize,
    n_samples: usize,
    seed: u64,
) -> Result<LyapunovEstimate> {
    if n_steps < 100 {
        return Err(Error::InvalidParameter(format!("n_steps = {n_steps}, need at least 100")));
    }
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be positive".into()));
    }
    let dynamics = PerturbedCatMap::new(map.clone(), k, *window);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let rates: Vec<f64> = (0..n_samples)
        .map(|_| {
            let mut pt = TorusPoint::new(rng.random::<f64>(), rng.random::<f64>());
            let theta: f64 = rng.random::<f64>() * 2.0 * PI;
            let mut frame = [[theta.cos(), -theta.sin()], [theta.sin(), theta.cos()]];
            let mut log_sum = CompensatedSum::default();
            for step in 0..TANGENT_BURN_IN + n_steps {
                let j = dynamics.jacobian(pt);
                let m = mat_mul(&j, &frame);
                let (q, r11) = qr_first_column(&m);
                frame = q;
                if step >= TANGENT_BURN_IN {
                    log_sum.add(r11.ln());
                }
                pt = dynamics.step(pt);
            }
            log_sum.value() / n_steps as f64
        })
        .collect();

    let n = rates.len() as f64;
    let mean = rates.iter().sum::<f64>() / n;
    let sample_se = if rates.len() > 1 {
        let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    let rounding_floor = f64::EPSILON * (n_steps as f64).sqrt() * mean.abs();
    let std_error = sample_se.hypot(rounding_floor);
    Ok(LyapunovEstimate {
        value: mean,
        std_error,
        n_steps,
        n_samples,
        converged: std_error <= 0.01 * mean.abs(),
    })
}

/// Neumaier summation.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

fn mat_mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

/// Gram-Schmidt QR of a 2×2 matrix; returns Q and the positive R₁₁.
fn qr_first_column(m: &[[f64; 2]; 2]) -> ([[f64; 2]; 2], f64) {
    let r11 = m[0][0].hypot(m[1][0]);
    let e1 = [m[0][0] / r11, m[1][0] / r11];
    let r12 = e1[0] * m[0][1] + e1[1] * m[1][1];
    let mut e2 = [m[0][1] - r12 * e1[0], m[1][1] - r12 * e1[1]];
    let r22 = e2[0].hypot(e2[1]);
    e2 = [e2[0] / r22, e2[1] / r22];
    ([[e1[0], e2[0]], [e1[1], e2[1]]], r11)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const G2_ORACLE_K: f64 = 0.05;

    #[test]
    fn rejects_non_hyperbolic_or_non_unimodular() {
        assert!(CatMap::new("bad", [[2, 1], [1, 2]]).is_err());
        assert!(CatMap::new("rot", [[0, -1], [1, 0]]).is_err());
        assert!(CatMap::new("shear", [[1, 1], [0, 1]]).is_err());
        assert!(CatMap::new("ok", [[3, 2], [4, 3]]).is_ok());
        assert!(CatMap::named("G5").is_err());
        assert_eq!(CatMap::named("g3").unwrap(), CatMap::g3());
    }

    #[test]
    fn cat_map_examples() {
        let o = apply_cat_map(&CatMap::g1(), TorusPoint::new(0.0, 0.0));
        assert_eq!((o.q(), o.p()), (0.0, 0.0));
        let a = apply_cat_map(&CatMap::g1(), TorusPoint::new(0.5, 0.5));
        assert!((a.q() - 0.5).abs() < 1e-15 && a.p().abs() < 1e-15);
        let b = apply_cat_map(&CatMap::g2(), TorusPoint::new(0.25, 0.1));
        assert!((b.q() - 0.6).abs() < 1e-12);
        assert!((b.p() - 0.95).abs() < 1e-12);
    }

    #[test]
    fn wrap_maps_one_to_zero() {
        assert_eq!(wrap_unit(1.0), 0.0);
        assert_eq!(wrap_unit(-1e-18), 0.0);
        assert_eq!(wrap_unit(3.25), 0.25);
        assert_eq!(TorusPoint::new(1.0, 2.0).q(), 0.0);
    }

    #[test]
    fn shear_profile_examples() {
        let global = ShearWindow::global();
        assert_eq!(shear_profile(0.0, 0.3, &global), 0.0);
        assert!((shear_profile(0.5, 2.0 * PI, &global) + 2.0).abs() < 1e-12);
        let local = ShearWindow::new(0.2098, 0.1).unwrap();
        assert_eq!(shear_profile(0.5, 2.0 * PI, &local), 0.0);
        assert!(shear_profile(0.2098, 2.0 * PI, &local) > 1.1);
    }

    #[test]
    fn shear_maximum_is_near_0_20976() {
        let q0 = shear_maximum_position();
        assert!((q0 - 0.20976).abs() < 5e-5, "{q0}");
        // brute-force scan of the profile
        let best = (0..=200_000)
            .map(|i| i as f64 / 400_000.0)
            .max_by(|a, b| {
                let f = |q: f64| (2.0 * PI * q).cos() - (4.0 * PI * q).cos();
                f(*a).partial_cmp(&f(*b)).unwrap()
            })
            .unwrap();
        assert!((best - q0).abs() < 1e-5);
    }

    #[test]
    fn perturbed_map_examples() {
        let w = ShearWindow::global();
        let pt = TorusPoint::new(0.37, 0.81);
        assert_eq!(apply_perturbed_map(&CatMap::g2(), 0.0, &w, pt), apply_cat_map(&CatMap::g2(), pt));
        let o = apply_perturbed_map(&CatMap::g1(), 0.05, &w, TorusPoint::new(0.0, 0.0));
        assert_eq!((o.q(), o.p()), (0.0, 0.0));

        // hand composition: eps(0.25) = (k/2π)(cos(π/2) − cos(π)) = k/2π
        let eps = G2_ORACLE_K / (2.0 * PI);
        let p = 0.1 + eps;
        let expect_q = (2.0 * 0.25 + p).rem_euclid(1.0);
        let expect_p = (3.0 * 0.25 + 2.0 * p).rem_euclid(1.0);
        let got = apply_perturbed_map(&CatMap::g2(), G2_ORACLE_K, &w, TorusPoint::new(0.25, 0.1));
        assert!((got.q() - expect_q).abs() < 1e-14);
        assert!((got.p() - expect_p).abs() < 1e-14);
    }

    #[test]
    fn anosov_flag() {
        assert!(!PerturbedCatMap::new(CatMap::g1(), 0.05, ShearWindow::global()).exceeds_anosov_bound);
        assert!(PerturbedCatMap::new(CatMap::g1(), 0.2, ShearWindow::global()).exceeds_anosov_bound);
    }

    #[test]
    fn closed_form_exponents() {
        let cases = [
            (CatMap::g1(), 0.9624),
            (CatMap::g2(), 1.3170),
            (CatMap::g3(), 2.0634),
            (CatMap::g4(), 2.7687),
        ];
        for (map, expect) in cases {
            let l = lyapunov_closed_form(&map);
            assert!((l - expect).abs() < 5e-5, "{}: {l}", map.label());
        }
        assert!((lyapunov_closed_form(&CatMap::g2()) - (2.0 + 3f64.sqrt()).ln()).abs() < 1e-15);
    }

    #[test]
    fn numeric_exponent_matches_closed_form_without_shear() {
        let w = ShearWindow::global();
        for map in [CatMap::g1(), CatMap::g2(), CatMap::g3(), CatMap::g4()] {
            let est = lyapunov_numeric(&map, 0.0, &w, 500, 10, 7).unwrap();
            let exact = lyapunov_closed_form(&map);
            assert!((est.value - exact).abs() <= 3.0 * est.std_error, "{}: {est:?} vs {exact}", map.label());
            assert!((est.value - exact).abs() < 1e-3);
        }
        let single = lyapunov_numeric(&CatMap::g3(), 0.0, &w, 200, 1, 1).unwrap();
        assert!((single.value - 2.0634).abs() < 1e-3);
    }

    #[test]
    fn perturbed_exponent_stays_close() {
        let est = lyapunov_numeric(&CatMap::g2(), 0.05, &ShearWindow::global(), 2000, 20, 11).unwrap();
        assert!(est.converged);
        assert!((est.value / lyapunov_closed_form(&CatMap::g2()) - 1.0).abs() < 0.05, "{est:?}");
    }

    #[test]
    fn numeric_exponent_is_seed_deterministic() {
        let w = ShearWindow::new(0.2, 0.3).unwrap();
        let a = lyapunov_numeric(&CatMap::g1(), 0.08, &w, 300, 12, 99).unwrap();
        let b = lyapunov_numeric(&CatMap::g1(), 0.08, &w, 300, 12, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn numeric_exponent_rejects_short_runs() {
        assert!(lyapunov_numeric(&CatMap::g1(), 0.0, &ShearWindow::global(), 50, 10, 0).is_err());
        assert!(lyapunov_numeric(&CatMap::g1(), 0.0, &ShearWindow::global(), 100, 0, 0).is_err());
    }

    fn fd_jacobian_det(map: &CatMap, k: f64, window: &ShearWindow, q: f64, p: f64) -> f64 {
        // Unwrapped map so the finite differences do not straddle the mod-1 cut.
        let f = |q: f64, p: f64| {
            let g = map.as_f64();
            let pk = p + shear_profile(q, k, window);
            (g[0][0] * q + g[0][1] * pk, g[1][0] * q + g[1][1] * pk)
        };
        let h = 1e-6;
        let (a1, b1) = f(q + h, p);
        let (a0, b0) = f(q - h, p);
        let (c1, d1) = f(q, p + h);
        let (c0, d0) = f(q, p - h);
        let dqdq = (a1 - a0) / (2.0 * h);
        let dpdq = (b1 - b0) / (2.0 * h);
        let dqdp = (c1 - c0) / (2.0 * h);
        let dpdp = (d1 - d0) / (2.0 * h);
        dqdq * dpdp - dqdp * dpdq
    }

    proptest! {
        #[test]
        fn area_preserving(q in 0.01f64..0.99, p in 0.0f64..1.0, k in 0.0f64..0.1, which in 0usize..4) {
            let map = [CatMap::g1(), CatMap::g2(), CatMap::g3(), CatMap::g4()][which].clone();
            let det = fd_jacobian_det(&map, k, &ShearWindow::global(), q, p);
            prop_assert!((det - 1.0).abs() < 1e-6, "det = {}", det);
        }

        #[test]
        fn shear_is_periodic(q in 0.0f64..1.0, k in -0.1f64..0.1) {
            let w = ShearWindow::global();
            let a = shear_profile(q, k, &w);
            let b = shear_profile(wrap_unit(q + 1.0), k, &w);
            prop_assert!((a - b).abs() < 1e-14);
        }

        #[test]
        fn full_window_equals_global(q in 0.0f64..1.0, k in -0.1f64..0.1, c in 0.0f64..1.0) {
            let w = ShearWindow::new(c, 1.0).unwrap();
            prop_assert_eq!(shear_profile(q, k, &w), shear_profile(q, k, &ShearWindow::global()));
        }

        #[test]
        fn points_stay_on_torus(q in 0.0f64..1.0, p in 0.0f64..1.0, k in 0.0f64..0.1) {
            let out = apply_perturbed_map(&CatMap::g3(), k, &ShearWindow::global(), TorusPoint::new(q, p));
            prop_assert!((0.0..1.0).contains(&out.q()) && (0.0..1.0).contains(&out.p()));
        }
    }
}
