//! Dense complex linear algebra helpers on top of ndarray (BLAS gemm) and
//! LAPACK's complex Schur factorization.

use ndarray::{Array1, Array2, ArrayView2, ShapeBuilder};
use num_complex::Complex64 as C64;

use crate::{Error, Result};

pub type CMatrix = Array2<C64>;
pub type CVector = Array1<C64>;

/// Conjugate transpose as a new standard-layout matrix.
pub fn adjoint(a: &ArrayView2<C64>) -> CMatrix {
    a.t().mapv(|z| z.conj()).as_standard_layout().into_owned()
}

/// `max |(A^H A − I)_{ij}|`.
pub fn unitarity_deviation(a: &ArrayView2<C64>) -> f64 {
    let (n, m) = a.dim();
    if n != m {
        return f64::INFINITY;
    }
    let gram = adjoint(a).dot(a);
    gram.indexed_iter()
        .map(|((i, j), z)| {
            let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            (z - target).norm()
        })
        .fold(0.0, f64::max)
}

/// `max |A_{ij} − B_{ij}|`.
pub fn max_abs_diff(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Complex Schur factorization `A = Z T Z^H` (LAPACK `zgees`).
pub struct Schur {
    /// Upper triangular factor.
    pub t: CMatrix,
    /// Unitary Schur vectors, one per column.
    pub z: CMatrix,
}

impl Schur {
    pub fn eigenvalues(&self) -> CVector {
        self.t.diag().to_owned()
    }

    /// `‖(T − t_jj I) e_j‖`, which equals `‖A z_j − t_jj z_j‖` while Z is
    /// unitary. For a normal matrix these are the eigenvector residuals.
    pub fn column_residuals(&self) -> Vec<f64> {
        let n = self.t.nrows();
        (0..n)
            .map(|j| (0..j).map(|i| self.t[[i, j]].norm_sqr()).sum::<f64>().sqrt())
            .collect()
    }
}

pub fn schur(a: &ArrayView2<C64>) -> Result<Schur> {
    let (n, m) = a.dim();
    if n != m {
        return Err(Error::DimensionMismatch { left: n, right: m });
    }
    if n == 0 {
        return Ok(Schur { t: CMatrix::zeros((0, 0)), z: CMatrix::zeros((0, 0)) });
    }
    let ni = i32::try_from(n).map_err(|_| Error::InvalidParameter(format!("matrix too large: {n}")))?;

    // Column-major copy of A.
    let mut buf: Vec<C64> = a.t().iter().copied().collect();
    let mut w = vec![C64::new(0.0, 0.0); n];
    let mut vs = vec![C64::new(0.0, 0.0); n * n];
    let mut rwork = vec![0.0f64; n];
    let mut bwork = vec![0i32; n];
    let mut sdim = 0i32;
    let mut info = 0i32;
    let jobvs = b'V' as libc_char;
    let sort = b'N' as libc_char;

    let mut query = [C64::new(0.0, 0.0)];
    // SAFETY: all pointers reference live buffers of the sizes LAPACK expects
    // for an n×n problem; lwork = -1 only writes the optimal size to `query`.
    unsafe {
        lapack_sys::zgees_(
            &jobvs, &sort, None, &ni, buf.as_mut_ptr().cast(), &ni, &mut sdim,
            w.as_mut_ptr().cast(), vs.as_mut_ptr().cast(), &ni,
            query.as_mut_ptr().cast(), &-1, rwork.as_mut_ptr(), bwork.as_mut_ptr(), &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Convergence(format!("zgees workspace query failed, info = {info}")));
    }
    let lwork = (query[0].re as usize).max(2 * n);
    let mut work = vec![C64::new(0.0, 0.0); lwork];
    let lwork_i = lwork as i32;
    // SAFETY: as above, with a work array of the queried length.
    unsafe {
        lapack_sys::zgees_(
            &jobvs, &sort, None, &ni, buf.as_mut_ptr().cast(), &ni, &mut sdim,
            w.as_mut_ptr().cast(), vs.as_mut_ptr().cast(), &ni,
            work.as_mut_ptr().cast(), &lwork_i, rwork.as_mut_ptr(), bwork.as_mut_ptr(), &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Convergence(format!("zgees failed, info = {info}")));
    }
    let t = Array2::from_shape_vec((n, n).f(), buf)
        .map_err(|e| Error::Convergence(e.to_string()))?
        .as_standard_layout()
        .into_owned();
    let z = Array2::from_shape_vec((n, n).f(), vs)
        .map_err(|e| Error::Convergence(e.to_string()))?
        .as_standard_layout()
        .into_owned();
    Ok(Schur { t, z })
}

#[allow(non_camel_case_types)]
type libc_char = std::os::raw::c_char;
