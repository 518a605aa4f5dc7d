use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::homodyne::FrameSet;
use crate::modes::{grid_offset, ModeFunction};
use crate::scalar::Real;

const BLOCK: usize = 2048;

/// Frame auto-covariance on the frame grid.
#[derive(Debug, Clone)]
pub struct Autocovariance<T: Real> {
    pub matrix: DMatrix<T>,
    pub mean: Vec<T>,
    pub n_frames: usize,
    pub t0: f64,
    pub dt: f64,
}

impl<T: Real> Autocovariance<T> {
    pub fn leading_mode(&self) -> Result<PcaResult<T>> {
        pca_leading_mode(&self.matrix, self.t0, self.dt)
    }
}

/// `(1/M) Σ (x - x̄)(x - x̄)ᵀ` over all frames.
pub fn autocovariance<T: Real>(fs: &FrameSet) -> Result<Autocovariance<T>> {
    let (matrix, mean) = accumulate(fs, 0, fs.n_samples(), None)?;
    Ok(Autocovariance {
        matrix,
        mean,
        n_frames: fs.n_frames(),
        t0: fs.t0(),
        dt: fs.dt(),
    })
}

/// Covariance of the coefficients `Bᵀx` of frames restricted to
/// `basis`'s window.
pub fn autocovariance_in_basis<T: Real>(
    fs: &FrameSet,
    basis: &AnalysisBasis<T>,
) -> Result<DMatrix<T>> {
    let lo = basis.offset_in(fs)?;
    Ok(accumulate(fs, lo, basis.n, Some(&basis.cols))?.0)
}

fn accumulate<T: Real>(
    fs: &FrameSet,
    lo: usize,
    n: usize,
    basis: Option<&DMatrix<T>>,
) -> Result<(DMatrix<T>, Vec<T>)> {
    let m = fs.n_frames();
    if m < 2 {
        return Err(Error::InsufficientData(format!(
            "auto-covariance needs at least 2 frames, got {m}"
        )));
    }
    let dim = basis.map_or(n, |b| b.ncols());
    let inv_m = T::one() / T::lit(m as f64);

    // blocks of frames as columns, optionally projected: V += C Cᵀ
    let mut v = DMatrix::<T>::zeros(dim, dim);
    let mut sum = DMatrix::<T>::zeros(dim, 1);
    let ones = |b| DMatrix::<T>::from_element(b, 1, T::one());
    let mut start = 0;
    while start < m {
        let b = BLOCK.min(m - start);
        let mut x = DMatrix::<T>::zeros(n, b);
        for j in 0..b {
            let f = &fs.frame(start + j)[lo..lo + n];
            for (col, &s) in x.column_mut(j).iter_mut().zip(f) {
                *col = T::lit(s as f64);
            }
        }
        let c = match basis {
            Some(basis) => basis.tr_mul(&x),
            None => x,
        };
        sum.gemm(T::one(), &c, &ones(b), T::one());
        let ct = c.transpose();
        v.gemm(T::one(), &c, &ct, T::one());
        start += b;
    }
    let mean: Vec<T> = sum.iter().map(|&s| s * inv_m).collect();
    v *= inv_m;
    for i in 0..dim {
        for j in 0..=i {
            let s = (v[(i, j)] + v[(j, i)]) * T::lit(0.5) - mean[i] * mean[j];
            v[(i, j)] = s;
            v[(j, i)] = s;
        }
    }
    Ok((v, mean))
}

/// Orthonormal columns spanning the functions the mode is searched in,
/// over a window of the frame grid.
#[derive(Debug, Clone)]
pub struct AnalysisBasis<T: Real> {
    t0: f64,
    dt: f64,
    n: usize,
    cols: DMatrix<T>,
}

impl<T: Real> AnalysisBasis<T> {
    /// The first `k` orthonormal DCT-II vectors on `n` samples from `t0`.
    pub fn dct(t0: f64, dt: f64, n: usize, k: usize) -> Result<Self> {
        if n == 0 || k == 0 || k > n {
            return Err(invalid(format!("need 0 < k <= n, got k = {k}, n = {n}")));
        }
        let pi = std::f64::consts::PI;
        let cols = DMatrix::from_fn(n, k, |i, j| {
            let s = if j == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            T::lit(s * (pi * j as f64 * (i as f64 + 0.5) / n as f64).cos())
        });
        Ok(Self { t0, dt, n, cols })
    }

    /// Window `[start, end)` keeping frequencies up to `bandwidth_mhz`;
    /// `None` keeps every sample.
    pub fn band_limited(
        start_ns: f64,
        end_ns: f64,
        dt: f64,
        bandwidth_mhz: Option<f64>,
    ) -> Result<Self> {
        let n = ((end_ns - start_ns) / dt).round();
        if !(n >= 1.0) {
            return Err(invalid(format!(
                "empty analysis window [{start_ns}, {end_ns})"
            )));
        }
        let n = n as usize;
        let k = match bandwidth_mhz {
            Some(f) if f > 0.0 => ((2.0 * n as f64 * dt * f * 1e-3).round() as usize).clamp(1, n),
            Some(f) => return Err(invalid(format!("bandwidth must be positive, got {f}"))),
            None => n,
        };
        if k == n {
            let cols = DMatrix::identity(n, n);
            return Ok(Self {
                t0: start_ns,
                dt,
                n,
                cols,
            });
        }
        Self::dct(start_ns, dt, n, k)
    }

    pub fn dim(&self) -> usize {
        self.cols.ncols()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    fn offset_in(&self, fs: &FrameSet) -> Result<usize> {
        if (fs.dt() - self.dt).abs() > 1e-9 * self.dt {
            return Err(invalid("analysis basis and frames use different dt"));
        }
        let k = grid_offset(fs.t0(), self.t0, self.dt)?;
        if k < 0 || k as usize + self.n > fs.n_samples() {
            return Err(invalid("analysis window extends beyond the frames"));
        }
        Ok(k as usize)
    }

    /// Mode `B·u` on the window grid.
    pub fn mode(&self, u: &[T]) -> Result<ModeFunction<T>> {
        let u = DMatrix::from_column_slice(u.len(), 1, u);
        let v = &self.cols * u;
        ModeFunction::from_unnormalized(v.iter().copied().collect(), self.t0, self.dt)
    }
}

/// Leading mode of the band-limited covariance, as a mode on the window.
pub fn pca_in_basis<T: Real>(fs: &FrameSet, basis: &AnalysisBasis<T>) -> Result<PcaResult<T>> {
    let v = autocovariance_in_basis(fs, basis)?;
    let coeffs = pca_leading_mode(&v, 0.0, 1.0)?;
    let mut mode = basis.mode(coeffs.mode.samples())?;
    let peak =
        mode.samples()
            .iter()
            .copied()
            .fold(T::zero(), |b, x| if x.abs() > b.abs() { x } else { b });
    if peak < T::zero() {
        let flipped = mode.samples().iter().map(|&x| -x).collect();
        mode = ModeFunction::new(flipped, mode.t0(), mode.dt())?;
    }
    Ok(PcaResult { mode, ..coeffs })
}

/// Quadrature variance along the mode found on one half of the frames,
/// measured on the other half. Free of the upward bias of the in-sample
/// leading eigenvalue.
pub fn cross_fitted_eigenvalue<T: Real>(fs: &FrameSet, basis: &AnalysisBasis<T>) -> Result<T> {
    let m = fs.n_frames();
    if m < 4 {
        return Err(Error::InsufficientData(
            "cross-fitting needs at least 4 frames".into(),
        ));
    }
    let first: Vec<usize> = (0..m / 2).collect();
    let second: Vec<usize> = (m / 2..m).collect();
    let mode = pca_in_basis(&fs.select(&first), basis)?.mode;
    let x = fs.select(&second).extract_all(&mode)?;
    let k = T::lit(x.len() as f64);
    let mean = x.iter().fold(T::zero(), |a, &b| a + b) / k;
    Ok(x.iter()
        .fold(T::zero(), |a, &b| a + (b - mean) * (b - mean))
        / k)
}

#[derive(Debug, Clone)]
pub struct PcaResult<T> {
    pub mode: ModeFunction<T>,
    pub eigenvalue: T,
    /// All eigenvalues, descending.
    pub spectrum: Vec<T>,
    /// Leading eigenvalue not separated from the next one.
    pub degenerate: bool,
}

impl<T: Real> PcaResult<T> {
    /// `n̄ = 2λ - 1`.
    pub fn mean_photon(&self) -> T {
        self.eigenvalue * T::lit(2.0) - T::one()
    }

    pub fn below_vacuum(&self, tol: f64) -> bool {
        self.eigenvalue.as_f64() < 0.5 - tol
    }
}

pub fn pca_leading_mode<T: Real>(v: &DMatrix<T>, t0: f64, dt: f64) -> Result<PcaResult<T>> {
    let n = v.nrows();
    if n == 0 || v.ncols() != n {
        return Err(invalid("covariance must be a non-empty square matrix"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid("covariance contains non-finite entries"));
    }
    let scale = v.iter().fold(0.0f64, |a, x| a.max(x.as_f64().abs()));
    for i in 0..n {
        for j in 0..i {
            if (v[(i, j)] - v[(j, i)]).as_f64().abs() > 1e-9 * scale.max(f64::MIN_POSITIVE) {
                return Err(invalid(format!(
                    "covariance is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let eig = SymmetricEigen::new(v.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let spectrum: Vec<T> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let lead = order[0];
    let mut vec: Vec<T> = eig.eigenvectors.column(lead).iter().copied().collect();
    let peak = vec.iter().copied().fold(
        T::zero(),
        |best, x| if x.abs() > best.abs() { x } else { best },
    );
    if peak < T::zero() {
        vec.iter_mut().for_each(|x| *x = -*x);
    }
    let l1 = spectrum[0].as_f64();
    let degenerate = n == 1 || l1 - spectrum[1].as_f64() <= 1e-8 * l1.abs().max(f64::MIN_POSITIVE);
    Ok(PcaResult {
        mode: ModeFunction::from_unnormalized(vec, t0, dt)?,
        eigenvalue: spectrum[0],
        spectrum,
        degenerate: degenerate || (n > 1 && l1 == 0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::overlap_sq;
    use approx::assert_abs_diff_eq;

    fn rank_one(p: f64, psi: &ModeFunction<f64>) -> DMatrix<f64> {
        let n = psi.len();
        let s = psi.samples();
        DMatrix::from_fn(
            n,
            n,
            |i, j| if i == j { 0.5 } else { 0.0 } + p * s[i] * s[j],
        )
    }

    #[test]
    fn rank_one_update() {
        let psi = ModeFunction::<f64>::gaussian(0.0, 1.0, 120, 60.0, 20.0).unwrap();
        let r = pca_leading_mode(&rank_one(0.582, &psi), 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(r.eigenvalue, 1.082, epsilon = 1e-12);
        assert_abs_diff_eq!(r.mean_photon(), 1.164, epsilon = 1e-12);
        assert_abs_diff_eq!(overlap_sq(&r.mode, &psi).unwrap(), 1.0, epsilon = 1e-12);
        assert!(r.mode.samples()[60] > 0.0);
        assert!(!r.degenerate);
    }

    #[test]
    fn identity_is_degenerate() {
        let r = pca_leading_mode(&DMatrix::<f64>::identity(30, 30).scale(0.5), 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(r.eigenvalue, 0.5, epsilon = 1e-14);
        assert!(r.degenerate);
    }

    #[test]
    fn asymmetric_rejected() {
        let mut v = DMatrix::<f64>::identity(4, 4);
        v[(0, 1)] = 0.3;
        assert!(matches!(
            pca_leading_mode(&v, 0.0, 1.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn duplicated_frame_gives_zero_covariance() {
        let f: Vec<f32> = (0..10).map(|i| i as f32 * 0.1).collect();
        let samples = f.iter().copied().cycle().take(50).collect();
        let fs = FrameSet::new(10, 0.0, 1.0, None, 0, samples).unwrap();
        let v = autocovariance::<f64>(&fs).unwrap();
        assert!(v.matrix.iter().all(|x| x.abs() < 1e-12));
        assert!(v.leading_mode().map(|r| r.degenerate).unwrap_or(true));
        let single = FrameSet::new(10, 0.0, 1.0, None, 0, f).unwrap();
        assert!(matches!(
            autocovariance::<f64>(&single),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn dct_basis_is_orthonormal() {
        let b = AnalysisBasis::<f64>::dct(10.0, 1.0, 64, 12).unwrap();
        let g = b.cols.tr_mul(&b.cols);
        assert!((g - DMatrix::identity(12, 12)).amax() < 1e-12);
        let full = AnalysisBasis::<f64>::band_limited(0.0, 50.0, 1.0, None).unwrap();
        assert_eq!(full.dim(), 50);
        assert_eq!(
            AnalysisBasis::<f64>::band_limited(0.0, 250.0, 1.0, Some(60.0))
                .unwrap()
                .dim(),
            30
        );
    }

    #[test]
    fn basis_covariance_is_projected_covariance() {
        let m = 300;
        let n = 20;
        let samples: Vec<f32> = (0..m * n)
            .map(|k| ((k * 7919) % 103) as f32 / 50.0 - 1.0)
            .collect();
        let fs = FrameSet::new(n, 0.0, 1.0, None, 0, samples).unwrap();
        let basis = AnalysisBasis::<f64>::dct(5.0, 1.0, 10, 4).unwrap();
        let full = autocovariance::<f64>(&fs).unwrap().matrix;
        let sub = full.view((5, 5), (10, 10));
        let expected = basis.cols.tr_mul(&sub) * &basis.cols;
        let got = autocovariance_in_basis(&fs, &basis).unwrap();
        assert!((got - expected).amax() < 1e-12);
        let outside = AnalysisBasis::<f64>::dct(15.0, 1.0, 10, 4).unwrap();
        assert!(autocovariance_in_basis(&fs, &outside).is_err());
    }

    #[test]
    fn blocked_accumulation_matches_direct() {
        let m = BLOCK + 37;
        let n = 6;
        let samples: Vec<f32> = (0..m * n)
            .map(|k| ((k * 7919) % 101) as f32 / 50.0 - 1.0)
            .collect();
        let fs = FrameSet::new(n, 0.0, 1.0, None, 0, samples).unwrap();
        let v = autocovariance::<f64>(&fs).unwrap();
        for i in 0..n {
            for j in 0..n {
                let mi = v.mean[i];
                let mj = v.mean[j];
                let direct: f64 = fs
                    .frames()
                    .map(|f| (f[i] as f64 - mi) * (f[j] as f64 - mj))
                    .sum::<f64>()
                    / m as f64;
                assert_abs_diff_eq!(v.matrix[(i, j)], direct, epsilon = 1e-12);
            }
        }
    }
}
