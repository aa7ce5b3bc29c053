//! Analytical singular-value shrinkage from resolvent-type functionals
//! of the empirical spectrum, evaluated just above the real axis.

use super::{
    isotonic_over_spectrum, marginal_projections, CorrelationTriplet, EstimatorError, Method,
    ProjectedSpectrum, ShrinkageResult,
};
use crate::linalg::{svd_thin, ComplexScalar, SpectralDecomposition};

/// The complex functionals behind the analytical cleaner, one entry per
/// retained singular direction.
#[derive(Debug, Clone)]
pub struct BBPFunctionals {
    pub eta: f64,
    pub zeta: Vec<ComplexScalar>,
    pub h: Vec<ComplexScalar>,
    pub a: Vec<ComplexScalar>,
    pub b: Vec<ComplexScalar>,
    pub theta: Vec<ComplexScalar>,
    pub l: Vec<ComplexScalar>,
}

/// Evaluates the scalar functionals H, A, B, Theta, L at each spectral
/// point `zeta_k = s_k + i*eta`, with `eta = (r * n_y * dt)^(-1/12)`.
///
/// Expects the orientation with `n_x <= n_y`, so the extra-marginal term
/// of the larger side enters B through `gamma_y_extra`.
pub fn bbp_functionals(
    proj: &ProjectedSpectrum,
    dt_in: usize,
) -> Result<BBPFunctionals, EstimatorError> {
    let r = proj.r;
    let n_y = proj.n_x.max(proj.n_y);
    let eta = ((r * n_y * dt_in) as f64).powf(-1.0 / 12.0);
    if !eta.is_finite() {
        return Err(EstimatorError::NonFiniteEta);
    }
    let inv_dt = 1.0 / dt_in as f64;
    let s = &proj.s_pad[..r];
    let gx = &proj.gamma_x_pad[..r];
    let gy = &proj.gamma_y_pad[..r];

    let mut out = BBPFunctionals {
        eta,
        zeta: Vec::with_capacity(r),
        h: Vec::with_capacity(r),
        a: Vec::with_capacity(r),
        b: Vec::with_capacity(r),
        theta: Vec::with_capacity(r),
        l: Vec::with_capacity(r),
    };
    for k in 0..r {
        let zeta = ComplexScalar::new(s[k], eta);
        let zeta2 = zeta * zeta;
        let mut h = ComplexScalar::new(0.0, 0.0);
        let mut a = ComplexScalar::new(0.0, 0.0);
        let mut b = ComplexScalar::new(0.0, 0.0);
        for l in 0..r {
            let denom = (zeta2 - s[l] * s[l]).inv();
            h += s[l] * s[l] * denom;
            a += gx[l] * denom;
            b += gy[l] * denom;
        }
        b += proj.gamma_y_extra * zeta2.inv();
        h *= inv_dt;
        a *= inv_dt;
        b *= inv_dt;
        let one = ComplexScalar::new(1.0, 0.0);
        let theta = zeta2 * a * b / (one + h);
        let l_val = h - theta / (one + h - theta);
        out.zeta.push(zeta);
        out.h.push(h);
        out.a.push(a);
        out.b.push(b);
        out.theta.push(theta);
        out.l.push(l_val);
    }
    Ok(out)
}

/// Analytical cleaning of the cross-correlation block.
///
/// When `n_x > n_y` the problem is transposed first and the result
/// transposed back, so the extra-marginal accounting always sits on the
/// larger side. Cleaned values are clamped at zero; the optional isotonic
/// pass enforces monotonicity of the shrinkage map over the empirical
/// spectrum.
pub fn bbp_clean(
    t: &CorrelationTriplet,
    apply_isotonic: bool,
) -> Result<ShrinkageResult, EstimatorError> {
    let d = svd_thin(&t.cxy)?;
    bbp_clean_from(t, &d, apply_isotonic)
}

/// [`bbp_clean`] with a precomputed decomposition of `t.cxy`.
pub fn bbp_clean_from(
    t: &CorrelationTriplet,
    d: &SpectralDecomposition,
    apply_isotonic: bool,
) -> Result<ShrinkageResult, EstimatorError> {
    if t.n_x() > t.n_y() {
        let flipped = t.transposed();
        let d_flipped =
            SpectralDecomposition { u: d.v.clone(), s: d.s.clone(), v: d.u.clone() };
        let res = bbp_clean_from(&flipped, &d_flipped, apply_isotonic)?;
        return Ok(ShrinkageResult {
            method: Method::Bbp,
            s_clean: res.s_clean,
            cleaned: res.cleaned.transpose(),
        });
    }

    let proj = marginal_projections(t, d)?;
    let fun = bbp_functionals(&proj, t.dt_in)?;
    let r = proj.r;
    let mut s_clean = Vec::with_capacity(r);
    for k in 0..r {
        let s_hat = d.s[k];
        if s_hat <= 0.0 {
            s_clean.push(0.0);
            continue;
        }
        let im_h = fun.h[k].im;
        if im_h == 0.0 {
            return Err(EstimatorError::DegenerateImH { index: k });
        }
        let ratio = fun.l[k].im / im_h;
        s_clean.push(s_hat * ratio.max(0.0));
    }
    if apply_isotonic {
        s_clean = isotonic_over_spectrum(&d.s, &s_clean);
        for v in s_clean.iter_mut() {
            *v = v.max(0.0);
        }
    }
    let cleaned = d.reconstruct_with(&s_clean);
    Ok(ShrinkageResult { method: Method::Bbp, s_clean, cleaned })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::sample_cross_correlation;
    use crate::linalg::DenseMatrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_cross_block_cleans_to_zero() {
        let t = CorrelationTriplet::new(
            DenseMatrix::identity(3),
            DenseMatrix::identity(4),
            DenseMatrix::zeros(3, 4),
            vec![1.0; 3],
            vec![1.0; 4],
            50,
        )
        .unwrap();
        let res = bbp_clean(&t, false).unwrap();
        assert!(res.s_clean.iter().all(|&s| s == 0.0));
        assert_eq!(res.cleaned.max_abs(), 0.0);
    }

    #[test]
    fn eta_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = DenseMatrix::from_fn(60, 4, |_, _| rng.random_range(-1.0..1.0));
        let y = DenseMatrix::from_fn(60, 6, |_, _| rng.random_range(-1.0..1.0));
        let t = sample_cross_correlation(&x, &y).unwrap();
        let d = crate::linalg::svd_thin(&t.cxy).unwrap();
        let proj = marginal_projections(&t, &d).unwrap();
        let fun = bbp_functionals(&proj, t.dt_in).unwrap();
        let expected = (4.0f64 * 6.0 * 60.0).powf(-1.0 / 12.0);
        assert!((fun.eta - expected).abs() < 1e-14);
        for (k, z) in fun.zeta.iter().enumerate() {
            assert_eq!(z.im, fun.eta);
            assert_eq!(z.re, d.s[k]);
        }
    }

    #[test]
    fn functionals_match_real_arithmetic_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = DenseMatrix::from_fn(80, 5, |_, _| rng.random_range(-1.0..1.0));
        let y = DenseMatrix::from_fn(80, 7, |_, _| rng.random_range(-1.0..1.0));
        let t = sample_cross_correlation(&x, &y).unwrap();
        let d = crate::linalg::svd_thin(&t.cxy).unwrap();
        let proj = marginal_projections(&t, &d).unwrap();
        let fun = bbp_functionals(&proj, t.dt_in).unwrap();

        // independent re-evaluation of the three sums via explicit
        // real/imaginary decomposition
        let eta = fun.eta;
        let dt = t.dt_in as f64;
        let k = 0usize;
        let (zr, zi) = (d.s[k], eta);
        let (z2r, z2i) = (zr * zr - zi * zi, 2.0 * zr * zi);
        let mut h = (0.0f64, 0.0f64);
        let mut a = (0.0f64, 0.0f64);
        let mut b = (0.0f64, 0.0f64);
        for l in 0..proj.r {
            let dr = z2r - d.s[l] * d.s[l];
            let di = z2i;
            let den = dr * dr + di * di;
            let inv = (dr / den, -di / den);
            h.0 += d.s[l] * d.s[l] * inv.0;
            h.1 += d.s[l] * d.s[l] * inv.1;
            a.0 += proj.gamma_x_pad[l] * inv.0;
            a.1 += proj.gamma_x_pad[l] * inv.1;
            b.0 += proj.gamma_y_pad[l] * inv.0;
            b.1 += proj.gamma_y_pad[l] * inv.1;
        }
        let den = z2r * z2r + z2i * z2i;
        b.0 += proj.gamma_y_extra * z2r / den;
        b.1 += proj.gamma_y_extra * (-z2i) / den;
        for v in [&mut h, &mut a, &mut b] {
            v.0 /= dt;
            v.1 /= dt;
        }
        assert!((fun.h[k].re - h.0).abs() < 1e-12);
        assert!((fun.h[k].im - h.1).abs() < 1e-12);
        assert!((fun.a[k].re - a.0).abs() < 1e-12);
        assert!((fun.a[k].im - a.1).abs() < 1e-12);
        assert!((fun.b[k].re - b.0).abs() < 1e-12);
        assert!((fun.b[k].im - b.1).abs() < 1e-12);
    }

    #[test]
    fn cleaned_values_are_non_negative_and_bounded_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = DenseMatrix::from_fn(100, 6, |_, _| rng.random_range(-1.0..1.0));
        let y = DenseMatrix::from_fn(100, 9, |_, _| rng.random_range(-1.0..1.0));
        let t = sample_cross_correlation(&x, &y).unwrap();
        for iso in [false, true] {
            let res = bbp_clean(&t, iso).unwrap();
            assert!(res.s_clean.iter().all(|&s| s >= 0.0), "clamp violated");
            let d = crate::linalg::svd_thin(&t.cxy).unwrap();
            let back = d.reconstruct_with(&res.s_clean);
            assert!(back.max_abs_diff(&res.cleaned) < 1e-10);
        }
    }

    #[test]
    fn transposed_problem_gives_transposed_answer() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DenseMatrix::from_fn(70, 8, |_, _| rng.random_range(-1.0..1.0));
        let y = DenseMatrix::from_fn(70, 5, |_, _| rng.random_range(-1.0..1.0));
        // n_x > n_y triggers the internal swap
        let t = sample_cross_correlation(&x, &y).unwrap();
        let res = bbp_clean(&t, false).unwrap();
        let t_flipped = t.transposed();
        let res_flipped = bbp_clean(&t_flipped, false).unwrap();
        assert!(res.cleaned.max_abs_diff(&res_flipped.cleaned.transpose()) < 1e-10);
        for (a, b) in res.s_clean.iter().zip(&res_flipped.s_clean) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rotation_invariance_with_identity_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 6usize;
        let cxy = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-0.15..0.15));
        let make = |c: DenseMatrix| {
            CorrelationTriplet::new(
                DenseMatrix::identity(n),
                DenseMatrix::identity(n),
                c,
                vec![1.0; n],
                vec![1.0; n],
                120,
            )
            .unwrap()
        };
        let base = bbp_clean(&make(cxy.clone()), false).unwrap();
        // simultaneous orthogonal rotation of both coordinate sets
        let g = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let (q, _) = crate::linalg::qr_thin(&g);
        let rotated = q.matmul(&cxy).mul_t(&q);
        let rot = bbp_clean(&make(rotated), false).unwrap();
        let mut a = base.s_clean.clone();
        let mut b = rot.s_clean.clone();
        a.sort_by(|x, y| y.partial_cmp(x).unwrap());
        b.sort_by(|x, y| y.partial_cmp(x).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }
}
