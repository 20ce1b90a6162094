//! Single-model linear Kalman filter over fixed-size state and measurement
//! spaces.

use nalgebra::{Cholesky, SMatrix, SVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian<const N: usize> {
    pub mean: SVector<f64, N>,
    pub cov: SMatrix<f64, N, N>,
}

impl<const N: usize> Gaussian<N> {
    /// Builds a Gaussian, symmetrizing the covariance.
    pub fn new(mean: SVector<f64, N>, cov: SMatrix<f64, N, N>) -> Self {
        Gaussian {
            mean,
            cov: symmetrize(&cov),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(self.cov.iter()).all(|v| v.is_finite())
    }
}

/// `(P + Pᵀ) / 2`. The result is exactly symmetric in floating point.
pub fn symmetrize<const N: usize>(p: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (p + p.transpose()) * 0.5
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateResult<const N: usize, const M: usize> {
    pub posterior: Gaussian<N>,
    pub innovation: SVector<f64, M>,
    pub innovation_cov: SMatrix<f64, M, M>,
    /// `log N(ỹ; 0, S)`.
    pub log_density: f64,
}

/// Covariance update used after the gain is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CovarianceForm {
    /// `(I − KC) P (I − KC)ᵀ + K R Kᵀ`
    #[default]
    Joseph,
    /// `(I − KC) P`
    Simple,
}

pub fn predict<const N: usize>(
    prior: &Gaussian<N>,
    ad: &SMatrix<f64, N, N>,
    bd: &SVector<f64, N>,
    q: &SMatrix<f64, N, N>,
) -> Result<Gaussian<N>> {
    let out = Gaussian::new(ad * prior.mean + bd, ad * prior.cov * ad.transpose() + q);
    if !out.is_finite() {
        return Err(Error::NonFiniteState("predicted estimate"));
    }
    Ok(out)
}

pub fn update<const N: usize, const M: usize>(
    pred: &Gaussian<N>,
    y: &SVector<f64, M>,
    c: &SMatrix<f64, M, N>,
    d_feed: &SVector<f64, M>,
    r: &SMatrix<f64, M, M>,
    form: CovarianceForm,
) -> Result<UpdateResult<N, M>> {
    let innovation = y - c * pred.mean - d_feed;
    let pct = pred.cov * c.transpose();
    let s = symmetrize(&(c * pct + r));
    let chol = Cholesky::new(s).ok_or(Error::SingularInnovation)?;
    // K = P Cᵀ S⁻¹ = (S⁻¹ C P)ᵀ
    let gain = chol.solve(&pct.transpose()).transpose();
    let mean = pred.mean + gain * innovation;
    let ikc = SMatrix::<f64, N, N>::identity() - gain * c;
    let cov = match form {
        CovarianceForm::Joseph => {
            ikc * pred.cov * ikc.transpose() + gain * r * gain.transpose()
        }
        CovarianceForm::Simple => ikc * pred.cov,
    };
    let posterior = Gaussian::new(mean, cov);
    if !posterior.is_finite() {
        return Err(Error::NonFiniteState("posterior estimate"));
    }
    let log_density = log_density_from_cholesky(&chol, &innovation);
    Ok(UpdateResult {
        posterior,
        innovation,
        innovation_cov: s,
        log_density,
    })
}

fn log_density_from_cholesky<const M: usize>(
    chol: &Cholesky<f64, nalgebra::Const<M>>,
    x: &SVector<f64, M>,
) -> f64 {
    let l = chol.l_dirty();
    let half_log_det: f64 = (0..M).map(|i| l[(i, i)].ln()).sum();
    let z = l
        .solve_lower_triangular(x)
        .expect("Cholesky factor has a positive diagonal");
    -0.5 * z.norm_squared() - half_log_det - 0.5 * (M as f64) * (2.0 * std::f64::consts::PI).ln()
}

/// `log N(x; 0, S)`.
pub fn log_gaussian_density<const M: usize>(x: &SVector<f64, M>, s: &SMatrix<f64, M, M>) -> Result<f64> {
    let chol = Cholesky::new(symmetrize(s)).ok_or(Error::SingularInnovation)?;
    Ok(log_density_from_cholesky(&chol, x))
}

/// Normalized innovation squared `ỹᵀ S⁻¹ ỹ`.
pub fn nis<const M: usize>(innovation: &SVector<f64, M>, s: &SMatrix<f64, M, M>) -> Result<f64> {
    let chol = Cholesky::new(symmetrize(s)).ok_or(Error::SingularInnovation)?;
    Ok(innovation.dot(&chol.solve(innovation)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix1, Matrix2, SymmetricEigen, Vector1, Vector2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    type G1 = Gaussian<1>;

    fn scalar(m: f64, p: f64) -> G1 {
        Gaussian::new(Vector1::new(m), Matrix1::new(p))
    }

    #[test]
    fn identity_prediction_adds_q() {
        let prior = Gaussian::new(Vector2::new(1.0, -2.0), Matrix2::new(2.0, 0.3, 0.3, 1.0));
        let q = Matrix2::new(0.1, 0.0, 0.0, 0.2);
        let out = predict(&prior, &Matrix2::identity(), &Vector2::zeros(), &q).unwrap();
        assert_eq!(out.mean, prior.mean);
        assert!((out.cov - prior.cov - q).amax() < 1e-15);
    }

    #[test]
    fn scalar_prediction() {
        let out = predict(&scalar(0.0, 1.0), &Matrix1::new(1.0), &Vector1::zeros(), &Matrix1::new(0.5)).unwrap();
        assert_eq!(out.cov[0], 1.5);
    }

    #[test]
    fn prediction_rejects_non_finite() {
        let err = predict(&scalar(f64::NAN, 1.0), &Matrix1::new(1.0), &Vector1::zeros(), &Matrix1::new(0.5));
        assert!(matches!(err, Err(Error::NonFiniteState(_))));
    }

    #[test]
    fn scalar_update_by_hand() {
        for form in [CovarianceForm::Joseph, CovarianceForm::Simple] {
            let res = update(
                &scalar(0.0, 1.0),
                &Vector1::new(2.0),
                &Matrix1::new(1.0),
                &Vector1::zeros(),
                &Matrix1::new(1.0),
                form,
            )
            .unwrap();
            assert!((res.posterior.mean[0] - 1.0).abs() < 1e-15);
            assert!((res.posterior.cov[0] - 0.5).abs() < 1e-15);
            assert_eq!(res.innovation[0], 2.0);
            assert_eq!(res.innovation_cov[0], 2.0);
            let expected = -0.5 * 4.0 / 2.0 - 0.5 * (2.0 * std::f64::consts::PI * 2.0f64).ln();
            assert!((res.log_density - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_observation_leaves_prediction() {
        let pred = Gaussian::new(Vector2::new(0.3, 0.7), Matrix2::new(1.0, 0.2, 0.2, 2.0));
        let res = update(
            &pred,
            &Vector2::new(5.0, -5.0),
            &Matrix2::zeros(),
            &Vector2::zeros(),
            &Matrix2::identity(),
            CovarianceForm::Joseph,
        )
        .unwrap();
        assert_eq!(res.posterior, pred);
    }

    #[test]
    fn feedthrough_shifts_innovation() {
        let res = update(
            &scalar(1.0, 1.0),
            &Vector1::new(3.0),
            &Matrix1::new(1.0),
            &Vector1::new(0.5),
            &Matrix1::new(1.0),
            CovarianceForm::Joseph,
        )
        .unwrap();
        assert_eq!(res.innovation[0], 1.5);
    }

    #[test]
    fn singular_innovation_reported() {
        let res = update(
            &scalar(0.0, 0.0),
            &Vector1::new(1.0),
            &Matrix1::new(1.0),
            &Vector1::zeros(),
            &Matrix1::new(0.0),
            CovarianceForm::Joseph,
        );
        assert!(matches!(res, Err(Error::SingularInnovation)));
    }

    #[test]
    fn scalar_riccati_steady_state() {
        let (q, r): (f64, f64) = (0.1, 1.0);
        // predicted-covariance fixed point: p = p r / (p + r) + q
        let p_pred = (q + (q * q + 4.0 * q * r).sqrt()) / 2.0;
        let p_post = p_pred - q;
        assert!((p_pred * p_pred / (p_pred + r) - q).abs() < 1e-15);
        let mut g = scalar(0.0, 1.0);
        let mut last_pred = 0.0;
        for _ in 0..200 {
            let pred = predict(&g, &Matrix1::new(1.0), &Vector1::zeros(), &Matrix1::new(q)).unwrap();
            last_pred = pred.cov[0];
            g = update(
                &pred,
                &Vector1::new(0.0),
                &Matrix1::new(1.0),
                &Vector1::zeros(),
                &Matrix1::new(r),
                CovarianceForm::Joseph,
            )
            .unwrap()
            .posterior;
        }
        assert!((last_pred - p_pred).abs() < 1e-6, "{last_pred} vs {p_pred}");
        assert!((g.cov[0] - p_post).abs() < 1e-6, "{} vs {}", g.cov[0], p_post);
    }

    fn random_spd<const N: usize>(rng: &mut ChaCha8Rng, scale: f64) -> SMatrix<f64, N, N> {
        let a = SMatrix::<f64, N, N>::from_fn(|_, _| StandardNormal.sample(rng));
        symmetrize(&(a * a.transpose() * scale + SMatrix::<f64, N, N>::identity() * 1e-3))
    }

    #[test]
    fn whiteness_on_matched_model() {
        const N: usize = 4;
        const M: usize = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ad = SMatrix::<f64, N, N>::identity() * 0.95
            + SMatrix::<f64, N, N>::from_fn(|i, j| if j == i + 1 { 0.1 } else { 0.0 });
        let c = SMatrix::<f64, M, N>::from_fn(|i, j| if i == j { 1.0 } else { 0.2 });
        let q = random_spd::<N>(&mut rng, 0.01);
        let r = random_spd::<M>(&mut rng, 0.05);
        let lq = q.cholesky().unwrap().l();
        let lr = r.cholesky().unwrap().l();
        let mut x = SVector::<f64, N>::zeros();
        let mut g = Gaussian::new(x, SMatrix::<f64, N, N>::identity());
        let steps = 4000;
        let mut total = 0.0;
        for k in 0..steps {
            let w = SVector::<f64, N>::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let v = SVector::<f64, M>::from_fn(|_, _| StandardNormal.sample(&mut rng));
            x = ad * x + lq * w;
            let y = c * x + lr * v;
            let pred = predict(&g, &ad, &SVector::zeros(), &q).unwrap();
            let res = update(&pred, &y, &c, &SVector::zeros(), &r, CovarianceForm::Joseph).unwrap();
            if k >= 100 {
                total += nis(&res.innovation, &res.innovation_cov).unwrap();
            }
            g = res.posterior;
        }
        let mean = total / (steps - 100) as f64;
        assert!((mean - M as f64).abs() < 0.2 * M as f64, "mean NIS {mean}");
    }

    #[test]
    fn joseph_and_simple_agree_and_stay_symmetric() {
        const N: usize = 6;
        const M: usize = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = random_spd::<N>(&mut rng, 1.0);
            let r = random_spd::<M>(&mut rng, 0.1);
            let c = SMatrix::<f64, M, N>::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let y = SVector::<f64, M>::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let pred = Gaussian::new(SVector::zeros(), p);
            let a = update(&pred, &y, &c, &SVector::zeros(), &r, CovarianceForm::Joseph).unwrap();
            let b = update(&pred, &y, &c, &SVector::zeros(), &r, CovarianceForm::Simple).unwrap();
            assert!((a.posterior.cov - b.posterior.cov).amax() < 1e-9 * p.amax());
            assert_eq!(a.posterior.cov, a.posterior.cov.transpose());
            assert!(a.posterior.cov.trace() < p.trace());
            let eig = SymmetricEigen::new(p - a.posterior.cov).eigenvalues;
            assert!(eig.min() > -1e-10);
        }
    }

    #[test]
    fn log_density_matches_direct_formula() {
        let s = Matrix2::<f64>::new(2.0, 0.5, 0.5, 1.0);
        let x = Vector2::new(0.3, -0.4);
        let direct = -0.5 * (x.transpose() * s.try_inverse().unwrap() * x)[0]
            - 0.5 * s.determinant().ln()
            - (2.0 * std::f64::consts::PI).ln();
        assert!((log_gaussian_density(&x, &s).unwrap() - direct).abs() < 1e-14);
    }
}
