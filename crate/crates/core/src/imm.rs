//! Interacting multiple-model layer over a bank of linear Kalman filters.
//!
//! The bank is generic over the state and measurement dimensions so the same
//! recursion serves the trunk estimator (12 states, 15 measurements) and small
//! scalar test problems.

use nalgebra::{DMatrix, SMatrix, SVector, Vector3};

use crate::dynamics::{ContactMode, ModeSet};
use crate::error::{Error, Result};
use crate::filter::{predict, update, CovarianceForm, Gaussian};

/// Mixing weights and probabilities below this are treated as zero.
pub const PROBABILITY_FLOOR: f64 = 1e-12;
const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Row-stochastic Markov matrix, `pi[(i, j)] = Pr(next = j | current = i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    pi: DMatrix<f64>,
}

impl TransitionMatrix {
    pub fn new(pi: DMatrix<f64>) -> Result<Self> {
        if pi.nrows() != pi.ncols() || pi.nrows() == 0 {
            return Err(Error::LengthMismatch {
                what: "transition matrix shape",
                left: pi.nrows(),
                right: pi.ncols(),
            });
        }
        for (i, row) in pi.row_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::InvalidProbability {
                    name: format!("pi[{i}]"),
                    value: *v,
                });
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidProbability {
                    name: format!("row {i} sum"),
                    value: sum,
                });
            }
        }
        Ok(TransitionMatrix { pi })
    }

    /// Trot-gait transitions over [`ModeSet::trot`]. `pi0` is the flight
    /// self-transition, `pi1` the diagonal-pair stances, `pi2` the three-leg
    /// stances, and `pi3` full stance.
    pub fn trot(pi0: f64, pi1: f64, pi2: f64, pi3: f64) -> Result<Self> {
        for (name, v) in [("pi0", pi0), ("pi1", pi1), ("pi2", pi2), ("pi3", pi3)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidProbability {
                    name: name.to_string(),
                    value: v,
                });
            }
        }
        let (a, b, c, d) = ((1.0 - pi0) / 2.0, (1.0 - pi1) / 5.0, (1.0 - pi2) / 2.0, (1.0 - pi3) / 2.0);
        #[rustfmt::skip]
        let rows = [
            [pi0, a,   0.0, a,   0.0, 0.0, 0.0, 0.0],
            [b,   pi1, b,   b,   0.0, 0.0, b,   b  ],
            [0.0, c,   pi2, 0.0, 0.0, 0.0, 0.0, c  ],
            [b,   b,   0.0, pi1, b,   b,   0.0, b  ],
            [0.0, 0.0, 0.0, c,   pi2, 0.0, 0.0, c  ],
            [0.0, 0.0, 0.0, c,   0.0, pi2, 0.0, c  ],
            [0.0, c,   0.0, 0.0, 0.0, 0.0, pi2, c  ],
            [0.0, d,   0.0, d,   0.0, 0.0, 0.0, pi3],
        ];
        Self::new(DMatrix::from_fn(8, 8, |i, j| rows[i][j]))
    }

    /// Stay with probability `stay`, otherwise move uniformly to another mode.
    pub fn uniform_switching(m: usize, stay: f64) -> Result<Self> {
        if m == 1 {
            return Self::new(DMatrix::from_element(1, 1, 1.0));
        }
        if !(0.0..=1.0).contains(&stay) {
            return Err(Error::InvalidProbability {
                name: "stay".into(),
                value: stay,
            });
        }
        let off = (1.0 - stay) / (m - 1) as f64;
        Self::new(DMatrix::from_fn(m, m, |i, j| if i == j { stay } else { off }))
    }

    pub fn len(&self) -> usize {
        self.pi.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.nrows() == 0
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.pi[(from, to)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.pi
    }

    pub fn max_row_error(&self) -> f64 {
        self.pi
            .row_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// The same chain with modes relabelled: new mode `i` is old mode `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let m = self.len();
        TransitionMatrix {
            pi: DMatrix::from_fn(m, m, |i, j| self.pi[(order[i], order[j])]),
        }
    }
}

/// Physics-based likelihood bias. Only `c_force` enters the likelihood;
/// `friction_nu` is carried for configuration round trips.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasConfig {
    pub c_force: f64,
    pub friction_nu: f64,
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig {
            c_force: 1e-3,
            friction_nu: 0.6,
        }
    }
}

impl BiasConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_force >= 0.0 && self.c_force.is_finite()) {
            return Err(Error::config(format!("c_force must be >= 0, got {}", self.c_force)));
        }
        if !(0.0..=1.0).contains(&self.friction_nu) {
            return Err(Error::InvalidProbability {
                name: "friction_nu".into(),
                value: self.friction_nu,
            });
        }
        Ok(())
    }

    /// `h_f = c_force Σ δᵢ min(0, f_z,i)²` over world-frame forces.
    pub fn penalty(&self, mode: &ContactMode, forces_wf: &[Vector3<f64>; 4]) -> f64 {
        self.c_force
            * (0..4)
                .map(|leg| mode.delta(leg) * forces_wf[leg].z.min(0.0).powi(2))
                .sum::<f64>()
    }
}

/// `log N(ỹ; 0, S) − h_f`.
pub fn mode_log_likelihood<const M: usize>(
    innovation: &SVector<f64, M>,
    s: &SMatrix<f64, M, M>,
    penalty: f64,
) -> Result<f64> {
    Ok(crate::filter::log_gaussian_density(innovation, s)? - penalty)
}

pub fn mode_likelihood<const M: usize>(
    innovation: &SVector<f64, M>,
    s: &SMatrix<f64, M, M>,
    penalty: f64,
) -> Result<f64> {
    mode_log_likelihood(innovation, s, penalty).map(f64::exp)
}

/// One mode's model for a single recursion:
/// `x⁺ = F x + u + w`, `y = H x + e + v`, `w ~ N(0, Q)`, `v ~ N(0, R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeModel<const N: usize, const M: usize> {
    pub transition: SMatrix<f64, N, N>,
    pub input: SVector<f64, N>,
    pub process_noise: SMatrix<f64, N, N>,
    pub observation: SMatrix<f64, M, N>,
    pub feedthrough: SVector<f64, M>,
    pub measurement_noise: SMatrix<f64, M, M>,
    /// Added to the log-likelihood; zero or negative.
    pub log_bias: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Interaction<const N: usize> {
    pub mixed: Vec<Gaussian<N>>,
    /// Predicted mode probabilities `c⁽ᵏ⁾ = Σⱼ πⱼₖ μ⁽ʲ⁾`.
    pub predicted: Vec<f64>,
    /// Modes whose `c⁽ᵏ⁾` fell below the floor and were restarted from the
    /// combined estimate.
    pub reinitialized: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank<const N: usize> {
    estimates: Vec<Gaussian<N>>,
    mu: Vec<f64>,
    transition: TransitionMatrix,
    combined: Gaussian<N>,
    form: CovarianceForm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport<const M: usize> {
    pub log_likelihoods: Vec<f64>,
    pub innovations: Vec<SVector<f64, M>>,
    pub reinitialized: Vec<usize>,
}

impl<const N: usize> FilterBank<N> {
    /// Every mode starts at `initial` with uniform probability.
    pub fn new(initial: Gaussian<N>, transition: TransitionMatrix) -> Self {
        let m = transition.len();
        FilterBank {
            estimates: vec![initial.clone(); m],
            mu: vec![1.0 / m as f64; m],
            transition,
            combined: initial,
            form: CovarianceForm::default(),
        }
    }

    pub fn from_parts(
        estimates: Vec<Gaussian<N>>,
        mu: Vec<f64>,
        transition: TransitionMatrix,
    ) -> Result<Self> {
        let m = transition.len();
        for (what, len) in [("bank estimates", estimates.len()), ("mode probabilities", mu.len())] {
            if len != m {
                return Err(Error::LengthMismatch {
                    what,
                    left: len,
                    right: m,
                });
            }
        }
        let combined = combine(&estimates, &mu);
        Ok(FilterBank {
            estimates,
            mu,
            transition,
            combined,
            form: CovarianceForm::default(),
        })
    }

    pub fn with_covariance_form(mut self, form: CovarianceForm) -> Self {
        self.form = form;
        self
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn estimates(&self) -> &[Gaussian<N>] {
        &self.estimates
    }

    pub fn mode_probabilities(&self) -> &[f64] {
        &self.mu
    }

    pub fn combined(&self) -> &Gaussian<N> {
        &self.combined
    }

    pub fn transition(&self) -> &TransitionMatrix {
        &self.transition
    }

    /// Mixes the mode estimates according to the Markov chain.
    pub fn interact(&self) -> Result<Interaction<N>> {
        let m = self.len();
        let predicted: Vec<f64> = (0..m)
            .map(|k| (0..m).map(|j| self.transition.get(j, k) * self.mu[j]).sum())
            .collect();
        if predicted.iter().all(|&c| c < PROBABILITY_FLOOR) {
            return Err(Error::DegenerateBank("every predicted mode probability vanished"));
        }
        let mut mixed = Vec::with_capacity(m);
        let mut reinitialized = Vec::new();
        for (k, &ck) in predicted.iter().enumerate() {
            if ck < PROBABILITY_FLOOR {
                mixed.push(self.combined.clone());
                reinitialized.push(k);
                continue;
            }
            let weights: Vec<f64> = (0..m).map(|j| self.transition.get(j, k) * self.mu[j] / ck).collect();
            mixed.push(combine(&self.estimates, &weights));
        }
        Ok(Interaction {
            mixed,
            predicted,
            reinitialized,
        })
    }

    /// One full recursion: interaction, per-mode filtering, probability
    /// update, and combination.
    pub fn step<const M: usize>(
        &mut self,
        models: &[ModeModel<N, M>],
        y: &SVector<f64, M>,
    ) -> Result<StepReport<M>> {
        if models.len() != self.len() {
            return Err(Error::LengthMismatch {
                what: "mode models",
                left: models.len(),
                right: self.len(),
            });
        }
        let interaction = self.interact()?;
        let mut posteriors = Vec::with_capacity(models.len());
        let mut log_likelihoods = Vec::with_capacity(models.len());
        let mut innovations = Vec::with_capacity(models.len());
        for (mixed, model) in interaction.mixed.iter().zip(models) {
            let pred = predict(mixed, &model.transition, &model.input, &model.process_noise)?;
            let res = update(
                &pred,
                y,
                &model.observation,
                &model.feedthrough,
                &model.measurement_noise,
                self.form,
            )?;
            log_likelihoods.push(res.log_density + model.log_bias);
            innovations.push(res.innovation);
            posteriors.push(res.posterior);
        }
        let mu = update_probabilities(&interaction.predicted, &log_likelihoods)?;
        self.combined = combine(&posteriors, &mu);
        self.estimates = posteriors;
        self.mu = mu;
        Ok(StepReport {
            log_likelihoods,
            innovations,
            reinitialized: interaction.reinitialized,
        })
    }
}

/// `μ⁽ᵏ⁾ ∝ c⁽ᵏ⁾ L⁽ᵏ⁾`, evaluated in log space, then floored and renormalized.
pub fn update_probabilities(predicted: &[f64], log_likelihoods: &[f64]) -> Result<Vec<f64>> {
    if predicted.len() != log_likelihoods.len() {
        return Err(Error::LengthMismatch {
            what: "likelihoods",
            left: log_likelihoods.len(),
            right: predicted.len(),
        });
    }
    let logs: Vec<f64> = predicted
        .iter()
        .zip(log_likelihoods)
        .map(|(&c, &l)| if c > 0.0 { c.ln() + l } else { f64::NEG_INFINITY })
        .collect();
    if logs.iter().any(|v| v.is_nan()) {
        return Err(Error::DegenerateBank("likelihood is NaN"));
    }
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::DegenerateBank("every mode likelihood vanished"));
    }
    let mut mu: Vec<f64> = logs.iter().map(|v| (v - peak).exp()).collect();
    let total: f64 = mu.iter().sum();
    for v in &mut mu {
        *v = (*v / total).max(PROBABILITY_FLOOR);
    }
    let total: f64 = mu.iter().sum();
    for v in &mut mu {
        *v /= total;
    }
    Ok(mu)
}

/// Moment-matched mixture of Gaussians with the given weights.
pub fn combine<const N: usize>(estimates: &[Gaussian<N>], weights: &[f64]) -> Gaussian<N> {
    let mean = estimates
        .iter()
        .zip(weights)
        .fold(SVector::<f64, N>::zeros(), |acc, (g, &w)| acc + g.mean * w);
    let cov = estimates
        .iter()
        .zip(weights)
        .fold(SMatrix::<f64, N, N>::zeros(), |acc, (g, &w)| {
            let d = g.mean - mean;
            acc + (g.cov + d * d.transpose()) * w
        });
    Gaussian::new(mean, cov)
}

/// `pᵢ = Σₖ μ⁽ᵏ⁾ δᵢ⁽ᵏ⁾`.
pub fn contact_probabilities(mu: &[f64], modes: &ModeSet) -> [f64; 4] {
    let mut p = [0.0; 4];
    for (m, mode) in mu.iter().zip(modes.modes()) {
        for (leg, pl) in p.iter_mut().enumerate() {
            *pl += m * mode.delta(leg);
        }
    }
    p.map(|v| v.clamp(0.0, 1.0))
}
