//! Adaptive scale controller: a least-squares affine map from recent
//! training errors to the exclusion-boundary scale kappa, queried with a
//! fixed target error at the start of every epoch.
//!
//! During the warmup epochs mining is disabled, so the controller just
//! emits its initial kappa. When mining starts it seeds the history with
//! one synthetic anchor pair (error 1.0 at the initial kappa), then each
//! epoch records (previous error, kappa used), refits and predicts at the
//! target. While the recorded kappas carry no variation a least-squares
//! fit is flat by construction, so the controller instead takes a
//! doubling/halving step toward the target, which both corrects the error
//! and makes the next fit identifiable.

use std::collections::VecDeque;

use crate::{Error, Result};

/// Error distance from target below which the first least-squares fit
/// takes over from the acquisition steps.
const ACQUISITION_TOLERANCE: f64 = 0.1;

/// Acquisition steps allowed before the least-squares model takes over
/// regardless; three doubling/halving steps bracket the useful kappa
/// range.
const MAX_ACQUISITION_STEPS: usize = 3;

/// Controller settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    /// Target training error queried each epoch.
    pub e_target: f64,
    /// Maximum history length.
    pub window: usize,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub kappa_initial: f64,
    /// Epochs (1-based, inclusive) that train on random triplets only.
    pub warmup_epochs: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            e_target: 0.6,
            window: 8,
            kappa_min: 0.5,
            kappa_max: 64.0,
            kappa_initial: 16.0,
            warmup_epochs: 2,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.e_target && self.e_target < 1.0) {
            return Err(Error::config("e_target must be in (0, 1)"));
        }
        if self.window < 2 {
            return Err(Error::config("controller window must be at least 2"));
        }
        if !(0.0 < self.kappa_min && self.kappa_min <= self.kappa_max) {
            return Err(Error::config("kappa bounds must satisfy 0 < min <= max"));
        }
        if !(self.kappa_min..=self.kappa_max).contains(&self.kappa_initial) {
            return Err(Error::config("kappa_initial must lie within the kappa bounds"));
        }
        Ok(())
    }
}

/// Least-squares solution of `kappa = alpha * e + beta` over the history,
/// via the centered covariance form.
pub fn fit(history: &[(f64, f64)]) -> Result<(f64, f64)> {
    if history.len() < 2 {
        return Err(Error::config("fit needs at least two history points"));
    }
    let n = history.len() as f64;
    let mean_e = history.iter().map(|&(e, _)| e).sum::<f64>() / n;
    let mean_k = history.iter().map(|&(_, k)| k).sum::<f64>() / n;
    let var_e: f64 = history.iter().map(|&(e, _)| (e - mean_e) * (e - mean_e)).sum();
    if var_e < 1e-15 {
        return Err(Error::DegenerateFit);
    }
    let cov: f64 = history.iter().map(|&(e, k)| (e - mean_e) * (k - mean_k)).sum();
    let alpha = cov / var_e;
    let beta = mean_k - alpha * mean_e;
    if !alpha.is_finite() || !beta.is_finite() {
        return Err(Error::numeric("non-finite controller fit"));
    }
    Ok((alpha, beta))
}

/// `alpha * e_target + beta`, clamped to the kappa bounds.
pub fn predict(alpha: f64, beta: f64, e_target: f64, bounds: (f64, f64)) -> f64 {
    (alpha * e_target + beta).clamp(bounds.0, bounds.1)
}

/// One epoch of controller output, for the trace file. Alpha and beta are
/// NaN until the first fit; equality is bitwise so such rows still compare
/// equal.
#[derive(Debug, Clone, Copy)]
pub struct ControllerTrace {
    pub epoch: usize,
    pub observed_error: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl PartialEq for ControllerTrace {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.observed_error.to_bits() == other.observed_error.to_bits()
            && self.alpha.to_bits() == other.alpha.to_bits()
            && self.beta.to_bits() == other.beta.to_bits()
            && self.kappa.to_bits() == other.kappa.to_bits()
    }
}

/// History of (training error, kappa) pairs and the fitted affine model.
#[derive(Debug, Clone)]
pub struct KappaController {
    config: ControllerConfig,
    history: VecDeque<(f64, f64)>,
    alpha: f64,
    beta: f64,
    has_fit: bool,
    acquisition_steps: usize,
    last_kappa: f64,
}

impl KappaController {
    pub fn new(config: ControllerConfig) -> Result<Self> {
        config.validate()?;
        let last_kappa = config.kappa_initial;
        Ok(Self {
            config,
            history: VecDeque::new(),
            alpha: 0.0,
            beta: 0.0,
            has_fit: false,
            acquisition_steps: 0,
            last_kappa,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn history(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.history.iter().copied()
    }

    /// Fitted (alpha, beta), once a fit has happened.
    pub fn model(&self) -> Option<(f64, f64)> {
        self.has_fit.then_some((self.alpha, self.beta))
    }

    pub fn last_kappa(&self) -> f64 {
        self.last_kappa
    }

    /// Records a history pair directly, trimming to the window. Normally
    /// driven by [`KappaController::advance`].
    pub fn record(&mut self, error: f64, kappa: f64) {
        self.history.push_back((error, kappa));
        while self.history.len() > self.config.window {
            self.history.pop_front();
        }
    }

    /// Kappa for the epoch that is about to start. `observed_error` is the
    /// training error of the previous epoch; `epoch` is 1-based.
    ///
    /// Warmup epochs emit the initial kappa without touching the history.
    /// The first mining epoch seeds the history with the synthetic pair
    /// `(1.0, kappa_min)`; warmup errors come from purely random batches
    /// and never enter the fit. Later epochs record the previous pair,
    /// refit and predict at the target error. A degenerate fit keeps the
    /// previous kappa.
    pub fn advance(&mut self, observed_error: f64, epoch: usize) -> Result<f64> {
        if epoch == 0 {
            return Err(Error::config("epoch indices are 1-based"));
        }
        if epoch <= self.config.warmup_epochs {
            self.last_kappa = self.config.kappa_initial;
            return Ok(self.last_kappa);
        }
        if epoch == self.config.warmup_epochs + 1 {
            // Synthetic anchor: total training error belongs to the
            // hardest boundary scale. Seeding the maximum error at the
            // lower kappa bound keeps the fitted slope pointed the right
            // way once real pairs arrive.
            self.record(1.0, self.config.kappa_min);
        } else {
            self.record(observed_error, self.last_kappa);
        }

        let bounds = (self.config.kappa_min, self.config.kappa_max);
        let kappas: Vec<f64> = self.history.iter().map(|&(_, k)| k).collect();
        let k_spread = kappas.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - kappas.iter().cloned().fold(f64::INFINITY, f64::min);
        let acquiring = !self.has_fit
            && self.acquisition_steps < MAX_ACQUISITION_STEPS
            && (observed_error - self.config.e_target).abs() > ACQUISITION_TOLERANCE;
        if self.history.len() < 2 || k_spread < 1e-12 || acquiring {
            // Acquisition: while no informative fit exists (no kappa
            // variation, or the error is still far from target before the
            // first fit), take a doubling/halving step toward the target.
            // The steps also spread the recorded kappas, which is what
            // makes the least-squares model identifiable.
            let factor = if observed_error > self.config.e_target { 2.0 } else { 0.5 };
            self.last_kappa = (self.last_kappa * factor).clamp(bounds.0, bounds.1);
            self.acquisition_steps += 1;
            return Ok(self.last_kappa);
        }

        let pairs: Vec<(f64, f64)> = self.history.iter().copied().collect();
        match fit(&pairs) {
            Ok((alpha, beta)) => {
                self.alpha = alpha;
                self.beta = beta;
                self.has_fit = true;
                self.last_kappa = predict(alpha, beta, self.config.e_target, bounds);
            }
            Err(Error::DegenerateFit) => {
                // All recorded errors identical: hold the previous kappa.
            }
            Err(e) => return Err(e),
        }
        Ok(self.last_kappa)
    }
}
