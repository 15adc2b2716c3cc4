//! Ratio-form triplet loss, Gaussian-statistics global loss, exact
//! gradients with respect to the embeddings, and the combined objective.
//!
//! All inputs are unit-norm embeddings. Pair distances are squared
//! Euclidean divided by four, which pins them to `[0, 1]`.

use crate::{squared_distance, Error, Result};

/// Guards divisions by pair norms at coincident points.
const GRAD_EPSILON: f64 = 1e-12;

/// Margins and mixing weights for the combined objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Triplet margin `m`.
    pub margin: f64,
    /// Global-loss mean-separation margin `t`.
    pub global_margin: f64,
    /// Weight of the mean-separation hinge inside the global loss.
    pub lambda: f64,
    /// Weight of the global loss in the combined objective.
    pub global_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { margin: 0.2, global_margin: 0.01, lambda: 1.0, global_weight: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::config("triplet margin must be > 0"));
        }
        if self.global_margin < 0.0 || self.lambda < 0.0 || self.global_weight < 0.0 {
            return Err(Error::config("global margin, lambda and global weight must be >= 0"));
        }
        Ok(())
    }
}

/// First and second moments of the matching / non-matching pair distance
/// distributions of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalLossStats {
    pub mu_plus: f64,
    pub mu_minus: f64,
    pub var_plus: f64,
    pub var_minus: f64,
    pub n: usize,
}

/// The three embeddings of one triplet; also reused as the shape of
/// per-triplet gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletVectors {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

impl TripletVectors {
    pub fn new(anchor: Vec<f64>, positive: Vec<f64>, negative: Vec<f64>) -> Self {
        Self { anchor, positive, negative }
    }

    fn zeros(dim: usize) -> Self {
        Self { anchor: vec![0.0; dim], positive: vec![0.0; dim], negative: vec![0.0; dim] }
    }
}

/// Squared Euclidean distance divided by four; in `[0, 1]` for unit inputs.
#[inline]
pub fn pair_distance(f1: &[f64], f2: &[f64]) -> f64 {
    squared_distance(f1, f2) / 4.0
}

/// `max(0, 1 - |fa - fn| / (|fa - fp| + m))` with plain (non-squared)
/// Euclidean norms.
pub fn triplet_loss(fa: &[f64], fp: &[f64], fneg: &[f64], m: f64) -> f64 {
    let d_pos = squared_distance(fa, fp).sqrt();
    let d_neg = squared_distance(fa, fneg).sqrt();
    (1.0 - d_neg / (d_pos + m)).max(0.0)
}

/// Analytic gradient of [`triplet_loss`]. `active` is false exactly when
/// the hinge is disengaged, in which case all gradients are zero.
pub fn triplet_loss_grad(
    fa: &[f64],
    fp: &[f64],
    fneg: &[f64],
    m: f64,
) -> (TripletVectors, bool) {
    let dim = fa.len();
    let sq_pos = squared_distance(fa, fp);
    let sq_neg = squared_distance(fa, fneg);
    let d_pos = sq_pos.sqrt();
    let d_neg = sq_neg.sqrt();
    let loss = 1.0 - d_neg / (d_pos + m);
    if loss <= 0.0 {
        return (TripletVectors::zeros(dim), false);
    }

    // loss = 1 - d_neg * inv, inv = 1/(d_pos + m).
    let inv = 1.0 / (d_pos + m);
    let dl_dneg = -inv;
    let dl_dpos = d_neg * inv * inv;
    // Norm derivatives, epsilon-floored at coincident points.
    let d_pos_eps = (sq_pos + GRAD_EPSILON).sqrt();
    let d_neg_eps = (sq_neg + GRAD_EPSILON).sqrt();

    let mut grads = TripletVectors::zeros(dim);
    for i in 0..dim {
        let diff_pos = (fa[i] - fp[i]) / d_pos_eps;
        let diff_neg = (fa[i] - fneg[i]) / d_neg_eps;
        grads.anchor[i] = dl_dneg * diff_neg + dl_dpos * diff_pos;
        grads.positive[i] = -dl_dpos * diff_pos;
        grads.negative[i] = -dl_dneg * diff_neg;
    }
    (grads, true)
}

fn mean_and_population_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

fn check_distances(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::config(format!("{name} distance set is empty")));
    }
    for &v in values {
        if !(-1e-9..=1.0 + 1e-9).contains(&v) {
            return Err(Error::numeric(format!("{name} distance {v} outside [0, 1]")));
        }
    }
    Ok(())
}

/// `(var_plus + var_minus) + lambda * max(0, mu_plus - mu_minus + t)` over
/// the matching / non-matching distance sets. Variances use the population
/// (divide by N) convention.
pub fn global_loss(
    d_plus: &[f64],
    d_minus: &[f64],
    lambda: f64,
    t: f64,
) -> Result<(f64, GlobalLossStats)> {
    check_distances("matching", d_plus)?;
    check_distances("non-matching", d_minus)?;
    let (mu_plus, var_plus) = mean_and_population_variance(d_plus);
    let (mu_minus, var_minus) = mean_and_population_variance(d_minus);
    let hinge = (mu_plus - mu_minus + t).max(0.0);
    let value = var_plus + var_minus + lambda * hinge;
    let stats = GlobalLossStats { mu_plus, mu_minus, var_plus, var_minus, n: d_plus.len() };
    Ok((value, stats))
}

/// Global loss over a batch of embedded triplets plus its gradient with
/// respect to every embedding.
pub fn global_loss_grad(
    batch: &[TripletVectors],
    lambda: f64,
    t: f64,
) -> Result<(f64, GlobalLossStats, Vec<TripletVectors>)> {
    if batch.is_empty() {
        return Err(Error::config("global loss needs a non-empty batch"));
    }
    let d_plus: Vec<f64> =
        batch.iter().map(|tv| pair_distance(&tv.anchor, &tv.positive)).collect();
    let d_minus: Vec<f64> =
        batch.iter().map(|tv| pair_distance(&tv.anchor, &tv.negative)).collect();
    let (value, stats) = global_loss(&d_plus, &d_minus, lambda, t)?;

    let n = batch.len() as f64;
    let hinge_active = stats.mu_plus - stats.mu_minus + t > 0.0;
    let hinge_term = if hinge_active { lambda / n } else { 0.0 };

    let dim = batch[0].anchor.len();
    let mut grads = Vec::with_capacity(batch.len());
    for (i, tv) in batch.iter().enumerate() {
        // dJ/dd_i+ = 2(d_i+ - mu+)/N + lambda/N on the active hinge;
        // the mean's own dependence cancels inside the variance term.
        let dj_dplus = 2.0 * (d_plus[i] - stats.mu_plus) / n + hinge_term;
        let dj_dminus = 2.0 * (d_minus[i] - stats.mu_minus) / n - hinge_term;
        let mut g = TripletVectors::zeros(dim);
        for c in 0..dim {
            // d(pair_distance)/d(anchor) = (anchor - other) / 2.
            let diff_pos = (tv.anchor[c] - tv.positive[c]) / 2.0;
            let diff_neg = (tv.anchor[c] - tv.negative[c]) / 2.0;
            g.anchor[c] = dj_dplus * diff_pos + dj_dminus * diff_neg;
            g.positive[c] = -dj_dplus * diff_pos;
            g.negative[c] = -dj_dminus * diff_neg;
        }
        grads.push(g);
    }
    Ok((value, stats, grads))
}

/// Combined objective over one batch and its gradients.
#[derive(Debug, Clone)]
pub struct CombinedLoss {
    pub total: f64,
    pub triplet_mean: f64,
    pub global_value: f64,
    pub stats: GlobalLossStats,
    /// Per-triplet Eq.-style ratio losses, used for the training-error
    /// signal.
    pub per_triplet_losses: Vec<f64>,
    /// Gradient of `total` with respect to each embedding in the batch.
    pub grads: Vec<TripletVectors>,
}

/// Mean triplet loss plus `global_weight` times the global loss of the
/// batch's distance sets; the gradient is the sum of both parts.
pub fn combined_loss(batch: &[TripletVectors], config: &LossConfig) -> Result<CombinedLoss> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::config("combined loss needs a non-empty batch"));
    }
    let n = batch.len() as f64;
    let mut per_triplet_losses = Vec::with_capacity(batch.len());
    let mut grads = Vec::with_capacity(batch.len());
    let mut triplet_sum = 0.0;
    for tv in batch {
        let loss = triplet_loss(&tv.anchor, &tv.positive, &tv.negative, config.margin);
        let (mut g, _active) = triplet_loss_grad(&tv.anchor, &tv.positive, &tv.negative, config.margin);
        for v in g.anchor.iter_mut().chain(&mut g.positive).chain(&mut g.negative) {
            *v /= n;
        }
        triplet_sum += loss;
        per_triplet_losses.push(loss);
        grads.push(g);
    }
    let triplet_mean = triplet_sum / n;

    let (global_value, stats, global_grads) =
        global_loss_grad(batch, config.lambda, config.global_margin)?;
    if config.global_weight != 0.0 {
        for (g, gg) in grads.iter_mut().zip(&global_grads) {
            for (a, b) in g.anchor.iter_mut().zip(&gg.anchor) {
                *a += config.global_weight * b;
            }
            for (a, b) in g.positive.iter_mut().zip(&gg.positive) {
                *a += config.global_weight * b;
            }
            for (a, b) in g.negative.iter_mut().zip(&gg.negative) {
                *a += config.global_weight * b;
            }
        }
    }

    Ok(CombinedLoss {
        total: triplet_mean + config.global_weight * global_value,
        triplet_mean,
        global_value,
        stats,
        per_triplet_losses,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if v.iter().map(|x| x * x).sum::<f64>() > 1e-3 {
                return unit(v);
            }
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, size: usize, dim: usize) -> Vec<TripletVectors> {
        (0..size)
            .map(|_| {
                TripletVectors::new(
                    random_unit(rng, dim),
                    random_unit(rng, dim),
                    random_unit(rng, dim),
                )
            })
            .collect()
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    /// Central finite differences of a scalar function of one flattened
    /// batch.
    fn numeric_batch_grad<F: Fn(&[TripletVectors]) -> f64>(
        batch: &[TripletVectors],
        f: F,
        h: f64,
    ) -> Vec<TripletVectors> {
        let mut out = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            let dim = batch[i].anchor.len();
            let mut g = TripletVectors::zeros(dim);
            for part in 0..3 {
                for c in 0..dim {
                    let mut plus = batch.to_vec();
                    let mut minus = batch.to_vec();
                    let (p, m) = match part {
                        0 => (&mut plus[i].anchor, &mut minus[i].anchor),
                        1 => (&mut plus[i].positive, &mut minus[i].positive),
                        _ => (&mut plus[i].negative, &mut minus[i].negative),
                    };
                    p[c] += h;
                    m[c] -= h;
                    let d = (f(&plus) - f(&minus)) / (2.0 * h);
                    match part {
                        0 => g.anchor[c] = d,
                        1 => g.positive[c] = d,
                        _ => g.negative[c] = d,
                    }
                }
            }
            out.push(g);
        }
        out
    }

    fn assert_grads_close(analytic: &[TripletVectors], numeric: &[TripletVectors], tol: f64) {
        for (a, n) in analytic.iter().zip(numeric) {
            for (x, y) in a
                .anchor
                .iter()
                .chain(&a.positive)
                .chain(&a.negative)
                .zip(n.anchor.iter().chain(&n.positive).chain(&n.negative))
            {
                if y.abs() > 1e-7 {
                    assert!(relative_error(*x, *y) < tol, "grad mismatch {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn pair_distance_fixed_points() {
        let f1 = unit(vec![1.0, 0.0, 0.0]);
        assert_eq!(pair_distance(&f1, &f1), 0.0);
        let anti: Vec<f64> = f1.iter().map(|v| -v).collect();
        assert!((pair_distance(&f1, &anti) - 1.0).abs() < 1e-15);
        let f2 = unit(vec![0.0, 1.0, 0.0]);
        assert!((pair_distance(&f1, &f2) - 0.5).abs() < 1e-15);
        assert_eq!(pair_distance(&f1, &f2), pair_distance(&f2, &f1));
    }

    #[test]
    fn triplet_loss_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fa = random_unit(&mut rng, 4);
        let fp = random_unit(&mut rng, 4);
        // Negative equal to the anchor: numerator distance 0 -> loss 1.
        assert_eq!(triplet_loss(&fa, &fp, &fa, 0.2), 1.0);
        // fp = fa and |fa - fn| = m sits exactly on the hinge boundary.
        let m = 0.37;
        let mut fneg = fa.clone();
        // Rotate fa slightly in a 2-plane to a point at Euclidean distance m.
        let theta: f64 = 2.0 * (m / 2.0f64).asin();
        let (c, s) = (theta.cos(), theta.sin());
        let orth = {
            // Gram-Schmidt an arbitrary direction against fa.
            let mut v = vec![1.0, 0.0, 0.0, 0.0];
            let dot: f64 = v.iter().zip(&fa).map(|(a, b)| a * b).sum();
            for (vi, ai) in v.iter_mut().zip(&fa) {
                *vi -= dot * ai;
            }
            unit(v)
        };
        for i in 0..4 {
            fneg[i] = c * fa[i] + s * orth[i];
        }
        let d = squared_distance(&fa, &fneg).sqrt();
        assert!((d - m).abs() < 1e-12);
        assert!(triplet_loss(&fa, &fa, &fneg, m).abs() < 1e-12);
    }

    #[test]
    fn triplet_loss_hand_example() {
        // |fa-fp| = 0.3, |fa-fn| = 0.4, m = 0.2 -> 1 - 0.4/0.5 = 0.2.
        let fa = vec![1.0, 0.0];
        let fp = vec![1.0, 0.3];
        let fneg = vec![1.0, -0.4];
        assert!((triplet_loss(&fa, &fp, &fneg, 0.2) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn triplet_loss_in_unit_interval_for_unit_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let fa = random_unit(&mut rng, 6);
            let fp = random_unit(&mut rng, 6);
            let fneg = random_unit(&mut rng, 6);
            let l = triplet_loss(&fa, &fp, &fneg, 0.2);
            assert!((0.0..=1.0).contains(&l));
        }
    }

    #[test]
    fn triplet_grad_inactive_hinge_is_zero_and_flagged() {
        // Negative far away, positive equal to anchor: loss 0.
        let fa = unit(vec![1.0, 0.0, 0.0]);
        let fneg: Vec<f64> = fa.iter().map(|v| -v).collect();
        let (g, active) = triplet_loss_grad(&fa, &fa, &fneg, 0.2);
        assert!(!active);
        assert!(g.anchor.iter().chain(&g.positive).chain(&g.negative).all(|&v| v == 0.0));
    }

    #[test]
    fn triplet_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 0.2;
        let mut checked = 0;
        while checked < 100 {
            let batch = random_batch(&mut rng, 1, 5);
            let tv = &batch[0];
            let loss = triplet_loss(&tv.anchor, &tv.positive, &tv.negative, m);
            // Stay away from the kink where finite differences are invalid.
            if loss < 1e-3 {
                continue;
            }
            let (g, active) = triplet_loss_grad(&tv.anchor, &tv.positive, &tv.negative, m);
            assert!(active);
            let numeric = numeric_batch_grad(
                &batch,
                |b| triplet_loss(&b[0].anchor, &b[0].positive, &b[0].negative, m),
                1e-5,
            );
            assert_grads_close(&[g], &numeric, 1e-5);
            checked += 1;
        }
    }

    #[test]
    fn triplet_grad_descent_step_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = 0.2;
        for _ in 0..20 {
            let batch = random_batch(&mut rng, 1, 5);
            let tv = &batch[0];
            let before = triplet_loss(&tv.anchor, &tv.positive, &tv.negative, m);
            if before < 1e-3 {
                continue;
            }
            let (g, _) = triplet_loss_grad(&tv.anchor, &tv.positive, &tv.negative, m);
            let step = 1e-3;
            let fa: Vec<f64> =
                tv.anchor.iter().zip(&g.anchor).map(|(v, gr)| v - step * gr).collect();
            let fp: Vec<f64> =
                tv.positive.iter().zip(&g.positive).map(|(v, gr)| v - step * gr).collect();
            let fneg: Vec<f64> =
                tv.negative.iter().zip(&g.negative).map(|(v, gr)| v - step * gr).collect();
            assert!(triplet_loss(&fa, &fp, &fneg, m) < before);
        }
    }

    #[test]
    fn global_loss_zero_variance_inactive_hinge() {
        let (v, stats) = global_loss(&[0.1, 0.1], &[0.2, 0.2], 1.0, 0.01).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(stats.mu_plus, 0.1);
        assert_eq!(stats.mu_minus, 0.2);
    }

    #[test]
    fn global_loss_hand_example() {
        let (v, _) = global_loss(&[0.1, 0.3], &[0.2, 0.4], 1.0, 0.2).unwrap();
        assert!((v - 0.12).abs() < 1e-15);
    }

    #[test]
    fn global_loss_rejects_empty_sets() {
        assert!(global_loss(&[], &[0.1], 1.0, 0.01).is_err());
        assert!(global_loss(&[0.1], &[], 1.0, 0.01).is_err());
    }

    #[test]
    fn global_loss_invariant_to_permutation() {
        let d_plus = [0.1, 0.4, 0.2];
        let d_minus = [0.5, 0.3, 0.9, 0.6];
        let (a, _) = global_loss(&d_plus, &d_minus, 1.3, 0.05).unwrap();
        let (b, _) = global_loss(&[0.2, 0.1, 0.4], &[0.9, 0.6, 0.5, 0.3], 1.3, 0.05).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn global_grad_zero_at_stationary_point() {
        // All matching distances equal, all non-matching equal, hinge
        // inactive: every gradient is exactly zero.
        let e1 = unit(vec![1.0, 0.0, 0.0]);
        let e2 = unit(vec![0.0, 1.0, 0.0]);
        let e3 = unit(vec![0.0, 0.0, 1.0]);
        // anchor == positive so d+ = 0 for both triplets; both negatives
        // orthogonal so d- = 0.5 for both; hinge 0 - 0.5 + t < 0 for small t.
        let batch = vec![
            TripletVectors::new(e1.clone(), e1.clone(), e2.clone()),
            TripletVectors::new(e3.clone(), e3.clone(), e1.clone()),
        ];
        let (v, _, grads) = global_loss_grad(&batch, 1.0, 0.01).unwrap();
        assert_eq!(v, 0.0);
        for g in grads {
            assert!(g.anchor.iter().chain(&g.positive).chain(&g.negative).all(|&x| x == 0.0));
        }
    }

    #[test]
    fn global_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..15 {
            let batch = random_batch(&mut rng, 8, 4);
            let (_, _, analytic) = global_loss_grad(&batch, 1.2, 0.1).unwrap();
            let numeric = numeric_batch_grad(
                &batch,
                |b| global_loss_grad(b, 1.2, 0.1).unwrap().0,
                1e-5,
            );
            assert_grads_close(&analytic, &numeric, 1e-5);
        }
    }

    #[test]
    fn global_grad_lambda_scaling_is_linear_in_hinge_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // Force an active hinge: positives far, negatives near.
        let batch: Vec<TripletVectors> = (0..6)
            .map(|_| {
                let a = random_unit(&mut rng, 4);
                let p: Vec<f64> = a.iter().map(|v| -v).collect();
                let n = a.iter().zip(p.iter()).map(|(x, y)| (x + y) / 2.0 + 0.01).collect();
                TripletVectors::new(a, p, unit(n))
            })
            .collect();
        let (_, s1, g1) = global_loss_grad(&batch, 1.0, 0.2).unwrap();
        assert!(s1.mu_plus - s1.mu_minus + 0.2 > 0.0, "hinge must be active");
        let (_, _, g2) = global_loss_grad(&batch, 2.0, 0.2).unwrap();
        let (_, _, g0) = global_loss_grad(&batch, 0.0, 0.2).unwrap();
        for i in 0..batch.len() {
            for c in 0..4 {
                // g(lambda=2) - g(0) = 2 * (g(lambda=1) - g(0)).
                let hinge1 = g1[i].anchor[c] - g0[i].anchor[c];
                let hinge2 = g2[i].anchor[c] - g0[i].anchor[c];
                assert!((hinge2 - 2.0 * hinge1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn combined_with_zero_global_weight_is_mean_triplet_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batch = random_batch(&mut rng, 5, 4);
        let cfg = LossConfig { global_weight: 0.0, ..LossConfig::default() };
        let out = combined_loss(&batch, &cfg).unwrap();
        let mean: f64 = batch
            .iter()
            .map(|tv| triplet_loss(&tv.anchor, &tv.positive, &tv.negative, cfg.margin))
            .sum::<f64>()
            / batch.len() as f64;
        assert!((out.total - mean).abs() < 1e-15);
    }

    #[test]
    fn combined_single_triplet_hand_value() {
        // One triplet: variances are zero by construction, so the combined
        // value is the triplet loss plus lambda * hinge of that pair.
        let e1 = unit(vec![1.0, 0.0, 0.0]);
        let e2 = unit(vec![0.0, 1.0, 0.0]);
        let e3 = unit(vec![1.0, 0.2, 0.0]);
        let batch = vec![TripletVectors::new(e1.clone(), e3.clone(), e2.clone())];
        let cfg = LossConfig::default();
        let out = combined_loss(&batch, &cfg).unwrap();
        let t = triplet_loss(&e1, &e3, &e2, cfg.margin);
        let d_plus = pair_distance(&e1, &e3);
        let d_minus = pair_distance(&e1, &e2);
        let expected = t + cfg.lambda * (d_plus - d_minus + cfg.global_margin).max(0.0);
        assert!((out.total - expected).abs() < 1e-15);
    }

    #[test]
    fn combined_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = LossConfig::default();
        for _ in 0..10 {
            let batch = random_batch(&mut rng, 6, 4);
            let out = combined_loss(&batch, &cfg).unwrap();
            // Skip configurations near a hinge kink in any triplet.
            if out.per_triplet_losses.iter().any(|&l| l < 1e-3) {
                continue;
            }
            let numeric =
                numeric_batch_grad(&batch, |b| combined_loss(b, &cfg).unwrap().total, 1e-5);
            assert_grads_close(&out.grads, &numeric, 1e-5);
        }
    }
}
