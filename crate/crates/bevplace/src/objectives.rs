//! Training objectives: triplet margin loss over place descriptors with
//! batch-hard mining, and a yaw classification loss over the correlation
//! distribution. The joint objective weights yaw at 0.001 so metric
//! learning dominates.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("anchors, positives and negatives have lengths {0}, {1}, {2}")]
    BatchLengthMismatch(usize, usize, usize),
    #[error("triplet {index} mixes feature dimensions")]
    DimensionMismatch { index: usize },
    #[error("features and margins must be finite, margin non-negative")]
    NonFinite,
    #[error("mining radii must satisfy 0 < positive <= negative")]
    BadRadii,
    #[error("yaw distribution must be non-negative and sum to 1 (got sum {0})")]
    BadDistribution(f64),
    #[error("target bin {bin} out of range for {bins} bins")]
    TargetOutOfRange { bin: usize, bins: usize },
}

/// Weight of the yaw term inside [`joint_loss`].
pub const YAW_LOSS_WEIGHT: f64 = 1e-3;

/// Probabilities below this floor are clamped before the log in
/// [`kld_yaw_loss`] so an empty bin cannot produce an infinite loss.
pub const YAW_PROB_FLOOR: f64 = 1e-12;

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn check_batch(
    anchors: &[Vec<f64>],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    margin: f64,
) -> Result<(), ObjectiveError> {
    if anchors.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    if anchors.len() != positives.len() || anchors.len() != negatives.len() {
        return Err(ObjectiveError::BatchLengthMismatch(
            anchors.len(),
            positives.len(),
            negatives.len(),
        ));
    }
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(ObjectiveError::NonFinite);
    }
    for (index, ((a, p), n)) in anchors.iter().zip(positives).zip(negatives).enumerate() {
        if a.len() != p.len() || a.len() != n.len() || a.is_empty() {
            return Err(ObjectiveError::DimensionMismatch { index });
        }
        let finite = a.iter().chain(p).chain(n).all(|v| v.is_finite());
        if !finite {
            return Err(ObjectiveError::NonFinite);
        }
    }
    Ok(())
}

/// Batch mean of `max(0, d(a, p) - d(a, n) + margin)` with Euclidean
/// distances.
pub fn triplet_margin_loss(
    anchors: &[Vec<f64>],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    margin: f64,
) -> Result<f64, ObjectiveError> {
    check_batch(anchors, positives, negatives, margin)?;
    let total: f64 = anchors
        .iter()
        .zip(positives)
        .zip(negatives)
        .map(|((a, p), n)| (euclid(a, p) - euclid(a, n) + margin).max(0.0))
        .sum();
    Ok(total / anchors.len() as f64)
}

/// Loss plus subgradients with respect to every anchor, positive and
/// negative feature, batch-mean scaled.
#[derive(Debug, Clone)]
pub struct TripletGradients {
    pub loss: f64,
    pub anchors: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
}

/// Analytic subgradient of [`triplet_margin_loss`]. Inactive hinges
/// contribute zero; a coincident pair (zero distance) also contributes zero
/// for its difference term, the standard subgradient choice at the kink.
pub fn triplet_margin_loss_grad(
    anchors: &[Vec<f64>],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    margin: f64,
) -> Result<TripletGradients, ObjectiveError> {
    check_batch(anchors, positives, negatives, margin)?;
    let batch = anchors.len() as f64;
    let mut grads = TripletGradients {
        loss: 0.0,
        anchors: anchors.iter().map(|a| vec![0.0; a.len()]).collect(),
        positives: positives.iter().map(|p| vec![0.0; p.len()]).collect(),
        negatives: negatives.iter().map(|n| vec![0.0; n.len()]).collect(),
    };
    for (index, ((a, p), n)) in anchors.iter().zip(positives).zip(negatives).enumerate() {
        let d_ap = euclid(a, p);
        let d_an = euclid(a, n);
        let hinge = d_ap - d_an + margin;
        if hinge <= 0.0 {
            continue;
        }
        grads.loss += hinge / batch;
        for c in 0..a.len() {
            let mut ga = 0.0;
            if d_ap > 0.0 {
                let up = (a[c] - p[c]) / d_ap;
                ga += up;
                grads.positives[index][c] += -up / batch;
            }
            if d_an > 0.0 {
                let un = (a[c] - n[c]) / d_an;
                ga -= un;
                grads.negatives[index][c] += un / batch;
            }
            grads.anchors[index][c] += ga / batch;
        }
    }
    Ok(grads)
}

/// A descriptor with the planar position it was captured at.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub feature: Vec<f64>,
    pub position: (f64, f64),
}

/// Distance thresholds for mining: samples within `positive_radius` meters
/// of the anchor count as the same place, samples beyond `negative_radius`
/// as different places; the band in between is ignored.
#[derive(Debug, Clone, Copy)]
pub struct MiningConfig {
    pub positive_radius: f64,
    pub negative_radius: f64,
    pub margin: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            positive_radius: 2.0,
            negative_radius: 3.0,
            margin: 0.2,
        }
    }
}

/// Indices into the sample slice that was mined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone)]
pub struct MinedBatch {
    pub triplets: Vec<Triplet>,
    /// Anchors with no positive or no negative candidate in the batch.
    pub skipped: usize,
}

/// Batch-hard mining: every sample anchors one candidate triplet built from
/// its most distant positive and closest negative in feature space (ties
/// break to the lowest index). Anchors lacking a positive or negative are
/// counted in `skipped`; triplets whose hinge is already zero are dropped.
pub fn batch_hard_mine(
    samples: &[TrainingSample],
    config: &MiningConfig,
) -> Result<MinedBatch, ObjectiveError> {
    if samples.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    let ok = config.positive_radius > 0.0
        && config.positive_radius <= config.negative_radius
        && config.negative_radius.is_finite();
    if !ok {
        return Err(ObjectiveError::BadRadii);
    }
    if !(config.margin.is_finite() && config.margin >= 0.0) {
        return Err(ObjectiveError::NonFinite);
    }
    let dim = samples[0].feature.len();
    for (index, s) in samples.iter().enumerate() {
        if s.feature.len() != dim || dim == 0 {
            return Err(ObjectiveError::DimensionMismatch { index });
        }
        let finite = s.feature.iter().all(|v| v.is_finite())
            && s.position.0.is_finite()
            && s.position.1.is_finite();
        if !finite {
            return Err(ObjectiveError::NonFinite);
        }
    }
    let planar = |a: &TrainingSample, b: &TrainingSample| {
        let dx = a.position.0 - b.position.0;
        let dy = a.position.1 - b.position.1;
        dx.hypot(dy)
    };
    let mut batch = MinedBatch {
        triplets: Vec::new(),
        skipped: 0,
    };
    for (i, anchor) in samples.iter().enumerate() {
        let mut hardest_pos: Option<(f64, usize)> = None;
        let mut hardest_neg: Option<(f64, usize)> = None;
        for (j, other) in samples.iter().enumerate() {
            let geo = planar(anchor, other);
            if j != i && geo <= config.positive_radius {
                let d = euclid(&anchor.feature, &other.feature);
                let better = match hardest_pos {
                    None => true,
                    Some((best, _)) => d > best,
                };
                if better {
                    hardest_pos = Some((d, j));
                }
            } else if geo > config.negative_radius {
                let d = euclid(&anchor.feature, &other.feature);
                let better = match hardest_neg {
                    None => true,
                    Some((best, _)) => d < best,
                };
                if better {
                    hardest_neg = Some((d, j));
                }
            }
        }
        match (hardest_pos, hardest_neg) {
            (Some((d_ap, positive)), Some((d_an, negative))) => {
                if d_ap - d_an + config.margin > 0.0 {
                    batch.triplets.push(Triplet {
                        anchor: i,
                        positive,
                        negative,
                    });
                }
            }
            _ => batch.skipped += 1,
        }
    }
    Ok(batch)
}

/// Negative log-likelihood of the correct yaw bin under the correlation
/// distribution, floored at [`YAW_PROB_FLOOR`]. For a one-hot target this
/// equals the KL divergence from the predicted distribution.
pub fn kld_yaw_loss(distribution: &[f64], target_bin: usize) -> Result<f64, ObjectiveError> {
    if distribution.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    if target_bin >= distribution.len() {
        return Err(ObjectiveError::TargetOutOfRange {
            bin: target_bin,
            bins: distribution.len(),
        });
    }
    let sum: f64 = distribution.iter().sum();
    let valid = distribution.iter().all(|p| p.is_finite() && *p >= 0.0) && (sum - 1.0).abs() < 1e-6;
    if !valid {
        return Err(ObjectiveError::BadDistribution(sum));
    }
    Ok(-(distribution[target_bin].max(YAW_PROB_FLOOR)).ln())
}

/// Joint objective: `place_loss + 0.001 * yaw_loss`.
pub fn joint_loss(place_loss: f64, yaw_loss: f64) -> f64 {
    place_loss + YAW_LOSS_WEIGHT * yaw_loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_feature(rng: &mut StdRng, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn hand_example_picks_hardest_pair_and_scores_point_three() {
        // 1-D features around an anchor at 0: positives at distances 0.1 and
        // 0.4, negatives at 0.3 and 0.9. Hardest positive is 0.4, hardest
        // negative 0.3, so the anchor's triplet loss is 0.4 - 0.3 + 0.2.
        let samples = vec![
            TrainingSample { feature: vec![0.0], position: (0.0, 0.0) },
            TrainingSample { feature: vec![0.1], position: (1.0, 0.0) },
            TrainingSample { feature: vec![0.4], position: (0.0, 1.5) },
            TrainingSample { feature: vec![0.3], position: (10.0, 0.0) },
            TrainingSample { feature: vec![0.9], position: (0.0, 12.0) },
        ];
        let batch = batch_hard_mine(&samples, &MiningConfig::default()).unwrap();
        let anchor0 = batch
            .triplets
            .iter()
            .find(|t| t.anchor == 0)
            .expect("anchor 0 must yield a triplet");
        assert_eq!((anchor0.positive, anchor0.negative), (2, 3));
        let loss = triplet_margin_loss(
            &[samples[0].feature.clone()],
            &[samples[anchor0.positive].feature.clone()],
            &[samples[anchor0.negative].feature.clone()],
            0.2,
        )
        .unwrap();
        assert!((loss - 0.3).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn loss_is_the_batch_mean_of_hinges() {
        // Triplet losses 0.7 (active) and 0.0 (inactive): mean 0.35.
        let anchors = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let positives = vec![vec![1.0, 0.0], vec![0.1, 0.0]];
        let negatives = vec![vec![0.5, 0.0], vec![3.0, 0.0]];
        let loss = triplet_margin_loss(&anchors, &positives, &negatives, 0.2).unwrap();
        assert!((loss - 0.35).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn mining_matches_exhaustive_search() {
        let mut rng = StdRng::seed_from_u64(11);
        let config = MiningConfig::default();
        for _ in 0..20 {
            let samples: Vec<TrainingSample> = (0..30)
                .map(|_| TrainingSample {
                    feature: random_feature(&mut rng, 6),
                    position: (rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)),
                })
                .collect();
            let batch = batch_hard_mine(&samples, &config).unwrap();
            let euclid = |a: &[f64], b: &[f64]| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            };
            let mut expected = Vec::new();
            let mut skipped = 0;
            for i in 0..samples.len() {
                let mut best_pos: Option<(f64, usize)> = None;
                let mut best_neg: Option<(f64, usize)> = None;
                for j in 0..samples.len() {
                    let dx = samples[i].position.0 - samples[j].position.0;
                    let dy = samples[i].position.1 - samples[j].position.1;
                    let geo = dx.hypot(dy);
                    let feat = euclid(&samples[i].feature, &samples[j].feature);
                    if j != i && geo <= config.positive_radius {
                        if best_pos.map_or(true, |(d, _)| feat > d) {
                            best_pos = Some((feat, j));
                        }
                    }
                    if geo > config.negative_radius {
                        if best_neg.map_or(true, |(d, _)| feat < d) {
                            best_neg = Some((feat, j));
                        }
                    }
                }
                if let (Some((dp, p)), Some((dn, n))) = (best_pos, best_neg) {
                    if dp - dn + config.margin > 0.0 {
                        expected.push(Triplet { anchor: i, positive: p, negative: n });
                    }
                } else {
                    skipped += 1;
                }
            }
            assert_eq!(batch.triplets, expected);
            assert_eq!(batch.skipped, skipped);
        }
    }

    #[test]
    fn mining_ties_break_to_the_lowest_index() {
        // Two positives at identical feature distance; index 1 must win.
        let samples = vec![
            TrainingSample { feature: vec![0.0], position: (0.0, 0.0) },
            TrainingSample { feature: vec![0.5], position: (1.0, 0.0) },
            TrainingSample { feature: vec![-0.5], position: (0.0, 1.0) },
            TrainingSample { feature: vec![0.4], position: (10.0, 0.0) },
        ];
        let batch = batch_hard_mine(&samples, &MiningConfig::default()).unwrap();
        let anchor0 = batch.triplets.iter().find(|t| t.anchor == 0).unwrap();
        assert_eq!(anchor0.positive, 1);
    }

    #[test]
    fn easy_triplets_are_dropped_and_lonely_anchors_counted() {
        // Sample 3 sits isolated (no positive within 2 m): skipped. Sample 0
        // and 1 are mutual positives whose negatives are much farther in
        // feature space than each other: hinge zero, dropped.
        let samples = vec![
            TrainingSample { feature: vec![0.00], position: (0.0, 0.0) },
            TrainingSample { feature: vec![0.01], position: (1.0, 0.0) },
            TrainingSample { feature: vec![9.00], position: (20.0, 0.0) },
            TrainingSample { feature: vec![5.00], position: (40.0, 0.0) },
        ];
        let batch = batch_hard_mine(&samples, &MiningConfig::default()).unwrap();
        assert!(batch.triplets.iter().all(|t| t.anchor != 0 && t.anchor != 1));
        // Anchors 2 and 3 have no positive partner.
        assert_eq!(batch.skipped, 2);
        assert!(batch.triplets.is_empty());
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let mut rng = StdRng::seed_from_u64(12);
        let dim = 5;
        let batch = 6;
        // Keep every hinge strictly active and away from the kink so the
        // loss is differentiable at the test point.
        let mut anchors = Vec::new();
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        while anchors.len() < batch {
            let a = random_feature(&mut rng, dim);
            let p = random_feature(&mut rng, dim);
            let n = random_feature(&mut rng, dim);
            let d_ap = a.iter().zip(&p).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            let d_an = a.iter().zip(&n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            if d_ap - d_an + 0.2 > 0.05 && d_ap > 0.05 && d_an > 0.05 {
                anchors.push(a);
                positives.push(p);
                negatives.push(n);
            }
        }
        let grads = triplet_margin_loss_grad(&anchors, &positives, &negatives, 0.2).unwrap();
        let base = triplet_margin_loss(&anchors, &positives, &negatives, 0.2).unwrap();
        assert!((grads.loss - base).abs() < 1e-12);
        let h = 1e-4;
        let mut checked = 0;
        for t in 0..batch {
            for c in 0..dim {
                for (role, analytic) in [
                    (0usize, grads.anchors[t][c]),
                    (1, grads.positives[t][c]),
                    (2, grads.negatives[t][c]),
                ] {
                    let mut plus = (anchors.clone(), positives.clone(), negatives.clone());
                    let mut minus = (anchors.clone(), positives.clone(), negatives.clone());
                    let slot_plus = match role {
                        0 => &mut plus.0[t][c],
                        1 => &mut plus.1[t][c],
                        _ => &mut plus.2[t][c],
                    };
                    *slot_plus += h;
                    let slot_minus = match role {
                        0 => &mut minus.0[t][c],
                        1 => &mut minus.1[t][c],
                        _ => &mut minus.2[t][c],
                    };
                    *slot_minus -= h;
                    let lp = triplet_margin_loss(&plus.0, &plus.1, &plus.2, 0.2).unwrap();
                    let lm = triplet_margin_loss(&minus.0, &minus.1, &minus.2, 0.2).unwrap();
                    let fd = (lp - lm) / (2.0 * h);
                    assert!(
                        (fd - analytic).abs() < 1e-4,
                        "triplet {t} dim {c} role {role}: fd {fd} vs {analytic}"
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked >= 90);
    }

    #[test]
    fn inactive_hinges_have_zero_gradient() {
        let anchors = vec![vec![0.0, 0.0]];
        let positives = vec![vec![0.1, 0.0]];
        let negatives = vec![vec![5.0, 0.0]];
        let grads = triplet_margin_loss_grad(&anchors, &positives, &negatives, 0.2).unwrap();
        assert_eq!(grads.loss, 0.0);
        assert!(grads.anchors[0].iter().all(|g| *g == 0.0));
        assert!(grads.positives[0].iter().all(|g| *g == 0.0));
        assert!(grads.negatives[0].iter().all(|g| *g == 0.0));
    }

    #[test]
    fn loss_is_invariant_under_orthogonal_maps() {
        let mut rng = StdRng::seed_from_u64(13);
        let dim = 4;
        let random_orthogonal = |rng: &mut StdRng| {
            let m = nalgebra::DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
            m.qr().q()
        };
        for _ in 0..10 {
            let q = random_orthogonal(&mut rng);
            let anchors: Vec<Vec<f64>> = (0..4).map(|_| random_feature(&mut rng, dim)).collect();
            let positives: Vec<Vec<f64>> = (0..4).map(|_| random_feature(&mut rng, dim)).collect();
            let negatives: Vec<Vec<f64>> = (0..4).map(|_| random_feature(&mut rng, dim)).collect();
            let map = |v: &Vec<f64>| -> Vec<f64> {
                let x = nalgebra::DVector::from_column_slice(v);
                (&q * x).iter().cloned().collect()
            };
            let base = triplet_margin_loss(&anchors, &positives, &negatives, 0.2).unwrap();
            let mapped = triplet_margin_loss(
                &anchors.iter().map(map).collect::<Vec<_>>(),
                &positives.iter().map(map).collect::<Vec<_>>(),
                &negatives.iter().map(map).collect::<Vec<_>>(),
                0.2,
            )
            .unwrap();
            assert!((base - mapped).abs() < 1e-9, "{base} vs {mapped}");
        }
    }

    #[test]
    fn yaw_loss_is_log_bins_for_a_uniform_distribution() {
        let uniform = vec![0.25; 4];
        let loss = kld_yaw_loss(&uniform, 2).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn yaw_loss_floors_empty_bins() {
        let mut dist = vec![0.0; 8];
        dist[3] = 1.0;
        let loss = kld_yaw_loss(&dist, 0).unwrap();
        assert!((loss - (-(1e-12f64).ln())).abs() < 1e-9);
        let exact = kld_yaw_loss(&dist, 3).unwrap();
        assert_eq!(exact, 0.0);
    }

    #[test]
    fn yaw_loss_validates_inputs() {
        assert!(matches!(
            kld_yaw_loss(&[0.5, 0.2], 0),
            Err(ObjectiveError::BadDistribution(_))
        ));
        assert!(matches!(
            kld_yaw_loss(&[0.5, 0.5], 2),
            Err(ObjectiveError::TargetOutOfRange { bin: 2, bins: 2 })
        ));
        assert!(matches!(kld_yaw_loss(&[], 0), Err(ObjectiveError::EmptyBatch)));
        assert!(matches!(
            kld_yaw_loss(&[-0.5, 1.5], 0),
            Err(ObjectiveError::BadDistribution(_))
        ));
    }

    #[test]
    fn joint_loss_applies_the_fixed_yaw_weight() {
        let joint = joint_loss(0.3, 2.0);
        assert!((joint - 0.302).abs() < 1e-15);
    }

    #[test]
    fn degenerate_batches_are_rejected() {
        assert!(matches!(
            triplet_margin_loss(&[], &[], &[], 0.2),
            Err(ObjectiveError::EmptyBatch)
        ));
        assert!(matches!(
            triplet_margin_loss(&[vec![0.0]], &[vec![0.0], vec![1.0]], &[vec![0.0]], 0.2),
            Err(ObjectiveError::BatchLengthMismatch(1, 2, 1))
        ));
        assert!(matches!(
            triplet_margin_loss(&[vec![0.0]], &[vec![0.0, 1.0]], &[vec![0.0]], 0.2),
            Err(ObjectiveError::DimensionMismatch { index: 0 })
        ));
        assert!(matches!(
            triplet_margin_loss(&[vec![0.0]], &[vec![0.0]], &[vec![0.0]], -0.1),
            Err(ObjectiveError::NonFinite)
        ));
        let bad_config = MiningConfig {
            positive_radius: 3.0,
            negative_radius: 2.0,
            margin: 0.2,
        };
        let sample = TrainingSample { feature: vec![0.0], position: (0.0, 0.0) };
        assert!(matches!(
            batch_hard_mine(&[sample], &bad_config),
            Err(ObjectiveError::BadRadii)
        ));
    }
}
