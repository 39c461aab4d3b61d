//! Robust translation estimation between adjacent strips and offset chaining.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Alignment, AlignmentStatus, Keypoint, MatchPair, Offset, RegistrationError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            inlier_threshold: 3.0,
            min_inliers: 8,
            iterations: 500,
            seed: 0x5eed,
        }
    }
}

fn displacements(matches: &[MatchPair], kps_a: &[Keypoint], kps_b: &[Keypoint]) -> Vec<[f64; 2]> {
    matches
        .iter()
        .map(|m| {
            let a = &kps_a[m.index_a];
            let b = &kps_b[m.index_b];
            [a.x as f64 - b.x as f64, a.y as f64 - b.y as f64]
        })
        .collect()
}

fn inliers(disp: &[[f64; 2]], model: [f64; 2], threshold: f64) -> Vec<usize> {
    let t2 = threshold * threshold;
    disp.iter()
        .enumerate()
        .filter(|(_, d)| (d[0] - model[0]).powi(2) + (d[1] - model[1]).powi(2) <= t2)
        .map(|(i, _)| i)
        .collect()
}

fn mean(disp: &[[f64; 2]], idx: &[usize]) -> [f64; 2] {
    let n = idx.len() as f64;
    let (sx, sy) = idx
        .iter()
        .fold((0.0, 0.0), |(sx, sy), &i| (sx + disp[i][0], sy + disp[i][1]));
    [sx / n, sy / n]
}

fn fallback(nominal: Offset, match_count: usize, inlier_count: usize) -> Alignment {
    Alignment {
        dx: nominal.dx,
        dy: nominal.dy,
        inlier_count,
        match_count,
        rms_residual: 0.0,
        status: AlignmentStatus::Fallback,
    }
}

/// Estimates the translation `(dx, dy)` with `p_a = p_b + (dx, dy)` for matched keypoints.
///
/// Hypotheses are single matches drawn with a seeded generator; the best consensus set is
/// refit as the mean displacement and re-thresholded until stable. Fewer than
/// `min_inliers` supporting matches yields a fallback carrying `nominal`.
pub fn estimate_alignment(
    matches: &[MatchPair],
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    params: &RansacParams,
    nominal: Offset,
) -> Alignment {
    let n = matches.len();
    if n == 0 || n < params.min_inliers {
        return fallback(nominal, n, 0);
    }
    let disp = displacements(matches, kps_a, kps_b);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut best: Option<(usize, f64, [f64; 2])> = None;
    for _ in 0..params.iterations.max(1) {
        let model = disp[rng.gen_range(0..n)];
        let set = inliers(&disp, model, params.inlier_threshold);
        let spread: f64 = set
            .iter()
            .map(|&i| (disp[i][0] - model[0]).hypot(disp[i][1] - model[1]))
            .sum();
        let better = match best {
            None => true,
            Some((count, s, _)) => set.len() > count || (set.len() == count && spread < s),
        };
        if better {
            best = Some((set.len(), spread, model));
        }
    }
    let (_, _, model) = best.expect("at least one iteration");

    let mut set = inliers(&disp, model, params.inlier_threshold);
    let mut estimate = mean(&disp, &set);
    for _ in 0..10 {
        let next = inliers(&disp, estimate, params.inlier_threshold);
        if next.is_empty() {
            break;
        }
        let refit = mean(&disp, &next);
        let stable = next == set;
        set = next;
        estimate = refit;
        if stable {
            break;
        }
    }
    // Residuals are reported against the final estimate, so only points within the
    // threshold of it count as inliers.
    let set = inliers(&disp, estimate, params.inlier_threshold);
    if set.len() < params.min_inliers {
        return fallback(nominal, n, set.len());
    }
    let rms = (set
        .iter()
        .map(|&i| (disp[i][0] - estimate[0]).powi(2) + (disp[i][1] - estimate[1]).powi(2))
        .sum::<f64>()
        / set.len() as f64)
        .sqrt();
    Alignment {
        dx: estimate[0],
        dy: estimate[1],
        inlier_count: set.len(),
        match_count: n,
        rms_residual: rms,
        status: AlignmentStatus::Estimated,
    }
}

/// Replaces fallback alignments by the per-axis median of estimated alignments within
/// `window` pairs on either side; keeps the nominal advance when none exist.
pub fn resolve_fallbacks(pairwise: &mut [Alignment], window: usize) {
    let snapshot: Vec<Alignment> = pairwise.to_vec();
    for (i, a) in pairwise.iter_mut().enumerate() {
        if a.status == AlignmentStatus::Estimated {
            continue;
        }
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(snapshot.len());
        let neighbours: Vec<&Alignment> = snapshot[lo..hi]
            .iter()
            .filter(|n| n.status == AlignmentStatus::Estimated)
            .collect();
        if neighbours.is_empty() {
            continue;
        }
        a.dx = median(neighbours.iter().map(|n| n.dx).collect());
        a.dy = median(neighbours.iter().map(|n| n.dy).collect());
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Cumulative offsets of `strips` strips relative to the first, from `strips − 1` pairwise
/// alignments.
pub fn chain_alignments(pairwise: &[Alignment], strips: usize) -> Result<Vec<Offset>, RegistrationError> {
    if strips == 0 || pairwise.len() + 1 != strips {
        return Err(RegistrationError::LengthMismatch {
            pairs: pairwise.len(),
            strips,
        });
    }
    let mut out = Vec::with_capacity(strips);
    let mut acc = Offset::default();
    out.push(acc);
    for a in pairwise {
        acc = Offset {
            dx: acc.dx + a.dx,
            dy: acc.dy + a.dy,
        };
        out.push(acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kp(x: f32, y: f32) -> Keypoint {
        Keypoint {
            x,
            y,
            scale: 2.0,
            orientation: 0.0,
            response: 1.0,
        }
    }

    fn identity_matches(n: usize) -> Vec<MatchPair> {
        (0..n)
            .map(|i| MatchPair {
                index_a: i,
                index_b: i,
                distance: 0.0,
                ratio: 0.0,
            })
            .collect()
    }

    fn shifted(dx: f64, dy: f64) -> Alignment {
        Alignment {
            dx,
            dy,
            inlier_count: 10,
            match_count: 10,
            rms_residual: 0.0,
            status: AlignmentStatus::Estimated,
        }
    }

    const NOMINAL: Offset = Offset { dx: 0.0, dy: 75.0 };

    #[test]
    fn mixture_of_inliers_and_noise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut a = Vec::new();
        let mut b = Vec::new();
        for i in 0..100 {
            let (x, y) = (rng.gen_range(0.0..500.0f32), rng.gen_range(0.0..250.0f32));
            b.push(kp(x, y));
            if i < 80 {
                let jx = rng.gen_range(-0.3..0.3f32);
                let jy = rng.gen_range(-0.3..0.3f32);
                a.push(kp(x + 10.0 + jx, y + 2.0 + jy));
            } else {
                a.push(kp(rng.gen_range(0.0..500.0), rng.gen_range(0.0..250.0)));
            }
        }
        let al = estimate_alignment(&identity_matches(100), &a, &b, &RansacParams::default(), NOMINAL);
        assert_eq!(al.status, AlignmentStatus::Estimated);
        assert!((al.dx - 10.0).abs() <= 0.5 && (al.dy - 2.0).abs() <= 0.5, "{al:?}");
        assert!(al.inlier_count >= 75);
        assert!(al.rms_residual <= 3.0);
    }

    #[test]
    fn zero_matches_fall_back() {
        let al = estimate_alignment(&[], &[], &[], &RansacParams::default(), NOMINAL);
        assert_eq!(al.status, AlignmentStatus::Fallback);
        assert_eq!((al.dx, al.dy), (0.0, 75.0));
    }

    #[test]
    fn too_few_agreeing_matches_fall_back() {
        // Ten matches, all with different displacements.
        let b: Vec<Keypoint> = (0..10).map(|i| kp(i as f32 * 10.0, 0.0)).collect();
        let a: Vec<Keypoint> = (0..10).map(|i| kp(i as f32 * 10.0, i as f32 * 20.0)).collect();
        let al = estimate_alignment(&identity_matches(10), &a, &b, &RansacParams::default(), NOMINAL);
        assert_eq!(al.status, AlignmentStatus::Fallback);
        assert!(al.inlier_count < 8);
    }

    #[test]
    fn self_alignment_is_zero() {
        let a: Vec<Keypoint> = (0..30).map(|i| kp(i as f32 * 7.3, (i * i) as f32 * 0.1)).collect();
        let al = estimate_alignment(&identity_matches(30), &a, &a, &RansacParams::default(), NOMINAL);
        assert_eq!((al.dx, al.dy), (0.0, 0.0));
        assert!(al.rms_residual <= 1e-6);
        assert_eq!(al.inlier_count, 30);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let b: Vec<Keypoint> = (0..50).map(|i| kp(i as f32 * 3.0, 5.0)).collect();
        let a: Vec<Keypoint> = b
            .iter()
            .enumerate()
            .map(|(i, k)| kp(k.x + 4.0 + (i % 7) as f32 * 0.2, k.y + if i % 5 == 0 { 40.0 } else { 1.0 }))
            .collect();
        let p = RansacParams::default();
        let x = estimate_alignment(&identity_matches(50), &a, &b, &p, NOMINAL);
        let y = estimate_alignment(&identity_matches(50), &a, &b, &p, NOMINAL);
        assert_eq!(x, y);
    }

    #[test]
    fn chain_prefix_sums() {
        let g = chain_alignments(&[shifted(5.0, 0.0), shifted(7.0, 0.0)], 3).unwrap();
        assert_eq!(
            g,
            vec![
                Offset { dx: 0.0, dy: 0.0 },
                Offset { dx: 5.0, dy: 0.0 },
                Offset { dx: 12.0, dy: 0.0 }
            ]
        );
        assert_eq!(chain_alignments(&[], 1).unwrap(), vec![Offset::default()]);
        let g = chain_alignments(&[shifted(3.0, 1.0), shifted(3.0, -1.0)], 3).unwrap();
        assert_eq!(g[2], Offset { dx: 6.0, dy: 0.0 });
        assert!(matches!(
            chain_alignments(&[shifted(1.0, 0.0)], 3),
            Err(RegistrationError::LengthMismatch { pairs: 1, strips: 3 })
        ));
    }

    #[test]
    fn fallbacks_take_neighbour_median() {
        let mut fb = fallback(NOMINAL, 0, 0);
        let mut pairs = vec![shifted(0.0, 70.0), shifted(0.0, 72.0), fb, shifted(0.0, 80.0), shifted(1.0, 200.0)];
        resolve_fallbacks(&mut pairs, 2);
        assert_eq!(pairs[2].status, AlignmentStatus::Fallback);
        assert_eq!((pairs[2].dx, pairs[2].dy), (0.0, 76.0));

        fb.dy = 75.0;
        let mut lonely = vec![fb, fb];
        resolve_fallbacks(&mut lonely, 2);
        assert_eq!(lonely[0].dy, 75.0);
    }
}
