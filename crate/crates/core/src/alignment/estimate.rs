use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{AffineTransform, Point};
use crate::imaging::MatchPair;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EstimateError {
    #[error("need at least 3 non-collinear correspondences")]
    DegenerateInput,
    #[error("need at least 3 matches, got {0}")]
    InsufficientMatches(usize),
    #[error("best consensus has {found} inliers, need {required}")]
    NoConsensus { found: usize, required: usize },
}

/// Least-squares affine fit mapping each `.0` onto its `.1`.
///
/// Solved in closed form on centred coordinates: the linear part is
/// `C S^-1` with `S` the source scatter and `C` the cross-covariance, so it
/// is exact whenever the correspondences are consistent.
pub fn estimate_affine_lsq(pairs: &[(Point, Point)]) -> Result<AffineTransform, EstimateError> {
    if pairs.len() < 3 {
        return Err(EstimateError::DegenerateInput);
    }
    let n = pairs.len() as f64;
    let (mut msx, mut msy, mut mdx, mut mdy) = (0.0, 0.0, 0.0, 0.0);
    for (s, d) in pairs {
        msx += s.x;
        msy += s.y;
        mdx += d.x;
        mdy += d.y;
    }
    let (msx, msy, mdx, mdy) = (msx / n, msy / n, mdx / n, mdy / n);

    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    let (mut cxx, mut cxy, mut cyx, mut cyy) = (0.0, 0.0, 0.0, 0.0);
    for (s, d) in pairs {
        let (sx, sy, dx, dy) = (s.x - msx, s.y - msy, d.x - mdx, d.y - mdy);
        sxx += sx * sx;
        sxy += sx * sy;
        syy += sy * sy;
        cxx += dx * sx;
        cxy += dx * sy;
        cyx += dy * sx;
        cyy += dy * sy;
    }
    let trace = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    if trace <= f64::EPSILON || det <= 1e-9 * trace * trace {
        return Err(EstimateError::DegenerateInput);
    }
    let (i11, i12, i22) = (syy / det, -sxy / det, sxx / det);
    let a11 = cxx * i11 + cxy * i12;
    let a12 = cxx * i12 + cxy * i22;
    let a21 = cyx * i11 + cyy * i12;
    let a22 = cyx * i12 + cyy * i22;
    Ok(AffineTransform {
        a11,
        a12,
        a21,
        a22,
        tx: mdx - (a11 * msx + a12 * msy),
        ty: mdy - (a21 * msx + a22 * msy),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_threshold_px: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { iterations: 500, inlier_threshold_px: 3.0, min_inliers: 12, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacFit {
    pub transform: AffineTransform,
    /// One flag per input match: residual within the threshold.
    pub inlier_mask: Vec<bool>,
    pub inlier_count: usize,
    /// Root-mean-square residual over the inliers, in pixels.
    pub rms_error: f64,
}

/// RANSAC over minimal three-point samples, refit by least squares on the
/// winning consensus set. Bit-deterministic for a fixed seed.
pub fn estimate_affine_ransac(
    matches: &[MatchPair],
    pts_a: &[Point],
    pts_b: &[Point],
    params: &RansacParams,
) -> Result<RansacFit, EstimateError> {
    assert!(params.iterations >= 1, "at least one iteration");
    assert!(params.inlier_threshold_px > 0.0, "positive inlier threshold");
    let n = matches.len();
    if n < 3 {
        return Err(EstimateError::InsufficientMatches(n));
    }
    let pairs: Vec<(Point, Point)> = matches.iter().map(|m| (pts_a[m.index_a], pts_b[m.index_b])).collect();
    let thr2 = params.inlier_threshold_px * params.inlier_threshold_px;

    let score = |t: &AffineTransform| {
        let mut count = 0usize;
        let mut cost = 0.0;
        for (s, d) in &pairs {
            let r2 = sq_residual(t, s, d);
            if r2 <= thr2 {
                count += 1;
                cost += r2;
            } else {
                cost += thr2;
            }
        }
        (count, cost)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(AffineTransform, usize, f64)> = None;
    for _ in 0..params.iterations {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.random_range(0..n - 2);
        for taken in sorted2(i, j) {
            if k >= taken {
                k += 1;
            }
        }
        let Ok(model) = estimate_affine_lsq(&[pairs[i], pairs[j], pairs[k]]) else {
            continue;
        };
        if !model.is_invertible() {
            continue;
        }
        let (count, cost) = score(&model);
        let better = match &best {
            None => true,
            Some((_, bc, bcost)) => count > *bc || (count == *bc && cost < *bcost),
        };
        if better {
            best = Some((model, count, cost));
            if count == n {
                break;
            }
        }
    }

    let Some((mut model, mut count, _)) = best else {
        return Err(EstimateError::NoConsensus { found: 0, required: params.min_inliers.max(3) });
    };

    // Refit on the consensus set until it stops growing.
    for _ in 0..4 {
        let inliers: Vec<(Point, Point)> =
            pairs.iter().copied().filter(|(s, d)| sq_residual(&model, s, d) <= thr2).collect();
        let Ok(refit) = estimate_affine_lsq(&inliers) else { break };
        if !refit.is_invertible() {
            break;
        }
        let (refit_count, _) = score(&refit);
        if refit_count < count {
            break;
        }
        let grew = refit_count > count;
        model = refit;
        count = refit_count;
        if !grew {
            break;
        }
    }

    let inlier_mask: Vec<bool> = pairs.iter().map(|(s, d)| sq_residual(&model, s, d) <= thr2).collect();
    let inlier_count = inlier_mask.iter().filter(|&&b| b).count();
    if inlier_count < params.min_inliers.max(3) {
        return Err(EstimateError::NoConsensus { found: inlier_count, required: params.min_inliers.max(3) });
    }
    let sum_sq: f64 = pairs
        .iter()
        .zip(&inlier_mask)
        .filter(|(_, &inl)| inl)
        .map(|((s, d), _)| sq_residual(&model, s, d))
        .sum();
    Ok(RansacFit { transform: model, inlier_mask, inlier_count, rms_error: (sum_sq / inlier_count as f64).sqrt() })
}

fn sorted2(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

fn sq_residual(t: &AffineTransform, s: &Point, d: &Point) -> f64 {
    let p = t.apply(*s);
    (p.x - d.x).powi(2) + (p.y - d.y).powi(2)
}
