//! Forward evaluation of the training objective: assignment NLL terms for
//! feature alignment and point matching, and the overlap-aware circle loss
//! over patch features.

use crate::descriptor::FeaturedCloud;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::groundtruth::PointMatchSet;
use crate::matching::{augment_dustbin, cost_matrix, sinkhorn, AssignmentMatrix};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Probabilities are clamped here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleLossConfig {
    pub delta_p: f64,
    pub delta_n: f64,
    pub gamma: f64,
    /// Pairs whose overlap exceeds this are positives.
    pub positive_overlap: f64,
}

impl Default for CircleLossConfig {
    fn default() -> Self {
        CircleLossConfig { delta_p: 0.1, delta_n: 1.4, gamma: 10.0, positive_overlap: 0.1 }
    }
}

impl CircleLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_p > 0.0 && self.delta_n > self.delta_p && self.gamma > 0.0) {
            return Err(Error::invalid("circle loss needs delta_n > delta_p > 0 and gamma > 0"));
        }
        if !(0.0..1.0).contains(&self.positive_overlap) {
            return Err(Error::invalid("positive_overlap must lie in [0, 1)"));
        }
        Ok(())
    }
}

fn clamped_ln(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0).ln()
}

/// Negative log-likelihood of an augmented assignment: matched pairs, plus
/// unmatched rows sent to the dustbin column and unmatched columns sent to the
/// dustbin row.
pub fn nll_loss(z: &AssignmentMatrix, matched: &[(usize, usize)], unmatched_rows: &[usize], unmatched_cols: &[usize]) -> Result<f64> {
    let (n, m) = z.real_shape();
    let check = |i: usize, len: usize| if i < len { Ok(()) } else { Err(Error::IndexOutOfRange { index: i, len }) };
    let mut loss = 0.0;
    for &(x, y) in matched {
        check(x, n)?;
        check(y, m)?;
        loss -= clamped_ln(z.prob(x, y));
    }
    for &x in unmatched_rows {
        check(x, n)?;
        loss -= clamped_ln(z.prob(x, m));
    }
    for &y in unmatched_cols {
        check(y, m)?;
        loss -= clamped_ln(z.prob(n, y));
    }
    Ok(loss)
}

/// Features of one patch pair and its ground-truth point matches (positions
/// within each patch).
#[derive(Clone, Debug)]
pub struct LossPair {
    pub fp: FeatureMatrix,
    pub fq: FeatureMatrix,
    pub matches: Vec<(usize, usize)>,
}

impl LossPair {
    /// Rows and columns that take part in no ground-truth match.
    pub fn unmatched(&self) -> (Vec<usize>, Vec<usize>) {
        let mut row_hit = vec![false; self.fp.rows];
        let mut col_hit = vec![false; self.fq.rows];
        for &(a, b) in &self.matches {
            if let Some(r) = row_hit.get_mut(a) {
                *r = true;
            }
            if let Some(c) = col_hit.get_mut(b) {
                *c = true;
            }
        }
        let rows = (0..self.fp.rows).filter(|&a| !row_hit[a]).collect();
        let cols = (0..self.fq.rows).filter(|&b| !col_hit[b]).collect();
        (rows, cols)
    }

    /// NLL of this pair under Sinkhorn on its dustbin-augmented cost matrix.
    pub fn nll(&self, alpha: f64, sinkhorn_iters: usize) -> Result<f64> {
        let z = sinkhorn(&augment_dustbin(&cost_matrix(&self.fp, &self.fq)?, alpha), sinkhorn_iters)?;
        let (rows, cols) = self.unmatched();
        nll_loss(&z, &self.matches, &rows, &cols)
    }
}

fn mean_nll(pairs: &[LossPair], alpha: f64, sinkhorn_iters: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for p in pairs {
        total += p.nll(alpha, sinkhorn_iters)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Mean assignment NLL over patch pairs described with local features.
pub fn feature_align_loss(pairs: &[LossPair], alpha: f64, sinkhorn_iters: usize) -> Result<f64> {
    mean_nll(pairs, alpha, sinkhorn_iters)
}

/// Mean assignment NLL over patch pairs described with point features.
pub fn point_match_loss(pairs: &[LossPair], alpha: f64, sinkhorn_iters: usize) -> Result<f64> {
    mean_nll(pairs, alpha, sinkhorn_iters)
}

/// Which per-point features of a [`FeaturedCloud`] to slice into loss pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointLevel {
    Local,
    Point,
}

/// Slices patch rows out of two featured clouds for each ground-truth point
/// match set.
pub fn loss_pairs(p: &FeaturedCloud, q: &FeaturedCloud, matches: &[PointMatchSet], level: PointLevel) -> Result<Vec<LossPair>> {
    let pick = |c: &FeaturedCloud| match level {
        PointLevel::Local => c.local.clone(),
        PointLevel::Point => c.point.clone(),
    };
    let (fp_all, fq_all) = (pick(p), pick(q));
    matches
        .iter()
        .map(|set| {
            let (i, j) = set.patch_pair;
            let members_p = p.ms.fine_of.get(i).ok_or(Error::IndexOutOfRange { index: i, len: p.ms.num_patches() })?;
            let members_q = q.ms.fine_of.get(j).ok_or(Error::IndexOutOfRange { index: j, len: q.ms.num_patches() })?;
            Ok(LossPair { fp: fp_all.select(members_p), fq: fq_all.select(members_q), matches: set.pairs.clone() })
        })
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Overlap-aware circle loss with anchors in P: for every patch of P with at
/// least one positive (overlap above the threshold),
/// `log(1 + sum_pos exp(lambda * beta_p * (d - delta_p)) * sum_neg exp(beta_n * (delta_n - d)))`
/// with `lambda = sqrt(overlap)`, `beta_p = max(0, gamma (d - delta_p))`,
/// `beta_n = max(0, gamma (delta_n - d))` and negatives the zero-overlap
/// patches; averaged over anchors.
pub fn overlap_circle_loss(fp: &FeatureMatrix, fq: &FeatureMatrix, overlap: &DMatrix<f64>, cfg: &CircleLossConfig) -> Result<f64> {
    cfg.validate()?;
    if fp.dim != fq.dim {
        return Err(Error::DimMismatch { expected: fp.dim, got: fq.dim });
    }
    if overlap.shape() != (fp.rows, fq.rows) {
        return Err(Error::invalid(format!(
            "overlap matrix is {}x{}, expected {}x{}",
            overlap.nrows(),
            overlap.ncols(),
            fp.rows,
            fq.rows
        )));
    }
    if overlap.iter().any(|o| !(0.0..=1.0).contains(o)) {
        return Err(Error::invalid("overlap ratios must lie in [0, 1]"));
    }
    let mut total = 0.0;
    let mut anchors = 0usize;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..fp.rows {
        pos.clear();
        neg.clear();
        for j in 0..fq.rows {
            let o = overlap[(i, j)];
            let d = euclid(fp.row(i), fq.row(j));
            if o > cfg.positive_overlap {
                let beta = (cfg.gamma * (d - cfg.delta_p)).max(0.0);
                pos.push(o.sqrt() * beta * (d - cfg.delta_p));
            } else if o == 0.0 {
                let beta = (cfg.gamma * (cfg.delta_n - d)).max(0.0);
                neg.push(beta * (cfg.delta_n - d));
            }
        }
        if pos.is_empty() {
            continue;
        }
        anchors += 1;
        if !neg.is_empty() {
            // log(1 + e^x) evaluated without overflow
            let x = log_sum_exp(&pos) + log_sum_exp(&neg);
            total += if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
        }
    }
    if anchors == 0 {
        return Err(Error::NoPositivePatches);
    }
    Ok(total / anchors as f64)
}

/// Mean of the P-anchored and Q-anchored circle losses. `overlap_qp` holds the
/// overlap of Q patches onto P patches (|Q| x |P|).
pub fn symmetric_overlap_circle_loss(
    fp: &FeatureMatrix,
    fq: &FeatureMatrix,
    overlap_pq: &DMatrix<f64>,
    overlap_qp: &DMatrix<f64>,
    cfg: &CircleLossConfig,
) -> Result<f64> {
    let lp = overlap_circle_loss(fp, fq, overlap_pq, cfg)?;
    let lq = overlap_circle_loss(fq, fp, overlap_qp, cfg)?;
    Ok((lp + lq) / 2.0)
}

pub fn total_loss(l_f: f64, l_p: f64, l_oc: f64) -> f64 {
    l_f + l_p + l_oc
}

/// The three loss components and their sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    #[serde(rename = "L_f")]
    pub l_f: f64,
    #[serde(rename = "L_p")]
    pub l_p: f64,
    #[serde(rename = "L_oc")]
    pub l_oc: f64,
    #[serde(rename = "L")]
    pub total: f64,
}

impl LossReport {
    pub fn new(l_f: f64, l_p: f64, l_oc: f64) -> Self {
        LossReport { l_f, l_p, l_oc, total: total_loss(l_f, l_p, l_oc) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureLevel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn probs(rows: usize, cols: usize, rng: &mut impl Rng) -> AssignmentMatrix {
        AssignmentMatrix { z: DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(0.0..1.0)), log_domain: false }
    }

    fn fm(rows: Vec<Vec<f64>>) -> FeatureMatrix {
        FeatureMatrix::from_rows(&rows, FeatureLevel::Patch).unwrap()
    }

    #[test]
    fn nll_trivial_cases() {
        let ones = AssignmentMatrix { z: DMatrix::from_element(3, 3, 1.0), log_domain: false };
        assert_eq!(nll_loss(&ones, &[(0, 0), (1, 1)], &[], &[]).unwrap(), 0.0);
        let mut z = DMatrix::from_element(2, 2, 0.5);
        z[(0, 0)] = (-1.0f64).exp();
        let am = AssignmentMatrix { z, log_domain: false };
        assert!((nll_loss(&am, &[(0, 0)], &[], &[]).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(nll_loss(&am, &[(1, 0)], &[], &[]), Err(Error::IndexOutOfRange { .. })));
        assert!(nll_loss(&am, &[], &[0], &[1]).is_err());
        let zero = AssignmentMatrix { z: DMatrix::zeros(2, 2), log_domain: false };
        assert!((nll_loss(&zero, &[(0, 0)], &[], &[]).unwrap() + PROB_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_matches_scalar_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..60 {
            let (n, m) = (rng.gen_range(1..8), rng.gen_range(1..8));
            let z = probs(n + 1, m + 1, &mut rng);
            let matched: Vec<(usize, usize)> = (0..rng.gen_range(0..5)).map(|_| (rng.gen_range(0..n), rng.gen_range(0..m))).collect();
            let rows: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
            let cols: Vec<usize> = (0..m).filter(|_| rng.gen_bool(0.5)).collect();
            let mut oracle = 0.0;
            for &(x, y) in &matched {
                oracle += -(z.z[(x, y)].max(1e-12)).ln();
            }
            for &x in &rows {
                oracle += -(z.z[(x, m)].max(1e-12)).ln();
            }
            for &y in &cols {
                oracle += -(z.z[(n, y)].max(1e-12)).ln();
            }
            let got = nll_loss(&z, &matched, &rows, &cols).unwrap();
            assert!((got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
            assert!(got >= 0.0);
        }
    }

    #[test]
    fn log_two_case() {
        let cfg = CircleLossConfig::default();
        let fp = fm(vec![vec![0.0, 0.0]]);
        let fq = fm(vec![vec![0.1, 0.0], vec![0.0, 1.4]]);
        let overlap = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let l = overlap_circle_loss(&fp, &fq, &overlap, &cfg).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-9, "{l}");
    }

    #[test]
    fn separated_features_reach_floor() {
        // with clamped weights every term is at least exp(0) = 1, so the loss
        // cannot drop below log(1 + |pos| * |neg|)
        let cfg = CircleLossConfig::default();
        let fp = fm(vec![vec![0.0, 0.0]]);
        let fq = fm(vec![vec![0.01, 0.0], vec![0.0, 3.0]]);
        let overlap = DMatrix::from_row_slice(1, 2, &[0.9, 0.0]);
        let l = overlap_circle_loss(&fp, &fq, &overlap, &cfg).unwrap();
        assert_eq!(l, std::f64::consts::LN_2);
    }

    #[test]
    fn circle_errors() {
        let cfg = CircleLossConfig::default();
        let fp = fm(vec![vec![0.0, 0.0]]);
        let fq = fm(vec![vec![1.0, 0.0]]);
        assert!(matches!(overlap_circle_loss(&fp, &fq, &DMatrix::zeros(1, 1), &cfg), Err(Error::NoPositivePatches)));
        assert!(overlap_circle_loss(&fp, &fq, &DMatrix::from_element(1, 1, 1.5), &cfg).is_err());
        assert!(overlap_circle_loss(&fp, &fm(vec![vec![1.0]]), &DMatrix::from_element(1, 1, 0.5), &cfg).is_err());
    }

    fn random_setup(rng: &mut impl Rng) -> (FeatureMatrix, FeatureMatrix, DMatrix<f64>) {
        let (n, m, d) = (rng.gen_range(2..7), rng.gen_range(2..7), rng.gen_range(2..6));
        let fp = FeatureMatrix::new(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect(), FeatureLevel::Patch).unwrap();
        let fq = FeatureMatrix::new(m, d, (0..m * d).map(|_| rng.gen_range(-1.0..1.0)).collect(), FeatureLevel::Patch).unwrap();
        let mut o = DMatrix::from_fn(n, m, |_, _| match rng.gen_range(0..3) {
            0 => 0.0,
            1 => rng.gen_range(0.0..0.1),
            _ => rng.gen_range(0.1..1.0),
        });
        o[(0, 0)] = 0.8;
        (fp, fq, o)
    }

    #[test]
    fn circle_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = CircleLossConfig::default();
        for _ in 0..100 {
            let (fp, fq, o) = random_setup(&mut rng);
            let mut total = 0.0;
            let mut anchors = 0;
            for i in 0..fp.rows {
                let (mut sp, mut sn, mut any) = (0.0, 0.0, false);
                for j in 0..fq.rows {
                    let d: f64 = (0..fp.dim).map(|c| (fp.row(i)[c] - fq.row(j)[c]).powi(2)).sum::<f64>().sqrt();
                    if o[(i, j)] > 0.1 {
                        any = true;
                        sp += (o[(i, j)].sqrt() * (10.0 * (d - 0.1)).max(0.0) * (d - 0.1)).exp();
                    } else if o[(i, j)] == 0.0 {
                        sn += ((10.0 * (1.4 - d)).max(0.0) * (1.4 - d)).exp();
                    }
                }
                if any {
                    anchors += 1;
                    total += (1.0 + sp * sn).ln();
                }
            }
            let oracle = total / anchors as f64;
            let got = overlap_circle_loss(&fp, &fq, &o, &cfg).unwrap();
            assert!((got - oracle).abs() <= 1e-9 * oracle.max(1.0), "{got} vs {oracle}");
        }
    }

    #[test]
    fn circle_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = CircleLossConfig::default();
        for _ in 0..200 {
            let (fp, fq, o) = random_setup(&mut rng);
            let i = rng.gen_range(0..fp.rows);
            let j = rng.gen_range(0..fq.rows);
            let mut moved = fq.clone();
            let t = rng.gen_range(0.0..1.0);
            let target: Vec<f64> = fp.row(i).to_vec();
            let row = moved.row_mut(j);
            let o_ij = o[(i, j)];
            if o_ij > cfg.positive_overlap {
                // move q_j toward p_i: its distance to p_i shrinks
                for (v, p) in row.iter_mut().zip(&target) {
                    *v += t * (p - *v);
                }
            } else if o_ij == 0.0 {
                // push q_j away from p_i
                for (v, p) in row.iter_mut().zip(&target) {
                    *v += t * (*v - p);
                }
            } else {
                continue;
            }
            // moving q_j can change other anchors' terms in either direction,
            // so the property is checked with anchor i alone
            let mut o1 = DMatrix::zeros(1, fq.rows);
            for c in 0..fq.rows {
                o1[(0, c)] = o[(i, c)];
            }
            if !(0..fq.rows).any(|c| o1[(0, c)] > cfg.positive_overlap) {
                continue;
            }
            let fp1 = fp.select(&[i]);
            let before = overlap_circle_loss(&fp1, &fq, &o1, &cfg).unwrap();
            let after = overlap_circle_loss(&fp1, &moved, &o1, &cfg).unwrap();
            assert!(after <= before + 1e-12, "{after} > {before}");
        }
    }

    #[test]
    fn circle_is_orthonormal_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = CircleLossConfig::default();
        for _ in 0..50 {
            let (fp, fq, o) = random_setup(&mut rng);
            let d = fp.dim;
            let q = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
            let map = |f: &FeatureMatrix| {
                let m = DMatrix::from_row_slice(f.rows, f.dim, &f.data) * q.transpose();
                FeatureMatrix::new(f.rows, f.dim, m.transpose().as_slice().to_vec(), f.level).unwrap()
            };
            let a = overlap_circle_loss(&fp, &fq, &o, &cfg).unwrap();
            let b = overlap_circle_loss(&map(&fp), &map(&fq), &o, &cfg).unwrap();
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn symmetric_is_mean_of_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = CircleLossConfig::default();
        let (fp, fq, o) = random_setup(&mut rng);
        let o_qp = o.transpose();
        let s = symmetric_overlap_circle_loss(&fp, &fq, &o, &o_qp, &cfg).unwrap();
        let a = overlap_circle_loss(&fp, &fq, &o, &cfg).unwrap();
        let b = overlap_circle_loss(&fq, &fp, &o_qp, &cfg).unwrap();
        assert_eq!(s, (a + b) / 2.0);
    }

    #[test]
    fn totals() {
        assert_eq!(total_loss(0.0, 0.0, 0.0), 0.0);
        assert_eq!(total_loss(1.0, 2.0, 3.0), 6.0);
        let r = LossReport::new(1.0, 2.0, 3.0);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"L_f\":1.0") && json.contains("\"L\":6.0"));
    }

    fn pair_with(features: &FeatureMatrix, perm: &[usize]) -> LossPair {
        LossPair { fp: features.clone(), fq: features.clone(), matches: perm.iter().enumerate().map(|(a, &b)| (a, b)).collect() }
    }

    #[test]
    fn single_pair_equals_its_nll_and_levels_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = FeatureMatrix::new(5, 4, (0..20).map(|_| rng.gen_range(-2.0..2.0)).collect(), FeatureLevel::Local).unwrap();
        let pair = pair_with(&f, &[0, 1, 2, 3, 4]);
        let direct = pair.nll(1.0, 100).unwrap();
        assert_eq!(feature_align_loss(std::slice::from_ref(&pair), 1.0, 100).unwrap(), direct);
        assert_eq!(point_match_loss(std::slice::from_ref(&pair), 1.0, 100).unwrap(), direct);
        assert!(feature_align_loss(&[], 1.0, 100).is_err());
    }

    #[test]
    fn aligned_ground_truth_beats_shuffled() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let n = rng.gen_range(3..10);
            let d = 8;
            // well separated rows, scaled so the diagonal dominates the cost
            let f = FeatureMatrix::new(n, d, (0..n * d).map(|_| rng.gen_range(-3.0..3.0)).collect(), FeatureLevel::Local).unwrap();
            let ident: Vec<usize> = (0..n).collect();
            let mut shuffled = ident.clone();
            shuffled.rotate_left(1);
            let good = feature_align_loss(&[pair_with(&f, &ident)], 1.0, 100).unwrap();
            let bad = feature_align_loss(&[pair_with(&f, &shuffled)], 1.0, 100).unwrap();
            assert!(good < bad, "{good} >= {bad}");
        }
    }

    #[test]
    fn dustbin_only_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fp = FeatureMatrix::new(3, 2, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(), FeatureLevel::Local).unwrap();
        let fq = FeatureMatrix::new(4, 2, (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(), FeatureLevel::Local).unwrap();
        let pair = LossPair { fp: fp.clone(), fq: fq.clone(), matches: vec![] };
        let z = sinkhorn(&augment_dustbin(&cost_matrix(&fp, &fq).unwrap(), 0.5), 100).unwrap();
        let oracle: f64 = (0..3).map(|a| -z.prob(a, 4).ln()).sum::<f64>() + (0..4).map(|b| -z.prob(3, b).ln()).sum::<f64>();
        assert!((pair.nll(0.5, 100).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn zero_features_give_uniform_assignment() {
        // all-equal scores: the Sinkhorn fixed point is known in closed form
        let (n, m) = (3usize, 2usize);
        let fp = FeatureMatrix::zeros(n, 4, FeatureLevel::Point);
        let fq = FeatureMatrix::zeros(m, 4, FeatureLevel::Point);
        let pair = LossPair { fp, fq, matches: vec![(0, 0)] };
        let z = sinkhorn(&augment_dustbin(&DMatrix::zeros(n, m), 0.0), 1000).unwrap();
        let (rows, cols) = pair.unmatched();
        let oracle = nll_loss(&z, &pair.matches, &rows, &cols).unwrap();
        assert!((point_match_loss(&[pair], 0.0, 1000).unwrap() - oracle).abs() < 1e-12);
        // every real-real entry equal by symmetry
        let v = z.prob(0, 0);
        for a in 0..n {
            for b in 0..m {
                assert!((z.prob(a, b) - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn hand_computed_one_by_one() {
        // 1x1 real block: scores [[s, a], [a, a]] with marginals (1, 1)
        // admit the closed form p = 1 / (1 + exp(-(s - a) / 2))
        let fp = FeatureMatrix::new(1, 2, vec![2.0, 0.0], FeatureLevel::Point).unwrap();
        let fq = FeatureMatrix::new(1, 2, vec![1.5, 0.0], FeatureLevel::Point).unwrap();
        let s = 2.0 * 1.5 / 2.0;
        let alpha = 0.25;
        let p = 1.0 / (1.0 + (-(s - alpha) / 2.0f64).exp());
        let pair = LossPair { fp, fq, matches: vec![(0, 0)] };
        assert!((pair.nll(alpha, 200).unwrap() + p.ln()).abs() < 1e-9);
    }
}
