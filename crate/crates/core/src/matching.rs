//! Coarse patch matching and fine point matching.
//!
//! Patches are paired through a Gaussian feature correlation that is
//! dual-normalized (row-softmax times column-softmax style) before the global
//! top entries are taken. Inside each patch pair, point features are compared
//! with a scaled inner product, a dustbin row and column are appended, and a
//! Sinkhorn solve yields a soft assignment from which mutual top-k pairs are
//! read off.

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::groundtruth::PatchMatchSet;
use nalgebra::DMatrix;

/// Score ranges wider than this fall back to log-domain iterations.
const SCALING_DOMAIN_RANGE: f64 = 200.0;

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    pub h: DMatrix<f64>,
}

/// Soft assignment including the dustbin row and column.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentMatrix {
    pub z: DMatrix<f64>,
    /// Whether `z` stores log-probabilities.
    pub log_domain: bool,
}

impl AssignmentMatrix {
    /// Probability at (r, c) regardless of storage domain.
    pub fn prob(&self, r: usize, c: usize) -> f64 {
        if self.log_domain {
            self.z[(r, c)].exp()
        } else {
            self.z[(r, c)]
        }
    }

    /// Number of real rows and columns (dustbins excluded).
    pub fn real_shape(&self) -> (usize, usize) {
        (self.z.nrows() - 1, self.z.ncols() - 1)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `h[i][j] = exp(-|fp_i - fq_j|^2)`.
pub fn gaussian_correlation(fp: &FeatureMatrix, fq: &FeatureMatrix) -> Result<CorrelationMatrix> {
    if fp.dim != fq.dim {
        return Err(Error::DimMismatch { expected: fp.dim, got: fq.dim });
    }
    let h = DMatrix::from_fn(fp.rows, fq.rows, |i, j| (-sq_dist(fp.row(i), fq.row(j))).exp());
    Ok(CorrelationMatrix { h })
}

/// Product of the row-normalized and column-normalized correlation.
pub fn dual_normalize(h: &CorrelationMatrix) -> CorrelationMatrix {
    let m = &h.h;
    let row_sums: Vec<f64> = m.row_iter().map(|r| r.sum()).collect();
    let col_sums: Vec<f64> = m.column_iter().map(|c| c.sum()).collect();
    let out = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        let v = m[(i, j)];
        (v / row_sums[i]) * (v / col_sums[j])
    });
    CorrelationMatrix { h: out }
}

/// The `n_c` globally largest entries, ties broken by (row, col).
pub fn topk_patch_matches(h_bar: &CorrelationMatrix, n_c: usize) -> Result<PatchMatchSet> {
    if n_c == 0 {
        return Err(Error::invalid("n_c must be at least 1"));
    }
    let m = &h_bar.h;
    let mut entries: Vec<(usize, usize, f64)> =
        (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| (i, j, m[(i, j)]))).collect();
    let by_score = |a: &(usize, usize, f64), b: &(usize, usize, f64)| {
        b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1))
    };
    let keep = n_c.min(entries.len());
    if keep < entries.len() {
        entries.select_nth_unstable_by(keep, by_score);
        entries.truncate(keep);
    }
    entries.sort_by(by_score);
    Ok(PatchMatchSet {
        pairs: entries.iter().map(|e| (e.0, e.1)).collect(),
        overlaps: entries.iter().map(|e| e.2).collect(),
    })
}

/// `C = fi fj^T / dim`.
pub fn cost_matrix(fi: &FeatureMatrix, fj: &FeatureMatrix) -> Result<DMatrix<f64>> {
    if fi.dim != fj.dim {
        return Err(Error::DimMismatch { expected: fi.dim, got: fj.dim });
    }
    let scale = 1.0 / fi.dim.max(1) as f64;
    Ok(DMatrix::from_fn(fi.rows, fj.rows, |a, b| {
        fi.row(a).iter().zip(fj.row(b)).map(|(x, y)| x * y).sum::<f64>() * scale
    }))
}

/// Appends a dustbin row and column filled with `alpha`.
pub fn augment_dustbin(c: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let (n, m) = c.shape();
    DMatrix::from_fn(n + 1, m + 1, |i, j| if i < n && j < m { c[(i, j)] } else { alpha })
}

fn marginals(n: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = vec![1.0; n + 1];
    a[n] = m as f64;
    let mut b = vec![1.0; m + 1];
    b[m] = n as f64;
    (a, b)
}

fn check_scores(c_star: &DMatrix<f64>, iters: usize) -> Result<()> {
    if iters == 0 {
        return Err(Error::invalid("sinkhorn needs at least one iteration"));
    }
    if c_star.nrows() < 2 || c_star.ncols() < 2 {
        return Err(Error::invalid("augmented score matrix must be at least 2x2"));
    }
    if !c_star.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("sinkhorn scores"));
    }
    Ok(())
}

/// Entropic optimal transport on a dustbin-augmented score matrix.
///
/// Every real row and column carries unit mass; the dustbin row carries `n`
/// and the dustbin column `m`. Returns probabilities (`log_domain == false`).
/// Scores with a moderate dynamic range are scaled directly on
/// `exp(C - max C)`; wider ranges iterate on log-potentials.
pub fn sinkhorn(c_star: &DMatrix<f64>, iters: usize) -> Result<AssignmentMatrix> {
    check_scores(c_star, iters)?;
    let max = c_star.max();
    let min = c_star.min();
    if max - min > SCALING_DOMAIN_RANGE {
        let mut log = sinkhorn_log(c_star, iters)?;
        log.z.apply(|v| *v = v.exp());
        log.log_domain = false;
        return Ok(log);
    }
    let (rows, cols) = c_star.shape();
    let (a, b) = marginals(rows - 1, cols - 1);
    let kernel = c_star.map(|v| (v - max).exp());
    let mut u = vec![1.0; rows];
    let mut v = vec![1.0; cols];
    for _ in 0..iters {
        // column-major storage: accumulate K v by columns
        let mut kv = vec![0.0; rows];
        for (j, col) in kernel.column_iter().enumerate() {
            let vj = v[j];
            for (acc, k) in kv.iter_mut().zip(col.iter()) {
                *acc += k * vj;
            }
        }
        for i in 0..rows {
            u[i] = a[i] / kv[i];
        }
        for (j, col) in kernel.column_iter().enumerate() {
            let s: f64 = col.iter().zip(&u).map(|(k, ui)| k * ui).sum();
            v[j] = b[j] / s;
        }
    }
    let z = DMatrix::from_fn(rows, cols, |i, j| u[i] * kernel[(i, j)] * v[j]);
    Ok(AssignmentMatrix { z, log_domain: false })
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn; returns log-probabilities (`log_domain == true`).
pub fn sinkhorn_log(c_star: &DMatrix<f64>, iters: usize) -> Result<AssignmentMatrix> {
    check_scores(c_star, iters)?;
    let (rows, cols) = c_star.shape();
    let (a, b) = marginals(rows - 1, cols - 1);
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; rows];
    let mut g = vec![0.0; cols];
    for _ in 0..iters {
        for i in 0..rows {
            f[i] = log_a[i] - log_sum_exp((0..cols).map(|j| c_star[(i, j)] + g[j]));
        }
        for j in 0..cols {
            g[j] = log_b[j] - log_sum_exp((0..rows).map(|i| c_star[(i, j)] + f[i]));
        }
    }
    let z = DMatrix::from_fn(rows, cols, |i, j| c_star[(i, j)] + f[i] + g[j]);
    Ok(AssignmentMatrix { z, log_domain: true })
}

/// Indices of the `k` largest values, ties to the lower index.
fn top_k_indices(values: impl Iterator<Item = f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<(usize, f64)> = values.enumerate().collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.into_iter().map(|x| x.0).collect()
}

/// Pairs `(a, b)` where `b` is in row `a`'s top-k and `a` is in column `b`'s
/// top-k, over the real block. Sorted by (a, b).
pub fn mutual_topk_point_matches(z: &AssignmentMatrix, k: usize) -> Result<Vec<(usize, usize)>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let (n, m) = z.real_shape();
    let mut in_col_top = vec![false; n * m];
    for b in 0..m {
        for a in top_k_indices((0..n).map(|a| z.z[(a, b)]), k) {
            in_col_top[a * m + b] = true;
        }
    }
    let mut out = Vec::new();
    for a in 0..n {
        let mut cols = top_k_indices((0..m).map(|b| z.z[(a, b)]), k);
        cols.sort_unstable();
        out.extend(cols.into_iter().filter(|&b| in_col_top[a * m + b]).map(|b| (a, b)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureLevel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(rng: &mut impl Rng, rows: usize, dim: usize) -> FeatureMatrix {
        FeatureMatrix::new(rows, dim, (0..rows * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(), FeatureLevel::Patch)
            .unwrap()
    }

    #[test]
    fn correlation_values() {
        let fp = FeatureMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]], FeatureLevel::Patch).unwrap();
        let fq = FeatureMatrix::from_rows(&[vec![0.0, 0.0]], FeatureLevel::Patch).unwrap();
        let h = gaussian_correlation(&fp, &fq).unwrap();
        assert_eq!(h.h[(0, 0)], 1.0);
        assert!((h.h[(1, 0)] - (-1f64).exp()).abs() < 1e-15);
        let bad = FeatureMatrix::from_rows(&[vec![0.0]], FeatureLevel::Patch).unwrap();
        assert!(gaussian_correlation(&fp, &bad).is_err());
    }

    #[test]
    fn correlation_oracle_and_transpose_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fp = random_features(&mut rng, 5, 4);
        let fq = random_features(&mut rng, 7, 4);
        let h = gaussian_correlation(&fp, &fq).unwrap();
        for i in 0..5 {
            for j in 0..7 {
                let mut s = 0.0;
                for d in 0..4 {
                    s += (fp.row(i)[d] - fq.row(j)[d]).powi(2);
                }
                assert!((h.h[(i, j)] - (-s).exp()).abs() < 1e-12);
            }
        }
        let ht = gaussian_correlation(&fq, &fp).unwrap();
        assert!((h.h.transpose() - ht.h).abs().max() < 1e-12);
    }

    #[test]
    fn dual_normalization() {
        let one = dual_normalize(&CorrelationMatrix { h: DMatrix::from_element(1, 1, 0.3) });
        assert!((one.h[(0, 0)] - 1.0).abs() < 1e-15);
        let eps = 1e-12;
        let near_id = dual_normalize(&CorrelationMatrix { h: DMatrix::from_row_slice(2, 2, &[1.0, eps, eps, 1.0]) });
        assert!((near_id.h.clone() - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = DMatrix::from_fn(4, 6, |_, _| rng.gen_range(0.01..1.0));
        let out = dual_normalize(&CorrelationMatrix { h: h.clone() });
        // two-pass oracle: row-normalized and column-normalized copies, multiplied
        let mut rown = h.clone();
        for i in 0..4 {
            let s: f64 = (0..6).map(|j| h[(i, j)]).sum();
            for j in 0..6 {
                rown[(i, j)] /= s;
            }
        }
        let mut coln = h.clone();
        for j in 0..6 {
            let s: f64 = (0..4).map(|i| h[(i, j)]).sum();
            for i in 0..4 {
                coln[(i, j)] /= s;
            }
        }
        assert!((out.h.clone() - rown.component_mul(&coln)).abs().max() < 1e-12);
        assert!(out.h.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn topk_selection() {
        let mut m = DMatrix::from_element(3, 4, 0.1);
        m[(2, 3)] = 0.9;
        let one = topk_patch_matches(&CorrelationMatrix { h: m.clone() }, 1).unwrap();
        assert_eq!(one.pairs, vec![(2, 3)]);
        let all = topk_patch_matches(&CorrelationMatrix { h: m }, 100).unwrap();
        assert_eq!(all.pairs.len(), 12);
        assert_eq!(all.pairs[0], (2, 3));
        assert_eq!(all.pairs[1], (0, 0));
        assert!(all.overlaps.windows(2).all(|w| w[0] >= w[1]));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let h = DMatrix::from_fn(8, 9, |_, _| (rng.gen_range(0..20) as f64) / 20.0);
            let got = topk_patch_matches(&CorrelationMatrix { h: h.clone() }, 10).unwrap();
            let mut all: Vec<(usize, usize)> = (0..8).flat_map(|i| (0..9).map(move |j| (i, j))).collect();
            all.sort_by(|a, b| h[*b].total_cmp(&h[*a]).then(a.cmp(b)));
            assert_eq!(got.pairs, all[..10].to_vec());
        }
    }

    #[test]
    fn cost_matrix_cases() {
        let eye = FeatureMatrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], FeatureLevel::Point).unwrap();
        let c = cost_matrix(&eye, &eye).unwrap();
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[1.0 / 3.0, 0.0, 0.0, 1.0 / 3.0]));
        let zero = FeatureMatrix::zeros(2, 3, FeatureLevel::Point);
        assert_eq!(cost_matrix(&zero, &eye).unwrap().abs().max(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fi = random_features(&mut rng, 3, 5);
        let fj = random_features(&mut rng, 4, 5);
        let c = cost_matrix(&fi, &fj).unwrap();
        for a in 0..3 {
            for b in 0..4 {
                let mut s = 0.0;
                for d in 0..5 {
                    s += fi.row(a)[d] * fj.row(b)[d];
                }
                assert!((c[(a, b)] - s / 5.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dustbin_border() {
        assert_eq!(augment_dustbin(&DMatrix::zeros(0, 0), 2.5), DMatrix::from_element(1, 1, 2.5));
        let out = augment_dustbin(&DMatrix::zeros(2, 2), 1.0);
        assert_eq!(out, DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]));
        let c = DMatrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
        assert_eq!(augment_dustbin(&c, -1.0).view((0, 0), (3, 2)), c);
    }

    #[test]
    fn sinkhorn_two_by_two_fixed_point() {
        // [[s, a], [a, a]] with unit marginals is [[p, 1-p], [1-p, p]] where
        // p^2 / (1-p)^2 = exp(s - a)
        for (s, alpha) in [(0.3, 1.0), (2.0, 0.0), (-1.5, 0.7)] {
            let c = DMatrix::from_row_slice(2, 2, &[s, alpha, alpha, alpha]);
            let z = sinkhorn(&c, 200).unwrap();
            let p = 1.0 / (1.0 + (-(s - alpha) / 2.0f64).exp());
            assert!((z.z[(0, 0)] - p).abs() < 1e-6);
            assert!((z.z[(0, 1)] - (1.0 - p)).abs() < 1e-6);
            assert!((z.z[(1, 0)] - (1.0 - p)).abs() < 1e-6);
            assert!((z.z[(1, 1)] - p).abs() < 1e-6);
        }
    }

    #[test]
    fn sinkhorn_uniform_and_diagonal() {
        let z = sinkhorn(&DMatrix::from_element(4, 5, 0.7), 100).unwrap();
        let v = z.z[(0, 0)];
        for a in 0..3 {
            for b in 0..4 {
                assert!((z.z[(a, b)] - v).abs() < 1e-12);
            }
        }
        let mut c = DMatrix::zeros(4, 4);
        for i in 0..4 {
            c[(i, i)] = 10.0;
        }
        let z = sinkhorn(&augment_dustbin(&c, 1.0), 100).unwrap();
        for a in 0..4 {
            let best = (0..5).max_by(|&x, &y| z.z[(a, x)].total_cmp(&z.z[(a, y)])).unwrap();
            assert_eq!(best, a);
        }
    }

    #[test]
    fn log_and_scaling_domains_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = DMatrix::from_fn(9, 7, |_, _| rng.gen_range(-20.0..20.0));
        let a = sinkhorn(&c, 100).unwrap();
        let b = sinkhorn_log(&c, 100).unwrap();
        for i in 0..9 {
            for j in 0..7 {
                assert!((a.z[(i, j)] - b.prob(i, j)).abs() < 1e-9);
            }
        }
        let wide = c.map(|v| v * 20.0);
        let z = sinkhorn(&wide, 50).unwrap();
        assert!(z.z.iter().all(|v| v.is_finite()));
    }

    fn marginal_residual(z: &AssignmentMatrix) -> f64 {
        let (n, m) = z.real_shape();
        let (a, b) = marginals(n, m);
        let rows = (0..=n).map(|i| ((0..=m).map(|j| z.prob(i, j)).sum::<f64>() - a[i]).abs());
        let cols = (0..=m).map(|j| ((0..=n).map(|i| z.prob(i, j)).sum::<f64>() - b[j]).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }

    #[test]
    fn marginals_on_well_conditioned_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let (r, c) = (rng.gen_range(2..=64), rng.gen_range(2..=64));
            let scores = DMatrix::from_fn(r, c, |_, _| rng.gen_range(-2.0..=2.0));
            assert!(marginal_residual(&sinkhorn(&scores, 100).unwrap()) <= 1e-5);
        }
    }

    #[test]
    fn constant_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let (r, c) = (rng.gen_range(2..=40), rng.gen_range(2..=40));
            let scores = DMatrix::from_fn(r, c, |_, _| rng.gen_range(-20.0..=20.0));
            let shift = rng.gen_range(-30.0..30.0);
            let a = sinkhorn(&scores, 100).unwrap();
            let b = sinkhorn(&scores.map(|v| v + shift), 100).unwrap();
            assert!(a.z.iter().zip(b.z.iter()).all(|(x, y)| (x - y).abs() <= 1e-6));
        }
    }

    #[test]
    fn sinkhorn_rejects_non_finite() {
        let mut c = DMatrix::zeros(3, 3);
        c[(1, 1)] = f64::NAN;
        assert!(matches!(sinkhorn(&c, 10), Err(Error::NonFinite(_))));
    }

    fn brute_mutual(z: &DMatrix<f64>, k: usize) -> Vec<(usize, usize)> {
        let (n, m) = (z.nrows() - 1, z.ncols() - 1);
        let rank_in_row = |a: usize, b: usize| {
            (0..m).filter(|&c| z[(a, c)] > z[(a, b)] || (z[(a, c)] == z[(a, b)] && c < b)).count()
        };
        let rank_in_col = |a: usize, b: usize| {
            (0..n).filter(|&r| z[(r, b)] > z[(a, b)] || (z[(r, b)] == z[(a, b)] && r < a)).count()
        };
        let mut out = Vec::new();
        for a in 0..n {
            for b in 0..m {
                if rank_in_row(a, b) < k && rank_in_col(a, b) < k {
                    out.push((a, b));
                }
            }
        }
        out
    }

    #[test]
    fn mutual_topk_cases() {
        let mut z = DMatrix::from_element(4, 4, 0.1);
        for i in 0..3 {
            z[(i, i)] = 0.8;
        }
        let am = AssignmentMatrix { z, log_domain: false };
        assert_eq!(mutual_topk_point_matches(&am, 1).unwrap(), vec![(0, 0), (1, 1), (2, 2)]);

        let flat = AssignmentMatrix { z: DMatrix::from_element(5, 4, 0.2), log_domain: false };
        let got = mutual_topk_point_matches(&flat, 1).unwrap();
        assert_eq!(got, brute_mutual(&flat.z, 1));
        assert_eq!(got, vec![(0, 0)]);
        assert_eq!(mutual_topk_point_matches(&flat, 4).unwrap().len(), 12);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for k in 1..5 {
            let z = DMatrix::from_fn(21, 21, |_, _| rng.gen_range(0..50) as f64);
            let am = AssignmentMatrix { z: z.clone(), log_domain: false };
            assert_eq!(mutual_topk_point_matches(&am, k).unwrap(), brute_mutual(&z, k));
        }
    }
}
