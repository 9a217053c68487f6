//! Two-sample distances and the brightness uniformity statistic.

use rand::seq::index;

use crate::data::SampleBatch;
use crate::error::{Error, Result};
use crate::rng::{stream, substream};

fn check_pair(a: &SampleBatch, b: &SampleBatch) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Param("metric needs nonempty sample sets".into()));
    }
    if a.dim != b.dim {
        return Err(Error::Shape(format!(
            "sample dimensions differ: {} vs {}",
            a.dim, b.dim
        )));
    }
    Ok(())
}

/// Minimum-cost perfect matching of a square cost matrix (row-major).
/// Returns `assignment[row] = column`.
///
/// Shortest augmenting paths with row/column potentials, `O(m^3)`.
pub fn solve_assignment(cost: &[f64], m: usize) -> Vec<usize> {
    assert_eq!(cost.len(), m * m, "cost matrix must be m x m");
    // 1-based internally; column 0 is the virtual source.
    let mut u = vec![0.0; m + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0; m + 1];
    let mut used = vec![false; m + 1];
    for i in 1..=m {
        owner[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = &cost[(i0 - 1) * m..i0 * m];
            let ui0 = u[i0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = row[j - 1] - ui0 - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; m];
    for j in 1..=m {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Exact 1-Wasserstein distance between equal-size seeded subsamples of
/// `a` and `b` (without replacement, `min(subsample, |a|, |b|)` points each).
/// The mean matched Euclidean distance is returned.
pub fn wasserstein1(a: &SampleBatch, b: &SampleBatch, subsample: usize, seed: u64) -> Result<f64> {
    check_pair(a, b)?;
    let m = subsample.min(a.rows()).min(b.rows());
    if m == 0 {
        return Err(Error::Param("subsample size must be positive".into()));
    }
    let mut rng = substream(seed, stream::SUBSAMPLE);
    let ia = index::sample(&mut rng, a.rows(), m).into_vec();
    // Equal-size inputs share one index draw, so identical sets score zero.
    let ib = if a.rows() == b.rows() {
        ia.clone()
    } else {
        index::sample(&mut rng, b.rows(), m).into_vec()
    };
    let mut cost = Vec::with_capacity(m * m);
    for &i in &ia {
        let ra = a.row(i);
        cost.extend(ib.iter().map(|&j| euclid(ra, b.row(j))));
    }
    let assign = solve_assignment(&cost, m);
    let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * m + j]).sum();
    Ok(total / m as f64)
}

/// Mean of `exp(-||x - y||^2 / (2 h^2))` over all pairs.
fn kernel_mean(a: &SampleBatch, b: &SampleBatch, h: f64) -> f64 {
    const BLOCK: usize = 256;
    let d = a.dim;
    let norms = |s: &SampleBatch| -> Vec<f64> {
        (0..s.rows())
            .map(|i| s.row(i).iter().map(|v| v * v).sum())
            .collect()
    };
    let (na, nb) = (norms(a), norms(b));
    let scale = -0.5 / (h * h);
    let mut total = 0.0;
    let mut gram = vec![0.0; BLOCK * b.rows()];
    for start in (0..a.rows()).step_by(BLOCK) {
        let rows = BLOCK.min(a.rows() - start);
        // G = A_block B^T
        unsafe {
            matrixmultiply::dgemm(
                rows,
                d,
                b.rows(),
                1.0,
                a.data[start * d..].as_ptr(),
                d as isize,
                1,
                b.data.as_ptr(),
                1,
                d as isize,
                0.0,
                gram.as_mut_ptr(),
                b.rows() as isize,
                1,
            );
        }
        for r in 0..rows {
            let g = &gram[r * b.rows()..(r + 1) * b.rows()];
            let mut row_sum = 0.0;
            for (j, gv) in g.iter().enumerate() {
                let sq = (na[start + r] + nb[j] - 2.0 * gv).max(0.0);
                row_sum += (scale * sq).exp();
            }
            total += row_sum;
        }
    }
    total / (a.rows() as f64 * b.rows() as f64)
}

/// Biased (V-statistic) maximum mean discrepancy with a Gaussian kernel of
/// bandwidth `h`; returns `sqrt(max(0, MMD^2))`.
pub fn mmd(a: &SampleBatch, b: &SampleBatch, bandwidth: f64) -> Result<f64> {
    check_pair(a, b)?;
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Param(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let aa = kernel_mean(a, a, bandwidth);
    let bb = kernel_mean(b, b, bandwidth);
    let ab = kernel_mean(a, b, bandwidth);
    Ok((aa + bb - 2.0 * ab).max(0.0).sqrt())
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `values` and `U(-k, k)`.
pub fn ks_vs_uniform(values: &[f64], k: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Param("KS statistic needs at least one value".into()));
    }
    if !(k > 0.0) {
        return Err(Error::Param(format!("k must be positive, got {k}")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("KS input".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = ((x + k) / (2.0 * k)).clamp(0.0, 1.0);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}
