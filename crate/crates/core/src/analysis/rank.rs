use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} samples, got {got}")]
    TooShort { need: usize, got: usize },
}

fn check(a: &[f64], b: &[f64], need: usize) -> Result<(), RankError> {
    if a.len() != b.len() {
        return Err(RankError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < need {
        return Err(RankError::TooShort { need, got: a.len() });
    }
    Ok(())
}

/// 1-based ranks in ascending order; tied values share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        // a constant ranking carries no order information
        return if sxx == syy { 1.0 } else { 0.0 };
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman's ρ of two score or rank vectors: the closed form for tie-free
/// inputs, Pearson correlation of average ranks otherwise.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, RankError> {
    check(a, b, 2)?;
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let tie_free = |r: &[f64]| r.iter().all(|v| v.fract() == 0.0) && {
        let mut s = r.to_vec();
        s.sort_by(f64::total_cmp);
        s.windows(2).all(|w| w[0] != w[1])
    };
    if tie_free(&ra) && tie_free(&rb) {
        let n = a.len() as f64;
        let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
        return Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)));
    }
    Ok(pearson(&ra, &rb))
}

/// Kendall's τ-a. Equal values are ordered by position.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64, RankError> {
    check(a, b, 2)?;
    let n = a.len();
    let order = |v: &[f64], i: usize, j: usize| v[i].total_cmp(&v[j]).then(i.cmp(&j));
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            if order(a, i, j) == order(b, i, j) {
                s += 1;
            } else {
                s -= 1;
            }
        }
    }
    Ok(s as f64 / (n * (n - 1) / 2) as f64)
}

/// Candidate indices by descending score; equal scores keep index order.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    idx
}

/// Whether the full-resolution best candidate is among the `k` best under
/// the low-resolution scoring. For `k = 1` this is "same best".
pub fn retained(lowres: &[f64], fullres: &[f64], k: usize) -> Result<bool, RankError> {
    check(lowres, fullres, k.max(1))?;
    let best = ranking(fullres)[0];
    Ok(ranking(lowres)[..k.max(1)].contains(&best))
}

/// Fraction of trials where [`retained`] holds.
pub fn topk_retention(lowres: &[Vec<f64>], fullres: &[Vec<f64>], k: usize) -> Result<f64, RankError> {
    if lowres.len() != fullres.len() {
        return Err(RankError::LengthMismatch(lowres.len(), fullres.len()));
    }
    if lowres.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (l, f) in lowres.iter().zip(fullres) {
        if retained(l, f, k)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / lowres.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_values() {
        assert!((spearman(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap() - 0.8).abs() < 1e-12);
        assert!((kendall_tau(&[1., 2., 3.], &[1., 3., 2.]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(spearman(&[1., 2., 3.], &[3., 2., 1.]).unwrap(), -1.0);
        assert_eq!(kendall_tau(&[1., 2., 3.], &[3., 2., 1.]).unwrap(), -1.0);
    }

    #[test]
    fn ties_use_average_ranks() {
        assert_eq!(average_ranks(&[0.5, 0.1, 0.5, 0.9]), vec![2.5, 1.0, 2.5, 4.0]);
        let r = spearman(&[1., 1., 2.], &[1., 2., 3.]).unwrap();
        assert!((r - 0.866_025_403_784_438_6).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(spearman(&[1.], &[1.]), Err(RankError::TooShort { need: 2, got: 1 }));
        assert_eq!(kendall_tau(&[1., 2.], &[1.]), Err(RankError::LengthMismatch(2, 1)));
        assert!(topk_retention(&[vec![1.0]], &[], 1).is_err());
    }

    #[test]
    fn retention_cases() {
        let a = vec![0.1, 0.4, 0.3, 0.2];
        let rev: Vec<f64> = a.iter().map(|v| -v).collect();
        assert_eq!(topk_retention(std::slice::from_ref(&a), std::slice::from_ref(&a), 1).unwrap(), 1.0);
        assert_eq!(topk_retention(std::slice::from_ref(&a), std::slice::from_ref(&a), 3).unwrap(), 1.0);
        assert_eq!(topk_retention(std::slice::from_ref(&a), &[rev], 1).unwrap(), 0.0);
    }
}
