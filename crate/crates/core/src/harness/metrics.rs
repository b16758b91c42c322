//! Scalar summaries of adaptation trajectories.

use crate::error::{Error, Result};

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n − 1); 0 for fewer than two values.
pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
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

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Degenerate(
            "spearman needs two equal-length series of at least 2".into(),
        ));
    }
    let (a, b) = (average_ranks(x), average_ranks(y));
    let (ma, mb) = (mean(&a), mean(&b));
    let cov: f64 = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum();
    let va: f64 = a.iter().map(|p| (p - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|q| (q - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Degenerate("spearman of a constant series".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

fn tail(traj: &[f64], window: usize) -> &[f64] {
    &traj[traj.len().saturating_sub(window)..]
}

/// Mean accuracy over the last `window` updates.
pub fn final_accuracy(traj: &[f64], window: usize) -> f64 {
    mean(tail(traj, window))
}

/// Frames until the trajectory first reaches `fraction` of its final accuracy.
///
/// Entry `k` of `traj` is the accuracy after `(k + 1)·n_t` frames. Returns 0
/// if the starting accuracy already meets the threshold, and the full stream
/// length if it is never met.
pub fn frames_to_threshold(
    traj: &[f64],
    n_t: usize,
    start: f64,
    fraction: f64,
    window: usize,
) -> usize {
    let threshold = fraction * final_accuracy(traj, window);
    if start >= threshold {
        return 0;
    }
    match traj.iter().position(|&a| a >= threshold) {
        Some(k) => (k + 1) * n_t,
        None => traj.len() * n_t,
    }
}

/// Mean absolute step-to-step change over the last `window` updates.
pub fn smoothness(traj: &[f64], window: usize) -> f64 {
    let t = tail(traj, window);
    if t.len() < 2 {
        return 0.0;
    }
    t.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (t.len() - 1) as f64
}

/// Per-update mean and sample standard deviation across equally long trajectories.
pub fn across_runs(trajs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let len = trajs
        .first()
        .map(Vec::len)
        .ok_or(Error::Empty("trajectories"))?;
    if trajs.iter().any(|t| t.len() != len) {
        return Err(Error::Degenerate(
            "trajectories of different lengths".into(),
        ));
    }
    Ok((0..len)
        .map(|k| {
            let col: Vec<f64> = trajs.iter().map(|t| t[k]).collect();
            (mean(&col), sample_std(&col))
        })
        .unzip())
}

/// Spread of the adapted accuracy once transients have decayed: the mean
/// across-run standard deviation over the second half of the updates.
pub fn post_convergence_std(std_curve: &[f64]) -> f64 {
    mean(&std_curve[std_curve.len() / 2..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spearman_cases() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman(&x, &[10.0, 20.0, 30.0, 40.0, 50.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        // Classic formula 1 − 6Σd²/(n(n²−1)) for untied ranks: d = (0,0,1,−1,0) → 1 − 12/120.
        assert!((spearman(&x, &[1.0, 2.0, 4.0, 3.0, 5.0]).unwrap() - 0.9).abs() < 1e-12);
        assert!(spearman(&x, &[1.0; 5]).is_err());
        assert!(spearman(&x, &[1.0]).is_err());
    }

    #[test]
    fn ties_share_average_rank() {
        assert_eq!(
            average_ranks(&[3.0, 1.0, 3.0, 2.0]),
            vec![3.5, 1.0, 3.5, 2.0]
        );
    }

    #[test]
    fn threshold_frames() {
        let traj = [0.5, 0.8, 0.9, 1.0, 1.0];
        // Final over the last 2 updates = 1.0; threshold 0.95 first met at update 4.
        assert_eq!(frames_to_threshold(&traj, 10, 0.4, 0.95, 2), 40);
        assert_eq!(frames_to_threshold(&traj, 10, 0.96, 0.95, 2), 0);
        assert_eq!(frames_to_threshold(&[0.1, 0.1], 5, 0.0, 2.0, 2), 10);
    }

    #[test]
    fn smoothness_and_spread() {
        assert!((smoothness(&[0.0, 9.0, 0.5, 0.7, 0.6], 3) - 0.15).abs() < 1e-12);
        let (m, s) = across_runs(&[vec![1.0, 2.0], vec![3.0, 2.0]]).unwrap();
        assert_eq!(m, vec![2.0, 2.0]);
        assert!((s[0] - 2f64.sqrt()).abs() < 1e-15 && s[1] == 0.0);
        assert_eq!(post_convergence_std(&[9.0, 9.0, 1.0, 3.0]), 2.0);
        assert!(across_runs(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(across_runs(&[]).is_err());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    proptest! {
        #[test]
        fn spearman_is_invariant_under_monotone_maps(v in prop::collection::vec(-100.0f64..100.0, 3..20)) {
            let x: Vec<f64> = (0..v.len()).map(|i| i as f64).collect();
            let y: Vec<f64> = v.iter().map(|a| a.powi(3) + 2.0).collect();
            if let (Ok(a), Ok(b)) = (spearman(&x, &v), spearman(&x, &y)) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&a));
            }
        }
    }
}
