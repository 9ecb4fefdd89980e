//! Small statistics helpers for experiment verdicts.

/// Standard normal CDF via the Abramowitz-Stegun erf approximation
/// (absolute error below 1.5e-7).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}

/// Two-sided Mann-Whitney rank-sum test with tie correction and normal
/// approximation. Returns the p-value; identical-variance degenerate cases
/// (all observations tied) report p = 1.
pub fn rank_sum_p_two_sided(xs: &[f64], ys: &[f64]) -> f64 {
    let n1 = xs.len();
    let n2 = ys.len();
    assert!(n1 > 0 && n2 > 0, "rank test needs data in both groups");
    let n = n1 + n2;

    let mut combined: Vec<(f64, usize)> = xs
        .iter()
        .map(|&v| (v, 0usize))
        .chain(ys.iter().map(|&v| (v, 1usize)))
        .collect();
    combined.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Average ranks across ties; accumulate the tie-correction term.
    let mut ranks = vec![0.0; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && combined[j + 1].0 == combined[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for (slot, rank) in ranks.iter_mut().enumerate().take(j + 1).skip(i) {
            let _ = slot;
            *rank = avg_rank;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }

    let r1: f64 = combined
        .iter()
        .zip(&ranks)
        .filter(|((_, group), _)| *group == 0)
        .map(|(_, r)| r)
        .sum();
    let u1 = r1 - (n1 * (n1 + 1)) as f64 / 2.0;
    let mu = (n1 * n2) as f64 / 2.0;
    let nf = n as f64;
    let var = (n1 * n2) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    // Continuity correction toward the mean.
    let diff = u1 - mu;
    let z = (diff.abs() - 0.5).max(0.0) / var.sqrt();
    2.0 * (1.0 - normal_cdf(z))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Baseline-normalized score: (candidate - baseline) / (reference - baseline).
/// 1 means matching the reference, 0 means no better than the baseline.
pub fn normalized_score(candidate: f64, baseline: f64, reference: f64) -> f64 {
    (candidate - baseline) / (reference - baseline)
}
