/// `sup_x |F̂(x) − F(x)|` for equally weighted samples.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    weighted_ks(samples, &vec![1.0; samples.len()], cdf)
}

/// Kolmogorov-Smirnov distance of the weighted empirical CDF (weights self-normalized).
/// Tied sample values are merged before comparing both sides of each jump.
pub fn weighted_ks(samples: &[f64], weights: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    assert_eq!(samples.len(), weights.len());
    let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| weights[i] > 0.0).collect();
    idx.sort_by(|&a, &b| samples[a].partial_cmp(&samples[b]).unwrap());
    let total: f64 = idx.iter().map(|&i| weights[i]).sum();
    if idx.is_empty() || !(total > 0.0) {
        return f64::NAN;
    }
    let mut before = 0.0;
    let mut d: f64 = 0.0;
    let mut k = 0;
    while k < idx.len() {
        let x = samples[idx[k]];
        let mut mass = 0.0;
        while k < idx.len() && samples[idx[k]] == x {
            mass += weights[idx[k]];
            k += 1;
        }
        let f = cdf(x);
        let after = before + mass / total;
        d = d.max((before - f).abs()).max((after - f).abs());
        before = after;
    }
    d
}

/// Hill estimator of the tail index from the `k` largest of `log X`.
pub fn hill_estimator(log_samples: &[f64], k: usize) -> f64 {
    let mut v: Vec<f64> = log_samples.iter().copied().filter(|x| x.is_finite()).collect();
    assert!(k >= 1 && k < v.len(), "need 1 <= k < number of samples");
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let threshold = v[k];
    let sum: f64 = v[..k].iter().map(|x| x - threshold).sum();
    k as f64 / sum
}

/// Self-normalized weighted proportion with its delta-method standard error.
pub(crate) fn weighted_fraction(hits: impl Iterator<Item = (bool, f64)> + Clone) -> (f64, f64) {
    let total: f64 = hits.clone().map(|(_, w)| w).sum();
    let p = hits.clone().filter(|h| h.0).map(|(_, w)| w).sum::<f64>() / total;
    let var: f64 = hits.map(|(h, w)| (w * (f64::from(u8::from(h)) - p)).powi(2)).sum::<f64>() / (total * total);
    (p, var.sqrt())
}

/// Mean and standard error.
pub(crate) fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

pub(crate) fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    s * s / s2
}
