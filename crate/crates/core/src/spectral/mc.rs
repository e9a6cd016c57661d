use serde::{Deserialize, Serialize};

use crate::model::{mat_mul, MatrixQLaw};
use crate::numeric::log_sum_exp;
use crate::simulate::{par_map, stream_rng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaEstimate {
    pub kappa: f64,
    pub std_error: f64,
    pub n: usize,
    pub samples: usize,
}

/// `(E‖Π_n‖^s)^{1/n}` by Monte Carlo, accumulated in the log domain, with a
/// delta-method standard error. The estimator is biased at fixed `n`
/// (`E‖Π_n‖^s ≤ c κ(s)^n`) and consistent as `n` grows.
pub fn kappa_mc(law: &MatrixQLaw, s: f64, n: usize, samples: usize, seed: u64) -> Result<KappaEstimate> {
    if !(s >= 0.0) || n == 0 || samples == 0 {
        return Err(Error::Domain(format!("kappa_mc needs s >= 0, n >= 1, samples >= 1 (s={s}, n={n})")));
    }
    if let Some(l) = law.moment_limit() {
        if s >= l {
            return Err(Error::OutOfRange(format!("s = {s} beyond the moment limit {l}")));
        }
    }
    let d = law.dim();
    let logs: Vec<f64> = par_map(samples, |i| {
        let mut rng = stream_rng(seed, i);
        let mut m = vec![0.0; d * d];
        let mut q = vec![0.0; d];
        let mut prod = vec![0.0; d * d];
        let mut tmp = vec![0.0; d * d];
        let mut log_scale = 0.0;
        law.sample_into(&mut rng, &mut prod, &mut q);
        for _ in 1..n {
            law.sample_into(&mut rng, &mut m, &mut q);
            mat_mul(d, &prod, &m, &mut tmp);
            let top = tmp.iter().copied().fold(0.0, f64::max);
            if top <= 0.0 {
                return f64::NEG_INFINITY;
            }
            log_scale += top.ln();
            prod.iter_mut().zip(&tmp).for_each(|(p, t)| *p = t / top);
        }
        let norm = (0..d).map(|j| (0..d).map(|i| prod[i * d + j]).sum::<f64>()).fold(0.0, f64::max);
        if s == 0.0 {
            0.0
        } else {
            s * (log_scale + norm.ln())
        }
    });
    let big = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ln_mean = log_sum_exp(&logs) - (samples as f64).ln();
    let kappa = (ln_mean / n as f64).exp();
    let std_error = if samples > 1 && big.is_finite() {
        let w: Vec<f64> = logs.iter().map(|l| (l - big).exp()).collect();
        let mean = w.iter().sum::<f64>() / samples as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
        let rel = (var / samples as f64).sqrt() / mean;
        kappa * rel / n as f64
    } else {
        0.0
    };
    Ok(KappaEstimate { kappa, std_error, n, samples })
}
