//! Small numerical helpers shared across modules.

/// Neumaier compensated summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.carry);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Standard normal distribution function.
pub fn normal_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t / std::f64::consts::SQRT_2)
}

/// `log(Σ exp(x_i))` without overflow.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Root of a continuous function on a sign-changing bracket: bisection down to a
/// coarse width, then secant steps safeguarded by the bracket.
pub fn bracketed_root<F>(mut f: F, mut lo: f64, mut hi: f64, f_tol: f64) -> crate::Result<f64>
where
    F: FnMut(f64) -> crate::Result<f64>,
{
    let mut f_lo = f(lo)?;
    let f_hi = f(hi)?;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(crate::Error::OutOfRange(format!(
            "no sign change on [{lo}, {hi}]"
        )));
    }
    let mut f_hi = f_hi;
    let mut it = 0;
    while hi - lo > 1e-6 * (1.0 + lo.abs()) && it < 200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm.signum() == f_lo.signum() {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
            f_hi = fm;
        }
        it += 1;
    }
    let (mut a, mut fa, mut b, mut fb) = (lo, f_lo, hi, f_hi);
    for _ in 0..100 {
        let mut x = b - fb * (b - a) / (fb - fa);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let fx = f(x)?;
        if fx.abs() <= f_tol || hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            return Ok(x);
        }
        if fx.signum() == f_lo.signum() {
            lo = x;
            f_lo = fx;
        } else {
            hi = x;
        }
        a = b;
        fa = fb;
        b = x;
        fb = fx;
    }
    Ok(b)
}
