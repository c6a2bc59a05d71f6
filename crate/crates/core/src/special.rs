//! Special functions: log-gamma, digamma, and a table of unsigned Stirling
//! numbers of the first kind stored in log space.

use crate::error::{Error, Result};

/// Stirling-series coefficients B_{2k}/(2k(2k-1)) for ln Γ.
const LGAMMA_COEF: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
];

/// B_{2k}/(2k) for the digamma asymptotic series.
const DIGAMMA_COEF: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

const HALF_LN_2PI: f64 = 0.918938533204672741780329736406;

/// ln Γ(x) for x > 0, via recurrence shift to x ≥ 10 and the Stirling series.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("log_gamma requires x > 0, got {x}")));
    }
    let mut shift = 0.0;
    let mut z = x;
    while z < 10.0 {
        shift -= z.ln();
        z += 1.0;
    }
    let mut series = 0.0;
    let inv2 = 1.0 / (z * z);
    let mut term = 1.0 / z;
    for &c in &LGAMMA_COEF {
        series += c * term;
        term *= inv2;
    }
    Ok(shift + (z - 0.5) * z.ln() - z + HALF_LN_2PI + series)
}

/// Digamma ψ(x) = d/dx ln Γ(x) for x > 0, same shift-then-series scheme.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("digamma requires x > 0, got {x}")));
    }
    let mut result = 0.0;
    let mut z = x;
    while z < 10.0 {
        result -= 1.0 / z;
        z += 1.0;
    }
    result += z.ln() - 0.5 / z;
    let inv2 = 1.0 / (z * z);
    let mut term = inv2;
    for &c in &DIGAMMA_COEF {
        result -= c * term;
        term *= inv2;
    }
    Ok(result)
}

/// log(e^a + e^b) without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Triangular table of log |s(n, ℓ)| for 0 ≤ ℓ ≤ n ≤ max_n, where |s(n, ℓ)|
/// are unsigned Stirling numbers of the first kind. Log storage keeps the
/// table usable beyond n ≈ 170 where the raw numbers overflow f64.
///
/// Recurrence: |s(n+1, ℓ)| = n·|s(n, ℓ)| + |s(n, ℓ-1)|, with |s(0,0)| = 1 and
/// |s(n, 0)| = 0 for n ≥ 1.
#[derive(Debug, Clone)]
pub struct StirlingTable {
    max_n: usize,
    rows: Vec<Vec<f64>>,
}

impl StirlingTable {
    pub fn new(max_n: usize) -> Self {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(max_n + 1);
        rows.push(vec![0.0]); // ln |s(0,0)| = ln 1
        for n in 1..=max_n {
            let prev = &rows[n - 1];
            let mut row = vec![f64::NEG_INFINITY; n + 1];
            let ln_nm1 = ((n - 1) as f64).ln();
            for ell in 1..=n {
                let carry = if ell <= n - 1 {
                    ln_nm1 + prev[ell]
                } else {
                    f64::NEG_INFINITY
                };
                row[ell] = log_add_exp(carry, prev[ell - 1]);
            }
            if n == 1 {
                // ln(0) carry path is NEG_INFINITY already; |s(1,1)| = 1
                row[1] = 0.0;
            }
            rows.push(row);
        }
        StirlingTable { max_n, rows }
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    /// log |s(n, ℓ)|; NEG_INFINITY where the number is zero.
    pub fn log_stirling(&self, n: usize, ell: usize) -> Result<f64> {
        if n > self.max_n || ell > n {
            return Err(Error::Domain(format!(
                "Stirling index out of range: n={n}, ell={ell}, max_n={}",
                self.max_n
            )));
        }
        Ok(self.rows[n][ell])
    }
}
