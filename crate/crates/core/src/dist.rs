//! Exact PMFs and samplers for the discrete and continuous distributions the
//! Gibbs updates require: gamma, beta, Dirichlet, multinomial, negative
//! binomial, Chinese restaurant table (CRT), logarithmic, sum-logarithmic,
//! and CRP partitions.
//!
//! All samplers are pure functions of their parameters and an [`RngStream`];
//! they are safe to call concurrently with distinct streams.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::special::{log_gamma, StirlingTable};
use rand_distr::{Distribution, Poisson, StandardNormal};

fn check_positive(name: &str, x: f64) -> Result<()> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::Parameter(format!("{name} must be positive and finite, got {x}")));
    }
    Ok(())
}

fn check_open_unit(name: &str, x: f64) -> Result<()> {
    if !x.is_finite() || x <= 0.0 || x >= 1.0 {
        return Err(Error::Parameter(format!("{name} must lie in (0,1), got {x}")));
    }
    Ok(())
}

/// Gamma(shape, scale) draw via Marsaglia-Tsang. Shapes below 1 use the boost
/// method (draw at shape+1, multiply by U^{1/shape}), which stays unbiased.
/// Never returns exactly 0: results underflowing f64 are clamped to the
/// smallest positive normal.
pub fn sample_gamma(shape: f64, scale: f64, rng: &mut RngStream) -> Result<f64> {
    check_positive("gamma shape", shape)?;
    check_positive("gamma scale", scale)?;
    let boost = if shape < 1.0 {
        // ln-space boost to dodge underflow of U^{1/shape} for tiny shapes
        let u = rng.uniform();
        Some(u.ln() / shape)
    } else {
        None
    };
    let d = if shape < 1.0 { shape + 1.0 } else { shape } - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = StandardNormal.sample(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v3 = v * v * v;
        let u = rng.uniform();
        if u < 1.0 - 0.0331 * x * x * x * x
            || u.ln() < 0.5 * x * x + d * (1.0 - v3 + v3.ln())
        {
            let raw = d * v3 * scale;
            let out = match boost {
                Some(ln_b) => {
                    // raw * exp(ln_b) computed in log space when tiny
                    let ln_out = raw.ln() + ln_b;
                    if ln_out < -700.0 {
                        f64::MIN_POSITIVE
                    } else {
                        ln_out.exp()
                    }
                }
                None => raw,
            };
            return Ok(out.max(f64::MIN_POSITIVE));
        }
    }
}

/// Beta(a, b) draw as a ratio of gammas.
pub fn sample_beta(a: f64, b: f64, rng: &mut RngStream) -> Result<f64> {
    let x = sample_gamma(a, 1.0, rng)?;
    let y = sample_gamma(b, 1.0, rng)?;
    Ok(x / (x + y))
}

/// Chinese restaurant table draw: ℓ = Σ_{i=1..n} Bernoulli(r/(r+i-1)).
/// Exact O(n); returns 0 iff n = 0, otherwise a value in [1, n].
pub fn sample_crt(n: u64, r: f64, rng: &mut RngStream) -> Result<u64> {
    check_positive("CRT concentration r", r)?;
    let mut ell = 0u64;
    for i in 0..n {
        if rng.bernoulli(r / (r + i as f64)) {
            ell += 1;
        }
    }
    Ok(ell)
}

/// log f_L(ℓ | n, r) = log[ Γ(r) r^ℓ / Γ(n+r) · |s(n,ℓ)| ].
pub fn crt_log_pmf(ell: u64, n: u64, r: f64, table: &StirlingTable) -> Result<f64> {
    check_positive("CRT concentration r", r)?;
    let (n_us, ell_us) = (n as usize, ell as usize);
    if ell_us > n_us || n_us > table.max_n() {
        return Err(Error::Domain(format!(
            "CRT pmf needs 0 <= ell <= n <= {}, got ell={ell}, n={n}",
            table.max_n()
        )));
    }
    if n == 0 {
        return Ok(if ell == 0 { 0.0 } else { f64::NEG_INFINITY });
    }
    let ls = table.log_stirling(n_us, ell_us)?;
    Ok(log_gamma(r)? + (ell as f64) * r.ln() - log_gamma(n as f64 + r)? + ls)
}

/// Logarithmic(p) draw with PMF p^u / (u·(-ln(1-p))), u ≥ 1.
///
/// Sequential inversion of the PMF for p ≤ 0.95; Kemp's LK analytic
/// inversion above that, bounding the worst-case loop length.
pub fn sample_logarithmic(p: f64, rng: &mut RngStream) -> Result<u64> {
    check_open_unit("logarithmic p", p)?;
    if p <= 0.95 {
        let mut u = rng.uniform() * (-(1.0 - p).ln());
        let mut k = 1u64;
        let mut term = p;
        loop {
            let mass = term / k as f64;
            if u < mass || k >= 1_000_000 {
                return Ok(k);
            }
            u -= mass;
            term *= p;
            k += 1;
        }
    }
    // Kemp's LK algorithm (Devroye 1986, ch. X.5.3)
    let h = (1.0 - p).ln();
    let u2 = rng.uniform();
    if u2 > p {
        return Ok(1);
    }
    let u1 = rng.uniform();
    // q = 1 - (1-p)^{u1} = -expm1(u1·h), h < 0
    let q = (-(u1 * h).exp_m1()).clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
    if u2 < q * q {
        let k = (1.0 + u2.ln() / q.ln()).floor();
        return Ok(k.max(1.0) as u64);
    }
    if u2 > q {
        Ok(1)
    } else {
        Ok(2)
    }
}

/// log PMF of Logarithmic(p) at u ≥ 1.
pub fn logarithmic_log_pmf(u: u64, p: f64) -> Result<f64> {
    check_open_unit("logarithmic p", p)?;
    if u == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok((u as f64) * p.ln() - (u as f64).ln() - (-(1.0 - p).ln()).ln())
}

/// SumLog(ℓ, p): sum of ℓ independent Logarithmic(p) draws.
pub fn sample_sumlog(ell: u64, p: f64, rng: &mut RngStream) -> Result<u64> {
    if ell == 0 {
        // still validate p so the error contract matches sample_logarithmic
        check_open_unit("logarithmic p", p)?;
        return Ok(0);
    }
    let mut total = 0u64;
    for _ in 0..ell {
        total += sample_logarithmic(p, rng)?;
    }
    Ok(total)
}

/// log PMF of SumLog(ℓ, p) at n: p^n ℓ! |s(n,ℓ)| / (n! [-ln(1-p)]^ℓ).
pub fn sumlog_log_pmf(n: u64, ell: u64, p: f64, table: &StirlingTable) -> Result<f64> {
    check_open_unit("sumlog p", p)?;
    if ell == 0 {
        return Ok(if n == 0 { 0.0 } else { f64::NEG_INFINITY });
    }
    if n < ell {
        return Ok(f64::NEG_INFINITY);
    }
    let ls = table.log_stirling(n as usize, ell as usize)?;
    Ok((n as f64) * p.ln() + log_gamma(ell as f64 + 1.0)? + ls
        - log_gamma(n as f64 + 1.0)?
        - (ell as f64) * (-(1.0 - p).ln()).ln())
}

/// log PMF of NB(r, p) at n: Γ(n+r)/(n! Γ(r)) p^n (1-p)^r.
pub fn nb_log_pmf(n: u64, r: f64, p: f64) -> Result<f64> {
    check_positive("NB r", r)?;
    check_open_unit("NB p", p)?;
    Ok(log_gamma(n as f64 + r)? - log_gamma(n as f64 + 1.0)? - log_gamma(r)?
        + (n as f64) * p.ln()
        + r * (1.0 - p).ln())
}

/// NB(r, p) draw via the gamma-Poisson mixture.
pub fn sample_nb(r: f64, p: f64, rng: &mut RngStream) -> Result<u64> {
    check_positive("NB r", r)?;
    check_open_unit("NB p", p)?;
    let lambda = sample_gamma(r, p / (1.0 - p), rng)?;
    sample_poisson(lambda, rng)
}

/// Poisson(λ) draw, λ ≥ 0.
pub fn sample_poisson(lambda: f64, rng: &mut RngStream) -> Result<u64> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Parameter(format!("Poisson rate must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(lambda)
        .map_err(|e| Error::Parameter(format!("Poisson rate {lambda}: {e}")))?;
    Ok(d.sample(rng) as u64)
}

/// Dirichlet draw from gamma normalization; output sums to 1.
pub fn sample_dirichlet(concentrations: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
    if concentrations.is_empty() {
        return Err(Error::Parameter("Dirichlet needs at least one concentration".into()));
    }
    let mut out = Vec::with_capacity(concentrations.len());
    let mut sum = 0.0;
    for &a in concentrations {
        check_positive("Dirichlet concentration", a)?;
        let g = sample_gamma(a, 1.0, rng)?;
        sum += g;
        out.push(g);
    }
    for x in &mut out {
        *x /= sum;
    }
    Ok(out)
}

/// Symmetric Dirichlet draw of dimension `dim`.
pub fn sample_symmetric_dirichlet(eta: f64, dim: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    sample_dirichlet(&vec![eta; dim], rng)
}

/// Multinomial(n, probs) draw as n categorical draws (linear scan per draw).
pub fn sample_multinomial(n: u64, probs: &[f64], rng: &mut RngStream) -> Result<Vec<u64>> {
    let total: f64 = probs.iter().sum();
    if probs.iter().any(|&p| !p.is_finite() || p < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!(
            "multinomial probabilities must be nonnegative and sum to 1 (sum = {total})"
        )));
    }
    let mut counts = vec![0u64; probs.len()];
    for _ in 0..n {
        counts[categorical_by_cdf(probs, total, rng)] += 1;
    }
    Ok(counts)
}

/// Categorical draw from unnormalized nonnegative weights; linear CDF scan.
pub fn sample_categorical(weights: &[f64], rng: &mut RngStream) -> Result<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Numeric(format!(
            "categorical weights sum to {total}; cannot sample"
        )));
    }
    Ok(categorical_by_cdf(weights, total, rng))
}

fn categorical_by_cdf(weights: &[f64], total: f64, rng: &mut RngStream) -> usize {
    let u = rng.uniform() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Seat n customers with a CRP of concentration r; returns occupied table
/// sizes in creation order. Sizes sum to n; the table count is CRT(n, r).
pub fn sample_crp_partition_counts(n: u64, r: f64, rng: &mut RngStream) -> Result<Vec<u64>> {
    check_positive("CRP concentration r", r)?;
    let mut sizes: Vec<u64> = Vec::new();
    for i in 0..n {
        let denom = r + i as f64;
        let u = rng.uniform() * denom;
        if u < r {
            sizes.push(1);
        } else {
            // walk the existing tables
            let mut acc = r;
            let mut placed = false;
            for s in sizes.iter_mut() {
                acc += *s as f64;
                if u < acc {
                    *s += 1;
                    placed = true;
                    break;
                }
            }
            if !placed {
                let last = sizes.len() - 1;
                sizes[last] += 1;
            }
        }
    }
    Ok(sizes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{log_add_exp, StirlingTable};

    fn rng(seed: u64) -> RngStream {
        RngStream::new(seed)
    }

    // ---------- gamma ----------

    #[test]
    fn gamma_exponential_mean() {
        let mut r = rng(101);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += sample_gamma(1.0, 1.0, &mut r).unwrap();
        }
        let mean = sum / n as f64;
        // Exp(1): sd = 1, se = 1/sqrt(n)
        let se = 1.0 / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean = {mean}");
    }

    #[test]
    fn gamma_variance() {
        let mut r = rng(102);
        let (shape, scale) = (2.5, 0.4);
        let n = 1_000_000usize;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = sample_gamma(shape, scale, &mut r).unwrap();
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let expect = shape * scale * scale; // 0.4
        // var of the sample variance of a gamma: use a generous 4-sigma MC bound
        // Var(X^2) based s.e.: for Gamma(2.5, 0.4): E X^4 computable, but a
        // 1.5% relative band is already > 5 s.e. at n = 1e6.
        assert!((var - expect).abs() < 0.015 * expect, "var = {var}");
    }

    #[test]
    fn gamma_tiny_shape_strictly_positive() {
        let mut r = rng(103);
        for _ in 0..200_000 {
            let x = sample_gamma(0.01, 1.0, &mut r).unwrap();
            assert!(x > 0.0 && x.is_finite(), "draw {x}");
        }
    }

    #[test]
    fn gamma_tiny_shape_mean() {
        let mut r = rng(104);
        let n = 2_000_000usize;
        let mut s = 0.0;
        for _ in 0..n {
            s += sample_gamma(0.01, 1.0, &mut r).unwrap();
        }
        let mean = s / n as f64;
        // mean 0.01, var 0.01 -> se = 0.1/sqrt(n)
        let se = 0.1 / (n as f64).sqrt();
        assert!((mean - 0.01).abs() < 4.0 * se, "mean = {mean}");
    }

    #[test]
    fn gamma_rejects_bad_parameters() {
        let mut r = rng(1);
        assert!(sample_gamma(0.0, 1.0, &mut r).is_err());
        assert!(sample_gamma(1.0, -2.0, &mut r).is_err());
        assert!(sample_gamma(f64::NAN, 1.0, &mut r).is_err());
        assert!(sample_gamma(f64::INFINITY, 1.0, &mut r).is_err());
    }

    // ---------- CRT ----------

    #[test]
    fn crt_empty_and_forced_first_table() {
        let mut r = rng(2);
        for &conc in &[0.1, 1.0, 57.0] {
            assert_eq!(sample_crt(0, conc, &mut r).unwrap(), 0);
            for _ in 0..50 {
                assert_eq!(sample_crt(1, conc, &mut r).unwrap(), 1);
            }
        }
        assert!(sample_crt(3, 0.0, &mut r).is_err());
    }

    #[test]
    fn crt_two_customers_enumeration() {
        // n=2, r=1: the second Bernoulli has success prob 1/2, so
        // P(ℓ=1) = P(ℓ=2) = 0.5 exactly.
        let mut r = rng(3);
        let n = 200_000usize;
        let mut twos = 0usize;
        for _ in 0..n {
            let ell = sample_crt(2, 1.0, &mut r).unwrap();
            assert!(ell == 1 || ell == 2);
            if ell == 2 {
                twos += 1;
            }
        }
        let freq = twos as f64 / n as f64;
        let se = (0.25f64 / n as f64).sqrt();
        assert!((freq - 0.5).abs() < 3.0 * se, "freq = {freq}");
    }

    #[test]
    fn crt_mean_matches_digamma_formula() {
        // E[CRT(n, r)] = r (ψ(n+r) - ψ(r))
        use crate::special::digamma;
        let cases = [(10u64, 0.5f64), (50, 2.5), (200, 10.0)];
        let mut r = rng(4);
        for &(n, conc) in &cases {
            let draws = 100_000usize;
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..draws {
                let x = sample_crt(n, conc, &mut r).unwrap() as f64;
                s += x;
                s2 += x * x;
            }
            let mean = s / draws as f64;
            let var = s2 / draws as f64 - mean * mean;
            let expect =
                conc * (digamma(n as f64 + conc).unwrap() - digamma(conc).unwrap());
            let se = (var / draws as f64).sqrt();
            assert!(
                (mean - expect).abs() < 3.0 * se,
                "n={n}, r={conc}: mean={mean}, expect={expect}"
            );
        }
    }

    #[test]
    fn crt_log_pmf_reference_points() {
        let t = StirlingTable::new(16);
        // ℓ = n: |s(n,n)| = 1 -> log[Γ(r) r^n / Γ(n+r)]
        for &(n, conc) in &[(1u64, 0.7f64), (5, 1.3), (9, 4.0)] {
            let got = crt_log_pmf(n, n, conc, &t).unwrap();
            let expect = log_gamma(conc).unwrap() + (n as f64) * conc.ln()
                - log_gamma(n as f64 + conc).unwrap();
            assert!((got - expect).abs() < 1e-12);
        }
        // matches the n=2 enumeration above
        assert!((crt_log_pmf(1, 2, 1.0, &t).unwrap() - 0.5f64.ln()).abs() < 1e-12);
        // |s(3,2)| = 3, Γ(4) = 6 -> 0.5
        assert!((crt_log_pmf(2, 3, 1.0, &t).unwrap() - 0.5f64.ln()).abs() < 1e-12);
        assert!(crt_log_pmf(3, 2, 1.0, &t).is_err());
    }

    #[test]
    fn crt_pmf_normalizes() {
        let t = StirlingTable::new(40);
        for &(n, conc) in &[(1u64, 0.3f64), (7, 1.0), (25, 3.3), (40, 0.05)] {
            let mut acc = f64::NEG_INFINITY;
            for ell in 0..=n {
                acc = log_add_exp(acc, crt_log_pmf(ell, n, conc, &t).unwrap());
            }
            assert!(acc.exp() > 1.0 - 1e-12 && acc.exp() < 1.0 + 1e-12, "n={n}, r={conc}");
        }
    }

    #[test]
    fn crt_empirical_matches_pmf() {
        let t = StirlingTable::new(20);
        let (n, conc) = (12u64, 1.7f64);
        let draws = 200_000usize;
        let mut counts = vec![0u64; n as usize + 1];
        let mut r = rng(5);
        for _ in 0..draws {
            counts[sample_crt(n, conc, &mut r).unwrap() as usize] += 1;
        }
        let chi2 = chi_square_stat(
            &counts,
            &(0..=n).map(|l| crt_log_pmf(l, n, conc, &t).unwrap().exp()).collect::<Vec<_>>(),
            draws,
        );
        // 12 dof (bins with expectation > 5 dominate); p > 0.001 gate
        assert!(chi_square_p(chi2.0, chi2.1) > 0.001, "chi2 = {:?}", chi2);
    }

    // ---------- logarithmic / sumlog ----------

    #[test]
    fn logarithmic_rejects_bad_p() {
        let mut r = rng(6);
        assert!(sample_logarithmic(0.0, &mut r).is_err());
        assert!(sample_logarithmic(1.0, &mut r).is_err());
        assert!(sample_logarithmic(-0.5, &mut r).is_err());
        assert!(sample_sumlog(2, 1.5, &mut r).is_err());
    }

    #[test]
    fn logarithmic_mass_at_one() {
        // P(u=1 | p=0.5) = 0.5/ln 2
        let p = 0.5;
        let expect = (logarithmic_log_pmf(1, p).unwrap()).exp();
        assert!((expect - 0.5 / std::f64::consts::LN_2).abs() < 1e-12);
        let mut r = rng(7);
        let n = 1_000_000usize;
        let mut ones = 0usize;
        for _ in 0..n {
            if sample_logarithmic(p, &mut r).unwrap() == 1 {
                ones += 1;
            }
        }
        let freq = ones as f64 / n as f64;
        let se = (expect * (1.0 - expect) / n as f64).sqrt();
        assert!((freq - expect).abs() < 3.0 * se, "freq = {freq}, expect = {expect}");
    }

    #[test]
    fn logarithmic_degenerate_limit() {
        let mut r = rng(8);
        let n = 100_000usize;
        let mut ones = 0usize;
        for _ in 0..n {
            if sample_logarithmic(1e-4, &mut r).unwrap() == 1 {
                ones += 1;
            }
        }
        assert!(ones as f64 / n as f64 > 0.9999, "ones = {ones}");
    }

    #[test]
    fn logarithmic_mean_at_p09() {
        // mean = p / ((p-1) ln(1-p)) = 0.9/(0.1 ln 10); cross-check by
        // numeric summation of the PMF
        let p = 0.9f64;
        let formula = p / ((p - 1.0) * (1.0 - p).ln());
        let mut numeric = 0.0;
        for u in 1..=4000u64 {
            numeric += u as f64 * logarithmic_log_pmf(u, p).unwrap().exp();
        }
        assert!((formula - numeric).abs() < 1e-10);
        assert!((formula - 0.9 / (0.1 * 10f64.ln())).abs() < 1e-12);

        let mut r = rng(9);
        let n = 1_000_000usize;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = sample_logarithmic(p, &mut r).unwrap() as f64;
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!((mean - formula).abs() < 3.0 * se, "mean = {mean}, expect = {formula}");
    }

    #[test]
    fn logarithmic_kemp_branch_matches_pmf() {
        // p = 0.97 exercises the analytic-inversion branch
        let p = 0.97f64;
        let mut r = rng(10);
        let n = 400_000usize;
        let cap = 60usize;
        let mut counts = vec![0u64; cap + 2];
        for _ in 0..n {
            let u = sample_logarithmic(p, &mut r).unwrap() as usize;
            counts[u.min(cap + 1)] += 1;
        }
        let mut probs = vec![0.0f64; cap + 2];
        let mut rest = 1.0;
        for u in 1..=cap {
            let q = logarithmic_log_pmf(u as u64, p).unwrap().exp();
            probs[u] = q;
            rest -= q;
        }
        probs[cap + 1] = rest.max(0.0);
        let (chi2, dof) = chi_square_stat(&counts, &probs, n);
        assert!(chi_square_p(chi2, dof) > 0.001, "chi2 = {chi2}, dof = {dof}");
    }

    #[test]
    fn sumlog_base_cases() {
        let mut r = rng(11);
        assert_eq!(sample_sumlog(0, 0.5, &mut r).unwrap(), 0);
        for _ in 0..100 {
            let ell = 4u64;
            let x = sample_sumlog(ell, 0.3, &mut r).unwrap();
            assert!(x >= ell);
        }
    }

    #[test]
    fn sumlog_single_summand_equals_logarithmic() {
        // two-sample chi-square between SumLog(1, p) and Logarithmic(p)
        let p = 0.6;
        let mut r = rng(12);
        let n = 200_000usize;
        let cap = 30usize;
        let mut a = vec![0u64; cap + 2];
        let mut b = vec![0u64; cap + 2];
        for _ in 0..n {
            a[(sample_sumlog(1, p, &mut r).unwrap() as usize).min(cap + 1)] += 1;
            b[(sample_logarithmic(p, &mut r).unwrap() as usize).min(cap + 1)] += 1;
        }
        let (chi2, dof) = two_sample_chi_square(&a, &b);
        assert!(chi_square_p(chi2, dof) > 0.001, "chi2 = {chi2}, dof = {dof}");
    }

    #[test]
    fn sumlog_matches_exact_pmf() {
        // ℓ=3, p=0.5; PMF via Stirling numbers for n <= 12
        let t = StirlingTable::new(64);
        let (ell, p) = (3u64, 0.5f64);
        let mut r = rng(13);
        let n = 400_000usize;
        let cap = 12usize;
        let mut counts = vec![0u64; cap + 2];
        for _ in 0..n {
            counts[(sample_sumlog(ell, p, &mut r).unwrap() as usize).min(cap + 1)] += 1;
        }
        let mut probs = vec![0.0f64; cap + 2];
        let mut rest = 1.0;
        for k in (ell as usize)..=cap {
            let q = sumlog_log_pmf(k as u64, ell, p, &t).unwrap().exp();
            probs[k] = q;
            rest -= q;
        }
        probs[cap + 1] = rest.max(0.0);
        // per-bin 3-sigma agreement
        for k in (ell as usize)..=cap {
            let freq = counts[k] as f64 / n as f64;
            let se = (probs[k] * (1.0 - probs[k]) / n as f64).sqrt();
            assert!(
                (freq - probs[k]).abs() < 3.5 * se,
                "n={k}: freq={freq}, pmf={}",
                probs[k]
            );
        }
    }

    // ---------- dirichlet / multinomial / crp ----------

    #[test]
    fn dirichlet_uniform_marginal() {
        // Dir(1,1) first coordinate ~ U(0,1); KS test at p > 0.001
        let mut r = rng(14);
        let n = 100_000usize;
        let mut xs: Vec<f64> = (0..n)
            .map(|_| sample_dirichlet(&[1.0, 1.0], &mut r).unwrap()[0])
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let cdf = x; // U(0,1)
            d = d.max((cdf - i as f64 / n as f64).abs());
            d = d.max(((i + 1) as f64 / n as f64 - cdf).abs());
        }
        let p = ks_p_value(d, n);
        assert!(p > 0.001, "KS D = {d}, p = {p}");
    }

    #[test]
    fn dirichlet_symmetric_mean() {
        let mut r = rng(15);
        let n = 100_000usize;
        let mut mean = [0.0f64; 3];
        for _ in 0..n {
            let x = sample_dirichlet(&[5.0, 5.0, 5.0], &mut r).unwrap();
            for i in 0..3 {
                mean[i] += x[i];
            }
        }
        // Var of a Dir(5,5,5) coordinate = (1/3)(2/3)/16
        let se = ((1.0 / 3.0) * (2.0 / 3.0) / 16.0 / n as f64).sqrt();
        for m in &mean {
            assert!((m / n as f64 - 1.0 / 3.0).abs() < 3.0 * se);
        }
    }

    #[test]
    fn dirichlet_small_concentration_stays_on_simplex() {
        let mut r = rng(16);
        let conc = vec![0.01f64; 100];
        for _ in 0..2000 {
            let x = sample_dirichlet(&conc, &mut r).unwrap();
            let sum: f64 = x.iter().sum();
            assert!(x.iter().all(|v| v.is_finite() && *v >= 0.0));
            assert!((sum - 1.0).abs() < 1e-9, "sum = {sum}");
        }
        assert!(sample_dirichlet(&[1.0, 0.0], &mut r).is_err());
    }

    #[test]
    fn multinomial_edge_cases() {
        let mut r = rng(17);
        assert_eq!(sample_multinomial(0, &[0.2, 0.8], &mut r).unwrap(), vec![0, 0]);
        assert_eq!(
            sample_multinomial(7, &[1.0, 0.0, 0.0], &mut r).unwrap(),
            vec![7, 0, 0]
        );
        assert!(sample_multinomial(3, &[0.7, 0.7], &mut r).is_err());
    }

    #[test]
    fn multinomial_even_split_probability() {
        // n=4, p=(1/2,1/2): P((2,2)) = C(4,2)/16 = 6/16
        let mut r = rng(18);
        let n = 200_000usize;
        let mut hits = 0usize;
        for _ in 0..n {
            let c = sample_multinomial(4, &[0.5, 0.5], &mut r).unwrap();
            if c == vec![2, 2] {
                hits += 1;
            }
        }
        let expect = 6.0 / 16.0;
        let freq = hits as f64 / n as f64;
        let se = (expect * (1.0 - expect) / n as f64).sqrt();
        assert!((freq - expect).abs() < 3.0 * se, "freq = {freq}");
    }

    #[test]
    fn multinomial_total_is_conserved() {
        let mut r = rng(19);
        for _ in 0..500 {
            let c = sample_multinomial(23, &[0.1, 0.2, 0.3, 0.4], &mut r).unwrap();
            assert_eq!(c.iter().sum::<u64>(), 23);
        }
    }

    #[test]
    fn crp_partition_edges() {
        let mut r = rng(20);
        assert!(sample_crp_partition_counts(0, 1.0, &mut r).unwrap().is_empty());
        assert_eq!(sample_crp_partition_counts(1, 2.0, &mut r).unwrap(), vec![1]);
        assert!(sample_crp_partition_counts(5, -1.0, &mut r).is_err());
    }

    #[test]
    fn crp_single_table_probability() {
        // n=3, r=1: P(one table) = (1/2)(2/3) = 1/3 by sequential seating
        let mut r = rng(21);
        let n = 200_000usize;
        let mut singles = 0usize;
        for _ in 0..n {
            let sizes = sample_crp_partition_counts(3, 1.0, &mut r).unwrap();
            assert_eq!(sizes.iter().sum::<u64>(), 3);
            if sizes.len() == 1 {
                singles += 1;
            }
        }
        let expect = 1.0 / 3.0;
        let freq = singles as f64 / n as f64;
        let se = (expect * (1.0 - expect) / n as f64).sqrt();
        assert!((freq - expect).abs() < 3.0 * se, "freq = {freq}");
    }

    #[test]
    fn crp_table_count_is_crt_distributed() {
        // chi-square of #tables against crt_log_pmf
        let t = StirlingTable::new(16);
        let (n_cust, conc) = (9u64, 1.4f64);
        let draws = 200_000usize;
        let mut counts = vec![0u64; n_cust as usize + 1];
        let mut r = rng(22);
        for _ in 0..draws {
            let sizes = sample_crp_partition_counts(n_cust, conc, &mut r).unwrap();
            counts[sizes.len()] += 1;
        }
        let probs: Vec<f64> = (0..=n_cust)
            .map(|l| crt_log_pmf(l, n_cust, conc, &t).unwrap().exp())
            .collect();
        let (chi2, dof) = chi_square_stat(&counts, &probs, draws);
        assert!(chi_square_p(chi2, dof) > 0.001, "chi2 = {chi2}, dof = {dof}");
    }

    // ---------- paper identities ----------

    #[test]
    fn theorem1_nb_dirmult_equivalence() {
        // x_k ~ NB(r_k, p) independently  vs  y ~ NB(r., p) split by DirMult.
        // chi-square on each marginal, support truncated at mass 0.999.
        let rvec = [1.0f64, 2.0, 0.5];
        let p = 0.3f64;
        let r_dot: f64 = rvec.iter().sum();
        let draws = 200_000usize;

        let mut rng_a = rng(23);
        let mut rng_b = rng(24);
        let mut marg_a: Vec<Vec<u64>> = vec![vec![0; 64]; 3];
        let mut marg_b: Vec<Vec<u64>> = vec![vec![0; 64]; 3];
        for _ in 0..draws {
            for k in 0..3 {
                let x = sample_nb(rvec[k], p, &mut rng_a).unwrap() as usize;
                marg_a[k][x.min(63)] += 1;
            }
            let y = sample_nb(r_dot, p, &mut rng_b).unwrap();
            let theta = sample_dirichlet(&rvec, &mut rng_b).unwrap();
            let split = sample_multinomial(y, &theta, &mut rng_b).unwrap();
            for k in 0..3 {
                marg_b[k][(split[k] as usize).min(63)] += 1;
            }
        }
        for k in 0..3 {
            // truncate support at cumulative mass 0.999
            let mut probs = vec![0.0f64; 64];
            let mut cum = 0.0;
            let mut hi = 0usize;
            for n in 0..63u64 {
                let q = nb_log_pmf(n, rvec[k], p).unwrap().exp();
                probs[n as usize] = q;
                cum += q;
                hi = n as usize;
                if cum > 0.999 {
                    break;
                }
            }
            probs[hi + 1] = (1.0 - probs[..=hi].iter().sum::<f64>()).max(0.0);
            let trim = |m: &Vec<u64>| {
                let mut v = m[..=hi].to_vec();
                v.push(m[hi + 1..].iter().sum());
                v
            };
            let probs = probs[..=hi + 1].to_vec();
            let (c_a, d_a) = chi_square_stat(&trim(&marg_a[k]), &probs, draws);
            let (c_b, d_b) = chi_square_stat(&trim(&marg_b[k]), &probs, draws);
            assert!(chi_square_p(c_a, d_a) > 0.001, "marginal {k} path A: chi2 = {c_a}");
            assert!(chi_square_p(c_b, d_b) > 0.001, "marginal {k} path B: chi2 = {c_b}");
        }
    }

    #[test]
    fn poisson_logarithmic_bivariate_identity() {
        // CRT(ℓ|n,r)·NB(n|r,p) = |s(n,ℓ)| r^ℓ p^n (1-p)^r / n!
        let t = StirlingTable::new(16);
        for &conc in &[0.5f64, 3.0] {
            for &p in &[0.2f64, 0.8] {
                for n in 0..=8u64 {
                    for ell in 0..=n {
                        let lhs = (crt_log_pmf(ell, n, conc, &t).unwrap()
                            + nb_log_pmf(n, conc, p).unwrap())
                        .exp();
                        let rhs = if n == 0 {
                            if ell == 0 {
                                (1.0f64 - p).powf(conc)
                            } else {
                                0.0
                            }
                        } else {
                            let ls = t.log_stirling(n as usize, ell as usize).unwrap();
                            if ls == f64::NEG_INFINITY {
                                0.0
                            } else {
                                (ls + (ell as f64) * conc.ln()
                                    + (n as f64) * p.ln()
                                    + conc * (1.0 - p).ln()
                                    - log_gamma(n as f64 + 1.0).unwrap())
                                .exp()
                            }
                        };
                        assert!(
                            (lhs - rhs).abs() < 1e-12,
                            "n={n}, ell={ell}, r={conc}, p={p}: {lhs} vs {rhs}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn theorem2_crt_dirmult_equals_mult_crt() {
        // enumerate DirMult splits then per-part CRTs; compare against the
        // closed form (ℓ.!/Π ℓ_k!) Γ(r.)/Γ(n+r.) |s(n,ℓ.)| Π r_k^{ℓ_k}
        let t = StirlingTable::new(16);
        for rvec in [vec![0.7f64, 1.3], vec![0.7, 1.3, 0.4]] {
            let kk = rvec.len();
            let r_dot: f64 = rvec.iter().sum();
            for n in 0..=6u64 {
                let splits = enumerate_compositions(n, kk);
                // joint over ℓ vectors
                let mut joint: std::collections::HashMap<Vec<u64>, f64> =
                    std::collections::HashMap::new();
                for nk in &splits {
                    // DirMult pmf
                    let mut ldm = log_gamma(n as f64 + 1.0).unwrap()
                        + log_gamma(r_dot).unwrap()
                        - log_gamma(n as f64 + r_dot).unwrap();
                    for k in 0..kk {
                        ldm += log_gamma(nk[k] as f64 + rvec[k]).unwrap()
                            - log_gamma(nk[k] as f64 + 1.0).unwrap()
                            - log_gamma(rvec[k]).unwrap();
                    }
                    // per-part CRT enumeration
                    let ranges: Vec<Vec<u64>> = nk
                        .iter()
                        .map(|&m| if m == 0 { vec![0] } else { (1..=m).collect() })
                        .collect();
                    for ells in cartesian(&ranges) {
                        let mut lp = ldm;
                        for k in 0..kk {
                            lp += crt_log_pmf(ells[k], nk[k], rvec[k], &t).unwrap();
                        }
                        *joint.entry(ells).or_insert(0.0) += lp.exp();
                    }
                }
                // compare to the closed form
                let mut max_diff = 0.0f64;
                for (ells, prob) in &joint {
                    let ell_dot: u64 = ells.iter().sum();
                    let closed = if n == 0 {
                        if ell_dot == 0 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        let ls = t.log_stirling(n as usize, ell_dot as usize).unwrap();
                        if ls == f64::NEG_INFINITY {
                            0.0
                        } else {
                            let mut lp = log_gamma(ell_dot as f64 + 1.0).unwrap()
                                + log_gamma(r_dot).unwrap()
                                - log_gamma(n as f64 + r_dot).unwrap()
                                + ls;
                            for k in 0..kk {
                                lp += (ells[k] as f64) * rvec[k].ln()
                                    - log_gamma(ells[k] as f64 + 1.0).unwrap();
                            }
                            lp.exp()
                        }
                    };
                    max_diff = max_diff.max((prob - closed).abs());
                }
                assert!(max_diff < 1e-10, "K={kk}, n={n}: max diff {max_diff}");
            }
        }
    }

    #[test]
    fn proposition2_table_counts_are_poisson() {
        // seating construction: n ~ NB(r., p); z ~ DirCat; tables per dish via
        // CRP(n_k, r_k). Marginal ℓ_k should be Pois(-r_k ln(1-p)).
        let rvec = [0.8f64, 1.6];
        let p = 0.5f64;
        let r_dot: f64 = rvec.iter().sum();
        let draws = 100_000usize;
        let mut r = rng(25);
        let lambda0 = -rvec[0] * (1.0 - p).ln();
        let mut counts = vec![0u64; 32];
        for _ in 0..draws {
            let n = sample_nb(r_dot, p, &mut r).unwrap();
            // sequential DirCat draw of dish counts
            let mut nk = [0u64; 2];
            for i in 0..n {
                let w0 = (nk[0] as f64 + rvec[0]) / (i as f64 + r_dot);
                if r.bernoulli(w0) {
                    nk[0] += 1;
                } else {
                    nk[1] += 1;
                }
            }
            let ell0 = if nk[0] == 0 {
                0
            } else {
                sample_crp_partition_counts(nk[0], rvec[0], &mut r).unwrap().len() as u64
            };
            counts[(ell0 as usize).min(31)] += 1;
        }
        let mut probs = vec![0.0f64; 32];
        let mut lp = -lambda0;
        for k in 0..31usize {
            probs[k] = lp.exp();
            lp += lambda0.ln() - ((k + 1) as f64).ln();
        }
        probs[31] = (1.0 - probs[..31].iter().sum::<f64>()).max(0.0);
        let (chi2, dof) = chi_square_stat(&counts, &probs, draws);
        assert!(chi_square_p(chi2, dof) > 0.001, "chi2 = {chi2}, dof = {dof}");
    }

    // ---------- shared test helpers ----------

    pub(crate) fn enumerate_compositions(n: u64, k: usize) -> Vec<Vec<u64>> {
        if k == 1 {
            return vec![vec![n]];
        }
        let mut out = Vec::new();
        for first in 0..=n {
            for mut rest in enumerate_compositions(n - first, k - 1) {
                let mut v = vec![first];
                v.append(&mut rest);
                out.push(v);
            }
        }
        out
    }

    pub(crate) fn cartesian(ranges: &[Vec<u64>]) -> Vec<Vec<u64>> {
        let mut out: Vec<Vec<u64>> = vec![vec![]];
        for r in ranges {
            let mut next = Vec::new();
            for prefix in &out {
                for &v in r {
                    let mut p = prefix.clone();
                    p.push(v);
                    next.push(p);
                }
            }
            out = next;
        }
        out
    }

    /// One-sample chi-square statistic; bins with expected count < 5 are
    /// pooled into the previous bin. Returns (stat, dof).
    pub(crate) fn chi_square_stat(counts: &[u64], probs: &[f64], n: usize) -> (f64, usize) {
        assert_eq!(counts.len(), probs.len());
        let mut stat = 0.0;
        let mut dof = 0usize;
        let mut pool_obs = 0.0;
        let mut pool_exp = 0.0;
        for (&c, &p) in counts.iter().zip(probs) {
            pool_obs += c as f64;
            pool_exp += p * n as f64;
            if pool_exp >= 5.0 {
                stat += (pool_obs - pool_exp).powi(2) / pool_exp;
                dof += 1;
                pool_obs = 0.0;
                pool_exp = 0.0;
            }
        }
        if pool_exp > 0.0 {
            stat += (pool_obs - pool_exp).powi(2) / pool_exp.max(1e-12);
            dof += 1;
        }
        (stat, dof.saturating_sub(1).max(1))
    }

    /// Two-sample chi-square on pooled histograms.
    pub(crate) fn two_sample_chi_square(a: &[u64], b: &[u64]) -> (f64, usize) {
        let na: f64 = a.iter().sum::<u64>() as f64;
        let nb: f64 = b.iter().sum::<u64>() as f64;
        let mut stat = 0.0;
        let mut dof = 0usize;
        let (mut pa, mut pb) = (0.0f64, 0.0f64);
        for (&x, &y) in a.iter().zip(b) {
            pa += x as f64;
            pb += y as f64;
            let pooled = (pa + pb) / (na + nb);
            if pooled * na.min(nb) >= 5.0 {
                let ea = pooled * na;
                let eb = pooled * nb;
                stat += (pa - ea).powi(2) / ea + (pb - eb).powi(2) / eb;
                dof += 1;
                pa = 0.0;
                pb = 0.0;
            }
        }
        if pa + pb > 0.0 {
            let pooled = (pa + pb) / (na + nb);
            let (ea, eb) = (pooled * na, pooled * nb);
            if ea > 0.0 {
                stat += (pa - ea).powi(2) / ea + (pb - eb).powi(2) / eb;
                dof += 1;
            }
        }
        (stat, dof.saturating_sub(1).max(1))
    }

    /// Upper tail of the chi-square distribution via statrs (test oracle).
    pub(crate) fn chi_square_p(stat: f64, dof: usize) -> f64 {
        1.0 - statrs::function::gamma::gamma_lr(dof as f64 / 2.0, stat / 2.0)
    }

    /// Asymptotic Kolmogorov-Smirnov p-value.
    pub(crate) fn ks_p_value(d: f64, n: usize) -> f64 {
        let lambda = (n as f64).sqrt() * d;
        let mut p = 0.0;
        for j in 1..=100 {
            let jf = j as f64;
            p += 2.0 * (-1.0f64).powi(j + 1) * (-2.0 * jf * jf * lambda * lambda).exp();
        }
        p.clamp(0.0, 1.0)
    }
}
