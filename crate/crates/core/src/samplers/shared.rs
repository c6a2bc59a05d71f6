//! Global-parameter updates shared by the blocked and compound-Poisson
//! samplers, plus the log-joint surrogates the trace records.

use crate::dist::{sample_beta, sample_crt, sample_dirichlet, sample_gamma};
use crate::error::Result;
use crate::model::{clamp_p, count_active, ModelKind, ModelState, Representation, TruncationMode};
use crate::rng::RngStream;
use crate::special::log_gamma;

/// Gamma draw with the shape floored at 1e-300; floor hits are counted on
/// the state so long runs can report them.
pub(crate) fn guarded_gamma(
    state: &mut ModelState,
    shape: f64,
    scale: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    let s = if shape < 1e-300 {
        state.clamp_warnings += 1;
        1e-300
    } else {
        shape
    };
    sample_gamma(s, scale, rng)
}

/// p_j updates. NBFA: Beta(a0+n_j, b0+θ_·j); PFA/DCMLDA: Beta(a0+n_j, b0+G(Ω)).
pub(crate) fn update_p(state: &mut ModelState, rng: &mut RngStream) -> Result<()> {
    let (a0, b0) = (state.hyper.a0, state.hyper.b0);
    let g_total = state.global.g_total;
    let n_per_doc = doc_token_counts(state);
    for j in 0..state.num_samples() {
        let second = match state.kind {
            ModelKind::Nbfa => state.samples.theta_col_sums[j],
            _ => g_total,
        };
        let p = sample_beta(a0 + n_per_doc[j] as f64, b0 + second, rng)?;
        state.samples.p[j] = clamp_p(p);
        if p != state.samples.p[j] {
            state.clamp_warnings += 1;
            log::warn!("p_j clamped away from the boundary (raw {p})");
        }
    }
    Ok(())
}

pub(crate) fn doc_token_counts(state: &ModelState) -> Vec<u64> {
    let mut n_per_doc = vec![0u64; state.num_samples()];
    for &(_, j, n) in &state.latent.cells {
        n_per_doc[j as usize] += n as u64;
    }
    n_per_doc
}

/// c_j ~ Gamma(e0 + G(Ω), 1/(f0 + θ_·j)) — NBFA only.
pub(crate) fn update_c(state: &mut ModelState, rng: &mut RngStream) -> Result<()> {
    if state.kind != ModelKind::Nbfa {
        return Ok(());
    }
    let (e0, f0) = (state.hyper.e0, state.hyper.f0);
    let g_total = state.global.g_total;
    for j in 0..state.num_samples() {
        let theta_dot = state.samples.theta_col_sums[j];
        state.samples.c[j] = guarded_gamma(state, e0 + g_total, 1.0 / (f0 + theta_dot), rng)?;
    }
    Ok(())
}

/// The hierarchy block: second-layer CRT counts (NBFA), γ0, c0, and the atom
/// weights r_k. In adaptive mode only active slots get posterior weights
/// (the reserve slots are refreshed by the truncation step); in fixed mode
/// every slot draws from Gamma(γ0/K + counts, scale).
pub(crate) fn update_hierarchy(state: &mut ModelState, rng: &mut RngStream) -> Result<()> {
    let j_total = state.num_samples();
    let k_slots = state.k_slots();
    let (a0, b0, e0, f0) = (state.hyper.a0, state.hyper.b0, state.hyper.e0, state.hyper.f0);

    // per-slot top-layer counts: NBFA uses ℓ̃_·k from ℓ̃_jk ~ CRT(ℓ_·jk, r_k);
    // DCMLDA and PFA use the table counts directly.
    let top_counts: Vec<u64> = match state.kind {
        ModelKind::Nbfa => {
            let mut ell_tilde = vec![vec![0u64; k_slots]; j_total];
            let mut sums = vec![0u64; k_slots];
            for j in 0..j_total {
                for k in 0..k_slots {
                    let l_jk = state.latent.ell_dot_jk[j][k];
                    if l_jk > 0 {
                        let lt = sample_crt(l_jk, state.global.r[k], rng)?;
                        ell_tilde[j][k] = lt;
                        sums[k] += lt;
                    }
                }
            }
            state.latent.ell_tilde_jk = ell_tilde;
            sums
        }
        ModelKind::Dcmlda => state.latent.ell_dot_dot_k.clone(),
        ModelKind::Pfa => {
            // ℓ_jk ~ CRT(n_jk, r_k), summed over samples
            let mut sums = vec![0u64; k_slots];
            for j in 0..j_total {
                for k in 0..k_slots {
                    let n_jk = state.latent.n_dot_jk[j][k];
                    if n_jk > 0 {
                        sums[k] += sample_crt(n_jk, state.global.r[k], rng)?;
                    }
                }
            }
            sums
        }
    };

    // success probability feeding γ0's conditional: p̃̃ for NBFA (two-layer),
    // its single-layer analogue for PFA/DCMLDA
    let neg_log_one_minus = match state.kind {
        ModelKind::Nbfa => -state.samples.sum_log1m_p_tilde(),
        _ => -state.samples.sum_log1m_p(),
    };
    let p_top = neg_log_one_minus / (state.global.c0 + neg_log_one_minus);

    state.global.k_active = count_active(state);
    let gamma0_shape = match state.truncation {
        TruncationMode::Adaptive => a0 + state.global.k_active as f64,
        TruncationMode::Fixed => {
            // finite-truncation augmentation: t_k ~ CRT(top_k, γ0/K)
            let per_atom = state.global.gamma0 / k_slots as f64;
            let mut t_sum = 0u64;
            for &c in &top_counts {
                if c > 0 {
                    t_sum += sample_crt(c, per_atom.max(1e-300), rng)?;
                }
            }
            a0 + t_sum as f64
        }
    };
    state.global.gamma0 =
        guarded_gamma(state, gamma0_shape, 1.0 / (b0 - (1.0 - p_top).ln()), rng)?;
    state.global.c0 =
        guarded_gamma(state, e0 + state.global.gamma0, 1.0 / (f0 + state.global.g_total), rng)?;

    // atom weights
    let r_scale = 1.0 / (state.global.c0 + neg_log_one_minus);
    match state.truncation {
        TruncationMode::Adaptive => {
            for k in 0..k_slots {
                if top_counts[k] > 0 {
                    state.global.r[k] = guarded_gamma(state, top_counts[k] as f64, r_scale, rng)?;
                }
            }
        }
        TruncationMode::Fixed => {
            let per_atom = state.global.gamma0 / k_slots as f64;
            for k in 0..k_slots {
                state.global.r[k] =
                    guarded_gamma(state, per_atom + top_counts[k] as f64, r_scale, rng)?;
            }
        }
    }
    state.global.refresh_total();
    Ok(())
}

/// φ_k ~ Dir(η + ℓ_1·k, ..., η + ℓ_V·k)  (n_v·k for PFA).
pub(crate) fn update_phi(state: &mut ModelState, rng: &mut RngStream) -> Result<()> {
    let k_slots = state.k_slots();
    let v_total = state.v_total;
    let eta = state.eta;
    let counts_of = |state: &ModelState, k: usize| -> Vec<u64> {
        match state.kind {
            ModelKind::Pfa => state.latent.n_v_dot_k[k].clone(),
            _ => state.latent.ell_v_dot_k[k].clone(),
        }
    };
    let mut phi_new = Vec::with_capacity(k_slots);
    for k in 0..k_slots {
        let counts = counts_of(state, k);
        let conc: Vec<f64> = (0..v_total).map(|v| eta + counts[v] as f64).collect();
        phi_new.push(sample_dirichlet(&conc, rng)?);
    }
    state.factors.as_mut().expect("blocked state has factors").phi = phi_new;
    Ok(())
}

/// θ_kj ~ Gamma(r_k + ℓ_·jk, 1/(c_j - ln(1-p_j))) for NBFA. (The blocked
/// PFA variant, Gamma(n_jk + r_k, p_j), is used by the posterior-draw and
/// feature-extraction paths.)
pub(crate) fn update_theta(state: &mut ModelState, rng: &mut RngStream) -> Result<()> {
    if state.kind == ModelKind::Dcmlda {
        return Ok(());
    }
    let k_slots = state.k_slots();
    let j_total = state.num_samples();
    for k in 0..k_slots {
        for j in 0..j_total {
            let (shape, scale) = match state.kind {
                ModelKind::Nbfa => (
                    state.global.r[k] + state.latent.ell_dot_jk[j][k] as f64,
                    1.0 / (state.samples.c[j] - (1.0 - state.samples.p[j]).ln()),
                ),
                ModelKind::Pfa => (
                    state.global.r[k] + state.latent.n_dot_jk[j][k] as f64,
                    state.samples.p[j],
                ),
                ModelKind::Dcmlda => unreachable!(),
            };
            let draw = guarded_gamma(state, shape, scale, rng)?;
            state.samples.theta[k][j] = draw;
        }
    }
    for j in 0..j_total {
        state.samples.theta_col_sums[j] = state.samples.theta.iter().map(|row| row[j]).sum();
    }
    Ok(())
}

/// Diagnostic log-joint surrogate recorded in the trace. Blocked and
/// compound-Poisson states report the conditional data log-likelihood
/// Σ_vj ln NB(n_vj; Σ_k φ_vk score_k, p_j); collapsed states report the
/// marginalized seating log-likelihood of their model.
pub fn log_joint_surrogate(state: &ModelState) -> f64 {
    match state.representation {
        Representation::Collapsed => collapsed_surrogate(state),
        _ => nb_data_loglik(state),
    }
}

fn nb_data_loglik(state: &ModelState) -> f64 {
    let lg = |x: f64| log_gamma(x).unwrap_or(f64::NAN);
    let mut total = 0.0;
    // Σ_v over the full vocabulary of the per-sample mix rate equals the
    // score column sum because each φ column sums to one.
    let col_rate_total: Vec<f64> = match state.kind {
        ModelKind::Dcmlda => {
            let r_sum: f64 = state.global.r.iter().sum();
            vec![r_sum; state.num_samples()]
        }
        _ => state.samples.theta_col_sums.clone(),
    };
    let mut nnz_rate_sums = vec![0.0f64; state.num_samples()];
    for &(v, j, n) in &state.latent.cells {
        let j = j as usize;
        let p = state.samples.p[j];
        let rate = state.mix_rate(v, j);
        nnz_rate_sums[j] += rate;
        total += lg(n as f64 + rate) - lg(n as f64 + 1.0) - lg(rate)
            + n as f64 * p.ln()
            + rate * (1.0 - p).ln();
    }
    for j in 0..state.num_samples() {
        let zero_rate = (col_rate_total[j] - nnz_rate_sums[j]).max(0.0);
        total += zero_rate * (1.0 - state.samples.p[j]).ln();
    }
    total
}

fn collapsed_surrogate(state: &ModelState) -> f64 {
    let lg = |x: f64| log_gamma(x).unwrap_or(f64::NAN);
    let v_total = state.v_total as f64;
    let eta = state.eta;
    let mut total = 0.0;

    // per-sample token terms and table-size factorials
    let n_per_doc = doc_token_counts(state);
    for (j, &n_j) in n_per_doc.iter().enumerate() {
        total += n_j as f64 * state.samples.p[j].ln() - lg(n_j as f64 + 1.0);
    }
    if state.kind != ModelKind::Pfa {
        for assoc in &state.latent.cell_tables {
            for (_, sizes) in assoc {
                for &s in sizes {
                    if s > 1 {
                        total += lg(s as f64);
                    }
                }
            }
        }
    }

    let active: Vec<usize> = (0..state.k_slots())
        .filter(|&k| {
            state.latent.ell_dot_dot_k.get(k).copied().unwrap_or(0) > 0
                || state.latent.n_dot_dot_k.get(k).copied().unwrap_or(0) > 0
        })
        .collect();

    // Dirichlet-multinomial word terms over table dishes (token counts in PFA)
    for &k in &active {
        let (col, tot) = match state.kind {
            ModelKind::Pfa => (&state.latent.n_v_dot_k[k], state.latent.n_dot_dot_k[k]),
            _ => (&state.latent.ell_v_dot_k[k], state.latent.ell_dot_dot_k[k]),
        };
        total += lg(v_total * eta) - lg(tot as f64 + v_total * eta);
        for &c in col.iter() {
            if c > 0 {
                total += lg(c as f64 + eta) - lg(eta);
            }
        }
    }

    match state.kind {
        ModelKind::Nbfa => {
            total += state.global.r_star * state.samples.sum_log1m_p_tilde();
            for j in 0..state.num_samples() {
                let denom = state.samples.c[j] - (1.0 - state.samples.p[j]).ln();
                for &k in &active {
                    let r_k = state.global.r[k];
                    let l_jk = state.latent.ell_dot_jk[j][k] as f64;
                    total += lg(r_k + l_jk) - lg(r_k) + r_k * state.samples.c[j].ln()
                        - (r_k + l_jk) * denom.ln();
                }
            }
        }
        ModelKind::Pfa => {
            let log1m_sum = state.samples.sum_log1m_p();
            total += state.global.r_star * log1m_sum;
            for j in 0..state.num_samples() {
                let log1m = (1.0 - state.samples.p[j]).ln();
                for &k in &active {
                    let r_k = state.global.r[k];
                    let n_jk = state.latent.n_dot_jk[j][k] as f64;
                    total += lg(n_jk + r_k) - lg(r_k) + r_k * log1m;
                }
            }
        }
        ModelKind::Dcmlda => {
            let denom = state.global.c0 - state.samples.sum_log1m_p();
            total += state.global.k_active as f64 * state.global.gamma0.ln()
                - state.global.gamma0 * (denom / state.global.c0).ln();
            for &k in &active {
                let l_k = state.latent.ell_dot_dot_k[k] as f64;
                total += lg(l_k) - l_k * denom.ln();
            }
        }
    }
    total
}
