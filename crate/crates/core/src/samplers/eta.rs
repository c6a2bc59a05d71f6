//! Closed-form resampling of the Dirichlet smoothing parameter η by data
//! augmentation: q_k ~ Beta(ℓ_··k, Vη), t_vk ~ CRT(ℓ_v·k, η), then
//! η ~ Gamma(a0 + Σ t_vk, 1/(b0 - V Σ_k ln(1-q_k))). PFA substitutes the
//! token marginals n_v·k / n_··k for the table marginals.

use super::shared::guarded_gamma;
use crate::dist::{sample_beta, sample_crt};
use crate::error::Result;
use crate::model::{clamp_p, ModelKind, ModelState};
use crate::rng::RngStream;

pub fn sample_eta(state: &mut ModelState, rng: &mut RngStream) -> Result<f64> {
    let (a0, b0) = (state.hyper.a0, state.hyper.b0);
    let v_total = state.v_total as f64;
    let k_slots = state.k_slots();

    let active: Vec<usize> = (0..k_slots)
        .filter(|&k| match state.kind {
            ModelKind::Pfa => state.latent.n_dot_dot_k.get(k).copied().unwrap_or(0) > 0,
            _ => state.latent.ell_dot_dot_k.get(k).copied().unwrap_or(0) > 0,
        })
        .collect();

    if active.is_empty() {
        // no evidence: resample from the prior
        state.eta_aux.q.clear();
        state.eta_aux.t.clear();
        state.eta = guarded_gamma(state, a0, 1.0 / b0, rng)?;
        return Ok(state.eta);
    }

    let mut q = Vec::with_capacity(active.len());
    let mut t_table = Vec::with_capacity(active.len());
    let mut t_sum = 0u64;
    let mut log1m_q_sum = 0.0;
    for &k in &active {
        let (col_total, col) = match state.kind {
            ModelKind::Pfa => (state.latent.n_dot_dot_k[k], &state.latent.n_v_dot_k[k]),
            _ => (state.latent.ell_dot_dot_k[k], &state.latent.ell_v_dot_k[k]),
        };
        let q_k = clamp_p(sample_beta(col_total as f64, v_total * state.eta, rng)?);
        log1m_q_sum += (1.0 - q_k).ln();
        q.push(q_k);
        let mut t_col = vec![0u64; col.len()];
        for (v, &c) in col.iter().enumerate() {
            if c > 0 {
                let t = sample_crt(c, state.eta, rng)?;
                t_col[v] = t;
                t_sum += t;
            }
        }
        t_table.push(t_col);
    }
    state.eta_aux.q = q;
    state.eta_aux.t = t_table;
    state.eta = guarded_gamma(
        state,
        a0 + t_sum as f64,
        1.0 / (b0 - v_total * log1m_q_sum),
        rng,
    )?;
    Ok(state.eta)
}
