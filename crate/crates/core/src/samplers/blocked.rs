//! Regular blocked Gibbs sweep: per-token factor assignments, per-cell CRT
//! table counts, then the shared global updates and the truncation refresh.

use super::eta::sample_eta;
use super::shared::{update_c, update_hierarchy, update_p, update_phi, update_theta};
use crate::dist::sample_crt;
use crate::error::Result;
use crate::model::{
    count_active, rebuild_marginals, relabel_and_truncate, ModelKind, ModelState, Representation,
    TruncationMode,
};
use crate::rng::RngStream;

/// One full blocked sweep (NBFA or DCMLDA). Returns the number of
/// assignment operations spent on the token pass (n_vj * K per cell).
pub fn blocked_step(
    state: &mut ModelState,
    k_star: usize,
    eta_sampled: bool,
    rng: &mut RngStream,
) -> Result<u64> {
    debug_assert_eq!(state.representation, Representation::Blocked);
    let ops = resample_assignments(state, rng)?;
    resample_tables(state, rng)?;
    update_p(state, rng)?;
    update_c(state, rng)?;
    update_hierarchy(state, rng)?;
    if eta_sampled {
        sample_eta(state, rng)?;
    }
    update_phi(state, rng)?;
    update_theta(state, rng)?;
    if state.truncation == TruncationMode::Adaptive {
        relabel_and_truncate(state, k_star, rng)?;
    } else {
        state.global.k_active = count_active(state);
    }
    Ok(ops)
}

/// Token pass: z_ji ∝ n^{-ji}_{x_ji j k} + φ_{x_ji k}·score_kj over every
/// represented slot. Counts K weight evaluations per token.
fn resample_assignments(state: &mut ModelState, rng: &mut RngStream) -> Result<u64> {
    let k_slots = state.k_slots();
    let mut ops = 0u64;
    let mut base = vec![0.0f64; k_slots];
    let mut counts = vec![0u32; k_slots];
    let mut weights = vec![0.0f64; k_slots];

    let cells = std::mem::take(&mut state.latent.cells);
    let mut token_factors = std::mem::take(&mut state.latent.cell_token_factors);
    for (idx, &(v, j, _)) in cells.iter().enumerate() {
        let phi = &state.factors.as_ref().unwrap().phi;
        for k in 0..k_slots {
            let score = match state.kind {
                ModelKind::Dcmlda => state.global.r[k],
                _ => state.samples.theta[k][j as usize],
            };
            base[k] = phi[k][v as usize] * score;
            counts[k] = 0;
        }
        for &k in &token_factors[idx] {
            counts[k as usize] += 1;
        }
        for slot in token_factors[idx].iter_mut() {
            let old = *slot as usize;
            counts[old] -= 1;
            let mut total = 0.0;
            for k in 0..k_slots {
                weights[k] = counts[k] as f64 + base[k];
                total += weights[k];
            }
            ops += k_slots as u64;
            let u = rng.uniform() * total;
            let mut acc = 0.0;
            let mut new_k = k_slots - 1;
            for (k, &w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    new_k = k;
                    break;
                }
            }
            counts[new_k] += 1;
            *slot = new_k as u32;
        }
    }
    state.latent.cells = cells;
    state.latent.cell_token_factors = token_factors;
    rebuild_marginals(state);
    Ok(ops)
}

/// Table pass: ℓ_vjk ~ CRT(n_vjk, φ_vk·score_kj) for every nonzero cell count.
pub(crate) fn resample_tables(state: &mut ModelState, rng: &mut RngStream) -> Result<()> {
    let cells = state.latent.cells.clone();
    let mut ell_counts = vec![Vec::new(); cells.len()];
    for (idx, &(v, j, _)) in cells.iter().enumerate() {
        let assoc = &state.latent.cell_factor_counts[idx];
        let mut out = Vec::with_capacity(assoc.len());
        for &(k, n_vjk) in assoc {
            let phi_vk = state.factors.as_ref().unwrap().phi[k as usize][v as usize];
            let score = match state.kind {
                ModelKind::Dcmlda => state.global.r[k as usize],
                _ => state.samples.theta[k as usize][j as usize],
            };
            let ell = sample_crt(n_vjk as u64, (phi_vk * score).max(1e-300), rng)?;
            if ell > 0 {
                out.push((k, ell as u32));
            }
        }
        ell_counts[idx] = out;
    }
    state.latent.cell_ell_counts = ell_counts;
    rebuild_marginals(state);
    Ok(())
}
