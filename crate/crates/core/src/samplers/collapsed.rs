//! Collapsed Gibbs sweeps. Φ (and Θ where applicable) are marginalized; the
//! sweep jointly reseats every token as (factor, table) — factor only for
//! GNBP-PFA — then updates the global scalars from their conditionals.
//! Empty factors are garbage-collected lazily at end of sweep, folding their
//! weight back into the residual mass.

use super::eta::sample_eta;
use super::shared::{guarded_gamma, update_c, update_hierarchy, update_p};
use crate::dist::{sample_beta, sample_crt};
use crate::error::Result;
use crate::model::{
    count_active, rebuild_marginals, ModelKind, ModelState, Representation, TruncationMode,
    UNASSIGNED,
};
use crate::rng::RngStream;

// ---------------------------------------------------------------------------
// case weights (kept as plain arithmetic so the unit tests can pin them)

pub(crate) fn dish_smoothing(eta: f64, v_total: usize, ell_v_k: u64, ell_k: u64) -> f64 {
    (ell_v_k as f64 + eta) / (ell_k as f64 + v_total as f64 * eta)
}

pub(crate) fn nbfa_new_table_weight(
    eta: f64,
    v_total: usize,
    ell_v_k: u64,
    ell_k: u64,
    r_k: f64,
    ell_jk: u64,
    denom: f64,
) -> f64 {
    dish_smoothing(eta, v_total, ell_v_k, ell_k) * (r_k + ell_jk as f64) / denom
}

pub(crate) fn nbfa_new_factor_weight(v_total: usize, r_star: f64, denom: f64) -> f64 {
    r_star / (v_total as f64 * denom)
}

pub(crate) fn pfa_existing_weight(
    eta: f64,
    v_total: usize,
    n_v_k: u64,
    n_k: u64,
    n_jk: u64,
    r_k: f64,
) -> f64 {
    dish_smoothing(eta, v_total, n_v_k, n_k) * (n_jk as f64 + r_k)
}

pub(crate) fn pfa_new_factor_weight(v_total: usize, r_star: f64) -> f64 {
    r_star / v_total as f64
}

pub(crate) fn dcmlda_new_table_weight(
    eta: f64,
    v_total: usize,
    ell_v_k: u64,
    ell_k: u64,
    mass: f64,
    denom: f64,
) -> f64 {
    dish_smoothing(eta, v_total, ell_v_k, ell_k) * (ell_k as f64 + mass) / denom
}

pub(crate) fn dcmlda_new_factor_weight(v_total: usize, gamma0: f64, denom: f64) -> f64 {
    gamma0 / (v_total as f64 * denom)
}

// ---------------------------------------------------------------------------
// seating bookkeeping shared by the table-based sweeps (NBFA, DCMLDA)

/// Grow every per-slot marginal by one factor column.
fn grow_slot(state: &mut ModelState) {
    let v_total = state.v_total;
    for row in state.latent.ell_dot_jk.iter_mut() {
        row.push(0);
    }
    state.latent.ell_v_dot_k.push(vec![0; v_total]);
    state.latent.ell_dot_dot_k.push(0);
    for row in state.latent.n_dot_jk.iter_mut() {
        row.push(0);
    }
    state.latent.n_v_dot_k.push(vec![0; v_total]);
    state.latent.n_dot_dot_k.push(0);
}

/// Detach one token from its (factor, table); updates table occupancies and
/// the ℓ marginals, compacting table indices on table death.
fn remove_seated_token(state: &mut ModelState, idx: usize, tok: usize) {
    let (v, j, _) = state.latent.cells[idx];
    let (k, t) = state.latent.cell_token_tables[idx][tok];
    if k == UNASSIGNED {
        return;
    }
    state.latent.cell_token_tables[idx][tok] = (UNASSIGNED, 0);
    let assoc = &mut state.latent.cell_tables[idx];
    let entry = assoc
        .iter()
        .position(|(kk, _)| *kk == k)
        .expect("token factor must have a table entry");
    let sizes = &mut assoc[entry].1;
    sizes[t as usize] -= 1;
    if sizes[t as usize] == 0 {
        let last = sizes.len() - 1;
        if (t as usize) != last {
            sizes.swap(t as usize, last);
            for tt in state.latent.cell_token_tables[idx].iter_mut() {
                if *tt == (k, last as u32) {
                    tt.1 = t;
                }
            }
        }
        let assoc = &mut state.latent.cell_tables[idx];
        let sizes = &mut assoc[entry].1;
        sizes.pop();
        if sizes.is_empty() {
            assoc.swap_remove(entry);
        }
        let (k, j, v) = (k as usize, j as usize, v as usize);
        state.latent.ell_dot_jk[j][k] -= 1;
        state.latent.ell_v_dot_k[k][v] -= 1;
        state.latent.ell_dot_dot_k[k] -= 1;
    }
}

/// Seat one token at (k, existing table t) or a new table of factor k.
fn seat_token(state: &mut ModelState, idx: usize, tok: usize, k: u32, table: Option<u32>) {
    let (v, j, _) = state.latent.cells[idx];
    let assoc = &mut state.latent.cell_tables[idx];
    match table {
        Some(t) => {
            let entry = assoc.iter().position(|(kk, _)| *kk == k).unwrap();
            assoc[entry].1[t as usize] += 1;
            state.latent.cell_token_tables[idx][tok] = (k, t);
        }
        None => {
            let entry = match assoc.iter().position(|(kk, _)| *kk == k) {
                Some(e) => e,
                None => {
                    assoc.push((k, Vec::new()));
                    assoc.len() - 1
                }
            };
            assoc[entry].1.push(1);
            let t = assoc[entry].1.len() as u32 - 1;
            state.latent.cell_token_tables[idx][tok] = (k, t);
            let (k, j, v) = (k as usize, j as usize, v as usize);
            state.latent.ell_dot_jk[j][k] += 1;
            state.latent.ell_v_dot_k[k][v] += 1;
            state.latent.ell_dot_dot_k[k] += 1;
        }
    }
}

/// Drop empty factors (zero table count), folding their atom weight into the
/// residual mass where atoms are explicit, and relabel the survivors densely.
fn collect_garbage(state: &mut ModelState, by_tables: bool) {
    let k_slots = state.k_slots();
    let counts: Vec<u64> = if by_tables {
        state.latent.ell_dot_dot_k.clone()
    } else {
        state.latent.n_dot_dot_k.clone()
    };
    let keep: Vec<usize> = (0..k_slots).filter(|&k| counts[k] > 0).collect();
    if keep.len() == k_slots {
        rebuild_marginals(state);
        state.global.k_active = count_active(state);
        return;
    }
    let mut remap = vec![UNASSIGNED; k_slots];
    for (new_k, &old_k) in keep.iter().enumerate() {
        remap[old_k] = new_k as u32;
    }
    if !state.global.r.is_empty() {
        let mut r_new = Vec::with_capacity(keep.len());
        for (k, &w) in state.global.r.iter().enumerate() {
            if remap[k] != UNASSIGNED {
                r_new.push(w);
            } else {
                state.global.r_star += w;
            }
        }
        state.global.r = r_new;
        state.global.refresh_total();
    }
    for toks in state.latent.cell_token_tables.iter_mut() {
        for tt in toks.iter_mut() {
            if tt.0 != UNASSIGNED {
                tt.0 = remap[tt.0 as usize];
            }
        }
    }
    for toks in state.latent.cell_token_factors.iter_mut() {
        for k in toks.iter_mut() {
            if *k != UNASSIGNED {
                *k = remap[*k as usize];
            }
        }
    }
    for assoc in state.latent.cell_tables.iter_mut() {
        for e in assoc.iter_mut() {
            e.0 = remap[e.0 as usize];
        }
    }
    // shrink marginals to the kept slots so k_slots() is dense again
    let shrink = |v: &mut Vec<u64>| {
        let old = std::mem::take(v);
        *v = keep.iter().map(|&k| old[k]).collect();
    };
    shrink(&mut state.latent.ell_dot_dot_k);
    shrink(&mut state.latent.n_dot_dot_k);
    let shrink_vk = |m: &mut Vec<Vec<u64>>| {
        let old = std::mem::take(m);
        *m = keep.iter().map(|&k| old[k].clone()).collect();
    };
    shrink_vk(&mut state.latent.ell_v_dot_k);
    shrink_vk(&mut state.latent.n_v_dot_k);
    for row in state.latent.ell_dot_jk.iter_mut() {
        let old = std::mem::take(row);
        *row = keep.iter().map(|&k| old[k]).collect();
    }
    for row in state.latent.n_dot_jk.iter_mut() {
        let old = std::mem::take(row);
        *row = keep.iter().map(|&k| old[k]).collect();
    }
    rebuild_marginals(state);
    state.global.k_active = count_active(state);
}

// ---------------------------------------------------------------------------
// hGNBP-NBFA collapsed sweep

/// One collapsed sweep for the hGNBP-NBFA. Returns the number of seating
/// outcomes enumerated (the assignment-operation count).
pub fn collapsed_step(
    state: &mut ModelState,
    eta_sampled: bool,
    rng: &mut RngStream,
) -> Result<u64> {
    debug_assert_eq!(state.representation, Representation::Collapsed);
    debug_assert_eq!(state.kind, ModelKind::Nbfa);
    let adaptive = state.truncation == TruncationMode::Adaptive;
    let ops = nbfa_token_sweep(state, rng)?;

    if adaptive {
        collect_garbage(state, true);
    } else {
        rebuild_marginals(state);
        state.global.k_active = count_active(state);
    }

    // θ_·j ~ Gamma(G(Ω) + ℓ_·j·, 1/(c_j - ln(1-p_j)))
    for j in 0..state.num_samples() {
        let ell_j: u64 = state.latent.ell_dot_jk[j].iter().sum();
        let g_total = state.global.g_total;
        let scale = 1.0 / (state.samples.c[j] - (1.0 - state.samples.p[j]).ln());
        state.samples.theta_col_sums[j] = guarded_gamma(state, g_total + ell_j as f64, scale, rng)?;
    }

    update_hierarchy(state, rng)?;
    if adaptive {
        let scale = 1.0 / (state.global.c0 - state.samples.sum_log1m_p_tilde());
        state.global.r_star = guarded_gamma(state, state.global.gamma0, scale, rng)?;
        state.global.refresh_total();
    }
    update_p(state, rng)?;
    update_c(state, rng)?;
    if eta_sampled {
        sample_eta(state, rng)?;
    }
    Ok(ops)
}

/// The token pass alone: jointly reseat every (z_ji, b_ji). Globals are
/// read, not written (except residual-mass stick-breaking on new factors).
pub(crate) fn nbfa_token_sweep(state: &mut ModelState, rng: &mut RngStream) -> Result<u64> {
    let adaptive = state.truncation == TruncationMode::Adaptive;
    let v_total = state.v_total;
    let mut ops = 0u64;

    for idx in 0..state.latent.cells.len() {
        let (v, j, n_vj) = state.latent.cells[idx];
        let (v_us, j_us) = (v as usize, j as usize);
        let denom = state.samples.c[j_us] - (1.0 - state.samples.p[j_us]).ln();
        for tok in 0..n_vj as usize {
            remove_seated_token(state, idx, tok);

            // flat weight vector: existing tables, one new-table entry per
            // slot, then (adaptive) the brand-new-factor entry
            let k_slots = state.global.r.len();
            let mut weights: Vec<f64> = Vec::with_capacity(k_slots + 8);
            let mut labels: Vec<(u32, Option<u32>)> = Vec::with_capacity(k_slots + 8);
            for (kk, sizes) in &state.latent.cell_tables[idx] {
                for (t, &s) in sizes.iter().enumerate() {
                    weights.push(s as f64);
                    labels.push((*kk, Some(t as u32)));
                }
            }
            for k in 0..k_slots {
                weights.push(nbfa_new_table_weight(
                    state.eta,
                    v_total,
                    state.latent.ell_v_dot_k[k][v_us],
                    state.latent.ell_dot_dot_k[k],
                    state.global.r[k],
                    state.latent.ell_dot_jk[j_us][k],
                    denom,
                ));
                labels.push((k as u32, None));
            }
            if adaptive {
                weights.push(nbfa_new_factor_weight(v_total, state.global.r_star, denom));
                labels.push((UNASSIGNED, None));
            }
            ops += weights.len() as u64;

            let total: f64 = weights.iter().sum();
            let u = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = weights.len() - 1;
            for (i, &w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            let (k_pick, table) = labels[pick];
            let k_final = if k_pick == UNASSIGNED {
                // open a brand-new factor by stick-breaking the residual mass
                let beta = sample_beta(1.0, state.global.gamma0, rng)?;
                let r_new = beta * state.global.r_star;
                state.global.r_star -= r_new;
                state.global.r.push(r_new.max(f64::MIN_POSITIVE));
                state.global.refresh_total();
                grow_slot(state);
                state.global.r.len() as u32 - 1
            } else {
                k_pick
            };
            seat_token(state, idx, tok, k_final, table);
        }
    }
    Ok(ops)
}

// ---------------------------------------------------------------------------
// GNBP-PFA collapsed sweep

/// One collapsed sweep for the GNBP-PFA (z only; Φ and Θ marginalized).
pub fn pfa_collapsed_step(
    state: &mut ModelState,
    eta_sampled: bool,
    rng: &mut RngStream,
) -> Result<u64> {
    debug_assert_eq!(state.representation, Representation::Collapsed);
    debug_assert_eq!(state.kind, ModelKind::Pfa);
    let adaptive = state.truncation == TruncationMode::Adaptive;
    let v_total = state.v_total;
    let mut ops = 0u64;

    for idx in 0..state.latent.cells.len() {
        let (v, j, n_vj) = state.latent.cells[idx];
        let (v_us, j_us) = (v as usize, j as usize);
        for tok in 0..n_vj as usize {
            // detach
            let k_old = state.latent.cell_token_factors[idx][tok];
            if k_old != UNASSIGNED {
                let k = k_old as usize;
                state.latent.cell_token_factors[idx][tok] = UNASSIGNED;
                state.latent.n_dot_jk[j_us][k] -= 1;
                state.latent.n_v_dot_k[k][v_us] -= 1;
                state.latent.n_dot_dot_k[k] -= 1;
            }

            let k_slots = state.global.r.len();
            let mut weights: Vec<f64> = Vec::with_capacity(k_slots + 1);
            for k in 0..k_slots {
                weights.push(pfa_existing_weight(
                    state.eta,
                    v_total,
                    state.latent.n_v_dot_k[k][v_us],
                    state.latent.n_dot_dot_k[k],
                    state.latent.n_dot_jk[j_us][k],
                    state.global.r[k],
                ));
            }
            if adaptive {
                weights.push(pfa_new_factor_weight(v_total, state.global.r_star));
            }
            ops += weights.len() as u64;

            let total: f64 = weights.iter().sum();
            let u = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = weights.len() - 1;
            for (i, &w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            let k_final = if adaptive && pick == k_slots {
                let beta = sample_beta(1.0, state.global.gamma0, rng)?;
                let r_new = beta * state.global.r_star;
                state.global.r_star -= r_new;
                state.global.r.push(r_new.max(f64::MIN_POSITIVE));
                state.global.refresh_total();
                grow_slot(state);
                k_slots
            } else {
                pick
            };
            state.latent.cell_token_factors[idx][tok] = k_final as u32;
            state.latent.n_dot_jk[j_us][k_final] += 1;
            state.latent.n_v_dot_k[k_final][v_us] += 1;
            state.latent.n_dot_dot_k[k_final] += 1;
        }
    }

    if adaptive {
        collect_garbage(state, false);
    } else {
        rebuild_marginals(state);
        state.global.k_active = count_active(state);
    }

    update_hierarchy(state, rng)?;
    if adaptive {
        let scale = 1.0 / (state.global.c0 - state.samples.sum_log1m_p());
        state.global.r_star = guarded_gamma(state, state.global.gamma0, scale, rng)?;
        state.global.refresh_total();
    }
    update_p(state, rng)?;
    if eta_sampled {
        sample_eta(state, rng)?;
    }
    Ok(ops)
}

// ---------------------------------------------------------------------------
// GNBP-DCMLDA collapsed sweep

/// One collapsed sweep for the GNBP-DCMLDA with G fully marginalized: no
/// per-factor weights exist; the residual-mass slot transiently carries the
/// sampled total mass G(Ω) for the p_j and c0 conditionals.
pub fn dcmlda_collapsed_step(
    state: &mut ModelState,
    eta_sampled: bool,
    rng: &mut RngStream,
) -> Result<u64> {
    debug_assert_eq!(state.representation, Representation::Collapsed);
    debug_assert_eq!(state.kind, ModelKind::Dcmlda);
    let adaptive = state.truncation == TruncationMode::Adaptive;
    let ops = dcmlda_token_sweep(state, rng)?;

    if adaptive {
        collect_garbage(state, true);
    } else {
        rebuild_marginals(state);
        state.global.k_active = count_active(state);
    }

    // γ0, then the transient total mass G(Ω), then p_j and c0
    let (a0, b0, e0, f0) = (state.hyper.a0, state.hyper.b0, state.hyper.e0, state.hyper.f0);
    let neg_log = -state.samples.sum_log1m_p();
    let p_top = neg_log / (state.global.c0 + neg_log);
    let k_slots = state.k_slots();
    let gamma0_shape = if adaptive {
        a0 + state.global.k_active as f64
    } else {
        let per_atom = (state.global.gamma0 / k_slots as f64).max(1e-300);
        let mut t_sum = 0u64;
        for k in 0..k_slots {
            let c = state.latent.ell_dot_dot_k[k];
            if c > 0 {
                t_sum += sample_crt(c, per_atom, rng)?;
            }
        }
        a0 + t_sum as f64
    };
    state.global.gamma0 =
        guarded_gamma(state, gamma0_shape, 1.0 / (b0 - (1.0 - p_top).ln()), rng)?;

    let ell_total: u64 = state.latent.ell_dot_dot_k.iter().sum();
    let mass_scale = 1.0 / (state.global.c0 + neg_log);
    state.global.r_star =
        guarded_gamma(state, state.global.gamma0 + ell_total as f64, mass_scale, rng)?;
    state.global.refresh_total();

    update_p(state, rng)?;
    state.global.c0 =
        guarded_gamma(state, e0 + state.global.gamma0, 1.0 / (f0 + state.global.g_total), rng)?;
    if eta_sampled {
        sample_eta(state, rng)?;
    }
    Ok(ops)
}

/// The DCMLDA token pass alone.
pub(crate) fn dcmlda_token_sweep(state: &mut ModelState, rng: &mut RngStream) -> Result<u64> {
    let adaptive = state.truncation == TruncationMode::Adaptive;
    let v_total = state.v_total;
    let mut ops = 0u64;

    // p and c0 are fixed during the sweep, so the denominator is too
    let denom = state.global.c0 - state.samples.sum_log1m_p();
    for idx in 0..state.latent.cells.len() {
        let (v, _, n_vj) = state.latent.cells[idx];
        let v_us = v as usize;
        for tok in 0..n_vj as usize {
            remove_seated_token(state, idx, tok);

            let k_slots = state.latent.ell_dot_dot_k.len();
            let mut weights: Vec<f64> = Vec::with_capacity(k_slots + 8);
            let mut labels: Vec<(u32, Option<u32>)> = Vec::with_capacity(k_slots + 8);
            for (kk, sizes) in &state.latent.cell_tables[idx] {
                for (t, &s) in sizes.iter().enumerate() {
                    weights.push(s as f64);
                    labels.push((*kk, Some(t as u32)));
                }
            }
            let per_atom_mass = if adaptive {
                0.0
            } else {
                state.global.gamma0 / k_slots as f64
            };
            for k in 0..k_slots {
                weights.push(dcmlda_new_table_weight(
                    state.eta,
                    v_total,
                    state.latent.ell_v_dot_k[k][v_us],
                    state.latent.ell_dot_dot_k[k],
                    per_atom_mass,
                    denom,
                ));
                labels.push((k as u32, None));
            }
            if adaptive {
                weights.push(dcmlda_new_factor_weight(v_total, state.global.gamma0, denom));
                labels.push((UNASSIGNED, None));
            }
            ops += weights.len() as u64;

            let total: f64 = weights.iter().sum();
            let u = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = weights.len() - 1;
            for (i, &w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            let (k_pick, table) = labels[pick];
            let k_final = if k_pick == UNASSIGNED {
                grow_slot(state);
                state.latent.ell_dot_dot_k.len() as u32 - 1
            } else {
                k_pick
            };
            seat_token(state, idx, tok, k_final, table);
        }
    }
    Ok(ops)
}
