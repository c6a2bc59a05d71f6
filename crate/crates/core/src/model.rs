//! Latent-variable state for the three models (GNBP-PFA, GNBP-DCMLDA,
//! hGNBP-NBFA), prior hyperparameters, adaptive-truncation bookkeeping, and
//! the per-cell Poisson-rate estimators.

use crate::corpus::SparseCountMatrix;
use crate::dist::{sample_beta, sample_gamma, sample_symmetric_dirichlet};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

pub const UNASSIGNED: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Pfa,
    Dcmlda,
    Nbfa,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Pfa => write!(f, "pfa"),
            ModelKind::Dcmlda => write!(f, "dcmlda"),
            ModelKind::Nbfa => write!(f, "nbfa"),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pfa" => Ok(ModelKind::Pfa),
            "dcmlda" => Ok(ModelKind::Dcmlda),
            "nbfa" => Ok(ModelKind::Nbfa),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

/// Which latent representation the state carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    /// token factor assignments z, per-cell counts n_vjk, tables ℓ_vjk
    Blocked,
    /// token (z, b) seatings with per-table occupancies; Φ and Θ collapsed
    Collapsed,
    /// compound-Poisson: per-cell ℓ_vj and ℓ_vjk only, no tokens
    CpBlocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruncationMode {
    Adaptive,
    Fixed,
}

/// Gamma/Beta prior constants. The paper's experiments use
/// a0 = b0 = 0.01 and e0 = f0 = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub a0: f64,
    pub b0: f64,
    pub e0: f64,
    pub f0: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams { a0: 0.01, b0: 0.01, e0: 1.0, f0: 1.0 }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a0", self.a0), ("b0", self.b0), ("e0", self.e0), ("f0", self.f0)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Parameter(format!("hyperparameter {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Global gamma-process state: atom weights (active slots first, then the
/// reserve slots in blocked modes), residual mass r_star (collapsed modes),
/// the mass parameter gamma0 and scale parameter c0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMeasureState {
    pub r: Vec<f64>,
    pub r_star: f64,
    pub gamma0: f64,
    pub c0: f64,
    pub k_active: usize,
    pub k_star: usize,
    pub g_total: f64,
}

impl GlobalMeasureState {
    pub fn refresh_total(&mut self) {
        self.g_total = self.r_star + self.r.iter().sum::<f64>();
    }

    pub fn total_consistent(&self) -> bool {
        let s = self.r_star + self.r.iter().sum::<f64>();
        (s - self.g_total).abs() <= 1e-9 * s.abs().max(1.0)
    }
}

/// Factor loading matrix Φ, one V-simplex column per atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorState {
    pub phi: Vec<Vec<f64>>,
}

/// Per-sample parameters: factor scores θ_kj (dense over slots), their
/// column sums θ_·j, and the per-sample p_j / c_j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleState {
    /// theta[k][j]; empty in collapsed modes and for DCMLDA
    pub theta: Vec<Vec<f64>>,
    /// θ_·j; kept in all NBFA modes (collapsed keeps only this)
    pub theta_col_sums: Vec<f64>,
    pub p: Vec<f64>,
    /// c_j; empty for PFA and DCMLDA (those models have no per-sample scale)
    pub c: Vec<f64>,
}

impl SampleState {
    /// p̃_j = -ln(1-p_j) / (c_j - ln(1-p_j))
    pub fn p_tilde(&self, j: usize) -> f64 {
        let a = -(1.0 - self.p[j]).ln();
        a / (self.c[j] + a)
    }

    /// Σ_j ln(1-p̃_j)
    pub fn sum_log1m_p_tilde(&self) -> f64 {
        (0..self.p.len()).map(|j| (1.0 - self.p_tilde(j)).ln()).sum()
    }

    /// Σ_j ln(1-p_j)
    pub fn sum_log1m_p(&self) -> f64 {
        self.p.iter().map(|&p| (1.0 - p).ln()).sum()
    }

    /// p̃̃ = -Σ_j ln(1-p̃_j) / (c0 - Σ_j ln(1-p̃_j))
    pub fn p_tilde_tilde(&self, c0: f64) -> f64 {
        let a = -self.sum_log1m_p_tilde();
        a / (c0 + a)
    }
}

/// The augmentation layer: token assignments, per-cell factor counts, table
/// counts, and every marginal the updates touch. Which pieces are populated
/// depends on the representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LatentCountState {
    /// (v, j, n_vj) per nonzero training cell, in column-major corpus order
    pub cells: Vec<(u32, u32, u32)>,
    /// blocked: per cell, factor of each token (length n_vj)
    pub cell_token_factors: Vec<Vec<u32>>,
    /// collapsed: per cell, (factor, table) of each token
    pub cell_token_tables: Vec<Vec<(u32, u32)>>,
    /// collapsed: per cell, association list factor -> table occupancies n_vjkt
    pub cell_tables: Vec<Vec<(u32, Vec<u32>)>>,
    /// blocked: per cell, association list factor -> n_vjk
    pub cell_factor_counts: Vec<Vec<(u32, u32)>>,
    /// cp-blocked: ℓ_vj per cell
    pub cell_ell: Vec<u32>,
    /// per cell, association list factor -> ℓ_vjk
    pub cell_ell_counts: Vec<Vec<(u32, u32)>>,
    /// second-layer CRT counts ℓ̃_jk (NBFA hierarchy); [j][k]
    pub ell_tilde_jk: Vec<Vec<u64>>,
    // marginals, all recomputable from the cell tables
    pub n_dot_jk: Vec<Vec<u64>>,
    pub ell_dot_jk: Vec<Vec<u64>>,
    pub ell_v_dot_k: Vec<Vec<u64>>,
    pub ell_dot_dot_k: Vec<u64>,
    pub n_v_dot_k: Vec<Vec<u64>>,
    pub n_dot_dot_k: Vec<u64>,
}

/// η data-augmentation state (Appendix-E style updates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EtaAuxState {
    pub q: Vec<f64>,
    pub t: Vec<Vec<u64>>,
}

/// Complete latent state of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub kind: ModelKind,
    pub representation: Representation,
    pub truncation: TruncationMode,
    pub hyper: Hyperparams,
    pub v_total: usize,
    pub eta: f64,
    pub global: GlobalMeasureState,
    pub factors: Option<FactorState>,
    pub samples: SampleState,
    pub latent: LatentCountState,
    pub eta_aux: EtaAuxState,
    /// count of numeric clamps applied (p_j at the boundary, floored shapes)
    pub clamp_warnings: u64,
}

impl ModelState {
    /// Number of atom slots currently represented.
    pub fn k_slots(&self) -> usize {
        match self.representation {
            Representation::Collapsed => {
                if self.kind == ModelKind::Dcmlda {
                    self.latent.ell_dot_dot_k.len()
                } else {
                    self.global.r.len()
                }
            }
            _ => self.global.r.len(),
        }
    }

    pub fn num_samples(&self) -> usize {
        self.samples.p.len()
    }

    /// Σ_k φ_vk θ_kj over all represented slots.
    pub fn mix_rate(&self, v: u32, j: usize) -> f64 {
        let phi = &self.factors.as_ref().expect("mix_rate needs factors").phi;
        match self.kind {
            ModelKind::Dcmlda => phi
                .iter()
                .zip(&self.global.r)
                .map(|(col, &r)| col[v as usize] * r)
                .sum(),
            _ => phi
                .iter()
                .zip(&self.samples.theta)
                .map(|(col, th)| col[v as usize] * th[j])
                .sum(),
        }
    }

    /// Estimated Poisson rate of n_vj given the current factors and scores
    /// (PFA: ΣΦθ; DCMLDA: (n+ΣΦr)p; NBFA: (n+ΣΦθ)p, n the training count).
    pub fn estimated_poisson_rate(&self, v: u32, j: usize, n_train: u32) -> f64 {
        poisson_rate(self.kind, n_train, self.samples.p[j], self.mix_rate(v, j))
    }
}

/// Table-2 rate formulas shared by the state- and draw-based paths.
pub fn poisson_rate(kind: ModelKind, n_train: u32, p_j: f64, mix: f64) -> f64 {
    match kind {
        ModelKind::Pfa => mix,
        ModelKind::Dcmlda | ModelKind::Nbfa => (n_train as f64 + mix) * p_j,
    }
}

fn cells_of(corpus: &SparseCountMatrix) -> Vec<(u32, u32, u32)> {
    let mut cells = Vec::with_capacity(corpus.nnz());
    for j in 0..corpus.num_samples() {
        for &(v, n) in corpus.column(j) {
            cells.push((v, j as u32, n));
        }
    }
    cells
}

/// Draw a priors-consistent initial state.
pub fn init_state(
    kind: ModelKind,
    representation: Representation,
    truncation: TruncationMode,
    k_init: usize,
    hyper: &Hyperparams,
    eta: f64,
    corpus: &SparseCountMatrix,
    rng: &mut RngStream,
) -> Result<ModelState> {
    hyper.validate()?;
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::Parameter(format!("eta must be positive, got {eta}")));
    }
    if k_init == 0 && representation != Representation::Collapsed {
        return Err(Error::Config(
            "K_init = 0 is only valid for the collapsed sampler".into(),
        ));
    }
    let v_total = corpus.num_covariates();
    let j_total = corpus.num_samples();

    let gamma0 = sample_gamma(hyper.a0, 1.0 / hyper.b0, rng)?;
    let c0 = sample_gamma(hyper.e0, 1.0 / hyper.f0, rng)?;
    let mut p = Vec::with_capacity(j_total);
    for _ in 0..j_total {
        p.push(clamp_p(sample_beta(hyper.a0, hyper.b0, rng)?));
    }
    let has_cj = kind == ModelKind::Nbfa;
    let mut c = Vec::new();
    if has_cj {
        for _ in 0..j_total {
            c.push(sample_gamma(hyper.e0, 1.0 / hyper.f0, rng)?);
        }
    }

    let mut r = Vec::with_capacity(k_init);
    for _ in 0..k_init {
        r.push(sample_gamma(gamma0 / k_init.max(1) as f64, 1.0 / c0, rng)?);
    }

    let collapsed = representation == Representation::Collapsed;
    // residual gamma-process mass exists only where atoms stay implicit
    let r_star = if collapsed && truncation == TruncationMode::Adaptive {
        sample_gamma(gamma0, 1.0 / c0, rng)?
    } else {
        0.0
    };

    let factors = if collapsed {
        None
    } else {
        let mut phi = Vec::with_capacity(k_init);
        for _ in 0..k_init {
            phi.push(sample_symmetric_dirichlet(eta, v_total, rng)?);
        }
        Some(FactorState { phi })
    };

    let mut theta: Vec<Vec<f64>> = Vec::new();
    let mut theta_col_sums = vec![0.0; j_total];
    if kind != ModelKind::Dcmlda {
        if collapsed {
            // only θ_·j is kept, and only NBFA needs it: θ_·j ~ Gamma(G(Ω), 1/c_j)
            let g_total = r_star + r.iter().sum::<f64>();
            for j in 0..j_total {
                if has_cj {
                    theta_col_sums[j] = sample_gamma(g_total, 1.0 / c[j], rng)?;
                }
            }
        } else {
            for k in 0..k_init {
                let mut row = Vec::with_capacity(j_total);
                for j in 0..j_total {
                    let scale = if has_cj { 1.0 / c[j] } else { p[j] / (1.0 - p[j]) };
                    row.push(sample_gamma(r[k], scale, rng)?);
                }
                theta.push(row);
            }
            for j in 0..j_total {
                theta_col_sums[j] = theta.iter().map(|row| row[j]).sum();
            }
        }
    }

    let cells = cells_of(corpus);
    let mut latent = LatentCountState {
        cells: cells.clone(),
        ..Default::default()
    };

    latent.cell_ell_counts = vec![Vec::new(); cells.len()];
    match representation {
        Representation::Blocked => {
            let mut token_factors = Vec::with_capacity(cells.len());
            for &(_, _, n) in &cells {
                let ks = (0..n).map(|_| rng.below(k_init) as u32).collect();
                token_factors.push(ks);
            }
            latent.cell_token_factors = token_factors;
        }
        Representation::Collapsed if kind == ModelKind::Pfa => {
            // PFA collapses tables away entirely: tokens carry factors only
            let mut token_factors = Vec::with_capacity(cells.len());
            for &(_, _, n) in &cells {
                let ks = (0..n)
                    .map(|_| {
                        if k_init == 0 {
                            UNASSIGNED
                        } else {
                            rng.below(k_init) as u32
                        }
                    })
                    .collect();
                token_factors.push(ks);
            }
            latent.cell_token_factors = token_factors;
        }
        Representation::Collapsed => {
            // Unassigned sentinel when starting from an empty active set;
            // otherwise uniform factors with sequential CRP(1) seating.
            let mut token_tables = Vec::with_capacity(cells.len());
            let mut tables = Vec::with_capacity(cells.len());
            for &(_, _, n) in &cells {
                if k_init == 0 {
                    token_tables.push(vec![(UNASSIGNED, 0u32); n as usize]);
                    tables.push(Vec::new());
                    continue;
                }
                let mut per_cell: Vec<(u32, Vec<u32>)> = Vec::new();
                let mut toks = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    let k = rng.below(k_init) as u32;
                    let entry = match per_cell.iter_mut().position(|(kk, _)| *kk == k) {
                        Some(i) => i,
                        None => {
                            per_cell.push((k, Vec::new()));
                            per_cell.len() - 1
                        }
                    };
                    let sizes = &mut per_cell[entry].1;
                    let total: u32 = sizes.iter().sum();
                    let u = rng.uniform() * (total as f64 + 1.0);
                    if u < 1.0 || sizes.is_empty() {
                        sizes.push(1);
                        toks.push((k, sizes.len() as u32 - 1));
                    } else {
                        let mut acc = 1.0;
                        let mut placed = sizes.len() - 1;
                        for (idx, s) in sizes.iter().enumerate() {
                            acc += *s as f64;
                            if u < acc {
                                placed = idx;
                                break;
                            }
                        }
                        sizes[placed] += 1;
                        toks.push((k, placed as u32));
                    }
                }
                token_tables.push(toks);
                tables.push(per_cell);
            }
            latent.cell_token_tables = token_tables;
            latent.cell_tables = tables;
        }
        Representation::CpBlocked => {
            latent.cell_ell = vec![0; cells.len()];
            latent.cell_ell_counts = vec![Vec::new(); cells.len()];
        }
    }

    let mut state = ModelState {
        kind,
        representation,
        truncation,
        hyper: *hyper,
        v_total,
        eta,
        global: GlobalMeasureState {
            r,
            r_star,
            gamma0,
            c0,
            k_active: 0,
            k_star: 0,
            g_total: 0.0,
        },
        factors,
        samples: SampleState { theta, theta_col_sums, p, c },
        latent,
        eta_aux: EtaAuxState::default(),
        clamp_warnings: 0,
    };
    state.global.refresh_total();
    rebuild_marginals(&mut state);
    state.global.k_active = count_active(&state);
    Ok(state)
}

pub fn clamp_p(p: f64) -> f64 {
    p.clamp(1e-12, 1.0 - 1e-12)
}

/// Number of atoms carrying nonzero total latent count.
pub fn count_active(state: &ModelState) -> usize {
    let l = &state.latent;
    let by_ell = l.ell_dot_dot_k.iter().filter(|&&x| x > 0).count();
    let by_n = l.n_dot_dot_k.iter().filter(|&&x| x > 0).count();
    by_ell.max(by_n)
}

/// Recompute every marginal from the base cell tables (exact integers).
pub fn rebuild_marginals(state: &mut ModelState) {
    let k_slots = state.k_slots();
    let v_total = state.v_total;
    let j_total = state.num_samples();
    let l = &mut state.latent;

    l.n_dot_jk = vec![vec![0; k_slots]; j_total];
    l.ell_dot_jk = vec![vec![0; k_slots]; j_total];
    l.ell_v_dot_k = vec![vec![0; v_total]; k_slots];
    l.ell_dot_dot_k = vec![0; k_slots];
    l.n_v_dot_k = vec![vec![0; v_total]; k_slots];
    l.n_dot_dot_k = vec![0; k_slots];

    // derive per-cell n_vjk / ℓ_vjk association lists from the representation
    match state.representation {
        Representation::Blocked => {
            l.cell_factor_counts = l
                .cell_token_factors
                .iter()
                .map(|toks| {
                    let mut assoc: Vec<(u32, u32)> = Vec::new();
                    for &k in toks {
                        match assoc.iter_mut().find(|(kk, _)| *kk == k) {
                            Some(e) => e.1 += 1,
                            None => assoc.push((k, 1)),
                        }
                    }
                    assoc.sort_unstable_by_key(|&(k, _)| k);
                    assoc
                })
                .collect();
        }
        Representation::Collapsed if state.kind == ModelKind::Pfa => {
            l.cell_factor_counts = l
                .cell_token_factors
                .iter()
                .map(|toks| {
                    let mut assoc: Vec<(u32, u32)> = Vec::new();
                    for &k in toks {
                        if k == UNASSIGNED {
                            continue;
                        }
                        match assoc.iter_mut().find(|(kk, _)| *kk == k) {
                            Some(e) => e.1 += 1,
                            None => assoc.push((k, 1)),
                        }
                    }
                    assoc.sort_unstable_by_key(|&(k, _)| k);
                    assoc
                })
                .collect();
        }
        Representation::Collapsed => {
            l.cell_ell_counts = l
                .cell_tables
                .iter()
                .map(|assoc| {
                    let mut out: Vec<(u32, u32)> = assoc
                        .iter()
                        .filter(|(_, sizes)| !sizes.is_empty())
                        .map(|(k, sizes)| (*k, sizes.len() as u32))
                        .collect();
                    out.sort_unstable_by_key(|&(k, _)| k);
                    out
                })
                .collect();
            l.cell_factor_counts = l
                .cell_tables
                .iter()
                .map(|assoc| {
                    let mut out: Vec<(u32, u32)> = assoc
                        .iter()
                        .filter(|(_, sizes)| !sizes.is_empty())
                        .map(|(k, sizes)| (*k, sizes.iter().sum::<u32>()))
                        .collect();
                    out.sort_unstable_by_key(|&(k, _)| k);
                    out
                })
                .collect();
        }
        Representation::CpBlocked => {}
    }

    for (idx, &(v, j, _)) in l.cells.iter().enumerate() {
        if state.representation != Representation::CpBlocked {
            if let Some(assoc) = l.cell_factor_counts.get(idx) {
                for &(k, n) in assoc {
                    if k == UNASSIGNED {
                        continue;
                    }
                    let (k, j, v) = (k as usize, j as usize, v as usize);
                    l.n_dot_jk[j][k] += n as u64;
                    l.n_v_dot_k[k][v] += n as u64;
                    l.n_dot_dot_k[k] += n as u64;
                }
            }
        }
        if let Some(assoc) = l.cell_ell_counts.get(idx) {
            for &(k, e) in assoc {
                if k == UNASSIGNED {
                    continue;
                }
                let (k, j, v) = (k as usize, j as usize, v as usize);
                l.ell_dot_jk[j][k] += e as u64;
                l.ell_v_dot_k[k][v] += e as u64;
                l.ell_dot_dot_k[k] += e as u64;
            }
        }
    }
}

/// Relabel active atoms to the front (preserving order), drop unused slots,
/// and append `k_star` fresh reserve atoms drawn from the gamma-process
/// remainder: r ~ Gamma(γ0/K_star, 1/(c0 - Σ_j ln(1-p̃_j))), φ ~ Dir(η..η),
/// and for NBFA θ_kj ~ Gamma(r_k, 1/(c_j - ln(1-p_j))).
pub fn relabel_and_truncate(state: &mut ModelState, k_star: usize, rng: &mut RngStream) -> Result<()> {
    debug_assert!(state.representation != Representation::Collapsed);
    let old_slots = state.k_slots();
    let active: Vec<usize> = (0..old_slots)
        .filter(|&k| {
            state.latent.ell_dot_dot_k.get(k).copied().unwrap_or(0) > 0
                || state.latent.n_dot_dot_k.get(k).copied().unwrap_or(0) > 0
        })
        .collect();
    let k_plus = active.len();
    let mut remap = vec![UNASSIGNED; old_slots];
    for (new_k, &old_k) in active.iter().enumerate() {
        remap[old_k] = new_k as u32;
    }

    // global weights
    let scale = reserve_scale(state);
    let mut r_new: Vec<f64> = active.iter().map(|&k| state.global.r[k]).collect();
    for _ in 0..k_star {
        r_new.push(sample_gamma(state.global.gamma0 / k_star as f64, scale, rng)?);
    }

    // factors
    let v_total = state.v_total;
    let phi_old = &state.factors.as_ref().unwrap().phi;
    let mut phi_new: Vec<Vec<f64>> = active.iter().map(|&k| phi_old[k].clone()).collect();
    for _ in 0..k_star {
        phi_new.push(sample_symmetric_dirichlet(state.eta, v_total, rng)?);
    }

    // factor scores (NBFA / PFA-blocked only)
    if state.kind != ModelKind::Dcmlda {
        let theta_old = std::mem::take(&mut state.samples.theta);
        let mut theta_new: Vec<Vec<f64>> = active.iter().map(|&k| theta_old[k].clone()).collect();
        for k in k_plus..k_plus + k_star {
            let mut row = Vec::with_capacity(state.num_samples());
            for j in 0..state.num_samples() {
                let scale_j = 1.0 / (state.samples.c[j] - (1.0 - state.samples.p[j]).ln());
                row.push(sample_gamma(r_new[k], scale_j, rng)?);
            }
            theta_new.push(row);
        }
        state.samples.theta = theta_new;
        for j in 0..state.num_samples() {
            state.samples.theta_col_sums[j] = state.samples.theta.iter().map(|row| row[j]).sum();
        }
    }

    state.global.r = r_new;
    state.global.k_active = k_plus;
    state.global.k_star = k_star;
    state.global.refresh_total();
    state.factors = Some(FactorState { phi: phi_new });

    // re-index every count table
    let l = &mut state.latent;
    for assoc in l
        .cell_factor_counts
        .iter_mut()
        .chain(l.cell_ell_counts.iter_mut())
    {
        for e in assoc.iter_mut() {
            debug_assert!(remap[e.0 as usize] != UNASSIGNED);
            e.0 = remap[e.0 as usize];
        }
        assoc.sort_unstable_by_key(|&(k, _)| k);
    }
    for toks in l.cell_token_factors.iter_mut() {
        for k in toks.iter_mut() {
            *k = remap[*k as usize];
        }
    }
    l.ell_tilde_jk = Vec::new();
    rebuild_marginals(state);
    Ok(())
}

/// 1 / (c0 - Σ_j ln(1-p̃_j)) for NBFA; 1 / (c0 - Σ_j ln(1-p_j)) for the
/// single-layer GNBP models.
pub fn reserve_scale(state: &ModelState) -> f64 {
    match state.kind {
        ModelKind::Nbfa => 1.0 / (state.global.c0 - state.samples.sum_log1m_p_tilde()),
        _ => 1.0 / (state.global.c0 - state.samples.sum_log1m_p()),
    }
}

/// Exact-integer and numeric invariant checks. Used by debug assertions each
/// iteration and by tests; in release chains it runs every 100th iteration.
pub fn check_invariants(state: &ModelState) -> Result<()> {
    let l = &state.latent;
    // cell-level conservation
    for (idx, &(_, _, n_vj)) in l.cells.iter().enumerate() {
        match state.representation {
            Representation::Blocked | Representation::Collapsed => {
                let total: u32 = l.cell_factor_counts[idx]
                    .iter()
                    .filter(|(k, _)| *k != UNASSIGNED)
                    .map(|&(_, n)| n)
                    .sum();
                let tables_unassigned = l
                    .cell_token_tables
                    .get(idx)
                    .map(|t| t.iter().all(|&(k, _)| k == UNASSIGNED))
                    .unwrap_or(false);
                let factors_unassigned = l
                    .cell_token_factors
                    .get(idx)
                    .map(|t| t.iter().all(|&k| k == UNASSIGNED))
                    .unwrap_or(false);
                let unassigned = l.cell_factor_counts[idx].is_empty()
                    && (tables_unassigned || factors_unassigned);
                if !unassigned && total != n_vj {
                    return Err(Error::Numeric(format!(
                        "cell {idx}: sum_k n_vjk = {total} != n_vj = {n_vj}"
                    )));
                }
            }
            Representation::CpBlocked => {
                let ell: u32 = l.cell_ell_counts[idx].iter().map(|&(_, e)| e).sum();
                if ell != l.cell_ell[idx] {
                    return Err(Error::Numeric(format!(
                        "cell {idx}: sum_k ell_vjk = {ell} != ell_vj = {}",
                        l.cell_ell[idx]
                    )));
                }
                if l.cell_ell[idx] > n_vj || (n_vj >= 1 && l.cell_ell[idx] < 1 && ell > 0) {
                    return Err(Error::Numeric(format!(
                        "cell {idx}: ell_vj = {} outside [1, {n_vj}]",
                        l.cell_ell[idx]
                    )));
                }
                if n_vj == 1 && l.cell_ell[idx] != 0 && l.cell_ell[idx] != 1 {
                    return Err(Error::Numeric("ell_vj must equal n_vj for n_vj <= 1".into()));
                }
            }
        }
        // tables never exceed counts
        let n_assoc: Vec<(u32, u32)> = l
            .cell_factor_counts
            .get(idx)
            .cloned()
            .unwrap_or_default();
        for &(k, e) in &l.cell_ell_counts.get(idx).cloned().unwrap_or_default() {
            if let Some(&(_, n)) = n_assoc.iter().find(|(kk, _)| *kk == k) {
                if e > n {
                    return Err(Error::Numeric(format!("cell {idx}: ell_vjk {e} > n_vjk {n}")));
                }
            }
        }
    }
    // marginal consistency
    let mut clone = state.clone();
    rebuild_marginals(&mut clone);
    let (a, b) = (&state.latent, &clone.latent);
    if a.n_dot_jk != b.n_dot_jk
        || a.ell_dot_jk != b.ell_dot_jk
        || a.ell_v_dot_k != b.ell_v_dot_k
        || a.ell_dot_dot_k != b.ell_dot_dot_k
        || a.n_v_dot_k != b.n_v_dot_k
        || a.n_dot_dot_k != b.n_dot_dot_k
    {
        return Err(Error::Numeric("cached marginals diverge from recomputation".into()));
    }
    // simplex and positivity
    if let Some(f) = &state.factors {
        for (k, col) in f.phi.iter().enumerate() {
            let s: f64 = col.iter().sum();
            if (s - 1.0).abs() > 1e-9 || col.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(Error::Numeric(format!("phi[{k}] is not a simplex (sum {s})")));
            }
        }
    }
    if !state.samples.theta.is_empty() {
        for j in 0..state.num_samples() {
            let s: f64 = state.samples.theta.iter().map(|row| row[j]).sum();
            let cached = state.samples.theta_col_sums[j];
            if (s - cached).abs() > 1e-9 * s.abs().max(1.0) {
                return Err(Error::Numeric(format!(
                    "theta column sum mismatch at j={j}: {s} vs {cached}"
                )));
            }
        }
    }
    for &p in &state.samples.p {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Numeric(format!("p_j = {p} escaped (0,1)")));
        }
    }
    if !state.global.total_consistent() {
        return Err(Error::Numeric("G(Omega) cache inconsistent with atom weights".into()));
    }
    Ok(())
}
