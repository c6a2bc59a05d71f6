//! Heldout-perplexity evaluation, posterior factor/score draws per model,
//! fixed-factor feature extraction, and chain diagnostics.

use crate::corpus::{HeldoutSplit, SparseCountMatrix};
use crate::dist::{sample_beta, sample_crt, sample_dirichlet, sample_gamma};
use crate::error::{Error, Result};
use crate::model::{poisson_rate, ModelKind, ModelState, Representation, TruncationMode};
use crate::rng::RngStream;
use crate::samplers::{ChainTrace, Collector};
use serde::{Deserialize, Serialize};

/// Factor scores of one posterior draw: per-sample θ for PFA/NBFA, the
/// shared global weights for DCMLDA.
#[derive(Debug, Clone)]
pub enum ScoreDraw {
    /// theta[k][j]
    Theta(Vec<Vec<f64>>),
    /// r_k
    GlobalWeights(Vec<f64>),
}

/// One collected posterior sample of (Φ, scores, p).
#[derive(Debug, Clone)]
pub struct PosteriorDraw {
    pub phi: Vec<Vec<f64>>,
    pub scores: ScoreDraw,
    pub p: Vec<f64>,
}

impl PosteriorDraw {
    pub fn k_slots(&self) -> usize {
        self.phi.len()
    }

    /// Σ_k φ_vk · score_kj
    pub fn mix_rate(&self, v: u32, j: usize) -> f64 {
        match &self.scores {
            ScoreDraw::Theta(theta) => self
                .phi
                .iter()
                .zip(theta)
                .map(|(col, th)| col[v as usize] * th[j])
                .sum(),
            ScoreDraw::GlobalWeights(r) => self
                .phi
                .iter()
                .zip(r)
                .map(|(col, &w)| col[v as usize] * w)
                .sum(),
        }
    }

    /// Σ_v Σ_k φ_vk · score_kj — each φ column sums to one, so this is just
    /// the score total for sample j.
    pub fn score_total(&self, j: usize) -> f64 {
        match &self.scores {
            ScoreDraw::Theta(theta) => theta.iter().map(|row| row[j]).sum(),
            ScoreDraw::GlobalWeights(r) => r.iter().sum(),
        }
    }
}

/// Draw factors and scores for one collected MCMC sample, following each
/// model's conditional (PFA: Dir(η+n_v·k) and Gamma(n_jk+r_k, p_j);
/// DCMLDA: Dir(η+ℓ_v·k) and Gamma(ℓ_··k, 1/(c0-Σln(1-p))); NBFA:
/// Dir(η+ℓ_v·k) and Gamma(r_k+ℓ_·jk, 1/(c_j-ln(1-p_j)))). Under adaptive
/// truncation, `k_star` reserve slots are appended with zero counts and
/// weight-shape γ0/K_star.
pub fn posterior_draw(state: &ModelState, k_star: usize, rng: &mut RngStream) -> Result<PosteriorDraw> {
    let v_total = state.v_total;
    let j_total = state.num_samples();
    let eta = state.eta;

    // active slots come first in every representation
    let k_active = match state.truncation {
        TruncationMode::Adaptive => match state.representation {
            Representation::Collapsed => state.k_slots(),
            // blocked states carry reserve slots after the active block
            _ => state.global.k_active,
        },
        TruncationMode::Fixed => state.k_slots(),
    };
    let reserve = match state.truncation {
        TruncationMode::Adaptive => k_star,
        TruncationMode::Fixed => 0,
    };
    let k_total = k_active + reserve;
    let reserve_shape = state.global.gamma0 / k_star.max(1) as f64;

    let mut phi = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let conc: Vec<f64> = (0..v_total)
            .map(|v| {
                let count = if k < k_active {
                    match state.kind {
                        ModelKind::Pfa => state.latent.n_v_dot_k[k][v],
                        _ => state.latent.ell_v_dot_k[k][v],
                    }
                } else {
                    0
                };
                eta + count as f64
            })
            .collect();
        phi.push(sample_dirichlet(&conc, rng)?);
    }

    let scores = match state.kind {
        ModelKind::Dcmlda => {
            let scale = 1.0 / (state.global.c0 - state.samples.sum_log1m_p());
            let mut r = Vec::with_capacity(k_total);
            for k in 0..k_total {
                let shape = if k < k_active {
                    state.latent.ell_dot_dot_k[k] as f64
                } else {
                    reserve_shape
                };
                r.push(sample_gamma(shape.max(1e-300), scale, rng)?);
            }
            ScoreDraw::GlobalWeights(r)
        }
        ModelKind::Pfa => {
            let mut theta = vec![vec![0.0; j_total]; k_total];
            for (k, row) in theta.iter_mut().enumerate() {
                let r_k = if k < k_active { state.global.r[k] } else { reserve_shape };
                for (j, slot) in row.iter_mut().enumerate() {
                    let n_jk = if k < k_active { state.latent.n_dot_jk[j][k] } else { 0 };
                    *slot = sample_gamma((n_jk as f64 + r_k).max(1e-300), state.samples.p[j], rng)?;
                }
            }
            ScoreDraw::Theta(theta)
        }
        ModelKind::Nbfa => {
            let mut theta = vec![vec![0.0; j_total]; k_total];
            for (k, row) in theta.iter_mut().enumerate() {
                let r_k = if k < k_active { state.global.r[k] } else { reserve_shape };
                for (j, slot) in row.iter_mut().enumerate() {
                    let ell_jk = if k < k_active { state.latent.ell_dot_jk[j][k] } else { 0 };
                    let scale = 1.0 / (state.samples.c[j] - (1.0 - state.samples.p[j]).ln());
                    *slot = sample_gamma((r_k + ell_jk as f64).max(1e-300), scale, rng)?;
                }
            }
            ScoreDraw::Theta(theta)
        }
    };

    Ok(PosteriorDraw { phi, scores, p: state.samples.p.clone() })
}

/// Running sums of the per-cell Poisson rates λ_vj over collected samples.
/// Numerators cover the heldout cells; the per-sample normalizer sums λ over
/// the full vocabulary, which collapses to a closed form because each factor
/// column sums to one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerplexityAccumulator {
    /// (v, j, m_test) for every heldout cell
    test_cells: Vec<(u32, u32, u32)>,
    /// training count at each heldout cell
    train_at_test: Vec<u32>,
    /// Σ_s λ_vj per heldout cell
    numer: Vec<f64>,
    /// Σ_s Σ_v' λ_v'j per sample
    denom: Vec<f64>,
    /// training token count per sample
    train_col_sums: Vec<u64>,
    pub samples_collected: usize,
    m_test_total: u64,
}

impl PerplexityAccumulator {
    pub fn new(split: &HeldoutSplit) -> Self {
        let mut test_cells = Vec::with_capacity(split.test.nnz());
        let mut train_at_test = Vec::with_capacity(split.test.nnz());
        for j in 0..split.test.num_samples() {
            for &(v, m) in split.test.column(j) {
                test_cells.push((v, j as u32, m));
                train_at_test.push(split.train.count(v, j));
            }
        }
        let m_test_total = split.test.total_count();
        let train_col_sums = (0..split.train.num_samples())
            .map(|j| split.train.column_sum(j))
            .collect();
        PerplexityAccumulator {
            numer: vec![0.0; test_cells.len()],
            denom: vec![0.0; split.test.num_samples()],
            test_cells,
            train_at_test,
            train_col_sums,
            samples_collected: 0,
            m_test_total,
        }
    }

    /// Add one posterior draw's rates into the running sums.
    pub fn accumulate(&mut self, kind: ModelKind, draw: &PosteriorDraw) -> Result<()> {
        if draw.p.len() != self.denom.len() {
            return Err(Error::Numeric(format!(
                "draw covers {} samples, accumulator {}",
                draw.p.len(),
                self.denom.len()
            )));
        }
        for j in 0..self.denom.len() {
            let total = match kind {
                ModelKind::Pfa => draw.score_total(j),
                _ => (self.train_col_sums[j] as f64 + draw.score_total(j)) * draw.p[j],
            };
            self.denom[j] += total;
        }
        for (idx, &(v, j, _)) in self.test_cells.iter().enumerate() {
            let mix = draw.mix_rate(v, j as usize);
            self.numer[idx] +=
                poisson_rate(kind, self.train_at_test[idx], draw.p[j as usize], mix);
        }
        self.samples_collected += 1;
        Ok(())
    }

    /// exp( -(1/m··) Σ_vj m_vj ln( Σ_s λ_vj / Σ_s Σ_v' λ_v'j ) )
    pub fn perplexity(&self) -> Result<f64> {
        if self.samples_collected == 0 || self.m_test_total == 0 {
            return Err(Error::Numeric(
                "perplexity needs at least one collected sample and one heldout token".into(),
            ));
        }
        let mut total = 0.0;
        for (idx, &(_, j, m)) in self.test_cells.iter().enumerate() {
            let denom = self.denom[j as usize];
            if !(denom > 0.0) || !(self.numer[idx] > 0.0) {
                return Err(Error::Numeric(format!(
                    "non-positive rate sums at heldout cell {idx}"
                )));
            }
            total += m as f64 * (self.numer[idx] / denom).ln();
        }
        Ok((-total / self.m_test_total as f64).exp())
    }
}

/// Collector wiring a chain's collection events into the accumulator.
pub struct PerplexityCollector {
    pub kind: ModelKind,
    pub k_star: usize,
    pub acc: PerplexityAccumulator,
}

impl PerplexityCollector {
    pub fn new(kind: ModelKind, k_star: usize, split: &HeldoutSplit) -> Self {
        PerplexityCollector { kind, k_star, acc: PerplexityAccumulator::new(split) }
    }
}

impl Collector for PerplexityCollector {
    fn collect(&mut self, state: &ModelState, rng: &mut RngStream) -> Result<()> {
        let draw = posterior_draw(state, self.k_star, rng)?;
        self.acc.accumulate(self.kind, &draw)
    }
}

/// K x J posterior-mean feature-usage proportions; each column sums to one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub k: usize,
    /// columns[j][k]
    pub columns: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    /// Dense CSV, one row per sample, K columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for col in &self.columns {
            let row: Vec<String> = col.iter().map(|x| format!("{x}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Extract per-sample feature vectors under frozen factors: keep Φ at its
/// conditional posterior mean and the weights r_k from the final MCMC
/// sample, then run a short blocked chain per sample and average the
/// normalized scores over the last `collect` iterations.
pub fn extract_features(
    state: &ModelState,
    corpus: &SparseCountMatrix,
    post_iters: usize,
    post_collect: usize,
    rng: &RngStream,
) -> Result<FeatureMatrix> {
    if state.kind == ModelKind::Dcmlda {
        return Err(Error::Capability(
            "DCMLDA has no sample-specific feature vectors (global factor scores)".into(),
        ));
    }
    if post_collect == 0 || post_collect > post_iters {
        return Err(Error::Config(format!(
            "collect window {post_collect} must lie in [1, {post_iters}]"
        )));
    }
    let k_slots = state.k_slots();
    if k_slots == 0 {
        return Err(Error::Capability("checkpoint has no factors".into()));
    }
    let v_total = state.v_total;
    let eta = state.eta;

    // posterior-mean factors from the final sample's counts
    let mut phi_mean = vec![vec![0.0f64; v_total]; k_slots];
    for k in 0..k_slots {
        let (counts, total) = match state.kind {
            ModelKind::Pfa => (&state.latent.n_v_dot_k[k], state.latent.n_dot_dot_k[k]),
            _ => (&state.latent.ell_v_dot_k[k], state.latent.ell_dot_dot_k[k]),
        };
        let denom = total as f64 + v_total as f64 * eta;
        for v in 0..v_total {
            phi_mean[k][v] = (counts[v] as f64 + eta) / denom;
        }
    }
    let r: Vec<f64> = (0..k_slots).map(|k| state.global.r[k].max(1e-300)).collect();
    let r_total: f64 = r.iter().sum();
    let hyper = state.hyper;

    let mut columns = Vec::with_capacity(corpus.num_samples());
    for j in 0..corpus.num_samples() {
        let mut stream = rng.derive(j as u64);
        let cells: Vec<(u32, u32)> = corpus.column(j).to_vec();
        let n_j: u64 = corpus.column_sum(j);

        // per-document chain state
        let mut p_j = crate::model::clamp_p(sample_beta(hyper.a0, hyper.b0, &mut stream)?);
        let mut c_j = sample_gamma(hyper.e0, 1.0 / hyper.f0, &mut stream)?;
        let mut theta: Vec<f64> = r
            .iter()
            .map(|&rk| {
                let scale = match state.kind {
                    ModelKind::Nbfa => 1.0 / c_j,
                    _ => p_j / (1.0 - p_j),
                };
                sample_gamma(rk, scale, &mut stream)
            })
            .collect::<Result<_>>()?;
        let mut feature_sum = vec![0.0f64; k_slots];
        let mut collected = 0usize;

        for iter in 1..=post_iters {
            // per-cell latent counts under frozen Φ
            let mut count_k = vec![0.0f64; k_slots];
            let mut rates = vec![0.0f64; k_slots];
            for &(v, n_vj) in &cells {
                let mut rate_total = 0.0;
                for k in 0..k_slots {
                    rates[k] = phi_mean[k][v as usize] * theta[k];
                    rate_total += rates[k];
                }
                let draws = match state.kind {
                    // compound-Poisson: split ℓ_vj tables over factors
                    ModelKind::Nbfa => {
                        sample_crt(n_vj as u64, rate_total.max(1e-300), &mut stream)?
                    }
                    // multinomial split of the tokens themselves
                    _ => n_vj as u64,
                };
                for _ in 0..draws {
                    let u = stream.uniform() * rate_total;
                    let mut acc = 0.0;
                    let mut picked = k_slots - 1;
                    for (k, &w) in rates.iter().enumerate() {
                        acc += w;
                        if u < acc {
                            picked = k;
                            break;
                        }
                    }
                    count_k[picked] += 1.0;
                }
            }
            // scores, then p (and c for NBFA)
            match state.kind {
                ModelKind::Nbfa => {
                    let scale = 1.0 / (c_j - (1.0 - p_j).ln());
                    for k in 0..k_slots {
                        theta[k] = sample_gamma(r[k] + count_k[k], scale, &mut stream)?;
                    }
                    let theta_dot: f64 = theta.iter().sum();
                    p_j = crate::model::clamp_p(sample_beta(
                        hyper.a0 + n_j as f64,
                        hyper.b0 + theta_dot,
                        &mut stream,
                    )?);
                    c_j = sample_gamma(hyper.e0 + r_total, 1.0 / (hyper.f0 + theta_dot), &mut stream)?;
                }
                _ => {
                    for k in 0..k_slots {
                        theta[k] = sample_gamma((r[k] + count_k[k]).max(1e-300), p_j, &mut stream)?;
                    }
                    p_j = crate::model::clamp_p(sample_beta(
                        hyper.a0 + n_j as f64,
                        hyper.b0 + r_total,
                        &mut stream,
                    )?);
                }
            }
            if iter > post_iters - post_collect {
                let theta_dot: f64 = theta.iter().sum();
                for k in 0..k_slots {
                    feature_sum[k] += theta[k] / theta_dot;
                }
                collected += 1;
            }
        }
        let mut col: Vec<f64> = feature_sum.iter().map(|x| x / collected as f64).collect();
        let norm: f64 = col.iter().sum();
        for x in col.iter_mut() {
            *x /= norm;
        }
        columns.push(col);
    }
    Ok(FeatureMatrix { k: k_slots, columns })
}

/// Per-iteration diagnostics derived from a chain trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub iterations: Vec<usize>,
    pub k_active: Vec<usize>,
    pub k_active_moving_avg: Vec<f64>,
    pub assign_ops: Vec<u64>,
    pub wall_ms: Vec<f64>,
}

pub fn diagnostics(trace: &ChainTrace) -> DiagnosticsReport {
    let window = 50usize;
    let n = trace.rows.len();
    let mut moving = Vec::with_capacity(n);
    let mut acc = 0.0f64;
    for (i, row) in trace.rows.iter().enumerate() {
        acc += row.k_active as f64;
        if i >= window {
            acc -= trace.rows[i - window].k_active as f64;
        }
        moving.push(acc / (i.min(window - 1) + 1) as f64);
    }
    DiagnosticsReport {
        iterations: trace.rows.iter().map(|r| r.iteration).collect(),
        k_active: trace.rows.iter().map(|r| r.k_active).collect(),
        k_active_moving_avg: moving,
        assign_ops: trace.rows.iter().map(|r| r.assign_ops).collect(),
        wall_ms: trace.rows.iter().map(|r| r.wall_ms).collect(),
    }
}

impl DiagnosticsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,k_active,k_active_moving_avg,assign_ops,wall_ms\n");
        for i in 0..self.iterations.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.iterations[i],
                self.k_active[i],
                self.k_active_moving_avg[i],
                self.assign_ops[i],
                self.wall_ms[i]
            ));
        }
        out
    }
}

/// Minimal static SVG line chart (one polyline per labeled series).
pub fn svg_line_chart(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 900.0;
    const H: f64 = 480.0;
    const MARGIN: f64 = 60.0;
    let palette = ["#1f77b4", "#d62728", "#e6b417", "#2ca02c", "#9467bd", "#8c564b"];
    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, pts)| pts.iter().copied()).collect();
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &all {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if !x_min.is_finite() {
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    if (x_max - x_min).abs() < 1e-12 {
        x_max = x_min + 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x_min) / (x_max - x_min) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y_min) / (y_max - y_min) * (H - 2.0 * MARGIN);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        title
    );
    out.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{m}\" y=\"{lb}\" font-family=\"sans-serif\" font-size=\"11\">{x_min:.0}</text>\n\
         <text x=\"{r}\" y=\"{lb}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{x_max:.0}</text>\n\
         <text x=\"8\" y=\"{b}\" font-family=\"sans-serif\" font-size=\"11\">{y_min:.1}</text>\n\
         <text x=\"8\" y=\"{t}\" font-family=\"sans-serif\" font-size=\"11\">{y_max:.1}</text>\n",
        m = MARGIN,
        b = H - MARGIN,
        t = MARGIN,
        r = W - MARGIN,
        lb = H - MARGIN + 16.0,
    ));
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = palette[i % palette.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{label}</text>\n",
            W - MARGIN + 4.0,
            MARGIN + 16.0 * i as f64
        ));
    }
    out.push_str("</svg>\n");
    out
}
