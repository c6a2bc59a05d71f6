//! Chain driver: runs a configured sampler over a corpus, records the
//! per-iteration trace, fires the collection hook after burn-in, and
//! checkpoints on request.

use super::shared::log_joint_surrogate;
use super::{blocked_step, collapsed_step, cp_blocked_step, dcmlda_collapsed_step, pfa_collapsed_step};
use super::{ChainConfig, EtaMode, SamplerKind};
use crate::corpus::SparseCountMatrix;
use crate::error::{Error, Result};
use crate::model::{check_invariants, init_state, ModelKind, ModelState};
use crate::rng::{RngSnapshot, RngStream};
use serde::{Deserialize, Serialize};
use std::time::Instant;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub k_active: usize,
    pub log_joint_surrogate: f64,
    pub wall_ms: f64,
    pub assign_ops: u64,
}

/// Per-iteration records of one chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub rows: Vec<TraceRow>,
}

impl ChainTrace {
    pub fn csv_header() -> &'static str {
        "iteration,k_active,log_joint_surrogate,wall_ms,assign_ops"
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::csv_header());
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.iteration, r.k_active, r.log_joint_surrogate, r.wall_ms, r.assign_ops
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<ChainTrace> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Schema("empty trace file".into()))?;
        if header.trim() != Self::csv_header() {
            return Err(Error::Schema(format!("unexpected trace header {header:?}")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::Schema(format!("trace line {} has {} fields", i + 2, f.len())));
            }
            rows.push(TraceRow {
                iteration: f[0].parse().map_err(|_| Error::Schema("bad iteration".into()))?,
                k_active: f[1].parse().map_err(|_| Error::Schema("bad k_active".into()))?,
                log_joint_surrogate: f[2].parse().map_err(|_| Error::Schema("bad log_joint".into()))?,
                wall_ms: f[3].parse().map_err(|_| Error::Schema("bad wall_ms".into()))?,
                assign_ops: f[4].parse().map_err(|_| Error::Schema("bad assign_ops".into()))?,
            });
        }
        Ok(ChainTrace { rows })
    }

    pub fn mean_k_active(&self, after: usize) -> f64 {
        let rows: Vec<&TraceRow> = self.rows.iter().filter(|r| r.iteration > after).collect();
        if rows.is_empty() {
            return f64::NAN;
        }
        rows.iter().map(|r| r.k_active as f64).sum::<f64>() / rows.len() as f64
    }
}

/// Hook fired at every collection event (after burn-in, every
/// `collect_every`-th iteration).
pub trait Collector {
    fn collect(&mut self, state: &ModelState, rng: &mut RngStream) -> Result<()>;
}

/// Collector that only counts events.
#[derive(Debug, Default)]
pub struct CountingCollector {
    pub events: usize,
}

impl Collector for CountingCollector {
    fn collect(&mut self, _state: &ModelState, _rng: &mut RngStream) -> Result<()> {
        self.events += 1;
        Ok(())
    }
}

/// Self-describing chain snapshot; `load(save(s)) = s` bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainCheckpoint {
    pub version: u32,
    pub iteration: usize,
    pub config: ChainConfig,
    pub state: ModelState,
    pub rng: RngSnapshot,
}

impl ChainCheckpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<ChainCheckpoint> {
        let text = std::fs::read_to_string(path)?;
        let ck: ChainCheckpoint = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!(
                "checkpoint version {} not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }
}

/// Advance one full Gibbs sweep for the configured model/sampler pair.
/// Returns the assignment-operation count.
pub fn step_once(
    config: &ChainConfig,
    state: &mut ModelState,
    rng: &mut RngStream,
) -> Result<u64> {
    let eta_sampled = matches!(config.eta, EtaMode::Sampled);
    match (config.sampler, config.model) {
        (SamplerKind::Blocked, ModelKind::Nbfa | ModelKind::Dcmlda) => {
            blocked_step(state, config.k_star, eta_sampled, rng)
        }
        (SamplerKind::CpBlocked, ModelKind::Nbfa | ModelKind::Dcmlda) => {
            cp_blocked_step(state, config.k_star, eta_sampled, rng)
        }
        (SamplerKind::Collapsed, ModelKind::Nbfa) => collapsed_step(state, eta_sampled, rng),
        (SamplerKind::Collapsed, ModelKind::Pfa) => pfa_collapsed_step(state, eta_sampled, rng),
        (SamplerKind::Collapsed, ModelKind::Dcmlda) => {
            dcmlda_collapsed_step(state, eta_sampled, rng)
        }
        (s, m) => Err(Error::Config(format!("sampler {s} does not support model {m}"))),
    }
}

/// Run a chain to completion. The collector fires after burn-in at every
/// `collect_every`-th iteration. Returns the trace and the final state.
pub fn run_chain(
    config: &ChainConfig,
    corpus: &SparseCountMatrix,
    collector: &mut dyn Collector,
) -> Result<(ChainTrace, ModelState)> {
    config.validate()?;
    let mut rng = RngStream::new(config.seed);
    let mut state = init_state(
        config.model,
        config.sampler.representation(),
        config.truncation,
        config.k_init,
        &config.hyper,
        config.eta.initial_value(),
        corpus,
        &mut rng,
    )?;
    resume_chain(config, corpus, &mut state, &mut rng, 0, collector)
}

/// Continue a chain from `start_iter` (0 = fresh) to `config.iterations`.
pub fn resume_chain(
    config: &ChainConfig,
    corpus: &SparseCountMatrix,
    state: &mut ModelState,
    rng: &mut RngStream,
    start_iter: usize,
    collector: &mut dyn Collector,
) -> Result<(ChainTrace, ModelState)> {
    config.validate()?;
    if corpus.num_covariates() != state.v_total || corpus.num_samples() != state.num_samples() {
        return Err(Error::Config(format!(
            "corpus is {}x{} but the state was built for {}x{}",
            corpus.num_covariates(),
            corpus.num_samples(),
            state.v_total,
            state.num_samples(),
        )));
    }
    let mut trace = ChainTrace::default();
    for iter in (start_iter + 1)..=config.iterations {
        let t0 = Instant::now();
        let ops = step_once(config, state, rng)?;
        let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        if cfg!(debug_assertions) || iter % 100 == 0 {
            check_invariants(state)?;
        }
        trace.rows.push(TraceRow {
            iteration: iter,
            k_active: state.global.k_active,
            log_joint_surrogate: log_joint_surrogate(state),
            wall_ms,
            assign_ops: ops,
        });
        if iter > config.burn_in && (iter - config.burn_in) % config.collect_every == 0 {
            collector.collect(state, rng)?;
        }
    }
    Ok((trace, state.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SparseCountMatrix;
    use crate::model::{Hyperparams, TruncationMode};
    use crate::samplers::EtaMode;

    fn tiny_corpus() -> SparseCountMatrix {
        SparseCountMatrix::from_triples(3, 2, &[(0, 0, 2), (1, 0, 1), (2, 1, 3)]).unwrap()
    }

    fn config(iterations: usize, burn_in: usize, thin: usize) -> ChainConfig {
        ChainConfig {
            model: crate::model::ModelKind::Nbfa,
            sampler: super::super::SamplerKind::CpBlocked,
            iterations,
            burn_in,
            collect_every: thin,
            k_init: 3,
            k_star: 2,
            truncation: TruncationMode::Adaptive,
            seed: 5,
            eta: EtaMode::Fixed(0.1),
            hyper: Hyperparams::default(),
        }
    }

    #[test]
    fn single_iteration_single_collection() {
        let corpus = tiny_corpus();
        let mut collector = CountingCollector::default();
        let (trace, _) = run_chain(&config(1, 0, 1), &corpus, &mut collector).unwrap();
        assert_eq!(collector.events, 1);
        assert_eq!(trace.rows.len(), 1);
    }

    #[test]
    fn paper_schedule_collects_five_hundred() {
        // 5000 iterations, burn-in 2500, thin 5 -> 500 collection events
        let corpus = SparseCountMatrix::from_triples(1, 1, &[(0, 0, 1)]).unwrap();
        let mut cfg = config(5000, 2500, 5);
        cfg.k_init = 1;
        let mut collector = CountingCollector::default();
        let (trace, _) = run_chain(&cfg, &corpus, &mut collector).unwrap();
        assert_eq!(collector.events, 500);
        assert_eq!(trace.rows.len(), 5000);
    }

    #[test]
    fn same_seed_identical_traces() {
        let corpus = tiny_corpus();
        let mut c1 = CountingCollector::default();
        let mut c2 = CountingCollector::default();
        let (t1, s1) = run_chain(&config(40, 10, 2), &corpus, &mut c1).unwrap();
        let (t2, s2) = run_chain(&config(40, 10, 2), &corpus, &mut c2).unwrap();
        assert_eq!(s1, s2);
        let strip = |t: &ChainTrace| {
            t.rows
                .iter()
                .map(|r| (r.iteration, r.k_active, r.log_joint_surrogate.to_bits(), r.assign_ops))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&t1), strip(&t2));
    }

    #[test]
    fn incompatible_combination_rejected_before_work() {
        let corpus = tiny_corpus();
        let mut cfg = config(10, 2, 1);
        cfg.model = crate::model::ModelKind::Pfa;
        cfg.sampler = super::super::SamplerKind::Blocked;
        let mut collector = CountingCollector::default();
        match run_chain(&cfg, &corpus, &mut collector) {
            Err(Error::Config(_)) => {}
            other => panic!("expected config error, got {other:?}"),
        }
        assert_eq!(collector.events, 0);
    }

    #[test]
    fn burn_in_must_be_smaller_than_iterations() {
        assert!(config(10, 10, 1).validate().is_err());
        assert!(config(10, 9, 1).validate().is_ok());
        let mut cfg = config(10, 2, 1);
        cfg.collect_every = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_resume_equivalence() {
        let corpus = tiny_corpus();
        let cfg = config(12, 4, 2);

        // straight run
        let mut c_all = CountingCollector::default();
        let (trace_all, state_all) = run_chain(&cfg, &corpus, &mut c_all).unwrap();

        // segmented run: 7 iterations, checkpoint, restore, 5 more
        let mut rng = crate::rng::RngStream::new(cfg.seed);
        let mut state = crate::model::init_state(
            cfg.model,
            cfg.sampler.representation(),
            cfg.truncation,
            cfg.k_init,
            &cfg.hyper,
            cfg.eta.initial_value(),
            &corpus,
            &mut rng,
        )
        .unwrap();
        let mut c_seg = CountingCollector::default();
        let seg1 = ChainConfig { iterations: 7, ..cfg };
        let (trace1, s1) = resume_chain(&seg1, &corpus, &mut state, &mut rng, 0, &mut c_seg).unwrap();
        state = s1;

        let dir = std::env::temp_dir().join(format!("nbfa_ck_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ck.json");
        let ck = ChainCheckpoint {
            version: CHECKPOINT_VERSION,
            iteration: 7,
            config: cfg,
            state: state.clone(),
            rng: rng.snapshot(),
        };
        ck.save(&path).unwrap();
        let loaded = ChainCheckpoint::load(&path).unwrap();
        assert_eq!(loaded, ck);

        let mut state2 = loaded.state;
        let mut rng2 = crate::rng::RngStream::restore(&loaded.rng);
        let (trace2, state_seg) =
            resume_chain(&cfg, &corpus, &mut state2, &mut rng2, 7, &mut c_seg).unwrap();

        assert_eq!(state_all, state_seg);
        assert_eq!(c_all.events, c_seg.events);
        let strip = |rows: &[TraceRow]| {
            rows.iter()
                .map(|r| (r.iteration, r.k_active, r.assign_ops))
                .collect::<Vec<_>>()
        };
        let mut combined = strip(&trace1.rows);
        combined.extend(strip(&trace2.rows));
        assert_eq!(combined, strip(&trace_all.rows));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn trace_csv_roundtrip() {
        let trace = ChainTrace {
            rows: vec![
                TraceRow { iteration: 1, k_active: 3, log_joint_surrogate: -12.5, wall_ms: 0.7, assign_ops: 42 },
                TraceRow { iteration: 2, k_active: 4, log_joint_surrogate: -11.25, wall_ms: 0.8, assign_ops: 40 },
            ],
        };
        let csv = trace.to_csv();
        let back = ChainTrace::from_csv(&csv).unwrap();
        assert_eq!(trace, back);
        assert!(ChainTrace::from_csv("bogus\n1,2,3\n").is_err());
    }
}
