//! The full mapping flow for one circuit on one fabric.
//!
//! Dependency analysis and sibling serialization run once; every enumerated
//! per-level cap then gets its own placement, routing and replay, and the
//! candidate with the lowest validated latency wins.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, FlowConfig, Micros};
use crate::emulator::{validate, EmulatorReport};
use crate::fabric::{FabricError, FabricGraph};
use crate::placer::{place, LevelMode, Placement, PlacerError};
use crate::qasm::{self, Program, QasmError};
use crate::qidg::{Qidg, QidgError};
use crate::router::{dynamic_route, static_lower_bound, RouteOutcome, RouterError};
use crate::scheduler::{preprocess, schedule_enumerated, LevelConstraints, SchedError, Schedule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Qasm(#[from] QasmError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Graph(#[from] QidgError),
    #[error(transparent)]
    Schedule(#[from] SchedError),
    #[error(transparent)]
    Placer(#[from] PlacerError),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error("command stream failed validation ({} violations)", .0.violations.len())]
    Emulation(Box<EmulatorReport>),
}

impl FlowError {
    /// Short error name, e.g. `NoCreationWell` or `Deadlock`.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "Config",
            Self::Qasm(_) => "Qasm",
            Self::Fabric(_) => "Fabric",
            Self::Graph(QidgError::CycleDetected(_)) => "CycleDetected",
            Self::Schedule(_) => "Schedule",
            Self::Placer(PlacerError::NoCreationWell { .. }) => "NoCreationWell",
            Self::Placer(PlacerError::HorizonExceeded { .. }) => "HorizonExceeded",
            Self::Placer(_) => "Placer",
            Self::Router(RouterError::Deadlock { .. }) => "Deadlock",
            Self::Router(_) => "Router",
            Self::Emulation(_) => "Emulation",
        }
    }
}

/// A mapped circuit: the chosen candidate and its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mapping {
    pub alpha: f64,
    pub n_m: usize,
    pub placement: Placement,
    pub route: RouteOutcome,
    pub report: EmulatorReport,
    pub lower_bound: Micros,
}

impl Mapping {
    pub fn latency(&self) -> Micros {
        self.route.latency
    }
}

/// Outcome of one alpha of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub n_m: usize,
    pub levels: usize,
    pub latency: Option<Micros>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub best: Mapping,
    pub sweep: Vec<SweepPoint>,
}

/// Parse, analyze and serialize siblings.
pub fn prepare(text: &str, cfg: &FlowConfig) -> Result<Qidg, FlowError> {
    let program = qasm::parse(text)?;
    prepare_program(&program, cfg)
}

pub fn prepare_program(program: &Program, cfg: &FlowConfig) -> Result<Qidg, FlowError> {
    cfg.validate()?;
    let mut g = Qidg::analyze(program, &cfg.fabric)?.with_m_sat(cfg.scheduler.m_sat);
    preprocess(&mut g)?;
    Ok(g)
}

/// Place, route and replay one schedule.
pub fn map_schedule(
    g: &Qidg,
    f: &FabricGraph,
    schedule: &Schedule,
    cfg: &FlowConfig,
    mode: LevelMode,
) -> Result<Mapping, FlowError> {
    let placement = place(g, schedule, f, &cfg.placer, mode)?;
    let route = dynamic_route(g, &placement, f)?;
    let report = validate(&route.stream, f, g);
    if !report.ok {
        return Err(FlowError::Emulation(Box::new(report)));
    }
    let lower_bound = static_lower_bound(g, &placement, f);
    Ok(Mapping { alpha: 1.0, n_m: schedule.n_cap, placement, route, report, lower_bound })
}

/// The α sweep on a prepared graph. Candidates run in parallel; ties keep
/// the earlier alpha of the configured list.
pub fn map_graph(g: &Qidg, f: &FabricGraph, cfg: &FlowConfig, mode: LevelMode) -> Result<FlowResult, FlowError> {
    let n_max = f.interaction_wells().len();
    let en = schedule_enumerated(g, &cfg.scheduler, n_max, &LevelConstraints::none(g.len()))?;
    let picked: Vec<usize> = if cfg.fast { vec![en.default_pick] } else { (0..en.candidates.len()).collect() };
    let runs: Vec<Result<Mapping, FlowError>> = picked
        .par_iter()
        .map(|&k| {
            let c = &en.candidates[k];
            map_schedule(g, f, &c.schedule, cfg, mode).map(|mut m| {
                m.alpha = c.alpha;
                m.n_m = c.n_m;
                m
            })
        })
        .collect();
    let sweep = picked
        .iter()
        .zip(&runs)
        .map(|(&k, r)| {
            let c = &en.candidates[k];
            SweepPoint {
                alpha: c.alpha,
                n_m: c.n_m,
                levels: c.schedule.num_levels,
                latency: r.as_ref().ok().map(Mapping::latency),
                error: r.as_ref().err().map(|e| e.to_string()),
            }
        })
        .collect();
    let mut best: Option<Mapping> = None;
    let mut first_err = None;
    for r in runs {
        match r {
            Ok(m) => {
                if best.as_ref().is_none_or(|b| m.latency() < b.latency()) {
                    best = Some(m);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some(best) => Ok(FlowResult { best, sweep }),
        None => Err(first_err.expect("at least one candidate")),
    }
}

/// Parse `text` and map it onto the fabric described by `cfg`.
pub fn map_text(text: &str, cfg: &FlowConfig) -> Result<FlowResult, FlowError> {
    let g = prepare(text, cfg)?;
    let f = FabricGraph::build(&cfg.fabric)?;
    map_graph(&g, &f, cfg, LevelMode::Variable)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qasm::STEANE_ZERO_PREP;

    #[test]
    fn steane_needs_two_by_two() {
        let err = map_text(STEANE_ZERO_PREP, &FlowConfig::default()).unwrap_err();
        assert_eq!(err.kind(), "NoCreationWell");
        let r = map_text(STEANE_ZERO_PREP, &FlowConfig::default().with_ulb_n(2)).unwrap();
        assert!(r.best.report.ok);
        assert_eq!(r.best.report.total_latency, r.best.latency());
        assert!(r.best.latency() >= r.best.lower_bound);
        assert_eq!(r.sweep.len(), 5);
    }

    #[test]
    fn fast_runs_one_candidate() {
        let cfg = FlowConfig { fast: true, ..FlowConfig::default().with_ulb_n(2) };
        let r = map_text(STEANE_ZERO_PREP, &cfg).unwrap();
        assert_eq!(r.sweep.len(), 1);
    }
}
