//! Experiment runner: builds one simulated run from a configuration, checks
//! the consensus properties and reports metrics as CSV-ready rows. Also
//! the sweep regression, the synchronizer observer and the retriever
//! boundary runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::baseline::BaselineProcess;
use crate::crypto::Crypto;
use crate::dare::DareProcess;
use crate::darestark::DareStark;
use crate::model::{
    materialized_len, Message, MsgKind, ParamError, ProcessId, ProtocolParams, SyncInstance, Tick,
    Validity, Value, View,
};
use crate::retriever::Retriever;
use crate::scenario::{
    pick_corrupt, shift_gst, AdversarialShift, ByzScript, Byzantine, RandomDelays, Scenario,
};
use crate::simnet::{
    Adversary, Ctx, Env, Output, Process, RunReport, SimConfig, Simulation, Termination, TimerTag,
};
use crate::sync::SyncProbe;
use crate::vector::{decode_vector, VectorProcess, VectorValidity};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Protocol {
    Dare,
    DareStark,
    Baseline,
    Vector,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [
        Protocol::Dare,
        Protocol::DareStark,
        Protocol::Baseline,
        Protocol::Vector,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Dare => "dare",
            Protocol::DareStark => "dare-stark",
            Protocol::Baseline => "baseline",
            Protocol::Vector => "vector",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| HarnessError::UnknownProtocol(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("a sweep needs at least 3 distinct axis values, got {0}")]
    DegenerateSweep(usize),
}

/// Every harness value starts with this byte; `valid` checks it.
pub const VALUE_MAGIC: u8 = 0xDA;

#[derive(Clone, Copy, Debug, Default)]
pub struct MagicPrefix;

impl Validity for MagicPrefix {
    fn valid(&self, v: &Value, _crypto: &Crypto) -> bool {
        v.bytes().first() == Some(&VALUE_MAGIC)
    }
}

/// Proposal of process `i` in a run: `len` pseudo-random bytes after the
/// magic byte.
pub fn make_value(seed: u64, i: usize, len: usize) -> Value {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ i as u64);
    let mut b = vec![0u8; len.max(1)];
    rng.fill_bytes(&mut b);
    b[0] = VALUE_MAGIC;
    Value::new(b)
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub scenario: Scenario,
    pub n: usize,
    /// Defaults to `(n - 1) / 3`, which then requires `n = 3t + 1`.
    pub t: Option<usize>,
    /// For `vector` this is the per-proposal length.
    pub l_bits: u64,
    pub kappa: u64,
    pub proof_kappa: u64,
    pub delta: Tick,
    /// Scenario default when absent.
    pub gst: Option<Tick>,
    pub seed: u64,
    pub unknown_delta: bool,
    pub record_transcript: bool,
}

impl ExperimentConfig {
    pub fn new(protocol: Protocol, scenario: Scenario, n: usize, seed: u64) -> Self {
        ExperimentConfig {
            protocol,
            scenario,
            n,
            t: None,
            l_bits: 1024,
            kappa: 256,
            proof_kappa: 2048,
            delta: 10,
            gst: None,
            seed,
            unknown_delta: false,
            record_transcript: false,
        }
    }
}

/// The parameters a configuration runs with.
pub fn build_params(cfg: &ExperimentConfig) -> Result<ProtocolParams, HarnessError> {
    let mut p = match cfg.t {
        Some(t) => ProtocolParams::with_faults(cfg.n, t)?,
        None => ProtocolParams::new(cfg.n)?,
    };
    p.kappa = cfg.kappa;
    p.proof_kappa = cfg.proof_kappa;
    p.delta = cfg.delta;
    p.unknown_delta_mode = cfg.unknown_delta;
    p.l_bits = match cfg.protocol {
        Protocol::Vector => (p.n - p.t) as u64 * (cfg.kappa + cfg.l_bits),
        _ => cfg.l_bits,
    };
    if cfg.protocol == Protocol::Baseline {
        p.x = 1;
        p.y = p.n;
    }
    p.validate()?;
    p.gst = match cfg.gst {
        Some(g) => g,
        None => default_gst(cfg.scenario, &p, cfg.seed),
    };
    Ok(p)
}

fn default_gst(sc: Scenario, p: &ProtocolParams, seed: u64) -> Tick {
    match sc {
        Scenario::AdversarialShift => shift_gst(p),
        Scenario::PreGstChaos => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6157);
            rng.gen_range(20..=60) * p.delta
        }
        _ => 0,
    }
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub protocol: Protocol,
    pub scenario: Scenario,
    pub n: usize,
    pub t: usize,
    pub l_bits: u64,
    pub kappa: u64,
    pub delta: Tick,
    pub gst: Tick,
    pub seed: u64,
    pub latency: Option<Tick>,
    pub bits_total: u64,
    pub payload_bits: u64,
    pub bits_by_kind: BTreeMap<MsgKind, u64>,
    pub dispersal_msg_count: u64,
    pub max_msg_bits: u64,
    pub safety_ok: bool,
    pub liveness_ok: bool,
}

impl RunRow {
    pub const HEADER: [&'static str; 17] = [
        "protocol",
        "scenario",
        "n",
        "t",
        "L",
        "kappa",
        "delta",
        "gst",
        "seed",
        "latency",
        "bits_total",
        "payload_bits",
        "bits_by_kind",
        "dispersal_msg_count",
        "max_msg_bits",
        "safety_ok",
        "liveness_ok",
    ];

    pub fn to_record(&self) -> Vec<String> {
        let kinds: Vec<String> = self
            .bits_by_kind
            .iter()
            .map(|(k, b)| format!("{k}:{b}"))
            .collect();
        vec![
            self.protocol.to_string(),
            self.scenario.to_string(),
            self.n.to_string(),
            self.t.to_string(),
            self.l_bits.to_string(),
            self.kappa.to_string(),
            self.delta.to_string(),
            self.gst.to_string(),
            self.seed.to_string(),
            self.latency.map(|l| l.to_string()).unwrap_or_default(),
            self.bits_total.to_string(),
            self.payload_bits.to_string(),
            kinds.join(";"),
            self.dispersal_msg_count.to_string(),
            self.max_msg_bits.to_string(),
            self.safety_ok.to_string(),
            self.liveness_ok.to_string(),
        ]
    }

    pub fn ok(&self) -> bool {
        self.safety_ok && self.liveness_ok
    }
}

pub struct RunOutcome {
    pub row: RunRow,
    pub params: ProtocolParams,
    pub corrupt: BTreeSet<ProcessId>,
    pub report: RunReport,
}

fn honest(protocol: Protocol, v: Value) -> Box<dyn Process> {
    match protocol {
        Protocol::Dare => Box::new(DareProcess::new(v)),
        Protocol::DareStark => Box::new(DareStark::new(v)),
        Protocol::Baseline => Box::new(BaselineProcess::new(v)),
        Protocol::Vector => Box::new(VectorProcess::new(v)),
    }
}

fn adversary_for(sc: Scenario, p: &ProtocolParams) -> Box<dyn Adversary> {
    match sc {
        Scenario::AdversarialShift => Box::new(AdversarialShift::new(p)),
        Scenario::PreGstChaos => Box::new(RandomDelays::new(true)),
        _ => Box::new(RandomDelays::new(false)),
    }
}

/// Runs one configuration to completion.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    let p = build_params(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xC0FF_EE00);
    let corrupt = match cfg.scenario.script() {
        Some(_) => pick_corrupt(p.n, p.t, &mut rng),
        None => BTreeSet::new(),
    };
    let value_len = materialized_len(cfg.l_bits);
    let validity: Arc<dyn Validity> = match cfg.protocol {
        Protocol::Vector => Arc::new(VectorValidity { n: p.n, t: p.t }),
        _ => Arc::new(MagicPrefix),
    };
    let mut procs: Vec<Box<dyn Process>> = Vec::with_capacity(p.n);
    for id in p.processes() {
        let v = make_value(cfg.seed, id.index(), value_len);
        let inner = honest(cfg.protocol, v.clone());
        match cfg.scenario.script() {
            Some(script) if corrupt.contains(&id) => {
                let seed = rng.next_u64();
                procs.push(Box::new(
                    Byzantine::new(inner, script, seed).with_proposal(v),
                ));
            }
            _ => procs.push(inner),
        }
    }
    let env = Env::new(p.clone(), validity.clone());
    let config = SimConfig {
        record_transcript: cfg.record_transcript,
        ..SimConfig::default()
    };
    let report = Simulation::new(
        env,
        procs,
        corrupt.clone(),
        adversary_for(cfg.scenario, &p),
        cfg.seed,
        config,
    )
    .run();
    let row = summarize(cfg, &p, &report);
    Ok(RunOutcome {
        row,
        params: p,
        corrupt,
        report,
    })
}

/// Unanimity among correct deciders and validity of the decided value.
pub fn safety_holds(report: &RunReport) -> bool {
    let decisions = report.decisions();
    let mut values = decisions.values();
    let Some(first) = values.next() else {
        return true;
    };
    values.all(|v| v == first) && report.env.validity.valid(first, &report.env.crypto)
}

pub fn liveness_holds(report: &RunReport) -> bool {
    report.termination == Termination::AllDecided || report.all_correct_decided()
}

fn summarize(cfg: &ExperimentConfig, p: &ProtocolParams, report: &RunReport) -> RunRow {
    let m = &report.metrics;
    RunRow {
        protocol: cfg.protocol,
        scenario: cfg.scenario,
        n: p.n,
        t: p.t,
        l_bits: cfg.l_bits,
        kappa: p.kappa,
        delta: p.delta,
        gst: p.gst,
        seed: cfg.seed,
        latency: m.latency(p.gst),
        bits_total: m.bits_total(),
        payload_bits: m.post_gst_payload_bits,
        bits_by_kind: m.post_gst_bits_by_kind.clone(),
        dispersal_msg_count: m.count(MsgKind::Dispersal),
        max_msg_bits: m.max_correct_msg_bits,
        safety_ok: safety_holds(report),
        liveness_ok: liveness_holds(report),
    }
}

/// Checks a decided vector: `n - t` verifying entries from distinct
/// proposers.
pub fn vector_decision_ok(report: &RunReport) -> bool {
    let p = &report.env.params;
    let check = VectorValidity { n: p.n, t: p.t };
    let decisions = report.decisions();
    !decisions.is_empty()
        && decisions
            .values()
            .all(|v| decode_vector(v).is_some_and(|e| check.check(&e, &report.env.crypto)))
}

/// Least-squares fit of `log y` against `log x`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// `log y - fitted`, one per point.
    pub residuals: Vec<f64>,
}

pub fn fit_loglog(points: &[(f64, f64)]) -> Result<LogLogFit, HarnessError> {
    let distinct: BTreeSet<u64> = points.iter().map(|(x, _)| x.to_bits()).collect();
    if distinct.len() < 3 {
        return Err(HarnessError::DegenerateSweep(distinct.len()));
    }
    let xs: Vec<f64> = points.iter().map(|(x, _)| x.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| y.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| y - (intercept + slope * x))
        .collect();
    Ok(LogLogFit {
        slope,
        intercept,
        residuals,
    })
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub rows: Vec<RunRow>,
    /// `(n, mean L-proportional bits)`.
    pub points: Vec<(usize, f64)>,
    pub fit: LogLogFit,
}

/// Runs `base` for every `n` in `ns` and `reps` seeds, and fits the
/// exponent of the L-proportional post-GST bits in `n`.
pub fn sweep_n(
    base: &ExperimentConfig,
    ns: &[usize],
    reps: u64,
) -> Result<SweepResult, HarnessError> {
    let distinct: BTreeSet<usize> = ns.iter().copied().collect();
    if distinct.len() < 3 {
        return Err(HarnessError::DegenerateSweep(distinct.len()));
    }
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for &n in ns {
        let mut sum = 0.0;
        for r in 0..reps.max(1) {
            let cfg = ExperimentConfig {
                n,
                t: Some((n - 1) / 3),
                seed: base.seed + r,
                ..base.clone()
            };
            let out = run_experiment(&cfg)?;
            sum += out.row.payload_bits as f64;
            rows.push(out.row);
        }
        points.push((n, sum / reps.max(1) as f64));
    }
    let fit = fit_loglog(
        &points
            .iter()
            .map(|&(n, y)| (n as f64, y))
            .collect::<Vec<_>>(),
    )?;
    Ok(SweepResult { rows, points, fit })
}

/// What the synchronizer observer saw in one run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SyncObservation {
    pub gst: Tick,
    pub v_max: u64,
    pub v_sync: Option<u64>,
    pub monotone: bool,
    pub stabilized: bool,
    pub max_entries_after_gst: usize,
    pub overlap_ok: bool,
    pub rotation: u64,
}

impl SyncObservation {
    pub fn violations(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if !self.monotone {
            v.push("monotonicity");
        }
        if !self.stabilized {
            v.push("stabilization");
        }
        if self.max_entries_after_gst > 3 {
            v.push("limited entrance");
        }
        if !self.overlap_ok {
            v.push("overlap");
        }
        match self.v_sync {
            Some(s) if s - self.v_max <= self.rotation => {}
            _ => v.push("synchronization view"),
        }
        v
    }
}

/// Runs bare synchronizers under the pre-GST chaos scenario with `t`
/// silent processes and checks the view-synchronization properties.
pub fn observe_sync(n: usize, seed: u64) -> Result<SyncObservation, HarnessError> {
    let mut p = ProtocolParams::new(n)?;
    p.gst = default_gst(Scenario::PreGstChaos, &p, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FF_EE00);
    let corrupt = pick_corrupt(n, p.t, &mut rng);
    let procs: Vec<Box<dyn Process>> = p
        .processes()
        .map(|id| -> Box<dyn Process> {
            if corrupt.contains(&id) {
                Box::new(crate::simnet::Silent)
            } else {
                Box::new(SyncProbe::new())
            }
        })
        .collect();
    let rotation = p.rotation() as Tick;
    let horizon = p.gst + (rotation + 6) * (p.view_duration() + 3 * p.delta);
    let config = SimConfig {
        horizon: Some(horizon),
        stop_when_decided: false,
        ..SimConfig::default()
    };
    let env = Env::new(p.clone(), Arc::new(MagicPrefix));
    let report = Simulation::new(
        env,
        procs,
        corrupt,
        Box::new(RandomDelays::new(true)),
        seed,
        config,
    )
    .run();
    Ok(analyze_views(&report, &p, horizon))
}

fn analyze_views(report: &RunReport, p: &ProtocolParams, horizon: Tick) -> SyncObservation {
    let mut entries: BTreeMap<ProcessId, Vec<(Tick, u64)>> =
        report.correct.iter().map(|&c| (c, Vec::new())).collect();
    for r in &report.outputs {
        if let Output::Advance {
            inst: SyncInstance::Disperser,
            view,
        } = r.output
        {
            if let Some(list) = entries.get_mut(&r.process) {
                list.push((r.time, view.number()));
            }
        }
    }
    let gst = p.gst;
    let monotone = entries
        .values()
        .all(|l| l.windows(2).all(|w| w[0].1 < w[1].1));
    let v_max = entries
        .values()
        .flat_map(|l| l.iter().filter(|(t, _)| *t < gst).map(|(_, v)| *v))
        .max()
        .unwrap_or(0);
    let stabilized = entries.values().all(|l| {
        l.iter()
            .filter(|(t, _)| *t <= gst + 3 * p.delta)
            .map(|(_, v)| *v)
            .max()
            .is_some_and(|v| v >= v_max)
    });
    let max_entries_after_gst = entries
        .values()
        .map(|l| {
            l.iter()
                .filter(|(t, _)| *t >= gst && *t < gst + 3 * p.delta)
                .count()
        })
        .max()
        .unwrap_or(0);
    // (entry, exit) of each view per process; exit is the next entry
    let span = |l: &Vec<(Tick, u64)>, v: u64| -> Option<(Tick, Tick)> {
        let i = l.iter().position(|&(_, w)| w == v)?;
        let exit = l.get(i + 1).map(|&(t, _)| t).unwrap_or(Tick::MAX);
        Some((l[i].0, exit))
    };
    let mut overlap_ok = true;
    let mut v_sync = None;
    let top = entries
        .values()
        .filter_map(|l| l.last().map(|&(_, v)| v))
        .min()
        .unwrap_or(0);
    for v in (v_max + 1)..top {
        let spans: Option<Vec<(Tick, Tick)>> = entries.values().map(|l| span(l, v)).collect();
        let Some(spans) = spans else {
            overlap_ok = false;
            continue;
        };
        let enter = spans.iter().map(|s| s.0).max().unwrap_or(0);
        let exit = spans.iter().map(|s| s.1).min().unwrap_or(0).min(horizon);
        let overlap = exit.saturating_sub(enter);
        let good = overlap >= p.big_delta();
        overlap_ok &= good;
        let correct_leader = p
            .leaders(View::new(v))
            .iter()
            .any(|l| report.correct.contains(l));
        if v_sync.is_none() && good && correct_leader {
            v_sync = Some(v);
        }
    }
    SyncObservation {
        gst,
        v_max,
        v_sync,
        monotone,
        stabilized,
        max_entries_after_gst,
        overlap_ok,
        rotation: p.rotation() as u64,
    }
}

/// A process running only the retriever with a fixed input.
pub struct RetrieverProbe {
    input: Option<Option<Value>>,
    retriever: Retriever,
}

impl RetrieverProbe {
    pub fn new(input: Option<Value>) -> Self {
        RetrieverProbe {
            input: Some(input),
            retriever: Retriever::new(),
        }
    }
}

impl Process for RetrieverProbe {
    fn on_start(&mut self, ctx: &mut Ctx<'_>) {
        if let Some(input) = self.input.take() {
            if let Some(v) = self.retriever.input(input, ctx) {
                ctx.output(Output::Decide(v));
            }
        }
    }

    fn on_message(&mut self, from: ProcessId, msg: Message, ctx: &mut Ctx<'_>) {
        if let Some(v) = self.retriever.on_message(from, &msg, ctx) {
            ctx.output(Output::Decide(v));
        }
    }

    fn on_timer(&mut self, _tag: TimerTag, _ctx: &mut Ctx<'_>) {}
}

/// Retriever at its precondition boundary: exactly `t + 1` correct
/// processes input `v`, the other correct ones bottom, and `t` Byzantine
/// processes send garbage symbols. True iff every correct process outputs
/// `v`.
pub fn retriever_boundary(n: usize, seed: u64, l_bits: u64) -> Result<bool, HarnessError> {
    let mut p = ProtocolParams::new(n)?;
    p.l_bits = l_bits;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FF_EE00);
    let corrupt = pick_corrupt(n, p.t, &mut rng);
    let v = make_value(seed, 0, materialized_len(l_bits));
    let mut holders: Vec<ProcessId> = p.processes().filter(|q| !corrupt.contains(q)).collect();
    rand::seq::SliceRandom::shuffle(holders.as_mut_slice(), &mut rng);
    holders.truncate(p.t + 1);
    let procs: Vec<Box<dyn Process>> = p
        .processes()
        .map(|id| -> Box<dyn Process> {
            if corrupt.contains(&id) {
                let inner = Box::new(RetrieverProbe::new(Some(v.clone())));
                Box::new(Byzantine::new(
                    inner,
                    ByzScript::GarbageSymbols,
                    rng.next_u64(),
                ))
            } else if holders.contains(&id) {
                Box::new(RetrieverProbe::new(Some(v.clone())))
            } else {
                Box::new(RetrieverProbe::new(None))
            }
        })
        .collect();
    let env = Env::new(p, Arc::new(MagicPrefix));
    let report = Simulation::new(
        env,
        procs,
        corrupt,
        Box::new(RandomDelays::new(false)),
        seed,
        SimConfig::default(),
    )
    .run();
    let decisions = report.decisions();
    Ok(report.all_correct_decided() && decisions.values().all(|d| *d == v))
}
