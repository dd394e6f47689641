//! Server and client state machines driven by the virtual clock.
//!
//! Every algorithm is a point in one toggle space, so the proposed method,
//! its ablations and the baselines share a single event loop. Three timing
//! disciplines exist:
//!
//! - tick-driven: the server aggregates at fixed instants `T^1 + n * (dt + T_merge)`
//!   and dispatches to whichever clients are idle at that instant;
//! - barrier: the server waits for every client before aggregating;
//! - per-arrival: the server mixes each model in as it arrives and replies
//!   to that client immediately.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aggregate::{fed_avg, freshness, mask_fed_avg, staleness_weights, ClientRecord, ServerBuffer};
use crate::distribute::{build_submodels, encode_deltas, index_for, packet_bytes, reconstruct, DeltaPacket};
use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::model::{apply_mask, init_model, local_train, mask_of, test_acc, Dataset, Mask, ParamVector, Shape};
use crate::netsim::{
    training_time, EndpointId, EventKind, EventQueue, Network, SimEvent, TraceRecord, Transfer, BYTES_PER_MB,
};
use crate::prune::{
    compute_density, mean_round_time, prune_to_density, recover_density, should_terminate, DensityState, EarlyStopper,
    TimeQueue,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "PR-FL")]
    PrFl,
    #[serde(rename = "FedAvg")]
    FedAvg,
    #[serde(rename = "FedAsyn")]
    FedAsyn,
    #[serde(rename = "FedFix")]
    FedFix,
    #[serde(rename = "syn-PR-FL")]
    SynPrFl,
    #[serde(rename = "nobuff-PR-FL")]
    NobuffPrFl,
    #[serde(rename = "fedavg-PR-FL")]
    FedavgPrFl,
    #[serde(rename = "noRes-PR-FL")]
    NoResPrFl,
    #[serde(rename = "noRecover-PR-FL")]
    NoRecoverPrFl,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::PrFl,
        Variant::FedAvg,
        Variant::FedAsyn,
        Variant::FedFix,
        Variant::SynPrFl,
        Variant::NobuffPrFl,
        Variant::FedavgPrFl,
        Variant::NoResPrFl,
        Variant::NoRecoverPrFl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::PrFl => "PR-FL",
            Variant::FedAvg => "FedAvg",
            Variant::FedAsyn => "FedAsyn",
            Variant::FedFix => "FedFix",
            Variant::SynPrFl => "syn-PR-FL",
            Variant::NobuffPrFl => "nobuff-PR-FL",
            Variant::FedavgPrFl => "fedavg-PR-FL",
            Variant::NoResPrFl => "noRes-PR-FL",
            Variant::NoRecoverPrFl => "noRecover-PR-FL",
        }
    }

    pub fn toggles(self) -> Toggles {
        let full = Toggles {
            buffered: true,
            masked: true,
            differential: true,
            recovery: true,
            synchronous: false,
            pruning: true,
            ticks: true,
        };
        let baseline = Toggles {
            buffered: false,
            masked: false,
            differential: false,
            recovery: false,
            synchronous: false,
            pruning: false,
            ticks: false,
        };
        match self {
            Variant::PrFl => full,
            Variant::SynPrFl => Toggles {
                synchronous: true,
                ticks: false,
                ..full
            },
            Variant::NobuffPrFl => Toggles {
                buffered: false,
                ..full
            },
            Variant::FedavgPrFl => Toggles { masked: false, ..full },
            Variant::NoResPrFl => Toggles {
                differential: false,
                ..full
            },
            Variant::NoRecoverPrFl => Toggles {
                recovery: false,
                ..full
            },
            Variant::FedAsyn => baseline,
            Variant::FedAvg => Toggles {
                synchronous: true,
                ..baseline
            },
            Variant::FedFix => Toggles {
                ticks: true,
                ..baseline
            },
        }
    }

    /// Inverse of [`Variant::toggles`].
    pub fn from_toggles(t: Toggles) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.toggles() == t)
            .ok_or_else(|| Error::Config(format!("no algorithm variant has toggles {t:?}")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// Feature switches of the shared event loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Toggles {
    /// Keep the latest model of every client and aggregate the whole buffer.
    pub buffered: bool,
    /// Masked averaging (otherwise plain averaging) for the distributed model.
    pub masked: bool,
    /// Send nested deltas instead of one full submodel per client.
    pub differential: bool,
    /// Raise density floors when a client's accuracy stalls.
    pub recovery: bool,
    /// Wait for every client before aggregating.
    pub synchronous: bool,
    /// Per-client magnitude pruning matched to measured round times.
    pub pruning: bool,
    /// Aggregate on the fixed tick grid rather than on every arrival.
    pub ticks: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Ticks,
    Barrier,
    PerArrival,
}

impl Toggles {
    fn mode(self) -> Mode {
        if self.synchronous {
            Mode::Barrier
        } else if self.ticks {
            Mode::Ticks
        } else {
            Mode::PerArrival
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientReport {
    pub density: f64,
    pub rounds_completed: u64,
    /// `n - n'(i)` of the newest model received from the client; 0 before any.
    pub staleness_age: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u64,
    pub sim_time: f64,
    pub global_acc: f64,
    pub server_bytes_sent: u64,
    pub clients: Vec<ClientReport>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep a copy of the distributed model after every report.
    pub record_models: bool,
    pub record_trace: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub reports: Vec<RoundReport>,
    /// Distributed (or, for the baselines, global) model per report.
    pub models: Vec<ParamVector>,
    pub trace: Vec<TraceRecord>,
    /// `(round, client)` for every density-floor increase.
    pub recoveries: Vec<(u64, usize)>,
    /// Aggregation interval in use.
    pub delta_t: f64,
    /// The run ended on the termination rule rather than a budget.
    pub converged: bool,
    /// Longest dispatch-to-arrival time of any client round.
    pub max_latency: f64,
}

/// Runs `cfg` on pre-partitioned training data and returns the per-round
/// reports.
pub fn run(cfg: &RunConfig, train: &[Dataset], test: &Dataset) -> Result<Vec<RoundReport>> {
    Ok(simulate(cfg, train, test, RunOptions::default())?.reports)
}

pub fn simulate(cfg: &RunConfig, train: &[Dataset], test: &Dataset, opts: RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    if train.len() != cfg.clients {
        return Err(Error::Config(format!(
            "{} training partitions for {} clients",
            train.len(),
            cfg.clients
        )));
    }
    let mut sim = Sim::new(cfg, train, test, opts)?;
    sim.start()?;
    sim.event_loop()?;
    Ok(sim.out)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn training_seed(master: u64, client: usize, local_round: u64) -> u64 {
    splitmix(splitmix(splitmix(master) ^ client as u64) ^ local_round)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// A model in flight: what the client was given and when.
#[derive(Debug, Clone)]
struct Job {
    base: ParamVector,
    mask: Mask,
    density: f64,
    dispatch_round: u64,
    dispatch_time: f64,
    trained: Option<ParamVector>,
    upload_bytes: u64,
}

#[derive(Debug, Clone, Default)]
struct ClientState {
    job: Option<Job>,
    rounds: u64,
    bytes_up: u64,
    bytes_down: u64,
    model_round: Option<u64>,
    first_latency: Option<f64>,
}

#[derive(Debug, Clone)]
struct Arrival {
    client: usize,
    model: ParamVector,
    base: ParamVector,
    dispatch_round: u64,
    round_time: f64,
    density: f64,
    time: f64,
}

struct Sim<'a> {
    cfg: &'a RunConfig,
    toggles: Toggles,
    mode: Mode,
    opts: RunOptions,
    train: &'a [Dataset],
    test: &'a Dataset,
    shapes: Vec<Shape>,
    len: usize,
    net: Network,
    q: EventQueue,
    clients: Vec<ClientState>,
    buffer: ServerBuffer,
    pending: Vec<Arrival>,
    model: ParamVector,
    masks: Vec<Mask>,
    density: Vec<DensityState>,
    client_stoppers: Vec<EarlyStopper>,
    global_stopper: EarlyStopper,
    compute_factor: Vec<f64>,
    round: u64,
    server_bytes_sent: u64,
    step: f64,
    first_tick: Option<f64>,
    done: bool,
    out: RunOutput,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a RunConfig, train: &'a [Dataset], test: &'a Dataset, opts: RunOptions) -> Result<Self> {
        let toggles = cfg.variant.toggles();
        let shapes = cfg.model_shapes();
        let model = init_model(&shapes, splitmix(cfg.seed ^ 0x6d6f_6465_6c00))?;
        let len = model.len();
        let m = cfg.clients;
        let d = &cfg.density;
        let rho_min = d.rho_min.resolve(m, "rho_min")?;
        let density = rho_min
            .iter()
            .map(|r| DensityState::new(*r, d.delta_rho))
            .collect::<Result<Vec<_>>>()?;
        let client_stoppers = (0..m)
            .map(|_| EarlyStopper::new(d.patience, d.min_delta))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            toggles,
            mode: toggles.mode(),
            opts,
            train,
            test,
            shapes,
            len,
            net: Network::new(
                cfg.network.server,
                cfg.client_endpoints()?,
                splitmix(cfg.seed ^ 0x6e65_7400),
            )?,
            q: EventQueue::new(),
            clients: vec![ClientState::default(); m],
            buffer: ServerBuffer::new(),
            pending: Vec::new(),
            model,
            masks: vec![Mask::full(len); m],
            density,
            client_stoppers,
            global_stopper: EarlyStopper::new(d.patience, d.min_delta)?,
            compute_factor: cfg.network.compute_factor.resolve(m, "compute_factor")?,
            round: 0,
            server_bytes_sent: 0,
            step: 0.0,
            first_tick: None,
            done: false,
            out: RunOutput::default(),
        })
    }

    fn nominal_bytes(&self, coords: usize) -> u64 {
        (self.cfg.network.model_size_mb * BYTES_PER_MB * coords as f64 / self.len as f64).round() as u64
    }

    fn trace(&mut self, time: f64, kind: EventKind, client: Option<usize>, bytes: u64) {
        if self.opts.record_trace {
            self.out.trace.push(TraceRecord {
                time,
                kind,
                client,
                bytes,
            });
        }
    }

    fn start(&mut self) -> Result<()> {
        let all: Vec<usize> = (0..self.cfg.clients).collect();
        self.dispatch(0.0, &all)
    }

    fn event_loop(&mut self) -> Result<()> {
        while !self.done {
            let Some(next) = self.q.peek_time() else {
                break;
            };
            if self.cfg.schedule.t_max.is_some_and(|t| next > t) {
                break;
            }
            let (now, ev) = self.q.advance()?;
            match ev {
                SimEvent::TransferDone(t) => self.on_transfer(now, t)?,
                SimEvent::TrainingDone { client } => self.on_trained(now, client)?,
                SimEvent::AggregationTick { round } => self.on_tick(now, round)?,
                SimEvent::Report { index } => self.on_report(now, index)?,
            }
        }
        Ok(())
    }

    /// Sends the current model to `targets`, all starting at `now`.
    fn dispatch(&mut self, now: f64, targets: &[usize]) -> Result<()> {
        if targets.is_empty() {
            return Ok(());
        }
        let round = u32::try_from(self.round).map_err(|_| Error::Invariant("round counter overflow".into()))?;
        let mut jobs: Vec<(usize, ParamVector, u64)> = Vec::with_capacity(targets.len());

        if self.toggles.pruning && self.toggles.differential {
            let by_client: BTreeMap<usize, Mask> = self.masks.iter().cloned().enumerate().collect();
            let (set, order) = build_submodels(&self.model, &by_client)?;
            let packets = encode_deltas(&set, round)?;
            let mut widest = 0;
            for &c in targets {
                let range = index_for(&order, c)?;
                let base = reconstruct(&packets, range, &self.shapes)?;
                let expected = apply_mask(&self.model, &self.masks[c])?;
                if base != expected {
                    return Err(Error::Invariant(format!(
                        "client {c} reconstructed a different submodel"
                    )));
                }
                let bytes: usize = packets[range.lo - 1..range.hi].iter().map(DeltaPacket::byte_size).sum();
                widest = widest.max(range.hi);
                jobs.push((c, base, bytes as u64));
            }
            // packets are broadcast: each is sent once however many clients need it
            self.server_bytes_sent += packets[..widest].iter().map(|p| p.byte_size() as u64).sum::<u64>();
        } else if self.toggles.pruning {
            for &c in targets {
                let base = apply_mask(&self.model, &self.masks[c])?;
                let packet = DeltaPacket::from_masked(&self.model, &self.masks[c], round, 1)?;
                let bytes = packet.byte_size() as u64;
                self.server_bytes_sent += bytes;
                jobs.push((c, base, bytes));
            }
        } else {
            for &c in targets {
                let bytes = packet_bytes(self.len) as u64;
                self.server_bytes_sent += bytes;
                jobs.push((c, self.model.clone(), bytes));
            }
        }

        let mut batch = Vec::with_capacity(jobs.len());
        for (c, base, wire) in jobs {
            let mask = self.masks[c].clone();
            let coords = mask.count_ones();
            let st = &mut self.clients[c];
            if st.job.is_some() {
                return Err(Error::Invariant(format!("client {c} dispatched while busy")));
            }
            st.bytes_down += wire;
            st.job = Some(Job {
                base,
                density: mask.density(),
                mask,
                dispatch_round: self.round,
                dispatch_time: now,
                trained: None,
                upload_bytes: 0,
            });
            batch.push((c, self.nominal_bytes(coords)));
        }
        for t in self.net.start_downloads(now, &batch) {
            self.q.schedule(t.finish_time, SimEvent::TransferDone(t))?;
        }
        Ok(())
    }

    fn on_transfer(&mut self, now: f64, t: Transfer) -> Result<()> {
        let Some(rerated) = self.net.finish(now, &t) else {
            // superseded by a re-rated schedule of the same transfer
            return Ok(());
        };
        for r in rerated {
            self.q.schedule(r.finish_time, SimEvent::TransferDone(r))?;
        }
        let peer = match (t.sender, t.receiver) {
            (EndpointId::Client(c), _) | (_, EndpointId::Client(c)) => Some(c),
            _ => None,
        };
        self.trace(now, EventKind::TransferDone, peer, t.payload_bytes);
        match (t.sender, t.receiver) {
            (EndpointId::Server, EndpointId::Client(c)) => {
                let job = self.clients[c]
                    .job
                    .as_ref()
                    .ok_or_else(|| Error::Invariant(format!("download finished for idle client {c}")))?;
                let secs = training_time(
                    self.cfg.train.local_iterations,
                    self.cfg.network.compute_per_iteration,
                    job.density,
                    self.compute_factor[c],
                );
                self.q.schedule(now + secs, SimEvent::TrainingDone { client: c })
            }
            (EndpointId::Client(c), EndpointId::Server) => self.on_arrival(now, c),
            _ => Err(Error::Invariant("transfer between two clients".into())),
        }
    }

    fn on_trained(&mut self, now: f64, c: usize) -> Result<()> {
        let local_round = self.clients[c].rounds;
        let job = self.clients[c]
            .job
            .as_mut()
            .ok_or_else(|| Error::Invariant(format!("training finished for idle client {c}")))?;
        let trained = local_train(
            &job.base,
            &job.mask,
            &self.train[c],
            &self.cfg.train,
            job.dispatch_round,
            training_seed(self.cfg.seed, c, local_round),
        )?;
        if !mask_of(&trained).is_subset_of(&job.mask) {
            return Err(Error::Invariant(format!("client {c} trained outside its mask")));
        }
        let coords = job.mask.count_ones();
        job.upload_bytes = packet_bytes(coords) as u64;
        job.trained = Some(trained);
        let nominal = self.nominal_bytes(coords);
        self.trace(now, EventKind::TrainingDone, Some(c), 0);
        for t in self.net.start_upload(now, c, nominal) {
            self.q.schedule(t.finish_time, SimEvent::TransferDone(t))?;
        }
        Ok(())
    }

    fn on_arrival(&mut self, now: f64, c: usize) -> Result<()> {
        let job = self.clients[c]
            .job
            .take()
            .ok_or_else(|| Error::Invariant(format!("upload finished for idle client {c}")))?;
        let model = job
            .trained
            .ok_or_else(|| Error::Invariant(format!("client {c} uploaded before training")))?;
        if !mask_of(&model).is_subset_of(&job.mask) {
            return Err(Error::Invariant(format!(
                "server received a model from client {c} outside its mask"
            )));
        }
        let raw = now - job.dispatch_time;
        self.out.max_latency = self.out.max_latency.max(raw);
        let st = &mut self.clients[c];
        st.rounds += 1;
        st.bytes_up += job.upload_bytes;
        st.model_round = Some(job.dispatch_round);
        st.first_latency.get_or_insert(raw);
        let arrival = Arrival {
            client: c,
            model,
            base: job.base,
            dispatch_round: job.dispatch_round,
            round_time: raw / job.density,
            density: job.density,
            time: now,
        };

        match self.mode {
            Mode::PerArrival => {
                let age = self.round - arrival.dispatch_round;
                let s = self.cfg.aggregation.alpha * freshness(age, self.cfg.aggregation.beta);
                for (w, x) in self.model.values_mut().iter_mut().zip(arrival.model.values()) {
                    *w = (1.0 - s) * *w + s * x;
                }
                self.round += 1;
                self.dispatch(now, &[c])?;
            }
            Mode::Ticks if !self.toggles.buffered => {
                // masked per-arrival mixing: only coordinates the client trained move
                let age = self.round - arrival.dispatch_round;
                let s = self.cfg.aggregation.alpha * freshness(age, self.cfg.aggregation.beta);
                let mask = mask_of(&arrival.model);
                for ((w, x), keep) in self
                    .model
                    .values_mut()
                    .iter_mut()
                    .zip(arrival.model.values())
                    .zip(mask.bits())
                {
                    if *keep {
                        *w = (1.0 - s) * *w + s * x;
                    }
                }
                self.buffer.update(c, self.record(&arrival)?)?;
            }
            Mode::Ticks | Mode::Barrier => self.pending.push(arrival),
        }

        if self.first_tick.is_none() && self.clients.iter().all(|s| s.first_latency.is_some()) {
            self.begin_schedule(now)?;
        } else if self.mode == Mode::Barrier && self.pending.len() == self.cfg.clients {
            self.q.schedule(
                now + self.cfg.schedule.t_merge,
                SimEvent::AggregationTick { round: self.round + 1 },
            )?;
        }
        Ok(())
    }

    /// Called once every client has finished its first round.
    fn begin_schedule(&mut self, now: f64) -> Result<()> {
        let mut lat: Vec<f64> = self.clients.iter().filter_map(|s| s.first_latency).collect();
        let dt = match self.cfg.schedule.delta_t {
            Some(dt) => dt,
            None => median(&mut lat),
        };
        if dt.is_nan() || dt <= 0.0 {
            return Err(Error::Invariant(format!("aggregation interval resolved to {dt}")));
        }
        self.out.delta_t = dt;
        self.step = dt + self.cfg.schedule.t_merge;
        self.first_tick = Some(now);
        match self.mode {
            Mode::Ticks => self.q.schedule(now, SimEvent::AggregationTick { round: 1 }),
            Mode::Barrier => self
                .q
                .schedule(now + self.cfg.schedule.t_merge, SimEvent::AggregationTick { round: 1 }),
            Mode::PerArrival => self.q.schedule(now, SimEvent::Report { index: 1 }),
        }
    }

    fn record(&self, a: &Arrival) -> Result<ClientRecord> {
        Ok(ClientRecord {
            model: a.model.clone(),
            dispatch_round: a.dispatch_round,
            arrival_time: a.time,
            round_time: a.round_time,
            queue: TimeQueue::new(self.cfg.density.queue_len)?,
            density: a.density,
        })
    }

    fn on_tick(&mut self, now: f64, n: u64) -> Result<()> {
        if n != self.round + 1 {
            return Err(Error::Invariant(format!("tick {n} after round {}", self.round)));
        }
        self.round = n;
        self.buffer.round = n;
        let arrivals = std::mem::take(&mut self.pending);
        for a in &arrivals {
            self.buffer.update(a.client, self.record(a)?)?;
        }
        self.aggregate(&arrivals)?;
        self.trace(now, EventKind::AggregationTick, None, 0);

        if self.toggles.pruning && (n + 1).is_multiple_of(self.cfg.density.pruning_interval) {
            self.evaluate_and_prune(n)?;
        }
        let acc = test_acc(&self.evaluated_model()?, self.test)?;
        self.report(now, n, acc);

        if self.done || n >= self.cfg.schedule.max_rounds {
            self.done = true;
            return Ok(());
        }
        let idle: Vec<usize> = (0..self.cfg.clients)
            .filter(|c| self.clients[*c].job.is_none())
            .collect();
        self.dispatch(now, &idle)?;
        if self.mode == Mode::Ticks {
            let first = self.first_tick.unwrap_or(now);
            self.q
                .schedule(first + n as f64 * self.step, SimEvent::AggregationTick { round: n + 1 })?;
        }
        Ok(())
    }

    fn aggregate(&mut self, arrivals: &[Arrival]) -> Result<()> {
        if arrivals.is_empty() || !self.toggles.buffered && self.toggles.pruning {
            return Ok(());
        }
        let eta = self.cfg.aggregation.eta_g;
        if self.toggles.buffered {
            let wts = staleness_weights(&self.buffer, self.cfg.aggregation.beta)?;
            self.model = if self.toggles.masked {
                mask_fed_avg(&self.buffer, &self.model, &wts, eta)?
            } else {
                let avg = fed_avg(&self.buffer, &wts)?;
                if eta == 1.0 {
                    avg
                } else {
                    mix(&self.model, &avg, eta)?
                }
            };
        } else if self.mode == Mode::Barrier {
            // plain synchronous averaging of everyone's fresh model
            let mut buf = ServerBuffer::new();
            buf.round = self.round;
            for a in arrivals {
                buf.update(a.client, self.record(a)?)?;
            }
            let avg = fed_avg(&buf, &staleness_weights(&buf, self.cfg.aggregation.beta)?)?;
            self.model = if eta == 1.0 { avg } else { mix(&self.model, &avg, eta)? };
        } else {
            // fixed-interval aggregation: mean update of the clients that arrived in this window
            let scale = eta / arrivals.len() as f64;
            let mut next = self.model.values().to_vec();
            for a in arrivals {
                for ((w, x), b) in next.iter_mut().zip(a.model.values()).zip(a.base.values()) {
                    *w += scale * (x - b);
                }
            }
            self.model = ParamVector::new(next, self.shapes.clone())?;
        }
        if !self.model.is_finite() {
            return Err(Error::Invariant(format!(
                "global model diverged at round {}",
                self.round
            )));
        }
        Ok(())
    }

    /// The model whose accuracy is reported: the plain average of the buffer
    /// when one exists, the distributed model otherwise.
    fn evaluated_model(&self) -> Result<ParamVector> {
        if self.toggles.buffered && self.toggles.pruning && !self.buffer.is_empty() {
            fed_avg(
                &self.buffer,
                &staleness_weights(&self.buffer, self.cfg.aggregation.beta)?,
            )
        } else {
            Ok(self.model.clone())
        }
    }

    fn evaluate_and_prune(&mut self, n: u64) -> Result<()> {
        let clients: Vec<usize> = self.buffer.records.keys().copied().collect();
        for &c in &clients {
            let acc = test_acc(&self.buffer.records[&c].model, self.test)?;
            if self.client_stoppers[c].observe(acc) && self.toggles.recovery && self.density[c].rho < 1.0 {
                self.density[c] = recover_density(self.density[c]);
                self.out.recoveries.push((n, c));
            }
        }
        let global_acc = test_acc(&self.evaluated_model()?, self.test)?;
        let stalled = self.global_stopper.observe(global_acc);

        let means: BTreeMap<usize, f64> = self
            .buffer
            .records
            .iter()
            .filter_map(|(c, r)| mean_round_time(&r.queue).map(|m| (*c, m)))
            .collect();
        if means.len() == self.cfg.clients {
            for c in 0..self.cfg.clients {
                self.density[c].rho = compute_density(&means, c, &self.density[c])?;
            }
        }
        for c in 0..self.cfg.clients {
            self.masks[c] = prune_to_density(&self.model, self.density[c].rho, self.cfg.density.policy)?;
        }
        let densities: BTreeMap<usize, f64> = self.density.iter().map(|d| d.rho).enumerate().collect();
        if should_terminate(&densities, stalled) {
            self.out.converged = true;
            self.done = true;
        }
        Ok(())
    }

    fn on_report(&mut self, now: f64, index: u64) -> Result<()> {
        let acc = test_acc(&self.model, self.test)?;
        self.report(now, index, acc);
        if index >= self.cfg.schedule.max_rounds {
            self.done = true;
            return Ok(());
        }
        let first = self.first_tick.unwrap_or(now);
        self.q
            .schedule(first + index as f64 * self.step, SimEvent::Report { index: index + 1 })
    }

    fn report(&mut self, now: f64, round: u64, acc: f64) {
        self.trace(now, EventKind::Report, None, 0);
        let version = self.round;
        let clients = self
            .clients
            .iter()
            .enumerate()
            .map(|(c, st)| ClientReport {
                density: self.masks[c].density(),
                rounds_completed: st.rounds,
                staleness_age: st.model_round.map_or(0, |r| version - r),
                bytes_up: st.bytes_up,
                bytes_down: st.bytes_down,
            })
            .collect();
        self.out.reports.push(RoundReport {
            round,
            sim_time: now,
            global_acc: acc,
            server_bytes_sent: self.server_bytes_sent,
            clients,
        });
        if self.opts.record_models {
            self.out.models.push(self.model.clone());
        }
    }
}

fn mix(old: &ParamVector, new: &ParamVector, eta: f64) -> Result<ParamVector> {
    let v = old
        .values()
        .iter()
        .zip(new.values())
        .map(|(o, x)| (1.0 - eta) * o + eta * x)
        .collect();
    ParamVector::new(v, old.shapes().to_vec())
}
