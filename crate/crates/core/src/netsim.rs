//! Virtual-clock network model.
//!
//! Endpoints have nominal upload/download speeds in MB/s. Each transfer draws
//! one lognormal fluctuation multiplier per side. A transfer proceeds at the
//! slower of the sender's upload and the receiver's download; at the server
//! end the sampled speed is split evenly among the transfers in flight, and
//! rates are recomputed whenever a transfer on that link starts or finishes.
//! Payloads are counted in bytes with 1 MB = 10^6 bytes.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BYTES_PER_MB: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    /// MB/s
    pub upload_speed: f64,
    /// MB/s
    pub download_speed: f64,
    /// Standard deviation of the log-space normal.
    pub fluctuation_sigma: f64,
}

impl Endpoint {
    pub fn validate(&self, what: &str) -> Result<()> {
        let speeds_ok = [self.upload_speed, self.download_speed]
            .iter()
            .all(|s| *s > 0.0 && s.is_finite());
        if !speeds_ok || !(self.fluctuation_sigma >= 0.0 && self.fluctuation_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "{what}: speeds must be > 0 and sigma >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EndpointId {
    Server,
    Client(usize),
}

impl fmt::Display for EndpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EndpointId::Server => write!(f, "server"),
            EndpointId::Client(i) => write!(f, "client{i}"),
        }
    }
}

/// `base · exp(Z)` with `Z ~ Normal(0, sigma²)`; exactly `base` when `sigma = 0`.
pub fn sample_speed<R: Rng + ?Sized>(base: f64, sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        return base;
    }
    let z: f64 = Normal::new(0.0, sigma)
        .expect("sigma is finite and non-negative")
        .sample(rng);
    base * z.exp()
}

/// Which end of a transfer is the server, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServerSide {
    Sender,
    Receiver,
    Neither,
}

/// Transfer rate in MB/s given already-sampled speeds: the server end's speed
/// is divided by `server_load` (the number of transfers sharing it, this one
/// included).
pub fn effective_rate(sender_up: f64, receiver_down: f64, side: ServerSide, server_load: usize) -> f64 {
    let share = server_load.max(1) as f64;
    match side {
        ServerSide::Sender => (sender_up / share).min(receiver_down),
        ServerSide::Receiver => sender_up.min(receiver_down / share),
        ServerSide::Neither => sender_up.min(receiver_down),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub id: u64,
    pub payload_bytes: u64,
    pub sender: EndpointId,
    pub receiver: EndpointId,
    pub start_time: f64,
    pub finish_time: f64,
    /// MB/s the transfer was scheduled at.
    pub rate: f64,
}

impl Transfer {
    pub fn duration(&self) -> f64 {
        self.finish_time - self.start_time
    }
}

/// Event kinds, in tie-break priority order at equal timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    TransferDone,
    TrainingDone,
    AggregationTick,
    Report,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::TransferDone => "transfer_done",
            EventKind::TrainingDone => "training_done",
            EventKind::AggregationTick => "aggregation_tick",
            EventKind::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SimEvent {
    TransferDone(Transfer),
    TrainingDone { client: usize },
    AggregationTick { round: u64 },
    Report { index: u64 },
}

impl SimEvent {
    pub fn kind(&self) -> EventKind {
        match self {
            SimEvent::TransferDone(_) => EventKind::TransferDone,
            SimEvent::TrainingDone { .. } => EventKind::TrainingDone,
            SimEvent::AggregationTick { .. } => EventKind::AggregationTick,
            SimEvent::Report { .. } => EventKind::Report,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Scheduled {
    time: f64,
    kind: EventKind,
    seq: u64,
    event: SimEvent,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.kind.cmp(&self.kind))
            .then(other.seq.cmp(&self.seq))
    }
}

/// Time-ordered event queue; ties resolve by event kind, then insertion order.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Scheduled>,
    now: f64,
    seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, time: f64, event: SimEvent) -> Result<()> {
        if time.is_nan() || time < self.now {
            return Err(Error::Invariant(format!(
                "event {event:?} scheduled at {time} before current time {}",
                self.now
            )));
        }
        self.heap.push(Scheduled {
            time,
            kind: event.kind(),
            seq: self.seq,
            event,
        });
        self.seq += 1;
        Ok(())
    }

    /// Pops the earliest event and moves the clock to it.
    pub fn advance(&mut self) -> Result<(f64, SimEvent)> {
        let next = self.heap.pop().ok_or(Error::SimulationComplete)?;
        self.now = next.time;
        Ok((next.time, next.event))
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|s| s.time)
    }
}

/// Tick times `T^0, T^0 + (Δt + T_merge), ...`.
pub fn aggregation_tick_times(first: f64, delta_t: f64, t_merge: f64) -> Result<impl Iterator<Item = f64>> {
    if !(delta_t > 0.0 && t_merge >= 0.0) {
        return Err(Error::Config(format!(
            "tick spacing needs delta_t > 0 and t_merge >= 0, got {delta_t}, {t_merge}"
        )));
    }
    let step = delta_t + t_merge;
    Ok((0u64..).map(move |n| first + n as f64 * step))
}

/// Local training duration: `iterations · per_iteration · density · factor`.
pub fn training_time(iterations: usize, per_iteration: f64, density: f64, compute_factor: f64) -> f64 {
    iterations as f64 * per_iteration * density * compute_factor
}

/// One line of the optional event trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: f64,
    pub kind: EventKind,
    pub client: Option<usize>,
    pub bytes: u64,
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        let client = self.client.map(|c| c.to_string()).unwrap_or_else(|| "-".into());
        format!("{:.9}\t{}\t{}\t{}", self.time, self.kind.as_str(), client, self.bytes)
    }
}

/// A transfer in flight through the server.
#[derive(Debug, Clone, Copy)]
struct Active {
    transfer: Transfer,
    /// Sampled speed of the client end (MB/s).
    client_speed: f64,
    /// Sampled speed of the server end before sharing (MB/s).
    server_speed: f64,
    remaining_mb: f64,
    updated_at: f64,
}

/// Server and client endpoints with their fluctuation streams and the
/// transfers in flight at the server.
///
/// The server's upload link is shared by all downloads in flight and its
/// download link by all uploads in flight. Whenever a transfer starts or
/// finishes on a link, every transfer on that link is re-rated to
/// `min(client speed, server speed / active count)` and its finish time
/// recomputed from the bytes it still has to move. Callers schedule every
/// [`Transfer`] handed back and ignore completions [`Network::finish`]
/// reports as superseded.
#[derive(Debug)]
pub struct Network {
    server: Endpoint,
    clients: Vec<Endpoint>,
    server_rng: ChaCha8Rng,
    client_rngs: Vec<ChaCha8Rng>,
    sending: Vec<Active>,
    receiving: Vec<Active>,
    next_id: u64,
    sent: Vec<u64>,
    received: Vec<u64>,
}

impl Network {
    pub fn new(server: Endpoint, clients: Vec<Endpoint>, seed: u64) -> Result<Self> {
        server.validate("server")?;
        for (i, c) in clients.iter().enumerate() {
            c.validate(&format!("client {i}"))?;
        }
        let stream = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        let n = clients.len();
        Ok(Self {
            server,
            server_rng: stream(0),
            client_rngs: (0..n as u64).map(|i| stream(i + 1)).collect(),
            clients,
            sending: Vec::new(),
            receiving: Vec::new(),
            next_id: 0,
            sent: vec![0; n + 1],
            received: vec![0; n + 1],
        })
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn client(&self, i: usize) -> &Endpoint {
        &self.clients[i]
    }

    pub fn server(&self) -> &Endpoint {
        &self.server
    }

    fn slot(id: EndpointId) -> usize {
        match id {
            EndpointId::Server => 0,
            EndpointId::Client(i) => i + 1,
        }
    }

    /// Transfers currently sharing the server's upload (`server_sends`) or
    /// download link.
    pub fn server_load(&self, server_sends: bool) -> usize {
        if server_sends {
            self.sending.len()
        } else {
            self.receiving.len()
        }
    }

    /// Client `i` → server. Returns the new transfer first, followed by every
    /// in-flight upload whose finish time moved.
    pub fn start_upload(&mut self, now: f64, client: usize, payload_bytes: u64) -> Vec<Transfer> {
        self.start_uploads(now, &[(client, payload_bytes)])
    }

    /// Uploads starting at the same instant. The new transfers come first, in
    /// batch order, followed by every in-flight upload whose finish time moved.
    pub fn start_uploads(&mut self, now: f64, batch: &[(usize, u64)]) -> Vec<Transfer> {
        self.start(now, batch, false)
    }

    /// Server → client `i`; see [`Network::start_upload`].
    pub fn start_download(&mut self, now: f64, client: usize, payload_bytes: u64) -> Vec<Transfer> {
        self.start_downloads(now, &[(client, payload_bytes)])
    }

    /// Downloads starting at the same instant; see [`Network::start_uploads`].
    pub fn start_downloads(&mut self, now: f64, batch: &[(usize, u64)]) -> Vec<Transfer> {
        self.start(now, batch, true)
    }

    fn start(&mut self, now: f64, batch: &[(usize, u64)], server_sends: bool) -> Vec<Transfer> {
        let mut fresh = Vec::with_capacity(batch.len());
        for &(client, payload_bytes) in batch {
            let ep = self.clients[client];
            let (client_base, server_base) = if server_sends {
                (ep.download_speed, self.server.upload_speed)
            } else {
                (ep.upload_speed, self.server.download_speed)
            };
            let client_speed = sample_speed(client_base, ep.fluctuation_sigma, &mut self.client_rngs[client]);
            let server_speed = sample_speed(server_base, self.server.fluctuation_sigma, &mut self.server_rng);
            let (sender, receiver) = if server_sends {
                (EndpointId::Server, EndpointId::Client(client))
            } else {
                (EndpointId::Client(client), EndpointId::Server)
            };
            let id = self.next_id;
            self.next_id += 1;
            fresh.push(Active {
                transfer: Transfer {
                    id,
                    payload_bytes,
                    sender,
                    receiver,
                    start_time: now,
                    finish_time: now,
                    rate: 0.0,
                },
                client_speed,
                server_speed,
                remaining_mb: payload_bytes as f64 / BYTES_PER_MB,
                updated_at: now,
            });
        }
        let ids: Vec<u64> = fresh.iter().map(|a| a.transfer.id).collect();
        let pool = if server_sends {
            &mut self.sending
        } else {
            &mut self.receiving
        };
        pool.extend(fresh);
        let mut changed = rerate(pool, now, server_sends);
        // new transfers first, in batch order
        changed.sort_by_key(|t| (!ids.contains(&t.id), ids.iter().position(|i| *i == t.id), t.id));
        changed
    }

    /// Completes `t` if it is the current schedule of a transfer in flight:
    /// books its bytes and returns the re-rated schedules of the transfers
    /// still sharing its link. Returns `None` for a superseded schedule.
    pub fn finish(&mut self, now: f64, t: &Transfer) -> Option<Vec<Transfer>> {
        let server_sends = t.sender == EndpointId::Server;
        let pool = if server_sends {
            &mut self.sending
        } else {
            &mut self.receiving
        };
        let at = pool
            .iter()
            .position(|a| a.transfer.id == t.id && a.transfer.finish_time == t.finish_time)?;
        let done = pool.remove(at).transfer;
        let changed = rerate(pool, now, server_sends);
        self.sent[Self::slot(done.sender)] += done.payload_bytes;
        self.received[Self::slot(done.receiver)] += done.payload_bytes;
        Some(changed)
    }

    pub fn bytes_sent(&self, id: EndpointId) -> u64 {
        self.sent[Self::slot(id)]
    }

    pub fn bytes_received(&self, id: EndpointId) -> u64 {
        self.received[Self::slot(id)]
    }
}

/// Advances every transfer in `pool` to `now` at its old rate, then assigns
/// the fair-share rate for the current pool size. Returns the transfers whose
/// finish time changed (or that have never been scheduled).
fn rerate(pool: &mut [Active], now: f64, server_sends: bool) -> Vec<Transfer> {
    let load = pool.len();
    let mut changed = Vec::new();
    for a in pool.iter_mut() {
        let fresh = a.transfer.rate == 0.0;
        if !fresh {
            a.remaining_mb = (a.remaining_mb - a.transfer.rate * (now - a.updated_at)).max(0.0);
        }
        a.updated_at = now;
        let side = if server_sends {
            ServerSide::Sender
        } else {
            ServerSide::Receiver
        };
        let rate = if server_sends {
            effective_rate(a.server_speed, a.client_speed, side, load)
        } else {
            effective_rate(a.client_speed, a.server_speed, side, load)
        };
        let finish = now + a.remaining_mb / rate;
        if fresh || finish != a.transfer.finish_time {
            a.transfer.rate = rate;
            a.transfer.finish_time = finish;
            changed.push(a.transfer);
        } else {
            a.transfer.rate = rate;
        }
    }
    changed
}

/// Finish time of a single transfer scheduled into `q` from already-known
/// nominal speeds, with fluctuation drawn from `rng`. The completion event is
/// enqueued.
#[allow(clippy::too_many_arguments)]
pub fn schedule_transfer<R: Rng + ?Sized>(
    q: &mut EventQueue,
    id: u64,
    payload_bytes: u64,
    sender: (EndpointId, &Endpoint),
    receiver: (EndpointId, &Endpoint),
    server_load: usize,
    rng: &mut R,
) -> Result<Transfer> {
    let up = sample_speed(sender.1.upload_speed, sender.1.fluctuation_sigma, rng);
    let down = sample_speed(receiver.1.download_speed, receiver.1.fluctuation_sigma, rng);
    let side = match (sender.0, receiver.0) {
        (EndpointId::Server, _) => ServerSide::Sender,
        (_, EndpointId::Server) => ServerSide::Receiver,
        _ => ServerSide::Neither,
    };
    let rate = effective_rate(up, down, side, server_load);
    let now = q.now();
    let t = Transfer {
        id,
        payload_bytes,
        sender: sender.0,
        receiver: receiver.0,
        start_time: now,
        finish_time: now + payload_bytes as f64 / BYTES_PER_MB / rate,
        rate,
    };
    q.schedule(t.finish_time, SimEvent::TransferDone(t))?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(up: f64, down: f64, sigma: f64) -> Endpoint {
        Endpoint {
            upload_speed: up,
            download_speed: down,
            fluctuation_sigma: sigma,
        }
    }

    #[test]
    fn zero_sigma_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_speed(3.7, 0.0, &mut rng), 3.7);
    }

    #[test]
    fn samples_are_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!((0..10_000).all(|_| sample_speed(1.0, 3.0, &mut rng) > 0.0));
    }

    #[test]
    fn lognormal_median_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut xs: Vec<f64> = (0..100_000).map(|_| sample_speed(1.0, 0.3, &mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        let median = (xs[49_999] + xs[50_000]) / 2.0;
        assert!((median - 1.0).abs() < 0.02, "median {median}");
    }

    #[test]
    fn client_bound_transfer() {
        let mut q = EventQueue::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = schedule_transfer(
            &mut q,
            0,
            10_000_000,
            (EndpointId::Client(0), &ep(5.0, 20.0, 0.0)),
            (EndpointId::Server, &ep(20.0, 100.0, 0.0)),
            1,
            &mut rng,
        )
        .unwrap();
        assert_eq!(t.finish_time, 2.0);
        assert_eq!(q.advance().unwrap().0, 2.0);
    }

    #[test]
    fn fair_share_transfer() {
        let mut net = Network::new(ep(20.0, 100.0, 0.0), vec![ep(5.0, 20.0, 0.0); 50], 9).unwrap();
        let batch: Vec<(usize, u64)> = (0..50).map(|i| (i, 10_000_000)).collect();
        let ts = net.start_uploads(0.0, &batch);
        assert_eq!(ts.len(), 50);
        assert!(ts.iter().all(|t| t.finish_time == 5.0 && t.rate == 2.0));
        assert_eq!(net.server_load(false), 50);
        for t in &ts {
            let rerated = net.finish(5.0, t).unwrap();
            assert!(rerated.is_empty(), "all finish together");
        }
        assert_eq!(net.server_load(false), 0);

        let mut net = Network::new(ep(20.0, 100.0, 0.0), vec![ep(5.0, 20.0, 0.0); 2], 9).unwrap();
        assert_eq!(net.start_upload(0.0, 0, 10_000_000)[0].finish_time, 2.0);
    }

    #[test]
    fn shares_are_recomputed_on_start_and_finish() {
        // server upload 20 MB/s, clients can take 20 MB/s each
        let mut net = Network::new(ep(20.0, 100.0, 0.0), vec![ep(5.0, 20.0, 0.0); 2], 1).unwrap();
        let a = net.start_download(0.0, 0, 20_000_000);
        assert_eq!(a[0].finish_time, 1.0);
        // at t = 0.5 half of A is left; B joins and both drop to 10 MB/s
        let b = net.start_download(0.5, 1, 10_000_000);
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].receiver, EndpointId::Client(1));
        assert_eq!(b[0].finish_time, 1.5);
        assert_eq!(b[1].id, a[0].id);
        assert_eq!(b[1].finish_time, 1.5);
        // the original schedule of A is now stale
        assert!(net.finish(1.0, &a[0]).is_none());
        assert_eq!(net.finish(1.5, &b[1]).unwrap(), vec![]);
        assert!(net.finish(1.5, &b[0]).is_some());
        assert_eq!(net.bytes_received(EndpointId::Client(0)), 20_000_000);
    }

    #[test]
    fn departure_speeds_up_the_rest() {
        let mut net = Network::new(ep(10.0, 100.0, 0.0), vec![ep(5.0, 20.0, 0.0); 2], 1).unwrap();
        let ts = net.start_downloads(0.0, &[(0, 5_000_000), (1, 10_000_000)]);
        assert_eq!((ts[0].finish_time, ts[1].finish_time), (1.0, 2.0));
        let rest = net.finish(1.0, &ts[0]).unwrap();
        // 5 MB left on B at the full 10 MB/s
        assert_eq!(rest.len(), 1);
        assert_eq!(rest[0].finish_time, 1.5);
    }

    #[test]
    fn zero_payload_finishes_now() {
        let mut net = Network::new(ep(20.0, 100.0, 0.3), vec![ep(5.0, 20.0, 0.3)], 1).unwrap();
        let t = net.start_download(4.5, 0, 0);
        assert_eq!(t[0].finish_time, 4.5);
    }

    #[test]
    fn queue_orders_by_time_then_kind_then_seq() {
        let mut q = EventQueue::new();
        q.schedule(3.0, SimEvent::TrainingDone { client: 0 }).unwrap();
        q.schedule(1.0, SimEvent::TrainingDone { client: 1 }).unwrap();
        q.schedule(1.0, SimEvent::AggregationTick { round: 1 }).unwrap();
        q.schedule(1.0, SimEvent::TrainingDone { client: 2 }).unwrap();
        let order: Vec<SimEvent> = (0..4).map(|_| q.advance().unwrap().1).collect();
        assert_eq!(
            order,
            [
                SimEvent::TrainingDone { client: 1 },
                SimEvent::TrainingDone { client: 2 },
                SimEvent::AggregationTick { round: 1 },
                SimEvent::TrainingDone { client: 0 },
            ]
        );
        assert_eq!(q.now(), 3.0);
        assert!(matches!(q.advance(), Err(Error::SimulationComplete)));
    }

    #[test]
    fn queue_rejects_past_events() {
        let mut q = EventQueue::new();
        q.schedule(2.0, SimEvent::Report { index: 0 }).unwrap();
        q.advance().unwrap();
        assert!(q.schedule(1.0, SimEvent::Report { index: 1 }).is_err());
    }

    #[test]
    fn tick_sequences() {
        let t: Vec<f64> = aggregation_tick_times(10.0, 4.0, 0.0).unwrap().take(3).collect();
        assert_eq!(t, [10.0, 14.0, 18.0]);
        let t: Vec<f64> = aggregation_tick_times(0.0, 4.0, 0.1).unwrap().take(2).collect();
        assert!((t[1] - t[0] - 4.1).abs() < 1e-12);
        assert!(aggregation_tick_times(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn bytes_are_conserved() {
        let mut net = Network::new(ep(20.0, 100.0, 0.1), vec![ep(5.0, 20.0, 0.3); 3], 4).unwrap();
        let mut q = EventQueue::new();
        let mut started = net.start_upload(0.0, 0, 100);
        started.extend(net.start_download(0.0, 2, 250));
        for t in started {
            q.schedule(t.finish_time, SimEvent::TransferDone(t)).unwrap();
        }
        q.schedule(1.0, SimEvent::Report { index: 0 }).unwrap();
        while let Ok((now, ev)) = q.advance() {
            match ev {
                SimEvent::TransferDone(t) => {
                    for r in net.finish(now, &t).unwrap_or_default() {
                        q.schedule(r.finish_time, SimEvent::TransferDone(r)).unwrap();
                    }
                }
                SimEvent::Report { .. } => {
                    for t in net.start_upload(now, 1, 7) {
                        q.schedule(t.finish_time, SimEvent::TransferDone(t)).unwrap();
                    }
                }
                _ => unreachable!(),
            }
        }
        let sent: u64 =
            (0..3).map(|i| net.bytes_sent(EndpointId::Client(i))).sum::<u64>() + net.bytes_sent(EndpointId::Server);
        let recv: u64 = (0..3).map(|i| net.bytes_received(EndpointId::Client(i))).sum::<u64>()
            + net.bytes_received(EndpointId::Server);
        assert_eq!(sent, 357);
        assert_eq!(sent, recv);
        assert_eq!(net.bytes_received(EndpointId::Server), 107);
    }

    #[test]
    fn throughput_never_exceeds_sampled_bound() {
        let mut net = Network::new(ep(20.0, 100.0, 0.0), vec![ep(5.0, 8.0, 0.0); 4], 4).unwrap();
        for i in 0..4 {
            for t in net.start_download(0.0, i, 1_000_000) {
                assert!(t.rate <= 8.0);
                assert!(t.duration() >= 1.0 / 8.0);
            }
        }
    }
}
