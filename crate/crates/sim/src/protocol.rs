//! Randomized checking of the session protocol's invariants.
//!
//! Drives the registry and session state machines with seeded random
//! operation sequences (register, join, start, frames, instructions,
//! captures, clock advances, disconnects) and records every violation of
//! single-host, phase monotonicity, frame coalescing and fan-out atomicity.

use std::collections::BTreeMap;

use copano_core::ids::{DeviceId, GroupId, SessionId};
use copano_core::session::{
    CaptureFanout, CaptureOrder, Frame, Phase, ProtocolError, Registry, SessionState, MAX_GROUP_SIZE,
};
use copano_core::{AffineTransform, PanoramaLayout};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub enum Op {
    Register,
    Join(usize, usize),
    Start(usize),
    Frame(usize, u64),
    Instruct(usize, usize, i8, i8),
    Place(usize),
    Trigger { by: usize, allow_unplaced: bool, unreachable: Option<usize> },
    Upload(usize, u8),
    Advance(u64),
    Disconnect(usize),
    Finalize(usize),
}

impl Op {
    pub fn random(rng: &mut ChaCha8Rng) -> Op {
        let i = |rng: &mut ChaCha8Rng| rng.random_range(0..16usize);
        match rng.random_range(0..26u32) {
            0..=2 => Op::Register,
            3..=6 => Op::Join(i(rng), i(rng)),
            7..=8 => Op::Start(i(rng)),
            9..=12 => Op::Frame(i(rng), rng.random_range(0..20)),
            13..=14 => Op::Instruct(i(rng), i(rng), rng.random_range(-2..3), rng.random_range(-2..3)),
            15..=16 => Op::Place(i(rng)),
            17..=18 => Op::Trigger {
                by: i(rng),
                allow_unplaced: rng.random_bool(0.5),
                unreachable: rng.random_bool(0.3).then(|| i(rng)),
            },
            19..=21 => Op::Upload(i(rng), rng.random_range(0..2)),
            22..=23 => Op::Advance(rng.random_range(0..12_000)),
            24 => Op::Disconnect(i(rng)),
            _ => Op::Finalize(i(rng)),
        }
    }
}

/// Fan-out whose reservations fail for the listed devices, as a full
/// outbound queue would.
struct FlakyFanout {
    refuse: Option<DeviceId>,
    delivered: Vec<DeviceId>,
}

impl CaptureFanout for FlakyFanout {
    type Permit = ();
    fn reserve(&mut self, device: &DeviceId) -> Option<()> {
        (self.refuse.as_ref() != Some(device)).then_some(())
    }
    fn deliver(&mut self, device: &DeviceId, _: (), _: &CaptureOrder) {
        self.delivered.push(device.clone());
    }
}

/// Summary of a checking run.
#[derive(Clone, Debug, Default)]
pub struct ProtocolReport {
    pub sequences: usize,
    pub operations: usize,
    pub sessions_started: usize,
    pub captures_triggered: usize,
    pub sessions_completed: usize,
    pub violations: Vec<String>,
}

struct World {
    reg: Registry,
    devices: Vec<DeviceId>,
    sessions: BTreeMap<SessionId, SessionState>,
    by_group: BTreeMap<GroupId, SessionId>,
    max_seq: BTreeMap<(SessionId, DeviceId), u64>,
    phases: BTreeMap<SessionId, Phase>,
    now: u64,
    violations: Vec<String>,
    started: usize,
    triggered: usize,
}

macro_rules! check {
    ($w:expr, $cond:expr, $($fmt:tt)+) => {
        if !$cond {
            $w.violations.push(format!($($fmt)+));
        }
    };
}

impl World {
    fn new(seed: u64) -> Self {
        Self {
            reg: Registry::with_seed(seed),
            devices: Vec::new(),
            sessions: BTreeMap::new(),
            by_group: BTreeMap::new(),
            max_seq: BTreeMap::new(),
            phases: BTreeMap::new(),
            now: 0,
            violations: Vec::new(),
            started: 0,
            triggered: 0,
        }
    }

    fn pick(&self, i: usize) -> Option<DeviceId> {
        (!self.devices.is_empty()).then(|| self.devices[i % self.devices.len()].clone())
    }

    fn session_id_of(&self, d: &DeviceId) -> Option<SessionId> {
        let g = &self.reg.device(d)?.group_id;
        self.by_group.get(g).cloned()
    }

    fn apply(&mut self, op: Op) {
        match op {
            Op::Register => {
                let d = self.reg.register_device(self.now);
                self.devices.push(d.device_id);
            }
            Op::Join(a, b) => {
                let (Some(a), Some(b)) = (self.pick(a), self.pick(b)) else { return };
                let target = self.reg.device(&b).expect("picked devices are registered").group_id.clone();
                let size = self.reg.members(&target).map_or(0, |m| m.len());
                if let Err(ProtocolError::GroupFull(_)) = self.reg.join_group(&a, &target, self.now) {
                    check!(self, size == MAX_GROUP_SIZE, "group reported full at {size} members");
                }
            }
            Op::Start(a) => {
                let Some(a) = self.pick(a) else { return };
                if let Ok(s) = self.reg.start_session(&a, self.now) {
                    check!(self, s.host() == &a, "session host {} is not the starter {a}", s.host());
                    self.started += 1;
                    self.by_group.insert(s.group_id().clone(), s.session_id().clone());
                    self.sessions.insert(s.session_id().clone(), s);
                }
            }
            Op::Frame(a, seq) => {
                let Some(a) = self.pick(a) else { return };
                let Some(sid) = self.session_id_of(&a) else { return };
                let now = self.now;
                let s = self.sessions.get_mut(&sid).expect("indexed session exists");
                let open = matches!(s.phase(), Phase::CapturingPreview | Phase::Countdown);
                let frame = Frame { device_id: a.clone(), seq, timestamp_ms: now, data: vec![seq as u8].into() };
                let accepted = s.ingest_viewfinder_frame(frame, now).is_ok();
                let held = s.latest_frames().get(&a).map(|f| f.seq);
                let frames_held = s.latest_frames().len();
                let members = s.members().len();
                let preview = s.phase() == Phase::CapturingPreview;
                check!(self, accepted == open, "frame acceptance {accepted} while phase open={open}");
                check!(self, frames_held <= members, "{frames_held} frames held for {members} members");
                if preview {
                    // A silent member's frame is dropped, so nothing may be
                    // held; anything held is the newest, and a newer frame
                    // always replaces it.
                    let prev = self.max_seq.get(&(sid.clone(), a.clone())).copied();
                    let m = prev.map_or(seq, |p| p.max(seq));
                    self.max_seq.insert((sid, a), m);
                    check!(self, held.is_none_or(|h| h == m), "coalescing kept seq {held:?}, newest is {m}");
                    if prev.is_none_or(|p| seq > p) {
                        check!(self, held == Some(seq), "newer frame {seq} not held ({held:?})");
                    }
                }
            }
            Op::Instruct(a, b, x, y) => {
                let (Some(a), Some(b)) = (self.pick(a), self.pick(b)) else { return };
                let Some(sid) = self.session_id_of(&a) else { return };
                let now = self.now;
                let s = self.sessions.get_mut(&sid).expect("indexed session exists");
                let host = s.host().clone();
                if let Ok(ins) = s.route_instruction(&a, &b, (x as f64, y as f64), now) {
                    check!(self, a == host, "non-host {a} routed an instruction");
                    check!(self, (ins.dx.hypot(ins.dy) - 1.0).abs() < 1e-12, "instruction not normalized");
                }
            }
            Op::Place(a) => {
                let Some(a) = self.pick(a) else { return };
                let Some(sid) = self.session_id_of(&a) else { return };
                let s = self.sessions.get_mut(&sid).expect("indexed session exists");
                let mut layout = PanoramaLayout::empty(s.host().clone(), s.members().to_vec());
                for d in s.members() {
                    layout.placements.insert(d.clone(), AffineTransform::IDENTITY);
                    layout.sizes.insert(d.clone(), (8, 8));
                    layout.unplaced.remove(d);
                }
                s.set_layout(layout);
            }
            Op::Trigger { by, allow_unplaced, unreachable } => {
                let Some(a) = self.pick(by) else { return };
                let refuse = unreachable.and_then(|i| self.pick(i));
                let Some(sid) = self.session_id_of(&a) else { return };
                let now = self.now;
                let s = self.sessions.get_mut(&sid).expect("indexed session exists");
                let before = s.phase();
                let recipients = s.active_members();
                let mut fan = FlakyFanout { refuse, delivered: Vec::new() };
                let result = s.trigger_capture(&a, allow_unplaced, now, &mut fan);
                let after = s.phase();
                let host = s.host().clone();
                match result {
                    Ok(_) => {
                        self.triggered += 1;
                        check!(self, fan.delivered == recipients, "order reached {:?}, not {:?}", fan.delivered, recipients);
                        check!(self, fan.delivered.contains(&host), "order skipped the host");
                        check!(self, after == Phase::Countdown, "phase {after} after a trigger");
                    }
                    Err(e) => {
                        check!(self, fan.delivered.is_empty(), "failed trigger ({e}) delivered {:?}", fan.delivered);
                        check!(self, after == before, "failed trigger moved phase {before} -> {after}");
                    }
                }
            }
            Op::Upload(a, variant) => {
                let Some(a) = self.pick(a) else { return };
                let Some(sid) = self.session_id_of(&a) else { return };
                let now = self.now;
                let s = self.sessions.get_mut(&sid).expect("indexed session exists");
                if let Some(order) = s.order().cloned() {
                    let _ = s.collect_capture(&a, &order.order_id, now, vec![variant].into(), now);
                }
            }
            Op::Advance(dt) => {
                self.now += dt;
                let now = self.now;
                let mut errors = Vec::new();
                for s in self.sessions.values_mut() {
                    if s.poll_clock(now) {
                        if let Err(e) = s.finalize(now) {
                            errors.push(format!("timed-out session failed to finalize: {e}"));
                        }
                    }
                    s.check_liveness(now);
                }
                self.violations.extend(errors);
            }
            Op::Disconnect(a) => {
                let Some(a) = self.pick(a) else { return };
                if let Some(sid) = self.session_id_of(&a) {
                    self.sessions.get_mut(&sid).expect("indexed session exists").disconnect(&a);
                }
                self.reg.remove_device(&a);
                self.devices.retain(|d| d != &a);
            }
            Op::Finalize(a) => {
                let Some(a) = self.pick(a) else { return };
                let Some(sid) = self.session_id_of(&a) else { return };
                let now = self.now;
                let s = self.sessions.get_mut(&sid).expect("indexed session exists");
                if let Ok(summary) = s.finalize(now) {
                    check!(self, summary.partial == !summary.missing.is_empty(), "partial flag disagrees with missing list");
                }
            }
        }
    }

    fn release_finished(&mut self) {
        let done: Vec<GroupId> = self
            .by_group
            .iter()
            .filter(|(_, s)| self.sessions[*s].phase().is_terminal())
            .map(|(g, _)| g.clone())
            .collect();
        for g in done {
            self.by_group.remove(&g);
            self.reg.release_group(&g);
        }
    }

    fn check_global(&mut self) {
        if let Err(e) = self.reg.check_invariants() {
            self.violations.push(e);
        }
        let mut regressions = Vec::new();
        for (sid, s) in &self.sessions {
            let last = self.phases.entry(sid.clone()).or_insert(s.phase());
            if s.phase() < *last {
                regressions.push(format!("session {sid} went from {last} to {}", s.phase()));
            }
            *last = s.phase();
        }
        self.violations.extend(regressions);
    }
}

/// Runs `sequences` random sequences of `1..=max_len` operations each.
/// Sequence `i` uses seed `seed + i`, so any violation can be replayed alone.
pub fn check_random_sequences(sequences: usize, max_len: usize, seed: u64) -> ProtocolReport {
    let mut report = ProtocolReport { sequences, ..Default::default() };
    for i in 0..sequences {
        let seq_seed = seed.wrapping_add(i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seq_seed);
        let len = rng.random_range(1..=max_len);
        let mut w = World::new(seq_seed);
        for step in 0..len {
            let op = Op::random(&mut rng);
            let before = w.violations.len();
            w.apply(op.clone());
            w.release_finished();
            w.check_global();
            for v in &mut w.violations[before..] {
                *v = format!("sequence {seq_seed} step {step} {op:?}: {v}");
            }
        }
        report.operations += len;
        report.sessions_started += w.started;
        report.captures_triggered += w.triggered;
        report.sessions_completed += w.sessions.values().filter(|s| s.phase() == Phase::Complete).count();
        report.violations.append(&mut w.violations);
    }
    report
}
