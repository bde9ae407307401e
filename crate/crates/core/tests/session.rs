use std::collections::BTreeMap;

use copano_core::alignment::PanoramaLayout;
use copano_core::ids::{DeviceId, GroupId, SessionId};
use copano_core::session::{
    CaptureFanout, CaptureOrder, Frame, Phase, ProtocolError, Registry, SessionState, MAX_GROUP_SIZE,
};
use copano_core::AffineTransform;
use proptest::prelude::*;

/// Fails reservations for devices whose index is in `refuse`.
struct FlakyFanout {
    refuse: Vec<DeviceId>,
    reserved: usize,
    delivered: Vec<DeviceId>,
}

impl CaptureFanout for FlakyFanout {
    type Permit = ();
    fn reserve(&mut self, device: &DeviceId) -> Option<()> {
        if self.refuse.contains(device) {
            None
        } else {
            self.reserved += 1;
            Some(())
        }
    }
    fn deliver(&mut self, device: &DeviceId, _: (), _: &CaptureOrder) {
        self.delivered.push(device.clone());
    }
}

#[derive(Clone, Debug)]
enum Op {
    Register,
    Join(usize, usize),
    Start(usize),
    Frame(usize, u64),
    Instruct(usize, usize, i8, i8),
    Place(usize),
    Trigger(usize, bool, Option<usize>),
    Upload(usize, u8),
    Advance(u64),
    Disconnect(usize),
    Finalize(usize),
}

fn arb_op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => Just(Op::Register),
        4 => (0usize..16, 0usize..16).prop_map(|(a, b)| Op::Join(a, b)),
        2 => (0usize..16).prop_map(Op::Start),
        4 => (0usize..16, 0u64..20).prop_map(|(d, s)| Op::Frame(d, s)),
        2 => (0usize..16, 0usize..16, -2i8..3, -2i8..3).prop_map(|(a, b, x, y)| Op::Instruct(a, b, x, y)),
        2 => (0usize..16).prop_map(Op::Place),
        2 => (0usize..16, any::<bool>(), prop::option::of(0usize..16)).prop_map(|(a, o, f)| Op::Trigger(a, o, f)),
        3 => (0usize..16, 0u8..2).prop_map(|(d, v)| Op::Upload(d, v)),
        2 => (0u64..12_000).prop_map(Op::Advance),
        1 => (0usize..16).prop_map(Op::Disconnect),
        1 => (0usize..16).prop_map(Op::Finalize),
    ]
}

struct World {
    reg: Registry,
    devices: Vec<DeviceId>,
    sessions: BTreeMap<SessionId, SessionState>,
    by_group: BTreeMap<GroupId, SessionId>,
    max_seq: BTreeMap<(SessionId, DeviceId), u64>,
    now: u64,
}

impl World {
    fn pick(&self, i: usize) -> Option<DeviceId> {
        (!self.devices.is_empty()).then(|| self.devices[i % self.devices.len()].clone())
    }

    fn session_of(&mut self, d: &DeviceId) -> Option<&mut SessionState> {
        let g = self.reg.device(d)?.group_id.clone();
        let sid = self.by_group.get(&g)?.clone();
        self.sessions.get_mut(&sid)
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

    fn apply(&mut self, op: Op) -> Result<(), TestCaseError> {
        match op {
            Op::Register => {
                let d = self.reg.register_device(self.now);
                self.devices.push(d.device_id);
            }
            Op::Join(a, b) => {
                let (Some(a), Some(b)) = (self.pick(a), self.pick(b)) else { return Ok(()) };
                let target = self.reg.device(&b).unwrap().group_id.clone();
                let size = self.reg.members(&target).unwrap().len();
                let res = self.reg.join_group(&a, &target, self.now);
                if let Err(ProtocolError::GroupFull(_)) = res {
                    prop_assert_eq!(size, MAX_GROUP_SIZE);
                }
            }
            Op::Start(a) => {
                let Some(a) = self.pick(a) else { return Ok(()) };
                if let Ok(s) = self.reg.start_session(&a, self.now) {
                    prop_assert_eq!(s.host(), &a);
                    self.by_group.insert(s.group_id().clone(), s.session_id().clone());
                    self.sessions.insert(s.session_id().clone(), s);
                }
            }
            Op::Frame(a, seq) => {
                let Some(a) = self.pick(a) else { return Ok(()) };
                let now = self.now;
                let Some(s) = self.session_of(&a) else { return Ok(()) };
                let sid = s.session_id().clone();
                let frame = Frame { device_id: a.clone(), seq, timestamp_ms: now, data: vec![seq as u8].into() };
                let open = matches!(s.phase(), Phase::CapturingPreview | Phase::Countdown);
                let res = s.ingest_viewfinder_frame(frame, now);
                prop_assert_eq!(res.is_ok(), open);
                if s.phase() == Phase::CapturingPreview {
                    let held = s.latest_frames()[&a].seq;
                    let m = self.max_seq.entry((sid, a)).or_insert(seq);
                    *m = (*m).max(seq);
                    prop_assert_eq!(held, *m, "coalescing keeps the newest frame");
                }
            }
            Op::Instruct(a, b, x, y) => {
                let (Some(a), Some(b)) = (self.pick(a), self.pick(b)) else { return Ok(()) };
                let now = self.now;
                if let Some(s) = self.session_of(&a) {
                    if let Ok(ins) = s.route_instruction(&a, &b, (x as f64, y as f64), now) {
                        prop_assert!((ins.dx.hypot(ins.dy) - 1.0).abs() < 1e-12);
                    }
                }
            }
            Op::Place(a) => {
                let Some(a) = self.pick(a) else { return Ok(()) };
                if let Some(s) = self.session_of(&a) {
                    let mut layout = PanoramaLayout::empty(s.host().clone(), s.members().to_vec());
                    for d in s.members() {
                        layout.placements.insert(d.clone(), AffineTransform::IDENTITY);
                        layout.sizes.insert(d.clone(), (8, 8));
                        layout.unplaced.remove(d);
                    }
                    s.set_layout(layout);
                }
            }
            Op::Trigger(a, allow, refuse) => {
                let Some(a) = self.pick(a) else { return Ok(()) };
                let refuse = refuse.and_then(|i| self.pick(i)).into_iter().collect();
                let now = self.now;
                let Some(s) = self.session_of(&a) else { return Ok(()) };
                let before = s.phase();
                let recipients = s.active_members();
                let mut fan = FlakyFanout { refuse, reserved: 0, delivered: Vec::new() };
                match s.trigger_capture(&a, allow, now, &mut fan) {
                    Ok(_) => {
                        prop_assert_eq!(&fan.delivered, &recipients, "order reaches every member");
                        prop_assert!(fan.delivered.contains(s.host()));
                    }
                    Err(_) => {
                        prop_assert!(fan.delivered.is_empty(), "failed trigger delivered orders");
                        prop_assert_eq!(s.phase(), before);
                    }
                }
            }
            Op::Upload(a, variant) => {
                let Some(a) = self.pick(a) else { return Ok(()) };
                let now = self.now;
                let Some(s) = self.session_of(&a) else { return Ok(()) };
                if let Some(order) = s.order().cloned() {
                    let _ = s.collect_capture(&a, &order.order_id, now, vec![variant].into(), now);
                }
            }
            Op::Advance(dt) => {
                self.now += dt;
                let now = self.now;
                for s in self.sessions.values_mut() {
                    if s.poll_clock(now) {
                        s.finalize(now).map_err(|e| TestCaseError::fail(e.to_string()))?;
                    }
                    s.check_liveness(now);
                }
            }
            Op::Disconnect(a) => {
                let Some(a) = self.pick(a) else { return Ok(()) };
                if let Some(s) = self.session_of(&a) {
                    s.disconnect(&a);
                }
                self.reg.remove_device(&a);
                self.devices.retain(|d| d != &a);
            }
            Op::Finalize(a) => {
                let Some(a) = self.pick(a) else { return Ok(()) };
                let now = self.now;
                if let Some(s) = self.session_of(&a) {
                    if let Ok(summary) = s.finalize(now) {
                        prop_assert_eq!(summary.partial, !summary.missing.is_empty());
                    }
                }
            }
        }
        self.release_finished();
        Ok(())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn random_sequences_keep_protocol_invariants(ops in prop::collection::vec(arb_op(), 1..120)) {
        let mut w = World {
            reg: Registry::with_seed(0),
            devices: Vec::new(),
            sessions: BTreeMap::new(),
            by_group: BTreeMap::new(),
            max_seq: BTreeMap::new(),
            now: 0,
        };
        let mut phases: BTreeMap<SessionId, Phase> = BTreeMap::new();
        for op in ops {
            w.apply(op)?;
            w.reg.check_invariants().map_err(TestCaseError::fail)?;
            for (sid, s) in &w.sessions {
                let last = phases.entry(sid.clone()).or_insert(s.phase());
                prop_assert!(s.phase() >= *last, "phase went from {} to {}", last, s.phase());
                *last = s.phase();
            }
        }
    }
}

#[test]
fn session_restarts_after_completion() {
    let mut reg = Registry::with_seed(3);
    let h = reg.register_device(0);
    let mut s = reg.start_session(&h.device_id, 0).unwrap();
    s.set_layout(PanoramaLayout {
        placements: [(h.device_id.clone(), AffineTransform::IDENTITY)].into(),
        sizes: [(h.device_id.clone(), (4, 4))].into(),
        unplaced: Default::default(),
        ..PanoramaLayout::empty(h.device_id.clone(), [])
    });
    let mut fan = FlakyFanout { refuse: vec![], reserved: 0, delivered: vec![] };
    let order = s.trigger_capture(&h.device_id, false, 10, &mut fan).unwrap();
    s.collect_capture(&h.device_id, &order.order_id, 3010, vec![1].into(), 3020).unwrap();
    s.finalize(3030).unwrap();
    assert_eq!(reg.start_session(&h.device_id, 4000).unwrap_err(), ProtocolError::AlreadyInSession(h.group_id.clone()));
    reg.release_group(&h.group_id);
    let again = reg.start_session(&h.device_id, 4000).unwrap();
    assert_ne!(again.session_id(), s.session_id());
}
