use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ProtocolError, SessionState, MAX_GROUP_SIZE, PALETTE_SIZE};
use crate::ids::{DeviceId, GroupId, SessionId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub device_id: DeviceId,
    pub group_id: GroupId,
    /// Palette index, unique within the group.
    pub display_color: u8,
    pub is_host: bool,
    pub last_seen_ms: u64,
}

#[derive(Clone, Debug, Default)]
struct Group {
    /// Join order; the host is always one of these.
    members: Vec<DeviceId>,
    /// Set while a session created from this group is running.
    session: Option<SessionId>,
}

/// Devices and groups. Every device is always in exactly one group, and
/// every group has exactly one host.
#[derive(Debug)]
pub struct Registry {
    devices: BTreeMap<DeviceId, DeviceRecord>,
    groups: BTreeMap<GroupId, Group>,
    issued: BTreeSet<String>,
    rng: ChaCha8Rng,
}

impl Default for Registry {
    fn default() -> Self {
        Self::new()
    }
}

impl Registry {
    /// A registry whose tokens come from OS entropy.
    pub fn new() -> Self {
        Self::with_rng(ChaCha8Rng::from_os_rng())
    }

    /// A registry with reproducible tokens.
    pub fn with_seed(seed: u64) -> Self {
        Self::with_rng(ChaCha8Rng::seed_from_u64(seed))
    }

    fn with_rng(rng: ChaCha8Rng) -> Self {
        Self { devices: BTreeMap::new(), groups: BTreeMap::new(), issued: BTreeSet::new(), rng }
    }

    fn token(&mut self, prefix: &str) -> String {
        loop {
            let t = format!("{prefix}{:016x}", self.rng.random::<u64>());
            if self.issued.insert(t.clone()) {
                return t;
            }
        }
    }

    /// A fresh device, alone in a fresh group and therefore its host.
    pub fn register_device(&mut self, now_ms: u64) -> DeviceRecord {
        let device_id = DeviceId::new(self.token("d"));
        let group_id = GroupId::new(self.token("g"));
        let record = DeviceRecord {
            device_id: device_id.clone(),
            group_id: group_id.clone(),
            display_color: 0,
            is_host: true,
            last_seen_ms: now_ms,
        };
        self.groups.insert(group_id, Group { members: vec![device_id.clone()], session: None });
        self.devices.insert(device_id, record.clone());
        record
    }

    pub fn device(&self, id: &DeviceId) -> Option<&DeviceRecord> {
        self.devices.get(id)
    }

    pub fn devices(&self) -> impl Iterator<Item = &DeviceRecord> {
        self.devices.values()
    }

    pub fn group_ids(&self) -> impl Iterator<Item = &GroupId> {
        self.groups.keys()
    }

    /// Members of a group in join order.
    pub fn members(&self, group: &GroupId) -> Result<Vec<DeviceRecord>, ProtocolError> {
        let g = self.groups.get(group).ok_or_else(|| ProtocolError::UnknownGroup(group.clone()))?;
        Ok(g.members.iter().map(|d| self.devices[d].clone()).collect())
    }

    pub fn host_of(&self, group: &GroupId) -> Option<&DeviceId> {
        let g = self.groups.get(group)?;
        g.members.iter().find(|d| self.devices[*d].is_host)
    }

    pub fn touch(&mut self, device: &DeviceId, now_ms: u64) {
        if let Some(d) = self.devices.get_mut(device) {
            d.last_seen_ms = d.last_seen_ms.max(now_ms);
        }
    }

    /// Moves `joiner` into `target`. Joining one's own group is a no-op.
    ///
    /// The joiner gives up host status and takes the lowest free colour in
    /// the new group. If it was host of a group that still has members, the
    /// earliest-joined remaining member becomes host there.
    pub fn join_group(&mut self, joiner: &DeviceId, target: &GroupId, now_ms: u64) -> Result<DeviceRecord, ProtocolError> {
        let current = self.devices.get(joiner).ok_or_else(|| ProtocolError::UnknownDevice(joiner.clone()))?.group_id.clone();
        let target_group = self.groups.get(target).ok_or_else(|| ProtocolError::UnknownGroup(target.clone()))?;
        if &current == target {
            self.touch(joiner, now_ms);
            return Ok(self.devices[joiner].clone());
        }
        if target_group.session.is_some() {
            return Err(ProtocolError::SessionLocked(target.clone()));
        }
        if self.groups[&current].session.is_some() {
            return Err(ProtocolError::SessionLocked(current));
        }
        if target_group.members.len() >= MAX_GROUP_SIZE {
            return Err(ProtocolError::GroupFull(target.clone()));
        }

        self.leave_group(joiner);
        let used: BTreeSet<u8> = self.groups[target].members.iter().map(|d| self.devices[d].display_color).collect();
        let color = (0..PALETTE_SIZE).find(|c| !used.contains(c)).expect("group below palette size");
        self.groups.get_mut(target).expect("checked").members.push(joiner.clone());
        let record = self.devices.get_mut(joiner).expect("checked");
        record.group_id = target.clone();
        record.is_host = false;
        record.display_color = color;
        record.last_seen_ms = record.last_seen_ms.max(now_ms);
        Ok(record.clone())
    }

    /// Removes the device from its group, handing host status on and
    /// dropping the group when it empties.
    fn leave_group(&mut self, device: &DeviceId) {
        let gid = self.devices[device].group_id.clone();
        let was_host = self.devices[device].is_host;
        let group = self.groups.get_mut(&gid).expect("device group exists");
        group.members.retain(|d| d != device);
        if group.members.is_empty() {
            self.groups.remove(&gid);
        } else if was_host {
            let next = group.members[0].clone();
            self.devices.get_mut(&next).expect("member exists").is_host = true;
        }
    }

    /// Forgets a device entirely (connection closed).
    pub fn remove_device(&mut self, device: &DeviceId) -> Option<DeviceRecord> {
        self.devices.get(device)?;
        self.leave_group(device);
        self.devices.remove(device)
    }

    /// Closes team formation for the requester's group and snapshots it
    /// into a session in the capturing-preview phase.
    pub fn start_session(&mut self, requester: &DeviceId, now_ms: u64) -> Result<SessionState, ProtocolError> {
        let record = self.devices.get(requester).ok_or_else(|| ProtocolError::UnknownDevice(requester.clone()))?;
        if !record.is_host {
            return Err(ProtocolError::NotHost(requester.clone()));
        }
        let gid = record.group_id.clone();
        if self.groups[&gid].session.is_some() {
            return Err(ProtocolError::AlreadyInSession(gid));
        }
        let session_id = SessionId::new(self.token("s"));
        let members: Vec<(DeviceId, u8)> =
            self.groups[&gid].members.iter().map(|d| (d.clone(), self.devices[d].display_color)).collect();
        self.groups.get_mut(&gid).expect("checked").session = Some(session_id.clone());
        Ok(SessionState::new(session_id, gid, requester.clone(), members, now_ms))
    }

    /// Unlocks a group whose session finished or aborted, so it can start
    /// another one or take new members.
    pub fn release_group(&mut self, group: &GroupId) {
        if let Some(g) = self.groups.get_mut(group) {
            g.session = None;
        }
    }

    pub fn session_of(&self, group: &GroupId) -> Option<&SessionId> {
        self.groups.get(group)?.session.as_ref()
    }

    /// Checks the single-host and unique-colour invariants over every group.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (gid, g) in &self.groups {
            let hosts = g.members.iter().filter(|d| self.devices[*d].is_host).count();
            if hosts != 1 {
                return Err(format!("group {gid} has {hosts} hosts"));
            }
            let colors: BTreeSet<u8> = g.members.iter().map(|d| self.devices[d].display_color).collect();
            if colors.len() != g.members.len() {
                return Err(format!("group {gid} reuses a colour"));
            }
            if g.members.iter().any(|d| &self.devices[d].group_id != gid) {
                return Err(format!("group {gid} lists a device that points elsewhere"));
            }
        }
        let listed: usize = self.groups.values().map(|g| g.members.len()).sum();
        if listed != self.devices.len() {
            return Err("a device is missing from, or listed in two, groups".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registration_creates_singleton_host() {
        let mut reg = Registry::with_seed(1);
        let d = reg.register_device(0);
        assert!(d.is_host);
        assert_eq!(reg.members(&d.group_id).unwrap().len(), 1);
        let e = reg.register_device(0);
        assert_ne!(d.device_id, e.device_id);
        assert_ne!(d.group_id, e.group_id);
    }

    #[test]
    fn thousand_registrations_are_distinct() {
        let mut reg = Registry::with_seed(7);
        let mut devices = BTreeSet::new();
        let mut groups = BTreeSet::new();
        for _ in 0..1000 {
            let d = reg.register_device(0);
            devices.insert(d.device_id);
            groups.insert(d.group_id);
        }
        assert_eq!((devices.len(), groups.len()), (1000, 1000));
    }

    #[test]
    fn joining_moves_into_host_group() {
        let mut reg = Registry::with_seed(2);
        let b = reg.register_device(0);
        let a = reg.register_device(0);
        let joined = reg.join_group(&a.device_id, &b.group_id, 1).unwrap();
        assert_eq!(joined.group_id, b.group_id);
        assert!(!joined.is_host);
        assert_eq!(joined.display_color, 1);
        assert_eq!(reg.host_of(&b.group_id), Some(&b.device_id));
        assert!(reg.members(&a.group_id).is_err(), "empty group is dropped");

        // Transitivity: C joins A's (now shared) group and lands with B.
        let c = reg.register_device(2);
        let c = reg.join_group(&c.device_id, &joined.group_id, 3).unwrap();
        assert_eq!(c.group_id, b.group_id);
        reg.check_invariants().unwrap();
    }

    #[test]
    fn join_own_group_is_noop() {
        let mut reg = Registry::with_seed(3);
        let a = reg.register_device(0);
        let again = reg.join_group(&a.device_id, &a.group_id, 5).unwrap();
        assert!(again.is_host);
        assert_eq!(again.group_id, a.group_id);
    }

    #[test]
    fn join_errors() {
        let mut reg = Registry::with_seed(4);
        let a = reg.register_device(0);
        assert_eq!(
            reg.join_group(&a.device_id, &GroupId::from("nope"), 0),
            Err(ProtocolError::UnknownGroup("nope".into()))
        );
        let host = reg.register_device(0);
        for _ in 0..MAX_GROUP_SIZE - 1 {
            let d = reg.register_device(0);
            reg.join_group(&d.device_id, &host.group_id, 0).unwrap();
        }
        assert_eq!(reg.join_group(&a.device_id, &host.group_id, 0), Err(ProtocolError::GroupFull(host.group_id.clone())));

        let other = reg.register_device(0);
        reg.start_session(&other.device_id, 0).unwrap();
        assert_eq!(
            reg.join_group(&a.device_id, &other.group_id, 0),
            Err(ProtocolError::SessionLocked(other.group_id.clone()))
        );
    }

    #[test]
    fn host_leaving_promotes_earliest_member() {
        let mut reg = Registry::with_seed(5);
        let h = reg.register_device(0);
        let m1 = reg.register_device(0);
        let m2 = reg.register_device(0);
        reg.join_group(&m1.device_id, &h.group_id, 0).unwrap();
        reg.join_group(&m2.device_id, &h.group_id, 0).unwrap();
        let elsewhere = reg.register_device(0);
        reg.join_group(&h.device_id, &elsewhere.group_id, 0).unwrap();
        assert_eq!(reg.host_of(&h.group_id), Some(&m1.device_id));
        reg.check_invariants().unwrap();
    }

    #[test]
    fn start_session_rules() {
        let mut reg = Registry::with_seed(6);
        let h = reg.register_device(0);
        let m = reg.register_device(0);
        let n = reg.register_device(0);
        reg.join_group(&m.device_id, &h.group_id, 0).unwrap();
        reg.join_group(&n.device_id, &h.group_id, 0).unwrap();
        assert_eq!(reg.start_session(&m.device_id, 0).unwrap_err(), ProtocolError::NotHost(m.device_id.clone()));
        let s = reg.start_session(&h.device_id, 0).unwrap();
        assert_eq!(s.members().len(), 3);
        assert_eq!(s.phase(), super::super::Phase::CapturingPreview);
        assert!(!s.single_member_warning());
        assert_eq!(reg.start_session(&h.device_id, 0).unwrap_err(), ProtocolError::AlreadyInSession(h.group_id.clone()));

        let solo = reg.register_device(0);
        let s = reg.start_session(&solo.device_id, 0).unwrap();
        assert_eq!(s.members().len(), 1);
        assert!(s.single_member_warning());
    }
}
