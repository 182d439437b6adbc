use super::{role_of, IdMap, Message, MessageKind, ProtocolError, Role};
use crate::device::{DeviceTimeline, RealId, ResourceKind};
use crate::trace::ApiClass;

/// Server side: owns the device and the shadow-to-real mapping.
#[derive(Debug, Default)]
pub struct Proxy {
    ids: IdMap,
    device: DeviceTimeline,
    next_real: u64,
    last_seq: Option<u64>,
    handled: u64,
}

const REAL_ID_BASE: u64 = 0x1000;

impl Proxy {
    pub fn new() -> Self {
        Proxy {
            next_real: REAL_ID_BASE,
            ..Default::default()
        }
    }

    pub fn device(&self) -> &DeviceTimeline {
        &self.device
    }

    pub fn device_mut(&mut self) -> &mut DeviceTimeline {
        &mut self.device
    }

    pub fn into_device(self) -> DeviceTimeline {
        self.device
    }

    pub fn ids(&self) -> &IdMap {
        &self.ids
    }

    pub fn handled(&self) -> u64 {
        self.handled
    }

    /// Executes one delivered request. Sync requests produce a response
    /// stamped with the device finish time.
    pub fn handle(&mut self, msg: &Message, arrival: f64) -> Result<Option<Message>, ProtocolError> {
        debug_assert_eq!(msg.kind, MessageKind::Request);
        if let Some(last) = self.last_seq {
            if msg.seq <= last {
                return Err(ProtocolError::FifoViolation { last, got: msg.seq });
            }
        }
        self.last_seq = Some(msg.seq);
        self.handled += 1;

        let mut refs = Vec::with_capacity(msg.shadow_refs.len() + 1);
        for &id in &msg.shadow_refs {
            let real = self
                .ids
                .resolve(id)
                .ok_or(ProtocolError::UnmappedShadow { seq: msg.seq, id })?;
            refs.push(real);
        }
        let role = role_of(&msg.api_name);
        if let Some(id) = msg.new_shadow_id {
            let kind = match role {
                Role::Create(kind) => kind,
                _ => ResourceKind::Buffer,
            };
            let real = RealId(self.next_real);
            if !self.ids.insert(id, real) {
                return Err(ProtocolError::DuplicateShadow { seq: msg.seq, id });
            }
            self.next_real += 1;
            self.device.create_resource(kind, real)?;
            refs.push(real);
        }
        let finish = self
            .device
            .submit(&msg.api_name, msg.seq, msg.device_time_us, arrival, &refs)?;
        if let Role::Destroy(_) = role {
            for &id in &msg.shadow_refs {
                if let Some(real) = self.ids.remove(id) {
                    self.device.destroy_resource(real)?;
                }
            }
        }
        Ok((msg.class == ApiClass::Sync).then(|| Message::response_to(msg, finish)))
    }
}

/// Re-executes a request log against a fresh proxy, each request arriving
/// at its issue timestamp. Responses in the log are skipped.
pub fn replay_log(messages: &[Message]) -> Result<DeviceTimeline, ProtocolError> {
    let mut proxy = Proxy::new();
    for msg in messages.iter().filter(|m| m.kind == MessageKind::Request) {
        proxy.handle(msg, msg.issue_timestamp)?;
    }
    Ok(proxy.into_device())
}
