use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::device::{RealId, ResourceKind};

/// Client-minted resource handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ShadowId(pub u64);

impl fmt::Display for ShadowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// How an API name interacts with resources.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Create(ResourceKind),
    Destroy(ResourceKind),
    /// References the most recently created live resources.
    Use,
    /// Read-only query answerable from shadow state.
    Query,
    Plain,
}

pub fn role_of(name: &str) -> Role {
    match name {
        "Malloc" => Role::Create(ResourceKind::Buffer),
        "CreateTensorDescriptor" => Role::Create(ResourceKind::TensorDescriptor),
        "Free" => Role::Destroy(ResourceKind::Buffer),
        "DestroyTensorDescriptor" => Role::Destroy(ResourceKind::TensorDescriptor),
        "LaunchKernel" | "ConvolutionForward" | "MemcpyH2D" | "MemcpyD2H" => Role::Use,
        "GetDevice" => Role::Query,
        _ => Role::Plain,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowResource {
    pub kind: ResourceKind,
    /// Request seq of the creating call.
    pub created_by: u64,
}

/// Client-side replicas of device resources.
#[derive(Debug, Clone, Default)]
pub struct ShadowTable {
    next: u64,
    live: BTreeMap<ShadowId, ShadowResource>,
    current_device: u32,
}

impl ShadowTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocates a fresh id; ids are never reused.
    pub fn mint(&mut self, kind: ResourceKind, created_by: u64) -> ShadowId {
        let id = ShadowId(self.next);
        self.next += 1;
        self.live.insert(id, ShadowResource { kind, created_by });
        id
    }

    /// Up to `k` most recently created live ids, oldest first.
    pub fn recent(&self, k: usize) -> Vec<ShadowId> {
        let mut ids: Vec<_> = self.live.keys().rev().take(k).copied().collect();
        ids.reverse();
        ids
    }

    /// Removes and returns the newest live resource of `kind`.
    pub fn release_latest(&mut self, kind: ResourceKind) -> Option<ShadowId> {
        let id = self
            .live
            .iter()
            .rev()
            .find(|(_, r)| r.kind == kind)
            .map(|(id, _)| *id)?;
        self.live.remove(&id);
        Some(id)
    }

    pub fn get(&self, id: ShadowId) -> Option<&ShadowResource> {
        self.live.get(&id)
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn minted(&self) -> u64 {
        self.next
    }

    pub fn current_device(&self) -> u32 {
        self.current_device
    }
}

/// Proxy-side translation from shadow ids to real ids.
#[derive(Debug, Clone, Default)]
pub struct IdMap {
    map: BTreeMap<ShadowId, RealId>,
}

impl IdMap {
    pub fn resolve(&self, id: ShadowId) -> Option<RealId> {
        self.map.get(&id).copied()
    }

    /// Returns false if `id` was already mapped.
    pub fn insert(&mut self, id: ShadowId, real: RealId) -> bool {
        if self.map.contains_key(&id) {
            return false;
        }
        self.map.insert(id, real);
        true
    }

    pub fn remove(&mut self, id: ShadowId) -> Option<RealId> {
        self.map.remove(&id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
