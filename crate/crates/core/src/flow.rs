//! Flow identities shared by the engine and the policies.

use std::fmt;

/// Identity of a transport connection: traffic between one source and one
/// destination endpoint. Hashing, throttling and contribution tracking
/// work on this key so that it stays stable across messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub src: u32,
    pub dst: u32,
}

impl FlowKey {
    pub fn new(src: usize, dst: usize) -> Self {
        FlowKey {
            src: src as u32,
            dst: dst as u32,
        }
    }

    pub fn as_u64(self) -> u64 {
        ((self.src as u64) << 32) | self.dst as u64
    }
}

/// Handle of one injected flow (one message transfer).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowId(pub u64);

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
