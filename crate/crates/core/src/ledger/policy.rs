//! Per-channel access control.

use std::collections::BTreeMap;
use std::str::FromStr;

use super::types::{ChannelId, OrgRole};

/// How much of a channel a role may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ReadScope {
    None,
    /// Only entries about the reader's own devices (manufacturers).
    Own,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub read: ReadScope,
    pub write: bool,
}

impl Access {
    pub const NONE: Access = Access { read: ReadScope::None, write: false };
    pub const READ: Access = Access { read: ReadScope::All, write: false };
    pub const READ_OWN: Access = Access { read: ReadScope::Own, write: false };
    pub const READ_WRITE: Access = Access { read: ReadScope::All, write: true };
    pub const WRITE: Access = Access { read: ReadScope::None, write: true };
}

impl FromStr for Access {
    type Err = String;

    /// Accepts `none`, `read`, `read-own`, `write`, `read-write`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "none" => Access::NONE,
            "read" => Access::READ,
            "read-own" => Access::READ_OWN,
            "write" => Access::WRITE,
            "read-write" => Access::READ_WRITE,
            _ => return Err(format!("unknown access level `{s}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessMatrix {
    entries: BTreeMap<(OrgRole, ChannelId), Access>,
}

impl Default for AccessMatrix {
    /// Identity: server only. Data: server writes; server and insurer read
    /// everything; manufacturers read their own devices. Risk management:
    /// the risk engine writes; server, emergency services, and insurers read.
    fn default() -> Self {
        use ChannelId::*;
        use OrgRole::*;
        let mut m = Self { entries: BTreeMap::new() };
        m.set(Server, Identity, Access::READ_WRITE);
        m.set(Server, Data, Access::READ_WRITE);
        m.set(Insurer, Data, Access::READ);
        m.set(Manufacturer, Data, Access::READ_OWN);
        m.set(RiskEngine, RiskManagement, Access::WRITE);
        m.set(Server, RiskManagement, Access::READ);
        m.set(EmergencyService, RiskManagement, Access::READ);
        m.set(Insurer, RiskManagement, Access::READ);
        m
    }
}

impl AccessMatrix {
    pub fn get(&self, role: OrgRole, channel: ChannelId) -> Access {
        self.entries.get(&(role, channel)).copied().unwrap_or(Access::NONE)
    }

    pub fn set(&mut self, role: OrgRole, channel: ChannelId, access: Access) {
        self.entries.insert((role, channel), access);
    }

    pub fn can_write(&self, role: OrgRole, channel: ChannelId) -> bool {
        self.get(role, channel).write
    }

    pub fn read_scope(&self, role: OrgRole, channel: ChannelId) -> ReadScope {
        self.get(role, channel).read
    }
}
