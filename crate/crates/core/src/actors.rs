//! Actor records and the role grants recorded at genesis.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::keys::{ActorId, PublicKey};
use crate::tx::Role;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ActorRecord {
    pub actor_id: ActorId,
    pub public_key: PublicKey,
    pub roles: BTreeSet<Role>,
    pub display_name: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ActorRegistry {
    actors: BTreeMap<ActorId, ActorRecord>,
}

impl ActorRegistry {
    pub fn insert(&mut self, record: ActorRecord) -> bool {
        self.actors.insert(record.actor_id, record).is_none()
    }

    pub fn get(&self, id: &ActorId) -> Option<&ActorRecord> {
        self.actors.get(id)
    }

    pub fn has_role(&self, id: &ActorId, role: Role) -> bool {
        self.get(id).is_some_and(|a| a.roles.contains(&role))
    }

    pub fn iter(&self) -> impl Iterator<Item = &ActorRecord> {
        self.actors.values()
    }

    pub fn len(&self) -> usize {
        self.actors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actors.is_empty()
    }
}

pub(crate) fn roles_to_string(roles: &BTreeSet<Role>) -> String {
    roles.iter().map(|r| r.as_str()).collect::<Vec<_>>().join(",")
}

pub(crate) fn roles_from_str(s: &str) -> Result<BTreeSet<Role>, String> {
    if s.is_empty() {
        return Ok(BTreeSet::new());
    }
    s.split(',').map(str::parse).collect()
}
