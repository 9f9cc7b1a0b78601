//! Role-based access control with explainable decisions.
//!
//! A user's effective permissions are the union of their organisation's grants
//! and the grants of every role they hold. Page access and action permission
//! both reduce to membership in that set; the [`Decision`] records which
//! organisation or role supplied the grant.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Lower-case token matching `[a-z0-9_.-]+`.
pub fn is_valid_token(s: &str) -> bool {
    !s.is_empty()
        && s.bytes().all(|b| {
            b.is_ascii_lowercase() || b.is_ascii_digit() || matches!(b, b'_' | b'.' | b'-')
        })
}

macro_rules! token_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                $name(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                $name(s)
            }
        }
    };
}

token_id!(PermissionId);
token_id!(RoleId);
token_id!(OrganisationId);
token_id!(UserId);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Permission {
    pub id: PermissionId,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Role {
    pub id: RoleId,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub permissions: BTreeSet<PermissionId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Organisation {
    pub id: OrganisationId,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub permissions: BTreeSet<PermissionId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct User {
    pub id: UserId,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub organisation: Option<OrganisationId>,
    #[serde(default)]
    pub roles: BTreeSet<RoleId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Entity {
    Permission(Permission),
    Role(Role),
    Organisation(Organisation),
    User(User),
}

impl From<Permission> for Entity {
    fn from(p: Permission) -> Self {
        Entity::Permission(p)
    }
}
impl From<Role> for Entity {
    fn from(r: Role) -> Self {
        Entity::Role(r)
    }
}
impl From<Organisation> for Entity {
    fn from(o: Organisation) -> Self {
        Entity::Organisation(o)
    }
}
impl From<User> for Entity {
    fn from(u: User) -> Self {
        Entity::User(u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntityKind {
    Permission,
    Role,
    Organisation,
    User,
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityKind::Permission => "permission",
            EntityKind::Role => "role",
            EntityKind::Organisation => "organisation",
            EntityKind::User => "user",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RbacError {
    #[error("{kind} {from:?} references unknown {target_kind} {target:?}")]
    DanglingReference {
        kind: EntityKind,
        from: String,
        target_kind: EntityKind,
        target: String,
    },
    #[error("{kind} {id:?} is still referenced by {by_kind} {by:?}")]
    StillReferenced {
        kind: EntityKind,
        id: String,
        by_kind: EntityKind,
        by: String,
    },
    #[error("invalid {kind} id {id:?}: must match [a-z0-9_.-]+")]
    InvalidId { kind: EntityKind, id: String },
    #[error("unknown {kind} {id:?}")]
    NotFound { kind: EntityKind, id: String },
    #[error("unknown user {0:?}")]
    UnknownUser(String),
}

/// Why a check came out the way it did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Reason {
    OrgGrant {
        organisation: OrganisationId,
        permission: PermissionId,
    },
    RoleGrant {
        role: RoleId,
        permission: PermissionId,
    },
    NoGrant {
        permission: PermissionId,
    },
    UnknownUser,
}

impl Reason {
    pub fn kind(&self) -> &'static str {
        match self {
            Reason::OrgGrant { .. } => "OrgGrant",
            Reason::RoleGrant { .. } => "RoleGrant",
            Reason::NoGrant { .. } => "NoGrant",
            Reason::UnknownUser => "UnknownUser",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub user: UserId,
    pub permission: PermissionId,
    pub allowed: bool,
    pub reason: Reason,
}

impl Decision {
    /// One-sentence explanation for operators and error bodies.
    pub fn explanation(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.reason {
            Reason::OrgGrant {
                organisation,
                permission,
            } => write!(
                f,
                "allowed: user {} belongs to organisation {} which grants {}",
                self.user, organisation, permission
            ),
            Reason::RoleGrant { role, permission } => write!(
                f,
                "allowed: user {} holds role {} which grants {}",
                self.user, role, permission
            ),
            Reason::NoGrant { permission } => write!(
                f,
                "denied: neither the organisation nor any role of user {} grants {}",
                self.user, permission
            ),
            Reason::UnknownUser => write!(f, "denied: unknown user {}", self.user),
        }
    }
}

/// The full RBAC universe. Cloned on write; shared immutably by readers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Policy {
    permissions: BTreeMap<PermissionId, Permission>,
    roles: BTreeMap<RoleId, Role>,
    organisations: BTreeMap<OrganisationId, Organisation>,
    users: BTreeMap<UserId, User>,
}

fn check_id(kind: EntityKind, id: &str) -> Result<(), RbacError> {
    if is_valid_token(id) {
        Ok(())
    } else {
        Err(RbacError::InvalidId {
            kind,
            id: id.to_string(),
        })
    }
}

impl Policy {
    pub fn new() -> Self {
        Self::default()
    }

    /// Upserts an entity after checking its id and references.
    pub fn define(&mut self, entity: impl Into<Entity>) -> Result<(), RbacError> {
        match entity.into() {
            Entity::Permission(p) => {
                check_id(EntityKind::Permission, p.id.as_str())?;
                self.permissions.insert(p.id.clone(), p);
            }
            Entity::Role(r) => {
                check_id(EntityKind::Role, r.id.as_str())?;
                self.check_permissions(EntityKind::Role, r.id.as_str(), &r.permissions)?;
                self.roles.insert(r.id.clone(), r);
            }
            Entity::Organisation(o) => {
                check_id(EntityKind::Organisation, o.id.as_str())?;
                self.check_permissions(EntityKind::Organisation, o.id.as_str(), &o.permissions)?;
                self.organisations.insert(o.id.clone(), o);
            }
            Entity::User(u) => {
                check_id(EntityKind::User, u.id.as_str())?;
                if let Some(org) = &u.organisation {
                    if !self.organisations.contains_key(org) {
                        return Err(RbacError::DanglingReference {
                            kind: EntityKind::User,
                            from: u.id.to_string(),
                            target_kind: EntityKind::Organisation,
                            target: org.to_string(),
                        });
                    }
                }
                if let Some(role) = u.roles.iter().find(|r| !self.roles.contains_key(*r)) {
                    return Err(RbacError::DanglingReference {
                        kind: EntityKind::User,
                        from: u.id.to_string(),
                        target_kind: EntityKind::Role,
                        target: role.to_string(),
                    });
                }
                self.users.insert(u.id.clone(), u);
            }
        }
        Ok(())
    }

    fn check_permissions(
        &self,
        kind: EntityKind,
        from: &str,
        perms: &BTreeSet<PermissionId>,
    ) -> Result<(), RbacError> {
        match perms.iter().find(|p| !self.permissions.contains_key(*p)) {
            Some(p) => Err(RbacError::DanglingReference {
                kind,
                from: from.to_string(),
                target_kind: EntityKind::Permission,
                target: p.to_string(),
            }),
            None => Ok(()),
        }
    }

    /// Removes an entity. Fails if anything still references it.
    pub fn remove(&mut self, kind: EntityKind, id: &str) -> Result<(), RbacError> {
        let not_found = || RbacError::NotFound {
            kind,
            id: id.to_string(),
        };
        let referenced = |by_kind, by: &str| RbacError::StillReferenced {
            kind,
            id: id.to_string(),
            by_kind,
            by: by.to_string(),
        };
        match kind {
            EntityKind::Permission => {
                let pid = PermissionId::from(id);
                if !self.permissions.contains_key(&pid) {
                    return Err(not_found());
                }
                if let Some(r) = self.roles.values().find(|r| r.permissions.contains(&pid)) {
                    return Err(referenced(EntityKind::Role, r.id.as_str()));
                }
                if let Some(o) = self
                    .organisations
                    .values()
                    .find(|o| o.permissions.contains(&pid))
                {
                    return Err(referenced(EntityKind::Organisation, o.id.as_str()));
                }
                self.permissions.remove(&pid);
            }
            EntityKind::Role => {
                let rid = RoleId::from(id);
                if !self.roles.contains_key(&rid) {
                    return Err(not_found());
                }
                if let Some(u) = self.users.values().find(|u| u.roles.contains(&rid)) {
                    return Err(referenced(EntityKind::User, u.id.as_str()));
                }
                self.roles.remove(&rid);
            }
            EntityKind::Organisation => {
                let oid = OrganisationId::from(id);
                if !self.organisations.contains_key(&oid) {
                    return Err(not_found());
                }
                if let Some(u) = self
                    .users
                    .values()
                    .find(|u| u.organisation.as_ref() == Some(&oid))
                {
                    return Err(referenced(EntityKind::User, u.id.as_str()));
                }
                self.organisations.remove(&oid);
            }
            EntityKind::User => {
                if self.users.remove(&UserId::from(id)).is_none() {
                    return Err(not_found());
                }
            }
        }
        Ok(())
    }

    pub fn permission(&self, id: &str) -> Option<&Permission> {
        self.permissions.get(&PermissionId::from(id))
    }
    pub fn role(&self, id: &str) -> Option<&Role> {
        self.roles.get(&RoleId::from(id))
    }
    pub fn organisation(&self, id: &str) -> Option<&Organisation> {
        self.organisations.get(&OrganisationId::from(id))
    }
    pub fn user(&self, id: &str) -> Option<&User> {
        self.users.get(&UserId::from(id))
    }

    pub fn permissions(&self) -> impl Iterator<Item = &Permission> {
        self.permissions.values()
    }
    pub fn roles(&self) -> impl Iterator<Item = &Role> {
        self.roles.values()
    }
    pub fn organisations(&self) -> impl Iterator<Item = &Organisation> {
        self.organisations.values()
    }
    pub fn users(&self) -> impl Iterator<Item = &User> {
        self.users.values()
    }

    /// Union of the user's organisation grants and role grants.
    pub fn effective_permissions(
        &self,
        user_id: &str,
    ) -> Result<BTreeSet<PermissionId>, RbacError> {
        let user = self
            .user(user_id)
            .ok_or_else(|| RbacError::UnknownUser(user_id.to_string()))?;
        let mut out = BTreeSet::new();
        if let Some(org) = user
            .organisation
            .as_ref()
            .and_then(|o| self.organisations.get(o))
        {
            out.extend(org.permissions.iter().cloned());
        }
        for role in user.roles.iter().filter_map(|r| self.roles.get(r)) {
            out.extend(role.permissions.iter().cloned());
        }
        Ok(out)
    }

    /// Decides whether `user_id` holds `required`. Never fails: unknown users
    /// and undefined permissions are denials.
    pub fn check(&self, user_id: &str, required: &str) -> Decision {
        let permission = PermissionId::from(required);
        let decision = |allowed, reason| Decision {
            user: UserId::from(user_id),
            permission: permission.clone(),
            allowed,
            reason,
        };
        let Some(user) = self.user(user_id) else {
            return decision(false, Reason::UnknownUser);
        };
        if let Some(org) = user
            .organisation
            .as_ref()
            .and_then(|o| self.organisations.get(o))
        {
            if org.permissions.contains(&permission) {
                return decision(
                    true,
                    Reason::OrgGrant {
                        organisation: org.id.clone(),
                        permission: permission.clone(),
                    },
                );
            }
        }
        // BTreeSet iteration gives the lexicographically smallest granting role.
        let granting_role = user
            .roles
            .iter()
            .filter_map(|r| self.roles.get(r))
            .find(|r| r.permissions.contains(&permission));
        match granting_role {
            Some(role) => decision(
                true,
                Reason::RoleGrant {
                    role: role.id.clone(),
                    permission: permission.clone(),
                },
            ),
            None => decision(
                false,
                Reason::NoGrant {
                    permission: permission.clone(),
                },
            ),
        }
    }
}
