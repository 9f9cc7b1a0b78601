//! Web app repository: the registry of product web apps keyed by path prefix.
//!
//! A [`RouteTable`] is an immutable, versioned value. Mutations produce a new
//! table; readers holding an older table never observe the change.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::rbac::PermissionId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    #[default]
    Public,
    Internal,
}

/// Where authentication is invoked for a route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AuthMode {
    /// The routing service authenticates and authorizes before proxying.
    #[default]
    Gateway,
    /// The product web app authenticates; credentials are forwarded untouched.
    Passthrough,
}

impl fmt::Display for Visibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Visibility::Public => "public",
            Visibility::Internal => "internal",
        })
    }
}

impl fmt::Display for AuthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuthMode::Gateway => "gateway",
            AuthMode::Passthrough => "passthrough",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteEntry {
    pub path_prefix: String,
    pub upstream_url: String,
    #[serde(default)]
    pub owning_team: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub visibility: Visibility,
    #[serde(default)]
    pub required_permission: Option<PermissionId>,
    #[serde(default)]
    pub auth_mode: AuthMode,
    /// Remove the matched prefix before forwarding upstream.
    #[serde(default)]
    pub strip_prefix: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RouteError {
    #[error("invalid path prefix {0:?}: {1}")]
    InvalidPath(String, &'static str),
    #[error("invalid upstream url {0:?}: {1}")]
    InvalidUpstreamUrl(String, &'static str),
    #[error("invalid required permission {0:?}")]
    InvalidPermission(String),
    #[error("no route with path prefix {0:?}")]
    NotFound(String),
}

impl RouteEntry {
    /// Builds a public, gateway-authenticated entry with no required permission.
    pub fn new(path_prefix: impl Into<String>, upstream_url: impl Into<String>) -> Self {
        RouteEntry {
            path_prefix: path_prefix.into(),
            upstream_url: upstream_url.into(),
            owning_team: String::new(),
            description: String::new(),
            visibility: Visibility::Public,
            required_permission: None,
            auth_mode: AuthMode::Gateway,
            strip_prefix: false,
        }
    }

    pub fn validate(&self) -> Result<(), RouteError> {
        validate_path_prefix(&self.path_prefix)?;
        validate_upstream_url(&self.upstream_url)?;
        if let Some(perm) = &self.required_permission {
            if !crate::rbac::is_valid_token(perm.as_str()) {
                return Err(RouteError::InvalidPermission(perm.to_string()));
            }
        }
        Ok(())
    }
}

pub fn validate_path_prefix(path: &str) -> Result<(), RouteError> {
    let err = |why| Err(RouteError::InvalidPath(path.to_string(), why));
    if !path.starts_with('/') {
        return err("must begin with '/'");
    }
    if path.contains('?') || path.contains('#') {
        return err("must not contain a query or fragment");
    }
    if path.len() > 1 && path.ends_with('/') {
        return err("must not end with '/'");
    }
    if path.contains("//") {
        return err("must not contain empty segments");
    }
    if path.chars().any(|c| c.is_control() || c == ' ') {
        return err("must not contain whitespace or control characters");
    }
    Ok(())
}

pub fn validate_upstream_url(raw: &str) -> Result<(), RouteError> {
    let err = |why| Err(RouteError::InvalidUpstreamUrl(raw.to_string(), why));
    let Ok(url) = Url::parse(raw) else {
        return err("not an absolute url");
    };
    if url.scheme() != "http" && url.scheme() != "https" {
        return err("scheme must be http or https");
    }
    match url.host_str() {
        Some(h) if !h.is_empty() => {}
        _ => return err("host must not be empty"),
    }
    if url.query().is_some() || url.fragment().is_some() {
        return err("must not contain a query or fragment");
    }
    Ok(())
}

/// Whether `prefix` matches `path` on a whole-segment boundary.
pub fn segment_prefix_matches(prefix: &str, path: &str) -> bool {
    if prefix == "/" {
        return path.starts_with('/');
    }
    match path.strip_prefix(prefix) {
        Some(rest) => rest.is_empty() || rest.starts_with('/'),
        None => false,
    }
}

/// Immutable, versioned set of routes keyed by path prefix.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RouteTable {
    version: u64,
    entries: BTreeMap<String, RouteEntry>,
}

impl RouteTable {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Rebuilds a table from persisted entries, validating each one.
    pub fn from_entries(
        version: u64,
        entries: impl IntoIterator<Item = RouteEntry>,
    ) -> Result<Self, RouteError> {
        let mut map = BTreeMap::new();
        for entry in entries {
            entry.validate()?;
            map.insert(entry.path_prefix.clone(), entry);
        }
        Ok(RouteTable {
            version,
            entries: map,
        })
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries ordered by path prefix.
    pub fn entries(&self) -> impl Iterator<Item = &RouteEntry> {
        self.entries.values()
    }

    pub fn get(&self, path_prefix: &str) -> Option<&RouteEntry> {
        self.entries.get(path_prefix)
    }

    /// Returns a copy with `entry` inserted or replaced, stamped `version`.
    pub fn with_upsert(&self, entry: RouteEntry, version: u64) -> Result<Self, RouteError> {
        entry.validate()?;
        let mut entries = self.entries.clone();
        entries.insert(entry.path_prefix.clone(), entry);
        Ok(RouteTable { version, entries })
    }

    pub fn with_removed(&self, path_prefix: &str, version: u64) -> Result<Self, RouteError> {
        if !self.entries.contains_key(path_prefix) {
            return Err(RouteError::NotFound(path_prefix.to_string()));
        }
        let mut entries = self.entries.clone();
        entries.remove(path_prefix);
        Ok(RouteTable { version, entries })
    }

    /// Longest registered prefix of `path` on `/`-segment boundaries.
    ///
    /// Walks the candidate prefixes of `path` from longest to shortest, so the
    /// cost is proportional to the number of segments rather than the table size.
    pub fn lookup(&self, path: &str) -> Option<&RouteEntry> {
        if !path.starts_with('/') {
            return None;
        }
        let mut candidate = path.trim_end_matches('/');
        loop {
            if candidate.is_empty() {
                return self.entries.get("/");
            }
            if let Some(entry) = self.entries.get(candidate) {
                return Some(entry);
            }
            match candidate.rfind('/') {
                Some(idx) => candidate = &candidate[..idx],
                None => return self.entries.get("/"),
            }
        }
    }
}

/// Free-function form of [`RouteTable::lookup`].
pub fn lookup<'a>(path: &str, table: &'a RouteTable) -> Option<&'a RouteEntry> {
    table.lookup(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row1() -> RouteEntry {
        RouteEntry {
            owning_team: "Team 1".into(),
            description: "Allows internal users to check the revenue data".into(),
            ..RouteEntry::new("/my-product-1", "https://product-webapp-1.mydomain.local")
        }
    }

    fn row2() -> RouteEntry {
        RouteEntry {
            owning_team: "Team 2".into(),
            description: "Allows users to set up reporting dashboards".into(),
            ..RouteEntry::new("/my-product-2", "https://product-webapp-1.mydomain.local")
        }
    }

    #[test]
    fn upsert_and_remove_bump_versions() {
        let t = RouteTable::empty();
        let t1 = t.with_upsert(row1(), 1).unwrap();
        let t2 = t1.with_upsert(row2(), 2).unwrap();
        assert_eq!(t2.version(), 2);
        assert_eq!(t2.len(), 2);
        let t3 = t2.with_removed("/my-product-1", 3).unwrap();
        assert_eq!(t3.version(), 3);
        assert_eq!(t3.len(), 1);
        assert_eq!(
            t3.with_removed("/nope", 4),
            Err(RouteError::NotFound("/nope".into()))
        );
        assert!(matches!(
            RouteTable::empty().with_removed("/", 1),
            Err(RouteError::NotFound(_))
        ));
        // older tables are untouched
        assert_eq!(t2.len(), 2);
    }

    #[test]
    fn duplicate_upsert_replaces() {
        let t = RouteTable::empty().with_upsert(row1(), 1).unwrap();
        let mut changed = row1();
        changed.owning_team = "Team 9".into();
        let t = t.with_upsert(changed, 2).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("/my-product-1").unwrap().owning_team, "Team 9");
    }

    #[test]
    fn path_validation() {
        for bad in ["my-product", "/a/", "/a?x=1", "/a#f", "", "/a//b", "/a b"] {
            assert!(
                matches!(validate_path_prefix(bad), Err(RouteError::InvalidPath(..))),
                "{bad}"
            );
        }
        for good in ["/", "/a", "/my-product-1/reports"] {
            validate_path_prefix(good).unwrap();
        }
        let mut e = row1();
        e.path_prefix = "my-product".into();
        assert!(matches!(e.validate(), Err(RouteError::InvalidPath(..))));
    }

    #[test]
    fn upstream_validation() {
        for bad in [
            "ftp://x",
            "not a url",
            "/relative",
            "http://",
            "file:///etc/passwd",
        ] {
            assert!(
                matches!(
                    validate_upstream_url(bad),
                    Err(RouteError::InvalidUpstreamUrl(..))
                ),
                "{bad}"
            );
        }
        validate_upstream_url("http://127.0.0.1:8080").unwrap();
        validate_upstream_url("https://product-webapp-1.mydomain.local/base").unwrap();
    }

    #[test]
    fn lookup_respects_segment_boundaries() {
        let t = RouteTable::empty()
            .with_upsert(row1(), 1)
            .unwrap()
            .with_upsert(row2(), 2)
            .unwrap();
        assert_eq!(lookup("/my-product-1", &t), Some(&row1()));
        assert_eq!(lookup("/my-product-1/reports/q3", &t), Some(&row1()));
        assert_eq!(lookup("/my-product-1/", &t), Some(&row1()));
        assert_eq!(lookup("/my-product-10", &t), None);
        assert_eq!(lookup("/", &t), None);
        assert_eq!(lookup("/My-Product-1", &t), None);
    }

    #[test]
    fn lookup_prefers_longest_and_falls_back_to_root() {
        let t = RouteTable::empty()
            .with_upsert(RouteEntry::new("/", "http://root.local"), 1)
            .unwrap()
            .with_upsert(RouteEntry::new("/a", "http://a.local"), 2)
            .unwrap()
            .with_upsert(RouteEntry::new("/a/b", "http://ab.local"), 3)
            .unwrap();
        assert_eq!(t.lookup("/a/b/c").unwrap().path_prefix, "/a/b");
        assert_eq!(t.lookup("/a/bc").unwrap().path_prefix, "/a");
        assert_eq!(t.lookup("/x").unwrap().path_prefix, "/");
        assert_eq!(t.lookup("/").unwrap().path_prefix, "/");
    }
}
