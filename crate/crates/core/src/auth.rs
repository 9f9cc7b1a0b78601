//! Credentials and signed tokens.
//!
//! Passwords are stored as PBKDF2-HMAC-SHA256 hashes. Tokens are compact JWS
//! strings signed with HS256 under a single platform secret.

use std::collections::BTreeMap;
use std::fmt;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hmac::{Hmac, Mac};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use subtle::ConstantTimeEq;

use crate::rbac::{OrganisationId, Policy, RoleId, UserId};

pub const ISSUER: &str = "saas-platform-auth";
pub const MIN_PASSWORD_LEN: usize = 8;
pub const MIN_SECRET_LEN: usize = 16;
pub const PBKDF2_ITERATIONS: u32 = 100_000;
pub const SALT_LEN: usize = 16;
const HASH_LEN: usize = 32;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuthError {
    #[error("password must be at least {MIN_PASSWORD_LEN} characters")]
    WeakPassword,
    #[error("username must not be empty")]
    EmptyUsername,
    #[error("invalid username or password")]
    InvalidCredentials,
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("token ttl must be positive")]
    InvalidTtl,
    #[error("token secret must be at least {MIN_SECRET_LEN} characters")]
    WeakSecret,
    #[error("credential record is corrupt: {0}")]
    CorruptCredential(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TokenError {
    #[error("token is malformed")]
    Malformed,
    #[error("token signature does not verify")]
    BadSignature,
    #[error("token has expired")]
    Expired,
    #[error("token issuer is not accepted")]
    WrongIssuer,
    #[error("token algorithm is not accepted")]
    AlgRejected,
}

impl TokenError {
    pub fn code(&self) -> &'static str {
        match self {
            TokenError::Malformed => "malformed",
            TokenError::BadSignature => "bad_signature",
            TokenError::Expired => "expired",
            TokenError::WrongIssuer => "wrong_issuer",
            TokenError::AlgRejected => "alg_rejected",
        }
    }
}

/// Stored password verifier. Never holds the clear-text password.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Credential {
    pub username: String,
    #[serde(with = "hex_bytes")]
    pub password_hash: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub salt: Vec<u8>,
    pub iterations: u32,
    pub user_id: UserId,
}

impl fmt::Debug for Credential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Credential")
            .field("username", &self.username)
            .field("iterations", &self.iterations)
            .field("user_id", &self.user_id)
            .finish_non_exhaustive()
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

pub fn derive_key(password: &[u8], salt: &[u8], iterations: u32) -> [u8; HASH_LEN] {
    let mut out = [0u8; HASH_LEN];
    pbkdf2::pbkdf2_hmac::<Sha256>(password, salt, iterations, &mut out);
    out
}

impl Credential {
    /// Hashes `password` under a fresh random salt.
    pub fn new(username: &str, password: &str, user_id: UserId) -> Result<Self, AuthError> {
        if username.is_empty() {
            return Err(AuthError::EmptyUsername);
        }
        if password.chars().count() < MIN_PASSWORD_LEN {
            return Err(AuthError::WeakPassword);
        }
        let mut salt = vec![0u8; SALT_LEN];
        rand::thread_rng().fill_bytes(&mut salt);
        let hash = derive_key(password.as_bytes(), &salt, PBKDF2_ITERATIONS);
        Ok(Credential {
            username: username.to_string(),
            password_hash: hash.to_vec(),
            salt,
            iterations: PBKDF2_ITERATIONS,
            user_id,
        })
    }

    pub fn validate(&self) -> Result<(), AuthError> {
        if self.username.is_empty() {
            return Err(AuthError::EmptyUsername);
        }
        if self.salt.len() != SALT_LEN {
            return Err(AuthError::CorruptCredential("salt must be 16 bytes"));
        }
        if self.password_hash.len() != HASH_LEN {
            return Err(AuthError::CorruptCredential("hash must be 32 bytes"));
        }
        if self.iterations < PBKDF2_ITERATIONS {
            return Err(AuthError::CorruptCredential(
                "iteration count below minimum",
            ));
        }
        Ok(())
    }

    pub fn verify_password(&self, password: &str) -> bool {
        let derived = derive_key(password.as_bytes(), &self.salt, self.iterations);
        derived.ct_eq(&self.password_hash).into()
    }
}

/// Credentials keyed by username.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CredentialStore {
    by_username: BTreeMap<String, Credential>,
}

impl CredentialStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = Credential>) -> Result<Self, AuthError> {
        let mut by_username = BTreeMap::new();
        for c in records {
            c.validate()?;
            by_username.insert(c.username.clone(), c);
        }
        Ok(CredentialStore { by_username })
    }

    pub fn set(
        &mut self,
        username: &str,
        password: &str,
        user_id: UserId,
    ) -> Result<(), AuthError> {
        let cred = Credential::new(username, password, user_id)?;
        self.by_username.insert(username.to_string(), cred);
        Ok(())
    }

    pub fn insert(&mut self, cred: Credential) {
        self.by_username.insert(cred.username.clone(), cred);
    }

    pub fn remove(&mut self, username: &str) -> Option<Credential> {
        self.by_username.remove(username)
    }

    pub fn get(&self, username: &str) -> Option<&Credential> {
        self.by_username.get(username)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Credential> {
        self.by_username.values()
    }

    pub fn len(&self) -> usize {
        self.by_username.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_username.is_empty()
    }

    /// Checks a username/password pair. Unknown users still pay for a key
    /// derivation so both failure cases take comparable time.
    pub fn authenticate(&self, username: &str, password: &str) -> Result<&UserId, AuthError> {
        match self.by_username.get(username) {
            Some(cred) if cred.verify_password(password) => Ok(&cred.user_id),
            Some(_) => Err(AuthError::InvalidCredentials),
            None => {
                let _ = derive_key(password.as_bytes(), &[0u8; SALT_LEN], PBKDF2_ITERATIONS);
                Err(AuthError::InvalidCredentials)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenHeader {
    pub alg: String,
    pub typ: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenClaims {
    pub sub: UserId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub org: Option<OrganisationId>,
    #[serde(default)]
    pub roles: Vec<RoleId>,
    pub iat: u64,
    pub exp: u64,
    pub iss: String,
}

/// Verified user context carried across services.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Identity {
    pub user_id: UserId,
    pub organisation: Option<OrganisationId>,
    pub roles: Vec<RoleId>,
    pub expires_at: u64,
}

/// Signs and verifies HS256 compact tokens.
#[derive(Clone)]
pub struct TokenSigner {
    secret: Vec<u8>,
}

impl fmt::Debug for TokenSigner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("TokenSigner { .. }")
    }
}

impl TokenSigner {
    pub fn new(secret: &str) -> Result<Self, AuthError> {
        if secret.chars().count() < MIN_SECRET_LEN {
            return Err(AuthError::WeakSecret);
        }
        Ok(TokenSigner {
            secret: secret.as_bytes().to_vec(),
        })
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.secret).expect("hmac accepts any key length")
    }

    pub fn sign(&self, claims: &TokenClaims) -> String {
        let header = TokenHeader {
            alg: "HS256".into(),
            typ: "JWT".into(),
        };
        let header =
            URL_SAFE_NO_PAD.encode(serde_json::to_vec(&header).expect("header serializes"));
        let payload = URL_SAFE_NO_PAD.encode(serde_json::to_vec(claims).expect("claims serialize"));
        let signing_input = format!("{header}.{payload}");
        let mut mac = self.mac();
        mac.update(signing_input.as_bytes());
        let sig = URL_SAFE_NO_PAD.encode(mac.finalize().into_bytes());
        format!("{signing_input}.{sig}")
    }

    /// Issues a token for a user known to `policy`, copying their current
    /// organisation and roles into the claims.
    pub fn issue(
        &self,
        policy: &Policy,
        user_id: &str,
        ttl_seconds: u64,
        now: u64,
    ) -> Result<String, AuthError> {
        if ttl_seconds == 0 {
            return Err(AuthError::InvalidTtl);
        }
        let user = policy
            .user(user_id)
            .ok_or_else(|| AuthError::UnknownUser(user_id.to_string()))?;
        let claims = TokenClaims {
            sub: user.id.clone(),
            org: user.organisation.clone(),
            roles: user.roles.iter().cloned().collect(),
            iat: now,
            exp: now.saturating_add(ttl_seconds),
            iss: ISSUER.to_string(),
        };
        Ok(self.sign(&claims))
    }

    /// Validates structure, algorithm, signature, issuer and expiry, in that order.
    pub fn verify(&self, token: &str, now: u64) -> Result<Identity, TokenError> {
        let claims = self.verify_claims(token, now)?;
        Ok(Identity {
            user_id: claims.sub,
            organisation: claims.org,
            roles: claims.roles,
            expires_at: claims.exp,
        })
    }

    pub fn verify_claims(&self, token: &str, now: u64) -> Result<TokenClaims, TokenError> {
        let mut parts = token.split('.');
        let (Some(h), Some(p), Some(s), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(TokenError::Malformed);
        };
        let header_bytes = URL_SAFE_NO_PAD
            .decode(h)
            .map_err(|_| TokenError::Malformed)?;
        let payload_bytes = URL_SAFE_NO_PAD
            .decode(p)
            .map_err(|_| TokenError::Malformed)?;
        let sig = URL_SAFE_NO_PAD
            .decode(s)
            .map_err(|_| TokenError::Malformed)?;
        let header: serde_json::Value =
            serde_json::from_slice(&header_bytes).map_err(|_| TokenError::Malformed)?;
        match header.get("alg").and_then(|a| a.as_str()) {
            Some("HS256") => {}
            Some(_) => return Err(TokenError::AlgRejected),
            None => return Err(TokenError::Malformed),
        }
        let mut mac = self.mac();
        mac.update(h.as_bytes());
        mac.update(b".");
        mac.update(p.as_bytes());
        mac.verify_slice(&sig)
            .map_err(|_| TokenError::BadSignature)?;
        let claims: TokenClaims =
            serde_json::from_slice(&payload_bytes).map_err(|_| TokenError::Malformed)?;
        if claims.sub.as_str().is_empty() || claims.exp <= claims.iat {
            return Err(TokenError::Malformed);
        }
        if claims.iss != ISSUER {
            return Err(TokenError::WrongIssuer);
        }
        if now >= claims.exp {
            return Err(TokenError::Expired);
        }
        Ok(claims)
    }
}

/// Checks credentials and issues a token on success. Every failure, including
/// a credential pointing at a since-deleted user, is `InvalidCredentials`.
pub fn login(
    credentials: &CredentialStore,
    policy: &Policy,
    signer: &TokenSigner,
    username: &str,
    password: &str,
    ttl_seconds: u64,
    now: u64,
) -> Result<String, AuthError> {
    let user_id = credentials.authenticate(username, password)?;
    signer
        .issue(policy, user_id.as_str(), ttl_seconds, now)
        .map_err(|_| AuthError::InvalidCredentials)
}
