//! Actors, their roles and the ed25519 keys that back the permissioning.

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::LedgerError;

/// Opaque, non-empty actor identifier.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct ActorId(String);

impl ActorId {
    pub fn new(id: impl Into<String>) -> Result<Self, LedgerError> {
        let id = id.into();
        if id.is_empty() {
            return Err(LedgerError::Encoding("actor id must be non-empty".into()));
        }
        Ok(ActorId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl<'de> Deserialize<'de> for ActorId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        ActorId::new(String::deserialize(deserializer)?).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Institution,
    Patient,
    Service,
}

/// Verification key, hex on the wire.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PublicKey(VerifyingKey);

impl PublicKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LedgerError> {
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| LedgerError::Key("public key must be 32 bytes".into()))?;
        VerifyingKey::from_bytes(&arr)
            .map(PublicKey)
            .map_err(|e| LedgerError::Key(e.to_string()))
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn verify(&self, message: &[u8], signature: &Signature) -> bool {
        let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
        self.0.verify(message, &sig).is_ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", &hex::encode(self.to_bytes())[..12])
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&hex::encode(self.to_bytes()))
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let raw = hex::decode(s).map_err(serde::de::Error::custom)?;
        PublicKey::from_bytes(&raw).map_err(serde::de::Error::custom)
    }
}

/// A detached 64-byte ed25519 signature, hex on the wire.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; 64]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}…)", &hex::encode(self.0)[..12])
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let raw = hex::decode(s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 64] = raw
            .try_into()
            .map_err(|_| serde::de::Error::custom("signature must be 64 bytes"))?;
        Ok(Signature(arr))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Identity {
    pub actor_id: ActorId,
    pub role: Role,
    pub public_key: PublicKey,
}

/// An identity together with its private signing key.
#[derive(Clone)]
pub struct Credential {
    identity: Identity,
    key: SigningKey,
}

impl Credential {
    pub fn generate(actor_id: ActorId, role: Role) -> Self {
        let key = SigningKey::generate(&mut rand::rngs::OsRng);
        Self::from_signing_key(actor_id, role, key)
    }

    /// Rebuilds a credential from a raw 32-byte secret.
    pub fn from_secret(actor_id: ActorId, role: Role, secret: &[u8]) -> Result<Self, LedgerError> {
        let arr: [u8; 32] = secret
            .try_into()
            .map_err(|_| LedgerError::Key(format!("secret key must be 32 bytes, got {}", secret.len())))?;
        Ok(Self::from_signing_key(actor_id, role, SigningKey::from_bytes(&arr)))
    }

    fn from_signing_key(actor_id: ActorId, role: Role, key: SigningKey) -> Self {
        let identity = Identity {
            actor_id,
            role,
            public_key: PublicKey(key.verifying_key()),
        };
        Credential { identity, key }
    }

    pub fn identity(&self) -> &Identity {
        &self.identity
    }

    pub fn actor_id(&self) -> &ActorId {
        &self.identity.actor_id
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.key.to_bytes()
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.key.sign(message).to_bytes())
    }
}

impl fmt::Debug for Credential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Credential")
            .field("identity", &self.identity)
            .finish_non_exhaustive()
    }
}

/// On-disk form of a [`Credential`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CredentialFile {
    pub actor_id: ActorId,
    pub role: Role,
    pub secret_key: String,
}

impl From<&Credential> for CredentialFile {
    fn from(c: &Credential) -> Self {
        CredentialFile {
            actor_id: c.identity.actor_id.clone(),
            role: c.identity.role,
            secret_key: hex::encode(c.secret_bytes()),
        }
    }
}

impl TryFrom<CredentialFile> for Credential {
    type Error = LedgerError;

    fn try_from(f: CredentialFile) -> Result<Self, Self::Error> {
        let raw = hex::decode(&f.secret_key).map_err(|e| LedgerError::Key(e.to_string()))?;
        Credential::from_secret(f.actor_id, f.role, &raw)
    }
}

impl Serialize for Credential {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        CredentialFile::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Credential {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let file = CredentialFile::deserialize(deserializer)?;
        Credential::try_from(file).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_actor_id_rejected() {
        assert!(ActorId::new("").is_err());
        assert!(serde_json::from_str::<ActorId>("\"\"").is_err());
    }

    #[test]
    fn credential_file_roundtrip_keeps_key() {
        let c = Credential::generate(ActorId::new("ES").unwrap(), Role::Institution);
        let json = serde_json::to_string(&c).unwrap();
        let back: Credential = serde_json::from_str(&json).unwrap();
        assert_eq!(back.identity(), c.identity());
        let sig = back.sign(b"m");
        assert!(c.identity().public_key.verify(b"m", &sig));
    }

    #[test]
    fn malformed_secret_is_key_error() {
        let err = Credential::from_secret(ActorId::new("a").unwrap(), Role::Service, &[1, 2, 3]).unwrap_err();
        assert!(matches!(err, LedgerError::Key(_)));
    }
}
