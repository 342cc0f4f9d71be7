//! Plug&Trust: certificate-based initial authentication of a new device and
//! the per-session handshake that establishes URLLC session keys.

pub mod cert;
pub mod crypto;
pub mod endpoint;
pub mod message;
pub mod pki;
pub mod rekey;
pub mod transport;

pub use cert::{verify_chain, CertChain, CertError, CertLevel, Certificate, Issued, TrustStore, VerifiedIdentity};
pub use crypto::{Ed25519, KeyAgreement, SignatureScheme, X25519};
pub use endpoint::{AbortReason, Credentials, Endpoint, PairingRecord, Phase, Role};
pub use pki::SimPki;
pub use rekey::{KeyUpdater, RekeyResult, SignalingComparison};
pub use transport::{exchange, initial_auth, session_handshake, LinkEvent, SimLink, Transport};

#[cfg(test)]
mod tests;
