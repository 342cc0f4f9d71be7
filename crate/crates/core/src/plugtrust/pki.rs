//! Deterministic certificate hierarchy for simulations: one manufacturer
//! root, one operator local CA, and devices issued beneath it.

use sha2::{Digest, Sha256};

use super::cert::{CertChain, CertLevel, Issued, TrustStore};
use super::crypto::{Ed25519, SignatureScheme};
use super::endpoint::Credentials;

fn key_seed(seed: u64, label: &str, id: u32) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update(seed.to_be_bytes());
    h.update(id.to_be_bytes());
    h.finalize().into()
}

#[derive(Debug, Clone)]
pub struct SimPki<S: SignatureScheme = Ed25519> {
    pub root: Issued<S>,
    pub local: Issued<S>,
    pub validity: (u64, u64),
    seed: u64,
}

impl<S: SignatureScheme> SimPki<S> {
    pub fn new(root_id: u32, local_id: u32, validity: (u64, u64), seed: u64) -> Self {
        let root = Issued::self_signed(CertLevel::Global, root_id, validity, key_seed(seed, "root", root_id));
        let local = root.issue(CertLevel::Local, local_id, validity, key_seed(seed, "local", local_id));
        Self {
            root,
            local,
            validity,
            seed,
        }
    }

    /// Trust store of this operator's network: the root plus its own local CA.
    pub fn trust_store(&self) -> TrustStore {
        TrustStore {
            roots: vec![self.root.cert.clone()],
            authorized_locals: vec![self.local.cert.subject_id],
        }
    }

    /// Another operator's local CA under the same manufacturer root.
    pub fn foreign_local(&self, local_id: u32) -> Issued<S> {
        self.root
            .issue(CertLevel::Local, local_id, self.validity, key_seed(self.seed, "local", local_id))
    }

    pub fn device(&self, device_id: u32) -> Credentials<S> {
        self.device_under(&self.local, device_id)
    }

    pub fn device_under(&self, local: &Issued<S>, device_id: u32) -> Credentials<S> {
        let dev = local.issue(
            CertLevel::Device,
            device_id,
            self.validity,
            key_seed(self.seed, "device", device_id),
        );
        Credentials {
            chain: CertChain(vec![dev.cert, local.cert.clone(), self.root.cert.clone()]),
            signing_key: dev.signing_key,
            trust: self.trust_store(),
        }
    }

    /// A device that forged its own self-signed certificate.
    pub fn self_signed_device(&self, device_id: u32) -> Credentials<S> {
        let forged: Issued<S> = Issued::self_signed(
            CertLevel::Device,
            device_id,
            self.validity,
            key_seed(self.seed, "forged", device_id),
        );
        Credentials {
            chain: CertChain(vec![forged.cert]),
            signing_key: forged.signing_key,
            trust: self.trust_store(),
        }
    }
}
