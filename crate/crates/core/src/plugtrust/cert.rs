//! Three-level certificate hierarchy: global (manufacturer) CAs issue local
//! (operator/factory) CAs, which issue device certificates.
//!
//! TLV encoding, big-endian:
//!
//! ```text
//! [level:8][subject_id:32][issuer_id:32][not_before:64][not_after:64]
//! [pubkey_len:16][pubkey][sig_len:16][sig]
//! ```
//!
//! The signature covers every byte before `sig_len`.

use std::marker::PhantomData;

use thiserror::Error;

use super::crypto::{Ed25519, SignatureScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum CertLevel {
    Global = 0,
    Local = 1,
    Device = 2,
}

impl CertLevel {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Self::Global),
            1 => Some(Self::Local),
            2 => Some(Self::Device),
            _ => None,
        }
    }

    pub fn next(self) -> Option<Self> {
        match self {
            Self::Global => Some(Self::Local),
            Self::Local => Some(Self::Device),
            Self::Device => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CertError {
    #[error("empty certificate chain")]
    EmptyChain,
    #[error("bad signature on {0:?} certificate")]
    BadSignature(CertLevel),
    #[error("{level:?} certificate not valid at time {now}")]
    Expired { level: CertLevel, now: u64 },
    #[error("root certificate {0} is not in the trust store")]
    UnknownRoot(u32),
    #[error("certificate levels out of order")]
    LevelOrder,
    #[error("{level:?} certificate issued by {issuer}, expected {expected}")]
    IssuerMismatch { level: CertLevel, issuer: u32, expected: u32 },
    #[error("no local certificate authorized for this network (got {0:?})")]
    MissingLocal(Option<u32>),
    #[error("malformed certificate encoding: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub level: CertLevel,
    pub subject_id: u32,
    pub issuer_id: u32,
    pub not_before: u64,
    pub not_after: u64,
    pub public_key: Vec<u8>,
    pub signature: Vec<u8>,
}

impl Certificate {
    /// The signed portion of the encoding.
    pub fn tbs_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(27 + self.public_key.len());
        out.push(self.level as u8);
        out.extend_from_slice(&self.subject_id.to_be_bytes());
        out.extend_from_slice(&self.issuer_id.to_be_bytes());
        out.extend_from_slice(&self.not_before.to_be_bytes());
        out.extend_from_slice(&self.not_after.to_be_bytes());
        out.extend_from_slice(&(self.public_key.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.public_key);
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.tbs_bytes();
        out.extend_from_slice(&(self.signature.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.signature);
        out
    }

    /// Decodes one certificate from the front of `bytes`, returning it and
    /// the number of bytes consumed.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Self, usize), CertError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let level = CertLevel::from_byte(r.u8()?).ok_or_else(|| CertError::Decode("unknown level".into()))?;
        let subject_id = r.u32()?;
        let issuer_id = r.u32()?;
        let not_before = r.u64()?;
        let not_after = r.u64()?;
        let pk_len = r.u16()? as usize;
        let public_key = r.take(pk_len)?.to_vec();
        let sig_len = r.u16()? as usize;
        let signature = r.take(sig_len)?.to_vec();
        Ok((
            Self {
                level,
                subject_id,
                issuer_id,
                not_before,
                not_after,
                public_key,
                signature,
            },
            r.pos,
        ))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CertError> {
        let (cert, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(CertError::Decode(format!("{} trailing bytes", bytes.len() - used)));
        }
        Ok(cert)
    }

    pub fn is_valid_at(&self, now: u64) -> bool {
        self.not_before <= now && now <= self.not_after
    }

    pub fn verify_signature<S: SignatureScheme>(&self, issuer_public_key: &[u8]) -> bool {
        S::verify(issuer_public_key, &self.tbs_bytes(), &self.signature)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CertError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CertError::Decode("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CertError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, CertError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, CertError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, CertError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Certificates ordered device, local, global root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertChain(pub Vec<Certificate>);

impl CertChain {
    pub fn at_level(&self, level: CertLevel) -> Option<&Certificate> {
        self.0.iter().find(|c| c.level == level)
    }
}

/// What a network's verifier accepts: trusted manufacturer roots and the
/// local CAs of the network operator.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrustStore {
    pub roots: Vec<Certificate>,
    pub authorized_locals: Vec<u32>,
}

impl TrustStore {
    pub fn find_root(&self, cert: &Certificate) -> Option<&Certificate> {
        self.roots
            .iter()
            .find(|r| r.subject_id == cert.subject_id && r.public_key == cert.public_key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifiedIdentity {
    pub device_id: u32,
    pub local_id: u32,
    pub global_id: u32,
    pub public_key: Vec<u8>,
}

fn check_validity(cert: &Certificate, now: u64) -> Result<(), CertError> {
    if cert.is_valid_at(now) {
        Ok(())
    } else {
        Err(CertError::Expired { level: cert.level, now })
    }
}

/// Global-level check: the presented root must be a trusted, valid,
/// correctly self-signed global CA.
pub fn verify_global<S: SignatureScheme>(cert: &Certificate, trust: &TrustStore, now: u64) -> Result<(), CertError> {
    if trust.find_root(cert).is_none() {
        return Err(CertError::UnknownRoot(cert.subject_id));
    }
    if cert.level != CertLevel::Global {
        return Err(CertError::LevelOrder);
    }
    if !cert.verify_signature::<S>(&cert.public_key) {
        return Err(CertError::BadSignature(CertLevel::Global));
    }
    check_validity(cert, now)
}

/// Local-level check against an already verified global certificate.
pub fn verify_local<S: SignatureScheme>(
    local: &Certificate,
    global: &Certificate,
    trust: &TrustStore,
    now: u64,
) -> Result<(), CertError> {
    if local.level != CertLevel::Local {
        return Err(if local.level == CertLevel::Device {
            CertError::MissingLocal(None)
        } else {
            CertError::LevelOrder
        });
    }
    verify_issued::<S>(local, global, now)?;
    if !trust.authorized_locals.contains(&local.subject_id) {
        return Err(CertError::MissingLocal(Some(local.subject_id)));
    }
    Ok(())
}

/// Device-level check against an already verified local certificate.
pub fn verify_device<S: SignatureScheme>(device: &Certificate, local: &Certificate, now: u64) -> Result<(), CertError> {
    if device.level != CertLevel::Device {
        return Err(CertError::LevelOrder);
    }
    verify_issued::<S>(device, local, now)
}

fn verify_issued<S: SignatureScheme>(cert: &Certificate, issuer: &Certificate, now: u64) -> Result<(), CertError> {
    if cert.issuer_id != issuer.subject_id {
        return Err(CertError::IssuerMismatch {
            level: cert.level,
            issuer: cert.issuer_id,
            expected: issuer.subject_id,
        });
    }
    if !cert.verify_signature::<S>(&issuer.public_key) {
        return Err(CertError::BadSignature(cert.level));
    }
    check_validity(cert, now)
}

/// Verifies a complete chain top-down: root, then local, then device.
pub fn verify_chain<S: SignatureScheme>(
    chain: &CertChain,
    trust: &TrustStore,
    now: u64,
) -> Result<VerifiedIdentity, CertError> {
    let certs = &chain.0;
    let root = certs.last().ok_or(CertError::EmptyChain)?;
    verify_global::<S>(root, trust, now)?;
    match certs.len() {
        1 => return Err(CertError::MissingLocal(None)),
        2 if certs[0].level == CertLevel::Device => return Err(CertError::MissingLocal(None)),
        3 => {}
        _ => return Err(CertError::LevelOrder),
    }
    let (device, local) = (&certs[0], &certs[1]);
    verify_local::<S>(local, root, trust, now)?;
    verify_device::<S>(device, local, now)?;
    Ok(VerifiedIdentity {
        device_id: device.subject_id,
        local_id: local.subject_id,
        global_id: root.subject_id,
        public_key: device.public_key.clone(),
    })
}

/// A certificate together with the private key of its subject.
#[derive(Clone)]
pub struct Issued<S: SignatureScheme = Ed25519> {
    pub cert: Certificate,
    pub signing_key: S::SigningKey,
    _scheme: PhantomData<S>,
}

impl<S: SignatureScheme> std::fmt::Debug for Issued<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Issued").field("cert", &self.cert).finish_non_exhaustive()
    }
}

impl<S: SignatureScheme> Issued<S> {
    /// A self-signed certificate (a global root, or an attacker's forgery).
    pub fn self_signed(level: CertLevel, subject_id: u32, validity: (u64, u64), seed: [u8; 32]) -> Self {
        let signing_key = S::from_seed(seed);
        let mut cert = Certificate {
            level,
            subject_id,
            issuer_id: subject_id,
            not_before: validity.0,
            not_after: validity.1,
            public_key: S::public_key(&signing_key),
            signature: Vec::new(),
        };
        cert.signature = S::sign(&signing_key, &cert.tbs_bytes());
        Self {
            cert,
            signing_key,
            _scheme: PhantomData,
        }
    }

    pub fn issue(&self, level: CertLevel, subject_id: u32, validity: (u64, u64), seed: [u8; 32]) -> Issued<S> {
        let signing_key = S::from_seed(seed);
        let mut cert = Certificate {
            level,
            subject_id,
            issuer_id: self.cert.subject_id,
            not_before: validity.0,
            not_after: validity.1,
            public_key: S::public_key(&signing_key),
            signature: Vec::new(),
        };
        cert.signature = S::sign(&self.signing_key, &cert.tbs_bytes());
        Issued {
            cert,
            signing_key,
            _scheme: PhantomData,
        }
    }
}
