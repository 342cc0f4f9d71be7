//! Handshake wire messages: `[msg_type:8][session_id:32][body...]`.
//!
//! | type | name      | body                                                            |
//! |------|-----------|-----------------------------------------------------------------|
//! | 0x01 | GlobalCert| certificate TLV                                                 |
//! | 0x02 | LocalCert | certificate TLV                                                 |
//! | 0x03 | DeviceCert| certificate TLV                                                 |
//! | 0x10 | Hello     | nonce_ed:128                                                    |
//! | 0x11 | ApShare   | nonce_ed:128 nonce_ap:128 share_len:16 share sig_len:16 sig     |
//! | 0x12 | EdShare   | share_len:16 share sig_len:16 sig                               |
//! | 0x13 | Confirm   | tag:128                                                         |
//!
//! Certificate messages carry session id 0.

use super::cert::{CertLevel, Certificate};

pub const MSG_GLOBAL_CERT: u8 = 0x01;
pub const MSG_LOCAL_CERT: u8 = 0x02;
pub const MSG_DEVICE_CERT: u8 = 0x03;
pub const MSG_HELLO: u8 = 0x10;
pub const MSG_AP_SHARE: u8 = 0x11;
pub const MSG_ED_SHARE: u8 = 0x12;
pub const MSG_CONFIRM: u8 = 0x13;

pub type Nonce = [u8; 16];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    Cert(CertLevel, Certificate),
    Hello { nonce_ed: Nonce },
    ApShare {
        nonce_ed: Nonce,
        nonce_ap: Nonce,
        share: Vec<u8>,
        signature: Vec<u8>,
    },
    EdShare { share: Vec<u8>, signature: Vec<u8> },
    Confirm { tag: [u8; 16] },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub session_id: u32,
    pub body: Body,
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        match &self.body {
            Body::Cert(CertLevel::Global, _) => MSG_GLOBAL_CERT,
            Body::Cert(CertLevel::Local, _) => MSG_LOCAL_CERT,
            Body::Cert(CertLevel::Device, _) => MSG_DEVICE_CERT,
            Body::Hello { .. } => MSG_HELLO,
            Body::ApShare { .. } => MSG_AP_SHARE,
            Body::EdShare { .. } => MSG_ED_SHARE,
            Body::Confirm { .. } => MSG_CONFIRM,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![self.msg_type()];
        out.extend_from_slice(&self.session_id.to_be_bytes());
        match &self.body {
            Body::Cert(_, cert) => out.extend_from_slice(&cert.to_bytes()),
            Body::Hello { nonce_ed } => out.extend_from_slice(nonce_ed),
            Body::ApShare {
                nonce_ed,
                nonce_ap,
                share,
                signature,
            } => {
                out.extend_from_slice(nonce_ed);
                out.extend_from_slice(nonce_ap);
                put_var(&mut out, share);
                put_var(&mut out, signature);
            }
            Body::EdShare { share, signature } => {
                put_var(&mut out, share);
                put_var(&mut out, signature);
            }
            Body::Confirm { tag } => out.extend_from_slice(tag),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < 5 {
            return Err("message shorter than its header".into());
        }
        let msg_type = bytes[0];
        let session_id = u32::from_be_bytes(bytes[1..5].try_into().expect("4 bytes"));
        let mut body = Cursor { buf: &bytes[5..], pos: 0 };
        let decoded = match msg_type {
            MSG_GLOBAL_CERT | MSG_LOCAL_CERT | MSG_DEVICE_CERT => {
                let level = CertLevel::from_byte(msg_type - 1).expect("type maps to a level");
                let cert = Certificate::from_bytes(body.rest()).map_err(|e| e.to_string())?;
                Body::Cert(level, cert)
            }
            MSG_HELLO => Body::Hello {
                nonce_ed: body.array()?,
            },
            MSG_AP_SHARE => Body::ApShare {
                nonce_ed: body.array()?,
                nonce_ap: body.array()?,
                share: body.var()?,
                signature: body.var()?,
            },
            MSG_ED_SHARE => Body::EdShare {
                share: body.var()?,
                signature: body.var()?,
            },
            MSG_CONFIRM => Body::Confirm { tag: body.array()? },
            t => return Err(format!("unknown message type {t:#04x}")),
        };
        if !body.done() {
            return Err("trailing bytes".into());
        }
        Ok(Self {
            session_id,
            body: decoded,
        })
    }
}

fn put_var(out: &mut Vec<u8>, data: &[u8]) {
    out.extend_from_slice(&(data.len() as u16).to_be_bytes());
    out.extend_from_slice(data);
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if self.buf.len() - self.pos < n {
            return Err("truncated message".into());
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("length taken"))
    }

    fn var(&mut self) -> Result<Vec<u8>, String> {
        let len = u16::from_be_bytes(self.array()?) as usize;
        Ok(self.take(len)?.to_vec())
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_share_layout() {
        let m = Message {
            session_id: 0xdead_beef,
            body: Body::ApShare {
                nonce_ed: [1; 16],
                nonce_ap: [2; 16],
                share: vec![3; 32],
                signature: vec![4; 64],
            },
        };
        let b = m.encode();
        assert_eq!(&b[..5], &[0x11, 0xde, 0xad, 0xbe, 0xef]);
        assert_eq!(&b[37..39], &[0, 32]);
        assert_eq!(b.len(), 5 + 32 + 2 + 32 + 2 + 64);
        assert_eq!(Message::decode(&b).unwrap(), m);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Message::decode(&[0x10, 0, 0, 0, 1, 9]).is_err());
        assert!(Message::decode(&[0x77, 0, 0, 0, 1]).is_err());
        let mut hello = Message {
            session_id: 1,
            body: Body::Hello { nonce_ed: [0; 16] },
        }
        .encode();
        hello.push(0);
        assert!(Message::decode(&hello).is_err());
    }
}
