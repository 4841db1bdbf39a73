//! Event blocks, their canonical encoding and the simulated signer.
//!
//! The canonical header encoding fixes the field order
//! `epoch, seq, creator, parents, lamport, creation_time, tx_hash,
//! gas_power_left, gas_power_used`. Integers are big-endian fixed width,
//! lists carry a `u32` length prefix. The event id is SHA-256 over that
//! header. The frame number and the signature are not part of the id.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{hex_bytes_list, EventId, Hash32, Nanos, ValidatorId};

/// Simulated signature: the signer id next to the signed digest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub signer: ValidatorId,
    pub digest: Hash32,
}

impl Signature {
    pub const LEN: usize = 36;

    pub fn to_bytes(&self) -> [u8; Self::LEN] {
        let mut out = [0u8; Self::LEN];
        out[..4].copy_from_slice(&self.signer.0.to_be_bytes());
        out[4..].copy_from_slice(self.digest.as_bytes());
        out
    }
}

/// Produces signatures over event ids.
pub trait Signer {
    fn sign(&self, creator: ValidatorId, id: &EventId) -> Signature;
}

/// Checks signatures produced by a matching [`Signer`].
pub trait Verifier {
    fn verify(&self, creator: ValidatorId, id: &EventId, sig: &Signature) -> bool;
}

/// Deterministic stand-in for ECDSA: `sig = creator || digest`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimSigner;

impl Signer for SimSigner {
    fn sign(&self, creator: ValidatorId, id: &EventId) -> Signature {
        Signature {
            signer: creator,
            digest: id.0,
        }
    }
}

impl Verifier for SimSigner {
    fn verify(&self, creator: ValidatorId, id: &EventId, sig: &Signature) -> bool {
        sig.signer == creator && sig.digest == id.0
    }
}

/// One DAG vertex.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub epoch: u64,
    pub seq: u64,
    /// Frame declared by the creator. Receivers recompute it.
    pub frame: u64,
    pub creator: ValidatorId,
    /// First element is the self-parent whenever `seq > 1`.
    pub parents: Vec<EventId>,
    pub lamport: u64,
    pub creation_time: Nanos,
    pub gas_power_left: u64,
    pub gas_power_used: u64,
    pub tx_hash: Hash32,
    #[serde(with = "hex_bytes_list")]
    pub transactions: Vec<Vec<u8>>,
    pub sig: Signature,
}

/// Digest over an ordered transaction list (each entry length-prefixed).
pub fn transactions_digest(txs: &[Vec<u8>]) -> Hash32 {
    let mut buf = Vec::with_capacity(4 + txs.iter().map(|t| t.len() + 4).sum::<usize>());
    buf.extend_from_slice(&(txs.len() as u32).to_be_bytes());
    for tx in txs {
        buf.extend_from_slice(&(tx.len() as u32).to_be_bytes());
        buf.extend_from_slice(tx);
    }
    Hash32::digest_of(&[&buf])
}

impl Event {
    /// Fields that go into the id, in canonical order.
    pub fn canonical_header(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(96 + 32 * self.parents.len());
        buf.extend_from_slice(&self.epoch.to_be_bytes());
        buf.extend_from_slice(&self.seq.to_be_bytes());
        buf.extend_from_slice(&self.creator.0.to_be_bytes());
        buf.extend_from_slice(&(self.parents.len() as u32).to_be_bytes());
        for p in &self.parents {
            buf.extend_from_slice(p.as_bytes());
        }
        buf.extend_from_slice(&self.lamport.to_be_bytes());
        buf.extend_from_slice(&self.creation_time.to_be_bytes());
        buf.extend_from_slice(self.tx_hash.as_bytes());
        buf.extend_from_slice(&self.gas_power_left.to_be_bytes());
        buf.extend_from_slice(&self.gas_power_used.to_be_bytes());
        buf
    }

    pub fn id(&self) -> EventId {
        EventId(Hash32::digest_of(&[&self.canonical_header()]))
    }

    pub fn self_parent(&self) -> Option<&EventId> {
        if self.seq > 1 {
            self.parents.first()
        } else {
            None
        }
    }

    /// Full wire encoding: header, frame, transactions, signature.
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = self.canonical_header();
        buf.extend_from_slice(&self.frame.to_be_bytes());
        buf.extend_from_slice(&(self.transactions.len() as u32).to_be_bytes());
        for tx in &self.transactions {
            buf.extend_from_slice(&(tx.len() as u32).to_be_bytes());
            buf.extend_from_slice(tx);
        }
        buf.extend_from_slice(&self.sig.to_bytes());
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Event, DecodeError> {
        let mut r = Reader { bytes, pos: 0 };
        let epoch = r.u64()?;
        let seq = r.u64()?;
        let creator = ValidatorId(r.u32()?);
        let n_parents = r.u32()? as usize;
        let mut parents = Vec::with_capacity(n_parents.min(64));
        for _ in 0..n_parents {
            parents.push(EventId(r.hash()?));
        }
        let lamport = r.u64()?;
        let creation_time = r.u64()? as i64;
        let tx_hash = r.hash()?;
        let gas_power_left = r.u64()?;
        let gas_power_used = r.u64()?;
        let frame = r.u64()?;
        let n_tx = r.u32()? as usize;
        let mut transactions = Vec::with_capacity(n_tx.min(1024));
        for _ in 0..n_tx {
            let len = r.u32()? as usize;
            transactions.push(r.take(len)?.to_vec());
        }
        let signer = ValidatorId(r.u32()?);
        let digest = r.hash()?;
        if r.pos != bytes.len() {
            return Err(DecodeError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Event {
            epoch,
            seq,
            frame,
            creator,
            parents,
            lamport,
            creation_time,
            gas_power_left,
            gas_power_used,
            tx_hash,
            transactions,
            sig: Signature { signer, digest },
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("event encoding truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after event encoding")]
    TrailingBytes(usize),
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(DecodeError::Truncated(self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn hash(&mut self) -> Result<Hash32, DecodeError> {
        Ok(Hash32(self.take(32)?.try_into().unwrap()))
    }
}

/// Assembles a valid event from its intended contents.
///
/// Lamport time and seq are supplied by the caller (they depend on the
/// parents' stored values); `build` fills the tx hash, id and signature.
#[derive(Debug, Clone)]
pub struct EventBuilder {
    event: Event,
}

impl EventBuilder {
    pub fn new(creator: ValidatorId, epoch: u64, seq: u64) -> Self {
        EventBuilder {
            event: Event {
                epoch,
                seq,
                frame: 0,
                creator,
                parents: Vec::new(),
                lamport: 1,
                creation_time: 0,
                gas_power_left: 0,
                gas_power_used: 0,
                tx_hash: Hash32::ZERO,
                transactions: Vec::new(),
                sig: Signature {
                    signer: creator,
                    digest: Hash32::ZERO,
                },
            },
        }
    }

    pub fn parents(mut self, parents: Vec<EventId>) -> Self {
        self.event.parents = parents;
        self
    }

    pub fn lamport(mut self, lamport: u64) -> Self {
        self.event.lamport = lamport;
        self
    }

    pub fn creation_time(mut self, t: Nanos) -> Self {
        self.event.creation_time = t;
        self
    }

    pub fn frame(mut self, frame: u64) -> Self {
        self.event.frame = frame;
        self
    }

    pub fn gas(mut self, left: u64, used: u64) -> Self {
        self.event.gas_power_left = left;
        self.event.gas_power_used = used;
        self
    }

    pub fn transactions(mut self, txs: Vec<Vec<u8>>) -> Self {
        self.event.transactions = txs;
        self
    }

    pub fn build(self, signer: &impl Signer) -> Event {
        let mut e = self.event;
        e.tx_hash = transactions_digest(&e.transactions);
        let id = e.id();
        e.sig = signer.sign(e.creator, &id);
        e
    }
}
