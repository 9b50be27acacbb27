//! Binary message layout.
//!
//! ```text
//! offset  size   field
//! 0       4      magic "DNL1"
//! 4       1      version (1)
//! 5       1      type (1 = broadcast, 2 = gradient)
//! 6       4      round id
//! 10      4      p
//! 14      4      site id (0 for broadcast)
//! 18      8      n_i (0 for broadcast)
//! 26      8·p²   matrix, row-major f64
//! 26+8p²  4      CRC-32 (IEEE) of bytes 4..26+8p²
//! ```
//!
//! All integers are little-endian.

use nalgebra::DMatrix;

use crate::error::WireError;
use crate::ising::ParameterMatrix;

pub const MAGIC: [u8; 4] = *b"DNL1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 26;
pub const TRAILER_LEN: usize = 4;

const TYPE_BROADCAST: u8 = 1;
const TYPE_GRADIENT: u8 = 2;

/// Total encoded size for dimension `p`.
pub const fn encoded_len(p: usize) -> usize {
    HEADER_LEN + 8 * p * p + TRAILER_LEN
}

/// The hub's `Θ̂₀`, sent once to every site.
#[derive(Debug, Clone, PartialEq)]
pub struct BroadcastMessage {
    round_id: u32,
    theta0: DMatrix<f64>,
    checksum: u32,
}

/// One site's gradient at `Θ̂₀`. Only the `p × p` gradient and provenance
/// cross the site boundary; samples have no representation here.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMessage {
    site_id: u32,
    round_id: u32,
    n_i: u64,
    gradient: DMatrix<f64>,
    checksum: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Broadcast(BroadcastMessage),
    Gradient(GradientMessage),
}

impl BroadcastMessage {
    pub fn new(round_id: u32, theta0: &ParameterMatrix) -> Self {
        let theta0 = theta0.as_matrix().clone();
        let checksum = crc_of(&layout(TYPE_BROADCAST, round_id, 0, 0, &theta0));
        BroadcastMessage {
            round_id,
            theta0,
            checksum,
        }
    }

    pub fn round_id(&self) -> u32 {
        self.round_id
    }

    pub fn p(&self) -> usize {
        self.theta0.nrows()
    }

    pub fn checksum(&self) -> u32 {
        self.checksum
    }

    pub fn theta0(&self) -> crate::Result<ParameterMatrix> {
        ParameterMatrix::new(self.theta0.clone())
    }

    pub fn encode(&self) -> Vec<u8> {
        finish(layout(TYPE_BROADCAST, self.round_id, 0, 0, &self.theta0), self.checksum)
    }
}

impl GradientMessage {
    pub fn new(site_id: u32, round_id: u32, n_i: u64, gradient: DMatrix<f64>) -> Self {
        assert!(gradient.is_square(), "gradient must be square");
        let checksum = crc_of(&layout(TYPE_GRADIENT, round_id, site_id, n_i, &gradient));
        GradientMessage {
            site_id,
            round_id,
            n_i,
            gradient,
            checksum,
        }
    }

    pub fn site_id(&self) -> u32 {
        self.site_id
    }

    pub fn round_id(&self) -> u32 {
        self.round_id
    }

    pub fn n_i(&self) -> u64 {
        self.n_i
    }

    pub fn p(&self) -> usize {
        self.gradient.nrows()
    }

    pub fn gradient(&self) -> &DMatrix<f64> {
        &self.gradient
    }

    pub fn checksum(&self) -> u32 {
        self.checksum
    }

    /// Whether the stored checksum still matches the payload.
    pub fn verify(&self) -> bool {
        crc_of(&layout(TYPE_GRADIENT, self.round_id, self.site_id, self.n_i, &self.gradient))
            == self.checksum
    }

    pub fn encode(&self) -> Vec<u8> {
        finish(
            layout(TYPE_GRADIENT, self.round_id, self.site_id, self.n_i, &self.gradient),
            self.checksum,
        )
    }

    #[cfg(test)]
    pub(crate) fn corrupt_for_test(&mut self) {
        self.gradient[(0, 0)] += 1.0;
    }
}

impl Message {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            Message::Broadcast(b) => b.encode(),
            Message::Gradient(g) => g.encode(),
        }
    }
}

/// Header and payload, without the trailing CRC.
fn layout(kind: u8, round: u32, site: u32, n_i: u64, m: &DMatrix<f64>) -> Vec<u8> {
    let p = m.nrows();
    let mut buf = Vec::with_capacity(encoded_len(p));
    buf.extend_from_slice(&MAGIC);
    buf.push(VERSION);
    buf.push(kind);
    buf.extend_from_slice(&round.to_le_bytes());
    buf.extend_from_slice(&(p as u32).to_le_bytes());
    buf.extend_from_slice(&site.to_le_bytes());
    buf.extend_from_slice(&n_i.to_le_bytes());
    for r in 0..p {
        for c in 0..p {
            buf.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    buf
}

fn crc_of(body: &[u8]) -> u32 {
    crc32fast::hash(&body[MAGIC.len()..])
}

fn finish(mut body: Vec<u8>, crc: u32) -> Vec<u8> {
    body.extend_from_slice(&crc.to_le_bytes());
    body
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub fn encode_message(msg: &Message) -> Vec<u8> {
    msg.encode()
}

pub fn decode_message(bytes: &[u8]) -> Result<Message, WireError> {
    let truncated = |expected| WireError::Truncated {
        expected,
        actual: bytes.len(),
    };
    if bytes.len() < MAGIC.len() {
        return Err(truncated(HEADER_LEN + TRAILER_LEN));
    }
    if bytes[..4] != MAGIC {
        return Err(WireError::BadMagic(bytes[..4].try_into().unwrap()));
    }
    if bytes.len() < HEADER_LEN + TRAILER_LEN {
        return Err(truncated(HEADER_LEN + TRAILER_LEN));
    }
    if bytes[4] != VERSION {
        return Err(WireError::UnsupportedVersion(bytes[4]));
    }
    let kind = bytes[5];
    if kind != TYPE_BROADCAST && kind != TYPE_GRADIENT {
        return Err(WireError::UnknownType(kind));
    }
    let round = u32_at(bytes, 6);
    let p = u32_at(bytes, 10) as usize;
    let site = u32_at(bytes, 14);
    let n_i = u64::from_le_bytes(bytes[18..26].try_into().unwrap());
    let expected = p
        .checked_mul(p)
        .and_then(|q| q.checked_mul(8))
        .and_then(|q| q.checked_add(HEADER_LEN + TRAILER_LEN))
        .ok_or(truncated(usize::MAX))?;
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(WireError::TrailingBytes(bytes.len() - expected));
    }
    let body = &bytes[..expected - TRAILER_LEN];
    let stored = u32_at(bytes, expected - TRAILER_LEN);
    let computed = crc_of(body);
    if stored != computed {
        return Err(WireError::CrcMismatch { stored, computed });
    }
    let mut values = body[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let m = DMatrix::from_row_iterator(p, p, &mut values);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(WireError::NonFinitePayload);
    }
    Ok(if kind == TYPE_BROADCAST {
        Message::Broadcast(BroadcastMessage {
            round_id: round,
            theta0: m,
            checksum: stored,
        })
    } else {
        Message::Gradient(GradientMessage {
            site_id: site,
            round_id: round,
            n_i,
            gradient: m,
            checksum: stored,
        })
    })
}
