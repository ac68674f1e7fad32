//! Byte-string algebra shared by the cloud and user hash chains.
//!
//! Chain values are plain octet strings. Four primitives operate on them:
//! SHA-256 hashing, XOR over 32-octet digests, big-endian integer addition
//! and concatenation. Executors never call the free functions directly; they
//! go through an [`Algebra`] so that primitive calls can be counted.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::cost::OpCounters;

/// A node's hash-chain state: either a raw hash input `h_i` or a digest.
pub type ChainValue = Vec<u8>;

pub const DIGEST_LEN: usize = 32;
pub const TAG_LEN: usize = 8;
pub const NONCE_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HexError {
    #[error("invalid hex: {0}")]
    Invalid(#[from] hex::FromHexError),
    #[error("expected {expected} octets, got {actual}")]
    Length { expected: usize, actual: usize },
}

macro_rules! fixed_octets {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name([u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub const fn from_bytes(bytes: [u8; $len]) -> Self {
                Self(bytes)
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self, HexError> {
                let raw = hex::decode(s.trim())?;
                let bytes: [u8; $len] = raw
                    .as_slice()
                    .try_into()
                    .map_err(|_| HexError::Length { expected: $len, actual: raw.len() })?;
                Ok(Self(bytes))
            }
        }

        impl AsRef<[u8]> for $name {
            fn as_ref(&self) -> &[u8] {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_hex())
            }
        }

        impl FromStr for $name {
            type Err = HexError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::from_hex(s)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                Self::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

fixed_octets!(
    /// A 32-octet hash output. XOR is only defined between two digests.
    Digest,
    DIGEST_LEN
);
fixed_octets!(
    /// Public 8-octet identifier of an ECall function.
    Tag,
    TAG_LEN
);
fixed_octets!(
    /// Per-request 16-octet random number that seeds the chain.
    Nonce,
    NONCE_LEN
);

impl Digest {
    pub const ZERO: Digest = Digest([0; DIGEST_LEN]);

    pub fn xor(&self, other: &Digest) -> Digest {
        let mut out = [0u8; DIGEST_LEN];
        for (o, (a, b)) in out.iter_mut().zip(self.0.iter().zip(other.0.iter())) {
            *o = a ^ b;
        }
        Digest(out)
    }
}

impl Nonce {
    pub fn random<R: rand::RngCore + ?Sized>(rng: &mut R) -> Nonce {
        let mut bytes = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut bytes);
        Nonce(bytes)
    }
}

impl Tag {
    pub fn random<R: rand::RngCore + ?Sized>(rng: &mut R) -> Tag {
        let mut bytes = [0u8; TAG_LEN];
        rng.fill_bytes(&mut bytes);
        Tag(bytes)
    }
}

/// SHA-256 of `input`.
pub fn hash(input: &[u8]) -> Digest {
    Digest(Sha256::digest(input).into())
}

pub fn xor(a: &Digest, b: &Digest) -> Digest {
    a.xor(b)
}

/// `a || b`.
pub fn concat(a: &[u8], b: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

/// Sum of the operands read as big-endian unsigned integers, serialized
/// big-endian without leading zero octets (zero is a single `0x00`).
///
/// Panics on fewer than two operands or an empty operand.
pub fn add(operands: &[&[u8]]) -> Vec<u8> {
    assert!(operands.len() >= 2, "add needs at least two operands, got {}", operands.len());
    assert!(operands.iter().all(|o| !o.is_empty()), "add operands must be nonempty");

    let width = operands.iter().map(|o| o.len()).max().unwrap_or(0);
    // Column sums, least significant octet first. Each column holds at most
    // 255 * operands.len(), far below u64::MAX.
    let mut columns = vec![0u64; width];
    for operand in operands {
        for (col, &byte) in columns.iter_mut().zip(operand.iter().rev()) {
            *col += u64::from(byte);
        }
    }

    let mut little = Vec::with_capacity(width + 8);
    let mut carry = 0u64;
    for col in columns {
        let v = col + carry;
        little.push((v & 0xff) as u8);
        carry = v >> 8;
    }
    while carry > 0 {
        little.push((carry & 0xff) as u8);
        carry >>= 8;
    }
    while little.len() > 1 && little.last() == Some(&0) {
        little.pop();
    }
    little.reverse();
    little
}

/// The primitive set both hash-chain algorithms are written against.
///
/// The hash function is the one configuration point: implementors override
/// [`Algebra::hash`] and inherit the remaining operations.
pub trait Algebra {
    fn hash(&self, input: &[u8]) -> Digest;

    fn xor(&self, a: &Digest, b: &Digest) -> Digest {
        xor(a, b)
    }

    fn add(&self, operands: &[&[u8]]) -> Vec<u8> {
        add(operands)
    }

    fn concat(&self, a: &[u8], b: &[u8]) -> Vec<u8> {
        concat(a, b)
    }
}

impl<A: Algebra + ?Sized> Algebra for &A {
    fn hash(&self, input: &[u8]) -> Digest {
        (**self).hash(input)
    }
    fn xor(&self, a: &Digest, b: &Digest) -> Digest {
        (**self).xor(a, b)
    }
    fn add(&self, operands: &[&[u8]]) -> Vec<u8> {
        (**self).add(operands)
    }
    fn concat(&self, a: &[u8], b: &[u8]) -> Vec<u8> {
        (**self).concat(a, b)
    }
}

/// Default algebra: SHA-256.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sha256Algebra;

impl Algebra for Sha256Algebra {
    fn hash(&self, input: &[u8]) -> Digest {
        hash(input)
    }
}

/// Wraps an algebra and tallies every primitive call.
///
/// A k-operand addition counts as k-1 binary additions.
#[derive(Debug)]
pub struct Counting<A> {
    inner: A,
    hash: Cell<u64>,
    xor: Cell<u64>,
    add: Cell<u64>,
    con: Cell<u64>,
}

impl<A: Algebra> Counting<A> {
    pub fn new(inner: A) -> Self {
        Counting { inner, hash: Cell::new(0), xor: Cell::new(0), add: Cell::new(0), con: Cell::new(0) }
    }

    pub fn counters(&self) -> OpCounters {
        OpCounters {
            hash_count: self.hash.get(),
            xor_count: self.xor.get(),
            add_count: self.add.get(),
            con_count: self.con.get(),
        }
    }
}

fn bump(cell: &Cell<u64>, by: u64) {
    cell.set(cell.get() + by);
}

impl<A: Algebra> Algebra for Counting<A> {
    fn hash(&self, input: &[u8]) -> Digest {
        bump(&self.hash, 1);
        self.inner.hash(input)
    }
    fn xor(&self, a: &Digest, b: &Digest) -> Digest {
        bump(&self.xor, 1);
        self.inner.xor(a, b)
    }
    fn add(&self, operands: &[&[u8]]) -> Vec<u8> {
        bump(&self.add, operands.len().saturating_sub(1) as u64);
        self.inner.add(operands)
    }
    fn concat(&self, a: &[u8], b: &[u8]) -> Vec<u8> {
        bump(&self.con, 1);
        self.inner.concat(a, b)
    }
}
