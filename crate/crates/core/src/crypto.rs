//! Paillier cryptosystem with the `g = N + 1` generator.
//!
//! Plaintexts are signed: they live in the centered interval `(-N/2, N/2)`,
//! encoded as `m mod N` and decoded by subtracting `N` above `N/2`.
//!
//! Every [`Ciphertext`] carries a local (never transmitted) upper bound on the
//! magnitude of its plaintext. Homomorphic operations propagate the bound and
//! refuse to produce a ciphertext whose bound reaches `N/2`, so modular
//! wraparound surfaces as [`Error::PlaintextOverflow`] instead of a silently
//! wrong sum.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

use num_bigint::{BigInt, BigUint, RandBigInt, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Smallest modulus accepted by [`keygen`]; only suitable for tests.
pub const MIN_MODULUS_BITS: u64 = 256;
pub const DEFAULT_MODULUS_BITS: u64 = 2048;

/// Signed plaintext. Must satisfy `|m| < N/2` for the key it is used with.
pub type SignedPlaintext = BigInt;

/// Fingerprint of a public modulus, used to detect cross-key operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyTag(u64);

impl KeyTag {
    fn of(n: &BigUint) -> Self {
        let mut h = DefaultHasher::new();
        n.to_u32_digits().hash(&mut h);
        KeyTag(h.finish())
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    n_squared: BigUint,
    /// `(N - 1) / 2`, the largest admissible plaintext magnitude.
    half_n: BigUint,
    tag: KeyTag,
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PublicKey")
            .field("bits", &self.n.bits())
            .field("tag", &self.tag)
            .finish()
    }
}

impl PublicKey {
    pub fn from_modulus(n: BigUint) -> Result<Self> {
        if n.bits() < MIN_MODULUS_BITS || n.is_even() {
            return Err(invalid("public modulus must be odd and at least 256 bits"));
        }
        let n_squared = &n * &n;
        let half_n = (&n - 1u32) >> 1;
        let tag = KeyTag::of(&n);
        Ok(Self {
            n,
            n_squared,
            half_n,
            tag,
        })
    }

    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn modulus_squared(&self) -> &BigUint {
        &self.n_squared
    }

    /// Largest plaintext magnitude that decodes unambiguously.
    pub fn max_plaintext(&self) -> &BigUint {
        &self.half_n
    }

    pub fn tag(&self) -> KeyTag {
        self.tag
    }

    fn check_bound(&self, bound: &BigUint) -> Result<()> {
        if bound > &self.half_n {
            return Err(Error::PlaintextOverflow {
                bound: bound.to_string(),
            });
        }
        Ok(())
    }

    fn check_tag(&self, c: &Ciphertext) -> Result<()> {
        if c.tag != self.tag {
            return Err(Error::WrongKey);
        }
        Ok(())
    }

    fn encode(&self, m: &BigInt) -> BigUint {
        let r = m.mod_floor(&BigInt::from_biguint(Sign::Plus, self.n.clone()));
        r.to_biguint().expect("mod_floor of positive modulus is non-negative")
    }

    /// Encrypt `m` with fresh randomness from `rng`.
    pub fn encrypt<R: Rng + ?Sized>(&self, m: &SignedPlaintext, rng: &mut R) -> Result<Ciphertext> {
        let bound = m.magnitude().clone();
        self.check_bound(&bound)?;
        let r = loop {
            let r = rng.gen_biguint_range(&BigUint::one(), &self.n);
            if r.gcd(&self.n).is_one() {
                break r;
            }
        };
        // (N + 1)^m = 1 + mN (mod N²)
        let gm = (BigUint::one() + self.encode(m) * &self.n) % &self.n_squared;
        let rn = r.modpow(&self.n, &self.n_squared);
        Ok(Ciphertext {
            value: gm * rn % &self.n_squared,
            tag: self.tag,
            bound,
        })
    }

    /// `E(m1) · E(m2) = E(m1 + m2)`.
    pub fn add(&self, c1: &Ciphertext, c2: &Ciphertext) -> Result<Ciphertext> {
        self.check_tag(c1)?;
        self.check_tag(c2)?;
        let bound = &c1.bound + &c2.bound;
        self.check_bound(&bound)?;
        Ok(Ciphertext {
            value: &c1.value * &c2.value % &self.n_squared,
            tag: self.tag,
            bound,
        })
    }

    /// `E(m)^s = E(s · m)`. Negative scalars invert the ciphertext first so
    /// the exponent stays `|s|`.
    pub fn scale(&self, c: &Ciphertext, s: &SignedPlaintext) -> Result<Ciphertext> {
        self.check_tag(c)?;
        let bound = &c.bound * s.magnitude();
        self.check_bound(&bound)?;
        let base = if s.is_negative() {
            c.value
                .modinv(&self.n_squared)
                .ok_or_else(|| invalid("ciphertext not invertible mod N^2"))?
        } else {
            c.value.clone()
        };
        Ok(Ciphertext {
            value: base.modpow(s.magnitude(), &self.n_squared),
            tag: self.tag,
            bound,
        })
    }

    /// Rebuild a ciphertext received over the wire. Its plaintext bound is
    /// unknown, so it starts at the maximum; use [`Ciphertext::assume_bound`]
    /// before computing on it.
    pub fn ciphertext_from_wire(&self, value: BigUint) -> Result<Ciphertext> {
        if value >= self.n_squared || value.is_zero() {
            return Err(invalid("ciphertext outside (0, N^2)"));
        }
        Ok(Ciphertext {
            value,
            tag: self.tag,
            bound: self.half_n.clone(),
        })
    }
}

/// An encrypted signed integer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    value: BigUint,
    tag: KeyTag,
    bound: BigUint,
}

impl Ciphertext {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn key_tag(&self) -> KeyTag {
        self.tag
    }

    /// Local worst-case bound on `|plaintext|`.
    pub fn bound(&self) -> &BigUint {
        &self.bound
    }

    /// Replace the plaintext bound with a caller-known worst case, e.g. the
    /// quantizer range of the protocol.
    pub fn assume_bound(mut self, bound: BigUint) -> Self {
        self.bound = bound;
        self
    }
}

/// Paillier key pair. The private part is `λ = lcm(p-1, q-1)` and
/// `μ = λ⁻¹ mod N`.
#[derive(Clone)]
pub struct KeyPair {
    modulus_bits: u64,
    public: PublicKey,
    p: BigUint,
    q: BigUint,
    lambda: BigUint,
    mu: BigUint,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("modulus_bits", &self.modulus_bits)
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl PartialEq for KeyPair {
    fn eq(&self, other: &Self) -> bool {
        self.p == other.p && self.q == other.q
    }
}

impl KeyPair {
    fn from_primes(modulus_bits: u64, p: BigUint, q: BigUint) -> Result<Self> {
        if p == q {
            return Err(invalid("Paillier primes must be distinct"));
        }
        let n = &p * &q;
        let p1 = &p - 1u32;
        let q1 = &q - 1u32;
        if !n.gcd(&(&p1 * &q1)).is_one() {
            return Err(invalid("gcd(N, phi(N)) != 1"));
        }
        let lambda = p1.lcm(&q1);
        let mu = lambda
            .modinv(&n)
            .ok_or_else(|| invalid("lambda is not invertible mod N"))?;
        Ok(Self {
            modulus_bits,
            public: PublicKey::from_modulus(n)?,
            p,
            q,
            lambda,
            mu,
        })
    }

    pub fn modulus_bits(&self) -> u64 {
        self.modulus_bits
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.public
    }

    pub fn decrypt(&self, c: &Ciphertext) -> Result<SignedPlaintext> {
        self.public.check_tag(c)?;
        let pk = &self.public;
        let u = c.value.modpow(&self.lambda, &pk.n_squared);
        let l = (u - 1u32) / &pk.n;
        let r = l * &self.mu % &pk.n;
        Ok(if r > pk.half_n {
            BigInt::from_biguint(Sign::Plus, r) - BigInt::from_biguint(Sign::Plus, pk.n.clone())
        } else {
            BigInt::from_biguint(Sign::Plus, r)
        })
    }

    pub fn to_file(&self) -> KeyFile {
        KeyFile {
            modulus_bits: self.modulus_bits,
            n: self.public.n.to_string(),
            p: self.p.to_string(),
            q: self.q.to_string(),
        }
    }

    pub fn from_file(file: &KeyFile) -> Result<Self> {
        let parse = |s: &str| {
            s.parse::<BigUint>()
                .map_err(|e| invalid(format!("bad decimal integer {s:?}: {e}")))
        };
        let kp = Self::from_primes(file.modulus_bits, parse(&file.p)?, parse(&file.q)?)?;
        if kp.public.n != parse(&file.n)? {
            return Err(invalid("N does not equal p*q"));
        }
        Ok(kp)
    }
}

/// JSON fixture form of a key pair. Test fixtures only, not a security format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFile {
    pub modulus_bits: u64,
    #[serde(rename = "N")]
    pub n: String,
    pub p: String,
    pub q: String,
}

/// Deterministic key generation: the same `(modulus_bits, seed)` always
/// yields the same key pair, and `N` has exactly `modulus_bits` bits.
pub fn keygen(modulus_bits: u64, seed: u64) -> Result<KeyPair> {
    if modulus_bits < MIN_MODULUS_BITS || !modulus_bits.is_multiple_of(2) {
        return Err(invalid(format!(
            "modulus_bits must be even and >= {MIN_MODULUS_BITS}, got {modulus_bits}"
        )));
    }
    let half = usize::try_from(modulus_bits / 2).map_err(|_| invalid("modulus too large"))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    loop {
        let p = glass_pumpkin::prime::from_rng(half, &mut rng)
            .map_err(|e| invalid(format!("prime generation failed: {e}")))?;
        let q = glass_pumpkin::prime::from_rng(half, &mut rng)
            .map_err(|e| invalid(format!("prime generation failed: {e}")))?;
        if p == q || (&p * &q).bits() != modulus_bits {
            continue;
        }
        if let Ok(kp) = KeyPair::from_primes(modulus_bits, p, q) {
            return Ok(kp);
        }
    }
}

pub fn encrypt<R: Rng + ?Sized>(pk: &PublicKey, m: &SignedPlaintext, rng: &mut R) -> Result<Ciphertext> {
    pk.encrypt(m, rng)
}

pub fn decrypt(keys: &KeyPair, c: &Ciphertext) -> Result<SignedPlaintext> {
    keys.decrypt(c)
}

pub fn hom_add(pk: &PublicKey, c1: &Ciphertext, c2: &Ciphertext) -> Result<Ciphertext> {
    pk.add(c1, c2)
}

pub fn hom_scale(pk: &PublicKey, c: &Ciphertext, s: &SignedPlaintext) -> Result<Ciphertext> {
    pk.scale(c, s)
}
