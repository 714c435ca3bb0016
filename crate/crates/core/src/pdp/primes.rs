//! Deterministic generation of safe primes.
//!
//! All randomness comes from a caller-supplied ChaCha stream, so key
//! generation is reproducible from a seed. Candidates are sieved against
//! small primes jointly with their corresponding group order before any
//! expensive primality test runs.

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand_chacha::rand_core::Rng;
use rand_chacha::ChaCha20Rng;
use std::sync::OnceLock;

/// Odd primes below 2048, for trial division.
fn small_primes() -> &'static [u64] {
    static PRIMES: OnceLock<Vec<u64>> = OnceLock::new();
    PRIMES.get_or_init(|| {
        let limit = 2048usize;
        let mut composite = vec![false; limit];
        let mut out = Vec::new();
        for n in (3..limit).step_by(2) {
            if !composite[n] {
                out.push(n as u64);
                let mut k = n * n;
                while k < limit {
                    composite[k] = true;
                    k += 2 * n;
                }
            }
        }
        out
    })
}

/// Uniform value with exactly `bits` random bits.
pub fn rand_biguint(rng: &mut ChaCha20Rng, bits: u64) -> BigUint {
    let bytes = bits.div_ceil(8) as usize;
    let mut buf = vec![0u8; bytes];
    rng.fill_bytes(&mut buf);
    let excess = bytes as u64 * 8 - bits;
    buf[0] &= 0xff >> excess;
    BigUint::from_bytes_be(&buf)
}

/// Miller-Rabin with `rounds` random bases from the stream.
pub fn is_probable_prime(n: &BigUint, rng: &mut ChaCha20Rng, rounds: u32) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    for &p in small_primes() {
        let p = BigUint::from(p);
        if *n == p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    if n.is_even() {
        return *n == two;
    }

    // n - 1 = 2^s * d with d odd
    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;

    let span = n - 3u32; // bases drawn from [2, n-2]
    'witness: for _ in 0..rounds {
        let a = &(rand_biguint(rng, n.bits() + 64) % &span) + 2u32;
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Finds q prime with 2q+1 also prime, where 2q+1 has exactly `bits` bits
/// and its top two bits set. Returns (2q+1, q).
pub fn safe_prime(rng: &mut ChaCha20Rng, bits: u64) -> (BigUint, BigUint) {
    assert!(bits >= 16, "prime width too small");
    let two = BigUint::from(2u32);
    loop {
        // q with top two bits and the low bit set, so p = 2q+1 keeps its
        // top two bits and the exact width.
        let mut q = rand_biguint(rng, bits - 1);
        q.set_bit(bits - 2, true);
        q.set_bit(bits - 3, true);
        q.set_bit(0, true);

        // Joint sieve: a small factor in either q or 2q+1 kills the pair.
        let mut pass = true;
        for &s in small_primes() {
            let r = (&q % s).to_u64_digits().first().copied().unwrap_or(0);
            if r == 0 || (2 * r + 1) % s == 0 {
                pass = false;
                break;
            }
        }
        if !pass {
            continue;
        }

        // Cheap Fermat filter before the full test.
        if !two.modpow(&(&q - 1u32), &q).is_one() {
            continue;
        }
        if !is_probable_prime(&q, rng, 32) {
            continue;
        }
        let p = &q * 2u32 + 1u32;
        if is_probable_prime(&p, rng, 32) {
            return (p, q);
        }
    }
}

/// Inverse of `a` modulo `m`, when it exists.
pub fn modinv(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    use num_bigint::BigInt;
    let a = BigInt::from(a.clone());
    let m_signed = BigInt::from(m.clone());
    let ext = a.extended_gcd(&m_signed);
    if !ext.gcd.is_one() {
        return None;
    }
    let mut x = ext.x % &m_signed;
    if x.sign() == num_bigint::Sign::Minus {
        x += &m_signed;
    }
    Some(x.to_biguint().unwrap())
}
