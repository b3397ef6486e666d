//! Exact modular arithmetic for the exponential task family.
//!
//! Every label in the data pipeline is produced here. All moduli are small
//! primes (below 2^16), so products of two residues fit in a `u64` and every
//! intermediate value is reduced immediately.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A prime modulus `p >= 3`, checked by trial division on construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct Modulus(u64);

impl Modulus {
    pub fn new(p: u64) -> Result<Self> {
        if p < 3 {
            return Err(Error::InvalidModulus { p, reason: "must be at least 3" });
        }
        if p >= 1 << 16 {
            return Err(Error::InvalidModulus { p, reason: "must be below 2^16" });
        }
        if !is_prime(p) {
            return Err(Error::InvalidModulus { p, reason: "not prime" });
        }
        Ok(Modulus(p))
    }

    #[inline]
    pub fn get(self) -> u64 {
        self.0
    }

    /// Vocabulary size of a model over this modulus.
    pub fn vocab(self) -> usize {
        self.0 as usize
    }
}

impl TryFrom<u64> for Modulus {
    type Error = Error;
    fn try_from(p: u64) -> Result<Self> {
        Modulus::new(p)
    }
}

impl From<Modulus> for u64 {
    fn from(m: Modulus) -> u64 {
        m.0
    }
}

impl std::fmt::Display for Modulus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// Distinct prime factors of `n`, ascending.
fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            out.push(d);
            while n % d == 0 {
                n /= d;
            }
        }
        d += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// `base^exp mod m` by square-and-multiply. `m` may be any integer in
/// `[1, 2^32)`; the task code uses it with both `p` and `p - 1`.
pub fn pow_mod(base: u64, mut exp: u64, m: u64) -> u64 {
    debug_assert!(m >= 1 && m < 1 << 32);
    if m == 1 {
        return 0;
    }
    let mut acc = 1 % m;
    let mut sq = base % m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * sq % m;
        }
        sq = sq * sq % m;
        exp >>= 1;
    }
    acc
}

/// `base^exp mod p`.
pub fn mod_pow(base: u64, exp: u64, p: Modulus) -> u64 {
    pow_mod(base, exp, p.get())
}

/// All primitive roots of `p`, ascending.
///
/// `g` is a primitive root iff `g^((p-1)/q) != 1` for every prime factor `q`
/// of `p - 1`.
pub fn primitive_roots(p: Modulus) -> Vec<u64> {
    let order = p.get() - 1;
    let factors = prime_factors(order);
    (2..p.get())
        .filter(|&g| factors.iter().all(|&q| mod_pow(g, order / q, p) != 1))
        .collect()
}

pub fn is_primitive_root(g: u64, p: Modulus) -> bool {
    if g <= 1 || g >= p.get() {
        return false;
    }
    let order = p.get() - 1;
    prime_factors(order)
        .iter()
        .all(|&q| mod_pow(g, order / q, p) != 1)
}

/// Task identity: modulus plus the two exponent bases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskParams {
    pub p: Modulus,
    pub a: u64,
    pub b: u64,
}

impl TaskParams {
    pub fn new(p: Modulus, a: u64, b: u64) -> Result<Self> {
        for g in [a, b] {
            if !is_primitive_root(g, p) {
                return Err(Error::NotPrimitiveRoot { g, p: p.get() });
            }
        }
        Ok(TaskParams { p, a, b })
    }
}

/// `g^x mod p`, the single-exponential task.
pub fn single_exp_oracle(g: u64, x: u64, p: Modulus) -> u64 {
    mod_pow(g, x, p)
}

/// The inner exponent `a^x mod (p - 1)`.
///
/// Because `b` is coprime to `p`, `b^(a^x) = b^(a^x mod (p-1)) (mod p)`, so
/// this residue is the quantity the double exponential actually consumes.
pub fn fermat_reduce(params: TaskParams, x: u64) -> u64 {
    pow_mod(params.a, x, params.p.get() - 1)
}

/// `b^(a^x) mod p`, the double-exponential task.
pub fn double_exp_oracle(params: TaskParams, x: u64) -> u64 {
    mod_pow(params.b, fermat_reduce(params, x), params.p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(p: u64) -> Modulus {
        Modulus::new(p).unwrap()
    }

    /// Repeated multiplication, no square-and-multiply.
    fn naive_pow(base: u64, exp: u64, p: u64) -> u64 {
        let mut acc = 1 % p;
        for _ in 0..exp {
            acc = acc * (base % p) % p;
        }
        acc
    }

    /// Multiplicative order by walking powers.
    fn brute_order(g: u64, p: u64) -> u64 {
        let mut acc = g % p;
        let mut k = 1;
        while acc != 1 {
            acc = acc * g % p;
            k += 1;
        }
        k
    }

    fn euler_phi(n: u64) -> u64 {
        (1..=n).filter(|&k| gcd(k, n) == 1).count() as u64
    }

    fn gcd(a: u64, b: u64) -> u64 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }

    #[test]
    fn modulus_rejects_composites_and_small() {
        assert!(Modulus::new(2).is_err());
        assert!(Modulus::new(9).is_err());
        assert!(Modulus::new(57).is_err());
        assert!(Modulus::new(65_537).is_err());
        assert_eq!(Modulus::new(59).unwrap().get(), 59);
    }

    #[test]
    fn mod_pow_examples() {
        assert_eq!(mod_pow(3, 0, m(7)), 1);
        assert_eq!(mod_pow(3, 4, m(7)), naive_pow(3, 4, 7));
        assert_eq!(mod_pow(3, 4, m(7)), 4);
        assert_eq!(mod_pow(5, 9, m(7)), naive_pow(5, 9, 7));
        assert_eq!(mod_pow(5, 9, m(7)), 6);
    }

    #[test]
    fn mod_pow_large_exponent_no_overflow() {
        let p = m(65_521);
        let e = u64::MAX;
        // Fermat: g^e = g^(e mod (p-1)).
        assert_eq!(mod_pow(12_345, e, p), mod_pow(12_345, e % 65_520, p));
    }

    #[test]
    fn primitive_root_examples() {
        assert_eq!(primitive_roots(m(7)), vec![3, 5]);
        assert_eq!(primitive_roots(m(3)), vec![2]);
        assert_eq!(primitive_roots(m(59)).len(), 28);
    }

    #[test]
    fn primitive_roots_match_brute_force_order() {
        for p in [3u64, 5, 7, 11, 13, 37, 41, 59] {
            let brute: Vec<u64> = (2..p).filter(|&g| brute_order(g, p) == p - 1).collect();
            assert_eq!(primitive_roots(m(p)), brute, "p={p}");
            assert_eq!(brute.len() as u64, euler_phi(p - 1));
        }
    }

    #[test]
    fn single_exp_examples() {
        assert_eq!(single_exp_oracle(3, 0, m(7)), 1);
        assert_eq!(single_exp_oracle(3, 2, m(7)), 2);
        assert_eq!(single_exp_oracle(5, 3, m(7)), 6);
    }

    #[test]
    fn single_exp_is_bijection_on_nonzero_residues() {
        for p in [5u64, 7, 11, 13, 59] {
            for g in primitive_roots(m(p)) {
                let mut seen: Vec<u64> = (0..p - 1).map(|x| single_exp_oracle(g, x, m(p))).collect();
                seen.sort_unstable();
                assert_eq!(seen, (1..p).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn double_exp_examples() {
        // p=5 has primitive roots 2 and 3.
        let t = TaskParams::new(m(5), 2, 3).unwrap();
        assert_eq!(double_exp_oracle(t, 3), naive_pow(3, 8, 5));
        assert_eq!(double_exp_oracle(t, 3), 1);
        let t = TaskParams::new(m(7), 3, 5).unwrap();
        assert_eq!(double_exp_oracle(t, 2), naive_pow(5, 9, 7));
        assert_eq!(double_exp_oracle(t, 2), 6);
        assert_eq!(double_exp_oracle(t, 0), 5);
    }

    #[test]
    fn fermat_reduce_examples() {
        let t = TaskParams::new(m(5), 2, 3).unwrap();
        assert_eq!(fermat_reduce(t, 3), 0);
        let t = TaskParams::new(m(7), 3, 5).unwrap();
        assert_eq!(fermat_reduce(t, 2), 3);
        for p in [5u64, 7, 59] {
            for a in primitive_roots(m(p)) {
                let t = TaskParams::new(m(p), a, a).unwrap();
                assert_eq!(fermat_reduce(t, 0), 1);
            }
        }
    }

    #[test]
    fn task_params_require_primitive_roots() {
        assert!(TaskParams::new(m(7), 2, 3).is_err());
        assert!(TaskParams::new(m(7), 3, 1).is_err());
        assert!(TaskParams::new(m(7), 3, 5).is_ok());
    }

    #[test]
    fn modulus_serde_validates() {
        let p: Modulus = serde_json::from_str("59").unwrap();
        assert_eq!(p.get(), 59);
        assert!(serde_json::from_str::<Modulus>("58").is_err());
    }
}
