//! Support strings from the symmetric polynomials, via exact roots at `z = 2`.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use crate::coeffs::SymmetricPolynomial;
use crate::error::{param, Error, Result};
use crate::model::BitString;

const NEWTON_STEPS: usize = 100_000;

/// Distinct integers `P(2; x)` for the support strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSupport(Vec<BigUint>);

impl EncodedSupport {
    pub fn encodings(&self) -> &[BigUint] {
        &self.0
    }
}

/// Monic polynomial; `coeffs[i]` multiplies `z^i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonicIntegerPolynomial {
    coeffs: Vec<BigInt>,
}

impl MonicIntegerPolynomial {
    pub fn new(coeffs: Vec<BigInt>) -> Result<Self> {
        match coeffs.last() {
            Some(c) if c.is_one() => Ok(Self { coeffs }),
            _ => param("polynomial must be monic"),
        }
    }

    pub fn coeffs(&self) -> &[BigInt] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: &BigInt) -> BigInt {
        eval(&self.coeffs, x)
    }
}

fn eval(coeffs: &[BigInt], x: &BigInt) -> BigInt {
    let mut acc = BigInt::zero();
    for c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

fn derivative(coeffs: &[BigInt]) -> Vec<BigInt> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, c)| c * BigInt::from(i))
        .collect()
}

/// `P(2; x) = sum_i x_i 2^i`.
pub fn encode_string(x: &BitString) -> BigUint {
    let mut y = BigUint::zero();
    for (i, &b) in x.bits().iter().enumerate() {
        if b == 1 {
            y.set_bit(i as u64 + 1, true);
        }
    }
    y
}

/// `prod_i (z - y_i)` from `sigma_1(2) .. sigma_l(2)`.
pub fn assemble_char_poly(sigmas: &[SymmetricPolynomial]) -> Result<MonicIntegerPolynomial> {
    let l = sigmas.len();
    for (i, s) in sigmas.iter().enumerate() {
        if s.k != i + 1 {
            return param(format!("expected sigma_{} at position {i}, got sigma_{}", i + 1, s.k));
        }
    }
    let two = BigUint::from(2u32);
    let mut coeffs = vec![BigInt::zero(); l + 1];
    coeffs[l] = BigInt::one();
    for s in sigmas {
        let q = BigInt::from_biguint(Sign::Plus, s.eval_at(&two));
        coeffs[l - s.k] = if s.k % 2 == 0 { q } else { -q };
    }
    MonicIntegerPolynomial::new(coeffs)
}

/// Divides by `(z - r)`; fails unless the remainder vanishes.
fn deflate(coeffs: &[BigInt], r: &BigInt) -> Result<Vec<BigInt>> {
    let d = coeffs.len() - 1;
    let mut out = vec![BigInt::zero(); d];
    let mut carry = BigInt::zero();
    for i in (1..=d).rev() {
        carry = &coeffs[i] + carry * r;
        out[i - 1] = carry.clone();
    }
    if !(&coeffs[0] + carry * r).is_zero() {
        return Err(Error::CorruptInput(format!("{r} is not an exact root")));
    }
    Ok(out)
}

/// Largest root of a real-rooted monic polynomial by integer Newton steps
/// from above. Every iterate stays at or above the root, so a negative value
/// means the root is not an integer.
fn largest_integer_root(coeffs: &[BigInt]) -> Result<BigInt> {
    let corrupt = |msg: &str| Error::CorruptInput(msg.to_string());
    let cauchy: BigInt = coeffs.iter().map(|c| c.abs()).sum();
    let mut x = BigInt::one() + cauchy.max(BigInt::one());
    let deriv = derivative(coeffs);
    for _ in 0..NEWTON_STEPS {
        let fx = eval(coeffs, &x);
        if fx.is_zero() {
            return Ok(x);
        }
        let dfx = eval(&deriv, &x);
        if fx.is_negative() || !dfx.is_positive() {
            return Err(corrupt("polynomial does not have only real roots"));
        }
        // The real Newton iterate lies in [root, x); when it lies above
        // x - 1 an integer root can only be at or below x - 1.
        x -= fx.div_floor(&dfx).max(BigInt::one());
    }
    Err(corrupt("root search did not converge"))
}

/// All roots of a product of distinct linear factors over `0..=2^(n+1)`.
pub fn integer_roots(poly: &MonicIntegerPolynomial, n: usize) -> Result<EncodedSupport> {
    let limit = BigInt::one() << (n + 1);
    let mut rest = poly.coeffs.clone();
    let mut roots = Vec::with_capacity(poly.degree());
    while rest.len() > 1 {
        let r = largest_integer_root(&rest)?;
        if r.is_negative() || r > limit {
            return Err(Error::CorruptInput(format!("root {r} outside [0, 2^{}]", n + 1)));
        }
        if roots.last() == Some(&r) {
            return Err(Error::CorruptInput(format!("repeated root {r}")));
        }
        rest = deflate(&rest, &r)?;
        roots.push(r);
    }
    roots.reverse();
    Ok(EncodedSupport(
        roots.into_iter().map(|r| r.to_biguint().expect("nonnegative root")).collect(),
    ))
}

/// Reads `x_i` off bit `i` of `y`.
pub fn decode_string(y: &BigUint, n: usize) -> Result<BitString> {
    if y.bit(0) {
        return Err(Error::CorruptInput(format!("{y} is odd")));
    }
    if y.bits() > n as u64 + 1 {
        return Err(Error::CorruptInput(format!("{y} does not fit {n} bits")));
    }
    BitString::new((1..=n).map(|i| u8::from(y.bit(i as u64))).collect())
}

/// Support strings, sorted, from `sigma_1 .. sigma_l`.
pub fn recover_strings(sigmas: &[SymmetricPolynomial], n: usize) -> Result<Vec<BitString>> {
    let poly = assemble_char_poly(sigmas)?;
    let roots = integer_roots(&poly, n)?;
    let mut out = roots
        .encodings()
        .iter()
        .map(|y| decode_string(y, n))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}
