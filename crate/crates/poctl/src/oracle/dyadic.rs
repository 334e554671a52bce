//! Exact dyadic rationals: `mantissa · 2^exponent` over big integers.
//!
//! Every finite `f64` is a dyadic rational, and dyadics are closed under
//! addition and multiplication, so cylinder measures over float-valued
//! models can be accumulated without any rounding. No gcd reductions are
//! needed; normalisation just strips trailing zero bits.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};

#[derive(Clone, PartialEq, Eq)]
pub struct Dyadic {
    mant: BigInt,
    exp: i64,
}

impl Dyadic {
    pub fn zero() -> Self {
        Dyadic {
            mant: BigInt::zero(),
            exp: 0,
        }
    }

    pub fn one() -> Self {
        Dyadic {
            mant: BigInt::from(1),
            exp: 0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.mant.is_zero()
    }

    /// Exact conversion: decomposes the float into its mantissa and binary
    /// exponent. Panics on non-finite input.
    pub fn from_f64(x: f64) -> Self {
        assert!(x.is_finite(), "dyadic conversion needs a finite value");
        if x == 0.0 {
            return Dyadic::zero();
        }
        let bits = x.to_bits();
        let negative = bits >> 63 == 1;
        let exp_bits = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, exp) = if exp_bits == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), exp_bits - 1075)
        };
        let mut mant = BigInt::from(mant);
        if negative {
            mant = -mant;
        }
        Dyadic { mant, exp }.normalized()
    }

    /// Nearest `f64`. Values far below the subnormal range round to zero.
    pub fn to_f64(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let bits = self.mant.bits();
        let (mant, exp) = if bits > 63 {
            let shift = bits - 63;
            (&self.mant >> shift, self.exp + shift as i64)
        } else {
            (self.mant.clone(), self.exp)
        };
        let mant = mant.to_f64().expect("63-bit mantissa fits");
        // Split the scaling so intermediate powers stay in range.
        let half = (exp / 2) as i32;
        let rest = (exp - i64::from(half)) as i32;
        mant * 2f64.powi(half) * 2f64.powi(rest)
    }

    fn normalized(mut self) -> Self {
        if self.mant.is_zero() {
            self.exp = 0;
            return self;
        }
        if let Some(shift) = self.mant.trailing_zeros() {
            if shift > 0 {
                self.mant >>= shift;
                self.exp += shift as i64;
            }
        }
        self
    }

    pub fn add(&self, other: &Dyadic) -> Dyadic {
        if self.is_zero() {
            return other.clone();
        }
        if other.is_zero() {
            return self.clone();
        }
        let exp = self.exp.min(other.exp);
        let a = &self.mant << (self.exp - exp) as u64;
        let b = &other.mant << (other.exp - exp) as u64;
        Dyadic { mant: a + b, exp }.normalized()
    }

    pub fn sub(&self, other: &Dyadic) -> Dyadic {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Dyadic {
        Dyadic {
            mant: -&self.mant,
            exp: self.exp,
        }
    }

    pub fn mul(&self, other: &Dyadic) -> Dyadic {
        if self.is_zero() || other.is_zero() {
            return Dyadic::zero();
        }
        Dyadic {
            mant: &self.mant * &other.mant,
            exp: self.exp + other.exp,
        }
        .normalized()
    }

    pub fn is_negative(&self) -> bool {
        self.mant.is_negative()
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sub(other).mant.cmp(&BigInt::zero())
    }
}

impl fmt::Debug for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}*2^{} (~{})", self.mant, self.exp, self.to_f64())
    }
}
