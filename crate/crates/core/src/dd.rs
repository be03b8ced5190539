//! Double-double arithmetic (about 106 significant bits).
//!
//! Used to evaluate the reprojection objective when deciding whether an LM
//! step decreased it: near a stationary point the true decrease is far below
//! the rounding error of an `f64` sum of squares, and comparisons of `f64`
//! objectives degenerate into comparisons of rounding noise.

use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::jet::Scalar;

/// An unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const TWO_PI: Dd = Dd {
    hi: std::f64::consts::TAU,
    lo: 2.4492935982947064e-16,
};

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn new(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }

    fn from_pair((hi, lo): (f64, f64)) -> Self {
        Self { hi, lo }
    }

    /// Nearest `f64`.
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            -self
        } else {
            self
        }
    }

    pub fn square(self) -> Self {
        self * self
    }

    fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        Self::from_pair(quick_two_sum(p, e + self.lo * b))
    }

    /// Taylor series of sin (`odd`) or cos about zero, for `|x| <= pi`.
    fn trig_series(x: Dd, odd: bool) -> Dd {
        let x2 = x * x;
        let (mut term, mut k) = if odd { (x, 1.0) } else { (Dd::new(1.0), 0.0) };
        let mut sum = term;
        for _ in 0..40 {
            term = -(term * x2) / Dd::new((k + 1.0) * (k + 2.0));
            k += 2.0;
            sum = sum + term;
            if term.hi.abs() <= 1e-34 * sum.hi.abs().max(1e-300) {
                break;
            }
        }
        sum
    }

    /// `x` reduced into `[-pi, pi]`.
    fn reduce(self) -> Dd {
        if self.hi.abs() <= std::f64::consts::PI {
            return self;
        }
        let k = (self.hi / TWO_PI.hi).round();
        self - TWO_PI.mul_f64(k)
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&o.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&o.lo),
            ord => Some(ord),
        }
    }
}

impl Add for Dd {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Self::from_pair(quick_two_sum(s, e + f))
    }
}

impl Neg for Dd {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let (p, e) = two_prod(self.hi, o.hi);
        Self::from_pair(quick_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi)))
    }
}

impl Div for Dd {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q1 = self.hi / o.hi;
        let r = self - o.mul_f64(q1);
        let q2 = r.hi / o.hi;
        let r = r - o.mul_f64(q2);
        let q3 = r.hi / o.hi;
        Self::from_pair(quick_two_sum(q1, q2)) + Dd::new(q3)
    }
}

impl Scalar for Dd {
    fn constant(v: f64) -> Self {
        Dd::new(v)
    }
    fn value(&self) -> f64 {
        self.hi
    }
    fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return Dd::new(self.hi.sqrt());
        }
        let q = self.hi.sqrt();
        let r = self - Dd::from_pair(two_prod(q, q));
        Dd::new(q) + Dd::new(r.hi / (2.0 * q))
    }
    fn sin(self) -> Self {
        Dd::trig_series(self.reduce(), true)
    }
    fn cos(self) -> Self {
        Dd::trig_series(self.reduce(), false)
    }
    fn scale(self, k: f64) -> Self {
        self.mul_f64(k)
    }
}
