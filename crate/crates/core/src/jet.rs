//! Forward-mode dual numbers carrying exact first and second derivatives.
//!
//! The projection code is written once against [`Scalar`] and evaluated with
//! plain `f64`, with [`Jet1`] (value + gradient) inside the solver, and with
//! [`Jet2`] (value + gradient + Hessian) when assembling the stationarity
//! Jacobians.

use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::{SMatrix, SVector};

/// Minimal real-number interface needed by the camera model.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    fn scale(self, k: f64) -> Self {
        self * Self::constant(k)
    }
}

impl Scalar for f64 {
    #[inline]
    fn constant(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        self * k
    }
}

/// Value and gradient with respect to `N` seeded variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet1<const N: usize> {
    pub v: f64,
    pub g: SVector<f64, N>,
}

impl<const N: usize> Jet1<N> {
    /// The `i`-th independent variable at value `v`.
    pub fn variable(v: f64, i: usize) -> Self {
        let mut g = SVector::zeros();
        g[i] = 1.0;
        Self { v, g }
    }

    #[inline]
    fn chain(self, f: f64, df: f64) -> Self {
        Self { v: f, g: self.g * df }
    }
}

impl<const N: usize> Add for Jet1<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self {
            v: self.v + o.v,
            g: self.g + o.g,
        }
    }
}

impl<const N: usize> Sub for Jet1<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self {
            v: self.v - o.v,
            g: self.g - o.g,
        }
    }
}

impl<const N: usize> Mul for Jet1<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            g: self.g * o.v + o.g * self.v,
        }
    }
}

impl<const N: usize> Div for Jet1<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let v = self.v / o.v;
        Self {
            v,
            g: (self.g - o.g * v) * inv,
        }
    }
}

impl<const N: usize> Neg for Jet1<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self { v: -self.v, g: -self.g }
    }
}

impl<const N: usize> Scalar for Jet1<N> {
    fn constant(v: f64) -> Self {
        Self { v, g: SVector::zeros() }
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn scale(self, k: f64) -> Self {
        Self {
            v: self.v * k,
            g: self.g * k,
        }
    }
}

/// Value, gradient and Hessian with respect to `N` seeded variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet2<const N: usize> {
    pub v: f64,
    pub g: SVector<f64, N>,
    pub h: SMatrix<f64, N, N>,
}

impl<const N: usize> Jet2<N> {
    pub fn variable(v: f64, i: usize) -> Self {
        let mut g = SVector::zeros();
        g[i] = 1.0;
        Self {
            v,
            g,
            h: SMatrix::zeros(),
        }
    }

    /// Composition with a scalar function given its value and first two
    /// derivatives at `self.v`.
    #[inline]
    fn chain(self, f: f64, df: f64, d2f: f64) -> Self {
        Self {
            v: f,
            g: self.g * df,
            h: self.h * df + (self.g * self.g.transpose()) * d2f,
        }
    }
}

impl<const N: usize> Add for Jet2<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self {
            v: self.v + o.v,
            g: self.g + o.g,
            h: self.h + o.h,
        }
    }
}

impl<const N: usize> Sub for Jet2<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self {
            v: self.v - o.v,
            g: self.g - o.g,
            h: self.h - o.h,
        }
    }
}

impl<const N: usize> Mul for Jet2<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let cross = self.g * o.g.transpose();
        Self {
            v: self.v * o.v,
            g: self.g * o.v + o.g * self.v,
            h: self.h * o.v + o.h * self.v + cross + cross.transpose(),
        }
    }
}

impl<const N: usize> Div for Jet2<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        // a = q b  =>  q'' = (a'' - q b'' - q' b'^T - b' q'^T) / b
        let inv = 1.0 / o.v;
        let v = self.v / o.v;
        let g = (self.g - o.g * v) * inv;
        let cross = o.g * g.transpose();
        Self {
            v,
            g,
            h: (self.h - o.h * v - cross - cross.transpose()) * inv,
        }
    }
}

impl<const N: usize> Neg for Jet2<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self {
            v: -self.v,
            g: -self.g,
            h: -self.h,
        }
    }
}

impl<const N: usize> Scalar for Jet2<N> {
    fn constant(v: f64) -> Self {
        Self {
            v,
            g: SVector::zeros(),
            h: SMatrix::zeros(),
        }
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.v))
    }
    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }
    fn scale(self, k: f64) -> Self {
        Self {
            v: self.v * k,
            g: self.g * k,
            h: self.h * k,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f<S: Scalar>(x: S, y: S) -> S {
        (x * y).sin() / (x * x + y).sqrt() - y.cos().scale(3.0)
    }

    #[test]
    fn jet2_matches_hand_derivatives_of_product() {
        let x = Jet2::<2>::variable(1.5, 0);
        let y = Jet2::<2>::variable(-0.5, 1);
        let p = x * x * y;
        assert_eq!(p.v, 1.5 * 1.5 * -0.5);
        assert_eq!(p.g[0], 2.0 * 1.5 * -0.5);
        assert_eq!(p.g[1], 1.5 * 1.5);
        assert_eq!(p.h[(0, 0)], 2.0 * -0.5);
        assert_eq!(p.h[(0, 1)], 2.0 * 1.5);
        assert_eq!(p.h[(1, 0)], 2.0 * 1.5);
        assert_eq!(p.h[(1, 1)], 0.0);
    }

    #[test]
    fn jets_match_central_differences() {
        let (x0, y0) = (0.7, 1.3);
        let h = 1e-5;
        let j1 = f(Jet1::<2>::variable(x0, 0), Jet1::<2>::variable(y0, 1));
        let j2 = f(Jet2::<2>::variable(x0, 0), Jet2::<2>::variable(y0, 1));
        assert_eq!(j1.v, f(x0, y0));
        assert_eq!(j2.v, f(x0, y0));

        let dx = (f(x0 + h, y0) - f(x0 - h, y0)) / (2.0 * h);
        let dy = (f(x0, y0 + h) - f(x0, y0 - h)) / (2.0 * h);
        for (a, b) in [(j1.g[0], dx), (j1.g[1], dy), (j2.g[0], dx), (j2.g[1], dy)] {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }

        // Hessian by differencing the exact gradient.
        let grad = |x: f64, y: f64| f(Jet1::<2>::variable(x, 0), Jet1::<2>::variable(y, 1)).g;
        let hx = (grad(x0 + h, y0) - grad(x0 - h, y0)) / (2.0 * h);
        let hy = (grad(x0, y0 + h) - grad(x0, y0 - h)) / (2.0 * h);
        for i in 0..2 {
            assert!((j2.h[(i, 0)] - hx[i]).abs() < 1e-7);
            assert!((j2.h[(i, 1)] - hy[i]).abs() < 1e-7);
        }
        assert_eq!(j2.h[(0, 1)], j2.h[(1, 0)]);
    }
}
