//! Truncated univariate Taylor series `c_0 + c_1 t + ... + c_K t^K`.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Jet(pub Vec<f64>);

impl Jet {
    pub fn constant(c: f64, order: usize) -> Self {
        let mut v = vec![0.0; order + 1];
        v[0] = c;
        Jet(v)
    }

    /// The jet of `t -> x + t`.
    pub fn variable(x: f64, order: usize) -> Self {
        let mut v = Jet::constant(x, order);
        if order >= 1 {
            v.0[1] = 1.0;
        }
        v
    }

    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn value(&self) -> f64 {
        self.0[0]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    /// `k`-th derivative at the base point.
    pub fn derivative(&self, k: usize) -> f64 {
        self.0[k] * crate::polyalg::factorial(k)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet(self.0.iter().map(|c| c * s).collect())
    }

    pub fn div(&self, b: &Jet) -> Result<Jet> {
        let b0 = b.0[0];
        if b0 == 0.0 {
            return Err(Error::Domain("division by a quantity vanishing at the base point".into()));
        }
        let k = self.order().min(b.order());
        let mut q = vec![0.0; k + 1];
        for i in 0..=k {
            let s: f64 = (1..=i).map(|j| b.0[j] * q[i - j]).sum();
            q[i] = (self.0[i] - s) / b0;
        }
        Ok(Jet(q))
    }

    pub fn exp(&self) -> Jet {
        let k = self.order();
        let mut e = vec![0.0; k + 1];
        e[0] = self.0[0].exp();
        for i in 1..=k {
            let s: f64 = (1..=i).map(|j| j as f64 * self.0[j] * e[i - j]).sum();
            e[i] = s / i as f64;
        }
        Jet(e)
    }

    pub fn ln(&self) -> Result<Jet> {
        let a0 = self.0[0];
        if !(a0 > 0.0) {
            return Err(Error::Domain(format!("ln of non-positive value {a0}")));
        }
        let k = self.order();
        let mut l = vec![0.0; k + 1];
        l[0] = a0.ln();
        for i in 1..=k {
            let s: f64 = (1..i).map(|j| j as f64 * l[j] * self.0[i - j]).sum();
            l[i] = (self.0[i] - s / i as f64) / a0;
        }
        Ok(Jet(l))
    }

    /// `(sin a, cos a)`
    pub fn sin_cos(&self) -> (Jet, Jet) {
        let k = self.order();
        let mut s = vec![0.0; k + 1];
        let mut c = vec![0.0; k + 1];
        s[0] = self.0[0].sin();
        c[0] = self.0[0].cos();
        for i in 1..=k {
            let (mut ss, mut cc) = (0.0, 0.0);
            for j in 1..=i {
                let ja = j as f64 * self.0[j];
                ss += ja * c[i - j];
                cc += ja * s[i - j];
            }
            s[i] = ss / i as f64;
            c[i] = -cc / i as f64;
        }
        (Jet(s), Jet(c))
    }

    pub fn powi(&self, p: i32) -> Result<Jet> {
        let k = self.order();
        let mut base = self.clone();
        let mut acc = Jet::constant(1.0, k);
        let mut e = p.unsigned_abs();
        while e > 0 {
            if e & 1 == 1 {
                acc = &acc * &base;
            }
            base = &base * &base;
            e >>= 1;
        }
        if p < 0 {
            Jet::constant(1.0, k).div(&acc)
        } else {
            Ok(acc)
        }
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, b: &Jet) -> Jet {
        Jet(self.0.iter().zip(&b.0).map(|(x, y)| x + y).collect())
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, b: &Jet) -> Jet {
        Jet(self.0.iter().zip(&b.0).map(|(x, y)| x - y).collect())
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

/// Cauchy product.
impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, b: &Jet) -> Jet {
        let k = self.order().min(b.order());
        Jet((0..=k)
            .map(|i| (0..=i).map(|j| self.0[j] * b.0[i - j]).sum())
            .collect())
    }
}
