//! Exact polynomial-times-exponential carriers for the radial and polar
//! basis functions.

use num_rational::Ratio;

pub type Rational = Ratio<i128>;

/// `P(r) · exp(−decay · r)` with exact rational coefficients.
///
/// `coeffs[k]` multiplies `r^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyExp {
    coeffs: Vec<Rational>,
    decay: Rational,
    float_coeffs: Vec<f64>,
}

fn ratio_to_f64(r: &Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn trim(mut c: Vec<Rational>) -> Vec<Rational> {
    while c.len() > 1 && c.last().is_some_and(|x| *x.numer() == 0) {
        c.pop();
    }
    c
}

impl PolyExp {
    pub fn new(coeffs: Vec<Rational>, decay: Rational) -> Self {
        let coeffs = trim(coeffs);
        let float_coeffs = coeffs.iter().map(ratio_to_f64).collect();
        Self {
            coeffs,
            decay,
            float_coeffs,
        }
    }

    /// `r^power · exp(−decay · r)`.
    pub fn monomial(power: usize, decay: Rational) -> Self {
        let mut c = vec![Rational::from_integer(0); power + 1];
        c[power] = Rational::from_integer(1);
        Self::new(c, decay)
    }

    pub fn coeffs(&self) -> &[Rational] {
        &self.coeffs
    }

    pub fn float_coeffs(&self) -> &[f64] {
        &self.float_coeffs
    }

    pub fn decay(&self) -> Rational {
        self.decay
    }

    pub fn decay_f64(&self) -> f64 {
        ratio_to_f64(&self.decay)
    }

    /// d/dr (P e^{−cr}) = (P′ − cP) e^{−cr}.
    pub fn derivative(&self) -> Self {
        let c = self.decay;
        let n = self.coeffs.len();
        let mut out = vec![Rational::from_integer(0); n];
        for (k, a) in self.coeffs.iter().enumerate() {
            out[k] -= c * a;
            if k > 0 {
                out[k - 1] += a * Rational::from_integer(k as i128);
            }
        }
        Self::new(out, c)
    }

    /// Multiplies by `exp(shift · r)`, i.e. lowers the decay rate.
    pub fn times_exp(&self, shift: Rational) -> Self {
        Self::new(self.coeffs.clone(), self.decay - shift)
    }

    /// Divides by `r^power`. Returns `None` if a coefficient below `power` is nonzero.
    pub fn divide_by_power(&self, power: usize) -> Option<Self> {
        if self.coeffs.iter().take(power).any(|c| *c.numer() != 0) {
            return None;
        }
        let c: Vec<Rational> = self.coeffs.iter().skip(power).cloned().collect();
        if c.is_empty() {
            return Some(Self::new(vec![Rational::from_integer(0)], self.decay));
        }
        Some(Self::new(c, self.decay))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c.numer() == 0)
    }

    pub fn poly_value(&self, r: f64) -> f64 {
        horner(&self.float_coeffs, r)
    }

    pub fn value(&self, r: f64) -> f64 {
        self.poly_value(r) * (-self.decay_f64() * r).exp()
    }

    /// Value with first and second derivatives, from the exact derivative
    /// coefficients.
    pub fn eval3(&self, r: f64) -> (f64, f64, f64) {
        let c = self.decay_f64();
        let e = (-c * r).exp();
        let p = horner(&self.float_coeffs, r);
        let dp = horner_deriv(&self.float_coeffs, r, 1);
        let ddp = horner_deriv(&self.float_coeffs, r, 2);
        let v = p * e;
        let d1 = (dp - c * p) * e;
        let d2 = (ddp - 2.0 * c * dp + c * c * p) * e;
        (v, d1, d2)
    }
}

pub(crate) fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

/// k-th derivative of the polynomial with ascending coefficients `c`.
pub(crate) fn horner_deriv(c: &[f64], x: f64, k: usize) -> f64 {
    if c.len() <= k {
        return 0.0;
    }
    let mut acc = 0.0;
    for j in (k..c.len()).rev() {
        let mut fall = 1.0;
        for i in 0..k {
            fall *= (j - i) as f64;
        }
        acc = acc * x + c[j] * fall;
    }
    acc
}

/// Integer polynomial d^k/du^k (1 − u²)^l, ascending coefficients in u.
pub fn legendre_rodrigues_core(l: u32, k: u32) -> Vec<i128> {
    // (1 - u^2)^l = sum_j C(l,j) (-1)^j u^{2j}
    let l = l as usize;
    let mut c = vec![0i128; 2 * l + 1];
    let mut binom: i128 = 1;
    for j in 0..=l {
        let sign = if j % 2 == 0 { 1 } else { -1 };
        c[2 * j] = sign * binom;
        binom = binom * (l - j) as i128 / (j + 1) as i128;
    }
    for _ in 0..k {
        if c.len() <= 1 {
            c = vec![0];
            break;
        }
        c = c
            .iter()
            .enumerate()
            .skip(1)
            .map(|(j, a)| a * j as i128)
            .collect();
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i128, d: i128) -> Rational {
        Rational::new(n, d)
    }

    #[test]
    fn derivative_is_closed() {
        // d/dr (r^2 e^{-r}) = (2r - r^2) e^{-r}
        let p = PolyExp::monomial(2, q(1, 1));
        let d = p.derivative();
        assert_eq!(d.coeffs(), &[q(0, 1), q(2, 1), q(-1, 1)]);
        assert_eq!(d.decay(), q(1, 1));
    }

    #[test]
    fn eval3_matches_exact_derivatives() {
        let p = PolyExp::new(vec![q(1, 1), q(-3, 2), q(1, 3)], q(2, 3));
        let d1 = p.derivative();
        let d2 = d1.derivative();
        for r in [0.1, 1.0, 2.5, 7.0] {
            let (v, a, b) = p.eval3(r);
            assert!((v - p.value(r)).abs() < 1e-14);
            assert!((a - d1.value(r)).abs() < 1e-13);
            assert!((b - d2.value(r)).abs() < 1e-13);
        }
    }

    #[test]
    fn rodrigues_core_small_cases() {
        assert_eq!(legendre_rodrigues_core(0, 0), vec![1]);
        assert_eq!(legendre_rodrigues_core(1, 1), vec![0, -2]);
        assert_eq!(legendre_rodrigues_core(1, 2), vec![-2]);
        // d^2/du^2 (1-u^2)^2 = d^2/du^2 (1 - 2u^2 + u^4) = -4 + 12u^2
        assert_eq!(legendre_rodrigues_core(2, 2), vec![-4, 0, 12]);
    }

    #[test]
    fn divide_by_power_rejects_low_terms() {
        let p = PolyExp::new(vec![q(1, 1), q(1, 1)], q(1, 1));
        assert!(p.divide_by_power(1).is_none());
        let p = PolyExp::new(vec![q(0, 1), q(0, 1), q(5, 1)], q(1, 1));
        assert_eq!(p.divide_by_power(2).unwrap().coeffs(), &[q(5, 1)]);
    }
}
