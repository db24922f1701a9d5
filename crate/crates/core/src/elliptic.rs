//! Complete elliptic integrals, nome, Jacobi functions on the real line and
//! the Z-invariant mass.

use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EllipticError {
    #[error("modulus must satisfy 0 <= k < 1, got {0}")]
    BadModulus(f64),
    #[error("nome must satisfy 0 <= q < 1, got {0}")]
    BadNome(f64),
    #[error("half-angle {0} outside (0, pi/2)")]
    BadAngle(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipticModulus {
    pub k: f64,
    pub kp: f64,
    pub big_k: f64,
    pub big_e: f64,
    /// K′ = K(k′); infinite at k = 0
    pub big_kp: f64,
    pub big_ep: f64,
    pub q: f64,
}

/// (K, E) by the arithmetic-geometric mean, given k and k′ separately.
pub fn agm_ke(k: f64, kp: f64) -> (f64, f64) {
    if kp == 0.0 {
        return (f64::INFINITY, 1.0);
    }
    let (mut a, mut b) = (1.0f64, kp);
    let mut c = k;
    let mut sum = 0.5 * c * c;
    let mut pow = 0.5;
    for _ in 0..64 {
        let an = 0.5 * (a + b);
        let bn = (a * b).sqrt();
        c = 0.5 * (a - b);
        pow *= 2.0;
        sum += pow * c * c;
        a = an;
        b = bn;
        if c.abs() <= 1e-17 * a {
            break;
        }
    }
    let big_k = PI / (2.0 * a);
    (big_k, big_k * (1.0 - sum))
}

impl EllipticModulus {
    pub fn new(k: f64) -> Result<Self, EllipticError> {
        if !(0.0..1.0).contains(&k) {
            return Err(EllipticError::BadModulus(k));
        }
        Ok(Self::from_pair(k, ((1.0 - k) * (1.0 + k)).sqrt(), None))
    }

    fn from_pair(k: f64, kp: f64, q: Option<f64>) -> Self {
        let (big_k, big_e) = agm_ke(k, kp);
        let (big_kp, big_ep) = agm_ke(kp, k);
        let q = q.unwrap_or(if k == 0.0 { 0.0 } else { (-PI * big_kp / big_k).exp() });
        EllipticModulus { k, kp, big_k, big_e, big_kp, big_ep, q }
    }

    /// k = θ₂²/θ₃², k′ = θ₄²/θ₃² at nome q.
    pub fn from_nome(q: f64) -> Result<Self, EllipticError> {
        if !(0.0..1.0).contains(&q) {
            return Err(EllipticError::BadNome(q));
        }
        let t2 = theta2_reduced(q, 0.0) * 2.0 * q.powf(0.25);
        let t3 = theta3(q, 0.0);
        let t4 = theta4(q, 0.0);
        let k = (t2 / t3).powi(2);
        let kp = (t4 / t3).powi(2);
        Ok(Self::from_pair(k, kp, Some(q)))
    }

    /// θ = 2Kθ̄/π.
    pub fn abstract_angle(&self, bar: f64) -> f64 {
        2.0 * self.big_k * bar / PI
    }

    /// 2K/π − 1 without cancellation for small k: the AGM of (1, k′) tracked as distances from 1.
    pub fn k_excess(&self) -> f64 {
        let mut a = 0.0f64;
        let mut b = self.k * self.k / (1.0 + self.kp);
        for _ in 0..64 {
            let an = 0.5 * (a + b);
            let bn = (a + b - a * b) / (1.0 + ((1.0 - a) * (1.0 - b)).sqrt());
            a = an;
            b = bn;
            if (a - b).abs() <= 1e-17 * a {
                break;
            }
        }
        a / (1.0 - a)
    }

    pub fn legendre_defect(&self) -> f64 {
        self.big_e * self.big_kp + self.big_ep * self.big_k - self.big_k * self.big_kp - FRAC_PI_2
    }

    pub fn jacobi(&self, u: f64) -> Jacobi {
        jacobi(u, self)
    }

    /// sc(θ|k) at the abstract angle of θ̄.
    pub fn sc_bar(&self, bar: f64) -> f64 {
        self.jacobi(self.abstract_angle(bar)).sc()
    }
}

/// Σₙ sign(n) q^{e(n)} trig(n): stops once the weight q^{e(n)} is negligible.
fn series(q: f64, exponent: impl Fn(f64) -> f64, term: impl Fn(f64, f64) -> f64) -> f64 {
    let mut s = 0.0;
    for n in 0..200 {
        let n = n as f64;
        let w = if q == 0.0 && exponent(n) == 0.0 { 1.0 } else { q.powf(exponent(n)) };
        if w < 1e-20 {
            break;
        }
        s += term(n, w);
    }
    s
}

fn alt(n: f64) -> f64 {
    if (n as i64) % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// θ₁(z)/(2q^{1/4}) = Σ (−1)ⁿ q^{n(n+1)} sin((2n+1)z)
fn theta1_reduced(q: f64, z: f64) -> f64 {
    series(q, |n| n * (n + 1.0), |n, w| alt(n) * w * ((2.0 * n + 1.0) * z).sin())
}

/// θ₂(z)/(2q^{1/4}) = Σ q^{n(n+1)} cos((2n+1)z)
fn theta2_reduced(q: f64, z: f64) -> f64 {
    series(q, |n| n * (n + 1.0), |n, w| w * ((2.0 * n + 1.0) * z).cos())
}

fn theta3(q: f64, z: f64) -> f64 {
    1.0 + 2.0 * series(q, |n| (n + 1.0) * (n + 1.0), |n, w| w * (2.0 * (n + 1.0) * z).cos())
}

fn theta4(q: f64, z: f64) -> f64 {
    1.0 - 2.0 * series(q, |n| (n + 1.0) * (n + 1.0), |n, w| alt(n) * w * (2.0 * (n + 1.0) * z).cos())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jacobi {
    pub sn: f64,
    pub cn: f64,
    pub dn: f64,
}

impl Jacobi {
    /// sn/cn; signed infinity at a pole.
    pub fn sc(&self) -> f64 {
        if self.cn == 0.0 {
            f64::INFINITY.copysign(self.sn)
        } else {
            self.sn / self.cn
        }
    }

    pub fn dc(&self) -> f64 {
        if self.cn == 0.0 {
            f64::INFINITY
        } else {
            self.dn / self.cn
        }
    }

    pub fn is_pole(&self) -> bool {
        self.cn == 0.0
    }
}

/// Jacobi functions of real argument: theta series for q < 1/2,
/// descending Landen (AGM) otherwise.
pub fn jacobi(u: f64, m: &EllipticModulus) -> Jacobi {
    if m.k == 0.0 {
        return Jacobi { sn: u.sin(), cn: u.cos(), dn: 1.0 };
    }
    if m.q < 0.5 {
        let q = m.q;
        let z = PI * u / (2.0 * m.big_k);
        let t2_0 = theta2_reduced(q, 0.0);
        let t3_0 = theta3(q, 0.0);
        let t4_0 = theta4(q, 0.0);
        let t4 = theta4(q, z);
        Jacobi {
            sn: t3_0 / t2_0 * theta1_reduced(q, z) / t4,
            cn: t4_0 / t2_0 * theta2_reduced(q, z) / t4,
            dn: t4_0 / t3_0 * theta3(q, z) / t4,
        }
    } else {
        jacobi_landen(u, m.k, m.kp)
    }
}

/// AGM scheme for am(u).
pub fn jacobi_landen(u: f64, k: f64, kp: f64) -> Jacobi {
    let mut a = vec![1.0f64];
    let mut c = vec![k];
    let mut b = kp;
    for _ in 0..64 {
        let an = 0.5 * (a.last().unwrap() + b);
        let cn = 0.5 * (a.last().unwrap() - b);
        b = (a.last().unwrap() * b).sqrt();
        a.push(an);
        c.push(cn);
        if cn.abs() < 1e-17 {
            break;
        }
    }
    let n = a.len() - 1;
    let mut phi = 2f64.powi(n as i32) * a[n] * u;
    let mut prev = phi;
    for i in (1..=n).rev() {
        prev = phi;
        phi = 0.5 * (phi + (c[i] / a[i] * phi.sin()).asin());
    }
    let (sn, cn) = (phi.sin(), phi.cos());
    let dn = if n == 0 { (1.0 - k * k * sn * sn).sqrt() } else { cn / (prev - phi).cos() };
    Jacobi { sn, cn, dn }
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

pub const QUAD_TOL: f64 = 1e-12;

/// Contribution of one incident edge of half-angle θ̄ to m²(x|k).
pub fn mass_term(m: &EllipticModulus, bar: f64) -> Result<f64, EllipticError> {
    if !(bar > 0.0 && bar < FRAC_PI_2) {
        return Err(EllipticError::BadAngle(bar));
    }
    let theta = m.abstract_angle(bar);
    let dc2 = |v: f64| m.jacobi(v).dc().powi(2);
    let integral = adaptive_simpson(&dc2, 0.0, theta, QUAD_TOL);
    let ratio = (m.big_e - m.big_k) / m.big_k;
    Ok((integral + ratio * theta) / m.kp - m.jacobi(theta).sc())
}

/// m²(x|k) from the half-angles of the edges at x.
pub fn mass_value(m: &EllipticModulus, half_angles: &[f64]) -> Result<f64, EllipticError> {
    half_angles.iter().map(|&t| mass_term(m, t)).sum()
}

/// Near-critical modulus: q = Mδ/2.
pub fn near_critical(mass: f64, delta: f64) -> Result<EllipticModulus, EllipticError> {
    EllipticModulus::from_nome(0.5 * mass * delta)
}

/// Residuals of the small-δ expansions at one δ (mass parameter M).
#[derive(Clone, Copy, Debug)]
pub struct AsymptoticResiduals {
    pub delta: f64,
    /// k² − (8Mδ − 32M²δ²)
    pub k2: f64,
    /// θ/θ̄ − (1 + 2Mδ + M²δ²), which is O(δ⁴)
    pub angle: f64,
    /// sc(θ|k)/tan θ̄ − (1 + 2Mδ) at θ̄ = π/4
    pub sc: f64,
}

pub fn near_critical_residuals(mass: f64, delta: f64) -> AsymptoticResiduals {
    let m = near_critical(mass, delta).expect("small nome");
    let md = mass * delta;
    let bar = PI / 4.0;
    AsymptoticResiduals {
        delta,
        k2: m.k * m.k - (8.0 * md - 32.0 * md * md),
        angle: m.k_excess() - (2.0 * md + md * md),
        sc: m.sc_bar(bar) / bar.tan() - (1.0 + 2.0 * md),
    }
}
