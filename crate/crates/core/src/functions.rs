//! Whitelisted test functions with known derivatives.
//!
//! Functions are parsed from short specs such as `x^3`, `bump:1,0.5` or
//! `step:0`; the same string is echoed back in reports.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, WfbmError};

#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    /// `f ≡ c`.
    Constant(f64),
    /// `Σ cₖ xᵏ`, lowest degree first.
    Polynomial(Vec<f64>),
    /// `A (1 - u²)³` on `|u| < 1`, `u = (x - center)/width`; a C² bump.
    Bump { center: f64, width: f64, amplitude: f64 },
    /// `1_{(x0, ∞)}`.
    Step(f64),
    /// `1_{(lo, hi]}`.
    Interval(f64, f64),
    /// `x·1_{[-L, L]}`.
    TruncatedIdentity(f64),
    /// `exp(β x²)`; square-integrable against the Gaussian marginals only
    /// while `4β(T+1)^{1+a+b} < 1`.
    ExpSquare(f64),
    Cos,
    Sin,
}

impl TestFunction {
    pub fn identity() -> Self {
        TestFunction::Polynomial(vec![0.0, 1.0])
    }

    pub fn monomial(n: usize) -> Self {
        let mut c = vec![0.0; n + 1];
        c[n] = 1.0;
        TestFunction::Polynomial(c)
    }

    pub fn bump(center: f64, width: f64) -> Self {
        TestFunction::Bump { center, width, amplitude: 1.0 }
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            TestFunction::Constant(c) => *c,
            TestFunction::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck),
            TestFunction::Bump { center, width, amplitude } => {
                let u = (x - center) / width;
                if u.abs() >= 1.0 {
                    0.0
                } else {
                    let q = 1.0 - u * u;
                    amplitude * q * q * q
                }
            }
            TestFunction::Step(x0) => {
                if x > *x0 {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::Interval(lo, hi) => {
                if x > *lo && x <= *hi {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::TruncatedIdentity(l) => {
                if x.abs() <= *l {
                    x
                } else {
                    0.0
                }
            }
            TestFunction::ExpSquare(beta) => (beta * x * x).exp(),
            TestFunction::Cos => x.cos(),
            TestFunction::Sin => x.sin(),
        }
    }

    /// Derivative where it exists; the a.e. derivative (zero or one) for
    /// the piecewise families.
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            TestFunction::Constant(_) | TestFunction::Step(_) | TestFunction::Interval(..) => 0.0,
            TestFunction::Polynomial(c) => {
                let mut acc = 0.0;
                for (k, &ck) in c.iter().enumerate().skip(1).rev() {
                    acc = acc * x + k as f64 * ck;
                }
                acc
            }
            TestFunction::Bump { center, width, amplitude } => {
                let u = (x - center) / width;
                if u.abs() >= 1.0 {
                    0.0
                } else {
                    let q = 1.0 - u * u;
                    -6.0 * amplitude * u * q * q / width
                }
            }
            TestFunction::TruncatedIdentity(l) => {
                if x.abs() <= *l {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::ExpSquare(beta) => 2.0 * beta * x * (beta * x * x).exp(),
            TestFunction::Cos => -x.sin(),
            TestFunction::Sin => x.cos(),
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match self {
            TestFunction::Polynomial(c) => {
                let mut acc = 0.0;
                for (k, &ck) in c.iter().enumerate().skip(2).rev() {
                    acc = acc * x + (k * (k - 1)) as f64 * ck;
                }
                acc
            }
            TestFunction::Bump { center, width, amplitude } => {
                let u = (x - center) / width;
                if u.abs() >= 1.0 {
                    0.0
                } else {
                    let q = 1.0 - u * u;
                    amplitude * (24.0 * u * u * q - 6.0 * q * q) / (width * width)
                }
            }
            TestFunction::ExpSquare(beta) => {
                2.0 * beta * (1.0 + 2.0 * beta * x * x) * (beta * x * x).exp()
            }
            TestFunction::Cos => -x.cos(),
            TestFunction::Sin => -x.sin(),
            _ => 0.0,
        }
    }

    /// True when `f` is continuously differentiable on all of ℝ.
    pub fn is_c1(&self) -> bool {
        !matches!(
            self,
            TestFunction::Step(_) | TestFunction::Interval(..) | TestFunction::TruncatedIdentity(_)
        )
    }

    pub fn has_compact_support(&self) -> bool {
        match self {
            TestFunction::Constant(c) => *c == 0.0,
            TestFunction::Polynomial(c) => c.iter().all(|&ck| ck == 0.0),
            TestFunction::Bump { .. } | TestFunction::Interval(..) | TestFunction::TruncatedIdentity(_) => true,
            _ => false,
        }
    }

    /// `sup |f'|` over ℝ, if finite.
    pub fn lipschitz(&self) -> Option<f64> {
        match self {
            TestFunction::Constant(_) => Some(0.0),
            TestFunction::Polynomial(c) => match c.len() {
                0 | 1 => Some(0.0),
                2 => Some(c[1].abs()),
                _ if c[2..].iter().all(|&ck| ck == 0.0) => Some(c[1].abs()),
                _ => None,
            },
            // max of 6|u|(1-u²)² is at u² = 1/5.
            TestFunction::Bump { width, amplitude, .. } => {
                Some(6.0 * amplitude.abs() * 5f64.sqrt().recip() * 0.64 / width)
            }
            TestFunction::Cos | TestFunction::Sin => Some(1.0),
            _ => None,
        }
    }

    /// Points where `f` or its derivative is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            TestFunction::Bump { center, width, .. } => vec![center - width, *center, center + width],
            TestFunction::Step(x0) => vec![*x0],
            TestFunction::Interval(lo, hi) => vec![*lo, *hi],
            TestFunction::TruncatedIdentity(l) => vec![-l, *l],
            _ => Vec::new(),
        }
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split([',', ';'])
        .map(|t| t.trim().parse::<f64>().map_err(|_| WfbmError::UnknownFunction(format!("bad number {t:?}"))))
        .collect()
}

impl FromStr for TestFunction {
    type Err = WfbmError;

    /// Accepted forms: `const:c`, `identity`, `x`, `x^n`, `poly:c0,c1,..`,
    /// `bump:center,width[,amplitude]`, `step:x0`, `interval:lo,hi`,
    /// `trunc:L`, `expsq:beta`, `cos`, `sin`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || WfbmError::UnknownFunction(s.to_string());
        let (head, rest) = match s.split_once(':') {
            Some((h, r)) => (h.trim(), Some(r)),
            None => (s, None),
        };
        let f = match (head, rest) {
            ("identity" | "x", None) => TestFunction::identity(),
            ("cos", None) => TestFunction::Cos,
            ("sin", None) => TestFunction::Sin,
            ("const", Some(r)) => TestFunction::Constant(r.trim().parse().map_err(|_| bad())?),
            ("poly", Some(r)) => TestFunction::Polynomial(parse_list(r)?),
            ("bump", Some(r)) => match parse_list(r)?.as_slice() {
                [c, w] if *w > 0.0 => TestFunction::bump(*c, *w),
                [c, w, amp] if *w > 0.0 => TestFunction::Bump { center: *c, width: *w, amplitude: *amp },
                _ => return Err(bad()),
            },
            ("expsq", Some(r)) => TestFunction::ExpSquare(r.trim().parse().map_err(|_| bad())?),
            ("step", Some(r)) => TestFunction::Step(r.trim().parse().map_err(|_| bad())?),
            ("interval", Some(r)) => match parse_list(r)?.as_slice() {
                [lo, hi] if hi > lo => TestFunction::Interval(*lo, *hi),
                _ => return Err(bad()),
            },
            ("trunc", Some(r)) => {
                let l: f64 = r.trim().parse().map_err(|_| bad())?;
                if !(l > 0.0) {
                    return Err(bad());
                }
                TestFunction::TruncatedIdentity(l)
            }
            (h, None) if h.starts_with("x^") => {
                let n: usize = h[2..].parse().map_err(|_| bad())?;
                TestFunction::monomial(n)
            }
            _ => return Err(bad()),
        };
        let finite = match &f {
            TestFunction::Polynomial(c) => c.iter().all(|v| v.is_finite()),
            TestFunction::Constant(c)
            | TestFunction::Step(c)
            | TestFunction::TruncatedIdentity(c)
            | TestFunction::ExpSquare(c) => c.is_finite(),
            TestFunction::Bump { center, width, amplitude } => {
                center.is_finite() && width.is_finite() && amplitude.is_finite()
            }
            TestFunction::Interval(lo, hi) => lo.is_finite() && hi.is_finite(),
            _ => true,
        };
        if finite {
            Ok(f)
        } else {
            Err(bad())
        }
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::Constant(c) => write!(f, "const:{c}"),
            TestFunction::Polynomial(c) => {
                let nonzero: Vec<usize> = (0..c.len()).filter(|&k| c[k] != 0.0).collect();
                match nonzero.as_slice() {
                    [1] if c[1] == 1.0 => write!(f, "identity"),
                    [n] if c[*n] == 1.0 => write!(f, "x^{n}"),
                    _ => {
                        let parts: Vec<String> = c.iter().map(|v| v.to_string()).collect();
                        write!(f, "poly:{}", parts.join(";"))
                    }
                }
            }
            TestFunction::Bump { center, width, amplitude } => {
                if *amplitude == 1.0 {
                    write!(f, "bump:{center};{width}")
                } else {
                    write!(f, "bump:{center};{width};{amplitude}")
                }
            }
            TestFunction::Step(x0) => write!(f, "step:{x0}"),
            TestFunction::Interval(lo, hi) => write!(f, "interval:{lo};{hi}"),
            TestFunction::TruncatedIdentity(l) => write!(f, "trunc:{l}"),
            TestFunction::ExpSquare(beta) => write!(f, "expsq:{beta}"),
            TestFunction::Cos => write!(f, "cos"),
            TestFunction::Sin => write!(f, "sin"),
        }
    }
}
