//! Exact polynomial algebra on the jet space of `u : ℝ → ℝᵈ`, used to check
//! conservation laws of the vmKdV flow symbolically.
//!
//! A [`JetPoly`] is a polynomial with rational coefficients in the jet
//! variables `u_{i,k}` (component `i`, `k` derivatives). Total derivatives,
//! the Euler operator and the homotopy operator are exact.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num::{BigInt, BigRational, One, Signed, Zero};

use crate::error::{Error, Result};

/// Highest derivative order a jet variable may carry.
pub const MAX_ORDER: usize = 12;

/// The jet variable `u_{i,k}`; components are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JetVar {
    pub component: usize,
    pub order: usize,
}

impl fmt::Display for JetVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.order {
            0 => write!(f, "u{}", self.component),
            k @ 1..=3 => write!(f, "u{}_{}", self.component, "x".repeat(k)),
            k => write!(f, "u{}_{}x", self.component, k),
        }
    }
}

/// Sorted `(variable, exponent)` pairs with positive exponents.
type Monomial = Vec<(JetVar, u32)>;

fn degree(m: &Monomial) -> u32 {
    m.iter().map(|(_, e)| e).sum()
}

fn mono_mul(a: &Monomial, b: &Monomial) -> Monomial {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push((a[i].0, a[i].1 + b[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Polynomial in jet variables with exact rational coefficients.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct JetPoly {
    terms: BTreeMap<Monomial, BigRational>,
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

impl JetPoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: BigRational) -> Self {
        let mut p = Self::zero();
        p.add_term(Vec::new(), c);
        p
    }

    /// `n / d` as a constant polynomial.
    pub fn rational(n: i64, d: i64) -> Self {
        Self::constant(rat(n, d))
    }

    /// The variable `u_{i,k}`.
    pub fn var(component: usize, order: usize) -> Result<Self> {
        if component == 0 {
            return Err(Error::Usage("jet components are numbered from 1".into()));
        }
        if order > MAX_ORDER {
            return Err(Error::OrderBound {
                order,
                bound: MAX_ORDER,
            });
        }
        let mut p = Self::zero();
        p.add_term(vec![(JetVar { component, order }, 1)], BigRational::one());
        Ok(p)
    }

    fn add_term(&mut self, m: Monomial, c: BigRational) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(m) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                *e.get_mut() += c;
                if e.get().is_zero() {
                    e.remove();
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    /// Coefficient of the monomial `1`.
    pub fn constant_term(&self) -> BigRational {
        self.terms.get(&Vec::new()).cloned().unwrap_or_else(BigRational::zero)
    }

    pub fn scale(&self, c: &BigRational) -> Self {
        if c.is_zero() {
            return Self::zero();
        }
        JetPoly {
            terms: self.terms.iter().map(|(m, v)| (m.clone(), v * c)).collect(),
        }
    }

    pub fn pow(&self, n: u32) -> Self {
        (0..n).fold(Self::rational(1, 1), |acc, _| &acc * self)
    }

    /// Largest derivative order of any variable, `None` for a constant.
    pub fn max_order(&self) -> Option<usize> {
        self.variables().map(|v| v.order).max()
    }

    /// Largest component index present.
    pub fn max_component(&self) -> usize {
        self.variables().map(|v| v.component).max().unwrap_or(0)
    }

    fn variables(&self) -> impl Iterator<Item = JetVar> + '_ {
        self.terms.keys().flat_map(|m| m.iter().map(|(v, _)| *v))
    }

    /// `∂p/∂u_{i,k}`.
    pub fn partial(&self, var: JetVar) -> Self {
        let mut out = Self::zero();
        for (m, c) in &self.terms {
            if let Some(pos) = m.iter().position(|(v, _)| *v == var) {
                let e = m[pos].1;
                let mut m2 = m.clone();
                if e == 1 {
                    m2.remove(pos);
                } else {
                    m2[pos].1 -= 1;
                }
                out.add_term(m2, c * BigRational::from_integer(BigInt::from(e)));
            }
        }
        out
    }

    /// Total derivative `D_x`, using `D_x u_{i,k} = u_{i,k+1}`.
    pub fn d_x(&self) -> Result<Self> {
        let mut out = Self::zero();
        for (m, c) in &self.terms {
            for (pos, (v, e)) in m.iter().enumerate() {
                if v.order >= MAX_ORDER {
                    return Err(Error::OrderBound {
                        order: v.order + 1,
                        bound: MAX_ORDER,
                    });
                }
                let mut rest = m.clone();
                if *e == 1 {
                    rest.remove(pos);
                } else {
                    rest[pos].1 -= 1;
                }
                let next = vec![(
                    JetVar {
                        component: v.component,
                        order: v.order + 1,
                    },
                    1,
                )];
                out.add_term(mono_mul(&rest, &next), c * BigRational::from_integer(BigInt::from(*e)));
            }
        }
        Ok(out)
    }

    pub fn d_x_n(&self, n: usize) -> Result<Self> {
        (0..n).try_fold(self.clone(), |p, _| p.d_x())
    }

    /// Replaces every variable by a polynomial, `subst(v)`.
    fn substitute_derivative(&self, mut subst: impl FnMut(JetVar) -> Result<JetPoly>) -> Result<Self> {
        // D_t is a derivation: Σ over occurrences of ∂p/∂v · D_t v
        let mut out = Self::zero();
        let vars: std::collections::BTreeSet<JetVar> = self.variables().collect();
        for v in vars {
            let dv = subst(v)?;
            out = out + &self.partial(v) * &dv;
        }
        Ok(out)
    }

    /// Total time derivative along the vmKdV flow in `ℝᵈ`:
    /// `D_t u_{i,k} = D_x^k(−(3/2)|u|² u_{i,1} − u_{i,3})`.
    pub fn d_t_evolution(&self, d: usize) -> Result<Self> {
        if self.max_component() > d {
            return Err(Error::Usage(format!(
                "polynomial uses component {} but d = {d}",
                self.max_component()
            )));
        }
        let mut rhs = Vec::with_capacity(d);
        let norm2 = norm_sq(d, 0)?;
        for i in 1..=d {
            rhs.push(&(&norm2 * &JetPoly::var(i, 1)?).scale(&rat(-3, 2)) - &JetPoly::var(i, 3)?);
        }
        self.substitute_derivative(|v| rhs[v.component - 1].d_x_n(v.order))
    }

    /// `E_i(p) = Σ_k (−D_x)^k ∂p/∂u_{i,k}`.
    pub fn euler(&self, component: usize) -> Result<Self> {
        let kmax = self
            .variables()
            .filter(|v| v.component == component)
            .map(|v| v.order)
            .max();
        let Some(kmax) = kmax else { return Ok(Self::zero()) };
        let mut out = Self::zero();
        for k in 0..=kmax {
            let part = self.partial(JetVar { component, order: k });
            if part.is_zero() {
                continue;
            }
            let mut term = part.d_x_n(k)?;
            if k % 2 == 1 {
                term = -term;
            }
            out = out + term;
        }
        Ok(out)
    }

    /// Whether every Euler component vanishes, i.e. `p` is a total derivative.
    pub fn is_total_derivative(&self) -> Result<bool> {
        for i in 1..=self.max_component() {
            if !self.euler(i)?.is_zero() {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Antiderivative `g` with `D_x g = p`, by the homotopy operator. Each
    /// monomial of `Σ_i I_i(p)` is divided by its degree, which is the value
    /// of `∫₀¹ λ^{deg − 1} dλ`.
    pub fn homotopy(&self) -> Result<Self> {
        if !self.constant_term().is_zero() {
            return Err(Error::NotATotalDerivative(
                "polynomial has a constant term".into(),
            ));
        }
        if !self.is_total_derivative()? {
            return Err(Error::NotATotalDerivative(format!("{self}")));
        }
        let mut sum = Self::zero();
        for i in 1..=self.max_component() {
            let kmax = self
                .variables()
                .filter(|v| v.component == i)
                .map(|v| v.order)
                .max()
                .unwrap_or(0);
            for k in 1..=kmax {
                let part = self.partial(JetVar { component: i, order: k });
                if part.is_zero() {
                    continue;
                }
                for s in 0..k {
                    let n = k - s - 1;
                    let mut inner = part.d_x_n(n)?;
                    if n % 2 == 1 {
                        inner = -inner;
                    }
                    sum = sum + &JetPoly::var(i, s)? * &inner;
                }
            }
        }
        let mut out = Self::zero();
        for (m, c) in sum.terms {
            let deg = degree(&m);
            out.add_term(m, c / BigRational::from_integer(BigInt::from(deg)));
        }
        Ok(out)
    }

    /// If `self = c · other` for a rational `c`, returns `c`.
    pub fn ratio_to(&self, other: &JetPoly) -> Option<BigRational> {
        let (m, c) = other.terms.iter().next()?;
        let ratio = self.terms.get(m)? / c;
        (self == &other.scale(&ratio)).then_some(ratio)
    }
}

fn fmt_rational(r: &BigRational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

impl fmt::Display for JetPoly {
    /// Terms by increasing degree, then by monomial order.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut terms: Vec<_> = self.terms.iter().collect();
        terms.sort_by(|a, b| degree(a.0).cmp(&degree(b.0)).then_with(|| a.0.cmp(b.0)));
        for (idx, (m, c)) in terms.into_iter().enumerate() {
            let neg = c.is_negative();
            let mag = c.abs();
            match (idx, neg) {
                (0, true) => write!(f, "-")?,
                (0, false) => {}
                (_, true) => write!(f, " - ")?,
                (_, false) => write!(f, " + ")?,
            }
            let factors: Vec<String> = m
                .iter()
                .map(|(v, e)| if *e == 1 { v.to_string() } else { format!("{v}^{e}") })
                .collect();
            if factors.is_empty() {
                write!(f, "{}", fmt_rational(&mag))?;
            } else if mag.is_one() {
                write!(f, "{}", factors.join("*"))?;
            } else {
                write!(f, "{}*{}", fmt_rational(&mag), factors.join("*"))?;
            }
        }
        Ok(())
    }
}

impl Add for JetPoly {
    type Output = JetPoly;
    fn add(mut self, rhs: JetPoly) -> JetPoly {
        for (m, c) in rhs.terms {
            self.add_term(m, c);
        }
        self
    }
}

impl Add for &JetPoly {
    type Output = JetPoly;
    fn add(self, rhs: &JetPoly) -> JetPoly {
        self.clone() + rhs.clone()
    }
}

impl Neg for JetPoly {
    type Output = JetPoly;
    fn neg(self) -> JetPoly {
        JetPoly {
            terms: self.terms.into_iter().map(|(m, c)| (m, -c)).collect(),
        }
    }
}

impl Sub for JetPoly {
    type Output = JetPoly;
    fn sub(self, rhs: JetPoly) -> JetPoly {
        self + (-rhs)
    }
}

impl Sub for &JetPoly {
    type Output = JetPoly;
    fn sub(self, rhs: &JetPoly) -> JetPoly {
        self.clone() - rhs.clone()
    }
}

impl Mul for &JetPoly {
    type Output = JetPoly;
    fn mul(self, rhs: &JetPoly) -> JetPoly {
        let mut out = JetPoly::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &rhs.terms {
                out.add_term(mono_mul(ma, mb), ca * cb);
            }
        }
        out
    }
}

/// `Σ_i u_{i,a} u_{i,b}`.
pub fn inner(d: usize, a: usize, b: usize) -> Result<JetPoly> {
    let mut out = JetPoly::zero();
    for i in 1..=d {
        out = out + &JetPoly::var(i, a)? * &JetPoly::var(i, b)?;
    }
    Ok(out)
}

/// `|u_{k}|² = Σ_i u_{i,k}²`.
pub fn norm_sq(d: usize, order: usize) -> Result<JetPoly> {
    inner(d, order, order)
}

/// Momentum density `½|u|²`.
pub fn f2(d: usize) -> Result<JetPoly> {
    Ok(norm_sq(d, 0)?.scale(&rat(1, 2)))
}

/// Energy density `½|u_x|² − ⅛|u|⁴`.
pub fn f4(d: usize) -> Result<JetPoly> {
    Ok(norm_sq(d, 1)?.scale(&rat(1, 2)) - norm_sq(d, 0)?.pow(2).scale(&rat(1, 8)))
}

/// `½|u|⁶ + 10(u·u_x)² + |u|²|u_x|² + 7|u|²(u·u_xx) + 4|u_xx|²`.
pub fn f6(d: usize) -> Result<JetPoly> {
    let uu = norm_sq(d, 0)?;
    Ok(uu.pow(3).scale(&rat(1, 2))
        + inner(d, 0, 1)?.pow(2).scale(&rat(10, 1))
        + &uu * &norm_sq(d, 1)?
        + (&uu * &inner(d, 0, 2)?).scale(&rat(7, 1))
        + norm_sq(d, 2)?.scale(&rat(4, 1)))
}

/// Flux printed alongside `f2`: `|u_x|² − 2u·u_xx − ¾|u|⁴`.
pub fn printed_g2(d: usize) -> Result<JetPoly> {
    Ok(norm_sq(d, 1)? - inner(d, 0, 2)?.scale(&rat(2, 1)) - norm_sq(d, 0)?.pow(2).scale(&rat(3, 4)))
}

/// Flux printed alongside `f4`.
pub fn printed_g4(d: usize) -> Result<JetPoly> {
    let uu = norm_sq(d, 0)?;
    Ok(uu.pow(3).scale(&rat(1, 8))
        - &uu * &norm_sq(d, 1)?
        - inner(d, 0, 1)?.pow(2).scale(&rat(1, 2))
        - inner(d, 1, 3)?
        + norm_sq(d, 2)?.scale(&rat(1, 2))
        + (&uu * &inner(d, 0, 2)?).scale(&rat(1, 2)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conservation {
    pub is_conserved: bool,
    /// `D_t f` along the flow.
    pub rate: JetPoly,
    /// `g` with `D_x g = D_t f`, when conserved.
    pub flux: Option<JetPoly>,
}

/// Decides whether `density` is conserved by the `d`-component flow and, if
/// so, reconstructs its flux.
pub fn verify_conservation(density: &JetPoly, d: usize) -> Result<Conservation> {
    let rate = density.d_t_evolution(d)?;
    let mut conserved = true;
    for i in 1..=d {
        if !rate.euler(i)?.is_zero() {
            conserved = false;
            break;
        }
    }
    let flux = if conserved && !rate.is_zero() {
        Some(rate.homotopy()?)
    } else if conserved {
        Some(JetPoly::zero())
    } else {
        None
    };
    Ok(Conservation {
        is_conserved: conserved,
        rate,
        flux,
    })
}

/// Comparison of a reconstructed flux with a reference one.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxAudit {
    pub computed: JetPoly,
    pub reference: JetPoly,
    /// `reference = ratio · computed` when they are proportional.
    pub ratio: Option<BigRational>,
    pub difference: JetPoly,
    /// Whether `D_x reference` equals `D_t f`.
    pub reference_is_flux: bool,
}

pub fn audit_flux(density: &JetPoly, reference: &JetPoly, d: usize) -> Result<FluxAudit> {
    let c = verify_conservation(density, d)?;
    let computed = c
        .flux
        .ok_or_else(|| Error::NotATotalDerivative(format!("D_t of {density} is not a total derivative")))?;
    let reference_is_flux = reference.d_x()? == c.rate;
    Ok(FluxAudit {
        ratio: reference.ratio_to(&computed),
        difference: reference - &computed,
        computed,
        reference: reference.clone(),
        reference_is_flux,
    })
}
