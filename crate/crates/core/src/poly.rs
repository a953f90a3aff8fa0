//! Polynomial vector fields with exact differentiation and Lie brackets.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single term `coeff * x_1^{e_1} ... x_n^{e_n}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub exps: Vec<u32>,
}

/// Sparse polynomial in `n` variables. Zero coefficients are never stored,
/// so structural equality is exact polynomial equality.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polynomial {
    n: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl Polynomial {
    pub fn zero(n: usize) -> Self {
        Self {
            n,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        let mut p = Self::zero(n);
        p.add_term(vec![0; n], c);
        p
    }

    /// The coordinate function `x_i`.
    pub fn var(n: usize, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        let mut p = Self::zero(n);
        p.add_term(e, 1.0);
        p
    }

    pub fn from_monomials(n: usize, monomials: &[Monomial]) -> Result<Self> {
        let mut p = Self::zero(n);
        for m in monomials {
            if m.exps.len() != n {
                return Err(Error::InvalidSystem(format!(
                    "monomial has {} exponents, expected {n}",
                    m.exps.len()
                )));
            }
            if !m.coeff.is_finite() {
                return Err(Error::InvalidSystem("non-finite coefficient".into()));
            }
            p.add_term(m.exps.clone(), m.coeff);
        }
        Ok(p)
    }

    pub fn monomials(&self) -> Vec<Monomial> {
        self.terms
            .iter()
            .map(|(e, &c)| Monomial {
                coeff: c,
                exps: e.clone(),
            })
            .collect()
    }

    pub fn n_vars(&self) -> usize {
        self.n
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    fn add_term(&mut self, exps: Vec<u32>, c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(exps);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                c * e
                    .iter()
                    .zip(x)
                    .map(|(&k, &xi)| xi.powi(k as i32))
                    .product::<f64>()
            })
            .sum()
    }

    pub fn derivative(&self, i: usize) -> Self {
        let mut out = Self::zero(self.n);
        for (e, &c) in &self.terms {
            if e[i] > 0 {
                let mut f = e.clone();
                f[i] -= 1;
                out.add_term(f, c * e[i] as f64);
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (e, &c) in &other.terms {
            out.add_term(e.clone(), c);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = Self::zero(self.n);
        for (e, &c) in &self.terms {
            out.add_term(e.clone(), c * s);
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero(self.n);
        for (e, &c) in &self.terms {
            for (f, &d) in &other.terms {
                let g = e.iter().zip(f).map(|(a, b)| a + b).collect();
                out.add_term(g, c * d);
            }
        }
        out
    }

    /// Substitute `x_i = sum_j m[(i, j)] y_j`.
    pub fn compose_linear(&self, m: &DMatrix<f64>) -> Self {
        let rows: Vec<Self> = (0..self.n)
            .map(|i| {
                let mut p = Self::zero(self.n);
                for j in 0..self.n {
                    p = p.add(&Self::var(self.n, j).scale(m[(i, j)]));
                }
                p
            })
            .collect();
        let mut out = Self::zero(self.n);
        for (e, &c) in &self.terms {
            let mut term = Self::constant(self.n, c);
            for (i, &k) in e.iter().enumerate() {
                for _ in 0..k {
                    term = term.mul(&rows[i]);
                }
            }
            out = out.add(&term);
        }
        out
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(e, c)| {
                let vars: Vec<String> = e
                    .iter()
                    .enumerate()
                    .filter(|(_, &k)| k > 0)
                    .map(|(i, &k)| {
                        if k == 1 {
                            format!("x{}", i + 1)
                        } else {
                            format!("x{}^{k}", i + 1)
                        }
                    })
                    .collect();
                if vars.is_empty() {
                    format!("{c}")
                } else {
                    format!("{c}*{}", vars.join("*"))
                }
            })
            .collect();
        f.write_str(&parts.join(" + "))
    }
}

/// Polynomial vector field on `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: Vec<Polynomial>,
}

impl VectorField {
    pub fn new(components: Vec<Polynomial>) -> Result<Self> {
        let n = components.len();
        if n == 0 {
            return Err(Error::InvalidSystem(
                "vector field needs at least one component".into(),
            ));
        }
        if components.iter().any(|p| p.n_vars() != n) {
            return Err(Error::InvalidSystem(format!(
                "every component must be a polynomial in {n} variables"
            )));
        }
        Ok(Self { components })
    }

    pub fn zero(n: usize) -> Self {
        Self {
            components: vec![Polynomial::zero(n); n],
        }
    }

    /// Constant field `c`.
    pub fn constant(c: &[f64]) -> Self {
        let n = c.len();
        Self {
            components: c.iter().map(|&v| Polynomial::constant(n, v)).collect(),
        }
    }

    /// Linear field `x -> A x`.
    pub fn linear(a: &DMatrix<f64>) -> Self {
        let n = a.nrows();
        Self {
            components: (0..n)
                .map(|i| {
                    (0..n).fold(Polynomial::zero(n), |p, j| {
                        p.add(&Polynomial::var(n, j).scale(a[(i, j)]))
                    })
                })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(Polynomial::is_zero)
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.components.iter().map(|p| p.eval(x)))
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.components) {
            *o = p.eval(x);
        }
    }

    /// Symbolic Jacobian, `jac[i][j] = d V_i / d x_j`.
    pub fn jacobian_field(&self) -> Vec<Vec<Polynomial>> {
        let n = self.dim();
        self.components
            .iter()
            .map(|p| (0..n).map(|j| p.derivative(j)).collect())
            .collect()
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.components[i].derivative(j).eval(x))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.add(b))
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            components: self.components.iter().map(|a| a.scale(s)).collect(),
        }
    }

    /// Directional derivative `DW . V` of `self = W` along `v`.
    fn derivative_along(&self, v: &Self) -> Self {
        let n = self.dim();
        Self {
            components: self
                .components
                .iter()
                .map(|w| {
                    (0..n).fold(Polynomial::zero(n), |acc, j| {
                        acc.add(&w.derivative(j).mul(&v.components[j]))
                    })
                })
                .collect(),
        }
    }

    /// Lie bracket `[self, w] = Dw . self - D self . w`.
    pub fn bracket(&self, w: &Self) -> Result<Self> {
        if self.dim() != w.dim() {
            return Err(Error::InvalidSystem(format!(
                "bracket of fields on R^{} and R^{}",
                self.dim(),
                w.dim()
            )));
        }
        let a = w.derivative_along(self);
        let b = self.derivative_along(w);
        Ok(Self {
            components: a
                .components
                .iter()
                .zip(&b.components)
                .map(|(x, y)| x.sub(y))
                .collect(),
        })
    }

    /// Push-forward under `y = Q x`: the field `y -> Q V(Q^{-1} y)`.
    pub fn linear_change(&self, q: &DMatrix<f64>) -> Result<Self> {
        let qinv = q
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::domain("change of coordinates must be invertible"))?;
        let n = self.dim();
        let pulled: Vec<Polynomial> = self
            .components
            .iter()
            .map(|p| p.compose_linear(&qinv))
            .collect();
        Ok(Self {
            components: (0..n)
                .map(|i| {
                    (0..n).fold(Polynomial::zero(n), |acc, j| {
                        acc.add(&pulled[j].scale(q[(i, j)]))
                    })
                })
                .collect(),
        })
    }

    fn to_raw(&self) -> Vec<Vec<Monomial>> {
        self.components.iter().map(Polynomial::monomials).collect()
    }

    fn from_raw(n: usize, raw: &[Vec<Monomial>]) -> Result<Self> {
        if raw.len() != n {
            return Err(Error::InvalidSystem(format!(
                "field has {} components, state dimension is {n}",
                raw.len()
            )));
        }
        Self::new(
            raw.iter()
                .map(|m| Polynomial::from_monomials(n, m))
                .collect::<Result<_>>()?,
        )
    }
}

impl fmt::Display for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.components.iter().map(|p| p.to_string()).collect();
        write!(f, "({})", parts.join(", "))
    }
}

/// Drift `V_0` and diffusion fields `V_1..V_d` on `R^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSystem", into = "RawSystem")]
pub struct VectorFieldSystem {
    pub n: usize,
    pub d: usize,
    pub drift: Option<VectorField>,
    pub fields: Vec<VectorField>,
    /// Default starting point.
    pub x0: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RawSystem {
    n: usize,
    d: usize,
    #[serde(default)]
    drift: Option<Vec<Vec<Monomial>>>,
    fields: Vec<Vec<Vec<Monomial>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x0: Option<Vec<f64>>,
}

impl TryFrom<RawSystem> for VectorFieldSystem {
    type Error = Error;

    fn try_from(raw: RawSystem) -> Result<Self> {
        let drift = raw
            .drift
            .as_deref()
            .map(|f| VectorField::from_raw(raw.n, f))
            .transpose()?;
        let fields = raw
            .fields
            .iter()
            .map(|f| VectorField::from_raw(raw.n, f))
            .collect::<Result<Vec<_>>>()?;
        let mut sys = Self::new(raw.n, drift, fields)?;
        if raw.d != sys.d {
            return Err(Error::InvalidSystem(format!(
                "declared d = {} but {} diffusion fields given",
                raw.d, sys.d
            )));
        }
        if let Some(x0) = raw.x0 {
            sys = sys.with_x0(x0)?;
        }
        Ok(sys)
    }
}

impl From<VectorFieldSystem> for RawSystem {
    fn from(s: VectorFieldSystem) -> Self {
        RawSystem {
            n: s.n,
            d: s.d,
            drift: s.drift.as_ref().map(VectorField::to_raw),
            fields: s.fields.iter().map(VectorField::to_raw).collect(),
            x0: s.x0,
        }
    }
}

impl VectorFieldSystem {
    pub fn new(n: usize, drift: Option<VectorField>, fields: Vec<VectorField>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSystem(
                "state dimension must be positive".into(),
            ));
        }
        if fields.is_empty() {
            return Err(Error::InvalidSystem(
                "at least one diffusion field is required".into(),
            ));
        }
        if fields.iter().chain(drift.iter()).any(|f| f.dim() != n) {
            return Err(Error::InvalidSystem(format!(
                "all fields must act on R^{n}"
            )));
        }
        let drift = drift.filter(|f| !f.is_zero());
        if fields
            .iter()
            .chain(drift.iter())
            .any(|f| f.components.iter().any(|p| p.degree() > 1))
        {
            log::debug!("system has superlinear polynomial fields; blow-up detection is active");
        }
        Ok(Self {
            n,
            d: fields.len(),
            drift,
            fields,
            x0: None,
        })
    }

    pub fn with_x0(mut self, x0: Vec<f64>) -> Result<Self> {
        if x0.len() != self.n {
            return Err(Error::InvalidSystem(format!(
                "starting point has {} coordinates, expected {}",
                x0.len(),
                self.n
            )));
        }
        self.x0 = Some(x0);
        Ok(self)
    }

    pub fn x0_or_origin(&self) -> Vec<f64> {
        self.x0.clone().unwrap_or_else(|| vec![0.0; self.n])
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `n x d` matrix with columns `V_j(x)`.
    pub fn diffusion_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.d);
        for (j, f) in self.fields.iter().enumerate() {
            m.set_column(j, &f.eval(x));
        }
        m
    }

    /// Same system in coordinates `y = Q x` (starting point mapped too).
    pub fn linear_change(&self, q: &DMatrix<f64>) -> Result<Self> {
        let drift = self
            .drift
            .as_ref()
            .map(|f| f.linear_change(q))
            .transpose()?;
        let fields = self
            .fields
            .iter()
            .map(|f| f.linear_change(q))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Self::new(self.n, drift, fields)?;
        if let Some(x0) = &self.x0 {
            let y = q * DVector::from_column_slice(x0);
            out.x0 = Some(y.iter().copied().collect());
        }
        Ok(out)
    }

    /// Replace the diffusion fields by `W_k = sum_j m[(j, k)] V_j`.
    pub fn recombine_fields(&self, m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != self.d || m.ncols() != self.d {
            return Err(Error::InvalidSystem(
                "recombination matrix must be d x d".into(),
            ));
        }
        let fields = (0..self.d)
            .map(|k| {
                (0..self.d).fold(VectorField::zero(self.n), |acc, j| {
                    acc.add(&self.fields[j].scale(m[(j, k)]))
                })
            })
            .collect();
        let mut out = Self::new(self.n, self.drift.clone(), fields)?;
        out.x0 = self.x0.clone();
        Ok(out)
    }
}


/// Flattened field and Jacobian for repeated numeric evaluation.
#[derive(Debug, Clone)]
pub struct CompiledField {
    n: usize,
    /// `(output index, coefficient, exponents)`; Jacobian outputs are `i * n + j`.
    value: Vec<(usize, f64, Vec<u32>)>,
    jac: Vec<(usize, f64, Vec<u32>)>,
}

fn monomial_value(exps: &[u32], x: &[f64]) -> f64 {
    exps.iter()
        .zip(x)
        .filter(|(&k, _)| k > 0)
        .map(|(&k, &xi)| xi.powi(k as i32))
        .product()
}

impl CompiledField {
    pub fn new(field: &VectorField) -> Self {
        let n = field.dim();
        let mut value = Vec::new();
        let mut jac = Vec::new();
        for (i, p) in field.components.iter().enumerate() {
            for (e, &c) in &p.terms {
                value.push((i, c, e.clone()));
            }
            for j in 0..n {
                for (e, &c) in &p.derivative(j).terms {
                    jac.push((i * n + j, c, e.clone()));
                }
            }
        }
        Self { n, value, jac }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `out += s * V(x)`.
    pub fn add_value(&self, x: &[f64], s: f64, out: &mut [f64]) {
        for (i, c, e) in &self.value {
            out[*i] += s * c * monomial_value(e, x);
        }
    }

    /// `out += s * DV(x)` with `out` a column-major `n x n` matrix.
    pub fn add_jacobian(&self, x: &[f64], s: f64, out: &mut DMatrix<f64>) {
        for (k, c, e) in &self.jac {
            let (i, j) = (k / self.n, k % self.n);
            out[(i, j)] += s * c * monomial_value(e, x);
        }
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        self.add_value(x, 1.0, out.as_mut_slice());
        out
    }

    /// True when every Jacobian entry vanishes identically.
    pub fn is_constant(&self) -> bool {
        self.jac.is_empty()
    }
}

/// Compiled drift and diffusion fields of a system.
#[derive(Debug, Clone)]
pub struct CompiledSystem {
    pub n: usize,
    pub d: usize,
    pub drift: Option<CompiledField>,
    pub fields: Vec<CompiledField>,
}

impl CompiledSystem {
    pub fn new(sys: &VectorFieldSystem) -> Self {
        Self {
            n: sys.n,
            d: sys.d,
            drift: sys.drift.as_ref().map(CompiledField::new),
            fields: sys.fields.iter().map(CompiledField::new).collect(),
        }
    }

    /// `V_0(x) dt + sum_i V_i(x) db_i`.
    pub fn increment(&self, x: &[f64], dt: f64, db: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        if let Some(v0) = &self.drift {
            v0.add_value(x, dt, out);
        }
        for (f, &b) in self.fields.iter().zip(db) {
            if b != 0.0 {
                f.add_value(x, b, out);
            }
        }
    }

    /// Jacobian of [`Self::increment`] in `x`.
    pub fn increment_jacobian(&self, x: &[f64], dt: f64, db: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        if let Some(v0) = &self.drift {
            v0.add_jacobian(x, dt, &mut m);
        }
        for (f, &b) in self.fields.iter().zip(db) {
            if b != 0.0 {
                f.add_jacobian(x, b, &mut m);
            }
        }
        m
    }

    /// `n x d` matrix of diffusion fields at `x`.
    pub fn diffusion_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.d);
        for (j, f) in self.fields.iter().enumerate() {
            let mut col = vec![0.0; self.n];
            f.add_value(x, 1.0, &mut col);
            m.set_column(j, &DVector::from_vec(col));
        }
        m
    }
}
