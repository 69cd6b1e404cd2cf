//! Direct solvers for the cyclic-banded systems produced by periodic assembly.
//!
//! A periodic C⁰ space couples global DOF 0 to both ends of the DOF range.
//! Moving DOF 0 (and any dense unknowns such as a Lagrange multiplier) into a
//! small border leaves a strictly banded inner block, so every system here is
//!
//! ```text
//! | A  B | | x_in |   | r_in |
//! | C  D | | x_b  | = | r_b  |
//! ```
//!
//! with `A` banded. It is solved by a pivoted band LU of `A` and a dense LU of
//! the Schur complement `D - C A⁻¹ B`.

#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};

/// Square band matrix with room for the fill-in produced by partial pivoting.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.slot(i, j)]
        } else {
            0.0
        }
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            y[i] = (lo..=hi).map(|j| self.data[self.slot(i, j)] * x[j]).sum();
        }
    }

    /// LU factorisation with partial pivoting (row interchanges within the band).
    pub fn factor(self) -> Result<BandLu> {
        self.factor_with(None).map(|(lu, _)| lu)
    }

    // With `replace = Some(r)`, a pivot below `r·max|a|` is set to `±max|a|`
    // instead of failing: a rank-one change whose size only needs to avoid
    // element growth. Returns how many pivots were replaced.
    fn factor_with(mut self, replace: Option<f64>) -> Result<(BandLu, usize)> {
        let n = self.n;
        let (kl, ku, w) = (self.kl, self.ku, self.width);
        let scale = self.max_abs();
        let mut pivots = vec![0usize; n];
        let mut replaced = 0;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.data[self.slot(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if let Some(r) = replace {
                if best <= r * scale {
                    p = k;
                    let d = self.slot(k, k);
                    self.data[d] = if self.data[d] < 0.0 { -scale } else { scale };
                    replaced += 1;
                }
            } else if best == 0.0 || best <= 1e-15 * scale {
                return Err(Error::Singular { row: k });
            }
            pivots[k] = p;
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.slot(k, j), self.slot(p, j));
                    self.data.swap(a, b);
                }
            }
            let diag = self.data[self.slot(k, k)];
            let len = last_col - k;
            let row_k_start = k * w + kl + 1;
            for i in k + 1..=last_row {
                let sik = self.slot(i, k);
                let l = self.data[sik] / diag;
                self.data[sik] = l;
                if l == 0.0 {
                    continue;
                }
                let row_i_start = self.slot(i, k + 1);
                let (head, tail) = self.data.split_at_mut(row_i_start);
                let pivot_row = &head[row_k_start..row_k_start + len];
                for (a, &b) in tail[..len].iter_mut().zip(pivot_row) {
                    *a -= l * b;
                }
            }
        }
        Ok((BandLu { lu: self, pivots }, replaced))
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    lu: BandMatrix,
    pivots: Vec<usize>,
}

impl BandLu {
    pub fn dim(&self) -> usize {
        self.lu.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let a = &self.lu;
        let n = a.n;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                // column k below the diagonal has stride width − 1 in storage
                let last = (k + a.kl).min(n - 1);
                let mut s = a.slot(k, k);
                for bi in &mut b[k + 1..=last] {
                    s += a.width - 1;
                    *bi -= a.data[s] * bk;
                }
            }
        }
        for i in (0..n).rev() {
            let hi = (i + a.kl + a.ku).min(n - 1);
            let start = a.slot(i, i);
            let row = &a.data[start..start + (hi - i) + 1];
            let s: f64 = row[1..].iter().zip(&b[i + 1..=hi]).map(|(x, y)| x * y).sum();
            b[i] = (b[i] - s) / row[0];
        }
    }
}

/// Small dense LU with partial pivoting.
#[derive(Debug, Clone)]
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    pivots: Vec<usize>,
}

impl DenseLu {
    /// Factorises the row-major `n × n` matrix `a`. A column whose pivot is
    /// negligible against that column's original magnitude is reported singular.
    pub fn factor(n: usize, mut a: Vec<f64>) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let col_scale: Vec<f64> = (0..n)
            .map(|j| (0..n).fold(0.0_f64, |m, i| m.max(a[i * n + j].abs())))
            .collect();
        let mut pivots = vec![0; n];
        for k in 0..n {
            let p = (k..n)
                .max_by(|&x, &y| a[x * n + k].abs().total_cmp(&a[y * n + k].abs()))
                .unwrap();
            let best = a[p * n + k].abs();
            if best == 0.0 || best <= 1e-13 * col_scale[k] {
                return Err(Error::Singular { row: k });
            }
            pivots[k] = p;
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
            }
            let d = a[k * n + k];
            for i in k + 1..n {
                let l = a[i * n + k] / d;
                a[i * n + k] = l;
                for j in k + 1..n {
                    a[i * n + j] -= l * a[k * n + j];
                }
            }
        }
        Ok(DenseLu { n, lu: a, pivots })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            b.swap(k, self.pivots[k]);
            for i in k + 1..n {
                b[i] -= self.lu[i * n + k] * b[k];
            }
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.lu[i * n + j] * b[j]).sum();
            b[i] = (b[i] - s) / self.lu[i * n + i];
        }
    }
}

/// Where a logical unknown lives inside a [`BorderedMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Inner(usize),
    Border(usize),
}

/// Band matrix bordered by a few dense rows and columns.
#[derive(Debug, Clone)]
pub struct BorderedMatrix {
    inner: BandMatrix,
    border: usize,
    /// `B`, stored column by column.
    cols: Vec<f64>,
    /// `C`, stored row by row.
    rows: Vec<f64>,
    /// `D`, row-major.
    corner: Vec<f64>,
}

impl BorderedMatrix {
    pub fn zeros(inner: usize, kl: usize, ku: usize, border: usize) -> Self {
        BorderedMatrix {
            inner: BandMatrix::zeros(inner, kl, ku),
            border,
            cols: vec![0.0; inner * border],
            rows: vec![0.0; inner * border],
            corner: vec![0.0; border * border],
        }
    }

    pub fn inner_dim(&self) -> usize {
        self.inner.n
    }

    pub fn border_dim(&self) -> usize {
        self.border
    }

    pub fn dim(&self) -> usize {
        self.inner.n + self.border
    }

    pub fn band(&self) -> &BandMatrix {
        &self.inner
    }

    #[inline]
    pub fn add(&mut self, row: Slot, col: Slot, v: f64) {
        let n = self.inner.n;
        match (row, col) {
            (Slot::Inner(i), Slot::Inner(j)) => self.inner.add(i, j, v),
            (Slot::Inner(i), Slot::Border(b)) => self.cols[b * n + i] += v,
            (Slot::Border(b), Slot::Inner(j)) => self.rows[b * n + j] += v,
            (Slot::Border(a), Slot::Border(b)) => self.corner[a * self.border + b] += v,
        }
    }

    pub fn get(&self, row: Slot, col: Slot) -> f64 {
        let n = self.inner.n;
        match (row, col) {
            (Slot::Inner(i), Slot::Inner(j)) => self.inner.get(i, j),
            (Slot::Inner(i), Slot::Border(b)) => self.cols[b * n + i],
            (Slot::Border(b), Slot::Inner(j)) => self.rows[b * n + j],
            (Slot::Border(a), Slot::Border(b)) => self.corner[a * self.border + b],
        }
    }

    /// Replaces border row `b` by the unit row selecting border unknown `b`.
    pub fn set_border_identity_row(&mut self, b: usize) {
        let n = self.inner.n;
        self.rows[b * n..(b + 1) * n].iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.border {
            self.corner[b * self.border + j] = if j == b { 1.0 } else { 0.0 };
        }
    }

    /// `y = M x` with `x`, `y` split as `[inner, border]`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.inner.n;
        let nb = self.border;
        let (xi, xb) = x.split_at(n);
        let (yi, yb) = y.split_at_mut(n);
        self.inner.matvec(xi, yi);
        for b in 0..nb {
            let col = &self.cols[b * n..(b + 1) * n];
            for (y, c) in yi.iter_mut().zip(col) {
                *y += c * xb[b];
            }
        }
        for a in 0..nb {
            let row = &self.rows[a * n..(a + 1) * n];
            yb[a] = row.iter().zip(xi).map(|(r, x)| r * x).sum::<f64>()
                + (0..nb).map(|b| self.corner[a * nb + b] * xb[b]).sum::<f64>();
        }
    }

    /// Infinity norm (largest absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        let n = self.inner.n;
        let nb = self.border;
        let a = &self.inner;
        let inner_rows = (0..n).map(|i| {
            let lo = i.saturating_sub(a.kl);
            let hi = (i + a.ku).min(n - 1);
            (lo..=hi).map(|j| a.data[a.slot(i, j)].abs()).sum::<f64>()
                + (0..nb).map(|b| self.cols[b * n + i].abs()).sum::<f64>()
        });
        let border_rows = (0..nb).map(|b| {
            self.rows[b * n..(b + 1) * n].iter().map(|v| v.abs()).sum::<f64>()
                + self.corner[b * nb..(b + 1) * nb].iter().map(|v| v.abs()).sum::<f64>()
        });
        inner_rows.chain(border_rows).fold(0.0, f64::max)
    }

    /// Block elimination around the band.
    ///
    /// The band block alone can be singular or badly conditioned while the
    /// whole matrix is not. Band pivots below `√ε·max|a|` are therefore
    /// raised to `max|a|`. That makes this the exact factorisation of a
    /// low-rank modification, and [`BorderedLu::solve_in_place`] uses it as
    /// a preconditioner for GMRES on the original matrix.
    pub fn factor(self) -> Result<BorderedLu> {
        let n = self.inner.n;
        let nb = self.border;
        let norm = self.norm_inf();
        let original = self.clone();
        let BorderedMatrix {
            inner,
            cols,
            rows,
            corner,
            ..
        } = self;
        let (inner, _) = inner.factor_with(Some(f64::EPSILON.sqrt()))?;
        // Z = A⁻¹ B
        let mut z = cols;
        for b in 0..nb {
            inner.solve_in_place(&mut z[b * n..(b + 1) * n]);
        }
        let mut schur = corner;
        for a in 0..nb {
            let row = &rows[a * n..(a + 1) * n];
            for b in 0..nb {
                let zc = &z[b * n..(b + 1) * n];
                schur[a * nb + b] -= row.iter().zip(zc).map(|(r, z)| r * z).sum::<f64>();
            }
        }
        let schur = DenseLu::factor(nb, schur).map_err(|e| match e {
            Error::Singular { row } => Error::Singular { row: n + row },
            e => e,
        })?;
        Ok(BorderedLu {
            inner,
            z,
            rows,
            schur,
            n,
            nb,
            original,
            norm,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BorderedLu {
    inner: BandLu,
    z: Vec<f64>,
    rows: Vec<f64>,
    schur: DenseLu,
    n: usize,
    nb: usize,
    original: BorderedMatrix,
    norm: f64,
}

const KRYLOV_DIM: usize = 12;
const MAX_RESTARTS: usize = 4;

impl BorderedLu {
    /// Solves in place; `b` is split as `[inner, border]`.
    ///
    /// Stops once the residual is at rounding level relative to
    /// `‖A‖‖x‖ + ‖b‖`, or when a restart fails to halve it.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let rhs = b.to_vec();
        self.eliminate(b);
        let mut last = f64::INFINITY;
        for _ in 0..MAX_RESTARTS {
            let r = self.residual(&rhs, b);
            let res = max_abs(&r);
            let tol = 4.0 * f64::EPSILON * (self.norm * max_abs(b) + max_abs(&rhs));
            if res <= tol || res > 0.5 * last {
                return;
            }
            last = res;
            let d = self.gmres(&r, tol);
            b.iter_mut().zip(&d).for_each(|(x, d)| *x += d);
        }
    }

    fn residual(&self, rhs: &[f64], x: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; x.len()];
        self.original.matvec(x, &mut r);
        r.iter_mut().zip(rhs).for_each(|(r, c)| *r = c - *r);
        r
    }

    // Right-preconditioned GMRES for `A d = r`, started from zero.
    fn gmres(&self, r: &[f64], tol: f64) -> Vec<f64> {
        let n = r.len();
        let beta = norm2(r);
        let mut basis = vec![r.iter().map(|v| v / beta).collect::<Vec<_>>()];
        let mut h = vec![vec![0.0; KRYLOV_DIM]; KRYLOV_DIM + 1];
        let (mut cs, mut sn) = ([0.0; KRYLOV_DIM], [0.0; KRYLOV_DIM]);
        let mut g = [0.0; KRYLOV_DIM + 1];
        g[0] = beta;
        let mut k = 0;
        while k < KRYLOV_DIM {
            let mut z = basis[k].clone();
            self.eliminate(&mut z);
            let mut w = vec![0.0; n];
            self.original.matvec(&z, &mut w);
            for (i, v) in basis.iter().enumerate() {
                h[i][k] = dot(&w, v);
                w.iter_mut().zip(v).for_each(|(w, v)| *w -= h[i][k] * v);
            }
            let next = norm2(&w);
            h[k + 1][k] = next;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let rho = h[k][k].hypot(h[k + 1][k]);
            if rho == 0.0 {
                break;
            }
            cs[k] = h[k][k] / rho;
            sn[k] = h[k + 1][k] / rho;
            h[k][k] = rho;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k += 1;
            if g[k].abs() <= tol || next == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / next).collect());
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| h[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        let mut d = vec![0.0; n];
        for (v, yi) in basis.iter().zip(&y) {
            d.iter_mut().zip(v).for_each(|(d, v)| *d += yi * v);
        }
        self.eliminate(&mut d);
        d
    }

    fn eliminate(&self, b: &mut [f64]) {
        let (n, nb) = (self.n, self.nb);
        let (bi, bb) = b.split_at_mut(n);
        self.inner.solve_in_place(bi);
        for a in 0..nb {
            let row = &self.rows[a * n..(a + 1) * n];
            bb[a] -= row.iter().zip(bi.iter()).map(|(r, y)| r * y).sum::<f64>();
        }
        self.schur.solve_in_place(bb);
        for b in 0..nb {
            let zc = &self.z[b * n..(b + 1) * n];
            let xb = bb[b];
            for (y, z) in bi.iter_mut().zip(zc) {
                *y -= z * xb;
            }
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}
