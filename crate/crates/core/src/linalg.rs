//! Small dense linear algebra on row-major `f64` buffers: just enough for
//! Cholesky-based GP and kernel-ridge solves.

/// Dot product with four independent accumulators, so the compiler can
/// vectorize it.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let (ca, ra) = a.split_at(n - n % 4);
    let (cb, rb) = b.split_at(n - n % 4);
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Square symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Builds a matrix from a symmetric generator, evaluating only `j <= i`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                m.data[i * n + j] = v;
                m.data[j * n + i] = v;
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += v;
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Returns `None` when a pivot is not strictly positive and finite.
    pub fn factor(a: &SymMatrix) -> Option<Self> {
        let n = a.n;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let (head, tail) = l.split_at_mut((j + 1) * n);
            let row_j = &mut head[j * n..];
            let d = a.get(j, j) - dot(&row_j[..j], &row_j[..j]);
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            row_j[j] = djj;
            let row_j = &row_j[..j];
            for (r, row_i) in tail.chunks_exact_mut(n).enumerate() {
                let i = j + 1 + r;
                let s = dot(&row_i[..j], row_j);
                row_i[j] = (a.get(i, j) - s) / djj;
            }
        }
        Some(Self { n, l })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s = dot(row, &x[..i]);
            x[i] = (x[i] - s) / self.l[i * n + i];
        }
        x
    }

    /// Solves `Lᵀ x = b`.
    pub fn solve_upper(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let s: f64 = x[i + 1..].iter().enumerate().map(|(k, xk)| self.l[(i + 1 + k) * n + i] * xk).sum();
            x[i] = (x[i] - s) / self.l[i * n + i];
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `log |A|`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>()
    }

    /// Explicit `A⁻¹`, via `L⁻¹` and `A⁻¹ = L⁻ᵀ L⁻¹`.
    pub fn inverse(&self) -> SymMatrix {
        let n = self.n;
        // Column j of L⁻¹ stored contiguously at cols[j*n..]; entries above
        // the diagonal stay zero.
        let mut cols = vec![0.0; n * n];
        for j in 0..n {
            let col = &mut cols[j * n..(j + 1) * n];
            col[j] = 1.0 / self.l[j * n + j];
            for i in (j + 1)..n {
                let row = &self.l[i * n + j..i * n + i];
                let s = dot(row, &col[j..i]);
                col[i] = -s / self.l[i * n + i];
            }
        }
        SymMatrix::from_fn(n, |i, j| {
            // (L⁻ᵀL⁻¹)_ij = Σ_k L⁻¹_ki L⁻¹_kj over k >= max(i, j)
            let k0 = i.max(j);
            dot(&cols[i * n + k0..(i + 1) * n], &cols[j * n + k0..(j + 1) * n])
        })
    }

    /// Reconstructs `L Lᵀ`.
    pub fn reconstruct(&self) -> SymMatrix {
        let n = self.n;
        SymMatrix::from_fn(n, |i, j| {
            (0..=j.min(i)).map(|k| self.get(i, k) * self.get(j, k)).sum()
        })
    }
}
