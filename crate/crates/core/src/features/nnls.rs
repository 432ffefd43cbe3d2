use crate::autograd::Mat;

/// Non-negative least squares, `argmin ||A x - b||` subject to `x >= 0`
/// (Lawson-Hanson active set).
pub fn nnls(a: &Mat, b: &[f64]) -> Vec<f64> {
    Nnls::new(a).solve(b)
}

/// Active-set solver with the Gram matrix precomputed, for many right-hand
/// sides against the same `A`.
pub(crate) struct Nnls {
    a: Mat,
    gram: Mat,
    // columns of A that are identically zero never enter the passive set
    live: Vec<bool>,
}

impl Nnls {
    pub(crate) fn new(a: &Mat) -> Self {
        let gram = a.t().dot(a);
        let live = (0..a.ncols()).map(|j| gram[[j, j]] > 0.0).collect();
        Self {
            a: a.clone(),
            gram,
            live,
        }
    }

    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.a.ncols();
        let atb: Vec<f64> = (0..n)
            .map(|j| self.a.column(j).iter().zip(b).map(|(x, y)| x * y).sum())
            .collect();
        let scale = atb.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let tol = 1e-12 * scale * n as f64;

        let mut x = vec![0.0; n];
        let mut passive = vec![false; n];
        let mut w = atb.clone();
        for _ in 0..3 * n {
            let next = (0..n)
                .filter(|&j| !passive[j] && self.live[j] && w[j] > tol)
                .max_by(|&i, &j| w[i].total_cmp(&w[j]));
            let Some(j) = next else { break };
            passive[j] = true;
            loop {
                let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
                let s = self.restricted_solve(&idx, &atb);
                if s.iter().all(|&v| v > 0.0) {
                    for (&i, &v) in idx.iter().zip(&s) {
                        x[i] = v;
                    }
                    break;
                }
                let mut alpha = f64::INFINITY;
                for (&i, &v) in idx.iter().zip(&s) {
                    if v <= 0.0 {
                        alpha = alpha.min(x[i] / (x[i] - v));
                    }
                }
                for (&i, &v) in idx.iter().zip(&s) {
                    x[i] += alpha * (v - x[i]);
                    if x[i] <= 1e-15 * scale {
                        x[i] = 0.0;
                        passive[i] = false;
                    }
                }
                if idx.iter().all(|&i| !passive[i]) {
                    break;
                }
            }
            let mut resid = b.to_vec();
            for (j, &xj) in x.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                for (r, &aij) in resid.iter_mut().zip(self.a.column(j)) {
                    *r -= aij * xj;
                }
            }
            for (j, wj) in w.iter_mut().enumerate() {
                *wj = self.a.column(j).iter().zip(&resid).map(|(a, r)| a * r).sum();
            }
        }
        x
    }

    /// Least squares restricted to the columns in `idx`, via Cholesky on the
    /// Gram submatrix (with a tiny ridge for rank-deficient sets).
    fn restricted_solve(&self, idx: &[usize], atb: &[f64]) -> Vec<f64> {
        let k = idx.len();
        let mut g = Mat::zeros((k, k));
        let mut trace = 0.0;
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                g[[r, c]] = self.gram[[i, j]];
            }
            trace += self.gram[[i, i]];
        }
        let ridge = 1e-12 * trace / k as f64;
        for d in 0..k {
            g[[d, d]] += ridge;
        }
        let rhs: Vec<f64> = idx.iter().map(|&i| atb[i]).collect();
        cholesky_solve(g, rhs)
    }
}

fn cholesky_solve(mut g: Mat, mut rhs: Vec<f64>) -> Vec<f64> {
    let k = rhs.len();
    for j in 0..k {
        let mut d = g[[j, j]];
        for p in 0..j {
            d -= g[[j, p]] * g[[j, p]];
        }
        let d = d.max(f64::MIN_POSITIVE).sqrt();
        g[[j, j]] = d;
        for i in j + 1..k {
            let mut v = g[[i, j]];
            for p in 0..j {
                v -= g[[i, p]] * g[[j, p]];
            }
            g[[i, j]] = v / d;
        }
    }
    for i in 0..k {
        for p in 0..i {
            rhs[i] -= g[[i, p]] * rhs[p];
        }
        rhs[i] /= g[[i, i]];
    }
    for i in (0..k).rev() {
        for p in i + 1..k {
            rhs[i] -= g[[p, i]] * rhs[p];
        }
        rhs[i] /= g[[i, i]];
    }
    rhs
}
