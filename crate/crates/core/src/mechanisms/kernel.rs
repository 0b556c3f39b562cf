//! Matrix-free products with a base channel. EM over remapped releases only
//! ever needs `πᵀf` and `f·s`; for location hiding these are `O(n)` and for
//! the exponential mechanism on a grid the channel factors into a row part
//! and a column part.

use crate::error::Result;
use crate::geo::DistMatrix;
use crate::mechanisms::{BaseMechanism, Channel};

#[derive(Debug, Clone)]
pub enum ChannelKernel {
    /// `α·I + β·(J − I)` with `β` the off-diagonal mass.
    Hiding { n: usize, diag: f64, off: f64 },
    /// `f(x, z) = R[x_row][z_row] · C[x_col][z_col]`.
    Separable {
        rows: usize,
        cols: usize,
        row: Vec<f64>,
        col: Vec<f64>,
        row_t: Vec<f64>,
        col_t: Vec<f64>,
    },
    Dense(Channel),
}

fn softmax_rows(dist: &[f64], k: usize, epsilon: f64) -> Vec<f64> {
    let mut out: Vec<f64> = dist.iter().map(|&d| (-epsilon * d).exp()).collect();
    for row in out.chunks_mut(k) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

impl ChannelKernel {
    pub fn new(base: &BaseMechanism, d: &DistMatrix) -> Result<Self> {
        let n = d.n();
        match *base {
            BaseMechanism::LocationHiding { alpha, exclusive } => {
                // Validate through the dense constructor's checks.
                base.channel(&DistMatrix::line(1, 1.0))?;
                let (diag, off) = if !exclusive {
                    let spread = (1.0 - alpha) / n as f64;
                    (alpha + spread, spread)
                } else if n == 1 {
                    (1.0, 0.0)
                } else {
                    (alpha, (1.0 - alpha) / (n - 1) as f64)
                };
                Ok(ChannelKernel::Hiding { n, diag, off })
            }
            BaseMechanism::Exponential { epsilon } => match d.axis_tables() {
                Some((rows, cols, row_km, col_km)) => {
                    base.channel(&DistMatrix::line(1, 1.0))?;
                    let row = softmax_rows(row_km, rows, epsilon);
                    let col = softmax_rows(col_km, cols, epsilon);
                    Ok(ChannelKernel::Separable {
                        rows,
                        cols,
                        row_t: transposed(&row, rows),
                        col_t: transposed(&col, cols),
                        row,
                        col,
                    })
                }
                None => Ok(ChannelKernel::Dense(base.channel(d)?)),
            },
        }
    }

    pub fn n(&self) -> usize {
        match self {
            ChannelKernel::Hiding { n, .. } => *n,
            ChannelKernel::Separable { rows, cols, .. } => rows * cols,
            ChannelKernel::Dense(ch) => ch.n_inputs(),
        }
    }

    /// `out[z] = Σ_x pi[x] · f(x, z)`.
    pub fn left_mul(&self, pi: &[f64], out: &mut [f64]) {
        match self {
            ChannelKernel::Hiding { diag, off, .. } => {
                let total: f64 = pi.iter().sum();
                for (o, &p) in out.iter_mut().zip(pi) {
                    *o = (diag - off) * p + off * total;
                }
            }
            ChannelKernel::Separable {
                rows,
                cols,
                row_t,
                col_t,
                ..
            } => separable(*rows, *cols, row_t, col_t, pi, out),
            ChannelKernel::Dense(ch) => {
                out.fill(0.0);
                for (x, &p) in pi.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    for (o, &f) in out.iter_mut().zip(ch.row(x)) {
                        *o += p * f;
                    }
                }
            }
        }
    }

    /// `out[x] = Σ_z f(x, z) · s[z]`.
    pub fn right_mul(&self, s: &[f64], out: &mut [f64]) {
        match self {
            // Both location-hiding matrices are symmetric.
            ChannelKernel::Hiding { .. } => self.left_mul(s, out),
            ChannelKernel::Separable {
                rows,
                cols,
                row,
                col,
                ..
            } => separable(*rows, *cols, row, col, s, out),
            ChannelKernel::Dense(ch) => {
                for (x, o) in out.iter_mut().enumerate() {
                    *o = crate::prob::dot(ch.row(x), s);
                }
            }
        }
    }
}

// Applies R ⊗ C to a rows×cols array in two passes.
fn separable(rows: usize, cols: usize, row: &[f64], col: &[f64], v: &[f64], out: &mut [f64]) {
    let mut tmp = vec![0.0; rows * cols];
    for (src, dst) in v.chunks_exact(cols).zip(tmp.chunks_exact_mut(cols)) {
        for (d, c) in dst.iter_mut().zip(col.chunks_exact(cols)) {
            *d = crate::prob::dot(c, src);
        }
    }
    out.fill(0.0);
    for (dst, r) in out.chunks_exact_mut(cols).zip(row.chunks_exact(rows)) {
        for (&w, t) in r.iter().zip(tmp.chunks_exact(cols)) {
            for (d, &x) in dst.iter_mut().zip(t) {
                *d += w * x;
            }
        }
    }
}

fn transposed(m: &[f64], k: usize) -> Vec<f64> {
    (0..k * k).map(|i| m[(i % k) * k + i / k]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Grid, Region};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check(kernel: &ChannelKernel, dense: &Channel, rng: &mut ChaCha8Rng) {
        let n = dense.n_inputs();
        assert_eq!(kernel.n(), n);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut out = vec![0.0; n];
        kernel.left_mul(&v, &mut out);
        for z in 0..n {
            let expected: f64 = (0..n).map(|x| v[x] * dense.get(x, z)).sum();
            assert!((out[z] - expected).abs() < 1e-12, "left {z}");
        }
        kernel.right_mul(&v, &mut out);
        for x in 0..n {
            let expected: f64 = (0..n).map(|z| dense.get(x, z) * v[z]).sum();
            assert!((out[x] - expected).abs() < 1e-12, "right {x}");
        }
    }

    #[test]
    fn kernels_match_dense_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = Grid::new(Region::new(37.0, 37.05, -122.0, -121.9, 4, 6).unwrap()).unwrap();
        let d = grid.distance_matrix();
        let bases = [
            BaseMechanism::LocationHiding { alpha: 0.3, exclusive: false },
            BaseMechanism::LocationHiding { alpha: 0.3, exclusive: true },
            BaseMechanism::LocationHiding { alpha: 1.0, exclusive: false },
            BaseMechanism::Exponential { epsilon: 0.0 },
            BaseMechanism::Exponential { epsilon: 0.7 },
        ];
        for base in bases {
            let kernel = ChannelKernel::new(&base, &d).unwrap();
            check(&kernel, &base.channel(&d).unwrap(), &mut rng);
            let dense = d.dense();
            let kernel = ChannelKernel::new(&base, &dense).unwrap();
            check(&kernel, &base.channel(&dense).unwrap(), &mut rng);
        }
        assert!(matches!(
            ChannelKernel::new(&BaseMechanism::Exponential { epsilon: 0.7 }, &d).unwrap(),
            ChannelKernel::Separable { .. }
        ));
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let d = DistMatrix::line(3, 1.0);
        assert!(ChannelKernel::new(&BaseMechanism::LocationHiding { alpha: 1.5, exclusive: false }, &d).is_err());
        assert!(ChannelKernel::new(&BaseMechanism::Exponential { epsilon: -1.0 }, &d).is_err());
    }
}
