use std::f64::consts::PI;

/// First `n_out` coefficients of the orthonormal DCT-II of `x`.
pub fn dct2_ortho(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return vec![0.0; n_out];
    }
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos())
                .sum();
            scale * s
        })
        .collect()
}

/// Precomputed orthonormal DCT-II rows for repeated use on equal-length inputs.
#[derive(Debug, Clone)]
pub(crate) struct DctTable {
    n: usize,
    rows: Vec<Vec<f64>>,
}

impl DctTable {
    pub(crate) fn new(n: usize, n_out: usize) -> Self {
        let rows = (0..n_out)
            .map(|k| {
                let scale = if k == 0 {
                    (1.0 / n as f64).sqrt()
                } else {
                    (2.0 / n as f64).sqrt()
                };
                (0..n)
                    .map(|i| scale * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos())
                    .collect()
            })
            .collect();
        Self { n, rows }
    }

    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n);
        self.rows
            .iter()
            .map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}
