//! Dense determinant and rank for the small matrices this crate produces
//! (correlation minors, interlacing indicators, two-level blocks). LU with
//! partial pivoting; sizes stay below ~25 so no external solver is warranted.

/// Square matrix in row-major order with explicit dimension.
#[derive(Debug, Clone)]
pub struct SquareMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SquareMatrix {
    pub fn from_fn(n: usize, mut entry: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = entry(i, j);
            }
        }
        SquareMatrix { n, data }
    }

    pub fn det(&self) -> f64 {
        det_in_place(&mut self.data.clone(), self.n)
    }
}

/// Determinant by LU with partial pivoting; consumes the buffer.
/// The empty matrix has determinant 1.
pub fn det_in_place(a: &mut [f64], n: usize) -> f64 {
    debug_assert_eq!(a.len(), n * n);
    let mut det = 1.0;
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r1, &r2| {
                a[r1 * n + col].abs().partial_cmp(&a[r2 * n + col].abs()).unwrap()
            })
            .unwrap();
        let pivot = a[pivot_row * n + col];
        if pivot == 0.0 {
            return 0.0;
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(pivot_row * n + k, col * n + k);
            }
            det = -det;
        }
        det *= a[col * n + col];
        for row in (col + 1)..n {
            let factor = a[row * n + col] / a[col * n + col];
            if factor != 0.0 {
                for k in (col + 1)..n {
                    a[row * n + k] -= factor * a[col * n + k];
                }
            }
        }
    }
    det
}

/// Numerical rank of a rows x cols matrix via row echelon with partial
/// pivoting. A pivot counts when it exceeds `tol` times the largest entry of
/// the original matrix (absolute `tol` if the matrix is all zero).
pub fn rank(a: &[f64], rows: usize, cols: usize, tol: f64) -> usize {
    debug_assert_eq!(a.len(), rows * cols);
    let mut m = a.to_vec();
    let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let threshold = if scale > 0.0 { tol * scale } else { tol };
    let mut rank = 0;
    let mut row = 0;
    for col in 0..cols {
        if row == rows {
            break;
        }
        let pivot_row = (row..rows)
            .max_by(|&r1, &r2| {
                m[r1 * cols + col].abs().partial_cmp(&m[r2 * cols + col].abs()).unwrap()
            })
            .unwrap();
        if m[pivot_row * cols + col].abs() <= threshold {
            continue;
        }
        if pivot_row != row {
            for k in 0..cols {
                m.swap(pivot_row * cols + k, row * cols + k);
            }
        }
        for r in (row + 1)..rows {
            let factor = m[r * cols + col] / m[row * cols + col];
            if factor != 0.0 {
                for k in col..cols {
                    m[r * cols + k] -= factor * m[row * cols + k];
                }
            }
        }
        row += 1;
        rank += 1;
    }
    rank
}
