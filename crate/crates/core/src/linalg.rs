//! Minimal dense linear algebra: a row-major matrix and the handful of
//! operations the rest of the crate needs.
//!
//! Shape and precondition violations are programmer errors and panic with a
//! message naming the offending shapes; there is no fallible API here.
//! All operations are pure and accumulate in a fixed order, so results are
//! deterministic in single-threaded execution.

use crate::scalar::Scalar;

/// Dense row-major matrix. Rows of weight matrices are filters; the row is
/// the natural unit of access throughout the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix data length {} does not match shape {}x{}",
            data.len(),
            rows,
            cols
        );
        Matrix { rows, cols, data }
    }

    /// Builds from nested rows; rows must be equal length.
    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(
                row.len(),
                c,
                "ragged rows: expected width {c}, got {}",
                row.len()
            );
            data.extend_from_slice(row);
        }
        Matrix {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = S::one();
        }
        m
    }

    /// Matrix with entries drawn from the standard normal distribution.
    pub fn gaussian(rows: usize, cols: usize, rng: &mut crate::rng::SplitMix64) -> Self {
        let data = (0..rows * cols)
            .map(|_| S::cast(rng.next_gaussian()))
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// Standard matrix product. Accumulation over the inner dimension runs
    /// in ascending index order for every output entry.
    pub fn matmul(&self, other: &Matrix<S>) -> Matrix<S> {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a_ik) in a_row.iter().enumerate() {
                let b_row = other.row(k);
                for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b_kj;
                }
            }
        }
        out
    }

    /// `self * otherᵀ` without materializing the transpose. Row-against-row
    /// dot products keep both operands at unit stride.
    pub fn matmul_nt(&self, other: &Matrix<S>) -> Matrix<S> {
        assert_eq!(
            self.cols, other.cols,
            "matmul_nt shape mismatch: {}x{} * ({}x{})ᵀ",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                let b_row = other.row(j);
                let mut acc = S::zero();
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    /// `selfᵀ * other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Matrix<S>) -> Matrix<S> {
        assert_eq!(
            self.rows, other.rows,
            "matmul_tn shape mismatch: ({}x{})ᵀ * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a_ki) in a_row.iter().enumerate() {
                let out_row = out.row_mut(i);
                for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                    *o += a_ki * b_kj;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix<S> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    /// Vector of squared row norms, `diag(W Wᵀ)`.
    pub fn diag_of_gram(&self) -> Vec<S> {
        assert!(!self.is_empty(), "diag_of_gram of an empty matrix");
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|&x| x * x).sum())
            .collect()
    }

    /// Vector of squared column norms, `diag(WᵀW)`.
    pub fn diag_of_gram_cols(&self) -> Vec<S> {
        assert!(!self.is_empty(), "diag_of_gram_cols of an empty matrix");
        let mut out = vec![S::zero(); self.cols];
        for i in 0..self.rows {
            for (o, &x) in out.iter_mut().zip(self.row(i)) {
                *o += x * x;
            }
        }
        out
    }

    /// Each row divided by its Euclidean norm. Panics if a row has zero norm.
    pub fn orth_rows(&self) -> Matrix<S> {
        let mut out = self.clone();
        for i in 0..out.rows {
            let norm = out.row(i).iter().map(|&x| x * x).sum::<S>().sqrt();
            assert!(
                norm > S::zero(),
                "orth_rows: row {i} has zero Euclidean norm"
            );
            for x in out.row_mut(i) {
                *x /= norm;
            }
        }
        out
    }

    /// Multiplies row `i` by `s[i]`, the left action of `Diag(s)`.
    pub fn scale_rows(&self, s: &[S]) -> Matrix<S> {
        assert_eq!(
            s.len(),
            self.rows,
            "scale_rows: scale length {} does not match row count {}",
            s.len(),
            self.rows
        );
        let mut out = self.clone();
        for (i, &si) in s.iter().enumerate() {
            for x in out.row_mut(i) {
                *x *= si;
            }
        }
        out
    }

    /// Multiplies column `j` by `s[j]`, the right action of `Diag(s)`.
    pub fn scale_cols(&self, s: &[S]) -> Matrix<S> {
        assert_eq!(
            s.len(),
            self.cols,
            "scale_cols: scale length {} does not match column count {}",
            s.len(),
            self.cols
        );
        let mut out = self.clone();
        for i in 0..out.rows {
            for (x, &sj) in out.row_mut(i).iter_mut().zip(s) {
                *x *= sj;
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Matrix<S> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scaled(&self, factor: S) -> Matrix<S> {
        self.map(|x| x * factor)
    }

    pub fn add(&self, other: &Matrix<S>) -> Matrix<S> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix<S>) -> Matrix<S> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix<S>, f: impl Fn(S, S) -> S) -> Matrix<S> {
        assert_eq!(
            self.shape(),
            other.shape(),
            "elementwise op shape mismatch: {}x{} vs {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Largest absolute entry; zero for an empty matrix.
    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |acc, &x| acc.max(x.abs()))
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Matrix<S>) -> S {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(S::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn matmul_identity() {
        let a = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(Matrix::identity(2).matmul(&a), a);
    }

    #[test]
    fn matmul_projector() {
        let p = mat(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let v = mat(&[&[5.0], &[7.0]]);
        assert_eq!(p.matmul(&v), mat(&[&[5.0], &[0.0]]));
    }

    #[test]
    fn matmul_hand_example() {
        let a = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let ones = mat(&[&[1.0], &[1.0]]);
        assert_eq!(a.matmul(&ones), mat(&[&[3.0], &[7.0]]));
    }

    #[test]
    #[should_panic(expected = "matmul shape mismatch: 2x2 * 3x1")]
    fn matmul_dimension_mismatch_names_shapes() {
        let a = Matrix::<f64>::zeros(2, 2);
        let b = Matrix::<f64>::zeros(3, 1);
        let _ = a.matmul(&b);
    }

    #[test]
    fn diag_of_gram_hand_examples() {
        assert_eq!(mat(&[&[3.0, 4.0]]).diag_of_gram(), vec![25.0]);
        assert_eq!(
            Matrix::<f64>::identity(3).diag_of_gram(),
            vec![1.0, 1.0, 1.0]
        );
        assert_eq!(
            mat(&[&[0.0, 0.0], &[1.0, 1.0]]).diag_of_gram(),
            vec![0.0, 2.0]
        );
    }

    #[test]
    fn orth_rows_hand_example() {
        let w = mat(&[&[3.0, 4.0]]).orth_rows();
        assert!((w.get(0, 0) - 0.6).abs() < 1e-15);
        assert!((w.get(0, 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn orth_rows_unit_rows_unchanged() {
        let eye = Matrix::<f64>::identity(2);
        assert_eq!(eye.orth_rows(), eye);
    }

    #[test]
    #[should_panic(expected = "row 0 has zero Euclidean norm")]
    fn orth_rows_zero_row_panics_with_index() {
        let _ = mat(&[&[0.0, 0.0]]).orth_rows();
    }

    #[test]
    fn scale_rows_hand_example() {
        let m = mat(&[&[1.0, 2.0], &[3.0, 4.0]]).scale_rows(&[2.0, 1.0]);
        assert_eq!(m, mat(&[&[2.0, 4.0], &[3.0, 4.0]]));
    }

    #[test]
    fn scale_cols_all_ones_is_identity() {
        let m = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(m.scale_cols(&[1.0, 1.0]), m);
    }

    #[test]
    fn scale_rows_of_zero_matrix() {
        let z = Matrix::<f64>::zeros(2, 3);
        assert_eq!(z.scale_rows(&[7.0, -2.0]), z);
    }

    #[test]
    #[should_panic(expected = "scale_rows: scale length 3 does not match row count 2")]
    fn scale_rows_length_mismatch() {
        let _ = Matrix::<f64>::zeros(2, 2).scale_rows(&[1.0, 2.0, 3.0]);
    }

    #[test]
    fn transposed_products_match_plain_matmul() {
        let mut rng = SplitMix64::new(11);
        let a = Matrix::<f64>::gaussian(4, 6, &mut rng);
        let b = Matrix::<f64>::gaussian(5, 6, &mut rng);
        let c = Matrix::<f64>::gaussian(4, 3, &mut rng);
        assert!(a.matmul_nt(&b).max_abs_diff(&a.matmul(&b.transpose())) < 1e-14);
        assert!(a.matmul_tn(&c).max_abs_diff(&a.transpose().matmul(&c)) < 1e-14);
    }

    #[test]
    fn single_precision_instantiation() {
        let a = Matrix::<f32>::from_vec(1, 2, vec![3.0, 4.0]);
        assert_eq!(a.diag_of_gram(), vec![25.0f32]);
        let u = a.orth_rows();
        assert!((u.get(0, 0) - 0.6).abs() < 1e-6);
    }

    fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix<f64>> {
        proptest::collection::vec(-5.0f64..5.0, rows * cols)
            .prop_map(move |data| Matrix::from_vec(rows, cols, data))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matmul_associative(
            a in small_matrix(3, 4),
            b in small_matrix(4, 2),
            c in small_matrix(2, 5),
        ) {
            let left = a.matmul(&b).matmul(&c);
            let right = a.matmul(&b.matmul(&c));
            let scale = left.max_abs().max(right.max_abs()).max(1.0);
            prop_assert!(left.max_abs_diff(&right) / scale < 1e-12);
        }

        #[test]
        fn orth_rows_idempotent(w in small_matrix(4, 3)) {
            prop_assume!(w.diag_of_gram().iter().all(|&n| n > 1e-6));
            let once = w.orth_rows();
            let twice = once.orth_rows();
            prop_assert!(once.max_abs_diff(&twice) < 1e-14);
        }

        #[test]
        fn orth_rows_gives_unit_gram_diagonal(w in small_matrix(5, 4)) {
            prop_assume!(w.diag_of_gram().iter().all(|&n| n > 1e-6));
            for n in w.orth_rows().diag_of_gram() {
                prop_assert!((n - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn scale_rows_matches_diagonal_matmul(
            w in small_matrix(4, 3),
            s in proptest::collection::vec(-3.0f64..3.0, 4),
        ) {
            let mut diag = Matrix::<f64>::zeros(4, 4);
            for (i, &si) in s.iter().enumerate() {
                diag.set(i, i, si);
            }
            prop_assert!(w.scale_rows(&s).max_abs_diff(&diag.matmul(&w)) < 1e-14);
        }

        #[test]
        fn scale_cols_matches_diagonal_matmul(
            w in small_matrix(3, 4),
            s in proptest::collection::vec(-3.0f64..3.0, 4),
        ) {
            let mut diag = Matrix::<f64>::zeros(4, 4);
            for (j, &sj) in s.iter().enumerate() {
                diag.set(j, j, sj);
            }
            prop_assert!(w.scale_cols(&s).max_abs_diff(&w.matmul(&diag)) < 1e-14);
        }
    }
}
