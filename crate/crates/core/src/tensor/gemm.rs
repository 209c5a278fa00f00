//! Safe wrapper over `matrixmultiply::dgemm` for row-major buffers and
//! column blocks of them.

/// Row-major operand, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct Operand<'a> {
    pub data: &'a [f64],
    /// Logical rows and cols after the optional transpose.
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
    /// Distance between consecutive stored rows.
    pub ld: usize,
}

impl<'a> Operand<'a> {
    pub fn plain(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: false,
            ld: cols,
        }
    }

    /// Logical `rows × cols` view of a stored `cols × rows` buffer.
    pub fn t(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: true,
            ld: rows,
        }
    }

    /// Same view over a buffer whose stored rows are `ld` apart, e.g. a
    /// column block of a wider matrix (pass the slice starting at the block).
    pub fn with_ld(self, ld: usize) -> Self {
        Self { ld, ..self }
    }

    fn stored(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.ld as isize)
        } else {
            (self.ld as isize, 1)
        }
    }

    fn check(&self) {
        let (r, c) = self.stored();
        assert!(c <= self.ld, "gemm leading dimension");
        if r > 0 && c > 0 {
            assert!(
                self.data.len() >= (r - 1) * self.ld + c,
                "gemm operand extent"
            );
        }
    }
}

/// `c ← a·b + beta·c`, with `c` row-major `a.rows × b.cols`.
pub(crate) fn gemm(a: Operand<'_>, b: Operand<'_>, beta: f64, c: &mut [f64]) {
    assert_eq!(c.len(), a.rows * b.cols);
    gemm_ex(1.0, a, b, beta, c, b.cols);
}

/// `c ← alpha·a·b + beta·c` where the rows of `c` are `ldc` apart.
pub(crate) fn gemm_ex(
    alpha: f64,
    a: Operand<'_>,
    b: Operand<'_>,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "gemm inner extent");
    a.check();
    b.check();
    assert!(n <= ldc, "gemm output leading dimension");
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= (m - 1) * ldc + n, "gemm output extent");
    if k == 0 {
        for row in c.chunks_mut(ldc).take(m) {
            row[..n].iter_mut().for_each(|v| *v *= beta);
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: `check` and the asserts above bound every index dgemm touches
    // by the lengths of the borrowed slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}
