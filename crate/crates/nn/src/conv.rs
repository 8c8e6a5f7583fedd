//! im2col / col2im lowering shared by the convolution ops.

use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// Geometry of a strided convolution reading an `in_h x in_w` image.
    /// Returns `None` when the padded input is smaller than the kernel.
    pub fn forward(
        channels: usize,
        in_h: usize,
        in_w: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    ) -> Option<Self> {
        let out = |size: usize, k: usize| {
            (size + 2 * padding)
                .checked_sub(k)
                .map(|span| span / stride + 1)
        };
        Some(Self {
            channels,
            in_h,
            in_w,
            kernel_h,
            kernel_w,
            stride,
            padding,
            out_h: out(in_h, kernel_h)?,
            out_w: out(in_w, kernel_w)?,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source pixel of output `(oy, ox)` under kernel tap `(ky, kx)`, if inside the image.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.padding)?;
        let x = (ox * self.stride + kx).checked_sub(self.padding)?;
        (y < self.in_h && x < self.in_w).then_some((y, x))
    }
}

/// Unfold one `channels x in_h x in_w` image into a `col_rows x col_cols` matrix.
pub(crate) fn im2col<T: Real>(g: &ConvGeometry, image: &[T], cols: &mut [T]) {
    let n_cols = g.col_cols();
    for c in 0..g.channels {
        let plane = &image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let dst = &mut cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        dst[oy * g.out_w + ox] = match g.source(oy, ox, ky, kx) {
                            Some((y, x)) => plane[y * g.in_w + x],
                            None => T::zero(),
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a column matrix back onto an image.
pub(crate) fn col2im<T: Real>(g: &ConvGeometry, cols: &[T], image: &mut [T]) {
    let n_cols = g.col_cols();
    for c in 0..g.channels {
        let plane = &mut image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let src = &cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        if let Some((y, x)) = g.source(oy, ox, ky, kx) {
                            plane[y * g.in_w + x] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_formula() {
        let g = ConvGeometry::forward(1, 4, 4, 4, 4, 2, 1).unwrap();
        assert_eq!((g.out_h, g.out_w), (2, 2));
        let g = ConvGeometry::forward(1, 7, 7, 4, 4, 1, 1).unwrap();
        assert_eq!((g.out_h, g.out_w), (6, 6));
        assert!(ConvGeometry::forward(1, 2, 2, 5, 5, 1, 0).is_none());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeometry::forward(2, 5, 6, 3, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..2 * 5 * 6).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..g.col_rows() * g.col_cols())
            .map(|i| (i as f64 * 0.3).cos())
            .collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&g, &x, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&g, &y, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
