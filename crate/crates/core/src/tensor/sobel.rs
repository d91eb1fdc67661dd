//! The 3×3 Sobel operator. This is the only Sobel definition in the crate:
//! the visible-image loss and the FMI metric both go through it.

use super::{fault, Real};

/// Horizontal derivative kernel; the vertical kernel is its transpose.
pub const SOBEL_X: [[i8; 3]; 3] = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]];
pub const SOBEL_Y: [[i8; 3]; 3] = [[-1, -2, -1], [0, 0, 0], [1, 2, 1]];

/// Smoothing term under the square root of the differentiable magnitude.
pub const SOBEL_DELTA: f64 = 1e-12;

/// Index `shifted - 1` clamped into `[0, len)`. Borders replicate the edge
/// pixel so that constant planes have zero response everywhere.
#[inline]
fn clamp_index(shifted: usize, len: usize) -> usize {
    shifted.saturating_sub(1).min(len - 1)
}

/// Horizontal and vertical responses of one `h × w` plane, edge-replicated.
///
/// Evaluated as paired differences, `(right − left)` and `(bottom − top)`
/// weighted 1-2-1, which is the kernel applied exactly so that constant
/// planes give exactly zero.
pub fn sobel_components<T: Real>(plane: &[T], h: usize, w: usize) -> (Vec<T>, Vec<T>) {
    let two = T::lit(2.0);
    let mut gx = vec![T::zero(); h * w];
    let mut gy = vec![T::zero(); h * w];
    for y in 0..h {
        let rows = [clamp_index(y, h), y, clamp_index(y + 2, h)];
        for x in 0..w {
            let cols = [clamp_index(x, w), x, clamp_index(x + 2, w)];
            let at = |r: usize, c: usize| plane[rows[r] * w + cols[c]];
            gx[y * w + x] = (at(0, 2) - at(0, 0)) + two * (at(1, 2) - at(1, 0)) + (at(2, 2) - at(2, 0));
            gy[y * w + x] = (at(2, 0) - at(0, 0)) + two * (at(2, 1) - at(0, 1)) + (at(2, 2) - at(0, 2));
        }
    }
    (gx, gy)
}

/// `sqrt(gx² + gy² + delta)` per pixel.
pub fn sobel_magnitude<T: Real>(plane: &[T], h: usize, w: usize, delta: T) -> Vec<T> {
    let (gx, gy) = sobel_components(plane, h, w);
    gx.iter()
        .zip(&gy)
        .map(|(&a, &b)| (a * a + b * b + delta).sqrt())
        .collect()
}

/// Vector-Jacobian product of the magnitude for one plane.
pub(crate) fn sobel_magnitude_backward<T: Real>(
    grad: &[T],
    gx: &[T],
    gy: &[T],
    mag: &[T],
    h: usize,
    w: usize,
) -> Vec<T> {
    let sign = if fault::sobel_sign_flip() {
        -T::one()
    } else {
        T::one()
    };
    let mut gin = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let ax = sign * grad[i] * gx[i] / mag[i];
            let ay = sign * grad[i] * gy[i] / mag[i];
            for ky in 0..3 {
                let iy = clamp_index(y + ky, h);
                for kx in 0..3 {
                    let ix = clamp_index(x + kx, w);
                    gin[iy * w + ix] += T::lit(SOBEL_X[ky][kx] as f64) * ax
                        + T::lit(SOBEL_Y[ky][kx] as f64) * ay;
                }
            }
        }
    }
    gin
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_are_transposes() {
        for (i, row) in SOBEL_X.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, SOBEL_Y[j][i]);
            }
        }
    }

    #[test]
    fn paired_differences_equal_kernel_correlation() {
        let (h, w) = (5, 7);
        let plane: Vec<f64> = (0..h * w).map(|i| ((i * 37 % 11) as f64) * 0.13 - 0.4).collect();
        let (gx, gy) = sobel_components(&plane, h, w);
        for y in 0..h {
            for x in 0..w {
                let (mut sx, mut sy) = (0.0, 0.0);
                for ky in 0..3 {
                    for kx in 0..3 {
                        let v = plane[clamp_index(y + ky, h) * w + clamp_index(x + kx, w)];
                        sx += SOBEL_X[ky][kx] as f64 * v;
                        sy += SOBEL_Y[ky][kx] as f64 * v;
                    }
                }
                assert!((gx[y * w + x] - sx).abs() < 1e-12);
                assert!((gy[y * w + x] - sy).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn step_edge_interior_column() {
        // Left half 0, right half 1, on a 6×6 plane.
        let (h, w) = (6, 6);
        let plane: Vec<f64> = (0..h * w).map(|i| if i % w >= 3 { 1.0 } else { 0.0 }).collect();
        let (gx, gy) = sobel_components(&plane, h, w);
        for y in 1..h - 1 {
            assert_eq!(gx[y * w + 2], 4.0);
            assert_eq!(gx[y * w + 3], 4.0);
            assert_eq!(gy[y * w + 2], 0.0);
        }
        let mag = sobel_magnitude(&plane, h, w, 0.0);
        assert_eq!(mag[2 * w + 2], 4.0);
    }

    #[test]
    fn constant_plane_has_zero_response_including_borders() {
        let plane = vec![0.7_f64; 25];
        let (gx, gy) = sobel_components(&plane, 5, 5);
        assert!(gx.iter().chain(&gy).all(|&v| v == 0.0));
        let mag = sobel_magnitude(&plane, 5, 5, SOBEL_DELTA);
        assert!(mag.iter().all(|&m| m == SOBEL_DELTA.sqrt()));
    }
}
