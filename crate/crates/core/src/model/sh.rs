//! Real spherical harmonics up to degree 3 (Condon-Shortley phase), in the
//! band layout common to splatting renderers.

use crate::Vec3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Constant added to every channel of an evaluated color.
pub const SH_OFFSET: f64 = 0.5;

pub const MAX_SH_DEGREE: u32 = 3;

/// Number of coefficients (per channel) for a degree.
pub fn num_coeffs(degree: u32) -> usize {
    ((degree + 1) * (degree + 1)) as usize
}

/// Degree implied by a coefficient count, if it is a perfect square <= 16.
pub fn degree_for(count: usize) -> Option<u32> {
    (0..=MAX_SH_DEGREE).find(|&d| num_coeffs(d) == count)
}

/// Basis values for `dir`; `out.len()` selects the degree.
pub fn basis(dir: &Vec3, out: &mut [f64]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let n = out.len();
    out[0] = SH_C0;
    if n > 1 {
        out[1] = -SH_C1 * y;
        out[2] = SH_C1 * z;
        out[3] = -SH_C1 * x;
    }
    if n > 4 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out[4] = SH_C2[0] * x * y;
        out[5] = SH_C2[1] * y * z;
        out[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        out[7] = SH_C2[3] * x * z;
        out[8] = SH_C2[4] * (xx - yy);
        if n > 9 {
            out[9] = SH_C3[0] * y * (3.0 * xx - yy);
            out[10] = SH_C3[1] * x * y * z;
            out[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            out[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            out[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            out[14] = SH_C3[5] * z * (xx - yy);
            out[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
    }
}

/// Gradients of each basis polynomial with respect to the (unnormalized)
/// direction components.
pub fn basis_gradient(dir: &Vec3, out: &mut [Vec3]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let n = out.len();
    out[0] = Vec3::zeros();
    if n > 1 {
        out[1] = Vec3::new(0.0, -SH_C1, 0.0);
        out[2] = Vec3::new(0.0, 0.0, SH_C1);
        out[3] = Vec3::new(-SH_C1, 0.0, 0.0);
    }
    if n > 4 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out[4] = SH_C2[0] * Vec3::new(y, x, 0.0);
        out[5] = SH_C2[1] * Vec3::new(0.0, z, y);
        out[6] = SH_C2[2] * Vec3::new(-2.0 * x, -2.0 * y, 4.0 * z);
        out[7] = SH_C2[3] * Vec3::new(z, 0.0, x);
        out[8] = SH_C2[4] * Vec3::new(2.0 * x, -2.0 * y, 0.0);
        if n > 9 {
            out[9] = SH_C3[0] * Vec3::new(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
            out[10] = SH_C3[1] * Vec3::new(y * z, x * z, x * y);
            out[11] = SH_C3[2] * Vec3::new(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
            out[12] =
                SH_C3[3] * Vec3::new(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
            out[13] = SH_C3[4] * Vec3::new(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
            out[14] = SH_C3[5] * Vec3::new(2.0 * x * z, -2.0 * y * z, xx - yy);
            out[15] = SH_C3[6] * Vec3::new(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
        }
    }
}

/// View-dependent color: `sum_k c_k * Y_k(dir) + 0.5`, unclamped.
pub fn eval_sh(coeffs: &[[f64; 3]], dir: &Vec3) -> [f64; 3] {
    let mut y = [0.0; 16];
    let y = &mut y[..coeffs.len()];
    basis(dir, y);
    let mut rgb = [SH_OFFSET; 3];
    for (c, yk) in coeffs.iter().zip(y.iter()) {
        for ch in 0..3 {
            rgb[ch] += c[ch] * yk;
        }
    }
    rgb
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_zero_is_isotropic() {
        let c = [[0.3, -0.2, 0.1]];
        let a = eval_sh(&c, &Vec3::new(0.0, 0.0, 1.0));
        let b = eval_sh(&c, &Vec3::new(0.6, -0.8, 0.0));
        assert_eq!(a, b);
        assert!((a[0] - (0.5 + 0.3 * SH_C0)).abs() < 1e-15);
    }

    #[test]
    fn z_linear_band_is_odd() {
        let mut c = [[0.0; 3]; 4];
        c[2] = [0.4, -0.1, 0.25];
        let up = eval_sh(&c, &Vec3::z());
        let down = eval_sh(&c, &-Vec3::z());
        for ch in 0..3 {
            assert!(((up[ch] - SH_OFFSET) + (down[ch] - SH_OFFSET)).abs() < 1e-15);
            assert!((up[ch] - SH_OFFSET - c[2][ch] * SH_C1).abs() < 1e-15);
        }
    }

    #[test]
    fn basis_gradient_matches_finite_differences() {
        let d = Vec3::new(0.3, -0.5, 0.7);
        let mut g = [Vec3::zeros(); 16];
        basis_gradient(&d, &mut g);
        let h = 1e-6;
        for axis in 0..3 {
            let mut dp = d;
            let mut dm = d;
            dp[axis] += h;
            dm[axis] -= h;
            let (mut yp, mut ym) = ([0.0; 16], [0.0; 16]);
            basis(&dp, &mut yp);
            basis(&dm, &mut ym);
            for k in 0..16 {
                assert!(
                    ((yp[k] - ym[k]) / (2.0 * h) - g[k][axis]).abs() < 1e-8,
                    "band {k} axis {axis}"
                );
            }
        }
    }

    #[test]
    fn degree_lookup() {
        assert_eq!(degree_for(1), Some(0));
        assert_eq!(degree_for(16), Some(3));
        assert_eq!(degree_for(5), None);
    }
}
