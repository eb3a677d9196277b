//! Splat-local frames and the local <-> screen mapping.
//!
//! A splat is a flat disc living in the plane spanned by the first two
//! columns of its rotation. Local coordinates `(u, v)` are measured in
//! standard deviations along those axes. The homogeneous screen position of
//! a local point is `W * H * (u, v, 1, 1)`, where `W` is the camera's
//! world-to-screen matrix and `H` the splat's local-to-world frame.
//!
//! Screen convention: pixel `(i, j)` is sampled at `(i + 0.5, j + 0.5)`,
//! origin top-left, `+x` right, `+y` down. The fourth row of `W` yields the
//! view-space depth.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::error::{domain, Result};
use crate::Vec3;

/// Cutoff on the homogeneous-plane denominator below which a splat is
/// treated as edge-on.
pub const PLANE_EPS: f64 = 1e-9;

/// Default footprint cutoff in standard deviations.
pub const DEFAULT_SIGMA_CUT: f64 = 3.0;

/// Pinhole camera described by a homogeneous world-to-screen matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    world_to_screen: Matrix4<f64>,
    width: u32,
    height: u32,
    origin: Vec3,
}

impl Camera {
    pub fn new(
        world_to_screen: Matrix4<f64>,
        width: u32,
        height: u32,
        origin: Vec3,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(domain("camera dimensions must be at least 1x1"));
        }
        if world_to_screen.iter().any(|x| !x.is_finite()) || origin.iter().any(|x| !x.is_finite()) {
            return Err(domain("camera matrix and origin must be finite"));
        }
        let linear: Matrix3<f64> = world_to_screen.fixed_view::<3, 3>(0, 0).into_owned();
        let scale = linear.norm().max(f64::MIN_POSITIVE);
        if linear.determinant().abs() <= 1e-12 * scale.powi(3) {
            return Err(domain("camera matrix has a singular linear part"));
        }
        Ok(Self {
            world_to_screen,
            width,
            height,
            origin,
        })
    }

    /// Builds the matrix from a row-major array of 16 values.
    pub fn from_row_major(
        values: &[f64; 16],
        width: u32,
        height: u32,
        origin: Vec3,
    ) -> Result<Self> {
        Self::new(Matrix4::from_row_slice(values), width, height, origin)
    }

    /// Pinhole camera at `eye` looking at `target`. `fov_y` is the vertical
    /// field of view in radians.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fov_y: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| domain("eye and target coincide"))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| domain("up vector is parallel to the view direction"))?;
        // screen +y points down
        let down = forward.cross(&right);
        if !(fov_y > 0.0 && fov_y < std::f64::consts::PI) {
            return Err(domain("field of view must lie in (0, pi)"));
        }
        let focal = 0.5 * f64::from(height) / (0.5 * fov_y).tan();
        let (cx, cy) = (0.5 * f64::from(width), 0.5 * f64::from(height));

        let mut view = Matrix4::identity();
        for (row, axis) in [right, down, forward].iter().enumerate() {
            for col in 0..3 {
                view[(row, col)] = axis[col];
            }
            view[(row, 3)] = -axis.dot(&eye);
        }
        #[rustfmt::skip]
        let intrinsics = Matrix4::new(
            focal, 0.0,   cx,  0.0,
            0.0,   focal, cy,  0.0,
            0.0,   0.0,   1.0, 0.0,
            0.0,   0.0,   1.0, 0.0,
        );
        Self::new(intrinsics * view, width, height, eye)
    }

    pub fn world_to_screen(&self) -> &Matrix4<f64> {
        &self.world_to_screen
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.world_to_screen[(r, c)];
            }
        }
        out
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    /// Screen position `(x, y)` and depth of a world point, or `None` when
    /// the point is not in front of the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let h = self.world_to_screen * Vector4::new(p.x, p.y, p.z, 1.0);
        (h.w > 0.0).then(|| (h.x / h.w, h.y / h.w, h.w))
    }

    /// Unit direction from the camera origin towards `p`.
    pub fn view_dir(&self, p: &Vec3) -> Vec3 {
        (p - self.origin)
            .try_normalize(1e-300)
            .unwrap_or_else(Vec3::z)
    }

    /// Same camera with the image resampled by an integer factor.
    pub fn downscaled(&self, factor: u32) -> Result<Self> {
        if factor <= 1 {
            return Ok(self.clone());
        }
        let s = 1.0 / f64::from(factor);
        let mut w = self.world_to_screen;
        for c in 0..4 {
            w[(0, c)] *= s;
            w[(1, c)] *= s;
        }
        Self::new(
            w,
            (self.width / factor).max(1),
            (self.height / factor).max(1),
            self.origin,
        )
    }
}

/// Local-to-world transform of one splat.
///
/// Columns are `s_x * t_u`, `s_y * t_v`, a zero column and `(mu, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub h: Matrix4<f64>,
}

impl LocalFrame {
    /// World position of local point `(u, v)`.
    pub fn to_world(&self, u: f64, v: f64) -> Vec3 {
        let p = self.h * Vector4::new(u, v, 1.0, 1.0);
        Vec3::new(p.x, p.y, p.z)
    }

    pub fn center(&self) -> Vec3 {
        self.h.fixed_view::<3, 1>(0, 3).into_owned()
    }
}

/// Intersection of a pixel ray with a splat plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySplatHit {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub valid: bool,
}

impl RaySplatHit {
    pub const INVALID: RaySplatHit = RaySplatHit {
        u: 0.0,
        v: 0.0,
        depth: 0.0,
        valid: false,
    };

    pub fn radius_sq(&self) -> f64 {
        self.u * self.u + self.v * self.v
    }
}

/// Normalizes a `(w, x, y, z)` quaternion. Inputs within `1e-3` of unit norm
/// are normalized silently; anything further off is rejected.
pub fn normalize_rotation(rot: [f64; 4]) -> Result<[f64; 4]> {
    let n = rot.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !n.is_finite() || (n - 1.0).abs() > 1e-3 {
        return Err(domain(format!("rotation quaternion norm {n} is not unit")));
    }
    Ok(rot.map(|x| x / n))
}

/// Rotation matrix of a unit `(w, x, y, z)` quaternion.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    #[rustfmt::skip]
    let m = Matrix3::new(
        1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z),       2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),       1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),       2.0 * (y * z + w * x),       1.0 - 2.0 * (x * x + y * y),
    );
    m
}

/// Tangent axes `t_u`, `t_v` of a (not necessarily unit) quaternion together
/// with their Jacobians with respect to the raw quaternion components. The
/// quaternion is normalized internally, so the Jacobians include the
/// normalization.
pub(crate) fn tangent_axes_with_jacobian(
    q: [f64; 4],
) -> (Vec3, Vec3, [[f64; 4]; 3], [[f64; 4]; 3]) {
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|c| c / n);
    let tu = Vec3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y + w * z),
        2.0 * (x * z - w * y),
    );
    let tv = Vec3::new(
        2.0 * (x * y - w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z + w * x),
    );
    // d/d(w, x, y, z) at the normalized quaternion
    let dtu_hat = [
        [0.0, 0.0, -4.0 * y, -4.0 * z],
        [2.0 * z, 2.0 * y, 2.0 * x, 2.0 * w],
        [-2.0 * y, 2.0 * z, -2.0 * w, 2.0 * x],
    ];
    let dtv_hat = [
        [-2.0 * z, 2.0 * y, 2.0 * x, -2.0 * w],
        [0.0, -4.0 * x, 0.0, -4.0 * z],
        [2.0 * x, 2.0 * w, 2.0 * z, 2.0 * y],
    ];
    let qh = [w, x, y, z];
    // d q_hat / d q = (I - q_hat q_hat^T) / |q|
    let project = |rows: [[f64; 4]; 3]| {
        rows.map(|row| {
            let dot: f64 = (0..4).map(|k| row[k] * qh[k]).sum();
            std::array::from_fn(|k| (row[k] - dot * qh[k]) / n)
        })
    };
    (tu, tv, project(dtu_hat), project(dtv_hat))
}

/// Local frame of a splat from its center, rotation and tangent-plane scale.
pub fn build_local_frame(mu: Vec3, rot: [f64; 4], scale: [f64; 2]) -> Result<LocalFrame> {
    if !(scale[0] > 0.0 && scale[1] > 0.0) || !scale.iter().all(|s| s.is_finite()) {
        return Err(domain(format!("splat scale {scale:?} must be positive")));
    }
    let r = quat_to_matrix(normalize_rotation(rot)?);
    let tu = r.column(0) * scale[0];
    let tv = r.column(1) * scale[1];
    #[rustfmt::skip]
    let h = Matrix4::new(
        tu.x, tv.x, 0.0, mu.x,
        tu.y, tv.y, 0.0, mu.y,
        tu.z, tv.z, 0.0, mu.z,
        0.0,  0.0,  0.0, 1.0,
    );
    Ok(LocalFrame { h })
}

/// Combined local-to-screen matrix `W * H`.
pub fn splat_to_screen(cam: &Camera, frame: &LocalFrame) -> Matrix4<f64> {
    cam.world_to_screen * frame.h
}

/// Homogeneous planes `x = px` and `y = py` pulled back into splat-local
/// coordinates, keeping the `(u, v, 1)` components.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PixelPlanes {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub den: f64,
}

impl PixelPlanes {
    pub fn new(m: &Matrix4<f64>, px: f64, py: f64) -> Self {
        let a = [
            px * m[(3, 0)] - m[(0, 0)],
            px * m[(3, 1)] - m[(0, 1)],
            px * m[(3, 3)] - m[(0, 3)],
        ];
        let b = [
            py * m[(3, 0)] - m[(1, 0)],
            py * m[(3, 1)] - m[(1, 1)],
            py * m[(3, 3)] - m[(1, 3)],
        ];
        let den = a[0] * b[1] - a[1] * b[0];
        Self { a, b, den }
    }

    pub fn uv(&self) -> (f64, f64) {
        let (a, b) = (self.a, self.b);
        let u = (a[1] * b[2] - a[2] * b[1]) / self.den;
        let v = (a[2] * b[0] - a[0] * b[2]) / self.den;
        (u, v)
    }

    /// Partials of `(u, v)` with respect to the plane coefficients `a` and
    /// `b`, evaluated at the solution.
    pub fn uv_partials(&self, u: f64, v: f64) -> UvPartials {
        let (a, b, d) = (self.a, self.b, self.den);
        UvPartials {
            du_da: [-u * b[1] / d, (b[2] + u * b[0]) / d, -b[1] / d],
            du_db: [u * a[1] / d, (-a[2] - u * a[0]) / d, a[1] / d],
            dv_da: [(-b[2] - v * b[1]) / d, v * b[0] / d, b[0] / d],
            dv_db: [(a[2] + v * a[1]) / d, -v * a[0] / d, -a[0] / d],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct UvPartials {
    pub du_da: [f64; 3],
    pub du_db: [f64; 3],
    pub dv_da: [f64; 3],
    pub dv_db: [f64; 3],
}

/// Ray/splat intersection for a precomputed `W * H`.
pub fn intersect(m: &Matrix4<f64>, px: f64, py: f64) -> RaySplatHit {
    let planes = PixelPlanes::new(m, px, py);
    if !(planes.den.abs() >= PLANE_EPS) {
        return RaySplatHit::INVALID;
    }
    let (u, v) = planes.uv();
    let depth = m[(3, 0)] * u + m[(3, 1)] * v + m[(3, 3)];
    if !(depth > 0.0) || !u.is_finite() || !v.is_finite() {
        return RaySplatHit::INVALID;
    }
    RaySplatHit {
        u,
        v,
        depth,
        valid: true,
    }
}

/// Local coordinates where the ray through the continuous screen point
/// `pixel` crosses the splat plane.
pub fn ray_splat_uv(cam: &Camera, frame: &LocalFrame, pixel: [f64; 2]) -> RaySplatHit {
    intersect(&splat_to_screen(cam, frame), pixel[0], pixel[1])
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScreenRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl ScreenRect {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn intersects(&self, other: &ScreenRect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

/// Screen extremes of the image of the disc `u^2 + v^2 <= sigma^2` along the
/// axis selected by `row` (0 for x, 1 for y). Requires the whole disc to be in
/// front of the camera.
fn disc_extent(m: &Matrix4<f64>, row: usize, sigma: f64) -> Option<(f64, f64)> {
    let s2 = sigma * sigma;
    let (p0, p1, p3) = (m[(row, 0)], m[(row, 1)], m[(row, 3)]);
    let (w0, w1, w3) = (m[(3, 0)], m[(3, 1)], m[(3, 3)]);
    let qa = w3 * w3 - s2 * (w0 * w0 + w1 * w1);
    let qb = -2.0 * (w3 * p3 - s2 * (w0 * p0 + w1 * p1));
    let qc = p3 * p3 - s2 * (p0 * p0 + p1 * p1);
    if !(qa > 0.0) {
        return None;
    }
    let disc = (qb * qb - 4.0 * qa * qc).max(0.0).sqrt();
    let lo = (-qb - disc) / (2.0 * qa);
    let hi = (-qb + disc) / (2.0 * qa);
    (lo.is_finite() && hi.is_finite()).then_some((lo, hi))
}

/// Conservative pixel bounds of a splat's `sigma_cut` footprint, or `None`
/// when the footprint is entirely behind the camera or off screen.
pub fn project_bbox(cam: &Camera, frame: &LocalFrame, sigma_cut: f64) -> Option<ScreenRect> {
    bbox_from_transform(
        &splat_to_screen(cam, frame),
        cam.width,
        cam.height,
        sigma_cut,
    )
}

pub(crate) fn bbox_from_transform(
    m: &Matrix4<f64>,
    width: u32,
    height: u32,
    sigma_cut: f64,
) -> Option<ScreenRect> {
    let reach = sigma_cut * (m[(3, 0)].hypot(m[(3, 1)]));
    let (near, far) = (m[(3, 3)] - reach, m[(3, 3)] + reach);
    if !(far > 0.0) {
        return None;
    }
    let full = ScreenRect {
        x0: 0,
        y0: 0,
        x1: width,
        y1: height,
    };
    // Part of the disc crosses the camera plane: its image is unbounded.
    if !(near > 1e-12 * far) {
        return Some(full);
    }
    let (Some((xl, xh)), Some((yl, yh))) =
        (disc_extent(m, 0, sigma_cut), disc_extent(m, 1, sigma_cut))
    else {
        return Some(full);
    };
    // pixel i is sampled at i + 0.5; one pixel of slack absorbs rounding
    let clamp = |lo: f64, hi: f64, n: u32| -> Option<(u32, u32)> {
        let first = (lo - 0.5).ceil() - 1.0;
        let last = (hi - 0.5).floor() + 1.0;
        let first = first.max(0.0);
        let last = last.min(f64::from(n) - 1.0);
        (first <= last).then(|| (first as u32, last as u32 + 1))
    };
    let (x0, x1) = clamp(xl, xh, width)?;
    let (y0, y1) = clamp(yl, yh, height)?;
    Some(ScreenRect { x0, y0, x1, y1 })
}

/// Third basis vector completing `(t_u, t_v)`; the splat normal.
pub fn splat_normal(frame: &LocalFrame) -> Vec3 {
    let tu: Vector3<f64> = frame.h.fixed_view::<3, 1>(0, 0).into_owned();
    let tv: Vector3<f64> = frame.h.fixed_view::<3, 1>(0, 1).into_owned();
    tu.cross(&tv).normalize()
}
