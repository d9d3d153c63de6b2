//! Pinhole cameras, Plücker ray maps and the fixed four-view rig.
//!
//! World frame is right-handed with +Z up; azimuth is measured in the XY
//! plane from +X. Camera frame follows the usual vision convention: +X right,
//! +Y down, +Z forward. Pixel `(x, y)` covers `[x, x+1) × [y, y+1)`, so its
//! center sits at `(x + 0.5, y + 0.5)`.

use std::path::Path;

use nalgebra::{Matrix3, Point3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub const DEFAULT_VFOV_DEG: f64 = 40.0;
pub const CANONICAL_AZIMUTHS_DEG: [f64; 4] = [0.0, 90.0, 180.0, 270.0];
/// Fraction of the image height a unit-radius subject should cover.
pub const DEFAULT_FILL: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation: `x_cam = R x_world + t`.
    pub translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    /// Camera-frame z.
    pub depth: f64,
}

impl Projection {
    pub fn in_front(&self) -> bool {
        self.depth > 0.0
    }
}

impl Camera {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let cam = Self {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("camera", "focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid("camera", "principal point must lie inside the image"));
        }
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if !(err <= 1e-9) || (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "camera",
                format!("rotation must be orthonormal (error {err:e})"),
            ));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with world `up` projecting upward.
    pub fn look_at(
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
        vfov_deg: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("camera", "eye and target coincide"))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("camera", "up vector parallel to view direction"))?;
        let down = forward.cross(&right);
        // Rows are the camera axes expressed in world coordinates.
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye.coords);
        let fy = 0.5 * height as f64 / (0.5 * vfov_deg.to_radians()).tan();
        Self::new(
            rotation,
            translation,
            fy,
            fy,
            0.5 * width as f64,
            0.5 * height as f64,
            width,
            height,
        )
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    pub fn to_camera(&self, point: &Point3<f64>) -> Vector3<f64> {
        self.rotation * point.coords + self.translation
    }

    pub fn project(&self, point: &Point3<f64>) -> Projection {
        let p = self.to_camera(point);
        Projection {
            pixel: Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy),
            depth: p.z,
        }
    }

    /// World point at camera-frame depth `depth` along the ray through `pixel`.
    pub fn unproject(&self, pixel: &Vector2<f64>, depth: f64) -> Point3<f64> {
        let p_cam = Vector3::new(
            (pixel.x - self.cx) / self.fx * depth,
            (pixel.y - self.cy) / self.fy * depth,
            depth,
        );
        Point3::from(self.rotation.transpose() * (p_cam - self.translation))
    }

    /// Unit world-space direction of the ray through `pixel`.
    pub fn ray_direction(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let d_cam = Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0);
        (self.rotation.transpose() * d_cam).normalize()
    }

    /// 3x4 projection matrix `K [R | t]`.
    pub fn projection_matrix(&self) -> nalgebra::Matrix3x4<f64> {
        let k = Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0);
        let mut rt = nalgebra::Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        k * rt
    }

    /// Same extrinsics, intrinsics rescaled to a `width × height` image.
    pub fn rescaled(&self, width: u32, height: u32) -> Camera {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera {
            rotation: self.rotation,
            translation: self.translation,
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }

    /// Applies a world rotation: the returned camera sees `R x` where this one saw `x`.
    pub fn rotated_world(&self, r: &Rotation3<f64>) -> Camera {
        Camera {
            rotation: self.rotation * r.matrix().transpose(),
            ..self.clone()
        }
    }
}

/// Per-pixel `(d, m)` ray coordinates with `m = o × d`, row-major `h × w`.
#[derive(Debug, Clone, PartialEq)]
pub struct PluckerMap {
    pub height: usize,
    pub width: usize,
    pub rays: Vec<[f64; 6]>,
}

impl PluckerMap {
    pub fn at(&self, row: usize, col: usize) -> &[f64; 6] {
        &self.rays[row * self.width + col]
    }
}

/// Ray map at latent resolution, intrinsics rescaled to `h_lat × w_lat`.
pub fn plucker_map(camera: &Camera, h_lat: usize, w_lat: usize) -> PluckerMap {
    assert!(h_lat >= 1 && w_lat >= 1, "latent resolution must be positive");
    let cam = camera.rescaled(w_lat as u32, h_lat as u32);
    let origin = cam.center().coords;
    let mut rays = Vec::with_capacity(h_lat * w_lat);
    for row in 0..h_lat {
        for col in 0..w_lat {
            let d = cam.ray_direction(&Vector2::new(col as f64 + 0.5, row as f64 + 0.5));
            let m = origin.cross(&d);
            rays.push([d.x, d.y, d.z, m.x, m.y, m.z]);
        }
    }
    PluckerMap {
        height: h_lat,
        width: w_lat,
        rays,
    }
}

/// Distance at which a sphere of `radius` fills `DEFAULT_FILL` of the vertical field of view.
pub fn framing_distance(radius: f64, vfov_deg: f64) -> f64 {
    radius / (DEFAULT_FILL * (0.5 * vfov_deg.to_radians()).tan())
}

/// Look-at cameras on the horizon circle (elevation 0) aimed at the origin.
pub fn rig_with_azimuths(
    distance: f64,
    resolution: u32,
    azimuths_deg: &[f64],
    vfov_deg: f64,
) -> Result<Vec<Camera>> {
    if !(distance > 0.0) {
        return Err(Error::invalid("rig", format!("distance must be positive, got {distance}")));
    }
    azimuths_deg
        .iter()
        .map(|az| {
            let a = az.to_radians();
            let eye = Point3::new(distance * a.cos(), distance * a.sin(), 0.0);
            Camera::look_at(eye, Point3::origin(), Vector3::z(), vfov_deg, resolution, resolution)
        })
        .collect()
}

/// The standard four-view rig: azimuths 0°, 90°, 180°, 270° at elevation 0°.
pub fn canonical_rig(distance: f64, resolution: u32) -> Result<Vec<Camera>> {
    rig_with_azimuths(distance, resolution, &CANONICAL_AZIMUTHS_DEG, DEFAULT_VFOV_DEG)
}

/// Azimuth in degrees of a horizon camera, in `[0, 360)`.
pub fn azimuth_deg(camera: &Camera) -> f64 {
    let c = camera.center();
    let a = c.y.atan2(c.x).to_degrees();
    let a = if a < 0.0 { a + 360.0 } else { a };
    if a >= 360.0 - 1e-9 {
        0.0
    } else {
        a
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CameraFile {
    pub cameras: Vec<CameraRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CameraRecord {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        let r = &c.rotation;
        Self {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [c.translation.x, c.translation.y, c.translation.z],
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

impl TryFrom<CameraRecord> for Camera {
    type Error = Error;

    fn try_from(r: CameraRecord) -> Result<Self> {
        let m = r.rotation;
        Camera::new(
            Matrix3::new(
                m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
            ),
            Vector3::from(r.translation),
            r.fx,
            r.fy,
            r.cx,
            r.cy,
            r.width,
            r.height,
        )
    }
}

pub fn load_cameras(path: &Path) -> Result<Vec<Camera>> {
    let file: CameraFile = io::read_json(path)?;
    file.cameras.into_iter().map(Camera::try_from).collect()
}

pub fn save_cameras(path: &Path, cameras: &[Camera]) -> Result<()> {
    io::write_json(
        path,
        &CameraFile {
            cameras: cameras.iter().map(CameraRecord::from).collect(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn front_camera() -> Camera {
        Camera::look_at(Point3::new(3.0, 0.0, 0.0), Point3::origin(), Vector3::z(), 40.0, 512, 512).unwrap()
    }

    #[test]
    fn principal_ray_hits_center() {
        let cam = front_camera();
        let p = cam.project(&Point3::origin());
        assert_relative_eq!(p.pixel, Vector2::new(cam.cx, cam.cy), epsilon = 1e-12);
        assert_relative_eq!(p.depth, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn pinhole_formula_on_camera_x_axis() {
        let cam = Camera::new(Matrix3::identity(), Vector3::zeros(), 500.0, 400.0, 256.0, 200.0, 512, 400).unwrap();
        let p = cam.project(&Point3::new(0.3, 0.0, 2.0));
        assert_relative_eq!(p.pixel, Vector2::new(256.0 + 500.0 * 0.3 / 2.0, 200.0), epsilon = 1e-12);
        assert!(cam.project(&Point3::new(0.0, 0.0, -1.0)).depth <= 0.0);
        assert!(!cam.project(&Point3::new(0.0, 0.0, -1.0)).in_front());
    }

    #[test]
    fn unproject_project_fixed_point() {
        let cam = Camera::look_at(Point3::new(2.0, -2.5, 0.7), Point3::new(0.1, 0.2, 0.0), Vector3::z(), 40.0, 640, 480).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let px = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let depth = rng.random_range(0.5..10.0);
            let back = cam.project(&cam.unproject(&px, depth));
            assert!((back.pixel - px).norm() < 1e-9);
            assert_relative_eq!(back.depth, depth, epsilon = 1e-9);
        }
    }

    #[test]
    fn projection_is_scale_consistent() {
        let cam = front_camera();
        let c = cam.center();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let p = Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let lambda = rng.random_range(0.1..5.0);
            let q = c + (p - c) * lambda;
            assert!((cam.project(&p).pixel - cam.project(&q).pixel).norm() < 1e-9);
        }
    }

    #[test]
    fn rejects_invalid_intrinsics() {
        assert!(Camera::new(Matrix3::identity(), Vector3::zeros(), 0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(Camera::new(Matrix3::identity(), Vector3::zeros(), 1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(Camera::new(Matrix3::identity() * 2.0, Vector3::zeros(), 1.0, 1.0, 1.0, 1.0, 4, 4).is_err());
    }

    #[test]
    fn plucker_invariants_hold() {
        for cam in canonical_rig(3.0, 512).unwrap() {
            let map = plucker_map(&cam, 6, 8);
            assert_eq!(map.rays.len(), 48);
            for r in &map.rays {
                let d = Vector3::new(r[0], r[1], r[2]);
                let m = Vector3::new(r[3], r[4], r[5]);
                assert!((d.norm() - 1.0).abs() < 1e-9);
                assert!(d.dot(&m).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ray_through_origin_has_zero_moment() {
        let cam = Camera::look_at(Point3::origin(), Point3::new(1.0, 0.0, 0.0), Vector3::z(), 40.0, 64, 64).unwrap();
        for r in plucker_map(&cam, 4, 4).rays {
            assert!(Vector3::new(r[3], r[4], r[5]).norm() < 1e-15);
        }
    }

    #[test]
    fn center_pixel_direction_points_at_target() {
        let eye = Point3::new(1.0, 2.0, 0.5);
        let target = Point3::new(-0.3, 0.1, 0.2);
        let cam = Camera::look_at(eye, target, Vector3::z(), 40.0, 64, 64).unwrap();
        // Odd latent size so one latent pixel center lands on the principal point.
        let map = plucker_map(&cam, 5, 5);
        let r = map.at(2, 2);
        let expected = (target - eye).normalize();
        assert_relative_eq!(Vector3::new(r[0], r[1], r[2]), expected, epsilon = 1e-12);
    }

    #[test]
    fn plucker_map_is_rotation_equivariant() {
        let cam = canonical_rig(3.0, 64).unwrap()[0].clone();
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let rotated = cam.rotated_world(&r);
        let a = plucker_map(&cam, 4, 4);
        let b = plucker_map(&rotated, 4, 4);
        for (ra, rb) in a.rays.iter().zip(&b.rays) {
            let d = r * Vector3::new(ra[0], ra[1], ra[2]);
            let m = r * Vector3::new(ra[3], ra[4], ra[5]);
            assert_relative_eq!(d, Vector3::new(rb[0], rb[1], rb[2]), epsilon = 1e-12);
            assert_relative_eq!(m, Vector3::new(rb[3], rb[4], rb[5]), epsilon = 1e-12);
        }
    }

    #[test]
    fn canonical_rig_layout() {
        let rig = canonical_rig(3.0, 512).unwrap();
        let az: Vec<f64> = rig.iter().map(azimuth_deg).collect();
        for (a, e) in az.iter().zip(CANONICAL_AZIMUTHS_DEG) {
            assert_relative_eq!(*a, e, epsilon = 1e-9);
        }
        for cam in &rig {
            assert_eq!((cam.cx, cam.cy), (256.0, 256.0));
            assert_relative_eq!(cam.project(&Point3::origin()).pixel, Vector2::new(256.0, 256.0), epsilon = 1e-9);
            assert_relative_eq!(cam.center().coords.z, 0.0, epsilon = 1e-12);
        }
        let p = Point3::new(0.7, 0.0, 0.0);
        let off90 = rig[1].project(&p).pixel.x - 256.0;
        let off270 = rig[3].project(&p).pixel.x - 256.0;
        assert!(off90.abs() > 1.0);
        assert_relative_eq!(off90, -off270, epsilon = 1e-9);
        assert!(canonical_rig(0.0, 512).is_err());
    }

    #[test]
    fn up_axis_projects_upward() {
        let cam = front_camera();
        assert!(cam.project(&Point3::new(0.0, 0.0, 0.5)).pixel.y < cam.cy);
    }

    #[test]
    fn camera_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cams.json");
        let rig = rig_with_azimuths(3.5, 256, &[0.0, 90.0, 190.0, 270.0], 40.0).unwrap();
        save_cameras(&path, &rig).unwrap();
        let back = load_cameras(&path).unwrap();
        assert_eq!(back, rig);
    }
}
