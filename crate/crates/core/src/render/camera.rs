use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Pinhole camera looking down its local `-z` axis with `+y` up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Row-major 4x4 rigid transform.
    pub camera_to_world: [f64; 16],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
    pub time: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, t_near: f64, t_far: f64, time: f64) -> Result<Self> {
        if !(t_near < t_far) {
            return Err(Error::InvalidInput(format!(
                "ray bounds must satisfy near < far, got [{t_near}, {t_far}]"
            )));
        }
        if !origin.is_finite() || !direction.is_finite() || (direction.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput("ray direction must be a finite unit vector".into()));
        }
        Ok(Self {
            origin,
            direction,
            t_near,
            t_far,
            time,
        })
    }

    pub fn at(&self, s: f64) -> Vec3 {
        self.origin + self.direction * s
    }
}

impl Camera {
    /// Camera at `eye` looking at `target`, with a horizontal field of view in radians.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fov_x: f64, width: usize, height: usize) -> Result<Self> {
        let back = (eye - target).normalized();
        let right = up.cross(back);
        if !back.is_finite() || right.norm() < 1e-9 {
            return Err(Error::InvalidInput("degenerate look-at frame".into()));
        }
        let right = right.normalized();
        let true_up = back.cross(right);
        let f = 0.5 * width as f64 / (0.5 * fov_x).tan();
        #[rustfmt::skip]
        let camera_to_world = [
            right.x, true_up.x, back.x, eye.x,
            right.y, true_up.y, back.y, eye.y,
            right.z, true_up.z, back.z, eye.z,
            0.0, 0.0, 0.0, 1.0,
        ];
        Ok(Self {
            camera_to_world,
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        })
    }

    pub fn origin(&self) -> Vec3 {
        let m = &self.camera_to_world;
        Vec3::new(m[3], m[7], m[11])
    }

    fn rotate(&self, v: Vec3) -> Vec3 {
        let m = &self.camera_to_world;
        Vec3::new(
            m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[4] * v.x + m[5] * v.y + m[6] * v.z,
            m[8] * v.x + m[9] * v.y + m[10] * v.z,
        )
    }

    /// Checks the pose is rigid (orthonormal rotation, determinant +1) and intrinsics are sane.
    pub fn validate(&self) -> Result<()> {
        let m = &self.camera_to_world;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("camera pose has non-finite entries".into()));
        }
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return Err(Error::InvalidInput("camera pose bottom row must be (0, 0, 0, 1)".into()));
        }
        let col = |j: usize| Vec3::new(m[j], m[4 + j], m[8 + j]);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (col(i).dot(col(j)) - expect).abs() > 1e-5 {
                    return Err(Error::InvalidInput("camera rotation is not orthonormal".into()));
                }
            }
        }
        let det = col(0).cross(col(1)).dot(col(2));
        if (det - 1.0).abs() > 1e-5 {
            return Err(Error::InvalidInput(format!(
                "camera rotation determinant is {det:.6}, expected +1"
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("camera intrinsics must be positive".into()));
        }
        Ok(())
    }

    /// Same pose and field of view at a different resolution.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            camera_to_world: self.camera_to_world,
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }

    /// World-space unit direction through the center of pixel `(row, col)`.
    pub fn pixel_direction(&self, row: usize, col: usize) -> Result<Vec3> {
        if row >= self.height || col >= self.width {
            return Err(Error::InvalidInput(format!(
                "pixel ({row}, {col}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let local = Vec3::new(
            (col as f64 + 0.5 - self.cx) / self.fx,
            -(row as f64 + 0.5 - self.cy) / self.fy,
            -1.0,
        );
        Ok(self.rotate(local).normalized())
    }

    pub fn generate_rays(
        &self,
        pixels: &[(usize, usize)],
        time: f64,
        t_near: f64,
        t_far: f64,
    ) -> Result<Vec<Ray>> {
        let origin = self.origin();
        pixels
            .iter()
            .map(|&(r, c)| Ray::new(origin, self.pixel_direction(r, c)?, t_near, t_far, time))
            .collect()
    }

    /// Rays for every pixel in row-major order.
    pub fn all_rays(&self, time: f64, t_near: f64, t_far: f64) -> Result<Vec<Ray>> {
        let pixels: Vec<_> = (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .collect();
        self.generate_rays(&pixels, time, t_near, t_far)
    }
}
