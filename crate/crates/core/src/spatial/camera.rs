use serde::{Deserialize, Serialize};

use super::SpatialError;

const ORTHONORMAL_TOL: f64 = 1e-6;

/// Pinhole camera: 3x3 intrinsics in pixels and a rigid camera-from-ego
/// transform in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CalibFile", into = "CalibFile")]
pub struct CameraCalib {
    pub camera_id: String,
    pub intrinsics: [[f64; 3]; 3],
    /// Maps ego-frame homogeneous points into the camera frame.
    pub extrinsics: [[f64; 4]; 4],
    /// Optional image size in pixels; projections outside it are rejected
    /// by [`CameraCalib::in_image`].
    pub image_size: Option<[u32; 2]>,
}

/// On-disk calibration layout: row-major flat arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CalibFile {
    intrinsics: Vec<f64>,
    extrinsics: Vec<f64>,
    camera_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_size: Option<[u32; 2]>,
}

impl TryFrom<CalibFile> for CameraCalib {
    type Error = SpatialError;

    fn try_from(f: CalibFile) -> Result<Self, Self::Error> {
        if f.intrinsics.len() != 9 || f.extrinsics.len() != 16 {
            return Err(SpatialError::InvalidCalib(format!(
                "expected 9 intrinsics and 16 extrinsics, got {} and {}",
                f.intrinsics.len(),
                f.extrinsics.len()
            )));
        }
        let mut k = [[0.0; 3]; 3];
        let mut e = [[0.0; 4]; 4];
        for i in 0..9 {
            k[i / 3][i % 3] = f.intrinsics[i];
        }
        for i in 0..16 {
            e[i / 4][i % 4] = f.extrinsics[i];
        }
        CameraCalib::new(f.camera_id, k, e, f.image_size)
    }
}

impl From<CameraCalib> for CalibFile {
    fn from(c: CameraCalib) -> Self {
        CalibFile {
            intrinsics: c.intrinsics.iter().flatten().copied().collect(),
            extrinsics: c.extrinsics.iter().flatten().copied().collect(),
            camera_id: c.camera_id,
            image_size: c.image_size,
        }
    }
}

/// A projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
    /// Camera-frame z in meters.
    pub depth: f64,
}

impl CameraCalib {
    pub fn new(
        camera_id: impl Into<String>,
        intrinsics: [[f64; 3]; 3],
        extrinsics: [[f64; 4]; 4],
        image_size: Option<[u32; 2]>,
    ) -> Result<Self, SpatialError> {
        let calib = Self {
            camera_id: camera_id.into(),
            intrinsics,
            extrinsics,
            image_size,
        };
        calib.validate()?;
        Ok(calib)
    }

    /// Identity extrinsics with focal lengths `fx`, `fy` and principal point
    /// `(cx, cy)`.
    pub fn simple(camera_id: &str, fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, SpatialError> {
        let mut e = [[0.0; 4]; 4];
        for (i, row) in e.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self::new(
            camera_id,
            [[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]],
            e,
            None,
        )
    }

    pub fn validate(&self) -> Result<(), SpatialError> {
        let k = &self.intrinsics;
        let e = &self.extrinsics;
        if k.iter().flatten().chain(e.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(SpatialError::InvalidCalib("non-finite entry".into()));
        }
        if k[1][0] != 0.0 || k[2][0] != 0.0 || k[2][1] != 0.0 {
            return Err(SpatialError::InvalidCalib("intrinsics must be upper-triangular".into()));
        }
        if !(k[0][0] > 0.0 && k[1][1] > 0.0 && k[2][2] > 0.0) {
            return Err(SpatialError::InvalidCalib("focal lengths must be positive".into()));
        }
        if e[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(SpatialError::InvalidCalib("extrinsics last row must be [0,0,0,1]".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|r| e[r][i] * e[r][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > ORTHONORMAL_TOL {
                    return Err(SpatialError::InvalidCalib(
                        "extrinsic rotation is not orthonormal".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn ego_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let e = &self.extrinsics;
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            *o = e[r][0] * p[0] + e[r][1] * p[1] + e[r][2] * p[2] + e[r][3];
        }
        out
    }

    pub fn camera_to_ego(&self, c: [f64; 3]) -> [f64; 3] {
        let e = &self.extrinsics;
        let d = [c[0] - e[0][3], c[1] - e[1][3], c[2] - e[2][3]];
        let mut out = [0.0; 3];
        for (col, o) in out.iter_mut().enumerate() {
            *o = e[0][col] * d[0] + e[1][col] * d[1] + e[2][col] * d[2];
        }
        out
    }

    /// Pinhole projection of an ego-frame point.
    pub fn project(&self, point: [f64; 3]) -> Result<Pixel, SpatialError> {
        let c = self.ego_to_camera(point);
        if !(c[2] > 0.0) {
            return Err(SpatialError::BehindCamera { depth: c[2] });
        }
        let k = &self.intrinsics;
        let w = k[2][2] * c[2];
        let u = (k[0][0] * c[0] + k[0][1] * c[1] + k[0][2] * c[2]) / w;
        let v = (k[1][1] * c[1] + k[1][2] * c[2]) / w;
        Ok(Pixel { u, v, depth: c[2] })
    }

    /// Ego-frame point seen at pixel `(u, v)` with camera-frame depth `depth`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Result<[f64; 3], SpatialError> {
        if !(depth > 0.0 && depth.is_finite()) {
            return Err(SpatialError::NonPositiveDepth(depth));
        }
        // Solve K x = w [u, v, 1] with x_z = depth, where w = k22 * depth.
        let k = &self.intrinsics;
        let w = k[2][2] * depth;
        let z = depth;
        let y = (w * v - k[1][2] * z) / k[1][1];
        let x = (w * u - k[0][1] * y - k[0][2] * z) / k[0][0];
        Ok(self.camera_to_ego([x, y, z]))
    }

    /// Whether a projected pixel falls inside the image, when the size is known.
    pub fn in_image(&self, px: &Pixel) -> bool {
        match self.image_size {
            Some([w, h]) => px.u >= 0.0 && px.v >= 0.0 && px.u < w as f64 && px.v < h as f64,
            None => true,
        }
    }
}
