//! Color channel decompositions and their pooling weights.
//!
//! Stored 8-bit RGB is rescaled to `[0, 1]` before any transform.

use serde::{Deserialize, Serialize};

use crate::cloud::{PointCloud, Rgb};
use crate::error::{Error, Result};
use crate::graph::{SignalAttribute, SignalKind};

/// Rows map (R, G, B) to one luminance and two chrominance channels.
pub const GCM_MATRIX: [[f64; 3]; 3] = [
    [0.06, 0.63, 0.27],
    [0.30, 0.04, -0.35],
    [0.34, -0.6, 0.17],
];

// ITU-R BT.709 luma coefficients.
const KR: f64 = 0.2126;
const KG: f64 = 0.7152;
const KB: f64 = 0.0722;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Gcm,
    Yuv,
    Rgb,
}

impl ColorSpace {
    /// Luminance-heavy 6:1:1 for GCM and YUV, green-heavy 1:2:1 for RGB.
    pub fn default_weights(self) -> [f64; 3] {
        match self {
            ColorSpace::Gcm | ColorSpace::Yuv => [6.0, 1.0, 1.0],
            ColorSpace::Rgb => [1.0, 2.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorSpaceConfig {
    pub space: ColorSpace,
    pub weights: [f64; 3],
}

impl ColorSpaceConfig {
    pub fn new(space: ColorSpace) -> Self {
        Self {
            space,
            weights: space.default_weights(),
        }
    }

    pub fn with_weights(space: ColorSpace, weights: [f64; 3]) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().all(|&w| w == 0.0)
        {
            return Err(Error::domain(format!("invalid channel weights {weights:?}")));
        }
        Ok(Self { space, weights })
    }

    pub fn convert(&self, rgb: [f64; 3]) -> [f64; 3] {
        match self.space {
            ColorSpace::Gcm => to_gcm(rgb),
            ColorSpace::Yuv => to_yuv(rgb),
            ColorSpace::Rgb => rgb,
        }
    }
}

impl Default for ColorSpaceConfig {
    fn default() -> Self {
        Self::new(ColorSpace::Gcm)
    }
}

pub fn rescale(rgb: Rgb) -> [f64; 3] {
    rgb.map(|c| c as f64 / 255.0)
}

/// Gaussian color model transform of unit-range RGB.
pub fn to_gcm(rgb: [f64; 3]) -> [f64; 3] {
    GCM_MATRIX.map(|row| row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2])
}

/// BT.709 full-range YUV of unit-range RGB, chroma offset to 0.5.
pub fn to_yuv(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    let y = KR * r + KG * g + KB * b;
    let u = (b - y) / (2.0 * (1.0 - KB)) + 0.5;
    let v = (r - y) / (2.0 * (1.0 - KR)) + 0.5;
    [y, u, v]
}

/// Three-channel color signal of `cloud` in the configured space.
pub fn decompose(cloud: &PointCloud, config: &ColorSpaceConfig) -> Result<SignalAttribute> {
    let colors = cloud.colors().ok_or_else(|| {
        Error::domain("cloud has no colors; use the coordinate or normal signal instead")
    })?;
    let rows: Vec<[f64; 3]> = colors.iter().map(|&c| config.convert(rescale(c))).collect();
    SignalAttribute::from_rows(SignalKind::Color, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;
    use proptest::prelude::*;

    #[test]
    fn gcm_reference_values() {
        assert_eq!(to_gcm([0.0; 3]), [0.0; 3]);
        assert_eq!(to_gcm([1.0, 0.0, 0.0]), [0.06, 0.30, 0.34]);
        let white = to_gcm([1.0; 3]);
        for (got, want) in white.iter().zip([0.96, -0.01, -0.09]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn yuv_reference_values() {
        assert_eq!(to_yuv([0.0; 3]), [0.0, 0.5, 0.5]);
        let white = to_yuv([1.0; 3]);
        for (got, want) in white.iter().zip([1.0, 0.5, 0.5]) {
            assert!((got - want).abs() < 1e-12);
        }
        let red = to_yuv([1.0, 0.0, 0.0]);
        assert!((red[0] - 0.2126).abs() < 1e-15);
        assert!((red[1] - 0.38542789394266).abs() < 1e-14);
        assert!((red[2] - 1.0).abs() < 1e-14);
    }

    fn cloud_with(colors: Vec<Rgb>) -> PointCloud {
        let pts = (0..colors.len()).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        PointCloud::new(pts).unwrap().with_colors(colors).unwrap()
    }

    #[test]
    fn decompose_modes() {
        let cloud = cloud_with(vec![[255, 0, 0], [10, 20, 30]]);
        let rgb = decompose(&cloud, &ColorSpaceConfig::new(ColorSpace::Rgb)).unwrap();
        assert_eq!(rgb.value(0), &[1.0, 0.0, 0.0]);

        let gcm = decompose(&cloud, &ColorSpaceConfig::default()).unwrap();
        let c = [10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0];
        for (k, row) in GCM_MATRIX.iter().enumerate() {
            let want = row[0] * c[0] + row[1] * c[1] + row[2] * c[2];
            assert!((gcm.value(1)[k] - want).abs() < 1e-15);
        }

        let gray = cloud_with(vec![[40, 40, 40], [200, 200, 200], [90, 90, 90]]);
        let yuv = decompose(&gray, &ColorSpaceConfig::new(ColorSpace::Yuv)).unwrap();
        for i in 0..3 {
            assert!((yuv.value(i)[1] - 0.5).abs() < 1e-12);
            assert!((yuv.value(i)[2] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn colorless_cloud_is_domain_error() {
        let cloud = PointCloud::new(vec![Point3::origin()]).unwrap();
        let err = decompose(&cloud, &ColorSpaceConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn weights_validate() {
        assert!(ColorSpaceConfig::with_weights(ColorSpace::Rgb, [0.0; 3]).is_err());
        assert!(ColorSpaceConfig::with_weights(ColorSpace::Rgb, [1.0, -1.0, 1.0]).is_err());
        assert_eq!(ColorSpaceConfig::new(ColorSpace::Rgb).weights, [1.0, 2.0, 1.0]);
    }

    proptest! {
        #[test]
        fn gcm_is_linear(
            x in proptest::array::uniform3(-1.0f64..1.0),
            y in proptest::array::uniform3(-1.0f64..1.0),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let mix = [0, 1, 2].map(|i| a * x[i] + b * y[i]);
            let lhs = to_gcm(mix);
            let (gx, gy) = (to_gcm(x), to_gcm(y));
            for i in 0..3 {
                prop_assert!((lhs[i] - (a * gx[i] + b * gy[i])).abs() < 1e-12);
            }
        }
    }
}
