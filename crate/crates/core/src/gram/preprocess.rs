use ndarray::{Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::imaging::Raster;
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Bilinear,
}

/// How images are brought to the backbone's input distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    /// Square side length every image is resized to before extraction.
    pub resolution: usize,
    pub interpolation: Interpolation,
    pub channel_means: [f32; 3],
    pub channel_stds: [f32; 3],
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        PreprocessSpec {
            resolution: 256,
            interpolation: Interpolation::Bilinear,
            channel_means: [0.485, 0.456, 0.406],
            channel_stds: [0.229, 0.224, 0.225],
        }
    }
}

impl PreprocessSpec {
    pub fn with_resolution(resolution: usize) -> Self {
        PreprocessSpec {
            resolution,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        // five 2× poolings separate conv1-1 from conv5-1
        if self.resolution < 16 {
            return Err(Error::input(format!(
                "preprocessing resolution {} is below the backbone minimum of 16",
                self.resolution
            )));
        }
        if self.channel_stds.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::input("channel_stds must be positive"));
        }
        Ok(())
    }

    /// Resized, normalized `(1, 3, R, R)` backbone input.
    pub fn apply<T: Scalar>(&self, image: &Raster) -> Result<Array4<T>> {
        self.validate()?;
        let resized = image.resized(self.resolution, self.resolution);
        let mut x = resized.pixels().mapv(|v| T::of(v as f64));
        for (c, mut plane) in x.axis_iter_mut(Axis(0)).enumerate() {
            let (m, s) = (T::of(self.channel_means[c] as f64), T::of(self.channel_stds[c] as f64));
            plane.mapv_inplace(|v| (v - m) / s);
        }
        Ok(x.insert_axis(Axis(0)))
    }
}
