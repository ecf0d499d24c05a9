use super::conv::Geometry;
use super::Activation;
use crate::error::Result;

/// One 2D convolution row of a network table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub filter: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub activation: Activation,
}

impl Conv2dSpec {
    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(
            [1, self.filter.0, self.filter.1],
            [1, self.stride.0, self.stride.1],
            [0, self.padding.0, self.padding.1],
        )
    }

    /// Output `(height, width)` for an input of `(height, width)`.
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let [_, oh, ow] = self.geometry().ok()?.conv_output([1, h, w])?;
        Some((oh, ow))
    }
}

/// One 3D (transposed or plain) convolution row: axes are the two taxel
/// axes followed by time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub filter: (usize, usize, usize),
    pub stride: (usize, usize, usize),
    pub padding: (usize, usize, usize),
    pub activation: Activation,
}

/// Transposed 3D convolution row; same fields as [`Conv3dSpec`].
pub type Deconv3dSpec = Conv3dSpec;

impl Conv3dSpec {
    pub fn geometry(&self) -> Result<Geometry> {
        let t = |v: (usize, usize, usize)| [v.0, v.1, v.2];
        Geometry::new(t(self.filter), t(self.stride), t(self.padding))
    }
}
