use serde::{Deserialize, Serialize};

use super::EmbeddingError;

/// One valid (unpadded, stride 1) convolution with ReLU and an optional 2×2 max pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    /// Kernel extent as (time, frequency).
    pub kernel: (usize, usize),
    pub channels: usize,
    pub pool: bool,
}

/// Network topology: conv stack, flatten, ReLU dense layers, linear output of size `dim`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Input as (time frames Q, frequency bins K); one channel.
    pub input: (usize, usize),
    pub conv: Vec<ConvLayer>,
    pub dense: Vec<usize>,
    pub dim: usize,
    /// Shift each input patch so its maximum is 0 before the forward pass.
    #[serde(default)]
    pub normalize_patches: bool,
}

/// Resolved dimensions of one conv layer for a given input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_h: usize,
    pub in_w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pool: bool,
}

impl ConvShape {
    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Spatial size after pooling (floor).
    pub fn pooled(&self) -> (usize, usize) {
        if self.pool {
            (self.out_h / 2, self.out_w / 2)
        } else {
            (self.out_h, self.out_w)
        }
    }

    pub fn output_len(&self) -> usize {
        let (h, w) = self.pooled();
        h * w * self.cout
    }
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::standard()
    }
}

impl ArchConfig {
    /// 128×72 input, four 6×4 conv layers (16, 32, 64, 64 channels) each pooled, dense 128, D = 128.
    pub fn standard() -> Self {
        let conv = [16, 32, 64, 64]
            .into_iter()
            .map(|channels| ConvLayer {
                kernel: (6, 4),
                channels,
                pool: true,
            })
            .collect();
        Self {
            input: (128, 72),
            conv,
            dense: vec![128],
            dim: 128,
            normalize_patches: false,
        }
    }

    /// 8×6 input, two conv layers, D = 4. Small enough for finite differences.
    pub fn tiny() -> Self {
        Self {
            input: (8, 6),
            conv: vec![
                ConvLayer {
                    kernel: (3, 2),
                    channels: 3,
                    pool: true,
                },
                ConvLayer {
                    kernel: (2, 2),
                    channels: 4,
                    pool: false,
                },
            ],
            dense: vec![6],
            dim: 4,
            normalize_patches: false,
        }
    }

    /// Per-layer shapes, failing if any layer would shrink its input to nothing.
    pub fn conv_shapes(&self) -> Result<Vec<ConvShape>, EmbeddingError> {
        let (mut h, mut w) = self.input;
        if h == 0 || w == 0 {
            return Err(EmbeddingError::InvalidArch("empty input".into()));
        }
        let mut cin = 1;
        let mut shapes = Vec::with_capacity(self.conv.len());
        for (n, layer) in self.conv.iter().enumerate() {
            let (kh, kw) = layer.kernel;
            if kh == 0 || kw == 0 || layer.channels == 0 {
                return Err(EmbeddingError::InvalidArch(format!("conv layer {n}: zero-sized kernel or channels")));
            }
            if kh > h || kw > w {
                return Err(EmbeddingError::InvalidArch(format!(
                    "conv layer {n}: {kh}×{kw} kernel on {h}×{w} input"
                )));
            }
            let s = ConvShape {
                in_h: h,
                in_w: w,
                cin,
                kh,
                kw,
                cout: layer.channels,
                out_h: h - kh + 1,
                out_w: w - kw + 1,
                pool: layer.pool,
            };
            let (ph, pw) = s.pooled();
            if ph == 0 || pw == 0 {
                return Err(EmbeddingError::InvalidArch(format!("conv layer {n}: pooling leaves nothing")));
            }
            shapes.push(s);
            (h, w, cin) = (ph, pw, layer.channels);
        }
        Ok(shapes)
    }

    pub fn flatten_len(&self) -> Result<usize, EmbeddingError> {
        let shapes = self.conv_shapes()?;
        Ok(shapes.last().map_or(self.input.0 * self.input.1, ConvShape::output_len))
    }

    /// (fan_in, fan_out) of every dense layer including the output layer.
    pub fn dense_shapes(&self) -> Result<Vec<(usize, usize)>, EmbeddingError> {
        if self.dim == 0 || self.dense.contains(&0) {
            return Err(EmbeddingError::InvalidArch("zero-width dense layer".into()));
        }
        let mut fan_in = self.flatten_len()?;
        let mut out = Vec::with_capacity(self.dense.len() + 1);
        for &units in self.dense.iter().chain(std::iter::once(&self.dim)) {
            out.push((fan_in, units));
            fan_in = units;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        self.dense_shapes().map(|_| ())
    }

    pub fn n_params(&self) -> Result<usize, EmbeddingError> {
        let conv: usize = self.conv_shapes()?.iter().map(|s| (s.patch_len() + 1) * s.cout).sum();
        let dense: usize = self.dense_shapes()?.iter().map(|(i, o)| (i + 1) * o).sum();
        Ok(conv + dense)
    }
}
