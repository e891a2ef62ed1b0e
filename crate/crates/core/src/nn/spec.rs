use serde::{Deserialize, Serialize};

use crate::error::{shape_err, spec_err, Result};

/// Static description of a (possibly grouped, possibly transposed) 3D
/// convolution.
///
/// Non-transposed layers pad `(k - 1) / 2` per side, so every output dim is
/// `ceil(input / stride)`. Transposed layers pad `(k - s) / 2`, so every
/// output dim is `input * stride`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub groups: usize,
    pub bias: bool,
    pub transposed: bool,
}

impl ConvSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: [usize; 3], stride: [usize; 3]) -> Self {
        Self { in_channels, out_channels, kernel, stride, groups: 1, bias: true, transposed: false }
    }

    pub fn deconv(in_channels: usize, out_channels: usize, kernel: [usize; 3], stride: [usize; 3]) -> Self {
        Self { in_channels, out_channels, kernel, stride, groups: 1, bias: true, transposed: true }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.groups;
        if g == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(spec_err!("channels and groups must be positive: {self:?}"));
        }
        if self.in_channels % g != 0 || self.out_channels % g != 0 {
            return Err(spec_err!(
                "groups {g} must divide in_channels {} and out_channels {}",
                self.in_channels,
                self.out_channels
            ));
        }
        for d in 0..3 {
            let (k, s) = (self.kernel[d], self.stride[d]);
            if k == 0 || s == 0 {
                return Err(spec_err!("kernel {:?} and stride {:?} must be positive", self.kernel, self.stride));
            }
            if self.transposed {
                if k < s || (k - s) % 2 != 0 {
                    return Err(spec_err!(
                        "transposed kernel {:?} minus stride {:?} must be even and non-negative",
                        self.kernel,
                        self.stride
                    ));
                }
            } else if k % 2 == 0 {
                return Err(spec_err!("kernel {:?} must be odd in every dim", self.kernel));
            }
        }
        Ok(())
    }

    pub fn padding(&self) -> [usize; 3] {
        std::array::from_fn(|d| {
            if self.transposed {
                (self.kernel[d] - self.stride[d]) / 2
            } else {
                (self.kernel[d] - 1) / 2
            }
        })
    }

    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        if input.contains(&0) {
            return Err(shape_err!("empty spatial input {input:?}"));
        }
        Ok(std::array::from_fn(|d| {
            if self.transposed {
                input[d] * self.stride[d]
            } else {
                input[d].div_ceil(self.stride[d])
            }
        }))
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Weight layout `[small, big / groups, kt, kh, kw]`: the output channel
    /// leads for a convolution, the input channel for a transposed one.
    pub fn weight_dims(&self) -> [usize; 5] {
        let [kt, kh, kw] = self.kernel;
        if self.transposed {
            [self.in_channels, self.out_channels / self.groups, kt, kh, kw]
        } else {
            [self.out_channels, self.in_channels / self.groups, kt, kh, kw]
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels / self.groups * self.kernel_volume()
    }

    pub fn weight_count(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel_volume() / self.groups
    }

    /// Stride 1 and shape preserving, the condition for sitting inside a
    /// coupling layer or being replaced by an invertible module.
    pub fn is_shape_preserving(&self) -> bool {
        !self.transposed && self.stride == [1, 1, 1] && self.in_channels == self.out_channels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shapes() {
        let c = ConvSpec::conv(8, 64, [7, 3, 3], [3, 1, 1]);
        assert_eq!(c.output_dims([896, 40, 40]).unwrap(), [299, 40, 40]);
        let d = ConvSpec::deconv(512, 256, [4, 4, 4], [2, 2, 2]);
        d.validate().unwrap();
        assert_eq!(d.output_dims([1, 1, 1]).unwrap(), [2, 2, 2]);
        let d = ConvSpec::deconv(64, 32, [5, 4, 4], [3, 2, 2]);
        assert_eq!(d.output_dims([8, 8, 8]).unwrap(), [24, 16, 16]);
        let d = ConvSpec::deconv(16, 4, [7, 7, 7], [5, 5, 5]);
        assert_eq!(d.padding(), [1, 1, 1]);
        assert_eq!(d.output_dims([72, 80, 80]).unwrap(), [360, 400, 400]);
    }

    #[test]
    fn invalid_specs() {
        assert!(ConvSpec::conv(4, 8, [2, 3, 3], [1, 1, 1]).validate().is_err());
        assert!(ConvSpec::conv(4, 6, [3, 3, 3], [1, 1, 1]).with_groups(4).validate().is_err());
        assert!(ConvSpec::deconv(4, 4, [4, 3, 3], [1, 1, 1]).validate().is_err());
        assert!(ConvSpec::deconv(4, 4, [1, 1, 1], [3, 1, 1]).validate().is_err());
        assert!(ConvSpec::conv(4, 4, [3, 3, 3], [0, 1, 1]).validate().is_err());
    }
}
