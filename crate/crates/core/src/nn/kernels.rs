//! Hot loops shared by the dense and convolution layers.
//!
//! Reductions use eight independent accumulators so the compiler can keep them
//! in vector registers; the summation order is fixed, so results are
//! reproducible run to run.

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for lane in 0..8 {
            acc[lane] += x[lane] * y[lane];
        }
    }
    let mut sum = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        sum += x * y;
    }
    sum
}

/// `dst += alpha * src`
#[inline]
pub(crate) fn axpy(alpha: f32, src: &[f32], dst: &mut [f32]) {
    debug_assert_eq!(src.len(), dst.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

/// Copies a `channels x height x width` tensor into a zero-padded buffer.
pub(crate) fn pad_input(
    input: &[f32],
    channels: usize,
    height: usize,
    width: usize,
    pad: usize,
) -> Vec<f32> {
    if pad == 0 {
        return input.to_vec();
    }
    let (ph, pw) = (height + 2 * pad, width + 2 * pad);
    let mut out = vec![0f32; channels * ph * pw];
    for c in 0..channels {
        for y in 0..height {
            let src = &input[(c * height + y) * width..][..width];
            let dst = &mut out[(c * ph + y + pad) * pw + pad..][..width];
            dst.copy_from_slice(src);
        }
    }
    out
}

pub(crate) struct ConvGeometry {
    pub in_channels: usize,
    /// Padded input height and width.
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub filters: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        self.height - self.kernel + 1
    }

    pub fn out_width(&self) -> usize {
        self.width - self.kernel + 1
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Valid cross-correlation of a padded input with every filter, bias included.
/// Parameter rows are `fan_in` weights in `(channel, ky, kx)` order followed by the bias.
pub(crate) fn conv_forward(g: &ConvGeometry, padded: &[f32], params: &[f32], out: &mut [f32]) {
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
    let stride = g.fan_in() + 1;
    for f in 0..g.filters {
        let row = &params[f * stride..][..stride];
        let plane = &mut out[f * oh * ow..][..oh * ow];
        plane.fill(row[stride - 1]);
        for c in 0..g.in_channels {
            let src_plane = &padded[c * g.height * g.width..][..g.height * g.width];
            for ky in 0..k {
                for kx in 0..k {
                    let w = row[(c * k + ky) * k + kx];
                    for oy in 0..oh {
                        let src = &src_plane[(oy + ky) * g.width + kx..][..ow];
                        axpy(w, src, &mut plane[oy * ow..][..ow]);
                    }
                }
            }
        }
    }
}

/// Accumulates parameter gradients and, when requested, the gradient with
/// respect to the padded input.
pub(crate) fn conv_backward(
    g: &ConvGeometry,
    padded: &[f32],
    params: &[f32],
    dpre: &[f32],
    grad: &mut [f32],
    mut dpadded: Option<&mut [f32]>,
) {
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
    let stride = g.fan_in() + 1;
    for f in 0..g.filters {
        let row = &params[f * stride..][..stride];
        let grow = &mut grad[f * stride..][..stride];
        let dplane = &dpre[f * oh * ow..][..oh * ow];
        grow[stride - 1] += dplane.iter().sum::<f32>();
        for c in 0..g.in_channels {
            let plane_off = c * g.height * g.width;
            let src_plane = &padded[plane_off..][..g.height * g.width];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = (c * k + ky) * k + kx;
                    let mut acc = 0f32;
                    for oy in 0..oh {
                        let src = &src_plane[(oy + ky) * g.width + kx..][..ow];
                        acc += dot(&dplane[oy * ow..][..ow], src);
                    }
                    grow[widx] += acc;
                    if let Some(dp) = dpadded.as_deref_mut() {
                        let w = row[widx];
                        for oy in 0..oh {
                            let dst = &mut dp[plane_off + (oy + ky) * g.width + kx..][..ow];
                            axpy(w, &dplane[oy * ow..][..ow], dst);
                        }
                    }
                }
            }
        }
    }
}
