//! Dense, 1D convolution and 1D transposed-convolution layers over flat
//! slices, with explicit backward passes.
//!
//! Signals are channel-major: element `(c, t)` of a `C x T` signal sits at
//! `c * T + t`. Convolutions use stride 1 and `kernel / 2` zero padding, so the
//! length is preserved.

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense { inputs: usize, outputs: usize },
    Conv { in_ch: usize, out_ch: usize, kernel: usize, len: usize },
    Deconv { in_ch: usize, out_ch: usize, kernel: usize, len: usize },
}

impl LayerKind {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerKind::Dense { inputs, outputs } => inputs * outputs + outputs,
            LayerKind::Conv { in_ch, out_ch, kernel, .. } | LayerKind::Deconv { in_ch, out_ch, kernel, .. } => {
                in_ch * out_ch * kernel + out_ch
            }
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerKind::Dense { inputs, .. } => inputs,
            LayerKind::Conv { in_ch, kernel, .. } | LayerKind::Deconv { in_ch, kernel, .. } => in_ch * kernel,
        }
    }

    pub fn input_len(&self) -> usize {
        match *self {
            LayerKind::Dense { inputs, .. } => inputs,
            LayerKind::Conv { in_ch, len, .. } | LayerKind::Deconv { in_ch, len, .. } => in_ch * len,
        }
    }

    pub fn output_len(&self) -> usize {
        match *self {
            LayerKind::Dense { outputs, .. } => outputs,
            LayerKind::Conv { out_ch, len, .. } | LayerKind::Deconv { out_ch, len, .. } => out_ch * len,
        }
    }

    /// Number of weights (excluding biases).
    pub fn weight_count(&self) -> usize {
        self.param_count() - self.bias_count()
    }

    pub fn bias_count(&self) -> usize {
        match *self {
            LayerKind::Dense { outputs, .. } => outputs,
            LayerKind::Conv { out_ch, .. } | LayerKind::Deconv { out_ch, .. } => out_ch,
        }
    }

    pub fn forward(&self, params: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(params.len(), self.param_count());
        debug_assert_eq!(x.len(), self.input_len());
        debug_assert_eq!(y.len(), self.output_len());
        let (w, b) = params.split_at(self.weight_count());
        match *self {
            LayerKind::Dense { inputs, .. } => {
                for (o, yo) in y.iter_mut().enumerate() {
                    let row = &w[o * inputs..(o + 1) * inputs];
                    *yo = b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
                }
            }
            LayerKind::Conv { in_ch, out_ch, kernel, len } => {
                let pad = kernel / 2;
                for o in 0..out_ch {
                    let yo = &mut y[o * len..(o + 1) * len];
                    yo.fill(b[o]);
                    for i in 0..in_ch {
                        let xi = &x[i * len..(i + 1) * len];
                        for j in 0..kernel {
                            let wv = w[(o * in_ch + i) * kernel + j];
                            // t + j - pad in [0, len)
                            let t_lo = pad.saturating_sub(j);
                            let t_hi = (len + pad).saturating_sub(j).min(len);
                            for t in t_lo..t_hi {
                                yo[t] += wv * xi[t + j - pad];
                            }
                        }
                    }
                }
            }
            LayerKind::Deconv { in_ch, out_ch, kernel, len } => {
                let pad = kernel / 2;
                for o in 0..out_ch {
                    y[o * len..(o + 1) * len].fill(b[o]);
                }
                for i in 0..in_ch {
                    let xi = &x[i * len..(i + 1) * len];
                    for o in 0..out_ch {
                        let yo = &mut y[o * len..(o + 1) * len];
                        for j in 0..kernel {
                            let wv = w[(i * out_ch + o) * kernel + j];
                            // t = s + j - pad
                            let s_lo = pad.saturating_sub(j);
                            let s_hi = (len + pad).saturating_sub(j).min(len);
                            for s in s_lo..s_hi {
                                yo[s + j - pad] += wv * xi[s];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients into `grad` and, when `gx` is given,
    /// writes the input gradient.
    pub fn backward(&self, params: &[f64], x: &[f64], gy: &[f64], grad: &mut [f64], gx: Option<&mut [f64]>) {
        let wc = self.weight_count();
        let (w, _) = params.split_at(wc);
        let (gw, gb) = grad.split_at_mut(wc);
        match *self {
            LayerKind::Dense { inputs, .. } => {
                for (o, &g) in gy.iter().enumerate() {
                    gb[o] += g;
                    for (gwi, xi) in gw[o * inputs..(o + 1) * inputs].iter_mut().zip(x) {
                        *gwi += g * xi;
                    }
                }
                if let Some(gx) = gx {
                    gx.fill(0.0);
                    for (o, &g) in gy.iter().enumerate() {
                        for (gxi, wi) in gx.iter_mut().zip(&w[o * inputs..(o + 1) * inputs]) {
                            *gxi += g * wi;
                        }
                    }
                }
            }
            LayerKind::Conv { in_ch, out_ch, kernel, len } => {
                let pad = kernel / 2;
                let mut gx = gx;
                if let Some(gx) = gx.as_deref_mut() {
                    gx.fill(0.0);
                }
                for o in 0..out_ch {
                    let go = &gy[o * len..(o + 1) * len];
                    gb[o] += go.iter().sum::<f64>();
                    for i in 0..in_ch {
                        let xi = &x[i * len..(i + 1) * len];
                        for j in 0..kernel {
                            let idx = (o * in_ch + i) * kernel + j;
                            let t_lo = pad.saturating_sub(j);
                            let t_hi = (len + pad).saturating_sub(j).min(len);
                            let mut acc = 0.0;
                            for t in t_lo..t_hi {
                                acc += go[t] * xi[t + j - pad];
                            }
                            gw[idx] += acc;
                            if let Some(gx) = gx.as_deref_mut() {
                                let wv = w[idx];
                                let gxi = &mut gx[i * len..(i + 1) * len];
                                for t in t_lo..t_hi {
                                    gxi[t + j - pad] += wv * go[t];
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::Deconv { in_ch, out_ch, kernel, len } => {
                let pad = kernel / 2;
                let mut gx = gx;
                if let Some(gx) = gx.as_deref_mut() {
                    gx.fill(0.0);
                }
                for o in 0..out_ch {
                    gb[o] += gy[o * len..(o + 1) * len].iter().sum::<f64>();
                }
                for i in 0..in_ch {
                    let xi = &x[i * len..(i + 1) * len];
                    for o in 0..out_ch {
                        let go = &gy[o * len..(o + 1) * len];
                        for j in 0..kernel {
                            let idx = (i * out_ch + o) * kernel + j;
                            let s_lo = pad.saturating_sub(j);
                            let s_hi = (len + pad).saturating_sub(j).min(len);
                            let mut acc = 0.0;
                            for s in s_lo..s_hi {
                                acc += go[s + j - pad] * xi[s];
                            }
                            gw[idx] += acc;
                            if let Some(gx) = gx.as_deref_mut() {
                                let wv = w[idx];
                                let gxi = &mut gx[i * len..(i + 1) * len];
                                for s in s_lo..s_hi {
                                    gxi[s] += wv * go[s + j - pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn leaky(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
}

/// Multiplies `g` by the leaky-rectifier derivative at the activated output `y`.
pub fn leaky_backward(y: &[f64], g: &mut [f64]) {
    for (gv, &yv) in g.iter_mut().zip(y) {
        if yv < 0.0 {
            *gv *= LEAKY_SLOPE;
        }
    }
}
