//! Fixed encoder/decoder stacks and the per-sample ELBO with its gradient.
//!
//! Encoder: `x (2 x L) -> conv -> conv -> flatten`, concatenated with an
//! embedded condition, then a hidden dense layer and the `(mu, log var)` heads.
//! Decoder: `[z, embedded condition] -> dense -> dense (C x L) -> deconv ->
//! deconv (2 x L)`, linear output.

use super::layers::{leaky, leaky_backward, LayerKind};
use super::CvaeConfig;

pub const CONDITION_DIM: usize = 6;
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Group {
    Encoder = 0,
    Decoder = 1,
    /// Reserved for a condition-dependent latent prior; unused by the
    /// standard-normal prior.
    Prior = 2,
}

impl Group {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Group::Encoder),
            1 => Some(Group::Decoder),
            2 => Some(Group::Prior),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerEntry {
    pub group: Group,
    pub name: String,
    pub kind: LayerKind,
    pub offset: usize,
}

const ENC_CONV1: usize = 0;
const ENC_CONV2: usize = 1;
const ENC_COND: usize = 2;
const ENC_HIDDEN: usize = 3;
const ENC_MU: usize = 4;
const ENC_LOGVAR: usize = 5;
const DEC_COND: usize = 6;
const DEC_HIDDEN: usize = 7;
const DEC_EXPAND: usize = 8;
const DEC_DECONV1: usize = 9;
const DEC_DECONV2: usize = 10;

/// Layer table derived from a config. Encoder layers precede decoder layers in
/// the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub layers: Vec<LayerEntry>,
    pub links: usize,
    pub latent: usize,
    pub encoder_len: usize,
    pub total_len: usize,
}

impl Architecture {
    pub fn new(cfg: &CvaeConfig) -> Self {
        let l = cfg.links;
        let [c1, c2] = cfg.channels;
        let k = cfg.kernel;
        let e = cfg.condition_embed;
        let h = cfg.hidden;
        let z = cfg.latent_dim;
        let spec = [
            (Group::Encoder, "enc_conv1", LayerKind::Conv { in_ch: 2, out_ch: c1, kernel: k, len: l }),
            (Group::Encoder, "enc_conv2", LayerKind::Conv { in_ch: c1, out_ch: c2, kernel: k, len: l }),
            (Group::Encoder, "enc_cond", LayerKind::Dense { inputs: CONDITION_DIM, outputs: e }),
            (Group::Encoder, "enc_hidden", LayerKind::Dense { inputs: c2 * l + e, outputs: h }),
            (Group::Encoder, "enc_mu", LayerKind::Dense { inputs: h, outputs: z }),
            (Group::Encoder, "enc_logvar", LayerKind::Dense { inputs: h, outputs: z }),
            (Group::Decoder, "dec_cond", LayerKind::Dense { inputs: CONDITION_DIM, outputs: e }),
            (Group::Decoder, "dec_hidden", LayerKind::Dense { inputs: z + e, outputs: h }),
            (Group::Decoder, "dec_expand", LayerKind::Dense { inputs: h, outputs: c2 * l }),
            (Group::Decoder, "dec_deconv1", LayerKind::Deconv { in_ch: c2, out_ch: c1, kernel: k, len: l }),
            (Group::Decoder, "dec_deconv2", LayerKind::Deconv { in_ch: c1, out_ch: 2, kernel: k, len: l }),
        ];
        let mut offset = 0;
        let mut encoder_len = 0;
        let layers = spec
            .into_iter()
            .map(|(group, name, kind)| {
                let entry = LayerEntry { group, name: name.to_string(), kind, offset };
                offset += kind.param_count();
                if group == Group::Encoder {
                    encoder_len = offset;
                }
                entry
            })
            .collect();
        Self { layers, links: l, latent: z, encoder_len, total_len: offset }
    }

    pub fn field_dim(&self) -> usize {
        2 * self.links
    }

    fn kind(&self, i: usize) -> LayerKind {
        self.layers[i].kind
    }

    fn range(&self, i: usize) -> std::ops::Range<usize> {
        let e = &self.layers[i];
        e.offset..e.offset + e.kind.param_count()
    }

    fn run(&self, i: usize, params: &[f64], x: &[f64]) -> Vec<f64> {
        let kind = self.kind(i);
        let mut y = vec![0.0; kind.output_len()];
        kind.forward(&params[self.range(i)], x, &mut y);
        y
    }

    fn back(&self, i: usize, params: &[f64], x: &[f64], gy: &[f64], grad: &mut [f64], want_gx: bool) -> Option<Vec<f64>> {
        let kind = self.kind(i);
        let r = self.range(i);
        if want_gx {
            let mut gx = vec![0.0; kind.input_len()];
            kind.backward(&params[r.clone()], x, gy, &mut grad[r], Some(&mut gx));
            Some(gx)
        } else {
            kind.backward(&params[r.clone()], x, gy, &mut grad[r], None);
            None
        }
    }

    pub fn encode(&self, params: &[f64], x: &[f64], c: &[f64]) -> EncoderTrace {
        let mut h1 = self.run(ENC_CONV1, params, x);
        leaky(&mut h1);
        let mut h2 = self.run(ENC_CONV2, params, &h1);
        leaky(&mut h2);
        let mut ce = self.run(ENC_COND, params, c);
        leaky(&mut ce);
        let mut cat = h2.clone();
        cat.extend_from_slice(&ce);
        let mut hid = self.run(ENC_HIDDEN, params, &cat);
        leaky(&mut hid);
        let mu = self.run(ENC_MU, params, &hid);
        let lv_raw = self.run(ENC_LOGVAR, params, &hid);
        let lv = lv_raw.iter().map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)).collect();
        EncoderTrace { h1, h2, ce, cat, hid, mu, lv_raw, lv }
    }

    pub fn decode(&self, params: &[f64], z: &[f64], c: &[f64]) -> DecoderTrace {
        let mut de = self.run(DEC_COND, params, c);
        leaky(&mut de);
        let mut cat = z.to_vec();
        cat.extend_from_slice(&de);
        let mut g1 = self.run(DEC_HIDDEN, params, &cat);
        leaky(&mut g1);
        let mut g2 = self.run(DEC_EXPAND, params, &g1);
        leaky(&mut g2);
        let mut g3 = self.run(DEC_DECONV1, params, &g2);
        leaky(&mut g3);
        let out = self.run(DEC_DECONV2, params, &g3);
        DecoderTrace { de, cat, g1, g2, g3, out }
    }

    /// Sign pattern of every rectifier input and log-variance clamp on the
    /// forward path of one pair. Finite-difference probes use it to detect
    /// steps that cross a kink.
    pub fn activation_pattern(&self, params: &[f64], x: &[f64], c: &[f64], u: &[f64]) -> Vec<bool> {
        let enc = self.encode(params, x, c);
        let z: Vec<f64> = enc.mu.iter().zip(&enc.lv).zip(u).map(|((m, l), u)| m + (0.5 * l).exp() * u).collect();
        let dec = self.decode(params, &z, c);
        let signs = |v: &[f64]| v.iter().map(|a| *a < 0.0).collect::<Vec<_>>();
        let mut out = Vec::new();
        for v in [&enc.h1, &enc.h2, &enc.ce, &enc.hid, &dec.de, &dec.g1, &dec.g2, &dec.g3] {
            out.extend(signs(v));
        }
        out.extend(enc.lv_raw.iter().map(|v| *v < LOG_VAR_MIN || *v > LOG_VAR_MAX));
        out
    }

    /// Loss of one normalized pair with latent noise `u`; gradients are
    /// accumulated into `grad`.
    pub fn elbo(&self, params: &[f64], x: &[f64], c: &[f64], u: &[f64], beta: f64, grad: &mut [f64]) -> ElboParts {
        let enc = self.encode(params, x, c);
        let sd: Vec<f64> = enc.lv.iter().map(|v| (0.5 * v).exp()).collect();
        let z: Vec<f64> = enc.mu.iter().zip(&sd).zip(u).map(|((m, s), u)| m + s * u).collect();
        let dec = self.decode(params, &z, c);

        let residual: Vec<f64> = dec.out.iter().zip(x).map(|(o, t)| o - t).collect();
        let reconstruction = 0.5 * residual.iter().map(|r| r * r).sum::<f64>();
        let kl = kl_divergence(&enc.mu, &enc.lv);

        // decoder
        let mut g = self.back(DEC_DECONV2, params, &dec.g3, &residual, grad, true).unwrap();
        leaky_backward(&dec.g3, &mut g);
        let mut g = self.back(DEC_DECONV1, params, &dec.g2, &g, grad, true).unwrap();
        leaky_backward(&dec.g2, &mut g);
        let mut g = self.back(DEC_EXPAND, params, &dec.g1, &g, grad, true).unwrap();
        leaky_backward(&dec.g1, &mut g);
        let g_cat = self.back(DEC_HIDDEN, params, &dec.cat, &g, grad, true).unwrap();
        let (g_z, g_de) = g_cat.split_at(self.latent);
        let mut g_de = g_de.to_vec();
        leaky_backward(&dec.de, &mut g_de);
        self.back(DEC_COND, params, c, &g_de, grad, false);

        // latent: z = mu + exp(lv / 2) u, KL = 1/2 sum(mu^2 + e^lv - 1 - lv)
        let g_mu: Vec<f64> = g_z.iter().zip(&enc.mu).map(|(gz, m)| gz + beta * m).collect();
        let g_lv: Vec<f64> = (0..self.latent)
            .map(|i| {
                if enc.lv_raw[i] < LOG_VAR_MIN || enc.lv_raw[i] > LOG_VAR_MAX {
                    0.0
                } else {
                    g_z[i] * 0.5 * sd[i] * u[i] + beta * 0.5 * (sd[i] * sd[i] - 1.0)
                }
            })
            .collect();

        // encoder
        let mut g_hid = self.back(ENC_MU, params, &enc.hid, &g_mu, grad, true).unwrap();
        let g_hid_lv = self.back(ENC_LOGVAR, params, &enc.hid, &g_lv, grad, true).unwrap();
        for (a, b) in g_hid.iter_mut().zip(&g_hid_lv) {
            *a += b;
        }
        leaky_backward(&enc.hid, &mut g_hid);
        let g_cat = self.back(ENC_HIDDEN, params, &enc.cat, &g_hid, grad, true).unwrap();
        let (g_h2, g_ce) = g_cat.split_at(enc.h2.len());
        let mut g_ce = g_ce.to_vec();
        leaky_backward(&enc.ce, &mut g_ce);
        self.back(ENC_COND, params, c, &g_ce, grad, false);
        let mut g_h2 = g_h2.to_vec();
        leaky_backward(&enc.h2, &mut g_h2);
        let mut g_h1 = self.back(ENC_CONV2, params, &enc.h1, &g_h2, grad, true).unwrap();
        leaky_backward(&enc.h1, &mut g_h1);
        self.back(ENC_CONV1, params, x, &g_h1, grad, false);

        ElboParts { reconstruction, kl, loss: reconstruction + beta * kl }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderTrace {
    h1: Vec<f64>,
    h2: Vec<f64>,
    ce: Vec<f64>,
    cat: Vec<f64>,
    hid: Vec<f64>,
    pub mu: Vec<f64>,
    lv_raw: Vec<f64>,
    /// Clamped log variance.
    pub lv: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DecoderTrace {
    de: Vec<f64>,
    cat: Vec<f64>,
    g1: Vec<f64>,
    g2: Vec<f64>,
    g3: Vec<f64>,
    pub out: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboParts {
    pub reconstruction: f64,
    pub kl: f64,
    pub loss: f64,
}

/// `KL(N(mu, e^lv) || N(0, I))`.
pub fn kl_divergence(mu: &[f64], lv: &[f64]) -> f64 {
    0.5 * mu.iter().zip(lv).map(|(m, l)| m * m + l.exp() - 1.0 - l).sum::<f64>()
}
