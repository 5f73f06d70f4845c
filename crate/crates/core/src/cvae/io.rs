//! Little-endian model container.
//!
//! ```text
//! "CVAE" | version u32 | Z u32 | L u32 | config | layer table | normalization | params
//! ```
//! Parameters are 64-bit floats. The layer table must match the layout the
//! config implies.

use std::io::{Read, Write};
use std::path::Path;

use super::layers::LayerKind;
use super::network::{Architecture, Group, LayerEntry, CONDITION_DIM};
use super::{CvaeConfig, CvaeError, CvaeModel, Normalization};

const MAGIC: &[u8; 4] = b"CVAE";
pub const MODEL_FORMAT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CvaeError> {
        if self.0.len() < n {
            return Err(CvaeError::CorruptFile("unexpected end of file".into()));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, CvaeError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, CvaeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<usize, CvaeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<usize, CvaeError> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| CvaeError::CorruptFile("length overflow".into()))
    }
    fn f64(&mut self) -> Result<f64, CvaeError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CvaeError> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn kind_code(kind: &LayerKind) -> (u8, [usize; 4]) {
    match *kind {
        LayerKind::Dense { inputs, outputs } => (0, [inputs, outputs, 0, 0]),
        LayerKind::Conv { in_ch, out_ch, kernel, len } => (1, [in_ch, out_ch, kernel, len]),
        LayerKind::Deconv { in_ch, out_ch, kernel, len } => (2, [in_ch, out_ch, kernel, len]),
    }
}

fn kind_from_code(code: u8, d: [usize; 4]) -> Result<LayerKind, CvaeError> {
    Ok(match code {
        0 => LayerKind::Dense { inputs: d[0], outputs: d[1] },
        1 => LayerKind::Conv { in_ch: d[0], out_ch: d[1], kernel: d[2], len: d[3] },
        2 => LayerKind::Deconv { in_ch: d[0], out_ch: d[1], kernel: d[2], len: d[3] },
        other => return Err(CvaeError::CorruptFile(format!("unknown layer kind {other}"))),
    })
}

pub fn to_bytes(model: &CvaeModel) -> Vec<u8> {
    let c = &model.config;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(MODEL_FORMAT_VERSION as usize);
    w.u32(c.latent_dim);
    w.u32(c.links);
    w.u32(c.channels[0]);
    w.u32(c.channels[1]);
    w.u32(c.kernel);
    w.u32(c.condition_embed);
    w.u32(c.hidden);
    w.u32(c.batch_size);
    w.u32(c.epochs);
    w.f64(c.learning_rate);
    w.f64(c.momentum);
    w.f64(c.kl_weight);
    w.f64(c.warmup_fraction);

    w.u32(model.architecture.layers.len());
    for entry in &model.architecture.layers {
        let (code, dims) = kind_code(&entry.kind);
        w.u8(entry.group as u8);
        w.u8(code);
        w.u16(entry.name.len() as u16);
        w.0.extend_from_slice(entry.name.as_bytes());
        for d in dims {
            w.u32(d);
        }
        w.u64(entry.offset);
        w.u64(entry.kind.param_count());
    }

    let n = &model.normalization;
    w.u32(n.field_mean.len());
    n.field_mean.iter().chain(&n.field_scale).for_each(|&v| w.f64(v));
    n.cond_mean.iter().chain(&n.cond_scale).for_each(|&v| w.f64(v));

    w.u64(model.params.len());
    model.params.iter().for_each(|&v| w.f64(v));
    w.0
}

pub fn from_bytes(bytes: &[u8]) -> Result<CvaeModel, CvaeError> {
    let mut r = Reader(bytes);
    if r.take(4)? != MAGIC {
        return Err(CvaeError::CorruptFile("bad magic".into()));
    }
    let version = r.u32()? as u32;
    if version != MODEL_FORMAT_VERSION {
        return Err(CvaeError::FormatVersionMismatch { found: version, expected: MODEL_FORMAT_VERSION });
    }
    let latent_dim = r.u32()?;
    let links = r.u32()?;
    let channels = [r.u32()?, r.u32()?];
    let kernel = r.u32()?;
    let condition_embed = r.u32()?;
    let hidden = r.u32()?;
    let batch_size = r.u32()?;
    let epochs = r.u32()?;
    let config = CvaeConfig {
        latent_dim,
        links,
        channels,
        kernel,
        condition_embed,
        hidden,
        learning_rate: r.f64()?,
        momentum: r.f64()?,
        batch_size,
        kl_weight: r.f64()?,
        epochs,
        warmup_fraction: r.f64()?,
    };
    config.validate().map_err(|e| CvaeError::CorruptFile(format!("config: {e}")))?;

    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let group = Group::from_u8(r.u8()?).ok_or_else(|| CvaeError::CorruptFile("unknown layer group".into()))?;
        let code = r.u8()?;
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| CvaeError::CorruptFile("layer name".into()))?;
        let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
        let kind = kind_from_code(code, dims)?;
        let offset = r.u64()?;
        let params = r.u64()?;
        if params != kind.param_count() {
            return Err(CvaeError::CorruptFile(format!("layer {name}: parameter count")));
        }
        layers.push(LayerEntry { group, name, kind, offset });
    }
    let architecture = Architecture::new(&config);
    if architecture.layers != layers {
        return Err(CvaeError::CorruptFile("layer table does not match config".into()));
    }

    let field_dim = r.u32()?;
    if field_dim != architecture.field_dim() {
        return Err(CvaeError::CorruptFile("normalization dimension".into()));
    }
    let field_mean = r.f64s(field_dim)?;
    let field_scale = r.f64s(field_dim)?;
    let cond_mean: [f64; CONDITION_DIM] = r.f64s(CONDITION_DIM)?.try_into().unwrap();
    let cond_scale: [f64; CONDITION_DIM] = r.f64s(CONDITION_DIM)?.try_into().unwrap();
    let normalization = Normalization { field_mean, field_scale, cond_mean, cond_scale };

    let n = r.u64()?;
    if n != architecture.total_len {
        return Err(CvaeError::CorruptFile("parameter count".into()));
    }
    let params = r.f64s(n)?;
    if !r.0.is_empty() {
        return Err(CvaeError::CorruptFile("trailing bytes".into()));
    }
    let mut model = CvaeModel::zeroed(config, normalization).map_err(|e| CvaeError::CorruptFile(e.to_string()))?;
    model.params = params;
    Ok(model)
}

pub fn save_model(model: &CvaeModel, path: impl AsRef<Path>) -> Result<(), CvaeError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CvaeModel, CvaeError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}
