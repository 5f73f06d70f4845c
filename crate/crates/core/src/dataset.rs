//! Training and evaluation sets drawn from the diffraction oracle.
//!
//! Nominal conditions are the product of a location lattice inside the first
//! Fresnel ellipsoid and a range of body heights. Each nominal is perturbed a
//! fixed number of times and every perturbed state is run through the oracle.
//! Splits are assigned per location so a held-out location never leaks into
//! training at any height.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cvae::{Normalization, TrainingPair};
use crate::diffraction::{field_vector, DiffractionError, FieldVector, IntegrationConfig};
use crate::geometry::{first_fresnel_contains, sample_perturbed_state, BodyState, PerturbationSpec, Scenario, Vec3};
use crate::rng::{self, Domain};

const MAGIC: &[u8; 4] = b"RFDS";
pub const DATASET_FORMAT_VERSION: u32 = 1;

const GRID_ALONG: usize = 15;
const GRID_LATERAL: usize = 5;
const GRID_FILL: f64 = 0.7;
const GRID_SHRINK: f64 = 0.95;
const GRID_MAX_SHRINKS: usize = 200;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("location grid infeasible: only {found} of {needed} lattice points inside the ellipsoid")]
    GridInfeasible { found: usize, needed: usize },
    #[error("record {record}: {source}")]
    Oracle {
        record: usize,
        #[source]
        source: DiffractionError,
    },
    #[error("dataset format version {found}, expected {expected}")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("dataset has {found} links, expected {expected}")]
    LinkMismatch { expected: usize, found: usize },
    #[error("corrupt dataset file: {0}")]
    CorruptFile(String),
    #[error("no records in the training split")]
    EmptyTrainSplit,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Split {
    Train = 0,
    Validation = 1,
    Test = 2,
}

impl Split {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Split::Train),
            1 => Some(Split::Validation),
            2 => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        }
    }
}

/// Body heights `min, min + step, ..` up to `max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightRange {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl HeightRange {
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.min + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WidthModel {
    Fixed { max: f64, min: f64 },
    /// Both widths scaled by an independent uniform factor in
    /// `1 +- fraction` per record.
    Jittered { max: f64, min: f64, fraction: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub scenario: Scenario,
    /// Body positions at link height.
    pub location_grid: Vec<Vec3>,
    pub heights: HeightRange,
    pub widths: WidthModel,
    pub perturbations_per_nominal: usize,
    pub perturbation: PerturbationSpec,
    pub integration: IntegrationConfig,
    pub seed: u64,
}

impl DatasetSpec {
    /// 75 lattice locations, heights 1.65..2.00 m in 5 cm steps, a 0.55 x 0.25 m
    /// body, 20 small movements per nominal and `eps = 1e-3`.
    pub fn default_for(scenario: &Scenario, seed: u64) -> Result<Self, DatasetError> {
        Ok(Self {
            location_grid: default_location_grid(scenario)?,
            heights: HeightRange { min: 1.65, max: 2.0, step: 0.05 },
            widths: WidthModel::Fixed { max: 0.55, min: 0.25 },
            perturbations_per_nominal: 20,
            perturbation: PerturbationSpec::small_movements(seed),
            integration: IntegrationConfig::new(1e-3, scenario.wavelength()),
            scenario: scenario.clone(),
            seed,
        })
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidSpec(m.to_string()));
        if self.location_grid.is_empty() || self.perturbations_per_nominal == 0 {
            return bad("location grid and perturbation count must be non-empty");
        }
        if let Some(p) = self.location_grid.iter().find(|p| !first_fresnel_contains(**p, &self.scenario)) {
            return Err(DatasetError::InvalidSpec(format!("location {p:?} lies outside the first Fresnel ellipsoid")));
        }
        let h = self.heights;
        if !(h.step > 0.0 && h.min > 0.0 && h.max >= h.min && h.max.is_finite()) {
            return bad("height range must be non-empty with a positive step");
        }
        if let WidthModel::Jittered { fraction, .. } = self.widths {
            if !(0.0..1.0).contains(&fraction) {
                return bad("width jitter fraction must lie in [0, 1)");
            }
        }
        self.integration.validate().map_err(|e| DatasetError::InvalidSpec(e.to_string()))?;
        for (loc, height) in [(0, 0), (self.location_grid.len() - 1, h.values().len() - 1)] {
            self.nominal(loc, height).map_err(|e| DatasetError::InvalidSpec(e.to_string()))?;
        }
        Ok(())
    }

    pub fn num_nominals(&self) -> usize {
        self.location_grid.len() * self.heights.values().len()
    }

    pub fn num_records(&self) -> usize {
        self.num_nominals() * self.perturbations_per_nominal
    }

    fn nominal(&self, location: usize, height: usize) -> Result<BodyState, crate::geometry::GeometryError> {
        let p = self.location_grid[location];
        let (max, min) = match self.widths {
            WidthModel::Fixed { max, min } | WidthModel::Jittered { max, min, .. } => (max, min),
        };
        BodyState::new(p.x, p.y, 0.0, self.heights.values()[height], max, min)
    }

    /// Location-level split: a seeded permutation of the locations, the first
    /// 80% train, the next 10% validation, the rest test.
    pub fn location_splits(&self) -> Vec<Split> {
        let n = self.location_grid.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(self.seed, Domain::Split, 0));
        let n_train = (0.8 * n as f64).round() as usize;
        let n_val = (0.1 * n as f64).round() as usize;
        let mut splits = vec![Split::Test; n];
        for (rank, &loc) in order.iter().enumerate() {
            splits[loc] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
        }
        splits
    }
}

/// 15 x 5 lattice (along the line of sight x lateral) at link height,
/// centered on the link midpoint. Starts at 70% of the ellipsoid semi-axes and
/// shrinks the pitch by 5% until every point lies inside.
pub fn default_location_grid(scenario: &Scenario) -> Result<Vec<Vec3>, DatasetError> {
    let tx = scenario.tx_position();
    let rx = scenario.array_center();
    let d = scenario.link_distance();
    let along = scenario.los_direction();
    let lateral = Vec3::new(-along.y, along.x, 0.0).normalized();
    let mid = (tx + rx) * 0.5;
    let a = (d + scenario.wavelength() / 2.0) / 2.0;
    let b = (a * a - d * d / 4.0).sqrt();

    let lattice = |scale: f64| -> Vec<Vec3> {
        let offsets = |count: usize, half: f64| -> Vec<f64> {
            let c = (count - 1) as f64 / 2.0;
            (0..count).map(|i| (i as f64 - c) / c * half).collect()
        };
        let xs = offsets(GRID_ALONG, GRID_FILL * a * scale);
        let ys = offsets(GRID_LATERAL, GRID_FILL * b * scale);
        xs.iter().flat_map(|&u| ys.iter().map(move |&v| mid + along * u + lateral * v)).collect()
    };

    let mut scale = 1.0;
    let mut found = 0;
    for _ in 0..GRID_MAX_SHRINKS {
        let points = lattice(scale);
        found = points.iter().filter(|p| first_fresnel_contains(**p, scenario)).count();
        if found == points.len() {
            return Ok(points);
        }
        scale *= GRID_SHRINK;
    }
    Err(DatasetError::GridInfeasible { found, needed: GRID_ALONG * GRID_LATERAL })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    /// `location * heights + height`.
    pub nominal_index: usize,
    pub location_index: usize,
    pub height_index: usize,
    pub perturbation_index: usize,
    pub nominal: BodyState,
    pub perturbed: BodyState,
    pub field: FieldVector,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scenario: Scenario,
    pub seed: u64,
    pub abs_tolerance: f64,
    pub records: Vec<DatasetRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    /// Fitted on the training split only.
    pub normalization: Normalization,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl Dataset {
    pub fn links(&self) -> usize {
        self.scenario.num_antennas()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Perturbed-state fields paired with their nominal condition, so the
    /// latent absorbs the small-movement spread.
    pub fn training_pairs(&self, split: Split) -> Vec<TrainingPair> {
        self.split(split)
            .map(|r| TrainingPair { field: r.field.clone(), condition: r.nominal })
            .collect()
    }

    pub fn stats(&self) -> Result<DatasetStats, DatasetError> {
        let normalization = Normalization::fit(self.split(Split::Train).map(|r| (&r.field, &r.nominal)))
            .map_err(|_| DatasetError::EmptyTrainSplit)?;
        let count = |s| self.split(s).count();
        Ok(DatasetStats {
            normalization,
            train: count(Split::Train),
            validation: count(Split::Validation),
            test: count(Split::Test),
        })
    }

    /// Distinct nominal states of a split, in canonical order.
    pub fn nominals(&self, split: Split) -> Vec<BodyState> {
        let mut out: Vec<(usize, BodyState)> = Vec::new();
        for r in self.split(split) {
            if out.last().map(|(i, _)| *i) != Some(r.nominal_index) {
                out.push((r.nominal_index, r.nominal));
            }
        }
        out.into_iter().map(|(_, b)| b).collect()
    }
}

fn jitter_widths(spec: &DatasetSpec, body: BodyState, record: usize) -> BodyState {
    match spec.widths {
        WidthModel::Fixed { .. } => body,
        WidthModel::Jittered { fraction, .. } => {
            let mut r = rng::stream(spec.seed, Domain::Widths, record as u64);
            let mut scale = || 1.0 + fraction * (2.0 * r.random::<f64>() - 1.0);
            let (a, b) = (body.width_max * scale(), body.width_min * scale());
            BodyState { width_max: a.max(b), width_min: a.min(b), ..body }
        }
    }
}

/// Runs the oracle on every perturbed state. Records come out sorted by
/// nominal index, then perturbation index, whatever the thread count.
pub fn build_dataset(spec: &DatasetSpec) -> Result<(Dataset, DatasetStats), DatasetError> {
    spec.validate()?;
    let n_heights = spec.heights.values().len();
    let per = spec.perturbations_per_nominal;
    let splits = spec.location_splits();
    let records = (0..spec.num_records())
        .into_par_iter()
        .map(|record| {
            let nominal_index = record / per;
            let (location_index, height_index) = (nominal_index / n_heights, nominal_index % n_heights);
            let nominal = spec.nominal(location_index, height_index).expect("validated spec");
            let perturbed = jitter_widths(spec, sample_perturbed_state(&nominal, &spec.perturbation, record as u64), record);
            let field = field_vector(&perturbed, &spec.scenario, &spec.integration)
                .map_err(|source| DatasetError::Oracle { record, source })?;
            Ok(DatasetRecord {
                nominal_index,
                location_index,
                height_index,
                perturbation_index: record % per,
                nominal,
                perturbed,
                field,
                split: splits[location_index],
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    let dataset = Dataset {
        scenario: spec.scenario.clone(),
        seed: spec.seed,
        abs_tolerance: spec.integration.abs_tolerance,
        records,
    };
    let stats = dataset.stats()?;
    Ok((dataset, stats))
}

// "RFDS" | version u32 | L u32 | count u64 | seed u64 | eps f64 |
// tx[3] center[3] axis[3] spacing fc (f64) | records
// record: nominal u32, location u32, height u32, perturbation u32, split u8,
//         nominal features [6] f64, perturbed features [6] f64, Re/Im [2L] f64
fn record_width(links: usize) -> usize {
    4 * 4 + 1 + 12 * 8 + 2 * links * 8
}

pub fn to_bytes(dataset: &Dataset) -> Vec<u8> {
    let s = &dataset.scenario;
    let mut out = Vec::with_capacity(80 + dataset.records.len() * record_width(dataset.links()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&DATASET_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dataset.links() as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.records.len() as u64).to_le_bytes());
    out.extend_from_slice(&dataset.seed.to_le_bytes());
    let header = [s.tx_position(), s.array_center(), s.array_axis()]
        .into_iter()
        .flat_map(|v| [v.x, v.y, v.z])
        .chain([dataset.abs_tolerance, s.antenna_spacing(), s.carrier_frequency()]);
    header.for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    for r in &dataset.records {
        for i in [r.nominal_index, r.location_index, r.height_index, r.perturbation_index] {
            out.extend_from_slice(&(i as u32).to_le_bytes());
        }
        out.push(r.split as u8);
        let reals = r.nominal.features().into_iter().chain(r.perturbed.features());
        let field = r.field.values().iter().flat_map(|c| [c.re, c.im]);
        reals.chain(field).for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    }
    out
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], DatasetError> {
        if self.0.len() < N {
            return Err(DatasetError::CorruptFile("unexpected end of file".into()));
        }
        let (head, tail) = self.0.split_at(N);
        self.0 = tail;
        Ok(head.try_into().unwrap())
    }
    fn u32(&mut self) -> Result<u32, DatasetError> {
        self.take::<4>().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> Result<u64, DatasetError> {
        self.take::<8>().map(u64::from_le_bytes)
    }
    fn f64(&mut self) -> Result<f64, DatasetError> {
        self.take::<8>().map(f64::from_le_bytes)
    }
    fn vec3(&mut self) -> Result<Vec3, DatasetError> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }
    fn features(&mut self) -> Result<[f64; 6], DatasetError> {
        let mut f = [0.0; 6];
        for v in &mut f {
            *v = self.f64()?;
        }
        Ok(f)
    }
}

pub fn from_bytes(bytes: &[u8], expected_links: Option<usize>) -> Result<Dataset, DatasetError> {
    let corrupt = |m: String| DatasetError::CorruptFile(m);
    let mut c = Cursor(bytes);
    if &c.take::<4>()? != MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let version = c.u32()?;
    if version != DATASET_FORMAT_VERSION {
        return Err(DatasetError::FormatVersionMismatch { found: version, expected: DATASET_FORMAT_VERSION });
    }
    let links = c.u32()? as usize;
    if let Some(expected) = expected_links {
        if expected != links {
            return Err(DatasetError::LinkMismatch { expected, found: links });
        }
    }
    let count = c.u64()? as usize;
    let seed = c.u64()?;
    let (tx, center, axis) = (c.vec3()?, c.vec3()?, c.vec3()?);
    let (abs_tolerance, spacing, fc) = (c.f64()?, c.f64()?, c.f64()?);
    let scenario = Scenario::new(tx, center, axis, links, spacing, fc).map_err(|e| corrupt(format!("scenario: {e}")))?;
    let width = record_width(links);
    if count.checked_mul(width) != Some(c.0.len()) {
        return Err(corrupt(format!("expected {count} records of {width} bytes, found {} bytes", c.0.len())));
    }
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let idx = [c.u32()?, c.u32()?, c.u32()?, c.u32()?].map(|v| v as usize);
        let split = Split::from_u8(c.take::<1>()?[0]).ok_or_else(|| corrupt(format!("record {i}: split tag")))?;
        let body = |f: [f64; 6]| BodyState::from_features(f).map_err(|e| corrupt(format!("record {i}: {e}")));
        let nominal = body(c.features()?)?;
        let perturbed = body(c.features()?)?;
        let field = (0..links)
            .map(|_| Ok(num_complex::Complex64::new(c.f64()?, c.f64()?)))
            .collect::<Result<Vec<_>, DatasetError>>()?;
        records.push(DatasetRecord {
            nominal_index: idx[0],
            location_index: idx[1],
            height_index: idx[2],
            perturbation_index: idx[3],
            nominal,
            perturbed,
            field: FieldVector::new(field),
            split,
        });
    }
    Ok(Dataset { scenario, seed, abs_tolerance, records })
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&to_bytes(dataset))?;
    w.flush()?;
    Ok(())
}

/// Loads a dataset; with `expected_links` set, a different header `L` is an
/// error.
pub fn load_dataset(path: impl AsRef<Path>, expected_links: Option<usize>) -> Result<Dataset, DatasetError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes, expected_links)
}

pub fn csv_header(links: usize) -> String {
    let mut cols: Vec<String> = [
        "nominal_index", "location_index", "height_index", "perturbation_index", "split", "nominal_x", "nominal_y",
        "x", "y", "phi", "hs", "ws1", "ws2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for l in 0..links {
        cols.push(format!("re_{l}"));
        cols.push(format!("im_{l}"));
    }
    cols.join(",")
}

/// Human-readable mirror of the binary file, one row per record.
pub fn write_csv(dataset: &Dataset, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{}", csv_header(dataset.links()))?;
    for r in &dataset.records {
        let p = &r.perturbed;
        write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.nominal_index,
            r.location_index,
            r.height_index,
            r.perturbation_index,
            r.split.as_str(),
            r.nominal.position.x,
            r.nominal.position.y,
            p.position.x,
            p.position.y,
            p.orientation,
            p.height,
            p.width_max,
            p.width_min
        )?;
        for v in r.field.values() {
            write!(out, ",{},{}", v.re, v.im)?;
        }
        writeln!(out)?;
    }
    Ok(())
}
