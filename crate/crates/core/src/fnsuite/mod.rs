//! Twenty-four single-objective problem classes modelled on the BBOB
//! archetypes, with seeded instance transformations.
//!
//! An instance evaluates `base_class(z) + f_opt` where
//! `z = R·(x − x_opt)`; class 5 works on `x` directly. Transformation
//! parameters are a pure function of `(class, instance, dim)`: the generator
//! is seeded with
//!
//! ```text
//! packed = class << 56 | dim << 40 | instance      (dim < 2^16, instance < 2^40)
//! seed   = mix64(packed + 0x9E3779B97F4A7C15)       (SplitMix64 finalizer)
//! ```
//!
//! and draws, in order: `x_opt` (d uniforms in [−4, 4], or d sign bits for
//! class 5), `f_opt` (uniform in [−100, 100], rounded to 2 decimals), the
//! rotation (d×d standard Gaussians, row-major, orthonormalized) for rotated
//! classes, and the Gallagher peaks for classes 21 and 22.

mod functions;

pub use functions::Peak;

use crate::tensor::{mix64, SplitRng, GOLDEN_GAMMA};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SuiteError {
    #[error("class id {0} outside 1..=24")]
    ClassId(u32),
    #[error("instance_id must be >= 1 and < 2^40, got {0}")]
    InstanceId(u64),
    #[error("dim must be in 2..65536, got {0}")]
    Dim(usize),
    #[error("expected a point of dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite coordinate at index {0}")]
    NonFinite(usize),
    #[error("invalid transform: {0}")]
    Transform(String),
}

pub type Result<T> = std::result::Result<T, SuiteError>;

pub const NUM_CLASSES: usize = 24;

/// Problem class label in `1..=24`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct ClassId(u8);

impl ClassId {
    pub fn new(value: u32) -> Result<Self> {
        if (1..=NUM_CLASSES as u32).contains(&value) {
            Ok(Self(value as u8))
        } else {
            Err(SuiteError::ClassId(value))
        }
    }

    pub fn get(self) -> u32 {
        u32::from(self.0)
    }

    /// Zero-based index, as used for logits.
    pub fn index(self) -> usize {
        usize::from(self.0) - 1
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::new(index as u32 + 1)
    }

    pub fn all() -> impl Iterator<Item = ClassId> {
        (1..=NUM_CLASSES as u8).map(ClassId)
    }
}

impl TryFrom<u32> for ClassId {
    type Error = SuiteError;
    fn try_from(v: u32) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ClassId> for u32 {
    fn from(c: ClassId) -> u32 {
        c.get()
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub class_id: ClassId,
    pub instance_id: u64,
    pub dim: usize,
}

impl InstanceSpec {
    pub fn new(class_id: u32, instance_id: u64, dim: usize) -> Result<Self> {
        let class_id = ClassId::new(class_id)?;
        if instance_id == 0 || instance_id >= 1 << 40 {
            return Err(SuiteError::InstanceId(instance_id));
        }
        if !(2..1 << 16).contains(&dim) {
            return Err(SuiteError::Dim(dim));
        }
        Ok(Self {
            class_id,
            instance_id,
            dim,
        })
    }

    /// Generator seed for this instance; see the module docs.
    pub fn seed(&self) -> u64 {
        let packed =
            u64::from(self.class_id.get()) << 56 | (self.dim as u64) << 40 | self.instance_id;
        mix64(packed.wrapping_add(GOLDEN_GAMMA))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClassInfo {
    pub id: u32,
    pub name: &'static str,
    pub rotated: bool,
}

const TABLE: [(&str, bool); NUM_CLASSES] = [
    ("Sphere", false),
    ("Ellipsoid (separable)", false),
    ("Rastrigin (separable)", false),
    ("Büche-Rastrigin", false),
    ("Linear Slope", false),
    ("Attractive Sector", true),
    ("Step Ellipsoid", false),
    ("Rosenbrock", false),
    ("Rosenbrock (rotated)", true),
    ("Ellipsoid (rotated)", true),
    ("Discus", true),
    ("Bent Cigar", true),
    ("Sharp Ridge", true),
    ("Different Powers", true),
    ("Rastrigin (rotated)", true),
    ("Weierstrass", true),
    ("Schaffers F7", true),
    ("Schaffers F7 (ill-conditioned)", true),
    ("Griewank-Rosenbrock", true),
    ("Schwefel", false),
    ("Gallagher 101 Peaks", true),
    ("Gallagher 21 Peaks", true),
    ("Katsuura", true),
    ("Lunacek bi-Rastrigin", true),
];

pub fn suite_table() -> Vec<ClassInfo> {
    TABLE
        .iter()
        .enumerate()
        .map(|(i, &(name, rotated))| ClassInfo {
            id: i as u32 + 1,
            name,
            rotated,
        })
        .collect()
}

pub fn class_info(class: ClassId) -> ClassInfo {
    let (name, rotated) = TABLE[class.index()];
    ClassInfo {
        id: class.get(),
        name,
        rotated,
    }
}

/// A concrete transformed problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    spec: InstanceSpec,
    x_opt: Vec<f64>,
    f_opt: f64,
    /// Row-major `dim × dim`, orthogonal.
    rotation: Vec<f64>,
    peaks: Option<Vec<Peak>>,
}

pub fn make_instance(spec: InstanceSpec) -> ProblemInstance {
    let d = spec.dim;
    let class = spec.class_id.get();
    let mut rng = SplitRng::new(spec.seed());

    let x_opt: Vec<f64> = if class == 5 {
        (0..d)
            .map(|_| if rng.next_f64() < 0.5 { -5.0 } else { 5.0 })
            .collect()
    } else {
        (0..d).map(|_| rng.uniform(-4.0, 4.0)).collect()
    };
    let f_opt = (rng.uniform(-100.0, 100.0) * 100.0).round() / 100.0;
    let rotation = if class_info(spec.class_id).rotated {
        let g: Vec<f64> = (0..d * d).map(|_| rng.gaussian()).collect();
        orthonormalize(&g, d)
    } else {
        identity(d)
    };
    let peaks = match class {
        21 => Some(gallagher_peaks(&mut rng, d, 101, 1e3)),
        22 => Some(gallagher_peaks(&mut rng, d, 21, 1e6)),
        _ => None,
    };
    ProblemInstance {
        spec,
        x_opt,
        f_opt,
        rotation,
        peaks,
    }
}

fn gallagher_peaks(rng: &mut SplitRng, d: usize, count: usize, max_cond: f64) -> Vec<Peak> {
    let log_max = max_cond.ln();
    let cond = |rng: &mut SplitRng| -> Vec<f64> {
        (0..d).map(|_| (rng.next_f64() * log_max).exp()).collect()
    };
    let mut peaks = Vec::with_capacity(count);
    let first = cond(rng);
    peaks.push(Peak {
        weight: 10.0,
        center: vec![0.0; d],
        conditioning: first,
    });
    for k in 2..=count {
        let weight = 1.1 + 8.0 * (k - 2) as f64 / (count - 2) as f64;
        let center = (0..d).map(|_| rng.uniform(-4.9, 4.9)).collect();
        let conditioning = cond(rng);
        peaks.push(Peak {
            weight,
            center,
            conditioning,
        });
    }
    peaks
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

/// Q factor of the QR decomposition of the row-major `d × d` matrix `a`,
/// normalized so that R has a positive diagonal. Gram-Schmidt on the columns
/// with one re-orthogonalization pass.
fn orthonormalize(a: &[f64], d: usize) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = (0..d)
        .map(|c| (0..d).map(|r| a[r * d + c]).collect())
        .collect();
    for j in 0..d {
        for _pass in 0..2 {
            for k in 0..j {
                let dot: f64 = cols[j].iter().zip(&cols[k]).map(|(p, q)| p * q).sum();
                let (head, tail) = cols.split_at_mut(j);
                tail[0]
                    .iter_mut()
                    .zip(&head[k])
                    .for_each(|(v, q)| *v -= dot * q);
            }
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        cols[j].iter_mut().for_each(|v| *v /= norm);
    }
    let mut q = vec![0.0; d * d];
    for (c, col) in cols.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            q[r * d + c] = *v;
        }
    }
    q
}

impl ProblemInstance {
    /// Builds an instance from explicit transformation parameters. Mostly a
    /// test hook; the rotation must be `dim × dim` and orthogonal within 1e−9.
    pub fn from_parts(
        spec: InstanceSpec,
        x_opt: Vec<f64>,
        f_opt: f64,
        rotation: Vec<f64>,
        peaks: Option<Vec<Peak>>,
    ) -> Result<Self> {
        let d = spec.dim;
        if x_opt.len() != d {
            return Err(SuiteError::Transform(format!(
                "x_opt has length {}",
                x_opt.len()
            )));
        }
        if rotation.len() != d * d {
            return Err(SuiteError::Transform(format!(
                "rotation has {} entries",
                rotation.len()
            )));
        }
        let inst = Self {
            spec,
            x_opt,
            f_opt,
            rotation,
            peaks,
        };
        if inst.orthogonality_error() >= 1e-9 {
            return Err(SuiteError::Transform("rotation is not orthogonal".into()));
        }
        let needs_peaks = matches!(spec.class_id.get(), 21 | 22);
        if needs_peaks != inst.peaks.is_some() {
            return Err(SuiteError::Transform(
                "peaks are required exactly for classes 21 and 22".into(),
            ));
        }
        Ok(inst)
    }

    /// The identity transform with `x_opt = 0`, `f_opt = 0`. Not valid for
    /// classes 5, 21 and 22.
    pub fn untransformed(spec: InstanceSpec) -> Result<Self> {
        let d = spec.dim;
        Self::from_parts(spec, vec![0.0; d], 0.0, identity(d), None)
    }

    pub fn spec(&self) -> InstanceSpec {
        self.spec
    }

    pub fn class_id(&self) -> ClassId {
        self.spec.class_id
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn x_opt(&self) -> &[f64] {
        &self.x_opt
    }

    pub fn f_opt(&self) -> f64 {
        self.f_opt
    }

    pub fn rotation(&self) -> &[f64] {
        &self.rotation
    }

    pub fn peaks(&self) -> Option<&[Peak]> {
        self.peaks.as_deref()
    }

    /// `max |RᵀR − I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let d = self.spec.dim;
        let r = &self.rotation;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let dot: f64 = (0..d).map(|k| r[k * d + i] * r[k * d + j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    fn transform(&self, x: &[f64]) -> Vec<f64> {
        let d = self.spec.dim;
        let shifted: Vec<f64> = x.iter().zip(&self.x_opt).map(|(a, b)| a - b).collect();
        (0..d)
            .map(|i| {
                self.rotation[i * d..(i + 1) * d]
                    .iter()
                    .zip(&shifted)
                    .map(|(r, s)| r * s)
                    .sum()
            })
            .collect()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.spec.dim {
            return Err(SuiteError::DimensionMismatch {
                expected: self.spec.dim,
                got: x.len(),
            });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(SuiteError::NonFinite(i));
        }
        use functions as f;
        let class = self.spec.class_id.get();
        if class == 5 {
            return Ok(f::linear_slope(x, &self.x_opt) + self.f_opt);
        }
        let z = self.transform(x);
        let base = match class {
            1 => f::sphere(&z),
            2 | 10 => f::ellipsoid(&z),
            3 | 15 => f::rastrigin(&z),
            4 => f::buche_rastrigin(&z),
            6 => f::attractive_sector(&z, &self.x_opt),
            7 => f::step_ellipsoid(&z),
            8 | 9 => f::rosenbrock(&z),
            11 => f::discus(&z),
            12 => f::bent_cigar(&z),
            13 => f::sharp_ridge(&z),
            14 => f::different_powers(&z),
            16 => f::weierstrass(&z),
            17 => f::schaffers_f7(&z),
            18 => f::schaffers_f7_ill(&z),
            19 => f::griewank_rosenbrock(&z),
            20 => f::schwefel(&z),
            21 | 22 => f::gallagher(&z, self.peaks.as_deref().unwrap_or_default()),
            23 => f::katsuura(&z),
            24 => f::lunacek(&z),
            _ => unreachable!("ClassId is validated"),
        };
        Ok(base + self.f_opt)
    }
}
