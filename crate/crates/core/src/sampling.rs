//! Latin Hypercube designs over `[−5, 5]^d` and the scaled design matrices
//! the model consumes.

use crate::fnsuite::{ClassId, InstanceSpec, ProblemInstance, SuiteError};
use crate::tensor::{derive_seed, SplitRng, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LOWER: f64 = -5.0;
pub const UPPER: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("non-finite objective value at index {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Suite(#[from] SuiteError),
}

pub type Result<T> = std::result::Result<T, SamplingError>;

/// Lower edge of stratum `k` of `s` on `[−5, 5]`; `k = s` gives the upper edge.
#[inline]
pub fn stratum_edge(k: usize, s: usize) -> f64 {
    LOWER + (UPPER - LOWER) * k as f64 / s as f64
}

/// `s × d` Latin Hypercube sample on `[−5, 5]^d`.
///
/// Each axis is cut into `s` equal strata and every stratum receives exactly
/// one uniformly placed coordinate. Axes are filled in order; for each axis
/// the generator first draws a stratum permutation (row `i` gets stratum
/// `perm[i]`) and then one uniform offset per row.
pub fn lhs_sample(d: usize, s: usize, seed: u64) -> Result<Tensor> {
    if d == 0 || s == 0 {
        return Err(SamplingError::Argument(format!(
            "lhs needs d >= 1 and s >= 1, got d={d}, s={s}"
        )));
    }
    let mut rng = SplitRng::new(seed);
    let mut data = vec![0.0; s * d];
    for axis in 0..d {
        let perm = rng.permutation(s);
        for (row, &k) in perm.iter().enumerate() {
            let (lo, hi) = (stratum_edge(k, s), stratum_edge(k + 1, s));
            let mut v = lo + (hi - lo) * rng.next_f64();
            if v >= hi {
                v = lo;
            }
            data[row * d + axis] = v;
        }
    }
    Ok(Tensor::new(vec![s, d], data).expect("shape matches"))
}

/// `(yᵢ − min)/(max − min)`; all zeros when the input is constant.
pub fn minmax_scale(y_raw: &[f64]) -> Result<Vec<f64>> {
    if y_raw.is_empty() {
        return Err(SamplingError::Argument(
            "cannot scale an empty vector".into(),
        ));
    }
    if let Some(i) = y_raw.iter().position(|v| !v.is_finite()) {
        return Err(SamplingError::NonFinite(i));
    }
    let lo = y_raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y_raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span == 0.0 {
        return Ok(vec![0.0; y_raw.len()]);
    }
    Ok(y_raw.iter().map(|v| (v - lo) / span).collect())
}

/// Sample-size multiplier: `s = multiplier · d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Multiplier(usize);

impl Multiplier {
    /// Accepts the standard multipliers 50 and 100.
    pub fn new(value: usize) -> Result<Self> {
        match value {
            50 | 100 => Ok(Self(value)),
            _ => Err(SamplingError::Argument(format!(
                "multiplier must be 50 or 100 (got {value}); use Multiplier::custom to override"
            ))),
        }
    }

    /// Any positive multiplier.
    pub fn custom(value: usize) -> Result<Self> {
        if value == 0 {
            return Err(SamplingError::Argument(
                "multiplier must be positive".into(),
            ));
        }
        Ok(Self(value))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

/// Where a design came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignOrigin {
    pub instance_id: u64,
    pub multiplier: usize,
    /// The LHS seed actually used.
    pub seed: u64,
}

/// One classification example: `s` sampled points and their scaled values.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    /// Row-major `s × d`.
    pub x: Vec<f64>,
    /// Unscaled objective values; absent for designs loaded from a cache.
    pub y_raw: Option<Vec<f64>>,
    pub y: Vec<f64>,
    pub class_label: ClassId,
    pub s: usize,
    pub d: usize,
    pub origin: Option<DesignOrigin>,
}

impl DesignMatrix {
    /// Assembles a design from sampled points and their raw objective values.
    pub fn from_raw(x: Vec<f64>, y_raw: Vec<f64>, class_label: ClassId, d: usize) -> Result<Self> {
        let s = y_raw.len();
        if d == 0 || x.len() != s * d {
            return Err(SamplingError::Argument(format!(
                "{} x values do not form {s} rows of dimension {d}",
                x.len()
            )));
        }
        let y = minmax_scale(&y_raw)?;
        Ok(Self {
            x,
            y_raw: Some(y_raw),
            y,
            class_label,
            s,
            d,
            origin: None,
        })
    }

    /// The `[s, d + 1]` model input: x columns followed by the scaled y.
    pub fn model_input(&self) -> Tensor {
        let w = self.d + 1;
        let mut data = Vec::with_capacity(self.s * w);
        for (row, y) in self.x.chunks_exact(self.d).zip(&self.y) {
            data.extend_from_slice(row);
            data.push(*y);
        }
        Tensor::new(vec![self.s, w], data).expect("shape matches")
    }

    /// Copy with rows reordered: row `i` of the result is row `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let d = self.d;
        let mut out = self.clone();
        for (i, &p) in perm.iter().enumerate() {
            out.x[i * d..(i + 1) * d].copy_from_slice(&self.x[p * d..(p + 1) * d]);
            out.y[i] = self.y[p];
            if let (Some(dst), Some(src)) = (out.y_raw.as_mut(), self.y_raw.as_ref()) {
                dst[i] = src[p];
            }
        }
        out
    }
}

/// LHS seed for one `(instance, multiplier)` pair of a dataset.
pub fn design_seed(spec: InstanceSpec, multiplier: Multiplier, dataset_seed: u64) -> u64 {
    derive_seed(
        dataset_seed,
        &[
            u64::from(spec.class_id.get()),
            spec.instance_id,
            spec.dim as u64,
            multiplier.get() as u64,
        ],
    )
}

/// Samples `multiplier · d` LHS points, evaluates them and scales the values.
pub fn build_design(
    inst: &ProblemInstance,
    multiplier: Multiplier,
    dataset_seed: u64,
) -> Result<DesignMatrix> {
    let d = inst.dim();
    let s = multiplier.get() * d;
    let seed = design_seed(inst.spec(), multiplier, dataset_seed);
    let x = lhs_sample(d, s, seed)?.into_data();
    let y_raw = x
        .chunks_exact(d)
        .map(|row| inst.evaluate(row))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut design = DesignMatrix::from_raw(x, y_raw, inst.class_id(), d)?;
    design.origin = Some(DesignOrigin {
        instance_id: inst.spec().instance_id,
        multiplier: multiplier.get(),
        seed,
    });
    Ok(design)
}
