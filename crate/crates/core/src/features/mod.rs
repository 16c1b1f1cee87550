//! Cepstral front ends and their post-processing.
//!
//! * CQCC: constant-Q power → log → uniform resampling → DCT-II (+Δ, ΔΔ).
//! * MFCC: short-time power → mel filterbank → log → DCT-II, followed for the
//!   verifier by RASTA filtering, deltas, VAD frame selection and CMVN.

mod container;
mod cqcc;
mod dct;
mod mfcc;
mod post;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use container::{read_features, write_features};
pub use cqcc::{cqcc_extract, uniform_resample, CqccConfig};
pub use dct::dct2_ortho;
pub use mfcc::{mfcc_extract, mfcc_pipeline, MelFilterbank, MfccConfig};
pub use post::{add_deltas, cmvn, rasta_filter, RASTA_WARMUP};

/// Floor added to powers and energies before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Cqcc,
    Mfcc,
    Spectrum,
}

impl FeatureKind {
    pub(crate) fn tag(self) -> u8 {
        match self {
            FeatureKind::Cqcc => 1,
            FeatureKind::Mfcc => 2,
            FeatureKind::Spectrum => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(FeatureKind::Cqcc),
            2 => Ok(FeatureKind::Mfcc),
            3 => Ok(FeatureKind::Spectrum),
            t => Err(Error::Format {
                field: "feature_kind",
                value: t.to_string(),
            }),
        }
    }
}

/// Frames × coefficients feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Matrix,
    pub kind: FeatureKind,
    /// Free-form record of the extraction parameters.
    pub meta: BTreeMap<String, String>,
}

impl FeatureMatrix {
    pub fn new(values: Matrix, kind: FeatureKind) -> Self {
        Self {
            values,
            kind,
            meta: BTreeMap::new(),
        }
    }

    pub fn num_frames(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub(crate) fn with_values(&self, values: Matrix) -> Self {
        Self {
            values,
            kind: self.kind,
            meta: self.meta.clone(),
        }
    }

    pub(crate) fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }
}
