//! The two benchmark systems and their observation models.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{InitialCondition, LinearSystem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    /// Planar rotation by `theta` per step, observed through `[1 1]`.
    Rotating { theta: f64 },
    /// Constant-velocity target in the plane with unit sampling period.
    ConstantVelocity,
}

impl SystemKind {
    pub fn rotating() -> Self {
        SystemKind::Rotating { theta: PI / 18.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemKind::Rotating { .. } => "rotating",
            SystemKind::ConstantVelocity => "cv",
        }
    }

    /// Builds the scenario with isotropic process-noise variance `process_variance`.
    pub fn build(&self, process_variance: f64) -> Result<Scenario> {
        if !(process_variance >= 0.0) || !process_variance.is_finite() {
            return Err(Error::config("process_variance", "must be finite and ≥ 0"));
        }
        match *self {
            SystemKind::Rotating { theta } => {
                let (s, c) = theta.sin_cos();
                let system = LinearSystem::new(
                    DMatrix::from_row_slice(2, 2, &[c, -s, s, c]),
                    DMatrix::from_diagonal_element(2, 2, process_variance),
                    None,
                )?;
                Ok(Scenario {
                    system,
                    h: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
                    init: InitialCondition::exact(DVector::from_vec(vec![1.0, 1.0])),
                    groups: vec![ComponentGroup::new("state", vec![0, 1])],
                })
            }
            SystemKind::ConstantVelocity => {
                let a = DMatrix::from_row_slice(
                    4,
                    4,
                    &[
                        1., 1., 0., 0., 0., 1., 0., 0., 0., 0., 1., 1., 0., 0., 0., 1.,
                    ],
                );
                let g = DMatrix::from_row_slice(4, 2, &[0.5, 0., 1., 0., 0., 0.5, 0., 1.]);
                let system = LinearSystem::new(
                    a,
                    DMatrix::from_diagonal_element(2, 2, process_variance),
                    Some(g),
                )?;
                Ok(Scenario {
                    system,
                    h: DMatrix::from_row_slice(2, 4, &[1., 0., 0., 0., 0., 0., 1., 0.]),
                    init: InitialCondition::exact(DVector::from_vec(vec![500., 10., 500., -10.])),
                    groups: vec![
                        ComponentGroup::new("x", vec![0]),
                        ComponentGroup::new("y", vec![2]),
                    ],
                })
            }
        }
    }
}

/// State components whose error is reported together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentGroup {
    pub name: String,
    pub indices: Vec<usize>,
}

impl ComponentGroup {
    pub fn new(name: &str, indices: Vec<usize>) -> Self {
        Self {
            name: name.to_string(),
            indices,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub system: LinearSystem,
    /// Observation matrix shared by every node.
    pub h: DMatrix<f64>,
    pub init: InitialCondition,
    pub groups: Vec<ComponentGroup>,
}

impl Scenario {
    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "CDKF")]
    Cdkf,
    #[serde(rename = "MFDKF")]
    Mfdkf,
    #[serde(rename = "C-MFDKF")]
    CMfdkf,
    #[serde(rename = "S-MFDKF")]
    SMfdkf,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Cdkf,
        Algorithm::Mfdkf,
        Algorithm::CMfdkf,
        Algorithm::SMfdkf,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Cdkf => "CDKF",
            Algorithm::Mfdkf => "MFDKF",
            Algorithm::CMfdkf => "C-MFDKF",
            Algorithm::SMfdkf => "S-MFDKF",
        }
    }

    pub fn uses_mixture(&self) -> bool {
        !matches!(self, Algorithm::Cdkf)
    }

    pub fn uses_consensus(&self) -> bool {
        matches!(self, Algorithm::CMfdkf | Algorithm::SMfdkf)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .collect::<String>()
            .to_ascii_uppercase();
        match norm.as_str() {
            "CDKF" => Ok(Algorithm::Cdkf),
            "MFDKF" => Ok(Algorithm::Mfdkf),
            "CMFDKF" => Ok(Algorithm::CMfdkf),
            "SMFDKF" => Ok(Algorithm::SMfdkf),
            _ => Err(Error::config(
                "algorithm",
                format!("unknown algorithm `{s}` (expected CDKF, MFDKF, C-MFDKF or S-MFDKF)"),
            )),
        }
    }
}
