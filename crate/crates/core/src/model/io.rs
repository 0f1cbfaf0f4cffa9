//! JSON parameter files. Matrices are row-major nested arrays.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{BlockKind, FamilyKind, ModelFamily, ModelParams};
use crate::error::{Error, Result};

type Rows = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub family: FamilyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub d: usize,
    pub pi: Vec<f64>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Rows>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub t: Option<Rows>,
    #[serde(rename = "T1", default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<Rows>,
    #[serde(rename = "T2", default, skip_serializing_if = "Option::is_none")]
    pub t2: Option<Rows>,
    #[serde(rename = "O", default, skip_serializing_if = "Option::is_none")]
    pub o: Option<Rows>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Rows>,
    #[serde(rename = "A_left", default, skip_serializing_if = "Option::is_none")]
    pub a_left: Option<Rows>,
    #[serde(rename = "A_right", default, skip_serializing_if = "Option::is_none")]
    pub a_right: Option<Rows>,
}

pub fn to_rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &Rows, name: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse(format!("{name}: ragged rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl ParamFile {
    fn slot(&self, block: BlockKind) -> Option<&Rows> {
        match block {
            BlockKind::Pi => None,
            BlockKind::B => self.b.as_ref(),
            BlockKind::T => self.t.as_ref(),
            BlockKind::T1 => self.t1.as_ref(),
            BlockKind::T2 => self.t2.as_ref(),
            BlockKind::O => self.o.as_ref(),
            BlockKind::A => self.a.as_ref(),
            BlockKind::ALeft => self.a_left.as_ref(),
            BlockKind::ARight => self.a_right.as_ref(),
        }
    }

    fn slot_mut(&mut self, block: BlockKind) -> &mut Option<Rows> {
        match block {
            BlockKind::Pi => unreachable!("pi is stored as a vector"),
            BlockKind::B => &mut self.b,
            BlockKind::T => &mut self.t,
            BlockKind::T1 => &mut self.t1,
            BlockKind::T2 => &mut self.t2,
            BlockKind::O => &mut self.o,
            BlockKind::A => &mut self.a,
            BlockKind::ALeft => &mut self.a_left,
            BlockKind::ARight => &mut self.a_right,
        }
    }

    pub fn from_params(params: &ModelParams) -> Self {
        let family = params.family();
        let mut file = ParamFile {
            family: family.kind,
            k: family.k,
            d: family.d,
            pi: params.pi().iter().copied().collect(),
            b: None,
            t: None,
            t1: None,
            t2: None,
            o: None,
            a: None,
            a_left: None,
            a_right: None,
        };
        for (&b, m) in family.layout().iter().zip(params.blocks()) {
            if b != BlockKind::Pi {
                *file.slot_mut(b) = Some(to_rows(m));
            }
        }
        file
    }

    /// Shape checks only; see [`ParamFile::to_params`] for full validation.
    pub fn to_params_unchecked(&self) -> Result<ModelParams> {
        let family = ModelFamily::new(self.family, self.k.unwrap_or(0), self.d)?;
        let mut blocks = Vec::new();
        for &b in family.layout() {
            let m = if b == BlockKind::Pi {
                DMatrix::from_column_slice(self.pi.len(), 1, &self.pi)
            } else {
                let rows = self
                    .slot(b)
                    .ok_or_else(|| Error::InvalidParams(format!("missing block {}", b.name())))?;
                from_rows(rows, b.name())?
            };
            blocks.push(m);
        }
        ModelParams::new_unchecked(family, blocks)
    }

    /// Converts to validated parameters, reporting which invariant failed.
    pub fn to_params(&self) -> Result<ModelParams> {
        let p = self.to_params_unchecked()?;
        p.validate()?;
        Ok(p)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
