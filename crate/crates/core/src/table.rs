use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One individual. `c_obs` is the observed mediator proxy; `None` means missing (m = 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub id: u64,
    /// 1 = source environment, 0 = target.
    pub s: u8,
    pub a: u8,
    pub w: u8,
    pub r: f64,
    /// Latent mediator value, only known for simulated data.
    pub c_true: Option<f64>,
    pub c_obs: Option<f64>,
    pub y: u8,
}

impl Observation {
    pub fn m(&self) -> u8 {
        self.c_obs.is_some() as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Column {
    S,
    A,
    W,
    R,
    C,
    Y,
}

impl Column {
    /// Value of this column on a row; `None` only for a missing mediator.
    pub fn value(self, row: &Observation) -> Option<f64> {
        match self {
            Column::S => Some(row.s as f64),
            Column::A => Some(row.a as f64),
            Column::W => Some(row.w as f64),
            Column::R => Some(row.r),
            Column::C => row.c_obs,
            Column::Y => Some(row.y as f64),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Column::S => "S",
            Column::A => "A",
            Column::W => "W",
            Column::R => "R",
            Column::C => "C",
            Column::Y => "Y",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservationTable {
    rows: Vec<Observation>,
}

impl ObservationTable {
    /// Validates binary columns and finiteness.
    pub fn new(rows: Vec<Observation>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            for (name, v) in [("S", row.s), ("A", row.a), ("W", row.w), ("Y", row.y)] {
                if v > 1 {
                    return Err(Error::Data(format!("row {i}: {name} = {v} is not binary")));
                }
            }
            let finite = row.r.is_finite()
                && row.c_obs.map_or(true, f64::is_finite)
                && row.c_true.map_or(true, f64::is_finite);
            if !finite {
                return Err(Error::Data(format!("row {i}: non-finite value")));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<Observation> {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Observation> {
        self.rows.iter()
    }

    pub fn count(&self, s: Option<u8>, w: Option<u8>) -> usize {
        self.rows
            .iter()
            .filter(|r| s.map_or(true, |s| r.s == s) && w.map_or(true, |w| r.w == w))
            .count()
    }

    /// Fraction of rows with a missing mediator among rows matching `s` and `w`.
    pub fn missing_fraction(&self, s: Option<u8>, w: Option<u8>) -> f64 {
        let (mut n, mut k) = (0usize, 0usize);
        for r in &self.rows {
            if s.map_or(true, |s| r.s == s) && w.map_or(true, |w| r.w == w) {
                n += 1;
                k += (r.m() == 0) as usize;
            }
        }
        if n == 0 {
            0.0
        } else {
            k as f64 / n as f64
        }
    }

    pub fn has_truth(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.c_true.is_some())
    }
}
