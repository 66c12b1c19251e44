//! LSF1 snapshot files.
//!
//! Layout (little endian): magic `LSF1`, `u32 grid_n`, `u32 n_components`,
//! `u64 step_index`, `f64 time`, then `n_components * grid_n^2` `f64`
//! values, components concatenated, each row-major with y outermost.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{Field, Kind};
use crate::grid::TorusGrid;

pub const MAGIC: &[u8; 4] = b"LSF1";
const HEADER: usize = 4 + 4 + 4 + 8 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub grid_n: u32,
    pub n_components: u32,
    pub step_index: u64,
    pub time: f64,
    pub values: Vec<f64>,
}

impl Snapshot {
    pub fn from_field<K: Kind>(f: &Field<K>, step_index: u64, time: f64) -> Self {
        Self {
            grid_n: f.grid().n() as u32,
            n_components: K::COMPONENTS as u32,
            step_index,
            time,
            values: f.data().to_vec(),
        }
    }

    pub fn to_field<K: Kind>(&self, grid: &Arc<TorusGrid>) -> Result<Field<K>> {
        if self.grid_n as usize != grid.n() || self.n_components as usize != K::COMPONENTS {
            return Err(Error::Format(format!(
                "snapshot is {} components on n = {}, expected {} on n = {}",
                self.n_components,
                self.grid_n,
                K::COMPONENTS,
                grid.n()
            )));
        }
        Field::from_data(grid.clone(), self.values.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + 8 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.grid_n.to_le_bytes());
        out.extend_from_slice(&self.n_components.to_le_bytes());
        out.extend_from_slice(&self.step_index.to_le_bytes());
        out.extend_from_slice(&self.time.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing LSF1 magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let grid_n = u32_at(4);
        let n_components = u32_at(8);
        let step_index = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let time = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
        let count = n_components as usize * (grid_n as usize).pow(2);
        if bytes.len() != HEADER + 8 * count {
            return Err(Error::Format(format!(
                "expected {} value bytes, found {}",
                8 * count,
                bytes.len() - HEADER
            )));
        }
        let values = bytes[HEADER..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { grid_n, n_components, step_index, time, values })
    }
}

pub fn write_file(path: &Path, snap: &Snapshot) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&snap.to_bytes())?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Snapshot> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Snapshot::from_bytes(&bytes)
}
