//! Simulated datasets on disk: a CSV of states and observations plus a TOML
//! sidecar recording how the data were generated.

use std::fs;
use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::Trajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub model: String,
    pub seed: u64,
    pub horizon: usize,
    pub state_dim: usize,
    pub obs_dim: usize,
    /// Model parameters as given at simulation time.
    #[serde(default)]
    pub parameters: toml::Table,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub states: Trajectory,
    pub observations: Trajectory,
}

/// `data.csv` → `data.meta.toml`.
pub fn sidecar_path(csv: &FsPath) -> PathBuf {
    csv.with_extension("meta.toml")
}

impl Dataset {
    pub fn new(meta: DatasetMeta, states: Trajectory, observations: Trajectory) -> Result<Self> {
        if states.len() != meta.horizon
            || observations.len() != meta.horizon
            || states.dim() != meta.state_dim
            || observations.dim() != meta.obs_dim
        {
            return Err(Error::DimensionMismatch(format!(
                "metadata says {}x({}+{}), data are {}x{} and {}x{}",
                meta.horizon,
                meta.state_dim,
                meta.obs_dim,
                states.len(),
                states.dim(),
                observations.len(),
                observations.dim()
            )));
        }
        Ok(Self {
            meta,
            states,
            observations,
        })
    }

    /// CSV header `t,x0,…,x{n−1},y0,…,y{m−1}`.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["t".to_string()];
        header.extend((0..self.meta.state_dim).map(|i| format!("x{i}")));
        header.extend((0..self.meta.obs_dim).map(|i| format!("y{i}")));
        let mut out = header.join(",");
        out.push('\n');
        for t in 0..self.meta.horizon {
            let row: Vec<String> = std::iter::once(t.to_string())
                .chain(
                    self.states
                        .state(t)
                        .iter()
                        .chain(self.observations.state(t))
                        .map(|v| format!("{v:?}")),
                )
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, csv: &FsPath) -> Result<()> {
        fs::write(csv, self.to_csv())?;
        let meta = toml::to_string(&self.meta).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(sidecar_path(csv), meta)?;
        Ok(())
    }

    pub fn read(csv: &FsPath) -> Result<Self> {
        let meta_text = fs::read_to_string(sidecar_path(csv))?;
        let meta: DatasetMeta =
            toml::from_str(&meta_text).map_err(|e| Error::Parse(e.to_string()))?;
        let text = fs::read_to_string(csv)?;
        let mut lines = text.lines();
        let width = meta.state_dim + meta.obs_dim;
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty dataset".into()))?;
        if header.split(',').count() != width + 1 {
            return Err(Error::Parse(format!(
                "header has {} columns, expected {}",
                header.split(',').count(),
                width + 1
            )));
        }
        let mut xs = Vec::with_capacity(meta.horizon * meta.state_dim);
        let mut ys = Vec::with_capacity(meta.horizon * meta.obs_dim);
        for (row, line) in lines.enumerate() {
            let values: Vec<f64> = line
                .split(',')
                .skip(1)
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", row + 1)))?;
            if values.len() != width {
                return Err(Error::Parse(format!(
                    "row {} has {} columns",
                    row + 1,
                    values.len()
                )));
            }
            xs.extend_from_slice(&values[..meta.state_dim]);
            ys.extend_from_slice(&values[meta.state_dim..]);
        }
        let states = Trajectory::from_flat(meta.state_dim, xs);
        let observations = Trajectory::from_flat(meta.obs_dim, ys);
        Self::new(meta, states, observations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("d.csv");
        let meta = DatasetMeta {
            model: "lgssm".into(),
            seed: 3,
            horizon: 2,
            state_dim: 2,
            obs_dim: 1,
            parameters: toml::Table::new(),
        };
        let ds = Dataset::new(
            meta,
            Trajectory::from_flat(2, vec![0.1, -2.5, 1.0 / 3.0, 4.0]),
            Trajectory::from_scalars(&[1e-300, -7.25]),
        )
        .unwrap();
        ds.write(&csv).unwrap();
        assert!(dir.path().join("d.meta.toml").exists());
        assert_eq!(Dataset::read(&csv).unwrap(), ds);
        assert!(fs::read_to_string(&csv)
            .unwrap()
            .starts_with("t,x0,x1,y0\n0,0.1,-2.5,"));
    }

    #[test]
    fn row_count_must_match_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("d.csv");
        fs::write(&csv, "t,x0,y0\n0,1,2\n").unwrap();
        fs::write(
            sidecar_path(&csv),
            "model = \"m\"\nseed = 1\nhorizon = 2\nstate_dim = 1\nobs_dim = 1\n",
        )
        .unwrap();
        assert!(matches!(
            Dataset::read(&csv),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
