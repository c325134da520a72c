//! JSON file formats and atomic writes.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::Family;
use crate::tensor::{DenseTensor, TensorDataset};

/// Matrix stored row-major with explicit dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixJson {
    fn from(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

impl TryFrom<MatrixJson> for DMatrix<f64> {
    type Error = Error;

    fn try_from(m: MatrixJson) -> Result<Self> {
        if m.data.len() != m.rows * m.cols {
            return Err(Error::Shape(format!(
                "matrix declares {}x{} but holds {} values",
                m.rows,
                m.cols,
                m.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(m.rows, m.cols, &m.data))
    }
}

/// Serde adapter for `Vec<DMatrix<f64>>` as a list of [`MatrixJson`].
pub mod matrix_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[DMatrix<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
        let list: Vec<MatrixJson> = v.iter().map(MatrixJson::from).collect();
        list.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<DMatrix<f64>>, D::Error> {
        let list = Vec::<MatrixJson>::deserialize(d)?;
        list.into_iter()
            .map(|m| DMatrix::try_from(m).map_err(serde::de::Error::custom))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetJson {
    pub shape: Vec<usize>,
    pub family: Family,
    pub predictors: Vec<Vec<f64>>,
    pub responses: Vec<f64>,
}

impl From<&TensorDataset> for DatasetJson {
    fn from(ds: &TensorDataset) -> Self {
        Self {
            shape: ds.shape().map(<[usize]>::to_vec).unwrap_or_default(),
            family: ds.family(),
            predictors: ds.predictors().iter().map(|p| p.data().to_vec()).collect(),
            responses: ds.responses().to_vec(),
        }
    }
}

impl TryFrom<DatasetJson> for TensorDataset {
    type Error = Error;

    fn try_from(d: DatasetJson) -> Result<Self> {
        let predictors = d
            .predictors
            .into_iter()
            .enumerate()
            .map(|(i, p)| DenseTensor::new(d.shape.clone(), p).map_err(|e| e.context(format!("predictor {i}"))))
            .collect::<Result<Vec<_>>>()?;
        TensorDataset::new(predictors, d.responses, d.family)
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::from(e).context(path.display().to_string()))
}

pub fn read_dataset(path: &Path) -> Result<TensorDataset> {
    let raw: DatasetJson = read_json(path)?;
    TensorDataset::try_from(raw).map_err(|e| e.context(path.display().to_string()))
}

pub fn read_tensor(path: &Path) -> Result<DenseTensor> {
    read_json(path)
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::from(e).context(dir.display().to_string()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| Error::from(e.error).context(path.display().to_string()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_dataset(path: &Path, ds: &TensorDataset) -> Result<()> {
    write_json(path, &DatasetJson::from(ds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_row_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let j = MatrixJson::from(&m);
        assert_eq!(j.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(DMatrix::try_from(j).unwrap(), m);
        let bad = MatrixJson { rows: 2, cols: 2, data: vec![1.0] };
        assert!(DMatrix::try_from(bad).is_err());
    }

    #[test]
    fn dataset_round_trip_through_file() {
        let xs = vec![
            DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            DenseTensor::new(vec![2, 2], vec![0.5, 0.25, 0.0, -1.0]).unwrap(),
        ];
        let ds = TensorDataset::new(xs, vec![1.0, 0.0], Family::Binomial).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.json");
        write_dataset(&path, &ds).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn invalid_tensor_json_rejected() {
        let r: std::result::Result<DenseTensor, _> = serde_json::from_str(r#"{"shape":[2,2],"data":[1,2,3]}"#);
        assert!(r.is_err());
    }
}
