//! (De)serializes a dense matrix as a list of rows.

use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

use crate::Matrix;

pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
    rows(m).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
    let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
    from_rows(&rows).map_err(D::Error::custom)
}

pub fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix, String> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != k) {
        return Err("matrix rows have unequal lengths".into());
    }
    Ok(Matrix::from_fn(n, k, |i, j| rows[i][j]))
}

pub mod option {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Option<Matrix>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Matrix>, D::Error> {
        let rows: Option<Vec<Vec<f64>>> = Option::deserialize(d)?;
        rows.map(|r| from_rows(&r).map_err(D::Error::custom)).transpose()
    }
}
