//! Row-major nested-array serde adapters for ndarray containers.

use ndarray::{Array1, Array2, Array3};
use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

pub mod vec1 {
    use super::*;

    pub fn serialize<S: Serializer>(a: &Array1<f64>, s: S) -> Result<S::Ok, S::Error> {
        a.to_vec().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array1<f64>, D::Error> {
        Ok(Array1::from(Vec::<f64>::deserialize(d)?))
    }
}

pub mod mat2 {
    use super::*;

    pub fn to_nested<T: Clone>(a: &Array2<T>) -> Vec<Vec<T>> {
        a.outer_iter().map(|r| r.to_vec()).collect()
    }

    pub fn from_nested<T: Clone>(rows: Vec<Vec<T>>) -> Result<Array2<T>, String> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err("ragged matrix rows".into());
        }
        let flat: Vec<T> = rows.into_iter().flatten().collect();
        Array2::from_shape_vec((n, m), flat).map_err(|e| e.to_string())
    }

    pub fn serialize<S: Serializer, T: Clone + Serialize>(a: &Array2<T>, s: S) -> Result<S::Ok, S::Error> {
        to_nested(a).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, T: Clone + Deserialize<'de>>(d: D) -> Result<Array2<T>, D::Error> {
        from_nested(Vec::<Vec<T>>::deserialize(d)?).map_err(D::Error::custom)
    }
}

pub mod mat3 {
    use super::*;

    pub fn serialize<S: Serializer>(a: &Array3<f64>, s: S) -> Result<S::Ok, S::Error> {
        let nested: Vec<Vec<Vec<f64>>> = a.outer_iter().map(|m| m.outer_iter().map(|r| r.to_vec()).collect()).collect();
        nested.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array3<f64>, D::Error> {
        let nested = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        let n0 = nested.len();
        let n1 = nested.first().map_or(0, Vec::len);
        let n2 = nested.first().and_then(|m| m.first()).map_or(0, Vec::len);
        if nested.iter().any(|m| m.len() != n1 || m.iter().any(|r| r.len() != n2)) {
            return Err(D::Error::custom("ragged tensor"));
        }
        let flat: Vec<f64> = nested.into_iter().flatten().flatten().collect();
        Array3::from_shape_vec((n0, n1, n2), flat).map_err(D::Error::custom)
    }
}

pub mod opt_mat2 {
    use super::*;

    pub fn serialize<S: Serializer>(a: &Option<Array2<f64>>, s: S) -> Result<S::Ok, S::Error> {
        a.as_ref().map(mat2::to_nested).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Array2<f64>>, D::Error> {
        match Option::<Vec<Vec<f64>>>::deserialize(d)? {
            None => Ok(None),
            Some(rows) => mat2::from_nested(rows).map(Some).map_err(D::Error::custom),
        }
    }
}

pub mod opt_vec1 {
    use super::*;

    pub fn serialize<S: Serializer>(a: &Option<Array1<f64>>, s: S) -> Result<S::Ok, S::Error> {
        a.as_ref().map(|v| v.to_vec()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Array1<f64>>, D::Error> {
        Ok(Option::<Vec<f64>>::deserialize(d)?.map(Array1::from))
    }
}
