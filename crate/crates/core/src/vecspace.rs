//! Parameter-vector algebra over client updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A flat vector of model parameters or parameter updates.
///
/// Always non-empty and finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("parameter vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "parameter vector must be non-empty");
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        check_len(self.len(), other.len())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| v * alpha).collect())
    }

    /// `self + alpha * other`, element-wise.
    pub fn add_scaled(&mut self, alpha: f64, other: &ParamVector) -> Result<()> {
        check_len(self.len(), other.len())?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        check_len(self.len(), other.len())?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(v: ParamVector) -> Self {
        v.0
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch { expected, actual });
    }
    Ok(())
}

/// Cosine similarity `<u,v> / (|u| |v|)`.
///
/// A zero-norm input is an error: a vanished client update means training
/// upstream went wrong, and mapping it to similarity 0 would hide that.
pub fn cosine_similarity(u: &ParamVector, v: &ParamVector) -> Result<f64> {
    let dot = u.dot(v)?;
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateVector { client: None });
    }
    Ok(dot / (nu * nv))
}

/// Symmetric matrix of pairwise cosine similarities between client updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    client_ids: Vec<usize>,
    entries: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    /// Builds a matrix from raw rows. The rows must be square and symmetric.
    pub fn from_rows(client_ids: Vec<usize>, entries: Vec<Vec<f64>>) -> Result<Self> {
        let n = client_ids.len();
        if n == 0 {
            return Err(Error::Empty("similarity matrix"));
        }
        if entries.len() != n || entries.iter().any(|r| r.len() != n) {
            return Err(Error::Shape {
                expected: format!("{n}x{n}"),
                actual: format!("{} rows", entries.len()),
            });
        }
        for i in 0..n {
            for j in 0..i {
                if entries[i][j] != entries[j][i] {
                    return Err(Error::InvalidArgument(format!(
                        "similarity matrix not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        check_distinct(&client_ids)?;
        Ok(Self {
            client_ids,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.client_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.client_ids.is_empty()
    }

    pub fn client_ids(&self) -> &[usize] {
        &self.client_ids
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.entries
    }

    /// Entry by row/column position (not client id).
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    /// Row/column position of a client id.
    pub fn position(&self, client: usize) -> Option<usize> {
        self.client_ids.iter().position(|&c| c == client)
    }

    /// Entry by client ids. Panics if either id is absent.
    pub fn get(&self, a: usize, b: usize) -> f64 {
        let i = self.position(a).expect("unknown client id");
        let j = self.position(b).expect("unknown client id");
        self.entries[i][j]
    }
}

fn check_distinct(ids: &[usize]) -> Result<()> {
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("client ids are not distinct".into()));
    }
    Ok(())
}

/// Pairwise cosine similarities of `updates`, rows labelled by `ids`.
///
/// Each pair is computed once and mirrored, so the result is exactly symmetric.
pub fn similarity_matrix(updates: &[ParamVector], ids: &[usize]) -> Result<SimilarityMatrix> {
    if updates.len() != ids.len() {
        return Err(Error::LengthMismatch {
            expected: ids.len(),
            actual: updates.len(),
        });
    }
    if updates.is_empty() {
        return Err(Error::Empty("client updates"));
    }
    check_distinct(ids)?;
    let dim = updates[0].len();
    let mut norms = Vec::with_capacity(updates.len());
    for (u, &id) in updates.iter().zip(ids) {
        check_len(dim, u.len())?;
        let n = u.norm();
        if n == 0.0 {
            return Err(Error::DegenerateVector { client: Some(id) });
        }
        norms.push(n);
    }
    let n = updates.len();
    let mut entries = vec![vec![0.0; n]; n];
    for i in 0..n {
        entries[i][i] = 1.0;
        for j in 0..i {
            let a = updates[i].dot(&updates[j])? / (norms[i] * norms[j]);
            entries[i][j] = a;
            entries[j][i] = a;
        }
    }
    Ok(SimilarityMatrix {
        client_ids: ids.to_vec(),
        entries,
    })
}
