use crate::error::{FaciesError, Result};

/// Generator input: continuous noise `z` plus a one-hot categorical code.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentInput {
    z: Vec<f32>,
    code: usize,
    categories: usize,
}

impl LatentInput {
    pub fn new(z: Vec<f32>, code: usize, categories: usize) -> Result<Self> {
        if categories == 0 {
            return Err(FaciesError::Argument("need at least one category".into()));
        }
        if code >= categories {
            return Err(FaciesError::Argument(format!(
                "code {code} out of range for {categories} categories"
            )));
        }
        Ok(Self {
            z,
            code,
            categories,
        })
    }

    pub fn z(&self) -> &[f32] {
        &self.z
    }

    pub fn z_mut(&mut self) -> &mut [f32] {
        &mut self.z
    }

    pub fn code(&self) -> usize {
        self.code
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn one_hot(&self) -> Vec<f32> {
        let mut c = vec![0.0; self.categories];
        c[self.code] = 1.0;
        c
    }

    /// `z` followed by the one-hot code.
    pub fn to_vec(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(self.z.len() + self.categories);
        v.extend_from_slice(&self.z);
        v.extend(self.one_hot());
        v
    }
}
