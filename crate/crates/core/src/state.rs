use crate::error::{ensure_finite, ensure_len, Error, Result};

/// `N × n` agent state matrix; row `i` is agent `i`'s estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    agents: usize,
    dim: usize,
    data: Vec<f64>,
}

impl StateMatrix {
    pub fn zeros(agents: usize, dim: usize) -> Self {
        StateMatrix {
            agents,
            dim,
            data: vec![0.0; agents * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::Empty("state matrix"))?;
        if dim == 0 {
            return Err(Error::Empty("state row"));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            ensure_len("state row", dim, row.len())?;
            data.extend_from_slice(row);
        }
        ensure_finite("state matrix", &data)?;
        Ok(StateMatrix {
            agents: rows.len(),
            dim,
            data,
        })
    }

    /// Every agent starts from the same point.
    pub fn replicated(agents: usize, row: &[f64]) -> Self {
        let mut data = Vec::with_capacity(agents * row.len());
        for _ in 0..agents {
            data.extend_from_slice(row);
        }
        StateMatrix {
            agents,
            dim: row.len(),
            data,
        }
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }
}
