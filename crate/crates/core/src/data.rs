//! Dataset ingestion, unit-ball normalization and row-wise partitioning.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Rows as read from disk, before any preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub rows: Vec<Vec<f64>>,
    pub source_name: String,
}

impl RawDataset {
    pub fn new(rows: Vec<Vec<f64>>, source_name: impl Into<String>) -> Result<Self> {
        let source_name = source_name.into();
        let Some(first) = rows.first() else {
            return Err(Error::NoRows(source_name));
        };
        let d = first.len();
        if d == 0 {
            return Err(Error::Dimension("rows must have at least one column".into()));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Ragged {
                    row: r + 1,
                    expected: d,
                    found: row.len(),
                });
            }
        }
        Ok(Self { rows, source_name })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn d(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Keep only the given (0-based) columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Dimension("column selection is empty".into()));
        }
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.d()) {
            return Err(Error::Dimension(format!(
                "column {bad} out of range for {} columns",
                self.d()
            )));
        }
        let rows = self
            .rows
            .iter()
            .map(|row| columns.iter().map(|&c| row[c]).collect())
            .collect();
        Ok(Self {
            rows,
            source_name: self.source_name.clone(),
        })
    }

    /// Subtract the column means.
    pub fn centered(&self) -> Self {
        let n = self.n() as f64;
        let mut means = vec![0.0; self.d()];
        for row in &self.rows {
            for (m, x) in means.iter_mut().zip(row) {
                *m += x / n;
            }
        }
        let rows = self
            .rows
            .iter()
            .map(|row| row.iter().zip(&means).map(|(x, m)| x - m).collect())
            .collect();
        Self {
            rows,
            source_name: self.source_name.clone(),
        }
    }

    fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.d(), |r, c| self.rows[r][c])
    }
}

/// Read a numeric CSV file. Blank lines are ignored; quoting is not supported.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<RawDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(&text, has_header, &path.display().to_string())
}

/// Parse CSV text; `source_name` labels the result and error messages.
pub fn parse_csv(text: &str, has_header: bool, source_name: &str) -> Result<RawDataset> {
    let mut lines = text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty());
    if has_header {
        lines.next();
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, line) in lines.enumerate() {
        let mut row = Vec::new();
        for (c, cell) in line.split(',').enumerate() {
            let cell = cell.trim();
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                row: r + 1,
                col: c + 1,
                value: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(Error::NonFinite { row: r + 1, col: c + 1 });
            }
            row.push(value);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Ragged {
                    row: r + 1,
                    expected: first.len(),
                    found: row.len(),
                });
            }
        }
        rows.push(row);
    }
    RawDataset::new(rows, source_name)
}

/// Global data matrix with every row inside the unit ball.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
}

/// Slack allowed on the unit row-norm invariant.
pub const ROW_NORM_SLACK: f64 = 1e-12;

impl Dataset {
    /// Wrap a matrix, checking that all rows lie in the unit ball.
    pub fn from_matrix(x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::NoRows("matrix".into()));
        }
        for (r, row) in x.row_iter().enumerate() {
            let norm = row.norm();
            if !norm.is_finite() {
                return Err(Error::NonFinite { row: r + 1, col: 0 });
            }
            if norm > 1.0 + ROW_NORM_SLACK {
                return Err(Error::Dimension(format!("row {} has norm {norm} > 1", r + 1)));
            }
        }
        Ok(Self { x })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// The Gram matrix `X Xᵀ`.
    pub fn gram(&self) -> DMatrix<f64> {
        &self.x * self.x.transpose()
    }
}

/// Scale every row by the largest row norm so the data sits in the unit ball.
pub fn normalize_unit_ball(raw: &RawDataset) -> Result<Dataset> {
    for (r, row) in raw.rows.iter().enumerate() {
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: r + 1, col: c + 1 });
        }
    }
    let x = raw.to_matrix();
    let scale = x.row_iter().map(|row| row.norm()).fold(0.0_f64, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    Dataset::from_matrix(x / scale)
}

/// Row blocks of the global data matrix, one per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedDataset {
    blocks: Vec<DMatrix<f64>>,
    offsets: Vec<Vec<usize>>,
    n: usize,
    d: usize,
}

impl PartitionedDataset {
    /// Build from explicit blocks and global row indices. The offsets must
    /// partition `0..n`.
    pub fn from_blocks(blocks: Vec<DMatrix<f64>>, offsets: Vec<Vec<usize>>) -> Result<Self> {
        if blocks.is_empty() || blocks.len() != offsets.len() {
            return Err(Error::Partition(
                "blocks and offsets must be non-empty and aligned".into(),
            ));
        }
        let d = blocks[0].ncols();
        let mut seen = Vec::new();
        for (b, o) in blocks.iter().zip(&offsets) {
            if b.ncols() != d || b.nrows() != o.len() || o.is_empty() {
                return Err(Error::Partition("block shape does not match its offsets".into()));
            }
            seen.extend_from_slice(o);
        }
        let n = seen.len();
        seen.sort_unstable();
        if seen.iter().enumerate().any(|(k, &r)| k != r) {
            return Err(Error::Partition(
                "offsets are not a partition of the row indices".into(),
            ));
        }
        Ok(Self { blocks, offsets, n, d })
    }

    pub fn m(&self) -> usize {
        self.blocks.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn block(&self, agent: usize) -> &DMatrix<f64> {
        &self.blocks[agent]
    }

    /// Global (0-based) row indices held by `agent`.
    pub fn offsets(&self, agent: usize) -> &[usize] {
        &self.offsets[agent]
    }

    pub fn all_offsets(&self) -> &[Vec<usize>] {
        &self.offsets
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(DMatrix::nrows).collect()
    }

    pub fn max_block_size(&self) -> usize {
        self.sizes().into_iter().max().unwrap_or(0)
    }

    /// Agent owning each global row.
    pub fn owners(&self) -> Vec<usize> {
        let mut owner = vec![0; self.n];
        for (agent, rows) in self.offsets.iter().enumerate() {
            for &r in rows {
                owner[r] = agent;
            }
        }
        owner
    }

    /// Reassemble the global matrix.
    pub fn stack(&self) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.n, self.d);
        for (block, rows) in self.blocks.iter().zip(&self.offsets) {
            for (local, &global) in rows.iter().enumerate() {
                x.row_mut(global).copy_from(&block.row(local));
            }
        }
        x
    }

    /// Scatter per-agent segments into a global vector.
    pub fn scatter(&self, segments: &[DVector<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (seg, rows) in segments.iter().zip(&self.offsets) {
            for (local, &global) in rows.iter().enumerate() {
                out[global] = seg[local];
            }
        }
        out
    }

    /// Gather the per-agent segments of a global vector.
    pub fn gather(&self, v: &DVector<f64>) -> Vec<DVector<f64>> {
        self.offsets
            .iter()
            .map(|rows| crate::linalg::select_entries(v, rows))
            .collect()
    }

    /// Same partition with different block contents.
    pub fn with_blocks(&self, blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::from_blocks(blocks, self.offsets.clone())
    }

    /// Copy with one row of one agent's block shifted by `delta`.
    pub fn with_row_shifted(&self, agent: usize, row: usize, delta: &DVector<f64>) -> Result<Self> {
        if agent >= self.m() || row >= self.blocks[agent].nrows() {
            return Err(Error::Perturbation(format!("agent {agent} has no row {row}")));
        }
        if delta.len() != self.d {
            return Err(Error::Dimension(format!(
                "shift has dimension {}, data has {}",
                delta.len(),
                self.d
            )));
        }
        let mut out = self.clone();
        let mut target = out.blocks[agent].row_mut(row);
        target += delta.transpose();
        Ok(out)
    }
}

/// Split the rows of `x` among `m` agents in order. Without explicit sizes the
/// split is balanced and the remainder goes to the lowest-index agents.
pub fn partition_rows(x: &Dataset, m: usize, sizes: Option<&[usize]>) -> Result<PartitionedDataset> {
    let n = x.n();
    if m == 0 {
        return Err(Error::Partition("agent count must be at least 1".into()));
    }
    let sizes: Vec<usize> = match sizes {
        Some(s) => {
            if s.len() != m {
                return Err(Error::Partition(format!("{} sizes given for {m} agents", s.len())));
            }
            if s.iter().any(|&k| k < 1) {
                return Err(Error::Partition("every agent needs at least one row".into()));
            }
            let total: usize = s.iter().sum();
            if total != n {
                return Err(Error::Partition(format!("sizes sum to {total}, data has {n} rows")));
            }
            s.to_vec()
        }
        None => {
            if m > n {
                return Err(Error::Partition(format!("{m} agents but only {n} rows")));
            }
            (0..m).map(|i| n / m + usize::from(i < n % m)).collect()
        }
    };
    let mut blocks = Vec::with_capacity(m);
    let mut offsets = Vec::with_capacity(m);
    let mut start = 0;
    for size in sizes {
        let rows: Vec<usize> = (start..start + size).collect();
        blocks.push(x.matrix().rows(start, size).into_owned());
        offsets.push(rows);
        start += size;
    }
    PartitionedDataset::from_blocks(blocks, offsets)
}
