//! Communication graphs and mixing matrices.
//!
//! An [`Adjacency`] records who can receive from whom (`a[i][j] = 1` when
//! client `i` receives client `j`'s estimate). Every client always hears
//! itself. [`row_normalize`] turns an adjacency into the row-stochastic
//! [`WeightMatrix`] used for gossip averaging.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::symmetric_spectral_norm;

/// Binary adjacency matrix with self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    m: usize,
    entries: Vec<bool>,
}

impl Adjacency {
    /// Self-loops only.
    pub fn identity(m: usize) -> Self {
        let mut a = Adjacency {
            m,
            entries: vec![false; m * m],
        };
        for i in 0..m {
            a.set(i, i, true);
        }
        a
    }

    /// Build from explicit rows. Diagonal entries are forced to 1.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(Error::invalid("adjacency needs at least one client"));
        }
        let mut a = Adjacency::identity(m);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    actual: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => a.set(i, j, true),
                    other => {
                        return Err(Error::invalid(format!(
                            "adjacency entries must be 0 or 1, got {other}"
                        )))
                    }
                }
            }
        }
        Ok(a)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.m + j]
    }

    fn set(&mut self, i: usize, j: usize, v: bool) {
        self.entries[i * self.m + j] = v;
    }

    /// Row sum including the self-loop.
    pub fn row_sum(&self, i: usize) -> usize {
        self.entries[i * self.m..(i + 1) * self.m]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    /// In-neighbors of `i` (including `i`) in increasing index order.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.m).filter(|&j| self.get(i, j)).collect()
    }

    /// Smallest in-degree, excluding the self-loop.
    pub fn min_in_degree(&self) -> usize {
        (0..self.m).map(|i| self.row_sum(i) - 1).min().unwrap_or(0)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.m).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// True when every client is reachable from every other along directed
    /// edges (information flows from `j` to `i` when `a[i][j] = 1`).
    pub fn is_strongly_connected(&self) -> bool {
        if self.m == 0 {
            return true;
        }
        let forward = self.reachable_from(0, false);
        let backward = self.reachable_from(0, true);
        forward.iter().all(|&b| b) && backward.iter().all(|&b| b)
    }

    /// Connectivity of the underlying undirected graph.
    pub fn is_weakly_connected(&self) -> bool {
        if self.m == 0 {
            return true;
        }
        let mut seen = vec![false; self.m];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..self.m {
                if !seen[v] && (self.get(u, v) || self.get(v, u)) {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|b| b)
    }

    fn reachable_from(&self, start: usize, reverse: bool) -> Vec<bool> {
        let mut seen = vec![false; self.m];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..self.m {
                // information flows u -> v when a[v][u] = 1
                let edge = if reverse { self.get(u, v) } else { self.get(v, u) };
                if edge && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for i in 0..self.m {
            let row: Vec<&str> = (0..self.m)
                .map(|j| if self.get(i, j) { "1" } else { "0" })
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Row-stochastic mixing matrix with a cached sparse view for gossip.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    dense: DMatrix<f64>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl WeightMatrix {
    /// Wrap an explicit dense matrix. Rows must be non-negative and sum to 1.
    pub fn from_dense(dense: DMatrix<f64>) -> Result<Self> {
        if dense.nrows() != dense.ncols() {
            return Err(Error::DimensionMismatch {
                expected: dense.nrows(),
                actual: dense.ncols(),
            });
        }
        for (i, row) in dense.row_iter().enumerate() {
            if row.iter().any(|&w| w < 0.0 || !w.is_finite()) {
                return Err(Error::invalid(format!("row {i} has a negative weight")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("row {i} sums to {sum}")));
            }
        }
        let neighbors = (0..dense.nrows())
            .map(|i| {
                (0..dense.ncols())
                    .filter(|&j| dense[(i, j)] > 0.0)
                    .map(|j| (j, dense[(i, j)]))
                    .collect()
            })
            .collect();
        Ok(WeightMatrix { dense, neighbors })
    }

    pub fn m(&self) -> usize {
        self.dense.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.dense[(i, j)]
    }

    pub fn dense(&self) -> &DMatrix<f64> {
        &self.dense
    }

    /// Non-zero `(j, w_ij)` pairs of row `i` in increasing `j`.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    pub fn max_row_sum_deviation(&self) -> f64 {
        self.dense
            .row_iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for row in self.dense.row_iter() {
            let cells: Vec<String> = row.iter().map(|w| format!("{w}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Which graph family to build.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    /// Every client receives from its `d` cyclic predecessors.
    DirectedCircle { d: usize },
    /// Undirected G(m, q) with isolated-node repair.
    ErdosRenyi { q: f64 },
}

impl TopologySpec {
    pub fn validate(&self, m: usize) -> Result<()> {
        match *self {
            TopologySpec::DirectedCircle { d } => {
                if d < 1 || d + 1 > m {
                    return Err(Error::invalid(format!(
                        "directed circle in-degree {d} outside [1, {}]",
                        m.saturating_sub(1)
                    )));
                }
            }
            TopologySpec::ErdosRenyi { q } => {
                if !(q > 0.0 && q <= 1.0) {
                    return Err(Error::invalid(format!(
                        "link probability {q} outside (0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn build<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Adjacency> {
        match *self {
            TopologySpec::DirectedCircle { d } => build_directed_circle(m, d),
            TopologySpec::ErdosRenyi { q } => build_erdos_renyi(m, q, rng),
        }
    }

    /// Short family name used in output tables.
    pub fn name(&self) -> &'static str {
        match self {
            TopologySpec::DirectedCircle { .. } => "directed_circle",
            TopologySpec::ErdosRenyi { .. } => "erdos_renyi",
        }
    }

    /// The family parameter (in-degree or link probability) as text.
    pub fn param(&self) -> String {
        match *self {
            TopologySpec::DirectedCircle { d } => d.to_string(),
            TopologySpec::ErdosRenyi { q } => format!("{q}"),
        }
    }
}

/// Client `i` receives from itself and its `d` cyclic predecessors.
pub fn build_directed_circle(m: usize, d: usize) -> Result<Adjacency> {
    TopologySpec::DirectedCircle { d }.validate(m)?;
    let mut a = Adjacency::identity(m);
    for i in 0..m {
        for k in 1..=d {
            a.set(i, (i + m - k) % m, true);
        }
    }
    Ok(a)
}

/// Undirected Erdős–Rényi graph with self-loops. Isolated clients are joined
/// to one uniformly chosen partner.
pub fn build_erdos_renyi<R: Rng + ?Sized>(m: usize, q: f64, rng: &mut R) -> Result<Adjacency> {
    TopologySpec::ErdosRenyi { q }.validate(m)?;
    if m == 0 {
        return Err(Error::invalid("graph needs at least one client"));
    }
    let mut a = Adjacency::identity(m);
    for i in 0..m {
        for j in (i + 1)..m {
            if rng.random::<f64>() < q {
                a.set(i, j, true);
                a.set(j, i, true);
            }
        }
    }
    if m > 1 {
        for i in 0..m {
            if a.row_sum(i) == 1 {
                let mut j = rng.random_range(0..m - 1);
                if j >= i {
                    j += 1;
                }
                a.set(i, j, true);
                a.set(j, i, true);
            }
        }
    }
    if !a.is_weakly_connected() {
        log::warn!("erdos-renyi graph (m={m}, q={q}) is disconnected");
    }
    Ok(a)
}

/// `w[i][j] = a[i][j] / d_i` with `d_i` the row sum.
pub fn row_normalize(a: &Adjacency) -> WeightMatrix {
    let m = a.m();
    let mut dense = DMatrix::zeros(m, m);
    let mut neighbors = Vec::with_capacity(m);
    for i in 0..m {
        let degree = a.row_sum(i) as f64;
        let mut row = Vec::new();
        for j in 0..m {
            if a.get(i, j) {
                let w = 1.0 / degree;
                dense[(i, j)] = w;
                row.push((j, w));
            }
        }
        neighbors.push(row);
    }
    WeightMatrix { dense, neighbors }
}

/// Network balance `SE(W) = M^{-1/2} ||W^T 1 - 1||`.
pub fn network_balance(w: &WeightMatrix) -> f64 {
    let m = w.m();
    if m == 0 {
        return 0.0;
    }
    let sq: f64 = w
        .dense
        .column_iter()
        .map(|c| {
            let dev = c.iter().sum::<f64>() - 1.0;
            dev * dev
        })
        .sum();
    (sq / m as f64).sqrt()
}

/// `||W^T (I - 11^T/M) W|| + SE(W)`; values below 1 satisfy the mixing
/// condition required for convergence.
pub fn spectral_condition(w: &WeightMatrix) -> Result<f64> {
    let m = w.m();
    let mut centered = w.dense.clone();
    // (I - J) W: subtract column means
    for mut col in centered.column_iter_mut() {
        let mean = col.iter().sum::<f64>() / m as f64;
        col.add_scalar_mut(-mean);
    }
    let product = w.dense.transpose() * centered;
    // symmetrize away rounding asymmetry
    let sym = (&product + product.transpose()) * 0.5;
    Ok(symmetric_spectral_norm(&sym)? + network_balance(w))
}
