//! Influence networks between action dimensions and objective targets.
//!
//! An influence network is a bipartite graph with action indices on one side
//! and target indices on the other; an edge `(i, j)` says that action
//! coordinate `i` can change the value of target `j`. Grouping action
//! coordinates into policy factors merges their edges into a factored
//! network whose biadjacency matrix (`K_Σ`) drives the factor baselines.

mod factorise;
mod io;

pub use factorise::{
    bruteforce_minimum_partitions, mf_bruteforce_oracle, minimum_factorisation, ORACLE_LIMIT,
};
pub use io::{parse_network, write_network, FactorisationRecord};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Selects an ordered subset of action coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PartitionMap {
    indices: Vec<usize>,
    total_dims: usize,
}

impl PartitionMap {
    /// Indices must be strictly increasing, non-empty and below `total_dims`.
    pub fn new(indices: Vec<usize>, total_dims: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidPartition("empty index set".into()));
        }
        if let Some(w) = indices.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPartition(format!(
                "indices not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        let last = *indices.last().unwrap();
        if last >= total_dims {
            return Err(Error::ActionOutOfRange {
                index: last,
                count: total_dims,
            });
        }
        Ok(Self {
            indices,
            total_dims,
        })
    }

    /// Sorts and deduplicates before validating.
    pub fn from_unordered(mut indices: Vec<usize>, total_dims: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        Self::new(indices, total_dims)
    }

    pub fn full(total_dims: usize) -> Result<Self> {
        Self::new((0..total_dims).collect(), total_dims)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn total_dims(&self) -> usize {
        self.total_dims
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    pub fn smallest(&self) -> usize {
        self.indices[0]
    }

    /// Indices of `{0..n-1}` not selected by this map, ascending.
    pub fn complement_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total_dims - self.indices.len());
        let mut it = self.indices.iter().peekable();
        for d in 0..self.total_dims {
            if it.peek() == Some(&&d) {
                it.next();
            } else {
                out.push(d);
            }
        }
        out
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.total_dims {
            return Err(Error::LengthMismatch {
                expected: self.total_dims,
                actual: len,
            });
        }
        Ok(())
    }

    /// `σ(a)`: the selected coordinates in ascending index order.
    pub fn apply<T: Copy>(&self, a: &[T]) -> Result<Vec<T>> {
        self.check_len(a.len())?;
        Ok(self.indices.iter().map(|&i| a[i]).collect())
    }

    /// `σ̄(a)`: the remaining coordinates in ascending index order.
    pub fn apply_complement<T: Copy>(&self, a: &[T]) -> Result<Vec<T>> {
        self.check_len(a.len())?;
        Ok(self
            .complement_indices()
            .into_iter()
            .map(|i| a[i])
            .collect())
    }

    /// Unchecked gather into a reusable buffer. Panics if `a` is too short.
    pub fn gather_into<T: Copy>(&self, a: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend(self.indices.iter().map(|&i| a[i]));
    }

    /// Inverse of the (`apply`, `apply_complement`) pair.
    pub fn reassemble<T: Copy>(&self, selected: &[T], rest: &[T]) -> Result<Vec<T>> {
        if selected.len() != self.indices.len() {
            return Err(Error::LengthMismatch {
                expected: self.indices.len(),
                actual: selected.len(),
            });
        }
        if selected.len() + rest.len() != self.total_dims {
            return Err(Error::LengthMismatch {
                expected: self.total_dims - self.indices.len(),
                actual: rest.len(),
            });
        }
        let mut out = Vec::with_capacity(self.total_dims);
        let (mut s, mut r) = (selected.iter(), rest.iter());
        let mut it = self.indices.iter().peekable();
        for d in 0..self.total_dims {
            if it.peek() == Some(&&d) {
                it.next();
                out.push(*s.next().unwrap());
            } else {
                out.push(*r.next().unwrap());
            }
        }
        Ok(out)
    }
}

/// Bipartite action → target dependency graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfluenceNetwork {
    action_count: usize,
    target_count: usize,
    edges: BTreeSet<(usize, usize)>,
    neighbours: Vec<Vec<usize>>,
    parents: Vec<Vec<usize>>,
}

impl InfluenceNetwork {
    /// Validates indices and that every target has at least one parent.
    /// Duplicate edges are collapsed; actions without edges are allowed.
    pub fn new(
        action_count: usize,
        target_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        if action_count == 0 || target_count == 0 {
            return Err(Error::EmptyNetwork {
                actions: action_count,
                targets: target_count,
            });
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= action_count {
                return Err(Error::ActionOutOfRange {
                    index: i,
                    count: action_count,
                });
            }
            if j >= target_count {
                return Err(Error::TargetOutOfRange {
                    index: j,
                    count: target_count,
                });
            }
            set.insert((i, j));
        }
        let mut neighbours = vec![Vec::new(); action_count];
        let mut parents = vec![Vec::new(); target_count];
        for &(i, j) in &set {
            neighbours[i].push(j);
            parents[j].push(i);
        }
        for p in parents.iter_mut() {
            p.sort_unstable();
        }
        if let Some(j) = parents.iter().position(Vec::is_empty) {
            return Err(Error::OrphanTarget(j));
        }
        Ok(Self {
            action_count,
            target_count,
            edges: set,
            neighbours,
            parents,
        })
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn target_count(&self) -> usize {
        self.target_count
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, action: usize, target: usize) -> bool {
        self.edges.contains(&(action, target))
    }

    /// Targets influenced by `action`, ascending.
    pub fn neighbours(&self, action: usize) -> &[usize] {
        &self.neighbours[action]
    }

    /// Actions influencing `target` (its scope `σ_j`), ascending.
    pub fn parents(&self, target: usize) -> &[usize] {
        &self.parents[target]
    }

    pub fn scope(&self, target: usize) -> PartitionMap {
        PartitionMap::new(self.parents[target].clone(), self.action_count)
            .expect("validated on construction")
    }

    pub fn influence_matrix(&self) -> InfluenceMatrix {
        InfluenceMatrix::from_rows(self.neighbours.clone(), self.target_count)
            .expect("validated on construction")
    }

    /// Relabels actions so that old action `i` becomes `perm[i]`.
    pub fn permute_actions(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.action_count {
            return Err(Error::LengthMismatch {
                expected: self.action_count,
                actual: perm.len(),
            });
        }
        Self::new(
            self.action_count,
            self.target_count,
            self.edges.iter().map(|&(i, j)| (perm[i], j)),
        )
    }
}

/// Boolean biadjacency matrix stored row-wise as sorted column lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfluenceMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl InfluenceMatrix {
    pub fn from_rows(rows: Vec<Vec<usize>>, cols: usize) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut row in rows.iter().cloned() {
            row.sort_unstable();
            row.dedup();
            if let Some(&c) = row.last() {
                if c >= cols {
                    return Err(Error::TargetOutOfRange {
                        index: c,
                        count: cols,
                    });
                }
            }
            col_idx.extend(row);
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            row_ptr,
            col_idx,
        })
    }

    pub fn from_dense(dense: &[Vec<bool>]) -> Result<Self> {
        let cols = dense.first().map_or(0, Vec::len);
        if dense.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged dense matrix".into()));
        }
        let rows = dense
            .iter()
            .map(|r| (0..cols).filter(|&j| r[j]).collect())
            .collect();
        Self::from_rows(rows, cols)
    }

    pub fn all_ones(rows: usize, cols: usize) -> Self {
        Self::from_rows(vec![(0..cols).collect(); rows], cols).unwrap()
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows((0..n).map(|i| vec![i]).collect(), n).unwrap()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Column indices set in row `i`, ascending.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.row(i).binary_search(&j).is_ok()
    }

    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        (0..self.rows)
            .map(|i| {
                let mut r = vec![false; self.cols];
                for &j in self.row(i) {
                    r[j] = true;
                }
                r
            })
            .collect()
    }

    /// Rows rendered as `0`/`1` strings, e.g. `"110"`.
    pub fn to_bit_strings(&self) -> Vec<String> {
        self.to_dense()
            .iter()
            .map(|r| r.iter().map(|&b| if b { '1' } else { '0' }).collect())
            .collect()
    }

    pub fn is_all_ones(&self) -> bool {
        self.nnz() == self.rows * self.cols
    }
}

/// Disjoint, complete grouping of action coordinates into policy factors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FactorisationRecord", into = "FactorisationRecord")]
pub struct PolicyFactorisation {
    action_count: usize,
    factors: Vec<PartitionMap>,
    owner: Vec<usize>,
}

impl PolicyFactorisation {
    pub fn new(action_count: usize, factors: Vec<Vec<usize>>) -> Result<Self> {
        if action_count == 0 {
            return Err(Error::InvalidFactorisation("no action dimensions".into()));
        }
        let mut owner = vec![usize::MAX; action_count];
        let mut maps = Vec::with_capacity(factors.len());
        for (f, idx) in factors.into_iter().enumerate() {
            let pm = PartitionMap::from_unordered(idx, action_count)
                .map_err(|e| Error::InvalidFactorisation(format!("factor {f}: {e}")))?;
            for &d in pm.indices() {
                if owner[d] != usize::MAX {
                    return Err(Error::InvalidFactorisation(format!(
                        "action {d} appears in factors {} and {f}",
                        owner[d]
                    )));
                }
                owner[d] = f;
            }
            maps.push(pm);
        }
        if let Some(d) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::InvalidFactorisation(format!(
                "action {d} is not covered"
            )));
        }
        Ok(Self {
            action_count,
            factors: maps,
            owner,
        })
    }

    pub fn singletons(action_count: usize) -> Result<Self> {
        Self::new(action_count, (0..action_count).map(|i| vec![i]).collect())
    }

    pub fn joint(action_count: usize) -> Result<Self> {
        Self::new(action_count, vec![(0..action_count).collect()])
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn factors(&self) -> &[PartitionMap] {
        &self.factors
    }

    pub fn factor(&self, i: usize) -> &PartitionMap {
        &self.factors[i]
    }

    /// Index of the factor containing action coordinate `d`.
    pub fn factor_of(&self, d: usize) -> usize {
        self.owner[d]
    }

    /// Same factors ordered by their smallest member.
    pub fn canonical(&self) -> Self {
        let mut groups: Vec<Vec<usize>> =
            self.factors.iter().map(|f| f.indices().to_vec()).collect();
        groups.sort_by_key(|g| g[0]);
        Self::new(self.action_count, groups).unwrap()
    }

    /// Equality as a set of sets, ignoring factor order.
    pub fn same_partition(&self, other: &Self) -> bool {
        self.action_count == other.action_count && self.canonical() == other.canonical()
    }

    pub fn groups(&self) -> Vec<Vec<usize>> {
        self.factors.iter().map(|f| f.indices().to_vec()).collect()
    }
}

/// Influence network with action vertices merged into policy factors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactoredInfluenceNetwork {
    factorisation: PolicyFactorisation,
    target_count: usize,
    merged_edges: BTreeSet<(usize, usize)>,
    influence_matrix: InfluenceMatrix,
}

impl FactoredInfluenceNetwork {
    pub fn factorisation(&self) -> &PolicyFactorisation {
        &self.factorisation
    }

    pub fn target_count(&self) -> usize {
        self.target_count
    }

    pub fn merged_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.merged_edges.iter().copied()
    }

    /// `K_Σ`, shaped `|Σ| × m`.
    pub fn influence_matrix(&self) -> &InfluenceMatrix {
        &self.influence_matrix
    }
}

/// Merges the edges of `net` according to `sigma`: factor `i` is linked to
/// target `j` iff some action in factor `i` was linked to `j`.
pub fn factorise(
    net: &InfluenceNetwork,
    sigma: &PolicyFactorisation,
) -> Result<FactoredInfluenceNetwork> {
    if sigma.action_count() != net.action_count() {
        return Err(Error::InvalidFactorisation(format!(
            "factorisation covers {} dimensions, network has {}",
            sigma.action_count(),
            net.action_count()
        )));
    }
    let merged_edges: BTreeSet<(usize, usize)> =
        net.edges().map(|(i, j)| (sigma.factor_of(i), j)).collect();
    let mut rows = vec![Vec::new(); sigma.len()];
    for &(f, j) in &merged_edges {
        rows[f].push(j);
    }
    let influence_matrix = InfluenceMatrix::from_rows(rows, net.target_count())?;
    Ok(FactoredInfluenceNetwork {
        factorisation: sigma.clone(),
        target_count: net.target_count(),
        merged_edges,
        influence_matrix,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorisationKind {
    Mf,
    Singletons,
    Joint,
}

/// Which policy factorisation to train with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactorisationSpec {
    Named(FactorisationKind),
    Explicit(Vec<Vec<usize>>),
}

impl Default for FactorisationSpec {
    fn default() -> Self {
        Self::Named(FactorisationKind::Mf)
    }
}

impl FactorisationSpec {
    pub fn resolve(&self, net: &InfluenceNetwork) -> Result<PolicyFactorisation> {
        let n = net.action_count();
        match self {
            Self::Named(FactorisationKind::Mf) => Ok(minimum_factorisation(net)),
            Self::Named(FactorisationKind::Singletons) => PolicyFactorisation::singletons(n),
            Self::Named(FactorisationKind::Joint) => PolicyFactorisation::joint(n),
            Self::Explicit(groups) => PolicyFactorisation::new(n, groups.clone()),
        }
    }
}
