//! Minimum factorisation and its exhaustive cross-check.
//!
//! Two actions can share a biclique factor only if they have identical
//! target neighbourhoods, and any two factors with identical neighbourhoods
//! can be merged into a larger biclique. The unique minimum cover therefore
//! groups actions by neighbourhood, which is a single hashing pass.

use std::collections::HashMap;

use super::{InfluenceNetwork, PolicyFactorisation};
use crate::error::{Error, Result};

/// Largest action count accepted by the exhaustive oracle.
pub const ORACLE_LIMIT: usize = 6;

/// Groups actions by identical neighbourhood. Factors are ordered by their
/// smallest member; actions with no edges share one factor.
pub fn minimum_factorisation(net: &InfluenceNetwork) -> PolicyFactorisation {
    let mut slot: HashMap<&[usize], usize> = HashMap::with_capacity(net.action_count());
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..net.action_count() {
        let g = *slot.entry(net.neighbours(i)).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    PolicyFactorisation::new(net.action_count(), groups).expect("groups partition the actions")
}

/// A cell is admissible when every member is linked to every target reached
/// by any member, i.e. the cell and the union of its neighbourhoods form a
/// complete bipartite subgraph that holds all edges leaving the cell.
fn is_biclique_cell(net: &InfluenceNetwork, cell: &[usize]) -> bool {
    let mut reached = vec![false; net.target_count()];
    for &i in cell {
        for &j in net.neighbours(i) {
            reached[j] = true;
        }
    }
    cell.iter().all(|&i| {
        reached
            .iter()
            .enumerate()
            .filter(|(_, &r)| r)
            .all(|(j, _)| net.has_edge(i, j))
    })
}

/// Visits every set partition of `{0..n-1}` as a restricted growth string.
fn for_each_partition(n: usize, mut visit: impl FnMut(&[usize], usize)) {
    let mut labels = vec![0usize; n];
    let mut maxes = vec![0usize; n];
    loop {
        let blocks = labels.iter().max().map_or(0, |m| m + 1);
        visit(&labels, blocks);
        // advance to the next restricted growth string
        let mut k = n;
        loop {
            if k <= 1 {
                return;
            }
            k -= 1;
            if labels[k] <= maxes[k] {
                labels[k] += 1;
                for t in k + 1..n {
                    labels[t] = 0;
                    maxes[t] = maxes[k].max(labels[k]);
                }
                break;
            }
        }
    }
}

/// Every admissible partition of minimum size, each in canonical order.
pub fn bruteforce_minimum_partitions(net: &InfluenceNetwork) -> Result<Vec<PolicyFactorisation>> {
    let n = net.action_count();
    if n > ORACLE_LIMIT {
        return Err(Error::OracleLimit {
            limit: ORACLE_LIMIT,
            actual: n,
        });
    }
    let mut best = usize::MAX;
    let mut found: Vec<Vec<Vec<usize>>> = Vec::new();
    for_each_partition(n, |labels, blocks| {
        if blocks > best {
            return;
        }
        let mut cells = vec![Vec::new(); blocks];
        for (i, &l) in labels.iter().enumerate() {
            cells[l].push(i);
        }
        if !cells.iter().all(|c| is_biclique_cell(net, c)) {
            return;
        }
        if blocks < best {
            best = blocks;
            found.clear();
        }
        found.push(cells);
    });
    Ok(found
        .into_iter()
        .map(|cells| PolicyFactorisation::new(n, cells).unwrap().canonical())
        .collect())
}

/// Exhaustive minimum biclique partition; limited to small networks.
pub fn mf_bruteforce_oracle(net: &InfluenceNetwork) -> Result<PolicyFactorisation> {
    let mut all = bruteforce_minimum_partitions(net)?;
    Ok(all.swap_remove(0))
}
