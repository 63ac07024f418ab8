//! Text format for influence networks and a JSON record for factorisations.
//!
//! ```text
//! # two actions sharing targets
//! 3 3
//! 0 0
//! 0 1
//! ```
//!
//! The first non-comment line holds `n m`; each following line is one
//! `action target` edge. `#` starts a comment anywhere on a line.

use serde::{Deserialize, Serialize};

use super::{InfluenceNetwork, PolicyFactorisation};
use crate::error::{Error, Result};

fn parse_pair(line: &str, lineno: usize) -> Result<(usize, usize)> {
    let mut it = line.split_whitespace();
    let mut next = |what: &str| -> Result<usize> {
        let tok = it.next().ok_or_else(|| Error::Parse {
            line: lineno,
            msg: format!("missing {what}"),
        })?;
        tok.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("invalid {what} `{tok}`"),
        })
    };
    let a = next("first integer")?;
    let b = next("second integer")?;
    if it.next().is_some() {
        return Err(Error::Parse {
            line: lineno,
            msg: "expected exactly two integers".into(),
        });
    }
    Ok((a, b))
}

pub fn parse_network(text: &str) -> Result<InfluenceNetwork> {
    let mut header = None;
    let mut edges = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let pair = parse_pair(line, k + 1)?;
        if header.is_none() {
            header = Some(pair);
        } else {
            edges.push(pair);
        }
    }
    let (n, m) = header.ok_or(Error::Parse {
        line: 0,
        msg: "missing `n m` header".into(),
    })?;
    InfluenceNetwork::new(n, m, edges)
}

pub fn write_network(net: &InfluenceNetwork) -> String {
    let mut out = format!("{} {}\n", net.action_count(), net.target_count());
    for (i, j) in net.edges() {
        out.push_str(&format!("{i} {j}\n"));
    }
    out
}

/// Serialised form of a [`PolicyFactorisation`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorisationRecord {
    pub action_count: usize,
    pub factors: Vec<Vec<usize>>,
}

impl From<PolicyFactorisation> for FactorisationRecord {
    fn from(f: PolicyFactorisation) -> Self {
        Self {
            action_count: f.action_count(),
            factors: f.groups(),
        }
    }
}

impl TryFrom<FactorisationRecord> for PolicyFactorisation {
    type Error = Error;

    fn try_from(r: FactorisationRecord) -> Result<Self> {
        PolicyFactorisation::new(r.action_count, r.factors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_comments() {
        let text = "# fork/collider\n2 2   # header\n0 0\n\n0 1\n1 1 # shared\n";
        let net = parse_network(text).unwrap();
        assert_eq!(net.influence_matrix().to_bit_strings(), vec!["11", "01"]);
        assert_eq!(parse_network(&write_network(&net)).unwrap(), net);
    }

    #[test]
    fn malformed_lines() {
        assert!(matches!(parse_network(""), Err(Error::Parse { .. })));
        assert!(matches!(
            parse_network("2 1\n0 x\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_network("2 1\n0 0 0\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert_eq!(parse_network("2 2\n0 0\n"), Err(Error::OrphanTarget(1)));
    }

    #[test]
    fn factorisation_json() {
        let f = PolicyFactorisation::new(3, vec![vec![0, 1], vec![2]]).unwrap();
        let json = serde_json::to_string(&f).unwrap();
        assert_eq!(json, r#"{"action_count":3,"factors":[[0,1],[2]]}"#);
        let back: PolicyFactorisation = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f);
        assert!(serde_json::from_str::<PolicyFactorisation>(
            r#"{"action_count":3,"factors":[[0,1],[1,2]]}"#
        )
        .is_err());
    }
}
