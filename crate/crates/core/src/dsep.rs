//! Directed acyclic graphs and d-separation queries.
//!
//! Used as an independence oracle: on a known generating graph the search
//! can be run against exact d-separation instead of finite-sample tests.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dag {
    names: Vec<String>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl Dag {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of `name`, adding the node if it is new.
    pub fn add_node(&mut self, name: &str) -> usize {
        if let Some(i) = self.index(name) {
            return i;
        }
        self.names.push(name.to_owned());
        self.parents.push(Vec::new());
        self.children.push(Vec::new());
        self.names.len() - 1
    }

    pub fn add_edge(&mut self, from: &str, to: &str) -> Result<()> {
        let a = self.add_node(from);
        let b = self.add_node(to);
        if a == b || self.is_ancestor(b, a) {
            return Err(Error::Config(format!("edge {from} -> {to} creates a cycle")));
        }
        if !self.children[a].contains(&b) {
            self.children[a].push(b);
            self.parents[b].push(a);
        }
        Ok(())
    }

    /// Adds a latent common parent `U[a,b]`, the usual reading of `a <-> b`.
    pub fn add_bidirected(&mut self, a: &str, b: &str) -> Result<()> {
        let latent = format!("U[{a},{b}]");
        self.add_edge(&latent, a)?;
        self.add_edge(&latent, b)
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        match (self.index(from), self.index(to)) {
            (Some(a), Some(b)) => self.children[a].contains(&b),
            _ => false,
        }
    }

    fn is_ancestor(&self, a: usize, b: usize) -> bool {
        let mut stack = vec![a];
        let mut seen = vec![false; self.names.len()];
        while let Some(v) = stack.pop() {
            if v == b {
                return true;
            }
            if !std::mem::replace(&mut seen[v], true) {
                stack.extend(&self.children[v]);
            }
        }
        false
    }

    fn resolve(&self, names: &[&str]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| self.index(n).ok_or_else(|| Error::UnknownColumn((*n).to_owned())))
            .collect()
    }

    /// True when every node in `xs` is d-separated from every node in `ys`
    /// given `zs`.
    pub fn d_separated(&self, xs: &[&str], ys: &[&str], zs: &[&str]) -> Result<bool> {
        let xs = self.resolve(xs)?;
        let ys = self.resolve(ys)?;
        let zs = self.resolve(zs)?;
        let reach = self.reachable(&xs, &zs);
        Ok(ys.iter().all(|&y| !reach[y]))
    }

    /// Nodes d-connected to `sources` given `given` (Bayes-ball).
    fn reachable(&self, sources: &[usize], given: &[usize]) -> Vec<bool> {
        let n = self.names.len();
        let mut observed = vec![false; n];
        for &z in given {
            observed[z] = true;
        }
        // Ancestors of the conditioning set, where colliders open.
        let mut anc_obs = vec![false; n];
        let mut stack: Vec<usize> = given.to_vec();
        while let Some(v) = stack.pop() {
            if !std::mem::replace(&mut anc_obs[v], true) {
                stack.extend(&self.parents[v]);
            }
        }

        // (node, arrived_from_child)
        let mut visited: HashMap<(usize, bool), ()> = HashMap::new();
        let mut queue: VecDeque<(usize, bool)> = sources.iter().map(|&s| (s, true)).collect();
        let mut reach = vec![false; n];
        while let Some((v, from_child)) = queue.pop_front() {
            if visited.insert((v, from_child), ()).is_some() {
                continue;
            }
            if !observed[v] {
                reach[v] = true;
            }
            if from_child {
                if !observed[v] {
                    queue.extend(self.parents[v].iter().map(|&p| (p, true)));
                    queue.extend(self.children[v].iter().map(|&c| (c, false)));
                }
            } else {
                if !observed[v] {
                    queue.extend(self.children[v].iter().map(|&c| (c, false)));
                }
                if anc_obs[v] {
                    queue.extend(self.parents[v].iter().map(|&p| (p, true)));
                }
            }
        }
        for &s in sources {
            reach[s] = false;
        }
        reach
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_fork_collider() -> Dag {
        let mut g = Dag::new();
        g.add_edge("a", "b").unwrap();
        g.add_edge("b", "c").unwrap();
        g.add_edge("d", "e").unwrap();
        g.add_edge("d", "f").unwrap();
        g.add_edge("x", "m").unwrap();
        g.add_edge("y", "m").unwrap();
        g.add_edge("m", "k").unwrap();
        g
    }

    #[test]
    fn chain_is_blocked_by_middle() {
        let g = chain_fork_collider();
        assert!(!g.d_separated(&["a"], &["c"], &[]).unwrap());
        assert!(g.d_separated(&["a"], &["c"], &["b"]).unwrap());
    }

    #[test]
    fn fork_is_blocked_by_root() {
        let g = chain_fork_collider();
        assert!(!g.d_separated(&["e"], &["f"], &[]).unwrap());
        assert!(g.d_separated(&["e"], &["f"], &["d"]).unwrap());
    }

    #[test]
    fn collider_opens_on_descendant() {
        let g = chain_fork_collider();
        assert!(g.d_separated(&["x"], &["y"], &[]).unwrap());
        assert!(!g.d_separated(&["x"], &["y"], &["m"]).unwrap());
        assert!(!g.d_separated(&["x"], &["y"], &["k"]).unwrap());
    }

    #[test]
    fn bidirected_edge_is_a_latent_fork() {
        let mut g = Dag::new();
        g.add_bidirected("p", "q").unwrap();
        assert!(!g.d_separated(&["p"], &["q"], &[]).unwrap());
    }

    #[test]
    fn cycles_are_rejected() {
        let mut g = Dag::new();
        g.add_edge("a", "b").unwrap();
        g.add_edge("b", "c").unwrap();
        assert!(g.add_edge("c", "a").is_err());
    }

    #[test]
    fn unknown_node_errors() {
        let g = chain_fork_collider();
        assert!(g.d_separated(&["zz"], &["a"], &[]).is_err());
    }
}
