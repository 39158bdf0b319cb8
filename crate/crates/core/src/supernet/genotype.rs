use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeMap, SerializeStruct, Serializer};
use serde::{Deserialize, Serialize};

use super::ops::OpKind;
use crate::error::{Error, Result};

/// Directed edge `from -> to` inside a cell, `from < to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
}

impl Edge {
    pub fn new(from: usize, to: usize) -> Self {
        Edge { from, to }
    }

    /// `j<-i`
    pub fn key(&self) -> String {
        format!("{}<-{}", self.to, self.from)
    }

    /// `edge.j<-i`
    pub fn name(&self) -> String {
        format!("edge.{}", self.key())
    }

    pub fn parse_key(s: &str) -> Result<Edge> {
        let s = s.strip_prefix("edge.").unwrap_or(s);
        let (to, from) = s
            .split_once("<-")
            .ok_or_else(|| Error::Parse(format!("bad edge `{s}`")))?;
        let to = to
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad edge target in `{s}`")))?;
        let from = from
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad edge source in `{s}`")))?;
        if from >= to {
            return Err(Error::Parse(format!("edge `{s}` is not forward")));
        }
        Ok(Edge { from, to })
    }

    fn order_key(&self) -> (usize, usize) {
        (self.to, self.from)
    }
}

impl PartialOrd for Edge {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Edge {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.order_key().cmp(&other.order_key())
    }
}

/// Complete DAG over `num_nodes` nodes; node 0 is the cell input, the last node the output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellTopology {
    pub num_nodes: usize,
    edges: Vec<Edge>,
}

impl CellTopology {
    pub fn new(num_nodes: usize) -> Result<Self> {
        if num_nodes < 2 {
            return Err(Error::config("num_nodes", "a cell needs at least 2 nodes"));
        }
        let mut edges = Vec::new();
        for to in 1..num_nodes {
            for from in 0..to {
                edges.push(Edge { from, to });
            }
        }
        Ok(CellTopology { num_nodes, edges })
    }

    /// Edges sorted by `(to, from)`.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_index(&self, e: Edge) -> Option<usize> {
        self.edges.iter().position(|&x| x == e)
    }

    pub fn incoming(&self, node: usize) -> impl Iterator<Item = (usize, Edge)> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.to == node)
            .map(|(i, e)| (i, *e))
    }
}

impl Default for CellTopology {
    fn default() -> Self {
        CellTopology::new(4).expect("4 nodes is valid")
    }
}

/// One chosen operation per edge, in `(to, from)` edge order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genotype {
    choices: Vec<(Edge, OpKind)>,
}

impl Genotype {
    pub fn new(mut choices: Vec<(Edge, OpKind)>) -> Result<Self> {
        choices.sort_by_key(|(e, _)| *e);
        for w in choices.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Parse(format!("edge {} assigned twice", w[0].0.key())));
            }
        }
        Ok(Genotype { choices })
    }

    /// Build from ops listed in the topology's edge order.
    pub fn from_ops(topology: &CellTopology, ops: &[OpKind]) -> Result<Self> {
        if ops.len() != topology.num_edges() {
            return Err(Error::shape(
                "genotype",
                format!("{} ops for {} edges", ops.len(), topology.num_edges()),
            ));
        }
        Genotype::new(topology.edges().iter().copied().zip(ops.iter().copied()).collect())
    }

    pub fn uniform(topology: &CellTopology, op: OpKind) -> Self {
        Genotype::from_ops(topology, &vec![op; topology.num_edges()]).expect("sizes match")
    }

    pub fn choices(&self) -> &[(Edge, OpKind)] {
        &self.choices
    }

    pub fn ops(&self) -> Vec<OpKind> {
        self.choices.iter().map(|(_, o)| *o).collect()
    }

    pub fn op_for(&self, e: Edge) -> Option<OpKind> {
        self.choices.iter().find(|(x, _)| *x == e).map(|(_, o)| *o)
    }

    pub fn matches_topology(&self, topology: &CellTopology) -> bool {
        self.choices.len() == topology.num_edges()
            && self
                .choices
                .iter()
                .zip(topology.edges())
                .all(|((a, _), b)| a == b)
    }

    /// Fraction of edges whose op has no trainable weights.
    pub fn nonlearnable_ratio(&self) -> f64 {
        if self.choices.is_empty() {
            return 0.0;
        }
        let n = self.choices.iter().filter(|(_, o)| !o.learnable()).count();
        n as f64 / self.choices.len() as f64
    }

    /// Number of edges on which two genotypes differ.
    pub fn hamming(&self, other: &Genotype) -> usize {
        self.choices
            .iter()
            .zip(&other.choices)
            .filter(|(a, b)| a != b)
            .count()
            + self.choices.len().abs_diff(other.choices.len())
    }

    /// One `edge.j<-i=op` line per edge.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (e, o) in &self.choices {
            s.push_str(&format!("{}={}\n", e.name(), o));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut choices = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (e, o) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad genotype line `{line}`")))?;
            if !e.starts_with("edge.") {
                return Err(Error::Parse(format!("bad genotype line `{line}`")));
            }
            choices.push((Edge::parse_key(e)?, o.trim().parse()?));
        }
        Genotype::new(choices)
    }

    /// Compact single-line key, e.g. `1<-0=lin|2<-0=skip|2<-1=zero`.
    pub fn key(&self) -> String {
        self.choices
            .iter()
            .map(|(e, o)| format!("{}={}", e.key(), o))
            .collect::<Vec<_>>()
            .join("|")
    }

    pub fn from_key(key: &str) -> Result<Self> {
        let mut choices = Vec::new();
        for part in key.split('|').filter(|p| !p.is_empty()) {
            let (e, o) = part
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad genotype key `{key}`")))?;
            choices.push((Edge::parse_key(e)?, o.parse()?));
        }
        Genotype::new(choices)
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

struct OrderedEdges<'a>(&'a [(Edge, OpKind)]);

impl Serialize for OrderedEdges<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (e, o) in self.0 {
            m.serialize_entry(&e.key(), o.name())?;
        }
        m.end()
    }
}

impl Serialize for Genotype {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Genotype", 1)?;
        st.serialize_field("edges", &OrderedEdges(&self.choices))?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for Genotype {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            edges: BTreeMap<String, String>,
        }
        let raw = Raw::deserialize(d)?;
        let mut choices = Vec::new();
        for (k, v) in raw.edges {
            let e = Edge::parse_key(&k).map_err(de::Error::custom)?;
            let o: OpKind = v.parse().map_err(de::Error::custom)?;
            choices.push((e, o));
        }
        Genotype::new(choices).map_err(de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_topology_has_six_edges_in_order() {
        let t = CellTopology::default();
        let keys: Vec<String> = t.edges().iter().map(|e| e.key()).collect();
        assert_eq!(keys, ["1<-0", "2<-0", "2<-1", "3<-0", "3<-1", "3<-2"]);
        assert_eq!(CellTopology::new(3).unwrap().num_edges(), 3);
        assert!(CellTopology::new(1).is_err());
    }

    #[test]
    fn text_form_is_sorted_by_target_then_source() {
        let t = CellTopology::new(3).unwrap();
        let g = Genotype::from_ops(&t, &[OpKind::Lin, OpKind::Skip, OpKind::Zero]).unwrap();
        assert_eq!(
            g.to_text(),
            "edge.1<-0=lin\nedge.2<-0=skip\nedge.2<-1=zero\n"
        );
        let json = serde_json::to_string(&g).unwrap();
        assert_eq!(json, r#"{"edges":{"1<-0":"lin","2<-0":"skip","2<-1":"zero"}}"#);
    }

    #[test]
    fn json_order_holds_past_ten_nodes() {
        let t = CellTopology::new(12).unwrap();
        let g = Genotype::uniform(&t, OpKind::Skip);
        let json = serde_json::to_string(&g).unwrap();
        let i2 = json.find("\"2<-0\"").unwrap();
        let i10 = json.find("\"10<-0\"").unwrap();
        assert!(i2 < i10);
    }

    #[test]
    fn nonlearnable_ratio_counts_edges() {
        let t = CellTopology::new(3).unwrap();
        let g = Genotype::from_ops(&t, &[OpKind::Lin, OpKind::Skip, OpKind::Zero]).unwrap();
        assert!((g.nonlearnable_ratio() - 2.0 / 3.0).abs() < 1e-15);
    }

    fn arb_genotype() -> impl Strategy<Value = Genotype> {
        (2usize..6).prop_flat_map(|n| {
            let t = CellTopology::new(n).unwrap();
            let m = t.num_edges();
            proptest::collection::vec(0usize..5, m).prop_map(move |ix| {
                let ops: Vec<OpKind> = ix.into_iter().map(|i| OpKind::ALL[i]).collect();
                Genotype::from_ops(&t, &ops).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn serialized_forms_round_trip(g in arb_genotype()) {
            prop_assert_eq!(Genotype::from_text(&g.to_text()).unwrap(), g.clone());
            prop_assert_eq!(Genotype::from_key(&g.key()).unwrap(), g.clone());
            let json = serde_json::to_string(&g).unwrap();
            prop_assert_eq!(serde_json::from_str::<Genotype>(&json).unwrap(), g);
        }
    }
}
