use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Object or attribute node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConceptNode {
    pub id: u32,
    pub phrase: String,
}

/// Directed relation `subject --relation--> object` between two objects.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(u32, String, u32)", into = "(u32, String, u32)")]
pub struct Relation {
    pub subject: u32,
    pub relation: String,
    pub object: u32,
}

impl From<(u32, String, u32)> for Relation {
    fn from((subject, relation, object): (u32, String, u32)) -> Self {
        Self {
            subject,
            relation,
            object,
        }
    }
}

impl From<Relation> for (u32, String, u32) {
    fn from(r: Relation) -> Self {
        (r.subject, r.relation, r.object)
    }
}

/// Caption scene graph: objects, attributes, attribute→object edges and
/// object→object relations.
///
/// `fallback` carries the whole caption as one phrase when no object could
/// be extracted; it is omitted from JSON otherwise.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub objects: Vec<ConceptNode>,
    pub attributes: Vec<ConceptNode>,
    /// `(attribute_id, object_id)`
    pub oa_edges: Vec<(u32, u32)>,
    pub oo_edges: Vec<Relation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

impl SceneGraph {
    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn object(&self, id: u32) -> Option<&ConceptNode> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn attribute(&self, id: u32) -> Option<&ConceptNode> {
        self.attributes.iter().find(|a| a.id == id)
    }

    /// Position of each object id in `objects`.
    pub fn object_positions(&self) -> HashMap<u32, usize> {
        self.objects.iter().enumerate().map(|(i, o)| (o.id, i)).collect()
    }

    pub fn attribute_positions(&self) -> HashMap<u32, usize> {
        self.attributes
            .iter()
            .enumerate()
            .map(|(i, a)| (a.id, i))
            .collect()
    }

    /// Attribute phrases attached to an object, in attribute order.
    pub fn attributes_of(&self, object_id: u32) -> Vec<&str> {
        self.attributes
            .iter()
            .filter(|a| self.oa_edges.contains(&(a.id, object_id)))
            .map(|a| a.phrase.as_str())
            .collect()
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for n in self.objects.iter().chain(&self.attributes) {
            if !ids.insert(n.id) {
                return Err(Error::invalid(format!("duplicate node id {}", n.id)));
            }
            if n.phrase.split_whitespace().next().is_none() {
                return Err(Error::invalid(format!("node {} has an empty phrase", n.id)));
            }
        }
        let objects: BTreeSet<u32> = self.objects.iter().map(|o| o.id).collect();
        let attributes: BTreeSet<u32> = self.attributes.iter().map(|a| a.id).collect();
        for &(a, o) in &self.oa_edges {
            if !attributes.contains(&a) || !objects.contains(&o) {
                return Err(Error::invalid(format!(
                    "oa edge ({a}, {o}) must join an attribute to an object"
                )));
            }
        }
        for a in &attributes {
            if !self.oa_edges.iter().any(|(x, _)| x == a) {
                return Err(Error::invalid(format!("attribute {a} is not attached")));
            }
        }
        for r in &self.oo_edges {
            if !objects.contains(&r.subject) || !objects.contains(&r.object) {
                return Err(Error::invalid(format!(
                    "relation ({}, {}, {}) has a missing endpoint",
                    r.subject, r.relation, r.object
                )));
            }
            if r.subject == r.object {
                return Err(Error::invalid(format!("self-loop relation on {}", r.subject)));
            }
            if r.relation.split_whitespace().next().is_none() {
                return Err(Error::invalid("relation with an empty phrase"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: SceneGraph = serde_json::from_str(s)?;
        g.validate()?;
        Ok(g)
    }
}

/// Reads a JSON array of scene graphs, validating each.
pub fn graphs_from_json(s: &str) -> Result<Vec<SceneGraph>> {
    let graphs: Vec<SceneGraph> = serde_json::from_str(s)?;
    for (i, g) in graphs.iter().enumerate() {
        g.validate()
            .map_err(|e| Error::invalid(format!("graph {i}: {e}")))?;
    }
    Ok(graphs)
}

/// Writes graphs as a JSON array, one graph per line.
pub fn graphs_to_json(graphs: &[SceneGraph]) -> Result<String> {
    if graphs.is_empty() {
        return Ok("[]\n".to_string());
    }
    let mut out = String::from("[\n");
    for (i, g) in graphs.iter().enumerate() {
        out.push_str("  ");
        out.push_str(&g.to_json()?);
        if i + 1 < graphs.len() {
            out.push(',');
        }
        out.push('\n');
    }
    out.push_str("]\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn man_holds_cup() -> SceneGraph {
        SceneGraph {
            objects: vec![
                ConceptNode {
                    id: 0,
                    phrase: "man".into(),
                },
                ConceptNode {
                    id: 1,
                    phrase: "cup".into(),
                },
            ],
            attributes: vec![ConceptNode {
                id: 2,
                phrase: "red".into(),
            }],
            oa_edges: vec![(2, 1)],
            oo_edges: vec![Relation {
                subject: 0,
                relation: "hold".into(),
                object: 1,
            }],
            fallback: None,
        }
    }

    #[test]
    fn json_schema_shape() {
        let json = man_holds_cup().to_json().unwrap();
        assert_eq!(
            json,
            r#"{"objects":[{"id":0,"phrase":"man"},{"id":1,"phrase":"cup"}],"attributes":[{"id":2,"phrase":"red"}],"oa_edges":[[2,1]],"oo_edges":[[0,"hold",1]]}"#
        );
        assert_eq!(SceneGraph::from_json(&json).unwrap(), man_holds_cup());
    }

    #[test]
    fn invariant_violations() {
        let mut g = man_holds_cup();
        g.oo_edges[0].object = 0;
        assert!(g.validate().is_err());

        let mut g = man_holds_cup();
        g.oa_edges = vec![(0, 1)];
        assert!(g.validate().is_err());

        let mut g = man_holds_cup();
        g.oa_edges.clear();
        assert!(g.validate().is_err());

        let mut g = man_holds_cup();
        g.attributes[0].id = 1;
        assert!(g.validate().is_err());

        let mut g = man_holds_cup();
        g.oo_edges[0].subject = 9;
        assert!(g.validate().is_err());
    }

    #[test]
    fn graph_arrays() {
        assert_eq!(graphs_to_json(&[]).unwrap(), "[]\n");
        let text = graphs_to_json(&[man_holds_cup(), SceneGraph::default()]).unwrap();
        let back = graphs_from_json(&text).unwrap();
        assert_eq!(back, vec![man_holds_cup(), SceneGraph::default()]);
    }
}
