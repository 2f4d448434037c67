//! Rule-based scene-graph extraction from a dependency parse.
//!
//! Rule inventory:
//!
//! 1. Objects: every `NOUN`/`PROPN` that is not itself a `compound`/`flat`
//!    dependent, expanded with its compound/flat modifiers
//!    (`construction worker`).
//! 2. Adjectival attributes: `amod` dependents of an object, and predicative
//!    adjectives with a copula attached to their subject (`the hat is red`).
//! 3. Verbal attributes: an `acl` verb on a noun, or a verb with a subject,
//!    that has neither a direct nor a prepositional object (`a worker
//!    sitting`, `a dog runs`). `-ing` forms keep their surface form.
//! 4. Verb relations: a verb with a subject (or an `acl` verb on a noun) and
//!    an `obj` gives `subject --verb--> obj`; an `obl` with a preposition
//!    gives `subject --verb prep--> obl` (`person --jump over--> fence`).
//!    Particles (`compound:prt`) join the verb phrase.
//! 5. Preposition relations: an `nmod` noun with a `case` marker attached to
//!    another noun (`flag --above--> building`), and copular prepositional
//!    predicates (`the cat is on the table`).
//!
//! Coordinated nouns (`conj`) share post-nominal modifiers and verb roles:
//! every conjunct gets the attribute or relation.

use std::collections::HashMap;

use super::conllu::DepToken;
use super::graph::{ConceptNode, Relation, SceneGraph};

struct Sentence<'a> {
    tokens: &'a [DepToken],
    children: Vec<Vec<usize>>,
}

impl<'a> Sentence<'a> {
    fn new(tokens: &'a [DepToken]) -> Self {
        let mut children = vec![Vec::new(); tokens.len()];
        for (i, t) in tokens.iter().enumerate() {
            if t.head >= 1 && t.head <= tokens.len() && t.head != t.index {
                children[t.head - 1].push(i);
            }
        }
        Self { tokens, children }
    }

    fn head(&self, i: usize) -> Option<usize> {
        let h = self.tokens[i].head;
        (h >= 1 && h <= self.tokens.len()).then(|| h - 1)
    }

    fn children_with<'s>(&'s self, i: usize, rel: &'s str) -> impl Iterator<Item = usize> + 's {
        self.children[i]
            .iter()
            .copied()
            .filter(move |&c| self.tokens[c].base_rel() == rel)
    }

    fn child_with_deprel(&self, i: usize, deprel: &str) -> Vec<usize> {
        self.children[i]
            .iter()
            .copied()
            .filter(|&c| self.tokens[c].deprel == deprel)
            .collect()
    }

    fn lemma(&self, i: usize) -> String {
        let t = &self.tokens[i];
        let l = if t.lemma.is_empty() || t.lemma == "_" {
            &t.surface
        } else {
            &t.lemma
        };
        l.to_lowercase()
    }

    fn is_object_head(&self, i: usize) -> bool {
        let t = &self.tokens[i];
        t.is_nominal() && !matches!(t.base_rel(), "compound" | "flat" | "fixed")
    }

    /// Head plus compound/flat modifiers, in sentence order.
    fn noun_phrase(&self, i: usize) -> String {
        let mut parts = vec![i];
        let mut stack = vec![i];
        while let Some(n) = stack.pop() {
            for &c in &self.children[n] {
                if matches!(self.tokens[c].base_rel(), "compound" | "flat")
                    && self.tokens[c].deprel != "compound:prt"
                    && !parts.contains(&c)
                {
                    parts.push(c);
                    stack.push(c);
                }
            }
        }
        parts.sort_unstable();
        parts.iter().map(|&p| self.lemma(p)).collect::<Vec<_>>().join(" ")
    }

    fn adjective_phrase(&self, i: usize) -> String {
        let mut parts: Vec<usize> = self.children_with(i, "compound").collect();
        parts.push(i);
        parts.sort_unstable();
        parts.iter().map(|&p| self.lemma(p)).collect::<Vec<_>>().join(" ")
    }

    fn particles(&self, v: usize) -> Vec<String> {
        let mut prt = self.child_with_deprel(v, "compound:prt");
        prt.sort_unstable();
        prt.into_iter().map(|p| self.lemma(p)).collect()
    }

    fn verb_phrase(&self, v: usize) -> String {
        let mut words = vec![self.lemma(v)];
        words.extend(self.particles(v));
        words.join(" ")
    }

    fn verb_attribute(&self, v: usize) -> String {
        let surface = self.tokens[v].surface.to_lowercase();
        let mut words = vec![if surface.ends_with("ing") {
            surface
        } else {
            self.lemma(v)
        }];
        words.extend(self.particles(v));
        words.join(" ")
    }

    /// Preposition phrase of a nominal's `case` marker, with `fixed` parts
    /// (`in front of`).
    fn preposition(&self, n: usize) -> Option<String> {
        let case = self.children_with(n, "case").next()?;
        let mut parts = vec![case];
        parts.extend(self.children_with(case, "fixed"));
        parts.sort_unstable();
        Some(parts.iter().map(|&p| self.lemma(p)).collect::<Vec<_>>().join(" "))
    }

    /// Nominal coordination group containing `n`.
    fn conjuncts(&self, n: usize) -> Vec<usize> {
        // Step bounds and the `out` check keep malformed (cyclic) heads finite.
        let mut root = n;
        for _ in 0..self.tokens.len() {
            if self.tokens[root].base_rel() != "conj" {
                break;
            }
            match self.head(root) {
                Some(h) if self.tokens[h].is_nominal() => root = h,
                _ => break,
            }
        }
        let mut out = vec![root];
        let mut stack = vec![root];
        while let Some(x) = stack.pop() {
            for c in self.children_with(x, "conj") {
                if self.tokens[c].is_nominal() && !out.contains(&c) {
                    out.push(c);
                    stack.push(c);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Nominal subject of a predicate, inherited through `conj` when absent.
    fn subject(&self, p: usize) -> Option<usize> {
        let mut cur = p;
        for _ in 0..self.tokens.len() {
            if let Some(s) = self.children_with(cur, "nsubj").find(|&s| self.tokens[s].deprel != "nsubj:pass") {
                return self.tokens[s].is_nominal().then_some(s);
            }
            if self.tokens[cur].base_rel() != "conj" {
                return None;
            }
            cur = self.head(cur)?;
        }
        None
    }
}

#[derive(Default)]
struct Builder {
    attributes: Vec<(usize, usize, String)>,
    relations: Vec<(usize, String, usize)>,
}

impl Builder {
    fn attribute(&mut self, s: &Sentence<'_>, nouns: &[usize], token: usize, phrase: String) {
        for &n in nouns {
            if s.is_object_head(n) {
                self.attributes.push((n, token, phrase.clone()));
            }
        }
    }

    fn relation(&mut self, s: &Sentence<'_>, subjects: &[usize], phrase: &str, objects: &[usize]) {
        for &a in subjects {
            for &b in objects {
                if a != b && s.is_object_head(a) && s.is_object_head(b) {
                    self.relations.push((a, phrase.to_string(), b));
                }
            }
        }
    }

    /// Object and prepositional arguments of verb `v` acting on `subjects`.
    /// Returns whether any argument was found.
    fn verb_arguments(&mut self, s: &Sentence<'_>, v: usize, subjects: &[usize]) -> bool {
        let verb = s.verb_phrase(v);
        let mut found = false;
        for o in s.children_with(v, "obj") {
            if s.tokens[o].is_nominal() {
                self.relation(s, subjects, &verb, &s.conjuncts(o));
                found = true;
            }
        }
        for o in s.children_with(v, "obl") {
            if !s.tokens[o].is_nominal() {
                continue;
            }
            if let Some(prep) = s.preposition(o) {
                let phrase = format!("{verb} {prep}");
                self.relation(s, subjects, &phrase, &s.conjuncts(o));
                found = true;
            }
        }
        found
    }
}

/// Compiles one dependency-parsed sentence into a scene graph.
///
/// Sentences without any object yield an empty graph whose `fallback`
/// holds the lemmatized caption.
pub fn extract_scene_graph(sentence: &[DepToken]) -> SceneGraph {
    let s = Sentence::new(sentence);
    let mut b = Builder::default();

    for (i, t) in sentence.iter().enumerate() {
        let head = s.head(i);
        match (t.base_rel(), t.upos.as_str()) {
            ("amod", _) => {
                if let Some(h) = head.filter(|&h| s.is_object_head(h)) {
                    let phrase = if t.upos == "VERB" {
                        s.verb_attribute(i)
                    } else {
                        s.adjective_phrase(i)
                    };
                    b.attribute(&s, &[h], i, phrase);
                }
            }
            ("acl", "VERB") => {
                if let Some(h) = head.filter(|&h| s.is_object_head(h)) {
                    let nouns = s.conjuncts(h);
                    if !b.verb_arguments(&s, i, &nouns) {
                        b.attribute(&s, &nouns, i, s.verb_attribute(i));
                    }
                }
            }
            ("nmod", _) if t.deprel != "nmod:poss" && s.is_object_head(i) => {
                if let (Some(h), Some(prep)) = (head.filter(|&h| s.is_object_head(h)), s.preposition(i)) {
                    b.relation(&s, &[h], &prep, &s.conjuncts(i));
                }
            }
            _ => {}
        }

        if t.upos == "VERB" && !matches!(t.base_rel(), "acl" | "amod") {
            if let Some(subj) = s.subject(i) {
                let subjects = s.conjuncts(subj);
                if !b.verb_arguments(&s, i, &subjects) {
                    b.attribute(&s, &subjects, i, s.verb_attribute(i));
                }
            }
        }

        let copular = s.children_with(i, "cop").next().is_some();
        if copular || (t.base_rel() == "conj" && head.is_some_and(|h| s.children_with(h, "cop").next().is_some())) {
            if let Some(subj) = s.subject(i) {
                let subjects = s.conjuncts(subj);
                if t.upos == "ADJ" {
                    b.attribute(&s, &subjects, i, s.adjective_phrase(i));
                } else if s.is_object_head(i) {
                    if let Some(prep) = s.preposition(i) {
                        b.relation(&s, &subjects, &prep, &s.conjuncts(i));
                    }
                }
            }
        }
    }

    assemble(&s, b)
}

fn assemble(s: &Sentence<'_>, mut b: Builder) -> SceneGraph {
    let object_tokens: Vec<usize> = (0..s.tokens.len()).filter(|&i| s.is_object_head(i)).collect();
    let ids: HashMap<usize, u32> = object_tokens
        .iter()
        .enumerate()
        .map(|(k, &t)| (t, k as u32))
        .collect();
    let objects: Vec<ConceptNode> = object_tokens
        .iter()
        .map(|&t| ConceptNode {
            id: ids[&t],
            phrase: s.noun_phrase(t),
        })
        .collect();

    b.attributes.sort_by_key(|(n, tok, _)| (ids[n], *tok));
    let mut attributes = Vec::new();
    let mut oa_edges = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (n, _, phrase) in b.attributes {
        let obj = ids[&n];
        if !seen.insert((obj, phrase.clone())) {
            continue;
        }
        let id = (objects.len() + attributes.len()) as u32;
        attributes.push(ConceptNode { id, phrase });
        oa_edges.push((id, obj));
    }

    let mut oo_edges: Vec<Relation> = Vec::new();
    for (a, phrase, o) in b.relations {
        let r = Relation {
            subject: ids[&a],
            relation: phrase,
            object: ids[&o],
        };
        if !oo_edges.contains(&r) {
            oo_edges.push(r);
        }
    }

    let fallback = if objects.is_empty() {
        let words: Vec<String> = s
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.upos != "PUNCT")
            .map(|(i, _)| s.lemma(i))
            .collect();
        (!words.is_empty()).then(|| words.join(" "))
    } else {
        None
    };

    SceneGraph {
        objects,
        attributes,
        oa_edges,
        oo_edges,
        fallback,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sgparse::conllu::parse_conllu;

    fn graph(conllu: &str) -> SceneGraph {
        let doc = conllu
            .lines()
            .map(|l| l.trim().split_whitespace().collect::<Vec<_>>().join("\t"))
            .collect::<Vec<_>>()
            .join("\n");
        let sents = parse_conllu(&doc).unwrap();
        let g = extract_scene_graph(&sents[0]);
        g.validate().unwrap();
        g
    }

    fn phrases(nodes: &[ConceptNode]) -> Vec<&str> {
        nodes.iter().map(|n| n.phrase.as_str()).collect()
    }

    fn relations(g: &SceneGraph) -> Vec<(String, String, String)> {
        g.oo_edges
            .iter()
            .map(|r| {
                (
                    g.object(r.subject).unwrap().phrase.clone(),
                    r.relation.clone(),
                    g.object(r.object).unwrap().phrase.clone(),
                )
            })
            .collect()
    }

    #[test]
    fn transitive_verb_relation() {
        let g = graph(
            "1 A a DET _ _ 2 det _ _
             2 man man NOUN _ _ 3 nsubj _ _
             3 holds hold VERB _ _ 0 root _ _
             4 a a DET _ _ 5 det _ _
             5 cup cup NOUN _ _ 3 obj _ _",
        );
        assert_eq!(phrases(&g.objects), ["man", "cup"]);
        assert!(g.attributes.is_empty());
        assert_eq!(relations(&g), [("man".into(), "hold".into(), "cup".into())]);
    }

    #[test]
    fn compound_object_with_participle() {
        let g = graph(
            "1 A a DET _ _ 3 det _ _
             2 construction construction NOUN _ _ 3 compound _ _
             3 worker worker NOUN _ _ 0 root _ _
             4 sitting sit VERB _ _ 3 acl _ _",
        );
        assert_eq!(phrases(&g.objects), ["construction worker"]);
        assert_eq!(phrases(&g.attributes), ["sitting"]);
        assert_eq!(g.oa_edges, [(1, 0)]);
    }

    #[test]
    fn copular_preposition_and_predicate() {
        let g = graph(
            "1 The the DET _ _ 2 det _ _
             2 cat cat NOUN _ _ 6 nsubj _ _
             3 is be AUX _ _ 6 cop _ _
             4 on on ADP _ _ 6 case _ _
             5 the the DET _ _ 6 det _ _
             6 table table NOUN _ _ 0 root _ _",
        );
        assert_eq!(relations(&g), [("cat".into(), "on".into(), "table".into())]);

        let g = graph(
            "1 The the DET _ _ 2 det _ _
             2 hat hat NOUN _ _ 4 nsubj _ _
             3 is be AUX _ _ 4 cop _ _
             4 red red ADJ _ _ 0 root _ _",
        );
        assert_eq!(phrases(&g.attributes), ["red"]);
    }

    #[test]
    fn no_objects_gives_fallback() {
        let g = graph(
            "1 Wow wow INTJ _ _ 0 root _ _
             2 ! ! PUNCT _ _ 1 punct _ _",
        );
        assert!(g.is_empty());
        assert_eq!(g.fallback.as_deref(), Some("wow"));
    }
}
