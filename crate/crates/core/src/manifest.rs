//! Container action manifests and the task dependency graph built from them.
//!
//! A manifest lists every function packed into one code archive together with
//! its entrypoint location and the functions it depends on. Declaration order
//! is preserved everywhere because the list scheduler uses it as its
//! deterministic tie-break key.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Component, Path};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ManifestError {
    #[error("malformed manifest document: {0}")]
    MalformedDocument(String),
    #[error("duplicate function name `{0}`")]
    DuplicateName(String),
    #[error("function `{function}` depends on unknown function `{dependency}`")]
    UnknownDependency { function: String, dependency: String },
    #[error("dependency cycle through `{0}`")]
    CyclicDependency(String),
    #[error("location `{location}` of `{function}` is not a relative path inside the code root")]
    PathTraversal { function: String, location: String },
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("function mask must select at least one function")]
    EmptyMask,
}

/// One packed function: `name` is the qualified `file:entrypoint` identifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionEntry {
    pub name: String,
    pub location: String,
    #[serde(default)]
    pub dependencies: Vec<String>,
}

impl FunctionEntry {
    pub fn new(name: impl Into<String>, location: impl Into<String>, dependencies: &[&str]) -> Self {
        Self {
            name: name.into(),
            location: location.into(),
            dependencies: dependencies.iter().map(|d| d.to_string()).collect(),
        }
    }
}

/// The on-the-wire document: `{"functions": [{name, location, dependencies}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestDocument {
    pub functions: Vec<FunctionEntry>,
}

/// A validated manifest. Entries are non-empty, uniquely named, acyclic and
/// reference only relative locations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionManifest {
    entries: Vec<FunctionEntry>,
    manifest_id: String,
}

impl ActionManifest {
    /// Parses and validates a manifest document.
    pub fn parse(raw: &[u8]) -> Result<Self, ManifestError> {
        let doc: ManifestDocument =
            serde_json::from_slice(raw).map_err(|e| ManifestError::MalformedDocument(e.to_string()))?;
        Self::from_entries(doc.functions)
    }

    pub fn from_entries(entries: Vec<FunctionEntry>) -> Result<Self, ManifestError> {
        if entries.is_empty() {
            return Err(ManifestError::MalformedDocument("manifest lists no functions".into()));
        }
        for entry in &entries {
            if entry.name.is_empty() {
                return Err(ManifestError::MalformedDocument("function with empty name".into()));
            }
            validate_location(&entry.name, &entry.location)?;
        }
        // Uniqueness, dependency resolution and acyclicity are the graph's invariants.
        TaskDag::new(entries.iter().map(|e| (e.name.clone(), e.dependencies.clone())))?;

        let doc = ManifestDocument { functions: entries };
        let manifest_id = digest(&doc);
        Ok(Self { entries: doc.functions, manifest_id })
    }

    /// Synthesized manifest for legacy single-function actions.
    pub fn single(name: &str, location: &str) -> Result<Self, ManifestError> {
        Self::from_entries(vec![FunctionEntry::new(name, location, &[])])
    }

    pub fn entries(&self) -> &[FunctionEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&FunctionEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn manifest_id(&self) -> &str {
        &self.manifest_id
    }

    /// Canonical serialization: compact JSON, fields in `name, location,
    /// dependencies` order, entries in declaration order.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        canonical_bytes(&ManifestDocument { functions: self.entries.clone() })
    }

    pub fn build_dag(&self) -> TaskDag {
        TaskDag::new(self.entries.iter().map(|e| (e.name.clone(), e.dependencies.clone())))
            .expect("manifest was validated at construction")
    }
}

fn canonical_bytes(doc: &ManifestDocument) -> Vec<u8> {
    serde_json::to_vec(doc).expect("manifest documents always serialize")
}

fn digest(doc: &ManifestDocument) -> String {
    hex::encode(Sha256::digest(canonical_bytes(doc)))
}

fn validate_location(function: &str, location: &str) -> Result<(), ManifestError> {
    let traversal = || ManifestError::PathTraversal {
        function: function.to_string(),
        location: location.to_string(),
    };
    if location.is_empty() {
        return Err(traversal());
    }
    for component in Path::new(location).components() {
        match component {
            Component::Normal(_) | Component::CurDir => {}
            Component::ParentDir | Component::RootDir | Component::Prefix(_) => return Err(traversal()),
        }
    }
    Ok(())
}

/// Dependency graph over task names. Node indices follow declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDag {
    // Shared with the schedules built from this graph.
    names: Arc<[String]>,
    index: HashMap<String, usize>,
    deps: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
    topo: Vec<usize>,
}

impl TaskDag {
    /// Builds a graph from `(name, dependencies)` pairs in declaration order.
    pub fn new<I, S>(nodes: I) -> Result<Self, ManifestError>
    where
        I: IntoIterator<Item = (S, Vec<S>)>,
        S: Into<String>,
    {
        let raw: Vec<(String, Vec<String>)> = nodes
            .into_iter()
            .map(|(n, d)| (n.into(), d.into_iter().map(Into::into).collect()))
            .collect();

        let mut index = HashMap::with_capacity(raw.len());
        for (i, (name, _)) in raw.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(ManifestError::DuplicateName(name.clone()));
            }
        }

        let mut deps = vec![Vec::new(); raw.len()];
        let mut succs = vec![Vec::new(); raw.len()];
        for (i, (name, dependencies)) in raw.iter().enumerate() {
            for dep in dependencies {
                let &d = index.get(dep).ok_or_else(|| ManifestError::UnknownDependency {
                    function: name.clone(),
                    dependency: dep.clone(),
                })?;
                if d == i {
                    return Err(ManifestError::CyclicDependency(name.clone()));
                }
                // Repeated dependency declarations collapse to one edge.
                if !deps[i].contains(&d) {
                    deps[i].push(d);
                    succs[d].push(i);
                }
            }
        }

        let mut dag = Self {
            names: raw.into_iter().map(|(n, _)| n).collect(),
            index,
            deps,
            succs,
            topo: Vec::new(),
        };
        dag.topo = dag.kahn();
        if dag.topo.len() < dag.len() {
            let node = dag.find_cycle_node().expect("an incomplete topological order implies a cycle");
            return Err(ManifestError::CyclicDependency(dag.names[node].clone()));
        }
        Ok(dag)
    }

    // Iterative three-colour DFS; returns a node that lies on a cycle.
    fn find_cycle_node(&self) -> Option<usize> {
        const WHITE: u8 = 0;
        const GREY: u8 = 1;
        const BLACK: u8 = 2;
        let mut colour = vec![WHITE; self.len()];
        for root in 0..self.len() {
            if colour[root] != WHITE {
                continue;
            }
            let mut stack = vec![(root, 0usize)];
            colour[root] = GREY;
            while let Some(&mut (node, ref mut next)) = stack.last_mut() {
                if let Some(&succ) = self.succs[node].get(*next) {
                    *next += 1;
                    match colour[succ] {
                        WHITE => {
                            colour[succ] = GREY;
                            stack.push((succ, 0));
                        }
                        GREY => return Some(succ),
                        _ => {}
                    }
                } else {
                    colour[node] = BLACK;
                    stack.pop();
                }
            }
        }
        None
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub(crate) fn shared_names(&self) -> Arc<[String]> {
        self.names.clone()
    }

    pub fn name(&self, node: usize) -> &str {
        &self.names[node]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Direct predecessors of `node`.
    pub fn dependencies(&self, node: usize) -> &[usize] {
        &self.deps[node]
    }

    pub fn successors(&self, node: usize) -> &[usize] {
        &self.succs[node]
    }

    /// All `(before, after)` pairs, grouped by the dependent in declaration order.
    pub fn edges(&self) -> Vec<(&str, &str)> {
        self.deps
            .iter()
            .enumerate()
            .flat_map(|(v, ds)| ds.iter().map(move |&u| (self.names[u].as_str(), self.names[v].as_str())))
            .collect()
    }

    pub fn sources(&self) -> Vec<&str> {
        (0..self.len()).filter(|&i| self.deps[i].is_empty()).map(|i| self.name(i)).collect()
    }

    pub fn sinks(&self) -> Vec<&str> {
        (0..self.len()).filter(|&i| self.succs[i].is_empty()).map(|i| self.name(i)).collect()
    }

    pub fn sink_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.succs[i].is_empty())
    }

    /// Kahn's algorithm, lowest declaration index first among ready nodes.
    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    // Stops short of `len()` when the graph has a cycle.
    fn kahn(&self) -> Vec<usize> {
        let mut indegree: Vec<usize> = self.deps.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..self.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(self.len());
        while let Some(node) = ready.pop_first() {
            order.push(node);
            for &s in &self.succs[node] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    ready.insert(s);
                }
            }
        }
        order
    }

    /// Restricts the graph to the mask's selection plus every transitive
    /// dependency of the selection.
    pub fn apply_mask(&self, mask: &FunctionMask) -> Result<TaskDag, ManifestError> {
        let mut keep = vec![false; self.len()];
        let mut stack = Vec::new();
        for name in mask.selected() {
            let node = self.index_of(name).ok_or_else(|| ManifestError::UnknownFunction(name.clone()))?;
            if !keep[node] {
                keep[node] = true;
                stack.push(node);
            }
        }
        while let Some(node) = stack.pop() {
            for &d in &self.deps[node] {
                if !keep[d] {
                    keep[d] = true;
                    stack.push(d);
                }
            }
        }
        let nodes = (0..self.len()).filter(|&i| keep[i]).map(|i| {
            let deps = self.deps[i].iter().map(|&d| self.names[d].clone()).collect::<Vec<_>>();
            (self.names[i].clone(), deps)
        });
        Ok(TaskDag::new(nodes).expect("a dependency-closed subgraph of a valid graph is valid"))
    }

    /// Graphviz rendering, one edge per line.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph tasks {\n");
        for name in self.names.iter() {
            let _ = writeln!(out, "  {name:?};");
        }
        for (u, v) in self.edges() {
            let _ = writeln!(out, "  {u:?} -> {v:?};");
        }
        out.push_str("}\n");
        out
    }
}

/// Functions an activation must schedule. Never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct FunctionMask {
    selected: BTreeSet<String>,
}

impl FunctionMask {
    pub fn new<I, S>(names: I) -> Result<Self, ManifestError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let selected: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        if selected.is_empty() {
            return Err(ManifestError::EmptyMask);
        }
        Ok(Self { selected })
    }

    /// Every function of the manifest.
    pub fn all(manifest: &ActionManifest) -> Self {
        Self { selected: manifest.names().map(str::to_string).collect() }
    }

    pub fn selected(&self) -> &BTreeSet<String> {
        &self.selected
    }

    pub fn contains(&self, name: &str) -> bool {
        self.selected.contains(name)
    }

    /// Checks every selected name against the manifest.
    pub fn validate_against(&self, manifest: &ActionManifest) -> Result<(), ManifestError> {
        match self.selected.iter().find(|n| manifest.entry(n).is_none()) {
            Some(unknown) => Err(ManifestError::UnknownFunction(unknown.clone())),
            None => Ok(()),
        }
    }
}

impl TryFrom<Vec<String>> for FunctionMask {
    type Error = ManifestError;

    fn try_from(names: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(names)
    }
}

impl From<FunctionMask> for Vec<String> {
    fn from(mask: FunctionMask) -> Self {
        mask.selected.into_iter().collect()
    }
}
