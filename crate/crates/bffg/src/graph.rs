//! Directed acyclic graphs of Markov kernels with observed leaves.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelDoc, KernelSpec};
use crate::space::{StateSpaceDesc, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VertexId(pub u64);

impl std::fmt::Display for VertexId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Root,
    Latent,
    Leaf,
}

/// How a vertex with several parents sends its h-function upwards.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MultiParentMode {
    /// Project onto product form and send one factor to each parent.
    #[default]
    Marginalise,
    /// Send everything to one parent and the constant 1 to the others.
    SubTree { parent: VertexId },
}

/// Artificial Gaussian observation `q = N(mean, cov)` fused into h at a
/// vertex; the forward pass divides it back out.
#[derive(Debug, Clone, PartialEq)]
pub struct Regulariser {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexSpec {
    pub id: VertexId,
    pub role: Role,
    pub space: StateSpaceDesc,
}

#[derive(Debug, Clone)]
pub struct TransitionGraph {
    ids: Vec<VertexId>,
    index: HashMap<VertexId, usize>,
    roles: Vec<Role>,
    spaces: Vec<StateSpaceDesc>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    kernels: Vec<Option<KernelSpec>>,
    observations: Vec<Option<Value>>,
    modes: Vec<MultiParentMode>,
    regularisers: Vec<Option<Regulariser>>,
    root: usize,
    root_value: Value,
    topo: Vec<usize>,
}

/// Validate and assemble a graph. Vertices keep the order given here, which
/// also breaks ties in the topological order.
pub fn build_graph(
    vertices: Vec<VertexSpec>,
    edges: Vec<(VertexId, VertexId)>,
    kernels: Vec<(VertexId, KernelSpec)>,
    observations: Vec<(VertexId, Value)>,
    root_value: Value,
) -> Result<TransitionGraph> {
    GraphBuilder {
        vertices,
        edges,
        kernels,
        observations,
        root_value: Some(root_value),
        modes: Vec::new(),
        regularisers: Vec::new(),
    }
    .build()
}

/// Incremental construction of a [`TransitionGraph`].
#[derive(Debug, Default, Clone)]
pub struct GraphBuilder {
    vertices: Vec<VertexSpec>,
    edges: Vec<(VertexId, VertexId)>,
    kernels: Vec<(VertexId, KernelSpec)>,
    observations: Vec<(VertexId, Value)>,
    root_value: Option<Value>,
    modes: Vec<(VertexId, MultiParentMode)>,
    regularisers: Vec<(VertexId, Regulariser)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn root(mut self, id: u64, space: StateSpaceDesc, value: Value) -> Self {
        self.vertices.push(VertexSpec {
            id: VertexId(id),
            role: Role::Root,
            space,
        });
        self.root_value = Some(value);
        self
    }

    pub fn latent(mut self, id: u64, space: StateSpaceDesc) -> Self {
        self.vertices.push(VertexSpec {
            id: VertexId(id),
            role: Role::Latent,
            space,
        });
        self
    }

    pub fn leaf(mut self, id: u64, space: StateSpaceDesc, observation: Value) -> Self {
        self.vertices.push(VertexSpec {
            id: VertexId(id),
            role: Role::Leaf,
            space,
        });
        self.observations.push((VertexId(id), observation));
        self
    }

    pub fn edge(mut self, from: u64, to: u64) -> Self {
        self.edges.push((VertexId(from), VertexId(to)));
        self
    }

    /// Attach the kernel of the transition into `to`.
    pub fn kernel(mut self, to: u64, kernel: KernelSpec) -> Self {
        self.kernels.push((VertexId(to), kernel));
        self
    }

    /// Edge `from → to` together with the kernel into `to`.
    pub fn transition(self, from: u64, to: u64, kernel: KernelSpec) -> Self {
        self.edge(from, to).kernel(to, kernel)
    }

    pub fn observation(mut self, id: u64, value: Value) -> Self {
        self.observations.push((VertexId(id), value));
        self
    }

    pub fn mode(mut self, id: u64, mode: MultiParentMode) -> Self {
        self.modes.push((VertexId(id), mode));
        self
    }

    pub fn regulariser(mut self, id: u64, reg: Regulariser) -> Self {
        self.regularisers.push((VertexId(id), reg));
        self
    }

    pub fn build(self) -> Result<TransitionGraph> {
        let n = self.vertices.len();
        let mut index = HashMap::with_capacity(n);
        for (i, v) in self.vertices.iter().enumerate() {
            v.space.validate()?;
            if index.insert(v.id, i).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate vertex id {}", v.id)));
            }
        }
        let roots: Vec<usize> = (0..n)
            .filter(|&i| self.vertices[i].role == Role::Root)
            .collect();
        let root = match roots.as_slice() {
            [r] => *r,
            _ => {
                return Err(Error::InvalidGraph(format!(
                    "expected one root, found {}",
                    roots.len()
                )))
            }
        };
        let lookup = |id: &VertexId| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::InvalidGraph(format!("unknown vertex {id}")))
        };

        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for (a, b) in &self.edges {
            if a == b {
                return Err(Error::CycleDetected(a.0));
            }
            let (ia, ib) = (lookup(a)?, lookup(b)?);
            if !seen.insert((ia, ib)) {
                return Err(Error::InvalidGraph(format!("parallel edge {a} -> {b}")));
            }
            parents[ib].push(ia);
            children[ia].push(ib);
        }
        for p in &mut parents {
            p.sort_unstable();
        }
        for c in &mut children {
            c.sort_unstable();
        }
        let topo =
            kahn(&parents, &children).map_err(|i| Error::CycleDetected(self.vertices[i].id.0))?;

        for (i, v) in self.vertices.iter().enumerate() {
            match v.role {
                Role::Root if !parents[i].is_empty() => {
                    return Err(Error::InvalidGraph("the root cannot have parents".into()))
                }
                Role::Latent | Role::Leaf if parents[i].is_empty() => {
                    return Err(Error::InvalidGraph(format!(
                        "vertex {} has no parent",
                        v.id
                    )))
                }
                Role::Leaf if !children[i].is_empty() => {
                    return Err(Error::InvalidGraph(format!("leaf {} has children", v.id)))
                }
                _ => {}
            }
        }

        let mut kernels: Vec<Option<KernelSpec>> = vec![None; n];
        for (id, k) in self.kernels {
            let i = lookup(&id)?;
            if i == root {
                return Err(Error::InvalidGraph(
                    "the root has no incoming kernel".into(),
                ));
            }
            k.validate()?;
            kernels[i] = Some(k);
        }
        let mut observations: Vec<Option<Value>> = vec![None; n];
        for (id, v) in self.observations {
            let i = lookup(&id)?;
            if self.vertices[i].role != Role::Leaf {
                return Err(Error::ObservationOnLatent(id.0));
            }
            if !self.vertices[i].space.contains(&v) {
                return Err(Error::SpaceMismatch(format!(
                    "observation {v:?} at leaf {id}"
                )));
            }
            observations[i] = Some(v);
        }
        let spaces: Vec<StateSpaceDesc> = self.vertices.iter().map(|v| v.space.clone()).collect();
        for i in 0..n {
            if i == root {
                continue;
            }
            let id = self.vertices[i].id;
            let k = kernels[i].as_ref().ok_or(Error::MissingKernel(id.0))?;
            let input =
                StateSpaceDesc::joint(&parents[i].iter().map(|&p| &spaces[p]).collect::<Vec<_>>());
            k.check_spaces(&input, &spaces[i])?;
            if self.vertices[i].role == Role::Leaf && observations[i].is_none() {
                return Err(Error::InvalidGraph(format!("leaf {id} has no observation")));
            }
        }
        let root_value = self
            .root_value
            .ok_or_else(|| Error::InvalidGraph("no root value".into()))?;
        if !spaces[root].contains(&root_value) {
            return Err(Error::SpaceMismatch(format!("root value {root_value:?}")));
        }

        let mut modes = vec![MultiParentMode::Marginalise; n];
        for (id, m) in self.modes {
            let i = lookup(&id)?;
            if let MultiParentMode::SubTree { parent } = &m {
                if !parents[i].contains(&lookup(parent)?) {
                    return Err(Error::InvalidGraph(format!(
                        "{parent} is not a parent of {id}"
                    )));
                }
            }
            modes[i] = m;
        }
        let mut regularisers = vec![None; n];
        for (id, r) in self.regularisers {
            let i = lookup(&id)?;
            if self.vertices[i].role != Role::Latent || spaces[i].real_dim() != Some(r.mean.len()) {
                return Err(Error::InvalidGraph(format!(
                    "regulariser does not fit vertex {id}"
                )));
            }
            regularisers[i] = Some(r);
        }

        Ok(TransitionGraph {
            ids: self.vertices.iter().map(|v| v.id).collect(),
            index,
            roles: self.vertices.iter().map(|v| v.role).collect(),
            spaces,
            parents,
            children,
            kernels,
            observations,
            modes,
            regularisers,
            root,
            root_value,
            topo,
        })
    }
}

/// Kahn's algorithm, always taking the smallest ready index. On a cycle
/// returns one vertex that could not be ordered.
fn kahn(parents: &[Vec<usize>], children: &[Vec<usize>]) -> std::result::Result<Vec<usize>, usize> {
    let n = parents.len();
    let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &c in &children[i] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() < n {
        Err((0..n)
            .find(|&i| indeg[i] > 0)
            .expect("some vertex left over"))
    } else {
        Ok(order)
    }
}

impl TransitionGraph {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[VertexId] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> VertexId {
        self.ids[i]
    }

    pub fn index_of(&self, id: VertexId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn role(&self, i: usize) -> Role {
        self.roles[i]
    }

    pub fn space(&self, i: usize) -> &StateSpaceDesc {
        &self.spaces[i]
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    /// Kernel of the transition into vertex `i` (none for the root).
    pub fn kernel(&self, i: usize) -> Option<&KernelSpec> {
        self.kernels[i].as_ref()
    }

    pub fn observation(&self, i: usize) -> Option<&Value> {
        self.observations[i].as_ref()
    }

    pub fn mode(&self, i: usize) -> &MultiParentMode {
        &self.modes[i]
    }

    pub fn regulariser(&self, i: usize) -> Option<&Regulariser> {
        self.regularisers[i].as_ref()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn root_value(&self) -> &Value {
        &self.root_value
    }

    /// Vertex indices with every parent before its children, root first.
    pub fn topological_indices(&self) -> &[usize] {
        &self.topo
    }

    pub fn topological_order(&self) -> Vec<VertexId> {
        self.topo.iter().map(|&i| self.ids[i]).collect()
    }

    /// Every non-root vertex after all of its children.
    pub fn reverse_topological_order(&self) -> Vec<VertexId> {
        self.topo
            .iter()
            .rev()
            .filter(|&&i| i != self.root)
            .map(|&i| self.ids[i])
            .collect()
    }

    /// Children of `s`, split into latent ones and leaves.
    pub fn children_partition(&self, s: VertexId) -> (Vec<VertexId>, Vec<VertexId>) {
        let Some(i) = self.index_of(s) else {
            return (Vec::new(), Vec::new());
        };
        let (leaves, latent): (Vec<usize>, Vec<usize>) = self.children[i]
            .iter()
            .partition(|&&c| self.roles[c] == Role::Leaf);
        (
            latent.into_iter().map(|c| self.ids[c]).collect(),
            leaves.into_iter().map(|c| self.ids[c]).collect(),
        )
    }

    /// Space of the joint input of the kernel into `i`.
    pub fn input_space(&self, i: usize) -> StateSpaceDesc {
        StateSpaceDesc::joint(
            &self.parents[i]
                .iter()
                .map(|&p| &self.spaces[p])
                .collect::<Vec<_>>(),
        )
    }

    pub fn latent_indices(&self) -> Vec<usize> {
        self.topo
            .iter()
            .copied()
            .filter(|&i| self.roles[i] == Role::Latent)
            .collect()
    }

    pub fn to_doc(&self) -> Result<GraphDoc> {
        let mut kernels = Vec::new();
        for &i in &self.topo {
            if let Some(k) = &self.kernels[i] {
                kernels.push(KernelEntry {
                    vertex: self.ids[i],
                    doc: k.to_doc()?,
                });
            }
        }
        let mut edges = Vec::new();
        for (c, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                edges.push([self.ids[p], self.ids[c]]);
            }
        }
        edges.sort();
        Ok(GraphDoc {
            vertices: (0..self.len())
                .map(|i| VertexSpec {
                    id: self.ids[i],
                    role: self.roles[i],
                    space: self.spaces[i].clone(),
                })
                .collect(),
            edges,
            kernels,
            observations: (0..self.len())
                .filter_map(|i| {
                    self.observations[i].clone().map(|value| ObservationEntry {
                        vertex: self.ids[i],
                        value,
                    })
                })
                .collect(),
            root: RootEntry {
                id: self.ids[self.root],
                value: self.root_value.clone(),
            },
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc()?)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<GraphDoc>(s)?.into_graph()
    }
}

/// JSON form of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub vertices: Vec<VertexSpec>,
    pub edges: Vec<[VertexId; 2]>,
    pub kernels: Vec<KernelEntry>,
    pub observations: Vec<ObservationEntry>,
    pub root: RootEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelEntry {
    pub vertex: VertexId,
    #[serde(flatten)]
    pub doc: KernelDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationEntry {
    pub vertex: VertexId,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootEntry {
    pub id: VertexId,
    pub value: Value,
}

impl GraphDoc {
    pub fn into_graph(self) -> Result<TransitionGraph> {
        if let Some(v) = self.vertices.iter().find(|v| v.role == Role::Root) {
            if v.id != self.root.id {
                return Err(Error::InvalidGraph(
                    "root entry disagrees with vertex roles".into(),
                ));
            }
        }
        build_graph(
            self.vertices,
            self.edges.into_iter().map(|[a, b]| (a, b)).collect(),
            self.kernels
                .into_iter()
                .map(|k| Ok((k.vertex, k.doc.into_spec()?)))
                .collect::<Result<_>>()?,
            self.observations
                .into_iter()
                .map(|o| (o.vertex, o.value))
                .collect(),
            self.root.value,
        )
    }
}
