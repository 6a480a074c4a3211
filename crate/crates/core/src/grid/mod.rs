//! Three-phase feeder topology, per-unit ingestion and admittance matrices.

mod admittance;
mod file;
mod tap;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use admittance::{build_admittance, build_isolated_admittance, AdmittanceMatrix};
pub use file::{BranchFile, BusFile, GridFile, SourceFile, TransformerFile};
pub use tap::{apply_tap, TapVector};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("grid json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid grid field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unknown bus `{0}`")]
    UnknownBus(String),
    #[error("duplicate branch between `{0}` and `{1}` on phase {2}")]
    DuplicateBranch(String, String, Phase),
    #[error("grid is not connected: bus `{0}` cannot be reached from the source")]
    Disconnected(String),
    #[error("transformer does not split the grid into two subsystems: {0}")]
    TransformerSplit(String),
    #[error("tap ratio must be finite and strictly positive, got {0}")]
    NonPositiveTap(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> GridError {
    GridError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

#[derive(Clone, Debug)]
pub struct Bus {
    pub id: String,
    /// Sorted, without duplicates.
    pub phases: Vec<Phase>,
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// Phases the series block acts on, in ascending order.
    pub phases: Vec<Phase>,
    /// Series admittance block in p.u., `phases.len()` square.
    pub admittance: DMatrix<Complex64>,
}

#[derive(Clone, Debug)]
pub struct Transformer {
    pub primary: usize,
    pub secondary: usize,
    pub tap_min: f64,
    pub tap_max: f64,
    pub tap_step: f64,
}

/// One row of the bus admittance matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodePhase {
    pub bus: usize,
    pub phase: Phase,
}

/// Row ordering of the bus admittance matrix.
///
/// Rows are laid out as `[source; subsystem 1; primary; secondary; subsystem 2]`,
/// buses in file order within each group and phases in `a, b, c` order.
/// The first three rows always belong to the source bus.
#[derive(Clone, Debug)]
pub struct NodeIndex {
    entries: Vec<NodePhase>,
    lookup: HashMap<(usize, Phase), usize>,
    sys1: Range<usize>,
    tf1: Range<usize>,
    tf2: Range<usize>,
    sys2: Range<usize>,
}

impl NodeIndex {
    /// Total rows, `N + 3`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Non-source node-phases, `N`.
    pub fn n(&self) -> usize {
        self.entries.len() - 3
    }

    pub fn entry(&self, row: usize) -> NodePhase {
        self.entries[row]
    }

    pub fn entries(&self) -> &[NodePhase] {
        &self.entries
    }

    pub fn row(&self, bus: usize, phase: Phase) -> Option<usize> {
        self.lookup.get(&(bus, phase)).copied()
    }

    pub fn source_rows(&self) -> Range<usize> {
        0..3
    }

    pub fn subsystem1_rows(&self) -> Range<usize> {
        self.sys1.clone()
    }

    pub fn primary_rows(&self) -> Range<usize> {
        self.tf1.clone()
    }

    pub fn secondary_rows(&self) -> Range<usize> {
        self.tf2.clone()
    }

    pub fn subsystem2_rows(&self) -> Range<usize> {
        self.sys2.clone()
    }

    pub fn is_transformer_row(&self, row: usize) -> bool {
        self.tf1.contains(&row) || self.tf2.contains(&row)
    }

    /// Subsystem of a row: 1 for the source side, 2 for the secondary side.
    pub fn subsystem(&self, row: usize) -> u8 {
        if row >= self.tf2.start && !self.tf2.is_empty() {
            2
        } else {
            1
        }
    }
}

/// Validated feeder model in per-unit.
#[derive(Clone, Debug)]
pub struct GridModel {
    pub base_mva: f64,
    pub base_kv: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub source: usize,
    pub v_source: [Complex64; 3],
    pub transformer: Option<Transformer>,
    index: NodeIndex,
}

impl GridModel {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, GridError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GridError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, GridError> {
        let file: GridFile = serde_json::from_str(text)?;
        Self::from_grid_file(&file)
    }

    pub fn from_grid_file(file: &GridFile) -> Result<Self, GridError> {
        file::convert(file)
    }

    pub fn index(&self) -> &NodeIndex {
        &self.index
    }

    /// Number of non-source node-phases.
    pub fn n(&self) -> usize {
        self.index.n()
    }

    pub fn bus_by_id(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn branch_between(&self, a: usize, b: usize) -> Option<usize> {
        self.branches
            .iter()
            .position(|br| (br.from == a && br.to == b) || (br.from == b && br.to == a))
    }

    /// Branch joins the transformer primary and secondary buses.
    pub fn is_transformer_branch(&self, branch: usize) -> bool {
        match &self.transformer {
            Some(t) => {
                let br = &self.branches[branch];
                (br.from == t.primary && br.to == t.secondary)
                    || (br.from == t.secondary && br.to == t.primary)
            }
            None => false,
        }
    }

    /// Human-readable label of a row, e.g. `"7.b"`.
    pub fn row_label(&self, row: usize) -> String {
        let np = self.index.entry(row);
        format!("{}.{}", self.buses[np.bus].id, np.phase)
    }

    pub(crate) fn assemble(
        base_mva: f64,
        base_kv: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        source: usize,
        v_source: [Complex64; 3],
        transformer: Option<Transformer>,
    ) -> Result<Self, GridError> {
        check_duplicates(&buses, &branches)?;
        let comp = components(&buses, &branches, transformer.as_ref(), true);
        if let Some(b) = (0..buses.len()).find(|&b| comp[b] != comp[source]) {
            return Err(GridError::Disconnected(buses[b].id.clone()));
        }
        if let Some(t) = &transformer {
            let split = components(&buses, &branches, Some(t), false);
            let labels: HashSet<usize> = split.iter().copied().collect();
            if labels.len() != 2 {
                return Err(GridError::TransformerSplit(format!(
                    "removing the transformer leaves {} components",
                    labels.len()
                )));
            }
            if split[t.primary] != split[source] {
                return Err(GridError::TransformerSplit(
                    "primary bus is not on the source side".into(),
                ));
            }
            if split[t.secondary] == split[source] {
                return Err(GridError::TransformerSplit(
                    "secondary bus is on the source side".into(),
                ));
            }
            let index = build_index(&buses, source, Some((t, &split)));
            return Ok(Self {
                base_mva,
                base_kv,
                buses,
                branches,
                source,
                v_source,
                transformer,
                index,
            });
        }
        let index = build_index(&buses, source, None);
        Ok(Self {
            base_mva,
            base_kv,
            buses,
            branches,
            source,
            v_source,
            transformer,
            index,
        })
    }
}

fn check_duplicates(buses: &[Bus], branches: &[Branch]) -> Result<(), GridError> {
    let mut seen = HashSet::new();
    for br in branches {
        let key = (br.from.min(br.to), br.from.max(br.to));
        for &p in &br.phases {
            if !seen.insert((key, p)) {
                return Err(GridError::DuplicateBranch(
                    buses[br.from].id.clone(),
                    buses[br.to].id.clone(),
                    p,
                ));
            }
        }
    }
    Ok(())
}

/// Component label per bus. With `through_transformer`, the transformer
/// couples its two buses; otherwise transformer branches are cut.
fn components(
    buses: &[Bus],
    branches: &[Branch],
    transformer: Option<&Transformer>,
    through_transformer: bool,
) -> Vec<usize> {
    let n = buses.len();
    let mut adj = vec![Vec::new(); n];
    let is_tf = |a: usize, b: usize| {
        transformer.is_some_and(|t| {
            (a == t.primary && b == t.secondary) || (a == t.secondary && b == t.primary)
        })
    };
    for br in branches {
        if !through_transformer && is_tf(br.from, br.to) {
            continue;
        }
        adj[br.from].push(br.to);
        adj[br.to].push(br.from);
    }
    if through_transformer {
        if let Some(t) = transformer {
            adj[t.primary].push(t.secondary);
            adj[t.secondary].push(t.primary);
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        label[start] = next;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if label[v] == usize::MAX {
                    label[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    label
}

fn build_index(
    buses: &[Bus],
    source: usize,
    transformer: Option<(&Transformer, &Vec<usize>)>,
) -> NodeIndex {
    let mut entries = Vec::new();
    let push_bus = |entries: &mut Vec<NodePhase>, b: usize| {
        for &phase in &buses[b].phases {
            entries.push(NodePhase { bus: b, phase });
        }
    };
    push_bus(&mut entries, source);
    let (sys1, tf1, tf2, sys2);
    match transformer {
        Some((t, split)) => {
            let side1 = split[source];
            let start = entries.len();
            for b in 0..buses.len() {
                if b != source && b != t.primary && split[b] == side1 {
                    push_bus(&mut entries, b);
                }
            }
            sys1 = start..entries.len();
            let start = entries.len();
            push_bus(&mut entries, t.primary);
            tf1 = start..entries.len();
            let start = entries.len();
            push_bus(&mut entries, t.secondary);
            tf2 = start..entries.len();
            let start = entries.len();
            for b in 0..buses.len() {
                if b != t.secondary && split[b] != side1 {
                    push_bus(&mut entries, b);
                }
            }
            sys2 = start..entries.len();
        }
        None => {
            let start = entries.len();
            for b in 0..buses.len() {
                if b != source {
                    push_bus(&mut entries, b);
                }
            }
            sys1 = start..entries.len();
            let end = entries.len();
            tf1 = end..end;
            tf2 = end..end;
            sys2 = end..end;
        }
    }
    let lookup = entries
        .iter()
        .enumerate()
        .map(|(i, np)| ((np.bus, np.phase), i))
        .collect();
    NodeIndex {
        entries,
        lookup,
        sys1,
        tf1,
        tf2,
        sys2,
    }
}
