//! Hierarchical / grouped structures and their aggregation matrices.
//!
//! A [`Hierarchy`] stores the aggregation matrix `C` row-compressed (one
//! sorted list of bottom indices per upper node), which is the only form
//! needed for summation and coherence checks. Dense copies of `C` and
//! `S = [C; I]` are materialized up front when the system is small enough
//! (see [`DENSE_LIMIT`]) and built on demand otherwise.
//!
//! Series order is always: upper levels top first (level order as given),
//! then the bottom series.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Systems with more series than this keep only the row-compressed form.
pub const DENSE_LIMIT: usize = 2_000;

/// Relative tolerance of the coherence test: `max|U'y| <= tol * (1 + max|y|)`.
pub const COHERENCE_TOL: f64 = 1e-8;

const DUP_SUFFIX: &str = "_dup";

/// User-facing description of a hierarchy: upper levels (top first), bottom
/// series, and parent -> child edges.
///
/// Grouped (non-tree) structures are entered as explicit levels; each level
/// must partition the bottom set once balanced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchySpec {
    pub levels: Vec<Vec<String>>,
    pub bottom: Vec<String>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
}

impl HierarchySpec {
    pub fn from_edges(
        levels: Vec<Vec<String>>,
        bottom: Vec<String>,
        edges: Vec<(String, String)>,
    ) -> Self {
        Self {
            levels,
            bottom,
            edges,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("hierarchy json: {e}")))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Reads a JSON spec, or the CSV alternative when the extension is `.csv`.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut text = String::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|e| Error::io(path, e))?;
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
        {
            Self::from_csv_reader(text.as_bytes())
        } else {
            Self::from_json_str(&text)
        }
    }

    /// CSV form: one row per bottom series, one column per upper level giving
    /// the ancestor at that level (top first), bottom id in the last column.
    /// An empty cell means the series has no ancestor at that level.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::Parse(format!("hierarchy csv header: {e}")))?
            .clone();
        if header.len() < 2 {
            return Err(Error::Parse(
                "hierarchy csv needs at least one level column and a bottom column".into(),
            ));
        }
        let n_levels = header.len() - 1;
        let mut levels: Vec<Vec<String>> = vec![Vec::new(); n_levels];
        let mut seen: Vec<HashSet<String>> = vec![HashSet::new(); n_levels];
        let mut bottom = Vec::new();
        let mut edges = Vec::new();
        let mut edge_set = HashSet::new();
        for (row_no, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(format!("hierarchy csv row {}: {e}", row_no + 2)))?;
            if rec.len() != header.len() {
                return Err(Error::Parse(format!(
                    "hierarchy csv row {} has {} fields, expected {}",
                    row_no + 2,
                    rec.len(),
                    header.len()
                )));
            }
            let b = rec[n_levels].to_string();
            if b.is_empty() {
                return Err(Error::Parse(format!("hierarchy csv row {}: empty bottom id", row_no + 2)));
            }
            bottom.push(b.clone());
            for (l, level) in levels.iter_mut().enumerate() {
                let a = &rec[l];
                if a.is_empty() {
                    continue;
                }
                if seen[l].insert(a.to_string()) {
                    level.push(a.to_string());
                }
                if edge_set.insert((a.to_string(), b.clone())) {
                    edges.push((a.to_string(), b.clone()));
                }
            }
        }
        // The total reaches every upper node directly; memberships come from
        // the ancestor -> bottom edges, so grouped levels need not nest.
        if let Some(total) = levels.first().and_then(|l| l.first()).cloned() {
            let mut extra = Vec::new();
            for level in levels.iter().skip(1) {
                for id in level {
                    extra.push((total.clone(), id.clone()));
                }
            }
            extra.extend(edges);
            edges = extra;
        }
        Ok(Self {
            levels,
            bottom,
            edges,
        })
    }
}

/// One upper node together with the bottom series it aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementaryHierarchy {
    pub parent_id: String,
    pub bottom_indices: Vec<usize>,
    pub local_sum_row: Vec<f64>,
}

/// A pair of series carrying the same data: `copy` has exactly the bottom
/// membership of `original`. `synthetic` marks nodes created by balancing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Duplicate {
    pub original: String,
    pub copy: String,
    pub synthetic: bool,
}

/// Evaluation group of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Upper,
    Bottom,
    /// Same data as another series; excluded from accuracy aggregation.
    Duplicate,
}

#[derive(Debug, Clone)]
struct Dense {
    c: DMatrix<f64>,
    s: DMatrix<f64>,
}

/// A validated, balanced hierarchy with its aggregation structure.
///
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    spec: HierarchySpec,
    upper_ids: Vec<String>,
    level_starts: Vec<usize>,
    members: Vec<Vec<usize>>,
    duplicates: Vec<Duplicate>,
    kinds: Vec<SeriesKind>,
    index: HashMap<String, usize>,
    dense: Option<Dense>,
}

/// Builds a hierarchy from a spec that is already balanced.
///
/// Fails with [`Error::Unbalanced`] if some upper node has no bottom
/// descendants or some level does not cover every bottom series; use
/// [`balance`] for such inputs.
pub fn build_hierarchy(spec: &HierarchySpec) -> Result<Hierarchy> {
    let graph = Graph::new(spec)?;
    graph.check_reachable()?;
    let members = graph.memberships()?;
    for (i, m) in members.iter().enumerate() {
        if m.is_empty() {
            return Err(Error::Unbalanced(format!(
                "upper node '{}' has no bottom descendants",
                graph.upper_ids[i]
            )));
        }
    }
    check_levels(spec, &members, &graph.upper_ids, false)?;
    Ok(Hierarchy::assemble(spec.clone(), graph.upper_ids, members, &HashSet::new()))
}

/// Balances a spec by duplicating childless nodes downward (and filling
/// levels that skip a bottom series), then builds the hierarchy.
///
/// Synthetic nodes are named `<id>_dup` (with further `_dup` suffixes on
/// collision) and listed in [`Hierarchy::duplication_map`].
pub fn balance(spec: &HierarchySpec) -> Result<Hierarchy> {
    let graph = Graph::new(spec)?;
    graph.check_reachable()?;
    let mut spec = spec.clone();
    let mut taken: HashSet<String> = spec
        .levels
        .iter()
        .flatten()
        .chain(spec.bottom.iter())
        .cloned()
        .collect();
    let mut synthetic: HashSet<String> = HashSet::new();
    let fresh = |base: &str, taken: &mut HashSet<String>| {
        let mut name = format!("{base}{DUP_SUFFIX}");
        while taken.contains(&name) {
            name.push_str(DUP_SUFFIX);
        }
        taken.insert(name.clone());
        name
    };

    // Childless upper nodes: copy them down to the bottom level.
    let parents: HashSet<String> = spec.edges.iter().map(|(p, _)| p.clone()).collect();
    let n_levels = spec.levels.len();
    let original = spec.levels.clone();
    for (l, level_ids) in original.into_iter().enumerate() {
        for id in level_ids {
            if !parents.contains(&id) {
                let mut parent = id.clone();
                for lower in spec.levels.iter_mut().skip(l + 1) {
                    let copy = fresh(&id, &mut taken);
                    lower.push(copy.clone());
                    spec.edges.push((parent, copy.clone()));
                    synthetic.insert(copy.clone());
                    parent = copy;
                }
                let copy = fresh(&id, &mut taken);
                spec.bottom.push(copy.clone());
                spec.edges.push((parent, copy.clone()));
                synthetic.insert(copy);
            }
        }
    }

    // Levels that skip some bottom series get a copy of that series.
    let graph = Graph::new(&spec)?;
    let members = graph.memberships()?;
    let total = spec.levels[0][0].clone();
    let mut offset = spec.levels[0].len();
    for l in 1..n_levels {
        let width = spec.levels[l].len();
        let mut covered = vec![false; spec.bottom.len()];
        for m in &members[offset..offset + width] {
            for &b in m {
                covered[b] = true;
            }
        }
        for (b, is_covered) in covered.iter().enumerate() {
            if !is_covered {
                let bid = spec.bottom[b].clone();
                let copy = fresh(&bid, &mut taken);
                spec.levels[l].push(copy.clone());
                spec.edges.push((total.clone(), copy.clone()));
                spec.edges.push((copy.clone(), bid));
                synthetic.insert(copy);
            }
        }
        offset += width;
    }

    let graph = Graph::new(&spec)?;
    graph.check_reachable()?;
    let members = graph.memberships()?;
    check_levels(&spec, &members, &graph.upper_ids, true)?;
    Ok(Hierarchy::assemble(spec, graph.upper_ids, members, &synthetic))
}

fn check_levels(
    spec: &HierarchySpec,
    members: &[Vec<usize>],
    upper_ids: &[String],
    balanced: bool,
) -> Result<()> {
    let n_b = spec.bottom.len();
    let mut offset = 0;
    for (l, level) in spec.levels.iter().enumerate() {
        let mut owner: Vec<Option<usize>> = vec![None; n_b];
        for i in offset..offset + level.len() {
            for &b in &members[i] {
                if let Some(prev) = owner[b] {
                    return Err(Error::InvalidHierarchy(format!(
                        "level {} does not partition the bottom set: '{}' belongs to both '{}' and '{}'",
                        l + 1,
                        spec.bottom[b],
                        upper_ids[prev],
                        upper_ids[i]
                    )));
                }
                owner[b] = Some(i);
            }
        }
        if let Some(b) = owner.iter().position(Option::is_none) {
            let msg = format!(
                "level {} does not cover bottom series '{}'",
                l + 1,
                spec.bottom[b]
            );
            return Err(if balanced {
                Error::InvalidHierarchy(msg)
            } else {
                Error::Unbalanced(msg)
            });
        }
        offset += level.len();
    }
    Ok(())
}

/// Node graph used during validation.
struct Graph {
    upper_ids: Vec<String>,
    n_b: usize,
    index: HashMap<String, usize>,
    children: Vec<Vec<usize>>,
}

impl Graph {
    fn new(spec: &HierarchySpec) -> Result<Self> {
        if spec.levels.is_empty() {
            return Err(Error::InvalidHierarchy("no upper levels".into()));
        }
        if let Some(l) = spec.levels.iter().position(Vec::is_empty) {
            return Err(Error::InvalidHierarchy(format!("level {} is empty", l + 1)));
        }
        if spec.levels[0].len() != 1 {
            return Err(Error::InvalidHierarchy(format!(
                "level 1 must contain exactly one node, found {}",
                spec.levels[0].len()
            )));
        }
        if spec.bottom.is_empty() {
            return Err(Error::InvalidHierarchy("no bottom series".into()));
        }
        let upper_ids: Vec<String> = spec.levels.iter().flatten().cloned().collect();
        let n_a = upper_ids.len();
        let mut index = HashMap::new();
        let mut level_of = Vec::new();
        for (l, level) in spec.levels.iter().enumerate() {
            for id in level {
                if index.insert(id.clone(), index.len()).is_some() {
                    return Err(Error::InvalidHierarchy(format!("duplicate node label '{id}'")));
                }
                level_of.push(l);
            }
        }
        for id in &spec.bottom {
            if index.contains_key(id) {
                let msg = if index[id] < n_a {
                    format!("'{id}' is listed both as an upper node and as a bottom series")
                } else {
                    format!("duplicate bottom label '{id}'")
                };
                return Err(Error::InvalidHierarchy(msg));
            }
            index.insert(id.clone(), index.len());
            level_of.push(spec.levels.len());
        }
        let n = index.len();
        let mut children = vec![Vec::new(); n];
        for (p, c) in &spec.edges {
            let pi = *index
                .get(p)
                .ok_or_else(|| Error::InvalidHierarchy(format!("edge parent '{p}' is not a node")))?;
            let ci = *index
                .get(c)
                .ok_or_else(|| Error::InvalidHierarchy(format!("edge child '{c}' is not a node")))?;
            if pi >= n_a {
                return Err(Error::InvalidHierarchy(format!(
                    "bottom series '{p}' cannot have children"
                )));
            }
            if !children[pi].contains(&ci) {
                children[pi].push(ci);
            }
        }
        let graph = Self {
            upper_ids,
            n_b: spec.bottom.len(),
            index,
            children,
        };
        graph.check_acyclic()?;
        for (p, c) in &spec.edges {
            let (pi, ci) = (graph.index[p], graph.index[c]);
            if level_of[pi] >= level_of[ci] {
                return Err(Error::InvalidHierarchy(format!(
                    "edge '{p}' -> '{c}' does not point to a lower level"
                )));
            }
        }
        Ok(graph)
    }

    fn n_a(&self) -> usize {
        self.upper_ids.len()
    }

    fn name(&self, i: usize) -> String {
        self.index
            .iter()
            .find(|(_, &v)| v == i)
            .map(|(k, _)| k.clone())
            .unwrap_or_default()
    }

    fn check_acyclic(&self) -> Result<()> {
        // 0 = unvisited, 1 = on stack, 2 = done
        let n = self.children.len();
        let mut state = vec![0u8; n];
        for root in 0..n {
            if state[root] != 0 {
                continue;
            }
            let mut stack = vec![(root, 0usize)];
            state[root] = 1;
            while let Some(&mut (node, ref mut next)) = stack.last_mut() {
                if *next < self.children[node].len() {
                    let child = self.children[node][*next];
                    *next += 1;
                    match state[child] {
                        0 => {
                            state[child] = 1;
                            stack.push((child, 0));
                        }
                        1 => return Err(Error::Cycle(self.name(child))),
                        _ => {}
                    }
                } else {
                    state[node] = 2;
                    stack.pop();
                }
            }
        }
        Ok(())
    }

    fn check_reachable(&self) -> Result<()> {
        let n = self.children.len();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &c in &self.children[v] {
                if !seen[c] {
                    seen[c] = true;
                    queue.push_back(c);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(Error::Unreachable(self.name(i))),
            None => Ok(()),
        }
    }

    /// Sorted bottom descendants of every upper node. The total always
    /// aggregates every bottom series.
    fn memberships(&self) -> Result<Vec<Vec<usize>>> {
        let n_a = self.n_a();
        let mut memo: Vec<Option<Vec<usize>>> = vec![None; n_a];
        // Upper nodes only point downwards, so visiting them in reverse
        // series order finishes children before parents.
        for i in (0..n_a).rev() {
            let mut acc: Vec<usize> = Vec::new();
            for &c in &self.children[i] {
                if c >= n_a {
                    acc.push(c - n_a);
                } else {
                    let m = memo[c].as_ref().ok_or_else(|| {
                        Error::InvalidHierarchy(format!(
                            "edge '{}' -> '{}' does not point to a lower level",
                            self.upper_ids[i], self.upper_ids[c]
                        ))
                    })?;
                    acc.extend_from_slice(m);
                }
            }
            acc.sort_unstable();
            acc.dedup();
            memo[i] = Some(acc);
        }
        let mut out: Vec<Vec<usize>> = memo.into_iter().map(Option::unwrap_or_default).collect();
        out[0] = (0..self.n_b).collect();
        Ok(out)
    }
}

impl Hierarchy {
    fn assemble(
        spec: HierarchySpec,
        upper_ids: Vec<String>,
        members: Vec<Vec<usize>>,
        synthetic: &HashSet<String>,
    ) -> Self {
        let n_a = upper_ids.len();
        let n_b = spec.bottom.len();
        let mut level_starts = Vec::with_capacity(spec.levels.len() + 1);
        let mut acc = 0;
        for level in &spec.levels {
            level_starts.push(acc);
            acc += level.len();
        }
        level_starts.push(acc);

        let mut index = HashMap::new();
        for (i, id) in upper_ids.iter().chain(spec.bottom.iter()).enumerate() {
            index.insert(id.clone(), i);
        }

        // Group every series by its bottom membership.
        let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
        for (i, m) in members.iter().enumerate() {
            groups.entry(m.clone()).or_default().push(i);
        }
        for b in 0..n_b {
            if let Some(g) = groups.get_mut(&vec![b]) {
                g.push(n_a + b);
            }
        }
        let name = |i: usize| -> &str {
            if i < n_a {
                &upper_ids[i]
            } else {
                &spec.bottom[i - n_a]
            }
        };
        let mut kinds: Vec<SeriesKind> = (0..n_a + n_b)
            .map(|i| if i < n_a { SeriesKind::Upper } else { SeriesKind::Bottom })
            .collect();
        let mut duplicates = Vec::new();
        for group in groups.values().filter(|g| g.len() > 1) {
            let mut sorted = group.clone();
            sorted.sort_unstable();
            let keep = *sorted.iter().find(|&&i| i >= n_a).unwrap_or(&sorted[0]);
            for &i in &sorted {
                if i != keep {
                    kinds[i] = SeriesKind::Duplicate;
                }
            }
            for &i in &sorted[1..] {
                duplicates.push(Duplicate {
                    original: name(sorted[0]).to_string(),
                    copy: name(i).to_string(),
                    synthetic: synthetic.contains(name(i)),
                });
            }
        }

        let dense = (n_a + n_b <= DENSE_LIMIT).then(|| {
            let c = dense_rows(&members, n_b);
            let s = stack_identity(&c);
            Dense { c, s }
        });

        Self {
            spec,
            upper_ids,
            level_starts,
            members,
            duplicates,
            kinds,
            index,
            dense,
        }
    }

    pub fn spec(&self) -> &HierarchySpec {
        &self.spec
    }

    /// Number of upper levels `L`.
    pub fn num_levels(&self) -> usize {
        self.level_starts.len() - 1
    }

    pub fn n(&self) -> usize {
        self.n_a() + self.n_b()
    }

    pub fn n_a(&self) -> usize {
        self.upper_ids.len()
    }

    pub fn n_b(&self) -> usize {
        self.spec.bottom.len()
    }

    pub fn level_size(&self, l: usize) -> Result<usize> {
        Ok(self.level_range(l)?.len())
    }

    /// Upper-series indices of level `l` (1-based level).
    pub fn level_range(&self, l: usize) -> Result<std::ops::Range<usize>> {
        self.check_level(l)?;
        Ok(self.level_starts[l - 1]..self.level_starts[l])
    }

    fn check_level(&self, l: usize) -> Result<()> {
        if l == 0 || l > self.num_levels() {
            return Err(Error::LevelOutOfRange {
                level: l,
                levels: self.num_levels(),
            });
        }
        Ok(())
    }

    pub fn upper_ids(&self) -> &[String] {
        &self.upper_ids
    }

    pub fn bottom_ids(&self) -> &[String] {
        &self.spec.bottom
    }

    /// All series ids in hierarchy order.
    pub fn series_ids(&self) -> Vec<&str> {
        self.upper_ids
            .iter()
            .chain(self.spec.bottom.iter())
            .map(String::as_str)
            .collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Level of series `i` (1-based); bottoms report `L + 1`.
    pub fn level_of(&self, i: usize) -> usize {
        if i >= self.n_a() {
            return self.num_levels() + 1;
        }
        self.level_starts.partition_point(|&s| s <= i)
    }

    /// Row-compressed `C`: sorted bottom indices of each upper node.
    pub fn memberships(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn duplication_map(&self) -> &[Duplicate] {
        &self.duplicates
    }

    pub fn series_kinds(&self) -> &[SeriesKind] {
        &self.kinds
    }

    /// Number of series that are not flagged as duplicates.
    pub fn n_unique(&self) -> usize {
        self.kinds
            .iter()
            .filter(|k| **k != SeriesKind::Duplicate)
            .count()
    }

    /// Dense aggregation matrix `C` (n_a x n_b).
    pub fn c_matrix(&self) -> Cow<'_, DMatrix<f64>> {
        match &self.dense {
            Some(d) => Cow::Borrowed(&d.c),
            None => Cow::Owned(dense_rows(&self.members, self.n_b())),
        }
    }

    /// Dense summing matrix `S = [C; I]` (n x n_b).
    pub fn s_matrix(&self) -> Cow<'_, DMatrix<f64>> {
        match &self.dense {
            Some(d) => Cow::Borrowed(&d.s),
            None => Cow::Owned(stack_identity(&dense_rows(&self.members, self.n_b()))),
        }
    }

    /// Dense `C_l` (n_l x n_b).
    pub fn level_matrix(&self, l: usize) -> Result<DMatrix<f64>> {
        let range = self.level_range(l)?;
        Ok(dense_rows(&self.members[range], self.n_b()))
    }

    /// Dense `U = [I_{n_a} | -C]`, the homogeneous constraints of the full system.
    pub fn constraint_matrix(&self) -> DMatrix<f64> {
        let (n_a, n_b) = (self.n_a(), self.n_b());
        let mut u = DMatrix::zeros(n_a, n_a + n_b);
        for (r, m) in self.members.iter().enumerate() {
            u[(r, r)] = 1.0;
            for &b in m {
                u[(r, n_a + b)] = -1.0;
            }
        }
        u
    }

    /// Dense `U_l = [I_{n_l} | -C_l]` for the level-`l` subsystem.
    pub fn level_constraint_matrix(&self, l: usize) -> Result<DMatrix<f64>> {
        let range = self.level_range(l)?;
        let n_l = range.len();
        let mut u = DMatrix::zeros(n_l, n_l + self.n_b());
        for (r, m) in self.members[range].iter().enumerate() {
            u[(r, r)] = 1.0;
            for &b in m {
                u[(r, n_l + b)] = -1.0;
            }
        }
        Ok(u)
    }

    pub fn elementary_hierarchies(&self, l: usize) -> Result<Vec<ElementaryHierarchy>> {
        let range = self.level_range(l)?;
        Ok(range
            .map(|i| ElementaryHierarchy {
                parent_id: self.upper_ids[i].clone(),
                bottom_indices: self.members[i].clone(),
                local_sum_row: vec![1.0; self.members[i].len()],
            })
            .collect())
    }

    /// `S b`: the full coherent vector implied by bottom values.
    pub fn aggregate(&self, bottom: &[f64]) -> Vec<f64> {
        assert_eq!(bottom.len(), self.n_b(), "bottom vector length");
        let mut y: Vec<f64> = self
            .members
            .iter()
            .map(|m| m.iter().map(|&b| bottom[b]).sum())
            .collect();
        y.extend_from_slice(bottom);
        y
    }

    /// `C_l b`.
    pub fn level_aggregate(&self, l: usize, bottom: &[f64]) -> Result<Vec<f64>> {
        if bottom.len() != self.n_b() {
            return Err(Error::Dimension(format!(
                "bottom vector has length {}, expected {}",
                bottom.len(),
                self.n_b()
            )));
        }
        let range = self.level_range(l)?;
        Ok(self.members[range]
            .iter()
            .map(|m| m.iter().map(|&b| bottom[b]).sum())
            .collect())
    }

    /// `max |U'y|`, the largest violation of an aggregation identity.
    pub fn coherence_residual(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.n() {
            return Err(Error::Dimension(format!(
                "vector has length {}, hierarchy has {} series",
                y.len(),
                self.n()
            )));
        }
        let n_a = self.n_a();
        Ok(self
            .members
            .iter()
            .enumerate()
            .map(|(r, m)| (y[r] - m.iter().map(|&b| y[n_a + b]).sum::<f64>()).abs())
            .fold(0.0, f64::max))
    }

    /// Coherence test at [`COHERENCE_TOL`], relative to the scale of `y`.
    pub fn is_coherent(&self, y: &[f64]) -> Result<bool> {
        let res = self.coherence_residual(y)?;
        let scale = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Ok(res <= COHERENCE_TOL * (1.0 + scale))
    }
}

fn dense_rows(rows: &[Vec<usize>], n_b: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(rows.len(), n_b);
    for (r, m) in rows.iter().enumerate() {
        for &b in m {
            c[(r, b)] = 1.0;
        }
    }
    c
}

fn stack_identity(c: &DMatrix<f64>) -> DMatrix<f64> {
    let (n_a, n_b) = c.shape();
    let mut s = DMatrix::zeros(n_a + n_b, n_b);
    s.rows_mut(0, n_a).copy_from(c);
    s.rows_mut(n_a, n_b).fill_with_identity();
    s
}

/// Convenience: `S b` as an nalgebra vector.
pub fn sum_bottom(h: &Hierarchy, bottom: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(h.aggregate(bottom.as_slice()))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    pub fn e(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    /// T; X, Y; A..E with X = A + B and Y = C + D + E.
    pub fn fig1_spec() -> HierarchySpec {
        HierarchySpec::from_edges(
            vec![s(&["T"]), s(&["X", "Y"])],
            s(&["A", "B", "C", "D", "E"]),
            e(&[
                ("T", "X"),
                ("T", "Y"),
                ("X", "A"),
                ("X", "B"),
                ("Y", "C"),
                ("Y", "D"),
                ("Y", "E"),
            ]),
        )
    }

    pub fn fig1() -> Hierarchy {
        build_hierarchy(&fig1_spec()).unwrap()
    }

    /// Tot; A, B, C; AA, AB, BA, BB with C childless.
    pub fn fig2_left() -> HierarchySpec {
        HierarchySpec::from_edges(
            vec![s(&["Tot"]), s(&["A", "B", "C"])],
            s(&["AA", "AB", "BA", "BB"]),
            e(&[
                ("Tot", "A"),
                ("Tot", "B"),
                ("Tot", "C"),
                ("A", "AA"),
                ("A", "AB"),
                ("B", "BA"),
                ("B", "BB"),
            ]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|r| m.row(r).iter().copied().collect())
            .collect()
    }

    #[test]
    fn fig1_aggregation_matrix() {
        let h = fig1();
        assert_eq!(h.n(), 8);
        assert_eq!(h.n_a(), 3);
        assert_eq!(
            rows(&h.c_matrix()),
            vec![
                vec![1., 1., 1., 1., 1.],
                vec![1., 1., 0., 0., 0.],
                vec![0., 0., 1., 1., 1.]
            ]
        );
        let s = h.s_matrix();
        assert_eq!(s.shape(), (8, 5));
        assert_eq!(s.rows(3, 5).into_owned(), DMatrix::identity(5, 5));
        assert!(h.duplication_map().is_empty());
    }

    #[test]
    fn elementary_hierarchy_single_level() {
        let spec = HierarchySpec::from_edges(
            vec![s(&["T"])],
            s(&["A", "B"]),
            e(&[("T", "A"), ("T", "B")]),
        );
        let h = build_hierarchy(&spec).unwrap();
        assert_eq!(rows(&h.c_matrix()), vec![vec![1., 1.]]);
        assert_eq!(
            rows(&h.s_matrix()),
            vec![vec![1., 1.], vec![1., 0.], vec![0., 1.]]
        );
    }

    #[test]
    fn label_collision_is_rejected() {
        let spec = HierarchySpec::from_edges(
            vec![s(&["T"]), s(&["A"])],
            s(&["A", "B"]),
            e(&[("T", "A"), ("T", "B")]),
        );
        let err = build_hierarchy(&spec).unwrap_err();
        assert!(matches!(err, Error::InvalidHierarchy(ref m) if m.contains("'A'")), "{err}");
    }

    #[test]
    fn cycles_and_empty_levels_are_rejected() {
        let spec = HierarchySpec::from_edges(
            vec![s(&["T"]), s(&["X", "Y"])],
            s(&["A"]),
            e(&[("T", "X"), ("X", "Y"), ("Y", "X"), ("Y", "A")]),
        );
        assert!(matches!(build_hierarchy(&spec), Err(Error::Cycle(_))));
        let spec = HierarchySpec::from_edges(vec![s(&["T"]), vec![]], s(&["A"]), e(&[("T", "A")]));
        assert!(matches!(build_hierarchy(&spec), Err(Error::InvalidHierarchy(_))));
    }

    #[test]
    fn level_matrices() {
        let h = fig1();
        assert_eq!(
            rows(&h.level_matrix(2).unwrap()),
            vec![vec![1., 1., 0., 0., 0.], vec![0., 0., 1., 1., 1.]]
        );
        assert_eq!(rows(&h.level_matrix(1).unwrap()), vec![vec![1.; 5]]);
        assert!(matches!(
            h.level_matrix(3),
            Err(Error::LevelOutOfRange { level: 3, levels: 2 })
        ));
        assert!(h.level_matrix(0).is_err());
        // stacking the level matrices gives C
        let mut stacked = h.level_matrix(1).unwrap();
        stacked = stacked.insert_rows(1, 2, 0.0);
        stacked.rows_mut(1, 2).copy_from(&h.level_matrix(2).unwrap());
        assert_eq!(stacked, *h.c_matrix());
    }

    #[test]
    fn elementary_hierarchies_fig1_and_fig2() {
        let h = fig1();
        let eh = h.elementary_hierarchies(2).unwrap();
        assert_eq!(eh.len(), 2);
        assert_eq!((eh[0].parent_id.as_str(), eh[0].bottom_indices.clone()), ("X", vec![0, 1]));
        assert_eq!((eh[1].parent_id.as_str(), eh[1].bottom_indices.clone()), ("Y", vec![2, 3, 4]));
        assert_eq!(h.elementary_hierarchies(1).unwrap()[0].bottom_indices, vec![0, 1, 2, 3, 4]);

        let hb = balance(&fig2_left()).unwrap();
        let eh = hb.elementary_hierarchies(2).unwrap();
        let got: Vec<(String, Vec<usize>)> =
            eh.into_iter().map(|e| (e.parent_id, e.bottom_indices)).collect();
        assert_eq!(
            got,
            vec![
                ("A".to_string(), vec![0, 1]),
                ("B".to_string(), vec![2, 3]),
                ("C".to_string(), vec![4]),
            ]
        );
    }

    #[test]
    fn balance_fig2() {
        assert!(matches!(build_hierarchy(&fig2_left()), Err(Error::Unbalanced(_))));
        let h = balance(&fig2_left()).unwrap();
        assert_eq!(h.bottom_ids(), &s(&["AA", "AB", "BA", "BB", "C_dup"])[..]);
        assert_eq!(
            h.duplication_map(),
            &[Duplicate {
                original: "C".into(),
                copy: "C_dup".into(),
                synthetic: true
            }]
        );
        // the upper copy is the one excluded from evaluation
        let c = h.index_of("C").unwrap();
        assert_eq!(h.series_kinds()[c], SeriesKind::Duplicate);
        assert_eq!(h.series_kinds()[h.index_of("C_dup").unwrap()], SeriesKind::Bottom);
    }

    #[test]
    fn balance_several_childless_nodes() {
        let spec = HierarchySpec::from_edges(
            vec![s(&["T"]), s(&["A", "B"]), s(&["A1", "B1", "B2"])],
            s(&["x", "y"]),
            e(&[
                ("T", "A"),
                ("T", "B"),
                ("A", "A1"),
                ("B", "B1"),
                ("B", "B2"),
                ("A1", "x"),
                ("A1", "y"),
            ]),
        );
        let h = balance(&spec).unwrap();
        assert_eq!(h.bottom_ids(), &s(&["x", "y", "B1_dup", "B2_dup"])[..]);
        assert_eq!(balance(h.spec()).unwrap().bottom_ids(), h.bottom_ids());
    }

    #[test]
    fn balance_bottom_skipping_a_level() {
        // C hangs directly off the total.
        let spec = HierarchySpec::from_edges(
            vec![s(&["Tot"]), s(&["A", "B"])],
            s(&["AA", "AB", "BA", "BB", "C"]),
            e(&[
                ("Tot", "A"),
                ("Tot", "B"),
                ("Tot", "C"),
                ("A", "AA"),
                ("A", "AB"),
                ("B", "BA"),
                ("B", "BB"),
            ]),
        );
        assert!(matches!(build_hierarchy(&spec), Err(Error::Unbalanced(_))));
        let h = balance(&spec).unwrap();
        assert_eq!(h.upper_ids(), &s(&["Tot", "A", "B", "C_dup"])[..]);
        assert_eq!(h.duplication_map().len(), 1);
    }

    #[test]
    fn balance_is_noop_on_balanced_and_idempotent() {
        let a = fig1();
        let b = balance(&fig1_spec()).unwrap();
        assert_eq!(*a.c_matrix(), *b.c_matrix());
        assert!(b.duplication_map().is_empty());

        let once = balance(&fig2_left()).unwrap();
        let twice = balance(once.spec()).unwrap();
        assert_eq!(*once.s_matrix(), *twice.s_matrix());
        assert_eq!(once.series_ids(), twice.series_ids());
    }

    #[test]
    fn unreachable_node_is_rejected() {
        let spec = HierarchySpec::from_edges(
            vec![s(&["T"]), s(&["X", "Z"])],
            s(&["A", "B"]),
            e(&[("T", "X"), ("X", "A"), ("X", "B")]),
        );
        assert!(matches!(balance(&spec), Err(Error::Unreachable(ref id)) if id == "Z"));
    }

    #[test]
    fn coherence_residual_values() {
        let h = fig1();
        let b = [0.3, -1.0, 2.5, 4.0, 7.25];
        let y = h.aggregate(&b);
        assert!(h.coherence_residual(&y).unwrap() <= 1e-9);
        assert!(h.is_coherent(&y).unwrap());
        // X=4, Y=5 consistent with bottoms, T=10 violates by 1
        let y = [10.0, 4.0, 5.0, 2.0, 2.0, 1.0, 2.0, 2.0];
        assert_eq!(h.coherence_residual(&y).unwrap(), 1.0);
        assert_eq!(h.coherence_residual(&[0.0; 8]).unwrap(), 0.0);
        assert!(matches!(h.coherence_residual(&[0.0; 7]), Err(Error::Dimension(_))));
    }

    #[test]
    fn vn_style_single_region_zones() {
        // 7 states, 27 zones, 76 regions; six zones hold a single region.
        let mut levels = vec![s(&["Aus"]), Vec::new(), Vec::new()];
        let mut bottom = Vec::new();
        let mut edges = Vec::new();
        let zones_per_state = [4, 4, 4, 4, 4, 4, 3];
        let mut zone_no = 0;
        let mut region_no = 0;
        for (st, &nz) in zones_per_state.iter().enumerate() {
            let state = format!("S{st}");
            levels[1].push(state.clone());
            edges.push(("Aus".to_string(), state.clone()));
            for _ in 0..nz {
                let zone = format!("Z{zone_no}");
                levels[2].push(zone.clone());
                edges.push((state.clone(), zone.clone()));
                let nr = if zone_no < 6 {
                    1
                } else if zone_no < 13 {
                    4
                } else {
                    3
                };
                for _ in 0..nr {
                    let region = format!("R{region_no}");
                    bottom.push(region.clone());
                    edges.push((zone.clone(), region));
                    region_no += 1;
                }
                zone_no += 1;
            }
        }
        assert_eq!((zone_no, region_no), (27, 76));
        let h = balance(&HierarchySpec::from_edges(levels, bottom, edges)).unwrap();
        assert_eq!(h.n(), 111);
        assert_eq!(h.duplication_map().len(), 6);
        assert!(h.duplication_map().iter().all(|d| !d.synthetic));
        assert_eq!(h.n_unique(), 105);
    }

    #[test]
    fn csv_spec_matches_json_spec() {
        let csv = "L1,L2,bottom\nT,X,A\nT,X,B\nT,Y,C\nT,Y,D\nT,Y,E\n";
        let spec = HierarchySpec::from_csv_reader(csv.as_bytes()).unwrap();
        let h = build_hierarchy(&spec).unwrap();
        assert_eq!(*h.c_matrix(), *fig1().c_matrix());
        let json = fig1_spec().to_json_string();
        let back = HierarchySpec::from_json_str(&json).unwrap();
        assert_eq!(back, fig1_spec());
    }

    #[test]
    fn grouped_levels_must_partition() {
        // Two crossing classifications entered as explicit levels.
        let spec = HierarchySpec::from_edges(
            vec![s(&["T"]), s(&["G1", "G2"]), s(&["H1", "H2"])],
            s(&["a", "b", "c", "d"]),
            e(&[
                ("T", "G1"),
                ("T", "G2"),
                ("T", "H1"),
                ("T", "H2"),
                ("G1", "a"),
                ("G1", "b"),
                ("G2", "c"),
                ("G2", "d"),
                ("H1", "a"),
                ("H1", "c"),
                ("H2", "b"),
                ("H2", "d"),
            ]),
        );
        let h = build_hierarchy(&spec).unwrap();
        assert_eq!(h.level_matrix(3).unwrap().row(0).iter().copied().collect::<Vec<_>>(), vec![1., 0., 1., 0.]);
        let mut bad = spec.clone();
        bad.edges.push(("H2".into(), "a".into()));
        assert!(matches!(build_hierarchy(&bad), Err(Error::InvalidHierarchy(_))));
    }

    #[test]
    fn level_of_and_kinds() {
        let h = fig1();
        assert_eq!(h.level_of(0), 1);
        assert_eq!(h.level_of(2), 2);
        assert_eq!(h.level_of(3), 3);
        assert_eq!(h.n_unique(), 8);
    }
}
