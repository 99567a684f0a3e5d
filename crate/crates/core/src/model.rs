//! Pairwise binary models, the Hamming-shell constraint and shell states.
//!
//! States are stored as `{0,1}` bits (`bool`) and the energy is evaluated in
//! the ±1 convention `s = 2x - 1`:
//!
//! `E(s) = -sum_(i,j) J_ij s_i s_j - sum_i h_i s_i`
//!
//! All indices are 0-based, including in the model file format.

use std::collections::HashSet;
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Flips between full-energy audits when auditing is enabled.
pub const AUDIT_INTERVAL: u64 = 1 << 14;

#[inline]
pub(crate) fn spin(bit: bool) -> f64 {
    if bit {
        1.0
    } else {
        -1.0
    }
}

/// A coupling `J` between variables `i < j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub coupling: f64,
}

/// Sparse pairwise model: couplings, external fields and derived adjacency.
///
/// Edges are kept sorted by `(i, j)`, which fixes the summation order of
/// [`IsingModel::energy`]. The model is immutable once built and can be shared
/// freely between chains.
#[derive(Clone, Debug, PartialEq)]
pub struct IsingModel {
    num_vars: usize,
    edges: Vec<Edge>,
    fields: Vec<f64>,
    adjacency: Vec<Vec<(usize, f64)>>,
    meta: Map<String, Value>,
}

impl IsingModel {
    /// Builds a model, rejecting self-loops, duplicate edges (in either
    /// orientation) and out-of-range indices. Edges given as `(j, i)` with
    /// `j > i` are normalized to `i < j`.
    pub fn new(num_vars: usize, edges: Vec<(usize, usize, f64)>, fields: Vec<f64>) -> Result<Self> {
        if fields.len() != num_vars {
            return Err(Error::Argument(format!(
                "fields has length {} but num_vars is {num_vars}",
                fields.len()
            )));
        }
        if let Some(pos) = fields.iter().position(|h| !h.is_finite()) {
            return Err(Error::Argument(format!("fields[{pos}] is not finite")));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut normalized = Vec::with_capacity(edges.len());
        for (row, &(a, b, coupling)) in edges.iter().enumerate() {
            if a >= num_vars || b >= num_vars {
                return Err(Error::Argument(format!(
                    "edge {row} ({a}, {b}) has an index outside [0, {num_vars})"
                )));
            }
            if a == b {
                return Err(Error::Argument(format!("edge {row} is a self-loop on {a}")));
            }
            if !coupling.is_finite() {
                return Err(Error::Argument(format!("edge {row} has a non-finite coupling")));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if !seen.insert((i, j)) {
                return Err(Error::Argument(format!("edge {row} duplicates ({i}, {j})")));
            }
            normalized.push(Edge { i, j, coupling });
        }
        normalized.sort_by_key(|e| (e.i, e.j));
        let mut adjacency = vec![Vec::new(); num_vars];
        for e in &normalized {
            adjacency[e.i].push((e.j, e.coupling));
            adjacency[e.j].push((e.i, e.coupling));
        }
        Ok(Self {
            num_vars,
            edges: normalized,
            fields,
            adjacency,
            meta: Map::new(),
        })
    }

    pub fn with_meta(mut self, meta: Map<String, Value>) -> Self {
        self.meta = meta;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    pub fn meta(&self) -> &Map<String, Value> {
        &self.meta
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn average_degree(&self) -> f64 {
        if self.num_vars == 0 {
            0.0
        } else {
            2.0 * self.edges.len() as f64 / self.num_vars as f64
        }
    }

    /// Upper bound on `|ΔE_i|` over all variables and states:
    /// `max_i 2 (sum_m |J_im| + |h_i|)`.
    pub fn max_flip_delta_bound(&self) -> f64 {
        (0..self.num_vars)
            .map(|i| {
                let s: f64 = self.adjacency[i].iter().map(|(_, j)| j.abs()).sum();
                2.0 * (s + self.fields[i].abs())
            })
            .fold(0.0, f64::max)
    }

    fn check_len(&self, bits: &[bool]) -> Result<()> {
        if bits.len() != self.num_vars {
            return Err(Error::Argument(format!(
                "state has {} bits but the model has {} variables",
                bits.len(),
                self.num_vars
            )));
        }
        Ok(())
    }

    /// Full energy of a `{0,1}` state under the ±1 convention.
    pub fn energy(&self, bits: &[bool]) -> Result<f64> {
        self.check_len(bits)?;
        Ok(self.energy_unchecked(bits))
    }

    pub(crate) fn energy_unchecked(&self, bits: &[bool]) -> f64 {
        let mut e = 0.0;
        for edge in &self.edges {
            e -= edge.coupling * spin(bits[edge.i]) * spin(bits[edge.j]);
        }
        for (h, &b) in self.fields.iter().zip(bits) {
            e -= h * spin(b);
        }
        e
    }

    /// `h_i + sum_m J_im s_m`, the field felt by variable `i`.
    pub fn local_field(&self, bits: &[bool], i: usize) -> Result<f64> {
        self.check_len(bits)?;
        self.check_index(i)?;
        Ok(self.local_field_unchecked(bits, i))
    }

    fn local_field_unchecked(&self, bits: &[bool], i: usize) -> f64 {
        let mut f = self.fields[i];
        for &(m, j) in &self.adjacency[i] {
            f += j * spin(bits[m]);
        }
        f
    }

    /// `E(F(x, i)) - E(x)` from scratch in O(degree(i)).
    pub fn delta_energy(&self, bits: &[bool], i: usize) -> Result<f64> {
        let f = self.local_field(bits, i)?;
        Ok(2.0 * spin(bits[i]) * f)
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.num_vars {
            return Err(Error::Argument(format!(
                "index {i} out of range for {} variables",
                self.num_vars
            )));
        }
        Ok(())
    }
}

/// The shell `S_n(c)`: states at Hamming distance `distance` from `reference`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShellConstraint {
    reference: Vec<bool>,
    distance: usize,
}

impl ShellConstraint {
    pub fn new(reference: Vec<bool>, distance: usize) -> Result<Self> {
        if distance > reference.len() {
            return Err(Error::Config(format!(
                "shell distance {distance} exceeds the number of variables {}",
                reference.len()
            )));
        }
        Ok(Self { reference, distance })
    }

    /// All-zeros reference: exactly `active` variables set to 1.
    pub fn magnetization(num_vars: usize, active: usize) -> Result<Self> {
        Self::new(vec![false; num_vars], active)
    }

    pub fn reference(&self) -> &[bool] {
        &self.reference
    }

    pub fn distance(&self) -> usize {
        self.distance
    }

    pub fn num_vars(&self) -> usize {
        self.reference.len()
    }

    pub fn contains(&self, bits: &[bool]) -> bool {
        bits.len() == self.reference.len() && hamming(bits, &self.reference) == self.distance
    }
}

pub fn hamming(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

const ABSENT: usize = usize::MAX;

/// A subset of `0..universe` with O(1) membership, insertion and removal.
///
/// Iteration order depends on the insertion/removal history; equality is set
/// equality.
#[derive(Clone, Debug)]
pub struct IndexSet {
    items: Vec<usize>,
    slots: Vec<usize>,
}

impl IndexSet {
    pub fn new(universe: usize) -> Self {
        Self {
            items: Vec::new(),
            slots: vec![ABSENT; universe],
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        self.slots.get(i).is_some_and(|&s| s != ABSENT)
    }

    /// Returns false when `i` was already present.
    pub fn insert(&mut self, i: usize) -> bool {
        if self.contains(i) {
            return false;
        }
        self.slots[i] = self.items.len();
        self.items.push(i);
        true
    }

    /// Returns false when `i` was absent.
    pub fn remove(&mut self, i: usize) -> bool {
        if !self.contains(i) {
            return false;
        }
        let slot = self.slots[i];
        self.items.swap_remove(slot);
        if let Some(&moved) = self.items.get(slot) {
            self.slots[moved] = slot;
        }
        self.slots[i] = ABSENT;
        true
    }

    /// The `k`-th element in the current storage order.
    pub fn get(&self, k: usize) -> Option<usize> {
        self.items.get(k).copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.items
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.items.iter().copied()
    }

    pub fn to_sorted_vec(&self) -> Vec<usize> {
        let mut v = self.items.clone();
        v.sort_unstable();
        v
    }
}

impl PartialEq for IndexSet {
    fn eq(&self, other: &Self) -> bool {
        self.slots.len() == other.slots.len()
            && self.items.len() == other.items.len()
            && self.items.iter().all(|&i| other.contains(i))
    }
}

impl Eq for IndexSet {}

/// Splits `0..M` into the agree set `P(x) = {i | x_i = c_i}` and the disagree
/// set `N(x) = {i | x_i != c_i}`.
pub fn partition_sets(bits: &[bool], reference: &[bool]) -> Result<(IndexSet, IndexSet)> {
    if bits.len() != reference.len() {
        return Err(Error::Argument(format!(
            "state has {} bits but reference has {}",
            bits.len(),
            reference.len()
        )));
    }
    let mut agree = IndexSet::new(bits.len());
    let mut disagree = IndexSet::new(bits.len());
    for (i, (x, c)) in bits.iter().zip(reference).enumerate() {
        if x == c {
            agree.insert(i);
        } else {
            disagree.insert(i);
        }
    }
    Ok((agree, disagree))
}

/// A configuration with its reference state and incrementally maintained
/// energy, local fields and agree/disagree sets.
///
/// Equality compares bits and reference only; the caches are derived data.
#[derive(Clone, Debug)]
pub struct ShellState {
    bits: Vec<bool>,
    reference: Vec<bool>,
    energy: f64,
    local_fields: Vec<f64>,
    agree: IndexSet,
    disagree: IndexSet,
    audit: bool,
    flips_since_audit: u64,
}

impl PartialEq for ShellState {
    fn eq(&self, other: &Self) -> bool {
        self.bits == other.bits && self.reference == other.reference
    }
}

impl ShellState {
    pub fn new(model: &IsingModel, bits: Vec<bool>, reference: Vec<bool>) -> Result<Self> {
        model.check_len(&bits)?;
        let (agree, disagree) = partition_sets(&bits, &reference)?;
        let local_fields = (0..bits.len())
            .map(|i| model.local_field_unchecked(&bits, i))
            .collect();
        let energy = model.energy_unchecked(&bits);
        Ok(Self {
            bits,
            reference,
            energy,
            local_fields,
            agree,
            disagree,
            audit: cfg!(debug_assertions),
            flips_since_audit: 0,
        })
    }

    /// Enables or disables the periodic from-scratch energy audit (on by
    /// default in debug builds). An audit panics on cache drift.
    pub fn set_audit(&mut self, enabled: bool) {
        self.audit = enabled;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn reference(&self) -> &[bool] {
        &self.reference
    }

    pub fn num_vars(&self) -> usize {
        self.bits.len()
    }

    /// Hamming distance to the reference, `|N(x)|`.
    pub fn distance(&self) -> usize {
        self.disagree.len()
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn agree_set(&self) -> &IndexSet {
        &self.agree
    }

    pub fn disagree_set(&self) -> &IndexSet {
        &self.disagree
    }

    pub fn local_fields(&self) -> &[f64] {
        &self.local_fields
    }

    #[inline]
    pub fn is_disagreeing(&self, i: usize) -> bool {
        self.disagree.contains(i)
    }

    /// `E(F(x, i)) - E(x)` from the cached local field.
    pub fn delta_energy(&self, i: usize) -> Result<f64> {
        if i >= self.bits.len() {
            return Err(Error::Argument(format!(
                "index {i} out of range for {} variables",
                self.bits.len()
            )));
        }
        Ok(self.delta_unchecked(i))
    }

    #[inline]
    pub(crate) fn delta_unchecked(&self, i: usize) -> f64 {
        2.0 * spin(self.bits[i]) * self.local_fields[i]
    }

    /// Applies the flip operator `F(x, i)` in place.
    pub fn flip(&mut self, model: &IsingModel, i: usize) -> Result<()> {
        if i >= self.bits.len() {
            return Err(Error::Argument(format!(
                "index {i} out of range for {} variables",
                self.bits.len()
            )));
        }
        self.flip_unchecked(model, i);
        Ok(())
    }

    /// Returns `F(x, i)` leaving `self` untouched.
    pub fn flipped(&self, model: &IsingModel, i: usize) -> Result<Self> {
        let mut next = self.clone();
        next.flip(model, i)?;
        Ok(next)
    }

    pub(crate) fn flip_unchecked(&mut self, model: &IsingModel, i: usize) {
        self.energy += self.delta_unchecked(i);
        let new_bit = !self.bits[i];
        self.bits[i] = new_bit;
        let change = 2.0 * spin(new_bit);
        for &(m, j) in model.neighbors(i) {
            self.local_fields[m] += j * change;
        }
        if new_bit == self.reference[i] {
            self.disagree.remove(i);
            self.agree.insert(i);
        } else {
            self.agree.remove(i);
            self.disagree.insert(i);
        }
        if self.audit {
            self.flips_since_audit += 1;
            if self.flips_since_audit >= AUDIT_INTERVAL {
                self.flips_since_audit = 0;
                let fresh = model.energy_unchecked(&self.bits);
                assert!(
                    (fresh - self.energy).abs() <= 1e-9 * (1.0 + fresh.abs()),
                    "cached energy {} drifted from recomputed {}",
                    self.energy,
                    fresh
                );
            }
        }
    }

    /// Recomputes energy and local fields from scratch.
    pub fn resync(&mut self, model: &IsingModel) {
        self.energy = model.energy_unchecked(&self.bits);
        for i in 0..self.bits.len() {
            self.local_fields[i] = model.local_field_unchecked(&self.bits, i);
        }
    }
}

// ---------------------------------------------------------------------------
// Model file format
// ---------------------------------------------------------------------------

/// Serializes a model to the JSON model format. Numbers are written in
/// shortest round-trip form, so [`model_from_json`] restores them bit-exactly.
pub fn model_to_json(model: &IsingModel) -> String {
    let mut obj = Map::new();
    obj.insert("num_vars".into(), Value::from(model.num_vars));
    let edges: Vec<Value> = model
        .edges
        .iter()
        .map(|e| Value::Array(vec![e.i.into(), e.j.into(), num(e.coupling)]))
        .collect();
    obj.insert("edges".into(), Value::Array(edges));
    obj.insert(
        "fields".into(),
        Value::Array(model.fields.iter().map(|&h| num(h)).collect()),
    );
    if !model.meta.is_empty() {
        obj.insert("meta".into(), Value::Object(model.meta.clone()));
    }
    Value::Object(obj).to_string()
}

fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

pub fn model_from_json(text: &str) -> Result<IsingModel> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("invalid JSON: {e}")))?;
    let obj = root
        .as_object()
        .ok_or_else(|| Error::Parse("top level must be an object".into()))?;
    let num_vars = obj
        .get("num_vars")
        .ok_or_else(|| Error::Parse("missing key \"num_vars\"".into()))?
        .as_u64()
        .ok_or_else(|| Error::Parse("\"num_vars\" must be a nonnegative integer".into()))?
        as usize;

    let raw_edges = obj
        .get("edges")
        .ok_or_else(|| Error::Parse("missing key \"edges\"".into()))?
        .as_array()
        .ok_or_else(|| Error::Parse("\"edges\" must be an array".into()))?;
    let mut edges = Vec::with_capacity(raw_edges.len());
    let mut seen = HashSet::with_capacity(raw_edges.len());
    for (row, e) in raw_edges.iter().enumerate() {
        let triple = e
            .as_array()
            .filter(|a| a.len() == 3)
            .ok_or_else(|| Error::Parse(format!("edges[{row}] must be [i, j, J]")))?;
        let i = triple[0]
            .as_u64()
            .ok_or_else(|| Error::Parse(format!("edges[{row}][0] must be an index")))?
            as usize;
        let j = triple[1]
            .as_u64()
            .ok_or_else(|| Error::Parse(format!("edges[{row}][1] must be an index")))?
            as usize;
        let coupling = triple[2]
            .as_f64()
            .ok_or_else(|| Error::Parse(format!("edges[{row}][2] must be a number")))?;
        if i >= j {
            return Err(Error::Parse(format!(
                "edges[{row}]: requires i < j, got ({i}, {j})"
            )));
        }
        if j >= num_vars {
            return Err(Error::Parse(format!(
                "edges[{row}]: index {j} out of range for num_vars {num_vars}"
            )));
        }
        if !seen.insert((i, j)) {
            return Err(Error::Parse(format!("edges[{row}]: duplicate edge ({i}, {j})")));
        }
        edges.push((i, j, coupling));
    }

    let raw_fields = obj
        .get("fields")
        .ok_or_else(|| Error::Parse("missing key \"fields\"".into()))?
        .as_array()
        .ok_or_else(|| Error::Parse("\"fields\" must be an array".into()))?;
    if raw_fields.len() != num_vars {
        return Err(Error::Parse(format!(
            "\"fields\" has {} entries, expected {num_vars}",
            raw_fields.len()
        )));
    }
    let fields = raw_fields
        .iter()
        .enumerate()
        .map(|(k, v)| {
            v.as_f64()
                .ok_or_else(|| Error::Parse(format!("fields[{k}] must be a number")))
        })
        .collect::<Result<Vec<_>>>()?;

    let meta = match obj.get("meta") {
        None => Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err(Error::Parse("\"meta\" must be an object".into())),
    };
    let model = IsingModel::new(num_vars, edges, fields).map_err(|e| match e {
        Error::Argument(msg) => Error::Parse(msg),
        other => other,
    })?;
    Ok(model.with_meta(meta))
}

pub fn save_model(model: &IsingModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_json(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<IsingModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}
