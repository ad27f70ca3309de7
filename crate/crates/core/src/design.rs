//! Robot designs as graphs of typed modules.
//!
//! A design is one body with six ports. Ports 0..3 run front-to-rear on the
//! left side, ports 3..6 front-to-rear on the right. Each port holds a leg, a
//! wheel or nothing. Every dimensionality used by the simulator and the
//! networks is derived from here.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_PORTS: usize = 6;

/// Width of an edge feature: six-way port one-hot plus the side sign.
pub const EDGE_FEATURE_DIM: usize = NUM_PORTS + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModuleKind {
    Body,
    Leg,
    Wheel,
    None,
}

impl ModuleKind {
    /// Kinds that own networks, in parameter-naming order.
    pub const NETWORKED: [ModuleKind; 3] = [ModuleKind::Body, ModuleKind::Leg, ModuleKind::Wheel];

    pub const fn dof(self) -> usize {
        match self {
            ModuleKind::Body | ModuleKind::None => 0,
            ModuleKind::Leg => 3,
            ModuleKind::Wheel => 2,
        }
    }

    pub const fn state_dim(self) -> usize {
        match self {
            ModuleKind::Body => 10,
            ModuleKind::Leg => 6,
            ModuleKind::Wheel => 4,
            ModuleKind::None => 0,
        }
    }

    pub const fn obs_dim(self) -> usize {
        match self {
            ModuleKind::Body => 5,
            ModuleKind::Leg => 6,
            ModuleKind::Wheel => 3,
            ModuleKind::None => 0,
        }
    }

    pub const fn action_dim(self) -> usize {
        self.dof()
    }

    pub fn name(self) -> &'static str {
        match self {
            ModuleKind::Body => "body",
            ModuleKind::Leg => "leg",
            ModuleKind::Wheel => "wheel",
            ModuleKind::None => "none",
        }
    }

    fn from_code(c: char) -> Option<Self> {
        match c {
            'L' => Some(ModuleKind::Leg),
            'W' => Some(ModuleKind::Wheel),
            'N' => Some(ModuleKind::None),
            _ => None,
        }
    }

    fn code(self) -> char {
        match self {
            ModuleKind::Leg => 'L',
            ModuleKind::Wheel => 'W',
            _ => 'N',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortSlot {
    pub index: usize,
    /// Body-frame mounting point in meters.
    pub x: f64,
    pub y: f64,
    /// +1 left, -1 right.
    pub side: f64,
}

impl PortSlot {
    pub fn new(index: usize) -> Self {
        assert!(index < NUM_PORTS, "port index {index} out of range");
        let row = index % 3;
        let side = if index < 3 { 1.0 } else { -1.0 };
        let x = [0.3, 0.0, -0.3][row];
        PortSlot {
            index,
            x,
            y: 0.2 * side,
            side,
        }
    }

    /// Port on the opposite side at the same row.
    pub fn mirror_index(index: usize) -> usize {
        (index + 3) % NUM_PORTS
    }

    pub fn edge_feature(&self) -> [f64; EDGE_FEATURE_DIM] {
        let mut f = [0.0; EDGE_FEATURE_DIM];
        f[self.index] = 1.0;
        f[NUM_PORTS] = self.side;
        f
    }
}

const ALIASES: [(&str, &str); 4] = [("hex6l", "LLL|LLL"), ("car4w", "WNW|WNW"), ("llw", "LLW|LLW"), ("lnw", "LNW|LNW")];

/// A robot: one body plus six ports. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DesignGraph {
    name: String,
    slots: [ModuleKind; NUM_PORTS],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphNode {
    pub kind: ModuleKind,
    /// `None` for the body node.
    pub slot: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphEdge {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    pub edge_features: Vec<[f64; EDGE_FEATURE_DIM]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub state: usize,
    pub obs: usize,
    pub action: usize,
}

impl DesignGraph {
    pub fn from_slots(slots: [ModuleKind; NUM_PORTS]) -> Result<Self> {
        let name = pattern_of(&slots);
        if slots.iter().any(|k| matches!(k, ModuleKind::Body)) {
            return Err(Error::InvalidDesign {
                spec: name,
                reason: "a port cannot hold a body".into(),
            });
        }
        if slots.iter().all(|k| *k == ModuleKind::None) {
            return Err(Error::InvalidDesign {
                spec: name,
                reason: "at least one port must hold a leg or wheel".into(),
            });
        }
        Ok(DesignGraph { name, slots })
    }

    /// Canonical pattern, e.g. `LLW|LLW`.
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn pattern(&self) -> String {
        pattern_of(&self.slots)
    }

    /// Short alias when the design is one of the named robots.
    pub fn alias(&self) -> Option<&'static str> {
        let p = self.pattern();
        ALIASES.iter().find(|(_, pat)| *pat == p).map(|(a, _)| *a)
    }

    pub fn display_name(&self) -> String {
        self.alias().map(str::to_string).unwrap_or_else(|| self.pattern())
    }

    pub fn slots(&self) -> &[ModuleKind; NUM_PORTS] {
        &self.slots
    }

    pub fn slot(&self, i: usize) -> ModuleKind {
        self.slots[i]
    }

    /// Populated slots in ascending order.
    pub fn modules(&self) -> impl Iterator<Item = (usize, ModuleKind)> + '_ {
        self.slots.iter().copied().enumerate().filter(|(_, k)| *k != ModuleKind::None)
    }

    pub fn count(&self, kind: ModuleKind) -> usize {
        match kind {
            ModuleKind::Body => 1,
            k => self.slots.iter().filter(|s| **s == k).count(),
        }
    }

    pub fn has_kind(&self, kind: ModuleKind) -> bool {
        self.count(kind) > 0
    }

    pub fn dims(&self) -> Dims {
        total_dims(self)
    }

    /// Design with left and right sides swapped.
    pub fn mirrored(&self) -> DesignGraph {
        let mut slots = [ModuleKind::None; NUM_PORTS];
        for (i, k) in self.slots.iter().enumerate() {
            slots[PortSlot::mirror_index(i)] = *k;
        }
        DesignGraph::from_slots(slots).expect("mirror of a valid design is valid")
    }

    /// Offset of each slot's block inside a flat vector whose body block has
    /// width `body` and whose module blocks have width `per_kind(kind)`.
    pub fn offsets(&self, body: usize, per_kind: impl Fn(ModuleKind) -> usize) -> [usize; NUM_PORTS] {
        let mut out = [0; NUM_PORTS];
        let mut at = body;
        for (i, k) in self.slots.iter().enumerate() {
            out[i] = at;
            at += per_kind(*k);
        }
        out
    }

    pub fn state_offsets(&self) -> [usize; NUM_PORTS] {
        self.offsets(ModuleKind::Body.state_dim(), ModuleKind::state_dim)
    }

    pub fn obs_offsets(&self) -> [usize; NUM_PORTS] {
        self.offsets(ModuleKind::Body.obs_dim(), ModuleKind::obs_dim)
    }

    pub fn action_offsets(&self) -> [usize; NUM_PORTS] {
        self.offsets(0, ModuleKind::action_dim)
    }
}

impl fmt::Display for DesignGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_name())
    }
}

fn pattern_of(slots: &[ModuleKind; NUM_PORTS]) -> String {
    let mut s = String::with_capacity(7);
    for (i, k) in slots.iter().enumerate() {
        if i == 3 {
            s.push('|');
        }
        s.push(k.code());
    }
    s
}

/// Parses an alias (`hex6l`, `car4w`, `llw`, `lnw`) or an `XYZ|XYZ` pattern.
pub fn parse_design(spec: &str) -> Result<DesignGraph> {
    let trimmed = spec.trim();
    let pattern = ALIASES
        .iter()
        .find(|(alias, _)| *alias == trimmed)
        .map(|(_, p)| *p)
        .unwrap_or(trimmed);
    let invalid = |reason: &str| Error::InvalidDesign {
        spec: spec.to_string(),
        reason: reason.to_string(),
    };
    let (left, right) = pattern
        .split_once('|')
        .ok_or_else(|| invalid("unknown alias, and not an XYZ|XYZ pattern"))?;
    if left.chars().count() != 3 || right.chars().count() != 3 {
        return Err(invalid("each side needs exactly three ports"));
    }
    let mut slots = [ModuleKind::None; NUM_PORTS];
    for (i, c) in left.chars().chain(right.chars()).enumerate() {
        slots[i] = ModuleKind::from_code(c).ok_or_else(|| invalid(&format!("unknown module code `{c}` (expected L, W or N)")))?;
    }
    DesignGraph::from_slots(slots).map_err(|e| match e {
        Error::InvalidDesign { reason, .. } => invalid(&reason),
        other => other,
    })
}

pub fn total_dims(design: &DesignGraph) -> Dims {
    let mut d = Dims {
        state: ModuleKind::Body.state_dim(),
        obs: ModuleKind::Body.obs_dim(),
        action: 0,
    };
    for k in design.slots() {
        d.state += k.state_dim();
        d.obs += k.obs_dim();
        d.action += k.action_dim();
    }
    d
}

/// Star graph around the body. Nodes: body first, then populated slots in
/// ascending order. Edges come in body→module, module→body pairs; each
/// carries the module endpoint's port feature.
pub fn adjacency(design: &DesignGraph) -> Adjacency {
    let mut nodes = vec![GraphNode {
        kind: ModuleKind::Body,
        slot: None,
    }];
    let mut edges = Vec::new();
    let mut edge_features = Vec::new();
    for (slot, kind) in design.modules() {
        let id = nodes.len();
        nodes.push(GraphNode { kind, slot: Some(slot) });
        let feat = PortSlot::new(slot).edge_feature();
        edges.push(GraphEdge { from: 0, to: id });
        edge_features.push(feat);
        edges.push(GraphEdge { from: id, to: 0 });
        edge_features.push(feat);
    }
    Adjacency {
        nodes,
        edges,
        edge_features,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_designs() {
        let hex = parse_design("hex6l").unwrap();
        assert_eq!(hex.count(ModuleKind::Leg), 6);
        assert_eq!(hex.dims().action, 18);
        let car = parse_design("car4w").unwrap();
        assert_eq!(car.count(ModuleKind::Wheel), 4);
        assert_eq!(car.dims().action, 8);
        assert_eq!(parse_design("LNW|LNW").unwrap().dims().action, 10);
    }

    #[test]
    fn dims_of_named_designs() {
        let d = |s| {
            let g = parse_design(s).unwrap().dims();
            (g.state, g.obs, g.action)
        };
        assert_eq!(d("hex6l"), (46, 41, 18));
        assert_eq!(d("car4w"), (26, 17, 8));
        assert_eq!(d("llw"), (42, 35, 16));
    }

    #[test]
    fn adjacency_sizes() {
        let a = adjacency(&parse_design("hex6l").unwrap());
        assert_eq!((a.nodes.len(), a.edges.len()), (7, 12));
        let a = adjacency(&parse_design("lnw").unwrap());
        assert_eq!((a.nodes.len(), a.edges.len()), (5, 8));
        let a = adjacency(&parse_design("LNN|NNN").unwrap());
        assert_eq!((a.nodes.len(), a.edges.len()), (2, 2));
        assert_eq!(a.edge_features[0], [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn adjacency_is_symmetric_and_ordered() {
        let a = adjacency(&parse_design("WLN|NLW").unwrap());
        assert_eq!(a.nodes[0].kind, ModuleKind::Body);
        let slots: Vec<_> = a.nodes[1..].iter().map(|n| n.slot.unwrap()).collect();
        assert_eq!(slots, vec![0, 1, 4, 5]);
        for e in &a.edges {
            assert!(a.edges.contains(&GraphEdge { from: e.to, to: e.from }));
        }
    }

    #[test]
    fn rejects_bad_specs() {
        for bad in ["hexapod", "LLL", "LL|LLL", "LLX|LLL", "NNN|NNN", "LLLL|LL"] {
            let err = parse_design(bad).unwrap_err();
            assert!(matches!(err, Error::InvalidDesign { .. }), "{bad}: {err}");
        }
        let msg = parse_design("NNN|NNN").unwrap_err().to_string();
        assert!(msg.contains("at least one"), "{msg}");
    }

    #[test]
    fn aliases_equal_expansions() {
        for (alias, pattern) in ALIASES {
            assert_eq!(parse_design(alias).unwrap(), parse_design(pattern).unwrap());
        }
        assert_eq!(parse_design("llw").unwrap().alias(), Some("llw"));
    }

    #[test]
    fn action_dim_over_all_patterns() {
        let codes = ['L', 'W', 'N'];
        let mut valid = 0;
        for mut n in 0..3usize.pow(6) {
            let mut s = String::new();
            let (mut legs, mut wheels) = (0, 0);
            for i in 0..6 {
                if i == 3 {
                    s.push('|');
                }
                let c = codes[n % 3];
                n /= 3;
                legs += usize::from(c == 'L');
                wheels += usize::from(c == 'W');
                s.push(c);
            }
            match parse_design(&s) {
                Ok(d) => {
                    valid += 1;
                    assert_eq!(d.dims().action, 3 * legs + 2 * wheels);
                    let dims = d.dims();
                    assert_eq!(dims.state, 10 + 6 * legs + 4 * wheels);
                    assert_eq!(dims.obs, 5 + 6 * legs + 3 * wheels);
                }
                Err(_) => assert_eq!(legs + wheels, 0),
            }
        }
        assert_eq!(valid, 728);
    }

    #[test]
    fn mirroring_swaps_sides_only() {
        let d = parse_design("LNW|WWN").unwrap();
        let m = d.mirrored();
        assert_eq!(m.pattern(), "WWN|LNW");
        for i in 0..NUM_PORTS {
            let j = PortSlot::mirror_index(i);
            assert_eq!(d.slot(i), m.slot(j));
            let (p, q) = (PortSlot::new(i), PortSlot::new(j));
            assert_eq!(p.x, q.x);
            assert_eq!(p.y, -q.y);
            assert_eq!(p.side, -q.side);
        }
        assert_eq!(m.mirrored(), d);
    }

    #[test]
    fn port_geometry() {
        let p: Vec<_> = (0..6).map(PortSlot::new).collect();
        assert_eq!((p[0].x, p[0].y, p[0].side), (0.3, 0.2, 1.0));
        assert_eq!((p[2].x, p[2].y), (-0.3, 0.2));
        assert_eq!((p[4].x, p[4].y, p[4].side), (0.0, -0.2, -1.0));
    }
}
