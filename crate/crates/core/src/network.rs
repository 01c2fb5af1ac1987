//! Road-network data model: intersections, boundary nodes, directed links,
//! the JSON network document, synthetic grid generation and CSV demand
//! profiles.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error at `{element}`: {reason}")]
    Validation { element: String, reason: String },
    #[error("rate out of range at `{element}`: {value}")]
    Range { element: String, value: f64 },
    #[error("unknown intersection `{0}`")]
    UnknownIntersection(String),
}

fn invalid(element: impl Into<String>, reason: impl Into<String>) -> NetworkError {
    NetworkError::Validation {
        element: element.into(),
        reason: reason.into(),
    }
}

/// Compass side of an intersection. The discriminant order is clockwise
/// starting at north, which the conflict geometry relies on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dir {
    #[default]
    N,
    E,
    S,
    W,
}

impl Dir {
    /// Fixed observation order used by state keys: N, S, E, W.
    pub const OBS_ORDER: [Dir; 4] = [Dir::N, Dir::S, Dir::E, Dir::W];
    pub const CLOCKWISE: [Dir; 4] = [Dir::N, Dir::E, Dir::S, Dir::W];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Dir {
        Dir::CLOCKWISE[i % 4]
    }

    pub fn opposite(self) -> Dir {
        Dir::from_index(self.index() + 2)
    }

    /// Side a vehicle arriving from `self` leaves through when turning left
    /// (right-hand traffic).
    pub fn left_exit(self) -> Dir {
        Dir::from_index(self.index() + 1)
    }

    pub fn right_exit(self) -> Dir {
        Dir::from_index(self.index() + 3)
    }

    pub fn exit_for(self, turn: Turn) -> Dir {
        match turn {
            Turn::Left => self.left_exit(),
            Turn::Straight => self.opposite(),
            Turn::Right => self.right_exit(),
        }
    }

    /// Turn taken by a vehicle arriving from `self` and leaving through
    /// `exit`; `None` for a U-turn.
    pub fn turn_to(self, exit: Dir) -> Option<Turn> {
        if exit == self.opposite() {
            Some(Turn::Straight)
        } else if exit == self.left_exit() {
            Some(Turn::Left)
        } else if exit == self.right_exit() {
            Some(Turn::Right)
        } else {
            None
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Dir::N => "N",
            Dir::E => "E",
            Dir::S => "S",
            Dir::W => "W",
        }
    }

    pub fn parse(tag: &str) -> Option<Dir> {
        match tag {
            "N" | "n" => Some(Dir::N),
            "E" | "e" => Some(Dir::E),
            "S" | "s" => Some(Dir::S),
            "W" | "w" => Some(Dir::W),
            _ => None,
        }
    }
}

impl fmt::Display for Dir {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Turn {
    Left,
    Straight,
    Right,
}

impl Turn {
    pub const ALL: [Turn; 3] = [Turn::Left, Turn::Straight, Turn::Right];

    pub fn tag(self) -> &'static str {
        match self {
            Turn::Left => "L",
            Turn::Straight => "S",
            Turn::Right => "R",
        }
    }

    pub fn parse(tag: &str) -> Option<Turn> {
        match tag {
            "L" => Some(Turn::Left),
            "S" => Some(Turn::Straight),
            "R" => Some(Turn::Right),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Plus,
    Tee,
}

impl Shape {
    pub fn legs(self) -> usize {
        match self {
            Shape::Plus => 4,
            Shape::Tee => 3,
        }
    }
}

/// Index of a link in [`Network::links`].
pub type LinkIdx = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeRef {
    Intersection(usize),
    Boundary(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Approach {
    pub dir: Dir,
    pub link: LinkIdx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intersection {
    pub id: String,
    pub shape: Shape,
    /// Incoming approaches ordered by direction (N, E, S, W).
    pub approaches: Vec<Approach>,
    pub action_set_size: u8,
    /// Outgoing link leaving through each side, indexed by [`Dir::index`].
    pub exits: [Option<LinkIdx>; 4],
}

impl Intersection {
    pub fn approach(&self, dir: Dir) -> Option<&Approach> {
        self.approaches.iter().find(|a| a.dir == dir)
    }

    /// Sides carrying a road (incoming or outgoing).
    pub fn legs(&self) -> [bool; 4] {
        let mut legs = [false; 4];
        for a in &self.approaches {
            legs[a.dir.index()] = true;
        }
        for (i, e) in self.exits.iter().enumerate() {
            if e.is_some() {
                legs[i] = true;
            }
        }
        legs
    }

    pub fn degree(&self) -> usize {
        self.approaches.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: String,
    pub from: NodeRef,
    pub to: NodeRef,
    pub travel_slots: u32,
    /// Turns permitted at the downstream intersection.
    pub movements: Vec<Turn>,
    pub separate_right: bool,
    /// Direction of travel; required for links touching an intersection.
    pub heading: Option<Dir>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub intersections: Vec<Intersection>,
    pub boundary: Vec<String>,
    pub links: Vec<Link>,
    /// Boundary indices with at least one outgoing link.
    pub entry_nodes: Vec<usize>,
    /// Boundary indices with at least one incoming link.
    pub exit_nodes: Vec<usize>,
    index: HashMap<String, NodeRef>,
}

// ---------------------------------------------------------------------------
// Document schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NetworkDoc {
    pub intersections: Vec<IntersectionDoc>,
    pub boundary: Vec<String>,
    pub links: Vec<LinkDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IntersectionDoc {
    pub id: String,
    pub shape: String,
    pub actions: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LinkDoc {
    pub id: String,
    pub from: String,
    pub to: String,
    pub travel_slots: u32,
    pub movements: Vec<String>,
    #[serde(default)]
    pub separate_right: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<String>,
}

pub fn load_network(text: &str) -> Result<Network, NetworkError> {
    let doc: NetworkDoc =
        serde_json::from_str(text).map_err(|e| NetworkError::Parse(e.to_string()))?;
    Network::from_doc(&doc)
}

impl Network {
    pub fn from_doc(doc: &NetworkDoc) -> Result<Network, NetworkError> {
        let mut index = HashMap::new();
        let mut intersections = Vec::with_capacity(doc.intersections.len());
        for (i, d) in doc.intersections.iter().enumerate() {
            let shape = match d.shape.as_str() {
                "plus" => Shape::Plus,
                "tee" => Shape::Tee,
                other => return Err(invalid(&d.id, format!("unknown shape `{other}`"))),
            };
            match (shape, d.actions) {
                (Shape::Plus, 4 | 6 | 8) | (Shape::Tee, 4) => {}
                _ => {
                    return Err(invalid(
                        &d.id,
                        format!("{} actions not supported for shape `{}`", d.actions, d.shape),
                    ))
                }
            }
            if index.insert(d.id.clone(), NodeRef::Intersection(i)).is_some() {
                return Err(invalid(&d.id, "duplicate node id"));
            }
            intersections.push(Intersection {
                id: d.id.clone(),
                shape,
                approaches: Vec::new(),
                action_set_size: d.actions,
                exits: [None; 4],
            });
        }
        for (b, id) in doc.boundary.iter().enumerate() {
            if index.insert(id.clone(), NodeRef::Boundary(b)).is_some() {
                return Err(invalid(id, "duplicate node id"));
            }
        }

        let mut link_ids = HashMap::new();
        let mut links = Vec::with_capacity(doc.links.len());
        for (l, d) in doc.links.iter().enumerate() {
            if link_ids.insert(d.id.clone(), l).is_some() {
                return Err(invalid(&d.id, "duplicate link id"));
            }
            let from = *index
                .get(&d.from)
                .ok_or_else(|| invalid(&d.from, format!("unknown node referenced by link `{}`", d.id)))?;
            let to = *index
                .get(&d.to)
                .ok_or_else(|| invalid(&d.to, format!("unknown node referenced by link `{}`", d.id)))?;
            if d.travel_slots < 1 {
                return Err(invalid(&d.id, "travel_slots must be >= 1"));
            }
            if d.movements.is_empty() {
                return Err(invalid(&d.id, "movements must be non-empty"));
            }
            let mut movements = Vec::new();
            for m in &d.movements {
                let t = Turn::parse(m).ok_or_else(|| invalid(&d.id, format!("bad movement `{m}`")))?;
                if !movements.contains(&t) {
                    movements.push(t);
                }
            }
            movements.sort();
            let heading = match &d.heading {
                Some(h) => Some(Dir::parse(h).ok_or_else(|| invalid(&d.id, format!("bad heading `{h}`")))?),
                None => None,
            };
            if matches!((from, to), (NodeRef::Boundary(_), NodeRef::Boundary(_))) {
                return Err(invalid(&d.id, "link joins two boundary nodes"));
            }
            if from == to {
                return Err(invalid(&d.id, "self loop"));
            }
            let heading = heading.ok_or_else(|| invalid(&d.id, "heading required on links touching an intersection"))?;
            if let NodeRef::Intersection(i) = to {
                let dir = heading.opposite();
                let inter = &mut intersections[i];
                if inter.approach(dir).is_some() {
                    return Err(invalid(&d.id, format!("second approach from {dir} into `{}`", inter.id)));
                }
                inter.approaches.push(Approach { dir, link: l });
            }
            if let NodeRef::Intersection(i) = from {
                let inter = &mut intersections[i];
                if inter.exits[heading.index()].is_some() {
                    return Err(invalid(&d.id, format!("second exit toward {heading} from `{}`", inter.id)));
                }
                inter.exits[heading.index()] = Some(l);
            }
            links.push(Link {
                id: d.id.clone(),
                from,
                to,
                travel_slots: d.travel_slots,
                movements,
                separate_right: d.separate_right,
                heading: Some(heading),
            });
        }

        for inter in &mut intersections {
            inter.approaches.sort_by_key(|a| a.dir);
            let legs = inter.legs().iter().filter(|&&b| b).count();
            if legs != inter.shape.legs() || inter.approaches.len() != inter.shape.legs() {
                return Err(invalid(
                    &inter.id,
                    format!(
                        "shape requires {} legs each with an incoming link, found {} legs and {} incoming",
                        inter.shape.legs(),
                        legs,
                        inter.approaches.len()
                    ),
                ));
            }
            for a in &inter.approaches {
                let link = &links[a.link];
                for &t in &link.movements {
                    let exit = a.dir.exit_for(t);
                    if inter.exits[exit.index()].is_none() {
                        return Err(invalid(
                            &link.id,
                            format!("movement {} has no outgoing link toward {exit}", t.tag()),
                        ));
                    }
                }
            }
        }

        let mut net = Network {
            intersections,
            boundary: doc.boundary.clone(),
            links,
            entry_nodes: Vec::new(),
            exit_nodes: Vec::new(),
            index,
        };
        for l in &net.links {
            if let NodeRef::Boundary(b) = l.from {
                net.entry_nodes.push(b);
            }
            if let NodeRef::Boundary(b) = l.to {
                net.exit_nodes.push(b);
            }
        }
        net.entry_nodes.sort_unstable();
        net.entry_nodes.dedup();
        net.exit_nodes.sort_unstable();
        net.exit_nodes.dedup();

        // Neighbor symmetry between intersections.
        for l in &net.links {
            if let (NodeRef::Intersection(a), NodeRef::Intersection(b)) = (l.from, l.to) {
                let back = net
                    .links
                    .iter()
                    .any(|r| r.from == NodeRef::Intersection(b) && r.to == NodeRef::Intersection(a));
                if !back {
                    return Err(invalid(
                        &l.id,
                        format!(
                            "asymmetric neighbor relation: no link from `{}` back to `{}`",
                            net.intersections[b].id, net.intersections[a].id
                        ),
                    ));
                }
            }
        }
        Ok(net)
    }

    pub fn to_doc(&self) -> NetworkDoc {
        NetworkDoc {
            intersections: self
                .intersections
                .iter()
                .map(|i| IntersectionDoc {
                    id: i.id.clone(),
                    shape: match i.shape {
                        Shape::Plus => "plus".into(),
                        Shape::Tee => "tee".into(),
                    },
                    actions: i.action_set_size,
                })
                .collect(),
            boundary: self.boundary.clone(),
            links: self
                .links
                .iter()
                .map(|l| LinkDoc {
                    id: l.id.clone(),
                    from: self.node_id(l.from).to_string(),
                    to: self.node_id(l.to).to_string(),
                    travel_slots: l.travel_slots,
                    movements: l.movements.iter().map(|t| t.tag().to_string()).collect(),
                    separate_right: l.separate_right,
                    heading: l.heading.map(|h| h.tag().to_string()),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("network document serializes")
    }

    pub fn node(&self, id: &str) -> Option<NodeRef> {
        self.index.get(id).copied()
    }

    pub fn node_id(&self, node: NodeRef) -> &str {
        match node {
            NodeRef::Intersection(i) => &self.intersections[i].id,
            NodeRef::Boundary(b) => &self.boundary[b],
        }
    }

    pub fn intersection_index(&self, id: &str) -> Result<usize, NetworkError> {
        match self.index.get(id) {
            Some(NodeRef::Intersection(i)) => Ok(*i),
            _ => Err(NetworkError::UnknownIntersection(id.to_string())),
        }
    }

    /// Upstream node ids with a link into intersection `id`, sorted.
    pub fn neighbors(&self, id: &str) -> Result<Vec<String>, NetworkError> {
        let i = self.intersection_index(id)?;
        let mut out: Vec<String> = self.intersections[i]
            .approaches
            .iter()
            .map(|a| self.node_id(self.links[a.link].from).to_string())
            .collect();
        out.sort();
        Ok(out)
    }

    /// |N_i|: number of incoming approaches.
    pub fn neighbor_count(&self, i: usize) -> usize {
        self.intersections[i].approaches.len()
    }

    pub fn outgoing(&self, node: NodeRef) -> impl Iterator<Item = LinkIdx> + '_ {
        self.links
            .iter()
            .enumerate()
            .filter(move |(_, l)| l.from == node)
            .map(|(i, _)| i)
    }

    /// Free-flow traversal time of a route.
    pub fn free_flow(&self, route: &[LinkIdx]) -> u64 {
        route.iter().map(|&l| u64::from(self.links[l].travel_slots)).sum()
    }

    /// Turn taken at the intersection between consecutive route links.
    pub fn turn_between(&self, inbound: LinkIdx, outbound: LinkIdx) -> Option<Turn> {
        let a = self.links[inbound].heading?.opposite();
        let e = self.links[outbound].heading?;
        a.turn_to(e)
    }
}

// ---------------------------------------------------------------------------
// Grid generation
// ---------------------------------------------------------------------------

/// Rectangular lattice of PLUS intersections with one boundary node (both
/// entry and exit) per perimeter leg. Row 0 is the northern edge.
pub fn generate_grid(rows: usize, cols: usize, travel_slots: u32) -> Network {
    generate_grid_with(rows, cols, travel_slots, 4)
}

pub fn generate_grid_with(rows: usize, cols: usize, travel_slots: u32, actions: u8) -> Network {
    assert!(rows >= 1 && cols >= 1, "grid needs at least one row and column");
    assert!(travel_slots >= 1, "travel_slots must be >= 1");
    let iid = |r: usize, c: usize| format!("i{r}_{c}");
    let mut doc = NetworkDoc {
        intersections: Vec::new(),
        boundary: Vec::new(),
        links: Vec::new(),
    };
    for r in 0..rows {
        for c in 0..cols {
            doc.intersections.push(IntersectionDoc {
                id: iid(r, c),
                shape: "plus".into(),
                actions,
            });
        }
    }
    let all = || vec!["L".to_string(), "S".to_string(), "R".to_string()];
    let push_pair = |doc: &mut NetworkDoc, a: &str, b: &str, heading: Dir, a_is_inter: bool, b_is_inter: bool| {
        // a -> b travels `heading`, b -> a travels the opposite way.
        let movements_into = |inter: bool| if inter { all() } else { vec!["S".to_string()] };
        doc.links.push(LinkDoc {
            id: format!("{a}>{b}"),
            from: a.to_string(),
            to: b.to_string(),
            travel_slots,
            movements: movements_into(b_is_inter),
            separate_right: false,
            heading: Some(heading.tag().to_string()),
        });
        doc.links.push(LinkDoc {
            id: format!("{b}>{a}"),
            from: b.to_string(),
            to: a.to_string(),
            travel_slots,
            movements: movements_into(a_is_inter),
            separate_right: false,
            heading: Some(heading.opposite().tag().to_string()),
        });
    };
    // Boundary legs.
    for c in 0..cols {
        let n = format!("bn{c}");
        let s = format!("bs{c}");
        doc.boundary.push(n.clone());
        doc.boundary.push(s.clone());
        push_pair(&mut doc, &n, &iid(0, c), Dir::S, false, true);
        push_pair(&mut doc, &s, &iid(rows - 1, c), Dir::N, false, true);
    }
    for r in 0..rows {
        let w = format!("bw{r}");
        let e = format!("be{r}");
        doc.boundary.push(w.clone());
        doc.boundary.push(e.clone());
        push_pair(&mut doc, &w, &iid(r, 0), Dir::E, false, true);
        push_pair(&mut doc, &e, &iid(r, cols - 1), Dir::W, false, true);
    }
    // Internal edges.
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                push_pair(&mut doc, &iid(r, c), &iid(r, c + 1), Dir::E, true, true);
            }
            if r + 1 < rows {
                push_pair(&mut doc, &iid(r, c), &iid(r + 1, c), Dir::S, true, true);
            }
        }
    }
    Network::from_doc(&doc).expect("generated grid is valid")
}

// ---------------------------------------------------------------------------
// Demand
// ---------------------------------------------------------------------------

pub const SLOTS_PER_HOUR: u64 = 3600;

#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    /// Hourly vehicle rates per entry node id; length is a multiple of 24.
    pub rates: BTreeMap<String, Vec<f64>>,
    pub pedestrian_ratio: f64,
    pub days: usize,
}

#[derive(Debug, Deserialize)]
struct DemandRow {
    entry_node: String,
    hour: usize,
    veh_per_hour: f64,
}

pub fn load_demand(csv_text: &str) -> Result<DemandProfile, NetworkError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let mut rows = Vec::new();
    for (line, rec) in reader.deserialize::<DemandRow>().enumerate() {
        let row = rec.map_err(|e| NetworkError::Parse(format!("row {}: {e}", line + 1)))?;
        if !row.veh_per_hour.is_finite() || row.veh_per_hour < 0.0 {
            return Err(NetworkError::Range {
                element: format!("{} hour {}", row.entry_node, row.hour),
                value: row.veh_per_hour,
            });
        }
        rows.push(row);
    }
    let max_hour = rows.iter().map(|r| r.hour).max();
    let days = max_hour.map_or(1, |h| h / 24 + 1);
    let mut rates: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in rows {
        rates.entry(row.entry_node).or_insert_with(|| vec![0.0; days * 24])[row.hour] = row.veh_per_hour;
    }
    Ok(DemandProfile {
        rates,
        pedestrian_ratio: 0.0,
        days,
    })
}

impl DemandProfile {
    pub fn empty() -> Self {
        DemandProfile {
            rates: BTreeMap::new(),
            pedestrian_ratio: 0.0,
            days: 1,
        }
    }

    /// Same hourly rate at every entry node of `net`, all day.
    pub fn uniform(net: &Network, veh_per_hour: f64) -> Self {
        let rates = net
            .entry_nodes
            .iter()
            .map(|&b| (net.boundary[b].clone(), vec![veh_per_hour; 24]))
            .collect();
        DemandProfile {
            rates,
            pedestrian_ratio: 0.0,
            days: 1,
        }
    }

    pub fn with_pedestrian_ratio(mut self, ratio: f64) -> Self {
        self.pedestrian_ratio = ratio;
        self
    }

    pub fn hour_index(&self, slot: u64) -> usize {
        ((slot / SLOTS_PER_HOUR) as usize) % (self.days * 24)
    }

    pub fn veh_per_hour(&self, entry: &str, slot: u64) -> f64 {
        self.rates
            .get(entry)
            .map_or(0.0, |r| r[self.hour_index(slot)])
    }

    pub fn rate_per_slot(&self, entry: &str, slot: u64) -> f64 {
        self.veh_per_hour(entry, slot) / SLOTS_PER_HOUR as f64
    }
}
