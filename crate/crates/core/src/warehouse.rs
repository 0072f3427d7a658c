//! Grid-world warehouse generator.
//!
//! Each cell of an `n × n` grid is a state named `r<row>c<col>`; row 0 is the
//! northern edge and column 0 the western edge. The robot can move in the four
//! compass directions or stop. Moves are deterministic except inside the slip
//! zone, where the robot reaches the intended neighbour with probability
//! `1 - slip` and the neighbour in the slip direction otherwise. Moving off
//! the grid leaves the robot where it is.
//!
//! Cells are labelled `in_<zone>` for every zone containing them and
//! `<dir>_of_<zone>` when the neighbouring cell in the opposite direction
//! belongs to the zone (and the cell itself does not).

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::mdp::{Mdp, MdpBuilder, ReachabilityRequirement, TargetSpec};
use crate::templates::Vocabulary;

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("{origin}:{line}: {message}")]
    Syntax { origin: String, line: usize, message: String },
    #[error("invalid layout: {0}")]
    Invalid(String),
    #[error("{origin}: {source}")]
    Io {
        origin: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Direction {
    North,
    South,
    East,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::North, Direction::South, Direction::East, Direction::West];

    fn delta(self) -> (isize, isize) {
        match self {
            Direction::North => (-1, 0),
            Direction::South => (1, 0),
            Direction::East => (0, 1),
            Direction::West => (0, -1),
        }
    }

    fn opposite(self) -> Direction {
        match self {
            Direction::North => Direction::South,
            Direction::South => Direction::North,
            Direction::East => Direction::West,
            Direction::West => Direction::East,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::North => "north",
            Direction::South => "south",
            Direction::East => "east",
            Direction::West => "west",
        }
    }

    fn action(self) -> &'static str {
        match self {
            Direction::North => "move_north",
            Direction::South => "move_south",
            Direction::East => "move_east",
            Direction::West => "move_west",
        }
    }
}

/// Where slipping pushes the robot relative to the intended direction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum SlipRule {
    /// South slips east, east north, north west, west south.
    #[default]
    Counterclockwise,
    /// South slips west, west north, north east, east south.
    Clockwise,
}

impl SlipRule {
    pub fn slip_direction(self, d: Direction) -> Direction {
        use Direction::*;
        match (self, d) {
            (SlipRule::Counterclockwise, South) => East,
            (SlipRule::Counterclockwise, East) => North,
            (SlipRule::Counterclockwise, North) => West,
            (SlipRule::Counterclockwise, West) => South,
            (SlipRule::Clockwise, South) => West,
            (SlipRule::Clockwise, West) => North,
            (SlipRule::Clockwise, North) => East,
            (SlipRule::Clockwise, East) => South,
        }
    }
}

impl fmt::Display for SlipRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SlipRule::Counterclockwise => "counterclockwise",
            SlipRule::Clockwise => "clockwise",
        })
    }
}

/// A named set of cells, given as half-open rectangles `[r0, r1) × [c0, c1)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Zone {
    pub name: String,
    /// Words used in sentences, e.g. "pick-up area".
    pub phrase: String,
    pub rects: Vec<(usize, usize, usize, usize)>,
}

impl Zone {
    pub fn new(name: &str, phrase: &str, rect: (usize, usize, usize, usize)) -> Self {
        Zone { name: name.into(), phrase: phrase.into(), rects: vec![rect] }
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.rects.iter().any(|&(r0, c0, r1, c1)| r0 <= r && r < r1 && c0 <= c && c < c1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridLayout {
    pub n: usize,
    pub start: (usize, usize),
    pub slip: f64,
    pub slip_rule: SlipRule,
    /// Zone whose cells make moves slippery.
    pub slip_zone: Option<String>,
    /// Zone whose cells are the targets of the requirement.
    pub target_zone: String,
    pub zones: Vec<Zone>,
}

pub const CHARGING_STATION: &str = "charging_station";
pub const PICK_UP_AREA: &str = "pick_up_area";
pub const DELIVERY_AREA: &str = "delivery_area";
pub const HUMAN_ZONE: &str = "human_zone";
pub const MAGNETIC_FIELD: &str = "magnetic_field";

/// Scales `[f0, f1)` of `n` to a non-empty cell range.
fn span(n: usize, f0: f64, f1: f64) -> (usize, usize) {
    let a = ((f0 * n as f64).round() as usize).min(n - 1);
    let b = ((f1 * n as f64).round() as usize).clamp(a + 1, n);
    (a, b)
}

impl GridLayout {
    /// The default warehouse: charging station in the north-west corner where
    /// the robot starts, a magnetic field south of it, the human zone
    /// south-east of the field, the pick-up area in the south-west and the
    /// delivery area in the north-east. Zone sizes scale with `n`.
    pub fn default_for(n: usize) -> GridLayout {
        let rect = |rows: (f64, f64), cols: (f64, f64)| {
            let (r0, r1) = span(n, rows.0, rows.1);
            let (c0, c1) = span(n, cols.0, cols.1);
            (r0, c0, r1, c1)
        };
        GridLayout {
            n,
            start: (0, 0),
            slip: 0.1,
            slip_rule: SlipRule::default(),
            slip_zone: Some(MAGNETIC_FIELD.into()),
            target_zone: HUMAN_ZONE.into(),
            zones: vec![
                Zone::new(CHARGING_STATION, "charging station", rect((0.0, 0.2), (0.0, 0.2))),
                Zone::new(PICK_UP_AREA, "pick-up area", rect((0.7, 0.9), (0.0, 0.2))),
                Zone::new(DELIVERY_AREA, "delivery area", rect((0.0, 0.2), (0.7, 0.9))),
                Zone::new(HUMAN_ZONE, "human zone", rect((0.6, 0.8), (0.4, 0.6))),
                Zone::new(MAGNETIC_FIELD, "magnetic field", rect((0.2, 0.6), (0.0, 0.4))),
            ],
        }
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        let bad = |m: String| Err(LayoutError::Invalid(m));
        if self.n < 2 {
            return bad(format!("grid side must be at least 2 (got {})", self.n));
        }
        if self.start.0 >= self.n || self.start.1 >= self.n {
            return bad(format!("start cell {:?} is outside the grid", self.start));
        }
        if !(0.0..0.5).contains(&self.slip) {
            return bad(format!("slip must lie in [0, 0.5) (got {})", self.slip));
        }
        let mut names = BTreeSet::new();
        for z in &self.zones {
            if !names.insert(z.name.as_str()) {
                return bad(format!("zone `{}` defined twice", z.name));
            }
            if z.name.is_empty() || z.name.contains(char::is_whitespace) {
                return bad(format!("bad zone name `{}`", z.name));
            }
            for &(r0, c0, r1, c1) in &z.rects {
                if r0 >= r1 || c0 >= c1 || r1 > self.n || c1 > self.n {
                    return bad(format!("zone `{}` rectangle {r0} {c0} {r1} {c1} is empty or out of bounds", z.name));
                }
            }
        }
        for needed in self.slip_zone.iter().chain(std::iter::once(&self.target_zone)) {
            if !names.contains(needed.as_str()) {
                return bad(format!("zone `{needed}` is not defined"));
            }
        }
        Ok(())
    }

    fn zone(&self, name: &str) -> Option<&Zone> {
        self.zones.iter().find(|z| z.name == name)
    }

    fn neighbour(&self, r: usize, c: usize, d: Direction) -> (usize, usize) {
        let (dr, dc) = d.delta();
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr < 0 || nc < 0 || nr >= self.n as isize || nc >= self.n as isize {
            (r, c)
        } else {
            (nr as usize, nc as usize)
        }
    }
}

pub fn cell_name(r: usize, c: usize) -> String {
    format!("r{r}c{c}")
}

const KINDS: [Option<Direction>; 5] =
    [None, Some(Direction::North), Some(Direction::South), Some(Direction::East), Some(Direction::West)];

fn prop_name(zone: &Zone, kind: Option<Direction>) -> String {
    match kind {
        None => format!("in_{}", zone.name),
        Some(d) => format!("{}_of_{}", d.name(), zone.name),
    }
}

fn prop_phrase(zone: &Zone, kind: Option<Direction>) -> String {
    match kind {
        None => format!("in {}", zone.phrase),
        Some(d) => format!("{} of {}", d.name(), zone.phrase),
    }
}

/// A generated warehouse model.
#[derive(Clone, Debug)]
pub struct Warehouse {
    pub mdp: Mdp,
    pub vocabulary: Vocabulary,
    /// Name of the proposition marking the target cells.
    pub target_prop: String,
}

impl Warehouse {
    pub fn requirement(&self, lambda: f64) -> ReachabilityRequirement {
        let p = self.mdp.prop_by_name(&self.target_prop).expect("target proposition exists");
        ReachabilityRequirement::new(TargetSpec::Proposition(p), lambda).expect("threshold in [0, 1)")
    }
}

pub fn generate_grid(layout: &GridLayout) -> Result<Warehouse, LayoutError> {
    layout.validate()?;
    let n = layout.n;
    let slip_zone = layout.slip_zone.as_deref().and_then(|z| layout.zone(z));

    // Which (zone, kind) labels each cell.
    let labels_of = |r: usize, c: usize| -> Vec<(usize, Option<Direction>)> {
        let mut out = Vec::new();
        for (zi, z) in layout.zones.iter().enumerate() {
            if z.contains(r, c) {
                out.push((zi, None));
                continue;
            }
            for d in Direction::ALL {
                let (nr, nc) = layout.neighbour(r, c, d.opposite());
                if (nr, nc) != (r, c) && z.contains(nr, nc) {
                    out.push((zi, Some(d)));
                }
            }
        }
        out
    };
    let mut used = BTreeSet::new();
    for r in 0..n {
        for c in 0..n {
            for (zi, kind) in labels_of(r, c) {
                let k = KINDS.iter().position(|&x| x == kind).expect("known kind");
                used.insert((zi, k));
            }
        }
    }

    let mut b = MdpBuilder::new();
    for r in 0..n {
        for c in 0..n {
            b.state(&cell_name(r, c));
        }
    }
    b.initial(&cell_name(layout.start.0, layout.start.1));
    let moves = [Direction::East, Direction::South, Direction::West, Direction::North];
    for d in moves {
        b.action(d.action());
    }
    b.action("stop");
    let mut vocabulary = Vocabulary::new();
    for &(zi, k) in &used {
        let z = &layout.zones[zi];
        let p = b.prop(&prop_name(z, KINDS[k]));
        vocabulary.set_prop(p, prop_phrase(z, KINDS[k]));
    }
    if !layout.zone(&layout.target_zone).is_some_and(|z| (0..n).any(|r| (0..n).any(|c| z.contains(r, c)))) {
        return Err(LayoutError::Invalid(format!("target zone `{}` has no cells", layout.target_zone)));
    }

    for r in 0..n {
        for c in 0..n {
            let here = cell_name(r, c);
            let slippery = slip_zone.is_some_and(|z| z.contains(r, c)) && layout.slip > 0.0;
            for d in moves {
                let intended = layout.neighbour(r, c, d);
                if slippery {
                    let sideways = layout.neighbour(r, c, layout.slip_rule.slip_direction(d));
                    if sideways == intended {
                        b.transition(&here, d.action(), &cell_name(intended.0, intended.1), 1.0);
                    } else {
                        b.transition(&here, d.action(), &cell_name(intended.0, intended.1), 1.0 - layout.slip);
                        b.transition(&here, d.action(), &cell_name(sideways.0, sideways.1), layout.slip);
                    }
                } else {
                    b.transition(&here, d.action(), &cell_name(intended.0, intended.1), 1.0);
                }
            }
            b.transition(&here, "stop", &here, 1.0);
            for (zi, kind) in labels_of(r, c) {
                b.label(&here, &prop_name(&layout.zones[zi], kind));
            }
        }
    }
    let mdp = b.build().map_err(|e| LayoutError::Invalid(e.to_string()))?;
    for d in moves {
        let a = mdp.action_by_name(d.action()).expect("action exists");
        vocabulary.set_action(a, format!("moves {}", d.name()));
    }
    vocabulary.set_action(mdp.action_by_name("stop").expect("action exists"), "stops");
    let target_prop = prop_name(layout.zone(&layout.target_zone).expect("validated"), None);
    Ok(Warehouse { mdp, vocabulary, target_prop })
}

/// Parses a layout file:
///
/// ```text
/// n 10
/// start 0 0
/// slip 0.1
/// slip_rule counterclockwise
/// slip_zone magnetic_field
/// target_zone human_zone
/// zone human_zone 6 4 8 6 "human zone"
/// ```
///
/// Zone lines give `r0 c0 r1 c1` of a half-open rectangle; repeating a zone
/// name adds another rectangle. Unset keys take the values of
/// [`GridLayout::default_for`] except that zones are only those listed.
pub fn parse_layout(text: &str, origin: &str) -> Result<GridLayout, LayoutError> {
    let syntax = |line: usize, message: String| LayoutError::Syntax { origin: origin.into(), line, message };
    let mut n = None;
    let mut start = None;
    let mut slip = None;
    let mut slip_rule = None;
    let mut slip_zone: Option<Option<String>> = None;
    let mut target_zone = None;
    let mut zones: Vec<Zone> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (body, phrase) = match content.split_once('"') {
            Some((b, rest)) => {
                let p = rest.strip_suffix('"').ok_or_else(|| syntax(line, "unterminated quoted phrase".into()))?;
                (b.trim(), Some(p.to_string()))
            }
            None => (content, None),
        };
        let w: Vec<&str> = body.split_whitespace().collect();
        let num = |s: &str| s.parse::<usize>().map_err(|_| syntax(line, format!("expected a cell index, found `{s}`")));
        match w.as_slice() {
            ["n", v] => n = Some(num(v)?),
            ["start", r, c] => start = Some((num(r)?, num(c)?)),
            ["slip", v] => {
                slip = Some(v.parse::<f64>().map_err(|_| syntax(line, format!("bad slip probability `{v}`")))?)
            }
            ["slip_rule", "clockwise"] => slip_rule = Some(SlipRule::Clockwise),
            ["slip_rule", "counterclockwise"] => slip_rule = Some(SlipRule::Counterclockwise),
            ["slip_zone", "none"] => slip_zone = Some(None),
            ["slip_zone", z] => slip_zone = Some(Some(z.to_string())),
            ["target_zone", z] => target_zone = Some(z.to_string()),
            ["zone", name, r0, c0, r1, c1] => {
                let rect = (num(r0)?, num(c0)?, num(r1)?, num(c1)?);
                match zones.iter_mut().find(|z| z.name == *name) {
                    Some(z) => {
                        z.rects.push(rect);
                        if let Some(p) = phrase {
                            z.phrase = p;
                        }
                    }
                    None => {
                        let p = phrase.unwrap_or_else(|| name.replace("pick_up", "pick-up").replace('_', " "));
                        zones.push(Zone { name: name.to_string(), phrase: p, rects: vec![rect] });
                    }
                }
            }
            _ => return Err(syntax(line, format!("unrecognised line `{content}`"))),
        }
    }
    let n = n.ok_or_else(|| syntax(text.lines().count() + 1, "missing `n`".into()))?;
    let defaults = GridLayout::default_for(n.max(2));
    let layout = GridLayout {
        n,
        start: start.unwrap_or(defaults.start),
        slip: slip.unwrap_or(defaults.slip),
        slip_rule: slip_rule.unwrap_or(defaults.slip_rule),
        slip_zone: slip_zone.unwrap_or(defaults.slip_zone),
        target_zone: target_zone.unwrap_or(defaults.target_zone),
        zones: if zones.is_empty() { defaults.zones } else { zones },
    };
    layout.validate()?;
    Ok(layout)
}

pub fn read_layout(path: &Path) -> Result<GridLayout, LayoutError> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| LayoutError::Io { origin: origin.clone(), source })?;
    parse_layout(&text, &origin)
}

/// Serialises a layout in the format read by [`parse_layout`].
pub fn write_layout(layout: &GridLayout) -> String {
    let mut out = format!(
        "n {}\nstart {} {}\nslip {}\nslip_rule {}\nslip_zone {}\ntarget_zone {}\n",
        layout.n,
        layout.start.0,
        layout.start.1,
        layout.slip,
        layout.slip_rule,
        layout.slip_zone.as_deref().unwrap_or("none"),
        layout.target_zone
    );
    for z in &layout.zones {
        for &(r0, c0, r1, c1) in &z.rects {
            out.push_str(&format!("zone {} {r0} {c0} {r1} {c1} \"{}\"\n", z.name, z.phrase));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::StateId;

    #[test]
    fn state_count_is_n_squared() {
        for n in [3, 5, 10] {
            let w = generate_grid(&GridLayout::default_for(n)).unwrap();
            assert_eq!(w.mdp.num_states(), n * n);
            assert!(w.mdp.validate().is_valid());
        }
    }

    #[test]
    fn deterministic_without_slip_zone() {
        let mut layout = GridLayout::default_for(3);
        layout.slip_zone = None;
        let w = generate_grid(&layout).unwrap();
        for s in w.mdp.states() {
            for c in w.mdp.choices(s) {
                assert_eq!(c.successors.len(), 1);
            }
        }
    }

    #[test]
    fn slip_goes_sideways() {
        let layout = GridLayout::default_for(10);
        let w = generate_grid(&layout).unwrap();
        let m = &w.mdp;
        // r3c1 lies in the magnetic field: south slips east.
        let s = m.state_by_name("r3c1").unwrap();
        let c = m.choice(s, m.action_by_name("move_south").unwrap()).unwrap();
        let named: Vec<(&str, f64)> = c.successors.iter().map(|&(t, p)| (m.state_name(t), p)).collect();
        assert_eq!(named, vec![("r3c2", 0.1), ("r4c1", 0.9)]);
        // Off-edge moves stay put.
        let corner = m.state_by_name("r9c9").unwrap();
        let c = m.choice(corner, m.action_by_name("move_east").unwrap()).unwrap();
        assert_eq!(c.successors, vec![(corner, 1.0)]);
    }

    #[test]
    fn relative_position_labels() {
        let w = generate_grid(&GridLayout::default_for(10)).unwrap();
        let m = &w.mdp;
        let labels = |name: &str| -> Vec<&str> {
            let s: StateId = m.state_by_name(name).unwrap();
            m.labels(s).iter().map(|&p| m.prop_name(p)).collect()
        };
        assert_eq!(labels("r0c0"), vec!["in_charging_station"]);
        // r2c0 is in the field, directly south of the charging station.
        assert!(labels("r2c0").contains(&"south_of_charging_station"));
        assert!(labels("r2c0").contains(&"in_magnetic_field"));
        assert!(labels("r5c4").contains(&"north_of_human_zone"));
        assert!(labels("r5c4").contains(&"east_of_magnetic_field"));
        assert!(m.prop_by_name("west_of_pick_up_area").is_none());
        assert_eq!(
            w.vocabulary.prop_phrase(m.prop_by_name("north_of_pick_up_area").unwrap()),
            Some("north of pick-up area")
        );
    }

    #[test]
    fn layout_text_round_trips() {
        let layout = GridLayout::default_for(10);
        let parsed = parse_layout(&write_layout(&layout), "layout").unwrap();
        assert_eq!(parsed, layout);
    }

    #[test]
    fn invalid_layouts() {
        let mut layout = GridLayout::default_for(10);
        layout.start = (10, 0);
        assert!(generate_grid(&layout).is_err());
        let mut layout = GridLayout::default_for(10);
        layout.slip = 0.5;
        assert!(layout.validate().is_err());
        assert!(matches!(parse_layout("n 4\nfoo\n", "x"), Err(LayoutError::Syntax { line: 2, .. })));
    }
}
