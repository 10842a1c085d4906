//! Evacuation arena: outline, exit gates, hexagonal cell partition and the
//! static cell-to-exit distances consumed by the controller.
//!
//! Scenarios are TOML documents (see `scenarios/madrid_arena.scn`). Loading
//! validates the schema, places every gate on the arena outline, and checks
//! that the hexagonal cells tile the walkable area: no two hexagons overlap,
//! and every walkable point falls inside the hexagon of its nearest center.
//! Cells are therefore the nearest-center (Voronoi) regions of the lattice,
//! with ties resolved towards the lowest cell id.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Polygon, Segment, Vec2};

/// The shipped reference arena document.
pub const REFERENCE_SCENARIO: &str = include_str!("../scenarios/madrid_arena.scn");

/// Index of a cell in [`CellGrid::cells`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId(pub usize);

/// Index of an exit gate in [`ScenarioLayout::exits`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExitId(pub usize);

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for ExitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HexOrientation {
    /// Vertices at top and bottom, flat sides left and right.
    #[default]
    Pointy,
    /// Flat top and bottom.
    Flat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitGate {
    /// Identifier from the scenario document (e.g. 1 for Ex1).
    pub id: u32,
    /// Gate midpoint.
    pub position: Vec2,
    pub width: f64,
    pub critical_density: f64,
    /// Ascending density thresholds used by the safety model.
    pub safety_thresholds: [f64; 3],
    /// Where external inflow enters, if this gate admits any.
    pub entry_point: Option<Vec2>,
    /// The opening on the arena outline.
    pub segment: Segment,
    /// Unit normal pointing into the arena.
    pub inward_normal: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: CellId,
    pub center: Vec2,
    pub vertices: [Vec2; 6],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    pub cells: Vec<Cell>,
    pub width_flat_to_flat: f64,
    pub orientation: HexOrientation,
}

impl CellGrid {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn circumradius(&self) -> f64 {
        self.width_flat_to_flat / 3f64.sqrt()
    }

    /// Nearest cell center, lowest id on exact ties. No walkability check.
    pub fn nearest(&self, p: Vec2) -> CellId {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.cells.iter().enumerate() {
            let d = c.center.distance_sq(p);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        CellId(best)
    }

    /// Whether `p` lies inside the hexagon of `cell` (within `tol` meters).
    pub fn hexagon_contains(&self, cell: CellId, p: Vec2, tol: f64) -> bool {
        let d = p - self.cells[cell.0].center;
        let (u, v) = match self.orientation {
            HexOrientation::Pointy => (d.x.abs(), d.y.abs()),
            HexOrientation::Flat => (d.y.abs(), d.x.abs()),
        };
        let r = self.width_flat_to_flat / 2.0 + tol;
        u <= r && 0.5 * u + 0.5 * 3f64.sqrt() * v <= r
    }
}

fn hexagon_vertices(center: Vec2, width: f64, orientation: HexOrientation) -> [Vec2; 6] {
    let radius = width / 3f64.sqrt();
    let offset = match orientation {
        HexOrientation::Pointy => 30f64,
        HexOrientation::Flat => 0f64,
    };
    std::array::from_fn(|k| {
        let a = (offset + 60.0 * k as f64).to_radians();
        center + Vec2::new(a.cos(), a.sin()) * radius
    })
}

/// Initial population as declared by the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub count: usize,
    pub speed_min: f64,
    pub speed_max: f64,
}

/// A validated, immutable evacuation arena.
#[derive(Debug, Clone)]
pub struct ScenarioLayout {
    pub name: String,
    pub walkable_polygon: Polygon,
    pub obstacles: Vec<Polygon>,
    pub exits: Vec<ExitGate>,
    pub grid: CellGrid,
    /// Meters, indexed `[cell][exit]`.
    pub distance_matrix: Vec<Vec<f64>>,
    pub max_distance: f64,
    pub max_width: f64,
    /// Outline and obstacle edges with the gate openings removed.
    pub walls: Vec<Segment>,
    pub population: PopulationSpec,
}

// ---- document schema ----

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    #[serde(default)]
    name: Option<String>,
    arena: ArenaDoc,
    exits: Vec<ExitDoc>,
    grid: GridDoc,
    population: PopulationSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArenaDoc {
    polygon: Vec<Vec2>,
    #[serde(default)]
    obstacles: Vec<Vec<Vec2>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExitDoc {
    id: u32,
    position: Vec2,
    width_m: f64,
    critical_density: f64,
    #[serde(default)]
    thresholds: Option<[f64; 3]>,
    #[serde(default)]
    entry_point: Option<Vec2>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridDoc {
    cell_width_m: f64,
    #[serde(default)]
    orientation: HexOrientation,
    #[serde(default)]
    centers: Option<Vec<Vec2>>,
    #[serde(default)]
    origin: Option<Vec2>,
}

/// Parses and validates a scenario document.
pub fn load_scenario(doc: &str) -> Result<ScenarioLayout> {
    let doc: ScenarioDoc = toml::from_str(doc).map_err(|e| Error::Parse(e.to_string()))?;
    build_layout(doc)
}

impl ScenarioLayout {
    /// The shipped reference arena (8 exits, 42 cells).
    pub fn reference() -> ScenarioLayout {
        load_scenario(REFERENCE_SCENARIO).expect("reference scenario is valid")
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<ScenarioLayout> {
        let text = std::fs::read_to_string(path)?;
        load_scenario(&text)
    }

    pub fn num_cells(&self) -> usize {
        self.grid.len()
    }

    pub fn num_exits(&self) -> usize {
        self.exits.len()
    }

    pub fn walkable_area(&self) -> f64 {
        self.walkable_polygon.area() - self.obstacles.iter().map(Polygon::area).sum::<f64>()
    }

    pub fn is_walkable(&self, p: Vec2) -> bool {
        self.walkable_polygon.contains(p) && !self.obstacles.iter().any(|o| o.contains_strict(p))
    }

    /// Ground-truth cell of `p`: nearest center, lowest id on ties.
    pub fn locate_cell_exact(&self, p: Vec2) -> Result<CellId> {
        if !self.is_walkable(p) {
            return Err(Error::OutOfBounds { x: p.x, y: p.y });
        }
        Ok(self.grid.nearest(p))
    }

    /// `distance_matrix[c][j] / max_distance`, in (0, 1].
    pub fn normalized_distance(&self, c: CellId, j: ExitId) -> Result<f64> {
        self.check_cell(c)?;
        self.check_exit(j)?;
        Ok(self.distance_matrix[c.0][j.0] / self.max_distance)
    }

    /// `WIDTH_j / max(WIDTH)`, in (0, 1].
    pub fn normalized_width(&self, j: ExitId) -> Result<f64> {
        self.check_exit(j)?;
        Ok(self.exits[j.0].width / self.max_width)
    }

    pub fn check_cell(&self, c: CellId) -> Result<()> {
        if c.0 < self.num_cells() {
            Ok(())
        } else {
            Err(Error::InvalidId { kind: "cell", id: c.0, len: self.num_cells() })
        }
    }

    pub fn check_exit(&self, j: ExitId) -> Result<()> {
        if j.0 < self.num_exits() {
            Ok(())
        } else {
            Err(Error::InvalidId { kind: "exit", id: j.0, len: self.num_exits() })
        }
    }

    /// Exit index for a document id (e.g. 3 for Ex3).
    pub fn exit_by_label(&self, id: u32) -> Option<ExitId> {
        self.exits.iter().position(|e| e.id == id).map(ExitId)
    }
}

fn build_layout(doc: ScenarioDoc) -> Result<ScenarioLayout> {
    let ScenarioDoc { name, arena, exits, grid, population } = doc;

    if arena.polygon.len() < 3 {
        return Err(Error::schema("arena.polygon", "needs at least 3 vertices"));
    }
    if arena.polygon.iter().any(|v| !v.is_finite()) {
        return Err(Error::schema("arena.polygon", "non-finite coordinate"));
    }
    let outline = Polygon::new(arena.polygon);
    if !outline.is_simple() || outline.area() <= 0.0 {
        return Err(Error::Geometry("arena.polygon is not a simple polygon".into()));
    }

    let mut obstacles = Vec::with_capacity(arena.obstacles.len());
    for (i, verts) in arena.obstacles.into_iter().enumerate() {
        let field = format!("arena.obstacles[{i}]");
        if verts.len() < 3 {
            return Err(Error::schema(field, "needs at least 3 vertices"));
        }
        let poly = Polygon::new(verts);
        if !poly.is_simple() || !poly.vertices.iter().all(|&v| outline.contains(v)) {
            return Err(Error::Geometry(format!("{field} must be a simple polygon inside the arena")));
        }
        obstacles.push(poly);
    }

    validate_population(&population)?;

    if exits.is_empty() {
        return Err(Error::schema("exits", "at least one exit is required"));
    }
    let mut gates = Vec::with_capacity(exits.len());
    for (i, e) in exits.into_iter().enumerate() {
        gates.push(build_gate(i, e, &outline)?);
    }
    for i in 0..gates.len() {
        if gates[..i].iter().any(|g| g.id == gates[i].id) {
            return Err(Error::schema(format!("exits[{i}].id"), format!("duplicate id {}", gates[i].id)));
        }
        for j in 0..i {
            let (a, b) = (&gates[i].segment, &gates[j].segment);
            let gap = a.midpoint().distance(b.midpoint());
            if gap < (a.length() + b.length()) / 2.0 && a.intersect(b).is_some() {
                return Err(Error::Geometry(format!("exits {} and {} overlap", gates[j].id, gates[i].id)));
            }
        }
    }

    let cell_grid = build_grid(grid, &outline, &obstacles)?;
    check_tiling(&cell_grid, &outline, &obstacles)?;

    let distance_matrix: Vec<Vec<f64>> = cell_grid
        .cells
        .iter()
        .map(|c| gates.iter().map(|g| c.center.distance(g.position)).collect())
        .collect();
    for (c, row) in distance_matrix.iter().enumerate() {
        if let Some(j) = row.iter().position(|&d| d <= 0.0) {
            return Err(Error::Geometry(format!(
                "cell {c} center coincides with exit {}",
                gates[j].id
            )));
        }
    }
    let max_distance = distance_matrix.iter().flatten().copied().fold(0.0, f64::max);
    let max_width = gates.iter().map(|g| g.width).fold(0.0, f64::max);

    let mut walls = wall_segments(&outline, &gates);
    for o in &obstacles {
        walls.extend(o.edges());
    }

    Ok(ScenarioLayout {
        name: name.unwrap_or_else(|| "unnamed".to_string()),
        walkable_polygon: outline,
        obstacles,
        exits: gates,
        grid: cell_grid,
        distance_matrix,
        max_distance,
        max_width,
        walls,
        population,
    })
}

fn validate_population(p: &PopulationSpec) -> Result<()> {
    if !(p.speed_min > 0.0 && p.speed_min.is_finite()) {
        return Err(Error::schema("population.speed_min", "must be positive"));
    }
    if !(p.speed_max >= p.speed_min && p.speed_max.is_finite()) {
        return Err(Error::schema("population.speed_max", "must be >= speed_min"));
    }
    Ok(())
}

fn build_gate(i: usize, e: ExitDoc, outline: &Polygon) -> Result<ExitGate> {
    let field = |f: &str| format!("exits[{i}].{f}");
    if !(e.width_m > 0.0 && e.width_m.is_finite()) {
        return Err(Error::schema(field("width_m"), "must be positive"));
    }
    if !(e.critical_density > 0.0 && e.critical_density.is_finite()) {
        return Err(Error::schema(field("critical_density"), "must be positive"));
    }
    let cd = e.critical_density;
    let thresholds = e.thresholds.unwrap_or([0.5 * cd, 0.8 * cd, cd]);
    if !(thresholds[0] >= 0.0 && thresholds[0] < thresholds[1] && thresholds[1] < thresholds[2]) {
        return Err(Error::schema(field("thresholds"), "must be non-negative and strictly ascending"));
    }

    let edge = outline
        .edges()
        .filter(|s| s.distance(e.position) <= 1e-3)
        .min_by(|a, b| a.distance(e.position).total_cmp(&b.distance(e.position)))
        .ok_or_else(|| Error::schema(field("position"), "gate midpoint must lie on the arena outline"))?;
    let dir = (edge.b - edge.a).normalized().expect("non-degenerate edge");
    let half = e.width_m / 2.0;
    let along = (e.position - edge.a).dot(dir);
    if along < half - 1e-9 || along + half > edge.length() + 1e-9 {
        return Err(Error::schema(field("width_m"), "gate does not fit on its outline edge"));
    }
    let mid = edge.a + dir * along;
    let segment = Segment::new(mid - dir * half, mid + dir * half);
    let mut normal = dir.perp();
    if !outline.contains_strict(mid + normal * 1e-3) {
        normal = -normal;
    }

    if let Some(ep) = e.entry_point {
        if !outline.contains(ep) {
            return Err(Error::schema(field("entry_point"), "must lie inside the arena"));
        }
    }

    Ok(ExitGate {
        id: e.id,
        position: mid,
        width: e.width_m,
        critical_density: cd,
        safety_thresholds: thresholds,
        entry_point: e.entry_point,
        segment,
        inward_normal: normal,
    })
}

fn build_grid(doc: GridDoc, outline: &Polygon, obstacles: &[Polygon]) -> Result<CellGrid> {
    let w = doc.cell_width_m;
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::schema("grid.cell_width_m", "must be positive"));
    }
    let centers = match doc.centers {
        Some(c) if c.is_empty() => return Err(Error::schema("grid.centers", "must not be empty")),
        Some(c) => c,
        None => lattice_centers(w, doc.orientation, doc.origin, outline, obstacles),
    };
    if centers.iter().any(|c| !c.is_finite()) {
        return Err(Error::schema("grid.centers", "non-finite coordinate"));
    }
    if centers.is_empty() {
        return Err(Error::Geometry("generated lattice has no cell inside the arena".into()));
    }
    let cells = centers
        .into_iter()
        .enumerate()
        .map(|(i, center)| Cell {
            id: CellId(i),
            center,
            vertices: hexagon_vertices(center, w, doc.orientation),
        })
        .collect();
    Ok(CellGrid { cells, width_flat_to_flat: w, orientation: doc.orientation })
}

/// Hexagonal lattice cells that claim at least one walkable point, row-major.
fn lattice_centers(
    w: f64,
    orientation: HexOrientation,
    origin: Option<Vec2>,
    outline: &Polygon,
    obstacles: &[Polygon],
) -> Vec<Vec2> {
    let (lo, hi) = outline.bounding_box();
    let origin = origin.unwrap_or(lo);
    let r = w / 3f64.sqrt();
    let (col_step, row_step) = (w, 1.5 * r);
    let span = (hi - lo).norm() + (origin - lo).norm() + w;
    let n = (span / row_step).ceil() as i64 + 1;
    let m = (span / col_step).ceil() as i64 + 1;
    let mut candidates = Vec::new();
    for row in -n..=n {
        for col in -m..=m {
            let shift = if row.rem_euclid(2) == 1 { 0.5 * col_step } else { 0.0 };
            let (u, v) = (col as f64 * col_step + shift, row as f64 * row_step);
            let p = match orientation {
                HexOrientation::Pointy => origin + Vec2::new(u, v),
                HexOrientation::Flat => origin + Vec2::new(v, u),
            };
            if outline.contains(p) || outline.closest_boundary_point(p).distance(p) <= r {
                candidates.push(p);
            }
        }
    }
    let mut used = vec![false; candidates.len()];
    for p in walkable_samples(outline, obstacles, (w / 24.0).min(0.25)) {
        let mut best = (f64::INFINITY, 0);
        for (i, c) in candidates.iter().enumerate() {
            let d = c.distance_sq(p);
            if d < best.0 {
                best = (d, i);
            }
        }
        if best.0.is_finite() {
            used[best.1] = true;
        }
    }
    let mut out: Vec<Vec2> = candidates
        .into_iter()
        .zip(used)
        .filter_map(|(c, u)| u.then_some(c))
        .collect();
    out.sort_by(|a, b| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)));
    out
}

/// Outline vertices, points along every edge, and an interior lattice of
/// spacing `step`, restricted to the walkable area.
fn walkable_samples(outline: &Polygon, obstacles: &[Polygon], step: f64) -> Vec<Vec2> {
    let (lo, hi) = outline.bounding_box();
    let mut samples: Vec<Vec2> = outline.vertices.clone();
    for e in outline.edges() {
        let k = (e.length() / step).ceil() as usize;
        samples.extend((0..k).map(|i| e.a + (e.b - e.a) * (i as f64 / k as f64)));
    }
    let nx = ((hi.x - lo.x) / step).ceil() as usize;
    let ny = ((hi.y - lo.y) / step).ceil() as usize;
    for ix in 0..=nx {
        for iy in 0..=ny {
            samples.push(Vec2::new(lo.x + ix as f64 * step, lo.y + iy as f64 * step));
        }
    }
    samples.retain(|&p| outline.contains(p) && !obstacles.iter().any(|o| o.contains_strict(p)));
    samples
}

fn check_tiling(grid: &CellGrid, outline: &Polygon, obstacles: &[Polygon]) -> Result<()> {
    let w = grid.width_flat_to_flat;
    for (i, a) in grid.cells.iter().enumerate() {
        for b in &grid.cells[..i] {
            if a.center.distance(b.center) < w * (1.0 - 1e-5) {
                return Err(Error::Geometry(format!(
                    "cells {} and {} overlap (centers closer than the {w} m cell width)",
                    b.id, a.id
                )));
            }
        }
    }
    for p in walkable_samples(outline, obstacles, (w / 24.0).min(0.25)) {
        let c = grid.nearest(p);
        if !grid.hexagon_contains(c, p, 1e-6 * w.max(1.0)) {
            return Err(Error::Geometry(format!(
                "walkable point ({:.2}, {:.2}) is not covered by any cell",
                p.x, p.y
            )));
        }
    }
    Ok(())
}

/// Outline edges with the gate openings cut out.
fn wall_segments(outline: &Polygon, gates: &[ExitGate]) -> Vec<Segment> {
    let mut walls = Vec::new();
    for edge in outline.edges() {
        let len = edge.length();
        let mut cuts: Vec<(f64, f64)> = gates
            .iter()
            .filter(|g| edge.distance(g.segment.a) < 1e-6 && edge.distance(g.segment.b) < 1e-6)
            .map(|g| {
                let (ta, tb) = (edge.project(g.segment.a), edge.project(g.segment.b));
                (ta.min(tb), ta.max(tb))
            })
            .collect();
        cuts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut t = 0.0;
        for (a, b) in cuts {
            if (a - t) * len > 1e-9 {
                walls.push(Segment::new(edge.a + (edge.b - edge.a) * t, edge.a + (edge.b - edge.a) * a));
            }
            t = t.max(b);
        }
        if (1.0 - t) * len > 1e-9 {
            walls.push(Segment::new(edge.a + (edge.b - edge.a) * t, edge.b));
        }
    }
    walls
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    pub(crate) const ONE_CELL: &str = r#"
        [arena]
        polygon = [[-5.0, -5.0], [5.0, -5.0], [5.0, 5.0], [-5.0, 5.0]]
        [[exits]]
        id = 1
        position = [0.0, -5.0]
        width_m = 2.0
        critical_density = 2.2
        [grid]
        cell_width_m = 14.0
        centers = [[0.0, 0.0]]
        [population]
        count = 1
        speed_min = 1.3
        speed_max = 1.3
    "#;

    #[test]
    fn reference_has_eight_exits_and_42_cells() {
        let layout = ScenarioLayout::reference();
        assert_eq!(layout.num_exits(), 8);
        assert_eq!(layout.num_cells(), 42);
        assert!(layout.exits.iter().all(|e| (2.5..=6.0).contains(&e.width)));
        assert_eq!(layout.max_width, 6.0);
        assert_eq!(layout.population.count, 3400);
        let inflow_gates: Vec<u32> = layout
            .exits
            .iter()
            .filter(|e| e.entry_point.is_some())
            .map(|e| e.id)
            .collect();
        assert_eq!(inflow_gates, vec![1, 2, 3, 4, 6]);
    }

    #[test]
    fn single_pair_distance() {
        let layout = load_scenario(ONE_CELL).unwrap();
        assert_eq!(layout.distance_matrix, vec![vec![5.0]]);
        assert_eq!(layout.normalized_distance(CellId(0), ExitId(0)).unwrap(), 1.0);
    }

    #[test]
    fn overlapping_cells_are_rejected() {
        let doc = ONE_CELL.replace("centers = [[0.0, 0.0]]", "centers = [[0.0, 0.0], [3.0, 0.0]]");
        assert!(matches!(load_scenario(&doc), Err(Error::Geometry(_))));
    }

    #[test]
    fn uncovered_area_is_rejected() {
        let doc = ONE_CELL.replace("cell_width_m = 14.0", "cell_width_m = 8.0");
        let err = load_scenario(&doc).unwrap_err();
        assert!(matches!(err, Error::Geometry(ref m) if m.contains("not covered")), "{err}");
    }

    #[test]
    fn schema_errors_name_the_field() {
        let doc = ONE_CELL.replace("width_m = 2.0", "");
        let err = load_scenario(&doc).unwrap_err().to_string();
        assert!(err.contains("width_m"), "{err}");

        let doc = ONE_CELL.replace("width_m = 2.0", "width_m = -1.0");
        let err = load_scenario(&doc).unwrap_err().to_string();
        assert!(err.contains("exits[0].width_m"), "{err}");

        let doc = ONE_CELL.replace("critical_density = 2.2", "critical_density = 2.2\nthresholds = [1.0, 0.5, 2.0]");
        let err = load_scenario(&doc).unwrap_err().to_string();
        assert!(err.contains("thresholds"), "{err}");

        let doc = ONE_CELL.replace("position = [0.0, -5.0]", "position = [0.0, -3.0]");
        let err = load_scenario(&doc).unwrap_err().to_string();
        assert!(err.contains("exits[0].position"), "{err}");
    }

    #[test]
    fn default_thresholds_follow_critical_density() {
        let layout = load_scenario(ONE_CELL).unwrap();
        let t = layout.exits[0].safety_thresholds;
        assert!((t[0] - 1.1).abs() < 1e-12 && (t[1] - 1.76).abs() < 1e-12 && t[2] == 2.2);
    }

    #[test]
    fn gate_geometry_and_walls() {
        let layout = load_scenario(ONE_CELL).unwrap();
        let g = &layout.exits[0];
        assert_eq!(g.inward_normal, Vec2::new(0.0, 1.0));
        assert!((g.segment.length() - 2.0).abs() < 1e-12);
        // bottom edge split in two, plus three intact edges
        assert_eq!(layout.walls.len(), 5);
        let wall_len: f64 = layout.walls.iter().map(Segment::length).sum();
        assert!((wall_len - 38.0).abs() < 1e-9);
    }

    #[test]
    fn locate_cell_center_and_tie_break() {
        let layout = ScenarioLayout::reference();
        let c7 = layout.grid.cells[7].center;
        assert_eq!(layout.locate_cell_exact(c7).unwrap(), CellId(7));

        // cells 3 and 4 are horizontal neighbours: their midpoint is equidistant
        let (a, b) = (layout.grid.cells[3].center, layout.grid.cells[4].center);
        let mid = (a + b) * 0.5;
        assert_eq!(a.distance(mid), b.distance(mid));
        assert_eq!(layout.locate_cell_exact(mid).unwrap(), CellId(3));
    }

    #[test]
    fn locate_outside_is_error() {
        let layout = ScenarioLayout::reference();
        let err = layout.locate_cell_exact(Vec2::new(100.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { .. }));
    }

    #[test]
    fn locate_matches_brute_force_scan() {
        let layout = ScenarioLayout::reference();
        let (lo, hi) = layout.walkable_polygon.bounding_box();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 1000 {
            let p = Vec2::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
            if !layout.is_walkable(p) {
                continue;
            }
            let mut best = (f64::INFINITY, usize::MAX);
            for (i, c) in layout.grid.cells.iter().enumerate() {
                let d = ((c.center.x - p.x).powi(2) + (c.center.y - p.y).powi(2)).sqrt();
                if d < best.0 {
                    best = (d, i);
                }
            }
            assert_eq!(layout.locate_cell_exact(p).unwrap(), CellId(best.1));
            checked += 1;
        }
    }

    #[test]
    fn normalized_distances_in_unit_interval_and_order_preserving() {
        let layout = ScenarioLayout::reference();
        let mut hit_one = false;
        for c in 0..layout.num_cells() {
            for j in 0..layout.num_exits() {
                let v = layout.normalized_distance(CellId(c), ExitId(j)).unwrap();
                assert!(v > 0.0 && v <= 1.0);
                hit_one |= v == 1.0;
                for k in 0..layout.num_exits() {
                    let w = layout.normalized_distance(CellId(c), ExitId(k)).unwrap();
                    let (dj, dk) = (layout.distance_matrix[c][j], layout.distance_matrix[c][k]);
                    assert_eq!(dj < dk, v < w);
                }
            }
        }
        assert!(hit_one);
        assert!(layout.normalized_distance(CellId(42), ExitId(0)).is_err());
    }

    #[test]
    fn normalized_distance_arithmetic() {
        let mut layout = load_scenario(ONE_CELL).unwrap();
        layout.distance_matrix[0][0] = 10.0;
        layout.max_distance = 40.0;
        assert_eq!(layout.normalized_distance(CellId(0), ExitId(0)).unwrap(), 0.25);
    }

    #[test]
    fn distance_matrix_is_bit_reproducible() {
        let a = load_scenario(REFERENCE_SCENARIO).unwrap();
        let b = load_scenario(REFERENCE_SCENARIO).unwrap();
        let bits = |l: &ScenarioLayout| -> Vec<u64> {
            l.distance_matrix.iter().flatten().map(|d| d.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn generated_lattice_tiles_a_square() {
        let doc = r#"
            [arena]
            polygon = [[0.0, 0.0], [12.0, 0.0], [12.0, 10.0], [0.0, 10.0]]
            [[exits]]
            id = 1
            position = [7.0, 0.0]
            width_m = 2.0
            critical_density = 2.0
            [grid]
            cell_width_m = 3.0
            origin = [0.0, 0.0]
            [population]
            count = 10
            speed_min = 1.0
            speed_max = 1.5
        "#;
        let layout = load_scenario(doc).unwrap();
        assert!(layout.num_cells() > 10);
        let covered = layout.grid.cells.iter().filter(|c| layout.is_walkable(c.center)).count();
        assert!(covered < layout.num_cells(), "boundary cells straddle the outline");
    }
}
