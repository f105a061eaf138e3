//! Hexagonal cell layout, pilot groups, interference-cancellation clusters and
//! the BS pilot reuse schedule.
//!
//! Cells are pointy-top hexagons addressed by axial coordinates `(q, r)`.
//! Index 0 is the central cell, then rings outward, and inside a ring cells are
//! sorted by the azimuth of their centre, counter-clockwise from east.

use crate::error::{invalid, Error, Result};
use crate::rng::{LinkClass, Streams};
use rand::Rng;

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub axial: (i32, i32),
    pub ring: usize,
    pub center: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HexLayout {
    pub cell_radius: f64,
    pub rings: usize,
    pub cells: Vec<Cell>,
}

pub fn cells_for_rings(rings: usize) -> usize {
    1 + 3 * rings * (rings + 1)
}

/// Inverse of [`cells_for_rings`].
pub fn rings_for_cells(cells: usize) -> Option<usize> {
    (0..)
        .take_while(|&n| cells_for_rings(n) <= cells)
        .find(|&n| cells_for_rings(n) == cells)
}

fn axial_center(q: i32, r: i32, radius: f64) -> Point {
    let (q, r) = (q as f64, r as f64);
    Point::new(SQRT3 * radius * (q + r / 2.0), 1.5 * radius * r)
}

fn hex_distance(q: i32, r: i32) -> usize {
    ((q.abs() + r.abs() + (q + r).abs()) / 2) as usize
}

pub fn build_hex_layout(rings: usize, cell_radius: f64) -> Result<HexLayout> {
    if !(cell_radius > 0.0 && cell_radius.is_finite()) {
        return Err(invalid(
            "cell_radius",
            format!("{cell_radius} must be positive"),
        ));
    }
    let n = rings as i32;
    let mut cells = Vec::with_capacity(cells_for_rings(rings));
    for q in -n..=n {
        for r in -n..=n {
            let ring = hex_distance(q, r);
            if ring <= rings {
                cells.push(Cell {
                    index: 0,
                    axial: (q, r),
                    ring,
                    center: axial_center(q, r, cell_radius),
                });
            }
        }
    }
    let azimuth = |p: &Point| p.y.atan2(p.x).rem_euclid(std::f64::consts::TAU);
    cells.sort_by(|a, b| {
        a.ring
            .cmp(&b.ring)
            .then(azimuth(&a.center).total_cmp(&azimuth(&b.center)))
    });
    for (i, c) in cells.iter_mut().enumerate() {
        c.index = i;
    }
    Ok(HexLayout {
        cell_radius,
        rings,
        cells,
    })
}

impl HexLayout {
    pub fn from_cell_count(cells: usize, cell_radius: f64) -> Result<Self> {
        let rings = rings_for_cells(cells).ok_or_else(|| {
            invalid(
                "cells",
                format!("{cells} is not a centred hexagonal number 1+3n(n+1)"),
            )
        })?;
        build_hex_layout(rings, cell_radius)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn center(&self, cell: usize) -> Point {
        self.cells[cell].center
    }

    pub fn bs_distance(&self, a: usize, b: usize) -> f64 {
        self.cells[a].center.distance(&self.cells[b].center)
    }

    pub fn inter_site_distance(&self) -> f64 {
        SQRT3 * self.cell_radius
    }

    /// Whether `p` lies inside the hexagon of `cell` (boundary included).
    pub fn contains(&self, cell: usize, p: &Point) -> bool {
        let c = self.cells[cell].center;
        in_hexagon(p.x - c.x, p.y - c.y, self.cell_radius)
    }
}

fn in_hexagon(x: f64, y: f64, radius: f64) -> bool {
    let ax = x.abs();
    ax <= SQRT3 / 2.0 * radius && y.abs() <= radius - ax / SQRT3
}

// ---------------------------------------------------------------------------
// pilot groups

/// Shift vector `(b, c)` with `b >= c >= 0` for a group number, if one exists.
pub fn group_shift(gamma: usize) -> Option<(i32, i32)> {
    if gamma == 0 {
        return None;
    }
    let g = gamma as i64;
    for b in 1..=g {
        if b * b > g {
            break;
        }
        for c in 0..=b {
            if b * b + b * c + c * c == g {
                return Some((b as i32, c as i32));
            }
        }
    }
    None
}

pub fn valid_group_numbers(max: usize) -> Vec<usize> {
    (1..=max).filter(|&g| group_shift(g).is_some()).collect()
}

/// Colour cells by their residue modulo the lattice spanned by `(b, c)` and its
/// 60 degree rotation. Colours are numbered in order of first appearance, so
/// the central cell always gets colour 0.
fn lattice_colouring(layout: &HexLayout, b: i32, c: i32) -> (Vec<usize>, usize) {
    let det = (b * b + b * c + c * c) as i64;
    let (b, c) = (b as i64, c as i64);
    let mut keys: Vec<(i64, i64)> = Vec::new();
    let mut colour = Vec::with_capacity(layout.len());
    for cell in &layout.cells {
        let (q, r) = (cell.axial.0 as i64, cell.axial.1 as i64);
        let key = (
            ((b + c) * q + c * r).rem_euclid(det),
            (-c * q + b * r).rem_euclid(det),
        );
        let idx = match keys.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                keys.push(key);
                keys.len() - 1
            }
        };
        colour.push(idx);
    }
    (colour, det as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupAssignment {
    pub gamma: usize,
    pub group_of: Vec<usize>,
    pub members: Vec<Vec<usize>>,
}

impl GroupAssignment {
    pub fn group(&self, cell: usize) -> usize {
        self.group_of[cell]
    }

    pub fn members_of(&self, group: usize) -> &[usize] {
        &self.members[group]
    }

    pub fn same_group(&self, a: usize, b: usize) -> bool {
        self.group_of[a] == self.group_of[b]
    }
}

pub fn assign_groups(layout: &HexLayout, gamma: usize) -> Result<GroupAssignment> {
    let (b, c) = group_shift(gamma).ok_or(Error::InvalidGroupNumber(gamma))?;
    let (group_of, n) = lattice_colouring(layout, b, c);
    let mut members = vec![Vec::new(); n];
    for (i, &g) in group_of.iter().enumerate() {
        members[g].push(i);
    }
    if members.iter().any(|m| m.is_empty()) {
        return Err(Error::LayoutTooSmall(format!(
            "{} cells cannot host {gamma} non-empty groups",
            layout.len()
        )));
    }
    Ok(GroupAssignment {
        gamma,
        group_of,
        members,
    })
}

// ---------------------------------------------------------------------------
// IC clusters

/// `3N(N+1)` surrounding cells for `N` layers.
pub fn cluster_size(layers: usize) -> usize {
    3 * layers * (layers + 1)
}

pub fn layers_for_cluster(size: usize) -> Option<usize> {
    (1..)
        .take_while(|&n| cluster_size(n) <= size)
        .find(|&n| cluster_size(n) == size)
}

/// The `l_d` cells nearest to `target`, nearest first, ties by index.
pub fn ic_cluster(layout: &HexLayout, target: usize, l_d: usize) -> Result<Vec<usize>> {
    if target >= layout.len() {
        return Err(invalid("target", format!("cell {target} out of range")));
    }
    if layout.len() < l_d + 1 {
        return Err(Error::LayoutTooSmall(format!(
            "cluster of {l_d} needs at least {} cells, layout has {}",
            l_d + 1,
            layout.len()
        )));
    }
    let mut others: Vec<(f64, usize)> = (0..layout.len())
        .filter(|&j| j != target)
        .map(|j| (layout.bs_distance(target, j), j))
        .collect();
    // distances come from a regular grid; snap so ties compare equal
    let snap = |d: f64| (d * 1e6).round();
    others.sort_by(|a, b| snap(a.0).total_cmp(&snap(b.0)).then(a.1.cmp(&b.1)));
    Ok(others.into_iter().take(l_d).map(|(_, j)| j).collect())
}

// ---------------------------------------------------------------------------
// BS pilot reuse

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulePath {
    Lattice { b: i32, c: i32 },
    Greedy,
}

/// Assignment of every BS to one of `L_D + 1` BS-pilot slots. BSs sharing a
/// slot transmit their pilots simultaneously.
#[derive(Debug, Clone, PartialEq)]
pub struct BsSchedule {
    pub slot_of: Vec<usize>,
    pub slots: Vec<Vec<usize>>,
    pub path: SchedulePath,
}

impl BsSchedule {
    /// All BSs transmitting in the same slot as `bs`, itself included.
    pub fn co_slot(&self, bs: usize) -> &[usize] {
        &self.slots[self.slot_of[bs]]
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }
}

pub fn bs_reuse_schedule(layout: &HexLayout, l_d: usize) -> Result<BsSchedule> {
    let n_slots = l_d + 1;
    if layout.len() < n_slots {
        return Err(Error::LayoutTooSmall(format!(
            "{} cells cannot fill {n_slots} BS pilot slots",
            layout.len()
        )));
    }
    let (slot_of, path) = match group_shift(n_slots) {
        Some((b, c)) => (
            lattice_colouring(layout, b, c).0,
            SchedulePath::Lattice { b, c },
        ),
        None => (greedy_slots(layout, n_slots), SchedulePath::Greedy),
    };
    let mut slots = vec![Vec::new(); n_slots];
    for (i, &s) in slot_of.iter().enumerate() {
        slots[s].push(i);
    }
    Ok(BsSchedule {
        slot_of,
        slots,
        path,
    })
}

/// Each cell in index order joins the slot whose nearest member is farthest
/// away, empty slots first.
fn greedy_slots(layout: &HexLayout, n_slots: usize) -> Vec<usize> {
    let mut slots: Vec<Vec<usize>> = vec![Vec::new(); n_slots];
    let mut slot_of = vec![0; layout.len()];
    for i in 0..layout.len() {
        let mut best = (f64::NEG_INFINITY, 0);
        for (s, members) in slots.iter().enumerate() {
            let gap = members
                .iter()
                .map(|&j| layout.bs_distance(i, j))
                .fold(f64::INFINITY, f64::min);
            if gap > best.0 {
                best = (gap, s);
            }
        }
        slots[best.1].push(i);
        slot_of[i] = best.1;
    }
    slot_of
}

// ---------------------------------------------------------------------------
// MS placement

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    /// `positions[cell][ms]`
    pub positions: Vec<Vec<Point>>,
}

impl Placement {
    pub fn ms(&self, cell: usize, k: usize) -> Point {
        self.positions[cell][k]
    }

    pub fn per_cell(&self) -> usize {
        self.positions.first().map_or(0, |p| p.len())
    }
}

/// Drop `k` MSs uniformly in every cell, outside the protection disk.
pub fn drop_users(
    layout: &HexLayout,
    k: usize,
    protection_radius: f64,
    streams: &Streams,
) -> Result<Placement> {
    let r = layout.cell_radius;
    if !(protection_radius >= 0.0) || protection_radius >= SQRT3 / 2.0 * r {
        return Err(invalid(
            "protection_radius",
            format!("{protection_radius} must be in [0, {})", SQRT3 / 2.0 * r),
        ));
    }
    let half_w = SQRT3 / 2.0 * r;
    let positions = layout
        .cells
        .iter()
        .map(|cell| {
            let mut rng = streams.rng(LinkClass::Placement, &[cell.index as u64]);
            (0..k)
                .map(|_| loop {
                    let x = rng.random_range(-half_w..=half_w);
                    let y = rng.random_range(-r..=r);
                    if in_hexagon(x, y, r) && x.hypot(y) >= protection_radius {
                        break Point::new(cell.center.x + x, cell.center.y + y);
                    }
                })
                .collect()
        })
        .collect();
    Ok(Placement { positions })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_major_order() {
        let l = build_hex_layout(2, 1.0).unwrap();
        assert_eq!(l.len(), 19);
        assert_eq!(l.cells[0].axial, (0, 0));
        assert!(l.cells[1..7].iter().all(|c| c.ring == 1));
        assert!(l.cells[7..].iter().all(|c| c.ring == 2));
        // first ring-1 cell is due east
        assert!(l.cells[1].center.y.abs() < 1e-12 && l.cells[1].center.x > 0.0);
    }

    #[test]
    fn shifts() {
        assert_eq!(group_shift(7), Some((2, 1)));
        assert_eq!(group_shift(19), Some((3, 2)));
        assert_eq!(group_shift(37), Some((4, 3)));
        assert_eq!(group_shift(5), None);
    }

    #[test]
    fn cluster_ties_by_index() {
        let l = build_hex_layout(3, 500.0).unwrap();
        let c = ic_cluster(&l, 0, 6).unwrap();
        assert_eq!(c, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn greedy_used_when_not_representable() {
        let l = build_hex_layout(3, 500.0).unwrap();
        let s = bs_reuse_schedule(&l, 4).unwrap();
        assert_eq!(s.path, SchedulePath::Greedy);
        assert_eq!(s.slot_count(), 5);
        assert!(s.slots.iter().all(|m| !m.is_empty()));
    }
}
