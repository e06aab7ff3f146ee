//! Occupancy grid and 8-connected shortest paths.
//!
//! Moves go to the eight neighbours with cost `resolution` (straight) or
//! `resolution·√2` (diagonal). A diagonal move is only allowed when both cells
//! it cuts past are free, so paths never squeeze between touching obstacles.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: [f64; 2],
    blocked: Vec<bool>,
}

const NEIGHBOURS: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, resolution: f64, origin: [f64; 2]) -> Self {
        Self {
            width,
            height,
            resolution,
            origin,
            blocked: vec![false; width * height],
        }
    }

    #[inline]
    pub fn index(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    #[inline]
    pub fn cell_at(&self, i: usize) -> Cell {
        Cell::new(i % self.width, i / self.width)
    }

    pub fn len(&self) -> usize {
        self.blocked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocked.is_empty()
    }

    pub fn in_bounds(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn is_blocked(&self, c: Cell) -> bool {
        self.blocked[self.index(c)]
    }

    pub fn is_free(&self, c: Cell) -> bool {
        !self.is_blocked(c)
    }

    pub fn set_blocked(&mut self, c: Cell, blocked: bool) {
        let i = self.index(c);
        self.blocked[i] = blocked;
    }

    pub fn cell_of(&self, p: [f64; 2]) -> Option<Cell> {
        let fx = ((p[0] - self.origin[0]) / self.resolution).floor();
        let fy = ((p[1] - self.origin[1]) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some(Cell::new(fx as usize, fy as usize))
    }

    pub fn center_of(&self, c: Cell) -> [f64; 2] {
        [
            self.origin[0] + (c.x as f64 + 0.5) * self.resolution,
            self.origin[1] + (c.y as f64 + 0.5) * self.resolution,
        ]
    }

    /// Free neighbours of `c` with their step costs in meters.
    pub fn successors(&self, c: Cell) -> impl Iterator<Item = (Cell, f64)> + '_ {
        let diag = self.resolution * std::f64::consts::SQRT_2;
        NEIGHBOURS.iter().filter_map(move |&(dx, dy)| {
            let nx = c.x as isize + dx;
            let ny = c.y as isize + dy;
            if !self.in_bounds(nx, ny) {
                return None;
            }
            let n = Cell::new(nx as usize, ny as usize);
            if self.is_blocked(n) {
                return None;
            }
            if dx != 0 && dy != 0 {
                let side_a = Cell::new(nx as usize, c.y);
                let side_b = Cell::new(c.x, ny as usize);
                if self.is_blocked(side_a) || self.is_blocked(side_b) {
                    return None;
                }
                Some((n, diag))
            } else {
                Some((n, self.resolution))
            }
        })
    }

    fn heuristic(&self, a: Cell, b: Cell) -> f64 {
        let dx = a.x as f64 - b.x as f64;
        let dy = a.y as f64 - b.y as f64;
        dx.hypot(dy) * self.resolution
    }

    /// Optimal path from `start` to `goal`, both inclusive; empty when they coincide.
    pub fn astar(&self, start: Cell, goal: Cell) -> Option<(Vec<Cell>, f64)> {
        if self.is_blocked(start) || self.is_blocked(goal) {
            return None;
        }
        if start == goal {
            return Some((Vec::new(), 0.0));
        }
        let n = self.len();
        let mut g = vec![f64::INFINITY; n];
        let mut parent = vec![usize::MAX; n];
        let mut closed = vec![false; n];
        let mut open = BinaryHeap::new();
        let s = self.index(start);
        g[s] = 0.0;
        open.push(Entry {
            priority: self.heuristic(start, goal),
            tiebreak: 0.0,
            index: s,
        });
        let target = self.index(goal);
        while let Some(Entry { index, .. }) = open.pop() {
            if closed[index] {
                continue;
            }
            closed[index] = true;
            if index == target {
                break;
            }
            let c = self.cell_at(index);
            for (nb, step) in self.successors(c) {
                let ni = self.index(nb);
                let cand = g[index] + step;
                if cand < g[ni] {
                    g[ni] = cand;
                    parent[ni] = index;
                    open.push(Entry {
                        priority: cand + self.heuristic(nb, goal),
                        tiebreak: -cand,
                        index: ni,
                    });
                }
            }
        }
        if !g[target].is_finite() {
            return None;
        }
        let mut path = vec![goal];
        let mut cur = target;
        while cur != s {
            cur = parent[cur];
            path.push(self.cell_at(cur));
        }
        path.reverse();
        Some((path, g[target]))
    }

    /// Dijkstra distances (meters) from `start` to every cell; infinite where unreachable.
    pub fn distance_field(&self, start: Cell) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.len()];
        if self.is_blocked(start) {
            return dist;
        }
        let s = self.index(start);
        dist[s] = 0.0;
        let mut open = BinaryHeap::new();
        open.push(Entry {
            priority: 0.0,
            tiebreak: 0.0,
            index: s,
        });
        while let Some(Entry { priority, index, .. }) = open.pop() {
            if priority > dist[index] {
                continue;
            }
            for (nb, step) in self.successors(self.cell_at(index)) {
                let ni = self.index(nb);
                let cand = priority + step;
                if cand < dist[ni] {
                    dist[ni] = cand;
                    open.push(Entry {
                        priority: cand,
                        tiebreak: 0.0,
                        index: ni,
                    });
                }
            }
        }
        dist
    }

    /// Cells reachable from `start` (flood fill under the same move rules).
    pub fn reachable_from(&self, start: Cell) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        if self.is_blocked(start) {
            return seen;
        }
        let mut stack = vec![start];
        seen[self.index(start)] = true;
        while let Some(c) = stack.pop() {
            for (nb, _) in self.successors(c) {
                let i = self.index(nb);
                if !seen[i] {
                    seen[i] = true;
                    stack.push(nb);
                }
            }
        }
        seen
    }

    /// The cell in `allowed` whose center is nearest to `p`; ties go to the
    /// smaller (y, x).
    pub fn nearest_allowed(&self, p: [f64; 2], allowed: &[bool]) -> Option<Cell> {
        let px = (p[0] - self.origin[0]) / self.resolution - 0.5;
        let py = (p[1] - self.origin[1]) / self.resolution - 0.5;
        let cx = px.round().clamp(0.0, (self.width - 1) as f64) as isize;
        let cy = py.round().clamp(0.0, (self.height - 1) as f64) as isize;
        let max_ring = self.width.max(self.height) as isize;
        let mut best: Option<(f64, Cell)> = None;
        for ring in 0..=max_ring {
            if let Some((d, _)) = best {
                // every cell on this ring is at least ring-1 cells away
                if (ring as f64 - 1.0) > d.sqrt() {
                    break;
                }
            }
            for (x, y) in ring_cells(cx, cy, ring) {
                if !self.in_bounds(x, y) {
                    continue;
                }
                let c = Cell::new(x as usize, y as usize);
                if !allowed[self.index(c)] {
                    continue;
                }
                let d = (x as f64 - px).powi(2) + (y as f64 - py).powi(2);
                let better = match best {
                    None => true,
                    Some((bd, bc)) => d < bd || (d == bd && (c.y, c.x) < (bc.y, bc.x)),
                };
                if better {
                    best = Some((d, c));
                }
            }
        }
        best.map(|(_, c)| c)
    }

    /// Meters along a cell path.
    pub fn path_length(&self, path: &[Cell]) -> f64 {
        path.windows(2)
            .map(|w| {
                let diagonal = w[0].x != w[1].x && w[0].y != w[1].y;
                if diagonal {
                    self.resolution * std::f64::consts::SQRT_2
                } else {
                    self.resolution
                }
            })
            .sum()
    }
}

fn ring_cells(cx: isize, cy: isize, ring: isize) -> Vec<(isize, isize)> {
    if ring == 0 {
        return vec![(cx, cy)];
    }
    let mut out = Vec::with_capacity((8 * ring) as usize);
    for x in (cx - ring)..=(cx + ring) {
        out.push((x, cy - ring));
        out.push((x, cy + ring));
    }
    for y in (cy - ring + 1)..(cy + ring) {
        out.push((cx - ring, y));
        out.push((cx + ring, y));
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    priority: f64,
    tiebreak: f64,
    index: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // min-heap on priority, then prefer deeper nodes, then lower index
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .priority
            .total_cmp(&self.priority)
            .then(other.tiebreak.total_cmp(&self.tiebreak))
            .then(other.index.cmp(&self.index))
    }
}
