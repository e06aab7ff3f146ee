use std::collections::BinaryHeap;

use crsg_core::world::{Cell, OccupancyGrid};
use proptest::prelude::*;

const N: usize = 20;

#[derive(PartialEq)]
struct Item(f64, usize);
impl Eq for Item {}
impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Item {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

// textbook Dijkstra on the 8-connected grid, no squeezing between two blocked corners
fn oracle(blocked: &[bool], start: usize, res: f64) -> Vec<f64> {
    let free = |x: isize, y: isize| x >= 0 && y >= 0 && (x as usize) < N && (y as usize) < N && !blocked[y as usize * N + x as usize];
    let mut dist = vec![f64::INFINITY; N * N];
    let mut heap = BinaryHeap::new();
    dist[start] = 0.0;
    heap.push(Item(0.0, start));
    while let Some(Item(d, i)) = heap.pop() {
        if d > dist[i] {
            continue;
        }
        let (x, y) = ((i % N) as isize, (i / N) as isize);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if (dx, dy) == (0, 0) || !free(x + dx, y + dy) {
                    continue;
                }
                if dx != 0 && dy != 0 && !(free(x + dx, y) && free(x, y + dy)) {
                    continue;
                }
                let step = if dx != 0 && dy != 0 { res * 2f64.sqrt() } else { res };
                let j = (y + dy) as usize * N + (x + dx) as usize;
                if d + step < dist[j] {
                    dist[j] = d + step;
                    heap.push(Item(d + step, j));
                }
            }
        }
    }
    dist
}

fn grid(blocked: &[bool]) -> OccupancyGrid {
    let mut g = OccupancyGrid::new(N, N, 0.1, [0.0, 0.0]);
    for (i, b) in blocked.iter().enumerate() {
        g.set_blocked(Cell::new(i % N, i / N), *b);
    }
    g
}

fn adjacent_without_cut(g: &OccupancyGrid, a: Cell, b: Cell) -> bool {
    let (dx, dy) = (b.x as isize - a.x as isize, b.y as isize - a.y as isize);
    if dx.abs() > 1 || dy.abs() > 1 || (dx, dy) == (0, 0) || g.is_blocked(b) {
        return false;
    }
    dx == 0 || dy == 0 || (g.is_free(Cell::new(b.x, a.y)) && g.is_free(Cell::new(a.x, b.y)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn astar_matches_dijkstra(blocked in prop::collection::vec(prop::bool::weighted(0.3), N * N), s in 0..N * N, t in 0..N * N) {
        let mut blocked = blocked;
        blocked[s] = false;
        blocked[t] = false;
        let g = grid(&blocked);
        let (start, goal) = (Cell::new(s % N, s / N), Cell::new(t % N, t / N));
        let truth = oracle(&blocked, s, 0.1);
        let field = g.distance_field(start);
        for i in 0..N * N {
            prop_assert!((field[i] - truth[i]).abs() < 1e-9 || field[i] == truth[i]);
        }
        match g.astar(start, goal) {
            None => prop_assert!(truth[t].is_infinite()),
            Some((path, len)) => {
                prop_assert!((len - truth[t]).abs() < 1e-9);
                prop_assert!((g.path_length(&path) - len).abs() < 1e-9);
                if s != t {
                    prop_assert_eq!(path.first(), Some(&start));
                    prop_assert_eq!(path.last(), Some(&goal));
                }
                for w in path.windows(2) {
                    prop_assert!(adjacent_without_cut(&g, w[0], w[1]));
                }
            }
        }
    }

    #[test]
    fn distances_are_symmetric(blocked in prop::collection::vec(prop::bool::weighted(0.3), N * N), s in 0..N * N, t in 0..N * N) {
        let mut blocked = blocked;
        blocked[s] = false;
        blocked[t] = false;
        let g = grid(&blocked);
        let (a, b) = (Cell::new(s % N, s / N), Cell::new(t % N, t / N));
        let (ab, ba) = (g.distance_field(a)[g.index(b)], g.distance_field(b)[g.index(a)]);
        prop_assert!(ab == ba || (ab - ba).abs() < 1e-9);
    }
}
