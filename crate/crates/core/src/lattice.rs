//! Fixed 4-neighbor lattice over the H×W positions of a feature map.
//!
//! Every vertex receives exactly four edges, one per slot in the order
//! `[up, down, left, right]`; edge `k = 4·i + slot` has receiver `i`.
//! Where a neighbor would fall outside the grid:
//!
//! * a corner vertex wraps around along the offending axis, so both
//!   substitutes are the adjacent corners (for `(0, 0)`: up → `(H−1, 0)`,
//!   left → `(0, W−1)`);
//! * any other boundary vertex uses itself as the missing neighbor.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Slot {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Slot {
    pub const ALL: [Slot; 4] = [Slot::Up, Slot::Down, Slot::Left, Slot::Right];

    fn offset(self) -> (isize, isize) {
        match self {
            Slot::Up => (-1, 0),
            Slot::Down => (1, 0),
            Slot::Left => (0, -1),
            Slot::Right => (0, 1),
        }
    }
}

/// Where a vertex sits on the grid; decides which substitution rule applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Position {
    Interior,
    Boundary,
    Corner,
}

#[derive(Clone, PartialEq, Eq)]
pub struct LatticeGraph {
    height: usize,
    width: usize,
    senders: Arc<[usize]>,
    receivers: Arc<[usize]>,
}

impl fmt::Debug for LatticeGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LatticeGraph({}x{}, {} edges)", self.height, self.width, self.senders.len())
    }
}

impl LatticeGraph {
    /// Builds the lattice for an H×W map. Both sides must be at least 2.
    pub fn build(height: usize, width: usize) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::Lattice(format!(
                "lattice needs at least 2x2 positions, got {height}x{width}"
            )));
        }
        let n = height * width;
        let mut senders = Vec::with_capacity(4 * n);
        let mut receivers = Vec::with_capacity(4 * n);
        for i in 0..n {
            for slot in Slot::ALL {
                senders.push(neighbor(height, width, i, slot));
                receivers.push(i);
            }
        }
        Ok(Self { height, width, senders: senders.into(), receivers: receivers.into() })
    }

    /// Assembles a graph from raw arrays without checking it; see [`validate`].
    pub fn from_parts(height: usize, width: usize, senders: Vec<usize>, receivers: Vec<usize>) -> Self {
        Self { height, width, senders: senders.into(), receivers: receivers.into() }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn vertex_count(&self) -> usize {
        self.height * self.width
    }

    pub fn edge_count(&self) -> usize {
        self.senders.len()
    }

    pub fn senders(&self) -> &Arc<[usize]> {
        &self.senders
    }

    pub fn receivers(&self) -> &Arc<[usize]> {
        &self.receivers
    }

    /// The four senders of vertex `i`, in slot order.
    pub fn senders_of(&self, i: usize) -> &[usize] {
        &self.senders[4 * i..4 * i + 4]
    }

    pub fn position(&self, i: usize) -> Position {
        position(self.height, self.width, i)
    }
}

fn position(height: usize, width: usize, i: usize) -> Position {
    let (r, c) = (i / width, i % width);
    let row_edge = r == 0 || r == height - 1;
    let col_edge = c == 0 || c == width - 1;
    match (row_edge, col_edge) {
        (true, true) => Position::Corner,
        (false, false) => Position::Interior,
        _ => Position::Boundary,
    }
}

fn neighbor(height: usize, width: usize, i: usize, slot: Slot) -> usize {
    let (r, c) = ((i / width) as isize, (i % width) as isize);
    let (h, w) = (height as isize, width as isize);
    let (dr, dc) = slot.offset();
    let (nr, nc) = (r + dr, c + dc);
    if (0..h).contains(&nr) && (0..w).contains(&nc) {
        return (nr * w + nc) as usize;
    }
    match position(height, width, i) {
        Position::Corner => (nr.rem_euclid(h) * w + nc.rem_euclid(w)) as usize,
        _ => i,
    }
}

/// First invariant a lattice violates, with the offending edge id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub edge: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "edge {}: {}", self.edge, self.message)
    }
}

/// Checks every structural invariant of `g`, edge by edge.
pub fn validate(g: &LatticeGraph) -> std::result::Result<(), Violation> {
    let (h, w) = (g.height, g.width);
    let n = h * w;
    let fail = |edge, message: String| Err(Violation { edge, message });
    if h < 2 || w < 2 {
        return fail(0, format!("degenerate {h}x{w} lattice"));
    }
    if g.senders.len() != 4 * n || g.receivers.len() != 4 * n {
        let edge = g.senders.len().min(g.receivers.len()).min(4 * n);
        return fail(
            edge,
            format!(
                "expected {} edges, found {} senders and {} receivers",
                4 * n,
                g.senders.len(),
                g.receivers.len()
            ),
        );
    }
    for k in 0..4 * n {
        let (i, slot) = (k / 4, Slot::ALL[k % 4]);
        let (r, s) = (g.receivers[k], g.senders[k]);
        if r != i {
            return fail(k, format!("receiver is {r}, expected {i}"));
        }
        if s >= n {
            return fail(k, format!("sender {s} is not a vertex"));
        }
        let (row, col) = ((i / w) as isize, (i % w) as isize);
        let (dr, dc) = slot.offset();
        let (nr, nc) = (row + dr, col + dc);
        let in_bounds = (0..h as isize).contains(&nr) && (0..w as isize).contains(&nc);
        let pos = position(h, w, i);
        if in_bounds {
            let expected = (nr * w as isize + nc) as usize;
            if s != expected {
                return fail(k, format!("{slot:?} sender is {s}, expected neighbor {expected}"));
            }
            continue;
        }
        match pos {
            Position::Interior => unreachable!("interior slots are always in bounds"),
            Position::Boundary => {
                if s != i {
                    return fail(k, format!("boundary {slot:?} sender is {s}, expected self {i}"));
                }
            }
            Position::Corner => {
                if s == i {
                    return fail(k, format!("self-loop at corner {i}"));
                }
                if position(h, w, s) != Position::Corner {
                    return fail(k, format!("corner substitute {s} is not a corner"));
                }
                let (sr, sc) = ((s / w) as isize, (s % w) as isize);
                let along_rows = dr != 0;
                let same_line = if along_rows { sc == col } else { sr == row };
                if !same_line {
                    return fail(k, format!("corner substitute {s} is not on the {slot:?} axis"));
                }
            }
        }
    }
    Ok(())
}
