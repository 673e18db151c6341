use galnet::lattice::{validate, Position};
use galnet::LatticeGraph;

/// Neighbor lists by the rules alone: step, then wrap at corners or stay put
/// on the rest of the boundary.
fn enumerate(h: usize, w: usize) -> (Vec<usize>, Vec<usize>) {
    let mut senders = Vec::new();
    let mut receivers = Vec::new();
    for r in 0..h as isize {
        for c in 0..w as isize {
            let corner = (r == 0 || r == h as isize - 1) && (c == 0 || c == w as isize - 1);
            for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                let (nr, nc) = (r + dr, c + dc);
                let inside = nr >= 0 && nr < h as isize && nc >= 0 && nc < w as isize;
                let (sr, sc) = if inside {
                    (nr, nc)
                } else if corner {
                    (nr.rem_euclid(h as isize), nc.rem_euclid(w as isize))
                } else {
                    (r, c)
                };
                senders.push(sr as usize * w + sc as usize);
                receivers.push(r as usize * w + c as usize);
            }
        }
    }
    (senders, receivers)
}

#[test]
fn matches_enumerator_on_all_small_sizes() {
    for h in 2..=8 {
        for w in 2..=8 {
            let g = LatticeGraph::build(h, w).unwrap();
            let (s, r) = enumerate(h, w);
            assert_eq!(&g.senders()[..], &s[..], "senders {h}x{w}");
            assert_eq!(&g.receivers()[..], &r[..], "receivers {h}x{w}");
            assert_eq!(g.edge_count(), 4 * h * w);
            validate(&g).unwrap();
        }
    }
}

#[test]
fn every_vertex_receives_four_edges() {
    let g = LatticeGraph::build(5, 7).unwrap();
    for i in 0..g.vertex_count() {
        assert_eq!(g.senders_of(i).len(), 4);
        assert_eq!(g.receivers()[4 * i..4 * i + 4], [i; 4]);
    }
}

#[test]
fn self_loops_only_on_non_corner_boundary() {
    let g = LatticeGraph::build(4, 6).unwrap();
    for i in 0..g.vertex_count() {
        let loops = g.senders_of(i).iter().filter(|&&s| s == i).count();
        let want = match g.position(i) {
            Position::Interior | Position::Corner => 0,
            Position::Boundary => 1,
        };
        assert_eq!(loops, want, "vertex {i}");
    }
}

#[test]
fn flips_map_edges_onto_edges_with_slots_exchanged() {
    let (h, w) = (5, 6);
    let g = LatticeGraph::build(h, w).unwrap();
    let hflip = |i: usize| (i / w) * w + (w - 1 - i % w);
    let vflip = |i: usize| (h - 1 - i / w) * w + i % w;
    for i in 0..h * w {
        let s = g.senders_of(i);
        let (sh, sv) = (g.senders_of(hflip(i)), g.senders_of(vflip(i)));
        // horizontal: left and right trade places
        assert_eq!([sh[0], sh[1], sh[3], sh[2]], s.map_to(hflip));
        // vertical: up and down trade places
        assert_eq!([sv[1], sv[0], sv[2], sv[3]], s.map_to(vflip));
    }
}

trait MapTo {
    fn map_to(&self, f: impl Fn(usize) -> usize) -> [usize; 4];
}

impl MapTo for [usize] {
    fn map_to(&self, f: impl Fn(usize) -> usize) -> [usize; 4] {
        [f(self[0]), f(self[1]), f(self[2]), f(self[3])]
    }
}

#[test]
fn degenerate_sizes_are_rejected() {
    for (h, w) in [(0, 0), (1, 5), (5, 1), (1, 1)] {
        assert!(LatticeGraph::build(h, w).is_err(), "{h}x{w}");
    }
}
