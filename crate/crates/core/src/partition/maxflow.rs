//! Boykov–Kolmogorov max-flow: two search trees grown from the terminals,
//! augmentation along the path where they meet, and orphan adoption so the
//! trees are reused instead of rebuilt after every augmentation.

use std::collections::VecDeque;

const NONE: u32 = u32::MAX;
const TERMINAL: u32 = u32::MAX - 1;
const ORPHAN: u32 = u32::MAX - 2;

#[derive(Debug, Clone)]
struct Node {
    first: u32,
    parent: u32,
    /// Residual capacity to the sink if positive, from the source if negative.
    tr_cap: f64,
    ts: u64,
    dist: u32,
    is_sink: bool,
    active: bool,
}

#[derive(Debug, Clone)]
struct Arc {
    head: u32,
    next: u32,
    r_cap: f64,
}

/// Side of the minimum cut a node ends up on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Sink,
}

#[derive(Debug, Clone)]
pub struct MaxFlow {
    nodes: Vec<Node>,
    /// Arcs come in pairs; the sister of arc `a` is `a ^ 1`.
    arcs: Vec<Arc>,
    flow: f64,
    time: u64,
    active: VecDeque<u32>,
    orphans: VecDeque<u32>,
}

impl MaxFlow {
    pub fn new(n: usize) -> MaxFlow {
        MaxFlow {
            nodes: vec![
                Node {
                    first: NONE,
                    parent: NONE,
                    tr_cap: 0.0,
                    ts: 0,
                    dist: 0,
                    is_sink: false,
                    active: false,
                };
                n
            ],
            arcs: Vec::new(),
            flow: 0.0,
            time: 0,
            active: VecDeque::new(),
            orphans: VecDeque::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Adds terminal capacities `source → i` and `i → sink`. The shared part
    /// is pushed as flow immediately.
    pub fn add_tweights(&mut self, i: usize, cap_source: f64, cap_sink: f64) {
        debug_assert!(cap_source >= 0.0 && cap_sink >= 0.0);
        let delta = self.nodes[i].tr_cap;
        let (mut cs, mut ct) = (cap_source, cap_sink);
        if delta > 0.0 {
            cs += delta;
        } else {
            ct -= delta;
        }
        self.flow += cs.min(ct);
        self.nodes[i].tr_cap = cs - ct;
    }

    /// Adds `i → j` with capacity `cap` and `j → i` with `rev_cap`.
    pub fn add_edge(&mut self, i: usize, j: usize, cap: f64, rev_cap: f64) {
        debug_assert!(i != j && cap >= 0.0 && rev_cap >= 0.0);
        let a = self.arcs.len() as u32;
        self.arcs.push(Arc {
            head: j as u32,
            next: self.nodes[i].first,
            r_cap: cap,
        });
        self.arcs.push(Arc {
            head: i as u32,
            next: self.nodes[j].first,
            r_cap: rev_cap,
        });
        self.nodes[i].first = a;
        self.nodes[j].first = a + 1;
    }

    fn set_active(&mut self, i: u32) {
        let n = &mut self.nodes[i as usize];
        if !n.active {
            n.active = true;
            self.active.push_back(i);
        }
    }

    fn next_active(&mut self) -> Option<u32> {
        while let Some(i) = self.active.pop_front() {
            let n = &mut self.nodes[i as usize];
            n.active = false;
            if n.parent != NONE {
                return Some(i);
            }
        }
        None
    }

    /// Runs to completion and returns the maximum flow value.
    pub fn maxflow(&mut self) -> f64 {
        for i in 0..self.nodes.len() {
            let n = &mut self.nodes[i];
            n.ts = 0;
            if n.tr_cap > 0.0 {
                n.is_sink = false;
                n.parent = TERMINAL;
                n.dist = 1;
            } else if n.tr_cap < 0.0 {
                n.is_sink = true;
                n.parent = TERMINAL;
                n.dist = 1;
            } else {
                n.parent = NONE;
            }
            if n.parent != NONE {
                self.set_active(i as u32);
            }
        }
        let mut current: Option<u32> = None;
        loop {
            let i = match current.filter(|&c| self.nodes[c as usize].parent != NONE) {
                Some(c) => c,
                None => match self.next_active() {
                    Some(c) => c,
                    None => break,
                },
            };
            current = None;
            let mut meet = NONE;
            let (ts, dist) = (self.nodes[i as usize].ts, self.nodes[i as usize].dist);
            if !self.nodes[i as usize].is_sink {
                let mut a = self.nodes[i as usize].first;
                while a != NONE {
                    if self.arcs[a as usize].r_cap > 0.0 {
                        let j = self.arcs[a as usize].head;
                        let nj = &mut self.nodes[j as usize];
                        if nj.parent == NONE {
                            nj.is_sink = false;
                            nj.parent = a ^ 1;
                            nj.ts = ts;
                            nj.dist = dist + 1;
                            self.set_active(j);
                        } else if nj.is_sink {
                            meet = a;
                            break;
                        } else if nj.ts <= ts && nj.dist > dist {
                            nj.parent = a ^ 1;
                            nj.ts = ts;
                            nj.dist = dist + 1;
                        }
                    }
                    a = self.arcs[a as usize].next;
                }
            } else {
                let mut a = self.nodes[i as usize].first;
                while a != NONE {
                    if self.arcs[(a ^ 1) as usize].r_cap > 0.0 {
                        let j = self.arcs[a as usize].head;
                        let nj = &mut self.nodes[j as usize];
                        if nj.parent == NONE {
                            nj.is_sink = true;
                            nj.parent = a ^ 1;
                            nj.ts = ts;
                            nj.dist = dist + 1;
                            self.set_active(j);
                        } else if !nj.is_sink {
                            meet = a ^ 1;
                            break;
                        } else if nj.ts <= ts && nj.dist > dist {
                            nj.parent = a ^ 1;
                            nj.ts = ts;
                            nj.dist = dist + 1;
                        }
                    }
                    a = self.arcs[a as usize].next;
                }
            }
            self.time += 1;
            if meet != NONE {
                current = Some(i);
                self.augment(meet);
                while let Some(o) = self.orphans.pop_front() {
                    if self.nodes[o as usize].is_sink {
                        self.adopt_sink_orphan(o);
                    } else {
                        self.adopt_source_orphan(o);
                    }
                }
            }
        }
        self.flow
    }

    fn make_orphan_front(&mut self, i: u32) {
        self.nodes[i as usize].parent = ORPHAN;
        self.orphans.push_front(i);
    }

    fn make_orphan_back(&mut self, i: u32) {
        self.nodes[i as usize].parent = ORPHAN;
        self.orphans.push_back(i);
    }

    /// Pushes the bottleneck along source tree → `middle` → sink tree.
    fn augment(&mut self, middle: u32) {
        let mut b = self.arcs[middle as usize].r_cap;
        let mut i = self.arcs[(middle ^ 1) as usize].head;
        loop {
            let a = self.nodes[i as usize].parent;
            if a == TERMINAL {
                break;
            }
            b = b.min(self.arcs[(a ^ 1) as usize].r_cap);
            i = self.arcs[a as usize].head;
        }
        b = b.min(self.nodes[i as usize].tr_cap);
        let mut i = self.arcs[middle as usize].head;
        loop {
            let a = self.nodes[i as usize].parent;
            if a == TERMINAL {
                break;
            }
            b = b.min(self.arcs[a as usize].r_cap);
            i = self.arcs[a as usize].head;
        }
        b = b.min(-self.nodes[i as usize].tr_cap);

        self.arcs[(middle ^ 1) as usize].r_cap += b;
        self.arcs[middle as usize].r_cap -= b;
        let mut i = self.arcs[(middle ^ 1) as usize].head;
        loop {
            let a = self.nodes[i as usize].parent;
            if a == TERMINAL {
                break;
            }
            self.arcs[a as usize].r_cap += b;
            self.arcs[(a ^ 1) as usize].r_cap -= b;
            let next = self.arcs[a as usize].head;
            if self.arcs[(a ^ 1) as usize].r_cap <= 0.0 {
                self.make_orphan_front(i);
            }
            i = next;
        }
        self.nodes[i as usize].tr_cap -= b;
        if self.nodes[i as usize].tr_cap <= 0.0 {
            self.make_orphan_front(i);
        }
        let mut i = self.arcs[middle as usize].head;
        loop {
            let a = self.nodes[i as usize].parent;
            if a == TERMINAL {
                break;
            }
            self.arcs[(a ^ 1) as usize].r_cap += b;
            self.arcs[a as usize].r_cap -= b;
            let next = self.arcs[a as usize].head;
            if self.arcs[a as usize].r_cap <= 0.0 {
                self.make_orphan_front(i);
            }
            i = next;
        }
        self.nodes[i as usize].tr_cap += b;
        if self.nodes[i as usize].tr_cap >= 0.0 {
            self.make_orphan_front(i);
        }
        self.flow += b;
    }

    /// Distance from `j` to its terminal through valid parents, or `None` if
    /// the chain ends at an orphan. Caches results with the current time.
    fn origin_distance(&mut self, j: u32) -> Option<u32> {
        let mut d = 0u32;
        let mut k = j;
        loop {
            let nk = &self.nodes[k as usize];
            if nk.ts == self.time {
                d += nk.dist;
                break;
            }
            let a = nk.parent;
            d += 1;
            if a == TERMINAL {
                let nk = &mut self.nodes[k as usize];
                nk.ts = self.time;
                nk.dist = 1;
                break;
            }
            if a == ORPHAN || a == NONE {
                return None;
            }
            k = self.arcs[a as usize].head;
        }
        // Stamp the path so later queries stop early.
        let mut k = j;
        let mut dd = d;
        while self.nodes[k as usize].ts != self.time {
            let nk = &mut self.nodes[k as usize];
            nk.ts = self.time;
            nk.dist = dd;
            dd -= 1;
            k = self.arcs[nk.parent as usize].head;
        }
        Some(d)
    }

    fn adopt_source_orphan(&mut self, i: u32) {
        self.adopt(i, false);
    }

    fn adopt_sink_orphan(&mut self, i: u32) {
        self.adopt(i, true);
    }

    fn adopt(&mut self, i: u32, sink: bool) {
        let mut best: Option<(u32, u32)> = None;
        let mut a0 = self.nodes[i as usize].first;
        while a0 != NONE {
            // Residual capacity from the would-be parent toward `i` for the
            // source tree, from `i` toward the parent for the sink tree.
            let cap = if sink {
                self.arcs[a0 as usize].r_cap
            } else {
                self.arcs[(a0 ^ 1) as usize].r_cap
            };
            if cap > 0.0 {
                let j = self.arcs[a0 as usize].head;
                let nj = &self.nodes[j as usize];
                if nj.is_sink == sink && nj.parent != NONE {
                    if let Some(d) = self.origin_distance(j) {
                        if best.is_none_or(|(_, bd)| d < bd) {
                            best = Some((a0, d));
                        }
                    }
                }
            }
            a0 = self.arcs[a0 as usize].next;
        }
        if let Some((a, d)) = best {
            let ni = &mut self.nodes[i as usize];
            ni.parent = a;
            ni.ts = self.time;
            ni.dist = d + 1;
            return;
        }
        // No valid parent: `i` becomes free and its children orphans.
        self.nodes[i as usize].parent = NONE;
        let mut a0 = self.nodes[i as usize].first;
        while a0 != NONE {
            let j = self.arcs[a0 as usize].head;
            let (j_sink, a) = (self.nodes[j as usize].is_sink, self.nodes[j as usize].parent);
            if j_sink == sink && a != NONE {
                let cap = if sink {
                    self.arcs[a0 as usize].r_cap
                } else {
                    self.arcs[(a0 ^ 1) as usize].r_cap
                };
                if cap > 0.0 {
                    self.set_active(j);
                }
                if a != TERMINAL && a != ORPHAN && self.arcs[a as usize].head == i {
                    self.make_orphan_back(j);
                }
            }
            a0 = self.arcs[a0 as usize].next;
        }
    }

    /// Source side holds exactly the nodes reachable from the source in the
    /// residual graph; everything else is on the sink side.
    pub fn side(&self, i: usize) -> Side {
        let n = &self.nodes[i];
        if n.parent != NONE && !n.is_sink {
            Side::Source
        } else {
            Side::Sink
        }
    }
}
