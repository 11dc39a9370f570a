//! Uniform hash grid over points for fixed-radius and k-nearest queries.

use std::collections::HashMap;

use crate::mesh::Vec3;

type Cell = (i64, i64, i64);

#[derive(Debug, Clone)]
pub struct PointGrid {
    cell: f64,
    buckets: HashMap<Cell, Vec<u32>>,
    points: Vec<Vec3>,
}

impl PointGrid {
    pub fn new(cell: f64) -> PointGrid {
        assert!(cell > 0.0 && cell.is_finite(), "grid cell must be positive");
        PointGrid {
            cell,
            buckets: HashMap::new(),
            points: Vec::new(),
        }
    }

    pub fn from_points(points: &[Vec3], cell: f64) -> PointGrid {
        let mut g = PointGrid::new(cell);
        for p in points {
            g.insert(*p);
        }
        g
    }

    fn cell_of(&self, p: &Vec3) -> Cell {
        (
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        )
    }

    pub fn insert(&mut self, p: Vec3) -> u32 {
        let id = self.points.len() as u32;
        let c = self.cell_of(&p);
        self.buckets.entry(c).or_default().push(id);
        self.points.push(p);
        id
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn visit_cells(&self, lo: Cell, hi: Cell, mut f: impl FnMut(&[u32]) -> bool) {
        // Sparse grids: iterate buckets instead of a huge empty box.
        let span = ((hi.0 - lo.0 + 1) * (hi.1 - lo.1 + 1) * (hi.2 - lo.2 + 1)) as usize;
        if span > self.buckets.len() * 4 {
            for (c, ids) in &self.buckets {
                if (lo.0..=hi.0).contains(&c.0) && (lo.1..=hi.1).contains(&c.1) && (lo.2..=hi.2).contains(&c.2) && !f(ids) {
                    return;
                }
            }
            return;
        }
        for x in lo.0..=hi.0 {
            for y in lo.1..=hi.1 {
                for z in lo.2..=hi.2 {
                    if let Some(ids) = self.buckets.get(&(x, y, z)) {
                        if !f(ids) {
                            return;
                        }
                    }
                }
            }
        }
    }

    fn range(&self, p: &Vec3, r: f64) -> (Cell, Cell) {
        let lo = self.cell_of(&(p - Vec3::repeat(r)));
        let hi = self.cell_of(&(p + Vec3::repeat(r)));
        (lo, hi)
    }

    /// True if any stored point lies strictly closer than `r` to `p`.
    pub fn any_closer_than(&self, p: &Vec3, r: f64) -> bool {
        self.find_closer_than(p, r).is_some()
    }

    /// Some stored point strictly closer than `r` to `p`, if one exists.
    pub fn find_closer_than(&self, p: &Vec3, r: f64) -> Option<u32> {
        let (lo, hi) = self.range(p, r);
        let mut found = None;
        self.visit_cells(lo, hi, |ids| {
            found = ids.iter().copied().find(|&i| (self.points[i as usize] - p).norm() < r);
            found.is_none()
        });
        found
    }

    /// Indices of points with distance `<= r` to `p`, ascending.
    pub fn within(&self, p: &Vec3, r: f64) -> Vec<u32> {
        let (lo, hi) = self.range(p, r);
        let mut out = Vec::new();
        self.visit_cells(lo, hi, |ids| {
            out.extend(ids.iter().copied().filter(|&i| (self.points[i as usize] - p).norm() <= r));
            true
        });
        out.sort_unstable();
        out
    }

    /// The `k` nearest points as `(index, distance)`, nearest first; ties
    /// broken by index.
    pub fn nearest(&self, p: &Vec3, k: usize) -> Vec<(u32, f64)> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut radius = self.cell;
        loop {
            let mut cand: Vec<(u32, f64)> = Vec::new();
            let (lo, hi) = self.range(p, radius);
            self.visit_cells(lo, hi, |ids| {
                cand.extend(ids.iter().map(|&i| (i, (self.points[i as usize] - p).norm())));
                true
            });
            cand.retain(|&(_, d)| d <= radius);
            if cand.len() >= k || cand.len() == self.points.len() {
                cand.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                cand.truncate(k);
                return cand;
            }
            radius *= 2.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_within(points: &[Vec3], p: &Vec3, r: f64) -> Vec<u32> {
        (0..points.len() as u32)
            .filter(|&i| (points[i as usize] - p).norm() <= r)
            .collect()
    }

    proptest! {
        #[test]
        fn range_and_knn_match_brute_force(
            pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..120),
            q in (-6.0f64..6.0, -6.0f64..6.0, -6.0f64..6.0),
            r in 0.05f64..4.0,
            cell in 0.1f64..2.0,
            k in 1usize..6,
        ) {
            let points: Vec<Vec3> = pts.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let q = Vec3::new(q.0, q.1, q.2);
            let grid = PointGrid::from_points(&points, cell);
            prop_assert_eq!(grid.within(&q, r), brute_within(&points, &q, r));
            let mut all: Vec<(u32, f64)> = points.iter().enumerate().map(|(i, p)| (i as u32, (p - q).norm())).collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            all.truncate(k);
            prop_assert_eq!(grid.nearest(&q, k), all);
        }
    }
}
