//! Exact nearest-neighbour queries on a uniform grid of buckets.

/// Points bucketed into a uniform grid. All queries are exact.
#[derive(Debug, Clone)]
pub struct PointGrid {
    points: Vec<[f64; 3]>,
    origin: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    cell_start: Vec<u32>,
    order: Vec<u32>,
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl PointGrid {
    /// Build with an automatically chosen cell size (about one point per cell).
    pub fn new(points: &[[f64; 3]]) -> Self {
        Self::with_cell(points, None)
    }

    pub fn with_cell(points: &[[f64; 3]], cell: Option<f64>) -> Self {
        let n = points.len().max(1);
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if points.is_empty() {
            lo = [0.0; 3];
            hi = [0.0; 3];
        }
        let ext: [f64; 3] = std::array::from_fn(|a| hi[a] - lo[a]);
        let emax = ext.iter().cloned().fold(0.0, f64::max).max(1e-9);
        let cell = cell.unwrap_or_else(|| {
            let e: [f64; 3] = ext.map(|v| v.max(emax * 1e-3));
            let nonflat = ext.iter().filter(|&&v| v > emax * 1e-3).count().max(1) as i32;
            let measure: f64 = e.iter().filter(|&&v| v > emax * 1e-3).product::<f64>().max(emax.powi(nonflat) * 1e-9);
            (measure / n as f64).powf(1.0 / nonflat as f64).max(emax / 1024.0)
        });
        let dims: [usize; 3] = ext.map(|v| ((v / cell).floor() as usize + 1).min(1 << 12));
        let ncell = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0u32; ncell + 1];
        let cell_of = |p: &[f64; 3]| -> usize {
            let c: [usize; 3] =
                std::array::from_fn(|a| (((p[a] - lo[a]) / cell).floor().max(0.0) as usize).min(dims[a] - 1));
            (c[0] * dims[1] + c[1]) * dims[2] + c[2]
        };
        let cells: Vec<usize> = points.iter().map(cell_of).collect();
        for &c in &cells {
            counts[c + 1] += 1;
        }
        for i in 0..ncell {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut order = vec![0u32; points.len()];
        for (i, &c) in cells.iter().enumerate() {
            order[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        Self {
            points: points.to_vec(),
            origin: lo,
            cell,
            dims,
            cell_start: counts,
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    fn cell_coord(&self, q: &[f64; 3]) -> [i64; 3] {
        std::array::from_fn(|a| ((q[a] - self.origin[a]) / self.cell).floor() as i64)
    }

    fn bucket(&self, c: [usize; 3]) -> &[u32] {
        let l = (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2];
        &self.order[self.cell_start[l] as usize..self.cell_start[l + 1] as usize]
    }

    /// Visit every grid cell at Chebyshev ring `r` around `qc`.
    fn for_ring(&self, qc: [i64; 3], r: i64, mut f: impl FnMut([usize; 3])) {
        let lo: [i64; 3] = std::array::from_fn(|a| (qc[a] - r).max(0));
        let hi: [i64; 3] = std::array::from_fn(|a| (qc[a] + r).min(self.dims[a] as i64 - 1));
        if (0..3).any(|a| lo[a] > hi[a]) {
            return;
        }
        for x in lo[0]..=hi[0] {
            let bx = (x - qc[0]).abs() == r;
            for y in lo[1]..=hi[1] {
                let by = (y - qc[1]).abs() == r;
                if bx || by {
                    for z in lo[2]..=hi[2] {
                        f([x as usize, y as usize, z as usize]);
                    }
                } else {
                    for z in [qc[2] - r, qc[2] + r] {
                        if z >= lo[2] && z <= hi[2] && (r > 0 || z == qc[2] - r) {
                            f([x as usize, y as usize, z as usize]);
                        }
                        if r == 0 {
                            break;
                        }
                    }
                }
            }
        }
    }

    fn ring_bounds(&self, qc: [i64; 3]) -> (i64, i64) {
        let mut start = 0i64;
        let mut end = 0i64;
        for a in 0..3 {
            let d = self.dims[a] as i64 - 1;
            let outside = if qc[a] < 0 { -qc[a] } else if qc[a] > d { qc[a] - d } else { 0 };
            start = start.max(outside);
            end = end.max(qc[a].abs()).max((qc[a] - d).abs());
        }
        (start, end)
    }

    /// The `k` nearest points to `q` as `(squared distance, index)`, sorted by
    /// distance then index. `exclude` skips one point index (self-queries).
    pub fn knn(&self, q: &[f64; 3], k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k == 0 || self.points.is_empty() {
            return best;
        }
        let qc = self.cell_coord(q);
        let (start, end) = self.ring_bounds(qc);
        for r in start..=end {
            self.for_ring(qc, r, |c| {
                for &i in self.bucket(c) {
                    let i = i as usize;
                    if Some(i) == exclude {
                        continue;
                    }
                    let d = dist2(q, &self.points[i]);
                    if best.len() < k || (d, i) < best[best.len() - 1] {
                        let pos = best.partition_point(|e| *e < (d, i));
                        best.insert(pos, (d, i));
                        if best.len() > k {
                            best.pop();
                        }
                    }
                }
            });
            if best.len() == k {
                let bound = r as f64 * self.cell;
                if best[k - 1].0 <= bound * bound {
                    break;
                }
            }
        }
        best
    }

    /// Nearest point as `(squared distance, index)`; `None` when empty.
    pub fn nearest(&self, q: &[f64; 3]) -> Option<(f64, usize)> {
        self.knn(q, 1, None).into_iter().next()
    }

    /// Number of points within distance `radius` (inclusive) of `q`.
    pub fn count_within(&self, q: &[f64; 3], radius: f64, exclude: Option<usize>) -> usize {
        if self.points.is_empty() {
            return 0;
        }
        let r2 = radius * radius;
        let lo = self.cell_coord(&[q[0] - radius, q[1] - radius, q[2] - radius]);
        let hi = self.cell_coord(&[q[0] + radius, q[1] + radius, q[2] + radius]);
        let mut count = 0;
        for x in lo[0].max(0)..=hi[0].min(self.dims[0] as i64 - 1) {
            for y in lo[1].max(0)..=hi[1].min(self.dims[1] as i64 - 1) {
                for z in lo[2].max(0)..=hi[2].min(self.dims[2] as i64 - 1) {
                    for &i in self.bucket([x as usize, y as usize, z as usize]) {
                        let i = i as usize;
                        if Some(i) != exclude && dist2(q, &self.points[i]) <= r2 {
                            count += 1;
                        }
                    }
                }
            }
        }
        count
    }
}
