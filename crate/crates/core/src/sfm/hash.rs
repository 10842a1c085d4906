use crate::geometry::Vec2;

/// Uniform bin grid over a bounding box, rebuilt every step with a
/// counting sort so iteration order is deterministic.
#[derive(Debug, Clone)]
pub struct SpatialHash {
    origin: Vec2,
    bin: f64,
    nx: usize,
    ny: usize,
    starts: Vec<usize>,
    items: Vec<usize>,
    bins_of: Vec<usize>,
}

impl SpatialHash {
    pub fn new(lo: Vec2, hi: Vec2, bin: f64) -> Self {
        let nx = (((hi.x - lo.x) / bin).ceil() as usize).max(1);
        let ny = (((hi.y - lo.y) / bin).ceil() as usize).max(1);
        SpatialHash { origin: lo, bin, nx, ny, starts: vec![0; nx * ny + 1], items: Vec::new(), bins_of: Vec::new() }
    }

    fn coords(&self, p: Vec2) -> (usize, usize) {
        let ix = ((p.x - self.origin.x) / self.bin).floor();
        let iy = ((p.y - self.origin.y) / self.bin).floor();
        let cx = if ix.is_nan() { 0.0 } else { ix.clamp(0.0, (self.nx - 1) as f64) };
        let cy = if iy.is_nan() { 0.0 } else { iy.clamp(0.0, (self.ny - 1) as f64) };
        (cx as usize, cy as usize)
    }

    /// Indexes `(key, position)` pairs; keys are returned by `near`.
    pub fn rebuild<I>(&mut self, entries: I)
    where
        I: IntoIterator<Item = (usize, Vec2)>,
    {
        let entries: Vec<(usize, Vec2)> = entries.into_iter().collect();
        self.starts.iter_mut().for_each(|s| *s = 0);
        self.bins_of.clear();
        for &(_, p) in &entries {
            let (x, y) = self.coords(p);
            let b = y * self.nx + x;
            self.bins_of.push(b);
            self.starts[b + 1] += 1;
        }
        for i in 1..self.starts.len() {
            self.starts[i] += self.starts[i - 1];
        }
        let mut fill = self.starts.clone();
        self.items.clear();
        self.items.resize(entries.len(), 0);
        for (&(key, _), &b) in entries.iter().zip(&self.bins_of) {
            self.items[fill[b]] = key;
            fill[b] += 1;
        }
    }

    /// Keys in the 3×3 block of bins around `p`. With bin size at least the
    /// interaction cutoff this is a superset of all neighbors within it.
    pub fn near(&self, p: Vec2) -> impl Iterator<Item = usize> + '_ {
        let (cx, cy) = self.coords(p);
        let x0 = cx.saturating_sub(1);
        let x1 = (cx + 1).min(self.nx - 1);
        let y0 = cy.saturating_sub(1);
        let y1 = (cy + 1).min(self.ny - 1);
        (y0..=y1).flat_map(move |y| {
            let row = y * self.nx;
            self.items[self.starts[row + x0]..self.starts[row + x1 + 1]].iter().copied()
        })
    }
}
