//! Binary rasters and the pixel-level helpers built on them.

use std::collections::VecDeque;

use crate::geometry::Point2;

/// Row-major binary raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn filled(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(x, y);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Out-of-bounds reads are background.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            false
        } else {
            self.data[y as usize * self.width + x as usize]
        }
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of the foreground.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bb = Some(match bb {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bb
    }

    /// Copy of the region `[x0, x0+w) x [y0, y0+h)`; outside pixels are background.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Mask {
        Mask::from_fn(w, h, |x, y| {
            let (sx, sy) = (x + x0, y + y0);
            sx < self.width && sy < self.height && self.get(sx, sy)
        })
    }

    /// Foreground pixels with at least one 4-neighbor that is background or
    /// outside the raster.
    pub fn is_boundary(&self, x: usize, y: usize) -> bool {
        if !self.get(x, y) {
            return false;
        }
        let (x, y) = (x as i64, y as i64);
        !self.get_signed(x - 1, y)
            || !self.get_signed(x + 1, y)
            || !self.get_signed(x, y - 1)
            || !self.get_signed(x, y + 1)
    }
}

pub const N4: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];
pub const N8: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

/// Connected-component labelling. Labels start at 1; 0 is background.
/// Returns the label image and per-label pixel counts (index 0 unused).
pub fn label_components(mask: &Mask, eight: bool) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut sizes = vec![0usize];
    let nbrs: &[(i64, i64)] = if eight { &N8 } else { &N4 };
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.data[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32;
        sizes.push(0);
        labels[start] = label;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            sizes[label as usize] += 1;
            let (x, y) = ((idx % w) as i64, (idx / w) as i64);
            for &(dx, dy) in nbrs {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let n = ny as usize * w + nx as usize;
                if mask.data[n] && labels[n] == 0 {
                    labels[n] = label;
                    queue.push_back(n);
                }
            }
        }
    }
    (labels, sizes)
}

/// Whether the background of `mask` (4-connected) is entirely reachable from
/// outside the raster, i.e. the foreground has no holes.
pub fn has_holes(mask: &Mask) -> bool {
    let (w, h) = (mask.width() + 2, mask.height() + 2);
    let bg = |x: usize, y: usize| -> bool {
        x == 0 || y == 0 || x == w - 1 || y == h - 1 || !mask.get(x - 1, y - 1)
    };
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut reached = 0usize;
    while let Some(idx) = queue.pop_front() {
        reached += 1;
        let (x, y) = ((idx % w) as i64, (idx / w) as i64);
        for &(dx, dy) in &N4 {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let n = ny as usize * w + nx as usize;
            if !seen[n] && bg(nx as usize, ny as usize) {
                seen[n] = true;
                queue.push_back(n);
            }
        }
    }
    let total_bg = w * h - mask.count();
    reached != total_bg
}

/// 8-connected digital line between two pixel centers (inclusive).
pub fn bresenham(x0: i64, y0: i64, x1: i64, y1: i64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let (mut x, mut y) = (x0, y0);
    loop {
        out.push((x, y));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Pixels of a polyline rasterized as a chain of 8-connected digital lines.
pub fn rasterize_polyline(points: &[Point2]) -> Vec<(i64, i64)> {
    let mut out: Vec<(i64, i64)> = Vec::new();
    let round = |p: &Point2| (p.x.round() as i64, p.y.round() as i64);
    if let Some(first) = points.first() {
        out.push(round(first));
    }
    for w in points.windows(2) {
        let (a, b) = (round(&w[0]), round(&w[1]));
        for px in bresenham(a.0, a.1, b.0, b.1).into_iter().skip(1) {
            out.push(px);
        }
    }
    out
}

/// Squared Euclidean distance from every pixel of a `width x height` grid to
/// the nearest site. Grids without sites get `f64::INFINITY`.
pub fn squared_distance_transform(width: usize, height: usize, sites: &[(usize, usize)]) -> Vec<f64> {
    let mut f = vec![f64::INFINITY; width * height];
    for &(x, y) in sites {
        if x < width && y < height {
            f[y * width + x] = 0.0;
        }
    }
    if sites.is_empty() {
        return f;
    }
    let mut buf_in = vec![0.0; width.max(height)];
    let mut buf_out = vec![0.0; width.max(height)];
    // columns
    for x in 0..width {
        for y in 0..height {
            buf_in[y] = f[y * width + x];
        }
        edt_1d(&buf_in[..height], &mut buf_out[..height]);
        for y in 0..height {
            f[y * width + x] = buf_out[y];
        }
    }
    // rows
    for y in 0..height {
        buf_in[..width].copy_from_slice(&f[y * width..(y + 1) * width]);
        edt_1d(&buf_in[..width], &mut buf_out[..width]);
        f[y * width..(y + 1) * width].copy_from_slice(&buf_out[..width]);
    }
    f
}

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher).
fn edt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    let mut first = None;
    for (q, &fq) in f.iter().enumerate() {
        if fq.is_finite() {
            first = Some(q);
            break;
        }
    }
    let Some(first) = first else {
        d.iter_mut().for_each(|x| *x = f64::INFINITY);
        return;
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in (first + 1)..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, dq) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let diff = q as f64 - p as f64;
        *dq = diff * diff + f[p];
    }
}
