//! Anti-aliased stroke rasterization into coverage buffers.

use rand::Rng;

pub type Point = (f32, f32);

/// Coverage in `[0, 1]` for a `height × width` grid (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl Coverage {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    /// Draws a thick polyline; points are `(x, y)` in pixel coordinates where
    /// pixel centres sit at integer positions.
    pub fn stroke_polyline(&mut self, points: &[Point], thickness: f32) {
        for seg in points.windows(2) {
            self.stroke_segment(seg[0], seg[1], thickness);
        }
        if points.len() == 1 {
            self.stroke_segment(points[0], points[0], thickness);
        }
    }

    fn stroke_segment(&mut self, a: Point, b: Point, thickness: f32) {
        let half = thickness * 0.5;
        let reach = half + 1.0;
        let x0 = (a.0.min(b.0) - reach).floor().max(0.0) as isize;
        let x1 = (a.0.max(b.0) + reach).ceil().min(self.width as f32 - 1.0) as isize;
        let y0 = (a.1.min(b.1) - reach).floor().max(0.0) as isize;
        let y1 = (a.1.max(b.1) + reach).ceil().min(self.height as f32 - 1.0) as isize;
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (px, py) = (x as f32, y as f32);
                let t = if len2 > 0.0 {
                    (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
                let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                let c = (half + 0.5 - d).clamp(0.0, 1.0);
                let idx = y as usize * self.width + x as usize;
                if c > self.values[idx] {
                    self.values[idx] = c;
                }
            }
        }
    }

    pub fn mask(&self) -> Vec<bool> {
        self.values.iter().map(|c| *c >= 0.5).collect()
    }
}

/// Samples a Catmull-Rom spline through `controls` into a dense polyline.
pub fn catmull_rom(controls: &[Point], samples_per_span: usize) -> Vec<Point> {
    if controls.len() < 2 {
        return controls.to_vec();
    }
    let n = controls.len();
    let at = |i: isize| controls[i.clamp(0, n as isize - 1) as usize];
    let mut out = Vec::with_capacity((n - 1) * samples_per_span + 1);
    for i in 0..n - 1 {
        let (p0, p1, p2, p3) = (
            at(i as isize - 1),
            at(i as isize),
            at(i as isize + 1),
            at(i as isize + 2),
        );
        for s in 0..samples_per_span {
            let t = s as f32 / samples_per_span as f32;
            let (t2, t3) = (t * t, t * t * t);
            let f = |a: f32, b: f32, c: f32, d: f32| {
                0.5 * (2.0 * b
                    + (-a + c) * t
                    + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2
                    + (-a + 3.0 * b - 3.0 * c + d) * t3)
            };
            out.push((f(p0.0, p1.0, p2.0, p3.0), f(p0.1, p1.1, p2.1, p3.1)));
        }
    }
    out.push(controls[n - 1]);
    out
}

/// Smooth value noise in `[-1, 1]`: a random lattice bilinearly interpolated.
pub fn value_noise<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    cells: usize,
    rng: &mut R,
) -> Vec<f32> {
    let g = cells.max(1) + 1;
    let lattice: Vec<f32> = (0..g * g).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let fy = y as f32 / height.max(2) as f32 * cells as f32;
        let (iy, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..width {
            let fx = x as f32 / width.max(2) as f32 * cells as f32;
            let (ix, tx) = (fx.floor() as usize, fx.fract());
            let v = |yy: usize, xx: usize| lattice[yy.min(g - 1) * g + xx.min(g - 1)];
            let top = v(iy, ix) * (1.0 - tx) + v(iy, ix + 1) * tx;
            let bottom = v(iy + 1, ix) * (1.0 - tx) + v(iy + 1, ix + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Number of 8-connected components of `true` cells.
pub fn connected_components(mask: &[bool], height: usize, width: usize) -> usize {
    let mut seen = vec![false; mask.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = ((i / width) as isize, (i % width) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= height as isize || nx >= width as isize {
                        continue;
                    }
                    let j = ny as usize * width + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    count
}
