//! Dense row-major 2-D grid used for images, depth maps and gradient fields.

use std::ops::{Index, IndexMut};

/// Row-major `height × width` grid. Indexing is `(x, y)`: column then row.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Wraps an existing row-major buffer. Panics if the length does not match.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "grid buffer length");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(height, width)`, matching the row-major layout.
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn get(&self, x: isize, y: isize) -> Option<&T> {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            None
        } else {
            Some(&self.data[y as usize * self.width + x as usize])
        }
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.data.iter()
    }
}

impl Grid<f64> {
    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Bilinear interpolation with pixel centres at integer coordinates.
    /// Returns `None` outside `[0, w-1] × [0, h-1]`.
    pub fn bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(x >= 0.0 && y >= 0.0 && x <= w - 1.0 && y <= h - 1.0) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self[(x0, y0)] * (1.0 - fx) + self[(x1, y0)] * fx;
        let bottom = self[(x0, y1)] * (1.0 - fx) + self[(x1, y1)] * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }
}

impl<T> Index<(usize, usize)> for Grid<T> {
    type Output = T;

    #[inline]
    fn index(&self, (x, y): (usize, usize)) -> &T {
        debug_assert!(x < self.width && y < self.height);
        &self.data[y * self.width + x]
    }
}

impl<T> IndexMut<(usize, usize)> for Grid<T> {
    #[inline]
    fn index_mut(&mut self, (x, y): (usize, usize)) -> &mut T {
        debug_assert!(x < self.width && y < self.height);
        &mut self.data[y * self.width + x]
    }
}

/// Summed-area table for O(1) box means.
pub(crate) struct Integral {
    width: usize,
    height: usize,
    sums: Vec<f64>,
}

impl Integral {
    pub(crate) fn new(src: &Grid<f64>) -> Self {
        let (w, h) = (src.width(), src.height());
        let stride = w + 1;
        let mut sums = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut acc = 0.0;
            for x in 0..w {
                acc += src[(x, y)];
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + acc;
            }
        }
        Self {
            width: w,
            height: h,
            sums,
        }
    }

    /// Mean over the window of half-size `r` centred at `(x, y)`, clipped to the grid.
    pub(crate) fn box_mean(&self, x: usize, y: usize, r: usize) -> f64 {
        let x0 = x.saturating_sub(r);
        let y0 = y.saturating_sub(r);
        let x1 = (x + r + 1).min(self.width);
        let y1 = (y + r + 1).min(self.height);
        let stride = self.width + 1;
        let s = self.sums[y1 * stride + x1] - self.sums[y0 * stride + x1]
            - self.sums[y1 * stride + x0]
            + self.sums[y0 * stride + x0];
        s / ((x1 - x0) * (y1 - y0)) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_hits_pixel_values_and_midpoints() {
        let g = Grid::from_fn(4, 3, |x, y| (x + 10 * y) as f64);
        assert_eq!(g.bilinear(2.0, 1.0), Some(12.0));
        assert_eq!(g.bilinear(3.0, 2.0), Some(23.0));
        assert!((g.bilinear(0.5, 0.5).unwrap() - 5.5).abs() < 1e-12);
        assert_eq!(g.bilinear(3.01, 0.0), None);
        assert_eq!(g.bilinear(-0.01, 0.0), None);
    }

    #[test]
    fn box_mean_matches_direct_sum() {
        let g = Grid::from_fn(9, 7, |x, y| ((x * 7 + y * 3) % 5) as f64);
        let integral = Integral::new(&g);
        for (x, y, r) in [(0usize, 0usize, 2usize), (4, 3, 1), (8, 6, 3), (4, 3, 10)] {
            let mut s = 0.0;
            let mut n = 0;
            for yy in y.saturating_sub(r)..(y + r + 1).min(7) {
                for xx in x.saturating_sub(r)..(x + r + 1).min(9) {
                    s += g[(xx, yy)];
                    n += 1;
                }
            }
            assert!((integral.box_mean(x, y, r) - s / n as f64).abs() < 1e-12);
        }
    }
}
