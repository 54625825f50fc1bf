//! Dense 2D probability grids, Gaussian smoothing and overlaps.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Dense grid indexed by `(row, col)`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Grid2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Grid2 { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut g = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                g.data[r * cols + c] = f(r, c);
            }
        }
        g
    }

    /// Outer product `a[r] * b[c]`.
    pub fn outer(a: &[f64], b: &[f64]) -> Self {
        Self::from_fn(a.len(), b.len(), |r, c| a[r] * b[c])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        if r < self.rows && c < self.cols {
            self.data[r * self.cols + c]
        } else {
            0.0
        }
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    /// Copy into a `rows x cols` grid, truncating or zero-padding.
    pub fn resized(&self, rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |r, c| self.get(r, c))
    }

    pub fn row_marginal(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.data[r * self.cols..(r + 1) * self.cols].iter().sum()).collect()
    }

    pub fn col_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (c, x) in self.data[r * self.cols..(r + 1) * self.cols].iter().enumerate() {
                m[c] += x;
            }
        }
        m
    }
}

/// Truncated Gaussian weights for offsets `-radius..=radius`.
fn gaussian_weights(sigma: f64) -> (usize, Vec<f64>) {
    let radius = (8.0 * sigma).ceil().max(1.0) as usize;
    let w = (0..=2 * radius)
        .map(|k| {
            let d = k as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    (radius, w)
}

/// Scatter each source cell into its Gaussian neighbourhood, with the kernel
/// renormalized over the part that lands inside `0..len`. Mass is preserved.
pub fn smooth_1d(xs: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return domain(format!("smoothing width must be positive, got {sigma}"));
    }
    let (radius, w) = gaussian_weights(sigma);
    Ok(smooth_1d_with(xs, radius, &w))
}

fn smooth_1d_with(xs: &[f64], radius: usize, w: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut out = vec![0.0; n];
    for (i, &x) in xs.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(n - 1);
        let k0 = lo + radius - i;
        let norm: f64 = w[k0..k0 + (hi - lo + 1)].iter().sum();
        for (j, wk) in (lo..=hi).zip(&w[k0..]) {
            out[j] += x * wk / norm;
        }
    }
    out
}

/// Gaussian smoothing of a non-negative grid with width `sigma` (in cells).
///
/// Applied separably; because the in-grid renormalization of a product kernel
/// on a rectangle factorizes, this equals the direct 2D scatter.
pub fn gaussian_smooth(grid: &Grid2, sigma: f64) -> Result<Grid2> {
    if !(sigma > 0.0) {
        return domain(format!("smoothing width must be positive, got {sigma}"));
    }
    if grid.data.iter().any(|&x| x < 0.0) {
        return domain("grid has negative entries");
    }
    let (radius, w) = gaussian_weights(sigma);
    let mut tmp = Grid2::zeros(grid.rows, grid.cols);
    for r in 0..grid.rows {
        let row = &grid.data[r * grid.cols..(r + 1) * grid.cols];
        let s = smooth_1d_with(row, radius, &w);
        tmp.data[r * grid.cols..(r + 1) * grid.cols].copy_from_slice(&s);
    }
    let mut out = Grid2::zeros(grid.rows, grid.cols);
    let mut col = vec![0.0; grid.rows];
    for c in 0..grid.cols {
        for r in 0..grid.rows {
            col[r] = tmp.data[r * grid.cols + c];
        }
        let s = smooth_1d_with(&col, radius, &w);
        for r in 0..grid.rows {
            out.data[r * grid.cols + c] = s[r].max(0.0);
        }
    }
    Ok(out)
}

/// `Σ sqrt(q1 q2)` for two normalized grids of equal shape.
pub fn bhattacharyya_overlap(q1: &Grid2, q2: &Grid2) -> Result<f64> {
    if q1.rows != q2.rows || q1.cols != q2.cols {
        return domain(format!(
            "grid shapes differ: {}x{} vs {}x{}",
            q1.rows, q1.cols, q2.rows, q2.cols
        ));
    }
    for (name, q) in [("first", q1), ("second", q2)] {
        let t = q.total();
        if (t - 1.0).abs() > 1e-8 {
            return domain(format!("{name} grid is not normalized (total {t})"));
        }
    }
    let s: f64 = q1.data.iter().zip(&q2.data).map(|(a, b)| (a.max(0.0) * b.max(0.0)).sqrt()).sum();
    Ok(s.clamp(0.0, 1.0))
}

/// Overlap of two product distributions `a1⊗b1` and `a2⊗b2`, which factorizes.
pub fn product_overlap(a1: &[f64], b1: &[f64], a2: &[f64], b2: &[f64]) -> f64 {
    let one = |x: &[f64], y: &[f64]| -> f64 {
        let n = x.len().max(y.len());
        (0..n)
            .map(|i| (x.get(i).copied().unwrap_or(0.0) * y.get(i).copied().unwrap_or(0.0)).max(0.0).sqrt())
            .sum()
    };
    (one(a1, a2) * one(b1, b2)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn direct_2d(grid: &Grid2, sigma: f64) -> Grid2 {
        let radius = (8.0 * sigma).ceil() as i64;
        let mut out = Grid2::zeros(grid.rows, grid.cols);
        for r in 0..grid.rows as i64 {
            for c in 0..grid.cols as i64 {
                let x = grid.get(r as usize, c as usize);
                if x == 0.0 {
                    continue;
                }
                let mut cells = Vec::new();
                let mut norm = 0.0;
                for dr in -radius..=radius {
                    for dc in -radius..=radius {
                        let (rr, cc) = (r + dr, c + dc);
                        if rr < 0 || cc < 0 || rr >= grid.rows as i64 || cc >= grid.cols as i64 {
                            continue;
                        }
                        let w = (-0.5 * ((dr * dr + dc * dc) as f64) / (sigma * sigma)).exp();
                        norm += w;
                        cells.push((rr as usize, cc as usize, w));
                    }
                }
                for (rr, cc, w) in cells {
                    let v = out.get(rr, cc) + x * w / norm;
                    out.set(rr, cc, v);
                }
            }
        }
        out
    }

    #[test]
    fn impulse_response_is_symmetric_bump() {
        let mut g = Grid2::zeros(11, 11);
        g.set(5, 5, 1.0);
        let s = gaussian_smooth(&g, 1.0).unwrap();
        assert!((s.total() - 1.0).abs() < 1e-12);
        let peak = s.get(5, 5);
        for (r, c) in [(4, 5), (6, 5), (5, 4), (5, 6)] {
            assert!((s.get(r, c) - s.get(5, 5) * (-0.5f64).exp()).abs() < 1e-12);
            assert!(s.get(r, c) < peak);
        }
        assert!((s.get(3, 7) - s.get(7, 3)).abs() < 1e-15);
    }

    #[test]
    fn uniform_interior_unchanged() {
        let n = 80;
        let v = 1.0 / (n * n) as f64;
        let g = Grid2::from_fn(n, n, |_, _| v);
        let s = gaussian_smooth(&g, 2.0).unwrap();
        // cells whose whole neighbourhood of sources has untruncated kernels
        for r in 32..48 {
            for c in 32..48 {
                assert!((s.get(r, c) - v).abs() < 1e-10 * v);
            }
        }
    }

    #[test]
    fn separable_equals_direct() {
        let g = Grid2::from_fn(9, 13, |r, c| ((r * 7 + c * 3) % 5) as f64);
        let a = gaussian_smooth(&g, 0.8).unwrap();
        let b = direct_2d(&g, 0.8);
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_sigma() {
        let g = Grid2::zeros(3, 3);
        assert!(gaussian_smooth(&g, 0.0).is_err());
        assert!(gaussian_smooth(&g, -1.0).is_err());
    }

    #[test]
    fn overlap_identities() {
        let q = Grid2::from_fn(4, 4, |r, c| ((r + c) as f64 + 1.0) / 64.0);
        assert!((bhattacharyya_overlap(&q, &q).unwrap() - 1.0).abs() < 1e-12);
        let mut a = Grid2::zeros(2, 2);
        a.set(0, 0, 1.0);
        let mut b = Grid2::zeros(2, 2);
        b.set(1, 1, 1.0);
        assert_eq!(bhattacharyya_overlap(&a, &b).unwrap(), 0.0);
        assert!(bhattacharyya_overlap(&a, &Grid2::zeros(3, 2)).is_err());
    }

    #[test]
    fn product_overlap_matches_grid() {
        let a1 = [0.2, 0.3, 0.5];
        let b1 = [0.6, 0.4];
        let a2 = [0.5, 0.25, 0.25];
        let b2 = [0.1, 0.9];
        let g = bhattacharyya_overlap(&Grid2::outer(&a1, &b1), &Grid2::outer(&a2, &b2)).unwrap();
        assert!((g - product_overlap(&a1, &b1, &a2, &b2)).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn smoothing_preserves_mass(
            cells in proptest::collection::vec(0.0f64..1.0, 48),
            sigma in 0.2f64..5.0,
        ) {
            let g = Grid2 { rows: 6, cols: 8, data: cells };
            let s = gaussian_smooth(&g, sigma).unwrap();
            prop_assert!((s.total() - g.total()).abs() < 1e-10);
            prop_assert!(s.data.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn overlap_symmetric_in_unit_interval(
            a in proptest::collection::vec(0.0f64..1.0, 12),
            b in proptest::collection::vec(0.0f64..1.0, 12),
        ) {
            let norm = |v: Vec<f64>| {
                let t: f64 = v.iter().sum::<f64>().max(1e-12);
                Grid2 { rows: 3, cols: 4, data: v.into_iter().map(|x| x / t).collect() }
            };
            let (ga, gb) = (norm(a), norm(b));
            prop_assume!((ga.total() - 1.0).abs() < 1e-9 && (gb.total() - 1.0).abs() < 1e-9);
            let x = bhattacharyya_overlap(&ga, &gb).unwrap();
            let y = bhattacharyya_overlap(&gb, &ga).unwrap();
            prop_assert!(x == y && (0.0..=1.0).contains(&x));
        }
    }
}
