//! Grid selection and the splice/split bijection between per-secret
//! representations and the single mosaic representation.

use crate::error::{contract_err, dim_err, Result};
use crate::tensor::{Scalar, Tensor};

/// How `N` secret representations are tiled into one mosaic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MosaicLayout {
    pub n_secrets: usize,
    pub rows: usize,
    pub cols: usize,
    /// `(C, H, W)` of one tile once bound to an image size.
    pub tile_shape: Option<(usize, usize, usize)>,
}

impl MosaicLayout {
    /// Number of grid cells `m·n`.
    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Zero tiles appended after the real ones.
    pub fn pad_count(&self) -> usize {
        self.cells() - self.n_secrets
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Binds the layout to `K×H×W` secrets: each tile is `mnK×H/m×W/n`.
    pub fn with_image(mut self, channels: usize, h: usize, w: usize) -> Result<Self> {
        if h % self.rows != 0 || w % self.cols != 0 {
            return dim_err(format!(
                "image {}×{} not divisible by grid {}×{}",
                h, w, self.rows, self.cols
            ));
        }
        self.tile_shape = Some((channels * self.cells(), h / self.rows, w / self.cols));
        Ok(self)
    }
}

fn is_composite(n: usize) -> bool {
    n >= 4 && (2..).take_while(|d| d * d <= n).any(|d| n % d == 0)
}

/// Factor pair `(m, n)` with `m ≤ n`, `m·n = cells` and `n - m` minimal.
fn balanced_factors(cells: usize) -> (usize, usize) {
    let mut best = (1, cells);
    let mut d = 1;
    while d * d <= cells {
        if cells % d == 0 {
            best = (d, cells / d);
        }
        d += 1;
    }
    best
}

/// Picks the mosaic grid for `n` secrets.
///
/// Composite counts factor as evenly as possible (rows ≤ columns); primes
/// move to the smallest composite above them and pad with zero tiles.
pub fn grid_shape(n: usize) -> Result<MosaicLayout> {
    if n == 0 {
        return contract_err("secret count must be at least 1");
    }
    let cells = if n == 1 || is_composite(n) {
        n
    } else {
        (n + 1..).find(|&c| is_composite(c)).expect("composites are unbounded")
    };
    let (rows, cols) = balanced_factors(cells);
    Ok(MosaicLayout {
        n_secrets: n,
        rows,
        cols,
        tile_shape: None,
    })
}

/// Places tile `i` at grid cell `(i / cols, i % cols)`; unused cells are zero.
pub fn splice<T: Scalar>(tiles: &[&Tensor<T>], layout: &MosaicLayout) -> Result<Tensor<T>> {
    if tiles.len() != layout.n_secrets {
        return contract_err(format!(
            "layout expects {} tiles, got {}",
            layout.n_secrets,
            tiles.len()
        ));
    }
    let (c, th, tw) = tiles[0].chw()?;
    if let Some(bad) = tiles.iter().find(|t| t.shape() != tiles[0].shape()) {
        return dim_err(format!(
            "ragged tiles: {:?} vs {:?}",
            bad.shape(),
            tiles[0].shape()
        ));
    }
    let (h, w) = (th * layout.rows, tw * layout.cols);
    let mut out = vec![T::zero(); c * h * w];
    for (i, tile) in tiles.iter().enumerate() {
        let (r0, c0) = ((i / layout.cols) * th, (i % layout.cols) * tw);
        for ch in 0..c {
            for y in 0..th {
                let src = &tile.data()[(ch * th + y) * tw..(ch * th + y + 1) * tw];
                let start = (ch * h + r0 + y) * w + c0;
                out[start..start + tw].copy_from_slice(src);
            }
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

/// Spatial window `[top, top+h) × [left, left+w)` of every channel.
pub fn crop<T: Scalar>(x: &Tensor<T>, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let (c, xh, xw) = x.chw()?;
    if top + h > xh || left + w > xw {
        return dim_err(format!(
            "crop {}×{} at ({}, {}) exceeds {}×{}",
            h, w, top, left, xh, xw
        ));
    }
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            let start = (ch * xh + top + y) * xw + left;
            out.extend_from_slice(&x.data()[start..start + w]);
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

/// Cell rectangle `(top, left, h, w)` of tile `i` in a mosaic of the given size.
pub(crate) fn cell_rect(layout: &MosaicLayout, i: usize, h: usize, w: usize) -> (usize, usize, usize, usize) {
    let (th, tw) = (h / layout.rows, w / layout.cols);
    ((i / layout.cols) * th, (i % layout.cols) * tw, th, tw)
}

/// Inverse of [`splice`]; padding tiles are dropped.
pub fn split<T: Scalar>(msr: &Tensor<T>, layout: &MosaicLayout) -> Result<Vec<Tensor<T>>> {
    let (_, h, w) = msr.chw()?;
    if h % layout.rows != 0 || w % layout.cols != 0 {
        return dim_err(format!(
            "mosaic {}×{} not divisible by grid {}×{}",
            h, w, layout.rows, layout.cols
        ));
    }
    (0..layout.n_secrets)
        .map(|i| {
            let (top, left, th, tw) = cell_rect(layout, i, h, w);
            crop(msr, top, left, th, tw)
        })
        .collect()
}
