//! Receptive-field arithmetic for square conv stacks.
//!
//! Per axis, a stack has field size `rf`, jump (aggregate stride) and
//! offset of output position 0, via the recurrence
//! `rf' = rf + (k−1)·jump`, `offset' = offset − pad·jump`, `jump' = jump·s`.

use serde::{Deserialize, Serialize};

use super::conv::ConvSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn bottom(&self) -> usize {
        self.top + self.height
    }

    pub fn right(&self) -> usize {
        self.left + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn intersects(&self, o: &Rect) -> bool {
        self.top < o.bottom() && o.top < self.bottom() && self.left < o.right() && o.left < self.right()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.top..self.bottom()).contains(&row) && (self.left..self.right()).contains(&col)
    }
}

/// Aggregate geometry of a stack along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackGeometry {
    pub size: usize,
    pub jump: usize,
    pub offset: isize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceptiveField {
    /// Input rectangle clipped to the image.
    pub rect: Rect,
    pub geometry: StackGeometry,
}

/// Geometry after each layer; entry `i` covers layers `0..=i`.
pub fn stack_geometry(layers: &[ConvSpec]) -> Result<Vec<StackGeometry>> {
    if layers.is_empty() {
        return Err(Error::config("receptive field of an empty layer stack"));
    }
    let mut g = StackGeometry { size: 1, jump: 1, offset: 0 };
    let mut out = Vec::with_capacity(layers.len());
    for l in layers {
        l.validate()?;
        g = StackGeometry { size: g.size + (l.kernel - 1) * g.jump, offset: g.offset - (l.padding * g.jump) as isize, jump: g.jump * l.stride };
        out.push(g);
    }
    Ok(out)
}

/// Output extent of the stack for an input extent.
pub fn stack_output_size(layers: &[ConvSpec], n: usize) -> Result<usize> {
    layers.iter().try_fold(n, |n, l| l.out_size(n))
}

fn clip_axis(start: isize, size: usize, n: usize) -> (usize, usize) {
    let lo = start.max(0) as usize;
    let hi = ((start + size as isize).max(0) as usize).min(n);
    (lo, hi.saturating_sub(lo))
}

/// Exact input rectangle seen by output position `pos = (row, col)` for an
/// input of `input = (height, width)`.
pub fn receptive_field(layers: &[ConvSpec], input: (usize, usize), pos: (usize, usize)) -> Result<ReceptiveField> {
    let geometry = *stack_geometry(layers)?.last().expect("non-empty");
    let oh = stack_output_size(layers, input.0)?;
    let ow = stack_output_size(layers, input.1)?;
    if pos.0 >= oh || pos.1 >= ow {
        return Err(Error::Index(format!("output position {pos:?} outside {oh}×{ow} map")));
    }
    let start = |p: usize| geometry.offset + (p * geometry.jump) as isize;
    let (top, height) = clip_axis(start(pos.0), geometry.size, input.0);
    let (left, width) = clip_axis(start(pos.1), geometry.size, input.1);
    Ok(ReceptiveField { rect: Rect { top, left, height, width }, geometry })
}

/// Result of a successful locality check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLocality {
    /// Map pixels per block side.
    pub block: usize,
    /// Input pixels between neighbouring block origins.
    pub block_stride: usize,
    /// Half the per-pixel field width, rounded up.
    pub field_radius: usize,
    /// Block tiles in row-major order; they partition the covered input.
    pub tiles: Vec<Rect>,
}

/// Checks that a stack keeps receptive fields local at the granularity of
/// `block × block` map pixels.
///
/// `block == 1` demands exact pixel disjointness (`rf ≤ jump` at every
/// layer). Larger blocks pass when the block stride in input pixels is at
/// least the field radius, so a block's field never reaches past its
/// neighbouring tiles. Failures name the first offending layer.
pub fn check_block_locality(layers: &[ConvSpec], input: (usize, usize), block: usize) -> Result<BlockLocality> {
    let geo = stack_geometry(layers)?;
    let last = *geo.last().expect("non-empty");
    let oh = stack_output_size(layers, input.0)?;
    let ow = stack_output_size(layers, input.1)?;
    if block == 0 || oh % block != 0 || ow % block != 0 {
        return Err(Error::config(format!("block {block} does not divide the {oh}×{ow} feature map")));
    }
    let block_stride = block * last.jump;
    let radius = |g: &StackGeometry| g.size.div_ceil(2);
    let offending = if block == 1 { geo.iter().position(|g| g.size > g.jump) } else { geo.iter().position(|g| radius(g) > block_stride) };
    if let Some(i) = offending {
        let l = layers[i];
        let g = geo[i];
        return Err(Error::config(format!(
            "layer {i} (kernel {}, stride {}, padding {}) breaks locality at block {block}: field {} with radius {} vs block stride {}",
            l.kernel,
            l.stride,
            l.padding,
            g.size,
            radius(&g),
            block_stride
        )));
    }
    let mut tiles = Vec::new();
    for br in 0..oh / block {
        for bc in 0..ow / block {
            let top = br * block_stride;
            let left = bc * block_stride;
            let height = block_stride.min(input.0.saturating_sub(top));
            let width = block_stride.min(input.1.saturating_sub(left));
            tiles.push(Rect { top, left, height, width });
        }
    }
    Ok(BlockLocality { block, block_stride, field_radius: radius(&last), tiles })
}

/// Union rectangle of the fields of a `block × block` group of map pixels.
pub fn block_field(layers: &[ConvSpec], input: (usize, usize), block: usize, idx: (usize, usize)) -> Result<Rect> {
    let a = receptive_field(layers, input, (idx.0 * block, idx.1 * block))?;
    let b = receptive_field(layers, input, ((idx.0 + 1) * block - 1, (idx.1 + 1) * block - 1))?;
    Ok(Rect { top: a.rect.top, left: a.rect.left, height: b.rect.bottom() - a.rect.top, width: b.rect.right() - a.rect.left })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(kernel: usize, stride: usize, padding: usize) -> ConvSpec {
        ConvSpec::new(1, 1, kernel, stride, padding)
    }

    /// Maps an output interval back through each layer.
    fn interval_oracle(layers: &[ConvSpec], lo: isize, hi: isize) -> (isize, isize) {
        layers.iter().rev().fold((lo, hi), |(a, b), l| {
            let (s, p, kk) = (l.stride as isize, l.padding as isize, l.kernel as isize);
            (a * s - p, b * s - p + kk - 1)
        })
    }

    #[test]
    fn single_stride4_tiles() {
        let l = [k(4, 4, 0)];
        assert_eq!(receptive_field(&l, (64, 64), (0, 0)).unwrap().rect, Rect { top: 0, left: 0, height: 4, width: 4 });
        assert_eq!(receptive_field(&l, (64, 64), (1, 0)).unwrap().rect, Rect { top: 4, left: 0, height: 4, width: 4 });
    }

    #[test]
    fn three_by_three_is_centred_and_clipped() {
        let l = [k(3, 1, 1)];
        let r = receptive_field(&l, (8, 8), (4, 5)).unwrap().rect;
        assert_eq!(r, Rect { top: 3, left: 4, height: 3, width: 3 });
        let c = receptive_field(&l, (8, 8), (0, 7)).unwrap().rect;
        assert_eq!(c, Rect { top: 0, left: 6, height: 2, width: 2 });
    }

    #[test]
    fn stacked_field_width_and_jump() {
        let g = *stack_geometry(&[k(4, 4, 0), k(3, 1, 1)]).unwrap().last().unwrap();
        assert_eq!((g.size, g.jump), (12, 4));
    }

    #[test]
    fn out_of_range_position_is_index_error() {
        assert!(matches!(receptive_field(&[k(4, 4, 0)], (16, 16), (4, 0)), Err(Error::Index(_))));
        assert!(matches!(receptive_field(&[], (16, 16), (0, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn recurrence_matches_interval_oracle() {
        let stacks = [vec![k(3, 2, 1), k(3, 1, 1), k(3, 2, 1), k(1, 2, 0)], vec![k(4, 4, 0), k(3, 1, 1), k(3, 1, 1)], vec![k(5, 1, 2), k(2, 2, 0)]];
        for l in &stacks {
            let n = 40;
            let out = stack_output_size(l, n).unwrap();
            for p in 0..out {
                let (a, b) = interval_oracle(l, p as isize, p as isize);
                let r = receptive_field(l, (n, n), (p, 0)).unwrap().rect;
                let (lo, hi) = (a.max(0) as usize, (b + 1).min(n as isize) as usize);
                assert_eq!((r.top, r.height), (lo, hi - lo));
            }
        }
    }

    #[test]
    fn single_layer_fields_partition_exactly() {
        let l = [k(4, 4, 0)];
        let mut owner = vec![0u32; 64 * 64];
        for i in 0..16 {
            for j in 0..16 {
                let r = receptive_field(&l, (64, 64), (i, j)).unwrap().rect;
                for y in r.top..r.bottom() {
                    for x in r.left..r.right() {
                        owner[y * 64 + x] += 1;
                    }
                }
            }
        }
        assert!(owner.iter().all(|&c| c == 1));
        assert!(check_block_locality(&l, (64, 64), 1).is_ok());
    }

    #[test]
    fn default_trunk_overlaps_per_pixel_but_blocks_are_local() {
        let l = [k(4, 4, 0), k(3, 1, 1)];
        let err = check_block_locality(&l, (64, 64), 1).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
        let ok = check_block_locality(&l, (64, 64), 4).unwrap();
        assert_eq!(ok.block_stride, 16);
        assert!(ok.field_radius <= ok.block_stride);
        // Tiles partition the input.
        let covered: usize = ok.tiles.iter().map(Rect::area).sum();
        assert_eq!(covered, 64 * 64);
        for (i, a) in ok.tiles.iter().enumerate() {
            for b in &ok.tiles[i + 1..] {
                assert!(!a.intersects(b));
            }
        }
        // Block fields are distinct and stay within one stride of their tile.
        let f00 = block_field(&l, (64, 64), 4, (0, 0)).unwrap();
        let f01 = block_field(&l, (64, 64), 4, (0, 1)).unwrap();
        assert_ne!(f00, f01);
        assert!(f01.left + ok.block_stride >= ok.tiles[1].left);
        assert!(f01.right() <= ok.tiles[1].right() + ok.block_stride);
        // Blocks two apart never share input pixels.
        let f02 = block_field(&l, (64, 64), 4, (0, 2)).unwrap();
        assert!(!f00.intersects(&f02));
    }

    #[test]
    fn block_must_divide_map() {
        assert!(check_block_locality(&[k(4, 4, 0)], (64, 64), 3).is_err());
    }
}
