//! Spatial grid fragmentation.
//!
//! A frame is cut into `G×G` equal cells; one `S×S` patch is taken from each
//! cell at a per-cell offset and the patches are spliced, in grid order, into a
//! `(G·S)×(G·S)` mosaic. The same offsets are used for every frame.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::{Video, CHANNELS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridParams {
    pub grids: usize,
    pub patch: usize,
    /// Row-major `G×G` list of `(h, w)` patch offsets inside each cell.
    pub offsets: Vec<(usize, usize)>,
}

impl GridParams {
    /// Zero-offset params, valid whenever the frame fits the grid.
    pub fn aligned(grids: usize, patch: usize) -> Self {
        Self {
            grids,
            patch,
            offsets: vec![(0, 0); grids * grids],
        }
    }

    pub fn output_side(&self) -> usize {
        self.grids * self.patch
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        check_dims(height, width, self.grids, self.patch)?;
        if self.offsets.len() != self.grids * self.grids {
            return Err(Error::Grid(format!(
                "{} offsets for a {}x{} grid",
                self.offsets.len(),
                self.grids,
                self.grids
            )));
        }
        let (slack_h, slack_w) = (height / self.grids - self.patch, width / self.grids - self.patch);
        if let Some(&(h, w)) = self.offsets.iter().find(|&&(h, w)| h > slack_h || w > slack_w) {
            return Err(Error::Grid(format!(
                "offset ({h}, {w}) exceeds cell slack ({slack_h}, {slack_w})"
            )));
        }
        Ok(())
    }
}

fn check_dims(height: usize, width: usize, grids: usize, patch: usize) -> Result<()> {
    if grids == 0 || patch == 0 {
        return Err(Error::Grid("grid count and patch side must be >= 1".into()));
    }
    if height % grids != 0 || width % grids != 0 {
        return Err(Error::Grid(format!(
            "frame {height}x{width} not divisible into {grids}x{grids} cells"
        )));
    }
    if patch > height / grids || patch > width / grids {
        return Err(Error::Grid(format!(
            "patch {patch} larger than cell {}x{}",
            height / grids,
            width / grids
        )));
    }
    Ok(())
}

/// Draws every cell offset independently and uniformly from `{0..H/G−S}×{0..W/G−S}`.
pub fn sample_grid_offsets<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    grids: usize,
    patch: usize,
    rng: &mut R,
) -> Result<GridParams> {
    check_dims(height, width, grids, patch)?;
    let (slack_h, slack_w) = (height / grids - patch, width / grids - patch);
    let offsets = (0..grids * grids)
        .map(|_| (rng.random_range(0..=slack_h), rng.random_range(0..=slack_w)))
        .collect();
    Ok(GridParams {
        grids,
        patch,
        offsets,
    })
}

/// For each output pixel of the mosaic (row-major), the flat `y·W + x` index of
/// its source pixel in an `height×width` frame.
pub fn fragment_index_map(height: usize, width: usize, gp: &GridParams) -> Result<Vec<usize>> {
    gp.validate(height, width)?;
    let (cell_h, cell_w) = (height / gp.grids, width / gp.grids);
    let side = gp.output_side();
    let mut map = vec![0; side * side];
    for i in 0..gp.grids {
        for j in 0..gp.grids {
            let (oh, ow) = gp.offsets[i * gp.grids + j];
            for py in 0..gp.patch {
                let sy = i * cell_h + oh + py;
                let dy = i * gp.patch + py;
                for px in 0..gp.patch {
                    let sx = j * cell_w + ow + px;
                    let dx = j * gp.patch + px;
                    map[dy * side + dx] = sy * width + sx;
                }
            }
        }
    }
    Ok(map)
}

/// Applies the same fragmentation to every frame.
pub fn grid_fragment(video: &Video, gp: &GridParams) -> Result<Video> {
    let map = fragment_index_map(video.height(), video.width(), gp)?;
    let side = gp.output_side();
    let mut data = Vec::with_capacity(video.frames() * side * side * CHANNELS);
    for t in 0..video.frames() {
        let frame = video.frame(t);
        for &src in &map {
            data.extend_from_slice(&frame[src * CHANNELS..src * CHANNELS + CHANNELS]);
        }
    }
    Video::new(video.frames(), side, side, data)
}

/// Largest `(y0, x0, h, w)` window with `h` and `w` divisible by `grids`, centered.
pub fn center_crop_window(height: usize, width: usize, grids: usize) -> (usize, usize, usize, usize) {
    let h = height - height % grids;
    let w = width - width % grids;
    ((height - h) / 2, (width - w) / 2, h, w)
}
