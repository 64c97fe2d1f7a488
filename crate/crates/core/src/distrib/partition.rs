use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ColumnId, GridSpec};

/// Assignment of columns to workers as a `tiles_x * tiles_y` arrangement of
/// tiles. Worker `iy * tiles_x + ix` owns tile `(ix, iy)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub workers: u32,
    pub tiles_x: u32,
    pub tiles_y: u32,
    owner: Vec<u32>,
    columns_of: Vec<Vec<ColumnId>>,
}

impl Partition {
    pub fn owner(&self, column: ColumnId) -> u32 {
        self.owner[column.0 as usize]
    }

    pub fn columns_of(&self, worker: u32) -> &[ColumnId] {
        &self.columns_of[worker as usize]
    }

    pub fn loads(&self) -> impl Iterator<Item = usize> + '_ {
        self.columns_of.iter().map(Vec::len)
    }
}

/// Split `n` into `parts` contiguous ranges whose sizes differ by at most one.
fn split_range(n: u32, parts: u32) -> Vec<(u32, u32)> {
    let base = n / parts;
    let extra = n % parts;
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + u32::from(i < extra);
            let r = (start, start + len);
            start += len;
            r
        })
        .collect()
}

/// Factor pair `(px, py)` with `px * py = workers` closest to square, the
/// smaller factor along the shorter grid side (x on ties).
fn tile_shape(grid: &GridSpec, workers: u32) -> (u32, u32) {
    let small = (1..=workers)
        .take_while(|a| a * a <= workers)
        .filter(|a| workers % a == 0)
        .last()
        .unwrap_or(1);
    let large = workers / small;
    if grid.grid_x <= grid.grid_y {
        (small, large)
    } else {
        (large, small)
    }
}

/// Balanced tiling of the grid over `workers`.
///
/// Columns in row-major order are cut into `py` bands of near-equal size;
/// each band, reordered x-major, is cut into `px` near-equal tiles. When the
/// grid divides evenly the tiles are exact rectangles; otherwise band and
/// tile boundaries step by one column, which keeps every load within two
/// columns of every other.
pub fn partition_columns(grid: &GridSpec, workers: u32) -> Result<Partition> {
    let columns = grid.columns();
    if workers < 1 || workers > columns {
        return Err(Error::TooManyWorkers { workers, columns });
    }
    let (tiles_x, tiles_y) = tile_shape(grid, workers);
    let mut owner = vec![0u32; columns as usize];
    let mut columns_of = vec![Vec::new(); workers as usize];
    for (iy, (b0, b1)) in split_range(columns, tiles_y).into_iter().enumerate() {
        let mut band: Vec<u32> = (b0..b1).collect();
        band.sort_by_key(|&c| (c % grid.grid_x, c / grid.grid_x));
        for (ix, (t0, t1)) in split_range(b1 - b0, tiles_x).into_iter().enumerate() {
            let w = iy as u32 * tiles_x + ix as u32;
            for &c in &band[t0 as usize..t1 as usize] {
                owner[c as usize] = w;
            }
        }
    }
    for (c, &w) in owner.iter().enumerate() {
        columns_of[w as usize].push(ColumnId(c as u32));
    }
    Ok(Partition {
        workers,
        tiles_x,
        tiles_y,
        owner,
        columns_of,
    })
}
