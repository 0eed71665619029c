//! Equal-frequency discretization of (u, v) scan states.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discretizes the non-negative (u, v) quadrant into exactly `p` bins with
/// roughly equal training mass.
///
/// Construction: u is cut into `a` equal-frequency slices; within each
/// u-slice, v is cut into equal-frequency cells, with cell counts chosen so
/// the slice totals sum to exactly `p`. The conditional v-cuts keep bin
/// occupancy balanced even when u and v are strongly correlated, which they
/// are on real scan traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBinner {
    pub version: u32,
    pub p: usize,
    /// Upper bounds of the first a-1 u-slices; the last slice is open.
    pub u_cuts: Vec<f64>,
    /// Per u-slice upper bounds for v-cells (one vec per slice).
    pub v_cuts: Vec<Vec<f64>>,
    /// First bin id of each u-slice.
    pub bin_offsets: Vec<usize>,
}

pub const BINNER_VERSION: u32 = 1;

/// Cut positions for `cells` equal-frequency cells over `sorted`: the upper
/// bound of cell i is the value at index ((i+1) * n) / cells - 1.
fn quantile_cuts(sorted: &[f64], cells: usize) -> Vec<f64> {
    let n = sorted.len();
    (1..cells)
        .map(|i| {
            let idx = (i * n) / cells;
            sorted[idx.saturating_sub(1).min(n - 1)]
        })
        .collect()
}

fn cell_of(cuts: &[f64], x: f64) -> usize {
    // Values above every cut clamp into the last (open) cell.
    cuts.partition_point(|&c| c < x)
}

/// Fit a binner from a trace of (u, v) pairs collected by running baseline
/// match plans. Errors when `p` exceeds the number of distinct points.
pub fn fit_binner(points: &[(u64, u64)], p: usize) -> Result<StateBinner> {
    if p == 0 {
        return Err(Error::InvalidArgument("p must be >= 1".into()));
    }
    let distinct: HashSet<(u64, u64)> = points.iter().copied().collect();
    if p > distinct.len() {
        return Err(Error::InvalidArgument(format!(
            "p = {p} exceeds {} distinct trace points",
            distinct.len()
        )));
    }

    // a u-slices; slice i gets b+1 v-cells for i < r, else b. Total = p.
    let a = (p as f64).sqrt().floor() as usize;
    let a = a.max(1);
    let b = p / a;
    let r = p % a;

    let mut us: Vec<f64> = points.iter().map(|&(u, _)| u as f64).collect();
    us.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let u_cuts = quantile_cuts(&us, a);

    let mut v_by_slice: Vec<Vec<f64>> = vec![Vec::new(); a];
    for &(u, v) in points {
        let s = cell_of(&u_cuts, u as f64);
        v_by_slice[s].push(v as f64);
    }

    let mut v_cuts = Vec::with_capacity(a);
    let mut bin_offsets = Vec::with_capacity(a);
    let mut next_bin = 0usize;
    for (i, vs) in v_by_slice.iter_mut().enumerate() {
        let cells = if i < r { b + 1 } else { b };
        vs.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let cuts = if vs.is_empty() {
            // A slice emptied by tie clamping still needs cut boundaries.
            vec![0.0; cells - 1]
        } else {
            quantile_cuts(vs, cells)
        };
        v_cuts.push(cuts);
        bin_offsets.push(next_bin);
        next_bin += cells;
    }
    debug_assert_eq!(next_bin, p);

    Ok(StateBinner {
        version: BINNER_VERSION,
        p,
        u_cuts,
        v_cuts,
        bin_offsets,
    })
}

impl StateBinner {
    /// Map a (u, v) state to its bin. Out-of-range values clamp to the
    /// outermost cells.
    pub fn bin_state(&self, u: u64, v: u64) -> usize {
        let s = cell_of(&self.u_cuts, u as f64);
        let c = cell_of(&self.v_cuts[s], v as f64);
        self.bin_offsets[s] + c
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)
            .map_err(|e| Error::Config(format!("serialize binner: {e}")))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let binner: StateBinner = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Config(format!("parse binner {}: {e}", path.display())))?;
        if binner.version != BINNER_VERSION {
            return Err(Error::Config(format!(
                "unsupported binner version {}",
                binner.version
            )));
        }
        Ok(binner)
    }
}
