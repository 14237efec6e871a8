//! Well trajectory clipping: split each linear segment at cell
//! boundaries, accumulate per-axis projected lengths per intersected
//! active cell.

use super::{Connection, GridGeometry, Well};

/// Compute the perforated-cell geometry of a well. Each trajectory
/// segment is clipped against the grid bounding box and the cell
/// boundary planes; the sub-length inside each active cell is projected
/// onto the three axes. Cells with zero total projected length are
/// excluded. A trajectory entirely outside the grid yields an empty
/// list. Productivity indices are left at zero; see
/// `ReservoirModel::connections`.
pub fn compute_connections(well: &Well, grid: &GridGeometry) -> Vec<Connection> {
    let d = [grid.dx, grid.dy, grid.dz];
    let n = [grid.nx, grid.ny, grid.nz];
    let bbox = [d[0] * n[0] as f64, d[1] * n[1] as f64, d[2] * n[2] as f64];

    // accumulated per-cell projections, in order of first visit
    let mut order: Vec<[usize; 3]> = Vec::new();
    let mut acc: std::collections::HashMap<[usize; 3], [f64; 3]> = std::collections::HashMap::new();

    for seg in well.trajectory.windows(2) {
        let (p0, p1) = (seg[0], seg[1]);
        let delta = [p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]];

        // clip to the bounding box (Liang-Barsky)
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        let mut outside = false;
        for a in 0..3 {
            if delta[a] == 0.0 {
                if p0[a] < 0.0 || p0[a] > bbox[a] {
                    outside = true;
                    break;
                }
            } else {
                let ta = (0.0 - p0[a]) / delta[a];
                let tb = (bbox[a] - p0[a]) / delta[a];
                let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
                t0 = t0.max(lo);
                t1 = t1.min(hi);
            }
        }
        if outside || t0 >= t1 {
            continue;
        }

        // breakpoints at every cell-boundary crossing
        let mut ts = vec![t0, t1];
        for a in 0..3 {
            if delta[a] == 0.0 {
                continue;
            }
            let xa = p0[a] + t0 * delta[a];
            let xb = p0[a] + t1 * delta[a];
            let (lo, hi) = if xa < xb { (xa, xb) } else { (xb, xa) };
            let m_lo = (lo / d[a]).ceil() as i64;
            let m_hi = (hi / d[a]).floor() as i64;
            for m in m_lo..=m_hi {
                let t = (m as f64 * d[a] - p0[a]) / delta[a];
                if t > t0 && t < t1 {
                    ts.push(t);
                }
            }
        }
        ts.sort_by(f64::total_cmp);

        for w in ts.windows(2) {
            let (ta, tb) = (w[0], w[1]);
            if tb - ta < 1e-12 {
                continue;
            }
            let tm = 0.5 * (ta + tb);
            let mid = [
                p0[0] + tm * delta[0],
                p0[1] + tm * delta[1],
                p0[2] + tm * delta[2],
            ];
            let mut cell = [0usize; 3];
            for a in 0..3 {
                cell[a] = cell_of(mid[a], d[a], n[a]);
            }
            if !grid.is_active(cell[0], cell[1], cell[2]) {
                continue;
            }
            let entry = acc.entry(cell).or_insert_with(|| {
                order.push(cell);
                [0.0; 3]
            });
            for a in 0..3 {
                entry[a] += (tb - ta) * delta[a].abs();
            }
        }
    }

    order
        .into_iter()
        .filter_map(|cell| {
            let h = acc[&cell];
            if h[0] + h[1] + h[2] > 0.0 {
                Some(Connection {
                    well: well.name.clone(),
                    cell,
                    h,
                    index_m3: 0.0,
                })
            } else {
                None
            }
        })
        .collect()
}

/// Cell index containing coordinate x. A coordinate exactly on a cell
/// face is assigned to the lower-index cell.
fn cell_of(x: f64, d: f64, n: usize) -> usize {
    let u = x / d;
    let mut i = u.floor() as i64;
    if u == i as f64 && i > 0 {
        i -= 1;
    }
    i.clamp(0, n as i64 - 1) as usize
}
