use serde::{Deserialize, Serialize};

use super::HeadOutputs;
use crate::geometry::{Box3D, GridSpec, ObjectClass};
use crate::nn::{sigmoid, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(flatten)]
    pub bbox: Box3D,
    pub score: f64,
}

/// Peak-picks the heatmap of sample `index` and assembles boxes.
///
/// A cell is a peak when its probability is at least `conf_threshold` and
/// no smaller than any of its 3x3 neighbours. Results are sorted by score,
/// descending (ties keep class/row/column order), and truncated to
/// `max_dets`.
pub fn decode_detections<T: Real>(
    heads: &HeadOutputs<T>,
    index: usize,
    grid: &GridSpec,
    conf_threshold: f64,
    max_dets: usize,
) -> Vec<Detection> {
    let (_, n_cls, rows, cols) = heads.heatmap.dim();
    let prob = |c: usize, r: usize, k: usize| sigmoid(heads.heatmap[[index, c, r, k]].as_f64());
    let mut dets = Vec::new();
    for c in 0..n_cls {
        let class = ObjectClass::from_index(c).unwrap_or(ObjectClass::Car);
        for r in 0..rows {
            for k in 0..cols {
                let p = prob(c, r, k);
                if p < conf_threshold {
                    continue;
                }
                let mut is_peak = true;
                'nb: for dr in -1i64..=1 {
                    for dk in -1i64..=1 {
                        let (rr, kk) = (r as i64 + dr, k as i64 + dk);
                        if (dr, dk) == (0, 0) || rr < 0 || kk < 0 || rr >= rows as i64 || kk >= cols as i64 {
                            continue;
                        }
                        if prob(c, rr as usize, kk as usize) > p {
                            is_peak = false;
                            break 'nb;
                        }
                    }
                }
                if !is_peak {
                    continue;
                }
                let at = |a: &ndarray::Array4<T>, ch: usize| a[[index, ch, r, k]].as_f64();
                let col_f = k as f64 + 0.5 + at(&heads.offset_z, 0);
                let row_f = r as f64 + 0.5 + at(&heads.offset_z, 1);
                let (x, y) = grid.from_continuous(row_f, col_f);
                let z = at(&heads.offset_z, 2);
                let dims = [at(&heads.dims, 0).exp(), at(&heads.dims, 1).exp(), at(&heads.dims, 2).exp()];
                let yaw = at(&heads.yaw, 0).atan2(at(&heads.yaw, 1));
                dets.push(Detection {
                    bbox: Box3D::new(class, [x, y, z], dims, yaw),
                    score: p,
                });
            }
        }
    }
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    dets.truncate(max_dets);
    dets
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn empty(rows: usize) -> HeadOutputs<f64> {
        HeadOutputs {
            heatmap: Array4::zeros((1, 1, rows, rows)),
            offset_z: Array4::zeros((1, 3, rows, rows)),
            dims: Array4::zeros((1, 3, rows, rows)),
            yaw: Array4::from_elem((1, 2, rows, rows), 1.0),
        }
    }

    #[test]
    fn flat_heatmap_below_threshold_is_empty() {
        let heads = empty(8);
        assert!(decode_detections(&heads, 0, &GridSpec::bev(8), 0.6, 10).is_empty());
    }

    #[test]
    fn two_peaks_sorted_by_score() {
        let mut heads = empty(8);
        heads.heatmap.fill(-8.0);
        heads.heatmap[[0, 0, 1, 1]] = 1.0;
        heads.heatmap[[0, 0, 5, 6]] = 3.0;
        heads.dims.fill(1.0f64.ln());
        let dets = decode_detections(&heads, 0, &GridSpec::bev(8), 0.5, 10);
        assert_eq!(dets.len(), 2);
        assert!(dets[0].score > dets[1].score);
        let g = GridSpec::bev(8);
        let (x, y) = g.cell_center(5, 6);
        assert!((dets[0].bbox.center[0] - x).abs() < 1e-12 && (dets[0].bbox.center[1] - y).abs() < 1e-12);
        assert_eq!(decode_detections(&heads, 0, &g, 0.5, 1).len(), 1);
    }

    #[test]
    fn non_maximal_neighbour_is_suppressed() {
        let mut heads = empty(8);
        heads.heatmap.fill(-8.0);
        heads.heatmap[[0, 0, 3, 3]] = 2.0;
        heads.heatmap[[0, 0, 3, 4]] = 1.5;
        let dets = decode_detections(&heads, 0, &GridSpec::bev(8), 0.5, 10);
        assert_eq!(dets.len(), 1);
    }
}
