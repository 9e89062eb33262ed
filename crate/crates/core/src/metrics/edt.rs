//! Exact Euclidean nearest-foreground search with tie sets.

/// Squared distance to the nearest foreground pixel and every pixel attaining it.
#[derive(Clone, Debug)]
pub(super) struct Nearest {
    pub dist_sq: f64,
    pub indices: Vec<usize>,
}

impl Nearest {
    pub fn mean_of(&self, values: &[f64]) -> f64 {
        self.indices.iter().map(|&i| values[i]).sum::<f64>() / self.indices.len() as f64
    }
}

/// For every pixel of a `[h, w]` mask with at least one foreground pixel.
pub(super) fn nearest_foreground(fg: &[bool], h: usize, w: usize) -> Vec<Nearest> {
    let rows: Vec<Vec<usize>> = (0..h).map(|y| (0..w).filter(|&x| fg[y * w + x]).collect()).collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(search(&rows, y, x, w));
        }
    }
    out
}

fn search(rows: &[Vec<usize>], y: usize, x: usize, w: usize) -> Nearest {
    let h = rows.len();
    let mut best = usize::MAX;
    let mut hits: Vec<usize> = Vec::new();
    for dy in 0..h {
        if dy * dy > best {
            break;
        }
        let mut cand_rows = [None, None];
        if y >= dy {
            cand_rows[0] = Some(y - dy);
        }
        if dy > 0 && y + dy < h {
            cand_rows[1] = Some(y + dy);
        }
        for ry in cand_rows.into_iter().flatten() {
            let cols = &rows[ry];
            if cols.is_empty() {
                continue;
            }
            let pos = cols.partition_point(|&c| c < x);
            let right = cols.get(pos).map(|&c| c - x);
            let left = if pos > 0 { Some(x - cols[pos - 1]) } else { None };
            let dx = match (left, right) {
                (Some(l), Some(r)) => l.min(r),
                (Some(l), None) => l,
                (None, Some(r)) => r,
                (None, None) => continue,
            };
            let d = dy * dy + dx * dx;
            if d > best {
                continue;
            }
            if d < best {
                best = d;
                hits.clear();
            }
            if left == Some(dx) {
                hits.push(ry * w + x - dx);
            }
            if right == Some(dx) {
                hits.push(ry * w + x + dx);
            }
        }
    }
    Nearest { dist_sq: best as f64, indices: hits }
}
