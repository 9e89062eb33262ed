//! Slow, literal reference implementations used as test oracles.
#![allow(dead_code, clippy::needless_range_loop)]

pub const EPS: f64 = f64::EPSILON;

/// Recursive scalar Cox–de Boor basis `B_{j,k}(x)`; `end` is the interval whose right edge is closed.
pub fn cox_de_boor(knots: &[f64], j: usize, k: usize, x: f64, end: usize) -> f64 {
    if k == 0 {
        if x == knots[end + 1] {
            return if j == end { 1.0 } else { 0.0 };
        }
        return if knots[j] <= x && x < knots[j + 1] { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = knots[j + k] - knots[j];
    if d1 != 0.0 {
        v += (x - knots[j]) / d1 * cox_de_boor(knots, j, k - 1, x, end);
    }
    let d2 = knots[j + k + 1] - knots[j + 1];
    if d2 != 0.0 {
        v += (knots[j + k + 1] - x) / d2 * cox_de_boor(knots, j + 1, k - 1, x, end);
    }
    v
}

/// Uniform extended knot vector for degree `k`, `g` intervals over `[lo, hi]`.
pub fn uniform_knots(k: usize, g: usize, lo: f64, hi: f64) -> Vec<f64> {
    let h = (hi - lo) / g as f64;
    (0..g + 2 * k + 1).map(|i| lo + (i as f64 - k as f64) * h).collect()
}

pub fn basis_oracle(k: usize, g: usize, lo: f64, hi: f64, x: f64) -> Vec<f64> {
    let knots = uniform_knots(k, g, lo, hi);
    let x = x.clamp(lo, hi);
    (0..g + k).map(|j| cox_de_boor(&knots, j, k, x, k + g - 1)).collect()
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Triple loop over (q, p, j) evaluating one KAN layer on a single input vector.
#[allow(clippy::too_many_arguments)]
pub fn kan_layer_oracle(
    x: &[f64],
    n_out: usize,
    coeffs: &[f64],
    base: &[f64],
    scale: &[f64],
    k: usize,
    g: usize,
    lo: f64,
    hi: f64,
) -> Vec<f64> {
    let n_in = x.len();
    let nb = g + k;
    let mut y = vec![0.0; n_out];
    for (q, yq) in y.iter_mut().enumerate() {
        for p in 0..n_in {
            let b = basis_oracle(k, g, lo, hi, x[p]);
            let mut spline = 0.0;
            for j in 0..nb {
                spline += coeffs[(q * n_in + p) * nb + j] * b[j];
            }
            *yq += scale[q * n_in + p] * (base[q * n_in + p] * silu(x[p]) + spline);
        }
    }
    y
}

pub fn mae(pred: &[f64], gt: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..pred.len() {
        s += (pred[i] - gt[i]).abs();
    }
    s / pred.len() as f64
}

fn f_at(pred: &[f64], gt: &[f64], t: f64) -> f64 {
    let mut tp = 0.0;
    let mut pp = 0.0;
    let mut g = 0.0;
    for i in 0..pred.len() {
        let b = pred[i] >= t;
        let f = gt[i] > 0.5;
        if b {
            pp += 1.0;
        }
        if f {
            g += 1.0;
        }
        if b && f {
            tp += 1.0;
        }
    }
    if pp == 0.0 || g == 0.0 {
        return 0.0;
    }
    let p = tp / pp;
    let r = tp / g;
    if p + r == 0.0 {
        return 0.0;
    }
    1.3 * p * r / (0.3 * p + r)
}

/// `(f_avg, f_max)` by looping all 256 thresholds over all pixels.
pub fn f_measures(pred: &[f64], gt: &[f64]) -> (f64, f64) {
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for i in 0..256 {
        let f = f_at(pred, gt, i as f64 / 255.0);
        sum += f;
        max = max.max(f);
    }
    (sum / 256.0, max)
}

/// Weighted F-measure by brute-force distance transform and direct 2-D filtering with edge replication.
pub fn weighted_f(pred: &[f64], gt: &[f64], h: usize, w: usize) -> f64 {
    let n = h * w;
    let fg: Vec<bool> = gt.iter().map(|&v| v > 0.5).collect();
    if !fg.iter().any(|&b| b) {
        return 0.0;
    }
    let e: Vec<f64> = (0..n).map(|i| (pred[i] - gt[i]).abs()).collect();
    let mut dst = vec![0.0; n];
    let mut et = e.clone();
    for i in 0..n {
        if fg[i] {
            continue;
        }
        let (y, x) = ((i / w) as i64, (i % w) as i64);
        let mut best = i64::MAX;
        let mut set = Vec::new();
        for j in 0..n {
            if !fg[j] {
                continue;
            }
            let (yy, xx) = ((j / w) as i64, (j % w) as i64);
            let d = (y - yy) * (y - yy) + (x - xx) * (x - xx);
            if d < best {
                best = d;
                set.clear();
            }
            if d == best {
                set.push(j);
            }
        }
        dst[i] = (best as f64).sqrt();
        et[i] = set.iter().map(|&j| e[j]).sum::<f64>() / set.len() as f64;
    }
    let mut kern = [[0.0; 7]; 7];
    let mut ks = 0.0;
    for (a, row) in kern.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (a as f64 - 3.0, b as f64 - 3.0);
            *v = (-(dy * dy + dx * dx) / (2.0 * 25.0)).exp();
            ks += *v;
        }
    }
    let mut ea = vec![0.0; n];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = 0.0;
            for a in 0..7i64 {
                for b in 0..7i64 {
                    let sy = (y + a - 3).max(0).min(h as i64 - 1);
                    let sx = (x + b - 3).max(0).min(w as i64 - 1);
                    acc += kern[a as usize][b as usize] / ks * et[(sy * w as i64 + sx) as usize];
                }
            }
            ea[(y * w as i64 + x) as usize] = acc;
        }
    }
    let mut ew = vec![0.0; n];
    for i in 0..n {
        let min_e_ea = if fg[i] && ea[i] < e[i] { ea[i] } else { e[i] };
        let b = if fg[i] { 1.0 } else { 2.0 - ((0.5f64).ln() / 5.0 * dst[i]).exp() };
        ew[i] = min_e_ea * b;
    }
    let g_count = fg.iter().filter(|&&b| b).count() as f64;
    let ew_fg: f64 = (0..n).filter(|&i| fg[i]).map(|i| ew[i]).sum();
    let ew_bg: f64 = (0..n).filter(|&i| !fg[i]).map(|i| ew[i]).sum();
    let tpw = g_count - ew_fg;
    let fpw = ew_bg;
    let r = 1.0 - ew_fg / g_count;
    let p = tpw / (EPS + tpw + fpw);
    2.0 * r * p / (EPS + r + p)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std1(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

fn object(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let x = mean(v);
    2.0 * x / (x * x + 1.0 + std1(v) + EPS)
}

fn ssim(p: &[f64], g: &[f64]) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    let n = p.len() as f64;
    let x = mean(p);
    let y = mean(g);
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    if p.len() > 1 {
        for i in 0..p.len() {
            sx += (p[i] - x).powi(2) / (n - 1.0);
            sy += (g[i] - y).powi(2) / (n - 1.0);
            sxy += (p[i] - x) * (g[i] - y) / (n - 1.0);
        }
    }
    let a = 4.0 * x * y * sxy;
    let b = (x * x + y * y) * (sx + sy);
    if a != 0.0 {
        a / (b + EPS)
    } else if b == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Structure measure: object term plus four-block region term around the gt centroid.
pub fn s_measure(pred: &[f64], gt: &[f64], h: usize, w: usize) -> f64 {
    let y_mean = mean(gt);
    if y_mean == 0.0 {
        return 1.0 - mean(pred);
    }
    if y_mean == 1.0 {
        return mean(pred);
    }
    let fgp: Vec<f64> = (0..h * w).filter(|&i| gt[i] > 0.5).map(|i| pred[i]).collect();
    let bgp: Vec<f64> = (0..h * w).filter(|&i| gt[i] <= 0.5).map(|i| 1.0 - pred[i]).collect();
    let u = y_mean;
    let so = u * object(&fgp) + (1.0 - u) * object(&bgp);

    let total: f64 = gt.iter().sum();
    let mut cx = 0.0;
    let mut cy = 0.0;
    for y in 0..h {
        for x in 0..w {
            cx += gt[y * w + x] * x as f64;
            cy += gt[y * w + x] * y as f64;
        }
    }
    let cands = |c: f64| -> Vec<usize> {
        let z = c + 0.5;
        if z.fract() == 0.5 {
            vec![z.floor() as usize, z.ceil() as usize]
        } else {
            vec![z.round() as usize]
        }
    };
    let xs = cands(cx / total);
    let ys = cands(cy / total);
    let mut sr = 0.0;
    for &sy in &ys {
        for &sx in &xs {
            let blocks = [(0, sy, 0, sx), (0, sy, sx, w), (sy, h, 0, sx), (sy, h, sx, w)];
            for (y0, y1, x0, x1) in blocks {
                let mut bp = Vec::new();
                let mut bg = Vec::new();
                for y in y0..y1 {
                    for x in x0..x1 {
                        bp.push(pred[y * w + x]);
                        bg.push(gt[y * w + x]);
                    }
                }
                let wgt = bp.len() as f64 / (h * w) as f64;
                sr += wgt * ssim(&bp, &bg) / (xs.len() * ys.len()) as f64;
            }
        }
    }
    (0.5 * so + 0.5 * sr).max(0.0)
}

/// Enhanced-alignment measure via per-pixel alignment matrices at 256 bin-centre thresholds.
pub fn e_measure(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    let g_sum: f64 = gt.iter().sum();
    let mut total = 0.0;
    for i in 0..256 {
        let t = (i as f64 + 0.5) / 256.0;
        let fm: Vec<f64> = pred.iter().map(|&v| if v >= t { 1.0 } else { 0.0 }).collect();
        let score = if g_sum == 0.0 {
            fm.iter().map(|v| 1.0 - v).sum::<f64>() / n
        } else if g_sum == n {
            fm.iter().sum::<f64>() / n
        } else {
            let mf = mean(&fm);
            let mg = mean(gt);
            let mut s = 0.0;
            for j in 0..pred.len() {
                let a = fm[j] - mf;
                let b = gt[j] - mg;
                let al = 2.0 * a * b / (a * a + b * b + EPS);
                s += (al + 1.0).powi(2) / 4.0;
            }
            s / n
        };
        total += score;
    }
    total / 256.0
}
