//! Plain loops behind the graph operations.

pub(super) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `a[m, k] · b[k, n]`.
pub(super) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[m, k] += g[m, n] · b[k, n]ᵀ`.
pub(super) fn matmul_nt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let gr = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let br = &b[p * n..(p + 1) * n];
            out[i * k + p] += gr.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k, n] += a[m, k]ᵀ · g[m, n]`.
pub(super) fn matmul_tn_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let gr = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, gv) in out[p * n..(p + 1) * n].iter_mut().zip(gr) {
                *o += av * gv;
            }
        }
    }
}

/// For each input element, the flat index of the output cell it reduces into.
pub(super) fn reduce_map(shape: &[usize], keep: &[bool]) -> Vec<usize> {
    let n: usize = shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..n {
        let mut o = 0;
        for d in 0..shape.len() {
            if keep[d] {
                o = o * shape[d] + idx[d];
            }
        }
        map.push(o);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

pub(super) fn nearest_index(h: usize, w: usize, c: usize, oh: usize, ow: usize) -> Vec<usize> {
    let mut index = Vec::with_capacity(oh * ow * c);
    for i in 0..oh {
        let si = i * h / oh;
        for j in 0..ow {
            let sj = j * w / ow;
            for ch in 0..c {
                index.push((si * w + sj) * c + ch);
            }
        }
    }
    index
}

pub(super) fn space_to_depth_index(h: usize, w: usize, c: usize, p: usize) -> Vec<usize> {
    let (bh, bw) = (h / p, w / p);
    let mut index = Vec::with_capacity(h * w * c);
    for bi in 0..bh {
        for bj in 0..bw {
            for di in 0..p {
                for dj in 0..p {
                    for ch in 0..c {
                        index.push(((bi * p + di) * w + bj * p + dj) * c + ch);
                    }
                }
            }
        }
    }
    index
}
