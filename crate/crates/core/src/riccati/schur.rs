//! Real Schur decomposition with eigenvalue reordering.
//!
//! nalgebra provides the unordered quasi-triangular form `H = Z T Z^T`. Blocks
//! are then bubbled into place with direct swaps: for adjacent blocks `T11`,
//! `T22` the Sylvester equation `T11 X - X T22 = T12` gives the invariant
//! subspace `[-X; I]` of `T22`, and an orthogonal basis of it moves `T22` ahead
//! of `T11`.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Block {
    start: usize,
    size: usize,
}

/// Ordered real Schur form `h = z * t * z^T` with the selected eigenvalues
/// leading.
#[derive(Debug, Clone)]
pub(crate) struct OrderedSchur {
    pub z: DMatrix<f64>,
    pub t: DMatrix<f64>,
    /// Dimension of the leading selected subspace.
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum SchurError {
    NoConvergence,
    SwapFailed { residual: f64 },
}

/// Real Schur form `h = z t z^T`. nalgebra's sweep has no exceptional
/// shifts and gives up on some benign matrices; those go through `francis`.
pub(crate) fn real_schur(h: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let n = h.nrows();
    if let Some(s) = nalgebra::linalg::Schur::try_new(h.clone(), f64::EPSILON, 1000 * n.max(1)) {
        return Some(s.unpack());
    }
    francis(h)
}

/// Hessenberg reduction followed by implicit double-shift QR with
/// exceptional shifts after 10 and 30 stalled sweeps.
pub(crate) fn francis(h0: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let size = h0.nrows();
    if size == 0 {
        return Some((DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)));
    }
    let (mut v, mut h) = h0.clone().hessenberg().unpack();
    let eps = f64::EPSILON;
    let mut norm = 0.0;
    for i in 0..size {
        for j in i.saturating_sub(1)..size {
            norm += h[(i, j)].abs();
        }
    }
    let mut exshift = 0.0;
    let mut iter = 0;
    let mut total = 0;
    let mut n = size as isize - 1;
    let (mut p, mut q, mut r, mut s, mut z): (f64, f64, f64, f64, f64);

    while n >= 0 {
        let nu = n as usize;
        let mut l = nu;
        while l > 0 {
            s = h[(l - 1, l - 1)].abs() + h[(l, l)].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[(l, l - 1)].abs() < eps * s {
                break;
            }
            l -= 1;
        }

        if l == nu {
            h[(nu, nu)] += exshift;
            if nu > 0 {
                h[(nu, nu - 1)] = 0.0;
            }
            n -= 1;
            iter = 0;
        } else if l + 1 == nu {
            let m = nu - 1;
            let w = h[(nu, m)] * h[(m, nu)];
            p = (h[(m, m)] - h[(nu, nu)]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            h[(nu, nu)] += exshift;
            h[(m, m)] += exshift;
            if q >= 0.0 {
                // real pair: rotate to upper triangular
                z = if p >= 0.0 { p + z } else { p - z };
                let x = h[(nu, m)];
                s = x.abs() + z.abs();
                p = x / s;
                q = z / s;
                r = (p * p + q * q).sqrt();
                p /= r;
                q /= r;
                for j in m..size {
                    z = h[(m, j)];
                    h[(m, j)] = q * z + p * h[(nu, j)];
                    h[(nu, j)] = q * h[(nu, j)] - p * z;
                }
                for i in 0..=nu {
                    z = h[(i, m)];
                    h[(i, m)] = q * z + p * h[(i, nu)];
                    h[(i, nu)] = q * h[(i, nu)] - p * z;
                }
                for i in 0..size {
                    z = v[(i, m)];
                    v[(i, m)] = q * z + p * v[(i, nu)];
                    v[(i, nu)] = q * v[(i, nu)] - p * z;
                }
                h[(nu, m)] = 0.0;
            }
            if m > 0 {
                h[(m, m - 1)] = 0.0;
            }
            n -= 2;
            iter = 0;
        } else {
            let mut x = h[(nu, nu)];
            let mut y = h[(nu - 1, nu - 1)];
            let mut w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            if iter == 10 {
                exshift += x;
                for i in 0..=nu {
                    h[(i, i)] -= x;
                }
                s = h[(nu, nu - 1)].abs() + h[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in 0..=nu {
                        h[(i, i)] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }
            iter += 1;
            total += 1;
            if total > 100 * size {
                return None;
            }

            // look for two consecutive small subdiagonal entries
            let mut m = nu - 2;
            loop {
                z = h[(m, m)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[(m + 1, m)] + h[(m, m + 1)];
                q = h[(m + 1, m + 1)] - z - r - s;
                r = h[(m + 2, m + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let lhs = h[(m, m - 1)].abs() * (q.abs() + r.abs());
                let rhs =
                    eps * (p.abs() * (h[(m - 1, m - 1)].abs() + z.abs() + h[(m + 1, m + 1)].abs()));
                if lhs < rhs {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nu {
                h[(i, i - 2)] = 0.0;
                if i > m + 2 {
                    h[(i, i - 3)] = 0.0;
                }
            }

            for k in m..nu {
                let notlast = k != nu - 1;
                if k != m {
                    p = h[(k, k - 1)];
                    q = h[(k + 1, k - 1)];
                    r = if notlast { h[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s == 0.0 {
                    continue;
                }
                if k != m {
                    h[(k, k - 1)] = -s * x;
                    h[(k + 1, k - 1)] = 0.0;
                    if notlast {
                        h[(k + 2, k - 1)] = 0.0;
                    }
                } else if l != m {
                    h[(k, k - 1)] = -h[(k, k - 1)];
                }
                p += s;
                x = p / s;
                y = q / s;
                z = r / s;
                q /= p;
                r /= p;
                for j in k..size {
                    p = h[(k, j)] + q * h[(k + 1, j)];
                    if notlast {
                        p += r * h[(k + 2, j)];
                        h[(k + 2, j)] -= p * z;
                    }
                    h[(k, j)] -= p * x;
                    h[(k + 1, j)] -= p * y;
                }
                for i in 0..=nu.min(k + 3) {
                    p = x * h[(i, k)] + y * h[(i, k + 1)];
                    if notlast {
                        p += z * h[(i, k + 2)];
                        h[(i, k + 2)] -= p * r;
                    }
                    h[(i, k)] -= p;
                    h[(i, k + 1)] -= p * q;
                }
                for i in 0..size {
                    p = x * v[(i, k)] + y * v[(i, k + 1)];
                    if notlast {
                        p += z * v[(i, k + 2)];
                        v[(i, k + 2)] -= p * r;
                    }
                    v[(i, k)] -= p;
                    v[(i, k + 1)] -= p * q;
                }
            }
        }
    }
    for j in 0..size {
        for i in j + 2..size {
            h[(i, j)] = 0.0;
        }
    }
    Some((v, h))
}

pub(crate) fn ordered_schur(
    h: &DMatrix<f64>,
    select: impl Fn(f64) -> bool,
) -> Result<OrderedSchur, SchurError> {
    let n = h.nrows();
    let (mut z, mut t) = real_schur(h).ok_or(SchurError::NoConvergence)?;
    clean_lower(&mut t);
    let mut i = 0;
    while i + 1 < n {
        if t[(i + 1, i)] != 0.0 {
            split_real_pair(&mut t, &mut z, i);
            i += 2;
        } else {
            i += 1;
        }
    }

    let scale = t.norm().max(1.0);
    for _ in 0..n * n + 1 {
        let blocks = blocks(&t);
        let swap_at = blocks
            .windows(2)
            .find(|w| !select(real_part(&t, w[0])) && select(real_part(&t, w[1])));
        let Some(&[first, second]) = swap_at else {
            break;
        };
        let residual = swap_blocks(&mut t, &mut z, first.start, first.size, second.size);
        if residual > 1e-8 * scale {
            return Err(SchurError::SwapFailed { residual });
        }
        // A swapped-in 2x2 block may have become splittable.
        for b in [first.start, first.start + second.size] {
            if b + 1 < n && t[(b + 1, b)] != 0.0 {
                split_real_pair(&mut t, &mut z, b);
            }
        }
    }

    let selected = blocks(&t)
        .into_iter()
        .take_while(|b| select(real_part(&t, *b)))
        .map(|b| b.size)
        .sum();
    Ok(OrderedSchur { z, t, selected })
}

/// Eigenvalues (re, im) read off the quasi-triangular factor.
pub(crate) fn eigenvalues(t: &DMatrix<f64>) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(t.nrows());
    for b in blocks(t) {
        if b.size == 1 {
            out.push((t[(b.start, b.start)], 0.0));
        } else {
            let (a, bb, c, d) = block2(t, b.start);
            let re = 0.5 * (a + d);
            let disc = 0.25 * (a - d) * (a - d) + bb * c;
            let im = (-disc).max(0.0).sqrt();
            out.push((re, im));
            out.push((re, -im));
        }
    }
    out
}

fn clean_lower(t: &mut DMatrix<f64>) {
    let n = t.nrows();
    for j in 0..n {
        for i in (j + 2)..n {
            t[(i, j)] = 0.0;
        }
        if j + 1 < n {
            let tiny = f64::EPSILON * (t[(j, j)].abs() + t[(j + 1, j + 1)].abs());
            if t[(j + 1, j)].abs() <= tiny {
                t[(j + 1, j)] = 0.0;
            }
        }
    }
}

fn blocks(t: &DMatrix<f64>) -> Vec<Block> {
    let n = t.nrows();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let size = if i + 1 < n && t[(i + 1, i)] != 0.0 {
            2
        } else {
            1
        };
        out.push(Block { start: i, size });
        i += size;
    }
    out
}

fn block2(t: &DMatrix<f64>, i: usize) -> (f64, f64, f64, f64) {
    (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)])
}

fn real_part(t: &DMatrix<f64>, b: Block) -> f64 {
    if b.size == 1 {
        t[(b.start, b.start)]
    } else {
        0.5 * (t[(b.start, b.start)] + t[(b.start + 1, b.start + 1)])
    }
}

/// Triangularizes a 2x2 diagonal block whose eigenvalues are real.
fn split_real_pair(t: &mut DMatrix<f64>, z: &mut DMatrix<f64>, i: usize) {
    let (a, b, c, d) = block2(t, i);
    let disc = 0.25 * (a - d) * (a - d) + b * c;
    if disc < 0.0 {
        return;
    }
    let half = 0.5 * (a - d);
    let root = disc.sqrt();
    let lambda = 0.5 * (a + d) + if half >= 0.0 { root } else { -root };
    // eigenvector of [[a, b], [c, d]] for lambda, best-conditioned candidate
    let v1 = (b, lambda - a);
    let v2 = (lambda - d, c);
    let (ex, ey) = if v1.0.hypot(v1.1) >= v2.0.hypot(v2.1) {
        v1
    } else {
        v2
    };
    let norm = ex.hypot(ey);
    if norm == 0.0 {
        return;
    }
    let q = DMatrix::from_row_slice(2, 2, &[ex / norm, -ey / norm, ey / norm, ex / norm]);
    apply_similarity(t, z, i, &q);
    t[(i + 1, i)] = 0.0;
}

/// `t <- q^T t q` on the window starting at `k`, and `z <- z q`.
fn apply_similarity(t: &mut DMatrix<f64>, z: &mut DMatrix<f64>, k: usize, q: &DMatrix<f64>) {
    let w = q.nrows();
    let n = t.nrows();
    let rows = q.transpose() * t.view((k, 0), (w, n));
    t.view_mut((k, 0), (w, n)).copy_from(&rows);
    let cols = t.view((0, k), (n, w)) * q;
    t.view_mut((0, k), (n, w)).copy_from(&cols);
    let zc = z.view((0, k), (n, w)) * q;
    z.view_mut((0, k), (n, w)).copy_from(&zc);
}

/// Swaps the adjacent diagonal blocks of sizes `p` and `q` starting at `k`.
/// Returns the magnitude of what was flushed below the new diagonal blocks.
fn swap_blocks(t: &mut DMatrix<f64>, z: &mut DMatrix<f64>, k: usize, p: usize, q: usize) -> f64 {
    let t11 = t.view((k, k), (p, p)).clone_owned();
    let t22 = t.view((k + p, k + p), (q, q)).clone_owned();
    let t12 = t.view((k, k + p), (p, q)).clone_owned();

    // Kronecker form of T11 X - X T22 = T12, X stored column-major.
    let dim = p * q;
    let mut sys = DMatrix::zeros(dim, dim);
    for j in 0..q {
        for i in 0..p {
            let row = i + j * p;
            for l in 0..p {
                sys[(row, l + j * p)] += t11[(i, l)];
            }
            for l in 0..q {
                sys[(row, i + l * p)] -= t22[(l, j)];
            }
        }
    }
    let rhs = DVector::from_iterator(dim, t12.iter().copied());
    let Some(sol) = sys.lu().solve(&rhs) else {
        return f64::INFINITY;
    };
    let x = DMatrix::from_column_slice(p, q, sol.as_slice());

    let w = p + q;
    let mut basis = DMatrix::zeros(w, w);
    basis.view_mut((0, 0), (p, q)).copy_from(&(-&x));
    basis.view_mut((p, 0), (q, q)).fill_with_identity();
    basis.view_mut((0, q), (p, p)).fill_with_identity();
    let qmat = basis.qr().q();

    apply_similarity(t, z, k, &qmat);
    let mut flushed: f64 = 0.0;
    for j in k..k + q {
        for i in k + q..k + w {
            flushed = flushed.max(t[(i, j)].abs());
            t[(i, j)] = 0.0;
        }
    }
    clean_lower(t);
    flushed
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_decomposition(h: &DMatrix<f64>, s: &OrderedSchur) {
        let recon = &s.z * &s.t * s.z.transpose();
        assert!((recon - h).norm() < 1e-10 * (1.0 + h.norm()));
        let ortho = s.z.transpose() * &s.z - DMatrix::identity(h.nrows(), h.nrows());
        assert!(ortho.norm() < 1e-12);
    }

    fn check_schur(h: &DMatrix<f64>, z: &DMatrix<f64>, t: &DMatrix<f64>) {
        let n = h.nrows();
        assert!((z * t * z.transpose() - h).norm() < 1e-12 * (1.0 + h.norm()));
        assert!((z.transpose() * z - DMatrix::identity(n, n)).norm() < 1e-12);
        for j in 0..n {
            for i in j + 2..n {
                assert_eq!(t[(i, j)], 0.0);
            }
        }
        for i in 1..n.saturating_sub(1) {
            assert!(
                t[(i, i - 1)] == 0.0 || t[(i + 1, i)] == 0.0,
                "adjacent 2x2 blocks overlap"
            );
        }
    }

    #[test]
    fn francis_handles_matrix_nalgebra_rejects() {
        let h = DMatrix::from_row_slice(
            4,
            4,
            &[
                -0.2867191990845612,
                -0.87868756168998,
                -1.2257443447722172,
                0.5190966724388025,
                -0.9283562341222812,
                -1.168902190263343,
                0.5190966724388025,
                -0.21983487542592914,
                -1.5162384199175456,
                0.7025511974153235,
                0.2867191990845612,
                0.9283562341222812,
                0.7025511974153235,
                -1.167455567121028,
                0.87868756168998,
                1.168902190263343,
            ],
        );
        let (z, t) = real_schur(&h).unwrap();
        check_schur(&h, &z, &t);
        let mut eig = eigenvalues(&t);
        eig.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        // companion-matrix roots computed separately
        let expected = [
            (-1.72678433, -0.13965268),
            (-1.72678433, 0.13965268),
            (1.72678433, -0.13965268),
            (1.72678433, 0.13965268),
        ];
        for (e, x) in eig.iter().zip(expected) {
            assert!(
                (e.0 - x.0).abs() < 1e-7 && (e.1 - x.1).abs() < 1e-7,
                "{e:?}"
            );
        }
    }

    #[test]
    fn francis_agrees_with_characteristic_data() {
        let mut state = 0x2545f491u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 20_000) as f64 / 10_000.0 - 1.0
        };
        for n in [1, 2, 3, 5, 8, 12] {
            for _ in 0..20 {
                let h = DMatrix::from_fn(n, n, |_, _| next());
                let (z, t) = francis(&h).unwrap();
                check_schur(&h, &z, &t);
                let eig = eigenvalues(&t);
                let trace: f64 = eig.iter().map(|e| e.0).sum();
                assert!((trace - h.trace()).abs() < 1e-10);
                let det = eig
                    .iter()
                    .fold(num_complex::Complex64::new(1.0, 0.0), |acc, e| {
                        acc * num_complex::Complex64::new(e.0, e.1)
                    });
                assert!((det.re - h.determinant()).abs() < 1e-9 * (1.0 + h.determinant().abs()));
                assert!(det.im.abs() < 1e-9);
            }
        }
        let d = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, -2.0, 3.0]));
        let (z, t) = francis(&d).unwrap();
        check_schur(&d, &z, &t);
    }

    #[test]
    fn reorders_real_eigenvalues() {
        let h = DMatrix::from_row_slice(3, 3, &[3.0, 1.0, 0.5, 0.0, -1.0, 2.0, 0.0, 0.0, 2.0]);
        let s = ordered_schur(&h, |re| re < 0.0).unwrap();
        check_decomposition(&h, &s);
        assert_eq!(s.selected, 1);
        assert!((s.t[(0, 0)] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn reorders_complex_pairs() {
        // stable complex pair behind an unstable complex pair and an unstable real root
        #[rustfmt::skip]
        let h = DMatrix::from_row_slice(5, 5, &[
            1.0, 2.0, 0.3, -1.0, 0.7,
           -2.0, 1.0, 0.4,  0.2, 0.1,
            0.0, 0.0, 4.0,  1.5, 0.2,
            0.0, 0.0, 0.0, -1.0, 3.0,
            0.0, 0.0, 0.0, -3.0, -1.0,
        ]);
        let s = ordered_schur(&h, |re| re < 0.0).unwrap();
        check_decomposition(&h, &s);
        assert_eq!(s.selected, 2);
        let eig = eigenvalues(&s.t);
        assert!((eig[0].0 + 1.0).abs() < 1e-10 && (eig[0].1.abs() - 3.0).abs() < 1e-10);
        assert!(eig[2..].iter().all(|e| e.0 > 0.0));
    }

    #[test]
    fn dense_random_hamiltonian_like() {
        let n = 8;
        let h = DMatrix::from_fn(n, n, |i, j| {
            ((i * 7 + j * 13) % 11) as f64 - 5.0 + if i == j { 0.5 } else { 0.0 }
        });
        let s = ordered_schur(&h, |re| re < 0.0).unwrap();
        check_decomposition(&h, &s);
        let eig = eigenvalues(&s.t);
        let stable = eig.iter().filter(|e| e.0 < 0.0).count();
        assert_eq!(stable, s.selected);
        assert!(eig[..s.selected].iter().all(|e| e.0 < 0.0));
    }
}
