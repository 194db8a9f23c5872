//! Multifrontal sparse LU for matrices with a structurally symmetric pattern.
//!
//! The column order and supernode partition come from a symbolic Cholesky
//! analysis (approximate minimum degree) of the pattern. Each front is
//! factored densely with partial pivoting inside its fully summed block.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::lu::partial_pivoting::factor::{lu_in_place, lu_in_place_scratch};
use faer::linalg::matmul::matmul;
use faer::linalg::triangular_solve::{
    solve_lower_triangular_in_place, solve_unit_lower_triangular_in_place,
    solve_upper_triangular_in_place,
};
use faer::perm::{permute_rows_in_place, permute_rows_in_place_scratch, PermRef};
use faer::reborrow::{Reborrow, ReborrowMut};
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, SymbolicCholeskyRaw, SymmetricOrdering,
};
use faer::sparse::linalg::SupernodalThreshold;
use faer::sparse::SymbolicSparseColMat;
use faer::{Accum, Mat, Par, Side};

const NONE: usize = usize::MAX;

/// Ordering, supernodes and front patterns of a pattern.
pub struct Symbolic {
    n: usize,
    /// New index to original index.
    perm: Vec<usize>,
    /// Original index to new index.
    perm_inv: Vec<usize>,
    /// Supernode `s` holds the new columns `begin[s]..begin[s + 1]`.
    begin: Vec<usize>,
    /// New row indices below the diagonal block of each supernode, sorted.
    rows: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    /// Value slot of the transposed entry for each slot of the pattern.
    transpose: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
}

impl Symbolic {
    pub fn new(pattern: &SymbolicSparseColMat<usize>) -> Result<Self, String> {
        let n = pattern.ncols();
        let col_ptr = pattern.col_ptr().to_vec();
        let row_idx = pattern.row_idx().to_vec();
        let mut transpose = vec![0usize; row_idx.len()];
        for c in 0..n {
            for p in col_ptr[c]..col_ptr[c + 1] {
                let r = row_idx[p];
                let col = &row_idx[col_ptr[r]..col_ptr[r + 1]];
                let q = col
                    .binary_search(&c)
                    .map_err(|_| "pattern is not structurally symmetric".to_string())?;
                transpose[p] = col_ptr[r] + q;
            }
        }
        let params = CholeskySymbolicParams {
            supernodal_flop_ratio_threshold: SupernodalThreshold::FORCE_SUPERNODAL,
            ..Default::default()
        };
        let sym = factorize_symbolic_cholesky(
            pattern.as_ref(),
            Side::Lower,
            SymmetricOrdering::Amd,
            params,
        )
        .map_err(|e| format!("{e:?}"))?;
        let (perm, perm_inv) = match sym.perm() {
            Some(p) => {
                let (fwd, inv) = p.arrays();
                (fwd.to_vec(), inv.to_vec())
            }
            None => ((0..n).collect(), (0..n).collect()),
        };
        let (begin, rows): (Vec<usize>, Vec<Vec<usize>>) = match sym.raw() {
            SymbolicCholeskyRaw::Supernodal(sn) => {
                let mut begin = sn.supernode_begin().to_vec();
                begin.push(n);
                (
                    begin,
                    (0..sn.n_supernodes())
                        .map(|s| sn.supernode(s).pattern().to_vec())
                        .collect(),
                )
            }
            // patterns with no fill come back simplicial, one column per node
            SymbolicCholeskyRaw::Simplicial(sc) => {
                let l = sc.factor();
                let rows = (0..n)
                    .map(|j| {
                        let mut r: Vec<usize> = l.row_idx_of_col(j).filter(|&i| i > j).collect();
                        r.sort_unstable();
                        r
                    })
                    .collect();
                ((0..=n).collect(), rows)
            }
        };
        let ns = rows.len();
        let mut owner = vec![0usize; n];
        for s in 0..ns {
            owner[begin[s]..begin[s + 1]].fill(s);
        }
        let mut children = vec![Vec::new(); ns];
        for s in 0..ns {
            if let Some(&r) = rows[s].first() {
                let parent = owner[r];
                if parent <= s {
                    return Err("supernodes are not in topological order".into());
                }
                children[parent].push(s);
            }
        }
        Ok(Self {
            n,
            perm,
            perm_inv,
            begin,
            rows,
            children,
            transpose,
            col_ptr,
            row_idx,
        })
    }
}

struct Node {
    /// Packed `L11 \ U11` of the fully summed block.
    lu: Mat<f64>,
    piv_fwd: Vec<usize>,
    u12: Mat<f64>,
    l21: Mat<f64>,
}

/// Numeric factors over a shared symbolic analysis.
pub struct Factor {
    nodes: Vec<Node>,
}

impl Factor {
    /// Factor the matrix with values `vals` on the pattern of `sym`.
    pub fn new(sym: &Symbolic, vals: &[f64]) -> Result<Self, String> {
        let par = Par::Seq;
        let ns = sym.rows.len();
        let mut pos = vec![0usize; sym.n];
        let mut stamp = vec![NONE; sym.n];
        let mut contrib: Vec<Option<Mat<f64>>> = (0..ns).map(|_| None).collect();
        let mut nodes = Vec::with_capacity(ns);
        for s in 0..ns {
            let (b, e) = (sym.begin[s], sym.begin[s + 1]);
            let rows = &sym.rows[s];
            let (nc, nr) = (e - b, rows.len());
            let m = nc + nr;
            for j in b..e {
                pos[j] = j - b;
                stamp[j] = s;
            }
            for (k, &r) in rows.iter().enumerate() {
                pos[r] = nc + k;
                stamp[r] = s;
            }
            let mut front = Mat::<f64>::zeros(m, m);
            for j in b..e {
                let oj = sym.perm[j];
                for p in sym.col_ptr[oj]..sym.col_ptr[oj + 1] {
                    let i = sym.perm_inv[sym.row_idx[p]];
                    if i < b {
                        continue;
                    }
                    if stamp[i] != s {
                        return Err("entry outside the symbolic structure".into());
                    }
                    front[(pos[i], j - b)] += vals[p];
                    if i >= e {
                        front[(j - b, pos[i])] += vals[sym.transpose[p]];
                    }
                }
            }
            for &c in &sym.children[s] {
                let update = contrib[c].take().expect("child processed before parent");
                let crow = &sym.rows[c];
                for (bj, &rj) in crow.iter().enumerate() {
                    if stamp[rj] != s {
                        return Err("child update outside the parent front".into());
                    }
                    let pj = pos[rj];
                    for (ai, &ri) in crow.iter().enumerate() {
                        front[(pos[ri], pj)] += update[(ai, bj)];
                    }
                }
            }

            let mut piv_fwd = vec![0usize; nc];
            let mut piv_inv = vec![0usize; nc];
            let (mut f11, mut f12, mut f21, mut f22) = front.as_mut().split_at_mut(nc, nc);
            {
                let mut mem = MemBuffer::new(lu_in_place_scratch::<usize, f64>(
                    nc,
                    nc,
                    par,
                    Default::default(),
                ));
                lu_in_place(
                    f11.rb_mut(),
                    &mut piv_fwd,
                    &mut piv_inv,
                    par,
                    MemStack::new(&mut mem),
                    Default::default(),
                );
            }
            if (0..nc).any(|i| {
                let d = f11[(i, i)];
                d == 0.0 || !d.is_finite()
            }) {
                return Err(format!("zero pivot in supernode {s}"));
            }
            if nr > 0 {
                let mut mem = MemBuffer::new(permute_rows_in_place_scratch::<usize, f64>(nc, nr));
                let piv = PermRef::new_checked(&piv_fwd, &piv_inv, nc);
                permute_rows_in_place(f12.rb_mut(), piv, MemStack::new(&mut mem));
                solve_unit_lower_triangular_in_place(f11.rb(), f12.rb_mut(), par);
                solve_lower_triangular_in_place(
                    f11.rb().transpose(),
                    f21.rb_mut().transpose_mut(),
                    par,
                );
                matmul(f22.rb_mut(), Accum::Add, f21.rb(), f12.rb(), -1.0, par);
                contrib[s] = Some(f22.to_owned());
            }
            nodes.push(Node {
                lu: f11.to_owned(),
                piv_fwd,
                u12: f12.to_owned(),
                l21: f21.to_owned(),
            });
        }
        Ok(Self { nodes })
    }

    /// Solve `A x = b` in place, with `b` in the original ordering.
    pub fn solve_in_place(&self, sym: &Symbolic, b: &mut [f64]) {
        let par = Par::Seq;
        let mut x: Vec<f64> = sym.perm.iter().map(|&o| b[o]).collect();
        for (s, node) in self.nodes.iter().enumerate() {
            let (lo, hi) = (sym.begin[s], sym.begin[s + 1]);
            let nc = hi - lo;
            let mut z = Mat::from_fn(nc, 1, |i, _| x[lo + node.piv_fwd[i]]);
            solve_unit_lower_triangular_in_place(node.lu.as_ref(), z.as_mut(), par);
            for i in 0..nc {
                x[lo + i] = z[(i, 0)];
            }
            for (k, &r) in sym.rows[s].iter().enumerate() {
                let mut acc = 0.0;
                for i in 0..nc {
                    acc += node.l21[(k, i)] * x[lo + i];
                }
                x[r] -= acc;
            }
        }
        for (s, node) in self.nodes.iter().enumerate().rev() {
            let (lo, hi) = (sym.begin[s], sym.begin[s + 1]);
            let nc = hi - lo;
            let rows = &sym.rows[s];
            let mut z = Mat::from_fn(nc, 1, |i, _| {
                x[lo + i]
                    - rows
                        .iter()
                        .enumerate()
                        .map(|(k, &r)| node.u12[(i, k)] * x[r])
                        .sum::<f64>()
            });
            solve_upper_triangular_in_place(node.lu.as_ref(), z.as_mut(), par);
            for i in 0..nc {
                x[lo + i] = z[(i, 0)];
            }
        }
        for (i, &o) in sym.perm.iter().enumerate() {
            b[o] = x[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Random matrix on a banded, structurally symmetric pattern.
    fn banded(n: usize, bw: usize, seed: u64) -> (SymbolicSparseColMat<usize>, Vec<f64>) {
        let mut state = seed;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut col_ptr = vec![0usize];
        let mut row_idx = Vec::new();
        let mut vals = Vec::new();
        for c in 0..n {
            for r in c.saturating_sub(bw)..(c + bw + 1).min(n) {
                row_idx.push(r);
                // tiny diagonal entries every fifth row force pivoting inside fronts
                vals.push(if r == c {
                    if c % 5 == 0 {
                        1e-6 * next()
                    } else {
                        1.0 + next()
                    }
                } else {
                    next()
                });
            }
            col_ptr.push(row_idx.len());
        }
        (
            SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx),
            vals,
        )
    }

    fn matvec(p: &SymbolicSparseColMat<usize>, vals: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for c in 0..p.ncols() {
            for q in p.col_ptr()[c]..p.col_ptr()[c + 1] {
                y[p.row_idx()[q]] += vals[q] * x[c];
            }
        }
        y
    }

    #[test]
    fn solves_banded_systems_with_off_diagonal_pivots() {
        for (n, bw) in [(1, 0), (7, 2), (60, 4), (300, 9)] {
            let (p, vals) = banded(n, bw, n as u64);
            let sym = Symbolic::new(&p).unwrap();
            let f = Factor::new(&sym, &vals).unwrap();
            let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            let mut b = matvec(&p, &vals, &x);
            f.solve_in_place(&sym, &mut b);
            let err = x
                .iter()
                .zip(&b)
                .map(|(a, c)| (a - c).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "n={n}: error {err:.3e}");
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let p = SymbolicSparseColMat::new_checked(2, 2, vec![0, 1, 2], None, vec![0, 1]);
        let sym = Symbolic::new(&p).unwrap();
        assert!(Factor::new(&sym, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn rejects_unsymmetric_pattern() {
        let p = SymbolicSparseColMat::new_checked(2, 2, vec![0, 2, 3], None, vec![0, 1, 1]);
        assert!(Symbolic::new(&p).is_err());
    }
}
