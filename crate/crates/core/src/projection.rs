//! Random D×d projections with unit-norm columns and exact adjoints.
//!
//! Three realizations of the frozen map `P`:
//!
//! * **Dense** — i.i.d. standard normal entries, each column rescaled to
//!   unit norm. O(D·d) storage and apply time.
//! * **Sparse** — each entry is nonzero with probability 1/√D, sign ±1
//!   equiprobable, then each column is rescaled to unit norm. Stored
//!   column-compressed; apply cost is proportional to the nonzero count,
//!   O(√D·d) in expectation.
//! * **Fastfood** — implicit blocks `M = H·G·Π·H·B` (Hadamard transform,
//!   normal diagonal, permutation, Hadamard, ±1 diagonal) of side
//!   `l = next_power_of_two(d)`, stacked ⌈D/l⌉ times and truncated to D
//!   rows. O(D) storage, O(D·log d) apply time; no D×d matrix ever exists.
//!
//! All three are pure functions of `(kind, D, d, seed)`: reconstruction is
//! bit-identical, which is what allows checkpoints to store seeds instead
//! of matrices.
//!
//! Column normalization of the Fastfood stack deserves a note. A single
//! block's column `j` is `H G Π H B e_j`; since `Π H B e_j` is a ±1 vector,
//! `G` takes it to norm `‖g‖₂` and the outer `H` multiplies by `√l`, so
//! scaling each block by `1/(√l·‖g‖₂)` gives exactly unit block columns.
//! Stacking k such blocks yields stacked columns of norm √k, and truncating
//! the last block to `r < l` rows shrinks each column by an amount that
//! depends on j. Both effects are corrected here by one per-column scale:
//! `s_j = 1/√(k_full + q_j²)` where `q_j` is the norm of the kept rows of
//! the last block's unit column (`q_j = 1` when no truncation occurs, so
//! the aligned case reduces to the uniform `1/√k`). The result is columns
//! of exactly unit norm, as the type invariant requires.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tag;

/// Which realization of the projection matrix to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionKind {
    Dense,
    Sparse,
    Fastfood,
}

impl ProjectionKind {
    pub const ALL: [ProjectionKind; 3] =
        [ProjectionKind::Dense, ProjectionKind::Sparse, ProjectionKind::Fastfood];

    /// Single-byte code used by the checkpoint format.
    pub fn code(self) -> u8 {
        match self {
            ProjectionKind::Dense => 0,
            ProjectionKind::Sparse => 1,
            ProjectionKind::Fastfood => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(ProjectionKind::Dense),
            1 => Ok(ProjectionKind::Sparse),
            2 => Ok(ProjectionKind::Fastfood),
            other => Err(Error::Checkpoint(format!("unknown projection kind code {other}"))),
        }
    }
}

impl fmt::Display for ProjectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ProjectionKind::Dense => "dense",
            ProjectionKind::Sparse => "sparse",
            ProjectionKind::Fastfood => "fastfood",
        };
        f.write_str(name)
    }
}

impl FromStr for ProjectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(ProjectionKind::Dense),
            "sparse" => Ok(ProjectionKind::Sparse),
            "fastfood" => Ok(ProjectionKind::Fastfood),
            other => Err(Error::InvalidArgument(format!(
                "unknown projection kind `{other}` (expected dense, sparse, or fastfood)"
            ))),
        }
    }
}

/// In-place unnormalized Fast Walsh–Hadamard transform, Sylvester ordering.
///
/// Self-inverse up to a factor of the length: `fwht(fwht(x)) = len·x`.
pub fn fwht(x: &mut [f64]) -> Result<()> {
    let n = x.len();
    if !n.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "FWHT length must be a power of two, got {n}"
        )));
    }
    let mut h = 1;
    while h < n {
        for chunk in x.chunks_exact_mut(2 * h) {
            let (lo, hi) = chunk.split_at_mut(h);
            for i in 0..h {
                let (a, b) = (lo[i], hi[i]);
                lo[i] = a + b;
                hi[i] = a - b;
            }
        }
        h *= 2;
    }
    Ok(())
}

/// A frozen random projection; construct via [`make_projection`].
#[derive(Debug, Clone)]
pub enum Projection {
    Dense(DenseProjection),
    Sparse(SparseProjection),
    Fastfood(FastfoodProjection),
}

/// Explicit matrix realization.
#[derive(Debug, Clone)]
pub struct DenseProjection {
    d_full: usize,
    d_sub: usize,
    seed: u64,
    /// (D, d) with unit-norm columns.
    m: Array2<f64>,
}

/// Column-compressed sparse realization.
#[derive(Debug, Clone)]
pub struct SparseProjection {
    d_full: usize,
    d_sub: usize,
    seed: u64,
    col_ptr: Vec<usize>,
    rows: Vec<u32>,
    vals: Vec<f64>,
}

/// One implicit Fastfood block: diag(B)·FWHT·gather(Π)·diag(G)·FWHT,
/// scaled by 1/(√l·‖g‖₂) so its full columns are exactly unit-norm.
#[derive(Debug, Clone)]
struct FastfoodBlock {
    b: Vec<f64>,
    perm: Vec<u32>,
    g: Vec<f64>,
    scale: f64,
}

impl FastfoodBlock {
    fn draw(seed: u64, index: u64, l: usize) -> Result<Self> {
        let mut bs = Stream::tagged(seed, &[tag::PROJ_BLOCK, index, 0]);
        let b: Vec<f64> = (0..l).map(|_| bs.sign()).collect();
        let mut ps = Stream::tagged(seed, &[tag::PROJ_BLOCK, index, 1]);
        let perm: Vec<u32> = ps.permutation(l).into_iter().map(|i| i as u32).collect();
        let mut gs = Stream::tagged(seed, &[tag::PROJ_BLOCK, index, 2]);
        let g: Vec<f64> = (0..l).map(|_| gs.normal()).collect();
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm == 0.0 {
            return Err(Error::Numeric("Fastfood block drew an all-zero diagonal".into()));
        }
        Ok(FastfoodBlock { b, perm, g, scale: 1.0 / ((l as f64).sqrt() * gnorm) })
    }

    /// out = block · x (both length l). `tmp` is scratch of length l.
    fn apply(&self, x: &[f64], out: &mut [f64], tmp: &mut [f64]) {
        let l = self.b.len();
        for i in 0..l {
            tmp[i] = x[i] * self.b[i];
        }
        fwht(tmp).expect("block length is a power of two");
        for i in 0..l {
            out[i] = tmp[self.perm[i] as usize] * self.g[i];
        }
        fwht(out).expect("block length is a power of two");
        for v in out.iter_mut() {
            *v *= self.scale;
        }
    }

    /// out = blockᵀ · y (both length l). `tmp` is scratch of length l.
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64], tmp: &mut [f64]) {
        let l = self.b.len();
        tmp.copy_from_slice(y);
        fwht(tmp).expect("block length is a power of two");
        // Transpose of gather-then-scale is scale-then-scatter.
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..l {
            out[self.perm[i] as usize] = tmp[i] * self.g[i];
        }
        fwht(out).expect("block length is a power of two");
        for i in 0..l {
            out[i] *= self.b[i] * self.scale;
        }
    }
}

/// Implicit stacked-block realization.
#[derive(Debug, Clone)]
pub struct FastfoodProjection {
    d_full: usize,
    d_sub: usize,
    seed: u64,
    /// Block side, next power of two ≥ d.
    l: usize,
    blocks: Vec<FastfoodBlock>,
    /// Per-column stack normalization s_j (see module docs).
    col_scale: Vec<f64>,
}

/// Builds the projection for `(kind, d_full, d_sub, seed)`.
///
/// `d_full` is the ambient dimension D, `d_sub` the subspace dimension d.
pub fn make_projection(
    kind: ProjectionKind,
    d_full: usize,
    d_sub: usize,
    seed: u64,
) -> Result<Projection> {
    if d_full == 0 || d_sub == 0 {
        return Err(Error::InvalidArgument(format!(
            "projection dimensions must be positive (D={d_full}, d={d_sub})"
        )));
    }
    if d_sub > d_full {
        return Err(Error::InvalidArgument(format!(
            "subspace dimension d={d_sub} exceeds ambient dimension D={d_full}"
        )));
    }
    if d_full > u32::MAX as usize {
        return Err(Error::InvalidArgument(format!(
            "ambient dimension D={d_full} exceeds the supported maximum of 2^32-1"
        )));
    }
    match kind {
        ProjectionKind::Dense => {
            let mut m = Array2::zeros((d_full, d_sub));
            for j in 0..d_sub {
                let mut s = Stream::tagged(seed, &[tag::PROJ_COL, j as u64]);
                let mut norm_sq = 0.0;
                for i in 0..d_full {
                    let v = s.normal();
                    m[(i, j)] = v;
                    norm_sq += v * v;
                }
                if norm_sq == 0.0 {
                    return Err(Error::Numeric(format!("dense column {j} drew all zeros")));
                }
                let inv = 1.0 / norm_sq.sqrt();
                for i in 0..d_full {
                    m[(i, j)] *= inv;
                }
            }
            Ok(Projection::Dense(DenseProjection { d_full, d_sub, seed, m }))
        }
        ProjectionKind::Sparse => {
            let density = 1.0 / (d_full as f64).sqrt();
            let mut col_ptr = Vec::with_capacity(d_sub + 1);
            let mut rows: Vec<u32> = Vec::new();
            let mut vals: Vec<f64> = Vec::new();
            col_ptr.push(0);
            for j in 0..d_sub {
                // A column with no nonzero entries cannot be normalized;
                // resample it under an incremented attempt index (the
                // attempt is part of the stream tags, so the common case
                // is just attempt 0).
                let mut attempt = 0u64;
                loop {
                    let start = rows.len();
                    let mut s = Stream::tagged(seed, &[tag::PROJ_COL, j as u64, attempt]);
                    for i in 0..d_full {
                        if s.uniform() < density {
                            rows.push(i as u32);
                            vals.push(s.sign());
                        }
                    }
                    if rows.len() > start {
                        let nnz = rows.len() - start;
                        let inv = 1.0 / (nnz as f64).sqrt();
                        for v in &mut vals[start..] {
                            *v *= inv;
                        }
                        break;
                    }
                    attempt += 1;
                }
                col_ptr.push(rows.len());
            }
            Ok(Projection::Sparse(SparseProjection { d_full, d_sub, seed, col_ptr, rows, vals }))
        }
        ProjectionKind::Fastfood => {
            let l = d_sub.next_power_of_two();
            let padded = d_full.div_ceil(l) * l;
            let nblocks = padded / l;
            let blocks: Vec<FastfoodBlock> = (0..nblocks)
                .map(|b| FastfoodBlock::draw(seed, b as u64, l))
                .collect::<Result<_>>()?;
            let full_blocks = if padded == d_full { nblocks } else { nblocks - 1 };
            let col_scale = if padded == d_full {
                vec![1.0 / (nblocks as f64).sqrt(); d_sub]
            } else {
                // Truncation keeps only the first r rows of the last block;
                // measure each kept column's norm q_j exactly.
                let r = d_full - full_blocks * l;
                let last = blocks.last().expect("at least one block");
                let mut basis = vec![0.0; l];
                let mut out = vec![0.0; l];
                let mut tmp = vec![0.0; l];
                let mut scale = Vec::with_capacity(d_sub);
                for j in 0..d_sub {
                    basis[j] = 1.0;
                    last.apply(&basis, &mut out, &mut tmp);
                    basis[j] = 0.0;
                    let q_sq: f64 = out[..r].iter().map(|v| v * v).sum();
                    let total = full_blocks as f64 + q_sq;
                    if total <= 0.0 {
                        return Err(Error::Numeric(format!(
                            "Fastfood column {j} vanishes entirely under truncation"
                        )));
                    }
                    scale.push(1.0 / total.sqrt());
                }
                scale
            };
            Ok(Projection::Fastfood(FastfoodProjection {
                d_full,
                d_sub,
                seed,
                l,
                blocks,
                col_scale,
            }))
        }
    }
}

impl Projection {
    pub fn kind(&self) -> ProjectionKind {
        match self {
            Projection::Dense(_) => ProjectionKind::Dense,
            Projection::Sparse(_) => ProjectionKind::Sparse,
            Projection::Fastfood(_) => ProjectionKind::Fastfood,
        }
    }

    /// Ambient dimension D.
    pub fn d_full(&self) -> usize {
        match self {
            Projection::Dense(p) => p.d_full,
            Projection::Sparse(p) => p.d_full,
            Projection::Fastfood(p) => p.d_full,
        }
    }

    /// Subspace dimension d.
    pub fn d_sub(&self) -> usize {
        match self {
            Projection::Dense(p) => p.d_sub,
            Projection::Sparse(p) => p.d_sub,
            Projection::Fastfood(p) => p.d_sub,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Projection::Dense(p) => p.seed,
            Projection::Sparse(p) => p.seed,
            Projection::Fastfood(p) => p.seed,
        }
    }

    /// P·v — maps subspace coordinates to the ambient space.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.d_full()];
        self.project_into(v, &mut out)?;
        Ok(out)
    }

    /// P·v written into a caller-provided buffer (training loops reuse it).
    pub fn project_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        if v.len() != self.d_sub() {
            return Err(Error::DimensionMismatch(format!(
                "project expects a vector of length d={}, got {}",
                self.d_sub(),
                v.len()
            )));
        }
        if out.len() != self.d_full() {
            return Err(Error::DimensionMismatch(format!(
                "project output must have length D={}, got {}",
                self.d_full(),
                out.len()
            )));
        }
        match self {
            Projection::Dense(p) => {
                let r = p.m.dot(&ArrayView1::from(v));
                out.copy_from_slice(r.as_slice().expect("gemv output is contiguous"));
            }
            Projection::Sparse(p) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for j in 0..p.d_sub {
                    let vj = v[j];
                    if vj == 0.0 {
                        continue;
                    }
                    for k in p.col_ptr[j]..p.col_ptr[j + 1] {
                        out[p.rows[k] as usize] += p.vals[k] * vj;
                    }
                }
            }
            Projection::Fastfood(p) => {
                let l = p.l;
                let mut vs = vec![0.0; l];
                for j in 0..p.d_sub {
                    vs[j] = v[j] * p.col_scale[j];
                }
                let mut block_out = vec![0.0; l];
                let mut tmp = vec![0.0; l];
                for (bi, block) in p.blocks.iter().enumerate() {
                    block.apply(&vs, &mut block_out, &mut tmp);
                    let start = bi * l;
                    let len = l.min(p.d_full - start);
                    out[start..start + len].copy_from_slice(&block_out[..len]);
                }
            }
        }
        Ok(())
    }

    /// Pᵀ·g — pulls an ambient gradient back to subspace coordinates, the
    /// exact adjoint of [`project`]: ⟨Pv, g⟩ = ⟨v, Pᵀg⟩.
    pub fn project_adjoint(&self, g: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.d_sub()];
        self.project_adjoint_into(g, &mut out)?;
        Ok(out)
    }

    /// Pᵀ·g written into a caller-provided buffer.
    pub fn project_adjoint_into(&self, g: &[f64], out: &mut [f64]) -> Result<()> {
        if g.len() != self.d_full() {
            return Err(Error::DimensionMismatch(format!(
                "adjoint expects a vector of length D={}, got {}",
                self.d_full(),
                g.len()
            )));
        }
        if out.len() != self.d_sub() {
            return Err(Error::DimensionMismatch(format!(
                "adjoint output must have length d={}, got {}",
                self.d_sub(),
                out.len()
            )));
        }
        match self {
            Projection::Dense(p) => {
                let r = p.m.t().dot(&ArrayView1::from(g));
                out.copy_from_slice(r.as_slice().expect("gemv output is contiguous"));
            }
            Projection::Sparse(p) => {
                for j in 0..p.d_sub {
                    let mut acc = 0.0;
                    for k in p.col_ptr[j]..p.col_ptr[j + 1] {
                        acc += p.vals[k] * g[p.rows[k] as usize];
                    }
                    out[j] = acc;
                }
            }
            Projection::Fastfood(p) => {
                let l = p.l;
                out.iter_mut().for_each(|o| *o = 0.0);
                let mut ybuf = vec![0.0; l];
                let mut back = vec![0.0; l];
                let mut tmp = vec![0.0; l];
                for (bi, block) in p.blocks.iter().enumerate() {
                    let start = bi * l;
                    let len = l.min(p.d_full - start);
                    ybuf[..len].copy_from_slice(&g[start..start + len]);
                    ybuf[len..].iter_mut().for_each(|v| *v = 0.0);
                    block.apply_adjoint(&ybuf, &mut back, &mut tmp);
                    for j in 0..p.d_sub {
                        out[j] += back[j];
                    }
                }
                for j in 0..p.d_sub {
                    out[j] *= p.col_scale[j];
                }
            }
        }
        Ok(())
    }

    /// The j-th column of P, equal to `project(e_j)`.
    pub fn materialize_column(&self, j: usize) -> Result<Vec<f64>> {
        if j >= self.d_sub() {
            return Err(Error::InvalidArgument(format!(
                "column index {j} out of range for d={}",
                self.d_sub()
            )));
        }
        match self {
            Projection::Dense(p) => Ok(p.m.column(j).to_vec()),
            Projection::Sparse(p) => {
                let mut col = vec![0.0; p.d_full];
                for k in p.col_ptr[j]..p.col_ptr[j + 1] {
                    col[p.rows[k] as usize] = p.vals[k];
                }
                Ok(col)
            }
            Projection::Fastfood(_) => {
                let mut e = vec![0.0; self.d_sub()];
                e[j] = 1.0;
                self.project(&e)
            }
        }
    }

    /// Approximate resident size, for benchmark reporting.
    pub fn memory_bytes(&self) -> usize {
        match self {
            Projection::Dense(p) => p.m.len() * 8,
            Projection::Sparse(p) => {
                p.col_ptr.len() * 8 + p.rows.len() * 4 + p.vals.len() * 8
            }
            Projection::Fastfood(p) => {
                p.blocks.len() * p.l * (8 + 4 + 8) + p.col_scale.len() * 8
            }
        }
    }

    /// Test-support constructor wrapping an explicit matrix (e.g. an
    /// orthonormalized basis) in the Dense realization.
    #[doc(hidden)]
    pub fn from_dense_matrix(m: Array2<f64>) -> Projection {
        let (d_full, d_sub) = m.dim();
        Projection::Dense(DenseProjection { d_full, d_sub, seed: 0, m })
    }
}
