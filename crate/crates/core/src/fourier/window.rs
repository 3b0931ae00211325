//! The truncation window: all integer indices `k ∈ Z^d` with `‖k‖₁ ≤ K`.
//!
//! Windows are immutable and shared between fields through a process-wide
//! cache, so two fields built with the same `(d, K)` point at the same
//! allocation and can be combined without any index translation.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

/// An integer Fourier mode `k ∈ Z^d`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<i32>);

impl MultiIndex {
    pub fn new(entries: Vec<i32>) -> Self {
        Self(entries)
    }

    pub fn zero(dim: usize) -> Self {
        Self(vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// ℓ1 norm, exact in integer arithmetic.
    pub fn l1(&self) -> u32 {
        self.0.iter().map(|k| k.unsigned_abs()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&k| k == 0)
    }

    pub fn neg(&self) -> Self {
        Self(self.0.iter().map(|k| -k).collect())
    }

    /// `k · x` for a real vector `x`.
    pub fn dot(&self, x: &[f64]) -> f64 {
        dot_i32(&self.0, x)
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.0
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, k) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{k}")?;
        }
        write!(f, ")")
    }
}

impl From<Vec<i32>> for MultiIndex {
    fn from(v: Vec<i32>) -> Self {
        Self(v)
    }
}

impl<const N: usize> From<[i32; N]> for MultiIndex {
    fn from(v: [i32; N]) -> Self {
        Self(v.to_vec())
    }
}

pub(crate) fn dot_i32(k: &[i32], x: &[f64]) -> f64 {
    k.iter().zip(x).map(|(&a, &b)| a as f64 * b).sum()
}

pub(crate) const OUTSIDE: u32 = u32::MAX;

/// Enumeration of the ℓ1 ball `‖k‖ ≤ K` in `Z^d` with constant-time lookup.
pub struct Window {
    dim: usize,
    radius: u32,
    /// Flat storage, `dim` entries per mode, in lexicographic order.
    modes: Vec<i32>,
    norms: Vec<u32>,
    /// Position of `−k` for every mode.
    negation: Vec<u32>,
    /// Dense table over the box `[−K, K]^d`.
    lookup: Vec<u32>,
    strides: Vec<usize>,
    zero: usize,
    /// Maximal runs of modes sharing the first `d − 1` entries.
    rows: Vec<Row>,
    /// Row index over the box `[−K, K]^{d−1}` of prefixes.
    row_lookup: Vec<u32>,
}

/// Positions `start..start + len` hold last entries `lo, lo + 1, …`.
#[derive(Clone, Copy, Debug)]
struct Row {
    start: u32,
    lo: i32,
    len: u32,
}

impl fmt::Debug for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Window")
            .field("dim", &self.dim)
            .field("radius", &self.radius)
            .field("len", &self.len())
            .finish()
    }
}

type WindowCache = Mutex<HashMap<(usize, u32), Arc<Window>>>;

static CACHE: OnceLock<WindowCache> = OnceLock::new();

impl Window {
    /// Shared window for `(dim, radius)`.
    pub fn get(dim: usize, radius: u32) -> Arc<Window> {
        assert!(dim >= 1, "torus dimension must be positive");
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("window cache poisoned");
        guard
            .entry((dim, radius))
            .or_insert_with(|| Arc::new(Window::build(dim, radius)))
            .clone()
    }

    fn build(dim: usize, radius: u32) -> Window {
        let k = radius as i32;
        let side = 2 * radius as usize + 1;
        let mut strides = vec![1usize; dim];
        for i in (0..dim.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * side;
        }
        let total = side.pow(dim as u32);
        let mut lookup = vec![OUTSIDE; total];
        let mut modes = Vec::new();
        let mut norms = Vec::new();
        let mut cur = vec![-k; dim];
        loop {
            let l1: u32 = cur.iter().map(|c| c.unsigned_abs()).sum();
            if l1 <= radius {
                let off: usize = cur
                    .iter()
                    .zip(&strides)
                    .map(|(&c, &s)| (c + k) as usize * s)
                    .sum();
                lookup[off] = norms.len() as u32;
                modes.extend_from_slice(&cur);
                norms.push(l1);
            }
            // odometer increment
            let mut i = dim;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if cur[i] < k {
                    cur[i] += 1;
                    for c in cur.iter_mut().skip(i + 1) {
                        *c = -k;
                    }
                    break;
                } else if i == 0 {
                    i = usize::MAX;
                    break;
                }
            }
            if i == usize::MAX {
                break;
            }
        }
        let n = norms.len();
        let mut w = Window {
            dim,
            radius,
            modes,
            norms,
            negation: vec![0; n],
            lookup,
            strides,
            zero: 0,
            rows: Vec::new(),
            row_lookup: Vec::new(),
        };
        w.negation = (0..n)
            .map(|p| {
                let minus: Vec<i32> = w.mode(p).iter().map(|c| -c).collect();
                w.position(&minus).expect("window is symmetric") as u32
            })
            .collect();
        w.zero = w.position(&vec![0; dim]).expect("zero mode present");
        w.build_rows();
        w
    }

    fn build_rows(&mut self) {
        let d = self.dim;
        let side = 2 * self.radius as usize + 1;
        self.row_lookup = vec![OUTSIDE; side.pow(d as u32 - 1)];
        let mut rows: Vec<Row> = Vec::new();
        for p in 0..self.len() {
            let k = self.mode(p).to_vec();
            let new_row = match rows.last() {
                None => true,
                Some(r) => self.mode(r.start as usize)[..d - 1] != k[..d - 1],
            };
            if new_row {
                let off = self.prefix_offset(&k[..d - 1]);
                self.row_lookup[off] = rows.len() as u32;
                rows.push(Row {
                    start: p as u32,
                    lo: k[d - 1],
                    len: 1,
                });
            } else {
                rows.last_mut().expect("row exists").len += 1;
            }
        }
        self.rows = rows;
    }

    fn prefix_offset(&self, prefix: &[i32]) -> usize {
        let r = self.radius as i32;
        let side = 2 * self.radius as usize + 1;
        prefix
            .iter()
            .fold(0, |acc, &c| acc * side + (c + r) as usize)
    }

    /// Calls `f(src, dst, n)` for each maximal run of positions `src..src + n`
    /// whose modes, shifted by the mode at `shift`, land on `dst..dst + n`.
    #[inline]
    pub(crate) fn shifted_runs(&self, shift: usize, mut f: impl FnMut(usize, usize, usize)) {
        let d = self.dim;
        let radius = self.radius as i32;
        let ks = self.mode(shift);
        let last = ks[d - 1];
        let mut target = vec![0i32; d - 1];
        for row in &self.rows {
            let prefix = &self.mode(row.start as usize)[..d - 1];
            let mut l1 = 0;
            for i in 0..d - 1 {
                target[i] = prefix[i] + ks[i];
                l1 += target[i].abs();
            }
            if l1 > radius {
                continue;
            }
            let t = self.rows[self.row_lookup[self.prefix_offset(&target)] as usize];
            let lo = row.lo.max(t.lo - last);
            let hi = (row.lo + row.len as i32).min(t.lo + t.len as i32 - last);
            if lo >= hi {
                continue;
            }
            let src = row.start as usize + (lo - row.lo) as usize;
            let dst = t.start as usize + (lo + last - t.lo) as usize;
            f(src, dst, (hi - lo) as usize);
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    /// Number of modes in the window.
    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn mode(&self, pos: usize) -> &[i32] {
        &self.modes[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn multi_index(&self, pos: usize) -> MultiIndex {
        MultiIndex(self.mode(pos).to_vec())
    }

    pub fn l1(&self, pos: usize) -> u32 {
        self.norms[pos]
    }

    pub fn negation(&self, pos: usize) -> usize {
        self.negation[pos] as usize
    }

    pub fn zero_position(&self) -> usize {
        self.zero
    }

    /// Position of `k`, or `None` when `k` lies outside the window.
    pub fn position(&self, k: &[i32]) -> Option<usize> {
        if k.len() != self.dim {
            return None;
        }
        let r = self.radius as i32;
        let mut l1 = 0u32;
        let mut off = 0usize;
        for (&c, &s) in k.iter().zip(&self.strides) {
            l1 += c.unsigned_abs();
            if c.abs() > r {
                return None;
            }
            off += (c + r) as usize * s;
        }
        if l1 > self.radius {
            return None;
        }
        match self.lookup[off] {
            OUTSIDE => None,
            p => Some(p as usize),
        }
    }

    /// Position of `a + b` for two window members, `None` if the sum leaves the window.
    #[inline]
    pub(crate) fn sum_position(&self, a: usize, b: usize) -> Option<usize> {
        let ka = self.mode(a);
        let kb = self.mode(b);
        let r = self.radius as i32;
        let mut l1 = 0u32;
        let mut off = 0usize;
        for i in 0..self.dim {
            let s = ka[i] + kb[i];
            l1 += s.unsigned_abs();
            if l1 > self.radius {
                return None;
            }
            off += (s + r) as usize * self.strides[i];
        }
        Some(self.lookup[off] as usize)
    }

    pub fn positions(&self) -> std::ops::Range<usize> {
        0..self.len()
    }
}
