//! Aggregation multigrid V-cycle for weighted grid Laplacians, used as a
//! symmetric preconditioner. Each level merges 2×2 blocks; the Galerkin
//! coarse operator of a graph Laplacian under piecewise-constant
//! prolongation is again a graph Laplacian whose edge weights count the
//! fine edges between blocks.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

const OMEGA: f64 = 2.0 / 3.0;
const SWEEPS: usize = 2;
/// Boost for the piecewise-constant correction, which underestimates smooth error.
const CORRECTION: f64 = 1.7;
const COARSEST: usize = 400;

pub(super) struct Level {
    w: usize,
    h: usize,
    /// Weight of the edge from `i` to `i + 1`.
    wr: Vec<f64>,
    /// Weight of the edge from `i` to `i − w`.
    wu: Vec<f64>,
    diag: Vec<f64>,
}

impl Level {
    pub(super) fn new(w: usize, h: usize, wr: Vec<f64>, wu: Vec<f64>) -> Self {
        let mut diag = vec![0.0; w * h];
        for i in 0..w * h {
            diag[i] += wr[i] + wu[i];
            if wr[i] > 0.0 {
                diag[i + 1] += wr[i];
            }
            if wu[i] > 0.0 {
                diag[i - w] += wu[i];
            }
        }
        Level { w, h, wr, wu, diag }
    }

    fn len(&self) -> usize {
        self.w * self.h
    }

    fn active(&self) -> usize {
        self.diag.iter().filter(|&&d| d > 0.0).count()
    }

    pub(super) fn apply(&self, x: &[f64], out: &mut [f64]) {
        let w = self.w;
        let h = self.h;
        out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (xp, o) in row.iter_mut().enumerate() {
                let i = y * w + xp;
                let mut acc = self.diag[i] * x[i];
                if self.diag[i] > 0.0 {
                    if xp + 1 < w {
                        acc -= self.wr[i] * x[i + 1];
                    }
                    if xp > 0 {
                        acc -= self.wr[i - 1] * x[i - 1];
                    }
                    if y > 0 {
                        acc -= self.wu[i] * x[i - w];
                    }
                    if y + 1 < h {
                        acc -= self.wu[i + w] * x[i + w];
                    }
                }
                *o = acc;
            }
        });
    }

    fn coarsen(&self) -> Level {
        let (cw, ch) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut wr = vec![0.0; cw * ch];
        let mut wu = vec![0.0; cw * ch];
        for y in 0..self.h {
            for x in 0..self.w {
                let i = y * self.w + x;
                let c = (y / 2) * cw + x / 2;
                if x % 2 == 1 {
                    wr[c] += self.wr[i];
                }
                if y % 2 == 0 {
                    wu[c] += self.wu[i];
                }
            }
        }
        Level::new(cw, ch, wr, wu)
    }

    fn aggregate(&self, i: usize) -> usize {
        (i / self.w / 2) * self.w.div_ceil(2) + (i % self.w) / 2
    }

    fn jacobi(&self, x: &mut [f64], r: &[f64], scratch: &mut [f64]) {
        self.apply(x, scratch);
        x.par_iter_mut().enumerate().for_each(|(i, v)| {
            if self.diag[i] > 0.0 {
                *v += OMEGA * (r[i] - scratch[i]) / self.diag[i];
            }
        });
    }
}

/// Dense solve on the coarsest level with the per-component constant
/// modes pinned, so the singular Laplacian becomes definite.
struct Coarsest {
    index: Vec<Option<usize>>,
    label: Vec<usize>,
    counts: Vec<usize>,
    factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl Coarsest {
    fn new(level: &Level) -> Self {
        let n = level.len();
        let mut index = vec![None; n];
        let mut m = 0;
        for i in 0..n {
            if level.diag[i] > 0.0 {
                index[i] = Some(m);
                m += 1;
            }
        }
        // component labels over positive-weight edges (union-find)
        let mut parent: Vec<usize> = (0..m).collect();
        fn find(p: &mut [usize], mut a: usize) -> usize {
            while p[a] != a {
                p[a] = p[p[a]];
                a = p[a];
            }
            a
        }
        let mut a = DMatrix::<f64>::zeros(m, m);
        for i in 0..n {
            let Some(k) = index[i] else { continue };
            a[(k, k)] = level.diag[i];
            let mut link = |j: usize, wgt: f64| {
                if wgt > 0.0 {
                    if let Some(l) = index[j] {
                        a[(k, l)] -= wgt;
                        a[(l, k)] -= wgt;
                        let (ra, rb) = (find(&mut parent, k), find(&mut parent, l));
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            };
            if i % level.w + 1 < level.w {
                link(i + 1, level.wr[i]);
            }
            if i >= level.w {
                link(i - level.w, level.wu[i]);
            }
        }
        let roots: Vec<usize> = (0..m).map(|k| find(&mut parent, k)).collect();
        let mut ids = std::collections::BTreeMap::new();
        let label: Vec<usize> = roots
            .iter()
            .map(|r| {
                let next = ids.len();
                *ids.entry(*r).or_insert(next)
            })
            .collect();
        let mut counts = vec![0usize; ids.len()];
        for &l in &label {
            counts[l] += 1;
        }
        for k in 0..m {
            for l in 0..m {
                if label[k] == label[l] {
                    a[(k, l)] += 1.0 / counts[label[k]] as f64;
                }
            }
        }
        let factor = a.cholesky().expect("pinned coarse Laplacian is definite");
        Coarsest {
            index,
            label,
            counts,
            factor,
        }
    }

    fn solve(&self, r: &[f64]) -> Vec<f64> {
        let m = self.label.len();
        let mut rhs = DVector::<f64>::zeros(m);
        for (i, k) in self.index.iter().enumerate() {
            if let Some(k) = *k {
                rhs[k] = r[i];
            }
        }
        let mut mean = vec![0.0; self.counts.len()];
        for k in 0..m {
            mean[self.label[k]] += rhs[k];
        }
        for k in 0..m {
            rhs[k] -= mean[self.label[k]] / self.counts[self.label[k]] as f64;
        }
        let sol = self.factor.solve(&rhs);
        self.index.iter().map(|k| k.map_or(0.0, |k| sol[k])).collect()
    }
}

pub(super) struct Hierarchy {
    levels: Vec<Level>,
    coarsest: Coarsest,
}

impl Hierarchy {
    pub(super) fn new(fine: Level) -> Self {
        let mut levels = vec![fine];
        loop {
            let last = levels.last().unwrap();
            if last.active() <= COARSEST || (last.w <= 2 && last.h <= 2) {
                break;
            }
            let next = last.coarsen();
            levels.push(next);
        }
        let coarsest = Coarsest::new(levels.last().unwrap());
        Hierarchy { levels, coarsest }
    }

    pub(super) fn fine(&self) -> &Level {
        &self.levels[0]
    }

    /// One symmetric V-cycle from a zero initial guess.
    pub(super) fn precondition(&self, r: &[f64]) -> Vec<f64> {
        self.cycle(0, r)
    }

    fn cycle(&self, k: usize, r: &[f64]) -> Vec<f64> {
        if k + 1 == self.levels.len() {
            return self.coarsest.solve(r);
        }
        let lv = &self.levels[k];
        let n = lv.len();
        let mut z = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        for _ in 0..SWEEPS {
            lv.jacobi(&mut z, r, &mut scratch);
        }
        lv.apply(&z, &mut scratch);
        let mut rc = vec![0.0; self.levels[k + 1].len()];
        for i in 0..n {
            if lv.diag[i] > 0.0 {
                rc[lv.aggregate(i)] += r[i] - scratch[i];
            }
        }
        let zc = self.cycle(k + 1, &rc);
        for (i, v) in z.iter_mut().enumerate() {
            if lv.diag[i] > 0.0 {
                *v += CORRECTION * zc[lv.aggregate(i)];
            }
        }
        for _ in 0..SWEEPS {
            lv.jacobi(&mut z, r, &mut scratch);
        }
        z
    }
}
