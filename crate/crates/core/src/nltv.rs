//! Nonlocal total variation: the patch-similarity graph, its energy, and the
//! proximal step `argmin_u J(u) + (mu/2)‖u − v‖²`.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct NlParams {
    pub patch_radius: usize,
    pub search_radius: usize,
    /// Neighbours each pixel selects before symmetrization.
    pub neighbors_kept: usize,
    /// Filtering parameter `h` in intensity units.
    pub h: f64,
    /// Added under the square root of every pixel's term.
    pub sqrt_epsilon: f64,
}

impl Default for NlParams {
    fn default() -> Self {
        Self {
            patch_radius: 2,
            search_radius: 5,
            neighbors_kept: 10,
            h: 0.1,
            sqrt_epsilon: 1e-6,
        }
    }
}

impl NlParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch_radius == 0 || self.search_radius == 0 || self.neighbors_kept == 0 {
            return Err(Error::invalid(
                "patch_radius, search_radius and neighbors_kept must be >= 1",
            ));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::invalid("h must be positive"));
        }
        if !(self.sqrt_epsilon > 0.0 && self.sqrt_epsilon.is_finite()) {
            return Err(Error::invalid("sqrt_epsilon must be positive"));
        }
        Ok(())
    }
}

/// Symmetric weighted graph over the pixels of a `width × height` grid,
/// stored as sorted adjacency lists.
#[derive(Debug, Clone, PartialEq)]
pub struct NlGraph {
    width: usize,
    height: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
}

impl NlGraph {
    /// Builds a graph from undirected edges `(a, b, w)`. Each edge is stored
    /// in both directions; a repeated pair keeps the larger weight.
    pub fn from_edges(width: usize, height: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let n = width * height;
        let mut lists: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(a, b, w) in edges {
            if a >= n || b >= n {
                return Err(Error::invalid(format!("edge ({a}, {b}) outside {n} pixels")));
            }
            if a == b {
                return Err(Error::invalid(format!("self-edge at pixel {a}")));
            }
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::invalid(format!("edge weight {w} outside (0, 1]")));
            }
            lists[a].push((b, w));
            lists[b].push((a, w));
        }
        Ok(Self::from_lists(width, height, lists))
    }

    fn from_lists(width: usize, height: usize, mut lists: Vec<Vec<(usize, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut neighbors = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for list in &mut lists {
            list.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
            list.dedup_by_key(|e| e.0);
            for &(j, w) in list.iter() {
                neighbors.push(j);
                weights.push(w);
            }
            offsets.push(neighbors.len());
        }
        Self {
            width,
            height,
            offsets,
            neighbors,
            weights,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Number of directed entries (twice the number of undirected edges).
    pub fn entry_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.pixel_count()).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    /// `(neighbour index, weight)` pairs of pixel `i`, by increasing index.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.neighbors[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        let r = self.offsets[i]..self.offsets[i + 1];
        let list = &self.neighbors[r.clone()];
        list.binary_search(&j).ok().map(|k| self.weights[r.start + k])
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.pixel_count())
            .all(|i| self.neighbors(i).all(|(j, w)| self.weight(j, i) == Some(w)))
    }

    /// Writes one `i j w` line per directed entry.
    pub fn write_triples(&self, mut out: impl Write) -> io::Result<()> {
        for i in 0..self.pixel_count() {
            for (j, w) in self.neighbors(i) {
                writeln!(out, "{i} {j} {w}")?;
            }
        }
        Ok(())
    }

    fn check_dims(&self, img: &Image) -> Result<()> {
        if img.dims() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: img.dims(),
            });
        }
        Ok(())
    }
}

/// Mean over the patch of squared differences, replicate border.
pub fn patch_distance(v: &Image, a: (usize, usize), b: (usize, usize), radius: usize) -> f64 {
    let r = radius as isize;
    let mut sum = 0.0;
    for oy in -r..=r {
        for ox in -r..=r {
            let p = v.get_clamped(a.0 as isize + ox, a.1 as isize + oy);
            let q = v.get_clamped(b.0 as isize + ox, b.1 as isize + oy);
            sum += (p - q) * (p - q);
        }
    }
    let side = (2 * radius + 1) as f64;
    sum / (side * side)
}

/// Builds the k-nearest-patch graph of `v`.
///
/// Each pixel keeps its `k` closest candidates in the search window (ties by
/// row-major index). The union of these selections is symmetrized. A pixel
/// may additionally be chosen by many others; of those incoming-only edges it
/// keeps the `k` closest, so no pixel ends up with more than `2k` neighbours.
/// Edges whose weight underflows to zero are dropped.
pub fn compute_weights(v: &Image, params: &NlParams) -> Result<NlGraph> {
    params.validate()?;
    let (w, h) = v.dims();
    let side = 2 * params.patch_radius + 1;
    if w <= side || h <= side {
        return Err(Error::TooSmall(format!(
            "{w}x{h} image must exceed the {side}x{side} patch"
        )));
    }
    let n = w * h;
    let sr = params.search_radius as isize;
    let k = params.neighbors_kept;

    let chosen: Vec<Vec<(f64, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let mut cand = Vec::with_capacity(((2 * sr + 1) * (2 * sr + 1)) as usize);
            for yy in (y as isize - sr).max(0)..=(y as isize + sr).min(h as isize - 1) {
                for xx in (x as isize - sr).max(0)..=(x as isize + sr).min(w as isize - 1) {
                    let j = yy as usize * w + xx as usize;
                    if j != i {
                        let d = patch_distance(v, (x, y), (xx as usize, yy as usize), params.patch_radius);
                        cand.push((d, j));
                    }
                }
            }
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.truncate(k);
            cand
        })
        .collect();

    let selects = |i: usize, j: usize| chosen[i].iter().any(|&(_, c)| c == j);
    // Incoming-only edges per target, closest first; the first k survive.
    let mut incoming: Vec<Vec<(f64, usize)>> = vec![Vec::new(); n];
    for (i, list) in chosen.iter().enumerate() {
        for &(d, j) in list {
            if !selects(j, i) {
                incoming[j].push((d, i));
            }
        }
    }
    for list in &mut incoming {
        list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        list.truncate(k);
    }
    let h2 = params.h * params.h;
    let mut lists: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, list) in chosen.iter().enumerate() {
        for &(d, j) in list {
            let keep = if selects(j, i) {
                i < j
            } else {
                incoming[j].iter().any(|&(_, s)| s == i)
            };
            let wt = (-d / h2).exp();
            if keep && wt > 0.0 {
                lists[i].push((j, wt));
                lists[j].push((i, wt));
            }
        }
    }
    Ok(NlGraph::from_lists(w, h, lists))
}

fn local_rho_sq(u: &[f64], g: &NlGraph, i: usize) -> f64 {
    g.neighbors(i)
        .map(|(j, w)| {
            let d = u[j] - u[i];
            w * d * d
        })
        .sum()
}

/// `Σ_x sqrt(eps + Σ_y w(x,y)(u(y) − u(x))²) − N·sqrt(eps)`.
pub fn nltv_energy(u: &Image, g: &NlGraph, eps: f64) -> Result<f64> {
    g.check_dims(u)?;
    let data = u.data();
    let base = eps.sqrt();
    Ok((0..data.len())
        .map(|i| (eps + local_rho_sq(data, g, i)).sqrt() - base)
        .sum())
}

/// Result of [`nltv_prox_traced`].
#[derive(Debug, Clone)]
pub struct ProxOutcome {
    pub u: Image,
    /// Composite energy of the starting point followed by every accepted
    /// iterate.
    pub energies: Vec<f64>,
    pub iterations: usize,
}

/// Gauss–Seidel sweeps per frozen set of conductivities.
const SWEEPS: usize = 3;

pub fn nltv_prox(
    v: &Image,
    g: &NlGraph,
    mu: f64,
    params: &NlParams,
    max_iters: usize,
    tol: f64,
) -> Result<Image> {
    nltv_prox_traced(v, g, mu, params, max_iters, tol).map(|o| o.u)
}

/// Lagged-diffusivity minimization of `nltv_energy(u) + (mu/2)‖u − v‖²`,
/// starting from `v`.
///
/// Freezing `ρ` turns the energy into a quadratic majorizer whose normal
/// equations are `(mu I + L_c) u = mu v` with edge conductivity
/// `c = w (1/ρ(x) + 1/ρ(y))`; Gauss–Seidel sweeps on it therefore never
/// raise the true energy. Each iterate is also shifted to the mean of `v`,
/// which can only lower the fidelity term. An iterate that nevertheless
/// raises the energy (rounding) is rejected and the loop stops.
pub fn nltv_prox_traced(
    v: &Image,
    g: &NlGraph,
    mu: f64,
    params: &NlParams,
    max_iters: usize,
    tol: f64,
) -> Result<ProxOutcome> {
    if !(mu > 0.0) {
        return Err(Error::invalid(format!("prox weight mu must be positive, got {mu}")));
    }
    g.check_dims(v)?;
    let eps = params.sqrt_epsilon;
    let n = v.len();
    let vd = v.data();
    let v_mean = v.mean();
    let energy = |u: &Image| -> Result<f64> {
        let fid: f64 = u.data().iter().zip(vd).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(nltv_energy(u, g, eps)? + 0.5 * mu * fid)
    };

    let mut u = v.clone();
    let mut energies = vec![energy(&u)?];
    let mut iterations = 0;
    let mut inv_rho = vec![0.0; n];
    for _ in 0..max_iters {
        let cur = u.data();
        for (i, r) in inv_rho.iter_mut().enumerate() {
            *r = 1.0 / (eps + local_rho_sq(cur, g, i)).sqrt();
        }
        let mut next = cur.to_vec();
        for _ in 0..SWEEPS {
            for i in 0..n {
                let mut num = mu * (vd[i] - next[i]);
                let mut den = mu;
                for (j, w) in g.neighbors(i) {
                    let c = w * (inv_rho[i] + inv_rho[j]);
                    num += c * (next[j] - next[i]);
                    den += c;
                }
                next[i] += num / den;
            }
        }
        let shift = v_mean - next.iter().sum::<f64>() / n as f64;
        if shift != 0.0 {
            next.iter_mut().for_each(|x| *x += shift);
        }
        let cand = Image::from_raw(v.width(), v.height(), next);
        let e = energy(&cand)?;
        if !e.is_finite() {
            return Err(Error::NonFinite {
                stage: "nltv prox".into(),
            });
        }
        if e > *energies.last().expect("seeded") {
            break;
        }
        let change = cand.zip_map(&u, |a, b| a - b)?.norm();
        let scale = u.norm();
        u = cand;
        energies.push(e);
        iterations += 1;
        let rel = if scale > 0.0 { change / scale } else { change };
        if rel < tol {
            break;
        }
    }
    Ok(ProxOutcome {
        u,
        energies,
        iterations,
    })
}
