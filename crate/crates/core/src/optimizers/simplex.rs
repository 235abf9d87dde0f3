//! Nelder-Mead and Parallel Rank Order over the unit hypercube.
//!
//! Both keep `k + 1` vertices, maximize, and clamp every probe into the cube.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Ctx, Engine};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimplexConfig {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Axis offset of the initial vertices.
    pub initial_step: f64,
    /// Vertex spread below which the simplex is rebuilt.
    pub degenerate_below: f64,
    /// Radius of the rebuilt simplex around the incumbent.
    pub restart_radius: f64,
}

impl Default for SimplexConfig {
    fn default() -> Self {
        Self {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            initial_step: 0.15,
            degenerate_below: 1e-6,
            restart_radius: 0.1,
        }
    }
}

fn clamp_unit(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|c| c.clamp(0.0, 1.0)).collect()
}

/// `origin + factor * (origin - x)`, clamped into the cube.
///
/// With `origin` the centroid and `x` the worst vertex this is the
/// Nelder-Mead reflection.
pub fn nm_reflect(origin: &[f64], x: &[f64], factor: f64) -> Vec<f64> {
    clamp_unit(origin.iter().zip(x).map(|(o, xi)| o + factor * (o - xi)).collect())
}

/// `from + factor * (to - from)`, clamped.
fn toward(from: &[f64], to: &[f64], factor: f64) -> Vec<f64> {
    clamp_unit(from.iter().zip(to).map(|(f, t)| f + factor * (t - f)).collect())
}

#[derive(Debug, Clone, Default)]
struct Simplex {
    verts: Vec<Vec<f64>>,
    vals: Vec<f64>,
}

impl Simplex {
    /// Random base vertex plus one vertex offset along each axis, wrapped into the cube.
    fn initial(k: usize, step: f64, rng: &mut impl Rng) -> Self {
        let base: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let mut verts = vec![base.clone()];
        for i in 0..k {
            let mut v = base.clone();
            v[i] += step;
            if v[i] >= 1.0 {
                v[i] -= 1.0;
            }
            verts.push(v);
        }
        Self { vals: vec![f64::NAN; k + 1], verts }
    }

    /// Incumbent plus `k` random vertices within `radius`.
    fn around(center: &[f64], value: f64, radius: f64, rng: &mut impl Rng) -> Self {
        let k = center.len();
        let mut verts = vec![center.to_vec()];
        let mut vals = vec![value];
        for _ in 0..k {
            verts.push(clamp_unit(center.iter().map(|c| c + rng.random_range(-radius..=radius)).collect()));
            vals.push(f64::NAN);
        }
        Self { verts, vals }
    }

    /// Vertex indices from best to worst; ties keep vertex order.
    fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.verts.len()).collect();
        idx.sort_by(|&a, &b| self.vals[b].total_cmp(&self.vals[a]));
        idx
    }

    fn best(&self) -> usize {
        self.order()[0]
    }

    fn centroid_without(&self, skip: usize) -> Vec<f64> {
        let k = self.verts[0].len();
        let mut c = vec![0.0; k];
        for (i, v) in self.verts.iter().enumerate() {
            if i != skip {
                for (cj, vj) in c.iter_mut().zip(v) {
                    *cj += vj;
                }
            }
        }
        let n = (self.verts.len() - 1) as f64;
        c.iter_mut().for_each(|cj| *cj /= n);
        c
    }

    fn spread(&self) -> f64 {
        let mut max: f64 = 0.0;
        for (i, a) in self.verts.iter().enumerate() {
            for b in &self.verts[i + 1..] {
                let d = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                max = max.max(d);
            }
        }
        max
    }

    fn unevaluated(&self) -> Vec<usize> {
        (0..self.vals.len()).filter(|&i| self.vals[i].is_nan()).collect()
    }
}

/// Rebuilds a collapsed simplex around its best vertex.
fn maybe_restart(s: &mut Simplex, cfg: &SimplexConfig, rng: &mut impl Rng) -> bool {
    if s.spread().is_nan() || s.spread() < cfg.degenerate_below {
        let b = s.best();
        *s = Simplex::around(&s.verts[b].clone(), s.vals[b], cfg.restart_radius, rng);
        true
    } else {
        false
    }
}

#[derive(Debug, Clone)]
enum NmPhase {
    /// Evaluating the listed vertices one at a time.
    Init(Vec<usize>),
    Reflect,
    Expand { worst: usize, centroid: Vec<f64>, xr: Vec<f64>, fr: f64 },
    Contract { worst: usize, fr: f64, inside: bool, xc: Vec<f64> },
    Shrink(Vec<usize>),
}

/// Classic sequential Nelder-Mead: one probe per ask.
#[derive(Debug)]
pub(crate) struct NelderMead {
    k: usize,
    cfg: SimplexConfig,
    simplex: Simplex,
    phase: NmPhase,
    probe: Vec<f64>,
}

impl NelderMead {
    pub(crate) fn new(k: usize, cfg: SimplexConfig) -> Self {
        Self { k, cfg, simplex: Simplex::default(), phase: NmPhase::Init(Vec::new()), probe: Vec::new() }
    }

    fn start_iteration(&mut self, rng: &mut impl Rng) {
        if maybe_restart(&mut self.simplex, &self.cfg, rng) {
            self.phase = NmPhase::Init(self.simplex.unevaluated());
        } else {
            self.phase = NmPhase::Reflect;
        }
    }
}

impl Engine for NelderMead {
    fn propose(&mut self, ctx: &mut Ctx<'_>) -> Vec<Vec<f64>> {
        if self.simplex.verts.is_empty() {
            self.simplex = Simplex::initial(self.k, self.cfg.initial_step, ctx.rng);
            self.phase = NmPhase::Init((0..=self.k).collect());
        }
        self.probe = match &mut self.phase {
            NmPhase::Init(todo) | NmPhase::Shrink(todo) => self.simplex.verts[todo[0]].clone(),
            NmPhase::Reflect => {
                let order = self.simplex.order();
                let worst = order[self.k];
                let centroid = self.simplex.centroid_without(worst);
                nm_reflect(&centroid, &self.simplex.verts[worst], self.cfg.reflection)
            }
            NmPhase::Expand { centroid, xr, .. } => toward(centroid, xr, self.cfg.expansion),
            NmPhase::Contract { xc, .. } => xc.clone(),
        };
        vec![self.probe.clone()]
    }

    fn observe(&mut self, values: &[f64], ctx: &mut Ctx<'_>) {
        let f = values[0];
        let probe = std::mem::take(&mut self.probe);
        match std::mem::replace(&mut self.phase, NmPhase::Reflect) {
            NmPhase::Init(mut todo) => {
                self.simplex.vals[todo.remove(0)] = f;
                if todo.is_empty() {
                    self.start_iteration(ctx.rng);
                } else {
                    self.phase = NmPhase::Init(todo);
                }
            }
            NmPhase::Shrink(mut todo) => {
                self.simplex.vals[todo.remove(0)] = f;
                if todo.is_empty() {
                    self.start_iteration(ctx.rng);
                } else {
                    self.phase = NmPhase::Shrink(todo);
                }
            }
            NmPhase::Reflect => {
                let order = self.simplex.order();
                let (best, second_worst, worst) = (order[0], order[self.k - 1], order[self.k]);
                let centroid = self.simplex.centroid_without(worst);
                let fr = f;
                if fr > self.simplex.vals[best] {
                    self.phase = NmPhase::Expand { worst, centroid, xr: probe, fr };
                } else if fr >= self.simplex.vals[second_worst] {
                    self.simplex.verts[worst] = probe;
                    self.simplex.vals[worst] = fr;
                    self.start_iteration(ctx.rng);
                } else {
                    let inside = fr < self.simplex.vals[worst];
                    let xc = if inside {
                        toward(&centroid, &self.simplex.verts[worst], self.cfg.contraction)
                    } else {
                        toward(&centroid, &probe, self.cfg.contraction)
                    };
                    self.phase = NmPhase::Contract { worst, fr, inside, xc };
                }
            }
            NmPhase::Expand { worst, xr, fr, .. } => {
                if f > fr {
                    self.simplex.verts[worst] = probe;
                    self.simplex.vals[worst] = f;
                } else {
                    self.simplex.verts[worst] = xr;
                    self.simplex.vals[worst] = fr;
                }
                self.start_iteration(ctx.rng);
            }
            NmPhase::Contract { worst, fr, inside, .. } => {
                let accept = if inside { f > self.simplex.vals[worst] } else { f >= fr };
                if accept {
                    self.simplex.verts[worst] = probe;
                    self.simplex.vals[worst] = f;
                    self.start_iteration(ctx.rng);
                } else {
                    let best = self.simplex.best();
                    let xb = self.simplex.verts[best].clone();
                    let mut todo = Vec::new();
                    for i in 0..=self.k {
                        if i != best {
                            self.simplex.verts[i] = toward(&xb, &self.simplex.verts[i], self.cfg.shrink);
                            self.simplex.vals[i] = f64::NAN;
                            todo.push(i);
                        }
                    }
                    self.phase = NmPhase::Shrink(todo);
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum ProPhase {
    Init,
    Reflect,
    Expand { reflected: Vec<Vec<f64>>, fr: Vec<f64> },
    Shrink,
}

/// Parallel Rank Order: every non-best vertex moves in one batch.
#[derive(Debug)]
pub(crate) struct ParallelRankOrder {
    k: usize,
    cfg: SimplexConfig,
    simplex: Simplex,
    phase: ProPhase,
    /// Vertex indices the current batch belongs to.
    targets: Vec<usize>,
    batch: Vec<Vec<f64>>,
}

impl ParallelRankOrder {
    pub(crate) fn new(k: usize, cfg: SimplexConfig) -> Self {
        Self { k, cfg, simplex: Simplex::default(), phase: ProPhase::Init, targets: Vec::new(), batch: Vec::new() }
    }

    fn next_step(&mut self, rng: &mut impl Rng) {
        if maybe_restart(&mut self.simplex, &self.cfg, rng) {
            self.phase = ProPhase::Init;
        } else {
            self.phase = ProPhase::Reflect;
        }
    }
}

impl Engine for ParallelRankOrder {
    fn propose(&mut self, ctx: &mut Ctx<'_>) -> Vec<Vec<f64>> {
        if self.simplex.verts.is_empty() {
            self.simplex = Simplex::initial(self.k, self.cfg.initial_step, ctx.rng);
            self.phase = ProPhase::Init;
        }
        let best = self.simplex.best();
        let xb = self.simplex.verts[best].clone();
        let others: Vec<usize> = (0..=self.k).filter(|&i| i != best).collect();
        let (targets, batch): (Vec<usize>, Vec<Vec<f64>>) = match &self.phase {
            ProPhase::Init => {
                let todo = self.simplex.unevaluated();
                let pts = todo.iter().map(|&i| self.simplex.verts[i].clone()).collect();
                (todo, pts)
            }
            ProPhase::Reflect => {
                let pts = others.iter().map(|&i| nm_reflect(&xb, &self.simplex.verts[i], self.cfg.reflection)).collect();
                (others, pts)
            }
            ProPhase::Expand { .. } => {
                let pts = others.iter().map(|&i| nm_reflect(&xb, &self.simplex.verts[i], self.cfg.expansion)).collect();
                (others, pts)
            }
            ProPhase::Shrink => {
                let pts = others.iter().map(|&i| toward(&xb, &self.simplex.verts[i], self.cfg.shrink)).collect();
                (others, pts)
            }
        };
        self.targets = targets;
        self.batch = batch.clone();
        batch
    }

    fn observe(&mut self, values: &[f64], ctx: &mut Ctx<'_>) {
        let batch = std::mem::take(&mut self.batch);
        let targets = std::mem::take(&mut self.targets);
        match std::mem::replace(&mut self.phase, ProPhase::Reflect) {
            ProPhase::Init => {
                for (&i, &v) in targets.iter().zip(values) {
                    self.simplex.vals[i] = v;
                }
                self.next_step(ctx.rng);
            }
            ProPhase::Reflect => {
                let fbest = self.simplex.vals[self.simplex.best()];
                let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if top > fbest {
                    self.phase = ProPhase::Expand { reflected: batch, fr: values.to_vec() };
                    self.targets = targets;
                } else if targets.iter().zip(values).any(|(&i, &v)| v > self.simplex.vals[i]) {
                    for ((&i, &v), x) in targets.iter().zip(values).zip(batch) {
                        if v > self.simplex.vals[i] {
                            self.simplex.verts[i] = x;
                            self.simplex.vals[i] = v;
                        }
                    }
                    self.next_step(ctx.rng);
                } else {
                    self.phase = ProPhase::Shrink;
                }
            }
            ProPhase::Expand { reflected, fr } => {
                for (j, &i) in targets.iter().enumerate() {
                    let (x, v) = if values[j] > fr[j] { (&batch[j], values[j]) } else { (&reflected[j], fr[j]) };
                    if v > self.simplex.vals[i] {
                        self.simplex.verts[i] = x.clone();
                        self.simplex.vals[i] = v;
                    }
                }
                self.next_step(ctx.rng);
            }
            ProPhase::Shrink => {
                for ((&i, &v), x) in targets.iter().zip(values).zip(batch) {
                    self.simplex.verts[i] = x;
                    self.simplex.vals[i] = v;
                }
                self.next_step(ctx.rng);
            }
        }
    }
}
