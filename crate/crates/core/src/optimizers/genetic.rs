//! Generational genetic algorithm over grid indices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Ctx, Engine};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elites: usize,
    pub tournament: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self { population: 10, generations: 10, crossover_rate: 0.5, mutation_rate: 0.3, elites: 1, tournament: 2 }
    }
}

/// Swaps the tails of two genomes after position `cut`.
pub fn one_point_crossover<T: Clone>(a: &[T], b: &[T], cut: usize) -> (Vec<T>, Vec<T>) {
    let mut c1 = a[..cut].to_vec();
    c1.extend_from_slice(&b[cut..]);
    let mut c2 = b[..cut].to_vec();
    c2.extend_from_slice(&a[cut..]);
    (c1, c2)
}

/// Tournament with replacement; ties go to the lower index.
fn tournament(fitness: &[f64], size: usize, rng: &mut impl Rng) -> usize {
    let mut best = rng.random_range(0..fitness.len());
    for _ in 1..size.max(1) {
        let c = rng.random_range(0..fitness.len());
        if fitness[c] > fitness[best] || (fitness[c] == fitness[best] && c < best) {
            best = c;
        }
    }
    best
}

/// Produces the next generation from an evaluated one.
///
/// `sizes[d]` is the number of grid values of dimension `d`.
pub fn ga_evolve(
    population: &[Vec<usize>],
    fitness: &[f64],
    sizes: &[usize],
    cfg: &GaConfig,
    rng: &mut impl Rng,
) -> Vec<Vec<usize>> {
    let p = cfg.population;
    let k = sizes.len();
    let mut order: Vec<usize> = (0..population.len()).collect();
    order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]));
    let mut next: Vec<Vec<usize>> = order.iter().take(cfg.elites.min(p)).map(|&i| population[i].clone()).collect();
    while next.len() < p {
        let a = &population[tournament(fitness, cfg.tournament, rng)];
        let b = &population[tournament(fitness, cfg.tournament, rng)];
        let (mut c1, mut c2) = if k > 1 && rng.random::<f64>() < cfg.crossover_rate {
            one_point_crossover(a, b, rng.random_range(1..k))
        } else {
            (a.clone(), b.clone())
        };
        for child in [&mut c1, &mut c2] {
            for (g, &n) in child.iter_mut().zip(sizes) {
                if rng.random::<f64>() < cfg.mutation_rate {
                    *g = rng.random_range(0..n);
                }
            }
        }
        next.push(c1);
        if next.len() < p {
            next.push(c2);
        }
    }
    next
}

#[derive(Debug)]
pub(crate) struct Genetic {
    cfg: GaConfig,
    population: Vec<Vec<usize>>,
    generation: usize,
}

impl Genetic {
    pub(crate) fn new(cfg: GaConfig) -> Self {
        Self { cfg, population: Vec::new(), generation: 0 }
    }
}

impl Engine for Genetic {
    fn propose(&mut self, ctx: &mut Ctx<'_>) -> Vec<Vec<f64>> {
        if self.population.is_empty() {
            self.population = (0..self.cfg.population.max(1)).map(|_| ctx.space.random_indices(ctx.rng)).collect();
        }
        self.population.iter().map(|g| ctx.space.encode_indices(g)).collect()
    }

    fn observe(&mut self, values: &[f64], ctx: &mut Ctx<'_>) {
        self.generation += 1;
        if self.finished() {
            return;
        }
        let sizes: Vec<usize> = ctx.space.dims().iter().map(|d| d.len()).collect();
        self.population = ga_evolve(&self.population, values, &sizes, &self.cfg, ctx.rng);
    }

    fn finished(&self) -> bool {
        self.generation >= self.cfg.generations
    }
}
