use super::{Ctx, Engine};

/// Uniform sampling over the grid, one point per ask.
#[derive(Debug)]
pub(crate) struct RandomSearch;

impl Engine for RandomSearch {
    fn propose(&mut self, ctx: &mut Ctx<'_>) -> Vec<Vec<f64>> {
        let idx = ctx.space.random_indices(ctx.rng);
        vec![ctx.space.encode_indices(&idx)]
    }

    fn observe(&mut self, _values: &[f64], _ctx: &mut Ctx<'_>) {}
}
