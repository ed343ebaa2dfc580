//! Central finite-difference check of the backbone's analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::Model;
use crate::domain::RotationClass;
use crate::error::Result;
use crate::losses::{total_loss, total_loss_with_grad, LossConfig, StageMasks};
use crate::nn::Tensor;

#[derive(Debug, Clone)]
pub struct GradSample {
    pub param: String,
    /// Position of the tensor in [`Model::visit_params`] order.
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    /// `|a - n| / max(|a|, |n|, floor)`. The floor keeps parameters whose
    /// true gradient is ~0 from dividing noise by noise.
    pub fn relative_error(&self, floor: f64) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(floor);
        (self.analytic - self.numeric).abs() / scale
    }
}

/// Fixed inputs for a gradient check. Dropout draws come from `dropout_seed`
/// and are reset before every forward pass so all evaluations see the same
/// mask.
pub struct GradProblem<'a> {
    pub input: &'a Tensor<f64>,
    pub labels: &'a [RotationClass],
    pub masks: Option<&'a StageMasks<f64>>,
    pub loss: &'a LossConfig,
    pub dropout_seed: u64,
}

impl GradProblem<'_> {
    fn loss(&self, model: &mut Model<f64>) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.dropout_seed);
        let (out, _) = model.forward_train(self.input, &mut rng)?;
        Ok(total_loss(&out, self.labels, self.masks, self.loss)?.total)
    }

    fn analytic(&self, model: &mut Model<f64>) -> Result<Vec<(String, Vec<f64>)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.dropout_seed);
        model.zero_grad();
        let (out, tape) = model.forward_train(self.input, &mut rng)?;
        let (_, grads) = total_loss_with_grad(&out, self.labels, self.masks, self.loss)?;
        model.backward(&tape, &grads.dlogits, &grads.dfeatures);
        let mut all = Vec::new();
        model.visit_params(&mut |name, p| all.push((name.to_string(), p.grad.clone())));
        Ok(all)
    }
}

fn nudge(model: &mut Model<f64>, tensor: usize, index: usize, delta: f64) {
    let mut k = 0;
    model.visit_params(&mut |_, p| {
        if k == tensor {
            p.value[index] += delta;
        }
        k += 1;
    });
}

/// Compares analytic and central-difference gradients on `count` parameter
/// entries drawn uniformly (without replacement) from the whole model.
/// Every parameter tensor contributes at least one entry when `count`
/// allows it.
pub fn check_gradients(
    model: &mut Model<f64>,
    problem: &GradProblem<'_>,
    count: usize,
    step: f64,
    seed: u64,
) -> Result<Vec<GradSample>> {
    let grads = problem.analytic(model)?;
    let offsets: Vec<usize> = grads
        .iter()
        .scan(0, |acc, (_, g)| {
            let start = *acc;
            *acc += g.len();
            Some(start)
        })
        .collect();
    let total: usize = grads.iter().map(|(_, g)| g.len()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut picks: Vec<(usize, usize)> = Vec::new();
    if count >= grads.len() {
        for (t, (_, g)) in grads.iter().enumerate() {
            picks.push((t, sample(&mut rng, g.len(), 1).index(0)));
        }
    }
    let rest = count.saturating_sub(picks.len()).min(total);
    for flat in sample(&mut rng, total, rest).into_iter() {
        let t = offsets.partition_point(|&o| o <= flat) - 1;
        let pick = (t, flat - offsets[t]);
        if !picks.contains(&pick) {
            picks.push(pick);
        }
    }

    let mut out = Vec::with_capacity(picks.len());
    for (t, i) in picks {
        out.push(GradSample {
            param: grads[t].0.clone(),
            tensor: t,
            index: i,
            analytic: grads[t].1[i],
            numeric: central_difference(model, problem, t, i, step)?,
        });
    }
    Ok(out)
}

/// `(L(w + h) - L(w - h)) / 2h` for one parameter entry; the model is
/// restored afterwards.
pub fn central_difference(
    model: &mut Model<f64>,
    problem: &GradProblem<'_>,
    tensor: usize,
    index: usize,
    step: f64,
) -> Result<f64> {
    nudge(model, tensor, index, step);
    let plus = problem.loss(model)?;
    nudge(model, tensor, index, -2.0 * step);
    let minus = problem.loss(model)?;
    nudge(model, tensor, index, step);
    Ok((plus - minus) / (2.0 * step))
}
