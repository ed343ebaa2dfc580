mod common;

use mbsr::gradcheck::{check_gradients, GradProblem};
use mbsr::losses::{ChannelMode, ClassificationForm, LossConfig, MseReduction, StageSelection};

fn run(loss: LossConfig, seed: u64) -> f64 {
    let batch = common::random_batch(8, 32, 32, seed);
    let mut model = common::tiny_model_f64(seed);
    let problem = GradProblem {
        input: &batch.input,
        labels: &batch.labels,
        masks: Some(&batch.masks),
        loss: &loss,
        dropout_seed: seed,
    };
    let samples = check_gradients(&mut model, &problem, 240, 1e-4, seed).unwrap();
    assert!(samples.len() >= 200);
    let mut worst = 0.0f64;
    for s in &samples {
        let e = s.relative_error(1e-6);
        if e > 1e-3 {
            eprintln!(
                "{} [{}]: analytic {:e} numeric {:e} rel {:e}",
                s.param, s.index, s.analytic, s.numeric, e
            );
        }
        worst = worst.max(e);
    }
    worst
}

#[test]
fn cross_entropy_with_stages_2_3() {
    let worst = run(LossConfig::default(), 11);
    assert!(worst < 1e-3, "worst relative error {worst:e}");
}

#[test]
fn literal_probability_sum_reduction_channel_mean() {
    let loss = LossConfig {
        form: ClassificationForm::LiteralProbability,
        mse_reduction: MseReduction::Sum,
        channel_mode: ChannelMode::Mean,
        stages: StageSelection::new(&[1, 4]).unwrap(),
        mse_weight: 0.5,
    };
    let worst = run(loss, 12);
    assert!(worst < 1e-3, "worst relative error {worst:e}");
}
