// Temporary calibration harness; prints MLP fit accuracy per delta and
// rough stage timings at acceptance scale. Deleted before release.

use botsub::graph::LabelSet;
use botsub::mlp::{accuracy, select_rows, train_mlp, MlpConfig};
use botsub::synth::{generate, SynthConfig};
use std::time::Instant;

fn fit_accuracy(features: &botsub::features::FeatureMatrix, labels: &LabelSet, model: &botsub::mlp::MlpModel) -> f64 {
    let ids: Vec<usize> = labels.train.iter().chain(labels.val.iter()).copied().collect();
    let x = select_rows(features.matrix().view(), &ids);
    let pred = model.predict_labels(x.view()).unwrap();
    let truth: Vec<u8> = ids.iter().map(|&v| labels.label(v).unwrap().as_u8()).collect();
    accuracy(&pred, &truth)
}

#[test]
#[ignore]
fn calibrate() {
    for delta in [0.0, 0.4, 0.8, 1.2, 1.6] {
        let t0 = Instant::now();
        let mut cfg = SynthConfig::mixed_pattern(2000, 1);
        cfg.delta = delta;
        let (_, features, labels) = generate(&cfg).unwrap();
        let gen_time = t0.elapsed();
        let t1 = Instant::now();
        let (model, log) = train_mlp(
            &features,
            &labels,
            &MlpConfig { hidden: 64, epochs: 300, lr: 0.3, seed: 1, ..MlpConfig::default() },
        )
        .unwrap();
        let fit = fit_accuracy(&features, &labels, &model);
        let test_x = select_rows(features.matrix().view(), &labels.test);
        let pred = model.predict_labels(test_x.view()).unwrap();
        let truth: Vec<u8> = labels.test.iter().map(|&v| labels.label(v).unwrap().as_u8()).collect();
        let test = accuracy(&pred, &truth);
        println!(
            "delta={delta:.1} fit={fit:.3} test={test:.3} epochs={} gen={:.1}s mlp={:.1}s",
            log.len(),
            gen_time.as_secs_f64(),
            t1.elapsed().as_secs_f64()
        );
    }
}
