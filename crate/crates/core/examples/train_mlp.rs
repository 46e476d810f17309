//! Train the 3x200 ReLU MLP with dropout and weighted cross-entropy on a
//! toy three-class problem.
//!
//!     cargo run --release --example train_mlp

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rsnlab::nn::{class_weights, mlp_predict, mlp_train, Samples, TrainConfig};

fn clusters(n_per_class: &[usize], dim: usize, seed: u64) -> Samples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..n_per_class.len())
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let n: usize = n_per_class.iter().sum();
    let mut x = DMatrix::zeros(dim, n);
    let mut y = Vec::with_capacity(n);
    for (c, &count) in n_per_class.iter().enumerate() {
        for _ in 0..count {
            let j = y.len();
            for d in 0..dim {
                let e: f64 = StandardNormal.sample(&mut rng);
                x[(d, j)] = centers[c][d] + 0.5 * e;
            }
            y.push(c);
        }
    }
    Samples::new(x, y)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // imbalanced classes, so inverse-frequency weights matter
    let train = clusters(&[120, 40, 20], 64, 1);
    let val = clusters(&[30, 10, 5], 64, 1);
    let w = class_weights(&train.class_counts(3))?;
    println!("class weights {:?}", w.0);

    let cfg = TrainConfig {
        learning_rate: 1e-2,
        epochs: 20,
        ..TrainConfig::default()
    };
    let (model, hist) = mlp_train(&train, Some(&val), &cfg, &w)?;
    for (e, (loss, acc)) in hist.train_loss.iter().zip(&hist.train_accuracy).enumerate().step_by(4) {
        println!("epoch {:>2}: loss {loss:.4} train acc {acc:.3}", e + 1);
    }
    println!("validation accuracy {:.3}", hist.val_accuracy.last().copied().flatten().unwrap_or(f64::NAN));
    let (class, p) = mlp_predict(&model, &train.x.column(0).iter().copied().collect::<Vec<_>>())?;
    println!("first example -> class {class}, p = {p:.3?}");
    println!("{} parameters, trained in {:.2} s", model.param_count(), hist.train_duration_s);
    Ok(())
}
