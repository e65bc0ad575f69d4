//! Trains the toy conditional noise predictor on synthetic phantoms, then
//! saves and reloads it.
//!
//! ```text
//! cargo run --release --example train_toy
//! ```

use reld::diffusion::NoiseSchedule;
use reld::experiment::phantom_training_set;
use reld::image::Shape;
use reld::prior::{train_toy_score, Codec, ToyNet, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let shape = Shape::gray(32, 32);
    let codec = Codec::block_transform(shape, 4, 2)?;
    let schedule = NoiseSchedule::linear(50, 0.05, 0.5)?;
    let data = phantom_training_set(&codec, 60, 4, 0.25, 1)?;
    println!("{} training pairs, latent length {}", data.len(), codec.latent_len());

    let config = TrainConfig {
        steps: 2000,
        learning_rate: 3e-3,
        groups: codec.latent_len() / codec.group_len(),
        ..TrainConfig::default()
    };
    let (net, report) = train_toy_score(&data, &schedule, &config)?;
    for (i, chunk) in report.loss_trace.chunks(250).enumerate() {
        let avg = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!("steps {:5}-{:5}  loss {avg:.4}", i * 250 + 1, i * 250 + chunk.len());
    }
    println!(
        "held-out loss {:.4} -> {:.4}",
        report.initial_eval_loss, report.final_eval_loss
    );

    let path = std::env::temp_dir().join("reld_toynet_example.txt");
    net.save(&path)?;
    let back = ToyNet::load(&path)?;
    assert_eq!(back.params(), net.params());
    println!("saved and reloaded {} parameters from {}", net.params().len(), path.display());
    Ok(())
}
