//! Recover a small tanh teacher from its input-output map and compare the
//! result with the teacher.
//!
//! `cargo run --release --example recover_shallow`

use expclust::activation::Activation;
use expclust::eval::metrics;
use expclust::pipeline::{expand_and_cluster, PipelineConfig, Widths};
use expclust::teacher::{gen_dataset, sample_shallow_teacher, TeacherSpec};
use expclust::trainer::TrainConfig;

fn main() -> expclust::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let teacher = sample_shallow_teacher(&TeacherSpec::shallow(2, 3, Activation::Tanh, 7))?;
    let data = gen_dataset(&teacher, 4000, 7)?;
    let cfg = PipelineConfig {
        activation: Activation::Tanh,
        n_students: 8,
        gamma: 0.5,
        widths: Widths::Rho { rho: 3, base: vec![3] },
        ensemble: TrainConfig::monotone(300),
        ..Default::default()
    };
    let result = expand_and_cluster(&data, &cfg, 1)?;
    let m = metrics(&result, &teacher, &data)?;
    println!("teacher sizes   {:?}", m.teacher_sizes);
    println!("recovered sizes {:?}", m.recovered_sizes);
    println!("rmse            {:.3e}", m.rmse);
    if let Some(layers) = &m.layers {
        for (l, layer) in layers.iter().enumerate() {
            println!(
                "layer {l}: {}",
                serde_json::to_string(layer).expect("metrics serialise")
            );
        }
    }
    Ok(())
}
