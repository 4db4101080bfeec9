//! Save a model with its threshold, load it back and show that the
//! on-disk form is stable after one round trip.

use c2ae::evt::compute_threshold;
use c2ae::nets::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, NetworkDef, OpenSetModel};
use c2ae::tensor::Activation;
use c2ae::train::ErrorSets;

fn main() -> c2ae::Result<()> {
    let mut model = OpenSetModel::new(NetworkDef::mlp(784, 6, &[512], 128, Activation::LeakyRelu { slope: 0.2 }), 1)?;
    let errors = ErrorSets {
        s_match: (1..=400).map(|i| (i as f64 / 100.0).sqrt()).collect(),
        s_nonmatch: (1..=400).map(|i| 1.5 + (i as f64 / 100.0).sqrt()).collect(),
    };
    model.threshold = Some(compute_threshold(&errors, 0.5)?);

    let dir = std::env::temp_dir().join(format!("c2ae-checkpoint-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.c2ae");
    save_checkpoint(&model, &path)?;
    let loaded = load_checkpoint(&path)?;
    println!("{} bytes at {}", std::fs::metadata(&path)?.len(), path.display());
    for (name, t) in loaded.named_params() {
        println!("  {name:<22} {:?}", t.shape());
    }
    println!("tau* survives: {}", loaded.threshold()?.tau_star == model.threshold()?.tau_star);

    // weights are stored in single precision
    let bytes = write_checkpoint(&loaded)?;
    let again = read_checkpoint(&bytes)?;
    println!("stable after one round trip: {}", again == loaded && write_checkpoint(&again)? == bytes);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
