//! Reduced-scale MNIST AUROC protocol: 6 known / 4 unknown digits drawn per
//! trial, 2000 training images, MLP encoder.
//!
//! Usage: mnist_auroc [IMAGES LABELS] [TRIALS] [SEED]
//! Defaults to the bundled 4,200-image subset.

use std::time::Instant;

use c2ae::data::load_idx;
use c2ae::eval::{mnist_protocol, run_auroc_protocol};

fn main() -> c2ae::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/testdata");
    let (images, labels) = match args.as_slice() {
        [i, l, ..] => (i.clone(), l.clone()),
        _ => (
            format!("{dir}/mnist-subset-images-idx3-ubyte.gz"),
            format!("{dir}/mnist-subset-labels-idx1-ubyte.gz"),
        ),
    };
    let trials = args.get(2).map_or(Ok(3), |s| s.parse()).expect("TRIALS must be an integer");
    let seed = args.get(3).map_or(Ok(1), |s| s.parse()).expect("SEED must be an integer");
    let data = load_idx(&images, &labels)?;
    let mut protocol = mnist_protocol(seed);
    protocol.trials = trials;
    let start = Instant::now();
    let result = run_auroc_protocol(&data, &protocol)?;
    for t in &result.trials {
        println!(
            "seed {} known {:?} unknown {:?}: AUROC {:.4}, closed-set accuracy {:.4}",
            t.seed, t.known, t.unknown, t.auroc, t.closed_accuracy
        );
    }
    println!("mean AUROC {:.4} in {:.1?}", result.mean_auroc, start.elapsed());
    Ok(())
}
