//! Match and non-match reconstruction errors of a trained toy model,
//! written as an SVG plot and a CSV table.
//!
//! Usage: error_histogram [OUT_DIR]

use c2ae::data::{gen_toy, split_known_unknown, SplitSpec, ToyKind};
use c2ae::eval::{toy_train_config, ArchSpec, ErrorHistogram, HISTOGRAM_BINS};
use c2ae::train::{collect_error_sets, error_rng, train_model};

fn main() -> c2ae::Result<()> {
    let out_dir = std::env::args().nth(1).unwrap_or_else(|| ".".into());
    let seed = 7;
    let data = gen_toy(ToyKind::FourGauss, 500, seed)?;
    let spec = SplitSpec {
        known_classes: vec![0, 1],
        unknown_classes: vec![2, 3],
        train_fraction: 0.8,
        seed,
    };
    let split = split_known_unknown(&data, &spec)?;
    let (model, _) = train_model(ArchSpec::Toy.network(2, 2)?, &split.train_known, &toy_train_config(seed))?;
    let errors = collect_error_sets(&model, &split.train_known, &mut error_rng(seed))?;
    let hist = ErrorHistogram::new(&errors, HISTOGRAM_BINS)?;

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "mean match error {:.4}, mean non-match error {:.4}, overlap {:.4}",
        mean(&errors.s_match),
        mean(&errors.s_nonmatch),
        hist.overlap_coefficient()
    );
    let dir = std::path::Path::new(&out_dir);
    std::fs::write(dir.join("errors.svg"), hist.to_svg())?;
    std::fs::write(dir.join("errors.csv"), hist.to_csv())?;
    println!("wrote {0}/errors.svg and {0}/errors.csv", dir.display());
    Ok(())
}
