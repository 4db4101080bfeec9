//! Train on two of four Gaussian blobs, fit the threshold and report how
//! the held-out known and unknown samples are decided.
//!
//! Usage: toy_open_set [SEED] [P_U]

use c2ae::data::{gen_toy, split_known_unknown, SplitSpec, ToyKind};
use c2ae::eval::{evaluate_model, fit_threshold, toy_train_config, ArchSpec};
use c2ae::infer::batch_inference;
use c2ae::train::train_model;

fn main() -> c2ae::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(7, |a| a.parse().expect("SEED must be an integer"));
    let p_u: f64 = args.next().map_or(0.5, |a| a.parse().expect("P_U must be a number"));

    let data = gen_toy(ToyKind::FourGauss, 500, seed)?;
    let spec = SplitSpec {
        known_classes: vec![0, 1],
        unknown_classes: vec![2, 3],
        train_fraction: 0.8,
        seed,
    };
    let split = split_known_unknown(&data, &spec)?;
    let (mut model, trace) = train_model(ArchSpec::Toy.network(2, 2)?, &split.train_known, &toy_train_config(seed))?;
    println!(
        "stage 1 loss {:.4} -> {:.4}, stage 2 loss {:.4} -> {:.4}",
        trace.stage1_loss[0],
        trace.stage1_loss.last().unwrap(),
        trace.stage2.total[0],
        trace.stage2.total.last().unwrap()
    );
    model.split = Some(spec);
    model.threshold = Some(fit_threshold(&model, &split.train_known, p_u, seed)?);
    println!("tau* = {:.5} at p_u = {p_u}", model.threshold()?.tau_star);

    for (name, part) in [("known", &split.test_known), ("unknown", &split.test_unknown)] {
        let preds = batch_inference(&model, &part.to_tensor()?)?;
        let accepted = preds.iter().filter(|p| p.decision.is_known()).count();
        println!("{name:>7} test samples: {accepted} of {} accepted as known", preds.len());
    }
    let report = evaluate_model(&model, &split, "auroc")?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}
