//! Macro-F1 of the tail-model threshold against the Naive, CLS and CLS+DEC
//! baselines as unknown Gaussians join the test set.
//!
//! Usage: ablation_openness [N_PER_CLASS] [SEEDS...]

use c2ae::data::{gen_toy, ToyKind};
use c2ae::eval::{run_fmeasure_protocol, toy_fmeasure_protocol};

fn main() -> c2ae::Result<()> {
    let args: Vec<u64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("arguments must be unsigned integers"))
        .collect();
    let n = args.first().copied().unwrap_or(500) as usize;
    let seeds = if args.len() > 1 { args[1..].to_vec() } else { vec![7, 8, 9] };
    let data = gen_toy(ToyKind::FourGauss, n, 7)?;
    let result = run_fmeasure_protocol(&data, &toy_fmeasure_protocol(seeds))?;
    println!("unknowns  openness  p_u     proposed  naive   cls     cls+dec");
    for l in &result.levels {
        println!(
            "{:>8}  {:>8.4}  {:.4}  {:.4}    {:.4}  {:.4}  {:.4}",
            l.unknown_classes, l.openness, l.p_u, l.proposed, l.naive, l.cls, l.cls_dec
        );
    }
    Ok(())
}
