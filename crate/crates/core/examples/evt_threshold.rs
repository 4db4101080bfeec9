//! Tail fits and the optimal threshold on synthetic reconstruction errors,
//! swept over the prior probability of unknowns.

use c2ae::evt::{compute_threshold, TailSide};
use c2ae::train::ErrorSets;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

fn main() -> c2ae::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let matched = LogNormal::new(0.0, 0.35).expect("valid parameters");
    let nonmatched = LogNormal::new(0.9, 0.3).expect("valid parameters");
    let errors = ErrorSets {
        s_match: (0..1000).map(|_| matched.sample(&mut rng)).collect(),
        s_nonmatch: (0..1000).map(|_| nonmatched.sample(&mut rng)).collect(),
    };

    let tm = compute_threshold(&errors, 0.5)?;
    for (name, fit) in [("match", &tm.fit_match), ("non-match", &tm.fit_nonmatch)] {
        // the non-match tail is fitted on negated errors
        let onset = if fit.side == TailSide::RightTailOfNegatedNonmatch { -fit.u } else { fit.u };
        println!(
            "{name:>9} tail: onset {onset:.4}, shape {:+.4}, scale {:.4}, {:.1}% of samples",
            fit.zeta,
            fit.mu,
            100.0 * fit.exceed_frac
        );
    }
    println!("search interval [{:.4}, {:.4}]", tm.search_lo, tm.search_hi);
    println!("  p_u   tau*     P(error)");
    for i in 0..=10 {
        let p_u = i as f64 / 10.0;
        let t = compute_threshold(&errors, p_u)?;
        println!("  {p_u:.1}   {:.4}   {:.4}", t.tau_star, t.error_probability(t.tau_star, p_u));
    }
    Ok(())
}
