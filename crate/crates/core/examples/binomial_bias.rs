//! Expected bag bias of an attribute-blind retriever, exact and simulated.

use fairsift::analysis::{expected_bias_binomial, monte_carlo_expected_bias};

fn main() -> fairsift::Result<()> {
    println!("{:>5} {:>6} {:>10} {:>10} {:>8}", "k", "alpha", "exact", "simulated", "se");
    for k in [10, 100, 1000] {
        for alpha in [0.5, 0.6, 0.8] {
            let exact = expected_bias_binomial(k, alpha)?;
            let mc = monte_carlo_expected_bias(k, alpha, 20_000, 1)?;
            println!("{k:>5} {alpha:>6} {exact:>10.5} {:>10.5} {:>8.5}", mc.mean, mc.std_error);
        }
    }
    let k = 100.0_f64;
    println!("large-k approximation at alpha 0.5, k 100: {:.5}", (2.0 / (std::f64::consts::PI * k)).sqrt());
    Ok(())
}
