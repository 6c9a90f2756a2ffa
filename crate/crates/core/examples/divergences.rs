// The f-divergence generators and their nonnegative conjugates.

use anyhow::Result;
use tabular_dice::divergence::{conjugate_pair_check, FGenerator, GeneratorKind};

pub fn run_example() -> Result<()> {
    let grid: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.1).collect();
    for kind in GeneratorKind::ALL {
        let g = FGenerator::new(kind);
        println!(
            "{:<9} f(0)={:<8.4} f'(0+)={:<8.3} f*₀(0)={:.4} f*₀'(1)={:.4} fenchel gap on grid {:.2e}",
            g.name(),
            g.f(0.0),
            g.f_prime_at_zero_plus(),
            g.f_star0(0.0),
            g.f_star0_prime(1.0),
            conjugate_pair_check(&g, &grid)
        );
    }
    let kl = FGenerator::new(GeneratorKind::Kl);
    println!("KL conjugate argmax at y=2: {:.6} (e^(y-1) = {:.6})", kl.conjugate_argmax(2.0), (1.0f64).exp());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
