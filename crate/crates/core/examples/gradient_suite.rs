//! Finite-difference gradient checks of every trainable block.

use videostudio::pipeline::diagnostics::gradient_suite;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let start = std::time::Instant::now();
    let cases = gradient_suite(0)?;
    for c in &cases {
        println!("{:16} {:>5} params  {:.2e}  {}", c.block, c.params, c.max_rel_err, c.shape);
    }
    let worst = cases.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    println!("{} cases, worst {worst:.2e}, {:.1?}", cases.len(), start.elapsed());
    Ok(())
}
