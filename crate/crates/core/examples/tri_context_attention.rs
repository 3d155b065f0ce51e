//! The image-stage block: text, foreground and background cross-attention
//! summed and refined by self-attention. With the foreground and background
//! output projections zeroed it reduces to the text-only block.

use videostudio::cond::tri_context::single_context_forward;
use videostudio::cond::{ContextBundle, TriContextBlock};
use videostudio::numeric::Tensor;
use videostudio::rng::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = Rng::new(3);
    let (c, tokens) = (8, 16);
    let mut block = TriContextBlock::new(c, c, 8, 2, &mut rng)?;
    let x = Tensor::randn(&[tokens, c], 1.0, &mut rng);
    let bundle = ContextBundle {
        y_t: Tensor::randn(&[4, c], 1.0, &mut rng),
        y_f: Tensor::randn(&[6, c], 1.0, &mut rng),
        y_b: Tensor::randn(&[3, c], 1.0, &mut rng),
    };
    let full = block.forward(&x, &bundle)?;
    println!("full block changes x by {:.4} (max abs)", full.max_abs_diff(&x));

    block.ca2.zero_output();
    block.ca3.zero_output();
    let reduced = block.forward(&x, &bundle)?;
    let baseline = single_context_forward(&x, &bundle.y_t, &block.ca1, &block.sa)?;
    println!("zeroed fg/bg branches vs text-only block: {:.2e}", reduced.max_abs_diff(&baseline));
    Ok(())
}
