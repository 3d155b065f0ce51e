//! A right/medium camera field warps a textured clip; cross-correlation
//! recovers the per-frame displacement.

use videostudio::camera::{clip_frame, estimate_translation, synthesize_flow, warp_clip, SpeedTable};
use videostudio::numeric::Tensor;
use videostudio::rng::Rng;
use videostudio::script::CameraMove;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (c, f, h, w) = (3, 8, 24, 24);
    let mut rng = Rng::new(5);
    let still = Tensor::randn(&[c, 1, h, w], 1.0, &mut rng);
    let mut data = Vec::with_capacity(c * f * h * w);
    for ch in 0..c {
        let plane = &still.data()[ch * h * w..(ch + 1) * h * w];
        (0..f).for_each(|_| data.extend_from_slice(plane));
    }
    let clip = Tensor::new(vec![c, f, h, w], data)?;
    let camera: CameraMove = "right, medium".parse()?;
    let field = synthesize_flow(camera, f, h, w, &SpeedTable::default());
    let warped = warp_clip(&clip, &field)?;
    let first = clip_frame(&warped, 0)?;
    for k in 1..f {
        let d = estimate_translation(&first, &clip_frame(&warped, k)?, 8)?;
        println!("frame {k}: expected ({:.1}, 0), measured {d:?}", field.frame(k)[0]);
    }
    Ok(())
}
