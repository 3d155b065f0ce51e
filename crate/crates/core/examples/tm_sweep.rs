//! Camera displacement against the intervention step: for each T_m the
//! measured shift of every decoded frame, its error and frame consistency.
//! Optional arguments: prior variance, then DDIM eta.

use videostudio::pipeline::diagnostics::{error_non_increasing, tm_sweep, DisplacementStudy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let mut study = DisplacementStudy::default();
    if let Some(&v) = args.first() {
        study.video_var = v;
    }
    if let Some(&eta) = args.get(1) {
        study.sampler.eta = eta;
    }
    let reports = tm_sweep(&study, &[1, 5, 20])?;
    println!("prior variance {}, eta {}", study.video_var, study.sampler.eta);
    for r in &reports {
        println!(
            "T_m {:>2}: measured {:?}  max err {:.2}  mean err {:.2}  frame consistency {:.2}",
            r.t_m, r.measured, r.max_error, r.mean_error, r.frame_consistency
        );
    }
    println!("error non-increasing in T_m: {}", error_non_increasing(&reports));
    Ok(())
}
