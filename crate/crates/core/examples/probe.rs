// Scratch probe for experiment kernels (not part of the deliverable API).
use scorelab_core::experiments::*;
use scorelab_core::train::AlphaMode;
use std::time::Instant;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    if which == "gl" {
        for seed in 0..5 {
            let t0 = Instant::now();
            let run = gaussian_linear_compare(10, 10_000, 200, 5.0, 5.0, 50, AlphaMode::Lemma, seed)
                .unwrap();
            let (dl, bl) = run.late_means();
            println!(
                "seed {seed}: win {:.3} late dsm {:.4e} bsm {:.4e} ratio {:.3} ({:.1?})",
                run.bsm_win_fraction(),
                dl,
                bl,
                bl / dl,
                t0.elapsed()
            );
        }
    } else if which == "sweep" {
        let t0 = Instant::now();
        let dims = [8usize, 16, 32, 64];
        let settings = SweepSettings::default();
        let pts = dimension_sweep(&dims, &[1, 2, 3], &settings).unwrap();
        let prof = scaled_error_profile(&pts, &dims);
        for (d, e) in dims.iter().zip(&prof) {
            println!("d={d}: scaled {e:.6e}");
        }
        let ds: Vec<f64> = dims.iter().map(|&d| d as f64).collect();
        let slope = scorelab_core::analysis::loglog_slope(&ds, &prof).unwrap();
        println!("slope = {slope:.4} ({:.1?})", t0.elapsed());
        for p in &pts {
            println!(" d={} seed={} raw={:.4e} params={}", p.d, p.seed, p.time_avg_error, p.n_params);
        }
    }
}
