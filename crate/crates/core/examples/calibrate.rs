use dwi_denoise::recon::*;
use dwi_denoise::sim::*;
use std::time::Instant;

fn main() {
    let n: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(128);
    let p = generate_phantom(&PhantomSpec::prostate_like((n, n), 0)).unwrap();
    let cfg = AcquisitionConfig::default();
    let t = Instant::now();
    let s = calibrate_noise_sigma(&p, &cfg, 25.0).unwrap();
    println!("sigma = {s:.5} ({:.2}s)", t.elapsed().as_secs_f64());
    for seed in 0..3 {
        let p = generate_phantom(&PhantomSpec::prostate_like((n, n), seed)).unwrap();
        let acq = simulate_acquisition(&p, &AcquisitionConfig { noise_sigma: s, seed, ..cfg }).unwrap();
        let c = reconstruct_case(&acq, seed, 0).unwrap();
        let r = prostate_apparent_snr(&c.reference_hb, &p).unwrap();
        let q = prostate_apparent_snr(&c.noisy_hb, &p).unwrap();
        let nm: f64 = c.noisy_hb.data().iter().zip(c.reference_hb.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            / c.reference_hb.data().iter().map(|b| b * b).sum::<f64>();
        println!("seed {seed}: ref snr {r:.2} noisy snr {q:.2} nmse {:.2}%", 100.0 * nm);
    }
}
