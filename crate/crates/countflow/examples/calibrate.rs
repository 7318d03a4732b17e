use std::time::Instant;

use countflow::eval;
use countflow::net::{NetConfig, RateNetwork};
use countflow::rng::stream_rng;
use countflow::sampler::{self, SampleConfig};
use countflow::sim::{self, ConditionalTaskSpec};
use countflow::train::{train, TrainConfig};
use countflow::{CountVector, CouplingKind};

fn main() {
    let t0 = Instant::now();
    let spec = ConditionalTaskSpec::default_task();
    let k = spec.n_classes();
    let lo = [0u64, 0, 0];
    let hi = [30u64, 30, 30];

    let (target, labels) = sim::make_conditional_task(&spec, 4000, &mut stream_rng(500, 2)).unwrap();
    let source = sim::sample_discrete_uniform_source(target.len(), &lo, &hi, &mut stream_rng(500, 1)).unwrap();
    let max_count = source.iter().chain(target.iter()).flat_map(|s| s.iter().copied()).max().unwrap();
    println!("n={} max_count={max_count}", target.len());

    let net_cfg = NetConfig {
        dim: 3,
        hidden_widths: vec![32, 32, 34 - 2],
        n_conditions: k,
        condition_embed_width: 8,
        time_embed_frequencies: 8,
        count_scale: 1.0 / max_count as f64,
    };
    let mut net = RateNetwork::new(net_cfg, &mut stream_rng(500, 10)).unwrap();
    let config = TrainConfig {
        batch_size: 256,
        n_steps: 12_000,
        lr: 1e-3,
        coupling_kind: CouplingKind::Independent,
        cfg_dropout: 0.1,
        seed: 500,
        ..Default::default()
    };
    train(&mut net, &source, None, &target, Some(&labels), &config).unwrap();
    println!("train: {:.0}s ({} params)", t0.elapsed().as_secs_f64(), net.count_params());

    // held-out reference, binned by class
    let (ref_data, ref_labels) = sim::make_conditional_task(&spec, 2000, &mut stream_rng(500, 3)).unwrap();
    let true_bins: Vec<Vec<CountVector>> = (0..k)
        .map(|c| ref_data.iter().zip(ref_labels.iter()).filter(|(_, &l)| l == c).map(|(s, _)| s.clone()).collect())
        .collect();
    let active = eval::active_set(&ref_data, 0.01);

    for &w in &[0.0f64, 1.0, 2.0] {
        let t1 = Instant::now();
        let mut gen_bins = Vec::new();
        for c in 0..k {
            let x0s = sim::sample_discrete_uniform_source(1000, &lo, &hi, &mut stream_rng(500, 40 + c as u64)).unwrap();
            let cfg = SampleConfig {
                n_steps: 200,
                guidance_scale: w,
                condition: Some(c),
                ..Default::default()
            };
            let (gen, _) = sampler::simulate_batch(&net, &x0s, &cfg, 600 + c as u64).unwrap();
            gen_bins.push(gen);
        }
        let report = eval::conditional_metrics(&true_bins, &gen_bins, &active).unwrap();
        println!(
            "w={w}: {:.0}s rmse_mu={:.4} rmse_var={:.4} rmse_zero={:.4} cov_f={:.4} contrast={:.4}",
            t1.elapsed().as_secs_f64(),
            report.rmse_mu, report.rmse_var, report.rmse_zero, report.cov_frobenius, report.contrast
        );
    }
    println!("total: {:.0}s", t0.elapsed().as_secs_f64());
}
