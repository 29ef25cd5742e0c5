use std::sync::Arc;

use fedsynth::distill::DistillConfig;
use fedsynth::fedsim::{FedConfig, FullGradientCodec, Simulation, SyntheticCodec, Transport};
use fedsynth::harness::{load_data, RunConfig};
use fedsynth::nn::ArchDescriptor;
use fedsynth::reverse::{client_restore, fit_server_payload, run_double_distill, ReverseConfig, SeedAnchor};
use fedsynth::rng::Streams;

fn blobs(seed: u64) -> RunConfig {
    RunConfig {
        master_seed: seed,
        ..RunConfig::default()
    }
}

fn fed(cohort: usize, rounds: usize, transport: Transport) -> FedConfig {
    FedConfig {
        num_clients: 20,
        cohort_size: cohort,
        rounds,
        transport,
        ..FedConfig::default()
    }
}

fn simulation(seed: u64, fed: FedConfig, arch: &[usize], synthetic: Option<DistillConfig>) -> Simulation {
    let (train, test) = load_data(&blobs(seed)).unwrap();
    let codec: Arc<dyn fedsynth::fedsim::UplinkCodec> = match synthetic {
        Some(cfg) => Arc::new(SyntheticCodec {
            cfg,
            include_etas: false,
        }),
        None => Arc::new(FullGradientCodec),
    };
    Simulation::new(fed, ArchDescriptor::mlp(arch).unwrap(), &train, test, Streams::new(seed), codec, 1).unwrap()
}

fn quick_distill() -> DistillConfig {
    DistillConfig {
        distill_steps: 20,
        ..DistillConfig::default()
    }
}

#[test]
fn baseline_is_unaffected_by_other_runs() {
    let a = simulation(11, fed(5, 4, Transport::FullGradient), &[2, 16, 3], None).run().unwrap();
    simulation(11, fed(5, 2, Transport::Synthetic), &[2, 16, 3], Some(quick_distill()))
        .run()
        .unwrap();
    let b = simulation(11, fed(5, 4, Transport::FullGradient), &[2, 16, 3], None).run().unwrap();
    // wall time is the only field allowed to differ, and it is not serialized
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn uploads_are_counted_per_completed_client() {
    let rows = simulation(12, fed(4, 2, Transport::Synthetic), &[2, 16, 3], Some(quick_distill()))
        .run()
        .unwrap();
    for r in rows {
        // 50 points of 2 features + 3 label entries, plus H
        assert_eq!(r.upload_floats, (4 - r.failures) as u64 * 251);
        assert_eq!(r.distill_losses.len(), 4 - r.failures);
        assert_eq!(r.decode_mismatches, 0);
    }
}

#[test]
fn reverse_fit_after_one_round_is_close() {
    let mut sim = simulation(13, fed(5, 1, Transport::FullGradient), &[2, 16, 3], None);
    let anchor = SeedAnchor {
        init_seed: sim.streams().init_seed(),
        arch: sim.server().arch().clone(),
    };
    sim.run_round(0).unwrap();
    let cfg = ReverseConfig {
        num_batches: 5,
        batch_size: 10,
        ..ReverseConfig::default()
    };
    let streams = *sim.streams();
    let fit = fit_server_payload(&anchor, sim.server(), &cfg, &DistillConfig::default(), |i| streams.reverse_fit(0, i))
        .unwrap();
    assert!(fit.report.relative_error < 0.3, "relative error {}", fit.report.relative_error);
    let restored = client_restore(&anchor, &fit.payload).unwrap();
    let direct: f64 = restored
        .values()
        .iter()
        .zip(sim.server().values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    assert!((direct - fit.report.chosen_distance).abs() <= 1e-12 * direct.max(1.0));
    let server_view = anchor.expand().step(&fit.decoded).unwrap();
    assert!(restored.values().iter().zip(server_view.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn more_seeds_mean_fewer_failures() {
    // Deliberately starved fits: one point, two meta-steps.
    let starved = |num_seeds| ReverseConfig {
        num_batches: 1,
        batch_size: 1,
        synth_epochs: 2,
        distill_steps: 2,
        num_seeds,
        ..ReverseConfig::default()
    };
    let failures = |num_seeds| -> usize {
        (0..10)
            .map(|seed| {
                let mut sim = simulation(100 + seed, fed(2, 6, Transport::Synthetic), &[2, 16, 3], Some(quick_distill()));
                run_double_distill(&mut sim, &starved(num_seeds), &DistillConfig::default(), false)
                    .unwrap()
                    .iter()
                    .map(|r| r.failures)
                    .sum::<usize>()
            })
            .sum()
    };
    let (one, ten) = (failures(1), failures(10));
    assert!(one > ten, "1 seed: {one} failures, 10 seeds: {ten}");
}
