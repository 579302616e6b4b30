use eamac_core::model::{update_aoi, update_energy};
use eamac_core::sim::{replication_rng, ChannelEvent, Network};
use eamac_core::{run_simulation, AdraEnergyGate, PolicyConfig, ProbFunction, SimConfig, SystemParams};
use proptest::prelude::*;

fn policies() -> Vec<PolicyConfig> {
    vec![
        PolicyConfig::NoPolicy,
        PolicyConfig::ThresholdOnly { alpha: 0.35, tau: 0.8 },
        PolicyConfig::Proposed {
            alpha: 0.3,
            tau: 0.85,
            prob: ProbFunction::InvSqrtD,
        },
        PolicyConfig::Proposed {
            alpha: 0.2,
            tau: 0.5,
            prob: ProbFunction::Linear { c: 2.0 },
        },
        PolicyConfig::Proposed {
            alpha: 0.5,
            tau: 0.6,
            prob: ProbFunction::Elliptical { c: 1.2 },
        },
        PolicyConfig::Adra {
            age_threshold: 20,
            p: 0.1,
            energy_gate: AdraEnergyGate::TxCost,
        },
    ]
}

/// Replays the network slot by slot against the scalar update rules.
fn check_trace(params: SystemParams, policy: PolicyConfig, slots: usize, seed: u64) {
    let mut net = Network::new(params, &policy);
    let mut rng = replication_rng(seed, 0);
    for _ in 0..slots {
        let before = net.states().to_vec();
        let out = net.step(&mut rng);
        let tx = net.last_transmitters().to_vec();
        let n_tx = tx.iter().filter(|&&t| t).count();
        match out.event {
            ChannelEvent::Idle => assert_eq!(n_tx, 0),
            ChannelEvent::Success { device } => {
                assert_eq!(n_tx, 1);
                assert!(tx[device]);
            }
            ChannelEvent::Collision { transmitters } => {
                assert!(n_tx >= 2);
                assert_eq!(transmitters as usize, n_tx);
            }
        }
        let mut discards = 0;
        for (i, (b, a)) in before.iter().zip(net.states()).enumerate() {
            let success = matches!(out.event, ChannelEvent::Success { device } if device == i);
            let (aoi, dropped) = update_aoi(b.aoi, success, &params);
            assert_eq!(a.aoi, aoi);
            discards += u32::from(dropped);
            assert!((1..=params.aoi_max).contains(&a.aoi));
            // harvest is not observable, so accept either outcome of it
            let lo = update_energy(*b, false, tx[i], &params).unwrap();
            let hi = update_energy(*b, true, tx[i], &params).unwrap();
            assert!(a.energy == lo || a.energy == hi);
            assert!(a.energy <= params.battery_capacity);
            if policy.respects_energy_floor() {
                assert!(a.energy >= params.energy_floor);
            }
        }
        assert_eq!(out.discards, discards);
    }
}

#[test]
fn traces_follow_the_update_rules() {
    let params = SystemParams::default().with_devices(20);
    for (k, policy) in policies().into_iter().enumerate() {
        check_trace(params, policy, 3_000, k as u64);
    }
}

#[test]
fn small_battery_traces() {
    let params = SystemParams {
        num_devices: 6,
        battery_capacity: 14,
        tx_cost: 3,
        energy_floor: 2,
        harvest_prob: 0.3,
        aoi_max: 12,
    };
    for (k, policy) in policies().into_iter().enumerate() {
        let policy = match policy {
            PolicyConfig::Adra { p, energy_gate, .. } => PolicyConfig::Adra {
                age_threshold: 4,
                p,
                energy_gate,
            },
            other => other,
        };
        check_trace(params, policy, 5_000, 100 + k as u64);
    }
}

#[test]
fn devices_are_exchangeable() {
    let cfg = SimConfig {
        num_slots: 200_000,
        num_replications: 2,
        seed: 9,
        ..SimConfig::new(
            SystemParams::default().with_devices(10),
            PolicyConfig::Proposed {
                alpha: 0.0,
                tau: 0.0,
                prob: ProbFunction::Constant { k: 0.05 },
            },
        )
    };
    let r = run_simulation(&cfg).unwrap();
    for a in &r.per_device_aaoi {
        assert!((a - r.aaoi).abs() / r.aaoi < 0.05, "{a} vs {}", r.aaoi);
    }
}

#[test]
fn no_policy_age_grows_with_network_size() {
    let mut last = 0.0;
    for d in [1, 2, 5, 10, 30] {
        let cfg = SimConfig {
            num_slots: 50_000,
            num_replications: 2,
            seed: 4,
            ..SimConfig::new(SystemParams::default().with_devices(d), PolicyConfig::NoPolicy)
        };
        let a = run_simulation(&cfg).unwrap().aaoi;
        assert!(a > last, "D = {d}: {a} <= {last}");
        last = a;
    }
}

#[test]
fn reruns_are_identical_and_seeds_matter() {
    let cfg = SimConfig {
        num_slots: 20_000,
        num_replications: 3,
        seed: 11,
        ..SimConfig::new(
            SystemParams::default().with_devices(30),
            PolicyConfig::Proposed {
                alpha: 0.4,
                tau: 0.7,
                prob: ProbFunction::Elliptical { c: 1.2 },
            },
        )
    };
    let a = run_simulation(&cfg).unwrap();
    assert_eq!(a, run_simulation(&cfg).unwrap());
    let b = run_simulation(&SimConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.replication_aaoi, b.replication_aaoi);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn reserve_policies_never_dip_below_the_floor(
        d in 1u32..20,
        alpha in 0.0f64..1.0,
        tau in 0.0f64..1.0,
        c in 0.1f64..3.0,
        seed in any::<u64>(),
    ) {
        let params = SystemParams::default().with_devices(d);
        for policy in [
            PolicyConfig::ThresholdOnly { alpha, tau },
            PolicyConfig::Proposed { alpha, tau, prob: ProbFunction::Linear { c } },
            PolicyConfig::Proposed { alpha, tau, prob: ProbFunction::Elliptical { c } },
        ] {
            let cfg = SimConfig {
                num_slots: 5_000,
                warmup_slots: 0,
                num_replications: 1,
                seed,
                ..SimConfig::new(params, policy)
            };
            let r = run_simulation(&cfg).unwrap();
            prop_assert!(r.min_energy_observed >= params.energy_floor);
            prop_assert!(r.aaoi >= 1.0 && r.aaoi <= f64::from(params.aoi_max));
            prop_assert!(r.counts.successes + r.counts.collisions + r.counts.idle == 5_000);
        }
    }
}
