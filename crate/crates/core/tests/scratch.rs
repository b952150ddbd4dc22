// Temporary calibration scratchpad; deleted before finalizing.
use std::sync::Arc;

use counterdyna_core::building_sim::{
    plant_step, BuildingEnv, EnvConfig, HeatPumpAction, PlantParams, EPISODE_LEN,
};
use counterdyna_core::dyna::{EpisodeBuffer, ExperienceStore};
use counterdyna_core::exogenous::{synthesize_series, SynthesisProfile};
use counterdyna_core::harness::controllers::{Controller, PiController};
use counterdyna_core::kpi_reward::{ComfortBand, RewardContext, RewardWeights};
use counterdyna_core::surrogate::{fit_building_model, CsmHyper};
use counterdyna_core::EnvState;

fn reward_ctx() -> RewardContext {
    RewardContext {
        weights: RewardWeights::default(),
        band: ComfortBand::default(),
        floor_area_m2: PlantParams::default().floor_area_m2,
        dt_hours: 1.0,
    }
}

fn collect_store(n_episodes: usize, pattern: &[usize]) -> ExperienceStore {
    let series = Arc::new(
        synthesize_series(5, (n_episodes + 1) * EPISODE_LEN + 16, &SynthesisProfile::default())
            .unwrap(),
    );
    let mut env =
        BuildingEnv::new(PlantParams::default(), series, reward_ctx(), EnvConfig::default())
            .unwrap();
    let mut store = ExperienceStore::default();
    for _ in 0..n_episodes {
        env.reset().unwrap();
        let first = env.clock().global_step.step;
        let mut transitions = Vec::with_capacity(EPISODE_LEN);
        for t in 0..EPISODE_LEN {
            let a = HeatPumpAction::from_index(pattern[t % pattern.len()]).unwrap();
            transitions.push(env.step(a).unwrap());
        }
        store.push_episode(EpisodeBuffer { first_global_step: first, transitions }).unwrap();
    }
    store
}

#[test]
#[ignore]
fn probe_building_fit() {
    let pattern = [1usize, 0, 0, 1, 0, 1, 1, 0];
    let store = collect_store(5, &pattern);
    let holdout = collect_store(6, &pattern);

    for (epochs, lr) in [(500usize, 0.001), (500, 0.003), (800, 0.003), (500, 0.01), (1000, 0.003)]
    {
        let t0 = std::time::Instant::now();
        let hyper = CsmHyper { epochs, lr, ..CsmHyper::fast() };
        let bm = fit_building_model(&store, &hyper, 3).unwrap();
        let secs = t0.elapsed().as_secs_f64();

        // One-step held-out RMSE.
        let mut sq = 0.0;
        let mut n = 0.0;
        for tr in holdout.episode(5).transitions.iter() {
            let pred = bm.predict_next_zone(tr.state.zone_temp_k, &tr.state.disturbances, tr.action);
            sq += (pred - tr.next_state.zone_temp_k).powi(2);
            n += 1.0;
        }
        let one_step = (sq / n).sqrt();

        // 24-step in-sample replay RMSE over all tiled windows.
        let mut sq = 0.0;
        let mut n = 0.0;
        for buffer in store.episodes() {
            let mut offset = 0;
            while offset + 24 <= buffer.transitions.len() {
                let mut zone = buffer.transitions[offset].state.zone_temp_k;
                for l in 0..24 {
                    let tr = &buffer.transitions[offset + l];
                    zone = bm.predict_next_zone(zone, &tr.state.disturbances, tr.action);
                    sq += (zone - tr.next_state.zone_temp_k).powi(2);
                    n += 1.0;
                }
                offset += 24;
            }
        }
        let rollout = (sq / n).sqrt();
        println!(
            "epochs {epochs} lr {lr}: one-step {one_step:.4} K, 24h replay {rollout:.4} K, {secs:.1} s"
        );
    }
}

#[test]
#[ignore]
fn probe_pi_gains() {
    let params = PlantParams::default();
    let target = ComfortBand::default().midpoint_k();
    for (kp, ki, lim) in [
        (1.0, 0.08, 20.0),
        (1.0, 0.15, 10.0),
        (2.0, 0.10, 10.0),
        (0.5, 0.20, 6.0),
        (1.0, 0.30, 5.0),
        (2.0, 0.25, 6.0),
        (0.8, 0.12, 8.0),
    ] {
        // Two ambient regimes: deep winter and mild shoulder season.
        for ambient in [265.15, 271.15, 280.15] {
            let mut c = PiController::new(target, kp, ki, lim, 1.0);
            let mut zone: f64 = 291.15;
            let mut history = Vec::new();
            for _ in 0..72 {
                let state = EnvState {
                    zone_temp_k: zone,
                    disturbances: counterdyna_core::DisturbanceVector {
                        time_enc: [0.0, 1.0, 0.0, 1.0],
                        ambient_forecast: [ambient; 7],
                        price_forecast: [0.1; 7],
                    },
                };
                let action = c.act(&state).unwrap();
                let (z, _) = plant_step(&params, zone, ambient, action, 3600.0).unwrap();
                zone = z;
                history.push(zone);
            }
            let mut worst_inst: f64 = 0.0;
            let mut worst_mean: f64 = 0.0;
            for end in 48..=72 {
                let day = &history[end - 24..end];
                let mean = day.iter().sum::<f64>() / 24.0 - target;
                worst_mean = worst_mean.max(mean.abs());
            }
            for &z in &history[24..] {
                worst_inst = worst_inst.max((z - target).abs());
            }
            println!(
                "kp {kp} ki {ki} lim {lim} ambient {ambient}: trailing-day mean err {worst_mean:.3} K, inst {worst_inst:.3} K"
            );
        }
    }
}

#[test]
#[ignore]
fn probe_golden() {
    use counterdyna_core::exogenous::STEPS_PER_YEAR;
    let series = synthesize_series(1, STEPS_PER_YEAR, &SynthesisProfile::default()).unwrap();
    let (mut amin, mut amax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut pmin, mut pmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..series.len() {
        amin = amin.min(series.ambient[i]);
        amax = amax.max(series.ambient[i]);
        pmin = pmin.min(series.price[i]);
        pmax = pmax.max(series.price[i]);
    }
    println!("GOLDEN amin {amin:?} amax {amax:?} pmin {pmin:?} pmax {pmax:?}");
}

#[test]
#[ignore]
fn probe_within_split() {
    let plant = PlantParams { hp_thermal_kw: 1e-9, ..PlantParams::default() };
    let series = Arc::new(
        synthesize_series(5, 3 * EPISODE_LEN + 16, &SynthesisProfile::default()).unwrap(),
    );
    let mut env = BuildingEnv::new(plant, series, reward_ctx(), EnvConfig::default()).unwrap();
    let mut all = Vec::new();
    let pattern = [1usize, 0, 0, 1, 0, 1, 1, 0];
    let mut first = None;
    for _ in 0..2 {
        env.reset().unwrap();
        if first.is_none() { first = Some(env.clock().global_step.step); }
        for t in 0..EPISODE_LEN {
            let a = HeatPumpAction::from_index(pattern[t % pattern.len()]).unwrap();
            all.push(env.step(a).unwrap());
        }
    }
    let train: Vec<_> = all.iter().enumerate().filter(|(i, _)| i % 4 != 3).map(|(_, t)| t.clone()).collect();
    let held: Vec<_> = all.iter().enumerate().filter(|(i, _)| i % 4 == 3).map(|(_, t)| t.clone()).collect();
    let mut store = ExperienceStore::default();
    store.push_episode(EpisodeBuffer { first_global_step: first.unwrap(), transitions: train }).unwrap();
    for (epochs, lr) in [(500usize, 0.001), (500, 0.003)] {
        let hyper = CsmHyper { epochs, lr, ..CsmHyper::fast() };
        let bm = fit_building_model(&store, &hyper, 3).unwrap();
        let mut sq = 0.0;
        for tr in &held {
            let p = bm.predict_next_zone(tr.state.zone_temp_k, &tr.state.disturbances, tr.action);
            sq += (p - tr.next_state.zone_temp_k).powi(2);
        }
        let rmse = (sq / held.len() as f64).sqrt();
        println!("SPLIT epochs {epochs} lr {lr}: within-period held-out one-step RMSE {rmse:.5} K");
    }
}

#[test]
#[ignore]
fn probe_train_mse() {
    use counterdyna_core::surrogate::{csm_input_features, Normalizer, CSM_INPUT_DIM};
    use counterdyna_core::neural::{fit_regression, Activation, FitConfig, Mlp};
    let plant = PlantParams { hp_thermal_kw: 1e-9, ..PlantParams::default() };
    let store = collect_store_with_probe(plant, 2, &[1, 0, 0, 1, 0, 1, 1, 0]);
    let mut raw = Vec::new();
    let mut targets = Vec::new();
    for tr in store.iter_env_transitions() {
        raw.push(csm_input_features(tr.state.zone_temp_k, &tr.state.disturbances, tr.action));
        targets.push(vec![tr.next_state.zone_temp_k - tr.state.zone_temp_k]);
    }
    let tmean = targets.iter().map(|t| t[0]).sum::<f64>() / targets.len() as f64;
    let tvar = targets.iter().map(|t| (t[0]-tmean).powi(2)).sum::<f64>() / targets.len() as f64;
    println!("target mean {tmean:.4} var {tvar:.5}");
    let norm = Normalizer::fit(&raw).unwrap();
    let inputs: Vec<Vec<f64>> = raw.iter().map(|r| norm.normalize(r)).collect();
    for (epochs, lr) in [(100usize, 0.001), (500, 0.001), (500, 0.003), (2000, 0.003), (500, 0.01)] {
        let mut rng = counterdyna_core::seeding::child_rng(3, "building-model-init");
        let mut net = Mlp::new(&[CSM_INPUT_DIM, 64, 64, 1], Activation::LeakyRelu, &mut rng).unwrap();
        let cfg = FitConfig { epochs, lr, batch_size: 256, seed: 99 };
        let mse = fit_regression(&mut net, &inputs, &targets, &cfg).unwrap();
        println!("TRAINMSE epochs {epochs} lr {lr}: {mse:.6}");
    }
}

fn collect_store_with_probe(plant: PlantParams, n_episodes: usize, pattern: &[usize]) -> ExperienceStore {
    let series = Arc::new(
        synthesize_series(5, (n_episodes + 1) * EPISODE_LEN + 16, &SynthesisProfile::default()).unwrap(),
    );
    let mut env = BuildingEnv::new(plant, series, reward_ctx(), EnvConfig::default()).unwrap();
    let mut store = ExperienceStore::default();
    for _ in 0..n_episodes {
        env.reset().unwrap();
        let first = env.clock().global_step.step;
        let mut transitions = Vec::with_capacity(EPISODE_LEN);
        for t in 0..EPISODE_LEN {
            let a = HeatPumpAction::from_index(pattern[t % pattern.len()]).unwrap();
            transitions.push(env.step(a).unwrap());
        }
        store.push_episode(EpisodeBuffer { first_global_step: first, transitions }).unwrap();
    }
    store
}

#[test]
#[ignore]
fn probe_five_week_holdout() {
    let plant = PlantParams { hp_thermal_kw: 1e-9, ..PlantParams::default() };
    for n in [2usize, 5, 8] {
        let store = collect_store_with_probe(plant, n, &[1, 0, 0, 1, 0, 1, 1, 0]);
        let holdout = collect_store_with_probe(plant, n + 1, &[1, 0, 0, 1, 0, 1, 1, 0]);
        for lr in [0.001, 0.003] {
            let hyper = CsmHyper { lr, ..CsmHyper::fast() };
            let bm = fit_building_model(&store, &hyper, 3).unwrap();
            let mut sq = 0.0;
            let mut cnt = 0.0;
            for tr in holdout.episode(n).transitions.iter() {
                let p = bm.predict_next_zone(tr.state.zone_temp_k, &tr.state.disturbances, tr.action);
                sq += (p - tr.next_state.zone_temp_k).powi(2);
                cnt += 1.0;
            }
            println!("HOLDOUT n={n} lr={lr}: next-week one-step RMSE {:.5} K", (sq / cnt).sqrt());
        }
    }
}

#[test]
#[ignore]
fn probe_criterion7() {
    use counterdyna_core::harness::csm_eval::evaluate_csm;
    use counterdyna_core::surrogate::{fit_reward_model, Csm, RewardDecomposition};
    // Full plant, 5 training weeks, duty-cycling pattern similar to what a
    // mid-training policy produces.
    let plant = PlantParams::default();
    let store = collect_store_with_probe(plant, 5, &[1, 0, 0, 1, 0, 1, 1, 0]);
    let series = Arc::new(
        synthesize_series(5, 6 * EPISODE_LEN + 16, &SynthesisProfile::default()).unwrap(),
    );
    let ctx = reward_ctx();
    for lr in [0.001] {
        let hyper = CsmHyper { lr, ..CsmHyper::fast() };
        let csm = Csm {
            building: fit_building_model(&store, &hyper, 3).unwrap(),
            reward: fit_reward_model(&store, RewardDecomposition::CostOnly, &ctx).unwrap(),
        };
        let mut rng = counterdyna_core::seeding::child_rng(17, "c7");
        let report = evaluate_csm(&csm, &store, &plant, &series, &ctx, 24, 20, 0.3, &mut rng).unwrap();
        println!(
            "C7 lr={lr}: in-sample rmse {:.4} mae {:.4}; oos rmse {:.4} mae {:.4}; reward R2 {:.4}",
            report.in_sample_rmse_k, report.in_sample_mae_k,
            report.out_sample_rmse_k, report.out_sample_mae_k, report.reward_r2
        );
    }
}

#[test]
#[ignore]
fn probe_one_cd5_run() {
    use counterdyna_core::harness::config::Config;
    use counterdyna_core::harness::experiments::build_series;
    use counterdyna_core::harness::periods::find_test_periods;
    use counterdyna_core::dyna::{align_training_window, run_counter_dyna, run_model_free};

    let mut config = Config::default();
    config.apply_fast_profile();
    let series = build_series(&config).unwrap();
    let (peak, _) = find_test_periods(&series, config.experiment.typical_start_day).unwrap();

    let t0 = std::time::Instant::now();
    let start = align_training_window(5, EPISODE_LEN, peak.start_step).unwrap();
    let mut env = BuildingEnv::new(config.plant, series.clone(), config.reward_context(), config.env_config(start)).unwrap();
    let cd = run_counter_dyna(&mut env, &config.schedule(5).unwrap(), &config.ppo_hyper(), &config.csm_settings(), 1).unwrap();
    let cd_secs = t0.elapsed().as_secs_f64();

    let t0 = std::time::Instant::now();
    let mut env = BuildingEnv::new(config.plant, series.clone(), config.reward_context(), config.env_config(start)).unwrap();
    let mf = run_model_free(&mut env, 5, &config.ppo_hyper(), 1).unwrap();
    let mf_secs = t0.elapsed().as_secs_f64();

    println!("CD-5 took {cd_secs:.1} s, MF-5 took {mf_secs:.1} s");
    for (c, m) in cd.learning_curve.iter().zip(&mf.learning_curve) {
        println!("episode {}: CD mean reward {:.3} (discomfort {:.1} cost {:.4}), MF mean reward {:.3}",
            c.episode, c.mean_reward, c.kpis.discomfort_kh, c.kpis.cost_eur_m2, m.mean_reward);
    }
}

#[test]
#[ignore]
fn probe_collapse() {
    use counterdyna_core::harness::config::Config;
    use counterdyna_core::harness::experiments::build_series;
    use counterdyna_core::harness::periods::find_test_periods;
    use counterdyna_core::dyna::{align_training_window, run_counter_dyna, run_model_free};
    use counterdyna_core::ppo::UpdateSource;

    let mut config = Config::default();
    config.apply_fast_profile();
    let series = build_series(&config).unwrap();
    let (peak, _) = find_test_periods(&series, config.experiment.typical_start_day).unwrap();
    let start = align_training_window(10, EPISODE_LEN, peak.start_step).unwrap();

    for (label, seed, dyna) in [("CD", 2u64, true), ("CD", 5, true), ("MF", 5, false)] {
        let mut env = BuildingEnv::new(config.plant, series.clone(), config.reward_context(), config.env_config(start)).unwrap();
        let result = if dyna {
            run_counter_dyna(&mut env, &config.schedule(10).unwrap(), &config.ppo_hyper(), &config.csm_settings(), seed).unwrap()
        } else {
            run_model_free(&mut env, 10, &config.ppo_hyper(), seed).unwrap()
        };
        println!("---- {label}-10 seed {seed} ----");
        for rec in &result.learning_curve {
            println!("  episode {}: mean reward {:.3}, discomfort {:.1} Kh", rec.episode, rec.mean_reward, rec.kpis.discomfort_kh);
        }
        // Entropy trajectory: real updates only, plus min entropy anywhere.
        let real_entropies: Vec<String> = result.updates.iter()
            .filter(|u| u.source == UpdateSource::Real)
            .map(|u| format!("{:.3}", u.entropy)).collect();
        let min_entropy = result.updates.iter().map(|u| u.entropy).fold(f64::INFINITY, f64::min);
        let max_vloss = result.updates.iter().map(|u| u.value_loss).fold(0.0f64, f64::max);
        println!("  real-update entropies: {real_entropies:?}; min entropy anywhere {min_entropy:.4}; max value loss {max_vloss:.1}");
    }
}
