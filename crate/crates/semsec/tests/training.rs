//! Seeded end-to-end behavior of the five training stages at desk scale:
//! stage-by-stage quality relations, freeze contracts across the whole
//! run, reward bookkeeping and schedule invariants.

use semsec::channel::ChannelConfig;
use semsec::codec::{generate_images, CodeShape, TextCorpus};
use semsec::ddpg::{compute_reward, DdpgAgent, DdpgConfig};
use semsec::rng::{derive_seed, derive_stream};
use semsec::trainer::*;

fn small_setup(seed: u64) -> (SemComSystem, Streams) {
    let channel_cfg = ChannelConfig::new(4, 4, 1.0, 10.0, 10.0).unwrap();
    let shape = CodeShape::new(1, 16, 16, 3, 4).unwrap();
    let arch = ArchConfig {
        codec_hidden: 48,
        tje_hidden: 24,
        gje_hidden: 24,
        vocab_size: 512,
        embed_dim: 8,
        l_t: 8,
    };
    let corpus = TextCorpus::bundled(arch.vocab_size).unwrap();
    let sys = SemComSystem::new(channel_cfg, shape, &arch, 16, 16, 3, corpus, 32, seed).unwrap();
    (sys, Streams::new(seed))
}

fn small_agent(seed: u64) -> DdpgAgent {
    DdpgAgent::new(
        DdpgConfig {
            actor_hidden: vec![32, 32],
            critic_hidden: vec![32, 32],
            batch_size: 4,
            warmup: 4,
            ..DdpgConfig::default()
        },
        seed,
    )
    .unwrap()
}

#[test]
fn stage1_beats_constant_mean_baseline() {
    let seed = 11;
    let (mut sys, mut streams) = small_setup(seed);
    let mut gen = derive_stream(seed, "data/gen");
    let train = generate_images(300, 16, 16, 3, &mut gen);
    let test = generate_images(100, 16, 16, 3, &mut gen);
    let plan = StagePlan {
        stage1_epochs: 25,
        ..StagePlan::scaled(0.05, 2, 2)
    };
    stage1(&mut sys, &mut streams, &train, &plan).unwrap();
    let report = evaluate(&mut sys, &test, TxMode::SemanticOnly, 1.0, 99).unwrap();
    let baseline = mse_to_psnr(test.constant_mean_mse());
    assert!(
        report.psnr_leg_db > baseline + 3.0,
        "stage-1 PSNR {:.2} dB vs constant-mean {:.2} dB",
        report.psnr_leg_db,
        baseline
    );
}

#[test]
fn stage2_stays_within_three_db_of_stage1() {
    let seed = 12;
    let budget = 15;

    // Stage-1-only run.
    let (mut sys_a, mut streams_a) = small_setup(seed);
    let mut gen = derive_stream(seed, "data/gen");
    let train = generate_images(300, 16, 16, 3, &mut gen);
    let test = generate_images(100, 16, 16, 3, &mut gen);
    let plan_a = StagePlan {
        stage1_epochs: budget,
        ..StagePlan::scaled(0.05, 2, 2)
    };
    stage1(&mut sys_a, &mut streams_a, &train, &plan_a).unwrap();
    let after1 = evaluate(&mut sys_a, &test, TxMode::SemanticOnly, 1.0, 99).unwrap();

    // Same budget of stage 2 on top of the same stage-1 system.
    let plan_b = StagePlan {
        stage2_epochs: budget,
        ..plan_a.clone()
    };
    let mut streams_b = streams_a;
    let mut sys_b = sys_a;
    stage2(&mut sys_b, &mut streams_b, &train, &plan_b).unwrap();
    let after2 = evaluate(&mut sys_b, &test, TxMode::IdentitySum, 1.0, 99).unwrap();

    assert!(
        (after1.psnr_leg_db - after2.psnr_leg_db).abs() < 3.0,
        "stage 1 {:.2} dB vs stage 2 {:.2} dB",
        after1.psnr_leg_db,
        after2.psnr_leg_db
    );
}

#[test]
fn stage3_eve_learns_but_stays_behind_bob() {
    let seed = 13;
    let (mut sys, mut streams) = small_setup(seed);
    let mut gen = derive_stream(seed, "data/gen");
    let train = generate_images(300, 16, 16, 3, &mut gen);
    let test = generate_images(100, 16, 16, 3, &mut gen);
    let plan = StagePlan {
        stage1_epochs: 12,
        stage2_epochs: 12,
        stage3_epochs: 12,
        ..StagePlan::scaled(0.05, 2, 2)
    };
    stage1(&mut sys, &mut streams, &train, &plan).unwrap();
    stage2(&mut sys, &mut streams, &train, &plan).unwrap();
    let after2 = evaluate(&mut sys, &test, TxMode::IdentitySum, 1.0, 99).unwrap();

    let logs = stage3(&mut sys, &mut streams, &train, &plan).unwrap();
    // Eve's loss goes down over the stage.
    assert!(
        logs.last().unwrap().loss < logs.first().unwrap().loss,
        "eve loss went {:.5} -> {:.5}",
        logs.first().unwrap().loss,
        logs.last().unwrap().loss
    );
    let after3 = evaluate(&mut sys, &test, TxMode::IdentitySum, 1.0, 99).unwrap();
    // The security premise: jamming hurts the late-trained eavesdropper
    // more than the co-trained legitimate decoder.
    assert!(
        after3.psnr_eve_db < after2.psnr_leg_db,
        "eve {:.2} dB vs bob {:.2} dB",
        after3.psnr_eve_db,
        after2.psnr_leg_db
    );
}

#[test]
fn stage4_schedule_and_reward_bookkeeping() {
    let seed = 14;
    let (mut sys, mut streams) = small_setup(seed);
    let mut gen = derive_stream(seed, "data/gen");
    let train = generate_images(120, 16, 16, 3, &mut gen);
    let eval_mini = generate_images(32, 16, 16, 3, &mut gen);
    let plan = StagePlan::scaled(0.02, 6, 2);
    let mut agent = small_agent(seed);

    let sd2_before = sys.sd2.params().to_vec();
    let (policy, epochs) = stage4(
        &mut sys,
        &mut streams,
        &mut agent,
        &train,
        &eval_mini,
        &plan,
        derive_seed(seed, "eval"),
    )
    .unwrap();

    // Transition count equals T; each decision step runs K epochs.
    assert_eq!(policy.decisions.len(), 6);
    assert_eq!(agent.buffer.len(), 6);
    assert_eq!(epochs.len(), 12);
    // Terminal flag only at t = T.
    let dones: Vec<bool> = agent.buffer.iter().map(|t| t.done).collect();
    assert_eq!(dones, vec![false, false, false, false, false, true]);
    // Eve frozen throughout stage 4.
    assert_eq!(sys.sd2.params(), &sd2_before[..]);
    // Logged rewards decompose exactly.
    for d in &policy.decisions {
        assert_eq!(d.reward, compute_reward(d.psnr_leg_db, d.psnr_eve_db, plan.lambda_r));
    }
}

#[test]
fn stage4_with_zero_lambda_rewards_bob_only() {
    let seed = 15;
    let (mut sys, mut streams) = small_setup(seed);
    let mut gen = derive_stream(seed, "data/gen");
    let train = generate_images(120, 16, 16, 3, &mut gen);
    let eval_mini = generate_images(32, 16, 16, 3, &mut gen);
    let mut plan = StagePlan::scaled(0.02, 3, 2);
    plan.lambda_r = 0.0;
    let mut agent = small_agent(seed);
    let (policy, _) = stage4(
        &mut sys,
        &mut streams,
        &mut agent,
        &train,
        &eval_mini,
        &plan,
        derive_seed(seed, "eval"),
    )
    .unwrap();
    for d in &policy.decisions {
        assert_eq!(d.reward, d.psnr_leg_db);
    }
}

#[test]
fn stage5_improves_on_stage4_average() {
    let seed = 16;
    let (mut sys, mut streams) = small_setup(seed);
    let mut gen = derive_stream(seed, "data/gen");
    let train = generate_images(200, 16, 16, 3, &mut gen);
    let eval_mini = generate_images(48, 16, 16, 3, &mut gen);
    let test = generate_images(64, 16, 16, 3, &mut gen);
    let plan = StagePlan {
        stage1_epochs: 8,
        stage2_epochs: 8,
        stage3_epochs: 8,
        stage5_epochs: 10,
        ..StagePlan::scaled(0.05, 8, 2)
    };
    let mut agent = small_agent(seed);
    stage1(&mut sys, &mut streams, &train, &plan).unwrap();
    stage2(&mut sys, &mut streams, &train, &plan).unwrap();
    stage3(&mut sys, &mut streams, &train, &plan).unwrap();
    let (policy, _) = stage4(
        &mut sys,
        &mut streams,
        &mut agent,
        &train,
        &eval_mini,
        &plan,
        derive_seed(seed, "eval"),
    )
    .unwrap();
    let stage4_avg = policy.decisions.iter().map(|d| d.psnr_leg_db).sum::<f64>()
        / policy.decisions.len() as f64;
    let best = policy.best().unwrap().action.clone();
    let (_, report) = stage5(
        &mut sys,
        &mut streams,
        &best,
        &train,
        &test,
        &plan,
        derive_seed(seed, "eval"),
    )
    .unwrap();
    assert!(
        report.psnr_leg_db >= stage4_avg,
        "final {:.2} dB vs stage-4 average {:.2} dB",
        report.psnr_leg_db,
        stage4_avg
    );
}

#[test]
fn full_run_is_deterministic_given_seed() {
    let run = |seed: u64| {
        let (mut sys, mut streams) = small_setup(seed);
        let mut gen = derive_stream(seed, "data/gen");
        let train = generate_images(64, 16, 16, 3, &mut gen);
        let eval_mini = generate_images(16, 16, 16, 3, &mut gen);
        let test = generate_images(32, 16, 16, 3, &mut gen);
        let plan = StagePlan::scaled(0.01, 2, 2);
        let mut agent = small_agent(seed);
        let out = run_five_stages(
            &mut sys,
            &mut streams,
            &mut agent,
            &train,
            &eval_mini,
            &test,
            &plan,
            derive_seed(seed, "eval"),
            |_, _| Ok(()),
        )
        .unwrap();
        (
            out.final_report.psnr_leg_db,
            out.final_report.psnr_eve_db,
            out.best_action,
        )
    };
    let a = run(21);
    let b = run(21);
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1.to_bits(), b.1.to_bits());
    assert_eq!(a.2, b.2);
}
