//! Black-box checks of the environment against independently recomputed
//! geometry: reward telescoping over whole episodes, the action encoding
//! bijection, and the satisfaction predicate.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use tasklang::config::Config;
use tasklang::env::{
    all_instructions, is_satisfied, scripted_mover_action, BallEnv, Direction, Instruction,
    PushAction, ACTION_COUNT, N_BALLS, SUCCESS_BONUS, TIMEOUT_PENALTY,
};
use tasklang::rng;

/// Sum of step rewards must equal the total goal-distance decrease plus the
/// terminal bonus or penalty, exactly up to float accumulation error.
#[test]
fn reward_telescopes_over_a_thousand_random_episodes() {
    let cfg = Config::default().env;
    let instructions = all_instructions();
    let mut action_rng: ChaCha12Rng = rng::rng_from(0xE1, "oracle-actions", 0);
    for e in 0..1000u64 {
        let instr = instructions[(e as usize) % instructions.len()];
        let mut env = BallEnv::new(cfg.clone(), rng::derive(0xE1, "oracle-env", e), instr)
            .expect("spawn");
        let d0 = tasklang::env::goal_distance(&env.state.positions, &instr, &cfg);
        let mut total = 0.0;
        let (mut success, mut timeout) = (false, false);
        let mut d_final = d0;
        loop {
            let a = PushAction::from_index(action_rng.gen_range(0..ACTION_COUNT)).unwrap();
            let r = env.step(a).expect("step");
            total += r.reward;
            d_final = r.info.goal_distance;
            if r.done {
                success = r.info.success;
                timeout = !r.info.success;
                break;
            }
        }
        let mut expect = d0 - d_final;
        if success {
            expect += SUCCESS_BONUS;
        }
        if timeout {
            expect -= TIMEOUT_PENALTY;
        }
        assert!(
            (total - expect).abs() < 1e-9,
            "episode {e}: reward sum {total} but telescoped form {expect}"
        );
    }
}

#[test]
fn action_encoding_is_a_bijection_over_all_forty() {
    let mut seen = std::collections::HashSet::new();
    for i in 0..ACTION_COUNT {
        let a = PushAction::from_index(i).expect("index in range");
        assert_eq!(a.index(), i, "round trip");
        assert!(seen.insert((a.ball, a.heading)), "duplicate decode for {i}");
        assert!(a.ball < N_BALLS && a.heading < 8);
    }
    assert_eq!(seen.len(), ACTION_COUNT);
    assert!(PushAction::from_index(ACTION_COUNT).is_err());
}

/// Recomputes satisfaction from the documented convention (front +y, behind
/// -y, left -x, right +x; goal = destination + offset; strict radius) without
/// calling the library's target-point helpers.
#[test]
fn satisfaction_matches_independent_geometry_on_ten_thousand_states() {
    let cfg = Config::default().env;
    let instructions = all_instructions();
    let mut rng: ChaCha12Rng = rng::rng_from(0xE2, "oracle-states", 0);
    let mut positives = 0usize;
    for i in 0..10_000usize {
        let mut positions = [[0.0f64; 2]; N_BALLS];
        for p in &mut positions {
            p[0] = rng.gen_range(-cfg.half_width..=cfg.half_width);
            p[1] = rng.gen_range(-cfg.half_width..=cfg.half_width);
        }
        let instr = instructions[i % instructions.len()];
        let (dx, dy) = match instr.direction {
            Direction::Front => (0.0, 1.0),
            Direction::Behind => (0.0, -1.0),
            Direction::Left => (-1.0, 0.0),
            Direction::Right => (1.0, 0.0),
        };
        let goal = [
            positions[instr.destination][0] + cfg.target_offset * dx,
            positions[instr.destination][1] + cfg.target_offset * dy,
        ];
        let m = positions[instr.mover];
        let d = ((m[0] - goal[0]).powi(2) + (m[1] - goal[1]).powi(2)).sqrt();
        let want = d < cfg.success_radius;
        positives += usize::from(want);
        assert_eq!(
            is_satisfied(&positions, &instr, &cfg),
            want,
            "state {i}: distance {d} vs radius {}",
            cfg.success_radius
        );
    }
    // The sample must exercise both outcomes for the check to mean anything.
    assert!(positives > 0, "no satisfied states sampled");
    assert!(positives < 10_000, "all states satisfied");
}

/// The scripted controller solves essentially every instruction; it is the
/// data-collection workhorse, so its reliability is load-bearing.
#[test]
fn scripted_controller_sweeps_all_instructions() {
    let cfg = Config::default().env;
    let mut solved = 0usize;
    let mut total = 0usize;
    for (k, instr) in all_instructions().into_iter().enumerate() {
        for rep in 0..3u64 {
            total += 1;
            let seed = rng::derive(0xE3, "oracle-sweep", (k as u64) << 8 | rep);
            let mut env = BallEnv::new(cfg.clone(), seed, instr).expect("spawn");
            loop {
                let a = scripted_mover_action(&env.state.positions, &env.instruction, &cfg);
                let r = env.step(a).expect("step");
                if r.done {
                    solved += usize::from(r.info.success);
                    break;
                }
            }
        }
    }
    let rate = solved as f64 / total as f64;
    assert!(rate >= 0.99, "scripted success {rate:.3} over {total} episodes");
}

/// Spawn-time satisfaction is rare but legal; the episode must then succeed
/// on the first step regardless of the action taken.
#[test]
fn pre_satisfied_spawns_succeed_immediately() {
    let cfg = Config::default().env;
    let instr = Instruction::new(0, Direction::Left, 1).unwrap();
    let mut found = false;
    for s in 0..20_000u64 {
        let mut env = BallEnv::new(cfg.clone(), s, instr).unwrap();
        if is_satisfied(&env.state.positions, &instr, &cfg) {
            found = true;
            let r = env.step(PushAction::from_index(17).unwrap()).unwrap();
            assert!(r.done && r.info.success && r.info.pre_satisfied);
            break;
        }
    }
    assert!(found, "no pre-satisfied spawn among 20k seeds; loosen the search");
}
