use dockirl::gridmdp::{
    expected_svf, soft_value_iteration, soft_value_iteration_horizon, GridMap, GridMdp, PolicySchedule, N_ACTIONS,
};
use dockirl::oracle::{enumerate_paths, enumerated_svf, maxent_path_probabilities};
use proptest::prelude::*;

fn grid_case(max_side: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<bool>, Vec<bool>, f64)> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(rows, cols)| {
        let n = rows * cols;
        (
            Just(rows),
            Just(cols),
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(prop::bool::weighted(0.2), n),
            prop::collection::vec(prop::bool::weighted(0.15), n),
            0.5f64..=1.0,
        )
    })
}

/// Keeps cell 0 free and non-terminal so it can serve as the start.
fn build(rows: usize, cols: usize, mut blocked: Vec<bool>, mut terminal: Vec<bool>, gamma: f64) -> GridMdp {
    blocked[0] = false;
    terminal[0] = false;
    for (t, b) in terminal.iter_mut().zip(&blocked) {
        *t &= !*b;
    }
    GridMdp::new(rows, cols, gamma, blocked, terminal).unwrap()
}

proptest! {
    #[test]
    fn policy_rows_are_distributions((rows, cols, r, blocked, terminal, gamma) in grid_case(6), h in 1usize..8) {
        let mdp = build(rows, cols, blocked, terminal, gamma);
        let reward = GridMap::from_vec(rows, cols, r).unwrap();
        let sol = soft_value_iteration_horizon(&mdp, &reward, h).unwrap();
        let stat = soft_value_iteration(&mdp, &reward, 20).unwrap();
        for t in 0..h.saturating_sub(1) {
            for s in 0..mdp.n_states() {
                let row = sol.policy_at(t).row(s);
                prop_assert_eq!(row.len(), N_ACTIONS);
                prop_assert!(row.iter().all(|&p| p >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        for s in 0..mdp.n_states() {
            prop_assert!((stat.policy.row(s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_reward_shift_leaves_policy_unchanged(
        (rows, cols, r, blocked, _t, gamma) in grid_case(6), h in 2usize..8, c in -20.0f64..20.0
    ) {
        // terminal cells stop accruing reward, so only terminal-free grids qualify
        let mdp = build(rows, cols, blocked, vec![false; rows * cols], gamma);
        let a = GridMap::from_vec(rows, cols, r.clone()).unwrap();
        let b = GridMap::from_vec(rows, cols, r.iter().map(|v| v + c).collect()).unwrap();
        let pa = soft_value_iteration_horizon(&mdp, &a, h).unwrap();
        let pb = soft_value_iteration_horizon(&mdp, &b, h).unwrap();
        for t in 0..h - 1 {
            prop_assert!(pa.policy_at(t).max_abs_diff(pb.policy_at(t)) < 1e-9);
        }
    }

    #[test]
    fn undiscounted_mass_is_conserved((rows, cols, r, blocked, _t, _g) in grid_case(6), h in 1usize..12) {
        let mdp = build(rows, cols, blocked, vec![false; rows * cols], 1.0);
        let reward = GridMap::from_vec(rows, cols, r).unwrap();
        let sol = soft_value_iteration_horizon(&mdp, &reward, h).unwrap();
        let mu = expected_svf(&mdp, &sol, &GridMap::point_mass(rows, cols, 0), h).unwrap();
        prop_assert!((mu.sum() - h as f64).abs() < 1e-9);
        for s in 0..mdp.n_states() {
            if mdp.is_blocked(s) {
                prop_assert_eq!(mu.values()[s], 0.0);
            }
        }
    }

    #[test]
    fn terminals_only_remove_mass((rows, cols, r, blocked, terminal, gamma) in grid_case(6), h in 1usize..12) {
        let mdp = build(rows, cols, blocked, terminal, gamma);
        let reward = GridMap::from_vec(rows, cols, r).unwrap();
        let sol = soft_value_iteration_horizon(&mdp, &reward, h).unwrap();
        let mu = expected_svf(&mdp, &sol, &GridMap::point_mass(rows, cols, 0), h).unwrap();
        prop_assert!(mu.sum() <= h as f64 + 1e-9);
        prop_assert!(mu.values().iter().all(|&v| v >= -1e-15));
    }

    #[test]
    fn forward_pass_matches_path_enumeration((rows, cols, r, blocked, terminal, gamma) in grid_case(3), h in 1usize..5) {
        let mdp = build(rows, cols, blocked, terminal, gamma);
        let reward = GridMap::from_vec(rows, cols, r).unwrap();
        let sol = soft_value_iteration_horizon(&mdp, &reward, h).unwrap();
        let mu = expected_svf(&mdp, &sol, &GridMap::point_mass(rows, cols, 0), h).unwrap();
        let paths = enumerate_paths(&mdp, 0, h);
        // the path distribution is MaxEnt only when undiscounted
        let probs = if gamma == 1.0 {
            maxent_path_probabilities(&paths, &reward)
        } else {
            dockirl::oracle::policy_path_probabilities(&paths, &sol)
        };
        let brute = enumerated_svf(&mdp, &paths, &probs);
        prop_assert!(mu.max_abs_diff(&brute) < 1e-9);
    }
}

#[test]
fn undiscounted_paths_follow_maxent_distribution() {
    let mdp = GridMdp::open(3, 3, 1.0).unwrap();
    let reward = GridMap::from_vec(3, 3, vec![0.3, -1.0, 0.5, 2.0, 0.0, -0.4, 1.1, 0.2, -2.0]).unwrap();
    let h = 4;
    let sol = soft_value_iteration_horizon(&mdp, &reward, h).unwrap();
    let paths = enumerate_paths(&mdp, 4, h);
    let a = maxent_path_probabilities(&paths, &reward);
    let b = dockirl::oracle::policy_path_probabilities(&paths, &sol);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
    let mu = expected_svf(&mdp, &sol, &GridMap::point_mass(3, 3, 4), h).unwrap();
    assert!(mu.max_abs_diff(&enumerated_svf(&mdp, &paths, &a)) < 1e-12);
}
