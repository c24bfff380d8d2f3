use defog_core::fog::{cell_visibility, hidden_enemy_grid, observe, visibility_mask};
use defog_core::grid::{existence, featurize_frame, grid_dims, CountGrid, GridSpec, Player, RawFrame, UnitRecord};
use defog_core::tech::{default_tech, TechTree, UnitTypeDef};
use proptest::prelude::*;

fn unit(player: Player, kind: usize, x: u32, y: u32) -> UnitRecord {
    UnitRecord { player, kind, x, y }
}

/// Cell-major brute force: for every cell and unit, test window membership.
fn featurize_oracle(frame: &RawFrame, spec: &GridSpec, n: usize, me: Player) -> Vec<f32> {
    let mut out = vec![0.0; spec.rows * spec.cols * 2 * n];
    for i in 0..spec.rows {
        for j in 0..spec.cols {
            for u in &frame.units {
                let side = match u.player {
                    Player::Neutral => continue,
                    p if p == me => 0,
                    _ => 1,
                };
                let (y, x) = (u.y as usize, u.x as usize);
                if i * spec.g <= y && y < i * spec.g + spec.r && j * spec.g <= x && x < j * spec.g + spec.r {
                    out[(i * spec.cols + j) * 2 * n + side * n + u.kind] += 1.0;
                }
            }
        }
    }
    out
}

fn player_strategy() -> impl Strategy<Value = Player> {
    prop_oneof![Just(Player::Zero), Just(Player::One), Just(Player::Neutral)]
}

fn frame_strategy(h: u32, w: u32) -> impl Strategy<Value = RawFrame> {
    prop::collection::vec((player_strategy(), 0usize..6, 0..w, 0..h), 0..40)
        .prop_map(|v| RawFrame { time: 0.0, units: v.into_iter().map(|(p, k, x, y)| unit(p, k, x, y)).collect() })
}

#[test]
fn grid_dims_reference_values() {
    assert_eq!(grid_dims(512, 512, 32, 32).unwrap(), (15, 15));
    assert_eq!(grid_dims(512, 512, 64, 64).unwrap(), (7, 7));
    assert_eq!(grid_dims(128, 128, 16, 16).unwrap(), (7, 7));
    assert!(grid_dims(32, 64, 32, 8).is_err());
}

#[test]
fn grid_dims_matches_window_start_count() {
    // Windows start at multiples of g strictly below H - r, the ceiling form.
    for g in 1..=64usize {
        for r in g..=64 {
            for h in [r + 1, r + 7, 100, 257, 512] {
                if h <= r {
                    continue;
                }
                let starts = (0..h).filter(|s| s % g == 0 && *s < h - r).count();
                assert_eq!(grid_dims(h, h, r, g).unwrap().0, starts, "h={h} r={r} g={g}");
            }
        }
    }
}

#[test]
fn overlapping_windows_count_a_unit_twice() {
    let tech = default_tech();
    let spec = GridSpec::new(40, 40, 8, 4).unwrap();
    let frame = RawFrame { time: 0.0, units: vec![unit(Player::One, 3, 6, 6)] };
    let g = featurize_frame(&frame, &spec, &tech, Player::Zero).unwrap();
    assert_eq!(g.total(), 4.0);
    for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        assert_eq!(g.get(i, j, 6 + 3), 1.0);
    }
    let spec = GridSpec::new(40, 40, 8, 4).unwrap();
    let frame = RawFrame { time: 0.0, units: vec![unit(Player::One, 3, 2, 6)] };
    assert_eq!(featurize_frame(&frame, &spec, &tech, Player::Zero).unwrap().total(), 2.0);
}

#[test]
fn featurize_errors() {
    let tech = default_tech();
    let spec = GridSpec::new(40, 40, 8, 8).unwrap();
    let bad_kind = RawFrame { time: 0.0, units: vec![unit(Player::One, 6, 0, 0)] };
    assert!(featurize_frame(&bad_kind, &spec, &tech, Player::Zero).is_err());
    let outside = RawFrame { time: 0.0, units: vec![unit(Player::One, 1, 40, 0)] };
    assert!(featurize_frame(&outside, &spec, &tech, Player::Zero).is_err());
}

#[test]
fn existence_boundaries() {
    let g = CountGrid::from_data(1, 2, 2, vec![1.0, 0.5, 0.0, 2.0]).unwrap();
    assert_eq!(existence(&g, 0.5).data, vec![true, false, false, true]);
    assert!(existence(&CountGrid::zeros(2, 2, 2), 0.1).data.iter().all(|b| !b));
}

fn open_tech(sight: f64) -> TechTree {
    let types = vec![UnitTypeDef {
        id: 0,
        name: "eye".into(),
        is_building: false,
        prerequisites: Default::default(),
        sight_range: sight,
        move_speed: 1.0,
    }];
    TechTree::new(types, vec![0]).unwrap()
}

#[test]
fn sight_disc_sizes() {
    for (range, expected) in [(0.0, 1usize), (1.0, 5), (2.0, 13), (3.0, 29), (2.5, 21)] {
        let tech = open_tech(range);
        let frame = RawFrame { time: 0.0, units: vec![unit(Player::Zero, 0, 10, 10)] };
        let mask = visibility_mask(&frame, Player::Zero, &tech, 21, 21).unwrap();
        let brute = (-10i64..=10)
            .flat_map(|dy| (-10i64..=10).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| ((dx * dx + dy * dy) as f64) <= range * range)
            .count();
        assert_eq!(brute, expected);
        assert_eq!(mask.count(), expected, "range {range}");
    }
    let tech = open_tech(3.0);
    let none = RawFrame { time: 0.0, units: vec![unit(Player::One, 0, 3, 3)] };
    assert_eq!(visibility_mask(&none, Player::Zero, &tech, 10, 10).unwrap().count(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn featurize_matches_oracle((r, g) in (1usize..12).prop_flat_map(|g| (g..=3 * g, Just(g))), frame in frame_strategy(48, 40)) {
        let tech = default_tech();
        let spec = GridSpec::new(48, 40, r, g).unwrap();
        let got = featurize_frame(&frame, &spec, &tech, Player::One).unwrap();
        let want = featurize_oracle(&frame, &spec, 6, Player::One);
        prop_assert_eq!(got.data(), want.as_slice());
    }

    #[test]
    fn featurize_is_permutation_invariant(frame in frame_strategy(64, 64), seed in any::<u64>()) {
        let tech = default_tech();
        let spec = GridSpec::new(64, 64, 16, 8).unwrap();
        let mut shuffled = frame.clone();
        defog_core::rng::SplitMix64::new(seed).shuffle(&mut shuffled.units);
        prop_assert_eq!(
            featurize_frame(&frame, &spec, &tech, Player::Zero).unwrap(),
            featurize_frame(&shuffled, &spec, &tech, Player::Zero).unwrap()
        );
    }

    #[test]
    fn partition_cells_receive_each_unit_once(frame in frame_strategy(64, 64)) {
        let tech = default_tech();
        let spec = GridSpec::new(64, 64, 8, 8).unwrap();
        let g = featurize_frame(&frame, &spec, &tech, Player::Zero).unwrap();
        let counted = frame.units.iter().filter(|u| u.player != Player::Neutral && (u.x as usize) < 56 && (u.y as usize) < 56).count();
        prop_assert_eq!(g.total(), counted as f64);
    }

    #[test]
    fn observation_is_the_per_unit_distance_filter(frame in frame_strategy(48, 48), me in 0usize..2) {
        let tech = default_tech();
        let me = Player::from_index(me).unwrap();
        let obs = observe(&frame, me, &tech, 48, 48).unwrap();
        let expected: Vec<UnitRecord> = frame
            .units
            .iter()
            .filter(|u| {
                u.player == me
                    || frame.units.iter().filter(|o| o.player == me).any(|o| {
                        let (dx, dy) = (o.x as f64 - u.x as f64, o.y as f64 - u.y as f64);
                        dx * dx + dy * dy <= tech.types()[o.kind].sight_range.powi(2)
                    })
            })
            .copied()
            .collect();
        prop_assert_eq!(obs.units, expected);
    }

    #[test]
    fn observed_counts_never_exceed_reality(frame in frame_strategy(64, 64), me in 0usize..2) {
        let tech = default_tech();
        let me = Player::from_index(me).unwrap();
        let spec = GridSpec::new(64, 64, 16, 8).unwrap();
        let full = featurize_frame(&frame, &spec, &tech, me).unwrap();
        let seen = featurize_frame(&observe(&frame, me, &tech, 64, 64).unwrap(), &spec, &tech, me).unwrap();
        let hidden = hidden_enemy_grid(&full, &seen).unwrap();
        for idx in 0..full.data().len() {
            let (f, s, h) = (full.data()[idx], seen.data()[idx], hidden.data()[idx]);
            if idx % 12 < 6 {
                prop_assert_eq!(f, s);
                prop_assert_eq!(h, 0.0);
            } else {
                prop_assert!(s <= f);
                prop_assert_eq!(h + s, f);
            }
        }
    }

    #[test]
    fn hidden_grid_is_the_clamped_difference(a in prop::collection::vec(0u8..5, 4 * 4), b in prop::collection::vec(0u8..5, 4 * 4)) {
        let full = CountGrid::from_data(2, 2, 4, a.iter().map(|&v| v as f32).collect()).unwrap();
        let seen = CountGrid::from_data(2, 2, 4, b.iter().map(|&v| v as f32).collect()).unwrap();
        let h = hidden_enemy_grid(&full, &seen).unwrap();
        for idx in 0..16 {
            let expected = if idx % 4 < 2 { 0.0 } else { (a[idx] as f32 - b[idx] as f32).max(0.0) };
            prop_assert_eq!(h.data()[idx], expected);
        }
    }

    #[test]
    fn cell_visibility_matches_window_scan(frame in frame_strategy(40, 40), r in 4usize..12) {
        let tech = default_tech();
        let spec = GridSpec::new(40, 40, r, 4).unwrap();
        let mask = visibility_mask(&frame, Player::Zero, &tech, 40, 40).unwrap();
        let cells = cell_visibility(&mask, &spec);
        for i in 0..spec.rows {
            for j in 0..spec.cols {
                let any = (i * 4..i * 4 + r).any(|y| (j * 4..j * 4 + r).any(|x| mask.get(x, y)));
                prop_assert_eq!(cells[i * spec.cols + j], any);
            }
        }
    }
}

#[test]
fn hidden_grid_rejects_shape_mismatch() {
    assert!(hidden_enemy_grid(&CountGrid::zeros(2, 2, 4), &CountGrid::zeros(2, 3, 4)).is_err());
}
