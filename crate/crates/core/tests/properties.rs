use proptest::prelude::*;
use surveil_core::agents::{generate_sessions, AgentGroup, BiasProfile, ExtraRounds, PopulationSpec};
use surveil_core::analysis::{
    categorize, classify_risk, confidence_degrees, hot_hand_scan, kruskal_wallis, ks_two_sample,
    label_junction, mann_whitney, Alternative, Attitude, BehaviorCategory, ConfidenceDegrees, Label,
    AnalysisOptions,
};
use surveil_core::policy::{
    mission_rng, run_mission, simulate_missions, ClosedLoopHeuristic, OpenLoopPlan, PlannedPolicy,
};
use surveil_core::session::MplChoice;
use surveil_core::{mission_value, MissionConfig, Treatment};

const LADDER_AFTER_FLIGHT: [u32; 8] = [25, 50, 70, 80, 85, 90, 95, 100];

fn any_plan() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0u32..=8, 10)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn missions_stay_on_ladder_and_add_up(seed in any::<u64>(), plan in any_plan(), closed in any::<bool>()) {
        let cfg = MissionConfig::default();
        let mut rng = mission_rng(seed, 0);
        let log = if closed {
            run_mission(&mut ClosedLoopHeuristic::new(&cfg), &cfg, &mut rng).unwrap().0
        } else {
            let mut p = PlannedPolicy::new(OpenLoopPlan { planned_rounds: plan });
            run_mission(&mut p, &cfg, &mut rng).unwrap().0
        };
        for junction in &log.junctions {
            let mut prev = 0;
            for f in junction {
                prop_assert!(LADDER_AFTER_FLIGHT.contains(&f.sigma_after));
                prop_assert!(f.sigma_after >= prev);
                prev = f.sigma_after;
            }
        }
        prop_assert_eq!(log.junctions.first().and_then(|j| j.first()).map_or(true, |f| f.increased), true);
        let v = mission_value(&log).unwrap();
        prop_assert_eq!(v, log.total_value);
        let infos: u32 = log.junction_infos().iter().sum();
        prop_assert_eq!(v, infos + if log.intact { cfg.drone_value } else { 0 });
        prop_assert!(log.verify().is_ok());
        // a crash ends the mission at the crashing junction
        if log.crashed() {
            prop_assert!(log.junctions.last().unwrap().last().unwrap().crashed);
        }
    }

    #[test]
    fn replay_is_deterministic(seed in any::<u64>(), stream in 0u64..1000) {
        let cfg = MissionConfig::default();
        let mut p = ClosedLoopHeuristic::new(&cfg);
        let a = run_mission(&mut p, &cfg, &mut mission_rng(seed, stream)).unwrap();
        let b = run_mission(&mut p, &cfg, &mut mission_rng(seed, stream)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn degrees_sum_to_one(oc in 0u32..12, uc in 0u32..12, opt in 0u32..12) {
        let d = ConfidenceDegrees { overconfident: oc, underconfident: uc, optimal: opt };
        let c = categorize(&d);
        if d.observed() == 0 {
            prop_assert_eq!(c, BehaviorCategory::Excluded);
        } else {
            let sum = d.oc_degree() + d.uc_degree() + d.opt_degree();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for x in [d.oc_degree(), d.uc_degree(), d.opt_degree()] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
            prop_assert_eq!(c == BehaviorCategory::Optimal, oc == 0 && uc == 0);
            if c == BehaviorCategory::StronglyOverconfident {
                prop_assert!(d.oc_degree() > 0.5);
            }
            if c == BehaviorCategory::Mixed {
                prop_assert!(oc + uc > 0);
            }
        }
        prop_assert_eq!(categorize(&d), c);
    }

    #[test]
    fn p_values_are_probabilities(
        a in prop::collection::vec(0u8..20, 1..30),
        b in prop::collection::vec(0u8..20, 1..30),
        c in prop::collection::vec(0u8..20, 1..30),
    ) {
        let f = |v: &[u8]| v.iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
        let (a, b, c) = (f(&a), f(&b), f(&c));
        for alt in [Alternative::TwoSided, Alternative::Less, Alternative::Greater] {
            let t = mann_whitney(&a, &b, alt).unwrap();
            prop_assert!((0.0..=1.0).contains(&t.p_value));
        }
        let k = kruskal_wallis(&[&a, &b, &c]).unwrap();
        prop_assert!((0.0..=1.0).contains(&k.p_value) && k.statistic >= 0.0);
        let ks = ks_two_sample(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&ks.p_value) && (0.0..=1.0).contains(&ks.statistic));
    }

    #[test]
    fn price_list_never_fails(bits in any::<u32>()) {
        let sheet: Vec<MplChoice> = (0..20).map(|k| if bits >> k & 1 == 1 { MplChoice::B } else { MplChoice::A }).collect();
        let r = classify_risk(&sheet).unwrap();
        prop_assert_eq!(r.attitude == Attitude::NotIdentifiable, r.switches >= 3);
        prop_assert_eq!(r.weakly_identified, r.switches == 2);
        if let Some(row) = r.switch_row {
            prop_assert!((1..=20).contains(&row));
        }
    }

    #[test]
    fn forced_safe_tail_keeps_identification(bits in any::<u16>()) {
        // rows 17..=20 pay at least the lottery's expectation in the safe option
        let mut sheet: Vec<MplChoice> = (0..16).map(|k| if bits >> k & 1 == 1 { MplChoice::B } else { MplChoice::A }).collect();
        let prefix_switches = sheet.windows(2).filter(|w| w[0] != w[1]).count() as u32;
        let ends_b = sheet[15] == MplChoice::B;
        sheet.extend([MplChoice::A; 4]);
        let r = classify_risk(&sheet).unwrap();
        prop_assert_eq!(r.switches, prefix_switches + u32::from(ends_b));
        prop_assert!(r.attitude != Attitude::RiskSeeking);
    }

    #[test]
    fn fallacy_implies_overconfident_label(seed in any::<u64>(), q in 0.0f64..=1.0) {
        let cfg = MissionConfig::default();
        let spec = PopulationSpec {
            seed,
            groups: vec![AgentGroup {
                profile: BiasProfile::HotHand { continue_prob: q, streak_len: 3, gambler: false },
                count: 5,
                treatment: Treatment::Closed,
                mpl_switch_row: 17,
            }],
        };
        for s in generate_sessions(&spec, &cfg).unwrap() {
            for rec in hot_hand_scan(&s, 3).unwrap() {
                prop_assert!(!rec.fallacy || rec.hot_hand_situation);
                let j = &s.junctions[rec.junction as usize - 1];
                let label = label_junction(j, None, Treatment::Closed, &cfg);
                if rec.fallacy {
                    prop_assert_eq!(label.label, Label::Overconfident);
                }
                prop_assert_eq!(label.label == Label::Overconfident, label.rounds_beyond_optimum > 0);
            }
            if let Ok(d) = confidence_degrees(&s, &AnalysisOptions::default()) {
                prop_assert_eq!(d.underconfident, 0);
            }
        }
    }

    #[test]
    fn generated_sessions_replay(seed in any::<u64>(), k in 1u32..4) {
        let cfg = MissionConfig::default();
        let spec = PopulationSpec {
            seed,
            groups: vec![
                AgentGroup { profile: BiasProfile::Overconfident { extra_rounds: ExtraRounds::Fixed(k) }, count: 3, treatment: Treatment::Open, mpl_switch_row: 12 },
                AgentGroup { profile: BiasProfile::Optimizer, count: 3, treatment: Treatment::Closed, mpl_switch_row: 17 },
            ],
        };
        let a = generate_sessions(&spec, &cfg).unwrap();
        prop_assert_eq!(&a, &generate_sessions(&spec, &cfg).unwrap());
        for s in &a {
            prop_assert!(s.verify().is_ok());
        }
    }
}

#[test]
fn simulation_does_not_depend_on_thread_count() {
    let cfg = MissionConfig::default();
    let policy = ClosedLoopHeuristic::new(&cfg);
    let a = simulate_missions(&policy, &cfg, 5, 3000).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| simulate_missions(&policy, &cfg, 5, 3000).unwrap());
    assert_eq!(a, b);
}
