use ebse_core::linalg::{self, Mat, Vector};
use ebse_core::lmi::{self, acl, cor2_constraints, thm1_constraints, Gains, SdpProgram};
use ebse_core::model::{platoon_with_lqr, NoiseSpec, PartitionedSystem};
use ebse_core::sim::{run, EstimatorParams, SimConfig};
use ebse_core::synthesis::*;
use ebse_core::Error;

fn platoon_gains() -> (PartitionedSystem, NoiseSpec, GainStep) {
    let (sys, noise) = platoon_with_lqr(3, 0.02).unwrap();
    let g = synth_step1_gains(&sys, &noise, Variant::Cor2, &SynthOptions::default()).unwrap();
    (sys, noise, g)
}

#[test]
fn switched_blocks_with_pinned_certificate_match_common_blocks() {
    let (sys, _, g) = platoon_gains();
    let fixed = Gains::fixed(&sys, g.gains.clone()).unwrap();
    let (mut t, mut c) = (SdpProgram::new(), SdpProgram::new());
    let tv = thm1_constraints(&mut t, &sys, &fixed, 0.0).unwrap();
    let cv = cor2_constraints(&mut c, &sys, &fixed, 0.0).unwrap();
    let p = &g.certificate.p;
    let mut tvals = vec![Mat::zeros(0, 0); t.vars().len()];
    tvals[tv.p.id] = p.clone();
    tvals[tv.p2.unwrap().id] = p.clone();
    let mut cvals = vec![Mat::zeros(0, 0); c.vars().len()];
    cvals[cv.p.id] = p.clone();
    for (idx, cb) in c.constraints().iter().enumerate() {
        let expect = cb.matrix.eval(&cvals);
        for l in 1..=2 {
            let name = format!("stab[{idx}][l={l}]");
            let tb = t.constraints().iter().find(|b| b.name == name).unwrap();
            assert_eq!(tb.matrix.eval(&tvals), expect, "{name}");
        }
    }
    assert_eq!(t.constraints().len(), 2 * c.constraints().len() + 2);
}

#[test]
fn closed_loop_on_extreme_transmit_sets() {
    let (sys, _, g) = platoon_gains();
    assert_eq!(acl(&sys, &g.gains, &[]).unwrap(), sys.closed_loop());
    let l = sys.stack_gains(&g.gains).unwrap();
    let full = (Mat::identity(sys.n(), sys.n()) - l * sys.c()) * sys.closed_loop();
    assert!((acl(&sys, &g.gains, &[0, 1, 2]).unwrap() - full).amax() < 1e-13);
    assert!(acl(&sys, &g.gains, &[3]).is_err());
}

#[test]
fn exponential_families_refuse_large_platoons() {
    let (sys, noise) = platoon_with_lqr(20, 0.02).unwrap();
    for v in [Variant::Cor2, Variant::Thm1] {
        let e = synth_step1_gains(&sys, &noise, v, &SynthOptions::default()).unwrap_err();
        assert!(matches!(e, Error::Capacity { n: 20, .. }), "{e}");
    }
    assert_eq!(lmi::power_set(lmi::POWER_SET_CAP).unwrap().len(), 1 << lmi::POWER_SET_CAP);
}

#[test]
fn communication_channel_matches_simulated_innovations() {
    let (sys, noise, g) = platoon_gains();
    // every agent transmits, so all estimates coincide
    let always = EstimatorParams { gains: g.gains.clone(), thresholds: vec![Mat::from_element(1, 1, 1e-300); 3] };
    let mut cfg = SimConfig::new(&sys, always, 200_000, Vector::zeros(sys.n()));
    cfg.noise = noise.uniform.clone();
    cfg.seed = 5;
    let t = run(&sys, &cfg).unwrap();
    let deltas: Vec<Mat> = [0.05, 0.1, 0.2].iter().map(|&d| Mat::from_element(1, 1, d)).collect();
    let burn = 1000;
    let sim: f64 = t.steps[burn..]
        .iter()
        .map(|s| s.residuals.iter().zip(&deltas).map(|(r, d)| (r[0] / d[(0, 0)]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / (t.steps.len() - burn) as f64;
    let perf = Channel::Communication.perf_at(&sys, &deltas, 1.0).unwrap();
    let zero = vec![Mat::zeros(1, 1); 3];
    let b = eval_bound(&sys, &noise, &g.gains, &zero, &perf, &SynthOptions::default()).unwrap();
    let model = b.c_z * b.c_z;
    assert!((sim / model - 1.0).abs() < 0.02, "simulated {sim}, channel {model}");
}

#[test]
fn baseline_power_grows_with_divisor() {
    let (sys, noise) = platoon_with_lqr(3, 0.02).unwrap();
    let rows: Vec<Baseline> = (1..=20).map(|r| centralized_baseline(&sys, &noise, r).unwrap()).collect();
    for w in rows.windows(2) {
        assert!(w[1].error_power >= w[0].error_power);
        assert!(w[1].comm_rate < w[0].comm_rate);
    }
    let kf = kalman_filter(sys.a(), sys.c(), &noise.v, &noise.w_full()).unwrap();
    // r = 1 averages the posterior covariance
    assert!((rows[0].error_power - linalg::trace(&kf.posterior).sqrt()).abs() < 1e-9 * rows[0].error_power);
}

#[test]
fn smaller_budget_never_lengthens_reset_period() {
    let (sys, _, g) = platoon_gains();
    let certs = [g.certificate.p.clone()];
    let lambda = certified_lambda(&sys, &g.gains, &certs).unwrap();
    assert!(lambda < 0.0, "common certificate satisfies the strict conditions");
    let relaxed = lambda.abs() + 1e-3 * linalg::min_eigenvalue(&certs[0]);
    let mut prev: Option<usize> = None;
    let mut finite = 0;
    for e in (0..12).rev() {
        let v_max = 2f64.powi(e);
        match reset_schedule(&sys, &g.gains, &certs, relaxed, 0.1, v_max, 10_000) {
            Ok(s) => {
                if let (Some(p), Some(q)) = (prev, s.period) {
                    assert!(q <= p, "V_max {v_max}: {q} > {p}");
                }
                prev = s.period.or(prev);
                if s.period.is_some() {
                    finite += 1;
                    assert!(s.instants.iter().all(|&k| s.is_reset(k)));
                }
            }
            Err(Error::ScheduleInfeasible(_)) => prev = Some(0),
            Err(e) => panic!("{e}"),
        }
    }
    assert!(finite >= 3);
}

#[test]
fn alternating_driver_terminates_on_fixed_channel() {
    let (sys, noise) = platoon_with_lqr(3, 0.02).unwrap();
    let r = synth_general(&sys, &noise, &Channel::EstimationError, 0.38, Variant::Cor2, 5, &SynthOptions::default())
        .unwrap();
    assert!(r.converged);
    assert_eq!(r.rounds.len(), 1);
    let direct = synthesize(&sys, &noise, Variant::Cor2, 0.38, &SynthOptions::default()).unwrap();
    assert!((r.design.c_star - direct.c_star).abs() < 1e-9);
}

#[test]
fn communication_driver_keeps_best_bound() {
    let (sys, noise) = platoon_with_lqr(3, 0.02).unwrap();
    let r = synth_general(&sys, &noise, &Channel::Communication, 30.0, Variant::Cor2, 4, &SynthOptions::default())
        .unwrap();
    let best = r.rounds.iter().map(|x| x.bound).fold(f64::INFINITY, f64::min);
    assert_eq!(r.design.bound, best);
    assert!(r.rounds.windows(2).all(|w| w[1].best_bound <= w[0].best_bound));
    r.design.validate(&sys).unwrap();
}
