use magslam::simworld::{simulate, ScenarioSpec};
use magslam::slam::{
    rerun_with_loop_closure, run_slam, run_slam_with, HistoryDetail, LoopDecision, SlamError, SlamSession,
};
use magslam::{SensorSample, SlamParams};

fn two_laps() -> Vec<SensorSample> {
    simulate(&ScenarioSpec { laps: 2, ..Default::default() }).unwrap().samples
}

#[test]
fn rejected_candidates_leave_the_estimate_untouched() {
    let samples = two_laps();
    let params = SlamParams { gamma_ml: 1e300, ..SlamParams::default() };
    let mut session = SlamSession::new(params).unwrap();
    let mut rejected = 0;
    for s in &samples {
        session.ingest(*s).unwrap();
        let before = (session.history().clone(), session.positions().to_vec());
        match session.try_close_loop().unwrap() {
            LoopDecision::Rejected { .. } | LoopDecision::Failed { .. } => {
                rejected += 1;
                assert_eq!(session.history(), &before.0);
                assert_eq!(session.positions(), before.1.as_slice());
            }
            LoopDecision::Accepted { .. } => panic!("nothing can pass the likelihood gate"),
            LoopDecision::NoCandidate(_) => {}
        }
        session.advance().unwrap();
    }
    assert!(rejected > 10, "only {rejected} candidates reached the gate");

    // Identical to a filter that never looks for loop closures.
    let blind = SlamParams { gamma_mag: 1e300, ..SlamParams::default() };
    let mut reference = SlamSession::new(blind).unwrap();
    for s in &samples {
        assert!(matches!(reference.step(*s).unwrap(), LoopDecision::NoCandidate(_)));
    }
    assert_eq!(session.history(), reference.history());
    assert_eq!(session.finish(), reference.finish());
}

#[test]
fn rerun_reproduces_the_online_history() {
    let samples = two_laps();
    let params = SlamParams::default();
    let mut session = SlamSession::new(params.clone()).unwrap();
    for s in &samples {
        session.step(*s).unwrap();
    }
    assert!(session.events().len() > 5);
    let t = session.t();
    let rerun = rerun_with_loop_closure(&samples, session.events(), t, &params, HistoryDetail::Compact).unwrap();
    assert_eq!(&rerun.history, session.history());

    let none = rerun_with_loop_closure(&samples, &[], t, &params, HistoryDetail::Compact).unwrap();
    let mut blind = SlamSession::new(SlamParams { gamma_mag: 1e300, ..params }).unwrap();
    for s in &samples {
        blind.step(*s).unwrap();
    }
    assert_eq!(&none.history, blind.history());
    assert!(none.diagnostics.is_none());
}

#[test]
fn accepted_events_respect_lag_and_spacing() {
    let samples = two_laps();
    let params = SlamParams::default();
    let mut seen = 0;
    let traj = run_slam_with(&samples, &params, |snap| {
        assert_eq!(snap.positions.len(), snap.event.time_now + 1);
        assert!(snap.marginal_likelihood >= params.gamma_ml);
        seen += 1;
    })
    .unwrap();
    assert_eq!(seen, traj.events.len());
    assert_eq!(traj.len(), samples.len() + 1);
    assert_eq!(traj.landmarks.len(), traj.events.len());
    for (k, e) in traj.events.iter().enumerate() {
        assert_eq!(e.landmark_index, k);
        assert!(e.time_then + params.n_lag < e.time_now + 1);
        assert!(e.weight >= params.gamma);
    }
    for w in traj.events.windows(2) {
        assert!(w[1].time_now - w[0].time_now >= params.n_dist);
    }
    assert_eq!(run_slam(&samples, &params).unwrap(), traj);
}

#[test]
fn sequencing_errors_are_reported() {
    let samples = two_laps();
    let mut session = SlamSession::new(SlamParams::default()).unwrap();
    assert!(matches!(session.advance(), Err(SlamError::OutOfSequence(_))));
    assert!(matches!(session.try_close_loop(), Err(SlamError::OutOfSequence(_))));
    assert!(matches!(session.ingest(samples[1]), Err(SlamError::OutOfOrder { expected: 0, got: 1 })));
    session.ingest(samples[0]).unwrap();
    assert!(matches!(session.ingest(samples[1]), Err(SlamError::OutOfSequence(_))));
    session.advance().unwrap();
    let mut bad = samples[1];
    bad.dt = 0.0;
    assert!(matches!(session.ingest(bad), Err(SlamError::Sample(_))));
    assert!(matches!(run_slam(&[], &SlamParams::default()), Err(SlamError::Empty)));
    let invalid = SlamParams { n_lag: 2, ..SlamParams::default() };
    assert!(matches!(SlamSession::new(invalid), Err(SlamError::Params(_))));
}

#[test]
fn zero_noise_run_tracks_truth() {
    let spec =
        ScenarioSpec { bias_omega: 0.0, sigma_p: 0.0, sigma_omega: 0.0, sigma_mag: 0.0, laps: 2, ..Default::default() };
    let run = simulate(&spec).unwrap();
    // A diffuse landmark prior removes the pull of the zero prior mean.
    let params = SlamParams { p0_landmark: 1e8, ..SlamParams::default() };
    let traj = run_slam(&run.samples, &params).unwrap();
    assert!(traj.events.len() > 30);
    let worst = traj.positions().iter().zip(&run.truth.positions).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn accepted_update_pulls_position_and_landmark_together() {
    let samples = two_laps();
    let params = SlamParams::default();
    let traj = run_slam(&samples, &params).unwrap();
    for (k, e) in traj.events.iter().enumerate() {
        let out =
            rerun_with_loop_closure(&samples, &traj.events[..=k], e.time_now, &params, HistoryDetail::Compact).unwrap();
        let before = out.diagnostics.unwrap().residual.norm();
        let m = &out.history.records[e.time_now].filtered_mean;
        let o = 4 + 2 * k;
        let after = ((m[0] - m[o]).powi(2) + (m[1] - m[o + 1]).powi(2)).sqrt();
        assert!(after <= before, "event {k}: {after} > {before}");
    }
}
