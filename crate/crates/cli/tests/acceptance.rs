//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use momct_core::filter::{likelihood, systematic_indices};
use momct_core::geo::{enu_to_geo, geo_to_enu};
use momct_core::metrics::{compute_rmse, track_samples};
use momct_core::model::{decode_message, encode_message};
use momct_core::pipeline::{run_e2e, RunConfig};
use momct_core::simulator::{run_scenario, CameraSpec, ChannelSpec, Motion, ObjectSpec};
use momct_core::{
    ClassLabel, EngineConfig, EnuPoint, Event, FilterConfig, FusionEngine, GeoPoint,
    KinematicState, Observation, Particle, ParticleFilter, ReferenceOrigin, ScenarioConfig,
    TrackPoint, Tracklet, TrackletMessage,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[path = "../../core/tests/support/kalman.rs"]
mod kalman;

use kalman::{kalman_track, KalmanParams};

const SEEDS: u64 = 20;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn origin() -> ReferenceOrigin {
    ReferenceOrigin::new(GeoPoint::new(41.3851, 2.1734).unwrap()).unwrap()
}

fn geo(east: f64, north: f64) -> GeoPoint {
    enu_to_geo(&EnuPoint::new(east, north), &origin()).unwrap()
}

fn cv_object(object_id: u64, east: f64, north: f64, ve: f64, vn: f64) -> ObjectSpec {
    ObjectSpec {
        object_id,
        class_label: ClassLabel::Vehicle,
        initial_position: Some(geo(east, north)),
        motion: Motion::ConstantVelocity { vn, ve },
    }
}

fn camera(id: &str, east: f64, north: f64, p_detect: f64, sigma: f64) -> CameraSpec {
    CameraSpec {
        camera_id: id.into(),
        position: Some(geo(east, north)),
        range: 300.0,
        frame_period: 0.1,
        p_detect,
        meas_noise_std: sigma,
        mounted_on: None,
        points_per_message: 1,
    }
}

fn scenario(
    duration: f64,
    objects: Vec<ObjectSpec>,
    cameras: Vec<CameraSpec>,
    seed: u64,
) -> ScenarioConfig {
    ScenarioConfig {
        duration,
        origin: origin(),
        objects,
        cameras,
        channel: ChannelSpec::default(),
        seed,
    }
}

fn lossless() -> ChannelSpec {
    ChannelSpec {
        loss_prob: 0.0,
        ..ChannelSpec::default()
    }
}

fn filter_oracle_equivalence() -> Outcome {
    let cfg = FilterConfig {
        n_particles: 2000,
        meas_variance: 4.0,
        ..FilterConfig::default()
    };
    let params = KalmanParams {
        process_noise_pos: cfg.process_noise_pos,
        process_noise_vel: cfg.process_noise_vel,
        meas_variance: cfg.meas_variance,
        init_pos_var: cfg.init_pos_std.powi(2),
        init_vel_var: cfg.init_vel_std.powi(2),
    };
    let (ve, vn) = (4.0, 3.0);
    let mut pf_sq = 0.0;
    let mut kf_sq = 0.0;
    let mut count = 0usize;
    let mut worst_ratio: f64 = 0.0;
    let mut pf_time = 0.0;
    for seed in 0..SEEDS {
        let mut sc = scenario(
            10.0,
            vec![cv_object(0, 0.0, 0.0, ve, vn)],
            vec![camera("cam", 0.0, 0.0, 1.0, 2.0)],
            seed,
        );
        sc.channel = lossless();
        let out = run_scenario(&sc).map_err(|e| e.to_string())?;
        let mut meas: Vec<(f64, f64, f64)> = out
            .tracklet_messages()
            .map(|m| {
                let p = &m.tracklet.points[0];
                let e = geo_to_enu(&p.pos, &origin());
                (p.t, e.east, e.north)
            })
            .collect();
        meas.sort_by(|a, b| a.0.total_cmp(&b.0));
        if meas.len() != 100 {
            return Err(format!(
                "seed {seed}: expected 100 measurements, got {}",
                meas.len()
            ));
        }

        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs: Vec<Observation> = meas
            .iter()
            .map(|&(t, e, n)| Observation {
                t,
                pos: EnuPoint::new(e, n),
            })
            .collect();
        let mut pf = ParticleFilter::init(&obs[0], &cfg, &mut rng);
        let mut pf_est = vec![pf.estimate().position()];
        for o in &obs[1..] {
            pf.step(o, &cfg, &mut rng).map_err(|e| e.to_string())?;
            pf_est.push(pf.estimate().position());
        }
        pf_time += started.elapsed().as_secs_f64();

        let kf_est = kalman_track(&meas, &params);
        let (mut p_sq, mut k_sq) = (0.0, 0.0);
        for ((&(t, _, _), p), k) in meas.iter().zip(&pf_est).zip(&kf_est) {
            let (te, tn) = (ve * t, vn * t);
            p_sq += (p.east - te).powi(2) + (p.north - tn).powi(2);
            k_sq += (k.0 - te).powi(2) + (k.1 - tn).powi(2);
        }
        worst_ratio = worst_ratio.max((p_sq / k_sq).sqrt());
        pf_sq += p_sq;
        kf_sq += k_sq;
        count += meas.len();
    }
    let pf_rmse = (pf_sq / count as f64).sqrt();
    let kf_rmse = (kf_sq / count as f64).sqrt();
    let ratio = pf_rmse / kf_rmse;
    let msg = format!(
        "PF RMSE {pf_rmse:.4} m vs Kalman {kf_rmse:.4} m over {SEEDS} seeds, ratio {ratio:.4} \
         (worst single seed {worst_ratio:.4}), PF runtime {pf_time:.2} s"
    );
    if ratio <= 1.25 && pf_time < 10.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn multi_camera_gain() -> Outcome {
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..SEEDS {
        let objects = vec![cv_object(0, -40.0, 0.0, 4.0, 0.0)];
        let a = camera("a", 0.0, -20.0, 0.9, 2.0);
        let b = camera("b", 0.0, 20.0, 0.9, 2.0);
        let one = run_e2e(&RunConfig::new(scenario(
            20.0,
            objects.clone(),
            vec![a.clone()],
            seed,
        )))
        .map_err(|e| e.to_string())?;
        let two = run_e2e(&RunConfig::new(scenario(20.0, objects, vec![a, b], seed)))
            .map_err(|e| e.to_string())?;
        let (r1, r2) = (
            one.report
                .overall_rmse
                .ok_or("single camera produced no track")?,
            two.report
                .overall_rmse
                .ok_or("two cameras produced no track")?,
        );
        if r2 < r1 {
            wins += 1;
        }
        lines.push(format!("{r2:.3}/{r1:.3}"));
    }
    let msg = format!(
        "two-camera RMSE lower in {wins}/{SEEDS} seeds (two/one: {})",
        lines.join(" ")
    );
    if wins >= 16 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn final_estimates(engine: &FusionEngine) -> BTreeMap<u64, KinematicState> {
    engine
        .tracks()
        .iter()
        .chain(engine.retired_tracks())
        .map(|t| (t.track_id.0, t.filter.estimate()))
        .collect()
}

fn fuse_in_order(messages: &[TrackletMessage], seed: u64) -> Result<FusionEngine, String> {
    let mut engine =
        FusionEngine::new(EngineConfig::default(), origin(), seed).map_err(|e| e.to_string())?;
    for m in messages {
        engine.process(m).map_err(|e| e.to_string())?;
    }
    engine.finish().map_err(|e| e.to_string())?;
    Ok(engine)
}

fn asynchrony_invariance() -> Outcome {
    let mut sc = scenario(
        15.0,
        vec![
            cv_object(0, -30.0, 5.0, 4.0, 0.0),
            cv_object(1, 30.0, -5.0, -3.0, 1.0),
        ],
        vec![
            camera("a", 0.0, -20.0, 0.9, 2.0),
            camera("b", 0.0, 20.0, 0.9, 2.0),
        ],
        11,
    );
    sc.channel = ChannelSpec {
        base_latency: 0.0,
        jitter_std: 0.0,
        loss_prob: 0.0,
    };
    let out = run_scenario(&sc).map_err(|e| e.to_string())?;
    let in_order: Vec<TrackletMessage> = out.tracklet_messages().cloned().collect();
    let reference = fuse_in_order(&in_order, 3)?;
    let want = final_estimates(&reference);

    let mut max_diff: f64 = 0.0;
    let mut late = 0;
    let shuffles = 10;
    for s in 0..shuffles {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + s);
        let mut delayed: Vec<(f64, usize)> = in_order
            .iter()
            .enumerate()
            .map(|(i, m)| (m.sent_at + rng.random_range(0.0..0.3), i))
            .collect();
        delayed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let shuffled: Vec<TrackletMessage> =
            delayed.iter().map(|&(_, i)| in_order[i].clone()).collect();
        if shuffled == in_order {
            return Err(format!("shuffle {s} left the order unchanged"));
        }
        let engine = fuse_in_order(&shuffled, 3)?;
        late += engine.stats().late_dropped;
        let got = final_estimates(&engine);
        if got.keys().ne(want.keys()) {
            return Err(format!("shuffle {s}: track ids differ"));
        }
        for (id, a) in &got {
            let b = &want[id];
            for d in [
                a.x_lat - b.x_lat,
                a.dx_lat - b.dx_lat,
                a.x_lon - b.x_lon,
                a.dx_lon - b.dx_lon,
            ] {
                max_diff = max_diff.max(d.abs());
            }
        }
    }
    let msg = format!(
        "{} tracks, {shuffles} delivery shuffles with delays below the watermark: max estimate difference {max_diff:e}, late drops {late}",
        want.len()
    );
    if max_diff < 1e-9 && late == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn collision_detection() -> Outcome {
    // Perpendicular crossing: both objects reach the origin at t = 10.
    let crossing = scenario(
        20.0,
        vec![
            cv_object(0, -50.0, 0.0, 5.0, 0.0),
            cv_object(1, 0.0, -50.0, 0.0, 5.0),
        ],
        vec![camera("cam", 20.0, 20.0, 1.0, 2.0)],
        0,
    );
    let run = run_e2e(&RunConfig::new(crossing)).map_err(|e| e.to_string())?;
    let plain = run.plain_events();
    let matching = compute_rmse(
        &track_samples(&plain),
        &run.scenario.truth,
        &momct_core::MetricsConfig::default(),
    )
    .matching;
    let first = run.events.iter().find_map(|e| match e.event {
        Event::Alert { a, b, t, d } => {
            let pair = (matching.get(&a).copied(), matching.get(&b).copied());
            matches!(pair, (Some(0), Some(1)) | (Some(1), Some(0))).then_some((e.at, t, d))
        }
        _ => None,
    });
    let Some((at, t_closest, d)) = first else {
        return Err("crossing: no alert between the crossing objects".into());
    };
    let lead = 10.0 - at;

    let divergent = scenario(
        20.0,
        vec![
            cv_object(0, 0.0, 12.0, 0.0, 5.0),
            cv_object(1, 0.0, -12.0, 0.0, -5.0),
        ],
        vec![camera("cam", 20.0, 0.0, 1.0, 2.0)],
        0,
    );
    let run = run_e2e(&RunConfig::new(divergent)).map_err(|e| e.to_string())?;
    let min_sep = run
        .scenario
        .truth
        .chunks(2)
        .map(|p| {
            geo_to_enu(&GeoPoint::new(p[0].lat, p[0].lon).unwrap(), &origin()).distance(
                &geo_to_enu(&GeoPoint::new(p[1].lat, p[1].lon).unwrap(), &origin()),
            )
        })
        .fold(f64::INFINITY, f64::min);
    let divergent_alerts = run
        .events
        .iter()
        .filter(|e| matches!(e.event, Event::Alert { .. }))
        .count();
    let msg = format!(
        "crossing alert raised at t={at:.2} s ({lead:.2} s before closest approach, predicted CPA t={t_closest:.2} d={d:.2} m); \
         divergent scenario (min separation {min_sep:.1} m) raised {divergent_alerts} alerts"
    );
    if lead >= 2.0 && min_sep > 20.0 && divergent_alerts == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn run_binary(config: &Path, out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_momct"))
        .arg("run")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--seed", "42"])
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&status.stderr).into_owned())
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sc = scenario(
        12.0,
        vec![
            cv_object(0, -30.0, 0.0, 5.0, 0.0),
            cv_object(1, 0.0, -30.0, 0.0, 5.0),
        ],
        vec![
            camera("a", 10.0, 10.0, 0.9, 2.0),
            camera("b", -10.0, -10.0, 0.9, 2.0),
        ],
        0,
    );
    let config = dir.path().join("scenario.json");
    std::fs::write(
        &config,
        serde_json::to_string_pretty(&RunConfig::new(sc)).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_binary(&config, &a)?;
    run_binary(&config, &b)?;
    let mut sizes = Vec::new();
    for name in [
        "truth.jsonl",
        "messages.jsonl",
        "events.jsonl",
        "metrics.json",
    ] {
        let x = std::fs::read(a.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let y = std::fs::read(b.join(name)).map_err(|e| format!("{name}: {e}"))?;
        if x.is_empty() || x != y {
            return Err(format!("{name} differs between runs"));
        }
        sizes.push(format!("{name} {} B", x.len()));
    }
    Ok(format!(
        "two seeded runs byte-identical: {}",
        sizes.join(", ")
    ))
}

fn unit_spot_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = Vec::new();

    let mut worst_geo: f64 = 0.0;
    for _ in 0..1000 {
        let reference = ReferenceOrigin::new(
            GeoPoint::new(
                rng.random_range(-80.0..80.0),
                rng.random_range(-180.0..180.0),
            )
            .unwrap(),
        )
        .unwrap();
        let p = GeoPoint::new(
            reference.origin.lat + rng.random_range(-0.05..0.05),
            reference.origin.lon + rng.random_range(-0.05..0.05),
        )
        .unwrap();
        let q = enu_to_geo(&geo_to_enu(&p, &reference), &reference).unwrap();
        worst_geo = worst_geo
            .max((q.lat - p.lat).abs())
            .max((q.lon - p.lon).abs());
    }
    if worst_geo > 1e-9 {
        failures.push(format!("geo round trip error {worst_geo:e} deg"));
    }

    for i in 0..200 {
        let points = (0..rng.random_range(1..6))
            .map(|k| TrackPoint {
                t: i as f64 + k as f64 * 0.1,
                pos: GeoPoint::new(
                    41.0 + rng.random::<f64>() * 1e-3,
                    2.0 + rng.random::<f64>() * 1e-3,
                )
                .unwrap(),
            })
            .collect::<Vec<_>>();
        let m = TrackletMessage::new(
            points.last().unwrap().t + rng.random::<f64>(),
            Tracklet {
                camera_id: format!("cam-{i}"),
                local_object_id: rng.random(),
                class_label: ClassLabel::ALL[i % 4],
                points,
            },
        );
        if decode_message(&encode_message(&m)).ok().as_ref() != Some(&m) {
            failures.push(format!("codec round trip failed for message {i}"));
            break;
        }
    }

    let cfg = FilterConfig::default();
    let start = Observation {
        t: 0.0,
        pos: EnuPoint::new(0.0, 0.0),
    };
    let mut pf = ParticleFilter::init(&start, &cfg, &mut rng);
    for step in 1..=30 {
        let obs = Observation {
            t: step as f64 * 0.1,
            pos: EnuPoint::new(step as f64 * 0.4, rng.random_range(-1.0..1.0)),
        };
        pf.predict(obs.t, &cfg, &mut rng).unwrap();
        pf.update(&obs, cfg.meas_variance).unwrap();
        let sum = pf.weight_sum();
        let ess = pf.effective_sample_size();
        if (sum - 1.0).abs() > 1e-9 {
            failures.push(format!("weights sum to {sum} after update {step}"));
        }
        if !(1.0 - 1e-9..=cfg.n_particles as f64 + 1e-9).contains(&ess) {
            failures.push(format!("ESS {ess} out of bounds at update {step}"));
        }
        pf.resample(&mut rng);
    }

    for trial in 0..200 {
        let n = rng.random_range(1..40);
        let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3)).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let offset: f64 = rng.random();
        let got = systematic_indices(&w, offset);
        // Cumulative-sum oracle: particle j owns the positions falling in its
        // slice of the cumulative weight line.
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for x in &w {
            acc += x;
            cumulative.push(acc);
        }
        let want: Vec<usize> = (0..n)
            .map(|i| {
                let u = (offset + i as f64) / n as f64;
                cumulative.iter().position(|&c| c > u).unwrap_or(n - 1)
            })
            .collect();
        let mut copies = vec![0usize; n];
        got.iter().for_each(|&j| copies[j] += 1);
        let bounded = w
            .iter()
            .zip(&copies)
            .all(|(x, &c)| (c as f64 - x * n as f64).abs() < 1.0 + 1e-9);
        if got != want || !bounded {
            failures.push(format!(
                "systematic resampling trial {trial} disagrees with the cumulative-sum oracle"
            ));
            break;
        }
    }

    let quiet = FilterConfig {
        process_noise_pos: 0.0,
        process_noise_vel: 0.0,
        ..FilterConfig::default()
    };
    let mut one = ParticleFilter::from_particles(
        vec![Particle {
            state: KinematicState::new(1.0, 2.0, 3.0, 4.0),
            weight: 1.0,
        }],
        0.0,
    );
    one.predict(0.5, &quiet, &mut rng).unwrap();
    let got = one.particles()[0].state;
    if got != KinematicState::new(2.0, 2.0, 5.0, 4.0) {
        failures.push(format!("predict example gave {got:?}"));
    }

    let l = likelihood(&KinematicState::default(), &start, 1.0);
    if (l - 0.3989422804).abs() > 1e-9 {
        failures.push(format!("likelihood at d=0, k=1 is {l}"));
    }

    if failures.is_empty() {
        Ok(format!(
            "geo round trip max error {worst_geo:e} deg; codec, normalization, ESS, resampling, predict, likelihood checks agree"
        ))
    } else {
        Err(failures.join("; "))
    }
}

fn noiseless_smoke() -> Outcome {
    let mut sc = scenario(
        15.0,
        vec![cv_object(0, -30.0, -10.0, 4.0, 1.5)],
        vec![camera("cam", 0.0, 0.0, 1.0, 0.0)],
        5,
    );
    sc.channel = ChannelSpec {
        base_latency: 0.05,
        jitter_std: 0.0,
        loss_prob: 0.0,
    };
    let run = run_e2e(&RunConfig::new(sc)).map_err(|e| e.to_string())?;
    let rmse = run
        .report
        .overall_rmse
        .ok_or("no track matched the object")?;
    let msg = format!(
        "overall RMSE {rmse:.4} m after 1 s burn-in, track-count error {}",
        run.report.track_count_error
    );
    if rmse < 0.5 && run.report.track_count_error == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("filter_oracle_equivalence", filter_oracle_equivalence),
        ("multi_camera_gain", multi_camera_gain),
        ("asynchrony_invariance", asynchrony_invariance),
        ("collision_detection", collision_detection),
        ("determinism", determinism),
        ("unit_spot_checks", unit_spot_checks),
        ("noiseless_smoke", noiseless_smoke),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!(
        "{} of {} acceptance criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
