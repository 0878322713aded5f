//! Acceptance gate: end-to-end checks of the detection pipeline against
//! analytically known ground truth, hand-computed metric references, and
//! reproducibility requirements. Each test prints one PASS/FAIL line
//! (visible with `cargo test -- --nocapture`); tolerances are pinned in the
//! assertions.

use std::time::Instant;

use scoread::data_io::flatten;
use scoread::detector::{anomaly_vector, detect_map, save_map, AnomalyMap, DetectorParams};
use scoread::eval::{
    auc_pr, auc_triplet, box_stats, evaluate_map, metrics_report, rank_auc, threshold_curves,
    DEFAULT_N_TAU,
};
use scoread::numerics::{finite_difference_gradient, SeededRng};
use scoread::oracle::{
    generate_scene, numerical_rank, reference_scene, GaussianSubspaceModel,
};
use scoread::sgm::{
    dsm_loss_and_grad_with_draws, sample_draws, train, ArchConfig, ContextArch, ScoreNetwork,
    SigmaSchedule, TrainConfig, Weighting,
};

fn criterion(name: &str, body: impl FnOnce() -> Result<String, String>) {
    match body() {
        Ok(detail) => println!("ACCEPTANCE {name}: PASS ({detail})"),
        Err(why) => {
            println!("ACCEPTANCE {name}: FAIL ({why})");
            panic!("{name}: {why}");
        }
    }
}

fn fail<T: std::fmt::Debug>(what: &str) -> impl FnOnce(T) -> String + '_ {
    move |e| format!("{what}: {e:?}")
}

/// With the exact score of a known subspace model, the normalized-score
/// ensemble must separate on-manifold pixels (strength near `sqrt(k)`) from
/// pixels displaced far along the normal space (strength near `k`), and the
/// strengths must rank the two populations almost perfectly.
#[test]
fn ensemble_separates_manifold_from_far_points() {
    criterion("analytic ensemble separation", || {
        let start = Instant::now();
        let schedule = SigmaSchedule::default();
        let mut rng = SeededRng::new(101, 0);
        let model = GaussianSubspaceModel::random(50, 5, vec![1.0; 5], vec![0.0; 50], &mut rng)
            .map_err(fail("model"))?;
        let params = DetectorParams {
            t: 0.01,
            k: 100,
            window: None,
            seed: 44,
        };
        let sigma = schedule.sigma_at(params.t).map_err(fail("sigma"))?;
        let far_distance = 100.0 * sigma;

        let mut strengths = Vec::new();
        let mut labels = Vec::new();
        let mut on_total = 0.0;
        let trials = 200u64;
        for trial in 0..trials {
            let x = model.sample(&mut rng);
            let mut score_fn = |x_t: &[f64], t: f64, _: Option<&scoread::data_io::ContextSet>| {
                model.analytic_score(x_t, t, &schedule)
            };
            let mut pixel_rng = SeededRng::new(params.seed, trial);
            let vector =
                anomaly_vector(&mut score_fn, &x, None, &params, &schedule, &mut pixel_rng)
                    .map_err(fail("on-manifold ensemble"))?;
            on_total += vector.strength().powi(2) / params.k as f64;
            strengths.push(vector.strength());
            labels.push(0u8);
        }
        let on_mean = on_total / trials as f64;
        if !(0.8..=1.2).contains(&on_mean) {
            return Err(format!(
                "on-manifold mean squared strength / k = {on_mean}, expected within [0.8, 1.2]"
            ));
        }

        let mut far_min_fraction = f64::INFINITY;
        for trial in 0..trials {
            let base = model.sample(&mut rng);
            let normal = model
                .random_normal_direction(&mut rng)
                .map_err(fail("normal direction"))?;
            let x: Vec<f64> = base
                .iter()
                .zip(&normal)
                .map(|(b, n)| b + far_distance * n)
                .collect();
            let mut score_fn = |x_t: &[f64], t: f64, _: Option<&scoread::data_io::ContextSet>| {
                model.analytic_score(x_t, t, &schedule)
            };
            let mut pixel_rng = SeededRng::new(params.seed, trials + trial);
            let vector =
                anomaly_vector(&mut score_fn, &x, None, &params, &schedule, &mut pixel_rng)
                    .map_err(fail("far ensemble"))?;
            far_min_fraction = far_min_fraction.min(vector.strength() / params.k as f64);
            strengths.push(vector.strength());
            labels.push(1u8);
        }
        if far_min_fraction < 0.9 {
            return Err(format!(
                "weakest far point reached only {far_min_fraction} of k, expected >= 0.9"
            ));
        }

        let auc = rank_auc(&strengths, &labels).map_err(fail("rank auc"))?;
        if auc < 0.99 {
            return Err(format!("rank AUC {auc}, expected >= 0.99"));
        }
        let elapsed = start.elapsed().as_secs_f64();
        if elapsed >= 60.0 {
            return Err(format!("took {elapsed:.1} s, expected < 60 s"));
        }
        Ok(format!(
            "on-manifold mean {on_mean:.3}, far min fraction {far_min_fraction:.3}, \
             rank AUC {auc:.4}, {elapsed:.1} s"
        ))
    });
}

/// A model trained on samples of a full-rank 10-dimensional Gaussian must
/// reproduce the analytic score direction: mean cosine similarity at a fixed
/// mid-range time of at least 0.9 on freshly noised points.
#[test]
fn trained_score_approximates_analytic_score() {
    criterion("trained score accuracy", || {
        let schedule = SigmaSchedule::default();
        let mut rng = SeededRng::new(202, 0);
        let eigenvalues: Vec<f64> = (0..10).map(|i| 0.02 * (i + 1) as f64).collect();
        let model = GaussianSubspaceModel::random(10, 10, eigenvalues, vec![0.5; 10], &mut rng)
            .map_err(fail("model"))?;

        let count = 4096;
        let mut flat = Vec::with_capacity(count * 10);
        for _ in 0..count {
            flat.extend(model.sample(&mut rng));
        }
        let spectra =
            scoread::data_io::SpectraMatrix::new(count, 10, flat).map_err(fail("spectra"))?;

        let arch = ArchConfig {
            bands: 10,
            width: 32,
            blocks: 2,
            kernel: 3,
            fourier_dim: 32,
            film_hidden: 32,
            context: None,
        };
        let config = TrainConfig {
            steps: 2000,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 7,
            ..TrainConfig::default()
        };
        let (net, report) =
            train(&arch, &schedule, &spectra, None, &config).map_err(fail("training"))?;

        let t = 0.3;
        let sigma = schedule.sigma_at(t).map_err(fail("sigma"))?;
        let mut cosine_total = 0.0;
        let trials = 1024;
        for _ in 0..trials {
            let x = model.sample(&mut rng);
            let x_t: Vec<f64> = x.iter().map(|v| v + sigma * rng.normal()).collect();
            let predicted = net.score(&x_t, t, None).map_err(fail("network score"))?;
            let exact = model
                .analytic_score(&x_t, t, &schedule)
                .map_err(fail("analytic score"))?;
            let dot: f64 = predicted.iter().zip(&exact).map(|(a, b)| a * b).sum();
            let np = predicted.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ne = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
            cosine_total += dot / (np * ne);
        }
        let mean_cosine = cosine_total / trials as f64;
        if mean_cosine < 0.9 {
            return Err(format!(
                "mean cosine to the analytic score {mean_cosine:.4}, expected >= 0.9 \
                 (final loss {:.4})",
                report.final_loss
            ));
        }
        Ok(format!(
            "mean cosine {mean_cosine:.4} over {trials} noised points, final loss {:.4}",
            report.final_loss
        ))
    });
}

/// At a near-zero noise scale the analytic score of an off-subspace point
/// must align with the inward normal, leak almost nothing into the subspace,
/// and the scores of noised on-subspace samples must span exactly the normal
/// space.
#[test]
fn analytic_scores_align_with_normals_and_span_normal_space() {
    criterion("small-noise score geometry", || {
        let schedule = SigmaSchedule::new(25.0, 1e-4, 1.0).map_err(fail("schedule"))?;
        let t = 0.001;
        let mut rng = SeededRng::new(303, 0);
        let model = GaussianSubspaceModel::random(20, 3, vec![100.0; 3], vec![0.0; 20], &mut rng)
            .map_err(fail("model"))?;

        let mut alignment_total = 0.0;
        let mut alignment_min = f64::INFINITY;
        let mut leakage_total = 0.0;
        let trials = 100;
        for _ in 0..trials {
            let base = model.sample(&mut rng);
            let normal = model
                .random_normal_direction(&mut rng)
                .map_err(fail("normal direction"))?;
            let x: Vec<f64> = base.iter().zip(&normal).map(|(b, n)| b + 0.5 * n).collect();
            let score = model
                .analytic_score(&x, t, &schedule)
                .map_err(fail("score"))?;
            let alignment = model
                .inward_alignment(&x, &score)
                .map_err(fail("alignment"))?;
            alignment_total += alignment;
            alignment_min = alignment_min.min(alignment);
            leakage_total += model
                .tangential_fraction(&score)
                .map_err(fail("leakage"))?;
        }
        let alignment_mean = alignment_total / trials as f64;
        let leakage_mean = leakage_total / trials as f64;
        if alignment_mean < 0.999 {
            return Err(format!(
                "mean inward alignment {alignment_mean:.6}, expected >= 0.999"
            ));
        }
        if leakage_mean > 0.05 {
            return Err(format!(
                "mean tangential leakage {leakage_mean:.4}, expected <= 0.05"
            ));
        }

        let sigma = schedule.sigma_at(t).map_err(fail("sigma"))?;
        let score_rank = |model: &GaussianSubspaceModel,
                              rng: &mut SeededRng|
         -> Result<usize, String> {
            let scores: Vec<Vec<f64>> = (0..200)
                .map(|_| {
                    let base = model.sample(rng);
                    let noised: Vec<f64> = base.iter().map(|b| b + sigma * rng.normal()).collect();
                    model.analytic_score(&noised, t, &schedule)
                })
                .collect::<scoread::Result<_>>()
                .map_err(fail("noised scores"))?;
            numerical_rank(&scores, 1e-2).map_err(fail("rank"))
        };
        let wide_rank = score_rank(&model, &mut rng)?;
        if wide_rank != 17 {
            return Err(format!("20-band score collection rank {wide_rank}, expected 17"));
        }
        let narrow = GaussianSubspaceModel::random(5, 2, vec![100.0; 2], vec![0.0; 5], &mut rng)
            .map_err(fail("narrow model"))?;
        let narrow_rank = score_rank(&narrow, &mut rng)?;
        if narrow_rank != 3 {
            return Err(format!("5-band score collection rank {narrow_rank}, expected 3"));
        }
        Ok(format!(
            "mean alignment {alignment_mean:.5} (min {alignment_min:.5}), \
             mean leakage {leakage_mean:.4}, ranks {wide_rank} and {narrow_rank}"
        ))
    });
}

/// The threshold-sweep metrics must reproduce hand-computed references: the
/// four-pixel sweep, the precision-recall fixtures, the published
/// combination row, and the metric identities.
#[test]
fn threshold_metrics_match_hand_computed_references() {
    criterion("metric reference values", || {
        let scores = [0.1, 0.4, 0.6, 0.9];
        let labels = [0u8, 0, 1, 1];
        let curves = threshold_curves(&scores, &labels, 11).map_err(fail("curves"))?;
        let (auc_pd_pf, auc_pd_tau, auc_pf_tau) = auc_triplet(&curves);
        for (value, expected, name) in [
            (auc_pd_pf, 1.0, "detection/false-alarm AUC"),
            (auc_pd_tau, 0.8, "detection/threshold AUC"),
            (auc_pf_tau, 0.3, "false-alarm/threshold AUC"),
        ] {
            if (value - expected).abs() > 1e-12 {
                return Err(format!("{name} = {value}, expected {expected}"));
            }
        }
        let pr = auc_pr(&scores, &labels).map_err(fail("pr"))?;
        if (pr - 1.0).abs() > 1e-12 {
            return Err(format!("separable PR AUC = {pr}, expected 1"));
        }

        let interleaved = auc_pr(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]).map_err(fail("pr"))?;
        if (interleaved - 19.0 / 24.0).abs() > 1e-12 {
            return Err(format!("interleaved PR AUC = {interleaved}, expected 19/24"));
        }

        let report = metrics_report(0.9996, 0.5660, 0.0792, 1.0);
        for (value, expected, name) in [
            (report.td, 1.5656, "TD"),
            (report.bs, 0.9204, "BS"),
            (report.tdbs, 0.4868, "TD-BS"),
            (report.odp, 1.4864, "ODP"),
        ] {
            if (value - expected).abs() > 1e-12 {
                return Err(format!("{name} = {value}, expected {expected}"));
            }
        }
        let snpr = report.snpr.ok_or("SNPR undefined".to_string())?;
        if (snpr - 7.1471).abs() / 7.1471 > 1e-3 {
            return Err(format!("SNPR = {snpr}, expected 7.1471 within 0.1%"));
        }

        let mut rng = SeededRng::new(505, 0);
        for _ in 0..1000 {
            let df = rng.uniform(0.0, 1.0);
            let dt = rng.uniform(0.0, 1.0);
            let ft = rng.uniform(0.01, 1.0);
            let report = metrics_report(df, dt, ft, 1.0);
            let identities = [
                (report.td, df + dt, "TD = AUC_df + AUC_dt"),
                (report.bs, df - ft, "BS = AUC_df - AUC_ft"),
                (report.tdbs, dt - ft, "TD-BS = AUC_dt - AUC_ft"),
                (report.odp, df + dt - ft, "ODP = AUC_df + AUC_dt - AUC_ft"),
                (report.snpr.unwrap_or(f64::NAN), dt / ft, "SNPR = AUC_dt / AUC_ft"),
            ];
            for (value, expected, name) in identities {
                if (value - expected).abs() > 1e-12 {
                    return Err(format!(
                        "identity {name} violated: {value} vs {expected} \
                         at ({df}, {dt}, {ft})"
                    ));
                }
            }
        }

        let background = box_stats(&[0.0, 0.1, 0.2, 0.3]).map_err(fail("box"))?;
        let anomaly = box_stats(&[0.8, 0.9, 1.0]).map_err(fail("box"))?;
        let summaries = [
            (background.lower_quartile, 0.075),
            (background.median, 0.15),
            (background.upper_quartile, 0.225),
            (anomaly.lower_quartile, 0.85),
            (anomaly.median, 0.9),
            (anomaly.upper_quartile, 0.95),
        ];
        for (value, expected) in summaries {
            if (value - expected).abs() > 1e-12 {
                return Err(format!("quartile {value}, expected {expected}"));
            }
        }
        Ok("sweep, PR, combination row, 1000 identity triplets, and quartile fixtures \
            all matched"
            .to_string())
    });
}

/// Backpropagated gradients of the training objective must match central
/// finite differences to a relative error of 1e-4 on a small
/// context-conditional network.
#[test]
fn training_gradients_match_finite_differences() {
    criterion("gradient check", || {
        let schedule = SigmaSchedule::default();
        let arch = ArchConfig {
            bands: 6,
            width: 4,
            blocks: 2,
            kernel: 3,
            fourier_dim: 4,
            film_hidden: 6,
            context: Some(ContextArch {
                count: 6,
                hidden: 5,
                encoded: 4,
            }),
        };
        let mut rng = SeededRng::new(404, 0);
        let mut net =
            ScoreNetwork::init(arch.clone(), schedule, &mut rng).map_err(fail("init"))?;
        if net.param_count() > 2000 {
            return Err(format!(
                "gradient-check network has {} parameters, expected <= 2000",
                net.param_count()
            ));
        }
        for p in net.params_mut() {
            *p = 0.2 * rng.normal();
        }

        let batch_vecs: Vec<Vec<f64>> = (0..3).map(|_| rng.normal_vec(6)).collect();
        let batch: Vec<&[f64]> = batch_vecs.iter().map(Vec::as_slice).collect();
        let context_sets: Vec<scoread::data_io::ContextSet> = (0..3)
            .map(|_| scoread::data_io::ContextSet::new(6, 6, rng.normal_vec(36)))
            .collect::<scoread::Result<_>>()
            .map_err(fail("contexts"))?;
        let contexts: Vec<&scoread::data_io::ContextSet> = context_sets.iter().collect();
        let draws = sample_draws(3, 6, (0.01, 1.0), &mut rng);

        let (_, analytic) = dsm_loss_and_grad_with_draws(
            &net,
            &batch,
            Some(&contexts),
            &draws,
            Weighting::SigmaSquared,
        )
        .map_err(fail("loss"))?;

        let loss = |params: &[f64]| {
            let mut probe = net.clone();
            probe.params_mut().copy_from_slice(params);
            dsm_loss_and_grad_with_draws(
                &probe,
                &batch,
                Some(&contexts),
                &draws,
                Weighting::SigmaSquared,
            )
            .map(|(loss, _)| loss)
            .unwrap_or(f64::NAN)
        };
        let fd = finite_difference_gradient(loss, net.params(), 1e-5).map_err(fail("fd"))?;

        let mut worst = 0.0f64;
        for (a, f) in analytic.iter().zip(&fd) {
            let denominator = f.abs().max(1e-6);
            worst = worst.max((a - f).abs() / denominator);
        }
        if worst > 1e-4 {
            return Err(format!(
                "worst relative gradient error {worst:.2e} over {} parameters, expected <= 1e-4",
                net.param_count()
            ));
        }
        Ok(format!(
            "worst relative error {worst:.2e} over {} parameters",
            net.param_count()
        ))
    });
}

/// Training on the pinned synthetic scene and scoring it end to end must
/// reach a detection/false-alarm AUC of at least 0.95 and a PR AUC of at
/// least 0.5 within the time budget.
#[test]
fn synthetic_scene_pipeline_meets_detection_targets() {
    criterion("synthetic end-to-end detection", || {
        let start = Instant::now();
        let scene = reference_scene().map_err(fail("scene"))?;
        let spectra = flatten(&scene.cube);
        let schedule = SigmaSchedule::default();
        let arch = ArchConfig {
            bands: 30,
            width: 32,
            blocks: 2,
            kernel: 3,
            fourier_dim: 32,
            film_hidden: 32,
            context: None,
        };
        let config = TrainConfig {
            steps: 600,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
            ..TrainConfig::default()
        };
        let (net, report) =
            train(&arch, &schedule, &spectra, None, &config).map_err(fail("training"))?;

        let params = DetectorParams {
            t: 0.05,
            k: 100,
            window: None,
            seed: 0,
        };
        let map = detect_map(&scene.cube, &net, &params).map_err(fail("detection"))?;
        let evaluation =
            evaluate_map(&map, &scene.mask, DEFAULT_N_TAU).map_err(fail("evaluation"))?;

        let auc = evaluation.report.auc_pd_pf;
        let pr = evaluation.report.auc_pr;
        let elapsed = start.elapsed().as_secs_f64();
        if auc < 0.95 {
            return Err(format!(
                "detection/false-alarm AUC {auc:.4}, expected >= 0.95 (final loss {:.4})",
                report.final_loss
            ));
        }
        if pr < 0.5 {
            return Err(format!("PR AUC {pr:.4}, expected >= 0.5"));
        }
        if elapsed >= 900.0 {
            return Err(format!("took {elapsed:.0} s, expected < 900 s"));
        }
        Ok(format!(
            "AUC {auc:.4}, PR {pr:.4}, {elapsed:.0} s end to end"
        ))
    });
}

/// Optional benchmark against a real scene. Looks for a cube container and
/// mask under `SCOREAD_HYDICE_DIR` (or `data/hydice` next to the workspace);
/// reports the measured AUC without gating the suite when the data is
/// absent or the target is missed.
#[test]
fn real_scene_benchmark_when_data_present() {
    criterion("real-scene benchmark (non-gating)", || {
        let dir = std::env::var("SCOREAD_HYDICE_DIR").map(std::path::PathBuf::from).unwrap_or_else(
            |_| {
                std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
                    .join("../../data/hydice")
            },
        );
        let header = dir.join("cube.json");
        let mask_path = dir.join("mask.pgm");
        if !header.exists() || !mask_path.exists() {
            return Ok(format!("SKIP: no cube.json/mask.pgm under {}", dir.display()));
        }

        let cube = scoread::data_io::load_cube(&header, &header.with_extension("raw"))
            .map_err(fail("cube"))?;
        let cube = scoread::data_io::normalize_cube(&cube).map_err(fail("normalize"))?;
        let mask = scoread::data_io::load_mask(&mask_path).map_err(fail("mask"))?;
        let spectra = flatten(&cube);
        let schedule = SigmaSchedule::default();
        let arch = ArchConfig {
            bands: cube.bands(),
            width: 32,
            blocks: 2,
            kernel: 3,
            fourier_dim: 32,
            film_hidden: 32,
            context: None,
        };
        let config = TrainConfig {
            steps: 2000,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
            ..TrainConfig::default()
        };
        let (net, _) = train(&arch, &schedule, &spectra, None, &config).map_err(fail("training"))?;
        let params = DetectorParams {
            t: 0.05,
            k: 100,
            window: None,
            seed: 0,
        };
        let map = detect_map(&cube, &net, &params).map_err(fail("detection"))?;
        let evaluation = evaluate_map(&map, &mask, DEFAULT_N_TAU).map_err(fail("evaluation"))?;
        let auc = evaluation.report.auc_pd_pf;
        if auc >= 0.99 {
            Ok(format!("AUC {auc:.4} >= 0.99"))
        } else {
            Ok(format!("AUC {auc:.4} below the 0.99 target (non-gating)"))
        }
    });
}

/// Training must be bit-reproducible run to run, and detection must produce
/// identical files regardless of the number of worker threads.
#[test]
fn training_and_detection_are_bit_reproducible() {
    criterion("bit reproducibility", || {
        let mut rng = SeededRng::new(77, 0);
        let model = GaussianSubspaceModel::random(8, 2, vec![0.01; 2], vec![0.5; 8], &mut rng)
            .map_err(fail("model"))?;
        let scene = generate_scene(&model, 10, 10, 3, 0.5, &mut rng).map_err(fail("scene"))?;
        let spectra = flatten(&scene.cube);
        let schedule = SigmaSchedule::default();
        let arch = ArchConfig {
            bands: 8,
            width: 8,
            blocks: 1,
            kernel: 3,
            fourier_dim: 8,
            film_hidden: 8,
            context: None,
        };
        let config = TrainConfig {
            steps: 60,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 5,
            ..TrainConfig::default()
        };

        let dir = tempfile::tempdir().map_err(fail("tempdir"))?;
        let first_path = dir.path().join("first.scad");
        let second_path = dir.path().join("second.scad");
        let (first, _) =
            train(&arch, &schedule, &spectra, None, &config).map_err(fail("first train"))?;
        let (second, _) =
            train(&arch, &schedule, &spectra, None, &config).map_err(fail("second train"))?;
        scoread::sgm::save_model(&first, &first_path).map_err(fail("save"))?;
        scoread::sgm::save_model(&second, &second_path).map_err(fail("save"))?;
        let first_bytes = std::fs::read(&first_path).map_err(fail("read"))?;
        let second_bytes = std::fs::read(&second_path).map_err(fail("read"))?;
        if first_bytes != second_bytes {
            return Err("two same-seed training runs produced different model files".into());
        }

        let reseeded = TrainConfig { seed: 6, ..config.clone() };
        let (third, _) =
            train(&arch, &schedule, &spectra, None, &reseeded).map_err(fail("third train"))?;
        scoread::sgm::save_model(&third, &second_path).map_err(fail("save"))?;
        if first_bytes == std::fs::read(&second_path).map_err(fail("read"))? {
            return Err("different seeds produced identical model files".into());
        }

        let params = DetectorParams {
            t: 0.05,
            k: 16,
            window: None,
            seed: 3,
        };
        let run = |threads: usize| -> Result<AnomalyMap, String> {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(fail("pool"))?
                .install(|| detect_map(&scene.cube, &first, &params))
                .map_err(fail("detect"))
        };
        let serial = run(1)?;
        let parallel = run(2)?;
        if serial != parallel {
            return Err("serial and two-thread maps differ".into());
        }
        let serial_header = dir.path().join("serial.json");
        let parallel_header = dir.path().join("parallel.json");
        save_map(&serial, &serial_header, &dir.path().join("serial.raw"))
            .map_err(fail("save map"))?;
        save_map(&parallel, &parallel_header, &dir.path().join("parallel.raw"))
            .map_err(fail("save map"))?;
        let serial_bytes = std::fs::read(dir.path().join("serial.raw")).map_err(fail("read"))?;
        let parallel_bytes =
            std::fs::read(dir.path().join("parallel.raw")).map_err(fail("read"))?;
        if serial_bytes != parallel_bytes {
            return Err("serial and two-thread map files differ".into());
        }
        Ok(format!(
            "model files identical across reruns ({} bytes); maps identical across thread \
             counts ({} bytes)",
            first_bytes.len(),
            serial_bytes.len()
        ))
    });
}
