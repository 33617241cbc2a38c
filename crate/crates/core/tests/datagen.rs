//! Scene synthesis, weather, label imperfections and the on-disk dataset.

use std::fs;
use std::path::Path;

use impsup::datagen::*;
use impsup::{Error, Tensor};
use proptest::prelude::*;

fn psnr(a: &Tensor, b: &Tensor) -> f64 {
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.numel() as f64;
    10.0 * (1.0 / mse).log10()
}

fn seeds(frame: u64) -> WeatherSeeds {
    WeatherSeeds { scene: 7, frame }
}

fn small_cfg(num_scenes: usize, seed: u64) -> DatasetConfig {
    DatasetConfig {
        num_scenes,
        height: 64,
        width: 64,
        master_seed: seed,
        ..DatasetConfig::default()
    }
}

#[test]
fn clean_scene_is_deterministic_and_in_range() {
    let a = gen_clean_scene(3, 64, 96).unwrap();
    let b = gen_clean_scene(3, 64, 96).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape(), &[3, 64, 96]);
    assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn clean_scenes_differ_across_seeds() {
    for s in 0..10u64 {
        let a = gen_clean_scene(s, 64, 64).unwrap();
        let b = gen_clean_scene(s + 100, 64, 64).unwrap();
        let mad = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / a.numel() as f64;
        assert!(mad > 0.01, "seeds {s}/{}: {mad}", s + 100);
    }
}

#[test]
fn clean_scene_rejects_bad_sizes() {
    assert!(matches!(
        gen_clean_scene(0, 60, 64),
        Err(Error::Dimension(_))
    ));
    assert!(matches!(
        gen_clean_scene(0, 64, 68),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn zero_severity_is_identity_for_every_weather() {
    let clean = gen_clean_scene(1, 64, 64).unwrap();
    for w in ["rain", "snow", "fog"] {
        assert_eq!(
            render_weather(&clean, w, 0.0, seeds(3)).unwrap(),
            clean,
            "{w}"
        );
    }
}

#[test]
fn fog_scattering_hand_example() {
    let clean = Tensor::full(&[3, 8, 8], 0.2);
    let out = apply_scattering(&clean, &[0.5; 64], 0.8).unwrap();
    assert!(out.data().iter().all(|v| (v - 0.5).abs() < 1e-15));
}

#[test]
fn fog_transmission_bounded_by_severity() {
    // on a black image the output is (1 − t)·A with A ≤ 0.9, t ≥ 1 − severity
    let black = Tensor::zeros(&[3, 64, 64]);
    let out = render_weather(&black, "fog", 0.4, seeds(1)).unwrap();
    assert!(out.data().iter().all(|&v| v <= 0.4 * 0.9 + 1e-12));
    assert!(out.data().iter().any(|&v| v > 0.0));
}

#[test]
fn rain_psnr_decreases_with_severity() {
    for s in 0..5 {
        let clean = gen_clean_scene(s, 64, 64).unwrap();
        let p: Vec<f64> = [0.2, 0.5, 0.8]
            .iter()
            .map(|&sev| {
                psnr(
                    &clean,
                    &render_weather(
                        &clean,
                        "rain",
                        sev,
                        WeatherSeeds {
                            scene: s,
                            frame: s + 9,
                        },
                    )
                    .unwrap(),
                )
            })
            .collect();
        assert!(p[0] > p[1] && p[1] > p[2], "seed {s}: {p:?}");
    }
}

#[test]
fn unknown_weather_and_bad_severity_are_config_errors() {
    let clean = Tensor::full(&[3, 8, 8], 0.5);
    assert!(matches!(
        render_weather(&clean, "hail", 0.5, seeds(0)),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        render_weather(&clean, "rain", 1.5, seeds(0)),
        Err(Error::Config(_))
    ));
}

#[test]
fn frame_seed_moves_weather_only() {
    let clean = gen_clean_scene(4, 64, 64).unwrap();
    for w in ["rain", "snow", "fog"] {
        let a = render_weather(&clean, w, 0.6, seeds(1)).unwrap();
        let b = render_weather(&clean, w, 0.6, seeds(2)).unwrap();
        assert!(a.max_abs_diff(&b) > 0.01, "{w}");
        assert_eq!(a, render_weather(&clean, w, 0.6, seeds(1)).unwrap());
    }
}

struct Invert;

impl WeatherModel for Invert {
    fn name(&self) -> &'static str {
        "invert"
    }

    fn render(&self, clean: &Tensor, severity: f64, _: WeatherSeeds) -> impsup::Result<Tensor> {
        Ok(clean.map(|v| (1.0 - severity) * v + severity * (1.0 - v)))
    }
}

#[test]
fn registry_accepts_new_renderers_by_name() {
    let mut reg = WeatherRegistry::default();
    assert_eq!(reg.names(), vec!["rain", "snow", "fog"]);
    reg.register(Box::new(Invert));
    let out = reg
        .get("invert")
        .unwrap()
        .render(&Tensor::full(&[3, 2, 2], 0.25), 1.0, seeds(0))
        .unwrap();
    assert_eq!(out.data()[0], 0.75);
    assert!(WeatherRegistry::empty().get("rain").is_err());
}

#[test]
fn empty_inconsistency_is_identity() {
    let ideal = gen_clean_scene(2, 64, 64).unwrap();
    let (out, rec) = inject_inconsistency(&ideal, &[], 5).unwrap();
    assert_eq!(out, ideal);
    assert_eq!(rec, InconsistencyRecord::default());
}

#[test]
fn color_shift_ratio_is_constant_per_channel() {
    for seed in 0..5 {
        let ideal = gen_clean_scene(seed, 64, 64).unwrap();
        let (out, rec) =
            inject_inconsistency(&ideal, &[InconsistencyKind::ColorShift], seed).unwrap();
        let (gains, b) = rec.color.unwrap();
        assert!(gains.iter().all(|g| (0.9..=1.1).contains(g)) && b.abs() <= 0.05);
        for c in 0..3 {
            let ratios: Vec<f64> = (0..64 * 64)
                .map(|i| c * 4096 + i)
                .filter(|&i| ideal.data()[i] > 0.1 && out.data()[i] < 1.0)
                .map(|i| out.data()[i] / ideal.data()[i])
                .collect();
            let (lo, hi) = ratios
                .iter()
                .fold((f64::MAX, f64::MIN), |(l, h), &r| (l.min(r), h.max(r)));
            assert!(hi - lo < 1e-6, "seed {seed} channel {c}: {lo}..{hi}");
        }
    }
}

/// Zero-mean normalized cross-correlation of `out` against `ideal` moved by
/// `(dy, dx)`, over the interior unaffected by edge replication.
fn ncc(out: &Tensor, ideal: &Tensor, dy: i32, dx: i32) -> f64 {
    let (c, h, w) = out.chw().unwrap();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for ch in 0..c {
        for y in 3..h - 3 {
            for x in 3..w - 3 {
                let sy = (y as i32 - dy) as usize;
                let sx = (x as i32 - dx) as usize;
                a.push(out.data()[(ch * h + y) * w + x]);
                b.push(ideal.data()[(ch * h + sy) * w + sx]);
            }
        }
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn misalignment_peak_sits_at_injected_offset() {
    for seed in 0..8 {
        let ideal = gen_clean_scene(seed + 20, 64, 64).unwrap();
        let (out, rec) =
            inject_inconsistency(&ideal, &[InconsistencyKind::Misalignment], seed).unwrap();
        let shift = rec.shift.unwrap();
        let mut best = (f64::MIN, (0, 0));
        for dy in -MAX_SHIFT..=MAX_SHIFT {
            for dx in -MAX_SHIFT..=MAX_SHIFT {
                let v = ncc(&out, &ideal, dy, dx);
                if v > best.0 {
                    best = (v, (dy, dx));
                }
            }
        }
        assert_eq!(best.1, shift, "seed {seed}");
    }
}

#[test]
fn texture_change_touches_only_its_patch() {
    let ideal = gen_clean_scene(8, 64, 64).unwrap();
    let (out, rec) = inject_inconsistency(&ideal, &[InconsistencyKind::TextureChange], 3).unwrap();
    let (py, px) = rec.patch.unwrap();
    let mut changed_inside = 0;
    for c in 0..3 {
        for y in 0..64 {
            for x in 0..64 {
                let i = (c * 64 + y) * 64 + x;
                let inside = (py..py + PATCH).contains(&y) && (px..px + PATCH).contains(&x);
                if inside {
                    changed_inside += (out.data()[i] != ideal.data()[i]) as usize;
                } else {
                    assert_eq!(out.data()[i], ideal.data()[i]);
                }
            }
        }
    }
    assert!(changed_inside > PATCH * PATCH);
}

#[test]
fn translate_replicates_edges() {
    let img = Tensor::from_fn(&[1, 3, 3], |i| i as f64);
    let t = translate(&img, 1, -1).unwrap();
    assert_eq!(t.data(), &[1.0, 2.0, 2.0, 1.0, 2.0, 2.0, 4.0, 5.0, 5.0]);
}

#[test]
fn frames_share_clean_content() {
    let cfg = small_cfg(3, 11);
    let reg = WeatherRegistry::default();
    for i in 0..3 {
        let spec = SceneSpec {
            severity: 0.0,
            ..cfg.scene_spec(i)
        };
        let scene = generate_scene(&spec, &reg).unwrap();
        assert_eq!(scene.frames.len(), 5);
        assert!(scene.frames.iter().all(|f| *f == scene.ideal));
        let consistent = SceneSpec {
            inconsistency: vec![],
            ..cfg.scene_spec(i)
        };
        let scene = generate_scene(&consistent, &reg).unwrap();
        assert_eq!(scene.label, scene.ideal);
        assert_ne!(scene.frames[0], scene.frames[1]);
    }
}

#[test]
fn default_distribution_label_psnr_is_subtle() {
    let cfg = DatasetConfig::default();
    let reg = WeatherRegistry::default();
    let mean = (0..cfg.num_scenes)
        .map(|i| {
            let s = generate_scene(&cfg.scene_spec(i), &reg).unwrap();
            psnr(&s.ideal, &s.label)
        })
        .sum::<f64>()
        / cfg.num_scenes as f64;
    assert!((20.0..=35.0).contains(&mean), "{mean}");
}

#[test]
fn split_is_a_disjoint_partition() {
    let s = split_assignment(64, 0.15, 9);
    let test = s.iter().filter(|&&x| x == Split::Test).count();
    assert_eq!(test, 10);
    assert_eq!(s, split_assignment(64, 0.15, 9));
    assert_eq!(split_assignment(1, 0.15, 0), vec![Split::Train]);
    assert_eq!(
        split_assignment(2, 0.0, 0)
            .iter()
            .filter(|&&x| x == Split::Test)
            .count(),
        1
    );
}

fn collect_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_dataset_counts_determinism_and_split() {
    let cfg = small_cfg(10, 4);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = gen_dataset(a.path(), &cfg, false).unwrap();
    assert_eq!(m.scenes.len(), 10);
    assert!(m.scenes.iter().all(|s| s.frames.len() == 5));
    gen_dataset(b.path(), &cfg, false).unwrap();
    let (fa, fb) = (collect_files(a.path()), collect_files(b.path()));
    assert_eq!(fa.len(), 10 * 7 + 1);
    assert!(fa == fb, "regeneration is not byte-identical");

    let train: Vec<_> = m
        .scenes
        .iter()
        .filter(|s| s.split == Split::Train)
        .map(|s| &s.id)
        .collect();
    let test: Vec<_> = m
        .scenes
        .iter()
        .filter(|s| s.split == Split::Test)
        .map(|s| &s.id)
        .collect();
    assert!(!test.is_empty() && train.len() + test.len() == 10);
    assert!(train.iter().all(|t| !test.contains(t)));
    assert!(m.scenes.iter().all(|s| s.ideal.starts_with("eval/")));
}

#[test]
fn gen_dataset_refuses_non_empty_root_without_force() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("keep.txt"), "x").unwrap();
    let cfg = small_cfg(2, 0);
    assert!(matches!(
        gen_dataset(dir.path(), &cfg, false),
        Err(Error::Refused(_))
    ));
    gen_dataset(dir.path(), &cfg, true).unwrap();
    let cfg3 = small_cfg(3, 1);
    let m = gen_dataset(dir.path(), &cfg3, true).unwrap();
    assert_eq!(m.scenes.len(), 3);
    assert_eq!(fs::read_dir(dir.path().join("scenes")).unwrap().count(), 3);
    assert!(dir.path().join("keep.txt").exists());
}

#[test]
fn gen_dataset_unwritable_root_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    fs::write(&file, "x").unwrap();
    let err = gen_dataset(&file.join("sub"), &small_cfg(1, 0), false).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err:?}");
}

#[test]
fn load_round_trip_and_mode_contract() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg(4, 2);
    gen_dataset(dir.path(), &cfg, false).unwrap();
    let eval = load_dataset(dir.path(), LoadMode::Eval, None).unwrap();
    let train = load_dataset(dir.path(), LoadMode::Train, None).unwrap();
    assert_eq!(eval.len(), 4);
    assert_eq!(eval.frames_n(), 2);
    let reg = WeatherRegistry::default();
    for (i, s) in eval.samples().iter().enumerate() {
        let g = generate_scene(&cfg.scene_spec(i), &reg).unwrap();
        let tol = 0.5 / 255.0 + 1e-12;
        assert!(s.ideal().unwrap().max_abs_diff(&g.ideal) <= tol);
        assert!(s.label.max_abs_diff(&g.label) <= tol);
        for (a, b) in s.frames.iter().zip(&g.frames) {
            assert!(a.max_abs_diff(b) <= tol);
        }
        assert_eq!(s.center(), &s.frames[2]);
    }
    for s in train.samples() {
        assert!(matches!(s.ideal(), Err(Error::Contract(_))));
    }
    assert_eq!(
        train.shuffled(Split::Train, 5),
        train.shuffled(Split::Train, 5)
    );
    let only_test = load_dataset(dir.path(), LoadMode::Eval, Some(Split::Test)).unwrap();
    assert!(only_test.samples().iter().all(|s| s.split == Split::Test));
    assert_eq!(only_test.len(), eval.indices(Split::Test).len());
}

#[test]
fn load_reports_missing_file_with_scene_id() {
    let dir = tempfile::tempdir().unwrap();
    gen_dataset(dir.path(), &small_cfg(2, 3), false).unwrap();
    fs::remove_file(dir.path().join("scenes/scene_0001/frame_3.png")).unwrap();
    let err = load_dataset(dir.path(), LoadMode::Train, None).unwrap_err();
    let msg = err.to_string();
    assert!(
        matches!(err, Error::Io { .. }) && msg.contains("scene_0001"),
        "{msg}"
    );
    // the training loader never touches eval/, so a missing ideal is only an
    // evaluation-mode failure
    let dir = tempfile::tempdir().unwrap();
    gen_dataset(dir.path(), &small_cfg(2, 3), false).unwrap();
    fs::remove_dir_all(dir.path().join("eval")).unwrap();
    assert!(load_dataset(dir.path(), LoadMode::Train, None).is_ok());
    assert!(load_dataset(dir.path(), LoadMode::Eval, None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weather_and_labels_stay_image_valued(seed in 0u64..1000, sev in 0.0f64..=1.0, w in 0usize..3) {
        let clean = gen_clean_scene(seed, 64, 64).unwrap();
        let name = ["rain", "snow", "fog"][w];
        let out = render_weather(&clean, name, sev, WeatherSeeds { scene: seed, frame: seed ^ 1 }).unwrap();
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let (label, _) = inject_inconsistency(&clean, &InconsistencyKind::ALL, seed).unwrap();
        prop_assert!(label.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let (same, _) = inject_inconsistency(&clean, &[], seed).unwrap();
        prop_assert_eq!(same, clean);
    }
}
