use std::path::Path;
use std::process::Command as Proc;

use rcpn_cli::commands::{
    cmd_diag, cmd_eval, cmd_infer, cmd_synth, cmd_train, parse_manifest, run,
};
use rcpn_cli::{parse_config, CliError, Command, Settings};
use rcpn_core::ingest::{encode_pgm_labels, generate_synthetic, load_labels, LabelGrid};
use rcpn_core::net::LossMode;
use rcpn_core::numeric::Rng;
use rcpn_core::trainer::{infer_graph, load_checkpoint};

fn argv(args: &[&str]) -> Vec<String> {
    std::iter::once("rcpn")
        .chain(args.iter().copied())
        .map(String::from)
        .collect()
}

fn synth_into(dir: &Path, count: usize) -> Settings {
    let mut s = Settings::default();
    s.out = dir.to_path_buf();
    s.count = count;
    cmd_synth(&s).unwrap();
    s
}

/// Small, fast training settings over a synthesized dataset.
fn quick(data: &Path, out: &Path) -> Settings {
    let mut s = Settings::default();
    s.images = data.join("images");
    s.labels = data.join("labels");
    s.out = out.to_path_buf();
    s.epochs = 2;
    s.r_train = 2;
    s.r_test = 3;
    s.d_sem = 6;
    std::fs::create_dir_all(out).unwrap();
    s
}

#[test]
fn defaults_resolve_for_infer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("empty.cfg");
    std::fs::write(&cfg_path, "").unwrap();
    std::fs::create_dir(dir.path().join("imgs")).unwrap();
    let imgs = dir.path().join("imgs");
    let c = parse_config(argv(&[
        "infer",
        "--config",
        cfg_path.to_str().unwrap(),
        "--model",
        "m.ckpt",
        "--images",
        imgs.to_str().unwrap(),
    ]))
    .unwrap();
    assert_eq!(c.command, Command::Infer);
    let mut expected = Settings::default();
    expected.model = Some("m.ckpt".into());
    expected.images = imgs;
    assert_eq!(c.settings, expected);
    assert_eq!(c.settings.d_sem, 60);
    assert_eq!(c.settings.mrf_k, 9);
}

#[test]
fn flag_beats_file_beats_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "d_sem = 60\nepochs = 3 # from file\n").unwrap();
    let c = parse_config(argv(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--d-sem",
        "30",
    ]))
    .unwrap();
    assert_eq!(c.settings.d_sem, 30);
    assert_eq!(c.settings.epochs, 3);
    assert_eq!(c.settings.r_train, 10);
}

#[test]
fn config_errors_name_key_and_token() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "d_sem = sixty\n").unwrap();
    let e = parse_config(argv(&["synth", "--config", cfg.to_str().unwrap()])).unwrap_err();
    let msg = e.to_string();
    assert!(msg.contains("d_sem") && msg.contains("sixty"), "{msg}");
    assert_eq!(e.exit_code(), 1);

    std::fs::write(&cfg, "colour = red\n").unwrap();
    let msg = parse_config(argv(&["synth", "--config", cfg.to_str().unwrap()]))
        .unwrap_err()
        .to_string();
    assert!(msg.contains("colour"), "{msg}");

    let e = parse_config(argv(&["synth", "--momentum", "lots"])).unwrap_err();
    assert!(e.to_string().contains("--momentum") && e.to_string().contains("lots"));

    assert_eq!(
        parse_config(argv(&["synth", "--no-such-flag", "1"]))
            .unwrap_err()
            .exit_code(),
        1
    );
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let c = parse_config(argv(&[
        "synth",
        "--count",
        "1",
        "--ambiguity",
        "0.25",
        "--out",
        out.to_str().unwrap(),
    ]))
    .unwrap();
    run(&c).unwrap();
    let echo = out.join("resolved_config");
    let again = parse_config(argv(&["synth", "--config", echo.to_str().unwrap()])).unwrap();
    assert_eq!(again.settings, c.settings);
}

#[test]
fn synth_is_deterministic_and_manifest_regenerates() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_into(&dir.path().join("a"), 3);
    synth_into(&dir.path().join("b"), 3);
    for f in ["images/img_0000.ppm", "labels/img_0002.pgm", "manifest.txt"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let (spec, scenes) =
        parse_manifest(&std::fs::read_to_string(a.out.join("manifest.txt")).unwrap()).unwrap();
    assert_eq!(spec, a.synth_spec());
    assert_eq!(scenes.len(), 3);
    for e in &scenes {
        let scene = generate_synthetic(&spec, &mut Rng::new(e.seed));
        let on_disk =
            load_labels(a.out.join("labels").join(format!("{}.pgm", e.name)), 255).unwrap();
        assert_eq!(scene.labels, on_disk);
        assert_eq!(scene.ambiguous, e.ambiguous);
        // ambiguity 0.5 over 15 non-marker cells
        assert_eq!(e.ambiguous.len(), 8);
    }
}

#[test]
fn train_with_zero_epochs_keeps_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_into(&data, 3);
    let mut s0 = quick(&data, &dir.path().join("zero"));
    s0.epochs = 0;
    cmd_train(&s0).unwrap();
    let mut s1 = quick(&data, &dir.path().join("frozen"));
    s1.learning_rate = 0.0;
    cmd_train(&s1).unwrap();
    let (p0, _) = load_checkpoint(s0.out.join("model.ckpt")).unwrap();
    let (p1, _) = load_checkpoint(s1.out.join("model.ckpt")).unwrap();
    assert_eq!(p0, p1);
}

#[test]
fn loss_modes_give_different_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_into(&data, 3);
    let mut a = quick(&data, &dir.path().join("rcpn"));
    a.loss_mode = LossMode::Rcpn;
    let mut b = quick(&data, &dir.path().join("pn"));
    b.loss_mode = LossMode::PureNode;
    cmd_train(&a).unwrap();
    cmd_train(&b).unwrap();
    let da = std::fs::read_to_string(a.out.join("diagnostics.csv")).unwrap();
    let db = std::fs::read_to_string(b.out.join("diagnostics.csv")).unwrap();
    assert_eq!(da.lines().next(), Some("iter,loss,g_sem,g_com,g_dec,g_cat"));
    assert_eq!(da.lines().count(), db.lines().count());
    assert_ne!(da, db);
    for f in ["loss_curve.csv", "train_metrics.csv", "model.ckpt"] {
        assert!(a.out.join(f).exists(), "{f}");
    }
}

#[test]
fn single_tree_inference_is_the_broadcast_argmax() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_into(&data, 2);
    let s = quick(&data, &dir.path().join("train"));
    cmd_train(&s).unwrap();
    let mut inf = quick(&data, &dir.path().join("infer"));
    inf.model = Some(s.out.join("model.ckpt"));
    inf.r_test = 1;
    let out = cmd_infer(&inf).unwrap();

    let (params, _) = load_checkpoint(s.out.join("model.ckpt")).unwrap();
    for (i, (stem, labels)) in out.iter().enumerate() {
        let sample =
            rcpn_cli::dataset::load_sample(&inf, stem, false, &mut Default::default()).unwrap();
        let pred = infer_graph(&params, &sample.graph, i, &inf.train_config()).unwrap();
        let argmax = pred.traces[0].leaf_labels();
        assert_eq!(*labels, LabelGrid::from_superpixels(&sample.seg, &argmax));
        let on_disk =
            load_labels(inf.out.join("predictions").join(format!("{stem}.pgm")), 255).unwrap();
        assert_eq!(&on_disk, labels);
    }
    let timing = std::fs::read_to_string(inf.out.join("timing.csv")).unwrap();
    assert!(timing.lines().last().unwrap().starts_with("total,"));
}

#[test]
fn mrf_inference_and_overlays() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_into(&data, 2);
    let s = quick(&data, &dir.path().join("train"));
    cmd_train(&s).unwrap();
    let mut inf = quick(&data, &dir.path().join("infer"));
    inf.model = Some(s.out.join("model.ckpt"));
    inf.mrf = true;
    inf.overlays = true;
    let out = cmd_infer(&inf).unwrap();
    assert_eq!(out.len(), 2);
    assert!(inf.out.join("overlays/img_0001.ppm").exists());
}

#[test]
fn checkpoint_feature_mismatch_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_into(&data, 1);
    let s = quick(&data, &dir.path().join("train"));
    cmd_train(&s).unwrap();
    // swap in a checkpoint that expects more visual features
    let (mut params, cfg) = load_checkpoint(s.out.join("model.ckpt")).unwrap();
    let d = params.dims();
    params = rcpn_core::net::RcpnParams::zeros(
        rcpn_core::net::Dims {
            d_vis: d.d_vis + 1,
            ..d
        },
        params.activation,
    );
    let bad = dir.path().join("bad.ckpt");
    rcpn_core::trainer::save_checkpoint(&params, &cfg, &bad).unwrap();
    let mut inf = quick(&data, &dir.path().join("infer"));
    inf.model = Some(bad);
    let e = cmd_infer(&inf).unwrap_err();
    assert!(
        matches!(
            e,
            CliError::Core(rcpn_core::Error::DimensionMismatch { .. })
        ),
        "{e}"
    );
    assert_eq!(e.exit_code(), 2);
}

fn write_labels(dir: &Path, name: &str, w: usize, labels: &[Option<usize>]) {
    std::fs::create_dir_all(dir).unwrap();
    let grid = LabelGrid::new(w, labels.len() / w, labels.to_vec()).unwrap();
    std::fs::write(
        dir.join(format!("{name}.pgm")),
        encode_pgm_labels(&grid, 255).unwrap(),
    )
    .unwrap();
}

fn eval_settings(root: &Path) -> Settings {
    let mut s = Settings::default();
    s.predictions = root.join("pred");
    s.labels = root.join("gt");
    s.out = root.join("out");
    std::fs::create_dir_all(&s.out).unwrap();
    s
}

#[test]
fn eval_perfect_and_hand_tally() {
    let dir = tempfile::tempdir().unwrap();
    let s = eval_settings(dir.path());
    let gt1 = [Some(0), Some(0), Some(1), None];
    let gt2 = [Some(1), Some(1), Some(0), Some(0)];
    write_labels(&s.labels, "a", 2, &gt1);
    write_labels(&s.labels, "b", 2, &gt2);
    write_labels(
        &s.predictions,
        "a",
        2,
        &[Some(0), Some(0), Some(1), Some(1)],
    );
    write_labels(&s.predictions, "b", 2, &gt2);
    let (scores, _) = cmd_eval(&s).unwrap();
    assert_eq!((scores.ppa, scores.mca, scores.iou), (1.0, 1.0, 1.0));

    // a: (0,0) (0,1) (1,1) ; b: (1,1) (1,0) (0,0) (0,1)
    write_labels(
        &s.predictions,
        "a",
        2,
        &[Some(0), Some(1), Some(1), Some(0)],
    );
    write_labels(
        &s.predictions,
        "b",
        2,
        &[Some(1), Some(0), Some(0), Some(1)],
    );
    let mut subset = s.clone();
    subset.iou_subset = vec![1];
    let (scores, sub) = cmd_eval(&subset).unwrap();
    // rows truth, cols pred: [[2,2],[1,2]]
    assert_eq!(scores.ppa, 4.0 / 7.0);
    assert_eq!(scores.mca, (2.0 / 4.0 + 2.0 / 3.0) / 2.0);
    assert_eq!(scores.iou, (2.0 / 5.0 + 2.0 / 5.0) / 2.0);
    assert_eq!(sub, Some(2.0 / 5.0));
    let csv = std::fs::read_to_string(s.out.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("ppa,mca,iou,iou_subset\n"));
}

#[test]
fn eval_filename_errors() {
    let dir = tempfile::tempdir().unwrap();
    let s = eval_settings(dir.path());
    write_labels(&s.labels, "a", 1, &[Some(0)]);
    write_labels(&s.predictions, "b", 1, &[Some(0)]);
    assert!(cmd_eval(&s)
        .unwrap_err()
        .to_string()
        .contains("no prediction/ground-truth pairs"));
    write_labels(&s.labels, "b", 1, &[Some(0)]);
    let msg = cmd_eval(&s).unwrap_err().to_string();
    assert!(msg.contains("a.pgm (no prediction)"), "{msg}");
}

#[test]
fn diag_emits_paired_curves() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_into(&data, 4);
    let s = quick(&data, &dir.path().join("diag"));
    let d = cmd_diag(&s).unwrap();
    assert_eq!(d.rcpn.len(), d.pure_node.len());
    for r in [d.early_ratio_rcpn, d.early_ratio_pure_node] {
        assert!(r.is_finite() && r > 0.0);
    }
    let a = std::fs::read_to_string(s.out.join("diagnostics_rcpn.csv")).unwrap();
    let b = std::fs::read_to_string(s.out.join("diagnostics_pure_node.csv")).unwrap();
    assert_eq!(a.lines().count(), b.lines().count());
    assert!(s.out.join("diag_summary.csv").exists());
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_rcpn");
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| {
        Proc::new(bin)
            .args(args)
            .current_dir(dir.path())
            .status()
            .unwrap()
            .code()
    };
    assert_eq!(code(&["synth", "--count", "1", "--out", "d"]), Some(0));
    assert_eq!(
        code(&["train", "--images", "d/images", "--labels", "missing"]),
        Some(1)
    );
    assert_eq!(code(&["synth", "--d-sem", "sixty"]), Some(1));
    assert_eq!(code(&["--help"]), Some(0));
    std::fs::write(dir.path().join("broken.ppm"), b"P6\n2 2\n255\nxx").unwrap();
    std::fs::create_dir(dir.path().join("imgs")).unwrap();
    std::fs::rename(
        dir.path().join("broken.ppm"),
        dir.path().join("imgs/broken.ppm"),
    )
    .unwrap();
    std::fs::write(dir.path().join("m.ckpt"), b"nope").unwrap();
    assert_eq!(
        code(&["infer", "--model", "m.ckpt", "--images", "imgs"]),
        Some(2)
    );
}

#[test]
fn numeric_abort_exit_code() {
    let e = CliError::Core(rcpn_core::Error::NonFinite { block: "com" });
    assert_eq!(e.exit_code(), 3);
}
