use std::path::{Path, PathBuf};

use upd_core::cli::run;
use upd_core::synth::{planted_dataset, write_planted_dataset, PlantedConfig};

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

struct Fixture {
    dir: tempfile::TempDir,
    manifest: PathBuf,
    weights: PathBuf,
}

fn fixture(images: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let scenes = planted_dataset(&PlantedConfig { size: 64, images, ..PlantedConfig::default() }).unwrap();
    let manifest = write_planted_dataset(dir.path(), &scenes).unwrap();
    let weights = dir.path().join("w.bin");
    let code = run([
        "upd", "--seed", "5", "init-weights", "--out", &s(&weights),
        "--patch-size", "2", "--embed-dim", "8", "--window-size", "4",
    ]);
    assert_eq!(code, 0);
    Fixture { dir, manifest, weights }
}

fn lines(p: &Path) -> Vec<String> {
    std::fs::read_to_string(p).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn empty_manifest_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.csv");
    std::fs::write(&manifest, "image_path\n").unwrap();
    let out = dir.path().join("pred.csv");
    assert_eq!(run(["upd", "detect", "--manifest", &s(&manifest), "--out", &s(&out)]), 0);
    assert_eq!(lines(&out), vec!["image_id,label,p_upd,error"]);
}

#[test]
fn corrupt_image_yields_error_row_and_exit_1() {
    let f = fixture(3);
    std::fs::write(f.dir.path().join("images/scene_0001.png"), b"not a png").unwrap();
    let out = f.dir.path().join("pred.csv");
    let code = run(["upd", "detect", "--manifest", &s(&f.manifest), "--out", &s(&out), "--weights", &s(&f.weights)]);
    assert_eq!(code, 1);
    let rows = lines(&out);
    assert_eq!(rows.len(), 4);
    let errors: Vec<_> = rows[1..].iter().filter(|r| r.contains(",,,")).collect();
    assert_eq!(errors.len(), 1);
    assert!(errors[0].starts_with("scene_0001,,,"));

    let again = f.dir.path().join("pred2.csv");
    run(["upd", "detect", "--manifest", &s(&f.manifest), "--out", &s(&again), "--weights", &s(&f.weights)]);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn rank_top_k_and_eval() {
    let f = fixture(4);
    let out = f.dir.path().join("rank.csv");
    let heat = f.dir.path().join("heat");
    let code = run([
        "upd", "rank", "--manifest", &s(&f.manifest), "--out", &s(&out), "--weights", &s(&f.weights),
        "--force", "--top-k", "1", "--channels", "4", "--heatmaps", &s(&heat),
    ]);
    assert_eq!(code, 0);
    let rows = lines(&out);
    assert_eq!(rows.len(), 5, "{rows:?}");
    assert!(rows[1..].iter().all(|r| r.split(',').nth(1) == Some("1")));
    assert_eq!(std::fs::read_dir(&heat).unwrap().count(), 4);

    let report = f.dir.path().join("report.csv");
    let code = run(["upd", "eval", "--rankings", &s(&out), "--manifest", &s(&f.manifest), "--out", &s(&report)]);
    assert_eq!(code, 0);
    let rows = lines(&report);
    assert_eq!(rows[0], "metric,top@1,top@2,top@3,top@4");
    assert_eq!(rows.len(), 4);
}

#[test]
fn eval_with_ground_truth_copied_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.csv");
    std::fs::write(&manifest, "image_id,image_path,gt_ranking\na,a.png,1;2;3;4\nb,b.png,wall;sky\n").unwrap();
    let rankings = dir.path().join("r.csv");
    std::fs::write(
        &rankings,
        "image_id,rank,class_id,class_name,density,pixel_count\n\
         a,1,1,sidewalk,0.9,10\na,2,2,building,0.8,10\na,3,3,vehicle,0.7,10\na,4,4,fence,0.6,10\n\
         b,1,12,wall,0.5,10\nb,2,9,sky,0.4,10\n",
    )
    .unwrap();
    let out = dir.path().join("report.csv");
    assert_eq!(run(["upd", "eval", "--rankings", &s(&rankings), "--manifest", &s(&manifest), "--out", &s(&out)]), 0);
    for row in &lines(&out)[1..] {
        assert!(row.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 1.0), "{row}");
    }
}

#[test]
fn eval_without_ground_truth_fails() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.csv");
    std::fs::write(&manifest, "image_path\na.png\n").unwrap();
    let rankings = dir.path().join("r.csv");
    std::fs::write(&rankings, "image_id,rank,class_id,class_name,density,pixel_count\n").unwrap();
    let out = dir.path().join("report.csv");
    assert_eq!(run(["upd", "eval", "--rankings", &s(&rankings), "--manifest", &s(&manifest), "--out", &s(&out)]), 1);
    assert!(!out.exists());
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(run(["upd", "no-such-command"]), 2);
    assert_eq!(run(["upd", "--workers", "0", "complexity", "--h", "1", "--w", "1", "--c", "1"]), 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "workers 4\n").unwrap();
    assert_eq!(run(["upd", "--config", &s(&cfg), "selftest"]), 2);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let f = fixture(2);
    let cfg = f.dir.path().join("run.cfg");
    std::fs::write(&cfg, format!("# run settings\nweights = {}\ntop-k = 2\nforce = true\nchannels = 4\n", s(&f.weights))).unwrap();
    let out = f.dir.path().join("rank.csv");
    assert_eq!(run(["upd", "--config", &s(&cfg), "rank", "--manifest", &s(&f.manifest), "--out", &s(&out)]), 0);
    assert_eq!(lines(&out).len(), 1 + 2 * 2);
    assert_eq!(
        run(["upd", "--config", &s(&cfg), "rank", "--manifest", &s(&f.manifest), "--out", &s(&out), "--top-k", "1"]),
        0
    );
    assert_eq!(lines(&out).len(), 1 + 2);
}

#[test]
fn dataset_train_and_map_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let mut comparisons = String::from("left_id,right_id,attribute,outcome\n");
    for i in 0..20 {
        for j in 0..20 {
            if i < j {
                for attr in ["safe", "lively", "beautiful", "wealthy", "boring", "depressing"] {
                    let outcome = if (i + j) % 3 == 0 { "tie" } else if i > j { "left" } else { "right" };
                    comparisons.push_str(&format!("img{i},img{j},{attr},{outcome}\n"));
                }
            }
        }
    }
    std::fs::write(p("cmp.csv"), comparisons).unwrap();
    assert_eq!(run(["upd", "dataset", "qscore", "--comparisons", &s(&p("cmp.csv")), "--out", &s(&p("q.csv"))]), 0);
    assert_eq!(
        run([
            "upd", "dataset", "label", "--qscores", &s(&p("q.csv")), "--out", &s(&p("labels.csv")),
            "--low-pct", "20", "--high-pct", "80", "--min-votes", "0",
        ]),
        0
    );
    let labels = lines(&p("labels.csv"));
    assert_eq!(labels.len(), 21);
    assert_eq!(labels.iter().filter(|l| l.split(',').nth(1) == Some("1")).count(), 4);

    let f = fixture(12);
    let trained = f.dir.path().join("trained.bin");
    let curve = f.dir.path().join("curve.csv");
    let code = run([
        "upd", "--seed", "1", "train-head", "--manifest", &s(&f.manifest), "--out", &s(&trained),
        "--weights", &s(&f.weights), "--epochs", "5", "--curve", &s(&curve),
    ]);
    assert_eq!(code, 0);
    assert_eq!(lines(&curve).len(), 6);
    let (_, _, has_head) = upd_core::swin::load_weights(&trained).unwrap();
    assert!(has_head);

    let pred = f.dir.path().join("pred.csv");
    assert_eq!(run(["upd", "detect", "--manifest", &s(&f.manifest), "--out", &s(&pred), "--weights", &s(&trained)]), 0);
    let metrics = f.dir.path().join("det.csv");
    assert_eq!(run(["upd", "eval-detect", "--predictions", &s(&pred), "--manifest", &s(&f.manifest), "--out", &s(&metrics)]), 0);

    let located = f.dir.path().join("located.csv");
    let mut text = String::from("image_id,image_path,lat,lon\n");
    for (i, row) in lines(&f.manifest)[1..].iter().enumerate() {
        let mut cols = row.split(',');
        let (id, img) = (cols.next().unwrap(), cols.next().unwrap());
        text.push_str(&format!("{id},{img},{},{}\n", 34.0 + i as f64 * 0.004, -118.3));
    }
    std::fs::write(&located, text).unwrap();
    let geo = f.dir.path().join("map.geojson");
    let cells = f.dir.path().join("cells.csv");
    let code = run([
        "upd", "map", "--manifest", &s(&located), "--predictions", &s(&pred), "--out", &s(&geo),
        "--cells", &s(&cells), "--cell-size", "0.01",
    ]);
    assert_eq!(code, 0);
    let back = upd_core::geo::parse_geojson(&std::fs::read_to_string(&geo).unwrap()).unwrap();
    assert_eq!(back.len(), 12);
    let total: usize = lines(&cells)[1..].iter().map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 12);
}

#[test]
fn stratify_with_supplied_bins() {
    let f = fixture(8);
    let pred = f.dir.path().join("pred.csv");
    assert_eq!(run(["upd", "detect", "--manifest", &s(&f.manifest), "--out", &s(&pred), "--weights", &s(&f.weights)]), 0);
    let binned = f.dir.path().join("binned.csv");
    let mut text = String::from("image_id,image_path,segmentation_path,label,morphology\n");
    for (i, row) in lines(&f.manifest)[1..].iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        let bin = ["low", "mid"][i % 2];
        text.push_str(&format!("{},{},{},{},{bin}\n", cols[0], cols[1], cols[2], cols[3]));
    }
    std::fs::write(&binned, text).unwrap();
    let out = f.dir.path().join("strat.csv");
    let code = run(["upd", "stratify", "--manifest", &s(&binned), "--predictions", &s(&pred), "--out", &s(&out)]);
    assert_eq!(code, 0);
    let body = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = body.lines().collect();
    assert_eq!(rows.len(), 3, "{body}");
    assert!(rows[1].starts_with("0<h/w<1,4,") && rows[2].starts_with("1<h/w<2,4,"), "{body}");
}

#[test]
fn complexity_and_selftest_succeed() {
    assert_eq!(run(["upd", "complexity", "--h", "56", "--w", "56", "--c", "96", "--m", "7"]), 0);
    assert_eq!(run(["upd", "selftest"]), 0);
}
