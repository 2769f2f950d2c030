use std::path::Path;
use std::process::{Command, Output};

fn dpn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpn")).args(args).output().expect("spawn dpn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn summary(o: &Output) -> String {
    stdout(o).lines().last().unwrap_or_default().to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn complexity_of_dpn92_matches_published_totals() {
    let o = dpn(&["complexity", "dpn92"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("total dpn92: params 37668392 (37.7e6) madds 6501684224 (6.5e9) at 224x224"), "{text}");
    assert!(summary(&o).ends_with(" PASS"));
}

#[test]
fn complexity_csv_has_a_stable_header() {
    let dir = tempfile::tempdir().unwrap();
    let o = dpn(&["complexity", "dpn-toy", "--hw", "32", "--format", "csv", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("layer,type,out_shape,params,madds\n"));
    assert!(summary(&o).ends_with(" OK"));
    let written = std::fs::read_to_string(dir.path().join("dpn-toy.complexity.csv")).unwrap();
    assert!(stdout(&o).starts_with(&written));
}

#[test]
fn tightened_tolerance_fails_with_code_1() {
    let o = dpn(&["complexity", "densenet161", "--tol", "0.001"]);
    assert_eq!(code(&o), 1);
    assert!(summary(&o).ends_with(" FAIL"));
}

#[test]
fn residual_vs_dense_passes_in_64_bit() {
    let o = dpn(&["verify", "residual-vs-dense", "--trials", "100", "--tol", "1e-10"]);
    assert_eq!(code(&o), 0);
    assert!(summary(&o).starts_with("verify residual-vs-dense:") && summary(&o).ends_with(" PASS"));
}

#[test]
fn zero_tolerance_in_32_bit_is_a_verification_failure() {
    let o = dpn(&["verify", "residual-vs-dense", "--trials", "5", "--tol", "0", "--precision", "f32"]);
    assert_eq!(code(&o), 1);
    assert!(summary(&o).ends_with(" FAIL"));
}

#[test]
fn table1_passes() {
    let o = dpn(&["verify", "table1", "--format", "csv"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let text = stdout(&o);
    assert_eq!(text.matches(",PASS").count(), 16);
    assert!(!text.contains("FAIL"));
}

#[test]
fn dual_vs_split_is_reproducible_per_seed() {
    let a = dpn(&["verify", "dual-vs-split", "--trials", "1", "--seed", "3"]);
    let b = dpn(&["verify", "dual-vs-split", "--trials", "1", "--seed", "3"]);
    assert_eq!(code(&a), 0);
    assert_eq!(stdout(&a), stdout(&b));
    assert!(summary(&a).ends_with(" PASS"));
}

#[test]
fn gradcheck_passes() {
    let o = dpn(&["gradcheck", "--trials", "5"]);
    assert_eq!(code(&o), 0);
    assert!(summary(&o).ends_with(" PASS"));
}

#[test]
fn zero_epoch_training_writes_a_header_only_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = dpn(&["train", "--arch", "dpn-toy", "--data", "synthetic", "--epochs", "0", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(summary(&o).ends_with(" OK"));
    assert_eq!(std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap(), "epoch,lr,loss,top1,top5\n");
    assert!(dir.path().join("checkpoint.dpnc").exists());
}

#[test]
fn usage_errors_exit_2() {
    for args in [&["bogus"][..], &["complexity", "--nope"], &["verify"], &["train", "--epochs", "x"], &[]] {
        let o = dpn(args);
        assert_eq!(code(&o), 2, "{args:?}");
        let text = format!("{}{}", String::from_utf8_lossy(&o.stderr), stdout(&o));
        assert!(text.contains("Usage") || text.contains("--help"), "{args:?}");
        assert!(summary(&o).ends_with(" FAIL"));
    }
    let help = dpn(&["--help"]);
    assert_eq!(code(&help), 0);
}

#[test]
fn runtime_errors_exit_3() {
    let o = dpn(&["eval", "--checkpoint", "/nonexistent/checkpoint.dpnc"]);
    assert_eq!(code(&o), 3);
    assert!(summary(&o).ends_with(" FAIL"));
    let o = dpn(&["arch", "no-such-net"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn spec_file_takes_precedence_over_preset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.txt");
    std::fs::write(&path, "name tiny\nconv1 3 8 1\nstage 1 8 2 8 2 1 dualpath\nclassifier 3 meanmax\n").unwrap();
    let o = dpn(&["arch", "dpn92", "--input", path.to_str().unwrap(), "--hw", "8"]);
    assert_eq!(code(&o), 0);
    assert!(summary(&o).starts_with("arch tiny: 1 stages"), "{}", summary(&o));
    std::fs::write(&path, "name bad\nconv1 3 8 1\nstage 1 8 3 8 2 1 dualpath\nclassifier 3 avg\n").unwrap();
    let o = dpn(&["arch", "--input", path.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("groups must divide width"));
}

fn write_ppm(path: &Path, hw: usize, rgb: [u8; 3]) {
    let mut bytes = format!("P6\n{hw} {hw}\n255\n").into_bytes();
    for i in 0..hw * hw {
        bytes.extend(rgb.map(|c| c.saturating_add((i % 7) as u8)));
    }
    std::fs::write(path, bytes).unwrap();
}

#[test]
fn train_then_eval_on_a_folder() {
    let dir = tempfile::tempdir().unwrap();
    let colours = [[200, 10, 10], [10, 200, 10], [10, 10, 200], [200, 200, 10]];
    let mut manifest = String::from("relative_path,label\n");
    for i in 0..16 {
        let name = format!("img{i}.ppm");
        write_ppm(&dir.path().join(&name), 8, colours[i % 4]);
        manifest += &format!("{name},{}\n", i % 4);
    }
    let m = dir.path().join("manifest.csv");
    std::fs::write(&m, manifest).unwrap();
    let run = dir.path().join("run");
    let (m, run) = (m.to_str().unwrap(), run.to_str().unwrap());
    let o = dpn(&["train", "--data", m, "--hw", "8", "--epochs", "3", "--batch", "8", "--refine-bn", "--out", run]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(Path::new(run).join("metrics.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    let ck = Path::new(run).join("checkpoint.dpnc");
    let ck = ck.to_str().unwrap();
    let avg = dpn(&["eval", "--checkpoint", ck, "--data", m, "--hw", "8", "--pooling", "avg"]);
    assert_eq!(code(&avg), 0, "{}", String::from_utf8_lossy(&avg.stderr));
    assert!(summary(&avg).starts_with("eval dpn-toy: top1 ") && summary(&avg).ends_with(" OK"));
    let again = dpn(&["eval", "--checkpoint", ck, "--data", m, "--hw", "8", "--pooling", "avg"]);
    assert_eq!(stdout(&avg), stdout(&again));
    let missing = dpn(&["eval", "--checkpoint", ck, "--data", &format!("{}/none.csv", dir.path().display())]);
    assert_eq!(code(&missing), 3);
}

#[test]
fn crop_sized_inputs_make_pooling_irrelevant() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = dpn(&["train", "--hw", "4", "--samples", "64", "--epochs", "1", "--out", out]);
    assert_eq!(code(&o), 0);
    let ck = dir.path().join("checkpoint.dpnc");
    let eval = |pooling| {
        let o = dpn(&["eval", "--checkpoint", ck.to_str().unwrap(), "--hw", "4", "--samples", "64", "--pooling", pooling]);
        assert_eq!(code(&o), 0);
        stdout(&o).lines().nth(1).unwrap().split(',').skip(2).map(String::from).collect::<Vec<_>>()
    };
    assert_eq!(eval("avg"), eval("meanmax"));
}
