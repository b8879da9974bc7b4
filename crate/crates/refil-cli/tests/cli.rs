//! End-to-end runs of the `refil` binary: exit codes and the main flows.

use std::process::Command;

fn refil() -> Command {
    Command::new(env!("CARGO_BIN_EXE_refil"))
}

#[test]
fn help_exits_zero_and_lists_subcommands() {
    let out = refil().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["train", "calibrate", "attack", "serve", "infer", "experiment", "report"] {
        assert!(text.contains(sub), "--help must list {sub}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let out = refil().arg("definitely-not-a-command").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = refil()
        .args(["calibrate", "--client", "x.rflm"]) // missing --target-dfil
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let out = refil()
        .args([
            "calibrate",
            "--client",
            "/nonexistent/model.rflm",
            "--target-dfil",
            "1.0",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_calibrate_attack_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("model");
    let status = refil()
        .args([
            "train",
            "--recipe",
            "recommender",
            "--data",
            "interactions:users=30,movies=40,size=400,seed=1",
            "--out",
            out_dir.to_str().unwrap(),
            "--epochs",
            "1",
            "--batch-size",
            "32",
            "--optimizer",
            "adam:lr=0.01",
            "--seed",
            "3",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    for f in ["client.rflm", "server.rflm", "full.rflm", "train_log.csv"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }

    let out = refil()
        .args([
            "calibrate",
            "--client",
            out_dir.join("client.rflm").to_str().unwrap(),
            "--target-dfil",
            "0.1",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("sigma"), "calibrate output: {text}");

    let out = refil()
        .args([
            "attack",
            "--client",
            out_dir.join("client.rflm").to_str().unwrap(),
            "--one-over-dfil",
            "10",
            "--data",
            "interactions:users=30,movies=40,size=8,seed=2",
            "--iterations",
            "100",
            "--restarts",
            "1",
            "--trials",
            "2",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("mean mse"), "attack output: {text}");
}

#[test]
fn experiment_and_report_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("exp");
    let spec = format!(
        r#"{{
  "name": "cli smoke",
  "kind": "Reconstruction",
  "model": {{ "EmbeddingTable": {{ "rows": 30, "emb_dim": 6, "out_dim": 8, "scale": 1.0 }} }},
  "dataset": {{ "Synthetic": {{ "kind": {{ "UniformVectors": {{ "dim": 6 }} }}, "size": 4, "seed": 0 }} }},
  "subsample": null,
  "dfil_grid": [0.1, 1.0],
  "attack": {{ "method": "Unbiased", "optimizer": {{ "lr": 0.1, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8 }}, "iterations": 40, "init": {{ "GaussianRandom": {{ "seed": 0, "sigma": 0.5 }} }}, "restarts": 1 }},
  "trials": 3,
  "seed": 4,
  "output_dir": {:?},
  "estimator": "Exact",
  "dump_images": false
}}"#,
        out_dir.to_str().unwrap()
    );
    let spec_path = tmp.path().join("spec.json");
    std::fs::write(&spec_path, spec).unwrap();

    let out = refil()
        .args(["experiment", "--spec", spec_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_dir.join("results.csv").exists());
    assert!(out_dir.join("plot.svg").exists());

    let out = refil()
        .args(["report", "--dir", out_dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("1/dFIL"), "report output: {text}");
}

#[test]
fn serve_and_infer_over_loopback() {
    let tmp = tempfile::tempdir().unwrap();
    // identity model checkpoint as the server half
    let model = refil_core::model::Model::identity(vec![4]).unwrap();
    let models_dir = tmp.path().join("models");
    std::fs::create_dir_all(&models_dir).unwrap();
    refil_core::checkpoint::save_model(&model, &models_dir.join("echo.rflm")).unwrap();
    let client_path = tmp.path().join("client.rflm");
    refil_core::checkpoint::save_model(&model, &client_path).unwrap();

    let mut server = refil()
        .args([
            "serve",
            "--bind",
            "127.0.0.1:7719",
            "--models",
            models_dir.to_str().unwrap(),
        ])
        .spawn()
        .unwrap();
    // wait for the listener
    let mut ready = false;
    for _ in 0..50 {
        if std::net::TcpStream::connect("127.0.0.1:7719").is_ok() {
            ready = true;
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(100));
    }
    assert!(ready, "server did not come up");

    let out = refil()
        .args([
            "infer",
            "--server",
            "127.0.0.1:7719",
            "--client",
            client_path.to_str().unwrap(),
            "--model-id",
            "echo",
            "--target-dfil",
            "1000000.0",
            "--seed",
            "2",
        ])
        .output()
        .unwrap();
    let _ = server.kill();
    let _ = server.wait();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("prediction"));
}
