use std::path::{Path, PathBuf};

use fbmlab::systems;
use fbmlab_cli::commands::{
    FbmPayload, GammaPayload, HormanderPayload, ProbePayload, SdePayload, SmalltimePayload,
};
use fbmlab_cli::output::{from_json, to_json, PathTable, ReportEnvelope};
use fbmlab_cli::{dispatch, exit, replay, resolve_threads, Manifest};
use serde::de::DeserializeOwned;
use serde::Serialize;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["fbmlab"];
    argv.extend_from_slice(args);
    dispatch(&argv)
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn write_system(dir: &Path, name: &str, sys: &fbmlab::poly::VectorFieldSystem) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, sys.to_json().unwrap()).unwrap();
    path
}

fn round_trips<T: Serialize + DeserializeOwned + PartialEq + std::fmt::Debug>(path: &Path) {
    let bytes = std::fs::read(path).unwrap();
    let parsed: ReportEnvelope<T> = from_json(&bytes).unwrap();
    let again = to_json(&parsed).unwrap();
    assert_eq!(
        again,
        bytes,
        "{} does not re-serialise identically",
        path.display()
    );
    assert_eq!(from_json::<ReportEnvelope<T>>(&again).unwrap(), parsed);
}

#[test]
fn fbm_sample_writes_the_documented_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.csv");
    let code = run(&[
        "fbm",
        "sample",
        "--hurst",
        "0.7",
        "--steps",
        "256",
        "--paths",
        "2",
        "--seed",
        "1",
        "--out",
        &s(&out),
    ]);
    assert_eq!(code, exit::OK);
    let bytes = std::fs::read(&out).unwrap();
    let table = PathTable::from_csv(&bytes).unwrap();
    assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 1 + 2 * 257);
    assert!(bytes.starts_with(b"t,comp_0,path_id\n"));
    assert_eq!(table.paths.len(), 2);
    assert_eq!(table.times.len(), 257);
    let meta: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("p.csv.meta.json")).unwrap())
            .unwrap();
    for key in ["hurst", "seed", "method", "n_steps", "version"] {
        assert!(meta.get(key).is_some(), "sidecar lacks {key}");
    }
    let manifest = Manifest::read(&dir.path().join("p.csv.manifest.json")).unwrap();
    assert_eq!(manifest.seed, 1);
    assert_eq!(manifest.outputs.len(), 2);
}

#[test]
fn csv_and_json_carry_the_same_paths() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("p.csv");
    let json = dir.path().join("p.json");
    let common = [
        "fbm", "sample", "--hurst", "0.8", "--dim", "2", "--steps", "32", "--paths", "3",
        "--method", "volterra", "--seed", "4",
    ];
    let (csv_s, json_s) = (s(&csv), s(&json));
    let mut a = common.to_vec();
    a.extend(["--out", &csv_s]);
    assert_eq!(run(&a), exit::OK);
    let mut b = common.to_vec();
    b.extend(["--format", "json", "--out", &json_s]);
    assert_eq!(run(&b), exit::OK);
    let table = PathTable::from_csv(&std::fs::read(&csv).unwrap()).unwrap();
    let env: ReportEnvelope<FbmPayload> = from_json(&std::fs::read(&json).unwrap()).unwrap();
    assert_eq!(env.payload.paths.len(), 3);
    for (row, p) in table.paths.iter().zip(&env.payload.paths) {
        assert_eq!(row.0, p.replica);
        assert_eq!(row.1, p.values);
    }
    round_trips::<FbmPayload>(&json);
}

#[test]
fn invalid_input_is_rejected_with_diagnostics() {
    assert_eq!(
        run(&[
            "fbm",
            "sample",
            "--hurst",
            "0.4",
            "--steps",
            "16",
            "--out",
            "/nonexistent/x.csv"
        ]),
        exit::INVALID
    );
    assert_eq!(run(&["fbm", "sample", "--steps", "16"]), exit::INVALID);
    assert_eq!(run(&["nonsense"]), exit::INVALID);
    assert_eq!(
        run(&[
            "sde",
            "solve",
            "--config",
            "/no/such/system.json",
            "--hurst",
            "0.7"
        ]),
        exit::INVALID
    );
    assert_eq!(
        run(&[
            "norris",
            "sweep",
            "--hurst",
            "0.7",
            "--scenario",
            "sideways"
        ]),
        exit::INVALID
    );
    assert_eq!(
        run(&[
            "hormander",
            "check",
            "--fields",
            "heisenberg",
            "--point",
            "0,0"
        ]),
        exit::INVALID
    );
    assert_eq!(run(&["--help"]), exit::OK);
    assert!(resolve_threads(Some(0)).is_err());
    assert_eq!(resolve_threads(Some(3)).unwrap(), 3);
}

#[test]
fn hormander_check_on_a_system_file() {
    let dir = tempfile::tempdir().unwrap();
    let sys = write_system(dir.path(), "heis.json", &systems::heisenberg());
    let out = dir.path().join("flag.json");
    let code = run(&[
        "hormander",
        "check",
        "--fields",
        &s(&sys),
        "--point",
        "0,0,0",
        "--max-level",
        "5",
        "--mode",
        "weak",
        "--out",
        &s(&out),
    ]);
    assert_eq!(code, exit::OK);
    let env: ReportEnvelope<HormanderPayload> = from_json(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(env.payload.check.n_star, Some(2));
    assert_eq!(env.payload.flag.as_ref().unwrap().growth_vector, vec![2, 3]);
    round_trips::<HormanderPayload>(&out);
    let manifest = Manifest::read(&dir.path().join("flag.json.manifest.json")).unwrap();
    assert_eq!(manifest.inputs.len(), 1);
    assert!(manifest.inputs[0].path.is_absolute());
}

#[test]
fn every_subcommand_replays_byte_identically_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let heis = write_system(d, "heis.json", &systems::heisenberg());
    let runs: Vec<(Vec<String>, &str)> = vec![
        (
            vec![
                "fbm", "sample", "--hurst", "0.65", "--dim", "2", "--steps", "64", "--paths", "6",
                "--method", "volterra",
            ],
            "fbm.csv",
        ),
        (
            vec![
                "sde",
                "solve",
                "--config",
                &s(&heis),
                "--hurst",
                "0.7",
                "--steps",
                "64",
                "--paths",
                "5",
                "--scheme",
                "heun",
            ],
            "sde.csv",
        ),
        (
            vec![
                "sde",
                "solve",
                "--config",
                "quadratic",
                "--hurst",
                "0.7",
                "--steps",
                "32",
                "--paths",
                "3",
                "--format",
                "json",
            ],
            "sde.json",
        ),
        (
            vec![
                "frac",
                "check-reprh",
                "--hurst",
                "0.7",
                "--steps",
                "128",
                "--pairs",
                "4",
            ],
            "frac.json",
        ),
        (
            vec![
                "malliavin",
                "gamma",
                "--config",
                &s(&heis),
                "--hurst",
                "0.7",
                "--steps",
                "64",
            ],
            "gamma.json",
        ),
        (
            vec![
                "malliavin",
                "probe",
                "--config",
                "elliptic2",
                "--hurst",
                "0.7",
                "--steps",
                "32",
                "--paths",
                "40",
                "--eps",
                "1e-1,1e-2",
            ],
            "probe.json",
        ),
        (
            vec![
                "norris",
                "sweep",
                "--hurst",
                "0.7",
                "--paths",
                "60",
                "--steps",
                "64",
                "--scenario",
                "pullback",
            ],
            "norris.json",
        ),
        (
            vec![
                "norris",
                "sweep",
                "--hurst",
                "0.7",
                "--paths",
                "30",
                "--steps",
                "64",
                "--scenario",
                "degenerate",
                "--format",
                "csv",
            ],
            "norris.csv",
        ),
        (
            vec![
                "hormander",
                "check",
                "--fields",
                "grushin",
                "--point",
                "0,0",
            ],
            "hormander.json",
        ),
        (
            vec![
                "smalltime",
                "exponent",
                "--config",
                "elliptic2",
                "--hurst",
                "0.6",
                "--paths",
                "400",
                "--tgrid",
                "0.05:0.4:4log",
                "--steps",
                "16",
                "--batches",
                "4",
            ],
            "smalltime.json",
        ),
    ]
    .into_iter()
    .map(|(a, o)| (a.into_iter().map(String::from).collect(), o))
    .collect();
    for (args, name) in &runs {
        let out = d.join(name);
        let mut argv: Vec<&str> = args.iter().map(String::as_str).collect();
        let out_s = s(&out);
        argv.extend(["--seed", "17", "--threads", "1", "--out", &out_s]);
        assert_eq!(run(&argv), exit::OK, "{argv:?}");
        let manifest = d.join(format!("{name}.manifest.json"));
        for threads in [2, 5] {
            let target = d.join(format!("replay-{threads}"));
            let outcome = replay(&manifest, Some(&target), Some(threads)).unwrap();
            assert!(
                outcome.identical,
                "{name} differs with {threads} threads: {outcome:?}"
            );
        }
    }
    round_trips::<SdePayload>(&d.join("sde.json"));
    round_trips::<GammaPayload>(&d.join("gamma.json"));
    round_trips::<ProbePayload>(&d.join("probe.json"));
    round_trips::<fbmlab::frac::RepresentationReport>(&d.join("frac.json"));
    round_trips::<fbmlab::norris::NorrisReport>(&d.join("norris.json"));
    round_trips::<SmalltimePayload>(&d.join("smalltime.json"));
    let replay_code = run(&[
        "replay",
        &s(&d.join("fbm.csv.manifest.json")),
        "--out-dir",
        &s(&d.join("cli-replay")),
    ]);
    assert_eq!(replay_code, exit::OK);
}

fn edit_manifest(path: &Path, f: impl FnOnce(&mut serde_json::Value)) {
    let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    f(&mut v);
    std::fs::write(path, serde_json::to_vec_pretty(&v).unwrap()).unwrap();
}

#[test]
fn tampered_or_stale_manifests_are_caught() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = d.join("x.csv");
    assert_eq!(
        run(&[
            "fbm",
            "sample",
            "--hurst",
            "0.7",
            "--steps",
            "32",
            "--seed",
            "3",
            "--out",
            &s(&out)
        ]),
        exit::OK
    );
    let manifest = d.join("x.csv.manifest.json");
    edit_manifest(&manifest, |v| v["seed"] = serde_json::json!(4));
    let outcome = replay(&manifest, Some(&d.join("r1")), None).unwrap();
    assert!(!outcome.identical);
    assert!(!outcome.outputs[0].identical);
    assert_eq!(
        run(&["replay", &s(&manifest), "--out-dir", &s(&d.join("r2"))]),
        exit::MISMATCH
    );

    edit_manifest(&manifest, |v| {
        v["tool_version"] = serde_json::json!("0.0.0-old")
    });
    let err = replay(&manifest, Some(&d.join("r3")), None).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");
    edit_manifest(&manifest, |v| v["schema_version"] = serde_json::json!(99));
    assert!(replay(&manifest, Some(&d.join("r4")), None).is_err());

    let sys = write_system(d, "sys.json", &systems::elliptic(2));
    let out = d.join("g.json");
    assert_eq!(
        run(&[
            "malliavin",
            "gamma",
            "--config",
            &s(&sys),
            "--hurst",
            "0.7",
            "--steps",
            "16",
            "--out",
            &s(&out)
        ]),
        exit::OK
    );
    let abs = std::fs::canonicalize(&sys).unwrap();
    std::fs::remove_file(&sys).unwrap();
    let err = replay(&d.join("g.json.manifest.json"), Some(&d.join("r5")), None).unwrap_err();
    assert!(
        err.to_string().contains(&abs.display().to_string()),
        "{err}"
    );
}
