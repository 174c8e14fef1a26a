//! Per-command CLI behavior: exit codes, error context, and byte-level
//! agreement with direct library calls.

use std::path::{Path, PathBuf};
use std::process::Command;

fn moxel() -> Command {
    Command::new(env!("CARGO_BIN_EXE_moxel"))
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("moxel_cli_{name}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_tiny_config(dir: &Path) -> PathBuf {
    let mut cfg = moxel::trainer::RunConfig::desk_default();
    cfg.data.batches_per_epoch = 3;
    cfg.model.token_dim = 8;
    cfg.model.adapter_hidden = 10;
    cfg.model.expert_hidden = 6;
    cfg.model.num_blocks = 2;
    cfg.model.moe_positions = vec![1];
    cfg.model.num_experts = 4;
    for d in cfg.data.synth.raw_dims.values_mut() {
        *d = 6;
    }
    cfg.data
        .synth
        .raw_dims
        .insert(moxel::tokens::ModalityTag::Text, 8);
    for c in cfg.data.synth.counts.values_mut() {
        *c = 2;
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

/// Three-view instance with cover sets A={1,2,3}, B={3,4}, C={4,5}:
/// cameras on a line looking down +z with a 90-degree frustum, voxels in
/// one z=2 plane (visible from camera at x iff |vx - x| < 2).
fn write_abc_scene(dir: &Path) -> PathBuf {
    let identity_pose = |x: f64| {
        vec![
            1.0, 0.0, 0.0, x, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ]
    };
    let voxel = |id: u64, x: f64| serde_json::json!({"id": id, "xyz": [x, 0.0, 2.0], "type": "object:probe"});
    let view = |index: usize, x: f64| {
        serde_json::json!({
            "index": index,
            "pose": identity_pose(x),
            "intrinsics": {"fx": 32.0, "fy": 32.0, "cx": 32.0, "cy": 32.0},
            "size": [64, 64]
        })
    };
    let scene = serde_json::json!({
        "voxels": [voxel(1, -1.0), voxel(2, 0.0), voxel(3, 1.5), voxel(4, 4.5), voxel(5, 6.0)],
        "views": [view(0, 0.0), view(1, 3.0), view(2, 6.0)],
    });
    let path = dir.join("abc.json");
    std::fs::write(&path, serde_json::to_string_pretty(&scene).unwrap()).unwrap();
    path
}

#[test]
fn missing_config_exits_1_with_path_in_message() {
    let out = moxel()
        .args(["train", "--config", "/nonexistent/missing.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing.json"), "{stderr}");
}

#[test]
fn numeric_divergence_exits_2() {
    let dir = temp_dir("diverge");
    let cfg_path = write_tiny_config(&dir);
    let mut cfg: moxel::trainer::RunConfig =
        serde_json::from_str(&std::fs::read_to_string(&cfg_path).unwrap()).unwrap();
    cfg.stage1.lr = 1e18;
    cfg.stage1.schedule = moxel::trainer::LrSchedule::Constant;
    cfg.data.batches_per_epoch = 8;
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = moxel()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.join("run"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("non-finite"), "{stderr}");
}

#[test]
fn stage1_only_checkpoint_is_tagged_stage_1() {
    let dir = temp_dir("stage1");
    let cfg = write_tiny_config(&dir);
    let out_dir = dir.join("run");
    let out = moxel()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--stage", "1", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let ckpt = moxel::trainer::Checkpoint::load(&out_dir.join("checkpoint_stage1.json")).unwrap();
    assert_eq!(ckpt.stage, 1);
    assert!(!out_dir.join("checkpoint_stage2.json").exists());

    // Stage 2 resumes from the stage-1 checkpoint.
    let out2_dir = dir.join("run2");
    let out2 = moxel()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--stage", "2", "--from"])
        .arg(out_dir.join("checkpoint_stage1.json"))
        .arg("--out")
        .arg(&out2_dir)
        .output()
        .unwrap();
    assert_eq!(
        out2.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out2.stderr)
    );
    let ckpt2 = moxel::trainer::Checkpoint::load(&out2_dir.join("checkpoint_stage2.json")).unwrap();
    assert_eq!(ckpt2.stage, 2);
}

#[test]
fn full_seeded_run_matches_the_golden_digest() {
    // Golden value from the first verified run of the shipped desk config.
    let dir = temp_dir("golden");
    let out = moxel()
        .args(["train", "--config"])
        .arg(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../configs/desk.json"
        ))
        .args(["--out"])
        .arg(dir.join("run"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    let digest_line = stdout
        .lines()
        .find(|l| l.starts_with("checkpoint digest "))
        .unwrap();
    assert_eq!(digest_line, "checkpoint digest bfe268009fc70fd9");
}

#[test]
fn abc_scene_selects_a_then_c_and_cli_matches_library() {
    let dir = temp_dir("abc");
    let scene_path = write_abc_scene(&dir);
    let selection_path = dir.join("selection.json");
    let out = moxel()
        .args(["sample-frames", "--scene"])
        .arg(&scene_path)
        .args(["--k", "2", "--d-max", "4.0", "--window", "2", "--out"])
        .arg(&selection_path)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let written = std::fs::read_to_string(&selection_path).unwrap();
    let result: moxel::mvcs::SelectionResult = serde_json::from_str(&written).unwrap();
    assert_eq!(result.selected_indices, vec![0, 2]);
    assert_eq!(result.covered_voxel_ids.len(), 5);

    // Library call with the same parameters produces identical bytes.
    let scene = moxel::mvcs::load_scene(&scene_path).unwrap();
    let pruned =
        moxel::mvcs::prune_voxels(&scene.voxels, moxel::mvcs::PruneMode::ExcludeStructural);
    let lib = moxel::mvcs::greedy_select(&scene.views, &pruned, 2, 4.0, 1).unwrap();
    let lib = moxel::mvcs::refine_views(&lib, &scene.views, 2).unwrap();
    let mut lib_json = serde_json::to_string_pretty(&lib).unwrap();
    lib_json.push('\n');
    assert_eq!(written, lib_json);
}

#[test]
fn seeded_scene_cli_output_is_byte_identical_to_library() {
    let dir = temp_dir("seeded_equiv");
    let scene_dir = dir.join("scene");
    let st = moxel()
        .args([
            "synth",
            "scene",
            "--seed",
            "33",
            "--views",
            "10",
            "--objects",
            "20",
            "--out",
        ])
        .arg(&scene_dir)
        .output()
        .unwrap();
    assert!(st.status.success());
    let selection_path = dir.join("sel.json");
    let out = moxel()
        .args(["sample-frames", "--scene"])
        .arg(scene_dir.join("scene.json"))
        .args(["--k", "4", "--d-max", "3.0", "--window", "2", "--out"])
        .arg(&selection_path)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let cli_bytes = std::fs::read_to_string(&selection_path).unwrap();

    // Same pipeline through the library.
    let scene = moxel::mvcs::load_scene(&scene_dir.join("scene.json")).unwrap();
    let pruned =
        moxel::mvcs::prune_voxels(&scene.voxels, moxel::mvcs::PruneMode::ExcludeStructural);
    let sel = moxel::mvcs::greedy_select(&scene.views, &pruned, 4, 3.0, 1).unwrap();
    let sel = moxel::mvcs::refine_views(&sel, &scene.views, 2).unwrap();
    let mut lib_bytes = serde_json::to_string_pretty(&sel).unwrap();
    lib_bytes.push('\n');
    assert_eq!(cli_bytes, lib_bytes);
}

#[test]
fn oversized_budget_warns_and_stops_early() {
    let dir = temp_dir("early");
    let scene_path = write_abc_scene(&dir);
    let out = moxel()
        .args(["sample-frames", "--scene"])
        .arg(&scene_path)
        .args(["--k", "3", "--d-max", "4.0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("warning"), "{stderr}");
    assert!(stderr.contains("2 of 3"), "{stderr}");
}

#[test]
fn malformed_scene_exits_1_with_context() {
    let dir = temp_dir("badscene");
    let path = dir.join("broken.json");
    std::fs::write(&path, "{\"voxels\": [{\"id\": }]}").unwrap();
    let out = moxel()
        .args(["sample-frames", "--scene"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("broken.json") && stderr.contains("line"),
        "{stderr}"
    );
}

#[test]
fn unknown_report_exits_1_listing_valid_names() {
    let dir = temp_dir("report");
    let trace = dir.join("trace.json");
    std::fs::write(
        &trace,
        serde_json::to_string(&moxel::moe::RoutingTrace::empty(4, 2, vec![1])).unwrap(),
    )
    .unwrap();
    let out = moxel()
        .args(["analyze", "--trace"])
        .arg(&trace)
        .args(["--report", "nonsense"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    for name in [
        "expert_modality",
        "modality_expert",
        "load_balance",
        "pathways",
    ] {
        assert!(stderr.contains(name), "{stderr}");
    }
}

#[test]
fn corrupt_trace_exits_1_instead_of_crashing() {
    let dir = temp_dir("corrupttrace");
    let trace_path = dir.join("trace.json");
    // Expert id 9 is out of range for the declared e=4.
    let trace = serde_json::json!({
        "e": 4, "k": 2, "moe_layers": [1],
        "records": [{
            "token_index": 0, "modality": "pc", "layer_index": 1,
            "probs": [0.25, 0.25, 0.25, 0.25], "selected": [9, 1], "top1": 9
        }]
    });
    std::fs::write(&trace_path, trace.to_string()).unwrap();
    let out = moxel()
        .args(["analyze", "--trace"])
        .arg(&trace_path)
        .args(["--report", "load_balance"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("out of range"), "{stderr}");
}

#[test]
fn empty_trace_exits_1() {
    let dir = temp_dir("emptytrace");
    let trace = dir.join("trace.json");
    std::fs::write(
        &trace,
        serde_json::to_string(&moxel::moe::RoutingTrace::empty(4, 2, vec![1])).unwrap(),
    )
    .unwrap();
    let out = moxel()
        .args(["analyze", "--trace"])
        .arg(&trace)
        .args(["--report", "load_balance"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn analyze_all_writes_one_file_per_report() {
    let dir = temp_dir("analyzeall");
    let cfg_path = write_tiny_config(&dir);
    let run_dir = dir.join("run");
    let st = moxel()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&run_dir)
        .status()
        .unwrap();
    assert!(st.success());
    let reports = dir.join("reports");
    let out = moxel()
        .args(["analyze", "--trace"])
        .arg(run_dir.join("trace.json"))
        .args(["--report", "all", "--format", "json", "--out"])
        .arg(&reports)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    // One MoE layer in the tiny config: three per-layer reports + pathways.
    let mut names: Vec<String> = std::fs::read_dir(&reports)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        vec![
            "expert_modality_layer1.json",
            "load_balance_layer1.json",
            "modality_expert_layer1.json",
            "pathways.json"
        ]
    );
}

#[test]
fn gradcheck_exit_codes() {
    let ok = moxel().arg("gradcheck").output().unwrap();
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    let stdout = String::from_utf8_lossy(&ok.stdout);
    for group in ["router", "experts", "adapters", "head"] {
        assert!(stdout.contains(group), "{stdout}");
    }
    let bad = moxel().args(["gradcheck", "--corrupt"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(3));
}

#[test]
fn gradcheck_reports_balance_na_for_lambda_zero() {
    let dir = temp_dir("gradlambda");
    let cfg_path = write_tiny_config(&dir);
    let mut cfg: moxel::trainer::RunConfig =
        serde_json::from_str(&std::fs::read_to_string(&cfg_path).unwrap()).unwrap();
    cfg.stage2.lambda = 0.0;
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = moxel()
        .args(["gradcheck", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("n/a"), "{stdout}");
}

#[test]
fn invalid_thread_env_exits_1() {
    let out = moxel()
        .args(["gradcheck"])
        .env("UNI3D_MOE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("UNI3D_MOE_THREADS"), "{stderr}");
}

#[test]
fn synth_tokens_fixture_round_trips() {
    let dir = temp_dir("synthtok");
    let out_dir = dir.join("tokens");
    let st = moxel()
        .args(["synth", "tokens", "--seed", "5", "--samples", "2", "--out"])
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(st.success());
    let text = std::fs::read_to_string(out_dir.join("blocks_0000.jsonl")).unwrap();
    let spec = moxel::tokens::SynthSpec::desk_default();
    let blocks = moxel::tokens::blocks_from_jsonl(&text, &spec.raw_dims).unwrap();
    assert_eq!(blocks.len(), 6);
    assert_eq!(moxel::tokens::blocks_to_jsonl(&blocks).unwrap(), text);
    let labels: Vec<Vec<usize>> =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("labels.json")).unwrap())
            .unwrap();
    assert_eq!(labels.len(), 2);
    assert_eq!(labels[0].len(), spec.total_tokens());
}
