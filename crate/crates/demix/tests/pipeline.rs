//! End-to-end tests of the pipeline commands on simulated samples.

use std::path::{Path, PathBuf};

use demix::cli::{cmd_detect, cmd_evaluate, cmd_separate, cmd_simulate, RunConfig};
use demix::hypothesis::Call;
use demix::sam::parse_alignment_file;
use demix::simulate::SyntheticSpec;

fn spec(n_strains: usize, proportions: Vec<f64>, snps: usize, depth: f64, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        ref_length: 30_000,
        n_strains,
        snps_per_strain: snps,
        proportions,
        depth,
        read_length: 150,
        error_rate: 0.02,
        seed,
    }
}

fn sample_dir(root: &Path, name: &str, spec: &SyntheticSpec) -> PathBuf {
    let dir = root.join(name);
    cmd_simulate(spec, &dir).unwrap();
    dir
}

fn config_for(dir: &Path) -> RunConfig {
    RunConfig {
        output_dir: dir.to_path_buf(),
        ..RunConfig::default()
    }
}

#[test]
fn detect_pure_sample_is_pure() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = sample_dir(tmp.path(), "pure", &spec(1, vec![1.0], 100, 100.0, 11));
    let report = cmd_detect(&config_for(&dir), &dir.join("reads.sam"), &dir.join("reference.fasta")).unwrap();
    assert_eq!(report.call, Call::Pure);
    assert!(report.em_proportions.is_none());
    // The error sites of a pure sample fall below the noise threshold, so
    // no heterogeneous site survives filtering.
    assert!(report.warnings.iter().any(|w| w == "no variant evidence"));
}

#[test]
fn detect_seventy_thirty_sample_recovers_proportions() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = sample_dir(tmp.path(), "mix", &spec(2, vec![0.7, 0.3], 100, 100.0, 12));
    let report = cmd_detect(&config_for(&dir), &dir.join("reads.sam"), &dir.join("reference.fasta")).unwrap();
    assert_eq!(report.call, Call::Mixed);
    let props = report.em_proportions.expect("mixed call carries proportions");
    assert!((props[0] - 0.7).abs() < 0.05, "props = {props:?}");
    assert!((props[1] - 0.3).abs() < 0.05, "props = {props:?}");
    // The output directory carries the side tables.
    assert!(dir.join("sites.tsv").exists());
    assert!(dir.join("mixture_responsibilities.tsv").exists());
    assert!(dir.join("report.json").exists());
}

#[test]
fn detection_threshold_loosens_with_alpha() {
    // A mixed call at alpha 0.05 implies a mixed call at alpha 0.1: the
    // chi-squared threshold shrinks as alpha grows. The hard 95:5 case can
    // therefore only switch from pure to mixed when alpha increases.
    let tmp = tempfile::tempdir().unwrap();
    let dir = sample_dir(tmp.path(), "hard", &spec(2, vec![0.95, 0.05], 100, 100.0, 13));
    let mut config = config_for(&dir);
    let strict = cmd_detect(&config, &dir.join("reads.sam"), &dir.join("reference.fasta")).unwrap();
    config.alpha = 0.10;
    let loose = cmd_detect(&config, &dir.join("reads.sam"), &dir.join("reference.fasta")).unwrap();
    assert!(loose.threshold_c < strict.threshold_c);
    assert_eq!(strict.lr_statistic, loose.lr_statistic);
    if strict.call == Call::Mixed {
        assert_eq!(loose.call, Call::Mixed);
    }
}

#[test]
fn separate_pure_sample_emits_one_identical_strain_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = sample_dir(tmp.path(), "pure", &spec(1, vec![1.0], 50, 60.0, 14));
    let report = cmd_separate(&config_for(&dir), &dir.join("reads.sam"), &dir.join("reference.fasta")).unwrap();
    assert_eq!(report.call, Call::Pure);
    assert_eq!(report.n_assigned_reads, 0);
    let strain1 = dir.join("reads.strain1.sam");
    assert!(strain1.exists());
    assert!(!dir.join("reads.strain2.sam").exists());
    let original = parse_alignment_file(&dir.join("reads.sam"), 1).unwrap();
    let emitted = parse_alignment_file(&strain1, 1).unwrap();
    assert_eq!(original.reads, emitted.reads);
}

#[test]
fn separate_mixture_partitions_reads_conservatively() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = sample_dir(tmp.path(), "mix", &spec(2, vec![0.7, 0.3], 100, 100.0, 15));
    let report = cmd_separate(&config_for(&dir), &dir.join("reads.sam"), &dir.join("reference.fasta")).unwrap();
    assert_eq!(report.call, Call::Mixed);
    assert!(report.n_assigned_reads > 0);
    let input = parse_alignment_file(&dir.join("reads.sam"), 1).unwrap();
    let a = parse_alignment_file(&dir.join("reads.strain1.sam"), 1).unwrap();
    let b = parse_alignment_file(&dir.join("reads.strain2.sam"), 1).unwrap();
    // Union covers the input; the intersection is exactly the unassigned reads.
    let ids = |reads: &[demix::sam::AlignedRead]| -> std::collections::HashSet<String> {
        reads.iter().map(|r| r.read_id.clone()).collect()
    };
    let union: std::collections::HashSet<String> =
        ids(&a.reads).union(&ids(&b.reads)).cloned().collect();
    assert_eq!(union, ids(&input.reads));
    let intersection = ids(&a.reads).intersection(&ids(&b.reads)).count();
    assert_eq!(
        intersection,
        input.reads.len() - report.n_assigned_reads,
        "both strain files share exactly the unassigned reads"
    );
    assert!(dir.join("assignments.tsv").exists());
    assert!(dir.join("consensus.fasta").exists());
}

#[test]
fn separate_three_strains_emits_three_files_and_consensi() {
    let tmp = tempfile::tempdir().unwrap();
    let three = SyntheticSpec {
        ref_length: 50_000,
        snps_per_strain: 300,
        ..spec(3, vec![0.10, 0.25, 0.65], 300, 150.0, 16)
    };
    let dir = sample_dir(tmp.path(), "three", &three);
    let mut config = config_for(&dir);
    config.n_strains = 3;
    let report = cmd_separate(&config, &dir.join("reads.sam"), &dir.join("reference.fasta")).unwrap();
    assert_eq!(report.call, Call::Mixed);
    for k in 1..=3 {
        assert!(dir.join(format!("reads.strain{k}.sam")).exists());
    }
    let consensi = demix::fasta::read_fasta_file(&dir.join("consensus.fasta")).unwrap();
    assert_eq!(consensi.len(), 3);
    let props = report.em_proportions.unwrap();
    assert_eq!(props.len(), 3);
    for (got, expected) in props.iter().zip([0.65, 0.25, 0.10]) {
        assert!((got - expected).abs() < 0.05, "props = {props:?}");
    }

    // Recall per strain: estimated strain k (descending proportion) maps to
    // true strain by proportion rank, here est 0 -> truth 2 and so on.
    let truth = demix::simulate::read_truth(&dir.join("truth.json")).unwrap();
    let mapping = [2usize, 1, 0];
    let mut per_strain = [(0u64, 0u64); 3];
    for (i, line) in std::fs::read_to_string(dir.join("assignments.tsv"))
        .unwrap()
        .lines()
        .enumerate()
    {
        if i == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let assigned = mapping[fields[1].parse::<usize>().unwrap()];
        let true_strain = truth.read_provenance[fields[0]];
        per_strain[true_strain].0 += 1;
        if assigned == true_strain {
            per_strain[true_strain].1 += 1;
        }
    }
    for (strain, &(total, correct)) in per_strain.iter().enumerate() {
        let recall = correct as f64 / total as f64;
        assert!(
            recall > 0.5,
            "strain {strain}: recall {recall:.3} over {total} reads"
        );
    }
}

#[test]
fn assignment_errors_grow_toward_even_proportions() {
    let tmp = tempfile::tempdir().unwrap();
    let panel = tmp.path().join("panel");
    for (name, major, seed) in [("m70", 0.70, 31), ("m60", 0.60, 32), ("m50", 0.50, 33)] {
        let dir = sample_dir(&panel, name, &spec(2, vec![major, 1.0 - major], 100, 80.0, seed));
        cmd_separate(&config_for(&dir), &dir.join("reads.sam"), &dir.join("reference.fasta")).unwrap();
    }
    let summary = cmd_evaluate(&panel, &tmp.path().join("eval")).unwrap();
    let off_fraction = |name: &str| {
        let score = summary
            .confusion
            .iter()
            .find(|c| c.sample_id == name)
            .unwrap();
        1.0 - score.n_correct as f64 / score.n_assigned as f64
    };
    let (f70, f60, f50) = (off_fraction("m70"), off_fraction("m60"), off_fraction("m50"));
    assert!(
        f70 < f60 && f60 < f50,
        "off-diagonal fractions not increasing toward 50:50: {f70:.3}, {f60:.3}, {f50:.3}"
    );
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let s = spec(2, vec![0.6, 0.4], 30, 30.0, 99);
    let a = sample_dir(tmp.path(), "a", &s);
    let b = sample_dir(tmp.path(), "b", &s);
    for name in ["reference.fasta", "reads.sam", "truth.json"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap()
        );
    }
}

#[test]
fn detect_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = sample_dir(tmp.path(), "mix", &spec(2, vec![0.7, 0.3], 60, 80.0, 17));
    let out_a = tmp.path().join("out_a");
    let out_b = tmp.path().join("out_b");
    for out in [&out_a, &out_b] {
        let mut config = config_for(out);
        config.seed = 5;
        cmd_detect(&config, &dir.join("reads.sam"), &dir.join("reference.fasta")).unwrap();
    }
    assert_eq!(
        std::fs::read(out_a.join("report.json")).unwrap(),
        std::fs::read(out_b.join("report.json")).unwrap()
    );
}

#[test]
fn evaluate_scores_a_small_panel() {
    let tmp = tempfile::tempdir().unwrap();
    let panel = tmp.path().join("panel");
    for (name, s) in [
        ("mix70", spec(2, vec![0.7, 0.3], 100, 100.0, 18)),
        ("pure", spec(1, vec![1.0], 100, 100.0, 19)),
    ] {
        let dir = sample_dir(&panel, name, &s);
        let mut config = config_for(&dir);
        config.n_strains = s.n_strains.max(2);
        cmd_separate(&config, &dir.join("reads.sam"), &dir.join("reference.fasta")).unwrap();
    }
    // An incomplete sample directory is skipped with a warning.
    std::fs::create_dir_all(panel.join("incomplete")).unwrap();
    let out = tmp.path().join("eval");
    let summary = cmd_evaluate(&panel, &out).unwrap();
    assert_eq!(summary.n_samples, 2);
    assert!(summary.warnings.iter().any(|w| w.contains("incomplete")));
    assert_eq!(summary.detection.mixed_called_mixed, 1);
    assert_eq!(summary.detection.pure_called_pure, 1);
    // Perfectly separated statistics give AUC 1.
    assert_eq!(summary.auc, Some(1.0));
    assert!(summary.rmse_major.unwrap() < 0.05);
    assert!(out.join("evaluation.json").exists());
    assert!(out.join("roc_curve.tsv").exists());
    assert!(out.join("confusion_mix70.tsv").exists());
    assert!(out.join("alpha_grid.tsv").exists());
    // The mixed sample's reads are overwhelmingly correctly assigned.
    let score = &summary.confusion[0];
    assert!(score.n_correct as f64 / score.n_assigned as f64 > 0.9);
}

#[test]
fn regions_file_restricts_the_analysis() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = sample_dir(tmp.path(), "mix", &spec(2, vec![0.7, 0.3], 60, 80.0, 20));
    let gff = tmp.path().join("regions.gff");
    std::fs::write(&gff, "ref\tsrc\tgene\t1001\t11000\t.\t+\t.\tID=g1\n").unwrap();
    let whole = cmd_detect(&config_for(&dir), &dir.join("reads.sam"), &dir.join("reference.fasta")).unwrap();
    let restricted_out = tmp.path().join("restricted");
    let mut config = config_for(&restricted_out);
    config.regions_path = Some(gff);
    let restricted =
        cmd_detect(&config, &dir.join("reads.sam"), &dir.join("reference.fasta")).unwrap();
    assert!(restricted.n_filtered_sites < whole.n_filtered_sites);
    // Every analyzed site lies inside [1000, 11000).
    let sites = std::fs::read_to_string(restricted_out.join("sites.tsv")).unwrap();
    for line in sites.lines().skip(1) {
        let pos: usize = line.split('\t').next().unwrap().parse().unwrap();
        assert!((1000..11000).contains(&pos), "site {pos} outside region");
    }
}

#[test]
fn cli_binary_reports_errors_with_nonzero_exit() {
    let output = std::process::Command::new(env!("CARGO_BIN_EXE_demix"))
        .args(["detect", "/nonexistent/reads.sam", "/nonexistent/ref.fasta"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.starts_with("error: "), "stderr = {stderr}");
}

#[test]
fn cli_binary_detect_succeeds_on_valid_input() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = sample_dir(tmp.path(), "mix", &spec(2, vec![0.7, 0.3], 60, 60.0, 21));
    let output = std::process::Command::new(env!("CARGO_BIN_EXE_demix"))
        .args([
            "detect",
            dir.join("reads.sam").to_str().unwrap(),
            dir.join("reference.fasta").to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("call=mixed"), "stdout = {stdout}");
}
