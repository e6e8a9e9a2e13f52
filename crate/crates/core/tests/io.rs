use noncls::io::*;
use noncls::photostats::{
    sample_histogram, sample_joint_histogram, DarkCountConvention, DetectorParams, Distribution, JointDistribution,
};
use noncls::pipeline::PipelineConfig;

fn histogram() -> Distribution {
    let p = Distribution::new(vec![0.1, 0.2, 0.3, 0.25, 0.15]).unwrap();
    sample_histogram(&p, 10_000, 5).unwrap()
}

#[test]
fn histogram_csv_round_trip_is_byte_identical() {
    let h = histogram();
    let text = distribution_to_csv(&h).unwrap();
    assert!(text.starts_with("index,probability,count\n"));
    let back = distribution_from_csv(&text).unwrap();
    assert_eq!(back, h);
    assert_eq!(distribution_to_csv(&back).unwrap(), text);
}

#[test]
fn distribution_csv_round_trip_keeps_every_bit() {
    let d = Distribution::normalized(vec![1.0 / 3.0, 0.1, 0.7, 1e-17, 0.2]).unwrap();
    let text = distribution_to_csv(&d).unwrap();
    assert!(text.starts_with("index,probability\n"));
    let back = distribution_from_csv(&text).unwrap();
    for (a, b) in back.probs().iter().zip(d.probs()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(distribution_to_csv(&back).unwrap(), text);
}

#[test]
fn joint_csv_and_json_round_trips() {
    let j = JointDistribution::new(vec![0.1, 0.2, 0.05, 0.3, 0.15, 0.2], 2, 3).unwrap();
    let h = sample_joint_histogram(&j, 5000, 1).unwrap();
    for d in [&j, &h] {
        let csv = joint_to_csv(d).unwrap();
        let back = joint_from_csv(&csv).unwrap();
        assert_eq!(&back, d);
        assert_eq!(joint_to_csv(&back).unwrap(), csv);

        let json = joint_to_json(d, None).unwrap();
        let back: DistributionFile = serde_json::from_str(&json).unwrap();
        assert_eq!(&back.to_joint().unwrap(), d);
        assert_eq!(joint_to_json(&back.to_joint().unwrap(), None).unwrap(), json);
    }
    assert!(joint_to_csv(&h).unwrap().starts_with("index,index2,probability,count\n"));
}

#[test]
fn json_round_trip_keeps_meta() {
    let h = histogram();
    let meta = serde_json::json!({"c_s": 5, "source": "simulated"});
    let text = distribution_to_json(&h, Some(meta.clone())).unwrap();
    let file: DistributionFile = serde_json::from_str(&text).unwrap();
    assert_eq!(file.meta, Some(meta.clone()));
    assert_eq!(file.n_frames, Some(10_000));
    let back = file.to_distribution().unwrap();
    assert_eq!(back, h);
    assert_eq!(distribution_to_json(&back, Some(meta)).unwrap(), text);
}

#[test]
fn files_dispatch_on_extension() {
    let dir = tempfile::tempdir().unwrap();
    let h = histogram();
    for name in ["h.csv", "h.json"] {
        let path = dir.path().join("sub").join(name);
        write_distribution(&path, &h, None).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let back = read_distribution(&path).unwrap();
        assert_eq!(back, h);
        write_distribution(&path, &back, None).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }
}

#[test]
fn missing_indices_are_zero() {
    let d = distribution_from_csv("index,probability\n0,0.5\n3,0.5\n").unwrap();
    assert_eq!(d.probs(), &[0.5, 0.0, 0.0, 0.5]);
}

#[test]
fn malformed_csv_is_rejected() {
    assert!(distribution_from_csv("index,probability\n0,0.5\n0,0.5\n").is_err());
    assert!(distribution_from_csv("n,p\n0,1\n").is_err());
    assert!(distribution_from_csv("index,probability\n0,abc\n").is_err());
    assert!(distribution_from_csv("index,probability\n").is_err());
    assert!(distribution_from_csv("index,probability\n0,0.5\n1,0.4\n").is_err());
    assert!(distribution_from_csv("index,index2,probability\n0,0,1\n").is_err());
    assert!(joint_from_csv("index,probability\n0,1\n").is_err());
    let err = distribution_from_csv("index,probability\n0,-0.5\n1,1.5\n").unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn inconsistent_json_is_rejected() {
    let bad_frames = r#"{"probs":[0.5,0.5],"counts":[1,1],"n_frames":3}"#;
    assert!(serde_json::from_str::<DistributionFile>(bad_frames).unwrap().to_distribution().is_err());
    let bad_len = r#"{"probs":[0.5,0.5],"counts":[1,1,2]}"#;
    assert!(serde_json::from_str::<DistributionFile>(bad_len).unwrap().to_distribution().is_err());
    let no_shape = r#"{"probs":[0.5,0.5]}"#;
    assert!(serde_json::from_str::<DistributionFile>(no_shape).unwrap().to_joint().is_err());
}

#[test]
fn detector_files_follow_the_dark_count_convention() {
    let roi: DetectorSpec = parse_toml("eta = 0.228\nd = 0.206\nn_pix = 6528\n").unwrap();
    assert_eq!(roi.d_convention, DarkCountConvention::PerRoi);
    assert_eq!(roi.params().unwrap(), DetectorParams::reference_signal());
    let pixel: DetectorSpec = parse_toml("eta = 0.5\nd = 1e-5\nd_convention = \"per_pixel\"\nn_pix = 100\n").unwrap();
    assert_eq!(pixel.params().unwrap().d, 1e-5);
    assert!(parse_toml::<DetectorSpec>("eta = 0.5\nd = 0.0\nn_pix = 10\nextra = 1\n").is_err());
    assert!(parse_toml::<DetectorSpec>("eta = 1.5\nd = 0.0\nn_pix = 10\n").unwrap().params().is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("det.toml");
    std::fs::write(&path, to_toml(&DetectorSpec::reference_idler()).unwrap()).unwrap();
    assert_eq!(read_detector(&path).unwrap(), DetectorParams::reference_idler());
}

#[test]
fn source_files_validate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("src.toml");
    std::fs::write(&path, "m_p = 270.0\nm_s = 0.01\nm_i = 0.026\nb_p = 0.032\nb_s = 7.6\nb_i = 5.3\n").unwrap();
    assert_eq!(read_source(&path).unwrap(), noncls::photostats::TwinBeamParams::reference());
    std::fs::write(&path, "m_p = -1.0\nm_s = 0.01\nm_i = 0.026\nb_p = 0.032\nb_s = 7.6\nb_i = 5.3\n").unwrap();
    assert!(read_source(&path).is_err());
}

#[test]
fn empty_pipeline_config_means_the_experimental_setup() {
    let cfg = PipelineConfig::from_toml("").unwrap();
    assert_eq!(cfg.seed_or(None), 0);
    assert_eq!(cfg.seed_or(Some(4)), 4);
    assert_eq!(cfg.det_s().unwrap(), DetectorParams::reference_signal());
    let bench = cfg.bench_config(3).unwrap();
    assert_eq!(bench.c_s, (2..=9).collect::<Vec<_>>());
    assert_eq!(bench.replicas, 10);
    assert!(PipelineConfig::from_toml("[bench]\nbogus = 1\n").is_err());
}

#[test]
fn pipeline_config_overrides_apply() {
    let text = r#"
seed = 11
[source]
m_p = 100.0
m_s = 0.1
m_i = 0.1
b_p = 0.05
b_s = 1.0
b_i = 1.0
[bench]
frames = 0
methods = ["em"]
[training]
per_class = 10
noise_frames = 0
classes = 4
range = "0:0.1"
[[training.families]]
c_s = [1, 2]
b_p_grid = [0.0]
b_p_linspace = [0.01, 0.05, 5]
"#;
    let cfg = PipelineConfig::from_toml(text).unwrap();
    assert_eq!(cfg.seed_or(None), 11);
    let err = cfg.bench_config(1).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let t = cfg.training_config(1).unwrap();
    assert_eq!(t.per_class, 10);
    assert_eq!(t.noise_frames, None);
    assert_eq!(t.scheme.n_classes, 4);
    assert_eq!(t.families.len(), 1);
    assert_eq!(t.families[0].b_p_grid.len(), 6);
    assert_eq!(t.families[0].base.m_p, 100.0);
}
