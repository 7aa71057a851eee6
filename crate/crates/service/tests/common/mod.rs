#![allow(dead_code)]

use std::path::Path;
use std::sync::OnceLock;

use phasorwatch::DecisionTree;
use phasorwatch_service::config::InputKind;
use phasorwatch_service::pipeline::load_classifier;
use phasorwatch_service::PipelineConfig;

/// 2-minute training window so scenarios stay short.
pub fn base_config(data_dir: &Path) -> PipelineConfig {
    let mut c = PipelineConfig {
        tau_minutes: 2.0,
        data_dir: data_dir.to_path_buf(),
        ..PipelineConfig::default()
    };
    c.input.speed = 0.0;
    c.classifier.bootstrap_events = 0;
    c
}

pub fn scenario_config(dir: &Path, scenario: &str) -> PipelineConfig {
    let path = dir.join("scenario.txt");
    std::fs::write(&path, scenario).unwrap();
    let mut c = base_config(&dir.join("data"));
    c.input.kind = InputKind::Synthetic;
    c.input.path = Some(path);
    c
}

pub const THREE_EVENTS: &str = "\
duration_s = 400
rate_hz = 2
seed = 7
event = spike, 200, 20, 0.5
event = drop, 260, 20, 3
event = oscillatory, 320, 20, 5
";

/// Small tree trained once per test binary.
pub fn tree() -> DecisionTree {
    static TREE: OnceLock<DecisionTree> = OnceLock::new();
    TREE.get_or_init(|| {
        let mut c = base_config(Path::new("unused"));
        c.classifier.bootstrap_events = 80;
        load_classifier(&c).unwrap().expect("bootstrap enabled")
    })
    .clone()
}
