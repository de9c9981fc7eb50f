use std::path::Path;

use fpaug::pipeline::ExperimentConfig;

#[test]
fn bundled_config_spells_out_the_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.cfg");
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    let text = std::fs::read_to_string(&path).unwrap();
    let keys = text.lines().filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#')).count();
    assert_eq!(keys, ExperimentConfig::default().to_text().lines().count());
}
