#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use motion_language_cli::config::{ModelKind, RunConfig};

pub const JOINTS: [&str; 3] = ["j0", "j1", "j2"];

const CLASSES: [(&str, &[&str], f64); 4] = [
    ("walk", &["a person walks forward", "someone is walking"], 0.5),
    ("wave", &["a person waves with the right hand"], 1.5),
    ("jump", &["someone jumps up", "a human jumps twice!"], 1.0),
    ("turn", &["a person turns around"], 0.25),
];

/// Writes `n` motion triples at 100 Hz. Motion `i` belongs to class
/// `i % 4`, lasts `100 + 13 i` frames and carries an extra unused joint.
pub fn write_dataset(dir: &Path, n: usize) {
    fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let (label, annotations, freq) = CLASSES[i % CLASSES.len()];
        let frames = 100 + 13 * i;
        let mut names: Vec<&str> = JOINTS.to_vec();
        names.insert(1, "unused");
        let joints: String = names.iter().map(|n| format!("<Joint name=\"{n}\"/>")).collect();
        let body: String = (0..frames)
            .map(|t| {
                let time = t as f64 / 100.0;
                let values: Vec<String> = (0..names.len())
                    .map(|j| format!("{:e}", (std::f64::consts::TAU * freq * time + j as f64).sin() * (1.0 + j as f64 * 0.1)))
                    .collect();
                format!("<MotionFrame><Timestep>{time}</Timestep><JointPosition>{}</JointPosition></MotionFrame>", values.join(" "))
            })
            .collect();
        let xml = format!(
            "<?xml version='1.0'?><MMM><Motion name='subject'><JointOrder>{joints}</JointOrder><MotionFrames>{body}</MotionFrames></Motion></MMM>"
        );
        let id = format!("{:05}", i + 1);
        fs::write(dir.join(format!("{id}_mmm.xml")), xml).unwrap();
        fs::write(dir.join(format!("{id}_annotations.json")), serde_json::to_string(annotations).unwrap()).unwrap();
        let meta = serde_json::json!({ "motion_annotation": { "labels": [label] } });
        fs::write(dir.join(format!("{id}_meta.json")), meta.to_string()).unwrap();
    }
}

/// Distinct normalized words of the first `n` fixture motions.
pub fn fixture_words(n: usize) -> usize {
    let mut words = std::collections::BTreeSet::new();
    for i in 0..n {
        for a in CLASSES[i % CLASSES.len()].1 {
            for w in a.to_lowercase().split_whitespace() {
                words.insert(w.trim_matches(|c: char| !c.is_alphanumeric()).to_owned());
            }
        }
    }
    words.len()
}

pub struct Workspace {
    pub root: tempfile::TempDir,
}

impl Workspace {
    pub fn new(motions: usize) -> Self {
        let root = tempfile::tempdir().unwrap();
        write_dataset(&root.path().join("dataset"), motions);
        Workspace { root }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.path().join(name)
    }

    /// Small model and training settings.
    pub fn config(&self, kind: ModelKind, out: &str) -> RunConfig {
        RunConfig {
            dataset: Some(self.path("dataset")),
            prepared: Some(self.path("prepared")),
            out: Some(self.path(out)),
            model: Some(kind),
            seed: Some(5),
            threads: Some(1),
            joint_names: Some(JOINTS.iter().map(|s| s.to_string()).collect()),
            max_motion_length: Some(40),
            max_sentence_length: Some(12),
            encoder_layers: Some(vec![8]),
            decoder_layers: Some(vec![12, 12]),
            embedding_dimension: Some(8),
            mixture_components: Some(2),
            batch_size: Some(32),
            training_epochs: Some(3),
            learning_rate: Some(5e-3),
            ..RunConfig::default()
        }
    }

    pub fn prepare(&self) {
        let mut cfg = self.config(ModelKind::M2l, "prepared");
        cfg.out = Some(self.path("prepared"));
        motion_language_cli::cmd_prepare(&cfg).unwrap();
    }
}
