#![allow(dead_code)]

use skillgain::context::fit_context_encoder;
use skillgain::exec::Execution;
use skillgain::io::{read_raw_records, write_interactions};
use skillgain::model::SplitDataset;
use skillgain::preprocess::{run_pipeline, PreprocessConfig, PreprocessReport};
use skillgain::replay::ReplayData;
use skillgain::synthetic::{generate, SyntheticSpec};

pub struct Prepared {
    pub split: SplitDataset,
    pub report: PreprocessReport,
    pub data: ReplayData,
}

/// Generates, writes, re-reads and preprocesses a synthetic dataset.
pub fn prepare(spec: &SyntheticSpec) -> Prepared {
    let synth = generate(spec, Execution::Sequential).expect("generate");
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("interactions.csv");
    write_interactions(&path, &synth.interactions).expect("write");
    let raw = read_raw_records(&path).expect("read");
    let (split, report) = run_pipeline(&raw, &PreprocessConfig::default(), Execution::Sequential);
    let encoder = fit_context_encoder(&synth.profiles, &split.train).expect("encoder");
    let data = ReplayData::new(&split, Some((&encoder, &synth.profiles))).expect("replay data");
    Prepared {
        split,
        report,
        data,
    }
}

pub fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        users: 30,
        exercises: 150,
        skills: 6,
        attempts: [150, 200],
        seed,
        ..Default::default()
    }
}
