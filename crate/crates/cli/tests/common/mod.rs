#![allow(dead_code)]

use std::path::{Path, PathBuf};

use match3gen_cli::commands::*;
use match3gen::model::Variant;

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub layouts: PathBuf,
    pub dataset: PathBuf,
}

impl Fixture {
    /// 40 annotated layouts with a cheap bot protocol.
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let layouts = dir.path().join("layouts.json");
        let dataset = dir.path().join("ds.json");
        gen_dataset(&GenDatasetArgs {
            style: "main".parse().unwrap(),
            count: 40,
            seed: 7,
            out: layouts.clone(),
        })
        .unwrap();
        annotate_cmd(&AnnotateArgs {
            input: layouts.clone(),
            out: dataset.clone(),
            bot: BotArgs {
                runs: 3,
                ..BotArgs::default()
            },
        })
        .unwrap();
        Self { dir, layouts, dataset }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    /// Two-epoch model with a checkpoint at each epoch.
    pub fn train(&self, variant: Variant) -> PathBuf {
        let out = self.path().join(variant.as_str());
        train_cmd(&self.train_args(variant, 2, out.clone())).unwrap();
        out
    }

    pub fn train_args(&self, variant: Variant, epochs: usize, out: PathBuf) -> TrainArgs {
        TrainArgs {
            dataset: self.dataset.clone(),
            variant,
            epochs,
            batch: 100,
            lr: None,
            checkpoint_interval: 1,
            seed: 0,
            out,
            resume: false,
        }
    }
}
