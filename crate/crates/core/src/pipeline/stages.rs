//! Which modules train in each of the three training stages.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Module {
    ImageEncoder,
    VideoEncoder,
    ImageProjector,
    VideoProjector,
    Slm,
    /// Low-rank adapters attached to the language model in stage 3.
    SlmAdapter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageHyperparameters {
    pub batch_size: u32,
    pub learning_rate: f64,
    pub schedule: String,
    pub warmup_ratio: f64,
    pub optimizer: String,
    pub epochs: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stage: u8,
    pub name: String,
    pub trainable: BTreeSet<Module>,
    pub frozen: BTreeSet<Module>,
    pub adapter_note: Option<String>,
    pub hyperparameters: StageHyperparameters,
}

impl StagePlan {
    pub fn is_trainable(&self, m: Module) -> bool {
        self.trainable.contains(&m)
    }

    /// The language model trains through its adapters.
    pub fn slm_trainable(&self) -> bool {
        self.is_trainable(Module::SlmAdapter) || self.is_trainable(Module::Slm)
    }

    pub fn projection_trainable(&self) -> bool {
        self.is_trainable(Module::ImageProjector) || self.is_trainable(Module::VideoProjector)
    }
}

// The two training-recipe descriptions disagree on the adapter rank; both
// are kept.
const LORA_NOTE: &str = "LoRA on the language model: rank r=64 in the main training setup; \
                         lora_r=128, lora_alpha=256 in the per-stage training details";

pub fn stage_plan(stage: u8) -> Result<StagePlan> {
    use Module::*;
    let (name, trainable, adapter_note): (&str, &[Module], _) = match stage {
        1 => ("image projector pre-training", &[ImageProjector], None),
        2 => ("video projector pre-training", &[VideoProjector], None),
        3 => (
            "instruction tuning",
            &[ImageProjector, VideoProjector, SlmAdapter],
            Some(LORA_NOTE.to_string()),
        ),
        other => {
            return Err(Error::argument(format!(
                "training stage must be 1, 2 or 3, got {other}"
            )))
        }
    };
    let trainable: BTreeSet<Module> = trainable.iter().copied().collect();
    // Adapters only exist once they are attached in stage 3.
    let frozen = [ImageEncoder, VideoEncoder, ImageProjector, VideoProjector, Slm]
        .into_iter()
        .filter(|m| !trainable.contains(m))
        .collect();
    let (batch_size, learning_rate) = if stage == 3 { (64, 2e-4) } else { (128, 1e-3) };
    Ok(StagePlan {
        stage,
        name: name.to_string(),
        trainable,
        frozen,
        adapter_note,
        hyperparameters: StageHyperparameters {
            batch_size,
            learning_rate,
            schedule: "cosine decay".into(),
            warmup_ratio: 0.03,
            optimizer: "AdamW".into(),
            epochs: 2,
        },
    })
}
