//! Three-stage cascade: a five-way router, a right-family specialist and a
//! left-family specialist.

use std::time::{Duration, Instant};

use super::{argmax, Network};
use crate::class::EyeClass;
use crate::dataset::{STAGE1_CLASSES, STAGE2_CLASSES, STAGE3_CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub stage1: Network,
    pub stage2: Network,
    pub stage3: Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CascadePrediction {
    pub class: EyeClass,
    pub stages_invoked: u8,
    /// Argmax of every stage that ran.
    pub stage_outputs: [Option<usize>; 3],
}

/// Wall-clock time spent in each stage that ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageTimings {
    pub stages: [Option<Duration>; 3],
}

/// Final class of a stage-output triple. Later outputs are ignored when an
/// earlier stage already decides.
pub fn route(stage1: usize, stage2: usize, stage3: usize) -> (EyeClass, u8) {
    if let Some(c) = STAGE1_CLASSES[stage1] {
        return (c, 1);
    }
    if let Some(c) = STAGE2_CLASSES[stage2] {
        return (c, 2);
    }
    (STAGE3_CLASSES[stage3], 3)
}

impl CascadeModel {
    pub fn new(stage1: Network, stage2: Network, stage3: Network) -> Result<Self> {
        let widths = [
            stage1.num_classes(),
            stage2.num_classes(),
            stage3.num_classes(),
        ];
        if widths
            != [
                STAGE1_CLASSES.len(),
                STAGE2_CLASSES.len(),
                STAGE3_CLASSES.len(),
            ]
        {
            return Err(Error::input(format!(
                "cascade stages must have 5, 4 and 3 outputs, got {widths:?}"
            )));
        }
        if stage2.input_size() != stage1.input_size() || stage3.input_size() != stage1.input_size()
        {
            return Err(Error::input("cascade stages take different input widths"));
        }
        Ok(CascadeModel {
            stage1,
            stage2,
            stage3,
        })
    }

    pub fn stages(&self) -> [&Network; 3] {
        [&self.stage1, &self.stage2, &self.stage3]
    }

    pub fn predict(&self, x: &[f64]) -> Result<CascadePrediction> {
        self.run(x, false).map(|(p, _)| p)
    }

    /// Like [`CascadeModel::predict`], timing each stage separately.
    pub fn predict_timed(&self, x: &[f64]) -> Result<(CascadePrediction, StageTimings)> {
        self.run(x, true)
    }

    fn run(&self, x: &[f64], timed: bool) -> Result<(CascadePrediction, StageTimings)> {
        let mut timings = StageTimings::default();
        let mut outputs = [None; 3];
        for (s, net) in self.stages().into_iter().enumerate() {
            let start = timed.then(Instant::now);
            let k = argmax(&net.forward(x)?);
            if let Some(t) = start {
                timings.stages[s] = Some(t.elapsed());
            }
            outputs[s] = Some(k);
            let decided = match s {
                0 => STAGE1_CLASSES[k].is_some(),
                1 => STAGE2_CLASSES[k].is_some(),
                _ => true,
            };
            if decided {
                let (class, stages_invoked) = route(
                    outputs[0].unwrap_or(0),
                    outputs[1].unwrap_or(0),
                    outputs[2].unwrap_or(0),
                );
                return Ok((
                    CascadePrediction {
                        class,
                        stages_invoked,
                        stage_outputs: outputs,
                    },
                    timings,
                ));
            }
        }
        unreachable!("stage 3 always decides")
    }
}
