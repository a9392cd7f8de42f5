//! Per-sample orchestration of the three agent steps and ablation variants.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::analyzer::Analyzer;
use crate::backend::{Backend, BackendCall, CallLog, PhaseTag};
use crate::consistency::{check_consistency, ConsistencyVerdict};
use crate::data_model::{ErrorCategory, Sample};
use crate::formal_language::ArityTable;
use crate::metrics::Prediction;
use crate::prompts::PromptSet;
use crate::visual::{interpret_visual, resolve_question_type, TypeInferenceError, TypeSource, VisualRouter, VisualTranscript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Full,
    NoValidator,
    NoInterpreter,
    NoAnalyzer,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [Self::Full, Self::NoValidator, Self::NoInterpreter, Self::NoAnalyzer];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoValidator => "no_validator",
            Self::NoInterpreter => "no_interpreter",
            Self::NoAnalyzer => "no_analyzer",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| format!("unknown mode {s:?}"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub phase1: Option<ConsistencyVerdict>,
    pub phase2: Option<VisualTranscript>,
    pub phase3_raw: String,
    pub backend_calls: Vec<BackendCall>,
}

impl PhaseTrace {
    pub fn calls_in(&self, phase: PhaseTag) -> usize {
        self.backend_calls.iter().filter(|c| c.phase == phase).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseError {
    pub phase: PhaseTag,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub sample_id: String,
    pub predicted_step: Option<u32>,
    pub predicted_category: Option<ErrorCategory>,
    pub mode: AblationMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<PhaseError>,
    pub trace: PhaseTrace,
}

impl Prediction for Detection {
    fn sample_id(&self) -> &str {
        &self.sample_id
    }

    fn predicted_step(&self) -> Option<u32> {
        self.predicted_step
    }

    fn predicted_category(&self) -> Option<ErrorCategory> {
        self.predicted_category
    }
}

/// Backends for every agent step.
#[derive(Clone)]
pub struct Backends {
    pub phase1: Arc<dyn Backend>,
    /// Used for question-type inference on unlabeled samples.
    pub phase2_type: Arc<dyn Backend>,
    pub router: VisualRouter,
    pub phase3: Arc<dyn Backend>,
}

#[derive(Clone)]
pub struct Pipeline {
    pub backends: Backends,
    pub prompts: PromptSet,
    pub arity: ArityTable,
}

impl Pipeline {
    pub fn new(backends: Backends) -> Self {
        Self { backends, prompts: PromptSet::builtin(), arity: ArityTable::default() }
    }

    /// Runs one sample. Failures are recorded on the detection and leave
    /// both predictions empty.
    pub fn detect_errors(&self, sample: &Sample, mode: AblationMode) -> Detection {
        let mut trace = PhaseTrace::default();
        let mut log = CallLog::default();
        let result = self.phases(sample, mode, &mut trace, &mut log);
        trace.backend_calls = log.calls;
        let (prediction, error) = match result {
            Ok(p) => (p, None),
            Err(e) => {
                tracing::warn!(sample = %sample.id, phase = %e.phase, "{}", e.message);
                (None, Some(e))
            }
        };
        Detection {
            sample_id: sample.id.clone(),
            predicted_step: prediction.map(|p| p.0),
            predicted_category: prediction.map(|p| p.1),
            mode,
            error,
            trace,
        }
    }

    fn phases(
        &self,
        sample: &Sample,
        mode: AblationMode,
        trace: &mut PhaseTrace,
        log: &mut CallLog,
    ) -> Result<Option<(u32, ErrorCategory)>, PhaseError> {
        let fail = |phase| move |e: &dyn fmt::Display| PhaseError { phase, message: e.to_string() };
        if sample.image.is_some() {
            let transcribe = match mode {
                AblationMode::NoValidator => true,
                _ => {
                    let verdict = check_consistency(sample, self.backends.phase1.as_ref(), &self.prompts, log)
                        .map_err(|e| fail(PhaseTag::Phase1)(&e))?;
                    let consistent = verdict.consistent;
                    trace.phase1 = Some(verdict);
                    !consistent
                }
            };
            if transcribe {
                let (qtype, source) = if mode == AblationMode::NoInterpreter {
                    (None, TypeSource::Skipped)
                } else {
                    match resolve_question_type(sample, self.backends.phase2_type.as_ref(), &self.prompts, log) {
                        Ok((q, s)) => (Some(q), s),
                        Err(TypeInferenceError::Unresolved(replies)) => {
                            tracing::info!(sample = %sample.id, ?replies, "question type unresolved; captioning");
                            (None, TypeSource::Unresolved)
                        }
                        Err(TypeInferenceError::Backend(e)) => return Err(fail(PhaseTag::Phase2Type)(&e)),
                    }
                };
                let transcript =
                    interpret_visual(sample, qtype, source, &self.backends.router, &self.prompts, &self.arity, log)
                        .map_err(|e| fail(PhaseTag::Phase2)(&e))?;
                trace.phase2 = Some(transcript);
            }
        }
        let analyzer = Analyzer {
            backend: self.backends.phase3.as_ref(),
            prompts: &self.prompts,
            omit_question_text: mode == AblationMode::NoAnalyzer,
        };
        let out = analyzer.analyze(sample, trace.phase2.as_ref(), log).map_err(|e| fail(PhaseTag::Phase3)(&e))?;
        trace.phase3_raw = out.raw_text.clone();
        Ok(out.prediction())
    }

    /// Processes samples on up to `workers` threads; output follows input
    /// order.
    pub fn run(&self, samples: &[Sample], mode: AblationMode, workers: usize) -> Vec<Detection> {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Detection>>> = Mutex::new(vec![None; samples.len()]);
        let done = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..workers.clamp(1, samples.len().max(1)) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(sample) = samples.get(i) else { break };
                    let detection = self.detect_errors(sample, mode);
                    slots.lock().expect("result lock")[i] = Some(detection);
                    let n = done.fetch_add(1, Ordering::SeqCst) + 1;
                    tracing::debug!(mode = %mode, "{n}/{} samples", samples.len());
                });
            }
        });
        slots.into_inner().expect("result lock").into_iter().map(|d| d.expect("every sample processed")).collect()
    }
}
