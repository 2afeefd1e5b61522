//! Runs a gold corpus through the pipeline and tabulates correctness.

use std::path::Path;

use medprompt_core::engine::execute;
use medprompt_core::eval::{parse_corpus, run_eval, EvalRun, GoldRecord};
use medprompt_core::stub::{LumaImage, StubConfig};

use crate::backend::{Backend, FileMasks};
use crate::config::Frontend;
use crate::imaging::{decode_image, encode_png, LoadedImage};
use crate::pipeline::{MonotonicClock, Pipeline, PipelineError};

pub fn load_corpus(path: &Path) -> Result<Vec<GoldRecord>, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::InvalidRequest(format!("cannot read corpus {}: {e}", path.display())))?;
    parse_corpus(&text).map_err(|e| PipelineError::InvalidRequest(format!("{}: {e}", path.display())))
}

/// Uniform mid-gray input used when checking answers. Classification
/// outcomes come from each record's forced stub outcome, so the pixels
/// only matter for records that leave the stub unforced.
pub fn probe_image() -> LoadedImage {
    decode_image(encode_png(&LumaImage::filled(32, 32, 128))).expect("generated PNG decodes")
}

/// Plans every record with `frontend`; records with an expected answer
/// class are also executed on the stub backend.
pub fn evaluate(pipeline: &Pipeline, corpus: &[GoldRecord], frontend: Frontend) -> EvalRun {
    let image = probe_image();
    let mut plan = |query: &str| {
        pipeline
            .plan(query, frontend)
            .map(|p| p.plan)
            .map_err(|e| format!("{}: {e}", e.kind()))
    };
    let mut run = |gold: &GoldRecord, resolved: &_| {
        let config = gold.stub_outcome.as_deref().map_or_else(StubConfig::default, StubConfig::forced);
        let backend = Backend::stub(config, FileMasks::discard());
        execute(resolved, &pipeline.registry, &image, &backend, &MonotonicClock::start())
            .map_err(|errors| format!("{errors:?}"))
    };
    run_eval(corpus, &mut plan, Some(&mut run), &MonotonicClock::start())
}
