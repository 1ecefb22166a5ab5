//! Scenario rubric, attribution narration, prompt templates and per-timestep
//! explanation documents.

mod document;
mod narrate;
mod prompt;
mod scenario;
mod svg;
mod template;

pub use document::{
    build_qa_context, estimate_tokens, render_document, ExplanationDoc, Explainer, Figure, RenderMode,
    DEFAULT_QA_MAX_TOKENS,
};
pub use narrate::{narrate_attribution, rank_features, top_features, Narration, VariableDictionary};
pub use prompt::{
    build_scenario_prompt, build_shap_prompt, label_line, parse_scenario_prompt, parse_scenario_reply,
    parse_shap_prompt, ParsedShapPrompt, QUESTION_LEAD, SCENARIO_PROMPT_LEAD, SHAP_PROMPT_LEAD,
    SYSTEM_FORMULATION, TOP3_INSTRUCTION,
};
pub use scenario::{
    census_of, classify, classify_values, scenario_census, Scenario, ScenarioCensus, ScenarioLabel,
    DEFAULT_THRESHOLD_W,
};
pub use svg::bar_chart;
pub use template::{PromptTemplate, TemplateSet, UNFILLED_MARKER};
