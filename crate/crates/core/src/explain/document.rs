use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::narrate::{narrate_attribution, VariableDictionary};
use crate::explain::prompt::{
    build_scenario_prompt, build_shap_prompt, label_line, parse_scenario_reply, QUESTION_LEAD,
    SYSTEM_FORMULATION,
};
use crate::explain::scenario::{classify, Scenario, ScenarioLabel, DEFAULT_THRESHOLD_W};
use crate::explain::svg::bar_chart;
use crate::explain::template::TemplateSet;
use crate::hub::{Episode, TimestepRecord};
use crate::llm::LlmClient;

pub const DEFAULT_QA_MAX_TOKENS: usize = 3000;

const SLOTS: [(&str, &str, &str); 4] = [
    ("fx1", "f_x at t+1", "predicted zone air temperature"),
    ("fy1", "f_y at t+1", "predicted cooling power"),
    ("fx2", "f_x at t+2", "predicted zone air temperature"),
    ("fy2", "f_y at t+2", "predicted cooling power"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RenderMode {
    Deterministic,
    LlmEnhanced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub file_name: String,
    pub svg: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationDoc {
    pub timestamp: usize,
    pub label: ScenarioLabel,
    pub mode: RenderMode,
    pub header: String,
    pub body: String,
    pub attribution_paragraphs: [String; 4],
    pub footer: String,
    pub figures: Vec<Figure>,
    pub dictionary_fallbacks: Vec<String>,
    /// Scenario picked by the chat model in enhanced mode.
    pub llm_scenario: Option<Scenario>,
}

impl ExplanationDoc {
    pub fn file_name(timestamp: usize) -> String {
        format!("ts_{timestamp}.md")
    }

    pub fn figure_name(timestamp: usize, k: usize) -> String {
        format!("ts_{timestamp}_attr{k}.svg")
    }

    pub fn markdown(&self) -> String {
        format!("{}\n{}\n\n{}", self.header, self.body.trim_end(), self.footer)
    }

    pub fn llm_agrees(&self) -> Option<bool> {
        self.llm_scenario.map(|s| s == self.label.scenario)
    }

    /// Writes `ts_<t>.md` and its four charts into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for fig in &self.figures {
            let path = dir.join(&fig.file_name);
            std::fs::write(&path, &fig.svg).map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join(Self::file_name(self.timestamp));
        std::fs::write(&path, self.markdown()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn c1(v: f64) -> String {
    format!("{v:.1}")
}

fn penalty_sentence(record: &TimestepRecord, scenario: Scenario) -> String {
    let d = &record.decision;
    let (p, limit) = (c1(d.y2_w), c1(record.power_limit_t2_w));
    match scenario {
        Scenario::Normal => String::new(),
        Scenario::Precool if d.y2_w < record.power_limit_t2_w => format!(
            "The cooling power in the second hour P(t+2) = {p}W is less than P_limit(t+2) = {limit}W, \
             which avoids the penalty from the demand response event."
        ),
        Scenario::Precool if d.y2_w == record.power_limit_t2_w => format!(
            "The cooling power in the second hour P(t+2) = {p}W equals P_limit(t+2) = {limit}W, \
             which avoids the penalty from the demand response event."
        ),
        Scenario::Precool => format!(
            "The cooling power in the second hour P(t+2) = {p}W still exceeds P_limit(t+2) = {limit}W; \
             the chosen setpoints give the lowest total predicted cost, with a penalty of V(t+2) = {}.",
            c1(d.v2)
        ),
        Scenario::EventNoPrecool if d.y2_w <= record.power_limit_t2_w => format!(
            "Without pre-cooling, the cooling power in the second hour P(t+2) = {p}W stays within \
             P_limit(t+2) = {limit}W, so no penalty is incurred."
        ),
        Scenario::EventNoPrecool => format!(
            "Without pre-cooling, the cooling power in the second hour P(t+2) = {p}W exceeds \
             P_limit(t+2) = {limit}W and incurs a predicted penalty of V(t+2) = {}; no pre-cooling \
             setpoint gives a lower total predicted cost.",
            c1(d.v2)
        ),
    }
}

fn header_block(record: &TimestepRecord, label: &ScenarioLabel) -> String {
    let d = &record.decision;
    let w = record.disturbance();
    format!(
        "# Timestep {t}\n\n\
         Day {day}, hour {hour}.\n\n\
         **Future power limits:** P_limit(t+1) = {l1}W, P_limit(t+2) = {l2}W, P_limit(threshold) = {th:.0}W.\n\n\
         **Controllable, state variables, disturbances, and output:** T_z(t) = {tz}°C, OAT(t) = {oa}°C, \
         Radiation_direct(t) = {rad}W/m², OCC(t) = {occ}, T_spt(t+1) = {u1}°C, T_spt(t+2) = {u2}°C, \
         T_z(t+1) = {x1}°C, P(t+1) = {y1}W, T_z(t+2) = {x2}°C, P(t+2) = {y2}W.\n\n\
         MPC results: T_spt(t+1) = {u1}°C, T_spt(t+2) = {u2}°C.\n",
        t = record.timestamp,
        day = record.day,
        hour = record.hour_of_day,
        l1 = c1(record.power_limit_t1_w),
        l2 = c1(record.power_limit_t2_w),
        th = label.threshold_w,
        tz = c1(record.zone_temp_c),
        oa = c1(w.oa_temp),
        rad = c1(w.oa_radiation),
        occ = c1(w.occupancy),
        u1 = c1(d.u1_c),
        u2 = c1(d.u2_c),
        x1 = c1(d.x1_c),
        y1 = c1(d.y1_w),
        x2 = c1(d.x2_c),
        y2 = c1(d.y2_w),
    )
}

/// Templates, dictionary and threshold used to explain records.
#[derive(Debug, Clone)]
pub struct Explainer {
    pub templates: TemplateSet,
    pub dictionary: VariableDictionary,
    pub threshold_w: f64,
    pub qa_max_tokens: usize,
}

impl Default for Explainer {
    fn default() -> Self {
        Self {
            templates: TemplateSet::default(),
            dictionary: VariableDictionary::surrogate_default(),
            threshold_w: DEFAULT_THRESHOLD_W,
            qa_max_tokens: DEFAULT_QA_MAX_TOKENS,
        }
    }
}

impl Explainer {
    pub fn label(&self, record: &TimestepRecord) -> ScenarioLabel {
        record.scenario.unwrap_or_else(|| classify(record, self.threshold_w))
    }

    /// Narrated paragraphs built locally from the attributions.
    pub fn narrate(&self, record: &TimestepRecord) -> ([String; 4], Vec<String>) {
        let mut fallbacks: Vec<String> = Vec::new();
        let paragraphs = std::array::from_fn(|k| {
            let n = narrate_attribution(record.attributions.all()[k], &self.dictionary, SLOTS[k].2);
            for f in n.fallbacks {
                if !fallbacks.contains(&f) {
                    fallbacks.push(f);
                }
            }
            n.text
        });
        (paragraphs, fallbacks)
    }

    pub fn render_document(&self, record: &TimestepRecord) -> Result<ExplanationDoc> {
        let (paragraphs, fallbacks) = self.narrate(record);
        self.assemble(record, paragraphs, RenderMode::Deterministic, None, fallbacks)
    }

    /// Asks the chat model for the four paragraphs and a scenario label. The
    /// rubric label still selects the template and is reported in the footer.
    pub fn render_document_llm(&self, record: &TimestepRecord, client: &LlmClient) -> Result<ExplanationDoc> {
        let mut paragraphs: [String; 4] = Default::default();
        for (k, attr) in record.attributions.all().into_iter().enumerate() {
            let prompt = build_shap_prompt(attr, &self.dictionary, SLOTS[k].2);
            paragraphs[k] = client.complete(SYSTEM_FORMULATION, &prompt)?.response;
        }
        let label = self.label(record);
        let reply = client
            .complete(SYSTEM_FORMULATION, &build_scenario_prompt(record, label.threshold_w))?
            .response;
        let llm_scenario = parse_scenario_reply(&reply);
        if llm_scenario != Some(label.scenario) {
            log::warn!(
                "timestep {}: model answered {:?}, rubric says scenario {}",
                record.timestamp,
                llm_scenario.map(Scenario::code),
                label.code
            );
        }
        self.assemble(record, paragraphs, RenderMode::LlmEnhanced, llm_scenario, Vec::new())
    }

    fn assemble(
        &self,
        record: &TimestepRecord,
        paragraphs: [String; 4],
        mode: RenderMode,
        llm_scenario: Option<Scenario>,
        fallbacks: Vec<String>,
    ) -> Result<ExplanationDoc> {
        let label = self.label(record);
        let d = &record.decision;
        let t = record.timestamp;
        let mut values: BTreeMap<String, String> = [
            ("P_limit_t1", c1(record.power_limit_t1_w)),
            ("P_limit_t2", c1(record.power_limit_t2_w)),
            ("P_threshold", format!("{:.0}", label.threshold_w)),
            ("T_spt_max", c1(label.no_precool_setpoint_c)),
            ("T_spt_t1", c1(d.u1_c)),
            ("T_spt_t2", c1(d.u2_c)),
            ("T_z_t", c1(record.zone_temp_c)),
            ("T_z_t1", c1(d.x1_c)),
            ("T_z_t2", c1(d.x2_c)),
            ("P_t1", c1(d.y1_w)),
            ("P_t2", c1(d.y2_w)),
            ("penalty_sentence", penalty_sentence(record, label.scenario)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect();
        let mut figures = Vec::with_capacity(4);
        for (k, (slot, title, _)) in SLOTS.iter().enumerate() {
            let file_name = ExplanationDoc::figure_name(t, k + 1);
            values.insert(format!("fig_ref_{}", k + 1), format!("![SHAP bar chart, {title}]({file_name})"));
            values.insert(format!("shap_para_{slot}"), paragraphs[k].clone());
            figures.push(Figure {
                svg: bar_chart(record.attributions.all()[k], title),
                file_name,
            });
        }
        let body = self.templates.get(label.scenario).render(&values)?;

        let mut footer = format!(
            "---\n\n{} (rubric label). Rendering mode: {}.\n",
            label_line(&label),
            match mode {
                RenderMode::Deterministic => "deterministic",
                RenderMode::LlmEnhanced => "llm-enhanced",
            }
        );
        if mode == RenderMode::LlmEnhanced {
            match llm_scenario {
                Some(s) if s == label.scenario => {
                    footer.push_str("The language model chose the same scenario.\n")
                }
                Some(s) => footer.push_str(&format!(
                    "The language model chose Scenario {}; the rubric label above is authoritative.\n",
                    s.code()
                )),
                None => footer.push_str("The language model reply named no scenario.\n"),
            }
        }
        if !fallbacks.is_empty() {
            let names: Vec<String> = fallbacks.iter().map(|f| format!("`{f}`")).collect();
            footer.push_str(&format!("Features without a dictionary entry: {}.\n", names.join(", ")));
        }

        Ok(ExplanationDoc {
            timestamp: t,
            label,
            mode,
            header: header_block(record, &label),
            body,
            attribution_paragraphs: paragraphs,
            footer,
            figures,
            dictionary_fallbacks: fallbacks,
            llm_scenario,
        })
    }

    /// System formulation, the timestep's document, its candidate table and
    /// the question. Attribution paragraphs are dropped last-first until the
    /// estimated token count fits the budget.
    pub fn build_qa_context(&self, episode: &Episode, timestamp: usize, question: &str) -> Result<String> {
        let question = question.trim();
        if question.is_empty() {
            return Err(Error::InvalidInput("question is empty".into()));
        }
        let record = episode.record(timestamp)?;
        let (full, fallbacks) = self.narrate(record);
        let mut table = String::from("Candidate setpoint pairs (u(t+1), u(t+2), predicted cost):\n");
        for c in &record.decision.candidates {
            let cost = c.cost.map_or_else(|| "not finite".to_owned(), |v| format!("{v:.1}"));
            table.push_str(&format!("{}, {}, {cost}\n", c1(c.u1), c1(c.u2)));
        }
        let mut context = String::new();
        for keep in (0..=4).rev() {
            let paragraphs = std::array::from_fn(|k| {
                if k < keep {
                    full[k].clone()
                } else {
                    "(Attribution paragraph omitted for length.)".to_owned()
                }
            });
            let doc = self.assemble(record, paragraphs, RenderMode::Deterministic, None, fallbacks.clone())?;
            context = format!(
                "{SYSTEM_FORMULATION}\n\nExplanation document:\n\n{}\n{table}\n{QUESTION_LEAD} {question}\n",
                doc.markdown()
            );
            if estimate_tokens(&context) <= self.qa_max_tokens {
                break;
            }
        }
        Ok(context)
    }
}

/// Rough token count, four characters per token.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Deterministic document with the default templates and dictionary.
pub fn render_document(record: &TimestepRecord, templates: &TemplateSet) -> Result<ExplanationDoc> {
    Explainer {
        templates: templates.clone(),
        ..Explainer::default()
    }
    .render_document(record)
}

pub fn build_qa_context(episode: &Episode, timestamp: usize, question: &str) -> Result<String> {
    Explainer {
        threshold_w: episode.header.config.episode.threshold_w,
        ..Explainer::default()
    }
    .build_qa_context(episode, timestamp, question)
}
