//! Prompt text sent to a chat model, and the parsers the offline stub uses to
//! read those prompts back.

use crate::error::{Error, Result};
use crate::explain::narrate::VariableDictionary;
use crate::explain::scenario::{Scenario, ScenarioLabel};
use crate::hub::TimestepRecord;
use crate::mpc::DEFAULT_SETPOINT_MAX_C;
use crate::shapley::{Attribution, FeatureAttribution, Method};

pub const SHAP_PROMPT_LEAD: &str =
    "Based on the Shapley value and variable values, please help me generate a descriptive paragraph:";
pub const TOP3_INSTRUCTION: &str =
    "Only introduce the largest 3 impactful features plus the expected value.";
const REASON_INSTRUCTION: &str =
    "Also, explain the potential reason why these features are impactful to the";
const DICTIONARY_LEAD: &str = "The variable dictionary is listed as follows:";
pub const SCENARIO_PROMPT_LEAD: &str =
    "Based on the following inputs, judge what kind of scenario it is, and then generate the corresponding paragraph.";
const INPUTS_LEAD: &str = "Inputs:";
pub const QUESTION_LEAD: &str = "Question:";

/// Plain-language statement of the control problem, sent as the system prompt.
pub const SYSTEM_FORMULATION: &str = "\
You explain the decisions of a machine-learning model predictive controller (MPC) for the cooling \
setpoint of a single-zone office building. Every hour the controller chooses the setpoints \
u(t+1) and u(t+2) for the next hour and the hour after the next from a grid between 22 and 26 °C \
in 1 K steps, evaluating all combinations. It minimizes the predicted cooling power plus a \
demand response penalty summed over both hours. A neural network f_x predicts the zone air \
temperature from the setpoint, the previous zone temperature and the weather; a second network \
f_y predicts the cooling power from the setpoint, the predicted zone temperature and the weather. \
The penalty is the squared excess of the predicted cooling power over the power limit P_limit \
and zero otherwise. Normally P_limit is 5000 W; during a one-hour demand response event it drops \
to between 750 and 1750 W. Lowering the setpoint ahead of an event (precooling) stores coolth in \
the building so that less cooling power is needed during the event. Only the first setpoint is \
applied and the problem is solved again the next hour. Shapley values attribute each prediction \
to its input features relative to the expected value of the model over background data.";

/// Prompt asking for a paragraph on one attribution; fields follow schema order.
pub fn build_shap_prompt(attr: &Attribution, dictionary: &VariableDictionary, subject: &str) -> String {
    let shapley: Vec<String> = attr
        .features
        .iter()
        .map(|f| format!("{} {:.6}", f.name, f.phi))
        .chain(std::iter::once(format!("expected_value {:.6}", attr.base_value)))
        .collect();
    let values: Vec<String> = attr
        .features
        .iter()
        .map(|f| format!("{} {}", f.name, f.value))
        .collect();
    let mut prompt = format!(
        "{SHAP_PROMPT_LEAD}\n\nShapley values: {}\n\nVariable values: {}\n\n{TOP3_INSTRUCTION} {REASON_INSTRUCTION} {subject}\n",
        shapley.join("; "),
        values.join("; ")
    );
    if !dictionary.is_empty() {
        let entries: Vec<String> = dictionary
            .entries
            .iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect();
        prompt.push_str(&format!("\n{DICTIONARY_LEAD} {{{}}}\n", entries.join(", ")));
    }
    prompt
}

/// What [`build_shap_prompt`] encoded, recovered from the text.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedShapPrompt {
    pub attribution: Attribution,
    pub dictionary: VariableDictionary,
    pub subject: String,
}

fn line_after<'a>(text: &'a str, lead: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.strip_prefix(lead)).map(str::trim)
}

fn parse_pairs(field: &str, body: &str) -> Result<Vec<(String, f64)>> {
    body.split("; ")
        .map(|item| {
            let (name, value) = item
                .rsplit_once(' ')
                .ok_or_else(|| Error::InvalidInput(format!("{field}: malformed entry `{item}`")))?;
            let value: f64 = value
                .parse()
                .map_err(|_| Error::InvalidInput(format!("{field}: `{value}` is not a number")))?;
            Ok((name.to_owned(), value))
        })
        .collect()
}

pub fn parse_shap_prompt(prompt: &str) -> Result<ParsedShapPrompt> {
    let missing = |what: &str| Error::InvalidInput(format!("prompt has no {what} line"));
    let mut shapley = parse_pairs(
        "Shapley values",
        line_after(prompt, "Shapley values:").ok_or_else(|| missing("Shapley values"))?,
    )?;
    let base = match shapley.pop() {
        Some((name, v)) if name == "expected_value" => v,
        _ => return Err(Error::InvalidInput("Shapley values lack expected_value".into())),
    };
    let values = parse_pairs(
        "Variable values",
        line_after(prompt, "Variable values:").ok_or_else(|| missing("Variable values"))?,
    )?;
    if values.len() != shapley.len() {
        return Err(Error::InvalidInput("Shapley and variable value counts differ".into()));
    }
    let features: Vec<FeatureAttribution> = shapley
        .into_iter()
        .zip(values)
        .map(|((name, phi), (_, value))| FeatureAttribution { name, value, phi })
        .collect();
    let prediction = base + features.iter().map(|f| f.phi).sum::<f64>();
    let subject = prompt
        .lines()
        .find_map(|l| l.split_once(REASON_INSTRUCTION).map(|(_, s)| s.trim().to_owned()))
        .unwrap_or_else(|| "prediction".into());
    let dictionary = match line_after(prompt, DICTIONARY_LEAD) {
        Some(body) => {
            let inner = body.trim_start_matches('{').trim_end_matches('}');
            VariableDictionary::new(inner.split(", ").filter_map(|e| {
                e.split_once(": ").map(|(k, v)| (k.to_owned(), v.to_owned()))
            }))
        }
        None => VariableDictionary::default(),
    };
    Ok(ParsedShapPrompt {
        attribution: Attribution {
            features,
            base_value: base,
            prediction,
            background_size: 0,
            method: Method::Exact,
        },
        dictionary,
        subject,
    })
}

/// Prompt asking a chat model to pick the scenario for one record.
pub fn build_scenario_prompt(record: &TimestepRecord, threshold: f64) -> String {
    let max = DEFAULT_SETPOINT_MAX_C;
    format!(
        "{SCENARIO_PROMPT_LEAD}\n\n\
         Scenario 1: The criteria of Scenario 1 is P_limit(t+2) < P_limit(threshold) and T_spt(t+1) < {max}°C: {}.\n\
         Scenario 2: The criteria of Scenario 2 is P_limit(t+2) >= P_limit(threshold): {}.\n\
         Scenario 3: The criteria of Scenario 3 is P_limit(t+2) < P_limit(threshold) and T_spt(t+1) = {max}°C: {}.\n\n\
         {INPUTS_LEAD} P_limit(t+1) = {}W; P_limit(t+2) = {}W; P_limit(threshold) = {}W; T_spt(t+1) = {}°C; T_spt(t+2) = {}°C\n\n\
         Answer with the line \"Scenario <number>\" first.\n",
        Scenario::Precool.description(),
        Scenario::Normal.description(),
        Scenario::EventNoPrecool.description(),
        record.power_limit_t1_w,
        record.power_limit_t2_w,
        threshold,
        record.decision.u1_c,
        record.decision.u2_c,
    )
}

/// (P_limit(t+2), threshold, T_spt(t+1)) read back from a scenario prompt.
pub fn parse_scenario_prompt(prompt: &str) -> Result<(f64, f64, f64)> {
    let inputs = line_after(prompt, INPUTS_LEAD)
        .ok_or_else(|| Error::InvalidInput("scenario prompt has no inputs line".into()))?;
    let get = |key: &str| -> Result<f64> {
        inputs
            .split("; ")
            .find_map(|item| item.strip_prefix(key))
            .map(|v| v.trim_start_matches(" = ").trim_end_matches("°C").trim_end_matches('W'))
            .ok_or_else(|| Error::InvalidInput(format!("scenario prompt lacks {key}")))?
            .parse()
            .map_err(|_| Error::InvalidInput(format!("scenario prompt value for {key} is not a number")))
    };
    Ok((get("P_limit(t+2)")?, get("P_limit(threshold)")?, get("T_spt(t+1)")?))
}

/// Reads "Scenario <n>" from a model reply.
pub fn parse_scenario_reply(reply: &str) -> Option<Scenario> {
    let idx = reply.find("Scenario ")?;
    let digit = reply[idx + "Scenario ".len()..].chars().next()?;
    Scenario::from_code(digit.to_digit(10)? as u8)
}

pub fn label_line(label: &ScenarioLabel) -> String {
    format!("Scenario {}: {}", label.code, label.scenario.description())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::narrate::VariableDictionary;

    fn reported() -> Attribution {
        let rows = [
            ("oa_temp", 37.2, 680.369781),
            ("oa_radiation", 332.0, 33.052102),
            ("zone_temp", 25.2, 18.838554),
            ("zone_clg_tstat", 26.0, -113.826475),
            ("zone_occ", 0.0, -98.523013),
        ];
        Attribution {
            features: rows
                .iter()
                .map(|&(name, value, phi)| FeatureAttribution {
                    name: name.into(),
                    value,
                    phi,
                })
                .collect(),
            base_value: 1544.673602,
            prediction: 2064.584551,
            background_size: 1,
            method: Method::Exact,
        }
    }

    #[test]
    fn shap_prompt_matches_the_reported_layout() {
        let dict = VariableDictionary::new([("zone_clg_stat", "zone temperature setpoint"), ("zone_occ", "occupancy")]);
        let p = build_shap_prompt(&reported(), &dict, "cooling energy consumption");
        assert!(p.starts_with(SHAP_PROMPT_LEAD));
        assert!(p.contains(
            "Shapley values: oa_temp 680.369781; oa_radiation 33.052102; zone_temp 18.838554; \
             zone_clg_tstat -113.826475; zone_occ -98.523013; expected_value 1544.673602"
        ));
        assert!(p.contains("Variable values: oa_temp 37.2; oa_radiation 332; zone_temp 25.2; zone_clg_tstat 26; zone_occ 0"));
        assert!(p.contains("Only introduce the largest 3 impactful features plus the expected value."));
        assert!(p.contains("{zone_clg_stat: zone temperature setpoint, zone_occ: occupancy}"));
        assert_eq!(p, build_shap_prompt(&reported(), &dict, "cooling energy consumption"));
    }

    #[test]
    fn empty_dictionary_omits_block() {
        let p = build_shap_prompt(&reported(), &VariableDictionary::default(), "x");
        assert!(!p.contains(DICTIONARY_LEAD));
    }

    #[test]
    fn shap_prompt_parses_back() {
        let dict = VariableDictionary::surrogate_default();
        let p = build_shap_prompt(&reported(), &dict, "cooling energy consumption");
        let parsed = parse_shap_prompt(&p).unwrap();
        assert_eq!(parsed.attribution.features, reported().features);
        assert_eq!(parsed.attribution.base_value, 1544.673602);
        assert_eq!(parsed.dictionary, dict);
        assert_eq!(parsed.subject, "cooling energy consumption");
    }

    #[test]
    fn scenario_reply_parsing() {
        assert_eq!(parse_scenario_reply("Scenario 1\nSince ..."), Some(Scenario::Precool));
        assert_eq!(parse_scenario_reply("It is Scenario 3."), Some(Scenario::EventNoPrecool));
        assert_eq!(parse_scenario_reply("no idea"), None);
        assert_eq!(parse_scenario_reply("Scenario 9"), None);
    }
}
