use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};
use crate::explain::scenario::Scenario;

const DEFAULT_SCENARIO_1: &str = include_str!("../../templates/scenario1.txt");
const DEFAULT_SCENARIO_2: &str = include_str!("../../templates/scenario2.txt");
const DEFAULT_SCENARIO_3: &str = include_str!("../../templates/scenario3.txt");

/// Literal marker that must never survive rendering.
pub const UNFILLED_MARKER: &str = "[placeholder]";

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("valid pattern"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub scenario: Scenario,
    pub text: String,
    pub required: Vec<String>,
}

impl PromptTemplate {
    pub fn new(scenario: Scenario, text: impl Into<String>) -> Self {
        let text = text.into();
        let required: BTreeSet<String> = placeholder_re()
            .captures_iter(&text)
            .map(|c| c[1].to_owned())
            .collect();
        Self {
            scenario,
            text,
            required: required.into_iter().collect(),
        }
    }

    /// Substitutes every `{name}`; unknown names are a render error.
    pub fn render(&self, values: &BTreeMap<String, String>) -> Result<String> {
        let missing: Vec<String> = self
            .required
            .iter()
            .filter(|name| !values.contains_key(*name))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::Render(missing));
        }
        let out = placeholder_re()
            .replace_all(&self.text, |c: &regex::Captures<'_>| values[&c[1]].clone())
            .into_owned();
        if out.to_ascii_lowercase().contains(UNFILLED_MARKER) {
            return Err(Error::Render(vec![UNFILLED_MARKER.to_owned()]));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    templates: [PromptTemplate; 3],
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            templates: [
                PromptTemplate::new(Scenario::Precool, DEFAULT_SCENARIO_1),
                PromptTemplate::new(Scenario::Normal, DEFAULT_SCENARIO_2),
                PromptTemplate::new(Scenario::EventNoPrecool, DEFAULT_SCENARIO_3),
            ],
        }
    }
}

impl TemplateSet {
    pub fn file_name(scenario: Scenario) -> String {
        format!("scenario{}.txt", scenario.code())
    }

    /// Loads `scenario1.txt`..`scenario3.txt` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let load = |scenario: Scenario| -> Result<PromptTemplate> {
            let path = dir.join(Self::file_name(scenario));
            if !path.is_file() {
                return Err(Error::Config(format!("missing template file {}", path.display())));
            }
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Ok(PromptTemplate::new(scenario, text))
        };
        Ok(Self {
            templates: [
                load(Scenario::Precool)?,
                load(Scenario::Normal)?,
                load(Scenario::EventNoPrecool)?,
            ],
        })
    }

    /// Writes the templates so they can be edited and reloaded.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for t in &self.templates {
            let path = dir.join(Self::file_name(t.scenario));
            std::fs::write(&path, &t.text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn get(&self, scenario: Scenario) -> &PromptTemplate {
        &self.templates[usize::from(scenario.code()) - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn values(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn renders_named_placeholders() {
        let t = PromptTemplate::new(Scenario::Normal, "P = {P_t1}W at {T_spt_t1}°C, again {P_t1}");
        assert_eq!(t.required, ["P_t1", "T_spt_t1"]);
        let out = t.render(&values(&[("P_t1", "12.0"), ("T_spt_t1", "26.0")])).unwrap();
        assert_eq!(out, "P = 12.0W at 26.0°C, again 12.0");
    }

    #[test]
    fn missing_values_are_listed() {
        let t = PromptTemplate::new(Scenario::Normal, "{a} {b} {c}");
        match t.render(&values(&[("b", "x")])) {
            Err(Error::Render(names)) => assert_eq!(names, ["a", "c"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unfilled_marker_is_rejected() {
        let t = PromptTemplate::new(Scenario::Normal, "T = [placeholder]°C");
        assert!(matches!(t.render(&BTreeMap::new()), Err(Error::Render(_))));
    }

    #[test]
    fn braces_that_are_not_names_pass_through() {
        let t = PromptTemplate::new(Scenario::Normal, "set {x+1} and {}");
        assert!(t.required.is_empty());
        assert_eq!(t.render(&BTreeMap::new()).unwrap(), "set {x+1} and {}");
    }

    #[test]
    fn defaults_cover_the_document_fields() {
        let set = TemplateSet::default();
        for s in Scenario::ALL {
            let req = &set.get(s).required;
            for name in ["P_limit_t2", "T_spt_t1", "shap_para_fx1", "fig_ref_4"] {
                assert!(req.iter().any(|r| r == name), "{s:?} lacks {name}");
            }
        }
        assert!(!set.get(Scenario::Normal).required.iter().any(|r| r == "penalty_sentence"));
    }

    #[test]
    fn directory_round_trip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let set = TemplateSet::default();
        set.write_dir(dir.path()).unwrap();
        assert_eq!(TemplateSet::load_dir(dir.path()).unwrap(), set);
        std::fs::remove_file(dir.path().join("scenario3.txt")).unwrap();
        let err = TemplateSet::load_dir(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("scenario3.txt")));
    }
}
