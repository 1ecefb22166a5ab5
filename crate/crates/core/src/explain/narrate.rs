use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::shapley::Attribution;

/// Ordered map from feature names to plain-language descriptions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VariableDictionary {
    pub entries: Vec<(String, String)>,
}

impl VariableDictionary {
    pub fn new<I, K, V>(entries: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self {
            entries: entries.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }

    /// Descriptions for the surrogate feature names.
    pub fn surrogate_default() -> Self {
        Self::new([
            ("setpoint_t", "zone temperature setpoint"),
            ("zone_temp_tminus1", "zone air temperature at the start of the hour"),
            ("oa_temp_tminus1", "outdoor air dry-bulb temperature"),
            ("oa_radiation_tminus1", "direct solar radiation rate per area"),
            ("occupancy_tminus1", "occupancy"),
            ("zone_temp_t", "predicted zone air temperature"),
            ("oa_temp_t", "outdoor air dry-bulb temperature"),
            ("oa_radiation_t", "direct solar radiation rate per area"),
            ("occupancy_t", "occupancy"),
        ])
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Feature indices ranked by |phi| descending; ties keep schema order, then
/// name order.
pub fn rank_features(attr: &Attribution) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..attr.features.len()).collect();
    idx.sort_by(|&a, &b| {
        let (fa, fb) = (&attr.features[a], &attr.features[b]);
        fb.phi
            .abs()
            .partial_cmp(&fa.phi.abs())
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
            .then_with(|| fa.name.cmp(&fb.name))
    });
    idx
}

pub fn top_features(attr: &Attribution, k: usize) -> Vec<usize> {
    let mut ranked = rank_features(attr);
    ranked.truncate(k);
    ranked
}

#[derive(Debug, Clone, PartialEq)]
pub struct Narration {
    pub text: String,
    /// Feature names that had no dictionary entry and were shown raw.
    pub fallbacks: Vec<String>,
}

fn direction(phi: f64) -> &'static str {
    if phi > 0.0 {
        "pushes the prediction up"
    } else if phi < 0.0 {
        "pushes the prediction down"
    } else {
        "leaves the prediction unchanged"
    }
}

fn count_word(k: usize) -> &'static str {
    match k {
        1 => "one",
        2 => "two",
        _ => "three",
    }
}

fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Deterministic paragraph on the three largest attributions and the
/// expected value. `subject` names the predicted quantity.
pub fn narrate_attribution(attr: &Attribution, dictionary: &VariableDictionary, subject: &str) -> Narration {
    let top = top_features(attr, 3);
    let mut fallbacks = Vec::new();
    let label = |i: usize, fallbacks: &mut Vec<String>| -> String {
        let name = &attr.features[i].name;
        match dictionary.get(name) {
            Some(plain) => format!("{plain} (`{name}`)"),
            None => {
                if !fallbacks.contains(name) {
                    fallbacks.push(name.clone());
                }
                format!("`{name}`")
            }
        }
    };
    let labels: Vec<String> = top.iter().map(|&i| label(i, &mut fallbacks)).collect();
    let all_zero = attr.features.iter().all(|f| f.phi == 0.0);

    let mut text = String::new();
    if all_zero {
        text.push_str(&format!(
            "All Shapley values are zero, so the prediction of the {subject} equals the expected value of {:.2}. ",
            attr.base_value
        ));
        text.push_str(&format!(
            "In schema order the first {} features are {}.",
            count_word(top.len()),
            join_list(&labels)
        ));
        return Narration { text, fallbacks };
    }

    text.push_str(&format!(
        "The {} most impactful features on the {subject}, according to the Shapley values, are {}.",
        count_word(top.len()),
        join_list(&labels)
    ));
    for (&i, lab) in top.iter().zip(&labels) {
        let f = &attr.features[i];
        text.push_str(&format!(
            " {} has a Shapley value of {:.2} at a value of {:.1}, which {}.",
            capitalize(lab),
            f.phi,
            f.value,
            direction(f.phi)
        ));
    }
    text.push_str(&format!(
        " The expected value is {:.2}, the average prediction over the background data.",
        attr.base_value
    ));
    Narration { text, fallbacks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapley::{FeatureAttribution, Method};

    pub(crate) fn reported_attribution() -> Attribution {
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

    fn reported_dictionary() -> VariableDictionary {
        VariableDictionary::new([
            ("zone_clg_stat", "zone temperature setpoint"),
            ("zone_temp", "zone air temperature"),
            ("oa_temp", "outdoor air dry-bulb temperature"),
            ("oa_radiation", "direct solar radiation rate per area"),
            ("zone_occ", "occupancy"),
        ])
    }

    #[test]
    fn reported_values_rank_temperature_setpoint_occupancy() {
        let attr = reported_attribution();
        let top: Vec<&str> = top_features(&attr, 3)
            .into_iter()
            .map(|i| attr.features[i].name.as_str())
            .collect();
        assert_eq!(top, ["oa_temp", "zone_clg_tstat", "zone_occ"]);

        // The printed dictionary keys the setpoint as `zone_clg_stat`, so the
        // attribution's `zone_clg_tstat` falls back to its raw name.
        let n = narrate_attribution(&attr, &reported_dictionary(), "cooling energy consumption");
        assert_eq!(n.fallbacks, ["zone_clg_tstat"]);
        assert!(n.text.contains("outdoor air dry-bulb temperature (`oa_temp`)"));

        let mut dict = reported_dictionary();
        dict.entries.push(("zone_clg_tstat".into(), "zone temperature setpoint".into()));
        let n = narrate_attribution(&attr, &dict, "cooling energy consumption");
        assert!(n.fallbacks.is_empty());
        assert!(n.text.contains(
            "are outdoor air dry-bulb temperature (`oa_temp`), zone temperature setpoint \
             (`zone_clg_tstat`) and occupancy (`zone_occ`)."
        ));
        assert!(n.text.contains("Shapley value of 680.37"));
        assert!(n.text.contains("Shapley value of -113.83 at a value of 26.0, which pushes the prediction down"));
        assert!(n.text.contains("expected value is 1544.67"));
    }

    #[test]
    fn all_zero_attribution_lists_schema_order() {
        let mut attr = reported_attribution();
        for f in &mut attr.features {
            f.phi = 0.0;
        }
        let n = narrate_attribution(&attr, &VariableDictionary::default(), "prediction");
        assert!(n.text.contains("equals the expected value of 1544.67"));
        assert!(n.text.contains("`oa_temp`, `oa_radiation` and `zone_temp`"));
        assert_eq!(n.fallbacks.len(), 3);
    }

    #[test]
    fn ties_follow_schema_order() {
        let mut attr = reported_attribution();
        attr.features[1].phi = 5.0;
        attr.features[3].phi = -5.0;
        attr.features[0].phi = 5.0;
        attr.features[2].phi = 0.0;
        attr.features[4].phi = 1.0;
        assert_eq!(top_features(&attr, 3), vec![0, 1, 3]);
    }
}
