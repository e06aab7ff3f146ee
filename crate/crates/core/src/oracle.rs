//! Commonsense prior interface and the offline keyword heuristic that backs it
//! by default.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{similarity_or_zero, tokenize, EncoderOracle, HashEmbedder, IMAGE_PREFIX};
use crate::scene::ObjectId;

/// Head nouns the heuristic accepts as carrier furniture.
pub const CARRIER_KEYWORDS: &[&str] = &[
    "table",
    "desk",
    "shelf",
    "bookshelf",
    "cabinet",
    "counter",
    "nightstand",
    "sofa",
    "couch",
    "bed",
    "dresser",
    "toilet",
    "stand",
];

/// Fallback affinity for an item/carrier pair absent from the table.
pub const DEFAULT_AFFINITY: f64 = 0.3;

/// How likely an item category is to sit on a carrier type.
const AFFINITY: &[(&str, &[(&str, f64)])] = &[
    ("cup", &[("counter", 0.9), ("table", 0.8), ("desk", 0.7), ("nightstand", 0.5), ("shelf", 0.4), ("cabinet", 0.4), ("dresser", 0.3), ("sofa", 0.15), ("bed", 0.1), ("toilet", 0.02)]),
    ("plate", &[("table", 0.9), ("counter", 0.9), ("cabinet", 0.6), ("desk", 0.5), ("shelf", 0.4), ("nightstand", 0.2), ("dresser", 0.2), ("sofa", 0.1), ("bed", 0.05), ("toilet", 0.01)]),
    ("mug", &[("counter", 0.9), ("table", 0.8), ("desk", 0.8), ("nightstand", 0.5), ("shelf", 0.4), ("cabinet", 0.4), ("dresser", 0.3), ("sofa", 0.15), ("bed", 0.1), ("toilet", 0.02)]),
    ("bottle", &[("counter", 0.9), ("table", 0.7), ("desk", 0.6), ("nightstand", 0.5), ("cabinet", 0.5), ("shelf", 0.4), ("dresser", 0.3), ("toilet", 0.25), ("sofa", 0.15), ("bed", 0.1)]),
    ("book", &[("shelf", 0.95), ("desk", 0.8), ("nightstand", 0.7), ("table", 0.6), ("bed", 0.5), ("sofa", 0.5), ("dresser", 0.4), ("cabinet", 0.4), ("counter", 0.15), ("toilet", 0.05)]),
    ("clock", &[("nightstand", 0.95), ("dresser", 0.8), ("desk", 0.7), ("shelf", 0.6), ("table", 0.4), ("cabinet", 0.4), ("bed", 0.3), ("counter", 0.2), ("sofa", 0.1), ("toilet", 0.02)]),
    ("controller", &[("sofa", 0.95), ("table", 0.7), ("desk", 0.6), ("bed", 0.5), ("shelf", 0.4), ("cabinet", 0.4), ("nightstand", 0.3), ("dresser", 0.2), ("counter", 0.1), ("toilet", 0.02)]),
    ("remote", &[("sofa", 0.95), ("table", 0.7), ("cabinet", 0.5), ("bed", 0.5), ("nightstand", 0.4), ("desk", 0.4), ("shelf", 0.3), ("dresser", 0.2), ("counter", 0.1), ("toilet", 0.02)]),
    ("phone", &[("desk", 0.85), ("nightstand", 0.8), ("table", 0.7), ("sofa", 0.6), ("bed", 0.6), ("counter", 0.4), ("dresser", 0.4), ("shelf", 0.3), ("cabinet", 0.2), ("toilet", 0.05)]),
    ("laptop", &[("desk", 0.95), ("table", 0.8), ("sofa", 0.5), ("bed", 0.5), ("counter", 0.3), ("nightstand", 0.2), ("shelf", 0.2), ("dresser", 0.2), ("cabinet", 0.2), ("toilet", 0.01)]),
    ("keys", &[("cabinet", 0.8), ("table", 0.7), ("counter", 0.7), ("dresser", 0.7), ("desk", 0.6), ("nightstand", 0.5), ("shelf", 0.5), ("sofa", 0.2), ("bed", 0.1), ("toilet", 0.02)]),
    ("glasses", &[("nightstand", 0.9), ("desk", 0.8), ("dresser", 0.6), ("table", 0.6), ("shelf", 0.4), ("bed", 0.3), ("sofa", 0.3), ("counter", 0.2), ("cabinet", 0.2), ("toilet", 0.05)]),
    ("towel", &[("toilet", 0.8), ("cabinet", 0.7), ("shelf", 0.6), ("bed", 0.5), ("dresser", 0.5), ("counter", 0.4), ("sofa", 0.2), ("table", 0.2), ("nightstand", 0.1), ("desk", 0.05)]),
    ("vase", &[("table", 0.9), ("shelf", 0.8), ("cabinet", 0.7), ("dresser", 0.6), ("counter", 0.5), ("nightstand", 0.4), ("desk", 0.3), ("sofa", 0.05), ("bed", 0.05), ("toilet", 0.05)]),
    ("pen", &[("desk", 0.95), ("table", 0.6), ("nightstand", 0.5), ("shelf", 0.5), ("counter", 0.3), ("dresser", 0.3), ("cabinet", 0.3), ("sofa", 0.1), ("bed", 0.1), ("toilet", 0.01)]),
];

/// Carrier-type synonyms folded onto the affinity table's vocabulary.
const CARRIER_ALIASES: &[(&str, &str)] = &[("couch", "sofa"), ("bookshelf", "shelf"), ("stand", "nightstand")];

/// What the prior is told about one unexplored carrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarrierSummary {
    pub id: ObjectId,
    pub captions: Vec<String>,
    /// Path distance from the robot, meters.
    pub distance: f64,
}

/// The object being searched for, as text or as an image token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDescriptor {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

impl TargetDescriptor {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            image: None,
        }
    }
}

/// Commonsense oracle: carrier plausibility, carrier ranking for a target,
/// and image comparison.
pub trait CarrierPrior: Send + Sync {
    fn is_carrier(&self, captions: &[String]) -> Result<bool>;

    /// Carrier ids, most promising first. Must be a permutation of the input ids.
    fn rank_carriers(&self, carriers: &[CarrierSummary], target: &TargetDescriptor) -> Result<Vec<ObjectId>>;

    /// Score in [0, 1] that two image tokens show the same object.
    fn compare_images(&self, candidate: &str, target: &str) -> Result<f64>;
}

/// Keyword and affinity-table prior. Fully deterministic and offline.
#[derive(Debug, Clone, Default)]
pub struct HeuristicPrior {
    encoder: HashEmbedder,
}

impl HeuristicPrior {
    pub fn new(encoder: HashEmbedder) -> Self {
        Self { encoder }
    }
}

fn head_noun(caption: &str) -> Option<String> {
    tokenize(caption).last()
}

fn canonical_carrier(word: &str) -> Option<&'static str> {
    if let Some((_, to)) = CARRIER_ALIASES.iter().find(|(from, _)| *from == word) {
        return Some(to);
    }
    CARRIER_KEYWORDS.iter().copied().find(|k| *k == word)
}

/// Carrier type named by the first caption whose head noun is a carrier keyword.
pub fn carrier_type(captions: &[String]) -> Option<&'static str> {
    captions
        .iter()
        .filter_map(|c| head_noun(c))
        .find_map(|w| canonical_carrier(&w))
}

/// Item category named in a descriptor, if the affinity table knows it.
pub fn item_category(target: &TargetDescriptor) -> Option<&'static str> {
    let image_words = target
        .image
        .as_deref()
        .map(|t| t.strip_prefix(IMAGE_PREFIX).unwrap_or(t).replace('_', " "));
    let text = image_words.unwrap_or_else(|| target.text.clone());
    tokenize(&text)
        .collect::<Vec<_>>()
        .iter()
        .rev()
        .find_map(|w| AFFINITY.iter().find(|(item, _)| item == w).map(|(item, _)| *item))
}

pub fn affinity(item: Option<&str>, carrier: Option<&str>) -> f64 {
    let (Some(item), Some(carrier)) = (item, carrier) else {
        return DEFAULT_AFFINITY;
    };
    AFFINITY
        .iter()
        .find(|(i, _)| *i == item)
        .and_then(|(_, row)| row.iter().find(|(c, _)| *c == carrier))
        .map_or(DEFAULT_AFFINITY, |(_, s)| *s)
}

impl CarrierPrior for HeuristicPrior {
    fn is_carrier(&self, captions: &[String]) -> Result<bool> {
        Ok(carrier_type(&captions[..captions.len().min(3)]).is_some())
    }

    fn rank_carriers(&self, carriers: &[CarrierSummary], target: &TargetDescriptor) -> Result<Vec<ObjectId>> {
        let item = item_category(target);
        let mut scored: Vec<(f64, &CarrierSummary)> = carriers
            .iter()
            .map(|c| (affinity(item, carrier_type(&c.captions)), c))
            .collect();
        scored.sort_by(|(sa, a), (sb, b)| {
            sb.total_cmp(sa)
                .then(a.distance.total_cmp(&b.distance))
                .then_with(|| a.id.cmp(&b.id))
        });
        Ok(scored.into_iter().map(|(_, c)| c.id.clone()).collect())
    }

    fn compare_images(&self, candidate: &str, target: &str) -> Result<f64> {
        let a = self.encoder.encode_query_image(candidate);
        let b = self.encoder.encode_query_image(target);
        Ok(similarity_or_zero(&a, &b).clamp(0.0, 1.0))
    }
}

/// Prior that always fails; exercises the fallback paths.
#[derive(Debug, Clone, Copy, Default)]
pub struct FailingPrior;

impl CarrierPrior for FailingPrior {
    fn is_carrier(&self, _: &[String]) -> Result<bool> {
        Err(Error::Oracle("prior unavailable".into()))
    }

    fn rank_carriers(&self, _: &[CarrierSummary], _: &TargetDescriptor) -> Result<Vec<ObjectId>> {
        Err(Error::Oracle("prior unavailable".into()))
    }

    fn compare_images(&self, _: &str, _: &str) -> Result<f64> {
        Err(Error::Oracle("prior unavailable".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn caps(c: &[&str]) -> Vec<String> {
        c.iter().map(|s| (*s).to_owned()).collect()
    }

    #[test]
    fn accepts_furniture_rejects_items() {
        let prior = HeuristicPrior::default();
        assert!(prior.is_carrier(&caps(&["table", "desk", "wooden table"])).unwrap());
        assert!(!prior.is_carrier(&caps(&["cup", "mug", "ceramic cup"])).unwrap());
        // head noun decides: a table lamp is a lamp
        assert!(!prior.is_carrier(&caps(&["table lamp", "lamp"])).unwrap());
        // only the first three captions count
        assert!(!prior.is_carrier(&caps(&["lamp", "light", "bulb", "table"])).unwrap());
    }

    #[test]
    fn cup_prefers_counter_over_toilet() {
        let prior = HeuristicPrior::default();
        let carriers = vec![
            CarrierSummary {
                id: "toilet_1".into(),
                captions: caps(&["white toilet", "toilet"]),
                distance: 1.0,
            },
            CarrierSummary {
                id: "counter_1".into(),
                captions: caps(&["kitchen counter", "counter"]),
                distance: 8.0,
            },
        ];
        let ranked = prior.rank_carriers(&carriers, &TargetDescriptor::text("cup")).unwrap();
        assert_eq!(ranked, vec![ObjectId::from("counter_1"), ObjectId::from("toilet_1")]);
    }

    #[test]
    fn ties_broken_by_distance_then_id() {
        let prior = HeuristicPrior::default();
        let mk = |id: &str, d: f64| CarrierSummary {
            id: id.into(),
            captions: caps(&["table"]),
            distance: d,
        };
        let ranked = prior
            .rank_carriers(&[mk("b", 2.0), mk("c", 1.0), mk("a", 2.0)], &TargetDescriptor::text("red cup"))
            .unwrap();
        let ids: Vec<&str> = ranked.iter().map(ObjectId::as_str).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn image_descriptor_category() {
        let target = TargetDescriptor {
            text: String::new(),
            image: Some("img:red_alarm_clock".into()),
        };
        assert_eq!(item_category(&target), Some("clock"));
        assert_eq!(item_category(&TargetDescriptor::text("sofa")), None);
    }

    #[test]
    fn image_comparison_in_unit_range() {
        let prior = HeuristicPrior::default();
        assert!((prior.compare_images("img:red_cup", "img:red_cup").unwrap() - 1.0).abs() < 1e-12);
        assert!((prior.compare_images("img:red_cup", "img:blue_cup").unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(prior.compare_images("img:red_cup", "img:sofa").unwrap(), 0.0);
    }
}
