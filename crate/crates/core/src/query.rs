//! Resolving a text or image command to one object in the graph.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{cosine_similarity, EncoderOracle, FeatureVector};
use crate::graph::{Crsg, Placement};
use crate::oracle::TargetDescriptor;
use crate::scene::{ObjectId, ObjectInstance};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryDescriptor {
    Text(String),
    /// Opaque image token such as `img:red_alarm_clock`.
    Image(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetQuery {
    pub descriptor: QueryDescriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carrier: Option<String>,
}

impl TargetQuery {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            descriptor: QueryDescriptor::Text(text.into()),
            carrier: None,
        }
    }

    pub fn image(token: impl Into<String>) -> Self {
        Self {
            descriptor: QueryDescriptor::Image(token.into()),
            carrier: None,
        }
    }

    pub fn on_carrier(mut self, carrier: impl Into<String>) -> Self {
        self.carrier = Some(carrier.into());
        self
    }

    pub fn is_image(&self) -> bool {
        matches!(self.descriptor, QueryDescriptor::Image(_))
    }

    /// Descriptor handed to the commonsense prior. Text queries pass their
    /// text; image queries pass the token plus the resolved object's caption.
    pub fn prior_descriptor(&self, resolved: &ObjectInstance) -> TargetDescriptor {
        match &self.descriptor {
            QueryDescriptor::Text(t) => TargetDescriptor::text(t.clone()),
            QueryDescriptor::Image(token) => TargetDescriptor {
                text: resolved.label().to_owned(),
                image: Some(token.clone()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryHit {
    pub object: ObjectInstance,
    pub score: f64,
    pub placement: Placement,
}

fn argmax<'a>(
    candidates: impl Iterator<Item = (&'a ObjectInstance, Placement)>,
    use_visual: bool,
    probe: &FeatureVector,
) -> Option<(f64, &'a ObjectInstance, Placement)> {
    let mut best: Option<(f64, &ObjectInstance, Placement)> = None;
    for (o, placement) in candidates {
        let feature = if use_visual { &o.visual_feature } else { &o.text_feature };
        let Ok(score) = cosine_similarity(feature, probe) else {
            continue;
        };
        let better = match &best {
            None => true,
            Some((s, b, _)) => score > *s || (score == *s && o.id < b.id),
        };
        if better {
            best = Some((score, o, placement));
        }
    }
    best
}

/// Carriers whose text similarity to `descriptor` is maximal.
pub fn best_matching_carriers(crsg: &Crsg, descriptor: &str, encoder: &dyn EncoderOracle) -> Vec<ObjectId> {
    let probe = encoder.encode_text(descriptor);
    let scored: Vec<(f64, &ObjectId)> = crsg
        .carriers
        .iter()
        .filter_map(|(id, node)| cosine_similarity(&node.object.text_feature, &probe).ok().map(|s| (s, id)))
        .collect();
    let Some(max) = scored.iter().map(|(s, _)| *s).reduce(f64::max) else {
        return Vec::new();
    };
    scored
        .into_iter()
        .filter(|(s, _)| *s >= max - 1e-12)
        .map(|(_, id)| id.clone())
        .collect()
}

/// The most similar object to the query, optionally restricted to objects
/// carried by the carrier(s) best matching the carrier descriptor.
pub fn query_target(crsg: &Crsg, query: &TargetQuery, encoder: &dyn EncoderOracle) -> Result<QueryHit> {
    if crsg.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let (probe, use_visual) = match &query.descriptor {
        QueryDescriptor::Text(t) => (encoder.encode_text(t), false),
        QueryDescriptor::Image(token) => (encoder.encode_query_image(token), true),
    };
    let restricted = query.carrier.as_deref().and_then(|carrier_text| {
        let carriers = best_matching_carriers(crsg, carrier_text, encoder);
        let objects: Vec<(&ObjectInstance, Placement)> = carriers
            .iter()
            .flat_map(|cid| {
                crsg.carriers[cid]
                    .carried
                    .values()
                    .map(move |o| (o, Placement::Carried(cid.clone())))
            })
            .collect();
        if objects.is_empty() {
            debug!("carrier descriptor {carrier_text:?} matched no loaded carrier; searching all objects");
            None
        } else {
            Some(objects)
        }
    });

    let best = match restricted {
        Some(objects) => argmax(objects.into_iter(), use_visual, &probe),
        None => argmax(crsg.objects().into_iter(), use_visual, &probe),
    };
    let (score, object, placement) = best.ok_or(Error::EmptyGraph)?;
    Ok(QueryHit {
        object: object.clone(),
        score,
        placement,
    })
}
