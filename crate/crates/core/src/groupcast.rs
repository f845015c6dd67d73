//! Request-driven message partition and the rate-splitting layer structure.
//!
//! A message unit collects the messages requested by exactly one user set.
//! Each unit for user set `S` is split into sub-message units, one per layer
//! `G ⊇ S`, and the sub-messages sharing a layer are re-assembled into one
//! transmission unit that every user of `G` decodes.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::userset::{UserSet, MAX_USERS};

/// Largest `|G^(k)|` for which the per-user decoding sets are enumerated.
pub const MAX_LAYERS_PER_USER: usize = 20;

/// Message label as it appears in scenario files: any string or integer.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum Label {
    Int(i64),
    Str(String),
}

impl From<Label> for String {
    fn from(l: Label) -> String {
        match l {
            Label::Int(i) => i.to_string(),
            Label::Str(s) => s,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct DemandsRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    messages: Option<Vec<String>>,
    requests: Vec<Vec<String>>,
}

#[derive(Deserialize)]
struct DemandsInput {
    #[serde(default)]
    messages: Option<Vec<Label>>,
    requests: Vec<Vec<Label>>,
}

/// Which messages each user requests.
///
/// Message labels are opaque; only their identity matters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Demands {
    messages: Vec<String>,
    /// Per user, sorted indices into `messages`.
    requests: Vec<Vec<usize>>,
}

impl Demands {
    /// Demands over the messages that appear in `requests` (first-appearance order).
    pub fn new<L: Into<String>>(requests: Vec<Vec<L>>) -> Result<Self> {
        let requests: Vec<Vec<String>> = requests
            .into_iter()
            .map(|r| r.into_iter().map(Into::into).collect())
            .collect();
        let mut catalog: Vec<String> = Vec::new();
        for r in &requests {
            for m in r {
                if !catalog.contains(m) {
                    catalog.push(m.clone());
                }
            }
        }
        Self::with_catalog(catalog, requests)
    }

    /// Demands over an explicit message catalog. Every catalog message must be
    /// requested by at least one user.
    pub fn with_catalog<L: Into<String>, M: Into<String>>(messages: Vec<M>, requests: Vec<Vec<L>>) -> Result<Self> {
        let messages: Vec<String> = messages.into_iter().map(Into::into).collect();
        let users = requests.len();
        if users == 0 {
            return Err(Error::InvalidDemands("no users".into()));
        }
        if users > MAX_USERS {
            return Err(Error::InvalidDemands(format!(
                "{users} users exceeds the supported maximum of {MAX_USERS}"
            )));
        }
        let mut index = BTreeMap::new();
        for (i, m) in messages.iter().enumerate() {
            if index.insert(m.clone(), i).is_some() {
                return Err(Error::InvalidDemands(format!("duplicate message label {m:?}")));
            }
        }
        let mut parsed = Vec::with_capacity(users);
        for (k, r) in requests.into_iter().enumerate() {
            let mut idx = Vec::new();
            for m in r {
                let m: String = m.into();
                match index.get(&m) {
                    Some(&i) => idx.push(i),
                    None => {
                        return Err(Error::InvalidDemands(format!(
                            "user {} requests unknown message {m:?}",
                            k + 1
                        )))
                    }
                }
            }
            idx.sort_unstable();
            idx.dedup();
            if idx.is_empty() {
                return Err(Error::InvalidDemands(format!("user {} requests nothing", k + 1)));
            }
            parsed.push(idx);
        }
        let demands = Demands {
            messages,
            requests: parsed,
        };
        if let Some(m) = demands.unrequested().next() {
            return Err(Error::InvalidDemands(format!(
                "message {:?} is requested by no user",
                demands.messages[m]
            )));
        }
        Ok(demands)
    }

    fn unrequested(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.messages.len()).filter(move |&m| self.requesters(m).is_empty())
    }

    /// `K`.
    pub fn users(&self) -> usize {
        self.requests.len()
    }

    /// Message labels; their count is `I`.
    pub fn messages(&self) -> &[String] {
        &self.messages
    }

    /// Labels requested by user `k` (1-based).
    pub fn request(&self, user: usize) -> Vec<&str> {
        self.requests[user - 1]
            .iter()
            .map(|&i| self.messages[i].as_str())
            .collect()
    }

    /// Set of users requesting message index `m`.
    fn requesters(&self, m: usize) -> UserSet {
        self.requests
            .iter()
            .enumerate()
            .filter(|(_, r)| r.binary_search(&m).is_ok())
            .fold(UserSet::EMPTY, |acc, (k, _)| acc.with(k + 1))
    }

    /// Whether user `k` (1-based) requests the message with this label.
    pub fn requests_label(&self, user: usize, label: &str) -> bool {
        self.requests[user - 1].iter().any(|&i| self.messages[i] == label)
    }
}

impl Serialize for Demands {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = DemandsRepr {
            messages: Some(self.messages.clone()),
            requests: (1..=self.users())
                .map(|k| self.request(k).into_iter().map(String::from).collect())
                .collect(),
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Demands {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let input = DemandsInput::deserialize(deserializer)?;
        let requests: Vec<Vec<String>> = input
            .requests
            .into_iter()
            .map(|r| r.into_iter().map(String::from).collect())
            .collect();
        let out = match input.messages {
            Some(m) => Demands::with_catalog(m.into_iter().map(String::from).collect(), requests),
            None => Demands::new(requests),
        };
        out.map_err(serde::de::Error::custom)
    }
}

/// One message unit: the messages requested by exactly `group`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageUnit {
    pub group: UserSet,
    pub messages: Vec<String>,
}

/// The nonempty message units, in canonical order of their user sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessagePartition {
    pub users: usize,
    pub units: Vec<MessageUnit>,
}

impl MessagePartition {
    /// The user sets with a nonempty unit.
    pub fn groups(&self) -> Vec<UserSet> {
        self.units.iter().map(|u| u.group).collect()
    }

    pub fn unit(&self, group: UserSet) -> Option<&[String]> {
        self.units
            .iter()
            .find(|u| u.group == group)
            .map(|u| u.messages.as_slice())
    }
}

/// Groups messages by their requester set.
pub fn compute_partition(demands: &Demands) -> Result<MessagePartition> {
    let mut by_group: BTreeMap<UserSet, Vec<String>> = BTreeMap::new();
    for (m, label) in demands.messages.iter().enumerate() {
        let group = demands.requesters(m);
        if group.is_empty() {
            return Err(Error::InvalidDemands(format!(
                "message {label:?} is requested by no user"
            )));
        }
        by_group.entry(group).or_default().push(label.clone());
    }
    Ok(MessagePartition {
        users: demands.users(),
        units: by_group
            .into_iter()
            .map(|(group, messages)| MessageUnit { group, messages })
            .collect(),
    })
}

/// How message units are split into layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerScheme {
    /// Every superset of `S` is a layer for `S`.
    Full,
    /// `S` is split into a private part and a part decoded by everyone.
    OneLayer,
    /// No splitting: `S` is only carried on layer `S`.
    NoSplit,
    /// Restriction of the full scheme to a given layer set.
    Custom(Vec<UserSet>),
}

/// A sub-message unit: the part of unit `group` carried on layer `layer`.
/// Both fields index into [`LayerStructure::groups`] and [`LayerStructure::layers`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubMessage {
    pub group: usize,
    pub layer: usize,
}

/// A rate constraint index: user `user` jointly decoding the layers `layers`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodingSet {
    /// 1-based user index.
    pub user: usize,
    /// Indices into [`LayerStructure::layers`], increasing.
    pub layers: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct LayerStructure {
    users: usize,
    scheme: LayerScheme,
    groups: Vec<UserSet>,
    layers: Vec<UserSet>,
    layers_of_group: Vec<Vec<usize>>,
    groups_of_layer: Vec<Vec<usize>>,
    layers_of_user: Vec<Vec<usize>>,
    sub_messages: Vec<SubMessage>,
    decoding: OnceLock<Vec<DecodingSet>>,
}

/// Builds the layer structure of `scheme` over the units of `partition`.
pub fn build_layers(partition: &MessagePartition, scheme: LayerScheme) -> Result<LayerStructure> {
    let users = partition.users;
    let full = UserSet::full(users);
    let groups = partition.groups();
    if groups.is_empty() {
        return Err(Error::InvalidLayers("partition has no message units".into()));
    }
    let per_group: Vec<Vec<UserSet>> = match &scheme {
        LayerScheme::Full => groups.iter().map(|s| s.supersets(users)).collect(),
        LayerScheme::OneLayer => groups
            .iter()
            .map(|&s| if s == full { vec![s] } else { vec![s, full] })
            .collect(),
        LayerScheme::NoSplit => groups.iter().map(|&s| vec![s]).collect(),
        LayerScheme::Custom(set) => {
            let mut set = set.clone();
            set.sort();
            set.dedup();
            for &g in &set {
                if g.is_empty() || !g.is_subset_of(full) {
                    return Err(Error::InvalidLayers(format!(
                        "layer {g} is not a nonempty subset of the {users} users"
                    )));
                }
                if !groups.iter().any(|s| s.is_subset_of(g)) {
                    return Err(Error::InvalidLayers(format!(
                        "layer {g} contains no message-unit group, so it lies outside the full layer set"
                    )));
                }
            }
            if let Some(s) = groups.iter().find(|s| !set.contains(s)) {
                return Err(Error::InvalidLayers(format!(
                    "message-unit group {s} is missing from the custom layer set"
                )));
            }
            groups
                .iter()
                .map(|s| set.iter().copied().filter(|g| s.is_subset_of(*g)).collect())
                .collect()
        }
    };

    let mut layers: Vec<UserSet> = per_group.iter().flatten().copied().collect();
    layers.sort();
    layers.dedup();
    let layer_index = |g: UserSet| layers.binary_search(&g).expect("layer present");

    let layers_of_group: Vec<Vec<usize>> = per_group
        .iter()
        .map(|gs| gs.iter().map(|&g| layer_index(g)).collect())
        .collect();
    let mut groups_of_layer = vec![Vec::new(); layers.len()];
    let mut sub_messages = Vec::new();
    for (si, ls) in layers_of_group.iter().enumerate() {
        for &gi in ls {
            groups_of_layer[gi].push(si);
            sub_messages.push(SubMessage { group: si, layer: gi });
        }
    }
    let layers_of_user = (1..=users)
        .map(|k| {
            layers
                .iter()
                .enumerate()
                .filter(|(_, g)| g.contains(k))
                .map(|(i, _)| i)
                .collect()
        })
        .collect();

    Ok(LayerStructure {
        users,
        scheme,
        groups,
        layers,
        layers_of_group,
        groups_of_layer,
        layers_of_user,
        sub_messages,
        decoding: OnceLock::new(),
    })
}

impl LayerStructure {
    pub fn users(&self) -> usize {
        self.users
    }

    pub fn scheme(&self) -> &LayerScheme {
        &self.scheme
    }

    /// `𝓢`, canonical order.
    pub fn groups(&self) -> &[UserSet] {
        &self.groups
    }

    /// `𝓖`, canonical order.
    pub fn layers(&self) -> &[UserSet] {
        &self.layers
    }

    /// Layer indices `𝓖_S` for group index `s`.
    pub fn layers_of_group(&self, s: usize) -> &[usize] {
        &self.layers_of_group[s]
    }

    /// Group indices `𝓢_G` for layer index `g`.
    pub fn groups_of_layer(&self, g: usize) -> &[usize] {
        &self.groups_of_layer[g]
    }

    /// Layer indices `𝓖^(k)` decodable by user `k` (1-based).
    pub fn layers_of_user(&self, user: usize) -> &[usize] {
        &self.layers_of_user[user - 1]
    }

    /// Sub-message index, ordered by group then layer (both canonical).
    pub fn sub_messages(&self) -> &[SubMessage] {
        &self.sub_messages
    }

    pub fn layer_index(&self, g: UserSet) -> Option<usize> {
        self.layers.binary_search(&g).ok()
    }

    pub fn group_index(&self, s: UserSet) -> Option<usize> {
        self.groups.binary_search(&s).ok()
    }

    pub fn sub_message_index(&self, group: UserSet, layer: UserSet) -> Option<usize> {
        let s = self.group_index(group)?;
        let g = self.layer_index(layer)?;
        self.sub_messages.iter().position(|sm| sm.group == s && sm.layer == g)
    }

    /// All `(k, 𝒳)` with `∅ ≠ 𝒳 ⊆ 𝓖^(k)`, ordered by user, then by subset bitmask.
    pub fn decoding_sets(&self) -> Result<&[DecodingSet]> {
        if let Some(d) = self.decoding.get() {
            return Ok(d);
        }
        let widest = self.layers_of_user.iter().map(Vec::len).max().unwrap_or(0);
        if widest > MAX_LAYERS_PER_USER {
            return Err(Error::InvalidLayers(format!(
                "a user decodes {widest} layers; at most {MAX_LAYERS_PER_USER} are supported"
            )));
        }
        let mut sets = Vec::new();
        for (k, ls) in self.layers_of_user.iter().enumerate() {
            for mask in 1u32..(1u32 << ls.len()) {
                let layers = ls
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, &g)| g)
                    .collect();
                sets.push(DecodingSet { user: k + 1, layers });
            }
        }
        Ok(self.decoding.get_or_init(|| sets))
    }

    /// `Σ_k (2^{|𝓖^(k)|} − 1)`.
    pub fn decoding_set_count(&self) -> usize {
        self.layers_of_user.iter().map(|ls| (1usize << ls.len()) - 1).sum()
    }

    /// Uniform weights `1/|𝓢|`.
    pub fn uniform_weights(&self) -> Vec<f64> {
        vec![1.0 / self.groups.len() as f64; self.groups.len()]
    }
}

/// Sub-message rates together with the unit and transmission-unit rates they induce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateAllocation {
    /// `R_{S,G}` in bit/s, indexed like [`LayerStructure::sub_messages`].
    pub sub_rates: Vec<f64>,
    /// `R_S` per group.
    pub unit_rates: Vec<f64>,
    /// `R̃_G` per layer.
    pub layer_rates: Vec<f64>,
}

impl RateAllocation {
    pub fn zero(layers: &LayerStructure) -> Self {
        assemble_rates(layers, &vec![0.0; layers.sub_messages().len()]).expect("zero rates are valid")
    }

    /// `Σ_S α_S R_S`.
    pub fn weighted_sum(&self, weights: &[f64]) -> f64 {
        self.unit_rates.iter().zip(weights).map(|(r, a)| r * a).sum()
    }
}

/// Sums sub-message rates into unit rates and transmission-unit rates.
pub fn assemble_rates(layers: &LayerStructure, sub_rates: &[f64]) -> Result<RateAllocation> {
    let subs = layers.sub_messages();
    if sub_rates.len() != subs.len() {
        return Err(Error::InvalidRates(format!(
            "expected {} sub-message rates, got {}",
            subs.len(),
            sub_rates.len()
        )));
    }
    if let Some((i, r)) = sub_rates
        .iter()
        .enumerate()
        .find(|(_, r)| !(**r >= 0.0) || !r.is_finite())
    {
        return Err(Error::InvalidRates(format!("sub-message rate {i} is {r}")));
    }
    let mut unit_rates = vec![0.0; layers.groups().len()];
    let mut layer_rates = vec![0.0; layers.layers().len()];
    for (sm, &r) in subs.iter().zip(sub_rates) {
        unit_rates[sm.group] += r;
        layer_rates[sm.layer] += r;
    }
    Ok(RateAllocation {
        sub_rates: sub_rates.to_vec(),
        unit_rates,
        layer_rates,
    })
}
