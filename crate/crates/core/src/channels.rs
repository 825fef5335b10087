//! Observation channels, observation spaces and the named presets.
//!
//! A channel is one semantic quantity (possibly multi-dimensional) read off an
//! [`EnvState`]. An [`ObservationSpace`] is an ordered set of channels plus an
//! optional history. Flattened observations lay out the newest frame first,
//! then older frames, then the previous actions (newest first):
//!
//! ```text
//! [o_t, o_{t-1}, ..., o_{t-N+1}, a_{t-1}, ..., a_{t-N+1}]
//! ```
//!
//! Every global position (`q_rt`, `q`, `C_1`, `C`) is reported relative to the
//! root's horizontal coordinate, so observations are invariant to horizontal
//! translation. The raw coordinate is available only as the `x` channel.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::envs::{EnvSpec, EnvState, ExtraRole, ROOT_DOF};
use crate::error::{Error, Result};

/// Semantic tag of a channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelGroup {
    RootPosition,
    RootVelocity,
    RootAcceleration,
    JointPosition,
    JointVelocity,
    CartesianPosition,
    CartesianVelocity,
    BodyRotation,
    Contact,
    PreviousAction,
    Extra,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelSource {
    RawSensor,
    Estimated,
    Derived,
}

/// How a channel's values are read from the state.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    /// `q_rt = [C_1 - x, pitch]`.
    RootPose,
    /// The raw, non-relative horizontal root coordinate.
    RootX,
    RootHeight,
    RootPos,
    RootRot,
    RootRotVel,
    RootVel,
    RootAcc,
    JointPos,
    JointVel,
    GenPos,
    GenVel,
    BodyPos,
    BodyVel,
    BodyRot,
    BodyRotMat,
    Contacts,
    PrevAction,
    Extra(String),
}

impl ChannelKind {
    const NAMED: [(&'static str, ChannelKind); 18] = [
        ("q_jt", ChannelKind::JointPos),
        ("qdot_jt", ChannelKind::JointVel),
        ("theta", ChannelKind::RootRot),
        ("theta_dot", ChannelKind::RootRotVel),
        ("Cddot_1", ChannelKind::RootAcc),
        ("z", ChannelKind::RootHeight),
        ("Cdot_1", ChannelKind::RootVel),
        ("C_1", ChannelKind::RootPos),
        ("q_rt", ChannelKind::RootPose),
        ("q", ChannelKind::GenPos),
        ("qdot", ChannelKind::GenVel),
        ("C", ChannelKind::BodyPos),
        ("Cdot", ChannelKind::BodyVel),
        ("r", ChannelKind::BodyRot),
        ("R", ChannelKind::BodyRotMat),
        ("c", ChannelKind::Contacts),
        ("a_prev", ChannelKind::PrevAction),
        ("x", ChannelKind::RootX),
    ];

    pub fn from_name(name: &str) -> ChannelKind {
        Self::NAMED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, k)| k.clone())
            .unwrap_or_else(|| ChannelKind::Extra(name.to_string()))
    }

    pub fn name(&self) -> &str {
        match self {
            ChannelKind::Extra(n) => n,
            kind => Self::NAMED
                .iter()
                .find(|(_, k)| k == kind)
                .map(|(n, _)| *n)
                .expect("every builtin kind is named"),
        }
    }

    fn group(&self) -> ChannelGroup {
        use ChannelKind::*;
        match self {
            RootPose | RootHeight | RootPos => ChannelGroup::RootPosition,
            RootVel => ChannelGroup::RootVelocity,
            RootAcc => ChannelGroup::RootAcceleration,
            JointPos | GenPos => ChannelGroup::JointPosition,
            JointVel | GenVel => ChannelGroup::JointVelocity,
            BodyPos => ChannelGroup::CartesianPosition,
            BodyVel => ChannelGroup::CartesianVelocity,
            RootRot | RootRotVel | BodyRot | BodyRotMat => ChannelGroup::BodyRotation,
            Contacts => ChannelGroup::Contact,
            PrevAction => ChannelGroup::PreviousAction,
            RootX | Extra(_) => ChannelGroup::Extra,
        }
    }

    fn source(&self) -> ChannelSource {
        use ChannelKind::*;
        match self {
            JointPos | JointVel | RootRot | RootRotVel | RootAcc | Contacts | Extra(_) => {
                ChannelSource::RawSensor
            }
            RootPose | RootX | RootHeight | RootPos | RootVel | GenVel => ChannelSource::Estimated,
            GenPos | BodyPos | BodyVel | BodyRot | BodyRotMat | PrevAction => ChannelSource::Derived,
        }
    }

    fn unit(&self) -> &'static str {
        use ChannelKind::*;
        match self {
            RootX | RootHeight | RootPos | BodyPos => "m",
            RootRot | JointPos | BodyRot => "rad",
            RootRotVel | JointVel => "rad/s",
            RootVel | BodyVel => "m/s",
            RootAcc => "m/s^2",
            BodyRotMat | Contacts | PrevAction | Extra(_) => "1",
            // mixed: translational then rotational components
            RootPose | GenPos => "m|rad",
            GenVel => "m/s|rad/s",
        }
    }

    /// Dimension of the channel on an environment.
    pub fn dim(&self, env: &EnvSpec) -> Option<usize> {
        use ChannelKind::*;
        let j = env.joint_count;
        let b = env.body_count;
        let articulated = env.articulated;
        let d = match self {
            RootPose if articulated => ROOT_DOF,
            RootX | RootHeight | RootRot | RootRotVel if articulated => 1,
            RootPos | RootVel | RootAcc if articulated => 2,
            JointPos | JointVel if articulated && j > 0 => j,
            GenPos | GenVel if articulated => ROOT_DOF + j,
            BodyPos | BodyVel if articulated => 2 * b,
            BodyRot if articulated => b,
            BodyRotMat if articulated => 4 * b,
            Contacts if env.contact_site_count > 0 => env.contact_site_count,
            PrevAction => env.action_dim,
            Extra(name) => env.extra_channels.iter().find(|c| &c.name == name)?.dim,
            _ => return None,
        };
        Some(d)
    }
}

/// Recorded `[min, max]` envelope of one channel dimension.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValueRange {
    pub min: f64,
    pub max: f64,
}

impl ValueRange {
    pub fn point(v: f64) -> Self {
        ValueRange { min: v, max: v }
    }

    pub fn include(&mut self, v: f64) {
        if v < self.min {
            self.min = v;
        }
        if v > self.max {
            self.max = v;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.min < self.max {
            rng.random_range(self.min..=self.max)
        } else {
            self.min
        }
    }
}

impl Serialize for ValueRange {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.min, self.max].serialize(s)
    }
}

impl<'de> Deserialize<'de> for ValueRange {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [min, max] = <[f64; 2]>::deserialize(d)?;
        if min > max {
            return Err(serde::de::Error::custom(format!("range min {min} > max {max}")));
        }
        Ok(ValueRange { min, max })
    }
}

/// One named observation channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSpec {
    pub name: String,
    pub kind: ChannelKind,
    pub group: ChannelGroup,
    pub dim: usize,
    pub units: Vec<String>,
    /// Per-dimension envelope; `None` until a sample has been recorded.
    pub range: Vec<Option<ValueRange>>,
    pub source: ChannelSource,
}

impl ChannelSpec {
    pub fn new(kind: ChannelKind, dim: usize) -> Self {
        assert!(dim >= 1, "channel dimension must be positive");
        ChannelSpec {
            name: kind.name().to_string(),
            group: kind.group(),
            units: vec![kind.unit().to_string(); dim],
            range: vec![None; dim],
            source: kind.source(),
            dim,
            kind,
        }
    }

    pub fn for_env(kind: ChannelKind, env: &EnvSpec) -> Option<Self> {
        kind.dim(env).filter(|&d| d > 0).map(|d| Self::new(kind, d))
    }

    pub fn clear_range(&mut self) {
        self.range = vec![None; self.dim];
    }

    fn record(&mut self, values: &[f64]) {
        for (r, &v) in self.range.iter_mut().zip(values) {
            if !v.is_finite() {
                continue;
            }
            match r {
                Some(r) => r.include(v),
                None => *r = Some(ValueRange::point(v)),
            }
        }
    }

    /// Independent uniform draw from the recorded range of every dimension.
    /// Dimensions without a recorded sample yield 0.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.range
            .iter()
            .map(|r| r.map_or(0.0, |r| r.sample(rng)))
            .collect()
    }

    fn extract(&self, state: &EnvState, last_action: &[f64], out: &mut Vec<f64>) -> Result<()> {
        use ChannelKind::*;
        let start = out.len();
        let missing = || Error::MissingChannel(self.name.clone());
        let root = |state: &EnvState| -> Result<()> {
            if state.q.len() < ROOT_DOF || state.com_pos_rel.is_empty() {
                return Err(missing());
            }
            Ok(())
        };
        match &self.kind {
            RootPose => {
                root(state)?;
                let c1 = state.com_pos_rel[0];
                out.extend([c1[0], c1[1], state.q[2]]);
            }
            RootX => {
                root(state)?;
                out.push(state.q[0]);
            }
            RootHeight => {
                root(state)?;
                out.push(state.com_pos_rel[0][1]);
            }
            RootPos => {
                root(state)?;
                out.extend(state.com_pos_rel[0]);
            }
            RootRot => {
                root(state)?;
                out.push(state.q[2]);
            }
            RootRotVel => {
                root(state)?;
                out.push(*state.qdot.get(2).ok_or_else(missing)?);
            }
            RootVel => out.extend(*state.com_vel.first().ok_or_else(missing)?),
            RootAcc => {
                root(state)?;
                out.extend(state.root_acc);
            }
            JointPos => out.extend(state.q.get(ROOT_DOF..).ok_or_else(missing)?),
            JointVel => out.extend(state.qdot.get(ROOT_DOF..).ok_or_else(missing)?),
            GenPos => {
                root(state)?;
                out.extend([0.0, state.q[1], state.q[2]]);
                out.extend(&state.q[ROOT_DOF..]);
            }
            GenVel => out.extend(&state.qdot),
            BodyPos => out.extend(state.com_pos_rel.iter().flatten()),
            BodyVel => out.extend(state.com_vel.iter().flatten()),
            BodyRot => out.extend(&state.body_rot),
            BodyRotMat => {
                for &phi in &state.body_rot {
                    let m = crate::envs::multibody::rotation_matrix(phi);
                    out.extend([m[0][0], m[0][1], m[1][0], m[1][1]]);
                }
            }
            Contacts => out.extend(&state.contacts),
            PrevAction => out.extend(last_action),
            Extra(name) => out.extend(state.extras.get(name).ok_or_else(missing)?),
        }
        let got = out.len() - start;
        if got != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }
}

/// Every channel an environment can provide, in registry order.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRegistry {
    channels: Vec<ChannelSpec>,
}

impl ChannelRegistry {
    pub fn for_env(env: &EnvSpec) -> Self {
        let builtins = ChannelKind::NAMED.iter().map(|(_, k)| k.clone());
        let extras = env.extra_channels.iter().map(|c| ChannelKind::Extra(c.name.clone()));
        let channels = builtins
            .chain(extras)
            .filter_map(|k| ChannelSpec::for_env(k, env))
            .collect();
        ChannelRegistry { channels }
    }

    pub fn channels(&self) -> &[ChannelSpec] {
        &self.channels
    }

    pub fn get(&self, name: &str) -> Result<&ChannelSpec> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }
}

/// A set of channels proposed together during search.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorGroup {
    pub name: String,
    pub members: Vec<String>,
}

/// The semantic candidate groups for an environment.
///
/// Articulated environments: `C_1`, `Cdot_1`, Cartesian coordinates
/// (`C`, `Cdot`, `r`), contact flags and the previous action. The diagnostic
/// environment: its relevant, noise and deceptive channels and the previous
/// action. Empty groups are dropped.
pub fn default_groups(env: &EnvSpec) -> Vec<SensorGroup> {
    let registry = ChannelRegistry::for_env(env);
    let group = |name: &str, members: Vec<String>| SensorGroup {
        name: name.to_string(),
        members: members
            .into_iter()
            .filter(|m| registry.position(m).is_some())
            .collect(),
    };
    let names = |role: ExtraRole| env.extras_with_role(role).map(|c| c.name.clone()).collect();
    let groups = if env.articulated {
        vec![
            group("C_1", vec!["C_1".into()]),
            group("Cdot_1", vec!["Cdot_1".into()]),
            group("cartesian", vec!["C".into(), "Cdot".into(), "r".into()]),
            group("contact", vec!["c".into()]),
            group("prev-action", vec!["a_prev".into()]),
        ]
    } else {
        vec![
            group("relevant", names(ExtraRole::Relevant)),
            group("noise", names(ExtraRole::Noise)),
            group("deceptive", names(ExtraRole::Deceptive)),
            group("prev-action", vec!["a_prev".into()]),
        ]
    };
    groups.into_iter().filter(|g| !g.members.is_empty()).collect()
}

/// Named observation configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "RS")]
    RawSensors,
    #[serde(rename = "GC")]
    Generalized,
    #[serde(rename = "MC")]
    Maximal,
    #[serde(rename = "OAI")]
    OpenAi,
    #[serde(rename = "RS+C")]
    RawContacts,
    #[serde(rename = "RS+CP")]
    RawCartesian,
    #[serde(rename = "Ours")]
    Ours,
    #[serde(rename = "Ours+x")]
    OursX,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::RawSensors,
        Preset::Generalized,
        Preset::Maximal,
        Preset::OpenAi,
        Preset::RawContacts,
        Preset::RawCartesian,
        Preset::Ours,
        Preset::OursX,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Preset::RawSensors => "RS",
            Preset::Generalized => "GC",
            Preset::Maximal => "MC",
            Preset::OpenAi => "OAI",
            Preset::RawContacts => "RS+C",
            Preset::RawCartesian => "RS+CP",
            Preset::Ours => "Ours",
            Preset::OursX => "Ours+x",
        }
    }

    pub fn parse(id: &str) -> Result<Preset> {
        Preset::ALL
            .into_iter()
            .find(|p| p.id() == id)
            .ok_or_else(|| Error::UnknownPreset(id.to_string()))
    }

    /// Channel names of the preset on an articulated environment.
    pub fn articulated_channels(&self) -> Vec<&'static str> {
        const RS: [&str; 5] = ["q_jt", "qdot_jt", "theta", "theta_dot", "Cddot_1"];
        let mut names: Vec<&str> = match self {
            Preset::Generalized => vec!["q", "qdot"],
            Preset::Maximal => vec!["C", "Cdot", "r"],
            Preset::OpenAi => vec!["z", "theta", "q_jt", "qdot"],
            _ => RS.to_vec(),
        };
        match self {
            Preset::RawContacts => names.push("c"),
            Preset::RawCartesian => names.push("C"),
            Preset::Ours => names.extend(["z", "Cdot_1"]),
            Preset::OursX => names.extend(["z", "Cdot_1", "x"]),
            _ => {}
        }
        names
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Builds a named preset against an environment's structure.
pub fn preset(name: &str, env: &EnvSpec) -> Result<ObservationSpace> {
    let preset = Preset::parse(name)?;
    let registry = ChannelRegistry::for_env(env);
    let unavailable = |reason: String| Error::PresetUnavailable {
        preset: name.to_string(),
        env: env.id.clone(),
        reason,
    };
    let names: Vec<String> = if env.articulated {
        if preset == Preset::RawContacts && env.contact_site_count == 0 {
            return Err(unavailable("the environment has no contact sensors".into()));
        }
        preset.articulated_channels().into_iter().map(String::from).collect()
    } else {
        let role_names = |role| env.extras_with_role(role).map(|c| c.name.clone()).collect::<Vec<_>>();
        let mut names = role_names(ExtraRole::Base);
        match preset {
            Preset::RawSensors => {}
            Preset::Ours => names.extend(role_names(ExtraRole::Relevant)),
            Preset::OursX => {
                let deceptive = role_names(ExtraRole::Deceptive);
                if deceptive.is_empty() {
                    return Err(unavailable("the environment has no deceptive channel".into()));
                }
                names.extend(role_names(ExtraRole::Relevant));
                names.extend(deceptive);
            }
            other => {
                return Err(unavailable(format!(
                    "{other} needs an articulated environment"
                )))
            }
        }
        names
    };
    let channels = names
        .iter()
        .map(|n| registry.get(n).cloned())
        .collect::<Result<Vec<_>>>()?;
    ObservationSpace::new(preset.id(), channels, env.action_dim)
}

/// An ordered set of channels with an optional history.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSpace {
    pub name: String,
    pub channels: Vec<ChannelSpec>,
    pub history_len: usize,
    pub include_prev_actions: bool,
    pub action_dim: usize,
}

impl ObservationSpace {
    pub fn new(name: impl Into<String>, channels: Vec<ChannelSpec>, action_dim: usize) -> Result<Self> {
        let space = ObservationSpace {
            name: name.into(),
            channels,
            history_len: 1,
            include_prev_actions: false,
            action_dim,
        };
        space.check_unique()?;
        Ok(space)
    }

    fn check_unique(&self) -> Result<()> {
        for (i, c) in self.channels.iter().enumerate() {
            if self.channels[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::DuplicateChannel(c.name.clone()));
            }
        }
        Ok(())
    }

    /// Sum of channel dimensions: the length of one frame.
    pub fn frame_dim(&self) -> usize {
        self.channels.iter().map(|c| c.dim).sum()
    }

    pub fn total_dim(&self) -> usize {
        let prev = if self.include_prev_actions {
            (self.history_len - 1) * self.action_dim
        } else {
            0
        };
        self.history_len * self.frame_dim() + prev
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.name.clone()).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.channels.iter().any(|c| c.name == name)
    }

    pub fn channel(&self, name: &str) -> Result<&ChannelSpec> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }

    /// Offset of a channel inside one frame.
    pub fn frame_offset(&self, name: &str) -> Result<usize> {
        let mut offset = 0;
        for c in &self.channels {
            if c.name == name {
                return Ok(offset);
            }
            offset += c.dim;
        }
        Err(Error::UnknownChannel(name.to_string()))
    }

    /// Every index of `name` in a flattened observation (all history slots).
    pub fn observation_indices(&self, name: &str) -> Result<Vec<usize>> {
        let offset = self.frame_offset(name)?;
        let dim = self.channel(name)?.dim;
        let frame = self.frame_dim();
        Ok((0..self.history_len)
            .flat_map(|slot| (0..dim).map(move |d| slot * frame + offset + d))
            .collect())
    }

    pub fn augment_history(&self, n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidArgument("history length must be at least 1".into()));
        }
        let mut out = self.clone();
        out.history_len = n;
        out.include_prev_actions = n > 1;
        Ok(out)
    }

    /// Expands channel envelopes with the newest frame of an observation.
    /// Accepts a full observation (`total_dim`) or a single frame.
    pub fn update_ranges(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.total_dim() && values.len() != self.frame_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.total_dim(),
                got: values.len(),
            });
        }
        let mut offset = 0;
        for c in &mut self.channels {
            c.record(&values[offset..offset + c.dim]);
            offset += c.dim;
        }
        Ok(())
    }

    pub fn clear_ranges(&mut self) {
        self.channels.iter_mut().for_each(ChannelSpec::clear_range);
    }

    /// Union with extra channels; the result is sorted in registry order.
    /// Existing channels keep their recorded ranges.
    pub fn union(&self, extra: &[ChannelSpec], registry: &ChannelRegistry) -> Self {
        let mut out = self.clone();
        for c in extra {
            if !out.contains(&c.name) {
                let mut c = c.clone();
                c.clear_range();
                out.channels.push(c);
            }
        }
        out.sort_by_registry(registry);
        out
    }

    pub fn without(&self, names: &[String]) -> Self {
        let mut out = self.clone();
        out.channels.retain(|c| !names.contains(&c.name));
        out
    }

    pub fn sort_by_registry(&mut self, registry: &ChannelRegistry) {
        self.channels
            .sort_by_key(|c| registry.position(&c.name).unwrap_or(usize::MAX));
    }

    pub fn to_doc(&self) -> SpaceDoc {
        SpaceDoc {
            name: self.name.clone(),
            history_len: self.history_len,
            action_dim: self.action_dim,
            channels: self
                .channels
                .iter()
                .map(|c| ChannelDoc {
                    name: c.name.clone(),
                    group: c.group,
                    dim: c.dim,
                    range: c.range.clone(),
                })
                .collect(),
        }
    }

    pub fn from_doc(doc: SpaceDoc) -> Result<Self> {
        let channels = doc
            .channels
            .into_iter()
            .map(|d| {
                if d.dim == 0 || d.range.len() != d.dim {
                    return Err(Error::InvalidArgument(format!(
                        "channel `{}` has dim {} and {} ranges",
                        d.name,
                        d.dim,
                        d.range.len()
                    )));
                }
                let mut spec = ChannelSpec::new(ChannelKind::from_name(&d.name), d.dim);
                spec.group = d.group;
                spec.range = d.range;
                Ok(spec)
            })
            .collect::<Result<Vec<_>>>()?;
        if doc.history_len < 1 {
            return Err(Error::InvalidArgument("history_len must be at least 1".into()));
        }
        let space = ObservationSpace::new(doc.name, channels, doc.action_dim)?;
        space.augment_history(doc.history_len)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_doc(serde_json::from_str(text)?)
    }
}

/// Serialized form of an observation space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceDoc {
    pub name: String,
    pub history_len: usize,
    #[serde(default)]
    pub action_dim: usize,
    pub channels: Vec<ChannelDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelDoc {
    pub name: String,
    pub group: ChannelGroup,
    pub dim: usize,
    pub range: Vec<Option<ValueRange>>,
}

/// Reads one frame of `space` from a state.
pub fn extract_frame(state: &EnvState, space: &ObservationSpace, last_action: &[f64]) -> Result<Vec<f64>> {
    let zeros;
    let last_action = if last_action.is_empty() {
        zeros = vec![0.0; space.action_dim];
        &zeros[..]
    } else {
        last_action
    };
    let mut out = Vec::with_capacity(space.frame_dim());
    for c in &space.channels {
        c.extract(state, last_action, &mut out)?;
    }
    Ok(out)
}

/// Past frames and actions of the current episode, newest first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub frames: VecDeque<Vec<f64>>,
    pub actions: VecDeque<Vec<f64>>,
}

impl History {
    pub fn clear(&mut self) {
        self.frames.clear();
        self.actions.clear();
    }

    /// Records the frame observed at `t` and the action taken at `t`,
    /// keeping only what `space` needs.
    pub fn push(&mut self, space: &ObservationSpace, frame: Vec<f64>, action: Vec<f64>) {
        let keep_frames = space.history_len - 1;
        let keep_actions = keep_frames.max(1);
        self.frames.push_front(frame);
        self.actions.push_front(action);
        self.frames.truncate(keep_frames);
        self.actions.truncate(keep_actions);
    }
}

/// Flattens `state` and `history` into an observation vector of
/// `space.total_dim()` entries.
pub fn build_observation(state: &EnvState, space: &ObservationSpace, history: &History) -> Result<Vec<f64>> {
    let last = history.actions.front().map(Vec::as_slice).unwrap_or(&[]);
    let frame = extract_frame(state, space, last)?;
    Ok(assemble(frame, space, history))
}

fn assemble(frame: Vec<f64>, space: &ObservationSpace, history: &History) -> Vec<f64> {
    let fdim = space.frame_dim();
    let mut out = Vec::with_capacity(space.total_dim());
    out.extend(frame);
    for slot in 0..space.history_len - 1 {
        match history.frames.get(slot) {
            Some(f) => out.extend(f),
            None => out.extend(std::iter::repeat_n(0.0, fdim)),
        }
    }
    if space.include_prev_actions {
        for slot in 0..space.history_len - 1 {
            match history.actions.get(slot) {
                Some(a) => out.extend(a),
                None => out.extend(std::iter::repeat_n(0.0, space.action_dim)),
            }
        }
    }
    out
}

/// Per-episode observation pipeline for one space.
#[derive(Clone, Debug)]
pub struct ObservationBuilder {
    space: ObservationSpace,
    history: History,
}

/// Observation vector plus the newest frame it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct Observed {
    pub vector: Vec<f64>,
    pub frame: Vec<f64>,
}

impl ObservationBuilder {
    pub fn new(space: ObservationSpace) -> Self {
        ObservationBuilder {
            space,
            history: History::default(),
        }
    }

    pub fn space(&self) -> &ObservationSpace {
        &self.space
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }

    pub fn observe(&self, state: &EnvState) -> Result<Observed> {
        let last = self.history.actions.front().map(Vec::as_slice).unwrap_or(&[]);
        let frame = extract_frame(state, &self.space, last)?;
        let vector = assemble(frame.clone(), &self.space, &self.history);
        Ok(Observed { vector, frame })
    }

    /// Like [`observe`](Self::observe), letting `edit` rewrite the newest
    /// frame before it is assembled.
    pub fn observe_with(&self, state: &EnvState, edit: impl FnOnce(&mut [f64])) -> Result<Observed> {
        let last = self.history.actions.front().map(Vec::as_slice).unwrap_or(&[]);
        let mut frame = extract_frame(state, &self.space, last)?;
        edit(&mut frame);
        let vector = assemble(frame.clone(), &self.space, &self.history);
        Ok(Observed { vector, frame })
    }

    pub fn record(&mut self, frame: Vec<f64>, action: Vec<f64>) {
        self.history.push(&self.space, frame, action);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_env, Env, PlanarHopper};

    fn hopper() -> EnvSpec {
        PlanarHopper::default().spec().clone()
    }

    fn dims(space: &ObservationSpace) -> Vec<(String, usize)> {
        space.channels.iter().map(|c| (c.name.clone(), c.dim)).collect()
    }

    #[test]
    fn raw_sensor_preset_on_hopper() {
        let rs = preset("RS", &hopper()).unwrap();
        let want = [("q_jt", 3), ("qdot_jt", 3), ("theta", 1), ("theta_dot", 1), ("Cddot_1", 2)];
        assert_eq!(dims(&rs), want.map(|(n, d)| (n.to_string(), d)).to_vec());
        assert_eq!(rs.total_dim(), 10);
    }

    #[test]
    fn ours_adds_height_and_root_velocity() {
        let ours = preset("Ours", &hopper()).unwrap();
        assert_eq!(ours.total_dim(), 13);
        assert!(ours.contains("z") && ours.contains("Cdot_1"));
    }

    #[test]
    fn maximal_coordinates_dimension() {
        assert_eq!(preset("MC", &hopper()).unwrap().total_dim(), 4 * (2 + 2 + 1));
    }

    #[test]
    fn contacts_rejected_without_sensors() {
        let pend = make_env("cart-double-pendulum").unwrap();
        let err = preset("RS+C", pend.spec()).unwrap_err();
        assert!(err.to_string().contains("no contact sensors"), "{err}");
        assert!(matches!(preset("XYZ", pend.spec()), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn history_dimensions() {
        let rs = preset("RS", &hopper()).unwrap();
        assert_eq!(rs.augment_history(1).unwrap(), rs);
        let two = rs.augment_history(2).unwrap();
        assert_eq!(two.total_dim(), 23);
        assert_eq!(two.augment_history(1).unwrap().total_dim(), 10);
        assert!(rs.augment_history(0).is_err());
    }

    #[test]
    fn ranges_track_envelope() {
        let mut spec = hopper();
        spec.extra_channels.push(crate::envs::ExtraChannel {
            name: "probe".into(),
            dim: 1,
            role: ExtraRole::Base,
        });
        let reg = ChannelRegistry::for_env(&spec);
        let mut space = ObservationSpace::new("p", vec![reg.get("probe").unwrap().clone()], 3).unwrap();
        space.update_ranges(&[0.5]).unwrap();
        space.update_ranges(&[-1.0]).unwrap();
        assert_eq!(space.channels[0].range[0], Some(ValueRange { min: -1.0, max: 0.5 }));
        space.update_ranges(&[0.0]).unwrap();
        assert_eq!(space.channels[0].range[0], Some(ValueRange { min: -1.0, max: 0.5 }));
        assert!(space.update_ranges(&[0.0, 1.0]).is_err());

        let mut constant = space.clone();
        constant.clear_ranges();
        constant.update_ranges(&[2.5]).unwrap();
        constant.update_ranges(&[2.5]).unwrap();
        let mut rng = rand::rng();
        assert_eq!(constant.channels[0].sample_uniform(&mut rng), vec![2.5]);
    }

    #[test]
    fn history_padding_and_layout() {
        let mut env = PlanarHopper::default();
        let state = env.reset(0);
        let space = preset("Ours", env.spec()).unwrap().augment_history(2).unwrap();
        assert_eq!(space.total_dim(), 13 * 2 + 3);
        let mut builder = ObservationBuilder::new(space.clone());
        let first = builder.observe(&state).unwrap();
        assert_eq!(first.vector.len(), 29);
        assert_eq!(&first.vector[..13], &first.frame[..]);
        assert!(first.vector[13..].iter().all(|&v| v == 0.0));
        builder.record(first.frame.clone(), vec![0.1, 0.2, 0.3]);
        let tr = env.step(&[0.1, 0.2, 0.3]);
        let second = builder.observe(&tr.next_state).unwrap();
        assert_eq!(&second.vector[13..26], &first.frame[..]);
        assert_eq!(&second.vector[26..], &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn missing_channel_is_an_error() {
        let space = preset("RS", &hopper()).unwrap();
        let diag = make_env("diagnostic").unwrap();
        let err = build_observation(diag.state(), &space, &History::default()).unwrap_err();
        assert!(matches!(err, Error::MissingChannel(_)), "{err}");
    }

    #[test]
    fn json_round_trip_keeps_ranges() {
        let mut space = preset("Ours", &hopper()).unwrap().augment_history(2).unwrap();
        let frame: Vec<f64> = (0..13).map(|i| i as f64 * 0.5 - 2.0).collect();
        space.update_ranges(&frame).unwrap();
        let text = space.to_json().unwrap();
        let back = ObservationSpace::from_json(&text).unwrap();
        assert_eq!(back, space);
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc["channels"][0]["group"], "joint-position");
        assert_eq!(doc["channels"][0]["range"][0][0], -2.0);
    }

    #[test]
    fn diagnostic_presets() {
        let env = make_env("diagnostic").unwrap();
        let rs = preset("RS", env.spec()).unwrap();
        assert_eq!(rs.channel_names(), ["core_rate"]);
        let ours = preset("Ours", env.spec()).unwrap();
        assert_eq!(ours.channel_names(), ["core_rate", "signal_1", "signal_2"]);
        let ox = preset("Ours+x", env.spec()).unwrap();
        assert_eq!(ox.channel_names(), ["core_rate", "signal_1", "signal_2", "deceptive"]);
        assert!(preset("GC", env.spec()).is_err());
        let clean = make_env("diagnostic-clean").unwrap();
        assert!(preset("Ours+x", clean.spec()).is_err());
    }

    #[test]
    fn groups_partition_candidates() {
        for id in ["planar-hopper", "cart-double-pendulum", "diagnostic"] {
            let env = make_env(id).unwrap();
            let groups = default_groups(env.spec());
            let mut all: Vec<&String> = groups.iter().flat_map(|g| &g.members).collect();
            let n = all.len();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), n, "{id}: groups overlap");
            assert!(groups.iter().all(|g| !g.members.is_empty()));
        }
        let pend = make_env("cart-double-pendulum").unwrap();
        let names: Vec<_> = default_groups(pend.spec()).into_iter().map(|g| g.name).collect();
        assert_eq!(names, ["C_1", "Cdot_1", "cartesian", "prev-action"]);
    }
}
