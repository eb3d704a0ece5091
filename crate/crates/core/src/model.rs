//! Shared domain types: the anatomy label schema, label rasters, cohort
//! records with their protected attributes, and the audit configuration.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while constructing or validating model types.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid label code {code} at pixel {index}")]
    InvalidLabel { code: u8, index: usize },
    #[error("mask data has {actual} pixels, expected {width}x{height} = {expected}")]
    DimensionMismatch {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("mask dimensions must be at least 1x1, got {width}x{height}")]
    ZeroSize { width: usize, height: usize },
    #[error("invalid record id {0:?}: expected [A-Za-z0-9_-]+")]
    InvalidId(String),
    #[error("{value:?} is not a level of attribute {attribute}")]
    UnknownLevel {
        attribute: GroupingAttribute,
        value: String,
    },
    #[error("iou pass threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
}

/// Anatomy class stored in a label raster. Codes are fixed: 0 is background
/// and 1..=4 are the foreground bones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum ClassLabel {
    Background = 0,
    Femur = 1,
    Tibia = 2,
    Fibula = 3,
    Patella = 4,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 5] = [
        ClassLabel::Background,
        ClassLabel::Femur,
        ClassLabel::Tibia,
        ClassLabel::Fibula,
        ClassLabel::Patella,
    ];

    /// The classes that take part in mean IoU / Dice.
    pub const FOREGROUND: [ClassLabel; 4] = [
        ClassLabel::Femur,
        ClassLabel::Tibia,
        ClassLabel::Fibula,
        ClassLabel::Patella,
    ];

    pub const fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Background => "background",
            ClassLabel::Femur => "femur",
            ClassLabel::Tibia => "tibia",
            ClassLabel::Fibula => "fibula",
            ClassLabel::Patella => "patella",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Number of distinct label codes.
pub const NUM_CLASSES: usize = ClassLabel::ALL.len();

/// A row-major 2D raster of class codes. Every pixel holds a valid
/// [`ClassLabel`] code; construction goes through [`validate_mask`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ModelError> {
        validate_mask(width, height, data)
    }

    /// A mask filled with a single class.
    pub fn filled(width: usize, height: usize, label: ClassLabel) -> Result<Self, ModelError> {
        validate_mask(width, height, vec![label.code(); width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> Option<ClassLabel> {
        if x >= self.width || y >= self.height {
            return None;
        }
        ClassLabel::from_code(self.data[y * self.width + x])
    }

    pub fn same_dims(&self, other: &LabelMask) -> bool {
        self.dims() == other.dims()
    }
}

/// Checks raw raster data and wraps it as a [`LabelMask`]. Validating the
/// parts of an already valid mask returns an identical mask.
pub fn validate_mask(width: usize, height: usize, data: Vec<u8>) -> Result<LabelMask, ModelError> {
    if width == 0 || height == 0 {
        return Err(ModelError::ZeroSize { width, height });
    }
    let expected = width
        .checked_mul(height)
        .ok_or(ModelError::ZeroSize { width, height })?;
    if data.len() != expected {
        return Err(ModelError::DimensionMismatch {
            width,
            height,
            expected,
            actual: data.len(),
        });
    }
    if let Some((index, &code)) = data
        .iter()
        .enumerate()
        .find(|(_, &c)| usize::from(c) >= NUM_CLASSES)
    {
        return Err(ModelError::InvalidLabel { code, index });
    }
    Ok(LabelMask {
        width,
        height,
        data,
    })
}

/// The set of classes that occur at least once in `mask`.
pub fn classes_present(mask: &LabelMask) -> BTreeSet<ClassLabel> {
    let mut seen = [false; NUM_CLASSES];
    for &code in mask.data() {
        seen[usize::from(code)] = true;
    }
    ClassLabel::ALL
        .into_iter()
        .filter(|c| seen[usize::from(c.code())])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub const ALL: [Sex; 2] = [Sex::Male, Sex::Female];

    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "Male",
            Sex::Female => "Female",
        }
    }

    /// Metadata CSV code (`M` / `F`).
    pub fn code(self) -> &'static str {
        match self {
            Sex::Male => "M",
            Sex::Female => "F",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "M" => Some(Sex::Male),
            "F" => Some(Sex::Female),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Race {
    WhiteOrCaucasian,
    BlackOrAfricanAmerican,
}

impl Race {
    pub const ALL: [Race; 2] = [Race::WhiteOrCaucasian, Race::BlackOrAfricanAmerican];

    pub fn as_str(self) -> &'static str {
        match self {
            Race::WhiteOrCaucasian => "WhiteOrCaucasian",
            Race::BlackOrAfricanAmerican => "BlackOrAfricanAmerican",
        }
    }

    /// Metadata CSV code (`WC` / `BAA`).
    pub fn code(self) -> &'static str {
        match self {
            Race::WhiteOrCaucasian => "WC",
            Race::BlackOrAfricanAmerican => "BAA",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "WC" => Some(Race::WhiteOrCaucasian),
            "BAA" => Some(Race::BlackOrAfricanAmerican),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for Split {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(()),
        }
    }
}

/// Returns true when `id` is usable as a mask filename stem.
pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

/// One patient: identifier plus protected attributes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CohortRecord {
    pub id: String,
    pub sex: Sex,
    pub race: Race,
    pub split: Option<Split>,
}

impl CohortRecord {
    pub fn new(id: impl Into<String>, sex: Sex, race: Race) -> Result<Self, ModelError> {
        let id = id.into();
        if !is_valid_id(&id) {
            return Err(ModelError::InvalidId(id));
        }
        Ok(Self {
            id,
            sex,
            race,
            split: None,
        })
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = Some(split);
        self
    }

    /// Index of this record's level in `attribute`'s canonical order.
    pub fn level_index(&self, attribute: GroupingAttribute) -> usize {
        match attribute {
            GroupingAttribute::Sex => self.sex as usize,
            GroupingAttribute::Race => self.race as usize,
            GroupingAttribute::SexByRace => self.sex as usize * Race::ALL.len() + self.race as usize,
        }
    }

    pub fn group_key(&self, attribute: GroupingAttribute) -> GroupKey {
        GroupKey {
            attribute,
            value: attribute.levels()[self.level_index(attribute)].to_string(),
        }
    }
}

/// Which protected attribute a report or plan groups by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GroupingAttribute {
    Sex,
    Race,
    SexByRace,
}

const SEX_LEVELS: [&str; 2] = ["Male", "Female"];
const RACE_LEVELS: [&str; 2] = ["WhiteOrCaucasian", "BlackOrAfricanAmerican"];
const SEX_BY_RACE_LEVELS: [&str; 4] = [
    "Male|WhiteOrCaucasian",
    "Male|BlackOrAfricanAmerican",
    "Female|WhiteOrCaucasian",
    "Female|BlackOrAfricanAmerican",
];

impl GroupingAttribute {
    /// Legal levels in canonical order. Report columns and plan groups
    /// follow this order.
    pub fn levels(self) -> &'static [&'static str] {
        match self {
            GroupingAttribute::Sex => &SEX_LEVELS,
            GroupingAttribute::Race => &RACE_LEVELS,
            GroupingAttribute::SexByRace => &SEX_BY_RACE_LEVELS,
        }
    }

    pub fn level_index(self, value: &str) -> Option<usize> {
        self.levels().iter().position(|l| *l == value)
    }

    /// Human-facing attribute name used in rendered reports.
    pub fn display_name(self) -> &'static str {
        match self {
            GroupingAttribute::Sex => "gender",
            GroupingAttribute::Race => "race",
            GroupingAttribute::SexByRace => "gender x race",
        }
    }
}

impl fmt::Display for GroupingAttribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupingAttribute::Sex => "sex",
            GroupingAttribute::Race => "race",
            GroupingAttribute::SexByRace => "sexrace",
        })
    }
}

impl FromStr for GroupingAttribute {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sex" => Ok(GroupingAttribute::Sex),
            "race" => Ok(GroupingAttribute::Race),
            "sexrace" => Ok(GroupingAttribute::SexByRace),
            other => Err(format!("unknown grouping attribute {other:?}")),
        }
    }
}

/// One level of a protected attribute, e.g. `(Sex, "Female")`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub attribute: GroupingAttribute,
    pub value: String,
}

impl GroupKey {
    pub fn new(attribute: GroupingAttribute, value: impl Into<String>) -> Result<Self, ModelError> {
        let value = value.into();
        if attribute.level_index(&value).is_none() {
            return Err(ModelError::UnknownLevel { attribute, value });
        }
        Ok(Self { attribute, value })
    }

    pub fn level_index(&self) -> usize {
        self.attribute
            .level_index(&self.value)
            .expect("GroupKey holds a legal level")
    }

    /// Sex and race implied by this key. Attributes the key does not fix are
    /// returned as `None`.
    pub fn attributes(&self) -> (Option<Sex>, Option<Race>) {
        let idx = self.level_index();
        match self.attribute {
            GroupingAttribute::Sex => (Some(Sex::ALL[idx]), None),
            GroupingAttribute::Race => (None, Some(Race::ALL[idx])),
            GroupingAttribute::SexByRace => (
                Some(Sex::ALL[idx / Race::ALL.len()]),
                Some(Race::ALL[idx % Race::ALL.len()]),
            ),
        }
    }

    /// Column label used in Markdown tables.
    pub fn display_label(&self) -> String {
        self.value
            .split('|')
            .map(|part| match part {
                "WhiteOrCaucasian" => "White/Caucasian",
                "BlackOrAfricanAmerican" => "Black/African American",
                other => other,
            })
            .collect::<Vec<_>>()
            .join(" / ")
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdMode {
    /// Divisor G - 1.
    #[default]
    Sample,
    /// Divisor G.
    Population,
}

/// How classes missing from both masks enter the per-image mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassExclusion {
    #[default]
    ExcludeAbsentInBoth,
    CountAbsentAsOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub iou_pass_threshold: f64,
    pub grouping: GroupingAttribute,
    pub sd_mode: SdMode,
    pub class_exclusion: ClassExclusion,
}

impl AuditConfig {
    pub const DEFAULT_IOU_PASS_THRESHOLD: f64 = 0.5;

    pub fn new(grouping: GroupingAttribute) -> Self {
        Self {
            iou_pass_threshold: Self::DEFAULT_IOU_PASS_THRESHOLD,
            grouping,
            sd_mode: SdMode::default(),
            class_exclusion: ClassExclusion::default(),
        }
    }

    pub fn with_threshold(mut self, tau: f64) -> Result<Self, ModelError> {
        check_threshold(tau)?;
        self.iou_pass_threshold = tau;
        Ok(self)
    }

    pub fn with_sd_mode(mut self, mode: SdMode) -> Self {
        self.sd_mode = mode;
        self
    }

    pub fn with_class_exclusion(mut self, exclusion: ClassExclusion) -> Self {
        self.class_exclusion = exclusion;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check_threshold(self.iou_pass_threshold)
    }
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self::new(GroupingAttribute::Sex)
    }
}

pub(crate) fn check_threshold(tau: f64) -> Result<(), ModelError> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidThreshold(tau))
    }
}
