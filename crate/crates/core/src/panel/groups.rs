use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CountryCode, Panel, PanelError, SINGAPORE};

/// Country group membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    Asean,
    Oecd,
    Row,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Asean, Group::Oecd, Group::Row];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Asean => "ASEAN",
            Group::Oecd => "OECD",
            Group::Row => "ROW",
        }
    }
}

impl FromStr for Group {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ASEAN" => Ok(Group::Asean),
            "OECD" => Ok(Group::Oecd),
            "ROW" => Ok(Group::Row),
            other => Err(other.to_string()),
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reporter bucket used for distance interactions: a membership group or
/// the residual bucket of excluded reporters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bucket {
    Group(Group),
    Excluded,
}

impl Bucket {
    pub fn label(self) -> &'static str {
        match self {
            Bucket::Group(g) => g.as_str(),
            Bucket::Excluded => "EXCLUDED",
        }
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Where excluded reporters go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ExcludedBucket {
    /// A shared residual bucket with its own, unreported, interaction.
    #[default]
    Separate,
    /// Folded into the rest-of-world bucket.
    Row,
}

/// One line of a membership file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MembershipEntry {
    pub country: CountryCode,
    pub group: Group,
    pub exclude: bool,
}

/// Total map from reporters to buckets plus the raw membership used to
/// classify counterparties.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    membership: BTreeMap<CountryCode, Group>,
    excluded: BTreeSet<CountryCode>,
    excluded_bucket: ExcludedBucket,
}

impl GroupAssignment {
    /// Builds an assignment covering every reporter of `panel`.
    pub fn new(
        panel: &Panel,
        membership: impl IntoIterator<Item = (CountryCode, Group)>,
        excluded: impl IntoIterator<Item = CountryCode>,
        excluded_bucket: ExcludedBucket,
    ) -> Result<Self, PanelError> {
        let membership: BTreeMap<_, _> = membership.into_iter().collect();
        if let Some(code) = panel.reporters().into_iter().find(|r| !membership.contains_key(r)) {
            return Err(PanelError::UnassignedReporter(code));
        }
        Ok(GroupAssignment { membership, excluded: excluded.into_iter().collect(), excluded_bucket })
    }

    /// Same membership with additional excluded reporters.
    pub fn excluding(mut self, codes: impl IntoIterator<Item = CountryCode>) -> Self {
        self.excluded.extend(codes);
        self
    }

    pub fn with_excluded_bucket(mut self, bucket: ExcludedBucket) -> Self {
        self.excluded_bucket = bucket;
        self
    }

    /// Distance-interaction bucket of a reporter.
    pub fn bucket_of(&self, reporter: CountryCode) -> Option<Bucket> {
        let group = *self.membership.get(&reporter)?;
        if self.excluded.contains(&reporter) {
            return Some(match self.excluded_bucket {
                ExcludedBucket::Separate => Bucket::Excluded,
                ExcludedBucket::Row => Bucket::Group(Group::Row),
            });
        }
        Some(Bucket::Group(group))
    }

    /// Membership irrespective of exclusions; unlisted countries are ROW.
    pub fn membership_of(&self, country: CountryCode) -> Group {
        self.membership.get(&country).copied().unwrap_or(Group::Row)
    }

    pub fn membership(&self) -> &BTreeMap<CountryCode, Group> {
        &self.membership
    }

    pub fn is_excluded(&self, country: CountryCode) -> bool {
        self.excluded.contains(&country)
    }

    pub fn excluded(&self) -> &BTreeSet<CountryCode> {
        &self.excluded
    }

    pub fn excluded_bucket(&self) -> ExcludedBucket {
        self.excluded_bucket
    }

    /// Countries whose reporter bucket is `bucket`.
    pub fn members(&self, bucket: Bucket) -> BTreeSet<CountryCode> {
        self.membership.keys().filter(|&&c| self.bucket_of(c) == Some(bucket)).copied().collect()
    }
}

/// Assigns groups to every reporter. With `exclude_singapore`, SGP is moved
/// out of ASEAN into the separate residual bucket.
pub fn assign_groups(
    panel: &Panel,
    membership: &[(CountryCode, Group)],
    exclude_singapore: bool,
) -> Result<GroupAssignment, PanelError> {
    let excluded = exclude_singapore.then_some(SINGAPORE);
    GroupAssignment::new(panel, membership.iter().copied(), excluded, ExcludedBucket::Separate)
}

/// Reads a `country,group` file with an optional `exclude` column
/// (`1`/`true` marks the reporter as excluded).
pub fn read_membership<R: Read>(source: R) -> Result<Vec<MembershipEntry>, PanelError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let country_col = col("country").ok_or_else(|| PanelError::MissingColumn("country".into()))?;
    let group_col = col("group").ok_or_else(|| PanelError::MissingColumn("group".into()))?;
    let exclude_col = col("exclude");

    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let raw = record.get(country_col).unwrap_or("").trim();
        let country = CountryCode::new(raw).map_err(|_| PanelError::UnknownCountry { line, code: raw.into() })?;
        let label = record.get(group_col).unwrap_or("").trim();
        let group: Group = label.parse().map_err(|_| PanelError::UnknownGroup { line, label: label.into() })?;
        let exclude = match exclude_col.and_then(|c| record.get(c)).map(str::trim) {
            None | Some("") | Some("0") => false,
            Some(v) if v.eq_ignore_ascii_case("false") => false,
            Some("1") => true,
            Some(v) if v.eq_ignore_ascii_case("true") => true,
            Some(v) => return Err(PanelError::MalformedRow { line, reason: format!("bad exclude flag {v:?}") }),
        };
        if !seen.insert(country) {
            return Err(PanelError::DuplicateMembership { line, code: country });
        }
        out.push(MembershipEntry { country, group, exclude });
    }
    Ok(out)
}
