//! Event ingestion: CAMEO-coded records to model-ready event tuples.
//!
//! A raw record carries a top-level CAMEO action category, actor and target
//! codes, casualty annotations, a location and a date. Ingestion maps actors
//! onto four coarse classes, turns the action category into an inverted,
//! rescaled Goldstein value in (0, 1) and sums fatalities and wounded into a
//! single casualty count.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower/upper clamp applied to rescaled predicates; the Beta support is open.
pub const PREDICATE_FLOOR: f64 = 1e-3;
pub const PREDICATE_CEIL: f64 = 1.0 - 1e-3;

/// The four coarse actor classes used for subjects and objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActorClass {
    Civilian,
    Military,
    Governmental,
    Political,
}

impl ActorClass {
    pub const ALL: [ActorClass; 4] = [
        ActorClass::Civilian,
        ActorClass::Military,
        ActorClass::Governmental,
        ActorClass::Political,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActorClass::Civilian => "civilian",
            ActorClass::Military => "military",
            ActorClass::Governmental => "governmental",
            ActorClass::Political => "political",
        }
    }
}

impl fmt::Display for ActorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActorClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "civilian" => Ok(ActorClass::Civilian),
            "military" => Ok(ActorClass::Military),
            "governmental" | "government" => Ok(ActorClass::Governmental),
            "political" => Ok(ActorClass::Political),
            other => Err(Error::Domain(format!("unknown actor class {other:?}"))),
        }
    }
}

/// Calendar month, ordered chronologically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    year: i32,
    month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Domain(format!("month {month} outside 1..=12")));
        }
        Ok(Self { year, month })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u32 {
        self.month
    }

    /// Months elapsed since January of year 0.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        let year = ordinal.div_euclid(12) as i32;
        let month = ordinal.rem_euclid(12) as u32 + 1;
        Self { year, month }
    }

    pub fn succ(self) -> Self {
        Self::from_ordinal(self.ordinal() + 1)
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Domain(format!("cannot parse year-month from {s:?}"));
        let (y, m) = s.split_once(['-', '/']).ok_or_else(bad)?;
        let m = m.split(['-', '/']).next().ok_or_else(bad)?;
        YearMonth::new(y.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One row of a CAMEO-coded event export, before any mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEventRecord {
    pub action_code: u8,
    pub actor_code: String,
    /// Secondary actor code column, consulted when `actor_code` does not map.
    pub actor_fallback: Option<String>,
    pub target_code: String,
    pub target_fallback: Option<String>,
    pub fatalities: u64,
    pub wounded: u64,
    pub location: String,
    pub date: NaiveDate,
}

/// A coded event: who did what to whom, with how many casualties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTuple {
    pub subject: ActorClass,
    pub predicate: f64,
    pub quantifier: u64,
    pub object: ActorClass,
    pub location: String,
    pub month: YearMonth,
}

/// CAMEO actor type code to coarse actor class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActorClassMap {
    entries: BTreeMap<String, ActorClass>,
}

const STANDARD_ACTORS: [(&str, ActorClass); 35] = {
    use ActorClass::*;
    [
        ("REB", Military),
        ("MIL", Military),
        ("GOV", Governmental),
        ("ETH", Civilian),
        ("REL", Civilian),
        ("COP", Military),
        ("JUD", Political),
        ("OPP", Political),
        ("LLY", Governmental),
        ("ACT", Political),
        ("NON", Military),
        ("SPY", Military),
        ("UAF", Military),
        ("UNS", Civilian),
        ("NGO", Political),
        ("BUS", Civilian),
        ("CVL", Civilian),
        ("IND", Civilian),
        ("EDU", Civilian),
        ("STU", Civilian),
        ("YTH", Civilian),
        ("ELI", Civilian),
        ("LAB", Civilian),
        ("LEG", Political),
        ("PTY", Political),
        ("MED", Civilian),
        ("REF", Civilian),
        ("IGO", Political),
        ("NGM", Political),
        ("MNC", Civilian),
        ("INT", Political),
        ("TOP", Political),
        ("MID", Political),
        ("HAR", Political),
        ("MOD", Political),
    ]
};

impl ActorClassMap {
    /// The built-in generic CAMEO actor type table.
    pub fn standard() -> Self {
        Self {
            entries: STANDARD_ACTORS
                .iter()
                .map(|&(code, class)| (code.to_string(), class))
                .collect(),
        }
    }

    pub fn new(entries: BTreeMap<String, ActorClass>) -> Self {
        let entries = entries
            .into_iter()
            .map(|(k, v)| (k.trim().to_ascii_uppercase(), v))
            .collect();
        Self { entries }
    }

    pub fn get(&self, code: &str) -> Option<ActorClass> {
        self.entries.get(code).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ActorClass)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// CAMEO top-level action category to raw Goldstein value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GoldsteinMap {
    entries: BTreeMap<u8, f64>,
}

const STANDARD_GOLDSTEIN: [(u8, f64); 20] = [
    (1, 0.0),
    (2, 3.0),
    (3, 4.0),
    (4, 1.0),
    (5, 3.5),
    (6, 6.0),
    (7, 7.0),
    (8, 5.0),
    (9, -2.0),
    (10, -5.0),
    (11, -2.0),
    (12, -4.0),
    (13, -6.0),
    (14, -6.5),
    (15, -7.2),
    (16, -4.0),
    (17, -7.0),
    (18, -9.0),
    (19, -10.0),
    (20, -10.0),
];

impl GoldsteinMap {
    pub fn standard() -> Self {
        Self {
            entries: STANDARD_GOLDSTEIN.iter().copied().collect(),
        }
    }

    pub fn new(entries: BTreeMap<u8, f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("Goldstein table is empty".into()));
        }
        if entries.values().any(|v| !v.is_finite()) {
            return Err(Error::Config("Goldstein table has non-finite values".into()));
        }
        let map = Self { entries };
        let (lo, hi) = map.extrema();
        if hi <= lo {
            return Err(Error::Config("Goldstein table values are all equal".into()));
        }
        Ok(map)
    }

    pub fn get(&self, code: u8) -> Option<f64> {
        self.entries.get(&code).copied()
    }

    pub fn contains(&self, code: u8) -> bool {
        self.entries.contains_key(&code)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Minimum and maximum raw value in the table.
    pub fn extrema(&self) -> (f64, f64) {
        self.entries
            .values()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = (u8, f64)> + '_ {
        self.entries.iter().map(|(k, v)| (*k, *v))
    }
}

/// Both lookup tables; a JSON override file may replace either one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingTables {
    pub actors: ActorClassMap,
    pub goldstein: GoldsteinMap,
}

impl Default for MappingTables {
    fn default() -> Self {
        Self {
            actors: ActorClassMap::standard(),
            goldstein: GoldsteinMap::standard(),
        }
    }
}

#[derive(Deserialize)]
struct MappingOverride {
    actors: Option<BTreeMap<String, ActorClass>>,
    goldstein: Option<BTreeMap<u8, f64>>,
}

impl MappingTables {
    /// Reads `{"actors": {...}, "goldstein": {...}}`; missing keys keep the built-in table.
    pub fn from_json<R: Read>(reader: R) -> Result<Self> {
        let o: MappingOverride = serde_json::from_reader(reader)?;
        let mut tables = Self::default();
        if let Some(actors) = o.actors {
            tables.actors = ActorClassMap::new(actors);
        }
        if let Some(g) = o.goldstein {
            tables.goldstein = GoldsteinMap::new(g)?;
        }
        Ok(tables)
    }
}

/// Maps a CAMEO actor string onto its class.
///
/// The leading three characters are looked up first; for six-character
/// composite codes the second triple is tried next.
pub fn map_actor(code: &str, table: &ActorClassMap) -> Result<ActorClass> {
    let code = code.trim().to_ascii_uppercase();
    if code.len() < 3 || !code.is_ascii() {
        return Err(Error::UnmappableActor(code));
    }
    if let Some(class) = table.get(&code[..3]) {
        return Ok(class);
    }
    if code.len() >= 6 {
        if let Some(class) = table.get(&code[3..6]) {
            return Ok(class);
        }
    }
    table.get(&code).ok_or(Error::UnmappableActor(code))
}

/// Rescaled and inverted Goldstein value: 1 is most conflictual.
pub fn goldstein_to_predicate(action_code: i64, table: &GoldsteinMap) -> Result<f64> {
    let code = u8::try_from(action_code).map_err(|_| Error::UnknownAction(action_code))?;
    let g = table.get(code).ok_or(Error::UnknownAction(action_code))?;
    let (lo, hi) = table.extrema();
    let p = 1.0 - (g - lo) / (hi - lo);
    Ok(p.clamp(PREDICATE_FLOOR, PREDICATE_CEIL))
}

fn map_with_fallback(primary: &str, fallback: Option<&str>, table: &ActorClassMap) -> Result<ActorClass> {
    match map_actor(primary, table) {
        Ok(c) => Ok(c),
        Err(e) => match fallback {
            Some(f) if !f.trim().is_empty() => map_actor(f, table),
            _ => Err(e),
        },
    }
}

pub fn make_tuple(record: &RawEventRecord, tables: &MappingTables) -> Result<EventTuple> {
    let subject = map_with_fallback(&record.actor_code, record.actor_fallback.as_deref(), &tables.actors)?;
    let object = map_with_fallback(&record.target_code, record.target_fallback.as_deref(), &tables.actors)?;
    let predicate = goldstein_to_predicate(record.action_code as i64, &tables.goldstein)?;
    let quantifier = record
        .fatalities
        .checked_add(record.wounded)
        .ok_or_else(|| Error::Domain("casualty count overflow".into()))?;
    Ok(EventTuple {
        subject,
        predicate,
        quantifier,
        object,
        location: record.location.clone(),
        month: YearMonth::new(record.date.year(), record.date.month())?,
    })
}

/// Names of the input columns. Actor and target accept several columns,
/// consulted in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub action: String,
    pub actor: Vec<String>,
    pub target: Vec<String>,
    pub fatalities: String,
    pub wounded: String,
    pub location: String,
    pub date: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            action: "verb10".into(),
            actor: vec!["actor3".into(), "actor6".into()],
            target: vec!["target3".into(), "target6".into()],
            fatalities: "fatalities".into(),
            wounded: "wounded".into(),
            location: "location".into(),
            date: "date".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    UnscoredCategory,
    UnmappableActor,
    MalformedAction,
    MalformedCasualties,
    MalformedDate,
    MissingLocation,
    MalformedRow,
}

impl SkipReason {
    pub fn describe(self) -> &'static str {
        match self {
            SkipReason::UnscoredCategory => "unscored category",
            SkipReason::UnmappableActor => "unmappable actor",
            SkipReason::MalformedAction => "malformed action code",
            SkipReason::MalformedCasualties => "malformed casualty count",
            SkipReason::MalformedDate => "malformed date",
            SkipReason::MissingLocation => "missing location",
            SkipReason::MalformedRow => "malformed row",
        }
    }
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.describe())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRow {
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub rows_read: usize,
    pub skipped: Vec<SkippedRow>,
    /// Rows whose casualty columns were blank and were read as zero.
    pub missing_casualties: usize,
}

impl SkipReport {
    pub fn skip(&mut self, row: usize, reason: SkipReason) {
        self.skipped.push(SkippedRow { row, reason });
    }

    pub fn counts(&self) -> BTreeMap<SkipReason, usize> {
        let mut out = BTreeMap::new();
        for s in &self.skipped {
            *out.entry(s.reason).or_default() += 1;
        }
        out
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Config(format!("input is missing mapped column {name:?}")))
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    for fmt in ["%Y-%m-%d", "%Y/%m/%d", "%Y%m%d", "%d/%m/%Y", "%m/%d/%Y"] {
        if let Ok(d) = NaiveDate::parse_from_str(s, fmt) {
            return Some(d);
        }
    }
    for fmt in ["%Y-%m", "%Y/%m"] {
        if let Ok(d) = NaiveDate::parse_from_str(&format!("{s}-01"), &format!("{fmt}-%d")) {
            return Some(d);
        }
    }
    None
}

enum Casualty {
    Value(u64),
    Missing,
}

fn parse_casualty(s: &str) -> Option<Casualty> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s == "." {
        return Some(Casualty::Missing);
    }
    let v: f64 = s.parse().ok()?;
    if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
        return None;
    }
    Some(Casualty::Value(v as u64))
}

fn parse_action(s: &str) -> std::result::Result<u8, SkipReason> {
    let v: f64 = s.trim().parse().map_err(|_| SkipReason::MalformedAction)?;
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(SkipReason::MalformedAction);
    }
    if !(1.0..=20.0).contains(&v) {
        return Err(SkipReason::UnscoredCategory);
    }
    Ok(v as u8)
}

/// Parses a CAMEO-coded CSV export into raw records, skipping rows that
/// cannot be used and recording why.
pub fn load_raw<R: Read>(source: R, columns: &ColumnMap) -> Result<(Vec<RawEventRecord>, SkipReport)> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let headers = reader.headers()?.clone();
    if columns.actor.is_empty() || columns.target.is_empty() {
        return Err(Error::Config("actor and target need at least one column".into()));
    }
    let action = column_index(&headers, &columns.action)?;
    let actors = columns
        .actor
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>>>()?;
    let targets = columns
        .target
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>>>()?;
    let fatal = column_index(&headers, &columns.fatalities)?;
    let wounded = column_index(&headers, &columns.wounded)?;
    let location = column_index(&headers, &columns.location)?;
    let date = column_index(&headers, &columns.date)?;

    let mut records = Vec::new();
    let mut report = SkipReport::default();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        report.rows_read += 1;
        let row = match row {
            Ok(r) => r,
            Err(_) => {
                report.skip(row_no, SkipReason::MalformedRow);
                continue;
            }
        };
        let field = |idx: usize| row.get(idx).unwrap_or("").trim();

        let action_code = match parse_action(field(action)) {
            Ok(a) => a,
            Err(reason) => {
                report.skip(row_no, reason);
                continue;
            }
        };
        let codes = |cols: &[usize]| -> Vec<String> {
            cols.iter()
                .map(|&c| field(c).to_string())
                .filter(|s| !s.is_empty())
                .collect()
        };
        let mut actor = codes(&actors).into_iter();
        let mut target = codes(&targets).into_iter();
        let (Some(actor_code), Some(target_code)) = (actor.next(), target.next()) else {
            report.skip(row_no, SkipReason::UnmappableActor);
            continue;
        };
        let (f, w) = match (parse_casualty(field(fatal)), parse_casualty(field(wounded))) {
            (Some(f), Some(w)) => (f, w),
            _ => {
                report.skip(row_no, SkipReason::MalformedCasualties);
                continue;
            }
        };
        if matches!(f, Casualty::Missing) || matches!(w, Casualty::Missing) {
            report.missing_casualties += 1;
        }
        let value = |c: Casualty| match c {
            Casualty::Value(v) => v,
            Casualty::Missing => 0,
        };
        let Some(date) = parse_date(field(date)) else {
            report.skip(row_no, SkipReason::MalformedDate);
            continue;
        };
        let loc = field(location);
        if loc.is_empty() {
            report.skip(row_no, SkipReason::MissingLocation);
            continue;
        }
        records.push(RawEventRecord {
            action_code,
            actor_code,
            actor_fallback: actor.next(),
            target_code,
            target_fallback: target.next(),
            fatalities: value(f),
            wounded: value(w),
            location: loc.to_string(),
            date,
        });
    }
    if report.missing_casualties > 0 {
        log::info!(
            "{} rows had blank casualty fields, read as 0",
            report.missing_casualties
        );
    }
    Ok((records, report))
}

/// Full ingestion: parse, map, and drop records whose actors do not map.
pub fn ingest<R: Read>(
    source: R,
    columns: &ColumnMap,
    tables: &MappingTables,
) -> Result<(Vec<EventTuple>, SkipReport)> {
    let (records, mut report) = load_raw(source, columns)?;
    // Row numbers of surviving records, for reporting mapping failures.
    let skipped: std::collections::BTreeSet<usize> = report.skipped.iter().map(|s| s.row).collect();
    let rows = (1..=report.rows_read).filter(|r| !skipped.contains(r));
    let mut tuples = Vec::with_capacity(records.len());
    for (record, row) in records.iter().zip(rows) {
        match make_tuple(record, tables) {
            Ok(t) => tuples.push(t),
            Err(Error::UnmappableActor(_)) => report.skip(row, SkipReason::UnmappableActor),
            Err(Error::UnknownAction(_)) => report.skip(row, SkipReason::UnscoredCategory),
            Err(e) => return Err(e),
        }
    }
    report.skipped.sort_by_key(|s| s.row);
    Ok((tuples, report))
}

/// Seeded random partition into a training and a held-out part.
pub fn split<T: Clone>(items: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if items.is_empty() {
        return Err(Error::InsufficientData("cannot split an empty dataset".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * items.len() as f64).round() as usize;
    let (a, b) = idx.split_at(n_train);
    let pick = |ix: &[usize]| ix.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((pick(a), pick(b)))
}

pub const TUPLE_HEADER: [&str; 6] = ["subject", "predicate", "quantifier", "object", "location", "month"];

/// Writes the canonical tuple CSV.
pub fn write_tuples<W: Write>(out: W, tuples: &[EventTuple]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TUPLE_HEADER)?;
    for t in tuples {
        w.write_record([
            t.subject.as_str().to_string(),
            format!("{}", t.predicate),
            t.quantifier.to_string(),
            t.object.as_str().to_string(),
            t.location.clone(),
            t.month.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the canonical tuple CSV. Lines starting with `#` are ignored.
pub fn read_tuples<R: Read>(source: R) -> Result<Vec<EventTuple>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(source);
    let headers = r.headers()?.clone();
    let col = |name: &str| column_index(&headers, name);
    let (s, p, q, o, l, m) = (
        col("subject")?,
        col("predicate")?,
        col("quantifier")?,
        col("object")?,
        col("location")?,
        col("month")?,
    );
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let get = |c: usize| rec.get(c).unwrap_or("").trim();
        let bad = |what: &str| Error::InvalidTuple {
            index: i,
            reason: format!("cannot parse {what}"),
        };
        out.push(EventTuple {
            subject: get(s).parse().map_err(|_| bad("subject"))?,
            predicate: get(p).parse().map_err(|_| bad("predicate"))?,
            quantifier: get(q).parse().map_err(|_| bad("quantifier"))?,
            object: get(o).parse().map_err(|_| bad("object"))?,
            location: get(l).to_string(),
            month: get(m).parse().map_err(|_| bad("month"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "verb10,actor3,actor6,target3,target6,fatalities,wounded,location,date\n";

    fn raw(action: u8, actor: &str, target: &str, f: u64, w: u64) -> RawEventRecord {
        RawEventRecord {
            action_code: action,
            actor_code: actor.into(),
            actor_fallback: None,
            target_code: target.into(),
            target_fallback: None,
            fatalities: f,
            wounded: w,
            location: "Afghanistan".into(),
            date: NaiveDate::from_ymd_opt(2012, 5, 19).unwrap(),
        }
    }

    #[test]
    fn load_well_formed_rows() {
        let csv = format!(
            "{HEADER}19,MIL,,CVL,,1,1,AFG,2012-05-19\n14,CVL,,GOV,,0,0,EGY,2011-01-25\n1,GOV,,OPP,,,,SYR,2011-03-15\n"
        );
        let (recs, report) = load_raw(csv.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(recs.len(), 3);
        assert!(report.skipped.is_empty());
        assert_eq!(report.missing_casualties, 1);
        assert_eq!(recs[2].fatalities, 0);
    }

    #[test]
    fn category_21_is_skipped() {
        let csv = format!("{HEADER}21,MIL,,CVL,,0,0,AFG,2012-05-19\n");
        let (recs, report) = load_raw(csv.as_bytes(), &ColumnMap::default()).unwrap();
        assert!(recs.is_empty());
        assert_eq!(report.skipped[0].reason, SkipReason::UnscoredCategory);
        assert_eq!(report.skipped[0].reason.describe(), "unscored category");
    }

    #[test]
    fn empty_actor_is_skipped() {
        let csv = format!("{HEADER}19,,,CVL,,0,0,AFG,2012-05-19\n");
        let (recs, report) = load_raw(csv.as_bytes(), &ColumnMap::default()).unwrap();
        assert!(recs.is_empty());
        assert_eq!(report.skipped[0].reason.describe(), "unmappable actor");
    }

    #[test]
    fn missing_column_is_fatal() {
        let csv = "verb10,actor3\n19,MIL\n";
        let err = load_raw(csv.as_bytes(), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn actor_lookup() {
        let t = ActorClassMap::standard();
        assert_eq!(map_actor("REB", &t).unwrap(), ActorClass::Military);
        assert_eq!(map_actor("IND", &t).unwrap(), ActorClass::Civilian);
        assert_eq!(map_actor("gov", &t).unwrap(), ActorClass::Governmental);
        assert!(matches!(map_actor("XYZ", &t), Err(Error::UnmappableActor(_))));
        assert!(matches!(map_actor("", &t), Err(Error::UnmappableActor(_))));
        // Six-letter composite: the second triple is consulted when the first is not a type.
        assert_eq!(map_actor("SYRMIL", &t).unwrap(), ActorClass::Military);
        assert_eq!(map_actor("OPPREB", &t).unwrap(), ActorClass::Political);
    }

    #[test]
    fn actor_table_rows() {
        let t = ActorClassMap::standard();
        assert_eq!(t.len(), STANDARD_ACTORS.len());
        for (code, class) in STANDARD_ACTORS {
            assert_eq!(map_actor(code, &t).unwrap(), class, "{code}");
        }
    }

    #[test]
    fn predicate_rescaling() {
        let g = GoldsteinMap::standard();
        assert_eq!(g.len(), 20);
        assert_eq!(goldstein_to_predicate(19, &g).unwrap(), 0.999);
        assert_eq!(goldstein_to_predicate(20, &g).unwrap(), 0.999);
        assert_eq!(goldstein_to_predicate(7, &g).unwrap(), 0.001);
        assert!((goldstein_to_predicate(1, &g).unwrap() - 7.0 / 17.0).abs() < 1e-12);
        assert!(matches!(goldstein_to_predicate(21, &g), Err(Error::UnknownAction(21))));
        assert!(matches!(goldstein_to_predicate(-3, &g), Err(Error::UnknownAction(-3))));
    }

    #[test]
    fn predicate_is_order_reversing() {
        let g = GoldsteinMap::standard();
        let pairs: Vec<(f64, f64)> = g
            .iter()
            .map(|(c, v)| (v, goldstein_to_predicate(c as i64, &g).unwrap()))
            .collect();
        for &(g1, p1) in &pairs {
            assert!(p1 > 0.0 && p1 < 1.0);
            for &(g2, p2) in &pairs {
                if g1 < g2 {
                    assert!(p1 > p2);
                }
            }
        }
    }

    #[test]
    fn tuple_from_record() {
        let tables = MappingTables::default();
        let t = make_tuple(&raw(18, "MIL", "CVL", 1, 1), &tables).unwrap();
        assert_eq!(t.subject, ActorClass::Military);
        assert_eq!(t.object, ActorClass::Civilian);
        assert_eq!(t.quantifier, 2);
        assert_eq!(t.month, YearMonth::new(2012, 5).unwrap());
        assert_eq!(t.predicate, goldstein_to_predicate(18, &tables.goldstein).unwrap());
        assert_eq!(make_tuple(&raw(18, "MIL", "CVL", 0, 0), &tables).unwrap().quantifier, 0);
        assert_eq!(
            make_tuple(&raw(18, "MIL", "CVL", 40, 2), &tables).unwrap().quantifier,
            42
        );
    }

    #[test]
    fn fallback_column_is_used() {
        let tables = MappingTables::default();
        let mut r = raw(18, "AFG", "CVL", 0, 0);
        assert!(make_tuple(&r, &tables).is_err());
        r.actor_fallback = Some("REB".into());
        assert_eq!(make_tuple(&r, &tables).unwrap().subject, ActorClass::Military);
    }

    #[test]
    fn ingest_reports_unmappable_codes() {
        let csv = format!("{HEADER}19,XYZ,,CVL,,0,0,AFG,2012-05-19\n19,MIL,,CVL,,3,0,AFG,2012-05-19\n");
        let (tuples, report) = ingest(csv.as_bytes(), &ColumnMap::default(), &MappingTables::default()).unwrap();
        assert_eq!(tuples.len(), 1);
        assert_eq!(
            report.skipped,
            vec![SkippedRow {
                row: 1,
                reason: SkipReason::UnmappableActor
            }]
        );
    }

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<usize> = (0..10).collect();
        let (a, b) = split(&items, 0.7, 1).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        assert_eq!(split(&items, 0.7, 1).unwrap(), (a.clone(), b.clone()));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort();
        assert_eq!(all, items);

        let big: Vec<u32> = (0..100_000).collect();
        let (a, _) = split(&big, 0.7, 9).unwrap();
        assert!((a.len() as i64 - 70_000).abs() <= 1);

        assert!(split::<u8>(&[], 0.7, 1).is_err());
        assert!(split(&items, 1.0, 1).is_err());
    }

    #[test]
    fn tuple_csv_round_trip() {
        let tables = MappingTables::default();
        let tuples = vec![
            make_tuple(&raw(18, "MIL", "CVL", 1, 1), &tables).unwrap(),
            make_tuple(&raw(1, "GOV", "OPP", 0, 0), &tables).unwrap(),
        ];
        let mut buf = Vec::new();
        write_tuples(&mut buf, &tuples).unwrap();
        assert!(buf.starts_with(b"subject,predicate,quantifier,object,location,month\n"));
        assert_eq!(read_tuples(buf.as_slice()).unwrap(), tuples);
    }

    #[test]
    fn override_tables_from_json() {
        let json = r#"{"actors": {"xyz": "political"}}"#;
        let t = MappingTables::from_json(json.as_bytes()).unwrap();
        assert_eq!(map_actor("XYZ", &t.actors).unwrap(), ActorClass::Political);
        assert!(map_actor("REB", &t.actors).is_err());
        assert_eq!(t.goldstein, GoldsteinMap::standard());
    }

    #[test]
    fn year_month_ordinals() {
        let m = YearMonth::new(2012, 12).unwrap();
        assert_eq!(m.succ(), YearMonth::new(2013, 1).unwrap());
        assert_eq!(YearMonth::from_ordinal(m.ordinal()), m);
        assert_eq!("2012-05".parse::<YearMonth>().unwrap().to_string(), "2012-05");
        assert!("2012-13".parse::<YearMonth>().is_err());
    }
}
