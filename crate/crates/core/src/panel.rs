//! Longitudinal score panel: ingestion, validation, standardization and
//! response patterns.
//!
//! A panel holds one record per student with five annual slots. Slot `t`
//! (0-based) corresponds to `year = t` in the input file and grade `t + 1`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of annual testing occasions.
pub const YEARS: usize = 5;

/// Number of distinct non-empty response patterns (2^5 - 1).
pub const PATTERN_COUNT: usize = 31;

/// Classroom identifier as it appears in the `tchid` column.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TeacherId(pub String);

impl TeacherId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TeacherId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TeacherId {
    fn from(s: &str) -> Self {
        TeacherId(s.to_string())
    }
}

/// Affine map from raw test units to the standardized scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub offset: f64,
    pub scale: f64,
}

impl Standardization {
    /// District convention: subtract 400, divide by 40.
    pub const DISTRICT: Standardization = Standardization {
        offset: 400.0,
        scale: 40.0,
    };

    pub fn new(offset: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() || !offset.is_finite() {
            return Err(Error::Config(format!(
                "standardization scale must be positive and finite (offset {offset}, scale {scale})"
            )));
        }
        Ok(Standardization { offset, scale })
    }

    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.offset) / self.scale
    }
}

impl Default for Standardization {
    fn default() -> Self {
        Standardization::DISTRICT
    }
}

/// `(raw - offset) / scale`.
pub fn standardize(raw_score: f64, offset: f64, scale: f64) -> Result<f64> {
    Ok(Standardization::new(offset, scale)?.apply(raw_score))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudentRecord {
    pub student_id: String,
    pub scores: [Option<f64>; YEARS],
    /// A link may be present for a year without a score, and vice versa.
    pub teacher_links: [Option<TeacherId>; YEARS],
}

impl StudentRecord {
    pub fn new(student_id: impl Into<String>) -> Self {
        StudentRecord {
            student_id: student_id.into(),
            scores: Default::default(),
            teacher_links: Default::default(),
        }
    }

    pub fn response_flags(&self) -> [bool; YEARS] {
        std::array::from_fn(|t| self.scores[t].is_some())
    }

    pub fn n_observed(&self) -> usize {
        self.scores.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.n_observed() == YEARS
    }

    pub fn observed_years(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.scores
            .iter()
            .enumerate()
            .filter_map(|(t, s)| s.map(|y| (t, y)))
    }
}

/// Immutable validated panel.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorePanel {
    students: Vec<StudentRecord>,
    teachers_by_year: [Vec<TeacherId>; YEARS],
    teacher_slots: [HashMap<TeacherId, usize>; YEARS],
    standardization: Standardization,
}

impl ScorePanel {
    /// Validates the records and derives the per-year classroom lists
    /// (sorted by identifier). Every student needs at least one score.
    pub fn new(students: Vec<StudentRecord>, standardization: Standardization) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut per_year: [BTreeSet<TeacherId>; YEARS] = Default::default();
        for s in &students {
            if s.n_observed() == 0 {
                return Err(Error::Validation(format!(
                    "student {} has no observed score",
                    s.student_id
                )));
            }
            if !seen.insert(s.student_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate student id {}",
                    s.student_id
                )));
            }
            for (t, score) in s.scores.iter().enumerate() {
                if let Some(y) = score {
                    if !y.is_finite() {
                        return Err(Error::Validation(format!(
                            "student {} year {t}: non-finite score",
                            s.student_id
                        )));
                    }
                }
            }
            for (t, link) in s.teacher_links.iter().enumerate() {
                if let Some(id) = link {
                    per_year[t].insert(id.clone());
                }
            }
        }
        let teachers_by_year: [Vec<TeacherId>; YEARS] =
            per_year.map(|set| set.into_iter().collect());
        let teacher_slots = std::array::from_fn(|t| {
            teachers_by_year[t]
                .iter()
                .enumerate()
                .map(|(j, id)| (id.clone(), j))
                .collect()
        });
        Ok(ScorePanel {
            students,
            teachers_by_year,
            teacher_slots,
            standardization,
        })
    }

    pub fn empty() -> Self {
        ScorePanel::new(Vec::new(), Standardization::default()).expect("empty panel is valid")
    }

    pub fn students(&self) -> &[StudentRecord] {
        &self.students
    }

    pub fn len(&self) -> usize {
        self.students.len()
    }

    pub fn is_empty(&self) -> bool {
        self.students.is_empty()
    }

    pub fn teachers(&self, year: usize) -> &[TeacherId] {
        &self.teachers_by_year[year]
    }

    pub fn teachers_by_year(&self) -> &[Vec<TeacherId>; YEARS] {
        &self.teachers_by_year
    }

    pub fn teacher_slot(&self, year: usize, id: &TeacherId) -> Option<usize> {
        self.teacher_slots[year].get(id).copied()
    }

    pub fn standardization(&self) -> Standardization {
        self.standardization
    }

    pub fn observed_count(&self) -> usize {
        self.students.iter().map(StudentRecord::n_observed).sum()
    }

    /// Student count per canonical pattern index (position 0 is pattern 1).
    pub fn pattern_counts(&self) -> [usize; PATTERN_COUNT] {
        let mut counts = [0; PATTERN_COUNT];
        for s in &self.students {
            counts[pattern_of(s).index() - 1] += 1;
        }
        counts
    }

    /// A copy of this panel with the student order permuted.
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        let students = order.iter().map(|&i| self.students[i].clone()).collect();
        ScorePanel::new(students, self.standardization)
    }
}

// ---------------------------------------------------------------------------
// Response patterns

/// Five-bit observation pattern; bit `t` set when year `t` has a score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResponsePattern(u8);

const fn lex_key(mask: u8) -> u8 {
    // (r1, .., r5) read as a binary number with r1 most significant
    let mut key = 0;
    let mut t = 0;
    while t < YEARS {
        if mask & (1 << t) != 0 {
            key |= 1 << (YEARS - 1 - t);
        }
        t += 1;
    }
    key
}

fn canonical_masks() -> [u8; PATTERN_COUNT] {
    let mut masks: Vec<u8> = (1u8..32).collect();
    masks.sort_by(|&a, &b| {
        b.count_ones()
            .cmp(&a.count_ones())
            .then(lex_key(b).cmp(&lex_key(a)))
    });
    masks.try_into().expect("31 masks")
}

impl ResponsePattern {
    pub fn from_mask(mask: u8) -> Option<Self> {
        (mask != 0 && mask < 32).then_some(ResponsePattern(mask))
    }

    pub fn from_flags(flags: [bool; YEARS]) -> Option<Self> {
        let mask = flags
            .iter()
            .enumerate()
            .fold(0u8, |m, (t, &f)| m | ((f as u8) << t));
        Self::from_mask(mask)
    }

    /// Pattern with the given 1-based canonical index.
    pub fn from_index(index: usize) -> Option<Self> {
        (1..=PATTERN_COUNT)
            .contains(&index)
            .then(|| ResponsePattern(canonical_masks()[index - 1]))
    }

    /// All 31 patterns in canonical order: descending number of observed
    /// years, then descending lexicographic order on `(r1, .., r5)`.
    pub fn all() -> impl Iterator<Item = ResponsePattern> {
        canonical_masks().into_iter().map(ResponsePattern)
    }

    pub fn mask(self) -> u8 {
        self.0
    }

    pub fn flags(self) -> [bool; YEARS] {
        std::array::from_fn(|t| self.0 & (1 << t) != 0)
    }

    pub fn observes(self, year: usize) -> bool {
        self.0 & (1 << year) != 0
    }

    pub fn years(self) -> impl Iterator<Item = usize> {
        (0..YEARS).filter(move |&t| self.observes(t))
    }

    pub fn n_observed(self) -> usize {
        self.0.count_ones() as usize
    }

    /// 1-based canonical index; the complete pattern is 1.
    pub fn index(self) -> usize {
        canonical_masks()
            .iter()
            .position(|&m| m == self.0)
            .expect("valid mask")
            + 1
    }

    pub fn is_subset_of(self, other: ResponsePattern) -> bool {
        self.0 & !other.0 == 0
    }
}

impl fmt::Display for ResponsePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for flag in self.flags() {
            f.write_str(if flag { "1" } else { "0" })?;
        }
        Ok(())
    }
}

pub fn pattern_of(record: &StudentRecord) -> ResponsePattern {
    ResponsePattern::from_flags(record.response_flags())
        .expect("validated records have at least one observed score")
}

/// Estimation groups for the pattern-mixture model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatternGrouping {
    /// Group id per canonical index (position 0 is pattern 1).
    assignments: [usize; PATTERN_COUNT],
    groups: Vec<PatternGroup>,
    threshold: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatternGroup {
    pub label: String,
    pub patterns: Vec<ResponsePattern>,
    pub catch_all: bool,
    pub students: usize,
}

impl PatternGroup {
    /// Years estimated for this group: the pattern's own years, or all
    /// years for the catch-all group.
    pub fn years(&self) -> Vec<usize> {
        if self.catch_all {
            (0..YEARS).collect()
        } else {
            self.patterns[0].years().collect()
        }
    }

    /// Standalone single-score groups carry no separate student effect.
    pub fn has_student_effects(&self) -> bool {
        self.catch_all || self.patterns[0].n_observed() > 1
    }
}

impl PatternGrouping {
    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn groups(&self) -> &[PatternGroup] {
        &self.groups
    }

    pub fn group_of(&self, pattern: ResponsePattern) -> usize {
        self.assignments[pattern.index() - 1]
    }

    pub fn catch_all(&self) -> Option<usize> {
        self.groups.iter().position(|g| g.catch_all)
    }

    /// One line per canonical pattern with its student count and group.
    pub fn write<W: Write>(&self, panel: &ScorePanel, writer: W) -> Result<()> {
        let counts = panel.pattern_counts();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["pattern_index", "pattern", "students", "group"])?;
        for p in ResponsePattern::all() {
            let k = p.index();
            let label = &self.groups[self.assignments[k - 1]].label;
            w.write_record([
                k.to_string(),
                p.to_string(),
                counts[k - 1].to_string(),
                label.clone(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<grouping writer>", e))?;
        Ok(())
    }
}

/// Patterns with at least `threshold` students form their own group; the
/// rest share one catch-all group (labelled `rare`), placed last.
pub fn group_patterns(panel: &ScorePanel, threshold: usize) -> PatternGrouping {
    group_pattern_counts(&panel.pattern_counts(), threshold)
}

pub fn group_pattern_counts(counts: &[usize; PATTERN_COUNT], threshold: usize) -> PatternGrouping {
    let mut assignments = [0usize; PATTERN_COUNT];
    let mut groups = Vec::new();
    let mut rare = Vec::new();
    let mut rare_students = 0;
    for (k, pattern) in ResponsePattern::all().enumerate() {
        if counts[k] >= threshold {
            assignments[k] = groups.len();
            groups.push(PatternGroup {
                label: format!("p{:02}", k + 1),
                patterns: vec![pattern],
                catch_all: false,
                students: counts[k],
            });
        } else {
            rare.push(k);
            rare_students += counts[k];
        }
    }
    if !rare.is_empty() {
        let id = groups.len();
        for &k in &rare {
            assignments[k] = id;
        }
        groups.push(PatternGroup {
            label: "rare".to_string(),
            patterns: rare
                .iter()
                .map(|&k| ResponsePattern::from_index(k + 1).unwrap())
                .collect(),
            catch_all: true,
            students: rare_students,
        });
    }
    PatternGrouping {
        assignments,
        groups,
        threshold,
    }
}

// ---------------------------------------------------------------------------
// Ingestion

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LoadOptions {
    /// Abort on the first malformed row instead of collecting it.
    pub strict: bool,
    /// When set, the `Y` column holds raw scores that are standardized at load.
    pub raw_scores: Option<Standardization>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropReason {
    NoValidScore,
}

impl DropReason {
    pub fn key(self) -> &'static str {
        match self {
            DropReason::NoValidScore => "no_valid_score",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_malformed: usize,
    pub duplicate_rows_merged: usize,
    pub students_seen: usize,
    pub students_admitted: usize,
    pub dropped: BTreeMap<DropReason, usize>,
    pub row_errors: Vec<(usize, String)>,
}

impl IngestReport {
    pub fn students_dropped(&self) -> usize {
        self.dropped.values().sum()
    }

    /// Machine-readable `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("rows_read={}\n", self.rows_read));
        out.push_str(&format!("rows_malformed={}\n", self.rows_malformed));
        out.push_str(&format!(
            "duplicate_rows_merged={}\n",
            self.duplicate_rows_merged
        ));
        out.push_str(&format!("students_seen={}\n", self.students_seen));
        out.push_str(&format!("students_admitted={}\n", self.students_admitted));
        out.push_str(&format!(
            "dropped.{}={}\n",
            DropReason::NoValidScore.key(),
            self.dropped
                .get(&DropReason::NoValidScore)
                .copied()
                .unwrap_or(0)
        ));
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "Read {} data rows ({} malformed, {} duplicate rows merged).\n\
             {} distinct students: {} admitted, {} dropped.\n",
            self.rows_read,
            self.rows_malformed,
            self.duplicate_rows_merged,
            self.students_seen,
            self.students_admitted,
            self.students_dropped()
        );
        for (reason, n) in &self.dropped {
            out.push_str(&format!("  dropped ({}): {n}\n", reason.key()));
        }
        for (row, msg) in self.row_errors.iter().take(20) {
            out.push_str(&format!("  row {row}: {msg}\n"));
        }
        if self.row_errors.len() > 20 {
            out.push_str(&format!(
                "  ... {} more row errors\n",
                self.row_errors.len() - 20
            ));
        }
        out
    }
}

fn is_missing(field: &str) -> bool {
    matches!(field, "" | "NA" | "na" | "." | "NaN" | "nan")
}

struct ParsedRow {
    student: String,
    teacher: Option<TeacherId>,
    year: usize,
    score: Option<f64>,
}

fn parse_row(
    record: &csv::StringRecord,
    cols: &[usize; 4],
    raw: Option<Standardization>,
) -> std::result::Result<ParsedRow, String> {
    let get = |c: usize| {
        record
            .get(c)
            .map(str::trim)
            .ok_or_else(|| "missing field".to_string())
    };
    let student = get(cols[0])?;
    if is_missing(student) {
        return Err("empty stuid".into());
    }
    let teacher = get(cols[1])?;
    let year_field = get(cols[2])?;
    let year: usize = year_field
        .parse()
        .map_err(|_| format!("year {year_field:?} is not an integer"))?;
    if year >= YEARS {
        return Err(format!("year {year} outside 0..=4"));
    }
    let y_field = get(cols[3])?;
    let score = if matches!(y_field, "" | "NA" | "na" | ".") {
        None
    } else {
        let v: f64 = y_field
            .parse()
            .map_err(|_| format!("Y {y_field:?} is not a number"))?;
        if !v.is_finite() {
            return Err(format!("Y {y_field:?} is not finite"));
        }
        Some(raw.map_or(v, |s| s.apply(v)))
    };
    Ok(ParsedRow {
        student: student.to_string(),
        teacher: (!is_missing(teacher)).then(|| TeacherId(teacher.to_string())),
        year,
        score,
    })
}

/// Reads the four-column `stuid,tchid,year,Y` format.
///
/// Empty, `NA` or `.` in `Y` marks a missing score; the same in `tchid`
/// marks an unknown classroom. Students whose rows carry no score are
/// dropped and counted in the report.
pub fn load_panel<R: Read>(reader: R, options: LoadOptions) -> Result<(ScorePanel, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut report = IngestReport::default();

    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) if matches!(e.kind(), csv::ErrorKind::Utf8 { .. }) => {
            return Err(Error::MalformedRow {
                row: 0,
                message: "header is not UTF-8".into(),
            })
        }
        Err(e) => return Err(e.into()),
    };
    if headers.is_empty() {
        let standardization = options.raw_scores.unwrap_or_default();
        return Ok((ScorePanel::new(Vec::new(), standardization)?, report));
    }
    let mut cols = [usize::MAX; 4];
    for (c, name) in headers.iter().enumerate() {
        let slot = match name.trim_start_matches('\u{feff}') {
            "stuid" => 0,
            "tchid" => 1,
            "year" => 2,
            "Y" => 3,
            _ => continue,
        };
        cols[slot] = c;
    }
    if let Some(missing) = cols.iter().position(|&c| c == usize::MAX) {
        let name = ["stuid", "tchid", "year", "Y"][missing];
        return Err(Error::MalformedRow {
            row: 0,
            message: format!("header lacks column {name}"),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut records: HashMap<String, StudentRecord> = HashMap::new();
    let mut record = csv::StringRecord::new();
    let mut row = 0;
    loop {
        row += 1;
        let parsed = match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                report.rows_read += 1;
                parse_row(&record, &cols, options.raw_scores)
            }
            Err(e) => {
                report.rows_read += 1;
                Err(e.to_string())
            }
        };
        let parsed = match parsed {
            Ok(p) => p,
            Err(message) => {
                if options.strict {
                    return Err(Error::MalformedRow { row, message });
                }
                report.rows_malformed += 1;
                report.row_errors.push((row, message));
                continue;
            }
        };
        let entry = records.entry(parsed.student.clone()).or_insert_with(|| {
            order.push(parsed.student.clone());
            StudentRecord::new(parsed.student.clone())
        });
        let t = parsed.year;
        let had_row = entry.scores[t].is_some() || entry.teacher_links[t].is_some();
        if had_row {
            let score_conflict = match (entry.scores[t], parsed.score) {
                (Some(a), Some(b)) => a != b,
                _ => false,
            };
            let link_conflict = match (&entry.teacher_links[t], &parsed.teacher) {
                (Some(a), Some(b)) => a != b,
                _ => false,
            };
            if score_conflict || link_conflict {
                return Err(Error::Validation(format!(
                    "student {} has conflicting duplicate rows for year {t} (row {row})",
                    parsed.student
                )));
            }
            report.duplicate_rows_merged += 1;
        }
        if parsed.score.is_some() {
            entry.scores[t] = parsed.score;
        }
        if parsed.teacher.is_some() {
            entry.teacher_links[t] = parsed.teacher;
        }
    }

    report.students_seen = order.len();
    let mut students = Vec::with_capacity(order.len());
    for id in order {
        let rec = records.remove(&id).expect("recorded student");
        if rec.n_observed() == 0 {
            *report.dropped.entry(DropReason::NoValidScore).or_insert(0) += 1;
        } else {
            students.push(rec);
        }
    }
    report.students_admitted = students.len();
    let standardization = options.raw_scores.unwrap_or_default();
    Ok((ScorePanel::new(students, standardization)?, report))
}

/// Fixed six-decimal score formatting used by every panel writer.
pub fn format_score(y: f64) -> String {
    format!("{y:.6}")
}

/// Writes the panel in the input schema, one row per student-year carrying
/// a score or a link. Scores use six decimals; missing values are `NA`.
pub fn write_panel<W: Write>(panel: &ScorePanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["stuid", "tchid", "year", "Y"])?;
    for s in panel.students() {
        for t in 0..YEARS {
            if s.scores[t].is_none() && s.teacher_links[t].is_none() {
                continue;
            }
            let tch = s.teacher_links[t].as_ref().map_or("NA", |id| id.as_str());
            let y = s.scores[t].map_or_else(|| "NA".to_string(), format_score);
            w.write_record([s.student_id.as_str(), tch, &t.to_string(), &y])?;
        }
    }
    w.flush().map_err(|e| Error::io("<panel writer>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Summaries

#[derive(Clone, Debug, PartialEq)]
pub struct NobsCell {
    pub grade: usize,
    pub n_observed: usize,
    pub count: usize,
    /// `None` when no student falls in the cell.
    pub mean: Option<f64>,
}

/// Mean standardized score by grade and number of observed scores.
/// Always returns all 25 cells, grade-major.
pub fn nobs_summary(panel: &ScorePanel) -> Vec<NobsCell> {
    let mut sums = [[0.0f64; YEARS]; YEARS];
    let mut counts = [[0usize; YEARS]; YEARS];
    for s in panel.students() {
        let n = s.n_observed();
        for (t, y) in s.observed_years() {
            sums[t][n - 1] += y;
            counts[t][n - 1] += 1;
        }
    }
    let mut cells = Vec::with_capacity(YEARS * YEARS);
    for t in 0..YEARS {
        for n in 0..YEARS {
            let count = counts[t][n];
            cells.push(NobsCell {
                grade: t + 1,
                n_observed: n + 1,
                count,
                mean: (count > 0).then(|| sums[t][n] / count as f64),
            });
        }
    }
    cells
}

pub fn write_nobs_summary<W: Write>(cells: &[NobsCell], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["grade", "n_observed", "count", "mean"])?;
    for c in cells {
        w.write_record([
            c.grade.to_string(),
            c.n_observed.to_string(),
            c.count.to_string(),
            c.mean.map_or_else(String::new, format_score),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<summary writer>", e))?;
    Ok(())
}
