//! Sequential multi-membership design.
//!
//! Every observed score `(i, t)` loads on the classroom effect of each year
//! `t* <= t` in which student `i` has a known classroom, with weight 1 for the
//! current year and the out-year weight `alpha[t, t*]` otherwise. Years with
//! an unknown classroom contribute nothing.

use std::io::Write;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::panel::{ScorePanel, TeacherId, YEARS};

/// Number of out-year weights `alpha[t, t*]`, `t* < t`.
pub const OUT_YEAR_WEIGHTS: usize = YEARS * (YEARS - 1) / 2;

/// Position of `alpha[t, t*]` (0-based years, `t* < t`) in the packed
/// lower-triangular order 21, 31, 32, 41, 42, 43, 51, 52, 53, 54.
pub fn alpha_index(year: usize, prior_year: usize) -> usize {
    debug_assert!(prior_year < year && year < YEARS);
    year * (year - 1) / 2 + prior_year
}

/// Inverse of [`alpha_index`].
pub fn alpha_years(index: usize) -> (usize, usize) {
    let mut year = 1;
    while alpha_index(year, year - 1) < index {
        year += 1;
    }
    (year, index - alpha_index(year, 0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EffectIndex {
    pub year: usize,
    pub teacher_slot: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightSlot {
    Unit,
    OutYear { year: usize, prior_year: usize },
}

impl WeightSlot {
    pub fn between(year: usize, effect_year: usize) -> Self {
        if year == effect_year {
            WeightSlot::Unit
        } else {
            WeightSlot::OutYear {
                year,
                prior_year: effect_year,
            }
        }
    }

    pub fn name(self) -> String {
        match self {
            WeightSlot::Unit => "1".to_string(),
            WeightSlot::OutYear { year, prior_year } => {
                format!("alpha[{},{}]", year + 1, prior_year + 1)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignRow {
    pub student: usize,
    pub year: usize,
    pub score: f64,
    /// Ordered by effect year.
    pub contributions: Vec<(EffectIndex, WeightSlot)>,
}

/// Student-major design: the rows of student `i` are `rows[student_rows[i]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    rows: Vec<DesignRow>,
    student_rows: Vec<Range<usize>>,
    links: Vec<[Option<usize>; YEARS]>,
    teachers_per_year: [usize; YEARS],
}

impl Design {
    pub fn rows(&self) -> &[DesignRow] {
        &self.rows
    }

    pub fn rows_of(&self, student: usize) -> &[DesignRow] {
        &self.rows[self.student_rows[student].clone()]
    }

    pub fn student_rows(&self) -> &[Range<usize>] {
        &self.student_rows
    }

    /// Known classroom slot per year for each student.
    pub fn links(&self) -> &[[Option<usize>; YEARS]] {
        &self.links
    }

    pub fn teachers_per_year(&self) -> [usize; YEARS] {
        self.teachers_per_year
    }

    pub fn total_teachers(&self) -> usize {
        self.teachers_per_year.iter().sum()
    }

    pub fn students(&self) -> usize {
        self.student_rows.len()
    }
}

pub fn build_design(panel: &ScorePanel) -> Result<Design> {
    let mut rows = Vec::with_capacity(panel.observed_count());
    let mut student_rows = Vec::with_capacity(panel.len());
    let mut links = Vec::with_capacity(panel.len());
    for (i, s) in panel.students().iter().enumerate() {
        let mut slots = [None; YEARS];
        for (t, link) in s.teacher_links.iter().enumerate() {
            if let Some(id) = link {
                let slot = panel.teacher_slot(t, id).ok_or_else(|| {
                    Error::Consistency(format!(
                        "student {} links to classroom {id} absent from year {t}",
                        s.student_id
                    ))
                })?;
                slots[t] = Some(slot);
            }
        }
        let start = rows.len();
        for (t, y) in s.observed_years() {
            let contributions = (0..=t)
                .filter_map(|ts| {
                    slots[ts].map(|j| {
                        (
                            EffectIndex {
                                year: ts,
                                teacher_slot: j,
                            },
                            WeightSlot::between(t, ts),
                        )
                    })
                })
                .collect();
            rows.push(DesignRow {
                student: i,
                year: t,
                score: y,
                contributions,
            });
        }
        student_rows.push(start..rows.len());
        links.push(slots);
    }
    let teachers_per_year = std::array::from_fn(|t| panel.teachers(t).len());
    Ok(Design {
        rows,
        student_rows,
        links,
        teachers_per_year,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassroomRoster {
    pub year: usize,
    pub teacher: TeacherId,
    pub students: Vec<usize>,
    pub complete: usize,
}

impl ClassroomRoster {
    /// Share of linked students with all five scores; 0 for an empty roster.
    pub fn complete_proportion(&self) -> f64 {
        if self.students.is_empty() {
            0.0
        } else {
            self.complete as f64 / self.students.len() as f64
        }
    }
}

/// One roster per classroom-year, ordered by year then classroom slot.
pub fn classroom_rosters(panel: &ScorePanel) -> Vec<ClassroomRoster> {
    let mut rosters: Vec<ClassroomRoster> = (0..YEARS)
        .flat_map(|t| {
            panel.teachers(t).iter().map(move |id| ClassroomRoster {
                year: t,
                teacher: id.clone(),
                students: Vec::new(),
                complete: 0,
            })
        })
        .collect();
    let mut offsets = [0usize; YEARS];
    for t in 1..YEARS {
        offsets[t] = offsets[t - 1] + panel.teachers(t - 1).len();
    }
    for (i, s) in panel.students().iter().enumerate() {
        for (t, link) in s.teacher_links.iter().enumerate() {
            if let Some(id) = link {
                let j = panel.teacher_slot(t, id).expect("validated panel");
                let roster = &mut rosters[offsets[t] + j];
                roster.students.push(i);
                if s.is_complete() {
                    roster.complete += 1;
                }
            }
        }
    }
    rosters
}

/// Debug dump: one line per (row, contribution).
pub fn write_design<W: Write>(panel: &ScorePanel, design: &Design, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["stuid", "grade", "contributing_grade", "tchid", "weight"])?;
    for row in design.rows() {
        let sid = &panel.students()[row.student].student_id;
        for (effect, weight) in &row.contributions {
            w.write_record([
                sid.as_str(),
                &(row.year + 1).to_string(),
                &(effect.year + 1).to_string(),
                panel.teachers(effect.year)[effect.teacher_slot].as_str(),
                &weight.name(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<design writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{Standardization, StudentRecord};

    fn student(
        id: &str,
        scores: [Option<f64>; YEARS],
        links: [Option<&str>; YEARS],
    ) -> StudentRecord {
        let mut r = StudentRecord::new(id);
        r.scores = scores;
        r.teacher_links = links.map(|l| l.map(TeacherId::from));
        r
    }

    #[test]
    fn alpha_packing_round_trips() {
        let mut k = 0;
        for t in 1..YEARS {
            for ts in 0..t {
                assert_eq!(alpha_index(t, ts), k);
                assert_eq!(alpha_years(k), (t, ts));
                k += 1;
            }
        }
        assert_eq!(k, OUT_YEAR_WEIGHTS);
    }

    #[test]
    fn complete_history_row() {
        let s = student(
            "a",
            [Some(0.0); 5],
            [Some("A"), Some("B"), Some("C"), Some("D"), Some("E")],
        );
        let panel = ScorePanel::new(vec![s], Standardization::default()).unwrap();
        let design = build_design(&panel).unwrap();
        assert_eq!(design.rows().len(), 5);
        let last = &design.rows()[4];
        let names: Vec<_> = last.contributions.iter().map(|(_, w)| w.name()).collect();
        assert_eq!(
            names,
            ["alpha[5,1]", "alpha[5,2]", "alpha[5,3]", "alpha[5,4]", "1"]
        );
    }

    #[test]
    fn drop_in_student_has_single_contribution() {
        let s = student(
            "a",
            [None, None, Some(1.0), Some(1.0), None],
            [None, None, Some("C"), Some("D"), None],
        );
        let panel = ScorePanel::new(vec![s], Standardization::default()).unwrap();
        let design = build_design(&panel).unwrap();
        assert_eq!(design.rows()[0].year, 2);
        assert_eq!(design.rows()[0].contributions.len(), 1);
        assert_eq!(design.rows()[0].contributions[0].1, WeightSlot::Unit);
        assert_eq!(design.rows()[1].contributions.len(), 2);
    }

    #[test]
    fn unknown_current_teacher_keeps_prior_links() {
        let s = student(
            "a",
            [Some(1.0), Some(2.0), None, None, None],
            [Some("A"), None, None, None, None],
        );
        let panel = ScorePanel::new(vec![s], Standardization::default()).unwrap();
        let design = build_design(&panel).unwrap();
        let row = &design.rows()[1];
        assert_eq!(row.year, 1);
        assert_eq!(row.contributions.len(), 1);
        assert_eq!(
            row.contributions[0].0,
            EffectIndex {
                year: 0,
                teacher_slot: 0
            }
        );
        assert_eq!(
            row.contributions[0].1,
            WeightSlot::OutYear {
                year: 1,
                prior_year: 0
            }
        );
    }

    #[test]
    fn link_without_score_still_contributes_later() {
        let s = student(
            "a",
            [None, Some(2.0), None, None, None],
            [Some("A"), Some("B"), None, None, None],
        );
        let panel = ScorePanel::new(vec![s], Standardization::default()).unwrap();
        let design = build_design(&panel).unwrap();
        assert_eq!(design.rows().len(), 1);
        assert_eq!(design.rows()[0].contributions.len(), 2);
    }

    #[test]
    fn roster_completeness() {
        let full = [Some(0.0); 5];
        let part = [Some(0.0), None, None, None, None];
        let l = |t: &'static str| [Some(t), Some("x"), Some("y"), Some("z"), Some("w")];
        let students = vec![
            student("1", full, l("A")),
            student("2", full, l("A")),
            student("3", part, l("A")),
            student("4", part, l("A")),
            student("5", full, l("B")),
        ];
        let panel = ScorePanel::new(students, Standardization::default()).unwrap();
        let rosters = classroom_rosters(&panel);
        let a = rosters
            .iter()
            .find(|r| r.year == 0 && r.teacher.as_str() == "A")
            .unwrap();
        assert_eq!(a.students.len(), 4);
        assert_eq!(a.complete_proportion(), 0.5);
        let b = rosters
            .iter()
            .find(|r| r.year == 0 && r.teacher.as_str() == "B")
            .unwrap();
        assert_eq!(b.complete_proportion(), 1.0);
    }
}
