//! Posterior summaries and cross-model comparisons.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::linkage::ClassroomRoster;
use crate::mcmc::archive::ChainArchive;
use crate::panel::{PatternGrouping, ScorePanel, YEARS};

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Posterior mean, SD and central 95% interval of every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSummary {
    pub rows: Vec<SummaryRow>,
    index: HashMap<String, usize>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl PosteriorSummary {
    pub fn new(rows: Vec<SummaryRow>) -> Result<Self> {
        let mut index = HashMap::with_capacity(rows.len());
        for (k, r) in rows.iter().enumerate() {
            if index.insert(r.parameter.clone(), k).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate summary parameter {}",
                    r.parameter
                )));
            }
            if !(r.sd >= 0.0) || r.lower > r.upper {
                return Err(Error::Validation(format!(
                    "invalid summary row for {}",
                    r.parameter
                )));
            }
        }
        Ok(PosteriorSummary { rows, index })
    }

    pub fn from_archive(archive: &ChainArchive) -> Result<Self> {
        if archive.total_draws() == 0 {
            return Err(Error::Validation("archive has no draws".into()));
        }
        let rows = (0..archive.n_params())
            .map(|k| {
                let mut draws: Vec<f64> = archive.param_chains(k).into_iter().flatten().collect();
                let n = draws.len() as f64;
                let mean = draws.iter().sum::<f64>() / n;
                let var = if draws.len() > 1 {
                    draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                draws.sort_by(f64::total_cmp);
                SummaryRow {
                    parameter: archive.names[k].clone(),
                    mean,
                    sd: var.sqrt(),
                    lower: quantile(&draws, 0.025),
                    upper: quantile(&draws, 0.975),
                }
            })
            .collect();
        Self::new(rows)
    }

    pub fn get(&self, name: &str) -> Option<&SummaryRow> {
        self.index.get(name).map(|&k| &self.rows[k])
    }

    pub fn mean_of(&self, name: &str) -> Result<f64> {
        self.get(name)
            .map(|r| r.mean)
            .ok_or_else(|| Error::Comparison(format!("summary has no parameter {name}")))
    }

    /// `(teacher id, row)` for every classroom effect of `grade` (1-based).
    pub fn teacher_rows(&self, grade: usize) -> Vec<(&str, &SummaryRow)> {
        let prefix = format!("theta[{grade},");
        self.rows
            .iter()
            .filter_map(|r| {
                let rest = r.parameter.strip_prefix(&prefix)?.strip_suffix(']')?;
                Some((rest, r))
            })
            .collect()
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["parameter", "mean", "sd", "q025", "q975"])?;
        for r in &self.rows {
            w.write_record([
                r.parameter.clone(),
                format!("{:?}", r.mean),
                format!("{:?}", r.sd),
                format!("{:?}", r.lower),
                format!("{:?}", r.upper),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<summary writer>", e))?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let expected = ["parameter", "mean", "sd", "q025", "q975"];
        if header.len() != expected.len()
            || expected.iter().zip(header.iter()).any(|(a, b)| *a != b)
        {
            return Err(Error::MalformedRow {
                row: 0,
                message: format!("summary header must be {}", expected.join(",")),
            });
        }
        let mut rows = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = k + 1;
            if rec.len() != expected.len() {
                return Err(Error::MalformedRow {
                    row,
                    message: "wrong field count".into(),
                });
            }
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::MalformedRow {
                        row,
                        message: format!("invalid {} {:?}", expected[i], &rec[i]),
                    })
            };
            rows.push(SummaryRow {
                parameter: rec[0].to_string(),
                mean: num(1)?,
                sd: num(2)?,
                lower: num(3)?,
                upper: num(4)?,
            });
        }
        Self::new(rows)
    }
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Matched posterior-mean teacher effects of one grade.
fn matched_teachers(
    a: &PosteriorSummary,
    b: &PosteriorSummary,
    grade: usize,
) -> Result<Vec<(String, f64, f64)>> {
    let ra = a.teacher_rows(grade);
    let rb: HashMap<&str, f64> = b
        .teacher_rows(grade)
        .into_iter()
        .map(|(id, r)| (id, r.mean))
        .collect();
    if ra.len() != rb.len() {
        return Err(Error::Comparison(format!(
            "grade {grade}: {} teachers in one summary, {} in the other",
            ra.len(),
            rb.len()
        )));
    }
    ra.into_iter()
        .map(|(id, r)| match rb.get(id) {
            Some(&mb) => Ok((id.to_string(), r.mean, mb)),
            None => Err(Error::Comparison(format!(
                "teacher {id} (grade {grade}) missing from one summary"
            ))),
        })
        .collect()
}

/// Per-grade Pearson correlation of posterior-mean teacher effects; `None`
/// for grades with fewer than two teachers or no variation.
pub fn teacher_correlations(
    a: &PosteriorSummary,
    b: &PosteriorSummary,
) -> Result<[Option<f64>; YEARS]> {
    let mut out = [None; YEARS];
    for (t, slot) in out.iter_mut().enumerate() {
        let m = matched_teachers(a, b, t + 1)?;
        let x: Vec<f64> = m.iter().map(|v| v.1).collect();
        let y: Vec<f64> = m.iter().map(|v| v.2).collect();
        *slot = pearson(&x, &y);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftBand {
    pub n_observed: usize,
    pub students: usize,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudentShift {
    /// `delta_b / nu_b - delta_a / nu_a` per student, panel order.
    pub differences: Vec<f64>,
    pub bands: Vec<ShiftBand>,
    /// Mean ratio of posterior SDs of the student effects, `b` over `a`.
    pub sd_ratio: f64,
    /// Variance of the unstandardized differences over the posterior mean
    /// student-effect variance of `a`.
    pub difference_variance_share: f64,
}

/// Standardized student-effect differences by number of observed scores.
/// Each model's effects are divided by its own posterior mean of `nu`.
pub fn student_effect_shift(
    a: &PosteriorSummary,
    b: &PosteriorSummary,
    panel: &ScorePanel,
) -> Result<StudentShift> {
    let (nu_a, nu_b) = (a.mean_of("nu")?, b.mean_of("nu")?);
    if !(nu_a > 0.0 && nu_b > 0.0) {
        return Err(Error::Comparison(
            "student-effect SD must be positive".into(),
        ));
    }
    let mut differences = Vec::with_capacity(panel.len());
    let mut raw = Vec::with_capacity(panel.len());
    let mut ratio = 0.0;
    for s in panel.students() {
        let name = format!("delta[{}]", s.student_id);
        let (ra, rb) = match (a.get(&name), b.get(&name)) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(Error::Comparison(format!("{name} missing from a summary"))),
        };
        differences.push(rb.mean / nu_b - ra.mean / nu_a);
        raw.push(rb.mean - ra.mean);
        ratio += if ra.sd > 0.0 { rb.sd / ra.sd } else { 1.0 };
    }
    let mut bands = Vec::new();
    for n in 1..=YEARS {
        let mut v: Vec<f64> = panel
            .students()
            .iter()
            .zip(&differences)
            .filter(|(s, _)| s.n_observed() == n)
            .map(|(_, d)| *d)
            .collect();
        if v.is_empty() {
            continue;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.sort_by(f64::total_cmp);
        bands.push(ShiftBand {
            n_observed: n,
            students: v.len(),
            q25: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q75: quantile(&v, 0.75),
            mean,
        });
    }
    let m = raw.iter().sum::<f64>() / raw.len().max(1) as f64;
    let var = raw.iter().map(|d| (d - m).powi(2)).sum::<f64>() / raw.len().max(1) as f64;
    Ok(StudentShift {
        sd_ratio: ratio / panel.len().max(1) as f64,
        difference_variance_share: var / (nu_a * nu_a),
        differences,
        bands,
    })
}

impl StudentShift {
    pub fn write_bands<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n_observed", "students", "q25", "median", "q75", "mean"])?;
        for b in &self.bands {
            w.write_record([
                b.n_observed.to_string(),
                b.students.to_string(),
                format!("{:.6}", b.q25),
                format!("{:.6}", b.median),
                format!("{:.6}", b.q75),
                format!("{:.6}", b.mean),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<shift writer>", e))?;
        Ok(())
    }
}

/// Least-squares line `y = a + slope * x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Slope {
    pub slope: f64,
    pub se: f64,
    pub n: usize,
}

pub fn ols_slope(x: &[f64], y: &[f64]) -> Option<Slope> {
    let n = x.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let (mx, my) = (x.iter().sum::<f64>() / nf, y.iter().sum::<f64>() / nf);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - my - slope * (a - mx)).powi(2))
        .sum();
    Some(Slope {
        slope,
        se: (rss / (nf - 2.0) / sxx).sqrt(),
        n,
    })
}

/// Common slope across groups with separate intercepts (`(group, x, y)`
/// points, each group demeaned before fitting).
pub fn within_group_slope(points: &[(usize, f64, f64)]) -> Option<Slope> {
    let mut sums: HashMap<usize, (f64, f64, usize)> = HashMap::new();
    for &(g, x, y) in points {
        let e = sums.entry(g).or_insert((0.0, 0.0, 0));
        e.0 += x;
        e.1 += y;
        e.2 += 1;
    }
    let n = points.len();
    if n < sums.len() + 2 {
        return None;
    }
    let centered: Vec<(f64, f64)> = points
        .iter()
        .map(|&(g, x, y)| {
            let (sx, sy, k) = sums[&g];
            (x - sx / k as f64, y - sy / k as f64)
        })
        .collect();
    let sxx: f64 = centered.iter().map(|(x, _)| x * x).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let slope = centered.iter().map(|(x, y)| x * y).sum::<f64>() / sxx;
    let rss: f64 = centered.iter().map(|(x, y)| (y - slope * x).powi(2)).sum();
    let df = (n - sums.len() - 1) as f64;
    Some(Slope {
        slope,
        se: (rss / df / sxx).sqrt(),
        n,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientPoint {
    pub grade: usize,
    pub teacher: String,
    pub difference: f64,
    pub complete_proportion: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletenessGradient {
    pub points: Vec<GradientPoint>,
    pub by_grade: [Option<Slope>; YEARS],
    /// Common within-grade slope (separate intercept per grade).
    pub pooled: Option<Slope>,
}

/// `theta_b - theta_a` per classroom against its complete-data share.
pub fn completeness_gradient(
    a: &PosteriorSummary,
    b: &PosteriorSummary,
    rosters: &[ClassroomRoster],
) -> Result<CompletenessGradient> {
    let mut points = Vec::new();
    for t in 0..YEARS {
        let matched: HashMap<String, f64> = matched_teachers(a, b, t + 1)?
            .into_iter()
            .map(|(id, x, y)| (id, y - x))
            .collect();
        for r in rosters.iter().filter(|r| r.year == t) {
            let diff = matched.get(r.teacher.as_str()).ok_or_else(|| {
                Error::Comparison(format!(
                    "teacher {} (grade {}) missing from summaries",
                    r.teacher.as_str(),
                    t + 1
                ))
            })?;
            points.push(GradientPoint {
                grade: t + 1,
                teacher: r.teacher.0.clone(),
                difference: *diff,
                complete_proportion: r.complete_proportion(),
            });
        }
    }
    let fit = |pts: &[&GradientPoint]| {
        let x: Vec<f64> = pts.iter().map(|p| p.complete_proportion).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.difference).collect();
        ols_slope(&x, &y)
    };
    let by_grade = std::array::from_fn(|t| {
        fit(&points
            .iter()
            .filter(|p| p.grade == t + 1)
            .collect::<Vec<_>>())
    });
    let pooled = within_group_slope(
        &points
            .iter()
            .map(|p| (p.grade, p.complete_proportion, p.difference))
            .collect::<Vec<_>>(),
    );
    Ok(CompletenessGradient {
        points,
        by_grade,
        pooled,
    })
}

impl CompletenessGradient {
    pub fn write_points<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["grade", "tchid", "difference", "complete_proportion"])?;
        for p in &self.points {
            w.write_record([
                p.grade.to_string(),
                p.teacher.clone(),
                format!("{:.6}", p.difference),
                format!("{:.6}", p.complete_proportion),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<gradient writer>", e))?;
        Ok(())
    }

    pub fn write_slopes<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["grade", "slope", "se", "classrooms"])?;
        let rows = self
            .by_grade
            .iter()
            .enumerate()
            .map(|(t, s)| ((t + 1).to_string(), *s))
            .chain(std::iter::once(("pooled".to_string(), self.pooled)));
        for (label, s) in rows {
            match s {
                Some(s) => w.write_record([
                    label,
                    format!("{:.6}", s.slope),
                    format!("{:.6}", s.se),
                    s.n.to_string(),
                ])?,
                None => w.write_record([label, "NA".into(), "NA".into(), "0".into()])?,
            }
        }
        w.flush().map_err(|e| Error::io("<slope writer>", e))?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternMeanRow {
    pub group: String,
    pub patterns: String,
    pub students: usize,
    pub grade: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Pattern-specific annual means with their group's patterns and size.
pub fn pattern_means_table(
    summary: &PosteriorSummary,
    grouping: &PatternGrouping,
) -> Result<Vec<PatternMeanRow>> {
    let mut rows = Vec::new();
    let mut found = false;
    for g in grouping.groups() {
        if g.students == 0 {
            continue;
        }
        let patterns = g
            .patterns
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" ");
        for t in g.years() {
            let name = format!("mu[{},{}]", g.label, t + 1);
            let Some(r) = summary.get(&name) else {
                return Err(Error::Comparison(format!(
                    "summary has no {name}; pattern means need a pattern mixture fit"
                )));
            };
            found = true;
            rows.push(PatternMeanRow {
                group: g.label.clone(),
                patterns: patterns.clone(),
                students: g.students,
                grade: t + 1,
                mean: r.mean,
                sd: r.sd,
            });
        }
    }
    if !found {
        return Err(Error::Comparison(
            "no pattern-specific means in summary".into(),
        ));
    }
    Ok(rows)
}

pub fn write_pattern_means<W: Write>(rows: &[PatternMeanRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["group", "patterns", "students", "grade", "mean", "sd"])?;
    for r in rows {
        w.write_record([
            r.group.clone(),
            r.patterns.clone(),
            r.students.to_string(),
            r.grade.to_string(),
            format!("{:.6}", r.mean),
            format!("{:.6}", r.sd),
        ])?;
    }
    w.flush()
        .map_err(|e| Error::io("<pattern means writer>", e))?;
    Ok(())
}

pub fn write_correlations<W: Write>(corr: &[Option<f64>; YEARS], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["grade", "correlation"])?;
    for (t, c) in corr.iter().enumerate() {
        w.write_record([
            (t + 1).to_string(),
            c.map_or("NA".to_string(), |v| format!("{v:.6}")),
        ])?;
    }
    w.flush()
        .map_err(|e| Error::io("<correlation writer>", e))?;
    Ok(())
}

/// GitHub-style markdown table.
pub fn markdown_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = format!(
        "| {} |\n|{}\n",
        header.join(" | "),
        "---|".repeat(header.len())
    );
    for r in rows {
        s.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    s
}
