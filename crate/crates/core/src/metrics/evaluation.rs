use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ternary {
    #[serde(alias = "yes")]
    Yes,
    #[serde(alias = "partially")]
    Partially,
    #[serde(alias = "no")]
    No,
}

/// One rater's answers for one artifact: six Yes/Partially/No items and two
/// 1-5 ratings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub rater_id: String,
    pub artifact_id: String,
    pub q1: Ternary,
    pub q2: Ternary,
    pub q3: Ternary,
    pub q4: Ternary,
    pub q5: Ternary,
    pub q6: Ternary,
    pub q7: u8,
    pub q8: u8,
    #[serde(default)]
    pub comments: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl EvaluationRecord {
    pub fn validate(&self) -> Result<(), Vec<FieldError>> {
        let mut errs = Vec::new();
        for (field, v) in [("rater_id", &self.rater_id), ("artifact_id", &self.artifact_id)] {
            if v.trim().is_empty() {
                errs.push(FieldError {
                    field: field.into(),
                    message: "must not be empty".into(),
                });
            }
        }
        for (field, v) in [("q7", self.q7), ("q8", self.q8)] {
            if !(1..=5).contains(&v) {
                errs.push(FieldError {
                    field: field.into(),
                    message: format!("Likert value {v} outside 1-5"),
                });
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    pub fn ternary(&self, q: TernaryQuestion) -> Ternary {
        match q {
            TernaryQuestion::Q1 => self.q1,
            TernaryQuestion::Q2 => self.q2,
            TernaryQuestion::Q3 => self.q3,
            TernaryQuestion::Q4 => self.q4,
            TernaryQuestion::Q5 => self.q5,
            TernaryQuestion::Q6 => self.q6,
        }
    }

    pub fn likert(&self, q: LikertQuestion) -> u8 {
        match q {
            LikertQuestion::Q7 => self.q7,
            LikertQuestion::Q8 => self.q8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TernaryQuestion {
    Q1,
    Q2,
    Q3,
    Q4,
    Q5,
    Q6,
}

impl TernaryQuestion {
    pub const ALL: [TernaryQuestion; 6] = [
        TernaryQuestion::Q1,
        TernaryQuestion::Q2,
        TernaryQuestion::Q3,
        TernaryQuestion::Q4,
        TernaryQuestion::Q5,
        TernaryQuestion::Q6,
    ];

    pub fn title(self) -> &'static str {
        match self {
            TernaryQuestion::Q1 => "Q1: Topic-PE Alignment",
            TernaryQuestion::Q2 => "Q2: DCI Representation",
            TernaryQuestion::Q3 => "Q3: Drawing-Prompt Coherence",
            TernaryQuestion::Q4 => "Q4: Capability Statement Match",
            TernaryQuestion::Q5 => "Q5: Performance Level Match",
            TernaryQuestion::Q6 => "Q6: Grade-Level Authenticity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LikertQuestion {
    Q7,
    Q8,
}

impl LikertQuestion {
    pub const ALL: [LikertQuestion; 2] = [LikertQuestion::Q7, LikertQuestion::Q8];

    pub fn title(self) -> &'static str {
        match self {
            LikertQuestion::Q7 => "Q7: Concept Map Quality",
            LikertQuestion::Q8 => "Q8: Scientific Accuracy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TernaryDistribution<T> {
    pub n: usize,
    /// Yes, Partially, No.
    pub counts: [usize; 3],
    pub pct_yes: T,
    pub pct_partially: T,
    pub pct_no: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikertDistribution<T> {
    pub n: usize,
    /// Counts of ratings 1..=5.
    pub counts: [usize; 5],
    pub pct: [T; 5],
}

fn pct<T: Scalar>(k: usize, n: usize) -> T {
    T::from_usize_lossy(k) * T::from_usize_lossy(100) / T::from_usize_lossy(n)
}

/// Unrounded percentages; rounding is a presentation concern of the tables.
pub fn aggregate_ternary<T: Scalar>(
    records: &[EvaluationRecord],
    q: TernaryQuestion,
) -> Result<TernaryDistribution<T>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty("no evaluation records".into()));
    }
    let mut counts = [0usize; 3];
    for r in records {
        counts[match r.ternary(q) {
            Ternary::Yes => 0,
            Ternary::Partially => 1,
            Ternary::No => 2,
        }] += 1;
    }
    let n = records.len();
    Ok(TernaryDistribution {
        n,
        counts,
        pct_yes: pct(counts[0], n),
        pct_partially: pct(counts[1], n),
        pct_no: pct(counts[2], n),
    })
}

pub fn aggregate_likert<T: Scalar>(
    records: &[EvaluationRecord],
    q: LikertQuestion,
) -> Result<LikertDistribution<T>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty("no evaluation records".into()));
    }
    let mut counts = [0usize; 5];
    for r in records {
        let v = r.likert(q);
        if !(1..=5).contains(&v) {
            return Err(MetricsError::Precondition(format!(
                "record ({}, {}) has {q:?} = {v}",
                r.rater_id, r.artifact_id
            )));
        }
        counts[v as usize - 1] += 1;
    }
    let n = records.len();
    Ok(LikertDistribution {
        n,
        counts,
        pct: counts.map(|c| pct(c, n)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary<T> {
    pub n: usize,
    pub ternary: BTreeMap<TernaryQuestion, TernaryDistribution<T>>,
    pub likert: BTreeMap<LikertQuestion, LikertDistribution<T>>,
}

/// All eight questions aggregated. An empty record set yields `n = 0` and
/// empty maps rather than an error, so a fresh service can report it.
pub fn summarize<T: Scalar>(records: &[EvaluationRecord]) -> Result<EvaluationSummary<T>, MetricsError> {
    if records.is_empty() {
        return Ok(EvaluationSummary {
            n: 0,
            ternary: BTreeMap::new(),
            likert: BTreeMap::new(),
        });
    }
    let mut ternary = BTreeMap::new();
    for q in TernaryQuestion::ALL {
        ternary.insert(q, aggregate_ternary(records, q)?);
    }
    let mut likert = BTreeMap::new();
    for q in LikertQuestion::ALL {
        likert.insert(q, aggregate_likert(records, q)?);
    }
    Ok(EvaluationSummary {
        n: records.len(),
        ternary,
        likert,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(q1: Ternary, q7: u8) -> EvaluationRecord {
        EvaluationRecord {
            rater_id: "r1".into(),
            artifact_id: "a1".into(),
            q1,
            q2: Ternary::Yes,
            q3: Ternary::Yes,
            q4: Ternary::Yes,
            q5: Ternary::Yes,
            q6: Ternary::Yes,
            q7,
            q8: 3,
            comments: String::new(),
        }
    }

    #[test]
    fn all_yes_is_hundred_percent() {
        let d: TernaryDistribution<f64> = aggregate_ternary(&vec![rec(Ternary::Yes, 3); 7], TernaryQuestion::Q1).unwrap();
        assert_eq!((d.pct_yes, d.pct_partially, d.pct_no), (100.0, 0.0, 0.0));
    }

    #[test]
    fn single_five_and_uniform_likert() {
        let d: LikertDistribution<f64> = aggregate_likert(&[rec(Ternary::Yes, 5)], LikertQuestion::Q7).unwrap();
        assert_eq!(d.pct, [0.0, 0.0, 0.0, 0.0, 100.0]);
        let uniform: Vec<_> = (1..=5).flat_map(|v| vec![rec(Ternary::No, v); 96]).collect();
        let d: LikertDistribution<f64> = aggregate_likert(&uniform, LikertQuestion::Q7).unwrap();
        assert_eq!(d.pct, [20.0; 5]);
    }

    #[test]
    fn likert_six_fails_validation_on_q7() {
        let errs = rec(Ternary::Yes, 6).validate().unwrap_err();
        assert_eq!(errs[0].field, "q7");
    }

    #[test]
    fn lowercase_answers_accepted() {
        let r: EvaluationRecord = serde_json::from_str(
            r#"{"rater_id":"r","artifact_id":"a","q1":"yes","q2":"Partially","q3":"no","q4":"No","q5":"Yes","q6":"Yes","q7":4,"q8":2}"#,
        )
        .unwrap();
        assert_eq!(r.q1, Ternary::Yes);
        assert_eq!(r.q3, Ternary::No);
    }
}
