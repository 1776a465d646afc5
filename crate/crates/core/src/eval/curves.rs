use std::fmt::Write as _;
use std::path::Path;

use super::EvalError;
use crate::training::EvalRecord;

/// Dev accuracy over steps for one labelled run.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub label: String,
    pub points: Vec<EvalRecord>,
}

/// Wide table: `step` followed by one accuracy column per curve. All curves must share their steps.
pub fn curves_csv(curves: &[Curve]) -> Result<String, EvalError> {
    let mut out = String::from("step");
    for c in curves {
        out.push(',');
        out.push_str(&c.label);
    }
    out.push('\n');
    let Some(first) = curves.first() else {
        return Ok(out);
    };
    for c in &curves[1..] {
        let misaligned = |detail: String| EvalError::Misaligned {
            label: c.label.clone(),
            first: first.label.clone(),
            detail,
        };
        if c.points.len() != first.points.len() {
            return Err(misaligned(format!("{} points vs {}", c.points.len(), first.points.len())));
        }
        if let Some((a, b)) = c.points.iter().zip(&first.points).find(|(a, b)| a.step != b.step) {
            return Err(misaligned(format!("step {} vs {}", a.step, b.step)));
        }
    }
    for (i, p) in first.points.iter().enumerate() {
        write!(out, "{}", p.step).expect("write to string");
        for c in curves {
            write!(out, ",{}", c.points[i].dev_token_accuracy).expect("write to string");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn emit_curves(curves: &[Curve], path: &Path) -> Result<(), EvalError> {
    let body = curves_csv(curves)?;
    std::fs::write(path, body).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(label: &str, steps: &[usize]) -> Curve {
        Curve {
            label: label.into(),
            points: steps
                .iter()
                .map(|&s| EvalRecord {
                    step: s,
                    dev_token_accuracy: s as f64 / 1000.0,
                })
                .collect(),
        }
    }

    #[test]
    fn columns_per_curve() {
        assert_eq!(curves_csv(&[curve("a", &[0, 100])]).unwrap(), "step,a\n0,0\n100,0.1\n");
        let two = curves_csv(&[curve("a", &[0, 100]), curve("b", &[0, 100])]).unwrap();
        assert_eq!(two.lines().nth(2).unwrap(), "100,0.1,0.1");
        assert_eq!(curves_csv(&[curve("a", &[])]).unwrap(), "step,a\n");
    }

    #[test]
    fn misaligned_rejected() {
        assert!(matches!(
            curves_csv(&[curve("a", &[0, 100]), curve("b", &[0, 50])]),
            Err(EvalError::Misaligned { .. })
        ));
    }
}
