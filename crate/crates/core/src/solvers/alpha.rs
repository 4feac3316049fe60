use crate::error::{Error, Result};

/// `decades * per_decade + 1` log-spaced weights centred on `center`.
pub fn log_ladder(center: f64, decades: usize, per_decade: usize) -> Result<Vec<f64>> {
    if !(center > 0.0 && center.is_finite()) || per_decade == 0 || decades == 0 {
        return Err(Error::InvalidParameter(format!("bad ladder: center {center}, {decades} decades")));
    }
    let n = decades * per_decade;
    let half = n as i64 / 2;
    Ok((0..=n as i64).map(|k| center * 10f64.powf((k - half) as f64 / per_decade as f64)).collect())
}

/// Result of a ladder search; `scores` holds every evaluated rung.
#[derive(Clone, Debug, PartialEq)]
pub struct LadderSearch {
    pub ladder: Vec<f64>,
    pub best: usize,
    pub alpha: f64,
    pub score: f64,
    pub scores: Vec<(usize, f64)>,
}

/// Minimizes `score` over the ladder: every fifth rung first, then two and
/// then one rung either side of the running best.
pub fn search_ladder(ladder: &[f64], mut score: impl FnMut(f64) -> Result<f64>) -> Result<LadderSearch> {
    if ladder.is_empty() {
        return Err(Error::InvalidParameter("empty ladder".into()));
    }
    let mut seen: Vec<Option<f64>> = vec![None; ladder.len()];
    let mut order = Vec::new();
    let mut eval = |k: usize, seen: &mut Vec<Option<f64>>| -> Result<()> {
        if seen[k].is_none() {
            let s = score(ladder[k])?;
            seen[k] = Some(if s.is_nan() { f64::INFINITY } else { s });
            order.push(k);
        }
        Ok(())
    };
    let best_of = |seen: &Vec<Option<f64>>| {
        seen.iter()
            .enumerate()
            .filter_map(|(k, s)| s.map(|s| (k, s)))
            .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
            .0
    };
    let last = ladder.len() - 1;
    for k in (0..=last).step_by(5) {
        eval(k, &mut seen)?;
    }
    if last % 5 != 0 {
        eval(last, &mut seen)?;
    }
    for step in [2usize, 1] {
        let b = best_of(&seen);
        if b >= step {
            eval(b - step, &mut seen)?;
        }
        if b + step <= last {
            eval(b + step, &mut seen)?;
        }
    }
    let best = best_of(&seen);
    Ok(LadderSearch {
        ladder: ladder.to_vec(),
        best,
        alpha: ladder[best],
        score: seen[best].unwrap_or(f64::INFINITY),
        scores: order.iter().map(|&k| (k, seen[k].unwrap())).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_shape() {
        let l = log_ladder(2.0, 4, 10).unwrap();
        assert_eq!(l.len(), 41);
        assert!((l[20] - 2.0).abs() < 1e-15);
        assert!((l[0] - 2e-2).abs() < 1e-15);
        assert!((l[40] / l[0] - 1e4).abs() < 1e-8);
        assert!(log_ladder(0.0, 4, 10).is_err());
    }

    #[test]
    fn finds_minimum_of_unimodal_score() {
        let l = log_ladder(1.0, 4, 10).unwrap();
        for target in [0, 3, 17, 23, 38, 40] {
            let t = l[target].ln();
            let res = search_ladder(&l, |a| Ok((a.ln() - t).powi(2))).unwrap();
            assert_eq!(res.best, target, "target {target}");
            assert!(res.scores.len() <= 13);
        }
    }

    #[test]
    fn nan_scores_never_win() {
        let l = log_ladder(1.0, 1, 4).unwrap();
        let res = search_ladder(&l, |a| Ok(if a > 1.0 { f64::NAN } else { -a })).unwrap();
        assert_eq!(res.alpha, 1.0);
    }
}
