use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Harrell's C: over pairs with `t_i < t_j` and an event for `i`, the share
/// where `i` has the higher risk score, counting risk ties as one half.
pub fn concordance_index(durations: &[f64], events: &[bool], risk_scores: &[f64]) -> Result<f64> {
    let n = durations.len();
    if events.len() != n || risk_scores.len() != n {
        return Err(Error::Shape("concordance inputs differ in length".into()));
    }
    let mut comparable = 0u64;
    let mut concordant = 0.0;
    for i in 0..n {
        if !events[i] {
            continue;
        }
        for j in 0..n {
            if durations[i] < durations[j] {
                comparable += 1;
                if risk_scores[i] > risk_scores[j] {
                    concordant += 1.0;
                } else if risk_scores[i] == risk_scores[j] {
                    concordant += 0.5;
                }
            }
        }
    }
    if comparable == 0 {
        return Err(Error::InvalidArgument("no comparable pairs".into()));
    }
    Ok(concordant / comparable as f64)
}

/// Right-continuous step function: the value at `t` is the value at the
/// last knot `<= t`, and `initial` before the first knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub initial: f64,
}

impl StepFunction {
    pub fn at(&self, t: f64) -> f64 {
        let k = self.knots.partition_point(|&s| s <= t);
        if k == 0 {
            self.initial
        } else {
            self.values[k - 1]
        }
    }
}

/// Product-limit survival estimate with knots at the distinct event times.
pub fn kaplan_meier(durations: &[f64], events: &[bool]) -> StepFunction {
    let mut order: Vec<usize> = (0..durations.len()).collect();
    order.sort_by(|&a, &b| durations[a].total_cmp(&durations[b]));
    let mut at_risk = durations.len();
    let mut s = 1.0;
    let mut knots = Vec::new();
    let mut values = Vec::new();
    let mut k = 0;
    while k < order.len() {
        let t = durations[order[k]];
        let mut deaths = 0;
        let mut leaving = 0;
        while k < order.len() && durations[order[k]] == t {
            deaths += usize::from(events[order[k]]);
            leaving += 1;
            k += 1;
        }
        if deaths > 0 {
            s *= 1.0 - deaths as f64 / at_risk as f64;
            knots.push(t);
            values.push(s);
        }
        at_risk -= leaving;
    }
    StepFunction {
        knots,
        values,
        initial: 1.0,
    }
}

/// Linear-interpolation quantile (the "type 7" rule) of all durations.
pub fn percentile_horizon(durations: &[f64], percentile: f64) -> Result<f64> {
    if durations.is_empty() {
        return Err(Error::InvalidArgument("no durations".into()));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::InvalidArgument(format!("percentile {percentile} outside [0, 100]")));
    }
    let mut sorted = durations.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * percentile / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concordance_extremes() {
        let t = [1.0, 2.0, 3.0, 4.0];
        let e = [true; 4];
        assert_eq!(concordance_index(&t, &e, &[4.0, 3.0, 2.0, 1.0]).unwrap(), 1.0);
        assert_eq!(concordance_index(&t, &e, &[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(concordance_index(&t, &e, &[7.0; 4]).unwrap(), 0.5);
        assert!(concordance_index(&t, &[false; 4], &[1.0; 4]).is_err());
        assert!(concordance_index(&[1.0; 3], &[true; 3], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn km_simple_cases() {
        let km = kaplan_meier(&[1.0, 2.0], &[true, true]);
        assert_eq!(km.at(0.5), 1.0);
        assert_eq!(km.at(1.0), 0.5);
        assert_eq!(km.at(2.0), 0.0);
        let censored = kaplan_meier(&[1.0, 2.0, 3.0], &[false; 3]);
        assert_eq!(censored.at(10.0), 1.0);
    }

    #[test]
    fn km_six_subject_hand_case() {
        // times 1 2 2 3 4 5, events 1 1 0 0 1 0
        // t=1: 6 at risk, 1 death -> 5/6
        // t=2: 5 at risk, 1 death -> 5/6 * 4/5 = 2/3 (censored one leaves after)
        // t=4: 2 at risk, 1 death -> 2/3 * 1/2 = 1/3
        let km = kaplan_meier(
            &[1.0, 2.0, 2.0, 3.0, 4.0, 5.0],
            &[true, true, false, false, true, false],
        );
        assert_eq!(km.knots, vec![1.0, 2.0, 4.0]);
        let expect = [5.0 / 6.0, 2.0 / 3.0, 1.0 / 3.0];
        for (a, b) in km.values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((km.at(3.5) - 2.0 / 3.0).abs() < 1e-15);
        assert!((km.at(100.0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn horizons() {
        assert_eq!(percentile_horizon(&[10.0, 20.0, 30.0, 40.0], 25.0).unwrap(), 17.5);
        assert_eq!(percentile_horizon(&[5.0], 50.0).unwrap(), 5.0);
        assert_eq!(percentile_horizon(&[3.0, 9.0, 1.0], 100.0).unwrap(), 9.0);
        assert!(percentile_horizon(&[], 50.0).is_err());
    }
}
