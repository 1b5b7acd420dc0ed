use serde::{Deserialize, Serialize};

/// One logged point of a training run.
///
/// Autoencoder runs store the reconstruction loss in `gen_loss` and leave the
/// adversarial columns at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: u64,
    pub critic_loss: f64,
    pub gen_loss: f64,
    pub gp: f64,
    pub drift: f64,
    pub wall_clock_s: f64,
    pub metric: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends a record, merging it into the last one when the step repeats.
    pub(crate) fn push(&mut self, record: HistoryRecord) {
        match self.records.last_mut() {
            Some(last) if last.step == record.step => {
                if record.metric.is_some() {
                    last.metric = record.metric;
                }
            }
            _ => self.records.push(record),
        }
    }

    /// Most recent evaluation metric.
    pub fn final_metric(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.metric)
    }

    pub fn best_metric(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.metric).reduce(f64::min)
    }

    /// Wall-clock seconds at the first record whose metric is at most `threshold`.
    pub fn time_to_reach(&self, threshold: f64) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.metric.is_some_and(|m| m <= threshold))
            .map(|r| r.wall_clock_s)
    }

    pub fn is_well_formed(&self) -> bool {
        self.records.windows(2).all(|w| w[0].step < w[1].step && w[0].wall_clock_s <= w[1].wall_clock_s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: u64, t: f64, metric: Option<f64>) -> HistoryRecord {
        HistoryRecord { step, critic_loss: 0.0, gen_loss: 0.0, gp: 0.0, drift: 0.0, wall_clock_s: t, metric }
    }

    #[test]
    fn metric_queries() {
        let mut h = TrainHistory::default();
        h.push(rec(10, 0.5, Some(0.9)));
        h.push(rec(20, 1.0, None));
        h.push(rec(20, 1.0, Some(0.3)));
        h.push(rec(30, 2.0, Some(0.4)));
        assert_eq!(h.len(), 3);
        assert!(h.is_well_formed());
        assert_eq!(h.final_metric(), Some(0.4));
        assert_eq!(h.best_metric(), Some(0.3));
        assert_eq!(h.time_to_reach(0.35), Some(1.0));
        assert_eq!(h.time_to_reach(0.1), None);
    }
}
