use serde::{Deserialize, Serialize};

use super::PredictionInstance;

/// Vehicles with `vehicle_id % TEST_MODULUS == 0` form the test side of each source.
pub const TEST_MODULUS: u32 = 4;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<PredictionInstance>,
    pub test: Vec<PredictionInstance>,
}

impl DatasetSplit {
    /// Distinct sources seen in either side, sorted.
    pub fn sources(&self) -> Vec<String> {
        let mut s: Vec<String> = self.train.iter().chain(&self.test).map(|i| i.source.clone()).collect();
        s.sort();
        s.dedup();
        s
    }
}

pub fn is_test_vehicle(vehicle_id: u32) -> bool {
    vehicle_id % TEST_MODULUS == 0
}

/// Partitions instances by vehicle. Vehicle ids are scoped per source, so
/// the rule applies within every source independently and a vehicle never
/// straddles the two sides.
pub fn split(instances: Vec<PredictionInstance>) -> DatasetSplit {
    let (test, train) = instances.into_iter().partition(|i| is_test_vehicle(i.vehicle_id));
    DatasetSplit { train, test }
}

/// Holds out a tenth of the training vehicles for early stopping: those with
/// `(vehicle_id / 4) % 10 == 9`. Returns `(fit, validation)`.
pub fn validation_split(train: &[PredictionInstance]) -> (Vec<PredictionInstance>, Vec<PredictionInstance>) {
    let (val, fit): (Vec<_>, Vec<_>) = train
        .iter()
        .cloned()
        .partition(|i| (i.vehicle_id / TEST_MODULUS) % 10 == 9);
    (fit, val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Lateral, Longitudinal};
    use std::collections::HashSet;

    fn inst(source: &str, vid: u32, frame: u32) -> PredictionInstance {
        PredictionInstance {
            source: source.into(),
            vehicle_id: vid,
            frame,
            lane: 1,
            history: vec![[0.0; 2]; 16],
            future: vec![[0.0; 2]; 25],
            lateral: Lateral::Keep,
            longitudinal: Longitudinal::Normal,
            neighbors: vec![],
        }
    }

    #[test]
    fn eight_vehicles_per_source_give_two_test_vehicles() {
        let mut all = Vec::new();
        for src in ["a", "b", "c"] {
            for vid in 1..=8 {
                for f in [30, 40, 50] {
                    all.push(inst(src, vid, f));
                }
            }
        }
        let n = all.len();
        let s = split(all);
        assert_eq!(s.train.len() + s.test.len(), n);
        for src in ["a", "b", "c"] {
            let test: HashSet<u32> = s.test.iter().filter(|i| i.source == src).map(|i| i.vehicle_id).collect();
            assert_eq!(test.len(), 2);
        }
        let train: HashSet<(String, u32)> = s.train.iter().map(|i| (i.source.clone(), i.vehicle_id)).collect();
        assert!(s.test.iter().all(|i| !train.contains(&(i.source.clone(), i.vehicle_id))));
        assert_eq!(s.sources(), vec!["a", "b", "c"]);
    }

    #[test]
    fn validation_is_a_subset_of_training_vehicles() {
        let train: Vec<_> = (1..200).filter(|v| !is_test_vehicle(*v)).map(|v| inst("a", v, 30)).collect();
        let (fit, val) = validation_split(&train);
        assert_eq!(fit.len() + val.len(), train.len());
        assert!(!val.is_empty());
        assert!(val.iter().all(|i| (i.vehicle_id / 4) % 10 == 9));
    }
}
