//! Ground-truth generation: Gaussian items plus a frozen cosine-MLP scorer.

use ndarray::Array2;
use preflab_core::error::{Error, Result};
use preflab_core::items::ItemSet;
use preflab_core::scorers::{ModelInputs, ModelSpec, ScoreModel, ScoreTable};

/// A frozen synthetic task: the item universe, the ground-truth score
/// model, and its precomputed score table.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub items: ItemSet,
    pub model: ScoreModel,
    pub table: ScoreTable,
}

/// Sample `m` standard-normal items in `d` dimensions and freeze a
/// cosine-MLP ground truth initialized from `seed`. Scores are cosines, so
/// the whole table lies in `[-1, 1]` with unit diagonal.
pub fn gen_ground_truth(
    m: usize,
    d: usize,
    hidden: usize,
    embed: usize,
    seed: u64,
) -> Result<GroundTruth> {
    if m < 2 || d == 0 || hidden == 0 || embed == 0 {
        return Err(Error::InvalidInput("dimensions must be positive (m >= 2)".into()));
    }
    let items = ItemSet::gaussian(m, d, seed)?;
    let model = ScoreModel::init(
        ModelSpec::CosineMlp {
            input: d,
            hidden,
            embed,
        },
        seed,
    );
    let table = model.score_table(ModelInputs::items(&items));
    Ok(GroundTruth {
        items,
        model,
        table,
    })
}

impl GroundTruth {
    pub fn m(&self) -> usize {
        self.items.m()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<Vec<f64>> = self.table.rows().into_iter().map(|r| r.to_vec()).collect();
        serde_json::json!({
            "items": self.items.to_json(),
            "model": self.model.to_json(),
            "score_table": rows,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let items = ItemSet::from_json(
            value
                .get("items")
                .ok_or_else(|| Error::InvalidInput("missing items".into()))?,
        )?;
        let model = ScoreModel::from_json(
            value
                .get("model")
                .ok_or_else(|| Error::InvalidInput("missing model".into()))?,
        )?;
        let table = if let Some(rows) = value.get("score_table") {
            let rows: Vec<Vec<f64>> = serde_json::from_value(rows.clone())?;
            let m = rows.len();
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            Array2::from_shape_vec((m, flat.len() / m.max(1)), flat)
                .map_err(|e| Error::InvalidInput(e.to_string()))?
        } else {
            model.score_table(ModelInputs::items(&items))
        };
        Ok(Self {
            items,
            model,
            table,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_truth_is_deterministic_and_bounded() {
        let a = gen_ground_truth(6, 12, 5, 4, 42).unwrap();
        let b = gen_ground_truth(6, 12, 5, 4, 42).unwrap();
        assert_eq!(a.table, b.table);
        assert!(a.table.iter().all(|&v| (-1.0..=1.0).contains(&v)));
        for i in 0..6 {
            assert!((a.table[[i, i]] - 1.0).abs() < 1e-12);
        }
        let c = gen_ground_truth(6, 12, 5, 4, 43).unwrap();
        assert_ne!(a.table, c.table);
    }

    #[test]
    fn json_round_trip() {
        let truth = gen_ground_truth(4, 8, 4, 3, 7).unwrap();
        let back = GroundTruth::from_json(&truth.to_json()).unwrap();
        assert_eq!(truth.table, back.table);
        assert_eq!(truth.items, back.items);
    }
}
