//! CSV reading and writing for every record the harness emits.

use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .with_context(|| format!("malformed CSV in {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use mombo::pevi::CurvePoint;

    #[test]
    fn curve_rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let rows = vec![
            CurvePoint {
                step: 10,
                eval_return_mean: 0.1 + 0.2,
                eval_return_std: 1e-300,
                normalized_return: -3.5,
                loss_critic: 0.0,
                loss_actor: f64::MAX,
                mean_penalty: 1.0 / 3.0,
            },
            CurvePoint {
                step: 20,
                eval_return_mean: 7.0,
                eval_return_std: 0.5,
                normalized_return: 99.99,
                loss_critic: 2.0,
                loss_actor: -1.0,
                mean_penalty: 0.0,
            },
        ];
        write_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "step,eval_return_mean,eval_return_std,normalized_return,loss_critic,loss_actor,mean_penalty\n"
        ));
        assert!(!text.contains('\r'));
        assert_eq!(read_csv::<CurvePoint>(&path).unwrap(), rows);
    }
}
