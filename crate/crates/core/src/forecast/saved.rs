//! Text files for fitted predictors. Transformer models use their own
//! checkpoint format; the classical predictors are stored as `key value` lines
//! under a `model-checkpoint 1` header.

use std::path::Path;

use super::arma::{ArmaFit, DifferencedArma};
use super::holt_winters::{HoltWinters, HoltWintersParams};
use super::static_max::StaticMax;
use super::transformer::{checkpoint, TransformerForecaster, TransformerModel};
use super::Forecaster;
use crate::error::{Error, Result};

const MAGIC: &str = "model-checkpoint 1";

#[derive(Debug, Clone)]
pub enum SavedModel {
    Static(StaticMax),
    HoltWinters(HoltWinters),
    Arima(DifferencedArma),
    Transformer(Box<TransformerModel>),
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn floats(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .filter(|s| !s.is_empty())
        .map(|x| {
            x.parse()
                .map_err(|_| Error::Checkpoint(format!("`{key}`: cannot parse `{x}`")))
        })
        .collect()
}

impl SavedModel {
    pub fn name(&self) -> &str {
        match self {
            SavedModel::Static(m) => m.name(),
            SavedModel::HoltWinters(m) => m.name(),
            SavedModel::Arima(m) => m.name(),
            SavedModel::Transformer(_) => "transformer",
        }
    }

    pub fn into_forecaster(self) -> Box<dyn Forecaster> {
        match self {
            SavedModel::Static(m) => Box::new(m),
            SavedModel::HoltWinters(m) => Box::new(m),
            SavedModel::Arima(m) => Box::new(m),
            SavedModel::Transformer(m) => Box::new(TransformerForecaster::from_model(*m)),
        }
    }

    pub fn to_text(&self) -> Result<String> {
        let mut s = format!("{MAGIC}\n");
        match self {
            SavedModel::Static(m) => {
                let max = m
                    .max()
                    .ok_or_else(|| Error::Checkpoint("static predictor has not been fitted".into()))?;
                s.push_str(&format!("kind static\nmax {}\n", join(max)));
            }
            SavedModel::HoltWinters(m) => {
                let p = m.params;
                s.push_str(&format!(
                    "kind holt-winters\nalpha {}\nbeta {}\ngamma {}\nperiod {}\n",
                    p.alpha, p.beta, p.gamma, p.period
                ));
            }
            SavedModel::Arima(m) => {
                s.push_str(&format!("kind arima\np {}\nq {}\ncolumns {}\n", m.p, m.q, m.fits.len()));
                for f in &m.fits {
                    s.push_str(&format!(
                        "fit {} {} {} {} {}\n",
                        f.constant,
                        join(&f.ar),
                        join(&f.ma),
                        join(&f.long_ar),
                        f.ridge_used
                    ));
                }
            }
            SavedModel::Transformer(m) => return Ok(checkpoint::to_text(m)),
        }
        s.push_str("end\n");
        Ok(s)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let first = text.lines().next().unwrap_or_default();
        if first.starts_with("transformer-checkpoint") {
            return Ok(SavedModel::Transformer(Box::new(checkpoint::from_text(text)?)));
        }
        if first != MAGIC {
            return Err(Error::Checkpoint(format!("unrecognized model file header `{first}`")));
        }
        let mut fields: Vec<(&str, &str)> = Vec::new();
        for line in text.lines().skip(1) {
            if line == "end" {
                break;
            }
            let (k, v) = line.split_once(' ').unwrap_or((line, ""));
            fields.push((k, v));
        }
        let get = |key: &str| -> Result<&str> {
            fields
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Checkpoint(format!("missing `{key}`")))
        };
        let num = |key: &str| -> Result<f64> { Ok(floats(key, get(key)?)?.first().copied().unwrap_or(f64::NAN)) };
        let int = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("`{key}` is not an integer")))
        };
        match get("kind")? {
            "static" => Ok(SavedModel::Static(StaticMax::with_max(floats("max", get("max")?)?))),
            "holt-winters" => {
                let params = HoltWintersParams {
                    alpha: num("alpha")?,
                    beta: num("beta")?,
                    gamma: num("gamma")?,
                    period: int("period")?,
                };
                params.validate()?;
                Ok(SavedModel::HoltWinters(HoltWinters::new(params)))
            }
            "arima" => {
                let (p, q) = (int("p")?, int("q")?);
                let mut model = DifferencedArma::new(p, q);
                for (_, v) in fields.iter().filter(|(k, _)| *k == "fit") {
                    let parts: Vec<&str> = v.split(' ').collect();
                    if parts.len() != 5 {
                        return Err(Error::Checkpoint(format!("malformed arima fit `{v}`")));
                    }
                    let fit = ArmaFit {
                        p,
                        q,
                        constant: floats("fit", parts[0])?.first().copied().unwrap_or(0.0),
                        ar: floats("fit", parts[1])?,
                        ma: floats("fit", parts[2])?,
                        long_ar: floats("fit", parts[3])?,
                        ridge_used: parts[4] == "true",
                    };
                    if fit.ar.len() != p || fit.ma.len() != q {
                        return Err(Error::Checkpoint(format!("arima fit `{v}` does not match p={p}, q={q}")));
                    }
                    model.fits.push(fit);
                }
                if model.fits.len() != int("columns")? {
                    return Err(Error::Checkpoint("arima column count does not match its fits".into()));
                }
                Ok(SavedModel::Arima(model))
            }
            other => Err(Error::Checkpoint(format!("unknown model kind `{other}`"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::Matrix;

    #[test]
    fn classical_models_round_trip() {
        let series = Matrix::from_vec(200, 1, (0..200).map(|t| 10.0 + ((t * 7) % 13) as f64).collect());
        let mut arima = DifferencedArma::new(2, 1);
        arima.fit(&series).unwrap();
        let models = [
            SavedModel::Static(StaticMax::with_max(vec![7.0, 0.5])),
            SavedModel::HoltWinters(HoltWinters::new(HoltWintersParams::daily())),
            SavedModel::Arima(arima.clone()),
        ];
        for m in models {
            let text = m.to_text().unwrap();
            let back = SavedModel::from_text(&text).unwrap();
            assert_eq!(back.to_text().unwrap(), text);
            assert_eq!(back.name(), m.name());
        }
        let SavedModel::Arima(back) = SavedModel::from_text(&SavedModel::Arima(arima.clone()).to_text().unwrap()).unwrap()
        else {
            panic!("wrong kind");
        };
        assert_eq!(back.fits, arima.fits);
    }

    #[test]
    fn rejects_unknown_files() {
        assert!(SavedModel::from_text("hello\n").is_err());
        assert!(SavedModel::from_text("model-checkpoint 1\nkind lstm\nend\n").is_err());
        assert!(SavedModel::Static(StaticMax::new()).to_text().is_err());
    }
}
