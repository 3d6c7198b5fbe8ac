//! Versioned JSON model files and atomic file output.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::{Map, Value};

use crate::direct::DirectModel;
use crate::error::{Error, Result};
use crate::logistic::LogisticMode;
use crate::method::{FittedModel, IndirectModel, MethodKind};
use crate::pairs::DistanceKind;
use crate::trace::Mode;
use crate::SCHEMA_VERSION;

/// A fitted model together with what is needed to apply it to new traces.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: FittedModel,
    /// Preprocessing the model's traces went through.
    pub input_mode: Mode,
    /// Width of the trace rows the model expects.
    pub n_features: usize,
    /// Manifest of the run that produced the model, if any.
    pub manifest: Option<String>,
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it over
/// `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn model_to_json(saved: &SavedModel) -> Result<Value> {
    let mut obj = Map::new();
    obj.insert("schema".into(), Value::from(SCHEMA_VERSION));
    obj.insert("method".into(), serde_json::to_value(saved.model.method())?);
    obj.insert("input_mode".into(), serde_json::to_value(saved.input_mode)?);
    obj.insert("n_features".into(), Value::from(saved.n_features));
    if let Some(m) = &saved.manifest {
        obj.insert("manifest".into(), Value::from(m.as_str()));
    }
    let body = match &saved.model {
        FittedModel::Direct(d) => serde_json::to_value(d)?,
        FittedModel::Indirect(i) => serde_json::to_value(i)?,
    };
    if let Value::Object(fields) = body {
        obj.extend(fields);
    }
    Ok(Value::Object(obj))
}

fn check_schema(obj: &Map<String, Value>) -> Result<()> {
    let found = match obj.get("schema") {
        Some(Value::Number(n)) => n.as_u64(),
        Some(Value::String(s)) => s.trim().parse::<u64>().ok(),
        Some(_) => None,
        None => return Err(Error::Schema("model file has no \"schema\" field".into())),
    }
    .ok_or_else(|| Error::Schema("\"schema\" must be a non-negative integer".into()))?;
    if found != SCHEMA_VERSION as u64 {
        return Err(Error::Version {
            found,
            supported: SCHEMA_VERSION,
        });
    }
    Ok(())
}

pub fn model_from_json(value: Value) -> Result<SavedModel> {
    let obj = match &value {
        Value::Object(o) => o,
        _ => return Err(Error::Schema("model file must hold a JSON object".into())),
    };
    check_schema(obj)?;
    let field = |k: &str| {
        obj.get(k)
            .cloned()
            .ok_or_else(|| Error::Schema(format!("model file lacks \"{k}\"")))
    };
    let method: MethodKind = serde_json::from_value(field("method")?)?;
    let input_mode: Mode = serde_json::from_value(field("input_mode")?)?;
    let n_features: usize = serde_json::from_value(field("n_features")?)?;
    let manifest = obj
        .get("manifest")
        .and_then(|v| v.as_str())
        .map(String::from);
    let model = match method {
        MethodKind::Direct => {
            let d: DirectModel = serde_json::from_value(value.clone())?;
            d.model_ss.validate()?;
            d.model_ds.validate()?;
            FittedModel::Direct(d)
        }
        MethodKind::IndirectScalar | MethodKind::IndirectVectorial => {
            let i: IndirectModel = serde_json::from_value(value.clone())?;
            FittedModel::Indirect(i)
        }
    };
    let saved = SavedModel {
        model,
        input_mode,
        n_features,
        manifest,
    };
    check_consistency(&saved, method)?;
    Ok(saved)
}

fn check_consistency(saved: &SavedModel, method: MethodKind) -> Result<()> {
    if saved.model.method() != method {
        return Err(Error::Schema(format!(
            "method {method} does not match the stored distance {}",
            saved.model.distance_kind()
        )));
    }
    let width = match saved.model.feature_subset() {
        Some(s) => {
            if let Some(&k) = s.iter().find(|&&k| k >= saved.n_features) {
                return Err(Error::Schema(format!(
                    "feature index {k} out of range for {} features",
                    saved.n_features
                )));
            }
            s.len()
        }
        None => saved.n_features,
    };
    if let FittedModel::Indirect(i) = &saved.model {
        let lg = &i.logistic;
        let expected = match lg.mode {
            LogisticMode::Scalar => 1,
            LogisticMode::Vectorial => width,
        };
        let mode_ok =
            (lg.mode == LogisticMode::Vectorial) == (i.distance_kind == DistanceKind::Vectorial);
        if !mode_ok {
            return Err(Error::Schema(
                "logistic mode does not match distance kind".into(),
            ));
        }
        if lg.a.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: lg.a.len(),
            });
        }
        let finite = lg.a.iter().all(|v| v.is_finite()) && lg.b.is_finite();
        let props = lg.f_ss > 0.0 && lg.f_ds > 0.0 && lg.f_ss.is_finite() && lg.f_ds.is_finite();
        if !finite || !props {
            return Err(Error::Schema("invalid logistic parameters".into()));
        }
    }
    Ok(())
}

pub fn save_model(saved: &SavedModel, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&model_to_json(saved)?)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(serde_json::from_str(&text)?)
}
