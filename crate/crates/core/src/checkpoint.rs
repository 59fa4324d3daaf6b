//! Model checkpoints as JSON lines: a header with the format version and
//! model configuration, then one line per parameter tensor.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data::real;
use crate::error::{Error, Result};
use crate::model::{Model, ModelParams};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    config: ModelConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamLine {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub fn to_string(model: &Model) -> Result<String> {
    let header = Header { format_version: FORMAT_VERSION, config: model.config.clone() };
    let mut out = serde_json::to_string(&header).map_err(|e| Error::Data(e.to_string()))?;
    out.push('\n');
    let mut lines = Vec::new();
    model.params.map(&mut |name, t| {
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let data: Vec<String> = t.data().iter().map(|&x| real(x)).collect();
        lines.push(format!(
            "{{\"name\":{},\"shape\":[{}],\"data\":[{}]}}\n",
            serde_json::to_string(name).expect("string serializes"),
            shape.join(","),
            data.join(",")
        ));
    });
    out.extend(lines);
    Ok(out)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let text = to_string(model)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let header_line = match lines.next() {
        Some((_, l)) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(parse_err(1, "empty checkpoint".into())),
    };
    let header: Header = serde_json::from_str(&header_line).map_err(|e| parse_err(1, e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(parse_err(1, format!("unsupported format version {}", header.format_version)));
    }
    header.config.validate()?;
    let template = ModelParams::init(&header.config)?;
    let names = template.names();
    let mut tensors = Vec::with_capacity(names.len());
    for (k, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: ParamLine = serde_json::from_str(&line).map_err(|e| parse_err(k + 1, e.to_string()))?;
        let expected = names.get(tensors.len()).ok_or_else(|| parse_err(k + 1, "unexpected extra parameter".into()))?;
        if &p.name != expected {
            return Err(parse_err(k + 1, format!("expected parameter {expected}, found {}", p.name)));
        }
        let t = Tensor::new(&p.shape, p.data).map_err(|e| parse_err(k + 1, e.to_string()))?;
        tensors.push(t);
    }
    let params = template.from_tensors(tensors)?;
    Ok(Model { config: header.config, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;

    #[test]
    fn roundtrip_every_variant() {
        let dir = tempfile::tempdir().unwrap();
        let base = ModelConfig { n_features: 3, t_max: 4, d_k: 2, d_ff: 3, d_h: 2, d_u: 3, g_c: 2, g_d: 2, seed: 9, ..Default::default() };
        for v in Variant::ALL {
            let model = Model::new(v.apply(&base)).unwrap();
            let path = dir.path().join(format!("{}.jsonl", v.name()));
            save(&model, &path).unwrap();
            assert_eq!(load(&path).unwrap(), model);
            assert_eq!(std::fs::read_to_string(&path).unwrap(), to_string(&model).unwrap());
        }
    }

    #[test]
    fn wrong_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, "{\"format_version\":2,\"config\":{}}\n").unwrap();
        assert!(matches!(load(&path), Err(Error::Parse { line: 1, .. })));
    }
}
