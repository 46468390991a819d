//! Checkpoint layout: a text header of `key value` lines ending in `end`,
//! then every tensor in a fixed order (scaler mean, scaler std, per block
//! bottleneck / weight / bias, output weight, output bias), row-major.
//! With `encoding text` each value is one decimal line (`{:e}`, exact for
//! f64); with `encoding f32le` the bytes after the header are packed
//! little-endian f32.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array1;

use super::model::{ModelShape, Params, SpotterModel};
use super::{FeatureScaler, SpotterError};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "wwkit-spotter";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Encoding {
    #[default]
    Text,
    F32Le,
}

impl Encoding {
    fn tag(self) -> &'static str {
        match self {
            Encoding::Text => "text",
            Encoding::F32Le => "f32le",
        }
    }
}

impl FromStr for Encoding {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" => Ok(Encoding::Text),
            "f32le" => Ok(Encoding::F32Le),
            _ => Err(format!("unknown encoding {s:?} (expected text or f32le)")),
        }
    }
}

fn header(m: &SpotterModel, enc: Encoding) -> String {
    let s = &m.shape;
    let smooth = m.smooth_window.map_or("none".to_string(), |w| w.to_string());
    format!(
        "{MAGIC} {FORMAT_VERSION}\nclasses {}\ninput_dim {}\nbottleneck {}\nhidden {}\nblocks {}\nnonlinearity relu\nsmooth_window {smooth}\nencoding {}\nend\n",
        s.classes,
        s.input_dim,
        s.bottleneck,
        s.hidden,
        s.blocks,
        enc.tag()
    )
}

fn all_tensors(m: &SpotterModel) -> Vec<&[f64]> {
    let mut v = vec![
        m.scaler.mean.as_slice().expect("standard layout"),
        m.scaler.std.as_slice().expect("standard layout"),
    ];
    v.extend(m.params.tensors());
    v
}

pub fn encode_model(m: &SpotterModel, enc: Encoding) -> Vec<u8> {
    let mut out = header(m, enc).into_bytes();
    for t in all_tensors(m) {
        for v in t {
            match enc {
                Encoding::Text => writeln!(out, "{v:e}").expect("write to vec"),
                Encoding::F32Le => out.extend_from_slice(&(*v as f32).to_le_bytes()),
            }
        }
    }
    out
}

pub fn save_model(m: &SpotterModel, path: &Path, enc: Encoding) -> Result<(), SpotterError> {
    m.check()?;
    fs::write(path, encode_model(m, enc)).map_err(|source| SpotterError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn decode_model(bytes: &[u8], path: &str) -> Result<SpotterModel, SpotterError> {
    let err = |msg: String| SpotterError::Checkpoint { path: path.to_string(), msg };
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| err("truncated header".into()))?;
        let line = std::str::from_utf8(&rest[..nl]).map_err(|_| err("header is not UTF-8".into()))?;
        pos += nl + 1;
        if line == "end" {
            break;
        }
        lines.push(line.to_string());
        if lines.len() > 64 {
            return Err(err("header has no end marker".into()));
        }
    }
    let mut it = lines.iter();
    let first = it.next().ok_or_else(|| err("empty header".into()))?;
    match first.split_once(' ') {
        Some((MAGIC, v)) if v == FORMAT_VERSION.to_string() => {}
        Some((MAGIC, v)) => return Err(err(format!("unsupported format version {v} (expected {FORMAT_VERSION})"))),
        _ => return Err(err("not a spotter checkpoint".into())),
    }
    let mut fields = std::collections::BTreeMap::new();
    for l in it {
        let (k, v) = l.split_once(' ').ok_or_else(|| err(format!("malformed header line {l:?}")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| err(format!("missing header field {k}")));
    let num = |k: &str| -> Result<usize, SpotterError> {
        get(k)?.parse().map_err(|_| err(format!("header field {k} is not an integer")))
    };
    if get("nonlinearity")? != "relu" {
        return Err(err(format!("unsupported nonlinearity {}", get("nonlinearity")?)));
    }
    let shape = ModelShape {
        input_dim: num("input_dim")?,
        bottleneck: num("bottleneck")?,
        hidden: num("hidden")?,
        blocks: num("blocks")?,
        classes: num("classes")?,
    };
    shape.validate()?;
    let smooth_window = match get("smooth_window")?.as_str() {
        "none" => None,
        s => Some(s.parse().map_err(|_| err("smooth_window is not an integer".into()))?),
    };
    let enc: Encoding = get("encoding")?.parse().map_err(err)?;

    let mut scaler = FeatureScaler {
        mean: Array1::zeros(shape.input_dim),
        std: Array1::zeros(shape.input_dim),
    };
    let mut params = Params::zeros(&shape);
    let total: usize = 2 * shape.input_dim + shape.num_params();
    let body = &bytes[pos..];
    let values: Vec<f64> = match enc {
        Encoding::Text => {
            let text = std::str::from_utf8(body).map_err(|_| err("body is not UTF-8".into()))?;
            if !text.is_empty() && !text.ends_with('\n') {
                return Err(err("truncated value list".into()));
            }
            let v: Vec<f64> = text
                .lines()
                .map(|l| l.trim().parse::<f64>().map_err(|_| err(format!("bad value {l:?}"))))
                .collect::<Result<_, _>>()?;
            v
        }
        Encoding::F32Le => {
            if body.len() % 4 != 0 {
                return Err(err("body length is not a multiple of 4".into()));
            }
            body.chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect()
        }
    };
    if values.len() != total {
        return Err(err(format!("expected {total} values, found {}", values.len())));
    }
    let mut src = values.into_iter();
    let mut dst: Vec<&mut [f64]> = vec![
        scaler.mean.as_slice_mut().expect("standard layout"),
        scaler.std.as_slice_mut().expect("standard layout"),
    ];
    dst.extend(params.tensors_mut().into_iter().map(|(t, _)| t));
    for t in dst {
        t.iter_mut().for_each(|v| *v = src.next().expect("count checked"));
    }
    if scaler.std.iter().any(|&s| !(s > 0.0)) {
        return Err(err("scaler std entries must be > 0".into()));
    }
    let mut m = SpotterModel::new(shape, params, scaler)?;
    m.smooth_window = smooth_window;
    Ok(m)
}

pub fn load_model(path: &Path) -> Result<SpotterModel, SpotterError> {
    let bytes = fs::read(path).map_err(|source| SpotterError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_model(&bytes, &path.display().to_string())
}

/// [`load_model`] restricted to the 2-class wake-word pipeline.
pub fn load_spotter(path: &Path) -> Result<SpotterModel, SpotterError> {
    let m = load_model(path)?;
    if m.shape.classes != 2 {
        return Err(SpotterError::Shape(format!(
            "checkpoint has {} classes, the pipeline needs 2",
            m.shape.classes
        )));
    }
    Ok(m)
}
