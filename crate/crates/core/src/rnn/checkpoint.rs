//! Plain-text model checkpoints.
//!
//! ```text
//! tbp-checkpoint
//! schema_version=1
//! cell=lstm
//! layers=1
//! ...                      (every NetworkConfig field, then training metadata)
//! param layer0.f.W 36 5    (name rows cols, then one line per row)
//! 1.2345678901234567e-1 ...
//! ...
//! param head.w 1 36
//! param head.b 1 1
//! end
//! ```
//!
//! Floats are written with 17 significant digits, which reproduces every
//! `f64` exactly on load.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{CellKind, CellParams, Gate, Matrix, NetworkConfig, Result, RnnError, RnnModel};

pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &str = "tbp-checkpoint";

/// Bookkeeping carried next to the parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl Default for TrainingMeta {
    fn default() -> Self {
        Self {
            epochs_run: 0,
            best_epoch: 0,
            best_val_loss: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub model: RnnModel,
    pub meta: TrainingMeta,
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_checkpoint(ckpt: &ModelCheckpoint, mut out: impl Write) -> std::io::Result<()> {
    let model = &ckpt.model;
    let cfg = model.config();
    let mut text = String::new();
    let _ = writeln!(text, "{MAGIC}");
    let _ = writeln!(text, "schema_version={SCHEMA_VERSION}");
    let _ = writeln!(text, "cell={}", cfg.cell);
    let _ = writeln!(text, "layers={}", cfg.layers);
    let _ = writeln!(text, "hidden={}", cfg.hidden);
    let _ = writeln!(text, "input={}", cfg.input);
    let _ = writeln!(text, "dropout={}", float(cfg.dropout));
    let _ = writeln!(text, "seq_len={}", cfg.seq_len);
    let _ = writeln!(text, "learning_rate={}", float(cfg.learning_rate));
    let _ = writeln!(text, "batch_size={}", cfg.batch_size);
    let _ = writeln!(text, "max_epochs={}", cfg.max_epochs);
    let _ = writeln!(text, "patience={}", cfg.patience);
    let _ = writeln!(text, "seed={}", cfg.seed);
    let _ = writeln!(text, "epochs_run={}", ckpt.meta.epochs_run);
    let _ = writeln!(text, "best_epoch={}", ckpt.meta.best_epoch);
    let _ = writeln!(text, "best_val_loss={}", float(ckpt.meta.best_val_loss));

    let write_block = |text: &mut String, name: &str, rows: usize, cols: usize, data: &[f64]| {
        let _ = writeln!(text, "param {name} {rows} {cols}");
        for row in data.chunks(cols.max(1)) {
            let line: Vec<String> = row.iter().map(|&v| float(v)).collect();
            let _ = writeln!(text, "{}", line.join(" "));
        }
    };
    for (l, layer) in model.layers().iter().enumerate() {
        for (name, gate) in layer.kind.gate_names().iter().zip(&layer.gates) {
            let (r, c) = gate.w.shape();
            write_block(
                &mut text,
                &format!("layer{l}.{name}.W"),
                r,
                c,
                gate.w.data(),
            );
            let (r, c) = gate.u.shape();
            write_block(
                &mut text,
                &format!("layer{l}.{name}.U"),
                r,
                c,
                gate.u.data(),
            );
            write_block(
                &mut text,
                &format!("layer{l}.{name}.b"),
                1,
                gate.b.len(),
                &gate.b,
            );
        }
    }
    let (head_w, head_b) = model.head();
    write_block(&mut text, "head.w", 1, head_w.len(), head_w);
    write_block(&mut text, "head.b", 1, 1, &[head_b]);
    let _ = writeln!(text, "end");
    out.write_all(text.as_bytes())
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(ckpt, &mut buf).expect("writing to memory");
    std::fs::write(path, buf).map_err(|source| RnnError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| RnnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_checkpoint(file)
}

fn corrupt(msg: impl Into<String>) -> RnnError {
    RnnError::CorruptFile(msg.into())
}

const KEYS: [&str; 14] = [
    "cell",
    "layers",
    "hidden",
    "input",
    "dropout",
    "seq_len",
    "learning_rate",
    "batch_size",
    "max_epochs",
    "patience",
    "seed",
    "epochs_run",
    "best_epoch",
    "best_val_loss",
];

pub fn read_checkpoint(reader: impl Read) -> Result<ModelCheckpoint> {
    let mut lines = BufReader::new(reader).lines().enumerate().map(|(i, l)| {
        l.map(|s| (i + 1, s))
            .map_err(|e| corrupt(format!("unreadable: {e}")))
    });
    let mut next = move || lines.next().transpose();

    match next()? {
        Some((_, l)) if l == MAGIC => {}
        _ => return Err(corrupt("missing header line")),
    }
    let version_line = next()?.ok_or_else(|| corrupt("missing schema_version"))?.1;
    let found: u32 = version_line
        .strip_prefix("schema_version=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| corrupt("missing schema_version"))?;
    if found != SCHEMA_VERSION {
        return Err(RnnError::SchemaMismatch {
            found,
            expected: SCHEMA_VERSION,
        });
    }

    let mut fields = BTreeMap::new();
    let first_param = loop {
        let (no, line) = next()?.ok_or_else(|| corrupt("truncated header"))?;
        if line.starts_with("param ") {
            break line;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| corrupt(format!("line {no}: expected key=value")))?;
        if !KEYS.contains(&k) {
            return Err(corrupt(format!("line {no}: unknown key `{k}`")));
        }
        if fields.insert(k.to_string(), v.to_string()).is_some() {
            return Err(corrupt(format!("line {no}: duplicate key `{k}`")));
        }
    };
    let get = |k: &str| {
        fields
            .get(k)
            .ok_or_else(|| corrupt(format!("missing key `{k}`")))
    };
    fn parse<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| corrupt(format!("bad value for `{k}`: `{v}`")))
    }
    let cell: CellKind = get("cell")?.parse().map_err(corrupt)?;
    let config = NetworkConfig {
        cell,
        layers: parse("layers", get("layers")?)?,
        hidden: parse("hidden", get("hidden")?)?,
        input: parse("input", get("input")?)?,
        dropout: parse("dropout", get("dropout")?)?,
        seq_len: parse("seq_len", get("seq_len")?)?,
        learning_rate: parse("learning_rate", get("learning_rate")?)?,
        batch_size: parse("batch_size", get("batch_size")?)?,
        max_epochs: parse("max_epochs", get("max_epochs")?)?,
        patience: parse("patience", get("patience")?)?,
        seed: parse("seed", get("seed")?)?,
    };
    let meta = TrainingMeta {
        epochs_run: parse("epochs_run", get("epochs_run")?)?,
        best_epoch: parse("best_epoch", get("best_epoch")?)?,
        best_val_loss: parse("best_val_loss", get("best_val_loss")?)?,
    };
    config.validate().map_err(|e| corrupt(e.to_string()))?;

    let mut pending = Some(first_param);
    let mut read_block = |name: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
        let header = match pending.take() {
            Some(h) => h,
            None => {
                next()?
                    .ok_or_else(|| corrupt(format!("truncated before `{name}`")))?
                    .1
            }
        };
        let expected = format!("param {name} {rows} {cols}");
        if header != expected {
            return Err(corrupt(format!("expected `{expected}`, found `{header}`")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (no, line) =
                next()?.ok_or_else(|| corrupt(format!("truncated inside `{name}`")))?;
            let before = data.len();
            for tok in line.split_ascii_whitespace() {
                data.push(
                    tok.parse::<f64>()
                        .map_err(|_| corrupt(format!("line {no}: bad number")))?,
                );
            }
            if data.len() - before != cols {
                return Err(corrupt(format!("line {no}: expected {cols} values")));
            }
        }
        Ok(data)
    };

    let mut layers = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let input = if l == 0 { config.input } else { config.hidden };
        let n = config.hidden;
        let mut gates = Vec::new();
        for name in cell.gate_names() {
            let w = read_block(&format!("layer{l}.{name}.W"), n, input)?;
            let u = read_block(&format!("layer{l}.{name}.U"), n, n)?;
            let b = read_block(&format!("layer{l}.{name}.b"), 1, n)?;
            gates.push(Gate {
                w: Matrix::from_vec(n, input, w).expect("sized block"),
                u: Matrix::from_vec(n, n, u).expect("sized block"),
                b,
            });
        }
        layers.push(CellParams { kind: cell, gates });
    }
    let head_w = read_block("head.w", 1, config.hidden)?;
    let head_b = read_block("head.b", 1, 1)?[0];
    match next()? {
        Some((_, l)) if l == "end" => {}
        _ => return Err(corrupt("missing end marker")),
    }
    let model = RnnModel::from_parts(config, layers, head_w, head_b)?;
    Ok(ModelCheckpoint { model, meta })
}
