//! JSON configuration files for networks and hardware.
//!
//! Network schema:
//!
//! ```json
//! {
//!   "name": "toy", "batch": 4, "input_h": 8, "input_w": 8, "groups": [1, 1],
//!   "layers": [
//!     {"conv": {"n": 1, "m": 2, "k": 3, "stride": 1, "pad": 1}, "act": true,
//!      "pool": {"p": 2, "stride": 2}}
//!   ]
//! }
//! ```
//!
//! `stride` defaults to 1, `pad` to 0, `pad_end` to `pad`, `act` to true and
//! `groups` to all ones. Input extents may be given at the top level or per
//! layer; layers without them inherit the previous layer's output extent.
//! Hardware files carry the [`HwConfig`] fields by name.

use serde_json::{Map, Value};
use std::path::Path;

use crate::arch::HwConfig;
use crate::error::{Error, Result};
use crate::presets::{hw_preset, network_preset, HW_PRESETS, NETWORK_PRESETS};
use crate::spec::{ConvSpec, NetworkSpec, PoolSpec, SuperLayerSpec};

fn parse_err(path: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        message: message.into(),
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| parse_err(path, "expected an object"))
}

fn count(v: &Value, path: &str) -> Result<usize> {
    if let Some(i) = v.as_i64() {
        if i < 0 {
            return Err(parse_err(path, format!("must be non-negative, got {i}")));
        }
    }
    v.as_u64()
        .map(|u| u as usize)
        .ok_or_else(|| parse_err(path, format!("expected a non-negative integer, got {v}")))
}

fn req_count(obj: &Map<String, Value>, prefix: &str, key: &str) -> Result<usize> {
    let path = join(prefix, key);
    match obj.get(key) {
        Some(v) => count(v, &path),
        None => Err(parse_err(&path, "missing required key")),
    }
}

fn opt_count(obj: &Map<String, Value>, prefix: &str, key: &str) -> Result<Option<usize>> {
    match obj.get(key) {
        Some(Value::Null) | None => Ok(None),
        Some(v) => count(v, &join(prefix, key)).map(Some),
    }
}

fn number(obj: &Map<String, Value>, prefix: &str, key: &str) -> Result<f64> {
    let path = join(prefix, key);
    obj.get(key)
        .ok_or_else(|| parse_err(&path, "missing required key"))?
        .as_f64()
        .ok_or_else(|| parse_err(&path, "expected a number"))
}

fn reject_unknown(obj: &Map<String, Value>, prefix: &str, known: &[&str]) -> Result<()> {
    match obj.keys().find(|k| !known.contains(&k.as_str())) {
        Some(k) => Err(parse_err(&join(prefix, k), "unknown key")),
        None => Ok(()),
    }
}

fn parse_layer(
    v: &Value,
    prefix: &str,
    inherited: Option<(usize, usize)>,
) -> Result<SuperLayerSpec> {
    let obj = object(v, prefix)?;
    reject_unknown(obj, prefix, &["conv", "act", "pool", "input_h", "input_w"])?;
    let conv_path = join(prefix, "conv");
    let conv_obj = object(
        obj.get("conv")
            .ok_or_else(|| parse_err(&conv_path, "missing required key"))?,
        &conv_path,
    )?;
    reject_unknown(
        conv_obj,
        &conv_path,
        &["n", "m", "k", "stride", "pad", "pad_end"],
    )?;
    let mut conv = ConvSpec::new(
        req_count(conv_obj, &conv_path, "n")?,
        req_count(conv_obj, &conv_path, "m")?,
        req_count(conv_obj, &conv_path, "k")?,
        opt_count(conv_obj, &conv_path, "stride")?.unwrap_or(1),
        opt_count(conv_obj, &conv_path, "pad")?.unwrap_or(0),
    );
    if let Some(e) = opt_count(conv_obj, &conv_path, "pad_end")? {
        conv = conv.with_pad_end(e);
    }
    let act = match obj.get("act") {
        None | Some(Value::Null) => true,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(parse_err(&join(prefix, "act"), "expected a boolean")),
    };
    let pool = match obj.get("pool") {
        None | Some(Value::Null) => None,
        Some(p) => {
            let pp = join(prefix, "pool");
            let po = object(p, &pp)?;
            reject_unknown(po, &pp, &["p", "stride"])?;
            let size = req_count(po, &pp, "p")?;
            Some(PoolSpec::new(
                size,
                opt_count(po, &pp, "stride")?.unwrap_or(size),
            ))
        }
    };
    let h = opt_count(obj, prefix, "input_h")?.or(inherited.map(|d| d.0));
    let w = opt_count(obj, prefix, "input_w")?.or(inherited.map(|d| d.1));
    let (input_h, input_w) = match (h, w) {
        (Some(h), Some(w)) => (h, w),
        _ => {
            return Err(parse_err(
                &join(prefix, "input_h"),
                "input extent unknown for this layer",
            ))
        }
    };
    Ok(SuperLayerSpec::new(conv, act, pool, input_h, input_w))
}

/// Parses and validates a network document.
pub fn parse_network(text: &str) -> Result<NetworkSpec> {
    let root: Value = serde_json::from_str(text).map_err(|e| parse_err("$", e.to_string()))?;
    let obj = object(&root, "$")?;
    reject_unknown(
        obj,
        "",
        &["name", "batch", "input_h", "input_w", "groups", "layers"],
    )?;
    let name = match obj.get("name") {
        None => "network".to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(parse_err("name", "expected a string")),
    };
    let batch = req_count(obj, "", "batch")?;
    let top = match (
        opt_count(obj, "", "input_h")?,
        opt_count(obj, "", "input_w")?,
    ) {
        (Some(h), Some(w)) => Some((h, w)),
        (None, None) => None,
        _ => {
            return Err(parse_err(
                "input_h",
                "input_h and input_w must be given together",
            ))
        }
    };
    let layer_values = obj
        .get("layers")
        .ok_or_else(|| parse_err("layers", "missing required key"))?
        .as_array()
        .ok_or_else(|| parse_err("layers", "expected an array"))?;
    let mut layers = Vec::with_capacity(layer_values.len());
    let mut inherited = top;
    for (l, v) in layer_values.iter().enumerate() {
        let layer = parse_layer(v, &format!("layers[{l}]"), inherited)?;
        inherited = layer.dims().ok().map(|d| (d.out_h, d.out_w));
        layers.push(layer);
    }
    let groups = match obj.get("groups") {
        None | Some(Value::Null) => vec![1; layers.len()],
        Some(Value::Array(a)) => a
            .iter()
            .enumerate()
            .map(|(i, g)| count(g, &format!("groups[{i}]")))
            .collect::<Result<Vec<_>>>()?,
        Some(_) => return Err(parse_err("groups", "expected an array")),
    };
    let net = NetworkSpec::new(name, batch, layers).with_groups(groups);
    net.validate()?;
    Ok(net)
}

pub fn parse_hw(text: &str) -> Result<HwConfig> {
    let root: Value = serde_json::from_str(text).map_err(|e| parse_err("$", e.to_string()))?;
    let obj = object(&root, "$")?;
    let fields = [
        "num_cu",
        "word_bytes",
        "relu_pool_units",
        "clock_hz",
        "bitstream_bytes",
        "cfg_bus_bytes_per_cycle",
        "cfg_clock_hz",
        "dram_bytes_per_s",
        "max_n",
        "max_m",
        "max_k",
        "line_buffer_bytes",
    ];
    reject_unknown(obj, "", &fields)?;
    let hw = HwConfig {
        num_cu: req_count(obj, "", "num_cu")?,
        word_bytes: req_count(obj, "", "word_bytes")?,
        relu_pool_units: req_count(obj, "", "relu_pool_units")?,
        clock_hz: number(obj, "", "clock_hz")?,
        bitstream_bytes: number(obj, "", "bitstream_bytes")?,
        cfg_bus_bytes_per_cycle: number(obj, "", "cfg_bus_bytes_per_cycle")?,
        cfg_clock_hz: number(obj, "", "cfg_clock_hz")?,
        dram_bytes_per_s: number(obj, "", "dram_bytes_per_s")?,
        max_n: req_count(obj, "", "max_n")?,
        max_m: req_count(obj, "", "max_m")?,
        max_k: req_count(obj, "", "max_k")?,
        line_buffer_bytes: opt_count(obj, "", "line_buffer_bytes")?.map(|v| v as u64),
    };
    hw.validate()?;
    Ok(hw)
}

pub fn network_to_json(net: &NetworkSpec) -> String {
    serde_json::to_string_pretty(net).expect("network specs always serialize")
}

pub fn hw_to_json(hw: &HwConfig) -> String {
    serde_json::to_string_pretty(hw).expect("hardware configs always serialize")
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// A preset name or a path to a JSON file.
pub fn load_network(arg: &str) -> Result<NetworkSpec> {
    if let Some(net) = network_preset(arg) {
        return Ok(net);
    }
    let path = Path::new(arg);
    if !path.exists() {
        return Err(Error::Config(format!(
            "`{arg}` is neither a file nor a network preset ({})",
            NETWORK_PRESETS.join(", ")
        )));
    }
    parse_network(&read(path)?)
}

pub fn load_hw(arg: &str) -> Result<HwConfig> {
    if let Some(hw) = hw_preset(arg) {
        return Ok(hw);
    }
    let path = Path::new(arg);
    if !path.exists() {
        return Err(Error::Config(format!(
            "`{arg}` is neither a file nor a hardware preset ({})",
            HW_PRESETS.join(", ")
        )));
    }
    parse_hw(&read(path)?)
}
