//! Line-oriented network files.
//!
//! ```text
//! # comment
//! name toy
//! chain
//! conv 1 8 8 3 16 3 3 1 1        # kind N H W Ci Co Kh Kw Sh Sw [padh padw]
//! fc   1 7 1 1024 10 1 1 1 1
//! ```
//!
//! Conv records without padding fields use `(K - 1) / 2` per axis. Matrix
//! records put the batch rows in `H`.

use anyhow::{anyhow, bail, Context, Result};
use kraken_core::{LayerDescriptor, LayerKind, Network};

pub fn parse(text: &str, default_name: &str) -> Result<Network> {
    let mut name = default_name.to_string();
    let mut chained = false;
    let mut layers = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let at = || format!("line {}", no + 1);
        match fields[0] {
            "name" => {
                let [_, id] = fields[..] else { bail!("{}: expected `name <id>`", at()) };
                name = id.to_string();
            }
            "chain" if fields.len() == 1 => chained = true,
            kind => layers.push(parse_layer(kind, &fields[1..]).with_context(at)?),
        }
    }
    let net = Network { name, layers, chained };
    net.validate().map_err(|e| anyhow!("{e}"))?;
    Ok(net)
}

fn parse_layer(kind: &str, fields: &[&str]) -> Result<LayerDescriptor> {
    let kind: LayerKind = kind.parse().map_err(|e| anyhow!("{e}"))?;
    if fields.len() != 9 && fields.len() != 11 {
        bail!("expected 9 or 11 numeric fields after the kind, found {}", fields.len());
    }
    let v = fields
        .iter()
        .map(|f| f.parse::<usize>().map_err(|_| anyhow!("'{f}' is not a non-negative integer")))
        .collect::<Result<Vec<_>>>()?;
    let (pad_h, pad_w) = match (v.get(9), v.get(10)) {
        (Some(&ph), Some(&pw)) => (ph, pw),
        _ if kind.is_conv() => (v[5].saturating_sub(1) / 2, v[6].saturating_sub(1) / 2),
        _ => (0, 0),
    };
    let layer = LayerDescriptor {
        kind,
        batch: v[0],
        height: v[1],
        width: v[2],
        in_channels: v[3],
        out_channels: v[4],
        kernel_h: v[5],
        kernel_w: v[6],
        stride_h: v[7],
        stride_w: v[8],
        pad_h,
        pad_w,
    };
    layer.validate().map_err(|e| anyhow!("{e}"))?;
    Ok(layer)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_and_defaults() {
        let net = parse(
            "# toy\nname toy\nconv 1 8 8 3 16 3 3 1 1\nconv 2 8 8 16 4 5 5 2 2 0 1  # tail\n\nfc 1 7 1 64 10 1 1 1 1\n",
            "x",
        )
        .unwrap();
        assert_eq!(net.name, "toy");
        assert!(!net.chained);
        assert_eq!(net.layers.len(), 3);
        assert_eq!(net.layers[0], LayerDescriptor::conv(8, 8, 3, 16, 3, 1));
        assert_eq!((net.layers[1].batch, net.layers[1].pad_h, net.layers[1].pad_w), (2, 0, 1));
        assert_eq!(net.layers[2], LayerDescriptor::fully_connected(7, 64, 10));
    }

    #[test]
    fn chained_shapes_must_connect() {
        let net = parse("chain\nconv 1 8 8 3 16 3 3 1 1\nconv 1 8 8 16 4 3 3 1 1\n", "c").unwrap();
        assert!(net.chained);
        assert!(parse("chain\nconv 1 8 8 3 16 3 3 1 1\nconv 1 8 8 8 4 3 3 1 1\n", "c").is_err());
    }

    #[test]
    fn empty_file_is_an_empty_network() {
        let net = parse("# nothing\n", "empty").unwrap();
        assert_eq!(net.name, "empty");
        assert!(net.layers.is_empty());
    }

    #[test]
    fn malformed_records_name_the_line() {
        for (text, needle) in [
            ("conv 1 8 8 3 16 3 3 1", "line 1"),
            ("\nconv 1 8 8 3 16 3 3 1 x", "line 2"),
            ("pool 1 8 8 3 16 3 3 1 1", "unknown layer kind"),
            ("fc 1 7 2 64 10 1 1 1 1", "line 1"),
            ("name", "line 1"),
        ] {
            let err = format!("{:#}", parse(text, "x").unwrap_err());
            assert!(err.contains(needle), "{text:?}: {err}");
        }
    }
}
