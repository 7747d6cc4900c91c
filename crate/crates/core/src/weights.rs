//! Named weight matrices for one mechanism instance.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::config::{AttnConfig, Variant};
use crate::error::{AttnError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WeightKind {
    Q,
    K,
    V,
    DQ,
    UQ,
    QR,
    DKV,
    UK,
    UV,
    KR,
    AQ,
    CQ,
    AK,
    CK,
    AV,
    CV,
    KV,
    G,
    O,
}

/// A weight kind plus, for per-group matrices (GLA, MLRA-2), the group index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WeightName {
    pub kind: WeightKind,
    pub group: Option<usize>,
}

impl WeightName {
    #[must_use]
    pub const fn of(kind: WeightKind) -> Self {
        WeightName { kind, group: None }
    }

    #[must_use]
    pub const fn grouped(kind: WeightKind, group: usize) -> Self {
        WeightName {
            kind,
            group: Some(group),
        }
    }
}

impl fmt::Display for WeightName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            WeightKind::O => "O,attn".to_string(),
            other => format!("{other:?}"),
        };
        match self.group {
            Some(j) => write!(f, "W^{{{j},{k}}}"),
            None => write!(f, "W^{k}"),
        }
    }
}

/// Shapes of every matrix the variant owns, in a fixed order.
pub fn weight_shapes(cfg: &AttnConfig) -> Result<Vec<(WeightName, [usize; 2])>> {
    use WeightKind::*;
    cfg.validate()?;
    let (d, h, dh, dr) = (cfg.d, cfg.h, cfg.d_h, cfg.d_hr);
    let one = WeightName::of;
    let mut v: Vec<(WeightName, [usize; 2])> = Vec::new();
    match cfg.variant {
        Variant::Mha | Variant::Mqa | Variant::Gqa => {
            let g = cfg.kv_heads();
            v.push((one(Q), [d, h * dh]));
            v.push((one(K), [d, g * dh]));
            v.push((one(V), [d, g * dh]));
        }
        Variant::Mfa => {
            v.push((one(CQ), [d, cfg.d_cq]));
            v.push((one(UQ), [cfg.d_cq, h * 2 * dh]));
            v.push((one(K), [d, 2 * dh]));
            v.push((one(V), [d, 2 * dh]));
        }
        Variant::Tpa => {
            let (bq, bkv) = (cfg.beta_q, cfg.beta_kv);
            v.push((one(AQ), [d, bq * h]));
            v.push((one(CQ), [d, bq * dh]));
            v.push((one(AK), [d, bkv * h]));
            v.push((one(CK), [d, bkv * dh]));
            v.push((one(AV), [d, bkv * h]));
            v.push((one(CV), [d, bkv * dh]));
        }
        Variant::Gta => {
            v.push((one(Q), [d, h * dh]));
            v.push((one(KV), [d, cfg.g * dh]));
            v.push((one(KR), [d, dr]));
        }
        Variant::Mla | Variant::Gla | Variant::Mlra => {
            v.push((one(DQ), [d, cfg.d_cq]));
            v.push((one(UQ), [cfg.d_cq, h * dh]));
            v.push((one(QR), [cfg.d_cq, h * dr]));
            v.push((one(KR), [d, dr]));
            let groups = cfg.kv_norm_groups();
            if groups == 1 {
                v.push((one(DKV), [d, cfg.d_c]));
                v.push((one(UK), [cfg.d_c, h * dh]));
                v.push((one(UV), [cfg.d_c, h * dh]));
            } else {
                let (w, r) = (cfg.d_c / groups, h / groups);
                for j in 0..groups {
                    v.push((WeightName::grouped(DKV, j), [d, w]));
                }
                for j in 0..groups {
                    v.push((WeightName::grouped(UK, j), [w, r * dh]));
                    v.push((WeightName::grouped(UV, j), [w, r * dh]));
                }
            }
        }
    }
    let out_w = h * cfg.head_out_dim();
    if cfg.gated {
        v.push((one(G), [d, out_w]));
    }
    v.push((one(O), [out_w, d]));
    Ok(v)
}

/// Initialization recipe: every matrix N(0, sigma²), optionally with the
/// output projection zeroed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightInit {
    pub sigma: f64,
    pub zero_output: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    label: String,
    mats: BTreeMap<WeightName, Tensor>,
}

pub fn build_weights(cfg: &AttnConfig, sigma: f64, rng: &Rng) -> Result<WeightSet> {
    build_weights_with(
        cfg,
        WeightInit {
            sigma,
            zero_output: false,
        },
        rng,
    )
}

/// Each matrix draws from its own named stream, so adding or reordering
/// matrices never perturbs the others.
pub fn build_weights_with(cfg: &AttnConfig, init: WeightInit, rng: &Rng) -> Result<WeightSet> {
    if init.sigma < 0.0 || init.sigma.is_nan() {
        return Err(AttnError::config(format!("sigma must be >= 0, got {}", init.sigma)));
    }
    let mut mats = BTreeMap::new();
    for (name, shape) in weight_shapes(cfg)? {
        let sigma = if name.kind == WeightKind::O && init.zero_output {
            0.0
        } else {
            init.sigma
        };
        let mut stream = rng.fork(&name.to_string());
        mats.insert(name, Tensor::gaussian(&shape, sigma, &mut stream));
    }
    Ok(WeightSet {
        label: cfg.label(),
        mats,
    })
}

impl WeightSet {
    #[must_use]
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn get(&self, name: WeightName) -> Result<&Tensor> {
        self.mats
            .get(&name)
            .ok_or_else(|| AttnError::config(format!("{} has no weight {name}", self.label)))
    }

    pub fn get_mut(&mut self, name: WeightName) -> Result<&mut Tensor> {
        let label = self.label.clone();
        self.mats
            .get_mut(&name)
            .ok_or_else(|| AttnError::config(format!("{label} has no weight {name}")))
    }

    /// Replace a matrix, keeping its shape.
    pub fn replace(&mut self, name: WeightName, t: Tensor) -> Result<()> {
        let cur = self.get(name)?;
        if cur.shape() != t.shape() {
            return Err(AttnError::dim(format!("replace {name}"), cur.shape(), t.shape()));
        }
        self.mats.insert(name, t);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&WeightName, &Tensor)> {
        self.mats.iter()
    }

    /// Total element count across every matrix.
    #[must_use]
    pub fn element_count(&self) -> u64 {
        self.mats.values().map(|t| t.len() as u64).sum()
    }

    /// Check every matrix against the expected shapes for `cfg`.
    pub fn check_shapes(&self, cfg: &AttnConfig) -> Result<()> {
        let expected = weight_shapes(cfg)?;
        if expected.len() != self.mats.len() {
            return Err(AttnError::Integrity(format!(
                "{} expects {} matrices, set holds {}",
                cfg.label(),
                expected.len(),
                self.mats.len()
            )));
        }
        for (name, shape) in expected {
            let t = self.get(name)?;
            if t.shape() != shape {
                return Err(AttnError::dim(format!("weight {name}"), t.shape(), &shape));
            }
        }
        Ok(())
    }
}

/// Read access to rectangular blocks of named weights. Implemented by full
/// weight sets and by per-device shards, which refuse blocks they do not own.
pub trait WeightSource {
    fn block(&self, name: WeightName, rows: Range<usize>, cols: Range<usize>) -> Result<Tensor>;
}

/// Copy `rows × cols` out of a 2-D tensor.
pub fn sub_block(t: &Tensor, rows: Range<usize>, cols: Range<usize>) -> Result<Tensor> {
    let (r, c) = t.dims2("sub_block")?;
    if rows.end > r || cols.end > c || rows.start > rows.end || cols.start > cols.end {
        return Err(AttnError::dim(
            format!("sub_block rows {rows:?} cols {cols:?}"),
            t.shape(),
            &[],
        ));
    }
    let w = cols.end - cols.start;
    let mut data = Vec::with_capacity((rows.end - rows.start) * w);
    for i in rows.clone() {
        data.extend_from_slice(&t.data()[i * c + cols.start..i * c + cols.end]);
    }
    Tensor::new(vec![rows.end - rows.start, w], data)
}

impl WeightSource for WeightSet {
    fn block(&self, name: WeightName, rows: Range<usize>, cols: Range<usize>) -> Result<Tensor> {
        sub_block(self.get(name)?, rows, cols)
    }
}
