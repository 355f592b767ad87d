use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Dilated residual network.
    Drl,
    /// Dilated residual network with the fixed Sobel edge layer in front.
    DrlE,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Drl => "drl",
            Variant::DrlE => "drl-e",
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Variant::Drl => 0,
            Variant::DrlE => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Variant::Drl),
            1 => Some(Variant::DrlE),
            _ => None,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drl" => Ok(Variant::Drl),
            "drl-e" => Ok(Variant::DrlE),
            other => Err(invalid(format!(
                "unknown variant '{other}' (expected drl or drl-e)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// Odd kernel size.
    pub filter: usize,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub batch_norm: bool,
    pub activation: Activation,
}

/// Where a concatenated input comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    /// The raw single-channel network input.
    Image,
    /// Output of trainable layer `k` (1-based).
    Layer(usize),
}

impl Source {
    fn position(self) -> usize {
        match self {
            Source::Image => 0,
            Source::Layer(k) => k,
        }
    }
}

/// The input of layer `destination` (1-based) is the previous layer's
/// output with `source` concatenated after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortcut {
    pub source: Source,
    pub destination: usize,
}

/// Number of fixed edge maps the edge layer appends to the image.
pub const EDGE_MAPS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub variant: Variant,
    pub layers: Vec<LayerSpec>,
    pub shortcuts: Vec<Shortcut>,
    pub edge_layer: bool,
}

impl ArchSpec {
    /// Validates layer parameters, shortcut ordering, and channel closure.
    pub fn new(
        variant: Variant,
        layers: Vec<LayerSpec>,
        shortcuts: Vec<Shortcut>,
        edge_layer: bool,
    ) -> Result<Self> {
        let arch = ArchSpec {
            variant,
            layers,
            shortcuts,
            edge_layer,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(invalid("architecture has no layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.filter % 2 == 0 || l.filter == 0 {
                return Err(invalid(format!(
                    "layer {}: filter {} is not odd",
                    i + 1,
                    l.filter
                )));
            }
            if l.dilation == 0 || l.in_channels == 0 || l.out_channels == 0 {
                return Err(invalid(format!(
                    "layer {}: dilation and channel counts must be >= 1",
                    i + 1
                )));
            }
        }
        for (k, s) in self.shortcuts.iter().enumerate() {
            if s.destination == 0 || s.destination > self.layers.len() {
                return Err(invalid(format!("shortcut {k}: no layer {}", s.destination)));
            }
            if s.source.position() >= s.destination {
                return Err(invalid(format!(
                    "shortcut {k}: source {:?} does not precede layer {}",
                    s.source, s.destination
                )));
            }
            if self.shortcuts[..k]
                .iter()
                .any(|o| o.destination == s.destination)
            {
                return Err(invalid(format!(
                    "layer {} has more than one shortcut",
                    s.destination
                )));
            }
        }
        for d in 1..=self.layers.len() {
            let expected = self.input_channels(d);
            let declared = self.layers[d - 1].in_channels;
            if expected != declared {
                return Err(invalid(format!(
                    "layer {d}: declares {declared} input channels but receives {expected}"
                )));
            }
        }
        Ok(())
    }

    /// Channels arriving at the edge-layer output (or the image).
    pub fn stem_channels(&self) -> usize {
        if self.edge_layer {
            1 + EDGE_MAPS
        } else {
            1
        }
    }

    fn source_channels(&self, s: Source) -> usize {
        match s {
            Source::Image => 1,
            Source::Layer(k) => self.layers[k - 1].out_channels,
        }
    }

    pub fn shortcut_into(&self, layer: usize) -> Option<Source> {
        self.shortcuts
            .iter()
            .find(|s| s.destination == layer)
            .map(|s| s.source)
    }

    /// Width of the concatenated input of 1-based layer `d`.
    pub fn input_channels(&self, d: usize) -> usize {
        let base = if d == 1 {
            self.stem_channels()
        } else {
            self.layers[d - 2].out_channels
        };
        base + self.shortcut_into(d).map_or(0, |s| self.source_channels(s))
    }

    /// Weights, biases and batch-norm scales/shifts.
    pub fn trainable_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let w = l.out_channels * l.in_channels * l.filter * l.filter;
                let bn = if l.batch_norm { 2 * l.out_channels } else { 0 };
                w + l.out_channels + bn
            })
            .sum()
    }

    /// Kernel weights only.
    pub fn kernel_weights(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.out_channels * l.in_channels * l.filter * l.filter)
            .sum()
    }
}

/// Dilation rate of each of the eight layers.
pub const DILATIONS: [usize; 8] = [1, 2, 3, 4, 3, 2, 1, 1];

/// Builds the eight-layer network: 5x5 first layer, 3x3 elsewhere, BN on
/// layers 2-7, ReLU on layers 1-7, and shortcuts feeding
/// `out5 ++ out3` to layer 6, `out6 ++ out2` to layer 7 and
/// `out7 ++ image` to layer 8.
pub fn build_arch(variant: Variant, n_filters: usize) -> Result<ArchSpec> {
    if n_filters == 0 {
        return Err(invalid("n_filters must be >= 1"));
    }
    let edge_layer = variant == Variant::DrlE;
    let shortcuts = vec![
        Shortcut {
            source: Source::Layer(3),
            destination: 6,
        },
        Shortcut {
            source: Source::Layer(2),
            destination: 7,
        },
        Shortcut {
            source: Source::Image,
            destination: 8,
        },
    ];
    let outs = [
        n_filters, n_filters, n_filters, n_filters, n_filters, n_filters, 1, 1,
    ];
    let mut layers: Vec<LayerSpec> = Vec::with_capacity(8);
    for (i, (&dilation, &out_channels)) in DILATIONS.iter().zip(&outs).enumerate() {
        let d = i + 1;
        let prev = if d == 1 {
            if edge_layer {
                1 + EDGE_MAPS
            } else {
                1
            }
        } else {
            layers[i - 1].out_channels
        };
        let extra = match shortcuts
            .iter()
            .find(|s| s.destination == d)
            .map(|s| s.source)
        {
            Some(Source::Image) => 1,
            Some(Source::Layer(k)) => layers[k - 1].out_channels,
            None => 0,
        };
        layers.push(LayerSpec {
            filter: if d == 1 { 5 } else { 3 },
            dilation,
            in_channels: prev + extra,
            out_channels,
            batch_norm: (2..=7).contains(&d),
            activation: if d == 8 {
                Activation::Identity
            } else {
                Activation::Relu
            },
        });
    }
    ArchSpec::new(variant, layers, shortcuts, edge_layer)
}

/// Receptive field after each trainable layer, starting from 1 and growing
/// by `(f - 1) * r`. The fixed edge layer is not counted.
pub fn receptive_fields(arch: &ArchSpec) -> Vec<usize> {
    arch.layers
        .iter()
        .scan(1, |rf, l| {
            *rf += (l.filter - 1) * l.dilation;
            Some(*rf)
        })
        .collect()
}

pub fn receptive_field(arch: &ArchSpec) -> usize {
    receptive_fields(arch).last().copied().unwrap_or(1)
}

/// Closed-form kernel-weight count of an `N`-layer plain network with `n`
/// filters of size `f x f` per layer and `c` image channels:
/// `n f^2 c + n^2 f^2 (N - 2) + n f^2 c`.
pub fn count_weights(f: u64, n: u64, c: u64, layers: u64) -> Result<u64> {
    if layers < 2 {
        return Err(invalid(format!("count_weights needs N >= 2, got {layers}")));
    }
    let f2 = f * f;
    Ok(n * f2 * c + n * n * f2 * (layers - 2) + n * f2 * c)
}

/// Human-readable layer table.
pub fn describe(arch: &ArchSpec) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "architecture: {}", arch.variant.name());
    let _ = writeln!(
        s,
        "{:<7} {:<9} {:>6} {:>4} {:>5} {:>5} {:>4} {:>9} {:>4}  input",
        "layer", "kind", "filter", "r", "in", "out", "bn", "act", "rf"
    );
    if arch.edge_layer {
        let _ = writeln!(
            s,
            "{:<7} {:<9} {:>6} {:>4} {:>5} {:>5} {:>4} {:>9} {:>4}  image ++ 4 sobel maps",
            "edge", "fixed", "3x3", 1, 1, EDGE_MAPS, "no", "identity", "-"
        );
    }
    for (i, (l, rf)) in arch.layers.iter().zip(receptive_fields(arch)).enumerate() {
        let d = i + 1;
        let input = match (d, arch.shortcut_into(d)) {
            (1, _) if arch.edge_layer => "image ++ edges".to_string(),
            (1, _) => "image".to_string(),
            (_, Some(Source::Image)) => format!("out{} ++ image", d - 1),
            (_, Some(Source::Layer(k))) => format!("out{} ++ out{k}", d - 1),
            (_, None) => format!("out{}", d - 1),
        };
        let act = match l.activation {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        };
        let _ = writeln!(
            s,
            "{:<7} {:<9} {:>6} {:>4} {:>5} {:>5} {:>4} {:>9} {:>4}  {input}",
            d,
            "conv",
            format!("{0}x{0}", l.filter),
            l.dilation,
            l.in_channels,
            l.out_channels,
            if l.batch_norm { "yes" } else { "no" },
            act,
            rf
        );
    }
    let _ = writeln!(s, "trainable layers: {}", arch.layers.len());
    let _ = writeln!(s, "receptive field: {}", receptive_field(arch));
    let _ = writeln!(s, "kernel weights: {}", arch.kernel_weights());
    let _ = writeln!(s, "trainable parameters: {}", arch.trainable_parameters());
    s
}
