//! Analytic computational-cost accounting.
//!
//! FLOPs are counted from layer shapes at 2 FLOPs per multiply-accumulate,
//! convolution and dense layers only (biases, activations, normalization and
//! pooling are ignored; they are noise at this scale). Whole-pipeline cost
//! composes by summation, peak memory by maximum.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfilerError {
    #[error("UnknownLayerType: {0}")]
    UnknownLayerType(String),
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("InconsistentInputSize: expected {expected:?}, got {got:?} for '{component}'")]
    InconsistentInputSize {
        expected: (u32, u32),
        got: (u32, u32),
        component: String,
    },
    #[error("InconsistentBatchSize: expected {expected}, got {got} for '{component}'")]
    InconsistentBatchSize {
        expected: u32,
        got: u32,
        component: String,
    },
    #[error("NoMemoryData: no component reports memory")]
    NoMemoryData,
    #[error("Io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Shape-level description of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerDesc {
    Conv2d {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Linear {
        name: String,
        in_features: usize,
        out_features: usize,
    },
    Pool {
        name: String,
        kernel: usize,
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    GlobalAvgPool {
        name: String,
        /// Pools the spatial map down to grid x grid.
        output_grid: usize,
    },
    /// A convolution on a parallel branch (projection shortcut): contributes
    /// cost computed from the current activation but leaves the main path's
    /// shape untouched. The merge-add is ignored like other elementwise ops.
    Conv2dBranch {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Elementwise {
        name: String,
        channels: usize,
        ops_per_element: u64,
    },
}

/// A named stack of layers plus the channel count it expects at the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDesc {
    pub name: String,
    pub input_channels: usize,
    pub layers: Vec<LayerDesc>,
}

impl ModelDesc {
    /// Parse a JSON model description, mapping unrecognized layer types to
    /// [`ProfilerError::UnknownLayerType`].
    pub fn from_json(text: &str) -> Result<Self, ProfilerError> {
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            if msg.contains("unknown variant") {
                ProfilerError::UnknownLayerType(msg)
            } else {
                ProfilerError::ShapeMismatch(msg)
            }
        })
    }
}

enum Activation {
    Spatial { channels: usize, h: usize, w: usize },
    Features(usize),
}

impl Activation {
    fn elements(&self) -> usize {
        match *self {
            Activation::Spatial { channels, h, w } => channels * h * w,
            Activation::Features(n) => n,
        }
    }
}

fn conv_out(extent: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (extent + 2 * padding - kernel) / stride + 1
}

fn step(layer: &LayerDesc, current: Activation) -> Result<(Activation, u64), ProfilerError> {
    match layer {
        LayerDesc::Conv2d {
            name,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => match current {
            Activation::Spatial { channels, h, w } => {
                if channels != *in_channels {
                    return Err(ProfilerError::ShapeMismatch(format!(
                        "{name}: expected {in_channels} input channels, found {channels}"
                    )));
                }
                let oh = conv_out(h, *kernel, *stride, *padding);
                let ow = conv_out(w, *kernel, *stride, *padding);
                let macs = (kernel * kernel * in_channels * out_channels * oh * ow) as u64;
                Ok((
                    Activation::Spatial {
                        channels: *out_channels,
                        h: oh,
                        w: ow,
                    },
                    2 * macs,
                ))
            }
            Activation::Features(_) => Err(ProfilerError::ShapeMismatch(format!(
                "{name}: convolution after flatten"
            ))),
        },
        LayerDesc::Linear {
            name,
            in_features,
            out_features,
        } => {
            let available = current.elements();
            if available != *in_features {
                return Err(ProfilerError::ShapeMismatch(format!(
                    "{name}: expected {in_features} input features, found {available}"
                )));
            }
            Ok((
                Activation::Features(*out_features),
                2 * (*in_features * *out_features) as u64,
            ))
        }
        LayerDesc::Pool {
            name,
            kernel,
            stride,
            padding,
        } => match current {
            Activation::Spatial { channels, h, w } => Ok((
                Activation::Spatial {
                    channels,
                    h: conv_out(h, *kernel, *stride, *padding),
                    w: conv_out(w, *kernel, *stride, *padding),
                },
                0,
            )),
            Activation::Features(_) => Err(ProfilerError::ShapeMismatch(format!(
                "{name}: pooling after flatten"
            ))),
        },
        LayerDesc::GlobalAvgPool { name, output_grid } => match current {
            Activation::Spatial { channels, .. } => Ok((
                Activation::Features(channels * output_grid * output_grid),
                0,
            )),
            Activation::Features(_) => Err(ProfilerError::ShapeMismatch(format!(
                "{name}: pooling after flatten"
            ))),
        },
        LayerDesc::Conv2dBranch {
            name,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => match current {
            Activation::Spatial { channels, h, w } => {
                if channels != *in_channels {
                    return Err(ProfilerError::ShapeMismatch(format!(
                        "{name}: branch expected {in_channels} input channels, found {channels}"
                    )));
                }
                let oh = conv_out(h, *kernel, *stride, *padding);
                let ow = conv_out(w, *kernel, *stride, *padding);
                let macs = (kernel * kernel * in_channels * out_channels * oh * ow) as u64;
                Ok((current, 2 * macs))
            }
            Activation::Features(_) => Err(ProfilerError::ShapeMismatch(format!(
                "{name}: branch convolution after flatten"
            ))),
        },
        LayerDesc::Elementwise {
            channels,
            ops_per_element,
            ..
        } => {
            let count = match current {
                Activation::Spatial { h, w, .. } => channels * h * w,
                Activation::Features(n) => n,
            };
            Ok((current, count as u64 * ops_per_element))
        }
    }
}

/// Analytic forward-pass cost at a square input size, in GFLOPs.
pub fn count_gflops(model: &ModelDesc, input_px: (u32, u32)) -> Result<f64, ProfilerError> {
    let mut activation = Activation::Spatial {
        channels: model.input_channels,
        h: input_px.1 as usize,
        w: input_px.0 as usize,
    };
    let mut flops: u64 = 0;
    for layer in &model.layers {
        let (next, f) = step(layer, activation)?;
        activation = next;
        flops += f;
    }
    Ok(flops as f64 / 1e9)
}

/// Analytic peak working-set in GB: the largest (input + output) activation
/// pair across layers, scaled by batch size, plus all parameters. 4 bytes
/// per element.
pub fn estimate_memory_gb(
    model: &ModelDesc,
    input_px: (u32, u32),
    batch_size: u32,
) -> Result<f64, ProfilerError> {
    let mut activation = Activation::Spatial {
        channels: model.input_channels,
        h: input_px.1 as usize,
        w: input_px.0 as usize,
    };
    let mut params: u64 = 0;
    let mut peak_pair: u64 = activation.elements() as u64;
    for layer in &model.layers {
        params += match layer {
            LayerDesc::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (kernel * kernel * in_channels * out_channels + out_channels) as u64,
            LayerDesc::Linear {
                in_features,
                out_features,
                ..
            } => (in_features * out_features + out_features) as u64,
            _ => 0,
        };
        let in_elems = activation.elements() as u64;
        let (next, _) = step(layer, activation)?;
        peak_pair = peak_pair.max(in_elems + next.elements() as u64);
        activation = next;
    }
    Ok(((peak_pair * batch_size as u64 + params) * 4) as f64 / 1e9)
}

/// Per-component cost at a stated input size and batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentCost {
    pub component: String,
    pub gflops: f64,
    pub memory_gb: Option<f64>,
    pub input_px: (u32, u32),
    pub batch_size: u32,
}

/// Pipeline cost composes by summation over the stages.
pub fn total_pipeline_gflops(costs: &[ComponentCost]) -> Result<f64, ProfilerError> {
    if let Some(first) = costs.first() {
        for c in costs {
            if c.input_px != first.input_px {
                return Err(ProfilerError::InconsistentInputSize {
                    expected: first.input_px,
                    got: c.input_px,
                    component: c.component.clone(),
                });
            }
        }
    }
    Ok(costs.iter().map(|c| c.gflops).sum())
}

/// Peak memory is the maximum over the stages that report one.
pub fn peak_pipeline_memory(costs: &[ComponentCost]) -> Result<f64, ProfilerError> {
    if let Some(first) = costs.first() {
        for c in costs {
            if c.batch_size != first.batch_size {
                return Err(ProfilerError::InconsistentBatchSize {
                    expected: first.batch_size,
                    got: c.batch_size,
                    component: c.component.clone(),
                });
            }
        }
    }
    costs
        .iter()
        .filter_map(|c| c.memory_gb)
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.max(v)))
        })
        .ok_or(ProfilerError::NoMemoryData)
}

/// Write the comparison table: measurement conditions as a comment header,
/// then one row per model. Missing memory figures become empty fields.
pub fn emit_complexity_table(costs: &[ComponentCost], path: &Path) -> Result<(), ProfilerError> {
    let mut file = std::fs::File::create(path).map_err(|e| ProfilerError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    if let Some(first) = costs.first() {
        writeln!(
            file,
            "# input_px={}x{} batch_size={}",
            first.input_px.0, first.input_px.1, first.batch_size
        )
        .map_err(|e| ProfilerError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["model", "gflops", "memory_gb", "input_px", "batch_size"])
        .map_err(csv_err(path))?;
    for c in costs {
        w.write_record([
            c.component.clone(),
            format!("{:.4}", c.gflops),
            c.memory_gb.map(|m| format!("{m:.4}")).unwrap_or_default(),
            format!("{}x{}", c.input_px.0, c.input_px.1),
            c.batch_size.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| ProfilerError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> ProfilerError + '_ {
    move |e| ProfilerError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

/// Reference description of a ResNet50-class backbone with the two-layer
/// classification head (2048 -> 128 -> classes), torchvision v1 layout:
/// stride lives on each bottleneck's 3x3 convolution.
pub fn resnet50_fc_head(num_classes: usize) -> ModelDesc {
    let mut layers = vec![
        LayerDesc::Conv2d {
            name: "conv1".into(),
            in_channels: 3,
            out_channels: 64,
            kernel: 7,
            stride: 2,
            padding: 3,
        },
        LayerDesc::Pool {
            name: "maxpool".into(),
            kernel: 3,
            stride: 2,
            padding: 1,
        },
    ];
    let mut in_ch = 64;
    let stages: [(usize, usize, usize, usize); 4] = [
        (3, 64, 256, 1),
        (4, 128, 512, 2),
        (6, 256, 1024, 2),
        (3, 512, 2048, 2),
    ];
    for (s, (blocks, mid, out, stride)) in stages.iter().enumerate() {
        for b in 0..*blocks {
            let stride = if b == 0 { *stride } else { 1 };
            let tag = format!("layer{}.{b}", s + 1);
            if b == 0 {
                // projection shortcut off the block input
                layers.push(LayerDesc::Conv2dBranch {
                    name: format!("{tag}.downsample"),
                    in_channels: in_ch,
                    out_channels: *out,
                    kernel: 1,
                    stride,
                    padding: 0,
                });
            }
            layers.push(LayerDesc::Conv2d {
                name: format!("{tag}.conv1"),
                in_channels: in_ch,
                out_channels: *mid,
                kernel: 1,
                stride: 1,
                padding: 0,
            });
            layers.push(LayerDesc::Conv2d {
                name: format!("{tag}.conv2"),
                in_channels: *mid,
                out_channels: *mid,
                kernel: 3,
                stride,
                padding: 1,
            });
            layers.push(LayerDesc::Conv2d {
                name: format!("{tag}.conv3"),
                in_channels: *mid,
                out_channels: *out,
                kernel: 1,
                stride: 1,
                padding: 0,
            });
            in_ch = *out;
        }
    }
    layers.push(LayerDesc::GlobalAvgPool {
        name: "avgpool".into(),
        output_grid: 1,
    });
    layers.push(LayerDesc::Linear {
        name: "head.fc1".into(),
        in_features: 2048,
        out_features: 128,
    });
    layers.push(LayerDesc::Linear {
        name: "head.fc2".into(),
        in_features: 128,
        out_features: num_classes,
    });
    ModelDesc {
        name: "resnet50_fc".into(),
        input_channels: 3,
        layers,
    }
}

/// Description of the mask remover: one pass of elementwise masking over an
/// H x W x 3 image.
pub fn mask_remover_desc() -> ModelDesc {
    ModelDesc {
        name: "mask_remover".into(),
        input_channels: 3,
        layers: vec![LayerDesc::Elementwise {
            name: "mask".into(),
            channels: 3,
            ops_per_element: 1,
        }],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn fc_only(in_features: usize, out_features: usize) -> ModelDesc {
        ModelDesc {
            name: "fc".into(),
            input_channels: 3,
            layers: vec![
                LayerDesc::GlobalAvgPool {
                    name: "gap".into(),
                    output_grid: 1,
                },
                LayerDesc::Linear {
                    name: "fc".into(),
                    in_features,
                    out_features,
                },
            ],
        }
    }

    #[test]
    fn dense_layer_mac_arithmetic() {
        // 2 * 2048 * 128 = 524,288 FLOPs
        let model = ModelDesc {
            name: "one_fc".into(),
            input_channels: 2048,
            layers: vec![
                LayerDesc::GlobalAvgPool {
                    name: "gap".into(),
                    output_grid: 1,
                },
                LayerDesc::Linear {
                    name: "fc".into(),
                    in_features: 2048,
                    out_features: 128,
                },
            ],
        };
        let gflops = count_gflops(&model, (7, 7)).unwrap();
        assert!((gflops - 524_288.0 / 1e9).abs() < 1e-15);
    }

    #[test]
    fn empty_model_costs_nothing() {
        let model = ModelDesc {
            name: "empty".into(),
            input_channels: 3,
            layers: vec![],
        };
        assert_eq!(count_gflops(&model, (640, 640)).unwrap(), 0.0);
    }

    #[test]
    fn resnet50_reference_at_640_matches_hand_count() {
        // independently derived: 33,364,640,128 MACs for the full stack with
        // the 2048->128->3 head at 640x640
        let model = resnet50_fc_head(3);
        let gflops = count_gflops(&model, (640, 640)).unwrap();
        assert!((gflops - 66.729280256).abs() < 1e-9, "got {gflops} GFLOPs");
        // within 10% of the published 67.4
        assert!((gflops - 67.4).abs() <= 0.1 * 67.4);
    }

    #[test]
    fn fc_head_cost_is_independent_of_input_size() {
        let model = fc_only(3, 10);
        let a = count_gflops(&model, (300, 300)).unwrap();
        let b = count_gflops(&model, (640, 640)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn conv_stages_scale_with_spatial_area() {
        let conv = ModelDesc {
            name: "conv".into(),
            input_channels: 3,
            layers: vec![LayerDesc::Conv2d {
                name: "c".into(),
                in_channels: 3,
                out_channels: 8,
                kernel: 3,
                stride: 1,
                padding: 1,
            }],
        };
        let a = count_gflops(&conv, (224, 224)).unwrap();
        let b = count_gflops(&conv, (448, 448)).unwrap();
        assert!((b / a - 4.0).abs() < 1e-12);
    }

    fn cost(name: &str, gflops: f64, mem: Option<f64>) -> ComponentCost {
        ComponentCost {
            component: name.into(),
            gflops,
            memory_gb: mem,
            input_px: (640, 640),
            batch_size: 16,
        }
    }

    #[test]
    fn pipeline_total_reproduces_published_sum() {
        let remover = count_gflops(&mask_remover_desc(), (640, 640)).unwrap();
        assert!(remover < 0.01, "remover should be insignificant: {remover}");
        let costs = vec![
            cost("yolact", 118.6, Some(16.3)),
            cost("mask_remover", remover, Some(0.1)),
            cost("resnet50_fc", 67.4, Some(1.0)),
        ];
        let total = total_pipeline_gflops(&costs).unwrap();
        assert!((total - 186.0).abs() < 0.01, "total {total}");
        assert_eq!(peak_pipeline_memory(&costs).unwrap(), 16.3);
    }

    #[test]
    fn empty_pipeline_totals_zero() {
        assert_eq!(total_pipeline_gflops(&[]).unwrap(), 0.0);
    }

    #[test]
    fn totals_are_permutation_invariant() {
        let mut costs = vec![
            cost("a", 1.5, Some(2.0)),
            cost("b", 2.5, Some(8.0)),
            cost("c", 0.25, Some(3.0)),
        ];
        let total = total_pipeline_gflops(&costs).unwrap();
        let peak = peak_pipeline_memory(&costs).unwrap();
        costs.reverse();
        assert_eq!(total_pipeline_gflops(&costs).unwrap(), total);
        assert_eq!(peak_pipeline_memory(&costs).unwrap(), peak);
        costs.swap(0, 1);
        assert_eq!(total_pipeline_gflops(&costs).unwrap(), total);
    }

    #[test]
    fn total_is_linear_in_component_scaling() {
        let costs = vec![cost("a", 1.25, None), cost("b", 3.5, None)];
        let total = total_pipeline_gflops(&costs).unwrap();
        let scaled: Vec<ComponentCost> = costs
            .iter()
            .map(|c| ComponentCost {
                gflops: c.gflops * 3.0,
                ..c.clone()
            })
            .collect();
        assert!((total_pipeline_gflops(&scaled).unwrap() - 3.0 * total).abs() < 1e-12);
    }

    #[test]
    fn peak_memory_identity_and_duplication() {
        let single = vec![cost("a", 1.0, Some(5.5))];
        assert_eq!(peak_pipeline_memory(&single).unwrap(), 5.5);
        let dup = vec![cost("a", 1.0, Some(5.5)), cost("a2", 1.0, Some(5.5))];
        assert_eq!(peak_pipeline_memory(&dup).unwrap(), 5.5);
    }

    #[test]
    fn mixed_input_sizes_are_rejected() {
        let mut costs = vec![cost("a", 1.0, None)];
        costs.push(ComponentCost {
            input_px: (300, 300),
            ..cost("b", 1.0, None)
        });
        assert!(matches!(
            total_pipeline_gflops(&costs),
            Err(ProfilerError::InconsistentInputSize { .. })
        ));
    }

    #[test]
    fn mixed_batch_sizes_are_rejected() {
        let mut costs = vec![cost("a", 1.0, Some(1.0))];
        costs.push(ComponentCost {
            batch_size: 8,
            ..cost("b", 1.0, Some(2.0))
        });
        assert!(matches!(
            peak_pipeline_memory(&costs),
            Err(ProfilerError::InconsistentBatchSize { .. })
        ));
    }

    #[test]
    fn unknown_layer_type_in_imported_description() {
        let json = r#"{"name":"x","input_channels":3,"layers":[{"type":"attention","name":"a"}]}"#;
        assert!(matches!(
            ModelDesc::from_json(json),
            Err(ProfilerError::UnknownLayerType(_))
        ));
    }

    #[test]
    fn table_includes_conditions_and_null_markers() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("complexity.csv");
        let costs = vec![
            cost("proposed", 186.0, Some(16.3)),
            cost("partial", 1.0, None),
        ];
        emit_complexity_table(&costs, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# input_px=640x640 batch_size=16"));
        assert!(text.contains("proposed,186.0000,16.3000,640x640,16"));
        assert!(text.contains("partial,1.0000,,640x640,16"));
    }

    #[test]
    fn memory_estimate_is_positive_and_batch_scaled() {
        let model = resnet50_fc_head(2);
        let m16 = estimate_memory_gb(&model, (640, 640), 16).unwrap();
        let m32 = estimate_memory_gb(&model, (640, 640), 32).unwrap();
        assert!(m16 > 0.0);
        assert!(m32 > m16);
    }
}
