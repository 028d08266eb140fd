//! Feature extractor loaded from an ONNX model file.
//!
//! Supported operators: `Conv` (group 1, unit dilation), `Relu`, `MaxPool`,
//! `AveragePool` and `Identity`, batch size 1. The graph's single
//! non-initializer input receives the image scaled to `[0, 1]`, replicated
//! across channels when the first convolution expects three. Every graph
//! output becomes one feature layer, in declaration order.
//!
//! Per-layer weights may be stored in the model's `metadata_props` under
//! [`LAYER_WEIGHTS_KEY`] as a comma separated list of numbers.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use prost::Message;
use sha2::{Digest, Sha256};

use crate::image::GrayImage;

use super::features::{conv2d, pool2d, ConvSpec, FeatureExtractor, FeatureMap, FeatureStack, PoolKind};
use super::MetricError;

pub const LAYER_WEIGHTS_KEY: &str = "lpips.layer_weights";

const MAX_NODES: usize = 1024;
const MAX_WEIGHT_ELEMENTS: usize = 1 << 26;
const MAX_KERNEL: i64 = 32;
const MAX_STRIDE: i64 = 32;
const MAX_PAD: i64 = 32;

/// The subset of the ONNX protobuf schema this loader reads. Field tags match
/// `onnx.proto3`; unknown fields are skipped by the decoder.
pub mod proto {
    #[derive(Clone, PartialEq, prost::Message)]
    pub struct ModelProto {
        #[prost(int64, tag = "1")]
        pub ir_version: i64,
        #[prost(string, tag = "2")]
        pub producer_name: String,
        #[prost(message, optional, tag = "7")]
        pub graph: Option<GraphProto>,
        #[prost(message, repeated, tag = "8")]
        pub opset_import: Vec<OperatorSetIdProto>,
        #[prost(message, repeated, tag = "14")]
        pub metadata_props: Vec<StringStringEntryProto>,
    }

    #[derive(Clone, PartialEq, prost::Message)]
    pub struct OperatorSetIdProto {
        #[prost(string, tag = "1")]
        pub domain: String,
        #[prost(int64, tag = "2")]
        pub version: i64,
    }

    #[derive(Clone, PartialEq, prost::Message)]
    pub struct StringStringEntryProto {
        #[prost(string, tag = "1")]
        pub key: String,
        #[prost(string, tag = "2")]
        pub value: String,
    }

    #[derive(Clone, PartialEq, prost::Message)]
    pub struct GraphProto {
        #[prost(message, repeated, tag = "1")]
        pub node: Vec<NodeProto>,
        #[prost(string, tag = "2")]
        pub name: String,
        #[prost(message, repeated, tag = "5")]
        pub initializer: Vec<TensorProto>,
        #[prost(message, repeated, tag = "11")]
        pub input: Vec<ValueInfoProto>,
        #[prost(message, repeated, tag = "12")]
        pub output: Vec<ValueInfoProto>,
    }

    #[derive(Clone, PartialEq, prost::Message)]
    pub struct ValueInfoProto {
        #[prost(string, tag = "1")]
        pub name: String,
    }

    #[derive(Clone, PartialEq, prost::Message)]
    pub struct NodeProto {
        #[prost(string, repeated, tag = "1")]
        pub input: Vec<String>,
        #[prost(string, repeated, tag = "2")]
        pub output: Vec<String>,
        #[prost(string, tag = "3")]
        pub name: String,
        #[prost(string, tag = "4")]
        pub op_type: String,
        #[prost(message, repeated, tag = "5")]
        pub attribute: Vec<AttributeProto>,
        #[prost(string, tag = "7")]
        pub domain: String,
    }

    #[derive(Clone, PartialEq, prost::Message)]
    pub struct AttributeProto {
        #[prost(string, tag = "1")]
        pub name: String,
        #[prost(float, tag = "2")]
        pub f: f32,
        #[prost(int64, tag = "3")]
        pub i: i64,
        #[prost(bytes = "vec", tag = "4")]
        pub s: Vec<u8>,
        #[prost(int64, repeated, tag = "8")]
        pub ints: Vec<i64>,
        #[prost(int32, tag = "20")]
        pub r#type: i32,
    }

    #[derive(Clone, PartialEq, prost::Message)]
    pub struct TensorProto {
        #[prost(int64, repeated, tag = "1")]
        pub dims: Vec<i64>,
        #[prost(int32, tag = "2")]
        pub data_type: i32,
        #[prost(float, repeated, tag = "4")]
        pub float_data: Vec<f32>,
        #[prost(string, tag = "8")]
        pub name: String,
        #[prost(bytes = "vec", tag = "9")]
        pub raw_data: Vec<u8>,
        #[prost(double, repeated, tag = "10")]
        pub double_data: Vec<f64>,
    }

    pub const ATTR_INT: i32 = 2;
    pub const ATTR_STRING: i32 = 3;
    pub const ATTR_INTS: i32 = 7;
    pub const DTYPE_FLOAT: i32 = 1;
    pub const DTYPE_DOUBLE: i32 = 11;
}

use proto::{AttributeProto, NodeProto, TensorProto};

#[derive(Debug, Clone)]
enum Op {
    Conv {
        weights: Vec<f64>,
        bias: Option<Vec<f64>>,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pads: (usize, usize, usize, usize),
    },
    Relu,
    Pool {
        kind: PoolKind,
        kernel: (usize, usize),
        stride: (usize, usize),
        pads: (usize, usize, usize, usize),
    },
    Identity,
}

#[derive(Debug, Clone)]
struct Step {
    op: Op,
    input: String,
    output: String,
}

#[derive(Debug, Clone)]
pub struct InterchangeModelExtractor {
    id: String,
    input_name: String,
    input_channels: usize,
    steps: Vec<Step>,
    outputs: Vec<String>,
    layer_weights: Option<Vec<f64>>,
}

fn failure(msg: impl Into<String>) -> MetricError {
    MetricError::ExtractorFailure(msg.into())
}

fn tensor_values(t: &TensorProto) -> Result<Vec<f64>, MetricError> {
    let mut count: usize = 1;
    for &d in &t.dims {
        if d < 0 {
            return Err(failure(format!("tensor {:?} has negative dimension", t.name)));
        }
        count = count
            .checked_mul(d as usize)
            .filter(|&c| c <= MAX_WEIGHT_ELEMENTS)
            .ok_or_else(|| failure(format!("tensor {:?} is too large", t.name)))?;
    }
    let values: Vec<f64> = match t.data_type {
        proto::DTYPE_FLOAT if !t.raw_data.is_empty() => {
            if t.raw_data.len() != count * 4 {
                return Err(failure(format!("tensor {:?} raw data has wrong length", t.name)));
            }
            t.raw_data
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect()
        }
        proto::DTYPE_FLOAT => t.float_data.iter().map(|&v| f64::from(v)).collect(),
        proto::DTYPE_DOUBLE if !t.raw_data.is_empty() => {
            if t.raw_data.len() != count * 8 {
                return Err(failure(format!("tensor {:?} raw data has wrong length", t.name)));
            }
            t.raw_data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect()
        }
        proto::DTYPE_DOUBLE => t.double_data.clone(),
        other => return Err(failure(format!("tensor {:?} has unsupported data type {other}", t.name))),
    };
    if values.len() != count {
        return Err(failure(format!(
            "tensor {:?} holds {} values, dims imply {count}",
            t.name,
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(failure(format!("tensor {:?} contains non-finite values", t.name)));
    }
    Ok(values)
}

fn attr<'a>(node: &'a NodeProto, name: &str) -> Option<&'a AttributeProto> {
    node.attribute.iter().find(|a| a.name == name)
}

fn attr_ints<'a>(node: &'a NodeProto, name: &str) -> Option<&'a [i64]> {
    attr(node, name).map(|a| a.ints.as_slice())
}

fn attr_int(node: &NodeProto, name: &str, default: i64) -> i64 {
    attr(node, name).map_or(default, |a| a.i)
}

fn pair(node: &NodeProto, name: &str, default: i64, max: i64, min: i64) -> Result<(usize, usize), MetricError> {
    match attr_ints(node, name) {
        None => Ok((default as usize, default as usize)),
        Some([a, b]) if (min..=max).contains(a) && (min..=max).contains(b) => Ok((*a as usize, *b as usize)),
        Some(other) => Err(failure(format!("{}: bad {name} {other:?}", node.op_type))),
    }
}

fn pads(node: &NodeProto) -> Result<(usize, usize, usize, usize), MetricError> {
    if let Some(a) = attr(node, "auto_pad") {
        if !a.s.is_empty() && a.s != b"NOTSET" {
            return Err(failure(format!("{}: auto_pad is not supported", node.op_type)));
        }
    }
    match attr_ints(node, "pads") {
        None => Ok((0, 0, 0, 0)),
        Some(&[t, l, b, r]) if [t, l, b, r].iter().all(|p| (0..=MAX_PAD).contains(p)) => {
            Ok((t as usize, l as usize, b as usize, r as usize))
        }
        Some(other) => Err(failure(format!("{}: bad pads {other:?}", node.op_type))),
    }
}

impl InterchangeModelExtractor {
    pub fn load(path: &Path) -> Result<Self, MetricError> {
        let bytes = std::fs::read(path).map_err(|e| failure(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MetricError> {
        let model = proto::ModelProto::decode(bytes).map_err(|e| failure(format!("not an ONNX model: {e}")))?;
        let graph = model.graph.as_ref().ok_or_else(|| failure("model has no graph"))?;
        if graph.node.len() > MAX_NODES {
            return Err(failure(format!("graph has {} nodes", graph.node.len())));
        }

        let mut initializers: HashMap<&str, &TensorProto> = HashMap::new();
        for t in &graph.initializer {
            initializers.insert(t.name.as_str(), t);
        }
        let data_inputs: Vec<&str> = graph
            .input
            .iter()
            .map(|v| v.name.as_str())
            .filter(|n| !initializers.contains_key(n))
            .collect();
        let input_name = match data_inputs.as_slice() {
            [one] => (*one).to_owned(),
            other => return Err(failure(format!("expected one data input, found {}", other.len()))),
        };

        let mut channels: HashMap<String, Option<usize>> = HashMap::new();
        channels.insert(input_name.clone(), None);
        let mut input_channels = None;
        let mut weight_total = 0usize;
        let mut steps = Vec::with_capacity(graph.node.len());
        for node in &graph.node {
            if !node.domain.is_empty() && node.domain != "ai.onnx" {
                return Err(failure(format!("operator domain {:?} is not supported", node.domain)));
            }
            let input = node
                .input
                .first()
                .filter(|n| !n.is_empty())
                .ok_or_else(|| failure(format!("{} node has no input", node.op_type)))?
                .clone();
            let output = match node.output.as_slice() {
                [o] if !o.is_empty() => o.clone(),
                _ => return Err(failure(format!("{} node must have exactly one output", node.op_type))),
            };
            let in_ch = *channels
                .get(&input)
                .ok_or_else(|| failure(format!("tensor {input:?} is used before it is produced")))?;
            let (op, out_ch) = match node.op_type.as_str() {
                "Conv" => {
                    if attr_int(node, "group", 1) != 1 {
                        return Err(failure("grouped convolution is not supported"));
                    }
                    if let Some(d) = attr_ints(node, "dilations") {
                        if d.iter().any(|&v| v != 1) {
                            return Err(failure("dilated convolution is not supported"));
                        }
                    }
                    let wname = node.input.get(1).ok_or_else(|| failure("Conv without weights"))?;
                    let wt = initializers
                        .get(wname.as_str())
                        .ok_or_else(|| failure(format!("Conv weights {wname:?} are not an initializer")))?;
                    let dims: Vec<usize> = match wt.dims.as_slice() {
                        [o, i, kh, kw]
                            if *o > 0 && *i > 0 && (1..=MAX_KERNEL).contains(kh) && (1..=MAX_KERNEL).contains(kw) =>
                        {
                            vec![*o as usize, *i as usize, *kh as usize, *kw as usize]
                        }
                        other => return Err(failure(format!("Conv weight dims {other:?}"))),
                    };
                    let weights = tensor_values(wt)?;
                    weight_total += weights.len();
                    if weight_total > MAX_WEIGHT_ELEMENTS {
                        return Err(failure("model weights exceed the size limit"));
                    }
                    let (o, i, kh, kw) = (dims[0], dims[1], dims[2], dims[3]);
                    match in_ch {
                        Some(c) if c != i => {
                            return Err(failure(format!("Conv expects {i} input channels, tensor has {c}")));
                        }
                        Some(_) => {}
                        None => {
                            if i != 1 && i != 3 {
                                return Err(failure(format!("model input must have 1 or 3 channels, found {i}")));
                            }
                            input_channels = Some(i);
                        }
                    }
                    if let Some(ks) = attr_ints(node, "kernel_shape") {
                        if ks != [kh as i64, kw as i64] {
                            return Err(failure("Conv kernel_shape disagrees with weight dims"));
                        }
                    }
                    let bias = match node.input.get(2).filter(|n| !n.is_empty()) {
                        None => None,
                        Some(bname) => {
                            let bt = initializers
                                .get(bname.as_str())
                                .ok_or_else(|| failure(format!("Conv bias {bname:?} is not an initializer")))?;
                            let b = tensor_values(bt)?;
                            if b.len() != o {
                                return Err(failure("Conv bias length disagrees with output channels"));
                            }
                            Some(b)
                        }
                    };
                    let op = Op::Conv {
                        weights,
                        bias,
                        out_channels: o,
                        kernel: (kh, kw),
                        stride: pair(node, "strides", 1, MAX_STRIDE, 1)?,
                        pads: pads(node)?,
                    };
                    (op, Some(o))
                }
                "Relu" => (Op::Relu, in_ch),
                "Identity" => (Op::Identity, in_ch),
                "MaxPool" | "AveragePool" => {
                    if attr_int(node, "ceil_mode", 0) != 0 {
                        return Err(failure("ceil_mode pooling is not supported"));
                    }
                    let kind = if node.op_type == "MaxPool" {
                        PoolKind::Max
                    } else {
                        if attr_int(node, "count_include_pad", 0) != 0 {
                            return Err(failure("count_include_pad is not supported"));
                        }
                        PoolKind::Average
                    };
                    let kernel = match attr_ints(node, "kernel_shape") {
                        Some(&[a, b]) if (1..=MAX_KERNEL).contains(&a) && (1..=MAX_KERNEL).contains(&b) => {
                            (a as usize, b as usize)
                        }
                        other => return Err(failure(format!("{}: bad kernel_shape {other:?}", node.op_type))),
                    };
                    let op = Op::Pool {
                        kind,
                        kernel,
                        stride: pair(node, "strides", 1, MAX_STRIDE, 1)?,
                        pads: pads(node)?,
                    };
                    (op, in_ch)
                }
                other => return Err(failure(format!("operator {other:?} is not supported"))),
            };
            channels.insert(output.clone(), out_ch);
            steps.push(Step { op, input, output });
        }

        let input_channels = input_channels.ok_or_else(|| failure("model has no convolution"))?;
        let outputs: Vec<String> = graph.output.iter().map(|v| v.name.clone()).collect();
        if outputs.is_empty() {
            return Err(failure("model declares no outputs"));
        }
        let produced: HashSet<&str> = steps.iter().map(|s| s.output.as_str()).collect();
        if let Some(missing) = outputs.iter().find(|o| !produced.contains(o.as_str())) {
            return Err(failure(format!("output {missing:?} is never produced")));
        }

        let layer_weights = match model.metadata_props.iter().find(|p| p.key == LAYER_WEIGHTS_KEY) {
            None => None,
            Some(p) => {
                let w = p
                    .value
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| failure(format!("{LAYER_WEIGHTS_KEY}: {e}")))?;
                if w.len() != outputs.len() {
                    return Err(MetricError::WeightArityMismatch {
                        expected: outputs.len(),
                        found: w.len(),
                    });
                }
                Some(w)
            }
        };

        let digest = Sha256::digest(bytes);
        let id = format!(
            "interchange-model:{}",
            digest[..8].iter().map(|b| format!("{b:02x}")).collect::<String>()
        );
        Ok(Self {
            id,
            input_name,
            input_channels,
            steps,
            outputs,
            layer_weights,
        })
    }
}

impl FeatureExtractor for InterchangeModelExtractor {
    fn id(&self) -> &str {
        &self.id
    }

    fn layer_count(&self) -> usize {
        self.outputs.len()
    }

    fn bundled_weights(&self) -> Option<Vec<f64>> {
        self.layer_weights.clone()
    }

    fn extract(&self, img: &GrayImage) -> Result<FeatureStack, MetricError> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let plane = img.normalized();
        let mut data = Vec::with_capacity(plane.len() * self.input_channels);
        for _ in 0..self.input_channels {
            data.extend_from_slice(&plane);
        }
        let mut tensors: HashMap<&str, FeatureMap> = HashMap::new();
        tensors.insert(
            &self.input_name,
            FeatureMap {
                channels: self.input_channels,
                height: h,
                width: w,
                data,
            },
        );
        for step in &self.steps {
            let x = tensors
                .get(step.input.as_str())
                .ok_or_else(|| failure(format!("tensor {:?} missing at run time", step.input)))?;
            let fits = |k: (usize, usize), p: (usize, usize, usize, usize)| {
                x.height + p.0 + p.2 >= k.0 && x.width + p.1 + p.3 >= k.1
            };
            let y = match &step.op {
                Op::Conv {
                    weights,
                    bias,
                    out_channels,
                    kernel,
                    stride,
                    pads,
                } => {
                    if !fits(*kernel, *pads) {
                        return Err(failure(format!("input too small for {:?}", step.output)));
                    }
                    conv2d(
                        x,
                        &ConvSpec {
                            weights,
                            bias: bias.as_deref(),
                            out_channels: *out_channels,
                            kernel: *kernel,
                            stride: *stride,
                            pads: *pads,
                        },
                    )
                }
                Op::Relu => x.clone().relu(),
                Op::Identity => x.clone(),
                Op::Pool {
                    kind,
                    kernel,
                    stride,
                    pads,
                } => {
                    if !fits(*kernel, *pads) {
                        return Err(failure(format!("input too small for {:?}", step.output)));
                    }
                    pool2d(x, *kind, *kernel, *stride, *pads)
                }
            };
            tensors.insert(&step.output, y);
        }
        let layers = self
            .outputs
            .iter()
            .map(|o| tensors.get(o.as_str()).cloned().ok_or_else(|| failure(format!("output {o:?} missing"))))
            .collect::<Result<Vec<_>, _>>()?;
        FeatureStack::new(layers)
    }
}

/// Small helpers for assembling models in code (tests, fixtures).
pub mod build {
    use super::proto::*;

    pub fn ints(name: &str, values: &[i64]) -> AttributeProto {
        AttributeProto {
            name: name.into(),
            ints: values.to_vec(),
            r#type: ATTR_INTS,
            ..Default::default()
        }
    }

    pub fn tensor(name: &str, dims: &[i64], values: &[f32]) -> TensorProto {
        TensorProto {
            name: name.into(),
            dims: dims.to_vec(),
            data_type: DTYPE_FLOAT,
            raw_data: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
            ..Default::default()
        }
    }

    pub fn node(op: &str, inputs: &[&str], output: &str, attrs: Vec<AttributeProto>) -> NodeProto {
        NodeProto {
            op_type: op.into(),
            input: inputs.iter().map(|s| s.to_string()).collect(),
            output: vec![output.into()],
            attribute: attrs,
            ..Default::default()
        }
    }

    pub fn model(
        nodes: Vec<NodeProto>,
        initializers: Vec<TensorProto>,
        input: &str,
        outputs: &[&str],
        layer_weights: Option<&str>,
    ) -> ModelProto {
        ModelProto {
            ir_version: 8,
            producer_name: "fss".into(),
            opset_import: vec![OperatorSetIdProto {
                domain: String::new(),
                version: 13,
            }],
            metadata_props: layer_weights
                .map(|w| StringStringEntryProto {
                    key: super::LAYER_WEIGHTS_KEY.into(),
                    value: w.into(),
                })
                .into_iter()
                .collect(),
            graph: Some(GraphProto {
                name: "features".into(),
                node: nodes,
                initializer: initializers,
                input: vec![ValueInfoProto { name: input.into() }],
                output: outputs.iter().map(|o| ValueInfoProto { name: o.to_string() }).collect(),
            }),
        }
    }

    /// Two-layer example: 3-channel 3x3 conv (2 filters) + ReLU, then 2x2 max pool.
    pub fn example_model() -> ModelProto {
        let weights: Vec<f32> = (0..2 * 3 * 9).map(|i| ((i % 7) as f32 - 3.0) * 0.1).collect();
        model(
            vec![
                node(
                    "Conv",
                    &["image", "w1", "b1"],
                    "c1",
                    vec![ints("kernel_shape", &[3, 3]), ints("pads", &[1, 1, 1, 1])],
                ),
                node("Relu", &["c1"], "r1", vec![]),
                node(
                    "MaxPool",
                    &["r1"],
                    "p1",
                    vec![ints("kernel_shape", &[2, 2]), ints("strides", &[2, 2])],
                ),
            ],
            vec![tensor("w1", &[2, 3, 3, 3], &weights), tensor("b1", &[2], &[0.05, -0.05])],
            "image",
            &["r1", "p1"],
            Some("0.75,0.25"),
        )
    }
}
