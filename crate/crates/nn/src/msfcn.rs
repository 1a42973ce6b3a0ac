//! Multi-stride FCN assembly: a scaled VGG-style backbone, one
//! deconvolutional block per stride with skip taps, and weighted fusion
//! of the per-stride score maps cropped back to the input size.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::graph::{Graph, Init, Node, Op, ParamSpec, Params};
use crate::ops::bilinear_kernel;
use crate::tensor::Scalar;

/// VGG-style convolution stack widths, reduced ~4x for CPU training.
pub const DESK_STAGE_WIDTHS: [usize; 5] = [16, 32, 64, 128, 128];
pub const VGG_CONVS_PER_STAGE: [usize; 5] = [2, 2, 3, 3, 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneSpec {
    pub stage_widths: Vec<usize>,
    pub convs_per_stage: Vec<usize>,
    pub patch_size: usize,
    pub fc6_channels: usize,
    pub fc7_channels: usize,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec {
            stage_widths: DESK_STAGE_WIDTHS.to_vec(),
            convs_per_stage: VGG_CONVS_PER_STAGE.to_vec(),
            patch_size: 128,
            fc6_channels: 256,
            fc7_channels: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeconvBlockSpec {
    pub stride: usize,
    /// Pooling stage whose output feeds this block's skip connection.
    pub skip_stage: Option<usize>,
    pub fusion_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MsfcnConfig {
    pub backbone: BackboneSpec,
    pub blocks: Vec<DeconvBlockSpec>,
    pub classes: usize,
    pub fc6_dropout: f64,
    pub fc7_dropout: f64,
}

impl Default for MsfcnConfig {
    fn default() -> Self {
        MsfcnConfig {
            backbone: BackboneSpec::default(),
            blocks: vec![
                DeconvBlockSpec { stride: 32, skip_stage: None, fusion_weight: 0.5 },
                DeconvBlockSpec { stride: 16, skip_stage: Some(4), fusion_weight: 0.7 },
                DeconvBlockSpec { stride: 8, skip_stage: Some(3), fusion_weight: 0.9 },
            ],
            classes: slideseg_core::NUM_CLASSES,
            fc6_dropout: 0.9,
            fc7_dropout: 0.75,
        }
    }
}

impl MsfcnConfig {
    /// Copy of this config keeping only the stride-32 block with unit
    /// fusion weight: the plain single-stride network.
    pub fn single_stride(&self) -> MsfcnConfig {
        let mut cfg = self.clone();
        cfg.blocks = vec![DeconvBlockSpec {
            stride: 32,
            skip_stage: None,
            fusion_weight: 1.0,
        }];
        cfg
    }

    fn validate(&self) -> Result<()> {
        let b = &self.backbone;
        if b.stage_widths.len() != 5 || b.convs_per_stage.len() != 5 {
            return Err(NnError::InvalidConfig(
                "backbone needs exactly 5 stages of widths and conv counts".into(),
            ));
        }
        if b.stage_widths.contains(&0) || b.convs_per_stage.contains(&0) {
            return Err(NnError::InvalidConfig(
                "stage widths and conv counts must be positive".into(),
            ));
        }
        if b.fc6_channels == 0 || b.fc7_channels == 0 {
            return Err(NnError::InvalidConfig("fc6/fc7 widths must be positive".into()));
        }
        if b.patch_size < 32 || !b.patch_size.is_multiple_of(32) {
            return Err(NnError::InvalidConfig(format!(
                "patch size {} must be a positive multiple of 32",
                b.patch_size
            )));
        }
        if self.classes < 2 || self.classes > slideseg_core::NUM_CLASSES {
            return Err(NnError::InvalidConfig(format!(
                "classes {} outside 2..={}",
                self.classes,
                slideseg_core::NUM_CLASSES
            )));
        }
        for rate in [self.fc6_dropout, self.fc7_dropout] {
            if !(0.0..1.0).contains(&rate) {
                return Err(NnError::InvalidConfig(format!(
                    "dropout rate {rate} outside [0, 1)"
                )));
            }
        }
        if self.blocks.is_empty() {
            return Err(NnError::InvalidConfig("at least one deconvolutional block".into()));
        }
        // Blocks chain: each after the first halves the stride of the one
        // before it, since it consumes that block's pre-deconvolution signal.
        let expected_taps = [(32usize, None), (16, Some(4usize)), (8, Some(3))];
        for (i, block) in self.blocks.iter().enumerate() {
            if i >= expected_taps.len() {
                return Err(NnError::InvalidConfig("at most 3 deconvolutional blocks".into()));
            }
            let (stride, tap) = expected_taps[i];
            if block.stride != stride {
                return Err(NnError::InvalidConfig(format!(
                    "block {i} must run at stride {stride}, got {}",
                    block.stride
                )));
            }
            if block.skip_stage != tap {
                return Err(NnError::InvalidConfig(format!(
                    "stride-{stride} block must tap pooling stage {tap:?}, got {:?}",
                    block.skip_stage
                )));
            }
            if !block.fusion_weight.is_finite() {
                return Err(NnError::InvalidConfig("fusion weights must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn fusion_weights(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.fusion_weight).collect()
    }
}

struct Builder {
    nodes: Vec<Node>,
    params: Vec<ParamSpec>,
}

impl Builder {
    fn push(&mut self, name: &str, op: Op, inputs: Vec<usize>) -> usize {
        self.nodes.push(Node {
            name: name.to_string(),
            op,
            inputs,
        });
        self.nodes.len() - 1
    }

    fn conv(
        &mut self,
        name: &str,
        input: usize,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        init: Init,
    ) -> usize {
        let w = format!("{name}_w");
        let b = format!("{name}_b");
        self.params.push(ParamSpec {
            name: w.clone(),
            dims: [out_ch, in_ch, kernel, kernel],
            init,
        });
        self.params.push(ParamSpec {
            name: b.clone(),
            dims: [out_ch, 1, 1, 1],
            init: Init::Zeros,
        });
        self.push(
            name,
            Op::Conv {
                weight: w,
                bias: b,
                stride: 1,
                pad: (kernel - 1) / 2,
            },
            vec![input],
        )
    }

    fn deconv(&mut self, name: &str, input: usize, channels: usize, stride: usize) -> usize {
        let w = format!("{name}_w");
        self.params.push(ParamSpec {
            name: w.clone(),
            dims: [channels, channels, 2 * stride, 2 * stride],
            init: Init::Bilinear,
        });
        self.push(name, Op::Deconv { weight: w, stride }, vec![input])
    }
}

/// Assembles the network graph for a config. The graph output is the
/// weighted sum of per-stride score maps, each center-cropped to the
/// input's spatial size.
pub fn build(config: &MsfcnConfig) -> Result<Graph> {
    config.validate()?;
    let widths = &config.backbone.stage_widths;
    let convs = &config.backbone.convs_per_stage;
    let classes = config.classes;

    let mut b = Builder {
        nodes: vec![],
        params: vec![],
    };
    let input = b.push("input", Op::Input, vec![]);

    let mut prev = input;
    let mut prev_ch = 3usize;
    let mut pool_out = [0usize; 5];
    for stage in 0..5 {
        for j in 0..convs[stage] {
            let name = format!("conv{}_{}", stage + 1, j + 1);
            let c = b.conv(&name, prev, prev_ch, widths[stage], 3, Init::HeNormal);
            prev = b.push(&format!("relu{}_{}", stage + 1, j + 1), Op::Relu, vec![c]);
            prev_ch = widths[stage];
        }
        prev = b.push(
            &format!("pool{}", stage + 1),
            Op::MaxPool { kernel: 2, stride: 2 },
            vec![prev],
        );
        pool_out[stage] = prev;
    }

    let fc6 = b.conv("fc6", prev, prev_ch, config.backbone.fc6_channels, 7, Init::HeNormal);
    let relu6 = b.push("relu6", Op::Relu, vec![fc6]);
    let drop6 = b.push("drop6", Op::Dropout { rate: config.fc6_dropout }, vec![relu6]);
    let fc7 = b.conv(
        "fc7",
        drop6,
        config.backbone.fc6_channels,
        config.backbone.fc7_channels,
        1,
        Init::HeNormal,
    );
    let relu7 = b.push("relu7", Op::Relu, vec![fc7]);
    let drop7 = b.push("drop7", Op::Dropout { rate: config.fc7_dropout }, vec![relu7]);
    let score_fr = b.conv("score_fr", drop7, config.backbone.fc7_channels, classes, 1, Init::HeNormal);

    // Each block upsamples its pre-deconvolution signal back to input
    // size; later blocks refine that signal with a shallower skip tap
    // before their own upsampling.
    let mut pre_deconv = score_fr;
    let mut score_crops: Vec<usize> = Vec::new();
    for block in &config.blocks {
        if let Some(stage) = block.skip_stage {
            let tap = pool_out[stage - 1];
            let tap_ch = widths[stage - 1];
            let up_name = match block.stride {
                16 => "upscore2_a",
                _ => "upscore2_b",
            };
            let up2 = b.deconv(up_name, pre_deconv, classes, 2);
            let score_tap = b.conv(
                &format!("score_pool{stage}"),
                tap,
                tap_ch,
                classes,
                1,
                Init::HeNormal,
            );
            let cropped = b.push(&format!("{up_name}_crop"), Op::CropLike, vec![up2, score_tap]);
            pre_deconv = b.push(
                &format!("fuse_pool{stage}"),
                Op::WSum { weights: vec![1.0, 1.0] },
                vec![cropped, score_tap],
            );
        }
        let up = b.deconv(&format!("upscore{}", block.stride), pre_deconv, classes, block.stride);
        let crop = b.push(&format!("score{}", block.stride), Op::CropLike, vec![up, input]);
        score_crops.push(crop);
    }

    let fused = b.push(
        "fused",
        Op::WSum { weights: config.fusion_weights() },
        score_crops,
    );

    let graph = Graph {
        nodes: b.nodes,
        params: b.params,
        output: fused,
    };
    graph.validate()?;
    Ok(graph)
}

impl Graph {
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.dims.iter().product::<usize>()).sum()
    }
}

/// Fresh parameters for a graph: He-normal conv weights, bilinear deconv
/// kernels, zero biases. Deterministic in the seed; draws happen in the
/// graph's parameter declaration order.
pub fn init_params<T: Scalar>(graph: &Graph, seed: u64) -> Params<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::new();
    for spec in &graph.params {
        let [d0, d1, d2, d3] = spec.dims;
        let tensor = match spec.init {
            Init::Zeros => crate::tensor::Tensor::zeros(d0, d1, d2, d3),
            Init::Bilinear => bilinear_kernel(d0, d1, d2),
            Init::HeNormal => {
                let fan_in = (d1 * d2 * d3) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
                let data = (0..d0 * d1 * d2 * d3)
                    .map(|_| T::from_f64(normal.sample(&mut rng)))
                    .collect();
                crate::tensor::Tensor::from_vec(d0, d1, d2, d3, data)
                    .expect("generated buffer matches shape")
            }
        };
        params.insert(spec.name.clone(), tensor);
    }
    params
}
