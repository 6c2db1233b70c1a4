use super::layers::{
    cross_entropy, gap_backward, gap_forward, relu_backward, relu_inplace, softmax, Act, BatchNorm2d, BnCache,
    Conv2d, Linear,
};
use super::{NnError, Scalar};
use crate::dsp::ImageTensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

pub const NUM_GROUPS: usize = 3;
/// Group holding only the classification head.
pub const HEAD_GROUP: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub stage_blocks: Vec<usize>,
    pub stage_channels: Vec<usize>,
    pub num_classes: usize,
    pub input_size: usize,
    pub arch_tag: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stage_blocks: vec![2, 2, 2],
            stage_channels: vec![16, 32, 64],
            num_classes: 2,
            input_size: 224,
            arch_tag: "mini-18".into(),
        }
    }
}

impl ModelConfig {
    /// Desk-width variants of the basic-block ResNet layouts.
    pub fn from_arch(tag: &str, input_size: usize) -> Result<Self, NnError> {
        let blocks = match tag {
            "mini-10" => vec![1, 1, 1],
            "mini-18" => vec![2, 2, 2],
            "mini-34" => vec![3, 4, 6],
            other => {
                return Err(NnError::InvalidConfig(format!(
                    "unknown architecture '{other}' (expected mini-10, mini-18 or mini-34)"
                )))
            }
        };
        let cfg = Self {
            stage_blocks: blocks,
            input_size,
            arch_tag: tag.to_string(),
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if self.stage_blocks.is_empty() || self.stage_blocks.len() != self.stage_channels.len() {
            return bad("stage_blocks and stage_channels must be non-empty and equally long");
        }
        if self.stage_blocks.contains(&0) || self.stage_channels.contains(&0) {
            return bad("stage sizes must be positive");
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        if self.input_size < 1 << (self.stage_blocks.len() - 1) {
            return bad("input_size too small for the number of stages");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub index: usize,
    pub frozen: bool,
    pub lr_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shortcut<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasicBlock<T> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub shortcut: Option<Shortcut<T>>,
    pub stage: usize,
    pub index: usize,
    pub group: usize,
}

impl<T: Scalar> BasicBlock<T> {
    fn new(in_ch: usize, out_ch: usize, stride: usize, stage: usize, index: usize, group: usize) -> Self {
        let shortcut = (stride != 1 || in_ch != out_ch).then(|| Shortcut {
            conv: Conv2d::new(in_ch, out_ch, 1, stride, 0),
            bn: BatchNorm2d::new(out_ch),
        });
        Self {
            conv1: Conv2d::new(in_ch, out_ch, 3, stride, 1),
            bn1: BatchNorm2d::new(out_ch),
            conv2: Conv2d::new(out_ch, out_ch, 3, 1, 1),
            bn2: BatchNorm2d::new(out_ch),
            shortcut,
            stage,
            index,
            group,
        }
    }

    fn prefix(&self) -> String {
        format!("stage{}.block{}", self.stage, self.index)
    }
}

/// Read-only view of one named tensor.
#[derive(Debug)]
pub struct TensorRef<'a, T> {
    pub name: String,
    pub group: usize,
    pub trainable: bool,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

/// Mutable view of one named tensor.
#[derive(Debug)]
pub struct TensorMut<'a, T> {
    pub name: String,
    pub group: usize,
    pub trainable: bool,
    pub shape: Vec<usize>,
    pub data: &'a mut [T],
}

/// Per-tensor gradients, keyed by tensor name. Frozen tensors have no entry.
pub type Gradients<T> = BTreeMap<String, Vec<T>>;

fn conv_shape<T>(c: &Conv2d<T>) -> Vec<usize> {
    vec![c.out_ch, c.in_ch, c.kernel, c.kernel]
}

fn push_bn<'a, T>(out: &mut Vec<TensorRef<'a, T>>, prefix: &str, group: usize, bn: &'a BatchNorm2d<T>) {
    let c = vec![bn.gamma.len()];
    for (suffix, trainable, data) in [
        ("weight", true, &bn.gamma),
        ("bias", true, &bn.beta),
        ("running_mean", false, &bn.running_mean),
        ("running_var", false, &bn.running_var),
    ] {
        out.push(TensorRef {
            name: format!("{prefix}.{suffix}"),
            group,
            trainable,
            shape: c.clone(),
            data,
        });
    }
}

fn push_bn_mut<'a, T>(out: &mut Vec<TensorMut<'a, T>>, prefix: &str, group: usize, bn: &'a mut BatchNorm2d<T>) {
    let c = vec![bn.gamma.len()];
    let BatchNorm2d {
        gamma,
        beta,
        running_mean,
        running_var,
    } = bn;
    for (suffix, trainable, data) in [
        ("weight", true, gamma),
        ("bias", true, beta),
        ("running_mean", false, running_mean),
        ("running_var", false, running_var),
    ] {
        out.push(TensorMut {
            name: format!("{prefix}.{suffix}"),
            group,
            trainable,
            shape: c.clone(),
            data,
        });
    }
}

fn conv_ref<'a, T>(name: String, group: usize, conv: &'a Conv2d<T>) -> TensorRef<'a, T> {
    TensorRef {
        name,
        group,
        trainable: true,
        shape: conv_shape(conv),
        data: &conv.weight,
    }
}

fn conv_mut<'a, T>(name: String, group: usize, conv: &'a mut Conv2d<T>) -> TensorMut<'a, T> {
    TensorMut {
        name,
        group,
        trainable: true,
        shape: conv_shape(conv),
        data: &mut conv.weight,
    }
}

/// Compact residual CNN: 3x3 stem, stages of basic blocks, global average
/// pool and a linear head.
///
/// Parameters are split into three learning-rate groups: group 0 is the stem
/// and the first stage, group 1 the remaining stages, group 2 the head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub stem: Conv2d<T>,
    pub stem_bn: BatchNorm2d<T>,
    pub blocks: Vec<BasicBlock<T>>,
    pub head: Linear<T>,
    pub groups: [ParamGroup; NUM_GROUPS],
}

/// Everything the backward pass needs from a training forward pass.
struct Trace<T> {
    /// Input of layer `i` (0 = stem, `k + 1` = block `k`); only kept from the
    /// first trainable layer on.
    inputs: Vec<Option<Act<T>>>,
    stem: Option<(BnCache<T>, Act<T>)>,
    blocks: Vec<Option<BlockTrace<T>>>,
    last: Act<T>,
    features: Vec<T>,
}

struct BlockTrace<T> {
    bn1: BnCache<T>,
    r1: Act<T>,
    bn2: BnCache<T>,
    sc: Option<BnCache<T>>,
    out: Act<T>,
}

fn group_of_layer(layer: usize, blocks: &[BasicBlock<impl Scalar>]) -> usize {
    if layer == 0 {
        0
    } else if layer <= blocks.len() {
        blocks[layer - 1].group
    } else {
        HEAD_GROUP
    }
}

impl<T: Scalar> Model<T> {
    /// He fan-in initialization for convolutions, unit/zero normalization
    /// parameters, zero head bias. Deterministic in `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c0 = config.stage_channels[0];
        let mut stem = Conv2d::new(3, c0, 3, 1, 1);
        he_init(&mut stem, &mut rng);
        let mut blocks = Vec::new();
        let mut in_ch = c0;
        for (s, (&n_blocks, &ch)) in config.stage_blocks.iter().zip(&config.stage_channels).enumerate() {
            let group = if s == 0 { 0 } else { 1 };
            for b in 0..n_blocks {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let mut block = BasicBlock::new(in_ch, ch, stride, s, b, group);
                he_init(&mut block.conv1, &mut rng);
                he_init(&mut block.conv2, &mut rng);
                if let Some(sc) = block.shortcut.as_mut() {
                    he_init(&mut sc.conv, &mut rng);
                }
                blocks.push(block);
                in_ch = ch;
            }
        }
        let mut head = Linear::new(in_ch, config.num_classes);
        let std = (1.0 / in_ch as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        for w in &mut head.weight {
            *w = T::from_f64_lossy(normal.sample(&mut rng));
        }
        Ok(Self {
            config: config.clone(),
            stem_bn: BatchNorm2d::new(c0),
            stem,
            blocks,
            head,
            groups: std::array::from_fn(|i| ParamGroup {
                index: i,
                frozen: false,
                lr_scale: 1.0,
            }),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.head.in_features
    }

    pub fn set_frozen(&mut self, groups: &[usize], frozen: bool) -> Result<(), NnError> {
        if let Some(&g) = groups.iter().find(|&&g| g >= NUM_GROUPS) {
            return Err(NnError::InvalidConfig(format!("no parameter group {g}")));
        }
        for &g in groups {
            self.groups[g].frozen = frozen;
        }
        Ok(())
    }

    pub fn set_lr_scales(&mut self, scales: [f64; NUM_GROUPS]) {
        for (g, s) in self.groups.iter_mut().zip(scales) {
            assert!(s > 0.0, "learning-rate scale must be positive");
            g.lr_scale = s;
        }
    }

    pub fn is_frozen(&self, group: usize) -> bool {
        self.groups[group].frozen
    }

    /// Every tensor in a fixed order: stem, blocks, head.
    pub fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = vec![conv_ref("stem.conv.weight".into(), 0, &self.stem)];
        push_bn(&mut out, "stem.bn", 0, &self.stem_bn);
        for block in &self.blocks {
            let (p, g) = (block.prefix(), block.group);
            out.push(conv_ref(format!("{p}.conv1.weight"), g, &block.conv1));
            push_bn(&mut out, &format!("{p}.bn1"), g, &block.bn1);
            out.push(conv_ref(format!("{p}.conv2.weight"), g, &block.conv2));
            push_bn(&mut out, &format!("{p}.bn2"), g, &block.bn2);
            if let Some(sc) = &block.shortcut {
                out.push(conv_ref(format!("{p}.shortcut.conv.weight"), g, &sc.conv));
                push_bn(&mut out, &format!("{p}.shortcut.bn"), g, &sc.bn);
            }
        }
        let (o, i) = (self.head.out_features, self.head.in_features);
        out.push(TensorRef {
            name: "head.weight".into(),
            group: HEAD_GROUP,
            trainable: true,
            shape: vec![o, i],
            data: &self.head.weight,
        });
        out.push(TensorRef {
            name: "head.bias".into(),
            group: HEAD_GROUP,
            trainable: true,
            shape: vec![o],
            data: &self.head.bias,
        });
        out
    }

    /// Mutable counterpart of [`Model::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        let Model {
            stem,
            stem_bn,
            blocks,
            head,
            ..
        } = self;
        let mut out = vec![conv_mut("stem.conv.weight".into(), 0, stem)];
        push_bn_mut(&mut out, "stem.bn", 0, stem_bn);
        for block in blocks.iter_mut() {
            let (p, g) = (block.prefix(), block.group);
            let BasicBlock {
                conv1,
                bn1,
                conv2,
                bn2,
                shortcut,
                ..
            } = block;
            out.push(conv_mut(format!("{p}.conv1.weight"), g, conv1));
            push_bn_mut(&mut out, &format!("{p}.bn1"), g, bn1);
            out.push(conv_mut(format!("{p}.conv2.weight"), g, conv2));
            push_bn_mut(&mut out, &format!("{p}.bn2"), g, bn2);
            if let Some(sc) = shortcut {
                out.push(conv_mut(format!("{p}.shortcut.conv.weight"), g, &mut sc.conv));
                push_bn_mut(&mut out, &format!("{p}.shortcut.bn"), g, &mut sc.bn);
            }
        }
        let (o, i) = (head.out_features, head.in_features);
        out.push(TensorMut {
            name: "head.weight".into(),
            group: HEAD_GROUP,
            trainable: true,
            shape: vec![o, i],
            data: &mut head.weight,
        });
        out.push(TensorMut {
            name: "head.bias".into(),
            group: HEAD_GROUP,
            trainable: true,
            shape: vec![o],
            data: &mut head.bias,
        });
        out
    }

    /// Number of trainable scalars.
    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().filter(|t| t.trainable).map(|t| t.data.len()).sum()
    }

    /// SHA-256 over every tensor (including running statistics) in groups 0 and 1.
    pub fn body_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for t in self.tensors().iter().filter(|t| t.group != HEAD_GROUP) {
            h.update(t.name.as_bytes());
            for v in t.data {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// SHA-256 over every tensor, the config and the group flags.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        h.update(serde_json::to_vec(&self.groups).expect("groups serialize"));
        for t in self.tensors() {
            h.update(t.name.as_bytes());
            for v in t.data {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    fn check_input(&self, x: &Act<T>) -> Result<(), NnError> {
        let s = self.config.input_size;
        if x.c != 3 || x.h != s || x.w != s || x.n == 0 {
            return Err(NnError::ShapeMismatch(format!(
                "expected n x 3 x {s} x {s}, got {} x {} x {} x {}",
                x.n, x.c, x.h, x.w
            )));
        }
        Ok(())
    }

    /// Inference through the body with running statistics; returns pooled
    /// features `[n x feature_dim]`.
    pub fn features(&self, x: &Act<T>) -> Result<Vec<T>, NnError> {
        self.check_input(x)?;
        let mut a = self.stem_bn.forward_eval(&self.stem.forward(x)).0;
        relu_inplace(&mut a);
        for block in &self.blocks {
            a = block_eval(block, &a);
        }
        Ok(gap_forward(&a))
    }

    /// Logits `[n x num_classes]`.
    pub fn forward(&mut self, x: &Act<T>, mode: Mode) -> Result<Vec<T>, NnError> {
        match mode {
            Mode::Eval => self.forward_eval(x),
            Mode::Train => Ok(self.forward_train(x, false)?.1),
        }
    }

    pub fn forward_eval(&self, x: &Act<T>) -> Result<Vec<T>, NnError> {
        let f = self.features(x)?;
        Ok(self.head.forward(&f, x.n))
    }

    pub fn predict_proba(&self, x: &Act<T>) -> Result<Vec<T>, NnError> {
        Ok(softmax(&self.forward_eval(x)?, self.config.num_classes))
    }

    /// First layer (0 = stem, k + 1 = block k, blocks + 1 = head) whose group is trainable.
    fn first_trainable_layer(&self) -> Option<usize> {
        (0..=self.blocks.len() + 1).find(|&l| !self.groups[group_of_layer(l, &self.blocks)].frozen)
    }

    fn forward_train(&mut self, x: &Act<T>, keep: bool) -> Result<(Option<Trace<T>>, Vec<T>), NnError> {
        self.check_input(x)?;
        let first = self.first_trainable_layer().unwrap_or(usize::MAX);
        let nb = self.blocks.len();
        let record = |layer: usize| keep && layer >= first;
        let mut inputs: Vec<Option<Act<T>>> = vec![None; nb + 1];
        let mut blocks_trace: Vec<Option<BlockTrace<T>>> = (0..nb).map(|_| None).collect();

        let frozen0 = self.groups[0].frozen;
        let conv = self.stem.forward(x);
        let (mut a, bn) = if frozen0 {
            self.stem_bn.forward_eval(&conv)
        } else {
            self.stem_bn.forward_train(&conv, true)
        };
        relu_inplace(&mut a);
        let stem_trace = if record(0) {
            inputs[0] = Some(x.clone());
            Some((bn, a.clone()))
        } else {
            None
        };

        for k in 0..nb {
            let frozen = self.groups[self.blocks[k].group].frozen;
            if record(k + 1) {
                let (out, t) = block_train(&mut self.blocks[k], &a, frozen);
                inputs[k + 1] = Some(std::mem::replace(&mut a, out.clone()));
                blocks_trace[k] = Some(BlockTrace { out, ..t });
            } else if frozen {
                a = block_eval(&self.blocks[k], &a);
            } else {
                a = block_train(&mut self.blocks[k], &a, false).0;
            }
        }
        let features = gap_forward(&a);
        let logits = self.head.forward(&features, x.n);
        let trace = keep.then_some(Trace {
            inputs,
            stem: stem_trace,
            blocks: blocks_trace,
            last: a,
            features,
        });
        Ok((trace, logits))
    }

    /// Replaces every running mean and variance with the cumulative average
    /// of batch statistics over `batches`, in order. Weights are untouched.
    pub fn calibrate_bn<'b>(&mut self, batches: impl IntoIterator<Item = &'b Act<T>>) -> Result<usize, NnError>
    where
        T: 'b,
    {
        let mut seen = 0usize;
        for x in batches {
            self.check_input(x)?;
            let w = Some(1.0 / (seen + 1) as f64);
            let mut a = self.stem_bn.forward_batch(&self.stem.forward(x), w).0;
            relu_inplace(&mut a);
            for block in &mut self.blocks {
                let mut r1 = block.bn1.forward_batch(&block.conv1.forward(&a), w).0;
                relu_inplace(&mut r1);
                let mut out = block.bn2.forward_batch(&block.conv2.forward(&r1), w).0;
                match block.shortcut.as_mut() {
                    Some(sc) => add_inplace(&mut out, &sc.bn.forward_batch(&sc.conv.forward(&a), w).0),
                    None => add_inplace(&mut out, &a),
                }
                relu_inplace(&mut out);
                a = out;
            }
            seen += 1;
        }
        Ok(seen)
    }

    /// Mean softmax cross-entropy on a training-mode forward pass, with
    /// gradients for every tensor in an unfrozen group.
    pub fn loss_and_grads(&mut self, x: &Act<T>, labels: &[usize]) -> Result<(T, Gradients<T>), NnError> {
        if labels.len() != x.n {
            return Err(NnError::ShapeMismatch(format!("{} labels for {} samples", labels.len(), x.n)));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.config.num_classes) {
            return Err(NnError::ShapeMismatch(format!("label {bad} out of range")));
        }
        let (trace, logits) = self.forward_train(x, true)?;
        let trace = trace.expect("trace requested");
        let classes = self.config.num_classes;
        let (loss, dlogits) = cross_entropy(&logits, labels, classes);
        let mut grads = Gradients::new();
        let Some(first) = self.first_trainable_layer() else {
            return Ok((loss, grads));
        };
        let nb = self.blocks.len();

        let head_trainable = !self.groups[HEAD_GROUP].frozen;
        let mut dw = vec![T::zero(); self.head.weight.len()];
        let mut db = vec![T::zero(); self.head.bias.len()];
        let dfeat = self.head.backward(
            &trace.features,
            &dlogits,
            x.n,
            head_trainable.then_some((dw.as_mut_slice(), db.as_mut_slice())),
        );
        if head_trainable {
            grads.insert("head.weight".into(), dw);
            grads.insert("head.bias".into(), db);
        }
        if first > nb {
            return Ok((loss, grads));
        }
        let last = &trace.last;
        let mut dact = gap_backward(&dfeat, last.n, last.c, last.h, last.w);

        for k in (0..nb).rev() {
            if k + 1 < first {
                break;
            }
            let block = &self.blocks[k];
            let bt = trace.blocks[k].as_ref().expect("block trace");
            let input = trace.inputs[k + 1].as_ref().expect("block input");
            let need_dx = k + 1 > first;
            let trainable = !self.groups[block.group].frozen;
            dact = block_backward(block, bt, input, &dact, need_dx, trainable, &mut grads).unwrap_or(dact);
        }
        if first == 0 {
            let (bn_cache, stem_out) = trace.stem.as_ref().expect("stem trace");
            let input = trace.inputs[0].as_ref().expect("stem input");
            let da = relu_backward(stem_out, &dact);
            let mut dg = vec![T::zero(); self.stem_bn.channels()];
            let mut dbeta = vec![T::zero(); self.stem_bn.channels()];
            let dconv = self
                .stem_bn
                .backward(bn_cache, &da, true, Some((&mut dg, &mut dbeta)))
                .expect("dx requested");
            let mut dwc = vec![T::zero(); self.stem.weight.len()];
            self.stem.backward(input, &dconv, false, Some(&mut dwc));
            grads.insert("stem.conv.weight".into(), dwc);
            grads.insert("stem.bn.weight".into(), dg);
            grads.insert("stem.bn.bias".into(), dbeta);
        }
        Ok((loss, grads))
    }

    /// Converts to another element type (used for double-precision checks).
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut out = Model::<U>::build(&self.config, 0).expect("config already validated");
        out.groups = self.groups;
        let src = self.tensors();
        for (dst, s) in out.tensors_mut().into_iter().zip(src) {
            debug_assert_eq!(dst.name, s.name);
            for (d, v) in dst.data.iter_mut().zip(s.data) {
                *d = U::from_f64_lossy(v.as_f64());
            }
        }
        out
    }
}

fn he_init<T: Scalar>(conv: &mut Conv2d<T>, rng: &mut ChaCha8Rng) {
    let std = (2.0 / conv.fan_in() as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid std");
    for w in &mut conv.weight {
        *w = T::from_f64_lossy(normal.sample(rng));
    }
}

fn add_inplace<T: Scalar>(a: &mut Act<T>, b: &Act<T>) {
    for (x, &y) in a.data.iter_mut().zip(&b.data) {
        *x += y;
    }
}

fn block_eval<T: Scalar>(block: &BasicBlock<T>, x: &Act<T>) -> Act<T> {
    let mut r1 = block.bn1.forward_eval(&block.conv1.forward(x)).0;
    relu_inplace(&mut r1);
    let mut out = block.bn2.forward_eval(&block.conv2.forward(&r1)).0;
    match &block.shortcut {
        Some(sc) => add_inplace(&mut out, &sc.bn.forward_eval(&sc.conv.forward(x)).0),
        None => add_inplace(&mut out, x),
    }
    relu_inplace(&mut out);
    out
}

/// Training-mode block forward. Frozen blocks normalize with running statistics.
fn block_train<T: Scalar>(block: &mut BasicBlock<T>, x: &Act<T>, frozen: bool) -> (Act<T>, BlockTrace<T>) {
    let bn = |bn: &mut BatchNorm2d<T>, a: &Act<T>| {
        if frozen {
            bn.forward_eval(a)
        } else {
            bn.forward_train(a, true)
        }
    };
    let (mut r1, c1) = bn(&mut block.bn1, &block.conv1.forward(x));
    relu_inplace(&mut r1);
    let (mut out, c2) = bn(&mut block.bn2, &block.conv2.forward(&r1));
    let sc = match block.shortcut.as_mut() {
        Some(sc) => {
            let (s, c) = bn(&mut sc.bn, &sc.conv.forward(x));
            add_inplace(&mut out, &s);
            Some(c)
        }
        None => {
            add_inplace(&mut out, x);
            None
        }
    };
    relu_inplace(&mut out);
    let trace = BlockTrace {
        bn1: c1,
        r1,
        bn2: c2,
        sc,
        out: Act::zeros(0, 0, 0, 0),
    };
    (out, trace)
}

fn block_backward<T: Scalar>(
    block: &BasicBlock<T>,
    t: &BlockTrace<T>,
    x: &Act<T>,
    dout: &Act<T>,
    need_dx: bool,
    trainable: bool,
    grads: &mut Gradients<T>,
) -> Option<Act<T>> {
    let p = block.prefix();
    let dz = relu_backward(&t.out, dout);
    let zeros = |n: usize| vec![T::zero(); n];

    let (mut g2, mut b2) = (zeros(block.bn2.channels()), zeros(block.bn2.channels()));
    let da2 = block
        .bn2
        .backward(&t.bn2, &dz, true, trainable.then_some((g2.as_mut_slice(), b2.as_mut_slice())))
        .expect("dx requested");
    let mut w2 = zeros(block.conv2.weight.len());
    let dr1 = block
        .conv2
        .backward(&t.r1, &da2, true, trainable.then_some(w2.as_mut_slice()))
        .expect("dx requested");
    let db1 = relu_backward(&t.r1, &dr1);
    let (mut g1, mut b1) = (zeros(block.bn1.channels()), zeros(block.bn1.channels()));
    let da1 = block
        .bn1
        .backward(&t.bn1, &db1, true, trainable.then_some((g1.as_mut_slice(), b1.as_mut_slice())))
        .expect("dx requested");
    let mut w1 = zeros(block.conv1.weight.len());
    let dx_main = block.conv1.backward(x, &da1, need_dx, trainable.then_some(w1.as_mut_slice()));

    let dx_short = match (&block.shortcut, &t.sc) {
        (Some(sc), Some(cache)) => {
            let (mut gs, mut bs) = (zeros(sc.bn.channels()), zeros(sc.bn.channels()));
            let ds = sc
                .bn
                .backward(cache, &dz, true, trainable.then_some((gs.as_mut_slice(), bs.as_mut_slice())))
                .expect("dx requested");
            let mut ws = zeros(sc.conv.weight.len());
            let dx = sc.conv.backward(x, &ds, need_dx, trainable.then_some(ws.as_mut_slice()));
            if trainable {
                grads.insert(format!("{p}.shortcut.conv.weight"), ws);
                grads.insert(format!("{p}.shortcut.bn.weight"), gs);
                grads.insert(format!("{p}.shortcut.bn.bias"), bs);
            }
            dx
        }
        _ => need_dx.then(|| dz.clone()),
    };
    if trainable {
        grads.insert(format!("{p}.conv1.weight"), w1);
        grads.insert(format!("{p}.bn1.weight"), g1);
        grads.insert(format!("{p}.bn1.bias"), b1);
        grads.insert(format!("{p}.conv2.weight"), w2);
        grads.insert(format!("{p}.bn2.weight"), g2);
        grads.insert(format!("{p}.bn2.bias"), b2);
    }
    match (dx_main, dx_short) {
        (Some(mut a), Some(b)) => {
            add_inplace(&mut a, &b);
            Some(a)
        }
        _ => None,
    }
}

/// Packs HWC images into an NCHW batch.
pub fn images_to_act<T: Scalar>(images: &[&ImageTensor]) -> Act<T> {
    let (h, w) = images.first().map_or((0, 0), |i| (i.height, i.width));
    let mut act = Act::zeros(images.len(), 3, h, w);
    for (n, img) in images.iter().enumerate() {
        assert_eq!((img.height, img.width), (h, w), "batch images must share a size");
        let dst = act.sample_mut(n);
        for r in 0..h {
            for c in 0..w {
                let src = img.index(r, c, 0);
                for ch in 0..3 {
                    dst[ch * h * w + r * w + c] = T::from_f32(img.pixels[src + ch]).expect("finite pixel");
                }
            }
        }
    }
    act
}
