//! Shared convolutional encoder and per-task MLP heads.
//!
//! Encoder: three 3x3 stride-2 convolutions (padding 1) with ReLU, global
//! average pooling, then a linear projection to the embedding. Each head
//! is `linear -> ReLU -> linear` ending in a scalar.

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::error::{invalid, mismatch, parse_err, Result};
use crate::fr::Task;
use crate::io::{NamedTensor, TensorContainer};
use crate::rng::{self, tag};
use crate::synth::Frame;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_width: usize,
    pub input_height: usize,
    pub channels: [usize; 3],
    pub embed_dim: usize,
    pub head_hidden: usize,
}

impl ModelConfig {
    pub fn desk(input_width: usize, input_height: usize) -> Self {
        ModelConfig {
            input_width,
            input_height,
            channels: [8, 16, 32],
            embed_dim: 64,
            head_hidden: 32,
        }
    }

    fn to_values(&self) -> Vec<f64> {
        [
            self.input_width,
            self.input_height,
            self.channels[0],
            self.channels[1],
            self.channels[2],
            self.embed_dim,
            self.head_hidden,
        ]
        .iter()
        .map(|&v| v as f64)
        .collect()
    }

    fn from_values(v: &[f64]) -> Result<Self> {
        if v.len() != 7 || v.iter().any(|x| *x < 1.0 || x.fract() != 0.0) {
            return Err(parse_err!("bad model config record {v:?}"));
        }
        let u = |i: usize| v[i] as usize;
        Ok(ModelConfig {
            input_width: u(0),
            input_height: u(1),
            channels: [u(2), u(3), u(4)],
            embed_dim: u(5),
            head_hidden: u(6),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub kernel: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderParams {
    pub convs: [ConvLayer; 3],
    pub proj_w: ParamId,
    pub proj_b: ParamId,
}

impl EncoderParams {
    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.convs.iter().flat_map(|c| [c.kernel, c.bias]).collect();
        ids.extend([self.proj_w, self.proj_b]);
        ids
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadParams {
    /// Proxy task the head regresses; `None` for a quality-score head.
    pub task: Option<Task>,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl HeadParams {
    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.w1, self.b1, self.w2, self.b2]
    }
}

/// Encoder plus one head per task, all stored in a single [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub heads: Vec<HeadParams>,
}

fn uniform(rng: &mut impl Rng, shape: Vec<usize>, bound: f64) -> Tensor {
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor {
        shape,
        values,
        grad: None,
    }
}

/// Adds a scalar-output two-layer MLP to `store`. Weights are drawn from
/// `rng`; biases start at zero.
pub fn add_head(
    store: &mut ParamStore,
    prefix: &str,
    task: Option<Task>,
    input_dim: usize,
    hidden: usize,
    rng: &mut impl Rng,
) -> HeadParams {
    // He-uniform ahead of a ReLU, LeCun-uniform on the output layer.
    let w1 = store.add(
        format!("{prefix}.fc1.weight"),
        uniform(
            rng,
            vec![hidden, input_dim],
            (6.0 / input_dim as f64).sqrt(),
        ),
    );
    let b1 = store.add(format!("{prefix}.fc1.bias"), Tensor::zeros(vec![hidden]));
    let w2 = store.add(
        format!("{prefix}.fc2.weight"),
        uniform(rng, vec![1, hidden], (3.0 / hidden as f64).sqrt()),
    );
    let b2 = store.add(format!("{prefix}.fc2.bias"), Tensor::zeros(vec![1]));
    HeadParams {
        task,
        w1,
        b1,
        w2,
        b2,
    }
}

impl Model {
    pub fn new(config: ModelConfig, tasks: &[Task], seed: u64) -> Result<Self> {
        if tasks.is_empty() {
            return Err(invalid!("model needs at least one task head"));
        }
        if config.input_width < 8 || config.input_height < 8 {
            return Err(invalid!(
                "input {}x{} too small for three stride-2 convolutions",
                config.input_width,
                config.input_height
            ));
        }
        let mut rng = rng::stream(seed, &[tag::INIT]);
        let mut store = ParamStore::new();
        let mut cin = 1;
        let convs = std::array::from_fn(|i| {
            let cout = config.channels[i];
            let fan_in = (cin * 9) as f64;
            let kernel = store.add(
                format!("enc.conv{}.weight", i + 1),
                uniform(&mut rng, vec![cout, cin, 3, 3], (6.0 / fan_in).sqrt()),
            );
            let bias = store.add(format!("enc.conv{}.bias", i + 1), Tensor::zeros(vec![cout]));
            cin = cout;
            ConvLayer { kernel, bias }
        });
        let c3 = config.channels[2];
        let proj_w = store.add(
            "enc.proj.weight",
            uniform(
                &mut rng,
                vec![config.embed_dim, c3],
                (3.0 / c3 as f64).sqrt(),
            ),
        );
        let proj_b = store.add("enc.proj.bias", Tensor::zeros(vec![config.embed_dim]));
        let heads = tasks
            .iter()
            .map(|t| {
                add_head(
                    &mut store,
                    &format!("head.{}", t.name()),
                    Some(*t),
                    config.embed_dim,
                    config.head_hidden,
                    &mut rng,
                )
            })
            .collect();
        Ok(Model {
            config,
            store,
            encoder: EncoderParams {
                convs,
                proj_w,
                proj_b,
            },
            heads,
        })
    }

    pub fn tasks(&self) -> Vec<Task> {
        self.heads.iter().filter_map(|h| h.task).collect()
    }

    pub fn head(&self, task: Task) -> Option<&HeadParams> {
        self.heads.iter().find(|h| h.task == Some(task))
    }

    pub fn encoder_param_count(&self) -> usize {
        self.encoder
            .ids()
            .iter()
            .map(|id| self.store.get(*id).len())
            .sum()
    }

    pub fn check_frame(&self, frame: &Frame) -> Result<()> {
        if frame.width != self.config.input_width || frame.height != self.config.input_height {
            return Err(mismatch!(
                "frame {}x{} does not match encoder input {}x{}",
                frame.width,
                frame.height,
                self.config.input_width,
                self.config.input_height
            ));
        }
        Ok(())
    }

    /// Records the encoder forward pass for `frame`; returns the embedding
    /// node `z` of dimension `embed_dim`.
    pub fn encoder_forward(&self, graph: &mut Graph, frame: &Frame) -> Result<NodeId> {
        self.check_frame(frame)?;
        let mut x = graph.input(vec![1, frame.height, frame.width], frame.to_f64())?;
        for conv in &self.encoder.convs {
            let k = graph.param(&self.store, conv.kernel);
            let b = graph.param(&self.store, conv.bias);
            let y = graph.conv2d(x, k, b, 2, 1)?;
            x = graph.relu(y)?;
        }
        let pooled = graph.global_avg_pool(x)?;
        let w = graph.param(&self.store, self.encoder.proj_w);
        let b = graph.param(&self.store, self.encoder.proj_b);
        graph.linear(pooled, w, b)
    }

    /// Embedding of one frame, without keeping the graph.
    pub fn embed(&self, frame: &Frame) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let z = self.encoder_forward(&mut g, frame)?;
        Ok(g.value(z).to_vec())
    }

    /// Mean-pooled clip embedding over `frames`.
    pub fn embed_clip<'a>(&self, frames: impl IntoIterator<Item = &'a Frame>) -> Result<Vec<f64>> {
        let embeddings = frames
            .into_iter()
            .map(|f| self.embed(f))
            .collect::<Result<Vec<_>>>()?;
        mean_pool(&embeddings)
    }

    pub fn to_container(&self) -> TensorContainer {
        let mut c = TensorContainer::default();
        c.push(NamedTensor::f64(
            "meta.config",
            vec![7],
            self.config.to_values(),
        ));
        for (_, name, t) in self.store.iter() {
            c.push(NamedTensor::f32(name, t.shape.clone(), t.values.clone()));
        }
        c
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_container(&TensorContainer::load(path)?)
    }

    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        let meta = c
            .get("meta.config")
            .ok_or_else(|| parse_err!("checkpoint lacks meta.config"))?;
        let config = ModelConfig::from_values(&meta.values)?;
        let mut tasks = Vec::new();
        for t in &c.tensors {
            if let Some(rest) = t.name.strip_prefix("head.") {
                if let Some(task) = rest.strip_suffix(".fc1.weight") {
                    tasks.push(task.parse::<Task>()?);
                }
            }
        }
        let mut model = Model::new(config, &tasks, 0)?;
        let ids: Vec<ParamId> = model.store.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let name = model.store.name(id).to_string();
            let src = c
                .get(&name)
                .ok_or_else(|| parse_err!("checkpoint lacks tensor {name}"))?;
            let dst = model.store.get_mut(id);
            if src.shape != dst.shape {
                return Err(mismatch!(
                    "tensor {name}: shape {:?} vs {:?}",
                    src.shape,
                    dst.shape
                ));
            }
            dst.values = src.values.clone();
        }
        Ok(model)
    }
}

/// Records a head forward pass on embedding node `z`; returns a scalar node.
pub fn head_forward(
    graph: &mut Graph,
    store: &ParamStore,
    head: &HeadParams,
    z: NodeId,
) -> Result<NodeId> {
    let in_dim = store.get(head.w1).shape[1];
    if graph.shape(z) != [in_dim] {
        return Err(mismatch!(
            "head for {} expects dimension {in_dim}, got {:?}",
            head.task.map_or("quality", Task::name),
            graph.shape(z)
        ));
    }
    let (w1, b1) = (graph.param(store, head.w1), graph.param(store, head.b1));
    let h = graph.linear(z, w1, b1)?;
    let h = graph.relu(h)?;
    let (w2, b2) = (graph.param(store, head.w2), graph.param(store, head.b2));
    graph.linear(h, w2, b2)
}

/// Head prediction on a plain vector.
pub fn head_predict(store: &ParamStore, head: &HeadParams, z: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let zn = g.input(vec![z.len()], z.to_vec())?;
    let y = head_forward(&mut g, store, head, zn)?;
    Ok(g.scalar(y))
}

/// `(1/N) sum_i smoothL1(head(encoder(frame_i)), target_i)` recorded on
/// `graph`, with embeddings supplied by the caller.
pub fn task_loss_on(
    graph: &mut Graph,
    store: &ParamStore,
    head: &HeadParams,
    embeddings: &[NodeId],
    targets: &[f64],
    beta: f64,
) -> Result<NodeId> {
    if embeddings.len() != targets.len() || embeddings.is_empty() {
        return Err(mismatch!(
            "{} embeddings for {} targets",
            embeddings.len(),
            targets.len()
        ));
    }
    let losses = embeddings
        .iter()
        .zip(targets)
        .map(|(z, t)| {
            let pred = head_forward(graph, store, head, *z)?;
            graph.smooth_l1(pred, *t, beta)
        })
        .collect::<Result<Vec<_>>>()?;
    graph.mean(&losses)
}

/// Per-task loss over a batch of `(frame, target)` pairs.
pub fn task_loss(
    model: &Model,
    task: Task,
    batch: &[(&Frame, f64)],
    beta: f64,
) -> Result<(Graph, NodeId)> {
    let head = model
        .head(task)
        .ok_or_else(|| invalid!("model has no head for task {task}"))?;
    let mut g = Graph::new();
    let z = batch
        .iter()
        .map(|(f, _)| model.encoder_forward(&mut g, f))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<f64> = batch.iter().map(|(_, t)| *t).collect();
    let loss = task_loss_on(&mut g, &model.store, head, &z, &targets, beta)?;
    Ok((g, loss))
}

/// Elementwise mean of equally sized embeddings.
pub fn mean_pool(embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = embeddings
        .first()
        .ok_or_else(|| invalid!("mean_pool of zero embeddings"))?;
    let mut acc = vec![0.0; first.len()];
    for e in embeddings {
        if e.len() != acc.len() {
            return Err(mismatch!("embedding dims {} vs {}", e.len(), acc.len()));
        }
        acc.iter_mut().zip(e).for_each(|(a, v)| *a += v);
    }
    let n = embeddings.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}
