//! The forecasting network: data embedding, stacked spatio-temporal blocks
//! (multi-head temporal attention followed by Chebyshev graph convolution,
//! one residual around each block), and two output heads — a convolutional
//! stack for the value forecast and a two-layer perceptron for the Moran
//! auxiliary forecast. Decoding is direct: all τ horizons come out of one
//! pass, nothing autoregressive.
//!
//! Parameters live in a [`ParamStore`] (named, deterministically ordered);
//! each training step binds them as leaves on a fresh tape.

use std::cell::RefCell;
use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adaptive::{fuse, macro_adjacency, micro_adjacency, MacroParams, MicroKernels};
use crate::data::NormStats;
use crate::graph::{cheb_conv_seq, laplacian, scale_laplacian, spectral_radius, ChebCoeffs};
use crate::tensor::{Tape, Tensor};
use crate::{Error, Result};

// ── configuration ────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_nodes: usize,
    pub in_features: usize,
    pub in_steps: usize,
    pub out_steps: usize,
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub cheb_order: usize,
    pub target_feature: usize,
    pub use_moran: bool,
    pub use_macro: bool,
    pub use_micro: bool,
    /// Embedding width of the macro similarity map.
    pub macro_embed: usize,
    /// Hidden channels of the micro convolution.
    pub micro_hidden: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if self.n_nodes == 0 || self.in_features == 0 {
            return err("n_nodes and in_features must be >= 1".into());
        }
        if self.in_steps == 0 || self.out_steps == 0 {
            return err("in_steps and out_steps must be >= 1".into());
        }
        if self.heads == 0 || self.blocks == 0 || self.cheb_order == 0 {
            return err("heads, blocks and cheb_order must be >= 1".into());
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return err(format!(
                "d_model ({}) must be divisible by heads ({})",
                self.d_model, self.heads
            ));
        }
        if self.target_feature >= self.in_features {
            return err(format!(
                "target_feature {} out of range ({} features)",
                self.target_feature, self.in_features
            ));
        }
        if self.use_micro && self.in_steps < 3 {
            return err(format!(
                "micro module needs in_steps >= 3, got {}",
                self.in_steps
            ));
        }
        if self.macro_embed == 0 || self.micro_hidden == 0 {
            return err("macro_embed and micro_hidden must be >= 1".into());
        }
        Ok(())
    }
}

// ── parameter store ──────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named, ordered collection of learnable arrays. Iteration order is the
/// registration order and is the canonical order for optimizer state,
/// gradients and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> ParamId {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "parameter '{name}' shape/data mismatch"
        );
        assert!(
            !self.by_name.contains_key(&name),
            "parameter '{name}' registered twice"
        );
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push(Param { name, shape, data });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.entries[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|p| p.data.len()).sum()
    }
}

// ── model ────────────────────────────────────────────────────────────

struct BlockIds {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    theta: Vec<ParamId>,
    cheb_w: Vec<ParamId>,
}

struct Head2Ids {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

struct Ids {
    embed_w: ParamId,
    embed_b: ParamId,
    embed_pos: ParamId,
    blocks: Vec<BlockIds>,
    head1_k1: ParamId,
    head1_k2: ParamId,
    head1_k3: ParamId,
    head2: Option<Head2Ids>,
    macro_params: Option<(ParamId, ParamId)>,
    micro_kernels: Option<(ParamId, ParamId)>,
    /// Log-variance gates of the uncertainty loss (s1, and s2 when the
    /// auxiliary task exists).
    loss_s: Option<(ParamId, Option<ParamId>)>,
}

pub struct Model {
    pub cfg: ModelConfig,
    pub uncertainty: bool,
    pub store: ParamStore,
    ids: Ids,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

impl Model {
    /// Builds and deterministically initializes all parameters.
    /// `uncertainty` registers the loss log-variances as parameters.
    pub fn new(cfg: ModelConfig, uncertainty: bool, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let (c, d, t, tau, n) = (
            cfg.in_features,
            cfg.d_model,
            cfg.in_steps,
            cfg.out_steps,
            cfg.n_nodes,
        );

        let embed_w = store.add(
            "embed.w",
            vec![c, d],
            uniform(&mut rng, c * d, 1.0 / (c as f64).sqrt()),
        );
        let embed_b = store.add("embed.b", vec![d], vec![0.0; d]);
        let embed_pos = store.add("embed.pos", vec![t, d], uniform(&mut rng, t * d, 0.1));

        let w_scale = 1.0 / (d as f64).sqrt();
        let blocks = (0..cfg.blocks)
            .map(|b| {
                let attn = |store: &mut ParamStore, rng: &mut ChaCha8Rng, which: &str| {
                    store.add(
                        format!("block{b}.attn.{which}"),
                        vec![d, d],
                        uniform(rng, d * d, w_scale),
                    )
                };
                let wq = attn(&mut store, &mut rng, "wq");
                let wk = attn(&mut store, &mut rng, "wk");
                let wv = attn(&mut store, &mut rng, "wv");
                let wo = attn(&mut store, &mut rng, "wo");
                let theta = (0..cfg.cheb_order)
                    .map(|k| store.add(format!("block{b}.cheb.theta{k}"), vec![1], vec![1.0]))
                    .collect();
                let cheb_w = (0..cfg.cheb_order)
                    .map(|k| {
                        store.add(
                            format!("block{b}.cheb.w{k}"),
                            vec![d, d],
                            uniform(&mut rng, d * d, w_scale),
                        )
                    })
                    .collect();
                BlockIds {
                    wq,
                    wk,
                    wv,
                    wo,
                    theta,
                    cheb_w,
                }
            })
            .collect();

        let head1_k1 = store.add(
            "head1.k1",
            vec![tau, t, 1, 1],
            uniform(&mut rng, tau * t, 1.0 / (t as f64).sqrt()),
        );
        let head1_k2 = store.add(
            "head1.k2",
            vec![tau, tau, 1, d],
            uniform(&mut rng, tau * tau * d, 1.0 / ((tau * d) as f64).sqrt()),
        );
        let head1_k3 = store.add(
            "head1.k3",
            vec![tau, tau, 1],
            uniform(&mut rng, tau * tau, 1.0 / (tau as f64).sqrt()),
        );

        let head2 = cfg.use_moran.then(|| Head2Ids {
            w1: store.add(
                "head2.w1",
                vec![t, d],
                uniform(&mut rng, t * d, 1.0 / (t as f64).sqrt()),
            ),
            b1: store.add("head2.b1", vec![d], vec![0.0; d]),
            w2: store.add(
                "head2.w2",
                vec![d, tau],
                uniform(&mut rng, d * tau, 1.0 / (d as f64).sqrt()),
            ),
            b2: store.add("head2.b2", vec![tau], vec![0.0; tau]),
        });

        let macro_params = cfg.use_macro.then(|| {
            let de = cfg.macro_embed;
            (
                store.add(
                    "macro.phi_w",
                    vec![c, de],
                    uniform(&mut rng, c * de, 1.0 / (c as f64).sqrt()),
                ),
                store.add("macro.phi_b", vec![de], vec![0.0; de]),
            )
        });

        let micro_kernels = cfg.use_micro.then(|| {
            let dh = cfg.micro_hidden;
            // The second kernel starts nonnegative: its output feeds the
            // ReLU gate in the fusion, and an edge gated to zero at
            // initialization would never receive gradient again.
            let k2_scale = 1.0 / ((dh * t) as f64).sqrt();
            let k2_data: Vec<f64> = (0..n * dh * t)
                .map(|_| rng.gen_range(0.0..2.0 * k2_scale))
                .collect();
            (
                store.add(
                    "micro.k1",
                    vec![dh, c, 1, 3],
                    uniform(&mut rng, dh * c * 3, 1.0 / ((3 * c) as f64).sqrt()),
                ),
                store.add("micro.k2", vec![n, dh, 1, t], k2_data),
            )
        });

        let loss_s = uncertainty.then(|| {
            let s1 = store.add("loss.s1", vec![1], vec![0.0]);
            let s2 = cfg
                .use_moran
                .then(|| store.add("loss.s2", vec![1], vec![0.0]));
            (s1, s2)
        });

        Ok(Model {
            cfg,
            uncertainty,
            store,
            ids: Ids {
                embed_w,
                embed_b,
                embed_pos,
                blocks,
                head1_k1,
                head1_k2,
                head1_k3,
                head2,
                macro_params,
                micro_kernels,
                loss_s,
            },
        })
    }

    /// Binds every parameter as a leaf on `tape`. With `trainable`, the
    /// leaves require gradients.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> Binding<'_> {
        Binding {
            model: self,
            tape: tape.clone(),
            trainable,
            tensors: RefCell::new(vec![None; self.store.len()]),
        }
    }

    /// Uncertainty-loss gate tensors (s1, s2) of a binding, when present.
    pub fn loss_gates(&self, bind: &Binding) -> (Option<Tensor>, Option<Tensor>) {
        match self.ids.loss_s {
            None => (None, None),
            Some((s1, s2)) => (Some(bind.get(s1)), s2.map(|id| bind.get(id))),
        }
    }

    /// One full forward pass over a window `x` of shape [N, T, C].
    /// `a0` is the initial adjacency as a constant on the same tape.
    pub fn forward(&self, bind: &Binding, x: &Tensor, a0: &Tensor) -> Result<ForwardOutput> {
        self.forward_with_gamma(bind, x, a0, None)
    }

    /// [`Model::forward`] with the spectral estimate pinned. The estimate
    /// is a stop-gradient by design, so gradient checks must hold it fixed
    /// while perturbing parameters.
    pub fn forward_with_gamma(
        &self,
        bind: &Binding,
        x: &Tensor,
        a0: &Tensor,
        gamma_override: Option<f64>,
    ) -> Result<ForwardOutput> {
        let cfg = &self.cfg;
        let (n, t, c, d, tau) = (
            cfg.n_nodes,
            cfg.in_steps,
            cfg.in_features,
            cfg.d_model,
            cfg.out_steps,
        );
        if x.shape() != vec![n, t, c] {
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: x.shape(),
                rhs: vec![n, t, c],
            });
        }

        // Data embedding: per-step projection plus temporal position table.
        let embedded = x
            .reshape(&[n * t, c])?
            .linear(&bind.get(self.ids.embed_w), &bind.get(self.ids.embed_b))?
            .reshape(&[n, t, d])?
            .add_suffix(&bind.get(self.ids.embed_pos))?;

        // Adaptive graph for this window.
        let a_macro = match self.ids.macro_params {
            Some((w, b)) => {
                let p = MacroParams {
                    phi_weight: bind.get(w),
                    phi_bias: bind.get(b),
                };
                macro_adjacency(&x.mean_axis(1)?, &p, a0)?
            }
            None => a0.clone(),
        };
        let a_micro = match self.ids.micro_kernels {
            Some((k1, k2)) => micro_adjacency(
                x,
                &MicroKernels {
                    k1: bind.get(k1),
                    k2: bind.get(k2),
                },
            )?,
            None => x.tape().ones(&[n, n]),
        };
        let a_fused = fuse(&a_macro, &a_micro)?;

        // Chebyshev theory wants a symmetric operator; the learned graph is
        // directed, so reconcile with (A + Aᵀ)/2 before the Laplacian.
        let sym = a_fused.add(&a_fused.transpose2d()?)?.mul_const(0.5);
        let lap = laplacian(&sym)?;
        let gamma = gamma_override.unwrap_or_else(|| spectral_radius(&lap));
        let lt = scale_laplacian(&lap, gamma)?;

        let mut hid = embedded;
        for block in &self.ids.blocks {
            let attended = multi_head_attention(
                &hid,
                cfg.heads,
                &bind.get(block.wq),
                &bind.get(block.wk),
                &bind.get(block.wv),
                &bind.get(block.wo),
            )?;
            let coeffs = ChebCoeffs {
                theta: block.theta.iter().map(|&id| bind.get(id)).collect(),
                weights: block.cheb_w.iter().map(|&id| bind.get(id)).collect(),
            };
            let mixed = cheb_conv_seq(&attended, &lt, &coeffs)?;
            hid = hid.add(&mixed)?;
        }

        // Main head: conv over [1, T, N, d] reshaping T→τ, ReLU between the
        // 2-D convolutions, then a final 1-D channel mix.
        let img = hid.permute(&[1, 0, 2])?.reshape(&[1, t, n, d])?;
        let c1 = img
            .conv2d(&bind.get(self.ids.head1_k1), (1, 1), (0, 0))?
            .relu();
        let c2 = c1.conv2d(&bind.get(self.ids.head1_k2), (1, 1), (0, 0))?; // [1, τ, N, 1]
        let seq = c2.reshape(&[1, tau, n])?;
        let c3 = seq.conv1d(&bind.get(self.ids.head1_k3), 1, 0)?; // [1, τ, N]
        let y_hat = c3
            .reshape(&[tau, n])?
            .transpose2d()?
            .reshape(&[n, tau, 1])?;

        // Auxiliary head: pool the trunk over d_model, then a per-node
        // two-layer perceptron mapping the time profile to τ Moran values.
        let y_moran_hat = match &self.ids.head2 {
            Some(h2) => {
                let pooled = hid.mean_axis(2)?; // [N, T]
                let z = pooled
                    .linear(&bind.get(h2.w1), &bind.get(h2.b1))?
                    .relu()
                    .linear(&bind.get(h2.w2), &bind.get(h2.b2))?;
                Some(z.reshape(&[n, tau, 1])?)
            }
            None => None,
        };

        Ok(ForwardOutput {
            y_hat,
            y_moran_hat,
            a_macro,
            a_micro,
            a_fused,
            gamma_max: gamma,
        })
    }
}

pub struct ForwardOutput {
    pub y_hat: Tensor,
    pub y_moran_hat: Option<Tensor>,
    pub a_macro: Tensor,
    pub a_micro: Tensor,
    pub a_fused: Tensor,
    /// Spectral estimate used for the scaled Laplacian (a stop-gradient).
    pub gamma_max: f64,
}

/// Per-tape view of the parameters.
pub struct Binding<'m> {
    model: &'m Model,
    tape: Tape,
    trainable: bool,
    tensors: RefCell<Vec<Option<Tensor>>>,
}

impl Binding<'_> {
    pub fn get(&self, id: ParamId) -> Tensor {
        let mut slot = self.tensors.borrow_mut();
        if let Some(t) = &slot[id.0] {
            return t.clone();
        }
        let p = self.model.store.get(id);
        let t = self
            .tape
            .leaf(p.data.clone(), &p.shape, self.trainable)
            .expect("stored parameters are consistent");
        slot[id.0] = Some(t.clone());
        t
    }

    /// Gradients in store order after a backward pass; `None` for
    /// parameters that never entered the forward graph.
    pub fn gradients(&self) -> Vec<Option<Vec<f64>>> {
        self.tensors
            .borrow()
            .iter()
            .map(|slot| slot.as_ref().and_then(|t| t.grad()))
            .collect()
    }
}

// ── attention ────────────────────────────────────────────────────────

/// Scaled dot-product attention over the last two axes: softmax(QKᵀ/√d_k)·V
/// applied independently per leading batch index.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let qs = q.shape();
    let d_k = *qs.last().ok_or_else(|| Error::invalid("attention", "rank >= 2 required"))?;
    let scores = q
        .matmul(&k.transpose_last2()?)?
        .mul_const(1.0 / (d_k as f64).sqrt());
    scores.softmax_lastdim().matmul(v)
}

/// Multi-head temporal attention over `x` [N, T, d_model]: learned
/// projections split into `heads` slices of width d_model/heads, attention
/// runs per node over time, and the concatenated heads pass through the
/// output projection. No cross-node terms anywhere.
pub fn multi_head_attention(
    x: &Tensor,
    heads: usize,
    wq: &Tensor,
    wk: &Tensor,
    wv: &Tensor,
    wo: &Tensor,
) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 3 {
        return Err(Error::invalid(
            "multi_head_attention",
            format!("expected [N, T, d_model], got {:?}", xs),
        ));
    }
    let (n, t, d) = (xs[0], xs[1], xs[2]);
    if heads == 0 || d % heads != 0 {
        return Err(Error::invalid(
            "multi_head_attention",
            format!("d_model ({d}) must be divisible by heads ({heads})"),
        ));
    }
    let dk = d / heads;
    let split = |y: Tensor| -> Result<Tensor> {
        y.reshape(&[n, t, heads, dk])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[n * heads, t, dk])
    };
    let q = split(x.matmul(wq)?)?;
    let k = split(x.matmul(wk)?)?;
    let v = split(x.matmul(wv)?)?;
    let attended = attention(&q, &k, &v)?;
    let merged = attended
        .reshape(&[n, heads, t, dk])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[n, t, d])?;
    merged.matmul(wo)
}

// ── checkpoints ──────────────────────────────────────────────────────

/// Everything needed to rebuild a trained model and its data pipeline.
#[derive(Debug, Clone)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub uncertainty: bool,
    pub lambda: f64,
    pub moran_k: usize,
    pub a0_sigma_km: f64,
    pub a0_threshold: f64,
    pub drop_missing_frac: f64,
    pub trained_epochs: usize,
    pub features: Vec<String>,
    pub stats: NormStats,
}

pub struct Checkpoint {
    pub cfg: ModelConfig,
    pub meta: CheckpointMeta,
    pub params: Vec<Param>,
}

const MANIFEST_END: &str = "end-manifest\n";

impl Checkpoint {
    pub fn from_model(model: &Model, meta: CheckpointMeta) -> Checkpoint {
        Checkpoint {
            cfg: model.cfg.clone(),
            meta,
            params: model.store.iter().cloned().collect(),
        }
    }

    /// Rebuilds the model, verifying that the stored parameter set matches
    /// the configuration structurally (same names, same shapes).
    pub fn into_model(&self) -> Result<Model> {
        let mut model = Model::new(self.cfg.clone(), self.meta.uncertainty, 0)?;
        if model.store.len() != self.params.len() {
            return Err(Error::invalid(
                "checkpoint",
                format!(
                    "parameter count mismatch: stored {}, expected {}",
                    self.params.len(),
                    model.store.len()
                ),
            ));
        }
        for (slot, stored) in model.store.iter_mut().zip(&self.params) {
            if slot.name != stored.name || slot.shape != stored.shape {
                return Err(Error::invalid(
                    "checkpoint",
                    format!(
                        "parameter mismatch: stored {}{:?}, expected {}{:?}",
                        stored.name, stored.shape, slot.name, slot.shape
                    ),
                ));
            }
            slot.data = stored.data.clone();
        }
        Ok(model)
    }

    /// Writes the manifest (key=value text listing every parameter's name,
    /// shape and byte offset) followed by one little-endian f64 blob.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut manifest = String::from("# aircast checkpoint v1\n");
        let mut kv = |k: &str, v: String| manifest.push_str(&format!("{k}={v}\n"));
        kv("meta.config_hash", self.meta.config_hash.clone());
        kv("meta.uncertainty", self.meta.uncertainty.to_string());
        kv("meta.lambda", self.meta.lambda.to_string());
        kv("meta.moran_k", self.meta.moran_k.to_string());
        kv("meta.a0_sigma_km", self.meta.a0_sigma_km.to_string());
        kv("meta.a0_threshold", self.meta.a0_threshold.to_string());
        kv(
            "meta.drop_missing_frac",
            self.meta.drop_missing_frac.to_string(),
        );
        kv("meta.trained_epochs", self.meta.trained_epochs.to_string());
        kv("meta.features", self.meta.features.join(";"));
        kv(
            "meta.norm_mean",
            self.meta
                .stats
                .mean
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        );
        kv(
            "meta.norm_std",
            self.meta
                .stats
                .std
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        );
        kv("cfg.n_nodes", self.cfg.n_nodes.to_string());
        kv("cfg.in_features", self.cfg.in_features.to_string());
        kv("cfg.in_steps", self.cfg.in_steps.to_string());
        kv("cfg.out_steps", self.cfg.out_steps.to_string());
        kv("cfg.d_model", self.cfg.d_model.to_string());
        kv("cfg.heads", self.cfg.heads.to_string());
        kv("cfg.blocks", self.cfg.blocks.to_string());
        kv("cfg.cheb_order", self.cfg.cheb_order.to_string());
        kv("cfg.target_feature", self.cfg.target_feature.to_string());
        kv("cfg.use_moran", self.cfg.use_moran.to_string());
        kv("cfg.use_macro", self.cfg.use_macro.to_string());
        kv("cfg.use_micro", self.cfg.use_micro.to_string());
        kv("cfg.macro_embed", self.cfg.macro_embed.to_string());
        kv("cfg.micro_hidden", self.cfg.micro_hidden.to_string());

        let mut offset = 0usize;
        for p in &self.params {
            let shape = p
                .shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            manifest.push_str(&format!("param.{}={}@{}\n", p.name, shape, offset));
            offset += p.data.len() * 8;
        }
        manifest.push_str(MANIFEST_END);

        let mut bytes = manifest.into_bytes();
        for p in &self.params {
            for v in &p.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes =
            std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let marker = MANIFEST_END.as_bytes();
        let pos = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| Error::invalid("checkpoint", "manifest terminator not found"))?;
        let manifest = std::str::from_utf8(&bytes[..pos])
            .map_err(|_| Error::invalid("checkpoint", "manifest is not UTF-8"))?;
        let blob = &bytes[pos + marker.len()..];

        let mut kv: HashMap<&str, &str> = HashMap::new();
        let mut params_spec: Vec<(String, Vec<usize>, usize)> = Vec::new();
        for line in manifest.lines() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid("checkpoint", format!("bad manifest line '{line}'")))?;
            if let Some(name) = key.strip_prefix("param.") {
                let (shape_s, off_s) = value.split_once('@').ok_or_else(|| {
                    Error::invalid("checkpoint", format!("bad parameter line '{line}'"))
                })?;
                let shape: Vec<usize> = shape_s
                    .split('x')
                    .map(|s| s.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::invalid("checkpoint", "bad shape"))?;
                let off: usize = off_s
                    .parse()
                    .map_err(|_| Error::invalid("checkpoint", "bad offset"))?;
                params_spec.push((name.to_string(), shape, off));
            } else {
                kv.insert(key, value);
            }
        }
        let get = |k: &str| -> Result<&str> {
            kv.get(k)
                .copied()
                .ok_or_else(|| Error::invalid("checkpoint", format!("missing key '{k}'")))
        };
        let parse_usize = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::invalid("checkpoint", format!("bad value for '{k}'")))
        };
        let parse_f64 = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::invalid("checkpoint", format!("bad value for '{k}'")))
        };
        let parse_bool = |k: &str| -> Result<bool> {
            get(k)?
                .parse()
                .map_err(|_| Error::invalid("checkpoint", format!("bad value for '{k}'")))
        };
        let parse_f64_list = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split(';')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::invalid("checkpoint", format!("bad value for '{k}'")))
        };

        let cfg = ModelConfig {
            n_nodes: parse_usize("cfg.n_nodes")?,
            in_features: parse_usize("cfg.in_features")?,
            in_steps: parse_usize("cfg.in_steps")?,
            out_steps: parse_usize("cfg.out_steps")?,
            d_model: parse_usize("cfg.d_model")?,
            heads: parse_usize("cfg.heads")?,
            blocks: parse_usize("cfg.blocks")?,
            cheb_order: parse_usize("cfg.cheb_order")?,
            target_feature: parse_usize("cfg.target_feature")?,
            use_moran: parse_bool("cfg.use_moran")?,
            use_macro: parse_bool("cfg.use_macro")?,
            use_micro: parse_bool("cfg.use_micro")?,
            macro_embed: parse_usize("cfg.macro_embed")?,
            micro_hidden: parse_usize("cfg.micro_hidden")?,
        };
        let meta = CheckpointMeta {
            config_hash: get("meta.config_hash")?.to_string(),
            uncertainty: parse_bool("meta.uncertainty")?,
            lambda: parse_f64("meta.lambda")?,
            moran_k: parse_usize("meta.moran_k")?,
            a0_sigma_km: parse_f64("meta.a0_sigma_km")?,
            a0_threshold: parse_f64("meta.a0_threshold")?,
            drop_missing_frac: parse_f64("meta.drop_missing_frac")?,
            trained_epochs: parse_usize("meta.trained_epochs")?,
            features: get("meta.features")?.split(';').map(|s| s.to_string()).collect(),
            stats: NormStats {
                mean: parse_f64_list("meta.norm_mean")?,
                std: parse_f64_list("meta.norm_std")?,
            },
        };

        let mut params = Vec::with_capacity(params_spec.len());
        for (name, shape, off) in params_spec {
            let n: usize = shape.iter().product();
            let end = off + n * 8;
            if end > blob.len() {
                return Err(Error::invalid(
                    "checkpoint",
                    format!("parameter '{name}' runs past the end of the blob"),
                ));
            }
            let data: Vec<f64> = blob[off..end]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
                .collect();
            params.push(Param { name, shape, data });
        }
        Ok(Checkpoint { cfg, meta, params })
    }
}
