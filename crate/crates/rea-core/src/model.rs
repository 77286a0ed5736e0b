//! The comparable-attention valuation graph.
//!
//! A shared bi-encoder embeds the target and every comparable; raw
//! attention scores are embedding dot products, optionally gated by a small
//! network that sees target-relative information (extended variant only);
//! softmax weights aggregate comparable values (and features, extended
//! variant), and a tanh-bounded decoder applies a multiplicative adjustment
//! in (-100%, +100%). Gradients are handwritten reverse-mode adjoints of
//! this fixed graph; which comparables were selected is a constant within
//! a step.
//!
//! Reductions over comparables run in ascending comparable id so results
//! are bit-identical under permutations of the input list.

use rand::Rng;

use crate::error::{Error, Result};
use crate::neural::{dot, softmax_in_order, Activation, DenseStack, ForwardCache, LayerShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Minimal model: encoder + attention + weighted value average.
    Rea,
    /// Extended model: adds the score gate, feature aggregation and the
    /// adjustment decoder.
    Erea,
}

/// Which retriever produced a comparable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Geo,
    Vector,
}

/// One retrieved comparable: scaled features, target-relative features
/// (distance in km, time delta in years), and its transformed value.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ComparableEntry {
    pub id: u64,
    pub source: Source,
    pub features: Vec<f64>,
    pub relative: Vec<f64>,
    pub value: f64,
}

/// Comparables retrieved for one target.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ComparableSet {
    pub target_id: u64,
    pub entries: Vec<ComparableEntry>,
}

impl ComparableSet {
    /// No self-reference, no duplicate ids, uniform dimensions.
    pub fn validate(&self, feature_dim: usize, rel_dim: usize) -> Result<()> {
        let mut seen = std::collections::HashSet::with_capacity(self.entries.len());
        for e in &self.entries {
            if e.id == self.target_id {
                return Err(Error::InvalidArgument(format!(
                    "target {} appears in its own comparable set",
                    self.target_id
                )));
            }
            if !seen.insert(e.id) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate comparable id {}",
                    e.id
                )));
            }
            if e.features.len() != feature_dim || e.relative.len() != rel_dim {
                return Err(Error::Dimension(format!(
                    "comparable {}: dims ({}, {}) expected ({feature_dim}, {rel_dim})",
                    e.id,
                    e.features.len(),
                    e.relative.len()
                )));
            }
        }
        Ok(())
    }

    /// Entry indices in ascending comparable id — the canonical reduction
    /// order.
    pub fn id_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by_key(|&i| self.entries[i].id);
        order
    }
}

/// Layer widths. The published parameter counts do not pin exact shapes,
/// so they stay configurable.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub embed_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub gate_hidden: usize,
    pub decoder_hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            encoder_hidden: vec![16],
            gate_hidden: 8,
            decoder_hidden: 16,
        }
    }
}

/// Dimension of F_i ⊕ R_i ⊕ v_i.
fn comp_vec_dim(feature_dim: usize, rel_dim: usize) -> usize {
    feature_dim + rel_dim + 1
}

/// Learnable parameters: a bi-encoder shared by targets and comparables,
/// plus gate and decoder stacks for the extended variant only.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub variant: Variant,
    pub feature_dim: usize,
    pub rel_dim: usize,
    pub embed_dim: usize,
    pub encoder: DenseStack,
    pub gate: Option<DenseStack>,
    pub decoder: Option<DenseStack>,
}

impl ModelParams {
    /// Seeded initialization. The encoder is drawn first so both variants
    /// share the same encoder stream under one seed.
    pub fn init(
        variant: Variant,
        feature_dim: usize,
        rel_dim: usize,
        arch: &ArchConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::Dimension("feature_dim must be positive".into()));
        }
        let mut encoder_shapes = Vec::new();
        let mut prev = feature_dim;
        for &h in &arch.encoder_hidden {
            encoder_shapes.push(LayerShape {
                in_dim: prev,
                out_dim: h,
                activation: Activation::Selu,
            });
            prev = h;
        }
        encoder_shapes.push(LayerShape {
            in_dim: prev,
            out_dim: arch.embed_dim,
            activation: Activation::Linear,
        });
        let encoder = DenseStack::init(&encoder_shapes, rng)?;

        let (gate, decoder) = match variant {
            Variant::Rea => (None, None),
            Variant::Erea => {
                let gate_in = feature_dim + comp_vec_dim(feature_dim, rel_dim);
                let mut gate = DenseStack::init(
                    &[
                        LayerShape {
                            in_dim: gate_in,
                            out_dim: arch.gate_hidden,
                            activation: Activation::Selu,
                        },
                        LayerShape {
                            in_dim: arch.gate_hidden,
                            out_dim: 1,
                            activation: Activation::Sigmoid,
                        },
                    ],
                    rng,
                )?;
                let dec_in = comp_vec_dim(feature_dim, rel_dim) + feature_dim;
                let mut decoder = DenseStack::init(
                    &[
                        LayerShape {
                            in_dim: dec_in,
                            out_dim: arch.decoder_hidden,
                            activation: Activation::Selu,
                        },
                        LayerShape {
                            in_dim: arch.decoder_hidden,
                            out_dim: 1,
                            activation: Activation::Tanh,
                        },
                    ],
                    rng,
                )?;
                // Correction heads start neutral: adj = 0 and a uniform
                // gate of 0.5, so the extended model's first predictions
                // coincide with the minimal model's instead of scattering
                // v_hat by a random tanh factor.
                for head in [&mut gate, &mut decoder] {
                    let last = head.layers_mut().last_mut().unwrap();
                    last.weights.iter_mut().for_each(|w| *w = 0.0);
                }

                (Some(gate), Some(decoder))
            }
        };

        Ok(Self {
            variant,
            feature_dim,
            rel_dim,
            embed_dim: arch.embed_dim,
            encoder,
            gate,
            decoder,
        })
    }

    /// Total learnable parameters across encoder, gate and decoder.
    pub fn param_count(&self) -> usize {
        self.encoder.param_count()
            + self.gate.as_ref().map_or(0, |g| g.param_count())
            + self.decoder.as_ref().map_or(0, |d| d.param_count())
    }

    /// Flat layout is encoder | gate | decoder.
    pub fn encoder_range(&self) -> std::ops::Range<usize> {
        0..self.encoder.param_count()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.encoder.write_params(&mut out);
        if let Some(g) = &self.gate {
            g.write_params(&mut out);
        }
        if let Some(d) = &self.decoder {
            d.write_params(&mut out);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "flat vector has {} values, model has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = self.encoder.read_params(flat)?;
        if let Some(g) = &mut self.gate {
            offset += g.read_params(&flat[offset..])?;
        }
        if let Some(d) = &mut self.decoder {
            d.read_params(&flat[offset..])?;
        }
        Ok(())
    }

    /// Bi-encoder embedding of a scaled feature vector (either side).
    pub fn encode(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.encoder.output(features)
    }
}

/// Output of one forward pass. `gamma` and `alpha` align with the entry
/// order of the input set; `agg` is empty for the minimal variant.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Prediction {
    pub v_hat: f64,
    pub adj: f64,
    pub v_star: f64,
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub agg: Vec<f64>,
}

/// Raw attention scores: α_i = Z_i · Z_t.
pub fn attention_scores(z_target: &[f64], z_comparables: &[Vec<f64>]) -> Vec<f64> {
    z_comparables.iter().map(|z| dot(z, z_target)).collect()
}

fn gate_input(target_features: &[f64], entry: &ComparableEntry) -> Vec<f64> {
    let mut input = Vec::with_capacity(
        target_features.len() + comp_vec_dim(entry.features.len(), entry.relative.len()),
    );
    input.extend_from_slice(target_features);
    input.extend_from_slice(&entry.features);
    input.extend_from_slice(&entry.relative);
    input.push(entry.value);
    input
}

/// F_i ⊕ R_i ⊕ v_i.
fn comp_vector(entry: &ComparableEntry) -> Vec<f64> {
    let mut c = Vec::with_capacity(comp_vec_dim(entry.features.len(), entry.relative.len()));
    c.extend_from_slice(&entry.features);
    c.extend_from_slice(&entry.relative);
    c.push(entry.value);
    c
}

/// Gated scores β_i = α_i · gate(F_t ⊕ F_i ⊕ R_i ⊕ v_i). Extended variant
/// only; the minimal variant bypasses with β_i = α_i.
pub fn gated_scores(
    params: &ModelParams,
    alphas: &[f64],
    target_features: &[f64],
    entries: &[ComparableEntry],
) -> Result<Vec<f64>> {
    let gate = params.gate.as_ref().ok_or_else(|| {
        Error::Unsupported("gated scores are an extended-variant operation".into())
    })?;
    alphas
        .iter()
        .zip(entries)
        .map(|(&alpha, entry)| {
            let g = gate.output(&gate_input(target_features, entry))?[0];
            Ok(alpha * g)
        })
        .collect()
}

/// Weighted sums over comparables in ascending-id order:
/// v̂ = Σ γ_i v_i and Agg = Σ γ_i (F_i ⊕ R_i ⊕ v_i).
pub fn aggregate(gammas: &[f64], entries: &[ComparableEntry]) -> Result<(f64, Vec<f64>)> {
    if entries.is_empty() {
        return Err(Error::Empty(
            "aggregate over an empty comparable set".into(),
        ));
    }
    if gammas.len() != entries.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} comparables",
            gammas.len(),
            entries.len()
        )));
    }
    let total: f64 = gammas.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "attention weights sum to {total}, expected 1"
        )));
    }
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by_key(|&i| entries[i].id);

    let mut v_hat = 0.0;
    let mut agg = vec![0.0; comp_vec_dim(entries[0].features.len(), entries[0].relative.len())];
    for &i in &order {
        let gamma = gammas[i];
        v_hat += gamma * entries[i].value;
        for (a, c) in agg.iter_mut().zip(comp_vector(&entries[i])) {
            *a += gamma * c;
        }
    }
    Ok((v_hat, agg))
}

/// Adjustment head: adj = tanh-bounded decoder output on Agg ⊕ F_t,
/// v* = (1 + adj) · v̂. Extended variant only.
pub fn adjust(
    params: &ModelParams,
    agg: &[f64],
    target_features: &[f64],
    v_hat: f64,
) -> Result<(f64, f64)> {
    let decoder = params
        .decoder
        .as_ref()
        .ok_or_else(|| Error::Unsupported("adjustment is an extended-variant operation".into()))?;
    let mut input = Vec::with_capacity(agg.len() + target_features.len());
    input.extend_from_slice(agg);
    input.extend_from_slice(target_features);
    let adj = decoder.output(&input)?[0];
    Ok((adj, (1.0 + adj) * v_hat))
}

/// Full forward pass over a non-empty comparable set. Attention covers all
/// entries regardless of their source retriever.
pub fn model_forward(
    params: &ModelParams,
    target_features: &[f64],
    set: &ComparableSet,
) -> Result<Prediction> {
    let tape = forward_tape(
        params,
        &BatchItem {
            target_features,
            comparables: set,
            target_value: 0.0,
        },
    )?;
    Ok(Prediction {
        v_hat: tape.v_hat,
        adj: tape.adj,
        v_star: tape.v_star,
        gamma: tape.gamma,
        alpha: tape.alpha,
        agg: tape.agg,
    })
}

/// One training example: scaled target features, its comparables, and the
/// transformed target value.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub target_features: &'a [f64],
    pub comparables: &'a ComparableSet,
    pub target_value: f64,
}

struct SampleTape {
    enc_target: ForwardCache,
    enc_comps: Vec<ForwardCache>,
    z_t: Vec<f64>,
    z_comps: Vec<Vec<f64>>,
    gate_caches: Vec<ForwardCache>,
    gates: Vec<f64>,
    dec_cache: Option<ForwardCache>,
    alpha: Vec<f64>,
    gamma: Vec<f64>,
    order: Vec<usize>,
    v_hat: f64,
    adj: f64,
    v_star: f64,
    agg: Vec<f64>,
}

fn forward_tape(params: &ModelParams, item: &BatchItem) -> Result<SampleTape> {
    let set = item.comparables;
    if set.entries.is_empty() {
        return Err(Error::Empty(format!(
            "no comparables for target {}; widen retrieval",
            set.target_id
        )));
    }
    set.validate(params.feature_dim, params.rel_dim)?;

    let (z_t, enc_target) = params.encoder.forward(item.target_features)?;
    let mut enc_comps = Vec::with_capacity(set.entries.len());
    let mut z_comps = Vec::with_capacity(set.entries.len());
    for e in &set.entries {
        let (z, cache) = params.encoder.forward(&e.features)?;
        z_comps.push(z);
        enc_comps.push(cache);
    }
    let alpha = attention_scores(&z_t, &z_comps);

    let (beta, gates, gate_caches) = match params.variant {
        Variant::Rea => (alpha.clone(), Vec::new(), Vec::new()),
        Variant::Erea => {
            let gate = params
                .gate
                .as_ref()
                .ok_or_else(|| Error::Unsupported("extended variant without a gate".into()))?;
            let mut beta = Vec::with_capacity(alpha.len());
            let mut gates = Vec::with_capacity(alpha.len());
            let mut caches = Vec::with_capacity(alpha.len());
            for (&a, entry) in alpha.iter().zip(&set.entries) {
                let (g_out, cache) = gate.forward(&gate_input(item.target_features, entry))?;
                beta.push(a * g_out[0]);
                gates.push(g_out[0]);
                caches.push(cache);
            }
            (beta, gates, caches)
        }
    };

    let order = set.id_order();
    let gamma = softmax_in_order(&beta, &order)?;
    let (v_hat, agg_full) = aggregate(&gamma, &set.entries)?;

    let (adj, v_star, dec_cache, agg) = match params.variant {
        Variant::Rea => (0.0, v_hat, None, Vec::new()),
        Variant::Erea => {
            let decoder = params
                .decoder
                .as_ref()
                .ok_or_else(|| Error::Unsupported("extended variant without a decoder".into()))?;
            let mut input = Vec::with_capacity(agg_full.len() + item.target_features.len());
            input.extend_from_slice(&agg_full);
            input.extend_from_slice(item.target_features);
            let (out, cache) = decoder.forward(&input)?;
            let adj = out[0];
            (adj, (1.0 + adj) * v_hat, Some(cache), agg_full)
        }
    };

    Ok(SampleTape {
        enc_target,
        enc_comps,
        z_t,
        z_comps,
        gate_caches,
        gates,
        dec_cache,
        alpha,
        gamma,
        order,
        v_hat,
        adj,
        v_star,
        agg,
    })
}

/// Mean squared error over the batch and its gradient in the model's flat
/// parameter layout. Gradients flow through decoder, gate, attention and
/// the encoder on both the target and comparable sides.
pub fn loss_and_grads(params: &ModelParams, batch: &[BatchItem]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty("loss over an empty batch".into()));
    }
    let enc_count = params.encoder.param_count();
    let gate_count = params.gate.as_ref().map_or(0, |g| g.param_count());
    let mut grads = vec![0.0; params.param_count()];
    let inv_n = 1.0 / batch.len() as f64;
    let mut mse = 0.0;

    for item in batch {
        let tape = forward_tape(params, item)?;
        let set = item.comparables;
        let m = set.entries.len();
        let residual = tape.v_star - item.target_value;
        mse += residual * residual * inv_n;
        let d_v_star = 2.0 * residual * inv_n;

        // Adjustment head.
        let (mut d_gamma, d_v_hat) = match params.variant {
            Variant::Rea => (vec![0.0; m], d_v_star),
            Variant::Erea => {
                let decoder = params.decoder.as_ref().unwrap();
                let d_adj = d_v_star * tape.v_hat;
                let d_v_hat = d_v_star * (1.0 + tape.adj);
                let dec_grads = &mut grads[enc_count + gate_count..];
                let d_dec_input =
                    decoder.backward(tape.dec_cache.as_ref().unwrap(), &[d_adj], dec_grads)?;
                // The first q inputs follow Agg; the trailing target
                // features are constants.
                let q = comp_vec_dim(params.feature_dim, params.rel_dim);
                let d_agg = &d_dec_input[..q];
                let mut d_gamma = vec![0.0; m];
                for &i in &tape.order {
                    d_gamma[i] = dot(d_agg, &comp_vector(&set.entries[i]));
                }
                (d_gamma, d_v_hat)
            }
        };
        for (dg, entry) in d_gamma.iter_mut().zip(&set.entries) {
            *dg += d_v_hat * entry.value;
        }

        // Softmax.
        let mut weighted = 0.0;
        for &i in &tape.order {
            weighted += d_gamma[i] * tape.gamma[i];
        }
        let d_beta: Vec<f64> = (0..m)
            .map(|i| tape.gamma[i] * (d_gamma[i] - weighted))
            .collect();

        // Gate (extended variant only), then raw scores.
        let d_alpha: Vec<f64> = match params.variant {
            Variant::Rea => d_beta,
            Variant::Erea => {
                let gate = params.gate.as_ref().unwrap();
                let mut d_alpha = vec![0.0; m];
                for &i in &tape.order {
                    d_alpha[i] = d_beta[i] * tape.gates[i];
                    let d_gate = d_beta[i] * tape.alpha[i];
                    let gate_grads = &mut grads[enc_count..enc_count + gate_count];
                    gate.backward(&tape.gate_caches[i], &[d_gate], gate_grads)?;
                }
                d_alpha
            }
        };

        // Attention dot products, then the shared encoder.
        let mut d_z_t = vec![0.0; params.embed_dim];
        for &i in &tape.order {
            for (acc, z) in d_z_t.iter_mut().zip(&tape.z_comps[i]) {
                *acc += d_alpha[i] * z;
            }
            let d_z_i: Vec<f64> = tape.z_t.iter().map(|z| d_alpha[i] * z).collect();
            params
                .encoder
                .backward(&tape.enc_comps[i], &d_z_i, &mut grads[..enc_count])?;
        }
        params
            .encoder
            .backward(&tape.enc_target, &d_z_t, &mut grads[..enc_count])?;
    }

    Ok((mse, grads))
}
