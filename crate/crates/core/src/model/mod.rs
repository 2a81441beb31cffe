//! M3 assembly: input fusion, the three encoders, the gating network,
//! aggregation, output fusion, and inner-product scoring over the vocabulary.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, LoadedModel};

use crate::data::{Event, UserSequence};
use crate::encoders::{AttentionParams, GruParams, SeqInput, TcnParams, TinyRangeParams};
use crate::error::{Error, Result};
use crate::params::{glorot_matrix, zero_bias, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    M3R,
    M3C,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::M3R => "m3r",
            Variant::M3C => "m3c",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m3r" => Ok(Variant::M3R),
            "m3c" => Ok(Variant::M3C),
            other => Err(Error::InvalidArgument(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    WeightedConcat,
    WeightedSum,
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Aggregation::WeightedConcat => "concat",
            Aggregation::WeightedSum => "sum",
        })
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "concat" | "weighted-concat" => Ok(Aggregation::WeightedConcat),
            "sum" | "weighted-sum" => Ok(Aggregation::WeightedSum),
            other => Err(Error::InvalidArgument(format!(
                "unknown aggregation `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateType {
    Fixed,
    BottomSwitch,
    ContextualSwitch,
}

impl std::fmt::Display for GateType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GateType::Fixed => "fixed",
            GateType::BottomSwitch => "bottom",
            GateType::ContextualSwitch => "contextual",
        })
    }
}

impl std::str::FromStr for GateType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(GateType::Fixed),
            "bottom" | "bottom-switch" => Ok(GateType::BottomSwitch),
            "contextual" | "contextual-switch" => Ok(GateType::ContextualSwitch),
            other => Err(Error::InvalidArgument(format!("unknown gate type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

/// Which of the three encoders participate in the mixture. Serialized as a
/// subset string like "TSL".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderSet {
    pub tiny: bool,
    pub short: bool,
    pub long: bool,
}

impl Serialize for EncoderSet {
    fn serialize<Ser: serde::Serializer>(&self, s: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for EncoderSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl EncoderSet {
    pub const ALL: EncoderSet = EncoderSet {
        tiny: true,
        short: true,
        long: true,
    };

    pub fn is_empty(&self) -> bool {
        !(self.tiny || self.short || self.long)
    }

    pub fn as_mask(&self) -> [bool; 3] {
        [self.tiny, self.short, self.long]
    }
}

impl std::fmt::Display for EncoderSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.tiny {
            f.write_str("T")?;
        }
        if self.short {
            f.write_str("S")?;
        }
        if self.long {
            f.write_str("L")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for EncoderSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut set = EncoderSet {
            tiny: false,
            short: false,
            long: false,
        };
        for c in s.chars() {
            match c.to_ascii_uppercase() {
                'T' => set.tiny = true,
                'S' => set.short = true,
                'L' => set.long = true,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown encoder `{other}` in subset `{s}`"
                    )))
                }
            }
        }
        if set.is_empty() {
            return Err(Error::InvalidArgument(format!("empty encoder subset `{s}`")));
        }
        Ok(set)
    }
}

/// Full architecture description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct M3Config {
    pub variant: Variant,
    pub d_in: usize,
    pub d_enc: usize,
    pub d_out: usize,
    pub embed_dim: usize,
    pub aggregation: Aggregation,
    pub gate: GateType,
    pub enabled: EncoderSet,
    pub f_in_activation: Activation,
    pub f_out_activation: Activation,
    pub f_in_layers: usize,
    pub f_out_layers: usize,
    pub tcn_layers: usize,
    pub tcn_width: usize,
    /// Vocabulary size per input-side categorical context feature.
    pub ctx_in_vocab: Vec<usize>,
    /// Vocabulary size per output-side categorical context feature.
    pub ctx_out_vocab: Vec<usize>,
    pub ctx_embed_dim: usize,
}

impl Default for M3Config {
    fn default() -> Self {
        M3Config {
            variant: Variant::M3R,
            d_in: 32,
            d_enc: 32,
            d_out: 32,
            embed_dim: 64,
            aggregation: Aggregation::WeightedConcat,
            gate: GateType::BottomSwitch,
            enabled: EncoderSet::ALL,
            f_in_activation: Activation::Relu,
            f_out_activation: Activation::Relu,
            f_in_layers: 1,
            f_out_layers: 1,
            tcn_layers: 2,
            tcn_width: 5,
            ctx_in_vocab: Vec::new(),
            ctx_out_vocab: Vec::new(),
            ctx_embed_dim: 8,
        }
    }
}

impl M3Config {
    pub fn fused_input_width(&self) -> usize {
        self.embed_dim + self.ctx_in_vocab.len() * self.ctx_embed_dim
    }

    pub fn aggregated_width(&self) -> usize {
        match self.aggregation {
            Aggregation::WeightedConcat => 3 * self.d_enc,
            Aggregation::WeightedSum => self.d_enc,
        }
    }

    pub fn f_out_input_width(&self) -> usize {
        self.aggregated_width() + self.ctx_out_vocab.len() * self.ctx_embed_dim
    }

    pub fn gate_input_width(&self) -> usize {
        match self.gate {
            GateType::Fixed => 0,
            GateType::BottomSwitch => self.d_in,
            GateType::ContextualSwitch => {
                (self.ctx_in_vocab.len() + self.ctx_out_vocab.len()) * self.ctx_embed_dim
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled.is_empty() {
            return Err(Error::InvalidConfig("no encoders enabled".into()));
        }
        for (name, v) in [
            ("d_in", self.d_in),
            ("d_enc", self.d_enc),
            ("d_out", self.d_out),
            ("embed_dim", self.embed_dim),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.gate == GateType::ContextualSwitch
            && self.ctx_in_vocab.is_empty()
            && self.ctx_out_vocab.is_empty()
        {
            return Err(Error::InvalidConfig(
                "contextual-switch gate requires context features".into(),
            ));
        }
        if self.f_in_layers == 0 && self.fused_input_width() != self.d_in {
            return Err(Error::InvalidConfig(format!(
                "identity input fusion needs fused width {} == d_in {}",
                self.fused_input_width(),
                self.d_in
            )));
        }
        if self.f_out_layers == 0 && self.f_out_input_width() != self.d_out {
            return Err(Error::InvalidConfig(format!(
                "identity output fusion needs width {} == d_out {}",
                self.f_out_input_width(),
                self.d_out
            )));
        }
        if self.enabled.short && self.variant == Variant::M3C {
            if self.tcn_layers == 0 || self.tcn_width == 0 {
                return Err(Error::InvalidConfig(
                    "M3C needs tcn_layers >= 1 and tcn_width >= 1".into(),
                ));
            }
        }
        if !self.ctx_in_vocab.is_empty() || !self.ctx_out_vocab.is_empty() {
            if self.ctx_embed_dim == 0 {
                return Err(Error::InvalidConfig("ctx_embed_dim must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Gate values modulating the encoder outputs, in T, S, L order. Disabled
/// encoders report 0; the fixed gate reports exactly 1 for enabled ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateOutput {
    pub values: [f64; 3],
}

/// Inner-product scores over the whole vocabulary.
#[derive(Debug, Clone)]
pub struct ScoreVector<S> {
    pub scores: Vec<S>,
}

impl<S: Scalar> ScoreVector<S> {
    /// 1-based rank of `item` under descending score with ascending item
    /// index as tie-break.
    pub fn rank_of(&self, item: usize) -> usize {
        let target = self.scores[item];
        let mut rank = 1;
        for (v, &s) in self.scores.iter().enumerate() {
            if s > target || (s == target && v < item) {
                rank += 1;
            }
        }
        rank
    }

    /// Full ranking: descending score, ties broken by ascending index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| {
            self.scores[b]
                .partial_cmp(&self.scores[a])
                .expect("finite scores")
                .then(a.cmp(&b))
        });
        idx
    }

    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut r = self.ranking();
        r.truncate(k);
        r
    }
}

/// Result of a full forward pass at the final position.
#[derive(Debug, Clone)]
pub struct ForwardOutput<S> {
    pub scores: ScoreVector<S>,
    pub gate: GateOutput,
}

#[derive(Debug, Clone)]
pub struct EmbeddingTables {
    /// Input-side item embeddings (|V| × embed_dim).
    pub input: ParamId,
    /// Output-side item embeddings (|V| × d_out), learned separately.
    pub output: ParamId,
    pub ctx_in: Vec<ParamId>,
    pub ctx_out: Vec<ParamId>,
}

/// Stack of affine layers with a configurable activation after each.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub layers: Vec<(ParamId, ParamId)>,
    pub activation: Activation,
}

impl FeedForward {
    fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        n_layers: usize,
        activation: Activation,
    ) -> Self {
        let mut layers = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let d_from = if k == 0 { in_dim } else { out_dim };
            layers.push((
                store.add(format!("{name}.l{k}.w"), glorot_matrix(rng, d_from, out_dim)),
                store.add(format!("{name}.l{k}.b"), zero_bias(out_dim)),
            ));
        }
        FeedForward { layers, activation }
    }

    fn leaf<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>) -> Result<Vec<(Var, Var)>> {
        self.layers
            .iter()
            .map(|(w, b)| Ok((tape.param(store, *w)?, tape.param(store, *b)?)))
            .collect()
    }

    fn apply_leafed<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        leafed: &[(Var, Var)],
        mut x: Var,
    ) -> Result<Var> {
        for (w, b) in leafed {
            let xw = tape.matmul(x, *w)?;
            let pre = tape.add(xw, *b)?;
            x = match self.activation {
                Activation::Identity => pre,
                Activation::Relu => tape.relu(pre)?,
            };
        }
        Ok(x)
    }

    fn apply<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let leafed = self.leaf(tape, store)?;
        self.apply_leafed(tape, leafed.as_slice(), x)
    }
}

/// Sigmoid gate over a single affine layer, or fixed unit gates.
#[derive(Debug, Clone)]
pub struct GateNetwork {
    pub gate_type: GateType,
    pub affine: Option<(ParamId, ParamId)>,
}

impl GateNetwork {
    fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        gate_type: GateType,
        in_dim: usize,
    ) -> Self {
        let affine = (gate_type != GateType::Fixed).then(|| {
            (
                store.add("gate.w", glorot_matrix(rng, in_dim, 3)),
                store.add("gate.b", zero_bias(3)),
            )
        });
        GateNetwork { gate_type, affine }
    }
}

/// The assembled model: parameter handles plus the configuration that shaped
/// them. All numeric state lives in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct M3Model {
    pub config: M3Config,
    pub vocab_size: usize,
    pub tables: EmbeddingTables,
    pub f_in: FeedForward,
    pub f_out: FeedForward,
    pub tiny: Option<TinyRangeParams>,
    pub gru: Option<GruParams>,
    pub tcn: Option<TcnParams>,
    pub attention: Option<AttentionParams>,
    pub gate: GateNetwork,
}

/// Per-window forward state shared across target positions.
pub struct ForwardState {
    pub input: SeqInput,
    gru_states: Option<Vec<Var>>,
    gru_out_proj: Option<Var>,
    tcn_top: Option<Vec<Var>>,
    attn_proj: Option<Var>,
    f_out_leafed: Vec<(Var, Var)>,
    gate_affine: Option<(Var, Var)>,
    gate_mask: Var,
    onehots: [Var; 3],
    zero_enc: Var,
    fixed_gate: Option<Var>,
}

impl M3Model {
    /// Builds the model, registering every parameter in `store`. The
    /// registration order is fixed, so checkpoints are reproducible.
    pub fn init<S: Scalar>(
        config: M3Config,
        vocab_size: usize,
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(Error::InvalidConfig("empty vocabulary".into()));
        }

        let tables = EmbeddingTables {
            input: store.add("embed.q", glorot_matrix(rng, vocab_size, config.embed_dim)),
            output: store.add("embed.q_out", glorot_matrix(rng, vocab_size, config.d_out)),
            ctx_in: config
                .ctx_in_vocab
                .iter()
                .enumerate()
                .map(|(i, &n)| {
                    store.add(
                        format!("embed.ctx_in{i}"),
                        glorot_matrix(rng, n, config.ctx_embed_dim),
                    )
                })
                .collect(),
            ctx_out: config
                .ctx_out_vocab
                .iter()
                .enumerate()
                .map(|(i, &n)| {
                    store.add(
                        format!("embed.ctx_out{i}"),
                        glorot_matrix(rng, n, config.ctx_embed_dim),
                    )
                })
                .collect(),
        };

        let f_in = FeedForward::init(
            store,
            rng,
            "f_in",
            config.fused_input_width(),
            config.d_in,
            config.f_in_layers,
            config.f_in_activation,
        );

        let tiny = config
            .enabled
            .tiny
            .then(|| TinyRangeParams::init(store, rng, config.d_in, config.d_enc));
        let (gru, tcn) = if config.enabled.short {
            match config.variant {
                Variant::M3R => (
                    Some(GruParams::init(store, rng, config.d_in, config.d_enc)),
                    None,
                ),
                Variant::M3C => (
                    None,
                    Some(TcnParams::init(
                        store,
                        rng,
                        config.d_in,
                        config.d_enc,
                        config.tcn_layers,
                        config.tcn_width,
                    )?),
                ),
            }
        } else {
            (None, None)
        };
        let attention = config
            .enabled
            .long
            .then(|| AttentionParams::init(store, rng, config.d_in, config.d_enc));

        let gate = GateNetwork::init(store, rng, config.gate, config.gate_input_width());

        let f_out = FeedForward::init(
            store,
            rng,
            "f_out",
            config.f_out_input_width(),
            config.d_out,
            config.f_out_layers,
            config.f_out_activation,
        );

        Ok(M3Model {
            config,
            vocab_size,
            tables,
            f_in,
            f_out,
            tiny,
            gru,
            tcn,
            attention,
            gate,
        })
    }

    fn check_events(&self, events: &[Event]) -> Result<()> {
        if events.is_empty() {
            return Err(Error::EmptyInput("forward pass over zero events".into()));
        }
        for e in events {
            if e.item >= self.vocab_size {
                return Err(Error::RowOutOfBounds {
                    index: e.item,
                    rows: self.vocab_size,
                });
            }
            if e.ctx_in.len() != self.config.ctx_in_vocab.len() {
                return Err(Error::InvalidArgument(format!(
                    "event has {} input context features, model expects {}",
                    e.ctx_in.len(),
                    self.config.ctx_in_vocab.len()
                )));
            }
            if e.ctx_out.len() != self.config.ctx_out_vocab.len() {
                return Err(Error::InvalidArgument(format!(
                    "event has {} output context features, model expects {}",
                    e.ctx_out.len(),
                    self.config.ctx_out_vocab.len()
                )));
            }
        }
        Ok(())
    }

    /// Fuses item embeddings and input-side context embeddings per step and
    /// applies the input feed-forward stack: the τ×d_in processed inputs.
    pub fn fuse_input<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        events: &[Event],
    ) -> Result<Var> {
        self.check_events(events)?;
        let items: Vec<usize> = events.iter().map(|e| e.item).collect();
        let mut parts = vec![tape.param_rows(store, self.tables.input, &items)?];
        for (f, table) in self.tables.ctx_in.iter().enumerate() {
            let idx: Vec<usize> = events.iter().map(|e| e.ctx_in[f]).collect();
            parts.push(tape.param_rows(store, *table, &idx)?);
        }
        let fused = if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat(&parts)?
        };
        self.f_in.apply(tape, store, fused)
    }

    /// Runs input fusion and the sequence-level encoder passes shared by all
    /// target positions of a window.
    pub fn prepare<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        events: &[Event],
    ) -> Result<ForwardState> {
        let z = self.fuse_input(tape, store, events)?;
        let input = SeqInput::from_matrix(tape, z)?;

        let (gru_states, gru_out_proj) = match &self.gru {
            Some(gru) => (
                Some(gru.run(tape, store, &input)?),
                Some(tape.param(store, gru.out_proj)?),
            ),
            None => (None, None),
        };
        let tcn_top = match &self.tcn {
            Some(tcn) => Some(tcn.run(tape, store, &input)?),
            None => None,
        };
        let attn_proj = match &self.attention {
            Some(attn) => Some(attn.prepare(tape, store, &input)?),
            None => None,
        };
        let f_out_leafed = self.f_out.leaf(tape, store)?;
        let gate_affine = match &self.gate.affine {
            Some((w, b)) => Some((tape.param(store, *w)?, tape.param(store, *b)?)),
            None => None,
        };

        let mask = self.config.enabled.as_mask();
        let mask_row: Vec<S> = mask
            .iter()
            .map(|&m| if m { S::one() } else { S::zero() })
            .collect();
        let gate_mask = tape.constant(Tensor::row(mask_row.clone()))?;
        let fixed_gate = match self.gate.gate_type {
            GateType::Fixed => Some(tape.constant(Tensor::row(mask_row))?),
            _ => None,
        };
        let onehots = [
            tape.constant(Tensor::row(vec![S::one(), S::zero(), S::zero()]))?,
            tape.constant(Tensor::row(vec![S::zero(), S::one(), S::zero()]))?,
            tape.constant(Tensor::row(vec![S::zero(), S::zero(), S::one()]))?,
        ];
        let zero_enc = tape.constant(Tensor::zeros(vec![1, self.config.d_enc]))?;

        Ok(ForwardState {
            input,
            gru_states,
            gru_out_proj,
            tcn_top,
            attn_proj,
            f_out_leafed,
            gate_affine,
            gate_mask,
            onehots,
            zero_enc,
            fixed_gate,
        })
    }

    /// Gate values at position `t`: sigmoid of the affine gate layer over the
    /// gate input, with disabled encoders' entries zeroed afterwards.
    pub fn gate_at<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        state: &ForwardState,
        events: &[Event],
        t: usize,
    ) -> Result<Var> {
        if let Some(fixed) = state.fixed_gate {
            return Ok(fixed);
        }
        let g_in = match self.gate.gate_type {
            GateType::BottomSwitch => state.input.rows[t],
            GateType::ContextualSwitch => {
                let mut parts = Vec::new();
                for (f, table) in self.tables.ctx_in.iter().enumerate() {
                    parts.push(tape.param_rows(store, *table, &[events[t].ctx_in[f]])?);
                }
                for (f, table) in self.tables.ctx_out.iter().enumerate() {
                    parts.push(tape.param_rows(store, *table, &[events[t].ctx_out[f]])?);
                }
                if parts.len() == 1 {
                    parts[0]
                } else {
                    tape.concat(&parts)?
                }
            }
            GateType::Fixed => unreachable!("fixed gate handled above"),
        };
        let (w, b) = state.gate_affine.expect("learned gate has an affine layer");
        let pre = tape.matmul(g_in, w)?;
        let pre = tape.add(pre, b)?;
        let g = tape.sigmoid(pre)?;
        tape.mul(g, state.gate_mask)
    }

    /// User representation z_out and the gate values at position `t`
    /// (predicting the event at `t + 1`).
    pub fn output_at<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        state: &ForwardState,
        events: &[Event],
        t: usize,
    ) -> Result<(Var, GateOutput)> {
        let gates = self.gate_at(tape, store, state, events, t)?;
        let gate_out = GateOutput {
            values: {
                let v = tape.value(gates).data();
                [v[0].as_f64(), v[1].as_f64(), v[2].as_f64()]
            },
        };

        let mut weighted: [Option<Var>; 3] = [None, None, None];
        let encoders: [(usize, Option<Var>); 3] = [
            (
                0,
                match &self.tiny {
                    Some(tiny) => Some(tiny.output_at(tape, store, &state.input, t)?),
                    None => None,
                },
            ),
            (
                1,
                if let (Some(states), Some(proj)) = (&state.gru_states, state.gru_out_proj) {
                    Some(tape.matmul(states[t], proj)?)
                } else if let Some(top) = &state.tcn_top {
                    Some(top[t])
                } else {
                    None
                },
            ),
            (
                2,
                match (&self.attention, state.attn_proj) {
                    (Some(attn), Some(proj)) => Some(attn.output_from_projected(tape, proj, t)?),
                    _ => None,
                },
            ),
        ];
        for (slot, se) in encoders {
            if let Some(se) = se {
                let picked = tape.mul(gates, state.onehots[slot])?;
                let g_scalar = tape.reduce_sum(picked)?;
                weighted[slot] = Some(tape.mul(g_scalar, se)?);
            }
        }

        let aggregated = match self.config.aggregation {
            Aggregation::WeightedConcat => {
                let parts: Vec<Var> = weighted
                    .iter()
                    .map(|w| w.unwrap_or(state.zero_enc))
                    .collect();
                tape.concat(&parts)?
            }
            Aggregation::WeightedSum => {
                let mut acc: Option<Var> = None;
                for w in weighted.iter().flatten() {
                    acc = Some(match acc {
                        None => *w,
                        Some(a) => tape.add(a, *w)?,
                    });
                }
                acc.expect("at least one encoder enabled")
            }
        };

        let f_out_in = if self.tables.ctx_out.is_empty() {
            aggregated
        } else {
            let mut parts = vec![aggregated];
            for (f, table) in self.tables.ctx_out.iter().enumerate() {
                parts.push(tape.param_rows(store, *table, &[events[t].ctx_out[f]])?);
            }
            tape.concat(&parts)?
        };
        let z_out = self
            .f_out
            .apply_leafed(tape, &state.f_out_leafed, f_out_in)?;
        Ok((z_out, gate_out))
    }

    /// Logits restricted to a candidate set, on the tape (training path).
    pub fn candidate_logits<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        z_out: Var,
        candidates: &[usize],
    ) -> Result<Var> {
        let rows = tape.param_rows(store, self.tables.output, candidates)?;
        let rows_t = tape.transpose(rows)?;
        tape.matmul(z_out, rows_t)
    }

    /// Full forward pass at the final position with scores for every item,
    /// computed off-tape against the output table.
    pub fn score_all<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        events: &[Event],
    ) -> Result<ForwardOutput<S>> {
        let mut tape = Tape::new();
        let state = self.prepare(&mut tape, store, events)?;
        let (z_out, gate) = self.output_at(&mut tape, store, &state, events, events.len() - 1)?;
        let z = tape.value(z_out);
        let zd = z.row_slice(0);
        let q = store.value(self.tables.output);
        let scores = (0..self.vocab_size)
            .map(|v| {
                let row = q.row_slice(v);
                let mut s = S::zero();
                for (a, b) in zd.iter().zip(row) {
                    s = s + *a * *b;
                }
                s
            })
            .collect();
        Ok(ForwardOutput {
            scores: ScoreVector { scores },
            gate,
        })
    }

    /// Mean gate values per group, where the group key is a context feature
    /// value at the final position of each window.
    pub fn gate_report<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        windows: &[UserSequence],
        group_by: GateGroupKey,
    ) -> Result<Vec<GateReportRow>> {
        let mut groups: std::collections::BTreeMap<usize, (usize, [f64; 3])> =
            std::collections::BTreeMap::new();
        for w in windows {
            let out = self.score_all(store, &w.events)?;
            let last = w.events.last().expect("nonempty window");
            let key = match group_by {
                GateGroupKey::CtxIn(f) => *last.ctx_in.get(f).ok_or_else(|| {
                    Error::InvalidArgument(format!("window lacks input context feature {f}"))
                })?,
                GateGroupKey::CtxOut(f) => *last.ctx_out.get(f).ok_or_else(|| {
                    Error::InvalidArgument(format!("window lacks output context feature {f}"))
                })?,
            };
            let entry = groups.entry(key).or_insert((0, [0.0; 3]));
            entry.0 += 1;
            for (acc, v) in entry.1.iter_mut().zip(out.gate.values) {
                *acc += v;
            }
        }
        Ok(groups
            .into_iter()
            .map(|(group, (n, sums))| GateReportRow {
                group,
                n_examples: n,
                gate: GateOutput {
                    values: [sums[0] / n as f64, sums[1] / n as f64, sums[2] / n as f64],
                },
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum GateGroupKey {
    CtxIn(usize),
    CtxOut(usize),
}

#[derive(Debug, Clone)]
pub struct GateReportRow {
    pub group: usize,
    pub n_examples: usize,
    pub gate: GateOutput,
}
