use serde::{Deserialize, Serialize};

use super::{EmbeddedInput, ForwardOutput, HiddenStates, KvCache, LvlmError, ModelConfig, Segment, VisualTokens};
use crate::corpus::ToyImage;
use crate::rng::Rng;
use crate::tensor::{Graph, ParamStore, Scalar, Tensor, Var};

/// Callback invoked on each block's output rows before they feed the next
/// block: `(layer, absolute position of row 0, hidden [T×d_model])`.
///
/// Rows handed to the callback are detached from the gradient tape.
pub type Intervene<'a, S> = dyn FnMut(usize, usize, &mut Tensor<S>) + 'a;

/// Which optimizer group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Llm,
    Connector,
    Vision,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Llm, ParamGroup::Connector, ParamGroup::Vision];

    pub fn of(name: &str) -> Self {
        if name.starts_with("vision.") {
            ParamGroup::Vision
        } else if name.starts_with("connector.") {
            ParamGroup::Connector
        } else {
            ParamGroup::Llm
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Normal(f64),
    Ones,
    Zeros,
}

#[derive(Clone, Debug)]
struct BlockIds {
    ln1: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ln2: usize,
    w_up: usize,
    b_up: usize,
    w_down: usize,
    b_down: usize,
}

#[derive(Clone, Debug)]
struct ParamIds {
    vis_symbol: usize,
    vis_position: usize,
    conn_w1: usize,
    conn_b1: usize,
    conn_w2: usize,
    conn_b2: usize,
    tok_emb: usize,
    pos_emb: usize,
    blocks: Vec<BlockIds>,
    ln_f: usize,
    head: Option<usize>,
}

/// Parameter names, shapes and initialisers in storage order.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.d_model;
    let dv = cfg.d_vision;
    let ff = cfg.d_ff();
    let lin = |fan_in: usize| Init::Normal(1.0 / (fan_in as f64).sqrt());
    let resid = |fan_in: usize| Init::Normal(1.0 / ((fan_in * 2 * cfg.n_layers) as f64).sqrt());
    let mut out = vec![
        ("vision.symbol".to_string(), vec![cfg.n_symbols(), dv], Init::Normal(1.0)),
        ("vision.position".to_string(), vec![cfg.n_visual(), dv], Init::Normal(0.1)),
        ("connector.w1".to_string(), vec![dv, d], lin(dv)),
        ("connector.b1".to_string(), vec![d], Init::Zeros),
        ("connector.w2".to_string(), vec![d, d], lin(d)),
        ("connector.b2".to_string(), vec![d], Init::Zeros),
        ("llm.tok_emb".to_string(), vec![cfg.vocab_size, d], Init::Normal(0.1)),
        ("llm.pos_emb".to_string(), vec![cfg.max_positions, d], Init::Normal(0.02)),
    ];
    for l in 0..cfg.n_layers {
        let p = |n: &str| format!("llm.block{l}.{n}");
        out.extend([
            (p("ln1"), vec![d], Init::Ones),
            (p("wq"), vec![d, d], lin(d)),
            (p("wk"), vec![d, d], lin(d)),
            (p("wv"), vec![d, d], lin(d)),
            (p("wo"), vec![d, d], resid(d)),
            (p("ln2"), vec![d], Init::Ones),
            (p("w_up"), vec![d, ff], lin(d)),
            (p("b_up"), vec![ff], Init::Zeros),
            (p("w_down"), vec![ff, d], resid(ff)),
            (p("b_down"), vec![d], Init::Zeros),
        ]);
    }
    out.push(("llm.ln_f".to_string(), vec![d], Init::Ones));
    if !cfg.tied_head {
        out.push(("llm.head".to_string(), vec![d, cfg.vocab_size], Init::Normal(0.02)));
    }
    out
}

/// Miniature vision-language model: symbol-embedding vision encoder, 2-layer
/// MLP connector and a pre-norm causal decoder.
#[derive(Clone, Debug)]
pub struct Lvlm<S: Scalar = f32> {
    cfg: ModelConfig,
    params: ParamStore<S>,
    ids: ParamIds,
    checked: bool,
}

impl<S: Scalar> Lvlm<S> {
    /// Randomly initialised model; weights depend only on `cfg.seed`.
    pub fn new(cfg: ModelConfig) -> Result<Self, LvlmError> {
        cfg.validate()?;
        let mut rng = Rng::derive(cfg.seed, 0x1417);
        let mut params = ParamStore::new();
        for (name, shape, init) in layout(&cfg) {
            let n: usize = shape.iter().product();
            let data: Vec<S> = match init {
                Init::Normal(std) => (0..n).map(|_| S::from_f64(rng.normal() * std)).collect(),
                Init::Ones => vec![S::one(); n],
                Init::Zeros => vec![S::zero(); n],
            };
            params.push(name, Tensor::new(shape, data)?);
        }
        Self::from_params(cfg, params)
    }

    /// Wraps existing parameters after checking names and shapes against the layout.
    pub fn from_params(cfg: ModelConfig, params: ParamStore<S>) -> Result<Self, LvlmError> {
        cfg.validate()?;
        let expected = layout(&cfg);
        if expected.len() != params.len() {
            return Err(LvlmError::Config(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape, _), p) in expected.iter().zip(params.iter()) {
            if *name != p.name || *shape != p.shape {
                return Err(LvlmError::Config(format!(
                    "parameter {} has shape {:?}, expected {} {:?}",
                    p.name, p.shape, name, shape
                )));
            }
        }
        let find = |n: &str| params.find(n).expect("layout checked");
        let blocks = (0..cfg.n_layers)
            .map(|l| {
                let f = |n: &str| find(&format!("llm.block{l}.{n}"));
                BlockIds {
                    ln1: f("ln1"),
                    wq: f("wq"),
                    wk: f("wk"),
                    wv: f("wv"),
                    wo: f("wo"),
                    ln2: f("ln2"),
                    w_up: f("w_up"),
                    b_up: f("b_up"),
                    w_down: f("w_down"),
                    b_down: f("b_down"),
                }
            })
            .collect();
        let ids = ParamIds {
            vis_symbol: find("vision.symbol"),
            vis_position: find("vision.position"),
            conn_w1: find("connector.w1"),
            conn_b1: find("connector.b1"),
            conn_w2: find("connector.w2"),
            conn_b2: find("connector.b2"),
            tok_emb: find("llm.tok_emb"),
            pos_emb: find("llm.pos_emb"),
            blocks,
            ln_f: find("llm.ln_f"),
            head: if cfg.tied_head { None } else { Some(find("llm.head")) },
        };
        Ok(Self { cfg, params, ids, checked: false })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    /// Enables NaN/Inf rejection at every recorded operation.
    pub fn set_checked(&mut self, checked: bool) {
        self.checked = checked;
    }

    pub fn graph(&self) -> Graph<S> {
        Graph::new(self.checked)
    }

    /// Same weights in another precision.
    pub fn cast<T: Scalar>(&self) -> Lvlm<T> {
        Lvlm { cfg: self.cfg.clone(), params: self.params.cast(), ids: self.ids.clone(), checked: self.checked }
    }

    // ---- graph-level building blocks -------------------------------------------------

    /// Vision encoder: per-symbol embedding plus per-patch position embedding.
    pub fn encode_image_g(&self, g: &mut Graph<S>, img: &ToyImage) -> Result<Var, LvlmError> {
        if img.grid() != self.cfg.patch_grid {
            return Err(LvlmError::Config(format!(
                "image is {0}×{0} patches, model expects {1}×{1}",
                img.grid(),
                self.cfg.patch_grid
            )));
        }
        let sym = self.params.bind(g, self.ids.vis_symbol)?;
        let pos = self.params.bind(g, self.ids.vis_position)?;
        let codes: Vec<usize> = img.cells().iter().map(|s| s.code() as usize).collect();
        let patches: Vec<usize> = (0..self.cfg.n_visual()).collect();
        let a = g.embedding(sym, &codes)?;
        let b = g.embedding(pos, &patches)?;
        Ok(g.add(a, b)?)
    }

    /// Connector: linear → gelu → linear into the decoder width.
    pub fn connect_g(&self, g: &mut Graph<S>, features: Var) -> Result<Var, LvlmError> {
        let w1 = self.params.bind(g, self.ids.conn_w1)?;
        let b1 = self.params.bind(g, self.ids.conn_b1)?;
        let w2 = self.params.bind(g, self.ids.conn_w2)?;
        let b2 = self.params.bind(g, self.ids.conn_b2)?;
        let h = g.matmul(features, w1)?;
        let h = g.add_bias(h, b1)?;
        let h = g.gelu(h)?;
        let h = g.matmul(h, w2)?;
        Ok(g.add_bias(h, b2)?)
    }

    pub fn embed_text_g(&self, g: &mut Graph<S>, ids: &[usize]) -> Result<Var, LvlmError> {
        let table = self.params.bind(g, self.ids.tok_emb)?;
        Ok(g.embedding(table, ids)?)
    }

    /// Image tokens (if any) followed by text tokens, as one `[T×d]` node.
    pub fn embed_input_g(&self, g: &mut Graph<S>, image: Option<&ToyImage>, text: &[usize]) -> Result<Var, LvlmError> {
        if text.is_empty() {
            return Err(LvlmError::EmptyText);
        }
        let t = self.embed_text_g(g, text)?;
        match image {
            Some(img) => {
                let f = self.encode_image_g(g, img)?;
                let v = self.connect_g(g, f)?;
                Ok(g.concat_rows(&[v, t])?)
            }
            None => Ok(t),
        }
    }

    /// Decoder over input embeddings `x` at absolute positions `offset..`.
    ///
    /// Returns the logits node and, when `capture` is set, the post-block
    /// hidden states of every layer (before the final norm).
    pub fn decode_g(
        &self,
        g: &mut Graph<S>,
        x: Var,
        offset: usize,
        mut cache: Option<&mut KvCache<S>>,
        capture: bool,
        mut intervene: Option<&mut Intervene<'_, S>>,
    ) -> Result<(Var, Option<Vec<Tensor<S>>>), LvlmError> {
        let t = g.shape(x)[0];
        if offset + t > self.cfg.max_positions {
            return Err(LvlmError::PositionOverflow { needed: offset + t, max: self.cfg.max_positions });
        }
        if let Some(c) = cache.as_deref() {
            if c.len() != offset {
                return Err(LvlmError::Config(format!("cache holds {} positions, input starts at {offset}", c.len())));
            }
        }
        let pos_table = self.params.bind(g, self.ids.pos_emb)?;
        let positions: Vec<usize> = (offset..offset + t).collect();
        let pos = g.embedding(pos_table, &positions)?;
        let mut h = g.add(x, pos)?;
        let mut captured = capture.then(Vec::new);
        let d = self.cfg.d_model;
        for (l, b) in self.ids.blocks.iter().enumerate() {
            let p = |id: usize, g: &mut Graph<S>| self.params.bind(g, id);
            let ln1 = p(b.ln1, g)?;
            let n = g.rms_norm(h, ln1)?;
            let (wq, wk, wv) = (p(b.wq, g)?, p(b.wk, g)?, p(b.wv, g)?);
            let q = g.matmul(n, wq)?;
            let k = g.matmul(n, wk)?;
            let v = g.matmul(n, wv)?;
            let (k, v) = match cache.as_deref_mut() {
                Some(c) => {
                    c.append(l, g.value(k), g.value(v));
                    let (ka, va) = c.layer(l);
                    let shape = vec![offset + t, d];
                    (g.leaf_shared(ka, shape.clone())?, g.leaf_shared(va, shape)?)
                }
                None => (k, v),
            };
            let a = g.causal_attention(q, k, v, self.cfg.n_heads, offset)?;
            let wo = p(b.wo, g)?;
            let a = g.matmul(a, wo)?;
            h = g.add(h, a)?;
            let ln2 = p(b.ln2, g)?;
            let n = g.rms_norm(h, ln2)?;
            let (w_up, b_up, w_down, b_down) = (p(b.w_up, g)?, p(b.b_up, g)?, p(b.w_down, g)?, p(b.b_down, g)?);
            let m = g.matmul(n, w_up)?;
            let m = g.add_bias(m, b_up)?;
            let m = g.gelu(m)?;
            let m = g.matmul(m, w_down)?;
            let m = g.add_bias(m, b_down)?;
            h = g.add(h, m)?;
            if let Some(f) = intervene.as_deref_mut() {
                let mut rows = g.tensor(h);
                f(l, offset, &mut rows);
                h = g.leaf(rows)?;
            }
            if let Some(c) = captured.as_mut() {
                c.push(g.tensor(h));
            }
        }
        if let Some(c) = cache {
            c.commit(offset + t);
        }
        let ln_f = self.params.bind(g, self.ids.ln_f)?;
        let n = g.rms_norm(h, ln_f)?;
        let head = match self.ids.head {
            Some(id) => self.params.bind(g, id)?,
            None => {
                let e = self.params.bind(g, self.ids.tok_emb)?;
                g.transpose(e)?
            }
        };
        let logits = g.matmul(n, head)?;
        Ok((logits, captured))
    }

    // ---- eager API --------------------------------------------------------------------

    /// `[P²×d_vision]` patch features.
    pub fn encode_image(&self, img: &ToyImage) -> Result<Tensor<S>, LvlmError> {
        let mut g = self.graph();
        let v = self.encode_image_g(&mut g, img)?;
        Ok(g.tensor(v))
    }

    pub fn connect(&self, features: &Tensor<S>) -> Result<VisualTokens<S>, LvlmError> {
        if features.shape() != [self.cfg.n_visual(), self.cfg.d_vision] {
            return Err(LvlmError::Tensor(crate::tensor::TensorError::ShapeMismatch {
                op: "connect",
                expected: vec![self.cfg.n_visual(), self.cfg.d_vision],
                got: features.shape().to_vec(),
            }));
        }
        let mut g = self.graph();
        let f = g.leaf(features.clone())?;
        let v = self.connect_g(&mut g, f)?;
        Ok(VisualTokens { embeddings: g.tensor(v) })
    }

    /// Vision encoder followed by the connector.
    pub fn visual_tokens(&self, img: &ToyImage) -> Result<VisualTokens<S>, LvlmError> {
        self.connect(&self.encode_image(img)?)
    }

    /// Prepends visual tokens (if any) to the embedded text. Positions start at 0.
    pub fn assemble_input(&self, visual: Option<&VisualTokens<S>>, text: &[usize]) -> Result<EmbeddedInput<S>, LvlmError> {
        if text.is_empty() {
            return Err(LvlmError::EmptyText);
        }
        let mut g = self.graph();
        let t = self.embed_text_g(&mut g, text)?;
        let n_vis = visual.map_or(0, |v| v.embeddings.rows());
        let x = match visual {
            Some(v) => {
                let vv = g.leaf(v.embeddings.clone())?;
                g.concat_rows(&[vv, t])?
            }
            None => t,
        };
        let mut segments = vec![Segment::Image; n_vis];
        segments.extend(std::iter::repeat_n(Segment::Text, text.len()));
        Ok(EmbeddedInput { embeddings: g.tensor(x), position_ids: (0..segments.len()).collect(), segments })
    }

    /// Single generated token placed at `position`.
    pub fn generated_input(&self, token: usize, position: usize) -> Result<EmbeddedInput<S>, LvlmError> {
        let mut g = self.graph();
        let t = self.embed_text_g(&mut g, &[token])?;
        Ok(EmbeddedInput { embeddings: g.tensor(t), segments: vec![Segment::Generated], position_ids: vec![position] })
    }

    pub fn forward(
        &self,
        input: &EmbeddedInput<S>,
        mut cache: Option<&mut KvCache<S>>,
        capture: bool,
        intervene: Option<&mut Intervene<'_, S>>,
    ) -> Result<ForwardOutput<S>, LvlmError> {
        input.validate()?;
        let offset = input.position_ids.first().copied().unwrap_or(0);
        let mut g = self.graph();
        let x = g.leaf(input.embeddings.clone())?;
        let (logits, hidden) = match self.decode_g(&mut g, x, offset, cache.as_deref_mut(), capture, intervene) {
            Ok(r) => r,
            Err(e) => {
                if let Some(c) = cache {
                    c.rollback();
                }
                return Err(e);
            }
        };
        let hidden = hidden.map(HiddenStates::from_layers).transpose()?;
        Ok(ForwardOutput { logits: g.tensor(logits), hidden })
    }

    /// A fresh, empty cache sized for this model.
    pub fn new_cache(&self) -> KvCache<S> {
        KvCache::new(self.cfg.n_layers, self.cfg.d_model)
    }
}
