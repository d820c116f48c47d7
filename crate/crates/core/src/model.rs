//! Model assembly: wires embedders, attention, comparison and relation heads
//! into the full network for each mode/variant, and owns the parameters.

use crate::attention::{add_attention, align, AttnIdx, AttnNodes};
use crate::autodiff::{Graph, NodeId};
use crate::comparison::{add_comparison, compare, CmpIdx, CmpNodes, Measure};
use crate::embedding::{
    add_semantic_embedder, add_visual_embedder, embed_semantic, embed_video, embed_video_single,
    SemanticEmbedderIdx, SemanticEmbedderNodes, VisualEmbedderIdx, VisualEmbedderNodes,
};
use crate::error::{Result, TarnError};
use crate::gradcheck::{check_gradients, GradcheckReport};
use crate::matrix::Matrix;
use crate::params::{ParamSet, PId};
use crate::relation::{
    add_fc_head, add_gru_head, fsl_relation_score, zsl_relation_score, FcHeadIdx, FcHeadNodes,
    GruHeadIdx, GruHeadNodes,
};
use crate::rng::{stream_rng, Stream};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Few-shot (video vs. video) or zero-shot (video vs. class vector).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Fsl,
    Zsl,
}

/// Architecture variant. `Tarn` and `TarnSingle` are few-shot; the three
/// ablation variants are zero-shot, `AttnMulti` being the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Tarn,
    TarnSingle,
    NoAttnSingle,
    AttnSingle,
    AttnMulti,
}

impl Variant {
    pub fn mode(self) -> Mode {
        match self {
            Variant::Tarn | Variant::TarnSingle => Mode::Fsl,
            _ => Mode::Zsl,
        }
    }

    fn bidirectional(self) -> bool {
        matches!(self, Variant::Tarn | Variant::AttnSingle | Variant::AttnMulti)
    }

    fn uses_attention(self) -> bool {
        matches!(self, Variant::Tarn | Variant::AttnSingle | Variant::AttnMulti)
    }

    /// Only the full FSL model keeps the GRU relation head; every
    /// single-comparison or ZSL variant scores with the FC head.
    fn uses_gru_head(self) -> bool {
        matches!(self, Variant::Tarn)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Tarn => "tarn",
            Variant::TarnSingle => "tarn-single",
            Variant::NoAttnSingle => "no-attn-single",
            Variant::AttnSingle => "attn-single",
            Variant::AttnMulti => "attn-multi",
        };
        f.write_str(s)
    }
}

fn default_d_in() -> usize {
    4096
}
fn default_hidden() -> usize {
    256
}
fn default_nn_hidden() -> usize {
    512
}
fn default_relation_hidden() -> usize {
    256
}
fn default_semantic_hidden() -> usize {
    4096
}

/// Dimensions and architecture switches of one model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: Mode,
    pub variant: Variant,
    pub measure: Measure,
    #[serde(default = "default_d_in")]
    pub d_in: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_nn_hidden")]
    pub nn_hidden: usize,
    #[serde(default = "default_relation_hidden")]
    pub relation_hidden: usize,
    #[serde(default)]
    pub d_sem: Option<usize>,
    #[serde(default = "default_semantic_hidden")]
    pub semantic_hidden: usize,
    /// Semantic embedding width; must equal the visual width. Defaults to it.
    #[serde(default)]
    pub semantic_out: Option<usize>,
}

impl ModelConfig {
    /// Width of one segment embedding under this variant.
    pub fn visual_width(&self) -> usize {
        if self.variant.bidirectional() {
            2 * self.hidden
        } else {
            self.hidden
        }
    }

    /// Width of one comparison row.
    pub fn comparison_width(&self) -> usize {
        self.measure.output_width(self.visual_width(), self.nn_hidden)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant.mode() != self.mode {
            return Err(TarnError::Config(format!(
                "variant {} is only valid in {:?} mode",
                self.variant,
                self.variant.mode()
            )));
        }
        if self.d_in < 1 || self.hidden < 1 || self.nn_hidden < 1 || self.relation_hidden < 1 {
            return Err(TarnError::Config("model dimensions must be >= 1".into()));
        }
        if self.mode == Mode::Zsl {
            let d_sem = self
                .d_sem
                .ok_or_else(|| TarnError::Config("zsl mode requires d_sem".into()))?;
            if d_sem < 1 || self.semantic_hidden < 1 {
                return Err(TarnError::Config("semantic dimensions must be >= 1".into()));
            }
            if let Some(out) = self.semantic_out {
                if out != self.visual_width() {
                    return Err(TarnError::Config(format!(
                        "semantic embedding width {out} must equal visual width {}",
                        self.visual_width()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A configured network plus its parameters.
#[derive(Debug, Clone)]
pub struct TarnModel {
    pub cfg: ModelConfig,
    pub params: ParamSet,
    embed: VisualEmbedderIdx,
    semantic: Option<SemanticEmbedderIdx>,
    attn: Option<AttnIdx>,
    cmp: CmpIdx,
    gru_head: Option<GruHeadIdx>,
    fc_head: Option<FcHeadIdx>,
}

/// Graph bindings for one forward pass.
pub struct BoundModel {
    embed: VisualEmbedderNodes,
    semantic: Option<SemanticEmbedderNodes>,
    attn: Option<AttnNodes>,
    cmp: CmpNodes,
    gru_head: Option<GruHeadNodes>,
    fc_head: Option<FcHeadNodes>,
}

impl TarnModel {
    /// Builds a model with Glorot-initialized parameters drawn from the
    /// init stream of `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(seed, Stream::Init, 0);
        Self::build(cfg, &mut rng)
    }

    fn build(cfg: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut params = ParamSet::new();
        let embed = add_visual_embedder(
            &mut params,
            "embed",
            cfg.d_in,
            cfg.hidden,
            cfg.variant.bidirectional(),
            rng,
        );
        let d = cfg.visual_width();
        let semantic = if cfg.mode == Mode::Zsl {
            Some(add_semantic_embedder(
                &mut params,
                "semantic",
                cfg.d_sem.expect("validated"),
                cfg.semantic_hidden,
                d,
                rng,
            ))
        } else {
            None
        };
        let attn = cfg
            .variant
            .uses_attention()
            .then(|| add_attention(&mut params, "attn", d, rng));
        let cmp = add_comparison(&mut params, "cmp", cfg.measure, d, cfg.nn_hidden, rng);
        let w = cfg.comparison_width();
        let (gru_head, fc_head) = if cfg.variant.uses_gru_head() {
            (
                Some(add_gru_head(&mut params, "head", w, cfg.relation_hidden, rng)),
                None,
            )
        } else {
            (
                None,
                Some(add_fc_head(&mut params, "head", w, cfg.relation_hidden, rng)),
            )
        };
        Ok(TarnModel {
            cfg,
            params,
            embed,
            semantic,
            attn,
            cmp,
            gru_head,
            fc_head,
        })
    }

    /// Replaces the parameter values with checkpoint entries; every tensor
    /// must be present with a matching shape.
    pub fn load_params(&mut self, entries: Vec<(String, Matrix)>) -> Result<()> {
        let mut by_name: std::collections::HashMap<String, Matrix> = entries.into_iter().collect();
        for i in 0..self.params.len() {
            let name = self.params.name(PId(i)).to_string();
            let expected = self.params.mat(PId(i)).shape();
            let m = by_name.remove(&name).ok_or_else(|| {
                TarnError::Data(format!("checkpoint is missing tensor {name}"))
            })?;
            if m.shape() != expected {
                return Err(TarnError::Data(format!(
                    "tensor {name} has shape {}x{}, model expects {}x{}",
                    m.shape().0,
                    m.shape().1,
                    expected.0,
                    expected.1
                )));
            }
            *self.params.mat_mut(PId(i)) = m;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(TarnError::Data(format!(
                "checkpoint has unknown tensor {extra}"
            )));
        }
        Ok(())
    }

    /// Binds all parameters into a fresh graph.
    pub fn bind(&self, g: &mut Graph) -> (Vec<NodeId>, BoundModel) {
        let bound = self.params.bind_all(g);
        let bm = BoundModel {
            embed: self.embed.nodes(&bound),
            semantic: self.semantic.as_ref().map(|s| s.nodes(&bound)),
            attn: self.attn.as_ref().map(|a| a.nodes(&bound)),
            cmp: self.cmp.nodes(&bound),
            gru_head: self.gru_head.as_ref().map(|h| h.nodes(&bound)),
            fc_head: self.fc_head.as_ref().map(|h| h.nodes(&bound)),
        };
        (bound, bm)
    }

    fn score_pair(&self, g: &mut Graph, bm: &BoundModel, cmp_rows: NodeId) -> Result<NodeId> {
        match (&bm.gru_head, &bm.fc_head) {
            (Some(h), _) => fsl_relation_score(g, cmp_rows, h),
            (_, Some(h)) => zsl_relation_score(g, cmp_rows, h),
            _ => unreachable!("model always has a head"),
        }
    }

    /// Embeds every support video once; FSL only.
    pub fn embed_supports(
        &self,
        g: &mut Graph,
        bm: &BoundModel,
        support: &[Vec<&Matrix>],
    ) -> Result<Vec<Vec<NodeId>>> {
        support
            .iter()
            .map(|shots| {
                shots
                    .iter()
                    .map(|feats| match self.cfg.variant {
                        Variant::Tarn => embed_video(g, feats, &bm.embed),
                        Variant::TarnSingle => embed_video_single(g, feats, &bm.embed),
                        _ => Err(TarnError::Contract(
                            "embed_supports is a few-shot operation".into(),
                        )),
                    })
                    .collect()
            })
            .collect()
    }

    /// Scores one query against embedded supports; returns raw `C x K`.
    pub fn fsl_query_scores(
        &self,
        g: &mut Graph,
        bm: &BoundModel,
        support_embs: &[Vec<NodeId>],
        query: &Matrix,
    ) -> Result<NodeId> {
        let mut class_rows = Vec::with_capacity(support_embs.len());
        match self.cfg.variant {
            Variant::Tarn => {
                let attn = bm.attn.as_ref().expect("tarn has attention");
                let q_emb = embed_video(g, query, &bm.embed)?;
                for shots in support_embs {
                    let mut scores = Vec::with_capacity(shots.len());
                    for &s_emb in shots {
                        let (_, aligned) = align(g, s_emb, q_emb, attn)?;
                        let cmp_rows = compare(g, q_emb, aligned, &bm.cmp)?;
                        scores.push(self.score_pair(g, bm, cmp_rows)?);
                    }
                    class_rows.push(concat_scalar_row(g, &scores)?);
                }
            }
            Variant::TarnSingle => {
                let q_vec = embed_video_single(g, query, &bm.embed)?;
                for shots in support_embs {
                    let mut scores = Vec::with_capacity(shots.len());
                    for &s_vec in shots {
                        let cmp_rows = compare(g, q_vec, s_vec, &bm.cmp)?;
                        scores.push(self.score_pair(g, bm, cmp_rows)?);
                    }
                    class_rows.push(concat_scalar_row(g, &scores)?);
                }
            }
            _ => {
                return Err(TarnError::Contract(
                    "fsl_query_scores called on a zero-shot variant".into(),
                ))
            }
        }
        g.stack_rows(&class_rows)
    }

    /// Embeds each class semantic vector once; ZSL only.
    pub fn embed_semantics(
        &self,
        g: &mut Graph,
        bm: &BoundModel,
        sems: &[&Matrix],
    ) -> Result<Vec<NodeId>> {
        let emb = bm
            .semantic
            .as_ref()
            .ok_or_else(|| TarnError::Contract("model has no semantic embedder".into()))?;
        sems.iter().map(|v| embed_semantic(g, v, emb)).collect()
    }

    /// Scores one query video against embedded class vectors; returns raw
    /// `C x 1`.
    pub fn zsl_query_scores(
        &self,
        g: &mut Graph,
        bm: &BoundModel,
        sem_nodes: &[NodeId],
        query: &Matrix,
    ) -> Result<NodeId> {
        let mut scores = Vec::with_capacity(sem_nodes.len());
        match self.cfg.variant {
            Variant::NoAttnSingle => {
                let v = embed_video_single(g, query, &bm.embed)?;
                for &e in sem_nodes {
                    let cmp_rows = compare(g, v, e, &bm.cmp)?;
                    scores.push(self.score_pair(g, bm, cmp_rows)?);
                }
            }
            Variant::AttnSingle => {
                // attention pools the query's segments into one row per class
                let attn = bm.attn.as_ref().expect("attn-single has attention");
                let v = embed_video(g, query, &bm.embed)?;
                for &e in sem_nodes {
                    let (_, pooled) = align(g, v, e, attn)?;
                    let cmp_rows = compare(g, e, pooled, &bm.cmp)?;
                    scores.push(self.score_pair(g, bm, cmp_rows)?);
                }
            }
            Variant::AttnMulti => {
                // attention broadcasts each class vector across the query's
                // segments for per-segment comparisons
                let attn = bm.attn.as_ref().expect("attn-multi has attention");
                let v = embed_video(g, query, &bm.embed)?;
                for &e in sem_nodes {
                    let (_, spread) = align(g, e, v, attn)?;
                    let cmp_rows = compare(g, v, spread, &bm.cmp)?;
                    scores.push(self.score_pair(g, bm, cmp_rows)?);
                }
            }
            _ => {
                return Err(TarnError::Contract(
                    "zsl_query_scores called on a few-shot variant".into(),
                ))
            }
        }
        g.stack_rows(&scores)
    }
}

fn concat_scalar_row(g: &mut Graph, scores: &[NodeId]) -> Result<NodeId> {
    let mut row = scores[0];
    for &s in &scores[1..] {
        row = g.concat_cols(row, s)?;
    }
    Ok(row)
}

// ---- model-level gradient checking ---------------------------------------------

/// A tiny fixed episode: random features for every support/semantic slot and
/// the query, plus the true class position.
#[derive(Debug, Clone)]
pub struct GradcheckFixture {
    pub support: Vec<Vec<Matrix>>,
    pub semantics: Vec<Matrix>,
    pub query: Matrix,
    pub true_class: usize,
}

/// Random episode fixture at the model's dimensions: `c`-way, `k`-shot,
/// `n` support segments, `m` query segments.
pub fn make_fixture(
    cfg: &ModelConfig,
    c: usize,
    k: usize,
    n: usize,
    m: usize,
    seed: u64,
) -> GradcheckFixture {
    let mut rng = stream_rng(seed, Stream::Test, 0xF1);
    let mut mat = |r: usize, cc: usize| {
        Matrix::from_vec(
            r,
            cc,
            (0..r * cc).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    };
    let (support, semantics) = match cfg.mode {
        Mode::Fsl => (
            (0..c)
                .map(|_| (0..k).map(|_| mat(n, cfg.d_in)).collect())
                .collect(),
            Vec::new(),
        ),
        Mode::Zsl => (
            Vec::new(),
            (0..c).map(|_| mat(1, cfg.d_sem.expect("zsl"))).collect(),
        ),
    };
    let query = mat(m, cfg.d_in);
    let true_class = 0;
    GradcheckFixture {
        support,
        semantics,
        query,
        true_class,
    }
}

/// Builds the full episode loss for a fixture and returns the graph, the
/// bound parameter leaves and the loss node.
pub fn fixture_loss(model: &TarnModel, fx: &GradcheckFixture) -> Result<(Graph, Vec<NodeId>, NodeId)> {
    let mut g = Graph::new();
    let (bound, bm) = model.bind(&mut g);
    let raw = match model.cfg.mode {
        Mode::Fsl => {
            let refs: Vec<Vec<&Matrix>> = fx
                .support
                .iter()
                .map(|shots| shots.iter().collect())
                .collect();
            let embs = model.embed_supports(&mut g, &bm, &refs)?;
            model.fsl_query_scores(&mut g, &bm, &embs, &fx.query)?
        }
        Mode::Zsl => {
            let refs: Vec<&Matrix> = fx.semantics.iter().collect();
            let sem_nodes = model.embed_semantics(&mut g, &bm, &refs)?;
            model.zsl_query_scores(&mut g, &bm, &sem_nodes, &fx.query)?
        }
    };
    let loss = crate::episodic::episode_loss_node(&mut g, raw, fx.true_class)?;
    Ok((g, bound, loss))
}

/// Central-difference check of every parameter tensor through the full
/// episode loss.
pub fn gradcheck_model(
    model: &TarnModel,
    fx: &GradcheckFixture,
    h: f64,
    threshold: f64,
) -> Result<GradcheckReport> {
    let (mut g, bound, loss) = fixture_loss(model, fx)?;
    g.backward(loss)?;
    let analytic: Vec<Matrix> = bound.iter().map(|&id| g.grad_or_zeros(id)).collect();

    let loss_of = |mats: &[Matrix]| -> Result<f64> {
        let mut probe = model.clone();
        for (i, m) in mats.iter().enumerate() {
            *probe.params.mat_mut(PId(i)) = m.clone();
        }
        let (g, _, loss) = fixture_loss(&probe, fx)?;
        Ok(g.value(loss).item())
    };
    check_gradients(
        model.params.names(),
        model.params.mats(),
        &analytic,
        loss_of,
        h,
        threshold,
    )
}
