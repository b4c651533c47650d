use std::path::Path;

use super::config::PipelineConfig;
use crate::error::{ensure_len, Error, Result};
use crate::rng::SeedStream;
use crate::roi::GateParams;
use crate::tinynet::io::TensorArchive;
use crate::tinynet::{Activation, AttentionParams, AttentionSpec, DenseLayer, DenseParams, MlpSpec};

/// Weights of one refinement stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageParams {
    pub gate: GateParams,
    /// Gated RoI feature `C →` attention width.
    pub embed: DenseLayer,
    pub attention: AttentionParams,
    pub head: DenseParams,
    /// Attention output back to a `C`-wide proposal feature.
    pub back_project: DenseLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    /// Seed feature → `[objectness (2), offset (3), feature offset (D)]`.
    pub nsm_head: DenseParams,
    /// Seed/vote feature width `D → C`.
    pub point_reduce: DenseLayer,
    /// Max-pooled group feature `C + 3 → C`.
    pub group_mlp: DenseParams,
    pub initial_head: DenseParams,
    /// One bundle when parameters are shared, otherwise one per refinement.
    pub stages: Vec<StageParams>,
}

pub fn nsm_spec(cfg: &PipelineConfig) -> MlpSpec {
    let d = cfg.feature_dim;
    MlpSpec::new(vec![d, 256, 256, d + 5])
}

pub fn group_spec(cfg: &PipelineConfig) -> MlpSpec {
    MlpSpec::new(vec![cfg.channels + 3, cfg.channels, cfg.channels])
}

pub fn initial_head_spec(cfg: &PipelineConfig) -> MlpSpec {
    MlpSpec::new(vec![cfg.channels, cfg.head_hidden, cfg.head_width()])
}

pub fn stage_head_spec(cfg: &PipelineConfig) -> MlpSpec {
    MlpSpec::new(vec![cfg.embed_dim, cfg.head_hidden, cfg.head_width()])
}

pub fn attention_spec(cfg: &PipelineConfig) -> AttentionSpec {
    AttentionSpec::new(cfg.embed_dim, cfg.heads, cfg.ffn_dim)
}

impl StageParams {
    pub fn random(cfg: &PipelineConfig, seed: SeedStream) -> Result<Self> {
        let (c, e) = (cfg.channels, cfg.embed_dim);
        Ok(Self {
            gate: GateParams::init(c, &cfg.resolutions, seed.split("gate"))?,
            embed: DenseLayer::init(c, e, Activation::Linear, seed.split("embed")),
            attention: AttentionParams::init_stream(attention_spec(cfg), seed.split("attention"))?,
            head: DenseParams::init_stream(&stage_head_spec(cfg), seed.split("head"))?,
            back_project: DenseLayer::init(e, c, Activation::Linear, seed.split("back_project")),
        })
    }

    pub fn validate(&self, cfg: &PipelineConfig) -> Result<()> {
        self.gate.validate()?;
        ensure_len("stage gate channels", cfg.channels, self.gate.channels)?;
        if self.gate.resolutions != cfg.resolutions {
            return Err(Error::Config(format!(
                "stage gate resolutions {:?} differ from config {:?}",
                self.gate.resolutions, cfg.resolutions
            )));
        }
        ensure_len("stage embed input", cfg.channels, self.embed.input_dim())?;
        ensure_len("stage embed output", cfg.embed_dim, self.embed.output_dim())?;
        self.attention.validate()?;
        ensure_len("stage attention width", cfg.embed_dim, self.attention.spec.embed_dim)?;
        self.head.validate()?;
        ensure_len("stage head input", cfg.embed_dim, self.head.input_dim())?;
        ensure_len("stage head output", cfg.head_width(), self.head.output_dim())?;
        ensure_len("back projection input", cfg.embed_dim, self.back_project.input_dim())?;
        ensure_len("back projection output", cfg.channels, self.back_project.output_dim())
    }

    fn put(&self, ar: &mut TensorArchive, prefix: &str) {
        ar.push(
            format!("{prefix}/gate/resolutions"),
            vec![self.gate.resolutions.len()],
            self.gate.resolutions.iter().map(|&r| r as f64).collect(),
        );
        for (mlp, r) in self.gate.mlps.iter().zip(&self.gate.resolutions) {
            ar.put_dense(&format!("{prefix}/gate/r{r}"), mlp);
        }
        ar.put_layer(&format!("{prefix}/embed"), &self.embed);
        ar.put_attention(&format!("{prefix}/attention"), &self.attention);
        ar.put_dense(&format!("{prefix}/head"), &self.head);
        ar.put_layer(&format!("{prefix}/back_project"), &self.back_project);
    }

    fn take(ar: &TensorArchive, prefix: &str) -> Result<Self> {
        let resolutions: Vec<usize> = ar
            .get(&format!("{prefix}/gate/resolutions"))?
            .data
            .iter()
            .map(|&r| r as usize)
            .collect();
        let mlps = resolutions
            .iter()
            .map(|r| ar.take_dense(&format!("{prefix}/gate/r{r}")))
            .collect::<Result<Vec<_>>>()?;
        let channels = mlps.first().map_or(0, DenseParams::input_dim);
        Ok(Self {
            gate: GateParams {
                channels,
                resolutions,
                mlps,
            },
            embed: ar.take_layer(&format!("{prefix}/embed"))?,
            attention: ar.take_attention(&format!("{prefix}/attention"))?,
            head: ar.take_dense(&format!("{prefix}/head"))?,
            back_project: ar.take_layer(&format!("{prefix}/back_project"))?,
        })
    }
}

impl PipelineParams {
    /// Uniform fan-in initialization of every layer from `cfg.seed`.
    pub fn random(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let root = SeedStream::new(cfg.seed).split("params");
        let stages = (0..cfg.stage_bundles())
            .map(|i| StageParams::random(cfg, root.split("stage").index(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            nsm_head: DenseParams::init_stream(&nsm_spec(cfg), root.split("nsm"))?,
            point_reduce: DenseLayer::init(
                cfg.feature_dim,
                cfg.channels,
                Activation::Linear,
                root.split("point_reduce"),
            ),
            group_mlp: DenseParams::init_stream(&group_spec(cfg), root.split("group"))?,
            initial_head: DenseParams::init_stream(&initial_head_spec(cfg), root.split("initial_head"))?,
            stages,
        })
    }

    /// Parameters selected by `cfg.param_init`.
    pub fn for_config(cfg: &PipelineConfig) -> Result<Self> {
        match cfg.param_init {
            super::ParamInit::Random => Self::random(cfg),
            super::ParamInit::Planted => super::planted_params(cfg),
        }
    }

    /// Parameters used by refinement stage `i` (0-based). With shared
    /// parameters every stage gets the same bundle.
    pub fn stage(&self, i: usize) -> &StageParams {
        &self.stages[i.min(self.stages.len() - 1)]
    }

    pub fn validate(&self, cfg: &PipelineConfig) -> Result<()> {
        self.nsm_head.validate()?;
        ensure_len("nsm head input", cfg.feature_dim, self.nsm_head.input_dim())?;
        ensure_len("nsm head output", cfg.feature_dim + 5, self.nsm_head.output_dim())?;
        ensure_len("point reduce input", cfg.feature_dim, self.point_reduce.input_dim())?;
        ensure_len("point reduce output", cfg.channels, self.point_reduce.output_dim())?;
        self.group_mlp.validate()?;
        ensure_len("group mlp input", cfg.channels + 3, self.group_mlp.input_dim())?;
        ensure_len("group mlp output", cfg.channels, self.group_mlp.output_dim())?;
        self.initial_head.validate()?;
        ensure_len("initial head input", cfg.channels, self.initial_head.input_dim())?;
        ensure_len("initial head output", cfg.head_width(), self.initial_head.output_dim())?;
        ensure_len("stage bundles", cfg.stage_bundles(), self.stages.len())?;
        for s in &self.stages {
            s.validate(cfg)?;
        }
        Ok(())
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut ar = TensorArchive::new();
        ar.put_dense("nsm_head", &self.nsm_head);
        ar.put_layer("point_reduce", &self.point_reduce);
        ar.put_dense("group_mlp", &self.group_mlp);
        ar.put_dense("initial_head", &self.initial_head);
        ar.push("stages", vec![1], vec![self.stages.len() as f64]);
        for (i, s) in self.stages.iter().enumerate() {
            s.put(&mut ar, &format!("stage{i}"));
        }
        ar
    }

    pub fn from_archive(ar: &TensorArchive) -> Result<Self> {
        let n = ar.get("stages")?.data.first().copied().unwrap_or(0.0) as usize;
        if n == 0 {
            return Err(Error::Format("parameter file holds no stages".into()));
        }
        Ok(Self {
            nsm_head: ar.take_dense("nsm_head")?,
            point_reduce: ar.take_layer("point_reduce")?,
            group_mlp: ar.take_dense("group_mlp")?,
            initial_head: ar.take_dense("initial_head")?,
            stages: (0..n)
                .map(|i| StageParams::take(ar, &format!("stage{i}")))
                .collect::<Result<Vec<_>>>()?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    /// Loads and checks the parameters against `cfg`.
    pub fn load(path: &Path, cfg: &PipelineConfig) -> Result<Self> {
        let p = Self::from_archive(&TensorArchive::load(path)?)?;
        p.validate(cfg)?;
        Ok(p)
    }
}
