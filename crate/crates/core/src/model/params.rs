use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::calendar::CalendarSpec;
use crate::error::{bail, Error, Result};
use crate::model::ModelConfig;
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Freezable partition of the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ParamGroup {
    LocationEmbeddings,
    InstantEmbeddings,
    InputProjection,
    /// Every encoder and decoder layer: attention, norms, feed-forwards.
    Attention,
    PredictionHead,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::LocationEmbeddings,
        ParamGroup::InstantEmbeddings,
        ParamGroup::InputProjection,
        ParamGroup::Attention,
        ParamGroup::PredictionHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::LocationEmbeddings => "location-embeddings",
            ParamGroup::InstantEmbeddings => "instant-embeddings",
            ParamGroup::InputProjection => "input-projection",
            ParamGroup::Attention => "attention",
            ParamGroup::PredictionHead => "prediction-head",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown parameter group {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<S> {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearIds {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormIds {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MhaIds {
    pub query: LinearIds,
    pub key: LinearIds,
    pub value: LinearIds,
    pub output: LinearIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedForwardIds {
    pub hidden: LinearIds,
    pub output: LinearIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncLayerIds {
    pub temporal: MhaIds,
    pub temporal_norm: NormIds,
    pub spatial: MhaIds,
    pub spatial_norm: NormIds,
    pub ff: FeedForwardIds,
    pub ff_norm: NormIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecLayerIds {
    pub self_temporal: MhaIds,
    pub self_norm: NormIds,
    pub cross: MhaIds,
    pub cross_norm: NormIds,
    pub spatial: MhaIds,
    pub spatial_norm: NormIds,
    pub ff: FeedForwardIds,
    pub ff_norm: NormIds,
}

/// Positions of every parameter in the flat tensor list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub location_embed: usize,
    pub day_embed: usize,
    pub slot_embed: usize,
    pub input: LinearIds,
    pub encoder: Vec<EncLayerIds>,
    pub decoder: Vec<DecLayerIds>,
    pub pred: LinearIds,
}

enum Init {
    Embedding,
    Xavier,
    Zeros,
    Ones,
}

struct Spec {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
    init: Init,
}

struct Builder {
    specs: Vec<Spec>,
}

impl Builder {
    fn add(&mut self, name: String, group: ParamGroup, shape: &[usize], init: Init) -> usize {
        self.specs.push(Spec {
            name,
            group,
            shape: shape.to_vec(),
            init,
        });
        self.specs.len() - 1
    }

    fn linear(&mut self, prefix: &str, group: ParamGroup, fan_in: usize, fan_out: usize) -> LinearIds {
        LinearIds {
            weight: self.add(format!("{prefix}.weight"), group, &[fan_in, fan_out], Init::Xavier),
            bias: self.add(format!("{prefix}.bias"), group, &[fan_out], Init::Zeros),
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIds {
        NormIds {
            gain: self.add(format!("{prefix}.gain"), ParamGroup::Attention, &[d], Init::Ones),
            bias: self.add(format!("{prefix}.bias"), ParamGroup::Attention, &[d], Init::Zeros),
        }
    }

    fn mha(&mut self, prefix: &str, d: usize) -> MhaIds {
        let g = ParamGroup::Attention;
        MhaIds {
            query: self.linear(&format!("{prefix}.query"), g, d, d),
            key: self.linear(&format!("{prefix}.key"), g, d, d),
            value: self.linear(&format!("{prefix}.value"), g, d, d),
            output: self.linear(&format!("{prefix}.output"), g, d, d),
        }
    }

    fn ff(&mut self, prefix: &str, d: usize, hidden: usize) -> FeedForwardIds {
        let g = ParamGroup::Attention;
        FeedForwardIds {
            hidden: self.linear(&format!("{prefix}.hidden"), g, d, hidden),
            output: self.linear(&format!("{prefix}.output"), g, hidden, d),
        }
    }
}

fn plan(config: &ModelConfig, calendar: &CalendarSpec, num_locations: usize) -> (Vec<Spec>, Layout) {
    let d = config.d_model;
    let mut b = Builder { specs: Vec::new() };
    let location_embed = b.add(
        "embed.location".into(),
        ParamGroup::LocationEmbeddings,
        &[num_locations, d],
        Init::Embedding,
    );
    let day_embed = b.add(
        "embed.day".into(),
        ParamGroup::InstantEmbeddings,
        &[calendar.days_per_week, d],
        Init::Embedding,
    );
    let slot_embed = b.add(
        "embed.slot".into(),
        ParamGroup::InstantEmbeddings,
        &[calendar.slots_per_day, d],
        Init::Embedding,
    );
    let input = b.linear("input", ParamGroup::InputProjection, config.features, d);
    let encoder = (0..config.enc_layers)
        .map(|l| EncLayerIds {
            temporal: b.mha(&format!("enc.{l}.temporal"), d),
            temporal_norm: b.norm(&format!("enc.{l}.temporal_norm"), d),
            spatial: b.mha(&format!("enc.{l}.spatial"), d),
            spatial_norm: b.norm(&format!("enc.{l}.spatial_norm"), d),
            ff: b.ff(&format!("enc.{l}.ff"), d, config.ff_dim),
            ff_norm: b.norm(&format!("enc.{l}.ff_norm"), d),
        })
        .collect();
    let decoder = (0..config.dec_layers)
        .map(|l| DecLayerIds {
            self_temporal: b.mha(&format!("dec.{l}.self"), d),
            self_norm: b.norm(&format!("dec.{l}.self_norm"), d),
            cross: b.mha(&format!("dec.{l}.cross"), d),
            cross_norm: b.norm(&format!("dec.{l}.cross_norm"), d),
            spatial: b.mha(&format!("dec.{l}.spatial"), d),
            spatial_norm: b.norm(&format!("dec.{l}.spatial_norm"), d),
            ff: b.ff(&format!("dec.{l}.ff"), d, config.ff_dim),
            ff_norm: b.norm(&format!("dec.{l}.ff_norm"), d),
        })
        .collect();
    let pred = b.linear("pred", ParamGroup::PredictionHead, d, config.features);
    let layout = Layout {
        location_embed,
        day_embed,
        slot_embed,
        input,
        encoder,
        decoder,
        pred,
    };
    (b.specs, layout)
}

/// All learnable tensors of a model, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    pub config: ModelConfig,
    pub calendar: CalendarSpec,
    pub num_locations: usize,
    tensors: Vec<NamedTensor<S>>,
    layout: Layout,
}

fn sample_init<S: Scalar>(shape: &[usize], init: &Init, d_model: usize, rng: &mut Stream) -> Tensor<S> {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::full(shape, S::one()),
        Init::Embedding => {
            let sd = 1.0 / libm::sqrt(d_model as f64);
            Tensor::from_fn(shape, |_| S::from_f64(sd * rng.normal()))
        }
        Init::Xavier => {
            let a = libm::sqrt(6.0 / (shape[0] + shape[1]) as f64);
            Tensor::from_fn(shape, |_| S::from_f64(rng.uniform_range(-a, a)))
        }
    }
}

impl<S: Scalar> ModelParams<S> {
    /// Freshly initialized parameters for a vocabulary of `num_locations`.
    pub fn init(config: &ModelConfig, calendar: &CalendarSpec, num_locations: usize, rng: &mut Stream) -> Result<Self> {
        config.validate()?;
        calendar.validate()?;
        if num_locations == 0 {
            bail!(Config, "location vocabulary is empty");
        }
        let (specs, layout) = plan(config, calendar, num_locations);
        let tensors = specs
            .into_iter()
            .map(|s| {
                let mut r = rng.child(&s.name);
                NamedTensor {
                    tensor: sample_init(&s.shape, &s.init, config.d_model, &mut r),
                    name: s.name,
                    group: s.group,
                }
            })
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            calendar: *calendar,
            num_locations,
            tensors,
            layout,
        })
    }

    /// Rebuild from named tensors (e.g. a checkpoint). Every expected name
    /// must be present with the expected shape.
    pub fn from_named(
        config: &ModelConfig,
        calendar: &CalendarSpec,
        num_locations: usize,
        named: Vec<(String, Tensor<S>)>,
    ) -> Result<Self> {
        config.validate()?;
        let (specs, layout) = plan(config, calendar, num_locations);
        let mut pool: Vec<Option<(String, Tensor<S>)>> = named.into_iter().map(Some).collect();
        let mut tensors = Vec::with_capacity(specs.len());
        for s in specs {
            let slot = pool
                .iter_mut()
                .find(|p| p.as_ref().is_some_and(|(n, _)| *n == s.name))
                .and_then(Option::take);
            let Some((_, tensor)) = slot else {
                bail!(Data, "missing parameter tensor {:?}", s.name);
            };
            if tensor.shape() != s.shape.as_slice() {
                bail!(Data, "parameter {:?} has shape {:?}, expected {:?}", s.name, tensor.shape(), s.shape);
            }
            tensors.push(NamedTensor {
                name: s.name,
                group: s.group,
                tensor,
            });
        }
        if let Some((extra, _)) = pool.into_iter().flatten().next() {
            bail!(Data, "unexpected parameter tensor {extra:?}");
        }
        Ok(ModelParams {
            config: config.clone(),
            calendar: *calendar,
            num_locations,
            tensors,
            layout,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn tensors(&self) -> &[NamedTensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [NamedTensor<S>] {
        &mut self.tensors
    }

    pub fn tensor(&self, index: usize) -> &Tensor<S> {
        &self.tensors[index].tensor
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.tensor)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.tensor.len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            config: self.config.clone(),
            calendar: self.calendar,
            num_locations: self.num_locations,
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor {
                    name: t.name.clone(),
                    group: t.group,
                    tensor: t.tensor.cast(),
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }

    /// Copy sharing every tensor except a freshly initialized location table
    /// of `num_locations` rows.
    pub fn with_new_locations(&self, num_locations: usize, rng: &mut Stream) -> Result<Self> {
        if num_locations == 0 {
            bail!(Config, "location vocabulary is empty");
        }
        let (specs, layout) = plan(&self.config, &self.calendar, num_locations);
        let mut out = self.clone();
        let idx = layout.location_embed;
        let spec = &specs[idx];
        let mut r = rng.child(&spec.name);
        out.tensors[idx].tensor = sample_init(&spec.shape, &spec.init, self.config.d_model, &mut r);
        out.num_locations = num_locations;
        out.layout = layout;
        Ok(out)
    }
}
