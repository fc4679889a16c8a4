//! Differentiable building blocks over the tape.
//!
//! Blocks own parameter handles into a [`ParamStore`]; a forward pass runs
//! inside a [`Ctx`] that binds those handles to tape leaves on first use.

mod avcstem;
mod bsblock;
mod cbam;
mod gsconv;
mod layers;
mod mbconv;
mod vkconv;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use avcstem::{AvcStem, AvcStemConfig};
pub use bsblock::{BsBlock, BsConfig, PConv};
pub use cbam::{Cbam, CbamGates};
pub use gsconv::{GsBottleneck, GsConv, GsConfig};
pub use layers::{BatchNorm, Cbs, Conv};
pub use mbconv::{MbConv, MbConvConfig};
pub use vkconv::{vk_base_coords, vk_lattice, VkConv, VkConfig};

use crate::complexity::LayerDesc;
use crate::error::{Error, Result};
use crate::tensor::param::{BufferId, ParamId, ParamStore};
use crate::tensor::gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
use crate::tensor::{ChannelStats, Shape4, Tape, Tensor4, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-forward state: the tape, parameter bindings, dropout seeding and the
/// batch statistics to fold into running estimates after the step.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    mode: Mode,
    seed: u64,
    draws: u64,
    track: bool,
    bn_updates: Vec<(BufferId, ChannelStats)>,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore, mode: Mode, seed: u64) -> Self {
        Ctx {
            tape,
            store,
            bound: vec![None; store.len()],
            mode,
            seed,
            draws: 0,
            track: true,
            bn_updates: Vec::new(),
        }
    }

    /// Parameters enter the tape as constants (no gradients).
    pub fn frozen(mut self) -> Self {
        self.track = false;
        self
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn training(&self) -> bool {
        self.mode == Mode::Train
    }

    /// The tape handle of a parameter, creating the leaf on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let mut t = self.store.value(id).clone();
        t.set_requires_grad(self.track);
        let v = self.tape.leaf(t);
        self.bound[id.0] = Some(v);
        v
    }

    /// Uses an existing tape value for a parameter.
    pub fn bind(&mut self, id: ParamId, v: Var) -> Result<()> {
        let want = self.store.value(id).shape();
        if self.tape.shape(v) != want {
            return Err(Error::Dimension(format!(
                "binding {} expects {want}, got {}",
                self.store.name(id),
                self.tape.shape(v)
            )));
        }
        self.bound[id.0] = Some(v);
        Ok(())
    }

    /// Parameters touched during the forward pass with their tape handles.
    pub fn bound(&self) -> Vec<(ParamId, Var)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect()
    }

    pub fn next_seed(&mut self) -> u64 {
        self.draws += 1;
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(self.draws.wrapping_mul(0xBF58_476D_1CE4_E5B9))
    }

    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        let training = self.training();
        let seed = if training && p > 0.0 { self.next_seed() } else { 0 };
        self.tape.dropout(x, p, training, seed)
    }

    pub(crate) fn push_bn_update(&mut self, id: BufferId, stats: ChannelStats) {
        self.bn_updates.push((id, stats));
    }

    pub fn take_bn_updates(&mut self) -> Vec<(BufferId, ChannelStats)> {
        std::mem::take(&mut self.bn_updates)
    }

    pub fn expect_channels(&self, x: Var, c: usize, what: &str) -> Result<()> {
        let got = self.tape.shape(x).c;
        if got != c {
            return Err(Error::Dimension(format!(
                "{what} expects {c} input channels, got {got}"
            )));
        }
        Ok(())
    }
}

/// Allocates named, seeded parameters.
pub struct Builder<'s> {
    pub store: &'s mut ParamStore,
    rng: ChaCha8Rng,
}

impl<'s> Builder<'s> {
    pub fn new(store: &'s mut ParamStore, seed: u64) -> Self {
        Builder {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn conv_weight(&mut self, name: &str, shape: Shape4) -> ParamId {
        let fan_in = (shape.c * shape.h * shape.w) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let t = Tensor4::uniform(shape, -bound, bound, &mut self.rng);
        self.store.add(name, t, true)
    }

    pub fn constant(&mut self, name: &str, shape: Shape4, value: f64) -> ParamId {
        self.store.add(name, Tensor4::full(shape, value), false)
    }

    pub fn buffer(&mut self, name: &str, c: usize) -> BufferId {
        self.store.add_buffer(name, c)
    }
}

/// A differentiable unit.
pub trait Block {
    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var>;

    /// Appends the primitive layers applied to an input of shape `input`
    /// and returns the output shape.
    fn describe(&self, input: Shape4, out: &mut Vec<LayerDesc>) -> Result<Shape4>;
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Finite-difference check of a block with respect to its input and every
/// parameter in `store`. The scalar probed is `Σ y ⊙ r` for a fixed random
/// `r`.
pub fn check_block_gradients<B: Block>(
    store: &ParamStore,
    block: &B,
    x: &Tensor4,
    mode: Mode,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let ids: Vec<ParamId> = store.ids().collect();
    let mut inputs = vec![x.clone()];
    inputs.extend(ids.iter().map(|&id| store.value(id).clone()));
    let weights = std::cell::RefCell::new(None::<Tensor4>);
    grad_check(
        |tape, vars| {
            let mut cx = Ctx::new(tape, store, mode, 0x5EED);
            for (&id, &v) in ids.iter().zip(&vars[1..]) {
                cx.bind(id, v)?;
            }
            let y = block.forward(&mut cx, vars[0])?;
            let shape = tape.shape(y);
            let r = weights
                .borrow_mut()
                .get_or_insert_with(|| {
                    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
                    Tensor4::uniform(shape, -1.0, 1.0, &mut rng)
                })
                .clone();
            let r = tape.constant(r);
            let p = tape.mul(y, r)?;
            Ok(tape.sum(p))
        },
        &inputs,
        opts,
    )
}

/// Folds batch statistics from a training-mode pass into the running
/// estimates.
pub fn apply_bn_updates(store: &mut ParamStore, updates: &[(BufferId, ChannelStats)], momentum: f64) {
    for (id, stats) in updates {
        store.buffer_mut(*id).absorb(stats, momentum);
    }
}

/// Sets every running estimate touched by `block` to the statistics of one
/// training-mode pass over `x`.
pub fn calibrate<B: Block>(store: &mut ParamStore, block: &B, x: &Tensor4) -> Result<()> {
    let updates = {
        let mut tape = Tape::new();
        let mut cx = Ctx::new(&mut tape, store, Mode::Train, 0).frozen();
        let xv = cx.tape.constant(x.clone());
        block.forward(&mut cx, xv)?;
        cx.take_bn_updates()
    };
    apply_bn_updates(store, &updates, 1.0);
    Ok(())
}
