//! CycleGAN training: two generators, two patch discriminators, loss
//! assembly, and the epoch loop.
//!
//! Naming follows the two mappings: `gen_g` maps source X to target Y and
//! is judged by `disc_g` on domain Y; `gen_f` and `disc_f` mirror that for
//! the reverse direction.

use crate::error::{TensorError, TrainError};
use crate::kernels::elem::LossKind;
use crate::kernels::Scalar;
use crate::nets::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::optim::{AdamState, LrSchedule};
use crate::rng::SplitMix64;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

/// The optimizer regime is single-sample throughout.
pub const BATCH_SIZE: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Cycle-consistency weight (lambda).
    pub lambda_cycle: f32,
    pub schedule: LrSchedule,
    pub total_epochs: u32,
    pub seed: u64,
    pub checkpoint_every: u32,
    /// Use the literal log(1 - D(G(x))) generator objective instead of the
    /// default non-saturating -log D(G(x)) form.
    pub saturating_gan: bool,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl TrainConfig {
    pub fn new(generator: GeneratorConfig) -> Self {
        let schedule = LrSchedule::default();
        TrainConfig {
            lambda_cycle: 10.0,
            schedule,
            total_epochs: schedule.total_epochs(),
            seed: 42,
            checkpoint_every: 25,
            saturating_gan: false,
            discriminator: DiscriminatorConfig {
                in_channels: generator.in_channels,
                ..DiscriminatorConfig::for_image_size(generator.image_size)
            },
            generator,
        }
    }
}

/// The five scalars of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub gan_g: f32,
    pub gan_f: f32,
    pub cycle: f32,
    pub disc_g: f32,
    pub disc_f: f32,
}

impl LossReport {
    pub fn all_finite(&self) -> bool {
        [self.gan_g, self.gan_f, self.cycle, self.disc_g, self.disc_f]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy)]
pub struct LossRow {
    pub epoch: u32,
    pub iter: usize,
    pub losses: LossReport,
    pub lr: f32,
}

/// All mutable training state: four networks, the two optimizer groups,
/// the epoch counter, and the RNG.
pub struct CycleState {
    pub cfg: TrainConfig,
    pub gen_g: Generator,
    pub gen_f: Generator,
    pub disc_g: Discriminator,
    pub disc_f: Discriminator,
    pub opt_gen: AdamState,
    pub opt_disc: AdamState,
    pub epoch: u32,
    pub rng: SplitMix64,
}

impl CycleState {
    /// Builds the four networks from one seed. Construction order is fixed
    /// (G, F, D_G, D_F) so the init stream is reproducible.
    pub fn new(cfg: TrainConfig) -> Result<CycleState, TensorError> {
        if cfg.lambda_cycle < 0.0 {
            return Err(TensorError::bad_config(
                "train",
                "lambda_cycle must be non-negative",
            ));
        }
        let mut rng = SplitMix64::new(cfg.seed);
        let gen_g = Generator::build("genG", cfg.generator, &mut rng)?;
        let gen_f = Generator::build("genF", cfg.generator, &mut rng)?;
        let disc_g = Discriminator::build("dG", cfg.discriminator, &mut rng)?;
        let disc_f = Discriminator::build("dF", cfg.discriminator, &mut rng)?;
        Ok(CycleState {
            cfg,
            gen_g,
            gen_f,
            disc_g,
            disc_f,
            opt_gen: AdamState::new(),
            opt_disc: AdamState::new(),
            epoch: 0,
            rng: SplitMix64::new(rng.state()),
        })
    }
}

/// Generator adversarial loss over a sigmoid patch map. The default form
/// is the non-saturating -log D(fake); `saturating` switches to the
/// literal log(1 - D(fake)) objective.
pub fn gan_loss_generator<T: Scalar>(tape: &mut Tape<T>, d_out_fake: Var, saturating: bool) -> Var {
    if saturating {
        let l = tape.reduce_loss(d_out_fake, LossKind::MeanNegLog1m);
        tape.scale(l, T::from_f32(-1.0))
    } else {
        tape.reduce_loss(d_out_fake, LossKind::MeanNegLog)
    }
}

/// Discriminator loss: mean of -log D(real) plus -log(1 - D(fake)),
/// halved to slow the discriminator relative to the generators.
pub fn gan_loss_discriminator<T: Scalar>(
    tape: &mut Tape<T>,
    d_out_real: Var,
    d_out_fake: Var,
) -> Var {
    let lr = tape.reduce_loss(d_out_real, LossKind::MeanNegLog);
    let lf = tape.reduce_loss(d_out_fake, LossKind::MeanNegLog1m);
    let sum = tape
        .residual_add(lr, lf)
        .expect("loss scalars share a shape");
    tape.scale(sum, T::from_f32(0.5))
}

/// L1 cycle-consistency: mean|x_rec - x| + mean|y_rec - y|.
pub fn cycle_loss<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    x_rec: Var,
    y: Var,
    y_rec: Var,
) -> Result<Var, TensorError> {
    let dx = tape.sub(x_rec, x)?;
    let lx = tape.reduce_loss(dx, LossKind::MeanAbs);
    let dy = tape.sub(y_rec, y)?;
    let ly = tape.reduce_loss(dy, LossKind::MeanAbs);
    tape.residual_add(lx, ly)
}

/// Full generator objective: both adversarial terms plus lambda times the
/// cycle loss.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    gan_g: Var,
    gan_f: Var,
    cycle: Var,
    lambda: f32,
) -> Var {
    let adv = tape
        .residual_add(gan_g, gan_f)
        .expect("loss scalars share a shape");
    let weighted = tape.scale(cycle, T::from_f32(lambda));
    tape.residual_add(adv, weighted)
        .expect("loss scalars share a shape")
}

/// Iterations per epoch: the larger of the two set sizes.
pub fn epoch_length(n_x: usize, n_y: usize) -> Result<usize, TrainError> {
    if n_x == 0 || n_y == 0 {
        return Err(TrainError::EmptyDataset("epoch_length"));
    }
    Ok(n_x.max(n_y))
}

/// Index stream covering `len` draws from a set of `n` items: uniform
/// shuffles, reshuffling on wrap-around.
fn epoch_plan(rng: &mut SplitMix64, n: usize, len: usize) -> Vec<usize> {
    let mut plan = Vec::with_capacity(len);
    while plan.len() < len {
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        let take = (len - plan.len()).min(n);
        plan.extend_from_slice(&idx[..take]);
    }
    plan
}

struct DetachedFakes {
    fake_y: Tensor,
    fake_x: Tensor,
}

fn abort_if_non_finite(
    tape: &Tape<f32>,
    losses: &[(&'static str, f32)],
) -> Result<(), TrainError> {
    for (name, v) in losses {
        if !v.is_finite() {
            let (node, op) = tape.first_non_finite().unwrap_or((usize::MAX, "unknown"));
            return Err(TrainError::NonFinite {
                loss: name,
                node,
                op,
            });
        }
    }
    Ok(())
}

/// Forward both cycles, backprop the total generator objective, and
/// accumulate gradients into G and F only. Discriminator parameters sit on
/// the same tape but their gradients are never harvested.
fn generator_pass(
    state: &mut CycleState,
    x: &Tensor,
    y: &Tensor,
) -> Result<(f32, f32, f32, DetachedFakes), TrainError> {
    let mut tape = Tape::<f32>::new();
    let bg = state.gen_g.bind(&mut tape);
    let bf = state.gen_f.bind(&mut tape);
    let bdg = state.disc_g.bind(&mut tape);
    let bdf = state.disc_f.bind(&mut tape);
    let xv = tape.leaf_tensor(x);
    let yv = tape.leaf_tensor(y);

    let fake_y = state.gen_g.forward(&mut tape, &bg, xv)?;
    let fake_x = state.gen_f.forward(&mut tape, &bf, yv)?;
    let rec_x = state.gen_f.forward(&mut tape, &bf, fake_y)?;
    let rec_y = state.gen_g.forward(&mut tape, &bg, fake_x)?;
    let d_fake_y = state.disc_g.forward(&mut tape, &bdg, fake_y)?;
    let d_fake_x = state.disc_f.forward(&mut tape, &bdf, fake_x)?;

    let l_gan_g = gan_loss_generator(&mut tape, d_fake_y, state.cfg.saturating_gan);
    let l_gan_f = gan_loss_generator(&mut tape, d_fake_x, state.cfg.saturating_gan);
    let l_cycle = cycle_loss(&mut tape, xv, rec_x, yv, rec_y)?;
    let total = total_loss(&mut tape, l_gan_g, l_gan_f, l_cycle, state.cfg.lambda_cycle);

    let gan_g = tape.scalar(l_gan_g);
    let gan_f = tape.scalar(l_gan_f);
    let cycle = tape.scalar(l_cycle);
    abort_if_non_finite(
        &tape,
        &[("gan_g", gan_g), ("gan_f", gan_f), ("cycle", cycle)],
    )?;

    let fakes = DetachedFakes {
        fake_y: Tensor::from_vec(tape.shape(fake_y), tape.values(fake_y).to_vec())
            .expect("forward output is consistent"),
        fake_x: Tensor::from_vec(tape.shape(fake_x), tape.values(fake_x).to_vec())
            .expect("forward output is consistent"),
    };

    let mut grads = tape.backward(total);
    state.gen_g.stack.accumulate_grads(&bg, &mut grads);
    state.gen_f.stack.accumulate_grads(&bf, &mut grads);
    Ok((gan_g, gan_f, cycle, fakes))
}

/// Train both discriminators against real samples and the detached fakes.
fn discriminator_pass(
    state: &mut CycleState,
    x: &Tensor,
    y: &Tensor,
    fakes: &DetachedFakes,
) -> Result<(f32, f32), TrainError> {
    let mut tape = Tape::<f32>::new();
    let bdg = state.disc_g.bind(&mut tape);
    let bdf = state.disc_f.bind(&mut tape);
    let xv = tape.leaf_tensor(x);
    let yv = tape.leaf_tensor(y);
    let fy = tape.leaf_tensor(&fakes.fake_y);
    let fx = tape.leaf_tensor(&fakes.fake_x);

    let d_real_y = state.disc_g.forward(&mut tape, &bdg, yv)?;
    let d_fake_y = state.disc_g.forward(&mut tape, &bdg, fy)?;
    let l_d_g = gan_loss_discriminator(&mut tape, d_real_y, d_fake_y);

    let d_real_x = state.disc_f.forward(&mut tape, &bdf, xv)?;
    let d_fake_x = state.disc_f.forward(&mut tape, &bdf, fx)?;
    let l_d_f = gan_loss_discriminator(&mut tape, d_real_x, d_fake_x);

    let disc_g = tape.scalar(l_d_g);
    let disc_f = tape.scalar(l_d_f);
    abort_if_non_finite(&tape, &[("disc_g", disc_g), ("disc_f", disc_f)])?;

    // One backward over the sum: the two parameter sets are disjoint, so
    // this equals optimizing each loss separately.
    let both = tape
        .residual_add(l_d_g, l_d_f)
        .expect("loss scalars share a shape");
    let mut grads = tape.backward(both);
    state.disc_g.stack.accumulate_grads(&bdg, &mut grads);
    state.disc_f.stack.accumulate_grads(&bdf, &mut grads);
    Ok((disc_g, disc_f))
}

/// One full optimization step: generators update on the total objective,
/// then both discriminators update on real/fake pairs with the fakes
/// detached. Gradients are cleared before returning.
pub fn train_step(
    state: &mut CycleState,
    x: &Tensor,
    y: &Tensor,
    rate: f32,
) -> Result<LossReport, TrainError> {
    let expect = Shape::new(
        BATCH_SIZE,
        state.cfg.generator.in_channels,
        state.cfg.generator.image_size,
        state.cfg.generator.image_size,
    );
    for sample in [x, y] {
        if sample.shape() != expect {
            return Err(TensorError::DimMismatch {
                op: "train_step",
                what: "sample shape",
                lhs: sample.shape(),
                rhs: expect,
            }
            .into());
        }
    }

    let (gan_g, gan_f, cycle, fakes) = generator_pass(state, x, y)?;
    state.opt_gen.step_group(
        state
            .gen_g
            .stack
            .tensors_mut()
            .chain(state.gen_f.stack.tensors_mut()),
        rate,
    )?;
    state.gen_g.stack.clear_grads();
    state.gen_f.stack.clear_grads();

    let (disc_g, disc_f) = discriminator_pass(state, x, y, &fakes)?;
    state.opt_disc.step_group(
        state
            .disc_g
            .stack
            .tensors_mut()
            .chain(state.disc_f.stack.tensors_mut()),
        rate,
    )?;
    state.disc_g.stack.clear_grads();
    state.disc_f.stack.clear_grads();

    Ok(LossReport {
        gan_g,
        gan_f,
        cycle,
        disc_g,
        disc_f,
    })
}

/// Runs one epoch over freshly shuffled index streams and advances the
/// epoch counter. `on_iter` sees every loss row in order.
pub fn run_epoch(
    state: &mut CycleState,
    xs: &[Tensor],
    ys: &[Tensor],
    mut on_iter: impl FnMut(&LossRow),
) -> Result<(), TrainError> {
    let len = epoch_length(xs.len(), ys.len())?;
    let lr = state.cfg.schedule.rate_at(state.epoch);
    let plan_x = epoch_plan(&mut state.rng, xs.len(), len);
    let plan_y = epoch_plan(&mut state.rng, ys.len(), len);
    for iter in 0..len {
        let losses = train_step(state, &xs[plan_x[iter]], &ys[plan_y[iter]], lr)?;
        on_iter(&LossRow {
            epoch: state.epoch,
            iter,
            losses,
            lr,
        });
    }
    state.epoch += 1;
    Ok(())
}
