use std::path::Path;
use std::sync::Arc;

use pgcycle_autograd::{Float, Graph, Tensor, Var};
use rand::Rng;

use crate::cascade::{cascade_forward, single_stage_forward};
use crate::checkpoint::Checkpoint;
use crate::image::Image;
use crate::losses::{
    cycle_loss, lsgan_discriminator_loss, lsgan_generator_loss, perceptual_loss, pg_cycle_loss,
    pg_gan_discriminator_loss, pg_gan_generator_loss, total_loss, LossReport, LossTerms,
};
use crate::nn::{discriminator_forward, Bound, NetworkSpec, ParameterSet, Vgg16};
use crate::prior::{prior_map, PriorMap};
use crate::{Error, Result};

use super::data::{derived_rng, PURPOSE_INIT, PURPOSE_REPLAY};
use super::{lr_at, Adam, DiscKind, PriorWeighting, ReplayBuffer, TrainConfig};

const NET_G: u64 = 1;
const NET_F: u64 = 2;
const NET_DX: u64 = 3;
const NET_DY: u64 = 4;
const NET_VGG: u64 = 5;

pub fn generator_spec(config: &TrainConfig) -> NetworkSpec {
    NetworkSpec {
        base_width: config.base_width,
        res_blocks: config.res_blocks,
        upsampler: config.upsampler,
        long_range_residual: config.long_range_residual,
        ..NetworkSpec::generator()
    }
}

pub fn disc_x_spec(config: &TrainConfig) -> NetworkSpec {
    NetworkSpec::disc_patch().with_base_width(config.base_width)
}

pub fn disc_y_spec(config: &TrainConfig) -> NetworkSpec {
    match config.disc_y {
        DiscKind::Pixel => NetworkSpec::disc_pixel(),
        DiscKind::Patch => NetworkSpec::disc_patch(),
    }
    .with_base_width(config.base_width)
}

fn init_seed(config: &TrainConfig, net: u64, stage: u64) -> u64 {
    derived_rng(config.seed, PURPOSE_INIT, net, stage).gen()
}

pub fn build_extractor<T: Float>(config: &TrainConfig) -> Result<Vgg16<T>> {
    match &config.vgg_weights {
        Some(path) => Vgg16::load(path),
        None => Vgg16::random(init_seed(config, NET_VGG, 0), config.vgg_width_div),
    }
}

/// Generator output for a `[-1, 1]` batch: the finest cascade stage, or a
/// single pass when the cascade is disabled.
pub fn translate<'g, T: Float>(gens: &[Bound<'g, T>], x: Var<'g, T>, coarse_to_fine: bool) -> Result<Var<'g, T>> {
    if coarse_to_fine {
        Ok(cascade_forward(gens, x)?.finest)
    } else {
        single_stage_forward(&gens[0], x)
    }
}

/// `[n, c, h, w]` stack of equally sized images.
pub fn stack_images<T: Float>(images: &[Image]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("empty batch"))?;
    let (c, h, w) = (first.channels(), first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if (img.channels(), img.height(), img.width()) != (c, h, w) {
            return Err(Error::Shape("batch images differ in size".into()));
        }
        data.extend(img.data().iter().map(|&v| T::of(v)));
    }
    Ok(Tensor::from_vec([images.len(), c, h, w], data)?)
}

fn stack_maps<T: Float>(maps: &[PriorMap], h: usize, w: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(maps.len() * h * w);
    for m in maps {
        let m = if (m.height, m.width) == (h, w) {
            m.clone()
        } else {
            m.area_pool(h, w)?
        };
        data.extend(m.data.iter().map(|&v| T::of(v)));
    }
    Ok(Tensor::from_vec([maps.len(), 1, h, w], data)?)
}

fn gather<T: Float>(grads: &mut pgcycle_autograd::Gradients<T>, bound: &Bound<'_, T>) -> Vec<Option<Tensor<T>>> {
    bound.vars().iter().map(|&v| grads.take(v)).collect()
}

fn scalar<T: Float>(v: Var<'_, T>) -> f64 {
    v.item().as_f64()
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug)]
pub struct TrainState<T: Float> {
    pub config: TrainConfig,
    pub iteration: u64,
    pub epoch: u64,
    /// One shared generator, or one per cascade stage.
    pub g: Vec<ParameterSet<T>>,
    pub f: Vec<ParameterSet<T>>,
    pub dx: ParameterSet<T>,
    pub dy: ParameterSet<T>,
    g_opt: Vec<Adam<T>>,
    f_opt: Vec<Adam<T>>,
    dx_opt: Adam<T>,
    dy_opt: Adam<T>,
    pub replay: ReplayBuffer<T>,
    vgg: Arc<Vgg16<T>>,
}

impl<T: Float> PartialEq for TrainState<T> {
    fn eq(&self, o: &Self) -> bool {
        self.config == o.config
            && self.iteration == o.iteration
            && self.epoch == o.epoch
            && self.g == o.g
            && self.f == o.f
            && self.dx == o.dx
            && self.dy == o.dy
            && self.g_opt == o.g_opt
            && self.f_opt == o.f_opt
            && self.dx_opt == o.dx_opt
            && self.dy_opt == o.dy_opt
            && self.replay == o.replay
    }
}

impl<T: Float> TrainState<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let stages = if config.per_stage_weights { 3 } else { 1 };
        let gens = |net| {
            (0..stages)
                .map(|s| ParameterSet::init(generator_spec(&config), init_seed(&config, net, s)))
                .collect::<Result<Vec<_>>>()
        };
        let g = gens(NET_G)?;
        let f = gens(NET_F)?;
        let dx = ParameterSet::init(disc_x_spec(&config), init_seed(&config, NET_DX, 0))?;
        let dy = ParameterSet::init(disc_y_spec(&config), init_seed(&config, NET_DY, 0))?;
        let betas = config.adam_betas;
        Ok(Self {
            iteration: 0,
            epoch: 0,
            g_opt: g.iter().map(|p| Adam::new(p, betas)).collect(),
            f_opt: f.iter().map(|p| Adam::new(p, betas)).collect(),
            dx_opt: Adam::new(&dx, betas),
            dy_opt: Adam::new(&dy, betas),
            replay: ReplayBuffer::new(config.replay_buffer),
            vgg: Arc::new(build_extractor(&config)?),
            g,
            f,
            dx,
            dy,
            config,
        })
    }

    pub fn extractor(&self) -> &Vgg16<T> {
        &self.vgg
    }

    /// Prior weights matching a score map of `h × w`.
    fn score_weights(&self, maps: &[PriorMap], h: usize, w: usize) -> Result<Tensor<T>> {
        stack_maps(maps, h, w).map_err(|_| {
            Error::Shape(format!(
                "score-mode prior weighting cannot map {}x{} prior maps onto a {h}x{w} score map \
                 (block averaging needs the score map to divide the crop size)",
                maps[0].height, maps[0].width
            ))
        })
    }

    /// One update of G and F (jointly), then D_Y, then D_X. Crops are UNIT
    /// images; prior maps come from them.
    pub fn train_step(&mut self, foggy: &[Image], clean: &[Image]) -> Result<LossReport> {
        let cfg = self.config.clone();
        let lr_g = lr_at(&cfg, self.epoch.min(cfg.epochs))?;
        let lr_d = lr_g * cfg.disc_lr() / cfg.lr;
        let symm = |imgs: &[Image]| stack_images::<T>(&imgs.iter().map(Image::to_symm).collect::<Vec<_>>());
        let x_t = symm(foggy)?;
        let y_t = symm(clean)?;
        let pm_x = foggy.iter().map(prior_map).collect::<Result<Vec<_>>>()?;
        let pm_y = clean.iter().map(prior_map).collect::<Result<Vec<_>>>()?;
        let [_, _, h, w] = x_t.dims();
        if y_t.dims()[2..] != [h, w] {
            return Err(Error::Shape(format!("foggy crops {:?} vs clean crops {:?}", x_t.dims(), y_t.dims())));
        }
        let pm_x_t = stack_maps::<T>(&pm_x, h, w)?;
        let pm_y_t = stack_maps::<T>(&pm_y, h, w)?;
        let mut terms = LossTerms::default();

        // generators
        let (g_grads, f_grads, fake_y, fake_x) = {
            let g = Graph::new();
            let gb: Vec<_> = self.g.iter().map(|p| p.bind(&g, true)).collect();
            let fb: Vec<_> = self.f.iter().map(|p| p.bind(&g, true)).collect();
            let dxb = self.dx.bind(&g, false);
            let dyb = self.dy.bind(&g, false);
            let x = g.constant(x_t.clone());
            let y = g.constant(y_t.clone());
            let pmx = g.constant(pm_x_t.clone());
            let pmy = g.constant(pm_y_t);
            let fake_y = translate(&gb, x, cfg.coarse_to_fine)?;
            let rec_x = translate(&fb, fake_y, cfg.coarse_to_fine)?;
            let fake_x = translate(&fb, y, cfg.coarse_to_fine)?;
            let rec_y = translate(&gb, fake_x, cfg.coarse_to_fine)?;

            let l_cyc = cycle_loss(x, rec_x, y, rec_y)?;
            let l_pgcyc = if cfg.use_pgcyc {
                Some(pg_cycle_loss(x, rec_x, y, rec_y, pmx, pmy)?)
            } else {
                None
            };
            let l_vgg = perceptual_loss(&g, &self.vgg, x, rec_x, y, rec_y)?;
            let l_pg_g = match cfg.prior_weighting {
                PriorWeighting::Score => {
                    let s = discriminator_forward(&dyb, fake_y)?;
                    let [_, _, sh, sw] = s.dims();
                    let wts = g.constant(self.score_weights(&pm_x, sh, sw)?);
                    pg_gan_generator_loss(s, wts)?
                }
                PriorWeighting::Input => lsgan_generator_loss(discriminator_forward(&dyb, fake_y.mul(pmx)?)?),
                PriorWeighting::None => lsgan_generator_loss(discriminator_forward(&dyb, fake_y)?),
            };
            let l_gan_f = lsgan_generator_loss(discriminator_forward(&dxb, fake_x)?);

            let mut recon = l_cyc.add(l_vgg)?;
            if let Some(p) = l_pgcyc {
                recon = recon.add(p)?;
            }
            let total = recon.affine(cfg.lambda1, 0.0).add(l_pg_g.add(l_gan_f)?.affine(cfg.lambda2, 0.0))?;
            terms.l_cyc = scalar(l_cyc);
            terms.l_pgcyc = l_pgcyc.map_or(0.0, scalar);
            terms.l_vgg = scalar(l_vgg);
            terms.l_pg_g = scalar(l_pg_g);
            terms.l_gan_f = scalar(l_gan_f);
            if !scalar(total).is_finite() {
                return Err(Error::NonFinite(format!(
                    "generator loss at iteration {}: {terms:?}",
                    self.iteration + 1
                )));
            }
            let mut grads = g.backward(total)?;
            let g_grads: Vec<_> = gb.iter().map(|b| gather(&mut grads, b)).collect();
            let f_grads: Vec<_> = fb.iter().map(|b| gather(&mut grads, b)).collect();
            (g_grads, f_grads, fake_y.value(), fake_x.value())
        };

        // clean-side discriminator on the current fakes
        let dy_grads = {
            let g = Graph::new();
            let dyb = self.dy.bind(&g, true);
            let real = discriminator_forward(&dyb, g.constant(y_t))?;
            let fy = g.leaf(fake_y, false);
            let loss = match cfg.prior_weighting {
                PriorWeighting::Score => {
                    let s = discriminator_forward(&dyb, fy)?;
                    let [_, _, sh, sw] = s.dims();
                    let wts = g.constant(self.score_weights(&pm_x, sh, sw)?);
                    pg_gan_discriminator_loss(real, s, wts)?
                }
                PriorWeighting::Input => {
                    let weighted = fy.mul(g.constant(pm_x_t))?;
                    lsgan_discriminator_loss(real, discriminator_forward(&dyb, weighted)?)?
                }
                PriorWeighting::None => lsgan_discriminator_loss(real, discriminator_forward(&dyb, fy)?)?,
            };
            terms.l_dy = scalar(loss);
            let mut grads = g.backward(loss)?;
            gather(&mut grads, &dyb)
        };

        // foggy-side discriminator, fakes drawn through the replay buffer
        let shown = self.replay.query(
            &fake_x,
            &mut derived_rng(cfg.seed, PURPOSE_REPLAY, self.iteration, 0),
        )?;
        let dx_grads = {
            let g = Graph::new();
            let dxb = self.dx.bind(&g, true);
            let real = discriminator_forward(&dxb, g.constant(x_t))?;
            let fake = discriminator_forward(&dxb, g.constant(shown))?;
            let loss = lsgan_discriminator_loss(real, fake)?;
            terms.l_dx = scalar(loss);
            let mut grads = g.backward(loss)?;
            gather(&mut grads, &dxb)
        };

        let report = total_loss(terms, cfg.lambda1, cfg.lambda2)
            .map_err(|e| Error::NonFinite(format!("iteration {}: {e}", self.iteration + 1)))?;

        for ((p, opt), grads) in self.g.iter_mut().zip(&mut self.g_opt).zip(&g_grads) {
            opt.update(p, grads, lr_g)?;
        }
        for ((p, opt), grads) in self.f.iter_mut().zip(&mut self.f_opt).zip(&f_grads) {
            opt.update(p, grads, lr_g)?;
        }
        self.dy_opt.update(&mut self.dy, &dy_grads, lr_d)?;
        self.dx_opt.update(&mut self.dx, &dx_grads, lr_d)?;
        let nets = self.g.iter().chain(&self.f).chain([&self.dx, &self.dy]);
        if nets.into_iter().any(|p| !p.all_finite()) {
            return Err(Error::NonFinite(format!(
                "parameters after iteration {}",
                self.iteration + 1
            )));
        }
        self.iteration += 1;
        Ok(report)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.metadata.insert("config".into(), self.config.to_json());
        c.metadata.insert("iteration".into(), self.iteration.to_string());
        c.metadata.insert("epoch".into(), self.epoch.to_string());
        c.metadata.insert("generator_stages".into(), self.g.len().to_string());
        c.metadata.insert("dtype".into(), T::DTYPE.to_string());
        for (net, params, opts) in [("G", &self.g, &self.g_opt), ("F", &self.f, &self.f_opt)] {
            for (i, (p, o)) in params.iter().zip(opts).enumerate() {
                let prefix = format!("{net}.{i}");
                p.save_into(&mut c, &prefix);
                o.save_into(&mut c, &prefix, p);
            }
        }
        for (prefix, p, o) in [("DX", &self.dx, &self.dx_opt), ("DY", &self.dy, &self.dy_opt)] {
            p.save_into(&mut c, prefix);
            o.save_into(&mut c, prefix, p);
        }
        self.replay.save_into(&mut c, "replay");
        c
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let config = TrainConfig::from_json(c.meta("config")?)?;
        let stages: usize = c.meta_parse("generator_stages")?;
        let betas = config.adam_betas;
        let mut nets = Vec::new();
        for net in ["G", "F"] {
            let mut params = Vec::new();
            let mut opts = Vec::new();
            for i in 0..stages {
                let prefix = format!("{net}.{i}");
                let p = ParameterSet::load_from(c, &prefix)?;
                opts.push(Adam::load_from(c, &prefix, &p, betas)?);
                params.push(p);
            }
            nets.push((params, opts));
        }
        let (f, f_opt) = nets.pop().expect("two generators");
        let (g, g_opt) = nets.pop().expect("two generators");
        let dx = ParameterSet::load_from(c, "DX")?;
        let dy = ParameterSet::load_from(c, "DY")?;
        Ok(Self {
            iteration: c.meta_parse("iteration")?,
            epoch: c.meta_parse("epoch")?,
            dx_opt: Adam::load_from(c, "DX", &dx, betas)?,
            dy_opt: Adam::load_from(c, "DY", &dy, betas)?,
            replay: ReplayBuffer::load_from(c, "replay", config.replay_buffer)?,
            vgg: Arc::new(build_extractor(&config)?),
            g,
            f,
            g_opt,
            f_opt,
            dx,
            dy,
            config,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Whether `config` describes the same networks as this state.
    pub fn compatible_with(&self, config: &TrainConfig) -> bool {
        let stages = if config.per_stage_weights { 3 } else { 1 };
        self.g.len() == stages
            && self.g.iter().chain(&self.f).all(|p| *p.spec() == generator_spec(config))
            && *self.dx.spec() == disc_x_spec(config)
            && *self.dy.spec() == disc_y_spec(config)
    }
}
