use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::assignment::{argmax, update_prior, MixturePrior, SoftAssignment};
use super::config::EmConfig;
use super::loss::{discriminator_loss, enet_loss, generator_loss, realfake_loss};
use super::trace::{IterationMetrics, MetricsTrace};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::eval::{classification_error, clustering_error};
use crate::models::{Discriminator, ENet, Generator, ModelConfig};
use crate::nn::{bind, clip_weights, DecayMode, Parameterized, RmsProp};
use crate::rng::{stream, Stream};

/// Indices into the data set whose true class is revealed, with those classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSubset {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
}

impl LabeledSubset {
    pub fn new(indices: Vec<usize>, labels: Vec<usize>) -> Result<Self> {
        if indices.len() != labels.len() || indices.is_empty() {
            return Err(Error::invalid("labeled subset needs matching, nonempty indices and labels"));
        }
        Ok(Self { indices, labels })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `θ = {ψ_G, ψ_D, φ}` plus the E-net parameters `η`, which are carried
/// alongside but are not part of `θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaState {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub prior: MixturePrior,
    pub enet: ENet,
}

impl ThetaState {
    pub fn init(config: &EmConfig, model: &ModelConfig, data_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let k = config.classes;
        Ok(Self {
            generator: Generator::init(model, k, data_dim, rng)?,
            discriminator: Discriminator::init(model, k, data_dim, rng)?,
            prior: MixturePrior::uniform(k)?,
            enet: ENet::init(model, k, data_dim, rng)?,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MStepStats {
    pub loss_g: Option<f64>,
    pub loss_d: Option<f64>,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EStepStats {
    pub w: SoftAssignment,
    pub loss_e: Option<f64>,
    /// Conditioning classes drawn for the E-net batches, in order.
    pub sampled_classes: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SuperviseStats {
    pub steps: usize,
    pub labeled_error: f64,
}

/// Mutable training context of one EM run.
pub struct GanEm {
    pub config: EmConfig,
    pub model: ModelConfig,
    pub state: ThetaState,
    opt_g: RmsProp,
    opt_d: RmsProp,
    opt_e: RmsProp,
    init_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    uniform_rng: ChaCha8Rng,
    prior_rng: ChaCha8Rng,
    shuffle_rng: ChaCha8Rng,
}

fn gradients(g: &Graph, loss: Var, params: &[Var]) -> Result<Vec<Tensor>> {
    let grads = g.backward(loss)?;
    Ok(params.iter().map(|&p| grads.wrt(p)).collect())
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

impl GanEm {
    pub fn new(config: EmConfig, model: ModelConfig, data_dim: usize) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        if data_dim == 0 {
            return Err(Error::invalid("data dimension must be positive"));
        }
        let seed = config.seed;
        let mut init_rng = stream(seed, Stream::Init);
        let state = ThetaState::init(&config, &model, data_dim, &mut init_rng)?;
        let opt = |lr| RmsProp::for_mode(lr, config.rms_decay, config.rms_epsilon, config.decay_mode);
        Ok(Self {
            opt_g: opt(config.lr_generator)?,
            opt_d: opt(config.lr_discriminator)?,
            opt_e: opt(config.lr_enet)?,
            init_rng,
            noise_rng: stream(seed, Stream::Noise),
            uniform_rng: stream(seed, Stream::UniformClasses),
            prior_rng: stream(seed, Stream::PriorClasses),
            shuffle_rng: stream(seed, Stream::Shuffle),
            config,
            model,
            state,
        })
    }

    fn uniform_classes(&mut self, n: usize) -> Vec<usize> {
        let k = self.config.classes;
        (0..n).map(|_| self.uniform_rng.random_range(0..k)).collect()
    }

    fn noise(&mut self, n: usize) -> Tensor {
        self.model.noise.sample(n, self.model.noise_dim, &mut self.noise_rng)
    }

    fn check_data(&self, data: &Tensor) -> Result<usize> {
        let (n, d) = data.dims2().ok_or_else(|| Error::invalid("data must be an N x d matrix"))?;
        if d != self.state.generator.data_dim() {
            return Err(Error::ShapeMismatch {
                op: "gan_em",
                lhs: data.shape().to_vec(),
                rhs: vec![n, self.state.generator.data_dim()],
            });
        }
        Ok(n)
    }

    fn discriminator_step(&mut self, real: &Tensor, w: &Tensor) -> Result<f64> {
        let b = real.rows();
        let z = self.noise(b);
        let c = self.uniform_classes(b);
        let fake = self.state.generator.generate_batch(&z, &c)?;

        let d = &self.state.discriminator;
        let mut g = Graph::new();
        let params = bind(&mut g, d, true);
        let xr = g.constant(real.clone());
        let xf = g.constant(fake);
        let lr = d.forward(&mut g, &params, xr)?;
        let lf = d.forward(&mut g, &params, xf)?;
        let mut loss = discriminator_loss(&mut g, lr, w, lf)?;
        let report = g.value(loss).data()[0];
        if self.config.realfake_weight > 0.0 {
            let rf = realfake_loss(&mut g, lr, lf, self.config.classes)?;
            let rf = g.scale(rf, self.config.realfake_weight)?;
            loss = g.add(loss, rf)?;
        }
        let grads = gradients(&g, loss, &params)?;
        let d = &mut self.state.discriminator;
        self.opt_d.step(&mut d.parameters_mut(), &grads)?;
        if self.config.clip_discriminator {
            clip_weights(&mut d.parameters_mut(), self.config.clip)?;
        }
        Ok(report)
    }

    fn generator_step(&mut self, b: usize) -> Result<f64> {
        let z = self.noise(b);
        let c = self.uniform_classes(b);
        let (gen, d) = (&self.state.generator, &self.state.discriminator);
        let mut g = Graph::new();
        let gp = bind(&mut g, gen, true);
        let dp = bind(&mut g, d, false);
        let zv = g.constant(z);
        let xf = gen.forward(&mut g, &gp, zv, &c)?;
        let lf = d.forward(&mut g, &dp, xf)?;
        let loss = generator_loss(&mut g, lf, &c)?;
        let report = g.value(loss).data()[0];
        let grads = gradients(&g, loss, &gp)?;
        let gen = &mut self.state.generator;
        self.opt_g.step(&mut gen.parameters_mut(), &grads)?;
        clip_weights(&mut gen.parameters_mut(), self.config.clip)?;
        Ok(report)
    }

    /// Updates `φ` from `w`, then runs `m_epochs` passes over the shuffled
    /// real data, alternating one discriminator and one generator step per
    /// minibatch. Generator weights are clipped after every generator step.
    pub fn m_step(&mut self, data: &Tensor, w: &SoftAssignment) -> Result<MStepStats> {
        let n = self.check_data(data)?;
        if w.rows() != n || w.classes() != self.config.classes {
            return Err(Error::InvalidAssignment(format!(
                "w is {} x {}, data has {n} rows and K = {}",
                w.rows(),
                w.classes(),
                self.config.classes
            )));
        }
        self.state.prior = update_prior(w)?;
        let (mut lg, mut ld) = (Vec::new(), Vec::new());
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..self.config.m_epochs {
            order.shuffle(&mut self.shuffle_rng);
            for batch in order.chunks(self.config.m_batch) {
                let real = data.select_rows(batch)?;
                let wb = w.select_rows(batch)?;
                ld.push(self.discriminator_step(&real, &wb)?);
                lg.push(self.generator_step(batch.len())?);
            }
            if self.config.decay_mode == DecayMode::LearningRateSchedule {
                self.opt_g.learning_rate *= self.config.rms_decay;
                self.opt_d.learning_rate *= self.config.rms_decay;
            }
        }
        Ok(MStepStats {
            loss_g: mean(&lg),
            loss_d: mean(&ld),
            steps: lg.len(),
        })
    }

    fn enet_step(&mut self, x: Tensor, classes: &[usize]) -> Result<f64> {
        let e = &self.state.enet;
        let mut g = Graph::new();
        let params = bind(&mut g, e, true);
        let xv = g.constant(x);
        let logits = e.forward_logits(&mut g, &params, xv)?;
        let loss = enet_loss(&mut g, logits, classes)?;
        let report = g.value(loss).data()[0];
        let grads = gradients(&g, loss, &params)?;
        self.opt_e.step(&mut self.state.enet.parameters_mut(), &grads)?;
        Ok(report)
    }

    /// Trains the E-net on `(G(z, c), c)` with `c ∼ φ`, then predicts `w` on
    /// the real data.
    pub fn e_step(&mut self, data: &Tensor) -> Result<EStepStats> {
        let n = self.check_data(data)?;
        if !self.config.enet_warm_start {
            let d = self.state.generator.data_dim();
            self.state.enet = ENet::init(&self.model, self.config.classes, d, &mut self.init_rng)?;
            self.opt_e = RmsProp::for_mode(
                self.opt_e.learning_rate,
                self.config.rms_decay,
                self.config.rms_epsilon,
                self.config.decay_mode,
            )?;
        }
        let steps = self.config.e_steps_for(n);
        let b = self.config.e_batch;
        let mut losses = Vec::with_capacity(steps);
        let mut sampled = Vec::with_capacity(steps * b);
        for _ in 0..steps {
            let c = self.state.prior.sample(b, &mut self.prior_rng);
            let z = self.noise(b);
            let x = self.state.generator.generate_batch(&z, &c)?;
            losses.push(self.enet_step(x, &c)?);
            sampled.extend_from_slice(&c);
        }
        if self.config.decay_mode == DecayMode::LearningRateSchedule {
            self.opt_e.learning_rate *= self.config.rms_decay;
        }
        let w = SoftAssignment::new(self.state.enet.predict(data)?)?;
        Ok(EStepStats {
            w,
            loss_e: mean(&losses),
            sampled_classes: sampled,
        })
    }

    /// Labeled-set error of the current E-net.
    pub fn labeled_error(&self, data: &Tensor, labeled: &LabeledSubset) -> Result<f64> {
        let x = data.select_rows(&labeled.indices)?;
        let probs = self.state.enet.predict(&x)?;
        let pred: Vec<usize> = (0..probs.rows()).map(|i| argmax(probs.row(i))).collect();
        classification_error(&pred, &labeled.labels)
    }

    /// Fine-tunes the E-net on labeled reals. The labeled error is checked
    /// before every step, and training stops as soon as it is at most
    /// `epsilon` or after `supervise_max_steps` steps.
    pub fn supervise(&mut self, data: &Tensor, labeled: &LabeledSubset) -> Result<SuperviseStats> {
        self.check_data(data)?;
        if let Some(&bad) = labeled.labels.iter().find(|&&c| c >= self.config.classes) {
            return Err(Error::invalid(format!("label {bad} out of range for K = {}", self.config.classes)));
        }
        let mut order: Vec<usize> = (0..labeled.len()).collect();
        let mut steps = 0;
        loop {
            let err = self.labeled_error(data, labeled)?;
            if err <= self.config.epsilon || steps >= self.config.supervise_max_steps {
                return Ok(SuperviseStats {
                    steps,
                    labeled_error: err,
                });
            }
            order.shuffle(&mut self.shuffle_rng);
            let batch = &order[..order.len().min(self.config.e_batch)];
            let rows: Vec<usize> = batch.iter().map(|&i| labeled.indices[i]).collect();
            let classes: Vec<usize> = batch.iter().map(|&i| labeled.labels[i]).collect();
            self.enet_step(data.select_rows(&rows)?, &classes)?;
            steps += 1;
        }
    }

    /// Full loop from uniform `w`. `observe` sees the trainer, the metrics
    /// row and the assignment after every iteration, and once before the first.
    pub fn run_observed(
        &mut self,
        data: &Tensor,
        truth: Option<&[usize]>,
        labeled: Option<&LabeledSubset>,
        mut observe: impl FnMut(&GanEm, &IterationMetrics, &SoftAssignment),
    ) -> Result<(SoftAssignment, MetricsTrace)> {
        let n = self.check_data(data)?;
        if n == 0 {
            return Err(Error::invalid("no data"));
        }
        if let Some(t) = truth {
            if t.len() != n {
                return Err(Error::invalid(format!("{} truth labels for {n} samples", t.len())));
            }
        }
        let k = self.config.classes;
        let mut w = SoftAssignment::uniform(n, k)?;
        let mut trace = MetricsTrace::default();
        let score = |w: &SoftAssignment| -> Result<(Option<f64>, Option<f64>)> {
            let Some(t) = truth else { return Ok((None, None)) };
            let hard = w.hard_labels();
            let clus = clustering_error(&hard, t, k)?.error;
            let class = if labeled.is_some() {
                Some(classification_error(&hard, t)?)
            } else {
                None
            };
            Ok((Some(clus), class))
        };
        let (ce, cls) = score(&w)?;
        let row = IterationMetrics {
            iteration: 0,
            loss_g: None,
            loss_d: None,
            loss_e: None,
            phi: self.state.prior.probs().to_vec(),
            clustering_error: ce,
            labeled_error: None,
            classification_error: cls,
            supervised_steps: 0,
        };
        observe(self, &row, &w);
        trace.push(row);
        for it in 1..=self.config.iterations {
            let m = self.m_step(data, &w)?;
            let e = self.e_step(data)?;
            w = e.w;
            let mut sup = None;
            if let Some(l) = labeled {
                let s = self.supervise(data, l)?;
                w = SoftAssignment::new(self.state.enet.predict(data)?)?;
                sup = Some(s);
            }
            let (ce, cls) = score(&w)?;
            let row = IterationMetrics {
                iteration: it,
                loss_g: m.loss_g,
                loss_d: m.loss_d,
                loss_e: e.loss_e,
                phi: self.state.prior.probs().to_vec(),
                clustering_error: ce,
                labeled_error: sup.map(|s| s.labeled_error),
                classification_error: cls,
                supervised_steps: sup.map(|s| s.steps).unwrap_or(0),
            };
            observe(self, &row, &w);
            trace.push(row);
        }
        Ok((w, trace))
    }
}

/// Result of [`run_gan_em`].
pub struct RunOutput {
    pub state: ThetaState,
    pub assignment: SoftAssignment,
    pub trace: MetricsTrace,
}

/// Runs the whole GAN-EM loop on the rows of `data`.
pub fn run_gan_em(
    data: &Tensor,
    truth: Option<&[usize]>,
    config: &EmConfig,
    model: &ModelConfig,
    labeled: Option<&LabeledSubset>,
) -> Result<RunOutput> {
    let d = data.dims2().ok_or_else(|| Error::invalid("data must be an N x d matrix"))?.1;
    let mut em = GanEm::new(config.clone(), model.clone(), d)?;
    let (assignment, trace) = em.run_observed(data, truth, labeled, |_, _, _| {})?;
    Ok(RunOutput {
        state: em.state,
        assignment,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn tiny() -> (EmConfig, ModelConfig, Tensor) {
        let config = EmConfig {
            classes: 2,
            iterations: 2,
            m_epochs: 1,
            e_iterations: Some(3),
            m_batch: 8,
            e_batch: 16,
            seed: 3,
            ..Default::default()
        };
        let model = ModelConfig {
            noise_dim: 2,
            generator_hidden: vec![8],
            discriminator_hidden: vec![8],
            enet_hidden: vec![8],
            generator_output: Activation::Identity,
            ..Default::default()
        };
        let mut rng = stream(9, Stream::Data);
        let data = (0..40 * 2).map(|i| if i < 40 { -1.0 } else { 1.0 } + rng.random_range(-0.1..0.1)).collect();
        (config, model, Tensor::matrix(40, 2, data).unwrap())
    }

    #[test]
    fn zero_iterations_keep_uniform_w() {
        let (mut c, m, x) = tiny();
        c.iterations = 0;
        let out = run_gan_em(&x, None, &c, &m, None).unwrap();
        assert_eq!(out.assignment, SoftAssignment::uniform(40, 2).unwrap());
        assert_eq!(out.trace.rows.len(), 1);
    }

    #[test]
    fn zero_epochs_only_move_prior() {
        let (mut c, m, x) = tiny();
        c.m_epochs = 0;
        let mut em = GanEm::new(c, m, 2).unwrap();
        let before = em.state.clone();
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 30)).collect();
        let w = SoftAssignment::one_hot(&labels, 2).unwrap();
        em.m_step(&x, &w).unwrap();
        assert_eq!(em.state.generator, before.generator);
        assert_eq!(em.state.discriminator, before.discriminator);
        assert_eq!(em.state.prior.probs(), &[0.75, 0.25]);
    }

    #[test]
    fn clip_holds_after_m_step_and_rows_valid() {
        let (c, m, x) = tiny();
        let clip = c.clip;
        let mut em = GanEm::new(c, m, 2).unwrap();
        em.run_observed(&x, None, None, |em, row, w| {
            if row.iteration > 0 {
                let max = em.state.generator.parameters().iter().map(|t| t.max_abs()).fold(0.0, f64::max);
                assert!(max <= clip);
            }
            for i in 0..w.rows() {
                assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        })
        .unwrap();
    }

    #[test]
    fn reruns_are_identical() {
        let (c, m, x) = tiny();
        let a = run_gan_em(&x, None, &c, &m, None).unwrap();
        let b = run_gan_em(&x, None, &c, &m, None).unwrap();
        assert_eq!(a.trace.to_csv_string().unwrap(), b.trace.to_csv_string().unwrap());
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn one_hot_prior_only_samples_that_class() {
        let (c, m, x) = tiny();
        let mut em = GanEm::new(c, m, 2).unwrap();
        let w = SoftAssignment::one_hot(&[1; 40], 2).unwrap();
        em.m_step(&x, &w).unwrap();
        let e = em.e_step(&x).unwrap();
        assert!(e.sampled_classes.iter().all(|&c| c == 1));
    }

    #[test]
    fn supervision_stops_at_epsilon() {
        let (mut c, m, x) = tiny();
        c.supervise_max_steps = 500;
        c.lr_enet = 0.01;
        let mut em = GanEm::new(c.clone(), m, 2).unwrap();
        let labeled = LabeledSubset::new(vec![0, 1, 38, 39], vec![0, 0, 1, 1]).unwrap();
        let s = em.supervise(&x, &labeled).unwrap();
        assert!(s.labeled_error <= c.epsilon);
        assert!(s.steps < 500);
        let again = em.supervise(&x, &labeled).unwrap();
        assert_eq!(again.steps, 0);
    }

    #[test]
    fn mismatched_data_rejected() {
        let (c, m, x) = tiny();
        let mut em = GanEm::new(c, m, 3).unwrap();
        assert!(em.e_step(&x).is_err());
        let w = SoftAssignment::uniform(40, 2).unwrap();
        assert!(em.m_step(&x, &w).is_err());
    }
}
