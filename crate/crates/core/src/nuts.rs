//! No-U-Turn Hamiltonian Monte Carlo with multinomial trajectory sampling.
//!
//! The potential is an [`Objective`] (`U = -log target`). Trajectories are
//! grown by repeated doubling in a random direction until the generalized
//! no-U-turn criterion fires (checked on the whole tree and across the two
//! halves of every merge) or the maximum depth is reached. During warmup the
//! step size follows dual averaging toward the acceptance target, and a
//! diagonal inverse mass is estimated over doubling windows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::Objective;

/// Energy error beyond which a transition is flagged divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NutsSettings {
    pub n_iterations: usize,
    pub n_warmup: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
    pub initial_step_size: f64,
}

impl Default for NutsSettings {
    fn default() -> Self {
        NutsSettings {
            n_iterations: 1000,
            n_warmup: 500,
            target_accept: 0.95,
            max_tree_depth: 10,
            seed: 0,
            initial_step_size: 1.0,
        }
    }
}

impl NutsSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_warmup >= self.n_iterations {
            return Err(Error::domain(format!(
                "n_warmup ({}) must be below n_iterations ({})",
                self.n_warmup, self.n_iterations
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::domain("target_accept must lie in (0, 1)"));
        }
        if self.max_tree_depth == 0 {
            return Err(Error::domain("max_tree_depth must be at least 1"));
        }
        if !(self.initial_step_size > 0.0) || !self.initial_step_size.is_finite() {
            return Err(Error::domain("initial_step_size must be positive"));
        }
        Ok(())
    }
}

/// Post-warmup output of [`run_nuts`], in the sampler's own coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub positions: Vec<Vec<f64>>,
    pub potentials: Vec<f64>,
    pub accept_stat: Vec<f64>,
    pub tree_depth: Vec<usize>,
    pub n_leapfrog: Vec<usize>,
    pub divergent: Vec<bool>,
    pub step_size: f64,
    pub inv_mass_diag: Vec<f64>,
}

impl Trace {
    pub fn n_divergent(&self) -> usize {
        self.divergent.iter().filter(|d| **d).count()
    }
}

/// Position, momentum, potential and potential gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub potential: f64,
    pub grad: Vec<f64>,
}

impl PhasePoint {
    pub fn new<O: Objective + ?Sized>(target: &O, q: Vec<f64>, p: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let potential = eval_potential(target, &q, &mut grad);
        PhasePoint {
            q,
            p,
            potential,
            grad,
        }
    }

    pub fn kinetic(&self, inv_mass: &[f64]) -> f64 {
        0.5 * self
            .p
            .iter()
            .zip(inv_mass)
            .map(|(p, m)| p * p * m)
            .sum::<f64>()
    }

    pub fn hamiltonian(&self, inv_mass: &[f64]) -> f64 {
        let h = self.potential + self.kinetic(inv_mass);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }
}

fn eval_potential<O: Objective + ?Sized>(target: &O, q: &[f64], grad: &mut [f64]) -> f64 {
    let u = target.value_grad(q, grad);
    if u.is_nan() || grad.iter().any(|g| !g.is_finite()) {
        f64::INFINITY
    } else {
        u
    }
}

/// One leapfrog step: half kick, drift, half kick.
pub fn leapfrog_step<O: Objective + ?Sized>(
    target: &O,
    z: &PhasePoint,
    eps: f64,
    inv_mass: &[f64],
) -> PhasePoint {
    let half: Vec<f64> = z
        .p
        .iter()
        .zip(&z.grad)
        .map(|(p, g)| p - 0.5 * eps * g)
        .collect();
    let q: Vec<f64> = z
        .q
        .iter()
        .zip(&half)
        .zip(inv_mass)
        .map(|((q, p), m)| q + eps * m * p)
        .collect();
    let mut grad = vec![0.0; q.len()];
    let potential = eval_potential(target, &q, &mut grad);
    let p = half
        .iter()
        .zip(&grad)
        .map(|(p, g)| p - 0.5 * eps * g)
        .collect();
    PhasePoint {
        q,
        p,
        potential,
        grad,
    }
}

/// Leapfrog step on bare position and momentum vectors.
pub fn leapfrog<O: Objective + ?Sized>(
    q: &[f64],
    p: &[f64],
    eps: f64,
    target: &O,
    inv_mass: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let z = PhasePoint::new(target, q.to_vec(), p.to_vec());
    let next = leapfrog_step(target, &z, eps, inv_mass);
    (next.q, next.p)
}

/// Fresh momentum with `p_i ~ N(0, 1 / inv_mass_i)`.
pub fn momentum_refresh<R: Rng + ?Sized>(rng: &mut R, inv_mass_diag: &[f64]) -> Vec<f64> {
    inv_mass_diag
        .iter()
        .map(|m| {
            let z: f64 = StandardNormal.sample(rng);
            z / m.sqrt()
        })
        .collect()
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let max = a.max(b);
    max + ((a - max).exp() + (b - max).exp()).ln()
}

fn mul_inv_mass(p: &[f64], inv_mass: &[f64]) -> Vec<f64> {
    p.iter().zip(inv_mass).map(|(p, m)| p * m).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Generalized no-U-turn criterion: keep going while both end velocities
/// still point along the summed momentum.
fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

/// Boundary data of a subtree, in integration order.
struct Subtree {
    p_sharp_beg: Vec<f64>,
    p_sharp_end: Vec<f64>,
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
    rho: Vec<f64>,
    log_sum_weight: f64,
    proposal: PhasePoint,
}

/// Per-transition accumulators.
struct Accum {
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

struct Integrator<'a, O: ?Sized> {
    target: &'a O,
    eps: f64,
    inv_mass: &'a [f64],
    h0: f64,
}

impl<O: Objective + ?Sized> Integrator<'_, O> {
    /// Builds a subtree of `depth` from `z` (advanced in place to the far edge).
    /// Returns `None` when the subtree diverged or turned.
    fn build_tree<R: Rng>(
        &self,
        depth: usize,
        z: &mut PhasePoint,
        direction: f64,
        acc: &mut Accum,
        rng: &mut R,
    ) -> Option<Subtree> {
        if depth == 0 {
            *z = leapfrog_step(self.target, z, direction * self.eps, self.inv_mass);
            acc.n_leapfrog += 1;
            let h = z.hamiltonian(self.inv_mass);
            if h - self.h0 > DIVERGENCE_THRESHOLD {
                acc.divergent = true;
                return None;
            }
            let delta = self.h0 - h;
            acc.sum_metro_prob += if delta > 0.0 { 1.0 } else { delta.exp() };
            let p_sharp = mul_inv_mass(&z.p, self.inv_mass);
            return Some(Subtree {
                p_sharp_beg: p_sharp.clone(),
                p_sharp_end: p_sharp,
                p_beg: z.p.clone(),
                p_end: z.p.clone(),
                rho: z.p.clone(),
                log_sum_weight: delta,
                proposal: z.clone(),
            });
        }
        let init = self.build_tree(depth - 1, z, direction, acc, rng)?;
        let fin = self.build_tree(depth - 1, z, direction, acc, rng)?;

        let log_sum_weight = log_sum_exp(init.log_sum_weight, fin.log_sum_weight);
        let take_final = if fin.log_sum_weight > log_sum_weight {
            true
        } else {
            rng.random::<f64>() < (fin.log_sum_weight - log_sum_weight).exp()
        };
        let rho = add(&init.rho, &fin.rho);
        let persist = no_u_turn(&init.p_sharp_beg, &fin.p_sharp_end, &rho)
            && no_u_turn(
                &init.p_sharp_beg,
                &fin.p_sharp_beg,
                &add(&init.rho, &fin.p_beg),
            )
            && no_u_turn(
                &init.p_sharp_end,
                &fin.p_sharp_end,
                &add(&fin.rho, &init.p_end),
            );
        if !persist {
            return None;
        }
        Some(Subtree {
            p_sharp_beg: init.p_sharp_beg,
            p_sharp_end: fin.p_sharp_end,
            p_beg: init.p_beg,
            p_end: fin.p_end,
            rho,
            log_sum_weight,
            proposal: if take_final {
                fin.proposal
            } else {
                init.proposal
            },
        })
    }
}

/// Result of one NUTS transition.
#[derive(Debug, Clone)]
pub struct Transition {
    pub point: PhasePoint,
    pub accept_stat: f64,
    pub depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
}

/// One multinomial NUTS transition from `current` (its momentum is ignored).
pub fn transition<O: Objective + ?Sized, R: Rng>(
    target: &O,
    current: &PhasePoint,
    eps: f64,
    inv_mass: &[f64],
    max_depth: usize,
    rng: &mut R,
) -> Transition {
    let mut z0 = current.clone();
    z0.p = momentum_refresh(rng, inv_mass);
    let h0 = z0.hamiltonian(inv_mass);
    let integ = Integrator {
        target,
        eps,
        inv_mass,
        h0,
    };

    let mut z_fwd = z0.clone();
    let mut z_bck = z0.clone();
    let p_sharp0 = mul_inv_mass(&z0.p, inv_mass);
    // trajectory boundary momenta, backward end and forward end
    let mut p_sharp_bck = p_sharp0.clone();
    let mut p_sharp_fwd = p_sharp0;
    let mut p_bck = z0.p.clone();
    let mut p_fwd = z0.p.clone();
    let mut rho = z0.p.clone();
    let mut log_sum_weight = 0.0;
    let mut sample = z0.clone();
    let mut acc = Accum {
        n_leapfrog: 0,
        sum_metro_prob: 0.0,
        divergent: false,
    };
    let mut depth = 0;

    while depth < max_depth {
        let forward = rng.random::<f64>() < 0.5;
        let subtree = if forward {
            integ.build_tree(depth, &mut z_fwd, 1.0, &mut acc, rng)
        } else {
            integ.build_tree(depth, &mut z_bck, -1.0, &mut acc, rng)
        };
        let Some(sub) = subtree else {
            break;
        };
        depth += 1;

        // progressive sampling biased toward the new subtree
        if sub.log_sum_weight > log_sum_weight
            || rng.random::<f64>() < (sub.log_sum_weight - log_sum_weight).exp()
        {
            sample = sub.proposal.clone();
        }
        log_sum_weight = log_sum_exp(log_sum_weight, sub.log_sum_weight);

        // old trajectory edge adjacent to the new subtree, before extending
        let (p_sharp_join_old, p_join_old, rho_old) = if forward {
            (p_sharp_fwd.clone(), p_fwd.clone(), rho.clone())
        } else {
            (p_sharp_bck.clone(), p_bck.clone(), rho.clone())
        };
        rho = add(&rho, &sub.rho);
        let persist = if forward {
            p_sharp_fwd = sub.p_sharp_end.clone();
            p_fwd = sub.p_end.clone();
            no_u_turn(&p_sharp_bck, &p_sharp_fwd, &rho)
                && no_u_turn(&p_sharp_bck, &sub.p_sharp_beg, &add(&rho_old, &sub.p_beg))
                && no_u_turn(&p_sharp_join_old, &p_sharp_fwd, &add(&sub.rho, &p_join_old))
        } else {
            // the backward subtree was integrated outward; its begin is the join
            p_sharp_bck = sub.p_sharp_end.clone();
            p_bck = sub.p_end.clone();
            no_u_turn(&p_sharp_bck, &p_sharp_fwd, &rho)
                && no_u_turn(&sub.p_sharp_beg, &p_sharp_fwd, &add(&rho_old, &sub.p_beg))
                && no_u_turn(&p_sharp_bck, &p_sharp_join_old, &add(&sub.rho, &p_join_old))
        };
        if !persist {
            break;
        }
    }

    let accept_stat = if acc.n_leapfrog > 0 {
        acc.sum_metro_prob / acc.n_leapfrog as f64
    } else {
        0.0
    };
    Transition {
        point: sample,
        accept_stat,
        depth,
        n_leapfrog: acc.n_leapfrog,
        divergent: acc.divergent,
    }
}

/// Dual-averaging step-size adaptation.
#[derive(Debug, Clone)]
struct StepSizeAdapter {
    mu: f64,
    target: f64,
    gamma: f64,
    kappa: f64,
    t0: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl StepSizeAdapter {
    fn new(target: f64) -> Self {
        StepSizeAdapter {
            mu: 0.0,
            target,
            gamma: 0.05,
            kappa: 0.75,
            t0: 10.0,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        }
    }

    fn restart(&mut self, eps: f64) {
        self.mu = (10.0 * eps).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let stat = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Expanding-window schedule for the diagonal inverse mass.
#[derive(Debug, Clone)]
struct MassAdapter {
    n_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl MassAdapter {
    fn new(dim: usize, n_warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base_window) = (75usize, 50usize, 25usize);
        if n_warmup < 20 {
            // too short for windows: step size only
            init_buffer = n_warmup;
            term_buffer = 0;
            base_window = 0;
        } else if init_buffer + base_window + term_buffer > n_warmup {
            init_buffer = (0.15 * n_warmup as f64) as usize;
            term_buffer = (0.1 * n_warmup as f64) as usize;
            base_window = n_warmup - (init_buffer + term_buffer);
        }
        MassAdapter {
            n_warmup,
            init_buffer,
            term_buffer,
            window_size: base_window,
            next_window: (init_buffer + base_window).saturating_sub(1),
            counter: 0,
            n: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn in_window(&self) -> bool {
        self.window_size > 0
            && self.counter >= self.init_buffer
            && self.counter < self.n_warmup - self.term_buffer
            && self.counter != self.n_warmup
    }

    fn window_end(&self) -> bool {
        self.window_size > 0 && self.counter == self.next_window && self.counter != self.n_warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.n_warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last {
            let boundary = self.next_window + 2 * self.window_size;
            if boundary >= self.n_warmup - self.term_buffer {
                self.next_window = last;
            }
        }
    }

    /// Adds a draw; returns the new inverse mass at the end of a window.
    fn learn(&mut self, q: &[f64]) -> Option<Vec<f64>> {
        if self.in_window() {
            self.n += 1.0;
            for i in 0..q.len() {
                let delta = q[i] - self.mean[i];
                self.mean[i] += delta / self.n;
                self.m2[i] += delta * (q[i] - self.mean[i]);
            }
        }
        if self.window_end() {
            self.compute_next_window();
            let n = self.n;
            let var: Vec<f64> = self
                .m2
                .iter()
                .map(|m2| {
                    let v = if n > 1.0 { m2 / (n - 1.0) } else { 1.0 };
                    // shrink toward a small constant
                    (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0))
                })
                .collect();
            self.n = 0.0;
            self.mean.iter_mut().for_each(|v| *v = 0.0);
            self.m2.iter_mut().for_each(|v| *v = 0.0);
            self.counter += 1;
            return Some(var);
        }
        self.counter += 1;
        None
    }
}

/// Doubling/halving search for a step size whose single-step acceptance
/// crosses 0.8.
fn reasonable_step_size<O: Objective + ?Sized, R: Rng>(
    target: &O,
    z: &PhasePoint,
    mut eps: f64,
    inv_mass: &[f64],
    rng: &mut R,
) -> f64 {
    let threshold = 0.8f64.ln();
    let try_step = |eps: f64, rng: &mut R| {
        let mut start = z.clone();
        start.p = momentum_refresh(rng, inv_mass);
        let h0 = start.hamiltonian(inv_mass);
        let next = leapfrog_step(target, &start, eps, inv_mass);
        let delta = h0 - next.hamiltonian(inv_mass);
        if delta.is_nan() {
            f64::NEG_INFINITY
        } else {
            delta
        }
    };
    let direction = if try_step(eps, rng) > threshold {
        1.0
    } else {
        -1.0
    };
    for _ in 0..100 {
        let delta = try_step(eps, rng);
        if direction > 0.0 && !(delta > threshold) {
            break;
        }
        if direction < 0.0 && !(delta < threshold) {
            break;
        }
        let next = if direction > 0.0 { 2.0 * eps } else { 0.5 * eps };
        if !(next > 1e-12 && next < 1e7) {
            break;
        }
        eps = next;
    }
    eps
}

/// Runs one chain from `start`, returning the post-warmup draws.
pub fn run_nuts<O: Objective + ?Sized>(
    target: &O,
    start: &[f64],
    settings: &NutsSettings,
) -> Result<Trace> {
    settings.validate()?;
    let dim = target.dim();
    if start.len() != dim {
        return Err(Error::LengthMismatch {
            expected: dim,
            got: start.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut inv_mass = vec![1.0; dim];
    let mut current = PhasePoint::new(target, start.to_vec(), vec![0.0; dim]);
    if !current.potential.is_finite() {
        return Err(Error::domain("potential is not finite at the start point"));
    }

    let mut eps = reasonable_step_size(target, &current, settings.initial_step_size, &inv_mass, &mut rng);
    let mut step_adapter = StepSizeAdapter::new(settings.target_accept);
    step_adapter.restart(eps);
    let mut mass_adapter = MassAdapter::new(dim, settings.n_warmup);

    let n_keep = settings.n_iterations - settings.n_warmup;
    let mut trace = Trace {
        positions: Vec::with_capacity(n_keep),
        potentials: Vec::with_capacity(n_keep),
        accept_stat: Vec::with_capacity(n_keep),
        tree_depth: Vec::with_capacity(n_keep),
        n_leapfrog: Vec::with_capacity(n_keep),
        divergent: Vec::with_capacity(n_keep),
        step_size: eps,
        inv_mass_diag: inv_mass.clone(),
    };

    for iter in 0..settings.n_iterations {
        let t = transition(
            target,
            &current,
            eps,
            &inv_mass,
            settings.max_tree_depth,
            &mut rng,
        );
        current = t.point;
        if iter < settings.n_warmup {
            eps = step_adapter.learn(t.accept_stat);
            if let Some(var) = mass_adapter.learn(&current.q) {
                inv_mass = var;
                eps = reasonable_step_size(target, &current, eps, &inv_mass, &mut rng);
                step_adapter.restart(eps);
            }
            if iter + 1 == settings.n_warmup {
                eps = step_adapter.final_step_size();
            }
        } else {
            trace.positions.push(current.q.clone());
            trace.potentials.push(current.potential);
            trace.accept_stat.push(t.accept_stat);
            trace.tree_depth.push(t.depth);
            trace.n_leapfrog.push(t.n_leapfrog);
            trace.divergent.push(t.divergent);
        }
    }
    trace.step_size = eps;
    trace.inv_mass_diag = inv_mass;
    Ok(trace)
}
