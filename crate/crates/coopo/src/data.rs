//! Offline transition datasets: scripted behavior policies, JSONL
//! persistence and minibatch sampling.
//!
//! A dataset file is JSON Lines. The first line is the metadata
//! object `{"env", "behavior", "seed", "n"}`; every following line is
//! one transition with keys `s`, `a`, `r`, `s2`, `done`. Tabular
//! states and actions serialize as integers, continuous ones as
//! arrays. These key names are the on-disk contract.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Action, Env, Observation, TabularMdp};
use crate::error::{Error, Result};
use crate::oracle::optimal_actions;
use crate::rng::{derive_seed, seeded_rng};

/// One environment interaction. Field names match the JSONL keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub s: Observation,
    pub a: Action,
    pub r: f64,
    pub s2: Observation,
    pub done: bool,
}

/// Noise level of a scripted behavior policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Expert,
    Medium,
    Random,
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expert" => Ok(Tier::Expert),
            "medium" => Ok(Tier::Medium),
            "random" => Ok(Tier::Random),
            other => Err(Error::input(format!(
                "unknown tier {other:?}, expected expert, medium or random"
            ))),
        }
    }
}

/// Gaussian noise scale of the scripted point-mass controller at
/// `sigma_factor` 1.
const BASE_SIGMA: f64 = 0.08;

/// How a dataset was produced: a named scripted base policy plus a
/// noise knob. Tabular bases use `epsilon`, the probability of
/// replacing the base action with a uniform one. The continuous
/// controller uses `sigma_factor` (at least 1) scaling its Gaussian
/// action noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorDescriptor {
    pub base: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_factor: Option<f64>,
}

impl BehaviorDescriptor {
    /// Epsilon-greedy around the planner-optimal actions.
    pub fn tabular_tier(tier: Tier) -> Self {
        let epsilon = match tier {
            Tier::Expert => 0.05,
            Tier::Medium => 0.3,
            Tier::Random => 1.0,
        };
        BehaviorDescriptor { base: "dp-greedy".into(), epsilon: Some(epsilon), sigma_factor: None }
    }

    /// Noisy proportional-derivative controller for the point mass.
    pub fn continuous_tier(tier: Tier) -> Self {
        let factor = match tier {
            Tier::Expert => 1.0,
            Tier::Medium => 4.0,
            Tier::Random => 12.0,
        };
        BehaviorDescriptor { base: "pd-control".into(), epsilon: None, sigma_factor: Some(factor) }
    }

    pub fn for_env(env: &Env, tier: Tier) -> Self {
        if env.is_tabular() {
            Self::tabular_tier(tier)
        } else {
            Self::continuous_tier(tier)
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(eps) = self.epsilon {
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::input("behavior epsilon must lie in [0, 1]"));
            }
        }
        if let Some(f) = self.sigma_factor {
            if !f.is_finite() || f < 1.0 {
                return Err(Error::input("behavior sigma_factor must be at least 1"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub env: String,
    pub behavior: BehaviorDescriptor,
    pub seed: u64,
    pub n: usize,
}

/// Collection of transitions plus provenance metadata. Grows only
/// through [`Dataset::extend`], which keeps `meta.n` in sync.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    transitions: Vec<Transition>,
}

/// Coarse layout of one transition, used to reject mixed datasets.
fn shape_of(t: &Transition) -> (Option<usize>, Option<usize>) {
    let s_dim = match &t.s {
        Observation::Discrete(_) => None,
        Observation::Continuous(v) => Some(v.len()),
    };
    let a_dim = match &t.a {
        Action::Discrete(_) => None,
        Action::Continuous(v) => Some(v.len()),
    };
    (s_dim, a_dim)
}

impl Dataset {
    pub fn new(meta: DatasetMeta, transitions: Vec<Transition>) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::schema("a dataset needs at least one transition"));
        }
        if meta.n != transitions.len() {
            return Err(Error::schema(format!(
                "metadata says {} transitions but {} are present",
                meta.n,
                transitions.len()
            )));
        }
        meta.behavior.validate()?;
        let shape = shape_of(&transitions[0]);
        for (i, t) in transitions.iter().enumerate() {
            if shape_of(t) != shape {
                return Err(Error::schema(format!(
                    "transition {i} does not match the shape of the first one"
                )));
            }
            if !t.r.is_finite() {
                return Err(Error::schema(format!("transition {i} has a non-finite reward")));
            }
        }
        Ok(Dataset { meta, transitions })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Appends transitions, rejecting any whose shape differs from the
    /// existing data. Updates `meta.n`.
    pub fn extend(&mut self, extra: Vec<Transition>) -> Result<()> {
        let shape = shape_of(&self.transitions[0]);
        for (i, t) in extra.iter().enumerate() {
            if shape_of(t) != shape {
                return Err(Error::schema(format!(
                    "appended transition {i} does not match the dataset's shape"
                )));
            }
            if !t.r.is_finite() {
                return Err(Error::schema(format!("appended transition {i} has a non-finite reward")));
            }
        }
        self.transitions.extend(extra);
        self.meta.n = self.transitions.len();
        Ok(())
    }

    /// Uniform sample with replacement.
    pub fn sample_batch(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<&Transition>> {
        if self.transitions.is_empty() {
            return Err(Error::input("cannot sample from an empty dataset"));
        }
        if batch_size == 0 {
            return Err(Error::input("batch_size must be positive"));
        }
        Ok((0..batch_size)
            .map(|_| &self.transitions[rng.gen_range(0..self.transitions.len())])
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &self.meta).map_err(|e| Error::schema(e.to_string()))?;
        w.write_all(b"\n")?;
        for t in &self.transitions {
            serde_json::to_writer(&mut w, t).map_err(|e| Error::schema(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(line) => line?,
            None => return Err(Error::schema("dataset file is empty")),
        };
        let meta: DatasetMeta = serde_json::from_str(&header)
            .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;

        let mut transitions = Vec::with_capacity(meta.n);
        for (idx, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Transition = serde_json::from_str(&line)
                .map_err(|e| Error::Parse { line: idx + 2, msg: e.to_string() })?;
            transitions.push(t);
        }
        if transitions.is_empty() {
            return Err(Error::schema("dataset file has a header but no transitions"));
        }
        Dataset::new(meta, transitions)
    }

    /// Discount-weighted state frequencies, the empirical counterpart
    /// of the planner's normalized occupancy. Step indices are
    /// reconstructed from episode boundaries, so each visit at depth h
    /// weighs `gamma^h`.
    pub fn empirical_state_distribution(&self, mdp: &TabularMdp) -> Result<Vec<f64>> {
        let mut freq = vec![0.0; mdp.n_states];
        let mut weight = 1.0;
        for t in &self.transitions {
            let s = t
                .s
                .index()
                .map_err(|_| Error::input("state distribution needs a tabular dataset"))?;
            if s >= mdp.n_states {
                return Err(Error::input(format!("state {s} outside the {}-state MDP", mdp.n_states)));
            }
            freq[s] += weight;
            weight = if t.done { 1.0 } else { weight * mdp.gamma };
        }
        let total: f64 = freq.iter().sum();
        for f in freq.iter_mut() {
            *f /= total;
        }
        Ok(freq)
    }
}

enum BehaviorSampler {
    EpsGreedy { greedy: Vec<usize>, epsilon: f64, n_actions: usize },
    PdControl { goal: [f64; 2], sigma: f64 },
}

impl BehaviorSampler {
    fn build(env: &Env, behavior: &BehaviorDescriptor) -> Result<Self> {
        match (env.tabular(), behavior.base.as_str()) {
            (Some(mdp), "dp-greedy") => Ok(BehaviorSampler::EpsGreedy {
                greedy: optimal_actions(mdp),
                epsilon: behavior.epsilon.ok_or_else(|| {
                    Error::input("tabular behavior policies need an epsilon")
                })?,
                n_actions: mdp.n_actions,
            }),
            (None, "pd-control") => {
                let factor = behavior.sigma_factor.ok_or_else(|| {
                    Error::input("continuous behavior policies need a sigma_factor")
                })?;
                Ok(BehaviorSampler::PdControl { goal: [1.0, 1.0], sigma: BASE_SIGMA * factor })
            }
            (_, other) => Err(Error::input(format!(
                "behavior base {other:?} does not apply to env {:?}",
                env.name()
            ))),
        }
    }

    fn act(&self, obs: &Observation, rng: &mut ChaCha8Rng) -> Result<Action> {
        match self {
            BehaviorSampler::EpsGreedy { greedy, epsilon, n_actions } => {
                let s = obs.index()?;
                let a = if rng.gen::<f64>() < *epsilon {
                    rng.gen_range(0..*n_actions)
                } else {
                    greedy[s]
                };
                Ok(Action::Discrete(a))
            }
            BehaviorSampler::PdControl { goal, sigma } => {
                let v = obs.vector()?;
                let mut a = [0.0; 2];
                for d in 0..2 {
                    let mean = 4.0 * (goal[d] - v[d]) - 3.0 * v[d + 2];
                    a[d] = mean + sigma * box_muller(rng);
                }
                Ok(Action::Continuous(a.to_vec()))
            }
        }
    }
}

fn box_muller(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Rolls the behavior policy in the environment until exactly
/// `n_transitions` records exist; the final episode may be cut short.
/// Deterministic in (env fixture, descriptor, n, seed).
pub fn generate(
    env: &mut Env,
    behavior: &BehaviorDescriptor,
    n_transitions: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_transitions == 0 {
        return Err(Error::input("n_transitions must be positive"));
    }
    behavior.validate()?;
    let sampler = BehaviorSampler::build(env, behavior)?;

    env.seed(derive_seed(seed, "gen-env", &[]));
    let mut act_rng = seeded_rng(derive_seed(seed, "gen-act", &[]));

    let mut transitions = Vec::with_capacity(n_transitions);
    let mut obs = env.reset();
    while transitions.len() < n_transitions {
        let action = sampler.act(&obs, &mut act_rng)?;
        let step = env.step(&action)?;
        transitions.push(Transition {
            s: obs,
            a: action,
            r: step.reward,
            s2: step.next_state.clone(),
            done: step.done,
        });
        obs = if step.done { env.reset() } else { step.next_state };
    }

    let meta = DatasetMeta {
        env: env.name().to_string(),
        behavior: behavior.clone(),
        seed,
        n: n_transitions,
    };
    Dataset::new(meta, transitions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::make_benchmark;
    use crate::oracle::exact_eval;
    use crate::policy::ProbTable;

    fn toy_meta(n: usize) -> DatasetMeta {
        DatasetMeta {
            env: "pointmass".into(),
            behavior: BehaviorDescriptor::continuous_tier(Tier::Medium),
            seed: 1,
            n,
        }
    }

    fn toy_transition(x: f64) -> Transition {
        Transition {
            s: Observation::Continuous(vec![x, 0.0, 0.0, 0.0]),
            a: Action::Continuous(vec![0.1 * x, -0.2]),
            r: -x,
            s2: Observation::Continuous(vec![x + 0.1, 0.0, 0.0, 0.0]),
            done: false,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let d = Dataset::new(toy_meta(3), (0..3).map(|i| toy_transition(i as f64 / 3.0)).collect())
            .unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        d.save(file.path()).unwrap();
        let back = Dataset::load(file.path()).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn documented_record_shape_parses() {
        let t: Transition =
            serde_json::from_str(r#"{"s":[0.1],"a":[0.2],"r":1.0,"s2":[0.3],"done":false}"#)
                .unwrap();
        assert_eq!(t.s, Observation::Continuous(vec![0.1]));
        assert_eq!(t.a, Action::Continuous(vec![0.2]));
        assert_eq!(t.r, 1.0);
        assert!(!t.done);

        let tab: Transition =
            serde_json::from_str(r#"{"s":0,"a":1,"r":0.5,"s2":2,"done":true}"#).unwrap();
        assert_eq!(tab.s, Observation::Discrete(0));
        assert_eq!(tab.a, Action::Discrete(1));
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        let meta = serde_json::to_string(&toy_meta(2)).unwrap();
        let good = serde_json::to_string(&toy_transition(0.5)).unwrap();
        writeln!(file, "{meta}\n{good}\nnot json").unwrap();
        match Dataset::load(file.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn header_only_file_is_a_schema_error() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "{}", serde_json::to_string(&toy_meta(1)).unwrap()).unwrap();
        assert!(matches!(Dataset::load(file.path()), Err(Error::Schema(_))));
    }

    #[test]
    fn count_mismatch_is_a_schema_error() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        let meta = serde_json::to_string(&toy_meta(5)).unwrap();
        let t = serde_json::to_string(&toy_transition(0.1)).unwrap();
        writeln!(file, "{meta}\n{t}").unwrap();
        assert!(matches!(Dataset::load(file.path()), Err(Error::Schema(_))));
    }

    #[test]
    fn mixed_shapes_are_a_schema_error() {
        let mixed = vec![
            toy_transition(0.2),
            Transition {
                s: Observation::Discrete(0),
                a: Action::Discrete(1),
                r: 0.0,
                s2: Observation::Discrete(0),
                done: true,
            },
        ];
        assert!(matches!(Dataset::new(toy_meta(2), mixed), Err(Error::Schema(_))));
    }

    #[test]
    fn extending_grows_the_count_and_rejects_foreign_shapes() {
        let mut d =
            Dataset::new(toy_meta(2), (0..2).map(|i| toy_transition(i as f64)).collect()).unwrap();
        d.extend(vec![toy_transition(2.0), toy_transition(3.0)]).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.meta.n, 4);

        let tabular = Transition {
            s: Observation::Discrete(0),
            a: Action::Discrete(1),
            r: 0.0,
            s2: Observation::Discrete(0),
            done: true,
        };
        assert!(matches!(d.extend(vec![tabular]), Err(Error::Schema(_))));
        assert_eq!(d.len(), 4);
    }

    #[test]
    fn random_tier_on_the_bandit_splits_actions_evenly() {
        let mut env = make_benchmark("bandit2").unwrap();
        let behavior = BehaviorDescriptor::tabular_tier(Tier::Random);
        let d = generate(&mut env, &behavior, 1000, 9).unwrap();
        let zeros = d.transitions().iter().filter(|t| t.a == Action::Discrete(0)).count();
        // Binomial(1000, 1/2): 3 sigma is about 47.
        assert!((zeros as f64 - 500.0).abs() < 48.0, "zeros = {zeros}");
    }

    #[test]
    fn zero_noise_expert_repeats_one_trajectory() {
        let mut env = make_benchmark("chain5").unwrap();
        let h = env.horizon();
        let behavior = BehaviorDescriptor {
            base: "dp-greedy".into(),
            epsilon: Some(0.0),
            sigma_factor: None,
        };
        let d = generate(&mut env, &behavior, 2 * h, 5).unwrap();
        for i in 0..h {
            assert_eq!(d.transitions()[i], d.transitions()[i + h]);
        }
        // The expert walks right and then sits on the rewarded state.
        assert_eq!(d.transitions()[0].s, Observation::Discrete(0));
        assert_eq!(d.transitions()[4].s, Observation::Discrete(4));
        assert_eq!(d.transitions()[4].r, 1.0);
    }

    #[test]
    fn million_transition_datasets_are_supported() {
        let mut env = make_benchmark("bandit2").unwrap();
        let behavior = BehaviorDescriptor::tabular_tier(Tier::Random);
        let d = generate(&mut env, &behavior, 1_000_000, 2).unwrap();
        assert_eq!(d.len(), 1_000_000);
        assert_eq!(d.meta.n, 1_000_000);
        let mut rng = seeded_rng(0);
        assert_eq!(d.sample_batch(512, &mut rng).unwrap().len(), 512);
    }

    #[test]
    fn batch_sampling_is_uniform() {
        let mut env = make_benchmark("bandit2").unwrap();
        let behavior = BehaviorDescriptor::tabular_tier(Tier::Random);
        let d = generate(&mut env, &behavior, 100, 3).unwrap();
        let mut rng = seeded_rng(8);
        let mut counts = vec![0usize; 100];
        let base = d.transitions().as_ptr();
        for t in d.sample_batch(100_000, &mut rng).unwrap() {
            let idx = (t as *const Transition as usize - base as usize)
                / std::mem::size_of::<Transition>();
            counts[idx] += 1;
        }
        let expected = 1000.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 0.99 quantile of chi-square with 99 degrees of freedom.
        assert!(chi2 < 134.64, "chi2 = {chi2}");
    }

    #[test]
    fn sampling_with_replacement_can_repeat() {
        let d = Dataset::new(toy_meta(2), vec![toy_transition(0.1), toy_transition(0.9)]).unwrap();
        let mut rng = seeded_rng(1);
        let batch = d.sample_batch(64, &mut rng).unwrap();
        assert_eq!(batch.len(), 64);
        let firsts = batch.iter().filter(|t| t.r == -0.1).count();
        assert!(firsts > 0 && firsts < 64);
    }

    #[test]
    fn state_frequencies_match_planner_occupancy() {
        let mut env = make_benchmark("chain5").unwrap();
        let mdp = env.tabular().unwrap().clone();
        let behavior = BehaviorDescriptor::tabular_tier(Tier::Random);
        let d = generate(&mut env, &behavior, 100_000, 7).unwrap();
        let rho = d.empirical_state_distribution(&mdp).unwrap();
        assert!((rho.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let exact = exact_eval(&mdp, &ProbTable::uniform(5, 2)).unwrap().d_pi;
        let l1: f64 = rho.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 < 0.02, "l1 = {l1}");
    }

    #[test]
    fn frequency_error_shrinks_as_the_dataset_grows() {
        let env_name = "chain5";
        let behavior = BehaviorDescriptor::tabular_tier(Tier::Random);
        let mdp = make_benchmark(env_name).unwrap().tabular().unwrap().clone();
        let exact = exact_eval(&mdp, &ProbTable::uniform(5, 2)).unwrap().d_pi;

        let l1_at = |n: usize, seed: u64| -> f64 {
            let mut env = make_benchmark(env_name).unwrap();
            let d = generate(&mut env, &behavior, n, seed).unwrap();
            let rho = d.empirical_state_distribution(&mdp).unwrap();
            rho.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum()
        };
        // Average a few seeds so the quadrupling trend is visible
        // through sampling noise.
        let mean_l1 = |n: usize| (0..4).map(|s| l1_at(n, 100 + s)).sum::<f64>() / 4.0;
        let (small, medium, large) = (mean_l1(1_000), mean_l1(4_000), mean_l1(16_000));
        assert!(medium < small, "{medium} vs {small}");
        assert!(large < medium, "{large} vs {medium}");
        assert!(large < 0.6 * small, "{large} vs {small}");
    }

    #[test]
    fn single_state_dataset_concentrates() {
        let mut env = make_benchmark("bandit2").unwrap();
        let behavior = BehaviorDescriptor::tabular_tier(Tier::Random);
        let d = generate(&mut env, &behavior, 50, 1).unwrap();
        let mdp = env.tabular().unwrap();
        assert_eq!(d.empirical_state_distribution(mdp).unwrap(), vec![1.0]);
    }

    #[test]
    fn continuous_dataset_has_no_state_distribution() {
        let d = Dataset::new(toy_meta(1), vec![toy_transition(0.3)]).unwrap();
        let mdp = make_benchmark("bandit2").unwrap().tabular().unwrap().clone();
        assert!(d.empirical_state_distribution(&mdp).is_err());
    }

    #[test]
    fn pd_controller_reaches_the_goal() {
        let mut env = make_benchmark("pointmass").unwrap();
        let behavior = BehaviorDescriptor::continuous_tier(Tier::Expert);
        let h = env.horizon();
        let d = generate(&mut env, &behavior, h, 4).unwrap();
        let last = d.transitions().last().unwrap();
        let p = last.s2.vector().unwrap();
        let dist2 = (p[0] - 1.0).powi(2) + (p[1] - 1.0).powi(2);
        assert!(dist2 < 0.05, "final squared distance {dist2}");
        // Late rewards beat early ones as the mass closes in.
        assert!(last.r > d.transitions()[0].r);
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let behavior = BehaviorDescriptor::for_env(&make_benchmark("pointmass").unwrap(), Tier::Medium);
        let mut a = make_benchmark("pointmass").unwrap();
        let mut b = make_benchmark("pointmass").unwrap();
        let da = generate(&mut a, &behavior, 120, 6).unwrap();
        let db = generate(&mut b, &behavior, 120, 6).unwrap();
        assert_eq!(da, db);
        let mut c = make_benchmark("pointmass").unwrap();
        let dc = generate(&mut c, &behavior, 120, 7).unwrap();
        assert_ne!(da, dc);
    }
}
