//! Trajectory collection per team-task, labelled datasets and the `RBTJ`
//! on-disk format.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::binio::{FormatError, Reader, Writer};
use crate::env::{Action, EnvError, GridConfig, Observation};
use crate::episode::AdHocEpisode;
use crate::policies::{sample_action, scripted_best_response, ActionDist, PolicyError};
use crate::rng::{self, purpose};
use crate::teammates::{TaskSpec, TeamStrategy, TeamTaskId};

pub const MAGIC: [u8; 4] = *b"RBTJ";
pub const VERSION: u8 = 1;
/// Bytes per packed record: action, observation, reward.
pub const RECORD_BYTES: usize = 1 + 16 + 4;
/// Exploration weight of the mixed behavior policy.
pub const MIXTURE_EPSILON: f64 = 0.2;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("label k={k} has {count} trajectories, fewer than the {splits} non-empty splits")]
    Stratification { k: usize, count: usize, splits: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// One step seen by the ad hoc agent: the action it took and what followed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub action: Action,
    pub obs: Observation,
    pub reward: f32,
}

pub type Trajectory = Vec<TrajectoryRecord>;

/// All trajectories collected for one team-task.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBuffer {
    pub label: TeamTaskId,
    /// Base seed of the collection; episode `i` replays from
    /// [`episode_seed`]`(seed, label.k, i)`.
    pub seed: u64,
    pub max_len: usize,
    pub trajectories: Vec<Trajectory>,
}

/// Policy driving the ad hoc slot during collection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Behavior {
    /// The scripted best response for the team-task.
    BestResponse,
    /// Best response mixed with a uniform policy at the given weight.
    Mixture(f64),
}

pub fn episode_seed(seed: u64, k: usize, i: usize) -> u64 {
    rng::derive(seed, &[purpose::EPISODE, k as u64, i as u64])
}

/// Runs `t` seeded episodes of at most `l` steps with the team of
/// `team_task` and records the ad hoc agent's stream.
pub fn collect(
    config: &GridConfig,
    team_task: TeamTaskId,
    behavior: Behavior,
    t: usize,
    l: usize,
    seed: u64,
) -> Result<TrajectoryBuffer, TrajectoryError> {
    if t == 0 || l == 0 {
        return Err(TrajectoryError::InvalidArgument(format!("T={t} and L={l} must both be at least 1")));
    }
    if let Behavior::Mixture(eps) = behavior {
        if !(0.0..=1.0).contains(&eps) {
            return Err(TrajectoryError::InvalidArgument(format!("mixture weight {eps} outside [0, 1]")));
        }
    }
    config.validate()?;
    let trajectories = (0..t)
        .map(|i| run_episode(config, team_task, behavior, l, episode_seed(seed, team_task.k, i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrajectoryBuffer { label: team_task, seed, max_len: l, trajectories })
}

fn run_episode(
    config: &GridConfig,
    team_task: TeamTaskId,
    behavior: Behavior,
    l: usize,
    ep_seed: u64,
) -> Result<Trajectory, TrajectoryError> {
    let slot = AdHocEpisode::random_slot(config, ep_seed);
    let mut ep = AdHocEpisode::new(config, team_task, slot, ep_seed)?;
    let mut policy = scripted_best_response(team_task, config.kind, config.n_agents);
    let mut rng = rng::stream(ep_seed, &[purpose::BEHAVIOR]);
    policy.begin(slot, ep.observation());
    let mut out = Vec::new();
    while out.len() < l && !ep.is_done() {
        let dist = match behavior {
            Behavior::BestResponse => policy.distribution(),
            Behavior::Mixture(eps) => {
                let br = policy.distribution();
                ActionDist(std::array::from_fn(|a| (1.0 - eps) * br.0[a] + eps / Action::COUNT as f64))
            }
        };
        let action = sample_action(&dist, &mut rng)?;
        let tr = ep.step(action)?;
        out.push(TrajectoryRecord { action, obs: tr.obs, reward: tr.reward as f32 });
        policy.advance(action, tr.obs);
    }
    Ok(out)
}

/// Re-simulates trajectory `i` of `buffer` with its recorded actions and
/// returns the observations the environment produces.
pub fn replay(config: &GridConfig, buffer: &TrajectoryBuffer, i: usize) -> Result<Vec<Observation>, TrajectoryError> {
    let traj = buffer
        .trajectories
        .get(i)
        .ok_or_else(|| TrajectoryError::InvalidArgument(format!("no trajectory {i}")))?;
    let ep_seed = episode_seed(buffer.seed, buffer.label.k, i);
    let slot = AdHocEpisode::random_slot(config, ep_seed);
    let mut ep = AdHocEpisode::new(config, buffer.label, slot, ep_seed)?;
    traj.iter().map(|r| Ok(ep.step(r.action)?.obs)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];
}

/// A trajectory with its class index (position of its label in
/// [`LabelledDataset::labels`]) and split.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub trajectory: Trajectory,
    pub class: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelledDataset {
    /// Distinct labels ordered by k.
    pub labels: Vec<TeamTaskId>,
    pub samples: Vec<Sample>,
}

impl LabelledDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }
}

/// Pools buffers by label, shuffles each label deterministically and cuts it
/// into train/validation/test by `fractions`.
pub fn build_dataset(
    buffers: &[TrajectoryBuffer],
    fractions: [f64; 3],
    seed: u64,
) -> Result<LabelledDataset, TrajectoryError> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(TrajectoryError::InvalidArgument(format!("split fractions {fractions:?} must be ≥ 0 and sum to 1")));
    }
    let mut pooled: BTreeMap<usize, (TeamTaskId, Vec<&Trajectory>)> = BTreeMap::new();
    for b in buffers {
        let entry = pooled.entry(b.label.k).or_insert_with(|| (b.label, Vec::new()));
        if entry.0 != b.label {
            return Err(TrajectoryError::InvalidArgument(format!("k={} names both {} and {}", b.label.k, entry.0, b.label)));
        }
        entry.1.extend(b.trajectories.iter());
    }
    let live: Vec<usize> = (0..3).filter(|&s| fractions[s] > 0.0).collect();
    let mut labels = Vec::new();
    let mut samples = Vec::new();
    for (class, (k, (label, trajs))) in pooled.into_iter().enumerate() {
        let n = trajs.len();
        if n < live.len() {
            return Err(TrajectoryError::Stratification { k, count: n, splits: live.len() });
        }
        let counts = split_counts(n, &fractions, &live);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(seed, &[purpose::SHUFFLE, k as u64]));
        let mut it = order.into_iter();
        for (s, &c) in Split::ALL.iter().zip(counts.iter()) {
            for i in it.by_ref().take(c) {
                samples.push(Sample { trajectory: trajs[i].clone(), class, split: *s });
            }
        }
        labels.push(label);
    }
    Ok(LabelledDataset { labels, samples })
}

/// Rounded split sizes; each split with a positive fraction gets at least
/// one item, taken from the largest.
fn split_counts(n: usize, fractions: &[f64; 3], live: &[usize]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for &s in live {
        counts[s] = (fractions[s] * n as f64).round() as usize;
    }
    let first = live[0];
    let rest: usize = live[1..].iter().map(|&s| counts[s]).sum();
    counts[first] = n.saturating_sub(rest);
    for &s in live {
        while counts[s] == 0 {
            let donor = (0..3).max_by_key(|&d| (counts[d], std::cmp::Reverse(d))).unwrap_or(first);
            counts[donor] -= 1;
            counts[s] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    if total > n {
        let donor = (0..3).max_by_key(|&d| counts[d]).unwrap_or(first);
        counts[donor] -= total - n;
    }
    counts
}

impl TrajectoryBuffer {
    pub fn to_bytes(&self) -> Result<Vec<u8>, FormatError> {
        let mut w = Writer::new();
        w.bytes(&MAGIC);
        w.u8(VERSION);
        w.token(self.label.strategy.token())?;
        w.token(&self.label.task.token())?;
        w.u32(to_u32(self.label.k)?);
        w.u64(self.seed);
        w.u32(to_u32(self.max_len)?);
        w.u32(to_u32(self.trajectories.len())?);
        for t in &self.trajectories {
            w.u32(to_u32(t.len())?);
        }
        for r in self.trajectories.iter().flatten() {
            w.u8(r.action.to_byte());
            w.bytes(&r.obs.pack());
            w.f32(r.reward);
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u8()?;
        if version != VERSION {
            return Err(FormatError::BadVersion(version));
        }
        let strategy_tok = r.token()?;
        let strategy = TeamStrategy::from_token(&strategy_tok)
            .ok_or_else(|| FormatError::Invalid(format!("unknown strategy {strategy_tok:?}")))?;
        let task_tok = r.token()?;
        let task =
            TaskSpec::from_token(&task_tok).ok_or_else(|| FormatError::Invalid(format!("unknown task {task_tok:?}")))?;
        let k = r.u32()? as usize;
        if k == 0 {
            return Err(FormatError::Invalid("k must be ≥ 1".into()));
        }
        let seed = r.u64()?;
        let max_len = r.u32()? as usize;
        let t = r.u32()? as usize;
        let mut lengths = Vec::with_capacity(t.min(bytes.len() / 4));
        for _ in 0..t {
            let n = r.u32()? as usize;
            if n == 0 || n > max_len {
                return Err(FormatError::Invalid(format!("trajectory length {n} outside [1, {max_len}]")));
            }
            lengths.push(n);
        }
        let mut trajectories = Vec::with_capacity(t);
        for n in lengths {
            let mut traj = Vec::with_capacity(n.min(bytes.len() / RECORD_BYTES + 1));
            for _ in 0..n {
                let byte = r.u8()?;
                let action =
                    Action::from_byte(byte).ok_or_else(|| FormatError::Invalid(format!("action byte {byte}")))?;
                let obs = Observation::unpack(&r.array::<16>()?).map_err(|e| FormatError::Invalid(e.to_string()))?;
                let reward = r.f32()?;
                traj.push(TrajectoryRecord { action, obs, reward });
            }
            trajectories.push(traj);
        }
        r.finish()?;
        Ok(TrajectoryBuffer { label: TeamTaskId { k, strategy, task }, seed, max_len, trajectories })
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn mean_len(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        self.trajectories.iter().map(Vec::len).sum::<usize>() as f64 / self.trajectories.len() as f64
    }
}

fn to_u32(n: usize) -> Result<u32, FormatError> {
    u32::try_from(n).map_err(|_| FormatError::Invalid(format!("count {n} exceeds 32 bits")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::DomainKind;
    use crate::teammates::ExperimentSet;
    use proptest::prelude::*;

    fn lbf7() -> GridConfig {
        GridConfig::standard(DomainKind::Lbf, 7)
    }

    fn team(set: ExperimentSet, i: usize) -> TeamTaskId {
        set.team_tasks()[i]
    }

    #[test]
    fn single_step_collection() {
        let b = collect(&lbf7(), team(ExperimentSet::TeamId, 0), Behavior::BestResponse, 1, 1, 9).unwrap();
        assert_eq!(b.trajectories.len(), 1);
        assert_eq!(b.trajectories[0].len(), 1);
    }

    #[test]
    fn zero_counts_rejected() {
        let tt = team(ExperimentSet::TeamId, 0);
        assert!(collect(&lbf7(), tt, Behavior::BestResponse, 0, 5, 1).is_err());
        assert!(collect(&lbf7(), tt, Behavior::BestResponse, 5, 0, 1).is_err());
    }

    #[test]
    fn collection_is_deterministic() {
        let tt = team(ExperimentSet::TaskAndTeamId, 7);
        let a = collect(&lbf7(), tt, Behavior::Mixture(MIXTURE_EPSILON), 20, 64, 5).unwrap();
        let b = collect(&lbf7(), tt, Behavior::Mixture(MIXTURE_EPSILON), 20, 64, 5).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        let c = collect(&lbf7(), tt, Behavior::Mixture(MIXTURE_EPSILON), 20, 64, 6).unwrap();
        assert_ne!(a.to_bytes().unwrap(), c.to_bytes().unwrap());
    }

    #[test]
    fn lengths_respect_truncation() {
        let cfg = GridConfig::standard(DomainKind::Pp, 7);
        let b = collect(&cfg, team(ExperimentSet::TeamId, 2), Behavior::BestResponse, 50, 6, 3).unwrap();
        assert!(b.trajectories.iter().all(|t| (1..=6).contains(&t.len())));
        assert!(b.trajectories.iter().any(|t| t.len() == 6));
    }

    #[test]
    fn best_response_episodes_are_short() {
        // the original-team reference on 7×7 LBF task identification is 6.87 steps
        let cfg = lbf7();
        let mut lens = Vec::new();
        for tt in ExperimentSet::TaskId.team_tasks() {
            let b = collect(&cfg, tt, Behavior::BestResponse, 500, 64, 11).unwrap();
            lens.push(b.mean_len());
        }
        let mean = lens.iter().sum::<f64>() / lens.len() as f64;
        assert!((1.0..10.0).contains(&mean), "mean length {mean} ({lens:?})");
    }

    #[test]
    fn replay_reproduces_observations() {
        for (cfg, set) in [(lbf7(), ExperimentSet::TaskAndTeamId), (GridConfig::standard(DomainKind::Pp, 7), ExperimentSet::TeamId)] {
            for tt in set.team_tasks().into_iter().step_by(2) {
                let b = collect(&cfg, tt, Behavior::Mixture(MIXTURE_EPSILON), 10, 64, 21).unwrap();
                for i in 0..b.trajectories.len() {
                    let obs: Vec<Observation> = b.trajectories[i].iter().map(|r| r.obs).collect();
                    assert_eq!(replay(&cfg, &b, i).unwrap(), obs, "{tt} episode {i}");
                }
            }
        }
    }

    fn fake_buffer(tt: TeamTaskId, n: usize) -> TrajectoryBuffer {
        let rec = TrajectoryRecord { action: Action::North, obs: Observation(tt.k as u128), reward: 0.0 };
        let trajectories = (0..n).map(|i| vec![rec; 1 + i % 4]).collect();
        TrajectoryBuffer { label: tt, seed: 0, max_len: 4, trajectories }
    }

    #[test]
    fn splits_are_stratified() {
        let buffers: Vec<_> = ExperimentSet::TeamId.team_tasks().into_iter().map(|tt| fake_buffer(tt, 100)).collect();
        let ds = build_dataset(&buffers, [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!(ds.n_classes(), 3);
        for class in 0..3 {
            let count = |s| ds.split(s).filter(|x| x.class == class).count();
            assert_eq!((count(Split::Train), count(Split::Validation), count(Split::Test)), (80, 10, 10));
        }
        let all = build_dataset(&buffers, [1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(all.split(Split::Train).count(), 300);
    }

    #[test]
    fn label_marginals_match_collection() {
        let tts = ExperimentSet::TaskId.team_tasks();
        let sizes = [7, 13, 5, 30, 9];
        let mut buffers: Vec<_> = tts.iter().zip(sizes).map(|(&tt, n)| fake_buffer(tt, n)).collect();
        buffers.push(fake_buffer(tts[1], 4));
        let ds = build_dataset(&buffers, [0.7, 0.15, 0.15], 2).unwrap();
        let expected = [7, 17, 5, 30, 9];
        for (class, &n) in expected.iter().enumerate() {
            assert_eq!(ds.samples.iter().filter(|s| s.class == class).count(), n);
            for s in Split::ALL {
                assert!(ds.split(s).any(|x| x.class == class), "class {class} missing from {s:?}");
            }
        }
    }

    #[test]
    fn shuffle_is_seeded() {
        let buffers: Vec<_> = ExperimentSet::TeamId.team_tasks().into_iter().map(|tt| fake_buffer(tt, 40)).collect();
        let a = build_dataset(&buffers, [0.5, 0.25, 0.25], 4).unwrap();
        let b = build_dataset(&buffers, [0.5, 0.25, 0.25], 4).unwrap();
        let c = build_dataset(&buffers, [0.5, 0.25, 0.25], 5).unwrap();
        let lens = |d: &LabelledDataset| d.samples.iter().map(|s| s.trajectory.len()).collect::<Vec<_>>();
        assert_eq!(a, b);
        assert_ne!(lens(&a), lens(&c));
    }

    #[test]
    fn too_few_trajectories_is_an_error() {
        let buffers = vec![fake_buffer(team(ExperimentSet::TeamId, 0), 2)];
        assert!(matches!(
            build_dataset(&buffers, [0.8, 0.1, 0.1], 0),
            Err(TrajectoryError::Stratification { k: 1, count: 2, splits: 3 })
        ));
        assert!(build_dataset(&buffers, [0.5, 0.5, 0.0], 0).is_ok());
        assert!(build_dataset(&buffers, [0.5, 0.4, 0.0], 0).is_err());
    }

    #[test]
    fn empty_buffer_is_header_only() {
        let b = TrajectoryBuffer { label: team(ExperimentSet::TaskId, 3), seed: 77, max_len: 64, trajectories: vec![] };
        let bytes = b.to_bytes().unwrap();
        assert_eq!(TrajectoryBuffer::from_bytes(&bytes).unwrap(), b);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.rbtj");
        b.save(&path).unwrap();
        assert_eq!(TrajectoryBuffer::load(&path).unwrap(), b);
    }

    #[test]
    fn parse_errors_are_distinct() {
        let b = collect(&lbf7(), team(ExperimentSet::TeamId, 1), Behavior::BestResponse, 3, 10, 1).unwrap();
        let bytes = b.to_bytes().unwrap();
        for cut in [0, 3, 5, 20, bytes.len() - 1] {
            let res = TrajectoryBuffer::from_bytes(&bytes[..cut]);
            assert!(matches!(res, Err(FormatError::Truncated(_)) | Err(FormatError::BadMagic { .. })), "cut {cut}");
        }
        assert!(matches!(TrajectoryBuffer::from_bytes(&bytes[..bytes.len() - 1]), Err(FormatError::Truncated(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(TrajectoryBuffer::from_bytes(&bad), Err(FormatError::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(TrajectoryBuffer::from_bytes(&bad), Err(FormatError::BadVersion(9))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(TrajectoryBuffer::from_bytes(&long), Err(FormatError::Trailing(1))));
    }

    fn arb_record() -> impl Strategy<Value = TrajectoryRecord> {
        (0u8..6, any::<u128>(), any::<f32>()).prop_map(|(a, bits, reward)| TrajectoryRecord {
            action: Action::from_byte(a).unwrap(),
            obs: Observation(bits & ((1u128 << crate::env::OBS_BITS) - 1)),
            reward: if reward.is_nan() { 0.0 } else { reward },
        })
    }

    fn arb_buffer() -> impl Strategy<Value = TrajectoryBuffer> {
        let tts = ExperimentSet::TaskAndTeamId.team_tasks();
        (0..tts.len(), any::<u64>(), 1usize..12)
            .prop_flat_map(move |(i, seed, max_len)| {
                let tt = tts[i];
                proptest::collection::vec(proptest::collection::vec(arb_record(), 1..=max_len), 0..100)
                    .prop_map(move |trajectories| TrajectoryBuffer { label: tt, seed, max_len, trajectories })
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn round_trip_is_byte_identical(b in arb_buffer()) {
            let bytes = b.to_bytes().unwrap();
            let back = TrajectoryBuffer::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &b);
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }
}
