//! Accounts, validating power, validator sets and epoch sealing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Hash32, ValidatorId};

/// Default validator threshold `U` in tokens.
pub const DEFAULT_THRESHOLD: u64 = 1_000_000;
/// Delegations to one validator may not exceed this multiple of its self stake.
pub const DELEGATION_CAP_MULTIPLIER: u64 = 15;
pub const MIN_DELEGATION: u64 = 1;
pub const MIN_LOCK_DAYS: u32 = 1;
pub const MAX_LOCK_DAYS: u32 = 365;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub id: ValidatorId,
    /// Tokens held, `t_i`.
    pub balance: u64,
    /// Tokens staked on itself.
    #[serde(default)]
    pub self_stake: u64,
    /// Tokens delegated to other accounts.
    #[serde(default)]
    pub delegations: BTreeMap<ValidatorId, u64>,
    /// Transaction-staked tokens; carried, never used by consensus.
    #[serde(default)]
    pub tx_staked: u64,
}

impl Account {
    pub fn new(id: ValidatorId, balance: u64) -> Self {
        Account {
            id,
            balance,
            self_stake: balance,
            ..Default::default()
        }
    }

    pub fn total_delegated_out(&self) -> u64 {
        self.delegations.values().sum()
    }

    /// Tokens neither self-staked nor delegated.
    pub fn free_balance(&self) -> u64 {
        self.balance
            .saturating_sub(self.self_stake)
            .saturating_sub(self.total_delegated_out())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PowerModel {
    /// Power equals tokens held plus tokens delegated in.
    Linear,
    /// Validators get `U·⌊t/U⌋`, users holding fewer than `U` tokens get 1.
    Floored {
        threshold: u64,
        /// Accounts below the threshold get no seat at all.
        #[serde(default)]
        validators_only: bool,
    },
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel::Linear
    }
}

/// Weight of an account given the tokens delegated to it.
pub fn validating_power(account: &Account, delegated_in: u64, model: PowerModel) -> u64 {
    let t = account.balance.saturating_add(delegated_in);
    match model {
        PowerModel::Linear => t,
        PowerModel::Floored { threshold, .. } => floored_power(t, threshold),
    }
}

fn floored_power(t: u64, u: u64) -> u64 {
    let u = u.max(1);
    if t >= u {
        u * (t / u)
    } else if t >= 1 {
        1
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum DelegationViolation {
    #[error("delegation below the minimum of {MIN_DELEGATION} token")]
    BelowMinimum,
    #[error("lock period must be between {MIN_LOCK_DAYS} and {MAX_LOCK_DAYS} days")]
    LockOutOfRange,
    #[error("delegations would exceed {DELEGATION_CAP_MULTIPLIER}x the validator's self stake")]
    CapExceeded,
    #[error("delegator does not hold enough free tokens")]
    InsufficientBalance,
}

pub fn validate_delegation(
    delegator: &Account,
    validator: &Account,
    amount: u64,
    lock_days: u32,
    existing_total_delegated: u64,
) -> Result<(), DelegationViolation> {
    if amount < MIN_DELEGATION {
        return Err(DelegationViolation::BelowMinimum);
    }
    if !(MIN_LOCK_DAYS..=MAX_LOCK_DAYS).contains(&lock_days) {
        return Err(DelegationViolation::LockOutOfRange);
    }
    let cap = validator.self_stake.saturating_mul(DELEGATION_CAP_MULTIPLIER);
    if existing_total_delegated.saturating_add(amount) > cap {
        return Err(DelegationViolation::CapExceeded);
    }
    if amount > delegator.free_balance() {
        return Err(DelegationViolation::InsufficientBalance);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StakeError {
    #[error("no account has positive validating power")]
    EmptyValidatorSet,
    #[error("epoch has {decided} decided frames, {required} required")]
    EpochNotComplete { decided: u64, required: u64 },
}

/// Stake distribution of one epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<ValidatorId, u64>", into = "BTreeMap<ValidatorId, u64>")]
pub struct ValidatorSet {
    powers: BTreeMap<ValidatorId, u64>,
    total: u64,
    /// Validators sorted by power descending, then id ascending.
    sorted: Vec<ValidatorId>,
}

/// Smallest integer strictly above two thirds of `total`.
pub fn quorum(total: u64) -> u64 {
    (2 * total as u128 / 3) as u64 + 1
}

impl ValidatorSet {
    /// Builds a set from explicit weights; zero weights are dropped.
    pub fn from_powers(
        powers: impl IntoIterator<Item = (ValidatorId, u64)>,
    ) -> Result<Self, StakeError> {
        let powers: BTreeMap<_, _> = powers.into_iter().filter(|(_, w)| *w > 0).collect();
        if powers.is_empty() {
            return Err(StakeError::EmptyValidatorSet);
        }
        let total = powers.values().sum();
        let mut sorted: Vec<ValidatorId> = powers.keys().copied().collect();
        sorted.sort_by(|a, b| powers[b].cmp(&powers[a]).then(a.cmp(b)));
        Ok(ValidatorSet {
            powers,
            total,
            sorted,
        })
    }

    /// Unit-stake set over validators `0..n`.
    pub fn uniform(n: u32) -> Result<Self, StakeError> {
        Self::from_powers((0..n).map(|i| (ValidatorId(i), 1)))
    }

    pub fn power(&self, v: ValidatorId) -> u64 {
        self.powers.get(&v).copied().unwrap_or(0)
    }

    pub fn contains(&self, v: ValidatorId) -> bool {
        self.powers.contains_key(&v)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn quorum(&self) -> u64 {
        quorum(self.total)
    }

    pub fn len(&self) -> usize {
        self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ValidatorId> + '_ {
        self.powers.keys().copied()
    }

    pub fn powers(&self) -> &BTreeMap<ValidatorId, u64> {
        &self.powers
    }

    /// Stake descending, id ascending.
    pub fn sorted_by_stake(&self) -> &[ValidatorId] {
        &self.sorted
    }

    /// Canonical bytes: (u32 id, u64 power) pairs in id order.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 * self.powers.len());
        for (id, w) in &self.powers {
            out.extend_from_slice(&id.0.to_be_bytes());
            out.extend_from_slice(&w.to_be_bytes());
        }
        out
    }
}

impl TryFrom<BTreeMap<ValidatorId, u64>> for ValidatorSet {
    type Error = StakeError;
    fn try_from(m: BTreeMap<ValidatorId, u64>) -> Result<Self, StakeError> {
        ValidatorSet::from_powers(m)
    }
}

impl From<ValidatorSet> for BTreeMap<ValidatorId, u64> {
    fn from(vs: ValidatorSet) -> Self {
        vs.powers
    }
}

pub fn build_validator_set(accounts: &[Account], model: PowerModel) -> Result<ValidatorSet, StakeError> {
    let mut delegated_in: BTreeMap<ValidatorId, u64> = BTreeMap::new();
    for a in accounts {
        for (target, amt) in &a.delegations {
            *delegated_in.entry(*target).or_default() += amt;
        }
    }
    let powers = accounts.iter().filter_map(|a| {
        let din = delegated_in.get(&a.id).copied().unwrap_or(0);
        if let PowerModel::Floored {
            threshold,
            validators_only: true,
        } = model
        {
            if a.balance.saturating_add(din) < threshold {
                return None;
            }
        }
        Some((a.id, validating_power(a, din, model)))
    });
    ValidatorSet::from_powers(powers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "amount")]
pub enum StakeChange {
    Deposit(u64),
    Withdraw(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueuedChange {
    pub validator: ValidatorId,
    pub change: StakeChange,
    /// First epoch in which the change is in force.
    pub effective_epoch: u64,
}

/// Epoch counter plus the validator set in force and queued changes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochState {
    pub epoch: u64,
    pub validators: ValidatorSet,
    pub prev_epoch_hash: Hash32,
    pub queued: Vec<QueuedChange>,
    /// Withdrawals take effect this many epochs after they are requested.
    pub withdrawal_delay_epochs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub number: u64,
    pub prev_epoch_hash: Hash32,
    pub validators: ValidatorSet,
}

impl EpochState {
    pub fn genesis(validators: ValidatorSet) -> Self {
        EpochState {
            epoch: 1,
            validators,
            prev_epoch_hash: Hash32::ZERO,
            queued: Vec::new(),
            withdrawal_delay_epochs: 1,
        }
    }

    /// Deposits apply at the next seal; withdrawals wait out the delay.
    pub fn queue(&mut self, validator: ValidatorId, change: StakeChange) {
        let delay = match change {
            StakeChange::Deposit(_) => 1,
            StakeChange::Withdraw(_) => self.withdrawal_delay_epochs.max(1),
        };
        self.queued.push(QueuedChange {
            validator,
            change,
            effective_epoch: self.epoch + delay,
        });
    }
}

/// Digest binding a new epoch to the finalized state of the previous one.
pub fn epoch_hash(epoch: u64, last_block: &Hash32, vs: &ValidatorSet) -> Hash32 {
    Hash32::digest_of(&[&epoch.to_be_bytes(), last_block.as_bytes(), &vs.encode()])
}

/// Closes the current epoch once `epoch_len` frames are decided. Returns the
/// record of the new epoch and updates `state` in place.
pub fn seal_epoch(
    state: &mut EpochState,
    decided_frames: u64,
    last_block: &Hash32,
    epoch_len: u64,
) -> Result<EpochRecord, StakeError> {
    if decided_frames < epoch_len {
        return Err(StakeError::EpochNotComplete {
            decided: decided_frames,
            required: epoch_len,
        });
    }
    let prev_epoch_hash = epoch_hash(state.epoch, last_block, &state.validators);
    let next = state.epoch + 1;
    let mut powers = state.validators.powers().clone();
    let mut keep = Vec::new();
    for q in state.queued.drain(..) {
        if q.effective_epoch > next {
            keep.push(q);
            continue;
        }
        let w = powers.entry(q.validator).or_default();
        match q.change {
            StakeChange::Deposit(a) => *w = w.saturating_add(a),
            StakeChange::Withdraw(a) => *w = w.saturating_sub(a),
        }
    }
    state.queued = keep;
    let validators = ValidatorSet::from_powers(powers)?;
    state.epoch = next;
    state.validators = validators.clone();
    state.prev_epoch_hash = prev_epoch_hash;
    Ok(EpochRecord {
        number: next,
        prev_epoch_hash,
        validators,
    })
}
