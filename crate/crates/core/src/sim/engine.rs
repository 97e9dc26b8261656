//! Synchronous round engine.
//!
//! A protocol advances in *steps*. In one step every node performs a fixed
//! number of communication rounds against the snapshot of states taken at
//! the start of the step; all nodes then switch to their new states at once.
//! The engine owns the clock (rounds), the message counter and the contact
//! source.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::failure::FailureModel;
use super::rng::{uniform_peer, NodeRng};
use crate::error::{Error, Result};
use crate::key::NodeId;

pub const DEFAULT_MAX_ROUNDS: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub failure: FailureModel,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u64,
}

fn default_max_rounds() -> u64 {
    DEFAULT_MAX_ROUNDS
}

impl SimConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        SimConfig {
            n,
            seed,
            failure: FailureModel::None,
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }

    pub fn with_failure(mut self, failure: FailureModel) -> Self {
        self.failure = failure;
        self
    }

    pub fn with_max_rounds(mut self, max_rounds: u64) -> Self {
        self.max_rounds = max_rounds;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n >= u32::MAX as usize {
            return Err(Error::invalid("n", self.n, "must lie in [1, 2^32 - 1)"));
        }
        self.failure.validate()
    }
}

/// Maps `(node, slot)` to the node contacted in that slot of the step.
pub type ContactFn = dyn Fn(NodeId, u32) -> NodeId + Send + Sync;

/// Where contacts come from. `Forced` replaces random sampling with a fixed
/// function, for tests that need a particular communication pattern.
#[derive(Clone, Default)]
pub enum Contacts {
    #[default]
    Uniform,
    Forced(Arc<ContactFn>),
}

impl Contacts {
    pub fn forced(f: impl Fn(NodeId, u32) -> NodeId + Send + Sync + 'static) -> Self {
        Contacts::Forced(Arc::new(f))
    }
}

impl fmt::Debug for Contacts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Contacts::Uniform => f.write_str("Uniform"),
            Contacts::Forced(_) => f.write_str("Forced(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    config: SimConfig,
    contacts: Contacts,
    round: u64,
    step: u64,
    messages: u64,
}

impl Network {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        Ok(Network {
            config,
            contacts: Contacts::Uniform,
            round: 0,
            step: 0,
            messages: 0,
        })
    }

    pub fn with_contacts(mut self, contacts: Contacts) -> Self {
        self.contacts = contacts;
        self
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn failure(&self) -> &FailureModel {
        &self.config.failure
    }

    /// Rounds elapsed so far.
    pub fn round(&self) -> u64 {
        self.round
    }

    /// Steps completed so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn messages(&self) -> u64 {
        self.messages
    }

    /// Errors if `rounds` more rounds would exceed the budget.
    pub fn check_budget(&self, rounds: u64) -> Result<()> {
        let needed = self.round.saturating_add(rounds);
        if needed > self.config.max_rounds {
            return Err(Error::BudgetExceeded {
                needed,
                budget: self.config.max_rounds,
            });
        }
        Ok(())
    }

    /// Context for `node` in the current step.
    #[inline]
    pub fn ctx(&self, node: NodeId) -> NodeCtx<'_> {
        NodeCtx {
            net: self,
            node,
            rng: NodeRng::new(self.config.seed, node, self.step),
            slot: 0,
            messages: 0,
        }
    }

    /// Closes the current step, charging `rounds` rounds and `messages`
    /// messages.
    pub fn finish_step(&mut self, rounds: u64, messages: u64) -> Result<()> {
        self.check_budget(rounds)?;
        self.round += rounds;
        self.step += 1;
        self.messages += messages;
        Ok(())
    }

    /// Runs one synchronous step of `rounds` rounds. `node_step` sees only
    /// the pre-step snapshot `states`; the returned vector holds every
    /// node's new state.
    pub fn run_iteration<S, T, F>(&mut self, states: &[S], rounds: u32, mut node_step: F) -> Result<Vec<T>>
    where
        F: FnMut(&mut NodeCtx<'_>, &[S]) -> T,
    {
        debug_assert_eq!(states.len(), self.n());
        self.check_budget(rounds as u64)?;
        let mut messages = 0;
        let next = (0..self.n() as NodeId)
            .map(|v| {
                let mut ctx = self.ctx(v);
                let s = node_step(&mut ctx, states);
                messages += ctx.messages;
                s
            })
            .collect();
        self.finish_step(rounds as u64, messages)?;
        Ok(next)
    }
}

/// One node's view of the current step: its random stream, its failure
/// pattern, and a slot counter that maps each communication to a round.
pub struct NodeCtx<'a> {
    net: &'a Network,
    node: NodeId,
    rng: NodeRng,
    slot: u32,
    messages: u64,
}

impl<'a> NodeCtx<'a> {
    #[inline]
    pub fn node(&self) -> NodeId {
        self.node
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.net.n()
    }

    #[inline]
    pub fn rng(&mut self) -> &mut NodeRng {
        &mut self.rng
    }

    /// Slot of the next communication within the step.
    #[inline]
    pub fn slot(&self) -> u32 {
        self.slot
    }

    pub fn messages(&self) -> u64 {
        self.messages
    }

    /// Whether this node fails in the given slot of the current step.
    #[inline]
    pub fn fails_at(&self, slot: u32) -> bool {
        self.net
            .failure()
            .fails(self.net.seed(), self.node, self.net.round() + slot as u64)
    }

    /// The contact for the current slot; advances the slot. Uniform contacts
    /// consume exactly one draw.
    #[inline]
    pub fn contact(&mut self) -> NodeId {
        let peer = match &self.net.contacts {
            Contacts::Uniform => uniform_peer(&mut self.rng, self.net.n()),
            Contacts::Forced(f) => f(self.node, self.slot),
        };
        self.slot += 1;
        peer
    }

    /// Pulls from the current slot's contact. `None` if this node fails in
    /// that round. The contact is drawn either way.
    #[inline]
    pub fn pull(&mut self) -> Option<NodeId> {
        let failed = self.fails_at(self.slot);
        let peer = self.contact();
        if failed {
            None
        } else {
            self.messages += 1;
            Some(peer)
        }
    }

    /// Push to the current slot's contact; same semantics as [`pull`](Self::pull).
    #[inline]
    pub fn push(&mut self) -> Option<NodeId> {
        self.pull()
    }

    /// Leaves the current slot unused.
    #[inline]
    pub fn skip(&mut self) {
        self.slot += 1;
    }
}
