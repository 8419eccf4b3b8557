//! The DAG: insertion, tips, uniform tip selection and confirmation.

use std::collections::{HashMap, HashSet, VecDeque};

use indexmap::IndexSet;
use rand::seq::index;
use rand::Rng;

use super::transaction::{LedgerTransaction, TxId};
use super::LedgerError;

pub const DEFAULT_CONFIRMATION_K: usize = 2;

#[derive(Debug, Clone)]
struct Node {
    tx: LedgerTransaction,
    /// Distinct transitive approvers counted so far, capped at `k`.
    approvers: usize,
    direct_approvers: usize,
}

#[derive(Debug, Clone)]
pub struct Tangle {
    nodes: HashMap<TxId, Node>,
    order: Vec<TxId>,
    tips: IndexSet<TxId>,
    confirmed: HashSet<TxId>,
    newly_confirmed: Vec<TxId>,
    k: usize,
}

impl Tangle {
    pub fn new(k: usize) -> Self {
        Tangle {
            nodes: HashMap::new(),
            order: Vec::new(),
            tips: IndexSet::new(),
            confirmed: HashSet::new(),
            newly_confirmed: Vec::new(),
            k: k.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn contains(&self, id: &TxId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn get(&self, id: &TxId) -> Option<&LedgerTransaction> {
        self.nodes.get(id).map(|n| &n.tx)
    }

    pub fn tips(&self) -> impl Iterator<Item = &TxId> {
        self.tips.iter()
    }

    pub fn tip_count(&self) -> usize {
        self.tips.len()
    }

    pub fn is_confirmed(&self, id: &TxId) -> bool {
        self.confirmed.contains(id)
    }

    pub fn confirmed_count(&self) -> usize {
        self.confirmed.len()
    }

    /// Transactions in insertion order.
    pub fn transactions(&self) -> impl Iterator<Item = &LedgerTransaction> {
        self.order.iter().map(|id| &self.nodes[id].tx)
    }

    pub fn genesis(&self) -> Option<TxId> {
        self.order.first().copied()
    }

    /// Two uniformly drawn distinct tips, or the same tip twice when only one exists.
    pub fn select_tips<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(TxId, TxId), LedgerError> {
        match self.tips.len() {
            0 => Err(LedgerError::EmptyTangle),
            1 => Ok((self.tips[0], self.tips[0])),
            n => {
                let pick = index::sample(rng, n, 2);
                Ok((self.tips[pick.index(0)], self.tips[pick.index(1)]))
            }
        }
    }

    /// Inserts a signed transaction whose parents are already present.
    pub fn insert(&mut self, tx: LedgerTransaction) -> Result<(), LedgerError> {
        if self.nodes.contains_key(&tx.id) {
            return Err(LedgerError::Duplicate(tx.id));
        }
        if !tx.verify_signature() {
            return Err(LedgerError::InvalidSignature);
        }
        match (tx.approvals.len(), self.is_empty()) {
            (0, true) => {}
            (0, false) => return Err(LedgerError::InvalidApprovals("second genesis")),
            (2, false) => {
                if let Some(missing) = tx.approvals.iter().find(|a| !self.nodes.contains_key(a)) {
                    return Err(LedgerError::UnknownParent(*missing));
                }
            }
            _ => return Err(LedgerError::InvalidApprovals("expected two approvals")),
        }

        let id = tx.id;
        let parents: Vec<TxId> = dedup(&tx.approvals);
        for p in &parents {
            self.tips.swap_remove(p);
            if let Some(n) = self.nodes.get_mut(p) {
                n.direct_approvers += 1;
            }
        }
        self.nodes.insert(
            id,
            Node {
                tx,
                approvers: 0,
                direct_approvers: 0,
            },
        );
        self.order.push(id);
        self.tips.insert(id);
        self.count_new_approver(parents);
        Ok(())
    }

    /// Every ancestor of a new transaction gains one distinct transitive
    /// approver. Confirmed ancestors are skipped: their own ancestors were
    /// confirmed no later than they were.
    fn count_new_approver(&mut self, parents: Vec<TxId>) {
        let mut seen: HashSet<TxId> = HashSet::new();
        let mut queue: VecDeque<TxId> = parents.into_iter().collect();
        while let Some(a) = queue.pop_front() {
            if !seen.insert(a) || self.confirmed.contains(&a) {
                continue;
            }
            let node = self.nodes.get_mut(&a).expect("parents exist");
            node.approvers += 1;
            if node.approvers >= self.k {
                self.confirmed.insert(a);
                self.newly_confirmed.push(a);
            }
            queue.extend(node.tx.approvals.iter().copied());
        }
    }

    /// Ids confirmed since the previous call, in the order they crossed the threshold.
    pub fn confirm_step(&mut self) -> Vec<TxId> {
        std::mem::take(&mut self.newly_confirmed)
    }

    /// Checks the structural invariants from scratch.
    pub fn check_invariants(&self) -> Result<(), String> {
        let pos: HashMap<TxId, usize> = self.order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut approved: HashSet<TxId> = HashSet::new();
        for (i, id) in self.order.iter().enumerate() {
            let tx = &self.nodes[id].tx;
            if i > 0 && tx.approvals.len() != 2 {
                return Err(format!("{id} has {} approvals", tx.approvals.len()));
            }
            for a in &tx.approvals {
                // parents precede children in insertion order, so no cycle can exist
                match pos.get(a) {
                    Some(&j) if j < i => {}
                    _ => return Err(format!("{id} approves {a} which is not earlier")),
                }
                approved.insert(*a);
            }
        }
        let expected: HashSet<TxId> = self.order.iter().filter(|id| !approved.contains(id)).copied().collect();
        let actual: HashSet<TxId> = self.tips.iter().copied().collect();
        if expected != actual {
            return Err("tip set does not match unapproved transactions".into());
        }
        Ok(())
    }
}

fn dedup(ids: &[TxId]) -> Vec<TxId> {
    let mut v = ids.to_vec();
    v.dedup();
    v
}
