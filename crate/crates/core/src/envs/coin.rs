//! Coin Division: a divider splits five coins over six bins with fixed
//! memberships, then every member of a bin accepts or rejects it.
//!
//! Stage one is the divider's allocation (one state, one action per
//! allocation). Stage two has one state per allocation; each player's action
//! is a bitmask over the bins it belongs to (bit set = accept). A bin pays
//! out only if all of its members accept. Stage-two behaviour is fixed: every
//! member accepts each bin independently with probability `accept_prob`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{joint_actions, GameBuilder, MarkovGame, PolicyProfile};

pub const COIN_TOTAL: usize = 5;

/// Members of each bin.
pub const COIN_BINS: [&[usize]; 6] = [&[], &[0], &[0, 1], &[0, 2], &[1, 2], &[1, 2, 3]];

const PLAYERS: usize = 4;

/// Who is paid when a bin pays out `coins * |members|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoinPayout {
    /// Each member of the bin.
    Members,
    /// All four players.
    AllPlayers,
}

impl std::str::FromStr for CoinPayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "members" => Ok(CoinPayout::Members),
            "all" => Ok(CoinPayout::AllPlayers),
            other => Err(Error::argument(format!("unknown payout rule '{other}'"))),
        }
    }
}

/// Every allocation of [`COIN_TOTAL`] coins into the six bins, in
/// lexicographic order. This is the order of the divider's actions.
pub fn coin_allocations() -> Vec<[usize; 6]> {
    fn rec(bin: usize, left: usize, cur: &mut [usize; 6], out: &mut Vec<[usize; 6]>) {
        if bin == 5 {
            cur[5] = left;
            out.push(*cur);
            return;
        }
        for c in 0..=left {
            cur[bin] = c;
            rec(bin + 1, left - c, cur, out);
        }
    }
    let mut out = Vec::new();
    rec(0, COIN_TOTAL, &mut [0; 6], &mut out);
    out
}

fn member_bins(player: usize) -> Vec<usize> {
    (0..COIN_BINS.len())
        .filter(|&b| COIN_BINS[b].contains(&player))
        .collect()
}

fn mask_name(bins: &[usize], mask: usize) -> String {
    bins.iter()
        .enumerate()
        .map(|(m, b)| format!("{}{b}", if mask >> m & 1 == 1 { 'A' } else { 'R' }))
        .collect()
}

/// The game plus the fixed stage-two behaviour and the free/fixed mask used
/// by the solver (only the divider's allocation is optimized).
#[derive(Debug, Clone)]
pub struct CoinDivision {
    pub game: MarkovGame,
    /// Uniform allocation at the root, stochastic acceptance afterwards.
    pub profile: PolicyProfile,
    /// `[player][state]`, true where the solver may choose the action.
    pub free: Vec<Vec<bool>>,
    pub allocations: Vec<[usize; 6]>,
    pub accept_prob: f64,
    pub payout: CoinPayout,
}

pub fn coin_division(accept_prob: f64, payout: CoinPayout) -> Result<CoinDivision> {
    if !(0.0..=1.0).contains(&accept_prob) {
        return Err(Error::argument(format!(
            "accept probability {accept_prob} not in [0, 1]"
        )));
    }
    let allocations = coin_allocations();
    let bins: Vec<Vec<usize>> = (0..PLAYERS).map(member_bins).collect();
    let stage_two: Vec<Vec<String>> = bins
        .iter()
        .map(|bs| (0..1usize << bs.len()).map(|m| mask_name(bs, m)).collect())
        .collect();

    let mut b = GameBuilder::new(PLAYERS, 1.0, 2);
    let mut root_actions = vec![vec!["wait".to_string()]; PLAYERS];
    root_actions[0] = allocations
        .iter()
        .map(|a| a.iter().map(|c| c.to_string()).collect())
        .collect();
    let root = b.add_state("divide", root_actions);
    let alloc_states: Vec<_> = allocations
        .iter()
        .map(|a| {
            let name: String = a.iter().map(|c| c.to_string()).collect();
            b.add_state(format!("alloc:{name}"), stage_two.clone())
        })
        .collect();
    let end = b.add_state("end", vec![vec!["wait".to_string()]; PLAYERS]);

    for (i, &s) in alloc_states.iter().enumerate() {
        let mut joint = vec![0; PLAYERS];
        joint[0] = i;
        b.set_outcome(root, &joint, vec![(s, 1.0)], vec![0.0; PLAYERS])?;
    }
    let sizes: Vec<usize> = stage_two.iter().map(Vec::len).collect();
    for (alloc, &s) in allocations.iter().zip(&alloc_states) {
        for joint in joint_actions(&sizes) {
            let accepts = |p: usize, bin: usize| {
                let m = bins[p].iter().position(|&x| x == bin).expect("member");
                joint[p] >> m & 1 == 1
            };
            let mut rewards = vec![0.0; PLAYERS];
            for (bin, members) in COIN_BINS.iter().enumerate() {
                if members.iter().all(|&p| accepts(p, bin)) {
                    let amount = (alloc[bin] * members.len()) as f64;
                    match payout {
                        CoinPayout::Members => members.iter().for_each(|&p| rewards[p] += amount),
                        CoinPayout::AllPlayers => rewards.iter_mut().for_each(|r| *r += amount),
                    }
                }
            }
            b.set_outcome(s, &joint, vec![(end, 1.0)], rewards)?;
        }
    }
    b.set_outcome(end, &[0; PLAYERS], vec![(end, 1.0)], vec![0.0; PLAYERS])?;
    let game = b.build()?;

    let accept_dist = |p: usize| -> Vec<f64> {
        let n = bins[p].len();
        (0..1usize << n)
            .map(|m| {
                (0..n)
                    .map(|i| if m >> i & 1 == 1 { accept_prob } else { 1.0 - accept_prob })
                    .product()
            })
            .collect()
    };
    let layer: Vec<Vec<Vec<f64>>> = (0..PLAYERS)
        .map(|p| {
            (0..game.num_states())
                .map(|s| {
                    if s == root {
                        let n = game.num_actions(s, p);
                        vec![1.0 / n as f64; n]
                    } else if s == end {
                        vec![1.0]
                    } else {
                        accept_dist(p)
                    }
                })
                .collect()
        })
        .collect();
    let mut free = vec![vec![false; game.num_states()]; PLAYERS];
    free[0][root] = true;
    Ok(CoinDivision {
        game,
        profile: PolicyProfile::from_layers(vec![layer]),
        free,
        allocations,
        accept_prob,
        payout,
    })
}
