//! Finite normal-form games: best response and pure-strategy Nash equilibrium.

use crate::error::GameError;

/// Largest number of joint profiles `pure_nash` will enumerate.
pub const ENUMERATION_BUDGET: u64 = 1_000_000;
/// Sweep cap of the iterated best-response fallback.
pub const MAX_BR_SWEEPS: usize = 10;

/// Game with lazily evaluated payoffs. `payoff(profile)` returns one value
/// per player and must be side-effect free.
pub struct NormalFormGame<'a> {
    pub actions_per_player: Vec<usize>,
    payoff: Box<dyn Fn(&[usize]) -> Vec<f64> + 'a>,
}

impl<'a> NormalFormGame<'a> {
    pub fn new(actions_per_player: Vec<usize>, payoff: impl Fn(&[usize]) -> Vec<f64> + 'a) -> Self {
        assert!(!actions_per_player.is_empty(), "game needs at least one player");
        assert!(actions_per_player.iter().all(|&n| n >= 1), "every player needs an action");
        NormalFormGame {
            actions_per_player,
            payoff: Box::new(payoff),
        }
    }

    /// Game backed by a dense table in row-major profile order.
    pub fn from_table(actions_per_player: Vec<usize>, table: Vec<Vec<f64>>) -> Self {
        let dims = actions_per_player.clone();
        NormalFormGame::new(actions_per_player, move |p| table[flat_index(&dims, p)].clone())
    }

    pub fn n_players(&self) -> usize {
        self.actions_per_player.len()
    }

    pub fn payoff(&self, profile: &[usize]) -> Vec<f64> {
        (self.payoff)(profile)
    }

    pub fn profile_count(&self) -> u64 {
        self.actions_per_player
            .iter()
            .fold(1u64, |acc, &n| acc.saturating_mul(n as u64))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NashResult {
    pub profile: Vec<usize>,
    /// Set when no pure equilibrium exists and the profile comes from
    /// iterated best response.
    pub approximate: bool,
}

fn flat_index(dims: &[usize], profile: &[usize]) -> usize {
    profile.iter().zip(dims).fold(0, |acc, (&a, &n)| acc * n + a)
}

fn advance(profile: &mut [usize], dims: &[usize]) -> bool {
    for i in (0..dims.len()).rev() {
        profile[i] += 1;
        if profile[i] < dims[i] {
            return true;
        }
        profile[i] = 0;
    }
    false
}

/// Payoff-maximizing action of `player` with the others fixed; lowest index on ties.
pub fn best_response(game: &NormalFormGame, player: usize, others_profile: &[usize]) -> usize {
    let mut profile = others_profile.to_vec();
    let mut best = (0, f64::NEG_INFINITY);
    for a in 0..game.actions_per_player[player] {
        profile[player] = a;
        let u = game.payoff(&profile)[player];
        if u > best.1 {
            best = (a, u);
        }
    }
    best.0
}

/// Pure Nash equilibrium with the largest payoff sum (lexicographically first
/// on ties). Falls back to iterated best response from the all-zero profile.
pub fn pure_nash(game: &NormalFormGame) -> Result<NashResult, GameError> {
    let count = game.profile_count();
    if count > ENUMERATION_BUDGET {
        return Err(GameError::EnumerationBudgetExceeded {
            count,
            budget: ENUMERATION_BUDGET,
        });
    }
    let dims = &game.actions_per_player;
    let n = dims.len();
    let count = count as usize;

    let mut table = Vec::with_capacity(count * n);
    let mut profile = vec![0; n];
    loop {
        let u = game.payoff(&profile);
        debug_assert_eq!(u.len(), n);
        table.extend_from_slice(&u);
        if !advance(&mut profile, dims) {
            break;
        }
    }

    // Best payoff for player i given the others, indexed by the profile with
    // player i's action zeroed.
    let mut strides = vec![1usize; n];
    for i in (0..n.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    let mut best_reply = vec![vec![f64::NEG_INFINITY; count]; n];
    for idx in 0..count {
        for i in 0..n {
            let a = (idx / strides[i]) % dims[i];
            let base = idx - a * strides[i];
            let u = table[idx * n + i];
            if u > best_reply[i][base] {
                best_reply[i][base] = u;
            }
        }
    }

    let mut chosen: Option<(usize, f64)> = None;
    for idx in 0..count {
        let stable = (0..n).all(|i| {
            let a = (idx / strides[i]) % dims[i];
            table[idx * n + i] >= best_reply[i][idx - a * strides[i]]
        });
        if stable {
            let sum: f64 = table[idx * n..idx * n + n].iter().sum();
            if chosen.is_none_or(|(_, s)| sum > s) {
                chosen = Some((idx, sum));
            }
        }
    }

    let decode = |idx: usize| (0..n).map(|i| (idx / strides[i]) % dims[i]).collect::<Vec<_>>();
    if let Some((idx, _)) = chosen {
        return Ok(NashResult {
            profile: decode(idx),
            approximate: false,
        });
    }

    let tabulated = |p: &[usize], i: usize| table[flat_index(dims, p) * n + i];
    let mut profile = vec![0; n];
    for _ in 0..MAX_BR_SWEEPS {
        let mut changed = false;
        for i in 0..n {
            let mut best = (0, f64::NEG_INFINITY);
            let mut trial = profile.clone();
            for a in 0..dims[i] {
                trial[i] = a;
                let u = tabulated(&trial, i);
                if u > best.1 {
                    best = (a, u);
                }
            }
            if best.0 != profile[i] {
                profile[i] = best.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(NashResult {
        profile,
        approximate: true,
    })
}
