use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use powerreg::envs::overcooked::{Layout, Overcooked};
use powerreg::envs::{self, CoinPayout};
use powerreg::solve::FixedPlay;
use powerreg::MarkovGame;

/// What a command operates on.
pub enum Target {
    Game {
        game: MarkovGame,
        /// Slots the solver must not change (Coin Division's stage two).
        fixed: Option<FixedPlay>,
    },
    Overcooked(Overcooked),
}

impl Target {
    pub fn game(&self) -> Result<&MarkovGame> {
        match self {
            Target::Game { game, .. } => Ok(game),
            Target::Overcooked(_) => Err(powerreg::Error::Capability(
                "this command needs an enumerable game, not a gridworld simulator".into(),
            )
            .into()),
        }
    }
}

/// Bundled names accepted by `--env`.
pub const ENV_NAMES: &[&str] = &[
    "attack-defense",
    "larger-attack-defense",
    "no-power",
    "shortcut-chain",
    "coin-division[:ACCEPT[:members|all]]",
    "random:SEED[:STATES:ACTIONS:HORIZON]",
    "micro-cpfp",
    "micro-cpfp-explosion",
];

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| powerreg::Error::Argument(format!("bad {what} '{s}'")).into())
}

pub fn bundled(name: &str) -> Result<Target> {
    let mut parts = name.split(':');
    let head = parts.next().unwrap_or_default();
    let rest: Vec<&str> = parts.collect();
    let game = |game| Target::Game { game, fixed: None };
    Ok(match (head, rest.as_slice()) {
        ("attack-defense", []) => game(envs::attack_defense()),
        ("larger-attack-defense", []) => game(envs::larger_attack_defense()),
        ("no-power", []) => game(envs::no_power_game()),
        ("shortcut-chain", []) => game(envs::shortcut_chain()),
        ("coin-division", rest) if rest.len() <= 2 => {
            let accept = rest.first().map(|s| parse_num(s, "accept probability")).transpose()?.unwrap_or(0.5);
            let payout: CoinPayout = rest.get(1).map(|s| s.parse()).transpose()?.unwrap_or(CoinPayout::Members);
            let cd = envs::coin_division(accept, payout)?;
            Target::Game {
                game: cd.game,
                fixed: Some(FixedPlay {
                    profile: cd.profile,
                    free: cd.free,
                }),
            }
        }
        ("random", [seed]) => game(envs::random_game(parse_num(seed, "seed")?, 4, 2, 2, 3, 1.0)),
        ("random", [seed, s, a, t]) => game(envs::random_game(
            parse_num(seed, "seed")?,
            parse_num(s, "state count")?,
            parse_num(a, "action count")?,
            2,
            parse_num(t, "horizon")?,
            1.0,
        )),
        _ => match Layout::bundled(name) {
            Some(layout) => Target::Overcooked(Overcooked::new(layout)),
            None => bail!(powerreg::Error::Argument(format!(
                "unknown environment '{name}'; expected one of: {}",
                ENV_NAMES.join(", ")
            ))),
        },
    })
}

/// Resolves `--game`, `--layout` or `--env`; returns the target and the input
/// files it was read from.
pub fn resolve(game: Option<&Path>, layout: Option<&Path>, env: Option<&str>) -> Result<(Target, Vec<PathBuf>)> {
    match (game, layout, env) {
        (Some(path), None, None) => {
            let g = MarkovGame::from_json_file(path).with_context(|| format!("loading game {}", path.display()))?;
            Ok((Target::Game { game: g, fixed: None }, vec![path.to_path_buf()]))
        }
        (None, Some(path), None) => {
            let l = Layout::from_file(path).with_context(|| format!("loading layout {}", path.display()))?;
            Ok((Target::Overcooked(Overcooked::new(l)), vec![path.to_path_buf()]))
        }
        (None, None, Some(name)) => Ok((bundled(name)?, Vec::new())),
        _ => bail!(powerreg::Error::Argument(
            "give exactly one of --game, --layout or --env".into()
        )),
    }
}
