//! Finite mechanisms: explicit type spaces, outcome choice and payment
//! tables, a brute-force dominant-strategy incentive-compatibility checker,
//! and the built-in proof-of-work puzzle.
//!
//! Everything is table-driven. A mechanism over small finite type spaces can
//! be checked for IC by enumerating every player, every profile of the other
//! players, and every true/reported type pair; no algebra is involved, so the
//! checker doubles as ground truth for hand-built mechanisms.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::config::{digest_with, ChainConfig, Hash, HashAlg};
use crate::encoding::Encodable;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MechanismError {
    #[error("mechanism needs at least one player")]
    NoPlayers,
    #[error("mechanism needs at least one outcome")]
    NoOutcomes,
    #[error("player {0} has an empty type space")]
    EmptyTypeSpace(usize),
    #[error("outcome `{0}` names winner {1}, but there are only {2} players")]
    WinnerOutOfRange(String, usize, usize),
    #[error("type `{0}` of player {1} values {2} outcomes, expected {3}")]
    ValuationWrongWidth(String, usize, usize, usize),
    #[error("choice table has {0} entries, expected one per profile ({1})")]
    ChoiceTableWrongLength(usize, usize),
    #[error("choice entry {0} names outcome {1}, but there are only {2} outcomes")]
    ChoiceOutOfRange(usize, usize, usize),
    #[error("payment table has {0} rows, expected one per profile ({1})")]
    PaymentTableWrongLength(usize, usize),
    #[error("payment row {0} has {1} entries, expected one per player ({2})")]
    PaymentRowWrongWidth(usize, usize, usize),
    #[error("profile has {0} entries, expected one type per player ({1})")]
    MalformedProfile(usize, usize),
    #[error("type index {0} out of range for player {1}")]
    TypeOutOfRange(usize, usize),
    #[error("IC check needs {0} enumerations, above the {1} cap")]
    EnumerationTooLarge(u128, u128),
    #[error("puzzle difficulty {0} exceeds the 64 hex digits of a digest")]
    InvalidDifficulty(u64),
    #[error("an auction needs at least two bids, got {0}")]
    TooFewBidders(usize),
    #[error("environment `{0}` is not modeled by the equilibrium map")]
    UnknownEnvironment(String),
    #[error("message `{0}` falls outside the message space")]
    MessageOutsideSpace(String),
    #[error("outcome function is undefined for message `{0}`")]
    OutcomeUndefined(String),
}

/// Result of the mechanism for one profile: a named outcome and the subset of
/// players it favours.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub name: String,
    pub winners: BTreeSet<usize>,
}

/// One element of a player's type space: a name plus the player's valuation
/// of every outcome when this is their true type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeDef {
    pub name: String,
    pub values: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteMechanism {
    players: usize,
    outcomes: Vec<Outcome>,
    /// `types[i]` is player i's type space.
    types: Vec<Vec<TypeDef>>,
    /// Outcome index per profile index.
    choice: Vec<usize>,
    /// Payment per player per profile index.
    payments: Vec<Vec<i64>>,
}

impl FiniteMechanism {
    pub fn new(
        outcomes: Vec<Outcome>,
        types: Vec<Vec<TypeDef>>,
        choice: Vec<usize>,
        payments: Vec<Vec<i64>>,
    ) -> Result<FiniteMechanism, MechanismError> {
        let players = types.len();
        if players == 0 {
            return Err(MechanismError::NoPlayers);
        }
        if outcomes.is_empty() {
            return Err(MechanismError::NoOutcomes);
        }
        for (i, space) in types.iter().enumerate() {
            if space.is_empty() {
                return Err(MechanismError::EmptyTypeSpace(i));
            }
            for t in space {
                if t.values.len() != outcomes.len() {
                    return Err(MechanismError::ValuationWrongWidth(
                        t.name.clone(),
                        i,
                        t.values.len(),
                        outcomes.len(),
                    ));
                }
            }
        }
        for o in &outcomes {
            for &w in &o.winners {
                if w >= players {
                    return Err(MechanismError::WinnerOutOfRange(o.name.clone(), w, players));
                }
            }
        }
        let profiles: usize = types.iter().map(|s| s.len()).product();
        if choice.len() != profiles {
            return Err(MechanismError::ChoiceTableWrongLength(choice.len(), profiles));
        }
        for (p, &c) in choice.iter().enumerate() {
            if c >= outcomes.len() {
                return Err(MechanismError::ChoiceOutOfRange(p, c, outcomes.len()));
            }
        }
        if payments.len() != profiles {
            return Err(MechanismError::PaymentTableWrongLength(payments.len(), profiles));
        }
        for (p, row) in payments.iter().enumerate() {
            if row.len() != players {
                return Err(MechanismError::PaymentRowWrongWidth(p, row.len(), players));
            }
        }
        Ok(FiniteMechanism { players, outcomes, types, choice, payments })
    }

    pub fn players(&self) -> usize {
        self.players
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn type_space(&self, player: usize) -> &[TypeDef] {
        &self.types[player]
    }

    pub fn profile_count(&self) -> usize {
        self.types.iter().map(|s| s.len()).product()
    }

    /// Mixed-radix profile index; player 0 is the most significant digit.
    pub fn profile_index(&self, profile: &[usize]) -> Result<usize, MechanismError> {
        if profile.len() != self.players {
            return Err(MechanismError::MalformedProfile(profile.len(), self.players));
        }
        let mut idx = 0usize;
        for (i, &t) in profile.iter().enumerate() {
            if t >= self.types[i].len() {
                return Err(MechanismError::TypeOutOfRange(t, i));
            }
            idx = idx * self.types[i].len() + t;
        }
        Ok(idx)
    }

    pub fn index_to_profile(&self, mut idx: usize) -> Vec<usize> {
        let mut profile = vec![0usize; self.players];
        for i in (0..self.players).rev() {
            let radix = self.types[i].len();
            profile[i] = idx % radix;
            idx /= radix;
        }
        profile
    }

    pub fn choice(&self, profile: &[usize]) -> Result<&Outcome, MechanismError> {
        let idx = self.profile_index(profile)?;
        Ok(&self.outcomes[self.choice[idx]])
    }

    pub fn payments(&self, profile: &[usize]) -> Result<&[i64], MechanismError> {
        let idx = self.profile_index(profile)?;
        Ok(&self.payments[idx])
    }

    pub fn valuation(&self, player: usize, type_idx: usize, outcome_idx: usize) -> i64 {
        self.types[player][type_idx].values[outcome_idx]
    }

    /// Winners' total valuation of the outcome chosen for this profile.
    pub fn social_surplus(&self, profile: &[usize]) -> Result<i64, MechanismError> {
        let idx = self.profile_index(profile)?;
        let outcome_idx = self.choice[idx];
        let mut total = 0i64;
        for &w in &self.outcomes[outcome_idx].winners {
            total += self.valuation(w, profile[w], outcome_idx);
        }
        Ok(total)
    }

    fn utility(&self, player: usize, true_type: usize, report_profile_idx: usize) -> i128 {
        let outcome_idx = self.choice[report_profile_idx];
        let v = self.valuation(player, true_type, outcome_idx) as i128;
        let p = self.payments[report_profile_idx][player] as i128;
        v - p
    }

    /// Exhaustive dominant-strategy IC check. Enumeration is capped so a
    /// misconfigured table cannot stall the caller.
    pub fn check_ic(&self) -> Result<IcReport, MechanismError> {
        const CAP: u128 = 1_000_000;
        let mut needed: u128 = 0;
        for i in 0..self.players {
            let others: u128 = self
                .types
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, s)| s.len() as u128)
                .product();
            let own = self.types[i].len() as u128;
            needed += others * own * own;
        }
        if needed > CAP {
            return Err(MechanismError::EnumerationTooLarge(needed, CAP));
        }

        let mut violations = Vec::new();
        let mut taxation_counterexamples = Vec::new();

        for player in 0..self.players {
            let mut profile = vec![0usize; self.players];
            loop {
                // profile holds the other players' fixed reports; slot
                // `player` is overwritten below.
                for true_type in 0..self.types[player].len() {
                    profile[player] = true_type;
                    let honest_idx = self.profile_index(&profile).expect("valid profile");
                    let honest = self.utility(player, true_type, honest_idx);
                    for reported_type in 0..self.types[player].len() {
                        if reported_type == true_type {
                            continue;
                        }
                        profile[player] = reported_type;
                        let lie_idx = self.profile_index(&profile).expect("valid profile");
                        let deviant = self.utility(player, true_type, lie_idx);
                        if deviant > honest {
                            profile[player] = true_type;
                            violations.push(IcViolation {
                                player,
                                profile: profile.clone(),
                                reported_type,
                                truthful_utility: honest,
                                deviant_utility: deviant,
                            });
                        }
                        profile[player] = true_type;
                    }
                }

                // taxation principle: with the others fixed, reports that
                // produce the same outcome must also produce the same payment
                let mut per_outcome: Vec<Option<(usize, i64)>> = vec![None; self.outcomes.len()];
                for t in 0..self.types[player].len() {
                    profile[player] = t;
                    let idx = self.profile_index(&profile).expect("valid profile");
                    let outcome_idx = self.choice[idx];
                    let pay = self.payments[idx][player];
                    match per_outcome[outcome_idx] {
                        None => per_outcome[outcome_idx] = Some((t, pay)),
                        Some((first_t, first_pay)) if first_pay != pay => {
                            profile[player] = first_t;
                            taxation_counterexamples.push(TaxationCounterexample {
                                player,
                                profile: profile.clone(),
                                other_type: t,
                                outcome: self.outcomes[outcome_idx].name.clone(),
                                payments: (first_pay, pay),
                            });
                        }
                        Some(_) => {}
                    }
                }

                if !advance_skipping(&mut profile, &self.types, player) {
                    break;
                }
            }
        }

        Ok(IcReport {
            is_ic: violations.is_empty(),
            violations,
            taxation_holds: taxation_counterexamples.is_empty(),
            taxation_counterexamples,
            enumerations: needed,
        })
    }
}

/// Odometer step over every player slot except `skip`.
fn advance_skipping(profile: &mut [usize], types: &[Vec<TypeDef>], skip: usize) -> bool {
    for i in (0..profile.len()).rev() {
        if i == skip {
            continue;
        }
        profile[i] += 1;
        if profile[i] < types[i].len() {
            return true;
        }
        profile[i] = 0;
    }
    false
}

/// One profitable lie: with the rest of `profile` fixed and a true type of
/// `profile[player]`, reporting `reported_type` instead pays off.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IcViolation {
    pub player: usize,
    pub profile: Vec<usize>,
    pub reported_type: usize,
    pub truthful_utility: i128,
    pub deviant_utility: i128,
}

/// Two reports by `player` (`profile[player]` and `other_type`) that yield
/// the same outcome but different payments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxationCounterexample {
    pub player: usize,
    pub profile: Vec<usize>,
    pub other_type: usize,
    pub outcome: String,
    pub payments: (i64, i64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IcReport {
    pub is_ic: bool,
    pub violations: Vec<IcViolation>,
    pub taxation_holds: bool,
    pub taxation_counterexamples: Vec<TaxationCounterexample>,
    pub enumerations: u128,
}

// --- auctions ---------------------------------------------------------------

/// Single-item auction where each player's possible private values are given
/// explicitly. The highest value wins (ties to the lowest player index) and
/// the winner pays the highest competing value.
pub fn second_price_auction(values: &[Vec<i64>]) -> Result<FiniteMechanism, MechanismError> {
    auction(values, |_, others_max| others_max)
}

/// Same allocation rule, but the winner pays their own declared value. This
/// classic variant is not incentive compatible.
pub fn first_price_auction(values: &[Vec<i64>]) -> Result<FiniteMechanism, MechanismError> {
    auction(values, |own, _| own)
}

fn auction(
    values: &[Vec<i64>],
    winner_pays: impl Fn(i64, i64) -> i64,
) -> Result<FiniteMechanism, MechanismError> {
    let players = values.len();
    if players == 0 {
        return Err(MechanismError::NoPlayers);
    }
    let outcomes: Vec<Outcome> = (0..players)
        .map(|i| Outcome { name: format!("win_{i}"), winners: [i].into() })
        .collect();
    // valuation of outcome win_o for a player with private value v: v when
    // o is that player, otherwise 0
    let types: Vec<Vec<TypeDef>> = values
        .iter()
        .enumerate()
        .map(|(i, vals)| {
            vals.iter()
                .map(|&v| TypeDef {
                    name: format!("v{v}"),
                    values: (0..players).map(|o| if o == i { v } else { 0 }).collect(),
                })
                .collect()
        })
        .collect();

    let mech_shape = FiniteMechanism {
        players,
        outcomes: outcomes.clone(),
        types: types.clone(),
        choice: Vec::new(),
        payments: Vec::new(),
    };
    let profiles = mech_shape.profile_count();
    let mut choice = Vec::with_capacity(profiles);
    let mut payments = Vec::with_capacity(profiles);
    for idx in 0..profiles {
        let profile = mech_shape.index_to_profile(idx);
        let bids: Vec<i64> = profile
            .iter()
            .enumerate()
            .map(|(i, &t)| values[i][t])
            .collect();
        let winner = bids
            .iter()
            .enumerate()
            .max_by(|(ia, va), (ib, vb)| va.cmp(vb).then(ib.cmp(ia)))
            .map(|(i, _)| i)
            .expect("players >= 1");
        let others_max = bids
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != winner)
            .map(|(_, &v)| v)
            .max()
            .unwrap_or(0);
        choice.push(winner);
        let mut row = vec![0i64; players];
        row[winner] = winner_pays(bids[winner], others_max);
        payments.push(row);
    }
    FiniteMechanism::new(outcomes, types, choice, payments)
}

/// Sealed-bid second-price auction over concrete bids. Winner is the highest
/// bidder (ties to the lowest index); the price is the best losing bid.
pub fn run_vickrey(bids: &[i64]) -> Result<(usize, i64), MechanismError> {
    if bids.len() < 2 {
        return Err(MechanismError::TooFewBidders(bids.len()));
    }
    let winner = bids
        .iter()
        .enumerate()
        .max_by(|(ia, va), (ib, vb)| va.cmp(vb).then(ib.cmp(ia)))
        .map(|(i, _)| i)
        .expect("at least two bids");
    let price = bids
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != winner)
        .map(|(_, &b)| b)
        .max()
        .expect("at least one other bid");
    Ok((winner, price))
}

// --- message-form mechanisms --------------------------------------------------

/// A mechanism in message form: a message space, an equilibrium
/// correspondence from environments to messages, and an outcome function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageMechanism {
    pub message_space: BTreeSet<String>,
    /// Messages played in equilibrium under each modeled environment.
    pub equilibrium_map: BTreeMap<String, BTreeSet<String>>,
    pub outcome_fn: BTreeMap<String, String>,
}

impl MessageMechanism {
    /// Structural invariants: the outcome function is total over the message
    /// space, and equilibrium messages stay inside it.
    pub fn validate(&self) -> Result<(), MechanismError> {
        for message in &self.message_space {
            if !self.outcome_fn.contains_key(message) {
                return Err(MechanismError::OutcomeUndefined(message.clone()));
            }
        }
        for messages in self.equilibrium_map.values() {
            for message in messages {
                if !self.message_space.contains(message) {
                    return Err(MechanismError::MessageOutsideSpace(message.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Outcomes the mechanism induces under an environment: the image of the
/// equilibrium messages through the outcome function.
pub fn evaluate_mechanism(
    mech: &MessageMechanism,
    environment: &str,
) -> Result<BTreeSet<String>, MechanismError> {
    mech.validate()?;
    let messages = mech
        .equilibrium_map
        .get(environment)
        .ok_or_else(|| MechanismError::UnknownEnvironment(environment.to_string()))?;
    Ok(messages
        .iter()
        .map(|m| mech.outcome_fn[m].clone())
        .collect())
}

// --- proof-of-work puzzle ---------------------------------------------------

/// Hash-preimage puzzle bound to a payload: a nonce solves it when the hex
/// digest of `binder ∥ nonce` starts with `difficulty` zero digits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Puzzle {
    difficulty: u64,
    binder: Vec<u8>,
}

impl Puzzle {
    pub fn new(difficulty: u64, binder: impl Into<Vec<u8>>) -> Result<Puzzle, MechanismError> {
        if difficulty > 64 {
            return Err(MechanismError::InvalidDifficulty(difficulty));
        }
        Ok(Puzzle { difficulty, binder: binder.into() })
    }

    pub fn difficulty(&self) -> u64 {
        self.difficulty
    }

    pub fn binder(&self) -> &[u8] {
        &self.binder
    }

    pub fn check(&self, alg: HashAlg, nonce: &[u8]) -> bool {
        let mut buf = Vec::with_capacity(self.binder.len() + nonce.len());
        buf.extend_from_slice(&self.binder);
        buf.extend_from_slice(nonce);
        let digest = digest_with(alg, &buf);
        leading_zero_hex_digits(&digest) >= self.difficulty
    }

    /// Scan counters `start..start + max_tries`, testing the canonical
    /// encoding of each as the nonce. Returns the solving counter and how
    /// many candidates were tested.
    pub fn mine(&self, alg: HashAlg, start: u64, max_tries: u64) -> Option<(u64, Vec<u8>, u64)> {
        for tried in 0..max_tries {
            let counter = start.wrapping_add(tried);
            let nonce = counter.canonical_encode();
            if self.check(alg, &nonce) {
                return Some((counter, nonce, tried + 1));
            }
        }
        None
    }
}

/// Check a nonce against a puzzle under the chain's configured hash.
pub fn verify_puzzle(config: &ChainConfig, puzzle: &Puzzle, nonce: &[u8]) -> bool {
    puzzle.check(config.hash_alg, nonce)
}

/// One mining attempt: test `canonical_encode(nonce_counter)` as the nonce
/// for a puzzle over `header_bytes`, returning it on success. Driving this
/// with an incrementing counter is the whole mining loop.
pub fn pow_mine_step(
    config: &ChainConfig,
    header_bytes: &[u8],
    z_l: u64,
    nonce_counter: u64,
) -> Option<Vec<u8>> {
    let puzzle = Puzzle::new(z_l, header_bytes).ok()?;
    let nonce = nonce_counter.canonical_encode();
    if puzzle.check(config.hash_alg, &nonce) {
        Some(nonce)
    } else {
        None
    }
}

pub fn leading_zero_hex_digits(digest: &Hash) -> u64 {
    let mut count = 0u64;
    for byte in digest.as_bytes() {
        let hi = byte >> 4;
        let lo = byte & 0x0f;
        if hi != 0 {
            break;
        }
        count += 1;
        if lo != 0 {
            break;
        }
        count += 1;
    }
    count
}

// --- mechanism table files ---------------------------------------------------

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TblError {
    #[error("line {0}: {1}")]
    Parse(usize, String),
    #[error("table is incomplete: profile {0:?} has no row")]
    MissingProfile(Vec<String>),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
}

/// Render the mechanism in the line-oriented table format:
///
/// ```text
/// players 2
/// outcome win_0 winners=0
/// valuation 0 v3 3 0
/// profile v3 v1 win_0 1 0
/// ```
pub fn to_tbl_string(m: &FiniteMechanism) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "players {}", m.players);
    for o in &m.outcomes {
        let winners: Vec<String> = o.winners.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(out, "outcome {} winners={}", o.name, winners.join(","));
    }
    for (i, space) in m.types.iter().enumerate() {
        for t in space {
            let vals: Vec<String> = t.values.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "valuation {} {} {}", i, t.name, vals.join(" "));
        }
    }
    for idx in 0..m.profile_count() {
        let profile = m.index_to_profile(idx);
        let names: Vec<&str> = profile
            .iter()
            .enumerate()
            .map(|(i, &t)| m.types[i][t].name.as_str())
            .collect();
        let outcome = &m.outcomes[m.choice[idx]].name;
        let pays: Vec<String> = m.payments[idx].iter().map(|p| p.to_string()).collect();
        let _ = writeln!(out, "profile {} {} {}", names.join(" "), outcome, pays.join(" "));
    }
    out
}

pub fn from_tbl_str(text: &str) -> Result<FiniteMechanism, TblError> {
    let mut players: Option<usize> = None;
    let mut outcomes: Vec<Outcome> = Vec::new();
    let mut types: Vec<Vec<TypeDef>> = Vec::new();
    let mut profile_rows: Vec<(Vec<String>, String, Vec<i64>)> = Vec::new();

    let parse_err = |ln: usize, msg: &str| TblError::Parse(ln, msg.to_string());

    for (ln0, raw) in text.lines().enumerate() {
        let ln = ln0 + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("players") => {
                let n: usize = parts
                    .next()
                    .ok_or_else(|| parse_err(ln, "players needs a count"))?
                    .parse()
                    .map_err(|_| parse_err(ln, "players count must be a number"))?;
                players = Some(n);
                types = vec![Vec::new(); n];
            }
            Some("outcome") => {
                let name = parts
                    .next()
                    .ok_or_else(|| parse_err(ln, "outcome needs a name"))?
                    .to_string();
                let winners_part = parts
                    .next()
                    .and_then(|p| p.strip_prefix("winners="))
                    .ok_or_else(|| parse_err(ln, "outcome needs winners=i,j"))?;
                let mut winners = BTreeSet::new();
                if !winners_part.is_empty() {
                    for w in winners_part.split(',') {
                        winners.insert(
                            w.parse()
                                .map_err(|_| parse_err(ln, "winner indices must be numbers"))?,
                        );
                    }
                }
                outcomes.push(Outcome { name, winners });
            }
            Some("valuation") => {
                let player: usize = parts
                    .next()
                    .ok_or_else(|| parse_err(ln, "valuation needs a player index"))?
                    .parse()
                    .map_err(|_| parse_err(ln, "player index must be a number"))?;
                let n = players.ok_or_else(|| parse_err(ln, "players must come first"))?;
                if player >= n {
                    return Err(parse_err(ln, "player index out of range"));
                }
                let name = parts
                    .next()
                    .ok_or_else(|| parse_err(ln, "valuation needs a type name"))?
                    .to_string();
                let values: Vec<i64> = parts
                    .map(|v| v.parse().map_err(|_| parse_err(ln, "valuations must be numbers")))
                    .collect::<Result<_, _>>()?;
                if values.len() != outcomes.len() {
                    return Err(parse_err(ln, "one valuation per outcome required"));
                }
                types[player].push(TypeDef { name, values });
            }
            Some("profile") => {
                let n = players.ok_or_else(|| parse_err(ln, "players must come first"))?;
                let tokens: Vec<&str> = parts.collect();
                if tokens.len() != n + 1 + n {
                    return Err(parse_err(
                        ln,
                        "profile needs a type per player, an outcome, and a payment per player",
                    ));
                }
                let names: Vec<String> = tokens[..n].iter().map(|s| s.to_string()).collect();
                let outcome = tokens[n].to_string();
                let pays: Vec<i64> = tokens[n + 1..]
                    .iter()
                    .map(|v| v.parse().map_err(|_| parse_err(ln, "payments must be numbers")))
                    .collect::<Result<_, _>>()?;
                profile_rows.push((names, outcome, pays));
            }
            Some(other) => return Err(parse_err(ln, &format!("unknown directive `{other}`"))),
            None => unreachable!("blank lines skipped above"),
        }
    }

    let players = players.ok_or_else(|| parse_err(0, "missing players line"))?;
    let shape = FiniteMechanism {
        players,
        outcomes: outcomes.clone(),
        types: types.clone(),
        choice: Vec::new(),
        payments: Vec::new(),
    };
    let profiles = shape.profile_count();
    let mut choice = vec![None; profiles];
    let mut payments = vec![None; profiles];
    for (names, outcome_name, pays) in profile_rows {
        let mut profile = Vec::with_capacity(players);
        for (i, name) in names.iter().enumerate() {
            let t = types[i]
                .iter()
                .position(|t| &t.name == name)
                .ok_or_else(|| TblError::Parse(0, format!("unknown type `{name}` for player {i}")))?;
            profile.push(t);
        }
        let outcome_idx = outcomes
            .iter()
            .position(|o| o.name == outcome_name)
            .ok_or_else(|| TblError::Parse(0, format!("unknown outcome `{outcome_name}`")))?;
        let idx = shape.profile_index(&profile)?;
        choice[idx] = Some(outcome_idx);
        payments[idx] = Some(pays);
    }
    let mut final_choice = Vec::with_capacity(profiles);
    let mut final_payments = Vec::with_capacity(profiles);
    for idx in 0..profiles {
        let profile = shape.index_to_profile(idx);
        let names: Vec<String> = profile
            .iter()
            .enumerate()
            .map(|(i, &t)| types[i][t].name.clone())
            .collect();
        final_choice.push(choice[idx].ok_or_else(|| TblError::MissingProfile(names.clone()))?);
        final_payments.push(payments[idx].take().ok_or(TblError::MissingProfile(names))?);
    }
    Ok(FiniteMechanism::new(outcomes, types, final_choice, final_payments)?)
}
