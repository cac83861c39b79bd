//! Control schemes and tokens, token sampling, satisfaction and control
//! scores, and the token-substituted prompt rendering.
//!
//! A control score is `r_i = m_i + [i is the ground truth]`, where `m_i` is
//! the number of tokens candidate `i` satisfies. A ground-truth item that
//! misses one token therefore ties with a non-ground-truth item that
//! satisfies all of them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Bucketings, Item, SequenceWindow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlAttribute {
    Price,
    Rank,
    Brand,
    Category,
}

impl ControlAttribute {
    pub const ALL: [ControlAttribute; 4] =
        [ControlAttribute::Price, ControlAttribute::Rank, ControlAttribute::Brand, ControlAttribute::Category];

    /// Price and rank are matched by bucket label, brand and category by value.
    pub fn is_bucketed(self) -> bool {
        matches!(self, ControlAttribute::Price | ControlAttribute::Rank)
    }

    pub fn name(self) -> &'static str {
        match self {
            ControlAttribute::Price => "price",
            ControlAttribute::Rank => "rank",
            ControlAttribute::Brand => "brand",
            ControlAttribute::Category => "category",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ControlAttribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControlAttribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ControlAttribute::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidScheme(format!("unknown control attribute `{s}`")))
    }
}

/// Ordered, duplicate-free list of controlled attributes. The empty scheme
/// is allowed and means "no control".
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<ControlAttribute>", into = "Vec<ControlAttribute>")]
pub struct ControlScheme(Vec<ControlAttribute>);

impl ControlScheme {
    pub fn new(attributes: Vec<ControlAttribute>) -> Result<Self> {
        let distinct: BTreeSet<_> = attributes.iter().collect();
        if distinct.len() != attributes.len() {
            return Err(Error::InvalidScheme(format!("duplicate attribute in {attributes:?}")));
        }
        Ok(ControlScheme(attributes))
    }

    pub fn attributes(&self) -> &[ControlAttribute] {
        &self.0
    }

    /// Number of control tokens, `N_C`.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, attribute: ControlAttribute) -> bool {
        self.0.contains(&attribute)
    }

    pub fn is_subset_of(&self, other: &ControlScheme) -> bool {
        self.0.iter().all(|a| other.contains(*a))
    }

    pub fn label(&self) -> String {
        if self.0.is_empty() {
            return "none".into();
        }
        self.0.iter().map(|a| a.name()).collect::<Vec<_>>().join("+")
    }
}

impl TryFrom<Vec<ControlAttribute>> for ControlScheme {
    type Error = Error;

    fn try_from(v: Vec<ControlAttribute>) -> Result<Self> {
        ControlScheme::new(v)
    }
}

impl From<ControlScheme> for Vec<ControlAttribute> {
    fn from(s: ControlScheme) -> Self {
        s.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ControlToken {
    pub attribute: ControlAttribute,
    pub value: String,
}

impl ControlToken {
    pub fn new(attribute: ControlAttribute, value: impl Into<String>) -> Self {
        ControlToken { attribute, value: value.into() }
    }

    /// Rejects empty values and bucket labels the bucketing does not know.
    pub fn validate(&self, bucketings: &Bucketings) -> Result<()> {
        if self.value.trim().is_empty() {
            return Err(Error::InvalidArgument(format!("empty value for {} token", self.attribute)));
        }
        if self.attribute.is_bucketed() && !bucketings.get(self.attribute)?.has_label(&self.value) {
            return Err(Error::UnknownBucketLabel { attribute: self.attribute, label: self.value.clone() });
        }
        Ok(())
    }
}

impl fmt::Display for ControlToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}>{}", self.attribute, self.value)
    }
}

/// Builds the token list for a scheme from fixed `attribute -> value`
/// overrides. Every scheme attribute needs a value and no extra
/// attributes are allowed.
pub fn tokens_from_map(
    scheme: &ControlScheme,
    values: &BTreeMap<ControlAttribute, String>,
    bucketings: &Bucketings,
) -> Result<Vec<ControlToken>> {
    if let Some(extra) = values.keys().find(|a| !scheme.contains(**a)) {
        return Err(Error::InvalidScheme(format!("token for {extra} which is not in the scheme")));
    }
    scheme
        .attributes()
        .iter()
        .map(|&a| {
            let value = values
                .get(&a)
                .ok_or_else(|| Error::InvalidScheme(format!("no token value for {a}")))?;
            let token = ControlToken::new(a, value.clone());
            token.validate(bucketings)?;
            Ok(token)
        })
        .collect()
}

/// The item's token values for one attribute: a bucket label, the brand,
/// or every category.
pub fn item_values(item: &Item, attribute: ControlAttribute, bucketings: &Bucketings) -> Result<Vec<String>> {
    Ok(match attribute {
        ControlAttribute::Price | ControlAttribute::Rank => {
            bucketings.label_of(item, attribute)?.map(str::to_owned).into_iter().collect()
        }
        ControlAttribute::Brand => item.brand.iter().filter(|b| !b.trim().is_empty()).cloned().collect(),
        ControlAttribute::Category => item.categories.iter().filter(|c| !c.trim().is_empty()).cloned().collect(),
    })
}

/// Bucketed kinds compare bucket labels; brand compares case-insensitively;
/// category checks membership (case-insensitive) in the item's categories.
pub fn satisfies(item: &Item, token: &ControlToken, bucketings: &Bucketings) -> Result<bool> {
    match token.attribute {
        ControlAttribute::Price | ControlAttribute::Rank => {
            let b = bucketings.get(token.attribute)?;
            if !b.has_label(&token.value) {
                return Err(Error::UnknownBucketLabel { attribute: token.attribute, label: token.value.clone() });
            }
            Ok(bucketings.label_of(item, token.attribute)? == Some(token.value.as_str()))
        }
        ControlAttribute::Brand => {
            Ok(item.brand.as_deref().is_some_and(|b| b.to_lowercase() == token.value.to_lowercase()))
        }
        ControlAttribute::Category => {
            let want = token.value.to_lowercase();
            Ok(item.categories.iter().any(|c| c.to_lowercase() == want))
        }
    }
}

/// Per-instance RNG; the stream id keeps instances independent.
fn token_rng(seed: u64, ordinal: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ordinal);
    rng
}

fn distinct_values(
    candidates: &[&Item],
    attribute: ControlAttribute,
    bucketings: &Bucketings,
) -> Result<Vec<String>> {
    let mut set = BTreeSet::new();
    for item in candidates {
        set.extend(item_values(item, attribute, bucketings)?);
    }
    if set.is_empty() {
        return Err(Error::InvalidArgument(format!("no candidate carries a {attribute} value")));
    }
    Ok(set.into_iter().collect())
}

/// For each scheme attribute independently, draws one value uniformly from
/// the distinct values present among the candidates.
pub fn sample_tokens(
    candidates: &[&Item],
    scheme: &ControlScheme,
    bucketings: &Bucketings,
    seed: u64,
    ordinal: u64,
) -> Result<Vec<ControlToken>> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("cannot sample tokens without candidates".into()));
    }
    let mut rng = token_rng(seed, ordinal);
    scheme
        .attributes()
        .iter()
        .map(|&a| {
            let values = distinct_values(candidates, a, bucketings)?;
            let pick = rng.random_range(0..values.len());
            Ok(ControlToken::new(a, values[pick].clone()))
        })
        .collect()
}

/// Ground-truth anchored sampling used for synthetic evaluation: with
/// probability `1 - violation_rate` every token is taken from the ground
/// truth item's own values; otherwise exactly one attribute (chosen
/// uniformly among those where candidates offer an alternative) receives
/// a value the ground truth does not satisfy.
pub fn sample_tokens_anchored(
    candidates: &[&Item],
    gt_index: usize,
    scheme: &ControlScheme,
    bucketings: &Bucketings,
    violation_rate: f64,
    seed: u64,
    ordinal: u64,
) -> Result<Vec<ControlToken>> {
    let gt = *candidates
        .get(gt_index)
        .ok_or(Error::IndexOutOfBounds { index: gt_index, len: candidates.len() })?;
    let mut rng = token_rng(seed, ordinal);
    let violate = rng.random::<f64>() < violation_rate;

    let mut tokens = Vec::with_capacity(scheme.len());
    let mut alternatives: Vec<(usize, Vec<String>)> = Vec::new();
    for (k, &a) in scheme.attributes().iter().enumerate() {
        let own = item_values(gt, a, bucketings)?;
        if own.is_empty() {
            return Err(Error::InvalidArgument(format!("ground truth lacks a {a} value")));
        }
        let value = own[rng.random_range(0..own.len())].clone();
        tokens.push(ControlToken::new(a, value));

        let mut others = Vec::new();
        for v in distinct_values(candidates, a, bucketings)? {
            if !satisfies(gt, &ControlToken::new(a, v.clone()), bucketings)? {
                others.push(v);
            }
        }
        if !others.is_empty() {
            alternatives.push((k, others));
        }
    }
    if violate && !alternatives.is_empty() {
        let (k, others) = &alternatives[rng.random_range(0..alternatives.len())];
        tokens[*k].value = others[rng.random_range(0..others.len())].clone();
    }
    Ok(tokens)
}

/// `L x N_C` satisfaction indicators with row sums.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SatisfactionMatrix {
    pub entries: Vec<Vec<bool>>,
    pub matched: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlScoreVector {
    pub scores: Vec<u32>,
    pub gt_index: Option<usize>,
}

pub fn control_scores(
    candidates: &[&Item],
    tokens: &[ControlToken],
    gt_index: Option<usize>,
    bucketings: &Bucketings,
) -> Result<(SatisfactionMatrix, ControlScoreVector)> {
    if let Some(g) = gt_index {
        if g >= candidates.len() {
            return Err(Error::IndexOutOfBounds { index: g, len: candidates.len() });
        }
    }
    let mut entries = Vec::with_capacity(candidates.len());
    for item in candidates {
        let row = tokens.iter().map(|t| satisfies(item, t, bucketings)).collect::<Result<Vec<_>>>()?;
        entries.push(row);
    }
    let matched: Vec<usize> = entries.iter().map(|row| row.iter().filter(|&&s| s).count()).collect();
    let scores = matched
        .iter()
        .enumerate()
        .map(|(i, &m)| m as u32 + u32::from(gt_index == Some(i)))
        .collect();
    Ok((SatisfactionMatrix { entries, matched }, ControlScoreVector { scores, gt_index }))
}

pub const PROMPT_TEMPLATE_VERSION: u32 = 1;

const INSTRUCTION: &str = "Given the user's purchase history and the control tokens, rank the \
candidate items. Answer with the index letter of the best candidate.";

fn render_item(item: &Item, controlled: &BTreeSet<ControlAttribute>, bucketings: &Bucketings) -> Result<String> {
    let mut fields = vec![item.title.clone()];
    for a in ControlAttribute::ALL {
        if controlled.contains(&a) {
            for v in item_values(item, a, bucketings)? {
                fields.push(format!("<{a}>{v}"));
            }
            continue;
        }
        match a {
            ControlAttribute::Price => fields.extend(item.price.map(|p| format!("price: ${p}"))),
            ControlAttribute::Rank => fields.extend(item.sales_rank.map(|r| format!("rank: {r}"))),
            ControlAttribute::Brand => fields.extend(item.brand.as_ref().map(|b| format!("brand: {b}"))),
            ControlAttribute::Category if !item.categories.is_empty() => {
                fields.push(format!("category: {}", item.categories.join(", ")))
            }
            ControlAttribute::Category => {}
        }
    }
    Ok(fields.join(" | "))
}

/// Renders the hybrid prompt: attributes under control appear as
/// `<attr>value` tokens, everything else as plain text. Candidates are
/// labelled `A`, `B`, ... in candidate order.
pub fn render_prompt(
    window: &SequenceWindow,
    items: &BTreeMap<String, Item>,
    candidates: &[String],
    tokens: &[ControlToken],
    bucketings: &Bucketings,
) -> Result<String> {
    if candidates.len() > 26 {
        return Err(Error::TooManyCandidates(candidates.len()));
    }
    let lookup = |id: &String| items.get(id).ok_or_else(|| Error::UnknownItem(id.clone()));
    let controlled: BTreeSet<ControlAttribute> = tokens.iter().map(|t| t.attribute).collect();

    let mut out = String::new();
    out.push_str("[Instruction]\n");
    out.push_str(INSTRUCTION);
    out.push('\n');
    if !tokens.is_empty() {
        let list: Vec<String> = tokens.iter().map(ToString::to_string).collect();
        out.push_str(&format!("Control tokens: {}\n", list.join(" ")));
    }
    out.push_str("[History]\n");
    for (i, id) in window.history.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, render_item(lookup(id)?, &controlled, bucketings)?));
    }
    out.push_str("[Candidates]\n");
    for (letter, id) in ('A'..='Z').zip(candidates) {
        out.push_str(&format!("{letter}. {}\n", render_item(lookup(id)?, &controlled, bucketings)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AttributeBucketing, Split};

    pub(crate) fn price_bucketing() -> Bucketings {
        let mut b = Bucketings::default();
        b.0.insert(
            ControlAttribute::Price,
            AttributeBucketing {
                attribute: ControlAttribute::Price,
                edges: vec![10.0, 25.0],
                labels: vec!["0-10".into(), "10-25".into(), "25-80".into()],
            },
        );
        b
    }

    fn item(id: &str, price: f64, brand: &str, cats: &[&str]) -> Item {
        Item {
            item_id: id.into(),
            title: format!("Movie {id}"),
            price: Some(price),
            sales_rank: Some(100),
            brand: Some(brand.into()),
            categories: cats.iter().map(|c| c.to_string()).collect(),
        }
    }

    #[test]
    fn satisfies_cases() {
        let b = price_bucketing();
        let cheap = item("a", 6.0, "Acme", &["lipstick", "gift"]);
        assert!(satisfies(&cheap, &ControlToken::new(ControlAttribute::Price, "0-10"), &b).unwrap());
        assert!(!satisfies(&cheap, &ControlToken::new(ControlAttribute::Brand, "Disney"), &b).unwrap());
        assert!(satisfies(&cheap, &ControlToken::new(ControlAttribute::Brand, "ACME"), &b).unwrap());
        assert!(satisfies(&cheap, &ControlToken::new(ControlAttribute::Category, "gift"), &b).unwrap());
        assert!(!satisfies(&cheap, &ControlToken::new(ControlAttribute::Category, "toy"), &b).unwrap());
        assert!(matches!(
            satisfies(&cheap, &ControlToken::new(ControlAttribute::Price, "1-2"), &b),
            Err(Error::UnknownBucketLabel { .. })
        ));
    }

    #[test]
    fn scheme_rejects_duplicates() {
        assert!(ControlScheme::new(vec![ControlAttribute::Price, ControlAttribute::Price]).is_err());
        let s: ControlScheme = serde_json::from_str(r#"["price","brand"]"#).unwrap();
        assert_eq!(s.label(), "price+brand");
        assert!(serde_json::from_str::<ControlScheme>(r#"["brand","brand"]"#).is_err());
    }

    #[test]
    fn single_support_brand_always_drawn() {
        let b = price_bucketing();
        let items: Vec<Item> = (0..6).map(|i| item(&i.to_string(), 5.0 + i as f64, "Disney", &[])).collect();
        let refs: Vec<&Item> = items.iter().collect();
        let scheme = ControlScheme::new(vec![ControlAttribute::Brand]).unwrap();
        for ordinal in 0..50 {
            let t = sample_tokens(&refs, &scheme, &b, 3, ordinal).unwrap();
            assert_eq!(t, [ControlToken::new(ControlAttribute::Brand, "Disney")]);
        }
    }

    #[test]
    fn uniform_over_distinct_bucket_values() {
        // Five candidates in 0-10 and one in 10-25: sampling is over
        // distinct values, so each label should come up half the time.
        let b = price_bucketing();
        let prices = [1.0, 2.0, 3.0, 4.0, 5.0, 12.0];
        let items: Vec<Item> = prices.iter().map(|&p| item(&p.to_string(), p, "x", &[])).collect();
        let refs: Vec<&Item> = items.iter().collect();
        let scheme = ControlScheme::new(vec![ControlAttribute::Price]).unwrap();
        let n = 10_000;
        let cheap = (0..n)
            .filter(|&o| sample_tokens(&refs, &scheme, &b, 11, o).unwrap()[0].value == "0-10")
            .count();
        let freq = cheap as f64 / n as f64;
        assert!((freq - 0.5).abs() <= 0.05, "frequency {freq}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let b = price_bucketing();
        let items: Vec<Item> = [3.0, 14.0, 40.0].iter().map(|&p| item(&p.to_string(), p, &format!("b{p}"), &[])).collect();
        let refs: Vec<&Item> = items.iter().collect();
        let scheme = ControlScheme::new(vec![ControlAttribute::Price, ControlAttribute::Brand]).unwrap();
        let a = sample_tokens(&refs, &scheme, &b, 42, 17).unwrap();
        assert_eq!(a, sample_tokens(&refs, &scheme, &b, 42, 17).unwrap());
    }

    #[test]
    fn compliant_candidate_ties_one_token_ground_truth() {
        let b = price_bucketing();
        let a = item("A", 6.0, "Disney", &[]);
        let gt = item("B", 30.0, "Disney", &[]);
        let other = item("C", 30.0, "Acme", &[]);
        let tokens = [
            ControlToken::new(ControlAttribute::Price, "0-10"),
            ControlToken::new(ControlAttribute::Brand, "Disney"),
        ];
        let (sat, r) = control_scores(&[&a, &gt, &other], &tokens, Some(1), &b).unwrap();
        assert_eq!(sat.matched, [2, 1, 0]);
        assert_eq!(r.scores, [2, 2, 0]);
    }

    #[test]
    fn empty_tokens_only_gt_scores() {
        let b = price_bucketing();
        let xs: Vec<Item> = (0..4).map(|i| item(&i.to_string(), 1.0, "x", &[])).collect();
        let refs: Vec<&Item> = xs.iter().collect();
        let (_, r) = control_scores(&refs, &[], Some(2), &b).unwrap();
        assert_eq!(r.scores, [0, 0, 1, 0]);
        assert!(control_scores(&refs, &[], Some(4), &b).is_err());
    }

    #[test]
    fn exhaustive_patterns_match_rule() {
        // Each candidate realizes one satisfaction pattern over the tokens
        // price 0-10, brand Disney, category gift.
        let b = price_bucketing();
        let all_tokens = [
            ControlToken::new(ControlAttribute::Price, "0-10"),
            ControlToken::new(ControlAttribute::Brand, "Disney"),
            ControlToken::new(ControlAttribute::Category, "gift"),
        ];
        for n_c in 0..=3usize {
            let tokens = &all_tokens[..n_c];
            for pattern in 0..(1u32 << n_c) {
                let bit = |k: usize| pattern >> k & 1 == 1;
                let it = item(
                    "p",
                    if n_c > 0 && bit(0) { 5.0 } else { 50.0 },
                    if n_c > 1 && bit(1) { "disney" } else { "Acme" },
                    if n_c > 2 && bit(2) { &["gift"] } else { &["toy"] },
                );
                let m = pattern.count_ones();
                for gt in [false, true] {
                    let (sat, r) = control_scores(&[&it], tokens, gt.then_some(0), &b).unwrap();
                    assert_eq!(sat.matched[0] as u32, m);
                    assert_eq!(r.scores[0], m + u32::from(gt));
                }
            }
        }
    }

    #[test]
    fn anchored_violation_rate() {
        let b = price_bucketing();
        let xs = [
            item("g", 6.0, "Disney", &[]),
            item("h", 12.0, "Acme", &[]),
            item("i", 30.0, "Disney", &[]),
        ];
        let refs: Vec<&Item> = xs.iter().collect();
        let scheme = ControlScheme::new(vec![ControlAttribute::Price, ControlAttribute::Brand]).unwrap();
        let n = 4000;
        let mut violated = 0;
        for o in 0..n {
            let t = sample_tokens_anchored(&refs, 0, &scheme, &b, 0.3, 5, o).unwrap();
            let (sat, _) = control_scores(&refs, &t, Some(0), &b).unwrap();
            if sat.matched[0] < scheme.len() {
                violated += 1;
                assert_eq!(sat.matched[0], scheme.len() - 1);
            }
        }
        let rate = violated as f64 / n as f64;
        assert!((rate - 0.3).abs() < 0.03, "rate {rate}");
    }

    fn window() -> SequenceWindow {
        SequenceWindow { user_id: "u".into(), history: vec!["h".into()], target: "A".into(), split: Split::Test }
    }

    #[test]
    fn prompt_substitutes_only_controlled_attributes() {
        let b = price_bucketing();
        let mut items = BTreeMap::new();
        for it in [item("h", 30.0, "Pixar", &["animation"]), item("A", 6.0, "Disney", &["family"]), item("B", 12.0, "Acme", &[])] {
            items.insert(it.item_id.clone(), it);
        }
        let tokens = [
            ControlToken::new(ControlAttribute::Price, "0-10"),
            ControlToken::new(ControlAttribute::Brand, "Disney"),
        ];
        let cands = vec!["A".to_string(), "B".to_string()];
        let text = render_prompt(&window(), &items, &cands, &tokens, &b).unwrap();
        assert!(text.contains("A. Movie A | <price>0-10 | rank: 100 | <brand>Disney | category: family"));
        assert!(text.contains("B. Movie B | <price>10-25"));
        assert!(text.contains("1. Movie h | <price>25-80"));
        assert!(text.contains("Control tokens: <price>0-10 <brand>Disney"));
        assert_eq!(text, render_prompt(&window(), &items, &cands, &tokens, &b).unwrap());

        let plain = render_prompt(&window(), &items, &cands, &[], &b).unwrap();
        assert!(!plain.contains('<') && !plain.contains('>'));
        assert!(plain.contains("price: $6"));
    }

    #[test]
    fn prompt_letters_and_limit() {
        let b = price_bucketing();
        let mut items = BTreeMap::new();
        items.insert("h".to_string(), item("h", 1.0, "x", &[]));
        let ids: Vec<String> = (0..27).map(|i| format!("c{i:02}")).collect();
        for id in &ids {
            items.insert(id.clone(), item(id, 1.0, "x", &[]));
        }
        let six = render_prompt(&window(), &items, &ids[..6], &[], &b).unwrap();
        let letters: Vec<char> = six
            .lines()
            .skip_while(|l| *l != "[Candidates]")
            .skip(1)
            .map(|l| l.chars().next().unwrap())
            .collect();
        assert_eq!(letters, ('A'..='F').collect::<Vec<_>>());
        assert!(matches!(render_prompt(&window(), &items, &ids, &[], &b), Err(Error::TooManyCandidates(27))));
    }

    #[test]
    fn tokens_from_overrides() {
        let b = price_bucketing();
        let scheme = ControlScheme::new(vec![ControlAttribute::Price, ControlAttribute::Brand]).unwrap();
        let mut m = BTreeMap::new();
        m.insert(ControlAttribute::Price, "0-10".to_string());
        m.insert(ControlAttribute::Brand, "Disney".to_string());
        let t = tokens_from_map(&scheme, &m, &b).unwrap();
        assert_eq!(t.iter().map(ToString::to_string).collect::<Vec<_>>(), ["<price>0-10", "<brand>Disney"]);
        m.insert(ControlAttribute::Price, "nope".into());
        assert!(matches!(tokens_from_map(&scheme, &m, &b), Err(Error::UnknownBucketLabel { .. })));
    }

    proptest::proptest! {
        #[test]
        fn score_bounds_and_gt_monotonicity(
            pattern in proptest::collection::vec(proptest::collection::vec(proptest::bool::ANY, 3), 1..8),
            gt in proptest::option::of(0usize..8),
        ) {
            // Synthesize items whose satisfaction of the 3 tokens follows `pattern`.
            let b = price_bucketing();
            let tokens = [
                ControlToken::new(ControlAttribute::Price, "0-10"),
                ControlToken::new(ControlAttribute::Brand, "Disney"),
                ControlToken::new(ControlAttribute::Category, "gift"),
            ];
            let xs: Vec<Item> = pattern.iter().enumerate().map(|(i, p)| item(
                &i.to_string(),
                if p[0] { 1.0 } else { 90.0 },
                if p[1] { "Disney" } else { "Other" },
                if p[2] { &["gift"] } else { &[] },
            )).collect();
            let refs: Vec<&Item> = xs.iter().collect();
            let gt = gt.filter(|&g| g < refs.len());
            let (_, base) = control_scores(&refs, &tokens, None, &b).unwrap();
            let (_, r) = control_scores(&refs, &tokens, gt, &b).unwrap();
            for i in 0..refs.len() {
                proptest::prop_assert!(r.scores[i] <= 4);
                if r.scores[i] == 4 { proptest::prop_assert_eq!(Some(i), gt); }
                let bump = u32::from(gt == Some(i));
                proptest::prop_assert_eq!(r.scores[i], base.scores[i] + bump);
            }
            // Adding one token raises each score by at most one.
            let (_, fewer) = control_scores(&refs, &tokens[..2], gt, &b).unwrap();
            for i in 0..refs.len() {
                proptest::prop_assert!(r.scores[i] >= fewer.scores[i] && r.scores[i] <= fewer.scores[i] + 1);
            }
        }
    }
}
