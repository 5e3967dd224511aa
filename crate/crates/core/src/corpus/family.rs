//! Synthetic language families for desk-scale transfer experiments.
//!
//! A small probabilistic grammar produces an English-like target stream.
//! Each source language renders the same clause through its own word order
//! and a token-level cipher. Ciphers are inherited along a family tree:
//! language `i` attaches to the earlier language it is most related to and
//! copies each of that parent's word forms with probability equal to their
//! relatedness, minting a fresh form otherwise. Parent/child overlap thus
//! matches the relatedness matrix in expectation; overlap between two
//! non-adjacent languages is the product along the tree path.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::parallel::TextCorpus;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrammarSpec {
    pub nouns: usize,
    pub verbs: usize,
    pub adjectives: usize,
    pub adverbs: usize,
    pub determiners: usize,
    pub prepositions: usize,
    /// Chance that a noun phrase carries an adjective.
    pub adjective_prob: f64,
    /// Zipf exponent for word choice within each category.
    pub zipf_exponent: f64,
}

impl Default for GrammarSpec {
    fn default() -> Self {
        Self {
            nouns: 80,
            verbs: 50,
            adjectives: 40,
            adverbs: 20,
            determiners: 4,
            prepositions: 6,
            adjective_prob: 0.3,
            zipf_exponent: 1.0,
        }
    }
}

impl GrammarSpec {
    pub fn word_types(&self) -> usize {
        self.nouns + self.verbs + self.adjectives + self.adverbs + self.determiners + self.prepositions
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub names: Vec<String>,
    /// Symmetric, unit diagonal, entries in `[0, 1]`.
    pub relatedness: Vec<Vec<f64>>,
    #[serde(default)]
    pub grammar: GrammarSpec,
    pub sizes: Vec<SplitSizes>,
}

impl FamilySpec {
    pub fn num_languages(&self) -> usize {
        self.names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if n == 0 {
            return Err(Error::Config("family needs at least one language".into()));
        }
        if self.sizes.len() != n {
            return Err(Error::Config(format!("{} languages but {} size entries", n, self.sizes.len())));
        }
        if self.relatedness.len() != n || self.relatedness.iter().any(|r| r.len() != n) {
            return Err(Error::Config(format!("relatedness must be {n}×{n}")));
        }
        for i in 0..n {
            if self.relatedness[i][i] != 1.0 {
                return Err(Error::Config(format!("relatedness[{i}][{i}] must be 1")));
            }
            for j in 0..n {
                let r = self.relatedness[i][j];
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::Config(format!("relatedness[{i}][{j}] = {r} outside [0, 1]")));
                }
                if (r - self.relatedness[j][i]).abs() > 1e-12 {
                    return Err(Error::Config(format!("relatedness is not symmetric at ({i}, {j})")));
                }
            }
        }
        if self.grammar.nouns == 0 || self.grammar.verbs == 0 || self.grammar.determiners == 0 {
            return Err(Error::Config("grammar needs nouns, verbs and determiners".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Config(format!("duplicate language name {dup}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClauseOrder {
    Svo,
    Sov,
    Vso,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordOrder {
    pub clause: ClauseOrder,
    pub adjective_after_noun: bool,
}

const ORDERS: [WordOrder; 6] = [
    WordOrder { clause: ClauseOrder::Sov, adjective_after_noun: true },
    WordOrder { clause: ClauseOrder::Svo, adjective_after_noun: true },
    WordOrder { clause: ClauseOrder::Vso, adjective_after_noun: false },
    WordOrder { clause: ClauseOrder::Sov, adjective_after_noun: false },
    WordOrder { clause: ClauseOrder::Vso, adjective_after_noun: true },
    WordOrder { clause: ClauseOrder::Svo, adjective_after_noun: false },
];

/// Generated data for one source language paired with the shared target.
#[derive(Clone, Debug)]
pub struct FamilyCorpus {
    pub name: String,
    pub order: WordOrder,
    /// Parent in the family tree, if any.
    pub parent: Option<usize>,
    /// Source form for every target word type.
    pub cipher: Vec<String>,
    pub train: TextCorpus,
    pub dev: TextCorpus,
    pub test: TextCorpus,
}

/// Fraction of word types two cipher tables map identically.
pub fn cipher_overlap(a: &[String], b: &[String]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

#[derive(Clone, Copy)]
struct NounPhrase {
    det: usize,
    adj: Option<usize>,
    noun: usize,
}

#[derive(Clone, Copy)]
enum Complement {
    Object(NounPhrase),
    Adverb(usize),
    Prepositional(usize, NounPhrase),
}

#[derive(Clone, Copy)]
struct Clause {
    subject: NounPhrase,
    verb: usize,
    complement: Complement,
}

struct Lexicon {
    words: Vec<String>,
    det: (usize, WeightedIndex<f64>),
    noun: (usize, WeightedIndex<f64>),
    verb: (usize, WeightedIndex<f64>),
    adj: Option<(usize, WeightedIndex<f64>)>,
    adv: Option<(usize, WeightedIndex<f64>)>,
    prep: Option<(usize, WeightedIndex<f64>)>,
    adjective_prob: f64,
}

impl Lexicon {
    fn new(g: &GrammarSpec) -> Self {
        let mut words = Vec::with_capacity(g.word_types());
        let mut category = |prefix: &str, n: usize| -> Option<(usize, WeightedIndex<f64>)> {
            if n == 0 {
                return None;
            }
            let offset = words.len();
            words.extend((0..n).map(|i| format!("{prefix}{i}")));
            let weights: Vec<f64> = (0..n).map(|r| 1.0 / ((r + 1) as f64).powf(g.zipf_exponent)).collect();
            Some((offset, WeightedIndex::new(weights).expect("positive weights")))
        };
        let det = category("the", g.determiners).expect("validated");
        let noun = category("noun", g.nouns).expect("validated");
        let verb = category("verb", g.verbs).expect("validated");
        let adj = category("adj", g.adjectives);
        let adv = category("adv", g.adverbs);
        let prep = category("prep", g.prepositions);
        Self {
            words,
            det,
            noun,
            verb,
            adj,
            adv,
            prep,
            adjective_prob: g.adjective_prob,
        }
    }

    fn pick<R: Rng>(cat: &(usize, WeightedIndex<f64>), rng: &mut R) -> usize {
        cat.0 + cat.1.sample(rng)
    }

    fn noun_phrase<R: Rng>(&self, rng: &mut R) -> NounPhrase {
        let det = Self::pick(&self.det, rng);
        let adj = match &self.adj {
            Some(a) if rng.gen::<f64>() < self.adjective_prob => Some(Self::pick(a, rng)),
            _ => None,
        };
        NounPhrase {
            det,
            adj,
            noun: Self::pick(&self.noun, rng),
        }
    }

    fn clause<R: Rng>(&self, rng: &mut R) -> Clause {
        let subject = self.noun_phrase(rng);
        let verb = Self::pick(&self.verb, rng);
        let complement = match rng.gen_range(0..3) {
            1 if self.adv.is_some() => Complement::Adverb(Self::pick(self.adv.as_ref().unwrap(), rng)),
            2 if self.prep.is_some() => {
                Complement::Prepositional(Self::pick(self.prep.as_ref().unwrap(), rng), self.noun_phrase(rng))
            }
            _ => Complement::Object(self.noun_phrase(rng)),
        };
        Clause {
            subject,
            verb,
            complement,
        }
    }
}

fn render_np(np: NounPhrase, adj_after: bool, out: &mut Vec<usize>) {
    out.push(np.det);
    match (np.adj, adj_after) {
        (Some(a), false) => out.extend([a, np.noun]),
        (Some(a), true) => out.extend([np.noun, a]),
        (None, _) => out.push(np.noun),
    }
}

fn render_complement(c: Complement, adj_after: bool, out: &mut Vec<usize>) {
    match c {
        Complement::Object(np) => render_np(np, adj_after, out),
        Complement::Adverb(a) => out.push(a),
        Complement::Prepositional(p, np) => {
            out.push(p);
            render_np(np, adj_after, out);
        }
    }
}

fn render(clause: &Clause, order: WordOrder) -> Vec<usize> {
    let mut out = Vec::with_capacity(9);
    let adj_after = order.adjective_after_noun;
    match order.clause {
        ClauseOrder::Svo => {
            render_np(clause.subject, adj_after, &mut out);
            out.push(clause.verb);
            render_complement(clause.complement, adj_after, &mut out);
        }
        ClauseOrder::Sov => {
            render_np(clause.subject, adj_after, &mut out);
            render_complement(clause.complement, adj_after, &mut out);
            out.push(clause.verb);
        }
        ClauseOrder::Vso => {
            out.push(clause.verb);
            render_np(clause.subject, adj_after, &mut out);
            render_complement(clause.complement, adj_after, &mut out);
        }
    }
    out
}

const TARGET_ORDER: WordOrder = WordOrder {
    clause: ClauseOrder::Svo,
    adjective_after_noun: false,
};

/// Generates one [`FamilyCorpus`] per language in `spec`.
pub fn generate_family(spec: &FamilySpec, seed: u64) -> Result<Vec<FamilyCorpus>> {
    spec.validate()?;
    let n = spec.num_languages();
    let lexicon = Lexicon::new(&spec.grammar);
    let types = lexicon.words.len();

    let mut table_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fresh = 0usize;
    let mut mint = || {
        fresh += 1;
        format!("w{}", fresh - 1)
    };

    let mut ciphers: Vec<Vec<String>> = Vec::with_capacity(n);
    let mut orders: Vec<WordOrder> = Vec::with_capacity(n);
    let mut parents: Vec<Option<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let parent = (0..i).fold(None, |best: Option<usize>, j| match best {
            Some(b) if spec.relatedness[i][b] >= spec.relatedness[i][j] => Some(b),
            _ => Some(j),
        });
        let (cipher, order) = match parent {
            None => ((0..types).map(|_| mint()).collect(), ORDERS[0]),
            Some(p) => {
                let r = spec.relatedness[i][p];
                let cipher = (0..types)
                    .map(|w| {
                        if table_rng.gen::<f64>() < r {
                            ciphers[p][w].clone()
                        } else {
                            mint()
                        }
                    })
                    .collect();
                let order = if r >= 0.5 {
                    orders[p]
                } else {
                    let k = ORDERS.iter().position(|o| *o == orders[p]).unwrap_or(0);
                    ORDERS[(k + 1 + i) % ORDERS.len()]
                };
                (cipher, order)
            }
        };
        ciphers.push(cipher);
        orders.push(order);
        parents.push(parent);
    }

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let name = &spec.names[i];
        let mut split = |split: &str, count: usize| {
            let mut corpus = TextCorpus::new(format!("{name}.{split}"));
            for _ in 0..count {
                let clause = lexicon.clause(&mut rng);
                let tgt: Vec<&str> = render(&clause, TARGET_ORDER)
                    .into_iter()
                    .map(|w| lexicon.words[w].as_str())
                    .collect();
                let src: Vec<&str> = render(&clause, orders[i])
                    .into_iter()
                    .map(|w| ciphers[i][w].as_str())
                    .collect();
                corpus.pairs.push((src.join(" "), tgt.join(" ")));
            }
            corpus
        };
        let sizes = spec.sizes[i];
        let train = split("train", sizes.train);
        let dev = split("dev", sizes.dev);
        let test = split("test", sizes.test);
        out.push(FamilyCorpus {
            name: name.clone(),
            order: orders[i],
            parent: parents[i],
            cipher: ciphers[i].clone(),
            train,
            dev,
            test,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(r: f64, types: usize) -> FamilySpec {
        FamilySpec {
            names: vec!["a".into(), "b".into()],
            relatedness: vec![vec![1.0, r], vec![r, 1.0]],
            grammar: GrammarSpec {
                nouns: types - 3,
                verbs: 1,
                adjectives: 0,
                adverbs: 0,
                determiners: 1,
                prepositions: 1,
                ..GrammarSpec::default()
            },
            sizes: vec![SplitSizes { train: 5, dev: 2, test: 2 }; 2],
        }
    }

    #[test]
    fn full_relatedness_gives_identical_tables() {
        let f = generate_family(&spec(1.0, 50), 1).unwrap();
        assert_eq!(f[0].cipher, f[1].cipher);
        assert_eq!(f[0].order, f[1].order);
        assert_ne!(f[0].train, f[1].train);
    }

    #[test]
    fn zero_relatedness_gives_disjoint_tables() {
        let f = generate_family(&spec(0.0, 50), 1).unwrap();
        let a: std::collections::HashSet<_> = f[0].cipher.iter().collect();
        assert!(f[1].cipher.iter().all(|w| !a.contains(w)));
    }

    #[test]
    fn half_relatedness_overlap_over_1000_types() {
        for seed in 0..5 {
            let f = generate_family(&spec(0.5, 1000), seed).unwrap();
            let o = cipher_overlap(&f[0].cipher, &f[1].cipher);
            assert!((o - 0.5).abs() <= 0.05, "seed {seed}: overlap {o}");
        }
    }

    #[test]
    fn asymmetric_relatedness_is_rejected() {
        let mut s = spec(0.5, 10);
        s.relatedness[0][1] = 0.4;
        assert!(matches!(generate_family(&s, 0), Err(Error::Config(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let s = FamilySpec {
            names: vec!["lr".into(), "x".into(), "y".into()],
            relatedness: vec![vec![1.0, 0.8, 0.1], vec![0.8, 1.0, 0.2], vec![0.1, 0.2, 1.0]],
            grammar: GrammarSpec::default(),
            sizes: vec![SplitSizes { train: 20, dev: 5, test: 5 }; 3],
        };
        let a = generate_family(&s, 9).unwrap();
        let b = generate_family(&s, 9).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.train, y.train);
            assert_eq!(x.cipher, y.cipher);
        }
        // y attaches to x (0.2 > 0.1)
        assert_eq!(a[2].parent, Some(1));
        // every target is an SVO rendering over the shared lexicon
        assert!(a.iter().all(|l| l.train.pairs.iter().all(|(_, t)| t.starts_with("the"))));
    }

    #[test]
    fn source_and_target_have_equal_length() {
        let f = generate_family(&spec(0.3, 30), 2).unwrap();
        for (s, t) in &f[1].train.pairs {
            assert_eq!(s.split_whitespace().count(), t.split_whitespace().count());
        }
    }
}
