//! Knowledge-based similarity over a lexical graph.
//!
//! Words map to synsets (sets of synonymous lemmas) that are connected by
//! hypernym ("is a kind of") edges. Two words score `1 / (1 + d)` where `d`
//! is the shortest number of hypernym edges, walked in either direction,
//! between any synset of the first and any synset of the second. Identical
//! tokens score 1 even when the graph does not know them.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use rayon::prelude::*;

use super::{SimilarityError, SimilarityMatrix, TokenizedDoc};

/// Identifier of a synset as it appears in the source data.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SynsetId(pub String);

impl fmt::Display for SynsetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

const UNREACHABLE: u16 = u16::MAX;

/// Synsets, the lemmas naming them, and hypernym edges between them.
#[derive(Debug, Clone)]
pub struct LexicalGraph {
    ids: Vec<SynsetId>,
    lemma_index: HashMap<String, Vec<u32>>,
    hypernyms: Vec<Vec<u32>>,
    /// Hypernym edges in both directions.
    adjacency: Vec<Vec<u32>>,
    exceptions: HashMap<String, Vec<String>>,
    morphology: bool,
}

/// One synset record: ID, lemmas, hypernym IDs.
pub type SynsetRecord = (String, Vec<String>, Vec<String>);

impl LexicalGraph {
    /// Build a graph from synset records. Every hypernym must name a synset
    /// of the same record list.
    pub fn from_records(records: Vec<SynsetRecord>) -> Result<Self, SimilarityError> {
        let mut index: HashMap<String, u32> = HashMap::with_capacity(records.len());
        for (i, (id, _, _)) in records.iter().enumerate() {
            if index.insert(id.clone(), i as u32).is_some() {
                return Err(SimilarityError::MalformedGraph(format!("duplicate synset `{id}`")));
            }
        }
        let mut ids = Vec::with_capacity(records.len());
        let mut lemma_index: HashMap<String, Vec<u32>> = HashMap::new();
        let mut hypernyms = Vec::with_capacity(records.len());
        let mut adjacency = vec![Vec::new(); records.len()];
        for (i, (id, lemmas, parents)) in records.into_iter().enumerate() {
            let node = i as u32;
            for lemma in lemmas {
                let key = normalize_lemma(&lemma);
                if key.is_empty() {
                    continue;
                }
                let entry = lemma_index.entry(key).or_default();
                if !entry.contains(&node) {
                    entry.push(node);
                }
            }
            let mut edges = Vec::with_capacity(parents.len());
            for p in parents {
                let target = *index.get(&p).ok_or_else(|| {
                    SimilarityError::MalformedGraph(format!("synset `{id}` has unknown hypernym `{p}`"))
                })?;
                edges.push(target);
                adjacency[i].push(target);
                adjacency[target as usize].push(node);
            }
            hypernyms.push(edges);
            ids.push(SynsetId(id));
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok(LexicalGraph {
            ids,
            lemma_index,
            hypernyms,
            adjacency,
            exceptions: HashMap::new(),
            morphology: true,
        })
    }

    /// Parse the simplified TSV form:
    /// `synset_id<TAB>lemma1,lemma2<TAB>hypernym_id1,hypernym_id2`.
    ///
    /// Blank lines and lines starting with `#` are ignored; the hypernym
    /// column may be empty or absent.
    pub fn parse_tsv(text: &str) -> Result<Self, SimilarityError> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            let id = cols.next().unwrap_or("").trim();
            let lemmas = cols
                .next()
                .ok_or_else(|| SimilarityError::MalformedGraph(format!("line {}: missing lemma column", lineno + 1)))?;
            let parents = cols.next().unwrap_or("");
            if id.is_empty() || cols.next().is_some() {
                return Err(SimilarityError::MalformedGraph(format!(
                    "line {}: expected 2 or 3 tab-separated columns",
                    lineno + 1
                )));
            }
            records.push((id.to_string(), split_list(lemmas), split_list(parents)));
        }
        Self::from_records(records)
    }

    /// Load Princeton WordNet data files (nouns and verbs) from a directory
    /// containing `data.noun` and optionally `data.verb`, `noun.exc` and
    /// `verb.exc`. Hypernym and instance-hypernym pointers become edges.
    pub fn load_wordnet_dir(dir: &Path) -> Result<Self, SimilarityError> {
        let mut records = Vec::new();
        for (file, pos) in [("data.noun", 'n'), ("data.verb", 'v')] {
            let path = dir.join(file);
            if !path.exists() && pos == 'v' {
                continue;
            }
            let text = read(&path)?;
            records.extend(parse_wordnet_data(&text, pos)?);
        }
        let mut graph = Self::from_records(records)?;
        for exc in ["noun.exc", "verb.exc"] {
            let path = dir.join(exc);
            if path.exists() {
                graph.add_exceptions(&read(&path)?);
            }
        }
        Ok(graph)
    }

    /// Load from a WordNet directory or a TSV file, detected automatically.
    pub fn load(path: &Path) -> Result<Self, SimilarityError> {
        if path.is_dir() {
            if !path.join("data.noun").exists() {
                return Err(SimilarityError::MalformedGraph(format!(
                    "{} has no WordNet data.noun",
                    path.display()
                )));
            }
            return Self::load_wordnet_dir(path);
        }
        let text = read(path)?;
        if looks_like_wordnet_data(&text) {
            let pos = if path.to_string_lossy().ends_with(".verb") {
                'v'
            } else {
                'n'
            };
            Self::from_records(parse_wordnet_data(&text, pos)?)
        } else {
            Self::parse_tsv(&text)
        }
    }

    /// Irregular inflections in WordNet `.exc` format (`inflected base...`).
    pub fn add_exceptions(&mut self, text: &str) {
        for line in text.lines() {
            let mut words = line.split_whitespace();
            if let Some(inflected) = words.next() {
                let bases: Vec<String> = words.map(normalize_lemma).collect();
                if !bases.is_empty() {
                    self.exceptions
                        .entry(normalize_lemma(inflected))
                        .or_default()
                        .extend(bases);
                }
            }
        }
    }

    /// Enable or disable reduction of inflected tokens to base lemmas before
    /// lookup. Enabled by default.
    pub fn with_morphology(mut self, enabled: bool) -> Self {
        self.morphology = enabled;
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn synset_id(&self, node: usize) -> &SynsetId {
        &self.ids[node]
    }

    pub fn hypernyms(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.hypernyms[node].iter().map(|&p| p as usize)
    }

    /// Synsets a token denotes, trying the token itself, then known
    /// irregular forms, then regular suffix detachment.
    pub fn synsets_of(&self, token: &str) -> Vec<usize> {
        let key = normalize_lemma(token);
        if let Some(found) = self.lemma_index.get(&key) {
            return found.iter().map(|&n| n as usize).collect();
        }
        if !self.morphology {
            return Vec::new();
        }
        let mut out = BTreeSet::new();
        let mut candidates: Vec<String> = self.exceptions.get(&key).cloned().unwrap_or_default();
        for (suffix, replacement) in DETACHMENT_RULES {
            if let Some(stem) = key.strip_suffix(suffix) {
                if !stem.is_empty() {
                    candidates.push(format!("{stem}{replacement}"));
                }
            }
        }
        for c in candidates {
            if let Some(found) = self.lemma_index.get(&c) {
                out.extend(found.iter().map(|&n| n as usize));
            }
        }
        out.into_iter().collect()
    }

    /// Shortest undirected hypernym-path length from any of `sources`,
    /// for every node.
    fn distances_from(&self, sources: &[usize]) -> Vec<u16> {
        let mut dist = vec![UNREACHABLE; self.len()];
        let mut queue = VecDeque::new();
        for &s in sources {
            if dist[s] != 0 {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        while let Some(node) = queue.pop_front() {
            let next = dist[node].saturating_add(1);
            for &nb in &self.adjacency[node] {
                let nb = nb as usize;
                if dist[nb] == UNREACHABLE {
                    dist[nb] = next;
                    queue.push_back(nb);
                }
            }
        }
        dist
    }

    /// Shortest path length between any synset of `a` and any synset of `b`.
    pub fn word_distance(&self, a: &str, b: &str) -> Option<usize> {
        let (sa, sb) = (self.synsets_of(a), self.synsets_of(b));
        if sa.is_empty() || sb.is_empty() {
            return None;
        }
        let dist = self.distances_from(&sa);
        sb.iter()
            .map(|&n| dist[n])
            .filter(|&d| d != UNREACHABLE)
            .min()
            .map(usize::from)
    }

    /// Path similarity of two words: `1 / (1 + d)`, 1 for identical tokens,
    /// 0 when either is unknown or no path exists.
    pub fn word_similarity(&self, a: &str, b: &str) -> f64 {
        if a == b {
            return 1.0;
        }
        self.word_distance(a, b).map(|d| 1.0 / (1.0 + d as f64)).unwrap_or(0.0)
    }
}

/// Regular inflection endings for nouns and verbs with their base endings.
const DETACHMENT_RULES: [(&str, &str); 14] = [
    ("s", ""),
    ("ses", "s"),
    ("xes", "x"),
    ("zes", "z"),
    ("ches", "ch"),
    ("shes", "sh"),
    ("men", "man"),
    ("ies", "y"),
    ("es", "e"),
    ("es", ""),
    ("ed", "e"),
    ("ed", ""),
    ("ing", "e"),
    ("ing", ""),
];

fn normalize_lemma(s: &str) -> String {
    s.trim().to_lowercase().replace(' ', "_")
}

fn split_list(col: &str) -> Vec<String> {
    col.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn read(path: &Path) -> Result<String, SimilarityError> {
    std::fs::read_to_string(path).map_err(|source| SimilarityError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn looks_like_wordnet_data(text: &str) -> bool {
    text.lines()
        .find(|l| !l.starts_with("  "))
        .map(|l| {
            let mut f = l.split(' ');
            matches!(
                (f.next(), f.next(), f.next()),
                (Some(off), Some(lex), Some(pos))
                    if off.len() == 8 && off.bytes().all(|b| b.is_ascii_digit())
                        && lex.len() == 2 && pos.len() == 1
            )
        })
        .unwrap_or(false)
}

/// Parse a WordNet `data.*` file into synset records with IDs of the form
/// `<offset>-<pos>`.
fn parse_wordnet_data(text: &str, pos: char) -> Result<Vec<SynsetRecord>, SimilarityError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with("  ") || line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| SimilarityError::MalformedGraph(format!("WordNet line {}: {what}", lineno + 1));
        let body = line.split(" | ").next().unwrap_or(line);
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(bad("too few fields"));
        }
        let offset = fields[0];
        let w_cnt = usize::from_str_radix(fields[3], 16).map_err(|_| bad("bad word count"))?;
        let mut cursor = 4;
        let mut lemmas = Vec::with_capacity(w_cnt);
        for _ in 0..w_cnt {
            let word = fields.get(cursor).ok_or_else(|| bad("truncated word list"))?;
            // adjective position markers such as "(a)" never occur in nouns or verbs
            lemmas.push(word.to_string());
            cursor += 2;
        }
        let p_cnt: usize = fields
            .get(cursor)
            .ok_or_else(|| bad("missing pointer count"))?
            .parse()
            .map_err(|_| bad("bad pointer count"))?;
        cursor += 1;
        let mut parents = Vec::new();
        for _ in 0..p_cnt {
            let ptr = fields.get(cursor..cursor + 4).ok_or_else(|| bad("truncated pointer"))?;
            if ptr[0] == "@" || ptr[0] == "@i" {
                parents.push(format!("{}-{}", ptr[1], ptr[2]));
            }
            cursor += 4;
        }
        out.push((format!("{offset}-{pos}"), lemmas, parents));
    }
    Ok(out)
}

/// Knowledge-based document similarity.
///
/// Every token `t` of one document is matched to its best-scoring token in
/// the other document; the matches are averaged with `idf` weights, in both
/// directions, and the two directions are averaged:
///
/// `sim(A, B) = ½ · (Σ_{t∈A} w(t)·best(t, B) / Σ_{t∈A} w(t) + Σ_{t∈B} w(t)·best(t, A) / Σ_{t∈B} w(t))`
///
/// Documents are treated as sets of distinct tokens. Tokens missing from
/// `idf` get weight 1; a document whose weights sum to zero falls back to
/// uniform weights. A document without tokens scores 0 against all others.
pub fn graph_similarity(
    corpus: &[TokenizedDoc],
    graph: &LexicalGraph,
    idf: &BTreeMap<String, f64>,
) -> Result<SimilarityMatrix, SimilarityError> {
    if corpus.is_empty() {
        return Err(SimilarityError::EmptyCorpus);
    }
    let vocab: Vec<&str> = corpus
        .iter()
        .flat_map(|d| d.tokens.iter().map(String::as_str))
        .collect::<BTreeSet<&str>>()
        .into_iter()
        .collect();
    let vindex: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let v = vocab.len();

    let synsets: Vec<Vec<usize>> = vocab.par_iter().map(|t| graph.synsets_of(t)).collect();
    // distance rows for every known term against every other term
    let rows: Vec<Vec<u16>> = (0..v)
        .into_par_iter()
        .map(|a| {
            let mut row = vec![UNREACHABLE; v];
            row[a] = 0;
            if synsets[a].is_empty() {
                return row;
            }
            let dist = graph.distances_from(&synsets[a]);
            for (b, sb) in synsets.iter().enumerate() {
                if b != a {
                    row[b] = sb.iter().map(|&n| dist[n]).min().unwrap_or(UNREACHABLE);
                }
            }
            row
        })
        .collect();
    let word_score = |a: usize, b: usize| -> f64 {
        match rows[a][b] {
            UNREACHABLE => 0.0,
            d => 1.0 / (1.0 + f64::from(d)),
        }
    };

    let docs: Vec<Vec<usize>> = corpus
        .iter()
        .map(|d| {
            d.tokens
                .iter()
                .map(|t| vindex[t.as_str()])
                .collect::<BTreeSet<usize>>()
                .into_iter()
                .collect()
        })
        .collect();
    let weights: Vec<f64> = vocab.iter().map(|t| idf.get(*t).copied().unwrap_or(1.0)).collect();

    let directional = |from: &[usize], to: &[usize]| -> f64 {
        let best = |t: usize| {
            let mut b = 0.0f64;
            for &u in to {
                b = b.max(word_score(t, u));
                if b >= 1.0 {
                    break;
                }
            }
            b
        };
        let total: f64 = from.iter().map(|&t| weights[t]).sum();
        if total > 0.0 {
            from.iter().map(|&t| weights[t] * best(t)).sum::<f64>() / total
        } else {
            from.iter().map(|&t| best(t)).sum::<f64>() / from.len() as f64
        }
    };

    Ok(SimilarityMatrix::from_pair_fn(corpus.len(), "graph", |i, j| {
        let (a, b) = (&docs[i], &docs[j]);
        if a.is_empty() || b.is_empty() {
            return 0.0;
        }
        0.5 * (directional(a, b) + directional(b, a))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// entity <- abstraction <- attack <- injection, and
    /// entity <- object <- tool <- hammer; "onslaught" shares attack's synset.
    const FIXTURE: &str = "\
# id\tlemmas\thypernyms
e\tentity\t
ab\tabstraction\te
at\tattack,onslaught\tab
in\tinjection\tat
ob\tobject\te
to\ttool,instrument\tob
";

    fn graph() -> LexicalGraph {
        LexicalGraph::parse_tsv(FIXTURE).unwrap()
    }

    #[test]
    fn same_synset_scores_one() {
        assert_eq!(graph().word_similarity("attack", "onslaught"), 1.0);
    }

    #[test]
    fn four_edges_apart() {
        // injection -> attack -> abstraction -> entity <- object
        let g = graph();
        assert_eq!(g.word_distance("injection", "object"), Some(4));
        assert!((g.word_similarity("injection", "object") - 0.2).abs() < 1e-15);
    }

    #[test]
    fn out_of_vocabulary_tokens() {
        let g = graph();
        assert_eq!(g.word_similarity("xss", "xss"), 1.0);
        assert_eq!(g.word_similarity("xss", "csrf"), 0.0);
        assert_eq!(g.word_similarity("xss", "attack"), 0.0);
    }

    #[test]
    fn morphology_finds_plural_base() {
        let g = graph();
        assert_eq!(g.synsets_of("attacks"), g.synsets_of("attack"));
        assert_eq!(g.synsets_of("injections"), g.synsets_of("injection"));
        assert!(g.clone().with_morphology(false).synsets_of("attacks").is_empty());
    }

    #[test]
    fn unknown_hypernym_is_rejected() {
        assert!(matches!(
            LexicalGraph::parse_tsv("a\tx\tmissing\n"),
            Err(SimilarityError::MalformedGraph(_))
        ));
    }

    #[test]
    fn wordnet_data_lines_parse() {
        let data = "  1 This software and database is being provided\n\
00001740 03 n 01 entity 0 003 ~ 00001930 n 0000 ~ 00002137 n 0000 ~ 04431553 n 0000 | that which exists\n\
00002137 03 n 02 abstraction 0 abstract_entity 0 001 @ 00001740 n 0000 | a general concept\n";
        assert!(looks_like_wordnet_data(data));
        let recs = parse_wordnet_data(data, 'n').unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].0, "00002137-n");
        assert_eq!(recs[1].1, vec!["abstraction", "abstract_entity"]);
        assert_eq!(recs[1].2, vec!["00001740-n"]);
    }

    fn tok(doc_id: usize, s: &str) -> TokenizedDoc {
        TokenizedDoc {
            doc_id,
            tokens: s.split_whitespace().map(str::to_string).collect(),
        }
    }

    #[test]
    fn identical_token_multisets_score_one() {
        let c = vec![
            tok(0, "injection attack xss"),
            tok(1, "xss injection attack"),
            tok(2, "tool"),
        ];
        let m = graph_similarity(&c, &graph(), &super::super::idf_weights(&c)).unwrap();
        assert!((m.get(0, 1) - 1.0).abs() < 1e-12);
        assert!(m.get(0, 2) < 1.0);
    }

    #[test]
    fn empty_documents() {
        let c = vec![tok(0, ""), tok(1, "attack")];
        let m = graph_similarity(&c, &graph(), &BTreeMap::new()).unwrap();
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.get(0, 0), 1.0);
    }

    #[test]
    fn hand_computed_pair() {
        // A = {injection}, B = {attack, tool}, unit weights
        // best(injection, B) = max(1/2, 1/(1+6)) = 0.5
        // best(attack, A) = 0.5; best(tool, A): injection->attack->abstraction->entity->object->tool = 5 -> 1/6
        // sim = ½ (0.5 + (0.5 + 1/6) / 2)
        let c = vec![tok(0, "injection"), tok(1, "attack tool")];
        let m = graph_similarity(&c, &graph(), &BTreeMap::new()).unwrap();
        let expected = 0.5 * (0.5 + (0.5 + 1.0 / 6.0) / 2.0);
        assert!((m.get(0, 1) - expected).abs() < 1e-12);
    }
}
