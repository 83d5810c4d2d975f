//! Word lists, symbol inventories, gold tables and synthetic corpus generation.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type SymId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Language {
    Lost,
    Known,
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Language::Lost => write!(f, "lost"),
            Language::Known => write!(f, "known"),
        }
    }
}

/// How symbols are delimited in a word-list file.
///
/// `Plain`: one Unicode codepoint per symbol. `SpaceSeparated`: whitespace-delimited
/// tokens, required for syllabaries whose transcriptions use multi-char symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WordFormat {
    Plain,
    SpaceSeparated,
}

/// Ordered symbol inventory with a bijective symbol <-> id mapping.
///
/// Corpus symbols get contiguous ids starting at 0; the reserved EOS / BOS / PAD
/// ids come after all corpus symbols and never collide with them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolInventory {
    symbols: Vec<String>,
    index: HashMap<String, SymId>,
}

impl SymbolInventory {
    pub fn from_symbols<I, S>(symbols: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut inv = SymbolInventory {
            symbols: Vec::new(),
            index: HashMap::new(),
        };
        for s in symbols {
            let s = s.into();
            if inv.index.contains_key(&s) {
                return Err(Error::Input(format!("duplicate symbol {s:?} in inventory")));
            }
            inv.intern(&s);
        }
        Ok(inv)
    }

    fn intern(&mut self, s: &str) -> SymId {
        if let Some(&id) = self.index.get(s) {
            return id;
        }
        let id = self.symbols.len() as SymId;
        self.symbols.push(s.to_string());
        self.index.insert(s.to_string(), id);
        id
    }

    /// Number of corpus symbols (excludes reserved ids).
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn eos_id(&self) -> SymId {
        self.symbols.len() as SymId
    }

    pub fn bos_id(&self) -> SymId {
        self.symbols.len() as SymId + 1
    }

    pub fn pad_id(&self) -> SymId {
        self.symbols.len() as SymId + 2
    }

    pub fn id(&self, symbol: &str) -> Option<SymId> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: SymId) -> Option<&str> {
        self.symbols.get(id as usize).map(|s| s.as_str())
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Renders a word as a string in the given file format.
    pub fn render(&self, word: &[SymId], format: WordFormat) -> String {
        let parts: Vec<&str> = word
            .iter()
            .map(|&id| self.symbol(id).unwrap_or("?"))
            .collect();
        match format {
            WordFormat::Plain => parts.concat(),
            WordFormat::SpaceSeparated => parts.join(" "),
        }
    }
}

/// Ordered word list over a [`SymbolInventory`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub words: Vec<Vec<SymId>>,
    pub language: Language,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, i: usize) -> &[SymId] {
        &self.words[i]
    }
}

/// Per-load metadata returned alongside a vocabulary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    /// Empty lines skipped with a warning.
    pub skipped_empty: usize,
}

pub fn load_vocabulary(
    path: &Path,
    format: WordFormat,
    language: Language,
) -> Result<(Vocabulary, SymbolInventory, LoadStats)> {
    let bytes = fs::read(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::Input(format!("{}: not valid UTF-8: {e}", path.display())))?;
    parse_vocabulary(&text, format, language)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

/// Parses word-list text: one word per line, symbols per `format`.
pub fn parse_vocabulary(
    text: &str,
    format: WordFormat,
    language: Language,
) -> Result<(Vocabulary, SymbolInventory, LoadStats)> {
    let mut inv = SymbolInventory {
        symbols: Vec::new(),
        index: HashMap::new(),
    };
    let mut words = Vec::new();
    let mut stats = LoadStats::default();
    for line in text.lines() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            stats.skipped_empty += 1;
            continue;
        }
        let word: Vec<SymId> = match format {
            WordFormat::Plain => line.chars().map(|c| inv.intern(&c.to_string())).collect(),
            WordFormat::SpaceSeparated => {
                line.split_whitespace().map(|t| inv.intern(t)).collect()
            }
        };
        words.push(word);
    }
    if words.is_empty() {
        return Err(Error::Input("empty word list".to_string()));
    }
    // a loaded line is never blank, so words are nonempty by construction
    Ok((Vocabulary { words, language }, inv, stats))
}

pub fn write_vocabulary(
    path: &Path,
    vocab: &Vocabulary,
    inv: &SymbolInventory,
    format: WordFormat,
) -> Result<()> {
    let mut out = String::new();
    for w in &vocab.words {
        out.push_str(&inv.render(w, format));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Ground-truth cognate pairs, used only for evaluation.
///
/// A lost word may map to several known forms.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldTable {
    pub pairs: BTreeSet<(usize, usize)>,
}

impl GoldTable {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Gold partners of a lost word.
    pub fn partners(&self, lost: usize) -> impl Iterator<Item = usize> + '_ {
        self.pairs
            .range((lost, 0)..(lost + 1, 0))
            .map(|&(_, j)| j)
    }

    /// Distinct lost-word indices covered by gold.
    pub fn lost_words(&self) -> BTreeSet<usize> {
        self.pairs.iter().map(|&(i, _)| i).collect()
    }
}

pub fn load_gold(
    path: &Path,
    lost: &Vocabulary,
    lost_inv: &SymbolInventory,
    lost_format: WordFormat,
    known: &Vocabulary,
    known_inv: &SymbolInventory,
    known_format: WordFormat,
) -> Result<GoldTable> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let lost_index = word_index(lost, lost_inv, lost_format);
    let known_index = word_index(known, known_inv, known_format);
    let mut pairs = BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (l, k) = line.split_once('\t').ok_or_else(|| {
            Error::Input(format!("{}:{}: expected two tab-separated columns", path.display(), lineno + 1))
        })?;
        let i = *lost_index.get(l).ok_or_else(|| {
            Error::Input(format!("{}:{}: lost word {l:?} not in vocabulary", path.display(), lineno + 1))
        })?;
        let j = *known_index.get(k).ok_or_else(|| {
            Error::Input(format!("{}:{}: known word {k:?} not in vocabulary", path.display(), lineno + 1))
        })?;
        pairs.insert((i, j));
    }
    Ok(GoldTable { pairs })
}

/// Maps rendered word strings to their first index in the vocabulary.
pub fn word_index(
    vocab: &Vocabulary,
    inv: &SymbolInventory,
    format: WordFormat,
) -> HashMap<String, usize> {
    let mut map = HashMap::new();
    for (i, w) in vocab.words.iter().enumerate() {
        map.entry(inv.render(w, format)).or_insert(i);
    }
    map
}

/// Parameters for synthetic lost/known corpus generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub vocab_size: usize,
    pub symbol_count: usize,
    /// Seed for the random bijective symbol substitution (or syllabic expansion map).
    pub substitution_seed: u64,
    pub insertion_rate: f64,
    pub deletion_rate: f64,
    /// Fraction of pairs whose lost member is dropped (leaving the known word unpaired).
    pub unpaired_lost: f64,
    /// Fraction of pairs whose known member is dropped (leaving the lost word unpaired).
    pub unpaired_known: f64,
    /// Each lost symbol expands to a two-symbol known subsequence.
    pub syllabic: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            vocab_size: 200,
            symbol_count: 20,
            substitution_seed: 0,
            insertion_rate: 0.0,
            deletion_rate: 0.0,
            unpaired_lost: 0.0,
            unpaired_known: 0.0,
            syllabic: false,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.insertion_rate) || !in_unit(self.deletion_rate) {
            return Err(Error::Config("insertion/deletion rates must lie in [0,1]".into()));
        }
        if !(0.0..1.0).contains(&self.unpaired_lost) || !(0.0..1.0).contains(&self.unpaired_known) {
            return Err(Error::Config("unpaired fractions must lie in [0,1)".into()));
        }
        if self.unpaired_lost + self.unpaired_known >= 1.0 {
            return Err(Error::Config("unpaired fractions must sum below 1".into()));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be positive".into()));
        }
        if self.symbol_count < 2 {
            return Err(Error::Config("symbol_count must be at least 2".into()));
        }
        Ok(())
    }
}

/// Result of synthetic corpus generation.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub lost: Vocabulary,
    pub lost_inv: SymbolInventory,
    pub known: Vocabulary,
    pub known_inv: SymbolInventory,
    pub gold: GoldTable,
    /// known symbol -> lost symbol (alphabetic mode), or
    /// lost symbol -> two-symbol known expansion (syllabic mode).
    pub substitution: Vec<(String, String)>,
}

const KNOWN_POOL: &[std::ops::RangeInclusive<u32>] = &[
    0x61..=0x7a,   // a-z
    0x41..=0x5a,   // A-Z
    0x3b1..=0x3c9, // greek lowercase
    0x430..=0x44f, // cyrillic lowercase
];

fn known_symbol_pool() -> Vec<String> {
    KNOWN_POOL
        .iter()
        .flat_map(|r| r.clone())
        .filter_map(char::from_u32)
        .map(|c| c.to_string())
        .collect()
}

fn lost_symbol_pool(n: usize) -> Vec<String> {
    // CJK block: visually distinct from the known-side pool
    (0..n)
        .map(|i| char::from_u32(0x4e00 + i as u32).unwrap().to_string())
        .collect()
}

/// Generates a synthetic (lost, known, gold) corpus. Deterministic given seeds.
pub fn synthesize(spec: &SynthSpec, seed: u64) -> Result<SynthCorpus> {
    spec.validate()?;
    let pool = known_symbol_pool();
    if spec.symbol_count > pool.len() {
        return Err(Error::Config(format!(
            "symbol_count {} exceeds available pool of {}",
            spec.symbol_count,
            pool.len()
        )));
    }
    let known_syms: Vec<String> = pool[..spec.symbol_count].to_vec();
    let lost_syms = lost_symbol_pool(spec.symbol_count);

    let mut sub_rng = ChaCha20Rng::seed_from_u64(spec.substitution_seed);
    // substitution map
    let (known_of_lost, substitution): (Vec<Vec<SymId>>, Vec<(String, String)>) = if spec.syllabic {
        // distinct ordered pairs of known symbols per lost symbol
        let n = spec.symbol_count as u32;
        let mut all_pairs: Vec<(u32, u32)> =
            (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).collect();
        all_pairs.shuffle(&mut sub_rng);
        let chosen = &all_pairs[..spec.symbol_count];
        let map: Vec<Vec<SymId>> = chosen.iter().map(|&(a, b)| vec![a, b]).collect();
        let table = chosen
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| {
                (
                    lost_syms[i].clone(),
                    format!("{}{}", known_syms[a as usize], known_syms[b as usize]),
                )
            })
            .collect();
        (map, table)
    } else {
        let mut perm: Vec<u32> = (0..spec.symbol_count as u32).collect();
        perm.shuffle(&mut sub_rng);
        // perm[k] = lost symbol id standing in for known symbol k
        let map: Vec<Vec<SymId>> = Vec::new(); // unused in alphabetic mode
        let table = perm
            .iter()
            .enumerate()
            .map(|(k, &l)| (known_syms[k].clone(), lost_syms[l as usize].clone()))
            .collect();
        let _ = map;
        let map = perm.iter().map(|&l| vec![l]).collect();
        (map, table)
    };

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let source_n = spec.symbol_count as u32;

    // generate clean pairs; keep both sides free of duplicates so string-level
    // evaluation stays unambiguous
    let mut seen_known: BTreeSet<Vec<SymId>> = BTreeSet::new();
    let mut seen_lost: BTreeSet<Vec<SymId>> = BTreeSet::new();
    let mut pairs: Vec<(Vec<SymId>, Vec<SymId>)> = Vec::with_capacity(spec.vocab_size);
    let mut attempts = 0usize;
    while pairs.len() < spec.vocab_size {
        attempts += 1;
        if attempts > spec.vocab_size * 200 {
            return Err(Error::Config(
                "cannot generate enough distinct words; increase symbol_count".into(),
            ));
        }
        let len = rng.gen_range(3..=10usize);
        let (lost_clean, known_clean): (Vec<SymId>, Vec<SymId>) = if spec.syllabic {
            let lost: Vec<SymId> = (0..len).map(|_| rng.gen_range(0..source_n)).collect();
            let known: Vec<SymId> = lost
                .iter()
                .flat_map(|&s| known_of_lost[s as usize].iter().copied())
                .collect();
            (lost, known)
        } else {
            let known: Vec<SymId> = (0..len).map(|_| rng.gen_range(0..source_n)).collect();
            let lost: Vec<SymId> = known.iter().map(|&s| known_of_lost[s as usize][0]).collect();
            (lost, known)
        };
        // apply noise to the lost side
        let lost_noisy = apply_noise(
            &lost_clean,
            spec.insertion_rate,
            spec.deletion_rate,
            source_n,
            &mut rng,
        );
        if lost_noisy.is_empty() {
            continue;
        }
        if seen_known.contains(&known_clean) || seen_lost.contains(&lost_noisy) {
            continue;
        }
        seen_known.insert(known_clean.clone());
        seen_lost.insert(lost_noisy.clone());
        pairs.push((lost_noisy, known_clean));
    }

    // unpaired removal: disjoint pair-index sets per side
    let n_drop_lost = (spec.unpaired_lost * spec.vocab_size as f64).round() as usize;
    let n_drop_known = (spec.unpaired_known * spec.vocab_size as f64).round() as usize;
    let mut idx: Vec<usize> = (0..spec.vocab_size).collect();
    idx.shuffle(&mut rng);
    let drop_lost: BTreeSet<usize> = idx[..n_drop_lost].iter().copied().collect();
    let drop_known: BTreeSet<usize> =
        idx[n_drop_lost..n_drop_lost + n_drop_known].iter().copied().collect();

    let mut lost_words: Vec<(usize, Vec<SymId>)> = Vec::new();
    let mut known_words: Vec<(usize, Vec<SymId>)> = Vec::new();
    for (p, (l, k)) in pairs.iter().enumerate() {
        if !drop_lost.contains(&p) {
            lost_words.push((p, l.clone()));
        }
        if !drop_known.contains(&p) {
            known_words.push((p, k.clone()));
        }
    }
    lost_words.shuffle(&mut rng);
    known_words.shuffle(&mut rng);

    let lost_pos: HashMap<usize, usize> =
        lost_words.iter().enumerate().map(|(i, &(p, _))| (p, i)).collect();
    let known_pos: HashMap<usize, usize> =
        known_words.iter().enumerate().map(|(i, &(p, _))| (p, i)).collect();
    let mut gold = GoldTable::default();
    for p in 0..spec.vocab_size {
        if let (Some(&i), Some(&j)) = (lost_pos.get(&p), known_pos.get(&p)) {
            gold.pairs.insert((i, j));
        }
    }

    let lost_inv = SymbolInventory::from_symbols(lost_syms)?;
    let known_inv = SymbolInventory::from_symbols(known_syms)?;
    Ok(SynthCorpus {
        lost: Vocabulary {
            words: lost_words.into_iter().map(|(_, w)| w).collect(),
            language: Language::Lost,
        },
        lost_inv,
        known: Vocabulary {
            words: known_words.into_iter().map(|(_, w)| w).collect(),
            language: Language::Known,
        },
        known_inv,
        gold,
        substitution,
    })
}

fn apply_noise(
    word: &[SymId],
    ins_rate: f64,
    del_rate: f64,
    n_symbols: u32,
    rng: &mut ChaCha20Rng,
) -> Vec<SymId> {
    let mut out = Vec::with_capacity(word.len() + 2);
    for &s in word {
        if !(del_rate > 0.0 && rng.gen_bool(del_rate)) {
            out.push(s);
        }
        if ins_rate > 0.0 && rng.gen_bool(ins_rate) {
            out.push(rng.gen_range(0..n_symbols));
        }
    }
    out
}

/// Writes lost/known word lists, gold TSV and a key=value metadata sidecar.
pub fn write_synth_corpus(dir: &Path, corpus: &SynthCorpus, spec: &SynthSpec, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_vocabulary(&dir.join("lost.txt"), &corpus.lost, &corpus.lost_inv, WordFormat::Plain)?;
    write_vocabulary(&dir.join("known.txt"), &corpus.known, &corpus.known_inv, WordFormat::Plain)?;
    let mut gold = String::new();
    for &(i, j) in &corpus.gold.pairs {
        gold.push_str(&corpus.lost_inv.render(corpus.lost.word(i), WordFormat::Plain));
        gold.push('\t');
        gold.push_str(&corpus.known_inv.render(corpus.known.word(j), WordFormat::Plain));
        gold.push('\n');
    }
    fs::write(dir.join("gold.tsv"), gold)?;
    let meta = format!(
        "seed={}\nvocab_size={}\nsymbol_count={}\nsubstitution_seed={}\ninsertion_rate={}\ndeletion_rate={}\nunpaired_lost={}\nunpaired_known={}\nsyllabic={}\n",
        seed,
        spec.vocab_size,
        spec.symbol_count,
        spec.substitution_seed,
        spec.insertion_rate,
        spec.deletion_rate,
        spec.unpaired_lost,
        spec.unpaired_known,
        spec.syllabic,
    );
    fs::write(dir.join("meta.txt"), meta)?;
    Ok(())
}
