use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::vocab::{build_vocab, Vocab};
use crate::{LmError, Result};

pub const EOS: &str = "<eos>";

/// Word-level tokens of one line followed by [`EOS`].
pub fn tokenize_line(line: &str) -> impl Iterator<Item = &str> {
    line.split_whitespace().chain(std::iter::once(EOS))
}

/// Train/valid/test id streams sharing one vocabulary built on the training
/// split.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vocab,
    pub train: Vec<u32>,
    pub valid: Vec<u32>,
    pub test: Vec<u32>,
}

impl Corpus {
    /// Splits non-empty lines 80/10/10 in order.
    pub fn from_text(text: &str, max_vocab: usize) -> Result<Self> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() < 3 {
            return Err(LmError::Empty("corpus needs at least three non-empty lines"));
        }
        let n = lines.len();
        let a = (n * 8 / 10).max(1);
        let b = (n * 9 / 10).max(a + 1).min(n - 1);
        let (train, rest) = lines.split_at(a);
        let (valid, test) = rest.split_at(b - a);
        Self::from_splits(train, valid, test, max_vocab)
    }

    pub fn from_splits(train: &[&str], valid: &[&str], test: &[&str], max_vocab: usize) -> Result<Self> {
        let vocab = build_vocab(train.iter().flat_map(|l| tokenize_line(l)), max_vocab)?;
        let enc = |ls: &[&str]| -> Vec<u32> { vocab.encode(ls.iter().flat_map(|l| tokenize_line(l))) };
        let (train, valid, test) = (enc(train), enc(valid), enc(test));
        Ok(Self { vocab, train, valid, test })
    }
}

/// A token stream laid out as `batch` parallel rows for truncated BPTT.
#[derive(Debug, Clone)]
pub struct Batches {
    batch: usize,
    len: usize,
    data: Vec<u32>,
}

impl Batches {
    /// Drops the tail that does not fill a whole column.
    pub fn new(ids: &[u32], batch: usize) -> Result<Self> {
        if batch == 0 {
            return Err(LmError::Config("batch size must be positive".into()));
        }
        let len = ids.len() / batch;
        if len < 2 {
            return Err(LmError::Empty("token stream too short for the batch size"));
        }
        Ok(Self {
            batch,
            len,
            data: ids[..batch * len].to_vec(),
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Number of windows of length `bptt` (the last one may be shorter).
    pub fn windows(&self, bptt: usize) -> usize {
        (self.len - 1).div_ceil(bptt)
    }

    /// Inputs and targets of window `k`, both time-major: element
    /// `t * batch + b`.
    pub fn window(&self, k: usize, bptt: usize) -> (Vec<u32>, Vec<u32>) {
        let start = k * bptt;
        let steps = bptt.min(self.len - 1 - start);
        let mut inputs = Vec::with_capacity(steps * self.batch);
        let mut targets = Vec::with_capacity(steps * self.batch);
        for t in 0..steps {
            for b in 0..self.batch {
                inputs.push(self.data[b * self.len + start + t]);
                targets.push(self.data[b * self.len + start + t + 1]);
            }
        }
        (inputs, targets)
    }

    /// Predicted tokens per epoch.
    pub fn target_count(&self) -> usize {
        (self.len - 1) * self.batch
    }
}

/// Generator seed and minimum length of the bundled toy corpus.
pub const TOY_SEED: u64 = 7;
pub const TOY_CHARS: usize = 300_000;

/// The bundled toy corpus, equal to `synthetic_corpus(TOY_SEED, TOY_CHARS)`.
pub fn toy_corpus() -> &'static str {
    include_str!("../data/toy_corpus.txt")
}

struct Topic {
    nouns: &'static [(&'static str, &'static str)],
    verbs: &'static [(&'static str, &'static str)],
    adjectives: &'static [&'static str],
    places: &'static [&'static str],
}

const TOPICS: &[Topic] = &[
    Topic {
        nouns: &[
            ("ship", "ships"), ("sailor", "sailors"), ("wave", "waves"), ("harbor", "harbors"),
            ("captain", "captains"), ("anchor", "anchors"), ("gull", "gulls"), ("net", "nets"),
            ("island", "islands"), ("storm", "storms"), ("tide", "tides"), ("lantern", "lanterns"),
            ("rope", "ropes"), ("fisherman", "fishermen"), ("sail", "sails"), ("whale", "whales"),
        ],
        verbs: &[
            ("sails", "sail"), ("pulls", "pull"), ("watches", "watch"), ("repairs", "repair"),
            ("follows", "follow"), ("crosses", "cross"), ("loads", "load"), ("ties", "tie"),
            ("drifts", "drift"), ("signals", "signal"),
        ],
        adjectives: &["salty", "grey", "wet", "distant", "heavy", "calm", "rough", "bright"],
        places: &["at sea", "near the coast", "in the harbor", "past the reef"],
    },
    Topic {
        nouns: &[
            ("farmer", "farmers"), ("field", "fields"), ("horse", "horses"), ("barn", "barns"),
            ("apple", "apples"), ("cow", "cows"), ("fence", "fences"), ("seed", "seeds"),
            ("tractor", "tractors"), ("goat", "goats"), ("orchard", "orchards"), ("hen", "hens"),
            ("wagon", "wagons"), ("well", "wells"), ("pumpkin", "pumpkins"), ("shepherd", "shepherds"),
        ],
        verbs: &[
            ("plants", "plant"), ("feeds", "feed"), ("harvests", "harvest"), ("builds", "build"),
            ("waters", "water"), ("carries", "carry"), ("sells", "sell"), ("guards", "guard"),
            ("counts", "count"), ("gathers", "gather"),
        ],
        adjectives: &["green", "muddy", "ripe", "old", "golden", "quiet", "wide", "dusty"],
        places: &["on the farm", "behind the barn", "in the valley", "by the river"],
    },
    Topic {
        nouns: &[
            ("engine", "engines"), ("wheel", "wheels"), ("machine", "machines"), ("engineer", "engineers"),
            ("wire", "wires"), ("gear", "gears"), ("lever", "levers"), ("pump", "pumps"),
            ("circuit", "circuits"), ("valve", "valves"), ("robot", "robots"), ("bolt", "bolts"),
            ("furnace", "furnaces"), ("piston", "pistons"), ("signal", "signals"), ("clock", "clocks"),
        ],
        verbs: &[
            ("starts", "start"), ("tests", "test"), ("turns", "turn"), ("measures", "measure"),
            ("connects", "connect"), ("cleans", "clean"), ("adjusts", "adjust"), ("powers", "power"),
            ("breaks", "break"), ("controls", "control"),
        ],
        adjectives: &["steel", "noisy", "hot", "precise", "broken", "electric", "small", "new"],
        places: &["in the workshop", "at the factory", "inside the tower", "under the bridge"],
    },
    Topic {
        nouns: &[
            ("king", "kings"), ("queen", "queens"), ("knight", "knights"), ("castle", "castles"),
            ("sword", "swords"), ("dragon", "dragons"), ("crown", "crowns"), ("guard", "guards"),
            ("banner", "banners"), ("wizard", "wizards"), ("tower", "towers"), ("shield", "shields"),
            ("servant", "servants"), ("gate", "gates"), ("feast", "feasts"), ("prince", "princes"),
        ],
        verbs: &[
            ("defends", "defend"), ("rules", "rule"), ("commands", "command"), ("crowns", "crown"),
            ("fights", "fight"), ("praises", "praise"), ("betrays", "betray"), ("summons", "summon"),
            ("protects", "protect"), ("visits", "visit"),
        ],
        adjectives: &["royal", "brave", "ancient", "proud", "golden", "dark", "loyal", "tall"],
        places: &["in the kingdom", "at the castle", "beyond the mountains", "in the great hall"],
    },
    Topic {
        nouns: &[
            ("student", "students"), ("teacher", "teachers"), ("book", "books"), ("lesson", "lessons"),
            ("library", "libraries"), ("desk", "desks"), ("letter", "letters"), ("page", "pages"),
            ("pencil", "pencils"), ("map", "maps"), ("question", "questions"), ("poem", "poems"),
            ("scholar", "scholars"), ("story", "stories"), ("school", "schools"), ("exam", "exams"),
        ],
        verbs: &[
            ("reads", "read"), ("writes", "write"), ("studies", "study"), ("explains", "explain"),
            ("copies", "copy"), ("answers", "answer"), ("borrows", "borrow"), ("marks", "mark"),
            ("remembers", "remember"), ("teaches", "teach"),
        ],
        adjectives: &["clever", "long", "difficult", "famous", "thin", "careful", "young", "strange"],
        places: &["at school", "in the library", "after class", "in the morning"],
    },
    Topic {
        nouns: &[
            ("baker", "bakers"), ("bread", "breads"), ("oven", "ovens"), ("cake", "cakes"),
            ("kitchen", "kitchens"), ("spoon", "spoons"), ("cook", "cooks"), ("pot", "pots"),
            ("soup", "soups"), ("plate", "plates"), ("market", "markets"), ("basket", "baskets"),
            ("cheese", "cheeses"), ("onion", "onions"), ("guest", "guests"), ("table", "tables"),
        ],
        verbs: &[
            ("bakes", "bake"), ("cooks", "cook"), ("tastes", "taste"), ("serves", "serve"),
            ("stirs", "stir"), ("cuts", "cut"), ("washes", "wash"), ("buys", "buy"),
            ("prepares", "prepare"), ("brings", "bring"),
        ],
        adjectives: &["warm", "sweet", "fresh", "sour", "crisp", "soft", "spicy", "empty"],
        places: &["in the kitchen", "at the market", "before dinner", "on the table"],
    },
];

const NAMES: &[&str] = &[
    "anna", "boris", "clara", "david", "elena", "felix", "greta", "hugo", "irene", "jonas",
    "karin", "leo", "marta", "nils", "olga", "peter",
];
const DETS_SG: &[&str] = &["the", "a", "this", "that", "every"];
const DETS_PL: &[&str] = &["the", "some", "these", "those", "many", "two", "three"];
const ADVERBS: &[&str] = &["slowly", "again", "quickly", "often", "carefully", "never", "always", "today"];
const CONNECT: &[&str] = &["and", "but", "so", "because", "while"];

/// Index drawn with weight `1 / (rank + 1)`.
fn zipf<R: Rng>(rng: &mut R, n: usize) -> usize {
    let total: f64 = (1..=n).map(|k| 1.0 / k as f64).sum();
    let mut u = rng.gen::<f64>() * total;
    for k in 0..n {
        u -= 1.0 / (k + 1) as f64;
        if u <= 0.0 {
            return k;
        }
    }
    n - 1
}

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs[zipf(rng, xs.len())]
}

fn noun_phrase<R: Rng>(rng: &mut R, topic: &Topic, plural: bool, out: &mut Vec<&'static str>) {
    let (sg, pl) = topic.nouns[zipf(rng, topic.nouns.len())];
    out.push(if plural { *DETS_PL.choose(rng).unwrap() } else { *DETS_SG.choose(rng).unwrap() });
    if rng.gen_bool(0.4) {
        out.push(pick(rng, topic.adjectives));
    }
    out.push(if plural { pl } else { sg });
}

/// `subject verb object [place] [adverb]`, with number agreement between
/// subject and verb.
fn clause<R: Rng>(rng: &mut R, topic: &Topic, name: &'static str, out: &mut Vec<&'static str>) {
    let plural;
    match rng.gen_range(0..10) {
        0..=2 => {
            out.push(name);
            plural = false;
        }
        3 => {
            out.push(if rng.gen_bool(0.5) { "he" } else { "she" });
            plural = false;
        }
        4 => {
            out.push("they");
            plural = true;
        }
        _ => {
            plural = rng.gen_bool(0.4);
            noun_phrase(rng, topic, plural, out);
            if rng.gen_bool(0.25) {
                // A relative clause between subject and verb.
                out.push("that");
                let (v3, vpl) = topic.verbs[zipf(rng, topic.verbs.len())];
                out.push(if plural { vpl } else { v3 });
                let obj_pl = rng.gen_bool(0.5);
                noun_phrase(rng, topic, obj_pl, out);
            }
        }
    }
    let (v3, vpl) = topic.verbs[zipf(rng, topic.verbs.len())];
    out.push(if plural { vpl } else { v3 });
    let obj_pl = rng.gen_bool(0.4);
    noun_phrase(rng, topic, obj_pl, out);
    if rng.gen_bool(0.35) {
        out.extend(pick(rng, topic.places).split(' '));
    }
    if rng.gen_bool(0.2) {
        out.push(pick(rng, ADVERBS));
    }
}

/// Deterministic text from a small topic grammar: paragraphs of sentences
/// about one topic and one protagonist, one sentence per line, at least
/// `min_chars` characters long.
pub fn synthetic_corpus(seed: u64, min_chars: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::with_capacity(min_chars + 256);
    let mut words: Vec<&'static str> = Vec::new();
    while text.len() < min_chars {
        let topic = &TOPICS[rng.gen_range(0..TOPICS.len())];
        let name = *NAMES.choose(&mut rng).unwrap();
        for _ in 0..rng.gen_range(3..=7) {
            words.clear();
            clause(&mut rng, topic, name, &mut words);
            if rng.gen_bool(0.3) {
                words.push(pick(&mut rng, CONNECT));
                clause(&mut rng, topic, name, &mut words);
            }
            words.push(".");
            text.push_str(&words.join(" "));
            text.push('\n');
        }
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_deterministic() {
        assert_eq!(synthetic_corpus(3, 5000), synthetic_corpus(3, 5000));
        assert_ne!(synthetic_corpus(3, 5000), synthetic_corpus(4, 5000));
    }

    #[test]
    fn windows_cover_the_stream() {
        let ids: Vec<u32> = (0..23).collect();
        let b = Batches::new(&ids, 2).unwrap();
        assert_eq!(b.target_count(), 20);
        assert_eq!(b.windows(4), 3);
        let (x, y) = b.window(0, 4);
        assert_eq!(&x[..4], &[0, 11, 1, 12]);
        assert_eq!(&y[..4], &[1, 12, 2, 13]);
        let (x, _) = b.window(2, 4);
        assert_eq!(x.len(), 2 * 2);
        let total: usize = (0..3).map(|k| b.window(k, 4).1.len()).sum();
        assert_eq!(total, 20);
    }

    #[test]
    fn splits_share_the_training_vocab() {
        let c = Corpus::from_text(&synthetic_corpus(1, 20_000), 2000).unwrap();
        assert!(c.vocab.len() > 100);
        assert!(!c.valid.is_empty() && !c.test.is_empty());
        assert!(c.train.len() > 6 * c.valid.len());
    }
}
