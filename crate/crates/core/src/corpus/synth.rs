//! Synthetic corpus generator.
//!
//! Stands in for a real mail corpus: human messages come from a pool of
//! individual senders with personal-style text and optional salutations;
//! machine messages come from high-volume bulk senders with template text.
//! Recipient open/delete flags are drawn from per-class coupling strengths so
//! the behavioral label sets have the expected selectivity ordering. A slice
//! of messages swaps text pools with the other class ("ambiguous" text) so
//! content alone cannot separate perfectly while sender, action, and
//! salutation signals still can.
//!
//! Generation is seed-deterministic and per-message independent: message `i`
//! draws from its own derived stream, so the corpus is identical regardless
//! of thread count or generation order.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EmailRecord, GoldLabel};
use crate::{par, rng, Error, Result};

const HUMAN_WORDS: &[&str] = &[
    "lunch", "tomorrow", "thanks", "photos", "weekend", "trip", "dinner", "mom", "dad", "call",
    "meeting", "notes", "funny", "saw", "yesterday", "house", "kids", "game", "drinks", "movie",
    "coffee", "birthday", "plans", "flight", "visit", "catch", "up", "soon", "miss", "you",
    "great", "time", "last", "night", "borrow", "book", "recipe", "garden", "dog", "weather",
];

const MACHINE_WORDS: &[&str] = &[
    "unsubscribe", "sale", "offer", "discount", "newsletter", "order", "shipping", "account",
    "verify", "invoice", "deal", "exclusive", "limited", "free", "click", "here", "confirm",
    "payment", "receipt", "subscription", "upgrade", "premium", "alert", "statement", "points",
    "rewards", "expires", "activate", "coupon", "delivery", "tracking", "promo", "savings",
    "membership", "renewal", "catalog", "preview", "update", "terms", "notification",
];

/// Number of fixed ambiguous template texts shared by both classes.
const AMBIGUOUS_TEMPLATES: u64 = 150;

/// Union pool for ambiguous messages: a coin flip between the two styles.
const MIXED_WORDS: &[&str] = &[
    "lunch", "tomorrow", "thanks", "photos", "weekend", "trip", "dinner", "call", "meeting",
    "notes", "coffee", "birthday", "plans", "flight", "visit", "unsubscribe", "sale", "offer",
    "discount", "newsletter", "order", "shipping", "account", "verify", "invoice", "deal",
    "exclusive", "limited", "payment", "receipt",
];

const NEUTRAL_WORDS: &[&str] = &[
    "the", "a", "is", "on", "for", "and", "with", "this", "week", "new", "today", "please",
    "your", "our", "more", "info", "see", "get", "now", "just",
];

const FIRST_NAMES: &[&str] = &[
    "john", "maria", "wei", "sam", "ana", "david", "yuki", "omar", "lena", "carlos", "priya",
    "tom", "sara", "ivan", "nina", "paul", "rosa", "ken", "amy", "luis",
];

const LAST_NAMES: &[&str] = &[
    "smith", "garcia", "chen", "jones", "diaz", "kim", "patel", "novak", "silva", "brown",
    "tanaka", "lopez", "murphy", "khan", "weber", "rossi", "larsen", "costa", "lee", "wright",
];

const PERSONAL_DOMAINS: &[&str] = &[
    "mailbox.example", "homemail.example", "postbin.example", "inboxy.example",
];

const COMPANIES: &[&str] = &[
    "shopfast", "traveldeals", "newsdaily", "bankalerts", "streamplus", "fitclub", "bookbarn",
    "cloudpay", "gamehub", "foodbox", "stylemart", "autoparts",
];

const DEPTS: &[&str] = &["noreply", "news", "deals", "billing", "support", "info", "offers"];

const TLDS: &[&str] = &["example", "test.example", "mail.example"];

/// Knobs of the synthetic corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_messages: usize,
    /// Fraction of messages with human-natured content.
    pub human_fraction: f64,
    /// Fraction of gold labels masked to `unknown`.
    pub unknown_fraction: f64,
    /// P(opened and not deleted | human).
    pub p_human_open_not_del: f64,
    /// P(deleted and not opened | human).
    pub p_human_del_not_open: f64,
    /// P(opened and not deleted | machine).
    pub p_machine_open_not_del: f64,
    /// P(deleted and not opened | machine).
    pub p_machine_del_not_open: f64,
    /// P(opened and deleted), either class.
    pub p_both: f64,
    /// P(body starts with a recipient-name salutation | class).
    pub salutation_rate_human: f64,
    pub salutation_rate_machine: f64,
    /// Fraction of messages whose subject/body draw from the other class's
    /// word pool.
    pub ambiguous_text_fraction: f64,
    pub n_days: u32,
    pub start_day: NaiveDate,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_messages: 20_000,
            human_fraction: 0.05,
            unknown_fraction: 0.08,
            p_human_open_not_del: 0.70,
            p_human_del_not_open: 0.03,
            p_machine_open_not_del: 0.15,
            p_machine_del_not_open: 0.45,
            p_both: 0.02,
            salutation_rate_human: 0.65,
            salutation_rate_machine: 0.03,
            ambiguous_text_fraction: 0.20,
            n_days: 10,
            start_day: NaiveDate::from_ymd_opt(2021, 6, 1).unwrap(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.human_fraction,
            self.unknown_fraction,
            self.p_human_open_not_del,
            self.p_human_del_not_open,
            self.p_machine_open_not_del,
            self.p_machine_del_not_open,
            self.p_both,
            self.salutation_rate_human,
            self.salutation_rate_machine,
            self.ambiguous_text_fraction,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig(
                "synthetic corpus probabilities must be in [0, 1]".into(),
            ));
        }
        if self.p_human_open_not_del + self.p_human_del_not_open + self.p_both > 1.0
            || self.p_machine_open_not_del + self.p_machine_del_not_open + self.p_both > 1.0
        {
            return Err(Error::InvalidConfig(
                "action coupling probabilities exceed 1 for a class".into(),
            ));
        }
        if self.n_messages == 0 || self.n_days == 0 {
            return Err(Error::InvalidConfig(
                "n_messages and n_days must be positive".into(),
            ));
        }
        Ok(())
    }
}

struct Sender {
    address: String,
    name: String,
    /// Campaign subject templates (machine senders only).
    templates: Vec<String>,
}

struct Pools {
    human_senders: Vec<Sender>,
    machine_senders: Vec<Sender>,
    /// Cumulative volume weights over machine senders.
    machine_cdf: Vec<f64>,
    recipients: Vec<(String, String)>, // (first, full name)
}

fn build_pools(spec: &SynthSpec) -> Pools {
    let mut r = rng::stream(spec.seed, "synth-pools");
    let n_human_msgs = (spec.n_messages as f64 * spec.human_fraction).ceil() as usize;
    let n_human_senders = (n_human_msgs / 3).clamp(8, 4000);
    let n_machine_senders =
        ((spec.n_messages - n_human_msgs.min(spec.n_messages)) / 15).clamp(40, 2000);

    let mut human_senders = Vec::with_capacity(n_human_senders);
    for i in 0..n_human_senders {
        let first = FIRST_NAMES.choose(&mut r).unwrap();
        let last = LAST_NAMES.choose(&mut r).unwrap();
        let domain = PERSONAL_DOMAINS.choose(&mut r).unwrap();
        human_senders.push(Sender {
            address: format!("{first}.{last}{i}@{domain}"),
            name: format!(
                "{} {}",
                capitalize(first),
                capitalize(last)
            ),
            templates: Vec::new(),
        });
    }

    let mut machine_senders = Vec::with_capacity(n_machine_senders);
    for i in 0..n_machine_senders {
        let company = COMPANIES.choose(&mut r).unwrap();
        let dept = DEPTS.choose(&mut r).unwrap();
        let tld = TLDS.choose(&mut r).unwrap();
        let templates = (0..3)
            .map(|_| {
                let w1 = MACHINE_WORDS.choose(&mut r).unwrap();
                let w2 = MACHINE_WORDS.choose(&mut r).unwrap();
                format!("{w1} {w2} from {company}")
            })
            .collect();
        machine_senders.push(Sender {
            address: format!("{dept}@{company}{i}.{tld}"),
            name: format!("{} {}", capitalize(company), capitalize(dept)),
            templates,
        });
    }

    // Volume skew: sender at rank k gets weight 1/(1+k).
    let mut machine_cdf = Vec::with_capacity(n_machine_senders);
    let mut acc = 0.0;
    for k in 0..n_machine_senders {
        acc += 1.0 / (1.0 + k as f64);
        machine_cdf.push(acc);
    }

    let recipients = (0..8)
        .map(|_| {
            let first = FIRST_NAMES.choose(&mut r).unwrap();
            let last = LAST_NAMES.choose(&mut r).unwrap();
            ((*first).to_string(), format!("{} {}", capitalize(first), capitalize(last)))
        })
        .collect();

    Pools {
        human_senders,
        machine_senders,
        machine_cdf,
        recipients,
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn sample_words(r: &mut impl Rng, pool: &[&'static str], n: usize) -> Vec<&'static str> {
    (0..n)
        .map(|_| {
            if r.gen::<f64>() < 0.25 {
                *NEUTRAL_WORDS.choose(r).unwrap()
            } else {
                *pool.choose(r).unwrap()
            }
        })
        .collect()
}

/// Fixed text of ambiguous template `t`: a deterministic mixed-style bag,
/// identical for every message that draws it.
fn template_words(seed: u64, t: u64, subject: bool) -> Vec<&'static str> {
    let mut tr = rng::stream_indexed(seed, "synth-template", t);
    let n = if subject { 3 } else { 14 };
    // Skip the subject draw so subject and body differ per template.
    if !subject {
        let _ = sample_words(&mut tr, MIXED_WORDS, 3);
    }
    sample_words(&mut tr, MIXED_WORDS, n)
}

/// Generates the corpus described by `spec`. Message ids are `m{index:07}`;
/// two calls with the same spec produce identical records.
pub fn generate_corpus(spec: &SynthSpec) -> Result<Vec<EmailRecord>> {
    spec.validate()?;
    let pools = build_pools(spec);
    let records = par::map_collect_indexed(spec.n_messages, |i| {
        generate_message(spec, &pools, i)
    });
    Ok(records)
}

fn generate_message(spec: &SynthSpec, pools: &Pools, i: usize) -> EmailRecord {
    let mut r = rng::stream_indexed(spec.seed, "synth-msg", i as u64);
    let human = r.gen::<f64>() < spec.human_fraction;
    // Ambiguous messages reuse one of a small set of fixed mixed-style
    // template texts. The same template occurs under both labels, so text
    // alone cannot separate (or even memorize) them; their sender, action,
    // and salutation behavior stays class-faithful.
    let ambiguous = r.gen::<f64>() < spec.ambiguous_text_fraction;
    let template = if ambiguous {
        Some(r.gen_range(0..AMBIGUOUS_TEMPLATES))
    } else {
        None
    };
    let text_pool: &[&'static str] = if human { HUMAN_WORDS } else { MACHINE_WORDS };

    let (recipient_first, recipient_full) = pools.recipients.choose(&mut r).unwrap();
    let mut recipient_names = vec![recipient_full.clone()];
    if r.gen::<f64>() < 0.2 {
        recipient_names.push(pools.recipients.choose(&mut r).unwrap().1.clone());
    }

    let (sender, subject) = if human {
        let sender = pools.human_senders.choose(&mut r).unwrap();
        let subject = match template {
            Some(t) => template_words(spec.seed, t, true).join(" "),
            None => {
                let n_subject = r.gen_range(2..=4);
                sample_words(&mut r, text_pool, n_subject).join(" ")
            }
        };
        (sender, subject)
    } else {
        let u = r.gen::<f64>() * pools.machine_cdf.last().unwrap();
        let k = pools.machine_cdf.partition_point(|&c| c < u);
        let sender = &pools.machine_senders[k.min(pools.machine_senders.len() - 1)];
        let day_bucket = r.gen_range(0..spec.n_days);
        let subject = match template {
            Some(t) => template_words(spec.seed, t, true).join(" "),
            None => format!(
                "{} day {day_bucket}",
                sender.templates.choose(&mut r).unwrap()
            ),
        };
        (sender, subject)
    };

    let salutation_rate = if human {
        spec.salutation_rate_human
    } else {
        spec.salutation_rate_machine
    };
    let mut body_words: Vec<String> = Vec::new();
    if r.gen::<f64>() < salutation_rate {
        let greeting = ["dear", "hi", "hello"].choose(&mut r).unwrap();
        body_words.push(format!("{greeting} {recipient_first},"));
    } else if !human && r.gen::<f64>() < 0.3 {
        body_words.push("dear customer,".to_string());
    }
    match template {
        Some(t) => {
            body_words.extend(template_words(spec.seed, t, false).iter().map(|w| w.to_string()));
        }
        None => {
            let n_body = r.gen_range(8..=30);
            body_words.extend(sample_words(&mut r, text_pool, n_body).iter().map(|w| w.to_string()));
            if !human && r.gen::<f64>() < 0.7 {
                body_words.push("unsubscribe here".to_string());
            }
        }
    }
    let body = body_words.join(" ");

    let (p_a, p_b) = if human {
        (spec.p_human_open_not_del, spec.p_human_del_not_open)
    } else {
        (spec.p_machine_open_not_del, spec.p_machine_del_not_open)
    };
    let u = r.gen::<f64>();
    let (opened, deleted) = if u < p_a {
        (true, false)
    } else if u < p_a + p_b {
        (false, true)
    } else if u < p_a + p_b + spec.p_both {
        (true, true)
    } else {
        (false, false)
    };

    let day = spec.start_day + chrono::Days::new(r.gen_range(0..spec.n_days) as u64);
    let gold = if r.gen::<f64>() < spec.unknown_fraction {
        GoldLabel::Unknown
    } else if human {
        GoldLabel::Human
    } else {
        GoldLabel::Machine
    };

    EmailRecord {
        message_id: format!("m{i:07}"),
        sender_address: sender.address.clone(),
        sender_name: sender.name.clone(),
        subject,
        body,
        recipient_names,
        opened,
        deleted,
        day,
        gold_label: Some(gold),
    }
}
