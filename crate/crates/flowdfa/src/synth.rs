//! Deterministic synthetic NetFlow generator for demos and end-to-end
//! tests: a small microservice cluster (web front end, key-value store,
//! blog + database, SSH, storage, monitoring) under steady user traffic,
//! with three multi-step attack bursts in the second half of the capture.
//!
//! The first half is entirely benign, so splitting at [`SynthConfig::boundary_ms`]
//! gives a clean training partition. Attack flows keep their per-flow
//! features (protocol, bytes, duration) inside the benign ranges — what
//! distinguishes them is sequence structure, which is the behaviour a
//! flow-level detector cannot see and a state machine can.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::flow::{Dataset, FlowRecord, Label};

pub const USER_NET: &str = "192.168.1.";
pub const FRONTEND: &str = "10.42.0.10";
pub const REDIS_LEADER: &str = "10.42.0.11";
pub const REDIS_FOLLOWER: &str = "10.42.0.12";
pub const JOOMLA: &str = "10.42.0.20";
pub const MYSQL: &str = "10.42.0.21";
pub const OPENSSH: &str = "10.42.0.30";
pub const NFS: &str = "10.42.0.40";
pub const LONGHORN: &str = "10.42.0.41";
pub const DNS: &str = "10.42.0.2";
pub const KUBE_API: &str = "10.42.0.1";
pub const ELASTIC: &str = "10.42.0.50";
pub const NODES: [&str; 3] = ["10.42.0.61", "10.42.0.62", "10.42.0.63"];
pub const ATTACKER: &str = "203.0.113.66";
pub const MINER_POOL: &str = "198.51.100.99";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub users: usize,
    /// Total capture length; attacks need the full 120 minutes.
    pub duration_minutes: u64,
    pub with_attacks: bool,
    pub base_timestamp_ms: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            users: 20,
            duration_minutes: 120,
            with_attacks: true,
            base_timestamp_ms: 1_700_000_000_000,
        }
    }
}

impl SynthConfig {
    /// Train/test split point: the midpoint of the capture. Attacks only
    /// ever start after it.
    pub fn boundary_ms(&self) -> i64 {
        self.base_timestamp_ms + (self.duration_minutes as i64 / 2) * 60_000
    }

    /// A small benign-only corpus (roughly two hundred flows).
    pub fn mini() -> Self {
        SynthConfig {
            seed: 7,
            users: 2,
            duration_minutes: 6,
            with_attacks: false,
            ..SynthConfig::default()
        }
    }
}

struct Gen {
    rng: ChaCha8Rng,
    records: Vec<FlowRecord>,
}

impl Gen {
    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }

    /// Rounded uniform draw; rounding produces the modal values real
    /// exporters show.
    fn bytes_in(&mut self, lo: f64, hi: f64, step: u64) -> u64 {
        let raw = self.uniform(lo, hi) as u64;
        (raw / step).max(1) * step
    }

    fn dur_in(&mut self, lo: f64, hi: f64, step: f64) -> f64 {
        let raw = self.uniform(lo, hi);
        (raw / step).round().max(1.0) * step
    }

    fn pick<T: Copy>(&mut self, options: &[T]) -> T {
        options[self.rng.gen_range(0..options.len())]
    }

    fn exp_gap_ms(&mut self, mean_ms: f64) -> i64 {
        let u: f64 = self.rng.gen_range(1e-9..1.0);
        (-mean_ms * u.ln()).max(1.0) as i64
    }

    fn jitter(&mut self, lo: i64, hi: i64) -> i64 {
        self.rng.gen_range(lo..hi)
    }

    #[allow(clippy::too_many_arguments)]
    fn flow(
        &mut self,
        ts: i64,
        src: &str,
        dst: &str,
        dst_port: u16,
        proto: &str,
        bytes: u64,
        dur: f64,
        label: Label,
    ) {
        let src_port = 32768 + (self.rng.gen::<u16>() % 28000);
        self.records.push(FlowRecord {
            flow_id: 0, // assigned after the global sort
            timestamp_start: ts,
            src_host: src.to_string(),
            dst_host: dst.to_string(),
            src_port,
            dst_port,
            protocol: proto.to_string(),
            bytes_total: bytes,
            duration_ms: dur,
            label,
        });
    }

    fn dns_lookup(&mut self, ts: i64, src: &str, label: Label) {
        let bytes = self.pick(&[86, 104, 142, 198]);
        let dur = self.dur_in(0.5, 4.0, 0.1);
        self.flow(ts, src, DNS, 53, "UDP", bytes, dur, label);
    }

    fn redis_get(&mut self, ts: i64, label: Label) {
        let bytes = self.pick(&[160, 210, 340, 512, 730]);
        let dur = self.dur_in(1.0, 9.0, 0.5);
        self.flow(ts, FRONTEND, REDIS_LEADER, 6379, "TCP", bytes, dur, label);
    }

    fn web_page(&mut self, ts: i64, user: &str, dst: &str, label: Label) {
        // log-uniform page sizes between ~1.5k and ~40k; assets are
        // served from a fixed set, so sizes cluster on a coarse grid,
        // and transfer time tracks size
        let bytes = (self.uniform(1500f64.ln(), 40_000f64.ln()).exp() as u64 / 250).max(6) * 250;
        let base = 20.0 + bytes as f64 / 120.0;
        let dur = self.dur_in(base - 15.0, base + 45.0, 20.0);
        self.flow(ts, user, dst, 80, "TCP", bytes, dur, label);
    }

    fn mysql_query(&mut self, ts: i64, src: &str, label: Label) {
        let bytes = self.bytes_in(500.0, 5000.0, 250);
        let dur = self.dur_in(2.0, 40.0, 4.0);
        self.flow(ts, src, MYSQL, 3306, "TCP", bytes, dur, label);
    }

    fn ssh_session(&mut self, ts: i64, user: &str) {
        let bytes = self.bytes_in(3000.0, 50_000.0, 2000);
        let dur = self.dur_in(5000.0, 60_000.0, 2000.0);
        self.flow(ts, user, OPENSSH, 22, "TCP", bytes, dur, Label::Benign);
    }
}

/// Generate the labeled dataset. Deterministic for a given config.
pub fn generate(cfg: &SynthConfig) -> Dataset {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        records: Vec::new(),
    };
    let start = cfg.base_timestamp_ms;
    let end = start + cfg.duration_minutes as i64 * 60_000;
    let minute = |m: f64| start + (m * 60_000.0) as i64;

    // --- benign user sessions over the whole capture ---
    for u in 0..cfg.users {
        let user = format!("{USER_NET}{}", 10 + u);
        let mut t = start + g.exp_gap_ms(20_000.0);
        while t < end {
            match g.rng.gen_range(0..100) {
                0..=42 => {
                    // guestbook visit: page load, cache reads, reload
                    if g.rng.gen_bool(0.4) {
                        g.dns_lookup(t, &user, Label::Benign);
                    }
                    let dt = g.jitter(5, 20);
                    g.web_page(t + dt, &user, FRONTEND, Label::Benign);
                    let reads = g.rng.gen_range(1..=3);
                    for r in 0..reads {
                        let dt = g.jitter(4, 14);
                        g.redis_get(t + 25 + r * dt, Label::Benign);
                    }
                    if g.rng.gen_bool(0.5) {
                        let dt = g.jitter(400, 2500);
                        g.web_page(t + dt, &user, FRONTEND, Label::Benign);
                    }
                }
                43..=72 => {
                    // blog visit: page, database queries, maybe second page
                    if g.rng.gen_bool(0.4) {
                        g.dns_lookup(t, &user, Label::Benign);
                    }
                    let dt = g.jitter(5, 20);
                    g.web_page(t + dt, &user, JOOMLA, Label::Benign);
                    let queries = g.rng.gen_range(1..=2);
                    for q in 0..queries {
                        let dt = g.jitter(6, 25);
                        g.mysql_query(t + 30 + q * dt, JOOMLA, Label::Benign);
                    }
                    if g.rng.gen_bool(0.35) {
                        let dt = g.jitter(500, 3000);
                        g.web_page(t + dt, &user, JOOMLA, Label::Benign);
                    }
                }
                73..=84 => {
                    if g.rng.gen_bool(0.5) {
                        g.dns_lookup(t, &user, Label::Benign);
                    }
                    let ts = t + g.jitter(5, 40);
                    g.ssh_session(ts, &user);
                }
                _ => {
                    // stray lookup without a follow-up session
                    g.dns_lookup(t, &user, Label::Benign);
                }
            }
            t += g.exp_gap_ms(55_000.0);
        }
    }

    // --- benign background: monitoring beats, storage, replication ---
    for node in NODES {
        let mut t = start + g.exp_gap_ms(4000.0);
        while t < end {
            let bytes = g.pick(&[1420u64, 2840, 4260]);
            let dur = g.dur_in(10.0, 80.0, 5.0);
            g.flow(t, node, ELASTIC, 9200, "TCP", bytes, dur, Label::Benign);
            t += 10_000 + g.rng.gen_range(0..3000);
        }
    }
    {
        let mut t = start + g.exp_gap_ms(6000.0);
        while t < end {
            let bytes = g.bytes_in(1000.0, 20_000.0, 500);
            let dur = g.dur_in(5.0, 100.0, 10.0);
            g.flow(t, LONGHORN, NFS, 2049, "TCP", bytes, dur, Label::Benign);
            t += 15_000 + g.rng.gen_range(0..5000);
        }
    }
    {
        let mut t = start + g.exp_gap_ms(3000.0);
        while t < end {
            let bytes = g.pick(&[256u64, 384]);
            let dur = g.dur_in(1.0, 8.0, 0.5);
            g.flow(t, REDIS_LEADER, REDIS_FOLLOWER, 6379, "TCP", bytes, dur, Label::Benign);
            t += 5_000 + g.rng.gen_range(0..2000);
        }
    }
    {
        // liveness pings from the monitoring namespace
        let mut t = start + g.exp_gap_ms(8000.0);
        while t < end {
            let dur = g.dur_in(0.5, 2.0, 0.1);
            g.flow(t, ELASTIC, FRONTEND, 0, "ICMP", 64, dur, Label::Benign);
            t += 30_000 + g.rng.gen_range(0..4000);
        }
    }

    // --- attacks, second half only ---
    if cfg.with_attacks {
        assert!(
            cfg.duration_minutes >= 120,
            "attack schedule needs the full 120-minute capture"
        );
        let m = Label::Malicious;

        // scenario 1: foothold and persistence on the guestbook
        // content discovery: a fast crawl, mostly small error pages
        let mut t = minute(65.0);
        while t < minute(68.0) {
            let bytes = g.bytes_in(64.0, 240.0, 4);
            let dur = g.dur_in(3.0, 25.0, 0.5);
            g.flow(t, ATTACKER, FRONTEND, 80, "TCP", bytes, dur, m);
            t += g.rng.gen_range(250..550);
        }
        // reverse shell held open from the front end
        g.flow(minute(68.1), FRONTEND, ATTACKER, 4444, "TCP", 47_500, 185_000.0, m);
        // discovery and lateral movement: bursts of fast in-cluster
        // reads — large payloads returned in single-digit milliseconds
        let mut t = minute(68.2);
        for burst in 0..6 {
            let (dst, port): (&str, u16) = match burst % 4 {
                0 => (KUBE_API, 6443),
                1 => (REDIS_FOLLOWER, 6379),
                2 => (MYSQL, 3306),
                _ => (JOOMLA, 80),
            };
            for _ in 0..g.rng.gen_range(8..14) {
                let bytes = g.bytes_in(6000.0, 15_000.0, 100);
                let dur = g.dur_in(1.2, 4.2, 0.3);
                g.flow(t, FRONTEND, dst, port, "TCP", bytes, dur, m);
                t += g.rng.gen_range(80..300);
            }
            t += g.rng.gen_range(1000..4000);
        }
        // persistence: daemon-set deployment chatter with the API server
        let mut t = minute(70.6);
        for _ in 0..10 {
            let bytes = g.bytes_in(6000.0, 12_000.0, 100);
            let dur = g.dur_in(1.2, 6.0, 0.3);
            g.flow(t, FRONTEND, KUBE_API, 6443, "TCP", bytes, dur, m);
            t += g.rng.gen_range(150..700);
        }

        // scenario 2: CPU denial of service against the SSH service —
        // a thousand oversized authentication attempts back to back,
        // each held open for seconds while the server grinds
        let mut t = minute(85.0);
        for _ in 0..1000 {
            let bytes = g.bytes_in(1200.0, 2600.0, 20);
            let dur = g.dur_in(1500.0, 4500.0, 100.0);
            g.flow(t, ATTACKER, OPENSSH, 22, "TCP", bytes, dur, m);
            t += g.rng.gen_range(90..150);
        }

        // scenario 3: code injection on the blog, then a miner beaconing.
        // the injected requests carry oversized headers answered fast
        let mut t = minute(100.0);
        for _ in 0..25 {
            let bytes = g.bytes_in(5000.0, 9000.0, 100);
            let dur = g.dur_in(10.0, 30.0, 1.0);
            g.flow(t, ATTACKER, JOOMLA, 80, "TCP", bytes, dur, m);
            t += g.rng.gen_range(150..300);
        }
        // each beacon: a lookup plus share submissions; share sizes sit
        // between the cache-read and page-size bands, held open for the
        // pool's long-poll interval
        let mut t = minute(100.5);
        while t < minute(110.0) {
            let bytes = g.pick(&[104u64, 142]);
            let dur = g.dur_in(0.5, 4.0, 0.1);
            g.flow(t, JOOMLA, DNS, 53, "UDP", bytes, dur, m);
            for s in 0..2 {
                let chunk = g.bytes_in(2000.0, 4000.0, 20);
                let dur = g.dur_in(0.5, 4.0, 0.1);
                let dt = g.jitter(4, 20);
                g.flow(t + dt + s * 30, JOOMLA, DNS, 53, "UDP", chunk, dur, m);
            }
            let share = g.bytes_in(760.0, 1380.0, 20);
            let dur = g.dur_in(500.0, 900.0, 20.0);
            let dt = g.jitter(60, 120);
            g.flow(t + dt, JOOMLA, MINER_POOL, 3333, "TCP", share, dur, m);
            t += g.rng.gen_range(1000..1500);
        }
    }

    // global order, then stable ordinals
    let mut records = g.records;
    records.sort_by(|a, b| {
        (
            a.timestamp_start,
            &a.src_host,
            &a.dst_host,
            a.bytes_total,
            a.duration_ms.to_bits(),
        )
            .cmp(&(
                b.timestamp_start,
                &b.src_host,
                &b.dst_host,
                b.bytes_total,
                b.duration_ms.to_bits(),
            ))
    });
    for (i, r) in records.iter_mut().enumerate() {
        r.flow_id = i as u64;
    }
    Dataset::from_records(records, format!("synthetic(seed={})", cfg.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::split_train_test;

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = SynthConfig {
            users: 4,
            ..SynthConfig::default()
        };
        let a = generate(&cfg);
        let b = generate(&cfg);
        assert_eq!(a.records, b.records);
        assert!(a.len() > 1000);
    }

    #[test]
    fn first_half_is_benign_and_splits_cleanly() {
        let cfg = SynthConfig {
            users: 4,
            ..SynthConfig::default()
        };
        let ds = generate(&cfg);
        let (train, test) = split_train_test(&ds, cfg.boundary_ms()).unwrap();
        assert!(train.records.iter().all(|r| !r.label.is_malicious()));
        let malicious = test.records.iter().filter(|r| r.label.is_malicious()).count();
        assert!(malicious > 1000, "attack flows present: {malicious}");
        assert_eq!(train.len() + test.len(), ds.len());
    }

    #[test]
    fn attack_features_stay_inside_benign_ranges() {
        let cfg = SynthConfig {
            users: 8,
            ..SynthConfig::default()
        };
        let ds = generate(&cfg);
        let benign_max_bytes = ds
            .records
            .iter()
            .filter(|r| !r.label.is_malicious())
            .map(|r| r.bytes_total)
            .max()
            .unwrap();
        let attack_tcp_bytes: Vec<u64> = ds
            .records
            .iter()
            .filter(|r| r.label.is_malicious() && r.protocol == "TCP")
            .map(|r| r.bytes_total)
            .collect();
        assert!(!attack_tcp_bytes.is_empty());
        for b in attack_tcp_bytes {
            assert!(b <= benign_max_bytes);
        }
    }

    #[test]
    fn mini_corpus_is_small_and_benign() {
        let ds = generate(&SynthConfig::mini());
        assert!(ds.len() > 100 && ds.len() < 600, "got {}", ds.len());
        assert!(ds.records.iter().all(|r| !r.label.is_malicious()));
    }

    #[test]
    fn flow_ids_are_unique_ordinals() {
        let ds = generate(&SynthConfig::mini());
        for (i, r) in ds.records.iter().enumerate() {
            assert_eq!(r.flow_id, i as u64);
        }
    }
}
