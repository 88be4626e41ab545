use std::collections::BTreeMap;
use std::io::BufReader;

use proptest::prelude::*;

use fedtrust::ids::{MinerId, PublisherId, WorkerId};
use fedtrust::ledger::export::{read_chain, write_chain};
use fedtrust::ledger::{
    check_chain, sign_with_key, InteractionSummary, KeyRegistry, Ledger, LedgerError, MinerSet,
    SigningKey, TxContent,
};
use fedtrust::opinion::Opinion;

type Entry = (u32, u32, f64, f64, u64);

fn keys() -> KeyRegistry {
    let mut k = KeyRegistry::new();
    for p in 0..3 {
        k.register(PublisherId(p), SigningKey([p as u8 * 31 + 1; 32]));
    }
    k
}

fn content((p, w, a, b, t): Entry) -> TxContent {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    TxContent {
        publisher_id: PublisherId(p),
        worker_id: WorkerId(w),
        opinion: Opinion::new(lo, hi - lo, 1.0 - hi).unwrap(),
        summary: InteractionSummary {
            alpha_eff: a * 10.0,
            beta_eff: b * 10.0,
            task_index: t,
        },
    }
}

fn blocks() -> impl Strategy<Value = Vec<Vec<Entry>>> {
    let entry = (0..3u32, 0..4u32, 0.0..=1.0f64, 0.0..=1.0f64, 0..10u64);
    prop::collection::vec(prop::collection::vec(entry, 1..5), 0..6)
}

fn build(blocks: &[Vec<Entry>]) -> Ledger {
    let mut ledger = Ledger::new(keys());
    let miners = MinerSet::honest(4);
    for (i, b) in blocks.iter().enumerate() {
        let txs = b
            .iter()
            .map(|&e| ledger.sign_tx(content(e)).unwrap())
            .collect();
        ledger.commit(txs, &miners, MinerId(i as u32 % 4)).unwrap();
    }
    ledger
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn export_round_trips(bs in blocks()) {
        let ledger = build(&bs);
        let mut buf = Vec::new();
        write_chain(&mut buf, ledger.chain(), ledger.keys()).unwrap();
        let (chain, keys) = read_chain(BufReader::new(&buf[..])).unwrap();
        prop_assert_eq!(&chain[..], ledger.chain());
        prop_assert!(check_chain(&chain, &keys).is_ok());
    }

    #[test]
    fn latest_opinion_carries_the_highest_task(bs in blocks(), w in 0..4u32) {
        let ledger = build(&bs);
        let mut highest: BTreeMap<PublisherId, u64> = BTreeMap::new();
        for &(p, ww, _, _, t) in bs.iter().flatten() {
            if ww == w {
                let e = highest.entry(PublisherId(p)).or_insert(t);
                *e = (*e).max(t);
            }
        }
        let latest = ledger.latest_opinions(WorkerId(w));
        let got: BTreeMap<_, _> = latest.iter().map(|(p, (_, t))| (*p, *t)).collect();
        prop_assert_eq!(got, highest);
    }

    #[test]
    fn foreign_signatures_are_refused(e in (0..3u32, 0..4u32, 0.0..=1.0f64, 0.0..=1.0f64, 0..10u64)) {
        let mut ledger = Ledger::new(keys());
        let forged = sign_with_key(content(e), &SigningKey([0xee; 32]));
        let err = ledger.commit(vec![forged], &MinerSet::honest(4), MinerId(0)).unwrap_err();
        prop_assert_eq!(err, LedgerError::InvalidTx { index: 0 });
        prop_assert_eq!(ledger.chain().len(), 1);
    }

    #[test]
    fn dropping_a_block_breaks_the_chain(bs in blocks().prop_filter("two blocks", |b| b.len() >= 2), pick in any::<prop::sample::Index>()) {
        let ledger = build(&bs);
        let mut chain = ledger.chain().to_vec();
        let h = 1 + pick.index(chain.len() - 2);
        chain.remove(h);
        prop_assert!(check_chain(&chain, ledger.keys()).is_err());
    }
}
