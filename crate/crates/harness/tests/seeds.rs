use std::collections::HashSet;

use rdpg_harness::{observation_master, stream_seed, streams};

#[test]
fn stream_seeds_do_not_collide() {
    let all = [streams::INIT, streams::OBSERVE, streams::JITTER, streams::ANCHORS, streams::TEST_CLOUD];
    let mut seen = HashSet::new();
    for master in [0u64, 1, 42, u64::MAX] {
        assert!(seen.insert(observation_master(master)));
        for &stream in &all {
            for rep in 0..2000 {
                assert!(seen.insert(stream_seed(master, stream, rep)), "collision at {master}/{stream}/{rep}");
            }
        }
    }
}

#[test]
fn stream_seeds_are_stable() {
    assert_eq!(stream_seed(42, streams::INIT, 3), stream_seed(42, streams::INIT, 3));
    assert_ne!(stream_seed(42, streams::INIT, 3), stream_seed(43, streams::INIT, 3));
}
