//! Integer FLOP accounting: hand-counted constants for the smallest
//! config, the exact local/global score relationship, and monotone cost
//! growth as blocks move from the local to the global stage.

mod common;

use mvt_core::flops::attention_flops;
use mvt_core::model::MVTConfig;

#[test]
fn micro_counts_match_hand_arithmetic() {
    // n=5 tokens, D=8, r=4, L=2, wh=4 patches of length 4, K=3.
    // per-view block: 8*5*64 + 4*25*8 + 4*5*8*4*8 = 2560 + 800 + 5120.
    let f = attention_flops(&MVTConfig::micro());
    assert_eq!(f.local_block_per_view, 8_480);
    assert_eq!(f.local_block, 16_960);
    // global block on 10 tokens: 8*10*64 + 4*100*8 + 4*10*8*4*8.
    assert_eq!(f.global_block, 18_560);
    assert_eq!(f.local_block_scores, 2 * 4 * 25 * 8);
    assert_eq!(f.global_block_scores, 4 * 100 * 8);
    assert_eq!(f.embed, 2 * 4 * 2 * 4 * 8);
    assert_eq!(f.head, 2 * 8 * 3);
    assert_eq!(f.total, 512 + 16_960 + 18_560 + 48);
}

#[test]
fn totals_compose_from_stage_counts() {
    for cfg in [
        MVTConfig::micro(),
        MVTConfig::micro_tiny(),
        MVTConfig::tiny(),
        MVTConfig::small(),
    ] {
        let f = attention_flops(&cfg);
        assert_eq!(f.total, f.embed + f.local_total + f.global_total + f.head);
        assert_eq!(f.local_total, cfg.local_blocks as u64 * f.local_block);
        assert_eq!(f.global_total, cfg.global_blocks as u64 * f.global_block);
    }
}

#[test]
fn global_scores_are_exactly_views_times_local_scores() {
    // The score/apply terms scale as (Ln)^2 against L*n^2: one global
    // block costs exactly L local blocks' worth of score FLOPs.
    for views in [1usize, 2, 3, 6, 12] {
        let cfg = MVTConfig {
            views,
            ..MVTConfig::micro_tiny()
        };
        let f = attention_flops(&cfg);
        assert_eq!(f.global_block_scores, views as u64 * f.local_block_scores);
    }
}

#[test]
fn no_global_blocks_means_zero_global_flops() {
    let cfg = MVTConfig {
        global_blocks: 0,
        ..MVTConfig::micro_tiny()
    };
    let f = attention_flops(&cfg);
    assert_eq!(f.global_total, 0);
    assert_eq!(f.total, f.embed + f.local_total + f.head);
}

#[test]
fn totals_grow_monotonically_with_global_share() {
    // At fixed S+T, moving one block from local to global never lowers
    // the total, and strictly raises it for L >= 2.
    let depth = 6usize;
    let mut prev: Option<u64> = None;
    for t in 0..=depth {
        let cfg = MVTConfig {
            local_blocks: depth - t,
            global_blocks: t,
            ..MVTConfig::micro_tiny()
        };
        let total = attention_flops(&cfg).total;
        if let Some(p) = prev {
            assert!(total > p, "T={t}: {total} not above {p}");
        }
        prev = Some(total);
    }
}

#[test]
fn single_view_swap_is_free() {
    for t in 0..=3usize {
        let cfg = MVTConfig {
            views: 1,
            local_blocks: 3 - t,
            global_blocks: t,
            ..MVTConfig::micro()
        };
        let f = attention_flops(&cfg);
        assert_eq!(f.total, attention_flops(&MVTConfig { views: 1, local_blocks: 3, global_blocks: 0, ..MVTConfig::micro() }).total);
        let _ = f;
    }
}

#[test]
fn local_to_global_swap_delta_matches_closed_form() {
    // delta = block(Ln) - L*block(n) = 4 n^2 D L (L-1), exactly.
    let base = MVTConfig::micro_tiny();
    let n = base.tokens_per_view() as u64;
    let d = base.dim as u64;
    let l = base.views as u64;
    let expect = 4 * n * n * d * l * (l - 1);
    for s in 1..=4usize {
        let a = MVTConfig {
            local_blocks: s,
            global_blocks: 4 - s,
            ..base.clone()
        };
        let b = MVTConfig {
            local_blocks: s - 1,
            global_blocks: 5 - s,
            ..base.clone()
        };
        let delta = attention_flops(&b).total - attention_flops(&a).total;
        assert_eq!(delta, expect);
    }
}

#[test]
fn param_count_does_not_depend_on_view_count() {
    let base = MVTConfig::micro_tiny();
    let counts: Vec<usize> = [1usize, 3, 6, 12]
        .iter()
        .map(|&views| MVTConfig { views, ..base.clone() }.param_count())
        .collect();
    assert!(counts.windows(2).all(|w| w[0] == w[1]));
}
