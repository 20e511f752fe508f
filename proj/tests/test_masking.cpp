#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "jepa4rec/masking.hpp"

using namespace jepa4rec;

namespace {

// CLS plus `items` items of `tokens_each` value tokens.
EncodedInput wide_input(int items, int tokens_each, int vocab = 200) {
    EncodedInput in;
    in.token_ids.push_back(kClsId);
    in.token_positions.push_back(0);
    in.token_types.push_back(TokenType::Cls);
    in.item_positions.push_back(0);
    in.global_flags.push_back(1);
    int pos = 1;
    for (int it = 1; it <= items; ++it)
        for (int t = 0; t < tokens_each; ++t) {
            in.token_ids.push_back(kNumReserved +
                                   (pos * 7) % (vocab - kNumReserved));
            in.token_positions.push_back(pos++);
            in.token_types.push_back(TokenType::Value);
            in.item_positions.push_back(it);
            in.global_flags.push_back(0);
        }
    return in;
}

} // namespace

TEST_CASE("history masking hits about 15% with the 80/10/10 split") {
    const int vocab = 200;
    EncodedInput in = wide_input(50, 20, vocab); // 1000 tokens per trial
    int total = 0, masked = 0, to_mask = 0, to_random = 0, kept = 0;
    for (int trial = 0; trial < 10; ++trial) {
        CounterRng rng(100 + trial, 0xa5a5);
        MaskedView view = mask_history(in, 0.15, vocab, rng);
        for (std::size_t i = 1; i < view.mlm_labels.size(); ++i) {
            ++total;
            if (view.mlm_labels[i] == kIgnoreLabel) continue;
            ++masked;
            int now = view.input.token_ids[i];
            if (now == kMaskId)
                ++to_mask;
            else if (now == view.mlm_labels[i])
                ++kept;
            else
                ++to_random;
        }
    }
    double rate = static_cast<double>(masked) / total;
    REQUIRE(std::abs(rate - 0.15) < 0.01);
    REQUIRE(std::abs(static_cast<double>(to_mask) / masked - 0.8) < 0.02);
    REQUIRE(std::abs(static_cast<double>(to_random) / masked - 0.1) < 0.02);
    REQUIRE(std::abs(static_cast<double>(kept) / masked - 0.1) < 0.02);
}

TEST_CASE("next-item masking hits about 50%") {
    const int vocab = 200;
    EncodedInput in = wide_input(1, 25, vocab);
    int total = 0, masked = 0;
    for (int trial = 0; trial < 400; ++trial) {
        CounterRng rng(500 + trial, 0xa5a5);
        MaskedView view = mask_next_item(in, 0.5, vocab, rng);
        for (std::size_t i = 1; i < view.mlm_labels.size(); ++i) {
            ++total;
            if (view.mlm_labels[i] != kIgnoreLabel) ++masked;
        }
    }
    REQUIRE(std::abs(static_cast<double>(masked) / total - 0.5) < 0.02);
}

TEST_CASE("CLS is never masked and random ids avoid reserved slots") {
    const int vocab = 50;
    EncodedInput in = wide_input(3, 5, vocab);
    for (int trial = 0; trial < 1000; ++trial) {
        CounterRng rng(trial, 0xa5a5);
        MaskedView view = mask_history(in, 0.9, vocab, rng);
        REQUIRE(view.input.token_ids[0] == kClsId);
        REQUIRE(view.mlm_labels[0] == kIgnoreLabel);
        for (std::size_t i = 1; i < view.mlm_labels.size(); ++i) {
            int id = view.input.token_ids[i];
            if (view.mlm_labels[i] != kIgnoreLabel && id != kMaskId &&
                id != view.mlm_labels[i])
                REQUIRE(id >= kNumReserved);
        }
    }
}

TEST_CASE("masking is deterministic per seed and only rewrites token ids") {
    const int vocab = 100;
    EncodedInput in = wide_input(4, 6, vocab);
    CounterRng a(77, 0xa5a5), b(77, 0xa5a5);
    MaskedView va = mask_history(in, 0.3, vocab, a);
    MaskedView vb = mask_history(in, 0.3, vocab, b);
    REQUIRE(va.input.token_ids == vb.input.token_ids);
    REQUIRE(va.mlm_labels == vb.mlm_labels);
    REQUIRE(va.input.token_positions == in.token_positions);
    REQUIRE(va.input.item_positions == in.item_positions);
    REQUIRE(va.input.global_flags == in.global_flags);
    REQUIRE(va.input.token_types == in.token_types);
}

TEST_CASE("labels reconstruct the original ids at masked slots") {
    const int vocab = 100;
    EncodedInput in = wide_input(4, 6, vocab);
    CounterRng rng(9, 0xa5a5);
    MaskedView v = mask_history(in, 0.5, vocab, rng);
    for (std::size_t i = 0; i < v.mlm_labels.size(); ++i) {
        if (v.mlm_labels[i] == kIgnoreLabel)
            REQUIRE(v.input.token_ids[i] == in.token_ids[i]);
        else
            REQUIRE(v.mlm_labels[i] == in.token_ids[i]);
    }
}

TEST_CASE("sample_masked_item is uniform over items with masked tokens") {
    // hand-built view: items 1..3 each carry one masked token
    EncodedInput in = wide_input(3, 4);
    MaskedView view;
    view.input = in;
    view.mlm_labels.assign(in.token_ids.size(), kIgnoreLabel);
    view.mlm_labels[1] = in.token_ids[1];   // item 1
    view.mlm_labels[6] = in.token_ids[6];   // item 2
    view.mlm_labels[11] = in.token_ids[11]; // item 3
    std::map<int, int> counts;
    const int n = 90000;
    CounterRng rng(42, 0x91c7);
    for (int i = 0; i < n; ++i) counts[sample_masked_item(view, rng)]++;
    REQUIRE(counts.size() == 3);
    for (auto& [item, c] : counts) {
        REQUIRE(item >= 1);
        REQUIRE(item <= 3);
        REQUIRE(std::abs(static_cast<double>(c) / n - 1.0 / 3.0) < 0.01);
    }
}

TEST_CASE("no masked tokens gives the placeholder item") {
    EncodedInput in = wide_input(2, 3);
    MaskedView view;
    view.input = in;
    view.mlm_labels.assign(in.token_ids.size(), kIgnoreLabel);
    CounterRng rng(1, 0);
    REQUIRE(sample_masked_item(view, rng) == kPlaceholderItem);
}

TEST_CASE("build_mask_outcome wires views and keeps the full next item") {
    const int vocab = 100;
    EncodedInput hist = wide_input(4, 6, vocab);
    EncodedInput next = wide_input(1, 6, vocab);
    CounterRng rng(13, 0xa5a5);
    MaskOutcome o = build_mask_outcome(hist, next, 0.15, 0.5, vocab, rng);
    REQUIRE(o.next_full.token_ids == next.token_ids);
    REQUIRE(o.history.input.token_ids.size() == hist.token_ids.size());
    REQUIRE(o.next_masked.input.token_ids.size() == next.token_ids.size());
    if (o.masked_history_item != kPlaceholderItem) {
        REQUIRE(o.masked_history_item >= 1);
        REQUIRE(o.masked_history_item <= 4);
    }
}
