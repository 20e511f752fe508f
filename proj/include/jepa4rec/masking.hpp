#pragma once

// Masked training views: BERT-style 80/10/10 replacement at 15% over
// history tokens and a heavier (default 50%) rate over the next item,
// plus the sampled masked-history item with placeholder fallback.

#include <vector>

#include "jepa4rec/rng.hpp"
#include "jepa4rec/tokenizer.hpp"

namespace jepa4rec {

inline constexpr int kIgnoreLabel = -1;
inline constexpr int kPlaceholderItem = -1;

struct MaskedView {
    EncodedInput input;
    std::vector<int> mlm_labels; // original id at masked slots, else IGNORE
};

// Apply the BERT replacement scheme to every non-CLS token independently
// with probability `rate`. Only token_ids change; positions, types, item
// tags and attention flags are untouched.
inline MaskedView apply_token_masking(const EncodedInput& input, double rate,
                                      int vocab_size, CounterRng& rng) {
    MaskedView out;
    out.input = input;
    out.mlm_labels.assign(input.token_ids.size(), kIgnoreLabel);
    for (std::size_t i = 0; i < input.token_ids.size(); ++i) {
        if (input.token_types[i] == TokenType::Cls) continue;
        if (!rng.next_bernoulli(rate)) continue;
        out.mlm_labels[i] = input.token_ids[i];
        double r = rng.next_double();
        if (r < 0.8) {
            out.input.token_ids[i] = kMaskId;
        } else if (r < 0.9) {
            // Random replacement excludes the reserved ids.
            out.input.token_ids[i] =
                kNumReserved +
                static_cast<int>(rng.next_below(
                    static_cast<std::uint64_t>(vocab_size - kNumReserved)));
        } // else keep the original token
    }
    return out;
}

inline MaskedView mask_history(const EncodedInput& input, double rate,
                               int vocab_size, CounterRng& rng) {
    return apply_token_masking(input, rate, vocab_size, rng);
}

inline MaskedView mask_next_item(const EncodedInput& next, double rate,
                                 int vocab_size, CounterRng& rng) {
    return apply_token_masking(next, rate, vocab_size, rng);
}

// Uniformly pick one item position among items that carry at least one
// masked token; kPlaceholderItem when nothing was masked.
inline int sample_masked_item(const MaskedView& view, CounterRng& rng) {
    std::vector<int> candidates;
    int last = -1;
    for (std::size_t i = 0; i < view.mlm_labels.size(); ++i) {
        if (view.mlm_labels[i] == kIgnoreLabel) continue;
        int pos = view.input.item_positions[i];
        if (pos == 0) continue;
        if (pos != last) {
            candidates.push_back(pos);
            last = pos;
        }
    }
    if (candidates.empty()) return kPlaceholderItem;
    return candidates[rng.next_below(candidates.size())];
}

struct MaskOutcome {
    MaskedView history;            // masked history view + MLM labels
    int masked_history_item = kPlaceholderItem;
    MaskedView next_masked;        // {[CLS], S_{n+1}} with heavy masking
    EncodedInput next_full;        // unmasked next-item view
};

inline MaskOutcome build_mask_outcome(const EncodedInput& history,
                                      const EncodedInput& next_item,
                                      double history_rate, double next_rate,
                                      int vocab_size, CounterRng& rng) {
    MaskOutcome out;
    out.history = mask_history(history, history_rate, vocab_size, rng);
    out.masked_history_item = sample_masked_item(out.history, rng);
    out.next_masked = mask_next_item(next_item, next_rate, vocab_size, rng);
    out.next_full = next_item;
    return out;
}

} // namespace jepa4rec
