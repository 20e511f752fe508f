#pragma once

// Leave-one-out ranking evaluation (Recall@10, NDCG@10, MRR), zero-shot
// mode, the partial-information reveal study, token-drop robustness and
// mask-ratio sweeps.

#include <atomic>
#include <cmath>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "jepa4rec/trainer.hpp"

namespace jepa4rec {

struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RankingResult {
    int rank = 0; // 1-based
    int catalog_size = 0;
};

struct MetricsReport {
    double recall_at_10 = 0.0;
    double ndcg_at_10 = 0.0;
    double mrr = 0.0;
    int n_users = 0;
    std::string split;
    // Study metadata; negative means not applicable.
    double reveal_ratio = -1.0;
    double drop_rate = -1.0;
    double mask_ratio = -1.0;
    double metric_std = -1.0; // across seeds, for multi-seed studies

    json to_json() const {
        json j{{"recall_at_10", recall_at_10},
               {"ndcg_at_10", ndcg_at_10},
               {"mrr", mrr},
               {"n_users", n_users},
               {"split", split}};
        if (reveal_ratio >= 0.0) j["reveal_ratio"] = reveal_ratio;
        if (drop_rate >= 0.0) j["drop_rate"] = drop_rate;
        if (mask_ratio >= 0.0) j["mask_ratio"] = mask_ratio;
        if (metric_std >= 0.0) j["metric_std"] = metric_std;
        return j;
    }
};

// Rank of the ground truth among all catalog items by cosine score.
// rank = 1 + strictly-better items + tied items at a lower catalog index.
inline RankingResult rank_items(const Mat& h_cls, const Mat& item_matrix,
                                int gt_index) {
    const Eigen::Index n = item_matrix.rows();
    if (gt_index < 0 || gt_index >= n)
        throw EvalError("rank_items: ground-truth index out of range");
    double hn = h_cls.row(0).norm();
    if (hn == 0.0) throw EvalError("rank_items: zero-norm query");
    std::vector<double> scores(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        double in = item_matrix.row(i).norm();
        if (in == 0.0) throw EvalError("rank_items: zero-norm item row");
        scores[static_cast<std::size_t>(i)] =
            h_cls.row(0).dot(item_matrix.row(i)) / (hn * in);
    }
    const double gt_score = scores[static_cast<std::size_t>(gt_index)];
    int rank = 1;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (i == gt_index) continue;
        double s = scores[static_cast<std::size_t>(i)];
        if (s > gt_score || (s == gt_score && i < gt_index)) ++rank;
    }
    return {rank, static_cast<int>(n)};
}

inline MetricsReport compute_metrics(const std::vector<RankingResult>& ranks,
                                     int k = 10) {
    if (ranks.empty()) throw EvalError("compute_metrics: no ranks");
    MetricsReport r;
    for (const auto& rr : ranks) {
        if (rr.rank <= k) {
            r.recall_at_10 += 1.0;
            r.ndcg_at_10 += 1.0 / std::log2(static_cast<double>(rr.rank) + 1.0);
        }
        r.mrr += 1.0 / static_cast<double>(rr.rank);
    }
    const double n = static_cast<double>(ranks.size());
    r.recall_at_10 /= n;
    r.ndcg_at_10 /= n;
    r.mrr /= n;
    r.n_users = static_cast<int>(ranks.size());
    return r;
}

enum class EvalSplit { Val, Test, Train };
enum class EvalMode { Standard, ZeroShot };

inline const char* split_name(EvalSplit s) {
    switch (s) {
        case EvalSplit::Val: return "val";
        case EvalSplit::Test: return "test";
        default: return "train";
    }
}

// Run a per-user task in parallel; results land in preallocated slots, so
// the aggregation order (and the output) is independent of thread count.
template <typename Fn>
inline void parallel_for(std::size_t n, int threads, Fn&& fn) {
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n;
                 i = next.fetch_add(1))
                fn(i);
        });
    for (auto& th : pool) th.join();
}

// Leave-one-out evaluation over one domain corpus. Zero-shot differs
// only in provenance of the parameters (straight from pretraining).
inline MetricsReport evaluate(ModelParams& params, const Corpus& corpus,
                              const Vocabulary& vocab, EvalSplit split,
                              double token_drop_rate = 0.0,
                              std::uint64_t seed = 0, int threads = 1) {
    EncodedCatalog cat =
        build_encoded_catalog(corpus, vocab, token_drop_rate, seed);
    Mat item_matrix = refresh_item_matrix(params, cat);

    std::vector<const InteractionSequence*> users;
    for (const auto& seq : corpus.sequences)
        if (seq.items.size() >= 3) users.push_back(&seq);
    if (users.empty()) throw EvalError("no evaluable sequences");

    std::vector<RankingResult> ranks(users.size());
    parallel_for(users.size(), threads, [&](std::size_t u) {
        SplitView sv = leave_one_out_split(*users[u]);
        std::vector<std::string> history;
        std::string target;
        switch (split) {
            case EvalSplit::Val:
                history = sv.val_history();
                target = sv.val_target;
                break;
            case EvalSplit::Test:
                history = sv.test_history();
                target = sv.test_target;
                break;
            case EvalSplit::Train:
                history.assign(sv.train_history.begin(),
                               sv.train_history.end() - 1);
                target = sv.train_history.back();
                break;
        }
        if (history.empty()) {
            ranks[u] = {static_cast<int>(corpus.items.size()),
                        static_cast<int>(corpus.items.size())};
            return;
        }
        Mat h_cls =
            encode_cls_nograd(params, cat.encode_history(corpus, history));
        ranks[u] =
            rank_items(h_cls, item_matrix, corpus.item_index.at(target));
    });
    MetricsReport report = compute_metrics(ranks);
    report.split = split_name(split);
    report.drop_rate = token_drop_rate > 0.0 ? token_drop_rate : -1.0;
    return report;
}

// Partial-information reveal: keep a seeded uniform fraction of the true
// next item's tokens, mask the rest, and rank by the FFN2 prediction.
inline MetricsReport reveal_study_at_ratio(ModelParams& params,
                                           const Corpus& corpus,
                                           const Vocabulary& vocab,
                                           double ratio, std::uint64_t seed,
                                           int threads = 1) {
    if (ratio < 0.0 || ratio > 1.0)
        throw EvalError("reveal ratio must be in [0, 1]");
    EncodedCatalog cat = build_encoded_catalog(corpus, vocab);
    Mat item_matrix = refresh_item_matrix(params, cat);

    std::vector<const InteractionSequence*> users;
    for (const auto& seq : corpus.sequences)
        if (seq.items.size() >= 3) users.push_back(&seq);
    if (users.empty()) throw EvalError("no evaluable sequences");

    std::vector<RankingResult> ranks(users.size());
    parallel_for(users.size(), threads, [&](std::size_t u) {
        SplitView sv = leave_one_out_split(*users[u]);
        auto history = sv.test_history();
        int gt = corpus.item_index.at(sv.test_target);

        // Build the partially revealed next-item view.
        const EncodedItem& item = cat.items[static_cast<std::size_t>(gt)];
        const std::size_t n_tokens = item.token_ids.size();
        std::size_t n_reveal = static_cast<std::size_t>(
            std::llround(ratio * static_cast<double>(n_tokens)));
        CounterRng rng = CounterRng(seed, 0x4e7ea1ull).fork(u);
        std::vector<std::size_t> order(n_tokens);
        for (std::size_t i = 0; i < n_tokens; ++i) order[i] = i;
        for (std::size_t i = n_tokens; i > 1; --i)
            std::swap(order[i - 1], order[rng.next_below(i)]);
        std::vector<bool> revealed(n_tokens, false);
        for (std::size_t i = 0; i < n_reveal && i < n_tokens; ++i)
            revealed[order[i]] = true;
        EncodedItem view = item;
        for (std::size_t i = 0; i < n_tokens; ++i)
            if (!revealed[i]) view.token_ids[i] = kMaskId;

        Tape tape(false);
        Var h_cls =
            encode_cls(tape, params, cat.encode_history(corpus, history));
        Var h_next_masked =
            encode_cls(tape, params, encode_single_item(view));
        Var pred = predict_next_repr(tape, params, h_cls, h_next_masked);
        ranks[u] = rank_items(pred->val, item_matrix, gt);
    });
    MetricsReport report = compute_metrics(ranks);
    report.split = "test";
    report.reveal_ratio = ratio;
    return report;
}

inline std::vector<MetricsReport> reveal_study(
    ModelParams& params, const Corpus& corpus, const Vocabulary& vocab,
    const std::vector<double>& ratios, std::uint64_t seed, int threads = 1) {
    std::vector<MetricsReport> out;
    for (double r : ratios)
        out.push_back(
            reveal_study_at_ratio(params, corpus, vocab, r, seed, threads));
    return out;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

inline void write_reports_json(const std::vector<MetricsReport>& reports,
                               const std::string& path) {
    json arr = json::array();
    for (const auto& r : reports) arr.push_back(r.to_json());
    std::ofstream out(path);
    if (!out) throw EvalError("cannot write " + path);
    out << arr.dump(2) << "\n";
}

inline void write_reports_csv(const std::vector<MetricsReport>& reports,
                              const std::string& path) {
    std::ofstream out(path);
    if (!out) throw EvalError("cannot write " + path);
    out << "split,n_users,recall_at_10,ndcg_at_10,mrr,reveal_ratio,"
           "drop_rate,mask_ratio,metric_std\n";
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.10g", v);
        return std::string(buf);
    };
    for (const auto& r : reports) {
        out << r.split << "," << r.n_users << "," << fmt(r.recall_at_10)
            << "," << fmt(r.ndcg_at_10) << "," << fmt(r.mrr) << ","
            << (r.reveal_ratio >= 0 ? fmt(r.reveal_ratio) : "") << ","
            << (r.drop_rate >= 0 ? fmt(r.drop_rate) : "") << ","
            << (r.mask_ratio >= 0 ? fmt(r.mask_ratio) : "") << ","
            << (r.metric_std >= 0 ? fmt(r.metric_std) : "") << "\n";
    }
}

} // namespace jepa4rec
