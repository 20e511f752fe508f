#pragma once

// End-to-end pipelines: pretrain -> finetune -> evaluate, and the
// multi-run studies built on top of them (mask-ratio sweep with seed
// averaging, token-drop robustness).

#include <cmath>
#include <string>
#include <vector>

#include "jepa4rec/evaluator.hpp"
#include "jepa4rec/trainer.hpp"

namespace jepa4rec {

struct PipelineConfig {
    ModelConfig model;
    TrainConfig pretrain;
    TrainConfig finetune;
    std::string target_domain; // empty = first domain of the corpus
    int threads = 1;

    PipelineConfig() {
        pretrain.stage = "pretrain";
        pretrain.batch_size = 32;
        finetune.stage = "finetune";
        finetune.batch_size = 16;
    }
};

inline Corpus pipeline_target_corpus(const Corpus& corpus,
                                     const PipelineConfig& cfg) {
    std::string domain =
        cfg.target_domain.empty() ? corpus.domains.front() : cfg.target_domain;
    return subcorpus_for_domain(corpus, domain);
}

// One full run: pretrain on every domain, finetune on the target domain,
// evaluate on its test split. Returns (report, trained params).
inline MetricsReport pretrain_finetune_eval(const Corpus& corpus,
                                            const Vocabulary& vocab,
                                            const PipelineConfig& cfg,
                                            std::uint64_t seed,
                                            Checkpoint* out_ckpt = nullptr) {
    ModelConfig mc = cfg.model;
    mc.vocab_size = vocab.size();

    TrainConfig pt = cfg.pretrain;
    pt.seed = seed;
    Trainer trainer(mc, pt, vocab);
    trainer.pretrain(corpus, vocab);

    Corpus target = pipeline_target_corpus(corpus, cfg);
    TrainConfig ft = cfg.finetune;
    ft.seed = seed;
    Checkpoint ckpt = trainer.checkpoint();
    ckpt.train_cfg = ft;
    ckpt.epoch = 0;
    ckpt.adam = AdamState{};
    Trainer finetuner(std::move(ckpt));
    finetuner.finetune(target, vocab);

    MetricsReport report =
        evaluate(finetuner.context(), target, vocab, EvalSplit::Test,
                 ft.token_drop_rate, seed, cfg.threads);
    if (out_ckpt) *out_ckpt = finetuner.checkpoint();
    return report;
}

// Mask-ratio sweep: each ratio runs the full pipeline once per seed;
// rows carry mean and across-seed std of NDCG@10.
inline std::vector<MetricsReport> mask_ratio_study(
    const Corpus& corpus, const Vocabulary& vocab, const PipelineConfig& cfg,
    const std::vector<double>& ratios, const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) throw EvalError("mask_ratio_study: no seeds");
    std::vector<MetricsReport> rows;
    for (double ratio : ratios) {
        if (ratio <= 0.0 || ratio >= 1.0)
            throw EvalError("mask ratio must be in (0, 1)");
        std::vector<MetricsReport> per_seed;
        for (std::uint64_t seed : seeds) {
            PipelineConfig run = cfg;
            run.pretrain.next_mask_rate = ratio;
            per_seed.push_back(
                pretrain_finetune_eval(corpus, vocab, run, seed));
        }
        MetricsReport row;
        row.split = "test";
        row.mask_ratio = ratio;
        row.n_users = per_seed.front().n_users;
        double mean = 0.0;
        for (const auto& r : per_seed) {
            row.recall_at_10 += r.recall_at_10 / per_seed.size();
            row.mrr += r.mrr / per_seed.size();
            mean += r.ndcg_at_10 / per_seed.size();
        }
        row.ndcg_at_10 = mean;
        double var = 0.0;
        for (const auto& r : per_seed)
            var += (r.ndcg_at_10 - mean) * (r.ndcg_at_10 - mean);
        row.metric_std = per_seed.size() > 1
                             ? std::sqrt(var / (per_seed.size() - 1.0))
                             : 0.0;
        rows.push_back(row);
    }
    return rows;
}

// Token-drop robustness: finetune and evaluate under each drop rate.
inline std::vector<MetricsReport> robustness_study(
    const Corpus& target, const Vocabulary& vocab, const ModelConfig& model,
    const TrainConfig& finetune_cfg, const std::vector<double>& drop_rates,
    const Checkpoint* start = nullptr, int threads = 1) {
    std::vector<MetricsReport> rows;
    for (double drop : drop_rates) {
        TrainConfig ft = finetune_cfg;
        ft.token_drop_rate = drop;
        Checkpoint ckpt;
        if (start) {
            ckpt = *start;
            ckpt.train_cfg = ft;
            ckpt.epoch = 0;
            ckpt.adam = AdamState{};
        } else {
            ModelConfig mc = model;
            mc.vocab_size = vocab.size();
            Trainer fresh(mc, ft, vocab);
            ckpt = fresh.checkpoint();
        }
        Trainer trainer(std::move(ckpt));
        trainer.finetune(target, vocab);
        MetricsReport r = evaluate(trainer.context(), target, vocab,
                                   EvalSplit::Test, drop, ft.seed, threads);
        r.drop_rate = drop; // keep the 0.0 row tagged as well
        rows.push_back(r);
    }
    return rows;
}

} // namespace jepa4rec
