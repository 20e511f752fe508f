#pragma once

// Training orchestration: the joint-embedding pretraining loop with EMA
// target updates, the full-softmax finetuning loop with per-epoch item
// matrix refresh, Adam, and binary checkpointing.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "jepa4rec/masking.hpp"
#include "jepa4rec/model.hpp"
#include "jepa4rec/objectives.hpp"

namespace jepa4rec {

struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::string stage = "pretrain"; // pretrain | finetune
    int batch_size = 32;            // 16 is the finetune default
    double learning_rate = 5e-5;
    double tau = 0.05;
    double lambda1 = 0.1; // MLM weight
    double lambda2 = 0.1; // mapping weight
    double history_mask_rate = 0.15;
    double next_mask_rate = 0.5;
    double ema_decay = 0.999;
    int epochs = 10;
    std::uint64_t seed = 0;
    bool disable_mlm = false;
    bool disable_contrastive = false;
    bool use_bpr = false;
    double token_drop_rate = 0.0;
    // Pretraining early stop on a held-out slice of sequences.
    double val_fraction = 0.05;
    int patience = 5;

    void validate() const {
        auto in01 = [](double x) { return x > 0.0 && x < 1.0; };
        if (!in01(history_mask_rate) || !in01(next_mask_rate))
            throw TrainError("mask rates must be in (0, 1)");
        if (learning_rate <= 0.0) throw TrainError("learning_rate must be > 0");
        if (tau <= 0.0) throw TrainError("tau must be > 0");
        if (ema_decay < 0.0 || ema_decay > 1.0)
            throw TrainError("ema_decay must be in [0, 1]");
        if (token_drop_rate < 0.0 || token_drop_rate >= 1.0)
            throw TrainError("token_drop_rate must be in [0, 1)");
        if (batch_size < 1 || epochs < 0)
            throw TrainError("batch_size/epochs out of range");
    }

    json to_json() const {
        return json{{"stage", stage},
                    {"batch_size", batch_size},
                    {"learning_rate", learning_rate},
                    {"tau", tau},
                    {"lambda1", lambda1},
                    {"lambda2", lambda2},
                    {"history_mask_rate", history_mask_rate},
                    {"next_mask_rate", next_mask_rate},
                    {"ema_decay", ema_decay},
                    {"epochs", epochs},
                    {"seed", seed},
                    {"disable_mlm", disable_mlm},
                    {"disable_contrastive", disable_contrastive},
                    {"use_bpr", use_bpr},
                    {"token_drop_rate", token_drop_rate},
                    {"val_fraction", val_fraction},
                    {"patience", patience}};
    }
    static TrainConfig from_json(const json& j) {
        TrainConfig c;
        c.stage = j.at("stage");
        c.batch_size = j.at("batch_size");
        c.learning_rate = j.at("learning_rate");
        c.tau = j.at("tau");
        c.lambda1 = j.at("lambda1");
        c.lambda2 = j.at("lambda2");
        c.history_mask_rate = j.at("history_mask_rate");
        c.next_mask_rate = j.at("next_mask_rate");
        c.ema_decay = j.at("ema_decay");
        c.epochs = j.at("epochs");
        c.seed = j.at("seed");
        c.disable_mlm = j.at("disable_mlm");
        c.disable_contrastive = j.at("disable_contrastive");
        c.use_bpr = j.at("use_bpr");
        c.token_drop_rate = j.at("token_drop_rate");
        c.val_fraction = j.at("val_fraction");
        c.patience = j.at("patience");
        return c;
    }
};

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t t = 0;
};

inline void adam_step(std::vector<Parameter*> params, AdamState& state,
                      double lr) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, state.t);
    const double bc2 = 1.0 - std::pow(state.beta2, state.t);
    for (Parameter* p : params) {
        p->adam_m = state.beta1 * p->adam_m + (1.0 - state.beta1) * p->grad;
        p->adam_v =
            state.beta2 * p->adam_v +
            (1.0 - state.beta2) * p->grad.array().square().matrix();
        Mat m_hat = p->adam_m / bc1;
        Mat v_hat = p->adam_v / bc2;
        p->value.array() -=
            lr * m_hat.array() / (v_hat.array().sqrt() + state.eps);
    }
}

// ---------------------------------------------------------------------------
// Encoded catalog: per-run token views of every item (with optional
// deterministic token dropping for the robustness study).
// ---------------------------------------------------------------------------

struct EncodedCatalog {
    std::vector<EncodedItem> items; // catalog order

    EncodedInput encode_history(const Corpus& corpus,
                                const std::vector<std::string>& ids) const {
        std::vector<EncodedItem> history;
        history.reserve(ids.size());
        for (const auto& id : ids)
            history.push_back(items[static_cast<std::size_t>(
                corpus.item_index.at(id))]);
        return encode_sequence(history);
    }
};

inline EncodedCatalog build_encoded_catalog(const Corpus& corpus,
                                            const Vocabulary& vocab,
                                            double token_drop_rate = 0.0,
                                            std::uint64_t seed = 0) {
    EncodedCatalog cat;
    cat.items.reserve(corpus.items.size());
    for (std::size_t i = 0; i < corpus.items.size(); ++i) {
        EncodedItem enc = encode_item_tokens(corpus.items[i], vocab);
        if (token_drop_rate > 0.0) {
            CounterRng rng(seed, 0xd409ull ^ (i << 8));
            EncodedItem kept;
            for (std::size_t t = 0; t < enc.token_ids.size(); ++t) {
                if (rng.next_bernoulli(token_drop_rate)) continue;
                kept.token_ids.push_back(enc.token_ids[t]);
                kept.token_types.push_back(enc.token_types[t]);
            }
            if (kept.token_ids.empty()) {
                kept.token_ids.push_back(enc.token_ids[0]);
                kept.token_types.push_back(enc.token_types[0]);
            }
            enc = std::move(kept);
        }
        cat.items.push_back(std::move(enc));
    }
    return cat;
}

// Item matrix: row i = target-catalog item i encoded through the given
// parameters (h_CLS of its single-item sequence).
inline Mat refresh_item_matrix(ModelParams& params,
                               const EncodedCatalog& catalog) {
    if (catalog.items.empty())
        throw TrainError("cannot refresh item matrix: empty catalog");
    Mat out(static_cast<Eigen::Index>(catalog.items.size()), params.cfg.d);
    for (std::size_t i = 0; i < catalog.items.size(); ++i) {
        Mat h = encode_item_nograd(params, catalog.items[i]);
        if (!h.allFinite())
            throw NumericError("item matrix row " + std::to_string(i) +
                               " is not finite");
        out.row(static_cast<Eigen::Index>(i)) = h.row(0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpointing: single binary container (little-endian doubles, section
// table, FNV-1a checksum) plus a JSON sidecar mirroring the config.
// ---------------------------------------------------------------------------

struct Checkpoint {
    ModelConfig model_cfg;
    TrainConfig train_cfg;
    ModelParams context{ModelConfig{}};
    ModelParams target{ModelConfig{}};
    AdamState adam;
    std::uint64_t vocab_hash = 0;
    int epoch = 0;
};

namespace ckpt_detail {

inline void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i)
        buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint64_t get_u64(const std::string& buf, std::size_t& off) {
    if (off + 8 > buf.size()) throw TrainError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(
                 static_cast<unsigned char>(buf[off + i]))
             << (8 * i);
    off += 8;
    return v;
}
inline void put_section(std::string& buf, const std::string& name,
                        const std::string& data) {
    put_u64(buf, name.size());
    buf += name;
    put_u64(buf, data.size());
    buf += data;
}

inline std::string pack_matrices(std::vector<Parameter*> params,
                                 Mat Parameter::* field) {
    std::string out;
    put_u64(out, params.size());
    for (Parameter* p : params) {
        const Mat& m = p->*field;
        put_u64(out, static_cast<std::uint64_t>(m.rows()));
        put_u64(out, static_cast<std::uint64_t>(m.cols()));
        // Eigen default storage is column-major; serialize row-major for
        // a layout-independent format.
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                double v = m(r, c);
                std::uint64_t bits;
                std::memcpy(&bits, &v, 8);
                put_u64(out, bits);
            }
    }
    return out;
}

inline void unpack_matrices(const std::string& data,
                            std::vector<Parameter*> params,
                            Mat Parameter::* field, const char* what) {
    std::size_t off = 0;
    std::uint64_t count = get_u64(data, off);
    if (count != params.size())
        throw TrainError(std::string("checkpoint section '") + what +
                         "': parameter count mismatch");
    for (Parameter* p : params) {
        auto rows = static_cast<Eigen::Index>(get_u64(data, off));
        auto cols = static_cast<Eigen::Index>(get_u64(data, off));
        Mat& m = p->*field;
        if (rows != m.rows() || cols != m.cols())
            throw TrainError(std::string("checkpoint section '") + what +
                             "': shape mismatch at " + p->name);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) {
                std::uint64_t bits = get_u64(data, off);
                double v;
                std::memcpy(&v, &bits, 8);
                m(r, c) = v;
            }
    }
}

} // namespace ckpt_detail

inline constexpr char kCheckpointMagic[8] = {'J', '4', 'R', 'C',
                                             'K', 'P', 'T', '1'};

inline void save_checkpoint(Checkpoint& ckpt, const std::string& path) {
    using namespace ckpt_detail;
    json meta;
    meta["model"] = ckpt.model_cfg.to_json();
    meta["train"] = ckpt.train_cfg.to_json();
    meta["vocab_hash"] = ckpt.vocab_hash;
    meta["epoch"] = ckpt.epoch;
    meta["adam_t"] = ckpt.adam.t;

    std::string payload;
    put_section(payload, "meta", meta.dump());
    put_section(payload, "context",
                pack_matrices(ckpt.context.all(), &Parameter::value));
    put_section(payload, "target",
                pack_matrices(ckpt.target.all(), &Parameter::value));
    put_section(payload, "adam_m",
                pack_matrices(ckpt.context.all(), &Parameter::adam_m));
    put_section(payload, "adam_v",
                pack_matrices(ckpt.context.all(), &Parameter::adam_v));

    Fnv1a h;
    h.update(payload.data(), payload.size());

    std::ofstream out(path, std::ios::binary);
    if (!out) throw TrainError("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, 8);
    std::string sizes;
    put_u64(sizes, payload.size());
    put_u64(sizes, h.digest());
    out.write(sizes.data(), static_cast<std::streamsize>(sizes.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));

    std::ofstream sidecar(path + ".json");
    sidecar << meta.dump(2) << "\n";
}

inline Checkpoint load_checkpoint(const std::string& path,
                                  std::optional<std::uint64_t> expect_vocab =
                                      std::nullopt) {
    using namespace ckpt_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TrainError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw TrainError("checkpoint '" + path + "': bad magic");
    std::string head(16, '\0');
    in.read(head.data(), 16);
    std::size_t hoff = 0;
    std::uint64_t payload_size = get_u64(head, hoff);
    std::uint64_t checksum = get_u64(head, hoff);
    std::string payload(payload_size, '\0');
    in.read(payload.data(), static_cast<std::streamsize>(payload_size));
    if (static_cast<std::uint64_t>(in.gcount()) != payload_size)
        throw TrainError("checkpoint '" + path + "': truncated payload");
    Fnv1a h;
    h.update(payload.data(), payload.size());
    if (h.digest() != checksum)
        throw TrainError("checkpoint '" + path + "': checksum mismatch");

    // Section scan.
    std::size_t off = 0;
    std::map<std::string, std::string> sections;
    while (off < payload.size()) {
        std::uint64_t nlen = get_u64(payload, off);
        std::string name = payload.substr(off, nlen);
        off += nlen;
        std::uint64_t dlen = get_u64(payload, off);
        sections[name] = payload.substr(off, dlen);
        off += dlen;
    }
    for (const char* req : {"meta", "context", "target", "adam_m", "adam_v"})
        if (!sections.count(req))
            throw TrainError("checkpoint '" + path + "': missing section '" +
                             std::string(req) + "'");

    json meta = json::parse(sections["meta"]);
    Checkpoint ckpt;
    ckpt.model_cfg = ModelConfig::from_json(meta.at("model"));
    ckpt.train_cfg = TrainConfig::from_json(meta.at("train"));
    ckpt.vocab_hash = meta.at("vocab_hash").get<std::uint64_t>();
    ckpt.epoch = meta.at("epoch").get<int>();
    ckpt.adam.t = meta.at("adam_t").get<std::int64_t>();
    if (expect_vocab && *expect_vocab != ckpt.vocab_hash)
        throw TrainError("checkpoint '" + path +
                         "' was built against a different vocabulary "
                         "(hash mismatch); refusing to load");
    ckpt.context.configure(ckpt.model_cfg);
    ckpt.target.configure(ckpt.model_cfg);
    unpack_matrices(sections["context"], ckpt.context.all(),
                    &Parameter::value, "context");
    unpack_matrices(sections["target"], ckpt.target.all(), &Parameter::value,
                    "target");
    unpack_matrices(sections["adam_m"], ckpt.context.all(),
                    &Parameter::adam_m, "adam_m");
    unpack_matrices(sections["adam_v"], ckpt.context.all(),
                    &Parameter::adam_v, "adam_v");
    return ckpt;
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

struct EpochLog {
    int epoch = 0;
    double loss = 0.0;        // stage loss (L_PT or L_FT mean)
    double contrastive = 0.0;
    double mlm = 0.0;
    double mapping = 0.0;
    double val_loss = 0.0; // pretraining early-stop metric
    double wall_seconds = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> epochs;
    bool early_stopped = false;
};

class Trainer {
public:
    Trainer(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
            const Vocabulary& vocab)
        : ckpt_() {
        train_cfg.validate();
        ckpt_.model_cfg = model_cfg;
        ckpt_.train_cfg = train_cfg;
        ckpt_.vocab_hash = vocab.fingerprint();
        ckpt_.context.configure(model_cfg);
        ckpt_.target.configure(model_cfg);
        CounterRng rng(train_cfg.seed, 0x1417ull);
        ckpt_.context.init(rng);
        ckpt_.target.copy_values_from(ckpt_.context);
    }

    explicit Trainer(Checkpoint ckpt) : ckpt_(std::move(ckpt)) {}

    Checkpoint& checkpoint() { return ckpt_; }
    ModelParams& context() { return ckpt_.context; }
    ModelParams& target() { return ckpt_.target; }

    // Pretraining over all domains of `corpus`. Resumes from the stored
    // epoch; RNG streams are derived from (seed, epoch, sequence), so a
    // resumed run matches an uninterrupted one exactly.
    TrainResult pretrain(const Corpus& corpus, const Vocabulary& vocab);

    // Finetuning in the target domain (single-domain corpus expected).
    TrainResult finetune(const Corpus& corpus, const Vocabulary& vocab);

private:
    struct PretrainExample {
        std::size_t seq_index;
        // chosen split point: history = items[0..k-1], next = items[k]
        int k;
    };

    void pretrain_step(const Corpus& corpus, const EncodedCatalog& cat,
                       const std::vector<PretrainExample>& batch,
                       std::uint64_t epoch, bool update, EpochLog& log);

    Checkpoint ckpt_;
};

inline std::vector<std::size_t> shuffled_indices(std::size_t n,
                                                 CounterRng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = rng.next_below(i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

inline void Trainer::pretrain_step(const Corpus& corpus,
                                   const EncodedCatalog& cat,
                                   const std::vector<PretrainExample>& batch,
                                   std::uint64_t epoch, bool update,
                                   EpochLog& log) {
    const TrainConfig& cfg = ckpt_.train_cfg;
    ModelParams& ctx = ckpt_.context;
    ModelParams& tgt = ckpt_.target;
    const int vocab_size = ckpt_.model_cfg.vocab_size;

    Tape tape(update);
    std::vector<Var> h_cls_rows;
    std::vector<Var> mlm_logit_blocks;
    std::vector<int> mlm_labels_flat;
    Var map_total = tape.zero_scalar();
    Mat contrastive_targets(static_cast<Eigen::Index>(batch.size()),
                            ckpt_.model_cfg.d);

    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& ex = batch[b];
        const auto& seq = corpus.sequences[ex.seq_index];
        std::vector<std::string> history(seq.items.begin(),
                                         seq.items.begin() + ex.k);
        const std::string& next_id = seq.items[static_cast<std::size_t>(ex.k)];

        EncodedInput hist_input = cat.encode_history(corpus, history);
        EncodedInput next_input = encode_single_item(
            cat.items[static_cast<std::size_t>(corpus.item_index.at(next_id))]);

        CounterRng mask_rng =
            CounterRng(cfg.seed, 0xa5a5ull)
                .fork(epoch * 0x10001ull + ex.seq_index);
        MaskOutcome mo =
            build_mask_outcome(hist_input, next_input, cfg.history_mask_rate,
                               cfg.next_mask_rate, vocab_size, mask_rng);

        // Context side.
        Var hidden = encode(tape, ctx, mo.history.input);
        Var h_cls = tape.row(hidden, 0);
        Var h_next_masked = encode_cls(tape, ctx, mo.next_masked.input);

        // Target side (detached).
        Mat target_next = encode_cls_nograd(tgt, mo.next_full);
        contrastive_targets.row(static_cast<Eigen::Index>(b)) =
            target_next.row(0);

        std::optional<Var> pred_hist;
        Mat target_hist;
        if (mo.masked_history_item != kPlaceholderItem) {
            // Item position k counts from the most recent; map back to the
            // catalog item and target-encode its full sentence.
            std::size_t idx_in_hist =
                history.size() -
                static_cast<std::size_t>(mo.masked_history_item);
            const std::string& item_id = history[idx_in_hist];
            target_hist = encode_cls_nograd(
                tgt, encode_single_item(cat.items[static_cast<std::size_t>(
                         corpus.item_index.at(item_id))]));
            pred_hist = predict_history_repr(tape, ctx, h_cls,
                                             mo.masked_history_item);
        } else {
            pred_hist = predict_history_repr(tape, ctx, h_cls,
                                             kPlaceholderItem);
            // No meaningful target: drop the history term.
            pred_hist.reset();
        }
        Var pred_next = predict_next_repr(tape, ctx, h_cls, h_next_masked);
        map_total = tape.add(
            map_total, mapping_loss(tape, pred_hist, target_hist, pred_next,
                                    target_next));

        if (!cfg.disable_mlm) {
            std::vector<int> positions, targets;
            for (std::size_t i = 0; i < mo.history.mlm_labels.size(); ++i)
                if (mo.history.mlm_labels[i] != kIgnoreLabel) {
                    positions.push_back(static_cast<int>(i));
                    targets.push_back(mo.history.mlm_labels[i]);
                }
            if (!positions.empty()) {
                Var rows = tape.gather_rows(hidden, positions);
                Var logits = tape.add_row_broadcast(
                    tape.matmul_nt(rows, tape.param(ctx.tok_emb)),
                    tape.param(ctx.mlm_bias));
                mlm_logit_blocks.push_back(logits);
                mlm_labels_flat.insert(mlm_labels_flat.end(), targets.begin(),
                                       targets.end());
            }
        }
        h_cls_rows.push_back(h_cls);
    }

    Var l_map = tape.scale(map_total, 1.0 / static_cast<double>(batch.size()));
    Var l_mlm = mlm_logit_blocks.empty()
                    ? tape.zero_scalar()
                    : tape.cross_entropy_mean(tape.vstack(mlm_logit_blocks),
                                              mlm_labels_flat);
    Var l_si = tape.zero_scalar();
    if (!cfg.disable_contrastive) {
        Var cls_batch = tape.vstack(h_cls_rows);
        l_si = seq_item_contrastive_loss(
            tape, cls_batch, tape.constant(contrastive_targets), cfg.tau);
    }
    Var l_pt = pretrain_loss(tape, l_si, l_mlm, l_map, cfg.lambda1,
                             cfg.lambda2);
    if (!std::isfinite(l_pt->val(0, 0)))
        throw NumericError("pretraining loss is not finite");

    log.loss += l_pt->val(0, 0);
    log.contrastive += l_si->val(0, 0);
    log.mlm += l_mlm->val(0, 0);
    log.mapping += l_map->val(0, 0);

    if (update) {
        ctx.zero_grads();
        tape.backward(l_pt);
        adam_step(ctx.all(), ckpt_.adam, cfg.learning_rate);
        ema_update(ctx, tgt, cfg.ema_decay);
    }
}

inline TrainResult Trainer::pretrain(const Corpus& corpus,
                                     const Vocabulary& vocab) {
    const TrainConfig& cfg = ckpt_.train_cfg;
    if (vocab.fingerprint() != ckpt_.vocab_hash)
        throw TrainError("vocabulary does not match the checkpoint");
    EncodedCatalog cat = build_encoded_catalog(corpus, vocab,
                                               cfg.token_drop_rate, cfg.seed);

    // Usable sequences: the training prefix must hold at least one
    // (history, next) pair.
    std::vector<std::size_t> usable;
    for (std::size_t s = 0; s < corpus.sequences.size(); ++s)
        if (corpus.sequences[s].items.size() >= 4) usable.push_back(s);
    if (usable.empty())
        throw TrainError("no sequences long enough for pretraining");

    // Deterministic held-out slice for early stopping.
    CounterRng split_rng(cfg.seed, 0x5b17ull);
    auto order = shuffled_indices(usable.size(), split_rng);
    std::size_t n_val = std::min<std::size_t>(
        usable.size() / 2,
        static_cast<std::size_t>(
            std::ceil(cfg.val_fraction * static_cast<double>(usable.size()))));
    std::vector<std::size_t> val_set, train_set;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_val ? val_set : train_set).push_back(usable[order[i]]);
    if (train_set.empty()) train_set = usable;

    TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;

    for (int epoch = ckpt_.epoch; epoch < cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        EpochLog log;
        log.epoch = epoch;

        CounterRng epoch_rng =
            CounterRng(cfg.seed, 0xe9ccull).fork(static_cast<std::uint64_t>(epoch));
        auto perm = shuffled_indices(train_set.size(), epoch_rng);

        std::vector<PretrainExample> examples;
        examples.reserve(train_set.size());
        for (std::size_t i : perm) {
            std::size_t s = train_set[i];
            int n_train =
                static_cast<int>(corpus.sequences[s].items.size()) - 2;
            CounterRng pick =
                CounterRng(cfg.seed, 0x91c7ull)
                    .fork(static_cast<std::uint64_t>(epoch) * 0x20003ull + s);
            int k = 1 + static_cast<int>(pick.next_below(
                            static_cast<std::uint64_t>(n_train - 1)));
            examples.push_back({s, k});
        }

        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < examples.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t end = std::min(
                examples.size(),
                start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<PretrainExample> batch(examples.begin() + start,
                                               examples.begin() + end);
            pretrain_step(corpus, cat, batch, static_cast<std::uint64_t>(epoch),
                          /*update=*/true, log);
            ++n_batches;
        }
        if (n_batches > 0) {
            log.loss /= static_cast<double>(n_batches);
            log.contrastive /= static_cast<double>(n_batches);
            log.mlm /= static_cast<double>(n_batches);
            log.mapping /= static_cast<double>(n_batches);
        }

        // Validation pass with epoch-independent masking.
        if (!val_set.empty()) {
            EpochLog vlog;
            std::vector<PretrainExample> vbatch;
            for (std::size_t s : val_set) {
                int n_train =
                    static_cast<int>(corpus.sequences[s].items.size()) - 2;
                vbatch.push_back({s, n_train - 1});
            }
            pretrain_step(corpus, cat, vbatch, 0x7a11ull,
                          /*update=*/false, vlog);
            log.val_loss = vlog.loss;
        } else {
            log.val_loss = log.loss;
        }

        log.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                          t0)
                .count();
        result.epochs.push_back(log);
        ckpt_.epoch = epoch + 1;

        if (log.val_loss < best_val - 1e-12) {
            best_val = log.val_loss;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            result.early_stopped = true;
            break;
        }
    }
    return result;
}

inline TrainResult Trainer::finetune(const Corpus& corpus,
                                     const Vocabulary& vocab) {
    const TrainConfig& cfg = ckpt_.train_cfg;
    if (vocab.fingerprint() != ckpt_.vocab_hash)
        throw TrainError("vocabulary does not match the checkpoint");
    EncodedCatalog cat = build_encoded_catalog(corpus, vocab,
                                               cfg.token_drop_rate, cfg.seed);
    ModelParams& ctx = ckpt_.context;

    struct Pair {
        std::size_t seq_index;
        int k; // history = items[0..k-1], target = items[k]
    };
    std::vector<Pair> pairs;
    // Per-user positive sets for BPR negative sampling.
    std::vector<std::vector<int>> positives(corpus.sequences.size());
    for (std::size_t s = 0; s < corpus.sequences.size(); ++s) {
        const auto& seq = corpus.sequences[s];
        int n_train = static_cast<int>(seq.items.size()) - 2;
        for (int k = 1; k < n_train; ++k) pairs.push_back({s, k});
        for (const auto& id : seq.items)
            positives[s].push_back(corpus.item_index.at(id));
    }
    if (pairs.empty())
        throw TrainError("no training pairs for finetuning");

    TrainResult result;
    const int n_items = static_cast<int>(corpus.items.size());

    for (int epoch = ckpt_.epoch; epoch < cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        EpochLog log;
        log.epoch = epoch;

        // One fixed item matrix per epoch.
        Mat item_matrix = refresh_item_matrix(ctx, cat);

        CounterRng epoch_rng =
            CounterRng(cfg.seed, 0xf7e0ull).fork(static_cast<std::uint64_t>(epoch));
        auto perm = shuffled_indices(pairs.size(), epoch_rng);

        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < perm.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t end = std::min(
                perm.size(), start + static_cast<std::size_t>(cfg.batch_size));
            Tape tape;
            Var batch_loss = tape.zero_scalar();
            for (std::size_t i = start; i < end; ++i) {
                const Pair& pr = pairs[perm[i]];
                const auto& seq = corpus.sequences[pr.seq_index];
                std::vector<std::string> history(
                    seq.items.begin(), seq.items.begin() + pr.k);
                int gt = corpus.item_index.at(
                    seq.items[static_cast<std::size_t>(pr.k)]);
                Var h_cls =
                    encode_cls(tape, ctx, cat.encode_history(corpus, history));
                Var live_gt = encode_item_repr(
                    tape, ctx, cat.items[static_cast<std::size_t>(gt)]);
                Var loss;
                if (cfg.use_bpr) {
                    CounterRng neg_rng =
                        CounterRng(cfg.seed, 0xb9a2ull)
                            .fork(static_cast<std::uint64_t>(epoch) *
                                      0x40009ull +
                                  perm[i]);
                    int neg = gt;
                    const auto& pos_set = positives[pr.seq_index];
                    do {
                        neg = static_cast<int>(neg_rng.next_below(
                            static_cast<std::uint64_t>(n_items)));
                    } while (std::find(pos_set.begin(), pos_set.end(), neg) !=
                             pos_set.end());
                    Var pos_score = tape.scale(
                        tape.cosine_matrix(h_cls, live_gt), 1.0 / cfg.tau);
                    Var neg_score = tape.scale(
                        tape.cosine_matrix(
                            h_cls, tape.constant(item_matrix.row(neg))),
                        1.0 / cfg.tau);
                    loss = bpr_loss(tape, pos_score, neg_score);
                } else {
                    loss = finetune_loss_live_positive(tape, h_cls, live_gt,
                                                       item_matrix, cfg.tau);
                }
                batch_loss = tape.add(batch_loss, loss);
            }
            batch_loss = tape.scale(batch_loss,
                                    1.0 / static_cast<double>(end - start));
            if (!std::isfinite(batch_loss->val(0, 0)))
                throw NumericError("finetuning loss is not finite at epoch " +
                                   std::to_string(epoch));
            log.loss += batch_loss->val(0, 0);
            ctx.zero_grads();
            tape.backward(batch_loss);
            adam_step(ctx.all(), ckpt_.adam, cfg.learning_rate);
            ++n_batches;
        }
        if (n_batches > 0) log.loss /= static_cast<double>(n_batches);
        log.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                          t0)
                .count();
        result.epochs.push_back(log);
        ckpt_.epoch = epoch + 1;
    }
    return result;
}

} // namespace jepa4rec
