#pragma once

// Model parameters and forward passes: four additive embedding types with
// layer norm, a bidirectional transformer with sliding-window attention
// plus a global [CLS] token, and the EMA link between the context and
// target parameter sets.

#include <cmath>
#include <string>
#include <vector>

#include "jepa4rec/rng.hpp"
#include "jepa4rec/tensor.hpp"
#include "jepa4rec/tokenizer.hpp"

namespace jepa4rec {

struct ModelConfig {
    int d = 128;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 256;
    int window = 64; // tokens each side
    int vocab_size = 0;
    int max_positions = kMaxSequenceTokens;
    int max_items = kMaxItemsPerSequence;
    double ln_eps = 1e-5;
    double init_std = 0.02;
    bool use_token_position = true; // ablation: drop B table
    bool use_token_type = true;     // ablation: drop C table

    json to_json() const {
        return json{{"d", d},
                    {"n_layers", n_layers},
                    {"n_heads", n_heads},
                    {"d_ff", d_ff},
                    {"window", window},
                    {"vocab_size", vocab_size},
                    {"max_positions", max_positions},
                    {"max_items", max_items},
                    {"ln_eps", ln_eps},
                    {"init_std", init_std},
                    {"use_token_position", use_token_position},
                    {"use_token_type", use_token_type}};
    }
    static ModelConfig from_json(const json& j) {
        ModelConfig c;
        c.d = j.at("d");
        c.n_layers = j.at("n_layers");
        c.n_heads = j.at("n_heads");
        c.d_ff = j.at("d_ff");
        c.window = j.at("window");
        c.vocab_size = j.at("vocab_size");
        c.max_positions = j.at("max_positions");
        c.max_items = j.at("max_items");
        c.ln_eps = j.at("ln_eps");
        c.init_std = j.at("init_std");
        c.use_token_position = j.at("use_token_position");
        c.use_token_type = j.at("use_token_type");
        return c;
    }
};

struct LayerParams {
    Parameter wq, bq, wk, bk, wv, bv, wo, bo;
    Parameter ln1_g, ln1_b, ln2_g, ln2_b;
    Parameter ff1_w, ff1_b, ff2_w, ff2_b;
};

struct ModelParams {
    ModelConfig cfg;

    Parameter tok_emb;  // A: V_w x d
    Parameter pos_emb;  // B: max_positions x d
    Parameter type_emb; // C: 3 x d (CLS, Attribute, Value)
    Parameter item_emb; // D: (max_items + 1) x d, row 0 = CLS slot
    Parameter emb_ln_g, emb_ln_b;
    std::vector<LayerParams> layers;

    // Predictor heads and MLM head (tied to tok_emb, bias only).
    Parameter ffn1_w1, ffn1_b1, ffn1_w2, ffn1_b2;
    Parameter ffn2_w1, ffn2_b1, ffn2_w2, ffn2_b2;
    Parameter mlm_bias;
    Parameter placeholder; // learnable zero vector, 1 x d

    explicit ModelParams(const ModelConfig& config = {}) { configure(config); }

    void configure(const ModelConfig& config) {
        cfg = config;
        const int d = cfg.d;
        tok_emb.resize(cfg.vocab_size, d);
        pos_emb.resize(cfg.max_positions, d);
        type_emb.resize(3, d);
        item_emb.resize(cfg.max_items + 1, d);
        emb_ln_g.resize(1, d);
        emb_ln_b.resize(1, d);
        layers.assign(static_cast<std::size_t>(cfg.n_layers), {});
        for (auto& l : layers) {
            l.wq.resize(d, d);
            l.bq.resize(1, d);
            l.wk.resize(d, d);
            l.bk.resize(1, d);
            l.wv.resize(d, d);
            l.bv.resize(1, d);
            l.wo.resize(d, d);
            l.bo.resize(1, d);
            l.ln1_g.resize(1, d);
            l.ln1_b.resize(1, d);
            l.ln2_g.resize(1, d);
            l.ln2_b.resize(1, d);
            l.ff1_w.resize(d, cfg.d_ff);
            l.ff1_b.resize(1, cfg.d_ff);
            l.ff2_w.resize(cfg.d_ff, d);
            l.ff2_b.resize(1, d);
        }
        ffn1_w1.resize(2 * d, d);
        ffn1_b1.resize(1, d);
        ffn1_w2.resize(d, d);
        ffn1_b2.resize(1, d);
        ffn2_w1.resize(2 * d, d);
        ffn2_b1.resize(1, d);
        ffn2_w2.resize(d, d);
        ffn2_b2.resize(1, d);
        mlm_bias.resize(1, cfg.vocab_size);
        placeholder.resize(1, d);
        name_all();
    }

    // Fixed-order registry; checkpoint layout and EMA pairing rely on it.
    std::vector<Parameter*> all() {
        std::vector<Parameter*> out = {&tok_emb, &pos_emb, &type_emb,
                                       &item_emb, &emb_ln_g, &emb_ln_b};
        for (auto& l : layers)
            for (Parameter* p :
                 {&l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo,
                  &l.ln1_g, &l.ln1_b, &l.ln2_g, &l.ln2_b, &l.ff1_w, &l.ff1_b,
                  &l.ff2_w, &l.ff2_b})
                out.push_back(p);
        for (Parameter* p : {&ffn1_w1, &ffn1_b1, &ffn1_w2, &ffn1_b2, &ffn2_w1,
                             &ffn2_b1, &ffn2_w2, &ffn2_b2, &mlm_bias,
                             &placeholder})
            out.push_back(p);
        return out;
    }

    void init(CounterRng& rng) {
        auto normal = [&](Parameter& p) {
            for (Eigen::Index i = 0; i < p.value.rows(); ++i)
                for (Eigen::Index j = 0; j < p.value.cols(); ++j)
                    p.value(i, j) = cfg.init_std * rng.next_gaussian();
        };
        normal(tok_emb);
        normal(pos_emb);
        normal(type_emb);
        normal(item_emb);
        emb_ln_g.value.setOnes();
        emb_ln_b.value.setZero();
        for (auto& l : layers) {
            normal(l.wq);
            normal(l.wk);
            normal(l.wv);
            normal(l.wo);
            normal(l.ff1_w);
            normal(l.ff2_w);
            l.bq.value.setZero();
            l.bk.value.setZero();
            l.bv.value.setZero();
            l.bo.value.setZero();
            l.ff1_b.value.setZero();
            l.ff2_b.value.setZero();
            l.ln1_g.value.setOnes();
            l.ln1_b.value.setZero();
            l.ln2_g.value.setOnes();
            l.ln2_b.value.setZero();
        }
        normal(ffn1_w1);
        normal(ffn1_w2);
        normal(ffn2_w1);
        normal(ffn2_w2);
        ffn1_b1.value.setZero();
        ffn1_b2.value.setZero();
        ffn2_b1.value.setZero();
        ffn2_b2.value.setZero();
        mlm_bias.value.setZero();
        placeholder.value.setZero();
    }

    void zero_grads() {
        for (Parameter* p : all()) p->zero_grad();
    }

    void copy_values_from(ModelParams& other) {
        auto mine = all();
        auto theirs = other.all();
        for (std::size_t i = 0; i < mine.size(); ++i)
            mine[i]->value = theirs[i]->value;
    }

private:
    void name_all() {
        auto ps = all();
        // Names are positional; layer params get layer-index prefixes.
        static const char* base[] = {"tok_emb", "pos_emb",  "type_emb",
                                     "item_emb", "emb_ln_g", "emb_ln_b"};
        static const char* per_layer[] = {"wq",    "bq",    "wk",    "bk",
                                          "wv",    "bv",    "wo",    "bo",
                                          "ln1_g", "ln1_b", "ln2_g", "ln2_b",
                                          "ff1_w", "ff1_b", "ff2_w", "ff2_b"};
        static const char* head[] = {"ffn1_w1", "ffn1_b1", "ffn1_w2",
                                     "ffn1_b2", "ffn2_w1", "ffn2_b1",
                                     "ffn2_w2", "ffn2_b2", "mlm_bias",
                                     "placeholder"};
        std::size_t idx = 0;
        for (const char* n : base) ps[idx++]->name = n;
        for (std::size_t l = 0; l < layers.size(); ++l)
            for (const char* n : per_layer)
                ps[idx++]->name = "layer" + std::to_string(l) + "." + n;
        for (const char* n : head) ps[idx++]->name = n;
    }
};

// Attention connectivity: CLS row/column fully connected, everything else
// restricted to a +-window band (self always included).
inline Mat attention_mask(const EncodedInput& input, int window) {
    const int len = input.length();
    Mat allowed = Mat::Zero(len, len);
    for (int i = 0; i < len; ++i)
        for (int j = 0; j < len; ++j)
            if (input.global_flags[static_cast<std::size_t>(i)] ||
                input.global_flags[static_cast<std::size_t>(j)] ||
                std::abs(i - j) <= window)
                allowed(i, j) = 1.0;
    return allowed;
}

// E_X: sum of the four embedding lookups, layer-normalized per row.
inline Var embed(Tape& tape, ModelParams& p, const EncodedInput& input) {
    std::vector<int> type_ids(input.token_types.size());
    for (std::size_t i = 0; i < input.token_types.size(); ++i)
        type_ids[i] = static_cast<int>(input.token_types[i]);

    Var sum = tape.gather_rows(tape.param(p.tok_emb), input.token_ids);
    if (p.cfg.use_token_position)
        sum = tape.add(sum, tape.gather_rows(tape.param(p.pos_emb),
                                             input.token_positions));
    if (p.cfg.use_token_type)
        sum = tape.add(sum,
                       tape.gather_rows(tape.param(p.type_emb), type_ids));
    sum = tape.add(sum, tape.gather_rows(tape.param(p.item_emb),
                                         input.item_positions));
    return tape.layernorm(sum, tape.param(p.emb_ln_g),
                          tape.param(p.emb_ln_b), p.cfg.ln_eps);
}

// Full encoder: pre-norm residual blocks, multi-head attention under the
// window/global mask, GELU feed-forward. n_layers = 0 is the identity.
inline Var encode(Tape& tape, ModelParams& p, const EncodedInput& input) {
    Var x = embed(tape, p, input);
    if (p.cfg.n_layers == 0) return x;
    const Mat allowed = attention_mask(input, p.cfg.window);
    const int dh = p.cfg.d / p.cfg.n_heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (auto& l : p.layers) {
        Var h = tape.layernorm(x, tape.param(l.ln1_g), tape.param(l.ln1_b),
                               p.cfg.ln_eps);
        Var q = tape.linear(h, tape.param(l.wq), tape.param(l.bq));
        Var k = tape.linear(h, tape.param(l.wk), tape.param(l.bk));
        Var v = tape.linear(h, tape.param(l.wv), tape.param(l.bv));
        std::vector<Var> heads;
        heads.reserve(static_cast<std::size_t>(p.cfg.n_heads));
        for (int hd = 0; hd < p.cfg.n_heads; ++hd) {
            Var qh = tape.slice_cols(q, hd * dh, dh);
            Var kh = tape.slice_cols(k, hd * dh, dh);
            Var vh = tape.slice_cols(v, hd * dh, dh);
            Var scores = tape.scale(tape.matmul_nt(qh, kh), inv_sqrt_dh);
            Var probs = tape.masked_softmax(scores, allowed);
            heads.push_back(tape.matmul(probs, vh));
        }
        Var attn = tape.linear(tape.hconcat(heads), tape.param(l.wo),
                               tape.param(l.bo));
        x = tape.add(x, attn);
        Var h2 = tape.layernorm(x, tape.param(l.ln2_g), tape.param(l.ln2_b),
                                p.cfg.ln_eps);
        Var ff = tape.linear(
            tape.gelu(tape.linear(h2, tape.param(l.ff1_w),
                                  tape.param(l.ff1_b))),
            tape.param(l.ff2_w), tape.param(l.ff2_b));
        x = tape.add(x, ff);
    }
    if (!x->val.allFinite())
        throw NumericError("encoder produced non-finite activations");
    return x;
}

inline Var encode_cls(Tape& tape, ModelParams& p, const EncodedInput& input) {
    return tape.row(encode(tape, p, input), 0);
}

// Item representation: h_CLS of the single-item sequence {[CLS], S_i}.
inline Var encode_item_repr(Tape& tape, ModelParams& p,
                            const EncodedItem& item) {
    return encode_cls(tape, p, encode_single_item(item));
}

// Gradient-free forward for target encoding and item-matrix refresh.
inline Mat encode_cls_nograd(ModelParams& p, const EncodedInput& input) {
    Tape tape(false);
    return encode_cls(tape, p, input)->val;
}

inline Mat encode_item_nograd(ModelParams& p, const EncodedItem& item) {
    Tape tape(false);
    return encode_item_repr(tape, p, item)->val;
}

// EMA link: every target parameter <- m * target + (1 - m) * context.
// Applies to the full copy, embedding tables included. Never touches the
// context parameters.
inline void ema_update(ModelParams& context, ModelParams& target,
                       double decay) {
    auto src = context.all();
    auto dst = target.all();
    if (src.size() != dst.size())
        throw NumericError("ema_update: structural mismatch");
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i]->value.rows() != dst[i]->value.rows() ||
            src[i]->value.cols() != dst[i]->value.cols())
            throw NumericError("ema_update: shape mismatch at " +
                               src[i]->name);
        dst[i]->value =
            decay * dst[i]->value + (1.0 - decay) * src[i]->value;
    }
}

} // namespace jepa4rec
