#include <catch2/catch_amalgamated.hpp>

#include "jepa4rec/model.hpp"

using namespace jepa4rec;

namespace {

ModelConfig small_config(int d = 8, int layers = 1, int vocab = 20) {
    ModelConfig cfg;
    cfg.d = d;
    cfg.n_layers = layers;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.window = 2;
    cfg.vocab_size = vocab;
    cfg.max_positions = 64;
    cfg.max_items = 8;
    return cfg;
}

// A hand-built input: CLS then `n` value tokens of one item.
EncodedInput toy_input(int n, int first_id = 4) {
    EncodedInput in;
    in.token_ids.push_back(kClsId);
    in.token_positions.push_back(0);
    in.token_types.push_back(TokenType::Cls);
    in.item_positions.push_back(0);
    in.global_flags.push_back(1);
    for (int i = 0; i < n; ++i) {
        in.token_ids.push_back(first_id + i);
        in.token_positions.push_back(1 + i);
        in.token_types.push_back(TokenType::Value);
        in.item_positions.push_back(1);
        in.global_flags.push_back(0);
    }
    return in;
}

} // namespace

TEST_CASE("embedding sums four tables then layer norm gives known values") {
    ModelConfig cfg = small_config(4, 0);
    ModelParams p(cfg);
    for (Parameter* q : p.all()) q->value.setZero();
    p.emb_ln_g.value.setOnes();
    // token 4 contributes [0.4, 0.8, 1.2, 1.6], position 1 adds the same,
    // type Value and item slot 1 add the rest so the sum is [1, 2, 3, 4]
    p.tok_emb.value.row(4) << 0.4, 0.8, 1.2, 1.6;
    p.pos_emb.value.row(1) << 0.4, 0.8, 1.2, 1.6;
    p.type_emb.value.row(static_cast<int>(TokenType::Value)) << 0.1, 0.2, 0.3,
        0.4;
    p.item_emb.value.row(1) << 0.1, 0.2, 0.3, 0.4;

    EncodedInput in = toy_input(1);
    Tape t(false);
    Mat e = embed(t, p, in)->val;
    // normalizing [1,2,3,4] with population variance 1.25
    REQUIRE(e(1, 0) == Catch::Approx(-1.3416).margin(1e-3));
    REQUIRE(e(1, 1) == Catch::Approx(-0.4472).margin(1e-3));
    REQUIRE(e(1, 2) == Catch::Approx(0.4472).margin(1e-3));
    REQUIRE(e(1, 3) == Catch::Approx(1.3416).margin(1e-3));
}

TEST_CASE("embedding rows are invariant to a constant shift of the sum") {
    ModelConfig cfg = small_config(4, 0);
    ModelParams p(cfg);
    CounterRng rng(11, 0x1417);
    p.init(rng);
    EncodedInput in = toy_input(3);
    Tape t(false);
    Mat before = embed(t, p, in)->val;
    p.tok_emb.value.array() += 7.5;
    Tape t2(false);
    Mat after = embed(t2, p, in)->val;
    REQUIRE((before - after).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("ablation flags drop the position and type tables") {
    ModelConfig cfg = small_config(4, 0);
    ModelParams p(cfg);
    CounterRng rng(3, 0x1417);
    p.init(rng);
    EncodedInput a = toy_input(2, 4);
    Tape t(false);
    Mat with_pos = embed(t, p, a)->val;

    ModelConfig cfg2 = cfg;
    cfg2.use_token_position = false;
    cfg2.use_token_type = false;
    ModelParams p2(cfg2);
    p2.copy_values_from(p);
    // same token at two different positions embeds identically
    EncodedInput two = toy_input(2, 4);
    two.token_ids[2] = two.token_ids[1];
    Tape t2(false);
    Mat e2 = embed(t2, p2, two)->val;
    REQUIRE((e2.row(1) - e2.row(2)).cwiseAbs().maxCoeff() < 1e-12);
    // while the full model distinguishes them
    Tape t3(false);
    Mat e3 = embed(t3, p, two)->val;
    REQUIRE((e3.row(1) - e3.row(2)).cwiseAbs().maxCoeff() > 1e-6);
    (void)with_pos;
}

TEST_CASE("attention mask: window plus global CLS") {
    EncodedInput in = toy_input(4);
    Mat m = attention_mask(in, 1);
    REQUIRE(m.rows() == 5);
    // token 3 sees CLS, itself, and neighbors 2 and 4
    std::vector<int> row3;
    for (int j = 0; j < 5; ++j)
        if (m(3, j) == 1.0) row3.push_back(j);
    REQUIRE(row3 == std::vector<int>{0, 2, 3, 4});
    // CLS row and column fully connected
    for (int j = 0; j < 5; ++j) {
        REQUIRE(m(0, j) == 1.0);
        REQUIRE(m(j, 0) == 1.0);
    }
    REQUIRE(m(1, 4) == 0.0);
}

TEST_CASE("zero transformer layers reduce the encoder to the embedding") {
    ModelConfig cfg = small_config(8, 0);
    ModelParams p(cfg);
    CounterRng rng(7, 0x1417);
    p.init(rng);
    EncodedInput in = toy_input(5);
    Tape t(false);
    Mat enc = encode(t, p, in)->val;
    Tape t2(false);
    Mat emb = embed(t2, p, in)->val;
    REQUIRE((enc - emb).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("one-layer outputs are local to the window plus CLS keys") {
    ModelConfig cfg = small_config(8, 1);
    cfg.window = 1;
    ModelParams p(cfg);
    CounterRng rng(19, 0x1417);
    p.init(rng);
    EncodedInput a = toy_input(6, 4);
    EncodedInput b = a;
    b.token_ids[6] = 12; // far from position 2, not CLS

    Tape ta(false), tb(false);
    Mat ya = encode(ta, p, a)->val;
    Mat yb = encode(tb, p, b)->val;
    // row 2 cannot see position 6 in one hop
    REQUIRE((ya.row(2) - yb.row(2)).cwiseAbs().maxCoeff() < 1e-12);
    // but the global CLS row does
    REQUIRE((ya.row(0) - yb.row(0)).cwiseAbs().maxCoeff() > 1e-10);
    // and row 5 is inside the window of 6
    REQUIRE((ya.row(5) - yb.row(5)).cwiseAbs().maxCoeff() > 1e-10);
}

TEST_CASE("encoder forward is deterministic and finite") {
    ModelConfig cfg = small_config(8, 2);
    ModelParams p(cfg);
    CounterRng rng(23, 0x1417);
    p.init(rng);
    EncodedInput in = toy_input(7);
    Mat y1 = encode_cls_nograd(p, in);
    Mat y2 = encode_cls_nograd(p, in);
    REQUIRE(y1.allFinite());
    REQUIRE((y1 - y2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("item representation is the CLS row of the single-item pass") {
    ModelConfig cfg = small_config(8, 1);
    ModelParams p(cfg);
    CounterRng rng(29, 0x1417);
    p.init(rng);
    EncodedItem item;
    for (int i = 0; i < 4; ++i) {
        item.token_ids.push_back(5 + i);
        item.token_types.push_back(TokenType::Value);
    }
    Mat via_item = encode_item_nograd(p, item);
    Mat via_seq = encode_cls_nograd(p, encode_single_item(item));
    REQUIRE((via_item - via_seq).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(via_item.rows() == 1);
    REQUIRE(via_item.cols() == 8);
}

TEST_CASE("EMA update closed form and boundary decays") {
    ModelConfig cfg = small_config(4, 1);
    ModelParams ctx(cfg), tgt(cfg);
    CounterRng r1(31, 0x1417), r2(37, 0x1417);
    ctx.init(r1);
    tgt.init(r2);

    // decay 1 freezes the target entirely
    ModelParams frozen(cfg);
    frozen.copy_values_from(tgt);
    ema_update(ctx, frozen, 1.0);
    REQUIRE((frozen.tok_emb.value - tgt.tok_emb.value).cwiseAbs().maxCoeff() ==
            0.0);

    // decay 0 copies the context in one step
    ModelParams copied(cfg);
    copied.copy_values_from(tgt);
    ema_update(ctx, copied, 0.0);
    for (std::size_t i = 0; i < ctx.all().size(); ++i)
        REQUIRE((copied.all()[i]->value - ctx.all()[i]->value)
                    .cwiseAbs()
                    .maxCoeff() == 0.0);

    // three steps at m = 0.9 against a fixed context leave a 0.729 fraction
    // of the original offset: t_k = m^k t_0 + (1 - m^k) c
    ModelParams moving(cfg);
    moving.copy_values_from(tgt);
    for (int k = 0; k < 3; ++k) ema_update(ctx, moving, 0.9);
    auto cs = ctx.all();
    auto ts = tgt.all();
    auto ms = moving.all();
    for (std::size_t i = 0; i < cs.size(); ++i) {
        Mat expected =
            0.729 * ts[i]->value + (1.0 - 0.729) * cs[i]->value;
        REQUIRE((ms[i]->value - expected).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("EMA rejects mismatched shapes") {
    ModelParams a(small_config(4, 1));
    ModelParams b(small_config(8, 1));
    REQUIRE_THROWS_AS(ema_update(a, b, 0.5), NumericError);
}

TEST_CASE("model config json round trip") {
    ModelConfig cfg = small_config(16, 3, 99);
    cfg.use_token_type = false;
    ModelConfig back = ModelConfig::from_json(cfg.to_json());
    REQUIRE(back.d == 16);
    REQUIRE(back.n_layers == 3);
    REQUIRE(back.vocab_size == 99);
    REQUIRE(back.use_token_type == false);
    REQUIRE(back.window == cfg.window);
}
